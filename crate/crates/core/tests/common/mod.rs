#![allow(dead_code)]

use hyrom_core::fom::*;
use hyrom_core::linalg::DenseMatrix;
use hyrom_core::mesh::build_box_mesh;
use hyrom_core::newton::NewtonSettings;
use hyrom_core::pod::{pod, PodMethod, ReducedBasis, SnapshotMatrix, SnapshotMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BEAM: [f64; 3] = [1e-2, 1e-3, 1e-3];
pub const COARSE: [usize; 3] = [10, 2, 2];

pub fn beam(divs: [usize; 3]) -> FomProblem {
    FomProblem::new(
        build_box_mesh(BEAM, divs).unwrap(),
        ModelSpec::NeoHookean,
        LoadKind::Linear,
        TimeGrid::new(0.25, 5e-3).unwrap(),
        Dynamics::default(),
    )
}

/// Iterate snapshots of a few FOM runs spread over the load range.
pub fn snapshots(p: &FomProblem, params: &[[f64; 3]]) -> SnapshotMatrix {
    let mut s = SnapshotMatrix::new(p.dof_count(), 3);
    for mu in params {
        let tr = run_fom(p, mu, &NewtonSettings::default(), true).unwrap();
        for it in &tr.iterates {
            s.push(&it.u, SnapshotMeta { mu: mu.to_vec(), n: it.n as u32, k: it.k as u32 }).unwrap();
        }
    }
    s
}

pub const TRAIN: [[f64; 3]; 3] = [[0.8e4, 4e4, 2.5], [1.2e4, 6e4, 5.5], [1e4, 3e4, 4.0]];

pub fn coarse_basis(eps: f64) -> (FomProblem, ReducedBasis) {
    let p = beam(COARSE);
    let s = snapshots(&p, &TRAIN);
    let b = pod(&s.data, eps, PodMethod::Randomized { seed: 7 }).unwrap();
    (p, b)
}

pub fn random_vec(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Full-order residuals at every iterate of reduced runs.
pub fn rom_residuals(p: &FomProblem, b: &ReducedBasis, params: &[[f64; 3]]) -> SnapshotMatrix {
    use hyrom_core::rom::{run_rom, CollectOptions};
    let mut s = SnapshotMatrix::new(p.dof_count(), 3);
    let collect = CollectOptions { operators: false, full_residuals: true };
    for mu in params {
        let (_, c) = run_rom(p, b, mu, &NewtonSettings::default(), collect).unwrap();
        s.extend(&c.unwrap().full_residuals).unwrap();
    }
    s
}
