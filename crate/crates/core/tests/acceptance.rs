//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when
//! any criterion fails.

mod common;

use std::time::Instant;

use common::{max_abs_diff, seeded};
use hyrom_core::bench::*;
use hyrom_core::dnn::*;
use hyrom_core::fom::*;
use hyrom_core::linalg::{norm2, svd, DenseMatrix};
use hyrom_core::materials::{det3, fd_gradient, GuccioneParams, Material, NeoHookeanParams};
use hyrom_core::mesh::build_box_mesh;
use hyrom_core::online::run_hyromnet;
use hyrom_core::pod::{pod, pod_fixed, ric, PodMethod, ReducedBasis};
use hyrom_core::rom::RomState;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_max(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().flatten().zip(b.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut frame = GuccioneParams::reference();
    let th: f64 = 0.7;
    frame.fiber_frame = [[th.cos(), th.sin(), 0.0], [-th.sin(), th.cos(), 0.0], [0.0, 0.0, 1.0]];
    let laws = [
        ("neo-Hookean", Material::NeoHookean(NeoHookeanParams { g: 1e4, k: 5e4 })),
        ("Guccione", Material::Guccione { params: frame, ta: 0.0 }),
    ];
    let mut worst = [0.0f64; 2];
    for (l, (_, m)) in laws.iter().enumerate() {
        let mut n = 0;
        while n < 100 {
            let mut f = [[0.0; 3]; 3];
            for (i, row) in f.iter_mut().enumerate() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if i == k { 1.0 } else { 0.0 } + rng.gen_range(-0.15..0.15);
                }
            }
            if !(0.8..=1.2).contains(&det3(&f)) {
                continue;
            }
            let fd = fd_gradient(&f, 1e-6, |x| m.energy(x)).unwrap();
            worst[l] = worst[l].max(rel_max(&m.pk1_generic(&f).unwrap(), &fd));
            n += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.iter().all(|&e| e < 1e-5) && secs < 5.0,
        format!("max rel err {} {:.2e}, {} {:.2e} (< 1e-5); {secs:.2} s (< 5 s)", laws[0].0, worst[0], laws[1].0, worst[1]),
    )
}

fn criterion_2(p: &FomProblem) -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(102);
    let mut field = |amp: f64| {
        let mut u: Vec<f64> = (0..p.dof_count()).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        for &d in &p.dirichlet {
            u[d] = 0.0;
        }
        u
    };
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let (u, u1, u2, v) = (field(5e-5), field(5e-5), field(5e-5), field(1.0));
        let coeff = p.coefficients(&[1e4, 5e4, 6.0], 1 + 2 * trial);
        let h = 1e-6 * norm2(&u) / norm2(&v);
        worst = worst.max(jacobian_fd_error(p, &coeff, &u, &u1, &u2, &v, h).unwrap());
    }
    let z = vec![0.0; p.dof_count()];
    let r = p.residual(&p.coefficients(&[1e4, 5e4, 0.0], 7), &z, &z, &z).unwrap();
    let zero = r.iter().all(|&x| x == 0.0);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && zero && secs < 30.0,
        format!(
            "{} elements, max directional FD rel err {worst:.2e} (< 1e-5); zero residual exact: {zero}; {secs:.2} s (< 30 s)",
            p.mesh.element_count()
        ),
    )
}

fn criterion_3(snap: &DenseMatrix, eps: f64) -> Outcome {
    let det = pod(snap, eps, PodMethod::Deterministic).unwrap();
    let full = svd(snap).unwrap();
    let sigma = &full.singular_values;
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let n = det.dim();

    let vtv = det.v.transpose().matmul(&det.v);
    let ortho = max_abs_diff(&vtv, &DenseMatrix::identity(n));

    let proj = det.v.matmul(&det.v.transpose().matmul(snap));
    let resid: f64 = snap.as_slice().iter().zip(proj.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
    let tail: f64 = sigma[n..].iter().map(|s| s * s).sum();
    let tail_err = (resid - tail).abs() / tail;

    let target = 1.0 - eps * eps;
    let minimal = ric(sigma, total, n - 1) < target && target <= ric(sigma, total, n);

    let rand = pod(snap, eps, PodMethod::Randomized { seed: 3 }).unwrap();
    let k = rand.dim().min(n);
    let sv_err = (0..k).map(|i| (rand.singular_values[i] - sigma[i]).abs() / sigma[i]).fold(0.0, f64::max);
    outcome(
        ortho < 1e-10 && tail_err < 1e-8 && minimal && sv_err < 0.01 && rand.dim() == n,
        format!(
            "{}x{} snapshots, N = {n}: |VtV - I|max {ortho:.1e} (< 1e-10); tail identity rel {tail_err:.1e} (< 1e-8); RIC minimal: {minimal}; randomized sigma rel dev {sv_err:.1e} (< 1e-2), N {}",
            snap.rows(),
            snap.cols(),
            rand.dim()
        ),
    )
}

fn criterion_4(snap: &DenseMatrix) -> Outcome {
    let dims: Vec<usize> = [1e-3, 1e-4, 1e-5, 1e-6]
        .iter()
        .map(|&e| pod(snap, e, PodMethod::Deterministic).unwrap().dim())
        .collect();
    let n4 = dims[1];
    let monotone = dims.windows(2).all(|w| w[0] <= w[1]);
    outcome(
        n4 <= 15 && monotone,
        format!("N for eps 1e-3..1e-6: {dims:?}; N(1e-4) = {n4} (<= 15, N_h = {}); nondecreasing: {monotone}", snap.rows()),
    )
}

fn criterion_5(report: &ErrorReport, rom_seconds: f64) -> Outcome {
    let rom = report.method("ROM").unwrap();
    outcome(
        rom.mean_eps_rel <= 2e-2 && rom.failures == 0 && rom_seconds < 300.0,
        format!(
            "ROM mean eps_rel {:.3e} (<= 2e-2) over {} parameters, {} failures; {rom_seconds:.1} s (< 300 s)",
            rom.mean_eps_rel,
            report.test_parameters.len(),
            rom.failures
        ),
    )
}

fn criterion_6(p: &FomProblem, cfg: &ExperimentConfig, art: &OfflineArtifacts, report: &ErrorReport) -> Outcome {
    let (eps, op) = art.deim.iter().find(|(e, _)| *e == 1e-5).expect("DEIM with 1e-5");
    let span = (0..op.m())
        .map(|j| {
            let back = op.approximate(op.phi.col(j));
            let d: Vec<f64> = back.iter().zip(op.phi.col(j)).map(|(a, b)| a - b).collect();
            norm2(&d) / norm2(op.phi.col(j))
        })
        .fold(0.0, f64::max);

    // reduced-mesh rows against the same rows of the full assembly
    let b = &art.basis;
    let mu = &cfg.test_parameters()[0];
    let tr = run_fom(p, mu, &cfg.newton, false).unwrap();
    let n = 30;
    let coords = |k: usize| b.project(&tr.states[k - 1]);
    let (c, c1, c2) = (coords(n), coords(n - 1), coords(n - 2));
    let (u, u1, u2) = (b.lift(&c), b.lift(&c1), b.lift(&c2));
    let coeff = p.coefficients(mu, n);
    let (pr, pjv) = op.sampled_rows(p, &coeff, &u, &u1, &u2, true).unwrap();
    let (r, j) = p.residual_jacobian(&coeff, &u, &u1, &u2).unwrap();
    let jv = j.mul_dense(&b.v).select_rows(&op.magic_rows);
    let rscale = op.magic_rows.iter().map(|&i| r[i].abs()).fold(0.0, f64::max);
    let rows_err = op.magic_rows.iter().zip(&pr).map(|(&i, a)| (a - r[i]).abs()).fold(0.0, f64::max) / rscale;
    let jac_err = max_abs_diff(&pjv.unwrap(), &jv) / jv.max_abs();
    let mut st = RomState::zero(b.dim());
    st.un_now = c;
    st.un_prev = c1;
    st.un_prev2 = c2;
    st.time_index = n;
    // same coordinates and the same (Jacobian) kernel as the rows above
    let (hr, hj) = op.hyper_evaluate(p, &coeff, &st, true).unwrap();
    let (want, want_j) = op.project(&pr, Some(&jv));
    let (want_j, hj) = (want_j.unwrap(), hj.unwrap());
    let proj_err = (hr.iter().zip(&want).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max) / norm2(&want))
        .max(max_abs_diff(&hj, &want_j) / want_j.max_abs());

    let rom = report.method("ROM").unwrap();
    let deim = report.method(&deim_method_name(*eps)).unwrap();
    let ratio = deim.mean_eps_rel / rom.mean_eps_rel;
    let hyper = rows_err.max(jac_err).max(proj_err);
    outcome(
        span < 1e-10 && hyper < 1e-12 && ratio <= 3.0 && deim.failures == 0,
        format!(
            "m = {}, span exactness {span:.1e} (< 1e-10); reduced-mesh rows vs full rows {hyper:.1e} (< 1e-12); DEIM/ROM eps_rel {:.3e}/{:.3e} = {ratio:.2} (<= 3); Newton failures {}",
            op.m(),
            deim.mean_eps_rel,
            rom.mean_eps_rel,
            deim.failures
        ),
    )
}

fn criterion_7(report: &ErrorReport, total_seconds: f64) -> Outcome {
    let rom = report.method("ROM").unwrap();
    let net = report.method(HYROMNET).unwrap();
    let ratio = net.mean_eps_rel / rom.mean_eps_rel;
    outcome(
        net.mean_eps_rel <= 5e-2 && ratio <= 10.0 && net.failures == 0 && total_seconds < 900.0,
        format!(
            "Deep-HyROMnet mean eps_rel {:.3e} (<= 5e-2), {ratio:.1}x ROM (<= 10x), failures {}; offline + online {total_seconds:.0} s (< 900 s)",
            net.mean_eps_rel, net.failures
        ),
    )
}

fn criterion_8(report: &ErrorReport) -> Outcome {
    let t = |m: &str| report.method(m).unwrap().mean_seconds;
    let (th, td, tf) = (t(HYROMNET), t(&deim_method_name(1e-5)), t("FOM"));
    let calls = report.hyromnet_assembly_calls;
    outcome(
        calls == 0 && th < td && td < tf,
        format!("assembly calls {calls} (= 0); mean online s: Deep-HyROMnet {th:.3e} < DEIM {td:.3e} < FOM {tf:.3e}"),
    )
}

struct ScalingRun {
    problem: FomProblem,
    basis: ReducedBasis,
    pair: SurrogatePair,
}

/// Same recipe on each mesh: a short FOM sweep, a basis of fixed size, a
/// reduced collection sweep and network training.
fn scaling_run(cfg: &ExperimentConfig, divisions: [usize; 3], n: usize) -> ScalingRun {
    let problem = FomProblem::new(
        build_box_mesh(cfg.extent, divisions).unwrap(),
        cfg.model_spec(),
        cfg.load,
        TimeGrid::new(cfg.t_final, cfg.dt).unwrap(),
        cfg.dynamics,
    );
    let space = cfg.space();
    let train = hyrom_core::pod::lhs_sample(&space, 5, 901);
    let tr = fom_sweep(&problem, &train, &cfg.newton, true).unwrap();
    let snap = iterate_snapshots(&problem, &tr);
    let basis = pod_fixed(&snap.data, n, PodMethod::Randomized { seed: 902 }).unwrap();
    let collect = hyrom_core::pod::lhs_sample(&space, 20, 903);
    let (ops, _) = collection_sweep(&problem, &basis, &collect, &cfg.newton).unwrap();
    let specs = pair_specs(&ops, &cfg.arch).unwrap();
    let tc = TrainConfig {
        epochs: 150,
        seed: 904,
        ..cfg.train.clone()
    };
    let (pair, _, _) = train_pair(&ops, &specs, &tc).unwrap();
    ScalingRun { problem, basis, pair }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn timings(run: &ScalingRun, cfg: &ExperimentConfig, tests: &[Vec<f64>]) -> (f64, f64) {
    let p = &run.problem;
    // warm-up
    run_hyromnet(&run.pair, &run.basis, &tests[0], &p.time, &cfg.online, None).unwrap();
    run_fom(p, &tests[0], &cfg.newton, false).unwrap();
    let mut net = 0.0;
    let mut fom = 0.0;
    for mu in tests {
        let reps: Vec<f64> = (0..5)
            .map(|_| {
                run_hyromnet(&run.pair, &run.basis, mu, &p.time, &cfg.online, None)
                    .unwrap()
                    .trajectory
                    .timing
                    .total
            })
            .collect();
        net += median(reps);
        fom += run_fom(p, mu, &cfg.newton, false).unwrap().wall_seconds;
    }
    (net / tests.len() as f64, fom / tests.len() as f64)
}

fn criterion_9(cfg: &ExperimentConfig, n: usize) -> Outcome {
    let start = Instant::now();
    let tests = hyrom_core::pod::lhs_sample(&cfg.space(), 3, 905);
    let coarse = scaling_run(cfg, [10, 2, 2], n);
    let fine = scaling_run(cfg, [20, 4, 4], n);
    let (hc, fc) = timings(&coarse, cfg, &tests);
    let (hf, ff) = timings(&fine, cfg, &tests);
    let (rh, rf) = (hf / hc, ff / fc);
    outcome(
        rh < 1.5 && rf > 3.0,
        format!(
            "elements {} -> {}, N = {n}: Deep-HyROMnet {hc:.3e} -> {hf:.3e} s, ratio {rh:.2} (< 1.5); FOM {fc:.3e} -> {ff:.3e} s, ratio {rf:.1} (> 3); {:.0} s",
            coarse.problem.mesh.element_count(),
            fine.problem.mesh.element_count(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn gradient_error(spec: &NetworkSpec, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let batch = 3;
    let xs: Vec<f64> = (0..batch * spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..batch * spec.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut w = NetworkWeights::init(spec, seed);
    for v in w.data.iter_mut().filter(|v| **v == 0.0) {
        *v = 0.1 * rng.gen_range(-1.0..1.0);
    }
    let mut g = vec![0.0; w.data.len()];
    loss_grad(spec, &w, &xs, &ys, batch, 0.5, Some(&mut g));
    let h = 1e-5;
    let mut worst = 0.0f64;
    // every parameter of every layer
    for i in 0..w.data.len() {
        let orig = w.data[i];
        w.data[i] = orig + h;
        let lp = loss_eval(spec, &w, &xs, &ys, batch, 0.5);
        w.data[i] = orig - h;
        let lm = loss_eval(spec, &w, &xs, &ys, batch, 0.5);
        w.data[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
    }
    worst
}

fn criterion_10() -> Outcome {
    let small = |decoder| ArchConfig {
        dfnn_width: 6,
        dfnn_depth: 2,
        decoder,
        channels: 2,
        dense_width: 5,
        dense_depth: 2,
        ..Default::default()
    };
    let conv = NetworkSpec::build(5, 30, &small(DecoderKind::Conv)).unwrap();
    let dense = NetworkSpec::build(5, 7, &small(DecoderKind::Dense)).unwrap();
    let kinds: std::collections::BTreeSet<&str> = conv.layers().chain(dense.layers()).map(|l| l.kind()).collect();
    let grad = gradient_error(&conv, 1).max(gradient_error(&dense, 2));

    // teacher-student
    let a = ArchConfig {
        dfnn_width: 10,
        dfnn_depth: 2,
        decoder: DecoderKind::Dense,
        dense_width: 10,
        dense_depth: 1,
        ..Default::default()
    };
    let spec = NetworkSpec::build(3, 4, &a).unwrap();
    let mut tw = NetworkWeights::init(&spec, 11);
    tw.data.iter_mut().for_each(|w| *w *= 0.3);
    let teacher = Network::new(spec.clone(), tw, NormStats::identity(3), NormStats::identity(4)).unwrap();
    let mut rng = seeded(12);
    let ns = 1000;
    let x = DenseMatrix::from_fn(3, ns, |_, _| rng.gen_range(-1.0..1.0));
    let cols: Vec<Vec<f64>> = (0..ns).map(|j| teacher.forward(x.col(j)).unwrap()).collect();
    let y = DenseMatrix::from_columns(4, &cols).unwrap();
    let cfg = TrainConfig {
        epochs: 2000,
        batch: 32,
        patience: 2000,
        seed: 5,
        ..Default::default()
    };
    let (student, hist) = train(&x, &y, &spec, &cfg).unwrap();
    let mean: Vec<f64> = (0..4).map(|i| (0..ns).map(|j| y[(i, j)]).sum::<f64>() / ns as f64).collect();
    let var = (0..ns).map(|j| (0..4).map(|i| (y[(i, j)] - mean[i]).powi(2)).sum::<f64>()).sum::<f64>() / (4 * ns) as f64;
    let mse = hist
        .val_indices
        .iter()
        .map(|&j| {
            let p = student.forward(x.col(j)).unwrap();
            p.iter().zip(y.col(j)).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / (4 * hist.val_indices.len()) as f64;
    let recovery = mse / var;

    // bit reproducibility
    let short = TrainConfig { epochs: 5, ..cfg.clone() };
    let (r1, _) = train(&x, &y, &spec, &short).unwrap();
    let (r2, _) = train(&x, &y, &spec, &short).unwrap();
    let same = r1.weights.data.iter().zip(&r2.weights.data).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        grad < 1e-4 && kinds.len() == 3 && hist.best_val_loss() < 1e-4 && recovery < 1e-4 && same,
        format!(
            "FD gradient rel err {grad:.1e} over layer kinds {kinds:?} (< 1e-4); teacher-student val loss {:.1e}, mse/variance {recovery:.1e} (< 1e-4); bit-reproducible: {same}",
            hist.best_val_loss()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report_line = |k: usize, o: Outcome| {
        println!("criterion {k:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };

    let mut cfg = ExperimentConfig::default();
    cfg.set("train.epochs", "200").unwrap();
    cfg.set("deim.eps", "1e-5").unwrap();
    let p = cfg.problem().unwrap();

    report_line(1, criterion_1());
    report_line(2, criterion_2(&p));

    let offline_start = Instant::now();
    let art = run_offline(&cfg, &p).unwrap();
    let offline = offline_start.elapsed().as_secs_f64();
    report_line(3, criterion_3(&art.snapshots.data, cfg.eps_pod));
    report_line(4, criterion_4(&art.snapshots.data));

    let online_start = Instant::now();
    let report = run_online_benchmark(&cfg, &p, &art.online(), &cfg.test_parameters()).unwrap();
    let online = online_start.elapsed().as_secs_f64();
    print!("{}", report.summary_table());
    let t = |k: &str| art.timing.get(k).unwrap_or(0.0);
    let mean = |m: &str| report.method(m).map_or(0.0, |s| s.mean_seconds * report.test_parameters.len() as f64);
    let rom_seconds = t("offline.fom") + t("offline.pod") + mean("ROM") + mean("FOM");
    report_line(5, criterion_5(&report, rom_seconds));
    report_line(6, criterion_6(&p, &cfg, &art, &report));
    report_line(7, criterion_7(&report, offline + online));
    report_line(8, criterion_8(&report));
    report_line(9, criterion_9(&cfg, art.basis.dim()));
    report_line(10, criterion_10());

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    println!(
        "acceptance: {}/{} passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
