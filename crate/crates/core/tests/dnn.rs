mod common;

use common::{rel_diff, seeded};
use hyrom_core::dnn::*;
use hyrom_core::linalg::DenseMatrix;
use rand::Rng;

fn arch(decoder: DecoderKind) -> ArchConfig {
    ArchConfig {
        dfnn_width: 7,
        dfnn_depth: 2,
        decoder,
        channels: 3,
        dense_width: 6,
        dense_depth: 2,
        ..Default::default()
    }
}

fn uniform(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gradient_check(spec: &NetworkSpec, omega: f64, seed: u64) {
    let mut rng = seeded(seed);
    let batch = 4;
    let xs = uniform(batch * spec.input_dim, &mut rng);
    let ys = uniform(batch * spec.output_dim, &mut rng);
    let mut w = NetworkWeights::init(spec, seed);
    // nonzero biases so every parameter kind is exercised
    for v in w.data.iter_mut() {
        if *v == 0.0 {
            *v = 0.1 * rng.gen_range(-1.0..1.0);
        }
    }
    let mut g = vec![0.0; w.data.len()];
    loss_grad(spec, &w, &xs, &ys, batch, omega, Some(&mut g));

    let n = w.data.len();
    let h = 1e-5;
    for c in 0..50 {
        let i = (c * n) / 50 + rng.gen_range(0..(n / 50).max(1));
        let i = i.min(n - 1);
        let orig = w.data[i];
        w.data[i] = orig + h;
        let lp = loss_eval(spec, &w, &xs, &ys, batch, omega);
        w.data[i] = orig - h;
        let lm = loss_eval(spec, &w, &xs, &ys, batch, omega);
        w.data[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let scale = fd.abs().max(g[i].abs()).max(1e-6);
        assert!((fd - g[i]).abs() / scale < 1e-4, "param {i}: fd {fd} vs {}", g[i]);
    }
}

#[test]
fn gradients_match_finite_differences_conv() {
    // 30 outputs pad to a 6×6 grid: ConvT layers with cropping
    let spec = NetworkSpec::build(5, 30, &arch(DecoderKind::Conv)).unwrap();
    assert!(spec.decoder.iter().any(|l| matches!(l, LayerSpec::ConvT { .. })));
    assert!(spec.encoder.iter().any(|l| matches!(l, LayerSpec::Conv { .. })));
    gradient_check(&spec, 0.5, 1);
    gradient_check(&spec, 0.2, 2);
}

#[test]
fn gradients_match_finite_differences_dense() {
    let spec = NetworkSpec::build(5, 7, &arch(DecoderKind::Dense)).unwrap();
    gradient_check(&spec, 0.5, 3);
}

fn section_grad(g: &[f64], w: &NetworkWeights, range: std::ops::Range<usize>) -> f64 {
    g[w.offsets[range.start]..w.offsets[range.end]].iter().map(|v| v.abs()).sum()
}

#[test]
fn omega_endpoints_isolate_terms() {
    let spec = NetworkSpec::build(5, 30, &arch(DecoderKind::Conv)).unwrap();
    let (nd, nc) = (spec.dfnn.len(), spec.decoder.len());
    let total = nd + nc + spec.encoder.len();
    let mut rng = seeded(4);
    let batch = 3;
    let xs = uniform(batch * 5, &mut rng);
    let ys = uniform(batch * 30, &mut rng);
    let w = NetworkWeights::init(&spec, 4);

    let mut g = vec![0.0; w.data.len()];
    let l1 = loss_grad(&spec, &w, &xs, &ys, batch, 1.0, Some(&mut g));
    assert_eq!(section_grad(&g, &w, nd + nc..total), 0.0);
    assert!(section_grad(&g, &w, nd..nd + nc) > 0.0);

    // pure reconstruction loss from the inference path
    let net = Network::new(spec.clone(), w.clone(), NormStats::identity(5), NormStats::identity(30)).unwrap();
    let mut want = 0.0;
    for b in 0..batch {
        let yh = net.forward(&xs[b * 5..(b + 1) * 5]).unwrap();
        want += 0.5 * yh.iter().zip(&ys[b * 30..(b + 1) * 30]).map(|(a, c)| (a - c).powi(2)).sum::<f64>();
    }
    want /= batch as f64;
    assert!((l1 - want).abs() <= 1e-12 * want);

    g.fill(0.0);
    loss_grad(&spec, &w, &xs, &ys, batch, 0.0, Some(&mut g));
    assert_eq!(section_grad(&g, &w, nd..nd + nc), 0.0);
    assert!(section_grad(&g, &w, nd + nc..total) > 0.0);
    assert!(section_grad(&g, &w, 0..nd) > 0.0);
}

/// A randomly initialized network with weights shrunk to 0.3 of the He
/// range generates the targets; a student of the same spec is trained from
/// a different seed.
#[test]
fn student_recovers_teacher() {
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
    // standardized targets have unit variance per component
    assert!(hist.best_val_loss() < 1e-4, "validation loss {:e}", hist.best_val_loss());

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
    assert!(mse < 1e-4 * var, "mse {mse:e}, variance {var:e}");
    assert!(rel_diff(&student.forward(x.col(0)).unwrap(), y.col(0)) < 1e-1);
}

#[test]
fn early_stopping_restores_best_weights() {
    let spec = NetworkSpec::build(3, 4, &arch(DecoderKind::Dense)).unwrap();
    let mut rng = seeded(9);
    let x = DenseMatrix::from_fn(3, 30, |_, _| rng.gen_range(-1.0..1.0));
    // pure noise targets: validation loss stops improving quickly
    let y = DenseMatrix::from_fn(4, 30, |_, _| rng.gen_range(-1.0..1.0));
    let cfg = TrainConfig {
        epochs: 400,
        patience: 10,
        batch: 8,
        eta: 1e-2,
        ..Default::default()
    };
    let (net, hist) = train(&x, &y, &spec, &cfg).unwrap();
    assert!(hist.stopped_early);
    assert_eq!(hist.epochs.len(), hist.best_epoch + cfg.patience + 1);
    let xs = net.input_stats.apply_matrix(&x);
    let ys = net.output_stats.apply_matrix(&y);
    let val = &hist.val_indices;
    let gather = |m: &DenseMatrix| val.iter().flat_map(|&j| m.col(j).to_vec()).collect::<Vec<f64>>();
    let l = loss_eval(&spec, &net.weights, &gather(&xs), &gather(&ys), val.len(), cfg.omega_h);
    assert!((l - hist.best_val_loss()).abs() <= 1e-12 * l);
}

#[test]
fn fixed_seed_training_is_bit_reproducible() {
    let spec = NetworkSpec::build(3, 9, &arch(DecoderKind::Conv)).unwrap();
    let mut rng = seeded(21);
    let x = DenseMatrix::from_fn(3, 40, |_, _| rng.gen_range(-1.0..1.0));
    let y = DenseMatrix::from_fn(9, 40, |i, j| (x[(i % 3, j)] * (i + 1) as f64).sin());
    let cfg = TrainConfig {
        epochs: 5,
        batch: 8,
        seed: 13,
        ..Default::default()
    };
    let (a, ha) = train(&x, &y, &spec, &cfg).unwrap();
    let (b, hb) = train(&x, &y, &spec, &cfg).unwrap();
    let bits = |n: &Network| n.weights.data.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ha.to_csv(), hb.to_csv());
    let (c, _) = train(&x, &y, &spec, &TrainConfig { seed: 14, ..cfg }).unwrap();
    assert_ne!(bits(&a), bits(&c));
}
