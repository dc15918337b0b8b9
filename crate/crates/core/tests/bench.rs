use std::path::PathBuf;

use hyrom_core::bench::*;
use hyrom_core::linalg::BandMatrix;
use proptest::prelude::*;

fn temp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("hyrom-bench-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn kv_parsing() {
    let m = parse_kv("# header\n a = 1 \n\nb=x y # trailing\n").unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m["a"], "1");
    assert_eq!(m["b"], "x y");
    assert!(matches!(parse_kv("a = 1\na = 2"), Err(ConfigError::Duplicate(_))));
    assert!(matches!(parse_kv("just words"), Err(ConfigError::Syntax { .. })));
}

#[test]
fn config_rejects_bad_input() {
    assert!(matches!(ExperimentConfig::from_text("mesh.nq = 3"), Err(ConfigError::UnknownKey(_))));
    assert!(matches!(ExperimentConfig::from_text("mesh.nx = ten"), Err(ConfigError::BadValue { .. })));
    assert!(matches!(ExperimentConfig::from_text("model.kind = hooke"), Err(ConfigError::BadValue { .. })));
    assert!(ExperimentConfig::from_text("offline.ns = 0").is_err());
    assert!(ExperimentConfig::from_text("param.bounds = 1:0, 2:3, 4:5").is_err());
}

#[test]
fn config_text_roundtrip() {
    let mut c = ExperimentConfig::default();
    for (k, v) in [
        ("mesh.nx", "20"),
        ("model.kind", "guccione"),
        ("fom.load", "hat"),
        ("fom.dt", "2.5e-3"),
        ("param.bounds", "1:2, 3:4"),
        ("deim.eps", "1e-3, 1e-5"),
        ("arch.decoder", "dense"),
        ("train.epochs", "17"),
        ("online.max_iters", "3"),
        ("online.strict", "true"),
        ("run.seed", "42"),
        ("run.out_dir", "some/where"),
    ] {
        c.set(k, v).unwrap();
    }
    let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
    assert_eq!(back, c);
    assert_eq!(ExperimentConfig::from_text("").unwrap(), ExperimentConfig::default());
    let mut none = ExperimentConfig::default();
    none.set("deim.eps", "").unwrap();
    assert!(none.eps_deim.is_empty());
    assert_eq!(ExperimentConfig::from_text(&none.to_text()).unwrap(), none);
}

#[test]
fn parameter_sets_are_seeded_and_inside_bounds() {
    let c = ExperimentConfig::default();
    let a = c.training_parameters();
    assert_eq!(a.len(), c.ns);
    assert_eq!(a, c.training_parameters());
    assert_ne!(a, c.collection_parameters()[..c.ns].to_vec());
    assert_eq!(c.test_parameters().len(), c.n_test);
    for mu in a.iter().chain(&c.collection_parameters()).chain(&c.test_parameters()) {
        for (v, b) in mu.iter().zip(&c.bounds) {
            assert!(*v >= b[0] && *v <= b[1]);
        }
    }
}

#[test]
fn error_metrics_oracles() {
    let u = vec![vec![3.0, 4.0], vec![0.0, 1.0]];
    let m = error_metrics(&u, &u).unwrap();
    assert_eq!((m.eps_abs, m.eps_rel, m.skipped), (0.0, 0.0, 0));

    // offset of norm 0.5 at every step
    let a: Vec<Vec<f64>> = u.iter().map(|v| vec![v[0] + 0.3, v[1] - 0.4]).collect();
    let m = error_metrics(&u, &a).unwrap();
    assert!((m.eps_abs - 0.5).abs() < 1e-15);
    // (0.5/5 + 0.5/1) / 2
    assert!((m.eps_rel - 0.3).abs() < 1e-15);

    // a zero reference state is skipped in the relative error only
    let r = vec![vec![0.0, 0.0], vec![0.0, 2.0]];
    let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let m = error_metrics(&r, &a).unwrap();
    assert_eq!(m.skipped, 1);
    assert!(m.rel_series[0].is_nan());
    assert_eq!(m.eps_abs, 1.0);
    assert_eq!(m.eps_rel, 0.5);

    assert!(error_metrics(&u, &u[..1]).is_err());
    assert!(error_metrics(&[], &[]).is_err());
}

#[test]
fn mass_weighted_norm() {
    // M = diag(4, 1): ‖(1, 2)‖_M = √8
    let mut m = BandMatrix::zeros(2, 0, 0);
    m.set(0, 0, 4.0);
    m.set(1, 1, 1.0);
    let r = vec![vec![1.0, 2.0]];
    let a = vec![vec![0.0, 0.0]];
    let e = error_metrics_with(&r, &a, Some(&m)).unwrap();
    assert!((e.eps_abs - 8f64.sqrt()).abs() < 1e-15);
    assert_eq!(e.eps_rel, 1.0);
}

#[test]
fn report_summary_means_and_speedups() {
    let csv = "method,param_id,eps_abs,eps_rel,wall_seconds\n\
               FOM,0,0,0,1.0\nFOM,1,0,0,3.0\n\
               ROM,0,1e-3,1e-2,0.5\nROM,1,3e-3,3e-2,0.5\n\
               Deep-HyROMnet,0,NaN,NaN,NaN\nDeep-HyROMnet,1,2e-3,2e-2,0.1\n";
    let r = read_report_csv(csv).unwrap();
    let fom = r.method("FOM").unwrap();
    assert_eq!(fom.mean_seconds, 2.0);
    assert_eq!(fom.speedup, 1.0);
    let rom = r.method("ROM").unwrap();
    assert!((rom.mean_eps_rel - 2e-2).abs() < 1e-15);
    assert_eq!(rom.speedup, 4.0);
    let net = r.method(HYROMNET).unwrap();
    assert_eq!(net.failures, 1);
    assert!((net.mean_eps_abs - 2e-3).abs() < 1e-18);
    assert!((net.speedup - 20.0).abs() < 1e-12);
    let again = read_report_csv(&r.to_csv()).unwrap();
    assert_eq!(again.rows.len(), 6);
    assert_eq!(again.method("ROM").unwrap().mean_seconds, 0.5);
    assert!(r.summary_table().lines().count() >= 4);
    assert_eq!(deim_method_name(1e-5), "DEIM(1e-5)");
}

#[test]
fn timing_csv_roundtrip() {
    let mut t = TimingLog::default();
    t.record("offline.fom", 1.25);
    t.record("offline.pod", 3e-4);
    let back = TimingLog::from_csv(&t.to_csv()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.get("offline.pod"), Some(3e-4));
    assert!(t.to_csv().starts_with("phase,elapsed_seconds\n"));
}

#[test]
fn manifest_detects_tampering() {
    let dir = temp_dir("manifest");
    std::fs::create_dir_all(&dir).unwrap();
    let mut m = Manifest::new(7);
    m.write(&dir, "a.bin", b"hello").unwrap();
    m.write(&dir, "b.bin", &[0u8; 16]).unwrap();
    m.save(&dir).unwrap();
    assert_eq!(m.files[0].sha256, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
    let back = Manifest::load(&dir).unwrap();
    assert_eq!(back, m);
    back.verify(&dir).unwrap();
    assert!(back.contains("b.bin") && !back.contains("c.bin"));
    std::fs::write(dir.join("a.bin"), b"hellp").unwrap();
    assert!(back.verify(&dir).is_err());
    std::fs::remove_file(dir.join("b.bin")).unwrap();
    assert!(back.verify(&dir).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for (k, v) in [
        ("fom.t_final", "0.02"),
        ("offline.ns", "3"),
        ("offline.ns_prime", "3"),
        ("offline.n_test", "2"),
        ("train.epochs", "2"),
        ("train.batch", "8"),
        ("arch.dfnn_width", "8"),
        ("arch.dense_width", "8"),
        ("run.seed", "3"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn offline_outputs_are_reproducible_and_reload() {
    let cfg = tiny();
    let p = cfg.problem().unwrap();
    let (d1, d2) = (temp_dir("rep1"), temp_dir("rep2"));
    let a1 = run_offline(&cfg, &p).unwrap();
    let m1 = save_offline(&d1, &cfg, &a1).unwrap();
    let a2 = run_offline(&cfg, &p).unwrap();
    let m2 = save_offline(&d2, &cfg, &a2).unwrap();
    assert_eq!(m1.digest(), m2.digest());
    for name in ["config.txt", "basis.hyrb", "snapshots.hyrs", "rho.hyrw", "iota.hyrw"] {
        assert!(m1.contains(name), "{name} missing");
    }
    assert!(!m1.contains("timing.csv"));

    let on = load_online(&d1, &p).unwrap();
    assert!(on.pair.is_some());
    assert_eq!(on.pair, a1.pair);
    assert_eq!(on.basis.v.as_slice(), a1.basis.v.as_slice());

    let rep = run_online_benchmark(&cfg, &p, &on, &cfg.test_parameters()).unwrap();
    assert_eq!(rep.hyromnet_assembly_calls, 0);
    let fom = rep.method("FOM").unwrap();
    assert_eq!(fom.mean_eps_rel, 0.0);
    assert!(rep.method("ROM").is_some() && rep.method(HYROMNET).is_some());
    save_report(&d1, &rep).unwrap();
    let back = read_report_csv(&std::fs::read_to_string(d1.join("report.csv")).unwrap()).unwrap();
    assert_eq!(back.rows.len(), rep.rows.len());

    // zero load amplitude: every solver reproduces the zero trajectory
    let zero: Vec<Vec<f64>> = cfg.test_parameters().iter().map(|mu| vec![mu[0], mu[1], 0.0]).collect();
    let no_net = OnlineArtifacts { pair: None, ..on.clone() };
    let rep = run_online_benchmark(&cfg, &p, &no_net, &zero).unwrap();
    assert!(rep.rows.len() >= 2 * 3);
    for r in &rep.rows {
        assert!(r.failure.is_none(), "{} failed: {:?}", r.method, r.failure);
        assert_eq!((r.eps_abs, r.eps_rel), (0.0, 0.0), "{}", r.method);
    }

    // a different seed changes the sampled parameters and hence the files
    let mut other = cfg.clone();
    other.set("run.seed", "4").unwrap();
    let a3 = run_offline(&other, &p).unwrap();
    let m3 = save_offline(&temp_dir("rep3"), &other, &a3).unwrap();
    assert_ne!(m3.digest(), m1.digest());

    std::fs::write(d2.join("basis.hyrb"), b"HYRB").unwrap();
    assert!(load_online(&d2, &p).is_err());
    for d in [d1, d2, temp_dir("rep3")] {
        let _ = std::fs::remove_dir_all(d);
    }
}

proptest! {
    #[test]
    fn error_metrics_are_scale_invariant_in_relative_error(
        vals in proptest::collection::vec(-10.0f64..10.0, 6),
        pert in proptest::collection::vec(-1.0f64..1.0, 6),
        scale in 0.1f64..100.0,
    ) {
        let r: Vec<Vec<f64>> = vals.chunks(2).map(|c| c.to_vec()).collect();
        let a: Vec<Vec<f64>> = vals.chunks(2).zip(pert.chunks(2)).map(|(c, p)| vec![c[0] + p[0], c[1] + p[1]]).collect();
        let m = error_metrics(&r, &a).unwrap();
        let rs: Vec<Vec<f64>> = r.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let as_: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let ms = error_metrics(&rs, &as_).unwrap();
        prop_assert!(m.eps_abs >= 0.0);
        prop_assert!((ms.eps_abs - scale * m.eps_abs).abs() <= 1e-9 * (1.0 + ms.eps_abs));
        prop_assert!((ms.eps_rel - m.eps_rel).abs() <= 1e-9 * (1.0 + m.eps_rel));
    }
}
