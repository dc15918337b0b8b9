use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use hyrom_core::bench::*;
use hyrom_core::fom::{run_fom, FomProblem};
use hyrom_core::io;
use hyrom_core::linalg::norm2;
use hyrom_core::online::run_hyromnet;

#[derive(Parser)]
#[command(name = "hyrom", version, about = "Offline/online reduced-order pipeline for a hyperelastic beam")]
struct Cli {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Artifact directory; overrides `run.out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for parameter sweeps (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Extra configuration entries, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the mesh summary, or the full listing with --dump.
    Mesh {
        #[arg(long)]
        dump: bool,
    },
    /// FOM sweep over the training parameters (writes snapshots.hyrs), or a
    /// single run with --mu.
    Fom {
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
    },
    /// POD of the stored snapshots (writes basis.hyrb).
    Pod,
    /// Reduced collection runs (writes rn.hyrs, jn.hyrs, residuals.hyrs).
    RomCollect,
    /// DEIM operators for every configured tolerance (writes deim_<i>.hyrb).
    DeimBuild,
    /// Train the residual and Jacobian networks (writes rho.hyrw, iota.hyrw).
    Train,
    /// Network-driven online solve for --mu or the test parameters.
    Hyrom {
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        /// Also evaluate the true reduced residual of each accepted state.
        #[arg(long)]
        audit: bool,
    },
    /// Full offline stage and online benchmark.
    Bench {
        /// Reuse the offline artifacts in the output directory if present.
        #[arg(long)]
        reuse: bool,
    },
    /// Print the summary of a stored report.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set {kv}: expected KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Appends phases to `timing.csv` in `dir`.
fn log_timing(dir: &Path, t: &TimingLog) -> Result<()> {
    let path = dir.join("timing.csv");
    let mut all = match fs::read_to_string(&path) {
        Ok(s) => TimingLog::from_csv(&s)?,
        Err(_) => TimingLog::default(),
    };
    for (k, v) in &t.entries {
        all.record(k.clone(), *v);
    }
    fs::write(path, all.to_csv())?;
    Ok(())
}

struct Stage<'a> {
    dir: &'a Path,
    manifest: Manifest,
    timing: TimingLog,
}

impl<'a> Stage<'a> {
    fn open(cfg: &'a ExperimentConfig) -> Result<Self> {
        let dir = cfg.out_dir.as_path();
        let mut manifest = Manifest::open(dir, cfg.seed)?;
        manifest.write(dir, "config.txt", cfg.to_text().as_bytes())?;
        Ok(Self {
            dir,
            manifest,
            timing: TimingLog::default(),
        })
    }

    fn require(&self, names: &[&str], producer: &str) -> Result<()> {
        for n in names {
            if !self.manifest.contains(n) {
                bail!("{} has no {n}; run `hyrom {producer}` first", self.dir.display());
            }
        }
        self.manifest.verify(self.dir)?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        self.manifest.save(self.dir)?;
        log_timing(self.dir, &self.timing)
    }
}

fn parameters(cfg: &ExperimentConfig, mu: &Option<Vec<f64>>) -> Vec<Vec<f64>> {
    match mu {
        Some(m) => vec![m.clone()],
        None => cfg.test_parameters(),
    }
}

fn fom_cmd(cfg: &ExperimentConfig, p: &FomProblem, mu: &Option<Vec<f64>>) -> Result<()> {
    if let Some(mu) = mu {
        let tr = run_fom(p, mu, &cfg.newton, false)?;
        println!("step,time,iterations,norm_u");
        for (n, (u, k)) in tr.states.iter().zip(&tr.iterations).enumerate() {
            println!("{},{:e},{k},{:e}", n + 1, p.time.time(n + 1), norm2(u));
        }
        println!("# wall time {:.3} s", tr.wall_seconds);
        return Ok(());
    }
    let mut st = Stage::open(cfg)?;
    let train = cfg.training_parameters();
    let tr = st.timing.timed("offline.fom", || fom_sweep(p, &train, &cfg.newton, true))?;
    let s = iterate_snapshots(p, &tr);
    st.manifest.write(st.dir, "snapshots.hyrs", &io::encode_snapshots(&s))?;
    println!("{} runs, {} iterate snapshots of size {}", tr.len(), s.cols(), s.rows());
    st.finish()
}

fn pod_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let mut st = Stage::open(cfg)?;
    st.require(&["snapshots.hyrs"], "fom")?;
    let s = io::read_snapshots(&st.dir.join("snapshots.hyrs"))?;
    let b = st.timing.timed("offline.pod", || pod_stage(cfg, &s))?;
    st.manifest.write(st.dir, "basis.hyrb", &io::encode_basis(&b))?;
    println!("N = {} of {} (eps_pod = {:e})", b.dim(), b.v.rows(), cfg.eps_pod);
    st.finish()
}

fn collect_cmd(cfg: &ExperimentConfig, p: &FomProblem) -> Result<()> {
    let mut st = Stage::open(cfg)?;
    st.require(&["basis.hyrb"], "pod")?;
    let b = io::read_basis(&st.dir.join("basis.hyrb"))?;
    let mu = cfg.collection_parameters();
    let (ops, res) = st.timing.timed("offline.rom_collect", || collection_sweep(p, &b, &mu, &cfg.newton))?;
    st.manifest.write(st.dir, "residuals.hyrs", &io::encode_snapshots(&res))?;
    st.manifest.write(st.dir, "rn.hyrs", &io::encode_snapshots(&ops.residuals))?;
    st.manifest.write(st.dir, "jn.hyrs", &io::encode_snapshots(&ops.jacobians))?;
    println!("{} operator snapshots from {} runs", ops.len(), mu.len());
    st.finish()
}

fn deim_cmd(cfg: &ExperimentConfig, p: &FomProblem) -> Result<()> {
    let mut st = Stage::open(cfg)?;
    st.require(&["basis.hyrb", "residuals.hyrs"], "rom-collect")?;
    let b = io::read_basis(&st.dir.join("basis.hyrb"))?;
    let res = io::read_snapshots(&st.dir.join("residuals.hyrs"))?;
    let ops = deim_stage(cfg, p, &res, &b, &mut st.timing)?;
    st.manifest.files.retain(|f| !f.name.starts_with("deim_"));
    for (i, (eps, op)) in ops.iter().enumerate() {
        st.manifest.write(st.dir, &format!("deim_{i}.hyrb"), &io::encode_basis(&deim_basis(op, *eps)))?;
        println!(
            "eps_deim = {eps:e}: m = {}, reduced mesh {} of {} elements",
            op.m(),
            op.reduced_mesh.element_subset.len(),
            p.mesh.element_count()
        );
    }
    st.finish()
}

fn train_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let mut st = Stage::open(cfg)?;
    st.require(&["rn.hyrs", "jn.hyrs"], "rom-collect")?;
    let rn = io::read_snapshots(&st.dir.join("rn.hyrs"))?;
    let jn = io::read_snapshots(&st.dir.join("jn.hyrs"))?;
    let ops = operator_set_from_parts(rn, jn, cfg.dt)?;
    let (pair, hr, hj) = st.timing.timed("offline.train", || train_stage(cfg, &ops))?;
    st.manifest.write(st.dir, "rho.hyrw", &io::encode_network(&pair.residual, pair.max_k))?;
    st.manifest.write(st.dir, "iota.hyrw", &io::encode_network(&pair.jacobian, pair.max_k))?;
    st.manifest.write(st.dir, "history_rho.csv", hr.to_csv().as_bytes())?;
    st.manifest.write(st.dir, "history_iota.csv", hj.to_csv().as_bytes())?;
    for (name, h) in [("rho", &hr), ("iota", &hj)] {
        println!(
            "{name}: {} epochs, best validation loss {:e} at epoch {}",
            h.epochs.len(),
            h.best_val_loss(),
            h.best_epoch
        );
    }
    st.finish()
}

fn hyrom_cmd(cfg: &ExperimentConfig, p: &FomProblem, mu: &Option<Vec<f64>>, audit: bool) -> Result<()> {
    let art = load_online(&cfg.out_dir, p)?;
    let pair = art.pair.context("no trained networks; run `hyrom train` first")?;
    println!("param_id,wall_seconds,iterations,assembly_calls,unconverged_steps,max_audit_residual");
    for (i, m) in parameters(cfg, mu).iter().enumerate() {
        let r = run_hyromnet(&pair, &art.basis, m, &p.time, &cfg.online, audit.then_some(p))?;
        let worst = r.audit_residuals.iter().copied().fold(f64::NAN, f64::max);
        println!(
            "{i},{:e},{},{},{},{worst:e}",
            r.trajectory.timing.total,
            r.trajectory.total_iterations(),
            r.assembly_calls,
            r.unconverged.len()
        );
    }
    Ok(())
}

fn bench_cmd(cfg: &ExperimentConfig, p: &FomProblem, reuse: bool) -> Result<()> {
    let dir = cfg.out_dir.as_path();
    let art = if reuse && dir.join("manifest.json").exists() {
        info!("reusing offline artifacts in {}", dir.display());
        load_online(dir, p)?
    } else {
        let start = Instant::now();
        let off = run_offline(cfg, p)?;
        save_offline(dir, cfg, &off)?;
        info!("offline stage: {:.1} s", start.elapsed().as_secs_f64());
        off.online()
    };
    let report = run_online_benchmark(cfg, p, &art, &cfg.test_parameters())?;
    save_report(dir, &report)?;
    print!("{}", report.summary_table());
    for r in report.rows.iter().filter(|r| r.failure.is_some()) {
        warn!("{} failed on test parameter {}: {}", r.method, r.param_id, r.failure.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn report_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let path = cfg.out_dir.join("report.csv");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    print!("{}", read_report_csv(&text)?.summary_table());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = load_config(&cli)?;
    let p = cfg.problem()?;
    match &cli.command {
        Command::Mesh { dump } => {
            if *dump {
                print!("{}", p.mesh.dump());
            } else {
                println!(
                    "nodes {} elements {} dofs {} constrained {} bandwidth {}",
                    p.mesh.node_count(),
                    p.mesh.element_count(),
                    p.mesh.dof_count(),
                    p.mesh.dirichlet_dofs().len(),
                    p.mesh.dof_bandwidth()
                );
            }
            Ok(())
        }
        Command::Fom { mu } => fom_cmd(&cfg, &p, mu),
        Command::Pod => pod_cmd(&cfg),
        Command::RomCollect => collect_cmd(&cfg, &p),
        Command::DeimBuild => deim_cmd(&cfg, &p),
        Command::Train => train_cmd(&cfg),
        Command::Hyrom { mu, audit } => hyrom_cmd(&cfg, &p, mu, *audit),
        Command::Bench { reuse } => bench_cmd(&cfg, &p, *reuse),
        Command::Report => report_cmd(&cfg),
    }
}
