//! Command-line front end: reproducible, config-driven runs of the whole
//! pipeline with file artifacts and manifests.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::Digest;

use config::RunConfig;
use gridfuse_core::analysis::{
    self, derivative_error, eigen_report, epochs_to_converge, max_pairing_jump, root_locus,
    run_ablation, train_monolithic, Arm, MonoConfig,
};
use gridfuse_core::error::{Error, Result};
use gridfuse_core::grid::dataset::generate_dataset;
use gridfuse_core::grid::io::{export_csv, load_dataset, save_dataset};
use gridfuse_core::grid::{builtin, GridModel};
use gridfuse_core::model::checkpoint::{load_weights, save_weights};
use gridfuse_core::model::DeviceDims;
use gridfuse_core::train::{normalize, train_curriculum, Dataset, LearnedSystem, TrainConfig};

#[derive(Parser)]
#[command(
    name = "gridfuse",
    about = "Learn and analyze fused small-signal models of multi-machine grids",
    version
)]
struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Worker threads for loss evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the trajectory dataset and store it under the output dir.
    GenData,
    /// Train the hierarchical model on the dataset (generated if absent).
    Train,
    /// Evaluate derivative errors of the trained model on the test split.
    Eval,
    /// Eigen-report of the trained model versus truth at held-out points.
    Eigen,
    /// Sweep one load and trace truth and predicted eigenvalue paths.
    RootLocus {
        #[arg(long, default_value_t = 2)]
        bus: usize,
        #[arg(long, default_value_t = 1.0)]
        from: f64,
        #[arg(long, default_value_t = 2.0)]
        to: f64,
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Train the three objective-ablation arms and tabulate their errors.
    Ablate,
    /// Train the undecomposed whole-system baseline and tabulate it.
    Baseline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(&cli.config)?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)?;
    let hash = config_hash(&cli.config)?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, &out, &hash),
        Command::Train => cmd_train(&cfg, &out, &hash, cli.jobs),
        Command::Eval => cmd_eval(&cfg, &out, &hash),
        Command::Eigen => cmd_eigen(&cfg, &out, &hash),
        Command::RootLocus {
            bus,
            from,
            to,
            points,
        } => cmd_root_locus(&cfg, &out, &hash, *bus, (*from, *to), *points),
        Command::Ablate => cmd_ablate(&cfg, &out, &hash, cli.jobs),
        Command::Baseline => cmd_baseline(&cfg, &out, &hash, cli.jobs),
    }
}

fn config_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("config '{}': {e}", path.display())))?;
    Ok(hex::encode(sha2::Sha256::digest(&bytes)))
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, hash: &str) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "config_hash": hash,
        "seeds": {
            "dataset": cfg.dataset.seed,
            "model": cfg.model.seed,
            "training": cfg.training.seed,
        },
        "versions": {
            "gridfuse-cli": env!("CARGO_PKG_VERSION"),
            "format": 1,
        },
    });
    let mut f = std::fs::File::create(out.join(format!("{command}-manifest.json")))?;
    writeln!(
        f,
        "{}",
        serde_json::to_string_pretty(&manifest).expect("manifest is plain data")
    )?;
    Ok(())
}

fn load_grid(name: &str) -> Result<GridModel> {
    if let Some(g) = builtin(name) {
        return Ok(g);
    }
    GridModel::load_file(Path::new(name))
}

/// Load the dataset from the output dir, or simulate and persist it.
fn obtain_dataset(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let dir = out.join("dataset");
    let raw = if dir.join("meta.json").exists() {
        load_dataset(&dir)?
    } else {
        let grid = load_grid(&cfg.dataset.grid)?;
        let raw = generate_dataset(&grid, &cfg.dataset_config())?;
        save_dataset(&raw, &dir)?;
        raw
    };
    let n_dev = raw.n_devices();
    for &d in &cfg.model.unmeasured {
        if d >= n_dev {
            return Err(Error::Config(format!(
                "model.unmeasured names device {d}, grid has {n_dev}"
            )));
        }
    }
    let measured: Vec<bool> = (0..n_dev)
        .map(|d| !cfg.model.unmeasured.contains(&d))
        .collect();
    normalize(raw, measured, 0.8)
}

fn build_system(cfg: &RunConfig, ds: &Dataset) -> LearnedSystem {
    let dims = vec![DeviceDims { n: 2, m: 2, q: 2 }; ds.raw.n_devices()];
    LearnedSystem::new(
        &dims,
        ds.raw.cond_dim(),
        cfg.model_config(),
        &ds.measured,
        cfg.model.window,
    )
}

fn train_config(cfg: &RunConfig, out: &Path, jobs: Option<usize>) -> TrainConfig {
    TrainConfig {
        slices_per_epoch: cfg.training.slices_per_epoch,
        batch: cfg.training.batch,
        lr: cfg.training.lr,
        table: cfg.slice_table(),
        val_slices: cfg.training.val_slices,
        stage1_frac: cfg.training.stage1_frac,
        jobs: jobs.unwrap_or_else(rayon::current_num_threads),
        log_path: Some(out.join("train_log.csv")),
        ..TrainConfig::quick(cfg.training.epochs, cfg.training.seed)
    }
}

fn trained_system(cfg: &RunConfig, out: &Path, ds: &Dataset) -> Result<LearnedSystem> {
    let weights = out.join("model.bin");
    if !weights.exists() {
        return Err(Error::Config(format!(
            "no trained model at '{}'; run `gridfuse train` first",
            weights.display()
        )));
    }
    let mut sys = build_system(cfg, ds);
    load_weights(sys.store_mut(), &weights)?;
    Ok(sys)
}

fn cmd_gen_data(cfg: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let grid = load_grid(&cfg.dataset.grid)?;
    let dir = out.join("dataset");
    let raw = generate_dataset(&grid, &cfg.dataset_config())?;
    save_dataset(&raw, &dir)?;
    export_csv(&raw, 0, &dir.join("sample0.csv"))?;
    write_manifest(out, "gen-data", cfg, hash)?;
    println!(
        "dataset: {} samples x {} steps at dt {} -> {}",
        raw.samples.len(),
        cfg.dataset.steps,
        cfg.dataset.dt,
        dir.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, hash: &str, jobs: Option<usize>) -> Result<()> {
    let ds = obtain_dataset(cfg, out)?;
    let mut sys = build_system(cfg, &ds);
    let tcfg = train_config(cfg, out, jobs);
    let report = train_curriculum(&mut sys, &ds, &tcfg)?;
    save_weights(sys.store(), &out.join("model.bin"))?;
    let stats = serde_json::to_string_pretty(&ds.stats).expect("stats are plain data");
    std::fs::write(out.join("stats.json"), stats)?;
    write_manifest(out, "train", cfg, hash)?;
    println!(
        "trained {} epochs (stage 2 from {}), final validation {:.4e}, {:.1}s",
        report.logs.len(),
        report.stage2_start,
        report.final_val.total,
        report.wall_s
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let ds = obtain_dataset(cfg, out)?;
    let sys = trained_system(cfg, out, &ds)?;
    let e = derivative_error(&sys, &ds, &ds.test_idx)?;
    let path = out.join("metrics.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "scope,relative_derivative_error")?;
    writeln!(f, "global,{:.12e}", e.global)?;
    for (d, v) in e.per_device.iter().enumerate() {
        writeln!(f, "device{d},{v:.12e}")?;
    }
    write_manifest(out, "eval", cfg, hash)?;
    println!(
        "derivative error: global {:.4}%, per-device {}",
        100.0 * e.global,
        e.per_device
            .iter()
            .map(|v| format!("{:.4}%", 100.0 * v))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(())
}

fn cmd_eigen(cfg: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let ds = obtain_dataset(cfg, out)?;
    let sys = trained_system(cfg, out, &ds)?;
    let path = out.join("eigen.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "sample,kind,re,im,freq_hz,damping")?;
    for &i in ds.test_idx.iter().take(5) {
        let s = &ds.raw.samples[i];
        let pred = analysis::predict_global(&sys, &ds.stats, &s.cond)?;
        for (kind, a) in [("truth", &s.truth.a_sys), ("learned", &pred.a_sys)] {
            for m in eigen_report(a)? {
                writeln!(
                    f,
                    "{i},{kind},{:.12e},{:.12e},{:.12e},{:.12e}",
                    m.re, m.im, m.freq_hz, m.damping
                )?;
            }
        }
    }
    write_manifest(out, "eigen", cfg, hash)?;
    println!("eigen-report -> {}", path.display());
    Ok(())
}

fn cmd_root_locus(
    cfg: &RunConfig,
    out: &Path,
    hash: &str,
    bus: usize,
    range: (f64, f64),
    points: usize,
) -> Result<()> {
    let ds = obtain_dataset(cfg, out)?;
    let grid = load_grid(&cfg.dataset.grid)?;
    let sys = trained_system(cfg, out, &ds)?;
    let locus = root_locus(&grid, bus, range, points, Some((&sys, &ds.stats)))?;
    let path = out.join("locus.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "param,kind,mode,re,im,infeasible")?;
    for p in &locus {
        if p.infeasible {
            writeln!(f, "{:.6},none,0,nan,nan,1", p.param)?;
            continue;
        }
        for (k, l) in p.truth.iter().enumerate() {
            writeln!(f, "{:.6},truth,{k},{:.12e},{:.12e},0", p.param, l.re, l.im)?;
        }
        for (k, l) in p.pred.iter().enumerate() {
            writeln!(
                f,
                "{:.6},learned,{},{:.12e},{:.12e},0",
                p.param, p.pairing[k], l.re, l.im
            )?;
        }
    }
    let (max_pred, max_truth) = max_pairing_jump(&locus);
    write_manifest(out, "root-locus", cfg, hash)?;
    println!(
        "locus: {} points -> {} (max step: learned {:.4}, truth {:.4})",
        locus.len(),
        path.display(),
        max_pred,
        max_truth
    );
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, out: &Path, hash: &str, jobs: Option<usize>) -> Result<()> {
    let ds = obtain_dataset(cfg, out)?;
    let tcfg = train_config(cfg, out, jobs);
    let path = out.join("ablation.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "arm,local_error,global_error,epochs,seed")?;
    for arm in [Arm::LocalOnly, Arm::SingleStage, Arm::MultiStage] {
        let mut acfg = tcfg.clone();
        acfg.log_path = Some(out.join(format!("ablation_{}.csv", arm.name())));
        let r = run_ablation(&ds, arm, &acfg, &cfg.model_config())?;
        writeln!(
            f,
            "{},{:.12e},{:.12e},{},{}",
            arm.name(),
            r.local_error,
            r.global_error,
            r.epochs,
            r.seed
        )?;
        println!(
            "{}: local {:.4}% global {:.4}%",
            arm.name(),
            100.0 * r.local_error,
            100.0 * r.global_error
        );
    }
    write_manifest(out, "ablate", cfg, hash)?;
    Ok(())
}

fn cmd_baseline(cfg: &RunConfig, out: &Path, hash: &str, jobs: Option<usize>) -> Result<()> {
    let ds = obtain_dataset(cfg, out)?;
    let mcfg = MonoConfig {
        slices_per_epoch: cfg.training.slices_per_epoch,
        batch: cfg.training.batch,
        lr: cfg.training.lr,
        table: cfg.slice_table(),
        val_slices: cfg.training.val_slices,
        jobs: jobs.unwrap_or_else(rayon::current_num_threads),
        ..MonoConfig::quick(cfg.training.epochs, cfg.training.seed)
    };
    let (model, result) = train_monolithic(&ds, &mcfg)?;
    let err = analysis::global_derivative_error(|c| model.predict(&ds, c), &ds, &ds.test_idx)?;
    let path = out.join("baseline.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "metric,value")?;
    writeln!(f, "global_error,{err:.12e}")?;
    writeln!(f, "epochs_to_converge,{}", result.epochs_to_converge)?;
    writeln!(f, "final_val,{:.12e}", result.final_val)?;
    write_manifest(out, "baseline", cfg, hash)?;
    println!(
        "baseline: global error {:.4}%, settled after {} epochs",
        100.0 * err,
        epochs_to_converge(&result.val_history)
    );
    Ok(())
}
