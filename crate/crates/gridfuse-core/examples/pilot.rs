//! Hyperparameter scouting run: train on the benchmark dataset and print
//! the metrics the acceptance thresholds care about.

use std::time::Instant;

use gridfuse_core::analysis::{derivative_error, eigen_deviation, predict_global};
use gridfuse_core::grid::builtin;
use gridfuse_core::grid::dataset::{generate_dataset, DatasetConfig};
use gridfuse_core::model::{DeviceDims, ModelConfig};
use gridfuse_core::train::{normalize, train_curriculum, LearnedSystem, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let n_samples: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2e-2);
    let slices: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);
    let grid_name = args
        .get(5)
        .map(|s| s.as_str())
        .unwrap_or("two-machine-three-bus");

    let grid = builtin(grid_name).unwrap();
    let t0 = Instant::now();
    let dcfg = DatasetConfig::benchmark(&grid.name, n_samples, 1);
    let raw = generate_dataset(&grid, &dcfg).unwrap();
    let n_dev = raw.n_devices();
    println!(
        "dataset: {} samples, {:.1}s",
        n_samples,
        t0.elapsed().as_secs_f64()
    );

    let ds = normalize(raw, vec![true; n_dev], 0.8).unwrap();
    let dims = vec![DeviceDims { n: 2, m: 2, q: 2 }; n_dev];
    let mut sys = LearnedSystem::new(
        &dims,
        ds.raw.cond_dim(),
        ModelConfig {
            seed: 7,
            ..ModelConfig::default()
        },
        &vec![true; n_dev],
        2,
    );
    let mut cfg = TrainConfig {
        slices_per_epoch: slices,
        batch: 8,
        lr,
        log_path: std::env::var_os("PILOT_LOG").map(std::path::PathBuf::from),
        ..TrainConfig::quick(epochs, 11)
    };
    match args.get(6).map(|s| s.as_str()) {
        Some("long") => {
            cfg.table = gridfuse_core::train::SliceTable {
                entries: vec![(25, 0.25), (50, 0.25), (100, 0.2), (200, 0.15), (400, 0.15)],
            };
        }
        Some("mixed") => {
            cfg.table = gridfuse_core::train::SliceTable {
                entries: vec![(25, 0.35), (50, 0.3), (100, 0.2), (200, 0.1), (400, 0.05)],
            };
        }
        _ => {}
    }
    let t1 = Instant::now();
    let report = train_curriculum(&mut sys, &ds, &cfg).unwrap();
    println!(
        "train: {:.1}s, stage2@{}, rollbacks {}, final val {:.3e} (net {:.3e} local {:.3e} glob {:.3e})",
        t1.elapsed().as_secs_f64(),
        report.stage2_start,
        report.rollbacks,
        report.final_val.total,
        report.final_val.network,
        report.final_val.local,
        report.final_val.global,
    );

    let e = derivative_error(&sys, &ds, &ds.test_idx).unwrap();
    println!(
        "derivative error: global {:.4}%, devices {:?}",
        100.0 * e.global,
        e.per_device
            .iter()
            .map(|v| format!("{:.4}%", 100.0 * v))
            .collect::<Vec<_>>()
    );

    let mut worst_im = 0.0_f64;
    let mut worst_re = 0.0_f64;
    for &i in ds.test_idx.iter().take(5) {
        let s = &ds.raw.samples[i];
        let pred = predict_global(&sys, &ds.stats, &s.cond).unwrap();
        let devs = eigen_deviation(&pred.a_sys, &s.truth.a_sys).unwrap();
        for d in &devs {
            worst_im = worst_im.max(d.d_im / d.im_ref);
            worst_re = worst_re.max(d.d_re);
            println!(
                "  sample {i}: truth {:.4}{:+.4}j pred {:.4}{:+.4}j  dIm/ref {:.4} dRe {:.4}",
                d.truth.0,
                d.truth.1,
                d.pred.0,
                d.pred.1,
                d.d_im / d.im_ref,
                d.d_re
            );
        }
    }
    println!(
        "worst dIm/ref {:.4} (tol 0.02), worst dRe {:.4} (tol 0.05)",
        worst_im, worst_re
    );
    println!("total wall {:.1}s", t0.elapsed().as_secs_f64());
}
