//! Two-stage optimization schedule. The first stage fits the interface map
//! and the per-device rollouts with only a whisper of the fused loss; the
//! second stage ramps the fused rollout up to full weight to tighten the
//! closed-loop dynamics.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamState, CosineSchedule};
use crate::error::{Error, Result};
use crate::nn::{accumulate_grads, loss_and_grads, ParamStore};
use crate::tensor::Tensor;
use crate::train::loss::{slice_loss_tape, LearnedSystem, LossBreakdown, LossWeights};
use crate::train::normalize::Dataset;
use crate::train::slicing::{Slice, SliceStream, SliceTable};

/// Which weight schedule the run uses. The two degenerate modes exist for
/// the ablation arms: one never turns the fused loss on, the other starts
/// with the final weights from the very first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurriculumMode {
    MultiStage,
    LocalOnly,
    SingleStage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: CurriculumMode,
    /// Total epoch budget across both stages.
    pub epochs: usize,
    /// Fraction of the budget reserved for the first stage (upper bound;
    /// a validation plateau hands over earlier).
    pub stage1_frac: f64,
    /// Windows drawn per epoch.
    pub slices_per_epoch: usize,
    /// Windows per optimizer step.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub table: SliceTable,
    /// Epochs without a 1% relative improvement that count as a plateau.
    pub plateau_window: usize,
    pub plateau_tol: f64,
    /// NaN recoveries before giving up.
    pub max_rollbacks: usize,
    /// Fixed validation windows drawn from the held-out split.
    pub val_slices: usize,
    /// Parallel loss evaluations per batch; 1 runs serially. Gradient
    /// reduction is ordered either way, so results do not depend on this.
    pub jobs: usize,
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn quick(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            mode: CurriculumMode::MultiStage,
            epochs,
            stage1_frac: 0.4,
            slices_per_epoch: 32,
            batch: 8,
            lr: 2e-2,
            seed,
            table: SliceTable::default(),
            plateau_window: 20,
            plateau_tol: 0.01,
            max_rollbacks: 3,
            val_slices: 16,
            jobs: rayon::current_num_threads(),
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub skipped: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub logs: Vec<EpochLog>,
    pub final_val: LossBreakdown,
    /// Epoch index where the second stage began.
    pub stage2_start: usize,
    pub rollbacks: usize,
    pub wall_s: f64,
}

/// Loss weights in effect at a given epoch. The fused-loss weight ramps
/// linearly to one over the first quarter of the second stage.
fn stage_weights(
    mode: CurriculumMode,
    epoch: usize,
    stage2_start: usize,
    epochs: usize,
) -> (usize, LossWeights) {
    match mode {
        CurriculumMode::LocalOnly => {
            return (
                1,
                LossWeights {
                    alpha: 1.0,
                    beta: 1.0,
                    gamma: 0.0,
                    lambda: 1.0,
                },
            );
        }
        CurriculumMode::SingleStage => return (2, LossWeights::stage_two(1.0)),
        CurriculumMode::MultiStage => {}
    }
    if epoch < stage2_start {
        (1, LossWeights::stage_one())
    } else {
        let ramp_len = ((epochs - stage2_start) / 4).max(1);
        let p = ((epoch - stage2_start) as f64 / ramp_len as f64).min(1.0);
        let gamma = 0.05 + (1.0 - 0.05) * p;
        (2, LossWeights::stage_two(gamma))
    }
}

fn batch_grads(
    sys: &LearnedSystem,
    ds: &Dataset,
    batch: &[Slice],
    w: &LossWeights,
    jobs: usize,
) -> Result<(LossBreakdown, Vec<Tensor>, usize)> {
    let eval = |&sl: &Slice| -> Result<Option<(f64, Vec<Tensor>, LossBreakdown)>> {
        let mut part = LossBreakdown::default();
        let r = loss_and_grads(sys.store(), |sess| {
            let (total, bd) = slice_loss_tape(sess, sys, ds, sl, w)?;
            part = bd;
            Ok(total)
        });
        match r {
            Ok((v, g)) => Ok(Some((v, g, part))),
            Err(Error::Divergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let results: Vec<Option<(f64, Vec<Tensor>, LossBreakdown)>> = if jobs > 1 {
        batch.par_iter().map(eval).collect::<Result<_>>()?
    } else {
        batch.iter().map(eval).collect::<Result<_>>()?
    };

    let mut acc: Vec<Tensor> = Vec::new();
    let mut bd = LossBreakdown::default();
    let mut used = 0usize;
    for r in results.into_iter().flatten() {
        let (value, grads, part) = r;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "training loss".into(),
            });
        }
        accumulate_grads(&mut acc, &grads);
        bd.accumulate(&part);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Divergence {
            step: 0,
            norm: f64::INFINITY,
        });
    }
    let inv = 1.0 / used as f64;
    for g in &mut acc {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    Ok((bd.scale(inv), acc, batch.len() - used))
}

/// Fixed validation windows: deterministic, drawn once from the held-out
/// split, reused every epoch so the plateau test compares like with like.
pub fn validation_slices(
    sys: &LearnedSystem,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<Slice>> {
    let steps = ds.raw.samples[0].traj.states.rows() - 1;
    let mut stream = SliceStream::new(
        cfg.seed ^ 0x5eed_0a1,
        ds.test_idx.clone(),
        steps,
        sys.min_start(),
        &cfg.table,
    )?;
    Ok((0..cfg.val_slices).map(|_| stream.draw()).collect())
}

pub fn write_log_csv(path: &PathBuf, logs: &[EpochLog]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "epoch,stage,lr,train_network,train_local,train_global,train_total,\
         val_network,val_local,val_global,val_total,skipped,wall_s"
    )?;
    for l in logs {
        writeln!(
            f,
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{:.3}",
            l.epoch,
            l.stage,
            l.lr,
            l.train.network,
            l.train.local,
            l.train.global,
            l.train.total,
            l.val.network,
            l.val.local,
            l.val.global,
            l.val.total,
            l.skipped,
            l.wall_s
        )?;
    }
    Ok(())
}

pub fn train_curriculum(
    sys: &mut LearnedSystem,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epoch budget must be positive".into()));
    }
    let started = Instant::now();
    let steps_per_epoch = (cfg.slices_per_epoch / cfg.batch).max(1);
    let traj_steps = ds.raw.samples[0].traj.states.rows() - 1;
    let val_set = validation_slices(sys, ds, cfg)?;
    let val_weights = LossWeights::stage_two(1.0);

    let mut stage2_start = ((cfg.epochs as f64) * cfg.stage1_frac).round() as usize;
    stage2_start = stage2_start.max(1).min(cfg.epochs.saturating_sub(1).max(1));
    let mut stage2_fixed = false;

    let mut adam = AdamState::new(sys.store(), cfg.lr);
    let mut lr_scale = 1.0;
    let mut rollbacks = 0usize;
    let mut logs: Vec<EpochLog> = Vec::with_capacity(cfg.epochs);
    // Snapshot for NaN recovery.
    let mut snapshot: (ParamStore, AdamState) = (sys.store().clone(), adam.clone());
    let mut val_history: Vec<f64> = Vec::new();
    // Best-so-far checkpoint for the explosion guard: a run can blow up
    // gradually while every value stays finite, so the NaN path never fires.
    let mut best_val = f64::INFINITY;
    let mut best_snap = snapshot.clone();

    let mut epoch = 0usize;
    while epoch < cfg.epochs {
        let t0 = Instant::now();
        let (stage, w) = stage_weights(cfg.mode, epoch, stage2_start, cfg.epochs);
        // One continuous cosine decay across the whole budget; restarting
        // the rate at the stage boundary wrecks the pre-trained components.
        let schedule = CosineSchedule {
            lr0: cfg.lr * lr_scale,
            floor_frac: 0.01,
            total_steps: (cfg.epochs * steps_per_epoch) as u64,
        };

        let mut stream = SliceStream::new(
            cfg.seed.wrapping_add(epoch as u64),
            ds.train_idx.clone(),
            traj_steps,
            sys.min_start(),
            &cfg.table,
        )?;

        let mut epoch_bd = LossBreakdown::default();
        let mut epoch_skipped = 0usize;
        let mut lr_now = schedule.lr(0);
        let mut failed = false;
        for s in 0..steps_per_epoch {
            let batch: Vec<Slice> = (0..cfg.batch).map(|_| stream.draw()).collect();
            lr_now = schedule.lr((epoch * steps_per_epoch + s) as u64);
            match batch_grads(sys, ds, &batch, &w, cfg.jobs) {
                Ok((bd, grads, skipped)) => {
                    epoch_bd.accumulate(&bd);
                    epoch_skipped += skipped;
                    if let Err(Error::NonFinite { .. }) = adam.step(sys.store_mut(), &grads, lr_now)
                    {
                        failed = true;
                        break;
                    }
                }
                Err(Error::NonFinite { .. }) | Err(Error::Divergence { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        if failed {
            rollbacks += 1;
            if rollbacks > cfg.max_rollbacks {
                return Err(Error::NonFinite {
                    context: format!("training diverged {rollbacks} times; giving up"),
                });
            }
            let (st, ad) = snapshot.clone();
            *sys.store_mut() = st;
            adam = ad;
            lr_scale *= 0.5;
            continue; // retry the same epoch at the reduced rate
        }

        // A fully diverged validation set is handled like a NaN batch:
        // roll back and halve the rate instead of aborting the run.
        let val_bd = match crate::train::loss::evaluate_slices(sys, ds, &val_set, &val_weights) {
            Ok((bd, _)) => bd,
            Err(Error::NonFinite { .. }) | Err(Error::Divergence { .. }) => {
                rollbacks += 1;
                if rollbacks > cfg.max_rollbacks {
                    return Err(Error::NonFinite {
                        context: format!("training diverged {rollbacks} times; giving up"),
                    });
                }
                let (st, ad) = snapshot.clone();
                *sys.store_mut() = st;
                adam = ad;
                lr_scale *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        // Explosion guard: a validation loss far above the best seen means
        // the run left the basin; restart from the best checkpoint slower.
        if best_val.is_finite() && val_bd.total > best_val * 25.0 {
            rollbacks += 1;
            if rollbacks > cfg.max_rollbacks {
                return Err(Error::NonFinite {
                    context: format!("training diverged {rollbacks} times; giving up"),
                });
            }
            let (st, ad) = best_snap.clone();
            *sys.store_mut() = st;
            adam = ad;
            snapshot = best_snap.clone();
            lr_scale *= 0.5;
            continue;
        }
        // Plateau detection watches the per-device term: the fused term is
        // expected to stall in the first stage where its weight is tiny.
        val_history.push(val_bd.local);

        // Plateau check promotes the stage switch ahead of the 40% mark.
        if cfg.mode == CurriculumMode::MultiStage
            && stage == 1
            && !stage2_fixed
            && val_history.len() > cfg.plateau_window
        {
            let then = val_history[val_history.len() - 1 - cfg.plateau_window];
            let now = val_bd.local;
            if then.is_finite() && now > then * (1.0 - cfg.plateau_tol) {
                stage2_start = epoch + 1;
                stage2_fixed = true;
            }
        }

        logs.push(EpochLog {
            epoch,
            stage,
            lr: lr_now,
            train: epoch_bd.scale(1.0 / steps_per_epoch as f64),
            val: val_bd,
            skipped: epoch_skipped,
            wall_s: t0.elapsed().as_secs_f64(),
        });
        snapshot = (sys.store().clone(), adam.clone());
        if val_bd.total < best_val {
            best_val = val_bd.total;
            best_snap = snapshot.clone();
        }
        epoch += 1;
    }

    if let Some(path) = &cfg.log_path {
        write_log_csv(path, &logs)?;
    }
    let final_val = logs.last().map(|l| l.val).unwrap_or_default();
    Ok(TrainReport {
        logs,
        final_val,
        stage2_start,
        rollbacks,
        wall_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dataset::{generate_dataset, DatasetConfig};
    use crate::grid::two_machine_three_bus;
    use crate::model::{DeviceDims, ModelConfig};
    use crate::train::loss::inject_truth;
    use crate::train::normalize::normalize;

    fn small_dataset(range_frac: f64, steps: usize) -> Dataset {
        let grid = two_machine_three_bus();
        let cfg = DatasetConfig {
            n_samples: 6,
            steps,
            range_frac,
            ..DatasetConfig::benchmark(&grid.name, 6, 9)
        };
        let raw = generate_dataset(&grid, &cfg).unwrap();
        normalize(raw, vec![true, true], 0.8).unwrap()
    }

    fn small_system(ds: &Dataset, seed: u64) -> LearnedSystem {
        LearnedSystem::new(
            &[DeviceDims { n: 2, m: 2, q: 2 }; 2],
            ds.raw.cond_dim(),
            ModelConfig {
                seed,
                ..ModelConfig::default()
            },
            &[true, true],
            2,
        )
    }

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            slices_per_epoch: 8,
            batch: 4,
            val_slices: 4,
            table: SliceTable {
                entries: vec![(25, 0.7), (50, 0.3)],
            },
            ..TrainConfig::quick(epochs, 17)
        }
    }

    #[test]
    fn short_run_reduces_validation_loss() {
        let ds = small_dataset(0.2, 200);
        let mut sys = small_system(&ds, 5);
        let report = train_curriculum(&mut sys, &ds, &tiny_cfg(12)).unwrap();
        let first = report.logs.first().unwrap().val.total;
        let last = report.final_val.total;
        assert!(last < first, "validation went {first:.4} -> {last:.4}");
        assert_eq!(report.logs.len(), 12);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_dataset(0.2, 200);
        let run = || {
            let mut sys = small_system(&ds, 5);
            train_curriculum(&mut sys, &ds, &tiny_cfg(4)).unwrap();
            sys.store().tensors().to_vec()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn truth_start_stays_at_the_floor() {
        // Starting from the exact system, a short run must not wander off:
        // the validation loss stays tiny.
        let ds = small_dataset(0.0, 200);
        let mut sys = small_system(&ds, 5);
        inject_truth(&mut sys, &ds);
        let mut cfg = tiny_cfg(3);
        cfg.lr = 1e-6;
        let report = train_curriculum(&mut sys, &ds, &cfg).unwrap();
        assert!(
            report.final_val.total < 1e-5,
            "drifted to {:.3e}",
            report.final_val.total
        );
    }

    #[test]
    fn stage_boundary_respects_budget_fraction() {
        let m = CurriculumMode::MultiStage;
        let (s, w) = stage_weights(m, 0, 8, 20);
        assert_eq!(s, 1);
        assert!((w.gamma - 0.05).abs() < 1e-12);
        let (s, _) = stage_weights(m, 7, 8, 20);
        assert_eq!(s, 1);
        let (s, w) = stage_weights(m, 8, 8, 20);
        assert_eq!(s, 2);
        assert!((w.gamma - 0.05).abs() < 1e-12);
        let (_, w) = stage_weights(m, 9, 8, 20);
        assert!(w.gamma > 0.05 && w.gamma < 1.0, "gamma {}", w.gamma);
        let (_, w) = stage_weights(m, 11, 8, 20);
        assert!((w.gamma - 1.0).abs() < 1e-12);
        let (_, w) = stage_weights(CurriculumMode::LocalOnly, 15, 8, 20);
        assert_eq!(w.gamma, 0.0);
        let (_, w) = stage_weights(CurriculumMode::SingleStage, 0, 8, 20);
        assert!((w.gamma - 1.0).abs() < 1e-12 && (w.alpha - 0.2).abs() < 1e-12);
    }

    #[test]
    fn log_csv_round_trips_headers() {
        let dir = std::env::temp_dir().join("gridfuse_log_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.csv");
        let logs = vec![EpochLog {
            epoch: 0,
            stage: 1,
            lr: 0.01,
            train: LossBreakdown::default(),
            val: LossBreakdown::default(),
            skipped: 0,
            wall_s: 0.5,
        }];
        write_log_csv(&path, &logs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,stage,lr"));
        assert_eq!(text.lines().count(), 2);
    }
}
