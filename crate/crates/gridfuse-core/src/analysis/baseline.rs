//! Whole-system baseline: a single conditioned model of the full state
//! vector with no device decomposition and no interface matrix, trained on
//! nothing but the fused-trajectory MSE. Exists to quantify what the
//! decomposition buys.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamState, CosineSchedule};
use crate::error::{Error, Result};
use crate::fusion::{Frame, GlobalModel, GlobalVars, Provenance};
use crate::nn::{accumulate_grads, loss_and_grads, HeadInit, Mlp, ParamStore, Session};
use crate::tensor::Tensor;
use crate::train::normalize::{denormalize_global, Dataset};
use crate::train::slicing::{Slice, SliceStream, SliceTable};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonoConfig {
    pub epochs: usize,
    pub slices_per_epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub table: SliceTable,
    pub val_slices: usize,
    pub jobs: usize,
    pub max_rollbacks: usize,
}

impl MonoConfig {
    pub fn quick(epochs: usize, seed: u64) -> MonoConfig {
        MonoConfig {
            epochs,
            slices_per_epoch: 32,
            batch: 8,
            lr: 2e-2,
            seed,
            hidden: 32,
            table: SliceTable::default(),
            val_slices: 16,
            jobs: rayon::current_num_threads(),
            max_rollbacks: 3,
        }
    }
}

/// One conditioned affine system over the whole state vector.
#[derive(Debug, Clone)]
pub struct MonoModel {
    pub store: ParamStore,
    a_net: Mlp,
    b_net: Mlp,
    pub n: usize,
    pub cond_dim: usize,
}

impl MonoModel {
    pub fn new(n: usize, cond_dim: usize, hidden: usize, seed: u64) -> MonoModel {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut neg_eye = vec![0.0; n * n];
        for i in 0..n {
            neg_eye[i * n + i] = -1.0;
        }
        let a_net = Mlp::new(
            &mut store,
            "mono.a",
            &[cond_dim, hidden, hidden, n * n],
            HeadInit::Const(neg_eye),
            &mut rng,
        );
        let b_net = Mlp::new(
            &mut store,
            "mono.b",
            &[cond_dim, hidden, hidden, n],
            HeadInit::Zero,
            &mut rng,
        );
        MonoModel {
            store,
            a_net,
            b_net,
            n,
            cond_dim,
        }
    }

    /// Normalized-frame system matrix at one normalized condition vector.
    pub fn global_normalized(&self, cond_n: &Tensor) -> GlobalModel {
        GlobalModel {
            a_sys: self
                .a_net
                .forward_plain(&self.store, cond_n)
                .reshaped(vec![self.n, self.n]),
            b_sys: self.b_net.forward_plain(&self.store, cond_n),
            frame: Frame::Normalized,
            provenance: Provenance::Learned,
        }
    }

    /// Physical-frame prediction at a raw condition vector.
    pub fn predict(&self, ds: &Dataset, cond_raw: &[f64]) -> Result<GlobalModel> {
        let cond_n = ds
            .stats
            .cond
            .normalize_vec(&Tensor::vector(cond_raw.to_vec()));
        denormalize_global(&self.global_normalized(&cond_n), &ds.stats)
    }

    fn slice_loss(&self, sess: &mut Session, ds: &Dataset, sl: Slice) -> Result<crate::tape::Var> {
        let ns = &ds.samples[sl.sample];
        let dt = ds.raw.samples[sl.sample].traj.dt;
        let cond = sess.tape.leaf(ns.cond.clone());
        let av = self.a_net.forward(sess, cond);
        let a = sess.tape.reshape(av, vec![self.n, self.n]);
        let b = self.b_net.forward(sess, cond);
        let g = GlobalVars { a_sys: a, b_sys: b };
        let row =
            |r: usize| Tensor::vector(ns.states.data()[r * self.n..(r + 1) * self.n].to_vec());
        let x0 = sess.tape.leaf(row(sl.start));
        let states = crate::fusion::global_rollout_tape(&mut sess.tape, g, x0, sl.len - 1, dt)?;
        let pred = sess.tape.concat_vec(&states);
        let mut target = Vec::with_capacity(sl.len * self.n);
        for r in sl.start..sl.start + sl.len {
            target.extend_from_slice(&ns.states.data()[r * self.n..(r + 1) * self.n]);
        }
        let truth = sess.tape.leaf(Tensor::vector(target));
        let res = sess.tape.sub(pred, truth);
        let sq = sess.tape.sq_sum(res);
        Ok(sess.tape.scale(sq, 1.0 / (sl.len * self.n) as f64))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonoResult {
    pub val_history: Vec<f64>,
    pub final_val: f64,
    pub epochs_to_converge: usize,
    pub rollbacks: usize,
    pub wall_s: f64,
}

/// First epoch (1-based) whose validation loss is already within twice the
/// final validation loss; measures how quickly a run settles.
pub fn epochs_to_converge(vals: &[f64]) -> usize {
    let last = *vals.last().expect("empty validation history");
    vals.iter()
        .position(|&v| v <= 2.0 * last)
        .map(|i| i + 1)
        .unwrap_or(vals.len())
}

pub fn train_monolithic(ds: &Dataset, cfg: &MonoConfig) -> Result<(MonoModel, MonoResult)> {
    let n = ds.samples[0].states.cols();
    let mut model = MonoModel::new(n, ds.raw.cond_dim(), cfg.hidden, cfg.seed);
    let traj_steps = ds.raw.samples[0].traj.states.rows() - 1;
    let steps_per_epoch = (cfg.slices_per_epoch / cfg.batch).max(1);
    let schedule = CosineSchedule {
        lr0: cfg.lr,
        floor_frac: 0.01,
        total_steps: (cfg.epochs * steps_per_epoch) as u64,
    };
    let mut val_stream = SliceStream::new(
        cfg.seed ^ 0x00ba5e,
        ds.test_idx.clone(),
        traj_steps,
        0,
        &cfg.table,
    )?;
    let val_set: Vec<Slice> = (0..cfg.val_slices).map(|_| val_stream.draw()).collect();

    let started = std::time::Instant::now();
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut lr_scale = 1.0;
    let mut rollbacks = 0usize;
    let mut snapshot = (model.store.clone(), adam.clone());
    let mut val_history = Vec::with_capacity(cfg.epochs);

    let mut epoch = 0usize;
    while epoch < cfg.epochs {
        let mut stream = SliceStream::new(
            cfg.seed.wrapping_add(epoch as u64),
            ds.train_idx.clone(),
            traj_steps,
            0,
            &cfg.table,
        )?;
        let mut failed = false;
        for s in 0..steps_per_epoch {
            let batch: Vec<Slice> = (0..cfg.batch).map(|_| stream.draw()).collect();
            let lr_now = lr_scale * schedule.lr((epoch * steps_per_epoch + s) as u64);
            let eval = |&sl: &Slice| -> Result<Option<(f64, Vec<Tensor>)>> {
                match loss_and_grads(&model.store, |sess| model.slice_loss(sess, ds, sl)) {
                    Ok(r) => Ok(Some(r)),
                    Err(Error::Divergence { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            };
            let results: Vec<Option<(f64, Vec<Tensor>)>> = if cfg.jobs > 1 {
                batch.par_iter().map(eval).collect::<Result<_>>()?
            } else {
                batch.iter().map(eval).collect::<Result<_>>()?
            };
            let mut acc: Vec<Tensor> = Vec::new();
            let mut used = 0usize;
            let mut finite = true;
            for r in results.into_iter().flatten() {
                if !r.0.is_finite() {
                    finite = false;
                    break;
                }
                accumulate_grads(&mut acc, &r.1);
                used += 1;
            }
            if !finite || used == 0 {
                failed = true;
                break;
            }
            let inv = 1.0 / used as f64;
            for g in &mut acc {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            if adam.step(&mut model.store, &acc, lr_now).is_err() {
                failed = true;
                break;
            }
        }
        if failed {
            rollbacks += 1;
            if rollbacks > cfg.max_rollbacks {
                return Err(Error::NonFinite {
                    context: format!("baseline training diverged {rollbacks} times"),
                });
            }
            let (st, ad) = snapshot.clone();
            model.store = st;
            adam = ad;
            lr_scale *= 0.5;
            continue;
        }
        // Validation: mean loss over the fixed windows, diverged ones at a
        // penalty value so a blow-up cannot look like convergence.
        let mut total = 0.0;
        for &sl in &val_set {
            let mut sess = Session::open(&model.store);
            match model.slice_loss(&mut sess, ds, sl) {
                Ok(v) => total += sess.tape.value(v).scalar_value(),
                Err(Error::Divergence { .. }) => total += 1e6,
                Err(e) => return Err(e),
            }
        }
        val_history.push(total / val_set.len() as f64);
        snapshot = (model.store.clone(), adam.clone());
        epoch += 1;
    }
    let final_val = *val_history.last().unwrap();
    let result = MonoResult {
        epochs_to_converge: epochs_to_converge(&val_history),
        val_history,
        final_val,
        rollbacks,
        wall_s: started.elapsed().as_secs_f64(),
    };
    Ok((model, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dataset::{generate_dataset, DatasetConfig};
    use crate::grid::two_machine_three_bus;
    use crate::train::normalize::normalize;

    fn tiny() -> Dataset {
        let grid = two_machine_three_bus();
        let dcfg = DatasetConfig {
            n_samples: 6,
            steps: 150,
            ..DatasetConfig::benchmark(&grid.name, 6, 41)
        };
        normalize(
            generate_dataset(&grid, &dcfg).unwrap(),
            vec![true, true],
            0.8,
        )
        .unwrap()
    }

    #[test]
    fn short_baseline_run_improves() {
        let ds = tiny();
        let cfg = MonoConfig {
            slices_per_epoch: 8,
            batch: 4,
            val_slices: 4,
            table: SliceTable {
                entries: vec![(25, 1.0)],
            },
            ..MonoConfig::quick(10, 3)
        };
        let (model, result) = train_monolithic(&ds, &cfg).unwrap();
        assert_eq!(result.val_history.len(), 10);
        assert!(result.final_val < result.val_history[0]);
        assert!(result.epochs_to_converge >= 1);
        let g = model.predict(&ds, &ds.raw.samples[0].cond).unwrap();
        assert_eq!(g.a_sys.rows(), 4);
        assert_eq!(g.frame, Frame::Physical);
    }

    #[test]
    fn convergence_epoch_definition() {
        assert_eq!(epochs_to_converge(&[8.0, 4.0, 1.9, 1.2, 1.0]), 3);
        assert_eq!(epochs_to_converge(&[1.0]), 1);
        assert_eq!(epochs_to_converge(&[10.0, 10.0, 1.0]), 3);
    }
}
