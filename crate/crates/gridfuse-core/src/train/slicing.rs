//! Random sub-trajectory sampling for rollout losses. Short windows are
//! drawn more often than long ones so early training sees cheap, stable
//! targets while long windows still anchor slow dynamics.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceTable {
    /// (window length in steps, sampling weight) pairs.
    pub entries: Vec<(usize, f64)>,
}

impl Default for SliceTable {
    fn default() -> SliceTable {
        SliceTable {
            entries: vec![(25, 0.4), (50, 0.3), (100, 0.2), (200, 0.1)],
        }
    }
}

impl SliceTable {
    pub fn validate(&self, traj_steps: usize) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("slice table is empty".into()));
        }
        let total: f64 = self.entries.iter().map(|e| e.1).sum();
        if total <= 0.0 {
            return Err(Error::Config(
                "slice weights must sum to a positive value".into(),
            ));
        }
        for &(len, w) in &self.entries {
            if len < 2 {
                return Err(Error::Config(format!(
                    "slice length {len} below minimum of 2"
                )));
            }
            if len > traj_steps {
                return Err(Error::Config(format!(
                    "slice length {len} exceeds trajectory length {traj_steps}"
                )));
            }
            if w < 0.0 {
                return Err(Error::Config("negative slice weight".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub sample: usize,
    pub start: usize,
    pub len: usize,
}

/// Seeded stream of slices over a fixed set of sample indices.
pub struct SliceStream {
    rng: ChaCha8Rng,
    table: Vec<(usize, f64)>,
    total_w: f64,
    samples: Vec<usize>,
    /// Steps per trajectory (state rows minus one).
    traj_steps: usize,
    /// Earliest admissible start (observer window warm-up).
    min_start: usize,
}

impl SliceStream {
    pub fn new(
        seed: u64,
        samples: Vec<usize>,
        traj_steps: usize,
        min_start: usize,
        table: &SliceTable,
    ) -> Result<SliceStream> {
        table.validate(traj_steps.saturating_sub(min_start))?;
        if samples.is_empty() {
            return Err(Error::Config(
                "slice stream needs at least one sample".into(),
            ));
        }
        Ok(SliceStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            table: table.entries.clone(),
            total_w: table.entries.iter().map(|e| e.1).sum(),
            samples,
            traj_steps,
            min_start,
        })
    }

    pub fn draw(&mut self) -> Slice {
        let sample = self.samples[self.rng.gen_range(0..self.samples.len())];
        let mut t = self.rng.gen_range(0.0..self.total_w);
        let mut len = self.table.last().unwrap().0;
        for &(l, w) in &self.table {
            if t < w {
                len = l;
                break;
            }
            t -= w;
        }
        let last_start = self.traj_steps - len;
        let start = self.rng.gen_range(self.min_start..=last_start);
        Slice { sample, start, len }
    }
}
