//! Training pipeline: normalization, window sampling, the composite loss,
//! and the two-stage curriculum.

pub mod curriculum;
pub mod loss;
pub mod normalize;
pub mod slicing;

pub use curriculum::{train_curriculum, CurriculumMode, EpochLog, TrainConfig, TrainReport};
pub use loss::{evaluate_slices, inject_truth, LearnedSystem, LossBreakdown, LossWeights};
pub use normalize::{denormalize_component, denormalize_global, normalize, Dataset, NormStats};
pub use slicing::{Slice, SliceStream, SliceTable};
