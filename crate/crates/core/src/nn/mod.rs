//! Dense-network substrate with analytic gradients.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_fn, GradCheck};
pub use layers::{
    sigmoid,
    effective_groups, Activation, Block, BlockCache, Dense, GroupNorm, Mode, ParamKind, Parameterized, Sequential,
    SequentialCache,
};
pub use loss::{
    delta_from_iqr, huber_grad, modified_huber, pinball_grad, pinball_loss, quantile_linear, Loss, DELTA_MIN,
};
pub use optim::{AdamW, AdamWConfig, StepSchedule};
