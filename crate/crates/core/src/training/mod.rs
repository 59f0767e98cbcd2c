//! Losses, optimizer, schedule, the epoch loop and gradient checking.

pub mod adamax;
pub mod checkpoint;
pub mod checks;
pub mod gradcheck;
pub mod loss;
pub mod schedule;
pub mod trainer;

pub use adamax::{AdamaxConfig, AdamaxState};
pub use checkpoint::Checkpoint;
pub use checks::{run_scope, Scope, ScopeReport};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use loss::LossWeights;
pub use schedule::Schedule;
pub use trainer::{dataset_losses, evaluate, train, EpochStats, EvalReport, LossSummary, TrainConfig, TrainOutcome};
