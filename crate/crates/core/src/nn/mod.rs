//! Feed-forward surrogate for the accumulated fatigue life `sum_eta` of a
//! two-stage scenario, trained with a physics-augmented loss.

pub mod loss;
pub mod model;
pub mod network;
pub mod train;

use thiserror::Error;

pub use loss::{LossComponents, LossWeights};
pub use model::{Scaler, SurrogateModel};
pub use network::{Activation, Network, NetworkConfig};
pub use train::{r2_score, train, TrainingConfig, TrainingHistory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("model file version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("R² is undefined: targets have zero variance or too few points")]
    ZeroVariance,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss at epoch {epoch}: {loss:?}")]
    NonFiniteLoss { epoch: usize, loss: LossComponents },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}
