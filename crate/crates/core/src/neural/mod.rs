//! Neural leakage estimators: a small reverse-mode autodiff engine, the
//! conditional Bernoulli-mixture model, the vCLUB estimate and the training
//! loop, and two baselines.

pub mod baselines;
pub mod checkpoint;
pub mod cnbmm;
pub mod data;
pub mod estimate;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod train;

pub use baselines::{BaselineConfig, GaussianClub, Mine};
pub use checkpoint::Checkpoint;
pub use cnbmm::{Cnbmm, CnbmmConfig};
pub use data::{CodewordSet, LeakageData};
pub use estimate::{vclub_estimate, ConditionalModel, EpochRecord, LeakageReport, OracleModel, WithParams};
pub use tensor::{Graph, ParamSet, Scalar, Var};
pub use train::{train, Estimator, TrainOutcome, TrainSchedule};
