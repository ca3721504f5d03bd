//! Matrix product state classifiers trained by two-site sweeps.

pub mod data;
pub mod error;
pub mod feature_map;
pub mod mps;
pub mod quadrature;
pub mod scalar;
pub mod svd;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use feature_map::{encode, map_local, EncodedInput, LocalFeatureMap, MapKind};
pub use mps::{merge_pair, split_pair, BondTensor, CanonicalMps, Direction, MpsClassifier};
pub use scalar::{Scalar, ScalarKind};
pub use svd::{svd, SvdResult, TruncParams};
pub use tensor::{contract, permute, Tensor};
pub use train::{init_from_data, sweep, train, EnvironmentCache, LocalSolver, StepScale, SweepReport, TrainConfig};
pub use toy::{
    decision_grid, kl_divergence, kl_scan, label_probabilities, random_hidden_model, sample_points, train_full_nll,
    train_full_quadratic, DecisionGrid, FullWeight, GridDistribution, KlScanConfig, KlScanResult, ToyTrainConfig,
};
