//! Bradley-Terry reward models: training, calibration, ensembles and
//! disagreement-based out-of-distribution signals.

mod ensemble;
mod net;
mod pairs;

pub use ensemble::{
    disagreement, disagreement_of_scores, uncertainty_zscore, weighted_diff, DisagreementMode,
    EnsembleStats, UncertaintyReference,
};
pub use net::{
    bt_loss_and_grads, bt_pair_loss, epoch_orders, pair_accuracy, param_digest, sigmoid, train_rm,
    train_rm_with_orders, FeatureScaler, RewardNet, RmConfig, RmSidecar, PROXY_ARCHITECTURE,
};
pub use pairs::{AdvFields, PairRecord, PairSource, PreferenceDataset, PreferencePair};
