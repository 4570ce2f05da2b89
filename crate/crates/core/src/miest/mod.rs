//! Mutual-information estimators: critic lower bounds, minibatch bounds
//! from a tractable Gaussian conditional, the Barber-Agakov bound, and
//! critic training with validation early stopping.

mod bounds;
mod critic;
mod plane;
mod scores;

pub use bounds::{
    ba_future_bound, batched_gaussian_bounds, cond_log_pdf_matrix, gaussian_minibatch_bounds, minibatch_bounds,
    BaBound, FutureDecoder, LinearGaussianDecoder,
};
pub use critic::{
    evaluate_critic, train_critic, Activation, CriticConfig, CriticFit, CriticObjective, EarlyStopConfig,
    EarlyStopper, Observation, PairSet, SeparableCritic, Standardizer, StopOutcome, StopReason,
};
pub use plane::{estimate_plane_point, InfoPlanePoint, PastEstimator, PlaneConfig, PointMeta};
pub use scores::{infonce, js, js_discriminator_loss, nwj, SCORE_CLAMP};
