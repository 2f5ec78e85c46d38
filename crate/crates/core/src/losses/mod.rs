//! Forecasting, distillation and adversarial losses.
//!
//! Value-level functions work on plain forecasts and are what the oracle
//! tests pin down; the `*_graph` and `*_terms` forms build the same
//! quantities on a [`Graph`](crate::autograd::Graph) for training.

mod adversarial;
mod gaussian;
mod layer_map;
mod report;

pub use adversarial::{
    batch_mean, discriminator_loss_terms, discriminator_losses, hint_generator_loss,
    hint_generator_losses, DiscTerm, HintLoss, D_CLAMP,
};
pub use gaussian::{
    gaussian_kl, nll_graph, nll_loss, outcome_kd, outcome_kd_graph, outcome_kd_losses,
    outcome_weight, outcome_weights,
};
pub use layer_map::LayerMap;
pub use report::{total_losses, DecoderLosses, DiscLoss, LossRecord, LossReport};
