//! Concept featurization, the conditional-VAE relevance encoder, the
//! per-pixel decoder and the ELBO objective.

mod featurizer;
mod network;

pub use featurizer::{
    encode_concepts, orthogonalize_concepts, ConceptField, FeaturizerConfig, RegionRaster,
    ORTHO_TOL, POOLED_DIM,
};
pub use network::{
    decode, decoder_nodes, draw_noise, elbo_loss, elbo_loss_and_grad, elbo_with_noise,
    encoder_nodes, predict, relevance_forward, ModelConfig, PolicyParams, Prediction,
    RelevanceDistribution, RelevanceMode, Sample, SIGMA_FLOOR,
};
