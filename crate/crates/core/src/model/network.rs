use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::featurizer::{ConceptField, FeaturizerConfig};
use crate::error::{Error, Result};
use crate::numerics::{
    focal_loss_node, gaussian_kl_node, FocalParams, Gradients, Graph, ParamSet, Tensor, Var,
};

/// Floor added to the softplus sigma head.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    /// Relevance drawn from the encoder posterior.
    Learned,
    /// Relevance pinned to the all-ones vector; the encoder is bypassed.
    FixedOnes,
}

/// Loss and forward-pass settings shared by training and scoring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub beta: f64,
    pub focal: FocalParams,
    pub relevance: RelevanceMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            beta: 0.01,
            focal: FocalParams::default(),
            relevance: RelevanceMode::Learned,
        }
    }
}

/// Relevance encoder weights `zeta`, decoder weights `phi`, frozen featurizer `psi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub zeta: ParamSet,
    pub phi: ParamSet,
    pub psi: FeaturizerConfig,
}

pub(crate) const ENC_W1: &str = "zeta.w1";
pub(crate) const ENC_B1: &str = "zeta.b1";
pub(crate) const ENC_W_MU: &str = "zeta.w_mu";
pub(crate) const ENC_B_MU: &str = "zeta.b_mu";
pub(crate) const ENC_W_SIGMA: &str = "zeta.w_sigma";
pub(crate) const ENC_B_SIGMA: &str = "zeta.b_sigma";
pub(crate) const DEC_W1: &str = "phi.w1";
pub(crate) const DEC_B1: &str = "phi.b1";
pub(crate) const DEC_W2: &str = "phi.w2";
pub(crate) const DEC_B2: &str = "phi.b2";

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-0.1..=0.1))
        .collect();
    Tensor::from_parts(rows, cols, values)
}

impl PolicyParams {
    /// Weights uniform in `[-0.1, 0.1]`, biases zero.
    pub fn init(
        concepts: usize,
        pooled_dim: usize,
        encoder_hidden: usize,
        decoder_hidden: usize,
        psi: FeaturizerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let k = concepts;
        let mut zeta = ParamSet::new();
        zeta.insert(ENC_W1, uniform(k * pooled_dim, encoder_hidden, rng))?;
        zeta.insert(ENC_B1, Tensor::zeros(1, encoder_hidden))?;
        zeta.insert(ENC_W_MU, uniform(encoder_hidden, k, rng))?;
        zeta.insert(ENC_B_MU, Tensor::zeros(1, k))?;
        zeta.insert(ENC_W_SIGMA, uniform(encoder_hidden, k, rng))?;
        zeta.insert(ENC_B_SIGMA, Tensor::zeros(1, k))?;
        let mut phi = ParamSet::new();
        phi.insert(DEC_W1, uniform(2 * k, decoder_hidden, rng))?;
        phi.insert(DEC_B1, Tensor::zeros(1, decoder_hidden))?;
        phi.insert(DEC_W2, uniform(decoder_hidden, 1, rng))?;
        phi.insert(DEC_B2, Tensor::zeros(1, 1))?;
        Ok(PolicyParams { zeta, phi, psi })
    }

    pub fn concept_count(&self) -> usize {
        self.zeta.get(ENC_B_MU).map_or(0, Tensor::cols)
    }

    pub fn sets(&self) -> [&ParamSet; 2] {
        [&self.zeta, &self.phi]
    }

    pub fn sets_mut(&mut self) -> [&mut ParamSet; 2] {
        [&mut self.zeta, &mut self.phi]
    }

    /// `theta - scale * grads` for both trainable sets.
    pub fn shifted(&self, grads: &Gradients, scale: f64) -> Result<PolicyParams> {
        Ok(PolicyParams {
            zeta: self.zeta.shifted(grads, scale)?,
            phi: self.phi.shifted(grads, scale)?,
            psi: self.psi,
        })
    }

    pub fn flat_values(&self) -> Vec<f64> {
        let mut v = self.zeta.flat_values();
        v.extend(self.phi.flat_values());
        v
    }
}

/// Posterior over the per-concept relevance vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `mu + noise * sigma`.
    pub sample: Vec<f64>,
}

fn lookup(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
}

/// Records the relevance encoder; returns `(mu, sigma)` as `1 x K` nodes.
pub fn encoder_nodes(
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    field: &ConceptField,
) -> Result<(Var, Var)> {
    let flat = Tensor::from_parts(1, field.pooled.len(), field.pooled.values().to_vec());
    let x = g.constant(flat);
    let h = g.matmul(x, lookup(vars, ENC_W1)?)?;
    let h = g.add(h, lookup(vars, ENC_B1)?)?;
    let h = g.softplus(h);
    let mu = g.matmul(h, lookup(vars, ENC_W_MU)?)?;
    let mu = g.add(mu, lookup(vars, ENC_B_MU)?)?;
    let s = g.matmul(h, lookup(vars, ENC_W_SIGMA)?)?;
    let s = g.add(s, lookup(vars, ENC_B_SIGMA)?)?;
    let s = g.softplus(s);
    let sigma = g.add_scalar(s, SIGMA_FLOOR);
    Ok((mu, sigma))
}

/// Records the per-pixel decoder; returns a `P x 1` probability column.
pub fn decoder_nodes(
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    field: &ConceptField,
    relevance: Var,
) -> Result<Var> {
    if g.value(relevance).len() != field.concept_count() {
        return Err(Error::Shape(format!(
            "relevance has {} entries for {} concepts",
            g.value(relevance).len(),
            field.concept_count()
        )));
    }
    let acts = g.constant(field.per_pixel.clone());
    let scaled = g.mul(acts, relevance)?;
    let input = g.concat_cols(&[scaled, acts])?;
    let h = g.matmul(input, lookup(vars, DEC_W1)?)?;
    let h = g.add(h, lookup(vars, DEC_B1)?)?;
    let h = g.softplus(h);
    let logit = g.matmul(h, lookup(vars, DEC_W2)?)?;
    let logit = g.add(logit, lookup(vars, DEC_B2)?)?;
    Ok(g.sigmoid(logit))
}

fn bind_all(g: &mut Graph, theta: &PolicyParams) -> Result<BTreeMap<String, Var>> {
    let mut vars = g.bind(&theta.zeta)?;
    vars.extend(g.bind(&theta.phi)?);
    Ok(vars)
}

/// Relevance posterior for `field`; `noise == None` returns `sample == mu`.
pub fn relevance_forward(
    field: &ConceptField,
    zeta: &ParamSet,
    noise: Option<&[f64]>,
) -> Result<RelevanceDistribution> {
    let mut g = Graph::new();
    let vars = g.bind(zeta)?;
    let (mu, sigma) = encoder_nodes(&mut g, &vars, field)?;
    let mu = g.value(mu).values().to_vec();
    let sigma = g.value(sigma).values().to_vec();
    let sample = match noise {
        None => mu.clone(),
        Some(eps) => {
            if eps.len() != mu.len() {
                return Err(Error::Shape("noise length differs from K".into()));
            }
            mu.iter()
                .zip(&sigma)
                .zip(eps)
                .map(|((m, s), e)| m + e * s)
                .collect()
        }
    };
    Ok(RelevanceDistribution { mu, sigma, sample })
}

/// Per-pixel target probabilities given a relevance vector.
pub fn decode(field: &ConceptField, relevance: &[f64], phi: &ParamSet) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = g.bind(phi)?;
    let r = g.constant(Tensor::row_vector(relevance.to_vec())?);
    let probs = decoder_nodes(&mut g, &vars, field, r)?;
    Ok(g.value(probs).values().to_vec())
}

/// Deterministic forward pass used for scoring (`r = mu`).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn predict(field: &ConceptField, theta: &PolicyParams, mode: RelevanceMode) -> Result<Prediction> {
    let mut g = Graph::new();
    let vars = bind_all(&mut g, theta)?;
    let k = field.concept_count();
    let (mu, sigma, r) = match mode {
        RelevanceMode::Learned => {
            let (mu, sigma) = encoder_nodes(&mut g, &vars, field)?;
            (g.value(mu).values().to_vec(), g.value(sigma).values().to_vec(), mu)
        }
        RelevanceMode::FixedOnes => {
            let ones = g.constant(Tensor::filled(1, k, 1.0));
            (vec![1.0; k], vec![1.0; k], ones)
        }
    };
    let probs = decoder_nodes(&mut g, &vars, field, r)?;
    Ok(Prediction {
        mu,
        sigma,
        probs: g.value(probs).values().to_vec(),
    })
}

/// A labelled training example.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub field: &'a ConceptField,
    pub labels: &'a [u8],
}

/// Standard-normal reparameterization noise, one `K`-vector per sample.
pub fn draw_noise(count: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn elbo_nodes(
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    batch: &[Sample<'_>],
    noise: &[Vec<f64>],
    config: &ModelConfig,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("elbo batch"));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for (sample, eps) in batch.iter().zip(noise) {
        let k = sample.field.concept_count();
        let (r, kl) = match config.relevance {
            RelevanceMode::Learned => {
                let (mu, sigma) = encoder_nodes(g, vars, sample.field)?;
                let eps = g.constant(Tensor::row_vector(eps.clone())?);
                let spread = g.mul(sigma, eps)?;
                let r = g.add(mu, spread)?;
                let kl = gaussian_kl_node(g, mu, sigma)?;
                (r, Some(kl))
            }
            RelevanceMode::FixedOnes => (g.constant(Tensor::filled(1, k, 1.0)), None),
        };
        let probs = decoder_nodes(g, vars, sample.field, r)?;
        let mut term = focal_loss_node(g, probs, sample.labels, config.focal)?;
        if let (Some(kl), true) = (kl, config.beta != 0.0) {
            let kl = g.scale(kl, config.beta);
            term = g.add(term, kl)?;
        }
        terms.push(term);
    }
    let stacked = g.concat_cols(&terms)?;
    Ok(g.mean(stacked))
}

/// ELBO loss and its gradient for explicitly supplied noise.
pub fn elbo_with_noise(
    batch: &[Sample<'_>],
    theta: &PolicyParams,
    noise: &[Vec<f64>],
    config: &ModelConfig,
) -> Result<(f64, Gradients)> {
    if noise.len() != batch.len() {
        return Err(Error::Shape("one noise vector per sample is required".into()));
    }
    if config.beta < 0.0 {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    let mut g = Graph::new();
    let vars = bind_all(&mut g, theta)?;
    let out = elbo_nodes(&mut g, &vars, batch, noise, config)?;
    let loss = g.value(out).item();
    Ok((loss, g.backward(out)?))
}

/// Mean over the batch of `focal + beta * KL`, one reparameterization draw per sample.
pub fn elbo_loss_and_grad(
    batch: &[Sample<'_>],
    theta: &PolicyParams,
    config: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("elbo batch"));
    }
    let noise = draw_noise(batch.len(), theta.concept_count(), rng);
    elbo_with_noise(batch, theta, &noise, config)
}

pub fn elbo_loss(
    batch: &[Sample<'_>],
    theta: &PolicyParams,
    config: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    elbo_loss_and_grad(batch, theta, config, rng).map(|(l, _)| l)
}
