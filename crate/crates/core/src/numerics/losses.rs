use serde::{Deserialize, Serialize};

use super::autodiff::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clipped into `[PROB_CLIP, 1 - PROB_CLIP]` before any log.
pub const PROB_CLIP: f64 = 1e-6;

/// Pixel label excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 2;

/// `KL(N(mu, diag(sigma^2)) || N(0, I))`.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape("mu and sigma lengths differ".into()));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}")));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum::<f64>()
        .max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalLoss {
    pub value: f64,
    /// Set when no pixel carried a 0/1 label.
    pub fully_masked: bool,
}

fn focal_term(p: f64, label: u8, params: FocalParams) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let (pt, at) = if label == 1 {
        (p, params.alpha)
    } else {
        (1.0 - p, 1.0 - params.alpha)
    };
    -at * (1.0 - pt).powf(params.gamma) * pt.ln()
}

/// Mean pixelwise focal loss over pixels labelled 0 or 1.
pub fn focal_loss(probs: &[f64], labels: &[u8], params: FocalParams) -> Result<FocalLoss> {
    if probs.len() != labels.len() {
        return Err(Error::Shape("probs and labels lengths differ".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (&p, &y) in probs.iter().zip(labels) {
        if y == IGNORE_LABEL {
            continue;
        }
        total += focal_term(p, y, params);
        n += 1;
    }
    if n == 0 {
        log::warn!("focal loss evaluated on a fully masked label map");
        return Ok(FocalLoss {
            value: 0.0,
            fully_masked: true,
        });
    }
    Ok(FocalLoss {
        value: total / n as f64,
        fully_masked: false,
    })
}

/// Records the focal loss of a `P x 1` probability column on `graph`.
pub fn focal_loss_node(
    graph: &mut Graph,
    probs: Var,
    labels: &[u8],
    params: FocalParams,
) -> Result<Var> {
    let p = graph.value(probs).len();
    if p != labels.len() {
        return Err(Error::Shape("probs and labels lengths differ".into()));
    }
    let valid = labels.iter().filter(|&&y| y != IGNORE_LABEL).count();
    if valid == 0 {
        log::warn!("focal loss evaluated on a fully masked label map");
        return Ok(graph.constant(Tensor::from_parts(1, 1, vec![0.0])));
    }
    let rows = graph.value(probs).rows();
    let cols = graph.value(probs).cols();
    // p_t = (1 - y) + (2y - 1) p ; alpha_t and the validity mask fold into one weight
    let mut slope = Vec::with_capacity(p);
    let mut offset = Vec::with_capacity(p);
    let mut weight = Vec::with_capacity(p);
    for &y in labels {
        match y {
            1 => {
                slope.push(1.0);
                offset.push(0.0);
                weight.push(-params.alpha / valid as f64);
            }
            0 => {
                slope.push(-1.0);
                offset.push(1.0);
                weight.push(-(1.0 - params.alpha) / valid as f64);
            }
            _ => {
                slope.push(0.0);
                offset.push(1.0);
                weight.push(0.0);
            }
        }
    }
    let clipped = graph.clamp(probs, PROB_CLIP, 1.0 - PROB_CLIP);
    let slope = graph.constant(Tensor::from_parts(rows, cols, slope));
    let offset = graph.constant(Tensor::from_parts(rows, cols, offset));
    let weight = graph.constant(Tensor::from_parts(rows, cols, weight));
    let scaled = graph.mul(clipped, slope)?;
    let pt = graph.add(scaled, offset)?;
    let log_pt = graph.log(pt)?;
    let one_minus = graph.scale(pt, -1.0);
    let one_minus = graph.add_scalar(one_minus, 1.0);
    let modulating = graph.powf(one_minus, params.gamma)?;
    let term = graph.mul(modulating, log_pt)?;
    let weighted = graph.mul(term, weight)?;
    Ok(graph.sum(weighted))
}

/// Records `sum_k 0.5 (mu_k^2 + sigma_k^2 - 1 - 2 ln sigma_k)`.
pub fn gaussian_kl_node(graph: &mut Graph, mu: Var, sigma: Var) -> Result<Var> {
    let k = graph.value(mu).len();
    let mu2 = graph.square(mu);
    let s2 = graph.square(sigma);
    let ln_s = graph.log(sigma)?;
    let ln_s = graph.scale(ln_s, -2.0);
    let a = graph.add(mu2, s2)?;
    let a = graph.add(a, ln_s)?;
    let total = graph.sum(a);
    let total = graph.add_scalar(total, -(k as f64));
    Ok(graph.scale(total, 0.5))
}
