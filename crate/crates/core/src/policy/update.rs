use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{elbo_loss_and_grad, ModelConfig, PolicyParams, Sample};
use crate::numerics::OptimizerState;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaLosses {
    pub inner: f64,
    /// `None` when the test split was empty and the outer step was skipped.
    pub outer: Option<f64>,
}

/// First-order meta step.
///
/// The inner step adapts `theta' = theta - eta * grad L(train; theta)`; the
/// gradient of `L(test; theta')` is then applied to `theta` through `opt`.
pub fn meta_update(
    theta: &mut PolicyParams,
    opt: &mut OptimizerState,
    train: &[Sample<'_>],
    test: &[Sample<'_>],
    eta: f64,
    config: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<MetaLosses> {
    if train.is_empty() {
        return Err(Error::Empty("meta-update train split"));
    }
    let (inner, inner_grads) = elbo_loss_and_grad(train, theta, config, rng)?;
    if test.is_empty() {
        return Ok(MetaLosses { inner, outer: None });
    }
    let adapted = theta.shifted(&inner_grads, eta)?;
    let (outer, outer_grads) = elbo_loss_and_grad(test, &adapted, config, rng)?;
    opt.step(&mut theta.sets_mut(), &outer_grads)?;
    Ok(MetaLosses {
        inner,
        outer: Some(outer),
    })
}

/// Single optimizer step on the most recent observation; returns its loss before the step.
pub fn online_update(
    theta: &mut PolicyParams,
    opt: &mut OptimizerState,
    sample: Sample<'_>,
    config: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (loss, grads) = elbo_loss_and_grad(&[sample], theta, config, rng)?;
    opt.step(&mut theta.sets_mut(), &grads)?;
    Ok(loss)
}
