use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{Gradients, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

/// Linear warmup followed by polynomial decay towards zero.
///
/// With `total_steps == 0` the rate stays at `base_lr` after warmup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub decay_power: f64,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            warmup_steps: 0,
            total_steps: 0,
            decay_power: 1.0,
        }
    }

    /// Rate for the 1-based update number `step`.
    pub fn rate(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        if self.total_steps == 0 || self.total_steps <= self.warmup_steps {
            return self.base_lr;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let done = (step.saturating_sub(self.warmup_steps)) as f64;
        let remaining = (1.0 - done / span).max(0.0);
        self.base_lr * remaining.powf(self.decay_power)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        Self::with_kind(OptimizerKind::Sgd, LrSchedule::constant(lr))
    }

    pub fn adamw(schedule: LrSchedule, weight_decay: f64) -> Self {
        let mut s = Self::with_kind(OptimizerKind::AdamW, schedule);
        s.weight_decay = weight_decay;
        s
    }

    pub fn with_kind(kind: OptimizerKind, schedule: LrSchedule) -> Self {
        OptimizerState {
            kind,
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every set in `params`, using the gradients
    /// whose names they own. Counts as a single optimizer step.
    pub fn step(&mut self, params: &mut [&mut ParamSet], grads: &Gradients) -> Result<()> {
        if self.schedule.base_lr < 0.0 {
            return Err(Error::InvalidArgument("negative learning rate".into()));
        }
        for set in params.iter() {
            for (name, p) in set.iter() {
                if let Some(g) = grads.get(name) {
                    if !g.same_shape(p) {
                        return Err(Error::Shape(format!(
                            "gradient for `{name}` is {}x{}, parameter is {}x{}",
                            g.rows(),
                            g.cols(),
                            p.rows(),
                            p.cols()
                        )));
                    }
                }
            }
        }
        self.step += 1;
        let lr = self.schedule.rate(self.step);
        let t = self.step as i32;
        for set in params.iter_mut() {
            set.set_grads(grads)?;
            let names: Vec<String> = set.names().cloned().collect();
            for name in names {
                let Some(g) = grads.get(&name) else { continue };
                let p = set.get_mut(&name).expect("name from the same set");
                match self.kind {
                    OptimizerKind::Sgd => {
                        for (v, d) in p.values_mut().iter_mut().zip(g.values()) {
                            *v -= lr * (d + self.weight_decay * *v);
                        }
                    }
                    OptimizerKind::AdamW => {
                        let m = self
                            .first_moment
                            .entry(name.clone())
                            .or_insert_with(|| Tensor::zeros_like(g));
                        let v2 = self
                            .second_moment
                            .entry(name.clone())
                            .or_insert_with(|| Tensor::zeros_like(g));
                        let bc1 = 1.0 - self.beta1.powi(t);
                        let bc2 = 1.0 - self.beta2.powi(t);
                        let vals = p.values_mut();
                        let mv = m.values_mut();
                        let sv = v2.values_mut();
                        for i in 0..vals.len() {
                            let gi = g.values()[i];
                            mv[i] = self.beta1 * mv[i] + (1.0 - self.beta1) * gi;
                            sv[i] = self.beta2 * sv[i] + (1.0 - self.beta2) * gi * gi;
                            let m_hat = mv[i] / bc1;
                            let v_hat = sv[i] / bc2;
                            vals[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps)
                                + self.weight_decay * vals[i]);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v).unwrap()).unwrap();
        p
    }

    fn grads(v: f64) -> Gradients {
        let mut g = Gradients::new();
        g.insert("x".into(), Tensor::scalar(v).unwrap());
        g
    }

    #[test]
    fn sgd_single_step() {
        let mut p = single(0.0);
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut [&mut p], &grads(1.0)).unwrap();
        assert!((p.get("x").unwrap().item() + 0.1).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        for mut opt in [
            OptimizerState::sgd(0.5),
            OptimizerState::adamw(LrSchedule::constant(0.5), 0.0),
        ] {
            let mut p = single(1.25);
            opt.step(&mut [&mut p], &grads(0.0)).unwrap();
            assert_eq!(p.get("x").unwrap().item(), 1.25);
        }
    }

    #[test]
    fn adamw_first_step_is_lr_times_sign() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        for g in [3.0, -0.02] {
            let mut p = single(0.0);
            let mut opt = OptimizerState::adamw(LrSchedule::constant(0.01), 0.0);
            opt.step(&mut [&mut p], &grads(g)).unwrap();
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.get("x").unwrap().item() - expected).abs() < 1e-15);
            assert!((p.get("x").unwrap().item().abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = single(0.0);
        let mut g = Gradients::new();
        g.insert("x".into(), Tensor::zeros(2, 1));
        let mut opt = OptimizerState::sgd(0.1);
        assert!(opt.step(&mut [&mut p], &g).is_err());
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn warmup_then_polynomial_decay() {
        let s = LrSchedule {
            base_lr: 1.0,
            warmup_steps: 4,
            total_steps: 12,
            decay_power: 2.0,
        };
        assert_eq!(s.rate(1), 0.25);
        assert_eq!(s.rate(4), 1.0);
        assert_eq!(s.rate(8), 0.25);
        assert_eq!(s.rate(12), 0.0);
        assert_eq!(s.rate(40), 0.0);
        assert_eq!(LrSchedule::constant(0.3).rate(1000), 0.3);
    }
}
