use serde::{Deserialize, Serialize};

use super::{Gradients, NetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub adam: AdamConfig,
    /// First moments; empty for SGD.
    pub m: Vec<f64>,
    /// Second moments; empty for SGD.
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Result<Self> {
        Self::with_adam(kind, lr, AdamConfig::default(), num_params)
    }

    pub fn with_adam(kind: OptimizerKind, lr: f64, adam: AdamConfig, num_params: usize) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
        }
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => num_params,
        };
        Ok(Self {
            kind,
            lr,
            adam,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            step: 0,
        })
    }

    /// Applies one update to `theta` in place.
    pub fn apply(&mut self, theta: &mut [f64], grads: &Gradients) -> Result<()> {
        if theta.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradient entries",
                theta.len(),
                grads.len()
            )));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in theta.iter_mut().zip(&grads.values) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != theta.len() {
                    return Err(Error::Shape("Adam moments do not match parameter count".into()));
                }
                let AdamConfig { beta1, beta2, eps } = self.adam;
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for k in 0..theta.len() {
                    let g = grads.values[k];
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[k] / bc1;
                    let v_hat = self.v[k] / bc2;
                    theta[k] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Pure form of [`OptimizerState::apply`].
pub fn optimizer_update(
    params: &NetworkParams,
    grads: &Gradients,
    opt: &OptimizerState,
) -> Result<(NetworkParams, OptimizerState)> {
    let mut params = params.clone();
    let mut opt = opt.clone();
    opt.apply(params.theta_mut(), grads)?;
    Ok((params, opt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, 3).unwrap();
        let mut theta = vec![1.0, -2.0, 3.0];
        opt.apply(&mut theta, &Gradients::zeros(3)).unwrap();
        assert_eq!(theta, vec![1.0, -2.0, 3.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn sgd_scalar() {
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, 1).unwrap();
        let mut theta = vec![1.0];
        opt.apply(&mut theta, &Gradients { values: vec![2.0] }).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_has_unit_direction() {
        // Hand computation: m_hat = g, v_hat = g^2, so the step is
        // lr * g / (|g| + eps).
        let lr = 1e-3;
        let g = [3.0, -0.02, 1e-3, 250.0];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, lr, 4).unwrap();
        let mut theta = vec![0.0; 4];
        opt.apply(&mut theta, &Gradients { values: g.to_vec() }).unwrap();
        for (p, gk) in theta.iter().zip(g) {
            let expected = -lr * gk / (gk.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15);
            assert!((p.abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.1, 2).unwrap();
        let mut theta = vec![0.0; 3];
        assert!(opt.apply(&mut theta, &Gradients::zeros(3)).is_err());
        assert!(opt.apply(&mut theta, &Gradients::zeros(2)).is_err());
    }

    #[test]
    fn negative_lr_rejected() {
        assert!(OptimizerState::new(OptimizerKind::Sgd, -1.0, 1).is_err());
    }
}
