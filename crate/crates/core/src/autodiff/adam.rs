use serde::{Deserialize, Serialize};

use super::tensor::TensorMap;
use super::AutodiffError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        let ok = self.lr > 0.0
            && self.eps > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(AutodiffError::InvalidHyperparameter(format!("{self:?}")))
        }
    }
}

/// Moment accumulators for a set of named parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: TensorMap,
    v: TensorMap,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self, AutodiffError> {
        config.validate()?;
        Ok(Self { config, step: 0, m: TensorMap::new(), v: TensorMap::new() })
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `param` in place.
///
/// `step` is the 1-based index of this update. Elements whose gradient is exactly
/// zero are left untouched, moments included, so a zero gradient is a fixed point
/// whatever the accumulated state.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamConfig) {
    let t = step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        if g == 0.0 {
            continue;
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Applies one Adam step to every parameter that has a gradient.
///
/// Validation happens before anything is modified: on error both `params` and
/// `state` are unchanged.
pub fn adam_step(params: &mut TensorMap, grads: &TensorMap, state: &mut AdamState) -> Result<(), AutodiffError> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(AutodiffError::GradientShape {
                name: name.clone(),
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        if let Some(m) = state.m.get(name) {
            if m.shape() != p.shape() {
                return Err(AutodiffError::GradientShape {
                    name: name.clone(),
                    param: p.shape().to_vec(),
                    grad: m.shape().to_vec(),
                });
            }
        }
        if !g.all_finite() {
            return Err(AutodiffError::NonFiniteParameterGradient(name.clone()));
        }
    }
    state.step += 1;
    let cfg = state.config;
    for (name, g) in grads {
        let p = params.get_mut(name).expect("validated above");
        let m = state.m.entry(name.clone()).or_insert_with(|| p.with_same_shape(vec![0.0; p.len()]));
        let v = state.v.entry(name.clone()).or_insert_with(|| p.with_same_shape(vec![0.0; p.len()]));
        adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), state.step, &cfg);
    }
    Ok(())
}
