use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. `step` is 1-based.
///
/// Moments are kept at `f32`, like the parameters; the update itself is
/// evaluated in `f64`.
pub fn adam_update(params: &mut [f32], grads: &[f64], m: &mut [f32], v: &mut [f32], lr: f64, cfg: &AdamConfig, step: u64) {
    assert!(step >= 1, "Adam step index is 1-based");
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), m.len());
    assert_eq!(params.len(), v.len());
    let t = step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let mi = cfg.beta1 * f64::from(m[i]) + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * f64::from(v[i]) + (1.0 - cfg.beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = lr * (mi / bias1) / ((vi / bias2).sqrt() + cfg.epsilon);
        params[i] = (f64::from(params[i]) - update) as f32;
    }
}
