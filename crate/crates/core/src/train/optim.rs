//! SGD with momentum and L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }
}

/// `v <- momentum * v - lr * (g + decay * w); w <- w + v`, elementwise.
pub fn sgd_step(w: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, momentum: f64, decay: f64) {
    debug_assert!(w.len() == v.len() && w.len() == g.len());
    for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = momentum * *vi - lr * (gi + decay * *wi);
        *wi += *vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_by_hand() {
        let (mut w, mut v) = ([2.0], [0.0]);
        sgd_step(&mut w, &mut v, &[0.5], 0.1, 0.9, 5e-4);
        let expected_v = -0.1 * (0.5 + 5e-4 * 2.0);
        assert_eq!(v[0], expected_v);
        assert_eq!(w[0], 2.0 + expected_v);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut w, mut v) = ([0.0], [0.0]);
        sgd_step(&mut w, &mut v, &[1.0], 1.0, 0.5, 0.0);
        sgd_step(&mut w, &mut v, &[1.0], 1.0, 0.5, 0.0);
        assert_eq!(v[0], -1.5);
        assert_eq!(w[0], -2.5);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: SgdConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, SgdConfig { momentum: 0.9, weight_decay: 5e-4 });
        assert!(SgdConfig { momentum: 1.0, weight_decay: 0.0 }.validate().is_err());
        assert!(SgdConfig { momentum: 0.5, weight_decay: -1.0 }.validate().is_err());
        assert!(serde_json::from_str::<SgdConfig>(r#"{"nesterov": true}"#).is_err());
    }
}
