//! RMSProp with optional global-norm gradient clipping.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::{MathError, ParameterSet};

#[derive(Debug, Clone, Copy)]
pub struct RmsPropConfig {
    pub lr: f64,
    /// Squared-gradient decay rho.
    pub rho: f64,
    pub eps: f64,
    /// Global-norm clip threshold; None disables clipping.
    pub clip: Option<f64>,
}

impl RmsPropConfig {
    pub fn with_lr(lr: f64) -> Self {
        RmsPropConfig {
            lr,
            rho: 0.9,
            eps: 1e-8,
            clip: None,
        }
    }
}

/// One optimizer step: s <- rho s + (1-rho) g^2; theta <- theta - lr g/(sqrt(s)+eps).
///
/// Parameters absent from `grads` see a zero gradient: their value is
/// unchanged and their accumulator decays by rho. Gradient names that match
/// no parameter, or mismatched shapes, are errors.
pub fn rmsprop_step(
    params: &mut ParameterSet,
    grads: &BTreeMap<String, Tensor>,
    cfg: &RmsPropConfig,
) -> Result<(), MathError> {
    for name in grads.keys() {
        if params.get(name).is_none() {
            return Err(MathError::UnknownParameter { name: name.clone() });
        }
    }
    let scale = match cfg.clip {
        Some(limit) => {
            let sq: f64 = grads.values().flat_map(|g| g.data()).map(|v| v * v).sum();
            let norm = sq.sqrt();
            if norm > limit {
                limit / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    for (name, param) in params.iter_mut() {
        if let Some(g) = grads.get(name) {
            if g.shape() != param.value.shape() {
                return Err(MathError::ShapeMismatch {
                    context: format!(
                        "gradient for {name}: {:?} vs parameter {:?}",
                        g.shape(),
                        param.value.shape()
                    ),
                });
            }
            let accum = param.accum.data_mut();
            for (k, gv) in g.data().iter().enumerate() {
                let gv = gv * scale;
                accum[k] = cfg.rho * accum[k] + (1.0 - cfg.rho) * gv * gv;
            }
            let accum = param.accum.data().to_vec();
            let value = param.value.data_mut();
            for (k, gv) in g.data().iter().enumerate() {
                let gv = gv * scale;
                value[k] -= cfg.lr * gv / (accum[k].sqrt() + cfg.eps);
            }
        } else {
            for s in param.accum.data_mut() {
                *s *= cfg.rho;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vec![v])).unwrap();
        p
    }

    #[test]
    fn first_step_matches_hand_arithmetic() {
        let mut params = one_param(0.0);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![1.0]));
        let cfg = RmsPropConfig {
            lr: 1e-4,
            rho: 0.9,
            eps: 1e-8,
            clip: None,
        };
        rmsprop_step(&mut params, &grads, &cfg).unwrap();
        let p = params.get("w").unwrap();
        assert!((p.accum.data()[0] - 0.1).abs() < 1e-15);
        let expected = -1e-4 / (0.1_f64.sqrt() + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let mut params = one_param(3.5);
        params.get_mut("w").unwrap().accum = Tensor::vector(vec![0.4]);
        let cfg = RmsPropConfig::with_lr(1e-2);
        rmsprop_step(&mut params, &BTreeMap::new(), &cfg).unwrap();
        let p = params.get("w").unwrap();
        assert_eq!(p.value.data()[0], 3.5);
        assert!((p.accum.data()[0] - 0.36).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let g = 0.7;
        let (lr, rho, eps) = (1e-3, 0.9, 1e-8);
        let mut params = one_param(1.0);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![g]));
        let cfg = RmsPropConfig {
            lr,
            rho,
            eps,
            clip: None,
        };
        rmsprop_step(&mut params, &grads, &cfg).unwrap();
        rmsprop_step(&mut params, &grads, &cfg).unwrap();

        // Hand-unrolled recurrence.
        let s1 = (1.0 - rho) * g * g;
        let t1 = 1.0 - lr * g / (s1.sqrt() + eps);
        let s2 = rho * s1 + (1.0 - rho) * g * g;
        let t2 = t1 - lr * g / (s2.sqrt() + eps);

        let p = params.get("w").unwrap();
        assert_eq!(p.value.data()[0], t2);
        assert_eq!(p.accum.data()[0], s2);
    }

    #[test]
    fn unknown_gradient_name_rejected() {
        let mut params = one_param(0.0);
        let mut grads = BTreeMap::new();
        grads.insert("nope".to_string(), Tensor::vector(vec![1.0]));
        assert!(matches!(
            rmsprop_step(&mut params, &grads, &RmsPropConfig::with_lr(1e-3)).unwrap_err(),
            MathError::UnknownParameter { .. }
        ));
    }

    #[test]
    fn clip_rescales_large_gradients() {
        let mut params = one_param(0.0);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![10.0]));
        let cfg = RmsPropConfig {
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-8,
            clip: Some(1.0),
        };
        rmsprop_step(&mut params, &grads, &cfg).unwrap();
        // Clipped gradient is exactly 1.0, so s = 0.1.
        assert!((params.get("w").unwrap().accum.data()[0] - 0.1).abs() < 1e-15);
    }
}
