//! Central finite-difference verification of the tape's analytic gradients.

use std::collections::BTreeMap;

use super::tape::{Tape, ValId};
use super::{MathError, ParameterSet};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter and coordinate where the worst error occurred.
    pub worst: Option<(String, usize)>,
    /// (analytic, numeric) gradient at the worst coordinate.
    pub worst_values: (f64, f64),
    pub per_param: BTreeMap<String, f64>,
}

/// Checks the analytic gradient of a scalar function of the parameters
/// against central differences, coordinate by coordinate.
///
/// `build` must deterministically construct the loss on the given tape;
/// two evaluations at the same point must agree bit-for-bit. Relative
/// error is |a - n| / max(1e-8, |a| + |n|).
pub fn grad_check<F>(
    params: &ParameterSet,
    build: F,
    eps: f64,
) -> Result<GradCheckReport, MathError>
where
    F: Fn(&ParameterSet, &mut Tape) -> Result<ValId, MathError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(MathError::BadEpsilon { eps });
    }

    let eval = |p: &ParameterSet| -> Result<f64, MathError> {
        let mut tape = Tape::new();
        let loss = build(p, &mut tape)?;
        tape.scalar(loss)
    };

    let v1 = eval(params)?;
    let v2 = eval(params)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(MathError::NonDeterministicFunction);
    }

    let mut tape = Tape::new();
    let loss = build(params, &mut tape)?;
    let analytic = tape.backward(loss)?.param_grads(&tape);

    let mut work = params.clone();
    let mut max_rel = 0.0;
    let mut worst = None;
    let mut worst_values = (0.0, 0.0);
    let mut per_param = BTreeMap::new();

    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let len = params.get(&name).unwrap().value.len();
        let mut param_max = 0.0_f64;
        for k in 0..len {
            let orig = work.get(&name).unwrap().value.data()[k];
            work.get_mut(&name).unwrap().value.data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(&name).unwrap().value.data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(&name).unwrap().value.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name).map(|g| g.data()[k]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / (1e-8_f64).max(a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = Some((name.clone(), k));
                worst_values = (a, numeric);
            }
            param_max = param_max.max(rel);
        }
        per_param.insert(name, param_max);
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        worst,
        worst_values,
        per_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnmath::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn quadratic_bowl_self_test() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        let report = grad_check(
            &params,
            |p, tape| {
                let x = tape.param(p, "x")?;
                let sq = tape.mul(x, x)?;
                Ok(tape.sum_vec(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-8, "err {}", report.max_rel_err);
    }

    #[test]
    fn composite_expression_passes() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut params = ParameterSet::new();
        params.add_matrix("m", 3, 4, &mut rng).unwrap();
        params.insert(
            "v",
            Tensor::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        )
        .unwrap();
        let report = grad_check(
            &params,
            |p, tape| {
                let m = tape.param(p, "m")?;
                let v = tape.param(p, "v")?;
                let y = tape.matvec(m, v)?;
                let s = tape.softmax(y)?;
                let t = tape.tanh(y);
                let d = tape.dot(s, t)?;
                let lsm = tape.log_softmax(y)?;
                let pick = tape.index(lsm, 1)?;
                tape.add(d, pick)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-6, "err {}", report.max_rel_err);
    }

    #[test]
    fn untouched_parameter_checks_as_zero() {
        let mut params = ParameterSet::new();
        params.insert("used", Tensor::vector(vec![1.0, 2.0])).unwrap();
        params.insert("unused", Tensor::vector(vec![5.0])).unwrap();
        let report = grad_check(
            &params,
            |p, tape| {
                let x = tape.param(p, "used")?;
                let sq = tape.mul(x, x)?;
                Ok(tape.sum_vec(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.per_param["unused"] <= 1e-8);
    }

    #[test]
    fn bad_epsilon_rejected() {
        let params = ParameterSet::new();
        assert!(matches!(
            grad_check(&params, |_, tape| Ok(tape.constant_scalar(0.0)), 1e-2).unwrap_err(),
            MathError::BadEpsilon { .. }
        ));
    }

    #[test]
    fn nondeterminism_detected() {
        use std::cell::Cell;
        let counter = Cell::new(0.0_f64);
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::vector(vec![1.0])).unwrap();
        let err = grad_check(
            &params,
            |p, tape| {
                counter.set(counter.get() + 1.0);
                let x = tape.param(p, "x")?;
                let noise = tape.constant_scalar(counter.get());
                let s = tape.sum_vec(x);
                tape.mul(s, noise)
            },
            1e-5,
        )
        .unwrap_err();
        assert_eq!(err, MathError::NonDeterministicFunction);
    }
}
