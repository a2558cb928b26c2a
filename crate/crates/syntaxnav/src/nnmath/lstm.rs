//! The LSTM cell primitive used by the sequence encoder and the decoder.
//!
//! Gate blocks are stacked in the fixed order i, f, o, g inside `w_x`
//! [4H x X], `w_h` [4H x H] and `b` [4H].

use rand::Rng;

use super::tape::{Tape, ValId};
use super::{MathError, ParameterSet};

#[derive(Debug, Clone, Copy)]
pub struct LstmParamIds {
    pub w_x: ValId,
    pub w_h: ValId,
    pub b: ValId,
}

/// Registers `prefix.w_x`, `prefix.w_h`, `prefix.b` for a cell with the
/// given input and hidden widths.
pub fn register_lstm(
    params: &mut ParameterSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<(), MathError> {
    params.add_matrix(&format!("{prefix}.w_x"), 4 * hidden, input, rng)?;
    params.add_matrix(&format!("{prefix}.w_h"), 4 * hidden, hidden, rng)?;
    params.add_bias(&format!("{prefix}.b"), 4 * hidden)
}

/// Leases a registered cell's parameters onto a tape.
pub fn lease_lstm(
    tape: &mut Tape,
    params: &ParameterSet,
    prefix: &str,
) -> Result<LstmParamIds, MathError> {
    Ok(LstmParamIds {
        w_x: tape.param(params, &format!("{prefix}.w_x"))?,
        w_h: tape.param(params, &format!("{prefix}.w_h"))?,
        b: tape.param(params, &format!("{prefix}.b"))?,
    })
}

/// One LSTM step: returns (h', c').
///
/// i = sigma(Wx_i x + Wh_i h + b_i), likewise f and o; g = tanh(...);
/// c' = f . c + i . g; h' = o . tanh(c').
pub fn lstm_cell(
    tape: &mut Tape,
    x: ValId,
    h: ValId,
    c: ValId,
    p: &LstmParamIds,
) -> Result<(ValId, ValId), MathError> {
    let hidden = tape.value(c).len();
    let gx = tape.matvec(p.w_x, x)?;
    let gh = tape.matvec(p.w_h, h)?;
    let pre0 = tape.add(gx, gh)?;
    let pre = tape.add(pre0, p.b)?;
    if tape.value(pre).len() != 4 * hidden {
        return Err(MathError::ShapeMismatch {
            context: format!(
                "lstm_cell: gate stack width {} != 4 x hidden {}",
                tape.value(pre).len(),
                hidden
            ),
        });
    }
    let i_pre = tape.slice(pre, 0, hidden)?;
    let f_pre = tape.slice(pre, hidden, hidden)?;
    let o_pre = tape.slice(pre, 2 * hidden, hidden)?;
    let g_pre = tape.slice(pre, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let c_tanh = tape.tanh(c_new);
    let h_new = tape.mul(o, c_tanh)?;
    Ok((h_new, c_new))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnmath::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Straight-line reference formula, independent of the tape path.
    fn reference_cell(
        w_x: &[f64],
        w_h: &[f64],
        b: &[f64],
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hidden = c.len();
        let xin = x.len();
        let mut pre = vec![0.0; 4 * hidden];
        for r in 0..4 * hidden {
            let mut acc = 0.0;
            for j in 0..xin {
                acc += w_x[r * xin + j] * x[j];
            }
            for j in 0..hidden {
                acc += w_h[r * hidden + j] * h[j];
            }
            pre[r] = acc + b[r];
        }
        let mut h_new = vec![0.0; hidden];
        let mut c_new = vec![0.0; hidden];
        for k in 0..hidden {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[hidden + k]);
            let o = sigmoid(pre[2 * hidden + k]);
            let g = pre[3 * hidden + k].tanh();
            c_new[k] = f * c[k] + i * g;
            h_new[k] = o * c_new[k].tanh();
        }
        (h_new, c_new)
    }

    fn run_cell(w_x: Vec<f64>, w_h: Vec<f64>, b: Vec<f64>, x: Vec<f64>, h: Vec<f64>, c: Vec<f64>, hidden: usize, xin: usize) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let p = LstmParamIds {
            w_x: tape.constant(Tensor::matrix(4 * hidden, xin, w_x).unwrap()),
            w_h: tape.constant(Tensor::matrix(4 * hidden, hidden, w_h).unwrap()),
            b: tape.constant(Tensor::vector(b)),
        };
        let x = tape.constant_vector(x);
        let h = tape.constant_vector(h);
        let c = tape.constant_vector(c);
        let (h2, c2) = lstm_cell(&mut tape, x, h, c, &p).unwrap();
        (tape.value(h2).data().to_vec(), tape.value(c2).data().to_vec())
    }

    #[test]
    fn zero_params_zero_cell_gives_zero() {
        let (h, c) = run_cell(
            vec![0.0; 4 * 2 * 3],
            vec![0.0; 4 * 2 * 2],
            vec![0.0; 8],
            vec![0.5, -0.5, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            2,
            3,
        );
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn gate_saturation_drives_cell_to_g() {
        // Saturated input gate, closed forget gate: c' -> g = tanh(b_g).
        let hidden = 2;
        let mut b = vec![0.0; 4 * hidden];
        for k in 0..hidden {
            b[k] = 60.0; // i -> 1
            b[hidden + k] = -60.0; // f -> 0
            b[3 * hidden + k] = 0.7; // g = tanh(0.7)
        }
        let (_, c) = run_cell(
            vec![0.0; 4 * hidden * 1],
            vec![0.0; 4 * hidden * hidden],
            b,
            vec![0.0],
            vec![0.3, -0.8],
            vec![5.0, -5.0],
            hidden,
            1,
        );
        for v in c {
            assert!((v - 0.7_f64.tanh()).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_reference_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..10 {
            let (hidden, xin) = (3, 4);
            let rand_vec = |rng: &mut ChaCha20Rng, n: usize| {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()
            };
            let w_x = rand_vec(&mut rng, 4 * hidden * xin);
            let w_h = rand_vec(&mut rng, 4 * hidden * hidden);
            let b = rand_vec(&mut rng, 4 * hidden);
            let x = rand_vec(&mut rng, xin);
            let h = rand_vec(&mut rng, hidden);
            let c = rand_vec(&mut rng, hidden);
            let (h_ref, c_ref) = reference_cell(&w_x, &w_h, &b, &x, &h, &c);
            let (h_got, c_got) = run_cell(w_x, w_h, b, x, h, c, hidden, xin);
            for (a, b) in h_got.iter().zip(&h_ref) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in c_got.iter().zip(&c_ref) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let p = LstmParamIds {
            w_x: tape.constant(Tensor::matrix(8, 3, vec![0.0; 24]).unwrap()),
            w_h: tape.constant(Tensor::matrix(8, 2, vec![0.0; 16]).unwrap()),
            b: tape.constant(Tensor::vector(vec![0.0; 8])),
        };
        let x = tape.constant_vector(vec![0.0; 4]); // wrong input width
        let h = tape.constant_vector(vec![0.0; 2]);
        let c = tape.constant_vector(vec![0.0; 2]);
        assert!(lstm_cell(&mut tape, x, h, c, &p).is_err());
    }
}
