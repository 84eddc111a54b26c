//! Fully-connected multilayer perceptron with tanh hidden activations and a
//! linear output layer, stored as a flat parameter vector.
//!
//! Layout: per layer, weights row-major `(out x in)` then biases `(out)`.
//! The same shape drives a fast `f64` forward pass (action sampling in
//! rollouts) and a taped forward pass (gradients, Hessian-vector products).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self { input, hidden, output }
    }

    /// `(out, in)` dimensions of each layer, hidden layers first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.output, prev));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Plain forward pass; `scratch` buffers avoid per-call allocation.
    pub fn forward(&self, params: &[f64], input: &[f64], scratch: &mut ForwardScratch) -> Vec<f64> {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(input.len(), self.input);
        let dims = self.layer_dims();
        let n_layers = dims.len();
        scratch.current.clear();
        scratch.current.extend_from_slice(input);
        let mut offset = 0;
        for (l, &(out_dim, in_dim)) in dims.iter().enumerate() {
            scratch.next.clear();
            for r in 0..out_dim {
                let w_row = &params[offset + r * in_dim..offset + (r + 1) * in_dim];
                let mut acc = params[offset + out_dim * in_dim + r];
                for (w, x) in w_row.iter().zip(scratch.current.iter()) {
                    acc += w * x;
                }
                if l + 1 < n_layers {
                    acc = acc.tanh();
                }
                scratch.next.push(acc);
            }
            offset += out_dim * in_dim + out_dim;
            std::mem::swap(&mut scratch.current, &mut scratch.next);
        }
        scratch.current.clone()
    }

    /// Taped forward pass over parameter variables and a constant input.
    pub fn forward_tape<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        input: &[f64],
    ) -> Vec<Var> {
        debug_assert_eq!(params.len(), self.param_count());
        let dims = self.layer_dims();
        let n_layers = dims.len();
        let mut current: Vec<Var> = input.iter().map(|&x| tape.constant(x)).collect();
        let mut offset = 0;
        for (l, &(out_dim, in_dim)) in dims.iter().enumerate() {
            let mut next = Vec::with_capacity(out_dim);
            for r in 0..out_dim {
                let mut acc = params[offset + out_dim * in_dim + r];
                for c in 0..in_dim {
                    let prod = tape.mul(params[offset + r * in_dim + c], current[c]);
                    acc = tape.add(acc, prod);
                }
                if l + 1 < n_layers {
                    acc = tape.tanh(acc);
                }
                next.push(acc);
            }
            offset += out_dim * in_dim + out_dim;
            current = next;
        }
        current
    }

    /// Orthogonal-style initialization: hidden layers at gain sqrt(2), final
    /// layer scaled down so initial outputs sit near zero. Biases are zero.
    pub fn init_params<R: Rng + ?Sized>(&self, final_gain: f64, rng: &mut R) -> Vec<f64> {
        let dims = self.layer_dims();
        let n_layers = dims.len();
        let mut params = Vec::with_capacity(self.param_count());
        for (l, &(out_dim, in_dim)) in dims.iter().enumerate() {
            let gain = if l + 1 < n_layers { std::f64::consts::SQRT_2 } else { final_gain };
            params.extend(orthogonal(out_dim, in_dim, gain, rng));
            params.extend(std::iter::repeat(0.0).take(out_dim));
        }
        params
    }
}

/// Reusable buffers for [`MlpShape::forward`].
#[derive(Debug, Default, Clone)]
pub struct ForwardScratch {
    current: Vec<f64>,
    next: Vec<f64>,
}

/// Row-major orthogonal matrix scaled by `gain`, via QR of a Gaussian draw.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let big = rows.max(cols);
    let m = DMatrix::from_fn(big, big, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the sign convention so the factorization is unique.
    for j in 0..big {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_layout() {
        let shape = MlpShape::new(18, vec![64, 64], 2);
        assert_eq!(shape.param_count(), 18 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
        let linear = MlpShape::new(3, vec![], 2);
        assert_eq!(linear.param_count(), 8);
    }

    #[test]
    fn plain_and_taped_forward_agree() {
        let shape = MlpShape::new(4, vec![8, 5], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = shape.init_params(0.5, &mut rng);
        let input: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.4).collect();
        let mut scratch = ForwardScratch::default();
        let plain = shape.forward(&params, &input, &mut scratch);

        let mut tape: Tape<f64> = Tape::new();
        let vars: Vec<Var> = params.iter().map(|&p| tape.leaf(p)).collect();
        let out = shape.forward_tape(&mut tape, &vars, &input);
        for (p, v) in plain.iter().zip(out.iter()) {
            assert_abs_diff_eq!(*p, tape.value(*v), epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_final_layer_outputs_zero() {
        let shape = MlpShape::new(6, vec![8], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = shape.init_params(1.0, &mut rng);
        // Zero the final layer (weights + biases).
        let final_len = 8 * 2 + 2;
        let n = params.len();
        params[n - final_len..].fill(0.0);
        let mut scratch = ForwardScratch::default();
        let out = shape.forward(&params, &[0.3, -0.5, 0.9, 0.0, 1.0, -1.0], &mut scratch);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_shape_is_affine_map() {
        let shape = MlpShape::new(2, vec![], 1);
        // W = [2, -1], b = 0.5
        let params = vec![2.0, -1.0, 0.5];
        let mut scratch = ForwardScratch::default();
        let out = shape.forward(&params, &[1.0, 3.0], &mut scratch);
        assert_abs_diff_eq!(out[0], 2.0 - 3.0 + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = orthogonal(4, 9, 1.0, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..9).map(|k| w[i * 9 + k] * w[j * 9 + k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expected, epsilon = 1e-10);
            }
        }
    }
}
