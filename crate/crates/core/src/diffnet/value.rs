//! Scalar value approximators (reward-value and cost-value heads) and the
//! Adam optimizer used to regress them onto bootstrap targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardScratch, MlpShape};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec;

/// Parameters of a scalar-output network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSpec {
    pub mlp: MlpShape,
    pub phi: Vec<f64>,
}

impl ValueSpec {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: Vec<usize>, rng: &mut R) -> Self {
        let mlp = MlpShape::new(obs_dim, hidden, 1);
        let phi = mlp.init_params(1.0, rng);
        Self { mlp, phi }
    }

    pub fn n_params(&self) -> usize {
        self.phi.len()
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        let mut scratch = ForwardScratch::default();
        self.value_with(obs, &mut scratch)
    }

    pub fn value_with(&self, obs: &[f64], scratch: &mut ForwardScratch) -> Result<f64> {
        if obs.len() != self.mlp.input {
            return Err(Error::Dimension { context: "value obs", expected: self.mlp.input, actual: obs.len() });
        }
        Ok(self.mlp.forward(&self.phi, obs, scratch)[0])
    }

    pub fn values(&self, obs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut scratch = ForwardScratch::default();
        obs.iter().map(|o| self.value_with(o, &mut scratch)).collect()
    }

    /// Mean-squared-error loss and its exact gradient on a batch.
    pub fn mse_grad(&self, obs: &[Vec<f64>], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        if obs.len() != targets.len() {
            return Err(Error::contract("value regression arrays misaligned"));
        }
        if obs.is_empty() {
            return Ok((0.0, vec![0.0; self.phi.len()]));
        }
        let n = obs.len();
        let dim = self.phi.len();
        const CHUNK: usize = 128;
        let n_chunks = n.div_ceil(CHUNK);
        let partials = exec::map_indexed(n_chunks, |ci| {
            let lo = ci * CHUNK;
            let hi = ((ci + 1) * CHUNK).min(n);
            let mut tape: Tape<f64> = Tape::new();
            let vars: Vec<Var> = self.phi.iter().map(|&p| tape.leaf(p)).collect();
            let base = tape.len();
            let mut grad = vec![0.0; dim];
            let mut loss = 0.0;
            let mut adjoints = Vec::new();
            for s in lo..hi {
                tape.rewind(base);
                let out = self.mlp.forward_tape(&mut tape, &vars, &obs[s])[0];
                let residual = tape.add_const(out, -targets[s]);
                let sq = tape.square(residual);
                loss += tape.value(sq);
                tape.backward_into(sq, &mut adjoints);
                for (g, v) in grad.iter_mut().zip(vars.iter()) {
                    *g += adjoints[v.index()];
                }
            }
            (loss, grad)
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; dim];
        for (l, g) in partials {
            loss += l;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        let inv_n = 1.0 / n as f64;
        for g in grad.iter_mut() {
            *g *= inv_n;
        }
        Ok((loss * inv_n, grad))
    }

    pub fn mse(&self, obs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
        let values = self.values(obs)?;
        let n = values.len().max(1);
        Ok(values
            .iter()
            .zip(targets.iter())
            .map(|(v, t)| (v - t) * (v - t))
            .sum::<f64>()
            / n as f64)
    }
}

/// Standard Adam state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
