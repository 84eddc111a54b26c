//! Independent reference implementations used by the validation suites.
//!
//! Everything here is deliberately written from first principles, without
//! touching the production filter code paths: a bootstrap particle filter
//! for the joint state/fault model, a textbook Kalman filter with known
//! input, and the information-form measurement update. Test suites compare
//! the production observer against these.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::mvn_factor;

/// Bootstrap particle filter over joint `(x, z)` particles for
///
/// ```text
/// x' = A x + B diag(u) z + w,   y = C x' + v,   z' = z + xi
/// ```
///
/// with Gaussian noise everywhere. Systematic resampling triggers when the
/// effective sample size drops below half the particle count.
pub struct ParticleFilter {
    pub xs: Vec<DVector<f64>>,
    pub zs: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl ParticleFilter {
    #[allow(clippy::too_many_arguments)]
    pub fn from_prior<R: Rng + ?Sized>(
        n_particles: usize,
        mu_x: &DVector<f64>,
        sigma_x: &DMatrix<f64>,
        mu_z: &DVector<f64>,
        sigma_z: &DMatrix<f64>,
        rng: &mut R,
    ) -> Self {
        let lx = mvn_factor(sigma_x);
        let lz = mvn_factor(sigma_z);
        let draw = |l: &DMatrix<f64>, mu: &DVector<f64>, rng: &mut R| {
            let eps = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            mu + l * eps
        };
        let mut xs = Vec::with_capacity(n_particles);
        let mut zs = Vec::with_capacity(n_particles);
        for _ in 0..n_particles {
            xs.push(draw(&lx, mu_x, rng));
            zs.push(draw(&lz, mu_z, rng));
        }
        Self { xs, zs, weights: vec![1.0 / n_particles as f64; n_particles] }
    }

    /// Propagate with input `u`, weight by the measurement `y_next`, diffuse
    /// the fault particles by the walk, and resample if degenerate.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        sigma_w: &DMatrix<f64>,
        sigma_v: &DMatrix<f64>,
        walk_mean: &DVector<f64>,
        walk_cov: &DMatrix<f64>,
        u: &DVector<f64>,
        y_next: &DVector<f64>,
        rng: &mut R,
    ) {
        let lw = mvn_factor(sigma_w);
        let lxi = mvn_factor(walk_cov);
        let sigma_v_inv = sigma_v.clone().try_inverse().expect("sigma_v invertible");
        let n = self.xs.len();
        let n_x = self.xs[0].len();
        let n_z = self.zs[0].len();

        let mut log_weights: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        for i in 0..n {
            let effective = self.zs[i].component_mul(u);
            let noise =
                &lw * DVector::from_fn(n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x_next = a * &self.xs[i] + b * effective + noise;
            let innovation = y_next - c * &x_next;
            log_weights[i] += -0.5 * (innovation.transpose() * &sigma_v_inv * &innovation)[(0, 0)];
            self.xs[i] = x_next;
            let xi =
                &lxi * DVector::from_fn(n_z, |_, _| rng.sample::<f64, _>(StandardNormal));
            self.zs[i] += walk_mean + xi;
        }

        let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, lw) in self.weights.iter_mut().zip(log_weights.iter()) {
            *w = (lw - max_lw).exp();
            total += *w;
        }
        for w in self.weights.iter_mut() {
            *w /= total;
        }

        let ess = 1.0 / self.weights.iter().map(|w| w * w).sum::<f64>();
        if ess < n as f64 / 2.0 {
            self.resample_systematic(rng);
        }
    }

    fn resample_systematic<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.xs.len();
        let start: f64 = rng.gen::<f64>() / n as f64;
        let mut cumulative = 0.0;
        let mut idx = 0usize;
        let mut new_xs = Vec::with_capacity(n);
        let mut new_zs = Vec::with_capacity(n);
        for k in 0..n {
            let target = start + k as f64 / n as f64;
            while cumulative + self.weights[idx] < target && idx + 1 < n {
                cumulative += self.weights[idx];
                idx += 1;
            }
            new_xs.push(self.xs[idx].clone());
            new_zs.push(self.zs[idx].clone());
        }
        self.xs = new_xs;
        self.zs = new_zs;
        self.weights = vec![1.0 / n as f64; n];
    }

    pub fn fault_mean(&self) -> DVector<f64> {
        let dim = self.zs[0].len();
        let mut mean = DVector::zeros(dim);
        for (z, w) in self.zs.iter().zip(self.weights.iter()) {
            mean += z * *w;
        }
        mean
    }

    pub fn fault_variance(&self) -> DVector<f64> {
        let mean = self.fault_mean();
        let dim = mean.len();
        let mut var = DVector::zeros(dim);
        for (z, w) in self.zs.iter().zip(self.weights.iter()) {
            for i in 0..dim {
                let d = z[i] - mean[i];
                var[i] += w * d * d;
            }
        }
        var
    }

    pub fn state_mean(&self) -> DVector<f64> {
        let dim = self.xs[0].len();
        let mut mean = DVector::zeros(dim);
        for (x, w) in self.xs.iter().zip(self.weights.iter()) {
            mean += x * *w;
        }
        mean
    }
}

/// Textbook Kalman filter with a known deterministic input term,
/// straight from the standard equations (explicit inverses and all).
pub struct KalmanFilter {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl KalmanFilter {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        Self { mu, sigma }
    }

    /// One predict/update cycle with known input contribution `bu`
    /// (already multiplied through whatever gain applies) and measurement
    /// `y_next` of the successor state.
    pub fn step(
        &mut self,
        a: &DMatrix<f64>,
        bu: &DVector<f64>,
        c: &DMatrix<f64>,
        sigma_w: &DMatrix<f64>,
        sigma_v: &DMatrix<f64>,
        y_next: &DVector<f64>,
    ) {
        let mu_pred = a * &self.mu + bu;
        let sigma_pred = a * &self.sigma * a.transpose() + sigma_w;
        let innovation_cov = c * &sigma_pred * c.transpose() + sigma_v;
        let gain = &sigma_pred
            * c.transpose()
            * innovation_cov.try_inverse().expect("innovation covariance invertible");
        let n = self.mu.len();
        self.mu = &mu_pred + &gain * (y_next - c * &mu_pred);
        self.sigma = (DMatrix::identity(n, n) - &gain * c) * sigma_pred;
    }
}

/// Information-form (pre-Woodbury) measurement update:
/// `Sigma_post = (Sigma_pred^-1 + C^T Sigma_v^-1 C)^-1`.
pub fn information_form_update(
    mu_pred: &DVector<f64>,
    sigma_pred: &DMatrix<f64>,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let sigma_pred_inv = sigma_pred.clone().try_inverse().expect("prior invertible");
    let sigma_v_inv = sigma_v.clone().try_inverse().expect("noise invertible");
    let info = &sigma_pred_inv + c.transpose() * &sigma_v_inv * c;
    let sigma_post = info.try_inverse().expect("posterior information invertible");
    let mu_post = &sigma_post * (&sigma_pred_inv * mu_pred + c.transpose() * &sigma_v_inv * y);
    (mu_post, sigma_post)
}
