//! Passive fault detector: joint Gaussian filtering of the plant state and
//! the actuator-fault vector.
//!
//! The filter tracks four parameters, the means and covariances of the state
//! and fault estimates. One full cycle folds an input/measurement pair into
//! the belief:
//!
//! 1. predict the state one step ahead, inflating the covariance with the
//!    fault uncertainty mapped through `B* = B diag(u)`,
//! 2. correct the state prediction with the new measurement (gain in the
//!    numerically stable Woodbury form),
//! 3. update the fault estimate from the prediction-vs-posterior discrepancy,
//!    which acts as an indirect measurement of `z` whenever the input is
//!    non-zero,
//! 4. propagate the fault estimate through the assumed random walk, adding a
//!    bias term to the covariance.
//!
//! The walk model assumed here is a free knob, deliberately decoupled from
//! the fault process that drives the simulation.

use nalgebra::{DMatrix, DVector};
use std::io::Write;

use crate::error::{Error, Result};
use crate::linsys::LinearFaultPlant;
use crate::math::{check_covariance, pack_triu, solve_spd, symmetrize_floor};

/// Eigenvalue floor applied to stored covariances after every update.
pub const COVARIANCE_JITTER: f64 = 1e-12;

/// Gaussian posteriors over the plant state and the fault vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mu_x: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
    pub mu_z: DVector<f64>,
    pub sigma_z: DMatrix<f64>,
}

impl Belief {
    pub fn new(
        mu_x: DVector<f64>,
        sigma_x: DMatrix<f64>,
        mu_z: DVector<f64>,
        sigma_z: DMatrix<f64>,
    ) -> Result<Self> {
        check_covariance(&sigma_x, "sigma_x")?;
        check_covariance(&sigma_z, "sigma_z")?;
        if sigma_x.nrows() != mu_x.len() {
            return Err(Error::Dimension { context: "belief state", expected: mu_x.len(), actual: sigma_x.nrows() });
        }
        if sigma_z.nrows() != mu_z.len() {
            return Err(Error::Dimension { context: "belief fault", expected: mu_z.len(), actual: sigma_z.nrows() });
        }
        if mu_x.iter().chain(mu_z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical("belief mean contains non-finite entries"));
        }
        Ok(Self { mu_x, sigma_x, mu_z, sigma_z })
    }

    pub fn n_x(&self) -> usize {
        self.mu_x.len()
    }

    pub fn n_u(&self) -> usize {
        self.mu_z.len()
    }
}

/// One-step-ahead state prior together with the input-scaled fault map.
#[derive(Debug, Clone)]
pub struct PredictedState {
    pub mu_x_pred: DVector<f64>,
    pub sigma_x_pred: DMatrix<f64>,
    /// `B* = B diag(u)`; zero whenever the input is zero.
    pub b_star: DMatrix<f64>,
}

/// Random-walk fault dynamics assumed by the filter.
#[derive(Debug, Clone)]
pub struct FaultWalkModel {
    pub mu_xi: DVector<f64>,
    pub sigma_xi: DMatrix<f64>,
}

impl FaultWalkModel {
    pub fn new(mu_xi: DVector<f64>, sigma_xi: DMatrix<f64>) -> Result<Self> {
        check_covariance(&sigma_xi, "sigma_xi")?;
        if sigma_xi.nrows() != mu_xi.len() {
            return Err(Error::Dimension { context: "walk model", expected: mu_xi.len(), actual: sigma_xi.nrows() });
        }
        Ok(Self { mu_xi, sigma_xi })
    }

    /// Driftless walk with isotropic covariance bias.
    pub fn isotropic(n_u: usize, variance: f64) -> Self {
        Self {
            mu_xi: DVector::zeros(n_u),
            sigma_xi: DMatrix::identity(n_u, n_u) * variance,
        }
    }
}

/// State prediction: substitutes the current estimates into the dynamics.
///
/// The fault uncertainty adds to the process noise through `B*`:
/// `Sigma = A Sigma_x A^T + B* Sigma_z B*^T + Sigma_w`.
pub fn predict(
    belief: &Belief,
    u: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
) -> Result<PredictedState> {
    check_covariance(&belief.sigma_x, "predict sigma_x")?;
    check_covariance(&belief.sigma_z, "predict sigma_z")?;
    if u.len() != b.ncols() {
        return Err(Error::Dimension { context: "predict input", expected: b.ncols(), actual: u.len() });
    }
    let b_star = scale_columns(b, u);
    let mu_x_pred = a * &belief.mu_x + &b_star * &belief.mu_z;
    let sigma_x_pred =
        a * &belief.sigma_x * a.transpose() + &b_star * &belief.sigma_z * b_star.transpose() + sigma_w;
    Ok(PredictedState { mu_x_pred, sigma_x_pred, b_star })
}

/// `B diag(u)` without materializing the diagonal.
fn scale_columns(b: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    for (j, &uj) in u.iter().enumerate() {
        out.column_mut(j).scale_mut(uj);
    }
    out
}

/// Measurement correction of the state prior, Woodbury/Kalman-gain form.
pub fn correct_state(
    pred: &PredictedState,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if y.len() != c.nrows() {
        return Err(Error::Dimension { context: "measurement", expected: c.nrows(), actual: y.len() });
    }
    let innovation_cov = sigma_v + c * &pred.sigma_x_pred * c.transpose();
    // K_x = Sigma_pred C^T S^{-1}, realized as a linear solve on S.
    let cross = &pred.sigma_x_pred * c.transpose();
    let gain = solve_spd(&innovation_cov, &cross.transpose())
        .map_err(|e| Error::numerical(format!("innovation covariance solve failed: {e}")))?
        .transpose();
    let n_x = pred.mu_x_pred.len();
    let sigma_post = (DMatrix::identity(n_x, n_x) - &gain * c) * &pred.sigma_x_pred;
    let mu_post = &pred.mu_x_pred + &gain * (y - c * &pred.mu_x_pred);
    Ok((mu_post, sigma_post))
}

/// Fault-estimate refinement from the state-correction discrepancy.
///
/// `K_z = Sigma_z B*^T (Sigma_post + Sigma_pred)^{-1}`; with a zero input
/// `B* = 0` and the estimate passes through unchanged.
pub fn update_fault(
    belief: &Belief,
    pred: &PredictedState,
    mu_x_post: &DVector<f64>,
    sigma_x_post: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let denom = sigma_x_post + &pred.sigma_x_pred;
    let cross = &belief.sigma_z * pred.b_star.transpose();
    let gain = solve_spd(&denom, &cross.transpose())
        .map_err(|e| Error::numerical(format!("fault gain solve failed: {e}")))?
        .transpose();
    let n_u = belief.mu_z.len();
    let sigma_z_post = (DMatrix::identity(n_u, n_u) - &gain * &pred.b_star) * &belief.sigma_z;
    let mu_z_post = &belief.mu_z + &gain * (mu_x_post - &pred.mu_x_pred);
    Ok((mu_z_post, sigma_z_post))
}

/// Pushes the fault posterior through the assumed walk:
/// mean shifts by the drift, covariance picks up the bias term.
pub fn propagate_fault(
    mu_z: &DVector<f64>,
    sigma_z: &DMatrix<f64>,
    walk: &FaultWalkModel,
) -> (DVector<f64>, DMatrix<f64>) {
    (mu_z + &walk.mu_xi, sigma_z + &walk.sigma_xi)
}

/// Full filter cycle: predict with `u_t`, correct with `y_{t+1}`, refine the
/// fault estimate, propagate the walk. Returns the time-(t+1) belief with
/// symmetrized, jitter-floored covariances.
pub fn observer_step(
    belief: &Belief,
    u: &DVector<f64>,
    y_next: &DVector<f64>,
    plant: &LinearFaultPlant,
    walk: &FaultWalkModel,
) -> Result<Belief> {
    let pred = predict(belief, u, &plant.a, &plant.b, &plant.sigma_w)?;
    let (mu_x_post, mut sigma_x_post) = correct_state(&pred, y_next, &plant.c, &plant.sigma_v)?;
    symmetrize_floor(&mut sigma_x_post, COVARIANCE_JITTER);
    let (mu_z_post, sigma_z_post) = update_fault(belief, &pred, &mu_x_post, &sigma_x_post)?;
    let (mu_z_next, mut sigma_z_next) = propagate_fault(&mu_z_post, &sigma_z_post, walk);
    symmetrize_floor(&mut sigma_z_next, COVARIANCE_JITTER);
    if mu_x_post.iter().chain(mu_z_next.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("observer produced non-finite estimates"));
    }
    Ok(Belief {
        mu_x: mu_x_post,
        sigma_x: sigma_x_post,
        mu_z: mu_z_next,
        sigma_z: sigma_z_next,
    })
}

/// Writes a belief trajectory as CSV with columns
/// `t, mu_x_*, triu_sigma_x_*, mu_z_*, triu_sigma_z_*`.
pub fn write_belief_csv<W: Write>(mut w: W, beliefs: &[Belief]) -> Result<()> {
    let Some(first) = beliefs.first() else {
        return Err(Error::contract("empty belief trajectory"));
    };
    let (n_x, n_u) = (first.n_x(), first.n_u());
    let mut header = vec!["t".to_string()];
    header.extend((0..n_x).map(|i| format!("mu_x_{i}")));
    header.extend(triu_labels("sigma_x", n_x));
    header.extend((0..n_u).map(|i| format!("mu_z_{i}")));
    header.extend(triu_labels("sigma_z", n_u));
    writeln!(w, "{}", header.join(","))?;
    for (t, b) in beliefs.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(b.mu_x.iter().map(|v| v.to_string()));
        row.extend(pack_triu(&b.sigma_x).iter().map(|v| v.to_string()));
        row.extend(b.mu_z.iter().map(|v| v.to_string()));
        row.extend(pack_triu(&b.sigma_z).iter().map(|v| v.to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub(crate) fn triu_labels(prefix: &str, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            out.push(format!("{prefix}_{i}{j}"));
        }
    }
    out
}
