//! Coupled Riccati recursions for the local/remote controller pair.
//!
//! `Z` is the usual Riccati sequence for the stacked input `[B^L B^R]`;
//! `X` weighs the estimation error and is coupled to `Z` through
//! `Ψ = (1-p) Z + p X`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, serde_matrix};
use crate::model::{check_observability, NcsModel};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Which factorization failed a positive-definiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factor {
    Upsilon,
    Lambda,
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Factor::Upsilon => f.write_str("Upsilon"),
            Factor::Lambda => f.write_str("Lambda"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilizationFailure {
    #[error("no convergence after {iterations} iterations (last gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },
    #[error("{which} lost positive definiteness at iteration {iteration}")]
    Infeasible { iteration: usize, which: Factor },
    #[error("{0} is not positive definite at the fixed point")]
    NotPositive(&'static str),
    #[error("fixed-point residual {0:e} too large")]
    Residual(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("problem infeasible: {which} not positive definite at k = {k}")]
    InfeasibleProblem { k: usize, which: Factor },
    #[error("not stabilizable: {0}")]
    NotStabilizable(StabilizationFailure),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
}

/// Output of one backward step from `(Z_{k+1}, X_{k+1})`.
#[derive(Debug, Clone)]
pub struct BackwardStep {
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub psi_next: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

/// One step of the coupled recursion. Errors name the factor that is not
/// positive definite.
pub fn backward_step(
    model: &NcsModel,
    z_next: &DMatrix<f64>,
    x_next: &DMatrix<f64>,
) -> Result<BackwardStep, Factor> {
    let a = &model.a;
    let b = model.b_stacked();
    let bt_z = b.transpose() * z_next;
    let upsilon = linalg::symmetrize(&(&bt_z * &b + model.r_stacked()));
    let ups_chol = linalg::spd_factor(&upsilon).ok_or(Factor::Upsilon)?;
    let k = ups_chol.solve(&(&bt_z * a));

    let psi_next = z_next * (1.0 - model.p) + x_next * model.p;
    let bl_t_psi = model.b_local.transpose() * &psi_next;
    let lambda = linalg::symmetrize(&(&bl_t_psi * &model.b_local + &model.r_local));
    let lam_chol = linalg::spd_factor(&lambda).ok_or(Factor::Lambda)?;
    let m = &bl_t_psi * a;

    let at = a.transpose();
    let z = linalg::symmetrize(&(&at * z_next * a + &model.q - k.transpose() * &upsilon * &k));
    let x =
        linalg::symmetrize(&(&at * &psi_next * a + &model.q - m.transpose() * lam_chol.solve(&m)));
    Ok(BackwardStep {
        z,
        x,
        psi_next,
        k,
        upsilon,
        lambda,
        m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteHorizonSolution {
    #[serde(rename = "N")]
    pub horizon: usize,
    /// `Z_0 ..= Z_{N+1}`.
    #[serde(rename = "Z", with = "serde_matrix::seq")]
    pub z: Vec<DMatrix<f64>>,
    #[serde(rename = "X", with = "serde_matrix::seq")]
    pub x: Vec<DMatrix<f64>>,
    #[serde(rename = "Psi", with = "serde_matrix::seq")]
    pub psi: Vec<DMatrix<f64>>,
    /// `K_0 ..= K_N`.
    #[serde(rename = "K", with = "serde_matrix::seq")]
    pub k: Vec<DMatrix<f64>>,
    #[serde(rename = "Upsilon", with = "serde_matrix::seq")]
    pub upsilon: Vec<DMatrix<f64>>,
    #[serde(rename = "Lambda", with = "serde_matrix::seq")]
    pub lambda: Vec<DMatrix<f64>>,
    #[serde(rename = "M", with = "serde_matrix::seq")]
    pub m: Vec<DMatrix<f64>>,
}

/// Solves the coupled recursion backward from `Z_{N+1} = X_{N+1} = P_terminal`.
pub fn backward_recursion(
    model: &NcsModel,
    horizon: usize,
) -> Result<FiniteHorizonSolution, RiccatiError> {
    let n = model.state_dim();
    let len = horizon + 2;
    let zero = DMatrix::<f64>::zeros(n, n);
    let mut z = vec![zero.clone(); len];
    let mut x = vec![zero.clone(); len];
    let mut psi = vec![zero; len];
    let mut k = Vec::with_capacity(horizon + 1);
    let mut upsilon = Vec::with_capacity(horizon + 1);
    let mut lambda = Vec::with_capacity(horizon + 1);
    let mut m = Vec::with_capacity(horizon + 1);

    z[horizon + 1] = model.p_terminal.clone();
    x[horizon + 1] = model.p_terminal.clone();
    for step in (0..=horizon).rev() {
        let out = backward_step(model, &z[step + 1], &x[step + 1])
            .map_err(|which| RiccatiError::InfeasibleProblem { k: step, which })?;
        psi[step + 1] = out.psi_next;
        z[step] = out.z;
        x[step] = out.x;
        k.push(out.k);
        upsilon.push(out.upsilon);
        lambda.push(out.lambda);
        m.push(out.m);
    }
    psi[0] = &z[0] * (1.0 - model.p) + &x[0] * model.p;
    k.reverse();
    upsilon.reverse();
    lambda.reverse();
    m.reverse();
    Ok(FiniteHorizonSolution {
        horizon,
        z,
        x,
        psi,
        k,
        upsilon,
        lambda,
        m,
    })
}

/// Expected optimal cost of the finite-horizon problem.
///
/// The initial term `E[x_0' Z_0 x̂_{0|0} + x_0' X_0 x̃_0]` evaluates to
/// `x̄_0' Z_0 x̄_0 + Tr(Ψ_0 P̄_0)`: with probability `1-p` the first packet
/// arrives (`x̂ = x_0`, `x̃ = 0`), otherwise `x̂ = x̄_0` and `x̃ = x_0 - x̄_0`.
pub fn finite_optimal_cost(model: &NcsModel, sol: &FiniteHorizonSolution) -> f64 {
    let p = model.p;
    let xm = &model.x0_mean;
    let head =
        (xm.transpose() * &sol.z[0] * xm)[(0, 0)] + linalg::trace_product(&sol.psi[0], &model.p0);
    let noise: f64 = (0..=sol.horizon)
        .map(|k| {
            p * linalg::trace_product(&sol.x[k + 1], &model.q_omega)
                + (1.0 - p) * linalg::trace_product(&sol.z[k + 1], &model.q_omega)
        })
        .sum();
    head + noise
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryGains {
    #[serde(rename = "Z", with = "serde_matrix")]
    pub z: DMatrix<f64>,
    #[serde(rename = "X", with = "serde_matrix")]
    pub x: DMatrix<f64>,
    #[serde(rename = "Psi", with = "serde_matrix")]
    pub psi: DMatrix<f64>,
    #[serde(rename = "K", with = "serde_matrix")]
    pub k: DMatrix<f64>,
    #[serde(rename = "Upsilon", with = "serde_matrix")]
    pub upsilon: DMatrix<f64>,
    #[serde(rename = "Lambda", with = "serde_matrix")]
    pub lambda: DMatrix<f64>,
    #[serde(rename = "M", with = "serde_matrix")]
    pub m: DMatrix<f64>,
    pub iterations_used: usize,
    pub residual: f64,
}

/// Stationary solution by repeated backward steps from `Z = X = 0`.
///
/// Requires `R^L ≻ 0`, `R^R ≻ 0` and `(A, Q^{1/2})` observable. The terminal
/// weight of the model is ignored.
pub fn value_iteration(
    model: &NcsModel,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryGains, RiccatiError> {
    let model = model
        .clone()
        .validate_strict()
        .map_err(|e| RiccatiError::AssumptionViolated(e.to_string()))?;
    if !check_observability(&model.a, &model.q) {
        return Err(RiccatiError::AssumptionViolated(
            "(A, Q^1/2) is not observable".to_string(),
        ));
    }
    let not_stab = RiccatiError::NotStabilizable;
    let n = model.state_dim();
    let mut z = DMatrix::<f64>::zeros(n, n);
    let mut x = DMatrix::<f64>::zeros(n, n);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let step = backward_step(&model, &z, &x).map_err(|which| {
            not_stab(StabilizationFailure::Infeasible {
                iteration: iterations,
                which,
            })
        })?;
        iterations += 1;
        gap = linalg::max_abs(&(&step.z - &z)).max(linalg::max_abs(&(&step.x - &x)));
        z = step.z;
        x = step.x;
        if !gap.is_finite() {
            break;
        }
        if gap < tol {
            break;
        }
    }
    if gap.is_nan() || gap >= tol {
        return Err(not_stab(StabilizationFailure::NoConvergence {
            iterations,
            gap,
        }));
    }

    // Gains at the fixed point itself, plus the residual of one more step.
    let at_fixed = backward_step(&model, &z, &x).map_err(|which| {
        not_stab(StabilizationFailure::Infeasible {
            iteration: iterations,
            which,
        })
    })?;
    let residual = linalg::max_abs(&(&at_fixed.z - &z)).max(linalg::max_abs(&(&at_fixed.x - &x)));
    let psi = at_fixed.psi_next;
    if !linalg::is_pd(&z) {
        return Err(not_stab(StabilizationFailure::NotPositive("Z")));
    }
    if !linalg::is_pd(&psi) {
        return Err(not_stab(StabilizationFailure::NotPositive("Psi")));
    }
    if residual.is_nan() || residual >= 10.0 * tol {
        return Err(not_stab(StabilizationFailure::Residual(residual)));
    }
    Ok(StationaryGains {
        z,
        x,
        psi,
        k: at_fixed.k,
        upsilon: at_fixed.upsilon,
        lambda: at_fixed.lambda,
        m: at_fixed.m,
        iterations_used: iterations,
        residual,
    })
}

/// Long-run average cost per stage under the stationary controller.
pub fn stationary_average_cost(gains: &StationaryGains, q_omega: &DMatrix<f64>, p: f64) -> f64 {
    p * linalg::trace_product(&gains.x, q_omega)
        + (1.0 - p) * linalg::trace_product(&gains.z, q_omega)
}
