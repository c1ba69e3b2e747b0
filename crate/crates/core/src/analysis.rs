//! Stability and boundedness diagnostics, packet-loss sweeps and costate checks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::GainSchedule;
use crate::linalg::{self, serde_matrix};
use crate::model::NcsModel;
use crate::riccati::{
    backward_recursion, finite_optimal_cost, FiniteHorizonSolution, RiccatiError, StationaryGains,
};
use crate::simulate::{Aggregates, Estimate, SimConfig, SimError, Simulator};

/// Margin below one required before `ρ` counts as stable.
pub const RHO_MARGIN: f64 = 1e-12;
/// Divergence is declared once `Tr(Σ_k)` exceeds this multiple of `Tr(Q_ω + Σ_0 + I)`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;
const COVARIANCE_MAX_STEPS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `√p · ρ(F)` with `F = A - B^L Λ⁻¹ M`.
    pub rho: f64,
    /// `ρ(F)` alone.
    pub spectral_abscissa: f64,
    pub converges: bool,
    /// Limit of the estimation-error covariance when it converges.
    #[serde(with = "serde_matrix::option")]
    pub sigma_infinity: Option<DMatrix<f64>>,
    /// Spectral radius of `A - [B^L B^R] K`, reported for information.
    pub closed_loop_radius: Option<f64>,
}

impl StabilityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Error-dynamics matrix `F = A - B^L Λ⁻¹ M`.
pub fn error_dynamics(model: &NcsModel, gains: &StationaryGains) -> DMatrix<f64> {
    let correction = match linalg::spd_factor(&gains.lambda) {
        Some(chol) => chol.solve(&gains.m),
        None => gains
            .lambda
            .clone()
            .lu()
            .solve(&gains.m)
            .unwrap_or_else(|| DMatrix::from_element(gains.m.nrows(), gains.m.ncols(), f64::NAN)),
    };
    &model.a - &model.b_local * correction
}

pub fn stability_margin(model: &NcsModel, gains: &StationaryGains) -> StabilityReport {
    let f = error_dynamics(model, gains);
    let mut report = stability_from_feedback(&f, model.p, &model.q_omega);
    let closed = &model.a - model.b_stacked() * &gains.k;
    report.closed_loop_radius = Some(linalg::spectral_radius(&closed));
    report
}

/// Report for an explicit error-dynamics matrix `F`.
pub fn stability_from_feedback(
    f: &DMatrix<f64>,
    p: f64,
    q_omega: &DMatrix<f64>,
) -> StabilityReport {
    let spectral = linalg::spectral_radius(f);
    let rho = p.sqrt() * spectral;
    let mut sigma = None;
    if rho < 1.0 - RHO_MARGIN {
        let zero = DMatrix::zeros(f.nrows(), f.ncols());
        if let CovarianceOutcome::Converged { limit, .. } =
            covariance_limit(f, p, q_omega, &zero, COVARIANCE_MAX_STEPS)
        {
            sigma = Some(limit);
        }
    }
    StabilityReport {
        rho,
        spectral_abscissa: spectral,
        converges: sigma.is_some(),
        sigma_infinity: sigma,
        closed_loop_radius: None,
    }
}

fn covariance_step(
    f: &DMatrix<f64>,
    p: f64,
    q_omega: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> DMatrix<f64> {
    linalg::symmetrize(&((f * sigma * f.transpose() + q_omega) * p))
}

/// `Σ_0 ..= Σ_steps` of `Σ_k = p F Σ_{k-1} F' + p Q_ω`.
pub fn covariance_recursion(
    f: &DMatrix<f64>,
    p: f64,
    q_omega: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    steps: usize,
) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(sigma0.clone());
    for k in 0..steps {
        let next = covariance_step(f, p, q_omega, &out[k]);
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceOutcome {
    Converged { limit: DMatrix<f64>, steps: usize },
    Diverged { step: usize, trace: f64 },
    Undecided { steps: usize },
}

/// Iterates the error-covariance recursion until the entrywise change drops
/// below `1e-12 Tr(Q_ω) + 1e-15` or the trace crosses the divergence guard.
pub fn covariance_limit(
    f: &DMatrix<f64>,
    p: f64,
    q_omega: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    max_steps: usize,
) -> CovarianceOutcome {
    let n = f.nrows();
    let tol = 1e-12 * q_omega.trace().abs() + 1e-15;
    let guard = DIVERGENCE_FACTOR * (q_omega + sigma0 + DMatrix::<f64>::identity(n, n)).trace();
    let mut sigma = sigma0.clone();
    for step in 1..=max_steps {
        let next = covariance_step(f, p, q_omega, &sigma);
        let trace = next.trace();
        if !trace.is_finite() || trace > guard {
            return CovarianceOutcome::Diverged { step, trace };
        }
        let change = linalg::max_abs(&(&next - &sigma));
        sigma = next;
        if change <= tol {
            return CovarianceOutcome::Converged {
                limit: sigma,
                steps: step,
            };
        }
    }
    CovarianceOutcome::Undecided { steps: max_steps }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p: f64,
    pub cost: f64,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("empty probability grid")]
    EmptyGrid,
    #[error("drop probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("at p = {p}: {source}")]
    Infeasible { p: f64, source: RiccatiError },
}

/// Optimal finite-horizon cost for each drop probability, sorted by `p`.
pub fn cost_sweep(
    model: &NcsModel,
    horizon: usize,
    p_grid: &[f64],
) -> Result<Vec<SweepPoint>, SweepError> {
    if p_grid.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    if let Some(&bad) = p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(SweepError::InvalidProbability(bad));
    }
    let mut grid = p_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.par_iter()
        .map(|&p| {
            let m = model.with_p(p);
            let sol = backward_recursion(&m, horizon)
                .map_err(|source| SweepError::Infeasible { p, source })?;
            Ok(SweepPoint {
                p,
                cost: finite_optimal_cost(&m, &sol),
            })
        })
        .collect()
}

/// Per-component sample mean and standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl VectorEstimate {
    /// Largest `|mean| / std_error`; a zero-spread component counts as 0 when its mean is 0.
    pub fn max_z_score(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_error)
            .map(|(m, s)| {
                if *s > 0.0 {
                    m.abs() / s
                } else if *m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Sample statistics of the stationarity residuals along the optimal closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostateResiduals {
    /// `(B^L)' λ_k + R^L u^L_k`, one entry per `k = 0..=N`.
    pub local: Vec<VectorEstimate>,
    /// `(B^R)' λ_k + R^R u^R_k`.
    pub remote: Vec<VectorEstimate>,
    /// `λ_{k-1} - A' λ_k - Q x_k`.
    pub costate: Vec<VectorEstimate>,
    /// Largest `|λ_N - P_{N+1} x_{N+1}|` over all rollouts.
    pub terminal_mismatch: f64,
}

impl CostateResiduals {
    pub fn max_z_score(&self) -> f64 {
        self.local
            .iter()
            .chain(&self.remote)
            .chain(&self.costate)
            .map(VectorEstimate::max_z_score)
            .fold(0.0, f64::max)
    }
}

/// Monte Carlo check of the costate relations with `λ_{k-1} = Z_k x̂_{k|k} + X_k x̃_k`.
///
/// Only unconditional means are tested; the underlying relations hold
/// conditionally on the controllers' information.
pub fn costate_residuals(
    model: &NcsModel,
    sol: &FiniteHorizonSolution,
    config: &SimConfig,
) -> Result<CostateResiduals, SimError> {
    let gains = GainSchedule::finite(sol)?;
    let sim = Simulator::new(model, &gains, *config)?;
    let horizon = config.horizon;
    let (n, ml, mr) = (model.state_dim(), model.local_dim(), model.remote_dim());
    let width = ml + mr + n;
    let at = model.a.transpose();
    let bl_t = model.b_local.transpose();
    let br_t = model.b_remote.transpose();

    let per_rollout = sim.map_rollouts(|_, t| {
        let costate =
            |k: usize| -> DVector<f64> { &sol.z[k] * t.estimate(k) + &sol.x[k] * t.error(k) };
        let mut row = Vec::with_capacity((horizon + 1) * width);
        let mut prev = costate(0);
        for k in 0..=horizon {
            let lam = costate(k + 1);
            let r_local = &bl_t * &lam + &model.r_local * &t.u_local[k];
            let r_remote = &br_t * &lam + &model.r_remote * &t.u_remote[k];
            let r_costate = &prev - &at * &lam - &model.q * &t.x[k];
            row.extend(
                r_local
                    .iter()
                    .chain(r_remote.iter())
                    .chain(r_costate.iter()),
            );
            prev = lam;
        }
        let terminal = linalg::max_abs_vec(&(prev - &model.p_terminal * &t.x_terminal));
        (row, terminal)
    })?;

    let terminal_mismatch = per_rollout.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut column = vec![0.0; per_rollout.len()];
    let mut estimate_at = |idx: usize| {
        for (slot, r) in column.iter_mut().zip(&per_rollout) {
            *slot = r.0[idx];
        }
        Estimate::from_samples(&column)
    };
    let mut local = Vec::with_capacity(horizon + 1);
    let mut remote = Vec::with_capacity(horizon + 1);
    let mut costate = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let base = k * width;
        let mut block = |offset: usize, len: usize| {
            let (mean, std_error) = (0..len)
                .map(|i| estimate_at(base + offset + i))
                .map(|e| (e.mean, e.std_error))
                .unzip();
            VectorEstimate { mean, std_error }
        };
        local.push(block(0, ml));
        remote.push(block(ml, mr));
        costate.push(block(ml + mr, n));
    }
    Ok(CostateResiduals {
        local,
        remote,
        costate,
        terminal_mismatch,
    })
}

/// Noise-free decay test: `E[x_K' x_K] <= ratio · E[x_0' x_0]` at the last recorded `K`.
pub fn mean_square_decay_check(aggregates: &Aggregates, ratio: f64) -> bool {
    match (
        aggregates.mean_square_state.first(),
        aggregates.mean_square_state.last(),
    ) {
        (Some(first), Some(last)) => *last <= ratio * first,
        _ => false,
    }
}

/// True when every value in the trailing `tail_fraction` of the curve lies within
/// `±rel_band` of the tail mean.
pub fn is_bounded_plateau(curve: &[f64], tail_fraction: f64, rel_band: f64) -> bool {
    let len = curve.len();
    let tail_len = ((len as f64 * tail_fraction).ceil() as usize).clamp(1, len.max(1));
    if len == 0 {
        return false;
    }
    let tail = &curve[len - tail_len..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    mean.is_finite()
        && tail
            .iter()
            .all(|v| (v - mean).abs() <= rel_band * mean.abs())
}

/// Average stage cost over `k = from_k..=N` per rollout, summarized over rollouts.
pub fn average_stage_cost(
    model: &NcsModel,
    gains: &GainSchedule,
    config: &SimConfig,
    from_k: usize,
) -> Result<Estimate, SimError> {
    let sim = Simulator::new(model, gains, *config)?;
    let samples = sim.map_rollouts(|_, t| {
        let window = &t.stage_cost[from_k.min(t.stage_cost.len() - 1)..];
        window.iter().sum::<f64>() / window.len() as f64
    })?;
    Ok(Estimate::from_samples(&samples))
}
