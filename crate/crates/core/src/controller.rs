//! Optimal remote and local control laws.
//!
//! `K` is split by rows: the first `m_L` rows drive the local input, the
//! remaining `m_R` rows the remote input.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, DimensionMismatch};
use crate::riccati::{FiniteHorizonSolution, StationaryGains};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("Lambda is not positive definite")]
    SingularLambda,
}

/// Gains used at one stage. `correction` caches `Λ⁻¹ M`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGain {
    pub k: DMatrix<f64>,
    pub correction: DMatrix<f64>,
    pub local_dim: usize,
}

impl StageGain {
    pub fn new(
        k: DMatrix<f64>,
        lambda: &DMatrix<f64>,
        m: &DMatrix<f64>,
    ) -> Result<Self, ControlError> {
        let local_dim = lambda.nrows();
        DimensionMismatch::check("Lambda columns", local_dim, lambda.ncols())?;
        DimensionMismatch::check("M rows", local_dim, m.nrows())?;
        DimensionMismatch::check("M columns", k.ncols(), m.ncols())?;
        if k.nrows() < local_dim {
            return Err(DimensionMismatch {
                what: "K rows",
                expected: local_dim,
                found: k.nrows(),
            }
            .into());
        }
        let chol = linalg::spd_factor(lambda).ok_or(ControlError::SingularLambda)?;
        Ok(Self {
            correction: chol.solve(m),
            k,
            local_dim,
        })
    }

    /// Builds a stage from an explicit error-feedback matrix, e.g. a perturbed `Λ⁻¹M`.
    pub fn from_feedback(k: DMatrix<f64>, correction: DMatrix<f64>) -> Self {
        let local_dim = correction.nrows();
        Self {
            k,
            correction,
            local_dim,
        }
    }

    pub fn remote_dim(&self) -> usize {
        self.k.nrows() - self.local_dim
    }

    pub fn remote_control(&self, x_hat: &DVector<f64>) -> Result<DVector<f64>, DimensionMismatch> {
        DimensionMismatch::check("estimate", self.k.ncols(), x_hat.len())?;
        Ok(-(self.k.rows(self.local_dim, self.remote_dim()) * x_hat))
    }

    pub fn local_control(
        &self,
        x_hat: &DVector<f64>,
        x_tilde: &DVector<f64>,
    ) -> Result<LocalControl, DimensionMismatch> {
        DimensionMismatch::check("estimate", self.k.ncols(), x_hat.len())?;
        DimensionMismatch::check("estimation error", self.correction.ncols(), x_tilde.len())?;
        Ok(LocalControl {
            estimate_part: -(self.k.rows(0, self.local_dim) * x_hat),
            error_part: -(&self.correction * x_tilde),
        })
    }
}

/// Local input `û^L + ũ^L`, kept split: `û^L` is known to the remote side and
/// feeds the predictor, `ũ^L` reacts to the estimation error only.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalControl {
    pub estimate_part: DVector<f64>,
    pub error_part: DVector<f64>,
}

impl LocalControl {
    pub fn total(&self) -> DVector<f64> {
        &self.estimate_part + &self.error_part
    }
}

/// Per-stage gains for a finite horizon, or one stage reused forever.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    stages: Vec<StageGain>,
    stationary: bool,
}

impl GainSchedule {
    pub fn finite(sol: &FiniteHorizonSolution) -> Result<Self, ControlError> {
        let stages = (0..=sol.horizon)
            .map(|k| StageGain::new(sol.k[k].clone(), &sol.lambda[k], &sol.m[k]))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            stages,
            stationary: false,
        })
    }

    pub fn stationary(gains: &StationaryGains) -> Result<Self, ControlError> {
        Ok(Self::constant(StageGain::new(
            gains.k.clone(),
            &gains.lambda,
            &gains.m,
        )?))
    }

    pub fn constant(stage: StageGain) -> Self {
        Self {
            stages: vec![stage],
            stationary: true,
        }
    }

    pub fn from_stages(stages: Vec<StageGain>) -> Self {
        assert!(
            !stages.is_empty(),
            "a finite schedule needs at least one stage"
        );
        Self {
            stages,
            stationary: false,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    /// Last stage index covered, `None` for stationary schedules.
    pub fn horizon(&self) -> Option<usize> {
        (!self.stationary).then(|| self.stages.len() - 1)
    }

    pub fn stages(&self) -> &[StageGain] {
        &self.stages
    }

    pub fn at(&self, k: usize) -> &StageGain {
        if self.stationary {
            &self.stages[0]
        } else {
            &self.stages[k]
        }
    }

    /// Applies `f` to every stage; the stationary flag is kept.
    pub fn map_stages(&self, f: impl FnMut(&StageGain) -> StageGain) -> Self {
        Self {
            stages: self.stages.iter().map(f).collect(),
            stationary: self.stationary,
        }
    }
}

/// `u^R = -[0 I] K x̂`.
pub fn remote_control(
    k: &DMatrix<f64>,
    local_dim: usize,
    x_hat: &DVector<f64>,
) -> Result<DVector<f64>, DimensionMismatch> {
    if k.nrows() < local_dim {
        return Err(DimensionMismatch {
            what: "K rows",
            expected: local_dim,
            found: k.nrows(),
        });
    }
    StageGain::from_feedback(k.clone(), DMatrix::zeros(local_dim, k.ncols())).remote_control(x_hat)
}

/// `u^L = -[I 0] K x̂ - Λ⁻¹ M x̃`.
pub fn local_control(
    k: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    m: &DMatrix<f64>,
    x_hat: &DVector<f64>,
    x_tilde: &DVector<f64>,
) -> Result<LocalControl, ControlError> {
    Ok(StageGain::new(k.clone(), lambda, m)?.local_control(x_hat, x_tilde)?)
}
