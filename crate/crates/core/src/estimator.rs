//! Remote-side state estimate under packet drops.
//!
//! The acknowledgment channel is perfect, so the local controller can
//! replicate this estimate exactly; one instance serves both controllers.
//! Within a step the order is: channel draw, [`measurement_update`], control
//! computation, plant update, [`time_update`].

use nalgebra::DVector;

use crate::linalg::DimensionMismatch;
use crate::model::NcsModel;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub k: usize,
    /// `x̂_{k|k}`.
    pub x_hat_filtered: DVector<f64>,
    /// `x̂_{k+1|k}`, valid once [`EstimatorState::advance`] has run for step `k`.
    pub x_hat_predicted: Option<DVector<f64>>,
}

impl EstimatorState {
    /// Initial estimate: the state itself if the first packet arrived, else its prior mean.
    pub fn init(
        eta0: bool,
        x0: &DVector<f64>,
        x0_mean: &DVector<f64>,
    ) -> Result<Self, DimensionMismatch> {
        DimensionMismatch::check("x0_mean", x0.len(), x0_mean.len())?;
        Ok(Self {
            k: 0,
            x_hat_filtered: if eta0 { x0.clone() } else { x0_mean.clone() },
            x_hat_predicted: None,
        })
    }

    pub fn error(&self, x: &DVector<f64>) -> Result<DVector<f64>, DimensionMismatch> {
        error(x, &self.x_hat_filtered)
    }

    /// Stores the one-step prediction for `k + 1`.
    pub fn advance(
        &mut self,
        u_hat_local: &DVector<f64>,
        u_remote: &DVector<f64>,
        model: &NcsModel,
    ) -> Result<(), DimensionMismatch> {
        self.x_hat_predicted = Some(time_update(
            &self.x_hat_filtered,
            u_hat_local,
            u_remote,
            model,
        )?);
        Ok(())
    }

    /// Consumes the prediction with the channel outcome of step `k + 1`.
    pub fn receive(&mut self, eta: bool, x: &DVector<f64>) -> Result<(), DimensionMismatch> {
        let pred = self
            .x_hat_predicted
            .take()
            .expect("receive called without a prior time update");
        self.x_hat_filtered = measurement_update(&pred, eta, x)?;
        self.k += 1;
        Ok(())
    }
}

/// `x̂_{k|k} = x` if the packet arrived, else the prediction. When `eta` is
/// false the result does not depend on `x` at all.
pub fn measurement_update(
    pred: &DVector<f64>,
    eta: bool,
    x: &DVector<f64>,
) -> Result<DVector<f64>, DimensionMismatch> {
    DimensionMismatch::check("measurement", pred.len(), x.len())?;
    Ok(if eta { x.clone() } else { pred.clone() })
}

/// Predictor `A x̂ + B^L û^L + B^R u^R`. Only the estimate-driven part of the
/// local input enters, since the error-feedback part has zero conditional mean.
pub fn time_update(
    x_hat: &DVector<f64>,
    u_hat_local: &DVector<f64>,
    u_remote: &DVector<f64>,
    model: &NcsModel,
) -> Result<DVector<f64>, DimensionMismatch> {
    DimensionMismatch::check("estimate", model.state_dim(), x_hat.len())?;
    DimensionMismatch::check("local input", model.local_dim(), u_hat_local.len())?;
    DimensionMismatch::check("remote input", model.remote_dim(), u_remote.len())?;
    Ok(&model.a * x_hat + &model.b_local * u_hat_local + &model.b_remote * u_remote)
}

pub fn error(
    x: &DVector<f64>,
    x_hat_filtered: &DVector<f64>,
) -> Result<DVector<f64>, DimensionMismatch> {
    DimensionMismatch::check("estimate", x.len(), x_hat_filtered.len())?;
    Ok(x - x_hat_filtered)
}
