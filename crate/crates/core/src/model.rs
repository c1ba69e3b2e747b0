//! Plant, channel and cost description of a two-controller networked system.
//!
//! The plant is `x_{k+1} = A x_k + B^L u^L_k + B^R u^R_k + w_k`, where the
//! local controller sees `x_k` and the remote controller only sees the packets
//! that survive an i.i.d. erasure channel with drop probability `p`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, serde_matrix};

/// Relative asymmetry tolerated (and then symmetrized away) on weight and covariance fields.
pub const SYMMETRY_REL_TOL: f64 = 1e-9;
/// Relative singular value cutoff for rank decisions.
pub const RANK_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{field}: expected {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    DimensionMismatch {
        field: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} is not positive semi-definite")]
    NotPsd(&'static str),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("model contains a non-finite entry")]
    NonFinite,
    #[error("drop probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("invalid model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read model: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcsModel {
    #[serde(rename = "A", with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(rename = "BL", with = "serde_matrix")]
    pub b_local: DMatrix<f64>,
    #[serde(rename = "BR", with = "serde_matrix")]
    pub b_remote: DMatrix<f64>,
    #[serde(rename = "Q", with = "serde_matrix")]
    pub q: DMatrix<f64>,
    #[serde(rename = "RL", with = "serde_matrix")]
    pub r_local: DMatrix<f64>,
    #[serde(rename = "RR", with = "serde_matrix")]
    pub r_remote: DMatrix<f64>,
    #[serde(rename = "P_terminal", with = "serde_matrix")]
    pub p_terminal: DMatrix<f64>,
    #[serde(rename = "Q_omega", with = "serde_matrix")]
    pub q_omega: DMatrix<f64>,
    /// Packet-drop probability.
    pub p: f64,
    #[serde(with = "serde_matrix::vector")]
    pub x0_mean: DVector<f64>,
    #[serde(rename = "P0", with = "serde_matrix")]
    pub p0: DMatrix<f64>,
}

impl NcsModel {
    /// Scalar vehicle-positioning example: `x_{k+1} = x_k + v^L_k + v^R_k + w_k`
    /// with `x = position - destination`, destination 30, start mean 0.
    pub fn uav(p: f64) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            a: s(1.0),
            b_local: s(1.0),
            b_remote: s(1.0),
            q: s(0.01),
            r_local: s(5.0),
            r_remote: s(5.0),
            p_terminal: s(0.0),
            q_omega: s(1.0),
            p,
            x0_mean: DVector::from_element(1, -30.0),
            p0: s(1.0),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn local_dim(&self) -> usize {
        self.b_local.ncols()
    }

    pub fn remote_dim(&self) -> usize {
        self.b_remote.ncols()
    }

    /// Stacked input map `[B^L B^R]`.
    pub fn b_stacked(&self) -> DMatrix<f64> {
        linalg::hstack(&self.b_local, &self.b_remote)
    }

    /// `blkdiag(R^L, R^R)`.
    pub fn r_stacked(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.r_local, &self.r_remote)
    }

    pub fn with_p(&self, p: f64) -> Self {
        Self { p, ..self.clone() }
    }

    /// Checks every structural invariant, symmetrizing nearly-symmetric fields.
    pub fn validate(mut self) -> Result<Self, ModelError> {
        let n = self.a.nrows();
        let ml = self.b_local.ncols();
        let mr = self.b_remote.ncols();
        if n == 0 {
            return Err(dim("A", 1, 1, 0, 0));
        }
        check_shape("A", &self.a, n, n)?;
        check_shape("BL", &self.b_local, n, ml)?;
        check_shape("BR", &self.b_remote, n, mr)?;
        if ml == 0 {
            return Err(dim("BL", n, 1, n, 0));
        }
        if mr == 0 {
            return Err(dim("BR", n, 1, n, 0));
        }
        check_shape("Q", &self.q, n, n)?;
        check_shape("RL", &self.r_local, ml, ml)?;
        check_shape("RR", &self.r_remote, mr, mr)?;
        check_shape("P_terminal", &self.p_terminal, n, n)?;
        check_shape("Q_omega", &self.q_omega, n, n)?;
        check_shape("P0", &self.p0, n, n)?;
        if self.x0_mean.len() != n {
            return Err(dim("x0_mean", n, 1, self.x0_mean.len(), 1));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ModelError::ProbabilityOutOfRange(self.p));
        }
        let finite = [
            &self.a,
            &self.b_local,
            &self.b_remote,
            &self.q,
            &self.r_local,
            &self.r_remote,
            &self.p_terminal,
            &self.q_omega,
            &self.p0,
        ]
        .iter()
        .all(|m| m.iter().all(|v| v.is_finite()))
            && self.x0_mean.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::NonFinite);
        }

        for (field, m) in [
            ("Q", &mut self.q),
            ("RL", &mut self.r_local),
            ("RR", &mut self.r_remote),
            ("P_terminal", &mut self.p_terminal),
            ("Q_omega", &mut self.q_omega),
            ("P0", &mut self.p0),
        ] {
            let scale = linalg::max_abs(m).max(1.0);
            if linalg::max_abs(&(&*m - m.transpose())) > SYMMETRY_REL_TOL * scale {
                return Err(ModelError::NotSymmetric(field));
            }
            *m = linalg::symmetrize(m);
            if !linalg::is_psd(m) {
                return Err(ModelError::NotPsd(field));
            }
        }
        Ok(self)
    }

    /// [`validate`](Self::validate) plus `R^L ≻ 0`, `R^R ≻ 0`, as required by the
    /// infinite-horizon solver.
    pub fn validate_strict(self) -> Result<Self, ModelError> {
        let m = self.validate()?;
        if !linalg::is_pd(&m.r_local) {
            return Err(ModelError::NotPositiveDefinite("RL"));
        }
        if !linalg::is_pd(&m.r_remote) {
            return Err(ModelError::NotPositiveDefinite("RR"));
        }
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn dim(field: &'static str, er: usize, ec: usize, r: usize, c: usize) -> ModelError {
    ModelError::DimensionMismatch {
        field,
        expected_rows: er,
        expected_cols: ec,
        rows: r,
        cols: c,
    }
}

fn check_shape(
    field: &'static str,
    m: &DMatrix<f64>,
    r: usize,
    c: usize,
) -> Result<(), ModelError> {
    if m.shape() == (r, c) {
        Ok(())
    } else {
        Err(dim(field, r, c, m.nrows(), m.ncols()))
    }
}

/// Observability of `(A, Q^{1/2})` with `Q^{1/2}` the symmetric PSD root.
pub fn check_observability(a: &DMatrix<f64>, q: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let c = linalg::sym_sqrt(q);
    let mut obs = DMatrix::zeros(n * n, n);
    let mut block = c.clone();
    for i in 0..n {
        obs.view_mut((i * n, 0), (n, n)).copy_from(&block);
        block = &block * a;
    }
    linalg::rank(&obs, RANK_REL_TOL) == n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn uav_model_is_accepted() {
        let m = NcsModel::uav(0.5).validate_strict().unwrap();
        assert_eq!(m.state_dim(), 1);
        assert_eq!(m.b_stacked().shape(), (1, 2));
    }

    #[test]
    fn probability_out_of_range() {
        let err = NcsModel::uav(1.2).validate().unwrap_err();
        assert!(matches!(err, ModelError::ProbabilityOutOfRange(p) if p == 1.2));
    }

    #[test]
    fn negative_local_weight_is_not_psd() {
        let mut m = NcsModel::uav(0.5);
        m.r_local = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(m.validate(), Err(ModelError::NotPsd("RL"))));
    }

    #[test]
    fn zero_weights_pass_loose_but_fail_strict() {
        let mut m = NcsModel::uav(0.5);
        m.r_remote = DMatrix::zeros(1, 1);
        assert!(m.clone().validate().is_ok());
        assert!(matches!(
            m.validate_strict(),
            Err(ModelError::NotPositiveDefinite("RR"))
        ));
    }

    #[test]
    fn shape_errors_name_the_field() {
        let mut m = NcsModel::uav(0.5);
        m.b_remote = DMatrix::zeros(2, 1);
        assert!(matches!(
            m.validate(),
            Err(ModelError::DimensionMismatch { field: "BR", .. })
        ));
        let mut m = NcsModel::uav(0.5);
        m.x0_mean = DVector::zeros(3);
        assert!(matches!(
            m.validate(),
            Err(ModelError::DimensionMismatch {
                field: "x0_mean",
                ..
            })
        ));
    }

    #[test]
    fn asymmetry_is_symmetrized_or_rejected() {
        let mut m = NcsModel::uav(0.5);
        m.a = DMatrix::identity(2, 2);
        m.b_local = DMatrix::from_element(2, 1, 1.0);
        m.b_remote = DMatrix::from_element(2, 1, 1.0);
        m.p_terminal = DMatrix::zeros(2, 2);
        m.q_omega = DMatrix::identity(2, 2);
        m.p0 = DMatrix::identity(2, 2);
        m.x0_mean = DVector::zeros(2);
        m.q = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 1e-12, 0.1, 1.0]);
        let ok = m.clone().validate().unwrap();
        assert_eq!(ok.q, ok.q.transpose());
        m.q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        assert!(matches!(m.validate(), Err(ModelError::NotSymmetric("Q"))));
    }

    #[test]
    fn observability_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(check_observability(
            &one,
            &DMatrix::from_element(1, 1, 0.01)
        ));
        assert!(!check_observability(
            &DMatrix::identity(2, 2),
            &diag(&[1.0, 0.0])
        ));
        assert!(check_observability(
            &DMatrix::zeros(3, 3),
            &DMatrix::identity(3, 3)
        ));
        // Shift chain: observing the last state reveals the whole chain.
        let shift = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert!(check_observability(&shift, &diag(&[0.0, 1.0])));
        assert!(!check_observability(&shift, &diag(&[1.0, 0.0])));
    }

    #[test]
    fn json_uses_field_names_and_nested_rows() {
        let m = NcsModel::uav(0.25);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in [
            "A",
            "BL",
            "BR",
            "Q",
            "RL",
            "RR",
            "P_terminal",
            "Q_omega",
            "p",
            "x0_mean",
            "P0",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["A"], serde_json::json!([[1.0]]));
        assert_eq!(v["x0_mean"], serde_json::json!([-30.0]));
    }
}
