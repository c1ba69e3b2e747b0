//! Seeded Monte Carlo simulation of the closed loop.
//!
//! Each rollout owns a `ChaCha8Rng` seeded with `seed ^ splitmix64(index)`, so
//! rollouts are order independent and can run in parallel; results are
//! reduced in index order. Within a rollout the draws happen in a fixed
//! order: the `n` normals of `x_0`, then `η_0`, then per step `k` the channel
//! draw `η_k` (for `k > 0`) followed by `n` normals of `w_k` when noise is on,
//! and finally `η_{N+1}`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControlError, GainSchedule};
use crate::estimator::EstimatorState;
use crate::linalg::{self, DimensionMismatch};
use crate::model::NcsModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("gain schedule covers k = 0..={available}, simulation needs 0..={requested}")]
    HorizonTooShort { available: usize, requested: usize },
    #[error("at least one rollout is required")]
    NoRollouts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub rollouts: usize,
    pub horizon: usize,
    /// Additive plant noise on (`w_k ~ N(0, Q_ω)`) or off.
    pub noise_enabled: bool,
    pub record_trace: bool,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rollout_rng(seed: u64, rollout_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ splitmix64(rollout_index as u64))
}

/// One closed-loop realization, `k = 0..=N` plus the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub x: Vec<DVector<f64>>,
    pub eta: Vec<bool>,
    pub u_local: Vec<DVector<f64>>,
    /// Error-feedback part `ũ^L_k` of the local input.
    pub u_local_error: Vec<DVector<f64>>,
    pub u_remote: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub x_tilde: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    pub stage_cost: Vec<f64>,
    pub x_terminal: DVector<f64>,
    pub eta_terminal: bool,
    pub x_hat_terminal: DVector<f64>,
    pub x_tilde_terminal: DVector<f64>,
    pub terminal_cost: f64,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.x.len() - 1
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_cost.iter().sum::<f64>() + self.terminal_cost
    }

    /// State at `k = 0..=N+1`.
    pub fn state(&self, k: usize) -> &DVector<f64> {
        self.x.get(k).unwrap_or(&self.x_terminal)
    }

    pub fn estimate(&self, k: usize) -> &DVector<f64> {
        self.x_hat.get(k).unwrap_or(&self.x_hat_terminal)
    }

    pub fn error(&self, k: usize) -> &DVector<f64> {
        self.x_tilde.get(k).unwrap_or(&self.x_tilde_terminal)
    }

    /// CSV with one row per stage and a final `k = N+1` row whose input columns
    /// are empty and whose `stage_cost` holds the terminal cost.
    pub fn to_csv(&self) -> String {
        let n = self.x_terminal.len();
        let ml = self.u_local.first().map_or(0, |u| u.len());
        let mr = self.u_remote.first().map_or(0, |u| u.len());
        let mut header = vec!["k".to_string(), "eta".to_string()];
        for (prefix, len) in [("x", n), ("xhat", n), ("xtilde", n), ("uL", ml), ("uR", mr)] {
            header.extend((0..len).map(|i| format!("{prefix}_{i}")));
        }
        header.push("stage_cost".to_string());
        let mut out = header.join(",");
        out.push('\n');

        let push_vec = |out: &mut String, v: &DVector<f64>| {
            for val in v.iter() {
                let _ = write!(out, ",{val}");
            }
        };
        for k in 0..self.x.len() {
            let _ = write!(out, "{k},{}", u8::from(self.eta[k]));
            push_vec(&mut out, &self.x[k]);
            push_vec(&mut out, &self.x_hat[k]);
            push_vec(&mut out, &self.x_tilde[k]);
            push_vec(&mut out, &self.u_local[k]);
            push_vec(&mut out, &self.u_remote[k]);
            let _ = writeln!(out, ",{}", self.stage_cost[k]);
        }
        let _ = write!(out, "{},{}", self.x.len(), u8::from(self.eta_terminal));
        push_vec(&mut out, &self.x_terminal);
        push_vec(&mut out, &self.x_hat_terminal);
        push_vec(&mut out, &self.x_tilde_terminal);
        out.push_str(&",".repeat(ml + mr));
        let _ = writeln!(out, ",{}", self.terminal_cost);
        out
    }
}

/// Sample mean with its standard error `s / √n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self {
                mean,
                std_error: 0.0,
            };
        }
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
        }
    }

    /// `|mean - target| <= sigmas * std_error`.
    pub fn contains(&self, target: f64, sigmas: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_total_cost: f64,
    pub cost_std_error: f64,
    /// `E[x_k' x_k]` for `k = 0..=N+1`.
    pub mean_square_state: Vec<f64>,
    pub mean_square_state_std_error: Vec<f64>,
    pub rollouts: usize,
    pub seed: u64,
}

impl Aggregates {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serialization is infallible")
    }
}

/// Closed loop bound to a model, gains and configuration.
pub struct Simulator<'a> {
    model: &'a NcsModel,
    gains: &'a GainSchedule,
    config: SimConfig,
    x0_factor: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a NcsModel,
        gains: &'a GainSchedule,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        if let Some(available) = gains.horizon() {
            if available < config.horizon {
                return Err(SimError::HorizonTooShort {
                    available,
                    requested: config.horizon,
                });
            }
        }
        let n = model.state_dim();
        let stage = gains.at(0);
        DimensionMismatch::check("gain columns", n, stage.k.ncols())?;
        DimensionMismatch::check("local gain rows", model.local_dim(), stage.local_dim)?;
        DimensionMismatch::check("remote gain rows", model.remote_dim(), stage.remote_dim())?;
        Ok(Self {
            model,
            gains,
            config,
            x0_factor: linalg::covariance_factor(&model.p0),
            noise_factor: linalg::covariance_factor(&model.q_omega),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    pub fn rollout(&self, rollout_index: usize) -> Result<Trace, SimError> {
        let model = self.model;
        let n = model.state_dim();
        let horizon = self.config.horizon;
        let arrive = 1.0 - model.p;
        let mut rng = rollout_rng(self.config.seed, rollout_index);

        let x0 = &model.x0_mean + &self.x0_factor * Self::normal_vector(&mut rng, n);
        let eta0 = rng.random::<f64>() < arrive;
        let mut est = EstimatorState::init(eta0, &x0, &model.x0_mean)?;

        let cap = horizon + 1;
        let mut trace = Trace {
            x: Vec::with_capacity(cap),
            eta: Vec::with_capacity(cap),
            u_local: Vec::with_capacity(cap),
            u_local_error: Vec::with_capacity(cap),
            u_remote: Vec::with_capacity(cap),
            x_hat: Vec::with_capacity(cap),
            x_tilde: Vec::with_capacity(cap),
            noise: Vec::with_capacity(cap),
            stage_cost: Vec::with_capacity(cap),
            x_terminal: DVector::zeros(n),
            eta_terminal: false,
            x_hat_terminal: DVector::zeros(n),
            x_tilde_terminal: DVector::zeros(n),
            terminal_cost: 0.0,
        };

        let mut x = x0;
        let mut eta = eta0;
        for k in 0..=horizon {
            if k > 0 {
                eta = rng.random::<f64>() < arrive;
                est.receive(eta, &x)?;
            }
            let x_hat = est.x_hat_filtered.clone();
            let x_tilde = est.error(&x)?;
            let stage = self.gains.at(k);
            let u_remote = stage.remote_control(&x_hat)?;
            let local = stage.local_control(&x_hat, &x_tilde)?;
            let u_local = local.total();

            let cost = x.dot(&(&model.q * &x))
                + u_local.dot(&(&model.r_local * &u_local))
                + u_remote.dot(&(&model.r_remote * &u_remote));
            let w = if self.config.noise_enabled {
                &self.noise_factor * Self::normal_vector(&mut rng, n)
            } else {
                DVector::zeros(n)
            };
            let x_next =
                &model.a * &x + &model.b_local * &u_local + &model.b_remote * &u_remote + &w;
            est.advance(&local.estimate_part, &u_remote, model)?;

            trace.x.push(x);
            trace.eta.push(eta);
            trace.u_local.push(u_local);
            trace.u_local_error.push(local.error_part);
            trace.u_remote.push(u_remote);
            trace.x_hat.push(x_hat);
            trace.x_tilde.push(x_tilde);
            trace.noise.push(w);
            trace.stage_cost.push(cost);
            x = x_next;
        }
        trace.eta_terminal = rng.random::<f64>() < arrive;
        est.receive(trace.eta_terminal, &x)?;
        trace.x_hat_terminal = est.x_hat_filtered.clone();
        trace.x_tilde_terminal = est.error(&x)?;
        trace.terminal_cost = x.dot(&(&model.p_terminal * &x));
        trace.x_terminal = x;
        Ok(trace)
    }

    /// Runs every rollout (in parallel) and returns `f` of each, in index order.
    pub fn map_rollouts<T, F>(&self, f: F) -> Result<Vec<T>, SimError>
    where
        T: Send,
        F: Fn(usize, &Trace) -> T + Sync,
    {
        if self.config.rollouts == 0 {
            return Err(SimError::NoRollouts);
        }
        (0..self.config.rollouts)
            .into_par_iter()
            .map(|i| self.rollout(i).map(|t| f(i, &t)))
            .collect()
    }

    pub fn monte_carlo(&self) -> Result<Aggregates, SimError> {
        let summaries = self.map_rollouts(|_, t| {
            let sq: Vec<f64> = (0..=t.horizon() + 1)
                .map(|k| t.state(k).norm_squared())
                .collect();
            (t.total_cost(), sq)
        })?;
        let costs: Vec<f64> = summaries.iter().map(|s| s.0).collect();
        let cost = Estimate::from_samples(&costs);
        let steps = self.config.horizon + 2;
        let mut column = vec![0.0; summaries.len()];
        let mut ms = Vec::with_capacity(steps);
        let mut ms_se = Vec::with_capacity(steps);
        for k in 0..steps {
            for (slot, s) in column.iter_mut().zip(&summaries) {
                *slot = s.1[k];
            }
            let e = Estimate::from_samples(&column);
            ms.push(e.mean);
            ms_se.push(e.std_error);
        }
        Ok(Aggregates {
            mean_total_cost: cost.mean,
            cost_std_error: cost.std_error,
            mean_square_state: ms,
            mean_square_state_std_error: ms_se,
            rollouts: self.config.rollouts,
            seed: self.config.seed,
        })
    }
}

pub fn rollout(
    model: &NcsModel,
    gains: &GainSchedule,
    config: &SimConfig,
    rollout_index: usize,
) -> Result<Trace, SimError> {
    Simulator::new(model, gains, *config)?.rollout(rollout_index)
}

pub fn monte_carlo(
    model: &NcsModel,
    gains: &GainSchedule,
    config: &SimConfig,
) -> Result<Aggregates, SimError> {
    Simulator::new(model, gains, *config)?.monte_carlo()
}
