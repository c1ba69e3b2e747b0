#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ncs_core::NcsModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Classical single-controller Riccati value iteration
/// `P ← A'PA + Q − A'PB (R + B'PB)⁻¹ B'PA`, from `P = 0`.
pub fn lqr_value_iteration(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(a.nrows(), a.ncols());
    for _ in 0..max_iter {
        let next = lqr_step(a, b, q, r, &p);
        let gap = (&next - &p).abs().max();
        p = next;
        if gap < tol {
            break;
        }
    }
    p
}

pub fn lqr_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let gain_inv = (r + b.transpose() * p * b)
        .try_inverse()
        .expect("R + B'PB invertible");
    let next = a.transpose() * p * a + q - a.transpose() * p * b * gain_inv * b.transpose() * p * a;
    (&next + next.transpose()) * 0.5
}

/// Finite-horizon classical LQR `P_k` sequence from `P_{N+1}`; index 0..=N+1.
pub fn lqr_recursion(model: &NcsModel, horizon: usize) -> Vec<DMatrix<f64>> {
    let b = stack(&model.b_local, &model.b_remote);
    let r = blkdiag(&model.r_local, &model.r_remote);
    let mut out = vec![model.p_terminal.clone(); horizon + 2];
    for k in (0..=horizon).rev() {
        out[k] = lqr_step(&model.a, &b, &model.q, &r, &out[k + 1]);
    }
    out
}

pub fn stack(l: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(l.nrows(), l.ncols() + r.ncols(), |i, j| {
        if j < l.ncols() {
            l[(i, j)]
        } else {
            r[(i, j - l.ncols())]
        }
    })
}

pub fn blkdiag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    DMatrix::from_fn(ra + b.nrows(), ca + b.ncols(), |i, j| {
        if i < ra && j < ca {
            a[(i, j)]
        } else if i >= ra && j >= ca {
            b[(i - ra, j - ca)]
        } else {
            0.0
        }
    })
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / a.abs().max().max(b.abs().max()).max(f64::MIN_POSITIVE)
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let c = gaussian(rng, n, n);
    &c * c.transpose() * (1.0 / n as f64) + DMatrix::identity(n, n) * floor
}

/// Random valid model with `n ≤ 4`, `R^L, R^R, Q ≻ 0` and a moderately
/// scaled `A`, so that both stationary equations have solutions.
pub fn random_model(seed: u64, p: f64) -> NcsModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let ml = rng.random_range(1..=2);
    let mr = rng.random_range(1..=2);
    let a = gaussian(&mut rng, n, n) * (0.9 / (n as f64).sqrt());
    NcsModel {
        b_local: gaussian(&mut rng, n, ml),
        b_remote: gaussian(&mut rng, n, mr),
        q: random_pd(&mut rng, n, 0.1),
        r_local: random_pd(&mut rng, ml, 0.5),
        r_remote: random_pd(&mut rng, mr, 0.5),
        p_terminal: DMatrix::zeros(n, n),
        q_omega: random_pd(&mut rng, n, 0.0),
        p,
        x0_mean: DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0),
        p0: random_pd(&mut rng, n, 0.0),
        a,
    }
    .validate()
    .expect("random model is valid")
}
