//! Cost model for choosing the number of machines.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::kernel::Kernel;

/// Inputs of the cost model. `tau` is the cost of one kernel evaluation
/// measured in floating-point multiply-adds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityModel {
    pub n: f64,
    pub m: f64,
    pub ell: f64,
    pub tau: f64,
}

/// `(Omega_DKRR, Omega_DKRR(ell))`.
pub fn complexity(model: &ComplexityModel) -> Result<(f64, f64)> {
    let ComplexityModel { n, m, ell, tau } = *model;
    if !(n > 0.0 && m > 0.0 && ell >= 0.0 && tau > 0.0) || ![n, m, ell, tau].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("bad cost model inputs {model:?}")));
    }
    let base = n * n * tau / m + n.powi(3) / m.powi(3);
    Ok((base, base + n * n * ell / m + m * n * ell))
}

/// Minimizer over real `m > 0` of `Omega_DKRR(ell)`; undefined for
/// `ell = 0`, where the cost decreases without bound in `m`.
pub fn m_star(n: f64, tau: f64, ell: f64) -> Result<f64> {
    if !(n > 0.0 && tau > 0.0 && ell > 0.0) {
        return Err(Error::invalid(format!(
            "m* needs positive N, tau and ell (got {n}, {tau}, {ell})"
        )));
    }
    let s = tau + ell;
    Ok((((s * s + 12.0 * ell).sqrt() + s) / (2.0 * ell)).sqrt() * n.sqrt())
}

/// Machine count to use: `m*` (rounded down onto `grid`) when the
/// statistical limit exceeds it, otherwise the statistical limit itself.
pub fn m_star_hat(m_star: f64, m_b_hat: Option<usize>, grid: &[usize]) -> Result<usize> {
    let limit = m_b_hat.ok_or_else(|| {
        Error::Config("no machine count in the grid meets the accuracy threshold".into())
    })?;
    if (limit as f64) <= m_star {
        return Ok(limit);
    }
    let below = grid.iter().copied().filter(|&g| (g as f64) <= m_star).max();
    below
        .or_else(|| grid.iter().copied().min())
        .ok_or_else(|| Error::Config("empty machine grid".into()))
}

const CALIBRATION_OPS: usize = 1_000_000;

/// Estimates `tau` as the time of one kernel evaluation over the time of
/// one fused multiply-add, each averaged over a million operations.
pub fn calibrate_tau(kernel: &Kernel, dim: usize) -> Result<f64> {
    kernel.check_dim(dim)?;
    let mut rng = seeded_rng(0xC0FFEE, 0);
    let pool: Vec<Vec<f64>> = (0..1024).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();

    let start = Instant::now();
    let mut acc = 0.0;
    for i in 0..CALIBRATION_OPS {
        let x = &pool[i & 1023];
        let y = &pool[(i * 7 + 3) & 1023];
        acc += kernel.eval_unchecked(black_box(x), black_box(y));
    }
    black_box(acc);
    let kernel_time = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut acc = [0.0f64; 4];
    let (a, b) = (black_box(1.000_000_1), black_box(0.999_999_9));
    for _ in 0..CALIBRATION_OPS / 4 {
        for v in acc.iter_mut() {
            *v = black_box(v.mul_add(a, b));
        }
    }
    black_box(acc);
    let fma_time = start.elapsed().as_secs_f64();

    if !(kernel_time > 0.0 && fma_time > 0.0) {
        return Err(Error::NumericalFailure { size: 0, lambda: None });
    }
    Ok(kernel_time / fma_time)
}
