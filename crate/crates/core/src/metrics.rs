//! Evaluation criteria and spectral diagnostics.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::symmetric_eigenvalues;
use crate::points::Points;

/// Eigenvalues above `-EIGEN_CLIP` are treated as round-off and clipped to zero.
pub const EIGEN_CLIP: f64 = 1e-10;

/// Distance below which contraction ratios are no longer recorded.
pub const CONTRACTION_FLOOR: f64 = 1e-12;

pub fn mse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::invalid(format!(
            "mse of {} predictions against {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let sum: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predictions.len() as f64)
}

/// `|dist - gmse| / gmse`.
pub fn relative_error(dist_mse: f64, gmse: f64) -> Result<f64> {
    if !(gmse > 0.0) {
        return Err(Error::invalid(format!("relative error needs a positive baseline, got {gmse}")));
    }
    Ok((dist_mse - gmse).abs() / gmse)
}

/// Largest grid value of `m` whose relative error is below `epsilon`.
///
/// Non-finite errors (diverged cells) never qualify. `None` when no grid
/// point does.
pub fn max_machines(re_values: &[(usize, f64)], epsilon: f64) -> Result<Option<usize>> {
    if re_values.is_empty() {
        return Err(Error::invalid("machine-count grid is empty"));
    }
    Ok(re_values
        .iter()
        .filter(|(_, re)| re.is_finite() && *re < epsilon)
        .map(|(m, _)| *m)
        .max())
}

/// `sum_i s_i / (s_i + lambda)` with `s_i` the eigenvalues of `Gram / n`.
///
/// `gram_eigenvalues` are the raw Gram eigenvalues; values down to
/// `-EIGEN_CLIP` are clipped to zero, anything lower is rejected.
pub fn effective_dimension(gram_eigenvalues: &[f64], lambda: f64, n: usize) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("effective dimension needs a positive lambda"));
    }
    if n == 0 {
        return Err(Error::invalid("effective dimension needs a positive sample size"));
    }
    let n = n as f64;
    let mut total = 0.0;
    for &e in gram_eigenvalues {
        if e < -EIGEN_CLIP || e.is_nan() {
            return Err(Error::invalid(format!(
                "Gram eigenvalue {e:e} is negative beyond round-off; kernel is not PSD"
            )));
        }
        let s = e.max(0.0) / n;
        total += s / (s + lambda);
    }
    Ok(total)
}

/// Empirical effective dimension of a point set.
pub fn empirical_effective_dimension(kernel: &Kernel, points: &Points, lambda: f64) -> Result<f64> {
    let gram = kernel.gram_symmetric(points)?;
    let eig = symmetric_eigenvalues(gram.as_ref())?;
    effective_dimension(&eig, lambda, points.len())
}

/// The pair of diagnostic quantities
/// `A = (1/sqrt n)(1/sqrt(n lambda) + sqrt N)` and
/// `B = (1 + log N)/(lambda n) + sqrt((1 + log N)/(lambda n))`, `N` being the
/// effective dimension.
pub fn diag_quantities(n: usize, lambda: f64, eff_dim: f64) -> Result<(f64, f64)> {
    if n == 0 || !(lambda > 0.0) {
        return Err(Error::invalid("diagnostics need n >= 1 and lambda > 0"));
    }
    if !(eff_dim >= 1.0) {
        return Err(Error::invalid(format!(
            "diagnostics need an effective dimension of at least 1, got {eff_dim}"
        )));
    }
    let n = n as f64;
    let a = (1.0 / (n * lambda).sqrt() + eff_dim.sqrt()) / n.sqrt();
    let t = (1.0 + eff_dim.ln()) / (lambda * n);
    Ok((a, t + t.sqrt()))
}

/// Per-round ratios `d_l / d_{l-1}`, stopping once the previous distance is
/// below [`CONTRACTION_FLOOR`].
pub fn contraction_estimate(distances: &[f64]) -> Vec<f64> {
    distances
        .windows(2)
        .take_while(|w| w[0] >= CONTRACTION_FLOOR)
        .map(|w| w[1] / w[0])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Criterion {
    /// Test MSE of batch KRR on the whole sample.
    Gmse,
    /// Test MSE of weighted averaging without communication.
    Ae,
    /// Test MSE with communication rounds.
    Aec,
    Re,
    Rec,
    /// Test MSE of KRR on one machine's noiseless shard.
    LocalApprox,
    MBarB,
    MHatB,
    MStar,
    MStarHat,
    OmegaDkrr,
    OmegaDkrrL,
    Tau,
    EffDim,
    DiagA,
    DiagB,
    Contraction,
}

impl Criterion {
    pub const ALL: [Criterion; 17] = [
        Criterion::Gmse,
        Criterion::Ae,
        Criterion::Aec,
        Criterion::Re,
        Criterion::Rec,
        Criterion::LocalApprox,
        Criterion::MBarB,
        Criterion::MHatB,
        Criterion::MStar,
        Criterion::MStarHat,
        Criterion::OmegaDkrr,
        Criterion::OmegaDkrrL,
        Criterion::Tau,
        Criterion::EffDim,
        Criterion::DiagA,
        Criterion::DiagB,
        Criterion::Contraction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Gmse => "GMSE",
            Criterion::Ae => "AE",
            Criterion::Aec => "AEC",
            Criterion::Re => "RE",
            Criterion::Rec => "REC",
            Criterion::LocalApprox => "LOCAL_APPROX",
            Criterion::MBarB => "M_BAR_B",
            Criterion::MHatB => "M_HAT_B",
            Criterion::MStar => "M_STAR",
            Criterion::MStarHat => "M_STAR_HAT",
            Criterion::OmegaDkrr => "OMEGA_DKRR",
            Criterion::OmegaDkrrL => "OMEGA_DKRR_L",
            Criterion::Tau => "TAU",
            Criterion::EffDim => "EFF_DIM",
            Criterion::DiagA => "DIAG_A",
            Criterion::DiagB => "DIAG_B",
            Criterion::Contraction => "CONTRACTION",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown criterion `{s}`")))
    }
}

/// Which trial a record belongs to; `Mean` rows aggregate all trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Trial {
    Index(usize),
    Mean,
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trial::Index(i) => write!(f, "{i}"),
            Trial::Mean => f.write_str("mean"),
        }
    }
}

impl FromStr for Trial {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mean" {
            return Ok(Trial::Mean);
        }
        s.parse()
            .map(Trial::Index)
            .map_err(|_| Error::invalid(format!("bad trial field `{s}`")))
    }
}

/// Everything that identifies the run a value came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunContext {
    pub simulation: String,
    pub task: String,
    pub kernel: String,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub ell: Option<usize>,
    pub lambda: Option<f64>,
    pub trial: Trial,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub criterion: Criterion,
    pub value: f64,
    pub context: RunContext,
    pub wall_time_s: f64,
    pub diverged: bool,
    pub comm_floats: u64,
}

impl MetricsRecord {
    pub fn new(criterion: Criterion, value: f64, context: RunContext) -> Self {
        MetricsRecord {
            criterion,
            value,
            context,
            wall_time_s: 0.0,
            diverged: false,
            comm_floats: 0,
        }
    }

    pub fn with_time(mut self, seconds: f64) -> Self {
        self.wall_time_s = seconds;
        self
    }

    pub fn with_comm(mut self, floats: u64) -> Self {
        self.comm_floats = floats;
        self
    }

    /// Marks the record diverged; its value becomes NaN.
    pub fn diverged(mut self) -> Self {
        self.diverged = true;
        self.value = f64::NAN;
        self
    }
}
