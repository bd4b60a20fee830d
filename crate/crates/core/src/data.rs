//! Synthetic regression tasks, datasets and even partitions.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::points::Points;

/// Deterministic generator for `(seed, stream)`; distinct streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Tent function on `[0, 1]`.
    G1,
    /// Compactly supported radial bump on `[0, 1]^3`.
    G2,
}

impl Target {
    pub fn dim(self) -> usize {
        match self {
            Target::G1 => 1,
            Target::G2 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::G1 => "g1",
            Target::G2 => "g2",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "g1" => Ok(Target::G1),
            "g2" => Ok(Target::G2),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTask {
    target: Target,
    noise_variance: f64,
}

impl SyntheticTask {
    pub fn new(target: Target, noise_variance: f64) -> Result<Self> {
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(Error::invalid(format!(
                "noise variance must be finite and nonnegative, got {noise_variance}"
            )));
        }
        Ok(SyntheticTask {
            target,
            noise_variance,
        })
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Noise-free regression function at `x`.
    pub fn target_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "task {} expects {}-dimensional inputs, got {}",
                self.target.name(),
                self.dim(),
                x.len()
            )));
        }
        Ok(match self.target {
            Target::G1 => g1(x[0]),
            Target::G2 => g2(x.iter().map(|v| v * v).sum::<f64>().sqrt()),
        })
    }
}

/// `x` on `[0, 0.5]`, `1 - x` on `(0.5, 1]`.
fn g1(x: f64) -> f64 {
    if x <= 0.5 {
        x
    } else {
        1.0 - x
    }
}

/// `(1 - r)^6 (35 r^2 + 18 r + 3)` on `[0, 1]`, zero beyond.
fn g2(r: f64) -> f64 {
    if r <= 1.0 {
        let s = 1.0 - r;
        let s3 = s * s * s;
        s3 * s3 * (35.0 * r * r + 18.0 * r + 3.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Points,
    outputs: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Points, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        Ok(Dataset { inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(indices),
            outputs: indices.iter().map(|&i| self.outputs[i]).collect(),
        }
    }

    /// Same inputs, outputs replaced by the noise-free target.
    pub fn noiseless(&self, task: &SyntheticTask) -> Result<Dataset> {
        let outputs = self
            .inputs
            .iter()
            .map(|x| task.target_value(x))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.inputs.clone(), outputs)
    }

    /// Plain-text table: one row per sample, input coordinates then output.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (x, y) in self.inputs.iter().zip(&self.outputs) {
            for v in x {
                let _ = write!(s, "{v:.16e} ");
            }
            let _ = writeln!(s, "{y:.16e}");
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Dataset> {
        let mut dim = None;
        let mut coords = Vec::new();
        let mut outputs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() < 2 {
                return Err(Error::invalid(format!(
                    "line {}: need at least one input and one output",
                    lineno + 1
                )));
            }
            let d = vals.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::invalid(format!("line {}: ragged row", lineno + 1)));
            }
            coords.extend_from_slice(&vals[..d]);
            outputs.push(vals[d]);
        }
        let dim = dim.ok_or_else(|| Error::invalid("empty dataset table"))?;
        Dataset::new(Points::new(dim, coords)?, outputs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_table()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Dataset::from_table(&text)
    }
}

/// Draws `n` inputs uniformly on `[0, 1]^dim`, then the outputs.
///
/// All inputs are drawn before any noise, so the noisy and noiseless
/// datasets of one seed share their inputs.
pub fn generate<R: Rng + ?Sized>(
    task: &SyntheticTask,
    n: usize,
    noisy: bool,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("cannot generate an empty dataset"));
    }
    let dim = task.dim();
    let unit = Uniform::new_inclusive(0.0, 1.0).expect("valid unit interval");
    let coords: Vec<f64> = (0..n * dim).map(|_| unit.sample(rng)).collect();
    let inputs = Points::new(dim, coords)?;
    let mut outputs = inputs
        .iter()
        .map(|x| task.target_value(x))
        .collect::<Result<Vec<_>>>()?;
    if noisy {
        let noise = Normal::new(0.0, task.noise_variance.sqrt())
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
        for y in &mut outputs {
            *y += noise.sample(rng);
        }
    }
    Dataset::new(inputs, outputs)
}

/// Disjoint shards of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    /// Validates disjointness and coverage of `0..n`.
    pub fn from_shards(n: usize, shards: Vec<Vec<usize>>) -> Result<Self> {
        if shards.is_empty() || shards.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("partition needs at least one nonempty shard"));
        }
        let mut seen = vec![false; n];
        for &i in shards.iter().flatten() {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!(
                    "index {i} is out of range or appears in two shards"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("partition does not cover every index"));
        }
        Ok(Partition { shards, n })
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn total(&self) -> usize {
        self.n
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    /// Shard weights `|D_j| / |D|`.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.shards.iter().map(|s| s.len() as f64 / n).collect()
    }

    pub fn split(&self, data: &Dataset) -> Result<Vec<Dataset>> {
        if data.len() != self.n {
            return Err(Error::invalid(format!(
                "partition of {} indices applied to {} samples",
                self.n,
                data.len()
            )));
        }
        Ok(self.shards.iter().map(|s| data.subset(s)).collect())
    }
}

/// Random permutation of `0..n` cut into `m` contiguous blocks whose sizes
/// differ by at most one (larger blocks first).
pub fn partition_even<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Partition> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "cannot split {n} samples across {m} machines"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let base = n / m;
    let extra = n % m;
    let mut shards = Vec::with_capacity(m);
    let mut start = 0;
    for j in 0..m {
        let len = base + usize::from(j < extra);
        shards.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition { shards, n })
}
