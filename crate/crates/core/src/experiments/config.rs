//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Target;
use crate::error::{Error, Result};
use crate::kernel::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Simulation {
    Motivation,
    Sim1,
    Sim2,
    Sim3,
    Single,
}

impl Simulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Simulation::Motivation => "motivation",
            Simulation::Sim1 => "sim1",
            Simulation::Sim2 => "sim2",
            Simulation::Sim3 => "sim3",
            Simulation::Single => "single",
        }
    }
}

impl fmt::Display for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Simulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motivation" => Ok(Simulation::Motivation),
            "sim1" => Ok(Simulation::Sim1),
            "sim2" => Ok(Simulation::Sim2),
            "sim3" => Ok(Simulation::Sim3),
            "single" => Ok(Simulation::Single),
            other => Err(Error::Config(format!("unknown simulation `{other}`"))),
        }
    }
}

/// A scalar or a list in the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> From<OneOrMany<T>> for Vec<T> {
    fn from(v: OneOrMany<T>) -> Self {
        match v {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

/// Config file contents; every field optional, missing ones take the
/// simulation's defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    simulation: Option<Simulation>,
    task: Option<Target>,
    kernel: Option<String>,
    n: Option<OneOrMany<usize>>,
    m: Option<OneOrMany<usize>>,
    ell: Option<OneOrMany<usize>>,
    lambda: Option<OneOrMany<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    epsilon: Option<f64>,
    out: Option<PathBuf>,
    n_test: Option<usize>,
    n_validation: Option<usize>,
    noise_variance: Option<f64>,
    tune_per_cell: Option<bool>,
    tau: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Config(format!(
            "cannot read config {}: {e}",
            path.as_ref().display()
        )))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub simulation: Simulation,
    pub task: Target,
    pub kernel: String,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub ell: Vec<usize>,
    pub lambda: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub out: PathBuf,
    pub n_test: usize,
    /// Hold-out set for lambda selection, drawn like the training data.
    pub n_validation: usize,
    pub noise_variance: f64,
    /// Tune lambda per `(m, ell)` cell instead of once per `(task, N)`.
    pub tune_per_cell: bool,
    /// Kernel-evaluation cost for the complexity model; calibrated when absent.
    pub tau: Option<f64>,
}

/// `count` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

/// 20 values from `1e-8` to `1`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-8, 1.0, 20)
}

fn step_grid(start: usize, step: usize, end: usize) -> Vec<usize> {
    (start..=end).step_by(step).collect()
}

fn default_kernel(task: Target) -> &'static str {
    match task {
        Target::G1 => "min",
        Target::G2 => "wendland",
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for a simulation and task.
    pub fn defaults(simulation: Simulation, task: Target) -> Self {
        let one_dim = task == Target::G1;
        let (n, m, ell) = match simulation {
            Simulation::Motivation => (
                vec![4000],
                vec![1, 2, 4, 5, 8, 10, 16, 20, 25, 40, 50, 80, 100, 125, 200, 250, 400],
                vec![0],
            ),
            Simulation::Sim1 if one_dim => (vec![4000], step_grid(20, 20, 480), vec![0, 1, 2, 3, 4]),
            Simulation::Sim1 => (vec![4000], step_grid(2, 2, 60), vec![0, 1, 2, 3, 4]),
            Simulation::Sim2 if one_dim => (step_grid(1000, 500, 5000), vec![20, 80], vec![0, 1, 2, 4]),
            Simulation::Sim2 => (step_grid(1000, 500, 5000), vec![10, 20], vec![0, 1, 2, 4]),
            Simulation::Sim3 if one_dim => (vec![2000, 4000], step_grid(20, 20, 400), vec![1, 2, 4]),
            Simulation::Sim3 => (vec![2000, 4000], step_grid(2, 2, 40), vec![1, 2, 4]),
            Simulation::Single => (vec![1000], vec![10], vec![0, 1, 2, 3, 4, 5]),
        };
        ExperimentConfig {
            simulation,
            task,
            kernel: default_kernel(task).to_string(),
            n,
            m,
            ell,
            lambda: default_lambda_grid(),
            trials: 10,
            seed: 0,
            epsilon: 0.05,
            out: PathBuf::from(format!("{}.csv", simulation.as_str())),
            n_test: 1000,
            n_validation: 1000,
            noise_variance: 0.2,
            tune_per_cell: false,
            tau: None,
        }
    }

    /// Defaults for `simulation` overridden by the file's fields. A file
    /// naming a different simulation is rejected.
    pub fn from_file(simulation: Simulation, file: ConfigFile) -> Result<Self> {
        if let Some(s) = file.simulation {
            if s != simulation {
                return Err(Error::Config(format!(
                    "config is for `{s}` but `{simulation}` was requested"
                )));
            }
        }
        let task = file.task.unwrap_or(Target::G1);
        let mut cfg = Self::defaults(simulation, task);
        if let Some(k) = file.kernel {
            cfg.kernel = k;
        }
        if let Some(v) = file.n {
            cfg.n = v.into();
        }
        if let Some(v) = file.m {
            cfg.m = v.into();
        }
        if let Some(v) = file.ell {
            cfg.ell = v.into();
        }
        if let Some(v) = file.lambda {
            cfg.lambda = v.into();
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = file.$f { cfg.$f = v; } )* };
        }
        take!(trials, seed, epsilon, out, n_test, n_validation, noise_variance, tune_per_cell);
        cfg.tau = file.tau;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::from_name(&self.kernel)
    }

    pub fn max_ell(&self) -> usize {
        self.ell.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let kernel = self.kernel()?;
        if kernel.check_dim(self.task.dim()).is_err() {
            return bad(format!("kernel `{}` cannot handle task {}", self.kernel, self.task.name()));
        }
        if self.n.is_empty() || self.m.is_empty() || self.ell.is_empty() || self.lambda.is_empty() {
            return bad("N, m, ell and lambda grids must be nonempty".into());
        }
        if self.trials == 0 {
            return bad("trial count must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return bad("lambda grid values must be positive and finite".into());
        }
        if self.n_test == 0 || self.n_validation == 0 {
            return bad("test and validation sets must be nonempty".into());
        }
        if !(self.noise_variance >= 0.0) {
            return bad("noise variance must be nonnegative".into());
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return bad("tau must be positive".into());
            }
        }
        let min_n = *self.n.iter().min().expect("nonempty");
        if let Some(m) = self.m.iter().find(|&&m| m == 0 || m > min_n) {
            return bad(format!("cannot split {min_n} samples across {m} machines"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_grid_spans_range() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-8).abs() < 1e-20);
        assert!((g[19] - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn file_overrides_defaults() {
        let f = ConfigFile::parse(
            r#"
            simulation = "sim1"
            task = "g2"
            n = 500
            m = [2, 4]
            ell = [0, 1]
            trials = 3
            "#,
        )
        .unwrap();
        let c = ExperimentConfig::from_file(Simulation::Sim1, f).unwrap();
        assert_eq!(c.kernel, "wendland");
        assert_eq!(c.n, vec![500]);
        assert_eq!(c.m, vec![2, 4]);
        assert_eq!(c.trials, 3);
        assert_eq!(c.epsilon, 0.05);
    }

    #[test]
    fn invalid_configs() {
        let parse = |s: &str| ExperimentConfig::from_file(Simulation::Single, ConfigFile::parse(s).unwrap());
        assert!(parse("trials = 0").is_err());
        assert!(parse("m = []").is_err());
        assert!(parse("epsilon = 0.0").is_err());
        assert!(parse("task = \"g2\"\nkernel = \"min\"").is_err());
        assert!(parse("n = 10\nm = 11").is_err());
        assert!(parse("simulation = \"sim2\"").is_err());
        assert!(ConfigFile::parse("bogus = 1").is_err());
        assert!(parse("").is_ok());
    }
}
