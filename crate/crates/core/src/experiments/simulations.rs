//! The experiment drivers. Each returns a [`Report`]: metric rows plus a
//! metadata record of the conventions used.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::SyntheticTask;
use crate::distributed::run_dkrr;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::krr::KrrModel;
use crate::metrics::{
    contraction_estimate, diag_quantities, empirical_effective_dimension, max_machines, mse, relative_error,
    Criterion, MetricsRecord, RunContext, Trial,
};

use super::complexity::{calibrate_tau, complexity, m_star, m_star_hat, ComplexityModel};
use super::config::{ExperimentConfig, Simulation};
use super::csv_out::emit_csv;
use super::runner::{evaluate_dkrr, fit_gmse, fit_gmse_cached, round_record, trial_means, RoundValue, TrialData};
use super::tuning::{grid_search_lambda_dkrr_cached, TuningCache};

const TIMING_CONVENTION: &str = "machines run sequentially in one process; each machine's share of a phase is timed \
     separately and a phase costs its slowest machine plus the coordinator; wall_time_s of AE/AEC rows is that \
     simulated parallel training time through the row's round, of GMSE rows the batch fit time";
const EFF_DIM_CONVENTION: &str = "plug-in estimate sum s/(s+lambda) over the eigenvalues s of K(D,D)/N, \
     eigenvalues below 1e-10 dropped, evaluated at the GMSE lambda";

#[derive(Debug, Clone, Serialize)]
pub struct LambdaChoice {
    pub n: usize,
    pub m: Option<usize>,
    pub ell: Option<usize>,
    pub trial: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauInfo {
    pub value: f64,
    pub source: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub simulation: Simulation,
    pub config: ExperimentConfig,
    pub lambda_selection: String,
    pub timing_convention: &'static str,
    pub effective_dimension_convention: &'static str,
    pub tau: Option<TauInfo>,
    pub selected_lambdas: Vec<LambdaChoice>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub records: Vec<MetricsRecord>,
    pub metadata: RunMetadata,
}

impl Report {
    /// First row matching the key; `None` fields must be empty in the row.
    pub fn find(
        &self,
        criterion: Criterion,
        n: Option<usize>,
        m: Option<usize>,
        ell: Option<usize>,
        trial: Trial,
    ) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| {
            r.criterion == criterion
                && r.context.n == n
                && r.context.m == m
                && r.context.ell == ell
                && r.context.trial == trial
        })
    }

    /// Mean-row value, NaN when absent or diverged.
    pub fn mean(&self, criterion: Criterion, n: Option<usize>, m: Option<usize>, ell: Option<usize>) -> f64 {
        self.find(criterion, n, m, ell, Trial::Mean).map_or(f64::NAN, |r| r.value)
    }

    /// Writes the table to `csv_path` and the metadata next to it.
    pub fn write(&self, csv_path: &Path) -> Result<PathBuf> {
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        emit_csv(&self.records, csv_path)?;
        let meta_path = csv_path.with_extension("meta.json");
        let json = serde_json::to_string_pretty(&self.metadata)
            .map_err(|e| Error::InvalidState(format!("metadata serialization: {e}")))?;
        std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
        Ok(meta_path)
    }
}

pub fn run_simulation(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.simulation {
        Simulation::Motivation => run_motivation(cfg),
        Simulation::Sim1 => run_simulation1(cfg),
        Simulation::Sim2 => run_simulation2(cfg),
        Simulation::Sim3 => run_simulation3(cfg),
        Simulation::Single => run_single(cfg),
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    kernel: Kernel,
    task: SyntheticTask,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        Ok(Context {
            cfg,
            kernel: cfg.kernel()?,
            task: SyntheticTask::new(cfg.task, cfg.noise_variance)?,
        })
    }

    fn ctx(&self, n: Option<usize>, m: Option<usize>, ell: Option<usize>, lambda: Option<f64>, trial: Trial) -> RunContext {
        RunContext {
            simulation: self.cfg.simulation.as_str().into(),
            task: self.cfg.task.name().into(),
            kernel: self.kernel.name().into(),
            n,
            m,
            ell,
            lambda,
            trial,
            seed: self.cfg.seed,
        }
    }

    fn draw(&self, n: usize, trial: usize) -> Result<TrialData> {
        TrialData::draw(
            &self.task,
            n,
            self.cfg.n_validation,
            self.cfg.n_test,
            self.cfg.seed.wrapping_add(trial as u64),
        )
    }

    fn metadata(&self, lambdas: Vec<LambdaChoice>, tau: Option<TauInfo>, notes: Vec<String>) -> RunMetadata {
        let lambda_selection = if self.cfg.tune_per_cell {
            "GMSE lambda tuned per (task, N, trial); AE/AEC lambda tuned separately per (N, m, ell, trial); \
             hold-out validation MSE over the lambda grid, ties to the larger lambda"
        } else {
            "tuned once per (task, N, trial) for GMSE and reused for AE/AEC; hold-out validation MSE over the \
             lambda grid, ties to the larger lambda"
        };
        RunMetadata {
            simulation: self.cfg.simulation,
            config: self.cfg.clone(),
            lambda_selection: lambda_selection.into(),
            timing_convention: TIMING_CONVENTION,
            effective_dimension_convention: EFF_DIM_CONVENTION,
            tau,
            selected_lambdas: lambdas,
            notes,
        }
    }
}

/// GMSE/AE/AEC over the `(N, m, ell)` grid with trial means and the
/// relative errors derived from them.
struct GridOutput {
    records: Vec<MetricsRecord>,
    lambdas: Vec<LambdaChoice>,
    notes: Vec<String>,
    m_hat: HashMap<(usize, usize), Option<usize>>,
}

fn run_grid(c: &Context<'_>, local_approx: bool) -> Result<GridOutput> {
    let cfg = c.cfg;
    let max_ell = cfg.max_ell();
    let mut trial_rows = Vec::new();
    let mut lambdas = Vec::new();

    for &n in &cfg.n {
        for trial in 0..cfg.trials {
            let t = Trial::Index(trial);
            let data = c.draw(n, trial)?;
            let cache = TuningCache::new(&data.train, &data.validation, &c.kernel)?;
            let gmse = fit_gmse_cached(&data, &c.kernel, &cache, &cfg.lambda)?;
            let lambda = gmse.lambda();
            lambdas.push(LambdaChoice { n, m: None, ell: None, trial, lambda });
            trial_rows.push(
                MetricsRecord::new(Criterion::Gmse, gmse.test_mse, c.ctx(Some(n), None, None, Some(lambda), t))
                    .with_time(gmse.fit_time),
            );

            for &m in &cfg.m {
                let partition = data.partition(m)?;
                let per_round: Vec<(f64, RoundValue)> = if cfg.tune_per_cell {
                    let searches = grid_search_lambda_dkrr_cached(
                        &data.train,
                        &data.validation,
                        &partition,
                        &cache,
                        &cfg.lambda,
                        max_ell,
                    )?;
                    let mut runs: Vec<(f64, Vec<RoundValue>)> = Vec::new();
                    let mut out = Vec::with_capacity(max_ell + 1);
                    for (l, s) in searches.iter().enumerate() {
                        if l > 0 && !cfg.ell.contains(&l) {
                            out.push((s.lambda, RoundValue { mse: None, time: 0.0, comm: 0 }));
                            continue;
                        }
                        if !runs.iter().any(|(lam, _)| *lam == s.lambda) {
                            let vals = evaluate_dkrr(&data, &partition, &c.kernel, s.lambda, max_ell)?;
                            runs.push((s.lambda, vals));
                        }
                        let vals = &runs.iter().find(|(lam, _)| *lam == s.lambda).expect("just inserted").1;
                        out.push((s.lambda, vals[l]));
                        lambdas.push(LambdaChoice { n, m: Some(m), ell: Some(l), trial, lambda: s.lambda });
                    }
                    out
                } else {
                    evaluate_dkrr(&data, &partition, &c.kernel, lambda, max_ell)?
                        .into_iter()
                        .map(|v| (lambda, v))
                        .collect()
                };

                let (lam0, ae) = per_round[0];
                trial_rows.push(round_record(Criterion::Ae, &ae, c.ctx(Some(n), Some(m), Some(0), Some(lam0), t)));
                for &l in &cfg.ell {
                    let (lam, v) = per_round[l];
                    trial_rows.push(round_record(Criterion::Aec, &v, c.ctx(Some(n), Some(m), Some(l), Some(lam), t)));
                }

                if local_approx {
                    let shard = data.train.subset(&partition.shards()[0]).noiseless(&c.task)?;
                    let model = KrrModel::fit(&shard, &c.kernel, lambda)?;
                    let err = mse(&model.predict(data.test.inputs(), &c.kernel)?, data.test.outputs())?;
                    trial_rows.push(MetricsRecord::new(
                        Criterion::LocalApprox,
                        err,
                        c.ctx(Some(n), Some(m), None, Some(lambda), t),
                    ));
                }
            }
        }
    }

    // Relative errors are paired within a trial and then averaged like every
    // other criterion, so AE above GMSE in one trial and below it in another
    // cannot cancel.
    let mut relative_rows = Vec::new();
    for r in trial_rows.iter().filter(|r| matches!(r.criterion, Criterion::Ae | Criterion::Aec)) {
        let gmse = trial_rows
            .iter()
            .find(|g| g.criterion == Criterion::Gmse && g.context.n == r.context.n && g.context.trial == r.context.trial)
            .map(|g| g.value)
            .ok_or_else(|| Error::InvalidState(format!("no GMSE for N = {:?}", r.context.n)))?;
        let target = if r.criterion == Criterion::Ae { Criterion::Re } else { Criterion::Rec };
        relative_rows.push(if r.diverged {
            MetricsRecord::new(target, f64::NAN, r.context.clone()).diverged()
        } else {
            MetricsRecord::new(target, relative_error(r.value, gmse)?, r.context.clone())
        });
    }
    trial_rows.extend(relative_rows);

    let means = trial_means(&trial_rows);
    let mut derived = Vec::new();
    let mut notes = Vec::new();
    let mut m_hat = HashMap::new();
    for &n in &cfg.n {
        let curve = |criterion: Criterion, ell: usize| -> Vec<(usize, f64)> {
            means
                .iter()
                .filter(|r| r.criterion == criterion && r.context.n == Some(n) && r.context.ell == Some(ell))
                .map(|r| (r.context.m.expect("distributed rows carry m"), r.value))
                .collect()
        };
        let re = curve(Criterion::Re, 0);
        let rec: Vec<(usize, Vec<(usize, f64)>)> = cfg.ell.iter().map(|&l| (l, curve(Criterion::Rec, l))).collect();

        let ctx = |ell: Option<usize>| c.ctx(Some(n), None, ell, None, Trial::Mean);
        match max_machines(&re, cfg.epsilon)? {
            Some(mb) => derived.push(MetricsRecord::new(Criterion::MBarB, mb as f64, ctx(None))),
            None => notes.push(format!("N = {n}: no m in the grid has RE below {}", cfg.epsilon)),
        }
        for (l, curve) in rec {
            let found = max_machines(&curve, cfg.epsilon)?;
            match found {
                Some(mh) => derived.push(MetricsRecord::new(Criterion::MHatB, mh as f64, ctx(Some(l)))),
                None => notes.push(format!("N = {n}, ell = {l}: no m in the grid has REC below {}", cfg.epsilon)),
            }
            m_hat.insert((n, l), found);
        }
    }

    let mut records = trial_rows;
    records.extend(means);
    records.extend(derived);
    Ok(GridOutput { records, lambdas, notes, m_hat })
}

fn grid_report(cfg: &ExperimentConfig, local_approx: bool) -> Result<Report> {
    let c = Context::new(cfg)?;
    let out = run_grid(&c, local_approx)?;
    Ok(Report {
        records: out.records,
        metadata: c.metadata(out.lambdas, None, out.notes),
    })
}

/// Averaging without communication as the number of machines grows, with
/// the error of a single machine's noiseless local fit for comparison.
pub fn run_motivation(cfg: &ExperimentConfig) -> Result<Report> {
    grid_report(cfg, true)
}

/// Relative error against the number of machines for several round counts.
pub fn run_simulation1(cfg: &ExperimentConfig) -> Result<Report> {
    grid_report(cfg, false)
}

/// Learning curves: errors against the sample size.
pub fn run_simulation2(cfg: &ExperimentConfig) -> Result<Report> {
    grid_report(cfg, false)
}

/// Training time and communication against the number of machines, with
/// the cost model's optimal machine count.
pub fn run_simulation3(cfg: &ExperimentConfig) -> Result<Report> {
    let c = Context::new(cfg)?;
    let mut out = run_grid(&c, false)?;
    let tau = match cfg.tau {
        Some(value) => TauInfo { value, source: "config" },
        None => TauInfo {
            value: calibrate_tau(&c.kernel, cfg.task.dim())?,
            source: "calibrated",
        },
    };
    out.records
        .push(MetricsRecord::new(Criterion::Tau, tau.value, c.ctx(None, None, None, None, Trial::Mean)));

    for &n in &cfg.n {
        for &l in &cfg.ell {
            let ctx = |m: Option<usize>| c.ctx(Some(n), m, Some(l), None, Trial::Mean);
            for &m in &cfg.m {
                let (omega, omega_l) = complexity(&ComplexityModel {
                    n: n as f64,
                    m: m as f64,
                    ell: l as f64,
                    tau: tau.value,
                })?;
                out.records.push(MetricsRecord::new(Criterion::OmegaDkrr, omega, ctx(Some(m))));
                out.records.push(MetricsRecord::new(Criterion::OmegaDkrrL, omega_l, ctx(Some(m))));
            }
            if l == 0 {
                continue;
            }
            let ms = m_star(n as f64, tau.value, l as f64)?;
            out.records.push(MetricsRecord::new(Criterion::MStar, ms, ctx(None)));
            match m_star_hat(ms, out.m_hat.get(&(n, l)).copied().flatten(), &cfg.m) {
                Ok(mh) => out.records.push(MetricsRecord::new(Criterion::MStarHat, mh as f64, ctx(None))),
                Err(Error::Config(msg)) => out.notes.push(format!("N = {n}, ell = {l}: no M_STAR_HAT, {msg}")),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Report {
        records: out.records,
        metadata: c.metadata(out.lambdas, Some(tau), out.notes),
    })
}

/// One configuration in detail: effective dimension, the quantities that
/// govern the convergence rate, and the measured per-round contraction of
/// the iterates towards the batch fit.
pub fn run_single(cfg: &ExperimentConfig) -> Result<Report> {
    let c = Context::new(cfg)?;
    let max_ell = cfg.max_ell();
    let mut rows = Vec::new();
    let mut lambdas = Vec::new();
    let mut notes = Vec::new();

    for &n in &cfg.n {
        for trial in 0..cfg.trials {
            let t = Trial::Index(trial);
            let data = c.draw(n, trial)?;
            let gmse = fit_gmse(&data, &c.kernel, &cfg.lambda)?;
            let lambda = gmse.lambda();
            lambdas.push(LambdaChoice { n, m: None, ell: None, trial, lambda });
            let nctx = || c.ctx(Some(n), None, None, Some(lambda), t);
            rows.push(MetricsRecord::new(Criterion::Gmse, gmse.test_mse, nctx()).with_time(gmse.fit_time));

            let eff = empirical_effective_dimension(&c.kernel, data.train.inputs(), lambda)?;
            rows.push(MetricsRecord::new(Criterion::EffDim, eff, nctx()));
            match diag_quantities(n, lambda, eff) {
                Ok((a, b)) => {
                    rows.push(MetricsRecord::new(Criterion::DiagA, a, nctx()));
                    rows.push(MetricsRecord::new(Criterion::DiagB, b, nctx()));
                }
                Err(e) => notes.push(format!("N = {n}, trial {trial}: no diagnostics, {e}")),
            }

            let fitted = gmse.model.predict(data.train.inputs(), &c.kernel)?;
            for &m in &cfg.m {
                let partition = data.partition(m)?;
                let vals = evaluate_dkrr(&data, &partition, &c.kernel, lambda, max_ell)?;
                rows.push(round_record(Criterion::Ae, &vals[0], c.ctx(Some(n), Some(m), Some(0), Some(lambda), t)));
                for &l in &cfg.ell {
                    rows.push(round_record(
                        Criterion::Aec,
                        &vals[l],
                        c.ctx(Some(n), Some(m), Some(l), Some(lambda), t),
                    ));
                }
                let run = run_dkrr(&data.train, &partition, &c.kernel, lambda, max_ell)?;
                let distances = run.model.iterate_distances(&fitted)?;
                for (i, ratio) in contraction_estimate(&distances).into_iter().enumerate() {
                    rows.push(MetricsRecord::new(
                        Criterion::Contraction,
                        ratio,
                        c.ctx(Some(n), Some(m), Some(i + 1), Some(lambda), t),
                    ));
                }
            }
        }
    }
    let means = trial_means(&rows);
    rows.extend(means);
    Ok(Report {
        records: rows,
        metadata: c.metadata(lambdas, None, notes),
    })
}
