//! Per-trial machinery shared by the simulations: data draws, lambda
//! selection, DKRR evaluation and aggregation over trials.

use std::collections::HashMap;
use std::time::Instant;

use crate::data::{generate, partition_even, seeded_rng, Dataset, Partition, SyntheticTask};
use crate::distributed::{comm_totals, predict_dkrr_rounds, protocol_floats, run_dkrr, DIVERGENCE_LIMIT};
use crate::error::Result;
use crate::kernel::Kernel;
use crate::krr::KrrModel;
use crate::metrics::{mse, Criterion, MetricsRecord, Trial};

use super::tuning::{grid_search_lambda_cached, LambdaSearch, TuningCache};

const TRAIN_STREAM: u64 = 0;
const VALIDATION_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const PARTITION_STREAM: u64 = 100;

/// Data of one trial. The test set is noiseless so its MSE measures the
/// distance to the regression function.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub seed: u64,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl TrialData {
    pub fn draw(task: &SyntheticTask, n: usize, n_validation: usize, n_test: usize, seed: u64) -> Result<Self> {
        Ok(TrialData {
            seed,
            train: generate(task, n, true, &mut seeded_rng(seed, TRAIN_STREAM))?,
            validation: generate(task, n_validation, true, &mut seeded_rng(seed, VALIDATION_STREAM))?,
            test: generate(task, n_test, false, &mut seeded_rng(seed, TEST_STREAM))?,
        })
    }

    /// Random even split over `m` machines; the stream depends on `m` only,
    /// so every lambda and round count sees the same split.
    pub fn partition(&self, m: usize) -> Result<Partition> {
        partition_even(self.train.len(), m, &mut seeded_rng(self.seed, PARTITION_STREAM + m as u64))
    }
}

/// Batch KRR on the whole sample at the validated lambda.
#[derive(Debug, Clone)]
pub struct GmseFit {
    pub search: LambdaSearch,
    pub model: KrrModel,
    pub test_mse: f64,
    pub fit_time: f64,
}

impl GmseFit {
    pub fn lambda(&self) -> f64 {
        self.search.lambda
    }
}

pub fn fit_gmse(data: &TrialData, kernel: &Kernel, grid: &[f64]) -> Result<GmseFit> {
    let cache = TuningCache::new(&data.train, &data.validation, kernel)?;
    fit_gmse_cached(data, kernel, &cache, grid)
}

pub fn fit_gmse_cached(data: &TrialData, kernel: &Kernel, cache: &TuningCache, grid: &[f64]) -> Result<GmseFit> {
    let search = grid_search_lambda_cached(&data.train, &data.validation, cache, grid)?;
    let start = Instant::now();
    let model = KrrModel::fit(&data.train, kernel, search.lambda)?;
    let fit_time = start.elapsed().as_secs_f64();
    let test_mse = mse(&model.predict(data.test.inputs(), kernel)?, data.test.outputs())?;
    Ok(GmseFit { search, model, test_mse, fit_time })
}

/// Test error after a given number of rounds; `mse` is `None` once the
/// iteration has diverged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundValue {
    pub mse: Option<f64>,
    /// Simulated parallel training time through this round.
    pub time: f64,
    pub comm: u64,
}

/// Runs DKRR once with `max_rounds` rounds and reads the test error after
/// every round `0..=max_rounds` off the predicted trajectory.
pub fn evaluate_dkrr(
    data: &TrialData,
    partition: &Partition,
    kernel: &Kernel,
    lambda: f64,
    max_rounds: usize,
) -> Result<Vec<RoundValue>> {
    let run = run_dkrr(&data.train, partition, kernel, lambda, max_rounds)?;
    let model = &run.model;
    let preds = predict_dkrr_rounds(model, &run.locals, data.test.inputs(), kernel, model.rounds())?;
    let (m, n) = (partition.num_shards(), partition.total());
    let cumulative = if model.diverged() {
        None
    } else {
        Some(comm_totals(model.comm_log(), m, n, model.rounds())?.cumulative)
    };
    (0..=max_rounds)
        .map(|l| {
            let mse = match preds.get(l) {
                Some(p) if p.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT) => {
                    Some(mse(p, data.test.outputs())?)
                }
                _ => None,
            };
            Ok(RoundValue {
                mse,
                time: model.timings().parallel_time(l).as_secs_f64(),
                comm: cumulative
                    .as_ref()
                    .and_then(|c| c.get(l).copied())
                    .unwrap_or_else(|| protocol_floats(m, n, l)),
            })
        })
        .collect()
}

/// Record for a trial-level value; diverged values are flagged.
pub fn round_record(criterion: Criterion, value: &RoundValue, ctx: crate::metrics::RunContext) -> MetricsRecord {
    let rec = MetricsRecord::new(criterion, value.mse.unwrap_or(f64::NAN), ctx)
        .with_time(value.time)
        .with_comm(value.comm);
    if value.mse.is_some() { rec } else { rec.diverged() }
}

/// Mean over trials of every `(criterion, N, m, ell)` group of per-trial
/// records, in first-appearance order. A group with any diverged trial is
/// diverged.
pub fn trial_means(records: &[MetricsRecord]) -> Vec<MetricsRecord> {
    type Key = (Criterion, Option<usize>, Option<usize>, Option<usize>);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<&MetricsRecord>> = HashMap::new();
    for r in records.iter().filter(|r| r.context.trial != Trial::Mean) {
        let key = (r.criterion, r.context.n, r.context.m, r.context.ell);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let count = g.len() as f64;
            let first = g[0];
            let lambda = first.context.lambda.filter(|l| g.iter().all(|r| r.context.lambda == Some(*l)));
            let mut ctx = first.context.clone();
            ctx.trial = Trial::Mean;
            ctx.lambda = lambda;
            let value = g.iter().map(|r| r.value).sum::<f64>() / count;
            let time = g.iter().map(|r| r.wall_time_s).sum::<f64>() / count;
            let rec = MetricsRecord::new(key.0, value, ctx).with_time(time).with_comm(first.comm_floats);
            if g.iter().any(|r| r.diverged) { rec.diverged().with_time(time) } else { rec }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Target;
    use crate::metrics::RunContext;

    fn ctx(trial: Trial, lambda: f64) -> RunContext {
        RunContext {
            simulation: "sim1".into(),
            task: "g1".into(),
            kernel: "min".into(),
            n: Some(10),
            m: Some(2),
            ell: Some(1),
            lambda: Some(lambda),
            trial,
            seed: 0,
        }
    }

    #[test]
    fn means_group_and_flag() {
        let recs = vec![
            MetricsRecord::new(Criterion::Aec, 1.0, ctx(Trial::Index(0), 0.1)).with_time(1.0),
            MetricsRecord::new(Criterion::Aec, 3.0, ctx(Trial::Index(1), 0.1)).with_time(3.0),
            MetricsRecord::new(Criterion::Ae, 1.0, ctx(Trial::Index(0), 0.1)),
            MetricsRecord::new(Criterion::Ae, 1.0, ctx(Trial::Index(1), 0.2)).diverged(),
        ];
        let means = trial_means(&recs);
        assert_eq!(means.len(), 2);
        assert_eq!(means[0].value, 2.0);
        assert_eq!(means[0].wall_time_s, 2.0);
        assert_eq!(means[0].context.lambda, Some(0.1));
        assert!(means[1].diverged && means[1].value.is_nan());
        assert_eq!(means[1].context.lambda, None);
    }

    #[test]
    fn trial_draws_are_reproducible() {
        let task = SyntheticTask::new(Target::G2, 0.2).unwrap();
        let a = TrialData::draw(&task, 50, 20, 20, 9).unwrap();
        let b = TrialData::draw(&task, 50, 20, 20, 9).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.partition(5).unwrap(), b.partition(5).unwrap());
        assert_ne!(a.train, a.validation);
    }

    #[test]
    fn round_zero_matches_averaging() {
        let task = SyntheticTask::new(Target::G1, 0.2).unwrap();
        let data = TrialData::draw(&task, 60, 20, 30, 3).unwrap();
        let p = data.partition(3).unwrap();
        let vals = evaluate_dkrr(&data, &p, &Kernel::Min, 1e-3, 2).unwrap();
        assert_eq!(vals.len(), 3);
        assert_eq!(vals[0].comm, 3 * 60);
        assert_eq!(vals[2].comm, 3 * 60 + 2 * (3 * 3 * 60 + 60));
        assert!(vals.iter().all(|v| v.mse.is_some()));
    }
}
