//! Hold-out selection of the regularization parameter.

use faer::Mat;

use crate::data::{Dataset, Partition};
use crate::distributed::{
    predict_dkrr_rounds_with_blocks, run_dkrr_cached, split_query_columns, GramCache, ShardedGram, DIVERGENCE_LIMIT,
};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::krr::KrrModel;
use crate::metrics::mse;

/// Validation score of every grid value; `None` where the fit failed or
/// diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Smallest score wins; ties go to the larger lambda.
fn select(scores: &[(f64, Option<f64>)]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(lambda, score) in scores {
        let Some(s) = score.filter(|s| s.is_finite()) else { continue };
        match best {
            Some((bl, bs)) if s > bs || (s == bs && lambda < bl) => {}
            _ => best = Some((lambda, s)),
        }
    }
    best.map(|(l, _)| l)
}

fn no_candidate() -> Error {
    Error::Config("every lambda in the grid failed on the validation set".into())
}

fn usable(pred: &[f64]) -> bool {
    pred.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT)
}

fn tolerate<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NumericalFailure { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Kernel matrices shared by every candidate lambda: the training Gram
/// matrix and the validation-against-training block.
#[derive(Debug, Clone)]
pub struct TuningCache {
    pub train_gram: GramCache,
    pub validation_cross: Mat<f64>,
}

impl TuningCache {
    pub fn new(train: &Dataset, validation: &Dataset, kernel: &Kernel) -> Result<Self> {
        Ok(TuningCache {
            train_gram: GramCache::new(kernel, train.inputs())?,
            validation_cross: kernel.gram(validation.inputs(), train.inputs())?,
        })
    }

    fn check(&self, train: &Dataset, validation: &Dataset) -> Result<()> {
        if self.train_gram.len() != train.len()
            || self.validation_cross.nrows() != validation.len()
            || self.validation_cross.ncols() != train.len()
        {
            return Err(Error::invalid("tuning cache does not match the data"));
        }
        Ok(())
    }
}

/// Batch KRR scored on `validation`.
pub fn grid_search_lambda(train: &Dataset, validation: &Dataset, kernel: &Kernel, grid: &[f64]) -> Result<LambdaSearch> {
    let cache = TuningCache::new(train, validation, kernel)?;
    grid_search_lambda_cached(train, validation, &cache, grid)
}

pub fn grid_search_lambda_cached(
    train: &Dataset,
    validation: &Dataset,
    cache: &TuningCache,
    grid: &[f64],
) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    cache.check(train, validation)?;
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let score = match tolerate(KrrModel::fit_with_gram(train, cache.train_gram.gram(), lambda))? {
            Some(model) => {
                let pred = model.predict_with_cross_gram(cache.validation_cross.as_ref());
                usable(&pred).then(|| mse(&pred, validation.outputs())).transpose()?
            }
            None => None,
        };
        scores.push((lambda, score));
    }
    let lambda = select(&scores).ok_or_else(no_candidate)?;
    Ok(LambdaSearch { lambda, scores })
}

/// Distributed estimator: one run per grid value gives a selection for
/// every round count `0..=rounds`.
pub fn grid_search_lambda_dkrr(
    train: &Dataset,
    validation: &Dataset,
    partition: &Partition,
    kernel: &Kernel,
    grid: &[f64],
    rounds: usize,
) -> Result<Vec<LambdaSearch>> {
    let cache = TuningCache::new(train, validation, kernel)?;
    grid_search_lambda_dkrr_cached(train, validation, partition, &cache, grid, rounds)
}

pub fn grid_search_lambda_dkrr_cached(
    train: &Dataset,
    validation: &Dataset,
    partition: &Partition,
    cache: &TuningCache,
    grid: &[f64],
    rounds: usize,
) -> Result<Vec<LambdaSearch>> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    cache.check(train, validation)?;
    let sharded = ShardedGram::new(&cache.train_gram, partition)?;
    let query_blocks = split_query_columns(cache.validation_cross.as_ref(), partition)?;
    let mut per_round: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::with_capacity(grid.len()); rounds + 1];
    for &lambda in grid {
        let preds = match tolerate(run_dkrr_cached(train, &sharded, lambda, rounds))? {
            Some(run) => predict_dkrr_rounds_with_blocks(&run.model, &run.locals, &query_blocks, run.model.rounds())?,
            None => Vec::new(),
        };
        for (l, scores) in per_round.iter_mut().enumerate() {
            let score = match preds.get(l) {
                Some(p) if usable(p) => Some(mse(p, validation.outputs())?),
                _ => None,
            };
            scores.push((lambda, score));
        }
    }
    per_round
        .into_iter()
        .map(|scores| {
            let lambda = select(&scores).ok_or_else(no_candidate)?;
            Ok(LambdaSearch { lambda, scores })
        })
        .collect()
}
