//! Distributed kernel ridge regression with Newton-Raphson communication
//! rounds.
//!
//! Training follows a seven-step protocol between `m` local machines and a
//! coordinator:
//!
//! 1. every machine fits KRR on its shard, receives the other shards' inputs
//!    and caches the cross-Gram blocks `K(D_k, D_j)`;
//! 2. the coordinator averages the local estimators at all training points
//!    with weights `|D_j| / |D|`, giving the iterate `f^0`;
//! 3. block `f_j` of the current iterate is delivered to machine `j`;
//! 4. machines compute their local gradients at every block;
//! 5. the coordinator averages them into the global gradient and sends it
//!    back;
//! 6. machines run KRR on the global gradient restricted to their shard
//!    (`beta_j`) and return the residual corrections `H_j`;
//! 7. the coordinator applies `f <- f - (1/lambda) sum_j w_j H_j`.
//!
//! Steps 3 to 7 form one communication round. Prediction replays the same
//! recursion at query points using the stored `beta_j` and iterates.
//!
//! [`oracle_coefficient_iteration`] realizes the same iteration in operator
//! form over coefficient vectors and is used to check the protocol.

mod comm;
mod coordinator;
mod local;
mod oracle;

use std::sync::Arc;
use std::time::{Duration, Instant};

use faer::{Mat, MatRef};
use serde::Serialize;

pub use comm::{
    comm_totals, protocol_floats, round_floats, CommLog, CommTotals, Direction, Endpoint, Message, ProtocolStep,
};
pub use coordinator::{
    global_update, synthesize_gradient, synthesize_initial, weighted_sum, UpdateOutcome, DIVERGENCE_LIMIT,
};
pub use local::LocalState;
pub use oracle::{oracle_coefficient_iteration, OracleTrajectory, ORACLE_MAX_SAMPLES};

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::krr::check_lambda;
use crate::linalg::matvec;
use crate::points::Points;

/// One vector per shard block, `blocks[k]` having length `|D_k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVec(Vec<Vec<f64>>);

impl BlockVec {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        BlockVec(blocks)
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        BlockVec(sizes.iter().map(|&n| vec![0.0; n]).collect())
    }

    /// Cuts `flat` (blocks laid end to end) into blocks of `sizes`.
    pub fn from_flat(sizes: &[usize], flat: &[f64]) -> Result<Self> {
        if sizes.iter().sum::<usize>() != flat.len() {
            return Err(Error::invalid("flat vector length does not match block sizes"));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &n in sizes {
            out.push(flat[start..start + n].to_vec());
            start += n;
        }
        Ok(BlockVec(out))
    }

    /// Scatters a vector in data order into partition blocks.
    pub fn from_data_order(partition: &Partition, values: &[f64]) -> Result<Self> {
        if values.len() != partition.total() {
            return Err(Error::invalid("vector length does not match the partition"));
        }
        Ok(BlockVec(
            partition.shards().iter().map(|s| s.iter().map(|&i| values[i]).collect()).collect(),
        ))
    }

    /// Gathers the blocks back into data order.
    pub fn to_data_order(&self, partition: &Partition) -> Result<Vec<f64>> {
        if self.sizes() != partition.sizes() {
            return Err(Error::invalid("block sizes do not match the partition"));
        }
        let mut out = vec![0.0; partition.total()];
        for (shard, block) in partition.shards().iter().zip(&self.0) {
            for (&i, &v) in shard.iter().zip(block) {
                out[i] = v;
            }
        }
        Ok(out)
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.0[k]
    }

    pub fn num_blocks(&self) -> usize {
        self.0.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.0.iter().map(Vec::len).collect()
    }

    pub fn total_len(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, w: f64) -> Self {
        BlockVec(self.0.iter().map(|b| b.iter().map(|v| w * v).collect()).collect())
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, w: f64, other: &BlockVec) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += w * y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    LocalProcess,
    Synthesis,
    LocalGradient,
    GradientSynthesis,
    Correction,
    Update,
}

/// Time spent in one protocol phase: each machine's share and the
/// coordinator's share.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseTiming {
    pub round: usize,
    pub phase: Phase,
    pub per_machine: Vec<Duration>,
    pub coordinator: Duration,
}

impl PhaseTiming {
    /// Slowest machine plus coordinator: the phase's duration when machines
    /// run in parallel on identical hardware.
    pub fn parallel(&self) -> Duration {
        self.per_machine.iter().copied().max().unwrap_or_default() + self.coordinator
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub phases: Vec<PhaseTiming>,
}

impl Timings {
    /// Simulated parallel training time up to and including round `round`.
    pub fn parallel_time(&self, round: usize) -> Duration {
        self.phases.iter().filter(|p| p.round <= round).map(PhaseTiming::parallel).sum()
    }

    pub fn local_process(&self) -> Option<&PhaseTiming> {
        self.phases.iter().find(|p| p.phase == Phase::LocalProcess)
    }
}

/// Trained artifact of the protocol: stored iterates and per-round
/// coefficients, enough to replay the testing flow.
#[derive(Debug, Clone)]
pub struct DkrrModel {
    lambda: f64,
    partition: Partition,
    weights: Vec<f64>,
    /// `iterates[l]` is `f^l` at all training blocks.
    iterates: Vec<BlockVec>,
    /// `betas[l - 1][j]` is `beta_{j,l}`.
    betas: Vec<Vec<Vec<f64>>>,
    requested_rounds: usize,
    diverged: bool,
    log: CommLog,
    timings: Timings,
}

impl DkrrModel {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_machines(&self) -> usize {
        self.weights.len()
    }

    /// Rounds actually completed; less than requested only on divergence.
    pub fn rounds(&self) -> usize {
        self.betas.len()
    }

    pub fn requested_rounds(&self) -> usize {
        self.requested_rounds
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn iterate(&self, round: usize) -> Option<&BlockVec> {
        self.iterates.get(round)
    }

    pub fn beta(&self, round: usize, machine: usize) -> Option<&[f64]> {
        round
            .checked_sub(1)
            .and_then(|r| self.betas.get(r))
            .and_then(|b| b.get(machine))
            .map(Vec::as_slice)
    }

    pub fn comm_log(&self) -> &CommLog {
        &self.log
    }

    pub fn timings(&self) -> &Timings {
        &self.timings
    }

    /// `|f^l - reference|_2` over all training points for every stored round;
    /// `reference` is in data order.
    pub fn iterate_distances(&self, reference: &[f64]) -> Result<Vec<f64>> {
        let reference = BlockVec::from_data_order(&self.partition, reference)?;
        Ok(self
            .iterates
            .iter()
            .map(|f| {
                f.blocks()
                    .iter()
                    .flatten()
                    .zip(reference.blocks().iter().flatten())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

/// Trained model together with the machines that hold the shards.
pub struct DkrrRun {
    pub model: DkrrModel,
    pub locals: Vec<LocalState>,
}

/// Trains with `rounds` communication rounds; zero rounds is plain
/// weighted averaging.
pub fn run_dkrr(data: &Dataset, partition: &Partition, kernel: &Kernel, lambda: f64, rounds: usize) -> Result<DkrrRun> {
    run_dkrr_from(data, partition, kernel, lambda, rounds, None)
}

/// As [`run_dkrr`], optionally replacing the synthesized `f^0` with `init`
/// (a hook for fixed-point checks; the local processes still run).
pub fn run_dkrr_from(
    data: &Dataset,
    partition: &Partition,
    kernel: &Kernel,
    lambda: f64,
    rounds: usize,
    init: Option<BlockVec>,
) -> Result<DkrrRun> {
    run_inner(data, partition, BlockSource::Kernel(kernel), lambda, rounds, init)
}

/// Kernel matrix of the training inputs, computed once and shared by runs
/// that differ only in partition, lambda or round count.
#[derive(Debug, Clone)]
pub struct GramCache {
    gram: Mat<f64>,
}

impl GramCache {
    pub fn new(kernel: &Kernel, inputs: &Points) -> Result<Self> {
        Ok(GramCache { gram: kernel.gram_symmetric(inputs)? })
    }

    pub fn gram(&self) -> MatRef<'_, f64> {
        self.gram.as_ref()
    }

    pub fn len(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.gram.nrows() == 0
    }
}

/// Sub-matrix `a[rows, cols]`.
fn gather(a: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// The blocks `K(D_k, D_j)` of a cached Gram matrix cut along one
/// partition, shared by every run on that partition.
#[derive(Debug, Clone)]
pub struct ShardedGram {
    partition: Partition,
    /// `blocks[j] = K(D, D_j)`, rows grouped by shard.
    blocks: Vec<Arc<Mat<f64>>>,
}

impl ShardedGram {
    pub fn new(cache: &GramCache, partition: &Partition) -> Result<Self> {
        if cache.len() != partition.total() {
            return Err(Error::invalid("cached Gram matrix does not match the partition"));
        }
        let rows: Vec<usize> = partition.shards().iter().flatten().copied().collect();
        let blocks = partition
            .shards()
            .iter()
            .map(|cols| Arc::new(gather(cache.gram(), &rows, cols)))
            .collect();
        Ok(ShardedGram { partition: partition.clone(), blocks })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }
}

enum BlockSource<'a> {
    Kernel(&'a Kernel),
    Sharded(&'a ShardedGram),
}

/// As [`run_dkrr`] with kernel blocks taken from `sharded`, which must be
/// cut from the Gram matrix of `data`'s inputs. Local setup times then
/// exclude kernel evaluation.
pub fn run_dkrr_cached(data: &Dataset, sharded: &ShardedGram, lambda: f64, rounds: usize) -> Result<DkrrRun> {
    run_inner(data, &sharded.partition, BlockSource::Sharded(sharded), lambda, rounds, None)
}

/// Splits `K(query, D)` (columns in data order) into the per-machine
/// blocks `K(query, D_j)`.
pub fn split_query_columns(query_cross: MatRef<'_, f64>, partition: &Partition) -> Result<Vec<Mat<f64>>> {
    if query_cross.ncols() != partition.total() {
        return Err(Error::invalid("query cross-Gram has the wrong number of columns"));
    }
    let all_rows: Vec<usize> = (0..query_cross.nrows()).collect();
    Ok(partition.shards().iter().map(|cols| gather(query_cross, &all_rows, cols)).collect())
}

fn run_inner(
    data: &Dataset,
    partition: &Partition,
    source: BlockSource<'_>,
    lambda: f64,
    rounds: usize,
    init: Option<BlockVec>,
) -> Result<DkrrRun> {
    check_lambda(lambda)?;
    let shards = partition.split(data)?;
    let inputs: Vec<Points> = shards.iter().map(|s| s.inputs().clone()).collect();
    let weights = partition.weights();
    let mut log = CommLog::new();
    let mut timings = Timings::default();

    let locals = shards
        .iter()
        .enumerate()
        .map(|(j, shard)| match source {
            BlockSource::Kernel(kernel) => LocalState::train(j, shard, &inputs, kernel, lambda, &mut log),
            BlockSource::Sharded(sharded) => {
                let sizes = partition.sizes();
                LocalState::train_with_blocks(j, shard, Arc::clone(&sharded.blocks[j]), &sizes, lambda, &mut log)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    timings.phases.push(PhaseTiming {
        round: 0,
        phase: Phase::LocalProcess,
        per_machine: locals.iter().map(LocalState::setup_time).collect(),
        coordinator: Duration::ZERO,
    });

    let (messages, per_machine) = timed_per_machine(&locals, |l| Ok(l.synthesis_message()))?;
    let start = Instant::now();
    let synthesized = coordinator::synthesize_messages(&messages, &weights, &mut log)?;
    timings.phases.push(PhaseTiming {
        round: 0,
        phase: Phase::Synthesis,
        per_machine,
        coordinator: start.elapsed(),
    });
    let f0 = match init {
        Some(v) if v.sizes() != partition.sizes() => {
            return Err(Error::invalid("initial iterate does not match the partition"));
        }
        Some(v) => v,
        None => synthesized,
    };

    let mut iterates = vec![f0];
    let mut betas = Vec::with_capacity(rounds);
    let mut diverged = false;
    for round in 1..=rounds {
        let f_prev = iterates.last().expect("f^0 is always present");
        let (grads, per_machine) = timed_per_machine(&locals, |l| l.local_gradient(f_prev))?;
        timings.phases.push(PhaseTiming {
            round,
            phase: Phase::LocalGradient,
            per_machine,
            coordinator: Duration::ZERO,
        });

        let start = Instant::now();
        let global = synthesize_gradient(&grads, &weights, round, &mut log)?;
        timings.phases.push(PhaseTiming {
            round,
            phase: Phase::GradientSynthesis,
            per_machine: Vec::new(),
            coordinator: start.elapsed(),
        });

        let (outs, per_machine) = timed_per_machine(&locals, |l| l.newton_correction(&global))?;
        timings.phases.push(PhaseTiming {
            round,
            phase: Phase::Correction,
            per_machine,
            coordinator: Duration::ZERO,
        });
        let (round_betas, corrections): (Vec<_>, Vec<_>) = outs.into_iter().unzip();

        let start = Instant::now();
        let outcome = global_update(f_prev, &corrections, lambda, &weights, round, &mut log)?;
        timings.phases.push(PhaseTiming {
            round,
            phase: Phase::Update,
            per_machine: Vec::new(),
            coordinator: start.elapsed(),
        });
        match outcome {
            UpdateOutcome::Updated(f) => {
                iterates.push(f);
                betas.push(round_betas);
            }
            UpdateOutcome::Diverged => {
                diverged = true;
                break;
            }
        }
    }

    Ok(DkrrRun {
        model: DkrrModel {
            lambda,
            partition: partition.clone(),
            weights,
            iterates,
            betas,
            requested_rounds: rounds,
            diverged,
            log,
            timings,
        },
        locals,
    })
}

/// Runs `f` on every machine in turn, timing each call.
fn timed_per_machine<T>(
    locals: &[LocalState],
    mut f: impl FnMut(&LocalState) -> Result<T>,
) -> Result<(Vec<T>, Vec<Duration>)> {
    let mut out = Vec::with_capacity(locals.len());
    let mut times = Vec::with_capacity(locals.len());
    for l in locals {
        let start = Instant::now();
        out.push(f(l)?);
        times.push(start.elapsed());
    }
    Ok((out, times))
}

fn check_replay(model: &DkrrModel, locals: &[LocalState]) -> Result<()> {
    if locals.len() != model.num_machines()
        || locals.iter().map(LocalState::len).collect::<Vec<_>>() != model.partition.sizes()
    {
        return Err(Error::InvalidState(
            "local machines do not match the trained model".into(),
        ));
    }
    if locals.iter().any(|l| l.lambda() != model.lambda) {
        return Err(Error::InvalidState("local machines were trained with a different lambda".into()));
    }
    Ok(())
}

/// Testing flow: predictions at `query` after every round `0..=rounds`.
pub fn predict_dkrr_rounds(
    model: &DkrrModel,
    locals: &[LocalState],
    query: &Points,
    kernel: &Kernel,
    rounds: usize,
) -> Result<Vec<Vec<f64>>> {
    check_replay(model, locals)?;
    let blocks = locals
        .iter()
        .map(|l| l.query_block(kernel, query))
        .collect::<Result<Vec<_>>>()?;
    replay(model, locals, &blocks, rounds)
}

/// Testing flow from precomputed blocks `K(query, D_j)`, one per machine.
pub fn predict_dkrr_rounds_with_blocks(
    model: &DkrrModel,
    locals: &[LocalState],
    query_blocks: &[Mat<f64>],
    rounds: usize,
) -> Result<Vec<Vec<f64>>> {
    check_replay(model, locals)?;
    if query_blocks.len() != locals.len()
        || query_blocks.iter().zip(locals).any(|(b, l)| b.ncols() != l.len())
        || query_blocks.windows(2).any(|w| w[0].nrows() != w[1].nrows())
    {
        return Err(Error::invalid("query blocks do not match the machines"));
    }
    replay(model, locals, query_blocks, rounds)
}

fn replay(model: &DkrrModel, locals: &[LocalState], blocks: &[Mat<f64>], rounds: usize) -> Result<Vec<Vec<f64>>> {
    if rounds > model.rounds() {
        return Err(Error::InvalidState(format!(
            "prediction after {rounds} rounds requested, model holds {}",
            model.rounds()
        )));
    }
    let w = &model.weights;
    let lambda = model.lambda;
    let estimates: Vec<BlockVec> = blocks
        .iter()
        .zip(locals)
        .map(|(kq, l)| BlockVec::new(vec![matvec(kq.as_ref(), l.alpha())]))
        .collect();
    let mut fbar = weighted_sum(w, &estimates)?;
    let mut out = vec![fbar.block(0).to_vec()];

    for round in 1..=rounds {
        let f_prev = &model.iterates[round - 1];
        let grads = locals
            .iter()
            .zip(blocks)
            .map(|(l, kq)| {
                l.query_gradient(kq.as_ref(), f_prev.block(l.shard_id()), fbar.block(0))
                    .map(|g| BlockVec::new(vec![g]))
            })
            .collect::<Result<Vec<_>>>()?;
        let global = weighted_sum(w, &grads)?;
        let corrections: Vec<BlockVec> = locals
            .iter()
            .zip(blocks)
            .enumerate()
            .map(|(j, (_, kq))| {
                let g = matvec(kq.as_ref(), &model.betas[round - 1][j]);
                BlockVec::new(vec![global.block(0).iter().zip(&g).map(|(a, b)| a - b).collect()])
            })
            .collect();
        let avg = weighted_sum(w, &corrections)?;
        fbar.add_scaled(-1.0 / lambda, &avg);
        out.push(fbar.block(0).to_vec());
    }
    Ok(out)
}

/// Testing flow after all completed rounds.
pub fn predict_dkrr(model: &DkrrModel, locals: &[LocalState], query: &Points, kernel: &Kernel) -> Result<Vec<f64>> {
    let mut all = predict_dkrr_rounds(model, locals, query, kernel, model.rounds())?;
    Ok(all.pop().expect("round 0 is always present"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, partition_even, seeded_rng, SyntheticTask, Target};
    use crate::krr::KrrModel;

    fn setup(target: Target, n: usize, m: usize, seed: u64) -> (Dataset, Partition, Kernel) {
        let task = SyntheticTask::new(target, 0.2).unwrap();
        let d = generate(&task, n, true, &mut seeded_rng(seed, 0)).unwrap();
        let p = partition_even(n, m, &mut seeded_rng(seed, 1)).unwrap();
        let k = match target {
            Target::G1 => Kernel::Min,
            Target::G2 => Kernel::Wendland,
        };
        (d, p, k)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn scalar_walkthrough() {
        let d = Dataset::new(Points::from_scalars(&[0.5]), vec![2.0]).unwrap();
        let p = Partition::from_shards(1, vec![vec![0]]).unwrap();
        let init = BlockVec::new(vec![vec![1.4]]);
        let run = run_dkrr_from(&d, &p, &Kernel::Min, 0.5, 1, Some(init)).unwrap();
        assert!((run.model.iterate(1).unwrap().block(0)[0] - 1.5).abs() < 1e-15);
        assert!((run.model.beta(1, 0).unwrap()[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_rounds_is_weighted_average() {
        let (d, p, k) = setup(Target::G1, 90, 3, 1);
        let run = run_dkrr(&d, &p, &k, 1e-3, 0).unwrap();
        let q = generate(&SyntheticTask::new(Target::G1, 0.0).unwrap(), 25, false, &mut seeded_rng(2, 0))
            .unwrap();
        let got = predict_dkrr(&run.model, &run.locals, q.inputs(), &k).unwrap();
        let mut want = vec![0.0; 25];
        for (shard, w) in p.split(&d).unwrap().iter().zip(p.weights()) {
            let local = KrrModel::fit(shard, &k, 1e-3).unwrap().predict(q.inputs(), &k).unwrap();
            for (a, b) in want.iter_mut().zip(local) {
                *a += w * b;
            }
        }
        assert!(max_diff(&got, &want) < 1e-12);
        assert_eq!(run.model.rounds(), 0);
    }

    #[test]
    fn one_machine_collapses_to_krr() {
        let (d, p, k) = setup(Target::G1, 80, 1, 3);
        let full = KrrModel::fit(&d, &k, 1e-3).unwrap();
        let fitted = full.predict(d.inputs(), &k).unwrap();
        for rounds in [0, 1, 3] {
            let run = run_dkrr(&d, &p, &k, 1e-3, rounds).unwrap();
            let f = run.model.iterate(rounds).unwrap().to_data_order(&p).unwrap();
            assert!(max_diff(&f, &fitted) < 1e-10);
            let pred = predict_dkrr(&run.model, &run.locals, d.inputs(), &k).unwrap();
            assert!(max_diff(&pred, &fitted) < 1e-10);
        }
    }

    #[test]
    fn one_machine_single_round_from_any_start() {
        let (d, p, k) = setup(Target::G1, 50, 1, 4);
        let fitted = KrrModel::fit(&d, &k, 1e-2).unwrap().predict(d.inputs(), &k).unwrap();
        let init = BlockVec::new(vec![(0..50).map(|i| (i as f64).cos()).collect()]);
        let run = run_dkrr_from(&d, &p, &k, 1e-2, 1, Some(init)).unwrap();
        let f = run.model.iterate(1).unwrap().to_data_order(&p).unwrap();
        assert!(max_diff(&f, &fitted) < 1e-10);
    }

    #[test]
    fn krr_start_is_a_fixed_point() {
        let (d, p, k) = setup(Target::G2, 120, 4, 5);
        let fitted = KrrModel::fit(&d, &k, 1e-3).unwrap().predict(d.inputs(), &k).unwrap();
        let init = BlockVec::from_data_order(&p, &fitted).unwrap();
        let run = run_dkrr_from(&d, &p, &k, 1e-3, 3, Some(init.clone())).unwrap();
        for r in 1..=3 {
            let f = run.model.iterate(r).unwrap();
            assert!(max_diff(&f.flatten(), &init.flatten()) < 1e-10);
        }
    }

    #[test]
    fn train_and_test_flows_agree() {
        let (d, p, k) = setup(Target::G2, 100, 4, 6);
        let run = run_dkrr(&d, &p, &k, 1e-3, 4).unwrap();
        let shards = p.split(&d).unwrap();
        for (j, shard) in shards.iter().enumerate() {
            let rounds = predict_dkrr_rounds(&run.model, &run.locals, shard.inputs(), &k, 4).unwrap();
            for (r, pred) in rounds.iter().enumerate() {
                assert!(max_diff(pred, run.model.iterate(r).unwrap().block(j)) < 1e-10);
            }
        }
    }

    #[test]
    fn cached_blocks_match_kernel_blocks() {
        let (d, p, k) = setup(Target::G2, 90, 3, 11);
        let q = generate(&SyntheticTask::new(Target::G2, 0.0).unwrap(), 20, false, &mut seeded_rng(12, 0)).unwrap();
        let plain = run_dkrr(&d, &p, &k, 1e-3, 3).unwrap();
        let cache = GramCache::new(&k, d.inputs()).unwrap();
        let sharded = ShardedGram::new(&cache, &p).unwrap();
        let cached = run_dkrr_cached(&d, &sharded, 1e-3, 3).unwrap();
        let cross = k.gram(q.inputs(), d.inputs()).unwrap();
        let blocks = split_query_columns(cross.as_ref(), &p).unwrap();
        let a = predict_dkrr_rounds(&plain.model, &plain.locals, q.inputs(), &k, 3).unwrap();
        let b = predict_dkrr_rounds_with_blocks(&cached.model, &cached.locals, &blocks, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(max_diff(x, y) < 1e-12);
        }
        assert_eq!(plain.model.comm_log().messages(), cached.model.comm_log().messages());
    }

    #[test]
    fn too_many_rounds_requested() {
        let (d, p, k) = setup(Target::G1, 30, 2, 7);
        let run = run_dkrr(&d, &p, &k, 1e-2, 1).unwrap();
        assert!(matches!(
            predict_dkrr_rounds(&run.model, &run.locals, d.inputs(), &k, 2),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn ledger_matches_closed_form() {
        let (d, p, k) = setup(Target::G1, 10, 2, 8);
        let run = run_dkrr(&d, &p, &k, 1e-2, 1).unwrap();
        let t = comm_totals(run.model.comm_log(), 2, 10, 1).unwrap();
        assert_eq!(t.per_round, vec![70]);
        assert_eq!(t.synthesis, 20);
        assert_eq!(t.input_broadcast, 10);
        let run = run_dkrr(&d, &p, &k, 1e-2, 0).unwrap();
        let t = comm_totals(run.model.comm_log(), 2, 10, 0).unwrap();
        assert!(t.per_round.is_empty());
        assert_eq!(t.cumulative, vec![20]);
    }

    #[test]
    fn initial_iterate_is_weighted_synthesis() {
        let (d, p, k) = setup(Target::G1, 40, 2, 9);
        let run = run_dkrr(&d, &p, &k, 1e-2, 0).unwrap();
        let msgs: Vec<BlockVec> = run.locals.iter().map(LocalState::synthesis_message).collect();
        let mut want = msgs[0].scaled(0.5);
        want.add_scaled(0.5, &msgs[1]);
        assert_eq!(run.model.iterate(0).unwrap(), &want);
    }

    #[test]
    fn tiny_local_shards_diverge_and_flag() {
        // Two-point shards with a tiny ridge: the local Hessians are far
        // from the global one and the iteration blows up.
        let (d, p, k) = setup(Target::G1, 400, 200, 10);
        let run = run_dkrr(&d, &p, &k, 1e-6, 60).unwrap();
        assert!(run.model.diverged());
        assert!(run.model.rounds() < 60);
        for r in 0..=run.model.rounds() {
            assert!(run.model.iterate(r).unwrap().is_finite());
        }
    }
}
