//! Global reductions executed by the coordinator.

use super::comm::{CommLog, Endpoint, ProtocolStep};
use super::local::LocalState;
use super::BlockVec;
use crate::error::{Error, Result};

/// Iterates with an entry beyond this magnitude are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// `sum_j w_j v_j`, accumulated in machine order.
pub fn weighted_sum(weights: &[f64], items: &[BlockVec]) -> Result<BlockVec> {
    if weights.len() != items.len() || items.is_empty() {
        return Err(Error::invalid(format!(
            "{} weights for {} machine messages",
            weights.len(),
            items.len()
        )));
    }
    let sizes = items[0].sizes();
    if items.iter().any(|v| v.sizes() != sizes) {
        return Err(Error::invalid("machine messages have different block sizes"));
    }
    let mut acc = items[0].scaled(weights[0]);
    for (w, v) in weights.iter().zip(items).skip(1) {
        acc.add_scaled(*w, v);
    }
    Ok(acc)
}

/// Weighted average of the local estimators at every training block.
///
/// Each machine sends `m` vectors of total length `N`.
pub fn synthesize_initial(locals: &[LocalState], weights: &[f64], log: &mut CommLog) -> Result<BlockVec> {
    let messages: Vec<BlockVec> = locals.iter().map(LocalState::synthesis_message).collect();
    synthesize_messages(&messages, weights, log)
}

pub(crate) fn synthesize_messages(messages: &[BlockVec], weights: &[f64], log: &mut CommLog) -> Result<BlockVec> {
    for (j, msg) in messages.iter().enumerate() {
        log.record(0, ProtocolStep::Synthesis, Endpoint::Machine(j), Endpoint::Coordinator, msg.total_len());
    }
    weighted_sum(weights, messages)
}

/// Global gradient at every block; logs the inbound local gradients and the
/// redistribution of all `m` global blocks to every machine.
pub fn synthesize_gradient(
    per_machine: &[BlockVec],
    weights: &[f64],
    round: usize,
    log: &mut CommLog,
) -> Result<BlockVec> {
    let global = weighted_sum(weights, per_machine)?;
    for (j, g) in per_machine.iter().enumerate() {
        log.record(round, ProtocolStep::LocalGradient, Endpoint::Machine(j), Endpoint::Coordinator, g.total_len());
    }
    for j in 0..per_machine.len() {
        log.record(round, ProtocolStep::GlobalGradient, Endpoint::Coordinator, Endpoint::Machine(j), global.total_len());
    }
    Ok(global)
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Updated(BlockVec),
    /// Some entry was non-finite or exceeded [`DIVERGENCE_LIMIT`].
    Diverged,
}

/// `f_k <- f_k - (1/lambda) sum_j w_j H_{j,k}`, then delivery of block `j`
/// to machine `j`.
pub fn global_update(
    f_prev: &BlockVec,
    corrections: &[BlockVec],
    lambda: f64,
    weights: &[f64],
    round: usize,
    log: &mut CommLog,
) -> Result<UpdateOutcome> {
    if f_prev.sizes() != corrections.first().map(BlockVec::sizes).unwrap_or_default() {
        return Err(Error::invalid("corrections do not match the iterate blocks"));
    }
    for (j, h) in corrections.iter().enumerate() {
        log.record(round, ProtocolStep::Correction, Endpoint::Machine(j), Endpoint::Coordinator, h.total_len());
    }
    let avg = weighted_sum(weights, corrections)?;
    let mut next = f_prev.clone();
    next.add_scaled(-1.0 / lambda, &avg);
    for (j, block) in next.blocks().iter().enumerate() {
        log.record(round, ProtocolStep::Update, Endpoint::Coordinator, Endpoint::Machine(j), block.len());
    }
    if next.max_abs() > DIVERGENCE_LIMIT || !next.is_finite() {
        return Ok(UpdateOutcome::Diverged);
    }
    Ok(UpdateOutcome::Updated(next))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_single_machine_is_identity() {
        let v = BlockVec::new(vec![vec![0.1, 0.7], vec![1.0 / 3.0]]);
        assert_eq!(weighted_sum(&[1.0], std::slice::from_ref(&v)).unwrap(), v);
    }

    #[test]
    fn gradient_synthesis_cases() {
        let mut log = CommLog::new();
        let a = BlockVec::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = BlockVec::new(vec![vec![3.0, 0.0], vec![1.0, 0.0]]);
        let g = synthesize_gradient(&[a.clone(), b], &[0.5, 0.5], 1, &mut log).unwrap();
        assert_eq!(g, BlockVec::new(vec![vec![2.0, 1.0], vec![2.0, 2.0]]));
        assert_eq!(log.step_total(1, ProtocolStep::LocalGradient), 8);
        assert_eq!(log.step_total(1, ProtocolStep::GlobalGradient), 8);

        let z = BlockVec::zeros(&[2, 2]);
        let g = synthesize_gradient(&[z.clone(), z.clone()], &[0.5, 0.5], 1, &mut CommLog::new()).unwrap();
        assert_eq!(g, z);
        let g = synthesize_gradient(std::slice::from_ref(&a), &[1.0], 1, &mut CommLog::new()).unwrap();
        assert_eq!(g, a);
    }

    #[test]
    fn zero_corrections_are_a_fixed_point() {
        let f = BlockVec::new(vec![vec![0.3, -1.2], vec![5.0]]);
        let h = BlockVec::zeros(&[2, 1]);
        let out = global_update(&f, &[h.clone(), h], 0.01, &[0.5, 0.5], 1, &mut CommLog::new()).unwrap();
        assert_eq!(out, UpdateOutcome::Updated(f));
    }

    #[test]
    fn scalar_update() {
        // f = 1.4, H = -0.05, lambda = 0.5 -> 1.5
        let f = BlockVec::new(vec![vec![1.4]]);
        let h = BlockVec::new(vec![vec![-0.05]]);
        let mut log = CommLog::new();
        let out = global_update(&f, &[h], 0.5, &[1.0], 1, &mut log).unwrap();
        match out {
            UpdateOutcome::Updated(v) => assert!((v.block(0)[0] - 1.5).abs() < 1e-15),
            UpdateOutcome::Diverged => panic!("scalar round diverged"),
        }
        assert_eq!(log.step_total(1, ProtocolStep::Update), 1);
    }

    #[test]
    fn divergence_is_flagged() {
        let f = BlockVec::new(vec![vec![0.0]]);
        let h = BlockVec::new(vec![vec![-1e9]]);
        let out = global_update(&f, &[h], 1e-4, &[1.0], 1, &mut CommLog::new()).unwrap();
        assert_eq!(out, UpdateOutcome::Diverged);
        let h = BlockVec::new(vec![vec![f64::NAN]]);
        let out = global_update(&f, &[h], 1.0, &[1.0], 1, &mut CommLog::new()).unwrap();
        assert_eq!(out, UpdateOutcome::Diverged);
    }
}
