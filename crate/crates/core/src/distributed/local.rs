//! State and computations of one local machine.

use std::sync::Arc;
use std::time::{Duration, Instant};

use faer::{Accum, Mat, MatRef};

use super::comm::{CommLog, Endpoint, ProtocolStep};
use super::BlockVec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::krr::{check_lambda, regularized};
use crate::linalg::{matvec, matvec_into, SpdFactor};
use crate::points::Points;

/// Everything machine `j` keeps after the local process.
///
/// Outputs `y_j` never leave this struct; peers and the coordinator only
/// ever see vectors computed from them.
pub struct LocalState {
    shard_id: usize,
    inputs: Points,
    outputs: Vec<f64>,
    lambda: f64,
    /// `K_jj + lambda |D_j| I`
    factor: SpdFactor,
    alpha: Vec<f64>,
    /// `K(D, D_j)` with rows grouped by shard: block `k` is `K(D_k, D_j)`.
    cross: Arc<Mat<f64>>,
    /// Row offset of each block in `cross`, plus the total.
    offsets: Vec<usize>,
    setup_time: Duration,
    factor_time: Duration,
}

impl LocalState {
    /// Local kernel ridge fit plus the cached cross-Gram blocks against every
    /// shard's inputs. Records the broadcast of this shard's inputs.
    pub fn train(
        shard_id: usize,
        shard: &Dataset,
        all_inputs: &[Points],
        kernel: &Kernel,
        lambda: f64,
        log: &mut CommLog,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        if shard.is_empty() {
            return Err(Error::invalid(format!("shard {shard_id} is empty")));
        }
        let own = all_inputs.get(shard_id).ok_or_else(|| {
            Error::invalid(format!("shard {shard_id} missing from the input broadcast"))
        })?;
        if own != shard.inputs() {
            return Err(Error::invalid(format!(
                "broadcast inputs of shard {shard_id} differ from the shard"
            )));
        }
        let m = all_inputs.len();
        for peer in (0..m).filter(|&k| k != shard_id) {
            log.record(
                0,
                ProtocolStep::InputBroadcast,
                Endpoint::Machine(shard_id),
                Endpoint::Machine(peer),
                shard.len() * shard.dim(),
            );
        }

        let start = Instant::now();
        let sizes: Vec<usize> = all_inputs.iter().map(Points::len).collect();
        let offsets = block_offsets(&sizes);
        let mut cross = Mat::<f64>::zeros(offsets[m], shard.len());
        for (k, pts) in all_inputs.iter().enumerate() {
            let block = if k == shard_id {
                kernel.gram_symmetric(pts)?
            } else {
                kernel.gram(pts, shard.inputs())?
            };
            cross.as_mut().subrows_mut(offsets[k], sizes[k]).copy_from(&block);
        }
        Self::finish(shard_id, shard, Arc::new(cross), offsets, lambda, start)
    }

    /// As [`LocalState::train`] with `K(D, D_j)` supplied by the caller
    /// (rows grouped by shard, `block_sizes` giving the group sizes), e.g.
    /// cut from a cached Gram matrix and shared between runs.
    pub fn train_with_blocks(
        shard_id: usize,
        shard: &Dataset,
        cross: Arc<Mat<f64>>,
        block_sizes: &[usize],
        lambda: f64,
        log: &mut CommLog,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        if shard.is_empty() {
            return Err(Error::invalid(format!("shard {shard_id} is empty")));
        }
        let offsets = block_offsets(block_sizes);
        if block_sizes.get(shard_id) != Some(&shard.len())
            || cross.nrows() != offsets[block_sizes.len()]
            || cross.ncols() != shard.len()
        {
            return Err(Error::invalid(format!("cross-Gram blocks of shard {shard_id} have the wrong shape")));
        }
        for peer in (0..block_sizes.len()).filter(|&k| k != shard_id) {
            log.record(
                0,
                ProtocolStep::InputBroadcast,
                Endpoint::Machine(shard_id),
                Endpoint::Machine(peer),
                shard.len() * shard.dim(),
            );
        }
        Self::finish(shard_id, shard, cross, offsets, lambda, Instant::now())
    }

    fn finish(
        shard_id: usize,
        shard: &Dataset,
        cross: Arc<Mat<f64>>,
        offsets: Vec<usize>,
        lambda: f64,
        start: Instant,
    ) -> Result<Self> {
        let factor_start = Instant::now();
        let own = cross.as_ref().subrows(offsets[shard_id], shard.len());
        let factor = SpdFactor::new(regularized(own, lambda).as_ref(), Some(lambda))?;
        let alpha = factor.solve_vec(shard.outputs());
        let factor_time = factor_start.elapsed();
        Ok(LocalState {
            shard_id,
            inputs: shard.inputs().clone(),
            outputs: shard.outputs().to_vec(),
            lambda,
            factor,
            alpha,
            cross,
            offsets,
            setup_time: start.elapsed(),
            factor_time,
        })
    }

    pub fn shard_id(&self) -> usize {
        self.shard_id
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `K(D_k, D_j)`.
    pub fn cross_block(&self, k: usize) -> MatRef<'_, f64> {
        self.cross.as_ref().subrows(self.offsets[k], self.offsets[k + 1] - self.offsets[k])
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Wall time of the local process (Gram blocks, factorization, solve).
    pub fn setup_time(&self) -> Duration {
        self.setup_time
    }

    /// Wall time of the factorization and solve alone.
    pub fn factor_time(&self) -> Duration {
        self.factor_time
    }

    /// Diagonal jitter the factorization needed, zero normally.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    /// Synthesis message: the local estimator at every block, `K(D_k, D_j) alpha_j`.
    pub fn synthesis_message(&self) -> BlockVec {
        let all = matvec(Mat::as_ref(&self.cross), &self.alpha);
        BlockVec::from_flat(&self.block_sizes(), &all).expect("cross rows match the block sizes")
    }

    fn check_blocks(&self, v: &BlockVec, what: &str) -> Result<()> {
        let sizes = self.block_sizes();
        if v.sizes() != sizes {
            return Err(Error::invalid(format!(
                "{what} has block sizes {:?}, machine {} expects {:?}",
                v.sizes(),
                self.shard_id,
                sizes
            )));
        }
        Ok(())
    }

    /// Local gradient at every block:
    /// `K(D_k, D_j) (f_j - y_j) / |D_j| + lambda f_k`.
    pub fn local_gradient(&self, f_prev: &BlockVec) -> Result<BlockVec> {
        self.check_blocks(f_prev, "previous iterate")?;
        let residual: Vec<f64> = f_prev
            .block(self.shard_id)
            .iter()
            .zip(&self.outputs)
            .map(|(f, y)| f - y)
            .collect();
        let mut g: Vec<f64> = f_prev.blocks().iter().flatten().map(|v| self.lambda * v).collect();
        matvec_into(&mut g, Mat::as_ref(&self.cross), &residual, Accum::Add, 1.0 / self.len() as f64);
        BlockVec::from_flat(&self.block_sizes(), &g)
    }

    /// Kernel ridge regression on the gradient data of this shard.
    ///
    /// Returns `beta_j = M_j G_j` and the corrections
    /// `H_k = G_k - K(D_k, D_j) beta_j` for every block `k`.
    pub fn newton_correction(&self, global_gradient: &BlockVec) -> Result<(Vec<f64>, BlockVec)> {
        self.check_blocks(global_gradient, "global gradient")?;
        let beta = self.factor.solve_vec(global_gradient.block(self.shard_id));
        let mut h = global_gradient.flatten();
        matvec_into(&mut h, Mat::as_ref(&self.cross), &beta, Accum::Add, -1.0);
        Ok((beta, BlockVec::from_flat(&self.block_sizes(), &h)?))
    }

    /// `K(D', D_j)` for a batch of query points.
    pub fn query_block(&self, kernel: &Kernel, query: &Points) -> Result<Mat<f64>> {
        kernel.gram(query, &self.inputs)
    }

    /// Testing-flow local gradient at the queries:
    /// `K(D', D_j) (f_j - y_j) / |D_j| + lambda fbar(D')`.
    pub fn query_gradient(&self, query_block: MatRef<'_, f64>, f_prev_own: &[f64], fbar_prev: &[f64]) -> Result<Vec<f64>> {
        if f_prev_own.len() != self.len() || query_block.ncols() != self.len() || query_block.nrows() != fbar_prev.len() {
            return Err(Error::invalid(format!(
                "query gradient on machine {}: inconsistent vector lengths",
                self.shard_id
            )));
        }
        let residual: Vec<f64> = f_prev_own.iter().zip(&self.outputs).map(|(f, y)| f - y).collect();
        let mut g: Vec<f64> = fbar_prev.iter().map(|v| self.lambda * v).collect();
        matvec_into(&mut g, query_block, &residual, Accum::Add, 1.0 / self.len() as f64);
        Ok(g)
    }
}

fn block_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len() + 1);
    offsets.push(0);
    for s in sizes {
        offsets.push(offsets.last().copied().unwrap_or(0) + s);
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, partition_even, seeded_rng, SyntheticTask, Target};
    use crate::krr::KrrModel;
    use crate::linalg::norm2;

    fn single() -> (Dataset, Vec<Points>) {
        let d = Dataset::new(Points::from_scalars(&[0.5]), vec![2.0]).unwrap();
        let inputs = vec![d.inputs().clone()];
        (d, inputs)
    }

    #[test]
    fn single_point_local_fit() {
        let (d, inputs) = single();
        let mut log = CommLog::new();
        let s = LocalState::train(0, &d, &inputs, &Kernel::Min, 0.5, &mut log).unwrap();
        assert!((s.alpha()[0] - 1.0).abs() < 1e-14);
        assert_eq!(log.messages().len(), 0);
    }

    #[test]
    fn scalar_gradient_vanishes_at_minimizer() {
        let (d, inputs) = single();
        let s = LocalState::train(0, &d, &inputs, &Kernel::Min, 0.5, &mut CommLog::new()).unwrap();
        let g = s.local_gradient(&BlockVec::new(vec![vec![1.5]])).unwrap();
        assert!(g.block(0)[0].abs() < 1e-14);
    }

    #[test]
    fn scalar_newton_correction() {
        let (d, inputs) = single();
        let s = LocalState::train(0, &d, &inputs, &Kernel::Min, 0.5, &mut CommLog::new()).unwrap();
        let (beta, h) = s.newton_correction(&BlockVec::new(vec![vec![1.0]])).unwrap();
        assert!((beta[0] - 0.5).abs() < 1e-14);
        assert!((h.block(0)[0] - 0.25).abs() < 1e-14);
        let (beta, h) = s.newton_correction(&BlockVec::new(vec![vec![0.0]])).unwrap();
        assert_eq!(beta, vec![0.0]);
        assert_eq!(h.block(0), &[0.0]);
    }

    fn shards(n: usize, m: usize, seed: u64) -> (Vec<Dataset>, Vec<Points>) {
        let task = SyntheticTask::new(Target::G1, 0.2).unwrap();
        let d = generate(&task, n, true, &mut seeded_rng(seed, 0)).unwrap();
        let p = partition_even(n, m, &mut seeded_rng(seed, 1)).unwrap();
        let parts = p.split(&d).unwrap();
        let inputs = parts.iter().map(|s| s.inputs().clone()).collect();
        (parts, inputs)
    }

    #[test]
    fn cached_blocks_and_alpha_residual() {
        let (parts, inputs) = shards(60, 3, 2);
        let mut log = CommLog::new();
        let lambda = 1e-3;
        let s = LocalState::train(1, &parts[1], &inputs, &Kernel::Min, lambda, &mut log).unwrap();
        assert_eq!(s.block_sizes(), vec![20, 20, 20]);
        let own = Kernel::Min.gram(&inputs[1], &inputs[1]).unwrap();
        assert_eq!(s.cross_block(1), own.as_ref());
        for k in 0..3 {
            let c = s.cross_block(k);
            assert_eq!((c.nrows(), c.ncols()), (inputs[k].len(), 20));
        }
        let a = regularized(own.as_ref(), lambda);
        let r: Vec<f64> = matvec(a.as_ref(), s.alpha())
            .iter()
            .zip(parts[1].outputs())
            .map(|(u, v)| u - v)
            .collect();
        assert!(norm2(&r) <= 1e-8 * norm2(parts[1].outputs()));
        // 20 inputs of dimension 1 to each of 2 peers
        assert_eq!(log.step_total(0, ProtocolStep::InputBroadcast), 40);
    }

    #[test]
    fn one_machine_matches_full_fit() {
        let (parts, inputs) = shards(40, 1, 3);
        let s = LocalState::train(0, &parts[0], &inputs, &Kernel::Min, 1e-2, &mut CommLog::new()).unwrap();
        let full = KrrModel::fit(&parts[0], &Kernel::Min, 1e-2).unwrap();
        for (a, b) in s.alpha().iter().zip(full.alpha()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn correction_is_regularized_inverse_on_self_block() {
        // H = lambda (K/n + lambda I)^{-1} G on the own block.
        let (parts, inputs) = shards(30, 2, 5);
        let lambda = 1e-2;
        let s = LocalState::train(0, &parts[0], &inputs, &Kernel::Min, lambda, &mut CommLog::new()).unwrap();
        let g = BlockVec::new(vec![
            (0..15).map(|i| (i as f64 * 0.37).sin()).collect(),
            vec![0.0; 15],
        ]);
        let (_, h) = s.newton_correction(&g).unwrap();
        let n = 15.0;
        let k = Kernel::Min.gram(&inputs[0], &inputs[0]).unwrap();
        let mut a = Mat::from_fn(15, 15, |i, j| k[(i, j)] / n);
        for i in 0..15 {
            a[(i, i)] += lambda;
        }
        let lu = a.partial_piv_lu();
        use faer::linalg::solvers::Solve;
        let rhs = Mat::from_fn(15, 1, |i, _| lambda * g.block(0)[i]);
        let want = lu.solve(&rhs);
        for i in 0..15 {
            assert!((h.block(0)[i] - want[(i, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let (parts, inputs) = shards(20, 2, 6);
        let s = LocalState::train(0, &parts[0], &inputs, &Kernel::Min, 1e-2, &mut CommLog::new()).unwrap();
        assert!(s.local_gradient(&BlockVec::new(vec![vec![0.0; 10]])).is_err());
        assert!(s.newton_correction(&BlockVec::new(vec![vec![0.0; 9], vec![0.0; 10]])).is_err());
    }

    #[test]
    fn zero_iterate_on_zero_outputs_has_zero_gradient() {
        let x = Points::from_scalars(&[0.1, 0.6, 0.8]);
        let d = Dataset::new(x.clone(), vec![0.0; 3]).unwrap();
        let s = LocalState::train(0, &d, &[x], &Kernel::Min, 0.1, &mut CommLog::new()).unwrap();
        let g = s.local_gradient(&BlockVec::zeros(&[3])).unwrap();
        assert!(g.block(0).iter().all(|&v| v == 0.0));
    }
}
