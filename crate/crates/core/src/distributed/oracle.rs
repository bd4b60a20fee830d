//! Operator-form reference for the communication iteration.
//!
//! Every iterate is held as a coefficient vector `c` over all `N` training
//! inputs, `f = sum_i c_i K(x_i, .)`. In that representation
//!
//! * `L_D f` has coefficients `K c / N`, and `S_D^T y` has `y / N`;
//! * the gradient `(L_D + lambda) f - S_D^T y` has `(K c - y) / N + lambda c`;
//! * `(L_{D_j} + lambda)^{-1} g` has `a / lambda - E_j (K_jj + lambda n_j I)^{-1} K_{j,:} a / lambda`
//!   where `a` are the coefficients of `g` and `E_j` scatters into shard `j`.
//!
//! The recursion is `c^0 = sum_j w_j (L_{D_j} + lambda)^{-1} S_{D_j}^T y_j`
//! and `c^l = c^{l-1} - sum_j w_j (L_{D_j} + lambda)^{-1} grad(c^{l-1})`.
//! Local systems are solved by pivoted LU rather than Cholesky, and no
//! block-wise protocol vector is reused.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::krr::check_lambda;
use crate::linalg::matvec;
use crate::points::Points;

/// Largest sample the dense `N x N` reference accepts.
pub const ORACLE_MAX_SAMPLES: usize = 2000;

#[derive(Debug, Clone)]
pub struct OracleTrajectory {
    anchors: Points,
    /// `coefficients[l]` in data order.
    coefficients: Vec<Vec<f64>>,
}

impl OracleTrajectory {
    pub fn anchors(&self) -> &Points {
        &self.anchors
    }

    pub fn coefficients(&self, round: usize) -> Option<&[f64]> {
        self.coefficients.get(round).map(Vec::as_slice)
    }

    pub fn rounds(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn predict(&self, round: usize, query: &Points, kernel: &Kernel) -> Result<Vec<f64>> {
        let c = self
            .coefficients(round)
            .ok_or_else(|| Error::InvalidState(format!("oracle holds no round {round}")))?;
        let kq = kernel.gram(query, &self.anchors)?;
        Ok(matvec(kq.as_ref(), c))
    }
}

struct ShardOperator<'a> {
    indices: &'a [usize],
    /// `K(D_j, D)`, `n_j x N`
    rows: Mat<f64>,
    lu: PartialPivLu<f64>,
}

impl ShardOperator<'_> {
    /// Coefficients of `(L_{D_j} + lambda I)^{-1}` applied to the function with coefficients `a`.
    fn apply_inverse(&self, a: &[f64], lambda: f64) -> Vec<f64> {
        let rhs = matvec(self.rows.as_ref(), a);
        let rhs = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let t = self.lu.solve(&rhs);
        let mut h: Vec<f64> = a.iter().map(|v| v / lambda).collect();
        for (p, &i) in self.indices.iter().enumerate() {
            h[i] -= t[(p, 0)] / lambda;
        }
        h
    }
}

fn rows_of(gram: MatRef<'_, f64>, indices: &[usize]) -> Mat<f64> {
    Mat::from_fn(indices.len(), gram.ncols(), |p, c| gram[(indices[p], c)])
}

pub fn oracle_coefficient_iteration(
    data: &Dataset,
    partition: &Partition,
    kernel: &Kernel,
    lambda: f64,
    rounds: usize,
) -> Result<OracleTrajectory> {
    check_lambda(lambda)?;
    let n = data.len();
    if n > ORACLE_MAX_SAMPLES {
        return Err(Error::invalid(format!(
            "oracle works on at most {ORACLE_MAX_SAMPLES} samples, got {n}"
        )));
    }
    if partition.total() != n {
        return Err(Error::invalid("partition does not match the dataset"));
    }
    let gram = kernel.gram_symmetric(data.inputs())?;
    let y = data.outputs();
    let nf = n as f64;

    let ops: Vec<ShardOperator<'_>> = partition
        .shards()
        .iter()
        .map(|idx| {
            let nj = idx.len() as f64;
            let mut local = Mat::from_fn(idx.len(), idx.len(), |p, q| gram[(idx[p], idx[q])]);
            for p in 0..idx.len() {
                local[(p, p)] += lambda * nj;
            }
            ShardOperator {
                indices: idx,
                rows: rows_of(gram.as_ref(), idx),
                lu: local.partial_piv_lu(),
            }
        })
        .collect();
    let weights = partition.weights();

    let apply_average_inverse = |a_of: &dyn Fn(&ShardOperator<'_>) -> Vec<f64>| {
        let mut out = vec![0.0; n];
        for (op, w) in ops.iter().zip(&weights) {
            let h = op.apply_inverse(&a_of(op), lambda);
            for (o, v) in out.iter_mut().zip(h) {
                *o += w * v;
            }
        }
        out
    };

    // S_{D_j}^T y_j: coefficients y_i / n_j on shard j, zero elsewhere.
    let c0 = apply_average_inverse(&|op: &ShardOperator<'_>| {
        let mut a = vec![0.0; n];
        let nj = op.indices.len() as f64;
        for &i in op.indices {
            a[i] = y[i] / nj;
        }
        a
    });
    let mut coefficients = vec![c0];
    for _ in 0..rounds {
        let c = coefficients.last().expect("c^0 present");
        let kc = matvec(gram.as_ref(), c);
        let grad: Vec<f64> = kc
            .iter()
            .zip(y)
            .zip(c)
            .map(|((k, yi), ci)| (k - yi) / nf + lambda * ci)
            .collect();
        let step = apply_average_inverse(&|_: &ShardOperator<'_>| grad.clone());
        coefficients.push(c.iter().zip(&step).map(|(a, b)| a - b).collect());
    }
    Ok(OracleTrajectory {
        anchors: data.inputs().clone(),
        coefficients,
    })
}
