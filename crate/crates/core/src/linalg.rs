//! Dense linear-algebra plumbing over `faer`.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{Llt, Solve};
use faer::{Accum, ColMut, ColRef, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// `a * x` for a dense matrix and a slice.
pub fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    matvec_into(&mut out, a, x, Accum::Replace, 1.0);
    out
}

/// `out (+)= alpha * a * x`.
pub fn matvec_into(out: &mut [f64], a: MatRef<'_, f64>, x: &[f64], accum: Accum, alpha: f64) {
    assert_eq!(a.ncols(), x.len(), "matvec: inner dimensions differ");
    assert_eq!(a.nrows(), out.len(), "matvec: output length differs");
    if a.nrows() == 0 {
        return;
    }
    if a.ncols() == 0 {
        if let Accum::Replace = accum {
            out.fill(0.0);
        }
        return;
    }
    matmul(
        ColMut::from_slice_mut(out),
        accum,
        a,
        ColRef::from_slice(x),
        alpha,
        Par::Seq,
    );
}

/// `a^T * x`.
pub fn matvec_transpose(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    matvec(a.transpose(), x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn trace(a: MatRef<'_, f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Frobenius norm.
pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// If the plain factorization fails, it is retried once with
/// `1e-12 * trace / n` added to the diagonal; the shift used is kept.
pub struct SpdFactor {
    llt: Llt<f64>,
    size: usize,
    jitter: f64,
}

impl SpdFactor {
    pub const JITTER_SCALE: f64 = 1e-12;

    /// Factors `a`; `lambda` only labels the error.
    pub fn new(a: MatRef<'_, f64>, lambda: Option<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid(format!(
                "cannot factor a non-square {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::invalid("cannot factor an empty matrix"));
        }
        if let Ok(llt) = a.llt(Side::Lower) {
            return Ok(SpdFactor {
                llt,
                size: n,
                jitter: 0.0,
            });
        }
        let jitter = Self::JITTER_SCALE * trace(a) / n as f64;
        let mut shifted = a.to_owned();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        match shifted.llt(Side::Lower) {
            Ok(llt) if jitter.is_finite() && jitter > 0.0 => Ok(SpdFactor {
                llt,
                size: n,
                jitter,
            }),
            _ => Err(Error::NumericalFailure { size: n, lambda }),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Diagonal shift added by the fallback, zero when none was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.size, "solve: right-hand side length differs");
        let mut x = b.to_vec();
        self.llt.solve_in_place(ColMut::from_slice_mut(&mut x).as_mat_mut());
        x
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(b.nrows(), self.size, "solve: right-hand side rows differ");
        self.llt.solve(b)
    }
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::NumericalFailure {
            size: a.nrows(),
            lambda: None,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_hand_product() {
        let a = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(matvec(a.as_ref(), &[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(matvec_transpose(a.as_ref(), &[1.0, 1.0]), vec![3.0, 5.0, 7.0]);
        let mut out = vec![1.0, 1.0];
        matvec_into(&mut out, a.as_ref(), &[1.0, 1.0, 1.0], Accum::Add, 2.0);
        assert_eq!(out, vec![7.0, 25.0]);
    }

    #[test]
    fn empty_inner_dimension() {
        let a = Mat::<f64>::zeros(2, 0);
        assert_eq!(matvec(a.as_ref(), &[]), vec![0.0, 0.0]);
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank one, PSD but singular
        let a = Mat::from_fn(3, 3, |_, _| 1.0);
        let f = SpdFactor::new(a.as_ref(), None);
        if let Ok(f) = f {
            assert!(f.jitter() >= 0.0);
        }
        let neg = Mat::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(matches!(
            SpdFactor::new(neg.as_ref(), Some(0.1)),
            Err(Error::NumericalFailure { size: 2, lambda: Some(_) })
        ));
    }
}
