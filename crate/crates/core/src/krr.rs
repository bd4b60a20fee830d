//! Single-machine kernel ridge regression.
//!
//! The dual coefficients solve `(K + lambda * n * I) alpha = y`, which is the
//! minimizer of `(1/n) sum (f(x_i) - y_i)^2 + lambda |f|_K^2` written through
//! the representer theorem.

use faer::{Mat, MatRef};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{matvec, SpdFactor};
use crate::points::Points;

/// Solves `a x = b` for symmetric positive-definite `a`.
///
/// Uses a Cholesky factorization, retried once with a small diagonal jitter
/// if the first attempt fails.
pub fn solve_spd(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!(
            "system of size {} with {} right-hand-side rows",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(SpdFactor::new(a, None)?.solve_mat(b))
}

/// `K + lambda * n * I` for a square Gram matrix.
pub fn regularized(gram: MatRef<'_, f64>, lambda: f64) -> Mat<f64> {
    let n = gram.nrows();
    let shift = lambda * n as f64;
    let mut a = gram.to_owned();
    for i in 0..n {
        a[(i, i)] += shift;
    }
    a
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "regularization parameter must be positive and finite, got {lambda}"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct KrrModel {
    anchors: Points,
    alpha: Vec<f64>,
    lambda: f64,
}

impl KrrModel {
    pub fn fit(data: &Dataset, kernel: &Kernel, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if data.is_empty() {
            return Err(Error::invalid("cannot fit on an empty dataset"));
        }
        let gram = kernel.gram_symmetric(data.inputs())?;
        Self::fit_with_gram(data, gram.as_ref(), lambda)
    }

    /// Fit reusing a precomputed Gram matrix of `data.inputs()`.
    pub fn fit_with_gram(data: &Dataset, gram: MatRef<'_, f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if gram.nrows() != data.len() || gram.ncols() != data.len() {
            return Err(Error::invalid("Gram matrix does not match the dataset"));
        }
        let factor = SpdFactor::new(regularized(gram, lambda).as_ref(), Some(lambda))?;
        let alpha = factor.solve_vec(data.outputs());
        Ok(KrrModel {
            anchors: data.inputs().clone(),
            alpha,
            lambda,
        })
    }

    pub fn from_parts(anchors: Points, alpha: Vec<f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if anchors.len() != alpha.len() {
            return Err(Error::invalid("one coefficient per anchor is required"));
        }
        Ok(KrrModel {
            anchors,
            alpha,
            lambda,
        })
    }

    pub fn anchors(&self) -> &Points {
        &self.anchors
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `f(q) = sum_i alpha_i K(q, anchor_i)` for every query point.
    pub fn predict(&self, query: &Points, kernel: &Kernel) -> Result<Vec<f64>> {
        let kq = kernel.gram(query, &self.anchors)?;
        Ok(self.predict_with_cross_gram(kq.as_ref()))
    }

    /// Prediction from a precomputed `K(query, anchors)` block.
    pub fn predict_with_cross_gram(&self, cross: MatRef<'_, f64>) -> Vec<f64> {
        matvec(cross, &self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, seeded_rng, SyntheticTask, Target};
    use crate::linalg::{dot, frobenius};

    fn single_point() -> Dataset {
        Dataset::new(Points::from_scalars(&[0.5]), vec![2.0]).unwrap()
    }

    #[test]
    fn identity_system() {
        let a = Mat::<f64>::identity(3, 3);
        let b = Mat::from_fn(3, 1, |i, _| i as f64 + 1.0);
        let x = solve_spd(a.as_ref(), b.as_ref()).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_system() {
        let a = Mat::from_fn(2, 2, |i, j| if i != j { 0.0 } else if i == 0 { 2.0 } else { 4.0 });
        let b = Mat::from_fn(2, 1, |i, _| if i == 0 { 2.0 } else { 8.0 });
        let x = solve_spd(a.as_ref(), b.as_ref()).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((x[(1, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_system_closed_form() {
        let (k, lambda, n, y) = (1.5, 0.5, 1.0, 3.0);
        let a = Mat::from_fn(1, 1, |_, _| k + lambda * n);
        let b = Mat::from_fn(1, 1, |_, _| y);
        let x = solve_spd(a.as_ref(), b.as_ref()).unwrap();
        assert!((x[(0, 0)] - y / (k + lambda * n)).abs() < 1e-15);
    }

    #[test]
    fn residual_is_small_on_kernel_systems() {
        let task = SyntheticTask::new(Target::G2, 0.2).unwrap();
        let d = generate(&task, 120, true, &mut seeded_rng(4, 0)).unwrap();
        let g = Kernel::Wendland.gram(d.inputs(), d.inputs()).unwrap();
        let a = regularized(g.as_ref(), 1e-4);
        let b = Mat::from_fn(120, 2, |i, j| d.outputs()[i] * (j as f64 + 1.0));
        let x = solve_spd(a.as_ref(), b.as_ref()).unwrap();
        let r = &a * &x - &b;
        assert!(frobenius(r.as_ref()) <= 1e-8 * frobenius(b.as_ref()));
    }

    #[test]
    fn non_square_or_mismatched_rejected() {
        let a = Mat::<f64>::identity(2, 2);
        let b = Mat::<f64>::zeros(3, 1);
        assert!(solve_spd(a.as_ref(), b.as_ref()).is_err());
    }

    #[test]
    fn single_point_fit_and_predict() {
        let m = KrrModel::fit(&single_point(), &Kernel::Min, 0.5).unwrap();
        assert!((m.alpha()[0] - 1.0).abs() < 1e-14);
        let p = m.predict(&Points::from_scalars(&[0.5]), &Kernel::Min).unwrap();
        assert!((p[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn zero_outputs_give_zero_model() {
        let x = Points::from_scalars(&[0.1, 0.4, 0.9]);
        let d = Dataset::new(x.clone(), vec![0.0; 3]).unwrap();
        let m = KrrModel::fit(&d, &Kernel::Min, 1e-2).unwrap();
        assert!(m.alpha().iter().all(|&a| a == 0.0));
        assert!(m.predict(&x, &Kernel::Min).unwrap().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn heavy_ridge_shrinks() {
        let task = SyntheticTask::new(Target::G1, 0.2).unwrap();
        let d = generate(&task, 30, true, &mut seeded_rng(8, 0)).unwrap();
        let lambda = 1e6;
        let m = KrrModel::fit(&d, &Kernel::Min, lambda).unwrap();
        let ny = dot(d.outputs(), d.outputs()).sqrt();
        let na = dot(m.alpha(), m.alpha()).sqrt();
        assert!(na <= ny / (lambda * 30.0));
        let p = m.predict(d.inputs(), &Kernel::Min).unwrap();
        assert!(p.iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn scalar_alpha_decreases_in_lambda() {
        let d = single_point();
        let mut prev = f64::INFINITY;
        for lambda in [1e-3, 1e-2, 0.1, 0.5, 2.0, 10.0] {
            let a = KrrModel::fit(&d, &Kernel::Min, lambda).unwrap().alpha()[0];
            assert!((a - 2.0 / (1.5 + lambda)).abs() < 1e-14);
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn near_interpolation_on_noiseless_data() {
        // Finite sums of min-kernel sections are in the RKHS; g1 is one up to
        // a constant offset. A tiny ridge interpolates.
        let task = SyntheticTask::new(Target::G1, 0.0).unwrap();
        let d = generate(&task, 40, false, &mut seeded_rng(21, 0)).unwrap();
        let m = KrrModel::fit(&d, &Kernel::Min, 1e-10).unwrap();
        let p = m.predict(d.inputs(), &Kernel::Min).unwrap();
        for (a, b) in p.iter().zip(d.outputs()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(KrrModel::fit(&single_point(), &Kernel::Min, 0.0).is_err());
        assert!(KrrModel::fit(&single_point(), &Kernel::Min, f64::NAN).is_err());
    }
}
