//! Mercer kernels and Gram matrices.
//!
//! Two fixed kernels are provided: the min-kernel `K(x, x') = 1 + min(x, x')`
//! on `[0, 1]`, and the compactly supported radial kernel
//! `K(x, x') = h(|x - x'|)` with `h(r) = (1 - r)^4 (4r + 1)` on `[0, 1]` and
//! zero beyond. Custom kernels are trusted to be symmetric and positive
//! semi-definite.

use std::fmt;
use std::sync::Arc;

use faer::Mat;

use crate::error::{Error, Result};
use crate::points::Points;

type KernelFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// A user-supplied kernel function with a display name.
#[derive(Clone)]
pub struct CustomKernel {
    name: String,
    func: Arc<KernelFn>,
}

impl CustomKernel {
    pub fn new<F>(name: impl Into<String>, func: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        CustomKernel {
            name: name.into(),
            func: Arc::new(func),
        }
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Kernel {
    /// `1 + min(x, x')`, one-dimensional inputs only.
    Min,
    /// `h(|x - x'|_2)` with `h(r) = (1 - r)^4 (4r + 1)` for `r <= 1`, else 0.
    Wendland,
    Custom(CustomKernel),
}

/// The radial profile of [`Kernel::Wendland`].
#[inline]
pub fn wendland_profile(r: f64) -> f64 {
    if r <= 1.0 {
        let s = 1.0 - r;
        let s2 = s * s;
        s2 * s2 * (4.0 * r + 1.0)
    } else {
        0.0
    }
}

#[inline]
fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl Kernel {
    /// Looks a kernel up by its configuration name (`"min"` or `"wendland"`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "min" | "k1" => Ok(Kernel::Min),
            "wendland" | "k2" => Ok(Kernel::Wendland),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Kernel::Min => "min",
            Kernel::Wendland => "wendland",
            Kernel::Custom(c) => &c.name,
        }
    }

    /// Checks that points of dimension `dim` are admissible.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Kernel::Min if dim != 1 => Err(Error::invalid(format!(
                "the min-kernel needs one-dimensional inputs, got dimension {dim}"
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluation without dimension checks; callers validate once per batch.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Min => 1.0 + x[0].min(y[0]),
            Kernel::Wendland => wendland_profile(euclidean(x, y)),
            Kernel::Custom(c) => (c.func)(x, y),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "kernel arguments of dimension {} and {}",
                x.len(),
                y.len()
            )));
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Cross-Gram matrix with entry `(i, j) = K(rows[i], cols[j])`.
    ///
    /// When `rows` and `cols` hold the same points the symmetric path is
    /// taken, so the result is bitwise symmetric.
    pub fn gram(&self, rows: &Points, cols: &Points) -> Result<Mat<f64>> {
        if rows.dim() != cols.dim() {
            return Err(Error::invalid(format!(
                "gram of {}-dimensional against {}-dimensional points",
                rows.dim(),
                cols.dim()
            )));
        }
        self.check_dim(rows.dim())?;
        if std::ptr::eq(rows, cols) || rows == cols {
            return Ok(self.gram_symmetric_unchecked(rows));
        }
        Ok(Mat::from_fn(rows.len(), cols.len(), |i, j| {
            self.eval_unchecked(rows.point(i), cols.point(j))
        }))
    }

    /// Symmetric Gram matrix of one point list; each pair is evaluated once.
    pub fn gram_symmetric(&self, points: &Points) -> Result<Mat<f64>> {
        self.check_dim(points.dim())?;
        Ok(self.gram_symmetric_unchecked(points))
    }

    fn gram_symmetric_unchecked(&self, points: &Points) -> Mat<f64> {
        let n = points.len();
        let mut g = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            let xj = points.point(j);
            for i in j..n {
                let v = self.eval_unchecked(points.point(i), xj);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}
