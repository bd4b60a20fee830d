use crate::error::{Error, Result};

/// An ordered list of points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Points { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::invalid("cannot infer dimension of an empty point list"))?;
        let mut coords = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid(format!(
                    "point of dimension {} in a list of dimension {dim}",
                    r.len()
                )));
            }
            coords.extend_from_slice(r);
        }
        Points::new(dim, coords)
    }

    /// One-dimensional points from scalars.
    pub fn from_scalars(xs: &[f64]) -> Self {
        Points {
            dim: 1,
            coords: xs.to_vec(),
        }
    }

    pub fn empty(dim: usize) -> Self {
        Points {
            dim,
            coords: Vec::new(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::invalid(format!(
                "cannot push a {}-dimensional point into a {}-dimensional list",
                p.len(),
                self.dim
            )));
        }
        self.coords.extend_from_slice(p);
        Ok(())
    }

    /// The points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Points {
            dim: self.dim,
            coords,
        }
    }

    /// Concatenation of several lists sharing one dimension.
    pub fn concat(parts: &[Points]) -> Result<Points> {
        let dim = parts
            .first()
            .map(|p| p.dim)
            .ok_or_else(|| Error::invalid("cannot concatenate zero point lists"))?;
        let mut coords = Vec::new();
        for p in parts {
            if p.dim != dim {
                return Err(Error::invalid("point lists of different dimensions"));
            }
            coords.extend_from_slice(&p.coords);
        }
        Ok(Points { dim, coords })
    }
}
