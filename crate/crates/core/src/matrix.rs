//! Dense square matrices and the two domain views built on them: Euclidean
//! distance matrices and edge-probability heatmaps.

use std::ops::Deref;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Builds a symmetric matrix with zero diagonal from a function of the
    /// upper-triangle index pair `(i, j)`, `i < j`.
    pub fn symmetric_from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimMismatch { expected: n * n, got: data.len() });
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Iterates the strict upper triangle as `(i, j, value)`.
    pub fn upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| ((i + 1)..self.n).map(move |j| (i, j, self.get(i, j))))
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        if self.n != n {
            return Err(Error::DimMismatch { expected: n, got: self.n });
        }
        Ok(())
    }
}

/// Symmetric, nonnegative, zero-diagonal edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix(SquareMatrix);

impl DistanceMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        for i in 0..m.n() {
            if m.get(i, i) != 0.0 {
                return Err(Error::InvalidParam(format!("nonzero diagonal at {i}")));
            }
        }
        if !m.is_symmetric() || m.as_slice().iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParam("distance matrix must be symmetric, finite, nonnegative".into()));
        }
        Ok(Self(m))
    }

    /// Weight lookup that does not require symmetry; used for the directed
    /// matrices produced by the node-splitting reduction.
    pub fn asymmetric(m: SquareMatrix) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    /// Length of the closed walk visiting `tour` in order. Tours of one node
    /// have length 0, tours of two nodes are out-and-back.
    pub fn tour_length(&self, tour: &[usize]) -> f64 {
        if tour.len() < 2 {
            return 0.0;
        }
        let mut len = 0.0;
        for k in 0..tour.len() {
            len += self.get(tour[k], tour[(k + 1) % tour.len()]);
        }
        len
    }

    /// Restricts the matrix to `nodes` (in the given order).
    pub fn submatrix(&self, nodes: &[usize]) -> DistanceMatrix {
        DistanceMatrix(SquareMatrix::from_fn(nodes.len(), |a, b| self.get(nodes[a], nodes[b])))
    }
}

impl Deref for DistanceMatrix {
    type Target = SquareMatrix;
    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

/// Symmetric matrix of edge-inclusion probabilities with zero diagonal: the
/// relaxed solution predicted by the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap(SquareMatrix);

impl Heatmap {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        for i in 0..m.n() {
            if m.get(i, i) != 0.0 {
                return Err(Error::InvalidParam(format!("heatmap diagonal nonzero at {i}")));
            }
        }
        if !m.is_symmetric() {
            return Err(Error::InvalidParam("heatmap must be symmetric".into()));
        }
        if m.as_slice().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParam("heatmap entries must lie in [0, 1]".into()));
        }
        Ok(Self(m))
    }

    /// Builds a heatmap from upper-triangle values; the caller guarantees the
    /// range.
    pub fn from_upper(n: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        let m = SquareMatrix::symmetric_from_fn(n, f);
        debug_assert!(m.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        Self(m)
    }

    pub fn uniform(n: usize, p: f64) -> Self {
        Self::from_upper(n, |_, _| p)
    }

    /// Adjacency matrix of a closed tour.
    pub fn from_tour(n: usize, tour: &[usize]) -> Self {
        let mut m = SquareMatrix::zeros(n);
        if tour.len() >= 2 {
            for k in 0..tour.len() {
                let (a, b) = (tour[k], tour[(k + 1) % tour.len()]);
                if a != b {
                    m.set(a, b, 1.0);
                    m.set(b, a, 1.0);
                }
            }
        }
        Self(m)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.0
    }
}

impl Deref for Heatmap {
    type Target = SquareMatrix;
    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_validation() {
        let mut m = SquareMatrix::zeros(3);
        m.set(0, 1, 0.5);
        assert!(Heatmap::new(m.clone()).is_err());
        m.set(1, 0, 0.5);
        assert!(Heatmap::new(m.clone()).is_ok());
        m.set(2, 2, 0.1);
        assert!(Heatmap::new(m).is_err());
        let over = SquareMatrix::symmetric_from_fn(3, |_, _| 1.5);
        assert!(Heatmap::new(over).is_err());
    }

    #[test]
    fn tour_adjacency_has_degree_two() {
        let h = Heatmap::from_tour(5, &[0, 3, 1, 4, 2]);
        for i in 0..5 {
            assert_eq!(h.row(i).iter().sum::<f64>(), 2.0);
        }
        // Out-and-back tours touch one edge.
        let h2 = Heatmap::from_tour(4, &[0, 2]);
        assert_eq!(h2.get(0, 2), 1.0);
        assert_eq!(h2.row(0).iter().sum::<f64>(), 1.0);
    }
}
