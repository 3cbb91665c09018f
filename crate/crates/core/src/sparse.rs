//! Compressed sparse row matrices.

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};

/// Row-compressed sparse matrix with `u32` column indices.
///
/// Products iterate each row in storage order, so results are bitwise
/// reproducible regardless of how rows are scheduled across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        offsets: Vec<usize>,
        indices: Vec<u32>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        check_len(nrows + 1, offsets.len())?;
        check_len(indices.len(), weights.len())?;
        if offsets[0] != 0 || offsets[nrows] != indices.len() {
            return Err(Error::format("row offsets must span the index array"));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::format("row offsets must be nondecreasing"));
        }
        if indices.iter().any(|&c| c as usize >= ncols) {
            return Err(Error::format("column index out of range"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("sparse weight".into()));
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            offsets,
            indices,
            weights,
        })
    }

    /// Builds from per-row entry lists, kept in the given order.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let nrows = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut offsets = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        offsets.push(0);
        for row in rows {
            for (c, w) in row {
                debug_assert!((c as usize) < ncols);
                indices.push(c);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            offsets,
            indices,
            weights,
        }
    }

    /// Sums duplicate `(row, col)` entries in insertion order and sorts
    /// columns within each row.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let pattern = Pattern::new(nrows, ncols, triplets.iter().map(|&(r, c, _)| (r, c)))?;
        pattern.assemble(triplets.iter().map(|t| t.2))
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            offsets: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            weights: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.offsets[r]..self.offsets[r + 1];
        (&self.indices[span.clone()], &self.weights[span])
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, w) = self.row(r);
        cols.iter()
            .zip(w)
            .map(|(&c, &w)| w * x[c as usize])
            .sum()
    }

    /// `y = M x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec input length");
        assert_eq!(y.len(), self.nrows, "matvec output length");
        y.par_iter_mut()
            .with_min_len(256)
            .enumerate()
            .for_each(|(r, out)| *out = self.row_dot(r, x));
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Explicit transpose; column order within each output row follows the
    /// input row order.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut weights = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (cols, w) = self.row(r);
            for (&c, &w) in cols.iter().zip(w) {
                let slot = &mut fill[c as usize];
                indices[*slot] = r as u32;
                weights[*slot] = w;
                *slot += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            offsets,
            indices,
            weights,
        }
    }

    /// `M + shift * I` for square `M`; the diagonal entry is added if absent.
    pub fn shifted(&self, shift: f64) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols);
        let mut rows = Vec::with_capacity(self.nrows);
        for r in 0..self.nrows {
            let (cols, w) = self.row(r);
            let mut row: Vec<(u32, f64)> = cols.iter().copied().zip(w.iter().copied()).collect();
            match row.iter_mut().find(|(c, _)| *c as usize == r) {
                Some(e) => e.1 += shift,
                None => {
                    row.push((r as u32, shift));
                    row.sort_by_key(|e| e.0);
                }
            }
            rows.push(row);
        }
        CsrMatrix::from_rows(self.ncols, rows)
    }

    pub fn scaled(&self, c: f64) -> CsrMatrix {
        CsrMatrix {
            weights: self.weights.iter().map(|w| w * c).collect(),
            ..self.clone()
        }
    }

    /// Dense row-major copy, for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, w) = self.row(r);
            for (&c, &w) in cols.iter().zip(w) {
                row[c as usize] += w;
            }
        }
        d
    }
}

/// Sparsity pattern of a triplet stream together with the CSR slot of every
/// triplet, so matrices sharing the stream layout assemble by scattering.
#[derive(Debug, Clone)]
pub(crate) struct Pattern {
    nrows: usize,
    ncols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    slots: Vec<u32>,
}

impl Pattern {
    pub(crate) fn new(
        nrows: usize,
        ncols: usize,
        positions: impl ExactSizeIterator<Item = (usize, usize)> + Clone,
    ) -> Result<Self> {
        if ncols > u32::MAX as usize || positions.len() > u32::MAX as usize {
            return Err(Error::invalid("matrix too large for u32 indices"));
        }
        if let Some((r, c)) = positions.clone().find(|&(r, c)| r >= nrows || c >= ncols) {
            return Err(Error::invalid(format!(
                "triplet ({r}, {c}) outside {nrows}x{ncols}"
            )));
        }
        // stable bucket by row, then a stable sort of each (short) row by column
        let mut start = vec![0usize; nrows + 1];
        for (r, _) in positions.clone() {
            start[r + 1] += 1;
        }
        for r in 0..nrows {
            start[r + 1] += start[r];
        }
        let mut fill = start.clone();
        let mut bucket: Vec<(u32, u32)> = vec![(0, 0); positions.len()];
        for (k, (r, c)) in positions.enumerate() {
            bucket[fill[r]] = (c as u32, k as u32);
            fill[r] += 1;
        }
        let mut offsets = Vec::with_capacity(nrows + 1);
        let mut indices: Vec<u32> = Vec::with_capacity(bucket.len());
        let mut slots = vec![0u32; bucket.len()];
        offsets.push(0);
        for r in 0..nrows {
            let row = &mut bucket[start[r]..start[r + 1]];
            row.sort_by_key(|e| e.0);
            for &(c, k) in row.iter() {
                if indices.len() == offsets[r] || indices.last() != Some(&c) {
                    indices.push(c);
                }
                slots[k as usize] = (indices.len() - 1) as u32;
            }
            offsets.push(indices.len());
        }
        Ok(Pattern {
            nrows,
            ncols,
            offsets,
            indices,
            slots,
        })
    }

    /// Number of triplets the pattern was built from.
    pub(crate) fn stream_len(&self) -> usize {
        self.slots.len()
    }

    /// Sums the `k`-th value into the slot of the `k`-th triplet, in stream
    /// order.
    pub(crate) fn assemble(&self, values: impl ExactSizeIterator<Item = f64>) -> Result<CsrMatrix> {
        check_len(self.slots.len(), values.len())?;
        let mut weights = vec![0.0; self.indices.len()];
        for (&slot, v) in self.slots.iter().zip(values) {
            weights[slot as usize] += v;
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("sparse weight".into()));
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            offsets: self.offsets.clone(),
            indices: self.indices.clone(),
            weights,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += c * x`
pub(crate) fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5), (1, 0, 3.0)])
            .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense(), vec![vec![0.0, 2.0, 0.0], vec![3.0, 0.0, 1.5]]);
        assert!(CsrMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn transpose_matches_dense() {
        let m = CsrMatrix::from_triplets(3, 2, vec![(0, 1, 2.0), (2, 0, -1.0), (1, 1, 4.0)]).unwrap();
        let t = m.transpose();
        let d = m.to_dense();
        let dt = t.to_dense();
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(d[r][c], dt[c][r]);
            }
        }
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn shifted_adds_missing_diagonal() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]).unwrap();
        assert_eq!(m.shifted(3.0).to_dense(), vec![vec![3.0, 1.0], vec![1.0, 5.0]]);
    }

    #[test]
    fn from_parts_validates() {
        assert!(CsrMatrix::from_parts(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(CsrMatrix::from_parts(2, 2, vec![0, 1, 0], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::from_parts(1, 2, vec![0, 1], vec![1], vec![f64::NAN]).is_err());
    }
}
