//! Sparse Cholesky of `sigma^2 I + w R` used to precondition the inner CG.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{MatMut, Side};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Factorization cache. The symbolic analysis is kept across outer
/// iterations since the gradient matrices keep a fixed pattern.
#[derive(Default)]
pub(crate) struct ShiftedCholesky {
    symbolic: Option<(Vec<usize>, Vec<u32>, SymbolicLlt<usize>)>,
    numeric: Option<Llt<usize, f64>>,
}

impl ShiftedCholesky {
    /// Factors `shift * I + weight * r`.
    pub(crate) fn factor(&mut self, r: &CsrMatrix, weight: f64, shift: f64) -> Result<()> {
        let h = r.scaled(weight).shifted(shift);
        let n = h.nrows();
        // symmetric, so the CSR arrays double as CSC arrays
        let col_ptr = h.offsets().to_vec();
        let row_idx: Vec<usize> = h.indices().iter().map(|&c| c as usize).collect();
        let same_pattern = matches!(&self.symbolic,
            Some((o, i, _)) if o.as_slice() == h.offsets() && i.as_slice() == h.indices());
        if !same_pattern {
            let sym = SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
            let llt = SymbolicLlt::try_new(sym.as_ref(), Side::Lower)
                .map_err(|e| Error::Numerical(format!("symbolic factorization failed: {e:?}")))?;
            self.symbolic = Some((h.offsets().to_vec(), h.indices().to_vec(), llt));
        }
        let sym = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let mat = SparseColMat::new(sym, h.weights().to_vec());
        let symbolic = self.symbolic.as_ref().expect("set above").2.clone();
        let llt = Llt::try_new_with_symbolic(symbolic, mat.as_ref(), Side::Lower)
            .map_err(|e| Error::Numerical(format!("preconditioner not positive definite: {e:?}")))?;
        self.numeric = Some(llt);
        Ok(())
    }

    /// Overwrites `x` with the solution of the factored system.
    pub(crate) fn solve_in_place(&self, x: &mut [f64]) {
        let llt = self.numeric.as_ref().expect("factor before solve");
        let n = x.len();
        llt.solve_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
    }
}
