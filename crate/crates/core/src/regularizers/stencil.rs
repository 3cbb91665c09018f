//! Finite-difference stencils with Neumann (replicated-boundary) closure.
//!
//! All derivatives are physical: first differences divide by the pixel
//! pitch, second differences by its square.

use crate::model::GridSpec;

/// Up to three `(column, coefficient)` pairs of one stencil row.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StencilRow {
    len: usize,
    entries: [(usize, f64); 3],
}

impl StencilRow {
    fn push(&mut self, col: usize, coef: f64) {
        self.entries[self.len] = (col, coef);
        self.len += 1;
    }

    pub(crate) fn entries(&self) -> &[(usize, f64)] {
        &self.entries[..self.len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Axis {
    X,
    Y,
}

fn axis_geometry(grid: &GridSpec, axis: Axis) -> (usize, usize, f64) {
    // (length along axis, index stride, pitch)
    match axis {
        Axis::X => (grid.nx, 1, grid.hx()),
        Axis::Y => (grid.ny, grid.nx, grid.hy()),
    }
}

fn position(grid: &GridSpec, axis: Axis, i: usize) -> usize {
    match axis {
        Axis::X => i % grid.nx,
        Axis::Y => i / grid.nx,
    }
}

/// Forward difference; zero on the last line along `axis`.
pub(crate) fn first_diff_row(grid: &GridSpec, axis: Axis, i: usize) -> StencilRow {
    let (n, stride, h) = axis_geometry(grid, axis);
    let mut row = StencilRow::default();
    if position(grid, axis, i) + 1 < n {
        row.push(i, -1.0 / h);
        row.push(i + stride, 1.0 / h);
    }
    row
}

/// Centered first difference `(u[i+1] - u[i-1]) / 2h` with replicated
/// boundary values.
pub(crate) fn central_diff_row(grid: &GridSpec, axis: Axis, i: usize) -> StencilRow {
    let (n, stride, h) = axis_geometry(grid, axis);
    let c = 0.5 / h;
    let p = position(grid, axis, i);
    let mut row = StencilRow::default();
    if n == 1 {
        return row;
    }
    row.push(if p == 0 { i } else { i - stride }, -c);
    row.push(if p + 1 == n { i } else { i + stride }, c);
    row
}

/// Centered second difference with replicated boundary values.
pub(crate) fn second_diff_row(grid: &GridSpec, axis: Axis, i: usize) -> StencilRow {
    let (n, stride, h) = axis_geometry(grid, axis);
    let c = 1.0 / (h * h);
    let p = position(grid, axis, i);
    let mut row = StencilRow::default();
    if p == 0 {
        row.push(i, -c);
        row.push(i + stride, c);
    } else if p + 1 == n {
        row.push(i - stride, c);
        row.push(i, -c);
    } else {
        row.push(i - stride, c);
        row.push(i, -2.0 * c);
        row.push(i + stride, c);
    }
    row
}

fn apply(grid: &GridSpec, u: &[f64], row_at: impl Fn(usize) -> StencilRow) -> Vec<f64> {
    (0..grid.len())
        .map(|i| row_at(i).entries().iter().map(|&(c, w)| w * u[c]).sum())
        .collect()
}

pub(crate) fn first_diff(grid: &GridSpec, axis: Axis, u: &[f64]) -> Vec<f64> {
    apply(grid, u, |i| first_diff_row(grid, axis, i))
}

pub(crate) fn central_diff(grid: &GridSpec, axis: Axis, u: &[f64]) -> Vec<f64> {
    apply(grid, u, |i| central_diff_row(grid, axis, i))
}

pub(crate) fn second_diff(grid: &GridSpec, axis: Axis, u: &[f64]) -> Vec<f64> {
    apply(grid, u, |i| second_diff_row(grid, axis, i))
}

/// Appends the triplets of `sum_i diag[i] * s_i s_i^T` over stencil rows `s_i`.
pub(crate) fn push_weighted_gram(
    grid: &GridSpec,
    diag: &[f64],
    row_at: impl Fn(usize) -> StencilRow,
    out: &mut Vec<(usize, usize, f64)>,
) {
    for i in 0..grid.len() {
        let row = row_at(i);
        let e = row.entries();
        for &(ca, va) in e {
            for &(cb, vb) in e {
                out.push((ca, cb, diag[i] * va * vb));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differences_vanish_on_constants() {
        let g = GridSpec::new(5, 4, 2.0, 1.0).unwrap();
        let u = vec![3.0; g.len()];
        for axis in [Axis::X, Axis::Y] {
            assert!(first_diff(&g, axis, &u).iter().all(|&v| v == 0.0));
            assert!(second_diff(&g, axis, &u).iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn differences_on_a_linear_ramp() {
        let g = GridSpec::new(6, 3, 3.0, 1.0).unwrap();
        let h = g.hx();
        let u: Vec<f64> = (0..g.len()).map(|i| (i % 6) as f64 * h * 2.0).collect();
        let d = first_diff(&g, Axis::X, &u);
        for i in 0..g.len() {
            let expect = if i % 6 == 5 { 0.0 } else { 2.0 };
            assert!((d[i] - expect).abs() < 1e-12);
        }
        let dd = second_diff(&g, Axis::X, &u);
        // interior zero; Neumann ends see the replicated value
        assert!(dd[2].abs() < 1e-9);
        assert!((dd[0] - 2.0 / h).abs() < 1e-9);
        assert!((dd[5] + 2.0 / h).abs() < 1e-9);
    }
}
