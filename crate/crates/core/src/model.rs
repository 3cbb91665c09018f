//! Grids, images, sinograms and region masks.
//!
//! Images are stored row-major: pixel `(ix, iy)` lives at `iy * nx + ix`,
//! with `x` growing along a row and `y` growing with the row index. The
//! image occupies the rectangle `[0, dx] x [0, dy]`.

use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        let grid = GridSpec { nx, ny, dx, dy };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid on the unit square.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2x2 pixels, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dx.is_finite() && self.dy.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "extent must be positive, got {} x {}",
                self.dx, self.dy
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        self.dx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.dy / self.ny as f64
    }

    /// Smallest pixel pitch.
    pub fn h(&self) -> f64 {
        self.hx().min(self.hy())
    }

    pub fn diagonal(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Physical coordinates of a pixel center.
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * self.hx(), (iy as f64 + 0.5) * self.hy())
    }

    /// Pixel center in unit-square coordinates.
    pub fn unit_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            (ix as f64 + 0.5) / self.nx as f64,
            (iy as f64 + 0.5) / self.ny as f64,
        )
    }

    pub fn is_square(&self) -> bool {
        self.nx == self.ny
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} entry {i} is {}", values[i])));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Image {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_len(grid.len(), values.len())?;
        check_finite(&values, "image")?;
        Ok(Image { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Image {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn filled(grid: GridSpec, value: f64) -> Self {
        Image {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index(ix, iy)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Image {
        Image {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    angles: Vec<f64>,
    nbins: usize,
    values: Vec<f64>,
}

/// `n` equally spaced angles covering `[0, pi)`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| PI * k as f64 / n as f64).collect()
}

pub(crate) fn validate_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(Error::invalid("at least one view angle is required"));
    }
    for (k, &a) in angles.iter().enumerate() {
        if !(0.0..PI).contains(&a) {
            return Err(Error::invalid(format!(
                "angle {k} = {a} outside [0, pi)"
            )));
        }
        if k > 0 && a <= angles[k - 1] {
            return Err(Error::invalid("angles must be strictly increasing"));
        }
    }
    Ok(())
}

impl Sinogram {
    pub fn new(angles: Vec<f64>, nbins: usize, values: Vec<f64>) -> Result<Self> {
        validate_angles(&angles)?;
        if nbins == 0 {
            return Err(Error::invalid("sinogram needs at least one bin"));
        }
        check_len(angles.len() * nbins, values.len())?;
        check_finite(&values, "sinogram")?;
        Ok(Sinogram {
            angles,
            nbins,
            values,
        })
    }

    pub fn zeros(angles: Vec<f64>, nbins: usize) -> Result<Self> {
        let n = angles.len() * nbins;
        Self::new(angles, nbins, vec![0.0; n])
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn nangles(&self) -> usize {
        self.angles.len()
    }

    pub fn nbins(&self) -> usize {
        self.nbins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Detector row of one view.
    pub fn view(&self, k: usize) -> &[f64] {
        &self.values[k * self.nbins..(k + 1) * self.nbins]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Same geometry, new payload.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Sinogram> {
        check_len(self.values.len(), values.len())?;
        check_finite(&values, "sinogram")?;
        Ok(Sinogram {
            angles: self.angles.clone(),
            nbins: self.nbins,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: GridSpec,
    membership: Vec<bool>,
    label: String,
}

impl RegionMask {
    pub fn new(grid: GridSpec, membership: Vec<bool>, label: impl Into<String>) -> Result<Self> {
        grid.validate()?;
        check_len(grid.len(), membership.len())?;
        let label = label.into();
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "mask label must be a non-empty word, got {label:?}"
            )));
        }
        Ok(RegionMask {
            grid,
            membership,
            label,
        })
    }

    pub fn full(grid: GridSpec, label: impl Into<String>) -> Result<Self> {
        Self::new(grid, vec![true; grid.len()], label)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn count(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.membership[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_degenerate() {
        assert!(GridSpec::new(1, 4, 1.0, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 0.0, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 1.0, f64::NAN).is_err());
        let g = GridSpec::new(4, 2, 2.0, 1.0).unwrap();
        assert_eq!(g.hx(), 0.5);
        assert_eq!(g.hy(), 0.5);
        assert_eq!(g.index(3, 1), 7);
    }

    #[test]
    fn image_rejects_non_finite_and_bad_length() {
        let g = GridSpec::unit(2).unwrap();
        assert!(Image::new(g, vec![0.0; 3]).is_err());
        assert!(matches!(
            Image::new(g, vec![0.0, 1.0, f64::INFINITY, 2.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sinogram_angle_checks() {
        assert!(Sinogram::zeros(vec![0.0, PI], 3).is_err());
        assert!(Sinogram::zeros(vec![0.5, 0.2], 3).is_err());
        assert!(Sinogram::zeros(uniform_angles(4), 0).is_err());
        let s = Sinogram::zeros(uniform_angles(4), 3).unwrap();
        assert_eq!(s.values().len(), 12);
    }

    #[test]
    fn mask_label_is_a_word() {
        let g = GridSpec::unit(2).unwrap();
        assert!(RegionMask::full(g, "two words").is_err());
        assert_eq!(RegionMask::full(g, "GR").unwrap().count(), 4);
    }
}
