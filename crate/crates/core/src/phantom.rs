//! Analytic phantoms.
//!
//! CT phantoms are sums of primitives given in unit-square coordinates and
//! sampled at pixel centers. The emission phantom is a lobed annulus with six
//! seeded Gaussian hot spots, plus the two region masks used for scoring.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{GridSpec, Image, RegionMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Gaussian {
        cx: f64,
        cy: f64,
        sigma: f64,
        amplitude: f64,
    },
    /// `a * max(0, 1 - r^2 / radius^2)`
    Paraboloid {
        cx: f64,
        cy: f64,
        radius: f64,
        amplitude: f64,
    },
    Rectangle {
        x0: f64,
        y0: f64,
        wx: f64,
        wy: f64,
        amplitude: f64,
    },
}

impl Primitive {
    pub fn amplitude(&self) -> f64 {
        match *self {
            Primitive::Gaussian { amplitude, .. }
            | Primitive::Paraboloid { amplitude, .. }
            | Primitive::Rectangle { amplitude, .. } => amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.amplitude();
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid(format!("amplitude must be >= 0, got {a}")));
        }
        match *self {
            Primitive::Gaussian { sigma, .. } if !(sigma > 0.0) => {
                Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            Primitive::Paraboloid { radius, .. } if !(radius > 0.0) => Err(Error::invalid(
                format!("paraboloid radius must be > 0, got {radius}"),
            )),
            Primitive::Rectangle { wx, wy, .. } if !(wx >= 0.0 && wy >= 0.0) => Err(
                Error::invalid(format!("rectangle extent must be >= 0, got {wx} x {wy}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Primitive::Gaussian {
                cx,
                cy,
                sigma,
                amplitude,
            } => {
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                amplitude * (-r2 / (2.0 * sigma * sigma)).exp()
            }
            Primitive::Paraboloid {
                cx,
                cy,
                radius,
                amplitude,
            } => {
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                amplitude * (1.0 - r2 / (radius * radius)).max(0.0)
            }
            Primitive::Rectangle {
                x0,
                y0,
                wx,
                wy,
                amplitude,
            } => {
                if x >= x0 && x < x0 + wx && y >= y0 && y < y0 + wy {
                    amplitude
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhantomDescriptor {
    pub primitives: Vec<Primitive>,
}

impl PhantomDescriptor {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        let desc = PhantomDescriptor { primitives };
        desc.validate()?;
        Ok(desc)
    }

    pub fn validate(&self) -> Result<()> {
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Rectangle, two Gaussians and two paraboloids mixing smooth and
    /// piecewise-constant structure.
    pub fn default_ct() -> Self {
        PhantomDescriptor {
            primitives: vec![
                Primitive::Rectangle {
                    x0: 0.14,
                    y0: 0.60,
                    wx: 0.22,
                    wy: 0.26,
                    amplitude: 1.0,
                },
                Primitive::Gaussian {
                    cx: 0.30,
                    cy: 0.30,
                    sigma: 0.05,
                    amplitude: 0.9,
                },
                Primitive::Gaussian {
                    cx: 0.68,
                    cy: 0.78,
                    sigma: 0.10,
                    amplitude: 0.7,
                },
                Primitive::Paraboloid {
                    cx: 0.72,
                    cy: 0.34,
                    radius: 0.14,
                    amplitude: 1.0,
                },
                Primitive::Paraboloid {
                    cx: 0.44,
                    cy: 0.52,
                    radius: 0.24,
                    amplitude: 0.6,
                },
            ],
        }
    }

    /// Value at a point of the unit square.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.primitives.iter().map(|p| p.eval(x, y)).sum()
    }

    /// Parses one primitive per line:
    ///
    /// ```text
    /// gaussian   cx cy sigma amplitude
    /// paraboloid cx cy radius amplitude
    /// rectangle  x0 y0 wx wy amplitude
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut primitives = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap_or_default();
            let nums: Vec<f64> = parts
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::format(format!("line {}: bad number {t:?}", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            let want = |n: usize| -> Result<()> {
                if nums.len() != n {
                    return Err(Error::format(format!(
                        "line {}: {kind} takes {n} numbers, got {}",
                        lineno + 1,
                        nums.len()
                    )));
                }
                Ok(())
            };
            let prim = match kind {
                "gaussian" => {
                    want(4)?;
                    Primitive::Gaussian {
                        cx: nums[0],
                        cy: nums[1],
                        sigma: nums[2],
                        amplitude: nums[3],
                    }
                }
                "paraboloid" => {
                    want(4)?;
                    Primitive::Paraboloid {
                        cx: nums[0],
                        cy: nums[1],
                        radius: nums[2],
                        amplitude: nums[3],
                    }
                }
                "rectangle" => {
                    want(5)?;
                    Primitive::Rectangle {
                        x0: nums[0],
                        y0: nums[1],
                        wx: nums[2],
                        wy: nums[3],
                        amplitude: nums[4],
                    }
                }
                other => {
                    return Err(Error::format(format!(
                        "line {}: unknown primitive {other:?}",
                        lineno + 1
                    )))
                }
            };
            primitives.push(prim);
        }
        Self::new(primitives)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.primitives {
            let _ = match *p {
                Primitive::Gaussian {
                    cx,
                    cy,
                    sigma,
                    amplitude,
                } => writeln!(out, "gaussian {cx:?} {cy:?} {sigma:?} {amplitude:?}"),
                Primitive::Paraboloid {
                    cx,
                    cy,
                    radius,
                    amplitude,
                } => writeln!(out, "paraboloid {cx:?} {cy:?} {radius:?} {amplitude:?}"),
                Primitive::Rectangle {
                    x0,
                    y0,
                    wx,
                    wy,
                    amplitude,
                } => writeln!(out, "rectangle {x0:?} {y0:?} {wx:?} {wy:?} {amplitude:?}"),
            };
        }
        out
    }
}

/// Samples every primitive at each pixel center (unit-square coordinates).
pub fn generate_ct_phantom(desc: &PhantomDescriptor, grid: &GridSpec) -> Result<Image> {
    desc.validate()?;
    grid.validate()?;
    let mut values = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (x, y) = grid.unit_center(ix, iy);
            values.push(desc.eval(x, y));
        }
    }
    Image::new(*grid, values)
}

/// A Gaussian hot spot of the emission phantom, in unit-square coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotSpot {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

impl HotSpot {
    pub fn as_primitive(&self) -> Primitive {
        Primitive::Gaussian {
            cx: self.cx,
            cy: self.cy,
            sigma: self.sigma,
            amplitude: self.amplitude,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EtPhantom {
    pub image: Image,
    pub gaussian_regions: RegionMask,
    pub bone_region: RegionMask,
    pub hot_spots: Vec<HotSpot>,
}

const SUPPORT_LEVEL: f64 = 0.5;
const N_HOT_SPOTS: usize = 6;
const INNER_RADIUS: f64 = 0.10;

fn outer_radius(phi: f64) -> f64 {
    0.36 + 0.06 * (2.0 * phi).cos()
}

/// Lobed annulus around the image center.
fn in_support(x: f64, y: f64) -> bool {
    let (dx, dy) = (x - 0.5, y - 0.5);
    let r = dx.hypot(dy);
    r >= INNER_RADIUS && r <= outer_radius(dy.atan2(dx))
}

/// Emission phantom with its Gaussian-region (GR) and bone-region (BR) masks.
///
/// GR is the union of disks of radius `2 sigma` around the hot spots; BR is the
/// annulus support minus GR.
pub fn generate_et_phantom(grid: &GridSpec, seed: u64) -> Result<EtPhantom> {
    grid.validate()?;
    if !grid.is_square() {
        return Err(Error::InvalidGrid(format!(
            "emission phantom needs a square grid, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    let n = grid.nx as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spots: Vec<HotSpot> = Vec::with_capacity(N_HOT_SPOTS);
    let mut attempts = 0usize;
    while spots.len() < N_HOT_SPOTS {
        attempts += 1;
        if attempts > 200_000 {
            return Err(Error::Numerical(
                "could not place emission hot spots inside the support".into(),
            ));
        }
        let sigma = rng.random_range(2.0..=8.0) / n;
        let amplitude = rng.random_range(0.4..=1.0);
        let cx = rng.random_range(0.1..0.9);
        let cy = rng.random_range(0.1..0.9);
        let reach = 2.0 * sigma;
        let inside = (0..32).all(|k| {
            let t = 2.0 * PI * k as f64 / 32.0;
            in_support(cx + reach * t.cos(), cy + reach * t.sin())
        }) && in_support(cx, cy);
        let apart = spots
            .iter()
            .all(|s| (s.cx - cx).hypot(s.cy - cy) >= 2.0 * s.sigma + reach);
        if inside && apart {
            spots.push(HotSpot {
                cx,
                cy,
                sigma,
                amplitude,
            });
        }
    }

    let mut values = Vec::with_capacity(grid.len());
    let mut gr = Vec::with_capacity(grid.len());
    let mut br = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (x, y) = grid.unit_center(ix, iy);
            let support = in_support(x, y);
            let mut v = if support { SUPPORT_LEVEL } else { 0.0 };
            let mut in_gr = false;
            for s in &spots {
                v += s.as_primitive().eval(x, y);
                in_gr |= (x - s.cx).hypot(y - s.cy) <= 2.0 * s.sigma;
            }
            values.push(v);
            gr.push(in_gr);
            br.push(support && !in_gr);
        }
    }
    Ok(EtPhantom {
        image: Image::new(*grid, values)?,
        gaussian_regions: RegionMask::new(*grid, gr, "GR")?,
        bone_region: RegionMask::new(*grid, br, "BR")?,
        hot_spots: spots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_descriptor_gives_zero_image() {
        let g = GridSpec::unit(9).unwrap();
        let img = generate_ct_phantom(&PhantomDescriptor::default(), &g).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_rectangle_is_constant() {
        let desc = PhantomDescriptor::new(vec![Primitive::Rectangle {
            x0: 0.0,
            y0: 0.0,
            wx: 1.0,
            wy: 1.0,
            amplitude: 1.0,
        }])
        .unwrap();
        let img = generate_ct_phantom(&desc, &GridSpec::unit(13).unwrap()).unwrap();
        assert!(img.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn default_ct_max_matches_supersampled_evaluation() {
        let desc = PhantomDescriptor::default_ct();
        let g = GridSpec::unit(250).unwrap();
        let img = generate_ct_phantom(&desc, &g).unwrap();
        let fine = 2500;
        let mut dense_max = f64::NEG_INFINITY;
        for iy in 0..fine {
            for ix in 0..fine {
                let x = (ix as f64 + 0.5) / fine as f64;
                let y = (iy as f64 + 0.5) / fine as f64;
                dense_max = dense_max.max(desc.eval(x, y));
            }
        }
        // the supersampled maximum bounds the pixel-center maximum
        assert!(img.max() <= dense_max + 1e-12);
        assert!((img.max() - dense_max).abs() / dense_max < 1e-2);
    }

    #[test]
    fn two_to_one_averaging_agrees_with_direct_sampling() {
        let desc = PhantomDescriptor::default_ct();
        // the simulation pair: 500 sampled, 250 reconstructed
        let coarse = generate_ct_phantom(&desc, &GridSpec::unit(250).unwrap()).unwrap();
        let fine = generate_ct_phantom(&desc, &GridSpec::unit(500).unwrap()).unwrap();
        let mut err2 = 0.0;
        let mut ref2 = 0.0;
        for iy in 0..250 {
            for ix in 0..250 {
                let avg = (fine.get(2 * ix, 2 * iy)
                    + fine.get(2 * ix + 1, 2 * iy)
                    + fine.get(2 * ix, 2 * iy + 1)
                    + fine.get(2 * ix + 1, 2 * iy + 1))
                    / 4.0;
                let c = coarse.get(ix, iy);
                err2 += (avg - c).powi(2);
                ref2 += c * c;
            }
        }
        let rel = (err2 / ref2).sqrt();
        assert!(rel < 0.02, "{rel}");
    }

    #[test]
    fn descriptor_text_round_trip() {
        let desc = PhantomDescriptor::default_ct();
        let back = PhantomDescriptor::parse(&desc.to_text()).unwrap();
        assert_eq!(desc, back);
        assert!(PhantomDescriptor::parse("blob 1 2 3").is_err());
        assert!(PhantomDescriptor::parse("gaussian 0.5 0.5 -1 1").is_err());
        assert!(PhantomDescriptor::parse("rectangle 0 0 1 1").is_err());
    }

    #[test]
    fn et_phantom_is_deterministic_with_disjoint_regions() {
        let g = GridSpec::unit(96).unwrap();
        for seed in 0..5 {
            let a = generate_et_phantom(&g, seed).unwrap();
            let b = generate_et_phantom(&g, seed).unwrap();
            assert_eq!(a.image, b.image);
            assert_eq!(a.gaussian_regions, b.gaussian_regions);
            let gr = a.gaussian_regions.membership();
            let br = a.bone_region.membership();
            assert!(gr.iter().zip(br).all(|(&g, &b)| !(g && b)));
            assert!(a.image.min() >= 0.0);
            assert_eq!(a.hot_spots.len(), 6);
            assert!(a.gaussian_regions.count() > 0 && a.bone_region.count() > 0);
        }
    }

    #[test]
    fn et_phantom_rejects_non_square_grid() {
        let g = GridSpec::new(64, 32, 1.0, 0.5).unwrap();
        assert!(matches!(generate_et_phantom(&g, 1), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn hot_spot_integrals_match_analytic_value() {
        let g = GridSpec::unit(128).unwrap();
        let et = generate_et_phantom(&g, 7).unwrap();
        let mut checked = 0;
        for spot in &et.hot_spots {
            let sigma_px = spot.sigma * g.nx as f64;
            if sigma_px < 3.0 {
                continue;
            }
            let only = PhantomDescriptor::new(vec![spot.as_primitive()]).unwrap();
            let img = generate_ct_phantom(&only, &g).unwrap();
            let sigma = spot.sigma * g.dx;
            let expected = spot.amplitude * 2.0 * PI * sigma * sigma / (g.hx() * g.hy());
            assert!((img.sum() - expected).abs() / expected < 0.01);
            checked += 1;
        }
        assert!(checked > 0);
    }
}
