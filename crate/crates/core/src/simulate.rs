//! Noisy data generation: dual-grid transmission data and emission data
//! with detector blur.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{load_image, load_mask, load_sinogram, save_image, save_mask, save_sinogram};
use crate::kv::KvMap;
use crate::model::{uniform_angles, GridSpec, Image, RegionMask, Sinogram};
use crate::phantom::{generate_ct_phantom, generate_et_phantom, PhantomDescriptor};
use crate::projector::{build_projector, default_detector, forward_streaming, Kernel, ProjectorSpec};

/// SplitMix64 finalizer, used to derive independent seeds from one seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent Poisson draws, each from its own ChaCha stream selected by
/// the element index, so the result does not depend on scheduling.
pub fn poisson_sample(lambda: &[f64], seed: u64) -> Result<Vec<f64>> {
    if let Some(i) = lambda.iter().position(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid(format!(
            "poisson mean must be finite and >= 0, got {} at {i}",
            lambda[i]
        )));
    }
    lambda
        .par_iter()
        .enumerate()
        .map(|(i, &l)| {
            if l == 0.0 {
                return Ok(0.0);
            }
            let dist = Poisson::new(l).map_err(|e| Error::invalid(format!("poisson mean {l}: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            Ok(dist.sample(&mut rng))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtSimSpec {
    pub phantom: PhantomDescriptor,
    pub fine_n: usize,
    pub recon_n: usize,
    pub n_angles: usize,
    pub i0: f64,
    pub seed: u64,
}

impl Default for CtSimSpec {
    fn default() -> Self {
        CtSimSpec {
            phantom: PhantomDescriptor::default_ct(),
            fine_n: 500,
            recon_n: 250,
            n_angles: 90,
            i0: 3e5,
            seed: 0,
        }
    }
}

impl CtSimSpec {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if self.recon_n < 2 || self.fine_n <= self.recon_n {
            return Err(Error::invalid(format!(
                "fine grid ({}) must be strictly finer than the recon grid ({})",
                self.fine_n, self.recon_n
            )));
        }
        if self.n_angles == 0 {
            return Err(Error::invalid("need at least one angle"));
        }
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::invalid(format!("i0 must be > 0, got {}", self.i0)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("fine_n", self.fine_n);
        m.set("recon_n", self.recon_n);
        m.set("n_angles", self.n_angles);
        m.set("i0", self.i0);
        m.set("seed", self.seed);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtSimSpec {
    pub n: usize,
    pub n_angles: usize,
    pub counts: f64,
    pub psf_fwhm_bins: f64,
    pub realizations: usize,
    pub seed: u64,
}

impl Default for EtSimSpec {
    fn default() -> Self {
        EtSimSpec {
            n: 400,
            n_angles: 300,
            counts: 1e7,
            psf_fwhm_bins: 3.0,
            realizations: 20,
            seed: 0,
        }
    }
}

impl EtSimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n_angles == 0 {
            return Err(Error::invalid("emission grid needs n >= 2 and at least one angle"));
        }
        if !(self.counts > 0.0 && self.counts.is_finite()) {
            return Err(Error::invalid(format!("counts must be > 0, got {}", self.counts)));
        }
        if !(self.psf_fwhm_bins > 0.0 && self.psf_fwhm_bins.is_finite()) {
            return Err(Error::invalid("psf width must be > 0"));
        }
        if self.realizations == 0 {
            return Err(Error::invalid("need at least one realization"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("n", self.n);
        m.set("n_angles", self.n_angles);
        m.set("counts", self.counts);
        m.set("psf_fwhm_bins", self.psf_fwhm_bins);
        m.set("realizations", self.realizations);
        m.set("seed", self.seed);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Transmission,
    Emission,
}

impl Modality {
    pub fn name(&self) -> &'static str {
        match self {
            Modality::Transmission => "ct",
            Modality::Emission => "et",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ct" => Ok(Modality::Transmission),
            "et" => Ok(Modality::Emission),
            _ => Err(Error::invalid(format!("unknown modality {s:?}"))),
        }
    }
}

/// Simulated measurements with everything needed to reconstruct and score.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub modality: Modality,
    pub noisy: Vec<Sinogram>,
    pub noiseless: Sinogram,
    /// Projector used to generate the data.
    pub generation_spec: ProjectorSpec,
    /// Projector to reconstruct with.
    pub recon_spec: ProjectorSpec,
    pub ground_truth: Image,
    pub masks: Vec<RegionMask>,
    pub provenance: KvMap,
    /// Rays whose expected count fell below `1e-6` (transmission only).
    pub starved_rays: usize,
}

/// Transmission data: phantom on the fine grid, strip-kernel line integrals
/// `p`, counts `c ~ Poisson(i0 exp(-p))` and data `b = -ln(max(c, 1) / i0)`.
/// Reconstruction uses the linear kernel on the coarse grid; both share the
/// coarse grid's detector.
pub fn make_ct_dataset(spec: &CtSimSpec) -> Result<Dataset> {
    spec.validate()?;
    let fine = GridSpec::unit(spec.fine_n)?;
    let coarse = GridSpec::unit(spec.recon_n)?;
    let angles = uniform_angles(spec.n_angles);
    let (nbins, pitch) = default_detector(&coarse);
    let generation_spec = ProjectorSpec {
        grid: fine,
        angles: angles.clone(),
        nbins,
        bin_pitch: pitch,
        kernel: Kernel::Strip,
        psf_fwhm_bins: None,
    };
    let recon_spec = ProjectorSpec {
        grid: coarse,
        angles: angles.clone(),
        nbins,
        bin_pitch: pitch,
        kernel: Kernel::Linear,
        psf_fwhm_bins: None,
    };
    let phantom = generate_ct_phantom(&spec.phantom, &fine)?;
    // strip weights are areas; dividing by the strip width gives line integrals
    let p: Vec<f64> = forward_streaming(&generation_spec, phantom.values())?
        .into_iter()
        .map(|v| v / pitch)
        .collect();
    let expected: Vec<f64> = p.iter().map(|p| spec.i0 * (-p).exp()).collect();
    let starved_rays = expected.iter().filter(|e| **e < 1e-6).count();
    let counts = poisson_sample(&expected, derive_seed(spec.seed, 1))?;
    let b: Vec<f64> = counts.iter().map(|c| -(c.max(1.0) / spec.i0).ln()).collect();

    let mut provenance = KvMap::new();
    provenance.set("modality", "ct");
    for (k, v) in spec.to_kv().iter() {
        provenance.set(format!("ct.{k}"), v);
    }
    put_projector(&mut provenance, &recon_spec);
    Ok(Dataset {
        modality: Modality::Transmission,
        noisy: vec![Sinogram::new(angles.clone(), nbins, b)?],
        noiseless: Sinogram::new(angles, nbins, p)?,
        generation_spec,
        recon_spec,
        ground_truth: generate_ct_phantom(&spec.phantom, &coarse)?,
        masks: Vec::new(),
        provenance,
        starved_rays,
    })
}

/// Emission data: phantom projected with the blurred projector, scaled so
/// the expected counts sum to `counts`, then Poisson-sampled once per
/// realization. The ground truth carries the same scale factor.
pub fn make_et_dataset(spec: &EtSimSpec) -> Result<Dataset> {
    spec.validate()?;
    let grid = GridSpec::unit(spec.n)?;
    let ph = generate_et_phantom(&grid, spec.seed)?;
    let proj_spec = ProjectorSpec::parallel(grid, uniform_angles(spec.n_angles), Kernel::Linear)
        .with_psf(spec.psf_fwhm_bins);
    let op = build_projector(&proj_spec)?;
    let raw = op.forward_vec(ph.image.values());
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("emission phantom projects to zero".into()));
    }
    let scale = spec.counts / total;
    let lambda: Vec<f64> = raw.iter().map(|v| v * scale).collect();
    let noisy = (0..spec.realizations)
        .map(|r| {
            let c = poisson_sample(&lambda, derive_seed(spec.seed, r as u64 + 1))?;
            Sinogram::new(proj_spec.angles.clone(), proj_spec.nbins, c)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut provenance = KvMap::new();
    provenance.set("modality", "et");
    for (k, v) in spec.to_kv().iter() {
        provenance.set(format!("et.{k}"), v);
    }
    provenance.set("et.intensity_scale", scale);
    put_projector(&mut provenance, &proj_spec);
    Ok(Dataset {
        modality: Modality::Emission,
        noisy,
        noiseless: Sinogram::new(proj_spec.angles.clone(), proj_spec.nbins, lambda)?,
        generation_spec: proj_spec.clone(),
        recon_spec: proj_spec,
        ground_truth: ph.image.scaled(scale),
        masks: vec![ph.gaussian_regions, ph.bone_region],
        provenance,
        starved_rays: 0,
    })
}

fn put_projector(kv: &mut KvMap, spec: &ProjectorSpec) {
    kv.set("projector.kernel", spec.kernel.name());
    kv.set("projector.nbins", spec.nbins);
    kv.set("projector.bin_pitch", spec.bin_pitch);
    match spec.psf_fwhm_bins {
        Some(f) => kv.set("projector.psf_fwhm_bins", f),
        None => kv.set("projector.psf_fwhm_bins", "none"),
    }
}

fn required<'a>(kv: &'a KvMap, key: &str) -> Result<&'a str> {
    kv.get(key)
        .ok_or_else(|| Error::format(format!("provenance lacks {key}")))
}

fn parse_num<T: std::str::FromStr>(kv: &KvMap, key: &str) -> Result<T> {
    let v = required(kv, key)?;
    v.parse()
        .map_err(|_| Error::format(format!("provenance {key}: bad value {v:?}")))
}

impl Dataset {
    /// Writes `ground_truth.img`, `noiseless.sin`, `noisy_<r>.sin`,
    /// `mask_<label>.msk` and `provenance.txt`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_image(&dir.join("ground_truth.img"), &self.ground_truth)?;
        save_sinogram(&dir.join("noiseless.sin"), &self.noiseless)?;
        for (r, s) in self.noisy.iter().enumerate() {
            save_sinogram(&dir.join(format!("noisy_{r}.sin")), s)?;
        }
        for m in &self.masks {
            save_mask(&dir.join(format!("mask_{}.msk", m.label())), m)?;
        }
        let mut prov = self.provenance.clone();
        prov.set("realizations_written", self.noisy.len());
        prov.set(
            "masks",
            self.masks.iter().map(|m| m.label()).collect::<Vec<_>>().join(","),
        );
        fs::write(dir.join("provenance.txt"), prov.to_text())?;
        Ok(())
    }

    /// Reads a directory written by [`Dataset::write_dir`]. The generation
    /// projector is not stored and is reported equal to the recon one.
    pub fn read_dir(dir: &Path) -> Result<Dataset> {
        let provenance = KvMap::parse(&fs::read_to_string(dir.join("provenance.txt"))?)?;
        let modality = Modality::parse(required(&provenance, "modality")?)?;
        let ground_truth = load_image(&dir.join("ground_truth.img"))?;
        let noiseless = load_sinogram(&dir.join("noiseless.sin"))?;
        let count: usize = parse_num(&provenance, "realizations_written")?;
        let noisy = (0..count)
            .map(|r| load_sinogram(&dir.join(format!("noisy_{r}.sin"))))
            .collect::<Result<Vec<_>>>()?;
        let masks = required(&provenance, "masks")?
            .split(',')
            .filter(|l| !l.is_empty())
            .map(|l| load_mask(&dir.join(format!("mask_{l}.msk")), Some(ground_truth.grid())))
            .collect::<Result<Vec<_>>>()?;
        let psf = match required(&provenance, "projector.psf_fwhm_bins")? {
            "none" => None,
            _ => Some(parse_num(&provenance, "projector.psf_fwhm_bins")?),
        };
        let recon_spec = ProjectorSpec {
            grid: *ground_truth.grid(),
            angles: noiseless.angles().to_vec(),
            nbins: parse_num(&provenance, "projector.nbins")?,
            bin_pitch: parse_num(&provenance, "projector.bin_pitch")?,
            kernel: Kernel::parse(required(&provenance, "projector.kernel")?)?,
            psf_fwhm_bins: psf,
        };
        recon_spec.validate()?;
        if noiseless.nbins() != recon_spec.nbins || noisy.iter().any(|s| s.nbins() != recon_spec.nbins) {
            return Err(Error::format("sinogram bin count disagrees with provenance"));
        }
        Ok(Dataset {
            modality,
            noisy,
            noiseless,
            generation_spec: recon_spec.clone(),
            recon_spec,
            ground_truth,
            masks,
            provenance,
            starved_rays: 0,
        })
    }
}
