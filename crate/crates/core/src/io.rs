//! Binary file formats.
//!
//! Every format is an ASCII header line followed by a little-endian payload:
//!
//! ```text
//! TOMO-IMG 1 <nx> <ny> <dx> <dy>\n   nx*ny f64, row-major
//! TOMO-SIN 1 <nangles> <nbins>\n     nangles f64 angles, then nangles*nbins f64
//! TOMO-MSK 1 <nx> <ny> <label>\n     nx*ny bytes (0/1)
//! TOMO-CSR 1 <nrows> <ncols> <nnz>\n (nrows+1) u64 offsets, nnz u64 indices, nnz f64 weights
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{GridSpec, Image, RegionMask, Sinogram};
use crate::sparse::CsrMatrix;

const IMG_MAGIC: &str = "TOMO-IMG";
const SIN_MAGIC: &str = "TOMO-SIN";
const MSK_MAGIC: &str = "TOMO-MSK";
const CSR_MAGIC: &str = "TOMO-CSR";
const VERSION: &str = "1";

/// Splits off the header line and checks magic and version.
fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(Vec<&'a str>, &'a [u8])> {
    let nl = bytes
        .iter()
        .take(4096)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format("header is not valid UTF-8"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.first() != Some(&magic) {
        return Err(Error::format(format!(
            "bad magic: expected {magic}, found {:?}",
            fields.first().copied().unwrap_or("")
        )));
    }
    if fields.get(1) != Some(&VERSION) {
        return Err(Error::format(format!(
            "unsupported version {:?}",
            fields.get(1).copied().unwrap_or("")
        )));
    }
    Ok((fields[2..].to_vec(), &bytes[nl + 1..]))
}

fn field<T: std::str::FromStr>(fields: &[&str], i: usize, name: &str) -> Result<T> {
    fields
        .get(i)
        .ok_or_else(|| Error::format(format!("header missing {name}")))?
        .parse()
        .map_err(|_| Error::format(format!("header field {name} is malformed")))
}

fn expect_fields(fields: &[&str], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::format(format!(
            "header has {} fields after version, expected {n}",
            fields.len()
        )));
    }
    Ok(())
}

fn take_f64s(payload: &[u8], n: usize) -> Result<(Vec<f64>, &[u8])> {
    let need = n
        .checked_mul(8)
        .ok_or_else(|| Error::format("payload size overflow"))?;
    if payload.len() < need {
        return Err(Error::format(format!(
            "truncated payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    let vals = payload[..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((vals, &payload[need..]))
}

fn take_u64s(payload: &[u8], n: usize) -> Result<(Vec<u64>, &[u8])> {
    let need = n
        .checked_mul(8)
        .ok_or_else(|| Error::format("payload size overflow"))?;
    if payload.len() < need {
        return Err(Error::format(format!(
            "truncated payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    let vals = payload[..need]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((vals, &payload[need..]))
}

fn no_trailing(rest: &[u8]) -> Result<()> {
    if !rest.is_empty() {
        return Err(Error::format(format!("{} trailing bytes", rest.len())));
    }
    Ok(())
}

fn push_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    out.reserve(vals.len() * 8);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn image_header_len(img: &Image) -> usize {
    let g = img.grid();
    format!("{IMG_MAGIC} {VERSION} {} {} {} {}\n", g.nx, g.ny, g.dx, g.dy).len()
}

pub fn write_image(img: &Image) -> Vec<u8> {
    let g = img.grid();
    let mut out = format!("{IMG_MAGIC} {VERSION} {} {} {} {}\n", g.nx, g.ny, g.dx, g.dy)
        .into_bytes();
    push_f64s(&mut out, img.values());
    out
}

pub fn read_image(bytes: &[u8]) -> Result<Image> {
    let (fields, payload) = split_header(bytes, IMG_MAGIC)?;
    expect_fields(&fields, 4)?;
    let nx: usize = field(&fields, 0, "nx")?;
    let ny: usize = field(&fields, 1, "ny")?;
    let dx: f64 = field(&fields, 2, "dx")?;
    let dy: f64 = field(&fields, 3, "dy")?;
    let grid = GridSpec::new(nx, ny, dx, dy)?;
    let (values, rest) = take_f64s(payload, grid.len())?;
    no_trailing(rest)?;
    Image::new(grid, values)
}

pub fn write_sinogram(s: &Sinogram) -> Vec<u8> {
    let mut out = format!("{SIN_MAGIC} {VERSION} {} {}\n", s.nangles(), s.nbins()).into_bytes();
    push_f64s(&mut out, s.angles());
    push_f64s(&mut out, s.values());
    out
}

pub fn read_sinogram(bytes: &[u8]) -> Result<Sinogram> {
    let (fields, payload) = split_header(bytes, SIN_MAGIC)?;
    expect_fields(&fields, 2)?;
    let nangles: usize = field(&fields, 0, "nangles")?;
    let nbins: usize = field(&fields, 1, "nbins")?;
    let (angles, rest) = take_f64s(payload, nangles)?;
    let total = nangles
        .checked_mul(nbins)
        .ok_or_else(|| Error::format("payload size overflow"))?;
    let (values, rest) = take_f64s(rest, total)?;
    no_trailing(rest)?;
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("sinogram angle".into()));
    }
    Sinogram::new(angles, nbins, values)
}

pub fn write_mask(m: &RegionMask) -> Vec<u8> {
    let g = m.grid();
    let mut out = format!("{MSK_MAGIC} {VERSION} {} {} {}\n", g.nx, g.ny, m.label()).into_bytes();
    out.extend(m.membership().iter().map(|&b| b as u8));
    out
}

/// Reads a mask. The format carries no physical extent, so it is taken from
/// `grid` when given (pixel counts must agree) and the unit square otherwise.
pub fn read_mask(bytes: &[u8], grid: Option<&GridSpec>) -> Result<RegionMask> {
    let (fields, payload) = split_header(bytes, MSK_MAGIC)?;
    expect_fields(&fields, 3)?;
    let nx: usize = field(&fields, 0, "nx")?;
    let ny: usize = field(&fields, 1, "ny")?;
    let label = fields[2].to_string();
    let grid = match grid {
        Some(g) if g.nx != nx || g.ny != ny => {
            return Err(Error::format(format!(
                "mask is {nx}x{ny}, grid is {}x{}",
                g.nx, g.ny
            )))
        }
        Some(g) => *g,
        None => GridSpec::new(nx, ny, 1.0, 1.0)?,
    };
    if payload.len() != grid.len() {
        return Err(Error::format(format!(
            "mask payload has {} bytes, expected {}",
            payload.len(),
            grid.len()
        )));
    }
    let membership = payload
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(format!("mask byte {other} is not 0/1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    RegionMask::new(grid, membership, label)
}

pub fn write_csr(m: &CsrMatrix) -> Vec<u8> {
    let mut out = format!(
        "{CSR_MAGIC} {VERSION} {} {} {}\n",
        m.nrows(),
        m.ncols(),
        m.nnz()
    )
    .into_bytes();
    for &o in m.offsets() {
        out.extend_from_slice(&(o as u64).to_le_bytes());
    }
    for &c in m.indices() {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    push_f64s(&mut out, m.weights());
    out
}

pub fn read_csr(bytes: &[u8]) -> Result<CsrMatrix> {
    let (fields, payload) = split_header(bytes, CSR_MAGIC)?;
    expect_fields(&fields, 3)?;
    let nrows: usize = field(&fields, 0, "nrows")?;
    let ncols: usize = field(&fields, 1, "ncols")?;
    let nnz: usize = field(&fields, 2, "nnz")?;
    let (offsets, rest) = take_u64s(payload, nrows + 1)?;
    let (indices, rest) = take_u64s(rest, nnz)?;
    let (weights, rest) = take_f64s(rest, nnz)?;
    no_trailing(rest)?;
    let to_u32 = |v: u64| u32::try_from(v).map_err(|_| Error::format("index exceeds u32"));
    CsrMatrix::from_parts(
        nrows,
        ncols,
        offsets.into_iter().map(|o| o as usize).collect(),
        indices.into_iter().map(to_u32).collect::<Result<_>>()?,
        weights,
    )
}

/// 16-bit binary PGM, min-max scaled, top row = largest `y`. Returns the
/// file bytes and a sidecar text recording the scale.
pub fn image_to_pgm(img: &Image) -> (Vec<u8>, String) {
    let g = img.grid();
    let (lo, hi) = (img.min(), img.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n65535\n", g.nx, g.ny).into_bytes();
    for iy in (0..g.ny).rev() {
        for ix in 0..g.nx {
            let t = ((img.get(ix, iy) - lo) / span).clamp(0.0, 1.0);
            let v = (t * 65535.0).round() as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    let sidecar = format!("min={lo:?}\nmax={hi:?}\nlevels=65535\n");
    (out, sidecar)
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    Ok(fs::write(path, write_image(img))?)
}

pub fn load_image(path: &Path) -> Result<Image> {
    read_image(&fs::read(path)?)
}

pub fn save_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    Ok(fs::write(path, write_sinogram(s))?)
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    read_sinogram(&fs::read(path)?)
}

pub fn save_mask(path: &Path, m: &RegionMask) -> Result<()> {
    Ok(fs::write(path, write_mask(m))?)
}

pub fn load_mask(path: &Path, grid: Option<&GridSpec>) -> Result<RegionMask> {
    read_mask(&fs::read(path)?, grid)
}

/// Writes `<stem>.pgm` and `<stem>.pgm.txt`.
pub fn save_pgm(path: &Path, img: &Image) -> Result<()> {
    let (pgm, sidecar) = image_to_pgm(img);
    fs::write(path, pgm)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".txt");
    fs::write(side, sidecar)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::uniform_angles;
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx, ny, 1.0, 0.7).unwrap()
    }

    #[test]
    fn image_file_size_follows_format() {
        let img = Image::zeros(GridSpec::unit(250).unwrap());
        let bytes = write_image(&img);
        let header = "TOMO-IMG 1 250 250 1 1\n".len();
        assert_eq!(image_header_len(&img), header);
        assert_eq!(bytes.len(), header + 250 * 250 * 8);
    }

    #[test]
    fn image_bad_magic_and_truncation() {
        let img = Image::filled(grid(7, 5), 2.5);
        let mut bytes = write_image(&img);
        assert!(matches!(read_image(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(read_image(&bytes), Err(Error::Format(_))));
        assert!(read_image(b"TOMO-IMG 1 7 5 1\n").is_err());
        assert!(read_image(b"no newline").is_err());
    }

    #[test]
    fn image_rejects_non_finite_payload() {
        let mut bytes = write_image(&Image::zeros(grid(2, 2)));
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_image(&bytes), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sinogram_and_mask_round_trip() {
        let s = Sinogram::new(uniform_angles(3), 2, vec![1.0, -2.0, 3.5, 0.0, 1e-300, 7.0]).unwrap();
        assert_eq!(read_sinogram(&write_sinogram(&s)).unwrap(), s);
        let g = grid(3, 2);
        let m = RegionMask::new(g, vec![true, false, true, true, false, false], "BR").unwrap();
        assert_eq!(read_mask(&write_mask(&m), Some(&g)).unwrap(), m);
        let mut bad = write_mask(&m);
        *bad.last_mut().unwrap() = 7;
        assert!(read_mask(&bad, Some(&g)).is_err());
        assert!(read_mask(&write_mask(&m), Some(&grid(2, 3))).is_err());
    }

    #[test]
    fn csr_round_trip() {
        let m = CsrMatrix::from_triplets(3, 4, vec![(0, 1, 2.0), (2, 3, -1.0), (2, 0, 0.5)]).unwrap();
        assert_eq!(read_csr(&write_csr(&m)).unwrap(), m);
    }

    #[test]
    fn pgm_header_and_scale() {
        let img = Image::new(grid(2, 2), vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let (pgm, side) = image_to_pgm(&img);
        assert!(pgm.starts_with(b"P5\n2 2\n65535\n"));
        assert_eq!(pgm.len(), "P5\n2 2\n65535\n".len() + 8);
        // top-left pixel is (0, ny-1) = 2.0 -> half scale
        let off = "P5\n2 2\n65535\n".len();
        assert_eq!(u16::from_be_bytes([pgm[off], pgm[off + 1]]), 32768);
        assert!(side.contains("max=4.0"));
    }

    proptest! {
        #[test]
        fn image_round_trip_is_bit_exact(
            nx in 2usize..9, ny in 2usize..9,
            seed in proptest::collection::vec(-1e6f64..1e6, 64),
        ) {
            let g = GridSpec::new(nx, ny, 0.3, 1.7).unwrap();
            let vals: Vec<f64> = seed.iter().cycle().take(g.len()).copied().collect();
            let img = Image::new(g, vals).unwrap();
            let back = read_image(&write_image(&img)).unwrap();
            prop_assert_eq!(back.grid(), img.grid());
            for (a, b) in back.values().iter().zip(img.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
