//! The orthonormal clean-appearance basis `U` and its binary file format.
//!
//! File layout (little endian, no padding): magic `FARB`; `u32` version
//! (= 1), `m` (rows), `n` (columns), `k`; `f = m * n` mask bytes (0/1);
//! `f` `f64` mean entries; `f * k` `f64` basis entries in column-major order.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numlin::{orthonormalize, pca, Matrix, Vector};
use crate::shapewarp::{normalize_min_max, warp_texture, Frame, PiecewiseAffine, Shape, Texture};

const MAGIC: &[u8; 4] = b"FARB";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;
const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceBasis {
    frame: Frame,
    mask: Vec<bool>,
    mean: Vector,
    u: Matrix,
}

impl AppearanceBasis {
    /// Assemble a basis, validating every invariant.
    pub fn from_parts(frame: Frame, mask: Vec<bool>, mean: Vector, u: Matrix) -> Result<Self> {
        let f = frame.len();
        for (context, actual) in [
            ("basis mask", mask.len()),
            ("basis mean", mean.len()),
            ("basis rows", u.nrows()),
        ] {
            if actual != f {
                return Err(Error::Dimension {
                    context,
                    expected: f,
                    actual,
                });
            }
        }
        if let Some(i) = mean.iter().chain(u.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "basis",
                index: i,
            });
        }
        let k = u.ncols();
        let dev = (u.transpose() * &u - Matrix::identity(k, k)).amax();
        if dev > ORTHO_TOL {
            return Err(Error::BasisFormat(format!(
                "columns are not orthonormal (max deviation {dev:.3e})"
            )));
        }
        for (i, &valid) in mask.iter().enumerate() {
            if valid {
                if !(0.0..=1.0).contains(&mean[i]) {
                    return Err(Error::BasisFormat(format!(
                        "mean entry {i} = {} outside [0, 1]",
                        mean[i]
                    )));
                }
            } else if mean[i] != 0.0 || u.row(i).iter().any(|v| *v != 0.0) {
                return Err(Error::BasisFormat(format!(
                    "masked pixel {i} has nonzero mean or basis entries"
                )));
            }
        }
        Ok(AppearanceBasis {
            frame,
            mask,
            mean,
            u,
        })
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    /// Number of basis columns.
    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    /// Same basis restricted to its first `k` columns.
    pub fn truncated(&self, k: usize) -> AppearanceBasis {
        let k = k.min(self.k());
        AppearanceBasis {
            frame: self.frame,
            mask: self.mask.clone(),
            mean: self.mean.clone(),
            u: self.u.columns(0, k).into_owned(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let f = self.frame.len();
        let mut out = Vec::with_capacity(HEADER_LEN + f + 8 * f * (1 + self.k()));
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.frame.height as u32,
            self.frame.width as u32,
            self.k() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.mask.iter().map(|m| u8::from(*m)));
        for v in self.mean.iter().chain(self.u.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::BasisFormat(format!(
                "truncated header: expected {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BasisFormat(format!(
                "bad magic {:?}, expected \"FARB\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != VERSION {
            return Err(Error::BasisFormat(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let (m, n, k) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let f = m
            .checked_mul(n)
            .ok_or_else(|| Error::BasisFormat("frame size overflows".into()))?;
        let expected = f
            .checked_mul(1 + k)
            .and_then(|c| c.checked_mul(8))
            .and_then(|c| c.checked_add(HEADER_LEN + f))
            .ok_or_else(|| Error::BasisFormat("payload size overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::BasisFormat(format!(
                "payload length mismatch: expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut pos = HEADER_LEN;
        let mut mask = Vec::with_capacity(f);
        for (i, b) in bytes[pos..pos + f].iter().enumerate() {
            match b {
                0 => mask.push(false),
                1 => mask.push(true),
                other => {
                    return Err(Error::BasisFormat(format!(
                        "mask byte {i} is {other}, expected 0 or 1"
                    )))
                }
            }
        }
        pos += f;
        let mut floats = bytes[pos..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mean = Vector::from_iterator(f, floats.by_ref().take(f));
        let u = Matrix::from_iterator(f, k, floats);
        AppearanceBasis::from_parts(Frame::new(n, m), mask, mean, u)
    }
}

/// Write `bytes` to a temporary file next to `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn save_basis(basis: &AppearanceBasis, path: &Path) -> Result<()> {
    write_atomic(path, &basis.to_bytes())
}

pub fn load_basis(path: &Path) -> Result<AppearanceBasis> {
    AppearanceBasis::from_bytes(&std::fs::read(path)?)
}

/// Basis together with whether `k` had to be reduced.
#[derive(Debug, Clone)]
pub struct BasisBuild {
    pub basis: AppearanceBasis,
    /// Number of principal components kept (excluding the mean direction).
    pub components: usize,
    pub truncated: bool,
}

/// Build `U` from shape-free textures (vectorized, length `f`). Statistics
/// use only pixels where `mask` is set; the mean texture is appended to the
/// principal components and the set re-orthonormalized.
pub fn build_basis_from_textures(
    textures: &[Vector],
    mask: &[bool],
    frame: Frame,
    k: usize,
) -> Result<BasisBuild> {
    let f = frame.len();
    if textures.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: textures.len(),
        });
    }
    if let Some(t) = textures.iter().find(|t| t.len() != f) {
        return Err(Error::Dimension {
            context: "training texture",
            expected: f,
            actual: t.len(),
        });
    }
    if mask.len() != f {
        return Err(Error::Dimension {
            context: "training mask",
            expected: f,
            actual: mask.len(),
        });
    }
    let rows: Vec<usize> = (0..f).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::Empty("training mask"));
    }
    let compact = Matrix::from_fn(rows.len(), textures.len(), |r, c| textures[c][rows[r]]);
    let decomposition = pca(&compact, k)?;
    let components = decomposition.basis.ncols();

    let mut columns: Vec<Vector> = decomposition
        .basis
        .column_iter()
        .map(|c| c.into_owned())
        .collect();
    columns.push(decomposition.mean.clone());
    let ortho = orthonormalize(&Matrix::from_columns(&columns), 1e-10);

    let mut u = Matrix::zeros(f, ortho.ncols());
    let mut mean = Vector::zeros(f);
    for (r, &i) in rows.iter().enumerate() {
        u.row_mut(i).copy_from(&ortho.row(r));
        mean[i] = decomposition.mean[r].clamp(0.0, 1.0);
    }
    Ok(BasisBuild {
        basis: AppearanceBasis::from_parts(frame, mask.to_vec(), mean, u)?,
        components,
        truncated: decomposition.truncated,
    })
}

/// Warp each training image with its landmarks, then build the basis over
/// the pixels valid in every sample.
pub fn build_basis(
    samples: &[(Texture, Shape)],
    pa: &PiecewiseAffine,
    k: usize,
) -> Result<BasisBuild> {
    let frame = pa.frame();
    let mut mask = pa.hull_mask();
    let mut textures = Vec::with_capacity(samples.len());
    for (image, shape) in samples {
        let w = warp_texture(&normalize_min_max(image), shape, pa)?;
        for (m, valid) in mask.iter_mut().zip(&w.mask) {
            *m &= *valid;
        }
        textures.push(w.x.map(|v| v.clamp(0.0, 1.0)));
    }
    for t in textures.iter_mut() {
        for (v, m) in t.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
    }
    build_basis_from_textures(&textures, &mask, frame, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_basis(seed: u64, frame: Frame, k: usize) -> AppearanceBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = frame.len();
        let mask: Vec<bool> = (0..f).map(|i| i % 7 != 0).collect();
        let textures: Vec<Vector> = (0..k + 3)
            .map(|_| {
                Vector::from_fn(f, |i, _| {
                    if mask[i] {
                        rng.gen_range(0.0..1.0)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        build_basis_from_textures(&textures, &mask, frame, k)
            .unwrap()
            .basis
    }

    #[test]
    fn identical_textures_give_mean_direction_only() {
        let frame = Frame::new(3, 2);
        let t = Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let b = build_basis_from_textures(&[t.clone(), t.clone()], &[true; 6], frame, 4).unwrap();
        assert!(b.truncated);
        assert_eq!(b.basis.k(), 1);
        let dir = t.normalize();
        assert!((b.basis.u().column(0) - dir).amax() < 1e-12);
    }

    #[test]
    fn masked_rows_are_zero() {
        let b = random_basis(2, Frame::new(5, 4), 3);
        for (i, m) in b.mask().iter().enumerate() {
            if !m {
                assert!(b.u().row(i).iter().all(|v| *v == 0.0));
                assert_eq!(b.mean()[i], 0.0);
            }
        }
        assert_eq!(b.k(), 4);
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let b = random_basis(4, Frame::new(6, 5), 3);
        let bytes = b.to_bytes();
        let back = AppearanceBasis::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn wrong_magic_names_magic() {
        let mut bytes = random_basis(4, Frame::new(6, 5), 2).to_bytes();
        bytes[0] = b'X';
        let err = AppearanceBasis::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let bytes = random_basis(4, Frame::new(6, 5), 2).to_bytes();
        let cut = &bytes[..bytes.len() - 13];
        let err = AppearanceBasis::from_bytes(cut).unwrap_err().to_string();
        assert!(err.contains(&format!("expected {}", bytes.len())), "{err}");
        assert!(err.contains(&format!("got {}", cut.len())), "{err}");
    }

    #[test]
    fn invariant_violation_on_load_rejected() {
        let b = random_basis(5, Frame::new(4, 4), 2);
        let mut bytes = b.to_bytes();
        // Corrupt the first basis entry: breaks orthonormality.
        let off = HEADER_LEN + 16 + 8 * 16;
        bytes[off..off + 8].copy_from_slice(&3.0f64.to_le_bytes());
        assert!(AppearanceBasis::from_bytes(&bytes).is_err());
        let mut bad_version = b.to_bytes();
        bad_version[4] = 9;
        assert!(AppearanceBasis::from_bytes(&bad_version)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.farb");
        let b = random_basis(6, Frame::new(5, 5), 3);
        save_basis(&b, &path).unwrap();
        assert_eq!(load_basis(&path).unwrap(), b);
    }
}
