//! Landmark and texture metrics, and the nuclear-norm-versus-shear probe.

use crate::error::{Error, Result};
use crate::numlin::nuclear_norm;
use crate::shapewarp::{sample, Shape, Texture};

/// Landmarks used by [`pt2pt_error`] and the pair whose distance
/// normalizes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorIndices {
    pub interior: Vec<usize>,
    pub eye_corners: (usize, usize),
}

impl Default for ErrorIndices {
    /// The 49 interior points of the 68-point markup (no jaw line, no inner
    /// mouth corners) normalized by the outer eye corners 36 and 45.
    fn default() -> Self {
        ErrorIndices {
            interior: (17..68).filter(|i| *i != 60 && *i != 64).collect(),
            eye_corners: (36, 45),
        }
    }
}

/// Mean Euclidean distance over the interior landmarks divided by the
/// eye-corner distance of `gt`.
pub fn pt2pt_error(pred: &Shape, gt: &Shape, idx: &ErrorIndices) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::PointCount {
            index: 0,
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let v = gt.len();
    let (a, b) = idx.eye_corners;
    if let Some(&bad) = idx.interior.iter().chain([&a, &b]).find(|&&i| i >= v) {
        return Err(Error::Config(format!(
            "landmark index {bad} out of range for {v} points"
        )));
    }
    if idx.interior.is_empty() {
        return Err(Error::Empty("interior landmark set"));
    }
    let norm = (gt.points[a] - gt.points[b]).norm();
    if norm == 0.0 {
        return Err(Error::ZeroNormalization(a, b));
    }
    let sum: f64 = idx
        .interior
        .iter()
        .map(|&i| (pred.points[i] - gt.points[i]).norm())
        .sum();
    Ok(sum / idx.interior.len() as f64 / norm)
}

/// Cumulative error distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CedCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl CedCurve {
    pub fn fraction_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| *t == threshold)
            .map(|i| self.fractions[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fraction\n");
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            s.push_str(&format!("{t},{f}\n"));
        }
        s
    }
}

/// Fraction of errors strictly below each threshold.
pub fn ced(errors: &[f64], thresholds: &[f64]) -> Result<CedCurve> {
    if errors.is_empty() {
        return Err(Error::Empty("error list"));
    }
    if thresholds.windows(2).any(|w| w[1].is_nan() || w[1] <= w[0])
        || thresholds.iter().any(|t| t.is_nan() || *t < 0.0)
    {
        return Err(Error::Config(
            "thresholds must be nonnegative and strictly increasing".into(),
        ));
    }
    let n = errors.len() as f64;
    let fractions = thresholds
        .iter()
        .map(|t| errors.iter().filter(|e| **e < *t).count() as f64 / n)
        .collect();
    Ok(CedCurve {
        thresholds: thresholds.to_vec(),
        fractions,
    })
}

/// Root mean squared difference over pixels where `mask` is set
/// (column-major, like vectorized textures).
pub fn rmse(a: &Texture, b: &Texture, mask: &[bool]) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            context: "rmse operands",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if mask.len() != a.len() {
        return Err(Error::Dimension {
            context: "rmse mask",
            expected: a.len(),
            actual: mask.len(),
        });
    }
    let (sum, n) = a
        .iter()
        .zip(b.iter())
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), ((x, y), _)| {
            (s + (x - y).powi(2), n + 1)
        });
    if n == 0 {
        return Err(Error::Empty("rmse mask"));
    }
    Ok((sum / n as f64).sqrt())
}

/// Resample `texture` under the horizontal shear `x -> x + level * (y - cy)`
/// about the center row, with replicated borders.
pub fn shear(texture: &Texture, level: f64) -> Texture {
    let (h, w) = texture.shape();
    if level == 0.0 {
        return texture.clone();
    }
    let cy = 0.5 * (h - 1) as f64;
    let xmax = (w - 1) as f64;
    Texture::from_fn(h, w, |y, x| {
        let sx = (x as f64 + level * (y as f64 - cy)).clamp(0.0, xmax);
        sample(texture, sx, y as f64).map_or(0.0, |s| s.value)
    })
}

/// Nuclear norm of the texture under each shear level.
pub fn nuclear_probe(texture: &Texture, levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    levels
        .iter()
        .map(|&l| Ok((l, nuclear_norm(&shear(texture, l))?)))
        .collect()
}

/// Level with the smallest nuclear norm (first on ties).
pub fn probe_argmin(probe: &[(f64, f64)]) -> Option<f64> {
    probe
        .iter()
        .fold(None, |best: Option<(f64, f64)>, &(l, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((l, v)),
        })
        .map(|(l, _)| l)
}

pub fn probe_csv(probe: &[(f64, f64)]) -> String {
    let mut s = String::from("level,nuclear_norm\n");
    for (l, v) in probe {
        s.push_str(&format!("{l},{v}\n"));
    }
    s
}
