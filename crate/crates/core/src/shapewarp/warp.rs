use nalgebra::Point2;

use super::model::ShapeModel;
use super::shape::{Frame, Shape};
use super::triangulation::{delaunay, Anchor, Triangulation};
use crate::error::{Error, Result};
use crate::numlin::{ensure_finite, Matrix, Vector};

/// Grayscale intensity grid; rows are `y`, columns are `x`.
pub type Texture = Matrix;

/// Interpolated intensity and its spatial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Catmull-Rom weights and their derivatives for a fractional offset `t`.
#[inline]
fn cubic_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [
            0.5 * (-t + 2.0 * t2 - t3),
            0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
            0.5 * (t + 4.0 * t2 - 3.0 * t3),
            0.5 * (-t2 + t3),
        ],
        [
            0.5 * (-1.0 + 4.0 * t - 3.0 * t2),
            0.5 * (-10.0 * t + 9.0 * t2),
            0.5 * (1.0 + 8.0 * t - 9.0 * t2),
            0.5 * (-2.0 * t + 3.0 * t2),
        ],
    )
}

/// Sample the C1 Catmull-Rom interpolant of `image` at `(x, y)`, with
/// replicated borders. Returns `None` outside `[0, w-1] x [0, h-1]`.
///
/// On the pixel grid the interpolant reproduces the image exactly and its
/// derivatives equal the central differences of [`image_gradients`].
pub fn sample(image: &Texture, x: f64, y: f64) -> Option<Sample> {
    let (h, w) = image.shape();
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    if !(x >= 0.0 && y >= 0.0 && x <= xmax && y <= ymax) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let (wx, dwx) = cubic_weights(x - x0 as f64);
    let (wy, dwy) = cubic_weights(y - y0 as f64);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut out = Sample {
        value: 0.0,
        dx: 0.0,
        dy: 0.0,
    };
    for (j, (&wyj, &dwyj)) in wy.iter().zip(&dwy).enumerate() {
        let yy = clamp(y0 as isize + j as isize - 1, h);
        let (mut row_v, mut row_d) = (0.0, 0.0);
        for (i, (&wxi, &dwxi)) in wx.iter().zip(&dwx).enumerate() {
            let xx = clamp(x0 as isize + i as isize - 1, w);
            let p = image[(yy, xx)];
            row_v += wxi * p;
            row_d += dwxi * p;
        }
        out.value += wyj * row_v;
        out.dx += wyj * row_d;
        out.dy += dwyj * row_v;
    }
    Some(out)
}

/// Central differences with replicated borders, in intensity per pixel.
pub fn image_gradients(image: &Texture) -> (Texture, Texture) {
    let (h, w) = image.shape();
    let gx = Texture::from_fn(h, w, |y, x| {
        let l = x.saturating_sub(1);
        let r = (x + 1).min(w - 1);
        0.5 * (image[(y, r)] - image[(y, l)])
    });
    let gy = Texture::from_fn(h, w, |y, x| {
        let u = y.saturating_sub(1);
        let d = (y + 1).min(h - 1);
        0.5 * (image[(d, x)] - image[(u, x)])
    });
    (gx, gy)
}

/// Min-max scaling to `[0, 1]`. A constant image maps to zeros.
pub fn normalize_min_max(image: &Texture) -> Texture {
    let min = image.min();
    let max = image.max();
    if max > min {
        image.map(|v| (v - min) / (max - min))
    } else {
        Texture::zeros(image.nrows(), image.ncols())
    }
}

/// Shape model, triangulation, and the precomputed triangle membership of
/// every reference pixel. Immutable and shareable across fits.
#[derive(Debug, Clone)]
pub struct PiecewiseAffine {
    model: ShapeModel,
    tri: Triangulation,
    anchors: Vec<Option<Anchor>>,
}

impl PiecewiseAffine {
    pub fn new(model: ShapeModel, tri: Triangulation) -> Result<Self> {
        let v = model.n_points();
        if let Some(t) = tri.triangles.iter().find(|t| t.iter().any(|i| *i >= v)) {
            return Err(Error::Degenerate(format!(
                "triangle {t:?} indexes past {v} landmarks"
            )));
        }
        let anchors = tri.anchors(model.mean(), model.frame());
        Ok(PiecewiseAffine {
            model,
            tri,
            anchors,
        })
    }

    /// Triangulate the model's mean shape and build the pixel map.
    pub fn from_model(model: ShapeModel) -> Result<Self> {
        let tri = delaunay(model.mean())?;
        PiecewiseAffine::new(model, tri)
    }

    pub fn model(&self) -> &ShapeModel {
        &self.model
    }

    pub fn triangulation(&self) -> &Triangulation {
        &self.tri
    }

    pub fn frame(&self) -> Frame {
        self.model.frame()
    }

    pub fn anchors(&self) -> &[Option<Anchor>] {
        &self.anchors
    }

    /// Pixels inside the mean-shape triangulation.
    pub fn hull_mask(&self) -> Vec<bool> {
        self.anchors.iter().map(Option::is_some).collect()
    }

    fn check_shape(&self, shape: &Shape) -> Result<()> {
        if shape.len() != self.model.n_points() {
            return Err(Error::PointCount {
                index: 0,
                expected: self.model.n_points(),
                actual: shape.len(),
            });
        }
        Ok(())
    }

    /// Source location of a reference pixel anchor under `shape`.
    #[inline]
    pub(crate) fn map_anchor(&self, shape: &Shape, a: &Anchor) -> Point2<f64> {
        let t = self.tri.triangles[a.triangle];
        let mut x = 0.0;
        let mut y = 0.0;
        for (k, &i) in t.iter().enumerate() {
            x += a.bary[k] * shape.points[i].x;
            y += a.bary[k] * shape.points[i].y;
        }
        Point2::new(x, y)
    }
}

/// Source coordinates for every reference pixel; `None` outside the hull.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub frame: Frame,
    pub source: Vec<Option<Point2<f64>>>,
}

pub fn warp_field(src_shape: &Shape, pa: &PiecewiseAffine) -> Result<WarpField> {
    pa.check_shape(src_shape)?;
    Ok(WarpField {
        frame: pa.frame(),
        source: pa
            .anchors
            .iter()
            .map(|a| a.as_ref().map(|a| pa.map_anchor(src_shape, a)))
            .collect(),
    })
}

/// A texture resampled into the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    /// Vectorized texture, length `f`, zero where masked.
    pub x: Vector,
    /// `true` for valid pixels.
    pub mask: Vec<bool>,
}

impl Warped {
    pub fn texture(&self, frame: Frame) -> Texture {
        Texture::from_column_slice(frame.height, frame.width, self.x.as_slice())
    }
}

/// Piecewise-affine warp of `image` into the reference frame: each reference
/// pixel is mapped through the affine map of its triangle (mean shape to
/// `src_shape`) and the image is sampled there. Pixels outside the hull or
/// whose source falls outside the image are masked and set to zero.
pub fn warp_texture(image: &Texture, src_shape: &Shape, pa: &PiecewiseAffine) -> Result<Warped> {
    ensure_finite(image, "image")?;
    let field = warp_field(src_shape, pa)?;
    let f = field.frame.len();
    let mut x = Vector::zeros(f);
    let mut mask = vec![false; f];
    for (i, src) in field.source.iter().enumerate() {
        if let Some(s) = src.and_then(|p| sample(image, p.x, p.y)) {
            x[i] = s.value;
            mask[i] = true;
        }
    }
    Ok(Warped { x, mask })
}
