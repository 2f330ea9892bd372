use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::shape::{Frame, Shape, WarpParams};
use crate::error::{Error, Result};
use crate::numlin::{orthonormalize, pca, Matrix, Vector};

/// Column of the scale direction in the joint basis.
pub const SCALE: usize = 0;
/// Column of the in-plane rotation direction.
pub const ROTATION: usize = 1;
pub const TRANSLATE_X: usize = 2;
pub const TRANSLATE_Y: usize = 3;
pub const SIMILARITY_PARAMS: usize = 4;

/// Default fraction of the frame the mean shape's bounding box is scaled to.
pub const DEFAULT_FRAME_FILL: f64 = 0.9;
const PROCRUSTES_ITERS: usize = 50;

/// Linear shape model `s(p) = mean + basis * p` in reference-frame pixels.
///
/// The basis holds 4 orthonormal similarity directions (scale, rotation,
/// x and y translation about the mean's centroid) followed by the
/// deformation modes, all mutually orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    mean: Shape,
    basis: Matrix,
    frame: Frame,
}

impl ShapeModel {
    /// Assemble a model from parts, checking orthonormality and placement.
    pub fn from_parts(mean: Shape, basis: Matrix, frame: Frame) -> Result<Self> {
        if basis.nrows() != 2 * mean.len() {
            return Err(Error::Dimension {
                context: "shape basis rows",
                expected: 2 * mean.len(),
                actual: basis.nrows(),
            });
        }
        if basis.ncols() < SIMILARITY_PARAMS {
            return Err(Error::Dimension {
                context: "shape basis columns",
                expected: SIMILARITY_PARAMS,
                actual: basis.ncols(),
            });
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - Matrix::identity(basis.ncols(), basis.ncols())).amax();
        if err > 1e-10 {
            return Err(Error::Degenerate(format!(
                "shape basis is not orthonormal (max deviation {err:.3e})"
            )));
        }
        let inside = mean.points.iter().all(|p| {
            p.x >= 0.0
                && p.y >= 0.0
                && p.x <= (frame.width - 1) as f64
                && p.y <= (frame.height - 1) as f64
        });
        if !inside {
            return Err(Error::Degenerate(format!(
                "mean shape does not fit in the {frame} frame"
            )));
        }
        Ok(ShapeModel { mean, basis, frame })
    }

    pub fn mean(&self) -> &Shape {
        &self.mean
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn n_points(&self) -> usize {
        self.mean.len()
    }

    /// `v_p = 4 + n_s`.
    pub fn n_params(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n_deformation(&self) -> usize {
        self.basis.ncols() - SIMILARITY_PARAMS
    }

    /// Least-squares parameters of a shape (orthogonal projection).
    pub fn project(&self, shape: &Shape) -> Result<WarpParams> {
        if shape.len() != self.mean.len() {
            return Err(Error::PointCount {
                index: 0,
                expected: self.mean.len(),
                actual: shape.len(),
            });
        }
        let d = shape.to_vector() - self.mean.to_vector();
        Ok(WarpParams(self.basis.transpose() * d))
    }
}

/// `mean + reshape(basis * p)`.
pub fn shape_from_params(model: &ShapeModel, p: &WarpParams) -> Result<Shape> {
    if p.len() != model.n_params() {
        return Err(Error::Dimension {
            context: "warp parameters",
            expected: model.n_params(),
            actual: p.len(),
        });
    }
    let mut points = model.mean.points.clone();
    if p.0.iter().any(|v| *v != 0.0) {
        let d = &model.basis * &p.0;
        for (i, pt) in points.iter_mut().enumerate() {
            pt.x += d[2 * i];
            pt.y += d[2 * i + 1];
        }
    }
    Shape::new(points)
}

fn check_shapes(shapes: &[Shape]) -> Result<usize> {
    if shapes.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: shapes.len(),
        });
    }
    let v = shapes[0].len();
    for (i, s) in shapes.iter().enumerate() {
        if s.len() != v {
            return Err(Error::PointCount {
                index: i,
                expected: v,
                actual: s.len(),
            });
        }
    }
    Ok(v)
}

/// Centre and scale to unit Frobenius norm.
fn normalize(v: &Vector) -> Result<Vector> {
    let n = v.len() / 2;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        cx += v[2 * i];
        cy += v[2 * i + 1];
    }
    cx /= n as f64;
    cy /= n as f64;
    let mut out = v.clone();
    for i in 0..n {
        out[2 * i] -= cx;
        out[2 * i + 1] -= cy;
    }
    let norm = out.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("shape with all points coincident".into()));
    }
    Ok(out / norm)
}

/// Rotate centred `v` onto centred `target` (least squares, no scaling).
fn rotate_onto(v: &Vector, target: &Vector) -> Vector {
    let n = v.len() / 2;
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..n {
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        let (tx, ty) = (target[2 * i], target[2 * i + 1]);
        a += x * tx + y * ty;
        b += x * ty - y * tx;
    }
    let theta = b.atan2(a);
    let (s, c) = theta.sin_cos();
    let mut out = v.clone();
    for i in 0..n {
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = c * x - s * y;
        out[2 * i + 1] = s * x + c * y;
    }
    out
}

/// In-plane 90 degree rotation of an interleaved centred shape.
fn perpendicular(v: &Vector) -> Vector {
    let n = v.len() / 2;
    let mut out = Vector::zeros(v.len());
    for i in 0..n {
        out[2 * i] = -v[2 * i + 1];
        out[2 * i + 1] = v[2 * i];
    }
    out
}

fn translation_columns(v: usize) -> (Vector, Vector) {
    let s = 1.0 / (v as f64).sqrt();
    let tx = Vector::from_fn(2 * v, |i, _| if i % 2 == 0 { s } else { 0.0 });
    let ty = Vector::from_fn(2 * v, |i, _| if i % 2 == 1 { s } else { 0.0 });
    (tx, ty)
}

/// Generalized Procrustes alignment. Returns the unit-norm centred mean and
/// the aligned shapes (unit norm, rotated onto the mean).
fn procrustes(shapes: &[Shape]) -> Result<(Vector, Vec<Vector>)> {
    let mut aligned: Vec<Vector> = shapes
        .iter()
        .map(|s| normalize(&s.to_vector()))
        .collect::<Result<_>>()?;
    let reference = aligned[0].clone();
    let mut mean = reference.clone();
    for _ in 0..PROCRUSTES_ITERS {
        aligned = aligned.iter().map(|a| rotate_onto(a, &mean)).collect();
        let mut next = Vector::zeros(mean.len());
        for a in &aligned {
            next += a;
        }
        let next = rotate_onto(&normalize(&next)?, &reference);
        let change = (&next - &mean).norm();
        mean = next;
        if change < 1e-14 {
            break;
        }
    }
    let aligned = aligned.iter().map(|a| rotate_onto(a, &mean)).collect();
    Ok((mean, aligned))
}

/// Similarity-free residuals of the aligned shapes, one per column.
fn deformation_residuals(mean: &Vector, aligned: &[Vector]) -> Matrix {
    let v = mean.len() / 2;
    let (tx, ty) = translation_columns(v);
    let sim = orthonormalize(
        &Matrix::from_columns(&[mean.clone(), perpendicular(mean), tx, ty]),
        1e-12,
    );
    let cols: Vec<Vector> = aligned
        .iter()
        .map(|a| {
            let d = a - mean;
            let proj = &sim * (sim.transpose() * &d);
            d - proj
        })
        .collect();
    Matrix::from_columns(&cols)
}

/// Smallest number of deformation modes retaining `fraction` of the
/// similarity-free shape variance.
pub fn modes_for_variance(shapes: &[Shape], fraction: f64) -> Result<usize> {
    check_shapes(shapes)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "variance fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let (mean, aligned) = procrustes(shapes)?;
    let resid = deformation_residuals(&mean, &aligned);
    let full = pca(&resid, resid.nrows().min(resid.ncols()))?;
    let total = full.variances.sum();
    if total == 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (i, v) in full.variances.iter().enumerate() {
        acc += v;
        if acc >= fraction * total - 1e-15 * total {
            return Ok(i + 1);
        }
    }
    Ok(full.variances.len())
}

/// Train the shape model: Procrustes alignment, PCA of the similarity-free
/// residuals, then placement of the mean in the central 90% of `frame`.
/// `n_s` is truncated to the available rank.
pub fn build_shape_model(shapes: &[Shape], n_s: usize, frame: Frame) -> Result<ShapeModel> {
    build_shape_model_with_fill(shapes, n_s, frame, DEFAULT_FRAME_FILL)
}

/// [`build_shape_model`] with the mean's bounding box scaled to `fill`
/// (in `(0, 1]`) of the frame.
pub fn build_shape_model_with_fill(
    shapes: &[Shape],
    n_s: usize,
    frame: Frame,
    fill: f64,
) -> Result<ShapeModel> {
    let v = check_shapes(shapes)?;
    if !(fill > 0.0 && fill <= 1.0) {
        return Err(Error::Config(format!(
            "frame fill must lie in (0, 1], got {fill}"
        )));
    }
    if frame.width < 2 || frame.height < 2 {
        return Err(Error::Config(format!("frame {frame} is too small")));
    }
    let (mean, aligned) = procrustes(shapes)?;
    let resid = deformation_residuals(&mean, &aligned);
    let modes = pca(&resid, n_s.min(resid.nrows()))?;

    // Place the unit-norm mean in the frame.
    let xs = (0..v).map(|i| mean[2 * i]);
    let ys = (0..v).map(|i| mean[2 * i + 1]);
    let (xmin, xmax) = xs.fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
    let (ymin, ymax) = ys.fold((f64::MAX, f64::MIN), |(a, b), y| (a.min(y), b.max(y)));
    let fw = (frame.width - 1) as f64;
    let fh = (frame.height - 1) as f64;
    let scale = (fill * fw / (xmax - xmin)).min(fill * fh / (ymax - ymin));
    let cx = 0.5 * (xmin + xmax);
    let cy = 0.5 * (ymin + ymax);
    let points: Vec<Point2<f64>> = (0..v)
        .map(|i| {
            Point2::new(
                0.5 * fw + scale * (mean[2 * i] - cx),
                0.5 * fh + scale * (mean[2 * i + 1] - cy),
            )
        })
        .collect();
    let mean_shape = Shape::new(points)?;

    let centroid = mean_shape.centroid();
    let centred = mean_shape.translated(-centroid.x, -centroid.y).to_vector();
    let (tx, ty) = translation_columns(v);
    let mut columns = vec![
        centred.normalize(),
        perpendicular(&centred).normalize(),
        tx,
        ty,
    ];
    columns.extend(modes.basis.column_iter().map(|c| c.into_owned()));
    let basis = orthonormalize(&Matrix::from_columns(&columns), 1e-8);
    ShapeModel::from_parts(mean_shape, basis, frame)
}

/// Plain serializable form of a [`ShapeModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeModelFile {
    pub frame: Frame,
    pub mean: Vec<[f64; 2]>,
    /// Basis columns, each of length `2 v`, interleaved `x, y`.
    pub basis: Vec<Vec<f64>>,
}

impl From<&ShapeModel> for ShapeModelFile {
    fn from(m: &ShapeModel) -> Self {
        ShapeModelFile {
            frame: m.frame,
            mean: m.mean.points.iter().map(|p| [p.x, p.y]).collect(),
            basis: m
                .basis
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<ShapeModelFile> for ShapeModel {
    type Error = Error;

    fn try_from(f: ShapeModelFile) -> Result<Self> {
        let mean = Shape::from_xy(&f.mean)?;
        let rows = 2 * mean.len();
        if let Some(bad) = f.basis.iter().find(|c| c.len() != rows) {
            return Err(Error::Dimension {
                context: "shape basis column",
                expected: rows,
                actual: bad.len(),
            });
        }
        let cols: Vec<Vector> = f
            .basis
            .iter()
            .map(|c| Vector::from_column_slice(c))
            .collect();
        let basis = if cols.is_empty() {
            Matrix::zeros(rows, 0)
        } else {
            Matrix::from_columns(&cols)
        };
        ShapeModel::from_parts(mean, basis, f.frame)
    }
}
