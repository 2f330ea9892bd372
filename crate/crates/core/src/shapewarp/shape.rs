use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::Vector;

/// Reference frame dimensions in pixels. Pixel `(x, y)` sits at integer
/// coordinates and is stored at flat index `x * height + y` (column-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Frame { width, height }
    }

    /// Number of pixels `f`.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x * self.height + y
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.height, index % self.height)
    }
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Ordered landmark configuration in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub points: Vec<Point2<f64>>,
}

impl Shape {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Degenerate(format!(
                "a shape needs at least 3 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "shape",
                index: i,
            });
        }
        Ok(Shape { points })
    }

    pub fn from_xy(xy: &[[f64; 2]]) -> Result<Self> {
        Shape::new(xy.iter().map(|p| Point2::new(p[0], p[1])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Interleaved `(x0, y0, x1, y1, ...)`.
    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(2 * self.len(), self.points.iter().flat_map(|p| [p.x, p.y]))
    }

    pub fn from_vector(v: &Vector) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                context: "interleaved shape vector",
                expected: v.len() + 1,
                actual: v.len(),
            });
        }
        Shape::new(
            v.as_slice()
                .chunks_exact(2)
                .map(|c| Point2::new(c[0], c[1]))
                .collect(),
        )
    }

    pub fn centroid(&self) -> Point2<f64> {
        let n = self.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
        Point2::new(sx / n, sy / n)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Shape {
        Shape {
            points: self
                .points
                .iter()
                .map(|p| Point2::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }

    /// Rotation by `angle` (radians) and uniform scaling about the centroid,
    /// followed by a translation.
    pub fn similarity(&self, scale: f64, angle: f64, dx: f64, dy: f64) -> Shape {
        let c = self.centroid();
        let (s, co) = angle.sin_cos();
        Shape {
            points: self
                .points
                .iter()
                .map(|p| {
                    let x = p.x - c.x;
                    let y = p.y - c.y;
                    Point2::new(
                        c.x + scale * (co * x - s * y) + dx,
                        c.y + scale * (s * x + co * y) + dy,
                    )
                })
                .collect(),
        }
    }

    /// Mean Euclidean distance between corresponding points.
    pub fn mean_distance(&self, other: &Shape) -> f64 {
        let n = self.len().min(other.len());
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / n as f64
    }
}

/// Warp parameters: 4 similarity coefficients followed by the deformation
/// coefficients of the shape model.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpParams(pub Vector);

impl WarpParams {
    pub fn zeros(n: usize) -> Self {
        WarpParams(Vector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
