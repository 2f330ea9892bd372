use nalgebra::Point2;

use super::shape::{Frame, Shape};
use crate::error::{Error, Result};

/// Triangles over the landmark indices of the mean shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub triangles: Vec<[usize; 3]>,
}

/// Location of a reference pixel inside one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub triangle: usize,
    /// Barycentric weights of the triangle vertices, each in `[0, 1]`,
    /// summing to one.
    pub bary: [f64; 3],
}

fn signed_area(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Delaunay triangulation of the shape's points. Triangles are returned
/// counter-clockwise (in a y-up sense) and sorted for determinism.
pub fn delaunay(shape: &Shape) -> Result<Triangulation> {
    let pts = &shape.points;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if pts[i] == pts[j] {
                return Err(Error::Degenerate(format!("landmarks {i} and {j} coincide")));
            }
        }
    }
    let input: Vec<delaunator::Point> = pts
        .iter()
        .map(|p| delaunator::Point { x: p.x, y: p.y })
        .collect();
    let raw = delaunator::triangulate(&input);
    if raw.triangles.is_empty() {
        return Err(Error::Degenerate("all landmarks are collinear".into()));
    }
    let mut triangles: Vec<[usize; 3]> = raw
        .triangles
        .chunks_exact(3)
        .map(|t| {
            let mut t = [t[0], t[1], t[2]];
            if signed_area(pts[t[0]], pts[t[1]], pts[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
            // Rotate so the smallest index leads; keeps orientation.
            let lead = (0..3).min_by_key(|&i| t[i]).unwrap();
            t.rotate_left(lead);
            t
        })
        .collect();
    triangles.sort_unstable();
    for t in &triangles {
        if signed_area(pts[t[0]], pts[t[1]], pts[t[2]]).abs() <= 1e-12 {
            return Err(Error::Degenerate(format!("zero-area triangle {t:?}")));
        }
    }
    Ok(Triangulation { triangles })
}

impl Triangulation {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Barycentric coordinates of `p` in triangle `t` of `shape`.
    pub fn barycentric(&self, shape: &Shape, t: usize, p: Point2<f64>) -> [f64; 3] {
        let [i, j, k] = self.triangles[t];
        let (a, b, c) = (shape.points[i], shape.points[j], shape.points[k]);
        let area = signed_area(a, b, c);
        let wa = signed_area(p, b, c) / area;
        let wb = signed_area(a, p, c) / area;
        [wa, wb, 1.0 - wa - wb]
    }

    /// Assign every frame pixel to the first triangle of `shape` containing
    /// it; pixels outside all triangles get `None`.
    pub fn anchors(&self, shape: &Shape, frame: Frame) -> Vec<Option<Anchor>> {
        const TOL: f64 = 1e-9;
        let mut out = vec![None; frame.len()];
        // Per-triangle bounding boxes keep the scan linear in practice.
        for (t, tri) in self.triangles.iter().enumerate() {
            let xs = tri.map(|i| shape.points[i].x);
            let ys = tri.map(|i| shape.points[i].y);
            let x0 = xs.iter().cloned().fold(f64::MAX, f64::min).floor().max(0.0) as usize;
            let x1 = xs.iter().cloned().fold(f64::MIN, f64::max).ceil();
            let y0 = ys.iter().cloned().fold(f64::MAX, f64::min).floor().max(0.0) as usize;
            let y1 = ys.iter().cloned().fold(f64::MIN, f64::max).ceil();
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            let x1 = (x1 as usize).min(frame.width - 1);
            let y1 = (y1 as usize).min(frame.height - 1);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    let idx = frame.index(x, y);
                    if out[idx].is_some() {
                        continue;
                    }
                    let w = self.barycentric(shape, t, Point2::new(x as f64, y as f64));
                    if w.iter().all(|v| *v >= -TOL) {
                        let clamped = w.map(|v| v.clamp(0.0, 1.0));
                        let s: f64 = clamped.iter().sum();
                        out[idx] = Some(Anchor {
                            triangle: t,
                            bary: clamped.map(|v| v / s),
                        });
                    }
                }
            }
        }
        out
    }
}
