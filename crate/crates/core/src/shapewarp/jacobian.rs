use super::model::shape_from_params;
use super::shape::WarpParams;
use super::warp::{sample, PiecewiseAffine, Texture, Warped};
use crate::error::Result;
use crate::numlin::{ensure_finite, Matrix, Vector};

/// Warped texture at `p` together with its Jacobian with respect to `p`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub warped: Warped,
    /// `f x v_p` steepest-descent images; zero rows where masked.
    pub jacobian: Matrix,
}

/// Evaluate `x(p)` and `J(p) = grad x(p) * dW/dp`.
///
/// The image gradient is the derivative of the same interpolant used for
/// sampling, taken at the warped location, so `J` is the exact derivative
/// of the returned `x(p)`. `dW/dp` interpolates the shape-basis
/// displacements barycentrically inside each triangle.
pub fn linearize(image: &Texture, pa: &PiecewiseAffine, p: &WarpParams) -> Result<Linearization> {
    ensure_finite(image, "image")?;
    let model = pa.model();
    let shape = shape_from_params(model, p)?;
    let basis = model.basis();
    let tris = &pa.triangulation().triangles;
    let f = pa.frame().len();
    let vp = model.n_params();

    let mut x = Vector::zeros(f);
    let mut mask = vec![false; f];
    let mut jacobian = Matrix::zeros(f, vp);
    for (i, anchor) in pa.anchors().iter().enumerate() {
        let Some(a) = anchor else { continue };
        let src = pa.map_anchor(&shape, a);
        let Some(s) = sample(image, src.x, src.y) else {
            continue;
        };
        x[i] = s.value;
        mask[i] = true;
        let t = tris[a.triangle];
        for j in 0..vp {
            let mut wx = 0.0;
            let mut wy = 0.0;
            for (k, &v) in t.iter().enumerate() {
                wx += a.bary[k] * basis[(2 * v, j)];
                wy += a.bary[k] * basis[(2 * v + 1, j)];
            }
            jacobian[(i, j)] = s.dx * wx + s.dy * wy;
        }
    }
    Ok(Linearization {
        warped: Warped { x, mask },
        jacobian,
    })
}

/// Steepest-descent images `J(p)`, one column per warp parameter.
pub fn steepest_descent_images(
    image: &Texture,
    pa: &PiecewiseAffine,
    p: &WarpParams,
) -> Result<Matrix> {
    linearize(image, pa, p).map(|l| l.jacobian)
}
