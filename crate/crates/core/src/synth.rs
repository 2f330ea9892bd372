//! Synthetic faces with known ground truth, and brute-force proximal
//! oracles. All randomness comes from ChaCha8 seeded with a `u64`, so every
//! output is reproducible across platforms.

use nalgebra::Point2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numlin::{nuclear_norm, orthonormalize, thin_svd, Matrix, Vector};
use crate::shapewarp::{
    build_shape_model_with_fill, sample, Frame, PiecewiseAffine, Shape, Texture, WarpParams,
};
use crate::subspace::{build_basis_from_textures, AppearanceBasis};

/// Index pairs swapped by a left-right mirror of the 68-point markup.
pub const MIRROR_68: [(usize, usize); 34] = [
    (0, 16),
    (1, 15),
    (2, 14),
    (3, 13),
    (4, 12),
    (5, 11),
    (6, 10),
    (7, 9),
    (8, 8),
    (17, 26),
    (18, 25),
    (19, 24),
    (20, 23),
    (21, 22),
    (27, 27),
    (28, 28),
    (29, 29),
    (30, 30),
    (31, 35),
    (32, 34),
    (33, 33),
    (36, 45),
    (37, 44),
    (38, 43),
    (39, 42),
    (40, 47),
    (41, 46),
    (48, 54),
    (49, 53),
    (50, 52),
    (51, 51),
    (55, 59),
    (56, 58),
    (57, 57),
];

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, angles_deg: &[f64]) -> Vec<[f64; 2]> {
    angles_deg
        .iter()
        .map(|a| {
            let t = a.to_radians();
            [cx + rx * t.cos(), cy - ry * t.sin()]
        })
        .collect()
}

/// A stylized frontal face in the 68-point markup (jaw 0-16, brows 17-26,
/// nose 27-35, eyes 36-47, mouth 48-67), bilaterally symmetric about
/// `x = 0`, with `y` pointing down.
pub fn face_template() -> Shape {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(68);
    for i in 0..17 {
        let t = std::f64::consts::PI * i as f64 / 16.0;
        pts.push([-t.cos(), -0.1 + 1.35 * t.sin()]);
    }
    for i in 0..5 {
        let s = i as f64 / 4.0;
        pts.push([
            -0.8 + 0.6 * s,
            -0.5 - 0.12 * (std::f64::consts::PI * s).sin(),
        ]);
    }
    for i in 0..5 {
        let s = i as f64 / 4.0;
        pts.push([
            0.2 + 0.6 * s,
            -0.5 - 0.12 * (std::f64::consts::PI * s).sin(),
        ]);
    }
    for i in 0..4 {
        pts.push([0.0, -0.35 + 0.16 * i as f64]);
    }
    for i in 0..5 {
        let s = i as f64 / 4.0 - 0.5;
        pts.push([0.4 * s, 0.25 + 0.06 * (1.0 - 4.0 * s * s)]);
    }
    pts.extend(ellipse(
        -0.45,
        -0.25,
        0.17,
        0.07,
        &[180.0, 120.0, 60.0, 0.0, -60.0, -120.0],
    ));
    pts.extend(ellipse(
        0.45,
        -0.25,
        0.17,
        0.07,
        &[180.0, 120.0, 60.0, 0.0, -60.0, -120.0],
    ));
    let outer: Vec<f64> = (0..12).map(|i| 180.0 - 30.0 * i as f64).collect();
    pts.extend(ellipse(0.0, 0.68, 0.4, 0.15, &outer));
    let inner: Vec<f64> = (0..8).map(|i| 180.0 - 45.0 * i as f64).collect();
    pts.extend(ellipse(0.0, 0.68, 0.25, 0.06, &inner));
    Shape::from_xy(&pts).expect("template is finite and has 68 points")
}

/// Template variations: brow raise, mouth opening, jaw width, small jitter
/// and a random similarity.
pub fn training_shapes(seed: u64, count: usize) -> Vec<Shape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = face_template();
    (0..count)
        .map(|_| {
            let brow = rng.gen_range(-0.08..0.08);
            let mouth = rng.gen_range(-0.05..0.1);
            let jaw = rng.gen_range(-0.08..0.08);
            let mut pts = base.points.clone();
            for (i, p) in pts.iter_mut().enumerate() {
                match i {
                    0..=16 => p.x *= 1.0 + jaw,
                    17..=26 => p.y -= brow,
                    48..=67 => p.y += mouth * (p.y - 0.68) / 0.15,
                    _ => {}
                }
                p.x += rng.gen_range(-0.01..0.01);
                p.y += rng.gen_range(-0.01..0.01);
            }
            let s = Shape::new(pts).expect("finite");
            s.similarity(
                rng.gen_range(0.8..1.2),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            )
        })
        .collect()
}

fn gaussian(u: f64, v: f64, su: f64, sv: f64) -> f64 {
    (-0.5 * ((u / su).powi(2) + (v / sv).powi(2))).exp()
}

/// Fixed face-like pattern, symmetric about the vertical midline, with
/// values in `[0.3, 0.7]`.
pub fn mean_pattern(frame: Frame) -> Texture {
    let fw = (frame.width.max(2) - 1) as f64;
    let fh = (frame.height.max(2) - 1) as f64;
    Texture::from_fn(frame.height, frame.width, |y, x| {
        let u = x as f64 / fw;
        let v = y as f64 / fh;
        let d = (u - 0.5).abs();
        0.55 - 0.25 * gaussian(d - 0.17, v - 0.38, 0.06, 0.05)
            - 0.1 * gaussian(d - 0.17, v - 0.26, 0.1, 0.03)
            + 0.15 * gaussian(d, v - 0.55, 0.05, 0.12)
            - 0.2 * gaussian(d, v - 0.76, 0.14, 0.04)
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn blur(image: &Texture, sigma: f64) -> Texture {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = image.shape();
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let rows = Texture::from_fn(h, w, |y, x| {
        k.iter()
            .enumerate()
            .map(|(j, kj)| kj * image[(y, at(x as isize + j as isize - r, w))])
            .sum()
    });
    Texture::from_fn(h, w, |y, x| {
        k.iter()
            .enumerate()
            .map(|(j, kj)| kj * rows[(at(y as isize + j as isize - r, h), x)])
            .sum()
    })
}

/// Band-limited random field scaled to unit max-abs.
fn smooth_component(rng: &mut ChaCha8Rng, frame: Frame) -> Texture {
    let noise = Texture::from_fn(frame.height, frame.width, |_, _| rng.gen_range(-1.0..1.0));
    let sigma = 0.1 * frame.width.min(frame.height) as f64;
    let b = blur(&noise, sigma.max(0.5));
    let m = b.amax();
    if m > 0.0 {
        b / m
    } else {
        b
    }
}

fn mirror(t: &Texture) -> Texture {
    let w = t.ncols();
    Texture::from_fn(t.nrows(), w, |y, x| t[(y, w - 1 - x)])
}

/// `count` textures `clip(mean + sum_j w_j phi_j)` over `subspace_dim`
/// band-limited components `phi_j`. Weights are bounded so that clipping
/// never activates and the textures span exactly `subspace_dim + 1`
/// dimensions (including the mean).
pub fn gen_textures(
    seed: u64,
    frame: Frame,
    count: usize,
    subspace_dim: usize,
) -> Result<Vec<Texture>> {
    if subspace_dim > count {
        return Err(Error::Config(format!(
            "subspace_dim ({subspace_dim}) exceeds count ({count})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = mean_pattern(frame);
    let components: Vec<Texture> = (0..subspace_dim)
        .map(|_| smooth_component(&mut rng, frame))
        .collect();
    let amp = 0.25 / subspace_dim.max(1) as f64;
    Ok((0..count)
        .map(|_| {
            let mut t = mean.clone();
            for c in &components {
                t += c * (amp * rng.gen_range(-1.0..1.0));
            }
            t.map(|v| v.clamp(0.0, 1.0))
        })
        .collect())
}

/// A bilaterally symmetric texture: the mean pattern plus mirrored-averaged
/// smooth components.
pub fn gen_symmetric_texture(seed: u64, frame: Frame) -> Texture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = mean_pattern(frame);
    for _ in 0..5 {
        let c = smooth_component(&mut rng, frame);
        let sym = (&c + mirror(&c)) * 0.5;
        t += sym * (0.05 * rng.gen_range(-1.0..1.0));
    }
    // Exact symmetry regardless of rounding in the mean pattern.
    let t = (&t + mirror(&t)) * 0.5;
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Shape model, warp, and appearance basis shared by synthetic instances.
#[derive(Debug, Clone)]
pub struct Scene {
    pub pa: PiecewiseAffine,
    pub basis: AppearanceBasis,
    /// Smooth full-frame continuation of each basis column: equal to `U`
    /// on the basis mask, tapering to zero a few pixels outside it. Used
    /// only for rendering, so resampling near the face boundary stays
    /// accurate.
    pub extension: Matrix,
}

/// Number of shape deformation modes in a synthetic scene.
pub const SCENE_SHAPE_MODES: usize = 3;
/// Fraction of the frame spanned by the scene's mean shape, leaving room
/// for pose perturbations inside a frame-sized image.
pub const SCENE_FRAME_FILL: f64 = 0.75;

/// Distance from the mask within which the extension is left untapered.
const EXTENSION_FLAT: f64 = 2.5;
const EXTENSION_TAPER: f64 = 2.0;

fn taper(mask: &[bool], frame: Frame) -> Vec<f64> {
    let inside: Vec<(f64, f64)> = (0..frame.len())
        .filter(|&i| mask[i])
        .map(|i| {
            let (x, y) = frame.coords(i);
            (x as f64, y as f64)
        })
        .collect();
    (0..frame.len())
        .map(|i| {
            if mask[i] {
                return 1.0;
            }
            let (x, y) = frame.coords(i);
            let d = inside
                .iter()
                .map(|(a, b)| (a - x as f64).hypot(b - y as f64))
                .fold(f64::INFINITY, f64::min);
            if d <= EXTENSION_FLAT {
                1.0
            } else if d >= EXTENSION_FLAT + EXTENSION_TAPER {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (d - EXTENSION_FLAT) / EXTENSION_TAPER).cos())
            }
        })
        .collect()
}

/// Build a scene whose basis has exactly `k` columns: `k - 1` principal
/// components of `3k` textures drawn from a `k`-dimensional family, plus
/// the mean.
pub fn scene(seed: u64, frame: Frame, k: usize) -> Result<Scene> {
    if k < 2 {
        return Err(Error::Config(format!("scene basis needs k >= 2, got {k}")));
    }
    let shapes = training_shapes(seed, 40);
    let model = build_shape_model_with_fill(&shapes, SCENE_SHAPE_MODES, frame, SCENE_FRAME_FILL)?;
    let pa = PiecewiseAffine::from_model(model)?;
    let mask = pa.hull_mask();
    let full = gen_textures(seed.wrapping_add(1), frame, 3 * k, k)?;
    let textures: Vec<Vector> = full
        .iter()
        .map(|t| {
            let mut v = Vector::from_column_slice(t.as_slice());
            for (x, m) in v.iter_mut().zip(&mask) {
                if !m {
                    *x = 0.0;
                }
            }
            v
        })
        .collect();
    let basis = build_basis_from_textures(&textures, &mask, frame, k - 1)?.basis;

    // Every basis column is a linear combination of the masked training
    // textures; apply the same combination to the unmasked ones.
    let rows: Vec<usize> = (0..frame.len()).filter(|&i| mask[i]).collect();
    let m_hull = Matrix::from_fn(rows.len(), full.len(), |r, c| full[c].as_slice()[rows[r]]);
    let u_hull = Matrix::from_fn(rows.len(), basis.k(), |r, c| basis.u()[(rows[r], c)]);
    let coeffs = m_hull
        .svd(true, true)
        .solve(&u_hull, 1e-10)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let m_full = Matrix::from_fn(frame.len(), full.len(), |r, c| full[c].as_slice()[r]);
    let mut extension = m_full * coeffs;
    for (i, w) in taper(&mask, frame).into_iter().enumerate() {
        if mask[i] {
            extension.row_mut(i).copy_from(&basis.u().row(i));
        } else {
            extension.row_mut(i).scale_mut(w);
        }
    }
    Ok(Scene {
        pa,
        basis,
        extension,
    })
}

/// Pose perturbation and corruption settings of [`gen_instance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceParams {
    /// Translation magnitude; the direction is drawn from the seed.
    pub translation_px: f64,
    /// Rotation magnitude; the sign is drawn from the seed.
    pub rotation_deg: f64,
    /// Scale change in percent; the sign is drawn from the seed.
    pub scale_pct: f64,
    /// Fraction of frame pixels corrupted, in `[0, 1)`.
    pub sparsity: f64,
    /// Spike magnitude, in `[0, 0.5]`.
    pub spike_mag: f64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        InstanceParams {
            translation_px: 0.0,
            rotation_deg: 0.0,
            scale_pct: 0.0,
            sparsity: 0.0,
            spike_mag: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    /// Frame-sized image with values in `[0, 1]`, minimum 0 and maximum 1.
    pub image: Texture,
    /// Uncorrupted rendering.
    pub clean: Texture,
    /// `reshape(U c)` for the ground-truth coefficients.
    pub clean_texture: Texture,
    pub gt_shape: Shape,
    pub gt_params: WarpParams,
    pub gt_coeffs: Vector,
    /// Column-major pixel indices of the spikes, ascending.
    pub gt_error_support: Vec<usize>,
    /// Signed spike values at `gt_error_support`.
    pub gt_error_values: Vec<f64>,
    pub seed: u64,
}

/// Draw coefficients, render `reshape(U c)` under a similarity perturbation
/// of the mean shape, and add spikes. The image is scaled so its maximum is
/// exactly 1 (the background is 0), which makes min-max normalization the
/// identity; the recorded coefficients include that scaling. Spike signs
/// keep every pixel inside `[0, 1]`, and the brightest pixel is never
/// corrupted.
pub fn gen_instance(scene: &Scene, seed: u64, params: &InstanceParams) -> Result<SynthInstance> {
    let (basis, pa) = (&scene.basis, &scene.pa);
    if !(0.0..1.0).contains(&params.sparsity) {
        return Err(Error::Config(format!(
            "sparsity must lie in [0, 1), got {}",
            params.sparsity
        )));
    }
    if !(0.0..=0.5).contains(&params.spike_mag) {
        return Err(Error::Config(format!(
            "spike magnitude must lie in [0, 0.5], got {}",
            params.spike_mag
        )));
    }
    if pa.frame() != basis.frame() {
        return Err(Error::Config(format!(
            "shape model frame {} does not match basis frame {}",
            pa.frame(),
            basis.frame()
        )));
    }
    let frame = basis.frame();
    let u = basis.u();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Coefficients: the mean plus a bounded random excursion in span(U).
    let delta = Vector::from_fn(basis.k(), |_, _| rng.gen_range(-1.0..1.0));
    let excursion = u * &delta;
    let amp = 0.15 * rng.gen_range(0.5..1.0) / excursion.amax().max(f64::MIN_POSITIVE);
    let c0 = u.tr_mul(basis.mean()) + delta * amp;
    let texture = Texture::from_column_slice(frame.height, frame.width, (u * &c0).as_slice());
    let extended = Texture::from_column_slice(
        frame.height,
        frame.width,
        (&scene.extension * &c0).as_slice(),
    );

    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let rot_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let scale_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mean = pa.model().mean();
    let scale = 1.0 + scale_sign * params.scale_pct / 100.0;
    let theta = rot_sign * params.rotation_deg.to_radians();
    let (dx, dy) = (
        params.translation_px * angle.cos(),
        params.translation_px * angle.sin(),
    );
    let identity = scale == 1.0 && theta == 0.0 && dx == 0.0 && dy == 0.0;
    let gt_shape = if identity {
        mean.clone()
    } else {
        mean.similarity(scale, theta, dx, dy)
    };
    let gt_params = pa.model().project(&gt_shape)?;

    // Render through the inverse similarity. Every pixel is rendered from
    // the smooth extension; the face pixels are those inside the
    // ground-truth shape.
    let centre = mean.centroid();
    let (sin, cos) = theta.sin_cos();
    let mut clean = Texture::zeros(frame.height, frame.width);
    for x in 0..frame.width {
        for y in 0..frame.height {
            let r = if identity {
                Point2::new(x as f64, y as f64)
            } else {
                let qx = x as f64 - centre.x - dx;
                let qy = y as f64 - centre.y - dy;
                Point2::new(
                    centre.x + (cos * qx + sin * qy) / scale,
                    centre.y + (-sin * qx + cos * qy) / scale,
                )
            };
            if let Some(s) = sample(&extended, r.x, r.y) {
                clean[(y, x)] = s.value.max(0.0);
            }
        }
    }
    let inside: Vec<usize> = pa
        .triangulation()
        .anchors(&gt_shape, frame)
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|_| i))
        .collect();
    let (max_idx, max) = clean
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, f64::MIN),
            |best, (i, v)| if v > best.1 { (i, v) } else { best },
        );
    if max.is_nan() || max <= 0.0 || clean.min() != 0.0 {
        return Err(Error::Degenerate(
            "rendered face must be nonzero and leave some background".into(),
        ));
    }
    let clean = clean / max;
    let clean_texture = texture / max;
    let gt_coeffs = c0 / max;

    let n_spikes = (params.sparsity * frame.len() as f64).floor() as usize;
    let candidates: Vec<usize> = inside.into_iter().filter(|&i| i != max_idx).collect();
    if n_spikes > candidates.len() {
        return Err(Error::Config(format!(
            "{n_spikes} spikes requested but only {} face pixels",
            candidates.len()
        )));
    }
    let mut support: Vec<usize> = sample_indices(&mut rng, candidates.len(), n_spikes)
        .into_iter()
        .map(|j| candidates[j])
        .collect();
    support.sort_unstable();
    let mut image = clean.clone();
    let mut values = Vec::with_capacity(support.len());
    for &i in &support {
        let (x, y) = frame.coords(i);
        let v = if image[(y, x)] < 0.5 {
            params.spike_mag
        } else {
            -params.spike_mag
        };
        image[(y, x)] += v;
        values.push(v);
    }

    Ok(SynthInstance {
        image,
        clean,
        clean_texture,
        gt_shape,
        gt_params,
        gt_coeffs,
        gt_error_support: support,
        gt_error_values: values,
        seed,
    })
}

/// Which proximal objective [`prox_objective_oracle`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxKind {
    /// `tau ||X||_* + 0.5 ||X - Q||_F^2`
    Nuclear,
    /// `tau ||X||_1 + 0.5 ||X - Q||_F^2`
    L1,
}

pub fn prox_objective(kind: ProxKind, x: &Matrix, q: &Matrix, tau: f64) -> f64 {
    let reg = match kind {
        ProxKind::Nuclear => nuclear_norm(x).unwrap_or(f64::INFINITY),
        ProxKind::L1 => x.iter().map(|v| v.abs()).sum(),
    };
    tau * reg + 0.5 * (x - q).norm_squared()
}

/// Lower bounds `tr(W^T Y) <= ||Y||_*` for `W = U_r V_r^T + U_p G V_p^T`,
/// where `U_r, V_r` span the candidate's singular subspaces, `U_p, V_p`
/// their complements and `||G||_2 <= 1`. A bound can only confirm that a
/// point scores no better than the candidate; undecided points are
/// evaluated exactly.
struct NuclearScreen {
    ur: Matrix,
    vr: Matrix,
    up: Matrix,
    vp: Matrix,
}

impl NuclearScreen {
    fn new(x: &Matrix) -> Option<Self> {
        let svd = thin_svd(x).ok()?;
        let top = svd.singular_values.max();
        let r = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-12 * top)
            .count();
        let (ur, up) = split_basis(&svd.left.columns(0, r).into_owned(), x.nrows());
        let (vr, vp) = split_basis(&svd.right.columns(0, r).into_owned(), x.ncols());
        (ur.ncols() == vr.ncols()).then_some(NuclearScreen { ur, vr, up, vp })
    }

    /// `tr(U_r^T Y V_r)` and the projection of `Y` onto the complements.
    fn parts(&self, y: &Matrix) -> (f64, Matrix) {
        let aligned = (&self.ur.tr_mul(y) * &self.vr).trace();
        (aligned, self.up.tr_mul(y) * &self.vp)
    }
}

/// Orthonormal basis of `span(q)` and of its complement in `R^dim`.
fn split_basis(q: &Matrix, dim: usize) -> (Matrix, Matrix) {
    let r = q.ncols();
    let mut all = Matrix::zeros(dim, r + dim);
    all.columns_mut(0, r).copy_from(q);
    all.columns_mut(r, dim).fill_with_identity();
    let o = orthonormalize(&all, 1e-8);
    let kept = r.min(o.ncols());
    (
        o.columns(0, kept).into_owned(),
        o.columns(kept, o.ncols() - kept).into_owned(),
    )
}

/// `true` iff `candidate` scores no worse, up to rounding, than each of `perturbations`
/// random points at Frobenius distance at most `radius` from it.
pub fn prox_objective_oracle(
    kind: ProxKind,
    candidate: &Matrix,
    q: &Matrix,
    tau: f64,
    perturbations: usize,
    radius: f64,
    seed: u64,
) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Objective evaluations carry rounding error; differences below a few
    // hundred ulps of the objective are ties, not improvements.
    let base = prox_objective(kind, candidate, q, tau);
    let base = base - 512.0 * f64::EPSILON * base.abs().max(1.0);
    let screen = match kind {
        ProxKind::Nuclear => NuclearScreen::new(candidate),
        ProxKind::L1 => None,
    };
    let (r, c) = candidate.shape();
    (0..perturbations).all(|_| {
        let dir = Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let n = dir.norm();
        if n == 0.0 {
            return true;
        }
        let y = candidate + dir * (radius * rng.gen_range(0.0..1.0) / n);
        if let Some(screen) = &screen {
            let quad = 0.5 * (&y - q).norm_squared();
            if tau * y.norm() + quad >= base {
                return true;
            }
            let (aligned, rest) = screen.parts(&y);
            if tau * (aligned + rest.norm()) + quad >= base {
                return true;
            }
            if !rest.is_empty() {
                if let Ok(nn) = nuclear_norm(&rest) {
                    if tau * (aligned + nn) + quad >= base {
                        return true;
                    }
                }
            }
        }
        base <= prox_objective(kind, &y, q, tau)
    })
}
