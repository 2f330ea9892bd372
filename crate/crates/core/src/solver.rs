//! Alternating-directions augmented Lagrangian solver for
//!
//! ```text
//! min ||L||_* + lambda ||e||_1
//! s.t. h1 = x(p) + J dp - U c - e = 0,   h2 = L - R(U c) = 0
//! ```
//!
//! with an outer loop that applies `p <- p + dp` and re-linearizes.
//! Block updates run in Gauss-Seidel order `L, c, dp, e`, followed by dual
//! ascent on the multipliers `a`, `B` and the penalty schedule
//! `mu <- min(rho * mu, mu_max)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{shrink_in_place, solve_spd, svt_with_spectrum, Matrix, Thresholded, Vector};
use crate::shapewarp::{
    linearize, normalize_min_max, shape_from_params, Frame, PiecewiseAffine, Shape, Texture,
    WarpParams,
};
use crate::subspace::AppearanceBasis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight of the l1 term.
    pub lambda: f64,
    /// Penalty growth factor, `> 1`.
    pub rho: f64,
    /// Initial penalty.
    pub mu0: f64,
    /// Penalty cap.
    pub mu_max: f64,
    /// Outer tolerance on the change of `||L||_* + lambda ||e||_1`.
    pub eps1: f64,
    /// Inner tolerance on relative iterate change.
    pub eps2: f64,
    /// Inner tolerance on relative constraint violation.
    pub eps3: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Add the projected `a / mu` term to the `dp` right-hand side.
    pub dp_multiplier_term: bool,
    /// Largest accepted condition number of the projected Gram matrix.
    pub max_condition: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.3,
            rho: 1.1,
            mu0: 1e-6,
            mu_max: 1e10,
            eps1: 1e-3,
            eps2: 1e-5,
            eps3: 1e-7,
            max_inner: 500,
            max_outer: 30,
            dp_multiplier_term: false,
            max_condition: 1e12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("mu0", self.mu0),
            ("mu_max", self.mu_max),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("max_condition", self.max_condition),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!(
                "rho must exceed 1, got {}",
                self.rho
            )));
        }
        if self.mu_max < self.mu0 {
            return Err(Error::Config(format!(
                "mu_max ({}) is below mu0 ({})",
                self.mu_max, self.mu0
            )));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}

/// Linearized data constraint `x + J dp - U c - e`.
pub fn residual_h1(
    x: &Vector,
    jacobian: &Matrix,
    dp: &Vector,
    u: &Matrix,
    c: &Vector,
    e: &Vector,
) -> Result<Vector> {
    let f = x.len();
    check_len("h1: jacobian rows", f, jacobian.nrows())?;
    check_len("h1: dp", jacobian.ncols(), dp.len())?;
    check_len("h1: basis rows", f, u.nrows())?;
    check_len("h1: c", u.ncols(), c.len())?;
    check_len("h1: e", f, e.len())?;
    let mut r = x - e;
    r.gemv(1.0, jacobian, dp, 1.0);
    r.gemv(-1.0, u, c, 1.0);
    Ok(r)
}

/// Subspace constraint `L - R(U c)`.
pub fn residual_h2(l: &Matrix, u: &Matrix, c: &Vector) -> Result<Matrix> {
    check_len("h2: basis rows", l.len(), u.nrows())?;
    check_len("h2: c", u.ncols(), c.len())?;
    let uc = u * c;
    Ok(l - Matrix::from_column_slice(l.nrows(), l.ncols(), uc.as_slice()))
}

/// `L = D_{1/mu}[R(U c) - B / mu]`.
pub fn update_l(u: &Matrix, c: &Vector, b: &Matrix, mu: f64) -> Result<Thresholded> {
    check_len("update_l: basis rows", b.len(), u.nrows())?;
    check_len("update_l: c", u.ncols(), c.len())?;
    let uc = u * c;
    let mut m = Matrix::from_column_slice(b.nrows(), b.ncols(), uc.as_slice());
    m -= b / mu;
    svt_with_spectrum(&m, 1.0 / mu)
}

/// Closed-form coefficient update
/// `c = U^T (a + vec B) / (2 mu) + U^T (x_hat + vec L) / 2`,
/// `x_hat = x + J dp - e`.
#[allow(clippy::too_many_arguments)]
pub fn update_c(
    x: &Vector,
    jacobian: &Matrix,
    dp: &Vector,
    e: &Vector,
    l: &Matrix,
    a: &Vector,
    b: &Matrix,
    mu: f64,
    u: &Matrix,
) -> Result<Vector> {
    let f = x.len();
    check_len("update_c: jacobian rows", f, jacobian.nrows())?;
    check_len("update_c: dp", jacobian.ncols(), dp.len())?;
    check_len("update_c: e", f, e.len())?;
    check_len("update_c: L", f, l.len())?;
    check_len("update_c: a", f, a.len())?;
    check_len("update_c: B", f, b.len())?;
    check_len("update_c: basis rows", f, u.nrows())?;
    let mut x_hat = x - e;
    x_hat.gemv(1.0, jacobian, dp, 1.0);
    let dual = a + Vector::from_column_slice(b.as_slice());
    let primal = x_hat + Vector::from_column_slice(l.as_slice());
    let mut c = u.tr_mul(&dual) / (2.0 * mu);
    c.gemv_tr(0.5, u, &primal, 1.0);
    Ok(c)
}

/// Pre-factored projected least squares for the `dp` block: the Gram
/// matrix `J^T J - (U^T J)^T (U^T J)` of `J` projected onto the orthogonal
/// complement of `span(U)`.
#[derive(Debug, Clone)]
pub struct DpSolver {
    jacobian: Matrix,
    u: Matrix,
    ut_j: Matrix,
    gram: Matrix,
    condition: f64,
}

impl DpSolver {
    pub fn new(jacobian: &Matrix, u: &Matrix, max_condition: f64) -> Result<Self> {
        check_len("update_dp: basis rows", jacobian.nrows(), u.nrows())?;
        let ut_j = u.tr_mul(jacobian);
        let gram = jacobian.tr_mul(jacobian) - ut_j.tr_mul(&ut_j);
        // Probe conditioning once; the Gram matrix is fixed for an inner solve.
        let probe = solve_spd(&gram, &Vector::zeros(gram.nrows()), max_condition)?;
        Ok(DpSolver {
            jacobian: jacobian.clone(),
            u: u.clone(),
            ut_j,
            gram,
            condition: probe.condition,
        })
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `dp = -(J~^T J~)^{-1} J~^T r` for residual `r`.
    pub fn solve(&self, r: &Vector) -> Result<Vector> {
        check_len("update_dp: residual", self.jacobian.nrows(), r.len())?;
        let mut rhs = self.jacobian.tr_mul(r);
        let ut_r = self.u.tr_mul(r);
        rhs.gemv_tr(-1.0, &self.ut_j, &ut_r, 1.0);
        let s = solve_spd(&self.gram, &rhs, f64::INFINITY)?;
        Ok(-s.solution)
    }
}

/// `dp = -(J~^T J~)^{-1} J~^T (x - e)` with `J~ = (I - U U^T) J`.
pub fn update_dp(
    jacobian: &Matrix,
    u: &Matrix,
    x: &Vector,
    e: &Vector,
    max_condition: f64,
) -> Result<Vector> {
    check_len("update_dp: e", x.len(), e.len())?;
    DpSolver::new(jacobian, u, max_condition)?.solve(&(x - e))
}

/// `e = S_{lambda/mu}[x + J dp - U c + a / mu]`.
#[allow(clippy::too_many_arguments)]
pub fn update_e(
    x: &Vector,
    jacobian: &Matrix,
    dp: &Vector,
    u: &Matrix,
    c: &Vector,
    a: &Vector,
    mu: f64,
    lambda: f64,
) -> Result<Vector> {
    check_len("update_e: a", x.len(), a.len())?;
    let zero = Vector::zeros(x.len());
    let mut arg = residual_h1(x, jacobian, dp, u, c, &zero)?;
    arg.axpy(1.0 / mu, a, 1.0);
    shrink_in_place(arg.as_mut_slice(), lambda / mu)?;
    Ok(arg)
}

/// Dual ascent `a + mu h1`, `B + mu h2`.
pub fn update_multipliers(
    a: &Vector,
    b: &Matrix,
    mu: f64,
    h1: &Vector,
    h2: &Matrix,
) -> (Vector, Matrix) {
    (a + h1 * mu, b + h2 * mu)
}

/// Diagnostics of one inner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerRecord {
    /// Zero-based iteration index `t`.
    pub iteration: usize,
    /// Penalty used in this iteration.
    pub mu: f64,
    /// `||L||_* + lambda ||e||_1` at the new iterate.
    pub objective: f64,
    pub h1_rel: f64,
    pub h2_rel: f64,
    pub de_rel: f64,
    pub dl_rel: f64,
}

impl InnerRecord {
    pub fn change_converged(&self, eps2: f64) -> bool {
        self.de_rel.max(self.dl_rel) <= eps2
    }

    pub fn feasibility_converged(&self, eps3: f64) -> bool {
        self.h1_rel.max(self.h2_rel) <= eps3
    }
}

/// All iterates of the inner loop plus its per-iteration records.
#[derive(Debug, Clone)]
pub struct InnerState {
    pub l: Matrix,
    pub e: Vector,
    pub c: Vector,
    pub dp: Vector,
    pub a: Vector,
    pub b: Matrix,
    /// Penalty for the next iteration.
    pub mu: f64,
    /// Number of completed iterations.
    pub t: usize,
    pub nuclear_norm: f64,
    pub converged: bool,
    /// Set when the projected Gram matrix was rejected and `dp` stayed zero.
    pub dp_frozen: bool,
    pub records: Vec<InnerRecord>,
}

impl InnerState {
    fn cold(frame: Frame, k: usize, vp: usize, mu0: f64) -> Self {
        let f = frame.len();
        InnerState {
            l: Matrix::zeros(frame.height, frame.width),
            e: Vector::zeros(f),
            c: Vector::zeros(k),
            dp: Vector::zeros(vp),
            a: Vector::zeros(f),
            b: Matrix::zeros(frame.height, frame.width),
            mu: mu0,
            t: 0,
            nuclear_norm: 0.0,
            converged: false,
            dp_frozen: false,
            records: Vec::new(),
        }
    }

    /// `||L||_* + lambda ||e||_1`.
    pub fn objective(&self, lambda: f64) -> f64 {
        self.nuclear_norm + lambda * self.e.lp_norm(1)
    }

    pub fn objective_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn h1_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h1_rel).collect()
    }

    pub fn h2_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h2_rel).collect()
    }

    pub fn mu_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mu).collect()
    }
}

/// Whether the inner loop updates `dp` or holds it at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpMode {
    Update,
    Frozen,
}

/// One row of the diagnostic trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    pub record: InnerRecord,
}

/// Per-iteration diagnostics across outer and inner loops.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub const CSV_HEADER: &'static str = "outer,inner,mu,objective,h1_rel,h2_rel,de_rel,dL_rel";

    fn extend(&mut self, outer: usize, records: &[InnerRecord]) {
        self.rows
            .extend(records.iter().map(|&record| TraceRow { outer, record }));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let i = &r.record;
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.outer, i.iteration, i.mu, i.objective, i.h1_rel, i.h2_rel, i.de_rel, i.dl_rel
            ));
        }
        out
    }
}

/// Run the inner loop from a cold start (all iterates zero, `mu = mu0`).
///
/// Rows of `x` and `jacobian` outside `mask` are zeroed first. Stops when
/// both the relative iterate change is at most `eps2` and the relative
/// constraint violation is at most `eps3`, or after `max_inner` iterations.
pub fn inner_solve(
    x: &Vector,
    mask: &[bool],
    jacobian: &Matrix,
    basis: &AppearanceBasis,
    cfg: &SolverConfig,
    mode: DpMode,
) -> Result<InnerState> {
    cfg.validate()?;
    let frame = basis.frame();
    let f = frame.len();
    check_len("inner_solve: x", f, x.len())?;
    check_len("inner_solve: mask", f, mask.len())?;
    check_len("inner_solve: jacobian rows", f, jacobian.nrows())?;
    let u = basis.u();
    let vp = jacobian.ncols();

    let mut x = x.clone();
    let mut jacobian = jacobian.clone();
    for (i, valid) in mask.iter().enumerate() {
        if !valid {
            x[i] = 0.0;
            jacobian.row_mut(i).fill(0.0);
        }
    }
    let x_norm = x.norm();
    if x_norm.is_nan() || x_norm <= 0.0 {
        return Err(Error::Empty("warped texture (zero norm)"));
    }

    let mut s = InnerState::cold(frame, basis.k(), vp, cfg.mu0);
    let dp_solver = match mode {
        DpMode::Frozen => None,
        DpMode::Update if vp == 0 => None,
        DpMode::Update => match DpSolver::new(&jacobian, u, cfg.max_condition) {
            Ok(solver) => Some(solver),
            Err(Error::IllConditioned { .. }) => {
                s.dp_frozen = true;
                None
            }
            Err(e) => return Err(e),
        },
    };

    while s.t < cfg.max_inner {
        let mu = s.mu;
        let thresholded = update_l(u, &s.c, &s.b, mu)?;
        let l_next = thresholded.matrix;
        let c_next = update_c(&x, &jacobian, &s.dp, &s.e, &l_next, &s.a, &s.b, mu, u)?;
        let dp_next = match &dp_solver {
            Some(solver) => {
                let mut r = &x - &s.e;
                if cfg.dp_multiplier_term {
                    r.axpy(1.0 / mu, &s.a, 1.0);
                }
                solver.solve(&r)?
            }
            None => s.dp.clone(),
        };
        let e_next = update_e(&x, &jacobian, &dp_next, u, &c_next, &s.a, mu, cfg.lambda)?;

        let h1 = residual_h1(&x, &jacobian, &dp_next, u, &c_next, &e_next)?;
        let h2 = residual_h2(&l_next, u, &c_next)?;
        let (a_next, b_next) = update_multipliers(&s.a, &s.b, mu, &h1, &h2);

        let record = InnerRecord {
            iteration: s.t,
            mu,
            objective: thresholded.singular_values.sum() + cfg.lambda * e_next.lp_norm(1),
            h1_rel: h1.norm() / x_norm,
            h2_rel: h2.norm() / x_norm,
            de_rel: (&e_next - &s.e).norm() / x_norm,
            dl_rel: (&l_next - &s.l).norm() / x_norm,
        };

        s.l = l_next;
        s.c = c_next;
        s.dp = dp_next;
        s.e = e_next;
        s.a = a_next;
        s.b = b_next;
        s.nuclear_norm = thresholded.singular_values.sum();
        s.mu = (cfg.rho * mu).min(cfg.mu_max);
        s.t += 1;
        s.records.push(record);

        let finite = record.objective.is_finite()
            && record.h1_rel.is_finite()
            && record.h2_rel.is_finite()
            && s.c.iter().chain(s.dp.iter()).all(|v| v.is_finite());
        if !finite {
            let mut trace = Trace::default();
            trace.extend(0, &s.records);
            return Err(Error::Diverged {
                outer: 0,
                inner: s.t - 1,
                trace: Box::new(trace),
            });
        }
        if record.change_converged(cfg.eps2) && record.feasibility_converged(cfg.eps3) {
            s.converged = true;
            break;
        }
    }
    Ok(s)
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub outer: usize,
    /// `||L||_* + lambda ||e||_1` at the end of the inner loop.
    pub objective: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub dp_frozen: bool,
    /// `max |dp_i|` applied after this iteration.
    pub dp_max: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub p_final: WarpParams,
    pub shape: Shape,
    pub l: Matrix,
    pub e: Vector,
    pub c: Vector,
    /// Validity mask of the last warp.
    pub mask: Vec<bool>,
    pub converged_inner: Vec<bool>,
    pub converged_outer: bool,
    pub outer: Vec<OuterRecord>,
    pub trace: Trace,
}

impl FitResult {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.outer.iter().map(|o| o.objective).collect()
    }
}

fn check_compatible(pa: &PiecewiseAffine, basis: &AppearanceBasis) -> Result<()> {
    if pa.frame() != basis.frame() {
        return Err(Error::Config(format!(
            "shape model frame {} does not match basis frame {}",
            pa.frame(),
            basis.frame()
        )));
    }
    Ok(())
}

fn attach_outer(err: Error, outer: usize, trace: &Trace) -> Error {
    match err {
        Error::Diverged {
            inner, trace: t, ..
        } => {
            let mut full = trace.clone();
            full.rows
                .extend(t.rows.iter().map(|r| TraceRow { outer, ..*r }));
            Error::Diverged {
                outer,
                inner,
                trace: Box::new(full),
            }
        }
        other => other,
    }
}

/// Joint alignment: at each outer iteration warp and normalize the image
/// at the current `p`, recompute `J`, run the inner loop from a cold start
/// and apply `p <- p + dp`. Stops when the objective changes by less than
/// `eps1 * max(1, previous)` or after `max_outer` iterations.
pub fn fit(
    image: &Texture,
    init_shape: &Shape,
    pa: &PiecewiseAffine,
    basis: &AppearanceBasis,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_compatible(pa, basis)?;
    let normalized = normalize_min_max(image);
    let mut p = pa.model().project(init_shape)?;
    if let Some(i) = p.0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "initial warp parameters",
            index: i,
        });
    }

    let mut trace = Trace::default();
    let mut outer_records = Vec::new();
    let mut converged_inner = Vec::new();
    let mut converged_outer = false;
    let mut last: Option<(InnerState, Vec<bool>)> = None;

    for outer in 0..cfg.max_outer {
        let lin = linearize(&normalized, pa, &p)?;
        let state = inner_solve(
            &lin.warped.x,
            &lin.warped.mask,
            &lin.jacobian,
            basis,
            cfg,
            DpMode::Update,
        )
        .map_err(|e| attach_outer(e, outer, &trace))?;
        trace.extend(outer, &state.records);
        let objective = state.objective(cfg.lambda);
        p.0 += &state.dp;
        outer_records.push(OuterRecord {
            outer,
            objective,
            inner_iterations: state.t,
            inner_converged: state.converged,
            dp_frozen: state.dp_frozen,
            dp_max: state.dp.amax(),
        });
        converged_inner.push(state.converged);
        last = Some((state, lin.warped.mask));

        if let [.., prev, cur] = outer_records.as_slice() {
            if (cur.objective - prev.objective).abs() < cfg.eps1 * prev.objective.max(1.0) {
                converged_outer = true;
                break;
            }
        }
    }

    let (state, mask) = last.expect("max_outer >= 1");
    Ok(FitResult {
        shape: shape_from_params(pa.model(), &p)?,
        p_final: p,
        l: state.l,
        e: state.e,
        c: state.c,
        mask,
        converged_inner,
        converged_outer,
        outer: outer_records,
        trace,
    })
}

/// Output of [`frontalize`].
#[derive(Debug, Clone)]
pub struct Frontalized {
    /// Low-rank texture cropped to the bounding box of valid pixels.
    pub frontal: Texture,
    /// Full-frame low-rank texture.
    pub full: Texture,
    /// `(x0, y0, width, height)` of the crop within the frame.
    pub crop: (usize, usize, usize, usize),
    pub fit: FitResult,
}

/// Fit, then rerun one outer pass at the final warp with `dp` held fixed;
/// the resulting low-rank texture is the frontal reconstruction.
pub fn frontalize(
    image: &Texture,
    init_shape: &Shape,
    pa: &PiecewiseAffine,
    basis: &AppearanceBasis,
    cfg: &SolverConfig,
) -> Result<Frontalized> {
    let mut fit_result = fit(image, init_shape, pa, basis, cfg)?;
    let lin = linearize(&normalize_min_max(image), pa, &fit_result.p_final)?;
    let outer = fit_result.outer.len();
    let state = inner_solve(
        &lin.warped.x,
        &lin.warped.mask,
        &lin.jacobian,
        basis,
        cfg,
        DpMode::Frozen,
    )
    .map_err(|e| attach_outer(e, outer, &fit_result.trace))?;
    fit_result.trace.extend(outer, &state.records);
    fit_result.converged_inner.push(state.converged);
    fit_result.outer.push(OuterRecord {
        outer,
        objective: state.objective(cfg.lambda),
        inner_iterations: state.t,
        inner_converged: state.converged,
        dp_frozen: true,
        dp_max: 0.0,
    });

    let frame = basis.frame();
    let mask = &lin.warped.mask;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let (x, y) = frame.coords(i);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if x0 == usize::MAX {
        return Err(Error::Empty("frontalized texture has no valid pixels"));
    }
    let crop = (x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    let frontal = state.l.view((y0, x0), (crop.3, crop.2)).into_owned();
    fit_result.l = state.l.clone();
    fit_result.e = state.e;
    fit_result.c = state.c;
    fit_result.mask = lin.warped.mask;
    Ok(Frontalized {
        frontal,
        full: state.l,
        crop,
        fit: fit_result,
    })
}
