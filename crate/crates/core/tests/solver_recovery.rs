use far_core::evalkit::rmse;
use far_core::numlin::{nuclear_norm, orthonormalize, Matrix, Vector};
use far_core::shapewarp::{linearize, Frame, WarpParams};
use far_core::solver::{
    fit, frontalize, inner_solve, residual_h1, residual_h2, update_e, update_l, DpMode,
    SolverConfig,
};
use far_core::synth::{gen_instance, scene, InstanceParams, Scene, SynthInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAME: Frame = Frame {
    width: 40,
    height: 40,
};

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// True when no random perturbation of radius `radius` lowers `objective`
/// below its value at `x`.
fn beats_perturbations(x: &Matrix, objective: impl Fn(&Matrix) -> f64, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = objective(x);
    (0..10_000).all(|_| {
        let d = rand_mat(&mut rng, x.nrows(), x.ncols());
        let d = &d * (1e-3 / d.norm());
        objective(&(x + d)) >= base - 1e-12 * base.abs().max(1.0)
    })
}

#[test]
fn l_update_minimizes_its_augmented_lagrangian() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (m, n, k) = (6, 5, 4);
    let u = orthonormalize(&rand_mat(&mut rng, m * n, k), 1e-12);
    let c = Vector::from_fn(k, |_, _| rng.gen_range(-2.0..2.0));
    let b = rand_mat(&mut rng, m, n);
    let mu = 1.7;
    let l = update_l(&u, &c, &b, mu).unwrap().matrix;
    let objective = |cand: &Matrix| {
        let h2 = residual_h2(cand, &u, &c).unwrap();
        nuclear_norm(cand).unwrap() + b.dot(&h2) + 0.5 * mu * h2.norm_squared()
    };
    assert!(beats_perturbations(&l, objective, 1));
}

#[test]
fn e_update_minimizes_its_augmented_lagrangian() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (f, k, vp) = (30, 3, 2);
    let x = Vector::from_fn(f, |_, _| rng.gen_range(-1.0..1.0));
    let jac = rand_mat(&mut rng, f, vp);
    let dp = Vector::from_fn(vp, |_, _| rng.gen_range(-0.5..0.5));
    let u = orthonormalize(&rand_mat(&mut rng, f, k), 1e-12);
    let c = Vector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
    let a = Vector::from_fn(f, |_, _| rng.gen_range(-1.0..1.0));
    let (mu, lambda) = (2.5, 0.3);
    let e = update_e(&x, &jac, &dp, &u, &c, &a, mu, lambda).unwrap();
    assert!(e.iter().any(|v| *v == 0.0) && e.iter().any(|v| *v != 0.0));
    let objective = |cand: &Matrix| {
        let ev = Vector::from_column_slice(cand.as_slice());
        let h1 = residual_h1(&x, &jac, &dp, &u, &c, &ev).unwrap();
        lambda * ev.lp_norm(1) + a.dot(&h1) + 0.5 * mu * h1.norm_squared()
    };
    assert!(beats_perturbations(
        &Matrix::from_column_slice(f, 1, e.as_slice()),
        objective,
        2
    ));
}

fn instance(sc: &Scene, seed: u64, params: InstanceParams) -> SynthInstance {
    gen_instance(sc, seed, &params).unwrap()
}

fn identity_inner(
    sc: &Scene,
    inst: &SynthInstance,
    cfg: &SolverConfig,
) -> far_core::solver::InnerState {
    let p = WarpParams::zeros(sc.pa.model().n_params());
    let lin = linearize(&inst.image, &sc.pa, &p).unwrap();
    inner_solve(
        &lin.warped.x,
        &lin.warped.mask,
        &lin.jacobian,
        &sc.basis,
        cfg,
        DpMode::Frozen,
    )
    .unwrap()
}

#[test]
fn in_span_input_is_reproduced_without_error_term() {
    let sc = scene(100, FRAME, 20).unwrap();
    let cfg = SolverConfig::default();
    let inst = instance(&sc, 1, InstanceParams::default());
    let s = identity_inner(&sc, &inst, &cfg);
    assert!(s.converged);
    assert!(s.e.lp_norm(1) / (FRAME.len() as f64) < 1e-6);
    let rel = (&s.c - &inst.gt_coeffs).norm() / inst.gt_coeffs.norm();
    assert!(rel < 1e-3, "coefficient error {rel}");
}

#[test]
fn sparse_spikes_are_separated_exactly() {
    let cfg = SolverConfig::default();
    for seed in 0..3u64 {
        let sc = scene(100 + seed, FRAME, 20).unwrap();
        let inst = instance(
            &sc,
            seed,
            InstanceParams {
                sparsity: 0.05,
                ..Default::default()
            },
        );
        let s = identity_inner(&sc, &inst, &cfg);
        assert!(s.converged && s.t <= 300, "seed {seed}: {} iterations", s.t);
        let support: Vec<usize> = (0..s.e.len()).filter(|&i| s.e[i].abs() > 1e-9).collect();
        assert_eq!(support, inst.gt_error_support, "seed {seed}");
        for (&i, v) in inst.gt_error_support.iter().zip(&inst.gt_error_values) {
            assert!((s.e[i] - v).abs() < 1e-3);
        }
        let rel = (&s.c - &inst.gt_coeffs).norm() / inst.gt_coeffs.norm();
        assert!(rel < 1e-3, "seed {seed}: coefficient error {rel}");

        let last = s.records.last().unwrap();
        assert!(last.de_rel.max(last.dl_rel) <= cfg.eps2);
        assert!(last.h1_rel.max(last.h2_rel) <= cfg.eps3);
        let mu = s.mu_trace();
        assert!(mu.windows(2).all(|w| w[0] <= w[1]));
        assert!(mu.iter().all(|m| *m <= cfg.mu_max));
    }
}

#[test]
fn penalty_is_capped() {
    let sc = scene(100, FRAME, 8).unwrap();
    let inst = instance(&sc, 0, InstanceParams::default());
    let cfg = SolverConfig {
        mu0: 1.0,
        rho: 2.0,
        mu_max: 1e3,
        max_inner: 40,
        ..Default::default()
    };
    let s = identity_inner(&sc, &inst, &cfg);
    assert!(s.mu_trace().iter().all(|m| *m <= 1e3));
    assert_eq!(s.mu, 1e3);
}

#[test]
fn fit_from_ground_truth_stays_put() {
    let sc = scene(7, FRAME, 20).unwrap();
    let inst = instance(&sc, 3, InstanceParams::default());
    let r = fit(
        &inst.image,
        &inst.gt_shape,
        &sc.pa,
        &sc.basis,
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(r.outer[0].dp_max < 1e-6, "first step {}", r.outer[0].dp_max);
    assert!(r.shape.mean_distance(&inst.gt_shape) < 1e-5);
}

#[test]
fn fit_recovers_translation() {
    let sc = scene(7, FRAME, 20).unwrap();
    let cfg = SolverConfig::default();
    for seed in 0..3u64 {
        let inst = instance(
            &sc,
            seed,
            InstanceParams {
                translation_px: 2.0,
                ..Default::default()
            },
        );
        let init = sc.pa.model().mean();
        assert!(init.mean_distance(&inst.gt_shape) > 1.9);
        let r = fit(&inst.image, init, &sc.pa, &sc.basis, &cfg).unwrap();
        assert!(r.outer.len() <= 20);
        let err = r.shape.mean_distance(&inst.gt_shape);
        assert!(err < 0.5, "seed {seed}: landmark error {err}");
        let again = fit(&inst.image, init, &sc.pa, &sc.basis, &cfg).unwrap();
        assert_eq!(again.p_final, r.p_final);
        assert_eq!(again.trace.to_csv(), r.trace.to_csv());
    }
}

#[test]
fn frontalization_matches_clean_texture() {
    let sc = scene(11, FRAME, 20).unwrap();
    let cfg = SolverConfig::default();
    let clean = instance(&sc, 0, InstanceParams::default());
    let fr = frontalize(&clean.image, sc.pa.model().mean(), &sc.pa, &sc.basis, &cfg).unwrap();
    let mask = &fr.fit.mask;
    let err = rmse(&fr.full, &clean.clean_texture, mask).unwrap();
    assert!(err < 1e-3, "frontal RMS {err}");
    let (x0, y0, w, h) = fr.crop;
    assert_eq!(fr.frontal, fr.full.view((y0, x0), (h, w)).into_owned());
    assert!(fr.fit.outer.last().unwrap().dp_frozen);

    for seed in 1..4u64 {
        let occluded = instance(
            &sc,
            seed,
            InstanceParams {
                sparsity: 0.05,
                ..Default::default()
            },
        );
        let fr = frontalize(
            &occluded.image,
            sc.pa.model().mean(),
            &sc.pa,
            &sc.basis,
            &cfg,
        )
        .unwrap();
        let worst = occluded
            .gt_error_support
            .iter()
            .map(|&i| {
                let (x, y) = FRAME.coords(i);
                (fr.full[(y, x)] - occluded.clean_texture[(y, x)]).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "seed {seed}: spike residue {worst}");
    }
}

#[test]
fn converged_flags_are_truthful() {
    let sc = scene(7, FRAME, 12).unwrap();
    let cfg = SolverConfig::default();
    let inst = instance(
        &sc,
        5,
        InstanceParams {
            translation_px: 1.5,
            rotation_deg: 2.0,
            sparsity: 0.02,
            ..Default::default()
        },
    );
    let r = fit(&inst.image, sc.pa.model().mean(), &sc.pa, &sc.basis, &cfg).unwrap();
    for (o, rec) in r.outer.iter().enumerate() {
        let rows: Vec<_> = r.trace.rows.iter().filter(|t| t.outer == o).collect();
        assert_eq!(rows.len(), rec.inner_iterations);
        let last = rows.last().unwrap().record;
        let ok = last.change_converged(cfg.eps2) && last.feasibility_converged(cfg.eps3);
        assert_eq!(ok, rec.inner_converged);
        assert_eq!(ok, r.converged_inner[o]);
    }
    if r.converged_outer {
        let obj = r.objective_trace();
        let (prev, cur) = (obj[obj.len() - 2], obj[obj.len() - 1]);
        assert!((cur - prev).abs() < cfg.eps1 * prev.max(1.0));
    }
}
