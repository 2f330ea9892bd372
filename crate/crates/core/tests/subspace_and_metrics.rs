use far_core::evalkit::{ced, nuclear_probe, probe_argmin, pt2pt_error, rmse, ErrorIndices};
use far_core::numlin::{orthonormalize, thin_svd, Matrix, Vector};
use far_core::shapewarp::{Frame, Shape, Texture};
use far_core::subspace::{build_basis_from_textures, AppearanceBasis};
use far_core::synth::{face_template, gen_symmetric_texture, gen_textures};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest sine of the principal angles between two orthonormal bases.
fn max_principal_sine(a: &Matrix, b: &Matrix) -> f64 {
    let residual = a - b * b.tr_mul(a);
    thin_svd(&residual).unwrap().singular_values.max()
}

#[test]
fn basis_spans_generating_subspace() {
    let frame = Frame::new(30, 30);
    let f = frame.len();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let q = orthonormalize(
        &Matrix::from_fn(f, 10, |_, _| rng.gen_range(-1.0..1.0)),
        1e-12,
    );
    let centre = Vector::from_element(f, 0.5);
    let textures: Vec<Vector> = (0..60)
        .map(|_| {
            let w = Vector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            &centre + &q * w * 0.3
        })
        .collect();
    assert!(textures
        .iter()
        .all(|t| t.iter().all(|v| (0.0..=1.0).contains(v))));
    let built = build_basis_from_textures(&textures, &vec![true; f], frame, 10).unwrap();
    assert_eq!(built.components, 10);
    let u = built.basis.u();
    assert_eq!(u.ncols(), 11);

    let mut gen_cols: Vec<Vector> = q.column_iter().map(|c| c.into_owned()).collect();
    gen_cols.push(centre);
    let generating = orthonormalize(&Matrix::from_columns(&gen_cols), 1e-12);
    assert_eq!(generating.ncols(), 11);
    let sine = max_principal_sine(&generating, u).max(max_principal_sine(u, &generating));
    assert!(sine.asin() < 1e-6, "principal angle {}", sine.asin());
}

#[test]
fn synthetic_family_rank_oracle() {
    let frame = Frame::new(20, 20);
    let t = gen_textures(3, frame, 50, 10).unwrap();
    let m = Matrix::from_columns(
        &t.iter()
            .map(|x| Vector::from_column_slice(x.as_slice()))
            .collect::<Vec<_>>(),
    );
    let s = thin_svd(&m).unwrap().singular_values;
    let rank = s.iter().filter(|v| **v > 1e-8 * s[0]).count();
    assert_eq!(rank, 11);
    assert_eq!(gen_textures(3, frame, 50, 10).unwrap(), t);
}

#[test]
fn basis_round_trips_through_bytes() {
    let frame = Frame::new(6, 5);
    let f = frame.len();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let textures: Vec<Vector> = (0..8)
        .map(|_| Vector::from_fn(f, |_, _| rng.gen_range(0.0..1.0)))
        .collect();
    let mask: Vec<bool> = (0..f).map(|i| i % 7 != 0).collect();
    let basis = build_basis_from_textures(&textures, &mask, frame, 4)
        .unwrap()
        .basis;
    let bytes = basis.to_bytes();
    let back = AppearanceBasis::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.u(), basis.u());
    for cut in [0, 10, 23, bytes.len() - 1] {
        let err = AppearanceBasis::from_bytes(&bytes[..cut])
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("truncated") || err.contains("mismatch"),
            "{err}"
        );
    }
    let mut flipped = bytes.clone();
    flipped[24] = 7;
    assert!(AppearanceBasis::from_bytes(&flipped)
        .unwrap_err()
        .to_string()
        .contains("mask byte"));
}

fn shape68(f: impl Fn(usize) -> [f64; 2]) -> Shape {
    Shape::from_xy(&(0..68).map(f).collect::<Vec<_>>()).unwrap()
}

#[test]
fn pt2pt_hand_fixtures() {
    let idx = ErrorIndices::default();
    let gt = face_template();
    let iod = (gt.points[36] - gt.points[45]).norm();

    // Uniform shift by a quarter of the eye distance.
    let shifted = gt.translated(0.25 * iod, 0.0);
    assert!((pt2pt_error(&shifted, &gt, &idx).unwrap() - 0.25).abs() < 1e-12);

    // Only the jaw moves: the jaw is not scored.
    let mut jaw = gt.clone();
    for p in jaw.points.iter_mut().take(17) {
        p.x += 100.0;
    }
    assert_eq!(pt2pt_error(&jaw, &gt, &idx).unwrap(), 0.0);

    // One scored point off by 49 units on a grid with eye distance 10.
    let grid = shape68(|i| match i {
        36 => [0.0, 0.0],
        45 => [10.0, 0.0],
        _ => [i as f64, 1.0],
    });
    let mut moved = grid.clone();
    moved.points[30].y += 49.0;
    assert!((pt2pt_error(&moved, &grid, &idx).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn symmetric_textures_minimize_at_zero_shear() {
    let frame = Frame::new(40, 40);
    let levels: Vec<f64> = (-6..=6).map(|i| i as f64 * 0.05).collect();
    for seed in 0..3 {
        let t = gen_symmetric_texture(seed, frame);
        let probe = nuclear_probe(&t, &levels).unwrap();
        assert_eq!(probe_argmin(&probe), Some(0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ced_is_monotone_and_bounded(errors in prop::collection::vec(0.0f64..0.3, 1..50)) {
        let thresholds: Vec<f64> = (1..=30).map(|i| i as f64 * 0.01).collect();
        let c = ced(&errors, &thresholds).unwrap();
        prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.fractions.iter().all(|v| (0.0..=1.0).contains(v)));
        for (t, frac) in thresholds.iter().zip(&c.fractions) {
            let count = errors.iter().filter(|e| *e < t).count();
            prop_assert_eq!(*frac, count as f64 / errors.len() as f64);
        }
    }

    #[test]
    fn pt2pt_is_translation_invariant(dx in -50.0f64..50.0, dy in -50.0f64..50.0, s in 0.5f64..3.0) {
        let idx = ErrorIndices::default();
        let gt = face_template();
        let pred = gt.similarity(1.0, 0.02, 0.3, -0.1);
        let base = pt2pt_error(&pred, &gt, &idx).unwrap();
        let moved = pt2pt_error(&pred.translated(dx, dy), &gt.translated(dx, dy), &idx).unwrap();
        prop_assert!((base - moved).abs() < 1e-9);
        let zoom = |shape: &Shape| Shape::new(shape.points.iter().map(|p| p * s).collect()).unwrap();
        let scaled = pt2pt_error(&zoom(&pred), &zoom(&gt), &idx).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn rmse_is_symmetric_and_zero_on_self(v in prop::collection::vec(0.0f64..1.0, 12), w in prop::collection::vec(0.0f64..1.0, 12)) {
        let a = Texture::from_vec(3, 4, v);
        let b = Texture::from_vec(3, 4, w);
        let mask = vec![true; 12];
        prop_assert_eq!(rmse(&a, &a, &mask).unwrap(), 0.0);
        prop_assert_eq!(rmse(&a, &b, &mask).unwrap(), rmse(&b, &a, &mask).unwrap());
    }
}
