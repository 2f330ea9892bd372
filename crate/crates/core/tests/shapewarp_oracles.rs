use far_core::numlin::Vector;
use far_core::shapewarp::{
    build_shape_model_with_fill, delaunay, linearize, sample, shape_from_params,
    steepest_descent_images, warp_texture, Frame, PiecewiseAffine, Shape, Texture, WarpParams,
};
use far_core::synth::{blur, face_template, mean_pattern, training_shapes};
use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn face_warp(frame: Frame) -> PiecewiseAffine {
    let model = build_shape_model_with_fill(&training_shapes(5, 40), 3, frame, 0.75).unwrap();
    PiecewiseAffine::from_model(model).unwrap()
}

fn smooth_image(rng: &mut ChaCha8Rng, frame: Frame) -> Texture {
    let noise = Texture::from_fn(frame.height, frame.width, |_, _| rng.gen_range(0.0..1.0));
    blur(&noise, 3.0)
}

fn random_params(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> WarpParams {
    WarpParams(Vector::from_fn(n, |_, _| rng.gen_range(-spread..spread)))
}

#[test]
fn jacobian_matches_central_differences() {
    let frame = Frame::new(40, 40);
    let pa = face_warp(frame);
    let n = pa.model().n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-3;
    for _draw in 0..20 {
        let image = smooth_image(&mut rng, frame);
        let p = random_params(&mut rng, n, 6.0);
        let lin = linearize(&image, &pa, &p).unwrap();
        assert_eq!(
            lin.jacobian,
            steepest_descent_images(&image, &pa, &p).unwrap()
        );
        for j in 0..n {
            let mut plus = p.clone();
            plus.0[j] += h;
            let mut minus = p.clone();
            minus.0[j] -= h;
            let wp =
                warp_texture(&image, &shape_from_params(pa.model(), &plus).unwrap(), &pa).unwrap();
            let wm =
                warp_texture(&image, &shape_from_params(pa.model(), &minus).unwrap(), &pa).unwrap();
            let (mut diff, mut norm) = (0.0, 0.0);
            for i in 0..frame.len() {
                if lin.warped.mask[i] && wp.mask[i] && wm.mask[i] {
                    let fd = (wp.x[i] - wm.x[i]) / (2.0 * h);
                    diff += (lin.jacobian[(i, j)] - fd).powi(2);
                    norm += fd * fd;
                }
            }
            assert!(norm > 0.0);
            let rel = (diff / norm).sqrt();
            assert!(rel < 1e-3, "column {j}: relative error {rel}");
        }
    }
}

fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let cross = |o: Point2<f64>, a: Point2<f64>, b: Point2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Point2<f64>> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn shoelace(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        .abs()
}

fn inside_convex(poly: &[Point2<f64>], p: Point2<f64>, margin: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let len = (b - a).norm();
        ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) / len > margin
    })
}

#[test]
fn triangulation_covers_hull_exactly_once() {
    let frame = Frame::new(60, 60);
    let pa = face_warp(frame);
    let mean = pa.model().mean();
    let tri = delaunay(mean).unwrap();
    let hull = convex_hull(&mean.points);

    let area = |t: &[usize; 3]| {
        let (a, b, c) = (mean.points[t[0]], mean.points[t[1]], mean.points[t[2]]);
        0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs()
    };
    let total: f64 = tri.triangles.iter().map(area).sum();
    let hull_area = shoelace(&hull);
    assert!((total - hull_area).abs() < 1e-9 * hull_area);

    let mut checked = 0;
    for y in 0..frame.height {
        for x in 0..frame.width {
            let p = Point2::new(x as f64, y as f64);
            let strict = (0..tri.len())
                .filter(|&t| tri.barycentric(mean, t, p).iter().all(|w| *w > 1e-9))
                .count();
            let loose = (0..tri.len())
                .filter(|&t| tri.barycentric(mean, t, p).iter().all(|w| *w >= -1e-9))
                .count();
            assert!(
                strict <= 1,
                "pixel ({x}, {y}) strictly inside {strict} triangles"
            );
            if inside_convex(&hull, p, 1e-6) {
                assert!(loose >= 1, "hull pixel ({x}, {y}) uncovered");
                checked += 1;
            } else if !inside_convex(&hull, p, -1e-6) {
                assert_eq!(loose, 0, "pixel ({x}, {y}) outside the hull is covered");
            }
        }
    }
    assert!(checked > 500);
    let anchored = pa.hull_mask().iter().filter(|m| **m).count();
    assert!(anchored >= checked);
}

#[test]
fn warp_then_inverse_warp_round_trips() {
    let frame = Frame::new(40, 40);
    let pa = face_warp(frame);
    let reference = mean_pattern(frame);
    let tri = pa.triangulation();
    let mean = pa.model().mean();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let p = random_params(&mut rng, pa.model().n_params(), 4.0);
        let shape = shape_from_params(pa.model(), &p).unwrap();
        // Render an image of the reference texture under `shape`.
        let anchors = tri.anchors(&shape, frame);
        let image = Texture::from_fn(frame.height, frame.width, |y, x| {
            anchors[frame.index(x, y)].map_or(0.0, |a| {
                let t = tri.triangles[a.triangle];
                let (mut sx, mut sy) = (0.0, 0.0);
                for (w, v) in a.bary.iter().zip(t) {
                    sx += w * mean.points[v].x;
                    sy += w * mean.points[v].y;
                }
                sample(&reference, sx, sy).unwrap().value
            })
        });
        let back = warp_texture(&image, &shape, &pa).unwrap();
        let hull = pa.hull_mask();
        let interior = |i: usize| {
            let (x, y) = frame.coords(i);
            (x >= 3 && y >= 3 && x + 3 < frame.width && y + 3 < frame.height)
                && (-3isize..=3).all(|dx| {
                    (-3isize..=3).all(|dy| {
                        hull[frame.index((x as isize + dx) as usize, (y as isize + dy) as usize)]
                    })
                })
        };
        let (mut sum, mut n) = (0.0, 0);
        for i in (0..frame.len()).filter(|&i| interior(i)) {
            assert!(back.mask[i]);
            let (x, y) = frame.coords(i);
            sum += (back.x[i] - reference[(y, x)]).powi(2);
            n += 1;
        }
        assert!(n > 100);
        let rms = (sum / n as f64).sqrt();
        assert!(rms < 0.02, "round-trip RMS {rms}");
    }
}

#[test]
fn identity_params_reproduce_mean_shape() {
    let pa = face_warp(Frame::new(40, 40));
    let model = pa.model();
    let zero = WarpParams::zeros(model.n_params());
    assert_eq!(&shape_from_params(model, &zero).unwrap(), model.mean());
    let p = model.project(model.mean()).unwrap();
    assert!(p.0.amax() < 1e-12);
}

#[test]
fn mismatched_shapes_rejected() {
    let pa = face_warp(Frame::new(40, 40));
    let short = Shape::from_xy(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    assert!(warp_texture(&Texture::zeros(40, 40), &short, &pa).is_err());
    assert!(pa.model().project(&short).is_err());
    assert_eq!(face_template().len(), 68);
}

mod linearity {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn shape_is_affine_in_params(a in prop::collection::vec(-3.0f64..3.0, 7), b in prop::collection::vec(-3.0f64..3.0, 7), t in 0.0f64..1.0) {
            let pa = face_warp(Frame::new(40, 40));
            let model = pa.model();
            let n = model.n_params();
            let pa_ = WarpParams(Vector::from_iterator(n, a.iter().cycle().cloned().take(n)));
            let pb = WarpParams(Vector::from_iterator(n, b.iter().cycle().cloned().take(n)));
            let mix = WarpParams(&pa_.0 * (1.0 - t) + &pb.0 * t);
            let sa = shape_from_params(model, &pa_).unwrap().to_vector();
            let sb = shape_from_params(model, &pb).unwrap().to_vector();
            let sm = shape_from_params(model, &mix).unwrap().to_vector();
            prop_assert!((sm - (sa * (1.0 - t) + sb * t)).amax() < 1e-10);
            let back = model.project(&shape_from_params(model, &mix).unwrap()).unwrap();
            prop_assert!((back.0 - mix.0).amax() < 1e-10);
        }

        #[test]
        fn warp_is_linear_in_intensity(s in -2.0f64..2.0, seed in 0u64..1000) {
            let frame = Frame::new(40, 40);
            let pa = face_warp(frame);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = smooth_image(&mut rng, frame);
            let b = smooth_image(&mut rng, frame);
            let shape = pa.model().mean().translated(0.4, -0.3);
            let wa = warp_texture(&a, &shape, &pa).unwrap();
            let wb = warp_texture(&b, &shape, &pa).unwrap();
            let wab = warp_texture(&(&a + &b * s), &shape, &pa).unwrap();
            prop_assert_eq!(&wab.mask, &wa.mask);
            prop_assert!((wab.x - (wa.x + wb.x * s)).amax() < 1e-12);
        }
    }
}
