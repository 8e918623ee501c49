//! Randomized invariant suites shared by the property tests and the
//! acceptance run.

use pl3d_core::boxes::Bev;
use pl3d_core::boxes::{
    estimate_yaw_histogram, estimate_yaw_pca, fit_tight_box, HistogramOptions, OrientedBox3,
    Provenance,
};
use pl3d_core::camera::{
    backproject_pixel, unproject_mask, CameraIntrinsics, DepthMap, Frame, PointCloud,
};
use pl3d_core::eval::{compute_ap, iou3d, EvalBox, EvalConfig};
use pl3d_core::ground::{fit_ground_plane, GroundPlane};
use pl3d_core::linalg::Vec3;
use pl3d_core::morphology::{erode, erode_once, BinaryMask, ErosionPolicy};
use pl3d_core::priors::{DimensionPrior, PriorSource};
use pl3d_core::scalar::wrap_half_pi;
use pl3d_core::search::{gate_box, point_ratio_loss, ray_tracing_loss, GateThresholds};
use proptest::prelude::*;
use proptest::test_runner::{RngAlgorithm, TestRng, TestRunner};
use std::f64::consts::PI;

pub type Outcome = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    // Fixed seed: a rerun explores the same cases.
    let config = ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]))
}

fn mask_strategy(max: u32) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(proptest::bool::weighted(0.7), (w * h) as usize)
            .prop_map(move |d| BinaryMask::from_vec(w, h, d).unwrap())
    })
}

fn ground_cloud(points: Vec<Vec3<f64>>) -> PointCloud<f64> {
    PointCloud::new(points, Frame::GroundAligned).unwrap()
}

/// Points spread along a random heading, clearly longer than wide.
fn elongated_cloud() -> impl Strategy<Value = (Vec<Vec3<f64>>, f64)> {
    (
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.5), 8..60),
        -PI / 2.0..PI / 2.0,
        1.0f64..5.0,
        0.2f64..0.45,
        (-30.0f64..30.0, 5.0f64..40.0),
    )
        .prop_map(|(raw, yaw, l, ratio, (cx, cz))| {
            let (c, s) = (yaw.cos(), yaw.sin());
            let pts = raw
                .into_iter()
                .map(|(a, b, y)| {
                    let (a, b) = (a * l, b * l * ratio);
                    Vec3::new(cx + a * c - b * s, y, cz + a * s + b * c)
                })
                .collect();
            (pts, yaw)
        })
}

fn rotate_y(p: Vec3<f64>, phi: f64, pivot: (f64, f64)) -> Vec3<f64> {
    // Positive phi turns +x towards +z, matching yaw = atan2(z, x).
    let (c, s) = (phi.cos(), phi.sin());
    let (dx, dz) = (p.x - pivot.0, p.z - pivot.1);
    Vec3::new(pivot.0 + dx * c - dz * s, p.y, pivot.1 + dx * s + dz * c)
}

fn angle_mod_pi(a: f64, b: f64) -> f64 {
    wrap_half_pi(a - b).abs()
}

fn random_box() -> impl Strategy<Value = OrientedBox3<f64>> {
    (
        -20.0f64..20.0,
        2.0f64..40.0,
        -2.0f64..2.0,
        0.2f64..3.0,
        0.2f64..3.0,
        0.2f64..6.0,
        -PI..PI,
    )
        .prop_map(|(x, z, yb, w, h, l, yaw)| {
            OrientedBox3::new(Bev::new(x, z), yb, w, h, l, yaw, "car", Provenance::Coarse)
        })
}

pub fn erosion_is_anti_extensive(cases: u32) -> Outcome {
    runner(cases)
        .run(&(mask_strategy(24), 0u32..4), |(m, k)| {
            prop_assert!(erode(&m, k).is_subset_of(&m));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn erosion_is_monotone(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(
                mask_strategy(24),
                proptest::collection::vec(any::<bool>(), 576),
            ),
            |(b, drop)| {
                let mut a = b.clone();
                for (i, (u, v)) in b.iter_set().collect::<Vec<_>>().into_iter().enumerate() {
                    if drop[i % drop.len()] {
                        a.set(u, v, false);
                    }
                }
                prop_assert!(a.is_subset_of(&b));
                for k in 0..3 {
                    prop_assert!(erode(&a, k).is_subset_of(&erode(&b, k)));
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn repeated_erosion_matches_grown_element(cases: u32) -> Outcome {
    runner(cases)
        .run(&(mask_strategy(16), 1u32..4), |(m, k)| {
            // k passes of a 3x3 element equal one pass of a (2k+1)^2 element;
            // outside the raster counts as background.
            let r = k as i64;
            let got = erode(&m, k);
            for v in 0..m.height() {
                for u in 0..m.width() {
                    let mut all = true;
                    for dv in -r..=r {
                        for du in -r..=r {
                            let (x, y) = (u as i64 + du, v as i64 + dv);
                            let inside =
                                x >= 0 && y >= 0 && x < m.width() as i64 && y < m.height() as i64;
                            all &= inside && m.get(x as u32, y as u32);
                        }
                    }
                    prop_assert_eq!(got.get(u, v), all);
                }
            }
            prop_assert_eq!(erode(&m, 1), erode_once(&m));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn narrow_masks_never_get_more_passes(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(1u32..200, 0u32..8, 0u32..8, 1u32..400, 1u32..400),
            |(t, large, small, w1, w2)| {
                let policy = ErosionPolicy::new(t, large.max(small), small.min(large)).unwrap();
                let (narrow, wide) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
                prop_assert!(policy.passes_for_width(narrow) <= policy.passes_for_width(wide));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn pca_yaw_is_rotation_equivariant(cases: u32) -> Outcome {
    runner(cases)
        .run(&(elongated_cloud(), -PI..PI), |((pts, _), phi)| {
            let cloud = ground_cloud(pts.clone());
            let base = estimate_yaw_pca(&cloud).unwrap();
            let c = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.x, a.1 + p.z));
            let pivot = (c.0 / pts.len() as f64, c.1 / pts.len() as f64);
            let rotated = ground_cloud(pts.iter().map(|p| rotate_y(*p, phi, pivot)).collect());
            let turned = estimate_yaw_pca(&rotated).unwrap();
            prop_assert!(
                angle_mod_pi(turned, base + phi) < 1e-6,
                "{} vs {}",
                turned,
                base + phi
            );
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn yaw_is_scale_invariant(cases: u32) -> Outcome {
    runner(cases)
        .run(&(elongated_cloud(), 0i32..6), |((pts, _), k)| {
            // Powers of two scale without rounding, so both estimators must agree exactly.
            let alpha = 2f64.powi(k - 3);
            let cloud = ground_cloud(pts.clone());
            let scaled = ground_cloud(pts.iter().map(|p| p.scale(alpha)).collect());
            prop_assert_eq!(
                estimate_yaw_pca(&cloud).unwrap(),
                estimate_yaw_pca(&scaled).unwrap()
            );
            let opts = HistogramOptions::default();
            prop_assert_eq!(
                estimate_yaw_histogram(&cloud, &opts).unwrap(),
                estimate_yaw_histogram(&scaled, &opts).unwrap()
            );
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn pca_yaw_is_scale_invariant_for_any_alpha(cases: u32) -> Outcome {
    runner(cases)
        .run(&(elongated_cloud(), 0.01f64..100.0), |((pts, _), alpha)| {
            let a = estimate_yaw_pca(&ground_cloud(pts.clone())).unwrap();
            let b = estimate_yaw_pca(&ground_cloud(pts.iter().map(|p| p.scale(alpha)).collect()))
                .unwrap();
            prop_assert!(angle_mod_pi(a, b) < 1e-9);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn tight_box_contains_and_is_tight(cases: u32) -> Outcome {
    runner(cases)
        .run(&(elongated_cloud(), -PI..PI), |((pts, _), yaw)| {
            let cloud = ground_cloud(pts.clone());
            let b = fit_tight_box(&cloud, yaw, "car").unwrap();
            for p in &pts {
                prop_assert!(b.contains(*p, 1e-9));
            }
            // Shrinking any face by 1 mm drops a point.
            let (u, v) = (b.length_axis(), b.width_axis());
            let shrunk = |axis: Bev<f64>, along_len: bool, sign: f64, vertical: Option<bool>| {
                let mut s = b.clone();
                match vertical {
                    Some(bottom) => {
                        s.height -= 1e-3;
                        if bottom {
                            s.y_bottom -= 1e-3;
                        }
                    }
                    None => {
                        if along_len {
                            s.length -= 1e-3
                        } else {
                            s.width -= 1e-3
                        }
                        s.center_bev = s.center_bev.add(axis.scale(sign * 0.5e-3));
                    }
                }
                s
            };
            let variants = [
                shrunk(u, true, 1.0, None),
                shrunk(u, true, -1.0, None),
                shrunk(v, false, 1.0, None),
                shrunk(v, false, -1.0, None),
                shrunk(u, true, 0.0, Some(true)),
                shrunk(u, true, 0.0, Some(false)),
            ];
            for s in &variants {
                prop_assert!(pts.iter().any(|p| !s.contains(*p, 1e-9)));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn losses_are_bounded_and_rotation_invariant(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(elongated_cloud(), random_box(), -PI..PI),
            |((pts, _), b, phi)| {
                let cloud = ground_cloud(pts.clone());
                let cam = Bev::new(0.0, 0.0);
                let trace = ray_tracing_loss(&cloud, &b, cam);
                let ratio = point_ratio_loss(&cloud, &b).unwrap();
                prop_assert!(trace >= 0.0);
                prop_assert!((0.0..=1.0).contains(&ratio));
                let rc = ground_cloud(pts.iter().map(|p| rotate_y(*p, phi, (0.0, 0.0))).collect());
                let mut rb = b.clone();
                let c = rotate_y(
                    Vec3::new(b.center_bev.x, 0.0, b.center_bev.z),
                    phi,
                    (0.0, 0.0),
                );
                rb.center_bev = Bev::new(c.x, c.z);
                rb.yaw = wrap_half_pi(b.yaw + phi);
                prop_assert!((ray_tracing_loss(&rc, &rb, cam) - trace).abs() < 1e-9);
                prop_assert!((point_ratio_loss(&rc, &rb).unwrap() - ratio).abs() < 1e-9);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn widening_gate_keeps_valid_verdicts(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(
                random_box(),
                (0.2f64..3.0, 0.2f64..3.0, 0.2f64..6.0),
                (0.5f64..0.99, 1.01f64..1.6),
                (0.0f64..0.4, 0.0f64..0.4),
            ),
            |(b, (pw, ph, pl), (t1, t2), (d1, d2))| {
                let prior = DimensionPrior::new("car", pw, ph, pl, PriorSource::Custom).unwrap();
                let narrow = GateThresholds::new(t1, t2).unwrap();
                let wide = GateThresholds::new((t1 - d1).max(0.05), t2 + d2).unwrap();
                if gate_box(&b, &prior, &narrow).unwrap().is_valid() {
                    prop_assert!(gate_box(&b, &prior, &wide).unwrap().is_valid());
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn iou3d_is_symmetric_and_rigid_invariant(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(
                random_box(),
                random_box(),
                -PI..PI,
                (-10.0f64..10.0, -2.0f64..2.0, -10.0f64..10.0),
            ),
            |(a, b, phi, (tx, ty, tz))| {
                let ab = iou3d(&a, &b);
                prop_assert!((ab - iou3d(&b, &a)).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&ab));
                let move_box = |x: &OrientedBox3<f64>| {
                    let mut m = x.clone();
                    let c = rotate_y(
                        Vec3::new(x.center_bev.x, 0.0, x.center_bev.z),
                        phi,
                        (0.0, 0.0),
                    );
                    m.center_bev = Bev::new(c.x + tx, c.z + tz);
                    m.y_bottom += ty;
                    m.yaw = wrap_half_pi(x.yaw + phi);
                    m
                };
                prop_assert!((iou3d(&move_box(&a), &move_box(&b)) - ab).abs() < 1e-9);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn backprojection_round_trips_and_scales(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(
                (
                    100.0f64..2000.0,
                    100.0f64..2000.0,
                    0.0f64..639.0,
                    0.0f64..479.0,
                ),
                (0u32..640, 0u32..480),
                0.1f64..200.0,
                0.01f64..50.0,
            ),
            |((fu, fv, cu, cv), (u, v), d, alpha)| {
                let intr = CameraIntrinsics::new(fu, fv, cu, cv, 640, 480).unwrap();
                let p = backproject_pixel(u, v, d, &intr).unwrap();
                let (pu, pv) = intr.project(p).unwrap();
                prop_assert!((pu - u as f64).abs() < 1e-9 && (pv - v as f64).abs() < 1e-9);
                prop_assert_eq!(p.z, d);
                let q = backproject_pixel(u, v, alpha * d, &intr).unwrap();
                let s = p.scale(alpha);
                prop_assert!((q - s).norm() <= 1e-12 * s.norm().max(1.0));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn unproject_is_the_pointwise_map(cases: u32) -> Outcome {
    let depth_values = proptest::collection::vec(
        prop_oneof![4 => 0.5f64..80.0, 1 => Just(0.0), 1 => Just(f64::NAN)],
        64 * 64,
    );
    runner(cases)
        .run(
            &(mask_strategy(64), depth_values, 50.0f64..500.0),
            |(m, depths, f)| {
                let (w, h) = (m.width(), m.height());
                let intr =
                    CameraIntrinsics::new(f, f, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h)
                        .unwrap();
                let depth =
                    DepthMap::from_values(w, h, depths[..(w * h) as usize].to_vec()).unwrap();
                let cloud = unproject_mask(&depth, &m, &intr).unwrap();
                let mut expected = Vec::new();
                for v in 0..h {
                    for u in 0..w {
                        let z = depths[(v * w + u) as usize];
                        if m.get(u, v) && z.is_finite() && z > 0.0 {
                            expected.push(backproject_pixel(u, v, z, &intr).unwrap());
                        }
                    }
                }
                prop_assert_eq!(cloud.points(), &expected[..]);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn ground_fit_is_scale_consistent(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(
                (-0.3f64..0.3, -0.3f64..0.3),
                0.5f64..5.0,
                proptest::collection::vec((-20.0f64..20.0, 2.0f64..60.0, -0.02f64..0.02), 20..80),
                0.1f64..10.0,
            ),
            |((nx, nz), off, raw, alpha)| {
                let n = Vec3::new(nx, -1.0, nz).normalized().unwrap();
                let truth = GroundPlane::new(n, off).unwrap();
                // Points on the plane n.p + off = 0, with small normal jitter.
                let pts: Vec<Vec3<f64>> = raw
                    .iter()
                    .map(|&(x, z, e)| {
                        let y = -(n.x * x + n.z * z + off) / n.y;
                        Vec3::new(x, y, z) + n.scale(e)
                    })
                    .collect();
                let cam = |p: Vec<Vec3<f64>>| PointCloud::new(p, Frame::Camera).unwrap();
                let a = fit_ground_plane(&cam(pts.clone())).unwrap();
                let b =
                    fit_ground_plane(&cam(pts.iter().map(|p| p.scale(alpha)).collect())).unwrap();
                prop_assert!((a.normal - b.normal).norm() < 1e-9);
                prop_assert!((b.offset - alpha * a.offset).abs() < 1e-9 * alpha.max(1.0) * off);
                prop_assert!(a.normal_angle(&truth) < 0.05);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn ap_is_monotone(cases: u32) -> Outcome {
    runner(cases)
        .run(
            &(
                proptest::collection::vec((random_box(), 0.0f64..1.0, 0.0f64..0.6), 1..12),
                proptest::collection::vec((random_box(), 0.0f64..1.0), 1..6),
                any::<proptest::sample::Index>(),
            ),
            |(seeds, fps, drop)| {
                let gt: Vec<EvalBox> = seeds
                    .iter()
                    .map(|(b, _, _)| EvalBox {
                        frame: "f".into(),
                        bbox: b.clone(),
                        score: 1.0,
                    })
                    .collect();
                // Each GT gets a perturbed detection; extra boxes far away are false positives.
                let mut preds: Vec<EvalBox> = seeds
                    .iter()
                    .map(|(b, s, shift)| {
                        let mut p = b.clone();
                        p.center_bev = p.center_bev.add(Bev::new(*shift, 0.0));
                        EvalBox {
                            frame: "f".into(),
                            bbox: p,
                            score: *s,
                        }
                    })
                    .collect();
                for (b, s) in &fps {
                    let mut p = b.clone();
                    p.center_bev = p.center_bev.add(Bev::new(500.0, 0.0));
                    preds.push(EvalBox {
                        frame: "f".into(),
                        bbox: p,
                        score: *s,
                    });
                }
                let cfg = EvalConfig::default();
                let full = compute_ap(&preds, &gt, &cfg).unwrap();
                let k = seeds.len() + drop.index(fps.len());
                let mut fewer = preds.clone();
                fewer.remove(k);
                let pruned = compute_ap(&fewer, &gt, &cfg).unwrap();
                prop_assert!(pruned.map >= full.map - 1e-12);
                for aps in full.per_class_threshold_ap.values() {
                    for w in aps.windows(2) {
                        prop_assert!(w[0] >= w[1] - 1e-12);
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub type Suite = (&'static str, fn(u32) -> Outcome);

/// Every suite, by name.
pub const SUITES: &[Suite] = &[
    ("erosion_is_anti_extensive", erosion_is_anti_extensive),
    ("erosion_is_monotone", erosion_is_monotone),
    (
        "repeated_erosion_matches_grown_element",
        repeated_erosion_matches_grown_element,
    ),
    (
        "narrow_masks_never_get_more_passes",
        narrow_masks_never_get_more_passes,
    ),
    (
        "pca_yaw_is_rotation_equivariant",
        pca_yaw_is_rotation_equivariant,
    ),
    ("yaw_is_scale_invariant", yaw_is_scale_invariant),
    (
        "pca_yaw_is_scale_invariant_for_any_alpha",
        pca_yaw_is_scale_invariant_for_any_alpha,
    ),
    (
        "tight_box_contains_and_is_tight",
        tight_box_contains_and_is_tight,
    ),
    (
        "losses_are_bounded_and_rotation_invariant",
        losses_are_bounded_and_rotation_invariant,
    ),
    (
        "widening_gate_keeps_valid_verdicts",
        widening_gate_keeps_valid_verdicts,
    ),
    (
        "iou3d_is_symmetric_and_rigid_invariant",
        iou3d_is_symmetric_and_rigid_invariant,
    ),
    (
        "backprojection_round_trips_and_scales",
        backprojection_round_trips_and_scales,
    ),
    (
        "unproject_is_the_pointwise_map",
        unproject_is_the_pointwise_map,
    ),
    (
        "ground_fit_is_scale_consistent",
        ground_fit_is_scale_consistent,
    ),
    ("ap_is_monotone", ap_is_monotone),
];
