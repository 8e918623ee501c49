//! Brute-force oracles for the search losses and 3D IoU, shared by the
//! oracle tests and the acceptance run.

use pl3d_core::boxes::{Bev, OrientedBox3, Provenance};
use pl3d_core::camera::{Frame, PointCloud};
use pl3d_core::eval::iou3d;
use pl3d_core::linalg::Vec3;
use pl3d_core::search::{point_ratio_loss, ray_tracing_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng, near: f64, far: f64) -> OrientedBox3<f64> {
    OrientedBox3::new(
        Bev::new(rng.random_range(-15.0..15.0), rng.random_range(near..far)),
        rng.random_range(0.5..2.0),
        rng.random_range(0.3..3.0),
        rng.random_range(0.3..3.0),
        rng.random_range(0.3..6.0),
        rng.random_range(-3.2..3.2),
        "car",
        Provenance::Coarse,
    )
}

fn corners(b: &OrientedBox3<f64>) -> [(f64, f64); 4] {
    let (c, s) = (b.yaw.cos(), b.yaw.sin());
    let (hl, hw) = (b.length / 2.0, b.width / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, w)| {
        (
            b.center_bev.x + a * c - w * s,
            b.center_bev.z + a * s + w * c,
        )
    })
}

/// Smallest ray parameter where `o + t d` (t >= 0) crosses any rectangle edge.
fn ray_rect_oracle(b: &OrientedBox3<f64>, o: (f64, f64), d: (f64, f64)) -> Option<f64> {
    let k = corners(b);
    let mut best: Option<f64> = None;
    for i in 0..4 {
        let (p, q) = (k[i], k[(i + 1) % 4]);
        let e = (q.0 - p.0, q.1 - p.1);
        let den = d.0 * e.1 - d.1 * e.0;
        if den.abs() < 1e-15 {
            continue;
        }
        let w = (p.0 - o.0, p.1 - o.1);
        let t = (w.0 * e.1 - w.1 * e.0) / den;
        let s = (w.0 * d.1 - w.1 * d.0) / den;
        if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = Some(best.map_or(t, |x: f64| x.min(t)));
        }
    }
    best
}

fn trace_oracle(pts: &[Vec3<f64>], b: &OrientedBox3<f64>, cam: (f64, f64)) -> f64 {
    let mut hits = Vec::new();
    for p in pts {
        let d = (p.x - cam.0, p.z - cam.1);
        if let Some(t) = ray_rect_oracle(b, cam, d) {
            let hit = (cam.0 + t * d.0, cam.1 + t * d.1);
            hits.push(((p.x - hit.0).powi(2) + (p.z - hit.1).powi(2)).sqrt());
        }
    }
    if hits.is_empty() {
        0.0
    } else {
        hits.iter().sum::<f64>() / hits.len() as f64
    }
}

/// Membership through edge half-planes instead of the box's local axes.
fn inside_oracle(p: &Vec3<f64>, b: &OrientedBox3<f64>) -> bool {
    let k = corners(b);
    let tol = 1e-9;
    let bev = (0..4).all(|i| {
        let (a, c) = (k[i], k[(i + 1) % 4]);
        let e = (c.0 - a.0, c.1 - a.1);
        let len = (e.0 * e.0 + e.1 * e.1).sqrt();
        (e.0 * (p.z - a.1) - e.1 * (p.x - a.0)) / len >= -tol
    });
    bev && p.y <= b.y_bottom + tol && p.y >= b.y_bottom - b.height - tol
}

/// Worst absolute deviation of (trace, ratio) from the oracles over
/// `triples` random (cloud, box, camera) draws.
pub fn loss_deviation(triples: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_trace, mut worst_ratio) = (0.0f64, 0.0f64);
    for _ in 0..triples {
        let b = random_box(&mut rng, 4.0, 40.0);
        let n = rng.random_range(1..200);
        let pts: Vec<Vec3<f64>> = (0..n)
            .map(|_| {
                Vec3::new(
                    b.center_bev.x + rng.random_range(-4.0..4.0),
                    b.y_bottom - rng.random_range(-0.5..3.5),
                    b.center_bev.z + rng.random_range(-4.0..4.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts.clone(), Frame::GroundAligned).unwrap();
        let cam = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let trace = ray_tracing_loss(&cloud, &b, Bev::new(cam.0, cam.1));
        let expected = trace_oracle(&pts, &b, cam);
        worst_trace = worst_trace.max((trace - expected).abs());
        let inside = pts.iter().filter(|p| inside_oracle(p, &b)).count();
        let ratio = point_ratio_loss(&cloud, &b).unwrap();
        worst_ratio = worst_ratio.max((ratio - (1.0 - inside as f64 / n as f64)).abs());
    }
    (worst_trace, worst_ratio)
}

fn monte_carlo_iou(
    a: &OrientedBox3<f64>,
    b: &OrientedBox3<f64>,
    rng: &mut ChaCha8Rng,
    samples: usize,
) -> f64 {
    // Sample a's volume; the fraction inside b estimates |a ∩ b| / |a|.
    let (c, s) = (a.yaw.cos(), a.yaw.sin());
    let mut hits = 0usize;
    for _ in 0..samples {
        let u = rng.random_range(-0.5..0.5) * a.length;
        let w = rng.random_range(-0.5..0.5) * a.width;
        let y = a.y_bottom - rng.random::<f64>() * a.height;
        let p = Vec3::new(
            a.center_bev.x + u * c - w * s,
            y,
            a.center_bev.z + u * s + w * c,
        );
        if inside_oracle(&p, b) {
            hits += 1;
        }
    }
    let inter = hits as f64 / samples as f64 * a.volume();
    inter / (a.volume() + b.volume() - inter)
}

/// Worst |iou3d - Monte Carlo| over `pairs` overlapping random pairs.
pub fn iou_deviation(pairs: usize, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = random_box(&mut rng, 10.0, 12.0);
        // Second box overlaps the first most of the time.
        let mut b = random_box(&mut rng, 10.0, 12.0);
        b.center_bev = a.center_bev.add(Bev::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        ));
        b.y_bottom = a.y_bottom + rng.random_range(-1.0..1.0);
        let exact = iou3d(&a, &b);
        let mc = monte_carlo_iou(&a, &b, &mut rng, samples);
        worst = worst.max((exact - mc).abs());
    }
    worst
}
