//! Ground-parallel oriented boxes, BEV yaw estimation, and tight fitting.
//!
//! Boxes live in a y-down frame whose horizontal plane is the ground
//! (the ground-aligned frame, or a level camera frame). BEV coordinates are
//! `(x, z)`. Yaw is the angle of the length axis measured from `+x`
//! towards `+z`, canonicalized into `[-pi/2, pi/2)`.

use crate::camera::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen2, Vec3};
use crate::scalar::{wrap_half_pi, Real};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A point in the BEV plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bev<T> {
    pub x: T,
    pub z: T,
}

impl<T: Real> Bev<T> {
    pub const fn new(x: T, z: T) -> Self {
        Self { x, z }
    }

    pub fn of(p: Vec3<T>) -> Self {
        Self { x: p.x, z: p.z }
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.z + o.z)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.z - o.z)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.z * s)
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.z * o.z
    }

    pub fn cross(self, o: Self) -> T {
        self.x * o.z - self.z * o.x
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn unit(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    /// Rotates counter-clockwise (from +x towards +z) by `angle`.
    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.z, s * self.x + c * self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Coarse,
    Searched,
    GroundTruth,
}

/// Ground-parallel 3D box. Vertically it spans `[y_bottom - height, y_bottom]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3<T> {
    pub center_bev: Bev<T>,
    pub y_bottom: T,
    pub width: T,
    pub height: T,
    pub length: T,
    pub yaw: T,
    pub class_name: String,
    pub provenance: Provenance,
}

impl<T: Real> OrientedBox3<T> {
    /// Builds a box and canonicalizes it (length ≥ width, yaw wrapped).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        center_bev: Bev<T>,
        y_bottom: T,
        width: T,
        height: T,
        length: T,
        yaw: T,
        class_name: impl Into<String>,
        provenance: Provenance,
    ) -> Self {
        let mut b = Self {
            center_bev,
            y_bottom,
            width,
            height,
            length,
            yaw,
            class_name: class_name.into(),
            provenance,
        };
        b.canonicalize();
        b
    }

    /// Swaps BEV dims so that `length >= width` and wraps yaw.
    pub fn canonicalize(&mut self) {
        if self.width > self.length {
            std::mem::swap(&mut self.width, &mut self.length);
            self.yaw = self.yaw + T::FRAC_PI_2();
        }
        self.yaw = wrap_half_pi(self.yaw);
    }

    pub fn y_top(&self) -> T {
        self.y_bottom - self.height
    }

    pub fn volume(&self) -> T {
        self.width * self.height * self.length
    }

    pub fn length_axis(&self) -> Bev<T> {
        Bev::unit(self.yaw)
    }

    pub fn width_axis(&self) -> Bev<T> {
        Bev::unit(self.yaw + T::FRAC_PI_2())
    }

    /// BEV corners, counter-clockwise: (+l,+w), (-l,+w), (-l,-w), (+l,-w)
    /// in half-extents along the length and width axes.
    pub fn corners_bev(&self) -> [Bev<T>; 4] {
        let half = T::lit(0.5);
        let u = self.length_axis().scale(self.length * half);
        let v = self.width_axis().scale(self.width * half);
        let c = self.center_bev;
        [
            c.add(u).add(v),
            c.sub(u).add(v),
            c.sub(u).sub(v),
            c.add(u).sub(v),
        ]
    }

    /// Coordinates of a BEV point along the (length, width) axes, relative
    /// to the center.
    pub fn local_bev(&self, p: Bev<T>) -> (T, T) {
        let d = p.sub(self.center_bev);
        (d.dot(self.length_axis()), d.dot(self.width_axis()))
    }

    /// Closed containment test with absolute slack `tol`.
    pub fn contains(&self, p: Vec3<T>, tol: T) -> bool {
        let half = T::lit(0.5);
        let (a, b) = self.local_bev(Bev::of(p));
        a.abs() <= self.length * half + tol
            && b.abs() <= self.width * half + tol
            && p.y <= self.y_bottom + tol
            && p.y >= self.y_top() - tol
    }

    pub fn cast<U: Real>(&self) -> OrientedBox3<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        OrientedBox3 {
            center_bev: Bev::new(c(self.center_bev.x), c(self.center_bev.z)),
            y_bottom: c(self.y_bottom),
            width: c(self.width),
            height: c(self.height),
            length: c(self.length),
            yaw: c(self.yaw),
            class_name: self.class_name.clone(),
            provenance: self.provenance,
        }
    }
}

/// Yaw of the principal axis of the BEV covariance.
///
/// Isotropic spread is reported as the camera-forward heading (`-pi/2`).
pub fn estimate_yaw_pca<T: Real>(cloud: &PointCloud<T>) -> Result<T> {
    cloud.expect_frame(Frame::GroundAligned)?;
    let pts = cloud.points();
    if pts.len() < 2 {
        return Err(Error::DegenerateGeometry(
            "PCA yaw needs at least 2 points".into(),
        ));
    }
    let n = T::lit(pts.len() as f64);
    let (sx, sz) = pts
        .iter()
        .fold((T::zero(), T::zero()), |(a, b), p| (a + p.x, b + p.z));
    let (mx, mz) = (sx / n, sz / n);
    let (mut cxx, mut cxz, mut czz) = (T::zero(), T::zero(), T::zero());
    for p in pts {
        let (dx, dz) = (p.x - mx, p.z - mz);
        cxx = cxx + dx * dx;
        cxz = cxz + dx * dz;
        czz = czz + dz * dz;
    }
    let (l_max, l_min, (ux, uz)) = symmetric_eigen2(cxx / n, cxz / n, czz / n);
    let spread = pts
        .iter()
        .fold(T::zero(), |acc, p| acc.max(p.x.abs()).max(p.z.abs()));
    if l_max <= T::epsilon() * T::epsilon() * spread * spread || l_max == T::zero() {
        return Err(Error::DegenerateGeometry("points coincide in BEV".into()));
    }
    if l_max - l_min <= T::lit(1e-12) * l_max {
        return Ok(wrap_half_pi(T::FRAC_PI_2()));
    }
    Ok(wrap_half_pi(uz.atan2(ux)))
}

/// Histogram-of-pair-directions options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramOptions {
    pub bin_width: f64,
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for HistogramOptions {
    fn default() -> Self {
        Self {
            bin_width: 1f64.to_radians(),
            max_pairs: 2_000_000,
            seed: 0x5EED,
        }
    }
}

/// Maps a linear index in `[0, n(n-1)/2)` to the pair `(i, j)`, `i < j`,
/// enumerated row by row.
fn pair_from_index(k: usize, n: usize) -> (usize, usize) {
    // Row i starts at i*(2n - i - 1)/2.
    let start = |i: usize| i * (2 * n - i - 1) / 2;
    let nf = n as f64;
    let kf = k as f64;
    let disc = (2.0 * nf - 1.0) * (2.0 * nf - 1.0) - 8.0 * kf;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor() as usize;
    i = i.min(n - 2);
    while i > 0 && start(i) > k {
        i -= 1;
    }
    while i + 1 < n - 1 && start(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + (k - start(i)))
}

/// Yaw as the center of the fullest bin of pair directions (mod pi).
///
/// With more than `max_pairs` pairs, `max_pairs` distinct pairs are drawn
/// uniformly from a ChaCha stream seeded with `opts.seed`.
pub fn estimate_yaw_histogram<T: Real>(
    cloud: &PointCloud<T>,
    opts: &HistogramOptions,
) -> Result<T> {
    cloud.expect_frame(Frame::GroundAligned)?;
    let pts = cloud.points();
    let n = pts.len();
    if n < 2 {
        return Err(Error::DegenerateGeometry(
            "histogram yaw needs at least 2 points".into(),
        ));
    }
    if !(opts.bin_width > 0.0 && opts.bin_width <= std::f64::consts::PI) {
        return Err(Error::InvalidInput(format!(
            "bad histogram bin width {}",
            opts.bin_width
        )));
    }
    let nbins = (std::f64::consts::PI / opts.bin_width).ceil() as usize;
    let bw = T::lit(opts.bin_width);
    let half_pi = T::FRAC_PI_2();
    let mut bins = vec![0u64; nbins];
    let mut counted = 0u64;
    let mut vote = |i: usize, j: usize| {
        let (dx, dz) = (pts[j].x - pts[i].x, pts[j].z - pts[i].z);
        if dx == T::zero() && dz == T::zero() {
            return;
        }
        let theta = wrap_half_pi(dz.atan2(dx));
        let b = ((theta + half_pi) / bw)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(nbins - 1);
        bins[b] += 1;
        counted += 1;
    };
    let total = n * (n - 1) / 2;
    if total <= opts.max_pairs.max(1) {
        for i in 0..n {
            for j in i + 1..n {
                vote(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picks = rand::seq::index::sample(&mut rng, total, opts.max_pairs.max(1)).into_vec();
        picks.sort_unstable();
        for k in picks {
            let (i, j) = pair_from_index(k, n);
            vote(i, j);
        }
    }
    if counted == 0 {
        return Err(Error::DegenerateGeometry("points coincide in BEV".into()));
    }
    let best = bins
        .iter()
        .enumerate()
        .fold(
            (0usize, 0u64),
            |acc, (i, c)| if *c > acc.1 { (i, *c) } else { acc },
        )
        .0;
    Ok(wrap_half_pi(
        -half_pi + bw * (T::lit(best as f64) + T::lit(0.5)),
    ))
}

/// Smallest box at heading `yaw` enclosing every point of the cloud.
/// Zero extents are clamped to [`Real::MIN_EXTENT`].
pub fn fit_tight_box<T: Real>(
    cloud: &PointCloud<T>,
    yaw: T,
    class_name: &str,
) -> Result<OrientedBox3<T>> {
    cloud.expect_frame(Frame::GroundAligned)?;
    let pts = cloud.points();
    let Some(first) = pts.first() else {
        return Err(Error::InvalidInput(
            "cannot fit a box to an empty cloud".into(),
        ));
    };
    let u = Bev::unit(yaw);
    let v = Bev::unit(yaw + T::FRAC_PI_2());
    let p0 = Bev::of(*first);
    let (mut a_lo, mut a_hi) = (p0.dot(u), p0.dot(u));
    let (mut b_lo, mut b_hi) = (p0.dot(v), p0.dot(v));
    let (mut y_lo, mut y_hi) = (first.y, first.y);
    for p in &pts[1..] {
        let q = Bev::of(*p);
        let (a, b) = (q.dot(u), q.dot(v));
        a_lo = a_lo.min(a);
        a_hi = a_hi.max(a);
        b_lo = b_lo.min(b);
        b_hi = b_hi.max(b);
        y_lo = y_lo.min(p.y);
        y_hi = y_hi.max(p.y);
    }
    let half = T::lit(0.5);
    let center = u
        .scale((a_lo + a_hi) * half)
        .add(v.scale((b_lo + b_hi) * half));
    let eps = T::MIN_EXTENT;
    let mut b = OrientedBox3 {
        center_bev: center,
        y_bottom: y_hi,
        width: (b_hi - b_lo).max(eps),
        height: (y_hi - y_lo).max(eps),
        length: (a_hi - a_lo).max(eps),
        yaw,
        class_name: class_name.to_string(),
        provenance: Provenance::Coarse,
    };
    if y_hi - y_lo < eps {
        // Keep the single layer centered in the clamped slab.
        b.y_bottom = y_hi + eps * half;
    }
    b.canonicalize();
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn ground(points: Vec<Vec3<f64>>) -> PointCloud<f64> {
        PointCloud::new(points, Frame::GroundAligned).unwrap()
    }

    #[test]
    fn pca_on_diagonal_line() {
        let c = ground(
            (0..10)
                .map(|i| Vec3::new(i as f64, 0.0, i as f64))
                .collect(),
        );
        assert!((estimate_yaw_pca(&c).unwrap() - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn pca_long_side_along_z_wraps_to_lower_bound() {
        let mut pts = Vec::new();
        for i in 0..=10 {
            for j in 0..=4 {
                pts.push(Vec3::new(j as f64 * 0.45 - 0.9, 1.0, i as f64 * 0.45));
            }
        }
        let yaw = estimate_yaw_pca(&ground(pts)).unwrap();
        assert!((yaw + FRAC_PI_2).abs() < 1e-9, "{yaw}");
    }

    #[test]
    fn pca_isotropic_tiebreak_and_degenerate() {
        let square = ground(vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ]);
        assert_eq!(estimate_yaw_pca(&square).unwrap(), -FRAC_PI_2);
        let same = ground(vec![Vec3::new(1.0, 0.0, 2.0), Vec3::new(1.0, 5.0, 2.0)]);
        assert!(matches!(
            estimate_yaw_pca(&same),
            Err(Error::DegenerateGeometry(_))
        ));
        let cam =
            PointCloud::new(vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)], Frame::Camera).unwrap();
        assert!(matches!(
            estimate_yaw_pca(&cam),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn histogram_two_points_snap_to_bin_center() {
        let c = ground(vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.3)]);
        let opts = HistogramOptions::default();
        let yaw = estimate_yaw_histogram(&c, &opts).unwrap();
        let theta = 0.3f64.atan2(1.0);
        let bin = ((theta + FRAC_PI_2) / opts.bin_width).floor();
        let center = -FRAC_PI_2 + (bin + 0.5) * opts.bin_width;
        assert!((yaw - center).abs() < 1e-12);
        assert!((yaw - theta).abs() <= opts.bin_width / 2.0);
    }

    #[test]
    fn pair_index_roundtrip() {
        for n in 2..30usize {
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(pair_from_index(k, n), (i, j), "n={n} k={k}");
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn histogram_subsampling_is_seeded() {
        let pts: Vec<_> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.7;
                Vec3::new(t.cos() * (1.0 + 0.001 * i as f64), 0.0, t.sin())
            })
            .collect();
        let c = ground(pts);
        let opts = HistogramOptions {
            max_pairs: 5000,
            ..Default::default()
        };
        let a = estimate_yaw_histogram(&c, &opts).unwrap();
        let b = estimate_yaw_histogram(&c, &opts).unwrap();
        assert_eq!(a, b);
        assert!((-FRAC_PI_2..FRAC_PI_2).contains(&a));
    }

    #[test]
    fn tight_box_single_point() {
        let b = fit_tight_box(&ground(vec![Vec3::new(1.0, 2.0, 3.0)]), 0.0, "x").unwrap();
        assert_eq!(b.width, 1e-6);
        assert_eq!(b.length, 1e-6);
        assert_eq!(b.height, 1e-6);
        assert!(b.contains(Vec3::new(1.0, 2.0, 3.0), 0.0));
    }

    fn cube_corners() -> Vec<Vec3<f64>> {
        let mut pts = Vec::new();
        for x in [-0.5, 0.5] {
            for y in [-0.5, 0.5] {
                for z in [-0.5, 0.5] {
                    pts.push(Vec3::new(x + 2.0, y, z + 7.0));
                }
            }
        }
        pts
    }

    #[test]
    fn tight_box_unit_cube() {
        let b = fit_tight_box(&ground(cube_corners()), 0.0, "box").unwrap();
        for d in [b.width, b.height, b.length] {
            assert!((d - 1.0).abs() < 1e-12);
        }
        assert!((b.center_bev.x - 2.0).abs() < 1e-12 && (b.center_bev.z - 7.0).abs() < 1e-12);
        assert_eq!(b.y_bottom, 0.5);
        assert_eq!(b.provenance, Provenance::Coarse);
    }

    #[test]
    fn tight_box_cube_at_45_degrees() {
        let b = fit_tight_box(&ground(cube_corners()), FRAC_PI_4, "box").unwrap();
        assert!((b.width - 2f64.sqrt()).abs() < 1e-12);
        assert!((b.length - 2f64.sqrt()).abs() < 1e-12);
        for p in cube_corners() {
            assert!(b.contains(p, 1e-9));
        }
    }

    #[test]
    fn canonicalization_swaps_dims() {
        let b = OrientedBox3::new(
            Bev::new(0.0, 0.0),
            0.0,
            4.0,
            1.0,
            2.0,
            0.1,
            "c",
            Provenance::Coarse,
        );
        assert_eq!((b.width, b.length), (2.0, 4.0));
        assert!((b.yaw - (0.1 + FRAC_PI_2 - PI)).abs() < 1e-12);
    }

    #[test]
    fn f32_pipeline_instantiation() {
        let pts: Vec<Vec3<f32>> = (0..20)
            .map(|i| Vec3::new(i as f32 * 0.2, 0.0, 1.0))
            .collect();
        let c = PointCloud::new(pts, Frame::GroundAligned).unwrap();
        let yaw = estimate_yaw_pca(&c).unwrap();
        assert!(yaw.abs() < 1e-5);
        let b = fit_tight_box(&c, yaw, "rod").unwrap();
        assert!((b.length - 3.8).abs() < 1e-4);
    }
}
