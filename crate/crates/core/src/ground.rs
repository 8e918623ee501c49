//! Ground-plane fitting and the ground-aligned frame.
//!
//! The ground-aligned frame keeps the camera origin and the y-down
//! convention: after the rotation the fitted ground normal is `-y`, the
//! ground is the plane `y = offset`, and the new `z` axis is the camera's
//! forward axis projected onto the ground.

use crate::camera::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen3, Mat3, Vec3};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Plane `{p : normal·p + offset = 0}` in the camera frame, normal pointing up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane<T> {
    pub normal: Vec3<T>,
    pub offset: T,
    pub inlier_rms: T,
}

impl<T: Real> GroundPlane<T> {
    /// Normalizes and orients `normal` upward (non-negative `-y` component).
    pub fn new(normal: Vec3<T>, offset: T) -> Result<Self> {
        let n = normal
            .normalized()
            .ok_or_else(|| Error::DegenerateGeometry("zero plane normal".into()))?;
        let len = normal.norm();
        let (n, d) = orient_up(n, offset / len);
        Ok(Self {
            normal: n,
            offset: d,
            inlier_rms: T::zero(),
        })
    }

    /// Plane of a camera mounted `height` above level ground, pitched down by
    /// `pitch` (rotation about camera x) with zero roll.
    pub fn from_camera_pose(height: T, pitch: T) -> Self {
        let (s, c) = pitch.sin_cos();
        Self {
            normal: Vec3::new(T::zero(), -c, -s),
            offset: height,
            inlier_rms: T::zero(),
        }
    }

    pub fn signed_distance(&self, p: Vec3<T>) -> T {
        self.normal.dot(p) + self.offset
    }

    /// Angle between two plane normals in radians.
    pub fn normal_angle(&self, other: &Self) -> T {
        let c = self.normal.dot(other.normal).max(-T::one()).min(T::one());
        c.acos()
    }
}

fn orient_up<T: Real>(n: Vec3<T>, d: T) -> (Vec3<T>, T) {
    // Up is -y in the camera frame.
    if -n.y < T::zero()
        || (n.y == T::zero() && (n.z > T::zero() || (n.z == T::zero() && n.x < T::zero())))
    {
        (-n, -d)
    } else {
        (n, d)
    }
}

/// Estimator used by [`fit_ground_plane_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundFitMethod {
    /// Orthogonal (total) least squares.
    #[default]
    Tls,
    /// Ordinary least squares on the vertical coordinate, `y = a x + b z + c`.
    Ols,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundFitOptions {
    pub method: GroundFitMethod,
    /// Residuals further than this many MADs from the median are rejected
    /// before the single refit. Non-positive disables rejection.
    pub mad_factor: f64,
}

impl Default for GroundFitOptions {
    fn default() -> Self {
        Self {
            method: GroundFitMethod::Tls,
            mad_factor: 3.0,
        }
    }
}

/// Total least squares with one MAD outlier-rejection pass.
pub fn fit_ground_plane<T: Real>(ground_points: &PointCloud<T>) -> Result<GroundPlane<T>> {
    fit_ground_plane_with(ground_points, &GroundFitOptions::default())
}

pub fn fit_ground_plane_with<T: Real>(
    ground_points: &PointCloud<T>,
    opts: &GroundFitOptions,
) -> Result<GroundPlane<T>> {
    let pts = ground_points.points();
    if pts.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "ground fit needs at least 3 points, got {}",
            pts.len()
        )));
    }
    let first = fit_points(pts, opts.method)?;
    if opts.mad_factor <= 0.0 {
        return Ok(with_rms(first, pts));
    }
    // A single gross outlier can capture the orthogonal fit (its normal turns
    // in-plane). Rejection therefore starts from whichever of the orthogonal
    // and vertical fits has the smaller median absolute residual.
    let mut seed = first;
    let seed_score = median_abs_residual(&first, pts);
    let alt_method = match opts.method {
        GroundFitMethod::Tls => GroundFitMethod::Ols,
        GroundFitMethod::Ols => GroundFitMethod::Tls,
    };
    if let Ok(alt) = fit_points(pts, alt_method) {
        let s = median_abs_residual(&alt, pts);
        if s < seed_score {
            seed = alt;
        }
    }
    let residuals: Vec<T> = pts.iter().map(|p| seed.signed_distance(*p)).collect();
    let med = median(residuals.clone());
    let mad = median(residuals.iter().map(|r| (*r - med).abs()).collect());
    let limit = T::lit(opts.mad_factor) * mad + T::GEOM_EPS;
    let inliers: Vec<Vec3<T>> = pts
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| (**r - med).abs() <= limit)
        .map(|(p, _)| *p)
        .collect();
    if inliers.len() == pts.len() {
        return Ok(with_rms(first, pts));
    }
    match fit_points(&inliers, opts.method) {
        Ok(plane) => Ok(with_rms(plane, &inliers)),
        // Rejection left a degenerate set; keep the unrejected fit.
        Err(_) => Ok(with_rms(first, pts)),
    }
}

fn with_rms<T: Real>(mut plane: GroundPlane<T>, pts: &[Vec3<T>]) -> GroundPlane<T> {
    let ss = pts.iter().fold(T::zero(), |acc, p| {
        let r = plane.signed_distance(*p);
        acc + r * r
    });
    plane.inlier_rms = (ss / T::lit(pts.len() as f64)).sqrt();
    plane
}

fn median_abs_residual<T: Real>(plane: &GroundPlane<T>, pts: &[Vec3<T>]) -> T {
    median(
        pts.iter()
            .map(|p| plane.signed_distance(*p).abs())
            .collect(),
    )
}

fn median<T: Real>(mut v: Vec<T>) -> T {
    let cmp = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
    let n = v.len();
    let (lower, hi, _) = v.select_nth_unstable_by(n / 2, cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = lower
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| a.max(b));
        (lo + hi) * T::lit(0.5)
    }
}

fn centroid<T: Real>(pts: &[Vec3<T>]) -> Vec3<T> {
    let sum = pts.iter().fold(Vec3::zero(), |acc, p| acc + *p);
    sum.scale(T::one() / T::lit(pts.len() as f64))
}

fn fit_points<T: Real>(pts: &[Vec3<T>], method: GroundFitMethod) -> Result<GroundPlane<T>> {
    if pts.len() < 3 {
        return Err(Error::DegenerateGeometry("fewer than 3 points".into()));
    }
    let c = centroid(pts);
    let mut cov = Mat3 {
        m: [[T::zero(); 3]; 3],
    };
    for p in pts {
        let d = (*p - c).to_array();
        for i in 0..3 {
            for j in 0..3 {
                cov.m[i][j] = cov.m[i][j] + d[i] * d[j];
            }
        }
    }
    let (vals, vecs) = symmetric_eigen3(&cov);
    // Rank check: the two in-plane directions must both carry spread.
    let tol = T::epsilon().sqrt() * vals[2].abs().max(T::min_positive_value());
    if vals[1] <= tol {
        return Err(Error::DegenerateGeometry(
            "ground points are collinear or coincident".into(),
        ));
    }
    let normal = match method {
        GroundFitMethod::Tls => vecs[0],
        GroundFitMethod::Ols => ols_normal(&cov)?,
    };
    let (n, d) = orient_up(normal, -normal.dot(c));
    Ok(GroundPlane {
        normal: n,
        offset: d,
        inlier_rms: T::zero(),
    })
}

/// Normal of the least-squares fit `y = a x + b z + c` from the centered
/// scatter matrix.
fn ols_normal<T: Real>(cov: &Mat3<T>) -> Result<Vec3<T>> {
    let (sxx, sxz, szz) = (cov.m[0][0], cov.m[0][2], cov.m[2][2]);
    let (sxy, szy) = (cov.m[0][1], cov.m[2][1]);
    let det = sxx * szz - sxz * sxz;
    if det.abs() <= T::epsilon() * (sxx * szz).abs().max(T::min_positive_value()) {
        return Err(Error::DegenerateGeometry(
            "vertical least squares is rank deficient".into(),
        ));
    }
    let a = (sxy * szz - szy * sxz) / det;
    let b = (szy * sxx - sxy * sxz) / det;
    Vec3::new(a, -T::one(), b)
        .normalized()
        .ok_or_else(|| Error::DegenerateGeometry("zero normal".into()))
}

/// Rotation taking camera coordinates to ground-aligned coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundAlignedFrame<T> {
    pub rotation: Mat3<T>,
}

impl<T: Real> GroundAlignedFrame<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
        }
    }

    pub fn to_ground(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p)
    }

    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p)
    }
}

/// Heading-preserving rotation sending the plane normal to `-y`.
pub fn build_ground_frame<T: Real>(plane: &GroundPlane<T>) -> GroundAlignedFrame<T> {
    let up = plane.normal;
    let down = -up;
    let project = |v: Vec3<T>| v - up.scale(up.dot(v));
    let ez = Vec3::new(T::zero(), T::zero(), T::one());
    // Camera looking along the normal has no heading; fall back to -y (camera up)
    // projected, which is then horizontal-forward for a downward-looking camera.
    let forward = project(ez)
        .normalized()
        .or_else(|| project(Vec3::new(T::zero(), -T::one(), T::zero())).normalized())
        .unwrap_or_else(|| Vec3::new(T::zero(), T::zero(), T::one()));
    let right = down.cross(forward);
    GroundAlignedFrame {
        rotation: Mat3::from_rows(right, down, forward),
    }
}

/// Re-expresses a camera-frame cloud in the ground-aligned frame.
pub fn to_ground_frame<T: Real>(
    cloud: &PointCloud<T>,
    frame: &GroundAlignedFrame<T>,
) -> Result<PointCloud<T>> {
    cloud.expect_frame(Frame::Camera)?;
    Ok(cloud.map_into(Frame::GroundAligned, |p| frame.to_ground(p)))
}
