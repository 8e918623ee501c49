//! Pinhole camera model and depth back-projection.
//!
//! Camera frame: x right, y down, z forward. Depth is z-depth, so a pixel
//! `(u, v)` with depth `d` lands at `((u - cu) d / fu, (v - cv) d / fv, d)`.

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::morphology::BinaryMask;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Pinhole intrinsics in pixels. Serialized as
/// `{"fu","fv","cu","cv","width","height"}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics<T> {
    #[serde(rename = "fu")]
    pub f_u: T,
    #[serde(rename = "fv")]
    pub f_v: T,
    #[serde(rename = "cu")]
    pub c_u: T,
    #[serde(rename = "cv")]
    pub c_v: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(f_u: T, f_v: T, c_u: T, c_v: T, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            f_u,
            f_v,
            c_u,
            c_v,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_u > T::zero() && self.f_v > T::zero()) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image must be non-empty".into()));
        }
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        if !(self.c_u >= T::zero() && self.c_u < w && self.c_v >= T::zero() && self.c_v < h) {
            return Err(Error::InvalidInput(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn contains_pixel(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    /// Returns `None` for points at or behind the camera plane.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T)> {
        if p.z <= T::zero() {
            return None;
        }
        Some((
            self.f_u * p.x / p.z + self.c_u,
            self.f_v * p.y / p.z + self.c_v,
        ))
    }

    /// Direction of the ray through pixel `(u, v)`, scaled so that `z = 1`.
    pub fn pixel_ray(&self, u: T, v: T) -> Vec3<T> {
        Vec3::new(
            (u - self.c_u) / self.f_u,
            (v - self.c_v) / self.f_v,
            T::one(),
        )
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            f_u: U::lit(self.f_u.to_f64_lossy()),
            f_v: U::lit(self.f_v.to_f64_lossy()),
            c_u: U::lit(self.c_u.to_f64_lossy()),
            c_v: U::lit(self.c_v.to_f64_lossy()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Row-major metric depth raster with per-pixel validity.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    width: u32,
    height: u32,
    values: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Real> DepthMap<T> {
    /// Builds a depth map; non-finite or non-positive values are marked invalid.
    pub fn from_values(width: u32, height: u32, values: Vec<T>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "depth raster has {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        let valid = values
            .iter()
            .map(|d| d.is_finite() && *d > T::zero())
            .collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Depth at `(u, v)`, `None` for invalid pixels.
    pub fn get(&self, u: u32, v: u32) -> Option<T> {
        let i = v as usize * self.width as usize + u as usize;
        if self.valid[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        self.valid[v as usize * self.width as usize + u as usize]
    }

    /// Marks a pixel invalid (used for dropout noise).
    pub fn invalidate(&mut self, u: u32, v: u32) {
        self.valid[v as usize * self.width as usize + u as usize] = false;
    }

    pub fn matches(&self, intr: &CameraIntrinsics<T>) -> bool {
        self.width == intr.width && self.height == intr.height
    }
}

/// Coordinate frame tag carried by every cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Camera,
    GroundAligned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Vec3<T>>,
    frame: Frame,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>, frame: Frame) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite point {p:?}")));
        }
        Ok(Self { points, frame })
    }

    pub fn empty(frame: Frame) -> Self {
        Self {
            points: Vec::new(),
            frame,
        }
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn expect_frame(&self, expected: Frame) -> Result<()> {
        if self.frame == expected {
            Ok(())
        } else {
            Err(Error::FrameMismatch {
                expected,
                found: self.frame,
            })
        }
    }

    /// Rigidly maps every point and retags the cloud. Only frame transforms
    /// should call this.
    pub(crate) fn map_into(&self, frame: Frame, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| f(*p)).collect(),
            frame,
        }
    }
}

/// Back-projects one pixel with z-depth `depth` into the camera frame.
pub fn backproject_pixel<T: Real>(
    u: u32,
    v: u32,
    depth: T,
    intr: &CameraIntrinsics<T>,
) -> Result<Vec3<T>> {
    if !(depth.is_finite() && depth > T::zero()) {
        return Err(Error::InvalidInput(format!(
            "depth must be finite and positive, got {depth:?}"
        )));
    }
    if !intr.contains_pixel(u, v) {
        return Err(Error::InvalidInput(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            intr.width, intr.height
        )));
    }
    Ok(backproject_unchecked(
        T::lit(u as f64),
        T::lit(v as f64),
        depth,
        intr,
    ))
}

#[inline]
pub(crate) fn backproject_unchecked<T: Real>(
    u: T,
    v: T,
    z: T,
    intr: &CameraIntrinsics<T>,
) -> Vec3<T> {
    Vec3::new(
        (u - intr.c_u) * z / intr.f_u,
        (v - intr.c_v) * z / intr.f_v,
        z,
    )
}

/// Unprojects every mask pixel with valid depth, in row-major order.
pub fn unproject_mask<T: Real>(
    depth: &DepthMap<T>,
    mask: &BinaryMask,
    intr: &CameraIntrinsics<T>,
) -> Result<PointCloud<T>> {
    if depth.width() != mask.width() || depth.height() != mask.height() {
        return Err(Error::InvalidInput(format!(
            "mask {}x{} does not match depth {}x{}",
            mask.width(),
            mask.height(),
            depth.width(),
            depth.height()
        )));
    }
    if !depth.matches(intr) {
        return Err(Error::InvalidInput(
            "depth raster does not match intrinsics".into(),
        ));
    }
    let points = mask
        .iter_set()
        .filter_map(|(u, v)| {
            depth
                .get(u, v)
                .map(|z| backproject_unchecked(T::lit(u as f64), T::lit(v as f64), z, intr))
        })
        .collect();
    Ok(PointCloud {
        points,
        frame: Frame::Camera,
    })
}
