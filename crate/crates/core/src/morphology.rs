//! Binary masks, 3×3 erosion, and the size-adaptive erosion policy.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major binary raster. Out-of-bounds pixels read as background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

/// Inclusive pixel bounds `(u_min, v_min, u_max, v_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.u_max - self.u_min + 1
    }

    pub fn height(&self) -> u32 {
        self.v_max - self.v_min + 1
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "mask has {} pixels, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        u < self.width
            && v < self.height
            && self.data[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    fn get_signed(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && self.get(u as u32, v as u32)
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        let w = self.width as usize;
        self.data[v as usize * w + u as usize] = value;
    }

    pub fn fill(&mut self, value: bool) {
        self.data.iter_mut().for_each(|p| *p = value);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|p| **p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|p| *p)
    }

    /// Set pixels as `(u, v)`, row-major.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, p)| **p)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Tight bounds of the set pixels, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<PixelBox> {
        let mut it = self.iter_set();
        let (u0, v0) = it.next()?;
        let mut b = PixelBox {
            u_min: u0,
            v_min: v0,
            u_max: u0,
            v_max: v0,
        };
        for (u, v) in it {
            b.u_min = b.u_min.min(u);
            b.u_max = b.u_max.max(u);
            b.v_max = b.v_max.max(v);
        }
        Some(b)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Region that can hold set pixels after one 3×3 pass, clamped to the image.
    fn work_region(&self, grow: u32) -> Option<PixelBox> {
        let b = self.bounding_box()?;
        Some(PixelBox {
            u_min: b.u_min.saturating_sub(grow),
            v_min: b.v_min.saturating_sub(grow),
            u_max: (b.u_max + grow).min(self.width - 1),
            v_max: (b.v_max + grow).min(self.height - 1),
        })
    }

    fn neighborhood(&self, u: u32, v: u32, all: bool) -> bool {
        let (u, v) = (u as i64, v as i64);
        let mut probe = (-1..=1).flat_map(|dv| (-1..=1).map(move |du| (u + du, v + dv)));
        if all {
            probe.all(|(x, y)| self.get_signed(x, y))
        } else {
            probe.any(|(x, y)| self.get_signed(x, y))
        }
    }
}

/// One erosion pass with the 3×3 all-ones structuring element.
pub fn erode_once(mask: &BinaryMask) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width, mask.height);
    let Some(region) = mask.work_region(0) else {
        return out;
    };
    for v in region.v_min..=region.v_max {
        for u in region.u_min..=region.u_max {
            if mask.get(u, v) && mask.neighborhood(u, v, true) {
                out.set(u, v, true);
            }
        }
    }
    out
}

pub fn erode(mask: &BinaryMask, passes: u32) -> BinaryMask {
    let mut out = mask.clone();
    for _ in 0..passes {
        if out.is_empty() {
            break;
        }
        out = erode_once(&out);
    }
    out
}

/// One dilation pass with the 3×3 all-ones structuring element.
pub fn dilate_once(mask: &BinaryMask) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width, mask.height);
    let Some(region) = mask.work_region(1) else {
        return out;
    };
    for v in region.v_min..=region.v_max {
        for u in region.u_min..=region.u_max {
            if mask.neighborhood(u, v, false) {
                out.set(u, v, true);
            }
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, passes: u32) -> BinaryMask {
    (0..passes).fold(mask.clone(), |m, _| dilate_once(&m))
}

/// Erosion pass counts keyed on mask width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErosionPolicy {
    pub width_threshold_px: u32,
    pub iters_large: u32,
    pub iters_small: u32,
}

impl ErosionPolicy {
    pub fn new(width_threshold_px: u32, iters_large: u32, iters_small: u32) -> Result<Self> {
        if iters_large < iters_small {
            return Err(Error::InvalidInput(format!(
                "iters_large ({iters_large}) must be >= iters_small ({iters_small})"
            )));
        }
        Ok(Self {
            width_threshold_px,
            iters_large,
            iters_small,
        })
    }

    pub const fn outdoor() -> Self {
        Self {
            width_threshold_px: 10,
            iters_large: 4,
            iters_small: 2,
        }
    }

    pub const fn indoor() -> Self {
        Self {
            width_threshold_px: 12,
            iters_large: 2,
            iters_small: 1,
        }
    }

    /// Passes applied to a mask whose bounding box is `width_px` wide.
    pub fn passes_for_width(&self, width_px: u32) -> u32 {
        if width_px > self.width_threshold_px {
            self.iters_large
        } else {
            self.iters_small
        }
    }
}

/// One 2D detection: mask, class label, tight box and detector confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceObservation {
    pub class_name: String,
    pub mask: BinaryMask,
    pub box2d: PixelBox,
    pub score: f64,
}

impl InstanceObservation {
    /// Builds an observation, deriving the tight 2D box from the mask.
    pub fn new(class_name: impl Into<String>, mask: BinaryMask, score: f64) -> Result<Self> {
        let box2d = mask
            .bounding_box()
            .ok_or_else(|| Error::InvalidInput("instance mask has no set pixels".into()))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInput(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            class_name: class_name.into(),
            mask,
            box2d,
            score,
        })
    }
}

/// Passes the policy assigns to this observation.
pub fn adaptive_passes(obs: &InstanceObservation, policy: &ErosionPolicy) -> u32 {
    policy.passes_for_width(obs.box2d.width())
}

/// Erodes an instance mask by the number of passes its width calls for.
/// The result may be empty.
pub fn adaptive_erode(obs: &InstanceObservation, policy: &ErosionPolicy) -> BinaryMask {
    erode(&obs.mask, adaptive_passes(obs, policy))
}
