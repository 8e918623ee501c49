//! KITTI-style label lines and per-frame JSON sidecars.
//!
//! A line is `class -1 -1 alpha u1 v1 u2 v2 h w l x y z ry [score]`, where
//! `(x, y, z)` is the bottom-face center in camera coordinates and `ry` is the
//! heading about the frame's ground normal. The sidecar carries the
//! camera-to-ground rotation needed to interpret `ry` exactly.

use crate::boxes::{Bev, OrientedBox3, Provenance};
use crate::error::{Error, Result};
use crate::ground::{GroundAlignedFrame, GroundPlane};
use crate::linalg::{Mat3, Vec3};
use crate::morphology::PixelBox;
use crate::pipeline::{DroppedInstance, FrameOutput, LabelFlag};
use crate::scalar::wrap_pi;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct KittiLabel {
    pub class_name: String,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    pub height: f64,
    pub width: f64,
    pub length: f64,
    pub location: [f64; 3],
    pub ry: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    /// Exports a ground-frame box.
    pub fn from_box(
        b: &OrientedBox3<f64>,
        frame: &GroundAlignedFrame<f64>,
        bbox2d: Option<PixelBox>,
        score: Option<f64>,
    ) -> Self {
        let loc = frame.to_camera(Vec3::new(b.center_bev.x, b.y_bottom, b.center_bev.z));
        let ry = wrap_pi(-b.yaw);
        let bbox2d = bbox2d.map_or([-1.0; 4], |p| {
            [
                p.u_min as f64,
                p.v_min as f64,
                p.u_max as f64,
                p.v_max as f64,
            ]
        });
        Self {
            class_name: b.class_name.clone(),
            alpha: wrap_pi(ry - loc.x.atan2(loc.z)),
            bbox2d,
            height: b.height,
            width: b.width,
            length: b.length,
            location: loc.to_array(),
            ry,
            score,
        }
    }

    /// The box in `dst` coordinates, given the frame `src` it was exported from.
    pub fn to_box(
        &self,
        src: &GroundAlignedFrame<f64>,
        dst: &GroundAlignedFrame<f64>,
        provenance: Provenance,
    ) -> OrientedBox3<f64> {
        let p = dst.to_ground(Vec3::from_array(self.location));
        let yaw = -self.ry;
        let axis = src.to_camera(Vec3::new(yaw.cos(), 0.0, yaw.sin()));
        let a = dst.to_ground(axis);
        OrientedBox3::new(
            Bev::new(p.x, p.z),
            p.y,
            self.width,
            self.height,
            self.length,
            a.z.atan2(a.x),
            self.class_name.clone(),
            provenance,
        )
    }

    pub fn to_line(&self) -> String {
        let [u1, v1, u2, v2] = self.bbox2d;
        let [x, y, z] = self.location;
        let mut s = format!(
            "{} -1 -1 {:.6} {:.2} {:.2} {:.2} {:.2} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            self.class_name.replace(' ', "_"),
            self.alpha,
            u1,
            v1,
            u2,
            v2,
            self.height,
            self.width,
            self.length,
            x,
            y,
            z,
            self.ry
        );
        if let Some(score) = self.score {
            s.push_str(&format!(" {score:.6}"));
        }
        s
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 15 && f.len() != 16 {
            return Err(format!("expected 15 or 16 fields, found {}", f.len()));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|e| format!("field {}: {e}", i + 1))
        };
        let v: Vec<f64> = (3..f.len())
            .map(num)
            .collect::<std::result::Result<_, _>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err("non-finite value".into());
        }
        let (h, w, l) = (v[5], v[6], v[7]);
        if !(h > 0.0 && w > 0.0 && l > 0.0) {
            return Err("dimensions must be positive".into());
        }
        Ok(Self {
            class_name: f[0].replace('_', " "),
            alpha: v[0],
            bbox2d: [v[1], v[2], v[3], v[4]],
            height: h,
            width: w,
            length: l,
            location: [v[8], v[9], v[10]],
            ry: v[11],
            score: v.get(12).copied(),
        })
    }
}

pub fn format_labels(labels: &[KittiLabel]) -> String {
    labels.iter().map(|l| l.to_line() + "\n").collect()
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<KittiLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            KittiLabel::parse_line(l)
                .map_err(|e| Error::format("label line", path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneJson {
    pub normal: [f64; 3],
    pub offset: f64,
    pub rms: f64,
}

impl From<&GroundPlane<f64>> for PlaneJson {
    fn from(p: &GroundPlane<f64>) -> Self {
        Self {
            normal: p.normal.to_array(),
            offset: p.offset,
            rms: p.inlier_rms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub instance: usize,
    pub class: String,
    pub score: f64,
    pub provenance: Provenance,
    pub flags: Vec<LabelFlag>,
    pub point_count: usize,
    pub trace_loss: f64,
    pub ratio_loss: f64,
    pub erosion_passes: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthJson {
    pub class: String,
    pub instance: Option<usize>,
    pub visible_pixels: usize,
    pub unoccluded_pixels: usize,
}

/// Per-frame sidecar. Label lines and `records` (or `objects`) are in the
/// same order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub frame: String,
    /// Camera-to-ground rotation, row-major.
    pub rotation: Option<[[f64; 3]; 3]>,
    pub ground: Option<PlaneJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<RecordJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<DroppedInstance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<TruthJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl Sidecar {
    pub fn ground_frame(&self) -> GroundAlignedFrame<f64> {
        self.rotation
            .map_or_else(GroundAlignedFrame::identity, |m| GroundAlignedFrame {
                rotation: Mat3 { m },
            })
    }
}

/// Label lines and sidecar for one labeled frame.
pub fn export_frame(frame_id: &str, out: &FrameOutput) -> (Vec<KittiLabel>, Sidecar) {
    let labels = out
        .records
        .iter()
        .map(|r| KittiLabel::from_box(&r.bbox, &out.frame, Some(r.box2d), Some(r.score)))
        .collect();
    let records = out
        .records
        .iter()
        .map(|r| RecordJson {
            instance: r.instance,
            class: r.class_name.clone(),
            score: r.score,
            provenance: r.bbox.provenance,
            flags: r.flags.clone(),
            point_count: r.diagnostics.point_count,
            trace_loss: r.diagnostics.trace_loss,
            ratio_loss: r.diagnostics.ratio_loss,
            erosion_passes: r.diagnostics.erosion_passes,
        })
        .collect();
    let sidecar = Sidecar {
        frame: frame_id.to_string(),
        rotation: out.plane.map(|_| out.frame.rotation.m),
        ground: out.plane.as_ref().map(PlaneJson::from),
        records,
        dropped: out.report.dropped.clone(),
        objects: Vec::new(),
        skipped: out.report.skipped.clone(),
    };
    (labels, sidecar)
}
