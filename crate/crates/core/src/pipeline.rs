//! Per-frame labeling: erode, unproject, level, fit, gate, search.

use crate::boxes::{
    estimate_yaw_histogram, estimate_yaw_pca, fit_tight_box, Bev, HistogramOptions, OrientedBox3,
    Provenance,
};
use crate::camera::{unproject_mask, CameraIntrinsics, DepthMap, Frame, PointCloud};
use crate::error::{Error, Result};
use crate::ground::{
    build_ground_frame, fit_ground_plane_with, to_ground_frame, GroundAlignedFrame,
    GroundFitOptions, GroundPlane,
};
use crate::morphology::{erode, ErosionPolicy, InstanceObservation, PixelBox};
use crate::priors::PriorTable;
use crate::search::{
    count_inside, gate_box, ray_tracing_loss_with, search_best_box, GateVerdict, SearchConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Indoor,
    #[default]
    Outdoor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErosionMode {
    #[default]
    Adaptive,
    /// The same pass count for every instance.
    Fixed,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawEstimator {
    #[default]
    Pca,
    Histogram,
}

/// Everything the labeler needs for one image.
#[derive(Clone, Debug)]
pub struct FrameInput {
    pub intrinsics: CameraIntrinsics<f64>,
    pub depth: DepthMap<f64>,
    pub observations: Vec<InstanceObservation>,
    pub ground_observation: Option<InstanceObservation>,
    pub scene_kind: SceneKind,
}

impl FrameInput {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !self.depth.matches(&self.intrinsics) {
            return Err(Error::InvalidInput(
                "depth raster does not match intrinsics".into(),
            ));
        }
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        for obs in self
            .observations
            .iter()
            .chain(self.ground_observation.iter())
        {
            if obs.mask.width() != w || obs.mask.height() != h {
                return Err(Error::InvalidInput(format!(
                    "mask for `{}` is {}x{}, image is {w}x{h}",
                    obs.class_name,
                    obs.mask.width(),
                    obs.mask.height()
                )));
            }
        }
        Ok(())
    }
}

/// Resolved settings for one scene kind.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub erosion_mode: ErosionMode,
    pub erosion: ErosionPolicy,
    pub fixed_passes: u32,
    pub yaw: YawEstimator,
    pub histogram: HistogramOptions,
    pub ground: GroundFitOptions,
    /// Used when a frame has no ground observation.
    pub fixed_plane: Option<GroundPlane<f64>>,
    /// `false` accepts every coarse box as is.
    pub gating: bool,
    /// `false` keeps implausible coarse boxes instead of searching.
    pub search_enabled: bool,
    pub search: SearchConfig,
    /// Searched boxes whose bottom is within this distance of the ground are
    /// placed on it. 0 disables.
    pub ground_snap: f64,
    /// `None` runs without priors: no gate and no search.
    pub priors: Option<PriorTable>,
}

impl PipelineConfig {
    pub fn for_scene(kind: SceneKind, priors: Option<PriorTable>) -> Self {
        let (erosion, search) = match kind {
            SceneKind::Outdoor => (ErosionPolicy::outdoor(), SearchConfig::outdoor()),
            SceneKind::Indoor => (ErosionPolicy::indoor(), SearchConfig::indoor()),
        };
        Self {
            erosion_mode: ErosionMode::Adaptive,
            erosion,
            fixed_passes: erosion.iters_small,
            yaw: YawEstimator::Pca,
            histogram: HistogramOptions::default(),
            ground: GroundFitOptions::default(),
            fixed_plane: None,
            gating: true,
            search_enabled: true,
            search,
            ground_snap: 0.3,
            priors,
        }
    }

    fn passes_for(&self, obs: &InstanceObservation) -> u32 {
        match self.erosion_mode {
            ErosionMode::Adaptive => self.erosion.passes_for_width(obs.box2d.width()),
            ErosionMode::Fixed => self.fixed_passes,
            ErosionMode::None => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFlag {
    GatedValid,
    Searched,
    /// Coarse box kept without passing the gate (gate, search or priors off).
    Unrefined,
    GroundSnapped,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub point_count: usize,
    pub trace_loss: f64,
    pub ratio_loss: f64,
    pub erosion_passes: u32,
}

/// One pseudo label. `bbox` lives in the frame's ground-aligned coordinates;
/// [`FrameOutput::frame`] maps it back to the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub instance: usize,
    pub class_name: String,
    pub bbox: OrientedBox3<f64>,
    pub box2d: PixelBox,
    pub score: f64,
    pub flags: Vec<LabelFlag>,
    pub diagnostics: Diagnostics,
}

impl LabelRecord {
    pub fn has(&self, flag: LabelFlag) -> bool {
        self.flags.contains(&flag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    EmptyAfterErosion,
    InsufficientPoints,
    MissingPrior,
    DegenerateGeometry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedInstance {
    pub instance: usize,
    pub class_name: String,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundSource {
    Mask,
    Fixed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub processed: usize,
    pub labeled: usize,
    pub dropped: Vec<DroppedInstance>,
    pub ground_source: Option<GroundSource>,
    /// Set when the whole frame was skipped.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub records: Vec<LabelRecord>,
    pub report: FrameReport,
    pub plane: Option<GroundPlane<f64>>,
    pub frame: GroundAlignedFrame<f64>,
}

/// Labels every observation of one frame.
///
/// Input errors (mismatched rasters) are returned; a ground plane that
/// cannot be fitted skips the frame and is noted in the report.
pub fn label_frame(input: &FrameInput, cfg: &PipelineConfig) -> Result<FrameOutput> {
    input.validate()?;
    let mut report = FrameReport {
        processed: input.observations.len(),
        ..FrameReport::default()
    };
    let skipped = |mut report: FrameReport, why: String| {
        log::warn!("frame skipped: {why}");
        report.skipped = Some(why);
        FrameOutput {
            records: Vec::new(),
            report,
            plane: None,
            frame: GroundAlignedFrame::identity(),
        }
    };

    let plane = match (&input.ground_observation, cfg.fixed_plane) {
        (Some(g), _) => {
            report.ground_source = Some(GroundSource::Mask);
            let pts = unproject_mask(&input.depth, &g.mask, &input.intrinsics)?;
            match fit_ground_plane_with(&pts, &cfg.ground) {
                Ok(p) => p,
                Err(e) => return Ok(skipped(report, format!("ground fit failed: {e}"))),
            }
        }
        (None, Some(p)) => {
            report.ground_source = Some(GroundSource::Fixed);
            p
        }
        (None, None) => {
            return Ok(skipped(
                report,
                "no ground observation and no fixed plane".into(),
            ))
        }
    };
    let frame = build_ground_frame(&plane);

    let results: Vec<std::result::Result<LabelRecord, DroppedInstance>> = input
        .observations
        .par_iter()
        .enumerate()
        .map(|(i, obs)| label_instance(i, obs, input, &plane, &frame, cfg))
        .collect();

    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(d) => {
                log::debug!(
                    "instance {} ({}) dropped: {:?} {}",
                    d.instance,
                    d.class_name,
                    d.reason,
                    d.detail
                );
                report.dropped.push(d);
            }
        }
    }
    report.labeled = records.len();
    Ok(FrameOutput {
        records,
        report,
        plane: Some(plane),
        frame,
    })
}

fn label_instance(
    index: usize,
    obs: &InstanceObservation,
    input: &FrameInput,
    plane: &GroundPlane<f64>,
    frame: &GroundAlignedFrame<f64>,
    cfg: &PipelineConfig,
) -> std::result::Result<LabelRecord, DroppedInstance> {
    let drop = |reason, detail: String| DroppedInstance {
        instance: index,
        class_name: obs.class_name.clone(),
        reason,
        detail,
    };
    let degenerate = |e: Error| drop(DropReason::DegenerateGeometry, e.to_string());

    let passes = cfg.passes_for(obs);
    let mask = erode(&obs.mask, passes);
    if mask.is_empty() {
        return Err(drop(
            DropReason::EmptyAfterErosion,
            format!("{passes} passes"),
        ));
    }
    let cam = unproject_mask(&input.depth, &mask, &input.intrinsics).map_err(degenerate)?;
    if cam.len() < cfg.search.min_points.max(1) {
        return Err(drop(
            DropReason::InsufficientPoints,
            format!("{} points, need {}", cam.len(), cfg.search.min_points),
        ));
    }
    let cloud = to_ground_frame(&cam, frame).map_err(degenerate)?;

    let yaw = match cfg.yaw {
        YawEstimator::Pca => estimate_yaw_pca(&cloud),
        YawEstimator::Histogram => estimate_yaw_histogram(&cloud, &cfg.histogram),
    }
    .map_err(degenerate)?;
    let coarse = fit_tight_box(&cloud, yaw, &obs.class_name).map_err(degenerate)?;

    let prior = match (&cfg.priors, cfg.gating) {
        (Some(table), true) => Some(
            table
                .require(&obs.class_name)
                .map_err(|e| drop(DropReason::MissingPrior, e.to_string()))?,
        ),
        _ => None,
    };

    let mut flags = Vec::new();
    let camera_bev = Bev::new(0.0, 0.0);
    let mut bbox = match prior {
        None => {
            flags.push(LabelFlag::Unrefined);
            coarse
        }
        Some(prior) => {
            let verdict: GateVerdict =
                gate_box(&coarse, prior, &cfg.search.thresholds).map_err(degenerate)?;
            if verdict.is_valid() {
                flags.push(LabelFlag::GatedValid);
                coarse
            } else if cfg.search_enabled {
                flags.push(LabelFlag::Searched);
                search_best_box(&cloud, &coarse, prior, &cfg.search, camera_bev)
                    .map_err(degenerate)?
                    .best
            } else {
                flags.push(LabelFlag::Unrefined);
                coarse
            }
        }
    };

    if cfg.ground_snap > 0.0 && bbox.provenance == Provenance::Searched {
        // The ground is y = offset in the ground-aligned frame.
        let ground_y = plane.offset;
        if (bbox.y_bottom - ground_y).abs() <= cfg.ground_snap {
            bbox.y_bottom = ground_y;
            flags.push(LabelFlag::GroundSnapped);
        }
    }

    let inside = count_inside(&cloud, &bbox);
    let diagnostics = Diagnostics {
        point_count: cloud.len(),
        trace_loss: ray_tracing_loss_with(&cloud, &bbox, camera_bev, cfg.search.aggregation),
        ratio_loss: 1.0 - inside as f64 / cloud.len() as f64,
        erosion_passes: passes,
    };
    Ok(LabelRecord {
        instance: index,
        class_name: obs.class_name.clone(),
        bbox,
        box2d: obs.box2d,
        score: obs.score,
        flags,
        diagnostics,
    })
}

/// Instance points in the ground-aligned frame, after the erosion the
/// pipeline would apply. Exposed for diagnostics and tests.
pub fn instance_cloud(
    obs: &InstanceObservation,
    input: &FrameInput,
    frame: &GroundAlignedFrame<f64>,
    cfg: &PipelineConfig,
) -> Result<PointCloud<f64>> {
    let mask = erode(&obs.mask, cfg.passes_for(obs));
    let cam = unproject_mask(&input.depth, &mask, &input.intrinsics)?;
    debug_assert_eq!(cam.frame(), Frame::Camera);
    to_ground_frame(&cam, frame)
}
