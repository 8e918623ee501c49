//! Flat configuration document.
//!
//! Every tunable constant has a key. Unknown keys are rejected. Environment
//! variables named `PL3D_<KEY>` (key uppercased) override file values; their
//! text is read as a TOML value, falling back to a plain string.

use crate::boxes::HistogramOptions;
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::eval::{default_range_buckets, default_thresholds, EvalConfig};
use crate::ground::{GroundFitMethod, GroundFitOptions, GroundPlane};
use crate::morphology::ErosionPolicy;
use crate::pipeline::{ErosionMode, PipelineConfig, SceneKind, YawEstimator};
use crate::priors::{Dataset, PriorSource, PriorTable};
use crate::scene::{CameraPose, NoiseSpec, SuiteSpec};
use crate::search::{GateThresholds, SearchConfig, TraceAggregation};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENV_PREFIX: &str = "PL3D_";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorChoice {
    #[default]
    Llm,
    Stats,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorDataset {
    #[default]
    All,
    Kitti,
    Nuscenes,
    SunRgbd,
    Arkitscenes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // Run.
    pub workers: usize,
    pub seed: u64,
    pub log_level: String,

    // Erosion.
    pub erosion_mode: ErosionMode,
    pub erosion_width_threshold_outdoor: u32,
    pub erosion_iters_large_outdoor: u32,
    pub erosion_iters_small_outdoor: u32,
    pub erosion_width_threshold_indoor: u32,
    pub erosion_iters_large_indoor: u32,
    pub erosion_iters_small_indoor: u32,
    /// Pass count of the fixed mode; negative means the scene's small count.
    pub erosion_fixed_iters: i64,

    // Ground.
    pub ground_fit: GroundFitMethod,
    pub ground_mad_factor: f64,
    /// Fallback plane from a known mounting, used when a frame has no
    /// ground mask. Both must be set to take effect.
    pub ground_camera_height: Option<f64>,
    pub ground_camera_pitch: Option<f64>,
    pub ground_snap: f64,

    // Orientation.
    pub yaw_estimator: YawEstimator,
    pub histogram_bin_deg: f64,
    pub histogram_max_pairs: usize,

    // Priors, gate, search.
    pub priors: PriorChoice,
    pub prior_dataset: PriorDataset,
    pub priors_file: Option<PathBuf>,
    pub gating: bool,
    pub search: bool,
    pub tau1: f64,
    pub tau2: f64,
    pub lambda_outdoor: f64,
    pub lambda_indoor: f64,
    pub trace_weight: f64,
    pub min_points: usize,
    pub trace_aggregation: TraceAggregation,

    // Evaluation.
    pub iou_thresholds: Vec<f64>,
    /// `[near, far]` pairs; `far` may be `inf`. Empty disables buckets.
    pub range_buckets: Vec<[f64; 2]>,
    pub pr_csv: bool,

    // Synthetic suite.
    pub synth_scenes: usize,
    pub synth_scene: SceneKind,
    pub synth_width: u32,
    pub synth_height: u32,
    pub synth_focal: f64,
    pub synth_camera_height: f64,
    pub synth_camera_pitch: f64,
    pub synth_objects_min: usize,
    pub synth_objects_max: usize,
    pub synth_classes: Vec<String>,
    pub synth_occlusion_rate: f64,
    pub synth_occluded_visibility_min: f64,
    pub synth_occluded_visibility_max: f64,
    pub synth_range_min: f64,
    pub synth_range_max: f64,
    pub synth_depth_sigma: f64,
    pub synth_bleed_px: u32,
    pub synth_dropout: f64,
    pub synth_max_ground_range: f64,
    /// Mask format written by `synth`: "png" or "rle".
    pub synth_mask_format: String,

    // Ablation.
    pub ablate_groups: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        let out = ErosionPolicy::outdoor();
        let ind = ErosionPolicy::indoor();
        let hist = HistogramOptions::default();
        let search = SearchConfig::outdoor();
        Self {
            workers: 0,
            seed: 0,
            log_level: "info".into(),
            erosion_mode: ErosionMode::Adaptive,
            erosion_width_threshold_outdoor: out.width_threshold_px,
            erosion_iters_large_outdoor: out.iters_large,
            erosion_iters_small_outdoor: out.iters_small,
            erosion_width_threshold_indoor: ind.width_threshold_px,
            erosion_iters_large_indoor: ind.iters_large,
            erosion_iters_small_indoor: ind.iters_small,
            erosion_fixed_iters: -1,
            ground_fit: GroundFitMethod::Tls,
            ground_mad_factor: GroundFitOptions::default().mad_factor,
            ground_camera_height: None,
            ground_camera_pitch: None,
            ground_snap: 0.3,
            yaw_estimator: YawEstimator::Pca,
            histogram_bin_deg: hist.bin_width.to_degrees(),
            histogram_max_pairs: hist.max_pairs,
            priors: PriorChoice::Llm,
            prior_dataset: PriorDataset::All,
            priors_file: None,
            gating: true,
            search: true,
            tau1: search.thresholds.tau_1,
            tau2: search.thresholds.tau_2,
            lambda_outdoor: SearchConfig::outdoor().lambda,
            lambda_indoor: SearchConfig::indoor().lambda,
            trace_weight: search.trace_weight,
            min_points: search.min_points,
            trace_aggregation: search.aggregation,
            iou_thresholds: default_thresholds(),
            range_buckets: default_range_buckets()
                .into_iter()
                .map(|(a, b)| [a, b])
                .collect(),
            pr_csv: false,
            synth_scenes: 200,
            synth_scene: SceneKind::Outdoor,
            synth_width: 960,
            synth_height: 540,
            synth_focal: 700.0,
            synth_camera_height: 20.0,
            synth_camera_pitch: 0.9,
            synth_objects_min: 2,
            synth_objects_max: 5,
            synth_classes: Vec::new(),
            synth_occlusion_rate: 0.0,
            synth_occluded_visibility_min: 0.2,
            synth_occluded_visibility_max: 0.6,
            synth_range_min: 10.0,
            synth_range_max: 28.0,
            synth_depth_sigma: 0.0,
            synth_bleed_px: 0,
            synth_dropout: 0.0,
            synth_max_ground_range: 80.0,
            synth_mask_format: "png".into(),
            ablate_groups: crate::ablate::ALL_GROUPS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

fn env_value(raw: &str) -> toml::Value {
    // Parse as the right-hand side of `v = ...`.
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl Config {
    /// Builds a config from document text and `(name, value)` environment
    /// pairs. Only names starting with [`ENV_PREFIX`] are considered.
    pub fn from_sources<I, K, V>(text: Option<&str>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = match text {
            Some(t) => t
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
            return Err(Error::Config(format!(
                "`{k}`: the config is flat, tables are not allowed"
            )));
        }
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                k.as_ref()
                    .strip_prefix(ENV_PREFIX)
                    .map(|key| (key.to_ascii_lowercase(), v.as_ref().to_string()))
            })
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            table.insert(key, env_value(&raw));
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::from_sources(text.as_deref(), std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        GateThresholds::new(self.tau1, self.tau2).map_err(|e| Error::Config(e.to_string()))?;
        self.erosion_policy(SceneKind::Outdoor)?;
        self.erosion_policy(SceneKind::Indoor)?;
        if !(self.lambda_outdoor >= 0.0 && self.lambda_indoor >= 0.0 && self.trace_weight >= 0.0) {
            return err("lambda_* and trace_weight must be non-negative".into());
        }
        if !(self.histogram_bin_deg > 0.0 && self.histogram_bin_deg <= 180.0) {
            return err(format!(
                "histogram_bin_deg {} outside (0, 180]",
                self.histogram_bin_deg
            ));
        }
        if self.histogram_max_pairs == 0 {
            return err("histogram_max_pairs must be positive".into());
        }
        if !(self.ground_snap >= 0.0 && self.ground_mad_factor >= 0.0) {
            return err("ground_snap and ground_mad_factor must be non-negative".into());
        }
        if self.ground_camera_height.is_some_and(|h| !(h > 0.0)) {
            return err("ground_camera_height must be positive".into());
        }
        if !matches!(
            self.log_level.to_ascii_lowercase().as_str(),
            "off" | "error" | "warn" | "info" | "debug" | "trace"
        ) {
            return err(format!("unknown log_level `{}`", self.log_level));
        }
        if !matches!(self.synth_mask_format.as_str(), "png" | "rle") {
            return err(format!(
                "synth_mask_format must be png or rle, got `{}`",
                self.synth_mask_format
            ));
        }
        for g in &self.ablate_groups {
            let group = g.split_once(':').map_or(g.as_str(), |(a, _)| a);
            if !crate::ablate::ALL_GROUPS.contains(&group) {
                return err(format!("unknown ablate group `{g}`"));
            }
        }
        self.eval_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.suite_spec()?;
        Ok(())
    }

    pub fn erosion_policy(&self, kind: SceneKind) -> Result<ErosionPolicy> {
        let p = match kind {
            SceneKind::Outdoor => ErosionPolicy::new(
                self.erosion_width_threshold_outdoor,
                self.erosion_iters_large_outdoor,
                self.erosion_iters_small_outdoor,
            ),
            SceneKind::Indoor => ErosionPolicy::new(
                self.erosion_width_threshold_indoor,
                self.erosion_iters_large_indoor,
                self.erosion_iters_small_indoor,
            ),
        };
        p.map_err(|e| Error::Config(e.to_string()))
    }

    /// The prior table selected by `priors`, `prior_dataset` and `priors_file`.
    pub fn prior_table(&self) -> Result<Option<PriorTable>> {
        let source = match self.priors {
            PriorChoice::None => return Ok(None),
            PriorChoice::Llm => PriorSource::LlmTable,
            PriorChoice::Stats => PriorSource::DatasetStats,
        };
        let mut table = match self.prior_dataset {
            PriorDataset::All => PriorTable::builtin_all(source),
            PriorDataset::Kitti => PriorTable::builtin(Dataset::Kitti, source),
            PriorDataset::Nuscenes => PriorTable::builtin(Dataset::Nuscenes, source),
            PriorDataset::SunRgbd => PriorTable::builtin(Dataset::SunRgbd, source),
            PriorDataset::Arkitscenes => PriorTable::builtin(Dataset::Arkitscenes, source),
        };
        if let Some(path) = &self.priors_file {
            table.overlay_file(path)?;
        }
        Ok(Some(table))
    }

    /// Pipeline settings for one scene kind, given an already-built prior table.
    pub fn pipeline(&self, kind: SceneKind, priors: Option<PriorTable>) -> Result<PipelineConfig> {
        let erosion = self.erosion_policy(kind)?;
        let lambda = match kind {
            SceneKind::Outdoor => self.lambda_outdoor,
            SceneKind::Indoor => self.lambda_indoor,
        };
        let fixed_plane = match (self.ground_camera_height, self.ground_camera_pitch) {
            (Some(h), Some(p)) => Some(GroundPlane::from_camera_pose(h, p)),
            (Some(h), None) => Some(GroundPlane::from_camera_pose(h, 0.0)),
            _ => None,
        };
        Ok(PipelineConfig {
            erosion_mode: self.erosion_mode,
            erosion,
            fixed_passes: u32::try_from(self.erosion_fixed_iters).unwrap_or(erosion.iters_small),
            yaw: self.yaw_estimator,
            histogram: HistogramOptions {
                bin_width: self.histogram_bin_deg.to_radians(),
                max_pairs: self.histogram_max_pairs,
                seed: self.histogram_seed(),
            },
            ground: GroundFitOptions {
                method: self.ground_fit,
                mad_factor: self.ground_mad_factor,
            },
            fixed_plane,
            gating: self.gating,
            search_enabled: self.search,
            search: SearchConfig {
                lambda,
                thresholds: GateThresholds::new(self.tau1, self.tau2)
                    .map_err(|e| Error::Config(e.to_string()))?,
                min_points: self.min_points,
                aggregation: self.trace_aggregation,
                trace_weight: self.trace_weight,
            },
            ground_snap: self.ground_snap,
            priors,
        })
    }

    /// Histogram subsampling seed: the fixed default, mixed with the run seed.
    pub fn histogram_seed(&self) -> u64 {
        HistogramOptions::default().seed ^ self.seed
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            iou_thresholds: self.iou_thresholds.clone(),
            range_buckets: if self.range_buckets.is_empty() {
                None
            } else {
                Some(self.range_buckets.iter().map(|[a, b]| (*a, *b)).collect())
            },
        }
    }

    /// The synthetic suite these keys describe. Classes default to the
    /// KITTI table for outdoor scenes and ARKitScenes for indoor ones.
    pub fn suite_spec(&self) -> Result<SuiteSpec> {
        let source = match self.priors {
            PriorChoice::Stats => PriorSource::DatasetStats,
            _ => PriorSource::LlmTable,
        };
        let default_set = match self.synth_scene {
            SceneKind::Outdoor => Dataset::Kitti,
            SceneKind::Indoor => Dataset::Arkitscenes,
        };
        let classes = if self.synth_classes.is_empty() {
            PriorTable::builtin(default_set, source)
                .iter()
                .cloned()
                .collect()
        } else {
            let all = PriorTable::builtin_all(source);
            self.synth_classes
                .iter()
                .map(|c| {
                    all.require(c)
                        .cloned()
                        .map_err(|e| Error::Config(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let f = self.synth_focal;
        let intrinsics = CameraIntrinsics::new(
            f,
            f,
            (self.synth_width as f64 - 1.0) / 2.0,
            (self.synth_height as f64 - 1.0) / 2.0,
            self.synth_width,
            self.synth_height,
        )
        .map_err(|e| Error::Config(format!("synthetic camera: {e}")))?;
        let spec = SuiteSpec {
            scenes: self.synth_scenes,
            seed: self.seed,
            intrinsics,
            pose: CameraPose {
                height: self.synth_camera_height,
                pitch: self.synth_camera_pitch,
            },
            objects_min: self.synth_objects_min,
            objects_max: self.synth_objects_max,
            classes,
            jitter: GateThresholds::new(self.tau1, self.tau2)
                .map_err(|e| Error::Config(e.to_string()))?,
            occlusion_rate: self.synth_occlusion_rate,
            occluded_visibility: (
                self.synth_occluded_visibility_min,
                self.synth_occluded_visibility_max,
            ),
            range: (self.synth_range_min, self.synth_range_max),
            noise: NoiseSpec {
                depth_sigma_rel: self.synth_depth_sigma,
                boundary_bleed_px: self.synth_bleed_px,
                dropout_rate: self.synth_dropout,
                seed: self.seed,
            },
            max_ground_range: self.synth_max_ground_range,
            scene_kind: self.synth_scene,
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
