//! Directory-level operations: label a manifest, write a synthetic suite,
//! and evaluate one label directory against another.

use crate::boxes::Provenance;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{compute_ap_with_curves, EvalBox, EvalResult, PrPoint};
use crate::formats::{
    encode_depth, encode_mask_png, encode_mask_rle, format_manifest, intrinsics_json,
    read_manifest, write_atomic, ManifestEntry,
};
use crate::labels::{
    export_frame, format_labels, parse_labels, KittiLabel, PlaneJson, Sidecar, TruthJson,
};
use crate::pipeline::{label_frame, LabelFlag, PipelineConfig, SceneKind};
use crate::scene::{generate_suite, render_scene};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub labels: usize,
    pub gated_valid: usize,
    pub searched: usize,
    pub unrefined: usize,
    pub ground_snapped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub frames: usize,
    pub frames_labeled: usize,
    pub frames_skipped: usize,
    pub frames_failed: usize,
    pub failures: Vec<FrameFailure>,
    pub instances: usize,
    pub labels: usize,
    pub dropped: BTreeMap<String, usize>,
    pub per_class: BTreeMap<String, ClassSummary>,
    /// Fraction of labels whose coarse box passed the gate.
    pub gate_valid_rate: f64,
    /// Fraction of labels replaced by a searched proposal.
    pub search_rate: f64,
    pub mean_trace_loss: f64,
    pub mean_ratio_loss: f64,
}

impl DatasetSummary {
    pub fn has_failures(&self) -> bool {
        self.frames_failed > 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// A thread pool with `workers` threads; 0 picks the machine default.
pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

struct FrameResult {
    id: String,
    outcome: std::result::Result<(Sidecar, Vec<KittiLabel>), String>,
}

fn label_one(
    entry: &ManifestEntry,
    base: &Path,
    out_dir: &Path,
    configs: &BTreeMap<SceneKind, PipelineConfig>,
) -> FrameResult {
    let id = entry.frame_id();
    let run = || -> Result<(Sidecar, Vec<KittiLabel>)> {
        let input = entry.load(base)?;
        let out = label_frame(&input, &configs[&entry.scene])?;
        let (labels, sidecar) = export_frame(&id, &out);
        write_atomic(
            &out_dir.join(format!("{id}.txt")),
            format_labels(&labels).as_bytes(),
        )?;
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
        write_atomic(&out_dir.join(format!("{id}.json")), json.as_bytes())?;
        Ok((sidecar, labels))
    };
    let outcome = run().map_err(|e| {
        log::error!("frame {id}: {e}");
        e.to_string()
    });
    FrameResult { id, outcome }
}

/// Labels every manifest frame into `out_dir` as `<id>.txt` plus `<id>.json`.
///
/// A frame that cannot be read or labeled is logged and counted; it never
/// aborts the run. Errors are returned only for problems that affect every
/// frame (unreadable manifest, bad config, unwritable output).
pub fn label_dataset(manifest: &Path, cfg: &Config, out_dir: &Path) -> Result<DatasetSummary> {
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    label_entries(&entries, &base, cfg, out_dir)
}

pub fn label_entries(
    entries: &[ManifestEntry],
    base: &Path,
    cfg: &Config,
    out_dir: &Path,
) -> Result<DatasetSummary> {
    let mut seen = BTreeSet::new();
    for e in entries {
        if !seen.insert(e.frame_id()) {
            return Err(Error::InvalidInput(format!(
                "duplicate frame id `{}` in manifest",
                e.frame_id()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let priors = cfg.prior_table()?;
    let configs: BTreeMap<SceneKind, PipelineConfig> = [SceneKind::Outdoor, SceneKind::Indoor]
        .into_iter()
        .map(|k| Ok((k, cfg.pipeline(k, priors.clone())?)))
        .collect::<Result<_>>()?;

    let pool = thread_pool(cfg.workers)?;
    let results: Vec<FrameResult> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| label_one(e, base, out_dir, &configs))
            .collect()
    });

    let mut s = DatasetSummary {
        frames: entries.len(),
        ..DatasetSummary::default()
    };
    let (mut trace, mut ratio) = (0.0, 0.0);
    for r in results {
        match r.outcome {
            Err(error) => {
                s.frames_failed += 1;
                s.failures.push(FrameFailure { frame: r.id, error });
            }
            Ok((sidecar, _)) => {
                if sidecar.skipped.is_some() {
                    s.frames_skipped += 1;
                } else {
                    s.frames_labeled += 1;
                }
                s.instances += sidecar.records.len() + sidecar.dropped.len();
                for d in &sidecar.dropped {
                    let key = serde_json::to_value(d.reason)
                        .expect("reason")
                        .as_str()
                        .unwrap_or("other")
                        .to_string();
                    *s.dropped.entry(key).or_default() += 1;
                }
                for rec in &sidecar.records {
                    s.labels += 1;
                    trace += rec.trace_loss;
                    ratio += rec.ratio_loss;
                    let c = s.per_class.entry(rec.class.clone()).or_default();
                    c.labels += 1;
                    for f in &rec.flags {
                        match f {
                            LabelFlag::GatedValid => c.gated_valid += 1,
                            LabelFlag::Searched => c.searched += 1,
                            LabelFlag::Unrefined => c.unrefined += 1,
                            LabelFlag::GroundSnapped => c.ground_snapped += 1,
                        }
                    }
                }
            }
        }
    }
    if s.labels > 0 {
        let n = s.labels as f64;
        s.gate_valid_rate = s.per_class.values().map(|c| c.gated_valid).sum::<usize>() as f64 / n;
        s.search_rate = s.per_class.values().map(|c| c.searched).sum::<usize>() as f64 / n;
        s.mean_trace_loss = trace / n;
        s.mean_ratio_loss = ratio / n;
    }
    write_atomic(
        &out_dir.join("summary.json"),
        (s.to_json() + "\n").as_bytes(),
    )?;
    Ok(s)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub scenes: usize,
    pub objects: usize,
    pub visible_objects: usize,
    pub occluded_objects: usize,
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
}

/// Renders the configured suite into `out_dir`:
/// `manifest.jsonl`, `frames/<id>/...` rasters, and `gt/<id>.{txt,json}`.
pub fn write_synth(cfg: &Config, out_dir: &Path) -> Result<SynthSummary> {
    let suite = cfg.suite_spec()?;
    let scenes = generate_suite(&suite)?;
    let gt_dir = out_dir.join("gt");
    for d in [
        out_dir.to_path_buf(),
        out_dir.join("frames"),
        gt_dir.clone(),
    ] {
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let rle = cfg.synth_mask_format == "rle";
    let ext = if rle { "rle" } else { "png" };
    let pool = thread_pool(cfg.workers)?;
    let per_scene: Vec<Result<(ManifestEntry, usize, usize, usize)>> = pool.install(|| {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let id = format!("{i:06}");
                let r = render_scene(spec)?;
                let rel = PathBuf::from("frames").join(&id);
                let dir = out_dir.join(&rel);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_atomic(&dir.join("depth.d32f"), &encode_depth(&r.input.depth))?;
                write_atomic(
                    &dir.join("intrinsics.json"),
                    intrinsics_json(&r.input.intrinsics).as_bytes(),
                )?;
                let mut masks = Vec::new();
                let encode = |m: &crate::morphology::BinaryMask| {
                    if rle {
                        encode_mask_rle(m).into_bytes()
                    } else {
                        encode_mask_png(m)
                    }
                };
                for (k, obs) in r.input.observations.iter().enumerate() {
                    let name = format!("mask_{k:03}.{ext}");
                    write_atomic(&dir.join(&name), &encode(&obs.mask))?;
                    masks.push(rel.join(name));
                }
                let ground_mask = match &r.input.ground_observation {
                    Some(g) => {
                        let name = format!("ground.{ext}");
                        write_atomic(&dir.join(&name), &encode(&g.mask))?;
                        Some(rel.join(name))
                    }
                    None => None,
                };
                let labels: Vec<KittiLabel> = r
                    .ground_truth
                    .iter()
                    .map(|g| KittiLabel::from_box(&g.bbox, &r.level, g.box2d, None))
                    .collect();
                let sidecar = Sidecar {
                    frame: id.clone(),
                    rotation: Some(r.level.rotation.m),
                    ground: Some(PlaneJson::from(&r.plane)),
                    objects: r
                        .ground_truth
                        .iter()
                        .map(|g| TruthJson {
                            class: g.bbox.class_name.clone(),
                            instance: g.instance,
                            visible_pixels: g.visible_pixels,
                            unoccluded_pixels: g.unoccluded_pixels,
                        })
                        .collect(),
                    ..Sidecar::default()
                };
                write_atomic(
                    &gt_dir.join(format!("{id}.txt")),
                    format_labels(&labels).as_bytes(),
                )?;
                let json =
                    serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
                write_atomic(&gt_dir.join(format!("{id}.json")), json.as_bytes())?;
                let entry = ManifestEntry {
                    id: Some(id),
                    depth: rel.join("depth.d32f"),
                    intrinsics: rel.join("intrinsics.json"),
                    masks,
                    classes: r
                        .input
                        .observations
                        .iter()
                        .map(|o| o.class_name.clone())
                        .collect(),
                    scores: Some(r.input.observations.iter().map(|o| o.score).collect()),
                    ground_mask,
                    scene: spec.scene_kind,
                };
                let visible = r
                    .ground_truth
                    .iter()
                    .filter(|g| !g.zero_visibility())
                    .count();
                let occluded = r.ground_truth.iter().filter(|g| g.is_occluded()).count();
                Ok((entry, r.ground_truth.len(), visible, occluded))
            })
            .collect()
    });
    let mut entries = Vec::with_capacity(scenes.len());
    let mut summary = SynthSummary {
        scenes: scenes.len(),
        manifest: out_dir.join("manifest.jsonl"),
        ground_truth: gt_dir.clone(),
        ..SynthSummary::default()
    };
    for r in per_scene {
        let (e, n, vis, occ) = r?;
        entries.push(e);
        summary.objects += n;
        summary.visible_objects += vis;
        summary.occluded_objects += occ;
    }
    write_atomic(&summary.manifest, format_manifest(&entries).as_bytes())?;
    Ok(summary)
}

/// Label files of a directory, keyed by frame id. A missing sidecar means
/// the labels are in level-camera coordinates.
pub fn read_label_dir(dir: &Path) -> Result<BTreeMap<String, (Vec<KittiLabel>, Sidecar)>> {
    let mut out = BTreeMap::new();
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    for p in paths {
        let id = p
            .file_stem()
            .expect("file stem")
            .to_string_lossy()
            .into_owned();
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let labels = parse_labels(&text, &p)?;
        let side = p.with_extension("json");
        let sidecar = if side.exists() {
            let t = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            serde_json::from_str(&t).map_err(|e| Error::format("sidecar", &side, e))?
        } else {
            Sidecar {
                frame: id.clone(),
                ..Sidecar::default()
            }
        };
        out.insert(id, (labels, sidecar));
    }
    Ok(out)
}

/// Scores a prediction directory against a ground-truth directory. Both are
/// mapped into each ground-truth frame's ground-aligned coordinates.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    cfg: &Config,
) -> Result<(EvalResult, Vec<PrPoint>)> {
    let gt = read_label_dir(gt_dir)?;
    if gt.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no ground-truth labels in {}",
            gt_dir.display()
        )));
    }
    let pred = read_label_dir(pred_dir)?;
    let mut gt_boxes = Vec::new();
    let mut pred_boxes = Vec::new();
    for (id, (labels, side)) in &gt {
        let frame = side.ground_frame();
        gt_boxes.extend(labels.iter().map(|l| EvalBox {
            frame: id.clone(),
            bbox: l.to_box(&frame, &frame, Provenance::GroundTruth),
            score: 1.0,
        }));
        if let Some((plabels, pside)) = pred.get(id) {
            let src = pside.ground_frame();
            pred_boxes.extend(plabels.iter().map(|l| EvalBox {
                frame: id.clone(),
                bbox: l.to_box(&src, &frame, Provenance::Searched),
                score: l.score.unwrap_or(1.0),
            }));
        }
    }
    for id in pred.keys().filter(|k| !gt.contains_key(*k)) {
        log::warn!("prediction frame {id} has no ground truth; its boxes count as false positives");
        let (plabels, pside) = &pred[id];
        let src = pside.ground_frame();
        pred_boxes.extend(plabels.iter().map(|l| EvalBox {
            frame: id.clone(),
            bbox: l.to_box(&src, &src, Provenance::Searched),
            score: l.score.unwrap_or(1.0),
        }));
    }
    compute_ap_with_curves(&pred_boxes, &gt_boxes, &cfg.eval_config())
}
