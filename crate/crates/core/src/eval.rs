//! Rotated-box IoU and threshold-swept average precision.

use crate::boxes::{Bev, OrientedBox3};
use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Intersection of two convex CCW polygons (Sutherland–Hodgman).
fn clip_convex<T: Real>(subject: &[Bev<T>], clip: &[Bev<T>]) -> Vec<Bev<T>> {
    let mut out: Vec<Bev<T>> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b.sub(a);
        let side = |p: Bev<T>| edge.cross(p.sub(a));
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= T::zero() {
                if sp < T::zero() {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= T::zero() {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect<T: Real>(p: Bev<T>, q: Bev<T>, sp: T, sq: T) -> Bev<T> {
    let t = sp / (sp - sq);
    p.add(q.sub(p).scale(t))
}

fn polygon_area<T: Real>(poly: &[Bev<T>]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let twice = (0..poly.len()).fold(T::zero(), |acc, i| {
        acc + poly[i].cross(poly[(i + 1) % poly.len()])
    });
    (twice * T::lit(0.5)).abs()
}

/// Overlap area of the two BEV rectangles.
pub fn bev_intersection_area<T: Real>(a: &OrientedBox3<T>, b: &OrientedBox3<T>) -> T {
    polygon_area(&clip_convex(&a.corners_bev(), &b.corners_bev()))
}

/// 3D IoU of two ground-parallel boxes in the same frame.
pub fn iou3d<T: Real>(a: &OrientedBox3<T>, b: &OrientedBox3<T>) -> T {
    let overlap_y = (a.y_bottom.min(b.y_bottom) - a.y_top().max(b.y_top())).max(T::zero());
    if overlap_y == T::zero() {
        return T::zero();
    }
    let inter = bev_intersection_area(a, b) * overlap_y;
    let union = a.volume() + b.volume() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// A scored prediction or a ground-truth box, tagged with its frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalBox {
    pub frame: String,
    pub bbox: OrientedBox3<f64>,
    pub score: f64,
}

impl EvalBox {
    pub fn class(&self) -> &str {
        &self.bbox.class_name
    }

    fn range(&self) -> f64 {
        self.bbox.center_bev.norm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// `(near, far)` BEV range intervals; `far` may be `inf`.
    pub range_buckets: Option<Vec<(f64, f64)>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: default_thresholds(),
            range_buckets: None,
        }
    }
}

/// 0.05, 0.10, …, 0.50.
pub fn default_thresholds() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 20.0).collect()
}

pub fn default_range_buckets() -> Vec<(f64, f64)> {
    vec![(0.0, 10.0), (10.0, 25.0), (25.0, f64::INFINITY)]
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() {
            return Err(Error::InvalidInput(
                "at least one IoU threshold is required".into(),
            ));
        }
        if t.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "IoU thresholds must be strictly increasing in (0, 1]".into(),
            ));
        }
        if let Some(b) = &self.range_buckets {
            if b.iter().any(|(n, f)| !(*n >= 0.0 && f > n)) {
                return Err(Error::InvalidInput(
                    "range buckets need 0 <= near < far".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub class: String,
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub near: f64,
    /// `None` for an unbounded bucket.
    pub far: Option<f64>,
    pub per_class_ap: BTreeMap<String, f64>,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    /// Class AP averaged over thresholds.
    pub per_class_ap: BTreeMap<String, f64>,
    /// Class AP at each threshold, in threshold order.
    pub per_class_threshold_ap: BTreeMap<String, Vec<f64>>,
    pub map: f64,
    pub per_bucket: Option<Vec<BucketResult>>,
    /// Classes predicted but absent from the ground truth.
    pub skipped_classes: Vec<String>,
    pub num_predictions: usize,
    pub num_ground_truth: usize,
}

/// Area under the all-point interpolated precision/recall curve.
pub fn average_precision(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mrec.push(0.0);
    mpre.push(0.0);
    mrec.extend_from_slice(recall);
    mpre.extend_from_slice(precision);
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len())
        .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
        .sum()
}

/// Greedy score-ordered matching for one class at one threshold. Returns
/// the PR curve.
fn pr_curve(preds: &[&EvalBox], gts: &[&EvalBox], threshold: f64) -> (Vec<f64>, Vec<f64>) {
    let npos = gts.len();
    let mut by_frame: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_frame.entry(g.frame.as_str()).or_default().push(i);
    }
    let mut taken = vec![false; npos];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(preds.len());
    let mut precision = Vec::with_capacity(preds.len());
    for p in preds {
        let mut best: Option<(usize, f64)> = None;
        if let Some(cands) = by_frame.get(p.frame.as_str()) {
            for &g in cands {
                if taken[g] {
                    continue;
                }
                let iou = iou3d(&p.bbox, &gts[g].bbox);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        recall.push(tp as f64 / npos as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    (recall, precision)
}

struct ClassEval {
    per_threshold: Vec<f64>,
    curves: Vec<(Vec<f64>, Vec<f64>)>,
}

fn eval_class(preds: &[&EvalBox], gts: &[&EvalBox], thresholds: &[f64]) -> ClassEval {
    let mut sorted: Vec<&EvalBox> = preds.to_vec();
    // Stable sort keeps input order among equal scores.
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut per_threshold = Vec::with_capacity(thresholds.len());
    let mut curves = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let (r, p) = pr_curve(&sorted, gts, t);
        per_threshold.push(if r.is_empty() {
            0.0
        } else {
            average_precision(&r, &p)
        });
        curves.push((r, p));
    }
    ClassEval {
        per_threshold,
        curves,
    }
}

fn class_aps(
    predictions: &[&EvalBox],
    ground_truth: &[&EvalBox],
    thresholds: &[f64],
) -> (BTreeMap<String, Vec<f64>>, BTreeMap<String, ClassEval>) {
    let gt_classes: BTreeSet<String> = ground_truth
        .iter()
        .map(|g| g.class().to_lowercase())
        .collect();
    let mut aps = BTreeMap::new();
    let mut evals = BTreeMap::new();
    for class in gt_classes {
        let preds: Vec<&EvalBox> = predictions
            .iter()
            .copied()
            .filter(|p| p.class().eq_ignore_ascii_case(&class))
            .collect();
        let gts: Vec<&EvalBox> = ground_truth
            .iter()
            .copied()
            .filter(|g| g.class().eq_ignore_ascii_case(&class))
            .collect();
        let ev = eval_class(&preds, &gts, thresholds);
        aps.insert(class.clone(), ev.per_threshold.clone());
        evals.insert(class, ev);
    }
    (aps, evals)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-class AP over the threshold sweep and the class-mean mAP.
pub fn compute_ap(
    predictions: &[EvalBox],
    ground_truth: &[EvalBox],
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    Ok(compute_ap_with_curves(predictions, ground_truth, cfg)?.0)
}

/// As [`compute_ap`], also returning every PR point for export.
pub fn compute_ap_with_curves(
    predictions: &[EvalBox],
    ground_truth: &[EvalBox],
    cfg: &EvalConfig,
) -> Result<(EvalResult, Vec<PrPoint>)> {
    cfg.validate()?;
    let preds: Vec<&EvalBox> = predictions.iter().collect();
    let gts: Vec<&EvalBox> = ground_truth.iter().collect();
    let (per_threshold, evals) = class_aps(&preds, &gts, &cfg.iou_thresholds);
    let per_class_ap: BTreeMap<String, f64> = per_threshold
        .iter()
        .map(|(c, v)| (c.clone(), mean(v.iter().copied())))
        .collect();
    let map = mean(per_class_ap.values().copied());

    let gt_classes: BTreeSet<String> = per_class_ap.keys().cloned().collect();
    let skipped: BTreeSet<String> = predictions
        .iter()
        .map(|p| p.class().to_lowercase())
        .filter(|c| !gt_classes.contains(c))
        .collect();

    let per_bucket = cfg.range_buckets.as_ref().map(|buckets| {
        buckets
            .iter()
            .map(|&(near, far)| {
                let inside = |b: &&EvalBox| b.range() >= near && b.range() < far;
                let bp: Vec<&EvalBox> = preds.iter().copied().filter(inside).collect();
                let bg: Vec<&EvalBox> = gts.iter().copied().filter(inside).collect();
                let (aps, _) = class_aps(&bp, &bg, &cfg.iou_thresholds);
                let per_class_ap: BTreeMap<String, f64> = aps
                    .iter()
                    .map(|(c, v)| (c.clone(), mean(v.iter().copied())))
                    .collect();
                BucketResult {
                    near,
                    far: far.is_finite().then_some(far),
                    map: mean(per_class_ap.values().copied()),
                    per_class_ap,
                }
            })
            .collect()
    });

    let mut points = Vec::new();
    for (class, ev) in &evals {
        for (t, (r, p)) in cfg.iou_thresholds.iter().zip(&ev.curves) {
            for (rv, pv) in r.iter().zip(p) {
                points.push(PrPoint {
                    class: class.clone(),
                    threshold: *t,
                    recall: *rv,
                    precision: *pv,
                });
            }
        }
    }

    Ok((
        EvalResult {
            thresholds: cfg.iou_thresholds.clone(),
            per_class_ap,
            per_class_threshold_ap: per_threshold,
            map,
            per_bucket,
            skipped_classes: skipped.into_iter().collect(),
            num_predictions: predictions.len(),
            num_ground_truth: ground_truth.len(),
        },
        points,
    ))
}

impl EvalResult {
    /// Plain-text summary table.
    pub fn table(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>8}", "class", "AP3D");
        for (c, ap) in &self.per_class_ap {
            let _ = writeln!(s, "{:<20} {:>8.4}", c, ap);
        }
        let _ = writeln!(s, "{:<20} {:>8.4}", "mAP", self.map);
        if let Some(buckets) = &self.per_bucket {
            for b in buckets {
                let far = b.far.map_or("inf".to_string(), |f| format!("{f}"));
                let _ = writeln!(
                    s,
                    "{:<20} {:>8.4}",
                    format!("mAP [{}, {})", b.near, far),
                    b.map
                );
            }
        }
        if !self.skipped_classes.is_empty() {
            let _ = writeln!(
                s,
                "skipped (not in ground truth): {}",
                self.skipped_classes.join(", ")
            );
        }
        s
    }
}

pub fn pr_points_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("class,threshold,recall,precision\n");
    for p in points {
        s.push_str(&format!(
            "{},{:.2},{:.6},{:.6}\n",
            p.class, p.threshold, p.recall, p.precision
        ));
    }
    s
}
