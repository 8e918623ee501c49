//! Prior gating of coarse boxes and the corner-anchored proposal search.
//!
//! A coarse box whose dimensions fall outside `[tau_1, tau_2]` times its
//! class prior is replaced by the best of eight prior-sized proposals, each
//! anchored at one BEV corner of the coarse box. Proposals are scored by
//! `trace + lambda * point_ratio`, where `trace` measures how far points sit
//! behind the first intersection of their camera ray with the proposal and
//! `point_ratio` is the fraction of points left outside it.

use crate::boxes::{Bev, OrientedBox3, Provenance};
use crate::camera::PointCloud;
use crate::error::{Error, Result};
use crate::priors::{DimensionPrior, PriorTable};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub tau_1: f64,
    pub tau_2: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            tau_1: 0.8,
            tau_2: 1.2,
        }
    }
}

impl GateThresholds {
    pub fn new(tau_1: f64, tau_2: f64) -> Result<Self> {
        if !(tau_1 > 0.0 && tau_1 <= 1.0 && tau_2 >= 1.0 && tau_2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gate thresholds must satisfy 0 < tau_1 <= 1 <= tau_2, got ({tau_1}, {tau_2})"
            )));
        }
        Ok(Self { tau_1, tau_2 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimVerdict {
    Valid,
    Undersized,
    Oversized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub width: DimVerdict,
    pub height: DimVerdict,
    pub length: DimVerdict,
}

impl GateVerdict {
    pub fn is_valid(&self) -> bool {
        [self.width, self.height, self.length]
            .iter()
            .all(|v| *v == DimVerdict::Valid)
    }
}

fn judge(value: f64, prior: f64, thr: &GateThresholds) -> DimVerdict {
    // Closed interval; the relative slack only absorbs rounding of `tau * prior`.
    let slack = 1e-12 * prior;
    if value < thr.tau_1 * prior - slack {
        DimVerdict::Undersized
    } else if value > thr.tau_2 * prior + slack {
        DimVerdict::Oversized
    } else {
        DimVerdict::Valid
    }
}

/// Per-dimension check of a coarse box against its class prior.
pub fn gate_box<T: Real>(
    coarse: &OrientedBox3<T>,
    prior: &DimensionPrior,
    thr: &GateThresholds,
) -> Result<GateVerdict> {
    if !coarse.class_name.eq_ignore_ascii_case(&prior.class_name) {
        return Err(Error::InvalidInput(format!(
            "box class `{}` does not match prior class `{}`",
            coarse.class_name, prior.class_name
        )));
    }
    // Both sides canonical: compare short BEV side to short, long to long.
    let (w, l) = {
        let (a, b) = (coarse.width.to_f64_lossy(), coarse.length.to_f64_lossy());
        (a.min(b), a.max(b))
    };
    Ok(GateVerdict {
        width: judge(w, prior.width, thr),
        height: judge(coarse.height.to_f64_lossy(), prior.height, thr),
        length: judge(l, prior.length, thr),
    })
}

/// Looks up the class prior and gates; a missing prior is an error.
pub fn gate_with_table<T: Real>(
    coarse: &OrientedBox3<T>,
    priors: &PriorTable,
    thr: &GateThresholds,
) -> Result<GateVerdict> {
    gate_box(coarse, priors.require(&coarse.class_name)?, thr)
}

/// The eight corner-anchored, prior-sized proposals.
///
/// Index `2 * corner + variant`: corners in [`OrientedBox3::corners_bev`]
/// order; variant 0 keeps the prior length along the coarse length axis,
/// variant 1 puts it along the coarse width axis. Each proposal covers its
/// anchor corner and extends towards the coarse box interior.
pub fn propose_boxes<T: Real>(
    coarse: &OrientedBox3<T>,
    prior: &DimensionPrior,
) -> [OrientedBox3<T>; 8] {
    let half = T::lit(0.5);
    let u = coarse.length_axis();
    let v = coarse.width_axis();
    let (pl, pw, ph) = (
        T::lit(prior.length),
        T::lit(prior.width),
        T::lit(prior.height),
    );
    let corners = coarse.corners_bev();
    let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    std::array::from_fn(|k| {
        let (corner, variant) = (k / 2, k % 2);
        let (sa, sb) = (T::lit(signs[corner].0), T::lit(signs[corner].1));
        // Extents along u and v, and the yaw that makes `length` the long side.
        let (ext_u, ext_v, yaw) = if variant == 0 {
            (pl, pw, coarse.yaw)
        } else {
            (pw, pl, coarse.yaw + T::FRAC_PI_2())
        };
        let center = corners[corner]
            .sub(u.scale(sa * ext_u * half))
            .sub(v.scale(sb * ext_v * half));
        OrientedBox3::new(
            center,
            coarse.y_bottom,
            pw,
            ph,
            pl,
            yaw,
            coarse.class_name.clone(),
            Provenance::Searched,
        )
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAggregation {
    #[default]
    Mean,
    Sum,
}

/// Ray parameter of the first boundary crossing of `origin + t * dir`
/// (`t >= 0`) with the box's BEV rectangle, if any.
pub(crate) fn first_hit<T: Real>(b: &OrientedBox3<T>, origin: Bev<T>, dir: Bev<T>) -> Option<T> {
    let half = T::lit(0.5);
    let (oa, ob) = b.local_bev(origin);
    let (da, db) = (dir.dot(b.length_axis()), dir.dot(b.width_axis()));
    let mut t_in = T::neg_infinity();
    let mut t_out = T::infinity();
    for (o, d, h) in [(oa, da, b.length * half), (ob, db, b.width * half)] {
        if d == T::zero() {
            if o.abs() > h {
                return None;
            }
            continue;
        }
        let (t1, t2) = ((-h - o) / d, (h - o) / d);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        t_in = t_in.max(lo);
        t_out = t_out.min(hi);
    }
    if t_out < t_in.max(T::zero()) {
        return None;
    }
    // A camera inside the rectangle first meets the boundary on the way out.
    Some(if t_in >= T::zero() { t_in } else { t_out })
}

/// BEV distance from each point to the first intersection of its camera ray
/// with the box, averaged over points whose ray hits the box.
pub fn ray_tracing_loss<T: Real>(
    cloud: &PointCloud<T>,
    b: &OrientedBox3<T>,
    camera_bev: Bev<T>,
) -> T {
    ray_tracing_loss_with(cloud, b, camera_bev, TraceAggregation::Mean)
}

pub fn ray_tracing_loss_with<T: Real>(
    cloud: &PointCloud<T>,
    b: &OrientedBox3<T>,
    camera_bev: Bev<T>,
    aggregation: TraceAggregation,
) -> T {
    let mut sum = T::zero();
    let mut hits = 0usize;
    for p in cloud.points() {
        let dir = Bev::of(*p).sub(camera_bev);
        if dir.x == T::zero() && dir.z == T::zero() {
            continue;
        }
        if let Some(t) = first_hit(b, camera_bev, dir) {
            sum = sum + (t - T::one()).abs() * dir.norm();
            hits += 1;
        }
    }
    match aggregation {
        TraceAggregation::Sum => sum,
        TraceAggregation::Mean if hits > 0 => sum / T::lit(hits as f64),
        TraceAggregation::Mean => T::zero(),
    }
}

pub fn count_inside<T: Real>(cloud: &PointCloud<T>, b: &OrientedBox3<T>) -> usize {
    cloud
        .points()
        .iter()
        .filter(|p| b.contains(**p, T::GEOM_EPS))
        .count()
}

/// `1 - N_inside / N_all` over the closed 3D box.
pub fn point_ratio_loss<T: Real>(cloud: &PointCloud<T>, b: &OrientedBox3<T>) -> Result<T> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("point ratio of an empty cloud".into()));
    }
    let inside = count_inside(cloud, b);
    Ok(T::one() - T::lit(inside as f64) / T::lit(cloud.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lambda: f64,
    pub thresholds: GateThresholds,
    pub min_points: usize,
    pub aggregation: TraceAggregation,
    /// Weight on the ray-tracing term; 0 leaves the point-ratio term alone.
    pub trace_weight: f64,
}

impl SearchConfig {
    pub fn outdoor() -> Self {
        Self {
            lambda: 10.0,
            thresholds: GateThresholds::default(),
            min_points: 20,
            aggregation: TraceAggregation::Mean,
            trace_weight: 1.0,
        }
    }

    pub fn indoor() -> Self {
        Self {
            lambda: 5.0,
            ..Self::outdoor()
        }
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::outdoor()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalScore {
    pub index: usize,
    pub trace: f64,
    pub ratio: f64,
    pub total: f64,
    pub center_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome<T> {
    pub best: OrientedBox3<T>,
    pub best_index: usize,
    pub scores: Vec<ProposalScore>,
}

impl<T> SearchOutcome<T> {
    pub fn best_score(&self) -> &ProposalScore {
        &self.scores[self.best_index]
    }
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Scores candidates and returns the index of the minimizer of
/// `trace_weight * trace + lambda * ratio`. Ties go to the candidate whose BEV
/// center is closer to `reference`, then to the lower index.
pub fn select_proposal<T: Real>(
    cloud: &PointCloud<T>,
    candidates: &[OrientedBox3<T>],
    reference: Bev<T>,
    cfg: &SearchConfig,
    camera_bev: Bev<T>,
) -> Result<(usize, Vec<ProposalScore>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no proposals to select from".into()));
    }
    let scores = candidates
        .iter()
        .enumerate()
        .map(|(index, b)| {
            let trace = ray_tracing_loss_with(cloud, b, camera_bev, cfg.aggregation).to_f64_lossy();
            let ratio = point_ratio_loss(cloud, b)?.to_f64_lossy();
            Ok(ProposalScore {
                index,
                trace,
                ratio,
                total: cfg.trace_weight * trace + cfg.lambda * ratio,
                center_distance: b.center_bev.sub(reference).norm().to_f64_lossy(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for s in &scores[1..] {
        let cur = &scores[best];
        let better = if nearly_equal(s.total, cur.total) {
            !nearly_equal(s.center_distance, cur.center_distance)
                && s.center_distance < cur.center_distance
        } else {
            s.total < cur.total
        };
        if better {
            best = s.index;
        }
    }
    Ok((best, scores))
}

/// Picks the best of the eight proposals for a gated coarse box.
pub fn search_best_box<T: Real>(
    cloud: &PointCloud<T>,
    coarse: &OrientedBox3<T>,
    prior: &DimensionPrior,
    cfg: &SearchConfig,
    camera_bev: Bev<T>,
) -> Result<SearchOutcome<T>> {
    let proposals = propose_boxes(coarse, prior);
    let (best_index, scores) =
        select_proposal(cloud, &proposals, coarse.center_bev, cfg, camera_bev)?;
    Ok(SearchOutcome {
        best: proposals[best_index].clone(),
        best_index,
        scores,
    })
}
