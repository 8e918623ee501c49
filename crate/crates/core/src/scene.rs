//! Synthetic cuboid scenes with exact ground truth.
//!
//! Scenes are described in the level frame: the camera frame rotated so the
//! ground is horizontal. It keeps the camera origin and y-down axes, so the
//! ground is the plane `y = camera height` and a resting box has
//! `y_bottom = camera height`. Depth is rendered by exact per-pixel ray
//! casting; noise is applied to the clean render.

use crate::boxes::{Bev, OrientedBox3, Provenance};
use crate::camera::{CameraIntrinsics, DepthMap};
use crate::error::{Error, Result};
use crate::eval::bev_intersection_area;
use crate::ground::{GroundAlignedFrame, GroundPlane};
use crate::linalg::{Mat3, Vec3};
use crate::morphology::{dilate, BinaryMask, InstanceObservation, PixelBox};
use crate::pipeline::{FrameInput, SceneKind};
use crate::priors::DimensionPrior;
use crate::search::GateThresholds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Height of the optical center above the ground, meters.
    pub height: f64,
    /// Downward pitch, radians.
    pub pitch: f64,
}

impl CameraPose {
    /// Camera-to-level rotation.
    pub fn level_frame(&self) -> GroundAlignedFrame<f64> {
        GroundAlignedFrame {
            rotation: Mat3::axis_angle(Vec3::new(1.0, 0.0, 0.0), -self.pitch),
        }
    }

    /// The ground plane in camera coordinates.
    pub fn ground_plane(&self) -> GroundPlane<f64> {
        GroundPlane::from_camera_pose(self.height, self.pitch)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of multiplicative depth noise.
    pub depth_sigma_rel: f64,
    /// Dilation passes applied to each instance mask.
    pub boundary_bleed_px: u32,
    /// Fraction of pixels whose depth is invalidated.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.depth_sigma_rel >= 0.0 && (0.0..=1.0).contains(&self.dropout_rate);
        if !ok || !self.depth_sigma_rel.is_finite() {
            return Err(Error::InvalidInput(format!("bad noise spec {self:?}")));
        }
        Ok(())
    }

    fn is_clean(&self) -> bool {
        self.depth_sigma_rel == 0.0 && self.boundary_bleed_px == 0 && self.dropout_rate == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics<f64>,
    pub pose: CameraPose,
    /// Ground-truth boxes in the level frame.
    pub objects: Vec<OrientedBox3<f64>>,
    pub noise: NoiseSpec,
    /// Ground farther than this (horizontal distance) renders as no return.
    pub max_ground_range: f64,
    pub scene_kind: SceneKind,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.noise.validate()?;
        if !(self.pose.height > 0.0 && self.pose.height.is_finite()) {
            return Err(Error::InvalidInput("camera height must be positive".into()));
        }
        for b in &self.objects {
            if b.y_bottom > self.pose.height + 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "`{}` sinks below the ground",
                    b.class_name
                )));
            }
            if !(b.width > 0.0 && b.height > 0.0 && b.length > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "`{}` has a non-positive dimension",
                    b.class_name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    /// Level-frame box.
    pub bbox: OrientedBox3<f64>,
    /// Index into [`FrameInput::observations`], if the object was visible.
    pub instance: Option<usize>,
    /// Pixels the object owns in the clean render.
    pub visible_pixels: usize,
    /// Pixels it would cover with every other object removed.
    pub unoccluded_pixels: usize,
    /// Projected 2D box, clipped to the image.
    pub box2d: Option<PixelBox>,
}

impl GroundTruthObject {
    pub fn visible_fraction(&self) -> f64 {
        if self.unoccluded_pixels == 0 {
            0.0
        } else {
            self.visible_pixels as f64 / self.unoccluded_pixels as f64
        }
    }

    pub fn is_occluded(&self) -> bool {
        self.visible_pixels < self.unoccluded_pixels
    }

    pub fn zero_visibility(&self) -> bool {
        self.visible_pixels == 0
    }
}

#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub input: FrameInput,
    pub ground_truth: Vec<GroundTruthObject>,
    /// Ground plane in camera coordinates.
    pub plane: GroundPlane<f64>,
    pub level: GroundAlignedFrame<f64>,
}

const GROUND_ID: i32 = -2;
const NO_HIT: i32 = -1;

/// Entry parameter of a ray from the origin into a level-frame box, or `None`.
fn ray_box(b: &OrientedBox3<f64>, d: Vec3<f64>) -> Option<f64> {
    let (oa, ob) = b.local_bev(Bev::new(0.0, 0.0));
    let db = Bev::of(d);
    let slabs = [
        (oa, db.dot(b.length_axis()), -0.5 * b.length, 0.5 * b.length),
        (ob, db.dot(b.width_axis()), -0.5 * b.width, 0.5 * b.width),
        (0.0, d.y, b.y_top(), b.y_bottom),
    ];
    let (mut t_in, mut t_out) = (f64::NEG_INFINITY, f64::INFINITY);
    for (o, dv, lo, hi) in slabs {
        if dv == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (t1, t2) = ((lo - o) / dv, (hi - o) / dv);
        t_in = t_in.max(t1.min(t2));
        t_out = t_out.min(t1.max(t2));
    }
    (t_in <= t_out && t_in > 0.0).then_some(t_in)
}

fn box_corners(b: &OrientedBox3<f64>) -> [Vec3<f64>; 8] {
    let c = b.corners_bev();
    std::array::from_fn(|k| {
        let p = c[k % 4];
        Vec3::new(p.x, if k < 4 { b.y_bottom } else { b.y_top() }, p.z)
    })
}

/// Clipped projected bounds of a level-frame box; the whole image when part
/// of it is behind the camera, `None` when all of it is.
fn projected_bounds(
    b: &OrientedBox3<f64>,
    level: &GroundAlignedFrame<f64>,
    intr: &CameraIntrinsics<f64>,
) -> Option<PixelBox> {
    let full = PixelBox {
        u_min: 0,
        v_min: 0,
        u_max: intr.width - 1,
        v_max: intr.height - 1,
    };
    let cam: Vec<Vec3<f64>> = box_corners(b).iter().map(|p| level.to_camera(*p)).collect();
    if cam.iter().all(|p| p.z <= 0.0) {
        return None;
    }
    if cam.iter().any(|p| p.z <= 1e-3) {
        return Some(full);
    }
    let (mut u0, mut v0, mut u1, mut v1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &cam {
        let (u, v) = intr.project(*p)?;
        u0 = u0.min(u);
        v0 = v0.min(v);
        u1 = u1.max(u);
        v1 = v1.max(v);
    }
    let (w, h) = (intr.width as f64 - 1.0, intr.height as f64 - 1.0);
    if u1 < 0.0 || v1 < 0.0 || u0 > w || v0 > h {
        return None;
    }
    Some(PixelBox {
        u_min: u0.floor().max(0.0) as u32,
        v_min: v0.floor().max(0.0) as u32,
        u_max: u1.ceil().min(w) as u32,
        v_max: v1.ceil().min(h) as u32,
    })
}

fn in_box(b: &PixelBox, u: u32, v: u32) -> bool {
    u >= b.u_min && u <= b.u_max && v >= b.v_min && v <= b.v_max
}

struct CleanRender {
    depth: Vec<f64>,
    ids: Vec<i32>,
    bounds: Vec<Option<PixelBox>>,
}

fn render_clean(spec: &SceneSpec, level: &GroundAlignedFrame<f64>) -> CleanRender {
    let intr = &spec.intrinsics;
    let (w, h) = (intr.width as usize, intr.height as usize);
    let bounds: Vec<Option<PixelBox>> = spec
        .objects
        .iter()
        .map(|b| projected_bounds(b, level, intr))
        .collect();
    let height = spec.pose.height;
    let rows: Vec<(Vec<f64>, Vec<i32>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut depth = vec![0.0; w];
            let mut ids = vec![NO_HIT; w];
            for u in 0..w {
                let d = level.to_ground(intr.pixel_ray(u as f64, v as f64));
                let mut best = f64::INFINITY;
                let mut id = NO_HIT;
                if d.y > 0.0 {
                    let t = height / d.y;
                    if Bev::of(d).norm() * t <= spec.max_ground_range {
                        best = t;
                        id = GROUND_ID;
                    }
                }
                for (k, b) in spec.objects.iter().enumerate() {
                    if !bounds[k].is_some_and(|pb| in_box(&pb, u as u32, v as u32)) {
                        continue;
                    }
                    if let Some(t) = ray_box(b, d) {
                        if t < best {
                            best = t;
                            id = k as i32;
                        }
                    }
                }
                if id != NO_HIT {
                    depth[u] = best;
                    ids[u] = id;
                }
            }
            (depth, ids)
        })
        .collect();
    let mut depth = Vec::with_capacity(w * h);
    let mut ids = Vec::with_capacity(w * h);
    for (d, i) in rows {
        depth.extend(d);
        ids.extend(i);
    }
    CleanRender { depth, ids, bounds }
}

/// Pixels of `b` inside `bounds` when it is alone in the scene.
fn alone_pixels(
    b: &OrientedBox3<f64>,
    bounds: &PixelBox,
    level: &GroundAlignedFrame<f64>,
    intr: &CameraIntrinsics<f64>,
) -> usize {
    (bounds.v_min..=bounds.v_max)
        .into_par_iter()
        .map(|v| {
            (bounds.u_min..=bounds.u_max)
                .filter(|u| {
                    ray_box(b, level.to_ground(intr.pixel_ray(*u as f64, v as f64))).is_some()
                })
                .count()
        })
        .sum()
}

/// Detector confidence stand-in: grows with visibility.
fn synthetic_score(visible_fraction: f64) -> f64 {
    0.5 + 0.5 * visible_fraction.clamp(0.0, 1.0)
}

/// Renders depth, instance masks and a ground mask.
pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let intr = spec.intrinsics;
    let level = spec.pose.level_frame();
    let (w, h) = (intr.width, intr.height);
    let clean = render_clean(spec, &level);

    let mut ground_truth = Vec::with_capacity(spec.objects.len());
    let mut observations = Vec::new();
    for (k, b) in spec.objects.iter().enumerate() {
        let mut mask = BinaryMask::new(w, h);
        let mut visible = 0usize;
        if let Some(pb) = clean.bounds[k] {
            for v in pb.v_min..=pb.v_max {
                for u in pb.u_min..=pb.u_max {
                    if clean.ids[v as usize * w as usize + u as usize] == k as i32 {
                        mask.set(u, v, true);
                        visible += 1;
                    }
                }
            }
        }
        let unoccluded = clean.bounds[k].map_or(0, |pb| alone_pixels(b, &pb, &level, &intr));
        let mut gt = GroundTruthObject {
            bbox: OrientedBox3 {
                provenance: Provenance::GroundTruth,
                ..b.clone()
            },
            instance: None,
            visible_pixels: visible,
            unoccluded_pixels: unoccluded,
            box2d: clean.bounds[k],
        };
        if visible > 0 {
            let mask = dilate(&mask, spec.noise.boundary_bleed_px);
            gt.instance = Some(observations.len());
            observations.push(InstanceObservation::new(
                b.class_name.clone(),
                mask,
                synthetic_score(gt.visible_fraction()),
            )?);
        }
        ground_truth.push(gt);
    }

    let ground_mask =
        BinaryMask::from_vec(w, h, clean.ids.iter().map(|i| *i == GROUND_ID).collect())?;
    let ground_observation = if ground_mask.is_empty() {
        None
    } else {
        Some(InstanceObservation::new("ground", ground_mask, 1.0)?)
    };

    let depth = if spec.noise.is_clean() {
        clean.depth
    } else {
        apply_depth_noise(clean.depth, w as usize, &spec.noise)
    };
    let depth = DepthMap::from_values(w, h, depth)?;
    Ok(RenderedScene {
        input: FrameInput {
            intrinsics: intr,
            depth,
            observations,
            ground_observation,
            scene_kind: spec.scene_kind,
        },
        ground_truth,
        plane: spec.pose.ground_plane(),
        level,
    })
}

/// Multiplicative Gaussian noise and dropout. Each row draws from its own
/// ChaCha stream, so the result does not depend on scheduling.
fn apply_depth_noise(mut depth: Vec<f64>, width: usize, noise: &NoiseSpec) -> Vec<f64> {
    depth
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(row, values)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(row as u64);
            for d in values.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                let drop = rng.random::<f64>() < noise.dropout_rate;
                if *d > 0.0 {
                    *d *= (1.0 + noise.depth_sigma_rel * n).max(1e-3);
                }
                if drop {
                    *d = 0.0;
                }
            }
        });
    depth
}

/// Knobs for [`generate_suite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub scenes: usize,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics<f64>,
    pub pose: CameraPose,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Classes to sample from, with their prior dimensions.
    pub classes: Vec<DimensionPrior>,
    /// Dimensions are jittered uniformly in `[tau_1, tau_2]` times the prior.
    pub jitter: GateThresholds,
    /// Target fraction of instances that are heavily occluded.
    pub occlusion_rate: f64,
    /// Visible-fraction band for occluded instances.
    pub occluded_visibility: (f64, f64),
    /// Forward distance band for object centers, meters.
    pub range: (f64, f64),
    pub noise: NoiseSpec,
    pub max_ground_range: f64,
    pub scene_kind: SceneKind,
}

impl SuiteSpec {
    /// An outdoor suite: elevated camera, 960×540 pixels.
    pub fn outdoor(classes: Vec<DimensionPrior>) -> Self {
        Self {
            scenes: 200,
            seed: 0,
            intrinsics: CameraIntrinsics::new(700.0, 700.0, 479.5, 269.5, 960, 540)
                .expect("valid intrinsics"),
            pose: CameraPose {
                height: 20.0,
                pitch: 0.9,
            },
            objects_min: 2,
            objects_max: 5,
            classes,
            jitter: GateThresholds::default(),
            occlusion_rate: 0.0,
            occluded_visibility: (0.2, 0.6),
            range: (10.0, 28.0),
            noise: NoiseSpec::clean(),
            max_ground_range: 80.0,
            scene_kind: SceneKind::Outdoor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.noise.validate()?;
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.classes.is_empty() {
            return bad("suite needs at least one class");
        }
        if self.objects_min > self.objects_max {
            return bad("objects_min exceeds objects_max");
        }
        if !(0.0..=0.5).contains(&self.occlusion_rate) {
            return bad("occlusion rate must be in [0, 0.5]");
        }
        let (lo, hi) = self.occluded_visibility;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("occluded visibility band must satisfy 0 < lo < hi < 1");
        }
        if !(self.range.0 > 0.0 && self.range.0 < self.range.1) {
            return bad("range must satisfy 0 < near < far");
        }
        if !(self.pose.height > 0.0) {
            return bad("camera height must be positive");
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 60;
const BBOX_MARGIN_PX: u32 = 3;

struct Placer<'a> {
    suite: &'a SuiteSpec,
    level: GroundAlignedFrame<f64>,
    placed: Vec<OrientedBox3<f64>>,
    regions: Vec<PixelBox>,
}

impl Placer<'_> {
    fn sample_box(
        &self,
        rng: &mut ChaCha8Rng,
        range: (f64, f64),
        bearing: Option<f64>,
    ) -> OrientedBox3<f64> {
        let s = self.suite;
        let prior = &s.classes[rng.random_range(0..s.classes.len())];
        let (t1, t2) = (s.jitter.tau_1, s.jitter.tau_2);
        let mut jit = |x: f64| x * rng.random_range(t1..=t2);
        let (w, h, l) = (jit(prior.width), jit(prior.height), jit(prior.length));
        let z = rng.random_range(range.0..=range.1);
        let half_fov = (0.5 * s.intrinsics.width as f64 / s.intrinsics.f_u).atan();
        let theta = bearing.unwrap_or_else(|| rng.random_range(-0.8 * half_fov..=0.8 * half_fov));
        let yaw = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        OrientedBox3::new(
            Bev::new(z * theta.tan(), z),
            s.pose.height,
            w,
            h,
            l,
            yaw,
            prior.class_name.clone(),
            Provenance::GroundTruth,
        )
    }

    /// Fully inside the image, not overlapping earlier groups in BEV.
    fn bounds_if_clear(
        &self,
        b: &OrientedBox3<f64>,
        others: &[OrientedBox3<f64>],
    ) -> Option<PixelBox> {
        let intr = &self.suite.intrinsics;
        let pb = projected_bounds(b, &self.level, intr)?;
        let m = BBOX_MARGIN_PX;
        if pb.u_min < m || pb.v_min < m || pb.u_max + m >= intr.width || pb.v_max + m >= intr.height
        {
            return None;
        }
        let mut grown = b.clone();
        grown.width += 0.5;
        grown.length += 0.5;
        if self
            .placed
            .iter()
            .chain(others)
            .any(|o| bev_intersection_area(&grown, o) > 0.0)
        {
            return None;
        }
        Some(pb)
    }

    fn region_free(&self, pb: &PixelBox) -> bool {
        let m = BBOX_MARGIN_PX;
        self.regions.iter().all(|r| {
            pb.u_max + m < r.u_min
                || r.u_max + m < pb.u_min
                || pb.v_max + m < r.v_min
                || r.v_max + m < pb.v_min
        })
    }

    fn try_single(&mut self, rng: &mut ChaCha8Rng) -> bool {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let b = self.sample_box(rng, self.suite.range, None);
            if let Some(pb) = self.bounds_if_clear(&b, &[]) {
                if self.region_free(&pb) {
                    self.placed.push(b);
                    self.regions.push(pb);
                    return true;
                }
            }
        }
        false
    }

    /// A target plus a nearer occluder hiding part of it.
    fn try_pair(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let s = self.suite;
        let near = (s.range.0 + 6.0).min(s.range.1);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let target = self.sample_box(rng, (near, s.range.1), None);
            let Some(tb) = self.bounds_if_clear(&target, &[]) else {
                continue;
            };
            let bearing = target.center_bev.x.atan2(target.center_bev.z);
            for _ in 0..8 {
                let z_t = target.center_bev.z;
                let z_o = z_t - rng.random_range(3.0..=6.0);
                if z_o < s.range.0 * 0.6 {
                    continue;
                }
                let shift =
                    rng.random_range(-1.0..=1.0) * 0.6 * (target.length.max(target.width) / z_t);
                let occluder = self.sample_box(rng, (z_o, z_o), Some(bearing + shift));
                let Some(ob) = self.bounds_if_clear(&occluder, std::slice::from_ref(&target))
                else {
                    continue;
                };
                let region = union_box(&tb, &ob);
                if !self.region_free(&region) {
                    continue;
                }
                let frac =
                    visible_fraction_with(&target, &occluder, &tb, &self.level, &s.intrinsics);
                if frac >= s.occluded_visibility.0 && frac <= s.occluded_visibility.1 {
                    self.placed.push(occluder);
                    self.placed.push(target);
                    self.regions.push(region);
                    return true;
                }
            }
        }
        false
    }
}

fn union_box(a: &PixelBox, b: &PixelBox) -> PixelBox {
    PixelBox {
        u_min: a.u_min.min(b.u_min),
        v_min: a.v_min.min(b.v_min),
        u_max: a.u_max.max(b.u_max),
        v_max: a.v_max.max(b.v_max),
    }
}

fn visible_fraction_with(
    target: &OrientedBox3<f64>,
    occluder: &OrientedBox3<f64>,
    bounds: &PixelBox,
    level: &GroundAlignedFrame<f64>,
    intr: &CameraIntrinsics<f64>,
) -> f64 {
    let (mut alone, mut visible) = (0usize, 0usize);
    for v in bounds.v_min..=bounds.v_max {
        for u in bounds.u_min..=bounds.u_max {
            let d = level.to_ground(intr.pixel_ray(u as f64, v as f64));
            if let Some(t) = ray_box(target, d) {
                alone += 1;
                if ray_box(occluder, d).is_none_or(|o| o > t) {
                    visible += 1;
                }
            }
        }
    }
    if alone == 0 {
        0.0
    } else {
        visible as f64 / alone as f64
    }
}

/// Reproducible randomized scenes.
///
/// Each placement slot becomes an occluded pair with probability
/// `r / (1 - r)` for occlusion rate `r`, which makes `r` the expected
/// fraction of occluded instances. Groups never overlap in BEV or in the
/// image; with rate 0 no two objects overlap in the image.
pub fn generate_suite(suite: &SuiteSpec) -> Result<Vec<SceneSpec>> {
    suite.validate()?;
    let level = suite.pose.level_frame();
    let r = suite.occlusion_rate;
    let pair_p = if r >= 0.5 { 1.0 } else { r / (1.0 - r) };
    let mut scenes = Vec::with_capacity(suite.scenes);
    for i in 0..suite.scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
        rng.set_stream(i as u64);
        let slots = rng.random_range(suite.objects_min..=suite.objects_max);
        let mut placer = Placer {
            suite,
            level,
            placed: Vec::new(),
            regions: Vec::new(),
        };
        for _ in 0..slots {
            if rng.random::<f64>() < pair_p {
                placer.try_pair(&mut rng);
            } else {
                placer.try_single(&mut rng);
            }
        }
        let noise = NoiseSpec {
            seed: suite.noise.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..suite.noise
        };
        scenes.push(SceneSpec {
            intrinsics: suite.intrinsics,
            pose: suite.pose,
            objects: placer.placed,
            noise,
            max_ground_range: suite.max_ground_range,
            scene_kind: suite.scene_kind,
        });
    }
    Ok(scenes)
}
