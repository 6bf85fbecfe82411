//! Object-driven next-best-view exploration plus the randomized, coverage
//! and initialization-only baseline strategies.
//!
//! Every strategy starts with the same four top views over the desk corners;
//! afterward the object-driven strategy picks the candidate view maximizing
//! the entropy-based utility, gated per object by the active flag.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objmap::{mad_prefilter, slice_filter, GlobalObjectMap, ObjectEstimate, ObjectPose};
use crate::pose::{self, ObsSlice, PlaneModel, SolverOptions};
use crate::scene::{DeskBounds, DeskScene};
use crate::sensor::{self, CameraIntrinsics, CameraPose, NoiseModel, Observation};

/// Maximum exploration views after the four-corner initialization.
pub const DEFAULT_BUDGET: usize = 10;
/// Candidate views evaluated per NBV decision.
pub const DEFAULT_CANDIDATES: usize = 64;
/// Weight of the occlusion / volume-stability terms in the utility.
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// Hemisphere shell for candidate views, meters / radians.
pub const SHELL_RADIUS: (f64, f64) = (0.5, 0.9);
pub const SHELL_ELEVATION_DEG: (f64, f64) = (20.0, 85.0);

/// Height of the four initialization views above the desk plane. The eyes
/// sit over the corner quadrants (60% of the way from the desk center to
/// each corner) so the four straight-down footprints jointly cover the desk.
const INIT_HEIGHT: f64 = 1.4;
const INIT_CORNER_PULL: f64 = 0.6;
/// Height of the coverage lawnmower path above the desk plane.
const COVERAGE_HEIGHT: f64 = 0.6;

/// Cap on accumulated desk points kept for plane refitting.
const DESK_POINT_CAP: usize = 4000;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("volume history is empty; H_V is undefined")]
    EmptyHistory,
    #[error("exploration step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ObjectDriven,
    Randomized,
    Coverage,
    InitOnly,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "object_driven" => Ok(Strategy::ObjectDriven),
            "randomized" => Ok(Strategy::Randomized),
            "coverage" => Ok(Strategy::Coverage),
            "init_only" => Ok(Strategy::InitOnly),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::ObjectDriven => "object_driven",
            Strategy::Randomized => "randomized",
            Strategy::Coverage => "coverage",
            Strategy::InitOnly => "init_only",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    HemisphereSample,
    CornerInit,
    CoverageWaypoint,
    Random,
}

#[derive(Debug, Clone)]
pub struct CandidateView {
    pub pose: CameraPose,
    pub kind: ViewKind,
}

/// Per-object exploration features.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Total surface-grid entropy, bits.
    pub h_obj: f64,
    /// Mean entropy per cell, bits, in [0, 1].
    pub h_bar: f64,
    /// Occupied-cell ratio in [0, 1].
    pub r_o: f64,
    /// Mean projected-bbox overlap with other visible objects, in [0, 1].
    pub r_iou: f64,
    /// Latest peak-normalized volume, in (0, 1].
    pub v_bar: f64,
    /// Active flag: false once the object counts as fully explored.
    pub s_flag: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct UncertaintyTerms {
    pub h_iou: f64,
    pub h_v: f64,
}

/// -p log2 p, continued by 0 at p = 0.
fn point_entropy(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Peak-normalized standard-normal density of the latest volume's z-score
/// over the (normalized) history; 1 for a perfectly stable volume.
pub fn volume_confidence(history: &[f64]) -> Result<f64, ExploreError> {
    let last = *history.last().ok_or(ExploreError::EmptyHistory)?;
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    let var = history.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt().max(1e-6);
    let z = (last - mean) / sigma;
    Ok((-0.5 * z * z).exp())
}

/// The two lambda-weighted uncertainty terms of the utility: occlusion
/// entropy at p = R_IoU / 2 and volume-stability entropy at the
/// peak-normalized density of the latest volume.
pub fn uncertainty_terms(x: &FeatureVector, history: &[f64]) -> Result<UncertaintyTerms, ExploreError> {
    let p_v = volume_confidence(history)?;
    Ok(UncertaintyTerms {
        h_iou: point_entropy(x.r_iou / 2.0),
        h_v: point_entropy(p_v),
    })
}

/// The per-object gate of the utility. Returns false ("fully explored")
/// exactly when the grids look settled (mean entropy below 0.5 bits or
/// more than half the cells occupied) *and* the volume estimate is stable.
pub fn active_flag(x: &FeatureVector, p_v: f64) -> bool {
    let settled = x.h_bar < 0.5 || x.r_o > 0.5;
    !(settled && p_v > 0.8)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Candidate views on an upper hemisphere shell over the desk center.
/// Look-at targets cycle through the desk center and the given object
/// centers so that every object has aimed candidates.
pub fn candidate_views(
    desk_height: f64,
    bounds: &DeskBounds,
    targets: &[Vector3<f64>],
    n: usize,
    seed: u64,
) -> Vec<CandidateView> {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = bounds.center();
    let center3 = Vector3::new(center.x, center.y, desk_height);
    let (el_lo, el_hi) = (
        SHELL_ELEVATION_DEG.0.to_radians(),
        SHELL_ELEVATION_DEG.1.to_radians(),
    );
    let mut views = Vec::with_capacity(n);
    for i in 0..n {
        let r = rng.gen_range(SHELL_RADIUS.0..SHELL_RADIUS.1);
        let az = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let el = rng.gen_range(el_lo..el_hi);
        let eye = center3
            + Vector3::new(r * az.cos() * el.cos(), r * az.sin() * el.cos(), r * el.sin());
        let target = if targets.is_empty() {
            center3
        } else {
            // Index 0 keeps a desk-center view in every candidate set.
            match i % (targets.len() + 1) {
                0 => center3,
                k => targets[k - 1],
            }
        };
        views.push(CandidateView {
            pose: CameraPose::look_at(eye, target),
            kind: ViewKind::HemisphereSample,
        });
    }
    views
}

fn feature_vector(est: &ObjectEstimate, r_iou: f64) -> FeatureVector {
    let comp = est
        .completeness()
        .expect("surface-grid probabilities stay in (0, 1)");
    let history = est.normalized_volume_history();
    let p_v = volume_confidence(&history).unwrap_or(0.0);
    let v_bar = history.last().copied().unwrap_or(1.0);
    let mut fv = FeatureVector {
        h_obj: comp.h_obj,
        h_bar: comp.h_bar,
        r_o: comp.r_o,
        r_iou,
        v_bar,
        s_flag: true,
    };
    fv.s_flag = active_flag(&fv, p_v);
    fv
}

/// Utility of a candidate view: sum over predicted-visible objects of
/// ((1 - R_o) H_obj + lambda (H_IoU + H_V)) s(x).
pub fn utility(
    map: &GlobalObjectMap,
    view: &CandidateView,
    intr: &CameraIntrinsics,
    lambda: f64,
) -> f64 {
    let visible = sensor::predicted_visibility(map, &view.pose, intr);
    let mut f = 0.0;
    for vis in &visible.objects {
        let est = match map.estimate(vis.id) {
            Some(e) => e,
            None => continue,
        };
        let fv = feature_vector(est, vis.r_iou);
        if !fv.s_flag {
            continue;
        }
        let history = est.normalized_volume_history();
        let (h_iou, h_v) = match uncertainty_terms(&fv, &history) {
            Ok(u) => (u.h_iou, u.h_v),
            // No volume evidence yet: the stability term carries no bits.
            Err(_) => (point_entropy(fv.r_iou / 2.0), 0.0),
        };
        f += (1.0 - fv.r_o) * fv.h_obj + lambda * (h_iou + h_v);
    }
    f
}

/// Argmax of `utility` over the candidates; ties go to the smallest index.
pub fn select_nbv(
    map: &GlobalObjectMap,
    candidates: &[CandidateView],
    intr: &CameraIntrinsics,
    lambda: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let f = utility(map, cand, intr, lambda);
        if best.map_or(true, |(_, fb)| f > fb) {
            best = Some((i, f));
        }
    }
    best
}

/// The four initialization views: straight-down cameras over the desk
/// corner quadrants, in corner order (min,min), (max,min), (max,max),
/// (min,max).
pub fn corner_init_views(desk_height: f64, bounds: &DeskBounds) -> [CameraPose; 4] {
    let center = bounds.center();
    let corners = [
        (bounds.min_x, bounds.min_y),
        (bounds.max_x, bounds.min_y),
        (bounds.max_x, bounds.max_y),
        (bounds.min_x, bounds.max_y),
    ];
    corners.map(|(cx, cy)| {
        let x = center.x + INIT_CORNER_PULL * (cx - center.x);
        let y = center.y + INIT_CORNER_PULL * (cy - center.y);
        CameraPose::look_at(
            Vector3::new(x, y, desk_height + INIT_HEIGHT),
            Vector3::new(x, y, desk_height),
        )
    })
}

/// Boustrophedon waypoints: straight-down views on a grid whose cell size is
/// the camera footprint at the desk, visited in serpentine row order.
pub fn coverage_path(
    desk_height: f64,
    bounds: &DeskBounds,
    intr: &CameraIntrinsics,
) -> Vec<CameraPose> {
    let foot_x = intr.width as f64 * COVERAGE_HEIGHT / intr.fx;
    let foot_y = intr.height as f64 * COVERAGE_HEIGHT / intr.fy;
    let nx = (bounds.width() / foot_x).ceil().max(1.0) as usize;
    let ny = (bounds.depth() / foot_y).ceil().max(1.0) as usize;
    let dx = bounds.width() / nx as f64;
    let dy = bounds.depth() / ny as f64;
    let mut path = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        let y = bounds.min_y + (row as f64 + 0.5) * dy;
        let cols: Vec<usize> = if row % 2 == 0 {
            (0..nx).collect()
        } else {
            (0..nx).rev().collect()
        };
        for col in cols {
            let x = bounds.min_x + (col as f64 + 0.5) * dx;
            path.push(CameraPose::look_at(
                Vector3::new(x, y, desk_height + COVERAGE_HEIGHT),
                Vector3::new(x, y, desk_height),
            ));
        }
    }
    path
}

#[derive(Debug, Clone)]
pub struct ExplorationState {
    pub strategy: Strategy,
    pub step: usize,
    pub budget: usize,
    pub n_candidates: usize,
    pub lambda: f64,
    pub seed: u64,
    pub trajectory: Vec<CameraPose>,
}

impl ExplorationState {
    pub fn new(strategy: Strategy, budget: usize, seed: u64) -> Self {
        ExplorationState {
            strategy,
            step: 0,
            budget,
            n_candidates: DEFAULT_CANDIDATES,
            lambda: DEFAULT_LAMBDA,
            seed,
            trajectory: Vec::new(),
        }
    }
}

/// Next view for the state's strategy, or None when the strategy is done.
/// The first four steps of every strategy are the corner initialization.
pub fn strategy_step(
    state: &mut ExplorationState,
    map: &GlobalObjectMap,
    desk_height: f64,
    bounds: &DeskBounds,
    intr: &CameraIntrinsics,
) -> Option<(CameraPose, ViewKind, Option<f64>)> {
    let step = state.step;
    let chosen = if step < 4 {
        let views = corner_init_views(desk_height, bounds);
        Some((views[step], ViewKind::CornerInit, None))
    } else if step >= 4 + state.budget {
        None
    } else {
        let k = step - 4;
        match state.strategy {
            Strategy::InitOnly => None,
            Strategy::Coverage => coverage_path(desk_height, bounds, intr)
                .get(k)
                .map(|pose| (*pose, ViewKind::CoverageWaypoint, None)),
            Strategy::Randomized => {
                let cands = candidate_views(
                    desk_height,
                    bounds,
                    &[],
                    state.n_candidates,
                    mix_seed(state.seed, 100 + step as u64),
                );
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(state.seed, 200 + step as u64));
                let pick = rng.gen_range(0..cands.len());
                Some((cands[pick].pose, ViewKind::Random, None))
            }
            Strategy::ObjectDriven => {
                let targets: Vec<Vector3<f64>> = map
                    .estimates
                    .iter()
                    .filter(|e| !e.fully_explored)
                    .map(|e| e.pose.t)
                    .collect();
                let cands = candidate_views(
                    desk_height,
                    bounds,
                    &targets,
                    state.n_candidates,
                    mix_seed(state.seed, 100 + step as u64),
                );
                let (idx, f) = select_nbv(map, &cands, intr, state.lambda)?;
                Some((cands[idx].pose, ViewKind::HemisphereSample, Some(f)))
            }
        }
    };
    if let Some((pose, _, _)) = &chosen {
        state.trajectory.push(*pose);
        state.step += 1;
    }
    chosen
}

/// Snapshot of one object after an exploration step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectStepStat {
    pub id: u32,
    pub label: String,
    pub pose: ObjectPose,
    pub h_obj: f64,
    pub h_bar: f64,
    pub r_o: f64,
    pub p_v: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub kind: ViewKind,
    pub eye: Vector3<f64>,
    /// Utility of the chosen view; None for scripted views.
    pub utility: Option<f64>,
    pub objects: Vec<ObjectStepStat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every mapped object had its active flag cleared.
    AllExplored,
    /// The view budget ran out.
    BudgetExhausted,
    /// The strategy's scripted path ended (coverage / init-only).
    PathExhausted,
}

#[derive(Debug, Clone)]
pub struct ExplorationResult {
    pub map: GlobalObjectMap,
    pub log: Vec<StepLog>,
    pub stop: StopReason,
    pub trajectory: Vec<CameraPose>,
}

#[derive(Debug, Clone)]
pub struct ExplorationConfig {
    pub strategy: Strategy,
    pub budget: usize,
    pub n_candidates: usize,
    pub lambda: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    pub oracle_association: bool,
}

impl ExplorationConfig {
    pub fn new(strategy: Strategy, noise: NoiseModel, seed: u64) -> Self {
        ExplorationConfig {
            strategy,
            budget: DEFAULT_BUDGET,
            n_candidates: DEFAULT_CANDIDATES,
            lambda: DEFAULT_LAMBDA,
            noise,
            seed,
            oracle_association: false,
        }
    }
}

/// Full exploration run: render, associate, integrate, filter, refine and
/// re-grid per view until every object is flagged done or the budget runs
/// out.
pub fn run_exploration(
    scene: &DeskScene,
    cfg: &ExplorationConfig,
    intr: &CameraIntrinsics,
) -> ExplorationResult {
    let mut state = ExplorationState::new(cfg.strategy, cfg.budget, cfg.seed);
    state.n_candidates = cfg.n_candidates;
    state.lambda = cfg.lambda;
    let mut map = GlobalObjectMap::new();
    let mut log = Vec::new();
    let mut desk_points: Vec<Vector3<f64>> = Vec::new();
    let mut slices_by_id: std::collections::HashMap<u32, Vec<ObsSlice>> =
        std::collections::HashMap::new();
    let stop;

    loop {
        let (cam, kind, chosen_utility) =
            match strategy_step(&mut state, &map, scene.desk_height, &scene.desk_bounds, intr) {
                Some(next) => next,
                None => {
                    stop = if state.step >= 4 + state.budget {
                        StopReason::BudgetExhausted
                    } else {
                        StopReason::PathExhausted
                    };
                    break;
                }
            };
        let step = state.step - 1;
        let obs = sensor::render(
            scene,
            &cam,
            intr,
            &cfg.noise,
            mix_seed(cfg.seed, 0xC0FFEE + step as u64),
        );

        // Desk plane from the accumulated desk returns.
        desk_points.extend_from_slice(&obs.desk_points);
        desk_points.truncate(DESK_POINT_CAP);
        if desk_points.len() >= 3 {
            if let Ok(plane) =
                pose::fit_desk_plane(&desk_points, cam.translation, mix_seed(cfg.seed, 7))
            {
                map.desk_plane = Some(plane);
            }
        }

        let verdicts = map.associate(&obs, cfg.oracle_association);
        map.integrate(&obs, &verdicts, intr, cfg.oracle_association);
        let touched = collect_slices(&map, &obs, intr, &mut slices_by_id);

        if let Some(plane) = map.desk_plane.clone() {
            for id in &touched {
                refine_object(&mut map, *id, &slices_by_id, &plane, intr);
            }
        }

        // Flags and the per-step log.
        let mut objects = Vec::new();
        for est in &mut map.estimates {
            let history = est.normalized_volume_history();
            let p_v = volume_confidence(&history).unwrap_or(0.0);
            let fv = feature_vector(est, 0.0);
            est.fully_explored = !fv.s_flag;
            objects.push(ObjectStepStat {
                id: est.id,
                label: est.label.clone(),
                pose: est.pose.clone(),
                h_obj: fv.h_obj,
                h_bar: fv.h_bar,
                r_o: fv.r_o,
                p_v,
                active: fv.s_flag,
            });
        }
        log.push(StepLog {
            step,
            kind,
            eye: cam.translation,
            utility: chosen_utility,
            objects,
        });

        if state.step >= 4 && map.estimates.iter().all(|e| e.fully_explored) {
            stop = StopReason::AllExplored;
            break;
        }
    }

    ExplorationResult {
        map,
        log,
        stop,
        trajectory: state.trajectory,
    }
}

/// Fold this observation's detections into the per-object slice store,
/// returning the ids that received new evidence.
fn collect_slices(
    map: &GlobalObjectMap,
    obs: &Observation,
    intr: &CameraIntrinsics,
    slices_by_id: &mut std::collections::HashMap<u32, Vec<ObsSlice>>,
) -> Vec<u32> {
    let plane = match &map.desk_plane {
        Some(p) => p.clone(),
        // Without a plane we cannot back-project lines yet; the detections
        // stay integrated in the map and get slices on a later view.
        None => return Vec::new(),
    };
    let mut touched = Vec::new();
    for det in &obs.detections {
        if det.points_world.is_empty() {
            continue;
        }
        let centroid = sensor::centroid(&det.points_world).unwrap();
        // Detections were integrated just before; resolve to the estimate
        // that now owns this detection's points (nearest same-label).
        let id = map
            .estimates
            .iter()
            .filter(|e| e.label == det.label)
            .min_by(|a, b| {
                let da = (a.pose.t - centroid).norm();
                let db = (b.pose.t - centroid).norm();
                da.partial_cmp(&db).unwrap()
            })
            .map(|e| e.id);
        if let Some(id) = id {
            let mut slice = ObsSlice::from_detection(det, &obs.camera, intr, &plane);
            // A truncated or partially covered bbox has a biased center;
            // keep the slice (points and lines stay valid evidence) but
            // withhold its center from the position term.
            let at_border = det.bbox_min.x < 1.0
                || det.bbox_min.y < 1.0
                || det.bbox_max.x > intr.width as f64 - 2.0
                || det.bbox_max.y > intr.height as f64 - 2.0;
            slice.trust_center =
                !at_border && !detection_overlapped(det, id, map, &obs.camera, intr);
            slices_by_id.entry(id).or_default().push(slice);
            touched.push(id);
        }
    }
    touched.sort_unstable();
    touched.dedup();
    touched
}

/// Whether another map estimate's projected bbox overlaps this detection's
/// bbox by more than 5% of the detection area.
fn detection_overlapped(
    det: &sensor::Detection,
    id: u32,
    map: &GlobalObjectMap,
    cam: &CameraPose,
    intr: &CameraIntrinsics,
) -> bool {
    let det_area =
        (det.bbox_max.x - det.bbox_min.x).max(0.0) * (det.bbox_max.y - det.bbox_min.y).max(0.0);
    if det_area <= 0.0 {
        return true;
    }
    let det_depth = sensor::centroid(&det.points_world)
        .map(|c| (c - cam.translation).norm())
        .unwrap_or(0.0);
    for other in &map.estimates {
        if other.id == id {
            continue;
        }
        // Only an estimate in front of the detection can cut into its bbox;
        // overlap with a farther object's projection is harmless.
        if (other.pose.t - cam.translation).norm() >= det_depth {
            continue;
        }
        let mut lo = nalgebra::Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = nalgebra::Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut behind = false;
        for corner in other.pose.corners() {
            match sensor::project(intr, cam, corner) {
                Some(px) => {
                    lo.x = lo.x.min(px.x);
                    lo.y = lo.y.min(px.y);
                    hi.x = hi.x.max(px.x);
                    hi.y = hi.y.max(px.y);
                }
                None => behind = true,
            }
        }
        if behind || lo.x > hi.x {
            continue;
        }
        let ix = (hi.x.min(det.bbox_max.x) - lo.x.max(det.bbox_min.x)).max(0.0);
        let iy = (hi.y.min(det.bbox_max.y) - lo.y.max(det.bbox_min.y)).max(0.0);
        if ix * iy > 0.05 * det_area {
            return true;
        }
    }
    false
}

/// One pose-refinement pass over an object: prefilter, slice filter,
/// geometric re-initialization, joint optimization, volume bookkeeping and
/// grid rebuild.
fn refine_object(
    map: &mut GlobalObjectMap,
    id: u32,
    slices_by_id: &std::collections::HashMap<u32, Vec<ObsSlice>>,
    plane: &PlaneModel,
    intr: &CameraIntrinsics,
) {
    let slices = match slices_by_id.get(&id) {
        Some(s) if !s.is_empty() => s,
        _ => return,
    };
    let est = match map.estimate(id) {
        Some(e) => e,
        None => return,
    };
    if est.points.len() < pose::INIT_MIN_POINTS {
        return;
    }
    let prefiltered = mad_prefilter(&est.points);
    let obj_frame: Vec<Vector3<f64>> = prefiltered
        .iter()
        .map(|p| est.pose.world_to_object(*p))
        .collect();
    let (kept, _report) = slice_filter(&obj_frame, &est.pose);
    let cloud: Vec<Vector3<f64>> = kept.iter().map(|p| est.pose.object_to_world(*p)).collect();
    if cloud.len() < pose::INIT_MIN_POINTS {
        return;
    }
    let azimuths: Vec<f64> = slices
        .iter()
        .flat_map(|s| s.line_azimuths.iter().copied())
        .collect();
    let init = match pose::init_pose(&cloud, plane, &azimuths) {
        Ok(p) => p,
        Err(_) => return,
    };
    let opts = SolverOptions::default();
    let mut result = match pose::optimize_pose(&init, slices, &cloud, plane, intr, &opts) {
        Ok(r) => r,
        Err(_) => return,
    };
    // The one-sided scale term cannot shrink extents that were measured in a
    // misaligned frame, and oversized extents in turn pin the yaw. Re-measure
    // the extents in the refined orientation and polish once more; keep the
    // alternation only if it did not end up in a worse basin.
    if let Ok(refit) = pose::init_pose_with_yaw(&cloud, plane, result.pose.theta.z) {
        if let Ok(second) = pose::optimize_pose(&refit, slices, &cloud, plane, intr, &opts) {
            if second.cost <= result.cost {
                result = second;
            }
        }
    }
    // The scale term weighs points far more heavily than the yaw and
    // roll/pitch terms, so under noise the optimizer can trade a real
    // rotation error for wrapping the residual noise tail. The geometric
    // initialization (mode yaw, quantile extents, plane snap) is robust to
    // exactly that; when the optimum strays from it in orientation, keep
    // the initialization instead.
    let tilt = {
        let z_axis = result.pose.rotation() * Vector3::z();
        z_axis.cross(&plane.n).norm().atan2(z_axis.dot(&plane.n))
    };
    let yaw_drift = crate::geom::wrap_quarter(result.pose.theta.z - init.theta.z).abs();
    let final_pose = if tilt > 0.12 || yaw_drift > 0.1 {
        init.clone()
    } else {
        result.pose.clone()
    };
    let est = map.estimate_mut(id).unwrap();
    est.pose = final_pose;
    est.record_volume();
    est.maybe_rebuild_grids();
}
