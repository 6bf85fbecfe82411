//! The global object map: 9-DoF object estimates, association of incoming
//! detections, point accumulation, and the surface-grid completeness
//! bookkeeping that drives exploration.

pub mod filter;
pub mod grid;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom;
use crate::pose::PlaneModel;
use crate::sensor::{self, CameraIntrinsics, Observation};

pub use filter::{mad_prefilter, slice_filter, slice_keep_bounds, SliceFilterReport};
pub use grid::{binary_entropy, CellStatus, Completeness, Face, GridError, SurfaceGridSet};

/// Minimum half-extent per axis, 1 mm.
pub const MIN_HALF_EXTENT: f64 = 0.001;

/// Association gate floor: detections within 10 cm of a same-label estimate
/// match even when the estimate is still tiny.
pub const ASSOCIATION_GATE_MIN: f64 = 0.10;

/// 9-DoF object state: translation, (roll, pitch, yaw) orientation, and
/// half-extent scale of a bounding cuboid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub t: Vector3<f64>,
    pub theta: Vector3<f64>,
    pub s: Vector3<f64>,
}

impl ObjectPose {
    /// Clamp half-extents to the 1 mm floor and wrap angles to (-pi, pi].
    pub fn normalized(mut self) -> Self {
        for axis in 0..3 {
            self.s[axis] = self.s[axis].max(MIN_HALF_EXTENT);
            self.theta[axis] = geom::wrap_angle(self.theta[axis]);
        }
        self
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        geom::rotation_rpy(self.theta.x, self.theta.y, self.theta.z)
    }

    pub fn world_to_object(&self, p_world: Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p_world - self.t)
    }

    pub fn object_to_world(&self, p_obj: Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p_obj + self.t
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.s.x * self.s.y * self.s.z
    }

    /// The eight cuboid corners in world coordinates.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        let mut i = 0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out[i] = self.object_to_world(Vector3::new(
                        sx * self.s.x,
                        sy * self.s.y,
                        sz * self.s.z,
                    ));
                    i += 1;
                }
            }
        }
        out
    }

    /// The four edges of the top (+z) face as world-frame segments.
    pub fn top_face_edges(&self) -> [(Vector3<f64>, Vector3<f64>); 4] {
        let c = |sx: f64, sy: f64| {
            self.object_to_world(Vector3::new(sx * self.s.x, sy * self.s.y, self.s.z))
        };
        let (a, b, cc, d) = (c(-1.0, -1.0), c(1.0, -1.0), c(1.0, 1.0), c(-1.0, 1.0));
        [(a, b), (b, cc), (cc, d), (d, a)]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub id: u32,
    pub label: String,
    pub pose: ObjectPose,
    /// Accumulated world-frame points over all integrated observations.
    pub points: Vec<Vector3<f64>>,
    pub grids: SurfaceGridSet,
    /// Normalized volume after each pose optimization, newest last.
    pub volume_history: Vec<f64>,
    pub fully_explored: bool,
    /// Points discarded for lying farther than 3*|s| from the center.
    pub ignored_points: usize,
    /// Pose the grids were last built for; drives rebuild detection.
    grid_pose: ObjectPose,
}

impl ObjectEstimate {
    pub fn new(id: u32, label: String, pose: ObjectPose) -> Self {
        let pose = pose.normalized();
        let grids = SurfaceGridSet::new(pose.s);
        ObjectEstimate {
            id,
            label,
            grid_pose: pose.clone(),
            pose,
            points: Vec::new(),
            grids,
            volume_history: Vec::new(),
            fully_explored: false,
            ignored_points: 0,
        }
    }

    /// Record the cuboid volume after a pose update.
    pub fn record_volume(&mut self) {
        self.volume_history.push(self.pose.volume());
    }

    /// Volume history scaled by the peak volume seen so far, so values live
    /// in (0, 1]. Z-scores over this history are unaffected by the choice of
    /// normalization constant.
    pub fn normalized_volume_history(&self) -> Vec<f64> {
        let peak = self
            .volume_history
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return vec![1.0; self.volume_history.len()];
        }
        self.volume_history.iter().map(|v| v / peak).collect()
    }

    pub fn completeness(&self) -> Result<Completeness, GridError> {
        self.grids.completeness()
    }

    /// Rebuild the grids from the stored cloud when the pose or scale moved
    /// by more than one cell since the last build. Free cells revert to
    /// unknown on rebuild; occupied cells are re-projected from the points.
    pub fn maybe_rebuild_grids(&mut self) {
        let m = self.grids.resolution;
        let dt = (self.pose.t - self.grid_pose.t).norm();
        let ds = (self.pose.s - self.grid_pose.s).amax();
        let max_extent = self.pose.s.amax();
        let dtheta = (self.pose.theta - self.grid_pose.theta).amax().abs() * max_extent;
        if dt <= m && ds <= m && dtheta <= m {
            return;
        }
        self.grids = SurfaceGridSet::new(self.pose.s);
        self.grid_pose = self.pose.clone();
        let points = self.points.clone();
        for p in points {
            let p_obj = self.pose.world_to_object(p);
            if let Some(cell) = self.grids.locate(p_obj) {
                self.grids.mark_occupied(cell);
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GlobalObjectMap {
    pub estimates: Vec<ObjectEstimate>,
    pub desk_plane: Option<PlaneModel>,
    next_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Matched(u32),
    NewObject,
}

impl GlobalObjectMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn estimate(&self, id: u32) -> Option<&ObjectEstimate> {
        self.estimates.iter().find(|e| e.id == id)
    }

    pub fn estimate_mut(&mut self, id: u32) -> Option<&mut ObjectEstimate> {
        self.estimates.iter_mut().find(|e| e.id == id)
    }

    /// Match each detection against the map.
    ///
    /// A detection matches an estimate iff the labels are equal and its point
    /// centroid lies within max(|s|, 10 cm) of the estimate center; ties go
    /// to the nearest estimate. In oracle mode the ground-truth ids decide.
    pub fn associate(&self, obs: &Observation, oracle: bool) -> Vec<Verdict> {
        obs.detections
            .iter()
            .map(|det| {
                if oracle {
                    return if self.estimate(det.object_id).is_some() {
                        Verdict::Matched(det.object_id)
                    } else {
                        Verdict::NewObject
                    };
                }
                let centroid = match sensor::centroid(&det.points_world) {
                    Some(c) => c,
                    None => return Verdict::NewObject,
                };
                let mut best: Option<(u32, f64)> = None;
                for est in &self.estimates {
                    if est.label != det.label {
                        continue;
                    }
                    let dist = (centroid - est.pose.t).norm();
                    let gate = est.pose.s.norm().max(ASSOCIATION_GATE_MIN);
                    if dist < gate && best.map_or(true, |(_, d)| dist < d) {
                        best = Some((est.id, dist));
                    }
                }
                match best {
                    Some((id, _)) => Verdict::Matched(id),
                    None => Verdict::NewObject,
                }
            })
            .collect()
    }

    /// Fold one observation into the map given the association verdicts.
    ///
    /// Points are appended per object and the surface grids are updated:
    /// cells hit by points become occupied, predicted-visible cells that
    /// received no point become free.
    pub fn integrate(
        &mut self,
        obs: &Observation,
        verdicts: &[Verdict],
        intr: &CameraIntrinsics,
        oracle: bool,
    ) {
        assert_eq!(obs.detections.len(), verdicts.len());
        for (det, verdict) in obs.detections.iter().zip(verdicts) {
            let id = match verdict {
                Verdict::Matched(id) => *id,
                Verdict::NewObject => {
                    if det.points_world.is_empty() {
                        continue;
                    }
                    let id = if oracle {
                        det.object_id
                    } else {
                        let id = self.next_id;
                        id
                    };
                    self.next_id = self.next_id.max(id + 1);
                    let pose = bootstrap_pose(&det.points_world);
                    self.estimates
                        .push(ObjectEstimate::new(id, det.label.clone(), pose));
                    id
                }
            };
            // Visibility is computed against the estimated boxes before this
            // detection's points are folded in.
            let occluders: Vec<(u32, ObjectPose)> = self
                .estimates
                .iter()
                .map(|e| (e.id, e.pose.clone()))
                .collect();
            let est = self.estimate_mut(id).expect("verdict references estimate");
            let visible = sensor::visible_cells_of(
                &est.pose,
                &est.grids,
                &occluders,
                est.id,
                &obs.camera,
                intr,
            );
            update_surface_grids(est, &det.points_world, &visible);
            est.points.extend_from_slice(&det.points_world);
        }
    }

    pub fn unique_ids(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.estimates.iter().all(|e| seen.insert(e.id))
    }
}

/// Axis-aligned bootstrap pose from a raw detection cloud. Refined later by
/// the nonlinear optimizer.
fn bootstrap_pose(points: &[Vector3<f64>]) -> ObjectPose {
    let centroid = sensor::centroid(points).unwrap_or_else(Vector3::zeros);
    let mut lo = Vector3::from_element(f64::INFINITY);
    let mut hi = Vector3::from_element(f64::NEG_INFINITY);
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let s = (hi - lo) * 0.5;
    ObjectPose {
        t: centroid,
        theta: Vector3::zeros(),
        s,
    }
    .normalized()
}

/// Project points into the estimate's grids (occupied) and mark the visible
/// cells that received no point as free. Points farther than 3*|s| from the
/// center are ignored and counted.
pub fn update_surface_grids(
    est: &mut ObjectEstimate,
    points_world: &[Vector3<f64>],
    visible_cells: &[grid::CellId],
) {
    let mut touched = std::collections::HashSet::new();
    let far = 3.0 * est.pose.s.norm();
    for p in points_world {
        if (p - est.pose.t).norm() > far {
            est.ignored_points += 1;
            continue;
        }
        let p_obj = est.pose.world_to_object(*p);
        if let Some(cell) = est.grids.locate(p_obj) {
            est.grids.mark_occupied(cell);
            touched.insert(cell);
        }
    }
    for cell in visible_cells {
        if !touched.contains(cell) {
            est.grids.mark_free(*cell);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::Detection;
    use nalgebra::Vector2;

    fn detection(id: u32, label: &str, center: Vector3<f64>) -> Detection {
        let points = vec![
            center + Vector3::new(0.01, 0.0, 0.0),
            center - Vector3::new(0.01, 0.0, 0.0),
            center + Vector3::new(0.0, 0.01, 0.01),
            center - Vector3::new(0.0, 0.01, 0.01),
        ];
        Detection {
            object_id: id,
            label: label.into(),
            bbox_min: Vector2::zeros(),
            bbox_max: Vector2::new(10.0, 10.0),
            bbox_center: Vector2::new(5.0, 5.0),
            points_world: points,
            lines: vec![],
        }
    }

    fn obs(detections: Vec<Detection>) -> Observation {
        Observation {
            camera: crate::sensor::CameraPose::look_at(
                Vector3::new(0.0, 1e-3, 2.0),
                Vector3::new(0.0, 0.0, 0.0),
            ),
            detections,
            desk_points: vec![],
        }
    }

    #[test]
    fn cold_start_creates_new_objects() {
        let map = GlobalObjectMap::new();
        let o = obs(vec![
            detection(0, "box", Vector3::new(0.0, 0.0, 0.0)),
            detection(1, "mug", Vector3::new(0.3, 0.0, 0.0)),
            detection(2, "can", Vector3::new(0.0, 0.3, 0.0)),
        ]);
        let verdicts = map.associate(&o, false);
        assert_eq!(verdicts, vec![Verdict::NewObject; 3]);
    }

    #[test]
    fn nearby_same_label_matches() {
        let mut map = GlobalObjectMap::new();
        let o = obs(vec![detection(0, "box", Vector3::new(0.0, 0.0, 0.0))]);
        let v = map.associate(&o, false);
        map.integrate(&o, &v, &CameraIntrinsics::default(), false);
        let o2 = obs(vec![detection(0, "box", Vector3::new(0.02, 0.0, 0.0))]);
        let v2 = map.associate(&o2, false);
        assert_eq!(v2, vec![Verdict::Matched(0)]);
    }

    #[test]
    fn nearest_of_two_wins_and_oracle_agrees() {
        let mut map = GlobalObjectMap::new();
        let o = obs(vec![
            detection(0, "box", Vector3::new(0.0, 0.0, 0.0)),
            detection(1, "box", Vector3::new(0.08, 0.0, 0.0)),
        ]);
        let v = map.associate(&o, true);
        map.integrate(&o, &v, &CameraIntrinsics::default(), true);
        // Detection centroid 3 cm from estimate 0, 5 cm from estimate 1.
        let probe = obs(vec![detection(0, "box", Vector3::new(0.03, 0.0, 0.0))]);
        assert_eq!(map.associate(&probe, false), vec![Verdict::Matched(0)]);
        assert_eq!(map.associate(&probe, true), vec![Verdict::Matched(0)]);
    }

    #[test]
    fn new_estimate_starts_all_unknown() {
        let mut map = GlobalObjectMap::new();
        let o = obs(vec![detection(0, "box", Vector3::new(0.0, 0.0, 0.0))]);
        let v = map.associate(&o, false);
        map.integrate(&o, &v, &CameraIntrinsics::default(), false);
        let est = &map.estimates[0];
        // Some cells were just hit by the detection's own points, but every
        // non-occupied cell still holds the initial p = 0.5.
        for (_, cell) in est.grids.all_cells() {
            match cell.status {
                CellStatus::Occupied => assert_eq!(cell.p, grid::P_OCCUPIED),
                CellStatus::Free => assert_eq!(cell.p, grid::P_FREE),
                CellStatus::Unknown => assert_eq!(cell.p, 0.5),
            }
        }
    }

    #[test]
    fn double_integration_doubles_points_keeps_statuses() {
        let mut map = GlobalObjectMap::new();
        let o = obs(vec![detection(0, "box", Vector3::new(0.0, 0.0, 0.0))]);
        let v = map.associate(&o, false);
        let intr = CameraIntrinsics::default();
        map.integrate(&o, &v, &intr, false);
        let n1 = map.estimates[0].points.len();
        let statuses: Vec<CellStatus> = map.estimates[0]
            .grids
            .all_cells()
            .map(|(_, c)| c.status)
            .collect();
        let v2 = map.associate(&o, false);
        map.integrate(&o, &v2, &intr, false);
        assert_eq!(map.estimates[0].points.len(), 2 * n1);
        let statuses2: Vec<CellStatus> = map.estimates[0]
            .grids
            .all_cells()
            .map(|(_, c)| c.status)
            .collect();
        assert_eq!(statuses, statuses2);
    }

    #[test]
    fn empty_observation_is_noop() {
        let mut map = GlobalObjectMap::new();
        let o = obs(vec![]);
        let v = map.associate(&o, false);
        map.integrate(&o, &v, &CameraIntrinsics::default(), false);
        assert!(map.estimates.is_empty());
    }

    #[test]
    fn unknown_cells_monotone_under_fixed_pose() {
        let mut est = ObjectEstimate::new(
            0,
            "box".into(),
            ObjectPose {
                t: Vector3::zeros(),
                theta: Vector3::zeros(),
                s: Vector3::new(0.05, 0.05, 0.05),
            },
        );
        let mut prev_unknown = est.grids.count(CellStatus::Unknown);
        let mut prev_hbar = est.completeness().unwrap().h_bar;
        for step in 0..10 {
            let z = 0.05;
            let x = -0.05 + 0.01 * step as f64;
            let pts = vec![Vector3::new(x, 0.0, z), Vector3::new(x, 0.02, z)];
            update_surface_grids(&mut est, &pts, &[]);
            let unknown = est.grids.count(CellStatus::Unknown);
            let hbar = est.completeness().unwrap().h_bar;
            assert!(unknown <= prev_unknown);
            assert!(hbar <= prev_hbar + 1e-12);
            prev_unknown = unknown;
            prev_hbar = hbar;
        }
    }
}
