//! Virtual RGB-D camera: pinhole projection, per-object surface samples with
//! z-buffer style occlusion, 2D boxes and top-edge line directions, plus
//! predicted visibility of surface-grid cells for candidate views.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom;
use crate::objmap::grid::{CellId, FACES};
use crate::objmap::{GlobalObjectMap, ObjectPose};
use crate::scene::{DeskScene, ScenePrimitive, Shape};

/// One surface sample per 0.25 cm^2 of visible area (0.5 cm spacing), so
/// every visible 1 cm grid cell collects several hits.
const SAMPLES_PER_M2: f64 = 40_000.0;
/// Desk points are sparser, one per 4 cm^2.
const DESK_SAMPLES_PER_M2: f64 = 2500.0 / 10.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 700.0,
            fy: 700.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cy > 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64
    }
}

/// World-from-camera pose: `rotation * p_cam + translation` is a world point.
/// Camera convention: +z forward, +x right, +y down (image v grows down).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn is_valid(&self) -> bool {
        (self.rotation.determinant() - 1.0).abs() < 1e-9
            && (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm() < 1e-7
    }

    /// Camera at `eye` looking toward `target`. The image x axis is kept
    /// horizontal (perpendicular to world z) whenever possible.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let world_up = Vector3::z();
        let mut right = forward.cross(&world_up);
        if right.norm() < 1e-9 {
            // Straight up/down view: pick a fixed horizontal x axis.
            right = Vector3::x();
        }
        let right = right.normalize();
        let down = forward.cross(&right).normalize();
        let right = down.cross(&forward).normalize();
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        CameraPose {
            rotation,
            translation: eye,
        }
    }

    pub fn world_to_camera(&self, p_world: Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }

    pub fn camera_to_world(&self, p_cam: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }
}

/// Pinhole projection; None when the point is at or behind the camera plane.
pub fn project(
    intr: &CameraIntrinsics,
    cam: &CameraPose,
    p_world: Vector3<f64>,
) -> Option<Vector2<f64>> {
    let p = cam.world_to_camera(p_world);
    if p.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(
        intr.cx + intr.fx * p.x / p.z,
        intr.cy + intr.fy * p.y / p.z,
    ))
}

/// Inverse of [`project`] at a known depth.
pub fn unproject(
    intr: &CameraIntrinsics,
    cam: &CameraPose,
    pixel: Vector2<f64>,
    depth: f64,
) -> Vector3<f64> {
    let p_cam = Vector3::new(
        (pixel.x - intr.cx) / intr.fx * depth,
        (pixel.y - intr.cy) / intr.fy * depth,
        depth,
    );
    cam.camera_to_world(p_cam)
}

fn in_image(intr: &CameraIntrinsics, px: Vector2<f64>) -> bool {
    px.x >= 0.0 && px.x < intr.width as f64 && px.y >= 0.0 && px.y < intr.height as f64
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Std-dev of depth perturbation along the viewing ray, meters.
    pub depth_sigma: f64,
    /// Std-dev of bounding-box corner jitter, pixels.
    pub bbox_jitter_sigma: f64,
    /// Std-dev of line direction noise, radians.
    pub line_sigma: f64,
    /// Probability that a whole detection is dropped.
    pub dropout_prob: f64,
    /// Fraction of desk points mislabeled into adjacent object detections.
    pub desk_contamination: f64,
}

impl NoiseModel {
    pub fn off() -> Self {
        NoiseModel {
            depth_sigma: 0.0,
            bbox_jitter_sigma: 0.0,
            line_sigma: 0.0,
            dropout_prob: 0.0,
            desk_contamination: 0.0,
        }
    }

    pub fn low() -> Self {
        NoiseModel {
            depth_sigma: 0.002,
            bbox_jitter_sigma: 1.0,
            line_sigma: 0.01,
            dropout_prob: 0.02,
            desk_contamination: 0.005,
        }
    }

    pub fn medium() -> Self {
        NoiseModel {
            depth_sigma: 0.005,
            bbox_jitter_sigma: 2.0,
            line_sigma: 0.03,
            dropout_prob: 0.08,
            desk_contamination: 0.02,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.depth_sigma >= 0.0
            && self.bbox_jitter_sigma >= 0.0
            && self.line_sigma >= 0.0
            && (0.0..=1.0).contains(&self.dropout_prob)
            && (0.0..=1.0).contains(&self.desk_contamination)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    /// Ground-truth identity. Downstream association may read this only in
    /// oracle mode.
    pub object_id: u32,
    pub label: String,
    /// Pixel rectangle (min corner, max corner).
    pub bbox_min: Vector2<f64>,
    pub bbox_max: Vector2<f64>,
    pub bbox_center: Vector2<f64>,
    pub points_world: Vec<Vector3<f64>>,
    /// Image-line directions of visible top-face edges, radians in [0, pi).
    pub lines: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub camera: CameraPose,
    pub detections: Vec<Detection>,
    pub desk_points: Vec<Vector3<f64>>,
}

struct Occluder {
    center: Vector3<f64>,
    rot: Matrix3<f64>,
    half: Vector3<f64>,
}

impl Occluder {
    fn from_pose(pose: &ObjectPose) -> Self {
        Occluder {
            center: pose.t,
            rot: pose.rotation(),
            half: pose.s,
        }
    }
}

/// True when the segment camera -> point is blocked by any occluder box
/// other than `skip`. Cylinders are conservatively treated as their
/// bounding boxes.
fn segment_occluded(
    cam_pos: Vector3<f64>,
    point: Vector3<f64>,
    occluders: &[Occluder],
    skip: usize,
) -> bool {
    let dir = point - cam_pos;
    for (i, occ) in occluders.iter().enumerate() {
        if i == skip {
            continue;
        }
        if geom::ray_box_hit(cam_pos, dir, occ.center, &occ.rot, occ.half, 1e-9, 1.0 - 1e-6)
            .is_some()
        {
            return true;
        }
    }
    false
}

/// Deterministic surface samples of one primitive's non-bottom faces, with
/// outward normals.
fn surface_samples(
    prim: &ScenePrimitive,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let pose = &prim.pose_gt;
    let rot = pose.rotation();
    let s = pose.s;
    let mut out = Vec::new();
    match prim.shape {
        Shape::Cuboid => {
            // (fixed axis, sign, in-plane axes) for the five non-bottom faces.
            let faces: [(usize, f64, usize, usize); 5] = [
                (0, 1.0, 1, 2),
                (0, -1.0, 1, 2),
                (1, 1.0, 0, 2),
                (1, -1.0, 0, 2),
                (2, 1.0, 0, 1),
            ];
            for (fa, sign, ua, va) in faces {
                let area = 4.0 * s[ua] * s[va];
                let n = (area * SAMPLES_PER_M2).ceil() as usize;
                let mut normal = Vector3::zeros();
                normal[fa] = sign;
                let normal_w = rot * normal;
                for _ in 0..n {
                    let mut p = Vector3::zeros();
                    p[fa] = sign * s[fa];
                    p[ua] = rng.gen_range(-s[ua]..s[ua]);
                    p[va] = rng.gen_range(-s[va]..s[va]);
                    out.push((pose.object_to_world(p), normal_w));
                }
            }
        }
        Shape::Cylinder => {
            let r = s.x;
            let lateral_area = 2.0 * std::f64::consts::PI * r * 2.0 * s.z;
            let n_lat = (lateral_area * SAMPLES_PER_M2).ceil() as usize;
            for _ in 0..n_lat {
                let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                let h = rng.gen_range(-s.z..s.z);
                let p = Vector3::new(r * phi.cos(), r * phi.sin(), h);
                let normal = Vector3::new(phi.cos(), phi.sin(), 0.0);
                out.push((pose.object_to_world(p), rot * normal));
            }
            let cap_area = std::f64::consts::PI * r * r;
            let n_cap = (cap_area * SAMPLES_PER_M2).ceil() as usize;
            for _ in 0..n_cap {
                let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                let rr = r * rng.gen_range(0.0f64..1.0).sqrt();
                let p = Vector3::new(rr * phi.cos(), rr * phi.sin(), s.z);
                out.push((pose.object_to_world(p), rot * Vector3::z()));
            }
        }
    }
    out
}

/// Render one virtual frame. Deterministic for a fixed seed; empty
/// detections are a valid result when nothing is in the frustum.
pub fn render(
    scene: &DeskScene,
    cam: &CameraPose,
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
    seed: u64,
) -> Observation {
    assert!(
        cam.translation.z > scene.desk_height,
        "render precondition: camera must be above the desk plane"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth_noise = Normal::new(0.0, noise.depth_sigma.max(1e-12)).unwrap();
    let jitter = Normal::new(0.0, noise.bbox_jitter_sigma.max(1e-12)).unwrap();
    let line_noise = Normal::new(0.0, noise.line_sigma.max(1e-12)).unwrap();
    let cam_pos = cam.translation;
    let occluders: Vec<Occluder> = scene
        .primitives
        .iter()
        .map(|p| Occluder::from_pose(&p.pose_gt))
        .collect();

    let mut detections = Vec::new();
    for (i, prim) in scene.primitives.iter().enumerate() {
        let mut points = Vec::new();
        let mut hull_min = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hull_max = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (p, normal) in surface_samples(prim, &mut rng) {
            if normal.dot(&(cam_pos - p)) <= 1e-9 {
                continue;
            }
            let px = match project(intr, cam, p) {
                Some(px) if in_image(intr, px) => px,
                _ => continue,
            };
            if segment_occluded(cam_pos, p, &occluders, i) {
                continue;
            }
            hull_min.x = hull_min.x.min(px.x);
            hull_min.y = hull_min.y.min(px.y);
            hull_max.x = hull_max.x.max(px.x);
            hull_max.y = hull_max.y.max(px.y);
            let noisy = if noise.depth_sigma > 0.0 {
                let dir = (p - cam_pos).normalize();
                p + dir * depth_noise.sample(&mut rng)
            } else {
                p
            };
            points.push(noisy);
        }
        // Line features: projected directions of visible top-face edges.
        let mut lines = Vec::new();
        if prim.shape == Shape::Cuboid {
            for (a, b) in prim.pose_gt.top_face_edges() {
                let mid = (a + b) * 0.5;
                let top_normal = prim.pose_gt.rotation() * Vector3::z();
                if top_normal.dot(&(cam_pos - mid)) <= 1e-9 {
                    continue;
                }
                if segment_occluded(cam_pos, mid, &occluders, i) {
                    continue;
                }
                if let (Some(pa), Some(pb)) = (project(intr, cam, a), project(intr, cam, b)) {
                    if !in_image(intr, pa) || !in_image(intr, pb) {
                        continue;
                    }
                    let d = pb - pa;
                    let mut theta = d.y.atan2(d.x);
                    if noise.line_sigma > 0.0 {
                        theta += line_noise.sample(&mut rng);
                    }
                    // Direction, not orientation: fold to [0, pi).
                    theta = theta.rem_euclid(std::f64::consts::PI);
                    lines.push(theta);
                }
            }
        }
        // Per-detection dropout draw happens regardless of visibility so the
        // rng stream stays aligned across views of the same scene.
        let dropped = rng.gen_bool(noise.dropout_prob.clamp(0.0, 1.0));
        if points.is_empty() || dropped {
            continue;
        }
        let (bbox_min, bbox_max) = if noise.bbox_jitter_sigma > 0.0 {
            (
                hull_min + Vector2::new(jitter.sample(&mut rng), jitter.sample(&mut rng)),
                hull_max + Vector2::new(jitter.sample(&mut rng), jitter.sample(&mut rng)),
            )
        } else {
            (hull_min, hull_max)
        };
        detections.push(Detection {
            object_id: prim.id,
            label: prim.label.clone(),
            bbox_min,
            bbox_max,
            bbox_center: (bbox_min + bbox_max) * 0.5,
            points_world: points,
            lines,
        });
    }

    // Desk points: visible samples of the desk surface outside all footprints.
    let mut desk_points = Vec::new();
    let b = scene.desk_bounds;
    let n_desk = (b.width() * b.depth() * DESK_SAMPLES_PER_M2).ceil() as usize;
    for _ in 0..n_desk {
        let p = Vector3::new(
            rng.gen_range(b.min_x..b.max_x),
            rng.gen_range(b.min_y..b.max_y),
            scene.desk_height,
        );
        let under_object = scene.primitives.iter().any(|prim| {
            let d = prim.pose_gt.world_to_object(p);
            d.x.abs() <= prim.pose_gt.s.x && d.y.abs() <= prim.pose_gt.s.y
        });
        if under_object {
            continue;
        }
        match project(intr, cam, p) {
            Some(px) if in_image(intr, px) => {}
            _ => continue,
        }
        if segment_occluded(cam_pos, p, &occluders, usize::MAX) {
            continue;
        }
        desk_points.push(p);
    }

    // Segmentation leakage: a fraction of desk points near an object lands in
    // that object's detection.
    if noise.desk_contamination > 0.0 && !detections.is_empty() {
        let mut kept_desk = Vec::with_capacity(desk_points.len());
        for p in desk_points.drain(..) {
            if rng.gen_bool(noise.desk_contamination.clamp(0.0, 1.0)) {
                let nearest = detections
                    .iter_mut()
                    .min_by(|a, b| {
                        let da = centroid(&a.points_world).map(|c| (c - p).norm()).unwrap_or(f64::MAX);
                        let db = centroid(&b.points_world).map(|c| (c - p).norm()).unwrap_or(f64::MAX);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                nearest.points_world.push(p);
            } else {
                kept_desk.push(p);
            }
        }
        desk_points = kept_desk;
    }

    Observation {
        camera: *cam,
        detections,
        desk_points,
    }
}

pub fn centroid(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if points.is_empty() {
        None
    } else {
        Some(points.iter().sum::<Vector3<f64>>() / points.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ObjectVisibility {
    pub id: u32,
    pub cells: Vec<CellId>,
    /// Mean top-projected 2D bbox IoU with the other visible objects.
    pub r_iou: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VisibleSet {
    pub objects: Vec<ObjectVisibility>,
}

/// Visible surface-grid cells of one estimated cuboid: outward normal faces
/// the camera, cell center projects into the image, and the segment to the
/// camera is not blocked by any other box in `occluders`.
pub fn visible_cells_of(
    pose: &ObjectPose,
    grids: &crate::objmap::grid::SurfaceGridSet,
    occluders: &[(u32, ObjectPose)],
    self_id: u32,
    cam: &CameraPose,
    intr: &CameraIntrinsics,
) -> Vec<CellId> {
    let rot = pose.rotation();
    let cam_pos = cam.translation;
    let boxes: Vec<Occluder> = occluders
        .iter()
        .filter(|(id, _)| *id != self_id)
        .map(|(_, p)| Occluder::from_pose(p))
        .collect();
    let mut cells = Vec::new();
    for &face in FACES.iter() {
        let normal_w = rot * face.normal();
        let grid = grids.face(face);
        for iv in 0..grid.nv {
            for iu in 0..grid.nu {
                let id = CellId { face, iu, iv };
                let center_w = pose.object_to_world(grids.cell_center(id));
                if normal_w.dot(&(cam_pos - center_w)) <= 1e-9 {
                    continue;
                }
                match project(intr, cam, center_w) {
                    Some(px) if in_image(intr, px) => {}
                    _ => continue,
                }
                if segment_occluded(cam_pos, center_w, &boxes, usize::MAX) {
                    continue;
                }
                cells.push(id);
            }
        }
    }
    cells
}

/// Predict what a candidate view would see of the *estimated* map.
pub fn predicted_visibility(
    map: &GlobalObjectMap,
    cam: &CameraPose,
    intr: &CameraIntrinsics,
) -> VisibleSet {
    let poses: Vec<(u32, ObjectPose)> = map
        .estimates
        .iter()
        .map(|e| (e.id, e.pose.clone()))
        .collect();
    let mut visible: Vec<(u32, Vec<CellId>)> = Vec::new();
    for est in &map.estimates {
        let cells = visible_cells_of(&est.pose, &est.grids, &poses, est.id, cam, intr);
        if !cells.is_empty() {
            visible.push((est.id, cells));
        }
    }
    // Projected 2D bboxes of visible estimates for the occlusion ratio.
    let mut bboxes = Vec::new();
    for (id, _) in &visible {
        let est = map.estimates.iter().find(|e| e.id == *id).unwrap();
        let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for corner in est.pose.corners() {
            if let Some(px) = project(intr, cam, corner) {
                lo.x = lo.x.min(px.x);
                lo.y = lo.y.min(px.y);
                hi.x = hi.x.max(px.x);
                hi.y = hi.y.max(px.y);
            }
        }
        bboxes.push((lo, hi));
    }
    let mut objects = Vec::new();
    for (i, (id, cells)) in visible.iter().enumerate() {
        let mut iou_sum = 0.0;
        let mut n = 0usize;
        for (j, _) in visible.iter().enumerate() {
            if i == j {
                continue;
            }
            iou_sum += geom::aabb_iou(bboxes[i].0, bboxes[i].1, bboxes[j].0, bboxes[j].1);
            n += 1;
        }
        objects.push(ObjectVisibility {
            id: *id,
            cells: cells.clone(),
            r_iou: if n == 0 { 0.0 } else { iou_sum / n as f64 },
        });
    }
    VisibleSet { objects }
}

/// Ascii PLY dump of a point cloud for inspection.
pub fn write_ply(points: &[Vector3<f64>], path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "ply")?;
    writeln!(f, "format ascii 1.0")?;
    writeln!(f, "element vertex {}", points.len())?;
    writeln!(f, "property float x")?;
    writeln!(f, "property float y")?;
    writeln!(f, "property float z")?;
    writeln!(f, "end_header")?;
    for p in points {
        writeln!(f, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{DeskBounds, DEFAULT_DESK_HEIGHT};
    use approx::assert_relative_eq;

    fn test_scene(prims: Vec<ScenePrimitive>) -> DeskScene {
        DeskScene {
            desk_height: DEFAULT_DESK_HEIGHT,
            desk_bounds: DeskBounds {
                min_x: -0.5,
                max_x: 0.5,
                min_y: -0.7,
                max_y: 0.7,
            },
            primitives: prims,
            seed: 0,
        }
    }

    fn cuboid(id: u32, x: f64, y: f64, half: f64) -> ScenePrimitive {
        ScenePrimitive {
            id,
            label: "box".into(),
            shape: Shape::Cuboid,
            pose_gt: ObjectPose {
                t: Vector3::new(x, y, DEFAULT_DESK_HEIGHT + half),
                theta: Vector3::zeros(),
                s: Vector3::new(half, half, half),
            },
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let intr = CameraIntrinsics::default();
        let cam = CameraPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        };
        let px = project(&intr, &cam, Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(px.x, 320.0);
        assert_relative_eq!(px.y, 240.0);
    }

    #[test]
    fn off_axis_projection_hand_computed() {
        let intr = CameraIntrinsics::default();
        let cam = CameraPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        };
        // 320 + 700 * 0.1 / 2 = 355.
        let px = project(&intr, &cam, Vector3::new(0.1, 0.0, 2.0)).unwrap();
        assert_relative_eq!(px.x, 355.0);
        assert_relative_eq!(px.y, 240.0);
    }

    #[test]
    fn behind_camera_flagged() {
        let intr = CameraIntrinsics::default();
        let cam = CameraPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        };
        assert!(project(&intr, &cam, Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn project_unproject_round_trip() {
        let intr = CameraIntrinsics::default();
        let cam = CameraPose::look_at(Vector3::new(0.3, -0.2, 1.5), Vector3::new(0.0, 0.0, 0.7));
        let p = Vector3::new(0.05, 0.1, 0.75);
        let px = project(&intr, &cam, p).unwrap();
        let depth = cam.world_to_camera(p).z;
        let back = unproject(&intr, &cam, px, depth);
        assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn top_down_isolated_cuboid() {
        let scene = test_scene(vec![cuboid(0, 0.0, 0.0, 0.05)]);
        let cam = CameraPose::look_at(
            Vector3::new(0.0, 1e-6, DEFAULT_DESK_HEIGHT + 0.8),
            Vector3::new(0.0, 0.0, DEFAULT_DESK_HEIGHT),
        );
        let obs = render(&scene, &cam, &CameraIntrinsics::default(), &NoiseModel::off(), 1);
        assert_eq!(obs.detections.len(), 1);
        let det = &obs.detections[0];
        let top = DEFAULT_DESK_HEIGHT + 0.1;
        for p in &det.points_world {
            assert!((p.z - top).abs() < 1e-9, "point not on top face: {p:?}");
        }
        // Top face edges give two direction families 90 degrees apart.
        assert!(det.lines.len() >= 2);
        let mut dirs: Vec<f64> = det.lines.clone();
        dirs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let spread = dirs.last().unwrap() - dirs.first().unwrap();
        assert_relative_eq!(spread, std::f64::consts::FRAC_PI_2, epsilon = 1e-6);
    }

    #[test]
    fn occluded_object_heavily_truncated() {
        // B sits between the camera and A along the view ray.
        let a = cuboid(0, 0.0, 0.3, 0.05);
        let b = cuboid(1, 0.0, 0.0, 0.08);
        let cam = CameraPose::look_at(
            Vector3::new(0.0, -0.6, DEFAULT_DESK_HEIGHT + 0.12),
            Vector3::new(0.0, 0.3, DEFAULT_DESK_HEIGHT + 0.05),
        );
        let intr = CameraIntrinsics::default();
        let isolated = render(&test_scene(vec![a.clone()]), &cam, &intr, &NoiseModel::off(), 1);
        let occluded = render(&test_scene(vec![a, b]), &cam, &intr, &NoiseModel::off(), 1);
        let isolated_count = isolated.detections[0].points_world.len();
        let occluded_count = occluded
            .detections
            .iter()
            .find(|d| d.object_id == 0)
            .map(|d| d.points_world.len())
            .unwrap_or(0);
        assert!(
            (occluded_count as f64) < 0.1 * isolated_count as f64,
            "occluded {occluded_count} vs isolated {isolated_count}"
        );
    }

    #[test]
    fn total_dropout_keeps_desk_points() {
        let scene = test_scene(vec![cuboid(0, 0.0, 0.0, 0.05)]);
        let cam = CameraPose::look_at(
            Vector3::new(0.0, 1e-6, DEFAULT_DESK_HEIGHT + 0.8),
            Vector3::new(0.0, 0.0, DEFAULT_DESK_HEIGHT),
        );
        let mut noise = NoiseModel::off();
        noise.dropout_prob = 1.0;
        let obs = render(&scene, &cam, &CameraIntrinsics::default(), &noise, 1);
        assert!(obs.detections.is_empty());
        assert!(!obs.desk_points.is_empty());
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = test_scene(vec![cuboid(0, 0.1, -0.1, 0.04), cuboid(1, -0.2, 0.2, 0.06)]);
        let cam = CameraPose::look_at(
            Vector3::new(0.4, -0.4, DEFAULT_DESK_HEIGHT + 0.5),
            Vector3::new(0.0, 0.0, DEFAULT_DESK_HEIGHT),
        );
        let intr = CameraIntrinsics::default();
        let a = render(&scene, &cam, &intr, &NoiseModel::medium(), 9);
        let b = render(&scene, &cam, &intr, &NoiseModel::medium(), 9);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn bbox_contains_projections_without_noise() {
        let scene = test_scene(vec![cuboid(0, 0.0, 0.0, 0.05)]);
        let cam = CameraPose::look_at(
            Vector3::new(0.3, -0.3, DEFAULT_DESK_HEIGHT + 0.5),
            Vector3::new(0.0, 0.0, DEFAULT_DESK_HEIGHT + 0.05),
        );
        let intr = CameraIntrinsics::default();
        let obs = render(&scene, &cam, &intr, &NoiseModel::off(), 3);
        let det = &obs.detections[0];
        for p in &det.points_world {
            let px = project(&intr, &cam, *p).unwrap();
            assert!(px.x >= det.bbox_min.x - 1e-9 && px.x <= det.bbox_max.x + 1e-9);
            assert!(px.y >= det.bbox_min.y - 1e-9 && px.y <= det.bbox_max.y + 1e-9);
        }
    }
}
