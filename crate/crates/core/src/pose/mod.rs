//! 9-DoF object pose estimation: RANSAC desk-plane fit, cuboid
//! initialization from points and line directions, the four residual terms,
//! and their joint damped least-squares minimization.

pub mod lm;

use nalgebra::{DVector, Rotation3, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom;
use crate::objmap::ObjectPose;
use crate::sensor::{CameraIntrinsics, CameraPose, Detection};

pub use lm::{LmOptions, SolverError};

pub const RANSAC_ITERS: usize = 200;
pub const RANSAC_INLIER_TOL: f64 = 0.005;
pub const INIT_MIN_POINTS: usize = 10;
/// Residual points are subsampled to this cap for tractable Jacobians.
const MAX_RESIDUAL_POINTS: usize = 1500;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("plane fit needs >= 3 non-collinear points, got a degenerate set")]
    DegeneratePlane,
    #[error("pose init needs >= {INIT_MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
}

/// Desk plane n . p = d with the normal oriented upward (toward the cameras).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneModel {
    pub n: Vector3<f64>,
    pub d: f64,
    pub inliers: usize,
    /// Elevation of the normal above the horizontal plane, radians.
    pub theta_n: f64,
}

impl PlaneModel {
    pub fn distance(&self, p: Vector3<f64>) -> f64 {
        self.n.dot(&p) - self.d
    }
}

/// RANSAC plane fit with a least-squares refit over the consensus set.
///
/// `up_hint` disambiguates the normal sign; pass the mean camera position
/// (anything on the camera side of the desk works).
pub fn fit_desk_plane(
    points: &[Vector3<f64>],
    up_hint: Vector3<f64>,
    seed: u64,
) -> Result<PlaneModel, PoseError> {
    if points.len() < 3 {
        return Err(PoseError::DegeneratePlane);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vector3<f64>, f64, usize)> = None;
    for _ in 0..RANSAC_ITERS {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let k = rng.gen_range(0..points.len());
        if i == j || j == k || i == k {
            continue;
        }
        let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
        if normal.norm() < 1e-12 {
            continue;
        }
        let n = normal.normalize();
        let d = n.dot(&points[i]);
        let inliers = points
            .iter()
            .filter(|p| (n.dot(p) - d).abs() < RANSAC_INLIER_TOL)
            .count();
        if best.map_or(true, |(_, _, c)| inliers > c) {
            best = Some((n, d, inliers));
        }
    }
    let (n0, d0, _) = best.ok_or(PoseError::DegeneratePlane)?;
    let consensus: Vec<Vector3<f64>> = points
        .iter()
        .filter(|p| (n0.dot(p) - d0).abs() < RANSAC_INLIER_TOL)
        .copied()
        .collect();
    if consensus.len() < 3 {
        return Err(PoseError::DegeneratePlane);
    }
    let (n, d) = refine_plane(&consensus).ok_or(PoseError::DegeneratePlane)?;
    let centroid = consensus.iter().sum::<Vector3<f64>>() / consensus.len() as f64;
    let (n, d) = if n.dot(&(up_hint - centroid)) < 0.0 {
        (-n, -d)
    } else {
        (n, d)
    };
    Ok(PlaneModel {
        n,
        d,
        inliers: consensus.len(),
        theta_n: n.z.atan2((n.x * n.x + n.y * n.y).sqrt()),
    })
}

/// Total least squares plane through a point set (smallest covariance
/// eigenvector); None for collinear input.
fn refine_plane(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in points {
        let q = p - centroid;
        cov += q * q.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    // Middle eigenvalue ~ 0 as well means the points are collinear.
    let mut sorted = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = sorted[2].max(1e-30);
    if sorted[1] / scale < 1e-12 {
        return None;
    }
    let n = eig.eigenvectors.column(min_idx).normalize();
    let n = Vector3::new(n.x, n.y, n.z);
    Some((n, n.dot(&centroid)))
}

/// One frame's worth of evidence about a single object.
///
/// `line_azimuths` are the detected image lines back-projected onto the desk
/// plane, expressed as azimuths in the world frame; this makes the yaw
/// residual comparable across camera views.
#[derive(Debug, Clone)]
pub struct ObsSlice {
    pub camera: CameraPose,
    pub bbox_center: Vector2<f64>,
    /// False when the detection bbox was truncated or partially covered, so
    /// its center is biased and must not drive the position term.
    pub trust_center: bool,
    pub points: Vec<Vector3<f64>>,
    pub line_azimuths: Vec<f64>,
}

impl ObsSlice {
    pub fn from_detection(
        det: &Detection,
        cam: &CameraPose,
        intr: &CameraIntrinsics,
        plane: &PlaneModel,
    ) -> Self {
        // Back-projection only knows the line's image direction, not its
        // position; it is anchored at the bbox center. Two failure modes are
        // filtered out: foreshortened lines that amplify image-angle noise
        // (perturb the angle, reject gains over ~2.5x), and oblique views
        // where the desk azimuth depends on where inside the bbox the line
        // actually runs (move the anchor across the bbox perpendicular to
        // the line, reject if the azimuth shifts more than ~2 degrees).
        let half = (det.bbox_max - det.bbox_min) * 0.5;
        let line_azimuths = det
            .lines
            .iter()
            .filter_map(|theta| {
                let az = line_azimuth_on_plane(cam, intr, det.bbox_center, *theta, plane)?;
                let az_d =
                    line_azimuth_on_plane(cam, intr, det.bbox_center, *theta + 1e-2, plane)?;
                let gain = geom::wrap_quarter(az_d - az).abs() / 1e-2;
                if gain > 2.5 {
                    return None;
                }
                let perp = Vector2::new(-theta.sin(), theta.cos());
                let reach = (perp.x * half.x).abs() + (perp.y * half.y).abs();
                for sign in [-1.0, 1.0] {
                    let anchor = det.bbox_center + perp * (sign * reach);
                    let az_a = line_azimuth_on_plane(cam, intr, anchor, *theta, plane)?;
                    if geom::wrap_quarter(az_a - az).abs() > 0.035 {
                        return None;
                    }
                }
                Some(az)
            })
            .collect();
        ObsSlice {
            camera: *cam,
            bbox_center: det.bbox_center,
            trust_center: true,
            points: det.points_world.clone(),
            line_azimuths,
        }
    }
}

/// Azimuth (radians in [0, pi)) of an image line after back-projection onto
/// the desk plane. None when either ray misses the plane.
pub fn line_azimuth_on_plane(
    cam: &CameraPose,
    intr: &CameraIntrinsics,
    pixel: Vector2<f64>,
    theta_image: f64,
    plane: &PlaneModel,
) -> Option<f64> {
    let hit = |px: Vector2<f64>| -> Option<Vector3<f64>> {
        let dir = cam.rotation
            * Vector3::new((px.x - intr.cx) / intr.fx, (px.y - intr.cy) / intr.fy, 1.0);
        let denom = plane.n.dot(&dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (plane.d - plane.n.dot(&cam.translation)) / denom;
        if t <= 0.0 {
            return None;
        }
        Some(cam.translation + dir * t)
    };
    let a = hit(pixel)?;
    let b = hit(pixel + Vector2::new(theta_image.cos(), theta_image.sin()))?;
    let d = b - a;
    if d.norm() < 1e-12 {
        return None;
    }
    Some(d.y.atan2(d.x).rem_euclid(std::f64::consts::PI))
}

/// 90-degree-modular yaw residual folded to [-45, 45] degrees.
pub fn yaw_residual(theta_y: f64, theta_l: f64) -> f64 {
    geom::wrap_quarter(theta_y - theta_l)
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub lm: LmOptions,
    pub w_pos: f64,
    pub w_scale: f64,
    pub w_yaw: f64,
    pub w_rollpitch: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            lm: LmOptions::default(),
            w_pos: 1.0,
            w_scale: 100.0,
            w_yaw: 10.0,
            w_rollpitch: 10.0,
        }
    }
}

impl SolverOptions {
    fn sqrt_weights(&self) -> [f64; 4] {
        [
            self.w_pos.sqrt(),
            self.w_scale.sqrt(),
            self.w_yaw.sqrt(),
            self.w_rollpitch.sqrt(),
        ]
    }
}

/// Summed residual magnitudes, one entry per term of the joint cost.
#[derive(Debug, Clone, Copy)]
pub struct ResidualBundle {
    /// Total projected-center error over frames, pixels.
    pub r_pos: f64,
    /// Total outside-the-cube violation over points, meters.
    pub r_scale: f64,
    /// Total folded yaw-line misalignment over lines, radians.
    pub r_yaw: f64,
    /// (cube z-axis vs normal, cube x-axis vs normal minus 90 deg), radians.
    pub r_rp: (f64, f64),
    /// Frames whose object center fell behind the camera.
    pub skipped_frames: usize,
}

fn pack(pose: &ObjectPose) -> SVector<f64, 9> {
    let mut p = SVector::<f64, 9>::zeros();
    for i in 0..3 {
        p[i] = pose.t[i];
        p[3 + i] = pose.theta[i];
        p[6 + i] = pose.s[i];
    }
    p
}

fn unpack(p: &SVector<f64, 9>) -> ObjectPose {
    ObjectPose {
        t: Vector3::new(p[0], p[1], p[2]),
        theta: Vector3::new(p[3], p[4], p[5]),
        s: Vector3::new(p[6], p[7], p[8]),
    }
}

/// Predicted pixel bbox center of a cuboid: midpoint of the axis-aligned
/// hull of the eight projected corners. This matches what a detector's box
/// center measures for an unoccluded object, unlike the direct projection
/// of the cuboid center, which is biased for oblique views. None when any
/// corner lies behind the camera.
pub fn predicted_bbox_center(
    pose: &ObjectPose,
    cam: &CameraPose,
    intr: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in pose.corners() {
        let p_cam = cam.world_to_camera(corner);
        if p_cam.z <= 0.0 {
            return None;
        }
        let px = Vector2::new(
            intr.cx + intr.fx * p_cam.x / p_cam.z,
            intr.cy + intr.fy * p_cam.y / p_cam.z,
        );
        lo.x = lo.x.min(px.x);
        lo.y = lo.y.min(px.y);
        hi.x = hi.x.max(px.x);
        hi.y = hi.y.max(px.y);
    }
    Some((lo + hi) * 0.5)
}

/// Stacked weighted residual vector for the joint cost. Row layout is fixed
/// for a given observation set: 2 rows per frame (position), 3 per point
/// (scale), 1 per line (yaw), 2 for roll/pitch. Behind-camera frames
/// contribute zero rows rather than changing the layout.
pub fn stacked_residuals(
    params: &SVector<f64, 9>,
    slices: &[ObsSlice],
    cloud: &[Vector3<f64>],
    plane: &PlaneModel,
    intr: &CameraIntrinsics,
    opts: &SolverOptions,
) -> DVector<f64> {
    let pose = unpack(params);
    let rot = pose.rotation();
    let [sw_pos, sw_scale, sw_yaw, sw_rp] = opts.sqrt_weights();
    let n_lines: usize = slices.iter().map(|s| s.line_azimuths.len()).sum();
    let mut r = DVector::zeros(2 * slices.len() + 3 * cloud.len() + n_lines + 2);
    let mut row = 0;

    for slice in slices {
        if slice.trust_center {
            if let Some(px) = predicted_bbox_center(&pose, &slice.camera, intr) {
                r[row] = sw_pos * (px.x - slice.bbox_center.x);
                r[row + 1] = sw_pos * (px.y - slice.bbox_center.y);
            }
        }
        row += 2;
    }
    for p in cloud {
        let p_obj = rot.transpose() * (p - pose.t);
        for axis in 0..3 {
            r[row] = sw_scale * (p_obj[axis].abs() - pose.s[axis]).max(0.0);
            row += 1;
        }
    }
    for slice in slices {
        for az in &slice.line_azimuths {
            r[row] = sw_yaw * yaw_residual(pose.theta.z, *az);
            row += 1;
        }
    }
    let z_axis = rot * Vector3::z();
    let x_axis = rot * Vector3::x();
    r[row] = sw_rp * z_axis.cross(&plane.n).norm().atan2(z_axis.dot(&plane.n));
    r[row + 1] = sw_rp
        * (x_axis.dot(&plane.n).clamp(-1.0, 1.0).acos() - std::f64::consts::FRAC_PI_2);
    r
}

/// Unweighted per-term residual summary at a pose.
pub fn residuals(
    pose: &ObjectPose,
    slices: &[ObsSlice],
    cloud: &[Vector3<f64>],
    plane: &PlaneModel,
    intr: &CameraIntrinsics,
) -> ResidualBundle {
    let rot = pose.rotation();
    let mut r_pos = 0.0;
    let mut skipped = 0;
    for slice in slices {
        if !slice.trust_center {
            continue;
        }
        match predicted_bbox_center(pose, &slice.camera, intr) {
            Some(px) => r_pos += (px - slice.bbox_center).norm(),
            None => skipped += 1,
        }
    }
    let mut r_scale = 0.0;
    for p in cloud {
        let p_obj = rot.transpose() * (p - pose.t);
        for axis in 0..3 {
            r_scale += (p_obj[axis].abs() - pose.s[axis]).max(0.0);
        }
    }
    let mut r_yaw = 0.0;
    for slice in slices {
        for az in &slice.line_azimuths {
            r_yaw += yaw_residual(pose.theta.z, *az).abs();
        }
    }
    let z_axis = rot * Vector3::z();
    let x_axis = rot * Vector3::x();
    let rp1 = z_axis.cross(&plane.n).norm().atan2(z_axis.dot(&plane.n));
    let rp2 = x_axis.dot(&plane.n).clamp(-1.0, 1.0).acos() - std::f64::consts::FRAC_PI_2;
    ResidualBundle {
        r_pos,
        r_scale,
        r_yaw,
        r_rp: (rp1, rp2),
        skipped_frames: skipped,
    }
}

/// Fit a tight cuboid to a filtered cloud: yaw from the dominant line
/// azimuth, orientation aligned to the desk normal, extents from the
/// yaw-aligned bounding box, bottom face snapped onto the plane.
pub fn init_pose(
    points: &[Vector3<f64>],
    plane: &PlaneModel,
    line_azimuths: &[f64],
) -> Result<ObjectPose, PoseError> {
    let yaw = dominant_direction(line_azimuths).unwrap_or(0.0);
    init_pose_with_yaw(points, plane, yaw)
}

/// Geometric initialization with the yaw fixed by the caller: quantile
/// extents and centroid measured in the yaw-aligned, plane-tilted frame.
pub fn init_pose_with_yaw(
    points: &[Vector3<f64>],
    plane: &PlaneModel,
    yaw: f64,
) -> Result<ObjectPose, PoseError> {
    if points.len() < INIT_MIN_POINTS {
        return Err(PoseError::TooFewPoints(points.len()));
    }
    let tilt = Rotation3::rotation_between(&Vector3::z(), &plane.n)
        .unwrap_or_else(Rotation3::identity);
    let rot = tilt.matrix() * geom::rotation_rpy(0.0, 0.0, yaw);
    // Bounding box in the yaw-aligned frame.
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    // Per-axis 2%/98% quantiles instead of min/max: the raw extremes of a
    // noisy cloud grow with the number of accumulated points and would
    // inflate the extents.
    let mut coords: [Vec<f64>; 3] = [
        Vec::with_capacity(points.len()),
        Vec::with_capacity(points.len()),
        Vec::with_capacity(points.len()),
    ];
    for p in points {
        let q = rot.transpose() * (p - centroid);
        for a in 0..3 {
            coords[a].push(q[a]);
        }
    }
    let mut lo = Vector3::zeros();
    let mut hi = Vector3::zeros();
    for a in 0..3 {
        coords[a].sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = coords[a].len();
        lo[a] = coords[a][((n as f64 * 0.02) as usize).min(n - 1)];
        hi[a] = coords[a][((n as f64 * 0.98) as usize).min(n - 1)];
    }
    let s = (hi - lo) * 0.5;
    let mut t = centroid + rot * ((hi + lo) * 0.5);
    let pose = ObjectPose {
        t,
        theta: geom::rpy_from_rotation(&rot),
        s,
    }
    .normalized();
    // Snap the bottom face onto the desk plane.
    let offset = plane.d + pose.s.z - plane.n.dot(&pose.t);
    t = pose.t + plane.n * offset;
    Ok(ObjectPose { t, ..pose })
}

/// Mode of directions under 90-degree symmetry, via 2-degree histogram bins
/// refined by averaging the winning bin's members.
fn dominant_direction(azimuths: &[f64]) -> Option<f64> {
    if azimuths.is_empty() {
        return None;
    }
    const BINS: usize = 45;
    let quarter = std::f64::consts::FRAC_PI_2;
    let mut counts = [0usize; BINS];
    for az in azimuths {
        let folded = az.rem_euclid(quarter);
        let bin = ((folded / quarter * BINS as f64) as usize).min(BINS - 1);
        counts[bin] += 1;
    }
    let best = counts
        .iter()
        .enumerate()
        .max_by_key(|(_, c)| **c)
        .map(|(i, _)| i)?;
    // Mean-shift from the winning bin: the per-line azimuth noise is wider
    // than a bin, so averaging only that bin's members would keep a biased
    // subset. A ~7 degree window over a few iterations settles on the mode.
    let mut center = (best as f64 + 0.5) / BINS as f64 * quarter;
    const WINDOW: f64 = 0.12;
    for _ in 0..5 {
        let (mut sx, mut sy) = (0.0, 0.0);
        for az in azimuths {
            let folded = az.rem_euclid(quarter);
            if geom::wrap_quarter(folded - center).abs() <= WINDOW {
                // Map the quarter-circle to the full circle for averaging.
                let a = folded / quarter * 2.0 * std::f64::consts::PI;
                sx += a.cos();
                sy += a.sin();
            }
        }
        if sx == 0.0 && sy == 0.0 {
            break;
        }
        let mean = sy.atan2(sx).rem_euclid(2.0 * std::f64::consts::PI);
        center = mean / (2.0 * std::f64::consts::PI) * quarter;
    }
    Some(center)
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub pose: ObjectPose,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cost_trace: Vec<f64>,
}

/// Jointly minimize the four weighted residual terms over the 9 parameters.
/// Non-convergence returns the best pose found with `converged = false`.
/// Largest admissible half-extent, well above any tabletop object.
pub const MAX_HALF_EXTENT: f64 = 0.3;

pub fn optimize_pose(
    init: &ObjectPose,
    slices: &[ObsSlice],
    cloud: &[Vector3<f64>],
    plane: &PlaneModel,
    intr: &CameraIntrinsics,
    opts: &SolverOptions,
) -> Result<OptimizeResult, SolverError> {
    assert!(!slices.is_empty(), "optimize_pose needs >= 1 observation slice");
    let cloud = subsample_cloud(cloud, MAX_RESIDUAL_POINTS);
    let result = lm::minimize(
        |p| stacked_residuals(p, slices, &cloud, plane, intr, opts),
        |mut p| {
            for i in 6..9 {
                p[i] = p[i].clamp(crate::objmap::MIN_HALF_EXTENT, MAX_HALF_EXTENT);
            }
            // Tabletop constraint: objects rest on the desk, so snap the
            // bottom-face center back onto the plane along its normal. This
            // removes the vertical direction the one-sided scale term leaves
            // unconstrained.
            let pose = unpack(&p);
            let bottom = pose.t - pose.rotation() * Vector3::new(0.0, 0.0, pose.s.z);
            let t = pose.t - plane.n * plane.distance(bottom);
            for i in 0..3 {
                p[i] = t[i];
            }
            p
        },
        pack(init),
        &opts.lm,
    )?;
    Ok(OptimizeResult {
        pose: unpack(&result.params).normalized(),
        cost: result.cost,
        iterations: result.iterations,
        converged: result.converged,
        cost_trace: result.cost_trace,
    })
}

/// Evenly strided copy of the cloud capped to `max_points`.
fn subsample_cloud(cloud: &[Vector3<f64>], max_points: usize) -> Vec<Vector3<f64>> {
    if cloud.len() <= max_points {
        return cloud.to_vec();
    }
    let stride = cloud.len().div_ceil(max_points);
    cloud.iter().step_by(stride).copied().collect()
}
