//! Ground-truth tabletop worlds: a desk plane plus posed primitives,
//! loadable from JSON or generated reproducibly from a seed.

use std::ops::RangeInclusive;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom;
use crate::objmap::ObjectPose;

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Default desk: 1.0 x 1.4 m at height 0.7 m.
pub const DEFAULT_DESK_BOUNDS: DeskBounds = DeskBounds {
    min_x: -0.5,
    max_x: 0.5,
    min_y: -0.7,
    max_y: 0.7,
};
pub const DEFAULT_DESK_HEIGHT: f64 = 0.7;

/// Object size range, half-extent per axis (full size 4-25 cm).
const HALF_EXTENT_MIN: f64 = 0.02;
const HALF_EXTENT_MAX: f64 = 0.125;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported scene format version {0} (expected {SCENE_FORMAT_VERSION})")]
    Format(u32),
    #[error("object {id}: {reason}")]
    Validation { id: u32, reason: String },
    #[error("scene has duplicate object id {0}")]
    DuplicateId(u32),
    #[error("could not place object {placed} of {requested} after {retries} retries (desk too crowded)")]
    PlacementFailure {
        placed: usize,
        requested: usize,
        retries: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cuboid,
    Cylinder,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenePrimitive {
    pub id: u32,
    pub label: String,
    pub shape: Shape,
    pub pose_gt: ObjectPose,
}

impl ScenePrimitive {
    /// Top-view footprint corners of the (bounding) rectangle.
    pub fn footprint(&self) -> [nalgebra::Point2<f64>; 4] {
        geom::rect_corners(
            Vector2::new(self.pose_gt.t.x, self.pose_gt.t.y),
            Vector2::new(self.pose_gt.s.x, self.pose_gt.s.y),
            self.pose_gt.theta.z,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeskBounds {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl DeskBounds {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn depth(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeskScene {
    pub desk_height: f64,
    pub desk_bounds: DeskBounds,
    pub primitives: Vec<ScenePrimitive>,
    pub seed: u64,
}

/// On-disk scene file with a versioned header.
#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    format: u32,
    #[serde(flatten)]
    scene: DeskScene,
}

impl DeskScene {
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.primitives {
            if !seen.insert(p.id) {
                return Err(SceneError::DuplicateId(p.id));
            }
            validate_primitive(p, self)?;
        }
        // Pairwise interpenetration: upright shapes all rest on the desk, so
        // 3D overlap reduces to footprint overlap.
        for i in 0..self.primitives.len() {
            for j in (i + 1)..self.primitives.len() {
                let a = &self.primitives[i];
                let b = &self.primitives[j];
                let area = geom::polygon_area(&geom::clip_convex(&a.footprint(), &b.footprint()));
                if area > 1e-9 {
                    return Err(SceneError::Validation {
                        id: b.id,
                        reason: format!("interpenetrates object {}", a.id),
                    });
                }
            }
        }
        Ok(())
    }
}

fn validate_primitive(p: &ScenePrimitive, scene: &DeskScene) -> Result<(), SceneError> {
    let pose = &p.pose_gt;
    for axis in 0..3 {
        if pose.s[axis] <= 0.0 {
            return Err(SceneError::Validation {
                id: p.id,
                reason: format!("non-positive half-extent on axis {axis}: {}", pose.s[axis]),
            });
        }
    }
    if p.shape == Shape::Cylinder && (pose.s.x - pose.s.y).abs() > 1e-9 {
        return Err(SceneError::Validation {
            id: p.id,
            reason: "cylinder requires s_x == s_y (circular cross-section)".into(),
        });
    }
    let bottom = pose.t.z - pose.s.z;
    if (bottom - scene.desk_height).abs() > 1e-6 {
        return Err(SceneError::Validation {
            id: p.id,
            reason: format!(
                "bottom face at {bottom:.6} m is not on the desk plane at {:.6} m",
                scene.desk_height
            ),
        });
    }
    if pose.theta.x.abs() > 1e-9 || pose.theta.y.abs() > 1e-9 {
        return Err(SceneError::Validation {
            id: p.id,
            reason: "ground-truth objects must lie flat (roll = pitch = 0)".into(),
        });
    }
    for corner in p.footprint() {
        if !scene.desk_bounds.contains(Vector2::new(corner.x, corner.y)) {
            return Err(SceneError::Validation {
                id: p.id,
                reason: "footprint extends outside the desk bounds".into(),
            });
        }
    }
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<DeskScene, SceneError> {
    let text = std::fs::read_to_string(path)?;
    let file: SceneFile = serde_json::from_str(&text)?;
    if file.format != SCENE_FORMAT_VERSION {
        return Err(SceneError::Format(file.format));
    }
    file.scene.validate()?;
    Ok(file.scene)
}

pub fn save_scene(scene: &DeskScene, path: &Path) -> Result<(), SceneError> {
    scene.validate()?;
    let file = SceneFile {
        format: SCENE_FORMAT_VERSION,
        scene: scene.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Sparse,
    Clustered,
    Uneven,
}

const LABELS: &[&str] = &[
    "box", "book", "mug", "can", "carton", "bottle", "toy", "bowl",
];

/// Deterministically generate a scene. Identical (seed, parameters) always
/// yield the identical scene.
pub fn generate_scene(
    seed: u64,
    object_count: RangeInclusive<usize>,
    spacing: Spacing,
) -> Result<DeskScene, SceneError> {
    generate_scene_on(
        seed,
        object_count,
        spacing,
        DEFAULT_DESK_HEIGHT,
        DEFAULT_DESK_BOUNDS,
    )
}

pub fn generate_scene_on(
    seed: u64,
    object_count: RangeInclusive<usize>,
    spacing: Spacing,
    desk_height: f64,
    desk_bounds: DeskBounds,
) -> Result<DeskScene, SceneError> {
    assert!(
        *object_count.start() >= 1 && *object_count.end() <= 16,
        "object count range must lie within [1, 16]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(object_count.clone());

    let mut scene = DeskScene {
        desk_height,
        desk_bounds,
        primitives: Vec::with_capacity(count),
        seed,
    };

    const MAX_RETRIES: usize = 300;
    let mut idx = 0;
    while scene.primitives.len() < count {
        // Clustered scenes start with a tight diagonal pair so that adjacent
        // objects occlude each other and overlap in the top-view AABB sense.
        let pair = spacing == Spacing::Clustered && idx == 0 && count >= 2;
        let placed = if pair {
            place_pair(&mut rng, &mut scene, &mut idx, MAX_RETRIES)
        } else {
            place_single(&mut rng, &mut scene, &mut idx, spacing, MAX_RETRIES)
        };
        if !placed {
            return Err(SceneError::PlacementFailure {
                placed: scene.primitives.len(),
                requested: count,
                retries: MAX_RETRIES,
            });
        }
    }
    scene.validate().expect("generator produced invalid scene");
    Ok(scene)
}

fn random_half_extents(rng: &mut ChaCha8Rng, shape: Shape) -> Vector3<f64> {
    let mut s = Vector3::new(
        rng.gen_range(HALF_EXTENT_MIN..HALF_EXTENT_MAX),
        rng.gen_range(HALF_EXTENT_MIN..HALF_EXTENT_MAX),
        rng.gen_range(HALF_EXTENT_MIN..HALF_EXTENT_MAX),
    );
    if shape == Shape::Cylinder {
        s.y = s.x;
    }
    s
}

fn make_primitive(
    id: u32,
    rng: &mut ChaCha8Rng,
    shape: Shape,
    center: Vector2<f64>,
    s: Vector3<f64>,
    yaw: f64,
    desk_height: f64,
) -> ScenePrimitive {
    let label = LABELS[rng.gen_range(0..LABELS.len())].to_string();
    ScenePrimitive {
        id,
        label,
        shape,
        pose_gt: ObjectPose {
            t: Vector3::new(center.x, center.y, desk_height + s.z),
            theta: Vector3::new(0.0, 0.0, yaw),
            s,
        },
    }
}

fn fits(scene: &DeskScene, candidate: &ScenePrimitive, clearance: f64) -> bool {
    for corner in candidate.footprint() {
        if !scene.desk_bounds.contains(Vector2::new(corner.x, corner.y)) {
            return false;
        }
    }
    let grown = ScenePrimitive {
        pose_gt: ObjectPose {
            s: candidate.pose_gt.s + Vector3::new(clearance, clearance, 0.0),
            ..candidate.pose_gt.clone()
        },
        ..candidate.clone()
    };
    for other in &scene.primitives {
        let area =
            geom::polygon_area(&geom::clip_convex(&grown.footprint(), &other.footprint()));
        if area > 1e-12 {
            return false;
        }
    }
    true
}

fn place_single(
    rng: &mut ChaCha8Rng,
    scene: &mut DeskScene,
    idx: &mut u32,
    spacing: Spacing,
    max_retries: usize,
) -> bool {
    let b = scene.desk_bounds;
    for _ in 0..max_retries {
        // Resample the primitive every retry so a crowded desk can still
        // accept smaller objects.
        let shape = if rng.gen_bool(0.75) {
            Shape::Cuboid
        } else {
            Shape::Cylinder
        };
        let s = random_half_extents(rng, shape);
        let yaw = if shape == Shape::Cylinder {
            0.0
        } else {
            rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2)
        };
        let margin = s.x.max(s.y) * std::f64::consts::SQRT_2;
        // Uneven scenes concentrate everything in the +y half of the desk.
        let y_lo = match spacing {
            Spacing::Uneven => 0.5 * (b.min_y + b.max_y),
            _ => b.min_y + margin,
        };
        if b.min_x + margin >= b.max_x - margin || y_lo + margin >= b.max_y - margin {
            continue;
        }
        let center = Vector2::new(
            rng.gen_range(b.min_x + margin..b.max_x - margin),
            rng.gen_range(y_lo + margin..b.max_y - margin),
        );
        let candidate = make_primitive(*idx, rng, shape, center, s, yaw, scene.desk_height);
        let clearance = if spacing == Spacing::Sparse { 0.04 } else { 0.015 };
        if fits(scene, &candidate, clearance) {
            scene.primitives.push(candidate);
            *idx += 1;
            return true;
        }
    }
    false
}

/// Place an anchor with a square footprint plus a 45-degree-rotated partner
/// offset along the diagonal: their footprints do not touch but their
/// axis-aligned top-view bounding boxes overlap.
fn place_pair(
    rng: &mut ChaCha8Rng,
    scene: &mut DeskScene,
    idx: &mut u32,
    max_retries: usize,
) -> bool {
    let gap = 0.01;
    let mut sa = random_half_extents(rng, Shape::Cuboid);
    sa.y = sa.x;
    let mut sb = random_half_extents(rng, Shape::Cuboid);
    if sb.y < sb.x {
        let (x, y) = (sb.x, sb.y);
        sb.x = y;
        sb.y = x;
    }
    let b = scene.desk_bounds;
    for _ in 0..max_retries {
        let anchor_c = Vector2::new(
            rng.gen_range(b.min_x * 0.5..b.max_x * 0.5),
            rng.gen_range(b.min_y * 0.5..b.max_y * 0.5),
        );
        // Support distances along the diagonal (1,1)/sqrt(2).
        let support_a = std::f64::consts::SQRT_2 * sa.x;
        let support_b = sb.x; // rotated 45 deg, long axis across the diagonal
        let d = support_a + support_b + gap;
        let partner_c = anchor_c + Vector2::new(d / std::f64::consts::SQRT_2, d / std::f64::consts::SQRT_2);

        let anchor = make_primitive(*idx, rng, Shape::Cuboid, anchor_c, sa, 0.0, scene.desk_height);
        let partner = make_primitive(
            *idx + 1,
            rng,
            Shape::Cuboid,
            partner_c,
            sb,
            std::f64::consts::FRAC_PI_4,
            scene.desk_height,
        );
        if fits(scene, &anchor, 0.0) {
            scene.primitives.push(anchor);
            if fits(scene, &partner, 0.0) {
                scene.primitives.push(partner);
                *idx += 2;
                return true;
            }
            scene.primitives.pop();
        }
    }
    false
}

/// Top-view axis-aligned bounding box of a primitive's footprint.
pub fn footprint_aabb(p: &ScenePrimitive) -> (Vector2<f64>, Vector2<f64>) {
    let corners = p.footprint();
    let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in corners {
        lo.x = lo.x.min(c.x);
        lo.y = lo.y.min(c.y);
        hi.x = hi.x.max(c.x);
        hi.y = hi.y.max(c.y);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::aabb_iou;

    fn single_cuboid_scene() -> DeskScene {
        DeskScene {
            desk_height: DEFAULT_DESK_HEIGHT,
            desk_bounds: DEFAULT_DESK_BOUNDS,
            primitives: vec![ScenePrimitive {
                id: 0,
                label: "box".into(),
                shape: Shape::Cuboid,
                pose_gt: ObjectPose {
                    t: Vector3::new(0.0, 0.0, DEFAULT_DESK_HEIGHT + 0.05),
                    theta: Vector3::zeros(),
                    s: Vector3::new(0.05, 0.05, 0.05),
                },
            }],
            seed: 0,
        }
    }

    #[test]
    fn load_single_cuboid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        save_scene(&single_cuboid_scene(), &path).unwrap();
        let scene = load_scene(&path).unwrap();
        assert_eq!(scene.primitives.len(), 1);
        let p = &scene.primitives[0].pose_gt;
        assert!((p.t.z - p.s.z - scene.desk_height).abs() < 1e-9);
    }

    #[test]
    fn zero_extent_rejected() {
        let mut scene = single_cuboid_scene();
        scene.primitives[0].pose_gt.s.z = 0.0;
        let err = scene.validate().unwrap_err();
        match err {
            SceneError::Validation { id, .. } => assert_eq!(id, 0),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn eleven_object_fixture_round_trips() {
        let scene = generate_scene(42, 11..=11, Spacing::Sparse).unwrap();
        assert_eq!(scene.primitives.len(), 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eleven.json");
        save_scene(&scene, &path).unwrap();
        let loaded = load_scene(&path).unwrap();
        assert_eq!(loaded.primitives.len(), 11);
        let a = serde_json::to_string(&scene).unwrap();
        let b = serde_json::to_string(&loaded).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(7, 5..=5, Spacing::Sparse).unwrap();
        let b = generate_scene(7, 5..=5, Spacing::Sparse).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn clustered_scene_has_aabb_overlapping_pair() {
        let scene = generate_scene(3, 8..=8, Spacing::Clustered).unwrap();
        let mut found = false;
        for i in 0..scene.primitives.len() {
            for j in (i + 1)..scene.primitives.len() {
                let (lo1, hi1) = footprint_aabb(&scene.primitives[i]);
                let (lo2, hi2) = footprint_aabb(&scene.primitives[j]);
                if aabb_iou(lo1, hi1, lo2, hi2) > 0.0 {
                    found = true;
                }
            }
        }
        assert!(found, "clustered scene should contain an AABB-overlapping pair");
    }

    #[test]
    fn crowded_tiny_desk_fails() {
        let tiny = DeskBounds {
            min_x: -0.1,
            max_x: 0.1,
            min_y: -0.1,
            max_y: 0.1,
        };
        let err = generate_scene_on(1, 16..=16, Spacing::Sparse, 0.7, tiny).unwrap_err();
        assert!(matches!(err, SceneError::PlacementFailure { .. }));
    }

    #[test]
    fn generated_scenes_always_valid() {
        for seed in 0..100 {
            let spacing = match seed % 3 {
                0 => Spacing::Sparse,
                1 => Spacing::Clustered,
                _ => Spacing::Uneven,
            };
            if let Ok(scene) = generate_scene(seed, 1..=8, spacing) {
                scene.validate().unwrap();
            }
        }
    }
}
