//! Pose accuracy metrics: center distance error, yaw angle error, and
//! top-view 2D / exact 3D IoU of upright cuboids.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geom;
use crate::objmap::ObjectPose;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseMetrics {
    /// Center distance error, centimeters.
    pub cde: f64,
    /// Yaw angle error folded to [0, 45] degrees; None for rotationally
    /// symmetric ground truth (cylinders).
    pub yae: Option<f64>,
    /// Top-view footprint IoU.
    pub iou2d: f64,
    /// Volumetric IoU of the upright boxes.
    pub iou3d: f64,
}

fn footprint(pose: &ObjectPose) -> (Vector2<f64>, Vector2<f64>, f64) {
    (
        Vector2::new(pose.t.x, pose.t.y),
        Vector2::new(pose.s.x, pose.s.y),
        pose.theta.z,
    )
}

/// Top-view IoU of the yaw-rotated footprint rectangles.
pub fn iou_2d(a: &ObjectPose, b: &ObjectPose) -> f64 {
    let (ca, ha, ya) = footprint(a);
    let (cb, hb, yb) = footprint(b);
    let inter = geom::rotated_rect_intersection_area(ca, ha, ya, cb, hb, yb);
    let area_a = 4.0 * ha.x * ha.y;
    let area_b = 4.0 * hb.x * hb.y;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Exact volumetric IoU for upright boxes: footprint polygon intersection
/// times the vertical overlap, over the union volume.
pub fn iou_3d(a: &ObjectPose, b: &ObjectPose) -> f64 {
    let (ca, ha, ya) = footprint(a);
    let (cb, hb, yb) = footprint(b);
    let foot_inter = geom::rotated_rect_intersection_area(ca, ha, ya, cb, hb, yb);
    let z_lo = (a.t.z - a.s.z).max(b.t.z - b.s.z);
    let z_hi = (a.t.z + a.s.z).min(b.t.z + b.s.z);
    let inter = foot_inter * (z_hi - z_lo).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Compare an estimate against ground truth. `symmetric_gt` suppresses the
/// yaw metric (cylinders have no observable yaw).
pub fn evaluate(est: &ObjectPose, gt: &ObjectPose, symmetric_gt: bool) -> PoseMetrics {
    let cde = (est.t - gt.t).norm() * 100.0;
    let yae = if symmetric_gt {
        None
    } else {
        Some(geom::wrap_quarter(est.theta.z - gt.theta.z).abs().to_degrees())
    };
    PoseMetrics {
        cde,
        yae,
        iou2d: iou_2d(est, gt),
        iou3d: iou_3d(est, gt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(t: Vector3<f64>, yaw: f64, s: Vector3<f64>) -> ObjectPose {
        ObjectPose {
            t,
            theta: Vector3::new(0.0, 0.0, yaw),
            s,
        }
    }

    #[test]
    fn identity_is_perfect() {
        let p = pose(
            Vector3::new(0.1, -0.2, 0.75),
            0.4,
            Vector3::new(0.05, 0.03, 0.06),
        );
        let m = evaluate(&p, &p, false);
        assert_relative_eq!(m.cde, 0.0);
        assert_relative_eq!(m.yae.unwrap(), 0.0);
        assert_relative_eq!(m.iou2d, 1.0, epsilon = 1e-9);
        assert_relative_eq!(m.iou3d, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn yaw_error_folds_under_symmetry() {
        let gt = pose(Vector3::zeros(), 0.0, Vector3::new(0.05, 0.05, 0.05));
        let est = pose(
            Vector3::zeros(),
            88.0_f64.to_radians(),
            Vector3::new(0.05, 0.05, 0.05),
        );
        let m = evaluate(&est, &gt, false);
        assert_relative_eq!(m.yae.unwrap(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn cylinder_gt_has_no_yaw_metric() {
        let p = pose(Vector3::zeros(), 0.0, Vector3::new(0.04, 0.04, 0.08));
        assert!(evaluate(&p, &p, true).yae.is_none());
    }

    #[test]
    fn half_offset_unit_boxes() {
        // Unit boxes offset by half an extent along x: IoU = 0.5 / 1.5.
        let a = pose(Vector3::zeros(), 0.0, Vector3::new(0.5, 0.5, 0.5));
        let b = pose(Vector3::new(0.5, 0.0, 0.0), 0.0, Vector3::new(0.5, 0.5, 0.5));
        assert_relative_eq!(iou_3d(&a, &b), 1.0 / 3.0, epsilon = 1e-9);
    }

    fn monte_carlo_iou3d(a: &ObjectPose, b: &ObjectPose, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lo = Vector3::from_element(f64::INFINITY);
        let mut hi = Vector3::from_element(f64::NEG_INFINITY);
        for p in a.corners().iter().chain(b.corners().iter()) {
            for axis in 0..3 {
                lo[axis] = lo[axis].min(p[axis]);
                hi[axis] = hi[axis].max(p[axis]);
            }
        }
        let inside = |pose: &ObjectPose, p: Vector3<f64>| {
            let q = pose.world_to_object(p);
            (0..3).all(|axis| q[axis].abs() <= pose.s[axis])
        };
        let mut n_inter = 0usize;
        let mut n_union = 0usize;
        for _ in 0..samples {
            let p = Vector3::new(
                rng.gen_range(lo.x..hi.x),
                rng.gen_range(lo.y..hi.y),
                rng.gen_range(lo.z..hi.z),
            );
            let ia = inside(a, p);
            let ib = inside(b, p);
            if ia && ib {
                n_inter += 1;
            }
            if ia || ib {
                n_union += 1;
            }
        }
        if n_union == 0 {
            0.0
        } else {
            n_inter as f64 / n_union as f64
        }
    }

    #[test]
    fn exact_iou_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let a = pose(
                Vector3::new(0.0, 0.0, rng.gen_range(0.72..0.78)),
                rng.gen_range(-1.0..1.0),
                Vector3::new(
                    rng.gen_range(0.03..0.1),
                    rng.gen_range(0.03..0.1),
                    rng.gen_range(0.03..0.1),
                ),
            );
            let b = pose(
                Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(0.72..0.78),
                ),
                rng.gen_range(-1.0..1.0),
                Vector3::new(
                    rng.gen_range(0.03..0.1),
                    rng.gen_range(0.03..0.1),
                    rng.gen_range(0.03..0.1),
                ),
            );
            let exact = iou_3d(&a, &b);
            let mc = monte_carlo_iou3d(&a, &b, 200_000, trial);
            assert!((exact - mc).abs() < 0.01, "trial {trial}: {exact} vs {mc}");
        }
    }

    #[test]
    fn iou_symmetry_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mk = |rng: &mut ChaCha8Rng| {
                pose(
                    Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.75),
                    rng.gen_range(-1.5..1.5),
                    Vector3::new(
                        rng.gen_range(0.02..0.08),
                        rng.gen_range(0.02..0.08),
                        rng.gen_range(0.02..0.08),
                    ),
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            assert_relative_eq!(iou_2d(&a, &b), iou_2d(&b, &a), epsilon = 1e-12);
            assert_relative_eq!(iou_3d(&a, &b), iou_3d(&b, &a), epsilon = 1e-12);
            assert!(iou_3d(&a, &b) <= iou_2d(&a, &b).min(1.0) + 1e-12);
        }
    }
}
