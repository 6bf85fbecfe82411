//! Outlier removal for accumulated object point clouds.
//!
//! Two stages run before pose refinement: a statistical distance filter
//! (drop points beyond 3 median absolute deviations from the centroid) and
//! a slice filter that trims sparse edge slices of the voxelized cloud.

use std::collections::HashSet;

use nalgebra::Vector3;

use super::grid::GRID_RESOLUTION;
use super::ObjectPose;

/// Minimum cloud size before the slice filter is applied.
pub const SLICE_FILTER_MIN_POINTS: usize = 30;

#[derive(Debug, Clone, Default)]
pub struct SliceFilterReport {
    /// Axes (0..3) where the filter would have removed more than half the
    /// points and was aborted.
    pub aborted_axes: Vec<usize>,
    pub removed: usize,
}

/// Drop points whose distance to the centroid exceeds median + 3 MAD.
pub fn mad_prefilter(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    if points.len() < 4 {
        return points.to_vec();
    }
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let dists: Vec<f64> = points.iter().map(|p| (p - centroid).norm()).collect();
    let median = median_of(&mut dists.clone());
    let mut devs: Vec<f64> = dists.iter().map(|d| (d - median).abs()).collect();
    let mad = median_of(&mut devs).max(1e-6);
    let cutoff = median + 3.0 * mad;
    points
        .iter()
        .zip(dists.iter())
        .filter(|(_, d)| **d <= cutoff)
        .map(|(p, _)| *p)
        .collect()
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// First and last kept slice index for one axis of per-slice occupied counts.
///
/// Edge slices are dropped inward while the outermost count is below a third
/// of its inner neighbor; trimming never crosses the midpoint.
pub fn slice_keep_bounds(counts: &[usize]) -> (usize, usize) {
    let k = counts.len();
    if k == 0 {
        return (0, 0);
    }
    let mid = k / 2;
    let mut lo = 0;
    while lo < mid && (counts[lo] as f64) < counts[lo + 1] as f64 / 3.0 {
        lo += 1;
    }
    let mut hi = k - 1;
    while hi > mid && (counts[hi] as f64) < counts[hi - 1] as f64 / 3.0 {
        hi -= 1;
    }
    (lo, hi)
}

/// Contiguous nonzero run of slice counts with the largest total; ties go to
/// the leftmost run.
fn densest_run(counts: &[usize]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, usize)> = None;
    let mut i = 0;
    while i < counts.len() {
        if counts[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        let mut total = 0;
        while i < counts.len() && counts[i] > 0 {
            total += counts[i];
            i += 1;
        }
        if best.map_or(true, |(_, _, t)| total > t) {
            best = Some((start, i - 1, total));
        }
    }
    best.map(|(lo, hi, _)| (lo, hi))
}

/// Trim sparse edge slices of an object-frame cloud on all three axes.
///
/// Slice occupancy is counted on a voxelization at the surface-grid
/// resolution, so a dense clump and a diffuse scatter of equal point count
/// weigh the same way they would on the surface grids.
pub fn slice_filter(
    points: &[Vector3<f64>],
    pose: &ObjectPose,
) -> (Vec<Vector3<f64>>, SliceFilterReport) {
    let mut report = SliceFilterReport::default();
    if points.len() < SLICE_FILTER_MIN_POINTS {
        return (points.to_vec(), report);
    }
    let m = GRID_RESOLUTION;
    let mut kept: Vec<Vector3<f64>> = points.to_vec();
    for axis in 0..3 {
        let lo_bound = -pose.s[axis].max(m);
        // Slices span the cloud extent along the axis, not just the cube, so
        // grouped outliers beyond a face land in countable edge slices.
        let min_c = kept
            .iter()
            .map(|p| p[axis])
            .fold(f64::INFINITY, f64::min)
            .min(lo_bound);
        let max_c = kept.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        let k = (((max_c - min_c) / m).ceil() as usize).max(1);
        let slice_of = |c: f64| -> usize {
            (((c - min_c) / m).floor() as isize).clamp(0, k as isize - 1) as usize
        };
        // Occupied-voxel count per slice. The voxel key carries the slice
        // index itself so a voxel straddling a slice boundary cannot swallow
        // its neighbors' points.
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut voxels: HashSet<(usize, i64, i64)> = HashSet::new();
        let mut counts = vec![0usize; k];
        for p in &kept {
            let key = (
                slice_of(p[axis]),
                (p[u] / m).floor() as i64,
                (p[v] / m).floor() as i64,
            );
            if voxels.insert(key) {
                counts[key.0] += 1;
            }
        }
        // Grouped outliers sit in slice runs separated from the object body
        // by empty slices; restrict to the densest contiguous nonzero run
        // before trimming its edges.
        let (run_lo, run_hi) = match densest_run(&counts) {
            Some(run) => run,
            None => continue,
        };
        let (rel_lo, rel_hi) = slice_keep_bounds(&counts[run_lo..=run_hi]);
        let (keep_lo, keep_hi) = (run_lo + rel_lo, run_lo + rel_hi);
        if keep_lo == 0 && keep_hi == k - 1 {
            continue;
        }
        let filtered: Vec<Vector3<f64>> = kept
            .iter()
            .filter(|p| {
                let s = slice_of(p[axis]);
                s >= keep_lo && s <= keep_hi
            })
            .copied()
            .collect();
        if filtered.len() * 2 < kept.len() {
            report.aborted_axes.push(axis);
            continue;
        }
        report.removed += kept.len() - filtered.len();
        kept = filtered;
    }
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_bounds_drop_sparse_edges() {
        let counts = [1, 30, 32, 31, 30, 29, 33, 31, 30, 2];
        assert_eq!(slice_keep_bounds(&counts), (1, 8));
    }

    #[test]
    fn keep_bounds_uniform_keeps_all() {
        let counts = [20usize; 10];
        assert_eq!(slice_keep_bounds(&counts), (0, 9));
    }

    #[test]
    fn keep_bounds_never_cross_midpoint() {
        // Pathological staircase: every slice sparse relative to the next.
        let counts = [1, 4, 13, 40, 121, 364, 1100, 3300];
        let (lo, hi) = slice_keep_bounds(&counts);
        assert!(lo <= counts.len() / 2);
        assert!(hi >= counts.len() / 2);
    }

    #[test]
    fn output_is_subset_of_input() {
        let pose = ObjectPose {
            t: Vector3::new(0.0, 0.0, 0.05),
            theta: Vector3::zeros(),
            s: Vector3::new(0.05, 0.05, 0.05),
        };
        let points: Vec<Vector3<f64>> = (0..100)
            .map(|i| Vector3::new((i as f64) * 0.001 - 0.05, 0.0, 0.05))
            .collect();
        let (kept, _) = slice_filter(&points, &pose);
        assert!(kept.len() <= points.len());
        for p in &kept {
            assert!(points.contains(p));
        }
    }

    #[test]
    fn densest_run_selection() {
        assert_eq!(densest_run(&[0, 0, 5, 6, 0, 90, 80, 0]), Some((5, 6)));
        assert_eq!(densest_run(&[3, 3, 3]), Some((0, 2)));
        assert_eq!(densest_run(&[0, 0, 0]), None);
    }

    #[test]
    fn detached_clump_removed() {
        let pose = ObjectPose {
            t: Vector3::new(0.0, 0.0, 0.0),
            theta: Vector3::zeros(),
            s: Vector3::new(0.05, 0.05, 0.05),
        };
        // Dense shell of a 10 cm cube plus a planar clump 4 cm beyond +x.
        let mut points = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let u = -0.05 + (i as f64 + 0.5) * 0.005;
                let v = -0.05 + (j as f64 + 0.5) * 0.005;
                points.push(Vector3::new(0.05, u, v));
                points.push(Vector3::new(-0.05, u, v));
                points.push(Vector3::new(u, 0.05, v));
                points.push(Vector3::new(u, -0.05, v));
                points.push(Vector3::new(u, v, 0.05));
            }
        }
        for i in 0..200 {
            let u = -0.05 + (i % 20) as f64 * 0.005;
            let v = -0.05 + (i / 20) as f64 * 0.01;
            points.push(Vector3::new(0.09, u, v));
        }
        let (kept, _) = slice_filter(&points, &pose);
        let max_x = kept.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        assert!(max_x < 0.055, "clump not removed, max_x = {max_x}");
    }

    #[test]
    fn mad_prefilter_drops_far_point() {
        let mut points: Vec<Vector3<f64>> = (0..50)
            .map(|i| Vector3::new((i % 10) as f64 * 0.01, (i / 10) as f64 * 0.01, 0.0))
            .collect();
        points.push(Vector3::new(5.0, 5.0, 5.0));
        let kept = mad_prefilter(&points);
        assert_eq!(kept.len(), 50);
        assert!(!kept.contains(&Vector3::new(5.0, 5.0, 5.0)));
    }
}
