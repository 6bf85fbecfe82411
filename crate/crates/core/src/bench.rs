//! Benchmark harness: runs the exploration strategies over a set of scenes
//! on identical seeds, scores the final maps against ground truth, and
//! emits a CSV plus a formatted comparison table.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explore::{self, ExplorationConfig, ExplorationResult, StepLog, Strategy};
use crate::metrics::{self, PoseMetrics};
use crate::objmap::GlobalObjectMap;
use crate::scene::{self, DeskScene, SceneError, Shape, Spacing};
use crate::sensor::{self, CameraIntrinsics, NoiseModel};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("config lists no scenes")]
    NoScenes,
    #[error("config lists no strategies")]
    NoStrategies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Off,
    Low,
    #[serde(alias = "med")]
    Medium,
}

impl NoiseLevel {
    pub fn model(self) -> NoiseModel {
        match self {
            NoiseLevel::Off => NoiseModel::off(),
            NoiseLevel::Low => NoiseModel::low(),
            NoiseLevel::Medium => NoiseModel::medium(),
        }
    }
}

impl std::str::FromStr for NoiseLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(NoiseLevel::Off),
            "low" => Ok(NoiseLevel::Low),
            "med" | "medium" => Ok(NoiseLevel::Medium),
            other => Err(format!("unknown noise level '{other}' (off|low|med)")),
        }
    }
}

impl std::fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseLevel::Off => "off",
            NoiseLevel::Low => "low",
            NoiseLevel::Medium => "medium",
        })
    }
}

/// A benchmark scene: either a scene file on disk or generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSpec {
    File {
        file: PathBuf,
    },
    Generated {
        seed: u64,
        #[serde(default = "default_min_objects")]
        min_objects: usize,
        #[serde(default = "default_max_objects")]
        max_objects: usize,
        #[serde(default = "default_spacing")]
        spacing: Spacing,
        #[serde(default)]
        name: Option<String>,
    },
}

fn default_min_objects() -> usize {
    5
}
fn default_max_objects() -> usize {
    8
}
fn default_spacing() -> Spacing {
    Spacing::Sparse
}

impl SceneSpec {
    pub fn resolve(&self) -> Result<(String, DeskScene), BenchError> {
        match self {
            SceneSpec::File { file } => {
                let scene = scene::load_scene(file)?;
                let name = file
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "scene".into());
                Ok((name, scene))
            }
            SceneSpec::Generated {
                seed,
                min_objects,
                max_objects,
                spacing,
                name,
            } => {
                let scene = scene::generate_scene(*seed, *min_objects..=*max_objects, *spacing)?;
                let name = name.clone().unwrap_or_else(|| format!("gen{seed}"));
                Ok((name, scene))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenes: Vec<SceneSpec>,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_noise")]
    pub noise: NoiseLevel,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub oracle_association: bool,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    /// Also dump per-object point clouds as ascii PLY.
    #[serde(default)]
    pub export_ply: bool,
}

fn default_noise() -> NoiseLevel {
    NoiseLevel::Medium
}
fn default_budget() -> usize {
    explore::DEFAULT_BUDGET
}
fn default_repetitions() -> usize {
    1
}
fn default_lambda() -> f64 {
    explore::DEFAULT_LAMBDA
}
fn default_candidates() -> usize {
    explore::DEFAULT_CANDIDATES
}

impl BenchConfig {
    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Aggregated accuracy of one (scene, strategy) cell. Means are taken over
/// ground-truth objects; unmatched objects count as IoU 0 and are excluded
/// from the distance/angle means.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellMetrics {
    pub cde: f64,
    /// None when no matched object has an observable yaw.
    pub yae: Option<f64>,
    pub iou2d: f64,
    pub iou3d: f64,
    pub matched: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scene_names: Vec<String>,
    pub strategies: Vec<Strategy>,
    /// cells[scene][strategy]; None marks a failed or empty cell.
    pub cells: Vec<Vec<Option<CellMetrics>>>,
    pub mean: Vec<Option<CellMetrics>>,
    pub noise: NoiseLevel,
    pub budget: usize,
    pub seed: u64,
    pub repetitions: usize,
    pub oracle_association: bool,
}

/// Score a final map against the scene's ground truth.
///
/// With oracle association the estimate ids are the ground-truth ids;
/// otherwise each object is greedily matched to the nearest unused estimate
/// with the same label.
pub fn evaluate_map(map: &GlobalObjectMap, scene: &DeskScene, oracle: bool) -> CellMetrics {
    let mut used: HashSet<u32> = HashSet::new();
    let mut per_object: Vec<(Option<PoseMetrics>, bool)> = Vec::new();
    for prim in &scene.primitives {
        let symmetric = prim.shape == Shape::Cylinder;
        let est = if oracle {
            map.estimate(prim.id).filter(|e| used.insert(e.id))
        } else {
            let found = map
                .estimates
                .iter()
                .filter(|e| e.label == prim.label && !used.contains(&e.id))
                .min_by(|a, b| {
                    let da = (a.pose.t - prim.pose_gt.t).norm();
                    let db = (b.pose.t - prim.pose_gt.t).norm();
                    da.partial_cmp(&db).unwrap()
                });
            if let Some(e) = found {
                used.insert(e.id);
            }
            found
        };
        let m = est.map(|e| metrics::evaluate(&e.pose, &prim.pose_gt, symmetric));
        per_object.push((m, symmetric));
    }
    let total = per_object.len();
    let matched: Vec<&PoseMetrics> = per_object.iter().filter_map(|(m, _)| m.as_ref()).collect();
    let n = matched.len();
    let cde = if n == 0 {
        f64::NAN
    } else {
        matched.iter().map(|m| m.cde).sum::<f64>() / n as f64
    };
    let yaws: Vec<f64> = matched.iter().filter_map(|m| m.yae).collect();
    let yae = if yaws.is_empty() {
        None
    } else {
        Some(yaws.iter().sum::<f64>() / yaws.len() as f64)
    };
    // Missed objects score zero overlap.
    let iou2d = per_object
        .iter()
        .map(|(m, _)| m.map_or(0.0, |m| m.iou2d))
        .sum::<f64>()
        / total.max(1) as f64;
    let iou3d = per_object
        .iter()
        .map(|(m, _)| m.map_or(0.0, |m| m.iou3d))
        .sum::<f64>()
        / total.max(1) as f64;
    CellMetrics {
        cde,
        yae,
        iou2d,
        iou3d,
        matched: n,
        total,
    }
}

fn mean_cells(cells: &[CellMetrics]) -> Option<CellMetrics> {
    if cells.is_empty() {
        return None;
    }
    let n = cells.len() as f64;
    let yaws: Vec<f64> = cells.iter().filter_map(|c| c.yae).collect();
    Some(CellMetrics {
        cde: cells.iter().map(|c| c.cde).sum::<f64>() / n,
        yae: if yaws.is_empty() {
            None
        } else {
            Some(yaws.iter().sum::<f64>() / yaws.len() as f64)
        },
        iou2d: cells.iter().map(|c| c.iou2d).sum::<f64>() / n,
        iou3d: cells.iter().map(|c| c.iou3d).sum::<f64>() / n,
        matched: cells.iter().map(|c| c.matched).sum(),
        total: cells.iter().map(|c| c.total).sum(),
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// One entry of the exported final-map JSON.
#[derive(Debug, Serialize)]
struct MapObjectRecord {
    id: u32,
    label: String,
    t: [f64; 3],
    theta: [f64; 3],
    s: [f64; 3],
    h_bar: f64,
    r_o: f64,
    fully_explored: bool,
}

fn final_map_json(map: &GlobalObjectMap) -> String {
    let records: Vec<MapObjectRecord> = map
        .estimates
        .iter()
        .map(|e| {
            let comp = e.completeness().unwrap();
            MapObjectRecord {
                id: e.id,
                label: e.label.clone(),
                t: [e.pose.t.x, e.pose.t.y, e.pose.t.z],
                theta: [e.pose.theta.x, e.pose.theta.y, e.pose.theta.z],
                s: [e.pose.s.x, e.pose.s.y, e.pose.s.z],
                h_bar: comp.h_bar,
                r_o: comp.r_o,
                fully_explored: e.fully_explored,
            }
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("map records serialize")
}

fn trajectory_csv(strategy: Strategy, log: &[StepLog]) -> String {
    let mut out = String::from(
        "step,strategy,kind,eye_x,eye_y,eye_z,utility,object_id,label,h_bar,r_o,s_flag\n",
    );
    for entry in log {
        let kind = serde_json::to_value(entry.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let utility = entry
            .utility
            .map(|u| format!("{u:.6}"))
            .unwrap_or_default();
        let prefix = format!(
            "{},{},{},{:.6},{:.6},{:.6},{}",
            entry.step, strategy, kind, entry.eye.x, entry.eye.y, entry.eye.z, utility
        );
        if entry.objects.is_empty() {
            out.push_str(&format!("{prefix},,,,,\n"));
            continue;
        }
        for obj in &entry.objects {
            out.push_str(&format!(
                "{prefix},{},{},{:.6},{:.6},{}\n",
                obj.id,
                obj.label,
                obj.h_bar,
                obj.r_o,
                if obj.active { 1 } else { 0 }
            ));
        }
    }
    out
}

fn write_run_artifacts(
    out_dir: &Path,
    prefix: &str,
    strategy: Strategy,
    result: &ExplorationResult,
    export_ply: bool,
) -> Result<(), BenchError> {
    std::fs::write(
        out_dir.join(format!("{prefix}_trajectory.csv")),
        trajectory_csv(strategy, &result.log),
    )?;
    std::fs::write(
        out_dir.join(format!("{prefix}_map.json")),
        final_map_json(&result.map),
    )?;
    if export_ply {
        for est in &result.map.estimates {
            sensor::write_ply(
                &est.points,
                &out_dir.join(format!("{prefix}_obj{}.ply", est.id)),
            )?;
        }
    }
    Ok(())
}

/// Run the full benchmark. Every strategy sees every scene with identical
/// per-repetition seeds, so the comparison is paired. When `out_dir` is
/// given, writes `report.csv`, `report.txt` and per-run artifacts there.
pub fn run_benchmark(cfg: &BenchConfig, out_dir: Option<&Path>) -> Result<BenchmarkReport, BenchError> {
    if cfg.scenes.is_empty() {
        return Err(BenchError::NoScenes);
    }
    if cfg.strategies.is_empty() {
        return Err(BenchError::NoStrategies);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let intr = CameraIntrinsics::default();
    let mut scene_names = Vec::new();
    let mut cells: Vec<Vec<Option<CellMetrics>>> = Vec::new();

    for (scene_idx, spec) in cfg.scenes.iter().enumerate() {
        let (name, scene) = spec.resolve()?;
        scene_names.push(name.clone());
        let mut row = Vec::new();
        for &strategy in &cfg.strategies {
            let mut rep_metrics = Vec::new();
            for rep in 0..cfg.repetitions {
                // Identical seed across strategies for the same (scene, rep).
                let run_seed = splitmix64(cfg.seed ^ splitmix64((scene_idx as u64) << 16 | rep as u64));
                let mut ecfg = ExplorationConfig::new(strategy, cfg.noise.model(), run_seed);
                ecfg.budget = cfg.budget;
                ecfg.n_candidates = cfg.n_candidates;
                ecfg.lambda = cfg.lambda;
                ecfg.oracle_association = cfg.oracle_association;
                let result = explore::run_exploration(&scene, &ecfg, &intr);
                rep_metrics.push(evaluate_map(&result.map, &scene, cfg.oracle_association));
                if let Some(dir) = out_dir {
                    let prefix = format!("{name}_{strategy}_rep{rep}");
                    write_run_artifacts(dir, &prefix, strategy, &result, cfg.export_ply)?;
                }
            }
            row.push(mean_cells(&rep_metrics));
        }
        cells.push(row);
    }

    // Mean row: arithmetic mean of the per-scene rows.
    let mean: Vec<Option<CellMetrics>> = (0..cfg.strategies.len())
        .map(|j| {
            let col: Vec<CellMetrics> = cells.iter().filter_map(|row| row[j]).collect();
            mean_cells(&col)
        })
        .collect();

    let report = BenchmarkReport {
        scene_names,
        strategies: cfg.strategies.clone(),
        cells,
        mean,
        noise: cfg.noise,
        budget: cfg.budget,
        seed: cfg.seed,
        repetitions: cfg.repetitions,
        oracle_association: cfg.oracle_association,
    };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("report.csv"), report.csv())?;
        std::fs::write(dir.join("report.txt"), report.table())?;
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.4}"),
        _ => "-".into(),
    }
}

impl BenchmarkReport {
    fn cell_fields(cell: &Option<CellMetrics>) -> [String; 4] {
        match cell {
            Some(c) => [
                fmt_opt(Some(c.cde)),
                fmt_opt(c.yae),
                fmt_opt(Some(c.iou2d)),
                fmt_opt(Some(c.iou3d)),
            ],
            None => ["-".into(), "-".into(), "-".into(), "-".into()],
        }
    }

    /// Machine-readable report: one row per (scene, strategy) plus the mean.
    pub fn csv(&self) -> String {
        let mut out =
            String::from("scene,strategy,cde_cm,yae_deg,iou2d,iou3d,matched,objects\n");
        let mut push_row = |scene: &str, strategy: Strategy, cell: &Option<CellMetrics>| {
            let f = Self::cell_fields(cell);
            let (matched, total) = cell.map_or((0, 0), |c| (c.matched, c.total));
            out.push_str(&format!(
                "{scene},{strategy},{},{},{},{},{matched},{total}\n",
                f[0], f[1], f[2], f[3]
            ));
        };
        for (i, name) in self.scene_names.iter().enumerate() {
            for (j, &strategy) in self.strategies.iter().enumerate() {
                push_row(name, strategy, &self.cells[i][j]);
            }
        }
        for (j, &strategy) in self.strategies.iter().enumerate() {
            push_row("mean", strategy, &self.mean[j]);
        }
        out
    }

    /// Human-readable comparison table: scenes as rows, one metric-group
    /// column per strategy, closed by the Mean row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "Pose accuracy (noise={}, budget={}, seed={}, reps={}, association={})\n",
            self.noise,
            self.budget,
            self.seed,
            self.repetitions,
            if self.oracle_association { "oracle" } else { "label+distance" }
        ));
        let name_w = self
            .scene_names
            .iter()
            .map(|s| s.len())
            .chain(["Scene".len(), "Mean".len()])
            .max()
            .unwrap();
        out.push_str(&format!("{:name_w$}", "Scene"));
        for s in &self.strategies {
            out.push_str(&format!(" | {:^31}", s.to_string()));
        }
        out.push('\n');
        out.push_str(&format!("{:name_w$}", ""));
        for _ in &self.strategies {
            out.push_str(&format!(
                " | {:>7} {:>7} {:>7} {:>7}",
                "CDE", "YAE", "2D-IoU", "3D-IoU"
            ));
        }
        out.push('\n');
        let push_row = |name: &str, row: &[Option<CellMetrics>], out: &mut String| {
            out.push_str(&format!("{name:name_w$}"));
            for cell in row {
                let f = Self::cell_fields(cell);
                out.push_str(&format!(
                    " | {:>7} {:>7} {:>7} {:>7}",
                    f[0], f[1], f[2], f[3]
                ));
            }
            out.push('\n');
        };
        for (i, name) in self.scene_names.iter().enumerate() {
            push_row(name, &self.cells[i], &mut out);
        }
        push_row("Mean", &self.mean, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objmap::{ObjectEstimate, ObjectPose};
    use crate::scene::ScenePrimitive;
    use nalgebra::Vector3;

    fn two_box_scene() -> DeskScene {
        DeskScene {
            desk_height: 0.7,
            desk_bounds: scene::DEFAULT_DESK_BOUNDS,
            primitives: vec![
                ScenePrimitive {
                    id: 0,
                    label: "box".into(),
                    shape: Shape::Cuboid,
                    pose_gt: ObjectPose {
                        t: Vector3::new(-0.2, -0.3, 0.75),
                        theta: Vector3::zeros(),
                        s: Vector3::new(0.05, 0.05, 0.05),
                    },
                },
                ScenePrimitive {
                    id: 1,
                    label: "can".into(),
                    shape: Shape::Cylinder,
                    pose_gt: ObjectPose {
                        t: Vector3::new(0.2, 0.3, 0.76),
                        theta: Vector3::zeros(),
                        s: Vector3::new(0.04, 0.04, 0.06),
                    },
                },
            ],
            seed: 0,
        }
    }

    fn map_with(poses: &[(u32, &str, ObjectPose)]) -> GlobalObjectMap {
        let mut map = GlobalObjectMap::new();
        for (id, label, pose) in poses {
            map.estimates
                .push(ObjectEstimate::new(*id, (*label).into(), pose.clone()));
        }
        map
    }

    #[test]
    fn perfect_map_scores_perfectly() {
        let scene = two_box_scene();
        let map = map_with(&[
            (0, "box", scene.primitives[0].pose_gt.clone()),
            (1, "can", scene.primitives[1].pose_gt.clone()),
        ]);
        for oracle in [false, true] {
            let m = evaluate_map(&map, &scene, oracle);
            assert_eq!(m.matched, 2);
            assert!(m.cde < 1e-9);
            // Only the cuboid contributes a yaw error.
            assert!(m.yae.unwrap() < 1e-9);
            assert!((m.iou3d - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn missed_object_scores_zero_iou() {
        let scene = two_box_scene();
        let map = map_with(&[(0, "box", scene.primitives[0].pose_gt.clone())]);
        let m = evaluate_map(&map, &scene, false);
        assert_eq!(m.matched, 1);
        assert_eq!(m.total, 2);
        assert!((m.iou3d - 0.5).abs() < 1e-9);
    }

    #[test]
    fn greedy_matching_prefers_nearest() {
        let scene = two_box_scene();
        let near = scene.primitives[0].pose_gt.clone();
        let far = ObjectPose {
            t: near.t + Vector3::new(0.2, 0.0, 0.0),
            ..near.clone()
        };
        let map = map_with(&[(7, "box", far), (8, "box", near)]);
        let m = evaluate_map(&map, &scene, false);
        // Object 0 takes the nearer estimate (id 8) with zero error.
        assert!(m.cde < 1e-9);
    }

    #[test]
    fn config_defaults_and_parse() {
        let text = r#"{
            "scenes": [{"seed": 3, "spacing": "clustered"}],
            "strategies": ["object_driven", "init_only"]
        }"#;
        let cfg: BenchConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.budget, 10);
        assert_eq!(cfg.noise, NoiseLevel::Medium);
        assert_eq!(cfg.repetitions, 1);
        match &cfg.scenes[0] {
            SceneSpec::Generated { seed, min_objects, max_objects, .. } => {
                assert_eq!(*seed, 3);
                assert_eq!(*min_objects, 5);
                assert_eq!(*max_objects, 8);
            }
            other => panic!("unexpected scene spec {other:?}"),
        }
    }

    #[test]
    fn smallest_run_emits_one_row() {
        let cfg = BenchConfig {
            scenes: vec![SceneSpec::Generated {
                seed: 1,
                min_objects: 2,
                max_objects: 3,
                spacing: Spacing::Sparse,
                name: None,
            }],
            strategies: vec![Strategy::InitOnly],
            noise: NoiseLevel::Off,
            budget: 10,
            seed: 5,
            repetitions: 1,
            oracle_association: true,
            lambda: explore::DEFAULT_LAMBDA,
            n_candidates: 8,
            export_ply: false,
        };
        let report = run_benchmark(&cfg, None).unwrap();
        assert_eq!(report.scene_names.len(), 1);
        assert_eq!(report.strategies.len(), 1);
        let cell = report.cells[0][0].unwrap();
        assert!(cell.total >= 2);
        // The four top views alone already localize the objects coarsely.
        assert!(cell.matched >= 1);
        let csv = report.csv();
        assert!(csv.lines().count() >= 3); // header + scene row + mean row
        assert!(csv.starts_with("scene,strategy,"));
    }

    #[test]
    fn mean_row_is_arithmetic_mean() {
        let mk = |cde, iou| CellMetrics {
            cde,
            yae: Some(cde / 2.0),
            iou2d: iou,
            iou3d: iou * 0.9,
            matched: 3,
            total: 3,
        };
        let mean = mean_cells(&[mk(1.0, 0.5), mk(3.0, 0.7)]).unwrap();
        assert!((mean.cde - 2.0).abs() < 1e-9);
        assert!((mean.yae.unwrap() - 1.0).abs() < 1e-9);
        assert!((mean.iou2d - 0.6).abs() < 1e-9);
    }
}
