//! C ABI for the active object mapping workbench.
//!
//! The interface follows the usual opaque-handle pattern: constructors
//! return a status code and write a pointer through an out-parameter, every
//! handle has a matching `_free`, and the last error message is kept in
//! thread-local storage for [`aom_last_error_message`].
//!
//! All functions are safe to call with null handles (they return
//! `AOM_STATUS_NULL_POINTER`), and every returned string stays valid until
//! the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use active_objmap::bench::{self, CellMetrics};
use active_objmap::explore::{self, ExplorationConfig, StopReason, Strategy};
use active_objmap::scene::{self, DeskScene, Spacing};
use active_objmap::sensor::NoiseModel;
use active_objmap::CameraIntrinsics;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AomStatus {
    AomStatusOk = 0,
    AomStatusNullPointer = 1,
    AomStatusInvalidArgument = 2,
    AomStatusSceneError = 3,
    AomStatusIoError = 4,
    AomStatusOutOfRange = 5,
}

use AomStatus::*;

/// Opaque ground-truth scene handle.
pub struct AomScene {
    inner: DeskScene,
}

/// Opaque handle for one finished exploration run.
pub struct AomRun {
    map: active_objmap::GlobalObjectMap,
    stop: StopReason,
    views: usize,
}

/// One 9-DoF pose: translation, roll/pitch/yaw, half extents (meters).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AomPose {
    pub t: [f64; 3],
    pub theta: [f64; 3],
    pub s: [f64; 3],
}

/// Map accuracy against ground truth. `yae_deg` is negative when no matched
/// object has an observable yaw.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AomMetrics {
    pub cde_cm: f64,
    pub yae_deg: f64,
    pub iou_2d: f64,
    pub iou_3d: f64,
    pub matched: u32,
    pub total: u32,
}

/// Exploration strategies, mirroring the CLI names.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AomStrategy {
    AomStrategyObjectDriven = 0,
    AomStrategyRandomized = 1,
    AomStrategyCoverage = 2,
    AomStrategyInitOnly = 3,
}

/// Sensor noise presets.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AomNoise {
    AomNoiseOff = 0,
    AomNoiseLow = 1,
    AomNoiseMedium = 2,
}

/// Why a run stopped.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AomStopReason {
    AomStopAllExplored = 0,
    AomStopBudgetExhausted = 1,
    AomStopPathExhausted = 2,
}

/// Message of the last error on this thread, or null if none occurred.
/// The pointer is invalidated by the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aom_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Generate a deterministic tabletop scene.
///
/// `spacing`: 0 sparse, 1 clustered, 2 uneven.
#[no_mangle]
pub extern "C" fn aom_scene_generate(
    seed: u64,
    min_objects: u32,
    max_objects: u32,
    spacing: u32,
    out_scene: *mut *mut AomScene,
) -> AomStatus {
    if out_scene.is_null() {
        return AomStatusNullPointer;
    }
    if min_objects == 0 || max_objects < min_objects {
        set_error("object count range must satisfy 1 <= min <= max");
        return AomStatusInvalidArgument;
    }
    let spacing = match spacing {
        0 => Spacing::Sparse,
        1 => Spacing::Clustered,
        2 => Spacing::Uneven,
        _ => {
            set_error("spacing must be 0 (sparse), 1 (clustered) or 2 (uneven)");
            return AomStatusInvalidArgument;
        }
    };
    match scene::generate_scene(seed, min_objects as usize..=max_objects as usize, spacing) {
        Ok(inner) => {
            unsafe { *out_scene = Box::into_raw(Box::new(AomScene { inner })) };
            AomStatusOk
        }
        Err(e) => {
            set_error(e.to_string());
            AomStatusSceneError
        }
    }
}

/// Load a scene from a JSON file.
#[no_mangle]
pub extern "C" fn aom_scene_load(
    path: *const c_char,
    out_scene: *mut *mut AomScene,
) -> AomStatus {
    if path.is_null() || out_scene.is_null() {
        return AomStatusNullPointer;
    }
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return AomStatusInvalidArgument;
        }
    };
    match scene::load_scene(Path::new(path)) {
        Ok(inner) => {
            unsafe { *out_scene = Box::into_raw(Box::new(AomScene { inner })) };
            AomStatusOk
        }
        Err(e) => {
            set_error(e.to_string());
            AomStatusIoError
        }
    }
}

/// Number of ground-truth objects in the scene.
#[no_mangle]
pub extern "C" fn aom_scene_object_count(scene: *const AomScene, out_count: *mut u32) -> AomStatus {
    if scene.is_null() || out_count.is_null() {
        return AomStatusNullPointer;
    }
    let scene = unsafe { &*scene };
    unsafe { *out_count = scene.inner.primitives.len() as u32 };
    AomStatusOk
}

#[no_mangle]
pub extern "C" fn aom_scene_free(scene: *mut AomScene) {
    if !scene.is_null() {
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// Run one exploration over a scene and return the resulting object map.
///
/// `budget` is the number of views after the four-corner initialization;
/// pass 0 for the default. `oracle_association` short-circuits data
/// association with ground-truth identities.
#[no_mangle]
pub extern "C" fn aom_run_exploration(
    scene: *const AomScene,
    strategy: AomStrategy,
    noise: AomNoise,
    seed: u64,
    budget: u32,
    oracle_association: bool,
    out_run: *mut *mut AomRun,
) -> AomStatus {
    if scene.is_null() || out_run.is_null() {
        return AomStatusNullPointer;
    }
    let scene = unsafe { &*scene };
    let strategy = match strategy {
        AomStrategy::AomStrategyObjectDriven => Strategy::ObjectDriven,
        AomStrategy::AomStrategyRandomized => Strategy::Randomized,
        AomStrategy::AomStrategyCoverage => Strategy::Coverage,
        AomStrategy::AomStrategyInitOnly => Strategy::InitOnly,
    };
    let noise = match noise {
        AomNoise::AomNoiseOff => NoiseModel::off(),
        AomNoise::AomNoiseLow => NoiseModel::low(),
        AomNoise::AomNoiseMedium => NoiseModel::medium(),
    };
    let mut cfg = ExplorationConfig::new(strategy, noise, seed);
    cfg.oracle_association = oracle_association;
    if budget > 0 {
        cfg.budget = budget as usize;
    }
    let intr = CameraIntrinsics::default();
    let result = explore::run_exploration(&scene.inner, &cfg, &intr);
    let run = AomRun {
        map: result.map,
        stop: result.stop,
        views: result.trajectory.len(),
    };
    unsafe { *out_run = Box::into_raw(Box::new(run)) };
    AomStatusOk
}

/// Number of objects in the run's final map.
#[no_mangle]
pub extern "C" fn aom_run_object_count(run: *const AomRun, out_count: *mut u32) -> AomStatus {
    if run.is_null() || out_count.is_null() {
        return AomStatusNullPointer;
    }
    let run = unsafe { &*run };
    unsafe { *out_count = run.map.estimates.len() as u32 };
    AomStatusOk
}

/// Estimated pose of the map object at `index` (0-based).
#[no_mangle]
pub extern "C" fn aom_run_object_pose(
    run: *const AomRun,
    index: u32,
    out_pose: *mut AomPose,
) -> AomStatus {
    if run.is_null() || out_pose.is_null() {
        return AomStatusNullPointer;
    }
    let run = unsafe { &*run };
    let est = match run.map.estimates.get(index as usize) {
        Some(e) => e,
        None => {
            set_error(format!(
                "object index {index} out of range ({} objects)",
                run.map.estimates.len()
            ));
            return AomStatusOutOfRange;
        }
    };
    let p = &est.pose;
    unsafe {
        *out_pose = AomPose {
            t: [p.t.x, p.t.y, p.t.z],
            theta: [p.theta.x, p.theta.y, p.theta.z],
            s: [p.s.x, p.s.y, p.s.z],
        };
    }
    AomStatusOk
}

/// Score the run's final map against the scene's ground truth.
#[no_mangle]
pub extern "C" fn aom_run_evaluate(
    run: *const AomRun,
    scene: *const AomScene,
    oracle_association: bool,
    out_metrics: *mut AomMetrics,
) -> AomStatus {
    if run.is_null() || scene.is_null() || out_metrics.is_null() {
        return AomStatusNullPointer;
    }
    let run = unsafe { &*run };
    let scene = unsafe { &*scene };
    let m: CellMetrics = bench::evaluate_map(&run.map, &scene.inner, oracle_association);
    unsafe {
        *out_metrics = AomMetrics {
            cde_cm: m.cde,
            yae_deg: m.yae.unwrap_or(-1.0),
            iou_2d: m.iou2d,
            iou_3d: m.iou3d,
            matched: m.matched as u32,
            total: m.total as u32,
        };
    }
    AomStatusOk
}

/// Why the run stopped.
#[no_mangle]
pub extern "C" fn aom_run_stop_reason(
    run: *const AomRun,
    out_reason: *mut AomStopReason,
) -> AomStatus {
    if run.is_null() || out_reason.is_null() {
        return AomStatusNullPointer;
    }
    let run = unsafe { &*run };
    let reason = match run.stop {
        StopReason::AllExplored => AomStopReason::AomStopAllExplored,
        StopReason::BudgetExhausted => AomStopReason::AomStopBudgetExhausted,
        StopReason::PathExhausted => AomStopReason::AomStopPathExhausted,
    };
    unsafe { *out_reason = reason };
    AomStatusOk
}

/// Total number of views the run executed, initialization included.
#[no_mangle]
pub extern "C" fn aom_run_view_count(run: *const AomRun, out_count: *mut u32) -> AomStatus {
    if run.is_null() || out_count.is_null() {
        return AomStatusNullPointer;
    }
    let run = unsafe { &*run };
    unsafe { *out_count = run.views as u32 };
    AomStatusOk
}

#[no_mangle]
pub extern "C" fn aom_run_free(run: *mut AomRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_run_evaluate_roundtrip() {
        let mut scene: *mut AomScene = std::ptr::null_mut();
        assert_eq!(aom_scene_generate(7, 5, 8, 0, &mut scene), AomStatusOk);
        let mut n = 0u32;
        assert_eq!(aom_scene_object_count(scene, &mut n), AomStatusOk);
        assert!((5..=8).contains(&n));

        let mut run: *mut AomRun = std::ptr::null_mut();
        let status = aom_run_exploration(
            scene,
            AomStrategy::AomStrategyInitOnly,
            AomNoise::AomNoiseOff,
            3,
            0,
            false,
            &mut run,
        );
        assert_eq!(status, AomStatusOk);

        let mut mapped = 0u32;
        assert_eq!(aom_run_object_count(run, &mut mapped), AomStatusOk);
        assert!(mapped >= 1);
        let mut pose = AomPose {
            t: [0.0; 3],
            theta: [0.0; 3],
            s: [0.0; 3],
        };
        assert_eq!(aom_run_object_pose(run, 0, &mut pose), AomStatusOk);
        assert!(pose.s.iter().all(|v| *v > 0.0));

        let mut metrics = AomMetrics {
            cde_cm: 0.0,
            yae_deg: 0.0,
            iou_2d: 0.0,
            iou_3d: 0.0,
            matched: 0,
            total: 0,
        };
        assert_eq!(aom_run_evaluate(run, scene, false, &mut metrics), AomStatusOk);
        assert_eq!(metrics.total, n);
        assert!(metrics.iou_3d > 0.0);

        aom_run_free(run);
        aom_scene_free(scene);
    }

    #[test]
    fn null_pointers_are_rejected() {
        assert_eq!(
            aom_scene_generate(1, 5, 8, 0, std::ptr::null_mut()),
            AomStatusNullPointer
        );
        let mut n = 0u32;
        assert_eq!(
            aom_scene_object_count(std::ptr::null(), &mut n),
            AomStatusNullPointer
        );
        aom_scene_free(std::ptr::null_mut());
        aom_run_free(std::ptr::null_mut());
    }

    #[test]
    fn out_of_range_index_sets_error() {
        let mut scene: *mut AomScene = std::ptr::null_mut();
        assert_eq!(aom_scene_generate(11, 5, 5, 0, &mut scene), AomStatusOk);
        let mut run: *mut AomRun = std::ptr::null_mut();
        aom_run_exploration(
            scene,
            AomStrategy::AomStrategyInitOnly,
            AomNoise::AomNoiseOff,
            1,
            0,
            true,
            &mut run,
        );
        let mut pose = AomPose {
            t: [0.0; 3],
            theta: [0.0; 3],
            s: [0.0; 3],
        };
        assert_eq!(
            aom_run_object_pose(run, 999, &mut pose),
            AomStatusOutOfRange
        );
        assert!(!aom_last_error_message().is_null());
        aom_run_free(run);
        aom_scene_free(scene);
    }

    #[test]
    fn bad_spacing_rejected() {
        let mut scene: *mut AomScene = std::ptr::null_mut();
        assert_eq!(
            aom_scene_generate(1, 5, 8, 9, &mut scene),
            AomStatusInvalidArgument
        );
    }
}
