//! Active object mapping workbench for tabletop scenes.
//!
//! The crate simulates a manipulator-mounted RGB-D camera exploring a desk,
//! estimates 9-DoF cuboid poses for the objects it sees, tracks observation
//! completeness with per-face surface occupancy grids, and selects
//! Next-Best Views by an entropy-based utility. A benchmark harness compares
//! the object-driven strategy against randomized and coverage baselines.

pub mod bench;
pub mod explore;
pub mod geom;
pub mod metrics;
pub mod objmap;
pub mod pose;
pub mod scene;
pub mod sensor;

pub use objmap::{GlobalObjectMap, ObjectEstimate, ObjectPose, SurfaceGridSet};
pub use scene::{DeskScene, ScenePrimitive};
pub use sensor::{CameraIntrinsics, CameraPose, NoiseModel, Observation};
