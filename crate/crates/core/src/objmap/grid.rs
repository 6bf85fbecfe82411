//! Per-face surface occupancy grids measuring observation completeness.
//!
//! Each cuboid estimate carries five 2D grids (the bottom face is excluded).
//! Cells start unknown at p = 0.5 and only ever gain knowledge:
//! unknown -> occupied, unknown -> free, free -> occupied.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default grid resolution: 1 cm cells.
pub const GRID_RESOLUTION: f64 = 0.01;

pub const P_UNKNOWN: f64 = 0.5;
pub const P_OCCUPIED: f64 = 0.95;
pub const P_FREE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityRange(f64),
    #[error("grid has zero cells, cannot normalize entropy")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    Unknown,
    Occupied,
    Free,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Cell {
    pub status: CellStatus,
    pub p: f64,
}

impl Default for Cell {
    fn default() -> Self {
        Cell {
            status: CellStatus::Unknown,
            p: P_UNKNOWN,
        }
    }
}

/// The five tracked faces of a cuboid, named by outward normal in the
/// object frame. The bottom (-z) face is never tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
}

pub const FACES: [Face; 5] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ];

impl Face {
    pub fn normal(self) -> Vector3<f64> {
        match self {
            Face::PosX => Vector3::x(),
            Face::NegX => -Vector3::x(),
            Face::PosY => Vector3::y(),
            Face::NegY => -Vector3::y(),
            Face::PosZ => Vector3::z(),
        }
    }

    /// In-plane axes (u, v) of the face in object coordinates.
    fn plane_axes(self) -> (usize, usize) {
        match self {
            Face::PosX | Face::NegX => (1, 2),
            Face::PosY | Face::NegY => (0, 2),
            Face::PosZ => (0, 1),
        }
    }

    fn fixed_axis(self) -> (usize, f64) {
        match self {
            Face::PosX => (0, 1.0),
            Face::NegX => (0, -1.0),
            Face::PosY => (1, 1.0),
            Face::NegY => (1, -1.0),
            Face::PosZ => (2, 1.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaceGrid {
    pub nu: usize,
    pub nv: usize,
    cells: Vec<Cell>,
}

impl FaceGrid {
    fn new(nu: usize, nv: usize) -> Self {
        FaceGrid {
            nu,
            nv,
            cells: vec![Cell::default(); nu * nv],
        }
    }

    pub fn cell(&self, iu: usize, iv: usize) -> &Cell {
        &self.cells[iv * self.nu + iu]
    }

    fn cell_mut(&mut self, iu: usize, iv: usize) -> &mut Cell {
        &mut self.cells[iv * self.nu + iu]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }
}

/// Address of one grid cell across the five faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellId {
    pub face: Face,
    pub iu: usize,
    pub iv: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceGridSet {
    pub resolution: f64,
    /// Half-extents the grids were built for.
    pub half_extents: Vector3<f64>,
    grids: [FaceGrid; 5],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completeness {
    /// Total entropy over all cells, bits.
    pub h_obj: f64,
    /// Normalized entropy, bits per cell.
    pub h_bar: f64,
    /// Ratio of occupied cells.
    pub r_o: f64,
}

/// Binary entropy in bits, with the 0 log 0 := 0 convention.
pub fn binary_entropy(p: f64) -> Result<f64, GridError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GridError::ProbabilityRange(p));
    }
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    Ok(term(p) + term(1.0 - p))
}

impl SurfaceGridSet {
    pub fn new(half_extents: Vector3<f64>) -> Self {
        Self::with_resolution(half_extents, GRID_RESOLUTION)
    }

    pub fn with_resolution(half_extents: Vector3<f64>, resolution: f64) -> Self {
        let dims = |axis: usize| -> usize {
            ((2.0 * half_extents[axis]) / resolution).ceil().max(1.0) as usize
        };
        let make = |face: Face| {
            let (ua, va) = face.plane_axes();
            FaceGrid::new(dims(ua), dims(va))
        };
        SurfaceGridSet {
            resolution,
            half_extents,
            grids: [
                make(Face::PosX),
                make(Face::NegX),
                make(Face::PosY),
                make(Face::NegY),
                make(Face::PosZ),
            ],
        }
    }

    fn face_index(face: Face) -> usize {
        FACES.iter().position(|f| *f == face).unwrap()
    }

    pub fn face(&self, face: Face) -> &FaceGrid {
        &self.grids[Self::face_index(face)]
    }

    fn face_mut(&mut self, face: Face) -> &mut FaceGrid {
        &mut self.grids[Self::face_index(face)]
    }

    pub fn total_cells(&self) -> usize {
        self.grids.iter().map(|g| g.cells.len()).sum()
    }

    /// Assign an object-frame point to the cell of the nearest face.
    ///
    /// The face is the one with the largest |coordinate| / extent ratio;
    /// exact ties break toward +z. Points nearest the bottom face are not
    /// tracked and map to None.
    pub fn locate(&self, p_obj: Vector3<f64>) -> Option<CellId> {
        let s = self.half_extents;
        let ratio = |a: usize| p_obj[a].abs() / s[a];
        // +z wins ties, so test it with >=.
        let (rx, ry, rz) = (ratio(0), ratio(1), ratio(2));
        let face = if rz >= rx && rz >= ry {
            if p_obj.z >= 0.0 {
                Face::PosZ
            } else {
                return None; // bottom face excluded
            }
        } else if rx >= ry {
            if p_obj.x >= 0.0 {
                Face::PosX
            } else {
                Face::NegX
            }
        } else if p_obj.y >= 0.0 {
            Face::PosY
        } else {
            Face::NegY
        };
        let (ua, va) = face.plane_axes();
        let grid = self.face(face);
        let index = |coord: f64, extent: f64, n: usize| -> usize {
            let cell = (coord + extent) / (2.0 * extent) * n as f64;
            (cell.floor() as isize).clamp(0, n as isize - 1) as usize
        };
        Some(CellId {
            face,
            iu: index(p_obj[ua], s[ua], grid.nu),
            iv: index(p_obj[va], s[va], grid.nv),
        })
    }

    /// Object-frame center of a cell.
    pub fn cell_center(&self, id: CellId) -> Vector3<f64> {
        let s = self.half_extents;
        let (ua, va) = id.face.plane_axes();
        let (fa, sign) = id.face.fixed_axis();
        let grid = self.face(id.face);
        let center = |i: usize, extent: f64, n: usize| -> f64 {
            -extent + (i as f64 + 0.5) * (2.0 * extent / n as f64)
        };
        let mut p = Vector3::zeros();
        p[ua] = center(id.iu, s[ua], grid.nu);
        p[va] = center(id.iv, s[va], grid.nv);
        p[fa] = sign * s[fa];
        p
    }

    pub fn status(&self, id: CellId) -> CellStatus {
        self.face(id.face).cell(id.iu, id.iv).status
    }

    pub fn mark_occupied(&mut self, id: CellId) {
        let cell = self.face_mut(id.face).cell_mut(id.iu, id.iv);
        cell.status = CellStatus::Occupied;
        cell.p = P_OCCUPIED;
    }

    /// Free marking never demotes an occupied cell.
    pub fn mark_free(&mut self, id: CellId) {
        let cell = self.face_mut(id.face).cell_mut(id.iu, id.iv);
        if cell.status == CellStatus::Unknown {
            cell.status = CellStatus::Free;
            cell.p = P_FREE;
        }
    }

    pub fn all_cells(&self) -> impl Iterator<Item = (CellId, &Cell)> + '_ {
        FACES.iter().flat_map(move |&face| {
            let grid = self.face(face);
            (0..grid.nv).flat_map(move |iv| {
                (0..grid.nu).map(move |iu| (CellId { face, iu, iv }, grid.cell(iu, iv)))
            })
        })
    }

    pub fn count(&self, status: CellStatus) -> usize {
        self.all_cells().filter(|(_, c)| c.status == status).count()
    }

    pub fn completeness(&self) -> Result<Completeness, GridError> {
        let total = self.total_cells();
        if total == 0 {
            return Err(GridError::EmptyGrid);
        }
        let mut h_obj = 0.0;
        let mut occupied = 0usize;
        for (_, cell) in self.all_cells() {
            h_obj += binary_entropy(cell.p)?;
            if cell.status == CellStatus::Occupied {
                occupied += 1;
            }
        }
        Ok(Completeness {
            h_obj,
            h_bar: h_obj / total as f64,
            r_o: occupied as f64 / total as f64,
        })
    }

    /// Ascii dump of one face (`.` unknown, `#` occupied, `o` free) for debugging.
    pub fn face_ascii(&self, face: Face) -> String {
        let grid = self.face(face);
        let mut out = String::new();
        for iv in (0..grid.nv).rev() {
            for iu in 0..grid.nu {
                out.push(match grid.cell(iu, iv).status {
                    CellStatus::Unknown => '.',
                    CellStatus::Occupied => '#',
                    CellStatus::Free => 'o',
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Outward world-frame normal of a face for a cuboid with rotation `rot`.
pub fn face_world_normal(face: Face, rot: &Matrix3<f64>) -> Vector3<f64> {
    rot * face.normal()
}
