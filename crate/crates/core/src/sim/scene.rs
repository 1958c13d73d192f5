use nalgebra::{Rotation3, Vector2};
use serde::{Deserialize, Serialize};

use super::boxes::{BoxSpec, SurfaceCell, CELL_SIZE};
use crate::geometry::Vec3;
use crate::sensing::RayScene;

/// Height of a zip-tie strap above the top face (m).
pub const RIDGE_HEIGHT: f64 = 0.004;
/// Depth of a dent in a deformed top face (m).
pub const CONCAVE_DEPTH: f64 = 0.003;
/// Thickness of the box floor seen through a hole (m).
pub const WALL_THICKNESS: f64 = 0.003;

/// A box placed in the world: yaw-only orientation, resting on or lifted
/// above the table at z = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBody {
    pub spec: BoxSpec,
    /// World position of the box's volumetric center.
    pub center: Vec3,
    /// Radians about world z.
    pub yaw: f64,
    cells: Vec<SurfaceCell>,
}

impl BoxBody {
    pub fn new(spec: BoxSpec, center_xy: [f64; 2], yaw: f64) -> Self {
        let cells = spec.cells();
        let hz = spec.half_extents[2];
        BoxBody {
            center: Vec3::new(center_xy[0], center_xy[1], hz),
            yaw,
            cells,
            spec,
        }
    }

    pub fn half_extents(&self) -> Vec3 {
        Vec3::from(self.spec.half_extents)
    }

    pub fn top_z(&self) -> f64 {
        self.center.z + self.spec.half_extents[2]
    }

    /// Resting height of the center.
    pub fn rest_z(&self) -> f64 {
        self.spec.half_extents[2]
    }

    pub fn is_lifted(&self) -> bool {
        self.center.z > self.rest_z() + 1e-3
    }

    pub fn cell_counts(&self) -> (usize, usize) {
        self.spec.cell_counts()
    }

    pub fn cell(&self, i: usize, j: usize) -> SurfaceCell {
        let (nx, _) = self.cell_counts();
        self.cells[j * nx + i]
    }

    /// Cell surface height relative to the top face.
    pub fn cell_height(&self, cell: SurfaceCell) -> f64 {
        match cell {
            SurfaceCell::Smooth => 0.0,
            SurfaceCell::Ridge => RIDGE_HEIGHT,
            SurfaceCell::Concave => -CONCAVE_DEPTH,
            SurfaceCell::Hole => -(2.0 * self.spec.half_extents[2] - WALL_THICKNESS),
        }
    }

    fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vec3::z_axis(), self.yaw)
    }

    /// World point to box-local coordinates (origin at top-face center).
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let top = Vec3::new(self.center.x, self.center.y, self.top_z());
        self.rotation().inverse() * (p - top)
    }

    pub fn local_dir(&self, d: &Vec3) -> Vec3 {
        self.rotation().inverse() * d
    }

    /// Cells whose square intersects the disc of `radius` around local `(x, y)`.
    pub fn footprint_cells(&self, center: Vector2<f64>, radius: f64) -> Vec<(usize, usize, SurfaceCell)> {
        let he = self.half_extents();
        let (nx, ny) = self.cell_counts();
        let lo_i = (((center.x - radius + he.x) / CELL_SIZE).floor().max(0.0)) as usize;
        let lo_j = (((center.y - radius + he.y) / CELL_SIZE).floor().max(0.0)) as usize;
        let hi_i = (((center.x + radius + he.x) / CELL_SIZE).floor()).min(nx as f64 - 1.0);
        let hi_j = (((center.y + radius + he.y) / CELL_SIZE).floor()).min(ny as f64 - 1.0);
        if hi_i < 0.0 || hi_j < 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for j in lo_j..=hi_j as usize {
            for i in lo_i..=hi_i as usize {
                let x0 = -he.x + i as f64 * CELL_SIZE;
                let y0 = -he.y + j as f64 * CELL_SIZE;
                let cx = center.x.clamp(x0, x0 + CELL_SIZE);
                let cy = center.y.clamp(y0, y0 + CELL_SIZE);
                if (center.x - cx).hypot(center.y - cy) < radius {
                    out.push((i, j, self.cell(i, j)));
                }
            }
        }
        out
    }

    /// World height a horizontal disc at world `(x, y)` would rest on, if it
    /// overlaps the top face.
    pub fn support_height(&self, world_xy: [f64; 2], radius: f64) -> Option<f64> {
        let local = self.to_local(&Vec3::new(world_xy[0], world_xy[1], 0.0));
        let cells = self.footprint_cells(Vector2::new(local.x, local.y), radius);
        cells
            .iter()
            .filter(|(_, _, c)| *c != SurfaceCell::Hole)
            .map(|(_, _, c)| self.top_z() + self.cell_height(*c))
            .fold(None, |acc: Option<f64>, h| Some(acc.map_or(h, |a| a.max(h))))
    }

    /// Ray against the box as a heightfield over its cells, walls included.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let o = self.to_local(origin);
        let d = self.local_dir(dir);
        let he = self.half_extents();
        let bottom = -2.0 * he.z;

        let mut t_enter = 0.0f64;
        let mut t_exit = f64::INFINITY;
        for axis in 0..2 {
            if d[axis].abs() < 1e-15 {
                if o[axis] < -he[axis] || o[axis] > he[axis] {
                    return None;
                }
            } else {
                let a = (-he[axis] - o[axis]) / d[axis];
                let b = (he[axis] - o[axis]) / d[axis];
                t_enter = t_enter.max(a.min(b));
                t_exit = t_exit.min(a.max(b));
            }
        }
        if t_exit <= t_enter {
            return None;
        }
        if o.z + d.z * t_enter < bottom && d.z <= 0.0 {
            return None;
        }

        let (nx, ny) = self.cell_counts();
        let entry = o + d * t_enter;
        let mut i = (((entry.x + he.x) / CELL_SIZE).floor() as i64).clamp(0, nx as i64 - 1);
        let mut j = (((entry.y + he.y) / CELL_SIZE).floor() as i64).clamp(0, ny as i64 - 1);
        let step_i: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_j: i64 = if d.y > 0.0 { 1 } else { -1 };
        let next_boundary = |idx: i64, step: i64, half: f64| {
            -half + (idx + i64::from(step > 0)) as f64 * CELL_SIZE
        };
        let mut t_max_x = if d.x.abs() < 1e-15 {
            f64::INFINITY
        } else {
            (next_boundary(i, step_i, he.x) - o.x) / d.x
        };
        let mut t_max_y = if d.y.abs() < 1e-15 {
            f64::INFINITY
        } else {
            (next_boundary(j, step_j, he.y) - o.y) / d.y
        };
        let t_delta_x = if d.x.abs() < 1e-15 { f64::INFINITY } else { CELL_SIZE / d.x.abs() };
        let t_delta_y = if d.y.abs() < 1e-15 { f64::INFINITY } else { CELL_SIZE / d.y.abs() };

        let mut t_a = t_enter;
        loop {
            let t_b = t_max_x.min(t_max_y).min(t_exit);
            let h = self.cell_height(self.cell(i as usize, j as usize));
            let z_a = o.z + d.z * t_a;
            if z_a <= h {
                return Some(t_a);
            }
            if d.z < 0.0 {
                let z_b = o.z + d.z * t_b;
                if z_b <= h {
                    return Some((h - o.z) / d.z);
                }
            }
            if t_b >= t_exit {
                return None;
            }
            if t_max_x < t_max_y {
                i += step_i;
                t_a = t_max_x;
                t_max_x += t_delta_x;
            } else {
                j += step_j;
                t_a = t_max_y;
                t_max_y += t_delta_y;
            }
            if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
                return None;
            }
        }
    }
}

/// Table plane at z = 0 plus the episode's box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub body: Option<BoxBody>,
}

impl RayScene for Scene {
    fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let table = (dir.z < 0.0 && origin.z > 0.0).then(|| -origin.z / dir.z);
        let body = self.body.as_ref().and_then(|b| b.raycast(origin, dir));
        match (table, body) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}
