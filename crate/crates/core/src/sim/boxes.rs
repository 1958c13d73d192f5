//! Box catalogue and the versioned scenario file format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Edge length of a surface cell on a box's top face (m).
pub const CELL_SIZE: f64 = 0.005;
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Top-face surface condition of one 5 mm cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceCell {
    Smooth,
    Hole,
    Ridge,
    Concave,
}

impl SurfaceCell {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(SurfaceCell::Smooth),
            'H' => Some(SurfaceCell::Hole),
            'R' => Some(SurfaceCell::Ridge),
            'C' => Some(SurfaceCell::Concave),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            SurfaceCell::Smooth => '.',
            SurfaceCell::Hole => 'H',
            SurfaceCell::Ridge => 'R',
            SurfaceCell::Concave => 'C',
        }
    }

    /// Holes and ridges break the suction seal.
    pub fn blocks_seal(self) -> bool {
        matches!(self, SurfaceCell::Hole | SurfaceCell::Ridge)
    }
}

/// One box as stored in a scenario file.
///
/// `surface` holds one string per cell row along +y, one character per cell
/// along +x (`.` smooth, `H` hole, `R` ridge, `C` concave), covering exactly
/// the top face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub name: String,
    /// Half sizes along the box's own x, y, z (m).
    pub half_extents: [f64; 3],
    /// Nominal world (x, y) of the box center on the table.
    pub position: [f64; 2],
    pub yaw_deg: f64,
    /// 1 = rigid; lower values weaken the seal and allow random detachment.
    pub rigidity: f64,
    pub mass: f64,
    /// Tilt of the episode start pose relative to the box (models a bad pose estimate).
    #[serde(default)]
    pub start_tilt_deg: f64,
    pub surface: Vec<String>,
}

impl BoxSpec {
    pub fn cell_counts(&self) -> (usize, usize) {
        (
            (2.0 * self.half_extents[0] / CELL_SIZE).round() as usize,
            (2.0 * self.half_extents[1] / CELL_SIZE).round() as usize,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidBox {
            name: self.name.clone(),
            reason,
        };
        if self.half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(bad("half extents must be positive".into()));
        }
        for axis in 0..2 {
            let cells = 2.0 * self.half_extents[axis] / CELL_SIZE;
            if (cells - cells.round()).abs() > 1e-6 {
                return Err(bad(format!(
                    "top face size along axis {axis} is not a multiple of {CELL_SIZE} m"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.rigidity) {
            return Err(bad("rigidity must be in [0, 1]".into()));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(bad("mass must be positive".into()));
        }
        let (nx, ny) = self.cell_counts();
        if self.surface.len() != ny {
            return Err(bad(format!(
                "surface has {} rows, top face needs {ny}",
                self.surface.len()
            )));
        }
        for (j, row) in self.surface.iter().enumerate() {
            if row.chars().count() != nx {
                return Err(bad(format!("surface row {j} has {} cells, needs {nx}", row.len())));
            }
            if let Some(c) = row.chars().find(|c| SurfaceCell::from_char(*c).is_none()) {
                return Err(bad(format!("unknown surface cell `{c}` in row {j}")));
            }
        }
        Ok(())
    }

    /// Parsed cell grid, indexed `[j * nx + i]`.
    pub fn cells(&self) -> Vec<SurfaceCell> {
        self.surface
            .iter()
            .flat_map(|row| row.chars().map(|c| SurfaceCell::from_char(c).unwrap_or(SurfaceCell::Smooth)))
            .collect()
    }

    pub fn has_seal_defects(&self) -> bool {
        self.cells().iter().any(|c| c.blocks_seal())
    }
}

/// Top-level scenario file: named sets of boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub scenarios: BTreeMap<String, Vec<BoxSpec>>,
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "scenario schema_version {} unsupported (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, boxes) in &self.scenarios {
            if boxes.is_empty() {
                return Err(Error::Format(format!("scenario `{name}` has no boxes")));
            }
            for b in boxes {
                b.validate()?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("scenario file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        file.validate()?;
        Ok(file)
    }

    pub fn get(&self, scenario: &str) -> Result<&[BoxSpec]> {
        self.scenarios
            .get(scenario)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownScenario(scenario.to_string()))
    }

    /// Built-in catalogue: `seen` (10 training boxes), `unseen` (5), plus
    /// `nominal` (defect-free rigid) and `defect` (hole/ridge) subsets of `seen`.
    pub fn builtin() -> Self {
        let seen = seen_boxes();
        let nominal = seen
            .iter()
            .filter(|b| b.rigidity == 1.0 && b.cells().iter().all(|c| *c == SurfaceCell::Smooth))
            .cloned()
            .collect();
        let defect = seen.iter().filter(|b| b.has_seal_defects()).cloned().collect();
        let mut scenarios = BTreeMap::new();
        scenarios.insert("seen".to_string(), seen);
        scenarios.insert("unseen".to_string(), unseen_boxes());
        scenarios.insert("nominal".to_string(), nominal);
        scenarios.insert("defect".to_string(), defect);
        ScenarioFile {
            schema_version: SCENARIO_SCHEMA_VERSION,
            scenarios,
        }
    }
}

/// Shapes rasterized onto a top face by cell-center membership.
#[derive(Clone, Copy, Debug)]
pub enum Feature {
    Hole { center: [f64; 2], radius: f64 },
    Concave { center: [f64; 2], radius: f64 },
    /// A strap across the face, e.g. a zip tie.
    Ridge { from: [f64; 2], to: [f64; 2], width: f64 },
}

pub fn rasterize(half_extents: [f64; 3], features: &[Feature]) -> Vec<String> {
    let nx = (2.0 * half_extents[0] / CELL_SIZE).round() as usize;
    let ny = (2.0 * half_extents[1] / CELL_SIZE).round() as usize;
    (0..ny)
        .map(|j| {
            (0..nx)
                .map(|i| {
                    let x = -half_extents[0] + (i as f64 + 0.5) * CELL_SIZE;
                    let y = -half_extents[1] + (j as f64 + 0.5) * CELL_SIZE;
                    let mut cell = SurfaceCell::Smooth;
                    for f in features {
                        match *f {
                            Feature::Hole { center, radius } => {
                                if (x - center[0]).hypot(y - center[1]) <= radius {
                                    cell = SurfaceCell::Hole;
                                }
                            }
                            Feature::Concave { center, radius } => {
                                if cell == SurfaceCell::Smooth
                                    && (x - center[0]).hypot(y - center[1]) <= radius
                                {
                                    cell = SurfaceCell::Concave;
                                }
                            }
                            Feature::Ridge { from, to, width } => {
                                if segment_distance([x, y], from, to) <= width / 2.0 {
                                    cell = SurfaceCell::Ridge;
                                }
                            }
                        }
                    }
                    cell.to_char()
                })
                .collect()
        })
        .collect()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

#[allow(clippy::too_many_arguments)]
fn make_box(
    name: &str,
    half_extents: [f64; 3],
    position: [f64; 2],
    yaw_deg: f64,
    rigidity: f64,
    mass: f64,
    start_tilt_deg: f64,
    features: &[Feature],
) -> BoxSpec {
    BoxSpec {
        name: name.to_string(),
        half_extents,
        position,
        yaw_deg,
        rigidity,
        mass,
        start_tilt_deg,
        surface: rasterize(half_extents, features),
    }
}

fn seen_boxes() -> Vec<BoxSpec> {
    use Feature::*;
    vec![
        make_box("small-rigid", [0.035, 0.035, 0.04], [0.30, -0.30], 10.0, 1.0, 0.3, 0.0, &[]),
        make_box("medium-rigid", [0.05, 0.04, 0.05], [0.45, -0.30], -15.0, 1.0, 0.6, 0.0, &[]),
        make_box("large-rigid", [0.06, 0.06, 0.06], [0.60, -0.30], 0.0, 1.0, 1.0, 0.0, &[]),
        make_box("flat-tray", [0.055, 0.045, 0.025], [0.30, -0.45], 25.0, 1.0, 0.4, 0.0, &[]),
        make_box(
            "soft-strapped",
            [0.05, 0.05, 0.05],
            [0.45, -0.45],
            5.0,
            0.6,
            0.5,
            0.0,
            &[Ridge { from: [0.008, -0.06], to: [0.008, 0.06], width: 0.005 }],
        ),
        make_box(
            "concave-deformed",
            [0.05, 0.05, 0.045],
            [0.60, -0.45],
            -5.0,
            0.5,
            0.4,
            0.0,
            &[
                Concave { center: [-0.005, 0.005], radius: 0.02 },
                Ridge { from: [-0.008, -0.06], to: [-0.008, 0.06], width: 0.004 },
            ],
        ),
        make_box(
            "zip-tie-cross",
            [0.055, 0.055, 0.05],
            [0.30, -0.60],
            0.0,
            1.0,
            0.5,
            0.0,
            &[
                Ridge { from: [-0.06, 0.012], to: [0.06, 0.012], width: 0.005 },
                Ridge { from: [0.012, -0.06], to: [0.012, 0.06], width: 0.005 },
            ],
        ),
        make_box(
            "zip-tie-cross-b",
            [0.055, 0.055, 0.05],
            [0.45, -0.60],
            20.0,
            1.0,
            0.5,
            0.0,
            &[
                Ridge { from: [-0.06, -0.012], to: [0.06, -0.012], width: 0.005 },
                Ridge { from: [-0.012, -0.06], to: [-0.012, 0.06], width: 0.005 },
            ],
        ),
        make_box(
            "zip-tie-hole",
            [0.055, 0.055, 0.05],
            [0.60, -0.60],
            -10.0,
            1.0,
            0.6,
            0.0,
            &[
                Ridge { from: [-0.012, -0.06], to: [-0.012, 0.06], width: 0.005 },
                Hole { center: [0.025, 0.02], radius: 0.012 },
            ],
        ),
        make_box(
            "hole-offset",
            [0.055, 0.055, 0.05],
            [0.75, -0.45],
            -5.0,
            1.0,
            0.5,
            0.0,
            &[
                Ridge { from: [-0.06, -0.012], to: [0.06, -0.012], width: 0.005 },
                Hole { center: [0.02, 0.025], radius: 0.012 },
            ],
        ),
    ]
}

fn unseen_boxes() -> Vec<BoxSpec> {
    use Feature::*;
    vec![
        make_box("unseen-small", [0.0375, 0.04, 0.035], [0.35, 0.30], 30.0, 1.0, 0.25, 0.0, &[]),
        make_box("unseen-tall", [0.045, 0.06, 0.07], [0.50, 0.30], -20.0, 0.8, 0.9, 0.0, &[]),
        make_box(
            "unseen-zip-hole",
            [0.055, 0.055, 0.05],
            [0.65, 0.30],
            15.0,
            1.0,
            0.6,
            0.0,
            &[
                Ridge { from: [-0.06, -0.006], to: [0.06, -0.006], width: 0.005 },
                Hole { center: [0.01, 0.012], radius: 0.008 },
            ],
        ),
        make_box("unseen-angled", [0.05, 0.05, 0.05], [0.35, 0.45], -30.0, 1.0, 0.5, 20.0, &[]),
        make_box("unseen-flat-large", [0.065, 0.055, 0.03], [0.50, 0.45], 45.0, 1.0, 0.7, 0.0, &[]),
    ]
}
