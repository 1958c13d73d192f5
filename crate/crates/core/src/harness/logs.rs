//! JSONL trajectory and demo logs, and PGM rendering of logged sensors.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::rl::Transition;
use crate::sensing::{DepthImage, VoxelGrid, MAX_DEPTH};
use crate::sim::{Action, Observation, RewardBreakdown};
use crate::{Error, Result};

/// First line of every log file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    /// `"demos"` or `"trajectory"`.
    pub kind: String,
    pub policy_id: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
}

/// One transition with its position in the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub t: usize,
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_terms: Option<RewardBreakdown>,
    pub next_obs: Observation,
    pub done: bool,
    #[serde(default)]
    pub truncated: bool,
    pub is_demo: bool,
}

impl StepRecord {
    pub fn from_transition(episode: usize, t: usize, tr: &Transition) -> Self {
        StepRecord {
            episode,
            t,
            obs: tr.obs.clone(),
            action: tr.action,
            reward: tr.reward,
            reward_terms: None,
            next_obs: tr.next_obs.clone(),
            done: tr.done,
            truncated: false,
            is_demo: tr.is_demo,
        }
    }

    pub fn transition(&self) -> Transition {
        Transition {
            obs: self.obs.clone(),
            action: self.action,
            reward: self.reward,
            next_obs: self.next_obs.clone(),
            done: self.done,
            is_demo: self.is_demo,
        }
    }
}

/// Writes through a temporary file so a failed run leaves no partial log.
pub fn write_log(path: &Path, header: &LogHeader, steps: &[StepRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let mut line = |v: String| writeln!(w, "{v}").map_err(|e| Error::io(&tmp, e));
    line(serde_json::to_string(header).map_err(|e| Error::json(path, e))?)?;
    for s in steps {
        line(serde_json::to_string(s).map_err(|e| Error::json(path, e))?)?;
    }
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<StepRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty log", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: LogHeader = serde_json::from_str(&first).map_err(|e| Error::json(path, e))?;
    let mut steps = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok((header, steps))
}

/// Binary greyscale PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Near is bright, far or missing is dark.
pub fn depth_pixels(img: &DepthImage) -> Vec<u8> {
    img.pixels
        .iter()
        .map(|&d| {
            let d = f64::from(d);
            if d > 0.0 && d < MAX_DEPTH {
                (255.0 * (1.0 - d / MAX_DEPTH)).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Top-down height map: brightness grows with the highest occupied layer.
pub fn voxel_height_pixels(grid: &VoxelGrid) -> (usize, usize, Vec<u8>) {
    let [nx, ny, nz] = grid.dims();
    let mut top = vec![0usize; nx * ny];
    for [x, y, z] in grid.occupied_coords() {
        let c = &mut top[y * nx + x];
        *c = (*c).max(z + 1);
    }
    let px = top.iter().map(|&h| (255 * h / nz.max(1)) as u8).collect();
    (nx, ny, px)
}

/// Renders each logged observation's sensors to PGM frames in `out_dir`.
/// Returns the written paths in log order.
pub fn render_replay(steps: &[StepRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for s in steps {
        let stem = format!("ep{:03}_t{:03}", s.episode, s.t);
        if let Some(grid) = &s.obs.voxels {
            let (w, h, px) = voxel_height_pixels(grid);
            let p = out_dir.join(format!("{stem}_voxel.pgm"));
            write_pgm(&p, w, h, &px)?;
            written.push(p);
        }
        if let Some(imgs) = &s.obs.depth {
            for img in imgs.iter() {
                let p = out_dir.join(format!("{stem}_depth{}.pgm", img.camera_id));
                write_pgm(&p, img.size, img.size, &depth_pixels(img))?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
