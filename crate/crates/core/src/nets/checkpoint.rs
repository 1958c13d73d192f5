//! Parameter files: JSON `{"version": 1, "params": {"tensors": {name: {shape, data}}}}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;
use crate::{Error, Result};

pub const PARAM_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub version: u32,
    pub params: ParamSet,
}

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    let file = ParamFile {
        version: PARAM_FILE_VERSION,
        params: params.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ParamFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if file.version != PARAM_FILE_VERSION {
        return Err(Error::Format(format!(
            "{}: parameter file version {} (expected {PARAM_FILE_VERSION})",
            path.display(),
            file.version
        )));
    }
    for (name, t) in &file.params.tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!("{}: tensor {name} has inconsistent shape", path.display())));
        }
    }
    Ok(file.params)
}
