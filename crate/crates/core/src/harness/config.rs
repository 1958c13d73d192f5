use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rl::{BcConfig, Modality, TrainerConfig};
use crate::sim::{EnvConfig, ScenarioFile};
use crate::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SUCTION_OUT_DIR";

/// First 16 hex digits of the SHA-256 of the value's JSON form. Object keys
/// are sorted, so the hash does not depend on field order in a file.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let digest = Sha256::digest(v.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Output directory: explicit flag, then the config, then the environment,
/// then `./runs`.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Off-policy RL from demonstrations.
    Sac,
    /// Behavior cloning on the demonstrations.
    Bc,
    /// Scripted behavior tree.
    Bt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSettings {
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    pub scenario: String,
    /// Pre-generated demo file; generated on the fly when absent.
    pub path: Option<PathBuf>,
}

impl Default for DemoSettings {
    fn default() -> Self {
        DemoSettings {
            n: 20,
            noise: 0.05,
            seed: 0,
            scenario: "seen".into(),
            path: None,
        }
    }
}

/// One JSON document describing a run end to end. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Label used in reports; derived from the settings when empty.
    pub name: String,
    pub policy: PolicyKind,
    pub modality: Modality,
    pub symmetry: bool,
    pub ensembling: bool,
    /// Feed the proprioceptive vector alongside the voxel features.
    pub proprio: bool,
    pub scenario_file: Option<PathBuf>,
    pub train_scenario: String,
    pub eval_scenarios: Vec<String>,
    pub seeds: Vec<u64>,
    pub eval_base_seed: u64,
    pub n_trials: usize,
    pub out_dir: Option<PathBuf>,
    pub demos: DemoSettings,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub bc: BcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: String::new(),
            policy: PolicyKind::Sac,
            modality: Modality::Voxel,
            symmetry: false,
            ensembling: false,
            proprio: true,
            scenario_file: None,
            train_scenario: "seen".into(),
            eval_scenarios: vec!["seen".into(), "unseen".into()],
            seeds: vec![0],
            eval_base_seed: 1000,
            n_trials: 30,
            out_dir: None,
            demos: DemoSettings::default(),
            env: EnvConfig::default(),
            trainer: TrainerConfig::default(),
            bc: BcConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Modality the networks actually see, after the proprio ablation flag.
    pub fn effective_modality(&self) -> Result<Modality> {
        match (self.modality, self.proprio) {
            (m, true) => Ok(m),
            (Modality::Voxel | Modality::VoxelOnly, false) => Ok(Modality::VoxelOnly),
            (m, false) => Err(Error::Config(format!("proprio ablation is only defined for voxels, not {}", m.name()))),
        }
    }

    /// Trainer settings with the top-level modality and symmetry applied.
    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let modality = self.effective_modality()?;
        let defaults = TrainerConfig::default();
        if self.trainer.modality != defaults.modality && self.trainer.modality != modality {
            return Err(Error::Config("set modality at the top level, not inside trainer".into()));
        }
        if self.trainer.symmetry && !self.symmetry {
            return Err(Error::Config("set symmetry at the top level, not inside trainer".into()));
        }
        Ok(TrainerConfig {
            modality,
            symmetry: self.symmetry,
            scenario: self.train_scenario.clone(),
            ..self.trainer.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.n_trials == 0 || self.demos.n == 0 {
            return Err(Error::Config("n_trials and demos.n must be ≥ 1".into()));
        }
        if !(self.demos.noise >= 0.0 && self.demos.noise.is_finite()) {
            return Err(Error::Config("demos.noise must be a finite, non-negative σ".into()));
        }
        if self.policy == PolicyKind::Sac {
            self.trainer_config()?.validate()?;
        } else {
            self.effective_modality()?;
        }
        Ok(())
    }

    pub fn scenarios(&self) -> Result<ScenarioFile> {
        match &self.scenario_file {
            Some(p) => ScenarioFile::load(p),
            None => Ok(ScenarioFile::builtin()),
        }
    }

    pub fn policy_id(&self) -> String {
        if !self.name.is_empty() {
            return self.name.clone();
        }
        let mut id = match self.policy {
            PolicyKind::Sac => format!("sac-{}", self.effective_modality().map_or("?", Modality::name)),
            PolicyKind::Bc => format!("bc-{}", self.effective_modality().map_or("?", Modality::name)),
            PolicyKind::Bt => "bt".to_string(),
        };
        if self.symmetry {
            id.push_str("-sym");
        }
        if self.ensembling {
            id.push_str("-ens");
        }
        id
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}
