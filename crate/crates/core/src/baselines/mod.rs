//! Scripted behavior tree, demonstration generator and temporal ensembling.

pub mod bt;
pub mod demos;
pub mod ensemble;

pub use bt::{bt_policy, BtConfig, BtPhase, BtPolicy, BtState};
pub use demos::{generate_demos, DemoSet, MAX_ATTEMPTS_PER_DEMO};
pub use ensemble::{smoothness, temporal_ensemble, EnsembleBuffer, Ensembled, ENSEMBLE_WEIGHTS};
