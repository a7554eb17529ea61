//! Training orchestration, evaluation, checkpoints and ablations.

mod ablation;
pub mod checkpoint;
mod config;
mod model;
mod train;

pub use ablation::{ablation_arms, compare_strategies, format_table, run_ablation, sweep_steps, AblationRow, STEP_SWEEP};
pub use checkpoint::{Checkpoint, Tensor, CHECKPOINT_VERSION};
pub use config::{ModelDims, Strategy, TrainConfig, MIN_LCR_BATCH};
pub use model::{batch_loss_on, BatchLoss, LossSpec, Model, Phase, Stage, FLOW_PREFIX, HEAD_PREFIX, TETE_PREFIX};
pub use train::{
    evaluate, init_model, ordering_diagnostic, predict_all, train, train_one_stage, train_stage1, train_stage2, EpochLog, TrainOutcome,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// `<checkpoint>.cfg`, the training config saved next to a checkpoint.
pub fn config_sidecar(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes the checkpoint and its config sidecar.
pub fn save_model(model: &Model, cfg: &TrainConfig, path: &Path) -> Result<()> {
    model.to_checkpoint().save(path)?;
    let side = config_sidecar(path);
    std::fs::write(&side, cfg.to_text()).map_err(|e| Error::io(side, e))
}
