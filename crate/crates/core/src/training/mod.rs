//! Regression, behavioural cloning and drift-corrected imitation trainers.

mod buffer;
mod dcil;
mod supervised;

use std::fmt::Write as _;

pub use buffer::{ReplayBuffer, Transition};
pub use dcil::{collect_rollout, dcil_train, DcilConfig};
pub use supervised::{bc_train, bc_train_from, regression_train, regression_train_from};

use crate::dynamics::{apply_action, itinerary_distance, Action};
use crate::error::{Error, Result};
use crate::policy::MlpPolicy;
use crate::schedule::TrainState;

/// Drift weight `1 / (1 + alpha * psi^beta)`.
pub fn drift_weight(psi: usize, alpha: f64, beta: f64) -> f64 {
    1.0 / (1.0 + alpha * (psi as f64).powf(beta))
}

/// Action bringing `policy_current` closest to `expert_next` (smallest on ties), weighted by
/// the distance between the two states.
pub fn synth_label(
    expert_next: &TrainState,
    policy_current: &TrainState,
    alpha: f64,
    beta: f64,
) -> Result<(Action, f64)> {
    let psi = itinerary_distance(expert_next, policy_current)?;
    let clock = policy_current.last_actual_time();
    let mut best = (usize::MAX, Action::STAY);
    for a in Action::ALL {
        let d = itinerary_distance(expert_next, &apply_action(policy_current, a, clock))?;
        if d < best.0 {
            best = (d, a);
        }
    }
    Ok((best.1, drift_weight(psi, alpha, beta)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Early-stopping patience as a fraction of `max_epochs`.
    pub patience_fraction: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            max_epochs: 40,
            batch_size: 16,
            lr: 5e-5,
            patience_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.patience_fraction > 0.0 && self.patience_fraction <= 1.0) {
            return Err(Error::Config(
                "learning rate must be positive and patience fraction in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn patience(&self) -> usize {
        ((self.max_epochs as f64 * self.patience_fraction).ceil() as usize).max(1)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub validation_loss: Option<f64>,
    pub buffer_size: usize,
    pub mean_weight: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub policy: MlpPolicy,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned (1-based).
    pub selected_epoch: usize,
}

/// Line-oriented `key=value` training log, one epoch per line. Wall time is left out so the
/// file is reproducible.
pub fn format_training_log(epochs: &[EpochLog]) -> String {
    let mut out = String::new();
    for e in epochs {
        let _ = write!(
            out,
            "epoch={} loss={:.6} buffer_size={} mean_weight={:.6}",
            e.epoch, e.loss, e.buffer_size, e.mean_weight
        );
        if let Some(v) = e.validation_loss {
            let _ = write!(out, " validation_loss={v:.6}");
        }
        out.push('\n');
    }
    out
}

/// Tracks the best validation loss and signals when patience runs out.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    best_policy: Option<MlpPolicy>,
}

impl EarlyStopping {
    pub(crate) fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            best_policy: None,
        }
    }

    /// Records an epoch; returns true when training should stop.
    pub(crate) fn observe(&mut self, epoch: usize, loss: f64, policy: &MlpPolicy) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.best_policy = Some(policy.clone());
        }
        epoch - self.best_epoch >= self.patience
    }

    pub(crate) fn finish(self, last: MlpPolicy, last_epoch: usize) -> (MlpPolicy, usize) {
        match self.best_policy {
            Some(p) => (p, self.best_epoch),
            None => (last, last_epoch),
        }
    }
}
