use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{synth_label, EpochLog, ReplayBuffer, TrainingOutcome, Transition};
use crate::data::ActionDataset;
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::policy::{MlpPolicy, Sample, Target};
use crate::rollout::{require_action_head, ActionModel, Environment, Sampling};
use crate::schedule::Snapshot;
use crate::seed::rng_for;

/// Rollouts generated per parallel round; fixed so results do not depend on the thread count.
const ROLLOUTS_PER_ROUND: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcilConfig {
    pub epochs: usize,
    pub capacity: usize,
    pub samples_per_epoch: usize,
    pub trajectory_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sampling: Sampling,
    pub seed: u64,
}

impl Default for DcilConfig {
    fn default() -> Self {
        DcilConfig {
            epochs: 30,
            capacity: 30_000,
            samples_per_epoch: 10_000,
            trajectory_len: 5,
            batch_size: 16,
            lr: 5e-5,
            alpha: 0.5,
            beta: 1.0,
            sampling: Sampling::Sample,
            seed: 0,
        }
    }
}

impl DcilConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.trajectory_len < 1 {
            return bad("trajectory length must be at least 1");
        }
        if self.capacity == 0 || self.samples_per_epoch == 0 || self.samples_per_epoch > self.capacity {
            return bad("need 0 < samples per epoch <= buffer capacity");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.beta >= 1.0) {
            return bad("beta must be at least 1");
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return bad("epochs, batch size and learning rate must be positive");
        }
        Ok(())
    }
}

/// Rolls `model` out from the first expert snapshot for `steps` steps and labels every train
/// that also appears in the expert's next snapshot.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    expert: &[Snapshot],
    env: &Environment<'_>,
    model: &dyn ActionModel,
    steps: usize,
    alpha: f64,
    beta: f64,
    sampling: Sampling,
    rng: &mut impl Rng,
) -> Result<Vec<Transition>> {
    if expert.len() < steps + 1 {
        return Err(Error::Data(format!(
            "trajectory has {} snapshots, need {}",
            expert.len(),
            steps + 1
        )));
    }
    let dim = FeatureMode::Simulation.dim();
    let mut out = Vec::new();
    let mut state = expert[0].clone();
    for t in 0..steps {
        let features = env.encode(&state)?;
        for (i, train) in state.trains.iter().enumerate() {
            if let Some(target) = expert[t + 1].get(train.train_id()) {
                let (action, weight) = synth_label(target, train, alpha, beta)?;
                out.push(Transition {
                    features: features[i * dim..(i + 1) * dim].to_vec(),
                    action,
                    weight,
                });
            }
        }
        if t + 1 < steps {
            state = env.step(&state, &features, model, sampling, None, rng)?;
        }
    }
    Ok(out)
}

/// Drift-corrected imitation: alternate policy rollouts that fill a FIFO buffer with synthetic
/// labels and one weighted pass of mini-batch updates over the whole buffer.
pub fn dcil_train(
    demos: &[Vec<Snapshot>],
    env: &Environment<'_>,
    mut policy: MlpPolicy,
    cfg: &DcilConfig,
    validation: Option<&ActionDataset>,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    require_action_head(&policy)?;
    if demos.is_empty() {
        return Err(Error::Data("no expert trajectories".into()));
    }
    if let Some(short) = demos.iter().find(|d| d.len() < cfg.trajectory_len + 1) {
        return Err(Error::Data(format!(
            "trajectory of {} snapshots is shorter than {}",
            short.len(),
            cfg.trajectory_len + 1
        )));
    }
    let started = Instant::now();
    let mut buffer = ReplayBuffer::new(cfg.capacity);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = rng_for(cfg.seed, "dcil-epoch", epoch as u64);
        let mut added = 0;
        let mut rollout = 0u64;
        let mut stale_rounds = 0;
        while added < cfg.samples_per_epoch {
            let jobs: Vec<(usize, u64)> = (0..ROLLOUTS_PER_ROUND)
                .map(|_| {
                    rollout += 1;
                    (rng.random_range(0..demos.len()), rollout)
                })
                .collect();
            let frozen = &policy;
            let results: Vec<Result<Vec<Transition>>> = jobs
                .par_iter()
                .map(|&(traj, id)| {
                    let mut r = rng_for(cfg.seed, "dcil-rollout", ((epoch as u64) << 32) | id);
                    collect_rollout(
                        &demos[traj],
                        env,
                        frozen,
                        cfg.trajectory_len,
                        cfg.alpha,
                        cfg.beta,
                        cfg.sampling,
                        &mut r,
                    )
                })
                .collect();
            let before = added;
            'round: for res in results {
                for t in res? {
                    buffer.push(t);
                    added += 1;
                    if added == cfg.samples_per_epoch {
                        break 'round;
                    }
                }
            }
            stale_rounds = if added == before { stale_rounds + 1 } else { 0 };
            if stale_rounds >= 8 {
                return Err(Error::Data("expert trajectories yield no labelled trains".into()));
            }
        }

        let mut order: Vec<usize> = (0..buffer.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| {
                let t = buffer.get(i).expect("index within buffer");
                Sample {
                    features: &t.features,
                    target: Target::Action(t.action),
                    weight: t.weight,
                }
            }));
            total += policy.train_step(&batch, cfg.lr)? * idx.len() as f64;
        }
        let mean_weight = buffer.iter().map(|t| t.weight).sum::<f64>() / buffer.len() as f64;
        let validation_loss = match validation {
            Some(v) if !v.is_empty() => {
                let samples: Vec<Sample> = (0..v.len())
                    .map(|i| Sample {
                        features: v.row(i),
                        target: Target::Action(v.actions[i]),
                        weight: 1.0,
                    })
                    .collect();
                Some(policy.loss(&samples)?)
            }
            _ => None,
        };
        log::info!(
            "dcil epoch {epoch}: loss {:.5} buffer {} mean weight {:.3} validation {:?}",
            total / buffer.len() as f64,
            buffer.len(),
            mean_weight,
            validation_loss
        );
        epochs.push(EpochLog {
            epoch,
            loss: total / buffer.len() as f64,
            validation_loss,
            buffer_size: buffer.len(),
            mean_weight,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainingOutcome {
        policy,
        selected_epoch: epochs.len(),
        epochs,
    })
}
