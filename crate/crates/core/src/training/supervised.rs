use std::time::Instant;

use rand::seq::SliceRandom;

use super::{EarlyStopping, EpochLog, SupervisedConfig, TrainingOutcome};
use crate::data::{ActionDataset, RegressionDataset};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::policy::{Head, MlpPolicy, Sample, Target};
use crate::seed::rng_for;

const EVAL_CHUNK: usize = 1024;

fn mean_loss<'a>(policy: &MlpPolicy, n: usize, sample: impl Fn(usize) -> Sample<'a>) -> Result<f64> {
    let mut total = 0.0;
    let mut chunk = Vec::with_capacity(EVAL_CHUNK);
    for start in (0..n).step_by(EVAL_CHUNK) {
        chunk.clear();
        chunk.extend((start..(start + EVAL_CHUNK).min(n)).map(&sample));
        total += policy.loss(&chunk)? * chunk.len() as f64;
    }
    Ok(total / n.max(1) as f64)
}

/// Mini-batch AdamW with per-epoch reshuffling and early stopping on validation loss.
fn fit<'a, G: Fn(usize) -> Sample<'a>>(
    mut policy: MlpPolicy,
    n_train: usize,
    train: impl Fn(usize) -> Sample<'a>,
    validation: Option<(usize, G)>,
    cfg: &SupervisedConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::Data("empty training dataset".into()));
    }
    let started = Instant::now();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut stopper = EarlyStopping::new(cfg.patience());
    let mut epochs = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train(i)));
            total += policy.train_step(&batch, cfg.lr)? * idx.len() as f64;
        }
        let validation_loss = match &validation {
            Some((n, f)) if *n > 0 => Some(mean_loss(&policy, *n, f)?),
            _ => None,
        };
        epochs.push(EpochLog {
            epoch,
            loss: total / n_train as f64,
            validation_loss,
            buffer_size: n_train,
            mean_weight: 1.0,
            wall_time: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: loss {:.5} validation {:?}",
            total / n_train as f64,
            validation_loss
        );
        if let Some(v) = validation_loss {
            if stopper.observe(epoch, v, &policy) {
                break;
            }
        }
    }
    let last = epochs.len();
    let (policy, selected_epoch) = stopper.finish(policy, last);
    Ok(TrainingOutcome {
        policy,
        epochs,
        selected_epoch,
    })
}

fn action_sample(d: &ActionDataset, i: usize) -> Sample<'_> {
    Sample {
        features: d.row(i),
        target: Target::Action(d.actions[i]),
        weight: 1.0,
    }
}

fn delta_sample(d: &RegressionDataset, i: usize) -> Sample<'_> {
    let (features, values, mask) = d.row(i);
    Sample {
        features,
        target: Target::Delta { values, mask },
        weight: 1.0,
    }
}

fn check_dim(policy: &MlpPolicy, dim: usize) -> Result<()> {
    if policy.input_dim() != dim {
        return Err(Error::Dimension {
            expected: policy.input_dim(),
            actual: dim,
        });
    }
    Ok(())
}

/// Behavioural cloning from a freshly initialized network.
pub fn bc_train(
    train: &ActionDataset,
    validation: Option<&ActionDataset>,
    hidden: &[usize],
    cfg: &SupervisedConfig,
) -> Result<TrainingOutcome> {
    let mut rng = rng_for(cfg.seed, "init-bc", 0);
    let policy = MlpPolicy::new(FeatureMode::Simulation.dim(), hidden, Head::Softmax3, &mut rng);
    bc_train_from(policy, train, validation, cfg)
}

/// Behavioural cloning: unit-weight cross-entropy on expert actions.
pub fn bc_train_from(
    policy: MlpPolicy,
    train: &ActionDataset,
    validation: Option<&ActionDataset>,
    cfg: &SupervisedConfig,
) -> Result<TrainingOutcome> {
    if policy.head() != Head::Softmax3 {
        return Err(Error::Invalid("behavioural cloning needs an action head".into()));
    }
    check_dim(&policy, train.dim)?;
    if let Some(v) = validation {
        check_dim(&policy, v.dim)?;
    }
    let val = validation.map(|v| (v.len(), move |i| action_sample(v, i)));
    fit(policy, train.len(), |i| action_sample(train, i), val, cfg)
}

/// Regression baseline from a freshly initialized network.
pub fn regression_train(
    train: &RegressionDataset,
    validation: Option<&RegressionDataset>,
    hidden: &[usize],
    cfg: &SupervisedConfig,
) -> Result<TrainingOutcome> {
    let mut rng = rng_for(cfg.seed, "init-regression", 0);
    let policy = MlpPolicy::new(
        FeatureMode::Regression.dim(),
        hidden,
        Head::Linear(train.outputs),
        &mut rng,
    );
    regression_train_from(policy, train, validation, cfg)
}

/// Masked squared error on delay increments.
pub fn regression_train_from(
    policy: MlpPolicy,
    train: &RegressionDataset,
    validation: Option<&RegressionDataset>,
    cfg: &SupervisedConfig,
) -> Result<TrainingOutcome> {
    if policy.head() != Head::Linear(train.outputs) {
        return Err(Error::Invalid(format!(
            "regression needs a linear head with {} outputs",
            train.outputs
        )));
    }
    check_dim(&policy, train.dim)?;
    for d in std::iter::once(train).chain(validation) {
        for i in 0..d.len() {
            if !d.row(i).2.iter().any(|&m| m) {
                return Err(Error::Data(format!("regression sample {i} is fully masked")));
            }
        }
    }
    if let Some(v) = validation {
        check_dim(&policy, v.dim)?;
    }
    let val = validation.map(|v| (v.len(), move |i| delta_sample(v, i)));
    fit(policy, train.len(), |i| delta_sample(train, i), val, cfg)
}
