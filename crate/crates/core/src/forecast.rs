//! Monte Carlo delay forecasts from policy rollouts.

use std::sync::Arc;

use rayon::prelude::*;

use crate::data::OperationalLog;
use crate::dynamics::STEP_SECS;
use crate::error::{Error, Result};
use crate::features::{FeatureMode, SnapshotEncoder, DELAY_SCALE, REGRESSION_FUTURE_SLOTS};
use crate::metrics::PredictionRecord;
use crate::policy::{Head, MlpPolicy};
use crate::rollout::{require_action_head, ActionModel, Environment, Sampling, StallFloors};
use crate::schedule::{Itinerary, Snapshot, TrainId};
use crate::seed::rng_for;

pub const DEFAULT_TRAJECTORIES: usize = 50;
pub const DEFAULT_HORIZON_SECS: i64 = 1800;

/// Simulated steps covering the horizon plus 10%.
pub fn rollout_steps(horizon: i64, dt: i64) -> usize {
    let num = 11 * horizon;
    let den = 10 * dt;
    ((num + den - 1) / den) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    pub n_trajectories: usize,
    pub horizon: i64,
    /// Future stations predicted per train.
    pub stations: usize,
    /// Per-train running floor on the probability of advancing (behavioural cloning).
    pub stall_clamp: bool,
    pub sampling: Sampling,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            n_trajectories: DEFAULT_TRAJECTORIES,
            horizon: DEFAULT_HORIZON_SECS,
            stations: REGRESSION_FUTURE_SLOTS,
            stall_clamp: false,
            sampling: Sampling::Sample,
        }
    }
}

/// Samples for one train's upcoming stations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainForecast {
    pub itinerary: Arc<Itinerary>,
    /// Position at the reference clock; predictions start at the next station.
    pub start_index: usize,
    /// `arrivals[s][k]`: simulated arrival at station `start_index + 1 + s` in trajectory `k`.
    pub arrivals: Vec<Vec<Option<i64>>>,
    /// Completed delays, same shape; empty until [`ForecastEnsemble::extract_delays`] runs.
    pub delays: Vec<Vec<i64>>,
}

impl TrainForecast {
    pub fn train_id(&self) -> &TrainId {
        &self.itinerary.train_id
    }

    pub fn station_index(&self, slot: usize) -> usize {
        self.start_index + 1 + slot
    }

    pub fn scheduled(&self, slot: usize) -> i64 {
        self.itinerary.scheduled[self.station_index(slot)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub reference_clock: i64,
    pub n_trajectories: usize,
    pub steps: usize,
    /// Clock after the final simulated step.
    pub last_clock: i64,
    pub trains: Vec<TrainForecast>,
    /// Delay at the reference position, per train.
    pub reference_delays: Vec<i64>,
}

impl ForecastEnsemble {
    /// Fills `delays`. A station the rollout never reached takes the trajectory's latest delay,
    /// raised so its arrival is no earlier than the last simulated clock.
    pub fn extract_delays(&mut self) {
        for (t, f) in self.trains.iter_mut().enumerate() {
            let n = f.arrivals.len();
            let mut delays = vec![Vec::with_capacity(self.n_trajectories); n];
            for k in 0..self.n_trajectories {
                let mut last = self.reference_delays[t];
                for s in 0..n {
                    let sched = f.itinerary.scheduled[f.start_index + 1 + s];
                    let d = match f.arrivals[s][k] {
                        Some(a) => {
                            last = a - sched;
                            last
                        }
                        None => last.max(self.last_clock - sched),
                    };
                    delays[s].push(d);
                }
            }
            f.delays = delays;
        }
    }

    pub fn get(&self, id: &str) -> Option<&TrainForecast> {
        self.trains.iter().find(|f| f.train_id().as_ref() == id)
    }
}

/// Runs independent rollouts from `snapshot`. Trajectory `k` draws from a generator derived
/// from `(master_seed, snapshot_id, k)`.
pub fn monte_carlo_forecast(
    model: &dyn ActionModel,
    env: &Environment<'_>,
    snapshot: &Snapshot,
    cfg: &ForecastConfig,
    master_seed: u64,
    snapshot_id: u64,
) -> Result<ForecastEnsemble> {
    if cfg.n_trajectories == 0 || cfg.horizon <= 0 {
        return Err(Error::Invalid(
            "forecast needs trajectories and a positive horizon".into(),
        ));
    }
    let steps = rollout_steps(cfg.horizon, STEP_SECS);
    let label = format!("forecast-{snapshot_id}");
    let slots: Vec<usize> = snapshot
        .trains
        .iter()
        .map(|t| t.remaining().min(cfg.stations))
        .collect();

    let runs: Vec<Result<Vec<Vec<Option<i64>>>>> = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(master_seed, &label, k as u64);
            let mut floors = cfg.stall_clamp.then(StallFloors::default);
            let mut reached: Vec<Vec<Option<i64>>> = slots.iter().map(|&n| vec![None; n]).collect();
            let mut state = snapshot.clone();
            for _ in 0..steps {
                state = env.advance(&state, model, cfg.sampling, floors.as_mut(), &mut rng)?;
                for (t, start) in snapshot.trains.iter().enumerate() {
                    let Some(now) = state.get(start.train_id()) else {
                        continue;
                    };
                    let times = now.actual_times();
                    for s in 0..slots[t] {
                        let j = start.position_index() + 1 + s;
                        if j < times.len() && reached[t][s].is_none() {
                            reached[t][s] = Some(times[j]);
                        }
                    }
                }
            }
            Ok(reached)
        })
        .collect();

    let mut trains: Vec<TrainForecast> = snapshot
        .trains
        .iter()
        .zip(&slots)
        .map(|(t, &n)| TrainForecast {
            itinerary: t.itinerary.clone(),
            start_index: t.position_index(),
            arrivals: vec![Vec::with_capacity(cfg.n_trajectories); n],
            delays: Vec::new(),
        })
        .collect();
    for run in runs {
        for (f, per_train) in trains.iter_mut().zip(run?) {
            for (s, a) in per_train.into_iter().enumerate() {
                f.arrivals[s].push(a);
            }
        }
    }
    Ok(ForecastEnsemble {
        reference_clock: snapshot.clock,
        n_trajectories: cfg.n_trajectories,
        steps,
        last_clock: snapshot.clock + steps as i64 * STEP_SECS,
        reference_delays: snapshot.trains.iter().map(|t| t.last_delay()).collect(),
        trains,
    })
}

/// Forecast with a trained action policy; regression heads are rejected.
pub fn forecast_with_policy(
    policy: &MlpPolicy,
    env: &Environment<'_>,
    snapshot: &Snapshot,
    cfg: &ForecastConfig,
    master_seed: u64,
    snapshot_id: u64,
) -> Result<ForecastEnsemble> {
    require_action_head(policy)?;
    monte_carlo_forecast(policy, env, snapshot, cfg, master_seed, snapshot_id)
}

/// Median; even counts average the two middle values.
pub fn point_forecast(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("median of no samples".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Evaluation records for every forecast station the log realized.
pub fn ensemble_records(ensemble: &ForecastEnsemble, log: &OperationalLog) -> Result<Vec<PredictionRecord>> {
    if ensemble.trains.iter().any(|f| f.delays.len() != f.arrivals.len()) {
        return Err(Error::State("ensemble delays have not been extracted".into()));
    }
    let mut out = Vec::new();
    for f in &ensemble.trains {
        let Some(logged) = log.get(f.train_id()) else {
            continue;
        };
        for (s, samples) in f.delays.iter().enumerate() {
            let j = f.station_index(s);
            let Some(actual) = logged.actual[j - 1] else {
                continue;
            };
            let samples: Vec<f64> = samples.iter().map(|&d| d as f64).collect();
            out.push(PredictionRecord {
                train_id: f.train_id().to_string(),
                station_index: j,
                predicted: point_forecast(&samples)?,
                observed: (actual - f.scheduled(s)) as f64,
                observed_arrival: actual,
                reference_clock: ensemble.reference_clock,
                samples,
            });
        }
    }
    Ok(out)
}

/// Direct delay predictions of a regression policy: the last known delay plus the predicted
/// increments for up to `stations` upcoming stations.
pub fn regression_records(
    policy: &MlpPolicy,
    env: &Environment<'_>,
    snapshot: &Snapshot,
    log: &OperationalLog,
    stations: usize,
) -> Result<Vec<PredictionRecord>> {
    let Head::Linear(k) = policy.head() else {
        return Err(Error::Invalid("regression records need a linear head".into()));
    };
    let mut out = Vec::new();
    if snapshot.is_empty() {
        return Ok(out);
    }
    let mut enc = SnapshotEncoder::new(snapshot, env.network, FeatureMode::Regression, env.norm)?;
    let mut x = Vec::with_capacity(FeatureMode::Regression.dim());
    for (i, state) in snapshot.trains.iter().enumerate() {
        let Some(logged) = log.get(state.train_id()) else {
            continue;
        };
        enc.encode_into(i, &mut x)?;
        let delta = policy.raw_output(&x)?;
        let it = &state.itinerary;
        for s in 0..state.remaining().min(stations).min(k) {
            let j = state.position_index() + 1 + s;
            let Some(actual) = logged.actual[j - 1] else {
                continue;
            };
            let predicted = state.last_delay() as f64 + delta[s] / DELAY_SCALE;
            out.push(PredictionRecord {
                train_id: it.train_id.to_string(),
                station_index: j,
                predicted,
                observed: (actual - it.scheduled[j]) as f64,
                observed_arrival: actual,
                reference_clock: snapshot.clock,
                samples: Vec::new(),
            });
        }
    }
    Ok(out)
}
