//! Desk-scale pipeline: synthetic data, temporal split, training of the three methods, and
//! forecast evaluation on held-out snapshots.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::config::{DcilInit, RunConfig};
use crate::data::{
    desk_network, generate_synthetic, temporal_split, trajectories, ActionDataset, OperationalLog, RegressionDataset,
    SnapshotDataset, Split,
};
use crate::dynamics::STEP_SECS;
use crate::error::{Error, Result};
use crate::features::{FeatureMode, NormalizationStats};
use crate::forecast::{ensemble_records, forecast_with_policy, regression_records};
use crate::metrics::{evaluate, EvaluationReport, PredictionRecord};
use crate::network::{RailNetwork, EMBEDDING_DIM};
use crate::policy::{Head, MlpPolicy};
use crate::rollout::Environment;
use crate::schedule::{Snapshot, Timetable};
use crate::seed::rng_for;
use crate::training::{bc_train, dcil_train, regression_train, TrainingOutcome};

const DAY_SECS: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Regression,
    Bc,
    Dcil,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Regression, Method::Bc, Method::Dcil];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Regression => "regression",
            Method::Bc => "bc",
            Method::Dcil => "dcil",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Method::Regression),
            "bc" => Ok(Method::Bc),
            "dcil" => Ok(Method::Dcil),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

/// The desk network with its spectral coordinates.
pub fn embedded_desk_network() -> Result<RailNetwork> {
    let mut net = desk_network();
    net.spectral_embedding(EMBEDDING_DIM)?;
    Ok(net)
}

/// Synthetic log for the configured number of days, with train lines tagged.
pub fn generate_log(cfg: &RunConfig, network: &RailNetwork) -> Result<OperationalLog> {
    let out = generate_synthetic(network, &cfg.synthetic())?;
    Ok(out.log.with_lines(network))
}

/// Splits at whole-day boundaries after the configured training and validation days.
pub fn split_by_days(cfg: &RunConfig, log: &OperationalLog) -> Result<Split> {
    let start = cfg.synthetic().start_epoch;
    let train_end = start + cfg.data.train_days as i64 * DAY_SECS;
    let val_end = train_end + cfg.data.val_days as i64 * DAY_SECS;
    temporal_split(log, train_end, val_end)
}

/// Everything the trainers consume, derived from the training and validation logs.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub norm: NormalizationStats,
    pub actions: ActionDataset,
    pub val_actions: ActionDataset,
    pub regression: RegressionDataset,
    pub val_regression: RegressionDataset,
    pub demos: Vec<Vec<Snapshot>>,
}

/// Builds the datasets. Normalization is fitted on the training snapshots unless `norm` is
/// given; an absent validation log leaves the validation sets empty.
pub fn build_training_data(
    cfg: &RunConfig,
    network: &RailNetwork,
    train: &OperationalLog,
    validation: Option<&OperationalLog>,
    norm: Option<NormalizationStats>,
) -> Result<TrainingData> {
    let seed = cfg.run.seed;
    let snaps = SnapshotDataset::build(train, STEP_SECS, cfg.data.subsample, &mut rng_for(seed, "subsample", 0))?;
    let norm = match norm {
        Some(n) => n,
        None => NormalizationStats::fit(snaps.snapshots(), network)?,
    };
    let actions = ActionDataset::from_pairs(&snaps, network, &norm)?;
    let regression = RegressionDataset::from_snapshots(snaps.snapshots(), train, network, &norm)?;
    let (val_actions, val_regression) = match validation.filter(|v| !v.is_empty()) {
        Some(v) => {
            let val_snaps =
                SnapshotDataset::build(v, STEP_SECS, cfg.data.subsample, &mut rng_for(seed, "subsample", 1))?;
            (
                ActionDataset::from_pairs(&val_snaps, network, &norm)?,
                RegressionDataset::from_snapshots(val_snaps.snapshots(), v, network, &norm)?,
            )
        }
        None => Default::default(),
    };

    let grid = SnapshotDataset::grid(train, STEP_SECS);
    if grid.is_empty() {
        return Err(Error::Data("training log has no active snapshots".into()));
    }
    let mut rng = rng_for(seed, "demo-anchors", 0);
    let anchors: Vec<i64> = (0..cfg.dcil.trajectories)
        .map(|_| grid[rng.random_range(0..grid.len())])
        .collect();
    let demos = trajectories(train, &anchors, cfg.dcil.trajectory_len, STEP_SECS);
    Ok(TrainingData {
        norm,
        actions,
        val_actions,
        regression,
        val_regression,
        demos,
    })
}

/// Trains one method. DCIL starts from `bc` when configured to and one is given.
pub fn train_method(
    method: Method,
    cfg: &RunConfig,
    env: &Environment<'_>,
    data: &TrainingData,
    bc: Option<&MlpPolicy>,
) -> Result<TrainingOutcome> {
    let hidden = &cfg.model.hidden.0;
    match method {
        Method::Regression => regression_train(
            &data.regression,
            Some(&data.val_regression).filter(|d| !d.is_empty()),
            hidden,
            &cfg.regression_config(),
        ),
        Method::Bc => bc_train(
            &data.actions,
            Some(&data.val_actions).filter(|d| !d.is_empty()),
            hidden,
            &cfg.bc_config(),
        ),
        Method::Dcil => {
            let dcil = cfg.dcil();
            let mut start = match (cfg.dcil.init, bc) {
                (DcilInit::Bc, Some(p)) => p.clone(),
                (DcilInit::Bc, None) => {
                    return Err(Error::MissingInput("DCIL initialization needs a BC policy".into()))
                }
                (DcilInit::Scratch, _) => MlpPolicy::new(
                    FeatureMode::Simulation.dim(),
                    hidden,
                    Head::Softmax3,
                    &mut rng_for(dcil.seed, "init-dcil", 0),
                ),
            };
            start.reset_optimizer();
            dcil_train(
                &data.demos,
                env,
                start,
                &dcil,
                Some(&data.val_actions).filter(|d| !d.is_empty()),
            )
        }
    }
}

/// Reference clocks for evaluation, drawn without replacement from the active grid of `log`.
pub fn test_clocks(cfg: &RunConfig, log: &OperationalLog) -> Vec<i64> {
    let grid = SnapshotDataset::grid(log, STEP_SECS);
    let n = cfg.forecast.test_snapshots.min(grid.len());
    let mut picks: Vec<usize> = sample(&mut rng_for(cfg.run.seed, "test-snapshots", 0), grid.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| grid[i]).collect()
}

/// Prediction records of one trained policy over the given test snapshots.
pub fn predict(
    method: Method,
    policy: &MlpPolicy,
    cfg: &RunConfig,
    env: &Environment<'_>,
    snapshots: &[Snapshot],
    log: &OperationalLog,
) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    let fc = cfg.forecast_config(method == Method::Bc && cfg.forecast.bc_stall_clamp);
    for (id, snap) in snapshots.iter().enumerate() {
        if snap.is_empty() {
            continue;
        }
        match method {
            Method::Regression => {
                records.extend(regression_records(policy, env, snap, log, cfg.forecast.stations)?);
            }
            Method::Bc | Method::Dcil => {
                let mut ens = forecast_with_policy(policy, env, snap, &fc, cfg.module_seed("forecast"), id as u64)?;
                ens.extract_delays();
                records.extend(ensemble_records(&ens, log)?);
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub outcome: TrainingOutcome,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub norm: NormalizationStats,
    pub methods: BTreeMap<Method, MethodResult>,
}

/// Full pipeline for one master seed.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let network = embedded_desk_network()?;
    let log = generate_log(cfg, &network)?;
    let timetable = Timetable::from_log(&log.trains);
    let split = split_by_days(cfg, &log)?;
    let data = build_training_data(cfg, &network, &split.train, Some(&split.validation), None)?;
    let env = Environment {
        network: &network,
        norm: &data.norm,
        timetable: &timetable,
    };
    let clocks = test_clocks(cfg, &split.test);
    let snapshots = crate::data::snapshots_at(&split.test, &clocks);

    let mut methods = BTreeMap::new();
    let mut bc_policy: Option<MlpPolicy> = None;
    for method in Method::ALL {
        log::info!("seed {}: training {method}", cfg.run.seed);
        let outcome = train_method(method, cfg, &env, &data, bc_policy.as_ref())?;
        let records = predict(method, &outcome.policy, cfg, &env, &snapshots, &split.test)?;
        let report = evaluate(&records, cfg.forecast.horizon)?;
        log::info!("seed {}: {method} mae {:.2}", cfg.run.seed, report.mae);
        if method == Method::Bc {
            bc_policy = Some(outcome.policy.clone());
        }
        methods.insert(method, MethodResult { outcome, report });
    }
    Ok(ExperimentResult {
        norm: data.norm,
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "data.n_trains_per_day=12",
            "data.train_days=2",
            "data.val_days=1",
            "data.test_days=1",
            "data.subsample=0.2",
            "model.hidden=8",
            "regression.epochs=2",
            "bc.epochs=2",
            "dcil.epochs=2",
            "dcil.samples_per_epoch=200",
            "dcil.trajectories=20",
            "forecast.n_trajectories=4",
            "forecast.test_snapshots=3",
        ])
        .unwrap();
        c
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("gail".parse::<Method>().is_err());
    }

    #[test]
    fn split_follows_day_boundaries() {
        let cfg = tiny();
        let net = embedded_desk_network().unwrap();
        let log = generate_log(&cfg, &net).unwrap();
        let s = split_by_days(&cfg, &log).unwrap();
        assert_eq!(s.train.len(), 2 * 12);
        assert_eq!(s.validation.len(), 12);
        assert_eq!(s.test.len(), 12);
        assert!(log.trains.iter().all(|t| t.itinerary.line.is_some()));
    }

    #[test]
    fn tiny_pipeline_is_deterministic() {
        let cfg = tiny();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        for m in Method::ALL {
            let (x, y) = (&a.methods[&m], &b.methods[&m]);
            assert_eq!(x.outcome.policy, y.outcome.policy);
            assert_eq!(x.report, y.report);
            assert!(x.report.rmse >= x.report.mae);
        }
        assert!(a.methods[&Method::Dcil].report.calibration.len() == 9);
        assert!(a.methods[&Method::Regression].report.calibration.is_empty());
    }
}
