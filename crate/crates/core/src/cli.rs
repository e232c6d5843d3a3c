//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{DcilInit, RunConfig};
use crate::data::{ingest_csv, snapshots_at, write_tagged_csv, OperationalLog};
use crate::error::{Error, Result};
use crate::experiment::{
    build_training_data, embedded_desk_network, predict, run_experiment, split_by_days, test_clocks, train_method,
    Method,
};
use crate::forecast::forecast_with_policy;
use crate::metrics::{calibration_csv, evaluate, EvaluationReport};
use crate::network::RailNetwork;
use crate::rollout::Environment;
use crate::schedule::Timetable;
use crate::training::format_training_log;

#[derive(Debug, Parser)]
#[command(name = "railsim", version, about = "Rail-network delay simulation and forecasting")]
pub struct Cli {
    /// Config file of `section.key=value` lines.
    #[arg(long, global = true, env = "RAILSIM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed (same as `--set run.seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for rollouts; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic log and write its temporal splits.
    GenData {
        /// Output directory.
        #[arg(long, env = "RAILSIM_OUT")]
        out: PathBuf,
    },
    /// Train a policy and write its checkpoint and training log.
    Train {
        /// One of regression, bc, dcil.
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Training log (regression, bc).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Expert demonstration log (dcil).
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Validation log for early stopping and loss tracking.
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Checkpoint DCIL starts from when `dcil.init=bc`.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output directory.
        #[arg(long, env = "RAILSIM_OUT")]
        out: PathBuf,
    },
    /// Forecast held-out snapshots and write the error report.
    Evaluate {
        /// Trained policy checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out log with actual times.
        #[arg(long)]
        test: PathBuf,
        /// Output directory.
        #[arg(long, env = "RAILSIM_OUT")]
        out: PathBuf,
    },
    /// Write the interval calibration curve of an ensemble policy.
    Calibrate {
        /// Trained policy checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out log with actual times.
        #[arg(long)]
        test: PathBuf,
        /// Output directory.
        #[arg(long, env = "RAILSIM_OUT")]
        out: PathBuf,
    },
    /// Write the raw trajectories of one forecast ensemble.
    Simulate {
        /// Trained policy checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Log the snapshot is taken from.
        #[arg(long)]
        log: PathBuf,
        /// Reference clock; defaults to the first evaluation snapshot.
        #[arg(long)]
        clock: Option<i64>,
        /// Output directory.
        #[arg(long, env = "RAILSIM_OUT")]
        out: PathBuf,
    },
    /// Run the whole pipeline for consecutive master seeds and summarize.
    Experiment {
        /// Number of master seeds, counted up from `run.seed`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Output directory.
        #[arg(long, env = "RAILSIM_OUT")]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Resolved config: defaults, then the file, then `--set`, then `--seed` and `--workers`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn tags(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    vec![("seed", cfg.run.seed.to_string()), ("config_hash", cfg.hash())]
}

fn comment_block(meta: &[(&str, String)]) -> String {
    meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::MissingInput(format!("{what} path not given")))
}

fn read_log(path: &Path, network: &RailNetwork) -> Result<OperationalLog> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let report = ingest_csv(path)?;
    log::info!(
        "{}: {} trains, discard fraction {:.3}",
        path.display(),
        report.log.len(),
        report.discard_fraction()
    );
    Ok(report.log.with_lines(network))
}

fn read_checkpoint(path: &Path) -> Result<(Checkpoint, Method)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let ckpt = load_checkpoint(path)?;
    let method = ckpt
        .meta
        .get("method")
        .ok_or_else(|| Error::CorruptCheckpoint("no method recorded".into()))?
        .parse()?;
    Ok((ckpt, method))
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    log::info!("resolved config:\n{}", cfg.to_text());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg))
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    let network = embedded_desk_network()?;
    match command {
        Command::GenData { out } => gen_data(cfg, &network, out),
        Command::Train {
            method,
            data,
            demos,
            validation,
            init,
            out,
        } => {
            let train_path = match method {
                Method::Dcil => require(demos, "demonstration log (--demos)")?,
                _ => require(data, "training log (--data)")?,
            };
            let train = read_log(&train_path, &network)?;
            let validation = validation.as_ref().map(|p| read_log(p, &network)).transpose()?;
            let init = match (method, cfg.dcil.init) {
                (Method::Dcil, DcilInit::Bc) => {
                    Some(read_checkpoint(&require(init, "initial checkpoint (--init)")?)?.0)
                }
                _ => None,
            };
            train_cmd(cfg, &network, *method, &train, validation.as_ref(), init, out)
        }
        Command::Evaluate { checkpoint, test, out } => {
            let (ckpt, method) = read_checkpoint(checkpoint)?;
            let test = read_log(test, &network)?;
            let report = evaluate_checkpoint(cfg, &network, &ckpt, method, &test)?;
            out_dir(out)?;
            let mut meta = vec![("method", method.to_string())];
            meta.extend(tags(cfg));
            write(&out.join(format!("{method}.report.txt")), &report.to_text(&meta))?;
            write(
                &out.join(format!("{method}.report.csv")),
                &(comment_block(&meta) + &report.to_csv()),
            )
        }
        Command::Calibrate { checkpoint, test, out } => {
            let (ckpt, method) = read_checkpoint(checkpoint)?;
            if method == Method::Regression {
                return Err(Error::Invalid("calibration needs an ensemble policy".into()));
            }
            let test = read_log(test, &network)?;
            let report = evaluate_checkpoint(cfg, &network, &ckpt, method, &test)?;
            out_dir(out)?;
            let mut meta = vec![("method", method.to_string())];
            meta.extend(tags(cfg));
            write(
                &out.join(format!("{method}.calibration.csv")),
                &(comment_block(&meta) + &calibration_csv(&report.calibration)),
            )
        }
        Command::Simulate {
            checkpoint,
            log,
            clock,
            out,
        } => {
            let (ckpt, method) = read_checkpoint(checkpoint)?;
            let log = read_log(log, &network)?;
            simulate_cmd(cfg, &network, &ckpt, method, &log, *clock, out)
        }
        Command::Experiment { seeds, out } => experiment_cmd(cfg, *seeds, out),
    }
}

fn gen_data(cfg: &RunConfig, network: &RailNetwork, out: &Path) -> Result<()> {
    out_dir(out)?;
    let synthetic = crate::data::generate_synthetic(network, &cfg.synthetic())?;
    let split = split_by_days(cfg, &synthetic.log)?;
    let meta = tags(cfg);
    for (name, log, actual) in [
        ("train.csv", &split.train, true),
        ("validation.csv", &split.validation, true),
        ("test.csv", &split.test, true),
        ("timetable.csv", &synthetic.timetable, false),
    ] {
        let path = out.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_tagged_csv(log, &meta, actual, std::io::BufWriter::new(file))?;
    }
    write(&out.join("config.txt"), &cfg.to_text())
}

fn train_cmd(
    cfg: &RunConfig,
    network: &RailNetwork,
    method: Method,
    train: &OperationalLog,
    validation: Option<&OperationalLog>,
    init: Option<Checkpoint>,
    out: &Path,
) -> Result<()> {
    let data = build_training_data(cfg, network, train, validation, init.as_ref().map(|c| c.stats.clone()))?;
    let timetable = Timetable::from_log(&train.trains);
    let env = Environment {
        network,
        norm: &data.norm,
        timetable: &timetable,
    };
    let outcome = train_method(method, cfg, &env, &data, init.as_ref().map(|c| &c.policy))?;
    out_dir(out)?;
    let mut meta: BTreeMap<String, String> = tags(cfg).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    meta.insert("method".into(), method.to_string());
    meta.insert("selected_epoch".into(), outcome.selected_epoch.to_string());
    save_checkpoint(&out.join(format!("{method}.ckpt")), &outcome.policy, &data.norm, &meta)?;
    let mut tagged = vec![("method", method.to_string())];
    tagged.extend(tags(cfg));
    write(
        &out.join(format!("{method}.train.log")),
        &(comment_block(&tagged) + &format_training_log(&outcome.epochs)),
    )?;
    write(&out.join("config.txt"), &cfg.to_text())
}

/// Error report of a checkpoint over the configured test snapshots of `test`.
pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    network: &RailNetwork,
    ckpt: &Checkpoint,
    method: Method,
    test: &OperationalLog,
) -> Result<EvaluationReport> {
    let timetable = Timetable::from_log(&test.trains);
    let env = Environment {
        network,
        norm: &ckpt.stats,
        timetable: &timetable,
    };
    let snapshots = snapshots_at(test, &test_clocks(cfg, test));
    let records = predict(method, &ckpt.policy, cfg, &env, &snapshots, test)?;
    evaluate(&records, cfg.forecast.horizon)
}

fn simulate_cmd(
    cfg: &RunConfig,
    network: &RailNetwork,
    ckpt: &Checkpoint,
    method: Method,
    log: &OperationalLog,
    clock: Option<i64>,
    out: &Path,
) -> Result<()> {
    let clock = match clock {
        Some(c) => c,
        None => *test_clocks(cfg, log)
            .first()
            .ok_or_else(|| Error::Data("log has no active snapshot".into()))?,
    };
    let timetable = Timetable::from_log(&log.trains);
    let env = Environment {
        network,
        norm: &ckpt.stats,
        timetable: &timetable,
    };
    let snapshot = snapshots_at(log, &[clock]).remove(0);
    let fc = cfg.forecast_config(method == Method::Bc && cfg.forecast.bc_stall_clamp);
    let mut ens = forecast_with_policy(&ckpt.policy, &env, &snapshot, &fc, cfg.module_seed("forecast"), 0)?;
    ens.extract_delays();
    let mut text = comment_block(&tags(cfg));
    let _ = writeln!(text, "# reference_clock={}", ens.reference_clock);
    text.push_str("trajectory,train_id,station_index,scheduled,arrival,delay\n");
    for k in 0..ens.n_trajectories {
        for f in &ens.trains {
            for s in 0..f.arrivals.len() {
                let arrival = f.arrivals[s][k].map(|a| a.to_string()).unwrap_or_default();
                let _ = writeln!(
                    text,
                    "{k},{},{},{},{arrival},{}",
                    f.train_id(),
                    f.station_index(s),
                    f.scheduled(s),
                    f.delays[s][k]
                );
            }
        }
    }
    out_dir(out)?;
    write(&out.join(format!("{method}.trajectories.csv")), &text)
}

/// Medians over seeds of the overall, 0-5 min and 15-30 min MAE of each method.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub method: Method,
    pub overall: f64,
    pub first_bin: f64,
    pub late_bins: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-method medians across seed reports.
pub fn summarize(reports: &[BTreeMap<Method, EvaluationReport>]) -> Vec<SeedSummary> {
    Method::ALL
        .iter()
        .map(|&m| {
            let pick = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| {
                median(reports.iter().filter_map(|r| r.get(&m).and_then(f)).collect())
            };
            SeedSummary {
                method: m,
                overall: pick(&|r| Some(r.mae)),
                first_bin: pick(&|r| r.mae_by_bin[0]),
                late_bins: pick(&|r| r.mae_over_bins(3, 5)),
            }
        })
        .collect()
}

fn experiment_cmd(cfg: &RunConfig, seeds: u64, out: &Path) -> Result<()> {
    out_dir(out)?;
    let mut all = Vec::new();
    for s in 0..seeds {
        let mut c = cfg.clone();
        c.run.seed = cfg.run.seed + s;
        let result = run_experiment(&c)?;
        let dir = out.join(format!("seed-{}", c.run.seed));
        out_dir(&dir)?;
        let mut reports = BTreeMap::new();
        for (m, r) in result.methods {
            let mut meta = vec![("method", m.to_string())];
            meta.extend(tags(&c));
            write(&dir.join(format!("{m}.report.txt")), &r.report.to_text(&meta))?;
            if !r.report.calibration.is_empty() {
                write(
                    &dir.join(format!("{m}.calibration.csv")),
                    &(comment_block(&meta) + &calibration_csv(&r.report.calibration)),
                )?;
            }
            reports.insert(m, r.report);
        }
        all.push(reports);
    }
    let mut text = comment_block(&tags(cfg));
    text.push_str("method,median_mae,median_mae_0_5,median_mae_15_30\n");
    for s in summarize(&all) {
        let _ = writeln!(
            text,
            "{},{:.3},{:.3},{:.3}",
            s.method, s.overall, s.first_bin, s.late_bins
        );
    }
    print!("{text}");
    write(&out.join("summary.csv"), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_subcommand_and_flag() {
        assert!(Cli::try_parse_from(["railsim", "fly"]).is_err());
        assert!(Cli::try_parse_from(["railsim", "gen-data", "--out", "d", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["railsim", "train", "--method", "gail", "--out", "o"]).is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let cli = Cli::try_parse_from([
            "railsim",
            "--set",
            "dcil.alpha=0.3",
            "--seed",
            "4",
            "gen-data",
            "--out",
            "d",
        ])
        .unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!((cfg.dcil.alpha, cfg.run.seed), (0.3, 4));
    }

    #[test]
    fn dcil_without_demos_is_missing_input() {
        let err = run(["railsim", "train", "--method", "dcil", "--out", "/nonexistent"]).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)), "{err}");
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }
}
