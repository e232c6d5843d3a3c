//! Flat `section.key=value` run configuration.
//!
//! Every key has a default; a config file and then command-line overrides are applied on top.
//! Unknown keys are errors. The resolved config renders back to the same text form, and its
//! hash tags every artifact of a run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::forecast::ForecastConfig;
use crate::rollout::Sampling;
use crate::seed::{derive_seed, text_hash};
use crate::training::{DcilConfig, SupervisedConfig};

/// Starting point of DCIL training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcilInit {
    /// Fresh network.
    Scratch,
    /// Copy of the behavioural-cloning policy.
    Bc,
}

impl fmt::Display for DcilInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DcilInit::Scratch => "scratch",
            DcilInit::Bc => "bc",
        })
    }
}

impl FromStr for DcilInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "scratch" => Ok(DcilInit::Scratch),
            "bc" => Ok(DcilInit::Bc),
            _ => Err(format!("expected `scratch` or `bc`, got `{s}`")),
        }
    }
}

/// Comma-separated hidden layer widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layers(pub Vec<usize>);

impl fmt::Display for Layers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Layers {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("bad layer width `{w}`")),
                Ok(v) => Ok(v),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Layers)
    }
}

macro_rules! run_config {
    ($( $section:ident : $name:ident { $( $field:ident : $ty:ty = $default:expr ),* $(,)? } )*) => {
        $(
            #[derive(Debug, Clone, PartialEq)]
            pub struct $name { $( pub $field: $ty, )* }

            impl Default for $name {
                fn default() -> Self {
                    $name { $( $field: $default, )* }
                }
            }
        )*

        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct RunConfig { $( pub $section: $name, )* }

        impl RunConfig {
            /// Sets one `section.key` from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $( $(
                        concat!(stringify!($section), ".", stringify!($field)) => {
                            self.$section.$field = parse_value::<$ty>(key, value)?;
                        }
                    )* )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// Every resolved `(key, value)` in a fixed order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![ $( $(
                    (
                        concat!(stringify!($section), ".", stringify!($field)),
                        render_value(&self.$section.$field),
                    ),
                )* )* ]
            }
        }
    };
}

trait ConfigValue: Sized {
    fn parse_text(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_text(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, i64, bool, DcilInit, Layers);

impl ConfigValue for f64 {
    fn parse_text(s: &str) -> std::result::Result<Self, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err("value must be finite".into()),
            Err(e) => Err(e.to_string()),
        }
    }

    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for Sampling {
    fn parse_text(s: &str) -> std::result::Result<Self, String> {
        Sampling::parse(s).map_err(|e| e.to_string())
    }

    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

fn parse_value<T: ConfigValue>(key: &str, value: &str) -> Result<T> {
    T::parse_text(value).map_err(|e| Error::Config(format!("`{key}={value}`: {e}")))
}

fn render_value<T: ConfigValue>(v: &T) -> String {
    v.render()
}

run_config! {
    run: RunSection {
        seed: u64 = 0,
        workers: usize = 0,
    }
    data: DataSection {
        n_trains_per_day: usize = 48,
        train_days: usize = 14,
        val_days: usize = 2,
        test_days: usize = 2,
        incident_rate: f64 = 0.5,
        delay_mu: f64 = 5.0,
        delay_sigma: f64 = 0.8,
        jitter: f64 = 15.0,
        headway: i64 = 240,
        propagation: f64 = 0.8,
        recovery: i64 = 15,
        slack: f64 = 0.05,
        dwell: i64 = 30,
        subsample: f64 = 0.1,
    }
    model: ModelSection {
        hidden: Layers = Layers(vec![64, 128, 64]),
    }
    regression: RegressionSection {
        epochs: usize = 40,
        batch_size: usize = 16,
        lr: f64 = 5e-5,
        patience: f64 = 0.25,
    }
    bc: BcSection {
        epochs: usize = 40,
        batch_size: usize = 16,
        lr: f64 = 5e-5,
        patience: f64 = 0.25,
    }
    dcil: DcilSection {
        epochs: usize = 30,
        capacity: usize = 30_000,
        samples_per_epoch: usize = 10_000,
        trajectory_len: usize = 5,
        batch_size: usize = 16,
        lr: f64 = 5e-5,
        alpha: f64 = 0.5,
        beta: f64 = 1.0,
        sampling: Sampling = Sampling::Sample,
        init: DcilInit = DcilInit::Bc,
        trajectories: usize = 2000,
    }
    forecast: ForecastSection {
        n_trajectories: usize = 50,
        horizon: i64 = 1800,
        stations: usize = 15,
        sampling: Sampling = Sampling::Sample,
        bc_stall_clamp: bool = true,
        test_snapshots: usize = 40,
    }
}

impl RunConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of the resolved text form.
    pub fn hash(&self) -> String {
        text_hash(&self.to_text())
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic().validate()?;
        self.regression_config().validate()?;
        self.bc_config().validate()?;
        self.dcil().validate()?;
        if self.data.train_days == 0 || self.data.val_days == 0 || self.data.test_days == 0 {
            return Err(Error::Config("every split needs at least one day".into()));
        }
        if !(self.data.subsample > 0.0 && self.data.subsample <= 1.0) {
            return Err(Error::Config("data.subsample must be in (0, 1]".into()));
        }
        if self.forecast.n_trajectories == 0 || self.forecast.horizon <= 0 || self.forecast.stations == 0 {
            return Err(Error::Config("forecast settings must be positive".into()));
        }
        if self.dcil.trajectories == 0 {
            return Err(Error::Config("dcil.trajectories must be positive".into()));
        }
        Ok(())
    }

    pub fn total_days(&self) -> usize {
        self.data.train_days + self.data.val_days + self.data.test_days
    }

    /// Generator settings; its seed is derived from the master seed.
    pub fn synthetic(&self) -> SyntheticConfig {
        let d = &self.data;
        SyntheticConfig {
            n_trains_per_day: d.n_trains_per_day,
            days: self.total_days(),
            incident_rate: d.incident_rate,
            delay_mu: d.delay_mu,
            delay_sigma: d.delay_sigma,
            jitter: d.jitter,
            headway: d.headway,
            propagation: d.propagation,
            recovery: d.recovery,
            slack: d.slack,
            dwell: d.dwell,
            seed: self.module_seed("synthetic"),
            ..SyntheticConfig::default()
        }
    }

    pub fn bc_config(&self) -> SupervisedConfig {
        let b = &self.bc;
        SupervisedConfig {
            max_epochs: b.epochs,
            batch_size: b.batch_size,
            lr: b.lr,
            patience_fraction: b.patience,
            seed: self.module_seed("bc"),
        }
    }

    pub fn regression_config(&self) -> SupervisedConfig {
        let r = &self.regression;
        SupervisedConfig {
            max_epochs: r.epochs,
            batch_size: r.batch_size,
            lr: r.lr,
            patience_fraction: r.patience,
            seed: self.module_seed("regression"),
        }
    }

    pub fn dcil(&self) -> DcilConfig {
        let d = &self.dcil;
        DcilConfig {
            epochs: d.epochs,
            capacity: d.capacity,
            samples_per_epoch: d.samples_per_epoch,
            trajectory_len: d.trajectory_len,
            batch_size: d.batch_size,
            lr: d.lr,
            alpha: d.alpha,
            beta: d.beta,
            sampling: d.sampling,
            seed: self.module_seed("dcil"),
        }
    }

    /// Forecast settings; the stall clamp is only used for behavioural cloning.
    pub fn forecast_config(&self, stall_clamp: bool) -> ForecastConfig {
        ForecastConfig {
            n_trajectories: self.forecast.n_trajectories,
            horizon: self.forecast.horizon,
            stations: self.forecast.stations,
            stall_clamp,
            sampling: self.forecast.sampling,
        }
    }

    pub fn module_seed(&self, label: &str) -> u64 {
        derive_seed(self.run.seed, label, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["dcil.alpha=0.25", "model.hidden=8,4", "run.seed=9"])
            .unwrap();
        assert_eq!(c.dcil.alpha, 0.25);
        assert_eq!(c.model.hidden, Layers(vec![8, 4]));
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("dcil.gamma", "1"), Err(Error::Config(_))));
        assert!(c.set("dcil.alpha", "abc").is_err());
        assert!(c.set("dcil.alpha", "inf").is_err());
        assert!(c.set("model.hidden", "8,0").is_err());
        assert!(c.set("dcil.sampling", "argmax").is_err());
        assert!(RunConfig::parse("dcil.alpha 0.5").is_err());
        assert!(c.apply_overrides(&["run.seed"]).is_err());
    }

    #[test]
    fn comments_and_defaults() {
        let c = RunConfig::parse("# note\n\n  bc.lr = 0.001\n").unwrap();
        assert_eq!(c.bc.lr, 0.001);
        assert_eq!(c.forecast.n_trajectories, 50);
        assert_eq!(c.synthetic().days, 18);
        c.validate().unwrap();
        let text = c.to_text();
        assert!(text.contains("bc.lr=0.001\n"));
        assert!(text.contains("dcil.sampling=sample\n"));
    }

    #[test]
    fn module_seeds_follow_master() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.run.seed = 1;
        assert_ne!(a.dcil().seed, b.dcil().seed);
        assert_ne!(a.bc_config().seed, a.regression_config().seed);
        assert_eq!(a.synthetic().seed, RunConfig::default().synthetic().seed);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.data.propagation = 2.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.subsample = 0.0;
        assert!(c.validate().is_err());
    }
}
