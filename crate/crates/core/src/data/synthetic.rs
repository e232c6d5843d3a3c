//! Synthetic timetable and delay generator.
//!
//! The timetable runs every network line in both directions at a fixed interval over a daily
//! service period, keeping the minimum headway on every directed edge. Realized times come
//! from one sweep over all station events in scheduled order:
//!
//! ```text
//! t_j = t_{j-1} + (tau_j - tau_{j-1})             carry the delay forward
//!       - min(recovery, delay_{j-1})              recover slack at the stop
//!       + incident                                p = 1 - exp(-rate * run_hours)
//!       + jitter
//! if t_j < pred + headway:  t_j += p_prop * (pred + headway - t_j)
//! ```
//!
//! where `pred` is the latest realized arrival on the same directed edge.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::OperationalLog;
use crate::error::{Error, Result};
use crate::network::RailNetwork;
use crate::schedule::{Itinerary, LoggedTrain, TrainType};
use crate::seed::rng_for;

const DAY_SECS: i64 = 86_400;
/// Exposure window for departure incidents, in hours.
const DEPARTURE_EXPOSURE_HOURS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_trains_per_day: usize,
    pub days: usize,
    /// Epoch second of day 0, 00:00.
    pub start_epoch: i64,
    /// Service period as seconds after midnight, `[start, end)`.
    pub service_start: i64,
    pub service_end: i64,
    /// Regional base run times per edge are drawn uniformly from this range.
    pub run_time_min: i64,
    pub run_time_max: i64,
    /// Explicit base run times by undirected edge; overrides the drawn value.
    pub run_time_overrides: BTreeMap<(String, String), i64>,
    /// Intercity run time as a fraction of the regional one.
    pub intercity_factor: f64,
    /// Dwell added per regional stop.
    pub dwell: i64,
    /// Schedule padding as a fraction of the run time.
    pub slack: f64,
    /// Primary incidents per train-hour.
    pub incident_rate: f64,
    /// Lognormal incident magnitude, parameters of the underlying normal in log-seconds.
    pub delay_mu: f64,
    pub delay_sigma: f64,
    /// Standard deviation of per-stop timing noise, seconds.
    pub jitter: f64,
    pub headway: i64,
    /// Fraction of a headway conflict passed on to the follower, in `[0, 1]`.
    pub propagation: f64,
    /// Seconds of delay recoverable per stop.
    pub recovery: i64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_trains_per_day: 48,
            days: 18,
            start_epoch: 1_704_067_200,
            service_start: 6 * 3600,
            service_end: 9 * 3600,
            run_time_min: 150,
            run_time_max: 330,
            run_time_overrides: BTreeMap::new(),
            intercity_factor: 0.75,
            dwell: 30,
            slack: 0.05,
            incident_rate: 0.5,
            delay_mu: 5.0,
            delay_sigma: 0.8,
            jitter: 15.0,
            headway: 240,
            propagation: 0.8,
            recovery: 15,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.headway <= 0 {
            return bad(format!("headway must be positive, got {}", self.headway));
        }
        if !(0.0..=1.0).contains(&self.propagation) {
            return bad(format!("propagation {} outside [0, 1]", self.propagation));
        }
        if self.n_trains_per_day == 0 || self.days == 0 {
            return bad("need at least one train and one day".into());
        }
        if self.service_end <= self.service_start || self.service_start < 0 || self.service_end > DAY_SECS {
            return bad("service period must be a non-empty part of one day".into());
        }
        if self.run_time_min <= 0 || self.run_time_max < self.run_time_min {
            return bad("run time range must be positive and ordered".into());
        }
        if !(self.intercity_factor > 0.0 && self.intercity_factor <= 1.0) {
            return bad(format!("intercity factor {} outside (0, 1]", self.intercity_factor));
        }
        if self.incident_rate < 0.0 || self.delay_sigma < 0.0 || self.jitter < 0.0 || self.recovery < 0 {
            return bad("rates, spreads and recovery must be non-negative".into());
        }
        if self.dwell < 0 {
            return bad("dwell must be non-negative".into());
        }
        Ok(())
    }
}

/// Extra delay added to one train at one station (1-based real index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForcedIncident {
    pub train_id: String,
    pub station_index: usize,
    pub seconds: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutput {
    pub log: OperationalLog,
    /// The same trains without realized times.
    pub timetable: OperationalLog,
}

/// 30 stations: a 12-station trunk crossed by a north-east line sharing four trunk stations
/// and a west-south line sharing two.
pub fn desk_network() -> RailNetwork {
    let seq = |p: &str, n: usize| -> Vec<String> { (1..=n).map(|k| format!("{p}{k:02}")).collect() };
    let trunk = seq("S", 12);
    let north = seq("N", 5);
    let east = seq("E", 5);
    let west = seq("W", 4);
    let south = seq("Q", 4);

    let l1 = trunk.clone();
    let l2: Vec<String> = north.iter().chain(&trunk[3..7]).chain(&east).cloned().collect();
    let l3: Vec<String> = west.iter().chain(&trunk[8..10]).chain(&south).cloned().collect();

    let stations: Vec<String> = [&trunk, &north, &east, &west, &south]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
    let mut edges = Vec::new();
    for line in [&l1, &l2, &l3] {
        for w in line.windows(2) {
            edges.push((w[0].clone(), w[1].clone()));
        }
    }
    let lines = vec![("L1".to_string(), l1), ("L2".to_string(), l2), ("L3".to_string(), l3)];
    RailNetwork::build(&stations, &edges, &lines).expect("desk network is well formed")
}

fn edge_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

struct Route {
    line: String,
    direction: char,
    stations: Vec<String>,
}

fn routes(network: &RailNetwork) -> Result<Vec<Route>> {
    let mut out = Vec::new();
    for (line, members) in network.lines() {
        if members.len() < 2 {
            continue;
        }
        for w in members.windows(2) {
            if !network.has_edge(w[0], w[1]) {
                return Err(Error::InfeasibleTimetable(format!(
                    "line `{line}` runs between non-adjacent stations `{}` and `{}`",
                    network.stations()[w[0]],
                    network.stations()[w[1]]
                )));
            }
        }
        let names: Vec<String> = members.iter().map(|&i| network.stations()[i].clone()).collect();
        let mut rev = names.clone();
        rev.reverse();
        out.push(Route {
            line: line.clone(),
            direction: 'f',
            stations: names,
        });
        out.push(Route {
            line: line.clone(),
            direction: 'r',
            stations: rev,
        });
    }
    if out.is_empty() {
        return Err(Error::InfeasibleTimetable(
            "network has no line with two stations".into(),
        ));
    }
    Ok(out)
}

/// Builds the timetable and simulates realized times.
pub fn generate_synthetic(network: &RailNetwork, config: &SyntheticConfig) -> Result<SyntheticOutput> {
    config.validate()?;
    let routes = routes(network)?;

    let mut edge_rng = rng_for(config.seed, "synthetic-edges", 0);
    let mut base_run: BTreeMap<(String, String), i64> = BTreeMap::new();
    for (a, b) in network.edges() {
        let drawn = edge_rng.random_range(config.run_time_min..=config.run_time_max);
        let key = edge_key(a, b);
        let t = config.run_time_overrides.get(&key).copied().unwrap_or(drawn);
        base_run.insert(key, t);
    }

    let n_routes = routes.len();
    let span = config.service_end - config.service_start;
    let mut itineraries = Vec::with_capacity(config.n_trains_per_day * config.days);
    for day in 0..config.days {
        let day_start = config.start_epoch + day as i64 * DAY_SECS;
        // (nominal departure, route, ordinal)
        let mut nominal = Vec::new();
        for (r, _) in routes.iter().enumerate() {
            let q = config.n_trains_per_day / n_routes + usize::from(r < config.n_trains_per_day % n_routes);
            if q == 0 {
                continue;
            }
            let interval = span / q as i64;
            let offset = interval * r as i64 / n_routes as i64;
            for k in 0..q {
                nominal.push((day_start + config.service_start + offset + interval * k as i64, r, k));
            }
        }
        nominal.sort();

        let mut last_on_edge: HashMap<(&str, &str), i64> = HashMap::new();
        for (dep, r, k) in nominal {
            let route = &routes[r];
            let train_type = if k % 2 == 0 {
                TrainType::Regional
            } else {
                TrainType::Intercity
            };
            let mut stops = Vec::with_capacity(route.stations.len());
            let mut t = dep;
            stops.push((route.stations[0].clone(), t));
            for w in route.stations.windows(2) {
                let base = base_run[&edge_key(&w[0], &w[1])] as f64;
                let run = match train_type {
                    TrainType::Regional => base + config.dwell as f64,
                    _ => base * config.intercity_factor,
                };
                let run = ((run * (1.0 + config.slack)).round() as i64).max(1);
                let key = (w[0].as_str(), w[1].as_str());
                t = (t + run).max(last_on_edge.get(&key).map_or(i64::MIN, |p| p + config.headway));
                last_on_edge.insert(key, t);
                stops.push((w[1].clone(), t));
            }
            if t >= day_start + DAY_SECS {
                return Err(Error::InfeasibleTimetable(format!(
                    "day {day}: service on `{}` runs past midnight",
                    route.line
                )));
            }
            let id = format!("d{day:02}-{}-{}{k:02}", route.line, route.direction);
            itineraries.push(Arc::new(Itinerary::new(id, train_type, &stops)?));
        }
    }

    let mut rng = rng_for(config.seed, "synthetic-operations", 0);
    let trains = simulate_operations(&itineraries, config, &[], &mut rng)?;
    let timetable = OperationalLog::new(
        itineraries
            .iter()
            .map(|it| LoggedTrain {
                itinerary: Arc::clone(it),
                actual: vec![None; it.real_len()],
            })
            .collect(),
    );
    Ok(SyntheticOutput {
        log: OperationalLog::new(trains),
        timetable,
    })
}

/// Realized times for the given itineraries under the primary and knock-on delay processes.
pub fn simulate_operations(
    itineraries: &[Arc<Itinerary>],
    config: &SyntheticConfig,
    forced: &[ForcedIncident],
    rng: &mut impl Rng,
) -> Result<Vec<LoggedTrain>> {
    config.validate()?;
    let magnitude = LogNormal::new(config.delay_mu, config.delay_sigma)
        .map_err(|e| Error::Config(format!("delay distribution: {e}")))?;
    let noise = Normal::new(0.0, config.jitter).map_err(|e| Error::Config(format!("jitter distribution: {e}")))?;
    let incident = |hours: f64, rng: &mut dyn rand::RngCore| -> i64 {
        let p = 1.0 - (-config.incident_rate * hours).exp();
        if rng.random::<f64>() < p {
            magnitude.sample(rng).round() as i64
        } else {
            0
        }
    };
    let mut forced_at: HashMap<(&str, usize), i64> = HashMap::new();
    for f in forced {
        *forced_at.entry((f.train_id.as_str(), f.station_index)).or_default() += f.seconds;
    }

    let mut events: Vec<(i64, usize, usize)> = itineraries
        .iter()
        .enumerate()
        .flat_map(|(t, it)| (1..=it.final_index()).map(move |j| (it.scheduled[j], t, j)))
        .collect();
    events.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| itineraries[a.1].train_id.cmp(&itineraries[b.1].train_id))
            .then(a.2.cmp(&b.2))
    });

    let mut actual: Vec<Vec<i64>> = itineraries.iter().map(|it| Vec::with_capacity(it.real_len())).collect();
    let mut last_on_edge: HashMap<(&str, &str), i64> = HashMap::new();
    for (tau, t, j) in events {
        let it = &itineraries[t];
        let extra = forced_at.get(&(it.train_id.as_ref(), j)).copied().unwrap_or(0);
        let jitter = if config.jitter > 0.0 {
            noise.sample(rng).round() as i64
        } else {
            0
        };
        let time = if j == 1 {
            tau + incident(DEPARTURE_EXPOSURE_HOURS, rng) + jitter.max(0) + extra
        } else {
            let prev = actual[t][j - 2];
            let delay = prev - it.scheduled[j - 1];
            let run = tau - it.scheduled[j - 1];
            let mut time = prev + run - config.recovery.min(delay.max(0));
            time += incident(run as f64 / 3600.0, rng) + jitter + extra;
            let key = (
                it.station(j - 1).expect("real station"),
                it.station(j).expect("real station"),
            );
            if let Some(&pred) = last_on_edge.get(&key) {
                let gap = pred + config.headway - time;
                if gap > 0 {
                    time += (config.propagation * gap as f64).round() as i64;
                }
            }
            let time = time.max(prev + 1);
            let slot = last_on_edge.entry(key).or_insert(time);
            *slot = (*slot).max(time);
            time
        };
        actual[t].push(time);
    }

    Ok(itineraries
        .iter()
        .zip(actual)
        .map(|(it, times)| LoggedTrain {
            itinerary: Arc::clone(it),
            actual: times.into_iter().map(Some).collect(),
        })
        .collect())
}
