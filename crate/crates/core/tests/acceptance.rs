//! Acceptance suite: one PASS/FAIL line per criterion; the process fails if any criterion does.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use railsim::cli;
use railsim::config::RunConfig;
use railsim::data::desk_network;
use railsim::dynamics::{apply_action, step_snapshot, Action, JointAction, STEP_SECS};
use railsim::experiment::{run_experiment, Method};
use railsim::features::NormalizationStats;
use railsim::forecast::{monte_carlo_forecast, rollout_steps, ForecastConfig};
use railsim::linalg::{jacobi_eigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
use railsim::metrics::{calibration_curve, DEFAULT_LEVELS};
use railsim::network::RailNetwork;
use railsim::policy::{Head, MlpPolicy, Sample, Target};
use railsim::rollout::{ConstantModel, Environment};
use railsim::schedule::{Itinerary, Snapshot, Timetable, TrainState, TrainType};
use railsim::training::{drift_weight, synth_label, ReplayBuffer};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn itinerary(id: &str, n: usize, start: i64, gap: i64) -> Arc<Itinerary> {
    let stops: Vec<(String, i64)> = (0..n)
        .map(|k| (format!("S{:02}", k + 1), start + gap * k as i64))
        .collect();
    Arc::new(Itinerary::new(id, TrainType::Regional, &stops).unwrap())
}

/// State after passing real stations `1..=pos` on schedule (`pos = 0` is the placeholder).
fn state_at(it: &Arc<Itinerary>, pos: usize) -> TrainState {
    let times: Vec<i64> = (1..=pos).map(|j| it.scheduled[j]).collect();
    TrainState::from_actuals(it.clone(), &times).unwrap()
}

fn gradient_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..20 {
        let mut p = MlpPolicy::new(20, &[8], Head::Softmax3, &mut rng);
        for b in p.params_mut() {
            *b += rng.random_range(-0.1..0.1);
        }
        let n = rng.random_range(1..=8);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<Action> = (0..n).map(|_| Action::ALL[rng.random_range(0..3)]).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let batch: Vec<Sample> = (0..n)
            .map(|i| Sample {
                features: &xs[i],
                target: Target::Action(labels[i]),
                weight: weights[i],
            })
            .collect();
        let (_, grad) = p.loss_and_gradient(&batch).unwrap();
        for k in 0..grad.len() {
            let mut plus = p.clone();
            plus.params_mut()[k] += h;
            let mut minus = p.clone();
            minus.params_mut()[k] -= h;
            let numeric = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * h);
            let denom = grad[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[k] - numeric).abs() / denom);
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 10.0,
        format!("{checked} partials, max relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn drift_label_oracle() -> Verdict {
    let mut cases = 0;
    let mut mismatches = 0;
    for m in 2..=10 {
        let it = itinerary("t", m, 10_000, 300);
        let last = it.final_index();
        for expert in 0..=last {
            for policy in 0..=last {
                let (a, _) = synth_label(&state_at(&it, expert), &state_at(&it, policy), 0.5, 1.0).unwrap();
                let rule = match expert as i64 - policy as i64 {
                    d if d <= 0 => 0,
                    1 => 1,
                    _ => 2,
                };
                cases += 1;
                if a.value() != rule {
                    mismatches += 1;
                }
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("{cases} position pairs, {mismatches} mismatches"),
    )
}

fn weight_suite() -> Verdict {
    let zero = drift_weight(0, 0.5, 1.0) == 1.0 && drift_weight(0, 3.0, 2.5) == 1.0;
    let mut monotone = true;
    for (alpha, beta) in [(0.5, 1.0), (0.5, 2.0), (2.0, 1.5), (0.1, 3.0)] {
        for psi in 0..50 {
            monotone &= drift_weight(psi + 1, alpha, beta) < drift_weight(psi, alpha, beta);
        }
    }
    let spot = drift_weight(2, 0.5, 2.0);
    let spot_ok = (spot - 1.0 / 3.0).abs() < 1e-12;
    verdict(
        zero && monotone && spot_ok,
        format!("w(0)=1 {zero}, strictly decreasing {monotone}, w(2; 0.5, 2)={spot:.15}"),
    )
}

fn dynamics_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tt = Timetable::default();
    let mut violations = 0;
    let mut cases = 0;
    while cases < 1000 {
        let n_trains = rng.random_range(1..=5);
        let clock = 100_000;
        let mut trains = Vec::new();
        for t in 0..n_trains {
            let m = rng.random_range(4..=12);
            let it = itinerary(&format!("t{t}"), m, clock - 600, 120);
            // away from clipping: at least two stations left before the final slot
            let pos = rng.random_range(0..=it.final_index() - 2);
            let mut s = state_at(&it, pos);
            if pos > 0 {
                let times: Vec<i64> = (1..=pos).map(|j| it.scheduled[j].min(clock)).collect();
                s = TrainState::from_actuals(it.clone(), &times).unwrap();
            }
            trains.push(s);
        }
        let snap = Snapshot::new(clock, trains).unwrap();
        let draw = |rng: &mut ChaCha8Rng| {
            JointAction(
                snap.trains
                    .iter()
                    .map(|t| (t.train_id().clone(), Action::ALL[rng.random_range(0..3)]))
                    .collect(),
            )
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let na = step_snapshot(&snap, &a, &tt).unwrap();
        // determinism
        if step_snapshot(&snap, &a, &tt).unwrap() != na {
            violations += 1;
        }
        // clock monotonicity and per-train time ordering
        if na.clock != snap.clock + STEP_SECS {
            violations += 1;
        }
        for t in &na.trains {
            if t.actual_times().windows(2).any(|w| w[1] < w[0]) || t.last_actual_time() > na.clock {
                violations += 1;
            }
        }
        // injectivity in the joint action
        let nb = step_snapshot(&snap, &b, &tt).unwrap();
        if (a != b) == (na == nb) {
            violations += 1;
        }
        // clipping at the itinerary end
        let it = itinerary("end", rng.random_range(2..=8), 0, 100);
        let last = it.final_index();
        for (pos, act) in [(last, Action::TWO), (last, Action::ONE), (last - 1, Action::TWO)] {
            if apply_action(&state_at(&it, pos), act, 10_000).position_index() != last {
                violations += 1;
            }
        }
        cases += 1;
    }
    verdict(violations == 0, format!("{cases} cases, {violations} violations"))
}

fn replay_buffer_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..10_000 {
        let cap = rng.random_range(1..=64);
        let pushes = rng.random_range(0..=4 * cap);
        let mut buf = ReplayBuffer::new(cap);
        for tag in 0..pushes {
            let evicted = buf.push(tag);
            let expected = (tag >= cap).then(|| tag - cap);
            if evicted != expected || buf.len() > cap {
                violations += 1;
            }
        }
        let kept: Vec<usize> = buf.iter().copied().collect();
        let expected: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
        if kept != expected {
            violations += 1;
        }
    }
    verdict(violations == 0, format!("10000 push patterns, {violations} violations"))
}

fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> RailNetwork {
    let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = std::collections::BTreeSet::new();
    for k in 1..n {
        let j = order[rng.random_range(0..k)];
        let (a, b) = (order[k].min(j), order[k].max(j));
        edges.insert((a, b));
    }
    for _ in 0..rng.random_range(0..=n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<(String, String)> = edges
        .into_iter()
        .map(|(a, b)| (names[a].clone(), names[b].clone()))
        .collect();
    let mut net = RailNetwork::build(&names, &edges, &[("all".to_string(), names.clone())]).unwrap();
    net.spectral_embedding(8).unwrap();
    net
}

fn spectral_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut residual, mut ortho, mut norm_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let n = rng.random_range(5..=60);
        let net = random_connected_graph(&mut rng, n);
        let l = net.normalized_laplacian();
        let pairs = net.nontrivial_eigenpairs(8).unwrap();
        for (lambda, v) in &pairs {
            let lv = l.mul_vec(v);
            for i in 0..n {
                residual = residual.max((lv[i] - lambda * v[i]).abs());
            }
        }
        for a in 0..pairs.len() {
            for b in a + 1..pairs.len() {
                let dot: f64 = pairs[a].1.iter().zip(&pairs[b].1).map(|(x, y)| x * y).sum();
                ortho = ortho.max(dot.abs());
            }
        }
        for i in 0..n {
            let row = net.station_embedding(i).unwrap();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norm_err = norm_err.max((norm - 1.0).abs());
        }
    }
    let k3 = RailNetwork::build(
        &["a", "b", "c"],
        &[("a", "b"), ("b", "c"), ("a", "c")],
        &[("l", vec!["a", "b", "c"])],
    )
    .unwrap();
    let eig = jacobi_eigen(&k3.normalized_laplacian(), JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).unwrap();
    let k3_err = eig
        .values
        .iter()
        .zip([0.0, 1.5, 1.5])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    verdict(
        residual < 1e-8 && ortho < 1e-8 && norm_err < 1e-12 && k3_err < 1e-10,
        format!(
            "residual {residual:.1e}, orthogonality {ortho:.1e}, row norm {norm_err:.1e}, K3 {:?}",
            eig.values
        ),
    )
}

fn forecast_mechanics() -> Verdict {
    let net = desk_network();
    let norm = NormalizationStats::default();
    let tt = Timetable::default();
    let env = Environment {
        network: &net,
        norm: &norm,
        timetable: &tt,
    };
    let reference = 10_000;
    let one_train = |gaps: &[i64]| {
        let mut t = reference - 60;
        let mut stops = vec![("S01".to_string(), t)];
        for (k, g) in gaps.iter().enumerate() {
            t += g;
            stops.push((format!("S{:02}", k + 2), t));
        }
        let it = Arc::new(Itinerary::new("a", TrainType::Regional, &stops).unwrap());
        Snapshot::new(
            reference,
            vec![TrainState::from_actuals(it, &[reference - 60]).unwrap()],
        )
        .unwrap()
    };
    let cfg = ForecastConfig::default();
    let det = monte_carlo_forecast(
        &ConstantModel([0.0, 1.0, 0.0]),
        &env,
        &one_train(&[600; 11]),
        &cfg,
        9,
        0,
    )
    .unwrap();
    let identical = det.n_trajectories == 50
        && det.trains[0]
            .arrivals
            .iter()
            .all(|row| row.iter().all(|a| *a == row[0]));
    let steps_ok = rollout_steps(1800, 30) == 66 && det.steps == 66;
    let mut stalled = monte_carlo_forecast(
        &ConstantModel([1.0, 0.0, 0.0]),
        &env,
        &one_train(&[660, 300]),
        &cfg,
        9,
        0,
    )
    .unwrap();
    stalled.extract_delays();
    let cf = stalled.trains[0].scheduled(0) == reference + 600
        && stalled.last_clock == reference + 1980
        && stalled.trains[0].delays[0].iter().all(|&d| d == 1380);
    verdict(
        identical && steps_ok && cf,
        format!("identical rollouts {identical}, 66 steps {steps_ok}, stalled copy-forward 1380 {cf}"),
    )
}

fn calibration_self_test() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let events = 10_000;
    let mut cells: Vec<(Vec<f64>, f64)> = Vec::with_capacity(events);
    for _ in 0..events {
        // each event has its own delay distribution: a shifted lognormal or a normal
        let draw: Box<dyn Fn(&mut ChaCha8Rng) -> f64> = if rng.random_bool(0.5) {
            let d = LogNormal::new(rng.random_range(2.0..5.0), rng.random_range(0.2..1.0)).unwrap();
            let shift = rng.random_range(-60.0..60.0);
            Box::new(move |r| shift + d.sample(r))
        } else {
            let d = Normal::new(rng.random_range(-100.0..300.0), rng.random_range(5.0..120.0)).unwrap();
            Box::new(move |r| d.sample(r))
        };
        let samples: Vec<f64> = (0..50).map(|_| draw(&mut rng)).collect();
        let observed = draw(&mut rng);
        cells.push((samples, observed));
    }
    let refs: Vec<(&[f64], f64)> = cells.iter().map(|(s, o)| (s.as_slice(), *o)).collect();
    let curve = calibration_curve(&refs, &DEFAULT_LEVELS).unwrap();
    let worst = curve.iter().map(|(p, c)| (p - c).abs()).fold(0.0, f64::max);
    let monotone = curve.windows(2).all(|w| w[1].1 >= w[0].1);
    let shown: Vec<String> = curve.iter().map(|(p, c)| format!("{p:.1}:{c:.3}")).collect();
    verdict(
        worst <= 0.05 && monotone,
        format!(
            "{events} events, max |coverage - nominal| {worst:.3}, monotone {monotone} [{}]",
            shown.join(" ")
        ),
    )
}

fn desk_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.conf");
    RunConfig::load(&path).expect("configs/desk.conf")
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

fn desk_ordering() -> Verdict {
    let started = Instant::now();
    let base = desk_config();
    let seeds = 5;
    let mut per_method: BTreeMap<Method, [Vec<f64>; 3]> = BTreeMap::new();
    for s in 0..seeds {
        let mut cfg = base.clone();
        cfg.run.seed = s;
        let result = run_experiment(&cfg).expect("desk experiment");
        for (m, r) in result.methods {
            let e = per_method.entry(m).or_default();
            e[0].push(r.report.mae);
            e[1].push(r.report.mae_by_bin[0].unwrap_or(f64::NAN));
            e[2].push(r.report.mae_over_bins(3, 5).unwrap_or(f64::NAN));
        }
    }
    let med = |m: Method, k: usize| median(per_method[&m][k].clone());
    let (reg, bc, dcil) = (Method::Regression, Method::Bc, Method::Dcil);
    let a = med(bc, 1) < med(reg, 1);
    let b = med(dcil, 2) <= med(bc, 2);
    let c = med(dcil, 0) <= med(reg, 0);
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let within = minutes <= 30.0;
    verdict(
        a && b && c && within,
        format!(
            "{seeds} seeds, {minutes:.1} min | (a) 0-5 min BC {:.1} vs regression {:.1}: {} | \
             (b) 15-30 min DCIL {:.1} vs BC {:.1}: {} | (c) overall DCIL {:.1} vs regression {:.1}: {}",
            med(bc, 1),
            med(reg, 1),
            pass_word(a),
            med(dcil, 2),
            med(bc, 2),
            pass_word(b),
            med(dcil, 0),
            med(reg, 0),
            pass_word(c),
        ),
    )
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Runs gen-data, the three trainers, evaluate and calibrate into `dir`.
fn pipeline(dir: &Path, conf: &Path) -> Vec<PathBuf> {
    let d = dir.join("data");
    let r = dir.join("run");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let base = vec!["railsim".to_string(), "--config".into(), s(conf)];
    let go = |extra: &[String]| {
        let mut args = base.clone();
        args.extend_from_slice(extra);
        cli::run(args).unwrap_or_else(|e| panic!("{extra:?}: {e}"));
    };
    let v = |items: &[&str]| items.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    go(&v(&["gen-data", "--out", &s(&d)]));
    let train = s(&d.join("train.csv"));
    let val = s(&d.join("validation.csv"));
    let test = s(&d.join("test.csv"));
    go(&v(&[
        "train",
        "--method",
        "regression",
        "--data",
        &train,
        "--validation",
        &val,
        "--out",
        &s(&r),
    ]));
    go(&v(&[
        "train",
        "--method",
        "bc",
        "--data",
        &train,
        "--validation",
        &val,
        "--out",
        &s(&r),
    ]));
    let bc_ckpt = s(&r.join("bc.ckpt"));
    go(&v(&[
        "train",
        "--method",
        "dcil",
        "--demos",
        &train,
        "--validation",
        &val,
        "--init",
        &bc_ckpt,
        "--out",
        &s(&r),
    ]));
    for m in ["regression", "bc", "dcil"] {
        let ckpt = s(&r.join(format!("{m}.ckpt")));
        go(&v(&[
            "evaluate",
            "--checkpoint",
            &ckpt,
            "--test",
            &test,
            "--out",
            &s(&r),
        ]));
        if m != "regression" {
            go(&v(&[
                "calibrate",
                "--checkpoint",
                &ckpt,
                "--test",
                &test,
                "--out",
                &s(&r),
            ]));
        }
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&r).unwrap().map(|e| e.unwrap().path()).collect();
    files.extend(std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()));
    files.sort();
    files
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("small.conf");
    std::fs::write(
        &conf,
        "run.seed=11\ndata.n_trains_per_day=16\ndata.train_days=3\ndata.val_days=1\ndata.test_days=1\n\
         model.hidden=16,16\nregression.epochs=3\nbc.epochs=3\ndcil.epochs=2\ndcil.samples_per_epoch=500\n\
         dcil.trajectories=40\nforecast.n_trajectories=10\nforecast.test_snapshots=4\n",
    )
    .unwrap();
    let a = pipeline(&tmp.path().join("a"), &conf);
    let b = pipeline(&tmp.path().join("b"), &conf);
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    let mut differing = Vec::new();
    for (x, y) in a.iter().zip(&b) {
        if std::fs::read(x).unwrap() != std::fs::read(y).unwrap() {
            differing.push(x.file_name().unwrap().to_string_lossy().to_string());
        }
    }
    let has = |suffix: &str| a.iter().filter(|p| p.to_string_lossy().ends_with(suffix)).count();
    let complete = has(".ckpt") == 3 && has(".report.txt") == 3 && has(".calibration.csv") == 2;
    verdict(
        names(&a) == names(&b) && differing.is_empty() && complete,
        format!(
            "{} files compared, differing {:?}, complete {complete}",
            a.len(),
            differing
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("gradient oracle", gradient_oracle),
        ("drift-label oracle", drift_label_oracle),
        ("drift weight suite", weight_suite),
        ("dynamics suite", dynamics_suite),
        ("replay buffer", replay_buffer_suite),
        ("spectral embedding", spectral_suite),
        ("forecast mechanics", forecast_mechanics),
        ("calibration self-test", calibration_self_test),
        ("desk-scale ordering", desk_ordering),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let v = run();
        println!(
            "{} criterion {id:>2} {name}: {} ({:.1}s)",
            pass_word(v.pass),
            v.detail,
            started.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
