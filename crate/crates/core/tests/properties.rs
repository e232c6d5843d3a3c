use std::sync::OnceLock;

use proptest::prelude::*;

use railsim::config::RunConfig;
use railsim::data::{temporal_split, OperationalLog, SnapshotDataset};
use railsim::experiment::{embedded_desk_network, generate_log};
use railsim::forecast::point_forecast;
use railsim::metrics::{calibration_curve, evaluate, percentile, PredictionRecord, DEFAULT_LEVELS};

fn shared_log() -> &'static OperationalLog {
    static LOG: OnceLock<OperationalLog> = OnceLock::new();
    LOG.get_or_init(|| {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            "data.n_trains_per_day=10",
            "data.train_days=3",
            "data.val_days=1",
            "data.test_days=1",
        ])
        .unwrap();
        generate_log(&cfg, &embedded_desk_network().unwrap()).unwrap()
    })
}

fn record(predicted: f64, observed: f64, lead: i64) -> PredictionRecord {
    PredictionRecord {
        train_id: "t".into(),
        station_index: 1,
        predicted,
        observed,
        observed_arrival: 1_000 + lead,
        reference_clock: 1_000,
        samples: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_without_leakage(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let log = shared_log();
        let (lo, hi) = log.departure_range().unwrap();
        let at = |f: f64| lo + ((hi - lo) as f64 * f) as i64;
        let (train_end, val_end) = (at(a.min(b)), at(a.max(b)));
        let s = temporal_split(log, train_end, val_end).unwrap();
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), log.len());
        let dep = |l: &OperationalLog| l.trains.iter().map(|t| t.itinerary.scheduled_departure()).collect::<Vec<_>>();
        prop_assert!(dep(&s.train).iter().all(|&d| d < train_end));
        prop_assert!(dep(&s.validation).iter().all(|&d| (train_end..val_end).contains(&d)));
        prop_assert!(dep(&s.test).iter().all(|&d| d >= val_end));
    }

    #[test]
    fn grid_is_aligned_and_sorted(dt in prop::sample::select(vec![15i64, 30, 60, 300])) {
        let g = SnapshotDataset::grid(shared_log(), dt);
        prop_assert!(!g.is_empty());
        prop_assert!(g.iter().all(|c| c.rem_euclid(dt) == 0));
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn median_ignores_sample_order(mut v in prop::collection::vec(-1e4f64..1e4, 1..80), seed in any::<u64>()) {
        let m = point_forecast(&v).unwrap();
        let n = v.len();
        for i in 0..n {
            v.swap(i, (seed.wrapping_mul(i as u64 + 7) % n as u64) as usize);
        }
        prop_assert_eq!(point_forecast(&v).unwrap(), m);
        let below = v.iter().filter(|&&x| x < m).count();
        let above = v.iter().filter(|&&x| x > m).count();
        prop_assert!(below <= n / 2 && above <= n / 2);
    }

    #[test]
    fn percentile_matches_rank_interpolation(mut v in prop::collection::vec(-1e3f64..1e3, 1..50), q in 0.0f64..=1.0) {
        v.sort_by(f64::total_cmp);
        let p = percentile(&v, q);
        // an order statistic interpolation: between the floor and ceil ranks of q (n - 1)
        let r = q * (v.len() - 1) as f64;
        let (lo, hi) = (v[r.floor() as usize], v[r.ceil() as usize]);
        prop_assert!(p >= lo - 1e-9 && p <= hi + 1e-9);
        prop_assert!(p >= v[0] && p <= v[v.len() - 1]);
    }

    #[test]
    fn rmse_dominates_mae(rows in prop::collection::vec((-600.0f64..600.0, -600.0f64..600.0, 1i64..1800), 1..60)) {
        let records: Vec<PredictionRecord> = rows.iter().map(|&(p, o, l)| record(p, o, l)).collect();
        let r = evaluate(&records, 1800).unwrap();
        prop_assert!(r.rmse + 1e-9 >= r.mae);
        let mae = rows.iter().map(|(p, o, _)| (p - o).abs()).sum::<f64>() / rows.len() as f64;
        prop_assert!((r.mae - mae).abs() < 1e-9);
        prop_assert_eq!(r.count_by_bin.iter().sum::<usize>(), rows.len());
    }

    #[test]
    fn coverage_is_monotone_in_level(
        cells in prop::collection::vec((prop::collection::vec(-300.0f64..300.0, 2..30), -400.0f64..400.0), 1..40)
    ) {
        let refs: Vec<(&[f64], f64)> = cells.iter().map(|(s, o)| (s.as_slice(), *o)).collect();
        let curve = calibration_curve(&refs, &DEFAULT_LEVELS).unwrap();
        prop_assert_eq!(curve.len(), DEFAULT_LEVELS.len());
        prop_assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
        prop_assert!(curve.iter().all(|&(_, c)| (0.0..=1.0).contains(&c)));
    }
}
