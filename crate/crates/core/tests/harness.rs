mod common;

use approx::assert_relative_eq;
use ckm_core::cadm::{GeometricMap, TrainConfig};
use ckm_core::geometry::Point2;
use ckm_core::harness::{
    aggregate, emit_plots, generate_scene, read_crlb_csv, read_sweep_csv, render_plots,
    run_crlb_sweep, run_sweep, scenario_scene, train_maps, write_crlb_csv, write_sweep_csv,
    write_trial_csv, BoundKind, Method, ScenarioConfig, SweepContext, TrialRecord,
};
use ckm_core::sensing::LocalizerConfig;
use ckm_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_trials: 6,
        n_train: 300,
        sigma_theta_list: vec![0.1, 0.5],
        sigma_tau_list: vec![2e-9, 20e-9],
        master_seed: seed,
        train: TrainConfig {
            hidden: vec![16, 16],
            epochs: 2,
            ..Default::default()
        },
        localizer: LocalizerConfig {
            multistart_grid: (4, 4),
            scan_grid: (30, 30),
            scan_keep: 5,
            max_iters: 80,
            ..Default::default()
        },
        ..Default::default()
    }
}

struct Maps {
    env: ckm_core::geometry::Environment,
    los: GeometricMap,
    nlos: GeometricMap,
}

fn exact_maps(cfg: &ScenarioConfig) -> Maps {
    let (env, _) = scenario_scene(cfg).unwrap();
    Maps {
        los: GeometricMap::new(env.with_los_blocked(false), cfg.l_prime, 1e-4, 1e-18).unwrap(),
        nlos: GeometricMap::new(env.clone(), cfg.l_prime, 1e-4, 1e-18).unwrap(),
        env,
    }
}

impl Maps {
    fn ctx(&self) -> SweepContext<'_> {
        SweepContext {
            env: &self.env,
            los_map: Some(&self.los),
            nlos_map: Some(&self.nlos),
        }
    }
}

fn sweep_bytes(cfg: &ScenarioConfig, maps: &Maps) -> (Vec<u8>, Vec<u8>) {
    let out = run_sweep(cfg, &maps.ctx()).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_sweep_csv(&out.rows, &mut a).unwrap();
    write_trial_csv(&out.trials, &mut b).unwrap();
    (a, b)
}

#[test]
fn same_seed_same_bytes() {
    let cfg = quick_config(7);
    let maps = exact_maps(&cfg);
    let first = sweep_bytes(&cfg, &maps);
    assert_eq!(first, sweep_bytes(&cfg, &maps));

    let other = quick_config(8);
    let other_maps = exact_maps(&other);
    assert_ne!(first.0, sweep_bytes(&other, &other_maps).0);
}

#[test]
fn trained_pipeline_is_reproducible() {
    let cfg = ScenarioConfig {
        methods: vec![Method::CkmNlos, Method::CkmNlosConv],
        n_trials: 3,
        sigma_theta_list: vec![0.1],
        sigma_tau_list: vec![20e-9],
        ..quick_config(3)
    };
    let run = || {
        let (env, _) = scenario_scene(&cfg).unwrap();
        let maps = train_maps(&cfg, &env).unwrap();
        assert!(maps.los.is_none());
        let out = run_sweep(&cfg, &maps.context(&env)).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&out.rows, &mut buf).unwrap();
        buf
    };
    assert_eq!(run(), run());
}

#[test]
fn rows_agree_with_trial_logs() {
    let cfg = quick_config(11);
    let maps = exact_maps(&cfg);
    let out = run_sweep(&cfg, &maps.ctx()).unwrap();
    assert_eq!(out.rows.len(), cfg.noise_points().len() * cfg.methods.len());
    assert_eq!(out.trials.len(), out.rows.len() * cfg.n_trials);
    for row in &out.rows {
        let recs: Vec<&TrialRecord> = out
            .trials
            .iter()
            .filter(|t| t.method == row.method && t.sigma_theta == row.sigma_theta && t.sigma_tau == row.sigma_tau)
            .collect();
        assert_eq!(recs.len(), cfg.n_trials);
        // brute force from the logged estimates and targets
        let sq: Vec<f64> = recs
            .iter()
            .filter_map(|t| t.estimate.map(|e| e.distance_to(&t.target).powi(2)))
            .collect();
        let ok = sq.len();
        assert_eq!(row.failure_count + ok, row.n_trials);
        assert_eq!(row.n_trials, cfg.n_trials);
        if ok > 0 {
            let rmse = (sq.iter().sum::<f64>() / ok as f64).sqrt();
            assert_relative_eq!(row.rmse, rmse, max_relative = 1e-12);
        } else {
            assert!(row.rmse.is_nan());
        }
        assert!(row.rmse.is_nan() || row.rmse >= 0.0);
    }
}

#[test]
fn every_method_sees_the_same_targets() {
    let cfg = quick_config(12);
    let maps = exact_maps(&cfg);
    let out = run_sweep(&cfg, &maps.ctx()).unwrap();
    for i in 0..cfg.n_trials {
        let targets: Vec<Point2> = out.trials.iter().filter(|t| t.trial == i).map(|t| t.target).collect();
        assert!(targets.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn noiseless_geometry_los_is_exact() {
    let cfg = ScenarioConfig {
        methods: vec![Method::GeoLos],
        sigma_theta_list: vec![0.0],
        sigma_tau_list: vec![0.0],
        fixed_sigma_theta: 0.0,
        fixed_sigma_tau: 0.0,
        n_trials: 20,
        ..quick_config(5)
    };
    let (env, _) = scenario_scene(&cfg).unwrap();
    let ctx = SweepContext {
        env: &env,
        los_map: None,
        nlos_map: None,
    };
    let out = run_sweep(&cfg, &ctx).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert!(out.rows[0].rmse < 1e-6);
    assert_eq!(out.rows[0].failure_count, 0);
}

#[test]
fn ckm_methods_need_maps() {
    let cfg = quick_config(5);
    let (env, _) = scenario_scene(&cfg).unwrap();
    let ctx = SweepContext {
        env: &env,
        los_map: None,
        nlos_map: None,
    };
    assert!(matches!(run_sweep(&cfg, &ctx), Err(Error::InvalidConfig(_))));
}

#[test]
fn crlb_rows_and_superset_property() {
    let mut cfg = quick_config(21);
    cfg.crlb_mc_samples = 200;
    let maps = exact_maps(&cfg);
    let rows = run_crlb_sweep(&cfg, &maps.ctx()).unwrap();
    let pts = cfg.noise_points().len();
    // geo-los closed form + three CKM methods × (closed form, monte carlo)
    assert_eq!(rows.len(), pts * (1 + 3 * 2));
    assert!(rows.iter().all(|r| r.method != Method::GeoNlos));
    for p in cfg.noise_points() {
        let at = |m: Method| {
            rows.iter()
                .find(|r| r.method == m && r.bound == BoundKind::ClosedForm && r.sigma_theta == p.sigma_theta && r.sigma_tau == p.sigma_tau)
                .unwrap()
                .trace_crlb
        };
        assert!(at(Method::CkmNlos) <= at(Method::CkmNlosConv));
    }

    cfg.crlb_mc_samples = 0;
    let closed = run_crlb_sweep(&cfg, &maps.ctx()).unwrap();
    assert_eq!(closed.len(), pts * 4);

    let mut buf = Vec::new();
    write_crlb_csv(&rows, &mut buf).unwrap();
    let back = read_crlb_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.trace_crlb.to_bits(), b.trace_crlb.to_bits());
        assert_eq!((a.method, a.bound, a.singular), (b.method, b.bound, b.singular));
    }
}

#[test]
fn geometry_los_bound_at_100_m() {
    let cfg = ScenarioConfig {
        methods: vec![Method::GeoLos],
        sigma_theta_list: vec![0.1],
        sigma_tau_list: vec![20e-9],
        crlb_point: Some(Point2::new(50.0, 100.0)),
        ..quick_config(1)
    };
    let (env, _) = scenario_scene(&cfg).unwrap();
    let rows = run_crlb_sweep(&cfg, &SweepContext { env: &env, los_map: None, nlos_map: None }).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].trace_crlb - 108.98).abs() < 0.01);
}

#[test]
fn too_few_scatterers_is_a_config_error() {
    let cfg = ScenarioConfig {
        n_scatterers: 3,
        l_prime: 5,
        ..Default::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    assert!(generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn plots_are_pure_functions_of_the_csv() {
    let cfg = quick_config(2);
    let maps = exact_maps(&cfg);
    let (csv, _) = sweep_bytes(&cfg, &maps);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    std::fs::write(&path, &csv).unwrap();
    let a = emit_plots(&path, &dir.path().join("a")).unwrap();
    let b = emit_plots(&path, &dir.path().join("b")).unwrap();
    assert_eq!(a.len(), 2);
    for (p, q) in a.iter().zip(&b) {
        let (x, y) = (std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("<svg"));
        for m in &cfg.methods {
            assert!(text.contains(m.as_str()));
        }
    }
}

#[test]
fn malformed_csv_reports_line() {
    let header = "method,sigma_theta,sigma_tau,rmse,n_trials,mean_iters,failure_count\n";
    assert!(matches!(render_plots(header), Err(Error::NoData(_))));
    assert!(matches!(render_plots(""), Err(Error::NoData(_))));
    let bad = format!("{header}geo-los,0.1,2e-8,1.0,5,0,0\ngeo-los,0.3,oops,1.0,5,0,0\n");
    assert!(matches!(render_plots(&bad), Err(Error::Parse { line: 3, .. })));
    assert!(matches!(render_plots("a,b\n1,2\n"), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = quick_config(99);
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    assert!(ScenarioConfig::from_toml_str("no_such_key = 1").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_csv_round_trip_is_exact(
        vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1e-7, prop_oneof![Just(f64::NAN), Just(f64::INFINITY), 0.0f64..1e3], 1usize..500, 0usize..5), 1..20)
    ) {
        let rows: Vec<_> = vals
            .into_iter()
            .enumerate()
            .map(|(i, (st, su, rmse, n, fails))| ckm_core::harness::SweepRow {
                method: Method::ALL[i % 5],
                sigma_theta: st,
                sigma_tau: su,
                rmse,
                n_trials: n + fails,
                mean_iters: n as f64 / 3.0,
                failure_count: fails,
            })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let back = read_sweep_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            prop_assert_eq!(a.method, b.method);
            prop_assert_eq!(a.sigma_theta.to_bits(), b.sigma_theta.to_bits());
            prop_assert_eq!(a.sigma_tau.to_bits(), b.sigma_tau.to_bits());
            prop_assert!(a.rmse.to_bits() == b.rmse.to_bits() || (a.rmse.is_nan() && b.rmse.is_nan()));
            prop_assert_eq!(a.mean_iters.to_bits(), b.mean_iters.to_bits());
            prop_assert_eq!((a.n_trials, a.failure_count), (b.n_trials, b.failure_count));
        }
    }

    #[test]
    fn aggregate_counts_add_up(errs in prop::collection::vec(prop::option::of(0.0f64..50.0), 1..40)) {
        let recs: Vec<TrialRecord> = errs
            .iter()
            .enumerate()
            .map(|(i, e)| TrialRecord {
                method: Method::CkmNlos,
                sigma_theta: 0.1,
                sigma_tau: 2e-8,
                trial: i,
                target: Point2::new(0.0, 0.0),
                estimate: e.map(|d| Point2::new(d, 0.0)),
                error_m: *e,
                iterations: i,
                converged: true,
                neg_log_likelihood: None,
                failure: e.is_none().then(|| "x".to_string()),
            })
            .collect();
        let refs: Vec<&TrialRecord> = recs.iter().collect();
        let row = aggregate(&refs).unwrap();
        let ok: Vec<f64> = errs.iter().flatten().copied().collect();
        prop_assert_eq!(row.failure_count + ok.len(), row.n_trials);
        if ok.is_empty() {
            prop_assert!(row.rmse.is_nan());
        } else {
            let want = (ok.iter().map(|e| e * e).sum::<f64>() / ok.len() as f64).sqrt();
            prop_assert!((row.rmse - want).abs() <= 1e-12 * want.max(1.0));
        }
    }
}
