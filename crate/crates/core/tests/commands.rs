use std::path::Path;

use evoroute::commands::{self, PolicySpec, RunConfig, SweepAxis};
use evoroute::neural::NetworkShape;
use evoroute::trace::read_workload_file;
use evoroute::{EvoConfig, PolicyGenome, SimulationConfig, WorkloadConfig};

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn generate_defaults_writes_about_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let reqs = commands::generate(&cfg, dir.path()).unwrap();
    // Poisson total with mean 1800 and sd ~42.
    assert!((1590..=2010).contains(&reqs.len()), "{}", reqs.len());
    assert_eq!(
        read_workload_file(&dir.path().join("workload.csv")).unwrap(),
        reqs
    );
    let snapshot: RunConfig = serde_json::from_str(&read(&dir.path().join("config.json"))).unwrap();
    assert_eq!(snapshot, cfg);
}

#[test]
fn generate_zero_rate_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        workload: WorkloadConfig {
            mean_req_num: 0.0,
            ..WorkloadConfig::default()
        },
        ..RunConfig::default()
    };
    assert!(commands::generate(&cfg, dir.path()).unwrap().is_empty());
    assert_eq!(read(&dir.path().join("workload.csv")).lines().count(), 1);
}

#[test]
fn evaluate_least_connection_fifty_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        n_seeds: Some(50),
        ..RunConfig::default()
    };
    let report =
        commands::evaluate(&cfg, &PolicySpec::LeastConnection, None, dir.path(), 4).unwrap();
    assert_eq!(report.seeds.len(), 50);
    assert!(report.std_defined);
    assert!(report.f_balance.std > 0.0);
    let ts = read(&dir.path().join("timeseries.csv"));
    assert!(ts.starts_with("t,server,cpu,ram,hdd,bw,conn_count,max_remaining_true"));
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn evaluate_zero_genome_and_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        n_seeds: Some(1),
        workload: WorkloadConfig {
            data_time: 30,
            ..WorkloadConfig::default()
        },
        ..RunConfig::default()
    };
    let path = dir.path().join("zeros.json");
    PolicyGenome::<f64>::zeros(NetworkShape::for_config(&cfg.sim, 32))
        .save(&path)
        .unwrap();
    let spec = PolicySpec::parse(&format!("neural:{}", path.display())).unwrap();
    let report = commands::evaluate(&cfg, &spec, None, &dir.path().join("out"), 1).unwrap();
    assert_eq!(report.f_balance.std, 0.0);
    assert!(!report.std_defined);
    assert!(report.seeds[0].f_idle.is_finite());
}

#[test]
fn evaluate_on_a_workload_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        n_seeds: Some(3),
        workload: WorkloadConfig {
            data_time: 20,
            ..WorkloadConfig::default()
        },
        ..RunConfig::default()
    };
    commands::generate(&cfg, dir.path()).unwrap();
    let report = commands::evaluate(
        &cfg,
        &PolicySpec::Random,
        Some(&dir.path().join("workload.csv")),
        &dir.path().join("eval"),
        2,
    )
    .unwrap();
    assert_eq!(report.seeds.len(), 3);
    // Same requests, different random routing.
    assert_ne!(report.seeds[0].f_balance, report.seeds[1].f_balance);
}

#[test]
fn train_twice_gives_identical_convergence() {
    let cfg = RunConfig {
        workload: WorkloadConfig {
            data_time: 15,
            mean_req_num: 1.0,
            ..WorkloadConfig::default()
        },
        sim: SimulationConfig {
            server_num: 3,
            ..SimulationConfig::default()
        },
        evo: EvoConfig {
            pop_size: 6,
            elite_count: 3,
            offspring_count: 3,
            max_generations: Some(4),
            ..EvoConfig::default()
        },
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    commands::train_command(&cfg, &dir.path().join("a"), 1).unwrap();
    commands::train_command(&cfg, &dir.path().join("b"), 3).unwrap();
    let a = read(&dir.path().join("a/convergence.csv"));
    assert_eq!(a, read(&dir.path().join("b/convergence.csv")));
    assert_eq!(a.lines().count(), 5);
    let front: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("a/final_front.json"))).unwrap();
    assert!(!front["front"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_servers_cell_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        n_seeds: Some(2),
        ..RunConfig::default()
    };
    let (rows, errors) = commands::sweep(
        &cfg,
        SweepAxis::Servers,
        &[10.0, 20.0],
        &[PolicySpec::LeastConnection],
        dir.path(),
        2,
    )
    .unwrap();
    assert!(errors.is_empty());
    assert_eq!(rows.len(), 4);
    let csv = read(&dir.path().join("sweep.csv"));
    assert_eq!(
        csv.lines().next(),
        Some("axis,value,policy,seed,f_balance,f_idle")
    );
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn sweep_records_bad_values_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        n_seeds: Some(1),
        workload: WorkloadConfig {
            data_time: 10,
            ..WorkloadConfig::default()
        },
        ..RunConfig::default()
    };
    let (rows, errors) = commands::sweep(
        &cfg,
        SweepAxis::Sigma,
        &[-1.0, 5.0],
        &[PolicySpec::RoundRobin],
        dir.path(),
        1,
    )
    .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].value, -1.0);
    let saved: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("sweep_errors.json"))).unwrap();
    assert_eq!(saved.as_array().unwrap().len(), 1);
}

fn mean_by_value(rows: &[commands::SweepRow], value: f64) -> (f64, f64) {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.value == value)
        .map(|r| r.f_idle)
        .collect();
    let m = commands::MeanStd::of(&xs);
    (m.mean, m.std)
}

#[test]
fn least_duration_gap_idle_improves_as_sigma_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        n_seeds: Some(10),
        workload: WorkloadConfig {
            data_time: 48,
            mean_req_num: 2.5,
            ..WorkloadConfig::default()
        },
        ..RunConfig::default()
    };
    let sigmas = [0.0, 10.0, 20.0, 30.0];
    let (rows, _) = commands::sweep(
        &cfg,
        SweepAxis::Sigma,
        &sigmas,
        &[PolicySpec::LeastDurationGap],
        dir.path(),
        4,
    )
    .unwrap();
    for w in sigmas.windows(2) {
        let (lo, lo_sd) = mean_by_value(&rows, w[0]);
        let (hi, hi_sd) = mean_by_value(&rows, w[1]);
        assert!(
            lo <= hi + lo_sd.max(hi_sd),
            "sigma {} -> {}: {lo} vs {hi}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn round_robin_balance_holds_up_with_more_servers_at_fixed_load() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig {
        n_seeds: Some(3),
        ..RunConfig::default()
    };
    let at_75 = SweepAxis::Load.apply(&base, 0.75).unwrap();
    let (rows, errors) = commands::sweep(
        &at_75,
        SweepAxis::Servers,
        &[10.0, 50.0],
        &[PolicySpec::RoundRobin],
        dir.path(),
        4,
    )
    .unwrap();
    assert!(errors.is_empty());
    let mean = |v: f64| {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r.value == v)
            .map(|r| r.f_balance)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let (small, large) = (mean(10.0), mean(50.0));
    assert!((large - small).abs() / small < 0.5, "{small} vs {large}");
}

#[test]
fn ingest_writes_config_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    std::fs::write(&trace, "t,c,r,h,b,d\n0,1,2,3,4,10\n5,1,1,1,1,-2\n").unwrap();
    let mapping = dir.path().join("mapping.json");
    std::fs::write(
        &mapping,
        r#"{"arrival":"t","cpu":"c","ram":"r","hdd":"h","bw":"b","duration":"d"}"#,
    )
    .unwrap();
    let cfg = RunConfig::default();
    let report = commands::ingest(&cfg, &trace, Some(&mapping), &dir.path().join("out")).unwrap();
    assert_eq!(
        (report.rows_read, report.rows_kept, report.rows_skipped),
        (2, 1, 1)
    );
    assert!(dir.path().join("out/config.json").exists());
}
