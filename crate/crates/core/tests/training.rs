use alliance_core::rng::stream_rng;
use alliance_core::training::*;
use alliance_core::TrainingError;

fn tiny(scenario: &str) -> TrainConfig {
    let mut config = TrainConfig::for_scenario(scenario).unwrap();
    config.width = 8;
    config.updates = 4;
    config.episodes_per_update = 3;
    config.eval_every = 2;
    config.eval_episodes = 5;
    config.n_seeds = 2;
    config
}

#[test]
fn every_scenario_trains_for_a_few_updates() {
    for scenario in alliance_core::scenarios::SCENARIOS {
        let report = run_training(&tiny(scenario), None).unwrap();
        assert_eq!(report.runs.len(), 2);
        for run in &report.runs {
            assert_eq!(run.train_summary.len(), 4);
            assert_eq!(run.eval_summary.len(), 2);
            let finals = run.final_eval();
            assert_eq!(finals.len(), 3);
            let total: f64 = finals.iter().map(|r| r.mean_reward).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert_eq!(run.final_eval_logs.len(), 5);
        }
    }
}

#[test]
fn discard_and_gift_rates_partition_every_window() {
    let report = run_training(&tiny("punishment"), None).unwrap();
    for row in report.runs.iter().flat_map(|r| r.train.iter().chain(&r.eval)) {
        assert!((row.discard_rate + row.gift_rate - 1.0).abs() < 1e-12, "{row:?}");
    }
}

#[test]
fn single_threaded_training_is_bit_reproducible() {
    let mut config = tiny("contracts-3");
    config.single_thread = true;
    let a = run_training(&config, None).unwrap();
    let b = run_training(&config, None).unwrap();
    assert_eq!(a, b);
    config.single_thread = false;
    let c = run_training(&config, None).unwrap();
    assert_eq!(a.runs, c.runs);
    config.seed = 1;
    let d = run_training(&config, None).unwrap();
    assert_ne!(a.runs[0].params, d.runs[0].params);
    assert_eq!(a.runs[1].params, d.runs[0].params);
}

#[test]
fn outputs_and_checkpoint_round_trip() {
    let dir = std::env::temp_dir().join(format!("alliance-core-train-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let config = tiny("contracts-2");
    let report = run_training(&config, Some(&dir)).unwrap();
    for seed in 0..2 {
        let metrics = std::fs::read_to_string(dir.join(format!("metrics_seed{seed}.csv"))).unwrap();
        assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(metrics.lines().count(), 1 + 4 * 3);
        assert!(dir.join(format!("contract_events_seed{seed}.jsonl")).exists());
    }
    let text = std::fs::read_to_string(dir.join("checkpoint_seed1.json")).unwrap();
    let (loaded_config, table, params) = load_checkpoint(&text).unwrap();
    assert_eq!(loaded_config.scenario, "contracts-2");
    assert_eq!(params, report.runs[1].params);
    let (rows, _, _) = evaluate(&table, &params, 5, 1).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(matches!(load_checkpoint("{}"), Err(_)));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut config = tiny("baseline");
    config.learning_rate = -1.0;
    assert!(matches!(config.validate(), Err(TrainingError::InvalidConfig(_))));
    let mut config = tiny("baseline");
    config.scenario = "chess".into();
    assert!(run_training(&config, None).is_err());
    let table = Table::from_config(&tiny("baseline")).unwrap();
    let params = table.init_params(&mut stream_rng(0, 1));
    assert!(collect_episodes(&table, &params[..2], 1, RolloutMode::Eval, false, &mut stream_rng(0, 0)).is_err());
}

#[test]
fn regression_recovers_a_planted_slope() {
    let mut rng = stream_rng(9, 0);
    use rand::Rng;
    let x: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..5.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + rng.gen_range(-0.5..0.5)).collect();
    let fit = ols(&x, &y).unwrap();
    assert!((fit.slope - 2.0).abs() < 0.05);
    assert!(fit.p_value < 0.01);
    assert!(matches!(ols(&[1.0; 10], &y[..10]), Err(TrainingError::DegenerateRegression(_))));
}

#[test]
fn regression_report_has_one_record_per_player_and_episode() {
    let config = tiny("contracts-3");
    let table = Table::from_config(&config).unwrap();
    let params = table.init_params(&mut stream_rng(0, 1));
    let report = regression_report(&table, &params, 50, 0).unwrap();
    assert_eq!(report.records.len(), 150);
    assert_eq!(report.fit.n, 150);
}
