use std::collections::HashMap;

use alliance_core::contracts::{ContractCategory, ContractEventKind};
use alliance_core::gifting::{EpisodeLogRecord, GiftAction};
use alliance_core::rng::stream_rng;
use alliance_core::training::*;

fn table_and_params(scenario: &str, seed: u64) -> (TrainConfig, Table, Vec<Option<Vec<f64>>>) {
    let mut config = TrainConfig::for_scenario(scenario).unwrap();
    config.width = 16;
    let table = Table::from_config(&config).unwrap();
    let params = table.init_params(&mut stream_rng(seed, 1));
    (config, table, params)
}

fn rollouts(scenario: &str, mode: RolloutMode, seed: u64) -> (TrainConfig, Table, RolloutBatch) {
    let (config, table, params) = table_and_params(scenario, seed);
    let batch = collect_episodes(&table, &params, 200, mode, true, &mut stream_rng(seed, 0)).unwrap();
    (config, table, batch)
}

fn actions_by_turn(log: &EpisodeLog) -> Vec<(usize, GiftAction)> {
    log.steps
        .iter()
        .filter_map(|r| match r {
            EpisodeLogRecord::Step { player, action, .. } => Some((*player, *action)),
            EpisodeLogRecord::Terminal { .. } => None,
        })
        .collect()
}

/// Replays the contract events of one episode and checks that nobody holds
/// two contracts at once and that only free players make offers.
fn check_one_contract_at_a_time(log: &EpisodeLog, binding: bool) {
    let mut open: HashMap<usize, (Vec<usize>, usize)> = HashMap::new();
    for e in &log.contracts {
        match e.event {
            ContractEventKind::Offered | ContractEventKind::Forced => {
                assert!(!open.contains_key(&e.parties[0]), "offer from a player under contract: {e:?}");
            }
            ContractEventKind::Signed => {
                for p in &e.parties {
                    assert!(!open.contains_key(p), "player {p} signed twice: {log:?}");
                }
                for &p in &e.parties {
                    open.insert(p, (e.parties.clone(), 0));
                }
            }
            ContractEventKind::Fulfilled => {
                let p = e.parties[0];
                let (parties, _) = open.get(&p).cloned().expect("fulfilled an open contract");
                for q in &parties {
                    open.get_mut(q).unwrap().1 += 1;
                }
                if open[&p].1 == 2 {
                    for q in parties {
                        open.remove(&q);
                    }
                }
            }
            ContractEventKind::Broken => {
                assert!(!binding, "binding contracts cannot be broken");
                let (parties, _) = open.get(&e.parties[0]).cloned().expect("broke an open contract");
                for q in parties {
                    open.remove(&q);
                }
            }
            ContractEventKind::Penalized => {}
        }
    }
}

#[test]
fn binding_contracts_execute_the_promised_action() {
    for mode in [RolloutMode::Train, RolloutMode::Eval] {
        let (_, _, batch) = rollouts("contracts-3", mode, 3);
        let mut checked = 0;
        for episode in &batch.episodes {
            let log = episode.log.as_ref().unwrap();
            check_one_contract_at_a_time(log, true);
            assert!(episode.stats.penalties.iter().all(|&p| p == 0.0));
            let turns = actions_by_turn(log);
            for e in log.contracts.iter().filter(|e| e.event == ContractEventKind::Signed) {
                let promised_gift = match e.category.unwrap() {
                    ContractCategory::GiftGift => true,
                    ContractCategory::NoGiftNoGift => false,
                    ContractCategory::Mixed => continue,
                };
                for &p in &e.parties {
                    if let Some((_, action)) = turns[e.timestep..].iter().find(|(q, _)| *q == p) {
                        assert_eq!(action.is_gift(), promised_gift, "{e:?} in {log:?}");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0, "no contract was exercised");
    }
}

#[test]
fn two_plus_one_table_never_signs_with_the_disabled_player() {
    let (_, _, batch) = rollouts("contracts-2", RolloutMode::Train, 4);
    for episode in &batch.episodes {
        assert_eq!(episode.stats.contracts_signed_by(2), 0);
        let log = episode.log.as_ref().unwrap();
        assert!(log.contracts.iter().all(|e| !e.parties.contains(&2)));
    }
}

#[test]
fn penalties_are_all_or_nothing_and_land_in_one_timestep() {
    let (config, _, batch) = rollouts("punishment", RolloutMode::Train, 5);
    let mut penalized = 0;
    for episode in &batch.episodes {
        let log = episode.log.as_ref().unwrap();
        check_one_contract_at_a_time(log, false);
        let horizon = 15;
        let mut expected = vec![vec![0.0; horizon]; 3];
        for e in log.contracts.iter().filter(|e| e.event == ContractEventKind::Penalized) {
            let mut seen = e.parties.clone();
            seen.dedup();
            assert_eq!(seen.len(), e.parties.len());
            for &p in &e.parties {
                expected[p][e.timestep] += config.penalty;
                penalized += 1;
            }
        }
        for p in 0..3 {
            let signed = episode.stats.contracts_signed_by(p) as f64;
            let total = episode.stats.penalties[p];
            assert!(total <= 0.0 && total >= signed * config.penalty);
            assert_eq!(total, expected[p].iter().sum::<f64>());
            let trace = episode.traces[p].as_ref().unwrap();
            for t in 0..horizon {
                let payoff = if t + 1 == horizon { episode.stats.payoffs[p] } else { 0.0 };
                assert!((trace.rewards[t] - payoff - expected[p][t]).abs() < 1e-12);
            }
        }
    }
    assert!(penalized > 0, "no contract was ever broken");
}

#[test]
fn trembling_hand_only_in_training() {
    let (_, _, eval) = rollouts("punishment", RolloutMode::Eval, 6);
    assert!(eval.episodes.iter().all(|e| e.stats.forced_offers == 0));
    let (_, _, train) = rollouts("punishment", RolloutMode::Train, 6);
    assert!(train.episodes.iter().any(|e| e.stats.forced_offers > 0));
    let (_, _, binding) = rollouts("contracts-3", RolloutMode::Train, 6);
    assert!(binding.episodes.iter().all(|e| e.stats.forced_offers == 0));
}

#[test]
fn tables_without_contracts_sign_nothing() {
    for scenario in ["baseline", "copybot"] {
        let (_, _, batch) = rollouts(scenario, RolloutMode::Train, 7);
        for episode in &batch.episodes {
            assert_eq!(episode.stats.signed, [0, 0, 0]);
            assert!(episode.log.as_ref().unwrap().contracts.is_empty());
            for trace in episode.traces.iter().flatten() {
                assert!(trace.offers.iter().all(Option::is_none));
            }
        }
    }
}

#[test]
fn copy_bot_reciprocates_the_first_learner() {
    let (_, table, batch) = rollouts("copybot", RolloutMode::Eval, 8);
    assert!(!table.agents[1].is_learner());
    for episode in &batch.episodes {
        assert!(episode.traces[1].is_none());
        let turns = actions_by_turn(episode.log.as_ref().unwrap());
        let mut last_target = None;
        for (player, action) in turns {
            match player {
                0 => last_target = Some(action),
                1 => {
                    let expected = alliance_core::agents::copy_bot_act(last_target, 1, 0);
                    assert_eq!(action, expected);
                }
                _ => {}
            }
        }
    }
}
