//! Advantage actor-critic training on Gifting: rollouts with the contract
//! channel, Monte-Carlo returns, the combined policy/value/contract loss,
//! RMSProp, multi-seed runs, evaluation and the chips-vs-contracts
//! regression.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agents::{scripted_policy, AgentSpec, AgentView, ScriptedPolicy};
use crate::contracts::{
    contract_observation, contract_phase, enforcement, trembling_hand_directive, ContractBook, ContractCategory,
    ContractConfig, ContractEvent, ContractEventKind, ContractOffer, Enforcement, OfferAlphabet, Settlement,
};
use crate::error::TrainingError;
use crate::gifting::{EpisodeLogRecord, GiftAction, GiftingConfig, GiftingState};
use crate::nn::{masked_softmax, Checkpoint, Network, NetworkSpec, OfferFloor, OutputGrad};
use crate::rng::stream_rng;
use crate::scenarios::scenario;

const TRAIN_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const EVAL_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scenario: String,
    pub gamma: f64,
    pub learning_rate: f64,
    pub env_entropy: f64,
    pub contract_entropy: f64,
    /// Weight of the contract loss relative to the environment loss.
    pub contract_weight: f64,
    pub value_coef: f64,
    pub episodes_per_update: usize,
    pub updates: usize,
    /// Runs use seeds `seed, seed + 1, ..., seed + n_seeds - 1`.
    pub seed: u64,
    pub n_seeds: usize,
    /// Width of both dense layers and the recurrent cell.
    pub width: usize,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub rms_momentum: f64,
    /// Evaluate every this many updates (and after the last one).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub n_players: usize,
    pub m_chips: u32,
    pub observe_discards: bool,
    pub deadline_steps: usize,
    pub penalty: f64,
    pub tremble_prob: f64,
    pub single_thread: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scenario: "baseline".into(),
            gamma: 0.99,
            learning_rate: 0.000763,
            env_entropy: 0.001443,
            contract_entropy: 0.0,
            contract_weight: 0.0,
            value_coef: 0.5,
            episodes_per_update: 16,
            updates: 2000,
            seed: 0,
            n_seeds: 10,
            width: 128,
            rms_decay: 0.99,
            rms_epsilon: 0.001,
            rms_momentum: 0.0,
            eval_every: 50,
            eval_episodes: 32,
            n_players: 3,
            m_chips: 5,
            observe_discards: true,
            deadline_steps: 6,
            penalty: -1.0,
            tremble_prob: 0.5,
            single_thread: false,
        }
    }
}

impl TrainConfig {
    /// Defaults with the named scenario's hyperparameters applied.
    pub fn for_scenario(name: &str) -> Result<Self, TrainingError> {
        let s = scenario(name)?;
        let mut config = Self {
            scenario: s.name().to_string(),
            ..Self::default()
        };
        s.apply_defaults(&mut config);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |msg: String| Err(TrainingError::InvalidConfig(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma = {} is outside (0, 1]", self.gamma));
        }
        for (name, v) in [
            ("env_entropy", self.env_entropy),
            ("contract_entropy", self.contract_entropy),
            ("contract_weight", self.contract_weight),
            ("value_coef", self.value_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.rms_decay) || self.rms_epsilon <= 0.0 || !(0.0..1.0).contains(&self.rms_momentum) {
            return fail("RMSProp needs decay and momentum in [0, 1) and a positive epsilon".into());
        }
        if self.episodes_per_update == 0 || self.n_seeds == 0 || self.width == 0 || self.eval_every == 0 {
            return fail("episodes_per_update, n_seeds, width and eval_every must be positive".into());
        }
        self.gifting().validate()?;
        scenario(&self.scenario)?;
        Ok(())
    }

    pub fn gifting(&self) -> GiftingConfig {
        GiftingConfig {
            n_players: self.n_players,
            m_chips: self.m_chips,
            observe_discards: self.observe_discards,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|k| self.seed + k).collect()
    }

    pub fn loss_coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            env_entropy: self.env_entropy,
            value_coef: self.value_coef,
            contract_weight: self.contract_weight,
            contract_entropy: self.contract_entropy,
        }
    }
}

/// Who sits at the table, how contracts work, and the shared network shape.
pub struct Table {
    pub agents: Vec<AgentSpec>,
    scripted: Vec<Option<Box<dyn ScriptedPolicy>>>,
    enforcement: Option<Box<dyn Enforcement>>,
    pub contracts_enabled: Vec<bool>,
    pub alphabet: OfferAlphabet,
    pub gifting: GiftingConfig,
    pub tremble_prob: f64,
    pub net: Network,
}

impl Table {
    pub fn from_config(config: &TrainConfig) -> Result<Self, TrainingError> {
        config.validate()?;
        let s = scenario(&config.scenario)?;
        let contract = s.contract_mode().map(|mode| ContractConfig {
            mode: mode.to_string(),
            deadline_steps: config.deadline_steps,
            penalty: config.penalty,
            tremble_prob: config.tremble_prob,
            enabled: Vec::new(),
        });
        Self::new(config.gifting(), s.agents(), contract, config.width)
    }

    /// `contract` is `None` for tables without a contract channel; its
    /// `enabled` list is derived from the agents.
    pub fn new(
        gifting: GiftingConfig,
        agents: Vec<AgentSpec>,
        contract: Option<ContractConfig>,
        width: usize,
    ) -> Result<Self, TrainingError> {
        gifting.validate()?;
        let n = gifting.n_players;
        if agents.len() != n {
            return Err(TrainingError::InvalidConfig(format!(
                "{} agents for {n} player slots",
                agents.len()
            )));
        }
        let scripted = agents
            .iter()
            .map(|a| match a {
                AgentSpec::Scripted(name) => scripted_policy(name).map(Some),
                AgentSpec::Learner { .. } => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (enforcement, contracts_enabled, tremble_prob) = match contract {
            Some(mut c) => {
                c.enabled = agents.iter().map(AgentSpec::uses_contracts).collect();
                (Some(enforcement(&c)?), c.enabled, c.tremble_prob)
            }
            None => (None, vec![false; n], 0.0),
        };
        let alphabet = OfferAlphabet::new(n);
        let block = match &enforcement {
            Some(e) => crate::contracts::contract_observation_len(n, e.observes_contract_flags()),
            None => 0,
        };
        let input = GiftingState::base_observation_len(&gifting) + block;
        let net = Network::new(NetworkSpec::new(input, width, gifting.n_actions(), alphabet.size()));
        Ok(Self {
            agents,
            scripted,
            enforcement,
            contracts_enabled,
            alphabet,
            gifting,
            tremble_prob,
            net,
        })
    }

    pub fn n_players(&self) -> usize {
        self.gifting.n_players
    }

    pub fn enforcement_name(&self) -> Option<&'static str> {
        self.enforcement.as_ref().map(|e| e.name())
    }

    /// Fresh parameters for every learner slot, `None` for scripted slots.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Option<Vec<f64>>> {
        self.agents
            .iter()
            .map(|a| a.is_learner().then(|| self.net.init_params(rng)))
            .collect()
    }

    fn contract_block(&self, book: &ContractBook, previous: Option<&[ContractOffer]>) -> Vec<f64> {
        match &self.enforcement {
            None => Vec::new(),
            Some(e) => {
                let flags = e
                    .observes_contract_flags()
                    .then(|| book.under_contract_flags(self.n_players()));
                contract_observation(&self.alphabet, previous, flags.as_deref())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvChoice {
    pub mask: Vec<bool>,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfferChoice {
    pub index: usize,
    pub floor: Option<OfferFloor>,
}

/// One learner's view of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentTrace {
    pub observations: Vec<Vec<f64>>,
    pub env: Vec<Option<EnvChoice>>,
    pub offers: Vec<Option<OfferChoice>>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeStats {
    pub payoffs: Vec<f64>,
    pub winners: Vec<usize>,
    pub penalties: Vec<f64>,
    pub chips: Vec<u32>,
    pub gifts: Vec<usize>,
    pub discards: Vec<usize>,
    /// Per player: contracts signed as G-G, NG-NG and mixed.
    pub signed_by: Vec<[usize; 3]>,
    /// Contracts signed in the episode by category.
    pub signed: [usize; 3],
    pub forced_offers: usize,
}

impl EpisodeStats {
    pub fn is_two_way_draw(&self) -> bool {
        self.winners.len() == 2
    }

    pub fn contracts_signed_by(&self, player: usize) -> usize {
        self.signed_by[player].iter().sum()
    }
}

fn category_slot(c: ContractCategory) -> usize {
    match c {
        ContractCategory::GiftGift => 0,
        ContractCategory::NoGiftNoGift => 1,
        ContractCategory::Mixed => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EpisodeLog {
    pub steps: Vec<EpisodeLogRecord>,
    pub contracts: Vec<ContractEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Indexed by player; `None` for scripted agents.
    pub traces: Vec<Option<AgentTrace>>,
    pub stats: EpisodeStats,
    pub log: Option<EpisodeLog>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
}

fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

fn absorb(stats: &mut EpisodeStats, rewards: &mut [Vec<f64>], t: usize, settlement: Settlement, log: &mut Option<EpisodeLog>) {
    for (p, &pen) in settlement.penalties.iter().enumerate() {
        if pen != 0.0 {
            stats.penalties[p] += pen;
            rewards[p][t] += pen;
        }
    }
    if let Some(log) = log {
        log.contracts.extend(settlement.events);
    }
}

/// Plays `count` episodes. Train mode applies trembling-hand directives when
/// the enforcement mode asks for them; eval mode never does. Seating is
/// redrawn every episode.
pub fn collect_episodes<R: Rng>(
    table: &Table,
    params: &[Option<Vec<f64>>],
    count: usize,
    mode: RolloutMode,
    record_logs: bool,
    rng: &mut R,
) -> Result<RolloutBatch, TrainingError> {
    if params.len() != table.n_players() {
        return Err(TrainingError::InvalidConfig(format!(
            "{} parameter slots for {} players",
            params.len(),
            table.n_players()
        )));
    }
    for (p, spec) in table.agents.iter().enumerate() {
        match (&params[p], spec.is_learner()) {
            (Some(w), true) => table.net.check_params(w)?,
            (None, false) => {}
            _ => {
                return Err(TrainingError::InvalidConfig(format!(
                    "parameter slot {p} does not match its agent"
                )))
            }
        }
    }
    let episodes = (0..count)
        .map(|_| play_episode(table, params, mode, record_logs, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RolloutBatch { episodes })
}

fn play_episode<R: Rng>(
    table: &Table,
    params: &[Option<Vec<f64>>],
    mode: RolloutMode,
    record_logs: bool,
    rng: &mut R,
) -> Result<Episode, TrainingError> {
    let n = table.n_players();
    let horizon = table.gifting.episode_length();
    let mut state = GiftingState::reset(table.gifting, rng)?;
    let mut book = ContractBook::default();
    let mut previous: Option<Vec<ContractOffer>> = None;
    let mut last_actions: Vec<Option<GiftAction>> = vec![None; n];
    let mut memories: Vec<_> = params.iter().map(|p| p.as_ref().map(|_| table.net.initial_memory())).collect();
    let mut traces: Vec<Option<AgentTrace>> = params.iter().map(|p| p.as_ref().map(|_| AgentTrace::default())).collect();
    let mut rewards = vec![vec![0.0; horizon]; n];
    let mut stats = EpisodeStats {
        penalties: vec![0.0; n],
        gifts: vec![0; n],
        discards: vec![0; n],
        signed_by: vec![[0; 3]; n],
        ..EpisodeStats::default()
    };
    let mut log = record_logs.then(EpisodeLog::default);
    let any_contracts = table.enforcement.is_some() && table.contracts_enabled.iter().any(|&e| e);

    for t in 0..horizon {
        let block = table.contract_block(&book, previous.as_deref());
        let mut outputs = Vec::with_capacity(n);
        for p in 0..n {
            match (&params[p], &mut memories[p], &mut traces[p]) {
                (Some(w), Some(mem), Some(trace)) => {
                    let obs = state.observation(p, &block);
                    let (out, _) = table.net.step(w, mem, &obs)?;
                    trace.observations.push(obs);
                    trace.values.push(out.value);
                    outputs.push(Some(out));
                }
                _ => outputs.push(None),
            }
        }

        // Contract channel.
        let mut offers = vec![ContractOffer::NoOffer; n];
        let mut offer_choices: Vec<Option<OfferChoice>> = vec![None; n];
        if any_contracts {
            let enforcement = table.enforcement.as_ref().expect("checked above");
            let directive = if mode == RolloutMode::Train && enforcement.trembles_in_training() {
                trembling_hand_directive(&book, &table.contracts_enabled, &table.alphabet, rng)
            } else {
                None
            };
            for p in 0..n {
                if !table.contracts_enabled[p] || !book.is_free(p) {
                    continue;
                }
                let out = outputs[p].as_ref().expect("contract agents are learners");
                let mut probs = masked_softmax(&out.offer_logits, None)?;
                let floor = directive
                    .as_ref()
                    .and_then(|d| d.forced.iter().find(|(q, _)| *q == p))
                    .map(|&(_, forced)| OfferFloor {
                        forced,
                        prob: table.tremble_prob,
                    });
                if let Some(f) = floor {
                    probs = crate::contracts::tremble_mixture(&probs, f.forced, f.prob);
                    stats.forced_offers += 1;
                    if let Some(log) = &mut log {
                        log.contracts.push(ContractEvent {
                            timestep: t,
                            event: ContractEventKind::Forced,
                            parties: vec![p],
                            offer_index: Some(f.forced),
                            category: None,
                        });
                    }
                }
                let index = sample(&probs, rng);
                offers[p] = table.alphabet.decode(p, index)?;
                offer_choices[p] = Some(OfferChoice { index, floor });
                if let (Some(log), ContractOffer::Offer { .. }) = (&mut log, offers[p]) {
                    log.contracts.push(ContractEvent {
                        timestep: t,
                        event: ContractEventKind::Offered,
                        parties: vec![p],
                        offer_index: Some(index),
                        category: None,
                    });
                }
            }
            let signed = contract_phase(
                &mut book,
                &offers,
                &table.contracts_enabled,
                t,
                enforcement.deadline_steps(),
                rng,
            );
            for c in &signed {
                let slot = category_slot(c.category());
                stats.signed[slot] += 1;
                for &q in &c.parties {
                    stats.signed_by[q][slot] += 1;
                }
                if let Some(log) = &mut log {
                    log.contracts.push(ContractEvent {
                        timestep: t,
                        event: ContractEventKind::Signed,
                        parties: c.parties.to_vec(),
                        offer_index: None,
                        category: Some(c.category()),
                    });
                }
            }
        }

        // Environment action.
        let actor = state.current_player()?;
        let legal = state.legal_actions(actor)?;
        let mask = match &table.enforcement {
            Some(e) => e.action_mask(&book, actor, &legal),
            None => legal,
        };
        let action = match (&outputs[actor], &table.scripted[actor]) {
            (Some(out), _) => {
                let probs = masked_softmax(&out.env_logits, Some(&mask))?;
                let k = sample(&probs, rng);
                if let Some(trace) = &mut traces[actor] {
                    trace.env.resize(t, None);
                    trace.env.push(Some(EnvChoice { mask, action: k }));
                }
                GiftAction::from_index(k, actor, n)
            }
            (None, Some(bot)) => {
                let view = AgentView {
                    player: actor,
                    state: &state,
                    last_actions: &last_actions,
                };
                bot.act(&view, rng)
            }
            (None, None) => unreachable!("every slot is a learner or a scripted policy"),
        };
        let seat = state.current_seat();
        state.step(action)?;
        last_actions[actor] = Some(action);
        if action.is_gift() {
            stats.gifts[actor] += 1;
        } else {
            stats.discards[actor] += 1;
        }
        if let Some(log) = &mut log {
            log.steps.push(EpisodeLogRecord::Step {
                turn: t,
                seat,
                player: actor,
                action,
                holdings: state.holdings.clone(),
            });
        }
        if let Some(e) = &table.enforcement {
            let mut settlement = Settlement::new(n);
            e.after_action(&mut book, actor, action, t, &mut settlement);
            absorb(&mut stats, &mut rewards, t, settlement, &mut log);
        }

        for (p, trace) in traces.iter_mut().enumerate() {
            if let Some(trace) = trace {
                trace.env.resize(t + 1, None);
                trace.offers.push(offer_choices[p].take());
            }
        }
        previous = Some(offers);
    }

    let last = horizon - 1;
    if let Some(e) = &table.enforcement {
        let mut settlement = Settlement::new(n);
        e.end_episode(&mut book, last, &mut settlement);
        absorb(&mut stats, &mut rewards, last, settlement, &mut log);
    }
    let result = state.score()?;
    for p in 0..n {
        rewards[p][last] += result.payoffs[p];
    }
    if let Some(log) = &mut log {
        log.steps.push(EpisodeLogRecord::Terminal {
            payoffs: result.payoffs.clone(),
            winners: result.winners.clone(),
        });
    }
    stats.chips = (0..n).map(|p| state.chips_held(p)).collect();
    stats.payoffs = result.payoffs;
    stats.winners = result.winners;
    for (p, trace) in traces.iter_mut().enumerate() {
        if let Some(trace) = trace {
            trace.rewards = rewards[p].clone();
        }
    }
    Ok(Episode { traces, stats, log })
}

/// Discounted Monte-Carlo returns, `G_t = r_t + gamma * G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Returns and advantages `G_t - V_t` for one episode.
pub fn returns_and_advantages(rewards: &[f64], values: &[f64], gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let returns = discounted_returns(rewards, gamma);
    let advantages = returns.iter().zip(values).map(|(g, v)| g - v).collect();
    (returns, advantages)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub env_entropy: f64,
    pub value_coef: f64,
    pub contract_weight: f64,
    pub contract_entropy: f64,
}

/// Per-episode returns and advantages held fixed while differentiating.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub returns: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
}

/// Targets from the value estimates of `params`.
pub fn compute_targets(net: &Network, params: &[f64], traces: &[&AgentTrace], gamma: f64) -> Result<Targets, TrainingError> {
    let mut returns = Vec::with_capacity(traces.len());
    let mut advantages = Vec::with_capacity(traces.len());
    for trace in traces {
        let (outs, _) = net.unroll(params, &trace.observations)?;
        let values: Vec<f64> = outs.iter().map(|o| o.value).collect();
        let (r, a) = returns_and_advantages(&trace.rewards, &values, gamma);
        returns.push(r);
        advantages.push(a);
    }
    Ok(Targets { returns, advantages })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub policy: f64,
    pub entropy: f64,
    pub value: f64,
    pub contract_policy: f64,
    pub contract_entropy: f64,
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Loss of one learner over a batch of its episodes, averaged over
/// episodes, with its gradient written into `grad` (overwritten). The
/// contract terms are skipped when `uses_contracts` is false.
pub fn loss_and_grad(
    net: &Network,
    params: &[f64],
    traces: &[&AgentTrace],
    targets: &Targets,
    coeffs: &LossCoefficients,
    uses_contracts: bool,
    grad: &mut [f64],
) -> Result<LossBreakdown, TrainingError> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = LossBreakdown::default();
    if traces.is_empty() {
        return Ok(loss);
    }
    for (e, trace) in traces.iter().enumerate() {
        let (outs, caches) = net.unroll(params, &trace.observations)?;
        let mut grads = Vec::with_capacity(outs.len());
        for (t, out) in outs.iter().enumerate() {
            let ret = targets.returns[e][t];
            let adv = targets.advantages[e][t];
            let diff = out.value - ret;
            loss.value += coeffs.value_coef * diff * diff;
            let mut g = OutputGrad {
                env_logits: None,
                offer_logits: None,
                value: 2.0 * coeffs.value_coef * diff,
            };

            if let Some(Some(choice)) = trace.env.get(t) {
                let probs = masked_softmax(&out.env_logits, Some(&choice.mask))?;
                let h = entropy(&probs);
                loss.policy -= adv * probs[choice.action].ln();
                loss.entropy -= coeffs.env_entropy * h;
                let dl = (0..probs.len())
                    .map(|k| {
                        if !choice.mask[k] {
                            return 0.0;
                        }
                        let onehot = if k == choice.action { 1.0 } else { 0.0 };
                        let ent = if probs[k] > 0.0 { coeffs.env_entropy * probs[k] * (probs[k].ln() + h) } else { 0.0 };
                        adv * (probs[k] - onehot) + ent
                    })
                    .collect();
                g.env_logits = Some(dl);
            }

            if uses_contracts {
                if let Some(Some(choice)) = trace.offers.get(t) {
                    let q = masked_softmax(&out.offer_logits, None)?;
                    let h = entropy(&q);
                    let a = choice.index;
                    let (q_taken, scale) = match choice.floor {
                        Some(f) => {
                            let mixed = (1.0 - f.prob) * q[a] + if f.forced == a { f.prob } else { 0.0 };
                            (mixed, (1.0 - f.prob) * q[a] / mixed)
                        }
                        None => (q[a], 1.0),
                    };
                    let alpha = coeffs.contract_weight;
                    loss.contract_policy -= alpha * adv * q_taken.ln();
                    loss.contract_entropy -= alpha * coeffs.contract_entropy * h;
                    let dl = (0..q.len())
                        .map(|k| {
                            let onehot = if k == a { 1.0 } else { 0.0 };
                            let ent = if q[k] > 0.0 { coeffs.contract_entropy * q[k] * (q[k].ln() + h) } else { 0.0 };
                            alpha * (adv * scale * (q[k] - onehot) + ent)
                        })
                        .collect();
                    g.offer_logits = Some(dl);
                }
            }
            grads.push(g);
        }
        net.backward(params, &caches, &grads, grad);
    }
    let scale = 1.0 / traces.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    loss.policy *= scale;
    loss.entropy *= scale;
    loss.value *= scale;
    loss.contract_policy *= scale;
    loss.contract_entropy *= scale;
    loss.total = loss.policy + loss.entropy + loss.value + loss.contract_policy + loss.contract_entropy;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub momentum: f64,
    pub accumulator: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl RmsProp {
    pub fn new(n_params: usize, learning_rate: f64, decay: f64, epsilon: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            decay,
            epsilon,
            momentum,
            accumulator: vec![0.0; n_params],
            velocity: vec![0.0; n_params],
        }
    }

    pub fn from_config(n_params: usize, config: &TrainConfig) -> Self {
        Self::new(n_params, config.learning_rate, config.rms_decay, config.rms_epsilon, config.rms_momentum)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for i in 0..params.len() {
            let g = grad[i];
            self.accumulator[i] = self.decay * self.accumulator[i] + (1.0 - self.decay) * g * g;
            let update = self.learning_rate * g / (self.accumulator[i] + self.epsilon).sqrt();
            self.velocity[i] = self.momentum * self.velocity[i] + update;
            params[i] -= self.velocity[i];
        }
    }
}

/// One synchronous update of every learner from `batch`. Returns each
/// learner's loss breakdown (`None` for scripted slots).
pub fn a2c_update(
    table: &Table,
    params: &mut [Option<Vec<f64>>],
    optimizers: &mut [Option<RmsProp>],
    batch: &RolloutBatch,
    config: &TrainConfig,
    update: usize,
) -> Result<Vec<Option<LossBreakdown>>, TrainingError> {
    let coeffs = config.loss_coefficients();
    let mut report = Vec::with_capacity(params.len());
    for (agent, slot) in params.iter_mut().enumerate() {
        let (Some(w), Some(opt)) = (slot.as_mut(), optimizers[agent].as_mut()) else {
            report.push(None);
            continue;
        };
        let traces: Vec<&AgentTrace> = batch
            .episodes
            .iter()
            .map(|e| e.traces[agent].as_ref().expect("learner slots carry traces"))
            .collect();
        // The rollout used these same parameters, so its value estimates
        // equal a fresh unroll.
        let mut targets = Targets {
            returns: Vec::with_capacity(traces.len()),
            advantages: Vec::with_capacity(traces.len()),
        };
        for trace in &traces {
            let (r, a) = returns_and_advantages(&trace.rewards, &trace.values, config.gamma);
            targets.returns.push(r);
            targets.advantages.push(a);
        }
        let mut grad = vec![0.0; w.len()];
        let loss = loss_and_grad(
            &table.net,
            w,
            &traces,
            &targets,
            &coeffs,
            table.agents[agent].uses_contracts() && table.enforcement.is_some(),
            &mut grad,
        )?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainingError::NonFiniteLoss {
                update,
                agent,
                detail: format!("{loss:?}"),
            });
        }
        opt.step(w, &grad);
        report.push(Some(loss));
    }
    Ok(report)
}

/// Per-agent metrics of one batch, in the per-seed CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub agent: usize,
    pub mean_reward: f64,
    pub discard_rate: f64,
    pub gift_rate: f64,
    #[serde(rename = "contracts_signed_GG")]
    pub contracts_signed_gg: f64,
    #[serde(rename = "contracts_signed_NGNG")]
    pub contracts_signed_ngng: f64,
    pub contracts_signed_mixed: f64,
    pub penalties: f64,
}

pub const METRICS_HEADER: &str = "update,agent,mean_reward,discard_rate,gift_rate,contracts_signed_GG,contracts_signed_NGNG,contracts_signed_mixed,penalties";

/// Whole-table summary of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub update: usize,
    pub episodes: usize,
    pub two_way_draws: usize,
    /// Contracts signed per episode by category.
    pub signed_gg: f64,
    pub signed_ngng: f64,
    pub signed_mixed: f64,
    pub forced_offers: f64,
    /// Gift rate over all learner actions.
    pub learner_gift_rate: f64,
}

pub fn batch_metrics(table: &Table, batch: &RolloutBatch, update: usize) -> (Vec<MetricsRow>, BatchSummary) {
    let n = table.n_players();
    let k = batch.episodes.len().max(1) as f64;
    let rows = (0..n)
        .map(|agent| {
            let sum = |f: &dyn Fn(&EpisodeStats) -> f64| batch.episodes.iter().map(|e| f(&e.stats)).sum::<f64>();
            let gifts = sum(&|s| s.gifts[agent] as f64);
            let discards = sum(&|s| s.discards[agent] as f64);
            let acts = (gifts + discards).max(1.0);
            MetricsRow {
                update,
                agent,
                mean_reward: sum(&|s| s.payoffs[agent]) / k,
                discard_rate: discards / acts,
                gift_rate: gifts / acts,
                contracts_signed_gg: sum(&|s| s.signed_by[agent][0] as f64) / k,
                contracts_signed_ngng: sum(&|s| s.signed_by[agent][1] as f64) / k,
                contracts_signed_mixed: sum(&|s| s.signed_by[agent][2] as f64) / k,
                penalties: sum(&|s| s.penalties[agent]) / k,
            }
        })
        .collect();
    let learners: Vec<usize> = (0..n).filter(|&p| table.agents[p].is_learner()).collect();
    let (mut gifts, mut acts) = (0usize, 0usize);
    for e in &batch.episodes {
        for &p in &learners {
            gifts += e.stats.gifts[p];
            acts += e.stats.gifts[p] + e.stats.discards[p];
        }
    }
    let per_episode = |slot: usize| batch.episodes.iter().map(|e| e.stats.signed[slot] as f64).sum::<f64>() / k;
    let summary = BatchSummary {
        update,
        episodes: batch.episodes.len(),
        two_way_draws: batch.episodes.iter().filter(|e| e.stats.is_two_way_draw()).count(),
        signed_gg: per_episode(0),
        signed_ngng: per_episode(1),
        signed_mixed: per_episode(2),
        forced_offers: batch.episodes.iter().map(|e| e.stats.forced_offers as f64).sum::<f64>() / k,
        learner_gift_rate: if acts == 0 { 0.0 } else { gifts as f64 / acts as f64 },
    };
    (rows, summary)
}

/// Result of training one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub train: Vec<MetricsRow>,
    pub train_summary: Vec<BatchSummary>,
    pub eval: Vec<MetricsRow>,
    pub eval_summary: Vec<BatchSummary>,
    pub params: Vec<Option<Vec<f64>>>,
    /// Logs of the last evaluation batch.
    pub final_eval_logs: Vec<EpisodeLog>,
}

impl SeedRun {
    /// Eval rows of the last evaluation, one per agent.
    pub fn final_eval(&self) -> Vec<&MetricsRow> {
        let last = self.eval.last().map(|r| r.update);
        self.eval.iter().filter(|r| Some(r.update) == last).collect()
    }
}

fn eval_rng(seed: u64, update: usize) -> rand_chacha::ChaCha8Rng {
    stream_rng(seed, EVAL_STREAM_BASE + update as u64)
}

/// Trains one seed from scratch.
pub fn train_seed(config: &TrainConfig, seed: u64) -> Result<SeedRun, TrainingError> {
    let table = Table::from_config(config)?;
    let mut params = table.init_params(&mut stream_rng(seed, INIT_STREAM));
    let mut optimizers: Vec<Option<RmsProp>> = params
        .iter()
        .map(|p| p.as_ref().map(|w| RmsProp::from_config(w.len(), config)))
        .collect();
    let mut rng = stream_rng(seed, TRAIN_STREAM);
    let mut run = SeedRun {
        seed,
        train: Vec::new(),
        train_summary: Vec::new(),
        eval: Vec::new(),
        eval_summary: Vec::new(),
        params: Vec::new(),
        final_eval_logs: Vec::new(),
    };
    for update in 0..config.updates {
        let batch = collect_episodes(&table, &params, config.episodes_per_update, RolloutMode::Train, false, &mut rng)?;
        let (rows, summary) = batch_metrics(&table, &batch, update);
        run.train.extend(rows);
        run.train_summary.push(summary);
        a2c_update(&table, &mut params, &mut optimizers, &batch, config, update)?;

        let last = update + 1 == config.updates;
        if (update + 1) % config.eval_every == 0 || last {
            let batch = collect_episodes(
                &table,
                &params,
                config.eval_episodes,
                RolloutMode::Eval,
                last,
                &mut eval_rng(seed, update),
            )?;
            let (rows, summary) = batch_metrics(&table, &batch, update);
            run.eval.extend(rows);
            run.eval_summary.push(summary);
            if last {
                run.final_eval_logs = batch.episodes.into_iter().filter_map(|e| e.log).collect();
            }
        }
    }
    run.params = params;
    Ok(run)
}

/// Evaluates fixed parameters without learning.
pub fn evaluate(
    table: &Table,
    params: &[Option<Vec<f64>>],
    episodes: usize,
    seed: u64,
) -> Result<(Vec<MetricsRow>, BatchSummary, RolloutBatch), TrainingError> {
    let batch = collect_episodes(table, params, episodes, RolloutMode::Eval, true, &mut eval_rng(seed, 0))?;
    let (rows, summary) = batch_metrics(table, &batch, 0);
    Ok((rows, summary, batch))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub config: TrainConfig,
    pub runs: Vec<SeedRun>,
}

/// Trains every seed of `config`, in parallel unless `single_thread` is set.
/// Results do not depend on the threading mode. When `out_dir` is given,
/// per-seed metrics, summaries, logs and checkpoints are written there.
pub fn run_training(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainingReport, TrainingError> {
    config.validate()?;
    let seeds = config.seeds();
    let runs: Vec<SeedRun> = if config.single_thread {
        seeds.iter().map(|&s| train_seed(config, s)).collect::<Result<_, _>>()?
    } else {
        seeds.par_iter().map(|&s| train_seed(config, s)).collect::<Result<_, _>>()?
    };
    let report = TrainingReport {
        config: config.clone(),
        runs,
    };
    if let Some(dir) = out_dir {
        write_training_outputs(&report, dir)?;
    }
    Ok(report)
}

pub fn write_metrics_csv<W: Write>(out: &mut W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.update,
            r.agent,
            r.mean_reward,
            r.discard_rate,
            r.gift_rate,
            r.contracts_signed_gg,
            r.contracts_signed_ngng,
            r.contracts_signed_mixed,
            r.penalties
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: &mut W, rows: &[BatchSummary]) -> std::io::Result<()> {
    writeln!(
        out,
        "update,episodes,two_way_draws,signed_GG,signed_NGNG,signed_mixed,forced_offers,learner_gift_rate"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.update,
            r.episodes,
            r.two_way_draws,
            r.signed_gg,
            r.signed_ngng,
            r.signed_mixed,
            r.forced_offers,
            r.learner_gift_rate
        )?;
    }
    Ok(())
}

pub fn checkpoint_of(config: &TrainConfig, run: &SeedRun) -> Result<Checkpoint, TrainingError> {
    let table = Table::from_config(config)?;
    let metadata = serde_json::json!({
        "seed": run.seed,
        "config": config,
    });
    Ok(Checkpoint::new(table.net.spec().clone(), run.params.clone(), metadata))
}

/// Rebuilds the table and parameters stored by [`checkpoint_of`].
pub fn load_checkpoint(text: &str) -> Result<(TrainConfig, Table, Vec<Option<Vec<f64>>>), TrainingError> {
    let ck = Checkpoint::from_json(text)?;
    let config: TrainConfig = serde_json::from_value(
        ck.metadata
            .get("config")
            .cloned()
            .ok_or_else(|| TrainingError::InvalidConfig("checkpoint has no training config".into()))?,
    )?;
    let table = Table::from_config(&config)?;
    if table.net.spec() != &ck.spec {
        return Err(TrainingError::InvalidConfig(
            "checkpoint network does not match its recorded config".into(),
        ));
    }
    Ok((config, table, ck.agents))
}

fn write_training_outputs(report: &TrainingReport, dir: &Path) -> Result<(), TrainingError> {
    fs::create_dir_all(dir)?;
    for run in &report.runs {
        let s = run.seed;
        write_metrics_csv(&mut fs::File::create(dir.join(format!("metrics_seed{s}.csv")))?, &run.train)?;
        write_metrics_csv(&mut fs::File::create(dir.join(format!("eval_seed{s}.csv")))?, &run.eval)?;
        write_summary_csv(
            &mut fs::File::create(dir.join(format!("train_summary_seed{s}.csv")))?,
            &run.train_summary,
        )?;
        write_summary_csv(
            &mut fs::File::create(dir.join(format!("eval_summary_seed{s}.csv")))?,
            &run.eval_summary,
        )?;
        let mut episodes = fs::File::create(dir.join(format!("episodes_seed{s}.jsonl")))?;
        let mut contracts = fs::File::create(dir.join(format!("contract_events_seed{s}.jsonl")))?;
        for log in &run.final_eval_logs {
            crate::gifting::write_jsonl(&mut episodes, &log.steps)?;
            crate::gifting::write_jsonl(&mut contracts, &log.contracts)?;
        }
        let ck = checkpoint_of(&report.config, run)?;
        fs::write(dir.join(format!("checkpoint_seed{s}.json")), ck.to_json()?)?;
    }
    Ok(())
}

/// Mean and half-width of a 95% Student-t confidence interval.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub t_stat: f64,
    /// Two-sided p-value of the slope.
    pub p_value: f64,
    pub n: usize,
}

/// Ordinary least squares of `y` on `x` with a two-sided t-test on the slope.
pub fn ols(x: &[f64], y: &[f64]) -> Result<OlsFit, TrainingError> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(TrainingError::DegenerateRegression(format!(
            "need at least 3 paired points, got {} x and {} y",
            n,
            y.len()
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(TrainingError::DegenerateRegression("all x values are identical".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let df = nf - 2.0;
    let se = (sse / df / sxx).sqrt();
    let (t_stat, p_value) = if se > 0.0 {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    } else if slope != 0.0 {
        (slope.signum() * f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(OlsFit {
        slope,
        intercept,
        slope_std_error: se,
        t_stat,
        p_value,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub episode: usize,
    pub player: usize,
    pub chips: u32,
    pub contracts_signed: usize,
    pub gift_contracts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub fit: OlsFit,
    pub records: Vec<ScatterRecord>,
}

pub fn scatter_records(batch: &RolloutBatch) -> Vec<ScatterRecord> {
    let mut records = Vec::new();
    for (e, ep) in batch.episodes.iter().enumerate() {
        for p in 0..ep.stats.chips.len() {
            records.push(ScatterRecord {
                episode: e,
                player: p,
                chips: ep.stats.chips[p],
                contracts_signed: ep.stats.contracts_signed_by(p),
                gift_contracts: ep.stats.signed_by[p][0] + ep.stats.signed_by[p][2],
            });
        }
    }
    records
}

/// Chips held against contracts signed, one record per player per
/// evaluation episode.
pub fn regression_report(
    table: &Table,
    params: &[Option<Vec<f64>>],
    episodes: usize,
    seed: u64,
) -> Result<RegressionReport, TrainingError> {
    let (_, _, batch) = evaluate(table, params, episodes, seed)?;
    let records = scatter_records(&batch);
    let x: Vec<f64> = records.iter().map(|r| r.contracts_signed as f64).collect();
    let y: Vec<f64> = records.iter().map(|r| r.chips as f64).collect();
    Ok(RegressionReport {
        fit: ols(&x, &y)?,
        records,
    })
}

pub fn write_scatter_csv<W: Write>(out: &mut W, records: &[ScatterRecord]) -> std::io::Result<()> {
    writeln!(out, "episode,player,chips,contracts_signed,gift_contracts")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.episode, r.player, r.chips, r.contracts_signed, r.gift_contracts
        )?;
    }
    Ok(())
}
