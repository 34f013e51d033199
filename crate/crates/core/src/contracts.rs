//! Peer-to-peer contract channel for the Gifting game.
//!
//! Every timestep each contract-enabled player submits an offer naming a
//! partner, an action it promises and an action it asks of the partner.
//! Two mirrored offers sign a contract, which is then enforced either by
//! masking the parties' actions (`binding`) or by a penalty for parties that
//! miss a deadline (`punishment`).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ContractError;
use crate::gifting::GiftAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContractOffer {
    NoOffer,
    Offer {
        partner: usize,
        /// What the offering player will do.
        promised: GiftAction,
        /// What the partner is asked to do.
        requested: GiftAction,
    },
}

/// Every offer available to one player, indexed for the contract head.
/// Index 0 is `NoOffer`; the rest enumerate partner x promised x requested
/// with actions in actor-relative order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfferAlphabet {
    pub n_players: usize,
}

impl OfferAlphabet {
    pub fn new(n_players: usize) -> Self {
        Self { n_players }
    }

    fn n_actions(&self) -> usize {
        self.n_players
    }

    pub fn size(&self) -> usize {
        let a = self.n_actions();
        1 + (self.n_players - 1) * a * a
    }

    pub fn encode(&self, player: usize, offer: &ContractOffer) -> Result<usize, ContractError> {
        let n = self.n_players;
        let a = self.n_actions();
        match *offer {
            ContractOffer::NoOffer => Ok(0),
            ContractOffer::Offer {
                partner,
                promised,
                requested,
            } => {
                if partner >= n || partner == player {
                    return Err(ContractError::MalformedOffer {
                        player,
                        reason: format!("partner {partner}"),
                    });
                }
                if !promised.is_valid_for(player, n) || !requested.is_valid_for(partner, n) {
                    return Err(ContractError::MalformedOffer {
                        player,
                        reason: format!("actions {promised} / {requested}"),
                    });
                }
                let rel = (partner + n - player) % n;
                let pi = promised.to_index(player, n);
                let ri = requested.to_index(partner, n);
                Ok(1 + ((rel - 1) * a + pi) * a + ri)
            }
        }
    }

    pub fn decode(&self, player: usize, index: usize) -> Result<ContractOffer, ContractError> {
        let size = self.size();
        if index >= size {
            return Err(ContractError::OfferIndexOutOfRange { index, size });
        }
        if index == 0 {
            return Ok(ContractOffer::NoOffer);
        }
        let n = self.n_players;
        let a = self.n_actions();
        let k = index - 1;
        let ri = k % a;
        let pi = (k / a) % a;
        let rel = k / (a * a) + 1;
        let partner = (player + rel) % n;
        Ok(ContractOffer::Offer {
            partner,
            promised: GiftAction::from_index(pi, player, n),
            requested: GiftAction::from_index(ri, partner, n),
        })
    }
}

/// Offers from `i` and `j` match when each names the other and each one's
/// promise is the other's request.
pub fn offers_match(i: usize, offer_i: &ContractOffer, j: usize, offer_j: &ContractOffer) -> bool {
    match (*offer_i, *offer_j) {
        (
            ContractOffer::Offer {
                partner: pi,
                promised: ai,
                requested: bi,
            },
            ContractOffer::Offer {
                partner: pj,
                promised: aj,
                requested: bj,
            },
        ) => pi == j && pj == i && ai == bj && bi == aj,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContractCategory {
    /// Both parties promise gifts.
    #[serde(rename = "G-G")]
    GiftGift,
    /// Neither party promises a gift.
    #[serde(rename = "NG-NG")]
    NoGiftNoGift,
    #[serde(rename = "mixed")]
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveContract {
    pub parties: [usize; 2],
    pub obligations: [GiftAction; 2],
    pub signed_at: usize,
    /// First timestep past the fulfilment window (punishment mode only).
    pub deadline: Option<usize>,
    /// Binding mode: the party has taken its enforced turn. Punishment mode:
    /// the party has taken its promised action.
    pub fulfilled: [bool; 2],
}

impl ActiveContract {
    pub fn category(&self) -> ContractCategory {
        match (self.obligations[0].is_gift(), self.obligations[1].is_gift()) {
            (true, true) => ContractCategory::GiftGift,
            (false, false) => ContractCategory::NoGiftNoGift,
            _ => ContractCategory::Mixed,
        }
    }

    pub fn side(&self, player: usize) -> Option<usize> {
        self.parties.iter().position(|&p| p == player)
    }

    pub fn both_fulfilled(&self) -> bool {
        self.fulfilled[0] && self.fulfilled[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractConfig {
    /// Enforcement mode name, see [`enforcement`].
    pub mode: String,
    /// Timesteps a party has to fulfil a punishment-mode contract.
    pub deadline_steps: usize,
    /// Reward for breaking a punishment-mode contract.
    pub penalty: f64,
    /// Minimum probability of the trembling-hand offer.
    pub tremble_prob: f64,
    pub enabled: Vec<bool>,
}

impl ContractConfig {
    pub fn binding(enabled: Vec<bool>) -> Self {
        Self {
            mode: "binding".into(),
            deadline_steps: 6,
            penalty: -1.0,
            tremble_prob: 0.5,
            enabled,
        }
    }

    pub fn punishment(enabled: Vec<bool>) -> Self {
        Self {
            mode: "punishment".into(),
            ..Self::binding(enabled)
        }
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        if !(0.0..=1.0).contains(&self.tremble_prob) {
            return Err(ContractError::InvalidConfig(format!(
                "tremble probability {} outside [0, 1]",
                self.tremble_prob
            )));
        }
        if self.deadline_steps < 1 {
            return Err(ContractError::InvalidConfig("deadline must be at least 1 timestep".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractEventKind {
    Offered,
    Signed,
    Fulfilled,
    Broken,
    Penalized,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractEvent {
    pub timestep: usize,
    pub event: ContractEventKind,
    pub parties: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offer_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<ContractCategory>,
}

/// Open contracts of one environment instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ContractBook {
    pub active: Vec<ActiveContract>,
}

impl ContractBook {
    pub fn contract_of(&self, player: usize) -> Option<&ActiveContract> {
        self.active.iter().find(|c| c.parties.contains(&player))
    }

    pub fn is_free(&self, player: usize) -> bool {
        self.contract_of(player).is_none()
    }

    pub fn under_contract_flags(&self, n_players: usize) -> Vec<bool> {
        (0..n_players).map(|p| !self.is_free(p)).collect()
    }
}

/// Accepts candidate pairs in uniformly random order, skipping any pair
/// that shares a player with one already accepted.
pub fn resolve_overlaps<R: Rng + ?Sized>(candidates: &[(usize, usize)], rng: &mut R) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = candidates.to_vec();
    order.shuffle(rng);
    let mut taken: Vec<usize> = Vec::new();
    let mut accepted = Vec::new();
    for (i, j) in order {
        if taken.contains(&i) || taken.contains(&j) {
            continue;
        }
        taken.extend([i, j]);
        accepted.push((i, j));
    }
    accepted.sort_unstable();
    accepted
}

/// Signs every mirrored pair of offers between free, contract-enabled
/// players. Offers from players already under contract are ignored.
pub fn contract_phase<R: Rng + ?Sized>(
    book: &mut ContractBook,
    offers: &[ContractOffer],
    enabled: &[bool],
    timestep: usize,
    deadline_steps: Option<usize>,
    rng: &mut R,
) -> Vec<ActiveContract> {
    let n = offers.len();
    let free: Vec<bool> = (0..n).map(|p| enabled[p] && book.is_free(p)).collect();
    let mut candidates = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if free[i] && free[j] && offers_match(i, &offers[i], j, &offers[j]) {
                candidates.push((i, j));
            }
        }
    }
    let mut signed = Vec::new();
    for (i, j) in resolve_overlaps(&candidates, rng) {
        let ContractOffer::Offer { promised: ai, .. } = offers[i] else {
            unreachable!("matched offers are never NoOffer")
        };
        let ContractOffer::Offer { promised: aj, .. } = offers[j] else {
            unreachable!("matched offers are never NoOffer")
        };
        let contract = ActiveContract {
            parties: [i, j],
            obligations: [ai, aj],
            signed_at: timestep,
            deadline: deadline_steps.map(|b| timestep + b),
            fulfilled: [false, false],
        };
        book.active.push(contract.clone());
        signed.push(contract);
    }
    signed
}

/// Allowed actions for `player` under binding enforcement: only the
/// promised action while the player owes one, otherwise `legal` unchanged.
/// `legal` and the result are in actor-relative action order.
pub fn binding_mask(book: &ContractBook, player: usize, legal: &[bool]) -> Vec<bool> {
    let n = legal.len();
    if let Some(contract) = book.contract_of(player) {
        let side = contract.side(player).expect("party of its own contract");
        if !contract.fulfilled[side] && legal.iter().any(|&l| l) {
            let promised = contract.obligations[side].to_index(player, n);
            return (0..n).map(|k| k == promised && legal[k]).collect();
        }
    }
    legal.to_vec()
}

/// Outcome of applying enforcement after one action.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settlement {
    /// Extra reward per player for this timestep.
    pub penalties: Vec<f64>,
    pub closed: Vec<ActiveContract>,
    pub events: Vec<ContractEvent>,
}

impl Settlement {
    pub fn new(n_players: usize) -> Self {
        Self {
            penalties: vec![0.0; n_players],
            closed: Vec::new(),
            events: Vec::new(),
        }
    }
}

fn event(timestep: usize, kind: ContractEventKind, parties: Vec<usize>, contract: &ActiveContract) -> ContractEvent {
    ContractEvent {
        timestep,
        event: kind,
        parties,
        offer_index: None,
        category: Some(contract.category()),
    }
}

/// Records a binding-mode turn: the acting party's obligation is resolved,
/// and the contract closes once both parties have acted.
pub fn binding_update(book: &mut ContractBook, acted_player: usize, timestep: usize, out: &mut Settlement) {
    let Some(pos) = book.active.iter().position(|c| c.parties.contains(&acted_player)) else {
        return;
    };
    let contract = &mut book.active[pos];
    let side = contract.side(acted_player).expect("party");
    if !contract.fulfilled[side] {
        contract.fulfilled[side] = true;
        out.events.push(event(timestep, ContractEventKind::Fulfilled, vec![acted_player], contract));
    }
    if contract.both_fulfilled() {
        out.closed.push(book.active.remove(pos));
    }
}

/// Punishment-mode bookkeeping for one timestep: credit the acting party if
/// it took its promised action, then close contracts whose parties are both
/// done or whose window ends with this timestep. Parties that missed the
/// window receive `penalty`.
pub fn punishment_update(
    book: &mut ContractBook,
    acted_player: usize,
    action_taken: GiftAction,
    timestep: usize,
    penalty: f64,
    out: &mut Settlement,
) {
    if let Some(contract) = book.active.iter_mut().find(|c| c.parties.contains(&acted_player)) {
        let side = contract.side(acted_player).expect("party");
        let open = contract.deadline.map_or(true, |d| timestep < d);
        if open && !contract.fulfilled[side] && contract.obligations[side] == action_taken {
            contract.fulfilled[side] = true;
            out.events.push(event(timestep, ContractEventKind::Fulfilled, vec![acted_player], contract));
        }
    }
    let mut keep = Vec::with_capacity(book.active.len());
    for contract in book.active.drain(..) {
        if contract.both_fulfilled() {
            out.closed.push(contract);
        } else if contract.deadline.map_or(false, |d| timestep + 1 >= d) {
            settle_broken(contract, timestep, penalty, out);
        } else {
            keep.push(contract);
        }
    }
    book.active = keep;
}

fn settle_broken(contract: ActiveContract, timestep: usize, penalty: f64, out: &mut Settlement) {
    let breakers: Vec<usize> = (0..2)
        .filter(|&s| !contract.fulfilled[s])
        .map(|s| contract.parties[s])
        .collect();
    out.events.push(event(timestep, ContractEventKind::Broken, breakers.clone(), &contract));
    for &p in &breakers {
        out.penalties[p] += penalty;
    }
    out.events.push(event(timestep, ContractEventKind::Penalized, breakers, &contract));
    out.closed.push(contract);
}

/// How signed contracts are enforced.
pub trait Enforcement: Send + Sync {
    fn name(&self) -> &'static str;
    /// Fulfilment window attached to newly signed contracts.
    fn deadline_steps(&self) -> Option<usize>;
    fn action_mask(&self, book: &ContractBook, player: usize, legal: &[bool]) -> Vec<bool>;
    fn after_action(&self, book: &mut ContractBook, player: usize, action: GiftAction, timestep: usize, out: &mut Settlement);
    /// Settles contracts still open when the episode ends at `timestep`.
    fn end_episode(&self, book: &mut ContractBook, timestep: usize, out: &mut Settlement);
    /// Whether players observe who is under contract.
    fn observes_contract_flags(&self) -> bool;
    /// Whether training applies the trembling-hand offer floor.
    fn trembles_in_training(&self) -> bool;
}

pub struct Binding;

impl Enforcement for Binding {
    fn name(&self) -> &'static str {
        "binding"
    }

    fn deadline_steps(&self) -> Option<usize> {
        None
    }

    fn action_mask(&self, book: &ContractBook, player: usize, legal: &[bool]) -> Vec<bool> {
        binding_mask(book, player, legal)
    }

    fn after_action(&self, book: &mut ContractBook, player: usize, _action: GiftAction, timestep: usize, out: &mut Settlement) {
        binding_update(book, player, timestep, out);
    }

    fn end_episode(&self, book: &mut ContractBook, _timestep: usize, out: &mut Settlement) {
        out.closed.append(&mut book.active);
    }

    fn observes_contract_flags(&self) -> bool {
        false
    }

    fn trembles_in_training(&self) -> bool {
        false
    }
}

pub struct Punishment {
    pub deadline_steps: usize,
    pub penalty: f64,
}

impl Enforcement for Punishment {
    fn name(&self) -> &'static str {
        "punishment"
    }

    fn deadline_steps(&self) -> Option<usize> {
        Some(self.deadline_steps)
    }

    fn action_mask(&self, _book: &ContractBook, _player: usize, legal: &[bool]) -> Vec<bool> {
        legal.to_vec()
    }

    fn after_action(&self, book: &mut ContractBook, player: usize, action: GiftAction, timestep: usize, out: &mut Settlement) {
        punishment_update(book, player, action, timestep, self.penalty, out);
    }

    fn end_episode(&self, book: &mut ContractBook, timestep: usize, out: &mut Settlement) {
        for contract in std::mem::take(&mut book.active) {
            if contract.both_fulfilled() {
                out.closed.push(contract);
            } else {
                settle_broken(contract, timestep, self.penalty, out);
            }
        }
    }

    fn observes_contract_flags(&self) -> bool {
        true
    }

    fn trembles_in_training(&self) -> bool {
        true
    }
}

pub const ENFORCEMENT_MODES: &[&str] = &["binding", "punishment"];

pub fn enforcement(config: &ContractConfig) -> Result<Box<dyn Enforcement>, ContractError> {
    config.validate()?;
    match config.mode.as_str() {
        "binding" => Ok(Box::new(Binding)),
        "punishment" => Ok(Box::new(Punishment {
            deadline_steps: config.deadline_steps,
            penalty: config.penalty,
        })),
        other => Err(ContractError::UnknownMode(other.to_string())),
    }
}

/// A forced mirrored offer pair for two free players.
#[derive(Debug, Clone, PartialEq)]
pub struct TrembleDirective {
    pub pair: (usize, usize),
    /// `(player, offer index)` for both members of the pair.
    pub forced: [(usize, usize); 2],
}

/// Picks a uniformly random pair of free players and a uniformly random
/// mirrored contract between them. `None` when fewer than two players are
/// free.
pub fn trembling_hand_directive<R: Rng + ?Sized>(
    book: &ContractBook,
    enabled: &[bool],
    alphabet: &OfferAlphabet,
    rng: &mut R,
) -> Option<TrembleDirective> {
    let n = enabled.len();
    let free: Vec<usize> = (0..n).filter(|&p| enabled[p] && book.is_free(p)).collect();
    if free.len() < 2 {
        return None;
    }
    let mut pairs = Vec::new();
    for (a, &i) in free.iter().enumerate() {
        for &j in &free[a + 1..] {
            pairs.push((i, j));
        }
    }
    let (i, j) = pairs[rng.gen_range(0..pairs.len())];
    let promised = GiftAction::from_index(rng.gen_range(0..n), i, n);
    let requested = GiftAction::from_index(rng.gen_range(0..n), j, n);
    let offer_i = ContractOffer::Offer {
        partner: j,
        promised,
        requested,
    };
    let offer_j = ContractOffer::Offer {
        partner: i,
        promised: requested,
        requested: promised,
    };
    Some(TrembleDirective {
        pair: (i, j),
        forced: [
            (i, alphabet.encode(i, &offer_i).expect("well-formed")),
            (j, alphabet.encode(j, &offer_j).expect("well-formed")),
        ],
    })
}

/// `(1 - p_c) * probs + p_c * onehot(forced)`.
pub fn tremble_mixture(probs: &[f64], forced: usize, floor: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| (1.0 - floor) * p + if k == forced { floor } else { 0.0 })
        .collect()
}

/// One-hot encoding of each player's previous offer, followed by
/// under-contract flags when `flags` is given. `previous` is `None` on the
/// first timestep, giving an all-zeros block.
pub fn contract_observation(
    alphabet: &OfferAlphabet,
    previous: Option<&[ContractOffer]>,
    flags: Option<&[bool]>,
) -> Vec<f64> {
    let n = alphabet.n_players;
    let size = alphabet.size();
    let mut block = vec![0.0; n * size + flags.map_or(0, |f| f.len())];
    if let Some(offers) = previous {
        for (p, offer) in offers.iter().enumerate() {
            let index = alphabet.encode(p, offer).expect("offers are validated before use");
            block[p * size + index] = 1.0;
        }
    }
    if let Some(flags) = flags {
        for (k, &f) in flags.iter().enumerate() {
            block[n * size + k] = if f { 1.0 } else { 0.0 };
        }
    }
    block
}

/// Length of [`contract_observation`] for `n_players` players.
pub fn contract_observation_len(n_players: usize, with_flags: bool) -> usize {
    n_players * OfferAlphabet::new(n_players).size() + if with_flags { n_players } else { 0 }
}
