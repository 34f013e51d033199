//! The Gifting game: players take turns giving away or discarding chips of
//! their own colour; whoever holds the most chips at the end wins, with
//! ties splitting the unit payoff.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GiftingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GiftingConfig {
    pub n_players: usize,
    pub m_chips: u32,
    /// Include discard counts in observations.
    pub observe_discards: bool,
}

impl Default for GiftingConfig {
    fn default() -> Self {
        Self {
            n_players: 3,
            m_chips: 5,
            observe_discards: true,
        }
    }
}

impl GiftingConfig {
    pub fn validate(&self) -> Result<(), GiftingError> {
        if self.n_players < 2 {
            return Err(GiftingError::InvalidConfig(format!(
                "need at least 2 players, got {}",
                self.n_players
            )));
        }
        if self.m_chips < 1 {
            return Err(GiftingError::InvalidConfig("need at least 1 chip per player".into()));
        }
        Ok(())
    }

    pub fn episode_length(&self) -> usize {
        self.n_players * self.m_chips as usize
    }

    /// Size of the per-player action alphabet: discard plus one gift per
    /// other player.
    pub fn n_actions(&self) -> usize {
        self.n_players
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GiftAction {
    Discard,
    GiftTo(usize),
}

impl GiftAction {
    /// Action index relative to `actor`: 0 is discard, `k >= 1` gifts to the
    /// player `k` places after the actor.
    pub fn to_index(self, actor: usize, n_players: usize) -> usize {
        match self {
            GiftAction::Discard => 0,
            GiftAction::GiftTo(r) => (r + n_players - actor) % n_players,
        }
    }

    pub fn from_index(index: usize, actor: usize, n_players: usize) -> Self {
        if index == 0 {
            GiftAction::Discard
        } else {
            GiftAction::GiftTo((actor + index) % n_players)
        }
    }

    pub fn is_gift(self) -> bool {
        matches!(self, GiftAction::GiftTo(_))
    }

    pub fn is_valid_for(self, actor: usize, n_players: usize) -> bool {
        match self {
            GiftAction::Discard => true,
            GiftAction::GiftTo(r) => r < n_players && r != actor,
        }
    }
}

impl fmt::Display for GiftAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GiftAction::Discard => write!(f, "discard"),
            GiftAction::GiftTo(r) => write!(f, "gift->{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GiftingState {
    config: GiftingConfig,
    /// Own-colour chips each player still has to play.
    pub own_remaining: Vec<u32>,
    /// `holdings[h][c]`: chips of colour `c` held by player `h`.
    pub holdings: Vec<Vec<u32>>,
    /// Discarded chips per colour.
    pub discarded: Vec<u32>,
    pub turn: usize,
    /// `seat_of[player]` is the seat the player occupies this episode.
    pub seat_of: Vec<usize>,
}

impl GiftingState {
    /// Fresh piles and a uniformly random seating.
    pub fn reset<R: Rng + ?Sized>(config: GiftingConfig, rng: &mut R) -> Result<Self, GiftingError> {
        config.validate()?;
        let mut seat_of: Vec<usize> = (0..config.n_players).collect();
        seat_of.shuffle(rng);
        Self::with_seating(config, seat_of)
    }

    pub fn with_seating(config: GiftingConfig, seat_of: Vec<usize>) -> Result<Self, GiftingError> {
        config.validate()?;
        let n = config.n_players;
        let mut check = seat_of.clone();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(GiftingError::InvalidConfig(format!("{seat_of:?} is not a seating of {n} players")));
        }
        Ok(Self {
            config,
            own_remaining: vec![config.m_chips; n],
            holdings: vec![vec![0; n]; n],
            discarded: vec![0; n],
            turn: 0,
            seat_of,
        })
    }

    pub fn config(&self) -> &GiftingConfig {
        &self.config
    }

    pub fn n_players(&self) -> usize {
        self.config.n_players
    }

    pub fn is_terminal(&self) -> bool {
        self.turn >= self.config.episode_length()
    }

    pub fn occupant(&self, seat: usize) -> usize {
        self.seat_of
            .iter()
            .position(|&s| s == seat)
            .expect("seating is a permutation")
    }

    pub fn current_seat(&self) -> usize {
        self.turn % self.config.n_players
    }

    pub fn current_player(&self) -> Result<usize, GiftingError> {
        if self.is_terminal() {
            return Err(GiftingError::EpisodeOver);
        }
        Ok(self.occupant(self.current_seat()))
    }

    /// Legality mask over the actor-relative action alphabet.
    pub fn legal_actions(&self, player: usize) -> Result<Vec<bool>, GiftingError> {
        let n = self.config.n_players;
        if self.is_terminal() {
            return Ok(vec![false; n]);
        }
        let current = self.current_player()?;
        if player != current {
            return Err(GiftingError::OutOfTurn { player, current });
        }
        Ok(vec![self.own_remaining[player] > 0; n])
    }

    pub fn step(&mut self, action: GiftAction) -> Result<usize, GiftingError> {
        let player = self.current_player()?;
        let n = self.config.n_players;
        if !action.is_valid_for(player, n) || self.own_remaining[player] == 0 {
            return Err(GiftingError::IllegalAction {
                player,
                action: action.to_string(),
            });
        }
        self.own_remaining[player] -= 1;
        match action {
            GiftAction::Discard => self.discarded[player] += 1,
            GiftAction::GiftTo(r) => self.holdings[r][player] += 1,
        }
        self.turn += 1;
        Ok(player)
    }

    pub fn chips_held(&self, player: usize) -> u32 {
        self.holdings[player].iter().sum()
    }

    pub fn score(&self) -> Result<EpisodeResult, GiftingError> {
        if !self.is_terminal() {
            return Err(GiftingError::NotTerminal);
        }
        let totals: Vec<u32> = (0..self.n_players()).map(|p| self.chips_held(p)).collect();
        let best = *totals.iter().max().expect("at least two players");
        let winners: Vec<usize> = (0..totals.len()).filter(|&p| totals[p] == best).collect();
        let share = 1.0 / winners.len() as f64;
        let payoffs = (0..totals.len())
            .map(|p| if winners.contains(&p) { share } else { 0.0 })
            .collect();
        Ok(EpisodeResult { payoffs, winners })
    }

    /// Length of [`GiftingState::observation`] before the contract block.
    pub fn base_observation_len(config: &GiftingConfig) -> usize {
        let n = config.n_players;
        n * n + 4 * n + 1
    }

    /// Feature vector for `player`: holdings (n x n), own piles, discards,
    /// current-seat one-hot, own-seat one-hot, episode progress, then the
    /// contract block. Counts are divided by m.
    pub fn observation(&self, player: usize, contract_block: &[f64]) -> Vec<f64> {
        let n = self.n_players();
        let m = self.config.m_chips as f64;
        let mut obs = Vec::with_capacity(Self::base_observation_len(&self.config) + contract_block.len());
        for row in &self.holdings {
            obs.extend(row.iter().map(|&c| c as f64 / m));
        }
        obs.extend(self.own_remaining.iter().map(|&c| c as f64 / m));
        if self.config.observe_discards {
            obs.extend(self.discarded.iter().map(|&c| c as f64 / m));
        } else {
            obs.extend(std::iter::repeat(0.0).take(n));
        }
        let current = if self.is_terminal() { None } else { Some(self.current_seat()) };
        obs.extend((0..n).map(|s| if Some(s) == current { 1.0 } else { 0.0 }));
        obs.extend((0..n).map(|s| if s == self.seat_of[player] { 1.0 } else { 0.0 }));
        obs.push(self.turn as f64 / self.config.episode_length() as f64);
        obs.extend_from_slice(contract_block);
        obs
    }

    /// Chips of colour `c` accounted for across piles, holdings and discards.
    pub fn colour_total(&self, colour: usize) -> u32 {
        self.own_remaining[colour]
            + self.holdings.iter().map(|row| row[colour]).sum::<u32>()
            + self.discarded[colour]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub payoffs: Vec<f64>,
    pub winners: Vec<usize>,
}

impl EpisodeResult {
    pub fn is_two_way_draw(&self) -> bool {
        self.winners.len() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum EpisodeLogRecord {
    Step {
        turn: usize,
        seat: usize,
        player: usize,
        action: GiftAction,
        holdings: Vec<Vec<u32>>,
    },
    Terminal {
        payoffs: Vec<f64>,
        winners: Vec<usize>,
    },
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(out: &mut W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
