//! Alliance dilemmas in constant-sum games: matrix-game analysis, learning
//! dynamics, the Gifting environment, a contract channel, and an A2C
//! training stack for recurrent learners.

pub mod agents;
pub mod contracts;
pub mod dynamics;
pub mod error;
pub mod gifting;
pub mod matrix_games;
pub mod nn;
pub mod rng;
pub mod scenarios;
pub mod training;
pub mod verify;

pub use error::{ContractError, DynamicsError, GameError, GiftingError, NetworkError, TrainingError};
