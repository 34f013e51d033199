use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("{name} = {value} is outside [0, 1]")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("player index {0} is not one of 0, 1, 2")]
    InvalidPlayer(usize),
    #[error("grid step {0} does not divide 1 evenly")]
    InvalidGridStep(f64),
    #[error("an experiment needs at least one game")]
    EmptyExperiment,
    #[error("a histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("the learner set is empty")]
    NoLearners,
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("unknown parameterization `{0}`")]
    UnknownParameterization(String),
    #[error("no analytic fixed-point analysis for p = {p}, q = {q}; use the numeric mode")]
    NumericOnly { p: f64, q: f64 },
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GiftingError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("the episode is over")]
    EpisodeOver,
    #[error("player {player} acted out of turn (current player is {current})")]
    OutOfTurn { player: usize, current: usize },
    #[error("illegal action {action} for player {player}")]
    IllegalAction { player: usize, action: String },
    #[error("the episode has not finished")]
    NotTerminal,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractError {
    #[error("invalid contract configuration: {0}")]
    InvalidConfig(String),
    #[error("offer index {index} is outside an alphabet of {size}")]
    OfferIndexOutOfRange { index: usize, size: usize },
    #[error("malformed offer from player {player}: {reason}")]
    MalformedOffer { player: usize, reason: String },
    #[error("unknown enforcement mode `{0}`")]
    UnknownMode(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("expected input of length {expected}, got {actual}")]
    InputDimension { expected: usize, actual: usize },
    #[error("expected mask of length {expected}, got {actual}")]
    MaskDimension { expected: usize, actual: usize },
    #[error("the action mask allows nothing")]
    EmptyMask,
    #[error("parameter vector has length {actual}, network needs {expected}")]
    ParamCount { expected: usize, actual: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("non-finite loss at update {update} (agent {agent}): {detail}")]
    NonFiniteLoss {
        update: usize,
        agent: usize,
        detail: String,
    },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("regression is undefined: {0}")]
    DegenerateRegression(String),
    #[error(transparent)]
    Gifting(#[from] GiftingError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
