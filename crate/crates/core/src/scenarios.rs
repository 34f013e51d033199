//! Named Gifting experiments. Each scenario fixes who sits at the table,
//! how contracts are enforced, and its default hyperparameters.

use crate::agents::AgentSpec;
use crate::error::TrainingError;
use crate::training::TrainConfig;

pub trait Scenario: Send + Sync {
    fn name(&self) -> &'static str;
    fn agents(&self) -> Vec<AgentSpec>;
    /// Enforcement mode name, or `None` when there is no contract channel.
    fn contract_mode(&self) -> Option<&'static str>;
    /// Overwrites `config` hyperparameters with this scenario's defaults.
    fn apply_defaults(&self, config: &mut TrainConfig);
}

const LEARNER: AgentSpec = AgentSpec::Learner { contracts: false };
const CONTRACT_LEARNER: AgentSpec = AgentSpec::Learner { contracts: true };

fn no_contract_defaults(config: &mut TrainConfig) {
    config.learning_rate = 0.000763;
    config.env_entropy = 0.001443;
    config.contract_entropy = 0.0;
    config.contract_weight = 0.0;
}

fn binding_defaults(config: &mut TrainConfig) {
    no_contract_defaults(config);
    config.contract_weight = 1.801635;
    config.contract_entropy = 0.000534;
}

pub struct Baseline;

impl Scenario for Baseline {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn agents(&self) -> Vec<AgentSpec> {
        vec![LEARNER; 3]
    }

    fn contract_mode(&self) -> Option<&'static str> {
        None
    }

    fn apply_defaults(&self, config: &mut TrainConfig) {
        no_contract_defaults(config);
    }
}

/// Learner 0, a bot copying learner 0, and an independent learner.
pub struct CopyBotTable;

impl Scenario for CopyBotTable {
    fn name(&self) -> &'static str {
        "copybot"
    }

    fn agents(&self) -> Vec<AgentSpec> {
        vec![LEARNER, AgentSpec::Scripted("copybot:0".into()), LEARNER]
    }

    fn contract_mode(&self) -> Option<&'static str> {
        None
    }

    fn apply_defaults(&self, config: &mut TrainConfig) {
        no_contract_defaults(config);
    }
}

/// Learners 0 and 1 may sign binding contracts; learner 2 may not.
pub struct BindingTwoPlusOne;

impl Scenario for BindingTwoPlusOne {
    fn name(&self) -> &'static str {
        "contracts-2"
    }

    fn agents(&self) -> Vec<AgentSpec> {
        vec![CONTRACT_LEARNER, CONTRACT_LEARNER, LEARNER]
    }

    fn contract_mode(&self) -> Option<&'static str> {
        Some("binding")
    }

    fn apply_defaults(&self, config: &mut TrainConfig) {
        binding_defaults(config);
    }
}

pub struct BindingThree;

impl Scenario for BindingThree {
    fn name(&self) -> &'static str {
        "contracts-3"
    }

    fn agents(&self) -> Vec<AgentSpec> {
        vec![CONTRACT_LEARNER; 3]
    }

    fn contract_mode(&self) -> Option<&'static str> {
        Some("binding")
    }

    fn apply_defaults(&self, config: &mut TrainConfig) {
        binding_defaults(config);
    }
}

/// Punishment-enforced contracts with a trembling hand during training.
pub struct PunishmentThree;

impl Scenario for PunishmentThree {
    fn name(&self) -> &'static str {
        "punishment"
    }

    fn agents(&self) -> Vec<AgentSpec> {
        vec![CONTRACT_LEARNER; 3]
    }

    fn contract_mode(&self) -> Option<&'static str> {
        Some("punishment")
    }

    fn apply_defaults(&self, config: &mut TrainConfig) {
        config.learning_rate = 0.002738;
        config.env_entropy = 0.004006;
        config.contract_weight = 3.371262;
        config.contract_entropy = 0.002278;
    }
}

pub const SCENARIOS: &[&str] = &["baseline", "copybot", "contracts-2", "contracts-3", "punishment"];

pub fn scenario(name: &str) -> Result<Box<dyn Scenario>, TrainingError> {
    match name {
        "baseline" => Ok(Box::new(Baseline)),
        "copybot" => Ok(Box::new(CopyBotTable)),
        "contracts-2" | "contracts-2+1" => Ok(Box::new(BindingTwoPlusOne)),
        "contracts-3" => Ok(Box::new(BindingThree)),
        "punishment" => Ok(Box::new(PunishmentThree)),
        other => Err(TrainingError::UnknownScenario(other.to_string())),
    }
}
