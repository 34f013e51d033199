//! Agents that can sit at a Gifting table: neural learners and scripted
//! bots. Scripted bots are trait objects looked up by name.

use rand::{Rng, RngCore};

use crate::error::TrainingError;
use crate::gifting::{GiftAction, GiftingState};

/// What a scripted agent sees when it is its turn.
pub struct AgentView<'a> {
    pub player: usize,
    pub state: &'a GiftingState,
    /// Most recent environment action of every player this episode.
    pub last_actions: &'a [Option<GiftAction>],
}

pub trait ScriptedPolicy: Send + Sync {
    fn name(&self) -> String;
    fn act(&self, view: &AgentView<'_>, rng: &mut dyn RngCore) -> GiftAction;
}

/// Mimics the target's latest action, returning gifts made to the bot.
pub fn copy_bot_act(last_target_action: Option<GiftAction>, bot: usize, target: usize) -> GiftAction {
    match last_target_action {
        None | Some(GiftAction::Discard) => GiftAction::Discard,
        Some(GiftAction::GiftTo(r)) if r == bot => GiftAction::GiftTo(target),
        Some(GiftAction::GiftTo(r)) => GiftAction::GiftTo(r),
    }
}

/// Action 0 with probability `prob`, otherwise action 1.
pub fn stubborn_act<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> usize {
    if prob >= 1.0 {
        0
    } else if prob <= 0.0 {
        1
    } else if rng.gen::<f64>() < prob {
        0
    } else {
        1
    }
}

pub struct CopyBot {
    pub target: usize,
}

impl ScriptedPolicy for CopyBot {
    fn name(&self) -> String {
        format!("copybot:{}", self.target)
    }

    fn act(&self, view: &AgentView<'_>, _rng: &mut dyn RngCore) -> GiftAction {
        copy_bot_act(view.last_actions[self.target], view.player, self.target)
    }
}

pub struct AlwaysDiscard;

impl ScriptedPolicy for AlwaysDiscard {
    fn name(&self) -> String {
        "discard".into()
    }

    fn act(&self, _view: &AgentView<'_>, _rng: &mut dyn RngCore) -> GiftAction {
        GiftAction::Discard
    }
}

pub struct UniformRandom;

impl ScriptedPolicy for UniformRandom {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, view: &AgentView<'_>, rng: &mut dyn RngCore) -> GiftAction {
        let n = view.state.n_players();
        GiftAction::from_index(rng.gen_range(0..n), view.player, n)
    }
}

/// Occupant of one player slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentSpec {
    /// Neural learner; `contracts` enables its contract head.
    Learner { contracts: bool },
    Scripted(String),
}

impl AgentSpec {
    pub fn is_learner(&self) -> bool {
        matches!(self, AgentSpec::Learner { .. })
    }

    pub fn uses_contracts(&self) -> bool {
        matches!(self, AgentSpec::Learner { contracts: true })
    }
}

/// Names accepted by [`scripted_policy`]; `copybot` takes an optional
/// `:<target>` suffix.
pub const SCRIPTED_POLICIES: &[&str] = &["copybot", "discard", "random"];

pub fn scripted_policy(name: &str) -> Result<Box<dyn ScriptedPolicy>, TrainingError> {
    let (base, arg) = match name.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    match (base, arg) {
        ("copybot", arg) => {
            let target = match arg {
                Some(a) => a.parse().map_err(|_| TrainingError::UnknownAgent(name.to_string()))?,
                None => 0,
            };
            Ok(Box::new(CopyBot { target }))
        }
        ("discard", None) => Ok(Box::new(AlwaysDiscard)),
        ("random", None) => Ok(Box::new(UniformRandom)),
        _ => Err(TrainingError::UnknownAgent(name.to_string())),
    }
}

/// Parses `learner`, `learner-nc` (no contract head) or a scripted name.
pub fn parse_agent(name: &str) -> Result<AgentSpec, TrainingError> {
    match name {
        "learner" => Ok(AgentSpec::Learner { contracts: true }),
        "learner-nc" => Ok(AgentSpec::Learner { contracts: false }),
        other => {
            scripted_policy(other)?;
            Ok(AgentSpec::Scripted(other.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gifting::GiftingConfig;
    use crate::rng::stream_rng;

    #[test]
    fn copy_bot_reciprocates_and_mimics() {
        assert_eq!(copy_bot_act(Some(GiftAction::GiftTo(1)), 1, 0), GiftAction::GiftTo(0));
        assert_eq!(copy_bot_act(Some(GiftAction::Discard), 1, 0), GiftAction::Discard);
        assert_eq!(copy_bot_act(None, 1, 0), GiftAction::Discard);
        assert_eq!(copy_bot_act(Some(GiftAction::GiftTo(2)), 1, 0), GiftAction::GiftTo(2));
    }

    #[test]
    fn copy_bot_through_the_trait() {
        let state = GiftingState::with_seating(GiftingConfig::default(), vec![1, 0, 2]).unwrap();
        let bot = scripted_policy("copybot:0").unwrap();
        let last = [Some(GiftAction::GiftTo(1)), None, None];
        let view = AgentView { player: 1, state: &state, last_actions: &last };
        assert_eq!(bot.act(&view, &mut stream_rng(0, 0)), GiftAction::GiftTo(0));
        assert_eq!(bot.name(), "copybot:0");
    }

    #[test]
    fn stubborn_extremes_and_frequency() {
        let mut rng = stream_rng(4, 0);
        assert!((0..100).all(|_| stubborn_act(1.0, &mut rng) == 0));
        assert!((0..100).all(|_| stubborn_act(0.0, &mut rng) == 1));
        let zeros = (0..10_000).filter(|_| stubborn_act(0.5, &mut rng) == 0).count();
        assert!((zeros as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn registry_names() {
        assert_eq!(parse_agent("learner").unwrap(), AgentSpec::Learner { contracts: true });
        assert_eq!(parse_agent("learner-nc").unwrap(), AgentSpec::Learner { contracts: false });
        assert_eq!(parse_agent("random").unwrap(), AgentSpec::Scripted("random".into()));
        assert!(parse_agent("oracle").is_err());
        assert!(parse_agent("copybot:x").is_err());
    }
}
