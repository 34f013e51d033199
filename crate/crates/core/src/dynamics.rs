//! Exact expected payoffs and simultaneous policy-gradient ascent on the
//! three-player games of [`crate::matrix_games`].

use std::io::Write;

use nalgebra::Matrix3;
use serde::Serialize;

use crate::error::DynamicsError;
use crate::matrix_games::{joint_from_index, ThreePlayerGame};

/// Probabilities of taking action 0 for players 0, 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyTriple(pub [f64; 3]);

impl PolicyTriple {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, DynamicsError> {
        for v in [x, y, z] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DynamicsError::InvalidProbability(v));
            }
        }
        Ok(Self([x, y, z]))
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }
}

/// Mixed partial derivative of `player`'s expected payoff with respect to
/// the action-0 probabilities of the players in `wrt` (each at most once).
/// With `wrt` empty this is the expected payoff itself. The expectation is
/// multilinear, so differentiating in a player's probability replaces its
/// weight with +1 for action 0 and -1 for action 1.
pub fn payoff_partial(game: &ThreePlayerGame, policy: &PolicyTriple, player: usize, wrt: &[usize]) -> f64 {
    let mut total = 0.0;
    for index in 0..8 {
        let actions = joint_from_index(index);
        let mut weight = 1.0;
        for (k, &a) in actions.iter().enumerate() {
            weight *= if wrt.contains(&k) {
                if a == 0 {
                    1.0
                } else {
                    -1.0
                }
            } else if a == 0 {
                policy.0[k]
            } else {
                1.0 - policy.0[k]
            };
        }
        total += weight * game.payoff(actions, player);
    }
    total
}

pub fn expected_payoffs(game: &ThreePlayerGame, policy: &PolicyTriple) -> [f64; 3] {
    [0, 1, 2].map(|player| payoff_partial(game, policy, player, &[]))
}

/// Derivative of `player`'s expected payoff with respect to its own
/// action-0 probability.
pub fn exact_gradient(game: &ThreePlayerGame, policy: &PolicyTriple, player: usize) -> f64 {
    payoff_partial(game, policy, player, &[player])
}

/// Jacobian of the ascent field `F_i = dE_i/dpi_i` in probability
/// coordinates.
pub fn field_jacobian(game: &ThreePlayerGame, policy: &PolicyTriple) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| {
        if i == j {
            0.0
        } else {
            payoff_partial(game, policy, i, &[i, j])
        }
    })
}

/// How a learner's action-0 probability is represented as a free parameter.
pub trait Parameterization: Send + Sync {
    fn name(&self) -> &'static str;
    fn to_param(&self, prob: f64) -> f64;
    fn to_prob(&self, param: f64) -> f64;
    /// `d prob / d param`.
    fn slope(&self, param: f64) -> f64;
    fn project(&self, param: f64) -> f64 {
        param
    }
}

/// The probability itself, projected back onto [0, 1] after each step.
pub struct DirectProbability;

impl Parameterization for DirectProbability {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn to_param(&self, prob: f64) -> f64 {
        prob
    }

    fn to_prob(&self, param: f64) -> f64 {
        param.clamp(0.0, 1.0)
    }

    fn slope(&self, _param: f64) -> f64 {
        1.0
    }

    fn project(&self, param: f64) -> f64 {
        param.clamp(0.0, 1.0)
    }
}

/// A logit passed through the sigmoid: a two-action softmax policy.
pub struct LogitSigmoid;

impl Parameterization for LogitSigmoid {
    fn name(&self) -> &'static str {
        "logit"
    }

    fn to_param(&self, prob: f64) -> f64 {
        (prob / (1.0 - prob)).ln()
    }

    fn to_prob(&self, param: f64) -> f64 {
        sigmoid(param)
    }

    fn slope(&self, param: f64) -> f64 {
        let s = sigmoid(param);
        s * (1.0 - s)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const PARAMETERIZATIONS: &[&str] = &["direct", "logit"];

pub fn parameterization(name: &str) -> Result<Box<dyn Parameterization>, DynamicsError> {
    match name {
        "direct" => Ok(Box::new(DirectProbability)),
        "logit" | "softmax" => Ok(Box::new(LogitSigmoid)),
        other => Err(DynamicsError::UnknownParameterization(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsConfig {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub parameterization: String,
    pub learners: [bool; 3],
    /// Action-0 probability of every non-learner.
    pub stubborn_policy: f64,
    /// Stop updating once every parameter moves less than this in one step.
    pub tolerance: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            n_steps: 10_000,
            parameterization: "logit".to_string(),
            learners: [true, true, false],
            stubborn_policy: 1.0,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub policy: PolicyTriple,
    pub payoffs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub points: Vec<TrajectoryPoint>,
    /// First step at which the update fell below tolerance, if it did.
    pub converged_at: Option<usize>,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectories are never empty")
    }
}

/// Simultaneous gradient ascent: every learner moves its own parameter by
/// `learning_rate` times the gradient of its own expected payoff.
/// Non-learners are pinned to `stubborn_policy`.
pub fn simulate_learning(
    game: &ThreePlayerGame,
    config: &DynamicsConfig,
    init: &PolicyTriple,
) -> Result<TrajectoryRecord, DynamicsError> {
    if !config.learners.iter().any(|&l| l) {
        return Err(DynamicsError::NoLearners);
    }
    if !(config.learning_rate > 0.0) {
        return Err(DynamicsError::InvalidLearningRate(config.learning_rate));
    }
    if !(0.0..=1.0).contains(&config.stubborn_policy) {
        return Err(DynamicsError::InvalidProbability(config.stubborn_policy));
    }
    let param = parameterization(&config.parameterization)?;
    let mut probs = init.0;
    for (k, prob) in probs.iter_mut().enumerate() {
        if !config.learners[k] {
            *prob = config.stubborn_policy;
        }
    }
    let mut theta = probs.map(|p| param.to_param(p));

    let mut points = Vec::with_capacity(config.n_steps + 1);
    let current = PolicyTriple(probs);
    points.push(TrajectoryPoint {
        step: 0,
        policy: current,
        payoffs: expected_payoffs(game, &current),
    });
    let mut converged_at = None;
    for step in 1..=config.n_steps {
        if converged_at.is_none() {
            let policy = PolicyTriple(probs);
            let grads = [0, 1, 2].map(|k| exact_gradient(game, &policy, k));
            let mut largest: f64 = 0.0;
            for k in 0..3 {
                if !config.learners[k] {
                    continue;
                }
                let next = param.project(theta[k] + config.learning_rate * grads[k] * param.slope(theta[k]));
                largest = largest.max((next - theta[k]).abs());
                theta[k] = next;
                probs[k] = param.to_prob(theta[k]);
            }
            if largest < config.tolerance {
                converged_at = Some(step);
            }
        }
        let policy = PolicyTriple(probs);
        points.push(TrajectoryPoint {
            step,
            policy,
            payoffs: expected_payoffs(game, &policy),
        });
    }
    Ok(TrajectoryRecord {
        points,
        converged_at,
    })
}

pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    runs: &[(usize, TrajectoryRecord)],
) -> std::io::Result<()> {
    writeln!(out, "run_id,step,x,y,z,r0,r1,r2")?;
    for (run_id, record) in runs {
        for point in &record.points {
            let [x, y, z] = point.policy.0;
            let [r0, r1, r2] = point.payoffs;
            writeln!(out, "{run_id},{},{x},{y},{z},{r0},{r1},{r2}", point.step)?;
        }
    }
    Ok(())
}

/// One arrow of the phase portrait over the first two players' policies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortraitArrow {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Ascent field of players 0 and 1 in probability coordinates on a
/// `resolution` x `resolution` grid, with player 2 fixed at `stubborn_policy`.
pub fn phase_portrait(game: &ThreePlayerGame, stubborn_policy: f64, resolution: usize) -> Vec<PortraitArrow> {
    let n = resolution.max(2);
    let mut arrows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = i as f64 / (n - 1) as f64;
            let y = j as f64 / (n - 1) as f64;
            let policy = PolicyTriple([x, y, stubborn_policy]);
            arrows.push(PortraitArrow {
                x,
                y,
                dx: exact_gradient(game, &policy, 0),
                dy: exact_gradient(game, &policy, 1),
            });
        }
    }
    arrows
}

pub fn write_portrait_csv<W: Write>(out: &mut W, arrows: &[PortraitArrow]) -> std::io::Result<()> {
    writeln!(out, "x,y,dx,dy")?;
    for a in arrows {
        writeln!(out, "{},{},{},{}", a.x, a.y, a.dx, a.dy)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Coordinate {
    Fixed(f64),
    /// Any value in [0, 1].
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    /// Some nearby direction moves away.
    Unstable,
    /// No direction moves away; directions along a family are neutral.
    Stable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub pattern: [Coordinate; 3],
    pub stability: Stability,
    /// Eigenvalues (re, im) of the Jacobian over the interior coordinates,
    /// taken at a representative point of the pattern.
    pub eigenvalues: Vec<(f64, f64)>,
}

fn eigenvalues(matrix: &nalgebra::DMatrix<f64>) -> Vec<(f64, f64)> {
    if matrix.nrows() == 0 {
        return Vec::new();
    }
    matrix
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect()
}

/// Stability of a fixed point of the three-learner ascent field.
/// Coordinates on the boundary are stable when the field pushes them into
/// the boundary; the rest are judged by the eigenvalues of the Jacobian
/// restricted to them.
pub fn assess_fixed_point(game: &ThreePlayerGame, point: &PolicyTriple) -> (Stability, Vec<(f64, f64)>) {
    let mut interior = Vec::new();
    let mut stability = Stability::Stable;
    for k in 0..3 {
        let prob = point.0[k];
        let push = exact_gradient(game, point, k);
        if prob <= 0.0 {
            if push > 0.0 {
                stability = Stability::Unstable;
            }
        } else if prob >= 1.0 {
            if push < 0.0 {
                stability = Stability::Unstable;
            }
        } else {
            interior.push(k);
        }
    }
    let jac = field_jacobian(game, point);
    let sub = nalgebra::DMatrix::from_fn(interior.len(), interior.len(), |a, b| {
        jac[(interior[a], interior[b])]
    });
    let eig = eigenvalues(&sub);
    if eig.iter().any(|&(re, _)| re > 1e-12) {
        stability = Stability::Unstable;
    }
    (stability, eig)
}

/// Analytic fixed points of three simultaneous learners in Odd One Out:
/// the uniform interior point and the boundary family where one player
/// always plays 0, one always plays 1 and the third is free.
pub fn fixed_point_report(game: &ThreePlayerGame) -> Result<Vec<FixedPoint>, DynamicsError> {
    if *game != ThreePlayerGame::odd_one_out() {
        return Err(DynamicsError::NumericOnly {
            p: game.p(),
            q: game.q(),
        });
    }
    let mut report = Vec::new();
    let centre = PolicyTriple([0.5; 3]);
    let (stability, eigenvalues) = assess_fixed_point(game, &centre);
    report.push(FixedPoint {
        pattern: [Coordinate::Fixed(0.5); 3],
        stability,
        eigenvalues,
    });
    for one in 0..3 {
        for zero in 0..3 {
            if zero == one {
                continue;
            }
            let free = 3 - one - zero;
            let mut pattern = [Coordinate::Free; 3];
            pattern[one] = Coordinate::Fixed(1.0);
            pattern[zero] = Coordinate::Fixed(0.0);
            let mut representative = [0.5; 3];
            representative[one] = 1.0;
            representative[zero] = 0.0;
            representative[free] = 0.5;
            let (stability, eigenvalues) = assess_fixed_point(game, &PolicyTriple(representative));
            report.push(FixedPoint {
                pattern,
                stability,
                eigenvalues,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AllianceOptimum {
    /// Probability with which each non-stubborn player matches the stubborn action.
    pub match_prob: f64,
    pub per_learner_value: f64,
    /// Every symmetric policy attains the optimum.
    pub degenerate: bool,
}

/// Best symmetric policy for the two non-stubborn players against a
/// deterministic stubborn player (player 2). The joint return is a
/// quadratic in the shared matching probability, maximised in closed form.
pub fn alliance_optimum(game: &ThreePlayerGame, stubborn_prob: f64) -> Result<AllianceOptimum, DynamicsError> {
    let stubborn_action = if stubborn_prob == 1.0 {
        0
    } else if stubborn_prob == 0.0 {
        1
    } else {
        return Err(DynamicsError::InvalidProbability(stubborn_prob));
    };
    let m = stubborn_action;
    let n = 1 - m;
    let u = |a: usize, b: usize| game.payoff([a, b, stubborn_action], 0);
    // Per-learner value v(t) = A t^2 + B t (1 - t) + C (1 - t)^2.
    let a = u(m, m);
    let b = 0.5 * (u(m, n) + u(n, m));
    let c = u(n, n);
    let value = |t: f64| a * t * t + 2.0 * b * t * (1.0 - t) + c * (1.0 - t) * (1.0 - t);
    let curvature = a - 2.0 * b + c;
    let linear = 2.0 * (b - c);
    let mut candidates = vec![0.0, 1.0];
    if curvature < 0.0 {
        let vertex = -linear / (2.0 * curvature);
        if (0.0..=1.0).contains(&vertex) {
            candidates.push(vertex);
        }
    }
    let degenerate = curvature.abs() < 1e-15 && linear.abs() < 1e-15;
    let (match_prob, per_learner_value) = candidates
        .into_iter()
        .map(|t| (t, value(t)))
        .fold((0.0, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best });
    Ok(AllianceOptimum {
        match_prob,
        per_learner_value,
        degenerate,
    })
}
