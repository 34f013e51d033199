//! Quick oracle checks over every module, used by the command-line
//! `verify` subcommand. Each check returns a pass flag and a short detail.

use rand::Rng;
use serde::Serialize;

use crate::contracts::{ContractOffer, OfferAlphabet};
use crate::dynamics::{alliance_optimum, exact_gradient, expected_payoffs, PolicyTriple};
use crate::gifting::{GiftAction, GiftingConfig, GiftingState};
use crate::matrix_games::{classify, reduce_two_player, DilemmaPayoffs, ThreePlayerGame};
use crate::nn::{Network, NetworkSpec, OfferFloor};
use crate::rng::stream_rng;
use crate::training::{compute_targets, loss_and_grad, AgentTrace, EnvChoice, LossCoefficients, OfferChoice, RmsProp};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        odd_one_out_gradient(seed),
        gradient_finite_differences(seed),
        named_reductions(),
        alliance_optima(),
        all_discard_is_nash(3, 2),
        offer_codec(),
        rmsprop_first_step(),
        a2c_gradient(seed),
    ]
}

pub fn odd_one_out_gradient(seed: u64) -> CheckResult {
    let game = ThreePlayerGame::odd_one_out();
    let mut rng = stream_rng(seed, 100);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let policy = PolicyTriple([rng.gen(), rng.gen(), rng.gen()]);
        let expected = 2.0 * (1.0 - policy.x() - policy.y()) / 3.0;
        worst = worst.max((exact_gradient(&game, &policy, 2) - expected).abs());
    }
    check("odd_one_out_gradient", worst <= 1e-12, format!("max error {worst:e}"))
}

pub fn gradient_finite_differences(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 101);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let game = ThreePlayerGame::new(rng.gen(), rng.gen()).expect("probabilities");
        let base = [rng.gen::<f64>(), rng.gen(), rng.gen()].map(|v| 0.01 + 0.98 * v);
        for k in 0..3 {
            let mut up = base;
            let mut down = base;
            up[k] += h;
            down[k] -= h;
            let fd = (expected_payoffs(&game, &PolicyTriple(up))[k] - expected_payoffs(&game, &PolicyTriple(down))[k]) / (2.0 * h);
            worst = worst.max((fd - exact_gradient(&game, &PolicyTriple(base), k)).abs());
        }
    }
    check("gradient_finite_differences", worst <= 1e-8, format!("max error {worst:e}"))
}

pub fn named_reductions() -> CheckResult {
    let reduced = |g: &ThreePlayerGame, c: usize| {
        let r = reduce_two_player(g, 2, 0.0).expect("valid reduction");
        classify(&DilemmaPayoffs::from_reduced(&r, c))
    };
    let matching = reduced(&ThreePlayerGame::matching(), 0);
    let odd = reduced(&ThreePlayerGame::odd_one_out(), 1);
    let ok = matching.is_dilemma
        && matching.strict
        && matching.fear
        && !matching.greed
        && odd.is_dilemma
        && !odd.strict
        && odd.greed
        && !odd.fear;
    check("named_reductions", ok, format!("matching {matching:?}, odd one out {odd:?}"))
}

pub fn alliance_optima() -> CheckResult {
    let odd = alliance_optimum(&ThreePlayerGame::odd_one_out(), 1.0).expect("analytic");
    let matching = alliance_optimum(&ThreePlayerGame::matching(), 1.0).expect("analytic");
    let ok = (odd.match_prob - 0.75).abs() <= 1e-6
        && (odd.per_learner_value - 0.375).abs() <= 1e-6
        && matching.per_learner_value == 0.5;
    check("alliance_optima", ok, format!("odd one out {odd:?}, matching {matching:?}"))
}

/// Every seating and every action sequence of one deviator against
/// all-discard opponents; the deviator never beats its 1/n draw share.
pub fn all_discard_is_nash(n_players: usize, m_chips: u32) -> CheckResult {
    let config = GiftingConfig {
        n_players,
        m_chips,
        observe_discards: true,
    };
    let sequences = (n_players as u64).pow(m_chips);
    let mut best: f64 = 0.0;
    let mut checked = 0usize;
    for seat in 0..n_players {
        let deviator = 0;
        let mut seat_of: Vec<usize> = (0..n_players).collect();
        seat_of.swap(0, seat);
        for code in 0..sequences {
            let mut state = GiftingState::with_seating(config, seat_of.clone()).expect("valid seating");
            let mut c = code;
            while !state.is_terminal() {
                let p = state.current_player().expect("not terminal");
                let action = if p == deviator {
                    let k = (c % n_players as u64) as usize;
                    c /= n_players as u64;
                    GiftAction::from_index(k, p, n_players)
                } else {
                    GiftAction::Discard
                };
                state.step(action).expect("legal");
            }
            best = best.max(state.score().expect("terminal").payoffs[deviator]);
            checked += 1;
        }
    }
    let share = 1.0 / n_players as f64;
    check(
        "all_discard_is_nash",
        best <= share + 1e-12,
        format!("{checked} deviations, best deviator payoff {best}"),
    )
}

pub fn offer_codec() -> CheckResult {
    let alphabet = OfferAlphabet::new(3);
    let mut ok = alphabet.size() == 19;
    for player in 0..3 {
        for index in 0..alphabet.size() {
            let offer = alphabet.decode(player, index).expect("in range");
            ok &= alphabet.encode(player, &offer).expect("well-formed") == index;
            ok &= (index == 0) == (offer == ContractOffer::NoOffer);
        }
    }
    check("offer_codec", ok, format!("{} offers per player", alphabet.size()))
}

pub fn rmsprop_first_step() -> CheckResult {
    let lr = 0.01;
    let mut opt = RmsProp::new(1, lr, 0.99, 0.001, 0.0);
    let mut p = [0.0];
    opt.step(&mut p, &[1.0]);
    let expected = -lr / (0.01f64 + 0.001).sqrt();
    check(
        "rmsprop_first_step",
        (p[0] - expected).abs() <= 1e-12,
        format!("step {} expected {expected}", p[0]),
    )
}

/// A toy recurrent network with a synthetic batch of episodes that uses
/// every loss term, including trembling-hand floors.
pub fn toy_batch(seed: u64) -> (Network, Vec<f64>, Vec<AgentTrace>) {
    let spec = NetworkSpec {
        input_dim: 4,
        hidden: vec![5, 5],
        lstm: 5,
        n_actions: 3,
        n_offers: 4,
    };
    let net = Network::new(spec);
    let mut rng = stream_rng(seed, 102);
    let params: Vec<f64> = net.init_params(&mut rng).iter().map(|w| w + 0.3 * (rng.gen::<f64>() - 0.5)).collect();
    let traces = (0..3)
        .map(|_| {
            let len = 6;
            let mut trace = AgentTrace::default();
            for t in 0..len {
                trace.observations.push((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
                trace.env.push((t % 2 == 0).then(|| {
                    let mut mask = vec![true, rng.gen_bool(0.5), true];
                    mask[1] |= t == 0;
                    let allowed: Vec<usize> = (0..3).filter(|&k| mask[k]).collect();
                    EnvChoice {
                        action: allowed[rng.gen_range(0..allowed.len())],
                        mask,
                    }
                }));
                trace.offers.push((t != 3).then(|| OfferChoice {
                    index: rng.gen_range(0..4),
                    floor: (t % 3 == 1).then(|| OfferFloor {
                        forced: rng.gen_range(0..4),
                        prob: 0.5,
                    }),
                }));
                trace.rewards.push(if t + 1 == len { rng.gen_range(0.0..1.0) } else { 0.0 });
                trace.values.push(0.0);
            }
            trace
        })
        .collect();
    (net, params, traces)
}

pub const TOY_COEFFICIENTS: LossCoefficients = LossCoefficients {
    env_entropy: 0.05,
    value_coef: 0.5,
    contract_weight: 1.8,
    contract_entropy: 0.03,
};

/// Relative error between the analytic A2C gradient and central finite
/// differences on [`toy_batch`].
pub fn a2c_gradient_error(seed: u64) -> f64 {
    let (net, params, traces) = toy_batch(seed);
    let refs: Vec<&AgentTrace> = traces.iter().collect();
    let targets = compute_targets(&net, &params, &refs, 0.9).expect("toy dimensions");
    let mut grad = vec![0.0; params.len()];
    loss_and_grad(&net, &params, &refs, &targets, &TOY_COEFFICIENTS, true, &mut grad).expect("toy dimensions");
    let mut scratch = vec![0.0; params.len()];
    let mut loss_at = |w: &[f64]| {
        loss_and_grad(&net, w, &refs, &targets, &TOY_COEFFICIENTS, true, &mut scratch)
            .expect("toy dimensions")
            .total
    };
    let h = 1e-5;
    let mut diff = 0.0;
    let mut norm_a: f64 = 0.0;
    let mut norm_b: f64 = 0.0;
    let mut w = params.clone();
    for i in 0..params.len() {
        w[i] = params[i] + h;
        let up = loss_at(&w);
        w[i] = params[i] - h;
        let down = loss_at(&w);
        w[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        diff += (fd - grad[i]).powi(2);
        norm_a += fd * fd;
        norm_b += grad[i] * grad[i];
    }
    diff.sqrt() / norm_a.sqrt().max(norm_b.sqrt()).max(1e-300)
}

pub fn a2c_gradient(seed: u64) -> CheckResult {
    let err = a2c_gradient_error(seed);
    check("a2c_gradient", err < 1e-4, format!("relative error {err:e}"))
}
