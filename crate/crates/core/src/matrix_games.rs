//! Symmetric two-action matrix games: the p-q family of three-player
//! zero-sum games, two-player reductions against a stubborn player, and
//! social-dilemma classification.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::GameError;
use crate::rng::stream_rng;

/// A two-player, two-action game. `u1[a][b]` is the row player's payoff when
/// the row player plays `a` and the column player plays `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPlayerGame {
    pub u1: [[f64; 2]; 2],
    pub u2: [[f64; 2]; 2],
}

impl TwoPlayerGame {
    /// Draws every payoff entry iid from U(0, 1).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u1 = [[0.0; 2]; 2];
        let mut u2 = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                u1[a][b] = rng.gen::<f64>();
                u2[a][b] = rng.gen::<f64>();
            }
        }
        Self { u1, u2 }
    }

    /// Payoff sums `u1 + u2` for the four outcomes.
    pub fn outcome_sums(&self) -> [f64; 4] {
        let mut sums = [0.0; 4];
        for a in 0..2 {
            for b in 0..2 {
                sums[2 * a + b] = self.u1[a][b] + self.u2[a][b];
            }
        }
        sums
    }
}

/// Smallest epsilon for which the game is epsilon-constant-sum: the spread
/// between the largest and smallest outcome payoff sums.
pub fn epsilon_of_game(game: &TwoPlayerGame) -> f64 {
    let sums = game.outcome_sums();
    let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Joint action of the three players, each in {0, 1}.
pub type JointAction = [usize; 3];

/// Symmetric three-player zero-sum (constant-sum 1) game parameterized by
/// `p` (payoff of the odd player out when the others play 0) and `q` (the
/// same when the others play 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePlayerGame {
    p: f64,
    q: f64,
    table: [[f64; 3]; 8],
}

#[inline]
pub fn joint_index(actions: JointAction) -> usize {
    actions[0] * 4 + actions[1] * 2 + actions[2]
}

#[inline]
pub fn joint_from_index(index: usize) -> JointAction {
    [(index >> 2) & 1, (index >> 1) & 1, index & 1]
}

impl ThreePlayerGame {
    pub fn new(p: f64, q: f64) -> Result<Self, GameError> {
        for (name, value) in [("p", p), ("q", q)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(GameError::ParameterOutOfRange { name, value });
            }
        }
        let third = 1.0 / 3.0;
        let mut table = [[0.0; 3]; 8];
        for (index, row) in table.iter_mut().enumerate() {
            let actions = joint_from_index(index);
            let zeros = actions.iter().filter(|&&a| a == 0).count();
            *row = match zeros {
                0 | 3 => [third; 3],
                // Two players on action 0, one odd player out on action 1.
                2 => odd_one_out_row(actions, 1, p),
                // Two players on action 1, one odd player out on action 0.
                _ => odd_one_out_row(actions, 0, q),
            };
        }
        Ok(Self { p, q, table })
    }

    /// p = q = 1: the odd player out wins outright.
    pub fn odd_one_out() -> Self {
        Self::new(1.0, 1.0).expect("valid parameters")
    }

    /// p = q = 0: the odd player out loses outright.
    pub fn matching() -> Self {
        Self::new(0.0, 0.0).expect("valid parameters")
    }

    /// p = q = 1/3: every outcome pays 1/3 to everyone.
    pub fn constant() -> Self {
        Self::new(1.0 / 3.0, 1.0 / 3.0).expect("valid parameters")
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn payoffs(&self, actions: JointAction) -> [f64; 3] {
        self.table[joint_index(actions)]
    }

    pub fn payoff(&self, actions: JointAction, player: usize) -> f64 {
        self.table[joint_index(actions)][player]
    }
}

fn odd_one_out_row(actions: JointAction, odd_action: usize, odd_payoff: f64) -> [f64; 3] {
    let rest = (1.0 - odd_payoff) / 2.0;
    let mut row = [rest; 3];
    for (player, &a) in actions.iter().enumerate() {
        if a == odd_action {
            row[player] = odd_payoff;
        }
    }
    row
}

/// Symmetric two-player game left over after fixing one player's policy.
/// `u[a][b]` is the payoff of a remaining player playing `a` against the
/// other remaining player playing `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedGame {
    pub u: [[f64; 2]; 2],
    pub stubborn_prob: f64,
}

/// Reduces the game to its two non-stubborn players. The stubborn player
/// takes action 0 with probability `stubborn_prob`.
pub fn reduce_two_player(
    game: &ThreePlayerGame,
    stubborn_player: usize,
    stubborn_prob: f64,
) -> Result<ReducedGame, GameError> {
    if stubborn_player > 2 {
        return Err(GameError::InvalidPlayer(stubborn_player));
    }
    if !(0.0..=1.0).contains(&stubborn_prob) {
        return Err(GameError::ParameterOutOfRange {
            name: "stubborn_prob",
            value: stubborn_prob,
        });
    }
    let others: Vec<usize> = (0..3).filter(|&k| k != stubborn_player).collect();
    let (me, other) = (others[0], others[1]);
    let mut u = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut expected = 0.0;
            for (s, weight) in [(0usize, stubborn_prob), (1, 1.0 - stubborn_prob)] {
                let mut actions = [0; 3];
                actions[me] = a;
                actions[other] = b;
                actions[stubborn_player] = s;
                expected += weight * game.payoff(actions, me);
            }
            u[a][b] = expected;
        }
    }
    Ok(ReducedGame { u, stubborn_prob })
}

/// The R/S/T/P view of a reduced game under one choice of which action
/// means "cooperate".
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DilemmaPayoffs {
    pub r: f64,
    pub s: f64,
    pub t: f64,
    pub p: f64,
    pub cooperate_action: usize,
}

impl DilemmaPayoffs {
    pub fn from_reduced(game: &ReducedGame, cooperate_action: usize) -> Self {
        let c = cooperate_action;
        let d = 1 - c;
        Self {
            r: game.u[c][c],
            s: game.u[c][d],
            t: game.u[d][c],
            p: game.u[d][d],
            cooperate_action,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DilemmaClassification {
    pub is_dilemma: bool,
    pub greed: bool,
    pub fear: bool,
    pub strict: bool,
}

/// Social-dilemma test. All inequalities are strict, so ties never count.
pub fn classify(payoffs: &DilemmaPayoffs) -> DilemmaClassification {
    let DilemmaPayoffs { r, s, t, p, .. } = *payoffs;
    let greed = t > r;
    let fear = p > s;
    let is_dilemma = r > p && r > s && (greed || fear);
    DilemmaClassification {
        is_dilemma,
        greed,
        fear,
        strict: is_dilemma && 2.0 * r > t + s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub stubborn_prob: f64,
    /// Indexed by the cooperate action.
    pub labelings: [DilemmaClassification; 2],
}

impl GridPoint {
    pub fn has_dilemma(&self) -> bool {
        self.labelings.iter().any(|c| c.is_dilemma)
    }

    pub fn has_strict_dilemma(&self) -> bool {
        self.labelings.iter().any(|c| c.strict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllianceDilemmaReport {
    pub points: Vec<GridPoint>,
    pub has_dilemma: bool,
    pub has_strict_dilemma: bool,
}

/// Index of the stubborn player used in reports.
pub const REPORT_STUBBORN_PLAYER: usize = 2;

pub fn detect_alliance_dilemma(
    game: &ThreePlayerGame,
    grid_step: f64,
) -> Result<AllianceDilemmaReport, GameError> {
    detect_with_stubborn(game, grid_step, REPORT_STUBBORN_PLAYER)
}

pub fn detect_with_stubborn(
    game: &ThreePlayerGame,
    grid_step: f64,
    stubborn_player: usize,
) -> Result<AllianceDilemmaReport, GameError> {
    let intervals = grid_intervals(grid_step)?;
    let mut points = Vec::with_capacity(intervals + 1);
    for k in 0..=intervals {
        let stubborn_prob = k as f64 / intervals as f64;
        let reduced = reduce_two_player(game, stubborn_player, stubborn_prob)?;
        let labelings = [0, 1].map(|c| classify(&DilemmaPayoffs::from_reduced(&reduced, c)));
        points.push(GridPoint {
            stubborn_prob,
            labelings,
        });
    }
    let has_dilemma = points.iter().any(GridPoint::has_dilemma);
    let has_strict_dilemma = points.iter().any(GridPoint::has_strict_dilemma);
    Ok(AllianceDilemmaReport {
        points,
        has_dilemma,
        has_strict_dilemma,
    })
}

fn grid_intervals(grid_step: f64) -> Result<usize, GameError> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(GameError::InvalidGridStep(grid_step));
    }
    let intervals = (1.0 / grid_step).round();
    if ((intervals * grid_step) - 1.0).abs() > 1e-9 {
        return Err(GameError::InvalidGridStep(grid_step));
    }
    Ok(intervals as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountingRecord {
    pub game_index: usize,
    pub p: f64,
    pub q: f64,
    pub has_dilemma: bool,
    pub has_strict: bool,
}

/// Dilemma frequency at one stubborn-probability gridpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StubbornBin {
    pub stubborn_prob: f64,
    /// Games with a dilemma (either labeling) at this gridpoint.
    pub games_with_dilemma: usize,
    /// Labelings (out of 2 per game) that fire at this gridpoint.
    pub dilemma_labelings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountingSummary {
    pub n_games: usize,
    pub seed: u64,
    pub dilemma_fraction: f64,
    /// Strict alliance dilemmas as a share of dilemma-containing games.
    pub strict_fraction_of_dilemmas: f64,
    /// Strict alliance dilemmas as a share of all sampled games.
    pub strict_fraction_of_games: f64,
    pub records: Vec<CountingRecord>,
    pub histogram: Vec<StubbornBin>,
}

/// Samples `n_games` games with p, q iid U(0, 1) and checks each for an
/// alliance dilemma on the 0.1 stubborn grid. Game `i` draws from its own
/// RNG stream, so results do not depend on evaluation order.
pub fn run_counting_experiment(n_games: usize, seed: u64) -> Result<CountingSummary, GameError> {
    if n_games == 0 {
        return Err(GameError::EmptyExperiment);
    }
    let mut records = Vec::with_capacity(n_games);
    let mut histogram: Vec<StubbornBin> = (0..=10)
        .map(|k| StubbornBin {
            stubborn_prob: k as f64 / 10.0,
            games_with_dilemma: 0,
            dilemma_labelings: 0,
        })
        .collect();
    for game_index in 0..n_games {
        let mut rng: ChaCha8Rng = stream_rng(seed, game_index as u64);
        let p: f64 = rng.gen();
        let q: f64 = rng.gen();
        let game = ThreePlayerGame::new(p, q)?;
        let report = detect_alliance_dilemma(&game, 0.1)?;
        for (bin, point) in histogram.iter_mut().zip(&report.points) {
            if point.has_dilemma() {
                bin.games_with_dilemma += 1;
            }
            bin.dilemma_labelings += point.labelings.iter().filter(|c| c.is_dilemma).count();
        }
        records.push(CountingRecord {
            game_index,
            p,
            q,
            has_dilemma: report.has_dilemma,
            has_strict: report.has_strict_dilemma,
        });
    }
    let dilemmas = records.iter().filter(|r| r.has_dilemma).count();
    let strict = records.iter().filter(|r| r.has_strict).count();
    Ok(CountingSummary {
        n_games,
        seed,
        dilemma_fraction: dilemmas as f64 / n_games as f64,
        strict_fraction_of_dilemmas: if dilemmas == 0 {
            0.0
        } else {
            strict as f64 / dilemmas as f64
        },
        strict_fraction_of_games: strict as f64 / n_games as f64,
        records,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Histogram of `epsilon_of_game` over `n_games` sampled two-player games,
/// with `n_bins` equal bins covering [0, 2].
pub fn run_epsilon_histogram(
    n_games: usize,
    n_bins: usize,
    seed: u64,
) -> Result<Vec<HistogramBin>, GameError> {
    if n_games == 0 {
        return Err(GameError::EmptyExperiment);
    }
    if n_bins < 2 {
        return Err(GameError::TooFewBins(n_bins));
    }
    let width = 2.0 / n_bins as f64;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|k| HistogramBin {
            bin_lo: k as f64 * width,
            bin_hi: (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for game_index in 0..n_games {
        let mut rng = stream_rng(seed, game_index as u64);
        let eps = epsilon_of_game(&TwoPlayerGame::sample(&mut rng));
        let k = ((eps / width) as usize).min(n_bins - 1);
        bins[k].count += 1;
    }
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THIRD: f64 = 1.0 / 3.0;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn all_zero_and_all_one_rows_are_a_three_way_split() {
        for (p, q) in [(0.0, 0.0), (0.2, 0.9), (1.0, 1.0)] {
            let game = ThreePlayerGame::new(p, q).unwrap();
            assert_eq!(game.payoffs([0, 0, 0]), [THIRD; 3]);
            assert_eq!(game.payoffs([1, 1, 1]), [THIRD; 3]);
        }
    }

    #[test]
    fn odd_one_out_row_matches_table() {
        let game = ThreePlayerGame::odd_one_out();
        assert_eq!(game.payoffs([1, 0, 0]), [1.0, 0.0, 0.0]);
        assert_eq!(game.payoffs([0, 1, 1]), [1.0, 0.0, 0.0]);
        let game = ThreePlayerGame::new(0.4, 0.7).unwrap();
        assert!(close(game.payoffs([0, 0, 1])[2], 0.4));
        assert!(close(game.payoffs([0, 0, 1])[0], 0.3));
        assert!(close(game.payoffs([1, 0, 1])[1], 0.7));
        assert!(close(game.payoffs([1, 0, 1])[0], 0.15));
    }

    #[test]
    fn constant_game_is_flat() {
        let game = ThreePlayerGame::constant();
        for index in 0..8 {
            for v in game.payoffs(joint_from_index(index)) {
                assert!(close(v, THIRD));
            }
        }
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        assert!(ThreePlayerGame::new(-0.1, 0.5).is_err());
        assert!(ThreePlayerGame::new(0.5, 1.01).is_err());
        assert!(ThreePlayerGame::new(f64::NAN, 0.5).is_err());
    }

    // Independent oracle: read the rows of the payoff table directly.
    fn enumerate_reduced(game: &ThreePlayerGame, stubborn_action: usize) -> [[f64; 2]; 2] {
        let mut u = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                u[a][b] = game.payoffs([a, b, stubborn_action])[0];
            }
        }
        u
    }

    #[test]
    fn matching_reduction_against_stubborn_one() {
        let game = ThreePlayerGame::matching();
        let reduced = reduce_two_player(&game, 2, 0.0).unwrap();
        assert_eq!(reduced.u, enumerate_reduced(&game, 1));
        assert!(close(reduced.u[0][0], 0.5));
        assert!(close(reduced.u[1][1], THIRD));
        assert!(close(reduced.u[0][1], 0.0));
        assert!(close(reduced.u[1][0], 0.5));
    }

    #[test]
    fn odd_one_out_reduction_against_stubborn_one() {
        let game = ThreePlayerGame::odd_one_out();
        let reduced = reduce_two_player(&game, 2, 0.0).unwrap();
        assert_eq!(reduced.u, enumerate_reduced(&game, 1));
        assert!(close(reduced.u[1][1], THIRD));
        assert!(close(reduced.u[0][0], 0.0));
        assert!(close(reduced.u[1][0], 0.0));
        assert!(close(reduced.u[0][1], 1.0));
    }

    #[test]
    fn half_stubborn_averages_rows() {
        let game = ThreePlayerGame::new(0.8, 0.15).unwrap();
        let reduced = reduce_two_player(&game, 2, 0.5).unwrap();
        let zero = enumerate_reduced(&game, 0);
        let one = enumerate_reduced(&game, 1);
        for a in 0..2 {
            for b in 0..2 {
                assert!(close(reduced.u[a][b], 0.5 * (zero[a][b] + one[a][b])));
            }
        }
    }

    #[test]
    fn reduction_rejects_bad_inputs() {
        let game = ThreePlayerGame::matching();
        assert!(reduce_two_player(&game, 3, 0.5).is_err());
        assert!(reduce_two_player(&game, 0, 1.5).is_err());
    }

    #[test]
    fn canonical_prisoners_dilemma() {
        let c = classify(&DilemmaPayoffs {
            r: 3.0,
            s: 0.0,
            t: 5.0,
            p: 1.0,
            cooperate_action: 0,
        });
        assert_eq!(
            c,
            DilemmaClassification {
                is_dilemma: true,
                greed: true,
                fear: true,
                strict: true
            }
        );
    }

    #[test]
    fn matching_is_strict_fear_dilemma() {
        let reduced = reduce_two_player(&ThreePlayerGame::matching(), 2, 0.0).unwrap();
        // Cooperating means taking the action opposite to the stubborn player.
        let payoffs = DilemmaPayoffs::from_reduced(&reduced, 0);
        assert!(close(payoffs.r, 0.5) && close(payoffs.s, 0.0));
        assert!(close(payoffs.t, 0.5) && close(payoffs.p, THIRD));
        let c = classify(&payoffs);
        assert!(c.is_dilemma && c.fear && !c.greed && c.strict);
    }

    #[test]
    fn odd_one_out_is_non_strict_greed_dilemma() {
        let reduced = reduce_two_player(&ThreePlayerGame::odd_one_out(), 2, 0.0).unwrap();
        let payoffs = DilemmaPayoffs::from_reduced(&reduced, 1);
        assert!(close(payoffs.r, THIRD) && close(payoffs.s, 0.0));
        assert!(close(payoffs.t, 1.0) && close(payoffs.p, 0.0));
        let c = classify(&payoffs);
        assert!(c.is_dilemma && c.greed && !c.fear && !c.strict);
    }

    #[test]
    fn ties_do_not_count() {
        let c = classify(&DilemmaPayoffs {
            r: 1.0,
            s: 0.0,
            t: 1.0,
            p: 0.0,
            cooperate_action: 0,
        });
        assert!(!c.greed && !c.fear && !c.is_dilemma);
    }

    #[test]
    fn named_games_contain_alliance_dilemmas() {
        let ooo = detect_alliance_dilemma(&ThreePlayerGame::odd_one_out(), 0.1).unwrap();
        assert!(ooo.has_dilemma);
        assert_eq!(ooo.points.len(), 11);
        let matching = detect_alliance_dilemma(&ThreePlayerGame::matching(), 0.1).unwrap();
        assert!(matching.has_dilemma && matching.has_strict_dilemma);
        let flat = detect_alliance_dilemma(&ThreePlayerGame::constant(), 0.1).unwrap();
        assert!(!flat.has_dilemma && !flat.has_strict_dilemma);
    }

    #[test]
    fn grid_step_must_divide_one() {
        let game = ThreePlayerGame::matching();
        assert!(detect_alliance_dilemma(&game, 0.3).is_err());
        assert!(detect_alliance_dilemma(&game, 0.0).is_err());
        assert_eq!(detect_alliance_dilemma(&game, 0.25).unwrap().points.len(), 5);
    }

    #[test]
    fn epsilon_examples() {
        let constant = TwoPlayerGame {
            u1: [[0.2, 0.7], [0.5, 0.0]],
            u2: [[0.8, 0.3], [0.5, 1.0]],
        };
        assert!(close(epsilon_of_game(&constant), 0.0));
        let spread = TwoPlayerGame {
            u1: [[0.1, 0.4], [0.6, 0.7]],
            u2: [[0.1, 0.5], [0.5, 0.7]],
        };
        assert!(close(epsilon_of_game(&spread), 1.2));
    }

    #[test]
    fn single_game_histogram_has_one_entry() {
        let bins = run_epsilon_histogram(1, 20, 3).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 1);
        assert_eq!(bins.iter().filter(|b| b.count == 1).count(), 1);
        assert!(run_epsilon_histogram(0, 20, 3).is_err());
        assert!(run_epsilon_histogram(10, 1, 3).is_err());
    }

    #[test]
    fn counting_is_deterministic() {
        let a = run_counting_experiment(200, 11).unwrap();
        let b = run_counting_experiment(200, 11).unwrap();
        assert_eq!(a, b);
        assert!(run_counting_experiment(0, 11).is_err());
    }

    const PERMUTATIONS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];

    proptest! {
        #[test]
        fn payoffs_sum_to_one(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let game = ThreePlayerGame::new(p, q).unwrap();
            for index in 0..8 {
                let row = game.payoffs(joint_from_index(index));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= f64::EPSILON);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn table_is_player_symmetric(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let game = ThreePlayerGame::new(p, q).unwrap();
            for index in 0..8 {
                let actions = joint_from_index(index);
                let payoffs = game.payoffs(actions);
                for perm in PERMUTATIONS {
                    // Player perm[i] takes the seat of player i.
                    let mut moved = [0; 3];
                    for i in 0..3 {
                        moved[perm[i]] = actions[i];
                    }
                    let permuted = game.payoffs(moved);
                    for i in 0..3 {
                        prop_assert_eq!(permuted[perm[i]], payoffs[i]);
                    }
                }
            }
        }

        #[test]
        fn reduced_game_is_symmetric_for_every_stubborn_index(
            p in 0.0f64..=1.0, q in 0.0f64..=1.0, s in 0.0f64..=1.0
        ) {
            let game = ThreePlayerGame::new(p, q).unwrap();
            let base = reduce_two_player(&game, 2, s).unwrap();
            for stubborn in 0..3 {
                let reduced = reduce_two_player(&game, stubborn, s).unwrap();
                let others: Vec<usize> = (0..3).filter(|&k| k != stubborn).collect();
                for a in 0..2 {
                    for b in 0..2 {
                        prop_assert!((reduced.u[a][b] - base.u[a][b]).abs() < 1e-15);
                        // The second remaining player's payoff at (a, b) is u[b][a].
                        let mut actions = [0; 3];
                        actions[others[0]] = a;
                        actions[others[1]] = b;
                        let mut expected = 0.0;
                        for (st, w) in [(0, s), (1, 1.0 - s)] {
                            actions[stubborn] = st;
                            expected += w * game.payoff(actions, others[1]);
                        }
                        prop_assert!((expected - reduced.u[b][a]).abs() < 1e-15);
                    }
                }
            }
        }

        #[test]
        fn labeling_brute_force_agrees(p in 0.0f64..=1.0, q in 0.0f64..=1.0, s in 0.0f64..=1.0) {
            let game = ThreePlayerGame::new(p, q).unwrap();
            let reduced = reduce_two_player(&game, 2, s).unwrap();
            let u = reduced.u;
            let oracle = (0..2).any(|c| {
                let d = 1 - c;
                let (r, sk, t, pn) = (u[c][c], u[c][d], u[d][c], u[d][d]);
                r > pn && r > sk && (t > r || pn > sk)
            });
            let fired = (0..2).any(|c| classify(&DilemmaPayoffs::from_reduced(&reduced, c)).is_dilemma);
            prop_assert_eq!(oracle, fired);
        }

        #[test]
        fn classification_invariants(r in -1.0f64..1.0, s in -1.0f64..1.0, t in -1.0f64..1.0, pn in -1.0f64..1.0) {
            let c = classify(&DilemmaPayoffs { r, s, t, p: pn, cooperate_action: 0 });
            prop_assert_eq!(c.greed, t > r);
            prop_assert_eq!(c.fear, pn > s);
            prop_assert_eq!(c.is_dilemma, r > pn && r > s && (c.greed || c.fear));
            prop_assert_eq!(c.strict, c.is_dilemma && 2.0 * r > t + s);
        }

        #[test]
        fn detection_ignores_stubborn_index(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let game = ThreePlayerGame::new(p, q).unwrap();
            let base = detect_with_stubborn(&game, 0.1, 0).unwrap();
            for k in 1..3 {
                prop_assert_eq!(&detect_with_stubborn(&game, 0.1, k).unwrap(), &base);
            }
        }

        #[test]
        fn epsilon_matches_pairwise_oracle(seed in any::<u64>()) {
            let mut rng = stream_rng(seed, 0);
            let game = TwoPlayerGame::sample(&mut rng);
            let sums = game.outcome_sums();
            let mut oracle: f64 = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    oracle = oracle.max((sums[i] - sums[j]).abs());
                }
            }
            prop_assert!((epsilon_of_game(&game) - oracle).abs() < 1e-15);
        }
    }
}
