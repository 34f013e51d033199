use alliance_core::dynamics::*;
use alliance_core::matrix_games::ThreePlayerGame;
use alliance_core::rng::stream_rng;
use rand::Rng;

fn random_interior<R: Rng>(rng: &mut R) -> PolicyTriple {
    PolicyTriple([0, 1, 2].map(|_| 0.01 + 0.98 * rng.gen::<f64>()))
}

#[test]
fn odd_one_out_gradient_matches_closed_form_on_random_grid_points() {
    let game = ThreePlayerGame::odd_one_out();
    let mut rng = stream_rng(11, 0);
    for _ in 0..1000 {
        let coords = [0, 1, 2].map(|_| rng.gen_range(0..=100) as f64 / 100.0);
        let policy = PolicyTriple(coords);
        let expected = 2.0 * (1.0 - policy.x() - policy.y()) / 3.0;
        let got = exact_gradient(&game, &policy, 2);
        assert!((got - expected).abs() <= 1e-12, "{coords:?}: {got} vs {expected}");
    }
}

#[test]
fn gradients_agree_with_central_differences() {
    let mut rng = stream_rng(12, 0);
    let h = 1e-6;
    for _ in 0..1000 {
        let game = ThreePlayerGame::new(rng.gen(), rng.gen()).unwrap();
        let base = random_interior(&mut rng);
        for k in 0..3 {
            let (mut up, mut down) = (base.0, base.0);
            up[k] += h;
            down[k] -= h;
            let fd = (expected_payoffs(&game, &PolicyTriple(up))[k] - expected_payoffs(&game, &PolicyTriple(down))[k])
                / (2.0 * h);
            let exact = exact_gradient(&game, &base, k);
            assert!((fd - exact).abs() <= 1e-8, "player {k} at {base:?}: {fd} vs {exact}");
        }
    }
}

#[test]
fn payoffs_stay_constant_sum_along_trajectories() {
    let mut rng = stream_rng(13, 0);
    for game in [ThreePlayerGame::matching(), ThreePlayerGame::odd_one_out()] {
        let config = DynamicsConfig {
            n_steps: 500,
            ..DynamicsConfig::default()
        };
        let record = simulate_learning(&game, &config, &random_interior(&mut rng)).unwrap();
        for point in &record.points {
            let total: f64 = point.payoffs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(point.policy.0.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}

#[test]
fn matching_learners_join_the_stubborn_player() {
    let game = ThreePlayerGame::matching();
    let mut rng = stream_rng(14, 0);
    for _ in 0..20 {
        let record = simulate_learning(&game, &DynamicsConfig::default(), &random_interior(&mut rng)).unwrap();
        let last = record.last();
        assert!(last.policy.x() > 0.99 && last.policy.y() > 0.99, "{:?}", last.policy);
        assert!((last.payoffs[0] - 1.0 / 3.0).abs() < 1e-3);
    }
}

#[test]
fn direct_parameterization_hits_the_boundary() {
    let game = ThreePlayerGame::matching();
    let config = DynamicsConfig {
        parameterization: "direct".into(),
        ..DynamicsConfig::default()
    };
    let record = simulate_learning(&game, &config, &PolicyTriple([0.6, 0.7, 0.5])).unwrap();
    assert_eq!(record.last().policy.0, [1.0, 1.0, 1.0]);
    assert!(record.converged_at.is_some());
}

#[test]
fn fixed_point_report_lists_centre_and_boundary_family() {
    let report = fixed_point_report(&ThreePlayerGame::odd_one_out()).unwrap();
    assert_eq!(report[0].pattern, [Coordinate::Fixed(0.5); 3]);
    assert_eq!(report[0].stability, Stability::Unstable);
    let family: Vec<_> = report[1..].iter().map(|f| f.pattern).collect();
    assert!(family.contains(&[Coordinate::Fixed(1.0), Coordinate::Fixed(0.0), Coordinate::Free]));
    assert!(report[1..].iter().all(|f| f.stability == Stability::Stable));
    assert!(fixed_point_report(&ThreePlayerGame::matching()).is_err());
}

#[test]
fn alliance_optima_closed_forms() {
    let odd = alliance_optimum(&ThreePlayerGame::odd_one_out(), 1.0).unwrap();
    assert!((odd.match_prob - 0.75).abs() <= 1e-6);
    assert!((odd.per_learner_value - 0.375).abs() <= 1e-6);
    let matching = alliance_optimum(&ThreePlayerGame::matching(), 1.0).unwrap();
    assert_eq!(matching.per_learner_value, 0.5);
    assert!(alliance_optimum(&ThreePlayerGame::matching(), 0.3).is_err());
}
