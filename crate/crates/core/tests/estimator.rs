//! Order-statistic CPT estimation against exact discrete values.

use ppcpt_core::cpt::{cpt_value_discrete, estimate_cpt_from_samples};
use ppcpt_core::trainer::cpt_pp_estimate;
use ppcpt_core::{
    Activation, ChainResolution, CptSpec, DiscreteDistribution, Layer, PrivacyConfig, QNetwork, TabularMdp, TrainConfig,
    VisitedChain,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact value of the four-outcome lottery below at 40 significant digits.
const LOTTERY_VALUE: f64 = 1.021_907_694_018_579_9;

fn lottery() -> DiscreteDistribution {
    DiscreteDistribution::new(vec![(-1.0, 0.2), (0.5, 0.3), (2.0, 0.3), (4.0, 0.2)]).unwrap()
}

fn draw<R: Rng>(dist: &DiscreteDistribution, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(x, p) in dist.outcomes() {
        acc += p;
        if u < acc {
            return x;
        }
    }
    dist.outcomes().last().unwrap().0
}

#[test]
fn discrete_value_matches_high_precision_reference() {
    let v = cpt_value_discrete(&lottery(), &CptSpec::standard());
    assert!((v - LOTTERY_VALUE).abs() < 1e-13, "{v}");
}

#[test]
fn estimator_is_consistent() {
    let dist = lottery();
    let spec = CptSpec::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut errors = Vec::new();
    for n in [100usize, 1_000, 10_000, 100_000] {
        let mean_abs: f64 = (0..20)
            .map(|_| {
                let samples: Vec<f64> = (0..n).map(|_| draw(&dist, &mut rng)).collect();
                (estimate_cpt_from_samples(&samples, &spec).unwrap() - LOTTERY_VALUE).abs()
            })
            .sum::<f64>()
            / 20.0;
        errors.push(mean_abs);
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(errors[3] < 0.02 * (LOTTERY_VALUE.abs() + 0.01));
}

#[test]
fn two_state_estimate_matches_enumerated_distribution() {
    // From state 1 under action 1 the next state is 0 w.p. 0.1 and 1 w.p. 0.9.
    // With Q(0, .) = (-2, -3) and Q(1, .) = (2, 3) the greedy continuation
    // values are -2 and 3, so X = -0.5 + 0.9 * {-2, 3} = {-2.3, 2.2}.
    const EXACT: f64 = 1.070_310_069_061_512_9;
    let mdp = TabularMdp::new(
        vec![vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![vec![0.5, 0.5], vec![0.1, 0.9]]],
        vec![vec![1.0, 0.0], vec![2.0, -0.5]],
        0.9,
    )
    .unwrap();
    let mut layer = Layer::zeros(2, 2);
    layer.weights = vec![-2.0, 2.0, -3.0, 3.0];
    let q = QNetwork::from_layers(vec![layer], Activation::Identity).unwrap();

    let spec = CptSpec::standard();
    let enumerated = DiscreteDistribution::new(vec![(-2.3, 0.1), (2.2, 0.9)]).unwrap();
    let analytic = cpt_value_discrete(&enumerated, &spec);
    assert!((analytic - EXACT).abs() < 1e-12);

    let cfg = TrainConfig { n_max: 100_000, cpt: spec, ..TrainConfig::default() };
    let chain = VisitedChain::new(2, &PrivacyConfig::disabled(), ChainResolution::Growing).unwrap();
    let (rho, best) = cpt_pp_estimate(&mdp, &1, 1, &q, &chain, &cfg, &mut ChaCha8Rng::seed_from_u64(72)).unwrap();
    assert!((rho - EXACT).abs() <= 0.02 * EXACT.abs(), "{rho} vs {EXACT}");
    assert_eq!(best, 1);
}
