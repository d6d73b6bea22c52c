//! Training on a small tabular MDP against value iteration.

use ppcpt_core::tabular::{greedy_policy, value_iteration};
use ppcpt_core::trainer::train;
use ppcpt_core::{Activation, CptSpec, TabularMdp, TrainConfig};

fn oracle_mdp() -> TabularMdp {
    TabularMdp::new(
        vec![vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![vec![0.5, 0.5], vec![0.1, 0.9]]],
        vec![vec![1.0, 0.0], vec![2.0, -0.5]],
        0.9,
    )
    .unwrap()
}

fn learned_table(mdp: &TabularMdp, seed: u64) -> Vec<f64> {
    let cfg = TrainConfig {
        learning_rate: 2.0,
        horizon: 500,
        batch_size: 32,
        n_max: 20,
        gamma: 0.9,
        cpt: CptSpec::expectation(),
        hidden: vec![],
        activation: Activation::Identity,
        exploration_epsilon: 0.3,
        seed,
        ..TrainConfig::default()
    };
    let out = train(mdp, &cfg).unwrap();
    let mut table = Vec::new();
    for s in 0..2 {
        let mut f = vec![0.0; 2];
        f[s] = 1.0;
        table.extend(out.network.forward(&f).unwrap());
    }
    table
}

#[test]
fn expectation_training_recovers_value_iteration() {
    let mdp = oracle_mdp();
    let (q_star, _) = value_iteration(&mdp, &CptSpec::expectation(), 1e-12, 10_000).unwrap();
    for seed in 0..3 {
        let learned = learned_table(&mdp, seed);
        let rel = learned.iter().zip(&q_star).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        assert!(rel < 0.05, "seed {seed}: {learned:?} vs {q_star:?}");
        assert_eq!(greedy_policy(&learned, 2), greedy_policy(&q_star, 2), "seed {seed}");
    }
}
