use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use turbidostat::dqn::{
    load_network, save_network, select_action, train, ActionSet, QNetwork, TrainConfig, N_ACTIONS,
    STANDARD_LAYERS,
};
use turbidostat::{Error, GrowthParams};

#[test]
fn full_exploration_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = QNetwork::random(&STANDARD_LAYERS, &mut rng);
    let draws = 10_000;
    let mut counts = [0usize; N_ACTIONS];
    for _ in 0..draws {
        counts[select_action(&net, [0.4, 0.6], 1.0, &mut rng)] += 1;
    }
    let expected = draws as f64 / N_ACTIONS as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new((N_ACTIONS - 1) as f64).unwrap().cdf(stat);
    assert!(
        p > 0.01,
        "chi-square {stat:.2}, p = {p:.4}, counts {counts:?}"
    );
}

#[test]
fn greedy_selection_ignores_the_generator() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = QNetwork::random(&STANDARD_LAYERS, &mut rng);
    let q = net.forward(&[0.3, 0.7]);
    let best = (0..N_ACTIONS).fold(0, |b, i| if q[i] > q[b] { i } else { b });
    for _ in 0..50 {
        assert_eq!(select_action(&net, [0.3, 0.7], 0.0, &mut rng), best);
    }
}

#[test]
fn saved_network_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.qnet");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = QNetwork::random(&STANDARD_LAYERS, &mut rng);
    save_network(&net, &path).unwrap();
    let back = load_network(&path).unwrap();
    for _ in 0..100 {
        let x = [rng.random_range(0.0..1.0), rng.random_range(0.2..1.0)];
        for (a, b) in net.forward(&x).iter().zip(back.forward(&x)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn loading_rejects_wrong_shapes_and_versions() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let small = dir.path().join("small.qnet");
    save_network(&QNetwork::random(&[2, 8, 17], &mut rng), &small).unwrap();
    assert!(matches!(
        load_network(&small),
        Err(Error::DimensionMismatch(_))
    ));

    let old = dir.path().join("old.qnet");
    let text = QNetwork::random(&STANDARD_LAYERS, &mut rng).to_text();
    std::fs::write(&old, text.replacen("qnet-v1", "qnet-v0", 1)).unwrap();
    assert!(matches!(load_network(&old), Err(Error::VersionMismatch(_))));

    assert!(matches!(
        load_network(&dir.path().join("absent.qnet")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn action_grid_is_uniform() {
    let a = ActionSet::new();
    assert_eq!(a.rate(0), 0.0);
    assert_eq!(a.rate(16), 0.02);
    for i in 1..N_ACTIONS {
        assert!((a.rate(i) - a.rate(i - 1) - 0.00125).abs() < 1e-15);
    }
}

fn short_config(seed: u64) -> TrainConfig {
    TrainConfig {
        episodes: 6,
        steps_per_episode: 40,
        epsilon_decay_episodes: 4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_a_function_of_its_inputs() {
    let p = GrowthParams::default();
    let a = train(&p, &short_config(4)).unwrap();
    let b = train(&p, &short_config(4)).unwrap();
    assert_eq!(a.episode_rewards, b.episode_rewards);
    assert_eq!(a.net, b.net);
    let c = train(&p, &short_config(5)).unwrap();
    assert_ne!(a.episode_rewards, c.episode_rewards);
}

#[test]
fn episode_returns_are_bounded() {
    // every reward lies in [-1, 0], so a discounted return lies in (-1/(1-gamma), 0]
    let p = GrowthParams::default();
    let cfg = short_config(6);
    let out = train(&p, &cfg).unwrap();
    assert_eq!(out.episode_rewards.len(), cfg.episodes);
    let floor = -1.0 / (1.0 - cfg.gamma);
    assert!(out.episode_rewards.iter().all(|r| *r <= 0.0 && *r > floor));
}

#[test]
fn frozen_network_does_not_learn() {
    let p = GrowthParams::default();
    let cfg = TrainConfig {
        lr: 0.0,
        ..short_config(7)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = QNetwork::random(&STANDARD_LAYERS, &mut rng);
    let out = train(&p, &cfg).unwrap();
    assert_eq!(out.net, initial);
}
