//! Long-run statistical agreement between the simulator, the learner and the
//! exact model on small instances.

use relaypc::exact::{policy_chain, solve_relay_mdp, ExactModel, JointPolicy, RviOptions};
use relaypc::harness::{mean_se, parse_config, run_experiment, ControllerKind};
use relaypc::model::SystemParams;
use relaypc::policy::{PolicyParams, PolicyTable};
use relaypc::presets::{tiny, two_bin_channels};
use relaypc::random::{ChannelModel, RngStream};
use relaypc::{Anchor, Dltpc, DltpcConfig, Environment, LearningRate};

/// Upper 1% point of the chi-square law with 20 degrees of freedom.
const CHI2_20_99: f64 = 37.566;

fn random_theta(p: &SystemParams, spread: f64, rng: &mut RngStream) -> PolicyParams {
    PolicyParams {
        tables: (0..p.num_relays)
            .map(|k| PolicyTable::random(p, 2, k, spread, rng))
            .collect(),
    }
}

fn frozen(
    p: &SystemParams,
    m: &ChannelModel,
    theta: PolicyParams,
    step: f64,
    seed: u64,
) -> (Dltpc, Environment) {
    let anchor = Anchor::full(p);
    let mut cfg = DltpcConfig::new(p);
    cfg.anchor = anchor.clone();
    cfg.freeze_policy = true;
    cfg.schedule = LearningRate::Constant { value: step };
    let d = Dltpc::with_policy(p, theta, cfg, seed).unwrap();
    let env =
        Environment::new(p.clone(), m.clone(), seed, anchor.buffer, anchor.batteries).unwrap();
    (d, env)
}

fn ljung_box(xs: &[f64], lags: usize) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let c0: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (1..=lags)
        .map(|k| {
            let ck: f64 = xs
                .windows(k + 1)
                .map(|w| (w[0] - mean) * (w[k] - mean))
                .sum();
            (ck / c0).powi(2) / (n - k as f64)
        })
        .sum::<f64>()
        * n
        * (n + 2.0)
}

#[test]
fn cycle_lengths_are_uncorrelated() {
    let (p, m) = tiny();
    let mut rng = RngStream::new(11, 0);
    let (mut d, mut env) = frozen(&p, &m, random_theta(&p, 1.0, &mut rng), 0.0, 11);
    let mut lengths = Vec::new();
    while lengths.len() < 20_000 {
        if let Some(c) = d.step(&mut env).unwrap().cycle {
            lengths.push(c.length as f64);
        }
    }
    let q = ljung_box(&lengths, 20);
    assert!(q < CHI2_20_99, "Ljung-Box Q = {q}");
}

#[test]
fn average_reward_estimate_reaches_exact_value() {
    let (p, m) = tiny();
    let model = ExactModel::new(&p, &m).unwrap();
    let mut rng = RngStream::new(12, 0);
    let theta = random_theta(&p, 1.0, &mut rng);
    let exact = policy_chain(&model, JointPolicy::Factored(&theta), &Anchor::full(&p))
        .unwrap()
        .avg_reward;
    let (mut d, mut env) = frozen(&p, &m, theta, 0.002, 12);
    let mut tail = Vec::new();
    while d.cycles() < 60_000 {
        if let Some(c) = d.step(&mut env).unwrap().cycle {
            if c.index >= 30_000 {
                tail.push(c.r_hat);
            }
        }
    }
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(
        (mean - exact).abs() <= 0.02 * exact,
        "R-hat {mean} vs exact {exact}"
    );
}

#[test]
fn single_silent_relay_estimates_uncontrolled_reward() {
    let p = SystemParams {
        num_relays: 1,
        noise_power: 0.01,
        buffer_capacity: 2,
        battery_capacity: vec![2],
        arrival_rate: 0.1,
        harvest_rate: vec![0.25],
        power_levels: vec![vec![0.0]],
        ..SystemParams::default()
    };
    let m = two_bin_channels();
    let model = ExactModel::new(&p, &m).unwrap();
    let theta = PolicyParams::zeros(&p, 2);
    let exact = policy_chain(&model, JointPolicy::Factored(&theta), &Anchor::full(&p))
        .unwrap()
        .avg_reward;
    let mut cfg = DltpcConfig::new(&p);
    cfg.anchor = Anchor::full(&p);
    cfg.schedule = LearningRate::Constant { value: 0.002 };
    let mut d = Dltpc::with_policy(&p, theta, cfg, 13).unwrap();
    let mut env = Environment::new(p.clone(), m, 13, 2, vec![2]).unwrap();
    let before = d.policy();
    let mut tail = Vec::new();
    while d.cycles() < 40_000 {
        if let Some(c) = d.step(&mut env).unwrap().cycle {
            if c.index >= 20_000 {
                tail.push(c.r_hat);
            }
        }
    }
    assert_eq!(d.policy().flatten(), before.flatten());
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(
        (mean - exact).abs() <= 0.02,
        "R-hat {mean} vs exact {exact}"
    );
}

#[test]
fn simulated_reward_matches_exact_chain() {
    let (p, m) = tiny();
    let model = ExactModel::new(&p, &m).unwrap();
    let mut rng = RngStream::new(14, 0);
    for _ in 0..3 {
        let theta = random_theta(&p, 2.0, &mut rng);
        let exact = policy_chain(&model, JointPolicy::Factored(&theta), &Anchor::full(&p))
            .unwrap()
            .avg_reward;
        let (mut d, mut env) = frozen(&p, &m, theta, 0.0, 14);
        let batches: Vec<f64> = (0..50)
            .map(|_| {
                (0..10_000)
                    .map(|_| d.step(&mut env).unwrap().outcome.reward)
                    .sum::<f64>()
                    / 10_000.0
            })
            .collect();
        let (mean, se) = mean_se(&batches);
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "simulated {mean} +- {se} vs exact {exact}"
        );
    }
}

#[test]
fn fixed_uniform_policy_matches_exact_reward() {
    let cfg = parse_config(
        r#"
[run]
controllers = ["fixed-policy"]
horizon = 220000
warmup = 20000
seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]

[system]
num_relays = 2
noise_power = 0.01
buffer_capacity = 2
battery_capacity = 2
arrival_rate = 0.5
power_levels = [0, 1]

[channel]
edges_db = [-1.59]
"#,
    )
    .unwrap();
    let model = ExactModel::new(&cfg.params, &cfg.channel).unwrap();
    let uniform = PolicyParams::zeros(&cfg.params, 2);
    let exact = policy_chain(
        &model,
        JointPolicy::Factored(&uniform),
        &Anchor::full(&cfg.params),
    )
    .unwrap()
    .avg_reward;
    let res = run_experiment(&cfg, false).unwrap();
    let agg = res.aggregate(ControllerKind::FixedPolicy, 0).unwrap();
    assert!(
        (agg.avg_reward - exact).abs() <= 3.0 * agg.se_avg_reward,
        "simulated {} +- {} vs exact {exact}",
        agg.avg_reward,
        agg.se_avg_reward
    );
}

#[test]
fn optimal_gain_dominates_hundred_random_policies() {
    let (p, m) = tiny();
    let model = ExactModel::new(&p, &m).unwrap();
    let anchor = Anchor::full(&p);
    let rho = solve_relay_mdp(&model, &anchor, RviOptions::default())
        .unwrap()
        .gain();
    let mut rng = RngStream::new(15, 0);
    for _ in 0..100 {
        let theta = random_theta(&p, 3.0, &mut rng);
        let r = policy_chain(&model, JointPolicy::Factored(&theta), &anchor)
            .unwrap()
            .avg_reward;
        assert!(rho >= r - 1e-9, "rho* {rho} < {r}");
    }
}
