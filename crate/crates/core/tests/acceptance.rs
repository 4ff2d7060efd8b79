//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use relaypc::baselines::{hr_select, naive_select, BaselineContext};
use relaypc::dltpc::{Anchor, Dltpc, DltpcConfig, JointEstimator, LearningRate};
use relaypc::exact::{
    build_kernel, exact_gradient, policy_chain, solve_relay_mdp, tabulate_policy, ExactModel,
    JointPolicy, RviOptions,
};
use relaypc::harness::experiment::{
    run_experiment_with, ExperimentCheckpoint, Progress, RunOptions,
};
use relaypc::harness::{
    export, mean_se, parse_config, run_experiment, ControllerKind, ExperimentResults,
};
use relaypc::model::{coop_rate, service_packets, SystemParams};
use relaypc::policy::{PolicyParams, PolicyTable};
use relaypc::presets::tiny;
use relaypc::random::{ChannelModel, RngStream};
use relaypc::sim::Environment;

const KERNEL_ROW_TOL: f64 = 1e-12;
const KERNEL_SPOT_ROWS: usize = 20;
const KERNEL_TIME: Duration = Duration::from_secs(1);

const SCORE_H: f64 = 1e-5;
const SCORE_TOL: f64 = 1e-6;
const SCORE_SAMPLES: usize = 1000;
const SCORE_TIME: Duration = Duration::from_secs(1);

const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SAMPLES: usize = 20;
const GRAD_TIME: Duration = Duration::from_secs(60);

const UNBIASED_CYCLES: u64 = 100_000;
const UNBIASED_COSINE: f64 = 0.95;
const UNBIASED_ALPHA: f64 = 0.01;
/// Two-sided normal quantile at 1 - 0.01 / 2.
const Z_CRIT: f64 = 2.575_829_303_549;

const FACTOR_SLOTS: u64 = 10_000;

const CONVERGE_CYCLES: u64 = 200_000;
const CONVERGE_RATIO: f64 = 0.10;
const CONVERGE_RANGE: f64 = 0.02;
const CONVERGE_REWARD_SCALE: f64 = 8.0;
const CONVERGE_SCHEDULE: LearningRate = LearningRate::Harmonic {
    initial: 0.003,
    scale: 600.0,
};

const BOUND_SIM_SLOTS: u64 = 1_000_000;
const BOUND_BATCHES: usize = 100;
const BOUND_SE: f64 = 3.0;

const TREND_SE: f64 = 2.0;

const LITTLE_TOL: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn poisson_pmf(mean: f64, k: u32) -> f64 {
    let mut p = (-mean).exp();
    for i in 1..=k {
        p *= mean / f64::from(i);
    }
    p
}

/// Law of `min(start + Poisson(mean), cap)` from the pmf directly.
fn clamped(mean: f64, start: u32, cap: u32) -> Vec<f64> {
    let mut law = vec![0.0; cap as usize + 1];
    let mut below = 0.0;
    for j in start..cap {
        law[j as usize] = poisson_pmf(mean, j - start);
        below += law[j as usize];
    }
    law[cap as usize] = 1.0 - below;
    law
}

fn c1_kernel() -> Outcome {
    let t0 = Instant::now();
    let (p, m) = tiny();
    let model = ExactModel::new(&p, &m).unwrap();
    let kernel = build_kernel(&model);
    let space = model.space();
    let mut worst_sum = 0.0f64;
    let mut rows = Vec::new();
    for (s, a, row) in kernel.rows() {
        let sum: f64 = row.iter().map(|&(_, q)| q).sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        rows.push((s, a));
    }
    let mut rng = RngStream::new(101, 0);
    let mut worst_entry = 0.0f64;
    for _ in 0..KERNEL_SPOT_ROWS {
        let (s, a) = rows[(rng.uniform() * rows.len() as f64) as usize];
        let (b, c, e) = space.split(s);
        let profile = space.profile(a);
        let batteries = space.battery_levels(e);
        let served = service_packets(&p, coop_rate(&p, &profile, &space.channels(&m, c)));
        let residual = (b as u32).saturating_sub(served);
        let buffer_law = clamped(p.arrivals_per_slot(), residual, p.buffer_capacity);
        let energy_laws: Vec<Vec<f64>> = (0..p.num_relays)
            .map(|k| {
                let left = batteries[k] - p.energy_cost(k, profile.0[k]);
                clamped(p.harvest_per_slot(k), left, p.battery_capacity[k])
            })
            .collect();
        let mut dense = vec![0.0; space.num_states()];
        for &(y, q) in kernel.row(s, a).unwrap() {
            dense[y] += q;
        }
        for (y, &got) in dense.iter().enumerate() {
            let (b2, c2, e2) = space.split(y);
            let next = space.battery_levels(e2);
            let pc: f64 = (0..p.num_relays)
                .map(|k| {
                    let (sr, rd) = space.channel_bins(c2, k);
                    m.bin_probability(sr) * m.bin_probability(rd)
                })
                .product();
            let pe: f64 = (0..p.num_relays)
                .map(|k| energy_laws[k][next[k] as usize])
                .product();
            let want = pc * buffer_law[b2] * pe;
            worst_entry = worst_entry.max((got - want).abs());
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        worst_sum <= KERNEL_ROW_TOL && worst_entry <= KERNEL_ROW_TOL && elapsed < KERNEL_TIME,
        format!(
            "{} rows, max |row sum - 1| = {worst_sum:.1e}, max spot-check error = {worst_entry:.1e} over {KERNEL_SPOT_ROWS} rows, {elapsed:.2?}",
            rows.len()
        ),
    )
}

fn c2_score() -> Outcome {
    let t0 = Instant::now();
    let (p, _) = tiny();
    let mut rng = RngStream::new(202, 0);
    let mut worst = 0.0f64;
    for _ in 0..SCORE_SAMPLES {
        let relay = (rng.uniform() * 2.0) as usize;
        let mut table = PolicyTable::random(&p, 2, relay, 3.0, &mut rng);
        let s = (rng.uniform() * table.num_states() as f64) as usize;
        let n = table.feasible_in(s);
        let a = (rng.uniform() * n as f64) as usize;
        let score = table.score(s, a).unwrap();
        let na = table.num_actions();
        for j in 0..na {
            let i = s * na + j;
            let orig = table.theta()[i];
            table.theta_mut()[i] = orig + SCORE_H;
            let up = table.probability(s, a).ln();
            table.theta_mut()[i] = orig - SCORE_H;
            let down = table.probability(s, a).ln();
            table.theta_mut()[i] = orig;
            worst = worst.max((score.values[j] - (up - down) / (2.0 * SCORE_H)).abs());
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        worst <= SCORE_TOL && elapsed < SCORE_TIME,
        format!("max |analytic - central difference| = {worst:.1e} over {SCORE_SAMPLES} samples, {elapsed:.2?}"),
    )
}

fn random_theta(p: &SystemParams, spread: f64, rng: &mut RngStream) -> PolicyParams {
    PolicyParams {
        tables: (0..p.num_relays)
            .map(|k| PolicyTable::random(p, 2, k, spread, rng))
            .collect(),
    }
}

fn c3_gradient() -> Outcome {
    let t0 = Instant::now();
    let (p, m) = tiny();
    let model = ExactModel::new(&p, &m).unwrap();
    let anchor = Anchor::full(&p);
    let mut rng = RngStream::new(303, 0);
    let mut worst = 0.0f64;
    for _ in 0..GRAD_SAMPLES {
        let theta = random_theta(&p, 2.0, &mut rng);
        let exact = exact_gradient(&model, &theta, &anchor).unwrap().flatten();
        let mut flat = theta.flatten();
        let mut probe = theta.clone();
        let mut eval = |flat: &[f64]| {
            probe.set_flat(flat);
            policy_chain(&model, JointPolicy::Factored(&probe), &anchor)
                .unwrap()
                .avg_reward
        };
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + GRAD_H;
            let up = eval(&flat);
            flat[i] = orig - GRAD_H;
            let down = eval(&flat);
            flat[i] = orig;
            worst = worst.max((exact[i] - (up - down) / (2.0 * GRAD_H)).abs());
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        worst <= GRAD_TOL && elapsed < GRAD_TIME,
        format!("max |exact - finite difference| = {worst:.1e} over {GRAD_SAMPLES} random policies, {elapsed:.2?}"),
    )
}

fn c4_unbiased() -> Outcome {
    let (p, m) = tiny();
    let model = ExactModel::new(&p, &m).unwrap();
    let anchor = Anchor::full(&p);
    let mut rng = RngStream::new(404, 0);
    let theta = random_theta(&p, 1.0, &mut rng);
    let exact = exact_gradient(&model, &theta, &anchor).unwrap();
    let target: Vec<f64> = exact
        .flatten()
        .iter()
        .map(|g| g * exact.expected_cycle_length)
        .collect();

    let mut cfg = DltpcConfig::new(&p);
    cfg.anchor = anchor.clone();
    cfg.schedule = LearningRate::Constant { value: 0.0 };
    cfg.freeze_policy = true;
    cfg.initial_avg_reward = exact.avg_reward;
    cfg.record_gradients = true;
    let mut d = Dltpc::with_policy(&p, theta, cfg, 404).unwrap();
    let mut env =
        Environment::new(p.clone(), m, 404, anchor.buffer, anchor.batteries.clone()).unwrap();
    let dim = target.len();
    let (mut sum, mut sumsq) = (vec![0.0; dim], vec![0.0; dim]);
    let mut cycles = 0u64;
    while cycles < UNBIASED_CYCLES {
        if let Some(c) = d.step(&mut env).unwrap().cycle {
            for (i, x) in c.gradients.unwrap().concat().into_iter().enumerate() {
                sum[i] += x;
                sumsq[i] += x * x;
            }
            cycles += 1;
        }
    }
    let n = cycles as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let dot: f64 = mean.iter().zip(&target).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (norm(&mean) * norm(&target));

    let mut tested = 0;
    let mut rejected = Vec::new();
    let mut worst_z = 0.0f64;
    for i in 0..dim {
        let var = (sumsq[i] / n - mean[i] * mean[i]) * n / (n - 1.0);
        if var <= 0.0 {
            // Never-visited or single-action entries: estimate and target are both zero.
            if mean[i] != 0.0 || target[i].abs() > 1e-12 {
                rejected.push((i, f64::INFINITY));
            }
            continue;
        }
        tested += 1;
        let z = (mean[i] - target[i]) / (var / n).sqrt();
        worst_z = worst_z.max(z.abs());
        if z.abs() > Z_CRIT {
            rejected.push((i, z));
        }
    }
    outcome(
        cosine > UNBIASED_COSINE && rejected.is_empty(),
        format!(
            "cosine = {cosine:.4}, {tested} components z-tested at {UNBIASED_ALPHA}, max |z| = {worst_z:.2}, rejected {:?}, {cycles} cycles",
            rejected
        ),
    )
}

fn c5_factorization() -> Outcome {
    let (p, m) = tiny();
    let mut cfg = DltpcConfig::new(&p);
    cfg.schedule = LearningRate::Constant { value: 0.05 };
    cfg.record_gradients = true;
    let mut env = Environment::new(p.clone(), m, 505, 2, vec![2, 2]).unwrap();
    let mut d = Dltpc::new(&p, 2, cfg, 505).unwrap();
    let mut joint = JointEstimator::new(d.policy());
    let (mut cycles, mut mismatches) = (0, 0);
    for _ in 0..FACTOR_SLOTS {
        let state = env.state().clone();
        let r_hat = d.avg_reward();
        let slot = d.step(&mut env).unwrap();
        joint
            .slot_update(&state, &slot.profile, slot.outcome.reward, r_hat)
            .unwrap();
        if let Some(c) = slot.cycle {
            let full = joint.finish_cycle();
            for (k, local) in c.gradients.unwrap().iter().enumerate() {
                let block = joint.block(&full, k);
                if local.len() != block.len()
                    || local
                        .iter()
                        .zip(block)
                        .any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    mismatches += 1;
                }
            }
            joint.set_policy(d.policy());
            cycles += 1;
        }
    }
    outcome(
        cycles > 0 && mismatches == 0,
        format!(
            "{cycles} cycles in {FACTOR_SLOTS} slots, {mismatches} relay blocks differ bitwise"
        ),
    )
}

struct LearnedTiny {
    initial_norm: f64,
    final_norm: f64,
    r_hat_tail: Vec<f64>,
    policy: PolicyParams,
}

fn learn_tiny() -> LearnedTiny {
    let (mut p, m) = tiny();
    p.reward_scale = CONVERGE_REWARD_SCALE;
    let model = ExactModel::new(&p, &m).unwrap();
    let anchor = Anchor::full(&p);
    let mut cfg = DltpcConfig::new(&p);
    cfg.schedule = CONVERGE_SCHEDULE;
    let mut d = Dltpc::new(&p, 2, cfg, 606).unwrap();
    let initial_norm = exact_gradient(&model, &d.policy(), &anchor).unwrap().norm();
    let mut env =
        Environment::new(p.clone(), m, 606, anchor.buffer, anchor.batteries.clone()).unwrap();
    let tail_start = CONVERGE_CYCLES - CONVERGE_CYCLES / 10;
    let mut r_hat_tail = Vec::new();
    while d.cycles() < CONVERGE_CYCLES {
        if let Some(c) = d.step(&mut env).unwrap().cycle {
            if c.index >= tail_start {
                r_hat_tail.push(c.r_hat);
            }
        }
    }
    let policy = d.policy();
    let final_norm = exact_gradient(&model, &policy, &anchor).unwrap().norm();
    LearnedTiny {
        initial_norm,
        final_norm,
        r_hat_tail,
        policy,
    }
}

fn c6_convergence(learned: &LearnedTiny) -> Outcome {
    let ratio = learned.final_norm / learned.initial_norm;
    let tail = &learned.r_hat_tail;
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let range = (hi - lo) / mean;
    outcome(
        ratio <= CONVERGE_RATIO && range < CONVERGE_RANGE,
        format!(
            "|grad| {:.4e} -> {:.4e} (ratio {ratio:.3}); R-hat over last {} cycles: mean {mean:.4}, range {:.2}% of mean",
            learned.initial_norm,
            learned.final_norm,
            tail.len(),
            100.0 * range
        ),
    )
}

/// Mean reward of a state-feedback rule and its batch-means standard error.
fn simulate_rule<F>(p: &SystemParams, m: &ChannelModel, seed: u64, mut rule: F) -> (f64, f64)
where
    F: FnMut(&relaypc::GlobalState) -> relaypc::ActionProfile,
{
    let mut env = Environment::new(
        p.clone(),
        m.clone(),
        seed,
        p.buffer_capacity,
        p.battery_capacity.clone(),
    )
    .unwrap();
    let per = BOUND_SIM_SLOTS / BOUND_BATCHES as u64;
    let mut batches = Vec::with_capacity(BOUND_BATCHES);
    for _ in 0..BOUND_BATCHES {
        let mut total = 0.0;
        for _ in 0..per {
            let profile = rule(env.state());
            total += env.step(&profile).unwrap().reward;
        }
        batches.push(total / per as f64);
    }
    mean_se(&batches)
}

fn desk_text(controllers: &str, extra: &str) -> String {
    format!(
        r#"
[run]
controllers = [{controllers}]

[system]
num_relays = 3
noise_power = 0.02
buffer_capacity = 4
battery_capacity = 2
arrival_rate = 0.4
harvest_rate = 0.25
power_levels = [0, 1, 2]

[channel]
edges_db = [-1.59]

[anchor]
buffer = 2
battery = 0

[learning]
schedule = {{ kind = "constant", value = 0.001 }}

[trace]
occupancy_every = 100000
cycle_every = 1000000
policy_every = 1000000
{extra}"#
    )
}

fn c7_upper_bound(learned: &LearnedTiny) -> Outcome {
    let (p, m) = tiny();
    let model = ExactModel::new(&p, &m).unwrap();
    let anchor = Anchor::full(&p);
    let mdp = solve_relay_mdp(&model, &anchor, RviOptions::default()).unwrap();
    let rho = mdp.gain();
    let learned_r = policy_chain(&model, JointPolicy::Factored(&learned.policy), &anchor)
        .unwrap()
        .avg_reward;
    let ctx = BaselineContext::new(&p);
    let (naive_sim, naive_se) = simulate_rule(&p, &m, 707, |s| naive_select(s, &p));
    let (hr_sim, hr_se) = simulate_rule(&p, &m, 707, |s| hr_select(s, &ctx, &p));
    let naive_exact = policy_chain(
        &model,
        JointPolicy::Deterministic(&tabulate_policy(&model, |s| naive_select(s, &p))),
        &anchor,
    )
    .map(|c| c.avg_reward);
    let tiny_ok = rho >= learned_r - 1e-9
        && rho >= naive_sim - BOUND_SE * naive_se
        && rho >= hr_sim - BOUND_SE * hr_se;

    // Desk-scale occupancy ordering over a load sweep.
    let text = desk_text(
        r#""mdp-optimal", "dltpc", "naive", "online-hr""#,
        "[sweep]\narrival_rate = [0.2, 0.3, 0.4]\n",
    )
    .replace("[run]", "[run]\nhorizon = 2000000\nseeds = [1, 2, 3, 4, 5]");
    let cfg = parse_config(&text).unwrap();
    let res = run_experiment(&cfg, true).unwrap();
    let occ = |c: ControllerKind, pi: usize| res.aggregate(c, pi).unwrap().mean_occupancy;
    let mut desk_ok = true;
    let mut rows = Vec::new();
    let mut naive_curve = Vec::new();
    for (pi, point) in res.points.iter().enumerate() {
        let (mdp_o, dl, nv, hr) = (
            occ(ControllerKind::MdpOptimal, pi),
            occ(ControllerKind::Dltpc, pi),
            occ(ControllerKind::Naive, pi),
            occ(ControllerKind::OnlineHr, pi),
        );
        desk_ok &= mdp_o <= dl && dl <= nv.max(hr);
        naive_curve.push(nv);
        rows.push(format!(
            "lambda {}: mdp {mdp_o:.3} dltpc {dl:.3} naive {nv:.3} hr {hr:.3}",
            point.value
        ));
    }
    let naive_monotone = naive_curve.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        tiny_ok && desk_ok,
        format!(
            "tiny: rho* {rho:.4} >= learned {learned_r:.4}, naive {naive_sim:.4}+-{naive_se:.4} (exact {:.4}), hr {hr_sim:.4}+-{hr_se:.4}; desk occupancy [{}]; naive nondecreasing in load: {naive_monotone}",
            naive_exact.unwrap_or(f64::NAN),
            rows.join("; ")
        ),
    )
}

fn c8_trends() -> Outcome {
    let text = desk_text(
        r#""dltpc""#,
        "[sweep]\nbattery_capacity = [2, 4, 6]\nharvest_rate = [0.25, 0.35, 0.45]\n",
    )
    .replace(
        "[run]",
        "[run]\nhorizon = 5000000\nseeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]",
    );
    let cfg = parse_config(&text).unwrap();
    let res = run_experiment(&cfg, true).unwrap();
    let per_seed = |pi: usize| -> Vec<f64> {
        res.runs
            .iter()
            .filter(|r| r.point == pi)
            .map(|r| r.summary.as_ref().map_or(f64::NAN, |s| s.mean_occupancy))
            .collect()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for axis in ["harvest_rate", "battery_capacity"] {
        let idx: Vec<usize> = res
            .points
            .iter()
            .enumerate()
            .filter(|(_, pt)| pt.axis_name() == axis)
            .map(|(i, _)| i)
            .collect();
        let mut line = format!("{axis}:");
        for w in idx.windows(2) {
            let (a, b) = (per_seed(w[0]), per_seed(w[1]));
            let diffs: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
            let (d, se) = mean_se(&diffs);
            let step_ok = d <= TREND_SE * se;
            ok &= step_ok;
            line += &format!(
                " {}->{} occupancy {:.3}->{:.3} (paired diff {d:+.4} +- {se:.4}, {})",
                res.points[w[0]].value,
                res.points[w[1]].value,
                mean_se(&a).0,
                mean_se(&b).0,
                if step_ok { "ok" } else { "increase" }
            );
        }
        parts.push(line);
    }
    outcome(ok, parts.join("; "))
}

fn c9_little() -> Outcome {
    let text = desk_text(r#""naive""#, "").replace(
        "[run]",
        "[run]\nhorizon = 1100000\nwarmup = 100000\nseeds = [9]",
    );
    let cfg = parse_config(&text).unwrap();
    let res = run_experiment(&cfg, false).unwrap();
    let s = res.runs[0].summary.as_ref().unwrap();
    let rel = (s.sojourn_ms - s.little_delay_ms).abs() / s.little_delay_ms;
    outcome(
        rel <= LITTLE_TOL,
        format!(
            "measured sojourn {:.4} ms vs E[b]/((1-P_drop) lambda) = {:.4} ms (E[b] {:.4}, P_drop {:.4}), relative gap {:.2}%",
            s.sojourn_ms,
            s.little_delay_ms,
            s.mean_occupancy,
            s.drop_rate,
            100.0 * rel
        ),
    )
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn c10_determinism() -> Outcome {
    let text = r#"
[run]
controllers = ["dltpc", "naive", "online-hr", "fixed-policy", "mdp-optimal"]
horizon = 40000
seeds = [3, 4]

[system]
num_relays = 2
noise_power = 0.01
buffer_capacity = 2
battery_capacity = 2
power_levels = [0, 1]

[channel]
edges_db = [-1.59]

[learning]
schedule = { kind = "constant", value = 0.01 }

[sweep]
arrival_rate = [0.3, 0.5]

[trace]
occupancy_every = 1000
policy_every = 100
"#;
    let cfg = parse_config(text).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let export_to = |res: &ExperimentResults, name: &str| {
        let dir = tmp.path().join(name);
        export(res, &cfg, &dir, cfg.format).unwrap();
        read_dir_bytes(&dir)
    };
    let first = export_to(&run_experiment(&cfg, true).unwrap(), "first");
    let second = export_to(&run_experiment(&cfg, true).unwrap(), "second");

    let ck_path = tmp.path().join("checkpoint.json");
    let mut resume: Option<ExperimentCheckpoint> = None;
    let mut halts = 0;
    let resumed = loop {
        let opts = RunOptions {
            sweep: true,
            halt_after: Some(23_456),
        };
        match run_experiment_with(&cfg, opts, resume.take()).unwrap() {
            Progress::Complete(r) => break r,
            Progress::Halted(ck) => {
                ck.save(&ck_path).unwrap();
                resume = Some(ExperimentCheckpoint::load(&ck_path).unwrap());
                halts += 1;
            }
        }
    };
    let third = export_to(&resumed, "resumed");
    let csv_files = first.keys().filter(|k| k.ends_with(".csv")).count();
    outcome(
        first == second && first == third && csv_files == 5 && halts > 0,
        format!(
            "{} files ({csv_files} CSV) identical across two runs: {}; identical after {halts} checkpoint/resume cycles: {}",
            first.len(),
            first == second,
            first == third
        ),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if run(n) {
            let t0 = Instant::now();
            let o = f();
            let dt = t0.elapsed();
            println!(
                "[{}] {n}. {name}: {} ({dt:.1?})",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            results.push((n, name, o, dt));
        }
    };
    record(1, "kernel soundness", &mut c1_kernel);
    record(2, "score correctness", &mut c2_score);
    record(3, "exact gradient", &mut c3_gradient);
    record(4, "estimator unbiasedness", &mut c4_unbiased);
    record(5, "local/joint factorization", &mut c5_factorization);
    // Criterion 7 reuses the policy learned for criterion 6.
    let learned = OnceCell::new();
    record(6, "convergence", &mut || {
        c6_convergence(learned.get_or_init(learn_tiny))
    });
    record(7, "upper bound and ordering", &mut || {
        c7_upper_bound(learned.get_or_init(learn_tiny))
    });
    record(8, "capacity and harvest trends", &mut c8_trends);
    record(9, "Little's law", &mut c9_little);
    record(10, "determinism", &mut c10_determinism);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
