use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agent::AgentConfig;
use crate::envs::{make_env, EnvConfig};

/// Exhaustive per-h scan: bit h is set iff none of dones[0..h] is set.
fn scan_oracle(dones: &[bool]) -> Vec<bool> {
    (1..=dones.len()).map(|h| (0..h).all(|s| !dones[s])).collect()
}

/// Buffer whose state at step t is `[t]` and action `[-t]`.
fn synthetic(dones: &[bool], horizon: usize) -> RolloutBuffer {
    let n = dones.len();
    let mut b = RolloutBuffer::new(n, horizon, 1, 1);
    for (t, &d) in dones.iter().enumerate() {
        b.states.push(t as f64);
        b.actions.push(-(t as f64));
        b.applied_actions.push(-(t as f64));
        b.rewards.push(1.0);
        b.gae_rewards.push(1.0);
        b.terminated.push(d);
        b.truncated.push(false);
        b.log_probs.push(0.0);
        b.values.push(0.0);
    }
    b.build_windows();
    b
}

#[test]
fn mask_examples() {
    assert_eq!(build_mask(&[false, false, false]), vec![true, true, true]);
    assert_eq!(build_mask(&[false, true, false]), vec![true, false, false]);
    assert_eq!(build_mask(&[true, false, false]), vec![false, false, false]);
}

#[test]
fn leading_windows_are_padded_and_masked() {
    let b = synthetic(&[false; 4], 2);
    for t in 0..2 {
        assert!(b.window_mask(t).iter().all(|&m| !m));
        assert!((0..2 - t).all(|j| b.window_state(t, j) == [0.0]));
        assert!((2 - t..=2).all(|j| b.window_state(t, j) == b.state(t + j - 2)));
    }
    for t in 2..4 {
        assert!(b.window_mask(t).iter().all(|&m| m));
    }
    assert_eq!(b.rewards.len(), 4);
    assert_eq!(b.values.len(), 4);
    assert_eq!(b.log_probs.len(), 4);
}

#[test]
fn window_crossing_a_done_is_masked() {
    let b = synthetic(&[false, true, false, false], 2);
    // Window at t=3 spans steps 1..3; the episode ends at step 1.
    assert_eq!(b.window_mask(3), &[false, false]);
    // Window at t=2 spans steps 0..2; step 0 is clear, step 1 ends it.
    assert_eq!(b.window_mask(2), &[true, false]);
}

#[test]
fn windows_follow_the_buffer() {
    let b = synthetic(&[false, false, true, false, false, false, true, false], 3);
    for t in 3..8 {
        for j in 0..=3 {
            assert_eq!(b.window_state(t, j), b.state(t - 3 + j));
        }
    }
    let w = b.windows(&[4, 7]);
    assert_eq!(w.state(0, 0), &[1.0]);
    assert_eq!(w.state(1, 3), &[7.0]);
    assert_eq!(w.action(1, 0), &[-4.0]);
    assert!(w.mask(0, 1));
    assert!(!w.mask(1, 3));
    // The last window state is always the stored step itself.
    for t in 3..8 {
        assert_eq!(b.window_state(t, 3), b.state(t));
    }
}

#[test]
fn gae_limits() {
    let r = [1.0, -2.0, 0.5, 3.0];
    let v = [0.3, 0.1, -0.4, 0.9];
    let d = [false, true, false, false];
    let myopic = compute_gae(&r, &v, &d, 2.0, 0.0, 0.7);
    for t in 0..4 {
        assert_eq!(myopic.advantages[t], r[t] - v[t]);
    }
    let one_step = compute_gae(&r, &v, &d, 2.0, 0.9, 0.0);
    let next = [0.1, -0.4, 0.9, 2.0];
    for t in 0..4 {
        let cont = if d[t] { 0.0 } else { 1.0 };
        assert_eq!(one_step.advantages[t], r[t] + 0.9 * next[t] * cont - v[t]);
    }
}

#[test]
fn gae_matches_unrolled_sum() {
    let r = [0.7, -1.3, 2.1];
    let v = [0.2, -0.5, 1.1];
    let (gamma, lambda, boot) = (0.97, 0.9, 0.4);
    let out = compute_gae(&r, &v, &[false; 3], boot, gamma, lambda);
    let vals = [v[0], v[1], v[2], boot];
    let delta: Vec<f64> = (0..3).map(|t| r[t] + gamma * vals[t + 1] - vals[t]).collect();
    for t in 0..3 {
        let expect: f64 = (t..3).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum();
        assert!((out.advantages[t] - expect).abs() <= 1e-12);
        assert_eq!(out.returns[t], out.advantages[t] + v[t]);
    }
}

fn linpoly_agent(seed: u64) -> (ParamStore, GaussianPolicy, ValueFunction) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = GaussianPolicy::new(&mut store, 2, 1, &AgentConfig::default(), &mut rng).unwrap();
    let value = ValueFunction::new(&mut store, 2, &AgentConfig::default(), &mut rng).unwrap();
    (store, policy, value)
}

fn raw(x: &[f64]) -> Result<Vec<f64>, DiffError> {
    Ok(x.to_vec())
}

#[test]
fn collection_fills_and_leaves_parameters_alone() {
    let (store, policy, value) = linpoly_agent(1);
    let before = store.flat_values();
    let mut env = make_env(&EnvConfig::named("linpoly")).unwrap();
    let mut c = Collector::new();
    let (mut e_rng, mut a_rng) = (ChaCha8Rng::seed_from_u64(2), ChaCha8Rng::seed_from_u64(3));
    let (buf, stats) = c
        .collect(env.as_mut(), &store, &policy, &value, &raw, 450, 4, 0.99, &mut e_rng, &mut a_rng)
        .unwrap();
    assert_eq!(store.flat_values(), before);
    assert_eq!(buf.filled(), 450);
    assert_eq!(buf.states.len(), 900);
    assert_eq!(buf.mask_windows.len(), 450 * 4);
    // 200-step episodes: two complete within 450 steps, both truncated.
    assert_eq!(stats.episode_lengths, vec![200, 200]);
    assert!(buf.truncated[199] && buf.truncated[399]);
    assert_eq!(buf.dones().iter().filter(|&&d| d).count(), 2);
    // Truncated steps carry the bootstrapped value in the GAE reward only.
    assert_ne!(buf.gae_rewards[199], buf.rewards[199]);
    assert_eq!(buf.gae_rewards[198], buf.rewards[198]);
    // The applied action is the clamped sample.
    for t in 0..450 {
        assert_eq!(buf.applied_actions[t], buf.actions[t].clamp(-1.0, 1.0));
    }
    // Continuing picks up the live episode.
    let (_, more) = c
        .collect(env.as_mut(), &store, &policy, &value, &raw, 10, 4, 0.99, &mut e_rng, &mut a_rng)
        .unwrap();
    assert!(more.episode_returns.is_empty());
    assert_eq!(c.episode_len, 60);
}

#[test]
fn collection_is_deterministic() {
    let run = || {
        let (store, policy, value) = linpoly_agent(4);
        let mut env = make_env(&EnvConfig::named("pendulum")).unwrap();
        let mut c = Collector::new();
        let (buf, _) = c
            .collect(
                env.as_mut(),
                &store,
                &policy,
                &value,
                &|x: &[f64]| Ok(x[..2].to_vec()),
                300,
                3,
                0.99,
                &mut ChaCha8Rng::seed_from_u64(5),
                &mut ChaCha8Rng::seed_from_u64(6),
            )
            .unwrap();
        buf
    };
    assert_eq!(run(), run());
}

#[test]
fn trajectory_dump_has_one_row_per_step() {
    let b = synthetic(&[false, true, false], 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    b.write_trajectory_csv(&path, 10).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,state_0,action_0,reward,done");
    assert_eq!(lines[2], "11,1,-1,1,1");
    assert_eq!(lines.len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mask_matches_scan_and_is_monotone(dones in proptest::collection::vec(any::<bool>(), 1..=8)) {
        let m = build_mask(&dones);
        prop_assert_eq!(&m, &scan_oracle(&dones));
        for h in 1..m.len() {
            prop_assert!(m[h - 1] || !m[h]);
        }
    }

    #[test]
    fn buffer_masks_match_scan(dones in proptest::collection::vec(prop::bool::weighted(0.15), 10..40), horizon in 1usize..6) {
        let b = synthetic(&dones, horizon);
        for t in horizon..dones.len() {
            prop_assert_eq!(b.window_mask(t).to_vec(), scan_oracle(&dones[t - horizon..t]));
        }
    }

    #[test]
    fn gae_telescopes_at_unit_lambda(
        rewards in proptest::collection::vec(-5.0f64..5.0, 1..30),
        seed in 0u64..1000,
        gamma in 0.5f64..1.0,
        boot in -3.0f64..3.0,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rewards.len();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = compute_gae(&rewards, &values, &vec![false; n], boot, gamma, 1.0);
        for t in 0..n {
            let mut g = 0.0;
            for k in (t..n).rev() {
                g = rewards[k] + gamma * g;
            }
            g += gamma.powi((n - t) as i32) * boot;
            prop_assert!((out.returns[t] - g).abs() <= 1e-10);
        }
    }
}
