use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{identity_model, linpoly_model, linpoly_windows};
use super::*;
use crate::diff::gradcheck::check_gradients;
use crate::envs::LinearizablePoly;

fn small_config() -> KoopmanConfig {
    KoopmanConfig {
        latent_dim: Some(4),
        action_latent_dim: Some(3),
        hidden: vec![5],
        mask_norm: MaskNorm::Horizon,
    }
}

fn random_windows(rng: &mut ChaCha8Rng, batch: usize, horizon: usize, sd: usize, ad: usize) -> Windows {
    let mut w = Windows::zeros(batch, horizon, sd, ad);
    w.states.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    w.actions.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    for i in 0..batch {
        let cut = rng.random_range(1..=horizon + 1);
        for h in 1..=horizon {
            w.set_mask(i, h, h < cut);
        }
    }
    w
}

fn loss_values(model: &KoopmanModel, store: &ParamStore, w: &Windows, norm: MaskNorm) -> (f64, f64, f64) {
    let mut g = Graph::new();
    let l = model.losses(&mut g, store, w, norm).unwrap();
    (g.scalar(l.rec), g.scalar(l.ls), g.scalar(l.ss))
}

#[test]
fn default_dimensions() {
    assert_eq!(default_latent_dim(1), 8);
    assert_eq!(default_latent_dim(3), 12);
    assert_eq!(default_latent_dim(17), 48);
    assert_eq!(default_action_latent_dim(1), 4);
    assert_eq!(default_action_latent_dim(6), 12);
}

#[test]
fn construction_invariants() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = KoopmanModel::new(&mut store, 3, 1, &KoopmanConfig::default(), &mut rng).unwrap();
    assert_eq!((model.latent_dim, model.action_latent_dim), (12, 4));
    assert!(store.get(model.k_u).data().iter().all(|&v| v == 0.0));
    let kx = store.get(model.k_x).data();
    for i in 0..12 {
        for j in 0..12 {
            let dot: f64 = (0..12).map(|r| kx[r * 12 + i] * kx[r * 12 + j]).sum();
            assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-8);
        }
    }
    let ids = model.param_ids();
    assert_eq!(ids.len(), store.len());
    assert!(ids.iter().all(|&id| store.param(id).group == GROUP));
    let too_small = KoopmanConfig {
        latent_dim: Some(2),
        ..KoopmanConfig::default()
    };
    assert!(KoopmanModel::new(&mut store, 3, 1, &too_small, &mut rng).is_err());
}

#[test]
fn identity_autoencoder_round_trips() {
    let mut store = ParamStore::new();
    let model = identity_model(&mut store, 2, 1).unwrap();
    let x = Tensor::from_rows(&[vec![3.0, -1.0], vec![0.5, 2.0]]).unwrap();
    assert_eq!(model.encode_eval(&store, &x).unwrap(), x);
    let mut g = Graph::new();
    let xv = g.constant(&x).unwrap();
    let y = model.encode_state(&mut g, &store, xv).unwrap();
    let back = model.decode_state(&mut g, &store, y).unwrap();
    assert_eq!(g.value(back), x.data());
    let rec = model.reconstruction_loss(&mut g, &store, &x).unwrap();
    assert_eq!(g.scalar(rec), 0.0);
}

#[test]
fn encoder_rows_are_independent() {
    let mut store = ParamStore::new();
    let model = KoopmanModel::new(&mut store, 3, 1, &KoopmanConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let a = [0.1, -0.4, 0.9];
    let b = [-1.0, 0.3, 0.2];
    let ab = model.encode_eval(&store, &Tensor::from_rows(&[a.to_vec(), b.to_vec()]).unwrap()).unwrap();
    let ba = model.encode_eval(&store, &Tensor::from_rows(&[b.to_vec(), a.to_vec()]).unwrap()).unwrap();
    assert_eq!(ab.row(0), ba.row(1));
    assert_eq!(ab.row(1), ba.row(0));
}

#[test]
fn quadratic_shim_matches_direct_formula() {
    let mut store = ParamStore::new();
    let model = linpoly_model(&mut store, &LinearizablePoly::default()).unwrap();
    let rows = vec![vec![0.7, -0.2], vec![-1.5, 3.0]];
    let y = model.encode_eval(&store, &Tensor::from_rows(&rows).unwrap()).unwrap();
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(y.row(i), &[r[0], r[1], r[0] * r[0]]);
    }
}

#[test]
fn zero_action_push_vanishes_at_init() {
    let mut store = ParamStore::new();
    let model = KoopmanModel::new(&mut store, 2, 1, &KoopmanConfig::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mut g = Graph::new();
    let u = g.constant_data(vec![0.0], (1, 1)).unwrap();
    let v = model.encode_action(&mut g, &store, u).unwrap();
    assert!(g.value(v).iter().all(|x| x.is_finite()));
    let ku = g.param(&store, model.k_u).unwrap();
    let push = g.matmul_t(v, false, ku, true).unwrap();
    assert!(g.value(push).iter().all(|&x| x == 0.0));
}

#[test]
fn identity_dynamics_hold_the_latent() {
    let mut store = ParamStore::new();
    let model = identity_model(&mut store, 2, 1).unwrap();
    let mut g = Graph::new();
    let y0 = g.constant_data(vec![0.3, -0.7], (1, 2)).unwrap();
    let v = g.constant_data(vec![1.0, -2.0, 5.0], (3, 1)).unwrap();
    for y in model.predict(&mut g, &store, y0, v).unwrap() {
        assert_eq!(g.value(y), &[0.3, -0.7]);
    }
}

#[test]
fn scalar_geometric_recursion() {
    let mut store = ParamStore::new();
    let model = identity_model(&mut store, 1, 1).unwrap();
    store.get_mut(model.k_x).assign(&[2.0]).unwrap();
    let mut g = Graph::new();
    let y0 = g.constant_data(vec![1.0], (1, 1)).unwrap();
    let v = g.constant_data(vec![0.0; 3], (3, 1)).unwrap();
    let ys: Vec<f64> = model
        .predict(&mut g, &store, y0, v)
        .unwrap()
        .into_iter()
        .map(|y| g.scalar(y))
        .collect();
    assert_eq!(ys, vec![2.0, 4.0, 8.0]);
}

#[test]
fn linpoly_oracle_predicts_lifted_states() {
    let env = LinearizablePoly::default();
    let mut store = ParamStore::new();
    let model = linpoly_model(&mut store, &env).unwrap();
    let w = linpoly_windows(&env, 64, 8, 9);
    let pred = model.predicted_latents(&store, &w).unwrap();
    for h in 1..=8 {
        for i in 0..64 {
            let z = LinearizablePoly::lift(w.state(i, h));
            let p = pred.row((h - 1) * 64 + i);
            for d in 0..3 {
                assert!((p[d] - z[d]).abs() <= 1e-10, "h={h} i={i} d={d}");
            }
        }
    }
    let (rec, ls, ss) = loss_values(&model, &store, &w, MaskNorm::Horizon);
    assert!(rec <= 1e-10 && ls <= 1e-10 && ss <= 1e-10, "{rec} {ls} {ss}");
}

#[test]
fn reconstruction_with_zero_decoder() {
    let mut store = ParamStore::new();
    let model = identity_model(&mut store, 2, 1).unwrap();
    store.get_mut(model.psi_x.layers[0].0).assign(&[0.0; 4]).unwrap();
    let mut g = Graph::new();
    let l = model
        .reconstruction_loss(&mut g, &store, &Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap())
        .unwrap();
    assert_eq!(g.scalar(l), 12.5);
    // The windowed form reconstructs the last state of each window.
    let mut w = Windows::zeros(1, 1, 2, 1);
    w.set_state(0, 1, &[3.0, 4.0]);
    assert_eq!(loss_values(&model, &store, &w, MaskNorm::Horizon).0, 12.5);
}

#[test]
fn latent_prediction_by_hand() {
    // Scalar latent, y_h = y0 = 0; targets -0.3, -0.4 give errors 0.3, 0.4.
    let mut store = ParamStore::new();
    let model = identity_model(&mut store, 1, 1).unwrap();
    let mut w = Windows::zeros(1, 2, 1, 1);
    w.set_state(0, 1, &[-0.3]);
    w.set_state(0, 2, &[-0.4]);
    w.set_mask(0, 1, true);
    let (_, ls, ss) = loss_values(&model, &store, &w, MaskNorm::Horizon);
    assert!((ls - 0.045).abs() < 1e-15);
    assert_eq!(ls, ss);
    let (_, ls_valid, _) = loss_values(&model, &store, &w, MaskNorm::ValidSteps);
    assert!((ls_valid - 0.09).abs() < 1e-15);
}

#[test]
fn all_masked_gives_zero() {
    let mut store = ParamStore::new();
    let model = KoopmanModel::new(&mut store, 2, 1, &small_config(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut w = random_windows(&mut rng, 6, 4, 2, 1);
    w.masks.iter_mut().for_each(|m| *m = 0.0);
    for norm in [MaskNorm::Horizon, MaskNorm::ValidSteps] {
        let (_, ls, ss) = loss_values(&model, &store, &w, norm);
        assert_eq!((ls, ss), (0.0, 0.0));
    }
}

#[test]
fn state_loss_equals_latent_loss_for_identity_decoder() {
    let mut store = ParamStore::new();
    let model = identity_model(&mut store, 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kx: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    store.get_mut(model.k_x).assign(&kx).unwrap();
    store.get_mut(model.k_u).assign(&[0.3, -0.6]).unwrap();
    let w = random_windows(&mut rng, 5, 3, 2, 1);
    let (_, ls, ss) = loss_values(&model, &store, &w, MaskNorm::Horizon);
    assert!(ls > 0.0);
    assert_eq!(ls, ss);
}

#[test]
fn weighted_total_by_hand() {
    let w = LossWeights::default();
    assert!((w.total(0.2, 0.4, 0.1) - 0.25).abs() < 1e-15);
    let rec_only = LossWeights {
        rec: 1.0,
        ls: 0.0,
        ss: 0.0,
    };
    assert_eq!(rec_only.total(0.7, 3.0, 9.0), 0.7);
    let none = LossWeights {
        rec: 0.0,
        ls: 0.0,
        ss: 0.0,
    };
    assert_eq!(none.total(0.7, 3.0, 9.0), 0.0);
    assert!(LossWeights { rec: -0.1, ..w }.validate().is_err());

    let mut g = Graph::new();
    let l = KoopmanLosses {
        rec: g.constant_data(vec![0.2], (1, 1)).unwrap(),
        ls: g.constant_data(vec![0.4], (1, 1)).unwrap(),
        ss: g.constant_data(vec![0.1], (1, 1)).unwrap(),
        anchor: g.constant_data(vec![0.0], (1, 1)).unwrap(),
    };
    let t = l.weighted(&mut g, &w).unwrap();
    assert!((g.scalar(t) - 0.25).abs() < 1e-15);
}

#[test]
fn losses_match_finite_differences() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParamStore::new();
        let model = KoopmanModel::new(&mut store, 2, 1, &small_config(), &mut rng).unwrap();
        // Move K_u off zero so the action path carries gradient.
        let ku: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
        store.get_mut(model.k_u).assign(&ku).unwrap();
        let w = random_windows(&mut rng, 3, 3, 2, 1);
        let ids = model.param_ids();
        for which in 0..3 {
            let report = check_gradients(&mut store, &ids, 1e-5, |g, s| {
                let l = model.losses(g, s, &w, MaskNorm::Horizon)?;
                Ok([l.rec, l.ls, l.ss][which])
            })
            .unwrap();
            assert!(report.max_rel_err <= 1e-4, "seed {seed} loss {which}: {report:?}");
        }
    }
}

#[test]
fn decoder_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut store = ParamStore::new();
    let model = KoopmanModel::new(&mut store, 3, 1, &small_config(), &mut rng).unwrap();
    let y = Tensor::new(vec![4, 4], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let ids = model.psi_x.param_ids();
    let report = check_gradients(&mut store, &ids, 1e-5, |g, s| {
        let yv = g.constant(&y)?;
        let x = model.decode_state(g, s, yv)?;
        let sq = g.square(x);
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

fn prop_model(seed: u64) -> (ParamStore, KoopmanModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = KoopmanModel::new(&mut store, 2, 1, &small_config(), &mut rng).unwrap();
    let ku: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
    store.get_mut(model.k_u).assign(&ku).unwrap();
    (store, model)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prediction_is_linear_in_the_initial_latent(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (store, model) = prop_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let y1: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y2: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
        // Zero actions isolate the homogeneous part of the recursion.
        let run = |y0: &[f64]| -> Vec<f64> {
            let mut g = Graph::new();
            let y = g.constant_data(y0.to_vec(), (1, 4)).unwrap();
            let v = g.constant_data(vec![0.0; 5 * 3], (5, 3)).unwrap();
            model.predict(&mut g, &store, y, v).unwrap().into_iter().flat_map(|p| g.value(p).to_vec()).collect()
        };
        let (p1, p2, pm) = (run(&y1), run(&y2), run(&mix));
        for i in 0..pm.len() {
            prop_assert!((pm[i] - (a * p1[i] + b * p2[i])).abs() <= 1e-10);
        }
    }

    #[test]
    fn masked_steps_do_not_matter(seed in 0u64..1000, horizon in 1usize..6, noise in -3.0f64..3.0) {
        let (store, model) = prop_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_windows(&mut rng, 4, horizon, 2, 1);
        let mut changed = w.clone();
        for i in 0..4 {
            for h in 1..=horizon {
                if !w.mask(i, h) {
                    let x: Vec<f64> = w.state(i, h).iter().map(|v| v + noise).collect();
                    changed.set_state(i, h, &x);
                    let u: Vec<f64> = w.action(i, h - 1).iter().map(|v| v - noise).collect();
                    changed.set_action(i, h - 1, &u);
                }
            }
        }
        for norm in [MaskNorm::Horizon, MaskNorm::ValidSteps] {
            let (_, ls, ss) = loss_values(&model, &store, &w, norm);
            let (_, ls2, ss2) = loss_values(&model, &store, &changed, norm);
            prop_assert_eq!(ls, ls2);
            prop_assert_eq!(ss, ss2);
        }
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..1000) {
        let (store, model) = prop_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let w = random_windows(&mut rng, 5, 3, 2, 1);
        let (rec, ls, ss) = loss_values(&model, &store, &w, MaskNorm::Horizon);
        prop_assert!(rec >= 0.0 && ls >= 0.0 && ss >= 0.0);
    }

    #[test]
    fn predictions_ignore_actions_at_init(seed in 0u64..1000, shift in -1.0f64..1.0) {
        let mut store = ParamStore::new();
        let model = KoopmanModel::new(&mut store, 2, 1, &small_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let w = random_windows(&mut rng, 3, 4, 2, 1);
        let mut moved = w.clone();
        moved.actions.iter_mut().for_each(|a| *a += shift);
        prop_assert_eq!(model.predicted_latents(&store, &w).unwrap(), model.predicted_latents(&store, &moved).unwrap());
    }
}
