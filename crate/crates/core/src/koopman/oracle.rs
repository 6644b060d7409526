//! Hand-set Koopman models with known exact behavior, used as oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KoopmanConfig, KoopmanModel, MaskNorm, Windows};
use crate::diff::{DiffError, InputFeatures, ParamStore, Tensor};
use crate::envs::{Env, Episode, LinearizablePoly};

fn set(store: &mut ParamStore, id: crate::diff::ParamId, values: &[f64]) -> Result<(), DiffError> {
    store.get_mut(id).assign(values)
}

/// Linear (hidden-less) model with `m = state_dim`, identity encoder and
/// decoder, `K_x = I`, `K_u = 0`.
pub fn identity_model(store: &mut ParamStore, state_dim: usize, action_dim: usize) -> Result<KoopmanModel, DiffError> {
    let config = KoopmanConfig {
        latent_dim: Some(state_dim),
        action_latent_dim: Some(action_dim),
        hidden: vec![],
        mask_norm: MaskNorm::Horizon,
    };
    let model = KoopmanModel::new(store, state_dim, action_dim, &config, &mut ChaCha8Rng::seed_from_u64(0))?;
    set(store, model.phi_x.layers[0].0, Tensor::identity(state_dim).data())?;
    set(store, model.psi_x.layers[0].0, Tensor::identity(state_dim).data())?;
    set(store, model.phi_u.layers[0].0, Tensor::identity(action_dim).data())?;
    set(store, model.k_x, Tensor::identity(state_dim).data())?;
    Ok(model)
}

/// Exact lifted model of [`LinearizablePoly`]: encoder `(x1, x2, x1^2)`,
/// decoder picks the first two coordinates, identity action encoder,
/// `K_x = A_z`, `K_u = B_z`.
pub fn linpoly_model(store: &mut ParamStore, env: &LinearizablePoly) -> Result<KoopmanModel, DiffError> {
    let config = KoopmanConfig {
        latent_dim: Some(3),
        action_latent_dim: Some(1),
        hidden: vec![],
        mask_norm: MaskNorm::Horizon,
    };
    let model = KoopmanModel::with_encoder_features(
        store,
        2,
        1,
        &config,
        InputFeatures::AppendSquares(vec![0]),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let (a, b) = env.lifted_matrices();
    set(store, model.phi_x.layers[0].0, Tensor::identity(3).data())?;
    set(store, model.psi_x.layers[0].0, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])?;
    set(store, model.phi_u.layers[0].0, &[1.0])?;
    set(store, model.k_x, &a)?;
    set(store, model.k_u, &b)?;
    Ok(model)
}

/// Fully valid windows cut from random-action [`LinearizablePoly`]
/// trajectories.
pub fn linpoly_windows(env: &LinearizablePoly, batch: usize, horizon: usize, seed: u64) -> Windows {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ep = Episode::new(env.clone());
    let mut w = Windows::zeros(batch, horizon, 2, 1);
    for i in 0..batch {
        let mut x = ep.reset(rng.random());
        // Start somewhere inside the episode so the states vary.
        let skip = rng.random_range(0..(env.max_episode_steps - horizon).max(1));
        for _ in 0..skip {
            x = ep.step(&[rng.random_range(-1.0..=1.0)]).expect("within episode").next_state;
        }
        w.set_state(i, 0, &x);
        for h in 0..horizon {
            let u = rng.random_range(-env.action_bound..=env.action_bound);
            let r = ep.step(&[u]).expect("within episode");
            w.set_action(i, h, &[u]);
            w.set_state(i, h + 1, &r.next_state);
            w.set_mask(i, h + 1, true);
        }
    }
    w
}
