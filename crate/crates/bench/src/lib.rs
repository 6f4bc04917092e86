//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rprior_core::experience::{ReplayBuffer, Transition};
use rprior_core::sim::{Action, Env, EnvConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` random-action transitions from the default environment.
pub fn random_buffer(n: usize, seed: u64) -> ReplayBuffer {
    let mut env = Env::new(EnvConfig {
        seed,
        ..EnvConfig::default()
    })
    .expect("default environment");
    let mut rng = rng(seed);
    let mut buffer = ReplayBuffer::new(n);
    let mut episode = 0;
    while buffer.len() < n {
        let mut obs = env.reset();
        let mut step = 0;
        loop {
            let action = Action::ALL[rng.gen_range(0..Action::COUNT)];
            let res = env.step(action).expect("step");
            buffer.push(Transition {
                obs,
                action,
                reward: res.reward,
                next_obs: res.observation.clone(),
                terminal: res.terminal,
                truth: res.truth,
                episode,
                step,
            });
            step += 1;
            if res.terminal.is_end() || buffer.len() == n {
                break;
            }
            obs = res.observation;
        }
        episode += 1;
    }
    buffer
}
