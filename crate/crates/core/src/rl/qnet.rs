use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, Adam, GradientSet, Matrix, Network};
use crate::sim::Action;

/// Action-value network `n → hidden… → 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    pub net: Network,
}

impl QNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(Action::COUNT);
        Self::from_network(Network::glorot(&sizes, Activation::Relu, Activation::Identity, rng)?)
    }

    pub fn from_network(net: Network) -> Result<Self> {
        check_len("QNet output", Action::COUNT, net.output_size())?;
        Ok(Self { net })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_size()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<[f64; 3]> {
        let q = self.net.predict(state)?;
        Ok([q[0], q[1], q[2]])
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice. One uniform draw decides exploration; a second picks the
/// random action.
pub fn select_action<R: Rng + ?Sized>(q: &QNet, state: &[f64], epsilon: f64, rng: &mut R) -> Result<Action> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(Action::ALL[rng.gen_range(0..Action::COUNT)]);
    }
    Ok(Action::from_index(greedy(&q.q_values(state)?)).unwrap())
}

/// A minibatch of encoded transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TdBatch {
    pub states: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    /// Absorbing end: no bootstrap.
    pub done: Vec<bool>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let b = self.len();
        check_len("TdBatch rewards", b, self.rewards.len())?;
        check_len("TdBatch done", b, self.done.len())?;
        check_len("TdBatch states", b * dim, self.states.data().len())?;
        check_len("TdBatch next_states", b * dim, self.next_states.data().len())?;
        if let Some(a) = self.actions.iter().find(|&&a| a >= Action::COUNT) {
            return Err(Error::Contract(format!("action index {a} out of range")));
        }
        Ok(())
    }
}

/// `y = r` for absorbing samples, otherwise `r + γ·Q'(s', argmax_a Q(s', a))`.
pub fn td_targets(online: &QNet, target: &QNet, batch: &TdBatch, gamma: f64) -> Result<Vec<f64>> {
    batch.validate(online.state_dim())?;
    let q_next = online.net.predict_batch(&batch.next_states)?;
    let q_target = target.net.predict_batch(&batch.next_states)?;
    Ok((0..batch.len())
        .map(|b| {
            if batch.done[b] {
                batch.rewards[b]
            } else {
                batch.rewards[b] + gamma * q_target.get(b, greedy(q_next.row(b)))
            }
        })
        .collect())
}

/// Mean `(y − Q(s, a))²` with fixed targets, and its parameter gradient.
pub fn td_loss(q: &QNet, batch: &TdBatch, targets: &[f64]) -> Result<(f64, GradientSet)> {
    batch.validate(q.state_dim())?;
    check_len("td targets", batch.len(), targets.len())?;
    if batch.is_empty() {
        return Ok((0.0, GradientSet::zeros_like(&q.net)));
    }
    let (out, cache) = q.net.forward_batch(&batch.states)?;
    let k = batch.len() as f64;
    let mut grad = Matrix::zeros(batch.len(), Action::COUNT);
    let mut loss = 0.0;
    for b in 0..batch.len() {
        let a = batch.actions[b];
        let err = out.get(b, a) - targets[b];
        loss += err * err;
        grad.set(b, a, 2.0 * err / k);
    }
    let grads = q.net.backward_params(&cache, &grad)?;
    Ok((loss / k, grads))
}

/// One Double DQN step on `online`; `target` is read only. Returns the TD
/// loss before the update.
pub fn ddqn_update(online: &mut QNet, target: &QNet, batch: &TdBatch, gamma: f64, opt: &mut Adam) -> Result<f64> {
    let y = td_targets(online, target, batch, gamma)?;
    let (loss, grads) = td_loss(online, batch, &y)?;
    opt.step(&mut online.net, &grads)?;
    Ok(loss)
}

/// Hard copy of the online parameters into the target network.
pub fn sync_target(online: &QNet, target: &mut QNet) -> Result<()> {
    target.net.copy_from(&online.net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{parameters, set_parameters, AdamConfig, DenseLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Single identity layer on a 3-dimensional state: Q = W s + b.
    fn linear(w: [[f64; 3]; 3], b: [f64; 3]) -> QNet {
        let layer = DenseLayer::new(
            Matrix::from_rows(&w).unwrap(),
            b.to_vec(),
            Activation::Identity,
        )
        .unwrap();
        QNet::from_network(Network::new(vec![layer]).unwrap()).unwrap()
    }

    const I: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn q_values_of_zero_and_hand_nets() {
        let zero = linear([[0.0; 3]; 3], [0.0; 3]);
        assert_eq!(zero.q_values(&[1.0, -2.0, 3.0]).unwrap(), [0.0; 3]);
        let q = linear([[1.0, 2.0, 0.0], [0.0, 0.0, -1.0], [0.5, 0.5, 0.5]], [0.1, 0.2, 0.3]);
        let v = q.q_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v, [5.1, -2.8, 3.3]);
        assert_eq!(v, q.q_values(&[1.0, 2.0, 3.0]).unwrap());
        assert!(q.q_values(&[1.0]).is_err());
    }

    #[test]
    fn greedy_choice_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = linear(I, [0.0; 3]);
        assert_eq!(select_action(&q, &[1.0, 3.0, 2.0], 0.0, &mut rng).unwrap(), Action::TurnLeft);
        assert_eq!(select_action(&q, &[2.0, 2.0, 1.0], 0.0, &mut rng).unwrap(), Action::Forward);
        assert_eq!(greedy(&[1.0, 4.0, 4.0]), 1);
        assert!(select_action(&q, &[0.0; 3], 1.5, &mut rng).is_err());
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = linear(I, [0.0; 3]);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[select_action(&q, &[5.0, 0.0, 0.0], 1.0, &mut rng).unwrap().index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    fn one_sample(next: [f64; 3], reward: f64, done: bool) -> TdBatch {
        TdBatch {
            states: Matrix::from_rows(&[[0.0; 3]]).unwrap(),
            actions: vec![0],
            rewards: vec![reward],
            next_states: Matrix::from_rows(&[next]).unwrap(),
            done: vec![done],
        }
    }

    #[test]
    fn absorbing_target_is_the_reward() {
        let q = linear(I, [0.0; 3]);
        let y = td_targets(&q, &q, &one_sample([9.0, 9.0, 9.0], 5.0, true), 0.99).unwrap();
        assert_eq!(y, vec![5.0]);
    }

    #[test]
    fn double_dqn_target_example() {
        // online picks action 1 from Q(s')=(0,2,1); target evaluates it at 4
        let online = linear(I, [0.0; 3]);
        let target = linear([[0.0; 3], [0.0, 2.0, 0.0], [0.0; 3]], [0.0; 3]);
        let y = td_targets(&online, &target, &one_sample([0.0, 2.0, 1.0], 1.0, false), 0.99).unwrap();
        assert!((y[0] - 4.96).abs() < 1e-12);
    }

    #[test]
    fn shared_network_reduces_to_max() {
        let q = linear([[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, -1.0]], [0.0; 3]);
        let y = td_targets(&q, &q, &one_sample([1.0, 1.0, 1.0], 2.0, false), 0.5).unwrap();
        assert_eq!(y[0], 2.0 + 0.5 * 3.0);
    }

    #[test]
    fn update_moves_online_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut online = QNet::new(3, &[8], &mut rng).unwrap();
        let target = QNet::new(3, &[8], &mut rng).unwrap();
        let before = target.clone();
        let online_before = online.clone();
        let mut opt = Adam::new(&online.net, AdamConfig::default());
        ddqn_update(&mut online, &target, &one_sample([1.0, 0.0, 1.0], 1.0, false), 0.9, &mut opt).unwrap();
        assert_eq!(target, before);
        assert_ne!(online, online_before);
    }

    #[test]
    fn sync_copies_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let online = QNet::new(3, &[8], &mut rng).unwrap();
        let mut target = QNet::new(3, &[8], &mut rng).unwrap();
        let s = [0.3, -0.1, 0.8];
        assert_ne!(online.q_values(&s).unwrap(), target.q_values(&s).unwrap());
        sync_target(&online, &mut target).unwrap();
        assert_eq!(online.q_values(&s).unwrap(), target.q_values(&s).unwrap());
        let once = target.clone();
        sync_target(&online, &mut target).unwrap();
        assert_eq!(parameters(&target.net), parameters(&once.net));
    }

    #[test]
    fn td_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let q = QNet::new(2, &[5, 4], &mut rng).unwrap();
            let b = 4;
            let batch = TdBatch {
                states: Matrix::from_vec(b, 2, (0..2 * b).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                actions: (0..b).map(|_| rng.gen_range(0..3)).collect(),
                rewards: (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                next_states: Matrix::from_vec(b, 2, (0..2 * b).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                done: (0..b).map(|_| rng.gen_bool(0.3)).collect(),
            };
            let y = td_targets(&q, &q, &batch, 0.9).unwrap();
            let (_, g) = td_loss(&q, &batch, &y).unwrap();
            let analytic: Vec<f64> = g.values().collect();
            let theta = parameters(&q.net);
            for k in 0..theta.len() {
                let eval = |d: f64| {
                    let mut n = q.clone();
                    let mut p = theta.clone();
                    p[k] += d;
                    set_parameters(&mut n.net, &p).unwrap();
                    td_loss(&n, &batch, &y).unwrap().0
                };
                let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
                let err = (fd - analytic[k]).abs();
                assert!(err / fd.abs().max(analytic[k].abs()) < 1e-4 || err < 1e-9, "{fd} vs {}", analytic[k]);
            }
        }
    }
}
