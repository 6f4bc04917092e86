use serde::{Deserialize, Serialize};

use super::{GradientSet, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias-corrected moments, shape-congruent with one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: GradientSet,
    v: GradientSet,
}

impl Adam {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Fails without touching `net` if any gradient is
    /// non-finite or shapes disagree.
    pub fn step(&mut self, net: &mut Network, grads: &GradientSet) -> Result<()> {
        if !grads.matches(net) || !self.m.congruent(grads) {
            return Err(Error::Contract(
                "gradient set is not congruent with the network/optimizer".into(),
            ));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFiniteGradient { layer });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);

        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };

        for (((layer, g), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            update(
                layer.weights.data_mut(),
                g.weights.data(),
                m.weights.data_mut(),
                v.weights.data_mut(),
            );
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, Matrix};

    fn scalar(w: f64) -> Network {
        Network::new(vec![DenseLayer::new(
            Matrix::from_vec(1, 1, vec![w]).unwrap(),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn weight(net: &Network) -> f64 {
        net.layers()[0].weights.get(0, 0)
    }

    fn grad_of(net: &Network, g: f64) -> GradientSet {
        let mut gs = GradientSet::zeros_like(net);
        gs.layers[0].weights.set(0, 0, g);
        gs
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar(1.5);
        let mut opt = Adam::new(&net, AdamConfig::default());
        let g = GradientSet::zeros_like(&net);
        opt.step(&mut net, &g).unwrap();
        assert_eq!(weight(&net), 1.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar(0.0);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.1));
        let g = grad_of(&net, 1.0);
        opt.step(&mut net, &g).unwrap();
        // m̂ = 1, v̂ = 1 → Δw = -0.1 / (1 + 1e-8)
        assert!((weight(&net) + 0.1).abs() < 1e-8);
    }

    #[test]
    fn descends_scalar_quadratic() {
        let mut net = scalar(0.0);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.05));
        for _ in 0..100 {
            let w = weight(&net);
            let g = grad_of(&net, 2.0 * (w - 3.0));
            opt.step(&mut net, &g).unwrap();
        }
        assert!((weight(&net) - 3.0).abs() < 0.1, "w = {}", weight(&net));
    }

    #[test]
    fn converges_within_two_hundred_steps_from_various_starts() {
        for start in [-2.0, 0.0, 1.0, 5.0, 7.0] {
            let mut net = scalar(start);
            let mut opt = Adam::new(&net, AdamConfig::with_lr(0.05));
            let target = 3.0;
            let hit = (0..200).any(|_| {
                let w = weight(&net);
                let g = grad_of(&net, 2.0 * (w - target));
                opt.step(&mut net, &g).unwrap();
                (weight(&net) - target).abs() < 0.1
            });
            assert!(hit, "start {start}");
        }
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut net = scalar(0.0);
        let mut opt = Adam::new(&net, AdamConfig::default());
        let g = grad_of(&net, f64::NAN);
        match opt.step(&mut net, &g) {
            Err(Error::NonFiniteGradient { layer }) => assert_eq!(layer, 0),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(weight(&net), 0.0);
        assert_eq!(opt.step_count(), 0);
    }
}
