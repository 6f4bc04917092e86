use std::io::{Read, Write};

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::{self, Activation, Adam, AdamConfig, ForwardCache, GradientSet, Matrix, Network};
use crate::sim::Observation;

/// Two-branch encoder: LiDAR and camera each map to an `n`-dimensional
/// prediction, a single dense layer fuses the concatenation (plus the target
/// coordinates in multi-target mode) into the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNet {
    pub lidar: Network,
    pub camera: Network,
    pub fusion: Network,
    state_dim: usize,
    multi_target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateNetShape {
    pub n_beams: usize,
    pub n_px: usize,
    pub hidden: usize,
    pub state_dim: usize,
    pub multi_target: bool,
}

impl StateNet {
    pub fn new<R: Rng + ?Sized>(shape: StateNetShape, rng: &mut R) -> Result<Self> {
        let n = shape.state_dim;
        if n == 0 || shape.hidden == 0 || shape.n_beams == 0 || shape.n_px == 0 {
            return Err(Error::Config("state net sizes must be positive".into()));
        }
        let lidar = Network::glorot(&[shape.n_beams, shape.hidden, n], Activation::Tanh, Activation::Identity, rng)?;
        let camera = Network::glorot(&[3 * shape.n_px, shape.hidden, n], Activation::Tanh, Activation::Identity, rng)?;
        let fusion_in = 2 * n + if shape.multi_target { 2 } else { 0 };
        let fusion = Network::glorot(&[fusion_in, n], Activation::Identity, Activation::Identity, rng)?;
        Self::from_parts(lidar, camera, fusion, shape.multi_target)
    }

    pub fn from_parts(lidar: Network, camera: Network, fusion: Network, multi_target: bool) -> Result<Self> {
        let n = fusion.output_size();
        check_len("StateNet lidar branch output", n, lidar.output_size())?;
        check_len("StateNet camera branch output", n, camera.output_size())?;
        check_len(
            "StateNet fusion input",
            2 * n + if multi_target { 2 } else { 0 },
            fusion.input_size(),
        )?;
        if fusion.layers().len() != 1 {
            return Err(Error::Contract("fusion must be a single dense layer".into()));
        }
        Ok(Self {
            lidar,
            camera,
            fusion,
            state_dim: n,
            multi_target,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn is_multi_target(&self) -> bool {
        self.multi_target
    }

    pub fn shape(&self) -> StateNetShape {
        StateNetShape {
            n_beams: self.lidar.input_size(),
            n_px: self.camera.input_size() / 3,
            hidden: self.lidar.layers()[0].outputs(),
            state_dim: self.state_dim,
            multi_target: self.multi_target,
        }
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        check_len("StateNet lidar input", self.lidar.input_size(), obs.lidar.len())?;
        check_len("StateNet camera input", self.camera.input_size(), obs.camera.len())?;
        if obs.target.is_some() != self.multi_target {
            return Err(Error::Contract(format!(
                "observation target presence ({}) does not match the encoder's multi-target mode ({})",
                obs.target.is_some(),
                self.multi_target
            )));
        }
        Ok(())
    }

    fn fusion_input(&self, lidar_out: &[f64], camera_out: &[f64], target: Option<[f64; 2]>) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.fusion.input_size());
        v.extend_from_slice(lidar_out);
        v.extend_from_slice(camera_out);
        if let Some(t) = target {
            v.extend_from_slice(&t);
        }
        v
    }

    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let l = self.lidar.predict(&obs.lidar)?;
        let c = self.camera.predict(&obs.camera)?;
        self.fusion.predict(&self.fusion_input(&l, &c, obs.target))
    }

    /// Batched encoding that records what [`StateNet::backward`] needs.
    pub fn encode_batch<'a, I>(&self, observations: I) -> Result<(Matrix, EncodeCache)>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let obs: Vec<&Observation> = observations.into_iter().collect();
        for o in &obs {
            self.check_obs(o)?;
        }
        let mut lidar_in = Matrix::zeros(obs.len(), self.lidar.input_size());
        let mut camera_in = Matrix::zeros(obs.len(), self.camera.input_size());
        for (b, o) in obs.iter().enumerate() {
            lidar_in.row_mut(b).copy_from_slice(&o.lidar);
            camera_in.row_mut(b).copy_from_slice(&o.camera);
        }
        let (l, lidar_cache) = self.lidar.forward_batch(&lidar_in)?;
        let (c, camera_cache) = self.camera.forward_batch(&camera_in)?;
        let mut fusion_in = Matrix::zeros(obs.len(), self.fusion.input_size());
        for (b, o) in obs.iter().enumerate() {
            fusion_in
                .row_mut(b)
                .copy_from_slice(&self.fusion_input(l.row(b), c.row(b), o.target));
        }
        let (states, fusion_cache) = self.fusion.forward_batch(&fusion_in)?;
        Ok((
            states,
            EncodeCache {
                lidar: lidar_cache,
                camera: camera_cache,
                fusion: fusion_cache,
            },
        ))
    }

    /// Encodes without recording caches.
    pub fn encode_many<'a, I>(&self, observations: I) -> Result<Matrix>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let obs: Vec<&Observation> = observations.into_iter().collect();
        let mut out = Matrix::zeros(obs.len(), self.state_dim);
        for (b, o) in obs.iter().enumerate() {
            out.row_mut(b).copy_from_slice(&self.encode(o)?);
        }
        Ok(out)
    }

    /// Backpropagates `state_grad` (∂L/∂state per row) through one encoder
    /// pass.
    pub fn backward(&self, cache: &EncodeCache, state_grad: &Matrix) -> Result<StateNetGrads> {
        let n = self.state_dim;
        let (fusion, fusion_in_grad) = self.fusion.backward(&cache.fusion, state_grad)?;
        let batch = state_grad.rows();
        let mut gl = Matrix::zeros(batch, n);
        let mut gc = Matrix::zeros(batch, n);
        for b in 0..batch {
            let row = fusion_in_grad.row(b);
            gl.row_mut(b).copy_from_slice(&row[..n]);
            gc.row_mut(b).copy_from_slice(&row[n..2 * n]);
        }
        let lidar = self.lidar.backward_params(&cache.lidar, &gl)?;
        let camera = self.camera.backward_params(&cache.camera, &gc)?;
        Ok(StateNetGrads { lidar, camera, fusion })
    }

    /// Sum of squared weights over all three sub-networks and its gradient.
    pub fn l2_penalty(&self) -> (f64, StateNetGrads) {
        let (a, lidar) = nn::l2_penalty(&self.lidar);
        let (b, camera) = nn::l2_penalty(&self.camera);
        let (c, fusion) = nn::l2_penalty(&self.fusion);
        (a + b + c, StateNetGrads { lidar, camera, fusion })
    }

    pub fn zero_grads(&self) -> StateNetGrads {
        StateNetGrads {
            lidar: GradientSet::zeros_like(&self.lidar),
            camera: GradientSet::zeros_like(&self.camera),
            fusion: GradientSet::zeros_like(&self.fusion),
        }
    }

    /// Flat parameter vector over (lidar, camera, fusion).
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = nn::parameters(&self.lidar);
        v.extend(nn::parameters(&self.camera));
        v.extend(nn::parameters(&self.fusion));
        v
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let a = self.lidar.parameter_count();
        let b = self.camera.parameter_count();
        check_len("StateNet::set_parameters", a + b + self.fusion.parameter_count(), values.len())?;
        nn::set_parameters(&mut self.lidar, &values[..a])?;
        nn::set_parameters(&mut self.camera, &values[a..a + b])?;
        nn::set_parameters(&mut self.fusion, &values[a + b..])
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let s = self.shape();
        for v in [s.state_dim, s.n_beams, s.n_px, s.hidden] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&[s.multi_target as u8])?;
        nn::write_network(w, &self.lidar)?;
        nn::write_network(w, &self.camera)?;
        nn::write_network(w, &self.fusion)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |d: &str| Error::Format {
            what: "state net checkpoint",
            detail: d.into(),
        };
        let mut head = [0u8; 4 + 4 + 16 + 1];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |k: usize| u32::from_le_bytes(head[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
        if word(0) as u32 != FORMAT_VERSION {
            return Err(bad("unsupported version"));
        }
        let (n, n_beams, n_px, hidden) = (word(1), word(2), word(3), word(4));
        let multi = match head[24] {
            0 => false,
            1 => true,
            _ => return Err(bad("bad multi-target flag")),
        };
        let lidar = nn::read_network(r)?;
        let camera = nn::read_network(r)?;
        let fusion = nn::read_network(r)?;
        let net = Self::from_parts(lidar, camera, fusion, multi).map_err(|e| bad(&e.to_string()))?;
        let s = net.shape();
        if (s.state_dim, s.n_beams, s.n_px, s.hidden) != (n, n_beams, n_px, hidden) {
            return Err(bad("header disagrees with stored networks"));
        }
        Ok(net)
    }
}

const MAGIC: &[u8; 4] = b"RPSN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct EncodeCache {
    lidar: ForwardCache,
    camera: ForwardCache,
    fusion: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateNetGrads {
    pub lidar: GradientSet,
    pub camera: GradientSet,
    pub fusion: GradientSet,
}

impl StateNetGrads {
    pub fn add_scaled(&mut self, other: &StateNetGrads, scale: f64) -> Result<()> {
        self.lidar.add_scaled(&other.lidar, scale)?;
        self.camera.add_scaled(&other.camera, scale)?;
        self.fusion.add_scaled(&other.fusion, scale)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.lidar.values().chain(self.camera.values()).chain(self.fusion.values())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }
}

/// One Adam state per sub-network.
#[derive(Debug, Clone)]
pub struct StateNetOptimizer {
    lidar: Adam,
    camera: Adam,
    fusion: Adam,
}

impl StateNetOptimizer {
    pub fn new(net: &StateNet, config: AdamConfig) -> Self {
        Self {
            lidar: Adam::new(&net.lidar, config),
            camera: Adam::new(&net.camera, config),
            fusion: Adam::new(&net.fusion, config),
        }
    }

    pub fn step(&mut self, net: &mut StateNet, grads: &StateNetGrads) -> Result<()> {
        // validate everything first so a failure leaves the net untouched
        for (g, n) in [(&grads.lidar, &net.lidar), (&grads.camera, &net.camera), (&grads.fusion, &net.fusion)] {
            if !g.matches(n) {
                return Err(Error::Contract("state net gradients are not congruent".into()));
            }
            if let Some(layer) = g.first_non_finite_layer() {
                return Err(Error::NonFiniteGradient { layer });
            }
        }
        self.lidar.step(&mut net.lidar, &grads.lidar)?;
        self.camera.step(&mut net.camera, &grads.camera)?;
        self.fusion.step(&mut net.fusion, &grads.fusion)
    }

    pub fn step_count(&self) -> u64 {
        self.fusion.step_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(lidar: &[f64], camera: &[f64], target: Option<[f64; 2]>) -> Observation {
        Observation {
            lidar: lidar.to_vec(),
            camera: camera.to_vec(),
            target,
        }
    }

    fn shape(multi: bool) -> StateNetShape {
        StateNetShape {
            n_beams: 4,
            n_px: 2,
            hidden: 5,
            state_dim: 3,
            multi_target: multi,
        }
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut net = StateNet::new(shape(false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let zeros = vec![0.0; net.parameters().len()];
        net.set_parameters(&zeros).unwrap();
        let s = net.encode(&obs(&[1.0, 2.0, 3.0, 4.0], &[0.5; 6], None)).unwrap();
        assert_eq!(s, vec![0.0; 3]);
    }

    #[test]
    fn encoding_is_deterministic() {
        let net = StateNet::new(shape(true), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let o = obs(&[1.0, 0.5, 2.0, 3.0], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], Some([1.0, 2.0]));
        assert_eq!(net.encode(&o).unwrap(), net.encode(&o).unwrap());
        let (batch, _) = net.encode_batch([&o, &o]).unwrap();
        assert_eq!(batch.row(1), net.encode(&o).unwrap().as_slice());
    }

    #[test]
    fn hand_built_one_unit_branches() {
        // lidar: tanh(0.5·l0 + 0.1) → ·2; camera: tanh(c0 − c1) → ·(−1);
        // fusion: 3·a + 0.5·b + 1
        let one = |w: Vec<f64>, b: f64, act| {
            DenseLayer::new(Matrix::from_vec(1, w.len(), w).unwrap(), vec![b], act).unwrap()
        };
        let lidar = Network::new(vec![
            one(vec![0.5, 0.0], 0.1, Activation::Tanh),
            one(vec![2.0], 0.0, Activation::Identity),
        ])
        .unwrap();
        let camera = Network::new(vec![
            one(vec![1.0, -1.0, 0.0], 0.0, Activation::Tanh),
            one(vec![-1.0], 0.0, Activation::Identity),
        ])
        .unwrap();
        let fusion = Network::new(vec![one(vec![3.0, 0.5], 1.0, Activation::Identity)]).unwrap();
        let net = StateNet::from_parts(lidar, camera, fusion, false).unwrap();
        let o = obs(&[0.8, 9.0], &[0.7, 0.2, 0.0], None);
        let a = 2.0 * (0.5f64 * 0.8 + 0.1).tanh();
        let b = -(0.7f64 - 0.2).tanh();
        let expected = 3.0 * a + 0.5 * b + 1.0;
        assert!((net.encode(&o).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn modality_mismatch_is_rejected() {
        let net = StateNet::new(shape(false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(net.encode(&obs(&[1.0; 3], &[0.0; 6], None)).is_err());
        assert!(net.encode(&obs(&[1.0; 4], &[0.0; 5], None)).is_err());
        assert!(net.encode(&obs(&[1.0; 4], &[0.0; 6], Some([0.0, 0.0]))).is_err());
    }

    #[test]
    fn fusion_width_tracks_multi_target() {
        let single = StateNet::new(shape(false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let multi = StateNet::new(shape(true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(single.fusion.input_size(), 6);
        assert_eq!(multi.fusion.input_size(), 8);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = StateNet::new(shape(true), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut buf = Vec::new();
        net.write(&mut buf).unwrap();
        let back = StateNet::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        buf.truncate(buf.len() - 1);
        assert!(StateNet::read(&mut buf.as_slice()).is_err());
    }
}
