use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::Rng;
use rprior_bench::{random_buffer, rng};
use rprior_core::analysis::pca;
use rprior_core::experience::build_prior_batch;
use rprior_core::nn::{Adam, AdamConfig, Matrix};
use rprior_core::rl::{ddqn_update, QNet, TdBatch};
use rprior_core::sim::{Action, Env, EnvConfig};
use rprior_core::srl::{total_loss, SrlConfig, StateNet, StateNetShape};

fn env_step(c: &mut Criterion) {
    let mut env = Env::new(EnvConfig::default()).unwrap();
    env.reset();
    let mut i = 0usize;
    c.bench_function("env_step", |b| {
        b.iter(|| {
            i += 1;
            let res = env.step(Action::ALL[i % Action::COUNT]).unwrap();
            if res.terminal.is_end() {
                env.reset();
            }
            black_box(res.reward)
        })
    });
}

fn statenet(c: &mut Criterion) {
    let cfg = SrlConfig::default();
    let env = EnvConfig::default();
    let buffer = random_buffer(2000, 3);
    let mut r = rng(4);
    let net = StateNet::new(
        StateNetShape {
            n_beams: env.n_beams,
            n_px: env.n_px,
            hidden: cfg.hidden,
            state_dim: cfg.state_dim,
            multi_target: false,
        },
        &mut r,
    )
    .unwrap();
    let obs: Vec<_> = (0..cfg.k_base).map(|i| &buffer.get(i).unwrap().obs).collect();
    c.bench_function("encode_batch_256", |b| {
        b.iter(|| black_box(net.encode_batch(obs.iter().copied()).unwrap().0))
    });
    let batch = build_prior_batch(&buffer, cfg.k_base, cfg.k_pairs, cfg.criteria(&buffer), &mut r).unwrap();
    c.bench_function("total_loss_default_batch", |b| {
        b.iter(|| black_box(total_loss(&net, &buffer, &batch, &cfg.weights).unwrap().0.total))
    });
}

fn ddqn(c: &mut Criterion) {
    let mut r = rng(5);
    let (dim, n) = (10, 64);
    let mut online = QNet::new(dim, &[64, 64], &mut r).unwrap();
    let target = online.clone();
    let mut opt = Adam::new(&online.net, AdamConfig::default());
    let mut random = |len: usize| (0..len).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let batch = TdBatch {
        states: Matrix::from_vec(n, dim, random(n * dim)).unwrap(),
        actions: (0..n).map(|i| i % Action::COUNT).collect(),
        rewards: random(n),
        next_states: Matrix::from_vec(n, dim, random(n * dim)).unwrap(),
        done: (0..n).map(|i| i % 7 == 0).collect(),
    };
    c.bench_function("ddqn_update_64", |b| {
        b.iter(|| black_box(ddqn_update(&mut online, &target, &batch, 0.99, &mut opt).unwrap()))
    });
}

fn analysis(c: &mut Criterion) {
    let mut r = rng(6);
    let data: Vec<f64> = (0..3000 * 10).map(|_| r.gen_range(-1.0..1.0)).collect();
    let m = Matrix::from_vec(3000, 10, data).unwrap();
    c.bench_function("pca_3000x10", |b| b.iter(|| black_box(pca(&m).unwrap().variances[0])));
}

criterion_group!(benches, env_step, statenet, ddqn, analysis);
criterion_main!(benches);
