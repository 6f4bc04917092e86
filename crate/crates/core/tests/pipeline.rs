//! Small end-to-end runs through the public API.

use rprior_core::experiment::{analyze_representation, train_condition, Condition, ExperimentConfig};
use rprior_core::sim::{Action, Env, EnvConfig, LayoutId};

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seeds(vec![7]);
    cfg.env.n_beams = 8;
    cfg.env.n_px = 4;
    cfg.env.max_steps = 60;
    cfg.rl.episodes = 12;
    cfg.rl.warmup = 64;
    cfg.rl.batch_size = 16;
    cfg.rl.hidden = vec![16];
    cfg.rl.statenet_updates = vec![6];
    cfg.srl.state_dim = 4;
    cfg.srl.hidden = 8;
    cfg.srl.epochs = 3;
    cfg.srl.k_base = 64;
    cfg.srl.k_pairs = 32;
    cfg.analysis.samples = 200;
    cfg
}

#[test]
fn forward_only_policy_ends_every_episode() {
    for layout in LayoutId::ALL {
        let mut env = Env::new(EnvConfig {
            layout,
            seed: 3,
            ..EnvConfig::default()
        })
        .unwrap();
        for _ in 0..5 {
            env.reset();
            let mut steps = 0;
            loop {
                let res = env.step(Action::Forward).unwrap();
                steps += 1;
                assert_eq!(res.observation.flatten().len(), 36 + 3 * 32);
                if res.terminal.is_end() {
                    break;
                }
            }
            assert!(steps <= 500, "{}", layout.name());
        }
    }
}

#[test]
fn srl_update_lowers_the_prior_loss_and_feeds_analysis() {
    let cfg = tiny();
    let out = train_condition(&cfg, Condition::Srl, 7, None).unwrap();
    assert_eq!(out.log.len(), 12);
    let (episode, report) = &out.srl_reports[0];
    assert_eq!(*episode, 6);
    let first = report.epochs.first().unwrap().total;
    let last = report.epochs.last().unwrap().total;
    assert!(last < first, "{first} -> {last}");

    let a = analyze_representation(&cfg, &out.source, Some(&out.qnet), 7).unwrap();
    let b = analyze_representation(&cfg, &out.source, Some(&out.qnet), 7).unwrap();
    assert_eq!(a.samples.len(), 200);
    assert_eq!(a.pca.dim(), 4);
    assert!((1..=4).contains(&a.components()));
    assert_eq!(a.pca.ratios, b.pca.ratios);
    assert!(a.separation.is_none());
}

#[test]
fn training_is_repeatable_and_sizes_the_qnet_input() {
    let cfg = tiny();
    let gt = train_condition(&cfg, Condition::GroundTruth, 7, None).unwrap();
    let again = train_condition(&cfg, Condition::GroundTruth, 7, None).unwrap();
    assert_eq!(gt.log.episodes, again.log.episodes);
    assert_eq!(gt.qnet.state_dim(), 4);
    let obs = train_condition(&cfg, Condition::Observation, 7, None).unwrap();
    assert_eq!(obs.qnet.state_dim(), 8 + 3 * 4);
}
