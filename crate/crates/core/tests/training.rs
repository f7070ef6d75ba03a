//! End-to-end properties of the training loop on small hunt and traffic runs.

use dagcomm_core::comms::CommGraph;
use dagcomm_core::envs::{EnvKind, GridConfig};
use dagcomm_core::error::Error;
use dagcomm_core::topology::Dag;
use dagcomm_core::training::{
    compute_loss_weighted, evaluate, load_checkpoint, loss_value, rollout, save_checkpoint, train, ActionMode,
    LossWeights, PolicySet, TopologyMode, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_pp(topology: TopologyMode) -> TrainConfig {
    TrainConfig {
        env: GridConfig {
            grid_size: 5,
            max_steps: 12,
            ..GridConfig::pp()
        },
        topology,
        epochs: 2,
        batches: 2,
        episodes_per_batch: 6,
        hidden: 8,
        message_width: 6,
        critic_hidden: 8,
        ..TrainConfig::for_env(EnvKind::Pp)
    }
}

#[test]
fn zero_epochs_returns_untrained_policy() {
    let cfg = TrainConfig {
        epochs: 0,
        ..small_pp(TopologyMode::Broadcast)
    };
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert!(a.curve.is_empty());
    assert_eq!(a.policy, b.policy);
}

#[test]
fn regularizer_changes_nothing_before_first_update() {
    let off = TrainConfig {
        epochs: 1,
        batches: 1,
        ..small_pp(TopologyMode::Broadcast)
    };
    let on = TrainConfig {
        lambda_iei: 0.01,
        lambda_sei: 0.01,
        ..off.clone()
    };
    let a = train(&off).unwrap().curve;
    let b = train(&on).unwrap().curve;
    let strip = |r: &dagcomm_core::metrics::MetricsRecord| (r.success_rate, r.avg_steps, r.c_comm, r.iei, r.sei);
    assert_eq!(strip(&a[0]), strip(&b[0]));
    assert!(b[0].loss > a[0].loss);

    let a = train(&TrainConfig { epochs: 2, ..off.clone() }).unwrap().curve;
    let b = train(&TrainConfig { epochs: 2, ..on }).unwrap().curve;
    assert_ne!(a[1].iei, b[1].iei);
}

#[test]
fn training_is_independent_of_pool_size() {
    let cfg = small_pp(TopologyMode::Learned);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(serde_json::to_string(&a.curve).unwrap(), serde_json::to_string(&b.curve).unwrap());
    assert_eq!(a.policy.flat_params(), b.policy.flat_params());
    assert_eq!(a.learner, b.learner);
    assert_eq!(a.curve.len(), 2);
    assert_eq!(a.curve[1].epoch, 2);
}

#[test]
fn iei_regularizer_alone_strictly_lowers_iei() {
    let cfg = small_pp(TopologyMode::Broadcast);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut policy = PolicySet::new(&cfg, &mut rng).unwrap();
    let graph = CommGraph::Broadcast { n: 5 };
    let traces: Vec<_> = (0..4)
        .map(|i| rollout(&policy, &cfg.env, &graph, None, 100 + i, ActionMode::Sample, i as usize).unwrap())
        .collect();
    let weights = LossWeights {
        actor: 0.0,
        value: 0.0,
        entropy: 0.0,
        iei: 1.0,
        sei: 0.0,
    };
    let mut last = loss_value(&policy, &traces, cfg.gamma, &weights).unwrap().iei;
    for _ in 0..20 {
        let (_, grads) = compute_loss_weighted(&policy, &traces, cfg.gamma, &weights).unwrap();
        for (m, g) in policy.slots.iter_mut().zip(&grads.slots) {
            let mut p = m.message.flat_params();
            for (x, d) in p.iter_mut().zip(g.message.flat_params()) {
                *x -= 0.005 * d;
            }
            m.message.set_flat_params(&p).unwrap();
        }
        let now = loss_value(&policy, &traces, cfg.gamma, &weights).unwrap().iei;
        assert!(now < last, "IEI rose from {last} to {now}");
        last = now;
    }
}

#[test]
fn evaluation_is_reproducible_and_counts_broadcasts() {
    let cfg = small_pp(TopologyMode::Broadcast);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = PolicySet::new(&cfg, &mut rng).unwrap();
    let graph = CommGraph::Broadcast { n: 5 };
    let (a, _) = evaluate(&policy, &graph, &cfg.env, 30, 9).unwrap();
    let (b, _) = evaluate(&policy, &graph, &cfg.env, 30, 9).unwrap();
    assert_eq!(a, b);
    assert!((a.c_comm - a.avg_steps * 20.0).abs() < 1e-9);

    let chain = CommGraph::Dag(Dag::from_edges(5, &[(0, 1), (1, 2)]).unwrap());
    let (c, _) = evaluate(&policy, &chain, &cfg.env, 30, 9).unwrap();
    assert!((c.c_comm - c.avg_steps * 2.0).abs() < 1e-9);
    assert!(evaluate(&policy, &graph, &cfg.env, 0, 9).is_err());
}

#[test]
fn checkpoint_round_trips_and_rejects_truncation() {
    let cfg = TrainConfig {
        epochs: 1,
        batches: 1,
        ..small_pp(TopologyMode::Learned)
    };
    let out = train(&cfg).unwrap();
    let mut buf = Vec::new();
    save_checkpoint(&mut buf, &cfg, &out.policy, out.learner.as_ref(), &out.eval_graph).unwrap();
    let ck = load_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(ck.policy, out.policy);
    assert_eq!(ck.learner, out.learner);
    assert_eq!(ck.graph, out.eval_graph);
    assert_eq!(ck.config.epochs, 1);

    let cut = &buf[..buf.len() / 2];
    assert!(matches!(load_checkpoint(cut), Err(Error::Format(_))));
}
