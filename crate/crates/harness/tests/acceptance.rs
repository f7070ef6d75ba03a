//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.
//!
//! Criteria 6-10 train at desk scale and dominate the runtime. Set
//! `DAGCOMM_ACCEPT_KEEP=DIR` to keep their run directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dagcomm_core::comms::CommGraph;
use dagcomm_core::envs::{EnvKind, GridConfig};
use dagcomm_core::metrics::{iei, message_entropy, sei, MetricsRecord};
use dagcomm_core::topology::{depth, AdjMatrix, Dag};
use dagcomm_core::training::{loss_grad_check, rollout, ActionMode, LossWeights, PolicySet, TrainConfig};
use dagcomm_harness::config::{ResolvedRun, RunConfig};
use dagcomm_harness::output::median;
use dagcomm_harness::run::{train_run, RunSummary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- criterion 1

/// Longest path (in edges) by memoized DFS.
fn dfs_depth(adj: &AdjMatrix) -> usize {
    fn longest(v: usize, adj: &AdjMatrix, memo: &mut [Option<usize>]) -> usize {
        if let Some(d) = memo[v] {
            return d;
        }
        let d = (0..adj.n())
            .filter(|&w| adj.get(v, w))
            .map(|w| 1 + longest(w, adj, memo))
            .max()
            .unwrap_or(0);
        memo[v] = Some(d);
        d
    }
    let mut memo = vec![None; adj.n()];
    (0..adj.n()).map(|v| longest(v, adj, &mut memo)).max().unwrap_or(0)
}

fn random_dag(rng: &mut ChaCha8Rng) -> AdjMatrix {
    let n = rng.gen_range(1..=8);
    let density: f64 = rng.gen();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let mut adj = AdjMatrix::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                adj.set(perm[i], perm[j], true);
            }
        }
    }
    adj
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let adj = random_dag(&mut rng);
        if depth(&adj).ok() != Some(dfs_depth(&adj)) {
            mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 5.0,
        format!("1000 random DAGs, {mismatches} mismatches, {secs:.3} s (limit 5 s)"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn grad_setup(seed: u64, graph: &CommGraph) -> (PolicySet, Vec<dagcomm_core::training::EpisodeTrace>) {
    let cfg = TrainConfig {
        env: GridConfig {
            grid_size: 4,
            n_agents: 2,
            max_steps: 3,
            ..GridConfig::pp()
        },
        hidden: 5,
        message_width: 4,
        critic_hidden: 6,
        share_weights: false,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = PolicySet::new(&cfg, &mut rng).unwrap();
    let traces = (0..2)
        .map(|i| rollout(&policy, &cfg.env, graph, None, seed * 10 + i, ActionMode::Sample, i as usize).unwrap())
        .collect();
    (policy, traces)
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let empty = CommGraph::Dag(Dag::empty(2));
    let chain = CommGraph::Dag(Dag::from_edges(2, &[(0, 1)]).unwrap());
    let broadcast = CommGraph::Broadcast { n: 2 };
    let rl = LossWeights {
        actor: 1.0,
        value: 0.5,
        entropy: 0.01,
        iei: 0.0,
        sei: 0.0,
    };
    let only = |iei: f64, sei: f64| LossWeights {
        actor: 0.0,
        value: 0.0,
        entropy: 0.0,
        iei,
        sei,
    };
    let full = LossWeights {
        iei: 0.3,
        sei: 0.2,
        ..rl
    };
    let paths: [(&str, &CommGraph, LossWeights); 5] = [
        ("encoder->actor", &empty, rl),
        ("message->aggregate->actor", &chain, rl),
        ("iei", &chain, only(1.0, 0.0)),
        ("sei", &broadcast, only(0.0, 1.0)),
        ("full", &chain, full),
    ];
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut ok = true;
    for (name, graph, weights) in paths {
        for seed in 0..10 {
            let (policy, traces) = grad_setup(seed, graph);
            let checks = loss_grad_check(&policy, &traces, 0.9, &weights, 1e-6).unwrap();
            let err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(err);
            if name == "message->aggregate->actor" {
                // Agent 0's message head (network 2) must receive gradient through agent 1.
                ok &= checks[2].grad_norm > 0.0;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= worst.values().all(|&e| e < 1e-4) && secs < 60.0;
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(
        ok,
        format!("max rel err over 10 seeds: {} (limit 1e-4), {secs:.1} s (limit 60 s)", detail.join(", ")),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut checked = 0;
    let cfg = TrainConfig::for_env(EnvKind::Pcp);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = PolicySet::new(&cfg, &mut rng).unwrap();
    let graphs = [
        CommGraph::Broadcast { n: 5 },
        CommGraph::Dag(Dag::empty(5)),
        CommGraph::Dag(Dag::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap()),
        CommGraph::Dag(Dag::from_edges(5, &[(0, 2), (1, 2), (0, 3), (1, 3), (2, 4), (3, 4), (0, 4)]).unwrap()),
    ];
    for (g, graph) in graphs.iter().enumerate() {
        let per_step = match graph {
            CommGraph::Broadcast { .. } => 20,
            CommGraph::Dag(d) => d.edge_count(),
        };
        for e in 0..5 {
            let t = rollout(&policy, &cfg.env, graph, None, (g * 10 + e) as u64, ActionMode::Sample, e).unwrap();
            let mut counts = vec![0usize; t.length];
            for r in t.ledger.records() {
                counts[r.step] += 1;
            }
            ok &= counts.iter().all(|&c| c == per_step);
            checked += t.length;
        }
    }
    outcome(
        ok,
        format!("{checked} steps: broadcast 20 records/step, DAGs edge-count records/step"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let ln4 = 4f64.ln();
    let cases: Vec<(&str, f64, f64)> = vec![
        ("H(one-hot)", message_entropy(&[0.0, 0.0, 1.0, 0.0]), 0.0),
        ("H(uniform4)", message_entropy(&[1.0; 4]), ln4),
        ("H([2,1,1])", message_entropy(&[2.0, 1.0, 1.0]), 1.5 * ln2),
        ("IEI(one-hot)", iei(&[vec![0.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]]).unwrap(), 0.0),
        ("IEI(uniform4)", iei(&[vec![1.0; 4], vec![2.0; 4]]).unwrap(), ln4),
        ("IEI(mixed)", iei(&[vec![0.0, 0.0, 1.0, 0.0], vec![1.0; 4]]).unwrap(), ln4 / 2.0),
        ("SEI(identical)", sei(&vec![vec![0.3, -1.0, 2.0]; 3]).unwrap(), 1.0),
        ("SEI(orthogonal)", sei(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), 0.0),
        ("SEI([1,0],[1,1])", sei(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(), 1.0 / 2f64.sqrt()),
    ];
    let worst = cases.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let errors_ok = iei::<Vec<f64>>(&[]).is_err() && sei(&[vec![1.0, 0.0]]).is_err();
    outcome(
        worst <= 1e-9 && errors_ok,
        format!("{} examples, max abs err {worst:.1e} (limit 1e-9)", cases.len()),
    )
}

// ---------------------------------------------------------------- criterion 5

const DETERMINISM_TOML: &str = r#"
[env]
kind = "pcp"
grid_size = 8
max_steps = 30

[topology]
mode = "learned"

[train]
epochs = 4
batches = 2
episodes_per_batch = 16
lambda_iei = 0.01
lambda_sei = 0.01

[eval]
episodes = 10
"#;

fn criterion_5(scratch: &Path) -> Outcome {
    let cfg = scratch.join("determinism.toml");
    std::fs::write(&cfg, DETERMINISM_TOML).unwrap();
    let mut files = Vec::new();
    for threads in ["1", "1", "8", "8"] {
        let out = scratch.join(format!("det-{threads}-{}", files.len()));
        let status = Command::new(env!("CARGO_BIN_EXE_dagcomm"))
            .args(["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
            .env("DAGCOMM_THREADS", threads)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("train exited with {status}"));
        }
        files.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    let rows = String::from_utf8_lossy(&files[0]).lines().count() - 1;
    outcome(
        same && rows == 4,
        format!("4 runs (parallelism 1,1,8,8), {rows} epochs each, metrics.csv byte-identical: {same}"),
    )
}

// ---------------------------------------------------------------- experiments

struct Run {
    summary: RunSummary,
    secs: f64,
}

impl Run {
    fn eval(&self) -> &MetricsRecord {
        &self.summary.manifest.final_eval
    }
}

fn resolve(toml_text: &str, edit: impl FnOnce(&mut ResolvedRun)) -> ResolvedRun {
    let mut run = RunConfig::parse(toml_text).unwrap().resolve().unwrap();
    edit(&mut run);
    run.train.validate().unwrap();
    run
}

fn train(dir: &Path, label: &str, run: &ResolvedRun) -> Run {
    let t = Instant::now();
    let summary = train_run(run, &dir.join(label), |_| {}).unwrap_or_else(|e| panic!("{label}: {e}"));
    let secs = t.elapsed().as_secs_f64();
    let e = &summary.manifest.final_eval;
    println!(
        "  run {label:<24} {secs:7.1} s  success {:.3}  steps {:6.2}  comm {:8.2}  iei {:.4}  sei {:.4}",
        e.success_rate, e.avg_steps, e.c_comm, e.iei, e.sei
    );
    Run { summary, secs }
}

fn window_mean(curve: &[MetricsRecord], f: fn(&MetricsRecord) -> f64, first: bool) -> f64 {
    let w = 10.min(curve.len());
    let part = if first { &curve[..w] } else { &curve[curve.len() - w..] };
    part.iter().map(f).sum::<f64>() / w as f64
}

// Desk-scale traffic schedule: 200 epochs x 2 batches x 100 episodes, broadcast.
const TJ_TOML: &str = r#"
[env]
kind = "tj"

[topology]
mode = "broadcast"

[train]
epochs = 200
batches = 2
episodes_per_batch = 100
entropy_coef = 0.1
lr = 0.01

[eval]
episodes = 100
"#;

fn criteria_6_7(dir: &Path) -> (Outcome, Outcome) {
    let mut off = Vec::new();
    let mut on = Vec::new();
    for seed in SEEDS {
        off.push(train(dir, &format!("tj-lambda-off-{seed}"), &resolve(TJ_TOML, |r| r.train.seed = seed)));
        on.push(train(
            dir,
            &format!("tj-lambda-on-{seed}"),
            &resolve(TJ_TOML, |r| {
                r.train.seed = seed;
                r.train.lambda_iei = 0.01;
                r.train.lambda_sei = 0.01;
            }),
        ));
    }
    let s_off: Vec<f64> = off.iter().map(|r| r.eval().success_rate).collect();
    let s_on: Vec<f64> = on.iter().map(|r| r.eval().success_rate).collect();
    let med_off = median(&s_off);
    let slowest = off.iter().chain(&on).map(|r| r.secs).fold(0.0, f64::max);
    let off_ok = s_off.iter().all(|&s| s >= 0.80);
    let on_good = s_on.iter().filter(|&&s| s >= med_off && s >= 0.90).count();
    let c6 = outcome(
        off_ok && on_good >= 2 && slowest <= 1200.0,
        format!(
            "λ-off success {} (each ≥ 0.80), λ-on success {} ({on_good}/3 ≥ max(λ-off median {med_off:.3}, 0.90), need 2), slowest run {slowest:.0} s (limit 1200 s)",
            fmt(&s_off),
            fmt(&s_on)
        ),
    );

    let mut lines = Vec::new();
    let mut ok = true;
    for (seed, r) in SEEDS.iter().zip(&off) {
        let c = &r.summary.curve;
        let (i0, i1) = (window_mean(c, |m| m.iei, true), window_mean(c, |m| m.iei, false));
        let (s0, s1) = (window_mean(c, |m| m.sei, true), window_mean(c, |m| m.sei, false));
        ok &= i1 < i0 && s1 < s0;
        lines.push(format!("seed {seed}: IEI {i0:.4}->{i1:.4}, SEI {s0:.4}->{s1:.4}"));
    }
    let c7 = outcome(ok, format!("first vs final 10-epoch means, λ-off: {}", lines.join("; ")));
    (c6, c7)
}

// Hunt schedule shared by PCP and PP: 400 epochs x 10 batches x 20 episodes
// on the full 10x10 grid, with a shorter discount horizon.
const HUNT_TRAIN: &str = r#"
[train]
epochs = 400
batches = 10
episodes_per_batch = 20
gamma = 0.9
lr = 0.003

[eval]
episodes = 100
"#;

fn hunt_toml(kind: &str) -> String {
    format!("[env]\nkind = \"{kind}\"\n{HUNT_TRAIN}")
}

fn mode_run(toml_text: &str, mode: &str, seed: u64) -> ResolvedRun {
    resolve(toml_text, |r| {
        r.train.topology = mode.parse().unwrap();
        r.train.seed = seed;
        r.train.topology_seed = seed;
    })
}

/// Learned-topology runs and their shuffled-order counterparts.
fn order_study(dir: &Path, tag: &str, toml_text: &str) -> (Vec<Run>, Vec<Run>) {
    let mut learned = Vec::new();
    let mut shuffled = Vec::new();
    for seed in SEEDS {
        let l = train(dir, &format!("{tag}-learned-{seed}"), &mode_run(toml_text, "learned", seed));
        let dag = l.summary.manifest.eval_graph.as_dag().expect("learned mode evaluates on a DAG").to_json();
        let run = resolve(toml_text, |r| {
            r.train.topology = "shuffled".parse().unwrap();
            r.train.base_dag = Some(dag);
            r.train.seed = seed;
            r.train.topology_seed = seed;
        });
        shuffled.push(train(dir, &format!("{tag}-shuffled-{seed}"), &run));
        learned.push(l);
    }
    (learned, shuffled)
}

fn steps(runs: &[Run]) -> Vec<f64> {
    runs.iter().map(|r| r.eval().avg_steps).collect()
}

fn criteria_8_9_10(dir: &Path) -> (Outcome, Outcome, Outcome) {
    let (pcp_l, pcp_s) = order_study(dir, "pcp", &hunt_toml("pcp"));
    let (pp_l, pp_s) = order_study(dir, "pp", &hunt_toml("pp"));
    let gap = |l: &[Run], s: &[Run]| (median(&steps(s)) - median(&steps(l))) / median(&steps(l));
    let (g_pcp, g_pp) = (gap(&pcp_l, &pcp_s), gap(&pp_l, &pp_s));
    let slowest = pcp_l.iter().chain(&pcp_s).chain(&pp_l).chain(&pp_s).map(|r| r.secs).fold(0.0, f64::max);
    let c8 = outcome(
        g_pcp >= 0.20 && g_pp < g_pcp && slowest <= 1800.0,
        format!(
            "PCP avg_steps learned {} shuffled {} gap {:+.1}% (need ≥ +20%); PP learned {} shuffled {} gap {:+.1}% (need < PCP gap); slowest run {slowest:.0} s (limit 1800 s)",
            fmt(&steps(&pcp_l)),
            fmt(&steps(&pcp_s)),
            100.0 * g_pcp,
            fmt(&steps(&pp_l)),
            fmt(&steps(&pp_s)),
            100.0 * g_pp
        ),
    );

    let pp_b: Vec<Run> = SEEDS
        .iter()
        .map(|&s| train(dir, &format!("pp-broadcast-{s}"), &mode_run(&hunt_toml("pp"), "broadcast", s)))
        .collect();
    let comm = |runs: &[Run]| median(&runs.iter().map(|r| r.eval().c_comm).collect::<Vec<_>>());
    let succ = |runs: &[Run]| median(&runs.iter().map(|r| r.eval().success_rate).collect::<Vec<_>>());
    let (cl, cb, sl, sb) = (comm(&pp_l), comm(&pp_b), succ(&pp_l), succ(&pp_b));
    let c9 = outcome(
        cl <= 0.5 * cb && sl >= sb,
        format!(
            "PP medians over 3 seeds: learned C_comm {cl:.2} vs broadcast {cb:.2} (ratio {:.3}, need ≤ 0.5); success learned {sl:.3} vs broadcast {sb:.3} (need ≥)",
            cl / cb
        ),
    );

    let d1: Vec<Run> = SEEDS
        .iter()
        .map(|&s| train(dir, &format!("pcp-fc-d1-{s}"), &mode_run(&hunt_toml("pcp"), "fc-d1", s)))
        .collect();
    let d2: Vec<Run> = SEEDS
        .iter()
        .map(|&s| train(dir, &format!("pcp-fc-d2-{s}"), &mode_run(&hunt_toml("pcp"), "fc-d2", s)))
        .collect();
    let (m1, m2) = (median(&steps(&d1)), median(&steps(&d2)));
    let c10 = outcome(
        m2 <= m1,
        format!(
            "PCP avg_steps fc-d1 {} (median {m1:.2}), fc-d2 {} (median {m2:.2}); need fc-d2 ≤ fc-d1",
            fmt(&steps(&d1)),
            fmt(&steps(&d2))
        ),
    );
    (c8, c9, c10)
}

// ---------------------------------------------------------------- driver

fn report(results: &mut Vec<(usize, Outcome)>, n: usize, o: Outcome) {
    println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((n, o));
}

fn main() {
    let keep = std::env::var_os("DAGCOMM_ACCEPT_KEEP").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let scratch = keep.clone().unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&scratch).unwrap();

    let mut results = Vec::new();
    report(&mut results, 1, criterion_1());
    report(&mut results, 2, criterion_2());
    report(&mut results, 3, criterion_3());
    report(&mut results, 4, criterion_4());
    report(&mut results, 5, criterion_5(&scratch));
    let (c6, c7) = criteria_6_7(&scratch);
    report(&mut results, 6, c6);
    report(&mut results, 7, c7);
    let (c8, c9, c10) = criteria_8_9_10(&scratch);
    report(&mut results, 8, c8);
    report(&mut results, 9, c9);
    report(&mut results, 10, c10);

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
