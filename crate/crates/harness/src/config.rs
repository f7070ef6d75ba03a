//! TOML run configuration. Every section is optional; absent keys take the
//! environment's defaults from [`TrainConfig::for_env`].

use std::path::{Path, PathBuf};

use dagcomm_core::envs::{EnvKind, GridConfig};
use dagcomm_core::topology::DagJson;
use dagcomm_core::training::{TopologyMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const DEFAULT_EVAL_SEED: u64 = 12345;
pub const DEFAULT_OUT_DIR: &str = "runs/default";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvSection,
    pub topology: TopologySection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: Option<String>,
    pub grid_size: Option<usize>,
    pub n_agents: Option<usize>,
    pub vision: Option<usize>,
    pub max_steps: Option<usize>,
    pub n_prey: Option<usize>,
    pub n_capture: Option<usize>,
    pub p_arrive: Option<f64>,
    pub n_max: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub mode: Option<String>,
    pub seed: Option<u64>,
    /// Edges `[sender, receiver]` of the graph shuffled in `shuffled` mode.
    pub base_edges: Option<Vec<[usize; 2]>>,
    pub lr: Option<f64>,
    pub temperature: Option<f64>,
    pub edge_cost: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batches: Option<usize>,
    pub episodes_per_batch: Option<usize>,
    pub lambda_iei: Option<f64>,
    pub lambda_sei: Option<f64>,
    pub gamma: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub value_coef: Option<f64>,
    pub lr: Option<f64>,
    pub grad_clip: Option<f64>,
    pub hidden: Option<usize>,
    pub message_width: Option<usize>,
    pub critic_hidden: Option<usize>,
    pub share_weights: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

/// A fully resolved run: training parameters plus harness-only settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub train: TrainConfig,
    pub eval_seed: u64,
    pub out_dir: PathBuf,
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a TOML file, or the run configuration stored in a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            crate::manifest::Manifest::parse(&text).map(|m| m.config)
        } else {
            Self::parse(&text)
        };
        parsed.map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the file on top of the environment defaults and validates the result.
    pub fn resolve(&self) -> Result<ResolvedRun, HarnessError> {
        let kind: EnvKind = match &self.env.kind {
            Some(k) => k.parse().map_err(HarnessError::Config)?,
            None => EnvKind::Tj,
        };
        let mut t = TrainConfig::for_env(kind);
        let (e, env) = (&self.env, &mut t.env);
        set(&mut env.grid_size, &e.grid_size);
        set(&mut env.n_agents, &e.n_agents);
        set(&mut env.vision, &e.vision);
        set(&mut env.max_steps, &e.max_steps);
        set(&mut env.n_prey, &e.n_prey);
        set(&mut env.n_capture, &e.n_capture);
        set(&mut env.p_arrive, &e.p_arrive);
        set(&mut env.n_max, &e.n_max);

        let g = &self.topology;
        if let Some(m) = &g.mode {
            t.topology = m.parse().map_err(HarnessError::Config)?;
        }
        set(&mut t.topology_seed, &g.seed);
        if let Some(edges) = &g.base_edges {
            t.base_dag = Some(DagJson {
                n: t.env.n_agents,
                edges: edges.clone(),
            });
        }
        set(&mut t.topo_lr, &g.lr);
        set(&mut t.topo_temperature, &g.temperature);
        set(&mut t.edge_cost, &g.edge_cost);

        let r = &self.train;
        set(&mut t.epochs, &r.epochs);
        set(&mut t.batches, &r.batches);
        set(&mut t.episodes_per_batch, &r.episodes_per_batch);
        set(&mut t.lambda_iei, &r.lambda_iei);
        set(&mut t.lambda_sei, &r.lambda_sei);
        set(&mut t.gamma, &r.gamma);
        set(&mut t.entropy_coef, &r.entropy_coef);
        set(&mut t.value_coef, &r.value_coef);
        set(&mut t.lr, &r.lr);
        set(&mut t.grad_clip, &r.grad_clip);
        set(&mut t.hidden, &r.hidden);
        set(&mut t.message_width, &r.message_width);
        set(&mut t.critic_hidden, &r.critic_hidden);
        set(&mut t.share_weights, &r.share_weights);
        set(&mut t.seed, &r.seed);

        set(&mut t.eval_episodes, &self.eval.episodes);
        set(&mut t.checkpoint_every, &self.output.checkpoint_every);
        if t.eval_episodes == 0 {
            return Err(HarnessError::Config("eval.episodes must be positive".into()));
        }
        t.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(ResolvedRun {
            train: t,
            eval_seed: self.eval.seed.unwrap_or(DEFAULT_EVAL_SEED),
            out_dir: self.output.dir.clone().unwrap_or_else(|| DEFAULT_OUT_DIR.into()),
        })
    }

    /// The fully explicit configuration that resolves to `run`.
    pub fn from_resolved(run: &ResolvedRun) -> Self {
        let t = &run.train;
        let e: &GridConfig = &t.env;
        RunConfig {
            env: EnvSection {
                kind: Some(e.kind.name().to_string()),
                grid_size: Some(e.grid_size),
                n_agents: Some(e.n_agents),
                vision: Some(e.vision),
                max_steps: Some(e.max_steps),
                n_prey: Some(e.n_prey),
                n_capture: Some(e.n_capture),
                p_arrive: Some(e.p_arrive),
                n_max: Some(e.n_max),
            },
            topology: TopologySection {
                mode: Some(t.topology.name().to_string()),
                seed: Some(t.topology_seed),
                base_edges: t.base_dag.as_ref().map(|d| d.edges.clone()),
                lr: Some(t.topo_lr),
                temperature: Some(t.topo_temperature),
                edge_cost: Some(t.edge_cost),
            },
            train: TrainSection {
                epochs: Some(t.epochs),
                batches: Some(t.batches),
                episodes_per_batch: Some(t.episodes_per_batch),
                lambda_iei: Some(t.lambda_iei),
                lambda_sei: Some(t.lambda_sei),
                gamma: Some(t.gamma),
                entropy_coef: Some(t.entropy_coef),
                value_coef: Some(t.value_coef),
                lr: Some(t.lr),
                grad_clip: Some(t.grad_clip),
                hidden: Some(t.hidden),
                message_width: Some(t.message_width),
                critic_hidden: Some(t.critic_hidden),
                share_weights: Some(t.share_weights),
                seed: Some(t.seed),
            },
            eval: EvalSection {
                episodes: Some(t.eval_episodes),
                seed: Some(run.eval_seed),
            },
            output: OutputSection {
                dir: Some(run.out_dir.clone()),
                checkpoint_every: Some(t.checkpoint_every),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }
}

/// A commented configuration listing every key with its default for `kind`.
pub fn template(kind: EnvKind) -> String {
    let t = TrainConfig::for_env(kind);
    let e = &t.env;
    let modes: Vec<&str> = TopologyMode::ALL.iter().map(|m| m.name()).collect();
    let mut s = String::new();
    let mut line = |text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    line(format!("# dagcomm run configuration; defaults shown are those of '{}'.", kind.name()));
    line("# Unknown keys are rejected. Omitted keys take the defaults below.".into());
    line(String::new());
    line("[env]".into());
    line("# pp | pcp | tj".into());
    line(format!("kind = \"{}\"", kind.name()));
    line(format!("grid_size = {}", e.grid_size));
    line(format!("n_agents = {}", e.n_agents));
    line(format!("vision = {}", e.vision));
    line(format!("max_steps = {}", e.max_steps));
    line("# pp/pcp: prey count; pcp: capture-role agents (the rest are predators)".into());
    line(format!("n_prey = {}", e.n_prey));
    line(format!("n_capture = {}", e.n_capture));
    line("# tj: arrival probability per entry per step, and the active-car cap".into());
    line(format!("p_arrive = {:?}", e.p_arrive));
    line(format!("n_max = {}", e.n_max));
    line(String::new());
    line("[topology]".into());
    line(format!("# {}", modes.join(" | ")));
    line(format!("mode = \"{}\"", t.topology.name()));
    line("# seeds layered fc placement and the shuffled-mode permutation".into());
    line(format!("seed = {}", t.topology_seed));
    line("# shuffled mode only: edges [sender, receiver] of the graph to shuffle".into());
    line("# base_edges = [[0, 1], [1, 2]]".into());
    line("# learned mode: optimizer step, sampling temperature, per-edge-per-step cost".into());
    line(format!("lr = {:?}", t.topo_lr));
    line(format!("temperature = {:?}", t.topo_temperature));
    line(format!("edge_cost = {:?}", t.edge_cost));
    line(String::new());
    line("[train]".into());
    line(format!("epochs = {}", t.epochs));
    line(format!("batches = {}", t.batches));
    line(format!("episodes_per_batch = {}", t.episodes_per_batch));
    line("# weights of the message-entropy and message-similarity regularizers".into());
    line(format!("lambda_iei = {:?}", t.lambda_iei));
    line(format!("lambda_sei = {:?}", t.lambda_sei));
    line(format!("gamma = {:?}", t.gamma));
    line(format!("entropy_coef = {:?}", t.entropy_coef));
    line(format!("value_coef = {:?}", t.value_coef));
    line(format!("lr = {:?}", t.lr));
    line("# global gradient-norm cap; 0 disables".into());
    line(format!("grad_clip = {:?}", t.grad_clip));
    line(format!("hidden = {}", t.hidden));
    line(format!("message_width = {}", t.message_width));
    line(format!("critic_hidden = {}", t.critic_hidden));
    line(format!("share_weights = {}", t.share_weights));
    line(format!("seed = {}", t.seed));
    line(String::new());
    line("[eval]".into());
    line(format!("episodes = {}", t.eval_episodes));
    line(format!("seed = {DEFAULT_EVAL_SEED}"));
    line(String::new());
    line("[output]".into());
    line(format!("dir = \"{DEFAULT_OUT_DIR}\""));
    line("# epochs between checkpoints; 0 keeps only the final one".into());
    line(format!("checkpoint_every = {}", t.checkpoint_every));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_resolves_to_defaults() {
        for kind in [EnvKind::Pp, EnvKind::Pcp, EnvKind::Tj] {
            let run = RunConfig::parse(&template(kind)).unwrap().resolve().unwrap();
            assert_eq!(run.train, TrainConfig::for_env(kind));
            assert_eq!(run.eval_seed, DEFAULT_EVAL_SEED);
        }
    }

    #[test]
    fn empty_file_is_tj_defaults() {
        let run = RunConfig::parse("").unwrap().resolve().unwrap();
        assert_eq!(run.train, TrainConfig::for_env(EnvKind::Tj));
    }

    #[test]
    fn every_field_round_trips() {
        let mut t = TrainConfig::for_env(EnvKind::Pcp);
        t.env.grid_size = 8;
        t.env.max_steps = 50;
        t.topology = TopologyMode::Shuffled;
        t.topology_seed = 7;
        t.base_dag = Some(DagJson {
            n: 5,
            edges: vec![[0, 3], [3, 4]],
        });
        t.epochs = 3;
        t.batches = 4;
        t.episodes_per_batch = 5;
        t.lambda_iei = 0.02;
        t.lambda_sei = 0.03;
        t.gamma = 0.95;
        t.entropy_coef = 0.1;
        t.value_coef = 0.25;
        t.lr = 0.004;
        t.grad_clip = 2.0;
        t.topo_lr = 0.1;
        t.topo_temperature = 0.5;
        t.edge_cost = 0.01;
        t.hidden = 12;
        t.message_width = 6;
        t.critic_hidden = 20;
        t.share_weights = false;
        t.seed = 99;
        t.eval_episodes = 17;
        t.checkpoint_every = 2;
        let run = ResolvedRun {
            train: t,
            eval_seed: 4,
            out_dir: "x/y".into(),
        };
        let text = RunConfig::from_resolved(&run).to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap().resolve().unwrap(), run);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            "[train]\nepoch = 3\n",
            "[extra]\n",
            "[env]\nkind = \"maze\"\n",
            "[topology]\nmode = \"ring\"\n",
            "[train]\ngamma = 1.5\n",
            "[topology]\nmode = \"shuffled\"\n",
            "[eval]\nepisodes = 0\n",
            "[train\n",
        ] {
            let r = RunConfig::parse(text).and_then(|c| c.resolve());
            assert!(matches!(r, Err(HarnessError::Config(_))), "{text:?} -> {r:?}");
        }
    }
}
