//! Experiment setup options shared by `graph` and `simulate`.

use std::fmt;
use std::str::FromStr;

use clap::Args;
use serde_json::json;

use opinet_core::graph::{self, AgentType, ExperimentSetup, GraphKind, GraphSpec, SetupSampler};
use opinet_core::harness::ExperimentConfig;
use opinet_core::rng;
use opinet_core::spectral::spectral_summary;

use crate::config::Resolver;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Kind and p drawn per experiment from the sampling mixture.
    Sample,
    Fixed(GraphKind),
}

impl FromStr for GraphMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("sample") {
            return Ok(GraphMode::Sample);
        }
        GraphKind::from_str(s).map(GraphMode::Fixed).map_err(|e| format!("{e}; or 'sample'"))
    }
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphMode::Sample => f.write_str("sample"),
            GraphMode::Fixed(k) => f.write_str(k.as_str()),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct SetupArgs {
    /// Base seed; experiment i uses seed + i. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Agents per experiment. [default: 20]
    #[arg(long)]
    pub agents: Option<usize>,
    /// sample, erdos_renyi (er), fully_connected (full) or ring. [default: sample]
    #[arg(long)]
    pub graph: Option<GraphMode>,
    /// Edge probability for --graph er.
    #[arg(long)]
    pub p: Option<f64>,
    /// Discussion topic; sampled from the built-in list when absent.
    #[arg(long)]
    pub topic: Option<String>,
    /// Self-weight of self-confident agents. [default: 0.8]
    #[arg(long)]
    pub self_weight: Option<f64>,
    /// Self-weight of open-minded agents. [default: 0.6]
    #[arg(long)]
    pub open_minded_weight: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SetupPlan {
    pub seed: u64,
    pub agents: usize,
    pub mode: GraphMode,
    pub p: Option<f64>,
    pub topic: Option<String>,
    pub sampler: SetupSampler,
}

impl SetupPlan {
    pub fn resolve(args: &SetupArgs, r: &mut Resolver) -> Result<Self, CliError> {
        let seed = r.get("seed", args.seed, 0u64)?;
        let agents = r.get("agents", args.agents, 20usize)?;
        let mode = r.get("graph", args.graph, GraphMode::Sample)?;
        let p = r.get_opt("p", args.p)?;
        let topic = r.get_opt("topic", args.topic.clone())?;
        let sc = r.get("self_weight", args.self_weight, AgentType::SelfConfident.default_self_weight())?;
        let om = r.get("open_minded_weight", args.open_minded_weight, AgentType::OpenMinded.default_self_weight())?;
        if agents < 2 {
            return Err(CliError::config(format!("agents = {agents}: need at least 2")));
        }
        for (name, w) in [("self_weight", sc), ("open_minded_weight", om)] {
            if !(w > 0.0 && w <= 1.0) {
                return Err(CliError::config(format!("{name} = {w}: must lie in (0, 1]")));
            }
        }
        match (mode, p) {
            (GraphMode::Fixed(GraphKind::ErdosRenyi), None) => {
                return Err(CliError::config("--graph erdos_renyi needs --p"));
            }
            (GraphMode::Fixed(GraphKind::ErdosRenyi), Some(p)) if !(p > 0.0 && p <= 1.0) => {
                return Err(CliError::config(format!("p = {p}: must lie in (0, 1]")));
            }
            (GraphMode::Fixed(GraphKind::ErdosRenyi), Some(_)) | (_, None) => {}
            (mode, Some(_)) => {
                return Err(CliError::config(format!("p only applies to --graph erdos_renyi, not {mode}")));
            }
        }
        if topic.as_deref().is_some_and(|t| t.trim().is_empty()) {
            return Err(CliError::config("topic is empty"));
        }
        Ok(SetupPlan {
            seed,
            agents,
            mode,
            p,
            topic,
            sampler: SetupSampler { agents, self_confident_weight: sc, open_minded_weight: om },
        })
    }

    /// Setup of experiment `index`.
    pub fn setup(&self, index: u64) -> (u64, ExperimentSetup) {
        let seed = self.seed.wrapping_add(index);
        let mut setup = self.sampler.sample(seed);
        if let GraphMode::Fixed(kind) = self.mode {
            let graph_seed = rng::derive_seed(seed, graph::GRAPH_SEED_STREAM);
            setup.graph = match kind {
                GraphKind::ErdosRenyi => GraphSpec::erdos_renyi(self.agents, self.p.expect("checked in resolve"), graph_seed),
                GraphKind::FullyConnected => GraphSpec { seed: graph_seed, ..GraphSpec::fully_connected(self.agents) },
                GraphKind::Ring => GraphSpec { seed: graph_seed, ..GraphSpec::ring(self.agents) },
            };
        }
        (seed, setup)
    }

    /// Builds the harness configuration, resampling until strongly connected.
    pub fn config(&self, index: u64, rounds: u32) -> Result<(u64, ExperimentConfig), CliError> {
        let (seed, setup) = self.setup(index);
        let mut cfg = ExperimentConfig::from_setup(&setup, rounds, true).map_err(|e| {
            CliError::config(format!("experiment seed {seed}: {e} (p may be below the connectivity threshold)"))
        })?;
        if let Some(t) = &self.topic {
            cfg.topic = t.clone();
        }
        cfg.seed = Some(seed);
        cfg.experiment_id = Some(format!("exp_{seed:06}"));
        Ok((seed, cfg))
    }
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    #[command(flatten)]
    pub setup: SetupArgs,
}

pub fn run_graph(args: GraphArgs, r: &mut Resolver) -> Result<(), CliError> {
    let plan = SetupPlan::resolve(&args.setup, r)?;
    r.reject_unknown()?;
    eprint!("{}", r.header("graph"));
    let (seed, cfg) = plan.config(0, 0)?;
    let a = cfg.matrix().map_err(|e| CliError::config(e.to_string()))?;
    let spectral = spectral_summary(&a).map_err(|e| CliError::failure(e.to_string()))?;
    let out = json!({
        "seed": seed,
        "graph_type": cfg.graph_spec.kind,
        "erdos_renyi_p": cfg.graph_spec.p,
        "graph_seed": cfg.graph_spec.seed,
        "connectivity_threshold": graph::connectivity_threshold(cfg.agents()).ok(),
        "strongly_connected": graph::is_strongly_connected(&cfg.graph),
        "edges": cfg.graph.edge_count(),
        "topic": cfg.topic,
        "agent_types": cfg.profiles.iter().map(|p| p.agent_type).collect::<Vec<_>>(),
        "self_weights": cfg.profiles.iter().map(|p| p.self_weight).collect::<Vec<_>>(),
        "initial_opinions": cfg.profiles.iter().map(|p| p.initial_stance).collect::<Vec<_>>(),
        "topology": cfg.graph.as_lists(),
        "lambda2_mod": spectral.lambda2_mod,
        "halving_time": spectral.halving_time,
        "perron": spectral.perron,
        "config": r.to_json("graph"),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json value serializes"));
    Ok(())
}
