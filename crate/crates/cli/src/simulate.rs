//! `opinet simulate`: run experiments against a synthetic, replayed or remote
//! backend and write one record per experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde_json::Value;

use opinet_core::analysis::record_std_series;
use opinet_core::chat::{ChatClient, ChatEndpoint, RetryPolicy};
use opinet_core::dataset::{read_record_with, record_profiles, DatasetError, ExperimentRecord};
use opinet_core::degroot::{halving_time_from_series, StdDivisor};
use opinet_core::graph::GraphSpec;
use opinet_core::harness::{
    initial_opinions_from_stances, run_experiment, AgentBackend, ExperimentConfig, HarnessError, JsonFileSink,
    RecordSink, RemoteChatBackend, ReplayBackend, ReplayScorer, SyntheticBackend,
};
use opinet_core::rng;
use opinet_core::scoring::{RemoteScorer, Scorer, StubNumericScorer, SCORER_PROMPT_VERSION};
use opinet_core::spectral::{second_eigenvalue_modulus, theoretical_halving_time};

use crate::config::{Resolver, Source};
use crate::setup::{SetupArgs, SetupPlan};
use crate::{CliError, ReadArgs};

pub const AGENT_KEY_VAR: &str = "LLM_API_KEY";
pub const SCORER_KEY_VAR: &str = "SCORER_API_KEY";

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown value '{other}' (expected {})", [$($text),+].join(", "))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }
    };
}

named_enum!(BackendKind { Synthetic => "synthetic", Replay => "replay", Remote => "remote" });
named_enum!(ScorerKind { Stub => "stub", Remote => "remote", Replay => "replay" });

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub setup: SetupArgs,
    #[command(flatten)]
    pub read: ReadArgs,
    /// synthetic, replay or remote. [default: synthetic]
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// stub, remote or replay. [default: follows --backend]
    #[arg(long)]
    pub scorer: Option<ScorerKind>,
    /// Number of experiments. [default: 1]
    #[arg(long)]
    pub n: Option<u64>,
    /// Discussion rounds after round 0. [default: 80, or the replayed record's]
    #[arg(long)]
    pub rounds: Option<u32>,
    /// Leave the weights out of the system prompts.
    #[arg(long)]
    pub weightless: bool,
    /// Uniform noise level added by the synthetic backend. [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Output directory. [default: runs]
    #[arg(long)]
    pub out: Option<String>,
    /// Agent calls in flight per round. [default: 8]
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Retries per call on transient failures. [default: 3]
    #[arg(long)]
    pub retries: Option<u32>,
    /// Chat-completions URL for --backend remote.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name for --backend remote.
    #[arg(long)]
    pub model: Option<String>,
    /// Chat-completions URL for --scorer remote. [default: --endpoint]
    #[arg(long)]
    pub scorer_endpoint: Option<String>,
    /// Model name for --scorer remote. [default: --model]
    #[arg(long)]
    pub scorer_model: Option<String>,
    /// Record to replay.
    #[arg(long)]
    pub replay: Option<String>,
}

struct Settings {
    backend: BackendKind,
    scorer: ScorerKind,
    n: u64,
    rounds: Option<u32>,
    weightless: bool,
    noise: f64,
    out: PathBuf,
    concurrency: usize,
    retries: u32,
    endpoint: Option<String>,
    model: Option<String>,
    scorer_endpoint: Option<String>,
    scorer_model: Option<String>,
    replay: Option<ExperimentRecord>,
}

impl Settings {
    fn resolve(args: &SimulateArgs, r: &mut Resolver) -> Result<Self, CliError> {
        let backend = r.get("backend", args.backend, BackendKind::Synthetic)?;
        let default_scorer = match backend {
            BackendKind::Synthetic => ScorerKind::Stub,
            BackendKind::Replay => ScorerKind::Replay,
            BackendKind::Remote => ScorerKind::Remote,
        };
        let scorer = r.get("scorer", args.scorer, default_scorer)?;
        let n = r.get("n", args.n, 1u64)?;
        let rounds = r.get_opt("rounds", args.rounds)?;
        let weightless = r.switch("weightless", args.weightless)?;
        let noise = r.get("noise", args.noise, 0.0f64)?;
        let out = PathBuf::from(r.get("out", args.out.clone(), "runs".to_string())?);
        let concurrency = r.get("concurrency", args.concurrency, 8usize)?;
        let retries = r.get("retries", args.retries, 3u32)?;
        let endpoint = r.get_opt("endpoint", args.endpoint.clone())?;
        let model = r.get_opt("model", args.model.clone())?;
        let scorer_endpoint = r.get_opt("scorer_endpoint", args.scorer_endpoint.clone())?.or_else(|| endpoint.clone());
        let scorer_model = r.get_opt("scorer_model", args.scorer_model.clone())?.or_else(|| model.clone());
        let replay_path = r.get_opt("replay", args.replay.clone())?;
        let aliases = args.read.aliases(r)?;

        if n == 0 {
            return Err(CliError::config("n = 0: nothing to run"));
        }
        if concurrency == 0 {
            return Err(CliError::config("concurrency must be at least 1"));
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(CliError::config(format!("noise = {noise}: must be finite and non-negative")));
        }
        if noise > 0.0 && backend != BackendKind::Synthetic {
            return Err(CliError::config("--noise applies to --backend synthetic only"));
        }
        if backend == BackendKind::Remote && (endpoint.is_none() || model.is_none()) {
            return Err(CliError::config("--backend remote needs --endpoint and --model"));
        }
        if scorer == ScorerKind::Remote && (scorer_endpoint.is_none() || scorer_model.is_none()) {
            return Err(CliError::config("--scorer remote needs an endpoint and a model"));
        }
        let needs_record = backend == BackendKind::Replay || scorer == ScorerKind::Replay;
        let replay = match (needs_record, replay_path) {
            (true, None) => return Err(CliError::config("replaying needs --replay <record>")),
            (true, Some(p)) => Some(
                read_record_with(Path::new(&p), &aliases).map_err(|e| CliError::config(format!("{p}: {e}")))?,
            ),
            (false, Some(_)) => return Err(CliError::config("--replay needs --backend replay or --scorer replay")),
            (false, None) => None,
        };
        if backend == BackendKind::Replay && n != 1 {
            return Err(CliError::config("--backend replay runs exactly one experiment"));
        }
        if scorer == ScorerKind::Stub && backend != BackendKind::Synthetic {
            log::warn!("the stub scorer only reads synthetic OPINION= replies; other text goes unscored");
        }
        Ok(Settings {
            backend,
            scorer,
            n,
            rounds,
            weightless,
            noise,
            out,
            concurrency,
            retries,
            endpoint,
            model,
            scorer_endpoint,
            scorer_model,
            replay,
        })
    }
}

/// Configuration of a replayed record. Weightless records carry no weights
/// in their prompts, so profiles are read as if weighted and the record's
/// own setting is restored afterwards.
fn replay_config(rec: &ExperimentRecord, rounds: u32) -> Result<ExperimentConfig, CliError> {
    let bad = |e: String| CliError::config(format!("replayed record: {e}"));
    let graph = rec.graph().map_err(|e| bad(e.to_string()))?;
    let profiles = match record_profiles(rec) {
        Ok(p) => p,
        Err(DatasetError::Weightless) => {
            let mut probe = rec.clone();
            probe.weighted = Some(true);
            record_profiles(&probe).map_err(|e| bad(e.to_string()))?
        }
        Err(e) => return Err(bad(e.to_string())),
    };
    let spec = GraphSpec { kind: rec.graph_type, agents: rec.agents(), p: rec.erdos_renyi_p, seed: rec.graph_seed.unwrap_or(0) };
    let mut cfg = ExperimentConfig::new(spec, graph, profiles, rec.topic.clone(), rounds).map_err(|e| bad(e.to_string()))?;
    cfg.weighted = rec.weighted.unwrap_or(true);
    cfg.experiment_id = rec.experiment_id.clone();
    cfg.seed = rec.seed;
    cfg.ai_model = rec.ai_model.clone();
    Ok(cfg)
}

/// Adds the effective run configuration to every snapshot.
struct AnnotatedSink {
    inner: JsonFileSink,
    run_config: Value,
}

impl RecordSink for AnnotatedSink {
    fn persist(&mut self, record: &ExperimentRecord) -> Result<(), DatasetError> {
        let mut rec = record.clone();
        rec.extra.insert("run_config".into(), self.run_config.clone());
        self.inner.persist(&rec)
    }
}

fn endpoint(url: &str, model: &str, key_vars: &[&str], s: &Settings) -> ChatEndpoint {
    let mut ep = ChatEndpoint::new(url, model);
    for var in key_vars {
        if ep.api_key.is_none() {
            ep = ep.with_api_key_from_env(var);
        }
    }
    ep.max_concurrent = s.concurrency;
    ep.retry = RetryPolicy { max_retries: s.retries, ..RetryPolicy::default() };
    ep
}

fn build_scorer(s: &Settings) -> (Box<dyn Scorer>, String) {
    match s.scorer {
        ScorerKind::Stub => (Box::new(StubNumericScorer), "stub-numeric".into()),
        ScorerKind::Replay => {
            let rec = s.replay.as_ref().expect("checked in resolve");
            (Box::new(ReplayScorer::from_record(rec)), rec.scorer.clone().unwrap_or_else(|| "replay".into()))
        }
        ScorerKind::Remote => {
            let model = s.scorer_model.as_deref().expect("checked in resolve");
            let url = s.scorer_endpoint.as_deref().expect("checked in resolve");
            let client = ChatClient::new(endpoint(url, model, &[SCORER_KEY_VAR, AGENT_KEY_VAR], s));
            (Box::new(RemoteScorer::new(client)), format!("{model}/{SCORER_PROMPT_VERSION}"))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn summary_line(cfg: &ExperimentConfig, rec: &ExperimentRecord, path: &Path) -> String {
    let series = record_std_series(rec, StdDivisor::Sample);
    let final_std = series.iter().rev().find_map(|v| *v);
    let lambda2 = cfg.matrix().ok().and_then(|a| second_eigenvalue_modulus(&a).ok());
    let theory = lambda2.and_then(|l| theoretical_halving_time(l).ok());
    let empirical = series
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .and_then(|s| halving_time_from_series(&s).ok().flatten());
    let p = cfg.graph_spec.p.map_or_else(String::new, |p| format!(" p={p:.3}"));
    format!(
        "{} K={} {}{} rounds={} final_std={} lambda2={} t_half_theory={} t_half_empirical={} complete={} -> {}",
        rec.experiment_id.as_deref().unwrap_or("-"),
        cfg.agents(),
        cfg.graph_spec.kind,
        p,
        rec.stance_scores.len().saturating_sub(1),
        fmt_opt(final_std),
        fmt_opt(lambda2),
        fmt_opt(theory),
        fmt_opt(empirical),
        rec.complete,
        path.display()
    )
}

pub fn run(args: SimulateArgs, r: &mut Resolver) -> Result<(), CliError> {
    let plan = SetupPlan::resolve(&args.setup, r)?;
    let s = Settings::resolve(&args, r)?;
    r.reject_unknown()?;
    let rounds = s.rounds.or(s.replay.as_ref().map(|rec| rec.num_rounds)).unwrap_or(80);
    r.note("rounds", rounds.to_string(), if s.rounds.is_some() { Source::Flag } else { Source::Default });
    for (label, var) in [("llm_api_key", AGENT_KEY_VAR), ("scorer_api_key", SCORER_KEY_VAR)] {
        let set = std::env::var(var).is_ok_and(|v| !v.is_empty());
        r.note(label, if set { "<set>" } else { "<unset>" }, Source::Env);
    }
    eprint!("{}", r.header("simulate"));
    std::fs::create_dir_all(&s.out)
        .map_err(|e| CliError::failure(format!("cannot create {}: {e}", s.out.display())))?;
    let (scorer, scorer_label) = build_scorer(&s);

    for i in 0..s.n {
        let (seed, mut cfg, backend): (u64, ExperimentConfig, Box<dyn AgentBackend>) = match s.backend {
            BackendKind::Replay => {
                let rec = s.replay.as_ref().expect("checked in resolve");
                let cfg = replay_config(rec, rounds)?;
                (cfg.seed.unwrap_or(plan.seed), cfg, Box::new(ReplayBackend::from_record(rec)))
            }
            BackendKind::Synthetic => {
                let (seed, mut cfg) = plan.config(i, rounds)?;
                let a = cfg.matrix().map_err(|e| CliError::config(e.to_string()))?;
                let b = SyntheticBackend::new(a, initial_opinions_from_stances(&cfg.profiles))
                    .map_err(|e| CliError::config(e.to_string()))?
                    .with_noise(s.noise, rng::derive_seed(seed, 0x006e_6f69_7365));
                cfg.retry = RetryPolicy::immediate(s.retries);
                (seed, cfg, Box::new(b))
            }
            BackendKind::Remote => {
                let (seed, mut cfg) = plan.config(i, rounds)?;
                let model = s.model.as_deref().expect("checked in resolve");
                let url = s.endpoint.as_deref().expect("checked in resolve");
                let client = ChatClient::new(endpoint(url, model, &[AGENT_KEY_VAR], &s));
                cfg.ai_model = model.to_string();
                // the client already retries transient HTTP failures
                cfg.retry = RetryPolicy::none();
                (seed, cfg, Box::new(RemoteChatBackend::new(client)))
            }
        };
        if s.weightless {
            cfg.weighted = false;
        }
        cfg.concurrency = s.concurrency;
        cfg.scorer_label = Some(scorer_label.clone());
        let path = s.out.join(format!("exp_{seed:06}.json"));
        let mut run_config = r.to_json("simulate");
        run_config["experiment_index"] = Value::from(i);
        let mut sink = AnnotatedSink { inner: JsonFileSink::new(&path), run_config };
        let rec = run_experiment(&cfg, backend.as_ref(), scorer.as_ref(), &mut sink).map_err(|e| match e {
            HarnessError::Sink(e) => CliError::failure(format!("writing {}: {e}", path.display())),
            e => CliError::config(e.to_string()),
        })?;
        println!("{}", summary_line(&cfg, &rec, &path));
        if !rec.complete {
            return Err(CliError::backend(format!(
                "experiment {} stopped: {}",
                rec.experiment_id.as_deref().unwrap_or("-"),
                rec.failure.as_deref().unwrap_or("backend failure")
            )));
        }
    }
    Ok(())
}
