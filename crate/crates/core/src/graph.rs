//! Communication graphs and combination matrices.
//!
//! Graphs are directed and stored by in-neighborhood: `in_neighbors(k)` lists
//! every agent `l` with an edge `l -> k`, always including `k` itself. The
//! combination matrix follows the left-stochastic convention: entry `(l, k)`
//! is the trust agent `k` places in agent `l`, so every column sums to one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SimRng};
use crate::scoring::Stance;

/// Column sums of generated matrices must equal one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Column-sum tolerance accepted for user-supplied matrices.
pub const INPUT_STOCHASTIC_TOL: f64 = 1e-9;

/// Resample budget when strong connectivity is required.
pub const MAX_CONNECT_ATTEMPTS: u32 = 100;

/// Stream id for deriving a graph seed from an experiment seed.
pub const GRAPH_SEED_STREAM: u64 = 0x0067_7261_7068;

/// Discussion topics drawn by [`sample_experiment_setup`].
pub const TOPICS: [&str; 8] = [
    "Bitcoin",
    "Euthanasia",
    "Veganism",
    "Vaping",
    "Gene editing",
    "Ghosting",
    "C. Ronaldo",
    "Remote Work",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid graph config: {0}")]
    InvalidConfig(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid combination matrix: {0}")]
    InvalidMatrix(String),
    #[error("no strongly connected sample after {attempts} attempts")]
    NotConnected { attempts: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    ErdosRenyi,
    FullyConnected,
    Ring,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::ErdosRenyi => "erdos_renyi",
            GraphKind::FullyConnected => "fully_connected",
            GraphKind::Ring => "ring",
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = GraphError;

    /// Accepts the canonical names plus common spellings ("er", "complete",
    /// "circular", "Erdos Renyi", ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "erdos_renyi" | "er" | "erdos_renyi_graph" | "random" | "gnp" => Ok(GraphKind::ErdosRenyi),
            "fully_connected" | "full" | "complete" | "fully_connected_graph" | "complete_graph" => {
                Ok(GraphKind::FullyConnected)
            }
            "ring" | "circular" | "cycle" | "circle" | "ring_graph" | "circular_graph" => Ok(GraphKind::Ring),
            _ => Err(GraphError::InvalidConfig(format!("unknown graph type '{s}'"))),
        }
    }
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recipe for one communication graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub agents: usize,
    /// Edge probability; present iff `kind` is Erdős–Rényi.
    pub p: Option<f64>,
    pub seed: u64,
}

impl GraphSpec {
    pub fn erdos_renyi(agents: usize, p: f64, seed: u64) -> Self {
        GraphSpec { kind: GraphKind::ErdosRenyi, agents, p: Some(p), seed }
    }

    pub fn fully_connected(agents: usize) -> Self {
        GraphSpec { kind: GraphKind::FullyConnected, agents, p: None, seed: 0 }
    }

    pub fn ring(agents: usize) -> Self {
        GraphSpec { kind: GraphKind::Ring, agents, p: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.agents < 2 {
            return Err(GraphError::InvalidConfig(format!(
                "need at least 2 agents, got {}",
                self.agents
            )));
        }
        match (self.kind, self.p) {
            (GraphKind::ErdosRenyi, None) => Err(GraphError::InvalidConfig(
                "erdos_renyi graph requires an edge probability p".into(),
            )),
            (GraphKind::ErdosRenyi, Some(p)) if !(p > 0.0 && p <= 1.0) => Err(
                GraphError::InvalidConfig(format!("edge probability must lie in (0, 1], got {p}")),
            ),
            (GraphKind::FullyConnected | GraphKind::Ring, Some(_)) => Err(GraphError::InvalidConfig(
                format!("edge probability only applies to erdos_renyi, not {}", self.kind),
            )),
            _ => Ok(()),
        }
    }
}

/// Directed graph with structural self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedGraph {
    in_neighbors: Vec<Vec<usize>>,
}

impl DirectedGraph {
    /// Builds a graph from in-neighbor lists. Lists are sorted; every list
    /// must contain its own agent and only valid, distinct indices.
    pub fn from_in_neighbors(mut lists: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let k = lists.len();
        if k == 0 {
            return Err(GraphError::InvalidGraph("graph has no agents".into()));
        }
        for (agent, list) in lists.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(&bad) = list.iter().find(|&&l| l >= k) {
                return Err(GraphError::InvalidGraph(format!(
                    "agent {agent} lists in-neighbor {bad} outside 0..{k}"
                )));
            }
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(GraphError::InvalidGraph(format!(
                    "agent {agent} lists a duplicate in-neighbor"
                )));
            }
            if list.binary_search(&agent).is_err() {
                return Err(GraphError::InvalidGraph(format!(
                    "agent {agent} is missing its self-loop"
                )));
            }
        }
        Ok(DirectedGraph { in_neighbors: lists })
    }

    /// Like [`from_in_neighbors`](Self::from_in_neighbors) but inserts any
    /// missing self-loops first.
    pub fn with_self_loops(mut lists: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        for (agent, list) in lists.iter_mut().enumerate() {
            if !list.contains(&agent) {
                list.push(agent);
            }
        }
        Self::from_in_neighbors(lists)
    }

    /// Reads edges `l -> k` from a dense matrix where `dense[l][k]` is true.
    pub fn from_dense(dense: &[Vec<bool>]) -> Result<Self, GraphError> {
        let k = dense.len();
        if dense.iter().any(|row| row.len() != k) {
            return Err(GraphError::InvalidGraph("adjacency matrix is not square".into()));
        }
        let lists = (0..k)
            .map(|to| (0..k).filter(|&from| from == to || dense[from][to]).collect())
            .collect();
        Self::from_in_neighbors(lists)
    }

    pub fn agents(&self) -> usize {
        self.in_neighbors.len()
    }

    /// In-neighbors of `agent` in ascending order, including `agent`.
    pub fn in_neighbors(&self, agent: usize) -> &[usize] {
        &self.in_neighbors[agent]
    }

    /// In-neighbors of `agent` excluding itself, ascending.
    pub fn others(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.in_neighbors[agent].iter().copied().filter(move |&l| l != agent)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.in_neighbors[to].binary_search(&from).is_ok()
    }

    /// Number of off-diagonal directed edges.
    pub fn edge_count(&self) -> usize {
        self.in_neighbors.iter().map(|l| l.len() - 1).sum()
    }

    pub fn as_lists(&self) -> &[Vec<usize>] {
        &self.in_neighbors
    }

    pub fn into_lists(self) -> Vec<Vec<usize>> {
        self.in_neighbors
    }

    fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.agents()];
        for (to, list) in self.in_neighbors.iter().enumerate() {
            for &from in list {
                if from != to {
                    out[from].push(to);
                }
            }
        }
        out
    }
}

fn reaches_all(adj: &[Vec<usize>], start: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == adj.len()
}

/// True iff every ordered pair of agents is joined by a directed path.
pub fn is_strongly_connected(g: &DirectedGraph) -> bool {
    if g.agents() <= 1 {
        return true;
    }
    let backward: Vec<Vec<usize>> = (0..g.agents()).map(|k| g.others(k).collect()).collect();
    reaches_all(&g.out_neighbors(), 0) && reaches_all(&backward, 0)
}

/// Samples (or builds) the graph described by `spec`. Pure in `spec`.
pub fn generate_graph(spec: &GraphSpec) -> Result<DirectedGraph, GraphError> {
    spec.validate()?;
    let k = spec.agents;
    let lists = match spec.kind {
        GraphKind::FullyConnected => (0..k).map(|_| (0..k).collect()).collect(),
        GraphKind::Ring => (0..k)
            .map(|to| {
                let mut l = vec![to, (to + k - 1) % k];
                l.sort_unstable();
                l
            })
            .collect(),
        GraphKind::ErdosRenyi => {
            let p = spec.p.expect("validated");
            let mut rng = rng::seeded(spec.seed);
            // Target-major, source-minor draw order; self-loops are never sampled.
            (0..k)
                .map(|to| {
                    (0..k)
                        .filter(|&from| from == to || rng::unit(&mut rng) < p)
                        .collect()
                })
                .collect()
        }
    };
    DirectedGraph::from_in_neighbors(lists)
}

/// A graph together with the `GraphSpec` that reproduces it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectedSample {
    pub spec: GraphSpec,
    pub graph: DirectedGraph,
    pub attempts: u32,
}

/// Resamples Erdős–Rényi graphs (with derived seeds) until one is strongly
/// connected. The returned spec carries the seed that produced the graph.
pub fn generate_connected_graph(spec: &GraphSpec, max_attempts: u32) -> Result<ConnectedSample, GraphError> {
    let mut current = *spec;
    for attempt in 1..=max_attempts.max(1) {
        let graph = generate_graph(&current)?;
        if is_strongly_connected(&graph) {
            return Ok(ConnectedSample { spec: current, graph, attempts: attempt });
        }
        if spec.kind != GraphKind::ErdosRenyi {
            break;
        }
        current.seed = rng::derive_seed(spec.seed, attempt as u64);
    }
    Err(GraphError::NotConnected { attempts: max_attempts })
}

/// `ln(K) / K`, the Erdős–Rényi connectivity threshold.
pub fn connectivity_threshold(agents: usize) -> Result<f64, GraphError> {
    if agents < 2 {
        return Err(GraphError::InvalidConfig(format!(
            "connectivity threshold needs at least 2 agents, got {agents}"
        )));
    }
    let k = agents as f64;
    Ok(k.ln() / k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    SelfConfident,
    OpenMinded,
}

impl AgentType {
    pub fn default_self_weight(self) -> f64 {
        match self {
            AgentType::SelfConfident => 0.80,
            AgentType::OpenMinded => 0.60,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::SelfConfident => "self_confident",
            AgentType::OpenMinded => "open_minded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_type: AgentType,
    pub self_weight: f64,
    pub initial_stance: Stance,
}

impl AgentProfile {
    pub fn new(agent_type: AgentType, initial_stance: Stance) -> Self {
        AgentProfile { agent_type, self_weight: agent_type.default_self_weight(), initial_stance }
    }

    pub fn with_self_weight(mut self, w: f64) -> Self {
        self.self_weight = w;
        self
    }
}

/// Left-stochastic trust matrix; entry `(l, k)` is the weight agent `k` puts
/// on agent `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    weights: DMatrix<f64>,
}

impl CombinationMatrix {
    /// Validates squareness, non-negativity and unit column sums
    /// (within [`INPUT_STOCHASTIC_TOL`]).
    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(GraphError::InvalidMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(GraphError::InvalidMatrix(format!("entry {bad} is negative or not finite")));
        }
        for (k, col) in weights.column_iter().enumerate() {
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > INPUT_STOCHASTIC_TOL {
                return Err(GraphError::InvalidMatrix(format!("column {k} sums to {s}, not 1")));
            }
        }
        Ok(CombinationMatrix { weights })
    }

    /// Row-major convenience constructor: `rows[l][k]` is entry `(l, k)`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GraphError::InvalidMatrix("rows have unequal lengths".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |l, k| rows[l][k]))
    }

    pub fn agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[(from, to)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Sparsity pattern as a graph (edge `l -> k` iff entry `(l, k)` > 0).
    pub fn support(&self) -> DirectedGraph {
        let k = self.agents();
        let lists = (0..k)
            .map(|to| (0..k).filter(|&from| from == to || self.weights[(from, to)] > 0.0).collect())
            .collect();
        DirectedGraph::from_in_neighbors(lists).expect("support lists are well formed")
    }

    /// Strongly connected support with at least one positive diagonal entry.
    pub fn is_primitive(&self) -> bool {
        (0..self.agents()).any(|k| self.weights[(k, k)] > 0.0) && is_strongly_connected(&self.support())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.weights.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Splits each agent's non-self weight equally among its other in-neighbors.
/// An agent whose only in-neighbor is itself keeps weight one on itself.
pub fn build_combination_matrix(
    g: &DirectedGraph,
    profiles: &[AgentProfile],
) -> Result<CombinationMatrix, GraphError> {
    let k = g.agents();
    if profiles.len() != k {
        return Err(GraphError::InvalidConfig(format!(
            "{} profiles for a graph of {k} agents",
            profiles.len()
        )));
    }
    if let Some((i, p)) = profiles
        .iter()
        .enumerate()
        .find(|(_, p)| !(p.self_weight > 0.0 && p.self_weight <= 1.0))
    {
        return Err(GraphError::InvalidConfig(format!(
            "agent {i} self-weight {} outside (0, 1]",
            p.self_weight
        )));
    }
    let mut weights = DMatrix::zeros(k, k);
    for to in 0..k {
        let others = g.in_neighbors(to).len() - 1;
        if others == 0 {
            weights[(to, to)] = 1.0;
            continue;
        }
        let s = profiles[to].self_weight;
        let share = (1.0 - s) / others as f64;
        weights[(to, to)] = s;
        for from in g.others(to) {
            weights[(from, to)] = share;
        }
    }
    Ok(CombinationMatrix { weights })
}

/// One sampled experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub graph: GraphSpec,
    pub profiles: Vec<AgentProfile>,
    pub topic: &'static str,
}

/// Parameters of the configuration sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetupSampler {
    pub agents: usize,
    pub self_confident_weight: f64,
    pub open_minded_weight: f64,
}

impl Default for SetupSampler {
    fn default() -> Self {
        SetupSampler {
            agents: 20,
            self_confident_weight: AgentType::SelfConfident.default_self_weight(),
            open_minded_weight: AgentType::OpenMinded.default_self_weight(),
        }
    }
}

impl SetupSampler {
    /// Graph kind: Erdős–Rényi 0.92, fully connected 0.04, ring 0.04. For
    /// Erdős–Rényi, `p ~ U(0.15, 0.35)` w.p. 0.9 and `U(0.35, 1)` otherwise.
    /// Stances, agent types and topic are uniform.
    pub fn sample(&self, seed: u64) -> ExperimentSetup {
        let mut rng: SimRng = rng::seeded(seed);
        let u = rng::unit(&mut rng);
        let graph_seed = rng::derive_seed(seed, GRAPH_SEED_STREAM);
        let graph = if u < 0.92 {
            let p = if rng::unit(&mut rng) < 0.9 {
                rng::uniform(&mut rng, 0.15, 0.35)
            } else {
                rng::uniform(&mut rng, 0.35, 1.0)
            };
            // U[0,1) can return the exact lower bound; keep p inside the open interval.
            let p = if p <= 0.15 { 0.15 + f64::EPSILON } else { p };
            GraphSpec::erdos_renyi(self.agents, p, graph_seed)
        } else if u < 0.96 {
            GraphSpec { seed: graph_seed, ..GraphSpec::fully_connected(self.agents) }
        } else {
            GraphSpec { seed: graph_seed, ..GraphSpec::ring(self.agents) }
        };
        let profiles = (0..self.agents)
            .map(|_| {
                let stance = Stance::ALL[rng::index(&mut rng, 3)];
                let agent_type = if rng::index(&mut rng, 2) == 0 {
                    AgentType::SelfConfident
                } else {
                    AgentType::OpenMinded
                };
                let w = match agent_type {
                    AgentType::SelfConfident => self.self_confident_weight,
                    AgentType::OpenMinded => self.open_minded_weight,
                };
                AgentProfile { agent_type, self_weight: w, initial_stance: stance }
            })
            .collect();
        let topic = TOPICS[rng::index(&mut rng, TOPICS.len())];
        ExperimentSetup { graph, profiles, topic }
    }
}

/// Samples a configuration with the default sampler and `agents` agents.
pub fn sample_experiment_setup(seed: u64, agents: usize) -> ExperimentSetup {
    SetupSampler { agents, ..SetupSampler::default() }.sample(seed)
}
