//! Network structure and the extended-ADMM consensus round.
//!
//! Agents hold local dictionaries `L_i` and must agree on every edge. The
//! constraint `Σ_i E_i L_i = 0` uses `E = H ⊗ I_d`, where `H` is the
//! node-arc incidence matrix, but `E` is never formed: the only products the
//! algorithm needs are `E_iᵀ E_j`, which are integer multiples of `I_d`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge_base::{Accumulator, KnowledgeBase, LocalSystem, NeighborSummary};

/// Undirected, connected agent graph. Edges are stored as `(i, j)` with
/// `i < j`, sorted lexicographically; position in `edges` is the row of `H`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    incident: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Validates edges and connectivity. Pairs may be given in either orientation.
    pub fn new(n_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::TooFewAgents(0));
        }
        let mut normalized = Vec::new();
        for (a, b) in edges {
            if a == b || a >= n_agents || b >= n_agents {
                return Err(Error::MalformedEdge(a, b));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::MalformedEdge(w[0].0, w[0].1));
        }
        let mut adjacency = vec![Vec::new(); n_agents];
        let mut incident = vec![Vec::new(); n_agents];
        for (l, &(i, j)) in normalized.iter().enumerate() {
            adjacency[i].push(j);
            adjacency[j].push(i);
            incident[i].push(l);
            incident[j].push(l);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        let graph = Self {
            n_agents,
            edges: normalized,
            adjacency,
            incident,
        };
        if !graph.is_connected() {
            return Err(Error::DisconnectedGraph);
        }
        Ok(graph)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Edge positions touching agent `i`.
    pub fn incident_edges(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_agents];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n_agents
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Chain,
    Star,
    Complete,
    Random,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] = [
        TopologyKind::Chain,
        TopologyKind::Star,
        TopologyKind::Complete,
        TopologyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Chain => "chain",
            TopologyKind::Star => "star",
            TopologyKind::Complete => "complete",
            TopologyKind::Random => "random",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(TopologyKind::Chain),
            "star" => Ok(TopologyKind::Star),
            "complete" => Ok(TopologyKind::Complete),
            "random" => Ok(TopologyKind::Random),
            other => Err(Error::Config(format!("unknown topology {other:?}"))),
        }
    }
}

/// Build one of the standard topologies.
///
/// `Random` draws a uniform labelled spanning tree (random Prüfer sequence)
/// and then adds uniformly chosen extra edges until the graph holds
/// `⌈n(n−1)/4⌉` edges, half of the complete graph rounded up. Only `Random`
/// uses `seed`.
pub fn make_topology(kind: TopologyKind, n_agents: usize, seed: u64) -> Result<NetworkGraph> {
    if n_agents == 0 {
        return Err(Error::TooFewAgents(0));
    }
    let n = n_agents;
    let edges: Vec<(usize, usize)> = match kind {
        TopologyKind::Chain => (1..n).map(|i| (i - 1, i)).collect(),
        TopologyKind::Star => (1..n).map(|i| (0, i)).collect(),
        TopologyKind::Complete => (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect(),
        TopologyKind::Random => random_connected_edges(n, seed),
    };
    NetworkGraph::new(n, edges)
}

fn random_connected_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
    if n == 1 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = Vec::with_capacity(n - 1);
    if n == 2 {
        tree.push((0, 1));
    } else {
        let prufer: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
        let mut degree = vec![1usize; n];
        for &v in &prufer {
            degree[v] += 1;
        }
        for &v in &prufer {
            let leaf = (0..n)
                .find(|&w| degree[w] == 1)
                .expect("Prüfer decoding always has a leaf");
            tree.push((leaf.min(v), leaf.max(v)));
            degree[leaf] -= 1;
            degree[v] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&w| degree[w] == 1).collect();
        tree.push((rest[0], rest[1]));
    }
    let target = (n * (n - 1)).div_ceil(4);
    let mut others: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|e| !tree.contains(e))
        .collect();
    others.shuffle(&mut rng);
    let extra = target.saturating_sub(tree.len());
    tree.extend(others.into_iter().take(extra));
    tree
}

/// `E_iᵀ E_j` is always `c · I_d` for an integer `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityMultiple(pub i64);

impl IdentityMultiple {
    pub fn to_dense(self, d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d) * self.0 as f64
    }
}

/// The incidence matrix `H` plus constant-time `E_iᵀ E_j` lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub h: DMatrix<f64>,
    degrees: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

impl Incidence {
    /// `deg(i)` on the diagonal, `−1` for neighbors, `0` otherwise.
    pub fn gram(&self, i: usize, j: usize) -> IdentityMultiple {
        if i == j {
            IdentityMultiple(self.degrees[i] as i64)
        } else if self.adjacency[i].binary_search(&j).is_ok() {
            IdentityMultiple(-1)
        } else {
            IdentityMultiple(0)
        }
    }

    /// `‖E_i‖²` (spectral), which equals the degree.
    pub fn block_norm_sq(&self, i: usize) -> f64 {
        self.degrees[i] as f64
    }
}

/// Row `l` of `H` carries `+1` at `i` and `−1` at `j` for edge `l = (i, j)`.
pub fn build_incidence(graph: &NetworkGraph) -> Incidence {
    let mut h = DMatrix::zeros(graph.n_edges(), graph.n_agents());
    for (l, &(i, j)) in graph.edges().iter().enumerate() {
        h[(l, i)] = 1.0;
        h[(l, j)] = -1.0;
    }
    Incidence {
        h,
        degrees: (0..graph.n_agents()).map(|i| graph.degree(i)).collect(),
        adjacency: graph.adjacency.clone(),
    }
}

/// One `d x u` multiplier block per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariable {
    pub blocks: Vec<DMatrix<f64>>,
}

impl DualVariable {
    pub fn zeros(graph: &NetworkGraph, d: usize, u: usize) -> Self {
        Self {
            blocks: vec![DMatrix::zeros(d, u); graph.n_edges()],
        }
    }
}

/// Assemble the network terms for agent `i` from the current dictionaries.
pub fn neighbor_summary(
    graph: &NetworkGraph,
    i: usize,
    dicts: &[KnowledgeBase],
    duals: &DualVariable,
) -> NeighborSummary {
    let (d, u) = dicts[i].dict.shape();
    let mut dual_aggregate = DMatrix::zeros(d, u);
    for &l in graph.incident_edges(i) {
        let (a, _) = graph.edges[l];
        if a == i {
            dual_aggregate += &duals.blocks[l];
        } else {
            dual_aggregate -= &duals.blocks[l];
        }
    }
    let mut neighbor_sum = DMatrix::zeros(d, u);
    for &j in graph.neighbors(i) {
        neighbor_sum += &dicts[j].dict;
    }
    NeighborSummary {
        dual_aggregate,
        neighbor_sum,
        degree: graph.degree(i),
    }
}

/// `max_l ‖L_i − L_j‖_F` over edges; 0 for a single agent.
pub fn consensus_residual(graph: &NetworkGraph, dicts: &[KnowledgeBase]) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| (&dicts[i].dict - &dicts[j].dict).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmParams {
    pub rho: f64,
    pub lambda: f64,
    pub iterations: usize,
    /// Primal sweep order; ascending agent index when `None`.
    pub order: Option<Vec<usize>>,
}

impl AdmmParams {
    pub fn new(rho: f64, lambda: f64, iterations: usize) -> Self {
        Self {
            rho,
            lambda,
            iterations,
            order: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundTrace {
    /// Consensus residual after each iteration.
    pub residuals: Vec<f64>,
}

impl RoundTrace {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Factor every agent's local system once; they stay fixed across a round.
pub fn factor_agents(
    graph: &NetworkGraph,
    accumulators: &[Accumulator],
    rho: f64,
    lambda: f64,
) -> Result<Vec<LocalSystem>> {
    accumulators
        .iter()
        .enumerate()
        .map(|(i, acc)| acc.factor(graph.degree(i), rho, lambda).map_err(|e| e.in_agent(i)))
        .collect()
}

fn sweep_order(params: &AdmmParams, n: usize) -> Result<Vec<usize>> {
    match &params.order {
        None => Ok((0..n).collect()),
        Some(order) => {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::InvalidParameter(
                    "sweep order is not a permutation of the agents".into(),
                ));
            }
            Ok(order.clone())
        }
    }
}

/// One ADMM iteration: an in-place Gauss–Seidel primal sweep (each agent sees
/// the freshest neighbor dictionaries) followed by the per-edge dual step
/// `Z_l += ρ (L_i − L_j)`.
pub fn admm_iteration(
    graph: &NetworkGraph,
    systems: &[LocalSystem],
    dicts: &mut [KnowledgeBase],
    duals: &mut DualVariable,
    rho: f64,
    order: &[usize],
) -> Result<()> {
    for &i in order {
        let summary = neighbor_summary(graph, i, dicts, duals);
        dicts[i] = systems[i].solve(&summary).map_err(|e| e.in_agent(i))?;
    }
    dual_step(graph, dicts, duals, rho);
    Ok(())
}

/// `Z_l += ρ (L_i − L_j)` for every edge `l = (i, j)`. Each block reads only
/// its own endpoints.
pub fn dual_step(graph: &NetworkGraph, dicts: &[KnowledgeBase], duals: &mut DualVariable, rho: f64) {
    for (l, &(i, j)) in graph.edges().iter().enumerate() {
        let diff = &dicts[i].dict - &dicts[j].dict;
        duals.blocks[l] += diff * rho;
    }
}

/// Run `params.iterations` ADMM iterations from the given warm start.
pub fn admm_consensus_round(
    graph: &NetworkGraph,
    accumulators: &[Accumulator],
    dicts: &mut [KnowledgeBase],
    duals: &mut DualVariable,
    params: &AdmmParams,
) -> Result<RoundTrace> {
    let n = graph.n_agents();
    if accumulators.len() != n || dicts.len() != n {
        return Err(Error::DimensionMismatch {
            context: "agents in ADMM round",
            expected: n,
            actual: accumulators.len().min(dicts.len()),
        });
    }
    if duals.blocks.len() != graph.n_edges() {
        return Err(Error::DimensionMismatch {
            context: "dual blocks vs edges",
            expected: graph.n_edges(),
            actual: duals.blocks.len(),
        });
    }
    if params.iterations == 0 {
        return Err(Error::InvalidParameter(
            "ADMM round needs at least one iteration".into(),
        ));
    }
    let order = sweep_order(params, n)?;
    let systems = factor_agents(graph, accumulators, params.rho, params.lambda)?;
    let mut trace = RoundTrace::default();
    for _ in 0..params.iterations {
        admm_iteration(graph, &systems, dicts, duals, params.rho, &order)?;
        trace.residuals.push(consensus_residual(graph, dicts));
    }
    Ok(trace)
}

/// Like [`admm_consensus_round`], but stops early once the residual drops to
/// `tol` (checked after every iteration).
pub fn admm_until_consensus(
    graph: &NetworkGraph,
    accumulators: &[Accumulator],
    dicts: &mut [KnowledgeBase],
    duals: &mut DualVariable,
    params: &AdmmParams,
    tol: f64,
) -> Result<RoundTrace> {
    let order = sweep_order(params, graph.n_agents())?;
    let systems = factor_agents(graph, accumulators, params.rho, params.lambda)?;
    let mut trace = RoundTrace::default();
    let mut prev: Option<Vec<KnowledgeBase>> = None;
    for _ in 0..params.iterations.max(1) {
        admm_iteration(graph, &systems, dicts, duals, params.rho, &order)?;
        let residual = consensus_residual(graph, dicts);
        trace.residuals.push(residual);
        // Consensus alone is not enough: the iterates must also have stopped moving.
        let moved = prev.as_ref().map_or(f64::INFINITY, |p| {
            p.iter()
                .zip(dicts.iter())
                .map(|(a, b)| (&a.dict - &b.dict).norm())
                .fold(0.0, f64::max)
        });
        if residual <= tol && moved <= tol {
            break;
        }
        prev = Some(dicts.to_vec());
    }
    Ok(trace)
}

/// Admissible-penalty diagnostic for the Gauss–Seidel ADMM scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoDiagnostic {
    /// `min_i 2η_i / (3 (N−1) ‖E_i‖²)`; infinite for a single agent.
    pub bound: f64,
    /// Whether `0 < rho < bound`.
    pub ok: bool,
}

/// Each agent's quadratic has strong-convexity modulus
/// `η_i = 2λ + 2 λ_min(A_i / T_i)` in `vec(L_i)`, and `‖E_i‖² = deg(i)`.
pub fn rho_admissibility(graph: &NetworkGraph, accumulators: &[Accumulator], lambda: f64, rho: f64) -> RhoDiagnostic {
    let n = graph.n_agents();
    let bound = if n <= 1 {
        f64::INFINITY
    } else {
        (0..n)
            .map(|i| {
                let eta = 2.0 * lambda + 2.0 * accumulators[i].min_eigenvalue_averaged().max(0.0);
                2.0 * eta / (3.0 * (n - 1) as f64 * graph.degree(i) as f64)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let ok = rho > 0.0 && rho < bound;
    if !ok {
        log::debug!("rho = {rho} is outside the admissible interval (0, {bound})");
    }
    RhoDiagnostic { bound, ok }
}
