//! Distribution network data, scenarios, allocations, and input parsing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub id: usize,
    #[serde(default)]
    pub pc_max: f64,
    #[serde(default)]
    pub qc_max: f64,
    #[serde(default)]
    pub gamma_min: f64,
    #[serde(default)]
    pub cost_shed: f64,
    #[serde(default)]
    pub cost_control: f64,
    #[serde(default)]
    pub site_weight: f64,
    #[serde(default = "default_v_min")]
    pub v_load_min: f64,
    #[serde(default = "default_v_max")]
    pub v_load_max: f64,
    #[serde(default)]
    pub v_dg_min: Option<f64>,
    #[serde(default)]
    pub v_dg_max: Option<f64>,
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

impl NodeParams {
    pub fn blank(id: usize) -> Self {
        NodeParams {
            id,
            pc_max: 0.0,
            qc_max: 0.0,
            gamma_min: 0.0,
            cost_shed: 0.0,
            cost_control: 0.0,
            site_weight: 0.0,
            v_load_min: default_v_min(),
            v_load_max: default_v_max(),
            v_dg_min: None,
            v_dg_max: None,
        }
    }

    /// DG voltage window, falling back to the load window.
    pub fn dg_window(&self) -> (f64, f64) {
        (
            self.v_dg_min.unwrap_or(self.v_load_min),
            self.v_dg_max.unwrap_or(self.v_load_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeParams {
    pub from: usize,
    pub to: usize,
    #[serde(alias = "r")]
    pub resistance: f64,
    #[serde(alias = "x")]
    pub reactance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerParams {
    pub name: String,
    pub pg_max: f64,
    /// Reactive capacity; when present `|q| <= qg_max` is enforced as well.
    #[serde(default)]
    pub qg_max: Option<f64>,
    #[serde(default)]
    pub pf_tan: Option<f64>,
    #[serde(default)]
    pub droop_coeff: f64,
    #[serde(default = "default_v_ref")]
    pub v_ref: f64,
}

fn default_v_ref() -> f64 {
    1.0
}

impl DerParams {
    /// Power-factor slope; derived from the reactive capacity when not given.
    pub fn pf_slope(&self) -> f64 {
        match (self.pf_tan, self.qg_max) {
            (Some(t), _) => t,
            (None, Some(q)) if self.pg_max > 0.0 => q / self.pg_max,
            _ => 0.0,
        }
    }

    pub fn q_cap(&self) -> f64 {
        match self.qg_max {
            Some(q) => q,
            None => self.pf_slope() * self.pg_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionNetwork {
    pub name: String,
    /// Indexed by node id; entry `substation` carries no load.
    pub nodes: Vec<NodeParams>,
    pub edges: Vec<EdgeParams>,
    pub substation: usize,
    pub candidate_sites: Vec<usize>,
    pub ders: Vec<DerParams>,
    pub nominal_sq_voltage: f64,
}

impl DistributionNetwork {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Ids of all nodes other than the substation.
    pub fn load_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| i != self.substation)
    }

    pub fn is_substation_edge(&self, e: usize) -> bool {
        let ed = &self.edges[e];
        ed.from == self.substation || ed.to == self.substation
    }

    pub fn substation_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.is_substation_edge(e)).collect()
    }

    /// Edges leaving each node, by node id.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (e, ed) in self.edges.iter().enumerate() {
            if ed.from < out.len() {
                out[ed.from].push(e);
            }
        }
        out
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| (e.from == a && e.to == b) || (e.from == b && e.to == a))
    }

    pub fn site_position(&self, node: usize) -> Option<usize> {
        self.candidate_sites.iter().position(|&s| s == node)
    }

    pub fn der_index(&self, name: &str) -> Option<usize> {
        self.ders.iter().position(|d| d.name == name)
    }

    /// Stage I cost: total site weight of developed sites.
    pub fn site_cost(&self, a: &Allocation) -> f64 {
        a.sites
            .iter()
            .zip(&self.candidate_sites)
            .filter(|(open, _)| **open)
            .map(|(_, &n)| self.nodes[n].site_weight)
            .sum()
    }

    pub fn total_shed_cost(&self) -> f64 {
        self.load_nodes().map(|i| self.nodes[i].cost_shed).sum()
    }

    /// Hop distances from `src` over the undirected tree.
    pub fn hop_distances(&self, src: usize) -> Vec<usize> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            if e.from < n && e.to < n {
                adj[e.from].push(e.to);
                adj[e.to].push(e.from);
            }
        }
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Period horizon `K`, equal to the number of edges.
pub fn horizon(dn: &DistributionNetwork) -> usize {
    dn.edges.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub failed: BTreeSet<usize>,
    pub probability: f64,
}

impl Scenario {
    pub fn is_failed(&self, e: usize) -> bool {
        self.failed.contains(&e)
    }
}

/// Stage I decision: developed sites and DER assignment, both indexed by
/// position in `candidate_sites`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Allocation {
    pub sites: Vec<bool>,
    pub assignment: Vec<Vec<bool>>,
}

impl Allocation {
    pub fn empty(num_sites: usize, num_ders: usize) -> Self {
        Allocation {
            sites: vec![false; num_sites],
            assignment: vec![vec![false; num_ders]; num_sites],
        }
    }

    /// Builds an allocation from `(site position, der index)` pairs.
    pub fn from_pairs(num_sites: usize, num_ders: usize, pairs: &[(usize, usize)]) -> Self {
        let mut a = Self::empty(num_sites, num_ders);
        for &(u, d) in pairs {
            a.sites[u] = true;
            a.assignment[u][d] = true;
        }
        a
    }

    /// Builds an allocation from `(node id, der name)` pairs.
    pub fn from_named(dn: &DistributionNetwork, pairs: &[(usize, &str)]) -> Result<Self, InputError> {
        let mut idx = Vec::new();
        for &(node, der) in pairs {
            let u = dn
                .site_position(node)
                .ok_or_else(|| InputError::Reference(format!("node {node} is not a candidate site")))?;
            let d = dn
                .der_index(der)
                .ok_or_else(|| InputError::Reference(format!("unknown DER `{der}`")))?;
            idx.push((u, d));
        }
        Ok(Self::from_pairs(dn.candidate_sites.len(), dn.ders.len(), &idx))
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn num_ders(&self) -> usize {
        self.assignment.first().map_or(0, |r| r.len())
    }

    /// Flat binary vector `[sites..., assignment row-major...]`.
    pub fn to_vector(&self) -> Vec<bool> {
        let mut v = self.sites.clone();
        for row in &self.assignment {
            v.extend_from_slice(row);
        }
        v
    }

    pub fn from_vector(num_sites: usize, num_ders: usize, v: &[bool]) -> Self {
        let sites = v[..num_sites].to_vec();
        let assignment = (0..num_sites)
            .map(|u| v[num_sites + u * num_ders..num_sites + (u + 1) * num_ders].to_vec())
            .collect();
        Allocation { sites, assignment }
    }

    pub fn vector_len(num_sites: usize, num_ders: usize) -> usize {
        num_sites + num_sites * num_ders
    }

    pub fn site_var(u: usize) -> usize {
        u
    }

    pub fn assign_var(num_sites: usize, num_ders: usize, u: usize, d: usize) -> usize {
        num_sites + u * num_ders + d
    }

    pub fn num_assigned(&self) -> usize {
        self.assignment.iter().flatten().filter(|&&b| b).count()
    }

    pub fn site_of(&self, d: usize) -> Option<usize> {
        (0..self.sites.len()).find(|&u| self.assignment[u][d])
    }

    /// Checks site/assignment linking, one site per DER, and the budget.
    pub fn is_feasible(&self, budget: usize) -> bool {
        let nd = self.num_ders();
        for u in 0..self.sites.len() {
            let any = self.assignment[u].iter().any(|&b| b);
            if self.sites[u] && !any {
                return false;
            }
            if !self.sites[u] && any {
                return false;
            }
        }
        for d in 0..nd {
            if self.assignment.iter().filter(|r| r[d]).count() > 1 {
                return false;
            }
        }
        self.num_assigned() <= budget
    }

    pub fn describe(&self, dn: &DistributionNetwork) -> String {
        let mut parts = Vec::new();
        for (u, row) in self.assignment.iter().enumerate() {
            for (d, &b) in row.iter().enumerate() {
                if b {
                    parts.push(format!("{}@{}", dn.ders[d].name, dn.candidate_sites[u]));
                }
            }
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join(" ")
        }
    }
}

/// Every allocation satisfying the site, uniqueness, and budget rules,
/// including the empty one.
pub fn enumerate_allocations(dn: &DistributionNetwork, budget: usize) -> Vec<Allocation> {
    let nu = dn.candidate_sites.len();
    let nd = dn.ders.len();
    let mut out = Vec::new();
    let mut choice: Vec<Option<usize>> = vec![None; nd];
    fn rec(
        d: usize,
        used: usize,
        nu: usize,
        nd: usize,
        budget: usize,
        choice: &mut Vec<Option<usize>>,
        out: &mut Vec<Allocation>,
    ) {
        if d == nd {
            let pairs: Vec<(usize, usize)> = choice
                .iter()
                .enumerate()
                .filter_map(|(d, c)| c.map(|u| (u, d)))
                .collect();
            out.push(Allocation::from_pairs(nu, nd, &pairs));
            return;
        }
        choice[d] = None;
        rec(d + 1, used, nu, nd, budget, choice, out);
        if used < budget {
            for u in 0..nu {
                choice[d] = Some(u);
                rec(d + 1, used + 1, nu, nd, budget, choice, out);
            }
            choice[d] = None;
        }
    }
    rec(0, 0, nu, nd, budget, &mut choice, &mut out);
    out
}

/// Draws `count` scenarios by independent per-line coin flips. Lines at
/// the substation always fail.
pub fn sample_scenarios(dn: &DistributionNetwork, line_fail_probs: &[f64], count: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let mut failed = BTreeSet::new();
            for e in 0..dn.edges.len() {
                let p = line_fail_probs.get(e).copied().unwrap_or(0.0);
                let draw: f64 = rng.gen();
                if dn.is_substation_edge(e) || draw < p {
                    failed.insert(e);
                }
            }
            Scenario {
                name: format!("s{}", k + 1),
                failed,
                probability: 1.0 / count as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

pub fn validate_network(dn: &DistributionNetwork) -> ValidationReport {
    let mut v = Vec::new();
    let n = dn.nodes.len();
    for (i, node) in dn.nodes.iter().enumerate() {
        if node.id != i {
            v.push(format!("node at position {i} has id {}", node.id));
        }
    }
    if dn.substation >= n {
        v.push(format!("substation {} is not a node", dn.substation));
        return ValidationReport { violations: v };
    }
    for (e, ed) in dn.edges.iter().enumerate() {
        if ed.from >= n || ed.to >= n {
            v.push(format!("edge {e} references unknown node"));
        }
        if ed.from == ed.to {
            v.push(format!("edge {e} is a self-loop"));
        }
        if ed.resistance < 0.0 || ed.reactance < 0.0 {
            v.push(format!("edge {e} has negative impedance"));
        }
    }
    if !v.is_empty() {
        return ValidationReport { violations: v };
    }

    // Radiality: union-find for cycles, then BFS for reachability and orientation.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut cyclic = false;
    for ed in &dn.edges {
        let (a, b) = (find(&mut parent, ed.from), find(&mut parent, ed.to));
        if a == b {
            cyclic = true;
        } else {
            parent[a] = b;
        }
    }
    if cyclic {
        v.push("cycle detected".to_string());
    }
    if dn.edges.len() != n.saturating_sub(1) {
        v.push(format!(
            "{} edges for {} non-substation nodes",
            dn.edges.len(),
            n.saturating_sub(1)
        ));
    }
    let dist = dn.hop_distances(dn.substation);
    for (i, &d) in dist.iter().enumerate() {
        if d == usize::MAX {
            v.push(format!("node {i} is not connected to the substation"));
        }
    }
    if !cyclic {
        for (e, ed) in dn.edges.iter().enumerate() {
            if dist[ed.from] != usize::MAX && dist[ed.to] != usize::MAX && dist[ed.from] >= dist[ed.to] {
                v.push(format!("edge {e} is oriented away from the substation side"));
            }
        }
    }

    let mut seen = BTreeSet::new();
    for &s in &dn.candidate_sites {
        if s == dn.substation {
            v.push("site at substation".to_string());
        } else if s >= n {
            v.push(format!("site {s} is not a node"));
        }
        if !seen.insert(s) {
            v.push(format!("site {s} listed twice"));
        }
    }

    for i in dn.load_nodes() {
        let nd = &dn.nodes[i];
        if !(0.0..=1.0).contains(&nd.gamma_min) {
            v.push(format!("node {i}: gamma_min outside [0, 1]"));
        }
        if nd.cost_control > nd.cost_shed {
            v.push(format!("node {i}: control cost exceeds shed cost"));
        }
        if nd.v_load_min >= nd.v_load_max {
            v.push(format!("node {i}: empty load voltage window"));
        }
        let (lo, hi) = nd.dg_window();
        if lo >= hi {
            v.push(format!("node {i}: empty DG voltage window"));
        }
        if nd.pc_max < 0.0 || nd.qc_max < 0.0 {
            v.push(format!("node {i}: negative demand"));
        }
    }

    let win_lo = dn
        .load_nodes()
        .map(|i| dn.nodes[i].dg_window().0)
        .fold(f64::INFINITY, f64::min);
    let win_hi = dn
        .load_nodes()
        .map(|i| dn.nodes[i].dg_window().1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut names = BTreeSet::new();
    for d in &dn.ders {
        if !names.insert(d.name.as_str()) {
            v.push(format!("DER `{}` listed twice", d.name));
        }
        if d.pg_max < 0.0 {
            v.push(format!("DER `{}`: negative active capacity", d.name));
        }
        if d.pf_slope() < 0.0 || d.qg_max.is_some_and(|q| q < 0.0) {
            v.push(format!("DER `{}`: negative reactive capability", d.name));
        }
        if win_lo.is_finite() && (d.v_ref < win_lo - 1e-12 || d.v_ref > win_hi + 1e-12) {
            v.push(format!("DER `{}`: v_ref outside the DG voltage range", d.name));
        }
    }
    if !(dn.nominal_sq_voltage > 0.0) {
        v.push("nominal voltage must be positive".to_string());
    }
    ValidationReport { violations: v }
}

pub fn validate_scenario(dn: &DistributionNetwork, s: &Scenario) -> ValidationReport {
    let mut v = Vec::new();
    for &e in &s.failed {
        if e >= dn.edges.len() {
            v.push(format!("scenario {}: unknown edge {e}", s.name));
        }
    }
    for e in dn.substation_edges() {
        if !s.failed.contains(&e) {
            v.push(format!("scenario {}: substation edge {e} must be failed", s.name));
        }
    }
    if !(s.probability >= 0.0) {
        v.push(format!("scenario {}: negative probability", s.name));
    }
    ValidationReport { violations: v }
}

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid network: {0}")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Reference(String),
}

/// How voltage limits in the input are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoltageConvention {
    /// Values are squared magnitudes and are used as given.
    #[default]
    Squared,
    /// Values are magnitudes and are squared on ingestion.
    Magnitude,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum EdgeRef {
    Index(usize),
    Pair([usize; 2]),
}

#[derive(Debug, Clone, Deserialize)]
struct ScenarioEntry {
    #[serde(default)]
    name: Option<String>,
    failed: Vec<EdgeRef>,
    #[serde(default)]
    probability: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FailProbs {
    Uniform(f64),
    PerEdge(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    name: String,
    #[serde(default)]
    substation: usize,
    #[serde(default = "default_nominal")]
    nominal_sq_voltage: f64,
    #[serde(default)]
    voltage_bounds: VoltageConvention,
    nodes: Vec<NodeParams>,
    edges: Vec<EdgeParams>,
    ders: Vec<DerParams>,
    candidate_sites: Vec<usize>,
    #[serde(default)]
    scenarios: Option<Vec<ScenarioEntry>>,
    #[serde(default)]
    line_fail_probs: Option<FailProbs>,
    #[serde(default)]
    allocations: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

fn default_nominal() -> f64 {
    1.0
}

/// Everything read from a network file.
#[derive(Debug, Clone)]
pub struct NetworkInput {
    pub network: DistributionNetwork,
    pub scenarios: Option<Vec<Scenario>>,
    pub line_fail_probs: Option<Vec<f64>>,
    /// Named allocations, in file order of names (sorted).
    pub allocations: Vec<(String, Allocation)>,
}

impl NetworkInput {
    pub fn allocation(&self, name: &str) -> Option<&Allocation> {
        self.allocations.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }
}

pub fn load_network(path: &Path) -> Result<NetworkInput, InputError> {
    let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_network(&text, &path.display().to_string())
}

pub fn parse_network(text: &str, origin: &str) -> Result<NetworkInput, InputError> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| InputError::Syntax {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let max_id = file
        .nodes
        .iter()
        .map(|n| n.id)
        .chain(file.edges.iter().flat_map(|e| [e.from, e.to]))
        .chain([file.substation])
        .max()
        .unwrap_or(0);
    let mut slots: Vec<Option<NodeParams>> = vec![None; max_id + 1];
    for node in file.nodes {
        let id = node.id;
        if slots[id].is_some() {
            return Err(InputError::Reference(format!("node {id} listed twice")));
        }
        slots[id] = Some(node);
    }
    if slots[file.substation].is_none() {
        slots[file.substation] = Some(NodeParams::blank(file.substation));
    }
    let mut nodes = Vec::with_capacity(slots.len());
    for (i, s) in slots.into_iter().enumerate() {
        nodes.push(s.ok_or_else(|| InputError::Reference(format!("node {i} is referenced but not defined")))?);
    }
    let mut ders = file.ders;
    if file.voltage_bounds == VoltageConvention::Magnitude {
        for n in &mut nodes {
            n.v_load_min *= n.v_load_min;
            n.v_load_max *= n.v_load_max;
            n.v_dg_min = n.v_dg_min.map(|v| v * v);
            n.v_dg_max = n.v_dg_max.map(|v| v * v);
        }
        for d in &mut ders {
            d.v_ref *= d.v_ref;
        }
    }
    let network = DistributionNetwork {
        name: file.name,
        nodes,
        edges: file.edges,
        substation: file.substation,
        candidate_sites: file.candidate_sites,
        ders,
        nominal_sq_voltage: file.nominal_sq_voltage,
    };
    let report = validate_network(&network);
    if !report.is_ok() {
        return Err(InputError::Invalid(report));
    }

    let scenarios = match file.scenarios {
        None => None,
        Some(list) => {
            let count = list.len();
            let mut out = Vec::with_capacity(count);
            for (k, entry) in list.into_iter().enumerate() {
                let mut failed = BTreeSet::new();
                for r in entry.failed {
                    let e = match r {
                        EdgeRef::Index(e) if e < network.edges.len() => e,
                        EdgeRef::Index(e) => return Err(InputError::Reference(format!("unknown edge {e}"))),
                        EdgeRef::Pair([a, b]) => network
                            .edge_between(a, b)
                            .ok_or_else(|| InputError::Reference(format!("no edge between {a} and {b}")))?,
                    };
                    failed.insert(e);
                }
                let s = Scenario {
                    name: entry.name.unwrap_or_else(|| format!("s{}", k + 1)),
                    failed,
                    probability: entry.probability.unwrap_or(1.0 / count as f64),
                };
                let rep = validate_scenario(&network, &s);
                if !rep.is_ok() {
                    return Err(InputError::Invalid(rep));
                }
                out.push(s);
            }
            Some(out)
        }
    };

    let line_fail_probs = match file.line_fail_probs {
        None => None,
        Some(FailProbs::Uniform(p)) => Some(vec![p; network.edges.len()]),
        Some(FailProbs::PerEdge(v)) => {
            if v.len() != network.edges.len() {
                return Err(InputError::Reference(format!(
                    "line_fail_probs has {} entries for {} edges",
                    v.len(),
                    network.edges.len()
                )));
            }
            Some(v)
        }
    };
    if let Some(p) = &line_fail_probs {
        if p.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(InputError::Reference(
                "line failure probabilities must lie in [0, 1]".into(),
            ));
        }
    }

    let mut allocations = Vec::new();
    for (name, spec) in file.allocations {
        let mut pairs = Vec::new();
        for (site, ders) in &spec {
            let node: usize = site
                .parse()
                .map_err(|_| InputError::Reference(format!("allocation {name}: bad site `{site}`")))?;
            for d in ders {
                pairs.push((node, d.as_str()));
            }
        }
        let a = Allocation::from_named(&network, &pairs)?;
        if !a.is_feasible(network.ders.len()) {
            return Err(InputError::Reference(format!("allocation {name} assigns a DER twice")));
        }
        allocations.push((name, a));
    }

    Ok(NetworkInput {
        network,
        scenarios,
        line_fail_probs,
        allocations,
    })
}
