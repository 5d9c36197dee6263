//! Stage II repair-and-dispatch MILP assembly, plan extraction, and an
//! independent feasibility checker.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use resalloc_milp::{MilpInstance, MilpOptions, MilpSolution, MilpStatus, Row, RowSense, VarKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::load_cost;
use crate::network::{horizon, validate_scenario, Allocation, DistributionNetwork, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Lines repairable per period.
    pub crew_capacity: usize,
    /// Big-M constant; derived from the network when `None`.
    pub big_m: Option<f64>,
    pub droop_enabled: bool,
    /// Strict-improvement margin for Benders cuts, relative to the
    /// incumbent objective (floored at 1 in absolute terms).
    pub epsilon_cut: f64,
    pub lp_tolerance: f64,
    pub mip_gap: f64,
    pub node_limit: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            crew_capacity: 1,
            big_m: None,
            droop_enabled: true,
            epsilon_cut: 1e-6,
            lp_tolerance: 1e-9,
            mip_gap: 1e-7,
            node_limit: 2_000_000,
        }
    }
}

impl SolveConfig {
    pub fn check(&self) -> Result<(), Stage2Error> {
        if self.crew_capacity < 1 {
            return Err(Stage2Error::Config("crew capacity must be at least 1".into()));
        }
        if let Some(m) = self.big_m {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Stage2Error::Config("big-M must be positive and finite".into()));
            }
        }
        if !(self.epsilon_cut > 0.0) {
            return Err(Stage2Error::Config("cut epsilon must be positive".into()));
        }
        if !(self.lp_tolerance > 0.0) || !(self.mip_gap >= 0.0) {
            return Err(Stage2Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn milp_options(&self) -> MilpOptions {
        let mut o = MilpOptions::default();
        o.mip_gap = self.mip_gap;
        o.lp.tolerances.primal = self.lp_tolerance;
        o.lp.tolerances.dual = self.lp_tolerance;
        o.node_limit = self.node_limit;
        o
    }

    pub fn big_m_for(&self, dn: &DistributionNetwork) -> f64 {
        self.big_m.unwrap_or_else(|| default_big_m(dn))
    }
}

/// Smallest constant that provably never binds: the textbook formula
/// `2(sum pc + sum qc) + span` is raised when flows through DER output or
/// voltage offsets between islands could exceed it.
pub fn default_big_m(dn: &DistributionNetwork) -> f64 {
    let loads: Vec<usize> = dn.load_nodes().collect();
    let spc: f64 = loads.iter().map(|&i| dn.nodes[i].pc_max).sum();
    let sqc: f64 = loads.iter().map(|&i| dn.nodes[i].qc_max).sum();
    let vmin = loads
        .iter()
        .map(|&i| dn.nodes[i].v_load_min.min(dn.nodes[i].dg_window().0))
        .fold(dn.nominal_sq_voltage, f64::min);
    let vmax = loads
        .iter()
        .map(|&i| dn.nodes[i].v_load_max.max(dn.nodes[i].dg_window().1))
        .chain(dn.ders.iter().map(|d| d.v_ref))
        .fold(dn.nominal_sq_voltage, f64::max);
    let span = vmax - vmin;
    let spg: f64 = dn.ders.iter().map(|d| d.pg_max).sum();
    let sqg: f64 = dn.ders.iter().map(|d| d.q_cap()).sum();
    let flow = (spc + spg).max(sqc + sqg);
    let rx = dn.edges.iter().map(|e| e.resistance + e.reactance).fold(0.0, f64::max);
    let droop: f64 = dn.ders.iter().map(|d| d.droop_coeff.abs() * d.q_cap()).sum();
    let textbook = 2.0 * (spc + sqc) + span;
    let safe = flow.max(span + 2.0 + 2.0 * rx * flow + droop) + 1.0;
    textbook.max(safe)
}

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("allocation does not match the network: {0}")]
    Allocation(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("solver returned {0:?} without an incumbent")]
    NoSolution(MilpStatus),
    #[error("non-integral binary `{name}` = {value}")]
    NonIntegral { name: String, value: f64 },
    #[error("extracted plan violates constraints: {0}")]
    Infeasible(String),
    #[error("period {k}: {source}")]
    Period {
        k: usize,
        #[source]
        source: Box<Stage2Error>,
    },
}

/// Semantic role of a Stage II variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarTag {
    LineDown { k: usize, e: usize },
    Repair { k: usize, e: usize },
    Shed { k: usize, i: usize },
    Served { k: usize, i: usize },
    ActiveGen { k: usize, u: usize, d: usize },
    ReactiveGen { k: usize, u: usize, d: usize },
    FlowP { k: usize, e: usize },
    FlowQ { k: usize, e: usize },
    Voltage { k: usize, i: usize },
}

impl VarTag {
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            VarTag::LineDown { .. } | VarTag::Repair { .. } | VarTag::Shed { .. }
        )
    }

    pub fn period(&self) -> usize {
        match *self {
            VarTag::LineDown { k, .. }
            | VarTag::Repair { k, .. }
            | VarTag::Shed { k, .. }
            | VarTag::Served { k, .. }
            | VarTag::ActiveGen { k, .. }
            | VarTag::ReactiveGen { k, .. }
            | VarTag::FlowP { k, .. }
            | VarTag::FlowQ { k, .. }
            | VarTag::Voltage { k, .. } => k,
        }
    }
}

/// How an edge enters one period block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeMode {
    /// Operational with no state variable.
    Closed,
    /// State variable with the given bounds (1 = non-operational).
    Switchable { lower: f64, upper: f64 },
}

/// Variable indices of one period block.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodVars {
    pub k: usize,
    pub is_final: bool,
    pub line_down: Vec<Option<usize>>,
    pub repair: Vec<Option<usize>>,
    pub shed: Vec<Option<usize>>,
    pub served: Vec<Option<usize>>,
    /// `[site position][der]`.
    pub pg: Vec<Vec<usize>>,
    pub qg: Vec<Vec<usize>>,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub v: Vec<usize>,
}

/// A Stage II instance together with the bookkeeping needed for cuts:
/// each row's right-hand side is `base_rhs + sum(alloc_terms * a)`, where
/// `a` is the flat allocation vector.
#[derive(Debug, Clone)]
pub struct Stage2Model {
    pub instance: MilpInstance,
    pub tags: Vec<VarTag>,
    pub periods: Vec<PeriodVars>,
    /// Period owning each row, `None` for rows linking periods.
    pub row_period: Vec<Option<usize>>,
    pub base_rhs: Vec<f64>,
    pub alloc_terms: Vec<Vec<(usize, f64)>>,
    pub big_m: f64,
    pub horizon: usize,
}

impl Stage2Model {
    /// Right-hand sides under a (possibly fractional) allocation vector.
    pub fn rhs_at(&self, a: &[f64]) -> Vec<f64> {
        self.base_rhs
            .iter()
            .zip(&self.alloc_terms)
            .map(|(b, t)| b + t.iter().map(|&(j, c)| c * a[j]).sum::<f64>())
            .collect()
    }

    pub fn discrete_vars(&self) -> Vec<usize> {
        (0..self.tags.len()).filter(|&j| self.tags[j].is_discrete()).collect()
    }

    pub fn period_of(&self, k: usize) -> Option<&PeriodVars> {
        self.periods.iter().find(|p| p.k == k)
    }
}

struct Builder<'a> {
    dn: &'a DistributionNetwork,
    av: Vec<bool>,
    cfg: &'a SolveConfig,
    big_m: f64,
    inst: MilpInstance,
    tags: Vec<VarTag>,
    row_period: Vec<Option<usize>>,
    base_rhs: Vec<f64>,
    alloc_terms: Vec<Vec<(usize, f64)>>,
    periods: Vec<PeriodVars>,
}

impl<'a> Builder<'a> {
    fn new(dn: &'a DistributionNetwork, a: &'a Allocation, cfg: &'a SolveConfig) -> Self {
        Builder {
            dn,
            av: a.to_vector(),
            cfg,
            big_m: cfg.big_m_for(dn),
            inst: MilpInstance::new(),
            tags: Vec::new(),
            row_period: Vec::new(),
            base_rhs: Vec::new(),
            alloc_terms: Vec::new(),
            periods: Vec::new(),
        }
    }

    fn var(&mut self, tag: VarTag, name: String, lo: f64, hi: f64, obj: f64, kind: VarKind) -> usize {
        self.tags.push(tag);
        self.inst.add_var(name, lo, hi, obj, kind)
    }

    fn row(
        &mut self,
        name: String,
        coeffs: Vec<(usize, f64)>,
        sense: RowSense,
        base: f64,
        terms: Vec<(usize, f64)>,
        period: Option<usize>,
    ) {
        let rhs = base + terms.iter().filter(|&&(j, _)| self.av[j]).map(|&(_, c)| c).sum::<f64>();
        self.inst.add_row(Row::new(name, coeffs, sense, rhs));
        self.row_period.push(period);
        self.base_rhs.push(base);
        self.alloc_terms.push(terms);
    }

    /// Adds the dispatch block of period `k`; `modes` gives each edge's state.
    fn period(&mut self, k: usize, is_final: bool, modes: &[EdgeMode]) -> PeriodVars {
        let dn = self.dn;
        let n = dn.num_nodes();
        let ne = dn.edges.len();
        let nu = dn.candidate_sites.len();
        let nd = dn.ders.len();
        let big_m = self.big_m;

        let mut line_down = vec![None; ne];
        for e in 0..ne {
            if let EdgeMode::Switchable { lower, upper } = modes[e] {
                line_down[e] = Some(self.var(
                    VarTag::LineDown { k, e },
                    format!("down_{k}_{e}"),
                    lower,
                    upper,
                    0.0,
                    VarKind::Binary,
                ));
            }
        }
        let mut shed = vec![None; n];
        let mut served = vec![None; n];
        for i in dn.load_nodes() {
            let nd_ = &dn.nodes[i];
            shed[i] = Some(self.var(
                VarTag::Shed { k, i },
                format!("shed_{k}_{i}"),
                0.0,
                1.0,
                nd_.cost_shed - nd_.cost_control,
                VarKind::Binary,
            ));
            served[i] = Some(self.var(
                VarTag::Served { k, i },
                format!("served_{k}_{i}"),
                0.0,
                1.0,
                -nd_.cost_control,
                VarKind::Continuous,
            ));
            self.inst.obj_offset += nd_.cost_control;
        }
        let mut pg = vec![Vec::with_capacity(nd); nu];
        let mut qg = vec![Vec::with_capacity(nd); nu];
        for u in 0..nu {
            for d in 0..nd {
                let p = self.var(
                    VarTag::ActiveGen { k, u, d },
                    format!("pg_{k}_{u}_{d}"),
                    0.0,
                    f64::INFINITY,
                    0.0,
                    VarKind::Continuous,
                );
                let cap = dn.ders[d].qg_max.unwrap_or(f64::INFINITY);
                let q = self.var(
                    VarTag::ReactiveGen { k, u, d },
                    format!("qg_{k}_{u}_{d}"),
                    -cap,
                    cap,
                    0.0,
                    VarKind::Continuous,
                );
                pg[u].push(p);
                qg[u].push(q);
            }
        }
        let mut p = Vec::with_capacity(ne);
        let mut q = Vec::with_capacity(ne);
        for e in 0..ne {
            p.push(self.var(
                VarTag::FlowP { k, e },
                format!("P_{k}_{e}"),
                f64::NEG_INFINITY,
                f64::INFINITY,
                0.0,
                VarKind::Continuous,
            ));
            q.push(self.var(
                VarTag::FlowQ { k, e },
                format!("Q_{k}_{e}"),
                f64::NEG_INFINITY,
                f64::INFINITY,
                0.0,
                VarKind::Continuous,
            ));
        }
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = if is_final && i == dn.substation {
                (dn.nominal_sq_voltage, dn.nominal_sq_voltage)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            v.push(self.var(
                VarTag::Voltage { k, i },
                format!("v_{k}_{i}"),
                lo,
                hi,
                0.0,
                VarKind::Continuous,
            ));
        }
        let pk = Some(k);

        // DER output limits and power factor.
        for u in 0..nu {
            for d in 0..nd {
                let der = &dn.ders[d];
                let av = Allocation::assign_var(nu, nd, u, d);
                self.row(
                    format!("pgcap_{k}_{u}_{d}"),
                    vec![(pg[u][d], 1.0)],
                    RowSense::Le,
                    0.0,
                    vec![(av, der.pg_max)],
                    pk,
                );
                let slope = der.pf_slope();
                self.row(
                    format!("pfup_{k}_{u}_{d}"),
                    vec![(qg[u][d], 1.0), (pg[u][d], -slope)],
                    RowSense::Le,
                    0.0,
                    vec![],
                    pk,
                );
                self.row(
                    format!("pflo_{k}_{u}_{d}"),
                    vec![(qg[u][d], -1.0), (pg[u][d], -slope)],
                    RowSense::Le,
                    0.0,
                    vec![],
                    pk,
                );
                if self.cfg.droop_enabled && !is_final {
                    // |v - (v_ref - kq q)| <= (1 - y) L
                    let node = dn.candidate_sites[u];
                    let kq = der.droop_coeff;
                    self.row(
                        format!("droopup_{k}_{u}_{d}"),
                        vec![(v[node], 1.0), (qg[u][d], kq)],
                        RowSense::Le,
                        der.v_ref + big_m,
                        vec![(av, -big_m)],
                        pk,
                    );
                    self.row(
                        format!("drooplo_{k}_{u}_{d}"),
                        vec![(v[node], -1.0), (qg[u][d], -kq)],
                        RowSense::Le,
                        -der.v_ref + big_m,
                        vec![(av, -big_m)],
                        pk,
                    );
                }
            }
        }

        // Load voltage window and control bounds.
        for i in dn.load_nodes() {
            let nd_ = &dn.nodes[i];
            let (c, g) = (shed[i].unwrap(), served[i].unwrap());
            if !is_final {
                self.row(
                    format!("vmin_{k}_{i}"),
                    vec![(c, 1.0), (v[i], 1.0)],
                    RowSense::Ge,
                    nd_.v_load_min,
                    vec![],
                    pk,
                );
                self.row(
                    format!("vmax_{k}_{i}"),
                    vec![(c, 1.0), (v[i], -1.0)],
                    RowSense::Ge,
                    -nd_.v_load_max,
                    vec![],
                    pk,
                );
            }
            self.row(
                format!("gmin_{k}_{i}"),
                vec![(g, 1.0), (c, nd_.gamma_min)],
                RowSense::Ge,
                nd_.gamma_min,
                vec![],
                pk,
            );
            self.row(
                format!("gmax_{k}_{i}"),
                vec![(g, 1.0), (c, 1.0)],
                RowSense::Le,
                1.0,
                vec![],
                pk,
            );
        }

        // Flow conservation: P_e - sum children P - pc_to * served + sum pg_to = 0.
        let children = dn.children();
        for e in 0..ne {
            let to = dn.edges[e].to;
            for (flow, demand, gen, tag) in [(&p, 0usize, &pg, "P"), (&q, 1usize, &qg, "Q")] {
                let mut coeffs = vec![(flow[e], 1.0)];
                for &l in &children[to] {
                    coeffs.push((flow[l], -1.0));
                }
                if let Some(g) = served[to] {
                    let load = if demand == 0 {
                        dn.nodes[to].pc_max
                    } else {
                        dn.nodes[to].qc_max
                    };
                    if load != 0.0 {
                        coeffs.push((g, -load));
                    }
                }
                if let Some(u) = dn.site_position(to) {
                    for d in 0..nd {
                        coeffs.push((gen[u][d], 1.0));
                    }
                }
                self.row(format!("bal{tag}_{k}_{e}"), coeffs, RowSense::Eq, 0.0, vec![], pk);
            }
        }

        // Line capacity and voltage drop.
        for e in 0..ne {
            let ed = &dn.edges[e];
            let drop = vec![
                (v[ed.to], 1.0),
                (v[ed.from], -1.0),
                (p[e], 2.0 * ed.resistance),
                (q[e], 2.0 * ed.reactance),
            ];
            match line_down[e] {
                Some(kv) => {
                    for (flow, tag) in [(p[e], "P"), (q[e], "Q")] {
                        self.row(
                            format!("cap{tag}up_{k}_{e}"),
                            vec![(flow, 1.0), (kv, big_m)],
                            RowSense::Le,
                            big_m,
                            vec![],
                            pk,
                        );
                        self.row(
                            format!("cap{tag}lo_{k}_{e}"),
                            vec![(flow, -1.0), (kv, big_m)],
                            RowSense::Le,
                            big_m,
                            vec![],
                            pk,
                        );
                    }
                    let mut up = drop.clone();
                    up.push((kv, -big_m));
                    self.row(format!("dropup_{k}_{e}"), up, RowSense::Le, 0.0, vec![], pk);
                    let mut lo: Vec<(usize, f64)> = drop.iter().map(|&(j, c)| (j, -c)).collect();
                    lo.push((kv, -big_m));
                    self.row(format!("droplo_{k}_{e}"), lo, RowSense::Le, 0.0, vec![], pk);
                }
                None => {
                    for (flow, tag) in [(p[e], "P"), (q[e], "Q")] {
                        self.row(
                            format!("cap{tag}up_{k}_{e}"),
                            vec![(flow, 1.0)],
                            RowSense::Le,
                            big_m,
                            vec![],
                            pk,
                        );
                        self.row(
                            format!("cap{tag}lo_{k}_{e}"),
                            vec![(flow, -1.0)],
                            RowSense::Le,
                            big_m,
                            vec![],
                            pk,
                        );
                    }
                    self.row(format!("drop_{k}_{e}"), drop, RowSense::Eq, 0.0, vec![], pk);
                }
            }
        }

        PeriodVars {
            k,
            is_final,
            line_down,
            repair: vec![None; ne],
            shed,
            served,
            pg,
            qg,
            p,
            q,
            v,
        }
    }

    fn finish(self) -> Stage2Model {
        Stage2Model {
            instance: self.inst,
            tags: self.tags,
            periods: self.periods,
            row_period: self.row_period,
            base_rhs: self.base_rhs,
            alloc_terms: self.alloc_terms,
            big_m: self.big_m,
            horizon: horizon(self.dn),
        }
    }
}

fn check_inputs(dn: &DistributionNetwork, a: &Allocation, s: &Scenario, cfg: &SolveConfig) -> Result<(), Stage2Error> {
    cfg.check()?;
    if a.num_sites() != dn.candidate_sites.len() || (a.num_sites() > 0 && a.num_ders() != dn.ders.len()) {
        return Err(Stage2Error::Allocation(format!(
            "expected {} sites and {} DERs",
            dn.candidate_sites.len(),
            dn.ders.len()
        )));
    }
    if !a.is_feasible(dn.ders.len()) {
        return Err(Stage2Error::Allocation("site/assignment rules violated".into()));
    }
    let rep = validate_scenario(dn, s);
    if !rep.is_ok() {
        return Err(Stage2Error::Scenario(rep.to_string()));
    }
    Ok(())
}

/// Full multi-period Stage II instance over periods `0..=K`.
pub fn build_stage2(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    cfg: &SolveConfig,
) -> Result<Stage2Model, Stage2Error> {
    check_inputs(dn, a, s, cfg)?;
    let kk = horizon(dn);
    let ne = dn.edges.len();
    let mut b = Builder::new(dn, a, cfg);
    for k in 0..=kk {
        let modes: Vec<EdgeMode> = (0..ne)
            .map(|e| {
                if !s.is_failed(e) {
                    EdgeMode::Closed
                } else if k == kk {
                    EdgeMode::Switchable { lower: 0.0, upper: 0.0 }
                } else if k == 0 || dn.is_substation_edge(e) {
                    EdgeMode::Switchable { lower: 1.0, upper: 1.0 }
                } else {
                    EdgeMode::Switchable { lower: 0.0, upper: 1.0 }
                }
            })
            .collect();
        let mut pv = b.period(k, k == kk, &modes);
        if k > 0 {
            for &e in &s.failed {
                let (lo, hi) = if k == kk && dn.is_substation_edge(e) {
                    (1.0, 1.0)
                } else {
                    (0.0, 1.0)
                };
                pv.repair[e] = Some(b.var(
                    VarTag::Repair { k, e },
                    format!("repair_{k}_{e}"),
                    lo,
                    hi,
                    0.0,
                    VarKind::Binary,
                ));
            }
        } else {
            for &e in &s.failed {
                pv.repair[e] = Some(b.var(
                    VarTag::Repair { k, e },
                    format!("repair_{k}_{e}"),
                    0.0,
                    0.0,
                    0.0,
                    VarKind::Binary,
                ));
            }
        }
        b.periods.push(pv);
    }
    // State transitions, crew limit, single repair.
    for k in 1..=kk {
        for &e in &s.failed {
            let prev = b.periods[k - 1].line_down[e].unwrap();
            let cur = b.periods[k].line_down[e].unwrap();
            let y = b.periods[k].repair[e].unwrap();
            b.row(
                format!("trans_{k}_{e}"),
                vec![(prev, 1.0), (y, -1.0), (cur, -1.0)],
                RowSense::Eq,
                0.0,
                vec![],
                None,
            );
        }
        if k < kk && !s.failed.is_empty() {
            let coeffs = s
                .failed
                .iter()
                .map(|&e| (b.periods[k].repair[e].unwrap(), 1.0))
                .collect();
            b.row(
                format!("crew_{k}"),
                coeffs,
                RowSense::Le,
                cfg.crew_capacity as f64,
                vec![],
                None,
            );
        }
    }
    for &e in &s.failed {
        let coeffs = (0..=kk).map(|k| (b.periods[k].repair[e].unwrap(), 1.0)).collect();
        b.row(format!("once_{e}"), coeffs, RowSense::Le, 1.0, vec![], None);
    }
    Ok(b.finish())
}

/// Single-period instance for the greedy heuristic. `prev_down[e]` is the
/// state after period `k - 1`; ignored at `k = 0`, where the scenario
/// itself is the previous state.
pub fn build_period_mip(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    prev_down: &[bool],
    k: usize,
    cfg: &SolveConfig,
) -> Result<Stage2Model, Stage2Error> {
    check_inputs(dn, a, s, cfg)?;
    let kk = horizon(dn);
    let ne = dn.edges.len();
    if prev_down.len() != ne {
        return Err(Stage2Error::Scenario(format!(
            "state has {} entries for {ne} edges",
            prev_down.len()
        )));
    }
    if k > kk {
        return Err(Stage2Error::Scenario(format!("period {k} beyond horizon {kk}")));
    }
    for e in 0..ne {
        if k > 0 && prev_down[e] && !s.is_failed(e) {
            return Err(Stage2Error::Scenario(format!("edge {e} down but never failed")));
        }
    }
    let down: Vec<bool> = if k == 0 {
        (0..ne).map(|e| s.is_failed(e)).collect()
    } else {
        prev_down.to_vec()
    };
    let mut b = Builder::new(dn, a, cfg);
    let modes: Vec<EdgeMode> = (0..ne)
        .map(|e| {
            if !down[e] {
                EdgeMode::Closed
            } else if k == kk {
                EdgeMode::Switchable { lower: 0.0, upper: 0.0 }
            } else if k == 0 || dn.is_substation_edge(e) {
                EdgeMode::Switchable { lower: 1.0, upper: 1.0 }
            } else {
                EdgeMode::Switchable { lower: 0.0, upper: 1.0 }
            }
        })
        .collect();
    let mut pv = b.period(k, k == kk, &modes);
    let mut crew = Vec::new();
    for e in (0..ne).filter(|&e| down[e]) {
        let (lo, hi) = match k {
            0 => (0.0, 0.0),
            _ if k == kk => (1.0, 1.0),
            _ => (0.0, 1.0),
        };
        let y = b.var(
            VarTag::Repair { k, e },
            format!("repair_{k}_{e}"),
            lo,
            hi,
            0.0,
            VarKind::Binary,
        );
        pv.repair[e] = Some(y);
        let kv = pv.line_down[e].unwrap();
        b.row(
            format!("trans_{k}_{e}"),
            vec![(y, 1.0), (kv, 1.0)],
            RowSense::Eq,
            1.0,
            vec![],
            Some(k),
        );
        crew.push((y, 1.0));
    }
    if k > 0 && k < kk && !crew.is_empty() {
        b.row(
            format!("crew_{k}"),
            crew,
            RowSense::Le,
            cfg.crew_capacity as f64,
            vec![],
            Some(k),
        );
    }
    b.periods.push(pv);
    Ok(b.finish())
}

/// Dispatch-only instance for a fixed set of operational edges.
pub fn build_dispatch_mip(
    dn: &DistributionNetwork,
    a: &Allocation,
    down: &[bool],
    k: usize,
    is_final: bool,
    cfg: &SolveConfig,
) -> Stage2Model {
    let mut b = Builder::new(dn, a, cfg);
    let modes: Vec<EdgeMode> = down
        .iter()
        .map(|&d| {
            if d {
                EdgeMode::Switchable { lower: 1.0, upper: 1.0 }
            } else {
                EdgeMode::Closed
            }
        })
        .collect();
    let pv = b.period(k, is_final, &modes);
    b.periods.push(pv);
    b.finish()
}

/// Relaxed single-period instance used for valid lower bounds: every
/// repairable failed line may take any state in `[0, 1]`.
pub fn build_relaxed_period(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    k: usize,
    cfg: &SolveConfig,
) -> Stage2Model {
    let kk = horizon(dn);
    let mut b = Builder::new(dn, a, cfg);
    let modes: Vec<EdgeMode> = (0..dn.edges.len())
        .map(|e| {
            if !s.is_failed(e) || k == kk {
                EdgeMode::Closed
            } else if k == 0 || dn.is_substation_edge(e) {
                EdgeMode::Switchable { lower: 1.0, upper: 1.0 }
            } else {
                EdgeMode::Switchable { lower: 0.0, upper: 1.0 }
            }
        })
        .collect();
    let pv = b.period(k, k == kk, &modes);
    b.periods.push(pv);
    let mut m = b.finish();
    m.instance = m.instance.relaxed();
    m
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DispatchState {
    /// `[site position][der]`.
    pub pg: Vec<Vec<f64>>,
    pub qg: Vec<Vec<f64>>,
    /// Served fraction per node id.
    pub served: Vec<f64>,
    pub shed: Vec<bool>,
    pub pt: Vec<f64>,
    pub qt: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodPlan {
    pub k: usize,
    pub repairs: BTreeSet<usize>,
    /// Per edge, `true` when non-operational.
    pub down: Vec<bool>,
    pub dispatch: DispatchState,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RestorationPlan {
    pub periods: Vec<PeriodPlan>,
}

impl RestorationPlan {
    pub fn period_costs(&self, dn: &DistributionNetwork) -> Vec<f64> {
        self.periods.iter().map(|p| dispatch_cost(dn, &p.dispatch)).collect()
    }

    pub fn total_cost(&self, dn: &DistributionNetwork) -> f64 {
        self.period_costs(dn).iter().sum()
    }
}

/// Period cost recomputed from load states.
pub fn dispatch_cost(dn: &DistributionNetwork, d: &DispatchState) -> f64 {
    dn.load_nodes()
        .map(|i| load_cost(&dn.nodes[i], d.shed[i], d.served[i]))
        .sum()
}

fn snap(name: &str, value: f64, tol: f64) -> Result<bool, Stage2Error> {
    if (value - 1.0).abs() <= tol {
        Ok(true)
    } else if value.abs() <= tol {
        Ok(false)
    } else {
        Err(Stage2Error::NonIntegral {
            name: name.to_string(),
            value,
        })
    }
}

/// Reads a plan out of a solved model, snapping binaries within `tol`.
pub fn extract_plan(
    dn: &DistributionNetwork,
    model: &Stage2Model,
    sol: &MilpSolution,
    tol: f64,
) -> Result<RestorationPlan, Stage2Error> {
    if !sol.has_incumbent() || !matches!(sol.status, MilpStatus::Optimal | MilpStatus::Feasible) {
        return Err(Stage2Error::NoSolution(sol.status));
    }
    let x = &sol.x;
    let inst = &model.instance;
    let n = dn.num_nodes();
    let ne = dn.edges.len();
    let mut periods = Vec::with_capacity(model.periods.len());
    for pv in &model.periods {
        let mut down = vec![false; ne];
        let mut repairs = BTreeSet::new();
        for e in 0..ne {
            if let Some(j) = pv.line_down[e] {
                down[e] = snap(&inst.vars[j].name, x[j], tol)?;
            }
            if let Some(j) = pv.repair[e] {
                if snap(&inst.vars[j].name, x[j], tol)? {
                    repairs.insert(e);
                }
            }
        }
        let mut shed = vec![false; n];
        let mut served = vec![0.0; n];
        for i in 0..n {
            if let Some(j) = pv.shed[i] {
                shed[i] = snap(&inst.vars[j].name, x[j], tol)?;
            }
            if let Some(j) = pv.served[i] {
                served[i] = x[j];
            }
        }
        let pg: Vec<Vec<f64>> = pv.pg.iter().map(|r| r.iter().map(|&j| x[j]).collect()).collect();
        let qg: Vec<Vec<f64>> = pv.qg.iter().map(|r| r.iter().map(|&j| x[j]).collect()).collect();
        let mut pt = vec![0.0; n];
        let mut qt = vec![0.0; n];
        for i in dn.load_nodes() {
            pt[i] = served[i] * dn.nodes[i].pc_max;
            qt[i] = served[i] * dn.nodes[i].qc_max;
        }
        for (u, &node) in dn.candidate_sites.iter().enumerate() {
            pt[node] -= pg[u].iter().sum::<f64>();
            qt[node] -= qg[u].iter().sum::<f64>();
        }
        periods.push(PeriodPlan {
            k: pv.k,
            repairs,
            down,
            dispatch: DispatchState {
                pg,
                qg,
                served,
                shed,
                pt,
                qt,
                p: pv.p.iter().map(|&j| x[j]).collect(),
                q: pv.q.iter().map(|&j| x[j]).collect(),
                v: pv.v.iter().map(|&j| x[j]).collect(),
            },
        });
    }
    Ok(RestorationPlan { periods })
}

/// Re-checks a full plan against the model's constraints, written out from
/// the formulas rather than from the instance matrices. Returns one line
/// per violation.
pub fn check_plan(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    cfg: &SolveConfig,
    plan: &RestorationPlan,
    tol: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    let kk = horizon(dn);
    let ne = dn.edges.len();
    let big_m = cfg.big_m_for(dn);
    if plan.periods.len() != kk + 1 {
        out.push(format!("plan has {} periods, expected {}", plan.periods.len(), kk + 1));
        return out;
    }
    let mut repaired_count = vec![0usize; ne];
    for (k, pp) in plan.periods.iter().enumerate() {
        if pp.k != k {
            out.push(format!("period {k} labelled {}", pp.k));
        }
        for &e in &pp.repairs {
            if !s.is_failed(e) {
                out.push(format!("k{k}: repaired undamaged edge {e}"));
            }
            repaired_count[e] += 1;
        }
        if k == 0 && !pp.repairs.is_empty() {
            out.push("k0: repairs not allowed".into());
        }
        if k > 0 && k < kk && pp.repairs.len() > cfg.crew_capacity {
            out.push(format!("k{k}: {} repairs exceed crew", pp.repairs.len()));
        }
        for e in 0..ne {
            let down = pp.down[e];
            if !s.is_failed(e) && down {
                out.push(format!("k{k}: undamaged edge {e} down"));
            }
            if s.is_failed(e) {
                if k == 0 && !down {
                    out.push(format!("k0: failed edge {e} up"));
                }
                if k < kk && dn.is_substation_edge(e) && !down {
                    out.push(format!("k{k}: substation edge {e} up early"));
                }
                if k > 0 {
                    let prev = plan.periods[k - 1].down[e] as i32;
                    let y = pp.repairs.contains(&e) as i32;
                    if prev - y != down as i32 {
                        out.push(format!("k{k}: state transition broken on edge {e}"));
                    }
                }
            }
        }
        if k == kk {
            for e in dn.substation_edges() {
                if s.is_failed(e) && !pp.repairs.contains(&e) {
                    out.push(format!("kK: substation edge {e} not reconnected"));
                }
            }
        }
        check_dispatch(dn, a, cfg, &pp.dispatch, &pp.down, k, k == kk, big_m, tol, &mut out);
    }
    for e in 0..ne {
        if repaired_count[e] > 1 {
            out.push(format!("edge {e} repaired {} times", repaired_count[e]));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn check_dispatch(
    dn: &DistributionNetwork,
    a: &Allocation,
    cfg: &SolveConfig,
    d: &DispatchState,
    down: &[bool],
    k: usize,
    is_final: bool,
    big_m: f64,
    tol: f64,
    out: &mut Vec<String>,
) {
    let nd = dn.ders.len();
    for (u, &node) in dn.candidate_sites.iter().enumerate() {
        for dd in 0..nd {
            let der = &dn.ders[dd];
            let y = if a.assignment[u][dd] { 1.0 } else { 0.0 };
            let (p, q) = (d.pg[u][dd], d.qg[u][dd]);
            if p < -tol || p > y * der.pg_max + tol {
                out.push(format!("k{k}: DER {dd} at {node} active output {p}"));
            }
            if q.abs() > der.pf_slope() * p + tol {
                out.push(format!("k{k}: DER {dd} at {node} power factor"));
            }
            if let Some(cap) = der.qg_max {
                if q.abs() > cap + tol {
                    out.push(format!("k{k}: DER {dd} at {node} reactive cap"));
                }
            }
            if cfg.droop_enabled && !is_final {
                let gap = (d.v[node] - (der.v_ref - der.droop_coeff * q)).abs();
                if gap > (1.0 - y) * big_m + tol {
                    out.push(format!("k{k}: DER {dd} at {node} droop"));
                }
            }
        }
    }
    for i in dn.load_nodes() {
        let nd_ = &dn.nodes[i];
        let c = if d.shed[i] { 1.0 } else { 0.0 };
        let g = d.served[i];
        if !is_final && (c < nd_.v_load_min - d.v[i] - tol || c < d.v[i] - nd_.v_load_max - tol) {
            out.push(format!(
                "k{k}: node {i} voltage {} outside window while connected",
                d.v[i]
            ));
        }
        if g < (1.0 - c) * nd_.gamma_min - tol || g > 1.0 - c + tol {
            out.push(format!("k{k}: node {i} served fraction {g}"));
        }
        let pt = g * nd_.pc_max - dn.site_position(i).map_or(0.0, |u| d.pg[u].iter().sum());
        let qt = g * nd_.qc_max - dn.site_position(i).map_or(0.0, |u| d.qg[u].iter().sum());
        if (pt - d.pt[i]).abs() > tol || (qt - d.qt[i]).abs() > tol {
            out.push(format!("k{k}: node {i} net injection mismatch"));
        }
    }
    for (e, ed) in dn.edges.iter().enumerate() {
        let mut sp = d.pt[ed.to];
        let mut sq = d.qt[ed.to];
        for (l, el) in dn.edges.iter().enumerate() {
            if el.from == ed.to {
                sp += d.p[l];
                sq += d.q[l];
            }
        }
        if (d.p[e] - sp).abs() > tol || (d.q[e] - sq).abs() > tol {
            out.push(format!("k{k}: flow balance at edge {e}"));
        }
        let kap = if down[e] { 1.0 } else { 0.0 };
        if d.p[e].abs() > (1.0 - kap) * big_m + tol || d.q[e].abs() > (1.0 - kap) * big_m + tol {
            out.push(format!("k{k}: flow on edge {e} exceeds its limit"));
        }
        let gap = (d.v[ed.to] - (d.v[ed.from] - 2.0 * (ed.resistance * d.p[e] + ed.reactance * d.q[e]))).abs();
        if gap > big_m * kap + tol {
            out.push(format!("k{k}: voltage drop on edge {e}"));
        }
    }
    if is_final && (d.v[dn.substation] - dn.nominal_sq_voltage).abs() > tol {
        out.push("kK: substation voltage not nominal".into());
    }
}

/// Writes `inst` in CPLEX LP text format.
pub fn write_lp_format(inst: &MilpInstance) -> String {
    fn name(inst: &MilpInstance, j: usize) -> String {
        let raw = &inst.vars[j].name;
        if raw.is_empty() {
            format!("x{j}")
        } else {
            raw.clone()
        }
    }
    fn terms(inst: &MilpInstance, coeffs: &[(usize, f64)]) -> String {
        if coeffs.is_empty() {
            return "0 dummy".to_string();
        }
        let mut s = String::new();
        for (idx, &(j, c)) in coeffs.iter().enumerate() {
            if idx == 0 {
                let _ = write!(s, "{c} {}", name(inst, j));
            } else if c < 0.0 {
                let _ = write!(s, " - {} {}", -c, name(inst, j));
            } else {
                let _ = write!(s, " + {c} {}", name(inst, j));
            }
        }
        s
    }
    let mut out = String::new();
    let obj: Vec<(usize, f64)> = inst
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.obj != 0.0)
        .map(|(j, v)| (j, v.obj))
        .collect();
    let _ = writeln!(out, "\\ objective constant {}", inst.obj_offset);
    let _ = writeln!(out, "Minimize\n obj: {}", terms(inst, &obj));
    let _ = writeln!(out, "Subject To");
    for (i, r) in inst.rows.iter().enumerate() {
        let op = match r.sense {
            RowSense::Ge => ">=",
            RowSense::Le => "<=",
            RowSense::Eq => "=",
        };
        let label = if r.name.is_empty() {
            format!("r{i}")
        } else {
            r.name.clone()
        };
        let _ = writeln!(out, " {label}: {} {op} {}", terms(inst, &r.coeffs), r.rhs);
    }
    let _ = writeln!(out, "Bounds");
    for (j, v) in inst.vars.iter().enumerate() {
        let lo = if v.lower == f64::NEG_INFINITY {
            "-inf".to_string()
        } else {
            v.lower.to_string()
        };
        let hi = if v.upper == f64::INFINITY {
            "+inf".to_string()
        } else {
            v.upper.to_string()
        };
        let _ = writeln!(out, " {lo} <= {} <= {hi}", name(inst, j));
    }
    let bins: Vec<String> = inst
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(j, _)| name(inst, j))
        .collect();
    if !bins.is_empty() {
        let _ = writeln!(out, "Binaries\n {}", bins.join(" "));
    }
    let gens: Vec<String> = inst
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Integer)
        .map(|(j, _)| name(inst, j))
        .collect();
    if !gens.is_empty() {
        let _ = writeln!(out, "Generals\n {}", gens.join(" "));
    }
    out.push_str("End\n");
    out
}
