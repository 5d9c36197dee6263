use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use resalloc_core::lbd::{
    baseline_bora, baseline_sa, baseline_se, evaluate_allocation, normalized_weights, write_trace_jsonl, Evaluation,
    LbdError,
};
use resalloc_core::metrics::{
    emit_report, system_performance, write_csv, write_text, MethodSummary, ReportError, PERIOD_COST_HEADER,
};
use resalloc_core::network::InputError;
use resalloc_core::stage2::Stage2Error;
use resalloc_core::{
    greedy_stage2, load_network, run_lbd, sample_scenarios, solve_stage2, Allocation, CutKind, DistributionNetwork,
    LbdOptions, NetworkInput, Scenario, SolveConfig, Stage2Engine,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("output error: {0}")]
    Output(String),
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Output(e.to_string())
    }
}

fn is_input_problem(e: &Stage2Error) -> bool {
    match e {
        Stage2Error::Config(_) | Stage2Error::Allocation(_) | Stage2Error::Scenario(_) => true,
        Stage2Error::Period { source, .. } => is_input_problem(source),
        _ => false,
    }
}

impl From<LbdError> for CliError {
    fn from(e: LbdError) -> Self {
        let input = match &e {
            LbdError::NoScenarios | LbdError::BadWeights | LbdError::Budget { .. } => true,
            LbdError::Stage2(s) | LbdError::Subproblem { source: s, .. } => is_input_problem(s),
            LbdError::Master(_) | LbdError::FixedLp { .. } => false,
        };
        if input {
            CliError::Input(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "resalloc",
    version,
    about = "DER allocation and repair scheduling for radial distribution networks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize the allocation with the Benders loop over the scenario set.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = CutArg::Sound)]
        cut: CutArg,
        /// Search only these named allocations (comma-separated).
        #[arg(long, value_delimiter = ',')]
        restrict: Vec<String>,
    },
    /// Solve the repair and dispatch problem for fixed allocations.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        pick: PickArgs,
    },
    /// Compare the Benders solution with enumeration, random sampling, and
    /// spread placement.
    Baselines {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = CutArg::Sound)]
        cut: CutArg,
        /// Allocations drawn by the random-sampling baseline.
        #[arg(long, default_value_t = 10)]
        bora_samples: usize,
    },
    /// Greedy versus optimal period costs for fixed allocations.
    Greedy {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        pick: PickArgs,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Network description (JSON).
    #[arg(long)]
    network: PathBuf,
    /// Maximum number of DERs to place; defaults to all of them.
    #[arg(long)]
    budget: Option<usize>,
    /// Lines repairable per period.
    #[arg(long, default_value_t = 1)]
    crew: usize,
    /// Number of sampled scenarios; only when the file lists none.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable droop control of the DERs.
    #[arg(long)]
    no_droop: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = EngineArg::BnbGreedy)]
    engine: EngineArg,
    #[arg(long)]
    lp_tolerance: Option<f64>,
    #[arg(long)]
    mip_gap: Option<f64>,
    /// Relative improvement margin for Benders cuts.
    #[arg(long)]
    epsilon_cut: Option<f64>,
}

#[derive(Debug, Args)]
struct PickArgs {
    /// Named allocation from the network file; repeatable. All named
    /// allocations are used when neither this nor `--assign` is given.
    #[arg(long = "allocation")]
    names: Vec<String>,
    /// Explicit allocation as comma-separated `der@node` pairs.
    #[arg(long, conflicts_with = "names")]
    assign: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    /// Branch-and-bound on the whole horizon.
    Bnb,
    /// Branch-and-bound with the greedy value as an upper bound.
    BnbGreedy,
    /// Dynamic program over repaired-line sets.
    Dp,
}

impl EngineArg {
    fn engine(self) -> Stage2Engine {
        match self {
            EngineArg::Bnb => Stage2Engine::BranchAndBound { greedy_bound: false },
            EngineArg::BnbGreedy => Stage2Engine::BranchAndBound { greedy_bound: true },
            EngineArg::Dp => Stage2Engine::RepairDp,
        }
    }

    fn label(self) -> &'static str {
        match self {
            EngineArg::Bnb => "bnb",
            EngineArg::BnbGreedy => "bnb-greedy",
            EngineArg::Dp => "dp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CutArg {
    /// LP bound lifted by a Hamming term; keeps every better allocation.
    Sound,
    /// Fixed-discrete LP duals; can cut off better allocations.
    Printed,
}

impl CutArg {
    fn label(self) -> &'static str {
        match self {
            CutArg::Sound => "sound",
            CutArg::Printed => "printed",
        }
    }

    fn kind(self) -> CutKind {
        match self {
            CutArg::Sound => CutKind::Sound,
            CutArg::Printed => CutKind::Printed,
        }
    }
}

impl PickArgs {
    fn echo(&self) -> Vec<String> {
        match &self.assign {
            Some(text) => vec![format!("allocation: custom = {text}")],
            None if self.names.is_empty() => vec!["allocation: all named".into()],
            None => vec![format!("allocation: {}", self.names.join(","))],
        }
    }
}

/// Everything a command needs after input checks.
struct Setup {
    input: NetworkInput,
    scenarios: Vec<Scenario>,
    budget: usize,
    cfg: SolveConfig,
    engine: Stage2Engine,
    manifest: Vec<String>,
    seed: u64,
    out: PathBuf,
}

impl Setup {
    fn dn(&self) -> &DistributionNetwork {
        &self.input.network
    }
}

fn prepare(command: &str, run: &RunArgs, extra: Vec<String>) -> Result<Setup, CliError> {
    let input = load_network(&run.network)?;
    let dn = &input.network;
    let defaults = SolveConfig::default();
    let cfg = SolveConfig {
        crew_capacity: run.crew,
        droop_enabled: !run.no_droop,
        lp_tolerance: run.lp_tolerance.unwrap_or(defaults.lp_tolerance),
        mip_gap: run.mip_gap.unwrap_or(defaults.mip_gap),
        epsilon_cut: run.epsilon_cut.unwrap_or(defaults.epsilon_cut),
        ..defaults
    };
    cfg.check().map_err(|e| CliError::Input(e.to_string()))?;
    let budget = run.budget.unwrap_or(dn.ders.len());
    if budget > dn.ders.len() {
        return Err(CliError::Input(format!(
            "budget {budget} exceeds the {} DERs in the network",
            dn.ders.len()
        )));
    }
    let (scenarios, origin) = match (&input.scenarios, run.samples) {
        (Some(_), Some(_)) => {
            return Err(CliError::Input(
                "the network file lists scenarios; --samples must not be given".into(),
            ))
        }
        (Some(list), None) => (list.clone(), "explicit"),
        (None, Some(0)) => return Err(CliError::Input("--samples must be at least 1".into())),
        (None, Some(n)) => {
            let probs = input
                .line_fail_probs
                .as_ref()
                .ok_or_else(|| CliError::Input("sampling needs `line_fail_probs` in the network file".into()))?;
            (sample_scenarios(dn, probs, n, run.seed), "sampled")
        }
        (None, None) => {
            return Err(CliError::Input(
                "the network file lists no scenarios; pass --samples".into(),
            ))
        }
    };
    if scenarios.is_empty() {
        return Err(CliError::Input("scenario set is empty".into()));
    }
    let mut manifest = vec![
        format!("resalloc {}", env!("CARGO_PKG_VERSION")),
        format!("command: {command}"),
        format!("network: {}", run.network.display()),
        format!("budget: {budget}"),
        format!("crew: {}", cfg.crew_capacity),
        format!("scenarios: {} {origin}", scenarios.len()),
        format!("seed: {}", run.seed),
        format!("droop: {}", if cfg.droop_enabled { "on" } else { "off" }),
        format!("engine: {}", run.engine.label()),
        format!(
            "tolerances: lp {} mip_gap {} epsilon_cut {}",
            cfg.lp_tolerance, cfg.mip_gap, cfg.epsilon_cut
        ),
    ];
    manifest.extend(extra);
    manifest.push(format!("out: {}", run.out.display()));
    fs::create_dir_all(&run.out).map_err(|e| CliError::Output(format!("{}: {e}", run.out.display())))?;
    Ok(Setup {
        input,
        scenarios,
        budget,
        cfg,
        engine: run.engine.engine(),
        manifest,
        seed: run.seed,
        out: run.out.clone(),
    })
}

/// Parses `der@node,der@node`.
fn parse_assign(dn: &DistributionNetwork, text: &str) -> Result<Allocation, CliError> {
    let mut pairs = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (der, node) = part
            .rsplit_once('@')
            .ok_or_else(|| CliError::Input(format!("`{part}` is not of the form der@node")))?;
        let node: usize = node
            .parse()
            .map_err(|_| CliError::Input(format!("`{node}` in `{part}` is not a node id")))?;
        pairs.push((node, der));
    }
    let a = Allocation::from_named(dn, &pairs)?;
    if pairs.len() != a.num_assigned() {
        return Err(CliError::Input(format!("`{text}` lists a DER twice")));
    }
    Ok(a)
}

fn pick_allocations(setup: &Setup, pick: &PickArgs) -> Result<Vec<(String, Allocation)>, CliError> {
    let dn = setup.dn();
    let chosen = if let Some(text) = &pick.assign {
        vec![("custom".to_string(), parse_assign(dn, text)?)]
    } else if pick.names.is_empty() {
        if setup.input.allocations.is_empty() {
            return Err(CliError::Input(
                "the network file names no allocations; pass --allocation or --assign".into(),
            ));
        }
        setup.input.allocations.clone()
    } else {
        pick.names
            .iter()
            .map(|n| {
                setup
                    .input
                    .allocation(n)
                    .map(|a| (n.clone(), a.clone()))
                    .ok_or_else(|| CliError::Input(format!("no allocation named `{n}` in the network file")))
            })
            .collect::<Result<_, _>>()?
    };
    for (name, a) in &chosen {
        if !a.is_feasible(setup.budget) {
            return Err(CliError::Input(format!(
                "allocation {name} ({}) is not feasible under budget {}",
                a.describe(dn),
                setup.budget
            )));
        }
    }
    Ok(chosen)
}

fn summarize(dn: &DistributionNetwork, method: &str, e: &Evaluation) -> MethodSummary {
    MethodSummary {
        method: method.to_string(),
        allocation: e.allocation.describe(dn),
        first_stage: e.first_stage,
        expected_second_stage: e.objective - e.first_stage,
        total: e.objective,
        series: system_performance(dn, &e.period_costs),
    }
}

fn period_cost_rows(label: &str, scenarios: &[Scenario], costs: &[Vec<f64>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (s, cs) in scenarios.iter().zip(costs) {
        for (k, c) in cs.iter().enumerate() {
            rows.push(vec![label.to_string(), s.name.clone(), k.to_string(), format!("{c}")]);
        }
    }
    rows
}

fn finish(setup: &Setup, methods: &[MethodSummary], mut files: Vec<PathBuf>) -> Result<(), CliError> {
    files.extend(emit_report(&setup.out, &setup.manifest, methods)?);
    print!("{}", resalloc_core::metrics::summary_table(&setup.manifest, methods));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn manifest_json(manifest: &[String]) -> String {
    serde_json::json!({ "manifest": manifest }).to_string()
}

fn cmd_solve(setup: &Setup, cut: CutArg, restrict: &[String]) -> Result<(), CliError> {
    let dn = setup.dn();
    let allowed: Option<Vec<Allocation>> = if restrict.is_empty() {
        None
    } else {
        Some(
            restrict
                .iter()
                .map(|n| {
                    setup
                        .input
                        .allocation(n)
                        .cloned()
                        .ok_or_else(|| CliError::Input(format!("no allocation named `{n}` in the network file")))
                })
                .collect::<Result<_, _>>()?,
        )
    };
    let opts = LbdOptions {
        engine: setup.engine,
        cut: cut.kind(),
        ..LbdOptions::default()
    };
    let res = run_lbd(
        dn,
        &setup.scenarios,
        setup.budget,
        &setup.cfg,
        &opts,
        allowed.as_deref(),
    )?;
    let best = res.best_evaluation();

    let trace_path = setup.out.join("trace.jsonl");
    let mut buf = manifest_json(&setup.manifest).into_bytes();
    buf.push(b'\n');
    write_trace_jsonl(&res.trace, &mut buf).map_err(|e| CliError::Output(e.to_string()))?;
    write_text(&trace_path, &String::from_utf8_lossy(&buf))?;

    let solution_path = setup.out.join("solution.json");
    let solution = serde_json::json!({
        "manifest": setup.manifest,
        "allocation": res.best.describe(dn),
        "vector": res.best.to_vector().iter().map(|&b| b as u8).collect::<Vec<_>>(),
        "objective": res.objective,
        "first_stage": best.first_stage,
        "second_stage": setup.scenarios.iter().zip(&best.second_stage)
            .map(|(s, v)| serde_json::json!({ "scenario": s.name, "cost": v }))
            .collect::<Vec<_>>(),
        "iterations": res.trace.len(),
    });
    let text = serde_json::to_string_pretty(&solution).map_err(|e| CliError::Output(e.to_string()))?;
    write_text(&solution_path, &(text + "\n"))?;

    let costs_path = setup.out.join("period_costs.csv");
    let rows = period_cost_rows(&res.best.describe(dn), &setup.scenarios, &best.period_costs);
    write_csv(&costs_path, &setup.manifest, &PERIOD_COST_HEADER, &rows)?;

    finish(
        setup,
        &[summarize(dn, "LBD", best)],
        vec![solution_path, trace_path, costs_path],
    )
}

fn cmd_evaluate(setup: &Setup, pick: &PickArgs) -> Result<(), CliError> {
    let dn = setup.dn();
    let chosen = pick_allocations(setup, pick)?;
    let mut methods = Vec::new();
    let mut rows = Vec::new();
    for (name, a) in &chosen {
        let e = evaluate_allocation(dn, a, &setup.scenarios, &setup.cfg, setup.engine)?;
        rows.extend(period_cost_rows(name, &setup.scenarios, &e.period_costs));
        methods.push(summarize(dn, name, &e));
    }
    let costs_path = setup.out.join("period_costs.csv");
    write_csv(&costs_path, &setup.manifest, &PERIOD_COST_HEADER, &rows)?;
    finish(setup, &methods, vec![costs_path])
}

fn cmd_baselines(setup: &Setup, cut: CutArg, bora_samples: usize) -> Result<(), CliError> {
    if bora_samples == 0 {
        return Err(CliError::Input("--bora-samples must be at least 1".into()));
    }
    let dn = setup.dn();
    let (sc, b, cfg, eng) = (&setup.scenarios, setup.budget, &setup.cfg, setup.engine);
    let opts = LbdOptions {
        engine: eng,
        cut: cut.kind(),
        ..LbdOptions::default()
    };
    let lbd = run_lbd(dn, sc, b, cfg, &opts, None)?;
    let (se, _) = baseline_se(dn, sc, b, cfg, eng, None)?;
    let bora = baseline_bora(dn, sc, b, cfg, eng, bora_samples, setup.seed)?;
    let sa = baseline_sa(dn, sc, b, cfg, eng)?;
    let methods = vec![
        summarize(dn, "LBD", lbd.best_evaluation()),
        summarize(dn, "SE", &se),
        summarize(dn, "BoRA", &bora),
        summarize(dn, "SA", &sa),
    ];
    finish(setup, &methods, Vec::new())
}

fn cmd_greedy(setup: &Setup, pick: &PickArgs) -> Result<(), CliError> {
    let dn = setup.dn();
    let chosen = pick_allocations(setup, pick)?;
    let weights = normalized_weights(&setup.scenarios)?;
    let mut rows = Vec::new();
    let mut methods = Vec::new();
    let mut table = String::new();
    table.push_str(&format!(
        "{:<12}  {:<10}  {:>14}  {:>14}  {:>14}\n",
        "allocation", "scenario", "greedy", "optimal", "gap"
    ));
    for (name, a) in &chosen {
        let mut greedy_costs = Vec::new();
        let mut optimal_costs = Vec::new();
        for s in &setup.scenarios {
            let fail = |source: Stage2Error| {
                CliError::from(LbdError::Subproblem {
                    allocation: a.describe(dn),
                    scenario: s.name.clone(),
                    source,
                })
            };
            let g = greedy_stage2(dn, a, s, &setup.cfg).map_err(fail)?;
            let opt = solve_stage2(dn, a, s, &setup.cfg, setup.engine).map_err(fail)?;
            let gc = g.plan.period_costs(dn);
            for (k, (x, y)) in gc.iter().zip(&opt.period_costs).enumerate() {
                rows.push(vec![
                    name.clone(),
                    s.name.clone(),
                    k.to_string(),
                    format!("{x}"),
                    format!("{y}"),
                ]);
            }
            table.push_str(&format!(
                "{:<12}  {:<10}  {:>14.6}  {:>14.6}  {:>14.6}\n",
                name,
                s.name,
                g.total,
                opt.value,
                g.total - opt.value
            ));
            greedy_costs.push(gc);
            optimal_costs.push(opt.period_costs);
        }
        for (label, costs) in [("optimal", optimal_costs), ("greedy", greedy_costs)] {
            let first_stage = dn.site_cost(a);
            let expected: f64 = costs.iter().zip(&weights).map(|(c, w)| w * c.iter().sum::<f64>()).sum();
            methods.push(MethodSummary {
                method: format!("{name} {label}"),
                allocation: a.describe(dn),
                first_stage,
                expected_second_stage: expected,
                total: first_stage + expected,
                series: system_performance(dn, &costs),
            });
        }
    }
    let csv_path = setup.out.join("greedy.csv");
    write_csv(
        &csv_path,
        &setup.manifest,
        &["allocation", "scenario", "period", "greedy_cost", "optimal_cost"],
        &rows,
    )?;
    let gap_path = setup.out.join("greedy_gap.txt");
    let echo: String = setup.manifest.iter().map(|l| format!("# {l}\n")).collect();
    write_text(&gap_path, &(echo + &table))?;
    print!("{table}");
    finish(setup, &methods, vec![csv_path, gap_path])
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let result = match &cli.command {
        Command::Solve { run, cut, restrict } => {
            let mut extra = vec![format!("cut: {}", cut.label())];
            if !restrict.is_empty() {
                extra.push(format!("restrict: {}", restrict.join(",")));
            }
            cmd_solve(&prepare("solve", run, extra)?, *cut, restrict)
        }
        Command::Evaluate { run, pick } => cmd_evaluate(&prepare("evaluate", run, pick.echo())?, pick),
        Command::Baselines { run, cut, bora_samples } => {
            let extra = vec![format!("cut: {}", cut.label()), format!("bora_samples: {bora_samples}")];
            cmd_baselines(&prepare("baselines", run, extra)?, *cut, *bora_samples)
        }
        Command::Greedy { run, pick } => cmd_greedy(&prepare("greedy", run, pick.echo())?, pick),
    };
    eprintln!("elapsed {:.3} s", started.elapsed().as_secs_f64());
    result
}
