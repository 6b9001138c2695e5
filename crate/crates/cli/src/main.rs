use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use ustree_core::ca_doubling::{self, check_preconditions, solve_doubling, DoublingParams};
use ustree_core::ca_general::{ledger_excess, solve_general, DEFAULT_ROUNDS_FACTOR};
use ustree_core::ca_pathwidth::solve_pathwidth;
use ustree_core::ca_tree::{solve_tree, tight_instance, trivial_lower_bound_instance};
use ustree_core::dangling_net::{default_tau, sample_doubling_net, sample_net};
use ustree_core::hierarchy::{build_hierarchy, HierarchyParams, SolverKind};
use ustree_core::instances::{
    gen_er, gen_grid_weighted, gen_partition, gen_path, gen_pathwidth, gen_random_tree, random_portals, within,
};
use ustree_core::rng::derive_seed;
use ustree_core::suite::{run_suite, CRITERIA, SCHEMA};
use ustree_core::ust_eval::{shortest_path_tree, ust_ratio_scan};
use ustree_core::verify::{check_assignment, check_hierarchy, check_net, oracle_min_distortion};
use ustree_core::{ClusterAggInstance, Error, PathDecomposition, WeightedGraph};

#[derive(Parser)]
#[command(name = "ustree", version, about = "Cluster aggregation, dangling nets and sparse partition hierarchies")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of a summary.
    #[arg(long, global = true)]
    json: bool,
    /// Independent seeded runs (terminal sets for ust-scan).
    #[arg(long, global = true, default_value_t = 1)]
    trials: usize,
    /// Include sampled shifts in net and doubling reports.
    #[arg(long, global = true)]
    dump_shifts: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance.
    Gen(GenArgs),
    /// Solve a cluster aggregation instance and check the result.
    Ca {
        solver: SolverArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ROUNDS_FACTOR)]
        rounds_factor: usize,
        /// Doubling dimension bound for the doubling solver.
        #[arg(long, default_value_t = 2.0)]
        ddim: f64,
    },
    /// Sample a dangling net and check it.
    Net {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        delta: f64,
        /// Defaults to log2 n.
        #[arg(long)]
        alpha: Option<f64>,
        /// Defaults to 4 ceil(log2 n).
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value_t = 5)]
        retries: usize,
        /// Greedy net centers instead of every vertex.
        #[arg(long)]
        doubling: bool,
    },
    /// Build a hierarchy and audit every level.
    Hierarchy {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverArg::General)]
        solver: SolverArg,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value_t = 2.0)]
        ddim: f64,
    },
    /// Worst observed ratio of the shortest-path tree as a universal Steiner tree.
    UstScan {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        root: usize,
        #[arg(long, default_value_t = 6)]
        max_terminals: usize,
    },
    /// Exhaustive optimum of a tiny instance.
    Oracle {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the acceptance battery.
    Suite {
        /// Subset of criteria, comma separated.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u32>>,
    },
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum SolverArg {
    General,
    Tree,
    Pathwidth,
    Doubling,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::General => SolverKind::General,
            SolverArg::Tree => SolverKind::Tree,
            SolverArg::Pathwidth => SolverKind::Pathwidth,
            SolverArg::Doubling => SolverKind::Doubling,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Tree,
    Grid,
    Path,
    Er,
    Geometric,
    Pathwidth,
    /// Instance on which the tree solver's detour reaches 4Δ - 2ε.
    Tight,
    /// Instance whose optimum detour is Δ.
    LowerBound,
}

#[derive(Args)]
struct GenArgs {
    kind: GenKind,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Largest integer edge weight for grids.
    #[arg(long, default_value_t = 1)]
    max_weight: u32,
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[arg(long, default_value_t = 1)]
    dims: usize,
    #[arg(long, default_value_t = 2)]
    pw: usize,
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
    #[arg(long, default_value_t = 3)]
    portals: usize,
}

/// Instance file: an instance with a schema tag, or a bare graph.
#[derive(Serialize, Deserialize)]
struct InstanceFile {
    #[serde(default = "schema")]
    schema: u32,
    #[serde(flatten)]
    instance: ClusterAggInstance,
}

#[derive(Deserialize)]
struct GraphFile {
    graph: WeightedGraph,
    #[serde(default, rename = "path_decomposition")]
    decomposition: Option<PathDecomposition>,
}

fn schema() -> u32 {
    SCHEMA
}

/// Bad input or arguments; exits with 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!(Usage(e.to_string()))
}

fn core_err(e: Error) -> anyhow::Error {
    match e {
        Error::InvalidGraph(_)
        | Error::InvalidPartition(_)
        | Error::InvalidInstance(_)
        | Error::InvalidDecomposition(_)
        | Error::Disconnected
        | Error::NotATree
        | Error::NoPortals
        | Error::Parse(_)
        | Error::Json(_) => usage(e),
        e => anyhow!(e),
    }
}

struct Input {
    bytes: Vec<u8>,
    graph: WeightedGraph,
    decomposition: Option<PathDecomposition>,
    instance: Option<ClusterAggInstance>,
}

/// `sha256:` of the input framed like a git blob.
fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

fn read_input(path: &Path) -> anyhow::Result<Input> {
    let bytes = fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| usage(format!("{} is not UTF-8", path.display())))?;
    if !text.trim_start().starts_with('{') {
        let graph = WeightedGraph::from_text(text).map_err(core_err)?;
        return Ok(Input { bytes, graph, decomposition: None, instance: None });
    }
    let value: Value = serde_json::from_str(text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if value.get("partition").is_some() {
        let file: InstanceFile = serde_json::from_value(value).map_err(usage)?;
        let inst = file.instance;
        inst.validate().map_err(core_err)?;
        if let Some(pd) = &inst.decomposition {
            pd.validate(&inst.graph).map_err(core_err)?;
        }
        Ok(Input { bytes, graph: inst.graph.clone(), decomposition: inst.decomposition.clone(), instance: Some(inst) })
    } else {
        let file: GraphFile = serde_json::from_value(value).map_err(usage)?;
        Ok(Input { bytes, graph: file.graph, decomposition: file.decomposition, instance: None })
    }
}

fn need_instance(input: &Input) -> anyhow::Result<&ClusterAggInstance> {
    input.instance.as_ref().ok_or_else(|| usage("input has no partition and portals"))
}

struct Outcome {
    ok: bool,
    report: Value,
    summary: String,
}

fn envelope(command: &str, seed: u64, input: Option<&Input>, body: Value) -> Value {
    let mut m = Map::new();
    m.insert("schema".into(), json!(SCHEMA));
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(seed));
    if let Some(i) = input {
        m.insert("input_sha256".into(), json!(content_hash(&i.bytes)));
    }
    if let Value::Object(b) = body {
        m.extend(b);
    }
    Value::Object(m)
}

fn seeds(cli: &Cli) -> Vec<u64> {
    if cli.trials <= 1 {
        vec![cli.seed]
    } else {
        (0..cli.trials as u64).map(|k| derive_seed(cli.seed, k)).collect()
    }
}

fn gen(cli: &Cli, a: &GenArgs) -> anyhow::Result<Outcome> {
    let s = cli.seed;
    let partitioned = |g: WeightedGraph| -> anyhow::Result<ClusterAggInstance> {
        let part = gen_partition(&g, a.delta, derive_seed(s, 1));
        let portals = random_portals(g.n(), a.portals, derive_seed(s, 2));
        ClusterAggInstance::new(g, part, portals).map_err(core_err)
    };
    let inst = match a.kind {
        GenKind::Tree => partitioned(gen_random_tree(a.n, s))?,
        GenKind::Grid => partitioned(gen_grid_weighted(a.rows, a.cols, a.max_weight.max(1), s))?,
        GenKind::Path => partitioned(gen_path(a.n))?,
        GenKind::Er => partitioned(gen_er(a.n, a.p, s).map_err(core_err)?)?,
        GenKind::Geometric => ca_doubling::geometric_fixture(a.n, a.dims, s).map_err(core_err)?.0,
        GenKind::Pathwidth => {
            let (g, pd) = gen_pathwidth(a.pw, a.n, s);
            partitioned(g)?.with_decomposition(pd)
        }
        GenKind::Tight => tight_instance(a.delta, a.delta / 100.0, 10.0 * a.delta),
        GenKind::LowerBound => trivial_lower_bound_instance(a.delta),
    };
    let summary = format!(
        "{} vertices, {} edges, {} clusters, {} portals, delta {}",
        inst.graph.n(),
        inst.graph.m(),
        inst.partition.len(),
        inst.portals.len(),
        inst.delta()
    );
    let report = serde_json::to_value(InstanceFile { schema: SCHEMA, instance: inst })?;
    Ok(Outcome { ok: true, report, summary })
}

fn ca(cli: &Cli, solver: SolverArg, input: &Input, rounds_factor: usize, ddim: f64) -> anyhow::Result<Outcome> {
    let inst = need_instance(input)?;
    let delta = inst.delta();
    let kappa = inst.partition.len();
    let runs: Vec<anyhow::Result<(u64, bool, f64, Value)>> = seeds(cli)
        .into_par_iter()
        .map(|seed| {
            let (asg, bound, extra) = match solver {
                SolverArg::Tree => {
                    let sol = solve_tree(inst).map_err(core_err)?;
                    (sol.assignment, 4.0 * delta, json!({ "classification": sol.classification }))
                }
                SolverArg::General => {
                    let (asg, stats) = solve_general(inst, seed, rounds_factor).map_err(core_err)?;
                    let excess = ledger_excess(inst, &asg, &stats);
                    let bound = 80.0 * (kappa.max(2) as f64).log2() * delta;
                    (asg, bound, json!({ "stats": stats, "ledger_excess": excess }))
                }
                SolverArg::Pathwidth => {
                    let pd = inst.decomposition.as_ref().ok_or_else(|| usage("instance has no path decomposition"))?;
                    let (asg, audit) = solve_pathwidth(inst, pd).map_err(core_err)?;
                    let bound = 8.0 * (pd.width() + 1) as f64 * delta;
                    let clean = audit.clean();
                    (asg, bound, json!({ "audit": audit, "audit_clean": clean }))
                }
                SolverArg::Doubling => {
                    let params = DoublingParams::new(ddim, delta);
                    check_preconditions(inst, &params).map_err(core_err)?;
                    let run = solve_doubling(inst, &params, seed).map_err(core_err)?;
                    let mut extra = json!({ "log": run.log });
                    if cli.dump_shifts {
                        extra["shifts"] = serde_json::to_value(&run.shifts)?;
                    }
                    (run.assignment, params.detour_bound(), extra)
                }
            };
            let rep = check_assignment(inst, &asg);
            let audit_ok = extra.get("audit_clean").map_or(true, |v| v == &json!(true));
            let ledger_ok = extra.get("ledger_excess").and_then(Value::as_f64).map_or(true, |x| x <= 1e-9);
            let ok = rep.valid && within(rep.max_detour, bound) && audit_ok && ledger_ok;
            let mut body = json!({
                "seed": seed,
                "ok": ok,
                "bound": bound,
                "check": rep,
                "assignment": asg.portal_of_cluster,
            });
            if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
                b.extend(e);
            }
            Ok((seed, ok, rep.max_detour, body))
        })
        .collect();
    let mut runs = runs.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    runs.sort_by_key(|r| r.0);
    let ok = runs.iter().all(|r| r.1);
    let worst = runs.iter().map(|r| r.2).fold(0.0, f64::max);
    let name = solver.to_possible_value().expect("named").get_name().to_string();
    let summary = format!(
        "{name}: {}/{} runs within bound, worst detour {worst} (delta {delta}, realized beta {})",
        runs.iter().filter(|r| r.1).count(),
        runs.len(),
        if delta > 0.0 { format!("{:.4}", worst / delta) } else { "n/a".into() }
    );
    let body = json!({
        "solver": name,
        "delta": delta,
        "clusters": kappa,
        "ok": ok,
        "runs": runs.into_iter().map(|r| r.3).collect::<Vec<_>>(),
    });
    Ok(Outcome { ok, report: envelope("ca", cli.seed, Some(input), body), summary })
}

fn net(
    cli: &Cli,
    input: &Input,
    delta: f64,
    alpha: Option<f64>,
    tau: Option<usize>,
    retries: usize,
    doubling: bool,
) -> anyhow::Result<Outcome> {
    let g = &input.graph;
    let n = g.n();
    let alpha = alpha.unwrap_or_else(|| (n.max(2) as f64).log2());
    let tau = tau.unwrap_or_else(|| default_tau(n));
    let sample = if doubling {
        sample_doubling_net(g, delta, alpha, tau, cli.seed, retries)
    } else {
        sample_net(g, delta, alpha, tau, cli.seed, retries)
    };
    let sample = match sample {
        Ok(s) => s,
        Err(e @ Error::RetriesExhausted { .. }) => {
            let body = json!({ "ok": false, "error": e.to_string() });
            return Ok(Outcome {
                ok: false,
                report: envelope("net", cli.seed, Some(input), body),
                summary: e.to_string(),
            });
        }
        Err(e) => return Err(core_err(e)),
    };
    let rep = check_net(&sample.graph, &sample.net);
    let mut net = serde_json::to_value(&sample.net)?;
    if !cli.dump_shifts {
        net.as_object_mut().expect("object").remove("shifts");
    }
    let summary = format!(
        "{} net vertices, covering radius {} (delta {delta}), sparsity {} (tau {tau}) after {} retries",
        sample.net.len(),
        rep.covering_radius,
        rep.max_count,
        sample.retries
    );
    let body = json!({ "ok": rep.ok, "net": net, "retries": sample.retries, "check": rep });
    Ok(Outcome { ok: rep.ok, report: envelope("net", cli.seed, Some(input), body), summary })
}

#[allow(clippy::too_many_arguments)]
fn hierarchy(
    cli: &Cli,
    input: &Input,
    solver: SolverArg,
    alpha: Option<f64>,
    beta: Option<f64>,
    tau: Option<usize>,
    ddim: f64,
) -> anyhow::Result<Outcome> {
    let g = &input.graph;
    let n = g.n();
    let mut params = match solver {
        SolverArg::General => HierarchyParams::general(n),
        SolverArg::Tree => HierarchyParams::tree(n),
        SolverArg::Pathwidth => {
            let pd = input.decomposition.as_ref().ok_or_else(|| usage("input has no path decomposition"))?;
            HierarchyParams::pathwidth(n, pd.width())
        }
        SolverArg::Doubling => HierarchyParams::doubling(n, ddim),
    };
    if alpha.is_some() || beta.is_some() {
        if solver == SolverArg::Doubling {
            return Err(usage("--alpha and --beta are derived from --ddim in doubling mode"));
        }
        params = HierarchyParams::new(
            alpha.unwrap_or(params.alpha),
            beta.unwrap_or(params.beta),
            params.tau_target,
            solver.into(),
        );
    }
    if let Some(t) = tau {
        params.tau_target = t;
    }
    let h = build_hierarchy(g, &params, input.decomposition.as_ref(), cli.seed).map_err(core_err)?;
    let rep = check_hierarchy(g, &h);
    let sizes: Vec<usize> = h.levels.iter().map(|l| l.clusters.len()).collect();
    let summary = format!(
        "gamma {:.1}, {} levels with {:?} clusters, checks {}",
        params.gamma,
        h.levels.len(),
        sizes,
        if rep.ok { "pass" } else { "fail" }
    );
    let mut body = serde_json::to_value(&h)?;
    body["ok"] = json!(rep.ok);
    body["check"] = serde_json::to_value(&rep)?;
    Ok(Outcome { ok: rep.ok, report: envelope("hierarchy", cli.seed, Some(input), body), summary })
}

fn ust_scan(cli: &Cli, input: &Input, root: usize, max_terminals: usize) -> anyhow::Result<Outcome> {
    let g = &input.graph;
    if root >= g.n() {
        return Err(usage(format!("root {root} outside graph")));
    }
    let t = shortest_path_tree(g, root).map_err(core_err)?;
    let scan = ust_ratio_scan(g, &t, cli.trials.max(1), max_terminals, cli.seed).map_err(core_err)?;
    let ok = scan.worst_ratio >= 1.0 - 1e-9;
    let summary = format!(
        "worst ratio {:.4} over {} terminal sets (witness {:?}, exact {})",
        scan.worst_ratio, scan.trials, scan.witness, scan.exact_used
    );
    let body = json!({ "ok": ok, "tree_weight": t.total_weight(), "scan": scan });
    Ok(Outcome { ok, report: envelope("ust-scan", cli.seed, Some(input), body), summary })
}

fn oracle(cli: &Cli, input: &Input) -> anyhow::Result<Outcome> {
    let inst = need_instance(input)?;
    let r = oracle_min_distortion(inst).map_err(|e| match e {
        Error::SearchBudget(_) => usage(e),
        e => core_err(e),
    })?;
    let summary = format!("optimum {} ({} assignments, {} feasible)", r.optimum, r.explored, r.feasible);
    let body = json!({ "ok": true, "oracle": r });
    Ok(Outcome { ok: true, report: envelope("oracle", cli.seed, Some(input), body), summary })
}

fn suite(cli: &Cli, criteria: &Option<Vec<u32>>) -> anyhow::Result<Outcome> {
    let ids = criteria.clone().unwrap_or_else(|| CRITERIA.to_vec());
    if let Some(bad) = ids.iter().find(|id| !CRITERIA.contains(id)) {
        return Err(usage(format!("no criterion {bad}")));
    }
    let rep = run_suite(cli.seed, &ids);
    let summary = rep.table().trim_end().to_string();
    let ok = rep.passed;
    let body = serde_json::to_value(&rep)?;
    Ok(Outcome { ok, report: envelope("suite", cli.seed, None, body), summary })
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    match &cli.cmd {
        Cmd::Gen(a) => gen(cli, a),
        Cmd::Ca { solver, input, rounds_factor, ddim } => ca(cli, *solver, &read_input(input)?, *rounds_factor, *ddim),
        Cmd::Net { input, delta, alpha, tau, retries, doubling } => {
            net(cli, &read_input(input)?, *delta, *alpha, *tau, *retries, *doubling)
        }
        Cmd::Hierarchy { input, solver, alpha, beta, tau, ddim } => {
            hierarchy(cli, &read_input(input)?, *solver, *alpha, *beta, *tau, *ddim)
        }
        Cmd::UstScan { input, root, max_terminals } => ust_scan(cli, &read_input(input)?, *root, *max_terminals),
        Cmd::Oracle { input } => oracle(cli, &read_input(input)?),
        Cmd::Suite { criteria } => suite(cli, criteria),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out.report).expect("json") + "\n";
            if let Some(path) = &cli.out {
                if let Err(e) = fs::write(path, &text).with_context(|| format!("writing {}", path.display())) {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(2);
                }
            }
            if cli.json {
                print!("{text}");
            } else if !(matches!(cli.cmd, Cmd::Gen(_)) && cli.out.is_none()) {
                println!("{}", out.summary);
            } else {
                print!("{text}");
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
