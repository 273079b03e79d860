mod input;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use kan_verify::bench::{benchmarks, load_benchmark_models, rows_to_csv, run_benchmark, write_benchmark_models, RADII};
use kan_verify::knapsack::Allocation;
use kan_verify::milp::{read_solution, write_lp};
use kan_verify::milp::{BigMRule, Direction, Encoding};
use kan_verify::model_io::read_model_file;
use kan_verify::pwa::TradeoffCache;
use kan_verify::solver::SolveStatus;
use kan_verify::verify::{
    empirical_range, AllocationMode, RangeResult, SensitivityResult, Verifier, VerifyConfig, DEFAULT_SAMPLES,
    DEFAULT_SEED,
};
use kan_verify::{Error, InputBox, KanNetwork};
use serde::Serialize;
use serde_json::json;

const EXIT_INCOMPLETE: u8 = 2;
const EXIT_INFEASIBLE_BUDGET: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::BudgetInfeasible { .. } | Error::KnapsackInfeasible { .. }) => {
                EXIT_INFEASIBLE_BUDGET
            }
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "kan-verify", version, about = "Range verification for Kolmogorov-Arnold networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-unit trade-off tables and report the error of each piece budget.
    Approximate(ApproximateArgs),
    /// Choose piece counts for every unit under an error budget.
    Allocate(AllocateArgs),
    /// Encode the abstracted network as a MILP and write it in LP format.
    Encode(EncodeArgs),
    /// Compute a verified output range over an input box.
    Verify(VerifyArgs),
    /// Bound the output change caused by perturbing one input feature.
    Sensitivity(SensitivityArgs),
    /// Run the bundled benchmarks, optimized against uniform allocation.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Network in `.kan.json` format.
    #[arg(long)]
    model: PathBuf,
    /// Grid intervals per unit domain.
    #[arg(long)]
    intervals: Option<usize>,
    /// Largest piece budget per unit.
    #[arg(long)]
    max_pieces: Option<usize>,
    /// Directory for reports and cached tables.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct BudgetArgs {
    /// Global error budget; defaults to a multiple of the smallest achievable bound.
    #[arg(long)]
    delta: Option<f64>,
    /// Use this many pieces for every unit instead of optimizing.
    #[arg(long)]
    pieces: Option<usize>,
    /// Output to allocate for.
    #[arg(long, default_value_t = 0)]
    output_index: usize,
}

#[derive(Args, Clone)]
struct BoxArgs {
    /// Input box as JSON (`{"lower":[..],"upper":[..]}` or `[[lo,hi],..]`) or a path to such a file.
    #[arg(long = "box")]
    input_box: Option<String>,
    /// Use the box of this half-width around the origin.
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long)]
    mip_gap: Option<f64>,
    /// Seconds per solve.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    /// Largest number of unfixed binaries the built-in solver accepts.
    #[arg(long)]
    binary_cap: Option<usize>,
    /// Derived big-M constants (the default).
    #[arg(long, conflicts_with = "paper_m")]
    tight_m: bool,
    /// Use `2 M_y` on output big-M rows. Not guaranteed sound.
    #[arg(long)]
    paper_m: bool,
}

#[derive(Args)]
struct ApproximateArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct AllocateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    bounds: BoxArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// LP file for the maximization model; the minimization model goes next to it as `<stem>.min.<ext>`.
    #[arg(long)]
    emit_lp: Option<PathBuf>,
    /// Check a `<name> <value>` solution file against the maximization model.
    #[arg(long)]
    ingest_solution: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    bounds: BoxArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the encoded models in LP format.
    #[arg(long)]
    emit_lp: Option<PathBuf>,
    /// Samples for the empirical range (0 skips it).
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    bounds: BoxArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Perturbation applied to one feature.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Feature to perturb; every feature when omitted.
    #[arg(long)]
    feature: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of `<name>.kan.json` benchmark models; the built-in ones when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for `bench.csv`, `bench.json` and the benchmark models.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Radii to run; defaults to the standard sweep.
    #[arg(long, value_delimiter = ',')]
    radius: Option<Vec<f64>>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Approximate(a) => approximate(a),
        Command::Allocate(a) => allocate(a),
        Command::Encode(a) => encode(a),
        Command::Verify(a) => verify(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Bench(a) => bench(a),
    }
}

fn config_for(net: &KanNetwork, model: &ModelArgs, solver: Option<&SolverArgs>) -> VerifyConfig {
    let mut config = VerifyConfig::for_network(net);
    if let Some(i) = model.intervals {
        config.intervals = i;
    }
    if let Some(p) = model.max_pieces {
        config.max_pieces = p;
    }
    if let Some(s) = solver {
        apply_solver_args(&mut config, s);
    }
    config
}

fn apply_solver_args(config: &mut VerifyConfig, s: &SolverArgs) {
    if let Some(g) = s.mip_gap {
        config.solve.mip_gap = g;
    }
    if let Some(t) = s.timeout {
        config.solve.timeout = Duration::from_secs_f64(t);
    }
    if s.node_limit.is_some() {
        config.solve.node_limit = s.node_limit;
    }
    if let Some(c) = s.binary_cap {
        config.solve.binary_cap = c;
    }
    if s.paper_m {
        config.encode.big_m = BigMRule::Paper;
    }
}

fn load(model: &ModelArgs) -> Result<KanNetwork, CliError> {
    Ok(read_model_file(&model.model)?)
}

fn cache_path(model: &ModelArgs) -> Option<PathBuf> {
    model.output.as_ref().map(|d| d.join("tradeoff.json"))
}

/// Builds the verifier, reusing tables cached under `--output`.
fn verifier<'a>(net: &'a KanNetwork, model: &ModelArgs, config: VerifyConfig) -> Result<Verifier<'a>, CliError> {
    match cache_path(model) {
        Some(path) => {
            ensure_dir(model.output.as_deref())?;
            let mut cache = TradeoffCache::load_or_default(&path)?;
            let v = Verifier::with_cache(net, config, &mut cache)?;
            cache.save(&path)?;
            Ok(v)
        }
        None => Ok(Verifier::new(net, config)?),
    }
}

fn ensure_dir(dir: Option<&Path>) -> Result<(), CliError> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|source| CliError::Write {
            path: d.to_owned(),
            source,
        })?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

/// Prints `report` as JSON and writes it to `<output>/<name>` when an output directory is set.
fn emit(report: &impl Serialize, output: Option<&Path>, name: &str) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).map_err(Error::from)?;
    println!("{text}");
    if let Some(dir) = output {
        ensure_dir(Some(dir))?;
        write_file(&dir.join(name), text)?;
    }
    Ok(())
}

fn resolve_allocation(v: &Verifier, budget: &BudgetArgs) -> Result<(f64, Allocation), CliError> {
    let delta = match budget.delta {
        Some(d) => d,
        None => v.default_delta(budget.output_index)?,
    };
    let mode = match budget.pieces {
        Some(p) => AllocationMode::Uniform(p),
        None => v.config().allocation,
    };
    Ok((delta, v.allocate_with(budget.output_index, delta, mode)?))
}

fn approximate(a: ApproximateArgs) -> Result<u8, CliError> {
    let net = load(&a.model)?;
    let v = verifier(&net, &a.model, config_for(&net, &a.model, None))?;
    let units: Vec<_> = v
        .tables()
        .iter()
        .map(|(id, t)| {
            json!({
                "unit": id.key(),
                "limit": t.grid.limit(),
                "intervals": t.grid.intervals(),
                "lipschitz": t.unit_slope,
                "errors": t.entries.iter().map(|e| json!({
                    "budget": e.budget,
                    "pieces": e.pieces(),
                    "discrete_error": e.discrete_error,
                    "corrected_error": e.corrected_error,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let min_achievable: Vec<f64> = (0..net.output_dim())
        .map(|o| v.min_achievable(o))
        .collect::<Result<_, _>>()?;
    let report = json!({
        "units": units,
        "min_achievable": min_achievable,
        "abstraction_seconds": v.abstraction_time().as_secs_f64(),
    });
    emit(&report, a.model.output.as_deref(), "approximation.json")?;
    Ok(0)
}

fn allocate(a: AllocateArgs) -> Result<u8, CliError> {
    let net = load(&a.model)?;
    let v = verifier(&net, &a.model, config_for(&net, &a.model, None))?;
    let (_, allocation) = resolve_allocation(&v, &a.budget)?;
    emit(&allocation, a.model.output.as_deref(), "allocation.json")?;
    Ok(0)
}

fn write_lp_pair(enc: &Encoding, output: usize, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(Some(dir))?;
    }
    write_file(path, write_lp(&enc.objective_for(output, Direction::Maximize)?))?;
    let min_path = input::min_lp_path(path);
    write_file(&min_path, write_lp(&enc.objective_for(output, Direction::Minimize)?))?;
    eprintln!("wrote {} and {}", path.display(), min_path.display());
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<u8, CliError> {
    let net = load(&a.model)?;
    let v = verifier(&net, &a.model, config_for(&net, &a.model, Some(&a.solver)))?;
    let input_box = input::resolve_box(a.bounds.input_box.as_deref(), a.bounds.radius, net.input_dim())?;
    let (delta, allocation) = resolve_allocation(&v, &a.budget)?;
    let output = a.budget.output_index;
    let enc = v.encode(&input_box, output, &allocation)?;
    if let Some(path) = &a.emit_lp {
        write_lp_pair(&enc, output, path)?;
    }
    let mut report = json!({
        "output": output,
        "delta": delta,
        "delta_total": allocation.global_bound,
        "total_pieces": allocation.total_pieces,
        "variables": enc.model.variables.len(),
        "constraints": enc.model.constraints.len(),
        "binaries": enc.model.num_binaries(),
        "free_binaries": enc.model.num_free_binaries(),
        "big_m": enc.rule.as_str(),
    });
    if let Some(path) = &a.ingest_solution {
        report["solution"] = ingest(&net, &enc, output, path)?;
    }
    emit(&report, a.model.output.as_deref(), "encoding.json")?;
    Ok(0)
}

/// Checks an external solution against the maximization model and replays
/// its input point through the network.
fn ingest(net: &KanNetwork, enc: &Encoding, output: usize, path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read solution file {}: {e}", path.display())))?;
    let model = enc.objective_for(output, Direction::Maximize)?;
    let x = model.assignment_from(&read_solution(&text)?)?;
    let input: Vec<f64> = enc.vars.inputs.iter().map(|&i| x[i]).collect();
    let exact = net.eval(&input)?[output];
    Ok(json!({
        "objective": model.objective_value(&x),
        "max_violation": model.max_violation(&x),
        "input": input,
        "network_output": exact,
    }))
}

fn status_code(statuses: impl IntoIterator<Item = SolveStatus>) -> u8 {
    if statuses
        .into_iter()
        .any(|s| matches!(s, SolveStatus::Timeout | SolveStatus::GapTerminated))
    {
        EXIT_INCOMPLETE
    } else {
        0
    }
}

#[derive(Serialize)]
struct VerifyReport {
    #[serde(rename = "box")]
    input_box: InputBox,
    ranges: Vec<RangeResult>,
    empirical: Option<Vec<(f64, f64)>>,
}

fn verify(a: VerifyArgs) -> Result<u8, CliError> {
    let net = load(&a.model)?;
    let v = verifier(&net, &a.model, config_for(&net, &a.model, Some(&a.solver)))?;
    let input_box = input::resolve_box(a.bounds.input_box.as_deref(), a.bounds.radius, net.input_dim())?;
    let (delta, allocation) = resolve_allocation(&v, &a.budget)?;
    let output = a.budget.output_index;
    if let Some(path) = &a.emit_lp {
        write_lp_pair(&v.encode(&input_box, output, &allocation)?, output, path)?;
    }
    let range = v.verify_with_allocation(&input_box, output, delta, &allocation, 0.0)?;
    let empirical = match a.samples {
        0 => None,
        n => Some(vec![empirical_range(&net, &input_box, n, DEFAULT_SEED)?[output]]),
    };
    let code = status_code([range.min_solve.status, range.max_solve.status]);
    for caveat in &range.boundary_caveats {
        eprintln!("warning: unit {caveat} can leave its domain with a non-zero boundary value");
    }
    let report = VerifyReport {
        input_box,
        ranges: vec![range],
        empirical,
    };
    emit(&report, a.model.output.as_deref(), "verify.json")?;
    Ok(code)
}

fn sensitivity(a: SensitivityArgs) -> Result<u8, CliError> {
    let net = load(&a.model)?;
    let v = verifier(&net, &a.model, config_for(&net, &a.model, Some(&a.solver)))?;
    let input_box = input::resolve_box(a.bounds.input_box.as_deref(), a.bounds.radius, net.input_dim())?;
    if a.budget.pieces.is_some() {
        return Err(CliError::Usage("--pieces is not supported for sensitivity".into()));
    }
    let output = a.budget.output_index;
    let results: Vec<SensitivityResult> = match a.feature {
        Some(d) => vec![v.sensitivity(&input_box, output, d, a.epsilon, a.budget.delta, a.samples)?],
        None => v.sensitivity_sweep(&input_box, output, a.epsilon, a.budget.delta, a.samples)?,
    };
    let code = status_code(results.iter().flat_map(|r| [r.max_solve.status, r.min_solve.status]));
    emit(&results, a.model.output.as_deref(), "sensitivity.json")?;
    Ok(code)
}

fn bench(a: BenchArgs) -> Result<u8, CliError> {
    let suite = match &a.model {
        Some(dir) => load_benchmark_models(dir)?,
        None => benchmarks()?,
    };
    let radii = a.radius.clone().unwrap_or_else(|| RADII.to_vec());
    let mut rows = Vec::new();
    for b in &suite {
        let mut config = VerifyConfig::for_network(&b.net);
        apply_solver_args(&mut config, &a.solver);
        rows.extend(run_benchmark(b, &radii, &config)?);
    }
    let csv = rows_to_csv(&rows)?;
    print!("{csv}");
    if let Some(dir) = &a.output {
        ensure_dir(Some(dir))?;
        write_file(&dir.join("bench.csv"), &csv)?;
        write_file(
            &dir.join("bench.json"),
            serde_json::to_string_pretty(&rows).map_err(Error::from)?,
        )?;
        write_benchmark_models(dir)?;
    }
    let incomplete = rows
        .iter()
        .any(|r| !(r.kano_status == "optimal/optimal" && r.kanv_status == "optimal/optimal"));
    Ok(if incomplete { EXIT_INCOMPLETE } else { 0 })
}
