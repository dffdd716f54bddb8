//! Command-line driver: `generate` problem instances, evaluate closed-form
//! risk (`theory`), run Monte Carlo simulation (`simulate`), and orchestrate
//! sample-size / regularization sweeps and example verdicts (`sweep`).
//!
//! Every run is reproducible from its flags alone: seeds default to 0,
//! streams are derived per trial, and parallel reductions are
//! order-independent, so repeated invocations produce byte-identical output
//! regardless of `--threads`.

use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use clreg::design::NoiseLaw;
use clreg::experiments::{
    default_mu_grid, log_grid, sweep_mu, sweep_n, verify_example, InstanceFamily, MuPolicy,
    SweepTable, VerifyWhich,
};
use clreg::montecarlo::{run_trials, Method, TrialStatistics};
use clreg::problem::{example_instance, generate_q, ExampleId, ProblemInstance};
use clreg::theory::{jl_excess_risk, theory_report, upper_bounds, RiskReport, UpperBounds};

#[derive(Parser)]
#[command(
    name = "clreg",
    version,
    about = "Risk theory and simulation for two-task regularized continual linear regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a problem instance as JSON.
    Generate(GenerateArgs),
    /// Closed-form risk report for one (instance, n, mu).
    Theory(TheoryArgs),
    /// Monte Carlo estimate of excess risk, forgetting, and intransigence.
    Simulate(SimulateArgs),
    /// Sample-size or regularization sweeps, and example verdicts.
    Sweep(SweepArgs),
}

/// Where the problem instance comes from: a JSON file, the geometric
/// benchmark generator, or a named example family.
#[derive(Args)]
struct InstanceArgs {
    /// Instance JSON document (as produced by `generate`).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["q", "example"])]
    instance: Option<PathBuf>,

    /// Geometric benchmark Q(k, l): reversed leading eigenvalue blocks.
    #[arg(long, num_args = 2, value_names = ["K", "L"], conflicts_with = "example")]
    q: Option<Vec<usize>>,

    /// Ambient dimension for --q.
    #[arg(long, default_value_t = 200)]
    d: usize,

    /// Named example family (ex34_case2, ex35, ex36); built per sample size.
    #[arg(long, value_name = "NAME")]
    example: Option<String>,
}

impl InstanceArgs {
    fn family(&self) -> Result<InstanceFamily> {
        if let Some(path) = &self.instance {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading instance file {}", path.display()))?;
            return Ok(InstanceFamily::Fixed(ProblemInstance::from_json(&text)?));
        }
        if let Some(kl) = &self.q {
            return Ok(InstanceFamily::Fixed(generate_q(kl[0], kl[1], self.d)?));
        }
        if let Some(name) = &self.example {
            return Ok(InstanceFamily::Example(ExampleId::from_str(name)?));
        }
        bail!("no instance given: use --instance, --q, or --example");
    }

    fn at(&self, n: usize) -> Result<ProblemInstance> {
        Ok(self.family()?.instantiate(n)?)
    }
}

/// Options shared by every command that produces output.
#[derive(Args)]
struct OutputArgs {
    /// Write here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,

    /// Output format where both are supported.
    #[arg(long, value_name = "json|csv")]
    format: Option<String>,

    /// JSON config file; flags override config values, config overrides
    /// defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

/// Options governing randomized runs.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    trials: Option<u64>,

    /// Label-noise law: gaussian, rademacher, or zero.
    #[arg(long, value_name = "LAW")]
    noise: Option<String>,

    /// Worker-thread cap (default: CLREG_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

/// Optional config-file fields mirroring the run flags.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    trials: Option<u64>,
    noise: Option<String>,
    threads: Option<usize>,
    format: Option<String>,
}

/// Fully resolved run configuration; every randomized command is a pure
/// function of this plus its instance arguments.
struct RunConfig {
    seed: u64,
    trials: u64,
    noise: NoiseLaw,
    threads: Option<usize>,
    format: String,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn resolve(run: &RunArgs, out: &OutputArgs, default_format: &str) -> Result<RunConfig> {
    let file = load_config(&out.config)?;
    let env_threads = std::env::var("CLREG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let noise_name = run
        .noise
        .clone()
        .or(file.noise)
        .unwrap_or_else(|| "gaussian".to_string());
    let format = out
        .format
        .clone()
        .or(file.format)
        .unwrap_or_else(|| default_format.to_string());
    if format != "json" && format != "csv" {
        bail!("unknown format '{format}' (expected json or csv)");
    }
    Ok(RunConfig {
        seed: run.seed.or(file.seed).unwrap_or(0),
        trials: run.trials.or(file.trials).unwrap_or(20),
        noise: NoiseLaw::from_str(&noise_name)?,
        threads: run.threads.or(file.threads).or(env_threads),
        format,
    })
}

/// Runs `f` under the configured thread cap.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .context("building worker pool")?;
            Ok(pool.install(f))
        }
    }
}

fn emit(output: &Option<PathBuf>, mut text: String) -> Result<()> {
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match output {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialization cannot fail")
}

// --- generate ---------------------------------------------------------------

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    instance: InstanceArgs,

    /// Sample size at which to build an --example family.
    #[arg(long)]
    n: Option<usize>,

    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let instance = match args.instance.family()? {
        InstanceFamily::Fixed(instance) => instance,
        InstanceFamily::Example(id) => {
            let n = args
                .n
                .ok_or_else(|| anyhow::anyhow!("--example requires --n"))?;
            example_instance(id, n)?
        }
    };
    emit(&args.output, instance.to_json())
}

// --- theory -----------------------------------------------------------------

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    instance: InstanceArgs,

    #[arg(long)]
    n: usize,

    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,

    /// Append the closed-form upper bounds on dim_F, dim_I, and the bias.
    #[arg(long)]
    bounds: bool,

    /// Append the joint-learning excess risk.
    #[arg(long)]
    jl: bool,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Serialize)]
struct TheoryOutput {
    #[serde(flatten)]
    report: RiskReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<UpperBounds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jl_excess: Option<f64>,
}

fn cmd_theory(args: TheoryArgs) -> Result<()> {
    let file = load_config(&args.out.config)?;
    let format = args
        .out
        .format
        .clone()
        .or(file.format)
        .unwrap_or_else(|| "json".to_string());
    let instance = args.instance.at(args.n)?;
    let report = theory_report(&instance, args.n, args.mu)?;
    let bounds = if args.bounds {
        Some(upper_bounds(&instance, args.mu)?)
    } else {
        None
    };
    let jl_excess = args.jl.then(|| jl_excess_risk(&instance, args.n));

    let text = match format.as_str() {
        "json" => to_json(&TheoryOutput {
            report,
            bounds,
            jl_excess,
        }),
        "csv" => {
            let mut header = RiskReport::CSV_HEADER.to_string();
            let mut row = report.csv_row();
            if let Some(b) = bounds {
                header.push_str(",dimF_ub,dimI_ub,bias_ub");
                row.push_str(&format!(
                    ",{},{},{}",
                    clreg::g17(b.dim_f),
                    clreg::g17(b.dim_i),
                    clreg::g17(b.bias)
                ));
            }
            if let Some(jl) = jl_excess {
                header.push_str(",jl_excess");
                row.push_str(&format!(",{}", clreg::g17(jl)));
            }
            format!("{header}\n{row}")
        }
        other => bail!("unknown format '{other}' (expected json or csv)"),
    };
    emit(&args.out.output, text)
}

// --- simulate -----------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    instance: InstanceArgs,

    #[arg(long)]
    n: usize,

    /// Regularization strength for the rcl method.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,

    /// Comma-separated subset of ocl,rcl,jl.
    #[arg(long, value_delimiter = ',', default_values = ["ocl", "rcl", "jl"])]
    methods: Vec<String>,

    /// Also dump one CSV row per trial and method here.
    #[arg(long, value_name = "PATH")]
    per_trial_csv: Option<PathBuf>,

    /// Debug: dump the first trial's sampled dataset as CSV
    /// (task, x_1..x_d, y).
    #[arg(long, value_name = "PATH")]
    dump_data: Option<PathBuf>,

    #[command(flatten)]
    run: RunArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Serialize)]
struct SimulateOutput {
    n: usize,
    seed: u64,
    noise: String,
    #[serde(flatten)]
    statistics: TrialStatistics,
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let mut methods = Vec::new();
    for name in names {
        let m = Method::from_str(name)?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    methods.sort();
    Ok(methods)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = resolve(&args.run, &args.out, "json")?;
    if cfg.format != "json" {
        bail!("simulate emits JSON statistics; csv is available per trial via --per-trial-csv");
    }
    let methods = parse_methods(&args.methods)?;
    let instance = args.instance.at(args.n)?;
    let set = with_threads(cfg.threads, || {
        run_trials(
            &instance, args.n, args.mu, cfg.trials, cfg.seed, &methods, cfg.noise,
        )
    })??;
    if let Some(path) = &args.per_trial_csv {
        fs::write(path, set.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.dump_data {
        let design = std::sync::Arc::new(clreg::design::build_design(&instance, args.n)?);
        let dataset = clreg::design::sample_labels(
            &design,
            &instance,
            cfg.noise,
            clreg::design::derive_stream(cfg.seed, 0),
        );
        fs::write(path, dataset.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let statistics = TrialStatistics::from_trials(&set, &methods);
    let text = to_json(&SimulateOutput {
        n: args.n,
        seed: cfg.seed,
        noise: cfg.noise.to_string(),
        statistics,
    });
    emit(&args.out.output, text)
}

// --- sweep ------------------------------------------------------------------

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    instance: InstanceArgs,

    /// Sample sizes (single value for --mu-grid sweeps).
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    n: Vec<usize>,

    /// Fixed regularization strength for rcl rows.
    #[arg(long, conflicts_with_all = ["tune_mu", "mu_schedule"], allow_negative_numbers = true)]
    mu: Option<f64>,

    /// Tune mu per n by exhaustive search (grid from --mu-grid or default).
    #[arg(long)]
    tune_mu: bool,

    /// Schedule mu = n^ALPHA.
    #[arg(
        long,
        value_name = "ALPHA",
        conflicts_with = "tune_mu",
        allow_negative_numbers = true
    )]
    mu_schedule: Option<f64>,

    /// Log grid `lo:hi:count`; alone it requests a mu-sweep at a single n,
    /// with --tune-mu it overrides the tuning grid.
    #[arg(long, value_name = "LO:HI:COUNT")]
    mu_grid: Option<String>,

    /// Comma-separated subset of ocl,rcl,jl for n-sweeps.
    #[arg(long, value_delimiter = ',', default_values = ["ocl", "rcl", "jl"])]
    methods: Vec<String>,

    /// Check a named example's stated rates instead of sweeping
    /// (ex34_case1, ex34_case2, ex35, ex36); emits a verdict JSON.
    #[arg(long, value_name = "NAME")]
    verify_example: Option<String>,

    #[command(flatten)]
    run: RunArgs,

    #[command(flatten)]
    out: OutputArgs,
}

fn parse_grid_spec(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("grid spec must be lo:hi:count, got '{spec}'");
    }
    let lo: f64 = parts[0].parse().context("grid lo")?;
    let hi: f64 = parts[1].parse().context("grid hi")?;
    let count: usize = parts[2].parse().context("grid count")?;
    if lo.is_nan() || lo <= 0.0 || hi < lo || count == 0 {
        bail!("grid spec needs 0 < lo <= hi and count >= 1, got '{spec}'");
    }
    Ok(log_grid(lo, hi, count))
}

fn emit_table(table: &SweepTable, cfg: &RunConfig, out: &OutputArgs) -> Result<()> {
    let text = match cfg.format.as_str() {
        "csv" => table.to_csv(),
        _ => to_json(table),
    };
    emit(&out.output, text)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = resolve(&args.run, &args.out, "csv")?;

    if let Some(name) = &args.verify_example {
        let which = VerifyWhich::from_str(name)?;
        let verdict = verify_example(which, &args.n)?;
        return emit(&args.out.output, to_json(&verdict));
    }

    let methods = parse_methods(&args.methods)?;
    let family = args.instance.family()?;

    // A mu grid without tuning means a regularization sweep at fixed n.
    if let (Some(spec), false) = (&args.mu_grid, args.tune_mu) {
        let grid = parse_grid_spec(spec)?;
        if args.n.len() != 1 {
            bail!("a mu sweep needs exactly one sample size, got {:?}", args.n);
        }
        let n = args.n[0];
        let instance = family.instantiate(n)?;
        let table = with_threads(cfg.threads, || {
            sweep_mu(&instance, n, &grid, cfg.trials, cfg.seed, cfg.noise)
        })??;
        return emit_table(&table, &cfg, &args.out);
    }

    let policy = if args.tune_mu {
        let grid = match &args.mu_grid {
            Some(spec) => parse_grid_spec(spec)?,
            None => default_mu_grid(),
        };
        MuPolicy::TunedPerN(grid)
    } else if let Some(alpha) = args.mu_schedule {
        MuPolicy::Schedule { exponent: alpha }
    } else {
        MuPolicy::Fixed(args.mu.unwrap_or(0.0))
    };

    let table = with_threads(cfg.threads, || {
        sweep_n(
            &family, &args.n, &methods, &policy, cfg.trials, cfg.seed, cfg.noise,
        )
    })??;
    emit_table(&table, &cfg, &args.out)
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Theory(args) => cmd_theory(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
