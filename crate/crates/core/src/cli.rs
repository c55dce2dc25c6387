//! Scenario-driven command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric error, 4 failed
//! non-identification demonstration.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand;
use crate::error::Error;
use crate::grid;
use crate::identification::{self, IdentificationConfig};
use crate::inequality::{self, DemandSource};
use crate::population::{Population, RatioMarginalSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_DEMO: i32 = 4;

pub const DEFAULT_DEMO_TOL: f64 = 1e-10;
pub const DEFAULT_SAMPLE_COUNT: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "demand-ident", version, about = "Demand non-identification and quality-based moment recovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Demand curve and the ratio CDF read back from it.
    Demand(CommonArgs),
    /// Two populations with one demand curve and opposite inequality regimes.
    Nonid(CommonArgs),
    /// Cross-moment recovery from the quality-demand surface.
    Identify(CommonArgs),
    /// Same-side inequality classification.
    Classify(CommonArgs),
    /// Seeded draws of (v^K, v^M).
    Sample(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the demonstration tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Chebyshev { lo: f64, hi: f64, n: usize },
    Uniform { lo: f64, hi: f64, n: usize },
    Points { values: Vec<f64> },
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::Chebyshev { lo, hi, n } => grid::chebyshev(*lo, *hi, *n),
            GridSpec::Uniform { lo, hi, n } => grid::uniform(*lo, *hi, *n),
            GridSpec::Points { values } => values.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default)]
    pub price: Option<GridSpec>,
    /// Replaces the identification span rule when given.
    #[serde(default)]
    pub quality: Option<GridSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub sample_count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed gap between the two demonstration demand curves.
    #[serde(default)]
    pub demo: Option<f64>,
    /// Overrides `identification.tail_bound`.
    #[serde(default)]
    pub tail_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandMethod {
    #[default]
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonIdSpec {
    pub ratio: RatioMarginalSpec,
    pub delta_low: f64,
    pub delta_high: f64,
    #[serde(default)]
    pub demand_method: DemandMethod,
    #[serde(default)]
    pub mc_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub population: Option<Population>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub identification: Option<IdentificationConfig>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub nonid: Option<NonIdSpec>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

/// Maps a library error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidPopulation(_)
        | Error::InvalidInput { .. }
        | Error::BoundViolation { .. }
        | Error::NoDensity(_)
        | Error::DegenerateRatio(_)
        | Error::PriceNotInSurface(_) => EXIT_INPUT,
        Error::QuadratureFailure { .. }
        | Error::MonotonicityViolation { .. }
        | Error::BoundaryMassZero { .. }
        | Error::TailMassExceeded { .. }
        | Error::InsufficientPrices { .. }
        | Error::IllConditioned { .. } => EXIT_NUMERIC,
        Error::DemoFailure(_) => EXIT_DEMO,
    }
}

fn lib(op: &str) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure { code: exit_code(&e), message: format!("{op}: {e}") }
}

struct Context {
    scenario: Scenario,
    hash: String,
    out: PathBuf,
    seed: u64,
    tol: Option<f64>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    scenario_sha256: &'a str,
    seed: u64,
    result: T,
}

impl Context {
    fn load(args: &CommonArgs) -> Result<Self, Failure> {
        let bytes = std::fs::read(&args.scenario)
            .map_err(|e| Failure::input(format!("scenario {}: {e}", args.scenario.display())))?;
        let scenario: Scenario = serde_json::from_slice(&bytes)
            .map_err(|e| Failure::input(format!("scenario {}: {e}", args.scenario.display())))?;
        let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let out = args
            .out
            .clone()
            .or_else(|| scenario.outputs.dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        if let Some(t) = args.tol {
            if t.is_nan() || t < 0.0 {
                return Err(Failure::input(format!("--tol: {t} must be non-negative")));
            }
        }
        let seed = args.seed.or(scenario.seed).unwrap_or(0);
        let tol = args.tol.or(scenario.tolerances.demo);
        Ok(Self { scenario, hash, out, seed, tol })
    }

    fn population(&self, op: &str) -> Result<&Population, Failure> {
        self.scenario
            .population
            .as_ref()
            .ok_or_else(|| Failure::input(format!("{op}: scenario field `population` is required")))
    }

    fn write(&self, name: &str, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
        write_atomic(&self.out.join(name), fill).map_err(|e| Failure::input(format!("writing {name}: {e}")))
    }

    fn write_json<T: Serialize>(&self, name: &str, command: &str, result: T) -> Result<(), Failure> {
        let envelope = Envelope {
            command,
            version: env!("CARGO_PKG_VERSION"),
            scenario_sha256: &self.hash,
            seed: self.seed,
            result,
        };
        let mut text =
            serde_json::to_string_pretty(&envelope).map_err(|e| Failure::input(format!("{command}: {e}")))?;
        text.push('\n');
        self.write(name, |w| w.write_all(text.as_bytes()))
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn cmd_demand(ctx: &Context) -> Result<(), Failure> {
    let pop = ctx.population("demand")?;
    let prices = match &ctx.scenario.grids.price {
        Some(g) => g.points(),
        None => demand::default_price_grid(pop),
    };
    let curve = demand::demand_curve(pop, &prices).map_err(lib("demand"))?;
    let cdf = demand::invert_demand(&curve).map_err(lib("demand"))?;
    ctx.write("demand.csv", |w| curve.write_csv(w))?;
    ctx.write("ratio_cdf.csv", |w| cdf.write_csv(w))
}

fn cmd_nonid(ctx: &Context) -> Result<(), Failure> {
    let spec = ctx
        .scenario
        .nonid
        .as_ref()
        .ok_or_else(|| Failure::input("nonid: scenario field `nonid` is required"))?;
    spec.ratio.validate().map_err(lib("nonid"))?;
    let prices = match &ctx.scenario.grids.price {
        Some(g) => g.points(),
        None => {
            let hi = spec.ratio.r_hi() * (1.0 + 1e-3);
            let lo = (spec.ratio.r_lo() * (1.0 - 1e-3)).max(hi * 1e-6);
            grid::chebyshev(lo, hi, demand::DEFAULT_PRICE_POINTS)
        }
    };
    let source = match spec.demand_method {
        DemandMethod::Analytic => DemandSource::Analytic,
        DemandMethod::MonteCarlo => DemandSource::MonteCarlo {
            draws: spec.mc_draws.unwrap_or(demand::DEFAULT_MC_DRAWS),
            seed: ctx.seed,
        },
    };
    let tol = ctx.tol.unwrap_or(DEFAULT_DEMO_TOL);
    let demo = inequality::build_nonid_demo_with(&spec.ratio, spec.delta_low, spec.delta_high, &prices, tol, source)
        .map_err(lib("nonid"))?;
    ctx.write("nonid_curves.csv", |w| demo.write_csv(w))?;
    ctx.write_json("nonid_demo.json", "nonid", &demo)
}

fn cmd_identify(ctx: &Context) -> Result<(), Failure> {
    let pop = ctx.population("identify")?;
    let mut config = ctx
        .scenario
        .identification
        .clone()
        .ok_or_else(|| Failure::input("identify: scenario field `identification` is required"))?;
    if let Some(t) = ctx.scenario.tolerances.tail_bound {
        config.tail_bound = t;
    }
    let quality = match &ctx.scenario.grids.quality {
        Some(g) => g.points(),
        None => {
            config.validate().map_err(lib("identify"))?;
            config.quality_grid(pop)
        }
    };
    let recovery = identification::verify_recovery_on(pop, &config, &quality).map_err(lib("identify"))?;
    ctx.write("surface.csv", |w| recovery.surface.write_csv(w))?;

    #[derive(Serialize)]
    struct Moments<'a> {
        recovered: &'a crate::MomentTable,
        reference: &'a crate::MomentTable,
    }
    let r = &recovery.report;
    ctx.write_json("moments.json", "identify", Moments { recovered: &r.recovered, reference: &r.reference })?;
    ctx.write_json("recovery_report.json", "identify", r)
}

fn cmd_classify(ctx: &Context) -> Result<(), Failure> {
    let pop = ctx.population("classify")?;
    let report = inequality::classify(pop).map_err(lib("classify"))?;
    ctx.write_json("inequality.json", "classify", report)
}

fn cmd_sample(ctx: &Context) -> Result<(), Failure> {
    let pop = ctx.population("sample")?;
    let n = ctx.scenario.outputs.sample_count.unwrap_or(DEFAULT_SAMPLE_COUNT);
    let draws = pop.sample(n, ctx.seed).map_err(lib("sample"))?;
    ctx.write("samples.csv", |w| {
        writeln!(w, "vK,vM")?;
        for (k, m) in &draws {
            writeln!(w, "{},{}", crate::fmt_f64(*k), crate::fmt_f64(*m))?;
        }
        Ok(())
    })
}

type Handler = fn(&Context) -> Result<(), Failure>;

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let (args, cmd): (&CommonArgs, Handler) = match &cli.command {
        Command::Demand(a) => (a, cmd_demand),
        Command::Nonid(a) => (a, cmd_nonid),
        Command::Identify(a) => (a, cmd_identify),
        Command::Classify(a) => (a, cmd_classify),
        Command::Sample(a) => (a, cmd_sample),
    };
    match Context::load(args).and_then(|ctx| cmd(&ctx)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
