//! Command-line front end.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adversary_detector::{
    converse_covertness_lower_bound, detector_report, min_received_power,
};
use crate::allocation::{
    build_constellation, build_constellation_d, perturbed_feasibility, solve_allocation_d,
    solve_allocation_v, AllocationResult, Constellation,
};
use crate::capacity::{capacity_summary, linear_grid, throughput_curves, BITS_PER_NAT};
use crate::channel_model::{classify_subspaces, GsvdDecomposition};
use crate::compound::{
    compound_capacity, covertness_monotonicity_check, sampled_worst_constraint, worst_case_design,
    UncertaintySet,
};
use crate::covert_code::{
    generate, simulate_reliability, size_code, CodeSize, Codebook, DEFAULT_SCALAR_BUDGET,
};
use crate::covertness_meter::{
    covertness_report, kl_per_letter, product_form_v, v_codebook_mc, CovertnessReport,
    MAX_MIXTURE_WORDS,
};
use crate::Error;
use config::{load_scenario, ChannelSpec, ConfigError, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "covcap",
    version,
    about = "Covert capacity of MIMO AWGN channels: capacities, power allocation and Monte Carlo checks",
    after_help = "Scenario defaults: delta = 0.2, n = 400, trials = 10000, xi = 0.5, c = 1, slack_b0 = slack_b1 = 0, rank_rtol = 1e-10."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every randomized command; overrides the scenario
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials; overrides the scenario [default: 10000]
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Report format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write the report here instead of standard output
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Report throughputs in bits instead of nats
    #[arg(long, global = true)]
    bits: bool,
    /// Blocklength; overrides the scenario [default: 400]
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Covertness level; overrides the scenario [default: 0.2]
    #[arg(long, global = true)]
    delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    /// Variational distance
    V,
    /// Relative entropy
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Source {
    /// i.i.d. BPSK input
    Product,
    /// A generated codebook
    Codebook,
}

#[derive(Debug, Args)]
struct CodeArgs {
    /// Cap on the number of messages M
    #[arg(long, default_value_t = 4096)]
    max_messages: usize,
    /// Cap on the number of keys K
    #[arg(long, default_value_t = 16)]
    max_keys: usize,
    /// Write the generated codebook as text
    #[arg(long, value_name = "PATH")]
    export_codebook: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simultaneous diagonalization of the channel pair
    Gsvd,
    /// Covert capacities and throughputs at the scenario's delta
    Capacity,
    /// Optimal power allocation and the BPSK constellation at blocklength n
    Allocate {
        #[arg(long, value_enum, default_value_t = Metric::V)]
        metric: Metric,
    },
    /// False-alarm and missed-detection rates of the warden's power detector
    Detector {
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Covertness metric, closed form against Monte Carlo
    Covertness {
        #[arg(long, value_enum, default_value_t = Source::Product)]
        source: Source,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Decoding error rate of a generated code
    Reliability {
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Worst case over warden gains bounded by lambda_0
    Compound,
    /// Relative-entropy against variational throughput over a delta grid
    CompareMetrics {
        #[arg(long, default_value_t = 0.01)]
        delta_min: f64,
        #[arg(long, default_value_t = 0.9)]
        delta_max: f64,
        #[arg(long, default_value_t = 90)]
        points: usize,
    },
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Usage(String),
    Library(Error),
    /// Rank-deficient channel; carries the subspace report as JSON.
    Subspace(Error, String),
    Io(io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Library(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Subspace(..) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
            CliError::Library(e) => write!(f, "{e}"),
            CliError::Subspace(e, report) => write!(f, "{e}\n{report}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Library(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Reports go to stdout or `--output`, diagnostics to
/// stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Context {
    scenario: ScenarioConfig,
    format: Format,
    bits: bool,
}

impl Context {
    fn unit(&self) -> f64 {
        if self.bits {
            BITS_PER_NAT
        } else {
            1.0
        }
    }

    fn seed(&self) -> CliResult<u64> {
        self.scenario
            .seed
            .ok_or_else(|| CliError::Usage("invalid `seed`: this command is randomized; pass --seed or set `seed` in the scenario".into()))
    }

    fn gsvd(&self) -> CliResult<GsvdDecomposition> {
        self.scenario
            .gsvd()
            .map_err(|e| match (&e, self.scenario.channel_pair()) {
                (Error::RankDeficient { .. }, Some(pair)) => {
                    let report = classify_subspaces(&pair, self.scenario.rank_rtol);
                    CliError::Subspace(
                        e,
                        serde_json::to_string_pretty(&report).expect("plain struct"),
                    )
                }
                _ => CliError::Library(e),
            })
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let path = cli.common.config.as_ref().ok_or_else(|| {
        CliError::Usage("invalid `config`: a scenario file is required (--config PATH)".into())
    })?;
    let mut scenario = load_scenario(path)?;
    apply_overrides(&mut scenario, &cli.common)?;
    let ctx = Context {
        scenario,
        format: cli.common.format,
        bits: cli.common.bits,
    };
    let report = match &cli.command {
        Command::Gsvd => gsvd_cmd(&ctx)?,
        Command::Capacity => capacity_cmd(&ctx)?,
        Command::Allocate { metric } => allocate_cmd(&ctx, *metric)?,
        Command::Detector { code } => detector_cmd(&ctx, code)?,
        Command::Covertness { source, code } => covertness_cmd(&ctx, *source, code)?,
        Command::Reliability { code } => reliability_cmd(&ctx, code)?,
        Command::Compound => compound_cmd(&ctx)?,
        Command::CompareMetrics {
            delta_min,
            delta_max,
            points,
        } => compare_cmd(&ctx, *delta_min, *delta_max, *points)?,
    };
    match &cli.common.output {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            f.write_all(report.as_bytes())?;
            f.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(report.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn apply_overrides(s: &mut ScenarioConfig, c: &Common) -> CliResult<()> {
    let invalid = |field: &str, msg: String| CliError::Usage(format!("invalid `{field}`: {msg}"));
    if let Some(seed) = c.seed {
        s.seed = Some(seed);
    }
    if let Some(t) = c.trials {
        if t == 0 {
            return Err(invalid("trials", "must be at least 1".into()));
        }
        s.trials = t;
    }
    if let Some(n) = c.n {
        if n == 0 {
            return Err(invalid("n", "must be at least 1".into()));
        }
        s.n = n;
    }
    if let Some(d) = c.delta {
        if !(d > 0.0 && d < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {d}")));
        }
        s.delta = d;
    }
    Ok(())
}

fn render<T: Serialize>(format: Format, rows: &[T], json: &impl Serialize) -> CliResult<String> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(json).map_err(|e| CliError::Io(e.into()))?;
            s.push('\n');
            Ok(s)
        }
    }
}

#[derive(Serialize)]
struct GainRow {
    subchannel: usize,
    lambda_b: f64,
    lambda_w: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct GsvdJson {
    lambda_b: Vec<f64>,
    lambda_w: Vec<f64>,
    ratios: Vec<f64>,
    tr2: f64,
    tr4: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    subspaces: Option<crate::channel_model::SubspaceReport>,
}

fn gsvd_cmd(ctx: &Context) -> CliResult<String> {
    let g = ctx.gsvd()?;
    let rows: Vec<GainRow> = (0..g.m())
        .map(|j| GainRow {
            subchannel: j + 1,
            lambda_b: g.lambda_b()[j],
            lambda_w: g.lambda_w()[j],
            ratio: g.lambda_b()[j] / g.lambda_w()[j],
        })
        .collect();
    let json = GsvdJson {
        lambda_b: g.lambda_b().iter().copied().collect(),
        lambda_w: g.lambda_w().iter().copied().collect(),
        ratios: g.ratios().collect(),
        tr2: g.tr2(),
        tr4: g.tr4(),
        subspaces: ctx
            .scenario
            .channel_pair()
            .map(|p| classify_subspaces(&p, ctx.scenario.rank_rtol)),
    };
    render(ctx.format, &rows, &json)
}

fn capacity_cmd(ctx: &Context) -> CliResult<String> {
    let g = ctx.gsvd()?;
    let s = &ctx.scenario;
    let mut summary = capacity_summary(&g, s.sigma_b2, s.sigma_w2, s.delta)?;
    if ctx.bits {
        summary = summary.in_bits();
    }
    render(ctx.format, &[summary], &summary)
}

#[derive(Serialize)]
struct AllocationRow {
    subchannel: usize,
    lambda_b: f64,
    lambda_w: f64,
    t: f64,
    rho: f64,
    amplitude: f64,
    mu: f64,
    objective: f64,
    constraint: f64,
    bound: f64,
}

#[derive(Serialize)]
struct AllocationJson<'a> {
    metric: &'static str,
    n: usize,
    delta: f64,
    allocation: &'a AllocationResult,
    constellation: &'a Constellation,
    #[serde(skip_serializing_if = "Option::is_none")]
    feasibility: Option<crate::allocation::FeasibilityReport>,
}

fn allocate_cmd(ctx: &Context, metric: Metric) -> CliResult<String> {
    let g = ctx.gsvd()?;
    let s = &ctx.scenario;
    let (mut alloc, constellation, feasibility, name) = match metric {
        Metric::V => {
            let a = solve_allocation_v(&g, s.sigma_b2, s.sigma_w2)?;
            let c = build_constellation(&a, &g, s.n, s.delta)?;
            let f = perturbed_feasibility(&a, s.n, s.delta, s.c)?;
            (a, c, Some(f), "v")
        }
        Metric::D => {
            let a = solve_allocation_d(&g, s.sigma_b2, s.sigma_w2)?;
            let c = build_constellation_d(&a, &g, s.n, s.delta)?;
            (a, c, None, "d")
        }
    };
    alloc.objective *= ctx.unit();
    let rows: Vec<AllocationRow> = (0..g.m())
        .map(|j| AllocationRow {
            subchannel: j + 1,
            lambda_b: g.lambda_b()[j],
            lambda_w: g.lambda_w()[j],
            t: alloc.t[j],
            rho: constellation.rho[j],
            amplitude: constellation.amplitudes[j],
            mu: alloc.mu,
            objective: alloc.objective,
            constraint: alloc.constraint,
            bound: alloc.bound,
        })
        .collect();
    let json = AllocationJson {
        metric: name,
        n: s.n,
        delta: s.delta,
        allocation: &alloc,
        constellation: &constellation,
        feasibility,
    };
    render(ctx.format, &rows, &json)
}

/// Variational design at the scenario's `n` and `delta`, sized with `xi`.
/// `M` is cut back until the codebook fits the scalar budget (and, when
/// `word_cap` is set, the word cap). A channel that needs no key gets
/// `K = 1`.
fn build_code(
    ctx: &Context,
    g: &GsvdDecomposition,
    args: &CodeArgs,
    word_cap: Option<usize>,
) -> CliResult<(Codebook, CodeSize)> {
    let s = &ctx.scenario;
    if args.max_messages == 0 || args.max_keys == 0 {
        return Err(CliError::Usage(
            "invalid `max_messages`/`max_keys`: must be at least 1".into(),
        ));
    }
    let alloc = solve_allocation_v(g, s.sigma_b2, s.sigma_w2)?;
    let constellation = build_constellation(&alloc, g, s.n, s.delta)?;
    let size = match size_code(g, &alloc, s.sigma_b2, s.sigma_w2, s.n, s.delta, s.xi) {
        // main channel stronger than the warden's: no key, message set by
        // the resolvability size
        Err(Error::KeySizeNegative { log_mk, .. }) => CodeSize {
            log_m: log_mk,
            log_mk,
        },
        r => r?,
    };
    let keys = size.keys(args.max_keys);
    let per_word = (s.n * g.m()) as u128;
    let fit = (DEFAULT_SCALAR_BUDGET / (per_word * keys as u128)).max(1) as usize;
    let mut messages = size.messages(args.max_messages).min(fit);
    if let Some(cap) = word_cap {
        messages = messages.min((cap / keys).max(1));
    }
    let code = generate(g, &constellation, messages, keys, ctx.seed()?)?;
    if let Some(path) = &args.export_codebook {
        let mut f = BufWriter::new(File::create(path)?);
        code.write_text(&mut f)?;
        f.flush()?;
    }
    Ok((code, size))
}

#[derive(Serialize)]
struct DetectorRow {
    n: usize,
    messages: usize,
    keys: usize,
    trials: usize,
    p_star: f64,
    alpha_mc: f64,
    alpha_half_width: f64,
    alpha_bound: f64,
    beta_mc: f64,
    beta_half_width: f64,
    beta_bound: f64,
    converse_v_lower: f64,
}

fn detector_cmd(ctx: &Context, args: &CodeArgs) -> CliResult<String> {
    let g = ctx.gsvd()?;
    let s = &ctx.scenario;
    let seed = ctx.seed()?;
    let (code, _) = build_code(ctx, &g, args, None)?;
    let r = detector_report(
        &code, &g, s.sigma_w2, s.slack_b0, s.slack_b1, s.trials, seed,
    )?;
    let p_star = min_received_power(&code, &g);
    let row = DetectorRow {
        n: r.n,
        messages: code.messages(),
        keys: code.keys(),
        trials: r.trials,
        p_star,
        alpha_mc: r.alpha_mc,
        alpha_half_width: r.alpha_half_width(),
        alpha_bound: r.alpha_bound,
        beta_mc: r.beta_mc,
        beta_half_width: r.beta_half_width(),
        beta_bound: r.beta_bound,
        converse_v_lower: converse_covertness_lower_bound(
            p_star, r.n, &g, s.sigma_w2, s.slack_b0, s.slack_b1,
        ),
    };
    render(ctx.format, &[&row], &row)
}

fn covertness_cmd(ctx: &Context, source: Source, args: &CodeArgs) -> CliResult<String> {
    let g = ctx.gsvd()?;
    let s = &ctx.scenario;
    let seed = ctx.seed()?;
    let report = match source {
        Source::Product => {
            let alloc = solve_allocation_v(&g, s.sigma_b2, s.sigma_w2)?;
            let c = build_constellation(&alloc, &g, s.n, s.delta)?;
            covertness_report(&c, &g, s.sigma_w2, s.delta, s.trials, seed)?
        }
        Source::Codebook => {
            let (code, _) = build_code(ctx, &g, args, Some(MAX_MIXTURE_WORDS))?;
            let est = v_codebook_mc(&code, &g, s.sigma_w2, s.trials, seed)?;
            CovertnessReport {
                n: s.n,
                delta: s.delta,
                v_closed: product_form_v(&g, code.constellation(), s.sigma_w2)?,
                v_mc: est.v_mc,
                half_width: est.half_width,
                kl_per_letter: kl_per_letter(code.constellation(), &g, s.sigma_w2)?,
            }
        }
    };
    render(ctx.format, &[report], &report)
}

#[derive(Serialize)]
struct ReliabilityRow {
    n: usize,
    messages: usize,
    keys: usize,
    log_m: f64,
    log_mk: f64,
    trials: usize,
    error_rate: f64,
    half_width: f64,
}

fn reliability_cmd(ctx: &Context, args: &CodeArgs) -> CliResult<String> {
    let g = ctx.gsvd()?;
    let s = &ctx.scenario;
    let seed = ctx.seed()?;
    let (code, size) = build_code(ctx, &g, args, None)?;
    let r = simulate_reliability(&code, &g, s.sigma_b2, s.trials, seed)?;
    let row = ReliabilityRow {
        n: r.n,
        messages: r.messages,
        keys: r.keys,
        log_m: size.log_m * ctx.unit(),
        log_mk: size.log_mk * ctx.unit(),
        trials: r.trials,
        error_rate: r.error_rate,
        half_width: r.half_width,
    };
    render(ctx.format, &[&row], &row)
}

#[derive(Serialize)]
struct CompoundRow {
    lambda0: f64,
    c_covert: f64,
    log_mk_rate: f64,
    samples: usize,
    monotonic: bool,
    worst_violation: f64,
    worst_constraint: f64,
}

fn compound_cmd(ctx: &Context) -> CliResult<String> {
    let s = &ctx.scenario;
    let lambda_0 = s.lambda_0.ok_or_else(|| {
        CliError::Usage(
            "invalid `lambda_0`: the compound analysis needs `lambda_0` in the scenario".into(),
        )
    })?;
    let seed = ctx.seed()?;
    let set = match &s.channel {
        ChannelSpec::Gains { lambda_b, .. } => {
            UncertaintySet::from_gains(lambda_b.clone(), lambda_0)?
        }
        ChannelSpec::Matrices { .. } => UncertaintySet::new(&ctx.gsvd()?, lambda_0)?,
    };
    let report = compound_capacity(&set, s.sigma_b2, s.sigma_w2);
    let design = worst_case_design(&set, s.sigma_b2, s.sigma_w2)?;
    let constellation = build_constellation(&design, set.worst_case(), s.n, s.delta)?;
    let mono = covertness_monotonicity_check(&set, &constellation, s.sigma_w2, s.trials, seed)?;
    let row = CompoundRow {
        lambda0: report.lambda0,
        c_covert: report.c_covert * ctx.unit(),
        log_mk_rate: report.log_mk_rate * ctx.unit(),
        samples: mono.samples,
        monotonic: mono.holds,
        worst_violation: mono.worst_violation,
        worst_constraint: sampled_worst_constraint(&set, &design, s.sigma_w2, s.trials, seed)?,
    };
    render(ctx.format, &[&row], &row)
}

fn compare_cmd(ctx: &Context, lo: f64, hi: f64, points: usize) -> CliResult<String> {
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(CliError::Usage(format!(
            "invalid `delta_min`/`delta_max`: need 0 < delta_min <= delta_max < 1, got {lo} and {hi}"
        )));
    }
    if points == 0 {
        return Err(CliError::Usage(
            "invalid `points`: must be at least 1".into(),
        ));
    }
    let g = ctx.gsvd()?;
    let s = &ctx.scenario;
    let mut rows = throughput_curves(&g, s.sigma_b2, s.sigma_w2, &linear_grid(lo, hi, points))?;
    for r in &mut rows {
        r.f_d *= ctx.unit();
        r.f_v *= ctx.unit();
    }
    render(ctx.format, &rows, &rows)
}
