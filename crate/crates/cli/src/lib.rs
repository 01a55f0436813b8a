//! Command-line front end: argument parsing, config files and report output.
//!
//! Every subcommand builds its whole output in memory and writes it once.
//! Randomized subcommands print the seed they ran with; rerunning with that
//! seed reproduces the output byte for byte.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gmlm::io::{json_report, opt_sig6, parse_panel_csv, read_values_csv, render_mc, render_panel, sig6, Table};
use gmlm::learning::{decompose, DecompositionConfig};
use gmlm::montecarlo::{run_study, McConfig, OutcomeScale, Population, PopulationSource, SyntheticSpec};
use gmlm::panel::{
    analyze_panel, tune_selector, Arm, CellSelector, OrderChoice, OutcomeType, PanelConfig, Stratum,
    TuningEntry,
};
use gmlm::rng::DEFAULT_SEED;
use gmlm::tuning::{HyperGrid, TuningWeight};
use gmlm::{
    estimate_effects, lmoments, normal_critical, two_step, BootstrapConfig, GmlmError, ModelSpec, Sample,
    TrimRange,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gmlm", version, about = "Treatment effects on heavy-tailed outcomes by the generalized method of L-moments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample L-moments of a single column of values.
    Lmoments(LmomentsArgs),
    /// Two-step fit of treated against control with effect estimates.
    Fit(FitArgs),
    /// Cell-by-cell analysis of a panel experiment.
    Panel(PanelArgs),
    /// Placebo selection of R and trimming on pre-treatment periods.
    Tune(TuneArgs),
    /// Monte Carlo comparison of estimators on a finite population.
    Mc(McArgs),
    /// Learning-versus-price decomposition of a total demand effect.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrimArgs {
    /// Lower trim point of the quantile range.
    #[arg(long, default_value_t = 0.0)]
    pub trim_lo: f64,
    /// Upper trim point of the quantile range.
    #[arg(long, default_value_t = 1.0)]
    pub trim_hi: f64,
}

impl TrimArgs {
    fn range(&self) -> Result<TrimRange, GmlmError> {
        TrimRange::new(self.trim_lo, self.trim_hi)
    }
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl BootstrapArgs {
    fn config(&self) -> BootstrapConfig {
        BootstrapConfig::new(self.replicates, self.seed)
    }
}

#[derive(Debug, Args)]
pub struct LmomentsArgs {
    /// One value per line, header optional.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "R", default_value_t = 4)]
    pub order: usize,
    #[command(flatten)]
    pub trim: TrimArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    LocationScale,
    Location,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub treated: PathBuf,
    #[arg(long)]
    pub control: PathBuf,
    #[arg(long = "R", default_value_t = 4)]
    pub order: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::LocationScale)]
    pub model: ModelArg,
    /// Fit log outcomes instead of levels.
    #[arg(long)]
    pub logs: bool,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[command(flatten)]
    pub trim: TrimArgs,
    #[command(flatten)]
    pub boot: BootstrapArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Identity,
    Optimal,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Orders to search, as a range `2-16` or a list `2,4,8`.
    #[arg(long, default_value = "2-16")]
    pub grid: String,
    /// Use only the last T0 pre-treatment periods.
    #[arg(long)]
    pub t0: Option<usize>,
    #[arg(long, value_enum, default_value_t = WeightingArg::Identity)]
    pub weighting: WeightingArg,
}

impl GridArgs {
    fn grid(&self, trim: TrimRange) -> Result<HyperGrid, CliError> {
        HyperGrid::new(&parse_orders(&self.grid)?, &[trim]).map_err(CliError::Gmlm)
    }

    fn weighting(&self, boot: &BootstrapArgs) -> TuningWeight {
        match self.weighting {
            WeightingArg::Identity => TuningWeight::Identity,
            WeightingArg::Optimal => TuningWeight::Optimal(boot.config()),
        }
    }
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Long CSV with header `unit_id,arm,stratum,period,outcome_type,count`.
    #[arg(long)]
    pub input: PathBuf,
    /// First post-treatment period; earlier labels are pre-treatment.
    #[arg(long)]
    pub cutover: String,
    /// Fixed number of L-moments; tuned on the grid when omitted.
    #[arg(long = "R")]
    pub order: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Cells with fewer observations in either arm are skipped.
    #[arg(long, default_value_t = 10)]
    pub min_cell: usize,
    #[command(flatten)]
    pub trim: TrimArgs,
    #[command(flatten)]
    pub boot: BootstrapArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cutover: String,
    /// Restrict to one outcome type.
    #[arg(long)]
    pub outcome: Option<OutcomeType>,
    /// Restrict to one discount arm.
    #[arg(long)]
    pub discount: Option<Arm>,
    /// Restrict to one stratum.
    #[arg(long)]
    pub stratum: Option<Stratum>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub trim: TrimArgs,
    #[command(flatten)]
    pub boot: BootstrapArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Levels,
    Logs,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// JSON study config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Population file, one value per line.
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Total sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub t0: Option<usize>,
    #[arg(long = "B")]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub ci_level: Option<f64>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// JSON calibration config.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Population section of the `mc` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationConfig {
    /// Relative paths resolve against the config file's directory.
    File { path: PathBuf },
    Synthetic(SyntheticSpec),
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig::Synthetic(SyntheticSpec::default())
    }
}

/// The `mc` config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McFile {
    pub schema_version: Option<u32>,
    pub population: PopulationConfig,
    pub study: McConfig,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Gmlm(GmlmError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_DATA,
            CliError::Gmlm(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Gmlm(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) => f.write_str(m),
            CliError::Gmlm(e) => write!(f, "{e}"),
        }
    }
}

impl From<GmlmError> for CliError {
    fn from(e: GmlmError) -> Self {
        CliError::Gmlm(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `2-16`, `2..=16` or `2,4,8`.
pub fn parse_orders(spec: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("invalid order grid '{spec}' (expected e.g. 2-16 or 2,4,8)"));
    let spec = spec.trim();
    let range = spec.split_once("..=").or_else(|| spec.split_once('-'));
    let orders: Vec<usize> = match range {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => spec
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<CliResult<_>>()?,
    };
    if orders.is_empty() {
        return Err(bad());
    }
    Ok(orders)
}

fn read_sample(path: &Path, logs: bool) -> CliResult<Sample> {
    let s = Sample::new(read_values_csv(path)?)?;
    if !logs {
        return Ok(s);
    }
    if s.min() <= 0.0 {
        return Err(CliError::Gmlm(GmlmError::InvalidArgument(format!(
            "{}: logs need positive values",
            path.display()
        ))));
    }
    Ok(s.map(f64::ln)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn seed_line(seed: u64) -> String {
    format!("seed: {seed}\n")
}

/// Runs one command line, returning the rendered report.
pub fn execute(cli: Cli) -> CliResult<(String, Option<PathBuf>)> {
    match cli.command {
        Command::Lmoments(a) => cmd_lmoments(&a).map(|s| (s, a.out.output)),
        Command::Fit(a) => cmd_fit(&a).map(|s| (s, a.out.output)),
        Command::Panel(a) => cmd_panel(&a).map(|s| (s, a.out.output)),
        Command::Tune(a) => cmd_tune(&a).map(|s| (s, a.out.output)),
        Command::Mc(a) => cmd_mc(&a).map(|s| (s, a.out.output)),
        Command::Decompose(a) => cmd_decompose(&a).map(|s| (s, a.out.output)),
    }
}

#[derive(Serialize)]
struct LmomentsReport {
    n: usize,
    order: usize,
    trim: TrimRange,
    values: Vec<f64>,
}

fn cmd_lmoments(a: &LmomentsArgs) -> CliResult<String> {
    let s = read_sample(&a.input, false)?;
    let l = lmoments(&s, a.order, a.trim.range()?)?;
    let rep = LmomentsReport {
        n: s.len(),
        order: l.order,
        trim: l.trim,
        values: l.values,
    };
    if a.out.format == Format::Json {
        return Ok(json_report("lmoments", None, &rep)? + "\n");
    }
    let mut t = Table::new(["r", "L-moment"]);
    for (r, v) in rep.values.iter().enumerate() {
        t.push(vec![(r + 1).to_string(), sig6(*v)]);
    }
    Ok(format!("n: {}\n{}", rep.n, t.render()))
}

#[derive(Debug, Serialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub model: &'static str,
    pub scale: &'static str,
    pub order: usize,
    pub trim: TrimRange,
    pub n_treated: usize,
    pub n_control: usize,
    pub bootstrap_replicates: usize,
    pub ci_level: f64,
    pub parameters: Vec<ParamRow>,
    pub j_stat: f64,
    pub df: usize,
    pub j_pvalue: f64,
}

fn cmd_fit(a: &FitArgs) -> CliResult<String> {
    let z = normal_critical(a.ci_level)?;
    let t = read_sample(&a.treated, a.logs)?;
    let c = read_sample(&a.control, a.logs)?;
    let trim = a.trim.range()?;
    let cfg = a.boot.config();
    let row = |name: &str, est: f64, se: f64| ParamRow {
        name: name.into(),
        estimate: est,
        se,
        ci_lo: est - z * se,
        ci_hi: est + z * se,
    };
    let (model, parameters, j_stat, df, j_pvalue) = match a.model {
        ModelArg::LocationScale => {
            let e = estimate_effects(&t, &c, a.order, trim, &cfg)?;
            let params = vec![
                row("alpha", e.alpha, e.alpha_se),
                row("sigma", e.sigma, e.sigma_se),
                row("delta", e.delta, e.delta_se),
                row("psi", e.psi, e.psi_se),
            ];
            ("location_scale", params, e.j_stat, a.order - 2, e.j_pvalue)
        }
        ModelArg::Location => {
            let f = two_step(&t, &c, &ModelSpec::LocationOnly, a.order, trim, &cfg, None)?;
            let se = f.std_errors().first().copied().unwrap_or(f64::NAN);
            let alpha = f.fit.theta[0];
            let params = vec![row("alpha", alpha, se), row("delta", alpha, se)];
            ("location", params, f.fit.j_stat, f.fit.df, f.j_pvalue)
        }
    };
    let rep = FitReport {
        model,
        scale: if a.logs { "logs" } else { "levels" },
        order: a.order,
        trim,
        n_treated: t.len(),
        n_control: c.len(),
        bootstrap_replicates: cfg.replicates,
        ci_level: a.ci_level,
        parameters,
        j_stat,
        df,
        j_pvalue,
    };
    if a.out.format == Format::Json {
        return Ok(json_report("fit", Some(cfg.seed), &rep)? + "\n");
    }
    let level = format!("{}%", sig6(100.0 * a.ci_level));
    let mut tab = Table::new(["parameter", "estimate", "se", &format!("{level} lo"), &format!("{level} hi")]);
    for p in &rep.parameters {
        tab.push(vec![p.name.clone(), sig6(p.estimate), sig6(p.se), sig6(p.ci_lo), sig6(p.ci_hi)]);
    }
    Ok(format!(
        "{}model: {} ({}), R = {}, trim = [{}, {}], N = {} + {}, B = {}\n{}J = {} on {} df, p-value = {}\n",
        seed_line(cfg.seed),
        rep.model,
        rep.scale,
        rep.order,
        sig6(trim.lo()),
        sig6(trim.hi()),
        rep.n_treated,
        rep.n_control,
        rep.bootstrap_replicates,
        tab.render(),
        sig6(rep.j_stat),
        rep.df,
        sig6(rep.j_pvalue),
    ))
}

fn cmd_panel(a: &PanelArgs) -> CliResult<String> {
    let trim = a.trim.range()?;
    let order = match a.order {
        Some(order) => OrderChoice::Fixed { order, trim },
        None => OrderChoice::Tuned {
            grid: a.grid.grid(trim)?,
            t0: a.grid.t0,
            weighting: a.grid.weighting(&a.boot),
        },
    };
    let data = parse_panel_csv(&a.input)?;
    let config = PanelConfig {
        cutover: a.cutover.clone(),
        order,
        bootstrap: a.boot.config(),
        min_cell_size: a.min_cell,
    };
    let rep = analyze_panel(&data, &config)?;
    if a.out.format == Format::Json {
        return Ok(json_report("panel", Some(a.boot.seed), &rep)? + "\n");
    }
    Ok(seed_line(a.boot.seed) + &render_panel(&rep))
}

fn cmd_tune(a: &TuneArgs) -> CliResult<String> {
    if a.discount == Some(Arm::Control) {
        return Err(CliError::Usage("--discount must be d20 or d50".into()));
    }
    let grid = a.grid.grid(a.trim.range()?)?;
    let weighting = a.grid.weighting(&a.boot);
    let data = parse_panel_csv(&a.input)?;
    let mut entries = Vec::new();
    for outcome in data.outcome_types() {
        for &discount in Arm::DISCOUNTS {
            for &stratum in Stratum::ALL {
                if a.outcome.is_some_and(|o| o != outcome)
                    || a.discount.is_some_and(|d| d != discount)
                    || a.stratum.is_some_and(|s| s != stratum)
                {
                    continue;
                }
                let selector = CellSelector {
                    outcome,
                    discount,
                    stratum,
                };
                let res = tune_selector(&data, selector, &a.cutover, &grid, a.grid.t0, &weighting);
                let (report, error) = match res {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                entries.push(TuningEntry {
                    selector,
                    report,
                    error,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(CliError::Gmlm(GmlmError::InvalidArgument("no selector matches the filters".into())));
    }
    if entries.iter().all(|e| e.report.is_none()) {
        let first = entries[0].error.clone().unwrap_or_default();
        return Err(CliError::Gmlm(GmlmError::TuningFailed(first)));
    }
    if a.out.format == Format::Json {
        return Ok(json_report("tune", Some(a.boot.seed), &entries)? + "\n");
    }

    let mut out = seed_line(a.boot.seed);
    let mut chosen = Table::new(["outcome", "discount", "stratum", "R", "trim", "criterion", "periods"]);
    for e in &entries {
        let s = e.selector;
        let mut row = vec![s.outcome.to_string(), s.discount.to_string(), s.stratum.to_string()];
        match &e.report {
            Some(r) => row.extend([
                r.chosen.order.to_string(),
                format!("[{}, {}]", sig6(r.chosen.trim.lo()), sig6(r.chosen.trim.hi())),
                sig6(r.chosen_criterion),
                r.t0.to_string(),
            ]),
            None => row.extend(["-".into(), "-".into(), "-".into(), "-".into()]),
        }
        chosen.push(row);
    }
    out.push_str(&chosen.render());
    for e in &entries {
        let s = e.selector;
        out.push_str(&format!("\n{}/{}/{}\n", s.outcome, s.discount, s.stratum));
        match &e.report {
            Some(r) => {
                let mut t = Table::new(["R", "trim lo", "trim hi", "mean criterion"]);
                for c in &r.criteria {
                    t.push(vec![
                        c.point.order.to_string(),
                        sig6(c.point.trim.lo()),
                        sig6(c.point.trim.hi()),
                        opt_sig6(c.mean),
                    ]);
                }
                out.push_str(&t.render());
            }
            None => out.push_str(&format!("failed: {}\n", e.error.as_deref().unwrap_or(""))),
        }
    }
    Ok(out)
}

fn resolve(base: Option<&Path>, path: &Path) -> PathBuf {
    match base {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

/// Merges the optional config file with command-line overrides.
pub fn mc_setup(a: &McArgs) -> CliResult<(PopulationConfig, McConfig)> {
    let file: McFile = match &a.config {
        Some(p) => read_json(p)?,
        None => McFile::default(),
    };
    if let Some(v) = file.schema_version {
        if v != gmlm::io::SCHEMA_VERSION {
            return Err(CliError::Config(format!("unsupported schema_version {v}")));
        }
    }
    let base = a.config.as_deref().and_then(Path::parent);
    let population = match (&a.population, file.population) {
        (Some(p), _) => PopulationConfig::File { path: p.clone() },
        (None, PopulationConfig::File { path }) => PopulationConfig::File {
            path: resolve(base, &path),
        },
        (None, synthetic) => synthetic,
    };
    let mut study = file.study;
    if let Some(v) = &a.sizes {
        study.sizes = v.clone();
    }
    if let Some(v) = a.replications {
        study.replications = v;
    }
    if let Some(v) = a.t0 {
        study.t0 = v;
    }
    if let Some(v) = a.replicates {
        study.bootstrap_replicates = v;
    }
    if let Some(v) = a.ci_level {
        study.ci_level = v;
    }
    if let Some(v) = a.scale {
        study.scale = match v {
            ScaleArg::Levels => OutcomeScale::Levels,
            ScaleArg::Logs => OutcomeScale::Logs,
        };
    }
    if let Some(v) = a.seed {
        study.seed = v;
    }
    Ok((population, study))
}

fn cmd_mc(a: &McArgs) -> CliResult<String> {
    let (population, study) = mc_setup(a)?;
    let pop = match &population {
        PopulationConfig::File { path } => Population::from_file(path)?,
        PopulationConfig::Synthetic(spec) => Population::synthetic(spec)?,
    };
    let res = run_study(&pop, &study)?;
    if a.out.format == Format::Json {
        return Ok(json_report("mc", Some(study.seed), &res)? + "\n");
    }
    let source = match pop.source() {
        PopulationSource::File { path } => format!("file {}", path.display()),
        PopulationSource::Synthetic(s) => format!(
            "synthetic, {} draws ({}·LogNormal({}, {}) + {}·LogNormal({}, {}), seed {})",
            s.size,
            sig6(1.0 - s.tail_weight),
            sig6(s.body_log_mean),
            sig6(s.body_log_sd),
            sig6(s.tail_weight),
            sig6(s.tail_log_mean),
            sig6(s.tail_log_sd),
            s.seed
        ),
        PopulationSource::Values => "values".into(),
    };
    let scale = match study.scale {
        OutcomeScale::Levels => "levels",
        OutcomeScale::Logs => "logs",
    };
    Ok(format!(
        "{}population: {source}\nscale: {scale}, replications: {}, B: {}, placebo periods: {}\n{}",
        seed_line(study.seed),
        study.replications,
        study.bootstrap_replicates,
        study.t0,
        render_mc(&res)
    ))
}

fn cmd_decompose(a: &DecomposeArgs) -> CliResult<String> {
    let cfg: DecompositionConfig = read_json(&a.config)?;
    let rep = decompose(&cfg)?;
    if a.out.format == Format::Json {
        return Ok(json_report("decompose", None, &rep)? + "\n");
    }
    let mut t = Table::new(["unit", "lambda", "direct outside", "direct bundles", "direct single", "learning share"]);
    for u in &rep.units {
        t.push(vec![
            u.id.clone(),
            sig6(u.lambda),
            sig6(u.direct[0]),
            sig6(u.direct[1]),
            sig6(u.direct[2]),
            sig6(u.learning_share),
        ]);
    }
    Ok(format!(
        "{}total effect: {}\nmean direct effect on bundles: {}\nlearning share: {}\n",
        t.render(),
        sig6(cfg.total_effect),
        sig6(rep.mean_direct_bundles),
        sig6(rep.learning_share)
    ))
}

fn usage_text(argv: &[OsString], err: &clap::Error) -> String {
    let mut cmd = Cli::command();
    let sub = argv
        .get(1)
        .and_then(|s| s.to_str())
        .and_then(|name| cmd.find_subcommand_mut(name).cloned());
    let help = match sub {
        Some(mut s) => s.render_help(),
        None => cmd.render_help(),
    };
    format!("{}\n{help}", err.render())
}

/// Runs a full argument vector (program name first), writing the report
/// to `out` or the `--output` file and diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
        Err(e) => {
            let _ = write!(err, "{}", usage_text(&argv, &e));
            return EXIT_USAGE;
        }
    };
    let result = execute(cli).and_then(|(text, path)| match path {
        Some(p) => fs::write(&p, &text).map_err(|e| CliError::Gmlm(GmlmError::Io(format!("{}: {e}", p.display())))),
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::Gmlm(GmlmError::Io(e.to_string()))),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_grids() {
        assert_eq!(parse_orders("2-5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_orders("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_orders(" 8, 2,4").unwrap(), vec![8, 2, 4]);
        for bad in ["", "5-2", "a", "2,,3", "-3"] {
            assert!(parse_orders(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Gmlm(GmlmError::Data { line: 2, message: "x".into() }).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Gmlm(GmlmError::UndefinedShare).exit_code(), EXIT_NUMERICAL);
    }

    #[test]
    fn mc_overrides() {
        let a = McArgs::parse_from_args(&["--sizes", "100,200", "--seed", "7", "--scale", "logs"]);
        let (pop, study) = mc_setup(&a).unwrap();
        assert_eq!(pop, PopulationConfig::default());
        assert_eq!(study.sizes, vec![100, 200]);
        assert_eq!(study.seed, 7);
        assert_eq!(study.scale, OutcomeScale::Logs);
        assert_eq!(study.replications, McConfig::default().replications);
    }

    impl McArgs {
        fn parse_from_args(args: &[&str]) -> McArgs {
            let mut argv = vec!["gmlm", "mc"];
            argv.extend(args);
            match Cli::parse_from(argv).command {
                Command::Mc(a) => a,
                _ => unreachable!(),
            }
        }
    }
}
