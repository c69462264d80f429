//! Command-line front end: `simulate`, `precompute`, `fit`, `eval`, `oracle-check`, `study`, `plotdata`.
//!
//! Every failure is reported as one JSON object on stderr (see [`ERROR_SCHEMA`]) and
//! mapped to exit code 2 (usage or validation), 3 (resource limit) or 4 (numerical).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{
    drop_degenerate, load_dataset_with, save_dataset, validate_dataset, Dataset, GammaSpec,
    HeterogeneitySpec, LoadOptions,
};
use crate::dioph::{build_cache, compositions_count, compositions_cum, load_cache, log10_biguint, DEFAULT_ADMISSION_LIMIT};
use crate::error::{Error, Result};
use crate::optimize::{
    grid_fit_workspace, newton_fit, pilot_center, FitFamily, FitResult, GridSpec, NewtonOptions,
};
use crate::oracle::{mc_h, quadrature_h, QuadConfig};
use crate::series::{signatures, CacheSet, SeriesConfig, Workspace};
use crate::sim::{parity_study, run_study, simulate_dataset, GridCenter, SimDesign};

/// Must name the same number as `dioph::CACHE_FORMAT_VERSION`.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (cache format v1)");

/// Environment variable naming the cache directory.
pub const CACHE_DIR_ENV: &str = "CONJLOGIT_CACHE_DIR";

const DEFAULT_CACHE_DIR: &str = ".conjlogit-cache";

/// JSON Schema for the error document written to stderr.
pub const ERROR_SCHEMA: &str = r#"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "conjlogit error",
  "type": "object",
  "required": ["error", "message", "exit_code"],
  "properties": {
    "error": { "type": "string" },
    "message": { "type": "string" },
    "exit_code": { "type": "integer", "enum": [2, 3, 4] }
  },
  "additionalProperties": false
}"#;

#[derive(Debug, Parser)]
#[command(name = "conjlogit", version = VERSION, about = "Closed-form marginal likelihoods for heterogeneous logit panels")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON object whose keys are flag names; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one replicate of a panel design.
    Simulate(SimulateArgs),
    /// Build Diophantine caches for every covariate signature of a dataset.
    Precompute(PrecomputeArgs),
    /// Maximise the marginal likelihood over a grid, optionally refined by Newton.
    Fit(FitArgs),
    /// Evaluate log L at one parameter point.
    Eval(EvalArgs),
    /// Compare series, quadrature and Monte Carlo household likelihoods.
    OracleCheck(OracleArgs),
    /// Run a simulation study and summarise t-statistics.
    Study(StudyArgs),
    /// Write the log-likelihood over a grid as CSV.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Multiply covariates by this factor and round to integers.
    #[arg(long)]
    rescale: Option<f64>,
    /// Remove observations whose covariates are all zero.
    #[arg(long)]
    drop_degenerate: bool,
}

#[derive(Debug, Args)]
struct SeriesArgs {
    /// Truncation budget.
    #[arg(long = "R", default_value_t = 100)]
    budget: u32,
    /// Cache directory (default: $CONJLOGIT_CACHE_DIR, then .conjlogit-cache).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Build and store missing caches instead of failing.
    #[arg(long)]
    build_cache: bool,
    /// Sum the series term by term without caches.
    #[arg(long)]
    naive: bool,
    #[arg(long, default_value_t = DEFAULT_ADMISSION_LIMIT)]
    admission_limit: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gamma,
    PointMassGamma,
    CheriyanRamabhadran,
}

#[derive(Debug, Args)]
struct FamilyArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Gamma)]
    family: FamilyArg,
    /// Translation of the Gamma families.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Points per axis, e.g. `5x7`; a single count applies to every axis.
    #[arg(long, value_parser = parse_counts, default_value = "5")]
    grid: Counts,
    /// Spacing per axis; a single value applies to every axis.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    spacing: Vec<f64>,
    /// Grid centre; defaults to the pooled-logit pilot (gamma family only).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "center_at_truth")]
    center: Option<Vec<f64>>,
    /// Centre the grid at the parameters in `--truth`.
    #[arg(long, requires = "truth")]
    center_at_truth: bool,
    /// Heterogeneity spec JSON, as written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PointArgs {
    /// Heterogeneity spec JSON.
    #[arg(long, conflicts_with = "params")]
    spec: Option<PathBuf>,
    /// Parameters of `--family` in its documented order.
    #[arg(long, value_delimiter = ',', required_unless_present = "spec")]
    params: Option<Vec<f64>>,
    #[command(flatten)]
    family: FamilyArgs,
}

#[derive(Debug, Args)]
struct TruthArgs {
    /// Households.
    #[arg(long = "I")]
    households: Option<usize>,
    /// Attributes.
    #[arg(long = "P", default_value_t = 1)]
    attributes: usize,
    /// Gamma scales, one per attribute.
    #[arg(long, value_delimiter = ',')]
    b: Option<Vec<f64>>,
    /// Gamma shapes, one per attribute.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1)]
    categories: u32,
    #[arg(long, default_value_t = 1)]
    occasions: u32,
    /// Covariate scale c; chosen from the truth when absent.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Complete design JSON; replaces the flags above.
    #[arg(long, conflicts_with_all = ["households", "b", "n"])]
    design: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    truth: TruthArgs,
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    /// Output dataset CSV.
    #[arg(short, long)]
    out: PathBuf,
    /// Output truth JSON (default: `<out>.truth.json`).
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PrecomputeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long = "R", default_value_t = 100)]
    budget: u32,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ADMISSION_LIMIT)]
    admission_limit: u64,
    /// Print the admission estimates and build nothing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    series: SeriesArgs,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Refine the grid optimum by Newton's method (gamma family only).
    #[arg(long)]
    newton: bool,
    #[arg(long, default_value_t = 50)]
    newton_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    newton_tol: f64,
    /// FitResult JSON; without it the JSON goes to stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    series: SeriesArgs,
    #[command(flatten)]
    point: PointArgs,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    series: SeriesArgs,
    #[command(flatten)]
    point: PointArgs,
    /// Relative tolerance between series and quadrature.
    #[arg(long, default_value_t = 5e-3)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    quad_tol: f64,
    #[arg(long, default_value_t = 100_000)]
    draws: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check at most this many distinct households.
    #[arg(long, default_value_t = 20)]
    max_households: usize,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    truth: TruthArgs,
    #[arg(long = "R", default_value_t = 100)]
    budget: u32,
    #[arg(long, default_value_t = 25)]
    replicates: usize,
    #[arg(long, value_parser = parse_counts, default_value = "5x7")]
    grid: Counts,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    spacing: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "center_at_truth")]
    center: Option<Vec<f64>>,
    #[arg(long)]
    center_at_truth: bool,
    /// Bonferroni family size.
    #[arg(long)]
    tests: Option<usize>,
    /// Also report the parity spread between consecutive budgets at these budgets.
    #[arg(long, value_delimiter = ',')]
    parity: Option<Vec<u32>>,
    /// SimReport CSV.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Directory for per-replicate FitResult JSON.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    series: SeriesArgs,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Grid points per axis.
#[derive(Debug, Clone)]
struct Counts(Vec<usize>);

fn parse_counts(s: &str) -> std::result::Result<Counts, String> {
    s.split(['x', 'X', ','])
        .map(|t| match t.trim().parse::<usize>() {
            Ok(0) => Err("grid counts must be >= 1".to_string()),
            Ok(v) => Ok(v),
            Err(e) => Err(format!("bad grid count `{t}`: {e}")),
        })
        .collect::<std::result::Result<_, _>>()
        .map(Counts)
}

/// Runs the CLI against the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match apply_config(args) {
        Ok(a) => a,
        Err(e) => return report(err, e.kind(), &e.to_string(), e.exit_code()),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            return report(err, "usage", e.render().to_string().trim_end(), 2);
        }
    };
    let mut buf = Vec::new();
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(cli.command, &mut buf))),
        None => dispatch(cli.command, &mut buf),
    };
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => report(err, e.kind(), &e.to_string(), e.exit_code()),
    }
}

fn report(err: &mut dyn Write, kind: &str, message: &str, code: i32) -> i32 {
    let doc = json!({ "error": kind, "message": message, "exit_code": code });
    let _ = writeln!(err, "{doc}");
    code
}

/// Appends `--key value` for every config key not already given on the command line.
fn apply_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            path = args.get(i + 1).map(|p| PathBuf::from(p.clone()));
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
            break;
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text)?;
    let Value::Object(map) = doc else {
        return Err(Error::Config("config file must hold a JSON object".into()));
    };
    let given: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let present = |flag: &str| {
        given.iter().any(|g| g == flag || g.starts_with(&format!("{flag}=")))
            || (flag == "--out" && given.iter().any(|g| g == "-o"))
    };
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if key == "config" || present(&flag) {
            continue;
        }
        let scalar = |v: &Value| -> Result<String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(Error::Config(format!("config key `{key}` has an unsupported value"))),
            }
        };
        match &value {
            Value::Bool(true) => args.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts: Result<Vec<String>> = items.iter().map(scalar).collect();
                args.push(flag.into());
                args.push(parts?.join(",").into());
            }
            v => {
                args.push(flag.into());
                args.push(scalar(v)?.into());
            }
        }
    }
    Ok(args)
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Precompute(a) => cmd_precompute(a, out),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::OracleCheck(a) => cmd_oracle_check(a, out),
        Command::Study(a) => cmd_study(a, out),
        Command::Plotdata(a) => cmd_plotdata(a, out),
    }
}

fn load_data(a: &DataArgs) -> Result<Dataset> {
    let mut d = load_dataset_with(&a.data, LoadOptions { rescale: a.rescale })?;
    if a.drop_degenerate {
        d = drop_degenerate(&d).0;
    }
    let violations = validate_dataset(&d);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidData(format!("{v} ({} violation(s) in total)", violations.len())));
    }
    Ok(d)
}

fn cache_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum CacheStatus {
    Reused,
    Built,
}

/// Loads each signature's cache from `dir`, building and saving missing or stale ones when `build`.
fn ensure_caches(
    d: &Dataset,
    budget: u32,
    dir: &Path,
    build: bool,
    limit: u64,
) -> Result<(CacheSet, Vec<(PathBuf, CacheStatus)>)> {
    let mut set = CacheSet::new();
    let mut status = Vec::new();
    for x in signatures(d)? {
        let path = CacheSet::path_for(dir, &x, budget);
        let loaded = path.exists().then(|| {
            load_cache(&path).and_then(|c| {
                c.ensure_matches(&x)?;
                if c.budget() != budget {
                    return Err(Error::CacheMismatch(format!(
                        "{} has budget {}, requested {budget}",
                        path.display(),
                        c.budget()
                    )));
                }
                Ok(c)
            })
        });
        match loaded {
            Some(Ok(c)) => {
                set.insert(c);
                status.push((path, CacheStatus::Reused));
            }
            Some(Err(e)) if !build => return Err(e),
            None if !build => {
                return Err(Error::CacheMismatch(format!(
                    "no cache at {}; run precompute or pass --build-cache",
                    path.display()
                )))
            }
            _ => {
                let c = build_cache(&x, budget, limit)?;
                std::fs::create_dir_all(dir)?;
                crate::dioph::save_cache(&c, &path)?;
                set.insert(c);
                status.push((path, CacheStatus::Built));
            }
        }
    }
    Ok((set, status))
}

fn workspace(d: &Dataset, s: &SeriesArgs) -> Result<Workspace> {
    if s.naive {
        return Workspace::build(d, &SeriesConfig::naive(s.budget));
    }
    let cfg = SeriesConfig { admission_limit: s.admission_limit, ..SeriesConfig::new(s.budget) };
    let (caches, _) = ensure_caches(d, s.budget, &cache_dir(&s.cache_dir), s.build_cache, s.admission_limit)?;
    Workspace::with_caches(d, &cfg, caches)
}

fn fit_family(f: &FamilyArgs, p: usize) -> FitFamily {
    match f.family {
        FamilyArg::Gamma => FitFamily::Gamma { p, epsilon: f.epsilon },
        FamilyArg::PointMassGamma => FitFamily::PointMassGamma { p, epsilon: f.epsilon },
        FamilyArg::CheriyanRamabhadran => FitFamily::CheriyanRamabhadran,
    }
}

/// Repeats a single value across `k` axes.
fn broadcast<T: Clone>(v: &[T], k: usize, what: &str) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); k]),
        n if n == k => Ok(v.to_vec()),
        n => Err(Error::Config(format!("{what} has {n} entries, the family needs 1 or {k}"))),
    }
}

fn grid_spec(g: &GridArgs, family: &FitFamily, d: &Dataset) -> Result<GridSpec> {
    let k = family.n_params();
    let centers = if g.center_at_truth {
        let path = g.truth.as_ref().ok_or_else(|| Error::Config("--center-at-truth needs --truth".into()))?;
        let truth = HeterogeneitySpec::load(path)?;
        family.params_of(&truth).ok_or_else(|| {
            Error::Config(format!("truth in {} is not a {} distribution", path.display(), family.name()))
        })?
    } else if let Some(c) = &g.center {
        c.clone()
    } else {
        match family {
            FitFamily::Gamma { .. } => {
                let pilot = pilot_center(d)?;
                pilot.b.iter().zip(&pilot.n).flat_map(|(b, n)| [*b, *n]).collect()
            }
            _ => return Err(Error::Config(format!("{} needs --center or --center-at-truth", family.name()))),
        }
    };
    if centers.len() != k {
        return Err(Error::Config(format!("centre has {} values, {} needs {k}", centers.len(), family.name())));
    }
    GridSpec::new(&centers, &broadcast(&g.grid.0, k, "--grid")?, &broadcast(&g.spacing, k, "--spacing")?)
}

fn point_spec(p: &PointArgs, n_attributes: usize) -> Result<HeterogeneitySpec> {
    match (&p.spec, &p.params) {
        (Some(path), _) => HeterogeneitySpec::load(path),
        (None, Some(params)) => fit_family(&p.family, n_attributes).to_spec(params),
        (None, None) => Err(Error::Config("give --spec or --params".into())),
    }
}

fn write_out(path: &Option<PathBuf>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn design_from(t: &TruthArgs) -> Result<SimDesign> {
    if let Some(path) = &t.design {
        let design: SimDesign = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        design.validate()?;
        return Ok(design);
    }
    let missing = |f: &str| Error::Config(format!("missing required flag --{f} (or --design)"));
    let households = t.households.ok_or_else(|| missing("I"))?;
    let b = broadcast(t.b.as_ref().ok_or_else(|| missing("b"))?, t.attributes, "--b")?;
    let n = broadcast(t.n.as_ref().ok_or_else(|| missing("n"))?, t.attributes, "--n")?;
    let truth = HeterogeneitySpec::IndependentGamma(GammaSpec::new(b, n, t.epsilon)?);
    let mut design = SimDesign::single_observation(truth, households, 100, 1, vec![1; 2 * t.attributes], 0.1, t.seed);
    design.categories = t.categories;
    design.occasions = t.occasions;
    design.scale = t.scale;
    design.validate()?;
    Ok(design)
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let design = design_from(&a.truth)?;
    let d = simulate_dataset(&design, a.replicate)?;
    save_dataset(&d, &a.out)?;
    let truth_path = a.truth_out.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".truth.json");
        PathBuf::from(s)
    });
    std::fs::write(&truth_path, design.truth.to_json())?;
    let ones = d.households.iter().flat_map(|h| &h.observations).filter(|o| o.y == 1).count();
    writeln!(
        out,
        "households={} observations={} rate_y1={:.4} scale={} data={} truth={}",
        d.households.len(),
        d.n_observations(),
        ones as f64 / d.n_observations() as f64,
        design.effective_scale(),
        a.out.display(),
        truth_path.display()
    )?;
    Ok(())
}

fn cmd_precompute(a: PrecomputeArgs, out: &mut dyn Write) -> Result<()> {
    let d = load_data(&a.data)?;
    let sigs = signatures(&d)?;
    let dir = cache_dir(&a.cache_dir);
    writeln!(out, "signatures={} budget={} cache_dir={}", sigs.len(), a.budget, dir.display())?;
    writeln!(out, "x_hash,observations,attributes,log10_top_level,admitted_tuples,log10_admitted,within_limit")?;
    for x in &sigs {
        let m = x[0].len() as u64;
        let top = compositions_count(a.budget as u64, m);
        let admitted = compositions_cum(a.budget as u64, m);
        let within = admitted <= num_bigint::BigUint::from(a.admission_limit.min(i64::MAX as u64));
        writeln!(
            out,
            "{:016x},{m},{},{:.2},{admitted},{:.2},{within}",
            crate::dioph::x_hash(x),
            x.len(),
            log10_biguint(&top),
            log10_biguint(&admitted)
        )?;
    }
    if a.dry_run {
        return Ok(());
    }
    let (_, status) = ensure_caches(&d, a.budget, &dir, true, a.admission_limit)?;
    for (path, s) in &status {
        writeln!(out, "{} {}", serde_json::to_value(s)?.as_str().unwrap_or(""), path.display())?;
    }
    Ok(())
}

fn summary_table(fit: &FitResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "family={} loglik={:.6} boundary={}", fit.family.name(), fit.loglik, fit.boundary_flag);
    for (name, v) in fit.param_names.iter().zip(&fit.omega_hat) {
        let _ = writeln!(s, "{name:>8} {v:.6}");
    }
    if let (Some(it), Some(c)) = (fit.newton_iters, fit.converged) {
        let _ = writeln!(s, "newton_iters={it} converged={c}");
    }
    s
}

fn cmd_fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let d = load_data(&a.data)?;
    let family = fit_family(&a.family, d.n_attributes);
    let grid = grid_spec(&a.grid, &family, &d)?;
    let ws = workspace(&d, &a.series)?;
    let fit = grid_fit_workspace(&ws, &family, &grid)?;
    let (doc, table) = if a.newton {
        let FitFamily::Gamma { .. } = family else {
            return Err(Error::Config("--newton refines the gamma family only".into()));
        };
        let HeterogeneitySpec::IndependentGamma(start) = family.to_spec(&fit.omega_hat)? else {
            unreachable!("gamma family yields gamma specs")
        };
        let opts = NewtonOptions::new(a.newton_iters, a.newton_tol);
        let refined = newton_fit(&ws, &start, &opts)?;
        let table = format!("{}{}", summary_table(&fit), summary_table(&refined));
        (serde_json::to_string_pretty(&json!({ "grid": fit, "newton": refined }))?, table)
    } else {
        (serde_json::to_string_pretty(&fit)?, summary_table(&fit))
    };
    match &a.out {
        Some(p) => {
            std::fs::write(p, doc)?;
            out.write_all(table.as_bytes())?;
        }
        None => writeln!(out, "{doc}")?,
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let d = load_data(&a.data)?;
    let spec = point_spec(&a.point, d.n_attributes)?;
    let ws = workspace(&d, &a.series)?;
    let e = ws.log_marginal(&spec)?;
    let doc = json!({
        "loglik": e.value,
        "parity_spread": e.parity_spread,
        "tail_bound": e.tail_bound,
        "terms": e.terms,
        "budget": a.series.budget,
        "households": ws.n_households(),
        "groups": ws.n_groups(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct OracleRow {
    household: u64,
    multiplicity: u64,
    series: f64,
    parity_spread: Option<f64>,
    quadrature: Option<f64>,
    quadrature_error: Option<f64>,
    monte_carlo: Option<f64>,
    monte_carlo_se: Option<f64>,
    series_rel_err: Option<f64>,
    series_pass: Option<bool>,
    mc_pass: Option<bool>,
    note: Option<String>,
}

fn cmd_oracle_check(a: OracleArgs, out: &mut dyn Write) -> Result<()> {
    let d = load_data(&a.data)?;
    let spec = point_spec(&a.point, d.n_attributes)?;
    let ws = workspace(&d, &a.series)?;
    let units = d.units();
    let by_id: HashMap<u64, &crate::data::Household> = d.households.iter().map(|h| (h.id, h)).collect();
    let qc = QuadConfig { rel_tol: a.quad_tol, ..QuadConfig::default() };
    let mut rows = Vec::new();
    for (id, mult, e) in ws.household_values(&spec)?.into_iter().take(a.max_households) {
        let h = by_id[&id];
        let mut row = OracleRow {
            household: id,
            multiplicity: mult,
            series: e.value,
            parity_spread: e.parity_spread,
            quadrature: None,
            quadrature_error: None,
            monte_carlo: None,
            monte_carlo_se: None,
            series_rel_err: None,
            series_pass: None,
            mc_pass: None,
            note: None,
        };
        match quadrature_h(h, &units, &spec, &qc) {
            Ok(q) => {
                let rel = (e.value - q.value).abs() / q.value.abs();
                row.quadrature = Some(q.value);
                row.quadrature_error = Some(q.error);
                row.series_rel_err = Some(rel);
                row.series_pass = Some(rel <= a.rel_tol);
            }
            Err(err) => row.note = Some(err.to_string()),
        }
        match mc_h(h, &units, &spec, a.draws, a.seed) {
            Ok(m) => {
                row.monte_carlo = Some(m.value);
                row.monte_carlo_se = Some(m.std_error);
                if let Some(q) = row.quadrature {
                    let slack = 4.0 * m.std_error + row.quadrature_error.unwrap_or(0.0);
                    row.mc_pass = Some((m.value - q).abs() <= slack.max(1e-12 * q.abs()));
                }
            }
            Err(err) => row.note = Some(err.to_string()),
        }
        rows.push(row);
    }
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.10e}"));
    let flag = |v: Option<bool>| v.map_or_else(|| "n/a".to_string(), |b| if b { "PASS" } else { "FAIL" }.into());
    let mut table = String::from("household,multiplicity,series,quadrature,monte_carlo,mc_se,series_rel_err,series,mc\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{},{},{:.10e},{},{},{},{},{},{}",
            r.household,
            r.multiplicity,
            r.series,
            opt(r.quadrature),
            opt(r.monte_carlo),
            opt(r.monte_carlo_se),
            opt(r.series_rel_err),
            flag(r.series_pass),
            flag(r.mc_pass)
        );
    }
    out.write_all(table.as_bytes())?;
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&rows)?)?;
    }
    let worst = rows.iter().filter_map(|r| r.series_rel_err).fold(0.0, f64::max);
    if rows.iter().any(|r| r.series_pass == Some(false) || r.mc_pass == Some(false)) {
        return Err(Error::ToleranceNotMet { achieved: worst, requested: a.rel_tol });
    }
    Ok(())
}

fn cmd_study(a: StudyArgs, out: &mut dyn Write) -> Result<()> {
    let mut design = design_from(&a.truth)?;
    if a.truth.design.is_none() {
        let family = design.family()?;
        let k = family.n_params();
        design.budget = a.budget;
        design.replicates = a.replicates;
        design.grid_counts = broadcast(&a.grid.0, k, "--grid")?;
        design.grid_spacing = broadcast(&a.spacing, k, "--spacing")?;
        design.center = if a.center_at_truth {
            GridCenter::Truth
        } else if let Some(c) = &a.center {
            GridCenter::Fixed { values: c.clone() }
        } else {
            GridCenter::Pilot
        };
        if let Some(t) = a.tests {
            design.bonferroni_tests = t;
        }
        design.validate()?;
    }
    let report = run_study(&design)?;
    if let Some(dir) = &a.trace_dir {
        std::fs::create_dir_all(dir)?;
        for r in &report.replicates {
            std::fs::write(dir.join(format!("replicate-{:04}.json", r.index)), serde_json::to_string_pretty(r)?)?;
        }
    }
    let csv = report.to_csv();
    write_out(&a.out, &csv, out)?;
    writeln!(
        out,
        "scale={} replicates={} failed={} boundary_hits={} all_pass={}",
        report.scale,
        report.replicates.len(),
        report.failed_replicates,
        report.boundary_hits,
        report.all_pass()
    )?;
    if let Some(budgets) = &a.parity {
        writeln!(out, "budget,next,max_spread,failed_points")?;
        for row in parity_study(&design, budgets)? {
            writeln!(out, "{},{},{:e},{}", row.budget, row.next, row.max_spread, row.failed_points)?;
        }
    }
    Ok(())
}

fn cmd_plotdata(a: PlotArgs, out: &mut dyn Write) -> Result<()> {
    let d = load_data(&a.data)?;
    let family = fit_family(&a.family, d.n_attributes);
    let grid = grid_spec(&a.grid, &family, &d)?;
    let ws = workspace(&d, &a.series)?;
    let trace = grid_fit_workspace(&ws, &family, &grid)?.trace;
    let mut csv = family.param_names().join(",");
    csv.push_str(",loglik,parity_spread,error\n");
    for t in &trace {
        let params: Vec<String> = t.params.iter().map(|v| v.to_string()).collect();
        let err = t.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            params.join(","),
            t.loglik.map_or_else(String::new, |v| v.to_string()),
            t.parity_spread.map_or_else(String::new, |v| v.to_string()),
            err
        );
    }
    write_out(&a.out, &csv, out)
}
