//! Subcommand implementations. Every command writes JSON reports into a
//! directory and returns the paths it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use uncx::flags::FlagStore;
use uncx::pipeline::{
    auto_flags, filter_report, intervention_report, load_run, rejection_over_seeds, run_pipeline, FilterReport,
    FlagSource, LoadedRun, RejectionReport, RunConfig, REPORT_FILE,
};
use uncx::store::load_dataset;
use uncx::strategies::{Curve, FilterMethod};
use uncx::synth::{write_synth, SynthSpec};
use uncx::{Error, Result};

pub const FILTER_FILE: &str = "filter.json";
pub const FILTER_CURVES: &str = "filter_curves.csv";
pub const REJECT_FILE: &str = "reject.json";
pub const REJECT_CURVES: &str = "reject_curves.csv";
pub const INTERVENE_FILE: &str = "intervene.json";

#[derive(Debug, Parser)]
#[command(name = "uncx", version, about = "Concept-based explanations of predictive uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Run the full pipeline and write a run directory.
    Pipeline(ConfigArgs),
    /// Rank the uncertain group for noise filtering.
    Filter(FilterArgs),
    /// Rejection curves over every configured seed.
    Reject(RejectArgs),
    /// Ablate concepts and report the fairness effect.
    Intervene(InterveneArgs),
    /// Serve a run directory over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Rejection,
    Biased,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON SynthSpec; fields it omits take the preset's values.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Run configuration: a JSON file plus flag overrides. Flags win.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub d_cer: Option<usize>,
    #[arg(long)]
    pub d_unc: Option<usize>,
    #[arg(long)]
    pub n_qmc: Option<usize>,
    /// Comma separated, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub pooling: Option<String>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Run directory written by `pipeline`.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma separated method names, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub methods: Vec<String>,
    /// Combined concept ids; without this or --auto-flag the run's flag
    /// journal is used.
    #[arg(long, value_delimiter = ',', conflicts_with = "auto_flag")]
    pub flags: Option<Vec<usize>>,
    #[arg(long)]
    pub auto_flag: bool,
}

#[derive(Debug, Args)]
pub struct RejectArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Combined concept ids to ablate.
    #[arg(long, value_delimiter = ',', required = true)]
    pub concepts: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub serve_addr: String,
    /// Directory with the built review UI, served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

/// Exit code for an error: 2 for bad input, 1 for failed computation.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

impl ConfigArgs {
    /// Starts from `base`, applies the config file, then the flags.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => overlay(&base, path, Error::InvalidConfig)?,
            None => base,
        };
        if let Some(d) = &self.dataset {
            config.dataset = d.clone();
        }
        if let Some(o) = &self.out {
            config.out = Some(o.clone());
        }
        if let Some(m) = &self.measure {
            config.measure = m.parse()?;
        }
        if let Some(d) = self.d_cer {
            config.d_cer = d;
        }
        if let Some(d) = self.d_unc {
            config.d_unc = d;
        }
        if let Some(n) = self.n_qmc {
            config.n_qmc = n;
        }
        if let Some(s) = &self.seeds {
            config.seeds = s.clone();
        }
        if let Some(p) = &self.pooling {
            config.pooling = p.parse()?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a JSON object from `path` and lays its fields over `base`.
fn overlay<T: Serialize + serde::de::DeserializeOwned>(
    base: &T,
    path: &Path,
    invalid: fn(String) -> Error,
) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let patch: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(invalid(format!("{} must hold a JSON object", path.display())));
    };
    let mut value = serde_json::to_value(base).expect("serializable");
    let obj = value.as_object_mut().expect("struct serializes to an object");
    for (k, v) in patch {
        obj.insert(k, v);
    }
    serde_json::from_value(value).map_err(|e| invalid(e.to_string()))
}

/// Long-format CSV: one `series,x,y` row per curve point.
pub fn curves_csv<'a>(curves: impl IntoIterator<Item = (&'a str, &'a Curve)>) -> String {
    let mut out = String::from("series,x,y\n");
    for (name, c) in curves {
        for (x, y) in c.x.iter().zip(&c.y) {
            let _ = writeln!(out, "{name},{x},{y}");
        }
    }
    out
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let base = match args.preset {
        Preset::Default => SynthSpec::default(),
        Preset::Rejection => SynthSpec::rejection(0),
        Preset::Biased => SynthSpec::biased(0),
    };
    let mut spec = match &args.spec {
        Some(path) => overlay(&base, path, Error::InvalidSpec)?,
        None => base,
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    write_synth(&args.out, &spec)?;
    Ok(vec![args.out.clone()])
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn cmd_pipeline(args: &ConfigArgs) -> Result<Vec<PathBuf>> {
    let mut config = args.resolve(RunConfig::default())?;
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::InvalidConfig("an output directory is required (--out)".into()))?;
    if config.dataset.as_os_str().is_empty() {
        return Err(Error::InvalidConfig("a dataset directory is required (--dataset)".into()));
    }
    if !config.dataset.is_dir() {
        return Err(Error::MissingFile(config.dataset.clone()));
    }
    config.dataset = absolute(&config.dataset);
    let dataset = load_dataset(&config.dataset)?;
    let run = run_pipeline(&dataset, &config, config.primary_seed())?;
    run.save(&dataset, &out)?;
    Ok(vec![out.join(REPORT_FILE)])
}

/// How the filter obtains its flagged concepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlagChoice {
    Explicit(Vec<usize>),
    Auto,
    /// The flags currently set in the run's journal.
    Journal,
}

/// Shared by the CLI and the service so both produce the same rankings.
pub fn run_filter(
    run_dir: &Path,
    loaded: &LoadedRun,
    choice: &FlagChoice,
    methods: &[FilterMethod],
) -> Result<FilterReport> {
    let (flags, source, fit) = match choice {
        FlagChoice::Explicit(f) => (f.clone(), FlagSource::Explicit, None),
        FlagChoice::Auto => {
            let (ids, fit) = auto_flags(&loaded.run, &loaded.dataset)?;
            (ids, FlagSource::Auto, Some(fit))
        }
        FlagChoice::Journal => (FlagStore::open(run_dir)?.flagged(), FlagSource::Journal, None),
    };
    filter_report(&loaded.run, &loaded.dataset, &flags, source, fit, methods)
}

pub fn parse_methods(names: &[String]) -> Result<Vec<FilterMethod>> {
    if names.is_empty() || names.iter().any(|n| n.eq_ignore_ascii_case("all")) {
        return Ok(FilterMethod::ALL.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        let m: FilterMethod = n.trim().parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

pub fn cmd_filter(args: &FilterArgs) -> Result<Vec<PathBuf>> {
    let loaded = load_run(&args.out)?;
    let methods = parse_methods(&args.methods)?;
    let choice = match (&args.flags, args.auto_flag) {
        (Some(f), _) => FlagChoice::Explicit(f.clone()),
        (None, true) => FlagChoice::Auto,
        (None, false) => FlagChoice::Journal,
    };
    let report = run_filter(&args.out, &loaded, &choice, &methods)?;
    let json = args.out.join(FILTER_FILE);
    write_json(&json, &report)?;
    let mut written = vec![json];
    let curves: Vec<(&str, &Curve)> = report
        .methods
        .iter()
        .filter_map(|m| Some((m.method.name(), m.curve.as_ref()?)))
        .collect();
    if !curves.is_empty() {
        let csv = args.out.join(FILTER_CURVES);
        write_text(&csv, &curves_csv(curves))?;
        written.push(csv);
    }
    Ok(written)
}

pub fn rejection_csv(report: &RejectionReport) -> String {
    let mut series: Vec<(String, &Curve)> = Vec::new();
    for m in &report.curves.methods {
        series.push((format!("{}:accuracy", m.method.name()), &m.accuracy_curve));
        if let Some(c) = &m.ood_curve {
            series.push((format!("{}:ood", m.method.name()), c));
        }
    }
    curves_csv(series.iter().map(|(n, c)| (n.as_str(), *c)))
}

pub fn cmd_reject(args: &RejectArgs) -> Result<Vec<PathBuf>> {
    let run_dir = args
        .config
        .out
        .clone()
        .ok_or_else(|| Error::InvalidConfig("the run directory is required (--out)".into()))?;
    let loaded = load_run(&run_dir)?;
    let config = args.config.resolve(loaded.report.config.clone())?;
    let dataset = if config.dataset == loaded.report.config.dataset {
        loaded.dataset
    } else {
        load_dataset(&config.dataset)?
    };
    let report = rejection_over_seeds(&dataset, &config)?;
    let json = run_dir.join(REJECT_FILE);
    write_json(&json, &report)?;
    let csv = run_dir.join(REJECT_CURVES);
    write_text(&csv, &rejection_csv(&report))?;
    Ok(vec![json, csv])
}

pub fn cmd_intervene(args: &InterveneArgs) -> Result<Vec<PathBuf>> {
    let loaded = load_run(&args.out)?;
    let report = intervention_report(&loaded.run, &loaded.dataset, &args.concepts)?;
    let json = args.out.join(INTERVENE_FILE);
    write_json(&json, &report)?;
    Ok(vec![json])
}

/// Runs one parsed command. `serve` blocks until shutdown.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Reject(a) => cmd_reject(a),
        Command::Intervene(a) => cmd_intervene(a),
        Command::Serve(a) => {
            crate::service::serve_blocking(&a.out, &a.serve_addr, a.ui_dir.as_deref())?;
            Ok(Vec::new())
        }
    }
}
