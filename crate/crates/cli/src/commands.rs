//! Argument parsing and the four subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use convmpt_core::{
    synth_dataset, synth_multiclass, train, Activation, MulticlassSynthConfig, RepresentationMode, SynthConfig,
    SynthSignal, TrainConfig,
};

use crate::error::{CliError, CliResult};
use crate::eval::{cross_validate, cross_validate_ova, CvReport, EvalOptions, Grid, OvaCvReport};
use crate::io::{
    dataset_name, fingerprint, fingerprint_multiclass, load_dataset, load_multiclass, read_file, save_dataset,
    sha256_hex, write_file, write_jsonl, write_multiclass_jsonl, Format,
};
use crate::manifest::{build_report, DatasetInfo, Outcome, RunManifest, Timings, TrainOutcome, MANIFEST_FORMAT_VERSION};
use crate::model_file::ModelFile;

pub const THREADS_ENV: &str = "CONVMPT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "convmpt", version, about = "Convolutional multi-instance Pos@Top training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bag dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Stratified k-fold evaluation.
    Eval(EvalArgs),
    /// Merge run manifests into a comparison table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SignalArg {
    Witness,
    MeanShift,
}

impl From<SignalArg> for SynthSignal {
    fn from(s: SignalArg) -> Self {
        match s {
            SignalArg::Witness => SynthSignal::WitnessInstance,
            SignalArg::MeanShift => SynthSignal::MeanShift,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub pos: usize,
    #[arg(long, default_value_t = 50)]
    pub neg: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Bag size range `lo:hi`, inclusive.
    #[arg(long, default_value = "5:20", value_parser = parse_range)]
    pub bag: (usize, usize),
    #[arg(long, value_enum, default_value_t = SignalArg::Witness)]
    pub signal: SignalArg,
    /// Planted signal strength; defaults depend on the signal kind.
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; JSONL goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    pub format: Format,
    /// Generate a multi-class set with this many classes (JSONL with a `class` field).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Number of filters.
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    /// Outer alternation iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<RepresentationMode>,
    /// Initial filter step size.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Gradient steps per filter per outer iteration.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Dual solver KKT tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Method label used in manifests and reports.
    #[arg(long)]
    pub name: Option<String>,
}

impl ModelArgs {
    pub fn config(&self) -> CliResult<TrainConfig> {
        let mut c = TrainConfig { seed: self.seed, ..TrainConfig::default() };
        if let Some(v) = self.filters {
            c.filters = v;
        }
        if let Some(v) = self.c1 {
            c.c1 = v;
        }
        if let Some(v) = self.c2 {
            c.c2 = v;
        }
        if let Some(v) = self.iters {
            c.outer_iters = v;
        }
        if let Some(v) = self.activation {
            c.activation = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.eta {
            c.optimizer.eta = v;
        }
        if let Some(v) = self.steps {
            c.optimizer.steps_per_filter = v;
        }
        if let Some(v) = self.init_scale {
            c.init_scale = v;
        }
        if let Some(v) = self.tol {
            c.dual_tol = v;
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    fn method(&self, config: &TrainConfig) -> String {
        self.name.clone().unwrap_or_else(|| mode_name(config.mode).to_string())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Defaults to `<out stem>.manifest.json` next to the model.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Inner search grid, e.g. `--grid c1=0.1,1,10 c2=0.001,0.01`.
    #[arg(long, num_args = 1..)]
    pub grid: Vec<String>,
    /// Tune C1 and C2 over the default grid.
    #[arg(long)]
    pub tune: bool,
    #[arg(long, default_value_t = 3)]
    pub inner_folds: usize,
    /// One-vs-all evaluation of a multi-class JSONL file.
    #[arg(long)]
    pub ova: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the per-fold table as CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("`{s}` is not lo:hi"))?;
    let lo = lo.trim().parse().map_err(|e| format!("`{lo}`: {e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("`{hi}`: {e}"))?;
    Ok((lo, hi))
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse().map_err(|e: convmpt_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<RepresentationMode, String> {
    s.parse().map_err(|e: convmpt_core::Error| e.to_string())
}

fn mode_name(mode: RepresentationMode) -> &'static str {
    match mode {
        RepresentationMode::Conv => "conv",
        RepresentationMode::MeanPoolBaseline => "baseline",
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

/// Parses `args` (including the program name), runs the command on a thread
/// pool sized by `CONVMPT_THREADS`, and returns the process exit code. Output
/// is buffered and written once the command finishes.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let _ = write!(err, "{}", e.render());
            let _ = writeln!(err, "{}", CliError::Usage(message).to_json());
            return 2;
        }
    };
    let echo: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let (mut out_buf, mut err_buf) = (Vec::new(), Vec::new());
    let result =
        thread_pool().and_then(|pool| pool.install(|| dispatch(cli.command, echo, &mut out_buf, &mut err_buf)));
    let _ = out.write_all(&out_buf);
    let _ = err.write_all(&err_buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json());
            e.exit_code()
        }
    }
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
}

fn dispatch(command: Command, echo: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, echo, out, err),
        Command::Eval(a) => cmd_eval(&a, echo, out, err),
        Command::Report(a) => cmd_report(&a, out, err),
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let signal = SynthSignal::from(a.signal);
    let strength = a.strength.unwrap_or_else(|| signal.default_strength());
    let mut buf = Vec::new();
    if let Some(classes) = a.classes {
        if a.format == Format::CsvDir {
            return Err(CliError::Usage("multi-class data is only written as JSONL".into()));
        }
        let config =
            MulticlassSynthConfig { classes, per_class: a.per_class, dim: a.dim, bag_size: a.bag, strength, seed: a.seed };
        write_multiclass_jsonl(&synth_multiclass(&config)?, &mut buf)?;
    } else {
        let config = SynthConfig { strength, ..SynthConfig::new(a.pos, a.neg, a.dim, a.bag, signal, a.seed) };
        let dataset = synth_dataset(&config)?;
        if a.format == Format::CsvDir {
            let dir = a.out.as_ref().ok_or_else(|| CliError::Usage("--format csv-dir needs --out".into()))?;
            return save_dataset(&dataset, dir, Format::CsvDir);
        }
        write_jsonl(&dataset, &mut buf)?;
    }
    match &a.out {
        Some(path) => write_file(path, &buf),
        None => out.write_all(&buf).map_err(io_err),
    }
}

fn default_manifest_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    model.with_file_name(format!("{stem}.manifest.json"))
}

fn binary_dataset_info(a: &DataArgs, err: &mut dyn Write) -> CliResult<(convmpt_core::Dataset, DatasetInfo)> {
    let loaded = load_dataset(&a.data, a.format)?;
    if loaded.labels_remapped {
        let _ = writeln!(err, "warning: labels given as 0/1 were remapped to -1/+1");
    }
    let ds = loaded.dataset;
    let info = DatasetInfo {
        name: dataset_name(&a.data),
        path: a.data.display().to_string(),
        fingerprint: fingerprint(&ds),
        bags: ds.len(),
        dim: ds.dim(),
        positives: Some(ds.count_positive()),
        classes: None,
        labels_remapped: loaded.labels_remapped,
    };
    Ok((ds, info))
}

pub fn cmd_train(a: &TrainArgs, echo: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let config = a.model.config()?;
    let (dataset, info) = binary_dataset_info(&a.data, err)?;
    let model = train(&dataset, &config)?;
    let json = ModelFile::from_model(&model).to_json()?;
    write_file(&a.out, json.as_bytes())?;
    let d = &model.diagnostics;
    let outcome = TrainOutcome {
        model_path: a.out.display().to_string(),
        model_sha256: sha256_hex(json.as_bytes()),
        train_pos_at_top: d.final_train_pos_at_top,
        iterations: d.iterations.len(),
        certified: d.final_certified,
        early_stopped: d.early_stopped,
        dual_ascent_violations: d.dual_ascent_violations,
        filter_descent_violations: d.filter_descent_violations,
    };
    let mut manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: echo,
        method: a.model.method(&config),
        seed: config.seed,
        config,
        grid: None,
        dataset: info,
        outcome: Outcome::Train(outcome.clone()),
        content_hash: String::new(),
        timings: Some(Timings { total_seconds: start.elapsed().as_secs_f64(), per_fold_seconds: Vec::new() }),
    };
    manifest.seal();
    let manifest_path = a.manifest.clone().unwrap_or_else(|| default_manifest_path(&a.out));
    write_file(&manifest_path, manifest.to_json()?.as_bytes())?;
    writeln!(
        out,
        "trained {} model: train Pos@Top {:.4} after {} iterations (certified: {})\nmodel    {} sha256 {}\nmanifest {}",
        manifest.method,
        outcome.train_pos_at_top,
        outcome.iterations,
        outcome.certified,
        outcome.model_path,
        outcome.model_sha256,
        manifest_path.display()
    )
    .map_err(io_err)
}

pub fn cv_table_csv(report: &CvReport) -> String {
    let mut s = String::from("fold,test_bags,test_positives,c1,c2,train_pos_at_top,pos_at_top\n");
    for r in &report.per_fold {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.fold, r.test_bags, r.test_positives, r.c1, r.c2, r.train_pos_at_top, r.pos_at_top
        ));
    }
    s.push_str(&format!("mean,,,,,,{}\nstderr,,,,,,{}\n", report.summary.mean, report.summary.stderr));
    s
}

pub fn ova_table_csv(report: &OvaCvReport) -> String {
    let mut s = String::from("fold");
    for c in &report.classes {
        s.push_str(&format!(",{c}"));
    }
    s.push_str(",macro\n");
    for r in &report.per_fold {
        s.push_str(&r.fold.to_string());
        for v in &r.pos_at_top {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}\n", r.macro_average));
    }
    s.push_str("mean");
    for c in &report.per_class {
        s.push_str(&format!(",{}", c.mean));
    }
    s.push_str(&format!(",{}\nstderr", report.summary.mean));
    for c in &report.per_class {
        s.push_str(&format!(",{}", c.stderr));
    }
    s.push_str(&format!(",{}\n", report.summary.stderr));
    s
}

fn print_cv(report: &CvReport, method: &str, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{:>4} {:>5} {:>4} {:>9} {:>9} {:>8} {:>8}", "fold", "test", "pos", "c1", "c2", "train", "Pos@Top")?;
    for r in &report.per_fold {
        writeln!(
            out,
            "{:>4} {:>5} {:>4} {:>9} {:>9} {:>8.4} {:>8.4}",
            r.fold, r.test_bags, r.test_positives, r.c1, r.c2, r.train_pos_at_top, r.pos_at_top
        )?;
    }
    writeln!(
        out,
        "{method}: mean Pos@Top {:.4} ± {:.4} over {} folds",
        report.summary.mean, report.summary.stderr, report.folds
    )
}

fn print_ova(report: &OvaCvReport, method: &str, out: &mut dyn Write) -> std::io::Result<()> {
    write!(out, "{:>4}", "fold")?;
    for c in &report.classes {
        write!(out, " {c:>10}")?;
    }
    writeln!(out, " {:>8}", "macro")?;
    for r in &report.per_fold {
        write!(out, "{:>4}", r.fold)?;
        for v in &r.pos_at_top {
            write!(out, " {v:>10.4}")?;
        }
        writeln!(out, " {:>8.4}", r.macro_average)?;
    }
    writeln!(
        out,
        "{method}: macro one-vs-all Pos@Top {:.4} ± {:.4} over {} folds",
        report.summary.mean, report.summary.stderr, report.folds
    )
}

pub fn cmd_eval(a: &EvalArgs, echo: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let config = a.model.config()?;
    let grid = if !a.grid.is_empty() {
        Some(Grid::parse(&a.grid, &config)?)
    } else if a.tune {
        Some(Grid::default())
    } else {
        None
    };
    let opts = EvalOptions { folds: a.folds, grid: grid.clone(), inner_folds: a.inner_folds };
    let method = a.model.method(&config);
    let (info, outcome, per_fold_seconds, table) = if a.ova {
        let ds = load_multiclass(&a.data.data)?;
        let info = DatasetInfo {
            name: dataset_name(&a.data.data),
            path: a.data.data.display().to_string(),
            fingerprint: fingerprint_multiclass(&ds),
            bags: ds.bags().len(),
            dim: ds.dim(),
            positives: None,
            classes: Some(ds.classes().to_vec()),
            labels_remapped: false,
        };
        let (report, timings) = cross_validate_ova(&ds, &config, &opts)?;
        print_ova(&report, &method, out).map_err(io_err)?;
        let table = ova_table_csv(&report);
        (info, Outcome::OneVsAll(report), timings, table)
    } else {
        let (ds, info) = binary_dataset_info(&a.data, err)?;
        let (report, timings) = cross_validate(&ds, &config, &opts)?;
        print_cv(&report, &method, out).map_err(io_err)?;
        let table = cv_table_csv(&report);
        (info, Outcome::CrossValidation(report), timings, table)
    };
    if let Some(path) = &a.table {
        write_file(path, table.as_bytes())?;
    }
    if let Some(path) = &a.manifest {
        let mut manifest = RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: echo,
            method,
            seed: config.seed,
            config,
            grid,
            dataset: info,
            outcome,
            content_hash: String::new(),
            timings: Some(Timings { total_seconds: start.elapsed().as_secs_f64(), per_fold_seconds }),
        };
        manifest.seal();
        write_file(path, manifest.to_json()?.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let manifests = a
        .manifest
        .iter()
        .map(|p| {
            RunManifest::from_json(&read_file(p)?)
                .map_err(|e| CliError::Format(format!("{}: {e}", p.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = build_report(&manifests)?;
    for w in &report.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let csv = report.to_csv();
    if let Some(path) = &a.csv {
        write_file(path, csv.as_bytes())?;
    }
    if let Some(path) = &a.json {
        write_file(path, report.to_json()?.as_bytes())?;
    }
    out.write_all(csv.as_bytes()).map_err(io_err)
}
