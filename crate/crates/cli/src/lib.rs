//! `cfshap` command-line interface.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use cfshap_core::dataset::{load_csv, LabelColumn};
use cfshap_core::evaluation::{emit_report, run_evaluation};
use cfshap_core::{
    registry, Dataset, EvalConfig, EvalSet, Explanation, Family, Pipeline, PipelineConfig, ReportFormat,
    ShapleyConfig, ShapleyMode,
};

/// Exit status for argument problems.
pub const EXIT_USAGE: u8 = 1;
/// Exit status when the pipeline itself fails.
pub const EXIT_PIPELINE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "cfshap", version, about = "Contrastive and counterfactual explanations from Shapley values")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every "Why P not Q?" query over a dataset and report CFs/CPs/Ratio/Avg.
    Evaluate(EvaluateArgs),
    /// Answer one "Why P not Q?" query for a point given in raw units.
    Explain(ExplainArgs),
    /// Start the HTTP explanation service.
    Serve(ServeArgs),
    /// List the built-in datasets.
    Datasets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapArg {
    /// Exact up to 15 features, sampled above.
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Knn,
    Rf,
    Nn,
    Svm,
    /// SVM, RF, NN and KNN in that order.
    All,
}

impl ModelArg {
    fn families(self) -> Vec<Family> {
        match self {
            ModelArg::Knn => vec![Family::Knn],
            ModelArg::Rf => vec![Family::Rf],
            ModelArg::Nn => vec![Family::Nn],
            ModelArg::Svm => vec![Family::Svm],
            ModelArg::All => Family::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSetArg {
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Md,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Built-in dataset name, a CSV file or a dataset manifest (.toml).
    #[arg(long)]
    pub dataset: String,
    /// Label column of a CSV file: header name or 0-based index. Defaults to the last column.
    #[arg(long)]
    pub label: Option<String>,
    /// Seeds the split, training and background selection.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, value_enum, default_value_t = ShapArg::Auto)]
    pub shap: ShapArg,
    /// Sampled feature orders per explained point.
    #[arg(long, default_value_t = cfshap_core::shapley::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    /// Seed of the permutation sampler.
    #[arg(long, default_value_t = 1)]
    pub shap_seed: u64,
    /// Background rows for the value function, or "all" for the whole training split.
    #[arg(long, default_value = "100")]
    pub background: String,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = ModelArg::All)]
    pub model: ModelArg,
    /// Points to query: the test split or every row.
    #[arg(long, value_enum, default_value_t = EvalSetArg::Test)]
    pub eval_set: EvalSetArg,
    /// Only the first N evaluation points.
    #[arg(long)]
    pub max_points: Option<usize>,
    /// Report file; `.csv` selects CSV. Printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the format implied by `--out`.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Comma-separated feature values in the dataset's units.
    #[arg(long, allow_hyphen_values = true)]
    pub point: String,
    /// Desired class: id or name.
    #[arg(long)]
    pub desired: String,
    /// Print the full explanation as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CFSHAP_PORT", default_value_t = cfshap_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory of dashboard assets served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Seconds a session request waits for model training before a 503.
    #[arg(long, default_value_t = 30)]
    pub training_wait: u64,
    #[arg(long, value_enum, default_value_t = ShapArg::Auto)]
    pub shap: ShapArg,
    #[arg(long, default_value_t = cfshap_core::shapley::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
}

/// A failure attributable to the arguments rather than the pipeline.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit status for an error returned by [`execute`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_PIPELINE
    }
}

fn shapley_mode(arg: ShapArg) -> ShapleyMode {
    match arg {
        ShapArg::Auto => ShapleyMode::Auto,
        ShapArg::Exact => ShapleyMode::Exact,
        ShapArg::Sampled => ShapleyMode::Sampled,
    }
}

impl DataArgs {
    fn pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(usage(format!("--split must lie in (0, 1), got {}", self.split)));
        }
        if self.permutations == 0 {
            return Err(usage("--permutations must be at least 1"));
        }
        let background_size = match self.background.as_str() {
            "all" => None,
            n => Some(
                n.parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| usage(format!("--background expects a positive count or \"all\", got {n:?}")))?,
            ),
        };
        Ok(PipelineConfig {
            seed: self.seed,
            split_ratio: self.split,
            stratified: true,
            shapley: ShapleyConfig {
                mode: shapley_mode(self.shap),
                n_permutations: self.permutations,
                seed: self.shap_seed,
                background_size,
                ..ShapleyConfig::default()
            },
            hyperparameters: None,
        })
    }

    fn load(&self) -> anyhow::Result<Dataset> {
        load_dataset(&self.dataset, self.label.as_deref())
    }
}

/// Resolves a built-in name, manifest or CSV path.
pub fn load_dataset(source: &str, label: Option<&str>) -> anyhow::Result<Dataset> {
    if registry::builtin_names().iter().any(|n| n == source) {
        return Ok(registry::builtin(source)?);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(usage(format!(
            "{source:?} is neither a built-in dataset ({}) nor an existing file",
            registry::builtin_names().join(", ")
        )));
    }
    let is_manifest = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let ds = if is_manifest {
        registry::load_manifest(path)
    } else {
        let label = label.map_or(LabelColumn::Last, LabelColumn::from);
        load_csv(path, &label, None)
    };
    ds.with_context(|| format!("loading {}", path.display()))
}

pub fn parse_point(text: &str, n_features: usize) -> anyhow::Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| usage(format!("--point: {v:?} is not a finite number")))
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    if values.len() != n_features {
        return Err(usage(format!(
            "--point has {} values, the dataset has {n_features} features",
            values.len()
        )));
    }
    Ok(values)
}

fn parse_class(text: &str, names: &[String]) -> anyhow::Result<usize> {
    if let Some(i) = names.iter().position(|n| n == text) {
        return Ok(i);
    }
    match text.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(usage(format!(
            "--desired {text:?} is not a class id below {} or one of {}",
            names.len(),
            names.join(", ")
        ))),
    }
}

/// Runs a parsed command, writing user-facing output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Evaluate(args) => evaluate(&args, out),
        Command::Explain(args) => explain(&args, out),
        Command::Serve(args) => serve(&args),
        Command::Datasets => {
            for m in registry::builtin_manifests() {
                let ds: Dataset = registry::builtin(&m.name)?;
                writeln!(
                    out,
                    "{}\t{} rows\t{} features\t{} classes\t{}",
                    m.name,
                    ds.n_rows(),
                    ds.n_features(),
                    ds.n_classes(),
                    m.source
                )?;
            }
            Ok(())
        }
    }
}

pub fn evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let pipeline = args.data.pipeline_config()?;
    if args.max_points == Some(0) {
        return Err(usage("--max-points must be at least 1"));
    }
    let format = match (args.format, &args.out) {
        (Some(FormatArg::Md), _) => ReportFormat::Markdown,
        (Some(FormatArg::Csv), _) => ReportFormat::Csv,
        (None, Some(p)) => ReportFormat::from_path(p),
        (None, None) => ReportFormat::Markdown,
    };
    let ds = args.data.load()?;
    let config = EvalConfig {
        pipeline,
        eval_set: match args.eval_set {
            EvalSetArg::Test => EvalSet::Test,
            EvalSetArg::All => EvalSet::All,
        },
        max_points: args.max_points,
    };
    let mut reports = Vec::new();
    for family in args.model.families() {
        log::info!("evaluating {family} on {}", ds.name());
        let report = run_evaluation(&ds, family, &config).with_context(|| format!("evaluating {family}"))?;
        reports.push(report);
    }
    let text = emit_report(&reports, format);
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            log::info!("report written to {}", path.display());
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn explain(args: &ExplainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let families = args.model.families();
    let [family] = families.as_slice() else {
        return Err(usage("explain needs a single --model"));
    };
    let config = args.data.pipeline_config()?;
    let ds = args.data.load()?;
    let point = parse_point(&args.point, ds.n_features())?;
    let desired = parse_class(&args.desired, ds.class_names())?;
    let pipeline = Pipeline::build(ds, *family, config)?;
    let predicted = pipeline.predict_raw(&point)?;
    if predicted == desired {
        return Err(usage(format!(
            "the model already predicts class {desired} for this point; pick another --desired"
        )));
    }
    let explanation = pipeline.explain_raw(&point, desired)?;
    if args.json {
        serde_json::to_writer_pretty(&mut *out, &explanation)?;
        writeln!(out)?;
    } else {
        out.write_all(render_explanation(&pipeline, &point, &explanation).as_bytes())?;
    }
    Ok(())
}

fn fmt_point(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Text rendering: both NL answers and a counterfactual table in raw
/// units with mutated cells starred.
pub fn render_explanation(pipeline: &Pipeline, point: &[f64], e: &Explanation) -> String {
    let names = pipeline.data().class_names();
    let c = &e.contrastive;
    let mut s = String::new();
    let _ = writeln!(s, "Point: {}", fmt_point(point));
    let _ = writeln!(
        s,
        "Why {} not {}? (predicted {}, desired {})",
        c.predicted, c.desired, names[c.predicted], names[c.desired]
    );
    let _ = writeln!(s, "Why P: {}", c.nl_why_p);
    let _ = writeln!(s, "Why not Q: {}", c.nl_not_q);
    match &e.counterfactuals {
        None => {
            let _ = writeln!(s, "No counterfactual and no training point predicted as {} exist.", c.desired);
        }
        Some(set) if set.is_fallback => {
            let fb = set.fallback_point.as_ref().map(|p| pipeline.to_raw(p)).unwrap_or_default();
            let _ = writeln!(
                s,
                "No mutant reached class {}; nearest training point predicted as {}: {}",
                c.desired,
                c.desired,
                fmt_point(&fb)
            );
        }
        Some(set) => {
            let features = pipeline.data().feature_names();
            let _ = writeln!(
                s,
                "Counterfactuals: {} (neighbour budget {}; * marks mutated features)",
                set.points.len(),
                set.neighbor_budget_used
            );
            let _ = writeln!(s, "| # | {} |", features.join(" | "));
            let _ = writeln!(s, "|---|{}", "---|".repeat(features.len()));
            for (i, p) in set.points.iter().enumerate() {
                let raw = pipeline.to_raw(p);
                let cells: Vec<String> = raw
                    .iter()
                    .zip(&set.mutate_mask)
                    .map(|(v, m)| if *m { format!("{v:.4}*") } else { format!("{v:.4}") })
                    .collect();
                let _ = writeln!(s, "| {} | {} |", i + 1, cells.join(" | "));
            }
        }
    }
    s
}

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    if args.permutations == 0 {
        return Err(usage("--permutations must be at least 1"));
    }
    let mut config = cfshap_service::ServiceConfig {
        static_dir: args.static_dir.clone(),
        training_wait: Duration::from_secs(args.training_wait),
        ..Default::default()
    };
    config.pipeline.shapley.mode = shapley_mode(args.shap);
    config.pipeline.shapley.n_permutations = args.permutations;
    let state = cfshap_service::AppState::new(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        eprintln!("listening on http://{}", listener.local_addr()?);
        cfshap_service::serve(listener, state).await?;
        anyhow::Ok(())
    })
}
