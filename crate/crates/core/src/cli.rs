//! Command-line front end for the `chainshap` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::ablation::{ablation_curve, AblationSign};
use crate::baseline_select::{
    assign_baseline_cluster, kmeans_fit_dataset, uniform_sample, BaselineRegistry, BaselineSet,
    ClusterModel, KMeansConfig,
};
use crate::chain_engine::{
    reports_from_json, reports_to_csv, reports_to_json, AttributionReport, Explainer, Explicand,
    ReportFlags,
};
use crate::data::Dataset;
use crate::distributed::{
    coordinate, load_registry_file, serve_tcp, CoordinateOptions, MetaModel, NodeService,
    TcpTransport,
};
use crate::error::{Error, Result};
use crate::grouping::{group_report, group_reports_csv, GroupReport, GroupSpec};
use crate::model_ir::{load_pipeline_file, Pipeline, Stage, Transform, TransformStage};
use crate::numeric::mean;
use crate::shapley_oracle::interventional_shapley;

#[derive(Debug, Parser)]
#[command(
    name = "chainshap",
    version,
    about = "Shapley attributions for model pipelines"
)]
pub struct RunConfig {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chain attributions averaged over a baseline set.
    Explain(ExplainArgs),
    /// Brute-force interventional Shapley values (at most 20 features).
    Oracle(ExplainArgs),
    /// Aggregate a saved explanation into feature groups.
    Groups(GroupsArgs),
    /// Ablation curve of mean model output.
    Ablate(AblateArgs),
    /// Build a baseline set or fit a k-means baseline model.
    Baselines(BaselinesArgs),
    /// Serve a private score model to a coordinator.
    Serve(ServeArgs),
    /// Explain a meta-model over remote scores in raw feature space.
    Coordinate(CoordinateArgs),
    /// Forward traces of the pipeline.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Output scale. The pipeline's own output is taken as log-odds;
/// `probability` appends a sigmoid, `loss` a sigmoid and a binary
/// cross-entropy against `--labels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputScale {
    Logodds,
    Probability,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    Pos,
    Neg,
    All,
}

impl From<SignArg> for AblationSign {
    fn from(s: SignArg) -> Self {
        match s {
            SignArg::Pos => AblationSign::Positive,
            SignArg::Neg => AblationSign::Negative,
            SignArg::All => AblationSign::All,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Pipeline JSON document.
    #[arg(long)]
    pub pipeline: PathBuf,
    /// Feature CSV; a first column named `id` or `sample_id` holds sample ids.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated sample ids to explain (default: every row).
    #[arg(long, value_delimiter = ',')]
    pub explicands: Option<Vec<String>>,
    /// Label column, required by `--as loss`.
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long = "as", value_enum, default_value = "logodds")]
    pub scale: OutputScale,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Comma-separated sample ids of the reference data to use as baselines.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["uniform", "kmeans"])]
    pub baseline_ids: Option<Vec<String>>,
    /// Draw N baselines uniformly without replacement.
    #[arg(long, value_name = "N", conflicts_with = "kmeans")]
    pub uniform: Option<usize>,
    /// Fit K clusters on `--reduced-features` and explain each sample
    /// against the members of its nearest cluster. Features are not
    /// standardized; pre-scale them if their units differ.
    #[arg(long, value_name = "K", requires = "reduced_features")]
    pub kmeans: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub reduced_features: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Reference CSV the baselines are drawn from (default: `--data`).
    #[arg(long)]
    pub baseline_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file (default: standard output).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub baselines: BaselineArgs,
    /// Group spec; emit group attributions instead of feature attributions.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Keep per-baseline chains in JSON output.
    #[arg(long)]
    pub traces: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GroupsArgs {
    /// JSON report written by `explain`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub groups: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub baselines: BaselineArgs,
    /// Saved `explain` report; computed on the fly when absent.
    #[arg(long)]
    pub attributions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pos")]
    pub sign: SignArg,
    /// Largest number of ablated features (default: all).
    #[arg(long)]
    pub kmax: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BaselinesArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub baselines: BaselineArgs,
    /// Print each row's cluster instead of the model (k-means only).
    #[arg(long)]
    pub assign: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Private score model.
    #[arg(long)]
    pub pipeline: PathBuf,
    /// The node's own feature columns, keyed by shared sample ids.
    #[arg(long)]
    pub data: PathBuf,
    /// Advertised score name.
    #[arg(long)]
    pub score: String,
    /// Baseline registry: JSON object mapping set ids to sample-id lists.
    #[arg(long)]
    pub baseline_sets: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub port: u16,
    #[arg(long, default_value = "node")]
    pub node_id: String,
}

#[derive(Debug, Args)]
pub struct CoordinateArgs {
    /// Meta-model; its inputs are the data columns (scores and own features).
    #[arg(long)]
    pub pipeline: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON list of node descriptors.
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub explicands: Option<Vec<String>>,
    #[arg(long)]
    pub labels: Option<String>,
    #[command(flatten)]
    pub baselines: BaselineArgs,
    /// Omit attributions over the meta-model inputs.
    #[arg(long)]
    pub no_intermediate: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parses `args` (including the program name), runs, and maps errors to a
/// diagnostic on standard error and a nonzero exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run_command(config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run_command(config: RunConfig) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match config.command {
        Command::Explain(a) => explain(a, false),
        Command::Oracle(a) => explain(a, true),
        Command::Groups(a) => groups(a),
        Command::Ablate(a) => ablate(a),
        Command::Baselines(a) => baselines(a),
        Command::Serve(a) => serve(a),
        Command::Coordinate(a) => coordinate_cmd(a),
        Command::Eval(a) => eval(a),
    })
}

fn emit(output: &OutputArgs, text: &str) -> Result<()> {
    match &output.output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

struct Loaded {
    pipeline: Pipeline,
    data: Dataset,
    rows: Vec<usize>,
}

fn load_model(args: &ModelArgs) -> Result<Loaded> {
    if args.scale == OutputScale::Loss && args.labels.is_none() {
        return Err(Error::Config("--as loss needs --labels".into()));
    }
    let mut pipeline = load_pipeline_file(&args.pipeline)?;
    let data = Dataset::from_path(&args.data, args.labels.as_deref())?;
    if data.width() != pipeline.input_width() {
        return Err(Error::width(
            format!(
                "{} columns for {}",
                args.data.display(),
                args.pipeline.display()
            ),
            pipeline.input_width(),
            data.width(),
        ));
    }
    match args.scale {
        OutputScale::Logodds => {}
        OutputScale::Probability => {
            pipeline.push(Stage::Transform(TransformStage::new(
                Transform::Sigmoid,
                1,
            )?))?;
        }
        OutputScale::Loss => {
            pipeline.push(Stage::Transform(TransformStage::new(
                Transform::Sigmoid,
                1,
            )?))?;
            pipeline.push(Stage::Transform(TransformStage::new(
                Transform::BceLoss,
                1,
            )?))?;
        }
    }
    let rows = select_rows(&data, args.explicands.as_deref())?;
    Ok(Loaded {
        pipeline,
        data,
        rows,
    })
}

fn select_rows(data: &Dataset, ids: Option<&[String]>) -> Result<Vec<usize>> {
    match ids {
        None => Ok((0..data.len()).collect()),
        Some(ids) => ids.iter().map(|id| data.position(id)).collect(),
    }
}

fn explicand(data: &Dataset, row: usize) -> Explicand {
    Explicand {
        id: data.ids()[row].clone(),
        values: data.row(row).to_vec(),
        label: data.label(row),
    }
}

/// Baseline sets for each requested row.
enum Baselines {
    Shared(BaselineSet),
    Clustered {
        model: ClusterModel,
        reference: Dataset,
    },
}

impl Baselines {
    fn resolve(args: &BaselineArgs, data: &Dataset) -> Result<Self> {
        let reference = match &args.baseline_data {
            Some(path) => Dataset::from_path(path, None)?,
            None => data.clone(),
        };
        let reference = reference.select_columns(data.feature_names())?;
        if let Some(ids) = &args.baseline_ids {
            return Ok(Baselines::Shared(BaselineSet::from_dataset(
                &reference, ids,
            )?));
        }
        if let Some(n) = args.uniform {
            return Ok(Baselines::Shared(uniform_sample(&reference, n, args.seed)?));
        }
        if let Some(k) = args.kmeans {
            let features = args.reduced_features.clone().unwrap_or_default();
            let config = KMeansConfig {
                k,
                seed: args.seed,
                max_iter: args.max_iter,
                tol: args.tol,
            };
            let model = kmeans_fit_dataset(&reference, &features, &config)?;
            return Ok(Baselines::Clustered { model, reference });
        }
        Err(Error::Config(
            "choose baselines with --baseline-ids, --uniform or --kmeans".into(),
        ))
    }

    fn for_row(&self, data: &Dataset, row: usize) -> Result<BaselineSet> {
        match self {
            Baselines::Shared(set) => Ok(set.clone()),
            Baselines::Clustered { model, reference } => {
                let reduced: Vec<f64> = model
                    .features
                    .iter()
                    .map(|f| data.feature_index(f).map(|i| data.row(row)[i]))
                    .collect::<Result<_>>()?;
                let cluster = assign_baseline_cluster(model, &reduced)?;
                model.baseline_set(reference, cluster)
            }
        }
    }
}

fn oracle_report(
    pipeline: &Pipeline,
    names: &[String],
    e: &Explicand,
    set: &BaselineSet,
) -> Result<AttributionReport> {
    if set.is_empty() {
        return Err(Error::EmptyBaselineSet);
    }
    let f = |x: &[f64]| pipeline.predict(x, e.label);
    let attributions = interventional_shapley(f, &e.values, set.samples())?;
    let baseline_values = set
        .samples()
        .iter()
        .map(|b| pipeline.predict(b, e.label))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributionReport {
        explicand_id: e.id.clone(),
        feature_names: names.to_vec(),
        attributions,
        prediction: pipeline.predict(&e.values, e.label)?,
        expected_value: mean(&baseline_values),
        baseline_set_id: set.id().to_string(),
        flags: ReportFlags::default(),
        traces: None,
        intermediate: None,
    })
}

fn attribute(
    loaded: &Loaded,
    baselines: &BaselineArgs,
    brute_force: bool,
    traces: bool,
) -> Result<Vec<AttributionReport>> {
    use rayon::prelude::*;
    let sets = Baselines::resolve(baselines, &loaded.data)?;
    let names = loaded.data.feature_names().to_vec();
    let explainer = Explainer::new(&loaded.pipeline)
        .feature_names(names.clone())?
        .retain_traces(traces);
    loaded
        .rows
        .par_iter()
        .map(|&row| {
            let e = explicand(&loaded.data, row);
            let set = sets.for_row(&loaded.data, row)?;
            if brute_force {
                oracle_report(&loaded.pipeline, &names, &e, &set)
            } else {
                explainer.explain(&e, &set)
            }
        })
        .collect()
}

fn write_groups(output: &OutputArgs, reports: &[GroupReport]) -> Result<()> {
    match output.format {
        OutputFormat::Json => emit(output, &to_json(reports)),
        OutputFormat::Csv => emit(output, &group_reports_csv(reports)?),
    }
}

fn explain(args: ExplainArgs, brute_force: bool) -> Result<()> {
    let loaded = load_model(&args.model)?;
    let reports = attribute(&loaded, &args.baselines, brute_force, args.traces)?;
    if let Some(path) = &args.groups {
        let spec = GroupSpec::from_json(&read(path)?, loaded.data.feature_names())?;
        let grouped = reports
            .iter()
            .map(|r| group_report(r, &spec))
            .collect::<Result<Vec<_>>>()?;
        return write_groups(&args.output, &grouped);
    }
    match args.output.format {
        OutputFormat::Json => emit(&args.output, &reports_to_json(&reports)),
        OutputFormat::Csv => emit(&args.output, &reports_to_csv(&reports)?),
    }
}

fn groups(args: GroupsArgs) -> Result<()> {
    let reports = reports_from_json(&read(&args.report)?)?;
    let Some(first) = reports.first() else {
        return write_groups(&args.output, &[]);
    };
    let spec = GroupSpec::from_json(&read(&args.groups)?, &first.feature_names)?;
    let grouped = reports
        .iter()
        .map(|r| group_report(r, &spec))
        .collect::<Result<Vec<_>>>()?;
    write_groups(&args.output, &grouped)
}

fn ablate(args: AblateArgs) -> Result<()> {
    let loaded = load_model(&args.model)?;
    let set = match Baselines::resolve(&args.baselines, &loaded.data)? {
        Baselines::Shared(set) => set,
        Baselines::Clustered { .. } => {
            return Err(Error::Config(
                "ablation imputes with one baseline mean; use --baseline-ids or --uniform".into(),
            ))
        }
    };
    let impute = set.mean()?;
    let reports = match &args.attributions {
        Some(path) => reports_from_json(&read(path)?)?,
        None => attribute(&loaded, &args.baselines, false, false)?,
    };
    let phi = loaded
        .rows
        .iter()
        .map(|&row| {
            let id = &loaded.data.ids()[row];
            reports
                .iter()
                .find(|r| &r.explicand_id == id)
                .map(|r| r.attributions.clone())
                .ok_or_else(|| Error::UnknownSample(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let explicands: Vec<Vec<f64>> = loaded
        .rows
        .iter()
        .map(|&r| loaded.data.row(r).to_vec())
        .collect();
    let labels: Option<Vec<f64>> = loaded
        .data
        .labels()
        .map(|l| loaded.rows.iter().map(|&r| l[r]).collect());
    let curve = ablation_curve(
        &loaded.pipeline,
        &explicands,
        labels.as_deref(),
        &phi,
        &impute,
        args.sign.into(),
        args.kmax.unwrap_or(loaded.pipeline.input_width()),
    )?;
    match args.output.format {
        OutputFormat::Json => emit(&args.output, &to_json(&curve)),
        OutputFormat::Csv => emit(&args.output, &curve.to_csv()?),
    }
}

fn baselines(args: BaselinesArgs) -> Result<()> {
    let data = Dataset::from_path(&args.data, None)?;
    match Baselines::resolve(&args.baselines, &data)? {
        Baselines::Shared(set) => {
            if args.output.format == OutputFormat::Csv {
                let rows = data.select_rows(set.sample_ids())?;
                return emit(&args.output, &rows.to_csv()?);
            }
            emit(&args.output, &format!("{}\n", set.to_json()))
        }
        Baselines::Clustered { model, .. } => {
            if args.assign || args.output.format == OutputFormat::Csv {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["id", "cluster"])?;
                for (id, c) in data.ids().iter().zip(&model.assignments) {
                    w.write_record([id.as_str(), &c.to_string()])?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                return emit(&args.output, &String::from_utf8(bytes).expect("utf-8"));
            }
            emit(&args.output, &format!("{}\n", model.to_json()))
        }
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let pipeline = load_pipeline_file(&args.pipeline)?;
    let data = Dataset::from_path(&args.data, None)?;
    let registry = BaselineRegistry::from_path(&args.baseline_sets)?;
    let node =
        NodeService::new(&args.node_id, data, registry).with_full_model(&args.score, pipeline)?;
    let addr = format!("{}:{}", args.host, args.port);
    eprintln!("serving score `{}` on {addr}", args.score);
    serve_tcp(addr.as_str(), Arc::new(node))?;
    Ok(())
}

fn coordinate_cmd(args: CoordinateArgs) -> Result<()> {
    let pipeline = load_pipeline_file(&args.pipeline)?;
    let data = Dataset::from_path(&args.data, args.labels.as_deref())?;
    let registry = load_registry_file(&args.registry)?;
    let set = match Baselines::resolve(&args.baselines, &data)? {
        Baselines::Shared(set) => set,
        Baselines::Clustered { .. } => {
            return Err(Error::Config(
                "coordinate needs one shared baseline set; use --baseline-ids or --uniform".into(),
            ))
        }
    };
    let rows = select_rows(&data, args.explicands.as_deref())?;
    let explicands: Vec<Explicand> = rows.iter().map(|&r| explicand(&data, r)).collect();
    let meta = MetaModel {
        pipeline,
        input_names: data.feature_names().to_vec(),
    };
    let options = CoordinateOptions {
        publish_intermediate: !args.no_intermediate,
    };
    let outcome = coordinate(
        &meta,
        &registry,
        &explicands,
        &set,
        &TcpTransport::new(),
        options,
    )?;
    match args.output.format {
        OutputFormat::Json => emit(&args.output, &reports_to_json(&outcome.reports))?,
        OutputFormat::Csv => emit(&args.output, &reports_to_csv(&outcome.reports)?)?,
    }
    if outcome.failures.is_empty() {
        return Ok(());
    }
    for f in &outcome.failures {
        eprintln!("explicand {}: {}", f.explicand_id, f.error);
    }
    Err(Error::Config(format!(
        "{} of {} explicands failed",
        outcome.failures.len(),
        explicands.len()
    )))
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    id: &'a str,
    trace: &'a [Vec<f64>],
    output: &'a [f64],
}

fn eval(args: EvalArgs) -> Result<()> {
    let loaded = load_model(&args.model)?;
    let traces = loaded
        .rows
        .iter()
        .map(|&r| {
            loaded
                .pipeline
                .evaluate_labeled(loaded.data.row(r), loaded.data.label(r))
        })
        .collect::<Result<Vec<_>>>()?;
    match args.output.format {
        OutputFormat::Json => {
            let records: Vec<EvalRecord<'_>> = loaded
                .rows
                .iter()
                .zip(&traces)
                .map(|(&r, t)| EvalRecord {
                    id: &loaded.data.ids()[r],
                    trace: t.entries(),
                    output: t.output(),
                })
                .collect();
            emit(&args.output, &to_json(&records))
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let width = loaded.pipeline.output_width();
            let mut header = vec!["id".to_string()];
            header.extend((0..width).map(|i| {
                if width == 1 {
                    "output".to_string()
                } else {
                    format!("output_{i}")
                }
            }));
            w.write_record(&header)?;
            for (&r, t) in loaded.rows.iter().zip(&traces) {
                let mut row = vec![loaded.data.ids()[r].clone()];
                row.extend(t.output().iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            emit(&args.output, &String::from_utf8(bytes).expect("utf-8"))
        }
    }
}
