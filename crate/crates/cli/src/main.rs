use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use graphkd::graph::{generate_sbm, load_dataset_dir, make_transductive_split, save_dataset_dir, Dataset, SbmConfig};
use graphkd::harness::{emit_report, plan, run_experiment, ExperimentSpec, ReportFormat};
use graphkd::trainer::{
    distill_adagmlp, distill_bagging, distill_glnn, evaluate_ensemble, evaluate_teacher, load_checkpoint,
    save_checkpoint, Checkpoint, DistillConfig, TeacherConfig, TrainReport,
};

#[derive(Parser)]
#[command(name = "graphkd", version, about = "Distil GCN teachers into boosted MLP student ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check or generate datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train a GCN teacher.
    TrainTeacher(TrainTeacherArgs),
    /// Distil a trained teacher into MLP students.
    Distill(DistillArgs),
    /// Score a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Run an experiment spec file.
    Experiment(ExperimentArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Validate a dataset directory and print its statistics.
    Validate { dir: PathBuf },
    /// Write a stochastic-block-model dataset with a transductive split.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Starting point: test or study.
    #[arg(long, default_value = "test")]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    nodes_per_class: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    feature_noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Labelled nodes per class (preset default when absent).
    #[arg(long)]
    per_class_train: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    /// Test nodes; all remaining nodes when absent.
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
struct TrainTeacherArgs {
    /// Dataset directory (must contain a split).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON report; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Teacher settings as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long = "epochs")]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistillMethod {
    Adagmlp,
    Glnn,
    Bagging,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    data: PathBuf,
    /// Teacher checkpoint.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "adagmlp")]
    method: DistillMethod,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Distillation settings as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of students.
    #[arg(short = 'K', long = "k")]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_na: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long = "epochs")]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Allow λ and λ_NA on the boundaries 0 and 1.
    #[arg(long)]
    sweep_mode: bool,
    #[arg(long)]
    no_na: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Fraction of feature entries zeroed per test node.
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    /// Seed of the masking draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the metrics as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    spec: PathBuf,
    /// Report path; defaults to `results/<experiment>.<format>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Print the run matrix without training anything.
    #[arg(long)]
    dry_run: bool,
}

enum CliError {
    Usage(String),
    Core(graphkd::Error),
}

impl From<graphkd::Error> for CliError {
    fn from(e: graphkd::Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_data(dir: &Path) -> CliResult<Dataset> {
    require(dir, "dataset directory")?;
    Ok(load_dataset_dir(dir)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CliError::Core(graphkd::Error::Io { path: path.into(), source: e }))
}

/// Config file (or defaults) as a JSON object, with each present flag
/// written over it, then parsed and validated as `T`.
fn merge_config<T>(file: Option<&Path>, flags: Vec<(&str, Option<Value>)>) -> CliResult<T>
where
    T: serde::de::DeserializeOwned + serde::Serialize + Default,
{
    let mut obj: Map<String, Value> = match file {
        Some(p) => {
            require(p, "config file")?;
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => match serde_json::to_value(T::default()).expect("serializable") {
            Value::Object(m) => m,
            _ => unreachable!("configs are structs"),
        },
    };
    for (key, v) in flags {
        if let Some(v) = v {
            obj.insert(key.into(), v);
        }
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Usage(e.to_string()))
}

fn some<T: Into<Value>>(v: Option<T>) -> Option<Value> {
    v.map(Into::into)
}

fn report_path(out: &Path, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".report.json");
        PathBuf::from(s)
    })
}

fn print_summary(report: &TrainReport, ckpt: &Path) {
    println!(
        "{}: best epoch {} of {}, val acc {:.4}, test acc {:.4}, {:.0} ms",
        report.method,
        report.best_epoch,
        report.epochs.len(),
        report.best_val_acc,
        report.test_acc,
        report.train_ms
    );
    println!("checkpoint written to {}", ckpt.display());
}

fn cmd_dataset(cmd: DatasetCmd) -> CliResult<()> {
    match cmd {
        DatasetCmd::Validate { dir } => {
            let ds = load_data(&dir)?;
            let s = ds.stats();
            println!("{:<12} {:>8} {:>8} {:>9} {:>8} {:>6} {:>6} {:>6}", "dataset", "nodes", "edges", "features", "classes", "train", "val", "test");
            println!(
                "{:<12} {:>8} {:>8} {:>9} {:>8} {:>6} {:>6} {:>6}",
                s.name, s.nodes, s.edges, s.features, s.classes, s.train, s.val, s.test
            );
            Ok(())
        }
        DatasetCmd::Synth(a) => {
            let mut cfg = SbmConfig::preset(&a.preset)
                .ok_or_else(|| CliError::Usage(format!("unknown preset {:?} (test | study)", a.preset)))?;
            cfg.classes = a.classes.unwrap_or(cfg.classes);
            cfg.nodes_per_class = a.nodes_per_class.unwrap_or(cfg.nodes_per_class);
            cfg.p_in = a.p_in.unwrap_or(cfg.p_in);
            cfg.p_out = a.p_out.unwrap_or(cfg.p_out);
            cfg.feature_dim = a.feature_dim.unwrap_or(cfg.feature_dim);
            cfg.feature_noise = a.feature_noise.unwrap_or(cfg.feature_noise);
            cfg.seed = a.seed;
            let ds = generate_sbm(&cfg)?;
            let (per_class, val) = if a.preset == "test" { (10, 40) } else { (20, 200) };
            let per_class = a.per_class_train.unwrap_or(per_class);
            let val = a.val_size.unwrap_or(val);
            let test = a
                .test_size
                .unwrap_or_else(|| ds.n().saturating_sub(per_class * cfg.classes + val));
            let split = make_transductive_split(&ds.labels, per_class, val, test, a.seed)?;
            let mut ds = ds.with_split(split)?;
            ds.name = format!("sbm-{}", a.preset);
            save_dataset_dir(&ds, &a.out)?;
            let s = ds.stats();
            println!(
                "wrote {} nodes, {} edges, {} classes to {}",
                s.nodes,
                s.edges,
                s.classes,
                a.out.display()
            );
            Ok(())
        }
    }
}

fn cmd_train_teacher(a: TrainTeacherArgs) -> CliResult<()> {
    let cfg: TeacherConfig = merge_config(
        a.config.as_deref(),
        vec![
            ("hidden", some(a.hidden)),
            ("layers", some(a.layers)),
            ("dropout", some(a.dropout)),
            ("lr", some(a.lr)),
            ("weight_decay", some(a.weight_decay)),
            ("max_epochs", some(a.max_epochs)),
            ("patience", some(a.patience)),
            ("seed", some(a.seed)),
        ],
    )?;
    cfg.validate()?;
    let ds = load_data(&a.data)?;
    let (ckpt, report) = graphkd::trainer::train_teacher(&ds, &cfg)?;
    save_checkpoint(&Checkpoint::Teacher(ckpt), &a.out)?;
    write_json(&report_path(&a.out, &a.report), &report)?;
    print_summary(&report, &a.out);
    Ok(())
}

fn cmd_distill(a: DistillArgs) -> CliResult<()> {
    let mut cfg: DistillConfig = merge_config(
        a.config.as_deref(),
        vec![
            ("k", some(a.k)),
            ("lambda", some(a.lambda)),
            ("lambda_na", some(a.lambda_na)),
            ("beta", some(a.beta)),
            ("tau", some(a.tau)),
            ("rho", some(a.rho)),
            ("hidden", some(a.hidden)),
            ("layers", some(a.layers)),
            ("dropout", some(a.dropout)),
            ("lr", some(a.lr)),
            ("weight_decay", some(a.weight_decay)),
            ("max_epochs", some(a.max_epochs)),
            ("patience", some(a.patience)),
            ("seed", some(a.seed)),
            ("sweep_mode", a.sweep_mode.then_some(Value::Bool(true))),
        ],
    )?;
    if a.no_na {
        cfg = cfg.with_na(false);
    }
    cfg.validate()?;
    let ds = load_data(&a.data)?;
    require(&a.teacher, "teacher checkpoint")?;
    let teacher = match load_checkpoint(&a.teacher)? {
        Checkpoint::Teacher(t) => t,
        Checkpoint::Ensemble(_) => {
            return Err(CliError::Usage(format!("{} is a student checkpoint, not a teacher", a.teacher.display())))
        }
    };
    let (ckpt, report) = match a.method {
        DistillMethod::Adagmlp => distill_adagmlp(&ds, &teacher, &cfg)?,
        DistillMethod::Glnn => distill_glnn(&ds, &teacher, &cfg)?,
        DistillMethod::Bagging => distill_bagging(&ds, &teacher, &cfg)?,
    };
    save_checkpoint(&Checkpoint::Ensemble(ckpt), &a.out)?;
    write_json(&report_path(&a.out, &a.report), &report)?;
    print_summary(&report, &a.out);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.missing_rate) {
        return Err(CliError::Usage(format!("--missing-rate must be in [0,1), got {}", a.missing_rate)));
    }
    require(&a.checkpoint, "checkpoint")?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    if ds.split.test.is_empty() {
        return Err(CliError::Usage("dataset has no test split".into()));
    }
    let rows = &ds.split.test;
    let (kind, acc) = match &ckpt {
        Checkpoint::Teacher(t) => ("teacher", evaluate_teacher(t, &ds, rows, a.missing_rate, a.seed)?),
        Checkpoint::Ensemble(e) => (e.method.as_str(), evaluate_ensemble(e, &ds, rows, a.missing_rate, a.seed)?),
    };
    println!(
        "{kind}: test acc {acc:.4} on {} nodes (missing rate {})",
        rows.len(),
        a.missing_rate
    );
    if let Some(path) = &a.json {
        let v = serde_json::json!({
            "model": kind,
            "test_acc": acc,
            "test_nodes": rows.len(),
            "missing_rate": a.missing_rate,
            "seed": a.seed,
        });
        write_json(path, &v)?;
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult<()> {
    let format: ReportFormat = a.format.parse()?;
    require(&a.spec, "spec file")?;
    let spec = ExperimentSpec::load(&a.spec)?;
    if a.dry_run {
        let runs = plan(&spec)?;
        println!("{} runs planned for {}", runs.len(), spec.id());
        for r in runs {
            let grid = r.grid_value.map_or(String::new(), |v| format!(" {}={v}", r.grid_key));
            println!("  {}{grid} seed={}", r.method, r.seed);
        }
        return Ok(());
    }
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Jsonl => "jsonl",
    };
    let out = a.out.unwrap_or_else(|| PathBuf::from("results").join(format!("{}.{ext}", spec.id())));
    eprintln!("running {} with {} worker threads", spec.id(), graphkd::harness::worker_threads());
    let rows = run_experiment(&spec)?;
    let summary = emit_report(&rows, &out, format)?;
    println!("{} rows written to {}", rows.len(), out.display());
    println!("summary written to {}", summary.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Dataset(c) => cmd_dataset(c),
        Command::TrainTeacher(a) => cmd_train_teacher(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
