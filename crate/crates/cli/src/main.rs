//! `qmem`: generate datasets, calibrate, train and apply mitigators, and run
//! full experiments.
//!
//! Exit codes: 0 on success, 2 for configuration errors (bad flags, missing
//! or inconsistent files), 3 for failures while running. `QMEM_THREADS` caps
//! the worker thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmem_core::ci::{train_ci, train_citl, CiModel, TransferScope};
use qmem_core::dataset::{generate, Dataset, Sample};
use qmem_core::harness::{emit_report, run_experiment, Device, ExperimentConfig, Method, Rates, ReportFormat, RunReport};
use qmem_core::li::{calibrate, CalibrationMatrix};
use qmem_core::metrics::{Distances, Metric};
use qmem_core::presets::Preset;
use qmem_core::simulator::SimulatedDevice;
use qmem_core::{PartitionSpec, ProbDist};

#[derive(Parser)]
#[command(name = "qmem", version, about = "Readout-error mitigation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of (angles, ideal, noisy) samples.
    Gen(GenArgs),
    /// Measure the calibration matrix of a simulated device.
    Calibrate(CalibrateArgs),
    /// Train an NN, CI or CITL model on a dataset.
    Train(TrainArgs),
    /// Apply a trained model or calibration matrix to noisy distributions.
    Mitigate(MitigateArgs),
    /// Score a model or calibration matrix on a dataset.
    Evaluate(EvaluateArgs),
    /// Run a full experiment and write its report.
    Experiment(ExperimentArgs),
    /// Re-emit report artifacts from a saved report.json.
    Report(ReportArgs),
    /// Write the shipped preset files.
    Presets(PresetsArgs),
}

#[derive(Args, Clone, Default)]
struct DeviceArgs {
    /// Shipped preset: linear-only, paper-like-7q, paper-like-13q.
    #[arg(long)]
    preset: Option<String>,
    /// Noise model JSON (overrides the preset's).
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Coupling graph JSON (overrides the preset's).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Partition JSON (overrides the preset's).
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Transfer designation SOURCE:TARGET (leaf indices); repeatable.
    #[arg(long = "transfer", value_parser = parse_pair)]
    transfer: Vec<(usize, usize)>,
}

impl DeviceArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(p) = &self.preset {
            cfg.preset = Some(p.clone());
        }
        if self.noise.is_some() {
            cfg.noise.clone_from(&self.noise);
        }
        if self.graph.is_some() {
            cfg.graph.clone_from(&self.graph);
        }
        if self.partition.is_some() {
            cfg.partition.clone_from(&self.partition);
        }
        if !self.transfer.is_empty() {
            cfg.transfer = Some(self.transfer.clone());
        }
    }

    fn resolve(&self) -> Result<Device, Failure> {
        let mut cfg = ExperimentConfig::default();
        self.apply(&mut cfg);
        cfg.resolve_device().map_err(Failure::config)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, default_value_t = 7500)]
    samples: usize,
    /// Shots per circuit; 0 gives exact noisy distributions.
    #[arg(long, default_value_t = 32000)]
    shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, default_value_t = 32000)]
    shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// nn, ci or citl.
    #[arg(long, default_value = "ci")]
    method: Method,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    /// last-hidden-and-output or output-only.
    #[arg(long, default_value = "last-hidden-and-output", value_parser = parse_scope)]
    transfer_scope: TransferScope,
    /// Train on this fraction of a seeded split instead of the whole file.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(id = "mitigator", required = true, multiple = false, args = ["model", "calibration"])]
struct MitigatorArgs {
    /// Trained model bundle.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Calibration matrix for linear inversion.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

enum Mitigator {
    Model(CiModel),
    Linear(qmem_core::li::LinearInverter),
}

impl MitigatorArgs {
    fn load(&self) -> Result<Mitigator, Failure> {
        match (&self.model, &self.calibration) {
            (Some(p), _) => Ok(Mitigator::Model(CiModel::load(p).map_err(Failure::config)?)),
            (None, Some(p)) => {
                let cal = CalibrationMatrix::load(p).map_err(Failure::config)?;
                Ok(Mitigator::Linear(cal.factorize().map_err(Failure::runtime)?))
            }
            (None, None) => Err(Failure::Config("pass --model or --calibration".into())),
        }
    }
}

impl Mitigator {
    fn apply(&self, noisy: &[&ProbDist]) -> Result<Vec<ProbDist>, Failure> {
        match self {
            Mitigator::Model(m) => Ok(m.mitigate_batch(noisy).map_err(Failure::runtime)?.0),
            Mitigator::Linear(inv) => noisy.iter().map(|p| inv.mitigate(p)).collect::<Result<_, _>>().map_err(Failure::runtime),
        }
    }
}

#[derive(Args)]
struct MitigateArgs {
    #[command(flatten)]
    mitigator: MitigatorArgs,
    /// A JSON array of probabilities, or a dataset (.jsonl) whose noisy
    /// distributions are mitigated.
    #[arg(long)]
    input: PathBuf,
    /// JSON array (single input) or one JSON array per line (dataset).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    mitigator: MitigatorArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// Score only the test side of a seeded split.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    calibration_shots: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Comma-separated subset of unmitigated,li,nn,ci,citl.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sweep_methods: Option<Vec<Method>>,
    #[arg(long)]
    sweep_repetitions: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_scope)]
    transfer_scope: Option<TransferScope>,
    /// Use the full 300-epoch schedule as the base instead of the desk-scale
    /// 100.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    save_dataset: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of csv,summary,curves,json.
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<ReportFormat>>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by `experiment`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<ReportFormat>>,
}

#[derive(Args)]
struct PresetsArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected SOURCE:TARGET, got `{s}`"))?;
    Ok((
        a.trim().parse().map_err(|e| format!("{a}: {e}"))?,
        b.trim().parse().map_err(|e| format!("{b}: {e}"))?,
    ))
}

fn parse_scope(s: &str) -> Result<TransferScope, String> {
    match s {
        "last-hidden-and-output" => Ok(TransferScope::LastHiddenAndOutput),
        "output-only" => Ok(TransferScope::OutputOnly),
        _ => Err(format!("unknown transfer scope `{s}` (expected last-hidden-and-output or output-only)")),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn gen(a: GenArgs) -> Result<(), Failure> {
    let device = a.device.resolve()?;
    let ds = generate(device.qubit_count(), a.samples, a.shots, &device.model, &device.graph, a.seed)
        .map_err(Failure::runtime)?;
    ds.save(&a.out).map_err(Failure::runtime)?;
    log::info!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<(), Failure> {
    let device = a.device.resolve()?;
    let dev = SimulatedDevice::new(device.model, device.graph, a.seed, "calibration").map_err(Failure::config)?;
    let cal = calibrate(&dev, dev.model.qubit_count(), a.shots).map_err(Failure::runtime)?;
    cal.save(&a.out).map_err(Failure::runtime)?;
    match cal.factorize() {
        Ok(inv) => log::info!("condition number estimate {:.3e}", inv.condition()),
        Err(e) => log::warn!("{e}"),
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    Dataset::load(path).map_err(Failure::config)
}

fn select(ds: &Dataset, fraction: Option<f64>, seed: u64, train: bool) -> Result<Vec<&Sample>, Failure> {
    match fraction {
        None => Ok(ds.samples.iter().collect()),
        Some(f) => {
            let split = ds.split(f, seed).map_err(Failure::config)?;
            Ok(if train { split.train } else { split.test })
        }
    }
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let device = a.device.resolve()?;
    let ds = load_dataset(&a.dataset)?;
    if ds.qubit_count() != device.qubit_count() {
        return Err(Failure::Config(format!(
            "dataset has {} qubits, device {}",
            ds.qubit_count(),
            device.qubit_count()
        )));
    }
    let cfg = ExperimentConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        transfer_scope: a.transfer_scope,
        ..ExperimentConfig::default()
    };
    let tc = cfg.train_config();
    let train = select(&ds, a.train_fraction, a.seed, true)?;
    let shots = ds.meta.shots;
    let model = match a.method {
        Method::Nn => train_ci(&train, &PartitionSpec::trivial(device.qubit_count()), &tc, shots, a.seed),
        Method::Ci => train_ci(&train, &device.spec, &tc, shots, a.seed),
        Method::Citl => train_citl(&train, &device.spec, &device.transfer, &tc, shots, a.seed),
        m => return Err(Failure::Config(format!("`{}` is not a trainable method", m.name()))),
    }
    .map_err(Failure::runtime)?;
    model.save(&a.out).map_err(Failure::runtime)?;
    log::info!(
        "trained {} networks ({} trainable parameters) on {} samples",
        model.network_count(),
        model.trainable_param_count(),
        train.len()
    );
    Ok(())
}

fn mitigate_cmd(a: MitigateArgs) -> Result<(), Failure> {
    let m = a.mitigator.load()?;
    let is_dataset = a.input.extension().is_some_and(|e| e == "jsonl");
    if is_dataset {
        let ds = load_dataset(&a.input)?;
        let noisy: Vec<&ProbDist> = ds.samples.iter().map(|s| &s.noisy).collect();
        let out = m.apply(&noisy)?;
        let mut text = String::new();
        for p in &out {
            text.push_str(&serde_json::to_string(p.values()).map_err(Failure::runtime)?);
            text.push('\n');
        }
        write_text(&a.out, &text)
    } else {
        let raw = std::fs::read_to_string(&a.input).map_err(|e| Failure::Config(format!("{}: {e}", a.input.display())))?;
        let values: Vec<f64> = serde_json::from_str(&raw).map_err(|e| Failure::Config(format!("{}: {e}", a.input.display())))?;
        let p = ProbDist::from_vec(values).map_err(Failure::config)?;
        let out = m.apply(&[&p])?;
        write_text(&a.out, &serde_json::to_string(out[0].values()).map_err(Failure::runtime)?)
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), Failure> {
    let m = a.mitigator.load()?;
    let ds = load_dataset(&a.dataset)?;
    let test = select(&ds, a.train_fraction, a.seed, false)?;
    let noisy: Vec<&ProbDist> = test.iter().map(|s| &s.noisy).collect();
    let out = m.apply(&noisy)?;
    let unmitigated = Distances::mean_over(test.iter().map(|s| (&s.ideal, &s.noisy)));
    let mitigated = Distances::mean_over(test.iter().zip(&out).map(|(s, q)| (&s.ideal, q)));
    let rates = Rates::between(&unmitigated, &mitigated).map_err(Failure::runtime)?;
    if a.json {
        let v = serde_json::json!({
            "samples": test.len(),
            "unmitigated": unmitigated,
            "mitigated": mitigated,
            "rates": rates,
        });
        println!("{}", serde_json::to_string_pretty(&v).map_err(Failure::runtime)?);
    } else {
        println!("{} test samples", test.len());
        println!("{:<6} {:>14} {:>14} {:>10}", "metric", "unmitigated", "mitigated", "R %");
        for metric in Metric::ALL {
            println!(
                "{:<6} {:>14.6e} {:>14.6e} {:>10.2}",
                metric.name(),
                unmitigated.get(metric),
                mitigated.get(metric),
                rates.get(metric)
            );
        }
    }
    Ok(())
}

/// Makes relative paths in a config file relative to the file itself.
fn rebase(cfg: &mut ExperimentConfig, base: &Path) {
    for p in [&mut cfg.noise, &mut cfg.graph, &mut cfg.partition, &mut cfg.dataset, &mut cfg.output]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            rebase(&mut cfg, path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None if a.full => ExperimentConfig::full_scale(),
        None => ExperimentConfig::default(),
    };
    if a.full && a.config.is_some() && a.epochs.is_none() {
        cfg.epochs = ExperimentConfig::full_scale().epochs;
    }
    a.device.apply(&mut cfg);
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &a.$field {
                cfg.$field = v.clone();
            }
        )*};
    }
    set!(samples, shots, train_fraction, methods, sweep, repetitions, seed, epochs, batch_size, learning_rate, transfer_scope);
    if a.dataset.is_some() {
        cfg.dataset.clone_from(&a.dataset);
    }
    if a.calibration_shots.is_some() {
        cfg.calibration_shots = a.calibration_shots;
    }
    if a.sweep_methods.is_some() {
        cfg.sweep_methods.clone_from(&a.sweep_methods);
    }
    if a.sweep_repetitions.is_some() {
        cfg.sweep_repetitions = a.sweep_repetitions;
    }
    if a.out.is_some() {
        cfg.output.clone_from(&a.out);
    }
    cfg.save_dataset |= a.save_dataset;
    Ok(cfg)
}

fn experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let cfg = experiment_config(&a)?;
    cfg.validate().map_err(Failure::config)?;
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("qmem-report"));
    let cfg = ExperimentConfig {
        output: Some(out.clone()),
        ..cfg
    };
    let report = run_experiment(&cfg).map_err(Failure::runtime)?;
    let formats = a.format.unwrap_or_else(|| ReportFormat::ALL.to_vec());
    emit_report(&report, &out, &formats).map_err(Failure::runtime)?;
    print!("{}", qmem_core::harness::summary_table(&report));
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Failure::Config(format!("{}: {e}", a.input.display())))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", a.input.display())))?;
    let formats = a.format.unwrap_or_else(|| ReportFormat::ALL.to_vec());
    emit_report(&report, &a.out, &formats).map_err(Failure::runtime)?;
    print!("{}", qmem_core::harness::summary_table(&report));
    Ok(())
}

fn presets_cmd(a: PresetsArgs) -> Result<(), Failure> {
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    for p in Preset::ALL {
        let stem = p.file_stem();
        p.noise().save(a.out.join(format!("{stem}.noise.json"))).map_err(Failure::runtime)?;
        p.graph().save(a.out.join(format!("{stem}.graph.json"))).map_err(Failure::runtime)?;
        p.partition().save(a.out.join(format!("{stem}.partition.json"))).map_err(Failure::runtime)?;
    }
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("QMEM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::Config(format!("QMEM_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::config)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Gen(a) => gen(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Mitigate(a) => mitigate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report_cmd(a),
        Command::Presets(a) => presets_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
