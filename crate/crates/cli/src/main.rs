//! `scg` — end-to-end pipeline driver.
//!
//! Subcommands: `synth` (generate a synthetic dataset), `label` (annotate one
//! record from its ECG), `train` (fit a model from a spec), `eval` (score a
//! checkpoint on a dataset), `run` (full experiment protocol), `report`
//! (consolidate run summaries into one table).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use scg_core::annotate::{detect_r_peaks, locate_ao, AnnotationFile, LabelingConfig};
use scg_core::detect::{default_tau_grid, select_threshold};
use scg_core::experiment::dataset::{evaluate_subjects, threshold_pairs, Dataset};
use scg_core::experiment::runner::{run_experiment, DatasetStore, Summary};
use scg_core::experiment::spec::ExperimentSpec;
use scg_core::experiment::synth::{generate_synthetic, SynthConfig, SynthTruth};
use scg_core::experiment::train::{train_model, pool_windows};
use scg_core::io::{load_record, save_record_csv};
use scg_core::neural::{load_checkpoint, save_checkpoint, UNet};
use scg_core::record::ChannelSelection;
use scg_core::signal::WindowConfig;

#[derive(Parser)]
#[command(name = "scg", version, about = "ECG-free systolic-complex detection in SCG traces")]
struct Cli {
    /// Bound worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Verbose progress on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory with known AO ground truth.
    Synth(SynthArgs),
    /// Label one record from its synchronized ECG, writing an annotation file.
    Label(LabelArgs),
    /// Train one model from a spec file; writes checkpoint + history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Run a full experiment protocol from a spec file.
    Run(RunArgs),
    /// Consolidate run summaries under a runs directory into one CSV table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 60.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 500.0)]
    rate_hz: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Motion-artifact bursts per minute.
    #[arg(long, default_value_t = 0.0)]
    artifact_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    artifact_amplitude: f64,
    /// 1 (acc_z), 3 (accelerometer) or 6 (accelerometer + gyroscope).
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct LabelArgs {
    /// Record data file (.csv or .f32) with its JSON sidecar next to it.
    #[arg(long)]
    record: PathBuf,
    /// Output annotation path (default: `<record>.annotation.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Directory holding dataset subdirectories by id.
    #[arg(long)]
    data_root: PathBuf,
    /// Output directory (default: `$SCG_RUNS_DIR` or `runs`).
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: SpecOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory to score.
    #[arg(long)]
    dataset: PathBuf,
    /// Detection threshold; selected on the evaluation data when omitted.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = parse_channel_mode, default_value = "single_z")]
    channel_mode: ChannelSelection,
    #[arg(long, default_value_t = 2)]
    min_box_len: usize,
    /// Output directory for metrics.csv / summary.json (default: `<dataset>-eval`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Directory holding dataset subdirectories by id.
    #[arg(long)]
    data_root: PathBuf,
    /// Output root (default: `$SCG_RUNS_DIR` or `runs`).
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: SpecOverrides,
}

/// Flags mirroring spec-file keys; a flag always overrides the file.
#[derive(Args)]
struct SpecOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_channel_mode)]
    channel_mode: Option<ChannelSelection>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    base_filters: Option<usize>,
}

impl SpecOverrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(seed) = self.seed {
            spec.experiment.seed = seed;
        }
        if let Some(mode) = self.channel_mode {
            spec.experiment.channel_mode = mode;
        }
        if let Some(v) = self.max_epochs {
            spec.training.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            spec.training.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            spec.training.learning_rate = v;
        }
        if let Some(v) = self.patience {
            spec.training.patience = v;
        }
        if let Some(v) = self.base_filters {
            spec.model.base_filters = v;
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Runs directory to scan for `*/summary.json`.
    #[arg(long)]
    runs: PathBuf,
    /// Output CSV path (default: `<runs>/report.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_channel_mode(s: &str) -> Result<ChannelSelection, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn runs_root(arg: &Option<PathBuf>) -> PathBuf {
    arg.clone()
        .or_else(|| std::env::var_os("SCG_RUNS_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error[config]: cannot set --jobs: {e}");
            return ExitCode::FAILURE;
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.jobs.is_some() {
        eprintln!("note: built without the `parallel` feature; --jobs has no effect");
    }

    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args, cli.verbose),
        Command::Label(args) => cmd_label(args, cli.verbose),
        Command::Train(args) => cmd_train(args, cli.verbose),
        Command::Eval(args) => cmd_eval(args, cli.verbose),
        Command::Run(args) => cmd_run(args, cli.verbose),
        Command::Report(args) => cmd_report(args, cli.verbose),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let class = err
                .downcast_ref::<scg_core::Error>()
                .map(|e| e.class())
                .unwrap_or("error");
            eprintln!("error[{class}]: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(args: &SynthArgs, verbose: bool) -> Result<()> {
    let cfg = SynthConfig {
        n_subjects: args.subjects,
        duration_s: args.duration_s,
        native_rate_hz: args.rate_hz,
        noise_std: args.noise_std,
        artifact_rate_per_min: args.artifact_rate,
        artifact_amplitude: args.artifact_amplitude,
        channel_count: args.channels,
        ..SynthConfig::default()
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let subjects = generate_synthetic(&cfg, args.seed)?;
    for s in &subjects {
        let base = args.out.join(&s.record.subject_id);
        save_record_csv(&s.record, &base.with_extension("csv"))?;
        let truth = SynthTruth {
            subject_id: s.record.subject_id.clone(),
            ao_times_s: s.true_ao_times_s.clone(),
        };
        let mut json = serde_json::to_string_pretty(&truth)?;
        json.push('\n');
        std::fs::write(
            args.out.join(format!("{}.truth.json", s.record.subject_id)),
            json,
        )?;
        if verbose {
            eprintln!(
                "wrote {} ({:.0} s, {} beats)",
                base.with_extension("csv").display(),
                args.duration_s,
                s.true_ao_times_s.len()
            );
        }
    }
    println!("{} subjects -> {}", subjects.len(), args.out.display());
    Ok(())
}

fn cmd_label(args: &LabelArgs, verbose: bool) -> Result<()> {
    let record = load_record(&args.record)?;
    let cfg = LabelingConfig::default();
    let ecg = record
        .ecg
        .as_ref()
        .ok_or_else(|| scg_core::Error::Schema(format!("{} has no ecg column", args.record.display())))?;
    let r_peaks = detect_r_peaks(ecg, record.sample_rate_hz)?;
    let ao_native = locate_ao(record.acc_z()?, &r_peaks, record.sample_rate_hz, &cfg);
    let annotation = scg_core::annotate::annotation_from_native(
        &ao_native,
        record.len(),
        record.sample_rate_hz,
        &cfg,
    )?;
    let file = AnnotationFile::from_labeling(
        &record.subject_id,
        record.sample_rate_hz,
        &ao_native,
        &annotation,
    );
    let out = args.out.clone().unwrap_or_else(|| {
        let stem = args.record.file_stem().unwrap_or_default().to_string_lossy();
        args.record.with_file_name(format!("{stem}.annotation.json"))
    });
    file.save(&out)?;
    if verbose {
        eprintln!(
            "{}: {} R-peaks, {} AO points",
            record.subject_id,
            r_peaks.len(),
            ao_native.len()
        );
    }
    println!("{}", out.display());
    Ok(())
}

fn load_spec(path: &Path, overrides: &SpecOverrides) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    overrides.apply(&mut spec);
    spec.validate()?;
    Ok(spec)
}

fn cmd_train(args: &TrainArgs, verbose: bool) -> Result<()> {
    let spec = load_spec(&args.spec, &args.overrides)?;
    let store = DatasetStore::new(&args.data_root);
    let out_root = runs_root(&args.runs_dir);
    let run_dir = out_root.join(spec.config_hash()).join("train");
    std::fs::create_dir_all(&run_dir)?;

    // Pool the training datasets with a subject-level validation split.
    let mut subjects = Vec::new();
    for id in &spec.experiment.train_datasets {
        let ds = store.load(id, spec.experiment.channel_mode)?;
        subjects.extend(ds.subjects);
    }
    subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    if subjects.len() < 2 {
        anyhow::bail!("training needs at least 2 subjects");
    }
    let n_val = ((subjects.len() as f64 * 0.2).round() as usize).clamp(1, subjects.len() - 1);
    let (val_subjects, train_subjects) = subjects.split_at(n_val);
    let train = pool_windows(&train_subjects.iter().collect::<Vec<_>>());
    let val = pool_windows(&val_subjects.iter().collect::<Vec<_>>());

    let mut model = UNet::<f32>::new(spec.unet_config(), spec.experiment.seed)?;
    let history = train_model(&mut model, &train, &val, &spec.training, spec.experiment.seed)?;
    let tau = select_threshold(
        &threshold_pairs(&model, &val)?,
        &default_tau_grid(),
        spec.detect.min_box_len,
    )?;

    let ckpt = run_dir.join("checkpoint.ckpt");
    save_checkpoint(&model, None, &ckpt)?;
    std::fs::write(run_dir.join("history.csv"), history.to_csv())?;
    std::fs::write(
        run_dir.join("train.json"),
        format!(
            "{}\n",
            serde_json::json!({
                "config_hash": spec.config_hash(),
                "seed": spec.experiment.seed,
                "tau": tau,
                "best_epoch": history.best_epoch,
                "stopped_early": history.stopped_early,
                "checkpoint": "checkpoint.ckpt",
            })
        ),
    )?;
    if verbose {
        eprintln!(
            "epochs {} best {:?} stopped_early {}",
            history.train_loss.len(),
            history.best_epoch,
            history.stopped_early
        );
    }
    println!("{}", ckpt.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs, verbose: bool) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&args.checkpoint)?;
    if model.config.in_channels != args.channel_mode.channel_count() {
        anyhow::bail!(scg_core::Error::Shape(format!(
            "checkpoint expects {} channels but channel mode {} provides {}",
            model.config.in_channels,
            args.channel_mode,
            args.channel_mode.channel_count()
        )));
    }
    let dataset_id = args
        .dataset
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let dataset = Dataset::load_dir(
        &args.dataset,
        &dataset_id,
        args.channel_mode,
        &WindowConfig::default(),
        &LabelingConfig::default(),
    )?;

    let (tau, tau_source) = match args.tau {
        Some(t) => (t, "provided"),
        None => {
            let all = pool_windows(&dataset.subjects.iter().collect::<Vec<_>>());
            let t = select_threshold(
                &threshold_pairs(&model, &all)?,
                &default_tau_grid(),
                args.min_box_len,
            )?;
            (t, "selected_on_eval_data")
        }
    };

    let users: Vec<_> = dataset.subjects.iter().collect();
    let report = evaluate_subjects(&model, &users, tau, args.min_box_len)?;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.dataset.with_file_name(format!("{dataset_id}-eval")));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("metrics.csv"), report.to_csv())?;
    std::fs::write(
        out.join("summary.json"),
        format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::json!({
                "checkpoint": args.checkpoint.to_string_lossy(),
                "dataset": dataset_id,
                "tau": tau,
                "tau_source": tau_source,
                "per_user": report.per_user,
                "aggregate": report.aggregate,
            }))?
        ),
    )?;
    if verbose {
        for (user, m) in &report.per_user {
            eprintln!("{user}: P {:.3} R {:.3} F1 {:.3}", m.precision, m.recall, m.f1);
        }
    }
    println!(
        "tau {:.2} precision {:.4} recall {:.4} f1 {:.4} -> {}",
        tau,
        report.aggregate.precision,
        report.aggregate.recall,
        report.aggregate.f1,
        out.display()
    );
    Ok(())
}

fn cmd_run(args: &RunArgs, verbose: bool) -> Result<()> {
    let spec = load_spec(&args.spec, &args.overrides)?;
    let store = DatasetStore::new(&args.data_root);
    let out = run_experiment(&spec, &store, &runs_root(&args.runs_dir))?;
    if verbose {
        for (user, m) in &out.summary.per_user {
            eprintln!("{user}: P {:.3} R {:.3} F1 {:.3}", m.precision, m.recall, m.f1);
        }
    }
    println!(
        "{} precision {:.4} recall {:.4} f1 {:.4} -> {}",
        out.summary.protocol,
        out.summary.aggregate.precision,
        out.summary.aggregate.recall,
        out.summary.aggregate.f1,
        out.run_dir.display()
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs, verbose: bool) -> Result<()> {
    let mut rows: BTreeMap<String, String> = BTreeMap::new();
    let mut dirs: Vec<_> = std::fs::read_dir(&args.runs)
        .with_context(|| format!("reading {}", args.runs.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let summary_path = dir.join("summary.json");
        if !summary_path.is_file() {
            continue;
        }
        let summary: Summary = serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?;
        let a = &summary.aggregate;
        let baseline_f1 = summary
            .baseline_aggregate
            .map(|b| format!("{:.4}", b.f1))
            .unwrap_or_default();
        let key = format!(
            "{}|{}|{}|{}",
            summary.train_datasets.join("+"),
            summary.test_dataset,
            summary.channel_mode,
            summary.protocol
        );
        rows.insert(
            key,
            format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{},{}",
                summary.train_datasets.join("+"),
                summary.test_dataset,
                summary.channel_mode,
                summary.protocol,
                a.precision,
                a.recall,
                a.f1,
                baseline_f1,
                summary.config_hash,
            ),
        );
        if verbose {
            eprintln!("{}: f1 {:.4}", summary_path.display(), a.f1);
        }
    }
    let mut csv =
        String::from("train,test,channels,protocol,precision,recall,f1,initial_f1,config_hash\n");
    for row in rows.values() {
        csv.push_str(row);
        csv.push('\n');
    }
    let out = args.out.clone().unwrap_or_else(|| args.runs.join("report.csv"));
    std::fs::write(&out, csv)?;
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}
