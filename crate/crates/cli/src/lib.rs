//! Command-line harness: pre-train the bank, generate the dataset, train and
//! evaluate the classifier, and run the controller experiments.
//!
//! Every command writes a JSON manifest next to its outputs holding the
//! effective configuration, the master seed and SHA-256 checksums of the
//! files it read and wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anc_core::bank::{build_bank, generate_dataset, load_bank, load_dataset, save_bank, save_dataset};
use anc_core::classifier::{
    evaluate, load_model, save_model, train, CnnModel, EpochMetrics, TrainReport,
};
use anc_core::config::RunConfig;
use anc_core::hybrid::{simulate, CnnSelector, ControllerMode, FilterSelector, Scenario, SimulationResult};
use anc_core::NUM_CONTROL_FILTERS;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "anc", version, about = "Hybrid SFANC / FxNLMS active noise control harness")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub bank: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train the control-filter bank.
    Pretrain,
    /// Generate and label the frame dataset.
    GenDataset,
    /// Train the classifier.
    Train,
    /// Evaluate the classifier on the test split.
    Eval,
    /// Run one controller on one scenario.
    Simulate {
        #[arg(long)]
        mode: ControllerMode,
        #[arg(long)]
        scenario: Scenario,
    },
}

impl Cli {
    /// The configuration file (or defaults) with flag overrides applied.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(p) = &self.out_dir {
            c.out_dir = p.clone();
        }
        if let Some(p) = &self.bank {
            c.bank_path = p.clone();
        }
        if let Some(p) = &self.dataset {
            c.dataset_path = p.clone();
        }
        if let Some(p) = &self.model {
            c.model_path = p.clone();
        }
        c.validate()?;
        Ok(c.effective())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.run_config()?;
    match &cli.command {
        Command::Pretrain => cmd_pretrain(&config).map(drop),
        Command::GenDataset => cmd_gen_dataset(&config).map(drop),
        Command::Train => cmd_train(&config).map(drop),
        Command::Eval => cmd_eval(&config).map(drop),
        Command::Simulate { mode, scenario } => cmd_simulate(*mode, *scenario, &config).map(drop),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, E: Serialize> {
    command: &'a str,
    seed: u64,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    summary: E,
    config: &'a RunConfig,
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.clone(),
                sha256: file_sha256(p)?,
            })
        })
        .collect()
}

fn write_manifest<E: Serialize>(
    config: &RunConfig,
    name: &str,
    command: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    summary: E,
) -> Result<PathBuf> {
    let m = Manifest {
        command,
        seed: config.seed,
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
        summary,
        config,
    };
    let path = config.out_dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn out_file(config: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating {}", config.out_dir.display()))?;
    Ok(config.out_dir.join(name))
}

fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainSummary {
    pub bank: PathBuf,
    pub band_nr_db: Vec<f64>,
}

pub fn cmd_pretrain(config: &RunConfig) -> Result<PretrainSummary> {
    let paths = config.paths()?;
    let bank = build_bank(&paths, &config.pretrain).context("pre-training the control-filter bank")?;
    ensure_parent(&config.bank_path)?;
    save_bank(&bank, &config.bank_path)?;

    let records = &bank.meta().records;
    let table = out_file(config, "pretrain_nr.csv")?;
    write_csv(
        &table,
        &["index", "low_hz", "high_hz", "mu_used", "heldout_nr_db"],
        records
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.band.low_hz, r.band.high_hz, r.mu_used, r.heldout_nr_db)),
    )?;
    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "index", "low_hz", "high_hz", "mu", "nr_db");
    for (i, r) in records.iter().enumerate() {
        println!(
            "{i:>5} {:>9.1} {:>9.1} {:>9.5} {:>9.2}",
            r.band.low_hz, r.band.high_hz, r.mu_used, r.heldout_nr_db
        );
    }
    let summary = PretrainSummary {
        bank: config.bank_path.clone(),
        band_nr_db: records.iter().map(|r| r.heldout_nr_db).collect(),
    };
    write_manifest(
        config,
        "pretrain_manifest.json",
        "pretrain",
        &[],
        &[config.bank_path.clone(), table],
        &summary,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub entries: usize,
    pub label_histogram: Vec<usize>,
}

pub fn cmd_gen_dataset(config: &RunConfig) -> Result<DatasetSummary> {
    let bank = load_bank(&config.bank_path)
        .with_context(|| format!("loading bank {}", config.bank_path.display()))?;
    let ds = generate_dataset(
        &bank,
        &config.paths()?,
        config.dataset,
        config.dataset_seed(),
        config.frame_len,
        config.sample_rate_hz,
        &config.dataset_ranges,
    )?;
    ensure_parent(&config.dataset_path)?;
    save_dataset(&ds, &config.dataset_path)?;

    let hist = ds.label_histogram(NUM_CONTROL_FILTERS);
    let hist_path = out_file(config, "label_histogram.csv")?;
    write_csv(&hist_path, &["label", "count"], hist.iter().enumerate())?;
    println!("label histogram ({} entries):", ds.entries.len());
    for (k, n) in hist.iter().enumerate() {
        println!("{k:>3} {n:>6}");
    }
    let summary = DatasetSummary {
        entries: ds.entries.len(),
        label_histogram: hist,
    };
    write_manifest(
        config,
        "dataset_manifest.json",
        "gen-dataset",
        &[config.bank_path.clone()],
        &[config.dataset_path.clone(), hist_path],
        &summary,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub report: TrainReport,
    pub test_accuracy: f64,
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    let ds = load_dataset(&config.dataset_path)
        .with_context(|| format!("loading dataset {}", config.dataset_path.display()))?;
    if ds.frame_len != config.model.input_len {
        bail!(
            "dataset frames have {} samples, model expects {}",
            ds.frame_len,
            config.model.input_len
        );
    }
    let model = CnnModel::new(config.model, config.model_init_seed())?;
    let (model, report) = train(model, &ds, &config.train, |m: &EpochMetrics| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  val_accuracy {:.4}",
            m.epoch, m.loss, m.val_accuracy
        );
    })?;
    ensure_parent(&config.model_path)?;
    save_model(&model, &config.model_path)?;
    let (test_accuracy, _) = evaluate(&model, &ds)?;
    println!(
        "best epoch {} (val {:.4}), test accuracy {:.4}",
        report.best_epoch, report.best_val_accuracy, test_accuracy
    );

    let metrics = out_file(config, "epoch_metrics.csv")?;
    write_csv(
        &metrics,
        &["epoch", "loss", "val_accuracy"],
        report.epochs.iter().map(|m| (m.epoch, m.loss, m.val_accuracy)),
    )?;
    let summary = TrainSummary {
        report,
        test_accuracy,
    };
    write_manifest(
        config,
        "train_manifest.json",
        "train",
        &[config.dataset_path.clone()],
        &[config.model_path.clone(), metrics],
        &summary,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

pub fn cmd_eval(config: &RunConfig) -> Result<EvalSummary> {
    let ds = load_dataset(&config.dataset_path)
        .with_context(|| format!("loading dataset {}", config.dataset_path.display()))?;
    let model = load_model(&config.model_path)
        .with_context(|| format!("loading model {}", config.model_path.display()))?;
    let (accuracy, confusion) = evaluate(&model, &ds)?;

    let cm_path = out_file(config, "confusion_matrix.csv")?;
    let mut header = vec!["true".to_string()];
    header.extend((0..confusion.len()).map(|k| format!("pred_{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &cm_path,
        &header,
        confusion.iter().enumerate().map(|(t, row)| {
            let mut r = vec![t];
            r.extend(row);
            r
        }),
    )?;
    println!("test accuracy {accuracy:.4}");
    let summary = EvalSummary { accuracy, confusion };
    write_manifest(
        config,
        "eval_manifest.json",
        "eval",
        &[config.dataset_path.clone(), config.model_path.clone()],
        &[cm_path],
        &summary,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub mode: ControllerMode,
    pub scenario: Scenario,
    pub noise_seed: u64,
    pub nr_per_second: Vec<f64>,
    pub outputs: Vec<PathBuf>,
}

/// Run one mode on one scenario with already-loaded artifacts.
pub fn run_experiment(
    mode: ControllerMode,
    scenario: Scenario,
    config: &RunConfig,
    noise_seed: u64,
    bank: Option<&anc_core::bank::ControlFilterBank>,
    selector: Option<&mut dyn FilterSelector>,
) -> Result<SimulationResult> {
    let (x, schedule) = scenario.build(&config.scenario, &config.paths()?, noise_seed)?;
    Ok(simulate(mode, &x, &schedule, bank, selector, &config.sim_config())?)
}

pub fn cmd_simulate(mode: ControllerMode, scenario: Scenario, config: &RunConfig) -> Result<SimulateSummary> {
    let noise_seed = config.scenario_seed(0);
    let mut inputs = Vec::new();
    let result = if mode.needs_selector() {
        let bank = load_bank(&config.bank_path)
            .with_context(|| format!("loading bank {}", config.bank_path.display()))?;
        let model = load_model(&config.model_path)
            .with_context(|| format!("loading model {}", config.model_path.display()))?;
        inputs.extend([config.bank_path.clone(), config.model_path.clone()]);
        let mut sel = CnnSelector::new(&model);
        run_experiment(mode, scenario, config, noise_seed, Some(&bank), Some(&mut sel))?
    } else {
        run_experiment(mode, scenario, config, noise_seed, None, None)?
    };

    let stem = format!("{scenario}_{mode}");
    let trace = out_file(config, &format!("{stem}_error.csv"))?;
    write_csv(
        &trace,
        &["sample_index", "d", "e"],
        result
            .d_trace
            .samples()
            .iter()
            .zip(result.e_trace.samples())
            .enumerate()
            .map(|(n, (d, e))| (n, d, e)),
    )?;
    let nr = out_file(config, &format!("{stem}_nr.csv"))?;
    write_csv(&nr, &["second_index", "nr_db"], result.nr_per_second.iter().enumerate())?;
    let mut outputs = vec![trace, nr];
    if mode.needs_selector() {
        let dec = out_file(config, &format!("{stem}_decisions.csv"))?;
        write_csv(
            &dec,
            &["frame_index", "selected", "swapped"],
            result.decisions.iter().map(|d| (d.frame_index, d.selected, d.swapped)),
        )?;
        outputs.push(dec);
    }

    for (s, v) in result.nr_per_second.iter().enumerate() {
        println!("{s:>3} {v:>8.2} dB");
    }
    let summary = SimulateSummary {
        mode,
        scenario,
        noise_seed,
        nr_per_second: result.nr_per_second,
        outputs: outputs.clone(),
    };
    write_manifest(
        config,
        &format!("{stem}_manifest.json"),
        "simulate",
        &inputs,
        &outputs,
        &summary,
    )?;
    Ok(summary)
}
