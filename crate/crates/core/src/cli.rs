//! Command-line front end. Every run resolves its configuration (embedded
//! preset < config file < flags), takes an exclusive lock on the output
//! directory, and writes a manifest *before* doing any heavy work so a
//! crashed run still leaves a record of what it was attempting.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime failure (with a single
//! `error: …` line on stderr).

use crate::analytics::{
    collect_records, dataset_predictions, emit_report, histogram_spearman, sorted_confusion_matrix,
    uncertainty_histogram, HistQuantity,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::trainer::{
    ablation_csv, config_hash, hard_easy_split, hash_hex, linear_probe, load_checkpoint,
    metrics_csv, pretrain, run_ablation_grid, save_checkpoint, sweep_csv, sweep_probe_batches,
    Checkpoint, LabConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "HYSP_LAB_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "hysp-lab",
    version,
    about = "Hyperbolic self-paced twin-network laboratory",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Minutes on a laptop CPU.
    Desk,
    /// Published-scale hyperparameters; not expected to finish on a desk.
    Paper,
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON config file; when absent the chosen preset applies.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset used when --config is not given.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Overrides the config's seed. Omitted: the config seed is used, or a
    /// fresh one is drawn from OS entropy if the config also leaves it 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; created if missing, locked for the run's duration.
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse a dataset cache instead of regenerating from the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset and write its binary cache.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pretraining; writes checkpoint.bin and metrics.csv.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Linear evaluation of a checkpoint.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fraction of training labels the probe may see, in (0, 1].
        #[arg(long)]
        label_fraction: Option<f64>,
        /// Unfreeze the encoder during evaluation training.
        #[arg(long)]
        finetune: bool,
    },
    /// Pretrain and probe all four objective-switch settings.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Rank samples by uncertainty, retrain on each half, probe all models.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Uncertainty records, histograms, rankings and plots for a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Probe one checkpoint at several probe batch sizes.
    SweepBatch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference audit of every differentiable operation.
    Gradcheck {
        /// Random restarts per operation.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

/// Worker cap: the environment variable wins, otherwise the machine's
/// parallelism. 0 and 1 both mean strictly serial.
pub fn resolve_threads() -> usize {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().unwrap_or(1),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

fn resolve_config(common: &Common) -> Result<LabConfig> {
    let mut cfg = match &common.config {
        Some(path) => LabConfig::from_file(path)?,
        None => match common.preset {
            Preset::Desk => LabConfig::desk(),
            Preset::Paper => LabConfig::paper(),
        },
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    } else if cfg.seed == 0 {
        // Seeds are mandatory in the manifest; draw one and record it.
        cfg.seed = u64::from_le_bytes(entropy_bytes()?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn entropy_bytes() -> Result<[u8; 8]> {
    use rand::RngCore;
    let mut b = [0u8; 8];
    rand::rngs::OsRng.fill_bytes(&mut b);
    Ok(b)
}

/// Exclusive `.lock` file in the output directory, removed on drop. A stale
/// lock from a crashed run must be deleted by hand — better a manual step
/// than two runs interleaving their artifacts.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::InvalidInput(format!(
                    "output dir {} is locked by another run (delete {} if stale)",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(serde::Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    status: String,
    seed: u64,
    threads: usize,
    code_version: String,
    config_sha256: String,
    config: LabConfig,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let digest: [u8; 32] = h.finalize().into();
    Ok(hash_hex(&digest))
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
    _lock: DirLock,
}

impl Run {
    /// Lock the output dir and write the manifest in `running` state before
    /// any heavy work starts.
    fn begin(
        command: &str,
        common: &Common,
        cfg: &LabConfig,
        threads: usize,
        extra_inputs: &[&Path],
    ) -> Result<Run> {
        let lock = DirLock::acquire(&common.out)?;
        let mut inputs = Vec::new();
        if let Some(path) = &common.config {
            inputs.push(InputHash { path: path.display().to_string(), sha256: file_sha256(path)? });
        }
        if let Some(path) = &common.dataset {
            inputs.push(InputHash { path: path.display().to_string(), sha256: file_sha256(path)? });
        }
        for path in extra_inputs {
            inputs.push(InputHash { path: path.display().to_string(), sha256: file_sha256(path)? });
        }
        let manifest = RunManifest {
            command: command.into(),
            status: "running".into(),
            seed: cfg.seed,
            threads,
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: hash_hex(&config_hash(cfg)),
            config: cfg.clone(),
            inputs,
            outputs: Vec::new(),
        };
        let run = Run { out: common.out.clone(), manifest, _lock: lock };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(self.out.join("manifest.json"), json)?;
        Ok(())
    }

    fn emit(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, body)?;
        self.manifest.outputs.push(name.into());
        Ok(path)
    }

    fn note_output(&mut self, name: &str) {
        self.manifest.outputs.push(name.into());
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.status = "completed".into();
        self.manifest.outputs.push("manifest.json".into());
        self.write_manifest()
    }
}

fn obtain_dataset(cfg: &LabConfig, common: &Common) -> Result<Dataset> {
    match &common.dataset {
        Some(path) => Dataset::load(path),
        None => cfg.data.generate(cfg.seed),
    }
}

fn load_ckpt(path: &Path, cfg: &LabConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.config_hash != config_hash(cfg) {
        eprintln!(
            "warning: checkpoint {} was produced under config {}, current is {}",
            path.display(),
            hash_hex(&ckpt.config_hash),
            hash_hex(&config_hash(cfg))
        );
    }
    Ok(ckpt)
}

fn cmd_generate(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let threads = resolve_threads();
    let mut run = Run::begin("generate", common, &cfg, threads, &[])?;
    let dataset = cfg.data.generate(cfg.seed)?;
    dataset.save(&run.out.join("dataset.bin"))?;
    run.note_output("dataset.bin");
    println!(
        "generated {} sequences ({} classes, {} frames) into {}",
        dataset.sequences.len(),
        dataset.n_classes,
        dataset.t,
        run.out.join("dataset.bin").display()
    );
    run.finish()
}

fn cmd_pretrain(common: &Common, resume: Option<&PathBuf>) -> Result<()> {
    let cfg = resolve_config(common)?;
    let threads = resolve_threads();
    let extra: Vec<&Path> = resume.iter().map(|p| p.as_path()).collect();
    let mut run = Run::begin("pretrain", common, &cfg, threads, &extra)?;
    let dataset = obtain_dataset(&cfg, common)?;
    let resume_ckpt = resume.map(|p| load_checkpoint(p)).transpose()?;
    let (ckpt, metrics) = pretrain(&cfg, &dataset, resume_ckpt)?;
    save_checkpoint(&ckpt, &run.out.join("checkpoint.bin"))?;
    run.note_output("checkpoint.bin");
    run.emit("metrics.csv", &metrics_csv(&metrics))?;
    if let Some(last) = metrics.last() {
        println!(
            "pretrained {} epochs: loss {:.6}, mean radius {:.4}, alpha {:.2}",
            ckpt.epoch, last.mean_loss, last.mean_h_norm, last.alpha
        );
    } else {
        println!("pretrained 0 epochs: checkpoint is the initialization");
    }
    run.finish()
}

fn cmd_probe(
    common: &Common,
    checkpoint: &PathBuf,
    label_fraction: Option<f64>,
    finetune: bool,
) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    if let Some(f) = label_fraction {
        cfg.probe.label_fraction = f;
    }
    if finetune {
        cfg.probe.finetune = true;
    }
    cfg.probe.validate()?;
    let threads = resolve_threads();
    let mut run = Run::begin("probe", common, &cfg, threads, &[checkpoint])?;
    let dataset = obtain_dataset(&cfg, common)?;
    let ckpt = load_ckpt(checkpoint, &cfg)?;
    let report = linear_probe(&ckpt.model, &dataset, &cfg.probe, cfg.seed)?;
    run.emit("probe.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    println!(
        "probe accuracy {:.4} ({} labeled / {} train / {} test{})",
        report.accuracy,
        report.n_labeled,
        report.n_train,
        report.n_test,
        if report.finetune { ", finetuned" } else { "" }
    );
    run.finish()
}

fn cmd_ablate(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let threads = resolve_threads();
    let mut run = Run::begin("ablate", common, &cfg, threads, &[])?;
    let dataset = obtain_dataset(&cfg, common)?;
    let results = run_ablation_grid(&cfg, &dataset, threads)?;
    let csv = ablation_csv(&results);
    run.emit("ablation.csv", &csv)?;
    print!("{csv}");
    run.finish()
}

fn cmd_split(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let threads = resolve_threads();
    let mut run = Run::begin("split", common, &cfg, threads, &[])?;
    let dataset = obtain_dataset(&cfg, common)?;
    let (full, _) = pretrain(&cfg, &dataset, None)?;
    save_checkpoint(&full, &run.out.join("full_checkpoint.bin"))?;
    run.note_output("full_checkpoint.bin");
    let report = hard_easy_split(&cfg, &dataset, &full, threads)?;
    run.emit("split.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    println!(
        "probe accuracy — full {:.4}, hard half {:.4}, easy half {:.4}",
        report.full_accuracy, report.hard_accuracy, report.easy_accuracy
    );
    run.finish()
}

fn cmd_analyze(common: &Common, checkpoint: &PathBuf) -> Result<()> {
    let cfg = resolve_config(common)?;
    let threads = resolve_threads();
    let mut run = Run::begin("analyze", common, &cfg, threads, &[checkpoint])?;
    let dataset = obtain_dataset(&cfg, common)?;
    let ckpt = load_ckpt(checkpoint, &cfg)?;
    let records = collect_records(&ckpt, &dataset, &cfg)?;
    let predictions = dataset_predictions(&ckpt.model, &dataset, &cfg.probe, cfg.seed)?;
    let confusion = sorted_confusion_matrix(&records, &predictions)?;
    let index = emit_report(&run.out, &records, cfg.analytics.n_bins, Some(&confusion))?;
    for entry in &index.artifacts {
        run.note_output(&entry.path);
    }
    run.note_output("index.json");
    for quantity in [HistQuantity::CosineDistance, HistQuantity::GradNorm] {
        let hist = uncertainty_histogram(&records, quantity, cfg.analytics.n_bins)?;
        match histogram_spearman(&hist) {
            Ok(rho) => println!("spearman(uncertainty, {}) = {:.4}", quantity.name(), rho),
            Err(_) => println!("spearman(uncertainty, {}) undefined", quantity.name()),
        }
    }
    run.finish()
}

fn cmd_sweep(common: &Common, checkpoint: &PathBuf) -> Result<()> {
    let cfg = resolve_config(common)?;
    let threads = resolve_threads();
    let mut run = Run::begin("sweep-batch", common, &cfg, threads, &[checkpoint])?;
    let dataset = obtain_dataset(&cfg, common)?;
    let ckpt = load_ckpt(checkpoint, &cfg)?;
    let rows = sweep_probe_batches(&cfg, &dataset, &ckpt, threads)?;
    let csv = sweep_csv(&rows);
    run.emit("sweep.csv", &csv)?;
    print!("{csv}");
    run.finish()
}

fn cmd_gradcheck(seeds: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::InvalidInput("gradcheck needs at least one seed".into()));
    }
    let reports = crate::gradcheck::run_all(seeds)?;
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(10);
    println!("{:width$}  {:>12}  {:>10}  status", "op", "max_rel_err", "tolerance");
    let mut all_ok = true;
    for r in &reports {
        let ok = r.passed();
        all_ok &= ok;
        println!(
            "{:width$}  {:>12.3e}  {:>10.0e}  {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if !all_ok {
        return Err(Error::NonFinite("gradient check exceeded tolerance".into()));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { common } => cmd_generate(common),
        Command::Pretrain { common, resume } => cmd_pretrain(common, resume.as_ref()),
        Command::Probe { common, checkpoint, label_fraction, finetune } => {
            cmd_probe(common, checkpoint, *label_fraction, *finetune)
        }
        Command::Ablate { common } => cmd_ablate(common),
        Command::Split { common } => cmd_split(common),
        Command::Analyze { common, checkpoint } => cmd_analyze(common, checkpoint),
        Command::SweepBatch { common, checkpoint } => cmd_sweep(common, checkpoint),
        Command::Gradcheck { seeds } => cmd_gradcheck(*seeds),
    }
}

/// Parse and run; returns the process exit code. Usage problems (including
/// a bare invocation) exit 2; runtime failures print one `error:` line and
/// exit 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let one_line = e.to_string().replace('\n', "; ");
            eprintln!("error: {one_line}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::tiny_config;

    fn tiny_config_file(dir: &Path) -> PathBuf {
        let path = dir.join("config.json");
        std::fs::write(&path, tiny_config().to_json_pretty()).unwrap();
        path
    }

    fn common(config: &Path, out: &Path) -> Vec<String> {
        vec![
            "--config".into(),
            config.display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ]
    }

    fn run_cmd(args: &[String]) -> i32 {
        let mut full = vec!["hysp-lab".to_string()];
        full.extend_from_slice(args);
        run(full)
    }

    #[test]
    fn no_arguments_is_a_usage_error() {
        assert_eq!(run(["hysp-lab"]), 2);
        assert_eq!(run(["hysp-lab", "no-such-command"]), 2);
        assert_eq!(run(["hysp-lab", "--help"]), 0);
    }

    #[test]
    fn generate_writes_cache_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = tiny_config_file(dir.path());
        let out = dir.path().join("run");
        let mut args = vec!["generate".to_string()];
        args.extend(common(&cfg_path, &out));
        assert_eq!(run_cmd(&args), 0);

        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["status"], "completed");
        assert_eq!(manifest["command"], "generate");
        assert!(manifest["seed"].as_u64().is_some());
        assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "dataset.bin"));
        let ds = Dataset::load(&out.join("dataset.bin")).unwrap();
        assert_eq!(ds.sequences.len(), 16);
        assert!(!out.join(".lock").exists(), "lock must be released");
    }

    #[test]
    fn pretrain_then_probe_and_analyze_chain_works() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = tiny_config_file(dir.path());

        let pre_out = dir.path().join("pre");
        let mut args = vec!["pretrain".to_string()];
        args.extend(common(&cfg_path, &pre_out));
        assert_eq!(run_cmd(&args), 0);
        assert!(pre_out.join("checkpoint.bin").exists());
        let metrics = std::fs::read_to_string(pre_out.join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("epoch,"));
        assert_eq!(metrics.lines().count(), 3); // header + 2 epochs

        let ckpt = pre_out.join("checkpoint.bin").display().to_string();
        let probe_out = dir.path().join("probe");
        let mut args = vec!["probe".to_string(), "--checkpoint".into(), ckpt.clone()];
        args.extend(common(&cfg_path, &probe_out));
        assert_eq!(run_cmd(&args), 0);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(probe_out.join("probe.json")).unwrap())
                .unwrap();
        assert!(report["accuracy"].as_f64().unwrap() >= 0.0);

        let an_out = dir.path().join("analyze");
        let mut args = vec!["analyze".to_string(), "--checkpoint".into(), ckpt];
        args.extend(common(&cfg_path, &an_out));
        assert_eq!(run_cmd(&args), 0);
        assert!(an_out.join("records.csv").exists());
        assert!(an_out.join("uncertainty_vs_cosine_distance.svg").exists());
        assert!(an_out.join("confusion.csv").exists());
        assert!(an_out.join("index.json").exists());
    }

    #[test]
    fn locked_output_dir_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = tiny_config_file(dir.path());
        let out = dir.path().join("run");
        std::fs::create_dir_all(&out).unwrap();
        std::fs::write(out.join(".lock"), b"").unwrap();
        let mut args = vec!["generate".to_string()];
        args.extend(common(&cfg_path, &out));
        assert_eq!(run_cmd(&args), 1, "a held lock is a runtime error");
    }

    #[test]
    fn bad_runtime_inputs_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let args = vec![
            "pretrain".to_string(),
            "--config".into(),
            dir.path().join("missing.json").display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ];
        assert_eq!(run_cmd(&args), 1);

        // A config that parses but fails validation.
        let bad = dir.path().join("bad.json");
        let mut cfg = tiny_config();
        cfg.train.curriculum_start = 5;
        cfg.train.curriculum_end = 5;
        std::fs::write(&bad, serde_json::to_string(&cfg).unwrap()).unwrap();
        let mut args = vec!["generate".to_string()];
        args.extend(common(&bad, &dir.path().join("run2")));
        assert_eq!(run_cmd(&args), 1);
    }

    #[test]
    fn seed_flag_overrides_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = tiny_config_file(dir.path());
        let out = dir.path().join("run");
        let mut args = vec!["generate".to_string(), "--seed".into(), "99".into()];
        args.extend(common(&cfg_path, &out));
        assert_eq!(run_cmd(&args), 0);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["seed"], 99);
        assert_eq!(manifest["config"]["seed"], 99, "resolved config echoes the override");
    }

    #[test]
    fn manifest_appears_before_heavy_work() {
        // The lock-then-manifest sequence happens before the dataset is
        // touched: a run pointed at a corrupt dataset cache still leaves a
        // manifest in `running` state behind.
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = tiny_config_file(dir.path());
        let bad_cache = dir.path().join("bad.bin");
        std::fs::write(&bad_cache, b"not a dataset").unwrap();
        let out = dir.path().join("run");
        let mut args = vec!["pretrain".to_string()];
        args.extend(common(&cfg_path, &out));
        args.push("--dataset".into());
        args.push(bad_cache.display().to_string());
        assert_eq!(run_cmd(&args), 1);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["status"], "running", "failure after manifest write leaves a record");
    }
}
