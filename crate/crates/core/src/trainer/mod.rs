//! Pretraining, evaluation protocols and experiment harnesses.
//!
//! Configuration is one JSON document with a flat section per module; the
//! two presets checked into `config/` are embedded here so the binary always
//! has a canonical default to fall back on.

mod checkpoint;
mod experiments;
mod pretrain;
mod probe;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, config_hash, hash_hex, load_checkpoint,
    save_checkpoint, Checkpoint,
};
pub use experiments::{
    ablation_csv, hard_easy_split, run_ablation_grid, run_parallel, sweep_csv,
    sweep_probe_batches, AblationResult, SplitReport, SWEEP_BATCHES,
};
pub use pretrain::{metrics_csv, pretrain, MetricsRow};
pub use probe::{linear_probe, train_softmax, ProbeReport, SoftmaxClassifier};

#[cfg(test)]
pub(crate) use pretrain::tests::tiny_config;

use crate::data::{skeleton, AugmentationConfig, Dataset, SyntheticClassSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const DESK_PRESET_JSON: &str = include_str!("../../../../config/desk.json");
pub const PAPER_PRESET_JSON: &str = include_str!("../../../../config/paper.json");

/// One synthetic motion class as written in config files.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassConfig {
    pub label: String,
    pub amplitude: f64,
    pub frequency: f64,
    pub moving_joints: Vec<usize>,
    pub noise_sigma: f64,
}

impl Default for ClassConfig {
    fn default() -> Self {
        Self {
            label: "class".into(),
            amplitude: 0.3,
            frequency: 2.0,
            moving_joints: vec![4, 5],
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: Vec<ClassConfig>,
    pub n_per_class: usize,
    pub frames: usize,
    pub augment: AugmentationConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: vec![
                ClassConfig {
                    label: "sway".into(),
                    amplitude: 0.05,
                    frequency: 1.0,
                    moving_joints: vec![0, 1, 2],
                    noise_sigma: 0.01,
                },
                ClassConfig {
                    label: "wave".into(),
                    amplitude: 0.3,
                    frequency: 2.0,
                    moving_joints: vec![4, 5],
                    noise_sigma: 0.01,
                },
                ClassConfig {
                    label: "stomp".into(),
                    amplitude: 1.0,
                    frequency: 3.0,
                    moving_joints: vec![6, 7],
                    noise_sigma: 0.01,
                },
            ],
            n_per_class: 100,
            frames: 20,
            augment: AugmentationConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("data.classes is empty".into()));
        }
        let mut labels = std::collections::HashSet::new();
        for c in &self.classes {
            if !labels.insert(c.label.as_str()) {
                return Err(Error::Config(format!("duplicate class label {:?}", c.label)));
            }
            for &j in &c.moving_joints {
                if j >= skeleton::V {
                    return Err(Error::Config(format!(
                        "class {:?} moves joint {j}, but the skeleton has {} joints",
                        c.label,
                        skeleton::V
                    )));
                }
            }
        }
        if self.n_per_class == 0 {
            return Err(Error::Config("data.n_per_class must be >= 1".into()));
        }
        if self.frames < 2 {
            return Err(Error::Config("data.frames must be >= 2".into()));
        }
        self.augment.validate()?;
        // Amplitude/frequency/mask consistency is enforced again at
        // generation time; fail early with the config-level context here.
        self.to_specs().map(|_| ())
    }

    pub fn to_specs(&self) -> Result<Vec<SyntheticClassSpec>> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut mask = vec![false; skeleton::V];
                for &j in &c.moving_joints {
                    if j >= skeleton::V {
                        return Err(Error::Config(format!(
                            "class {:?}: joint {j} out of range",
                            c.label
                        )));
                    }
                    mask[j] = true;
                }
                Ok(SyntheticClassSpec {
                    class_id: i,
                    base_pose: skeleton::base_pose(),
                    motion_amplitude: c.amplitude,
                    motion_frequency: c.frequency,
                    moving_joint_mask: mask,
                    noise_sigma: c.noise_sigma,
                })
            })
            .collect()
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        Dataset::generate(&self.to_specs()?, self.n_per_class, self.frames, seed)
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }
}

/// Optimization schedule and ablation switches for pretraining.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epoch at which alpha starts rising from 0.
    pub curriculum_start: usize,
    /// Epoch at which alpha reaches 1.
    pub curriculum_end: usize,
    pub tau: f64,
    pub queue_capacity: usize,
    pub with_negatives: bool,
    pub without_hyperbolic: bool,
    pub without_curriculum: bool,
    /// In the negatives ablation, score pairs by (negated) ball distance
    /// instead of cosine similarity.
    pub infonce_poincare_similarity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            curriculum_start: 6,
            curriculum_end: 12,
            tau: 0.07,
            queue_capacity: 256,
            with_negatives: false,
            without_hyperbolic: false,
            without_curriculum: false,
            infonce_poincare_similarity: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(format!("train.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "train.weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.curriculum_start >= self.curriculum_end {
            return Err(Error::Config(format!(
                "curriculum_start {} must be < curriculum_end {}",
                self.curriculum_start, self.curriculum_end
            )));
        }
        if !self.without_curriculum && self.epochs > 0 && self.curriculum_end > self.epochs {
            return Err(Error::Config(format!(
                "curriculum_end {} exceeds epochs {}",
                self.curriculum_end, self.epochs
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("train.tau must be > 0, got {}", self.tau)));
        }
        if self.queue_capacity == 0 {
            return Err(Error::Config("train.queue_capacity must be >= 1".into()));
        }
        Ok(())
    }
}

/// Linear-evaluation settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Fraction of the train split whose labels the probe may use.
    pub label_fraction: f64,
    /// Fraction of each class held out for accuracy measurement.
    pub test_fraction: f64,
    pub finetune: bool,
    /// Learning rate when the encoder is unfrozen.
    pub finetune_lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr: 0.2,
            momentum: 0.9,
            label_fraction: 1.0,
            test_fraction: 0.25,
            finetune: false,
            finetune_lr: 0.01,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("probe.epochs and probe.batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0 && self.finetune_lr.is_finite() && self.finetune_lr > 0.0) {
            return Err(Error::Config("probe learning rates must be > 0".into()));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(format!("probe.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "label_fraction must be in (0, 1], got {}",
                self.label_fraction
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "probe.test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Report binning and view-averaging knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    pub n_bins: usize,
    pub n_views: usize,
    /// Measure radii on the online branch instead of the target branch.
    pub online_branch: bool,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self { n_bins: 10, n_views: 5, online_branch: false }
    }
}

impl AnalyticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidInput(format!("n_bins must be >= 2, got {}", self.n_bins)));
        }
        if self.n_views == 0 {
            return Err(Error::Config("analytics.n_views must be >= 1".into()));
        }
        Ok(())
    }
}

/// The full resolved configuration of a run: one section per module.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub analytics: AnalyticsConfig,
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        self.analytics.validate()
    }

    /// The small preset: runs end to end on a laptop CPU in minutes.
    pub fn desk() -> Self {
        let cfg: Self = serde_json::from_str(DESK_PRESET_JSON).expect("embedded desk preset parses");
        cfg.validate().expect("embedded desk preset is valid");
        cfg
    }

    /// Hyperparameters at published scale; not meant to finish on a desk.
    pub fn paper() -> Self {
        let cfg: Self = serde_json::from_str(PAPER_PRESET_JSON).expect("embedded paper preset parses");
        cfg.validate().expect("embedded paper preset is valid");
        cfg
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_matches_its_documented_scale() {
        let cfg = LabConfig::desk();
        assert_eq!(cfg.data.classes.len(), 3);
        assert_eq!(cfg.data.n_per_class, 100);
        assert_eq!(cfg.data.frames, 20);
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.lr, 0.05);
        assert_eq!((cfg.train.curriculum_start, cfg.train.curriculum_end), (6, 12));
        let amps: Vec<f64> = cfg.data.classes.iter().map(|c| c.amplitude).collect();
        assert_eq!(amps, vec![0.05, 0.3, 1.0]);
    }

    #[test]
    fn paper_preset_keeps_published_hyperparameters() {
        let cfg = LabConfig::paper();
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.batch_size, 512);
        assert_eq!(cfg.train.lr, 0.2);
        assert_eq!((cfg.train.curriculum_start, cfg.train.curriculum_end), (50, 100));
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.data.frames, 50);
        assert_eq!(cfg.model.ema_coefficient, 0.99);
        assert_eq!(cfg.train.tau, 0.07);
        assert_eq!(cfg.train.queue_capacity, 256);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = LabConfig::desk();
        let text = cfg.to_json_pretty();
        let back: LabConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&cfg).unwrap());
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let mut cfg = LabConfig::desk();
        cfg.train.curriculum_start = 12;
        cfg.train.curriculum_end = 12;
        assert!(cfg.validate().is_err());

        let mut cfg = LabConfig::desk();
        cfg.train.curriculum_end = 99;
        assert!(cfg.validate().is_err(), "curriculum must finish within the run");
        cfg.train.without_curriculum = true;
        assert!(cfg.validate().is_ok(), "schedule is unused when the curriculum is off");

        let mut cfg = LabConfig::desk();
        cfg.probe.label_fraction = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidInput(_))));

        let mut cfg = LabConfig::desk();
        cfg.data.classes[0].moving_joints = vec![99];
        assert!(cfg.validate().is_err());

        let mut cfg = LabConfig::desk();
        cfg.data.classes[1].label = cfg.data.classes[0].label.clone();
        assert!(cfg.validate().is_err());

        let mut cfg = LabConfig::desk();
        cfg.analytics.n_bins = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let text = r#"{ "train": { "learning_rate": 0.1 } }"#;
        assert!(serde_json::from_str::<LabConfig>(text).is_err());
    }

    #[test]
    fn data_config_generates_the_documented_dataset() {
        let cfg = LabConfig::desk();
        let ds = cfg.data.generate(3).unwrap();
        assert_eq!(ds.sequences.len(), 300);
        assert_eq!(ds.n_classes, 3);
        assert_eq!(ds.t, 20);
        assert_eq!(cfg.data.labels(), vec!["sway", "wave", "stomp"]);
    }
}
