use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explainers::{Engine, ShapConfig};
use crate::models::{Architecture, ModelSpec};
use crate::protocol::{PoolConfig, ProtocolConfig};
use crate::strategies::{GssConfig, OptConfig, Strategy};

/// Top-level run configuration, read from TOML. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    pub model: ModelConfig,
    pub strategies: Vec<String>,
    #[serde(default)]
    pub buffer: BufferConfig,
    pub opt: OptSettings,
    #[serde(default)]
    pub shap: ShapSettings,
    #[serde(default)]
    pub protocol: ProtocolSettings,
    #[serde(default)]
    pub output: OutputSettings,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Parallel training/explanation jobs. Does not affect results.
    #[serde(default = "one")]
    pub workers: usize,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("shapdrift-out")
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Benchmark {
    /// IDX files as distributed for MNIST.
    MnistIdx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "ten")]
        classes: usize,
        #[serde(default = "five")]
        experiences: usize,
        #[serde(default)]
        class_order: Option<Vec<usize>>,
    },
    SynthImages {
        #[serde(default = "ten")]
        classes: usize,
        #[serde(default = "five")]
        experiences: usize,
        #[serde(default)]
        class_order: Option<Vec<usize>>,
        per_class: usize,
        #[serde(default = "default_side")]
        side: usize,
    },
    SynthSequences {
        #[serde(default = "ten")]
        classes: usize,
        #[serde(default = "five")]
        experiences: usize,
        #[serde(default)]
        class_order: Option<Vec<usize>>,
        per_class: usize,
        steps: usize,
        features: usize,
    },
    /// Sequence files in the crate's binary format; see [`crate::data::load_sequences`].
    UserSequences {
        train: PathBuf,
        test: PathBuf,
        classes: usize,
        #[serde(default = "five")]
        experiences: usize,
        #[serde(default)]
        class_order: Option<Vec<usize>>,
    },
}

fn ten() -> usize {
    10
}
fn five() -> usize {
    5
}
fn default_side() -> usize {
    28
}

impl Benchmark {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MnistIdx { .. } => "mnist-idx",
            Self::SynthImages { .. } => "synth-images",
            Self::SynthSequences { .. } => "synth-sequences",
            Self::UserSequences { .. } => "user-sequences",
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Self::MnistIdx { classes, .. }
            | Self::SynthImages { classes, .. }
            | Self::SynthSequences { classes, .. }
            | Self::UserSequences { classes, .. } => *classes,
        }
    }

    pub fn experiences(&self) -> usize {
        match self {
            Self::MnistIdx { experiences, .. }
            | Self::SynthImages { experiences, .. }
            | Self::SynthSequences { experiences, .. }
            | Self::UserSequences { experiences, .. } => *experiences,
        }
    }

    /// The configured class order, or `0..classes`.
    pub fn class_order(&self) -> Vec<usize> {
        let given = match self {
            Self::MnistIdx { class_order, .. }
            | Self::SynthImages { class_order, .. }
            | Self::SynthSequences { class_order, .. }
            | Self::UserSequences { class_order, .. } => class_order.clone(),
        };
        given.unwrap_or_else(|| (0..self.classes()).collect())
    }

    fn paths(&self) -> Vec<(&'static str, &Path)> {
        match self {
            Self::MnistIdx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![
                ("benchmark.train_images", train_images.as_path()),
                ("benchmark.train_labels", train_labels.as_path()),
                ("benchmark.test_images", test_images.as_path()),
                ("benchmark.test_labels", test_labels.as_path()),
            ],
            Self::UserSequences { train, test, .. } => {
                vec![("benchmark.train", train.as_path()), ("benchmark.test", test.as_path())]
            }
            _ => Vec::new(),
        }
    }
}

/// Architecture settings; the class count comes from the benchmark and the
/// seed from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    #[serde(default = "three")]
    pub kernel: usize,
    #[serde(default = "half")]
    pub leak: f64,
    #[serde(default = "rho")]
    pub spectral_radius: f64,
    #[serde(default = "unit")]
    pub input_scaling: f64,
}

fn three() -> usize {
    3
}
fn half() -> f64 {
    0.5
}
fn rho() -> f64 {
    0.9
}
fn unit() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn spec(&self, classes: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            kernel: self.kernel,
            leak: self.leak,
            spectral_radius: self.spectral_radius,
            input_scaling: self.input_scaling,
            ..ModelSpec::new(self.architecture, self.widths.clone(), classes, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferConfig {
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default)]
    pub gss: GssConfig,
}

fn default_capacity() -> usize {
    2000
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity: default_capacity(),
            gss: GssConfig::default(),
        }
    }
}

/// Optimizer settings; the shuffling seed comes from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSettings {
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapSettings {
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_background")]
    pub background_n: usize,
    #[serde(default = "default_probes")]
    pub probes_per_class: usize,
}

fn default_engine() -> Engine {
    Engine::Gradient
}
fn default_samples() -> usize {
    200
}
fn default_background() -> usize {
    600
}
fn default_probes() -> usize {
    50
}

impl Default for ShapSettings {
    fn default() -> Self {
        Self {
            engine: default_engine(),
            n_samples: default_samples(),
            noise_std: 0.0,
            background_n: default_background(),
            probes_per_class: default_probes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSettings {
    /// Epochs for the Joint reference; defaults to `opt.epochs`.
    #[serde(default)]
    pub joint_epochs: Option<usize>,
    #[serde(default)]
    pub pool: PoolConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaliencyScale {
    /// Each tile is min-max scaled on its own.
    #[default]
    PerTile,
    /// All attribution tiles of a grid share one range.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    /// Probes shown in each saliency grid (image benchmarks only).
    #[serde(default = "default_grid_probes")]
    pub grid_probes: usize,
    #[serde(default)]
    pub saliency_scale: SaliencyScale,
    #[serde(default = "yes")]
    pub checkpoints: bool,
}

fn default_grid_probes() -> usize {
    4
}
fn yes() -> bool {
    true
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            grid_probes: default_grid_probes(),
            saliency_scale: SaliencyScale::default(),
            checkpoints: true,
        }
    }
}

fn field(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!(" at bytes {}..{}", s.start, s.end)).unwrap_or_default();
            Error::Config {
                field: "<toml>".into(),
                reason: format!("{}{path}", e.message()),
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative data paths are taken relative to the config file.
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.benchmark {
            Benchmark::MnistIdx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            Benchmark::UserSequences { train, test, .. } => {
                fix(train);
                fix(test);
            }
            _ => {}
        }
    }

    pub fn parsed_strategies(&self) -> Result<Vec<Strategy>> {
        self.strategies.iter().map(|s| s.parse()).collect()
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        let strategies = self.parsed_strategies()?;
        if strategies.is_empty() {
            return Err(field("strategies", "at least one strategy is required"));
        }
        for (i, s) in strategies.iter().enumerate() {
            if strategies[..i].contains(s) {
                return Err(field("strategies", format!("`{}` listed twice", s.name())));
            }
        }
        let b = &self.benchmark;
        if b.classes() < 2 {
            return Err(field("benchmark.classes", "need at least two classes"));
        }
        if b.experiences() == 0 || b.classes() % b.experiences() != 0 {
            return Err(field(
                "benchmark.experiences",
                format!("{} classes cannot be split evenly into {} experiences", b.classes(), b.experiences()),
            ));
        }
        let mut order = b.class_order();
        order.sort_unstable();
        if order != (0..b.classes()).collect::<Vec<_>>() {
            return Err(field("benchmark.class_order", "must be a permutation of 0..classes"));
        }
        for (name, p) in b.paths() {
            if !p.exists() {
                return Err(field(name, format!("{} does not exist", p.display())));
            }
        }
        match b {
            Benchmark::SynthImages { per_class, side, .. } => {
                if *per_class < 6 || *side < 4 {
                    return Err(field("benchmark", "synth-images needs per_class >= 6 and side >= 4"));
                }
            }
            Benchmark::SynthSequences {
                per_class, steps, features, ..
            } => {
                if *per_class < 6 || *steps == 0 || *features == 0 {
                    return Err(field("benchmark", "synth-sequences needs per_class >= 6 and positive steps/features"));
                }
            }
            _ => {}
        }
        let image = matches!(b, Benchmark::MnistIdx { .. } | Benchmark::SynthImages { .. });
        match (self.model.architecture, image) {
            (Architecture::Mlp, _) | (Architecture::Cnn2d, true) => {}
            (Architecture::Conv1d | Architecture::Lstm | Architecture::Esn, false) => {}
            (arch, _) => {
                return Err(field(
                    "model.architecture",
                    format!("{} does not fit the {} benchmark", arch.name(), b.name()),
                ))
            }
        }
        if self.model.widths.contains(&0) {
            return Err(field("model.widths", "zero-width layer"));
        }
        if !(self.opt.lr > 0.0 && self.opt.lr.is_finite()) {
            return Err(field("opt.lr", "must be positive and finite"));
        }
        if self.opt.batch_size == 0 || self.opt.epochs == 0 {
            return Err(field("opt", "batch_size and epochs must be positive"));
        }
        if self.buffer.capacity == 0 && strategies.iter().any(|s| matches!(s, Strategy::Er | Strategy::Gss)) {
            return Err(field("buffer.capacity", "replay strategies need a positive capacity"));
        }
        if self.shap.n_samples == 0 {
            return Err(field("shap.n_samples", "must be at least 1"));
        }
        if self.shap.background_n == 0 || self.shap.probes_per_class == 0 {
            return Err(field("shap", "background_n and probes_per_class must be positive"));
        }
        if self.protocol.pool.kernel == 0 {
            return Err(field("protocol.pool.kernel", "must be positive"));
        }
        if self.workers == 0 {
            return Err(field("workers", "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of every field that affects
    /// results (everything except the output directory and worker count).
    pub fn hash(&self) -> String {
        let semantic = Self {
            out_dir: PathBuf::new(),
            workers: 1,
            ..self.clone()
        };
        let json = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn protocol_config(&self, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            opt: OptConfig {
                lr: self.opt.lr,
                batch_size: self.opt.batch_size,
                epochs: self.opt.epochs,
                clip_norm: self.opt.clip_norm,
                seed,
            },
            joint_epochs: self.protocol.joint_epochs,
            buffer_capacity: self.buffer.capacity.max(1),
            gss: self.buffer.gss,
            shap: ShapConfig {
                engine: self.shap.engine,
                n_samples: self.shap.n_samples,
                noise_std: self.shap.noise_std,
                seed,
            },
            pool: self.protocol.pool,
            keep_maps: self.output.grid_probes,
            workers: self.workers,
        }
    }
}
