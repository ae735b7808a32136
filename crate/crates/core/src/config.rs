//! Run configuration as a plain-text `key = value` file.
//!
//! Every tunable default is a key. Unknown keys and malformed values are
//! rejected, and [`RunConfig::to_text`] prints the fully resolved
//! configuration in a canonical order, so `parse(to_text(c)) == c`.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 3
//! scale = 4
//! train.pretrain_iters = 200
//! ```

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::data::{load_dir, synthetic_corpus, Dataset, DegradeMode, Degradation, NoiseSpec};
use crate::losses::{FeatureExtractor, FeatureScaleMode, LossWeights, TripletEmbedding, TripletMode, DEFAULT_FEATURE_WIDTHS};
use crate::metrics::ColorMode;
use crate::models::{DiscriminatorConfig, GeneratorConfig, OutputMapping};
use crate::progressive::{PipelineSpec, TrainSchedule, MAX_STAGES};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "scale",
    "channels",
    "patch_size",
    "data_dir",
    "synthetic.count",
    "synthetic.size",
    "holdout",
    "degrade.mode",
    "degrade.sigma_per_scale",
    "noise",
    "g.base_channels",
    "g.residual_blocks",
    "g.head_kernel",
    "g.output",
    "d.base_channels",
    "d.levels",
    "d.dense_width",
    "d.output_gain",
    "feature.widths",
    "feature.seed",
    "feature.weights",
    "loss.alpha",
    "loss.feature_scale",
    "loss.feature_scale_mode",
    "loss.triplet_weight",
    "loss.triplet_margin",
    "loss.triplet_mode",
    "loss.triplet_embedding",
    "train.pretrain_iters",
    "train.pretrain_lr",
    "train.gan_iters_phase1",
    "train.gan_lr_phase1",
    "train.gan_iters_phase2",
    "train.gan_lr_phase2",
    "train.beta1",
    "train.batch_size",
    "train.checkpoint_every",
    "output_dir",
    "color_mode",
    "deterministic",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Total upscaling factor `2^K`.
    pub scale: usize,
    /// 1 for grayscale, 3 for color; applies to every network.
    pub channels: usize,
    /// Side of the square HR training patches.
    pub patch_size: usize,
    /// Training images; `None` selects the built-in synthetic corpus.
    pub data_dir: Option<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic_size: usize,
    /// Images reserved for evaluation, taken from the end of the sorted corpus.
    pub holdout: usize,
    pub degradation: Degradation,
    pub noise: Option<NoiseSpec>,
    pub generator: GeneratorConfig,
    pub d_base_channels: usize,
    pub d_levels: usize,
    pub d_dense_width: usize,
    pub d_output_gain: f64,
    pub feature_widths: Vec<usize>,
    pub feature_seed: u64,
    /// Checkpoint holding `extractor.*` tensors that replace the seeded weights.
    pub feature_weights: Option<PathBuf>,
    pub weights: LossWeights,
    /// `schedule.seed` always mirrors `seed`.
    pub schedule: TrainSchedule,
    pub output_dir: PathBuf,
    pub color_mode: ColorMode,
    /// Single-threaded execution with fixed reduction order.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DiscriminatorConfig::default();
        Self {
            seed: 0,
            scale: 4,
            channels: 1,
            patch_size: 64,
            data_dir: None,
            synthetic_count: crate::data::SYNTHETIC_COUNT,
            synthetic_size: crate::data::SYNTHETIC_SIZE,
            holdout: 20,
            degradation: Degradation::default(),
            noise: None,
            generator: GeneratorConfig::default(),
            d_base_channels: d.channel_ladder[0].channels,
            d_levels: d.channel_ladder.len() / 2,
            d_dense_width: d.dense_width,
            d_output_gain: d.output_gain,
            feature_widths: DEFAULT_FEATURE_WIDTHS.to_vec(),
            feature_seed: 0,
            feature_weights: None,
            weights: LossWeights::default(),
            schedule: TrainSchedule::default(),
            output_dir: PathBuf::from("out"),
            color_mode: ColorMode::default(),
            deterministic: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_choice<T: Copy>(key: &str, value: &str, choices: &[(&str, T)]) -> Result<T> {
    choices.iter().find(|(name, _)| *name == value).map(|&(_, v)| v).ok_or_else(|| {
        let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("{key}: {value:?} is not one of {}", names.join(", ")))
    })
}

fn choice_name<T: PartialEq>(value: &T, choices: &[(&'static str, T)]) -> &'static str {
    choices.iter().find(|(_, v)| v == value).map_or("?", |(n, _)| n)
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

const DEGRADE_MODES: &[(&str, DegradeMode)] =
    &[("blur_bicubic", DegradeMode::BlurBicubic), ("bicubic", DegradeMode::BicubicOnly)];
const OUTPUTS: &[(&str, OutputMapping)] = &[("sigmoid", OutputMapping::Sigmoid), ("clamp", OutputMapping::Clamp)];
const SCALE_MODES: &[(&str, FeatureScaleMode)] =
    &[("features", FeatureScaleMode::Features), ("loss", FeatureScaleMode::Loss)];
const TRIPLET_MODES: &[(&str, TripletMode)] = &[("hinged", TripletMode::Hinged), ("literal", TripletMode::Literal)];
const EMBEDDINGS: &[(&str, TripletEmbedding)] =
    &[("features", TripletEmbedding::Features), ("pixels", TripletEmbedding::Pixels)];
const COLOR_MODES: &[(&str, ColorMode)] = &[("per_channel", ColorMode::PerChannel), ("luma", ColorMode::Luma)];

impl RunConfig {
    /// Defaults overridden by the `key = value` lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    /// Override keys from `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value, got {line:?}", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Override one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.schedule.seed = self.seed;
            }
            "scale" => self.scale = parse_num(key, v)?,
            "channels" => self.channels = parse_num(key, v)?,
            "patch_size" => self.patch_size = parse_num(key, v)?,
            "data_dir" => self.data_dir = opt_path(v),
            "synthetic.count" => self.synthetic_count = parse_num(key, v)?,
            "synthetic.size" => self.synthetic_size = parse_num(key, v)?,
            "holdout" => self.holdout = parse_num(key, v)?,
            "degrade.mode" => self.degradation.mode = parse_choice(key, v, DEGRADE_MODES)?,
            "degrade.sigma_per_scale" => self.degradation.sigma_per_scale = parse_num(key, v)?,
            "noise" => self.noise = if v.is_empty() || v == "none" { None } else { Some(NoiseSpec::parse(v)?) },
            "g.base_channels" => self.generator.base_channels = parse_num(key, v)?,
            "g.residual_blocks" => self.generator.num_residual_blocks = parse_num(key, v)?,
            "g.head_kernel" => self.generator.head_kernel = parse_num(key, v)?,
            "g.output" => self.generator.output = parse_choice(key, v, OUTPUTS)?,
            "d.base_channels" => self.d_base_channels = parse_num(key, v)?,
            "d.levels" => self.d_levels = parse_num(key, v)?,
            "d.dense_width" => self.d_dense_width = parse_num(key, v)?,
            "d.output_gain" => self.d_output_gain = parse_num(key, v)?,
            "feature.widths" => {
                self.feature_widths = v.split(',').map(|w| parse_num(key, w.trim())).collect::<Result<_>>()?;
            }
            "feature.seed" => self.feature_seed = parse_num(key, v)?,
            "feature.weights" => self.feature_weights = opt_path(v),
            "loss.alpha" => self.weights.alpha = parse_num(key, v)?,
            "loss.feature_scale" => self.weights.feature_scale = parse_num(key, v)?,
            "loss.feature_scale_mode" => self.weights.feature_scale_mode = parse_choice(key, v, SCALE_MODES)?,
            "loss.triplet_weight" => self.weights.triplet_weight = parse_num(key, v)?,
            "loss.triplet_margin" => self.weights.triplet_margin = parse_num(key, v)?,
            "loss.triplet_mode" => self.weights.triplet_mode = parse_choice(key, v, TRIPLET_MODES)?,
            "loss.triplet_embedding" => self.weights.triplet_embedding = parse_choice(key, v, EMBEDDINGS)?,
            "train.pretrain_iters" => self.schedule.pretrain_iters = parse_num(key, v)?,
            "train.pretrain_lr" => self.schedule.pretrain_lr = parse_num(key, v)?,
            "train.gan_iters_phase1" => self.schedule.gan_iters_phase1 = parse_num(key, v)?,
            "train.gan_lr_phase1" => self.schedule.gan_lr_phase1 = parse_num(key, v)?,
            "train.gan_iters_phase2" => self.schedule.gan_iters_phase2 = parse_num(key, v)?,
            "train.gan_lr_phase2" => self.schedule.gan_lr_phase2 = parse_num(key, v)?,
            "train.beta1" => self.schedule.beta1 = parse_num(key, v)?,
            "train.batch_size" => self.schedule.batch_size = parse_num(key, v)?,
            "train.checkpoint_every" => self.schedule.checkpoint_every = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "color_mode" => self.color_mode = parse_choice(key, v, COLOR_MODES)?,
            "deterministic" => self.deterministic = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let (s, w, g) = (&self.schedule, &self.weights, &self.generator);
        Ok(match key {
            "seed" => self.seed.to_string(),
            "scale" => self.scale.to_string(),
            "channels" => self.channels.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "data_dir" => show_path(&self.data_dir),
            "synthetic.count" => self.synthetic_count.to_string(),
            "synthetic.size" => self.synthetic_size.to_string(),
            "holdout" => self.holdout.to_string(),
            "degrade.mode" => choice_name(&self.degradation.mode, DEGRADE_MODES).into(),
            "degrade.sigma_per_scale" => self.degradation.sigma_per_scale.to_string(),
            "noise" => self.noise.as_ref().map_or_else(|| "none".into(), |n| n.to_string()),
            "g.base_channels" => g.base_channels.to_string(),
            "g.residual_blocks" => g.num_residual_blocks.to_string(),
            "g.head_kernel" => g.head_kernel.to_string(),
            "g.output" => choice_name(&g.output, OUTPUTS).into(),
            "d.base_channels" => self.d_base_channels.to_string(),
            "d.levels" => self.d_levels.to_string(),
            "d.dense_width" => self.d_dense_width.to_string(),
            "d.output_gain" => self.d_output_gain.to_string(),
            "feature.widths" => join(&self.feature_widths),
            "feature.seed" => self.feature_seed.to_string(),
            "feature.weights" => show_path(&self.feature_weights),
            "loss.alpha" => w.alpha.to_string(),
            "loss.feature_scale" => w.feature_scale.to_string(),
            "loss.feature_scale_mode" => choice_name(&w.feature_scale_mode, SCALE_MODES).into(),
            "loss.triplet_weight" => w.triplet_weight.to_string(),
            "loss.triplet_margin" => w.triplet_margin.to_string(),
            "loss.triplet_mode" => choice_name(&w.triplet_mode, TRIPLET_MODES).into(),
            "loss.triplet_embedding" => choice_name(&w.triplet_embedding, EMBEDDINGS).into(),
            "train.pretrain_iters" => s.pretrain_iters.to_string(),
            "train.pretrain_lr" => s.pretrain_lr.to_string(),
            "train.gan_iters_phase1" => s.gan_iters_phase1.to_string(),
            "train.gan_lr_phase1" => s.gan_lr_phase1.to_string(),
            "train.gan_iters_phase2" => s.gan_iters_phase2.to_string(),
            "train.gan_lr_phase2" => s.gan_lr_phase2.to_string(),
            "train.beta1" => s.beta1.to_string(),
            "train.batch_size" => s.batch_size.to_string(),
            "train.checkpoint_every" => s.checkpoint_every.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "color_mode" => choice_name(&self.color_mode, COLOR_MODES).into(),
            "deterministic" => self.deterministic.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        })
    }

    /// Every key with its resolved value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("KEYS lists only known keys")))
            .collect()
    }

    /// Desk-scale settings for the built-in synthetic corpus: 16-channel
    /// networks, a narrow feature stack and a short adversarial phase at a
    /// small learning rate after a long pixel-loss pretraining.
    pub fn toy() -> Self {
        let mut c = Self {
            scale: 2,
            patch_size: 32,
            generator: GeneratorConfig {
                base_channels: 16,
                num_residual_blocks: 2,
                output: OutputMapping::Clamp,
                ..GeneratorConfig::default()
            },
            d_base_channels: 16,
            d_levels: 3,
            d_dense_width: 64,
            feature_widths: vec![8, 16, 32, 32, 64],
            feature_seed: 7,
            ..Self::default()
        };
        c.schedule = TrainSchedule {
            pretrain_iters: 4000,
            pretrain_lr: 2e-3,
            gan_iters_phase1: 50,
            gan_lr_phase1: 3e-6,
            gan_iters_phase2: 50,
            gan_lr_phase2: 3e-7,
            seed: c.seed,
            ..TrainSchedule::default()
        };
        c
    }

    /// Number of chained x2 stages, `log2(scale)`.
    pub fn num_stages(&self) -> Result<usize> {
        let k = self.scale.trailing_zeros() as usize;
        if !self.scale.is_power_of_two() || !(1..=MAX_STAGES).contains(&k) {
            return Err(Error::Config(format!(
                "scale {} is not one of 2, 4, 8, 16, 32",
                self.scale
            )));
        }
        Ok(k)
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            input_channels: self.channels,
            ..self.generator.clone()
        }
    }

    /// Sized for the stage-`K` resolution; [`PipelineSpec::new`] resizes per stage.
    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_channels: self.channels,
            channel_ladder: DiscriminatorConfig::ladder(self.d_base_channels, self.d_levels),
            dense_width: self.d_dense_width,
            input_size: self.patch_size,
            output_gain: self.d_output_gain,
        }
    }

    pub fn extractor(&self) -> Result<FeatureExtractor> {
        let layers = FeatureExtractor::standard_layers(&self.feature_widths);
        let seeded = FeatureExtractor::seeded(self.channels, layers.clone(), self.feature_seed)?;
        let Some(path) = &self.feature_weights else {
            return Ok(seeded);
        };
        let mut params = seeded.params().clone();
        Checkpoint::load(path)?.load_params("extractor", &mut params)?;
        FeatureExtractor::from_params(self.channels, layers, params)
    }

    /// The schedule with the run seed.
    pub fn train_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            seed: self.seed,
            ..self.schedule.clone()
        }
    }

    /// Untrained pipeline for this configuration.
    pub fn pipeline(&self) -> Result<PipelineSpec> {
        PipelineSpec::new(
            self.num_stages()?,
            &self.generator_config(),
            &self.discriminator_config(),
            self.extractor()?,
            self.weights,
            self.patch_size,
            self.seed,
        )
    }

    /// Source images: `data_dir` if set, the synthetic corpus otherwise.
    pub fn images(&self) -> Result<Vec<(String, Tensor)>> {
        match &self.data_dir {
            Some(dir) => load_dir(dir),
            None => {
                if self.channels != 1 {
                    return Err(Error::Config("the synthetic corpus is grayscale; set channels = 1".into()));
                }
                Ok(synthetic_corpus(self.synthetic_count, self.synthetic_size, self.seed))
            }
        }
    }

    /// Training and held-out patch sets, split by source image.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let all = Dataset::from_images(self.images()?, self.patch_size, self.num_stages()?, self.degradation)?;
        all.split(self.holdout)
    }

    /// Consistency of every section.
    pub fn validate(&self) -> Result<()> {
        self.num_stages()?;
        self.generator_config().validate()?;
        self.discriminator_config().validate()?;
        self.weights.validate()?;
        self.train_schedule().validate()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        if !(self.degradation.sigma_per_scale >= 0.0 && self.degradation.sigma_per_scale.is_finite()) {
            return Err(Error::Config(format!(
                "degrade.sigma_per_scale must be >= 0, got {}",
                self.degradation.sigma_per_scale
            )));
        }
        if self.feature_widths.is_empty() {
            return Err(Error::Config("feature.widths is empty".into()));
        }
        Ok(())
    }
}
