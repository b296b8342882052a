//! Flat `key = value` configuration. `#` starts a comment; every key of the
//! schema must appear exactly once and unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use adafocus_core::crop::CubeSize;
use adafocus_core::model::{GradientMode, ModelConfig, OffsetAnchor, PolicyMode, Schedule, TrainConfig};
use adafocus_core::synth::{SplitSizes, SynthConfig, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("missing config key `{0}`")]
    Missing(&'static str),
    #[error("unknown config key `{key}` on line {line}")]
    Unknown { key: String, line: usize },
    #[error("config key `{key}` repeated on line {line}")]
    Duplicate { key: String, line: usize },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("config key `{key}`: expected {expected}, got `{value}`")]
    Invalid {
        key: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Rejected(String),
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: String, message: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Parsed lines keyed by name, with the line number of each.
struct Entries {
    values: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn parse(text: &str, schema: &[&'static str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line,
                text: content.to_string(),
            })?;
            let key = key.trim();
            if !schema.contains(&key) {
                return Err(ConfigError::Unknown {
                    key: key.to_string(),
                    line,
                });
            }
            if values.insert(key.to_string(), (value.trim().to_string(), line)).is_some() {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line,
                });
            }
        }
        if let Some(missing) = schema.iter().find(|k| !values.contains_key(**k)) {
            return Err(ConfigError::Missing(missing));
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &'static str) -> &str {
        &self.values[key].0
    }

    fn parse_with<T>(&self, key: &'static str, expected: &'static str, f: impl FnOnce(&str) -> Option<T>) -> Result<T> {
        let value = self.raw(key);
        f(value).ok_or_else(|| ConfigError::Invalid {
            key,
            value: value.to_string(),
            expected,
        })
    }

    fn number<T: FromStr>(&self, key: &'static str, expected: &'static str) -> Result<T> {
        self.parse_with(key, expected, |v| v.parse().ok())
    }

    fn usize(&self, key: &'static str) -> Result<usize> {
        self.number(key, "a non-negative integer")
    }

    fn f64(&self, key: &'static str) -> Result<f64> {
        self.parse_with(key, "a finite number", |v| v.parse().ok().filter(|x: &f64| x.is_finite()))
    }

    fn list<const N: usize>(&self, key: &'static str, sep: char, expected: &'static str) -> Result<[usize; N]> {
        self.parse_with(key, expected, |v| {
            let parts: Vec<usize> = v.split(sep).map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
            parts.try_into().ok()
        })
    }
}

/// Model hyperparameters not implied by the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub cube: CubeSize,
    pub max_cubes: usize,
    pub global_channels: [usize; 2],
    pub local_channels: [usize; 4],
}

impl ModelSection {
    /// Full model configuration for videos of `video` extents with `classes` labels.
    pub fn resolve(&self, video: [usize; 3], classes: usize) -> ModelConfig {
        ModelConfig {
            video,
            channels: 1,
            cube: self.cube,
            max_cubes: self.max_cubes,
            classes,
            global_channels: self.global_channels,
            local_channels: self.local_channels,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            cube: m.cube,
            max_cubes: m.max_cubes,
            global_channels: m.global_channels,
            local_channels: m.local_channels,
        }
    }
}

/// Everything a run depends on besides its input files.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SynthConfig,
    pub sizes: SplitSizes,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: SynthConfig::default(),
            sizes: SplitSizes {
                train: 1000,
                val: 200,
                test: 500,
            },
            model: ModelSection::default(),
            train: TrainConfig::default(),
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "seed",
    "data.height",
    "data.width",
    "data.frames",
    "data.glyph",
    "data.classes",
    "data.trajectory",
    "data.window",
    "data.noise",
    "data.distractors",
    "data.train",
    "data.val",
    "data.test",
    "model.cube",
    "model.max_cubes",
    "model.global_channels",
    "model.local_channels",
    "train.epochs",
    "train.policy_epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.policy_learning_rate",
    "train.momentum",
    "train.weight_decay",
    "train.mode",
    "train.schedule",
    "train.policy",
    "train.offsets",
];

fn cube_text(c: CubeSize) -> String {
    format!("{}x{}x{}", c.h, c.w, c.t)
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text, RUN_KEYS)?;
        let seed = e.number("seed", "an unsigned 64-bit integer")?;
        let data = SynthConfig {
            height: e.usize("data.height")?,
            width: e.usize("data.width")?,
            frames: e.usize("data.frames")?,
            glyph: e.usize("data.glyph")?,
            classes: e.usize("data.classes")?,
            trajectory: e.parse_with("data.trajectory", "`static` or `linear_drift`", Trajectory::from_name)?,
            window: e.usize("data.window")?,
            noise: e.f64("data.noise")?,
            distractors: e.usize("data.distractors")?,
            seed,
        };
        let sizes = SplitSizes {
            train: e.usize("data.train")?,
            val: e.usize("data.val")?,
            test: e.usize("data.test")?,
        };
        let [h, w, t] = e.list("model.cube", 'x', "extents like `32x32x8`")?;
        let model = ModelSection {
            cube: CubeSize::new(h, w, t),
            max_cubes: e.usize("model.max_cubes")?,
            global_channels: e.list("model.global_channels", ',', "two comma-separated widths")?,
            local_channels: e.list("model.local_channels", ',', "four comma-separated widths")?,
        };
        let train = TrainConfig {
            epochs: e.usize("train.epochs")?,
            policy_epochs: e.usize("train.policy_epochs")?,
            batch_size: e.usize("train.batch_size")?,
            learning_rate: e.f64("train.learning_rate")?,
            policy_learning_rate: e.f64("train.policy_learning_rate")?,
            momentum: e.f64("train.momentum")?,
            weight_decay: e.f64("train.weight_decay")?,
            mode: e.parse_with("train.mode", "`pixelgrad` or `featuregrad`", GradientMode::from_name)?,
            schedule: e.parse_with("train.schedule", "`end_to_end` or `two_stage`", Schedule::from_name)?,
            policy: e.parse_with(
                "train.policy",
                "`learned`, `random`, `random_temporal` or `random_spatial`",
                PolicyMode::from_name,
            )?,
            anchor: e.parse_with("train.offsets", "`centered` or `aligned`", OffsetAnchor::from_name)?,
            seed,
        };
        let config = Self {
            seed,
            data,
            sizes,
            model,
            train,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let reject = |e: adafocus_core::Error| ConfigError::Rejected(e.to_string());
        self.data.validate().map_err(reject)?;
        self.train.validate().map_err(reject)?;
        if self.sizes.train == 0 || self.sizes.val == 0 || self.sizes.test == 0 {
            return Err(ConfigError::Rejected("split sizes must be positive".into()));
        }
        self.model
            .resolve(self.data.extents(), self.data.classes)
            .architecture()
            .map_err(reject)?;
        Ok(())
    }

    /// Replaces the seed of data generation, initialisation and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Canonical text; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let (d, s, m, t) = (&self.data, &self.sizes, &self.model, &self.train);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("data.height", d.height.to_string());
        kv("data.width", d.width.to_string());
        kv("data.frames", d.frames.to_string());
        kv("data.glyph", d.glyph.to_string());
        kv("data.classes", d.classes.to_string());
        kv("data.trajectory", d.trajectory.name().into());
        kv("data.window", d.window.to_string());
        kv("data.noise", d.noise.to_string());
        kv("data.distractors", d.distractors.to_string());
        kv("data.train", s.train.to_string());
        kv("data.val", s.val.to_string());
        kv("data.test", s.test.to_string());
        kv("model.cube", cube_text(m.cube));
        kv("model.max_cubes", m.max_cubes.to_string());
        kv("model.global_channels", join(&m.global_channels));
        kv("model.local_channels", join(&m.local_channels));
        kv("train.epochs", t.epochs.to_string());
        kv("train.policy_epochs", t.policy_epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.policy_learning_rate", t.policy_learning_rate.to_string());
        kv("train.momentum", t.momentum.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("train.mode", t.mode.name().into());
        kv("train.schedule", t.schedule.name().into());
        kv("train.policy", t.policy.name().into());
        kv("train.offsets", t.anchor.name().into());
        out
    }
}

const MODEL_KEYS: &[&str] = &[
    "video",
    "channels",
    "classes",
    "cube",
    "max_cubes",
    "global_channels",
    "local_channels",
];

/// Text form of a full [`ModelConfig`], stored in checkpoints.
pub fn model_to_text(m: &ModelConfig) -> String {
    let [h, w, t] = m.video;
    format!(
        "video = {h}x{w}x{t}\nchannels = {}\nclasses = {}\ncube = {}\nmax_cubes = {}\nglobal_channels = {}\nlocal_channels = {}\n",
        m.channels,
        m.classes,
        cube_text(m.cube),
        m.max_cubes,
        join(&m.global_channels),
        join(&m.local_channels),
    )
}

pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let e = Entries::parse(text, MODEL_KEYS)?;
    let [h, w, t] = e.list("cube", 'x', "extents like `32x32x8`")?;
    let m = ModelConfig {
        video: e.list("video", 'x', "extents like `64x64x16`")?,
        channels: e.usize("channels")?,
        cube: CubeSize::new(h, w, t),
        max_cubes: e.usize("max_cubes")?,
        classes: e.usize("classes")?,
        global_channels: e.list("global_channels", ',', "two comma-separated widths")?,
        local_channels: e.list("local_channels", ',', "four comma-separated widths")?,
    };
    m.architecture().map_err(|e| ConfigError::Rejected(e.to_string()))?;
    Ok(m)
}
