//! Synthetic video benchmark with annotated informative cubes.
//!
//! Each video holds one class-determining glyph (a fixed per-class grating)
//! visible only inside a temporal window, plus Gaussian noise and a few
//! class-uninformative distractor patches. The glyph's spatial-temporal
//! extent is recorded as the ground-truth cube so cube placement can be
//! scored directly.

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::crop::{CubeSize, CubeSpec};
use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trajectory {
    Static,
    /// Constant velocity of up to one pixel per frame on each spatial axis.
    LinearDrift,
}

impl Trajectory {
    pub fn name(self) -> &'static str {
        match self {
            Trajectory::Static => "static",
            Trajectory::LinearDrift => "linear_drift",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Trajectory::Static, Trajectory::LinearDrift].into_iter().find(|t| t.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub glyph: usize,
    pub classes: usize,
    pub trajectory: Trajectory,
    /// Number of frames during which the glyph is visible.
    pub window: usize,
    pub noise: f64,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 16,
            glyph: 16,
            classes: 10,
            trajectory: Trajectory::Static,
            window: 6,
            noise: 0.1,
            distractors: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.glyph == 0 || self.glyph > self.height.min(self.width) {
            return bad(format!("glyph size {} must be in 1..=min(height, width)", self.glyph));
        }
        if self.window == 0 || self.window > self.frames {
            return bad(format!("window {} must be in 1..=frames ({})", self.window, self.frames));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise level {} must be finite and non-negative", self.noise));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        Ok(())
    }

    pub fn extents(&self) -> [usize; 3] {
        [self.height, self.width, self.frames]
    }

    /// Side length of the square distractor patches.
    pub fn distractor_size(&self) -> usize {
        (self.glyph * 5 / 8).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSample {
    pub id: u64,
    pub video: Tensor,
    pub label: usize,
    pub truth_cube: CubeSpec,
}

/// Random access to labelled videos.
pub trait Samples {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Cow<'_, AnnotatedSample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Samples for [AnnotatedSample] {
    fn len(&self) -> usize {
        <[AnnotatedSample]>::len(self)
    }

    fn get(&self, index: usize) -> Cow<'_, AnnotatedSample> {
        Cow::Borrowed(&self[index])
    }
}

impl Samples for Vec<AnnotatedSample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn get(&self, index: usize) -> Cow<'_, AnnotatedSample> {
        Cow::Borrowed(&self[index])
    }
}

/// Train/val/test splits; samples are synthesised on demand from `(seed, id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub sizes: SplitSizes,
}

/// One split of a [`SynthDataset`]. Sample ids are global across splits.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSplit {
    pub config: SynthConfig,
    pub first_id: u64,
    pub size: usize,
}

impl SynthSplit {
    pub fn sample(&self, index: usize) -> AnnotatedSample {
        generate_sample(&self.config, self.first_id + index as u64, index % self.config.classes)
    }

    pub fn materialize(&self) -> Vec<AnnotatedSample> {
        (0..self.size).map(|i| self.sample(i)).collect()
    }
}

impl Samples for SynthSplit {
    fn len(&self) -> usize {
        self.size
    }

    fn get(&self, index: usize) -> Cow<'_, AnnotatedSample> {
        Cow::Owned(self.sample(index))
    }
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> SynthSplit {
        let (first, size) = match split {
            Split::Train => (0, self.sizes.train),
            Split::Val => (self.sizes.train, self.sizes.val),
            Split::Test => (self.sizes.train + self.sizes.val, self.sizes.test),
        };
        SynthSplit {
            config: self.config.clone(),
            first_id: first as u64,
            size,
        }
    }
}

/// Validates the configuration and lays out the splits.
pub fn generate(config: &SynthConfig, sizes: SplitSizes) -> Result<SynthDataset> {
    config.validate()?;
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(Error::InvalidConfig(format!("split sizes must be positive, got {sizes:?}")));
    }
    Ok(SynthDataset {
        config: config.clone(),
        sizes,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for `(seed, stream, index)`.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream ^ splitmix64(index))))
}

const SAMPLE_STREAM: u64 = 0x5A3F_0001;
const GLYPH_STREAM: u64 = 0x5A3F_0002;

/// The `glyph × glyph` grating that identifies `class`: orientation spaced
/// evenly over half a turn, alternating periods, seeded phase.
pub fn glyph_template(config: &SynthConfig, class: usize) -> Tensor {
    let g = config.glyph;
    let mut rng = stream_rng(config.seed, GLYPH_STREAM, class as u64);
    let phase = rng.random_range(0.0..2.0 * PI);
    let theta = PI * class as f64 / config.classes as f64;
    let period = if class.is_multiple_of(2) { 3.0 } else { 4.5 };
    let (s, c) = libm::sincos(theta);
    Tensor::from_fn(&[g, g], |n| {
        let (u, v) = ((n / g) as f64, (n % g) as f64);
        0.5 + 0.5 * libm::cos(2.0 * PI * (u * c + v * s) / period + phase)
    })
}

/// Deterministic sample `id` with the given label.
pub fn generate_sample(config: &SynthConfig, id: u64, label: usize) -> AnnotatedSample {
    let [h, w, t] = config.extents();
    let mut rng = stream_rng(config.seed, SAMPLE_STREAM, id);
    let mut video = Tensor::zeros(&[h, w, t, 1]);
    let data = video.data_mut();
    let at = |i: usize, j: usize, k: usize| (i * w + j) * t + k;

    let d = config.distractor_size();
    for _ in 0..config.distractors {
        let (i0, j0) = (rng.random_range(0..=h - d), rng.random_range(0..=w - d));
        let k0 = rng.random_range(0..=t - config.window);
        let pattern: Vec<f64> = (0..d * d).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        for k in k0..k0 + config.window {
            for i in 0..d {
                for j in 0..d {
                    data[at(i0 + i, j0 + j, k)] = pattern[i * d + j];
                }
            }
        }
    }

    let g = config.glyph;
    let span = config.window - 1;
    let (vi, vj): (isize, isize) = match config.trajectory {
        Trajectory::Static => (0, 0),
        Trajectory::LinearDrift => {
            let max_i = i64::from(h - g >= span);
            let max_j = i64::from(w - g >= span);
            (
                rng.random_range(-max_i..=max_i) as isize,
                rng.random_range(-max_j..=max_j) as isize,
            )
        }
    };
    let travel_i = vi.unsigned_abs() * span;
    let travel_j = vj.unsigned_abs() * span;
    let box_i = rng.random_range(0..=h - g - travel_i);
    let box_j = rng.random_range(0..=w - g - travel_j);
    let k0 = rng.random_range(0..=t - config.window);
    let template = glyph_template(config, label);
    for step in 0..config.window {
        let i0 = if vi < 0 { box_i + travel_i - step } else { box_i + step * vi as usize };
        let j0 = if vj < 0 { box_j + travel_j - step } else { box_j + step * vj as usize };
        for i in 0..g {
            for j in 0..g {
                data[at(i0 + i, j0 + j, k0 + step)] = template.data()[i * g + j];
            }
        }
    }

    if config.noise > 0.0 {
        let normal = Normal::new(0.0, config.noise).expect("validated noise level");
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    let extent = [g + travel_i, g + travel_j, config.window];
    let truth_cube = CubeSpec::new(
        [
            box_i as f64 + extent[0] as f64 / 2.0,
            box_j as f64 + extent[1] as f64 / 2.0,
            k0 as f64 + extent[2] as f64 / 2.0,
        ],
        CubeSize::new(extent[0], extent[1], extent[2]),
    );
    AnnotatedSample {
        id,
        video,
        label,
        truth_cube,
    }
}

/// Intersection-over-union of two axis-aligned cubes.
pub fn policy_iou(predicted: &CubeSpec, truth: &CubeSpec) -> f64 {
    let (a0, b0) = (predicted.origin(), truth.origin());
    let (ae, be) = (predicted.size.extents(), truth.size.extents());
    let mut inter = 1.0;
    for ax in 0..3 {
        let lo = a0[ax].max(b0[ax]);
        let hi = (a0[ax] + ae[ax] as f64).min(b0[ax] + be[ax] as f64);
        inter *= (hi - lo).max(0.0);
    }
    let union = predicted.size.volume() as f64 + truth.size.volume() as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(n: usize) -> SplitSizes {
        SplitSizes {
            train: n,
            val: n,
            test: n,
        }
    }

    #[test]
    fn iou_cases() {
        let s = CubeSize::new(2, 2, 2);
        let a = CubeSpec::new([1.0, 1.0, 1.0], s);
        assert_eq!(policy_iou(&a, &a), 1.0);
        assert_eq!(policy_iou(&a, &CubeSpec::new([5.0, 1.0, 1.0], s)), 0.0);
        let b = CubeSpec::new([2.0, 1.0, 1.0], s);
        assert!((policy_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig {
            height: 32,
            width: 32,
            frames: 8,
            glyph: 8,
            window: 3,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg, sizes(23)).unwrap();
        let a = ds.split(Split::Val).materialize();
        let b = generate(&cfg, sizes(23)).unwrap().split(Split::Val).materialize();
        assert_eq!(a, b);
        let mut counts = alloc::vec![0usize; cfg.classes];
        for s in &a {
            counts[s.label] += 1;
        }
        let mean = 23.0 / cfg.classes as f64;
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() <= 1.0));
        assert_ne!(ds.split(Split::Train).sample(0).video, a[0].video);
    }

    #[test]
    fn glyph_lies_inside_truth_cube_without_noise() {
        for trajectory in [Trajectory::Static, Trajectory::LinearDrift] {
            let cfg = SynthConfig {
                noise: 0.0,
                distractors: 0,
                trajectory,
                ..SynthConfig::default()
            };
            for id in 0..20 {
                let s = generate_sample(&cfg, id, (id % 10) as usize);
                let o = s.truth_cube.lattice_origin(cfg.extents());
                let e = s.truth_cube.size.extents();
                let inside_sum = s.video.sub_volume(o, e).unwrap().sum();
                assert!((inside_sum - s.video.sum()).abs() < 1e-9);
                assert!(s.truth_cube.check_in(cfg.extents()).is_ok());
            }
        }
    }

    #[test]
    fn truth_cube_is_small() {
        let cfg = SynthConfig::default();
        let s = generate_sample(&cfg, 3, 1);
        let frac = s.truth_cube.size.volume() as f64 / (cfg.height * cfg.width * cfg.frames) as f64;
        assert!(frac < 0.15);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SynthConfig {
            glyph: 80,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.glyph = 16;
        cfg.window = 17;
        assert!(cfg.validate().is_err());
        cfg.window = 6;
        cfg.noise = -0.1;
        assert!(cfg.validate().is_err());
        assert!(generate(&SynthConfig::default(), SplitSizes { train: 0, val: 1, test: 1 }).is_err());
    }
}
