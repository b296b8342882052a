//! The four-component network: global encoder, policy, local encoder and a
//! pooling classifier that reuses both encoders' features.

mod forward;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cost::{Component, CostLedger, LayerKind};
use crate::crop::{CubeSize, FeatureOffsetGrid};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::synth::stream_rng;

pub use forward::{
    glance, plan_cubes, random_cubes, training_loss, BoundParams, CubePlanner, Glance, Inference, PredictionTrace,
    TrainingForward,
};
pub use train::{cosine_lr, train, EpochStats, Sgd, TrainConfig};

/// How the policy receives gradients during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Back-propagate through trilinear interpolation of video pixels.
    PixelGrad,
    /// Back-propagate through interpolation of the local encoder's features.
    FeatureGrad,
}

impl GradientMode {
    pub fn name(self) -> &'static str {
        match self {
            GradientMode::PixelGrad => "pixelgrad",
            GradientMode::FeatureGrad => "featuregrad",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "pixelgrad" => Some(GradientMode::PixelGrad),
            "featuregrad" => Some(GradientMode::FeatureGrad),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    EndToEnd,
    /// Encoders and classifier first with random cubes, then the policy alone.
    TwoStage,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::EndToEnd => "end_to_end",
            Schedule::TwoStage => "two_stage",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "end_to_end" => Some(Schedule::EndToEnd),
            "two_stage" => Some(Schedule::TwoStage),
            _ => None,
        }
    }
}

/// Whether cube centres come from the policy or are drawn uniformly, per axis group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyMode {
    pub spatial_learned: bool,
    pub temporal_learned: bool,
}

impl PolicyMode {
    pub const LEARNED: Self = Self {
        spatial_learned: true,
        temporal_learned: true,
    };
    pub const RANDOM: Self = Self {
        spatial_learned: false,
        temporal_learned: false,
    };

    pub fn is_random(self) -> bool {
        !self.spatial_learned && !self.temporal_learned
    }

    pub fn name(self) -> &'static str {
        match (self.spatial_learned, self.temporal_learned) {
            (true, true) => "learned",
            (false, false) => "random",
            (true, false) => "random_temporal",
            (false, true) => "random_spatial",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            Self::LEARNED,
            Self::RANDOM,
            Self {
                spatial_learned: true,
                temporal_learned: false,
            },
            Self {
                spatial_learned: false,
                temporal_learned: true,
            },
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }

    fn learned(self, axis: usize) -> bool {
        if axis == 2 {
            self.temporal_learned
        } else {
            self.spatial_learned
        }
    }
}

/// Where the feature-space estimator places its fixed offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffsetAnchor {
    /// Cell centres of the enlarged map (`o = index + 0.5`).
    Centered,
    /// Integer offsets; the enlarged cube starts at the cube's own origin.
    Aligned,
}

impl OffsetAnchor {
    pub fn name(self) -> &'static str {
        match self {
            OffsetAnchor::Centered => "centered",
            OffsetAnchor::Aligned => "aligned",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [OffsetAnchor::Centered, OffsetAnchor::Aligned].into_iter().find(|a| a.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Video extents `H, W, T`.
    pub video: [usize; 3],
    pub channels: usize,
    pub cube: CubeSize,
    /// Maximum number of cubes `K`.
    pub max_cubes: usize,
    pub classes: usize,
    pub global_channels: [usize; 2],
    pub local_channels: [usize; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            video: [64, 64, 16],
            channels: 1,
            cube: CubeSize::new(32, 32, 8),
            max_cubes: 2,
            classes: 10,
            global_channels: [4, 8],
            local_channels: [8, 16, 32, 32],
        }
    }
}

/// Convolution layer shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Layer shapes derived from a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub downscale: [usize; 3],
    pub global: Vec<ConvShape>,
    pub local: Vec<ConvShape>,
    /// Global feature map `H×W×T×C` for the downscaled video.
    pub global_map: [usize; 4],
    /// Local feature map `H^f×W^f×T^f×C^f` for one cube.
    pub local_map: [usize; 4],
    /// Product of the local encoder's strides per axis.
    pub local_stride: [usize; 3],
    /// Axes along which the feature-space estimator interpolates.
    pub interpolated: [bool; 3],
}

// Local encoder: non-overlapping (kernel == stride) blocks, so cube and
// enlarged-cube feature maps tile the input exactly.
const LOCAL_SPATIAL_STRIDES: [usize; 4] = [2, 2, 2, 1];
const LOCAL_TEMPORAL_STRIDES: [usize; 4] = [1, 2, 1, 1];
const GLOBAL_SPATIAL_STRIDES: [usize; 2] = [2, 2];
const GLOBAL_TEMPORAL_STRIDES: [usize; 2] = [2, 1];

fn stack_output(input: [usize; 3], layers: &[ConvShape]) -> Option<[usize; 3]> {
    layers.iter().try_fold(input, |ext, l| {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = crate::diff::conv_output_extent(ext[a], l.kernel[a], l.stride[a])?;
        }
        Some(out)
    })
}

impl ModelConfig {
    pub fn architecture(&self) -> Result<Architecture> {
        let bad = |msg: String| Error::InvalidConfig(msg);
        self.cube.check_fits(self.video).map_err(|_| {
            bad(format!("cube {:?} does not fit video {:?}", self.cube.extents(), self.video))
        })?;
        if self.max_cubes == 0 || self.classes < 2 || self.channels == 0 {
            return Err(bad(format!(
                "max_cubes ({}) must be positive, classes ({}) at least 2, channels ({}) positive",
                self.max_cubes, self.classes, self.channels
            )));
        }
        if self.global_channels.contains(&0) || self.local_channels.contains(&0) {
            return Err(bad("channel widths must be positive".into()));
        }
        let temporal_pyramid = self.cube.t.is_multiple_of(2);
        let mut local = Vec::new();
        let mut cin = self.channels;
        for (i, &cout) in self.local_channels.iter().enumerate() {
            let st = if temporal_pyramid { LOCAL_TEMPORAL_STRIDES[i] } else { 1 };
            let stride = [LOCAL_SPATIAL_STRIDES[i], LOCAL_SPATIAL_STRIDES[i], st];
            local.push(ConvShape {
                kernel: stride,
                stride,
                in_channels: cin,
                out_channels: cout,
            });
            cin = cout;
        }
        let local_stride: [usize; 3] = core::array::from_fn(|a| local.iter().map(|l| l.stride[a]).product());
        let ext = self.cube.extents();
        if (0..3).any(|a| !ext[a].is_multiple_of(local_stride[a])) {
            return Err(bad(format!(
                "cube {:?} must be divisible by the local encoder stride {:?}",
                ext, local_stride
            )));
        }
        let local_out: [usize; 3] = core::array::from_fn(|a| ext[a] / local_stride[a]);
        let interpolated = [true, true, self.cube.t > 1];
        let enlarged = crate::crop::enlarged_extents(self.cube, local_stride, interpolated);
        if (0..3).any(|a| enlarged[a] > self.video[a]) {
            return Err(bad(format!(
                "enlarged cube {:?} exceeds video {:?}",
                enlarged, self.video
            )));
        }

        let downscale = [2, 2, if self.video[2] >= 2 { 2 } else { 1 }];
        let small: [usize; 3] = core::array::from_fn(|a| self.video[a] / downscale[a]);
        let mut global = Vec::new();
        let mut cin = self.channels;
        for (i, &cout) in self.global_channels.iter().enumerate() {
            let st = GLOBAL_TEMPORAL_STRIDES[i];
            let stride = [GLOBAL_SPATIAL_STRIDES[i], GLOBAL_SPATIAL_STRIDES[i], st];
            global.push(ConvShape {
                kernel: stride,
                stride,
                in_channels: cin,
                out_channels: cout,
            });
            cin = cout;
        }
        let global_out =
            stack_output(small, &global).ok_or_else(|| bad(format!("video {:?} too small for the global encoder", self.video)))?;
        Ok(Architecture {
            downscale,
            global_map: [global_out[0], global_out[1], global_out[2], self.global_channels[1]],
            global,
            local_map: [local_out[0], local_out[1], local_out[2], self.local_channels[3]],
            local,
            local_stride,
            interpolated,
        })
    }
}

impl Architecture {
    pub fn global_feature_len(&self) -> usize {
        self.global_map.iter().product()
    }

    /// Width of the classifier input: pooled global features then pooled local features.
    pub fn classifier_inputs(&self) -> usize {
        self.global_map[3] + self.local_map[3]
    }

    pub fn offsets(&self, anchor: OffsetAnchor) -> FeatureOffsetGrid {
        let target = [self.local_map[0], self.local_map[1], self.local_map[2]];
        match anchor {
            OffsetAnchor::Centered => FeatureOffsetGrid::centered(target, self.interpolated),
            OffsetAnchor::Aligned => FeatureOffsetGrid::aligned(target, self.interpolated),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Trainable parameters plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelComponents {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub global: Vec<ConvBlock>,
    pub local: Vec<ConvBlock>,
    pub policy: Dense,
    pub classifier: Dense,
}

const INIT_STREAM: u64 = 0x1417_0001;

fn conv_block(shape: &ConvShape, rng: &mut impl Rng) -> ConvBlock {
    let fan_in = shape.kernel.iter().product::<usize>() * shape.in_channels;
    let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64)).expect("positive fan-in");
    let dims = [
        shape.kernel[0],
        shape.kernel[1],
        shape.kernel[2],
        shape.in_channels,
        shape.out_channels,
    ];
    ConvBlock {
        kernel: Tensor::from_fn(&dims, |_| normal.sample(rng)),
        bias: Tensor::zeros(&[shape.out_channels]),
        stride: shape.stride,
    }
}

impl ModelComponents {
    /// He-initialised encoders, a small random classifier head and a zero
    /// policy head, so every cube starts at the video midpoint.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = config.architecture()?;
        let mut rng = stream_rng(seed, INIT_STREAM, 0);
        let global = arch.global.iter().map(|s| conv_block(s, &mut rng)).collect();
        let local = arch.local.iter().map(|s| conv_block(s, &mut rng)).collect();
        let policy_out = 3 * config.max_cubes;
        let policy = Dense {
            weight: Tensor::zeros(&[policy_out, arch.global_feature_len()]),
            bias: Tensor::zeros(&[policy_out]),
        };
        let head = Normal::new(0.0, 0.1 / libm::sqrt(arch.classifier_inputs() as f64)).expect("positive width");
        let classifier = Dense {
            weight: Tensor::from_fn(&[config.classes, arch.classifier_inputs()], |_| head.sample(&mut rng)),
            bias: Tensor::zeros(&[config.classes]),
        };
        Ok(Self {
            config,
            arch,
            global,
            local,
            policy,
            classifier,
        })
    }

    /// Parameters in canonical order with their names and owning component.
    pub fn named_params(&self) -> Vec<(String, Component, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, comp, blocks) in [
            ("global", Component::GlobalEncoder, &self.global),
            ("local", Component::LocalEncoder, &self.local),
        ] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{prefix}.{i}.kernel"), comp, &b.kernel));
                out.push((format!("{prefix}.{i}.bias"), comp, &b.bias));
            }
        }
        out.push(("policy.weight".into(), Component::Policy, &self.policy.weight));
        out.push(("policy.bias".into(), Component::Policy, &self.policy.bias));
        out.push(("classifier.weight".into(), Component::Classifier, &self.classifier.weight));
        out.push(("classifier.bias".into(), Component::Classifier, &self.classifier.bias));
        out
    }

    /// Mutable parameters in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for blocks in [&mut self.global, &mut self.local] {
            for b in blocks.iter_mut() {
                out.push(&mut b.kernel);
                out.push(&mut b.bias);
            }
        }
        out.push(&mut self.policy.weight);
        out.push(&mut self.policy.bias);
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Replaces parameters by name; every name must be present with a matching shape.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _, _)| n).collect();
        if named.len() != names.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, found {}",
                names.len(),
                named.len()
            )));
        }
        for (slot, name) in self.params_mut().into_iter().zip(&names) {
            let (_, value) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))?;
            if value.shape() != slot.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_params",
                    left: slot.shape().to_vec(),
                    right: value.shape().to_vec(),
                });
            }
            *slot = value.clone();
        }
        Ok(())
    }

    /// Zeroes the classifier head: every prediction becomes uniform.
    pub fn zero_classifier(&mut self) {
        self.classifier.weight = Tensor::zeros(self.classifier.weight.shape());
        self.classifier.bias = Tensor::zeros(self.classifier.bias.shape());
    }

    pub fn param_count(&self, component: Component) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, c, _)| *c == component)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    /// Per-layer mult-adds for one inference: global encoder on the downscaled
    /// video, policy head, local encoder on one cube, classifier head.
    pub fn ledger(&self) -> CostLedger {
        let mut ledger = CostLedger::new();
        let small: [usize; 3] = core::array::from_fn(|a| self.config.video[a] / self.arch.downscale[a]);
        record_stack(&mut ledger, Component::GlobalEncoder, "global", small, &self.arch.global);
        record_stack(&mut ledger, Component::LocalEncoder, "local", self.config.cube.extents(), &self.arch.local);
        ledger
            .record(
                Component::Policy,
                "policy.linear",
                &LayerKind::Linear {
                    inputs: self.arch.global_feature_len(),
                    outputs: 3 * self.config.max_cubes,
                },
            )
            .expect("linear layers always count");
        ledger
            .record(
                Component::Classifier,
                "classifier.linear",
                &LayerKind::Linear {
                    inputs: self.arch.classifier_inputs(),
                    outputs: self.config.classes,
                },
            )
            .expect("linear layers always count");
        ledger
    }
}

/// Records conv, bias and relu entries for a stack run on `input` extents.
pub fn record_stack(ledger: &mut CostLedger, component: Component, prefix: &str, input: [usize; 3], layers: &[ConvShape]) {
    let mut ext = input;
    for (i, l) in layers.iter().enumerate() {
        let kind = LayerKind::Conv3d {
            input: ext,
            kernel: l.kernel,
            stride: l.stride,
            in_channels: l.in_channels,
            out_channels: l.out_channels,
        };
        ledger
            .record(component, format!("{prefix}.{i}.conv"), &kind)
            .expect("architecture validated");
        ledger.record(component, format!("{prefix}.{i}.bias"), &LayerKind::BiasAdd).expect("zero-cost layer");
        ledger.record(component, format!("{prefix}.{i}.relu"), &LayerKind::Relu).expect("zero-cost layer");
        ext = core::array::from_fn(|a| (ext[a] - l.kernel[a]) / l.stride[a] + 1);
    }
    ledger
        .record(component, format!("{prefix}.pool"), &LayerKind::Pool)
        .expect("zero-cost layer");
}

/// Full-video local-encoder cost, the reference for the cube saving.
pub fn full_video_local_cost(model: &ModelComponents) -> Result<u64> {
    let mut ledger = CostLedger::new();
    if stack_output(model.config.video, &model.arch.local).is_none() {
        return Err(Error::InvalidConfig("video too small for local encoder".into()));
    }
    record_stack(&mut ledger, Component::LocalEncoder, "local", model.config.video, &model.arch.local);
    Ok(ledger.total(Component::LocalEncoder))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architecture_shapes() {
        let cfg = ModelConfig::default();
        let arch = cfg.architecture().unwrap();
        assert_eq!(arch.local_stride, [8, 8, 2]);
        assert_eq!(arch.local_map, [4, 4, 4, 32]);
        assert_eq!(arch.global_map, [8, 8, 4, 8]);
        let enlarged = crate::crop::enlarged_extents(cfg.cube, arch.local_stride, arch.interpolated);
        assert_eq!(enlarged, [40, 40, 10]);
        let e_out = stack_output(enlarged, &arch.local).unwrap();
        assert_eq!(e_out, [5, 5, 5]);
    }

    #[test]
    fn local_encoder_is_heavier() {
        let m = ModelComponents::new(ModelConfig::default(), 1).unwrap();
        assert!(m.param_count(Component::LocalEncoder) > m.param_count(Component::GlobalEncoder));
        let ledger = m.ledger();
        let per_voxel_local = ledger.total(Component::LocalEncoder) as f64 / m.config.cube.volume() as f64;
        let small = (m.config.video.iter().product::<usize>() / 8) as f64;
        let per_voxel_global = ledger.total(Component::GlobalEncoder) as f64 / small;
        assert!(per_voxel_local > per_voxel_global);
        let ratio = ledger.total(Component::LocalEncoder) as f64 / ledger.total(Component::GlobalEncoder) as f64;
        assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn frame_wise_configuration() {
        let cfg = ModelConfig {
            cube: CubeSize::new(16, 16, 1),
            max_cubes: 8,
            ..ModelConfig::default()
        };
        let arch = cfg.architecture().unwrap();
        assert_eq!(arch.local_stride, [8, 8, 1]);
        assert_eq!(arch.interpolated, [true, true, false]);
        assert_eq!(arch.local_map, [2, 2, 1, 32]);
    }

    #[test]
    fn rejects_indivisible_cube() {
        let cfg = ModelConfig {
            cube: CubeSize::new(20, 32, 8),
            ..ModelConfig::default()
        };
        assert!(cfg.architecture().is_err());
    }
}
