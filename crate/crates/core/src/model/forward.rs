use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{ConvBlock, GradientMode, ModelComponents, OffsetAnchor, PolicyMode};
use crate::cost::{cube_cost, cube_frames, Component};
use crate::crop::{crop_cube_direct, crop_cube_pixelgrad, crop_enlarged_cube, feature_center_interp, CubeSize, CubeSpec};
use crate::diff::{softmax, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::synth::stream_rng;

/// Graph handles for every parameter, in [`ModelComponents::named_params`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    global: Vec<(NodeId, NodeId)>,
    local: Vec<(NodeId, NodeId)>,
    policy: (NodeId, NodeId),
    classifier: (NodeId, NodeId),
}

impl BoundParams {
    /// Adds the parameters to `g`; components for which `trainable` is false
    /// enter as constants and receive no gradient.
    pub fn bind<'p>(model: &'p ModelComponents, g: &mut Graph<'p>, trainable: impl Fn(Component) -> bool) -> Self {
        let mut add = |t: &'p Tensor, c: Component| if trainable(c) { g.param(t) } else { g.constant_ref(t) };
        let mut blocks = |bs: &'p [ConvBlock], c: Component| -> Vec<(NodeId, NodeId)> {
            bs.iter().map(|b| (add(&b.kernel, c), add(&b.bias, c))).collect()
        };
        let global = blocks(&model.global, Component::GlobalEncoder);
        let local = blocks(&model.local, Component::LocalEncoder);
        let policy = (
            add(&model.policy.weight, Component::Policy),
            add(&model.policy.bias, Component::Policy),
        );
        let classifier = (
            add(&model.classifier.weight, Component::Classifier),
            add(&model.classifier.bias, Component::Classifier),
        );
        Self {
            global,
            local,
            policy,
            classifier,
        }
    }

    /// Handles in canonical order.
    pub fn all(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(k, b) in self.global.iter().chain(&self.local) {
            out.push(k);
            out.push(b);
        }
        out.extend([self.policy.0, self.policy.1, self.classifier.0, self.classifier.1]);
        out
    }
}

fn encode(g: &mut Graph<'_>, blocks: &[(NodeId, NodeId)], strides: &[ConvBlock], input: NodeId) -> Result<NodeId> {
    let mut x = input;
    for (&(k, b), block) in blocks.iter().zip(strides) {
        x = g.conv3d(x, k, block.stride)?;
        x = g.bias_add(x, b)?;
        x = g.relu(x)?;
    }
    Ok(x)
}

fn check_video(model: &ModelComponents, video: &Tensor) -> Result<()> {
    let [h, w, t, c] = video.volume_dims()?;
    let expected = [
        model.config.video[0],
        model.config.video[1],
        model.config.video[2],
        model.config.channels,
    ];
    if [h, w, t, c] != expected {
        return Err(Error::ShapeMismatch {
            op: "model input",
            left: expected.to_vec(),
            right: video.shape().to_vec(),
        });
    }
    Ok(())
}

/// Global feature map and its pooled vector.
fn glance_nodes(g: &mut Graph<'_>, b: &BoundParams, model: &ModelComponents, video: &Tensor) -> Result<(NodeId, NodeId)> {
    check_video(model, video)?;
    let small = g.constant(video.downscale(model.arch.downscale)?);
    let map = encode(g, &b.global, &model.global, small)?;
    let pooled = g.global_average_pool(map)?;
    Ok((map, pooled))
}

/// All `K` centres in pixel units, `lo + (hi - lo)·sigmoid(W·flatten(e_G) + b)`.
fn policy_node(g: &mut Graph<'_>, b: &BoundParams, model: &ModelComponents, map: NodeId) -> Result<NodeId> {
    let flat_len = g.value(map).len();
    let flat = g.reshape(map, &[flat_len])?;
    let raw = g.linear(flat, b.policy.0, b.policy.1)?;
    let gate = g.sigmoid(raw)?;
    let range = model.config.cube.center_range(model.config.video);
    let k = model.config.max_cubes;
    let scale: Vec<f64> = (0..3 * k).map(|i| range[i % 3].1 - range[i % 3].0).collect();
    let shift: Vec<f64> = (0..3 * k).map(|i| range[i % 3].0).collect();
    g.affine(gate, &scale, &shift)
}

fn classify(g: &mut Graph<'_>, b: &BoundParams, model: &ModelComponents, global: NodeId, local: Option<NodeId>) -> Result<NodeId> {
    let local = match local {
        Some(l) => l,
        None => g.constant(Tensor::zeros(&[model.arch.local_map[3]])),
    };
    let features = g.concat(&[global, local])?;
    g.linear(features, b.classifier.0, b.classifier.1)
}

/// Uniform centres over the admissible range for `k` cubes.
pub fn random_cubes(size: CubeSize, video: [usize; 3], k: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let range = size.center_range(video);
    (0..k)
        .map(|_| {
            core::array::from_fn(|a| {
                let (lo, hi) = range[a];
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            })
        })
        .collect()
}

/// Output of the glance step.
#[derive(Clone, Debug, PartialEq)]
pub struct Glance {
    pub features: Tensor,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Runs the global encoder and the classifier on global features alone.
pub fn glance(model: &ModelComponents, video: &Tensor) -> Result<Glance> {
    let mut g = Graph::new();
    let b = BoundParams::bind(model, &mut g, |_| false);
    let (map, pooled) = glance_nodes(&mut g, &b, model, video)?;
    let logits = classify(&mut g, &b, model, pooled, None)?;
    Ok(Glance {
        features: g.value(map).clone(),
        pooled: g.value(pooled).data().to_vec(),
        logits: g.value(logits).data().to_vec(),
    })
}

/// Policy centres for all `K` cubes from a global feature map.
pub fn plan_cubes(model: &ModelComponents, global_features: &Tensor) -> Result<Vec<CubeSpec>> {
    let mut g = Graph::new();
    let b = BoundParams::bind(model, &mut g, |_| false);
    let expected = &model.arch.global_map;
    if global_features.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "plan_cubes",
            left: expected.to_vec(),
            right: global_features.shape().to_vec(),
        });
    }
    let map = g.constant(global_features.clone());
    let centers = policy_node(&mut g, &b, model, map)?;
    Ok(g
        .value(centers)
        .data()
        .chunks_exact(3)
        .map(|c| CubeSpec::new([c[0], c[1], c[2]], model.config.cube))
        .collect())
}

const PLAN_STREAM: u64 = 0x1417_0002;

/// Chooses cube centres at inference time: learned axes come from the policy,
/// the others are drawn per sample from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CubePlanner {
    pub mode: PolicyMode,
    pub seed: u64,
}

impl CubePlanner {
    pub const LEARNED: Self = Self {
        mode: PolicyMode::LEARNED,
        seed: 0,
    };

    pub fn random(seed: u64) -> Self {
        Self {
            mode: PolicyMode::RANDOM,
            seed,
        }
    }

    pub fn plan(&self, model: &ModelComponents, global_features: &Tensor, sample_id: u64) -> Result<Vec<CubeSpec>> {
        let k = model.config.max_cubes;
        let learned = if self.mode.is_random() {
            None
        } else {
            Some(plan_cubes(model, global_features)?)
        };
        let mut rng = stream_rng(self.seed, PLAN_STREAM, sample_id);
        let drawn = random_cubes(model.config.cube, model.config.video, k, &mut rng);
        Ok((0..k)
            .map(|i| {
                let c = core::array::from_fn(|a| match &learned {
                    Some(l) if self.mode.learned(a) => l[i].center[a],
                    _ => drawn[i][a],
                });
                CubeSpec::new(c, model.config.cube)
            })
            .collect())
    }
}

/// Predictions and costs for steps `0..=t` of one video.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionTrace {
    pub probabilities: Vec<Vec<f64>>,
    /// Mult-adds spent up to and including each step.
    pub cumulative_madds: Vec<u64>,
    pub cubes: Vec<CubeSpec>,
}

impl PredictionTrace {
    pub fn predicted(&self, t: usize) -> usize {
        argmax(&self.probabilities[t])
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Incremental inference over one video; step `t` must follow step `t - 1`.
pub struct Inference<'m> {
    model: &'m ModelComponents,
    video: &'m Tensor,
    planner: CubePlanner,
    sample_id: u64,
    glance: Option<Glance>,
    local_acc: Option<Vec<f64>>,
    processed: BTreeSet<usize>,
    spent: u64,
    trace: PredictionTrace,
}

impl<'m> Inference<'m> {
    pub fn new(model: &'m ModelComponents, video: &'m Tensor, planner: CubePlanner, sample_id: u64) -> Result<Self> {
        check_video(model, video)?;
        Ok(Self {
            model,
            video,
            planner,
            sample_id,
            glance: None,
            local_acc: None,
            processed: BTreeSet::new(),
            spent: 0,
            trace: PredictionTrace::default(),
        })
    }

    pub fn next_step(&self) -> usize {
        self.trace.probabilities.len()
    }

    /// Computes `p_t`. Step 1 also runs the policy for all `K` cubes.
    pub fn step(&mut self, t: usize) -> Result<&[f64]> {
        let expected = self.next_step();
        if t != expected || t > self.model.config.max_cubes {
            return Err(Error::OutOfOrderStep { expected, got: t });
        }
        let ledger = self.model.ledger();
        let logits = if t == 0 {
            let gl = glance(self.model, self.video)?;
            self.spent += ledger.glance_cost();
            let logits = gl.logits.clone();
            self.glance = Some(gl);
            logits
        } else {
            let gl = self.glance.as_ref().expect("step 0 ran");
            if t == 1 {
                self.trace.cubes = self.planner.plan(self.model, &gl.features, self.sample_id)?;
                self.spent += ledger.total(Component::Policy);
            }
            let spec = self.trace.cubes[t - 1];
            let dims = self.model.config.video;
            self.spent += cube_cost(ledger.total(Component::LocalEncoder), &spec, dims, &self.processed)
                + ledger.total(Component::Classifier);
            self.processed.extend(cube_frames(&spec, dims));

            let mut g = Graph::new();
            let b = BoundParams::bind(self.model, &mut g, |_| false);
            let cube = g.constant(crop_cube_direct(self.video, &spec)?);
            let local = encode(&mut g, &b.local, &self.model.local, cube)?;
            let pooled = g.global_average_pool(local)?;
            let mut acc = g.value(pooled).data().to_vec();
            if let Some(prev) = &self.local_acc {
                for (a, p) in acc.iter_mut().zip(prev) {
                    *a = a.max(*p);
                }
            }
            let acc_node = g.constant(Tensor::vector(acc.clone()));
            let global = g.constant(Tensor::vector(gl.pooled.clone()));
            let logits = classify(&mut g, &b, self.model, global, Some(acc_node))?;
            self.local_acc = Some(acc);
            g.value(logits).data().to_vec()
        };
        self.trace.probabilities.push(softmax(&logits));
        self.trace.cumulative_madds.push(self.spent);
        Ok(self.trace.probabilities.last().expect("just pushed"))
    }

    /// Runs every remaining step up to `K`.
    pub fn run(mut self) -> Result<PredictionTrace> {
        for t in self.next_step()..=self.model.config.max_cubes {
            self.step(t)?;
        }
        Ok(self.trace)
    }

    pub fn trace(&self) -> &PredictionTrace {
        &self.trace
    }
}

/// Loss node and per-step logits of one training example.
#[derive(Clone, Debug)]
pub struct TrainingForward {
    pub loss: NodeId,
    pub logits: Vec<NodeId>,
    /// One 3-vector centre node per cube, in pixel units.
    pub centers: Vec<NodeId>,
}

/// Sum of cross-entropies of `p_0 … p_K`.
///
/// Learned centre axes come from the policy and stay differentiable; the
/// others are taken from `random_centers`. A centre with no tracked component
/// is cropped on the lattice exactly as at inference.
#[allow(clippy::too_many_arguments)]
pub fn training_loss<'p>(
    g: &mut Graph<'p>,
    b: &BoundParams,
    model: &'p ModelComponents,
    video: &'p Tensor,
    label: usize,
    mode: GradientMode,
    policy: PolicyMode,
    anchor: OffsetAnchor,
    random_centers: &[[f64; 3]],
) -> Result<TrainingForward> {
    let k = model.config.max_cubes;
    if label >= model.config.classes {
        return Err(Error::LabelOutOfRange {
            label,
            classes: model.config.classes,
        });
    }
    if random_centers.len() != k {
        return Err(Error::InvalidShape {
            op: "training_loss",
            detail: format!("{} random centres for {} cubes", random_centers.len(), k),
        });
    }
    let (map, pooled_global) = glance_nodes(g, b, model, video)?;
    let logits0 = classify(g, b, model, pooled_global, None)?;
    let mut losses = vec![g.softmax_cross_entropy(logits0, label)?];
    let mut logits = vec![logits0];

    let all_centers = if policy.is_random() {
        None
    } else {
        Some(policy_node(g, b, model, map)?)
    };
    let video_node = g.constant_ref(video);
    let stride = model.arch.local_stride;
    let offsets = model.arch.offsets(anchor);
    let mut centers = Vec::with_capacity(k);
    let mut acc: Option<NodeId> = None;
    for (i, drawn) in random_centers.iter().enumerate() {
        let center = match all_centers {
            Some(all) => {
                let c = g.slice(all, 3 * i, 3)?;
                let keep: Vec<f64> = (0..3).map(|a| if policy.learned(a) { 1.0 } else { 0.0 }).collect();
                let fill: Vec<f64> = (0..3).map(|a| if policy.learned(a) { 0.0 } else { drawn[a] }).collect();
                g.affine(c, &keep, &fill)?
            }
            None => g.constant(Tensor::vector(drawn.to_vec())),
        };
        centers.push(center);
        let c = g.value(center).data();
        let spec = CubeSpec::new([c[0], c[1], c[2]], model.config.cube);
        let local = if !g.is_tracked(center) {
            let cube = g.constant(crop_cube_direct(video, &spec)?);
            encode(g, &b.local, &model.local, cube)?
        } else {
            match mode {
                GradientMode::PixelGrad => {
                    let cube = crop_cube_pixelgrad(g, video_node, center, model.config.cube)?;
                    encode(g, &b.local, &model.local, cube)?
                }
                GradientMode::FeatureGrad => {
                    let enlarged = g.constant(crop_enlarged_cube(video, &spec, stride, &offsets)?);
                    let e_big = encode(g, &b.local, &model.local, enlarged)?;
                    let inv: Vec<f64> = stride.iter().map(|&s| 1.0 / s as f64).collect();
                    let c_cells = g.affine(center, &inv, &[0.0; 3])?;
                    feature_center_interp(g, e_big, c_cells, &offsets)?
                }
            }
        };
        let pooled = g.global_average_pool(local)?;
        let merged = match acc {
            Some(prev) => g.elementwise_max(&[prev, pooled])?,
            None => pooled,
        };
        acc = Some(merged);
        let l = classify(g, b, model, pooled_global, Some(merged))?;
        losses.push(g.softmax_cross_entropy(l, label)?);
        logits.push(l);
    }
    let loss = g.add_all(&losses)?;
    Ok(TrainingForward { loss, logits, centers })
}
