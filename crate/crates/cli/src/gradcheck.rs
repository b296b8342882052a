//! Finite-difference and brute-force checks of every differentiable op and
//! of both centre-gradient estimators.
//!
//! Each op is wrapped in the scalar probe `Σ sigmoid(w ⊙ op(x))` with fixed
//! random `w`, so every output element reaches the loss with a distinct weight.

use adafocus_core::crop::{crop_cube_interpolated, crop_cube_pixelgrad, feature_center_interp, trilinear_sample};
use adafocus_core::crop::{CubeSize, CubeSpec, FeatureOffsetGrid};
use adafocus_core::diff::gradcheck::{central_difference, max_relative_error, relative_error};
use adafocus_core::diff::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest acceptable relative error between analytic and numeric gradients.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step, near the cube root of machine epsilon where
/// truncation and rounding errors balance.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub probes: usize,
    pub max_rel_error: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn probe_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn sigmoid_probe(values: &[f64], w: &[f64]) -> f64 {
    values.iter().zip(w).map(|(v, wi)| 1.0 / (1.0 + (-(v * wi)).exp())).sum()
}

fn attach_probe(g: &mut Graph<'_>, out: NodeId, seed: u64) -> NodeId {
    let n = g.value(out).len();
    let w = probe_weights(n, seed);
    let y = g.affine(out, &w, &vec![0.0; n]).expect("probe affine");
    let s = g.sigmoid(y).expect("probe sigmoid");
    g.sum(s).expect("probe sum")
}

/// Checks the gradients of `build` with respect to each of `inputs`.
fn graph_check(
    op: &'static str,
    inputs: &[Tensor],
    seed: u64,
    build: impl Fn(&mut Graph<'_>, &[NodeId]) -> NodeId,
) -> OpCheck {
    let eval = |xs: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.variable(x.clone())).collect();
        let out = build(&mut g, &ids);
        let loss = attach_probe(&mut g, out, seed);
        let grads = g.backward(loss).expect("backward");
        let gs = ids.iter().map(|&i| grads.get(i).cloned().unwrap_or_else(|| Tensor::zeros(g.value(i).shape())));
        (g.value(loss).item(), gs.collect())
    };
    let (_, analytic) = eval(inputs);
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let f = |v: &Tensor| {
            let mut xs = inputs.to_vec();
            xs[i] = v.clone();
            eval(&xs).0
        };
        worst = worst.max(max_relative_error(&f, x, &analytic[i], STEP, FLOOR));
    }
    OpCheck {
        op,
        probes: inputs.iter().map(Tensor::len).sum(),
        max_rel_error: worst,
    }
}

/// Random video with off-lattice cube placement: every sample coordinate's
/// fractional part lies in `[0.25, 0.75]` and no sample touches the border clamp.
fn off_lattice_case(rng: &mut ChaCha8Rng) -> (Tensor, CubeSpec) {
    let dims = [rng.random_range(5..12), rng.random_range(5..12), rng.random_range(3..8)];
    let channels = rng.random_range(1..3);
    let video = uniform(&[dims[0], dims[1], dims[2], channels], rng);
    let size: [usize; 3] = core::array::from_fn(|a| rng.random_range(1..dims[a] - 1));
    let center = core::array::from_fn(|a| {
        let base = rng.random_range(0..dims[a] - size[a]) as f64;
        base + rng.random_range(0.25..=0.75) + size[a] as f64 / 2.0
    });
    (video, CubeSpec::new(center, CubeSize::new(size[0], size[1], size[2])))
}

/// Pixel-path centre gradient against central differences of the plain
/// interpolated crop, over `probes` random videos and cubes.
pub fn pixelgrad_center(probes: usize, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for p in 0..probes {
        let (video, spec) = off_lattice_case(&mut rng);
        let wseed = seed.wrapping_add(p as u64);
        let mut g = Graph::new();
        let v = g.constant_ref(&video);
        let c = g.variable(Tensor::vector(spec.center.to_vec()));
        let crop = crop_cube_pixelgrad(&mut g, v, c, spec.size).expect("crop");
        let loss = attach_probe(&mut g, crop, wseed);
        let grad = g.backward(loss).expect("backward").get(c).expect("centre gradient").clone();
        let w = probe_weights(spec.size.volume() * video.shape()[3], wseed);
        let f = |x: &Tensor| {
            let s = CubeSpec::new([x.data()[0], x.data()[1], x.data()[2]], spec.size);
            sigmoid_probe(crop_cube_interpolated(&video, &s).expect("crop").data(), &w)
        };
        let x = Tensor::vector(spec.center.to_vec());
        worst = worst.max(max_relative_error(&f, &x, &grad, STEP, FLOOR));
    }
    OpCheck {
        op: "crop_cube_pixelgrad",
        probes,
        max_rel_error: worst,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCheck {
    /// Forward output unchanged when only the centre value changes.
    pub forward_invariant: bool,
    pub gradient: OpCheck,
}

/// Feature-path estimator: the forward value must not depend on the centre
/// value, and the centre gradient must equal the derivative of re-sampling the
/// fixed map at `o + δ` with respect to `δ` at zero.
pub fn feature_center(probes: usize, seed: u64) -> FeatureCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut invariant = true;
    let mut worst: f64 = 0.0;
    for p in 0..probes {
        let target = [rng.random_range(2..6), rng.random_range(2..6), rng.random_range(1..5)];
        let interpolated = [true, true, target[2] > 1 && rng.random_bool(0.7)];
        let offsets = FeatureOffsetGrid::centered(target, interpolated);
        let src = offsets.source_extents();
        let channels = rng.random_range(1..4);
        let features = uniform(&[src[0], src[1], src[2], channels], &mut rng);
        let wseed = seed.wrapping_add(p as u64);
        let run = |center: [f64; 3]| {
            let mut g = Graph::new();
            let e = g.constant_ref(&features);
            let c = g.variable(Tensor::vector(center.to_vec()));
            let out = feature_center_interp(&mut g, e, c, &offsets).expect("feature interp");
            let value = g.value(out).clone();
            let loss = attach_probe(&mut g, out, wseed);
            let grad = g.backward(loss).expect("backward").get(c).expect("centre gradient").clone();
            (value, grad)
        };
        let c1 = core::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let c2 = core::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let (v1, g1) = run(c1);
        let (v2, _) = run(c2);
        invariant &= v1.data().iter().zip(v2.data()).all(|(a, b)| a.to_bits() == b.to_bits());

        let w = probe_weights(v1.len(), wseed);
        let shifted = |d: &Tensor| {
            let mut values = Vec::with_capacity(v1.len());
            for i in 0..target[0] {
                for j in 0..target[1] {
                    for k in 0..target[2] {
                        let o = offsets.offset(i, j, k);
                        let at: [f64; 3] =
                            core::array::from_fn(|a| if interpolated[a] { o[a] + d.data()[a] } else { o[a] });
                        values.extend(trilinear_sample(&features, at).expect("sample"));
                    }
                }
            }
            sigmoid_probe(&values, &w)
        };
        let zero = Tensor::vector(vec![0.0; 3]);
        for a in 0..3 {
            let numeric = central_difference(&shifted, &zero, a, STEP);
            worst = worst.max(relative_error(g1.data()[a], numeric, FLOOR));
        }
    }
    FeatureCheck {
        forward_invariant: invariant,
        gradient: OpCheck {
            op: "feature_center_interp",
            probes,
            max_rel_error: worst,
        },
    }
}

/// Trilinear value as a sum of tent weights over every voxel, with the
/// coordinate clamped into the video first.
pub fn brute_force_sample(video: &Tensor, coords: [f64; 3]) -> Vec<f64> {
    let s = video.shape();
    let c: [f64; 3] = core::array::from_fn(|a| coords[a].clamp(0.0, (s[a] - 1) as f64));
    let mut out = vec![0.0; s[3]];
    for i in 0..s[0] {
        for j in 0..s[1] {
            for k in 0..s[2] {
                let w = [i, j, k]
                    .iter()
                    .zip(&c)
                    .map(|(&n, &x)| (1.0 - (x - n as f64).abs()).max(0.0))
                    .product::<f64>();
                if w != 0.0 {
                    for (ch, o) in out.iter_mut().enumerate() {
                        *o += w * video.at(&[i, j, k, ch]);
                    }
                }
            }
        }
    }
    out
}

/// Largest absolute gap between [`trilinear_sample`] and [`brute_force_sample`]
/// over `probes` random coordinates, some outside the video.
pub fn interpolation_oracle(probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let dims = [rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..6), rng.random_range(1..3)];
        let video = uniform(&dims, &mut rng);
        let coords = core::array::from_fn(|a| rng.random_range(-1.0..dims[a] as f64));
        let fast = trilinear_sample(&video, coords).expect("sample");
        for (a, b) in fast.iter().zip(brute_force_sample(&video, coords)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Whether every lattice-aligned interpolated crop equals the indexed sub-volume bit for bit.
pub fn lattice_crops_exact(probes: usize, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..probes).all(|_| {
        let dims = [rng.random_range(2..10), rng.random_range(2..10), rng.random_range(1..6)];
        let video = uniform(&[dims[0], dims[1], dims[2], 2], &mut rng);
        let size: [usize; 3] = core::array::from_fn(|a| rng.random_range(1..=dims[a]));
        let origin: [usize; 3] = core::array::from_fn(|a| rng.random_range(0..=dims[a] - size[a]));
        let spec = CubeSpec::new(
            core::array::from_fn(|a| origin[a] as f64 + size[a] as f64 / 2.0),
            CubeSize::new(size[0], size[1], size[2]),
        );
        let crop = crop_cube_interpolated(&video, &spec).expect("crop");
        let direct = video.sub_volume(origin, size).expect("sub-volume");
        crop.shape() == direct.shape() && crop.data().iter().zip(direct.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    })
}

/// Every differentiable op plus both centre estimators.
pub fn suite(seed: u64) -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| uniform(shape, &mut rng);
    let mut checks = vec![
        graph_check("linear", &[r(&[5]), r(&[3, 5]), r(&[3])], seed, |g, x| {
            g.linear(x[0], x[1], x[2]).unwrap()
        }),
        graph_check("conv3d", &[r(&[5, 4, 3, 2]), r(&[2, 2, 2, 2, 3])], seed, |g, x| {
            g.conv3d(x[0], x[1], [1, 2, 1]).unwrap()
        }),
        graph_check("bias_add", &[r(&[3, 2, 4]), r(&[4])], seed, |g, x| g.bias_add(x[0], x[1]).unwrap()),
        graph_check("relu", &[r(&[4, 6])], seed, |g, x| g.relu(x[0]).unwrap()),
        graph_check("sigmoid", &[r(&[7])], seed, |g, x| g.sigmoid(x[0]).unwrap()),
        graph_check("global_average_pool", &[r(&[3, 2, 2, 4])], seed, |g, x| {
            g.global_average_pool(x[0]).unwrap()
        }),
        graph_check("concat", &[r(&[3]), r(&[2, 2])], seed, |g, x| g.concat(&x[..2]).unwrap()),
        graph_check("elementwise_max", &[r(&[6]), r(&[6]), r(&[6])], seed, |g, x| {
            g.elementwise_max(x).unwrap()
        }),
        graph_check("softmax_cross_entropy", &[r(&[6])], seed, |g, x| {
            g.softmax_cross_entropy(x[0], 4).unwrap()
        }),
        graph_check("affine", &[r(&[5])], seed, |g, x| {
            g.affine(x[0], &[0.5, -1.0, 2.0, 0.0, 3.0], &[1.0; 5]).unwrap()
        }),
        graph_check("sub", &[r(&[4]), r(&[4])], seed, |g, x| g.sub(x[0], x[1]).unwrap()),
        graph_check("slice", &[r(&[8])], seed, |g, x| g.slice(x[0], 2, 4).unwrap()),
        graph_check("reshape", &[r(&[2, 3])], seed, |g, x| g.reshape(x[0], &[3, 2]).unwrap()),
    ];
    checks.push(pixelgrad_center(100, seed));
    checks.push(feature_center(100, seed).gradient);
    checks
}
