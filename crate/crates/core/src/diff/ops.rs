//! Differentiable ops. Each op checks shapes, computes its value and
//! records the matching vector-Jacobian product.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Backward, Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(logits.iter().map(|&z| libm::exp(z - max)).sum::<f64>())
}

/// Output extent of a valid-padding convolution along one axis, or `None` if non-positive.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

struct LinearRule;

impl Backward for LinearRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (m, n) = (w.shape()[0], w.shape()[1]);
        let g = grad.data();
        let gx = needs[0].then(|| {
            let mut out = vec![0.0; n];
            for (i, &gi) in g.iter().enumerate() {
                for (o, &wij) in out.iter_mut().zip(&w.data()[i * n..(i + 1) * n]) {
                    *o += gi * wij;
                }
            }
            Tensor::vector(out)
        });
        let gw = needs[1].then(|| {
            let mut out = Vec::with_capacity(m * n);
            for &gi in g {
                out.extend(x.data().iter().map(|&xj| gi * xj));
            }
            Tensor::new(vec![m, n], out).expect("linear weight grad shape")
        });
        let gb = needs[2].then(|| grad.clone());
        vec![gx, gw, gb]
    }
}

struct Conv3dRule {
    stride: [usize; 3],
}

struct ConvGeometry {
    input: [usize; 4],
    kernel: [usize; 5],
    output: [usize; 3],
    stride: [usize; 3],
}

impl ConvGeometry {
    fn new(x: &Tensor, k: &Tensor, stride: [usize; 3]) -> Result<Self> {
        let input = x.volume_dims()?;
        let kernel: [usize; 5] = k.shape().try_into().map_err(|_| Error::InvalidShape {
            op: "conv3d",
            detail: format!("kernel must be rank 5 (kh×kw×kt×Cin×Cout), got {:?}", k.shape()),
        })?;
        if kernel[3] != input[3] {
            return Err(mismatch("conv3d", x, k));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = conv_output_extent(input[a], kernel[a], stride[a]).ok_or_else(|| Error::InvalidShape {
                op: "conv3d",
                detail: format!(
                    "non-positive output extent on axis {a}: input {:?}, kernel {:?}, stride {:?}",
                    x.shape(),
                    k.shape(),
                    stride
                ),
            })?;
        }
        Ok(Self {
            input,
            kernel,
            output,
            stride,
        })
    }

    /// Calls `f(input_offset, kernel_offset, output_offset)` for every tap; offsets are
    /// channel-row starts (input row has Cin values, kernel row Cin×Cout, output row Cout).
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [_, w, t, cin] = self.input;
        let [kh, kw, kt, _, cout] = self.kernel;
        let [oh, ow, ot] = self.output;
        let [sh, sw, st] = self.stride;
        for i in 0..oh {
            for j in 0..ow {
                for k in 0..ot {
                    let out_row = ((i * ow + j) * ot + k) * cout;
                    for a in 0..kh {
                        for b in 0..kw {
                            for c in 0..kt {
                                let in_row = (((i * sh + a) * w + j * sw + b) * t + k * st + c) * cin;
                                let k_row = ((a * kw + b) * kt + c) * cin * cout;
                                f(in_row, k_row, out_row);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv3d_forward(x: &Tensor, k: &Tensor, geo: &ConvGeometry) -> Tensor {
    let cin = geo.input[3];
    let cout = geo.kernel[4];
    let [oh, ow, ot] = geo.output;
    let mut out = vec![0.0; oh * ow * ot * cout];
    let (xd, kd) = (x.data(), k.data());
    geo.for_each_tap(|in_row, k_row, out_row| {
        let dst = &mut out[out_row..out_row + cout];
        for ci in 0..cin {
            let v = xd[in_row + ci];
            if v == 0.0 {
                continue;
            }
            let taps = &kd[k_row + ci * cout..k_row + (ci + 1) * cout];
            for (o, &kv) in dst.iter_mut().zip(taps) {
                *o += v * kv;
            }
        }
    });
    Tensor::new(vec![oh, ow, ot, cout], out).expect("conv3d output shape")
}

impl Backward for Conv3dRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, k) = (inputs[0], inputs[1]);
        let geo = ConvGeometry::new(x, k, self.stride).expect("geometry validated in forward");
        let cin = geo.input[3];
        let cout = geo.kernel[4];
        let (xd, kd, gd) = (x.data(), k.data(), grad.data());
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; x.len()];
            geo.for_each_tap(|in_row, k_row, out_row| {
                let g = &gd[out_row..out_row + cout];
                for ci in 0..cin {
                    let taps = &kd[k_row + ci * cout..k_row + (ci + 1) * cout];
                    gx[in_row + ci] += taps.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                }
            });
            Tensor::new(x.shape().to_vec(), gx).expect("conv3d input grad")
        });
        let gk = needs[1].then(|| {
            let mut gk = vec![0.0; k.len()];
            geo.for_each_tap(|in_row, k_row, out_row| {
                let g = &gd[out_row..out_row + cout];
                for ci in 0..cin {
                    let v = xd[in_row + ci];
                    if v == 0.0 {
                        continue;
                    }
                    let dst = &mut gk[k_row + ci * cout..k_row + (ci + 1) * cout];
                    for (o, &gv) in dst.iter_mut().zip(g) {
                        *o += v * gv;
                    }
                }
            });
            Tensor::new(k.shape().to_vec(), gk).expect("conv3d kernel grad")
        });
        vec![gx, gk]
    }
}

struct BiasAddRule;

impl Backward for BiasAddRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let c = inputs[1].len();
        let gb = needs[1].then(|| {
            let mut gb = vec![0.0; c];
            for row in grad.data().chunks_exact(c) {
                for (o, g) in gb.iter_mut().zip(row) {
                    *o += g;
                }
            }
            Tensor::vector(gb)
        });
        vec![needs[0].then(|| grad.clone()), gb]
    }
}

struct ReluRule;

impl Backward for ReluRule {
    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let data = output
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(Tensor::new(output.shape().to_vec(), data).expect("relu grad"))]
    }
}

struct SigmoidRule;

impl Backward for SigmoidRule {
    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let data = output
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect();
        vec![Some(Tensor::new(output.shape().to_vec(), data).expect("sigmoid grad"))]
    }
}

struct PoolRule {
    channels: usize,
}

impl Backward for PoolRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let cells = x.len() / self.channels;
        let norm = 1.0 / cells as f64;
        let g = grad.data();
        let data = (0..x.len()).map(|i| g[i % self.channels] * norm).collect();
        vec![Some(Tensor::new(x.shape().to_vec(), data).expect("pool grad"))]
    }
}

struct ConcatRule;

impl Backward for ConcatRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut start = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &need)| {
                let range = start..start + x.len();
                start += x.len();
                need.then(|| Tensor::new(x.shape().to_vec(), grad.data()[range].to_vec()).expect("concat grad"))
            })
            .collect()
    }
}

struct MaxRule;

impl Backward for MaxRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = inputs
            .iter()
            .zip(needs)
            .map(|(x, &n)| n.then(|| Tensor::zeros(x.shape())))
            .collect();
        for (e, &g) in grad.data().iter().enumerate() {
            // first maximal input wins, so ties route the whole gradient to one input
            let mut best = 0;
            for (i, x) in inputs.iter().enumerate().skip(1) {
                if x.data()[e] > inputs[best].data()[e] {
                    best = i;
                }
            }
            if let Some(t) = out[best].as_mut() {
                t.data_mut()[e] += g;
            }
        }
        out
    }
}

struct CrossEntropyRule {
    probs: Vec<f64>,
    label: usize,
}

impl Backward for CrossEntropyRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let g = grad.item();
        let mut d: Vec<f64> = self.probs.iter().map(|p| p * g).collect();
        d[self.label] -= g;
        vec![Some(Tensor::vector(d))]
    }
}

struct SumRule;

impl Backward for SumRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.item()))]
    }
}

struct AddRule {
    sign: f64,
}

impl Backward for AddRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let sign = self.sign;
        vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| grad.map(|g| sign * g)),
        ]
    }
}

struct AffineRule {
    scale: Vec<f64>,
}

impl Backward for AffineRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let data = grad.data().iter().zip(&self.scale).map(|(g, s)| g * s).collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), data).expect("affine grad"))]
    }
}

struct SliceRule {
    start: usize,
}

impl Backward for SliceRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = Tensor::zeros(inputs[0].shape());
        g.data_mut()[self.start..self.start + grad.len()].copy_from_slice(grad.data());
        vec![Some(g)]
    }
}

struct StopGradientRule;

impl Backward for StopGradientRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::zeros(inputs[0].shape()))]
    }
}

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone().reshape(inputs[0].shape()).expect("reshape grad"))]
    }
}

impl<'p> Graph<'p> {
    /// `weights · input + bias` for a vector input.
    pub fn linear(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(weights), self.value(bias));
        if w.rank() != 2 || x.rank() != 1 || w.shape()[1] != x.len() {
            return Err(mismatch("linear", w, x));
        }
        if b.rank() != 1 || b.len() != w.shape()[0] {
            return Err(mismatch("linear", w, b));
        }
        let n = x.len();
        let out: Vec<f64> = w
            .data()
            .chunks_exact(n)
            .zip(b.data())
            .map(|(row, &bi)| row.iter().zip(x.data()).map(|(a, c)| a * c).sum::<f64>() + bi)
            .collect();
        self.push(Tensor::vector(out), vec![input, weights, bias], LinearRule, "linear")
    }

    /// Valid-padding 3D cross-correlation of an `H×W×T×Cin` volume with `kh×kw×kt×Cin×Cout` kernels.
    pub fn conv3d(&mut self, input: NodeId, kernels: NodeId, stride: [usize; 3]) -> Result<NodeId> {
        let (x, k) = (self.value(input), self.value(kernels));
        let geo = ConvGeometry::new(x, k, stride)?;
        let out = conv3d_forward(x, k, &geo);
        self.push(out, vec![input, kernels], Conv3dRule { stride }, "conv3d")
    }

    /// Adds a per-channel bias to the trailing axis.
    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, b) = (self.value(input), self.value(bias));
        let c = b.len();
        if b.rank() != 1 || x.shape().last() != Some(&c) {
            return Err(mismatch("bias_add", x, b));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, vec![input, bias], BiasAddRule, "bias_add")
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let out = self.value(input).map(|v| v.max(0.0));
        self.push(out, vec![input], ReluRule, "relu")
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let out = self.value(input).map(|v| 1.0 / (1.0 + libm::exp(-v)));
        self.push(out, vec![input], SigmoidRule, "sigmoid")
    }

    /// Mean over every axis but the last: `…×C → C`.
    pub fn global_average_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let channels = *x.shape().last().ok_or_else(|| Error::InvalidShape {
            op: "global_average_pool",
            detail: "rank-0 input".into(),
        })?;
        if channels == 0 || x.is_empty() {
            return Err(Error::InvalidShape {
                op: "global_average_pool",
                detail: format!("empty input {:?}", x.shape()),
            });
        }
        let cells = x.len() / channels;
        let mut out = vec![0.0; channels];
        for row in x.data().chunks_exact(channels) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= cells as f64;
        }
        self.push(Tensor::vector(out), vec![input], PoolRule { channels }, "global_average_pool")
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let mut out = Vec::new();
        for &id in inputs {
            out.extend_from_slice(self.value(id).data());
        }
        self.push(Tensor::vector(out), inputs.to_vec(), ConcatRule, "concat")
    }

    /// Element-wise maximum of equally shaped inputs.
    pub fn elementwise_max(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = self.value(*inputs.first().ok_or_else(|| Error::InvalidShape {
            op: "elementwise_max",
            detail: "no inputs".into(),
        })?);
        let mut out = first.clone();
        for &id in &inputs[1..] {
            let x = self.value(id);
            if x.shape() != out.shape() {
                return Err(mismatch("elementwise_max", &out, x));
            }
            for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                if v > *o {
                    *o = v;
                }
            }
        }
        self.push(out, inputs.to_vec(), MaxRule, "elementwise_max")
    }

    /// `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let z = self.value(logits);
        if z.rank() != 1 || z.is_empty() {
            return Err(Error::InvalidShape {
                op: "softmax_cross_entropy",
                detail: format!("logits must be a non-empty vector, got {:?}", z.shape()),
            });
        }
        if label >= z.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: z.len(),
            });
        }
        let loss = log_sum_exp(z.data()) - z.data()[label];
        let probs = softmax(z.data());
        self.push(
            Tensor::scalar(loss.max(0.0)),
            vec![logits],
            CrossEntropyRule { probs, label },
            "softmax_cross_entropy",
        )
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), vec![input], SumRule, "sum")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.combine(a, b, 1.0, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.combine(a, b, -1.0, "sub")
    }

    fn combine(&mut self, a: NodeId, b: NodeId, sign: f64, op: &'static str) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + sign * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, vec![a, b], AddRule { sign }, op)
    }

    /// Sums scalar nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = terms.split_first().ok_or_else(|| Error::InvalidShape {
            op: "add_all",
            detail: "no terms".into(),
        })?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// `input[i] * scale[i] + shift[i]` with constant per-element coefficients.
    pub fn affine(&mut self, input: NodeId, scale: &[f64], shift: &[f64]) -> Result<NodeId> {
        let x = self.value(input);
        if scale.len() != x.len() || shift.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: x.shape().to_vec(),
                right: vec![scale.len(), shift.len()],
            });
        }
        let data = x
            .data()
            .iter()
            .zip(scale.iter().zip(shift))
            .map(|(v, (s, b))| v * s + b)
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, vec![input], AffineRule { scale: scale.to_vec() }, "affine")
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let n = self.value(input).len();
        self.affine(input, &vec![factor; n], &vec![0.0; n])
    }

    /// Contiguous range of a flattened tensor, returned as a vector.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(input);
        if start + len > x.len() {
            return Err(Error::InvalidShape {
                op: "slice",
                detail: format!("range {}..{} exceeds length {}", start, start + len, x.len()),
            });
        }
        let out = Tensor::vector(x.data()[start..start + len].to_vec());
        self.push(out, vec![input], SliceRule { start }, "slice")
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_gradient(&mut self, input: NodeId) -> Result<NodeId> {
        let out = self.value(input).clone();
        self.push(out, vec![input], StopGradientRule, "stop_gradient")
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(input).clone().reshape(shape)?;
        self.push(out, vec![input], ReshapeRule, "reshape")
    }
}
