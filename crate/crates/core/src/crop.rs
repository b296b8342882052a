//! Differentiable extraction of video cubes.
//!
//! Voxel `i` of an axis occupies the continuous interval `[i, i + 1)`, so a
//! cube of extent `n` centred at `c` spans `[c - n/2, c + n/2)` and its voxel
//! `i` is sampled at lattice coordinate `c - n/2 + i`. The valid centre range
//! `[n/2, N - n/2]` is exactly the set of cubes lying inside the video.
//!
//! Two gradient paths reach the cube centre:
//!
//! * [`crop_cube_pixelgrad`] interpolates the cube from video pixels and
//!   differentiates each sample with respect to its coordinate. Every sample
//!   coordinate is the centre plus a fixed offset, so the centre gradient is
//!   the sum of the per-voxel coordinate gradients.
//! * [`crop_enlarged_cube`] + [`feature_center_interp`] crop a cube that is one
//!   encoder stride larger (no gradient), encode it, and re-sample the feature
//!   map at fixed offsets displaced by `c - stop_gradient(c)`. The forward value
//!   is the plain offset sample, while the centre gradient comes from the
//!   feature map's spatial derivative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diff::{Backward, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Cube extents `H'×W'×T'`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CubeSize {
    pub h: usize,
    pub w: usize,
    pub t: usize,
}

impl CubeSize {
    pub const fn new(h: usize, w: usize, t: usize) -> Self {
        Self { h, w, t }
    }

    pub fn extents(self) -> [usize; 3] {
        [self.h, self.w, self.t]
    }

    pub fn volume(self) -> usize {
        self.h * self.w * self.t
    }

    /// Checks `1 <= size <= extent` on every axis.
    pub fn check_fits(self, video: [usize; 3]) -> Result<()> {
        let size = self.extents();
        if (0..3).any(|a| size[a] == 0 || size[a] > video[a]) {
            return Err(Error::InvalidShape {
                op: "cube_size",
                detail: format!("cube {size:?} does not fit video {video:?}"),
            });
        }
        Ok(())
    }

    /// Closed range of valid centres on each axis.
    pub fn center_range(self, video: [usize; 3]) -> [(f64, f64); 3] {
        let size = self.extents();
        core::array::from_fn(|a| (size[a] as f64 / 2.0, video[a] as f64 - size[a] as f64 / 2.0))
    }
}

/// A cube placed in a video by its continuous centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeSpec {
    pub center: [f64; 3],
    pub size: CubeSize,
}

const RANGE_SLACK: f64 = 1e-9;

impl CubeSpec {
    pub fn new(center: [f64; 3], size: CubeSize) -> Self {
        Self { center, size }
    }

    /// Continuous lattice coordinate of voxel `(0, 0, 0)`.
    pub fn origin(&self) -> [f64; 3] {
        let size = self.size.extents();
        core::array::from_fn(|a| self.center[a] - size[a] as f64 / 2.0)
    }

    /// Origin rounded to the nearest lattice point and clamped inside the video.
    pub fn lattice_origin(&self, video: [usize; 3]) -> [usize; 3] {
        let size = self.size.extents();
        let origin = self.origin();
        core::array::from_fn(|a| clamp_origin(origin[a], size[a], video[a]))
    }

    pub fn check_in(&self, video: [usize; 3]) -> Result<()> {
        self.size.check_fits(video)?;
        let range = self.size.center_range(video);
        let inside = (0..3).all(|a| {
            self.center[a].is_finite()
                && self.center[a] >= range[a].0 - RANGE_SLACK
                && self.center[a] <= range[a].1 + RANGE_SLACK
        });
        if !inside {
            return Err(Error::CubeOutOfRange {
                center: self.center,
                size: self.size.extents(),
                video,
            });
        }
        Ok(())
    }
}

fn clamp_origin(origin: f64, size: usize, extent: usize) -> usize {
    let max = extent.saturating_sub(size) as f64;
    libm::round(origin).clamp(0.0, max) as usize
}

fn spatial(video: &Tensor) -> Result<([usize; 3], usize)> {
    let [h, w, t, c] = video.volume_dims()?;
    Ok(([h, w, t], c))
}

/// Interpolation stencil along one axis.
#[derive(Clone, Copy, Debug)]
struct AxisStencil {
    lo: usize,
    hi: usize,
    frac: f64,
    /// False when the coordinate was clamped or the axis has a single voxel.
    live: bool,
}

impl AxisStencil {
    fn new(coord: f64, extent: usize) -> Self {
        if extent == 1 {
            return Self {
                lo: 0,
                hi: 0,
                frac: 0.0,
                live: false,
            };
        }
        let top = (extent - 1) as f64;
        let live = (0.0..=top).contains(&coord);
        let x = coord.clamp(0.0, top);
        let lo = (libm::floor(x) as usize).min(extent - 2);
        Self {
            lo,
            hi: lo + 1,
            frac: x - lo as f64,
            live,
        }
    }

    #[inline]
    fn index(&self, upper: bool) -> usize {
        if upper {
            self.hi
        } else {
            self.lo
        }
    }

    #[inline]
    fn weight(&self, upper: bool) -> f64 {
        if upper {
            self.frac
        } else {
            1.0 - self.frac
        }
    }
}

/// Eight-neighbour stencil at a continuous 3D coordinate.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    axes: [AxisStencil; 3],
    dims: [usize; 3],
    channels: usize,
}

impl Stencil {
    fn new(coords: [f64; 3], dims: [usize; 3], channels: usize) -> Self {
        Self {
            axes: core::array::from_fn(|a| AxisStencil::new(coords[a], dims[a])),
            dims,
            channels,
        }
    }

    /// `(row offset, weight)` for each corner; bit `a` of the index selects the upper neighbour on axis `a`.
    #[inline]
    fn corners(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..8u8).map(move |bits| {
            let up = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
            let idx: [usize; 3] = core::array::from_fn(|a| self.axes[a].index(up[a]));
            let w: [f64; 3] = core::array::from_fn(|a| self.axes[a].weight(up[a]));
            let row = ((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * self.channels;
            (row, w[0] * w[1] * w[2])
        })
    }

    fn sample_into(&self, source: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (row, w) in self.corners() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&source[row..row + self.channels]) {
                *o += w * v;
            }
        }
    }
}

/// Trilinear value of `video` at continuous lattice coordinates, one value per channel.
///
/// Coordinates are clamped to `[0, extent - 1]`.
pub fn trilinear_sample(video: &Tensor, coords: [f64; 3]) -> Result<Vec<f64>> {
    let (dims, channels) = spatial(video)?;
    let mut out = vec![0.0; channels];
    Stencil::new(coords, dims, channels).sample_into(video.data(), &mut out);
    Ok(out)
}

/// Samples a regular grid displaced by a differentiable vector:
/// voxel `(i, j, k)` reads the source at `base + (i, j, k) + mask ⊙ displacement`.
struct GridSample {
    base: [f64; 3],
    grid: [usize; 3],
    mask: [bool; 3],
}

impl GridSample {
    fn coords(&self, displacement: &[f64], i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = [i, j, k];
        core::array::from_fn(|a| {
            let d = if self.mask[a] { displacement[a] } else { 0.0 };
            self.base[a] + idx[a] as f64 + d
        })
    }

    fn for_each_voxel(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let mut n = 0;
        for i in 0..self.grid[0] {
            for j in 0..self.grid[1] {
                for k in 0..self.grid[2] {
                    f(n, i, j, k);
                    n += 1;
                }
            }
        }
    }

    fn forward(&self, source: &Tensor, displacement: &[f64]) -> Result<Tensor> {
        let (dims, channels) = spatial(source)?;
        let mut out = vec![0.0; self.grid.iter().product::<usize>() * channels];
        self.for_each_voxel(|n, i, j, k| {
            let st = Stencil::new(self.coords(displacement, i, j, k), dims, channels);
            st.sample_into(source.data(), &mut out[n * channels..(n + 1) * channels]);
        });
        Tensor::new(vec![self.grid[0], self.grid[1], self.grid[2], channels], out)
    }

    /// Per-axis gradient of `⟨grad, output⟩` with respect to the displacement,
    /// accumulated voxel by voxel from each sample's coordinate derivative.
    fn displacement_grad(&self, source: &Tensor, displacement: &[f64], grad: &Tensor) -> [f64; 3] {
        let (dims, channels) = spatial(source).expect("validated in forward");
        let (src, g) = (source.data(), grad.data());
        let mut total = [0.0; 3];
        self.for_each_voxel(|n, i, j, k| {
            let st = Stencil::new(self.coords(displacement, i, j, k), dims, channels);
            let gv = &g[n * channels..(n + 1) * channels];
            let mut dots = [0.0; 8];
            for (bits, (row, _)) in st.corners().enumerate() {
                dots[bits] = src[row..row + channels].iter().zip(gv).map(|(a, b)| a * b).sum();
            }
            for (a, slot) in total.iter_mut().enumerate() {
                if !st.axes[a].live {
                    continue;
                }
                // pair each lower corner with its upper neighbour along `a`,
                // so a flat field cancels exactly
                let bit = 1 << a;
                for lower in (0..8).filter(|b| b & bit == 0) {
                    let w: f64 = (0..3)
                        .filter(|&b| b != a)
                        .map(|b| st.axes[b].weight(lower & (1 << b) != 0))
                        .product();
                    *slot += w * (dots[lower | bit] - dots[lower]);
                }
            }
        });
        for (t, &m) in total.iter_mut().zip(&self.mask) {
            if !m {
                *t = 0.0;
            }
        }
        total
    }

    fn source_grad(&self, source: &Tensor, displacement: &[f64], grad: &Tensor) -> Tensor {
        let (dims, channels) = spatial(source).expect("validated in forward");
        let mut out = Tensor::zeros(source.shape());
        let g = grad.data();
        let dst = out.data_mut();
        self.for_each_voxel(|n, i, j, k| {
            let st = Stencil::new(self.coords(displacement, i, j, k), dims, channels);
            let gv = &g[n * channels..(n + 1) * channels];
            for (row, w) in st.corners() {
                if w == 0.0 {
                    continue;
                }
                for (o, gc) in dst[row..row + channels].iter_mut().zip(gv) {
                    *o += w * gc;
                }
            }
        });
        out
    }
}

impl Backward for GridSample {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (source, disp) = (inputs[0], inputs[1].data());
        vec![
            needs[0].then(|| self.source_grad(source, disp, grad)),
            needs[1].then(|| Tensor::vector(self.displacement_grad(source, disp, grad).to_vec())),
        ]
    }
}

fn three_vector(g: &Graph, id: NodeId, op: &'static str) -> Result<[f64; 3]> {
    let v = g.value(id);
    if v.len() != 3 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("centre node must hold 3 values, got shape {:?}", v.shape()),
        });
    }
    Ok([v.data()[0], v.data()[1], v.data()[2]])
}

/// Interpolated cube at the centre held by `center`, differentiable with
/// respect to that centre (and to the video, if tracked).
pub fn crop_cube_pixelgrad(g: &mut Graph<'_>, video: NodeId, center: NodeId, size: CubeSize) -> Result<NodeId> {
    let c = three_vector(g, center, "crop_cube_pixelgrad")?;
    let (dims, _) = spatial(g.value(video))?;
    CubeSpec::new(c, size).check_in(dims)?;
    let ext = size.extents();
    let rule = GridSample {
        base: core::array::from_fn(|a| -(ext[a] as f64) / 2.0),
        grid: ext,
        mask: [true; 3],
    };
    let out = rule.forward(g.value(video), &c)?;
    g.push(out, vec![video, center], rule, "crop_cube_pixelgrad")
}

/// Plain interpolated crop (no graph).
pub fn crop_cube_interpolated(video: &Tensor, spec: &CubeSpec) -> Result<Tensor> {
    let (dims, _) = spatial(video)?;
    spec.check_in(dims)?;
    let ext = spec.size.extents();
    GridSample {
        base: spec.origin(),
        grid: ext,
        mask: [false; 3],
    }
    .forward(video, &[0.0; 3])
}

/// Inference-time crop: the origin is rounded to the lattice and the cube is copied.
pub fn crop_cube_direct(video: &Tensor, spec: &CubeSpec) -> Result<Tensor> {
    let (dims, _) = spatial(video)?;
    spec.check_in(dims)?;
    video.sub_volume(spec.lattice_origin(dims), spec.size.extents())
}

#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

/// Forward-mode derivative of the whole interpolated cube with respect to one
/// centre coordinate: every sample is evaluated on dual numbers seeded along
/// `axis`. Used to cross-check the per-voxel backward rule.
pub fn crop_center_tangent(video: &Tensor, spec: &CubeSpec, axis: usize) -> Result<Tensor> {
    let (dims, channels) = spatial(video)?;
    spec.check_in(dims)?;
    let ext = spec.size.extents();
    let origin = spec.origin();
    let mut out = Vec::with_capacity(spec.size.volume() * channels);
    for i in 0..ext[0] {
        for j in 0..ext[1] {
            for k in 0..ext[2] {
                let idx = [i, j, k];
                let coord: [Dual; 3] = core::array::from_fn(|a| Dual {
                    v: origin[a] + idx[a] as f64,
                    d: if a == axis { 1.0 } else { 0.0 },
                });
                // per-axis (lower index, lower weight, upper weight) on duals
                let parts: [(usize, Dual, Dual); 3] = core::array::from_fn(|a| {
                    let st = AxisStencil::new(coord[a].v, dims[a]);
                    let dd = if st.live { coord[a].d } else { 0.0 };
                    let frac = Dual { v: st.frac, d: dd };
                    (st.lo, Dual { v: 1.0 - frac.v, d: -frac.d }, frac)
                });
                for ch in 0..channels {
                    let mut acc = Dual { v: 0.0, d: 0.0 };
                    for (di, wx) in [(0, parts[0].1), (1, parts[0].2)] {
                        for (dj, wy) in [(0, parts[1].1), (1, parts[1].2)] {
                            for (dk, wz) in [(0, parts[2].1), (1, parts[2].2)] {
                                let x = (parts[0].0 + di).min(dims[0] - 1);
                                let y = (parts[1].0 + dj).min(dims[1] - 1);
                                let z = (parts[2].0 + dk).min(dims[2] - 1);
                                let v = video.data()[((x * dims[1] + y) * dims[2] + z) * channels + ch];
                                let wxy = Dual {
                                    v: wx.v * wy.v,
                                    d: wx.d * wy.v + wx.v * wy.d,
                                };
                                let w = Dual {
                                    v: wxy.v * wz.v,
                                    d: wxy.d * wz.v + wxy.v * wz.d,
                                };
                                acc.v += w.v * v;
                                acc.d += w.d * v;
                            }
                        }
                    }
                    out.push(acc.d);
                }
            }
        }
    }
    Tensor::new(vec![ext[0], ext[1], ext[2], channels], out)
}

/// Fixed sampling positions `o_{i,j,k}` inside an enlarged feature map.
///
/// `o_{i,j,k} = (i, j, k) + shift` on interpolated axes; non-interpolated axes
/// read index `k` directly and carry no centre gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureOffsetGrid {
    pub target: [usize; 3],
    pub shift: [f64; 3],
    pub interpolated: [bool; 3],
}

impl FeatureOffsetGrid {
    /// Offsets at the centres of the `(n+1)`-sized map's cells: `shift = 0.5`.
    pub fn centered(target: [usize; 3], interpolated: [bool; 3]) -> Self {
        Self {
            target,
            shift: core::array::from_fn(|a| if interpolated[a] { 0.5 } else { 0.0 }),
            interpolated,
        }
    }

    /// Integer offsets `o = (i, j, k)`: the target map is the enlarged map's leading corner.
    pub fn aligned(target: [usize; 3], interpolated: [bool; 3]) -> Self {
        Self {
            target,
            shift: [0.0; 3],
            interpolated,
        }
    }

    pub fn offset(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = [i, j, k];
        core::array::from_fn(|a| idx[a] as f64 + self.shift[a])
    }

    /// Extents the enlarged feature map must have.
    pub fn source_extents(&self) -> [usize; 3] {
        core::array::from_fn(|a| self.target[a] + usize::from(self.interpolated[a]))
    }
}

/// Extents of the enlarged pixel cube: one encoder stride larger on interpolated axes.
pub fn enlarged_extents(size: CubeSize, stride: [usize; 3], interpolated: [bool; 3]) -> [usize; 3] {
    let ext = size.extents();
    core::array::from_fn(|a| ext[a] + if interpolated[a] { stride[a] } else { 0 })
}

/// Crops the enlarged cube used by the feature-space estimator. Not
/// differentiable: the cube origin is rounded to the lattice and then moved
/// back by `shift × stride` so the true cube sits at the offsets' position.
pub fn crop_enlarged_cube(
    video: &Tensor,
    spec: &CubeSpec,
    stride: [usize; 3],
    offsets: &FeatureOffsetGrid,
) -> Result<Tensor> {
    let (dims, _) = spatial(video)?;
    spec.check_in(dims)?;
    let enlarged = enlarged_extents(spec.size, stride, offsets.interpolated);
    if (0..3).any(|a| enlarged[a] > dims[a]) {
        return Err(Error::EnlargedCubeTooLarge {
            required: enlarged,
            video: dims,
        });
    }
    let origin = spec.origin();
    let start: [usize; 3] = core::array::from_fn(|a| {
        let back = offsets.shift[a] * stride[a] as f64;
        clamp_origin(libm::round(origin[a]) - libm::round(back), enlarged[a], dims[a])
    });
    video.sub_volume(start, enlarged)
}

/// Re-samples `features` (the enlarged map `e'`) at `o_{i,j,k} + c - stop_gradient(c)`,
/// where `center` holds `c` in feature-cell units.
pub fn feature_center_interp(
    g: &mut Graph<'_>,
    features: NodeId,
    center: NodeId,
    offsets: &FeatureOffsetGrid,
) -> Result<NodeId> {
    three_vector(g, center, "feature_center_interp")?;
    let (dims, _) = spatial(g.value(features))?;
    let expected = offsets.source_extents();
    if dims != expected {
        return Err(Error::InvalidShape {
            op: "feature_center_interp",
            detail: format!("enlarged feature map is {dims:?}, expected {expected:?} for target {:?}", offsets.target),
        });
    }
    let frozen = g.stop_gradient(center)?;
    let displacement = g.sub(center, frozen)?;
    let rule = GridSample {
        base: offsets.shift,
        grid: offsets.target,
        mask: offsets.interpolated,
    };
    let d = g.value(displacement).data().to_vec();
    let out = rule.forward(g.value(features), &d)?;
    g.push(out, vec![features, displacement], rule, "feature_center_interp")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_video(dims: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&dims, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lattice_point_is_exact() {
        let v = random_video([4, 5, 3, 2], 1);
        let s = trilinear_sample(&v, [2.0, 3.0, 1.0]).unwrap();
        assert_eq!(s, vec![v.at(&[2, 3, 1, 0]), v.at(&[2, 3, 1, 1])]);
    }

    #[test]
    fn midpoint_averages_eight_neighbours() {
        let v = Tensor::from_fn(&[2, 2, 2, 1], |i| i as f64);
        assert_eq!(trilinear_sample(&v, [0.5, 0.5, 0.5]).unwrap(), vec![3.5]);
    }

    #[test]
    fn clamps_out_of_range_coordinates() {
        let v = random_video([3, 3, 3, 1], 2);
        assert_eq!(trilinear_sample(&v, [-4.0, 9.0, 1.0]).unwrap()[0], v.at(&[0, 2, 1, 0]));
    }

    #[test]
    fn single_frame_axis_reads_that_frame() {
        let v = random_video([3, 3, 1, 1], 3);
        let s = trilinear_sample(&v, [1.0, 2.0, 0.0]).unwrap();
        assert_eq!(s[0], v.at(&[1, 2, 0, 0]));
    }

    #[test]
    fn lattice_aligned_crop_equals_sub_array_and_shifts() {
        let v = random_video([10, 9, 6, 2], 4);
        let size = CubeSize::new(4, 3, 2);
        let spec = CubeSpec::new([4.0, 3.5, 2.0], size);
        let crop = crop_cube_interpolated(&v, &spec).unwrap();
        assert_eq!(crop, v.sub_volume([2, 2, 1], [4, 3, 2]).unwrap());
        assert_eq!(crop, crop_cube_direct(&v, &spec).unwrap());
        let shifted = CubeSpec::new([6.0, 4.5, 3.0], size);
        assert_eq!(
            crop_cube_interpolated(&v, &shifted).unwrap(),
            v.sub_volume([4, 3, 2], [4, 3, 2]).unwrap()
        );
    }

    #[test]
    fn rejects_out_of_range_spec() {
        let v = random_video([8, 8, 4, 1], 5);
        let spec = CubeSpec::new([1.0, 4.0, 2.0], CubeSize::new(4, 4, 2));
        assert!(matches!(crop_cube_direct(&v, &spec), Err(Error::CubeOutOfRange { .. })));
        let mut g = Graph::new();
        let vid = g.constant(v);
        let c = g.variable(Tensor::vector(spec.center.to_vec()));
        assert!(crop_cube_pixelgrad(&mut g, vid, c, spec.size).is_err());
    }

    #[test]
    fn constant_video_has_zero_centre_gradient() {
        let v = Tensor::full(&[8, 8, 4, 1], 0.7);
        let mut g = Graph::new();
        let vid = g.constant(v);
        let c = g.variable(Tensor::vector(vec![3.3, 4.6, 2.1]));
        let crop = crop_cube_pixelgrad(&mut g, vid, c, CubeSize::new(4, 4, 2)).unwrap();
        let s = g.sum(crop).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).unwrap().data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn enlarged_crop_geometry() {
        let v = random_video([16, 16, 8, 1], 6);
        let size = CubeSize::new(8, 8, 2);
        let offsets = FeatureOffsetGrid::centered([4, 4, 1], [true, true, false]);
        let spec = CubeSpec::new([8.0, 8.0, 3.0], size);
        let big = crop_enlarged_cube(&v, &spec, [2, 2, 1], &offsets).unwrap();
        assert_eq!(big.shape(), &[10, 10, 2, 1]);
        // origin (4, 4, 2) moved back by half a stride
        assert_eq!(big, v.sub_volume([3, 3, 2], [10, 10, 2]).unwrap());
        // rounding is a no-op on the lattice and snaps nearby centres onto it
        let near = CubeSpec::new([8.2, 7.9, 3.3], size);
        assert_eq!(crop_enlarged_cube(&v, &near, [2, 2, 1], &offsets).unwrap(), big);
        let tight = random_video([9, 16, 8, 1], 7);
        let spec = CubeSpec::new([4.5, 8.0, 3.0], size);
        assert!(matches!(
            crop_enlarged_cube(&tight, &spec, [2, 2, 1], &offsets),
            Err(Error::EnlargedCubeTooLarge { required: [10, 10, 2], .. })
        ));
    }

    #[test]
    fn feature_interp_rejects_wrong_extent() {
        let mut g = Graph::new();
        let e = g.constant(Tensor::zeros(&[4, 4, 2, 3]));
        let c = g.variable(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let offsets = FeatureOffsetGrid::centered([4, 4, 2], [true; 3]);
        assert!(feature_center_interp(&mut g, e, c, &offsets).is_err());
    }

    #[test]
    fn feature_interp_constant_map_has_zero_gradient() {
        let mut g = Graph::new();
        let e = g.constant(Tensor::full(&[5, 5, 3, 2], -0.4));
        let c = g.variable(Tensor::vector(vec![1.3, 0.2, 7.0]));
        let offsets = FeatureOffsetGrid::centered([4, 4, 2], [true; 3]);
        let out = feature_center_interp(&mut g, e, c, &offsets).unwrap();
        assert!(g.value(out).data().iter().all(|&v| (v + 0.4).abs() < 1e-15));
        let s = g.sum(out).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).unwrap().data().iter().all(|&d| d == 0.0));
    }
}
