//! Theoretical multiply-add accounting.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::crop::CubeSpec;
use crate::diff::conv_output_extent;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv3d {
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        in_channels: usize,
        out_channels: usize,
    },
    Relu,
    Pool,
    BiasAdd,
}

/// Mult-adds of one layer: `m·n` for linear, output voxels × kernel volume ×
/// Cin × Cout for convolution, zero for element-wise and pooling layers.
pub fn count_layer(kind: &LayerKind) -> Result<u64> {
    Ok(match *kind {
        LayerKind::Linear { inputs, outputs } => (inputs * outputs) as u64,
        LayerKind::Conv3d {
            input,
            kernel,
            stride,
            in_channels,
            out_channels,
        } => {
            let mut voxels = 1u64;
            for a in 0..3 {
                let n = conv_output_extent(input[a], kernel[a], stride[a]).ok_or_else(|| Error::InvalidShape {
                    op: "count_layer",
                    detail: alloc::format!(
                        "non-positive output extent for input {input:?}, kernel {kernel:?}, stride {stride:?}"
                    ),
                })?;
                voxels *= n as u64;
            }
            voxels * (kernel.iter().product::<usize>() * in_channels * out_channels) as u64
        }
        LayerKind::Relu | LayerKind::Pool | LayerKind::BiasAdd => 0,
    })
}

fn parse_triple(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split('x').collect();
    let bad = || Error::InvalidShape {
        op: "layer",
        detail: alloc::format!("expected AxBxC, got `{s}`"),
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

/// Textual layer descriptions:
/// `linear:IN:OUT`, `conv3d:HxWxT:KHxKWxKT:SHxSWxST:CIN:COUT`, `relu`, `pool`, `bias`.
impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<usize> {
            fields
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::InvalidShape {
                    op: "layer",
                    detail: alloc::format!("missing or bad field {i} in `{s}`"),
                })
        };
        let field = |i: usize| fields.get(i).copied().unwrap_or("");
        match fields[0] {
            "linear" => Ok(LayerKind::Linear {
                inputs: num(1)?,
                outputs: num(2)?,
            }),
            "conv3d" => Ok(LayerKind::Conv3d {
                input: parse_triple(field(1))?,
                kernel: parse_triple(field(2))?,
                stride: parse_triple(field(3))?,
                in_channels: num(4)?,
                out_channels: num(5)?,
            }),
            "relu" => Ok(LayerKind::Relu),
            "pool" => Ok(LayerKind::Pool),
            "bias" => Ok(LayerKind::BiasAdd),
            other => Err(Error::UnknownLayerKind(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    GlobalEncoder,
    Policy,
    /// Local encoder on one cube.
    LocalEncoder,
    /// Classifier head, once per prediction.
    Classifier,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::GlobalEncoder,
        Component::Policy,
        Component::LocalEncoder,
        Component::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::GlobalEncoder => "global_encoder",
            Component::Policy => "policy",
            Component::LocalEncoder => "local_encoder",
            Component::Classifier => "classifier",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub component: Component,
    pub layer: String,
    pub madds: u64,
}

/// Per-layer mult-add counts grouped by component.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostLedger {
    entries: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, component: Component, layer: impl Into<String>, kind: &LayerKind) -> Result<u64> {
        let madds = count_layer(kind)?;
        self.entries.push(LedgerEntry {
            component,
            layer: layer.into(),
            madds,
        });
        Ok(madds)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self, component: Component) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.component == component)
            .map(|e| e.madds)
            .sum()
    }

    /// Cost of the glance prediction `p_0`: global encoder plus one classifier pass.
    /// Downscaling the input is not counted.
    pub fn glance_cost(&self) -> u64 {
        self.total(Component::GlobalEncoder) + self.total(Component::Classifier)
    }
}

/// Frames `[z0, z0 + T')` covered by a cube on the inference lattice.
pub fn cube_frames(spec: &CubeSpec, video: [usize; 3]) -> core::ops::Range<usize> {
    let z0 = spec.lattice_origin(video)[2];
    z0..z0 + spec.size.t
}

/// Local-encoder cost of a cube, discounted by the fraction of its frames
/// already covered by earlier cubes.
pub fn cube_cost(local_cube_cost: u64, spec: &CubeSpec, video: [usize; 3], processed: &BTreeSet<usize>) -> u64 {
    let frames = cube_frames(spec, video);
    let total = frames.len() as u64;
    let fresh = frames.filter(|f| !processed.contains(f)).count() as u64;
    local_cube_cost * fresh / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crop::CubeSize;

    #[test]
    fn layer_counts() {
        assert_eq!(count_layer(&"linear:4:3".parse().unwrap()).unwrap(), 12);
        assert_eq!(
            count_layer(&"conv3d:8x8x1:3x3x1:1x1x1:1:1".parse().unwrap()).unwrap(),
            324
        );
        assert_eq!(count_layer(&LayerKind::Relu).unwrap(), 0);
        assert_eq!(count_layer(&LayerKind::Pool).unwrap(), 0);
        assert!(matches!("softmax2".parse::<LayerKind>(), Err(Error::UnknownLayerKind(k)) if k == "softmax2"));
        assert!(count_layer(&"conv3d:2x2x1:3x3x1:1x1x1:1:1".parse().unwrap()).is_err());
    }

    #[test]
    fn ledger_totals() {
        let mut ledger = CostLedger::new();
        ledger.record(Component::LocalEncoder, "a", &LayerKind::Linear { inputs: 2, outputs: 3 }).unwrap();
        ledger.record(Component::LocalEncoder, "b", &LayerKind::Relu).unwrap();
        ledger.record(Component::GlobalEncoder, "c", &LayerKind::Linear { inputs: 5, outputs: 1 }).unwrap();
        ledger.record(Component::Classifier, "d", &LayerKind::Linear { inputs: 1, outputs: 1 }).unwrap();
        assert_eq!(ledger.total(Component::LocalEncoder), 6);
        assert_eq!(ledger.glance_cost(), 6);
        assert_eq!(ledger.entries().len(), 4);
    }

    #[test]
    fn dedup_discount() {
        let video = [16, 16, 8];
        let one = CubeSpec::new([8.0, 8.0, 3.5], CubeSize::new(8, 8, 1));
        let mut seen = BTreeSet::new();
        assert_eq!(cube_cost(1000, &one, video, &seen), 1000);
        seen.extend(cube_frames(&one, video));
        assert_eq!(cube_cost(1000, &one, video, &seen), 0);
        let two = CubeSpec::new([8.0, 8.0, 4.0], CubeSize::new(8, 8, 2));
        assert_eq!(cube_frames(&two, video), 3..5);
        assert_eq!(cube_cost(1000, &two, video, &seen), 500);
    }
}
