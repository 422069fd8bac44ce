use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal extent of the local temporal kernels (3x1x1 convs and RDW units).
pub const TEMPORAL_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// `1x1x1 -> 1x3x3 (stride) -> 1x1x1`.
    Bottleneck2d,
    /// `3x1x1 -> 1x3x3 (stride) -> 1x1x1`.
    Bottleneck3dTemporal,
    /// `1x3x3 (stride) -> RDW -> 1x3x3 -> RDW`, no expansion.
    RdwBasic,
    /// `1x1x1 -> RDW -> 1x3x3 (stride) -> 1x1x1`.
    RdwBottleneck,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Bottleneck2d => "bottleneck2d",
            BlockKind::Bottleneck3dTemporal => "bottleneck3d_temporal",
            BlockKind::RdwBasic => "rdw_basic",
            BlockKind::RdwBottleneck => "rdw_bottleneck",
        }
    }
}

/// One residual block. `tfc` marks the TFC variant of the base block: a TFC
/// branch runs parallel to the block's first kernel and is summed into its
/// output before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    pub stride: usize,
    pub tfc: bool,
}

/// Shape of one convolution kernel inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kt: usize,
    pub kh: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_shape(&self) -> [usize; 5] {
        [self.c_out, self.c_in, self.kt, self.kh, self.kh]
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kt * self.kh * self.kh
    }

    /// True for a `K x 1 x 1` kernel with `K > 1`, computed by the temporal convolution operator.
    pub fn is_temporal(&self) -> bool {
        self.kt > 1 && self.kh == 1
    }
}

/// A step of a block's main path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStep {
    /// Convolution followed by batch norm, optionally ReLU.
    Conv { shape: ConvShape, relu: bool },
    /// Residual depthwise temporal unit over `channels`.
    Rdw { channels: usize },
}

impl BlockSpec {
    pub fn new(kind: BlockKind, c_in: usize, c_mid: usize, c_out: usize, stride: usize) -> Result<Self> {
        if c_in == 0 || c_mid == 0 || c_out == 0 {
            return Err(Error::Config(format!(
                "block channels must be positive, got {c_in}/{c_mid}/{c_out}"
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Config(format!("block stride must be 1 or 2, got {stride}")));
        }
        if kind == BlockKind::RdwBasic && c_mid != c_out {
            return Err(Error::Config(
                "rdw_basic blocks have no expansion: mid must equal out".into(),
            ));
        }
        Ok(Self {
            kind,
            c_in,
            c_mid,
            c_out,
            stride,
            tfc: false,
        })
    }

    /// The TFC variant of this block.
    pub fn tfc_variant(mut self) -> Self {
        self.tfc = true;
        self
    }

    pub fn has_projection(&self) -> bool {
        self.c_in != self.c_out || self.stride != 1
    }

    /// Main path in execution order. The first step is always the kernel the
    /// TFC branch wraps. The last conv has no ReLU; it is applied after the skip add.
    pub fn path(&self) -> Vec<PathStep> {
        let conv = |c_in, c_out, kt, kh, stride, relu| PathStep::Conv {
            shape: ConvShape {
                c_in,
                c_out,
                kt,
                kh,
                stride,
            },
            relu,
        };
        let (i, m, o, s) = (self.c_in, self.c_mid, self.c_out, self.stride);
        match self.kind {
            BlockKind::Bottleneck2d => vec![
                conv(i, m, 1, 1, 1, true),
                conv(m, m, 1, 3, s, true),
                conv(m, o, 1, 1, 1, false),
            ],
            BlockKind::Bottleneck3dTemporal => vec![
                conv(i, m, TEMPORAL_KERNEL, 1, 1, true),
                conv(m, m, 1, 3, s, true),
                conv(m, o, 1, 1, 1, false),
            ],
            BlockKind::RdwBasic => vec![
                conv(i, o, 1, 3, s, true),
                PathStep::Rdw { channels: o },
                conv(o, o, 1, 3, 1, false),
                PathStep::Rdw { channels: o },
            ],
            BlockKind::RdwBottleneck => vec![
                conv(i, m, 1, 1, 1, true),
                PathStep::Rdw { channels: m },
                conv(m, m, 1, 3, s, true),
                conv(m, o, 1, 1, 1, false),
            ],
        }
    }

    /// The first kernel of the main path, the one a TFC branch runs beside.
    pub fn first_conv(&self) -> ConvShape {
        match self.path()[0] {
            PathStep::Conv { shape, .. } => shape,
            PathStep::Rdw { .. } => unreachable!("every block starts with a convolution"),
        }
    }

    /// Output channels of the TFC branch (those of the wrapped kernel).
    pub fn branch_channels(&self) -> usize {
        self.first_conv().c_out
    }

    pub fn projection(&self) -> Option<ConvShape> {
        self.has_projection().then_some(ConvShape {
            c_in: self.c_in,
            c_out: self.c_out,
            kt: 1,
            kh: 1,
            stride: self.stride,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub c_in: usize,
    pub c_out: usize,
    /// Spatial extent of the `1 x k x k` stem kernel.
    pub kernel: usize,
    pub stride: usize,
    /// `1x3x3` stride-2 max pool after the stem.
    pub max_pool: bool,
}

impl StemSpec {
    pub fn conv(&self) -> ConvShape {
        ConvShape {
            c_in: self.c_in,
            c_out: self.c_out,
            kt: 1,
            kh: self.kernel,
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Global average pool over `(T, H, W)`, then the classifier.
    GlobalPool,
    /// Per-frame spatial pool and classifier; frame scores are averaged over time.
    FrameScores,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: Vec<BlockSpec>,
}

impl StageSpec {
    /// `repeats` copies of `template`; only the first keeps the stride and input width.
    pub fn repeated(template: BlockSpec, repeats: usize) -> Self {
        let blocks = (0..repeats)
            .map(|i| {
                let mut b = template.clone();
                if i > 0 {
                    b.c_in = b.c_out;
                    b.stride = 1;
                }
                b
            })
            .collect();
        Self { blocks }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub head: HeadKind,
    pub num_classes: usize,
    pub temporal_length: usize,
}

impl NetworkSpec {
    pub fn blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        self.stages.iter().flat_map(|s| s.blocks.iter())
    }

    pub fn tfc_block_count(&self) -> usize {
        self.blocks().filter(|b| b.tfc).count()
    }

    pub fn feature_channels(&self) -> usize {
        self.blocks().last().map_or(self.stem.c_out, |b| b.c_out)
    }

    /// Spatial size after the stem and every stage for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let down = |n: usize, s: usize| (n - 1) / s + 1;
        let (mut h, mut w) = (down(h, self.stem.stride), down(w, self.stem.stride));
        if self.stem.max_pool {
            (h, w) = (down(h, 2), down(w, 2));
        }
        for b in self.blocks() {
            (h, w) = (down(h, b.stride), down(w, b.stride));
        }
        (h, w)
    }

    /// Check channel chaining and the temporal-length contract.
    pub fn validate(&self) -> Result<()> {
        if self.temporal_length == 0 || self.num_classes == 0 {
            return Err(Error::Config("temporal length and class count must be positive".into()));
        }
        let mut c = self.stem.c_out;
        for (si, stage) in self.stages.iter().enumerate() {
            for (bi, b) in stage.blocks.iter().enumerate() {
                if b.c_in != c {
                    return Err(Error::Config(format!(
                        "stage {si} block {bi} expects {} input channels but receives {c}",
                        b.c_in
                    )));
                }
                if b.first_conv().is_temporal() && TEMPORAL_KERNEL > self.temporal_length {
                    return Err(Error::Config(format!(
                        "temporal kernel {TEMPORAL_KERNEL} exceeds T={}",
                        self.temporal_length
                    )));
                }
                c = b.c_out;
            }
        }
        Ok(())
    }
}

/// Which blocks become TFC residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
#[derive(Default)]
pub enum TfcPolicy {
    #[default]
    None,
    /// Every other block of the second and third stages, starting at `phase`.
    V3d { phase: usize },
    /// Every block of the last two stages.
    Tsn,
}

impl fmt::Display for TfcPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TfcPolicy::None => f.write_str("none"),
            TfcPolicy::V3d { .. } => f.write_str("v3d"),
            TfcPolicy::Tsn => f.write_str("tsn"),
        }
    }
}

impl FromStr for TfcPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" | "none" => Ok(TfcPolicy::None),
            "v3d" => Ok(TfcPolicy::V3d { phase: 0 }),
            "tsn" => Ok(TfcPolicy::Tsn),
            other => Err(Error::UnknownPolicy(other.to_string())),
        }
    }
}

/// Convert blocks to their TFC variants according to `policy`.
pub fn place_tfc_blocks(net: &NetworkSpec, policy: TfcPolicy) -> Result<NetworkSpec> {
    let mut out = net.clone();
    if policy == TfcPolicy::None {
        return Ok(out);
    }
    let n = out.stages.len();
    if n < 4 {
        return Err(Error::Config(format!(
            "TFC placement needs at least 4 stages, network has {n}"
        )));
    }
    match policy {
        TfcPolicy::None => {}
        TfcPolicy::V3d { phase } => {
            for stage in &mut out.stages[1..3] {
                for (i, b) in stage.blocks.iter_mut().enumerate() {
                    if i >= phase && (i - phase) % 2 == 0 {
                        b.tfc = true;
                    }
                }
            }
        }
        TfcPolicy::Tsn => {
            for stage in &mut out.stages[n - 2..] {
                stage.blocks.iter_mut().for_each(|b| b.tfc = true);
            }
        }
    }
    Ok(out)
}
