use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::spec::{place_tfc_blocks, BlockKind, BlockSpec, HeadKind, NetworkSpec, StageSpec, StemSpec, TfcPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// 2D bottlenecks everywhere, frame-level scores averaged over time.
    Tsn,
    /// 2D bottlenecks, with `3x1x1` first kernels in the last two stages.
    V3d,
    /// First stage 2D bottlenecks, then RDW bottlenecks.
    V3dDepthwise,
    /// RDW basic blocks in every stage.
    V3dDepthwiseBasic,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Tsn => "tsn",
            Architecture::V3d => "v3d",
            Architecture::V3dDepthwise => "v3d_depthwise",
            Architecture::V3dDepthwiseBasic => "v3d_depthwise_basic",
        }
    }

    fn block_kind(self, stage: usize, stages: usize) -> BlockKind {
        match self {
            Architecture::Tsn => BlockKind::Bottleneck2d,
            Architecture::V3d if stage + 2 >= stages => BlockKind::Bottleneck3dTemporal,
            Architecture::V3d => BlockKind::Bottleneck2d,
            Architecture::V3dDepthwise if stage == 0 => BlockKind::Bottleneck2d,
            Architecture::V3dDepthwise => BlockKind::RdwBottleneck,
            Architecture::V3dDepthwiseBasic => BlockKind::RdwBasic,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tsn" => Ok(Architecture::Tsn),
            "v3d" => Ok(Architecture::V3d),
            "v3d_depthwise" => Ok(Architecture::V3dDepthwise),
            "v3d_depthwise_basic" => Ok(Architecture::V3dDepthwiseBasic),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Declarative network description, the form stored in config files and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: Architecture,
    pub tfc: TfcPolicy,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    /// Output widths per stage.
    pub widths: Vec<usize>,
    /// Bottleneck expansion: `mid = width / expansion`. Ignored by basic blocks.
    pub expansion: usize,
    pub repeats: Vec<usize>,
    pub strides: Vec<usize>,
    pub frames: usize,
    pub size: usize,
    pub num_classes: usize,
}

impl NetworkConfig {
    /// Desk-scale profile: 32x32 frames, T=16, 16 classes.
    pub fn mini(arch: Architecture, tfc: TfcPolicy) -> Self {
        Self {
            arch,
            tfc,
            in_channels: 3,
            stem_channels: 16,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: false,
            widths: vec![16, 32, 64, 128],
            expansion: 2,
            repeats: vec![1, 2, 2, 1],
            strides: vec![1, 2, 2, 2],
            frames: 16,
            size: 32,
            num_classes: 16,
        }
    }

    /// ResNet50 layout at 32x224x224 with the 36-class head.
    pub fn resnet50(arch: Architecture, tfc: TfcPolicy) -> Self {
        Self {
            arch,
            tfc,
            in_channels: 3,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            widths: vec![256, 512, 1024, 2048],
            expansion: 4,
            repeats: vec![3, 4, 6, 3],
            strides: vec![1, 2, 2, 2],
            frames: 32,
            size: 224,
            num_classes: 36,
        }
    }

    /// ResNet18 layout with RDW basic blocks at 32x224x224.
    pub fn resnet18_depthwise(tfc: TfcPolicy) -> Self {
        Self {
            widths: vec![64, 128, 256, 512],
            expansion: 1,
            repeats: vec![2, 2, 2, 2],
            ..Self::resnet50(Architecture::V3dDepthwiseBasic, tfc)
        }
    }

    pub fn build_spec(&self) -> Result<NetworkSpec> {
        let n = self.widths.len();
        if n == 0 || self.repeats.len() != n || self.strides.len() != n {
            return Err(Error::Config(format!(
                "widths, repeats and strides must have the same non-zero length (got {}, {}, {})",
                n,
                self.repeats.len(),
                self.strides.len()
            )));
        }
        if self.expansion == 0 || self.stem_kernel.is_multiple_of(2) || self.stem_stride == 0 {
            return Err(Error::Config(
                "expansion must be positive and the stem kernel odd".into(),
            ));
        }
        if self.repeats.contains(&0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        let mut c_in = self.stem_channels;
        let mut stages = Vec::with_capacity(n);
        for i in 0..n {
            let kind = self.arch.block_kind(i, n);
            let out = self.widths[i];
            let mid = if kind == BlockKind::RdwBasic {
                out
            } else {
                out / self.expansion
            };
            if mid == 0 {
                return Err(Error::Config(format!(
                    "stage {i} width {out} is smaller than the expansion"
                )));
            }
            let template = BlockSpec::new(kind, c_in, mid, out, self.strides[i])?;
            stages.push(StageSpec::repeated(template, self.repeats[i]));
            c_in = out;
        }
        let base = NetworkSpec {
            stem: StemSpec {
                c_in: self.in_channels,
                c_out: self.stem_channels,
                kernel: self.stem_kernel,
                stride: self.stem_stride,
                max_pool: self.stem_pool,
            },
            stages,
            head: match self.arch {
                Architecture::Tsn => HeadKind::FrameScores,
                _ => HeadKind::GlobalPool,
            },
            num_classes: self.num_classes,
            temporal_length: self.frames,
        };
        let spec = place_tfc_blocks(&base, self.tfc)?;
        spec.validate()?;
        Ok(spec)
    }
}
