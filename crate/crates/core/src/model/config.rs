use std::fmt;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    X3d,
    SlowR50,
    None,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [BackboneKind::X3d, BackboneKind::SlowR50, BackboneKind::None];
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::X3d => "x3d",
            BackboneKind::SlowR50 => "slow_r50",
            BackboneKind::None => "none",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x3d" => Ok(BackboneKind::X3d),
            "slow_r50" => Ok(BackboneKind::SlowR50),
            "none" => Ok(BackboneKind::None),
            other => Err(Error::invalid(format!(
                "unknown backbone {other:?} (expected x3d, slow_r50 or none)"
            ))),
        }
    }
}

/// X3D: depthwise-separable 3D residual network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct X3dSpec {
    pub stem: usize,
    pub stem_temporal_kernel: usize,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    /// Bottleneck width as a multiple of the stage width.
    pub expansion: f64,
    /// Squeeze-excitation reduction, applied on every other block.
    pub se_ratio: f64,
    /// Width of the 1x1x1 projection the features are tapped from.
    pub head_width: usize,
}

/// Slow pathway ResNet-50 (3D bottleneck blocks, temporal kernels only in
/// the deeper stages).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowSpec {
    pub stem: usize,
    pub depths: Vec<usize>,
    pub inner: Vec<usize>,
    pub widths: Vec<usize>,
    /// Temporal kernel of the first convolution in each stage's blocks.
    pub temporal_kernels: Vec<usize>,
    /// Frames taken (evenly) from the clip.
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneSpec {
    X3d(X3dSpec),
    SlowR50(SlowSpec),
    None,
}

impl BackboneSpec {
    pub fn kind(&self) -> BackboneKind {
        match self {
            BackboneSpec::X3d(_) => BackboneKind::X3d,
            BackboneSpec::SlowR50(_) => BackboneKind::SlowR50,
            BackboneSpec::None => BackboneKind::None,
        }
    }

    /// Spatial downsampling `p` of the tapped feature grid.
    pub fn patch_stride(&self) -> usize {
        match self {
            BackboneSpec::X3d(s) => 2 << s.depths.len(),
            BackboneSpec::SlowR50(s) => 4 << s.depths.len().saturating_sub(1),
            BackboneSpec::None => 0,
        }
    }

    /// Channel count `f_D` of the tapped features.
    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneSpec::X3d(s) => s.head_width,
            BackboneSpec::SlowR50(s) => s.widths.last().copied().unwrap_or(0),
            BackboneSpec::None => 0,
        }
    }

    /// Temporal length `T'` of the features for a clip of `clip_len` frames.
    pub fn temporal_len(&self, clip_len: usize) -> usize {
        match self {
            BackboneSpec::X3d(_) => clip_len,
            BackboneSpec::SlowR50(s) => s.frames.min(clip_len),
            BackboneSpec::None => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Width of the grouped 3x3 convolution.
    pub width: usize,
    pub out: usize,
    pub stride: usize,
}

/// One encoder branch: input convolutions, grouped-convolution residual
/// blocks, then x2 transposed-convolution stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub stem: Vec<usize>,
    pub blocks: Vec<BlockSpec>,
    pub upsample: Vec<usize>,
}

impl EncoderSpec {
    pub fn out_channels(&self, in_ch: usize) -> usize {
        self.upsample
            .last()
            .or(self.blocks.last().map(|b| &b.out))
            .or(self.stem.last())
            .copied()
            .unwrap_or(in_ch)
    }

    fn scale(&self) -> f64 {
        let down: usize = self.blocks.iter().map(|b| b.stride).product();
        (1usize << self.upsample.len()) as f64 / down as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    /// Output widths of the x2 upsampling stages; a 3x3 convolution maps
    /// the last one to a single channel.
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostSpec {
    /// Gaussian blur applied to the decoder output, in pixels.
    pub blur_sigma: f64,
    /// Weight of the center prior added after blurring.
    pub prior_weight: f64,
}

impl PostSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_weight >= 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::invalid(format!(
                "center-prior weight must be >= 0, got {}",
                self.prior_weight
            )));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::invalid(format!("blur sigma must be >= 0, got {}", self.blur_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub clip_len: usize,
    /// (H, W)
    pub input_size: (usize, usize),
    /// Groups in every 3x3 encoder convolution.
    pub cardinality: usize,
    pub image: EncoderSpec,
    pub spatiotemporal: EncoderSpec,
    pub decoder: DecoderSpec,
    pub post: PostSpec,
    #[serde(default)]
    pub precision: Precision,
}

fn x3d_m() -> X3dSpec {
    X3dSpec {
        stem: 24,
        stem_temporal_kernel: 5,
        depths: vec![3, 5, 11, 7],
        widths: vec![24, 48, 96, 192],
        expansion: 2.25,
        se_ratio: 0.0625,
        head_width: 432,
    }
}

fn slow_r50() -> SlowSpec {
    SlowSpec {
        stem: 64,
        depths: vec![3, 4, 6, 3],
        inner: vec![64, 128, 256, 512],
        widths: vec![256, 512, 1024, 2048],
        temporal_kernels: vec![1, 1, 3, 3],
        frames: 8,
    }
}

fn block(width: usize, out: usize) -> BlockSpec {
    BlockSpec { width, out, stride: 1 }
}

impl ModelConfig {
    /// Full-size configuration: 224x224 input, 16-frame clips, published
    /// backbone architectures and 96-channel branches.
    ///
    /// Encoder widths are sized so the totals land near 12.8M (x3d),
    /// 42.5M (slow_r50) and 6.1M (no video).
    pub fn full(kind: BackboneKind) -> Self {
        let backbone = match kind {
            BackboneKind::X3d => BackboneSpec::X3d(x3d_m()),
            BackboneKind::SlowR50 => BackboneSpec::SlowR50(slow_r50()),
            BackboneKind::None => BackboneSpec::None,
        };
        // 7x7 grid upsampled x8 to 56x56.
        let st_width = match kind {
            BackboneKind::SlowR50 => 384,
            _ => 552,
        };
        Self {
            backbone,
            clip_len: 16,
            input_size: (224, 224),
            cardinality: 8,
            image: EncoderSpec {
                stem: vec![64, 128],
                blocks: vec![block(1440, 256), block(1440, 96)],
                upsample: vec![],
            },
            spatiotemporal: EncoderSpec {
                stem: vec![512],
                blocks: vec![block(st_width, 512), block(st_width, 384)],
                upsample: vec![256, 128, 96],
            },
            decoder: DecoderSpec { widths: vec![96, 48] },
            post: PostSpec {
                blur_sigma: 6.0,
                prior_weight: 0.3,
            },
            precision: Precision::F32,
        }
    }

    /// 64x64 configuration that trains in minutes on a CPU. Backbones keep
    /// their block types but use three narrow stages (p = 16).
    pub fn desk(kind: BackboneKind) -> Self {
        let backbone = match kind {
            BackboneKind::X3d => BackboneSpec::X3d(X3dSpec {
                stem: 8,
                stem_temporal_kernel: 5,
                depths: vec![1, 1, 1],
                widths: vec![8, 16, 32],
                expansion: 2.25,
                se_ratio: 0.0625,
                head_width: 64,
            }),
            BackboneKind::SlowR50 => BackboneSpec::SlowR50(SlowSpec {
                stem: 8,
                depths: vec![1, 1, 1],
                inner: vec![8, 16, 32],
                widths: vec![16, 32, 64],
                temporal_kernels: vec![1, 3, 3],
                frames: 8,
            }),
            BackboneKind::None => BackboneSpec::None,
        };
        Self {
            backbone,
            clip_len: 16,
            input_size: (64, 64),
            cardinality: 8,
            image: EncoderSpec {
                stem: vec![16, 32],
                blocks: vec![block(32, 32), block(32, 24)],
                upsample: vec![],
            },
            spatiotemporal: EncoderSpec {
                stem: vec![32],
                blocks: vec![block(32, 32), block(32, 32)],
                upsample: vec![24, 24],
            },
            decoder: DecoderSpec { widths: vec![24, 16] },
            post: PostSpec {
                blur_sigma: 6.0 * 64.0 / 224.0,
                prior_weight: 0.3,
            },
            precision: Precision::F32,
        }
    }

    /// 16x16 double-precision model for finite-difference gradient checks.
    pub fn miniature() -> Self {
        Self {
            backbone: BackboneSpec::X3d(X3dSpec {
                stem: 8,
                stem_temporal_kernel: 3,
                depths: vec![1],
                widths: vec![8],
                expansion: 2.0,
                se_ratio: 0.0625,
                head_width: 16,
            }),
            clip_len: 4,
            input_size: (16, 16),
            cardinality: 8,
            image: EncoderSpec {
                stem: vec![8, 8],
                blocks: vec![block(8, 8)],
                upsample: vec![],
            },
            spatiotemporal: EncoderSpec {
                stem: vec![8],
                blocks: vec![block(8, 8)],
                upsample: vec![],
            },
            decoder: DecoderSpec { widths: vec![8, 8] },
            post: PostSpec {
                blur_sigma: 1.0,
                prior_weight: 0.3,
            },
            precision: Precision::F64,
        }
    }

    pub fn kind(&self) -> BackboneKind {
        self.backbone.kind()
    }

    /// Spatial size of the fused feature map, (H/4, W/4).
    pub fn fused_size(&self) -> (usize, usize) {
        (self.input_size.0 / 4, self.input_size.1 / 4)
    }

    pub fn image_channels(&self) -> usize {
        self.image.out_channels(3)
    }

    pub fn st_channels(&self) -> usize {
        match self.backbone {
            BackboneSpec::None => 0,
            _ => self.spatiotemporal.out_channels(self.backbone.feature_dim()),
        }
    }

    pub fn fused_channels(&self) -> usize {
        self.image_channels() + self.st_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!("input size {h}x{w} must be a positive multiple of 4")));
        }
        if self.clip_len == 0 {
            return Err(Error::invalid("clip_len must be >= 1"));
        }
        if self.cardinality == 0 {
            return Err(Error::invalid("cardinality must be >= 1"));
        }
        self.post.validate()?;
        let quarter = h as f64 / 4.0;

        let image_scale = self.image.scale() / (1usize << self.image.stem.len()) as f64;
        if (h as f64 * image_scale - quarter).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "image branch must output H/4; stem, strides and upsampling give scale {image_scale}"
            )));
        }
        if self.decoder.widths.len() != 2 {
            return Err(Error::invalid("decoder must have exactly two x2 upsampling stages"));
        }

        match &self.backbone {
            BackboneSpec::None => {}
            spec => {
                let p = spec.patch_stride();
                if h % p != 0 || w % p != 0 {
                    return Err(Error::invalid(format!(
                        "input {h}x{w} is not divisible by the backbone stride {p}"
                    )));
                }
                let st = (h / p) as f64 * self.spatiotemporal.scale();
                if (st - quarter).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "spatio-temporal branch outputs {st} rows, expected {quarter}"
                    )));
                }
                if let BackboneSpec::X3d(x) = spec {
                    if x.depths.len() != x.widths.len() || x.depths.is_empty() {
                        return Err(Error::invalid("x3d depths and widths must be non-empty and equal length"));
                    }
                }
                if let BackboneSpec::SlowR50(s) = spec {
                    let n = s.depths.len();
                    if n == 0 || s.inner.len() != n || s.widths.len() != n || s.temporal_kernels.len() != n {
                        return Err(Error::invalid("slow_r50 stage lists must be non-empty and equal length"));
                    }
                    if s.frames == 0 {
                        return Err(Error::invalid("slow_r50 frames must be >= 1"));
                    }
                }
            }
        }
        for b in self.image.blocks.iter().chain(&self.spatiotemporal.blocks) {
            if b.width % self.cardinality != 0 {
                return Err(Error::invalid(format!(
                    "block width {} not divisible by cardinality {}",
                    b.width, self.cardinality
                )));
            }
            if b.stride == 0 {
                return Err(Error::invalid("block stride must be >= 1"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for kind in BackboneKind::ALL {
            ModelConfig::full(kind).validate().unwrap();
            ModelConfig::desk(kind).validate().unwrap();
        }
        ModelConfig::miniature().validate().unwrap();
    }

    #[test]
    fn full_channel_plan() {
        let c = ModelConfig::full(BackboneKind::X3d);
        assert_eq!(c.backbone.patch_stride(), 32);
        assert_eq!(c.backbone.feature_dim(), 432);
        assert_eq!(c.fused_size(), (56, 56));
        assert_eq!(c.fused_channels(), 192);
        assert_eq!(ModelConfig::full(BackboneKind::None).fused_channels(), 96);
        assert_eq!(ModelConfig::full(BackboneKind::SlowR50).backbone.feature_dim(), 2048);
    }

    #[test]
    fn kind_round_trips_through_text() {
        for kind in BackboneKind::ALL {
            assert_eq!(kind.to_string().parse::<BackboneKind>().unwrap(), kind);
        }
        assert!("resnet".parse::<BackboneKind>().is_err());
    }

    #[test]
    fn negative_prior_weight_rejected() {
        let mut c = ModelConfig::desk(BackboneKind::None);
        c.post.prior_weight = -0.1;
        assert!(c.validate().is_err());
    }
}
