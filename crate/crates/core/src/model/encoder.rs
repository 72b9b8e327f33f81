use candle_core::Tensor;

use super::config::{BlockSpec, DecoderSpec, EncoderSpec};
use super::nn::{Conv2d, ConvSpec, ParamStore, Upsample2x};
use crate::error::Result;

/// Bottleneck residual block with a grouped 3x3 convolution:
/// 1x1 -> 3x3 (groups = cardinality) -> 1x1, plus a projection shortcut
/// when the shape changes.
#[derive(Debug, Clone)]
pub struct ResNeXtBlock {
    reduce: Conv2d,
    grouped: Conv2d,
    expand: Conv2d,
    shortcut: Option<Conv2d>,
}

impl ResNeXtBlock {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, spec: BlockSpec, cardinality: usize) -> Result<Self> {
        let reduce = Conv2d::new(store, &format!("{name}.reduce"), ConvSpec::new(in_ch, spec.width, 1), 1.0)?;
        let grouped = Conv2d::new(
            store,
            &format!("{name}.grouped"),
            ConvSpec::new(spec.width, spec.width, 3)
                .stride(spec.stride)
                .groups(cardinality),
            1.0,
        )?;
        // Residual branch starts small so the block is close to its shortcut.
        let expand = Conv2d::new(store, &format!("{name}.expand"), ConvSpec::new(spec.width, spec.out, 1), 0.5)?;
        let shortcut = if in_ch != spec.out || spec.stride != 1 {
            Some(Conv2d::new(
                store,
                &format!("{name}.shortcut"),
                ConvSpec::new(in_ch, spec.out, 1).stride(spec.stride),
                1.0,
            )?)
        } else {
            None
        };
        Ok(Self {
            reduce,
            grouped,
            expand,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.reduce.forward(x)?.relu()?;
        let y = self.grouped.forward(&y)?.relu()?;
        let y = self.expand.forward(&y)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemKind {
    /// 7x7 then 3x3 convolutions, each with stride 2.
    Image,
    /// 1x1 channel adapters.
    Adapter,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    stem: Vec<Conv2d>,
    blocks: Vec<ResNeXtBlock>,
    up: Vec<Upsample2x>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        spec: &EncoderSpec,
        stem_kind: StemKind,
        cardinality: usize,
    ) -> Result<Self> {
        let mut ch = in_ch;
        let mut stem = Vec::new();
        for (i, &w) in spec.stem.iter().enumerate() {
            let conv = match stem_kind {
                StemKind::Image => ConvSpec::new(ch, w, if i == 0 { 7 } else { 3 }).stride(2),
                StemKind::Adapter => ConvSpec::new(ch, w, 1),
            };
            stem.push(Conv2d::new(store, &format!("{name}.stem{i}"), conv, 1.0)?);
            ch = w;
        }
        let mut blocks = Vec::new();
        for (i, b) in spec.blocks.iter().enumerate() {
            blocks.push(ResNeXtBlock::new(store, &format!("{name}.block{i}"), ch, *b, cardinality)?);
            ch = b.out;
        }
        let mut up = Vec::new();
        for (i, &w) in spec.upsample.iter().enumerate() {
            up.push(Upsample2x::new(store, &format!("{name}.up{i}"), ch, w, 1.0)?);
            ch = w;
        }
        Ok(Self { stem, blocks, up })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for c in &self.stem {
            x = c.forward(&x)?.relu()?;
        }
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        for u in &self.up {
            x = u.forward(&x)?.relu()?;
        }
        Ok(x)
    }
}

/// Two x2 transposed-convolution stages and a 3x3 convolution to one
/// unbounded output channel.
#[derive(Debug, Clone)]
pub struct Decoder {
    up: Vec<Upsample2x>,
    head: Conv2d,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, spec: &DecoderSpec) -> Result<Self> {
        let mut ch = in_ch;
        let mut up = Vec::new();
        for (i, &w) in spec.widths.iter().enumerate() {
            up.push(Upsample2x::new(store, &format!("{name}.up{i}"), ch, w, 1.0)?);
            ch = w;
        }
        let head = Conv2d::new(store, &format!("{name}.head"), ConvSpec::new(ch, 1, 3), 0.1)?;
        Ok(Self { up, head })
    }

    /// `(B, C, H/4, W/4)` -> `(B, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for u in &self.up {
            x = u.forward(&x)?.relu()?;
        }
        Ok(self.head.forward(&x)?.squeeze(1)?)
    }
}
