//! The gaze predictor: frozen video-backbone features and query-frame
//! features, each encoded to an `(H/4, W/4)` grid by grouped-convolution
//! residual blocks, concatenated, decoded to full resolution and
//! post-processed into a probability map.

mod backbone;
mod checkpoint;
mod config;
mod encoder;
pub mod nn;

use candle_core::{DType, Device, Tensor, Var, D};
use ndarray::Array2;

use crate::dataset::{ClipSample, Frame};
use crate::error::{Error, Result};
use crate::gaze_maps::{gaussian_kernel_1d, reflect_index, CenterPrior};

pub use backbone::{VideoBackbone, VIDEO_MEAN, VIDEO_STD};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    BackboneKind, BackboneSpec, BlockSpec, DecoderSpec, EncoderSpec, ModelConfig, PostSpec, Precision, SlowSpec,
    X3dSpec,
};
pub use encoder::{Decoder, Encoder, ResNeXtBlock, StemKind};
use nn::ParamStore;

/// Seed of the frozen backbone weights. Kept independent of the training
/// seed so every run sees the same feature extractor.
pub const BACKBONE_SEED: u64 = 0x5eed_bac0;

/// Spatio-temporal features tapped from the backbone.
#[derive(Debug, Clone)]
pub struct BackboneFeatures {
    /// `(B, T', f_D, H/p, W/p)`; `None` when the model has no backbone.
    features: Option<Tensor>,
    pub patch_stride: usize,
    pub temporal_len: usize,
    pub feature_dim: usize,
}

impl BackboneFeatures {
    pub fn absent() -> Self {
        Self {
            features: None,
            patch_stride: 0,
            temporal_len: 0,
            feature_dim: 0,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.features.is_none()
    }

    pub fn tensor(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    /// Number of spatio-temporal tokens `N = T' (H/p) (W/p)` per clip.
    pub fn token_count(&self) -> usize {
        match &self.features {
            Some(f) => f.dims()[1] * f.dims()[3] * f.dims()[4],
            None => 0,
        }
    }

    /// The `t`-th temporal slice, `(B, f_D, H/p, W/p)`.
    pub fn slice(&self, t: usize) -> Result<Option<Tensor>> {
        match &self.features {
            None => Ok(None),
            Some(f) => {
                if t >= self.temporal_len {
                    return Err(Error::invalid(format!(
                        "temporal index {t} out of range for {} feature slices",
                        self.temporal_len
                    )));
                }
                Ok(Some(f.narrow(1, t, 1)?.squeeze(1)?))
            }
        }
    }
}

/// Parameter totals: trainable encoder/decoder weights and frozen backbone
/// weights (normalization statistics are not counted).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParamCounts {
    pub trainable: usize,
    pub frozen: usize,
    pub total: usize,
}

pub struct EcnModel {
    config: ModelConfig,
    device: Device,
    backbone: Option<VideoBackbone>,
    spatiotemporal: Option<Encoder>,
    image: Encoder,
    decoder: Decoder,
    trainable: ParamStore,
    prior: CenterPrior,
    prior_grid: Tensor,
    calibrated: bool,
}

fn default_prior(h: usize, w: usize) -> Result<CenterPrior> {
    let s = (h.min(w) as f64 / 4.0).powi(2);
    CenterPrior::new([(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0], [[s, 0.0], [0.0, s]], h, w)
}

fn map_to_tensor(map: &Array2<f64>, dtype: DType, device: &Device) -> Result<Tensor> {
    let (h, w) = map.dim();
    let data: Vec<f64> = map.iter().copied().collect();
    Ok(Tensor::from_vec(data, (h, w), device)?.to_dtype(dtype)?)
}

/// Separable Gaussian blur of `(B, H, W)` maps with half-sample reflect
/// padding, matching [`crate::gaze_maps::blur_map`].
pub fn blur_tensor(x: &Tensor, sigma: f64) -> Result<Tensor> {
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let (b, h, w) = x.dims3()?;
    let k = gaussian_kernel_1d(sigma)?;
    let r = (k.len() / 2) as isize;
    let dev = x.device();
    let kernel = Tensor::from_vec(k.clone(), k.len(), dev)?.to_dtype(x.dtype())?;
    let index = |n: usize| -> Result<Tensor> {
        let idx: Vec<u32> = (-r..n as isize + r).map(|i| reflect_index(i, n) as u32).collect();
        Ok(Tensor::new(idx.as_slice(), dev)?)
    };
    let rows = x.index_select(&index(h)?, 1)?.reshape((b, 1, h + 2 * r as usize, w))?;
    let y = nn::conv2d(&rows, &kernel.reshape((1, 1, k.len(), 1))?, 0, 1, 1)?;
    let cols = y.index_select(&index(w)?, 3)?;
    let y = nn::conv2d(&cols, &kernel.reshape((1, 1, 1, k.len()))?, 0, 1, 1)?;
    Ok(y.reshape((b, h, w))?)
}

/// `normalize(blur(softplus(raw), sigma) + lambda * prior)` per map;
/// `raw` is `(B, H, W)` and `prior` is `(H, W)`.
pub fn postprocess(raw: &Tensor, prior: &Tensor, post: &PostSpec) -> Result<Tensor> {
    post.validate()?;
    let (_, h, w) = raw.dims3()?;
    if prior.dims() != [h, w] {
        return Err(Error::ShapeMismatch(format!(
            "prior {:?} vs raw map {h}x{w}",
            prior.dims()
        )));
    }
    let positive = blur_tensor(&nn::softplus(raw)?, post.blur_sigma)?;
    let mixed = positive.broadcast_add(&(prior.unsqueeze(0)? * post.prior_weight)?)?;
    let total = mixed.sum_keepdim(D::Minus1)?.sum_keepdim(D::Minus2)?;
    Ok(mixed.broadcast_div(&total)?)
}

impl EcnModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::on_device(config, seed, &Device::Cpu)
    }

    pub fn on_device(config: ModelConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let backbone = VideoBackbone::new(&config.backbone, ParamStore::new(BACKBONE_SEED, dtype, device))?;
        let mut store = ParamStore::new(seed, dtype, device);
        let image = Encoder::new(&mut store, "image", 3, &config.image, StemKind::Image, config.cardinality)?;
        let spatiotemporal = match config.backbone {
            BackboneSpec::None => None,
            _ => Some(Encoder::new(
                &mut store,
                "spatiotemporal",
                config.backbone.feature_dim(),
                &config.spatiotemporal,
                StemKind::Adapter,
                config.cardinality,
            )?),
        };
        let decoder = Decoder::new(&mut store, "decoder", config.fused_channels(), &config.decoder)?;
        let (h, w) = config.input_size;
        let prior = default_prior(h, w)?;
        let prior_grid = map_to_tensor(prior.grid().grid(), dtype, device)?;
        Ok(Self {
            config,
            device: device.clone(),
            backbone,
            spatiotemporal,
            image,
            decoder,
            trainable: store,
            prior,
            prior_grid,
            calibrated: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    pub fn prior(&self) -> &CenterPrior {
        &self.prior
    }

    /// Installs the center prior, rescaled to the model's input size.
    pub fn set_prior(&mut self, prior: &CenterPrior) -> Result<()> {
        let (h, w) = self.config.input_size;
        let p = if prior.grid().dim() == (h, w) {
            prior.clone()
        } else {
            prior.rescaled(h, w)?
        };
        self.prior_grid = map_to_tensor(p.grid().grid(), self.dtype(), &self.device)?;
        self.prior = p;
        Ok(())
    }

    pub fn prior_tensor(&self) -> &Tensor {
        &self.prior_grid
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated || self.backbone.is_none()
    }

    pub(crate) fn set_calibrated(&mut self, c: bool) {
        self.calibrated = c;
    }

    pub fn trainable_store(&self) -> &ParamStore {
        &self.trainable
    }

    pub fn backbone_store(&self) -> Option<&ParamStore> {
        self.backbone.as_ref().map(|b| b.store())
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.trainable.vars()
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let trainable = self.trainable.param_count();
        let frozen = self.backbone.as_ref().map_or(0, |b| b.store().param_count());
        ParamCounts {
            trainable,
            frozen,
            total: trainable + frozen,
        }
    }

    /// Checksum of the frozen backbone (0 without a backbone).
    pub fn backbone_checksum(&self) -> Result<u64> {
        self.backbone.as_ref().map_or(Ok(0), |b| b.checksum())
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        let (h, w) = self.config.input_size;
        if (f.height() as usize, f.width() as usize) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "frame is {}x{}, model expects {h}x{w}",
                f.height(),
                f.width()
            )));
        }
        Ok(())
    }

    fn normalized_chw(&self, f: &Frame) -> Vec<f32> {
        let (h, w) = (f.height() as usize, f.width() as usize);
        let mut out = vec![0f32; 3 * h * w];
        for (x, y, p) in f.enumerate_pixels() {
            for c in 0..3 {
                out[c * h * w + y as usize * w + x as usize] =
                    ((p.0[c] as f64 / 255.0 - VIDEO_MEAN) / VIDEO_STD) as f32;
            }
        }
        out
    }

    /// Normalized query frames `(B, 3, H, W)`.
    pub fn frames_tensor(&self, frames: &[&Frame]) -> Result<Tensor> {
        let (h, w) = self.config.input_size;
        let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
        for f in frames {
            self.check_frame(f)?;
            data.extend(self.normalized_chw(f));
        }
        Ok(Tensor::from_vec(data, (frames.len(), 3, h, w), &self.device)?.to_dtype(self.dtype())?)
    }

    /// Normalized clips `(B, T, 3, H, W)`.
    pub fn clips_tensor(&self, clips: &[&ClipSample]) -> Result<Tensor> {
        let (h, w) = self.config.input_size;
        let t = self.config.clip_len;
        let mut data = Vec::with_capacity(clips.len() * t * 3 * h * w);
        for c in clips {
            if c.frames.len() != t {
                return Err(Error::LengthMismatch {
                    what: "clip frames".into(),
                    expected: t,
                    actual: c.frames.len(),
                });
            }
            for f in &c.frames {
                self.check_frame(f)?;
                data.extend(self.normalized_chw(f));
            }
        }
        Ok(Tensor::from_vec(data, (clips.len(), t, 3, h, w), &self.device)?.to_dtype(self.dtype())?)
    }

    /// Runs the frozen backbone on normalized clips `(B, T, 3, H, W)`.
    pub fn extract_video_features(&self, clips: &Tensor) -> Result<BackboneFeatures> {
        let Some(bb) = &self.backbone else {
            return Ok(BackboneFeatures::absent());
        };
        let (_, t, c, h, w) = clips.dims5()?;
        if t != self.config.clip_len || c != 3 || (h, w) != self.config.input_size {
            return Err(Error::ShapeMismatch(format!(
                "clip ({t}, {c}, {h}, {w}) does not match backbone input ({}, 3, {}, {})",
                self.config.clip_len, self.config.input_size.0, self.config.input_size.1
            )));
        }
        let features = bb.forward(clips, false)?.detach();
        self.wrap_features(features)
    }

    fn wrap_features(&self, features: Tensor) -> Result<BackboneFeatures> {
        let dims = features.dims5()?;
        Ok(BackboneFeatures {
            patch_stride: self.config.backbone.patch_stride(),
            temporal_len: dims.1,
            feature_dim: dims.2,
            features: Some(features),
        })
    }

    /// Resets the backbone normalization statistics from a batch of clips.
    pub fn calibrate_backbone(&mut self, clips: &Tensor) -> Result<()> {
        if let Some(bb) = &self.backbone {
            bb.forward(clips, true)?;
            self.calibrated = true;
        }
        Ok(())
    }

    /// Encodes temporal slice `t` (default: the last, aligned with the query
    /// frame) to `(B, C, H/4, W/4)`. Absent features give `None`.
    pub fn encode_spatiotemporal(&self, feat: &BackboneFeatures, t: Option<usize>) -> Result<Option<Tensor>> {
        let t = t.unwrap_or(feat.temporal_len.saturating_sub(1));
        match feat.slice(t)? {
            None => Ok(None),
            Some(slice) => self.encode_slice(&slice).map(Some),
        }
    }

    /// Spatio-temporal branch on one feature slice `(B, f_D, H/p, W/p)`.
    pub fn encode_slice(&self, slice: &Tensor) -> Result<Tensor> {
        let enc = self
            .spatiotemporal
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no video backbone"))?;
        let (_, c, h, w) = slice.dims4()?;
        let p = self.config.backbone.patch_stride();
        let expected = (self.config.backbone.feature_dim(), self.config.input_size.0 / p, self.config.input_size.1 / p);
        if (c, h, w) != expected {
            return Err(Error::ShapeMismatch(format!(
                "feature slice ({c}, {h}, {w}), expected {expected:?}"
            )));
        }
        enc.forward(slice)
    }

    /// Image branch on normalized frames `(B, 3, H, W)`.
    pub fn encode_query_image(&self, frames: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = frames.dims4()?;
        if c != 3 || (h, w) != self.config.input_size {
            return Err(Error::ShapeMismatch(format!(
                "query frame ({c}, {h}, {w}), model expects (3, {}, {})",
                self.config.input_size.0, self.config.input_size.1
            )));
        }
        self.image.forward(frames)
    }

    /// Concatenates the branch outputs on the channel axis and decodes to
    /// raw `(B, H, W)` maps.
    pub fn fuse_and_decode(&self, st: Option<&Tensor>, image: &Tensor) -> Result<Tensor> {
        let fused = match st {
            Some(s) => {
                let (sd, id) = (s.dims4()?, image.dims4()?);
                if (sd.0, sd.2, sd.3) != (id.0, id.2, id.3) {
                    return Err(Error::ShapeMismatch(format!(
                        "spatio-temporal map {:?} vs image map {:?}",
                        s.dims(),
                        image.dims()
                    )));
                }
                Tensor::cat(&[s, image], 1)?
            }
            None => image.clone(),
        };
        let expected = self.config.fused_channels();
        if fused.dim(1)? != expected {
            return Err(Error::ShapeMismatch(format!(
                "fused map has {} channels, decoder expects {expected}",
                fused.dim(1)?
            )));
        }
        self.decoder.forward(&fused)
    }

    pub fn postprocess(&self, raw: &Tensor) -> Result<Tensor> {
        postprocess(raw, &self.prior_grid, &self.config.post)
    }

    /// Full differentiable path from a backbone slice (if any) and the
    /// normalized query frames to probability maps `(B, H, W)`.
    pub fn forward_from_slice(&self, slice: Option<&Tensor>, frames: &Tensor) -> Result<Tensor> {
        let st = match slice {
            Some(s) => Some(self.encode_slice(s)?),
            None => None,
        };
        let image = self.encode_query_image(frames)?;
        let raw = self.fuse_and_decode(st.as_ref(), &image)?;
        self.postprocess(&raw)
    }

    /// Predicts saliency maps for a batch of clips.
    pub fn predict_batch(&self, clips: &[&ClipSample]) -> Result<Vec<Array2<f64>>> {
        if clips.is_empty() {
            return Ok(Vec::new());
        }
        let feats = if self.backbone.is_some() {
            self.extract_video_features(&self.clips_tensor(clips)?)?
        } else {
            BackboneFeatures::absent()
        };
        let query: Vec<&Frame> = clips.iter().map(|c| c.query_frame()).collect();
        let slice = feats.slice(feats.temporal_len.saturating_sub(1))?;
        let out = self.forward_from_slice(slice.as_ref(), &self.frames_tensor(&query)?)?;
        tensor_to_maps(&out)
    }

    pub fn predict(&self, clip: &ClipSample) -> Result<Array2<f64>> {
        Ok(self.predict_batch(&[clip])?.remove(0))
    }
}

/// Splits `(B, H, W)` into `B` row-major maps.
pub fn tensor_to_maps(t: &Tensor) -> Result<Vec<Array2<f64>>> {
    let (b, h, w) = t.dims3()?;
    let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    (0..b)
        .map(|i| {
            Array2::from_shape_vec((h, w), flat[i * h * w..(i + 1) * h * w].to_vec())
                .map_err(|e| Error::invalid(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze_maps::blur_map;

    #[test]
    fn tensor_blur_matches_reference_blur() {
        let map = Array2::from_shape_fn((12, 9), |(r, c)| ((r * 5 + c * 3) % 7) as f64);
        let t = map_to_tensor(&map, DType::F64, &Device::Cpu).unwrap().unsqueeze(0).unwrap();
        let got = tensor_to_maps(&blur_tensor(&t, 1.3).unwrap()).unwrap().remove(0);
        let want = blur_map(&map, 1.3).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn postprocess_sums_to_one_and_rejects_negative_weight() {
        let dev = Device::Cpu;
        let raw = Tensor::randn(0f64, 3.0, (3, 16, 16), &dev).unwrap();
        let prior = default_prior(16, 16).unwrap();
        let pt = map_to_tensor(prior.grid().grid(), DType::F64, &dev).unwrap();
        let post = PostSpec {
            blur_sigma: 1.5,
            prior_weight: 0.3,
        };
        let out = postprocess(&raw, &pt, &post).unwrap();
        for m in tensor_to_maps(&out).unwrap() {
            assert!((m.sum() - 1.0).abs() < 1e-9);
            assert!(m.iter().all(|&v| v >= 0.0));
        }
        let bad = PostSpec {
            prior_weight: -1.0,
            ..post
        };
        assert!(postprocess(&raw, &pt, &bad).is_err());
    }
}
