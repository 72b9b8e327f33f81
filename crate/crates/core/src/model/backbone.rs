//! Frozen 3D video backbones (X3D and Slow R50) over `(B, T, C, H, W)`
//! tensors. 3D convolutions are expressed as sums of 2D convolutions over
//! temporal offsets; depthwise kernels as shifted multiply-adds.

use candle_core::{DType, Tensor, D};

use super::config::{BackboneSpec, SlowSpec, X3dSpec};
use super::nn::{he_std, ParamStore};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Conv3d {
    weight: Tensor,
    /// Temporal, spatial kernel sizes.
    kt: usize,
    ks: usize,
    stride: usize,
    depthwise: bool,
}

impl Conv3d {
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        (kt, ks): (usize, usize),
        stride: usize,
        depthwise: bool,
    ) -> Result<Self> {
        let per_group_in = if depthwise { 1 } else { in_ch };
        if depthwise && in_ch != out_ch {
            return Err(Error::invalid(format!("{name}: depthwise conv needs equal channels")));
        }
        let fan_in = per_group_in * kt * ks * ks;
        let weight = store.normal(
            format!("{name}.weight"),
            &[out_ch, per_group_in, kt, ks, ks],
            he_std(fan_in),
        )?;
        Ok(Self {
            weight,
            kt,
            ks,
            stride,
            depthwise,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.depthwise {
            self.forward_depthwise(x)
        } else {
            self.forward_dense(x)
        }
    }

    fn forward_dense(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c, h, w) = x.dims5()?;
        let pt = self.kt / 2;
        let xp = x.pad_with_zeros(1, pt, pt)?;
        let mut acc: Option<Tensor> = None;
        for dt in 0..self.kt {
            let slice = xp.narrow(1, dt, t)?.reshape((b * t, c, h, w))?;
            let k = self.weight.narrow(2, dt, 1)?.squeeze(2)?.contiguous()?;
            let y = super::nn::conv2d(&slice, &k, self.ks / 2, self.stride, 1)?;
            acc = Some(match acc {
                Some(a) => (a + y)?,
                None => y,
            });
        }
        let y = acc.expect("kernel has at least one temporal tap");
        let (_, co, ho, wo) = y.dims4()?;
        Ok(y.reshape((b, t, co, ho, wo))?)
    }

    fn forward_depthwise(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, c, h, w) = x.dims5()?;
        let (pt, ps) = (self.kt / 2, self.ks / 2);
        let xp = x
            .pad_with_zeros(1, pt, pt)?
            .pad_with_zeros(3, ps, ps)?
            .pad_with_zeros(4, ps, ps)?;
        let mut acc: Option<Tensor> = None;
        for dt in 0..self.kt {
            for dy in 0..self.ks {
                for dx in 0..self.ks {
                    let tap = self
                        .weight
                        .narrow(2, dt, 1)?
                        .narrow(3, dy, 1)?
                        .narrow(4, dx, 1)?
                        .reshape((1, 1, c, 1, 1))?;
                    let shifted = xp.narrow(1, dt, t)?.narrow(3, dy, h)?.narrow(4, dx, w)?;
                    let y = shifted.broadcast_mul(&tap)?;
                    acc = Some(match acc {
                        Some(a) => (a + y)?,
                        None => y,
                    });
                }
            }
        }
        let y = acc.expect("kernel has at least one tap");
        if self.stride == 1 {
            return Ok(y);
        }
        let dev = x.device();
        let rows = Tensor::arange_step(0u32, h as u32, self.stride as u32, dev)?;
        let cols = Tensor::arange_step(0u32, w as u32, self.stride as u32, dev)?;
        Ok(y.index_select(&rows, 3)?.index_select(&cols, 4)?)
    }
}

/// Batch norm whose running statistics are buffers that can be set from
/// a calibration batch.
#[derive(Debug, Clone)]
struct BatchNorm {
    name: String,
    gamma: Tensor,
    beta: Tensor,
}

impl BatchNorm {
    fn new(store: &mut ParamStore, name: &str, ch: usize) -> Result<Self> {
        let gamma = store.constant(format!("{name}.weight"), &[ch], 1.0)?;
        let beta = store.constant(format!("{name}.bias"), &[ch], 0.0)?;
        store.buffer(format!("{name}.running_mean"), &[ch], 0.0)?;
        store.buffer(format!("{name}.running_var"), &[ch], 1.0)?;
        Ok(Self {
            name: name.to_string(),
            gamma,
            beta,
        })
    }

    fn forward(&self, x: &Tensor, store: &ParamStore, calibrate: bool) -> Result<Tensor> {
        let c = x.dim(2)?;
        let mean_var = store
            .get(&format!("{}.running_mean", self.name))
            .expect("registered at construction");
        let var_var = store
            .get(&format!("{}.running_var", self.name))
            .expect("registered at construction");
        if calibrate {
            // Per-channel statistics over batch, time and space.
            let flat = x.transpose(0, 2)?.contiguous()?.reshape((c, ()))?;
            let mean = flat.mean(D::Minus1)?;
            let var = flat.broadcast_sub(&mean.unsqueeze(1)?)?.sqr()?.mean(D::Minus1)?;
            mean_var.set(&mean)?;
            var_var.set(&var)?;
        }
        let shape = (1, 1, c, 1, 1);
        let scale = (self.gamma.clone() / (var_var.as_tensor().clone() + BN_EPS)?.sqrt()?)?;
        let shift = (self.beta.clone() - (mean_var.as_tensor() * &scale)?)?;
        Ok(x
            .broadcast_mul(&scale.reshape(shape)?)?
            .broadcast_add(&shift.reshape(shape)?)?)
    }
}

#[derive(Debug, Clone)]
struct SqueezeExcite {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Channel rounding used by X3D (multiples of 8, never below 90 %).
fn round_width(width: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut w = (d).max(((width + d / 2.0) / d).floor() * d);
    if w < 0.9 * width {
        w += d;
    }
    w as usize
}

impl SqueezeExcite {
    fn new(store: &mut ParamStore, name: &str, ch: usize, ratio: f64) -> Result<Self> {
        let reduced = round_width(ch as f64 * ratio, 8);
        Ok(Self {
            w1: store.normal(format!("{name}.fc1.weight"), &[reduced, ch, 1, 1, 1], he_std(ch))?,
            b1: store.constant(format!("{name}.fc1.bias"), &[reduced], 0.0)?,
            w2: store.normal(format!("{name}.fc2.weight"), &[ch, reduced, 1, 1, 1], he_std(reduced))?,
            b2: store.constant(format!("{name}.fc2.bias"), &[ch], 0.0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, c, _, _) = x.dims5()?;
        let pooled = x.mean(4)?.mean(3)?.mean(1)?; // (B, C)
        let r = self.w1.dim(0)?;
        let s = pooled
            .matmul(&self.w1.reshape((r, c))?.t()?)?
            .broadcast_add(&self.b1)?
            .relu()?;
        let s = s.matmul(&self.w2.reshape((c, r))?.t()?)?.broadcast_add(&self.b2)?;
        let gate = (s.neg()?.exp()? + 1.0)?.recip()?;
        Ok(x.broadcast_mul(&gate.reshape((b, 1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
struct Shortcut {
    conv: Conv3d,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct X3dBlock {
    conv_a: Conv3d,
    bn_a: BatchNorm,
    conv_b: Conv3d,
    bn_b: BatchNorm,
    se: Option<SqueezeExcite>,
    conv_c: Conv3d,
    bn_c: BatchNorm,
    shortcut: Option<Shortcut>,
}

#[derive(Debug, Clone)]
struct SlowBlock {
    conv_a: Conv3d,
    bn_a: BatchNorm,
    conv_b: Conv3d,
    bn_b: BatchNorm,
    conv_c: Conv3d,
    bn_c: BatchNorm,
    shortcut: Option<Shortcut>,
}

#[derive(Debug, Clone)]
enum Arch {
    X3d {
        stem_xy: Conv3d,
        stem_t: Conv3d,
        stem_bn: BatchNorm,
        blocks: Vec<X3dBlock>,
        head: Conv3d,
        head_bn: BatchNorm,
    },
    Slow {
        stem: Conv3d,
        stem_bn: BatchNorm,
        blocks: Vec<SlowBlock>,
        frames: usize,
    },
}

/// A frozen video backbone. Its parameters live in their own store and are
/// never handed to the optimizer.
pub struct VideoBackbone {
    arch: Arch,
    store: ParamStore,
}

/// Mean/std normalization used by both published backbones.
pub const VIDEO_MEAN: f64 = 0.45;
pub const VIDEO_STD: f64 = 0.225;

fn shortcut(
    store: &mut ParamStore,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
) -> Result<Option<Shortcut>> {
    if in_ch == out_ch && stride == 1 {
        return Ok(None);
    }
    Ok(Some(Shortcut {
        conv: Conv3d::new(store, &format!("{name}.shortcut"), in_ch, out_ch, (1, 1), stride, false)?,
        bn: BatchNorm::new(store, &format!("{name}.shortcut_bn"), out_ch)?,
    }))
}

fn build_x3d(store: &mut ParamStore, s: &X3dSpec) -> Result<Arch> {
    let stem_xy = Conv3d::new(store, "stem.conv_xy", 3, s.stem, (1, 3), 2, false)?;
    let stem_t = Conv3d::new(
        store,
        "stem.conv_t",
        s.stem,
        s.stem,
        (s.stem_temporal_kernel, 1),
        1,
        true,
    )?;
    let stem_bn = BatchNorm::new(store, "stem.bn", s.stem)?;
    let mut blocks = Vec::new();
    let mut in_ch = s.stem;
    for (stage, (&depth, &out)) in s.depths.iter().zip(&s.widths).enumerate() {
        let inner = (out as f64 * s.expansion) as usize;
        for i in 0..depth {
            let name = format!("s{}.b{}", stage + 1, i);
            let stride = if i == 0 { 2 } else { 1 };
            blocks.push(X3dBlock {
                conv_a: Conv3d::new(store, &format!("{name}.conv_a"), in_ch, inner, (1, 1), 1, false)?,
                bn_a: BatchNorm::new(store, &format!("{name}.bn_a"), inner)?,
                conv_b: Conv3d::new(store, &format!("{name}.conv_b"), inner, inner, (3, 3), stride, true)?,
                bn_b: BatchNorm::new(store, &format!("{name}.bn_b"), inner)?,
                se: if i % 2 == 0 && s.se_ratio > 0.0 {
                    Some(SqueezeExcite::new(store, &format!("{name}.se"), inner, s.se_ratio)?)
                } else {
                    None
                },
                conv_c: Conv3d::new(store, &format!("{name}.conv_c"), inner, out, (1, 1), 1, false)?,
                bn_c: BatchNorm::new(store, &format!("{name}.bn_c"), out)?,
                shortcut: shortcut(store, &name, in_ch, out, stride)?,
            });
            in_ch = out;
        }
    }
    let head = Conv3d::new(store, "head.pre_conv", in_ch, s.head_width, (1, 1), 1, false)?;
    let head_bn = BatchNorm::new(store, "head.bn", s.head_width)?;
    Ok(Arch::X3d {
        stem_xy,
        stem_t,
        stem_bn,
        blocks,
        head,
        head_bn,
    })
}

fn build_slow(store: &mut ParamStore, s: &SlowSpec) -> Result<Arch> {
    let stem = Conv3d::new(store, "stem.conv", 3, s.stem, (1, 7), 2, false)?;
    let stem_bn = BatchNorm::new(store, "stem.bn", s.stem)?;
    let mut blocks = Vec::new();
    let mut in_ch = s.stem;
    for stage in 0..s.depths.len() {
        let (inner, out, kt) = (s.inner[stage], s.widths[stage], s.temporal_kernels[stage]);
        for i in 0..s.depths[stage] {
            let name = format!("s{}.b{}", stage + 1, i);
            let stride = if i == 0 && stage > 0 { 2 } else { 1 };
            blocks.push(SlowBlock {
                conv_a: Conv3d::new(store, &format!("{name}.conv_a"), in_ch, inner, (kt, 1), 1, false)?,
                bn_a: BatchNorm::new(store, &format!("{name}.bn_a"), inner)?,
                conv_b: Conv3d::new(store, &format!("{name}.conv_b"), inner, inner, (1, 3), stride, false)?,
                bn_b: BatchNorm::new(store, &format!("{name}.bn_b"), inner)?,
                conv_c: Conv3d::new(store, &format!("{name}.conv_c"), inner, out, (1, 1), 1, false)?,
                bn_c: BatchNorm::new(store, &format!("{name}.bn_c"), out)?,
                shortcut: shortcut(store, &name, in_ch, out, stride)?,
            });
            in_ch = out;
        }
    }
    Ok(Arch::Slow {
        stem,
        stem_bn,
        blocks,
        frames: s.frames,
    })
}

/// 3x3 spatial max pool, stride 2, padding 1, applied per frame.
fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (b, t, c, h, w) = x.dims5()?;
    // Edge replication never changes a window maximum.
    let y = x
        .reshape((b * t, c, h, w))?
        .pad_with_same(2, 1, 1)?
        .pad_with_same(3, 1, 1)?
        .max_pool2d_with_stride((3, 3), (2, 2))?;
    let (_, _, ho, wo) = y.dims4()?;
    Ok(y.reshape((b, t, c, ho, wo))?)
}

fn residual(branch: Tensor, x: &Tensor, sc: &Option<Shortcut>, store: &ParamStore, cal: bool) -> Result<Tensor> {
    let skip = match sc {
        Some(s) => s.bn.forward(&s.conv.forward(x)?, store, cal)?,
        None => x.clone(),
    };
    Ok((branch + skip)?.relu()?)
}

impl VideoBackbone {
    pub fn new(spec: &BackboneSpec, store: ParamStore) -> Result<Option<Self>> {
        let mut store = store;
        let arch = match spec {
            BackboneSpec::X3d(s) => build_x3d(&mut store, s)?,
            BackboneSpec::SlowR50(s) => build_slow(&mut store, s)?,
            BackboneSpec::None => return Ok(None),
        };
        Ok(Some(Self { arch, store }))
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Runs the backbone on normalized clips `(B, T, 3, H, W)` and returns
    /// the tapped features `(B, T', f_D, H/p, W/p)`. With `calibrate` the
    /// normalization statistics are reset from this batch first.
    pub fn forward(&self, clips: &Tensor, calibrate: bool) -> Result<Tensor> {
        let st = &self.store;
        match &self.arch {
            Arch::X3d {
                stem_xy,
                stem_t,
                stem_bn,
                blocks,
                head,
                head_bn,
            } => {
                let mut x = stem_t.forward(&stem_xy.forward(clips)?)?;
                x = stem_bn.forward(&x, st, calibrate)?.relu()?;
                for b in blocks {
                    let mut y = b.bn_a.forward(&b.conv_a.forward(&x)?, st, calibrate)?.relu()?;
                    y = b.bn_b.forward(&b.conv_b.forward(&y)?, st, calibrate)?;
                    if let Some(se) = &b.se {
                        y = se.forward(&y)?;
                    }
                    y = y.silu()?;
                    y = b.bn_c.forward(&b.conv_c.forward(&y)?, st, calibrate)?;
                    x = residual(y, &x, &b.shortcut, st, calibrate)?;
                }
                Ok(head_bn.forward(&head.forward(&x)?, st, calibrate)?.relu()?)
            }
            Arch::Slow {
                stem,
                stem_bn,
                blocks,
                frames,
            } => {
                let t = clips.dim(1)?;
                let keep = (*frames).min(t);
                // Evenly spaced frames ending on the last one.
                let idx: Vec<u32> = (0..keep)
                    .map(|i| (t - 1 - (keep - 1 - i) * (t / keep)) as u32)
                    .collect();
                let idx = Tensor::new(idx.as_slice(), clips.device())?;
                let x = clips.index_select(&idx, 1)?;
                let x = stem_bn.forward(&stem.forward(&x)?, st, calibrate)?.relu()?;
                let mut x = max_pool_3x3_s2(&x)?;
                for b in blocks {
                    let mut y = b.bn_a.forward(&b.conv_a.forward(&x)?, st, calibrate)?.relu()?;
                    y = b.bn_b.forward(&b.conv_b.forward(&y)?, st, calibrate)?.relu()?;
                    y = b.bn_c.forward(&b.conv_c.forward(&y)?, st, calibrate)?;
                    x = residual(y, &x, &b.shortcut, st, calibrate)?;
                }
                Ok(x)
            }
        }
    }

    /// Order-sensitive checksum over every parameter and buffer bit.
    pub fn checksum(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, var) in self.store.names() {
            for byte in name.bytes() {
                h = (h ^ byte as u64).wrapping_mul(0x100_0000_01b3);
            }
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                h = (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn x3d_width_rounding() {
        // Squeeze-excitation widths of X3D-M.
        let got: Vec<_> = [54.0, 108.0, 216.0, 432.0]
            .iter()
            .map(|c| round_width(c * 0.0625, 8))
            .collect();
        assert_eq!(got, vec![8, 8, 16, 32]);
    }

    fn dense_reference(x: &[f64], w: &[f64], t: usize, h: usize, wd: usize, kt: usize, ks: usize) -> Vec<f64> {
        // Single channel, stride 1, zero padding: direct triple loop.
        let (pt, ps) = ((kt / 2) as isize, (ks / 2) as isize);
        let mut out = vec![0.0; t * h * wd];
        for ti in 0..t {
            for yi in 0..h {
                for xi in 0..wd {
                    let mut acc = 0.0;
                    for a in 0..kt {
                        for b in 0..ks {
                            for c in 0..ks {
                                let (tt, yy, xx) = (
                                    ti as isize + a as isize - pt,
                                    yi as isize + b as isize - ps,
                                    xi as isize + c as isize - ps,
                                );
                                if tt < 0 || yy < 0 || xx < 0 || tt >= t as isize || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += w[(a * ks + b) * ks + c]
                                    * x[(tt as usize * h + yy as usize) * wd + xx as usize];
                            }
                        }
                    }
                    out[(ti * h + yi) * wd + xi] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn dense_and_depthwise_match_direct_convolution() {
        let dev = Device::Cpu;
        let (t, h, w) = (4, 5, 6);
        let x: Vec<f64> = (0..t * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let xt = Tensor::from_vec(x.clone(), (1, t, 1, h, w), &dev).unwrap();
        for depthwise in [false, true] {
            let mut store = ParamStore::new(1, DType::F64, &dev);
            let conv = Conv3d::new(&mut store, "c", 1, 1, (3, 3), 1, depthwise).unwrap();
            let weights = conv.weight.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let got = conv.forward(&xt).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let want = dense_reference(&x, &weights, t, h, w, 3, 3);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-9, "depthwise={depthwise}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn strided_depthwise_takes_even_centres() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(2, DType::F64, &dev);
        let conv = Conv3d::new(&mut store, "c", 2, 2, (1, 3), 2, true).unwrap();
        let full = Conv3d { stride: 1, ..conv.clone() };
        let x = Tensor::randn(0f64, 1.0, (1, 2, 2, 8, 8), &dev).unwrap();
        let strided = conv.forward(&x).unwrap();
        assert_eq!(strided.dims(), &[1, 2, 2, 4, 4]);
        let dense = full.forward(&x).unwrap();
        let a = strided.get(0).unwrap().get(1).unwrap().get(0).unwrap().get(2).unwrap().get(3).unwrap();
        let b = dense.get(0).unwrap().get(1).unwrap().get(0).unwrap().get(4).unwrap().get(6).unwrap();
        assert_eq!(a.to_scalar::<f64>().unwrap(), b.to_scalar::<f64>().unwrap());
    }

    #[test]
    fn max_pool_halves_and_keeps_maxima() {
        let dev = Device::Cpu;
        let x = Tensor::arange(0f32, 16.0, &dev).unwrap().reshape((1, 1, 1, 4, 4)).unwrap();
        let y = max_pool_3x3_s2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 2, 2]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn calibration_normalizes_channels() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(0, DType::F64, &dev);
        let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
        let x = Tensor::randn(2f64, 5.0, (2, 3, 3, 4, 4), &dev).unwrap();
        let y = bn.forward(&x, &store, true).unwrap();
        let flat = y.transpose(0, 2).unwrap().contiguous().unwrap().reshape((3, ())).unwrap();
        let mean = flat.mean(1).unwrap().to_vec1::<f64>().unwrap();
        let var = flat.sqr().unwrap().mean(1).unwrap().to_vec1::<f64>().unwrap();
        for (m, v) in mean.iter().zip(&var) {
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
