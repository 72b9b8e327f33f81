//! Parameter storage and the handful of layers the model is built from.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named parameters (counted, saved) and buffers (saved only), with
/// deterministic seeded initialization.
pub struct ParamStore {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, t: Tensor, buffer: bool) -> Result<Tensor> {
        let map = if buffer {
            &mut self.buffers
        } else {
            &mut self.params
        };
        if map.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        map.insert(name, var);
        Ok(out)
    }

    /// Normal(0, std) initialized parameter.
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        self.insert(name.into(), t, false)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<Tensor> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.insert(name.into(), t, false)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<Tensor> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.insert(name.into(), t, true)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    /// Looks up a parameter or buffer by name.
    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn names(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter().chain(self.buffers.iter())
    }
}

/// He-normal standard deviation for a ReLU layer with `fan_in` inputs.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, init_gain: f64) -> Result<Self> {
        if !spec.in_ch.is_multiple_of(spec.groups) || !spec.out_ch.is_multiple_of(spec.groups) {
            return Err(Error::invalid(format!(
                "{name}: channels {}->{} not divisible by {} groups",
                spec.in_ch, spec.out_ch, spec.groups
            )));
        }
        let fan_in = spec.in_ch / spec.groups * spec.kernel * spec.kernel;
        let weight = store.normal(
            format!("{name}.weight"),
            &[spec.out_ch, spec.in_ch / spec.groups, spec.kernel, spec.kernel],
            init_gain * he_std(fan_in),
        )?;
        let bias = if spec.bias {
            Some(store.constant(format!("{name}.bias"), &[spec.out_ch], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
            groups: spec.groups,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.padding, self.stride, self.groups)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// Stride-2 transposed convolution (kernel 4, padding 1) that exactly
/// doubles the spatial size.
#[derive(Debug, Clone)]
pub struct Upsample2x {
    weight: Tensor,
    bias: Tensor,
}

impl Upsample2x {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, init_gain: f64) -> Result<Self> {
        // Each output pixel of a stride-2 kernel-4 transpose conv sees 4 taps per input channel.
        let weight = store.normal(
            format!("{name}.weight"),
            &[in_ch, out_ch, 4, 4],
            init_gain * he_std(in_ch * 4),
        )?;
        let bias = store.constant(format!("{name}.bias"), &[out_ch], 0.0)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let out_ch = self.weight.dim(1)?;
        // The backward pass of a transposed conv runs a plain conv on the
        // output gradient, which hits the layout clash in `conv2d` when the
        // output is a channels == height == width cube.
        let y = if out_ch == 2 * h && out_ch == 2 * w {
            self.forward_dilated(x)?
        } else {
            x.conv_transpose2d(&self.weight, 1, 0, 2, 1)?
        };
        Ok(y.broadcast_add(&self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?)?)
    }
}

impl Upsample2x {
    /// Same result as the transposed conv: insert zeros between input
    /// pixels, pad by 2, and run a stride-1 conv with the flipped kernel.
    fn forward_dilated(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let z = x.unsqueeze(4)?;
        let x = Tensor::cat(&[&z, &z.zeros_like()?], 4)?
            .reshape((b, c, h, 2 * w))?
            .narrow(3, 0, 2 * w - 1)?;
        let z = x.unsqueeze(3)?;
        let x = Tensor::cat(&[&z, &z.zeros_like()?], 3)?
            .reshape((b, c, 2 * h, 2 * w - 1))?
            .narrow(2, 0, 2 * h - 1)?;
        let x = x.pad_with_zeros(2, 2, 2)?.pad_with_zeros(3, 2, 2)?;
        let rev = Tensor::new(&[3u32, 2, 1, 0], x.device())?;
        let k = self
            .weight
            .transpose(0, 1)?
            .contiguous()?
            .index_select(&rev, 2)?
            .index_select(&rev, 3)?;
        conv2d(&x, &k, 0, 1, 1)
    }
}

/// `Tensor::conv2d` with a guard for candle's tiled CPU kernel, which
/// mistakes a contiguous NCHW input for NHWC when channels, height and
/// width are all equal. A strided view of the same data takes the copying
/// path instead.
pub fn conv2d(x: &Tensor, kernel: &Tensor, padding: usize, stride: usize, groups: usize) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let (_, _, kh, kw) = kernel.dims4()?;
    let clash = groups == 1 && (kh, kw) != (1, 1) && c == h && c == w && x.is_contiguous();
    let x = if clash {
        x.pad_with_zeros(3, 0, 1)?.narrow(3, 0, w)?
    } else {
        x.clone()
    };
    Ok(x.conv2d(kernel, padding, stride, 1, groups)?)
}

/// Numerically stable softplus: `relu(x) + ln(1 + exp(-|x|))`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_init() {
        let dev = Device::Cpu;
        let mut a = ParamStore::new(3, DType::F32, &dev);
        let mut b = ParamStore::new(3, DType::F32, &dev);
        let ta = a.normal("w", &[4, 5], 1.0).unwrap();
        let tb = b.normal("w", &[4, 5], 1.0).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        assert!(a.normal("w", &[1], 1.0).is_err());
    }

    #[test]
    fn upsample_doubles_size() {
        let dev = Device::Cpu;
        let mut s = ParamStore::new(0, DType::F32, &dev);
        let up = Upsample2x::new(&mut s, "up", 3, 5, 1.0).unwrap();
        let x = Tensor::zeros((2, 3, 7, 7), DType::F32, &dev).unwrap();
        assert_eq!(up.forward(&x).unwrap().dims(), &[2, 5, 14, 14]);
        assert_eq!(s.param_count(), 3 * 5 * 16 + 5);
    }

    /// Direct loop convolution, stride 1, zero padding `k / 2`.
    fn conv_reference(x: &Tensor, k: &Tensor) -> Vec<f64> {
        let (b, ci, h, w) = x.dims4().unwrap();
        let (co, _, kh, kw) = k.dims4().unwrap();
        let xs = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ks = k.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        let mut out = Vec::new();
        for n in 0..b {
            for o in 0..co {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for i in 0..kh as isize {
                                for j in 0..kw as isize {
                                    let (yy, xi) = (y + i - ph, xx + j - pw);
                                    if yy < 0 || xi < 0 || yy >= h as isize || xi >= w as isize {
                                        continue;
                                    }
                                    acc += xs[((n * ci + c) * h + yy as usize) * w + xi as usize]
                                        * ks[((o * ci + c) * kh + i as usize) * kw + j as usize];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_correct_when_channels_match_spatial_size() {
        let dev = Device::Cpu;
        for (c, hw) in [(8, 8), (16, 16), (4, 8)] {
            let x = Tensor::randn(0f64, 1.0, (2, c, hw, hw), &dev).unwrap();
            let k = Tensor::randn(0f64, 1.0, (5, c, 3, 3), &dev).unwrap();
            let got = conv2d(&x, &k, 1, 1, 1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let want = conv_reference(&x, &k);
            let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-10, "c {c} hw {hw}: {worst}");
        }
    }

    #[test]
    fn dilated_upsample_matches_transposed_conv() {
        let dev = Device::Cpu;
        let mut s = ParamStore::new(2, DType::F64, &dev);
        let up = Upsample2x::new(&mut s, "up", 3, 4, 1.0).unwrap();
        let x = Tensor::randn(0f64, 1.0, (2, 3, 5, 6), &dev).unwrap();
        let a = x.conv_transpose2d(&up.weight, 1, 0, 2, 1).unwrap();
        let b = up.forward_dilated(&x).unwrap();
        assert_eq!(a.dims(), b.dims());
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn softplus_matches_definition() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[-30.0f64, -1.0, 0.0, 2.0, 40.0], &dev).unwrap();
        let y = softplus(&x).unwrap().to_vec1::<f64>().unwrap();
        for (v, x) in y.iter().zip([-30.0f64, -1.0, 0.0, 2.0, 40.0]) {
            assert!((v - (1.0 + x.exp()).ln()).abs() < 1e-12);
        }
    }
}
