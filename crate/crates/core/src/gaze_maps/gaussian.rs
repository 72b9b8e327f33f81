use ndarray::Array2;

use crate::error::{Error, Result};

/// Kernels are truncated at this many standard deviations.
pub const TRUNCATE_SIGMAS: f64 = 4.0;

/// Sampled 1-D Gaussian of radius `ceil(4 sigma)`, normalized to sum 1.
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (TRUNCATE_SIGMAS * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Half-sample symmetric reflection (`c b a | a b c | c b a`), which keeps
/// the total mass of a normalized convolution unchanged. Handles offsets
/// of any size by folding repeatedly.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_axis(input: &Array2<f64>, kernel: &[f64], axis: usize) -> Array2<f64> {
    let (h, w) = input.dim();
    let radius = (kernel.len() / 2) as isize;
    let mut out = Array2::<f64>::zeros((h, w));
    let len = if axis == 0 { h } else { w };
    for r in 0..h {
        for c in 0..w {
            let pos = if axis == 0 { r } else { c } as isize;
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let src = reflect_index(pos + k as isize - radius, len);
                acc += kv
                    * if axis == 0 {
                        input[[src, c]]
                    } else {
                        input[[r, src]]
                    };
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Separable Gaussian convolution with reflect-padded borders. The output
/// sum equals the input sum up to rounding.
pub fn blur_map(map: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("blur input".into()));
    }
    let kernel = gaussian_kernel_1d(sigma)?;
    let rows = convolve_axis(map, &kernel, 1);
    Ok(convolve_axis(&rows, &kernel, 0))
}
