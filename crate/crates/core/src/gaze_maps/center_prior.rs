use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::fixation::DensityMap;
use crate::error::{Error, Result};

/// Diagonal ridge (px²) added to the fitted covariance.
pub const COVARIANCE_RIDGE: f64 = 1.0;

/// Gaussian center-bias model rasterized onto the frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterPrior {
    mean: [f64; 2],
    covariance: [[f64; 2]; 2],
    grid: DensityMap,
}

/// Serializable parameters of a [`CenterPrior`]; the grid is re-rasterized
/// on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterPriorParams {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub height: usize,
    pub width: usize,
}

fn inverse(cov: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let [[a, b], [c, d]] = *cov;
    let det = a * d - b * c;
    if !(det > 0.0 && a > 0.0 && det.is_finite()) || (b - c).abs() > 1e-9 * (a.abs() + d.abs()) {
        return Err(Error::DegenerateCovariance(format!(
            "covariance {cov:?} is not symmetric positive definite"
        )));
    }
    Ok([[d / det, -b / det], [-c / det, a / det]])
}

impl CenterPrior {
    pub fn new(mean: [f64; 2], covariance: [[f64; 2]; 2], height: usize, width: usize) -> Result<Self> {
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("center prior mean".into()));
        }
        let inv = inverse(&covariance)?;
        let grid = Array2::from_shape_fn((height, width), |(r, c)| {
            let dx = c as f64 - mean[0];
            let dy = r as f64 - mean[1];
            let q = inv[0][0] * dx * dx + (inv[0][1] + inv[1][0]) * dx * dy + inv[1][1] * dy * dy;
            (-0.5 * q).exp()
        });
        if grid.sum() <= 0.0 {
            return Err(Error::DegenerateCovariance(format!(
                "prior with mean {mean:?} has no mass on the {height}x{width} grid"
            )));
        }
        Ok(Self {
            mean,
            covariance,
            grid: DensityMap::from_grid(grid)?,
        })
    }

    pub fn from_params(p: &CenterPriorParams) -> Result<Self> {
        Self::new(p.mean, p.covariance, p.height, p.width)
    }

    pub fn params(&self) -> CenterPriorParams {
        let (height, width) = self.grid.dim();
        CenterPriorParams {
            mean: self.mean,
            covariance: self.covariance,
            height,
            width,
        }
    }

    /// Mean `(x, y)` in pixels.
    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        self.covariance
    }

    pub fn grid(&self) -> &DensityMap {
        &self.grid
    }

    /// Unnormalized Gaussian value `exp(-q/2)` at `(x, y)`, on the same
    /// scale as the grid before normalization.
    pub fn density_at(&self, x: f64, y: f64) -> f64 {
        let inv = inverse(&self.covariance).expect("validated at construction");
        let (dx, dy) = (x - self.mean[0], y - self.mean[1]);
        let q = inv[0][0] * dx * dx + (inv[0][1] + inv[1][0]) * dx * dy + inv[1][1] * dy * dy;
        (-0.5 * q).exp()
    }

    /// Same Gaussian expressed in another resolution.
    pub fn rescaled(&self, height: usize, width: usize) -> Result<Self> {
        let (h, w) = self.grid.dim();
        let sx = width as f64 / w as f64;
        let sy = height as f64 / h as f64;
        let c = self.covariance;
        Self::new(
            [self.mean[0] * sx, self.mean[1] * sy],
            [[c[0][0] * sx * sx, c[0][1] * sx * sy], [c[1][0] * sx * sy, c[1][1] * sy * sy]],
            height,
            width,
        )
    }
}

/// Maximum-likelihood Gaussian over training gaze `(x, y)` points, with
/// [`COVARIANCE_RIDGE`] on the diagonal, rasterized onto `height x width`.
pub fn fit_center_prior(points: &[(f64, f64)], height: usize, width: usize) -> Result<CenterPrior> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "center prior needs at least 2 gaze points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("center prior gaze points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let cov = [
        [sxx / n + COVARIANCE_RIDGE, sxy / n],
        [sxy / n, syy / n + COVARIANCE_RIDGE],
    ];
    CenterPrior::new([mx, my], cov, height, width)
}
