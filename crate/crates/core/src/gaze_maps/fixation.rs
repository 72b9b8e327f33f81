use ndarray::Array2;

use super::gaussian::blur_map;
use crate::error::{Error, Result};

/// Binary fixation map plus the fixation list it was built from.
///
/// `coords` keeps every in-bounds fixation, duplicates included, so
/// multiplicity-weighted metrics (NSS, KLD) can use it; `grid` collapses
/// duplicates to a single 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationMap {
    grid: Array2<f64>,
    coords: Vec<(f64, f64)>,
    /// `(row, col)` of each entry in `coords`.
    pixels: Vec<(usize, usize)>,
}

/// Round half away from zero, then clamp the `[W - 0.5, W)` sliver of
/// valid gaze coordinates onto the last pixel.
fn pixel_index(v: f64, len: usize) -> usize {
    (v.round() as usize).min(len - 1)
}

impl FixationMap {
    /// Builds the map from `(x, y)` pixel coordinates. Points outside
    /// `[0, W) x [0, H)` are dropped; at least one must remain.
    pub fn from_points(points: &[(f64, f64)], height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::NoFixations { height, width });
        }
        let mut grid = Array2::zeros((height, width));
        let mut coords = Vec::new();
        let mut pixels = Vec::new();
        for &(x, y) in points {
            let inside = x.is_finite()
                && y.is_finite()
                && x >= 0.0
                && y >= 0.0
                && x < width as f64
                && y < height as f64;
            if !inside {
                continue;
            }
            let (r, c) = (pixel_index(y, height), pixel_index(x, width));
            grid[[r, c]] = 1.0;
            coords.push((x, y));
            pixels.push((r, c));
        }
        if coords.is_empty() {
            return Err(Error::NoFixations { height, width });
        }
        Ok(Self {
            grid,
            coords,
            pixels,
        })
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }

    /// N: number of fixations including duplicates.
    pub fn fixation_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    /// Fixation counts per pixel divided by N (sums to 1).
    pub fn multiplicity_pmf(&self) -> Array2<f64> {
        let mut q = Array2::zeros(self.grid.dim());
        let n = self.fixation_count() as f64;
        for &(r, c) in &self.pixels {
            q[[r, c]] += 1.0 / n;
        }
        q
    }
}

/// A nonnegative map normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    grid: Array2<f64>,
}

impl DensityMap {
    /// Normalizes `grid` by its sum. Fails on negative or non-finite
    /// entries and on an all-zero grid.
    pub fn from_grid(grid: Array2<f64>) -> Result<Self> {
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density grid".into()));
        }
        if grid.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("density grid has negative entries"));
        }
        let s = grid.sum();
        if s <= 0.0 {
            return Err(Error::EmptyPrediction);
        }
        Ok(Self { grid: grid / s })
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Array2<f64> {
        self.grid
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }
}

/// Gaussian-blurred fixation map, renormalized to sum 1.
pub fn density_from_fixations(fix: &FixationMap, sigma: f64) -> Result<DensityMap> {
    DensityMap::from_grid(blur_map(fix.grid(), sigma)?)
}

/// Default ground-truth blur: one sixteenth of the frame height.
pub fn default_gt_sigma(height: usize) -> f64 {
    height as f64 / 16.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze_maps::gaussian::reflect_index;

    fn argmax(m: &Array2<f64>) -> (usize, usize) {
        let mut best = ((0, 0), f64::MIN);
        for ((r, c), &v) in m.indexed_iter() {
            if v > best.1 {
                best = ((r, c), v);
            }
        }
        best.0
    }

    #[test]
    fn point_rounds_half_away_from_zero() {
        let f = FixationMap::from_points(&[(2.4, 3.6)], 8, 8).unwrap();
        assert_eq!(f.grid().sum(), 1.0);
        assert_eq!(f.grid()[[4, 2]], 1.0);
        let f = FixationMap::from_points(&[(2.5, 0.5)], 8, 8).unwrap();
        assert_eq!(f.pixels(), &[(1, 3)]);
    }

    #[test]
    fn duplicates_collapse_in_grid_only() {
        let f = FixationMap::from_points(&[(3.0, 3.0), (3.0, 3.0)], 8, 8).unwrap();
        assert_eq!(f.fixation_count(), 2);
        assert_eq!(f.grid().sum(), 1.0);
        assert_eq!(f.coords().len(), 2);
        assert_eq!(f.multiplicity_pmf()[[3, 3]], 1.0);
    }

    #[test]
    fn out_of_bounds_only_is_an_error() {
        let err = FixationMap::from_points(&[(8.0, 1.0), (-0.2, 2.0)], 8, 8).unwrap_err();
        assert!(err.to_string().contains("no fixations"));
        // The last half pixel of valid coordinates maps onto the last pixel.
        let f = FixationMap::from_points(&[(7.8, 7.5)], 8, 8).unwrap();
        assert_eq!(f.pixels(), &[(7, 7)]);
    }

    #[test]
    fn single_fixation_density_peaks_on_it() {
        let f = FixationMap::from_points(&[(20.0, 12.0)], 32, 32).unwrap();
        let d = density_from_fixations(&f, 3.0).unwrap();
        assert!((d.grid().sum() - 1.0).abs() < 1e-9);
        assert_eq!(argmax(d.grid()), (12, 20));
    }

    #[test]
    fn distant_fixations_give_two_peaks() {
        let f = FixationMap::from_points(&[(8.0, 8.0), (40.0, 40.0)], 48, 48).unwrap();
        let d = density_from_fixations(&f, 2.0).unwrap();
        let g = d.grid();
        for &(r, c) in &[(8usize, 8usize), (40, 40)] {
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr != 0 || dc != 0 {
                        let (rr, cc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
                        assert!(g[[r, c]] > g[[rr, cc]]);
                    }
                }
            }
        }
    }

    #[test]
    fn density_matches_explicit_truncated_convolution() {
        // Oracle: direct double loop over the 2-D truncated kernel.
        let (h, w, sigma) = (64usize, 64usize, 8.0f64);
        let (fr, fc) = (27usize, 38usize);
        let f = FixationMap::from_points(&[(fc as f64, fr as f64)], h, w).unwrap();
        let d = density_from_fixations(&f, sigma).unwrap();
        let radius = (4.0 * sigma).ceil() as isize;
        let mut oracle = Array2::<f64>::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        let sr = reflect_index(r as isize + dr, h);
                        let sc = reflect_index(c as isize + dc, w);
                        if (sr, sc) == (fr, fc) {
                            acc += (-0.5 * ((dr * dr + dc * dc) as f64) / (sigma * sigma)).exp();
                        }
                    }
                }
                oracle[[r, c]] = acc;
            }
        }
        let s = oracle.sum();
        for (a, b) in d.grid().iter().zip(oracle.iter()) {
            assert!((a - b / s).abs() < 1e-6);
        }
    }

    #[test]
    fn non_positive_sigma_is_rejected() {
        let f = FixationMap::from_points(&[(1.0, 1.0)], 4, 4).unwrap();
        assert!(density_from_fixations(&f, 0.0).is_err());
    }

    #[test]
    fn ground_truth_sigma_default() {
        assert_eq!(default_gt_sigma(224), 14.0);
    }
}
