//! Ground-truth fixation maps, Gaussian density maps and the center prior.

mod center_prior;
mod fixation;
mod gaussian;

pub use center_prior::{fit_center_prior, CenterPrior, CenterPriorParams, COVARIANCE_RIDGE};
pub use fixation::{default_gt_sigma, density_from_fixations, DensityMap, FixationMap};
pub use gaussian::{blur_map, gaussian_kernel_1d, reflect_index, TRUNCATE_SIGMAS};
