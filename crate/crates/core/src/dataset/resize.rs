use std::sync::Arc;

use image::imageops::{self, FilterType};

use super::{Frame, GazePoint, Recording};
use crate::error::{Error, Result};

/// Largest `f32` strictly below `limit` (for positive `limit`).
fn below(limit: usize) -> f32 {
    let l = limit as f32;
    f32::from_bits(l.to_bits() - 1)
}

fn check_target(src: (usize, usize), target: (usize, usize)) -> Result<()> {
    let (h, w) = target;
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("zero-sized resize target {h}x{w}")));
    }
    if src.0 < h || src.1 < w {
        return Err(Error::invalid(format!(
            "cannot downscale {}x{} frames to larger target {h}x{w}",
            src.0, src.1
        )));
    }
    Ok(())
}

/// Bilinearly resizes every frame to `target = (height, width)`.
pub fn downscale_frames(frames: &[Frame], target: (usize, usize)) -> Result<Vec<Frame>> {
    let (h, w) = target;
    frames
        .iter()
        .map(|f| {
            let src = (f.height() as usize, f.width() as usize);
            check_target(src, target)?;
            if src == target {
                return Ok(Arc::clone(f));
            }
            Ok(Arc::new(imageops::resize(
                f.as_ref(),
                w as u32,
                h as u32,
                FilterType::Triangle,
            )))
        })
        .collect()
}

/// Maps a gaze point from a `src` resolution into `target`, clamped into
/// `[0, W) x [0, H)`.
pub fn rescale_gaze(g: GazePoint, src: (usize, usize), target: (usize, usize)) -> GazePoint {
    let sx = target.1 as f64 / src.1 as f64;
    let sy = target.0 as f64 / src.0 as f64;
    let x = ((g.x as f64 * sx) as f32).clamp(0.0, below(target.1));
    let y = ((g.y as f64 * sy) as f32).clamp(0.0, below(target.0));
    GazePoint::new(x, y)
}

/// Resizes a recording's frames and rescales its gaze accordingly.
pub fn downscale_recording(rec: &Recording, target: (usize, usize)) -> Result<Recording> {
    let src = rec.resolution();
    if rec.is_empty() {
        return Err(Error::NoFrames);
    }
    check_target(src, target)?;
    let frames = downscale_frames(&rec.frames, target)?;
    let gaze = rec
        .gaze
        .iter()
        .map(|g| g.map(|g| rescale_gaze(g, src, target)))
        .collect();
    Ok(Recording {
        frames,
        gaze,
        ..rec.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn full_resolution_center_maps_to_target_center() {
        let g = rescale_gaze(GazePoint::new(704.0, 704.0), (1408, 1408), (224, 224));
        assert_eq!(g, GazePoint::new(112.0, 112.0));
    }

    #[test]
    fn edge_gaze_is_scaled_and_kept_inside() {
        let g = rescale_gaze(GazePoint::new(1407.0, 0.0), (1408, 1408), (224, 224));
        assert!((g.x - 223.840_9).abs() < 1e-3, "{}", g.x);
        assert!(g.x < 224.0);
        assert_eq!(g.y, 0.0);
        let g = rescale_gaze(GazePoint::new(1407.999, 2000.0), (1408, 1408), (224, 224));
        assert!(g.x < 224.0 && g.y < 224.0);
    }

    #[test]
    fn same_size_is_identity() {
        let img = RgbImage::from_fn(5, 4, |x, y| Rgb([x as u8, y as u8, 7]));
        let out = downscale_frames(&[Arc::new(img.clone())], (4, 5)).unwrap();
        assert_eq!(*out[0], img);
    }

    #[test]
    fn downscale_produces_target_size() {
        let img = RgbImage::from_pixel(32, 32, Rgb([200, 100, 50]));
        let out = downscale_frames(&[Arc::new(img)], (8, 8)).unwrap();
        assert_eq!(out[0].dimensions(), (8, 8));
        assert_eq!(out[0].get_pixel(3, 3), &Rgb([200, 100, 50]));
    }

    #[test]
    fn zero_target_is_rejected() {
        let img = Arc::new(RgbImage::new(4, 4));
        assert!(downscale_frames(std::slice::from_ref(&img), (0, 4)).is_err());
        assert!(downscale_frames(&[img], (8, 8)).is_err());
    }
}
