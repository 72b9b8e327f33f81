//! PNG output: prediction overlays, tile montages and loss curves.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::dataset::GazePoint;
use crate::error::{Error, Result};

pub const MARKER_COLOR: Rgb<u8> = Rgb([255, 0, 0]);

/// Piecewise-linear approximation of the "jet" colormap on `[0, 1]`.
pub fn heat_color(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0) * 255.0;
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Blends the max-normalized heatmap over the frame with per-pixel opacity
/// `alpha * value`, then draws a red "+" at the gaze pixel when present.
pub fn overlay(frame: &RgbImage, map: &Array2<f64>, gaze: Option<GazePoint>, alpha: f64) -> Result<RgbImage> {
    let (h, w) = map.dim();
    if (frame.height() as usize, frame.width() as usize) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "map {h}x{w} vs frame {}x{}",
            frame.height(),
            frame.width()
        )));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("overlay map".into()));
    }
    let peak = map.iter().copied().fold(0.0, f64::max);
    let mut out = frame.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let v = if peak > 0.0 { map[[y as usize, x as usize]] / peak } else { 0.0 };
        let a = (alpha * v).clamp(0.0, 1.0);
        let heat = heat_color(v);
        for (c, hc) in px.0.iter_mut().zip(heat) {
            *c = ((1.0 - a) * *c as f64 + a * hc).round() as u8;
        }
    }
    if let Some(g) = gaze {
        draw_plus(&mut out, g, (w.max(h) / 32).max(2));
    }
    Ok(out)
}

/// Gaze pixel `(col, row)` under the same rounding as fixation maps, or
/// `None` outside the frame.
pub fn gaze_pixel(g: GazePoint, width: u32, height: u32) -> Option<(u32, u32)> {
    let (x, y) = (g.x as f64, g.y as f64);
    if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
        return None;
    }
    let col = (x.round() as u32).min(width - 1);
    let row = (y.round() as u32).min(height - 1);
    Some((col, row))
}

fn draw_plus(img: &mut RgbImage, g: GazePoint, arm: usize) {
    let Some((cx, cy)) = gaze_pixel(g, img.width(), img.height()) else {
        return;
    };
    let arm = arm as i64;
    for d in -arm..=arm {
        for (x, y) in [(cx as i64 + d, cy as i64), (cx as i64, cy as i64 + d)] {
            if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put_pixel(x as u32, y as u32, MARKER_COLOR);
            }
        }
    }
}

/// Arranges `rows * cols` equally sized tiles in row-major order.
pub fn montage(tiles: &[RgbImage], rows: usize, cols: usize) -> Result<RgbImage> {
    if rows == 0 || cols == 0 || tiles.len() != rows * cols {
        return Err(Error::invalid(format!(
            "{} tiles do not fill a {rows}x{cols} grid",
            tiles.len()
        )));
    }
    let (tw, th) = tiles[0].dimensions();
    if let Some(t) = tiles.iter().find(|t| t.dimensions() != (tw, th)) {
        return Err(Error::ShapeMismatch(format!(
            "tile {}x{} differs from {tw}x{th}",
            t.width(),
            t.height()
        )));
    }
    let mut out = RgbImage::new(tw * cols as u32, th * rows as u32);
    for (i, tile) in tiles.iter().enumerate() {
        let (r, c) = ((i / cols) as u32, (i % cols) as u32);
        image::imageops::replace(&mut out, tile, (c * tw) as i64, (r * th) as i64);
    }
    Ok(out)
}

/// Line plot of a loss series on a white canvas with plain axes. The y
/// range spans the finite values; non-finite points are skipped.
pub fn loss_curve(values: &[f64], width: u32, height: u32) -> Result<RgbImage> {
    if width < 32 || height < 32 {
        return Err(Error::invalid("loss plot needs at least 32x32 pixels"));
    }
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 12u32;
    let axis = Rgb([0, 0, 0]);
    for x in margin..width - margin {
        img.put_pixel(x, height - margin, axis);
    }
    for y in margin..=height - margin {
        img.put_pixel(margin, y, axis);
    }
    let finite: Vec<(usize, f64)> = values.iter().copied().enumerate().filter(|(_, v)| v.is_finite()).collect();
    if finite.is_empty() {
        return Ok(img);
    }
    let lo = finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = ((width - 2 * margin - 1) as f64, (height - 2 * margin - 1) as f64);
    let n = values.len().max(2) as f64 - 1.0;
    let to_px = |i: usize, v: f64| {
        let x = margin as f64 + 1.0 + pw * i as f64 / n;
        let y = (height - margin) as f64 - 1.0 - ph * (v - lo) / span;
        (x, y)
    };
    let line = Rgb([31, 119, 180]);
    let mut prev = to_px(finite[0].0, finite[0].1);
    for &(i, v) in &finite {
        let p = to_px(i, v);
        let steps = ((p.0 - prev.0).abs().max((p.1 - prev.1).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = (prev.0 + t * (p.0 - prev.0), prev.1 + t * (p.1 - prev.1));
            img.put_pixel(x.round() as u32, y.round() as u32, line);
        }
        prev = p;
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
