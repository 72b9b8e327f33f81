//! On-disk recording layout:
//!
//! ```text
//! <recording_id>/manifest.json
//! <recording_id>/frames/000000.jpg   (or .png in lossless mode)
//! <recording_id>/gaze.f32            [T, 2], NaN rows mark missing gaze
//! <recording_id>/imu.f32             [T, 6], NaN rows mark missing IMU
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::jpeg::JpegEncoder;
use image::ImageReader;
use serde::{Deserialize, Serialize};

use super::{Direction, GazePoint, ImuFrame, Recording, Source};
use crate::container::F32Array;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const JPEG_QUALITY: u8 = 95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    Jpg,
    Png,
}

impl FrameFormat {
    fn extension(self) -> &'static str {
        match self {
            FrameFormat::Jpg => "jpg",
            FrameFormat::Png => "png",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    recording_id: String,
    path_id: String,
    direction: Direction,
    source: Source,
    width: usize,
    height: usize,
    frame_count: usize,
    frame_format: FrameFormat,
    frame_timestamps_ns: Vec<i64>,
}

fn frame_path(dir: &Path, index: usize, format: FrameFormat) -> PathBuf {
    dir.join("frames")
        .join(format!("{index:06}.{}", format.extension()))
}

/// Writes the recording under `dir` (created if missing).
pub fn save_recording(rec: &Recording, dir: &Path, format: FrameFormat) -> Result<()> {
    rec.validate()?;
    let (height, width) = rec.resolution();
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        recording_id: rec.id.clone(),
        path_id: rec.path_id.clone(),
        direction: rec.direction,
        source: rec.source,
        width,
        height,
        frame_count: rec.len(),
        frame_format: format,
        frame_timestamps_ns: rec.frame_timestamps.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    for (i, frame) in rec.frames.iter().enumerate() {
        let path = frame_path(dir, i, format);
        let result = match format {
            FrameFormat::Png => frame.save(&path),
            FrameFormat::Jpg => {
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                JpegEncoder::new_with_quality(BufWriter::new(file), JPEG_QUALITY)
                    .encode_image(frame.as_ref())
            }
        };
        result.map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
    }

    let gaze: Vec<f32> = rec
        .gaze
        .iter()
        .flat_map(|g| match g {
            Some(g) => [g.x, g.y],
            None => [f32::NAN; 2],
        })
        .collect();
    F32Array::new(vec![rec.len(), 2], gaze)?.save(&dir.join("gaze.f32"))?;

    let imu: Vec<f32> = rec
        .imu
        .iter()
        .flat_map(|v| v.unwrap_or([f32::NAN; 6]))
        .collect();
    F32Array::new(vec![rec.len(), 6], imu)?.save(&dir.join("imu.f32"))?;
    Ok(())
}

fn load_table(path: &Path, frame_count: usize, cols: usize) -> Result<Vec<f32>> {
    let arr = F32Array::load(path)?;
    if arr.dims().len() != 2 || arr.dims()[1] != cols {
        return Err(Error::Corrupt {
            what: path.display().to_string(),
            reason: format!("expected [T, {cols}] array, found dims {:?}", arr.dims()),
        });
    }
    if arr.dims()[0] != frame_count {
        return Err(Error::LengthMismatch {
            what: path.display().to_string(),
            expected: frame_count,
            actual: arr.dims()[0],
        });
    }
    Ok(arr.into_data())
}

pub fn load_recording(dir: &Path) -> Result<Recording> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: manifest_path.clone(),
            source,
        })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt {
            what: manifest_path.display().to_string(),
            reason: "missing format_version".into(),
        })?;
    if version != MANIFEST_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            what: "recording manifest",
            found: version as u32,
            supported: MANIFEST_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(value).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    if m.frame_timestamps_ns.len() != m.frame_count {
        return Err(Error::LengthMismatch {
            what: "manifest frame_timestamps_ns".into(),
            expected: m.frame_count,
            actual: m.frame_timestamps_ns.len(),
        });
    }

    let gaze = load_table(&dir.join("gaze.f32"), m.frame_count, 2)?
        .chunks_exact(2)
        .map(|c| (c[0].is_finite() && c[1].is_finite()).then(|| GazePoint::new(c[0], c[1])))
        .collect();
    let imu = load_table(&dir.join("imu.f32"), m.frame_count, 6)?
        .chunks_exact(6)
        .map(|c| {
            c.iter()
                .all(|v| v.is_finite())
                .then(|| -> ImuFrame { [c[0], c[1], c[2], c[3], c[4], c[5]] })
        })
        .collect();

    let mut frames = Vec::with_capacity(m.frame_count);
    for i in 0..m.frame_count {
        let path = frame_path(dir, i, m.frame_format);
        let img = ImageReader::open(&path)
            .map_err(|e| Error::io(&path, e))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .into_rgb8();
        if img.width() as usize != m.width || img.height() as usize != m.height {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}x{}, manifest says {}x{}",
                path.display(),
                img.width(),
                img.height(),
                m.width,
                m.height
            )));
        }
        frames.push(Arc::new(img));
    }
    let extra = frame_path(dir, m.frame_count, m.frame_format);
    if extra.exists() {
        return Err(Error::LengthMismatch {
            what: format!("frames in {}", dir.display()),
            expected: m.frame_count,
            actual: m.frame_count + 1,
        });
    }

    let rec = Recording {
        id: m.recording_id,
        path_id: m.path_id,
        direction: m.direction,
        source: m.source,
        frame_timestamps: m.frame_timestamps_ns,
        frames,
        gaze,
        imu,
    };
    rec.validate()?;
    Ok(rec)
}

/// Recording directories (those holding a `manifest.json`) directly below
/// `root`, sorted by name.
pub fn list_recordings(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
