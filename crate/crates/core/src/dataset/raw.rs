//! Raw (pre-alignment) recordings and the ingest step that turns them into
//! frame-indexed [`Recording`]s.
//!
//! Raw directory layout consumed by `ingest`:
//!
//! ```text
//! meta.json              {"recording_id", "path_id", "direction", "source"}
//! frames/000000.png      any resolution, one image per frame
//! frame_timestamps.csv   timestamp_ns
//! gaze.csv               timestamp_ns,x,y       (empty or NaN x/y = blink)
//! imu.csv                timestamp_ns,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::ImageReader;
use serde::{Deserialize, Serialize};

use super::{
    aggregate_imu_per_frame, align_gaze_to_frames, downscale_recording, Direction, Frame,
    GazeSample, ImuSample, Recording, Source,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub id: String,
    pub path_id: String,
    pub direction: Direction,
    pub source: Source,
    pub frame_timestamps: Vec<i64>,
    pub frames: Vec<Frame>,
    /// Gaze in raw-frame pixel coordinates.
    pub gaze_stream: Vec<GazeSample>,
    pub imu_stream: Vec<ImuSample>,
}

/// Aligns gaze and IMU to the frame clock, then resizes to `target`
/// (`(height, width)`).
pub fn ingest_raw(raw: &RawRecording, target: (usize, usize)) -> Result<Recording> {
    if raw.frames.len() != raw.frame_timestamps.len() {
        return Err(Error::LengthMismatch {
            what: format!("frames of raw recording {}", raw.id),
            expected: raw.frame_timestamps.len(),
            actual: raw.frames.len(),
        });
    }
    let gaze = align_gaze_to_frames(&raw.gaze_stream, &raw.frame_timestamps)?;
    let imu = aggregate_imu_per_frame(&raw.imu_stream, &raw.frame_timestamps)?;
    let (h, w) = raw
        .frames
        .first()
        .map(|f| (f.height() as f32, f.width() as f32))
        .ok_or(Error::NoFrames)?;
    // Samples outside the sensor frame are tracking failures.
    let gaze = gaze
        .into_iter()
        .map(|g| g.filter(|g| g.x >= 0.0 && g.y >= 0.0 && g.x < w && g.y < h))
        .collect();
    let full = Recording {
        id: raw.id.clone(),
        path_id: raw.path_id.clone(),
        direction: raw.direction,
        source: raw.source,
        frame_timestamps: raw.frame_timestamps.clone(),
        frames: raw.frames.clone(),
        gaze,
        imu,
    };
    full.validate()?;
    downscale_recording(&full, target)
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMeta {
    recording_id: String,
    path_id: String,
    direction: Direction,
    #[serde(default = "real_source")]
    source: Source,
}

fn real_source() -> Source {
    Source::Real
}

#[derive(Debug, Serialize, Deserialize)]
struct GazeRow {
    timestamp_ns: i64,
    x: Option<f64>,
    y: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImuRow {
    timestamp_ns: i64,
    accel_x: f64,
    accel_y: f64,
    accel_z: f64,
    gyro_x: f64,
    gyro_y: f64,
    gyro_z: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TimestampRow {
    timestamp_ns: i64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Corrupt {
        what: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))
}

fn raw_frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("frames").join(format!("{i:06}.png"))
}

pub fn save_raw_recording(raw: &RawRecording, dir: &Path) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let meta = RawMeta {
        recording_id: raw.id.clone(),
        path_id: raw.path_id.clone(),
        direction: raw.direction,
        source: raw.source,
    };
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    for (i, f) in raw.frames.iter().enumerate() {
        let path = raw_frame_path(dir, i);
        f.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    write_csv(
        &dir.join("frame_timestamps.csv"),
        raw.frame_timestamps
            .iter()
            .map(|&timestamp_ns| TimestampRow { timestamp_ns }),
    )?;
    write_csv(
        &dir.join("gaze.csv"),
        raw.gaze_stream.iter().map(|g| GazeRow {
            timestamp_ns: g.timestamp_ns,
            x: g.x.is_finite().then_some(g.x),
            y: g.y.is_finite().then_some(g.y),
        }),
    )?;
    write_csv(
        &dir.join("imu.csv"),
        raw.imu_stream.iter().map(|s| ImuRow {
            timestamp_ns: s.timestamp_ns,
            accel_x: s.accel[0],
            accel_y: s.accel[1],
            accel_z: s.accel[2],
            gyro_x: s.gyro[0],
            gyro_y: s.gyro[1],
            gyro_z: s.gyro[2],
        }),
    )
}

pub fn load_raw_recording(dir: &Path) -> Result<RawRecording> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RawMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    let frame_timestamps: Vec<i64> = read_csv::<TimestampRow>(&dir.join("frame_timestamps.csv"))?
        .into_iter()
        .map(|r| r.timestamp_ns)
        .collect();
    let mut frames = Vec::with_capacity(frame_timestamps.len());
    for i in 0..frame_timestamps.len() {
        let path = raw_frame_path(dir, i);
        let img = ImageReader::open(&path)
            .map_err(|e| Error::io(&path, e))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .into_rgb8();
        frames.push(Arc::new(img));
    }
    let gaze_stream = read_csv::<GazeRow>(&dir.join("gaze.csv"))?
        .into_iter()
        .map(|r| GazeSample {
            timestamp_ns: r.timestamp_ns,
            x: r.x.unwrap_or(f64::NAN),
            y: r.y.unwrap_or(f64::NAN),
        })
        .collect();
    let imu_path = dir.join("imu.csv");
    let imu_stream = if imu_path.exists() {
        read_csv::<ImuRow>(&imu_path)?
            .into_iter()
            .map(|r| ImuSample {
                timestamp_ns: r.timestamp_ns,
                accel: [r.accel_x, r.accel_y, r.accel_z],
                gyro: [r.gyro_x, r.gyro_y, r.gyro_z],
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RawRecording {
        id: meta.recording_id,
        path_id: meta.path_id,
        direction: meta.direction,
        source: meta.source,
        frame_timestamps,
        frames,
        gaze_stream,
        imu_stream,
    })
}
