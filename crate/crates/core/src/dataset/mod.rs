//! Recordings, sensor alignment, clip sampling, path-level splits and the
//! synthetic recording generator.

mod align;
mod clips;
mod raw;
mod resize;
mod split;
mod storage;
mod synth;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use align::{aggregate_imu_per_frame, align_gaze_to_frames};
pub use clips::{sample_clips, ClipConfig, ClipSample};
pub use raw::{ingest_raw, load_raw_recording, save_raw_recording, RawRecording};
pub use resize::{downscale_frames, downscale_recording, rescale_gaze};
pub use split::{make_split, SplitSpec};
pub use storage::{list_recordings, load_recording, save_recording, FrameFormat, MANIFEST_VERSION};
pub use synth::{generate_raw_streams, generate_synthetic_recording, SynthSpec};

/// Frames are shared between a recording and the clips sampled from it.
pub type Frame = Arc<RgbImage>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(Error::invalid(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// Gaze position in pixel coordinates of the stored frame resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazePoint {
    pub x: f32,
    pub y: f32,
}

impl GazePoint {
    pub fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }
}

/// One timestamped gaze sample from the eye tracker. Blinks and tracking
/// losses are encoded as non-finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub timestamp_ns: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp_ns: i64,
    /// m/s²
    pub accel: [f64; 3],
    /// rad/s
    pub gyro: [f64; 3],
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.accel.iter().chain(self.gyro.iter()).all(|v| v.is_finite())
    }
}

/// Per-frame IMU aggregate: accel xyz then gyro xyz.
pub type ImuFrame = [f32; 6];

/// One traversal of a path: frames with per-frame gaze and IMU.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub path_id: String,
    pub direction: Direction,
    pub source: Source,
    pub frame_timestamps: Vec<i64>,
    pub frames: Vec<Frame>,
    /// `None` marks frames without a valid gaze sample.
    pub gaze: Vec<Option<GazePoint>>,
    /// `None` marks frames without IMU data.
    pub imu: Vec<Option<ImuFrame>>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of the frames; `(0, 0)` for an empty recording.
    pub fn resolution(&self) -> (usize, usize) {
        self.frames
            .first()
            .map(|f| (f.height() as usize, f.width() as usize))
            .unwrap_or((0, 0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        for (what, len) in [
            ("frame_timestamps", self.frame_timestamps.len()),
            ("gaze", self.gaze.len()),
            ("imu", self.imu.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    what: format!("{} of recording {}", what, self.id),
                    expected: n,
                    actual: len,
                });
            }
        }
        if self.frame_timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedTimestamps("frame_timestamps"));
        }
        let (h, w) = self.resolution();
        if self
            .frames
            .iter()
            .any(|f| f.height() as usize != h || f.width() as usize != w)
        {
            return Err(Error::ShapeMismatch(format!(
                "frames of recording {} do not share one resolution",
                self.id
            )));
        }
        for (i, g) in self.gaze.iter().enumerate() {
            if let Some(g) = g {
                let inside = g.x >= 0.0 && g.y >= 0.0 && (g.x as f64) < w as f64 && (g.y as f64) < h as f64;
                if !inside {
                    return Err(Error::invalid(format!(
                        "gaze ({}, {}) at frame {i} lies outside the {w}x{h} frame",
                        g.x, g.y
                    )));
                }
            }
        }
        if self.imu.iter().flatten().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(format!("imu of recording {}", self.id)));
        }
        Ok(())
    }
}
