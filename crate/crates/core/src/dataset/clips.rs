use serde::{Deserialize, Serialize};

use super::{Frame, GazePoint, Recording};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Frames spanned by one window.
    pub window: usize,
    /// Frames sampled uniformly from each window.
    pub clip_len: usize,
    /// Offset between consecutive window starts.
    pub hop: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            window: 64,
            clip_len: 16,
            hop: 16,
        }
    }
}

impl ClipConfig {
    pub fn stride(&self) -> Result<usize> {
        if self.clip_len == 0 || self.window == 0 || self.hop == 0 {
            return Err(Error::invalid(format!("degenerate clip config {self:?}")));
        }
        if !self.window.is_multiple_of(self.clip_len) {
            return Err(Error::invalid(format!(
                "window {} is not divisible by clip length {}",
                self.window, self.clip_len
            )));
        }
        Ok(self.window / self.clip_len)
    }

    /// Frame offsets inside a window, relative to the window start.
    pub fn relative_indices(&self) -> Result<Vec<usize>> {
        let s = self.stride()?;
        Ok((0..self.clip_len).map(|i| i * s).collect())
    }
}

/// A model input: `clip_len` frames from one window, predicting gaze on
/// the query frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub frames: Vec<Frame>,
    /// Absolute frame indices into the source recording.
    pub frame_indices: Vec<usize>,
    pub query_index: usize,
    pub gaze_target: GazePoint,
    pub source_recording: String,
    pub path_id: String,
    pub window_start: usize,
}

impl ClipSample {
    pub fn query_frame(&self) -> &Frame {
        &self.frames[self.query_index]
    }

    /// Stable identifier: `<recording>@<window_start>`.
    pub fn id(&self) -> String {
        format!("{}@{}", self.source_recording, self.window_start)
    }

    pub fn resolution(&self) -> (usize, usize) {
        let f = &self.frames[0];
        (f.height() as usize, f.width() as usize)
    }
}

/// Slides a window over the recording and samples `clip_len` frames at a
/// constant stride from each. The last sampled frame is the query; windows
/// whose query frame has no gaze are dropped.
pub fn sample_clips(rec: &Recording, cfg: &ClipConfig) -> Result<Vec<ClipSample>> {
    let rel = cfg.relative_indices()?;
    if rec.len() < cfg.window {
        log::warn!(
            "recording {} has {} frames, shorter than the {}-frame window; no clips",
            rec.id,
            rec.len(),
            cfg.window
        );
        return Ok(Vec::new());
    }
    let query_index = cfg.clip_len - 1;
    let mut clips = Vec::new();
    let mut start = 0;
    while start + cfg.window <= rec.len() {
        let indices: Vec<usize> = rel.iter().map(|r| start + r).collect();
        if let Some(gaze) = rec.gaze[indices[query_index]] {
            clips.push(ClipSample {
                frames: indices.iter().map(|&i| rec.frames[i].clone()).collect(),
                frame_indices: indices,
                query_index,
                gaze_target: gaze,
                source_recording: rec.id.clone(),
                path_id: rec.path_id.clone(),
                window_start: start,
            });
        }
        start += cfg.hop;
    }
    Ok(clips)
}
