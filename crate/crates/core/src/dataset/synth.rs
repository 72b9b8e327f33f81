//! Desk-scale synthetic recordings.
//!
//! A textured background scrolls with simulated forward walking and head
//! yaw, while one to three saturated discs drift across the view. Gaze is a
//! convex mix of the image center and the disc closest to the center
//! (looked up slightly ahead in time), plus smooth Ornstein-Uhlenbeck
//! noise. IMU readings are derivatives of the same camera motion.

use std::f64::consts::TAU;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raw::{ingest_raw, RawRecording};
use super::{Direction, GazeSample, ImuSample, Recording, Source};
use crate::error::{Error, Result};

const NS_PER_S: f64 = 1e9;
const GRAVITY: f64 = 9.81;
const BLOB_COLORS: [[u8; 3]; 3] = [[235, 40, 40], [245, 225, 30], [30, 215, 235]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub recording_id: String,
    pub path_id: String,
    pub direction: Direction,
    pub duration_s: f64,
    pub fps: f64,
    /// Stored (output) resolution.
    pub width: usize,
    pub height: usize,
    /// Raw frames are rendered at `render_scale` times the stored resolution.
    pub render_scale: usize,
    pub attractors: usize,
    /// Weight of the attractor in the gaze mix; the center gets `1 - weight`.
    pub attractor_weight: f64,
    /// Stationary standard deviation of the gaze noise, in stored pixels.
    pub noise_px: f64,
    /// How far ahead (seconds) gaze anticipates the attractor's motion.
    pub lead_s: f64,
    pub gaze_rate_hz: f64,
    pub imu_rate_hz: f64,
    /// Probability that a gaze sample starts a blink.
    pub blink_prob: f64,
    pub imu_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            recording_id: "synthetic".into(),
            path_id: "synthetic".into(),
            direction: Direction::Forward,
            duration_s: 8.0,
            fps: 30.0,
            width: 224,
            height: 224,
            render_scale: 1,
            attractors: 2,
            attractor_weight: 0.85,
            noise_px: 2.0,
            lead_s: 0.15,
            gaze_rate_hz: 60.0,
            imu_rate_hz: 1000.0,
            blink_prob: 0.004,
            imu_noise: 0.05,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if self.fps <= 0.0 || self.gaze_rate_hz <= 0.0 || self.imu_rate_hz <= 0.0 {
            return Err(Error::invalid("sensor rates must be positive"));
        }
        if self.width == 0 || self.height == 0 || self.render_scale == 0 {
            return Err(Error::invalid("resolution must be positive"));
        }
        if !(1..=3).contains(&self.attractors) {
            return Err(Error::invalid(format!(
                "attractor count {} outside 1..=3",
                self.attractors
            )));
        }
        if !(0.0..=1.0).contains(&self.attractor_weight) {
            return Err(Error::invalid("attractor weight outside [0, 1]"));
        }
        if self.noise_px < 0.0 || self.lead_s < 0.0 || !(0.0..1.0).contains(&self.blink_prob) {
            return Err(Error::invalid("noise, lead and blink probability must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Attractor {
    center: [f64; 2],
    amplitude: [f64; 2],
    freq: [f64; 2],
    phase: [f64; 2],
    color: [u8; 3],
}

impl Attractor {
    /// Position in units of the frame size (0..1).
    fn position(&self, t: f64) -> [f64; 2] {
        [0, 1].map(|a| {
            self.center[a] + self.amplitude[a] * (TAU * self.freq[a] * t + self.phase[a]).sin()
        })
    }
}

#[derive(Debug, Clone)]
struct Wave {
    k: [f64; 2],
    phase: f64,
    tint: [f64; 3],
}

/// Analytic scene: everything is a smooth function of time.
#[derive(Debug, Clone)]
struct Scene {
    attractors: Vec<Attractor>,
    waves: Vec<Wave>,
    yaw_amp: f64,
    yaw_freq: f64,
    yaw_phase: f64,
    speed_mean: f64,
    speed_amp: f64,
    speed_freq: f64,
    speed_phase: f64,
    step_freq: f64,
    bob_amp: f64,
    scroll_sign: f64,
}

impl Scene {
    fn sample(rng: &mut impl Rng, spec: &SynthSpec) -> Self {
        let attractors = (0..spec.attractors)
            .map(|i| Attractor {
                center: [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)],
                amplitude: [rng.gen_range(0.1..0.22), rng.gen_range(0.08..0.2)],
                freq: [rng.gen_range(0.08..0.3), rng.gen_range(0.08..0.3)],
                phase: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
                color: BLOB_COLORS[i % BLOB_COLORS.len()],
            })
            .collect();
        let waves = (0..3)
            .map(|_| {
                let wavelength = rng.gen_range(0.12..0.5);
                let angle: f64 = rng.gen_range(0.0..TAU);
                Wave {
                    k: [
                        TAU / wavelength * angle.cos(),
                        TAU / wavelength * angle.sin(),
                    ],
                    phase: rng.gen_range(0.0..TAU),
                    tint: [
                        rng.gen_range(6.0..16.0),
                        rng.gen_range(6.0..16.0),
                        rng.gen_range(6.0..16.0),
                    ],
                }
            })
            .collect();
        Self {
            attractors,
            waves,
            yaw_amp: rng.gen_range(0.05..0.2),
            yaw_freq: rng.gen_range(0.1..0.3),
            yaw_phase: rng.gen_range(0.0..TAU),
            speed_mean: rng.gen_range(1.1..1.6),
            speed_amp: rng.gen_range(0.05..0.25),
            speed_freq: rng.gen_range(0.1..0.4),
            speed_phase: rng.gen_range(0.0..TAU),
            step_freq: rng.gen_range(1.6..2.1),
            bob_amp: rng.gen_range(0.01..0.03),
            scroll_sign: match spec.direction {
                Direction::Forward => 1.0,
                Direction::Reverse => -1.0,
            },
        }
    }

    fn yaw(&self, t: f64) -> f64 {
        self.yaw_amp * (TAU * self.yaw_freq * t + self.yaw_phase).sin()
    }

    fn yaw_rate(&self, t: f64) -> f64 {
        self.yaw_amp * TAU * self.yaw_freq * (TAU * self.yaw_freq * t + self.yaw_phase).cos()
    }

    fn speed(&self, t: f64) -> f64 {
        self.speed_mean + self.speed_amp * (TAU * self.speed_freq * t + self.speed_phase).sin()
    }

    fn forward_accel(&self, t: f64) -> f64 {
        self.speed_amp * TAU * self.speed_freq * (TAU * self.speed_freq * t + self.speed_phase).cos()
    }

    /// Walked distance in meters.
    fn distance(&self, t: f64) -> f64 {
        let w = TAU * self.speed_freq;
        self.speed_mean * t - self.speed_amp / w * ((w * t + self.speed_phase).cos() - self.speed_phase.cos())
    }

    fn bob(&self, t: f64) -> f64 {
        self.bob_amp * (TAU * self.step_freq * t).sin()
    }

    fn bob_accel(&self, t: f64) -> f64 {
        -self.bob_amp * (TAU * self.step_freq).powi(2) * (TAU * self.step_freq * t).sin()
    }

    fn pitch_rate(&self, t: f64) -> f64 {
        // Head pitch follows the vertical bob.
        4.0 * self.bob_amp * TAU * self.step_freq * (TAU * self.step_freq * t).cos()
    }

    /// Attractor closest to the image center at time `t`, in frame units.
    fn gaze_target(&self, t: f64) -> [f64; 2] {
        self.attractors
            .iter()
            .map(|a| a.position(t))
            .min_by(|a, b| {
                let da = (a[0] - 0.5).powi(2) + (a[1] - 0.5).powi(2);
                let db = (b[0] - 0.5).powi(2) + (b[1] - 0.5).powi(2);
                da.total_cmp(&db)
            })
            .expect("at least one attractor")
    }

    fn render(&self, t: f64, width: usize, height: usize) -> RgbImage {
        let size = width.max(height) as f64;
        // Scroll offsets in frame units: yaw pans horizontally, walking
        // pulls the ground texture downward.
        let off_x = self.yaw(t) * 1.2;
        let off_y = -self.scroll_sign * 0.35 * self.distance(t) + 2.0 * self.bob(t);
        let blobs: Vec<([f64; 2], [u8; 3])> = self
            .attractors
            .iter()
            .map(|a| {
                let p = a.position(t);
                ([p[0] * width as f64, p[1] * height as f64], a.color)
            })
            .collect();
        let radius = 0.07 * width.min(height) as f64;

        RgbImage::from_fn(width as u32, height as u32, |px, py| {
            let u = (px as f64 + 0.5) / size + off_x;
            let v = (py as f64 + 0.5) / size + off_y;
            let mut c = [92.0f64, 98.0, 90.0];
            for w in &self.waves {
                let s = (w.k[0] * u + w.k[1] * v + w.phase).sin();
                for (ch, tint) in c.iter_mut().zip(w.tint.iter()) {
                    *ch += tint * s;
                }
            }
            for (center, color) in &blobs {
                let d = ((px as f64 + 0.5 - center[0]).powi(2) + (py as f64 + 0.5 - center[1]).powi(2)).sqrt();
                let alpha = (radius - d + 0.5).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    for (ch, &col) in c.iter_mut().zip(color.iter()) {
                        *ch = (1.0 - alpha) * *ch + alpha * col as f64;
                    }
                }
            }
            Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
        })
    }
}

/// Ornstein-Uhlenbeck noise with unit stationary variance and a 0.5 s
/// correlation time, sampled at a fixed rate.
struct SmoothNoise {
    state: [f64; 2],
    rho: f64,
}

impl SmoothNoise {
    fn new(rng: &mut impl Rng, rate_hz: f64) -> Self {
        let normal = Normal::new(0.0, 1.0).unwrap();
        Self {
            state: [normal.sample(rng), normal.sample(rng)],
            rho: (-1.0 / (0.5 * rate_hz)).exp(),
        }
    }

    fn step(&mut self, rng: &mut impl Rng) -> [f64; 2] {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let k = (1.0 - self.rho * self.rho).sqrt();
        let out = self.state;
        for s in self.state.iter_mut() {
            *s = self.rho * *s + k * normal.sample(rng);
        }
        out
    }
}

/// Renders frames and produces raw gaze / IMU streams at their native
/// rates. Frames are rendered at `render_scale` times the stored size and
/// gaze is expressed in those raw pixels.
pub fn generate_raw_streams(spec: &SynthSpec, seed: u64) -> Result<RawRecording> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::sample(&mut rng, spec);
    let (rw, rh) = (spec.width * spec.render_scale, spec.height * spec.render_scale);

    let n_frames = ((spec.duration_s * spec.fps).floor() as usize).max(1);
    let frame_period = NS_PER_S / spec.fps;
    let frame_timestamps: Vec<i64> = (0..n_frames)
        .map(|k| (k as f64 * frame_period).round() as i64 + rng.gen_range(-500_000..=500_000))
        .collect();
    let frames = frame_timestamps
        .iter()
        .map(|&ts| Arc::new(scene.render(ts as f64 / NS_PER_S, rw, rh)))
        .collect();

    let end_s = spec.duration_s;
    let n_gaze = (end_s * spec.gaze_rate_hz).floor() as usize;
    let mut noise = SmoothNoise::new(&mut rng, spec.gaze_rate_hz);
    let mut blink_left = 0usize;
    let center = [rw as f64 / 2.0, rh as f64 / 2.0];
    let noise_scale = spec.noise_px * spec.render_scale as f64;
    let gaze_stream = (0..n_gaze)
        .map(|k| {
            let t = k as f64 / spec.gaze_rate_hz;
            let n = noise.step(&mut rng);
            if blink_left == 0 && rng.gen_bool(spec.blink_prob) {
                blink_left = 6;
            }
            let timestamp_ns = (t * NS_PER_S).round() as i64;
            if blink_left > 0 {
                blink_left -= 1;
                return GazeSample {
                    timestamp_ns,
                    x: f64::NAN,
                    y: f64::NAN,
                };
            }
            let target = scene.gaze_target(t + spec.lead_s);
            let a = spec.attractor_weight;
            let x = (1.0 - a) * center[0] + a * target[0] * rw as f64 + noise_scale * n[0];
            let y = (1.0 - a) * center[1] + a * target[1] * rh as f64 + noise_scale * n[1];
            GazeSample {
                timestamp_ns,
                x: x.clamp(0.0, rw as f64 - 1e-3),
                y: y.clamp(0.0, rh as f64 - 1e-3),
            }
        })
        .collect();

    let n_imu = (end_s * spec.imu_rate_hz).floor() as usize;
    let imu_noise = Normal::new(0.0, spec.imu_noise.max(0.0))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let imu_stream = (0..n_imu)
        .map(|k| {
            let t = k as f64 / spec.imu_rate_hz;
            let lateral = scene.speed(t) * scene.yaw_rate(t);
            let mut accel = [lateral, GRAVITY + scene.bob_accel(t), scene.forward_accel(t)];
            let mut gyro = [scene.pitch_rate(t), scene.yaw_rate(t), 0.0];
            for v in accel.iter_mut().chain(gyro.iter_mut()) {
                *v += imu_noise.sample(&mut rng);
            }
            ImuSample {
                timestamp_ns: (t * NS_PER_S).round() as i64,
                accel,
                gyro,
            }
        })
        .collect();

    Ok(RawRecording {
        id: spec.recording_id.clone(),
        path_id: spec.path_id.clone(),
        direction: spec.direction,
        source: Source::Synthetic,
        frame_timestamps,
        frames,
        gaze_stream,
        imu_stream,
    })
}

/// Generates a recording at the stored resolution by running the raw
/// streams through the same alignment and downscaling as real data.
pub fn generate_synthetic_recording(spec: &SynthSpec, seed: u64) -> Result<Recording> {
    let raw = generate_raw_streams(spec, seed)?;
    ingest_raw(&raw, (spec.height, spec.width))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed_weight: f64, noise: f64) -> SynthSpec {
        SynthSpec {
            duration_s: 2.5,
            width: 48,
            height: 48,
            attractor_weight: seed_weight,
            noise_px: noise,
            lead_s: 0.0,
            blink_prob: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = small(0.85, 2.0);
        let a = generate_synthetic_recording(&spec, 5).unwrap();
        let b = generate_synthetic_recording(&spec, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_recording(&spec, 6).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn zero_attractor_weight_stays_near_center() {
        let spec = small(0.0, 1.0);
        let rec = generate_synthetic_recording(&spec, 1).unwrap();
        for g in rec.gaze.iter().flatten() {
            // 1 px std noise; 6 sigma bound.
            assert!((g.x - 24.0).abs() < 6.0 && (g.y - 24.0).abs() < 6.0, "{g:?}");
        }
        let exact = generate_synthetic_recording(&small(0.0, 0.0), 1).unwrap();
        for g in exact.gaze.iter().flatten() {
            assert_eq!((g.x, g.y), (24.0, 24.0));
        }
    }

    #[test]
    fn full_attractor_weight_tracks_the_attractor() {
        let spec = small(1.0, 0.0);
        let raw = generate_raw_streams(&spec, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scene = Scene::sample(&mut rng, &spec);
        for s in &raw.gaze_stream {
            let p = scene.gaze_target(s.timestamp_ns as f64 / NS_PER_S);
            assert!((s.x - p[0] * 48.0).abs() < 1e-6 || s.x >= 48.0 - 1e-2 || s.x <= 0.0);
            assert!((s.y - p[1] * 48.0).abs() < 1e-6 || s.y >= 48.0 - 1e-2 || s.y <= 0.0);
        }
        // Per-frame values average two 60 Hz samples around each frame.
        let rec = ingest_raw(&raw, (48, 48)).unwrap();
        for (g, &ts) in rec.gaze.iter().zip(&rec.frame_timestamps) {
            let g = g.unwrap();
            let p = scene.gaze_target(ts as f64 / NS_PER_S);
            assert!((g.x as f64 - p[0] * 48.0).abs() < 0.5, "{g:?} vs {p:?}");
            assert!((g.y as f64 - p[1] * 48.0).abs() < 0.5);
        }
    }

    #[test]
    fn imu_reflects_gravity_and_yaw() {
        let rec = generate_synthetic_recording(&small(0.5, 1.0), 2).unwrap();
        let mean_ay: f64 = rec.imu.iter().flatten().map(|v| v[1] as f64).sum::<f64>() / rec.len() as f64;
        assert!((mean_ay - GRAVITY).abs() < 0.5, "{mean_ay}");
        assert!(rec.imu.iter().all(|v| v.is_some()));
    }

    #[test]
    fn non_positive_duration_is_rejected() {
        let spec = SynthSpec {
            duration_s: 0.0,
            ..small(0.5, 1.0)
        };
        assert!(generate_synthetic_recording(&spec, 0).is_err());
    }

    #[test]
    fn render_scale_downscales_to_stored_size() {
        let spec = SynthSpec {
            render_scale: 2,
            duration_s: 0.5,
            ..small(0.85, 1.0)
        };
        let raw = generate_raw_streams(&spec, 3).unwrap();
        assert_eq!(raw.frames[0].dimensions(), (96, 96));
        let rec = ingest_raw(&raw, (48, 48)).unwrap();
        assert_eq!(rec.resolution(), (48, 48));
        rec.validate().unwrap();
    }
}
