//! Training loop, baselines and leaderboard evaluation.

mod eval;
mod leaderboard;

use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClipSample;
use crate::error::{Error, Result};
use crate::gaze_maps::{default_gt_sigma, density_from_fixations, fit_center_prior, FixationMap};
use crate::metrics::nss;
use crate::model::{tensor_to_maps, EcnModel};

pub use eval::{
    evaluate_model, ground_truth, CenterPriorBaseline, ModelPredictor, OracleBaseline, Predictor, UniformBaseline,
};
pub use leaderboard::{Leaderboard, LeaderboardRow, Metric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Blur of the ground-truth density target; `None` means H/16.
    pub gt_sigma: Option<f64>,
    /// Share of each training path's clips (taken from its end) held out
    /// for validation NSS.
    pub val_fraction: f64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Fit the center prior on the training gaze before optimizing.
    pub fit_prior: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            gt_sigma: None,
            val_fraction: 0.15,
            max_steps: None,
            fit_prior: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nss: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub train_clips: usize,
    pub val_clips: usize,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn final_val_nss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_nss)
    }
}

/// Per-clip tensors computed once: the backbone is frozen, so its query
/// slice never changes during training.
struct Example {
    slice: Option<Tensor>,
    frame: Tensor,
    target: Tensor,
    fixations: FixationMap,
}

/// Splits clips into training and validation: the last `fraction` of each
/// path's clips (by recording and window start) are held out, keeping at
/// least one training clip per path.
pub fn validation_split(clips: &[ClipSample], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut by_path: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        by_path.entry(c.path_id.as_str()).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for idx in by_path.values_mut() {
        idx.sort_by(|&a, &b| {
            (&clips[a].source_recording, clips[a].window_start).cmp(&(&clips[b].source_recording, clips[b].window_start))
        });
        let held = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        let cut = idx.len() - held;
        train.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn prepare(model: &EcnModel, clips: &[&ClipSample], sigma: f64) -> Result<Vec<Example>> {
    let (h, w) = model.config().input_size;
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(8) {
        let feats = model.extract_video_features(&model.clips_tensor(chunk)?)?;
        let slices = feats.slice(feats.temporal_len.saturating_sub(1))?;
        for (i, clip) in chunk.iter().enumerate() {
            let slice = match &slices {
                Some(s) => Some(s.narrow(0, i, 1)?),
                None => None,
            };
            let g = clip.gaze_target;
            let fixations = FixationMap::from_points(&[(g.x as f64, g.y as f64)], h, w)?;
            let density = density_from_fixations(&fixations, sigma)?;
            let data: Vec<f64> = density.grid().iter().copied().collect();
            let target = Tensor::from_vec(data, (1, h, w), model.device())?.to_dtype(model.dtype())?;
            out.push(Example {
                slice,
                frame: model.frames_tensor(&[clip.query_frame()])?,
                target,
                fixations,
            });
        }
    }
    Ok(out)
}

fn batch_forward(model: &EcnModel, examples: &[&Example]) -> Result<(Tensor, Tensor)> {
    let frames = Tensor::cat(&examples.iter().map(|e| &e.frame).collect::<Vec<_>>(), 0)?;
    let slice = match examples[0].slice {
        Some(_) => Some(Tensor::cat(
            &examples.iter().map(|e| e.slice.as_ref().expect("uniform batch")).collect::<Vec<_>>(),
            0,
        )?),
        None => None,
    };
    let targets = Tensor::cat(&examples.iter().map(|e| &e.target).collect::<Vec<_>>(), 0)?;
    Ok((model.forward_from_slice(slice.as_ref(), &frames)?, targets))
}

/// Mean squared error between probability maps, measured on maps scaled
/// by `H * W` (a uniform map has value 1 everywhere).
pub fn map_mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (_, h, w) = pred.dims3()?;
    let scale = (h * w) as f64;
    Ok(((pred - target)? * scale)?.sqr()?.mean_all()?)
}

fn mean_nss(model: &EcnModel, examples: &[Example]) -> Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let mut values = Vec::new();
    for chunk in examples.chunks(16) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let (pred, _) = batch_forward(model, &refs)?;
        for (map, ex) in tensor_to_maps(&pred)?.iter().zip(chunk) {
            if let Ok(v) = nss(map, &ex.fixations) {
                values.push(v);
            }
        }
    }
    if values.is_empty() {
        return Ok(None);
    }
    values.sort_by(f64::total_cmp);
    Ok(Some(values.iter().sum::<f64>() / values.len() as f64))
}

/// Optimizes the encoders and decoder with Adam on the MSE between the
/// predicted map and the Gaussian density of the query gaze. The backbone
/// stays frozen.
pub fn train(model: &mut EcnModel, clips: &[ClipSample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::EmptySplit("training split has no clips".into()));
    }
    let started = Instant::now();
    let h = model.config().input_size.0;
    let sigma = cfg.gt_sigma.unwrap_or_else(|| default_gt_sigma(h));
    let (train_idx, val_idx) = validation_split(clips, cfg.val_fraction);
    let train_clips: Vec<&ClipSample> = train_idx.iter().map(|&i| &clips[i]).collect();
    let val_clips: Vec<&ClipSample> = val_idx.iter().map(|&i| &clips[i]).collect();

    if cfg.fit_prior && train_clips.len() >= 2 {
        let points: Vec<(f64, f64)> = train_clips
            .iter()
            .map(|c| (c.gaze_target.x as f64, c.gaze_target.y as f64))
            .collect();
        let (ch, cw) = train_clips[0].resolution();
        model.set_prior(&fit_center_prior(&points, ch, cw)?)?;
    }
    if !model.is_calibrated() {
        let n = train_clips.len().min(cfg.batch_size.max(8));
        let batch = model.clips_tensor(&train_clips[..n])?;
        model.calibrate_backbone(&batch)?;
    }

    let train_set = prepare(model, &train_clips, sigma)?;
    let val_set = prepare(model, &val_clips, sigma)?;
    let mut opt = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        step_losses: Vec::new(),
        train_clips: train_set.len(),
        val_clips: val_set.len(),
        wall_seconds: 0.0,
    };
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut steps) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if report.step_losses.len() >= max_steps {
                break;
            }
            let examples: Vec<&Example> = batch.iter().map(|&i| &train_set[i]).collect();
            let (pred, target) = batch_forward(model, &examples)?;
            let loss = map_mse(&pred, &target)?;
            let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: report.step_losses.len(),
                    loss: value,
                });
            }
            opt.backward_step(&loss)?;
            report.step_losses.push(value);
            sum += value;
            steps += 1;
        }
        if steps == 0 {
            break 'epochs;
        }
        let val_nss = mean_nss(model, &val_set)?;
        log::info!(
            "epoch {}: train loss {:.5}, val nss {}",
            epoch + 1,
            sum / steps as f64,
            val_nss.map_or("n/a".to_string(), |v| format!("{v:.4}"))
        );
        report.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss: sum / steps as f64,
            val_nss,
            steps,
        });
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Per-map argmax as `(x, y)` pixel coordinates.
pub fn argmax_xy(map: &ndarray::Array2<f64>) -> (usize, usize) {
    let mut best = (0, 0);
    let mut value = f64::NEG_INFINITY;
    for ((r, c), &v) in map.indexed_iter() {
        if v > value {
            value = v;
            best = (c, r);
        }
    }
    best
}

/// Mean absolute value over all entries, used for spot checks of
/// parameter movement.
pub fn mean_abs(t: &Tensor) -> Result<f64> {
    Ok(t.abs()?
        .flatten_all()?
        .mean(D::Minus1)?
        .to_dtype(candle_core::DType::F64)?
        .to_scalar::<f64>()?)
}
