use ndarray::Array2;

use super::leaderboard::LeaderboardRow;
use crate::dataset::ClipSample;
use crate::error::{Error, Result};
use crate::gaze_maps::{default_gt_sigma, density_from_fixations, CenterPrior, DensityMap, FixationMap};
use crate::metrics::{evaluate_all, FrameMetrics, MetricConfig};
use crate::model::EcnModel;

/// Anything that maps clips to saliency maps at the clips' resolution.
pub trait Predictor {
    fn name(&self) -> String;
    fn parameter_count(&self) -> usize;
    fn predict_batch(&self, clips: &[&ClipSample]) -> Result<Vec<Array2<f64>>>;
}

pub struct ModelPredictor<'a> {
    pub name: String,
    pub model: &'a EcnModel,
}

impl Predictor for ModelPredictor<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn parameter_count(&self) -> usize {
        self.model.count_parameters().total
    }

    fn predict_batch(&self, clips: &[&ClipSample]) -> Result<Vec<Array2<f64>>> {
        self.model.predict_batch(clips)
    }
}

/// The fitted center prior, repeated for every frame.
pub struct CenterPriorBaseline(pub CenterPrior);

impl Predictor for CenterPriorBaseline {
    fn name(&self) -> String {
        "center_prior".into()
    }

    fn parameter_count(&self) -> usize {
        // Mean (2) and symmetric covariance (3).
        5
    }

    fn predict_batch(&self, clips: &[&ClipSample]) -> Result<Vec<Array2<f64>>> {
        clips
            .iter()
            .map(|c| {
                let (h, w) = c.resolution();
                if self.0.grid().dim() == (h, w) {
                    Ok(self.0.grid().grid().clone())
                } else {
                    Ok(self.0.rescaled(h, w)?.grid().grid().clone())
                }
            })
            .collect()
    }
}

pub struct UniformBaseline;

impl Predictor for UniformBaseline {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn parameter_count(&self) -> usize {
        0
    }

    fn predict_batch(&self, clips: &[&ClipSample]) -> Result<Vec<Array2<f64>>> {
        Ok(clips
            .iter()
            .map(|c| {
                let (h, w) = c.resolution();
                Array2::from_elem((h, w), 1.0 / (h * w) as f64)
            })
            .collect())
    }
}

/// Predicts the ground-truth density itself; an upper reference.
pub struct OracleBaseline {
    pub sigma: Option<f64>,
}

impl Predictor for OracleBaseline {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn parameter_count(&self) -> usize {
        0
    }

    fn predict_batch(&self, clips: &[&ClipSample]) -> Result<Vec<Array2<f64>>> {
        clips
            .iter()
            .map(|c| Ok(ground_truth(c, self.sigma)?.1.into_grid()))
            .collect()
    }
}

/// Fixation map and density map of a clip's query gaze.
pub fn ground_truth(clip: &ClipSample, sigma: Option<f64>) -> Result<(FixationMap, DensityMap)> {
    let (h, w) = clip.resolution();
    let g = clip.gaze_target;
    let fix = FixationMap::from_points(&[(g.x as f64, g.y as f64)], h, w)?;
    let density = density_from_fixations(&fix, sigma.unwrap_or_else(|| default_gt_sigma(h)))?;
    Ok((fix, density))
}

/// Predicts every clip and scores the maps against the query-frame gaze.
/// Frames are processed in fixed-size batches; the report does not depend
/// on clip order.
pub fn evaluate_model(
    predictor: &dyn Predictor,
    clips: &[ClipSample],
    gt_sigma: Option<f64>,
    cfg: &MetricConfig,
) -> Result<(LeaderboardRow, Vec<FrameMetrics>)> {
    if clips.is_empty() {
        return Err(Error::EmptySplit("test split has no clips".into()));
    }
    let mut preds = Vec::with_capacity(clips.len());
    let mut gts = Vec::with_capacity(clips.len());
    let refs: Vec<&ClipSample> = clips.iter().collect();
    for chunk in refs.chunks(8) {
        preds.extend(predictor.predict_batch(chunk)?);
        for c in chunk {
            gts.push(ground_truth(c, gt_sigma)?);
        }
    }
    let (report, frames) = evaluate_all(&preds, &gts, cfg)?;
    report.check_bounds()?;
    Ok((
        LeaderboardRow {
            model_name: predictor.name(),
            report,
            parameter_count: predictor.parameter_count(),
        },
        frames,
    ))
}
