//! Saliency evaluation metrics: AUC-Judd, CC, KLD, SIM and NSS.
//!
//! Location-based metrics (AUC-Judd, NSS) and KLD score against the
//! fixation list; CC and SIM against the continuous density map. All
//! statistics use population (not sample) moments.

mod distribution;
mod location;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze_maps::{DensityMap, FixationMap};

pub use distribution::{cc, kld, sim};
pub use location::{auc_judd, nss, AucJudd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Added to the prediction inside the KLD logarithm.
    pub epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { epsilon: 1e-7 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)))
        }
    }
}

/// Metric values for one frame; `None` where the metric was undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub auc_judd: Option<f64>,
    pub auc_degenerate: bool,
    pub cc: Option<f64>,
    pub kld: Option<f64>,
    pub sim: Option<f64>,
    pub nss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SkipCounts {
    pub auc_judd: usize,
    pub cc: usize,
    pub kld: usize,
    pub sim: usize,
    pub nss: usize,
}

/// Per-frame metrics averaged over a test set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc_judd: Option<f64>,
    pub cc: Option<f64>,
    pub kld: Option<f64>,
    pub sim: Option<f64>,
    pub nss: Option<f64>,
    pub frames: usize,
    pub skipped: SkipCounts,
    /// Frames whose prediction was constant (AUC reported at chance).
    pub auc_degenerate: usize,
}

impl MetricReport {
    /// Checks the range invariants of every present metric.
    pub fn check_bounds(&self) -> Result<()> {
        let in_range = |v: Option<f64>, lo: f64, hi: f64| v.is_none_or(|v| v >= lo && v <= hi);
        let ok = in_range(self.auc_judd, 0.0, 1.0)
            && in_range(self.sim, 0.0, 1.0)
            && in_range(self.cc, -1.0, 1.0)
            && in_range(self.kld, 0.0, f64::INFINITY)
            && self.nss.is_none_or(f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("metric report out of bounds: {self:?}")))
        }
    }
}

/// Scores one prediction. Metrics that are undefined for this frame
/// (e.g. NSS on a constant map) come back as `None`.
pub fn evaluate_frame(
    pred: &Array2<f64>,
    fix: &FixationMap,
    density: &DensityMap,
    cfg: &MetricConfig,
) -> Result<FrameMetrics> {
    if pred.dim() != fix.dim() || pred.dim() != density.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?}, fixations {:?}, density {:?}",
            pred.dim(),
            fix.dim(),
            density.dim()
        )));
    }
    let auc = auc_judd(pred, fix).ok();
    Ok(FrameMetrics {
        auc_judd: auc.map(|a| a.value),
        auc_degenerate: auc.is_some_and(|a| a.degenerate),
        cc: cc(pred, density.grid()).ok(),
        kld: kld(pred, fix, cfg).ok(),
        sim: sim(pred, density.grid()).ok(),
        nss: nss(pred, fix).ok(),
    })
}

/// Mean of the present values, summed in sorted order so the result does
/// not depend on frame order.
fn order_free_mean(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let mut present = Vec::new();
    let mut skipped = 0;
    for v in values {
        match v {
            Some(v) => present.push(v),
            None => skipped += 1,
        }
    }
    if present.is_empty() {
        return (None, skipped);
    }
    present.sort_by(f64::total_cmp);
    let n = present.len() as f64;
    (Some(present.iter().sum::<f64>() / n), skipped)
}

impl MetricReport {
    pub fn from_frames(frames: &[FrameMetrics]) -> Self {
        let (auc_judd, s_auc) = order_free_mean(frames.iter().map(|f| f.auc_judd));
        let (cc, s_cc) = order_free_mean(frames.iter().map(|f| f.cc));
        let (kld, s_kld) = order_free_mean(frames.iter().map(|f| f.kld));
        let (sim, s_sim) = order_free_mean(frames.iter().map(|f| f.sim));
        let (nss, s_nss) = order_free_mean(frames.iter().map(|f| f.nss));
        Self {
            auc_judd,
            cc,
            kld,
            sim,
            nss,
            frames: frames.len(),
            skipped: SkipCounts {
                auc_judd: s_auc,
                cc: s_cc,
                kld: s_kld,
                sim: s_sim,
                nss: s_nss,
            },
            auc_degenerate: frames.iter().filter(|f| f.auc_degenerate).count(),
        }
    }
}

/// Scores every prediction against its ground truth and averages per
/// metric over the frames where that metric is defined.
pub fn evaluate_all(
    preds: &[Array2<f64>],
    gts: &[(FixationMap, DensityMap)],
    cfg: &MetricConfig,
) -> Result<(MetricReport, Vec<FrameMetrics>)> {
    cfg.validate()?;
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            what: "ground-truth frames".into(),
            expected: preds.len(),
            actual: gts.len(),
        });
    }
    let frames = preds
        .iter()
        .zip(gts)
        .map(|(p, (fix, dens))| evaluate_frame(p, fix, dens, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((MetricReport::from_frames(&frames), frames))
}
