use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gaze_maps::FixationMap;

/// AUC-Judd score; `degenerate` is set for constant predictions, which
/// score chance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucJudd {
    pub value: f64,
    pub degenerate: bool,
}

fn check_shape(pred: &Array2<f64>, fix: &FixationMap) -> Result<()> {
    if pred.dim() != fix.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs fixation map {:?}",
            pred.dim(),
            fix.dim()
        )));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction".into()));
    }
    Ok(())
}

/// Area under the ROC curve with thresholds at the predicted values of the
/// fixated pixels (Judd). Each threshold `t` yields
/// `TPR = |fixated >= t| / |fixated|` and
/// `FPR = |non-fixated >= t| / |non-fixated|`; the points, together with
/// `(0, 0)` and `(1, 1)`, are integrated with the trapezoid rule.
pub fn auc_judd(pred: &Array2<f64>, fix: &FixationMap) -> Result<AucJudd> {
    check_shape(pred, fix)?;
    let total = pred.len();
    let mut fixated: Vec<f64> = Vec::new();
    let mut others: Vec<f64> = Vec::with_capacity(total);
    for (&v, &g) in pred.iter().zip(fix.grid().iter()) {
        if g > 0.0 {
            fixated.push(v);
        } else {
            others.push(v);
        }
    }
    let (min, max) = pred
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if min == max || others.is_empty() {
        return Ok(AucJudd {
            value: 0.5,
            degenerate: true,
        });
    }

    fixated.sort_by(|a, b| b.total_cmp(a));
    others.sort_by(|a, b| b.total_cmp(a));
    let n_fix = fixated.len() as f64;
    let n_other = others.len() as f64;

    let mut points = vec![(0.0, 0.0)];
    let (mut i, mut j) = (0usize, 0usize);
    while i < fixated.len() {
        let t = fixated[i];
        while i < fixated.len() && fixated[i] >= t {
            i += 1;
        }
        while j < others.len() && others[j] >= t {
            j += 1;
        }
        points.push((j as f64 / n_other, i as f64 / n_fix));
    }
    points.push((1.0, 1.0));

    let value = points
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum::<f64>();
    Ok(AucJudd {
        value,
        degenerate: false,
    })
}

/// Population mean and standard deviation. A map whose entries are all
/// equal reports exactly zero deviation regardless of summation rounding.
pub(crate) fn mean_std(m: &Array2<f64>) -> (f64, f64) {
    let n = m.len() as f64;
    let first = m.iter().next().copied().unwrap_or(0.0);
    if m.iter().all(|&v| v == first) {
        return (first, 0.0);
    }
    let mean = m.sum() / n;
    let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Normalized scanpath saliency: mean z-score of the prediction over the
/// fixation list (duplicates count once each).
pub fn nss(pred: &Array2<f64>, fix: &FixationMap) -> Result<f64> {
    check_shape(pred, fix)?;
    let (mean, std) = mean_std(pred);
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::ZeroVariance("prediction"));
    }
    let n = fix.fixation_count() as f64;
    Ok(fix
        .pixels()
        .iter()
        .map(|&(r, c)| (pred[[r, c]] - mean) / std)
        .sum::<f64>()
        / n)
}
