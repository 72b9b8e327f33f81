use ndarray::Array2;

use super::location::mean_std;
use super::MetricConfig;
use crate::error::{Error, Result};
use crate::gaze_maps::FixationMap;

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok(())
}

/// Pearson correlation of the two maps over pixels (population statistics).
pub fn cc(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    same_shape(pred, gt)?;
    let (mp, sp) = mean_std(pred);
    let (mq, sq) = mean_std(gt);
    if sp <= 0.0 {
        return Err(Error::ZeroVariance("prediction"));
    }
    if sq <= 0.0 {
        return Err(Error::ZeroVariance("ground truth"));
    }
    let n = pred.len() as f64;
    let cov = pred
        .iter()
        .zip(gt.iter())
        .map(|(p, q)| (p - mp) * (q - mq))
        .sum::<f64>()
        / n;
    Ok((cov / (sp * sq)).clamp(-1.0, 1.0))
}

/// `sum_i Q(i) ln(Q(i) / (P(i) + eps))` with `Q` the fixation counts over N
/// and `P` the prediction over its sum. Only fixated pixels contribute.
pub fn kld(pred: &Array2<f64>, fix: &FixationMap, cfg: &MetricConfig) -> Result<f64> {
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
    if pred.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("KLD prediction has negative entries"));
    }
    let total = pred.sum();
    if total <= 0.0 {
        return Err(Error::EmptyPrediction);
    }
    let q = fix.multiplicity_pmf();
    Ok(q.iter()
        .zip(pred.iter())
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| qi * (qi / (pi / total + cfg.epsilon)).ln())
        .sum())
}

/// Histogram intersection of the two maps after normalizing each to sum 1.
pub fn sim(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    same_shape(pred, gt)?;
    if pred.iter().chain(gt.iter()).any(|&v| v < 0.0) {
        return Err(Error::invalid("SIM inputs must be nonnegative"));
    }
    let (sp, sq) = (pred.sum(), gt.sum());
    if sp <= 0.0 || sq <= 0.0 {
        return Err(Error::EmptyPrediction);
    }
    Ok(pred
        .iter()
        .zip(gt.iter())
        .map(|(p, q)| (p / sp).min(q / sq))
        .sum::<f64>()
        .min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cc_examples() {
        let q = array![[0.1, 0.4], [0.3, 0.2]];
        assert!((cc(&q, &q).unwrap() - 1.0).abs() < 1e-12);
        let affine = q.mapv(|v| 3.0 * v + 7.0);
        assert!((cc(&affine, &q).unwrap() - 1.0).abs() < 1e-12);
        let p = array![[1.0, 0.0], [0.0, 0.0]];
        let q = array![[0.0, 1.0], [0.0, 0.0]];
        assert!((cc(&p, &q).unwrap() + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cc_rejects_constant_maps() {
        let q = array![[0.1, 0.4], [0.3, 0.2]];
        assert!(matches!(cc(&Array2::ones((2, 2)), &q), Err(Error::ZeroVariance(_))));
        assert!(matches!(cc(&q, &Array2::ones((2, 2))), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn kld_examples() {
        let cfg = MetricConfig::default();
        let fix = FixationMap::from_points(&[(0.0, 0.0), (1.0, 0.0)], 2, 2).unwrap();
        let uniform = Array2::from_elem((2, 2), 1.0);
        assert!((kld(&uniform, &fix, &cfg).unwrap() - 2f64.ln()).abs() < 1e-6);
        // P identical to Q.
        assert!(kld(fix.grid(), &fix, &cfg).unwrap().abs() < 1e-6);
        // Zero prediction mass at a fixation is large but finite.
        let miss = array![[0.0, 1.0], [1.0, 1.0]];
        let single = FixationMap::from_points(&[(0.0, 0.0)], 2, 2).unwrap();
        let v = kld(&miss, &single, &cfg).unwrap();
        assert!(v.is_finite());
        assert!((v - (1.0 / cfg.epsilon).ln()).abs() < 1e-9);
    }

    #[test]
    fn kld_rejects_empty_prediction() {
        let fix = FixationMap::from_points(&[(0.0, 0.0)], 2, 2).unwrap();
        let err = kld(&Array2::zeros((2, 2)), &fix, &MetricConfig::default()).unwrap_err();
        assert!(err.to_string().contains("empty prediction"));
    }

    #[test]
    fn sim_examples() {
        let p = array![[0.2, 0.3], [0.1, 0.4]];
        assert!((sim(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![[0.0, 0.0], [0.0, 2.0]];
        assert_eq!(sim(&a, &b).unwrap(), 0.0);
        let p = array![[0.5, 0.5]];
        let q = array![[1.0, 0.0]];
        assert!((sim(&p, &q).unwrap() - 0.5).abs() < 1e-12);
        assert!(sim(&Array2::zeros((1, 2)), &q).is_err());
    }
}
