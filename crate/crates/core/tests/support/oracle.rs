//! Brute-force reference implementations of the saliency metrics, written
//! directly from their definitions with plain loops over pixels.

#![allow(dead_code, clippy::needless_range_loop)]

/// A row-major `h x w` map and its fixation list as `(row, col)` pixels.
#[derive(Debug, Clone)]
pub struct Case {
    pub h: usize,
    pub w: usize,
    pub pred: Vec<f64>,
    pub fixations: Vec<(usize, usize)>,
}

impl Case {
    fn fixated(&self) -> Vec<bool> {
        let mut m = vec![false; self.h * self.w];
        for &(r, c) in &self.fixations {
            m[r * self.w + c] = true;
        }
        m
    }
}

fn mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    let mut s = 0.0;
    for x in v {
        s += (x - m) * (x - m);
    }
    (s / v.len() as f64).sqrt()
}

/// ROC area with one threshold per distinct fixated value. For each
/// threshold every pixel is scanned to count hits and false alarms.
pub fn auc_judd(case: &Case) -> f64 {
    let fixated = case.fixated();
    let n_fix = fixated.iter().filter(|&&f| f).count() as f64;
    let n_other = case.pred.len() as f64 - n_fix;
    let mut thresholds: Vec<f64> = Vec::new();
    for (i, &f) in fixated.iter().enumerate() {
        if f && !thresholds.contains(&case.pred[i]) {
            thresholds.push(case.pred[i]);
        }
    }
    let mut points = vec![(0.0, 0.0), (1.0, 1.0)];
    for &t in &thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (i, &v) in case.pred.iter().enumerate() {
            if v >= t {
                if fixated[i] {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        points.push((fp / n_other, tp / n_fix));
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    for k in 1..points.len() {
        area += (points[k].0 - points[k - 1].0) * (points[k].1 + points[k - 1].1) / 2.0;
    }
    area
}

/// Pearson correlation from the definitional covariance.
pub fn cc(p: &[f64], q: &[f64]) -> f64 {
    let (mp, mq) = (mean(p), mean(q));
    let mut cov = 0.0;
    for i in 0..p.len() {
        cov += (p[i] - mp) * (q[i] - mq);
    }
    cov /= p.len() as f64;
    cov / (population_std(p) * population_std(q))
}

/// `sum Q ln(Q / (P + eps))` with `Q` the fixation multiplicities over the
/// fixation count and `P` the prediction over its sum.
pub fn kld(case: &Case, eps: f64) -> f64 {
    let total: f64 = case.pred.iter().sum();
    let n = case.fixations.len() as f64;
    let mut counts = vec![0.0; case.pred.len()];
    for &(r, c) in &case.fixations {
        counts[r * case.w + c] += 1.0;
    }
    let mut s = 0.0;
    for i in 0..counts.len() {
        if counts[i] > 0.0 {
            let q = counts[i] / n;
            s += q * (q / (case.pred[i] / total + eps)).ln();
        }
    }
    s
}

pub fn sim(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] / sp).min(q[i] / sq);
    }
    s
}

/// Mean z-score over the fixation list; duplicates count once each.
pub fn nss(case: &Case) -> f64 {
    let (m, sd) = (mean(&case.pred), population_std(&case.pred));
    let mut s = 0.0;
    for &(r, c) in &case.fixations {
        s += (case.pred[r * case.w + c] - m) / sd;
    }
    s / case.fixations.len() as f64
}
