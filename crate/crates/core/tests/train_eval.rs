use egogaze::dataset::{generate_synthetic_recording, sample_clips, ClipConfig, ClipSample, SynthSpec};
use egogaze::gaze_maps::fit_center_prior;
use egogaze::metrics::MetricConfig;
use egogaze::train::{
    evaluate_model, validation_split, CenterPriorBaseline, Leaderboard, OracleBaseline, UniformBaseline,
};

fn clips() -> Vec<ClipSample> {
    let mut out = Vec::new();
    for p in 0..2u64 {
        let spec = SynthSpec {
            width: 32,
            height: 32,
            duration_s: 4.0,
            recording_id: format!("rec{p}"),
            path_id: format!("path{p}"),
            ..Default::default()
        };
        let rec = generate_synthetic_recording(&spec, p).unwrap();
        out.extend(sample_clips(&rec, &ClipConfig::default()).unwrap());
    }
    out
}

#[test]
fn oracle_predictor_scores_perfect_cc_and_sim() {
    let c = clips();
    let (row, frames) = evaluate_model(&OracleBaseline { sigma: None }, &c, None, &MetricConfig::default()).unwrap();
    assert_eq!(frames.len(), c.len());
    assert!((row.report.cc.unwrap() - 1.0).abs() < 1e-9);
    assert!((row.report.sim.unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn uniform_predictor_is_at_chance() {
    let c = clips();
    let (row, _) = evaluate_model(&UniformBaseline, &c, None, &MetricConfig::default()).unwrap();
    assert_eq!(row.report.auc_judd, Some(0.5));
    assert_eq!(row.report.auc_degenerate, c.len());
    assert_eq!(row.report.nss, None);
    assert_eq!(row.parameter_count, 0);
}

#[test]
fn center_prior_row_is_deterministic_and_order_free() {
    let c = clips();
    let points: Vec<_> = c.iter().map(|c| (c.gaze_target.x as f64, c.gaze_target.y as f64)).collect();
    let baseline = CenterPriorBaseline(fit_center_prior(&points, 32, 32).unwrap());
    let cfg = MetricConfig::default();
    let (a, _) = evaluate_model(&baseline, &c, None, &cfg).unwrap();
    let mut reversed = c.clone();
    reversed.reverse();
    let (b, _) = evaluate_model(&baseline, &reversed, None, &cfg).unwrap();
    assert_eq!(a, b);
    a.report.check_bounds().unwrap();
    assert!(a.report.nss.unwrap() > 0.0);
}

#[test]
fn empty_test_split_is_an_error() {
    assert!(evaluate_model(&UniformBaseline, &[], None, &MetricConfig::default()).is_err());
}

#[test]
fn leaderboard_ties_are_ordered_by_name() {
    let c = clips();
    let cfg = MetricConfig::default();
    let (mut a, _) = evaluate_model(&OracleBaseline { sigma: None }, &c, None, &cfg).unwrap();
    let mut b = a.clone();
    a.model_name = "zeta".into();
    b.model_name = "alpha".into();
    let (u, _) = evaluate_model(&UniformBaseline, &c, None, &cfg).unwrap();
    let lb = Leaderboard::new(vec![a, u, b]).unwrap();
    let names: Vec<_> = lb.rows().iter().map(|r| r.model_name.as_str()).collect();
    assert_eq!(names, ["alpha", "zeta", "uniform"]);
    let csv = lb.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn validation_holds_out_path_tails() {
    let c = clips();
    let (train, val) = validation_split(&c, 0.25);
    assert_eq!(train.len() + val.len(), c.len());
    for path in ["path0", "path1"] {
        let last_train = train.iter().filter(|&&i| c[i].path_id == path).map(|&i| c[i].window_start).max();
        let first_val = val.iter().filter(|&&i| c[i].path_id == path).map(|&i| c[i].window_start).min();
        assert!(last_train.unwrap() < first_val.unwrap());
    }
    let (train, val) = validation_split(&c, 0.0);
    assert!(val.is_empty() && train.len() == c.len());
}
