use candle_core::{DType, Device, Tensor};
use egogaze::dataset::{generate_synthetic_recording, sample_clips, ClipConfig, ClipSample, SynthSpec};
use egogaze::model::{
    load_checkpoint, postprocess, save_checkpoint, BackboneKind, EcnModel, ModelConfig, PostSpec,
};
use egogaze::train::{argmax_xy, map_mse, train, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn clips(size: usize, clip: ClipConfig, duration_s: f64, seed: u64) -> Vec<ClipSample> {
    let spec = SynthSpec {
        width: size,
        height: size,
        duration_s,
        recording_id: format!("rec{seed}"),
        path_id: format!("path{seed}"),
        ..Default::default()
    };
    let rec = generate_synthetic_recording(&spec, seed).unwrap();
    sample_clips(&rec, &clip).unwrap()
}

fn desk_clips(n: usize) -> Vec<ClipSample> {
    let c = clips(64, ClipConfig::default(), 6.0, 3);
    assert!(c.len() >= n);
    c.into_iter().take(n).collect()
}

fn mini_clips() -> Vec<ClipSample> {
    let cfg = ClipConfig {
        window: 16,
        clip_len: 4,
        hop: 4,
    };
    clips(16, cfg, 1.5, 9)
}

fn snapshot(model: &EcnModel, prefix: &str) -> Vec<(String, Vec<f32>)> {
    model
        .trainable_store()
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, v)| {
            let values = v.as_tensor().to_dtype(DType::F32).unwrap().flatten_all().unwrap();
            (n.clone(), values.to_vec1::<f32>().unwrap())
        })
        .collect()
}

#[test]
fn desk_forward_shapes() {
    let model = EcnModel::new(ModelConfig::desk(BackboneKind::X3d), 0).unwrap();
    let c = desk_clips(2);
    let refs: Vec<&ClipSample> = c.iter().collect();
    let feats = model.extract_video_features(&model.clips_tensor(&refs).unwrap()).unwrap();
    let p = model.config().backbone.patch_stride();
    let t = feats.tensor().unwrap();
    assert_eq!(t.dims(), &[2, feats.temporal_len, feats.feature_dim, 64 / p, 64 / p]);

    let st = model.encode_spatiotemporal(&feats, None).unwrap().unwrap();
    let frames: Vec<_> = c.iter().map(|c| c.query_frame()).collect();
    let img = model.encode_query_image(&model.frames_tensor(&frames).unwrap()).unwrap();
    assert_eq!(st.dims(), &[2, model.config().st_channels(), 16, 16]);
    assert_eq!(img.dims(), &[2, model.config().image_channels(), 16, 16]);
    let raw = model.fuse_and_decode(Some(&st), &img).unwrap();
    assert_eq!(raw.dims(), &[2, 64, 64]);
    assert!(feats.slice(feats.temporal_len).is_err());
}

#[test]
fn no_video_features_are_absent() {
    let model = EcnModel::new(ModelConfig::desk(BackboneKind::None), 0).unwrap();
    let c = desk_clips(1);
    let feats = model.extract_video_features(&model.clips_tensor(&[&c[0]]).unwrap()).unwrap();
    assert!(feats.is_absent());
    assert_eq!(feats.token_count(), 0);
    assert!(model.encode_spatiotemporal(&feats, None).unwrap().is_none());
    let map = model.predict(&c[0]).unwrap();
    assert_eq!(map.dim(), (64, 64));
}

#[test]
fn predictions_are_probability_maps() {
    for kind in [BackboneKind::X3d, BackboneKind::None] {
        let model = EcnModel::new(ModelConfig::desk(kind), 1).unwrap();
        let c = desk_clips(3);
        let refs: Vec<&ClipSample> = c.iter().collect();
        for map in model.predict_batch(&refs).unwrap() {
            assert!(map.iter().all(|&v| v >= 0.0 && v.is_finite()));
            assert!((map.sum() - 1.0).abs() < 1e-5, "{kind}: sum {}", map.sum());
        }
    }
}

#[test]
fn same_seed_same_prediction() {
    let c = desk_clips(1);
    let a = EcnModel::new(ModelConfig::desk(BackboneKind::X3d), 4).unwrap().predict(&c[0]).unwrap();
    let b = EcnModel::new(ModelConfig::desk(BackboneKind::X3d), 4).unwrap().predict(&c[0]).unwrap();
    let other = EcnModel::new(ModelConfig::desk(BackboneKind::X3d), 5).unwrap().predict(&c[0]).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, other);
}

#[test]
fn zero_decoder_peaks_at_prior_mean() {
    let model = EcnModel::new(ModelConfig::desk(BackboneKind::None), 0).unwrap();
    for (name, var) in model.trainable_store().params() {
        if name.starts_with("decoder.") {
            var.set(&var.as_tensor().zeros_like().unwrap()).unwrap();
        }
    }
    let c = desk_clips(1);
    let map = model.predict(&c[0]).unwrap();
    let mean = model.prior().mean();
    let (x, y) = argmax_xy(&map);
    assert!((x as f64 - mean[0]).abs() <= 0.5 && (y as f64 - mean[1]).abs() <= 0.5);
}

#[test]
fn every_trainable_parameter_gets_a_gradient() {
    let model = EcnModel::new(ModelConfig::desk(BackboneKind::X3d), 2).unwrap();
    let c = desk_clips(2);
    let refs: Vec<&ClipSample> = c.iter().collect();
    let feats = model.extract_video_features(&model.clips_tensor(&refs).unwrap()).unwrap();
    let slice = feats.slice(feats.temporal_len - 1).unwrap();
    let frames: Vec<_> = c.iter().map(|c| c.query_frame()).collect();
    let pred = model
        .forward_from_slice(slice.as_ref(), &model.frames_tensor(&frames).unwrap())
        .unwrap();
    let target = Tensor::rand(0f32, 1.0, pred.dims(), &Device::Cpu).unwrap();
    let target = target.broadcast_div(&target.sum_keepdim((1, 2)).unwrap()).unwrap();
    let grads = map_mse(&pred, &target).unwrap().backward().unwrap();
    for (name, var) in model.trainable_store().params() {
        let g = grads.get(var.as_tensor()).unwrap_or_else(|| panic!("{name} has no gradient"));
        let norm = g.sqr().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(norm.is_finite(), "{name}");
    }
    for var in model.backbone_store().unwrap().params().values() {
        assert!(grads.get(var.as_tensor()).is_none());
    }
}

#[test]
fn miniature_gradients_match_finite_differences() {
    let model = EcnModel::new(ModelConfig::miniature(), 0).unwrap();
    // Zero-initialized biases put some ReLU inputs exactly on the kink;
    // move every parameter to a generic point first.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for var in model.trainable_store().params().values() {
        let t = var.as_tensor();
        let jitter: Vec<f64> = (0..t.elem_count())
            .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        var.set(&(t + Tensor::from_vec(jitter, t.dims(), &Device::Cpu).unwrap()).unwrap())
            .unwrap();
    }
    let c = mini_clips();
    let refs: Vec<&ClipSample> = c.iter().take(2).collect();
    let batch = model.clips_tensor(&refs).unwrap();
    let feats = model.extract_video_features(&batch).unwrap();
    let slice = feats.slice(feats.temporal_len - 1).unwrap();
    let frames: Vec<_> = refs.iter().map(|c| c.query_frame()).collect();
    let frames = model.frames_tensor(&frames).unwrap();
    let target: Vec<f64> = (0..2 * 16 * 16).map(|_| rng.gen()).collect();
    let target = Tensor::from_vec(target, (2, 16, 16), &Device::Cpu).unwrap();
    let target = target.broadcast_div(&target.sum_keepdim((1, 2)).unwrap()).unwrap();
    let loss = || {
        let pred = model.forward_from_slice(slice.as_ref(), &frames).unwrap();
        map_mse(&pred, &target).unwrap()
    };
    let grads = loss().backward().unwrap();
    let params: Vec<_> = model.trainable_store().params().iter().collect();
    let eps = 1e-6;
    let mut checked = 0;
    for (k, (name, var)) in params.iter().enumerate().take(10) {
        let analytic = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let mut values = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let i = (k * 7) % values.len();
        let orig = values[i];
        let mut at = |v: f64| {
            values[i] = v;
            var.set(&Tensor::from_vec(values.clone(), var.dims(), &Device::Cpu).unwrap()).unwrap();
            loss().to_scalar::<f64>().unwrap()
        };
        let fd = (at(orig + eps) - at(orig - eps)) / (2.0 * eps);
        at(orig);
        let scale = analytic[i].abs().max(fd.abs()).max(1e-8);
        assert!((analytic[i] - fd).abs() / scale < 1e-4, "{name}[{i}]: {} vs {fd}", analytic[i]);
        checked += 1;
    }
    assert_eq!(checked, 10);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let c = desk_clips(2);
    let mut model = EcnModel::new(ModelConfig::desk(BackboneKind::X3d), 6).unwrap();
    let refs: Vec<&ClipSample> = c.iter().collect();
    model.calibrate_backbone(&model.clips_tensor(&refs).unwrap()).unwrap();
    save_checkpoint(&model, serde_json::json!({"note": "test"}), &path).unwrap();
    let (loaded, meta) = load_checkpoint(&path).unwrap();
    assert_eq!(meta.extra["note"], "test");
    assert!(loaded.is_calibrated());
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.backbone_checksum().unwrap(), model.backbone_checksum().unwrap());
    assert_eq!(loaded.predict_batch(&refs).unwrap(), model.predict_batch(&refs).unwrap());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = EcnModel::new(ModelConfig::miniature(), 0).unwrap();
    save_checkpoint(&model, serde_json::Value::Null, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&path).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn training_keeps_backbone_frozen() {
    let c = mini_clips();
    let mut model = EcnModel::new(ModelConfig::miniature(), 0).unwrap();
    let encoders = snapshot(&model, "image.");
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        val_fraction: 0.0,
        ..Default::default()
    };
    train(&mut model, &c, &cfg).unwrap();
    // Calibration only touches buffers; the checksum covers parameters and
    // buffers, so take the reference after the first calibration.
    let calibrated = model.backbone_checksum().unwrap();
    train(&mut model, &c, &cfg).unwrap();
    assert_eq!(model.backbone_checksum().unwrap(), calibrated);
    let after = snapshot(&model, "image.");
    assert!(encoders.iter().zip(&after).any(|(a, b)| a.1 != b.1));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = mini_clips();
    let mut model = EcnModel::new(ModelConfig::miniature(), 1).unwrap();
    let before = snapshot(&model, "");
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        batch_size: 4,
        val_fraction: 0.0,
        ..Default::default()
    };
    let report = train(&mut model, &c, &cfg).unwrap();
    assert!(!report.step_losses.is_empty());
    assert_eq!(before, snapshot(&model, ""));
}

#[test]
fn same_seed_training_is_reproducible() {
    let c = mini_clips();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        val_fraction: 0.3,
        seed: 11,
        ..Default::default()
    };
    let run = || {
        let mut m = EcnModel::new(ModelConfig::miniature(), 3).unwrap();
        train(&mut m, &c, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    let (na, nb) = (a.final_val_nss().unwrap(), b.final_val_nss().unwrap());
    assert!((na - nb).abs() < 1e-3, "{na} vs {nb}");
    assert_eq!(a.step_losses.len(), b.step_losses.len());
}

#[test]
fn empty_training_set_is_an_error() {
    let mut model = EcnModel::new(ModelConfig::miniature(), 0).unwrap();
    assert!(train(&mut model, &[], &TrainConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spike_argmax_survives_positive_scaling(
        y in 4usize..28, x in 4usize..28, height in 0.5f64..5.0, a in 0.1f64..20.0,
    ) {
        let dev = Device::Cpu;
        let mut raw = vec![-3.0f64; 32 * 32];
        raw[y * 32 + x] = height;
        let raw = Tensor::from_vec(raw, (1, 32, 32), &dev).unwrap();
        let prior = Tensor::ones((32, 32), DType::F64, &dev).unwrap();
        let post = PostSpec { blur_sigma: 1.5, prior_weight: 0.0 };
        let base = postprocess(&raw, &prior, &post).unwrap();
        let scaled = postprocess(&(&raw * a).unwrap(), &prior, &post).unwrap();
        let maps = egogaze::model::tensor_to_maps(&Tensor::cat(&[base, scaled], 0).unwrap()).unwrap();
        prop_assert_eq!(argmax_xy(&maps[0]), (x, y));
        prop_assert_eq!(argmax_xy(&maps[1]), (x, y));
        prop_assert!((maps[1].sum() - 1.0).abs() < 1e-9);
    }
}
