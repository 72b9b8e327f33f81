use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use egogaze::container::F32Array;
use egogaze::dataset::{
    ingest_raw, list_recordings, load_raw_recording, load_recording, make_split, sample_clips, save_recording,
    ClipConfig, ClipSample, Direction, Recording, SplitSpec, SynthSpec,
};
use egogaze::gaze_maps::{fit_center_prior, CenterPrior};
use egogaze::metrics::{evaluate_all, MetricConfig};
use egogaze::model::{load_checkpoint, save_checkpoint, EcnModel};
use egogaze::train::{
    evaluate_model, ground_truth, train, CenterPriorBaseline, Leaderboard, ModelPredictor, OracleBaseline,
    Predictor, TrainReport, UniformBaseline,
};
use egogaze::viz;
use image::{Rgb, RgbImage};
use log::info;
use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{Baseline, Cli, Command, Models, Subset};

const SPLIT_FILE: &str = "split.json";
const CHECKPOINT_FILE: &str = "model.ckpt";
const REPORT_FILE: &str = "train_report.json";

struct Ctx {
    data: PathBuf,
    out: Option<PathBuf>,
    config: RunConfig,
}

impl Ctx {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            epsilon: self.config.eval.kld_eps,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.train.seed = config.seed;
    let mut ctx = Ctx {
        data: cli.data,
        out: cli.out,
        config,
    };
    match cli.command {
        Command::Ingest(a) => {
            if let Some(s) = a.size {
                ctx.config.synth.size = s;
            }
            ingest(&ctx, &a.raw)
        }
        Command::Synth(a) => {
            let s = &mut ctx.config.synth;
            s.paths = a.paths.unwrap_or(s.paths);
            s.recordings_per_path = a.recordings_per_path.unwrap_or(s.recordings_per_path);
            s.size = a.size.unwrap_or(s.size);
            s.duration_s = a.duration.unwrap_or(s.duration_s);
            synth(&ctx)
        }
        Command::Split(a) => {
            if let Some(r) = a.ratio {
                ctx.config.split.ratio = r;
            }
            split(&ctx)
        }
        Command::Train(a) => {
            let c = &mut ctx.config;
            c.model.preset = a.preset.unwrap_or(c.model.preset);
            c.model.backbone = a.backbone.unwrap_or(c.model.backbone);
            c.train.epochs = a.epochs.unwrap_or(c.train.epochs);
            c.train.batch_size = a.batch_size.unwrap_or(c.train.batch_size);
            c.train.learning_rate = a.lr.unwrap_or(c.train.learning_rate);
            c.train.max_steps = a.max_steps.or(c.train.max_steps);
            train_cmd(&ctx, a.split.as_deref())
        }
        Command::Eval(a) => eval(&ctx, a.split.as_deref(), a.subset, &a.models),
        Command::Predict(a) => predict(&ctx, &a.ckpt, &a.clip),
        Command::Metrics(a) => metrics(&ctx, &a.pred, &a.clip),
        Command::Plot(a) => plot(&ctx, &a),
    }
}

fn ingest(ctx: &Ctx, raw_root: &Path) -> Result<()> {
    let out = ctx.out_or(ctx.data.to_str().unwrap_or("data"));
    let mut manifest = RunManifest::start("ingest", &ctx.config);
    manifest.input(raw_root);
    let dirs: Vec<PathBuf> = if raw_root.join("meta.json").is_file() {
        vec![raw_root.to_path_buf()]
    } else {
        let mut d: Vec<PathBuf> = fs::read_dir(raw_root)
            .with_context(|| format!("reading {}", raw_root.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("meta.json").is_file())
            .collect();
        d.sort();
        d
    };
    ensure!(!dirs.is_empty(), "no raw recordings (meta.json) under {}", raw_root.display());
    let size = ctx.config.synth.size;
    for dir in dirs {
        let raw = load_raw_recording(&dir)?;
        let rec = ingest_raw(&raw, (size, size)).with_context(|| format!("ingesting {}", dir.display()))?;
        save_recording(&rec, &out.join(&rec.id), ctx.config.synth.format)?;
        info!("ingested {} ({} frames)", rec.id, rec.len());
        manifest.output(&rec.id);
    }
    manifest.finish(&out)
}

fn synth(ctx: &Ctx) -> Result<()> {
    let s = &ctx.config.synth;
    ensure!(s.paths >= 1 && s.recordings_per_path >= 1, "need at least one path and recording");
    let out = ctx.out_or(ctx.data.to_str().unwrap_or("data"));
    let mut manifest = RunManifest::start("synth", &ctx.config);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed);
    for p in 0..s.paths {
        for r in 0..s.recordings_per_path {
            let id = format!("path{p:02}_r{r}");
            let spec = SynthSpec {
                recording_id: id.clone(),
                path_id: format!("path{p:02}"),
                direction: if r % 2 == 0 { Direction::Forward } else { Direction::Reverse },
                duration_s: s.duration_s,
                width: s.size,
                height: s.size,
                ..Default::default()
            };
            let rec = egogaze::dataset::generate_synthetic_recording(&spec, rng.next_u64())?;
            save_recording(&rec, &out.join(&id), s.format)?;
            manifest.output(&id);
        }
    }
    info!("wrote {} recordings to {}", s.paths * s.recordings_per_path, out.display());
    manifest.finish(&out)
}

fn recording_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    let dirs = list_recordings(data).with_context(|| format!("listing recordings in {}", data.display()))?;
    ensure!(!dirs.is_empty(), "no recordings under {}", data.display());
    Ok(dirs)
}

/// Path id from a recording's manifest, without decoding its frames.
fn path_id_of(dir: &Path) -> Result<String> {
    let path = dir.join("manifest.json");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    v["path_id"]
        .as_str()
        .map(str::to_string)
        .with_context(|| format!("{} has no path_id", path.display()))
}

fn split(ctx: &Ctx) -> Result<()> {
    let dirs = recording_dirs(&ctx.data)?;
    let ids = dirs.iter().map(|d| path_id_of(d)).collect::<Result<Vec<_>>>()?;
    let spec = make_split(&ids, ctx.config.split.ratio, ctx.config.seed)?;
    let out = ctx.out_or("runs/split");
    fs::create_dir_all(&out)?;
    fs::write(out.join(SPLIT_FILE), serde_json::to_string_pretty(&spec)?)?;
    println!(
        "{} train paths, {} test paths -> {}",
        spec.train_paths.len(),
        spec.test_paths.len(),
        out.join(SPLIT_FILE).display()
    );
    let mut manifest = RunManifest::start("split", &ctx.config);
    manifest.input(&ctx.data);
    manifest.output(SPLIT_FILE);
    manifest.finish(&out)
}

fn read_split(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading split {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing split {}", path.display()))
}

/// Recordings whose path falls in `subset`; every recording without a split.
fn load_subset(data: &Path, split: Option<&SplitSpec>, subset: Subset) -> Result<Vec<Recording>> {
    let mut recs = Vec::new();
    for dir in recording_dirs(data)? {
        let keep = match (split, subset) {
            (None, _) | (_, Subset::All) => true,
            (Some(s), Subset::Train) => s.is_train(&path_id_of(&dir)?),
            (Some(s), Subset::Test) => s.is_test(&path_id_of(&dir)?),
        };
        if keep {
            recs.push(load_recording(&dir)?);
        }
    }
    Ok(recs)
}

fn clips_of(recs: &[Recording], cfg: &ClipConfig) -> Result<Vec<ClipSample>> {
    let mut clips = Vec::new();
    for r in recs {
        clips.extend(sample_clips(r, cfg)?);
    }
    Ok(clips)
}

fn train_cmd(ctx: &Ctx, split_path: Option<&Path>) -> Result<()> {
    let cfg = &ctx.config;
    let model_cfg = cfg.model_config()?;
    let split = split_path.map(read_split).transpose()?;
    let recs = load_subset(&ctx.data, split.as_ref(), Subset::Train)?;
    ensure!(!recs.is_empty(), "no training recordings");
    let res = recs[0].resolution();
    ensure!(
        res == model_cfg.input_size,
        "recordings are {}x{} but the {:?} preset expects {}x{}",
        res.0,
        res.1,
        cfg.model.preset,
        model_cfg.input_size.0,
        model_cfg.input_size.1
    );
    let clips = clips_of(&recs, &cfg.clips)?;
    info!("training on {} clips from {} recordings", clips.len(), recs.len());
    let mut model = EcnModel::new(model_cfg, cfg.seed)?;
    let report = train(&mut model, &clips, &cfg.train)?;

    let out = ctx.out_or("runs/train");
    fs::create_dir_all(&out)?;
    let name = format!("ecn_{}", cfg.model.backbone);
    save_checkpoint(
        &model,
        json!({ "name": name, "seed": cfg.seed, "clips": cfg.clips, "train": cfg.train }),
        &out.join(CHECKPOINT_FILE),
    )?;
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.step_losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(out.join("loss.csv"), csv)?;
    viz::save_png(&viz::loss_curve(&report.step_losses, 480, 320)?, &out.join("loss.png"))?;
    println!(
        "{name}: {} steps, final loss {:.5}, val NSS {}",
        report.step_losses.len(),
        report.step_losses.last().copied().unwrap_or(f64::NAN),
        report.final_val_nss().map_or("n/a".into(), |v| format!("{v:.3}"))
    );

    let mut manifest = RunManifest::start("train", cfg);
    manifest.input(&ctx.data);
    if let Some(p) = split_path {
        manifest.input(p);
    }
    for f in [CHECKPOINT_FILE, REPORT_FILE, "loss.csv", "loss.png"] {
        manifest.output(f);
    }
    manifest.finish(&out)
}

struct Loaded {
    model: EcnModel,
    name: String,
    clips: Option<ClipConfig>,
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<Loaded>> {
    let mut out: Vec<Loaded> = Vec::new();
    for p in paths {
        let (model, meta) = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
        let mut name = meta.extra["name"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| format!("ecn_{}", model.config().kind()));
        if out.iter().any(|m| m.name == name) {
            name = format!("{name}_{}", out.len() + 1);
        }
        let clips = serde_json::from_value(meta.extra["clips"].clone()).ok();
        out.push(Loaded { model, name, clips });
    }
    Ok(out)
}

/// Checkpoints remember their clip configuration; all of them must agree.
fn clip_config(ctx: &Ctx, models: &[Loaded]) -> Result<ClipConfig> {
    let mut cfg = None;
    for m in models {
        let c = m.clips.unwrap_or(ctx.config.clips);
        match cfg {
            None => cfg = Some(c),
            Some(prev) if prev != c => bail!("checkpoints were trained on different clip configurations"),
            _ => {}
        }
    }
    Ok(cfg.unwrap_or(ctx.config.clips))
}

/// Center prior fitted on the query gaze of the training clips.
fn fitted_prior(ctx: &Ctx, split: Option<&SplitSpec>, clips_cfg: &ClipConfig) -> Result<CenterPrior> {
    let recs = load_subset(&ctx.data, split, Subset::Train)?;
    let clips = clips_of(&recs, clips_cfg)?;
    ensure!(clips.len() >= 2, "need at least two training clips to fit the center prior");
    let points: Vec<(f64, f64)> = clips
        .iter()
        .map(|c| (c.gaze_target.x as f64, c.gaze_target.y as f64))
        .collect();
    let (h, w) = clips[0].resolution();
    Ok(fit_center_prior(&points, h, w)?)
}

fn predictors<'a>(
    ctx: &Ctx,
    split: Option<&SplitSpec>,
    models: &'a [Loaded],
    baselines: &[Baseline],
    clips_cfg: &ClipConfig,
) -> Result<Vec<Box<dyn Predictor + 'a>>> {
    let mut out: Vec<Box<dyn Predictor + 'a>> = Vec::new();
    for m in models {
        out.push(Box::new(ModelPredictor {
            name: m.name.clone(),
            model: &m.model,
        }));
    }
    for b in baselines {
        out.push(match b {
            Baseline::CenterPrior => Box::new(CenterPriorBaseline(fitted_prior(ctx, split, clips_cfg)?)),
            Baseline::Uniform => Box::new(UniformBaseline),
            Baseline::Oracle => Box::new(OracleBaseline {
                sigma: ctx.config.eval.gt_sigma,
            }),
        });
    }
    Ok(out)
}

fn eval(ctx: &Ctx, split_path: Option<&Path>, subset: Subset, models: &Models) -> Result<()> {
    let split = split_path.map(read_split).transpose()?;
    let loaded = load_models(&models.ckpt)?;
    let clips_cfg = clip_config(ctx, &loaded)?;
    let recs = load_subset(&ctx.data, split.as_ref(), subset)?;
    let clips = clips_of(&recs, &clips_cfg)?;
    let preds = predictors(ctx, split.as_ref(), &loaded, &models.baseline, &clips_cfg)?;
    let mut rows = Vec::new();
    for p in &preds {
        let (row, _) = evaluate_model(p.as_ref(), &clips, ctx.config.eval.gt_sigma, &ctx.metric_config())?;
        info!("{}: NSS {:?}", row.model_name, row.report.nss);
        rows.push(row);
    }
    let board = Leaderboard::new(rows)?;
    let text = board.to_text();
    println!("{text}");

    let out = ctx.out_or("runs/eval");
    fs::create_dir_all(&out)?;
    fs::write(out.join("leaderboard.csv"), board.to_csv()?)?;
    fs::write(out.join("leaderboard.txt"), &text)?;
    fs::write(out.join("leaderboard.json"), serde_json::to_string_pretty(board.rows())?)?;
    let mut manifest = RunManifest::start("eval", &ctx.config);
    manifest.input(&ctx.data);
    split_path.into_iter().for_each(|p| manifest.input(p));
    models.ckpt.iter().for_each(|p| manifest.input(p));
    for f in ["leaderboard.csv", "leaderboard.txt", "leaderboard.json"] {
        manifest.output(f);
    }
    manifest.finish(&out)
}

/// Finds clip `<recording>@<window start>` in the data root.
fn find_clip(data: &Path, id: &str, cfg: &ClipConfig) -> Result<ClipSample> {
    let (rec_id, start) = id
        .rsplit_once('@')
        .with_context(|| format!("clip id {id:?} is not <recording>@<start>"))?;
    let start: usize = start.parse().with_context(|| format!("bad window start in {id:?}"))?;
    let rec = load_recording(&data.join(rec_id))?;
    sample_clips(&rec, cfg)?
        .into_iter()
        .find(|c| c.window_start == start)
        .with_context(|| format!("recording {rec_id} has no clip starting at frame {start}"))
}

fn heat_image(map: &Array2<f64>) -> RgbImage {
    let peak = map.iter().copied().fold(0.0, f64::max);
    let (h, w) = map.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = if peak > 0.0 { map[[y as usize, x as usize]] / peak } else { 0.0 };
        Rgb(viz::heat_color(v).map(|c| c.round() as u8))
    })
}

fn predict(ctx: &Ctx, ckpt: &Path, clip_id: &str) -> Result<()> {
    let loaded = load_models(std::slice::from_ref(&ckpt.to_path_buf()))?;
    let clips_cfg = clip_config(ctx, &loaded)?;
    let clip = find_clip(&ctx.data, clip_id, &clips_cfg)?;
    let map = loaded[0].model.predict(&clip)?;
    let out = ctx.out_or("runs/predict");
    fs::create_dir_all(&out)?;
    F32Array::from_map(&map).save(&out.join("prediction.f32"))?;
    viz::save_png(&heat_image(&map), &out.join("heatmap.png"))?;
    let overlay = viz::overlay(clip.query_frame(), &map, Some(clip.gaze_target), 0.6)?;
    viz::save_png(&overlay, &out.join("overlay.png"))?;
    let (x, y) = egogaze::train::argmax_xy(&map);
    println!(
        "{clip_id}: peak at ({x}, {y}), gaze at ({:.1}, {:.1})",
        clip.gaze_target.x, clip.gaze_target.y
    );
    let mut manifest = RunManifest::start("predict", &ctx.config);
    manifest.input(ckpt);
    manifest.input(&ctx.data.join(clip_id.rsplit_once('@').map_or(clip_id, |p| p.0)));
    for f in ["prediction.f32", "heatmap.png", "overlay.png"] {
        manifest.output(f);
    }
    manifest.finish(&out)
}

fn metrics(ctx: &Ctx, pred_path: &Path, clip_id: &str) -> Result<()> {
    let map = F32Array::load(pred_path)?.to_map()?;
    let clip = find_clip(&ctx.data, clip_id, &ctx.config.clips)?;
    ensure!(
        map.dim() == clip.resolution(),
        "prediction is {:?} but the clip is {:?}",
        map.dim(),
        clip.resolution()
    );
    let gt = ground_truth(&clip, ctx.config.eval.gt_sigma)?;
    let (_, frames) = evaluate_all(&[map], &[gt], &ctx.metric_config())?;
    let text = serde_json::to_string_pretty(&frames[0])?;
    println!("{text}");
    if let Some(out) = &ctx.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("metrics.json"), &text)?;
        let mut manifest = RunManifest::start("metrics", &ctx.config);
        manifest.input(pred_path);
        manifest.output("metrics.json");
        manifest.finish(out)?;
    }
    Ok(())
}

/// `count` clips spread evenly over the ordered subset.
fn pick_clips(mut clips: Vec<ClipSample>, count: usize) -> Vec<ClipSample> {
    clips.sort_by(|a, b| (&a.source_recording, a.window_start).cmp(&(&b.source_recording, b.window_start)));
    if clips.len() <= count {
        return clips;
    }
    let n = clips.len();
    (0..count).map(|i| clips[i * n / count].clone()).collect()
}

fn plot(ctx: &Ctx, args: &crate::PlotArgs) -> Result<()> {
    let out = ctx.out_or("runs/plot");
    fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::start("plot", &ctx.config);
    if let Some(path) = &args.report {
        let report: TrainReport = serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        viz::save_png(&viz::loss_curve(&report.step_losses, 480, 320)?, &out.join("loss.png"))?;
        manifest.input(path);
        manifest.output("loss.png");
    }
    let models = &args.models;
    if !models.ckpt.is_empty() || !models.baseline.is_empty() {
        ensure!(args.count >= 1, "--count must be at least 1");
        let split = args.split.as_deref().map(read_split).transpose()?;
        let loaded = load_models(&models.ckpt)?;
        let clips_cfg = clip_config(ctx, &loaded)?;
        let recs = load_subset(&ctx.data, split.as_ref(), args.subset)?;
        let clips = pick_clips(clips_of(&recs, &clips_cfg)?, args.count);
        ensure!(!clips.is_empty(), "no clips to plot");
        let preds = predictors(ctx, split.as_ref(), &loaded, &models.baseline, &clips_cfg)?;
        let refs: Vec<&ClipSample> = clips.iter().collect();
        let maps: Vec<Vec<Array2<f64>>> = preds
            .iter()
            .map(|p| p.predict_batch(&refs))
            .collect::<egogaze::Result<_>>()?;
        let mut tiles = Vec::new();
        for (row, clip) in clips.iter().enumerate() {
            for (p, pm) in preds.iter().zip(&maps) {
                let tile = viz::overlay(clip.query_frame(), &pm[row], Some(clip.gaze_target), 0.6)?;
                let name = format!("overlay_{row:02}_{}.png", p.name());
                viz::save_png(&tile, &out.join(&name))?;
                manifest.output(name);
                tiles.push(tile);
            }
        }
        viz::save_png(&viz::montage(&tiles, clips.len(), preds.len())?, &out.join("montage.png"))?;
        manifest.output("montage.png");
        manifest.input(&ctx.data);
        models.ckpt.iter().for_each(|p| manifest.input(p));
        println!(
            "{} clips x {} models -> {}",
            clips.len(),
            preds.len(),
            out.join("montage.png").display()
        );
    }
    manifest.finish(&out)
}
