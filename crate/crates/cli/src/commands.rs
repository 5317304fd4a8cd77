use std::path::{Path, PathBuf};

use anyhow::Context;

use d4d_core::denoiser::{DenoiserConfig, DenoiserNet};
use d4d_core::diffusion::{
    self, generate_dataset, read_checkpoint, write_checkpoint, DiffusionCheckpoint, DiffusionConfig, Preset,
    TrainOptions, TrainState, VarianceKind,
};
use d4d_core::featspace::{embed_dataset, Channel, DistanceReport, FeatureExtractor};
use d4d_core::mde::{
    self, difference_map, read_mde_checkpoint, write_mde_checkpoint, MdeCheckpoint, MdeConfig, MdeNet, MdeTrainOptions,
};
use d4d_core::optim::{epoch_means, loss_log_csv, AdamWConfig};
use d4d_core::render;
use d4d_core::rgbd::{
    merge_s3, read_dataset, read_manifest, synth_dataset, write_dataset, write_manifest, Provenance, RgbdDataset, SceneParams,
};
use d4d_core::schedules::{ScheduleKind, ScheduleSpec};

use crate::{
    usage, ChannelName, ConfigName, EvalArgs, FeatdistArgs, GenerateArgs, MergeArgs, RenderArgs, RenderMode,
    SynthArgs, TrainDiffusionArgs, TrainMdeArgs, Variance,
};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Sidecar manifest path: `<dataset>.manifest.jsonl`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    with_suffix(dataset, ".manifest.jsonl")
}

fn save_dataset(ds: &RgbdDataset, out: &Path) -> anyhow::Result<()> {
    write_dataset(ds, out)?;
    write_manifest(ds, manifest_path(out))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads a dataset and, when its sidecar manifest is present and consistent,
/// restores the per-sample generator seeds recorded there.
fn load(path: &Path) -> anyhow::Result<RgbdDataset> {
    let ds = read_dataset(path)?;
    let mpath = manifest_path(path);
    if !mpath.exists() {
        return Ok(ds);
    }
    let records = read_manifest(&mpath)?;
    let consistent = records.len() == ds.len()
        && records.iter().zip(ds.samples()).enumerate().all(|(i, (r, s))| r.index == i && r.provenance == s.provenance);
    if !consistent {
        return Err(anyhow::anyhow!("manifest {} does not match its dataset", mpath.display()));
    }
    let (w, h, depth) = (ds.width(), ds.height(), ds.max_depth_m());
    let samples = ds
        .into_samples()
        .into_iter()
        .zip(&records)
        .map(|(s, r)| match r.seed {
            Some(seed) => s.with_seed(seed),
            None => s,
        })
        .collect();
    Ok(RgbdDataset::from_samples(w, h, depth, samples)?)
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if a.res.0 < 4 || a.res.1 < 4 {
        return Err(usage(format!("--res {}x{} is too small", a.res.0, a.res.1)));
    }
    if !(a.max_depth > 0.0) {
        return Err(usage("--max-depth must be positive"));
    }
    if !(a.depth_scale > 0.0 && a.depth_scale <= 1.0) {
        return Err(usage("--depth-scale must lie in (0, 1]"));
    }
    let ds = synth_dataset(a.count, a.res, a.max_shapes, a.seed, a.max_depth, &SceneParams::scaled(a.depth_scale))?;
    save_dataset(&ds, &a.out)?;
    println!("wrote {} samples {}x{} to {}", ds.len(), a.res.0, a.res.1, a.out.display());
    Ok(())
}

fn diffusion_config(a: &TrainDiffusionArgs, resolution: (usize, usize)) -> anyhow::Result<DiffusionConfig> {
    let preset = match a.config {
        ConfigName::S1 => Preset::S1,
        ConfigName::S2 => Preset::S2,
    };
    let mut schedule = ScheduleSpec::default_for(preset.schedule(), a.steps);
    match &mut schedule {
        ScheduleSpec::Linear { beta_start, beta_end, .. } => {
            if a.cosine_offset.is_some() || a.beta_clip.is_some() {
                return Err(usage("--cosine-offset and --beta-clip apply to s2 only"));
            }
            *beta_start = a.beta_start.unwrap_or(*beta_start);
            *beta_end = a.beta_end.unwrap_or(*beta_end);
        }
        ScheduleSpec::Cosine { offset, beta_clip, .. } => {
            if a.beta_start.is_some() || a.beta_end.is_some() {
                return Err(usage("--beta-start and --beta-end apply to s1 only"));
            }
            *offset = a.cosine_offset.unwrap_or(*offset);
            *beta_clip = a.beta_clip.unwrap_or(*beta_clip);
        }
    }
    schedule.build::<f64>().map_err(|e| usage(e.to_string()))?;
    let mut cfg = DiffusionConfig::new(preset.loss(), schedule, resolution, a.seed).map_err(|e| usage(e.to_string()))?;
    cfg.variance = match a.variance {
        Variance::Posterior => VarianceKind::Posterior,
        Variance::Beta => VarianceKind::Beta,
    };
    Ok(cfg)
}

pub fn train_diffusion(a: TrainDiffusionArgs) -> anyhow::Result<()> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let data = load(&a.data)?;
    let cfg = diffusion_config(&a, data.resolution())?;
    let sched = cfg.schedule.build::<f32>()?;
    let net = DenoiserNet::<f32>::new(DenoiserConfig::new(cfg.steps()), a.seed);
    let mut state = TrainState::new(net, AdamWConfig::default());
    let opts =
        TrainOptions { epochs: a.epochs, batch_size: a.batch_size, base_lr: a.lr, milestones: a.milestones, decay: a.decay };
    let log = diffusion::train(&mut state, &cfg, &sched, &data, &opts)?;
    let ck = DiffusionCheckpoint::from_model(cfg, &state.model, data.max_depth_m());
    write_checkpoint(&ck, &a.out)?;
    write_text(&a.loss_log.unwrap_or_else(|| with_suffix(&a.out, ".loss.csv")), &loss_log_csv(&log))?;
    if let Some(last) = epoch_means(&log).last() {
        println!("trained {} epochs, final epoch loss {last:.6}", a.epochs);
    }
    Ok(())
}

/// Provenance tag for samples drawn from `cfg`: the matching preset, or the
/// preset sharing its schedule.
pub fn provenance_for(cfg: &DiffusionConfig) -> Provenance {
    match cfg.canonical() {
        Some(Preset::S1) => Provenance::S1,
        Some(Preset::S2) => Provenance::S2,
        None => match cfg.schedule.kind() {
            ScheduleKind::Linear => Provenance::S1,
            ScheduleKind::Cosine => Provenance::S2,
        },
    }
}

pub fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let ck = read_checkpoint(&a.checkpoint)?;
    let model = ck.model::<f32>()?;
    let sched = ck.config.schedule.build::<f32>()?;
    let prov = provenance_for(&ck.config);
    let ds = generate_dataset(&ck.config, &sched, &model, a.count, a.seed, ck.max_depth_m, prov)?;
    save_dataset(&ds, &a.out)?;
    println!("wrote {} {} samples to {}", ds.len(), prov.name(), a.out.display());
    Ok(())
}

pub fn merge(a: MergeArgs) -> anyhow::Result<()> {
    let s1 = load(&a.s1)?;
    let s2 = load(&a.s2)?;
    let (original, include) = match &a.original {
        Some(p) => (load(p)?, true),
        None => (RgbdDataset::new(s1.width(), s1.height(), s1.max_depth_m()), false),
    };
    let ds = merge_s3(&original, &s1, &s2, a.add, include, a.seed)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} samples ({} original, {} s1, {} s2) to {}",
        ds.len(),
        ds.count_of(Provenance::Original),
        ds.count_of(Provenance::S1),
        ds.count_of(Provenance::S2),
        a.out.display()
    );
    Ok(())
}

pub fn train_mde(a: TrainMdeArgs) -> anyhow::Result<()> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let data = load(&a.data)?;
    let (w, h) = data.resolution();
    if w % 4 != 0 || h % 4 != 0 {
        return Err(usage(format!("training resolution {w}x{h} must be divisible by 4")));
    }
    let mut net = MdeNet::<f32>::new(MdeConfig::default(), a.seed);
    let opts = MdeTrainOptions { batch_size: a.batch_size, base_lr: a.lr, ..MdeTrainOptions::new(a.epochs, a.seed) };
    let log = mde::train_mde(&mut net, &data, &opts)?;
    let ck = MdeCheckpoint::from_model(&net, (w, h), data.max_depth_m(), a.seed);
    write_mde_checkpoint(&ck, &a.out)?;
    write_text(&a.loss_log.unwrap_or_else(|| with_suffix(&a.out, ".loss.csv")), &loss_log_csv(&log))?;
    if let Some(last) = epoch_means(&log).last() {
        println!("trained {} epochs, final epoch loss {last:.6}", a.epochs);
    }
    Ok(())
}

fn working_resolution(ck: &MdeCheckpoint, data: &RgbdDataset) -> Option<(usize, usize)> {
    (ck.working != data.resolution()).then_some(ck.working)
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let ck = read_mde_checkpoint(&a.checkpoint)?;
    let net = ck.model::<f32>()?;
    let data = load(&a.data)?;
    let report = mde::evaluate(&net, &data, working_resolution(&ck, &data))?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&a.out, &json)?;
    let m = report.metrics;
    println!(
        "rmse {:.4} m, mae {:.4} m, abs_rel {:.4}, delta1 {:.4}, delta2 {:.4}, delta3 {:.4}",
        m.rmse, m.mae, m.abs_rel, m.delta1, m.delta2, m.delta3
    );
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn featdist(a: FeatdistArgs) -> anyhow::Result<()> {
    let da = load(&a.a)?;
    let db = load(&a.b)?;
    let channel = match a.channel {
        ChannelName::Rgb => Channel::Rgb,
        ChannelName::Depth => Channel::Depth,
    };
    let ex = FeatureExtractor::new(a.extractor_seed);
    let ea = embed_dataset(&da, &ex, channel, a.label_a.unwrap_or_else(|| stem(&a.a)))?;
    let eb = embed_dataset(&db, &ex, channel, a.label_b.unwrap_or_else(|| stem(&a.b)))?;
    let report = DistanceReport::between(&ea, &eb, channel, ex.seed())?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&a.out, &json)?;
    println!("{} vs {} ({}): ed {:.6}, hd {:.6}", ea.source, eb.source, channel.name(), report.ed, report.hd);
    Ok(())
}

pub fn render(a: RenderArgs) -> anyhow::Result<()> {
    let data = load(&a.data)?;
    let Some(sample) = data.samples().get(a.index) else {
        return Err(usage(format!("--index {} out of range for {} samples", a.index, data.len())));
    };
    let img = match a.mode {
        RenderMode::Rgb => render::render_rgb(sample),
        RenderMode::Depth => render::render_depth(sample),
        RenderMode::Diff => {
            let path = a.checkpoint.as_ref().ok_or_else(|| usage("--mode diff needs --checkpoint"))?;
            let ck = read_mde_checkpoint(path)?;
            let net = ck.model::<f32>()?;
            let one = RgbdDataset::from_samples(data.width(), data.height(), data.max_depth_m(), vec![sample.clone()])?;
            let pred = mde::predict_depths(&net, &one, working_resolution(&ck, &one))?.remove(0);
            let scale = data.max_depth_m();
            let y: Vec<f32> = sample.depth().iter().map(|&v| v * scale).collect();
            let y_hat: Vec<f32> = pred.iter().map(|&v| v * scale).collect();
            let (map, max) = difference_map(&y, &y_hat)?;
            println!("max abs difference {max:.4} m");
            render::render_difference(&map, max, data.width(), data.height())?
        }
    };
    img.write_ppm(&a.out)?;
    Ok(())
}
