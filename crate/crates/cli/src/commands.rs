use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use nixnet::maskgen::{mask_coverage, random_irregular_mask, BinaryMask};
use nixnet::metrics::{miou_masks, ResultTable};
use nixnet::simulate::{
    generate_universal_dataset, load_dataset, sample_mask_params, train_autoencoder,
    AutoencoderModel, UniversalSample,
};
use nixnet::srm::noise_residual_with;
use nixnet::synth::synthetic_images;
use nixnet::train::{evaluate, train_detector_with, TrainConfig, TrainReport};
use nixnet::{Error, Image, MaskParams, NixNet, Variant};
use serde::Serialize;
use serde_json::json;

use crate::config::{require_exists, sibling, RunConfig, Seed};
use crate::report::Report;
use crate::{
    AblateArgs, Cli, Command, DescribeArgs, DetectArgs, EvalArgs, GenMasksArgs, GenSynthArgs,
    GenUtArgs, MaskArgs, ResidualArgs, TrainAeArgs, TrainDetArgs, TrainOpts,
};

const DEFAULT_SIZE: usize = 64;
const MASKS_MANIFEST_VERSION: &str = "nixnet-masks/1";

// Reports of the generating commands leave out the output folder, so reruns
// into another folder produce identical bytes.

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(path) = &cli.config {
        require_exists(path)?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cfg.resolve_seed(cli.seed)?;
    log::debug!("seed {} ({})", seed.value, seed.source);
    match cli.command {
        Command::GenSynth(a) => gen_synth(&cfg, seed, a),
        Command::GenMasks(a) => gen_masks(&cfg, seed, a),
        Command::TrainAe(a) => train_ae(&cfg, seed, a),
        Command::GenUt(a) => gen_ut(&cfg, seed, a),
        Command::TrainDet(a) => train_det(&cfg, seed, a),
        Command::Eval(a) => eval(&cfg, seed, a),
        Command::Detect(a) => detect(&cfg, seed, a),
        Command::Ablate(a) => ablate(&cfg, seed, a),
        Command::Describe(a) => describe(&cfg, seed, a),
        Command::Residual(a) => residual(&cfg, seed, a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn mask_params(cfg: &RunConfig, args: &MaskArgs) -> anyhow::Result<MaskParams> {
    let mut p = cfg.mask.clone();
    if let Some(v) = args.min_coverage {
        p.coverage_range[0] = v;
    }
    if let Some(v) = args.max_coverage {
        p.coverage_range[1] = v;
    }
    p.validate()?;
    Ok(p)
}

/// PNG/JPEG files directly under `dir`, sorted by file name.
fn image_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    require_exists(dir)?;
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(anyhow::Error::new(Error::EmptyDataset)
            .context(format!("no images in {}", dir.display())));
    }
    Ok(files)
}

fn load_images(dir: &Path) -> anyhow::Result<Vec<Image>> {
    let images = image_files(dir)?
        .iter()
        .map(Image::load)
        .collect::<nixnet::Result<Vec<_>>>()?;
    log::info!("loaded {} images from {}", images.len(), dir.display());
    Ok(images)
}

fn load_samples(dir: &Path) -> anyhow::Result<Vec<UniversalSample>> {
    require_exists(dir)?;
    let (_, samples) =
        load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    Ok(samples)
}

/// Training and validation samples; without a validation folder every tenth
/// training sample is held out.
fn train_val(
    train: &Path,
    val: Option<&Path>,
) -> anyhow::Result<(Vec<UniversalSample>, Vec<UniversalSample>)> {
    let all = load_samples(train)?;
    if let Some(val) = val {
        return Ok((all, load_samples(val)?));
    }
    if all.len() < 2 {
        return Err(Error::InvalidParams(
            "holding out validation samples needs at least 2 training samples".into(),
        )
        .into());
    }
    let held = |i: usize| {
        if all.len() < 10 {
            i == all.len() - 1
        } else {
            i % 10 == 9
        }
    };
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for (i, s) in all.iter().enumerate() {
        if held(i) {
            v.push(s.clone());
        } else {
            t.push(s.clone());
        }
    }
    Ok((t, v))
}

fn train_config(cfg: &RunConfig, o: &TrainOpts) -> anyhow::Result<TrainConfig> {
    let mut t = cfg.train.clone();
    if let Some(v) = o.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.lr {
        t.learning_rate = v;
    }
    if let Some(v) = o.patience {
        t.patience = v;
    }
    if let Some(v) = o.gamma {
        t.gamma = v;
    }
    if o.target_miou.is_some() {
        t.target_val_miou = o.target_miou;
    }
    t.validate()?;
    Ok(t)
}

fn log_epoch(r: &nixnet::train::EpochRecord) {
    log::info!(
        "epoch {}: loss {:.5}, val mIoU {:.4} ({:.1}s)",
        r.epoch,
        r.train_loss,
        r.val_miou,
        r.seconds
    );
}

fn gen_synth(cfg: &RunConfig, seed: Seed, a: GenSynthArgs) -> anyhow::Result<()> {
    let size = a.size.or(cfg.image_size).unwrap_or(DEFAULT_SIZE);
    if size == 0 || a.count == 0 {
        return Err(Error::InvalidParams("count and size must be positive".into()).into());
    }
    let images = synthetic_images(a.count, size, size, &cfg.synth, seed.value);
    create_dir(&a.out)?;
    for (i, img) in images.iter().enumerate() {
        img.save_png(a.out.join(format!("{i:06}.png")))?;
    }
    let config = json!({ "count": a.count, "size": size, "synth": cfg.synth });
    Report::new(
        "gen-synth",
        seed,
        config,
        json!({ "images_written": images.len() }),
    )
    .write(&a.out.join("report.json"))?;
    println!("wrote {} images to {}", images.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct MaskEntry {
    file: String,
    coverage: f64,
}

#[derive(Serialize)]
struct MaskManifest {
    version: &'static str,
    count: usize,
    image_size: [usize; 2],
    seed: u64,
    mask_params: MaskParams,
    masks: Vec<MaskEntry>,
}

fn gen_masks(cfg: &RunConfig, seed: Seed, a: GenMasksArgs) -> anyhow::Result<()> {
    let size = a.size.or(cfg.image_size).unwrap_or(DEFAULT_SIZE);
    let params = mask_params(cfg, &a.mask)?;
    let masks = (0..a.count)
        .map(|i| random_irregular_mask(size, size, &sample_mask_params(&params, i)))
        .collect::<nixnet::Result<Vec<BinaryMask>>>()?;
    create_dir(&a.out)?;
    let mut entries = Vec::with_capacity(masks.len());
    for (i, m) in masks.iter().enumerate() {
        let file = format!("{i:06}.png");
        m.save_png(a.out.join(&file))?;
        entries.push(MaskEntry {
            file,
            coverage: mask_coverage(m),
        });
    }
    let mean_coverage =
        entries.iter().map(|e| e.coverage).sum::<f64>() / entries.len().max(1) as f64;
    let manifest = MaskManifest {
        version: MASKS_MANIFEST_VERSION,
        count: entries.len(),
        image_size: [size, size],
        seed: seed.value,
        mask_params: params.clone(),
        masks: entries,
    };
    let path = a.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let config = json!({ "count": a.count, "size": size, "mask": params });
    let metrics = json!({ "masks_written": masks.len(), "mean_coverage": mean_coverage });
    Report::new("gen-masks", seed, config, metrics).write(&a.out.join("report.json"))?;
    println!("wrote {} masks to {}", masks.len(), a.out.display());
    Ok(())
}

fn train_ae(cfg: &RunConfig, seed: Seed, a: TrainAeArgs) -> anyhow::Result<()> {
    let images = load_images(&a.images)?;
    let mut tc = cfg.autoencoder.clone();
    if let Some(v) = a.steps {
        tc.steps = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.lambda {
        tc.lambda = v;
    }
    if let Some(v) = a.base_channels {
        tc.model.base_channels = v;
    }
    let t0 = Instant::now();
    let (g, d, rep) = train_autoencoder(&images, &tc)?;
    let seconds = t0.elapsed().as_secs_f64();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let digest = g.save(Some(&d), &a.out)?;

    let mut csv = String::from("step,d_loss,g_adv_loss,rec_loss\n");
    for (i, ((dl, gl), rl)) in rep
        .d_loss
        .iter()
        .zip(&rep.g_adv_loss)
        .zip(&rep.rec_loss)
        .enumerate()
    {
        csv.push_str(&format!("{i},{dl},{gl},{rl}\n"));
    }
    let csv_path = sibling(&a.out, "losses.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let config = json!({ "images": a.images, "out": a.out, "autoencoder": tc });
    let metrics = json!({
        "image_count": images.len(),
        "initial_rec_mse": rep.initial_rec_error,
        "final_rec_mse": rep.final_rec_error,
        "final_d_loss": rep.d_loss.last(),
        "final_g_adv_loss": rep.g_adv_loss.last(),
        "final_rec_loss": rep.rec_loss.last(),
        "autoencoder_digest": digest,
        "seconds": seconds,
    });
    let report = a.report.unwrap_or_else(|| sibling(&a.out, "report.json"));
    Report::new("train-ae", seed, config, metrics).write(&report)?;
    println!(
        "autoencoder saved to {} (reconstruction MSE {:.5} -> {:.5})",
        a.out.display(),
        rep.initial_rec_error,
        rep.final_rec_error
    );
    Ok(())
}

fn gen_ut(cfg: &RunConfig, seed: Seed, a: GenUtArgs) -> anyhow::Result<()> {
    require_exists(&a.ae)?;
    let images = load_images(&a.images)?;
    let g = AutoencoderModel::load(&a.ae)?;
    let params = mask_params(cfg, &a.mask)?;
    let manifest = generate_universal_dataset(&images, &g, &params, &a.out)?;
    let mean_coverage = manifest.samples.iter().map(|s| s.coverage).sum::<f64>()
        / manifest.samples.len().max(1) as f64;
    let config = json!({ "images": a.images, "ae": a.ae, "mask": params });
    let metrics = json!({
        "samples_written": manifest.count,
        "mean_coverage": mean_coverage,
        "autoencoder_digest": manifest.autoencoder_digest,
    });
    Report::new("gen-ut", seed, config, metrics).write(&a.out.join("report.json"))?;
    println!("wrote {} samples to {}", manifest.count, a.out.display());
    Ok(())
}

fn report_metrics(
    report: &TrainReport,
    train: usize,
    val: usize,
    seconds: f64,
) -> serde_json::Value {
    json!({
        "train_samples": train,
        "val_samples": val,
        "best_epoch": report.best_epoch,
        "best_val_miou": report.best_val_miou,
        "stop_reason": report.stop_reason,
        "checkpoint_digest": report.checkpoint_digest,
        "epochs": report.epochs,
        "seconds": seconds,
    })
}

fn train_det(cfg: &RunConfig, seed: Seed, a: TrainDetArgs) -> anyhow::Result<()> {
    let variant: Variant = a.variant.parse()?;
    let tc = train_config(cfg, &a.opts)?;
    let net_cfg = variant.apply(&cfg.net);
    let (train, val) = train_val(&a.train, a.val.as_deref())?;
    log::info!(
        "training {} on {} samples, validating on {}",
        variant.label(),
        train.len(),
        val.len()
    );
    let t0 = Instant::now();
    let (net, rep) = train_detector_with(&train, &val, &tc, &net_cfg, log_epoch)?;
    let seconds = t0.elapsed().as_secs_f64();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    net.save(&a.out)?;
    let csv_path = sibling(&a.out, "epochs.csv");
    std::fs::write(&csv_path, rep.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let config = json!({
        "train": a.train, "val": a.val, "out": a.out, "variant": variant,
        "train_config": tc, "net": net.config(),
    });
    let report = a.report.unwrap_or_else(|| sibling(&a.out, "report.json"));
    Report::new(
        "train-det",
        seed,
        config,
        report_metrics(&rep, train.len(), val.len(), seconds),
    )
    .write(&report)?;
    println!(
        "detector saved to {} (best val mIoU {:.4} at epoch {})",
        a.out.display(),
        rep.best_val_miou,
        rep.best_epoch
    );
    Ok(())
}

fn eval(_cfg: &RunConfig, seed: Seed, a: EvalArgs) -> anyhow::Result<()> {
    require_exists(&a.data)?;
    let (manifest, samples) = load_dataset(&a.data)?;
    let (mode, result) = match (&a.ckpt, &a.predictions) {
        (Some(ckpt), _) => {
            require_exists(ckpt)?;
            let net = NixNet::load(ckpt)?;
            ("checkpoint", evaluate(&net, &samples, a.batch_size.max(1))?)
        }
        (None, Some(dir)) => {
            require_exists(dir)?;
            let pairs = manifest
                .samples
                .iter()
                .zip(&samples)
                .map(|(entry, s)| {
                    let name = Path::new(&entry.mask).file_name().unwrap_or_default();
                    let pred = BinaryMask::load(dir.join(name))?;
                    if pred.dims() != s.m.dims() {
                        return Err(Error::ShapeMismatch(format!(
                            "prediction {} is {}x{}, ground truth {}x{}",
                            name.to_string_lossy(),
                            pred.height(),
                            pred.width(),
                            s.m.height(),
                            s.m.width()
                        )));
                    }
                    Ok((pred, s.m.clone()))
                })
                .collect::<nixnet::Result<Vec<_>>>()?;
            ("predictions", miou_masks(&pairs)?)
        }
        (None, None) => unreachable!("clap requires --ckpt or --predictions"),
    };
    let per_image: Vec<_> = manifest
        .samples
        .iter()
        .zip(&result.per_image_iou)
        .map(|(e, iou)| json!({ "image": e.image, "iou": iou }))
        .collect();
    let config =
        json!({ "data": a.data, "ckpt": a.ckpt, "predictions": a.predictions, "mode": mode });
    let metrics = json!({ "count": result.count, "miou": result.miou, "per_image": per_image });
    Report::new("eval", seed, config, metrics).write(&a.report)?;
    println!("mIoU {:.4} over {} images", result.miou, result.count);
    Ok(())
}

fn detect(_cfg: &RunConfig, seed: Seed, a: DetectArgs) -> anyhow::Result<()> {
    require_exists(&a.image)?;
    require_exists(&a.ckpt)?;
    let img = Image::load(&a.image)?;
    let net = NixNet::load(&a.ckpt)?;
    let (prob, mask) = nixnet::detect(&net, &img)?;
    create_dir(&a.out_dir)?;
    let stem = a
        .image
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    let mask_path = a.out_dir.join(format!("{stem}.mask.png"));
    let prob_path = a.out_dir.join(format!("{stem}.prob.png"));
    mask.save_png(&mask_path)?;
    prob.save_png(&prob_path)?;
    let mean_p = prob.data().iter().map(|&v| v as f64).sum::<f64>() / prob.data().len() as f64;
    let config = json!({ "image": a.image, "ckpt": a.ckpt, "out_dir": a.out_dir });
    let metrics = json!({
        "height": img.height(),
        "width": img.width(),
        "inpainted_fraction": mask_coverage(&mask),
        "mean_probability": mean_p,
        "mask": mask_path,
        "probability_map": prob_path,
    });
    Report::new("detect", seed, config, metrics)
        .write(&a.out_dir.join(format!("{stem}.detect.json")))?;
    println!("mask written to {}", mask_path.display());
    Ok(())
}

fn ablate(cfg: &RunConfig, seed: Seed, a: AblateArgs) -> anyhow::Result<()> {
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|v| v.parse())
            .collect::<nixnet::Result<_>>()?
    };
    let tc = train_config(cfg, &a.opts)?;
    let (train, val) = train_val(&a.train, a.val.as_deref())?;
    let tests = a
        .tests
        .iter()
        .map(|p| load_samples(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let columns: Vec<String> = a
        .tests
        .iter()
        .map(|p| {
            p.file_name()
                .unwrap_or(p.as_os_str())
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    create_dir(&a.out_dir)?;

    let mut table = ResultTable::new(columns.clone());
    let mut runs = Vec::new();
    for v in &variants {
        log::info!("ablation: training {}", v.label());
        let t0 = Instant::now();
        let (net, rep) = train_detector_with(&train, &val, &tc, &v.apply(&cfg.net), log_epoch)?;
        let ckpt = a.out_dir.join(format!("{}.bin", v.name()));
        net.save(&ckpt)?;
        let scores = tests
            .iter()
            .map(|t| evaluate(&net, t, tc.batch_size).map(|r| r.miou))
            .collect::<nixnet::Result<Vec<f64>>>()?;
        table.push(v.label(), scores.iter().map(|&s| Some(s)).collect());
        runs.push(json!({
            "variant": v,
            "label": v.label(),
            "checkpoint": ckpt,
            "test_miou": columns.iter().zip(&scores).map(|(c, s)| (c.clone(), json!(s))).collect::<serde_json::Map<_, _>>(),
            "training": report_metrics(&rep, train.len(), val.len(), t0.elapsed().as_secs_f64()),
        }));
    }
    let text = table.to_string();
    let table_path = a.out_dir.join("table.txt");
    std::fs::write(&table_path, &text).map_err(|e| Error::io(&table_path, e))?;
    let config = json!({
        "train": a.train, "val": a.val, "tests": a.tests, "out_dir": a.out_dir,
        "variants": variants, "train_config": tc, "net": cfg.net,
    });
    Report::new(
        "ablate",
        seed,
        config,
        json!({ "table": table, "runs": runs }),
    )
    .write(&a.out_dir.join("report.json"))?;
    print!("{text}");
    Ok(())
}

fn describe(cfg: &RunConfig, seed: Seed, a: DescribeArgs) -> anyhow::Result<()> {
    let net = match &a.ckpt {
        Some(path) => {
            require_exists(path)?;
            NixNet::load(path)?
        }
        None => {
            let size = a.size.or(cfg.image_size).unwrap_or(DEFAULT_SIZE);
            let variant: Variant = a.variant.parse()?;
            NixNet::new(
                &variant.apply(&cfg.net).with_input_size(size, size),
                seed.value,
            )?
        }
    };
    print!("{}", net.describe()?);
    Ok(())
}

fn residual(cfg: &RunConfig, seed: Seed, a: ResidualArgs) -> anyhow::Result<()> {
    require_exists(&a.image)?;
    let img = Image::load(&a.image)?;
    let r = noise_residual_with(&img, &cfg.net.srm)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    r.save_png(&a.out)?;
    let config = json!({ "image": a.image, "out": a.out, "srm": cfg.net.srm });
    Report::new("residual", seed, config, json!({ "max_abs": r.max_abs() }))
        .write(&sibling(&a.out, "report.json"))?;
    println!("residual written to {}", a.out.display());
    Ok(())
}
