use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::json;

use wirepipe::dataset::{derive_seed, read_manifest, synth_scene, write_manifest, LabeledImage, SceneRecord};
use wirepipe::eval::{psnr, psnr_masked, InpaintReport, InpaintReportRow, SegReport};
use wirepipe::imagecore::io::{
    image_bit_depth, read_image, read_mask, write_image, write_mask, write_prob_pfm, BitDepth,
};
use wirepipe::imagecore::ImageBuf;
use wirepipe::inpaint::DiffusionInpainter;
use wirepipe::model::{
    encode_checkpoint, load_checkpoint, train, LrSchedule, OracleSegmenter, Segmenter, TinyConvSegmenter, TrainConfig,
};
use wirepipe::pipeline::{profile_alphas, remove as remove_wires, segment as segment_image, PipelineConfig};

use crate::output::{sidecar, write_atomic, write_bytes_atomic, write_json_atomic, RunClock};
use crate::PipelineArgs;

/// Marks an error as the caller's fault: bad flags, bad config, missing inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<UsageError>()) {
        2
    } else {
        3
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("no such file: {}", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("no such directory: {}", path.display())));
    }
    Ok(())
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require_file(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn validated<T>(r: wirepipe::Result<T>) -> Result<T> {
    r.map_err(|e| usage(e.to_string()))
}

fn pipeline_config(args: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &args.config {
        Some(p) => load_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(p) = args.patch {
        cfg.p_infer = p;
    }
    if args.stride.is_some() {
        cfg.stride = args.stride;
    }
    Ok(cfg)
}

/// `oracle:<mask.png>` replays a mask; anything else is a checkpoint path.
fn load_model(spec: &str) -> Result<Box<dyn Segmenter>> {
    if let Some(mask) = spec.strip_prefix("oracle:") {
        let path = Path::new(mask);
        require_file(path)?;
        let gt = read_mask(path).with_context(|| format!("reading oracle mask {mask}"))?;
        return Ok(Box::new(OracleSegmenter::new(gt)));
    }
    let path = Path::new(spec);
    require_file(path)?;
    let model = load_checkpoint(path).with_context(|| format!("loading checkpoint {spec}"))?;
    Ok(Box::new(model))
}

fn load_input(path: &Path) -> Result<(ImageBuf, BitDepth)> {
    require_file(path)?;
    let img = read_image(path).with_context(|| format!("reading {}", path.display()))?;
    let depth = image_bit_depth(path)?;
    Ok((img, depth))
}

pub fn segment(image: &Path, model: &str, out_mask: &Path, out_prob: Option<&Path>, args: &PipelineArgs) -> Result<()> {
    let clock = RunClock::start();
    let cfg = pipeline_config(args)?;
    validated(cfg.validate())?;
    let (img, _) = load_input(image)?;
    let seg = load_model(model)?;
    let result = segment_image(&img, &*seg, &cfg)?;

    write_atomic(out_mask, |tmp| Ok(write_mask(tmp, &result.mask)?))?;
    let mut outputs = vec![out_mask.to_path_buf()];
    if let Some(p) = out_prob {
        write_atomic(p, |tmp| Ok(write_prob_pfm(tmp, &result.prob)?))?;
        outputs.push(p.to_path_buf());
    }
    println!(
        "{}: {} wire pixels, {}/{} windows refined, {:.3}s",
        image.display(),
        result.mask.count_ones(),
        result.windows_refined,
        result.windows_total,
        result.timings.total
    );
    let mut m = clock.manifest(
        "segment",
        json!(cfg),
        vec![image.to_path_buf(), PathBuf::from(model)],
        outputs,
    );
    m.stats = json!({
        "wire_pixels": result.mask.count_ones(),
        "windows_total": result.windows_total,
        "windows_refined": result.windows_refined,
        "timings": result.timings,
    });
    write_json_atomic(&sidecar(out_mask), &m)
}

pub struct RemoveArgs {
    pub image: PathBuf,
    pub model: String,
    pub out: PathBuf,
    pub out_mask: Option<PathBuf>,
    pub tile: Option<usize>,
    pub overlap: Option<usize>,
    pub onion_d: Option<usize>,
    pub clean: Option<PathBuf>,
    pub pipeline: PipelineArgs,
}

pub fn remove(args: RemoveArgs) -> Result<()> {
    let clock = RunClock::start();
    let mut cfg = pipeline_config(&args.pipeline)?;
    if let Some(t) = args.tile {
        cfg.inpaint_tile = t;
    }
    if let Some(o) = args.overlap {
        cfg.inpaint_overlap = o;
    }
    if let Some(d) = args.onion_d {
        cfg.onion_d = d;
    }
    validated(cfg.validate())?;
    let (img, depth) = load_input(&args.image)?;
    let clean = match &args.clean {
        Some(p) => Some(load_input(p)?.0),
        None => None,
    };
    let seg = load_model(&args.model)?;
    let result = remove_wires(&img, &*seg, &DiffusionInpainter::default(), &cfg)?;

    if result.segmentation.mask.is_empty() {
        let bytes = fs::read(&args.image)?;
        write_bytes_atomic(&args.out, &bytes)?;
    } else {
        write_atomic(&args.out, |tmp| Ok(write_image(tmp, &result.image, depth)?))?;
    }
    let mut outputs = vec![args.out.clone()];
    if let Some(p) = &args.out_mask {
        write_atomic(p, |tmp| Ok(write_mask(tmp, &result.segmentation.mask)?))?;
        outputs.push(p.clone());
    }

    let mut stats = json!({
        "wire_pixels": result.segmentation.mask.count_ones(),
        "windows_refined": result.segmentation.windows_refined,
        "windows_total": result.segmentation.windows_total,
        "tiles_total": result.inpaint.tiles_total,
        "tiles_processed": result.inpaint.tiles_processed,
    });
    println!(
        "{}: {} wire pixels, {}/{} tiles inpainted",
        args.image.display(),
        result.segmentation.mask.count_ones(),
        result.inpaint.tiles_processed,
        result.inpaint.tiles_total
    );
    let mut inputs = vec![args.image.clone(), PathBuf::from(&args.model)];
    if let (Some(clean), Some(path)) = (&clean, &args.clean) {
        let before = psnr(&img, clean)?;
        let after = psnr(&result.image, clean)?;
        let masked = psnr_masked(&result.image, clean, &result.segmentation.mask)?;
        println!("psnr vs clean: {before:.2} dB -> {after:.2} dB");
        stats["psnr_input"] = json!(before);
        stats["psnr_output"] = json!(after);
        stats["psnr_output_masked"] = json!(masked);
        inputs.push(path.clone());
    }
    let mut m = clock.manifest("remove", json!(cfg), inputs, outputs);
    m.stats = stats;
    write_json_atomic(&sidecar(&args.out), &m)
}

pub struct GenSynthArgs {
    pub count: usize,
    pub size: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub wires: (usize, usize),
    pub thickness: (f32, f32),
}

pub fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let clock = RunClock::start();
    let (lo, hi) = args.wires;
    if lo == 0 || lo > hi {
        return Err(usage(format!("invalid wire count range {lo}..={hi}")));
    }
    let (tlo, thi) = args.thickness;
    if !(tlo > 0.0 && tlo <= thi) {
        return Err(usage(format!("invalid thickness range {tlo}..={thi}")));
    }
    // Probe the size once so a bad size fails before any file is written.
    validated(synth_scene(args.size, args.size, lo, args.thickness, args.seed).map(|_| ()))?;

    for sub in ["images", "masks", "clean"] {
        fs::create_dir_all(args.out_dir.join(sub))?;
    }
    let records = (0..args.count)
        .into_par_iter()
        .map(|i| -> Result<SceneRecord> {
            let seed = derive_seed(args.seed, i as u64);
            let n_wires = ChaCha8Rng::seed_from_u64(seed).gen_range(lo..=hi);
            let scene = synth_scene(args.size, args.size, n_wires, args.thickness, seed)?;
            let name = format!("scene_{i:05}.png");
            let rel = |dir: &str| PathBuf::from(dir).join(&name);
            let abs = |dir: &str| args.out_dir.join(dir).join(&name);
            write_atomic(&abs("images"), |t| Ok(write_image(t, &scene.image, BitDepth::Eight)?))?;
            write_atomic(&abs("masks"), |t| Ok(write_mask(t, &scene.mask)?))?;
            write_atomic(&abs("clean"), |t| Ok(write_image(t, &scene.clean, BitDepth::Eight)?))?;
            Ok(SceneRecord {
                image: rel("images"),
                mask: rel("masks"),
                clean: Some(rel("clean")),
                seed,
                params: Some(scene.params),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = args.out_dir.join("manifest.jsonl");
    let mut buf = Vec::new();
    write_manifest(&mut buf, &records)?;
    write_bytes_atomic(&manifest, &buf)?;
    println!("wrote {} scenes to {}", records.len(), args.out_dir.display());

    let cfg = json!({
        "count": args.count,
        "size": args.size,
        "wires": [lo, hi],
        "thickness": [tlo, thi],
    });
    let mut m = clock.manifest("gen-synth", cfg, vec![], vec![args.out_dir.clone()]);
    m.seed = Some(args.seed);
    m.stats = json!({ "scenes": records.len() });
    write_json_atomic(&sidecar(&manifest), &m)
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch: Option<usize>,
    pub patch: Option<usize>,
    pub seed: Option<u64>,
    pub augment: bool,
    pub poly: bool,
    pub max_grad_norm: Option<f64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn train_tiny(args: TrainArgs) -> Result<()> {
    let clock = RunClock::start();
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => load_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.iters {
        cfg.steps = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.patch {
        cfg.patch = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.augment |= args.augment;
    if args.poly {
        cfg.schedule = LrSchedule::Poly { power: 0.9 };
    }
    if let Some(v) = args.max_grad_norm {
        cfg.max_grad_norm = (v != 0.0).then_some(v);
    }
    validated(cfg.validate())?;

    require_file(&args.data)?;
    let base = args.data.parent().unwrap_or(Path::new("."));
    let records = read_manifest(fs::File::open(&args.data)?).map_err(|e| usage(e.to_string()))?;
    if records.is_empty() {
        return Err(usage(format!("{} lists no scenes", args.data.display())));
    }
    let data = records
        .par_iter()
        .map(|r| -> Result<LabeledImage> {
            let r = r.resolve(base);
            require_file(&r.image)?;
            require_file(&r.mask)?;
            Ok(LabeledImage::new(read_image(&r.image)?, read_mask(&r.mask)?)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = TinyConvSegmenter::new(cfg.seed);
    let every = (cfg.steps / 20).max(1);
    let summary = train(&mut model, &data, &cfg, |step, r| {
        if step % every == 0 || step + 1 == cfg.steps {
            eprintln!(
                "step {step:>6}  loss {:.4}  glo {:.4}  loc {:.4}",
                r.total, r.loss_glo, r.loss_loc
            );
        }
    })
    .context("training failed")?;
    write_bytes_atomic(&args.out, &encode_checkpoint(&model))?;
    println!("saved {} parameters to {}", model.params().len(), args.out.display());

    let mut m = clock.manifest(
        "train-tiny",
        json!(cfg),
        vec![args.data.clone()],
        vec![args.out.clone()],
    );
    m.seed = Some(cfg.seed);
    let (head, tail) = summary.head_tail_mean(50).unwrap_or((f64::NAN, f64::NAN));
    m.stats = json!({
        "steps": summary.steps,
        "scenes": data.len(),
        "loss_first": head,
        "loss_last": tail,
        "fallback_samples": summary.fallback_samples,
    });
    write_json_atomic(&sidecar(&args.out), &m)
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    require_dir(dir)?;
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(usage(format!("no PNG files in {}", dir.display())));
    }
    Ok(names)
}

fn matched(names: &[String], dir: &Path) -> Result<()> {
    match names.iter().find(|n| !dir.join(n).is_file()) {
        Some(n) => Err(usage(format!("{} has no counterpart in {}", n, dir.display()))),
        None => Ok(()),
    }
}

enum ReportFormat {
    Csv,
    Json,
}

fn report_format(path: &Path) -> Result<ReportFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("csv") => Ok(ReportFormat::Csv),
        Some("json") => Ok(ReportFormat::Json),
        _ => Err(usage(format!("report {} must end in .csv or .json", path.display()))),
    }
}

pub fn eval_seg(pred_dir: &Path, gt_dir: &Path, report: &Path) -> Result<()> {
    let clock = RunClock::start();
    let format = report_format(report)?;
    let names = png_names(pred_dir)?;
    require_dir(gt_dir)?;
    matched(&names, gt_dir)?;
    let masks = names
        .par_iter()
        .map(|n| Ok((n.clone(), read_mask(pred_dir.join(n))?, read_mask(gt_dir.join(n))?)))
        .collect::<Result<Vec<_>>>()?;
    let rep = SegReport::from_pairs(masks.iter().map(|(n, p, g)| (n.clone(), p, g)))?;
    match format {
        ReportFormat::Csv => write_atomic(report, |t| Ok(rep.write_csv(fs::File::create(t)?)?))?,
        ReportFormat::Json => write_json_atomic(report, &rep)?,
    }
    println!(
        "{} images: IoU {:.4}  F1 {:.4}  precision {:.4}  recall {:.4}",
        rep.rows.len(),
        rep.summary.iou,
        rep.summary.f1,
        rep.summary.precision,
        rep.summary.recall
    );
    for (bucket, iou) in &rep.buckets {
        println!("  {:<6} IoU {iou:.4}", bucket.name());
    }
    let mut m = clock.manifest(
        "eval-seg",
        json!({}),
        vec![pred_dir.to_path_buf(), gt_dir.to_path_buf()],
        vec![report.to_path_buf()],
    );
    m.stats = json!({ "images": rep.rows.len(), "summary": rep.summary });
    write_json_atomic(&sidecar(report), &m)
}

pub fn eval_inpaint(pred_dir: &Path, gt_dir: &Path, mask_dir: Option<&Path>, report: &Path) -> Result<()> {
    let clock = RunClock::start();
    let format = report_format(report)?;
    let names = png_names(pred_dir)?;
    require_dir(gt_dir)?;
    matched(&names, gt_dir)?;
    if let Some(d) = mask_dir {
        require_dir(d)?;
        matched(&names, d)?;
    }
    let rows = names
        .par_iter()
        .map(|n| -> Result<InpaintReportRow> {
            let pred = read_image(pred_dir.join(n))?;
            let gt = read_image(gt_dir.join(n))?;
            let psnr_masked = match mask_dir {
                Some(d) => psnr_masked(&pred, &gt, &read_mask(d.join(n))?)?,
                None => None,
            };
            Ok(InpaintReportRow {
                name: n.clone(),
                psnr: psnr(&pred, &gt).with_context(|| format!("comparing {n}"))?,
                psnr_masked,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rep = InpaintReport::new(rows);
    match format {
        ReportFormat::Csv => write_atomic(report, |t| Ok(rep.write_csv(fs::File::create(t)?)?))?,
        ReportFormat::Json => write_json_atomic(report, &rep)?,
    }
    match rep.mean_psnr_masked {
        Some(mp) => println!(
            "{} images: PSNR {:.2} dB, masked {mp:.2} dB",
            rep.rows.len(),
            rep.mean_psnr
        ),
        None => println!("{} images: PSNR {:.2} dB", rep.rows.len(), rep.mean_psnr),
    }
    let mut inputs = vec![pred_dir.to_path_buf(), gt_dir.to_path_buf()];
    inputs.extend(mask_dir.map(Path::to_path_buf));
    let mut m = clock.manifest("eval-inpaint", json!({}), inputs, vec![report.to_path_buf()]);
    m.stats = json!({ "images": rep.rows.len(), "mean_psnr": rep.mean_psnr, "mean_psnr_masked": rep.mean_psnr_masked });
    write_json_atomic(&sidecar(report), &m)
}

fn collect_images(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            files.extend(png_names(p)?.into_iter().map(|n| p.join(n)));
        } else {
            require_file(p)?;
            files.push(p.clone());
        }
    }
    Ok(files)
}

pub fn profile(
    images: &[PathBuf],
    model: &str,
    alphas: &[f64],
    report: Option<&Path>,
    args: &PipelineArgs,
) -> Result<()> {
    let clock = RunClock::start();
    let cfg = pipeline_config(args)?;
    validated(cfg.validate())?;
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(usage(format!("alpha {a} outside [0, 1]")));
    }
    let files = collect_images(images)?;
    let seg = load_model(model)?;
    let loaded = files
        .iter()
        .map(|f| Ok((f.display().to_string(), read_image(f)?)))
        .collect::<Result<Vec<_>>>()?;
    let reports = profile_alphas(&loaded, &*seg, &cfg, alphas)?;

    println!(
        "{:>8} {:>10} {:>10} {:>10} {:>16}",
        "alpha", "avg s", "min s", "max s", "refined/total"
    );
    for r in &reports {
        println!(
            "{:>8} {:>10.3} {:>10.3} {:>10.3} {:>16}",
            r.alpha,
            r.avg_seconds,
            r.min_seconds,
            r.max_seconds,
            format!("{}/{}", r.windows_refined, r.windows_total)
        );
    }
    let report = report
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("profile.json"));
    write_json_atomic(&report, &reports)?;
    let mut inputs = files;
    inputs.push(PathBuf::from(model));
    let mut m = clock.manifest(
        "profile",
        json!({ "pipeline": cfg, "alphas": alphas }),
        inputs,
        vec![report.clone()],
    );
    m.stats = json!({ "images": loaded.len() });
    write_json_atomic(&sidecar(&report), &m)
}
