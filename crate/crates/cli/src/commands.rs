//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};

use spoint::adaptation::{adapted_points, self_label, AdaptConfig, SelfLabelConfig};
use spoint::classical::{heatmap_to_points, ClassicalKind, DetectorParams};
use spoint::evalsuite::bench::{
    classical_detector, detector_reports_csv, detector_reports_table, make_warped_pairs, random_descriptors, run_detector_benchmark,
    run_matching_benchmark, run_synthetic_benchmark, DetectorProtocol, MatchingProtocol, PointDetector, WarpedPair,
};
use spoint::evalsuite::{estimate_homography, match_nn, RansacConfig};
use spoint::geometry::{write_htxt, HomographyRanges};
use spoint::imaging::{add_noise, noise_blend, random_noise_image, read_pgm, write_pgm, ImageGray, NoiseBattery, NoiseKind, NoiseSpec};
use spoint::neural::decode::descriptor_sample;
use spoint::neural::{init_params, load_weights, save_weights, train_magicpoint, train_superpoint, ArchConfig, LabeledImage, NeuralDetector, TrainConfig};
use spoint::parallel::parallel_map;
use spoint::points::PointSet;
use spoint::rng::{child, derive_seed};
use spoint::synthdata::{dump_samples, parse_mix, render_composite, render_square, ShapeSample, StreamConfig, SynthStream};

use crate::config::{ConfigError, RunConfig};
use crate::overlay;

pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub threads: usize,
}

/// Salts separating the random streams of the evaluation commands.
const EVAL_IMAGES: u64 = 0xe7a1;
const EVAL_PAIRS: u64 = 0x9a125;
const NOISE_SALT: u64 = 0x4015e;

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `*.pgm` files of a directory in name order.
pub fn list_pgm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .pgm images in {}", dir.display());
    }
    Ok(files)
}

fn read_images(dir: &Path) -> Result<Vec<ImageGray>> {
    list_pgm(dir)?.iter().map(|p| read_pgm(p).with_context(|| format!("reading {}", p.display()))).collect()
}

fn load_detector(path: &Path) -> Result<NeuralDetector> {
    let store = load_weights(path).with_context(|| format!("loading weights {}", path.display()))?;
    Ok(NeuralDetector::new(store)?)
}

fn ranges_named(name: &str) -> Result<HomographyRanges> {
    match name {
        "adaptation" => Ok(HomographyRanges::adaptation()),
        "training" => Ok(HomographyRanges::training()),
        _ => Err(config_err(format!("unknown homography ranges `{name}` (adaptation|training)"))),
    }
}

/// Images of an evaluation section: `images` directory if given, otherwise `count` composites.
fn eval_images(ctx: &Ctx, section: &str) -> Result<Vec<ImageGray>> {
    let c = &ctx.cfg;
    if let Some(dir) = c.opt_path(&format!("{section}.images")) {
        return read_images(&dir);
    }
    let count: usize = c.get(&format!("{section}.count"), 50)?;
    let w: usize = c.get(&format!("{section}.width"), 96)?;
    let h: usize = c.get(&format!("{section}.height"), 96)?;
    let seed = derive_seed(ctx.seed, EVAL_IMAGES);
    Ok(parallel_map(count, ctx.threads, |i| render_composite(w, h, &mut child(seed, i as u64))))
}

fn neural_points(det: &NeuralDetector, img: &ImageGray, threshold: f32, nms: f64, top_k: usize) -> spoint::Result<PointSet> {
    Ok(heatmap_to_points(&det.heatmap(img)?, threshold, nms, top_k))
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let out = c.path("synth.out")?;
    let count: usize = c.req("synth.count")?;
    let w: usize = c.get("synth.width", 96)?;
    let h: usize = c.get("synth.height", 96)?;
    match c.raw("synth.kind").unwrap_or("shapes") {
        "shapes" => {
            let mut sc = StreamConfig::new(w, h, ctx.seed);
            sc.mix = parse_mix(c.raw("synth.mix").unwrap_or("uniform"))?;
            if c.flag("synth.noise", false)? {
                sc.noise = Some(NoiseBattery::default());
            }
            if c.flag("synth.augment", false)? {
                sc.augment = Some(HomographyRanges::training());
            }
            let stream = SynthStream::new(sc)?;
            let samples = parallel_map(count, ctx.threads, |i| stream.sample_at(i as u64));
            dump_samples(&out, &samples)?;
        }
        "composite" => {
            fs::create_dir_all(&out)?;
            let images = parallel_map(count, ctx.threads, |i| render_composite(w, h, &mut child(ctx.seed, i as u64)));
            for (i, img) in images.iter().enumerate() {
                write_pgm(&out.join(format!("{i:06}.pgm")), img)?;
            }
        }
        k => return Err(config_err(format!("unknown synth.kind `{k}` (shapes|composite)"))),
    }
    eprintln!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn train_config(ctx: &Ctx, section: &str, iterations: u64) -> Result<TrainConfig> {
    let c = &ctx.cfg;
    let k = |name: &str| format!("{section}.{name}");
    let mut tc = TrainConfig::new(iterations, c.get(&k("batch"), 8)?, ctx.seed);
    tc.adam.lr = c.get(&k("lr"), tc.adam.lr)?;
    tc.threads = ctx.threads;
    if c.has(&k("log_every")) {
        tc.log_every = c.req(&k("log_every"))?;
    }
    if c.has(&k("checkpoint_every")) {
        tc.checkpoint_every = c.req(&k("checkpoint_every"))?;
    }
    tc.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(tc)
}

pub fn train_mp(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let out = c.path("magicpoint.out")?;
    let iterations: u64 = c.req("magicpoint.iterations")?;
    let mut tc = train_config(ctx, "magicpoint", iterations)?;
    tc.log_path = Some(c.opt_path("magicpoint.log").unwrap_or_else(|| out.with_extension("csv")));
    if tc.checkpoint_every > 0 {
        tc.checkpoint_dir = Some(c.opt_path("magicpoint.checkpoint_dir").unwrap_or_else(|| out.parent().unwrap_or(Path::new(".")).to_path_buf()));
    }
    let mut sc = StreamConfig::new(c.get("magicpoint.width", 96)?, c.get("magicpoint.height", 96)?, ctx.seed);
    sc.mix = parse_mix(c.raw("magicpoint.mix").unwrap_or("uniform"))?;
    if c.flag("magicpoint.noise", true)? {
        sc.noise = Some(NoiseBattery::default());
    }
    if c.flag("magicpoint.augment", true)? {
        sc.augment = Some(HomographyRanges::training());
    }
    let init = match c.opt_path("magicpoint.init") {
        Some(p) => load_weights(&p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let arch = ArchConfig::preset(c.raw("magicpoint.preset").unwrap_or("micro")).map_err(|e| config_err(e.to_string()))?;
            init_params(&arch, false, ctx.seed)?
        }
    };
    create_parent(&out)?;
    create_parent(tc.log_path.as_ref().expect("set above"))?;
    let trained = train_magicpoint(init, &sc, &tc)?;
    save_weights(&out, &trained)?;
    eprintln!("trained {iterations} iterations, weights in {}", out.display());
    Ok(())
}

pub fn adapt_label(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let images = read_images(&c.path("adapt.images")?)?;
    let det = load_detector(&c.path("adapt.weights")?)?;
    let out = c.path("adapt.out")?;
    let rounds: usize = c.get("adapt.rounds", 1)?;
    let train_iterations: u64 = c.get("adapt.train_iterations", 0)?;
    if rounds > 1 && train_iterations == 0 {
        return Err(config_err("adapt.train_iterations must be > 0 when adapt.rounds > 1"));
    }
    let mut ac = AdaptConfig {
        n_homographies: c.get("adapt.n_homographies", 100)?,
        detect_threshold: c.get("adapt.threshold", 0.015)?,
        nms_radius: c.get("adapt.nms", 4.0)?,
        top_k: c.get("adapt.top_k", 0)?,
        border_margin: c.get("adapt.border_margin", 3.0)?,
        threads: ctx.threads,
        ..AdaptConfig::default()
    };
    if c.flag("adapt.multiscale", false)? {
        ac = ac.with_default_scales();
    }
    ac.validate().map_err(|e| config_err(e.to_string()))?;
    let train = if train_iterations > 0 {
        let mut tc = train_config(ctx, "adapt", train_iterations)?;
        if c.flag("adapt.noise", true)? {
            tc.noise = Some(NoiseBattery::default());
        }
        Some(tc)
    } else {
        None
    };
    let slc = SelfLabelConfig { adapt: ac, rounds, seed: ctx.seed, train };
    let outcome = self_label(&images, &det, &slc, Some(&out))?;
    if slc.train.is_some() {
        for (r, d) in outcome.detectors.iter().enumerate() {
            save_weights(&out.join(format!("round_{}", r + 1)).join("detector.spw"), &d.store)?;
        }
    }
    let n: usize = outcome.labels.last().map_or(0, |l| l.iter().map(PointSet::len).sum());
    eprintln!("labeled {} images over {rounds} round(s), {n} points in the last round", images.len());
    Ok(())
}

fn labeled_dataset(images_dir: &Path, labels_dir: &Path) -> Result<Vec<LabeledImage>> {
    list_pgm(images_dir)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let lp = labels_dir.join(format!("{i:06}.pts"));
            let points = PointSet::read(&lp).with_context(|| format!("reading labels {}", lp.display()))?;
            Ok(LabeledImage { image: read_pgm(p)?, points })
        })
        .collect()
}

pub fn train_sp(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let data = labeled_dataset(&c.path("superpoint.images")?, &c.path("superpoint.labels")?)?;
    let base_path = c.path("superpoint.weights")?;
    let base = load_weights(&base_path).with_context(|| format!("loading {}", base_path.display()))?;
    let out = c.path("superpoint.out")?;
    let iterations: u64 = c.req("superpoint.iterations")?;
    let mut tc = train_config(ctx, "superpoint", iterations)?;
    tc.loss.lambda = c.get("superpoint.lambda", tc.loss.lambda)?;
    tc.loss.lambda_d = c.get("superpoint.lambda_d", tc.loss.lambda_d)?;
    tc.loss.m_p = c.get("superpoint.m_p", tc.loss.m_p)?;
    tc.loss.m_n = c.get("superpoint.m_n", tc.loss.m_n)?;
    tc.loss.validate().map_err(|e| config_err(e.to_string()))?;
    if c.flag("superpoint.noise", true)? {
        tc.noise = Some(NoiseBattery::default());
    }
    tc.log_path = Some(c.opt_path("superpoint.log").unwrap_or_else(|| out.with_extension("csv")));
    if tc.checkpoint_every > 0 {
        tc.checkpoint_dir = out.parent().map(Path::to_path_buf);
    }
    let default_dim = ArchConfig::infer(&base).map(|a| a.descriptor_dim)?;
    let dim: usize = c.get("superpoint.descriptor_dim", default_dim)?;
    create_parent(&out)?;
    create_parent(tc.log_path.as_ref().expect("set above"))?;
    let trained = train_superpoint(base, &data, &tc, dim)?;
    save_weights(&out, &trained)?;
    eprintln!("trained {iterations} iterations on {} labeled images, weights in {}", data.len(), out.display());
    Ok(())
}

pub fn detect(ctx: &Ctx, model: &str, images: &[PathBuf], out: &Path) -> Result<()> {
    let c = &ctx.cfg;
    let nms: f64 = c.get("detect.nms", 4.0)?;
    let top_k: usize = c.get("detect.top_k", 300)?;
    let threshold: f32 = c.get("detect.threshold", 0.015)?;
    let run: Box<PointDetector> = match ClassicalKind::from_name(model) {
        Some(kind) => Box::new(classical_detector(kind, DetectorParams::default(), nms, top_k)),
        None => {
            let det = load_detector(Path::new(model))?;
            Box::new(move |img: &ImageGray| neural_points(&det, img, threshold, nms, top_k))
        }
    };
    fs::create_dir_all(out)?;
    for path in images {
        let img = read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
        let pts = run(&img)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        pts.write(&out.join(format!("{stem}.pts")))?;
        write_pgm(&out.join(format!("{stem}_overlay.pgm")), &overlay::crosses(&img, &pts.positions()))?;
        println!("{}: {} points", path.display(), pts.len());
    }
    Ok(())
}

fn features(det: &NeuralDetector, img: &ImageGray, threshold: f32, nms: f64, max_points: usize) -> spoint::Result<(PointSet, Vec<Vec<f32>>)> {
    let (hm, map) = det.heatmap_and_descriptors(img)?;
    let pts = heatmap_to_points(&hm, threshold, nms, max_points);
    let desc = descriptor_sample(&map, &pts)?;
    Ok((pts, desc))
}

fn require_descriptor(det: &NeuralDetector, path: &Path) -> Result<()> {
    if !det.has_descriptor() {
        bail!("{} has no descriptor head", path.display());
    }
    Ok(())
}

pub fn match_pair(ctx: &Ctx, weights: &Path, a: &Path, b: &Path, out: &Path) -> Result<()> {
    let c = &ctx.cfg;
    let det = load_detector(weights)?;
    require_descriptor(&det, weights)?;
    let threshold: f32 = c.get("match.threshold", 0.015)?;
    let nms: f64 = c.get("match.nms", 4.0)?;
    let max_points: usize = c.get("match.max_points", 1000)?;
    let ransac = RansacConfig { threshold: c.get("match.ransac_threshold", 3.0)?, seed: ctx.seed, ..RansacConfig::default() };
    let ia = read_pgm(a).with_context(|| format!("reading {}", a.display()))?;
    let ib = read_pgm(b).with_context(|| format!("reading {}", b.display()))?;
    let (pa, da) = features(&det, &ia, threshold, nms, max_points)?;
    let (pb, db) = features(&det, &ib, threshold, nms, max_points)?;
    if pa.is_empty() || pb.is_empty() {
        bail!("no interest points detected ({} / {})", pa.len(), pb.len());
    }
    let m = match_nn(&da, &db)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("matches.csv"), m.to_csv(&pa, &pb))?;
    let pairs = m.point_pairs(&pa, &pb);
    let est = estimate_homography(&pairs, &ransac).context("homography estimation failed")?;
    write_htxt(&out.join("estimate.htxt"), &[est.h])?;
    write_pgm(&out.join("side_by_side.pgm"), &overlay::side_by_side(&ia, &ib, &pairs, &est.inliers))?;
    println!("{} matches, {} inliers", m.matches.len(), est.inliers.iter().filter(|&&x| x).count());
    Ok(())
}

pub fn eval_detector(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let out = c.path("eval_detector.out")?;
    let protocol = DetectorProtocol {
        eps: c.get("eval_detector.eps", 3.0)?,
        top_k: c.get("eval_detector.top_k", 300)?,
        nms_radius: c.get("eval_detector.nms", 4.0)?,
        threads: ctx.threads,
        seed: ctx.seed,
    };
    let threshold: f32 = c.get("eval_detector.threshold", 0.001)?;
    let kinds = c
        .list::<String>("eval_detector.classical", "fast,harris,shi")?
        .iter()
        .map(|n| ClassicalKind::from_name(n).ok_or_else(|| config_err(format!("unknown classical detector `{n}`"))))
        .collect::<Result<Vec<_>>>()?;
    let ranges = ranges_named(c.raw("eval_detector.ranges").unwrap_or("adaptation"))?;
    let pairs = make_warped_pairs(&eval_images(ctx, "eval_detector")?, &ranges, derive_seed(ctx.seed, EVAL_PAIRS))?;
    let neural = c.opt_path("eval_detector.weights").map(|p| load_detector(&p)).transpose()?;
    let classical: Vec<_> = kinds.iter().map(|k| (k.name(), classical_detector(*k, DetectorParams::default(), protocol.nms_radius, protocol.top_k))).collect();
    let neural_fn = neural.as_ref().map(|d| move |img: &ImageGray| neural_points(d, img, threshold, protocol.nms_radius, protocol.top_k));
    let mut dets: Vec<(&str, &PointDetector)> = Vec::new();
    if let Some(f) = &neural_fn {
        dets.push(("neural", f));
    }
    for (name, f) in &classical {
        dets.push((name, f));
    }
    let reports = run_detector_benchmark(&dets, &pairs, &protocol)?;
    write_text(&out, &detector_reports_csv(&reports))?;
    print!("{}", detector_reports_table(&reports));
    Ok(())
}

/// Cheap content hash used to seed per-image random baselines.
fn image_hash(img: &ImageGray) -> u64 {
    img.data().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits() as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn eval_matching(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let out = c.path("eval_matching.out")?;
    let weights = c.path("eval_matching.weights")?;
    let det = load_detector(&weights)?;
    require_descriptor(&det, &weights)?;
    let threshold: f32 = c.get("eval_matching.threshold", 0.015)?;
    let nms: f64 = c.get("eval_matching.nms", 4.0)?;
    let protocol = MatchingProtocol {
        eps: c.get("eval_matching.eps", 3.0)?,
        max_points: c.get("eval_matching.max_points", 1000)?,
        ransac: RansacConfig { threshold: c.get("eval_matching.ransac_threshold", 3.0)?, seed: ctx.seed, ..RansacConfig::default() },
        threads: ctx.threads,
        ..MatchingProtocol::default()
    };
    let ranges = ranges_named(c.raw("eval_matching.ranges").unwrap_or("adaptation"))?;
    let pairs = make_warped_pairs(&eval_images(ctx, "eval_matching")?, &ranges, derive_seed(ctx.seed, EVAL_PAIRS))?;
    let model = run_matching_benchmark(&|img: &ImageGray| features(&det, img, threshold, nms, protocol.max_points), &pairs, &protocol)?;
    let dim = det.arch.descriptor_dim;
    let random = run_matching_benchmark(
        &|img: &ImageGray| {
            let (pts, _) = features(&det, img, threshold, nms, protocol.max_points)?;
            let desc = random_descriptors(pts.len(), dim, derive_seed(ctx.seed, image_hash(img)));
            Ok((pts, desc))
        },
        &pairs,
        &protocol,
    )?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("model.csv"), model.to_csv())?;
    fs::write(out.join("random.csv"), random.to_csv())?;
    let mut summary = String::from("system,repeatability,mle,nn_map,matching_score");
    for e in &protocol.eps_list {
        let _ = write!(summary, ",correct_eps{e}");
    }
    summary.push('\n');
    for (name, r) in [("model", &model), ("random_descriptors", &random)] {
        let _ = write!(summary, "{name},{:.6},{:.6},{:.6},{:.6}", r.repeatability, r.mle, r.nn_map, r.matching_score);
        for v in &r.correctness {
            let _ = write!(summary, ",{v:.6}");
        }
        summary.push('\n');
    }
    fs::write(out.join("summary.csv"), &summary)?;
    println!("model ({} pairs)\n{}random descriptors\n{}", pairs.len(), model.table(), random.table());
    Ok(())
}

/// Clean shape samples of an experiment section.
fn shape_samples(ctx: &Ctx, section: &str) -> Result<Vec<ShapeSample>> {
    let c = &ctx.cfg;
    let count: usize = c.get(&format!("{section}.count"), 100)?;
    let sc = StreamConfig::new(c.get(&format!("{section}.width"), 96)?, c.get(&format!("{section}.height"), 96)?, derive_seed(ctx.seed, EVAL_IMAGES));
    let stream = SynthStream::new(sc)?;
    Ok(parallel_map(count, ctx.threads, |i| stream.sample_at(i as u64)))
}

/// Named point detectors of an experiment: the optional network, then the classical ones.
fn experiment_detectors<'a>(ctx: &Ctx, section: &str, neural: Option<&'a NeuralDetector>) -> Result<Vec<(String, Box<PointDetector<'a>>)>> {
    let c = &ctx.cfg;
    let nms: f64 = c.get(&format!("{section}.nms"), 4.0)?;
    let top_k: usize = c.get(&format!("{section}.top_k"), 300)?;
    let threshold: f32 = c.get(&format!("{section}.threshold"), 0.001)?;
    let mut dets: Vec<(String, Box<PointDetector<'a>>)> = Vec::new();
    if let Some(d) = neural {
        dets.push(("magicpoint".into(), Box::new(move |img: &ImageGray| neural_points(d, img, threshold, nms, top_k))));
    }
    for k in ClassicalKind::ALL {
        dets.push((k.name().into(), Box::new(classical_detector(k, DetectorParams::default(), nms, top_k))));
    }
    Ok(dets)
}

fn optional_detector(ctx: &Ctx, key: &str) -> Result<Option<NeuralDetector>> {
    ctx.cfg.opt_path(key).map(|p| load_detector(&p)).transpose()
}

pub fn exp_noise_sweep(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let out = c.path("noise_sweep.out")?;
    let eps: f64 = c.get("noise_sweep.eps", 3.0)?;
    let steps: Vec<f64> = c.list("noise_sweep.steps", "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2")?;
    let neural = optional_detector(ctx, "noise_sweep.weights")?;
    let dets = experiment_detectors(ctx, "noise_sweep", neural.as_ref())?;
    let clean = shape_samples(ctx, "noise_sweep")?;
    let battery = NoiseBattery::default();
    let salt = derive_seed(ctx.seed, NOISE_SALT);
    let noisy: Vec<ImageGray> = parallel_map(clean.len(), ctx.threads, |i| battery.apply(&clean[i].image, &mut child(salt, i as u64)));
    let mut csv = String::from("s,detector,map,mle\n");
    for &s in &steps {
        let samples = clean
            .iter()
            .zip(&noisy)
            .enumerate()
            .map(|(i, (cs, n))| {
                let random = random_noise_image(n.width(), n.height(), derive_seed(salt ^ 1, i as u64));
                Ok(ShapeSample { image: noise_blend(&cs.image, n, &random, s)?, ..cs.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        for (name, d) in &dets {
            let r = run_synthetic_benchmark(d.as_ref(), &samples, eps, ctx.threads)?;
            let _ = writeln!(csv, "{s},{name},{:.6},{:.6}", r.map, r.mle);
            println!("s={s:<5} {name:<11} mAP {:.4}  MLE {:.4}", r.map, r.mle);
        }
    }
    write_text(&out, &csv)
}

/// Magnitudes of the single-corruption experiment, near the top of the training battery ranges.
fn default_magnitude(kind: NoiseKind) -> f64 {
    match kind {
        NoiseKind::GaussianAdditive => 0.1,
        NoiseKind::Speckle => 0.4,
        NoiseKind::SaltPepper => 0.03,
        NoiseKind::MotionBlur => 5.0,
        NoiseKind::BrightnessShift => 0.2,
        NoiseKind::ContrastScale => 0.5,
        NoiseKind::ShadeGradient => 0.5,
        NoiseKind::RandomErase => 0.1,
    }
}

pub fn exp_noise_types(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let out = c.path("noise_types.out")?;
    let eps: f64 = c.get("noise_types.eps", 3.0)?;
    let neural = optional_detector(ctx, "noise_types.weights")?;
    let dets = experiment_detectors(ctx, "noise_types", neural.as_ref())?;
    let clean = shape_samples(ctx, "noise_types")?;
    let salt = derive_seed(ctx.seed, NOISE_SALT);
    let mut csv = String::from("noise,magnitude,detector,map,mle\n");
    let kinds: Vec<Option<NoiseKind>> = std::iter::once(None).chain(NoiseKind::ALL.into_iter().map(Some)).collect();
    for kind in kinds {
        let magnitude = kind.map_or(0.0, default_magnitude);
        let samples = clean
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let image = match kind {
                    Some(k) => add_noise(&s.image, &NoiseSpec::new(k, magnitude, derive_seed(salt, i as u64)))?,
                    None => s.image.clone(),
                };
                Ok(ShapeSample { image, ..s.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        let label = kind.map_or("none", |k| k.name());
        for (name, d) in &dets {
            let r = run_synthetic_benchmark(d.as_ref(), &samples, eps, ctx.threads)?;
            let _ = writeln!(csv, "{label},{magnitude},{name},{:.6},{:.6}", r.map, r.mle);
            println!("{label:<17} {name:<11} mAP {:.4}", r.map);
        }
    }
    write_text(&out, &csv)
}

pub fn exp_square_sweep(ctx: &Ctx, weights: &Path, out: Option<&Path>) -> Result<()> {
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => ctx.cfg.path("square_sweep.out")?,
    };
    let det = load_detector(weights)?;
    let mut csv = String::from("width,center_confidence,top_left_confidence\n");
    for width in (3..=91).step_by(2) {
        let s = render_square(width)?;
        let hm = det.heatmap(&s.image)?;
        let at = |i: usize| {
            let p = s.gt_points.points[i];
            hm.get(p.x as usize, p.y as usize)
        };
        let center = at(s.blob_center.expect("square has a blob center"));
        let _ = writeln!(csv, "{width},{center:.6},{:.6}", at(0));
    }
    write_text(&out, &csv)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub fn exp_nh_sweep(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg;
    let out = c.path("nh_sweep.out")?;
    let det = load_detector(&c.path("nh_sweep.weights")?)?;
    let nhs: Vec<usize> = c.list("nh_sweep.nh", "1,10,100")?;
    let protocol = DetectorProtocol {
        eps: c.get("nh_sweep.eps", 3.0)?,
        top_k: c.get("nh_sweep.top_k", 300)?,
        nms_radius: c.get("nh_sweep.nms", 4.0)?,
        threads: ctx.threads,
        seed: ctx.seed,
    };
    let threshold: f32 = c.get("nh_sweep.threshold", 0.001)?;
    let pairs: Vec<WarpedPair> = make_warped_pairs(&eval_images(ctx, "nh_sweep")?, &HomographyRanges::adaptation(), derive_seed(ctx.seed, EVAL_PAIRS))?;
    let f = |img: &ImageGray| det.heatmap(img);
    let mut csv = String::from("n_h,repeatability,mle\n");
    for &nh in &nhs {
        let ac = AdaptConfig { n_homographies: nh, detect_threshold: threshold, nms_radius: protocol.nms_radius, top_k: protocol.top_k, ..AdaptConfig::default() };
        ac.validate().map_err(|e| config_err(e.to_string()))?;
        let seed = derive_seed(ctx.seed, nh as u64);
        let adapted = |img: &ImageGray| Ok(adapted_points(&f, img, &ac, seed)?);
        let reports = run_detector_benchmark(&[("adapted", &adapted)], &pairs, &protocol)?;
        let _ = writeln!(csv, "{nh},{:.6},{:.6}", reports[0].repeatability, reports[0].mle);
        println!("N_h={nh:<5} repeatability {:.4}  MLE {:.4}", reports[0].repeatability, reports[0].mle);
    }
    write_text(&out, &csv)
}
