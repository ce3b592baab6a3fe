//! Training loops: detector-only (synthetic stream or labeled images) and joint
//! detector/descriptor training on homographic pairs.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{fully_covered, in_bounds, sample_homography, warp_image, Homography, HomographyRanges};
use crate::imaging::{ImageGray, NoiseBattery, ValidMask};
use crate::neural::arch::{ArchConfig, ParamStore};
use crate::neural::decode::{cells_from_points, correspondences, CellLabels, Correspondences};
use crate::neural::layers::BnMode;
use crate::neural::loss::{loss_detector, loss_total, LossConfig, LossParts};
use crate::neural::model::{backward, forward, images_to_tensor, update_running_stats, Heads};
use crate::neural::optim::{adam_step, AdamConfig};
use crate::neural::tensor::{Real, Tensor};
use crate::neural::weights::save_weights;
use crate::parallel::parallel_map;
use crate::points::{Keypoint, PointSet};
use crate::rng::{child, derive_seed};
use crate::synthdata::{StreamConfig, SynthStream};

const LABEL_SALT: u64 = 0x1abe_15;
const PAIR_SALT: u64 = 0x9a1_25;
const WARP_ATTEMPTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Write `ckpt_NNNNNN.spw` every this many iterations (0 = never).
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// CSV loss log written as training proceeds.
    pub log_path: Option<PathBuf>,
    /// Record a log row every this many iterations (and always on the last one).
    pub log_every: u64,
    /// Workers used to render/augment samples; results do not depend on it.
    pub threads: usize,
    /// Homographies used to augment labeled images and to build training pairs.
    pub ranges: HomographyRanges,
    /// Photometric augmentation for labeled images and pairs.
    pub noise: Option<NoiseBattery>,
}

impl TrainConfig {
    pub fn new(iterations: u64, batch: usize, seed: u64) -> Self {
        Self {
            iterations,
            batch,
            seed,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_path: None,
            log_every: 1,
            threads: 1,
            ranges: HomographyRanges::training(),
            noise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.threads == 0 || self.log_every == 0 {
            return Err(Error::InvalidConfig("batch, threads and log_every must be positive".into()));
        }
        self.adam.validate()?;
        self.loss.validate()?;
        self.ranges.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub loss_total: f64,
    pub loss_det: f64,
    pub loss_desc: f64,
}

pub const LOG_HEADER: &str = "iter,loss_total,loss_det,loss_desc";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.iter, self.loss_total, self.loss_det, self.loss_desc)
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// An image with (pseudo) ground-truth interest points.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: ImageGray,
    pub points: PointSet,
}

/// Maps points through `h`, keeping those that land in the frame on valid pixels.
pub fn warp_points(points: &PointSet, h: &Homography, mask: &ValidMask) -> PointSet {
    let (w, hgt) = (mask.width(), mask.height());
    let mut out = PointSet::new();
    for kp in points {
        let Ok(p) = h.apply_point(kp.pos()) else { continue };
        if in_bounds(&p, w, hgt) && mask.get(p.x.round() as usize, p.y.round() as usize) {
            out.push(Keypoint::new(p.x, p.y, kp.confidence));
        }
    }
    out
}

/// A random homography whose warp leaves no empty pixels, or the identity if none is found.
pub fn sample_covering<R: Rng + ?Sized>(ranges: &HomographyRanges, width: usize, height: usize, rng: &mut R) -> Homography {
    for _ in 0..WARP_ATTEMPTS {
        if let Ok(h) = sample_homography(ranges, width, height, rng) {
            if fully_covered(&h, width, height) {
                return h;
            }
        }
    }
    Homography::identity()
}

struct Logger {
    file: Option<File>,
    rows: Vec<LogRow>,
}

impl Logger {
    fn new(cfg: &TrainConfig) -> Result<Self> {
        let file = match &cfg.log_path {
            Some(p) => {
                let mut f = File::create(p)?;
                writeln!(f, "{LOG_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        Ok(Self { file, rows: Vec::new() })
    }

    fn record(&mut self, cfg: &TrainConfig, iter: u64, parts: &LossParts) -> Result<()> {
        if iter % cfg.log_every != 0 && iter != cfg.iterations {
            return Ok(());
        }
        let row = LogRow { iter, loss_total: parts.total, loss_det: parts.det + parts.det_warped, loss_desc: parts.desc };
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", row.csv())?;
            f.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }
}

fn checkpoint(cfg: &TrainConfig, iter: u64, store: &ParamStore<f32>) -> Result<()> {
    if cfg.checkpoint_every == 0 || iter % cfg.checkpoint_every != 0 {
        return Ok(());
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        save_weights(&dir.join(format!("ckpt_{iter:06}.spw")), &store.weights_only())?;
    }
    Ok(())
}

/// One detector-only step (train-mode BN) on a batch; returns the mean cell cross-entropy.
pub fn detector_step<T: Real>(
    store: &mut ParamStore<T>,
    arch: &ArchConfig,
    x: &Tensor<T>,
    labels: &[CellLabels],
    adam: &AdamConfig,
    t: u64,
) -> Result<f64> {
    let had_desc = store.has_descriptor() && !store.is_frozen("desc.");
    if had_desc {
        store.freeze("desc.");
    }
    let result = (|| {
        let (out, cache) = forward(store, arch, x, BnMode::Train, Heads::DETECTOR)?;
        let logits = out.logits.expect("detector head requested");
        let (loss, d_logits) = loss_detector(&logits, labels)?;
        let grads = backward(store, &cache, Some(&d_logits), None)?;
        adam_step(store, &grads, adam, t)?;
        update_running_stats(store, &cache)?;
        Ok(loss)
    })();
    if had_desc {
        store.frozen.retain(|p| p != "desc.");
    }
    result
}

/// One joint step on the pair batch `[x; x_warped]`: both halves share the forward pass
/// (and therefore the batch-norm statistics).
#[allow(clippy::too_many_arguments)]
pub fn pair_step<T: Real>(
    store: &mut ParamStore<T>,
    arch: &ArchConfig,
    x: &Tensor<T>,
    x_warped: &Tensor<T>,
    labels: &[CellLabels],
    labels_warped: &[CellLabels],
    s: &[Correspondences],
    cfg: &TrainConfig,
    t: u64,
) -> Result<LossParts> {
    let n = x.dims[0];
    let both = Tensor::concat_batch(&[x, x_warped])?;
    let (out, cache) = forward(store, arch, &both, BnMode::Train, Heads::BOTH)?;
    let logits = out.logits.expect("detector head requested");
    let desc = out.descriptors.expect("descriptor head requested");
    let (parts, g) = loss_total(
        &logits.batch_slice(0, n),
        &logits.batch_slice(n, 2 * n),
        &desc.batch_slice(0, n),
        &desc.batch_slice(n, 2 * n),
        labels,
        labels_warped,
        s,
        &cfg.loss,
    )?;
    let d_logits = Tensor::concat_batch(&[&g.logits, &g.logits_warped])?;
    let d_desc = Tensor::concat_batch(&[&g.desc, &g.desc_warped])?;
    let grads = backward(store, &cache, Some(&d_logits), Some(&d_desc))?;
    adam_step(store, &grads, &cfg.adam, t)?;
    update_running_stats(store, &cache)?;
    Ok(parts)
}

/// Detector training where sample `i` of the run (global index) comes from `source(i)`.
fn train_detector_with(
    init: ParamStore<f32>,
    cfg: &TrainConfig,
    source: impl Fn(u64) -> Result<(ImageGray, PointSet)> + Sync,
) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    let arch = ArchConfig::infer(&init)?;
    let mut store = init;
    let mut logger = Logger::new(cfg)?;
    for it in 1..=cfg.iterations {
        let base = (it - 1) * cfg.batch as u64;
        let samples = parallel_map(cfg.batch, cfg.threads, |i| source(base + i as u64));
        let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
        let labels: Vec<CellLabels> = samples
            .iter()
            .enumerate()
            .map(|(i, (img, pts))| {
                let mut rng = child(cfg.seed ^ LABEL_SALT, base + i as u64);
                cells_from_points(pts, img.height(), img.width(), &mut rng)
            })
            .collect();
        let refs: Vec<&ImageGray> = samples.iter().map(|(img, _)| img).collect();
        let x: Tensor<f32> = images_to_tensor(&refs)?;
        let loss = detector_step(&mut store, &arch, &x, &labels, &cfg.adam, it)?;
        logger.record(cfg, it, &LossParts { total: loss, det: loss, ..LossParts::default() })?;
        checkpoint(cfg, it, &store)?;
    }
    Ok(store)
}

/// Detector training on streamed synthetic shapes; batch `t` consumes stream samples
/// `t * batch .. (t + 1) * batch`.
pub fn train_magicpoint(init: ParamStore<f32>, stream_cfg: &StreamConfig, cfg: &TrainConfig) -> Result<ParamStore<f32>> {
    let stream = SynthStream::new(stream_cfg.clone())?;
    train_detector_with(init, cfg, |i| {
        let s = stream.sample_at(i);
        Ok((s.image, s.gt_points))
    })
}

/// Picks a dataset entry for global sample `i` and applies a covering random warp and
/// optional photometric noise.
fn augmented_sample(dataset: &[LabeledImage], cfg: &TrainConfig, i: u64) -> Result<(ImageGray, PointSet)> {
    let mut rng = child(cfg.seed, i);
    let item = &dataset[rng.random_range(0..dataset.len())];
    let (w, h) = (item.image.width(), item.image.height());
    let hm = sample_covering(&cfg.ranges, w, h, &mut rng);
    let (mut img, mask) = warp_image(&item.image, &hm)?;
    let pts = warp_points(&item.points, &hm, &mask);
    if let Some(noise) = &cfg.noise {
        img = noise.apply(&img, &mut rng);
    }
    Ok((img, pts))
}

fn check_dataset(dataset: &[LabeledImage]) -> Result<()> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.image.width(), first.image.height());
    if let Some(bad) = dataset.iter().find(|d| (d.image.width(), d.image.height()) != (w, h)) {
        return Err(Error::DimensionMismatch(format!("{}x{} vs {w}x{h}", bad.image.width(), bad.image.height())));
    }
    Ok(())
}

/// Detector-only training on labeled images with random homographic augmentation.
pub fn train_detector_labeled(init: ParamStore<f32>, dataset: &[LabeledImage], cfg: &TrainConfig) -> Result<ParamStore<f32>> {
    check_dataset(dataset)?;
    train_detector_with(init, cfg, |i| augmented_sample(dataset, cfg, i))
}

/// Builds one training pair: source image, its warp by a training homography, labels for
/// both and the cell correspondences.
pub fn make_pair(dataset: &[LabeledImage], cfg: &TrainConfig, i: u64) -> Result<PairSample> {
    let mut rng = child(cfg.seed ^ PAIR_SALT, i);
    let item = &dataset[rng.random_range(0..dataset.len())];
    let (w, h) = (item.image.width(), item.image.height());
    let hm = sample_covering(&cfg.ranges, w, h, &mut rng);
    let (mut warped, mask) = warp_image(&item.image, &hm)?;
    let warped_pts = warp_points(&item.points, &hm, &mask);
    let mut image = item.image.clone();
    if let Some(noise) = &cfg.noise {
        image = noise.apply(&image, &mut rng);
        warped = noise.apply(&warped, &mut rng);
    }
    let mut label_rng = child(cfg.seed ^ LABEL_SALT, i);
    let labels = cells_from_points(&item.points, h, w, &mut label_rng);
    let labels_warped = cells_from_points(&warped_pts, h, w, &mut label_rng);
    let s = correspondences(&hm, labels.hc, labels.wc)?;
    Ok(PairSample { image, warped, labels, labels_warped, s })
}

pub struct PairSample {
    pub image: ImageGray,
    pub warped: ImageGray,
    pub labels: CellLabels,
    pub labels_warped: CellLabels,
    pub s: Correspondences,
}

/// Joint training from `base` (a detector-only store gains a fresh descriptor head).
pub fn train_superpoint(base: ParamStore<f32>, dataset: &[LabeledImage], cfg: &TrainConfig, descriptor_dim: usize) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    check_dataset(dataset)?;
    let mut store = base;
    let mut arch = ArchConfig::infer(&store)?;
    if !store.has_descriptor() {
        arch.descriptor_dim = descriptor_dim;
        crate::neural::arch::add_descriptor_head(&mut store, &arch, derive_seed(cfg.seed, 0))?;
    }
    let mut logger = Logger::new(cfg)?;
    for it in 1..=cfg.iterations {
        let base_index = (it - 1) * cfg.batch as u64;
        let pairs = parallel_map(cfg.batch, cfg.threads, |i| make_pair(dataset, cfg, base_index + i as u64));
        let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
        let x: Tensor<f32> = images_to_tensor(&pairs.iter().map(|p| &p.image).collect::<Vec<_>>())?;
        let xw: Tensor<f32> = images_to_tensor(&pairs.iter().map(|p| &p.warped).collect::<Vec<_>>())?;
        let labels: Vec<CellLabels> = pairs.iter().map(|p| p.labels.clone()).collect();
        let labels_w: Vec<CellLabels> = pairs.iter().map(|p| p.labels_warped.clone()).collect();
        let s: Vec<Correspondences> = pairs.into_iter().map(|p| p.s).collect();
        let parts = pair_step(&mut store, &arch, &x, &xw, &labels, &labels_w, &s, cfg, it)?;
        logger.record(cfg, it, &parts)?;
        checkpoint(cfg, it, &store)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::arch::init_params;
    use crate::synthdata::ShapeCategory;

    fn tiny_arch() -> ArchConfig {
        ArchConfig { encoder_widths: [2, 2, 3, 3, 4, 4, 4, 4], head_width: 4, descriptor_dim: 4 }
    }

    fn stream_cfg() -> StreamConfig {
        StreamConfig { mix: vec![(ShapeCategory::Quadrilateral, 1.0), (ShapeCategory::Checkerboard, 1.0)], ..StreamConfig::new(32, 32, 3) }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let init: ParamStore<f32> = init_params(&tiny_arch(), false, 1).unwrap();
        let out = train_magicpoint(init.clone(), &stream_cfg(), &TrainConfig::new(0, 2, 1)).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn magicpoint_is_reproducible_and_thread_independent() {
        let init: ParamStore<f32> = init_params(&tiny_arch(), false, 1).unwrap();
        let cfg = TrainConfig::new(3, 2, 7);
        let a = train_magicpoint(init.clone(), &stream_cfg(), &cfg).unwrap();
        let b = train_magicpoint(init.clone(), &stream_cfg(), &cfg).unwrap();
        let c = train_magicpoint(init.clone(), &stream_cfg(), &TrainConfig { threads: 3, ..cfg }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params, c.params);
        assert_ne!(a.params, init.params);
    }

    fn labeled_set() -> Vec<LabeledImage> {
        let stream = SynthStream::new(stream_cfg()).unwrap();
        (0..4)
            .map(|i| {
                let s = stream.sample_at(i);
                LabeledImage { image: s.image, points: s.gt_points }
            })
            .collect()
    }

    #[test]
    fn superpoint_with_zero_lambda_reduces_to_detector_training() {
        let arch = tiny_arch();
        let data = labeled_set();
        let cfg = TrainConfig { loss: LossConfig { lambda: 0.0, ..LossConfig::default() }, ..TrainConfig::new(3, 2, 5) };
        let init: ParamStore<f64> = init_params(&arch, true, 2).unwrap();
        let mut joint = init.clone();
        joint.freeze("desc.");
        let mut det = init.clone();
        for it in 1..=cfg.iterations {
            let pairs: Vec<PairSample> = (0..2).map(|i| make_pair(&data, &cfg, (it - 1) * 2 + i).unwrap()).collect();
            let x: Tensor<f64> = images_to_tensor(&pairs.iter().map(|p| &p.image).collect::<Vec<_>>()).unwrap();
            let xw: Tensor<f64> = images_to_tensor(&pairs.iter().map(|p| &p.warped).collect::<Vec<_>>()).unwrap();
            let y: Vec<CellLabels> = pairs.iter().map(|p| p.labels.clone()).collect();
            let yw: Vec<CellLabels> = pairs.iter().map(|p| p.labels_warped.clone()).collect();
            let s: Vec<Correspondences> = pairs.iter().map(|p| p.s.clone()).collect();
            pair_step(&mut joint, &arch, &x, &xw, &y, &yw, &s, &cfg, it).unwrap();
            let both = Tensor::concat_batch(&[&x, &xw]).unwrap();
            let all: Vec<CellLabels> = y.iter().chain(&yw).cloned().collect();
            detector_step(&mut det, &arch, &both, &all, &cfg.adam, it).unwrap();
        }
        // The joint detector loss is twice the concatenated-batch mean; Adam is invariant
        // to that scale up to its epsilon.
        for name in det.trainable_names() {
            if name.starts_with("desc.") {
                continue;
            }
            let (a, b) = (joint.get(&name).unwrap(), det.get(&name).unwrap());
            let diff = a.data.iter().zip(&b.data).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-6, "{name}: {diff}");
        }
        for name in init.params.keys().filter(|n| n.starts_with("desc.") && !n.ends_with(".mean") && !n.ends_with(".var")) {
            assert_eq!(joint.get(name).unwrap(), init.get(name).unwrap(), "frozen {name}");
        }
    }

    #[test]
    fn superpoint_runs_and_is_reproducible() {
        let data = labeled_set();
        let init: ParamStore<f32> = init_params(&tiny_arch(), false, 1).unwrap();
        let cfg = TrainConfig::new(2, 2, 9);
        let a = train_superpoint(init.clone(), &data, &cfg, 4).unwrap();
        let b = train_superpoint(init, &data, &cfg, 4).unwrap();
        assert!(a.has_descriptor());
        assert_eq!(a, b);
        assert!(matches!(train_superpoint(a, &[], &cfg, 4), Err(Error::EmptyDataset)));
    }

    #[test]
    fn log_and_checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let init: ParamStore<f32> = init_params(&tiny_arch(), false, 1).unwrap();
        let cfg = TrainConfig {
            checkpoint_every: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            log_path: Some(dir.path().join("loss.csv")),
            ..TrainConfig::new(4, 1, 1)
        };
        train_magicpoint(init, &stream_cfg(), &cfg).unwrap();
        let log = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(log.lines().next(), Some(LOG_HEADER));
        assert_eq!(log.lines().count(), 5);
        assert!(dir.path().join("ckpt_000002.spw").exists());
        assert!(dir.path().join("ckpt_000004.spw").exists());
    }
}
