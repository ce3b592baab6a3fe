//! Homographic Adaptation: detector responses averaged over random warps, multi-scale
//! aggregation, iterative self-labeling and a covariance check.

use std::fmt::Write as _;
use std::path::Path;

use crate::classical::{heatmap_to_points, HeatMap};
use crate::error::{Error, Result};
use crate::evalsuite::metrics::repeatability;
use crate::geometry::{sample_homography, warp_image, Homography, HomographyRanges, Point2};
use crate::imaging::{resize_bilinear, ImageGray, ValidMask};
use crate::neural::train::{train_detector_labeled, LabeledImage, TrainConfig};
use crate::neural::NeuralDetector;
use crate::parallel::parallel_map;
use crate::points::PointSet;
use crate::rng::{derive_seed, seeded};

/// Image -> dense response.
pub type DetectorFn<'a> = dyn Fn(&ImageGray) -> Result<HeatMap> + Sync + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub n_homographies: usize,
    pub ranges: HomographyRanges,
    pub detect_threshold: f32,
    pub nms_radius: f64,
    /// Keep at most this many labels per image (0 = all above the threshold).
    pub top_k: usize,
    /// Responses closer than this to a warped frame's border (in either frame) are ignored.
    pub border_margin: f64,
    /// Descending resize factors for [`adapt_multiscale`].
    pub scales: Vec<f64>,
    pub scale_weights: Vec<f64>,
    pub threads: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            n_homographies: 100,
            ranges: HomographyRanges::adaptation(),
            detect_threshold: 0.015,
            nms_radius: 4.0,
            top_k: 0,
            border_margin: 3.0,
            scales: vec![1.0],
            scale_weights: vec![1.0],
            threads: 1,
        }
    }
}

impl AdaptConfig {
    /// Scales {1, 0.75, 0.5} weighted proportionally to the scale.
    pub fn with_default_scales(self) -> Self {
        let scales = vec![1.0, 0.75, 0.5];
        let total: f64 = scales.iter().sum();
        let scale_weights = scales.iter().map(|s| s / total).collect();
        Self { scales, scale_weights, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_homographies == 0 || self.threads == 0 {
            return Err(Error::InvalidConfig("n_homographies and threads must be >= 1".into()));
        }
        if self.scales.is_empty() || self.scales.len() != self.scale_weights.len() {
            return Err(Error::InvalidConfig("scales and scale_weights must be non-empty and of equal length".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0)) || self.scales.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("scales must be positive and sorted descending".into()));
        }
        let total: f64 = self.scale_weights.iter().sum();
        if self.scale_weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("scale weights must be non-negative and sum to 1".into()));
        }
        if !(self.nms_radius >= 0.0) || !(self.border_margin >= 0.0) {
            return Err(Error::InvalidConfig("nms_radius and border_margin must be >= 0".into()));
        }
        self.ranges.validate()
    }
}

/// The warps used by [`adapt`]: identity first, then `n - 1` samples.
pub fn adaptation_homographies(cfg: &AdaptConfig, width: usize, height: usize, seed: u64) -> Result<Vec<Homography>> {
    let mut rng = seeded(seed);
    let mut hs = vec![Homography::identity()];
    for _ in 1..cfg.n_homographies {
        hs.push(sample_homography(&cfg.ranges, width, height, &mut rng)?);
    }
    Ok(hs)
}

fn inside(x: f64, y: f64, width: usize, height: usize, margin: f64) -> bool {
    x >= margin && y >= margin && x <= width as f64 - 1.0 - margin && y <= height as f64 - 1.0 - margin
}

/// Where source pixel `(u, v)` lands in the warped frame of `h`, if both lie `margin` inside
/// their frames.
fn warped_position(h: &Homography, u: usize, v: usize, width: usize, height: usize, margin: f64) -> Option<Point2> {
    if !inside(u as f64, v as f64, width, height, margin) {
        return None;
    }
    let p = h.apply_point(Point2::new(u as f64, v as f64)).ok()?;
    inside(p.x, p.y, width, height, margin).then_some(p)
}

/// Resamples a heatmap by `h` (output pixel `p` reads `h^-1 p`) without value clamping.
pub fn warp_heatmap(hm: &HeatMap, h: &Homography) -> Result<(HeatMap, ValidMask)> {
    unwarp_heatmap(hm, &h.invert()?, 0.0)
}

/// Maps a response computed on the `h`-warped image back to the source frame.
fn unwarp_heatmap(hm: &HeatMap, h: &Homography, margin: f64) -> Result<(HeatMap, ValidMask)> {
    let (w, hh) = (hm.width(), hm.height());
    let mut out = HeatMap::new(w, hh);
    let mut mask = ValidMask::new(w, hh);
    for v in 0..hh {
        for u in 0..w {
            if let Some(p) = warped_position(h, u, v, w, hh, margin) {
                out.set(u, v, hm.bilinear(p.x, p.y));
                mask.set(u, v, true);
            }
        }
    }
    Ok((out, mask))
}

/// One warp's contribution mapped back to the source frame.
fn unwarped_response(f: &DetectorFn, img: &ImageGray, h: &Homography, margin: f64) -> Result<(HeatMap, ValidMask)> {
    if *h == Homography::identity() {
        return Ok((f(img)?, ValidMask::full(img.width(), img.height())));
    }
    let (warped, _) = warp_image(img, h)?;
    let response = f(&warped)?;
    unwarp_heatmap(&response, h, margin)
}

/// Mean of `H_i^-1 f(H_i(I))` per pixel over the warps that cover it (0 where none does).
pub fn adapt(f: &DetectorFn, img: &ImageGray, cfg: &AdaptConfig, seed: u64) -> Result<HeatMap> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let hs = adaptation_homographies(cfg, w, h, seed)?;
    // Reduce in warp order so results do not depend on the thread count.
    let chunk = cfg.threads.max(1) * 4;
    let mut sum = vec![0.0f64; w * h];
    let mut count = vec![0u32; w * h];
    for start in (0..hs.len()).step_by(chunk) {
        let end = (start + chunk).min(hs.len());
        let parts = parallel_map(end - start, cfg.threads, |k| unwarped_response(f, img, &hs[start + k], cfg.border_margin));
        for part in parts {
            let (resp, mask) = part?;
            for (i, (&v, &m)) in resp.data().iter().zip(mask.bits()).enumerate() {
                if m {
                    sum[i] += v as f64;
                    count[i] += 1;
                }
            }
        }
    }
    let data = sum.iter().zip(&count).map(|(&s, &c)| if c > 0 { (s / c as f64) as f32 } else { 0.0 }).collect();
    HeatMap::from_vec(w, h, data)
}

/// Per-pixel warp coverage counts of [`adapt`] (the averaging denominators).
pub fn coverage_counts(img: &ImageGray, cfg: &AdaptConfig, seed: u64) -> Result<Vec<u32>> {
    let (w, h) = (img.width(), img.height());
    let mut count = vec![0u32; w * h];
    for hm in adaptation_homographies(cfg, w, h, seed)? {
        let identity = hm == Homography::identity();
        for (i, c) in count.iter_mut().enumerate() {
            *c += (identity || warped_position(&hm, i % w, i / w, w, h, cfg.border_margin).is_some()) as u32;
        }
    }
    Ok(count)
}

fn resize_heatmap(hm: &HeatMap, width: usize, height: usize) -> HeatMap {
    let (sx, sy) = (hm.width() as f64 / width as f64, hm.height() as f64 / height as f64);
    let mut out = HeatMap::new(width, height);
    for v in 0..height {
        for u in 0..width {
            out.set(u, v, hm.bilinear((u as f64 + 0.5) * sx - 0.5, (v as f64 + 0.5) * sy - 0.5));
        }
    }
    out
}

/// Within-scale average, across-scale weighted maximum.
pub fn adapt_multiscale(f: &DetectorFn, img: &ImageGray, cfg: &AdaptConfig, seed: u64) -> Result<HeatMap> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let mut out: Option<HeatMap> = None;
    for (&s, &weight) in cfg.scales.iter().zip(&cfg.scale_weights) {
        let map = if s == 1.0 {
            adapt(f, img, cfg, seed)?
        } else {
            let sw = ((w as f64 * s).round() as usize).max(1);
            let sh = ((h as f64 * s).round() as usize).max(1);
            let small = adapt(f, &resize_bilinear(img, sw, sh), cfg, seed)?;
            resize_heatmap(&small, w, h)
        };
        let weighted: Vec<f32> = map.data().iter().map(|v| (weight as f32) * v).collect();
        out = Some(match out {
            None => HeatMap::from_vec(w, h, weighted)?,
            Some(mut acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(weighted) {
                    *a = a.max(b);
                }
                acc
            }
        });
    }
    Ok(out.expect("validated non-empty scales"))
}

/// Points of an adapted heatmap: threshold, NMS, optional top-K.
pub fn adapted_points(f: &DetectorFn, img: &ImageGray, cfg: &AdaptConfig, seed: u64) -> Result<PointSet> {
    let hm = if cfg.scales.len() == 1 && cfg.scales[0] == 1.0 { adapt(f, img, cfg, seed)? } else { adapt_multiscale(f, img, cfg, seed)? };
    Ok(heatmap_to_points(&hm, cfg.detect_threshold, cfg.nms_radius, cfg.top_k))
}

#[derive(Clone, Debug)]
pub struct SelfLabelConfig {
    pub adapt: AdaptConfig,
    pub rounds: usize,
    pub seed: u64,
    /// Training run after each labeling round; `None` keeps the base detector.
    pub train: Option<TrainConfig>,
}

pub struct SelfLabelOutcome {
    /// Labels of every image, per round.
    pub labels: Vec<Vec<PointSet>>,
    /// The detector trained after each round.
    pub detectors: Vec<NeuralDetector>,
}

fn write_round(dir: &Path, round: usize, labels: &[PointSet], cfg: &SelfLabelConfig) -> Result<()> {
    let rd = dir.join(format!("round_{round}"));
    std::fs::create_dir_all(&rd)?;
    for (i, pts) in labels.iter().enumerate() {
        pts.write(&rd.join(format!("{i:06}.pts")))?;
    }
    let mut meta = String::new();
    let _ = writeln!(meta, "n_homographies={}", cfg.adapt.n_homographies);
    let _ = writeln!(meta, "seed={}", cfg.seed);
    let _ = writeln!(meta, "threshold={}", cfg.adapt.detect_threshold);
    let _ = writeln!(meta, "nms_radius={}", cfg.adapt.nms_radius);
    let _ = writeln!(meta, "top_k={}", cfg.adapt.top_k);
    let _ = writeln!(meta, "images={}", labels.len());
    std::fs::write(rd.join("meta.txt"), meta)?;
    Ok(())
}

/// Rounds of labeling with the current detector followed by training a detector on those
/// labels (fine-tuned from the current weights), which labels the next round.
pub fn self_label(images: &[ImageGray], base: &NeuralDetector, cfg: &SelfLabelConfig, out_dir: Option<&Path>) -> Result<SelfLabelOutcome> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be >= 1".into()));
    }
    cfg.adapt.validate()?;
    let mut current = base.clone();
    let mut labels = Vec::new();
    let mut detectors = Vec::new();
    for round in 1..=cfg.rounds {
        let round_seed = derive_seed(cfg.seed, round as u64);
        let det = &current;
        let f = |img: &ImageGray| det.heatmap(img);
        let inner = AdaptConfig { threads: 1, ..cfg.adapt.clone() };
        let pts = parallel_map(images.len(), cfg.adapt.threads, |i| adapted_points(&f, &images[i], &inner, derive_seed(round_seed, i as u64)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        if let Some(dir) = out_dir {
            write_round(dir, round, &pts, cfg)?;
        }
        if let Some(train) = &cfg.train {
            let data: Vec<LabeledImage> = images.iter().zip(&pts).map(|(im, p)| LabeledImage { image: im.clone(), points: p.clone() }).collect();
            let tcfg = TrainConfig { seed: derive_seed(train.seed, round as u64), ..train.clone() };
            let trained = train_detector_labeled(current.store.clone(), &data, &tcfg)?;
            current = NeuralDetector::new(trained)?;
        }
        detectors.push(current.clone());
        labels.push(pts);
    }
    Ok(SelfLabelOutcome { labels, detectors })
}

/// Repeatability between detections on `img` and on its warp by `h`, each limited to the
/// `k` most confident points.
pub fn covariance_repeatability(f: &dyn Fn(&ImageGray) -> Result<PointSet>, img: &ImageGray, h: &Homography, eps: f64, k: usize) -> Result<f64> {
    let (warped, _) = warp_image(img, h)?;
    let top = |mut p: PointSet| {
        p.points.sort_by(crate::classical::detection_order);
        p.points.truncate(k);
        p
    };
    let a = top(f(img)?);
    let b = top(f(&warped)?);
    repeatability(&a, &b, h, img.width(), img.height(), eps)
}
