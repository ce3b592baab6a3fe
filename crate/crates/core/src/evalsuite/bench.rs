//! Benchmark protocols: detector repeatability on warped pairs, synthetic-shape mAP and the
//! detect/describe/match/RANSAC pipeline.

use std::fmt::Write as _;

use rand::Rng;

use crate::classical::{heatmap_to_points, ClassicalKind, DetectorParams, HeatMap};
use crate::error::{Error, Result};
use crate::evalsuite::matching::{match_nn, matching_score, nn_map, Features};
use crate::evalsuite::metrics::{covisible, localization_error, pooled_average_precision, repeatability};
use crate::evalsuite::ransac::{estimate_homography, homography_correctness, RansacConfig};
use crate::geometry::{sample_homography, warp_image, Homography, HomographyRanges, Point2};
use crate::imaging::ImageGray;
use crate::parallel::parallel_map;
use crate::points::{Keypoint, PointSet, RadiusGrid};
use crate::rng::child;
use crate::synthdata::{ShapeCategory, ShapeSample};

/// Image -> scored points.
pub type PointDetector<'a> = dyn Fn(&ImageGray) -> Result<PointSet> + Sync + 'a;
/// Image -> points with one unit descriptor each.
pub type FeatureExtractor<'a> = dyn Fn(&ImageGray) -> Result<(PointSet, Vec<Vec<f32>>)> + Sync + 'a;

/// Strictly positive responses, NMS, top-K.
pub fn points_from_heatmap(hm: &HeatMap, nms_radius: f64, top_k: usize) -> PointSet {
    heatmap_to_points(hm, f32::MIN_POSITIVE, nms_radius, top_k)
}

pub fn classical_detector(kind: ClassicalKind, params: DetectorParams, nms_radius: f64, top_k: usize) -> impl Fn(&ImageGray) -> Result<PointSet> + Sync {
    move |img| Ok(points_from_heatmap(&kind.heatmap(img, &params)?, nms_radius, top_k))
}

/// `k` uniformly placed points with random confidences.
pub fn random_points(width: usize, height: usize, k: usize, seed: u64) -> PointSet {
    let mut rng = child(seed, 0);
    PointSet::from_points(
        (0..k)
            .map(|_| {
                Keypoint::new(
                    rng.random_range(0..width) as f64,
                    rng.random_range(0..height) as f64,
                    rng.random::<f64>(),
                )
            })
            .collect(),
    )
}

pub fn random_descriptors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = child(seed, 1);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| (x / norm) as f32).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpedPair {
    pub a: ImageGray,
    pub b: ImageGray,
    /// Maps pixels of `a` to pixels of `b`.
    pub h: Homography,
}

/// Pairs `(I, H_i(I))` with one sampled homography per image.
pub fn make_warped_pairs(images: &[ImageGray], ranges: &HomographyRanges, seed: u64) -> Result<Vec<WarpedPair>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = child(seed, i as u64);
            let h = sample_homography(ranges, img.width(), img.height(), &mut rng)?;
            let (b, _) = warp_image(img, &h)?;
            Ok(WarpedPair { a: img.clone(), b, h })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorProtocol {
    pub eps: f64,
    pub top_k: usize,
    pub nms_radius: f64,
    pub threads: usize,
    /// Seed of the Random baseline.
    pub seed: u64,
}

impl Default for DetectorProtocol {
    fn default() -> Self {
        Self { eps: 3.0, top_k: 300, nms_radius: 4.0, threads: 1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorRow {
    pub pair: usize,
    pub n_a: usize,
    pub n_b: usize,
    /// `None` when neither image has a co-visible detection.
    pub repeatability: Option<f64>,
    /// `None` when no detection is re-detected within eps.
    pub mle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorReport {
    pub name: String,
    pub rows: Vec<DetectorRow>,
    pub repeatability: f64,
    pub mle: f64,
    /// Pairs excluded from the repeatability (resp. MLE) mean.
    pub flagged: usize,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> (f64, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => missing += 1,
        }
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, missing)
}

/// Localization error of re-detections in both directions of a pair.
fn pair_mle(pa: &PointSet, pb: &PointSet, h: &Homography, w: usize, hh: usize, eps: f64) -> Option<f64> {
    let inv = h.invert().ok()?;
    let a_in_b = PointSet::from_positions(&covisible(pa, h, w, hh).iter().map(|x| x.1).collect::<Vec<Point2>>());
    let b_in_a = PointSet::from_positions(&covisible(pb, &inv, w, hh).iter().map(|x| x.1).collect::<Vec<Point2>>());
    let d1 = localization_error(&a_in_b, pb, eps).ok().map(|m| (m, count_correct(&a_in_b, pb, eps)));
    let d2 = localization_error(&b_in_a, pa, eps).ok().map(|m| (m, count_correct(&b_in_a, pa, eps)));
    let parts: Vec<(f64, usize)> = [d1, d2].into_iter().flatten().collect();
    let n: usize = parts.iter().map(|p| p.1).sum();
    (n > 0).then(|| parts.iter().map(|(m, c)| m * *c as f64).sum::<f64>() / n as f64)
}

fn count_correct(dets: &PointSet, gt: &PointSet, eps: f64) -> usize {
    let pos = gt.positions();
    let grid = RadiusGrid::new(&pos, eps);
    dets.iter().filter(|d| grid.candidates(&d.pos()).any(|j| pos[j].dist(&d.pos()) <= eps)).count()
}

fn detector_rows(pairs: &[WarpedPair], protocol: &DetectorProtocol, detect: &(dyn Fn(usize, &ImageGray, u64) -> Result<PointSet> + Sync)) -> Result<Vec<DetectorRow>> {
    parallel_map(pairs.len(), protocol.threads, |i| {
        let p = &pairs[i];
        let (w, h) = (p.a.width(), p.a.height());
        let mut pa = detect(i, &p.a, 0)?;
        let mut pb = detect(i, &p.b, 1)?;
        if protocol.top_k > 0 {
            pa.points.truncate(protocol.top_k);
            pb.points.truncate(protocol.top_k);
        }
        let rep = match repeatability(&pa, &pb, &p.h, w, h, protocol.eps) {
            Ok(r) => Some(r),
            Err(Error::EmptySet) => None,
            Err(e) => return Err(e),
        };
        let mle = pair_mle(&pa, &pb, &p.h, w, h, protocol.eps);
        Ok(DetectorRow { pair: i, n_a: pa.len(), n_b: pb.len(), repeatability: rep, mle })
    })
    .into_iter()
    .collect()
}

fn summarize(name: &str, rows: Vec<DetectorRow>) -> DetectorReport {
    let (repeatability, flagged) = mean_of(rows.iter().map(|r| r.repeatability));
    let (mle, _) = mean_of(rows.iter().map(|r| r.mle));
    DetectorReport { name: name.to_string(), rows, repeatability, mle, flagged }
}

/// Repeatability and localization error of each detector over the pairs, followed by a
/// Random baseline placing `top_k` uniform points per image.
pub fn run_detector_benchmark(detectors: &[(&str, &PointDetector)], pairs: &[WarpedPair], protocol: &DetectorProtocol) -> Result<Vec<DetectorReport>> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut reports = Vec::new();
    for (name, det) in detectors {
        let rows = detector_rows(pairs, protocol, &|_, img, _| det(img))?;
        reports.push(summarize(name, rows));
    }
    let seed = protocol.seed;
    let k = protocol.top_k.max(1);
    let rows = detector_rows(pairs, protocol, &|i, img, side| Ok(random_points(img.width(), img.height(), k, seed.wrapping_add(2 * i as u64 + side))))?;
    reports.push(summarize("random", rows));
    Ok(reports)
}

pub fn detector_reports_csv(reports: &[DetectorReport]) -> String {
    let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    let mut s = String::from("detector,pair,n_a,n_b,repeatability,mle\n");
    for r in reports {
        for row in &r.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.name, row.pair, row.n_a, row.n_b, opt(row.repeatability), opt(row.mle));
        }
        let _ = writeln!(s, "{},summary,,,{:.6},{:.6}", r.name, r.repeatability, r.mle);
    }
    s
}

pub fn detector_reports_table(reports: &[DetectorReport]) -> String {
    let mut s = format!("{:<14} {:>13} {:>8} {:>8}\n", "detector", "repeatability", "MLE", "flagged");
    for r in reports {
        let _ = writeln!(s, "{:<14} {:>13.4} {:>8.4} {:>8}", r.name, r.repeatability, r.mle, r.flagged);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticReport {
    /// Pooled AP per category that has ground truth.
    pub per_category: Vec<(ShapeCategory, f64)>,
    pub map: f64,
    /// Mean localization error over samples with a correct detection.
    pub mle: f64,
}

/// Detection mAP on rendered samples: AP pooled within each category, averaged over categories.
pub fn run_synthetic_benchmark(detect: &PointDetector, samples: &[ShapeSample], eps: f64, threads: usize) -> Result<SyntheticReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dets = parallel_map(samples.len(), threads, |i| detect(&samples[i].image)).into_iter().collect::<Result<Vec<_>>>()?;
    let mut per_category = Vec::new();
    for cat in ShapeCategory::ALL {
        let inst: Vec<(&PointSet, &PointSet)> =
            samples.iter().zip(&dets).filter(|(s, _)| s.category == cat).map(|(s, d)| (d, &s.gt_points)).collect();
        match pooled_average_precision(&inst, eps) {
            Ok(ap) => per_category.push((cat, ap)),
            Err(Error::EmptyGroundTruth) => {}
            Err(e) => return Err(e),
        }
    }
    if per_category.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let map = per_category.iter().map(|c| c.1).sum::<f64>() / per_category.len() as f64;
    let (mle, _) = mean_of(samples.iter().zip(&dets).map(|(s, d)| localization_error(d, &s.gt_points, eps).ok()));
    Ok(SyntheticReport { per_category, map, mle })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingProtocol {
    /// Thresholds of the homography correctness test.
    pub eps_list: Vec<f64>,
    /// Threshold of repeatability, MLE, NN mAP and matching score.
    pub eps: f64,
    pub max_points: usize,
    pub ransac: RansacConfig,
    pub threads: usize,
}

impl Default for MatchingProtocol {
    fn default() -> Self {
        Self { eps_list: vec![1.0, 3.0, 5.0], eps: 3.0, max_points: 1000, ransac: RansacConfig::default(), threads: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingRow {
    pub pair: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub repeatability: Option<f64>,
    pub mle: Option<f64>,
    pub nn_map: Option<f64>,
    pub matching_score: Option<f64>,
    /// Corner error of the estimated homography (`None` if estimation failed).
    pub corner_error: Option<f64>,
    pub correct: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MatchingRow>,
    pub eps_list: Vec<f64>,
    /// Fraction of pairs whose estimate passes the corner test, per eps.
    pub correctness: Vec<f64>,
    pub repeatability: f64,
    pub mle: f64,
    pub nn_map: f64,
    pub matching_score: f64,
}

fn top(points: PointSet, desc: Vec<Vec<f32>>, k: usize) -> (PointSet, Vec<Vec<f32>>) {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| crate::classical::detection_order(&points.points[i], &points.points[j]));
    if k > 0 {
        idx.truncate(k);
    }
    (PointSet::from_points(idx.iter().map(|&i| points.points[i]).collect()), idx.iter().map(|&i| desc[i].clone()).collect())
}

fn opt_metric(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NoMatches | Error::NoFeaturesInRegion | Error::EmptySet) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Full pipeline per pair: extract, keep the best `max_points`, NN-match a -> b, RANSAC and
/// the corner correctness test, plus the detector and descriptor metrics.
pub fn run_matching_benchmark(extract: &FeatureExtractor, pairs: &[WarpedPair], protocol: &MatchingProtocol) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows = parallel_map(pairs.len(), protocol.threads, |i| -> Result<MatchingRow> {
        let p = &pairs[i];
        let (w, h) = (p.a.width(), p.a.height());
        let (pa, da) = extract(&p.a)?;
        let (pb, db) = extract(&p.b)?;
        let (pa, da) = top(pa, da, protocol.max_points);
        let (pb, db) = top(pb, db, protocol.max_points);
        let fa = Features { points: &pa, descriptors: &da };
        let fb = Features { points: &pb, descriptors: &db };
        let rep = opt_metric(repeatability(&pa, &pb, &p.h, w, h, protocol.eps))?;
        let mle = pair_mle(&pa, &pb, &p.h, w, h, protocol.eps);
        let nnm = if pa.is_empty() || pb.is_empty() { None } else { opt_metric(nn_map(fa, fb, &p.h, protocol.eps))? };
        let ms = opt_metric(matching_score(fa, fb, &p.h, w, h, protocol.eps))?;
        let estimate = if pa.is_empty() || pb.is_empty() {
            None
        } else {
            let m = match_nn(&da, &db)?;
            let ransac = RansacConfig { seed: protocol.ransac.seed.wrapping_add(i as u64), ..protocol.ransac };
            estimate_homography(&m.point_pairs(&pa, &pb), &ransac).ok().map(|r| r.h)
        };
        let corner_error = estimate.and_then(|e| crate::evalsuite::ransac::corner_error(&e, &p.h, w, h).ok());
        let correct = protocol
            .eps_list
            .iter()
            .map(|&eps| estimate.is_some_and(|e| homography_correctness(&e, &p.h, w, h, eps).unwrap_or(false)))
            .collect();
        Ok(MatchingRow { pair: i, n_a: pa.len(), n_b: pb.len(), repeatability: rep, mle, nn_map: nnm, matching_score: ms, corner_error, correct })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let correctness = (0..protocol.eps_list.len()).map(|k| rows.iter().filter(|r| r.correct[k]).count() as f64 / n).collect();
    // Pairs without a defined value contribute 0 to the descriptor metrics.
    let avg0 = |f: &dyn Fn(&MatchingRow) -> Option<f64>| rows.iter().map(|r| f(r).unwrap_or(0.0)).sum::<f64>() / n;
    let report = EvalReport {
        eps_list: protocol.eps_list.clone(),
        correctness,
        repeatability: mean_of(rows.iter().map(|r| r.repeatability)).0,
        mle: mean_of(rows.iter().map(|r| r.mle)).0,
        nn_map: avg0(&|r| r.nn_map),
        matching_score: avg0(&|r| r.matching_score),
        rows,
    };
    Ok(report)
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("pair,n_a,n_b,repeatability,mle,nn_map,matching_score,corner_error");
        for e in &self.eps_list {
            let _ = write!(s, ",correct_eps{e}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{},{},{},{},{}", r.pair, r.n_a, r.n_b, opt(r.repeatability), opt(r.mle), opt(r.nn_map), opt(r.matching_score), opt(r.corner_error));
            for c in &r.correct {
                let _ = write!(s, ",{}", *c as u8);
            }
            s.push('\n');
        }
        let _ = write!(s, "summary,,,{:.6},{:.6},{:.6},{:.6},", self.repeatability, self.mle, self.nn_map, self.matching_score);
        for c in &self.correctness {
            let _ = write!(s, ",{c:.6}");
        }
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for (e, c) in self.eps_list.iter().zip(&self.correctness) {
            let _ = writeln!(s, "homography correctness (eps={e}): {c:.4}");
        }
        let _ = writeln!(s, "repeatability:  {:.4}", self.repeatability);
        let _ = writeln!(s, "MLE:            {:.4}", self.mle);
        let _ = writeln!(s, "NN mAP:         {:.4}", self.nn_map);
        let _ = writeln!(s, "matching score: {:.4}", self.matching_score);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::render_composite;
    use crate::rng::seeded;

    fn scene(seed: u64) -> ImageGray {
        render_composite(96, 64, &mut seeded(seed))
    }

    #[test]
    fn random_baseline_matches_density_estimate() {
        // 300 uniform points in 240x320: P(neighbor within 3 px) ~ 1 - exp(-300 * 9 pi / 76800).
        let images: Vec<ImageGray> = (0..10).map(|_| ImageGray::filled(320, 240, 0.5)).collect();
        let pairs: Vec<WarpedPair> = images.iter().map(|img| WarpedPair { a: img.clone(), b: img.clone(), h: Homography::identity() }).collect();
        let reports = run_detector_benchmark(&[], &pairs, &DetectorProtocol::default()).unwrap();
        let expected = 1.0 - (-300.0 * 9.0 * std::f64::consts::PI / 76800.0f64).exp();
        assert_eq!(reports[0].name, "random");
        assert!((reports[0].repeatability - expected).abs() < 0.02, "{}", reports[0].repeatability);
    }

    #[test]
    fn covariant_detector_is_perfect() {
        // Points transported exactly by the known warp.
        let pts = PointSet::from_positions(&[Point2::new(20.0, 20.0), Point2::new(50.0, 30.0), Point2::new(70.0, 40.0)]);
        let h = Homography::translation(3.0, -2.0);
        let img = scene(1);
        let (b, _) = warp_image(&img, &h).unwrap();
        let pairs = vec![WarpedPair { a: img.clone(), b: b.clone(), h }];
        let a_ref = img.clone();
        let det = move |im: &ImageGray| -> Result<PointSet> {
            if *im == a_ref {
                Ok(pts.clone())
            } else {
                Ok(PointSet::from_positions(&h.apply(&pts.positions())?))
            }
        };
        let reports = run_detector_benchmark(&[("oracle", &det)], &pairs, &DetectorProtocol::default()).unwrap();
        assert_eq!(reports[0].repeatability, 1.0);
        assert_eq!(reports[0].mle, 0.0);
    }

    #[test]
    fn identical_pair_pipeline() {
        let img = scene(2);
        let pairs = vec![WarpedPair { a: img.clone(), b: img.clone(), h: Homography::identity() }];
        let extract = |im: &ImageGray| -> Result<(PointSet, Vec<Vec<f32>>)> {
            let pts = classical_detector(ClassicalKind::Harris, DetectorParams::default(), 4.0, 50)(im)?;
            let n = pts.len();
            let desc = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f32).collect()).collect();
            Ok((pts, desc))
        };
        let r = run_matching_benchmark(&extract, &pairs, &MatchingProtocol::default()).unwrap();
        assert_eq!(r.correctness, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.matching_score, 1.0);
        assert!(r.to_csv().lines().count() == 3);
    }

    #[test]
    fn gt_points_with_one_hot_descriptors_recover_the_warp() {
        let img = scene(3);
        let h = Homography::rotation_about(0.1, 48.0, 32.0).compose(&Homography::translation(2.0, 1.0));
        let (b, _) = warp_image(&img, &h).unwrap();
        let base: Vec<Point2> = (0..12).map(|i| Point2::new(15.0 + 6.0 * i as f64, 12.0 + 3.0 * (i % 5) as f64)).collect();
        let moved = h.apply(&base).unwrap();
        let a_ref = img.clone();
        let extract = move |im: &ImageGray| -> Result<(PointSet, Vec<Vec<f32>>)> {
            let pts = if *im == a_ref { &base } else { &moved };
            let desc = (0..12).map(|i| (0..12).map(|j| (i == j) as u8 as f32).collect()).collect();
            Ok((PointSet::from_positions(pts), desc))
        };
        let pairs = vec![WarpedPair { a: img, b, h }];
        let r = run_matching_benchmark(&extract, &pairs, &MatchingProtocol::default()).unwrap();
        assert_eq!(r.correctness[0], 1.0);
    }

    #[test]
    fn synthetic_benchmark_of_ground_truth_is_perfect() {
        let stream = crate::synthdata::SynthStream::new(crate::synthdata::StreamConfig::new(64, 64, 5)).unwrap();
        let samples: Vec<ShapeSample> = (0..30).map(|i| stream.sample_at(i)).collect();
        let lookup: Vec<(ImageGray, PointSet)> = samples.iter().map(|s| (s.image.clone(), s.gt_points.clone())).collect();
        let det = move |img: &ImageGray| -> Result<PointSet> { Ok(lookup.iter().find(|(i, _)| i == img).map(|(_, p)| p.clone()).unwrap_or_default()) };
        let r = run_synthetic_benchmark(&det, &samples, 3.0, 2).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.mle, 0.0);
    }
}
