//! Detection metrics: correctness, average precision, localization error, repeatability.

use crate::classical::detection_order;
use crate::error::{Error, Result};
use crate::geometry::{in_bounds, Homography, Point2};
use crate::points::{Keypoint, PointSet, RadiusGrid};

/// True iff `p` lies within `eps` of some ground-truth point (false for empty gt).
pub fn correct(p: &Point2, gt: &PointSet, eps: f64) -> bool {
    gt.iter().any(|g| g.pos().dist(p) <= eps)
}

/// Distance from `p` to the nearest ground-truth point within `eps`, if any.
fn nearest_within(p: &Point2, gt_pos: &[Point2], grid: &RadiusGrid, eps: f64) -> Option<f64> {
    grid.candidates(p).map(|j| gt_pos[j].dist(p)).filter(|&d| d <= eps).fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.min(d))))
}

/// Area under a precision/recall curve given points in decreasing-threshold order; the
/// curve starts at recall 0 with the first precision.
pub fn pr_area(curve: &[(f64, f64)]) -> f64 {
    let Some(&(_, p0)) = curve.first() else { return 0.0 };
    let (mut prev_r, mut prev_p) = (0.0, p0);
    let mut area = 0.0;
    for &(r, p) in curve {
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    area
}

/// True-positive flags of detections processed in order: each takes the nearest still
/// unmatched gt point within `eps` (lowest index on ties).
fn greedy_assign(dets: &[Keypoint], gt: &PointSet, eps: f64) -> Vec<bool> {
    let gt_pos = gt.positions();
    let grid = RadiusGrid::new(&gt_pos, eps);
    let mut taken = vec![false; gt_pos.len()];
    dets.iter()
        .map(|d| {
            let p = d.pos();
            let mut best: Option<(f64, usize)> = None;
            for j in grid.candidates(&p) {
                if taken[j] {
                    continue;
                }
                let dist = gt_pos[j].dist(&p);
                if dist <= eps && best.is_none_or(|(bd, bj)| dist < bd || (dist == bd && j < bj)) {
                    best = Some((dist, j));
                }
            }
            if let Some((_, j)) = best {
                taken[j] = true;
            }
            best.is_some()
        })
        .collect()
}

/// Average precision pooled over several images: detections from all images are ranked
/// together by confidence, matched one-to-one within their own image, and precision/recall
/// are evaluated at every distinct confidence.
pub fn pooled_average_precision(instances: &[(&PointSet, &PointSet)], eps: f64) -> Result<f64> {
    let total_gt: usize = instances.iter().map(|(_, g)| g.len()).sum();
    if total_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut ranked: Vec<(Keypoint, bool)> = Vec::new();
    for (dets, gt) in instances {
        let mut order = dets.points.clone();
        order.sort_by(detection_order);
        let tp = greedy_assign(&order, gt, eps);
        ranked.extend(order.into_iter().zip(tp));
    }
    ranked.sort_by(|a, b| detection_order(&a.0, &b.0));
    let mut curve = Vec::new();
    let mut tp = 0usize;
    for (i, (kp, hit)) in ranked.iter().enumerate() {
        tp += *hit as usize;
        let last_of_group = ranked.get(i + 1).is_none_or(|next| next.0.confidence != kp.confidence);
        if last_of_group {
            curve.push((tp as f64 / total_gt as f64, tp as f64 / (i + 1) as f64));
        }
    }
    Ok(pr_area(&curve))
}

pub fn average_precision(dets: &PointSet, gt: &PointSet, eps: f64) -> Result<f64> {
    pooled_average_precision(&[(dets, gt)], eps)
}

/// Mean distance to the nearest gt point over the correct detections.
pub fn localization_error(dets: &PointSet, gt: &PointSet, eps: f64) -> Result<f64> {
    let gt_pos = gt.positions();
    let grid = RadiusGrid::new(&gt_pos, eps);
    let dists: Vec<f64> = dets.iter().filter_map(|d| nearest_within(&d.pos(), &gt_pos, &grid, eps)).collect();
    if dists.is_empty() {
        return Err(Error::NoCorrectDetections);
    }
    Ok(dists.iter().sum::<f64>() / dists.len() as f64)
}

/// Points whose image under `h` stays inside a `width x height` frame, already transported.
pub(crate) fn covisible(pts: &PointSet, h: &Homography, width: usize, height: usize) -> Vec<(Point2, Point2)> {
    pts.iter()
        .filter_map(|kp| {
            let p = kp.pos();
            let q = h.apply_point(p).ok()?;
            in_bounds(&q, width, height).then_some((p, q))
        })
        .collect()
}

fn count_near(from: &[Point2], to: &[Point2], eps: f64) -> usize {
    let grid = RadiusGrid::new(to, eps);
    from.iter().filter(|p| nearest_within(p, to, &grid, eps).is_some()).count()
}

/// Symmetric repeatability of two detections related by `h` (image 1 -> image 2), both
/// restricted to the co-visible region of `width x height` frames.
pub fn repeatability(pts1: &PointSet, pts2: &PointSet, h: &Homography, width: usize, height: usize, eps: f64) -> Result<f64> {
    let inv = h.invert()?;
    let a = covisible(pts1, h, width, height);
    let b = covisible(pts2, &inv, width, height);
    if a.is_empty() && b.is_empty() {
        return Err(Error::EmptySet);
    }
    let a_in_2: Vec<Point2> = a.iter().map(|(_, q)| *q).collect();
    let b_own: Vec<Point2> = b.iter().map(|(p, _)| *p).collect();
    let b_in_1: Vec<Point2> = b.iter().map(|(_, q)| *q).collect();
    let a_own: Vec<Point2> = a.iter().map(|(p, _)| *p).collect();
    let hits = count_near(&a_in_2, &b_own, eps) + count_near(&b_in_1, &a_own, eps);
    Ok(hits as f64 / (a.len() + b.len()) as f64)
}


#[cfg(test)]
mod tests {
    use super::oracles::*;
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn ps(v: &[(f64, f64, f64)]) -> PointSet {
        PointSet::from_points(v.iter().map(|&(x, y, c)| Keypoint::new(x, y, c)).collect())
    }

    #[test]
    fn correctness_examples() {
        let gt = ps(&[(3.0, 4.0, 1.0)]);
        assert!(correct(&Point2::new(3.0, 4.0), &gt, 3.0));
        assert!(correct(&Point2::new(0.0, 0.0), &gt, 5.0));
        assert!(!correct(&Point2::new(0.0, 0.0), &gt, 4.0));
        assert!(!correct(&Point2::new(0.0, 0.0), &PointSet::new(), 4.0));
    }

    #[test]
    fn ap_examples() {
        let gt = ps(&[(10.0, 10.0, 1.0), (30.0, 30.0, 1.0)]);
        assert_eq!(average_precision(&gt, &gt, 3.0).unwrap(), 1.0);
        assert_eq!(average_precision(&PointSet::new(), &gt, 3.0).unwrap(), 0.0);
        let dets = ps(&[(10.5, 10.0, 0.9), (30.0, 31.0, 0.8), (60.0, 60.0, 0.7)]);
        assert_eq!(average_precision(&dets, &gt, 3.0).unwrap(), 1.0);
        assert!(matches!(average_precision(&dets, &PointSet::new(), 3.0), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn mle_examples() {
        let gt = ps(&[(10.0, 10.0, 1.0), (30.0, 30.0, 1.0), (50.0, 50.0, 1.0)]);
        assert_eq!(localization_error(&gt, &gt, 3.0).unwrap(), 0.0);
        assert_eq!(localization_error(&ps(&[(11.0, 10.0, 1.0)]), &gt, 3.0).unwrap(), 1.0);
        let dets = ps(&[(11.0, 10.0, 1.0), (30.0, 32.0, 1.0), (80.0, 80.0, 1.0)]);
        assert_eq!(localization_error(&dets, &gt, 3.0).unwrap(), 1.5);
        assert!(matches!(localization_error(&ps(&[(80.0, 80.0, 1.0)]), &gt, 3.0), Err(Error::NoCorrectDetections)));
    }

    #[test]
    fn repeatability_examples() {
        let a = ps(&[(0.0, 0.0, 1.0), (10.0, 10.0, 1.0)]);
        let b = ps(&[(0.0, 0.0, 1.0), (50.0, 50.0, 1.0)]);
        let id = Homography::identity();
        assert_eq!(repeatability(&a, &a, &id, 64, 64, 3.0).unwrap(), 1.0);
        assert_eq!(repeatability(&a, &b, &id, 64, 64, 3.0).unwrap(), 0.5);
        assert!(matches!(repeatability(&PointSet::new(), &PointSet::new(), &id, 64, 64, 3.0), Err(Error::EmptySet)));
    }

    fn random_set<R: Rng>(rng: &mut R, n: usize, extent: f64) -> PointSet {
        // Coarse confidences so that ties occur.
        PointSet::from_points(
            (0..n)
                .map(|_| Keypoint::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent), rng.random_range(0..8) as f64 / 8.0))
                .collect(),
        )
    }

    #[test]
    fn metrics_equal_brute_force_oracles() {
        let mut rng = seeded(11);
        for _ in 0..200 {
            let eps = rng.random_range(0.5..6.0);
            let (nd, ng) = (rng.random_range(0..50), rng.random_range(1..50));
            let dets = random_set(&mut rng, nd, 60.0);
            let gt = random_set(&mut rng, ng, 60.0);
            let gt_pos = gt.positions();
            for d in &dets {
                assert_eq!(correct(&d.pos(), &gt, eps), correct_brute(&d.pos(), &gt_pos, eps));
            }
            let ap = average_precision(&dets, &gt, eps).unwrap();
            assert!((ap - ap_brute(&dets, &gt, eps)).abs() <= 1e-12);
            assert_eq!(localization_error(&dets, &gt, eps).ok(), mle_brute(&dets, &gt, eps));
            let h = Homography::translation(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
                .compose(&Homography::rotation_about(rng.random_range(-0.3..0.3), 30.0, 30.0));
            let r = repeatability(&dets, &gt, &h, 60, 60, eps).ok();
            let rb = repeatability_brute(&dets, &gt, &h, 60, 60, eps);
            assert_eq!(r.is_some(), rb.is_some());
            if let (Some(r), Some(rb)) = (r, rb) {
                assert!((r - rb).abs() <= 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn repeatability_is_symmetric(seed in 0u64..10_000) {
            let mut rng = seeded(seed);
            let a = random_set(&mut rng, 30, 80.0);
            let b = random_set(&mut rng, 30, 80.0);
            let h = Homography::rotation_about(rng.random_range(-0.5..0.5), 40.0, 40.0)
                .compose(&Homography::translation(rng.random_range(-8.0..8.0), 2.0));
            let inv = h.invert().unwrap();
            let r1 = repeatability(&a, &b, &h, 80, 80, 3.0);
            let r2 = repeatability(&b, &a, &inv, 80, 80, 3.0);
            if let (Ok(r1), Ok(r2)) = (r1, r2) {
                prop_assert!((r1 - r2).abs() <= 1e-12);
            }
        }

        #[test]
        fn ap_is_monotone_in_eps(seed in 0u64..10_000) {
            let mut rng = seeded(seed);
            let dets = random_set(&mut rng, 25, 40.0);
            let gt = random_set(&mut rng, 20, 40.0);
            let mut prev = f64::INFINITY;
            for eps in [6.0, 4.0, 3.0, 2.0, 1.0, 0.5] {
                let ap = average_precision(&dets, &gt, eps).unwrap();
                prop_assert!(ap <= prev + 1e-12);
                prev = ap;
            }
        }
    }
}
