//! Homography estimation: normalized DLT, RANSAC and the corner-transfer correctness test.

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::geometry::{image_corners, Homography, Point2};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold on the symmetric transfer error, in pixels.
    pub threshold: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold: 3.0, max_iters: 2000, confidence: 0.995, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult {
    pub h: Homography,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacResult {
    pub fn num_inliers(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn hartley(points: &[Point2]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean = points.iter().map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean > 1e-12) {
        return Err(Error::DegenerateConfiguration);
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply3(m: &Matrix3<f64>, p: &Point2) -> (f64, f64) {
    let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    ((m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w, (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w)
}

fn to_h(m: &Matrix3<f64>) -> Homography {
    Homography { m: std::array::from_fn(|i| m[(i / 3, i % 3)]) }
}

/// Least-squares homography mapping `src` to `dst` (at least 4 pairs) with Hartley normalization.
pub fn dlt(src: &[Point2], dst: &[Point2]) -> Result<Homography> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} points", src.len(), dst.len())));
    }
    if src.len() < 4 {
        return Err(Error::InsufficientMatches(src.len()));
    }
    let ts = hartley(src)?;
    let td = hartley(dst)?;
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        let (x, y) = apply3(&ts, p);
        let (u, v) = apply3(&td, q);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let k = (0..svd.singular_values.len())
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .expect("nine singular values");
    let hn = Matrix3::from_fn(|r, c| vt[(k, r * 3 + c)]);
    let td_inv = td.try_inverse().ok_or(Error::Singular)?;
    to_h(&(td_inv * hn * ts)).normalize()
}

fn collinear(a: &Point2, b: &Point2, c: &Point2) -> bool {
    let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let scale = a.dist(b).max(a.dist(c)).max(b.dist(c)).max(1e-300);
    cross.abs() <= 1e-9 * scale * scale
}

/// Whether any three of the four points are (numerically) collinear.
fn degenerate_sample(p: &[Point2; 4]) -> bool {
    (0..4).any(|skip| {
        let t: Vec<&Point2> = (0..4).filter(|&i| i != skip).map(|i| &p[i]).collect();
        collinear(t[0], t[1], t[2])
    })
}

fn all_collinear(points: &[Point2]) -> bool {
    let Some(a) = points.first() else { return true };
    let Some(b) = points.iter().max_by(|p, q| a.dist(p).total_cmp(&a.dist(q))) else { return true };
    points.iter().all(|c| collinear(a, b, c))
}

/// Larger of the forward and backward transfer distances.
pub fn symmetric_transfer_error(h: &Homography, inv: &Homography, p: &Point2, q: &Point2) -> f64 {
    let fwd = h.apply_point(*p).map(|x| x.dist(q)).unwrap_or(f64::INFINITY);
    let bwd = inv.apply_point(*q).map(|x| x.dist(p)).unwrap_or(f64::INFINITY);
    fwd.max(bwd)
}

fn score(h: &Homography, pairs: &[(Point2, Point2)], threshold: f64) -> Option<(Vec<bool>, usize, f64)> {
    let inv = h.invert().ok()?;
    let mut flags = Vec::with_capacity(pairs.len());
    let (mut count, mut err) = (0, 0.0);
    for (p, q) in pairs {
        let e = symmetric_transfer_error(h, &inv, p, q);
        let inlier = e <= threshold;
        if inlier {
            count += 1;
            err += e;
        }
        flags.push(inlier);
    }
    Some((flags, count, err))
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 {
        return 1;
    }
    if w4 <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    (n.ceil().max(1.0) as usize).min(cap)
}

/// RANSAC over minimal 4-point samples with a DLT refit on the final inlier set.
pub fn estimate_homography(pairs: &[(Point2, Point2)], cfg: &RansacConfig) -> Result<RansacResult> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientMatches(pairs.len()));
    }
    let src: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    if all_collinear(&src) || all_collinear(&dst) {
        return Err(Error::DegenerateConfiguration);
    }
    let mut rng = seeded(cfg.seed);
    let mut best: Option<(Vec<bool>, usize, f64)> = None;
    let mut needed = cfg.max_iters;
    let mut iterations = 0;
    let mut draws = 0;
    while iterations < needed && draws < cfg.max_iters * 10 {
        draws += 1;
        let idx = sample(&mut rng, pairs.len(), 4);
        let s: [Point2; 4] = std::array::from_fn(|i| src[idx.index(i)]);
        let d: [Point2; 4] = std::array::from_fn(|i| dst[idx.index(i)]);
        if degenerate_sample(&s) || degenerate_sample(&d) {
            continue;
        }
        iterations += 1;
        let Ok(h) = dlt(&s, &d) else { continue };
        let Some(cand) = score(&h, pairs, cfg.threshold) else { continue };
        let better = best.as_ref().is_none_or(|b| cand.1 > b.1 || (cand.1 == b.1 && cand.2 < b.2));
        if better {
            needed = required_iterations(cand.1 as f64 / pairs.len() as f64, cfg.confidence, cfg.max_iters);
            best = Some(cand);
        }
    }
    let (flags, count, _) = best.ok_or(Error::DegenerateConfiguration)?;
    if count < 4 {
        return Err(Error::DegenerateConfiguration);
    }
    let (is, id): (Vec<Point2>, Vec<Point2>) = pairs.iter().zip(&flags).filter(|(_, &f)| f).map(|(p, _)| *p).unzip();
    let h = dlt(&is, &id)?;
    let inliers = score(&h, pairs, cfg.threshold).map(|s| s.0).unwrap_or(flags);
    Ok(RansacResult { h, inliers, iterations })
}

/// Mean distance between the four image corners mapped by the two homographies.
pub fn corner_error(h_est: &Homography, h_gt: &Homography, width: usize, height: usize) -> Result<f64> {
    if !h_est.is_invertible() || !h_gt.is_invertible() {
        return Err(Error::Singular);
    }
    let mut total = 0.0;
    for c in image_corners(width, height) {
        total += h_gt.apply_point(c)?.dist(&h_est.apply_point(c)?);
    }
    Ok(total / 4.0)
}

pub fn homography_correctness(h_est: &Homography, h_gt: &Homography, width: usize, height: usize, eps: f64) -> Result<bool> {
    Ok(corner_error(h_est, h_gt, width, height)? <= eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn known_h() -> Homography {
        Homography { m: [1.1, 0.05, 3.0, -0.04, 0.95, -2.0, 1e-4, -2e-4, 1.0] }
    }

    fn max_corner_err(a: &Homography, b: &Homography) -> f64 {
        image_corners(320, 240).iter().map(|c| a.apply_point(*c).unwrap().dist(&b.apply_point(*c).unwrap())).fold(0.0, f64::max)
    }

    #[test]
    fn exact_minimal_solve() {
        let h = known_h();
        let src = [Point2::new(10.0, 20.0), Point2::new(300.0, 15.0), Point2::new(280.0, 220.0), Point2::new(20.0, 200.0)];
        let pairs: Vec<(Point2, Point2)> = src.iter().map(|p| (*p, h.apply_point(*p).unwrap())).collect();
        let r = estimate_homography(&pairs, &RansacConfig::default()).unwrap();
        assert!(max_corner_err(&r.h, &h) < 1e-6);
        assert_eq!(r.num_inliers(), 4);
    }

    fn outlier_fixture(seed: u64, scale: f64) -> Vec<(Point2, Point2)> {
        let mut rng = seeded(seed);
        let h = known_h();
        (0..100)
            .map(|i| {
                let p = Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0));
                let q = if i % 10 < 3 { Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0)) } else { h.apply_point(p).unwrap() };
                (Point2::new(p.x * scale, p.y * scale), Point2::new(q.x * scale, q.y * scale))
            })
            .collect()
    }

    #[test]
    fn outliers_with_exact_inliers() {
        let pairs = outlier_fixture(3, 1.0);
        let r = estimate_homography(&pairs, &RansacConfig::default()).unwrap();
        assert!(max_corner_err(&r.h, &known_h()) < 1e-6);
        assert!(r.num_inliers() >= 70);
    }

    #[test]
    fn rescaling_keeps_inliers() {
        let a = estimate_homography(&outlier_fixture(4, 1.0), &RansacConfig::default()).unwrap();
        let b = estimate_homography(&outlier_fixture(4, 10.0), &RansacConfig::default()).unwrap();
        assert_eq!(a.inliers, b.inliers);
        let s = Homography::scaling(10.0, 10.0);
        let b_unscaled = s.invert().unwrap().compose(&b.h).compose(&s);
        assert!(max_corner_err(&a.h, &b_unscaled) < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<(Point2, Point2)> = (0..10).map(|i| (Point2::new(i as f64, 2.0 * i as f64), Point2::new(i as f64, i as f64))).collect();
        assert!(matches!(estimate_homography(&line, &RansacConfig::default()), Err(Error::DegenerateConfiguration)));
        assert!(matches!(estimate_homography(&line[..3], &RansacConfig::default()), Err(Error::InsufficientMatches(3))));
    }

    #[test]
    fn noisy_inliers_pass_correctness() {
        let h = known_h();
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut ok = 0;
        for seed in 0..20 {
            let mut rng = seeded(100 + seed);
            let pairs: Vec<(Point2, Point2)> = (0..100)
                .map(|i| {
                    let p = Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0));
                    let q = if i % 10 < 3 {
                        Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0))
                    } else {
                        let t = h.apply_point(p).unwrap();
                        Point2::new(t.x + noise.sample(&mut rng), t.y + noise.sample(&mut rng))
                    };
                    (p, q)
                })
                .collect();
            let r = estimate_homography(&pairs, &RansacConfig { seed, ..RansacConfig::default() }).unwrap();
            ok += homography_correctness(&r.h, &h, 320, 240, 3.0).unwrap() as usize;
        }
        assert!(ok >= 19);
    }

    #[test]
    fn correctness_examples() {
        let h = known_h();
        assert!(homography_correctness(&h, &h, 320, 240, 1e-9).unwrap());
        let off = Homography::translation(2.0, 0.0).compose(&h);
        assert!((corner_error(&off, &h, 320, 240).unwrap() - 2.0).abs() < 1e-9);
        assert!(!homography_correctness(&off, &h, 320, 240, 1.0).unwrap());
        assert!(homography_correctness(&off, &h, 320, 240, 3.0).unwrap());
    }
}
