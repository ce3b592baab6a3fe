//! Nearest-neighbor descriptor matching, NN mAP and matching score.

use crate::error::{Error, Result};
use crate::evalsuite::metrics::pr_area;
use crate::geometry::{in_bounds, Homography, Point2};
use crate::points::PointSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// One match per descriptor of the first set, in index order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    pub matches: Vec<Match>,
}

impl MatchSet {
    /// Matched point pairs `(a, b)`.
    pub fn point_pairs(&self, a: &PointSet, b: &PointSet) -> Vec<(Point2, Point2)> {
        self.matches.iter().map(|m| (a.points[m.a].pos(), b.points[m.b].pos())).collect()
    }

    pub fn to_csv(&self, a: &PointSet, b: &PointSet) -> String {
        let mut s = String::from("index_a,index_b,xa,ya,xb,yb,distance\n");
        for m in &self.matches {
            let (pa, pb) = (&a.points[m.a], &b.points[m.b]);
            s.push_str(&format!("{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n", m.a, m.b, pa.x, pa.y, pb.x, pb.y, m.distance));
        }
        s
    }
}

pub fn descriptor_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt()
}

/// For every `a` the closest `b` in Euclidean distance (lowest index on ties).
pub fn match_nn(desc_a: &[Vec<f32>], desc_b: &[Vec<f32>]) -> Result<MatchSet> {
    if desc_b.is_empty() {
        return Err(Error::EmptySet);
    }
    let matches = desc_a
        .iter()
        .enumerate()
        .map(|(i, da)| {
            let mut best = Match { a: i, b: 0, distance: descriptor_distance(da, &desc_b[0]) };
            for (j, db) in desc_b.iter().enumerate().skip(1) {
                let d = descriptor_distance(da, db);
                if d < best.distance {
                    best = Match { a: i, b: j, distance: d };
                }
            }
            best
        })
        .collect();
    Ok(MatchSet { matches })
}

/// Detections with descriptors for one image.
#[derive(Clone, Copy, Debug)]
pub struct Features<'a> {
    pub points: &'a PointSet,
    pub descriptors: &'a [Vec<f32>],
}

fn match_is_correct(pa: Point2, pb: Point2, h: &Homography, eps: f64) -> bool {
    h.apply_point(pa).map(|q| q.dist(&pb) <= eps).unwrap_or(false)
}

/// Area under the precision/recall curve of NN matches swept over the descriptor distance,
/// with recall relative to the points of `a` that have some geometric counterpart in `b`.
fn nn_ap_one_way(a: Features, b: Features, h: &Homography, eps: f64) -> Result<f64> {
    let m = match_nn(a.descriptors, b.descriptors)?;
    let positives = a
        .points
        .iter()
        .filter(|pa| b.points.iter().any(|pb| match_is_correct(pa.pos(), pb.pos(), h, eps)))
        .count();
    if positives == 0 {
        return Ok(0.0);
    }
    let mut ranked: Vec<(f64, bool)> = m
        .matches
        .iter()
        .map(|mm| (mm.distance, match_is_correct(a.points.points[mm.a].pos(), b.points.points[mm.b].pos(), h, eps)))
        .collect();
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut curve = Vec::new();
    let mut tp = 0usize;
    for (i, &(d, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        if ranked.get(i + 1).is_none_or(|n| n.0 != d) {
            curve.push((tp as f64 / positives as f64, tp as f64 / (i + 1) as f64));
        }
    }
    Ok(pr_area(&curve))
}

/// Nearest-neighbor mAP, averaged over the `a -> b` and `b -> a` directions.
pub fn nn_map(a: Features, b: Features, h: &Homography, eps: f64) -> Result<f64> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::NoMatches);
    }
    let inv = h.invert()?;
    Ok((nn_ap_one_way(a, b, h, eps)? + nn_ap_one_way(b, a, &inv, eps)?) / 2.0)
}

fn restrict<'a>(f: Features<'a>, h: &Homography, width: usize, height: usize) -> (PointSet, Vec<Vec<f32>>) {
    let mut pts = PointSet::new();
    let mut desc = Vec::new();
    for (kp, d) in f.points.iter().zip(f.descriptors) {
        if h.apply_point(kp.pos()).map(|q| in_bounds(&q, width, height)).unwrap_or(false) {
            pts.push(*kp);
            desc.push(d.clone());
        }
    }
    (pts, desc)
}

/// Correct NN matches over `min(N1, N2)` co-visible features, averaged over both directions.
pub fn matching_score(a: Features, b: Features, h: &Homography, width: usize, height: usize, eps: f64) -> Result<f64> {
    let inv = h.invert()?;
    let (pa, da) = restrict(a, h, width, height);
    let (pb, db) = restrict(b, &inv, width, height);
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::NoFeaturesInRegion);
    }
    let denom = pa.len().min(pb.len()) as f64;
    let count = |from: &PointSet, fd: &[Vec<f32>], to: &PointSet, td: &[Vec<f32>], hh: &Homography| -> Result<usize> {
        let m = match_nn(fd, td)?;
        Ok(m.matches.iter().filter(|mm| match_is_correct(from.points[mm.a].pos(), to.points[mm.b].pos(), hh, eps)).count())
    };
    let ab = count(&pa, &da, &pb, &db, h)? as f64 / denom;
    let ba = count(&pb, &db, &pa, &da, &inv)? as f64 / denom;
    Ok((ab.min(1.0) + ba.min(1.0)) / 2.0)
}
