//! Cell-space decoding: softmax + depth-to-space heatmaps, descriptor normalization and
//! sampling, cell labels from points, and cell correspondences under a homography.

use rand::Rng;

use crate::classical::HeatMap;
use crate::error::{Error, Result};
use crate::geometry::{Homography, Point2};
use crate::imaging::catmull_rom_weights;
use crate::neural::arch::{CELL, DETECTOR_OUT, DUSTBIN};
use crate::neural::tensor::{Real, Tensor};
use crate::points::PointSet;

/// Per-cell softmax over the 65 channels (probabilities, same shape as the logits).
pub fn cell_softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, hc, wc) = logits.nchw()?;
    if c != DETECTOR_OUT {
        return Err(Error::ShapeMismatch(format!("expected 65 channels, got {c}")));
    }
    let p = hc * wc;
    let mut out = Tensor::zeros(&logits.dims);
    for i in 0..n {
        let base = i * c * p;
        for cell in 0..p {
            let mut m = logits.data[base + cell];
            for k in 1..c {
                m = m.max(logits.data[base + k * p + cell]);
            }
            let mut s = T::ZERO;
            for k in 0..c {
                let e = (logits.data[base + k * p + cell] - m).exp();
                out.data[base + k * p + cell] = e;
                s += e;
            }
            for k in 0..c {
                out.data[base + k * p + cell] /= s;
            }
        }
    }
    Ok(out)
}

/// `N x 64 x Hc x Wc` -> `N x 1 x 8Hc x 8Wc`; channel k of cell (h, w) lands on
/// pixel row `8h + k / 8`, column `8w + k % 8`.
pub fn depth_to_space<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, hc, wc) = t.nchw()?;
    if c != CELL * CELL {
        return Err(Error::ShapeMismatch(format!("depth_to_space needs 64 channels, got {c}")));
    }
    let (h, w) = (hc * CELL, wc * CELL);
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for i in 0..n {
        for k in 0..c {
            let (dy, dx) = (k / CELL, k % CELL);
            for ch in 0..hc {
                for cw in 0..wc {
                    out.data[i * h * w + (CELL * ch + dy) * w + CELL * cw + dx] = t.data[((i * c + k) * hc + ch) * wc + cw];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`depth_to_space`].
pub fn space_to_depth<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.nchw()?;
    if c != 1 || h % CELL != 0 || w % CELL != 0 {
        return Err(Error::ShapeMismatch(format!("space_to_depth needs N x 1 x 8k x 8m, got {:?}", t.dims)));
    }
    let (hc, wc, k) = (h / CELL, w / CELL, CELL * CELL);
    let mut out = Tensor::zeros(&[n, k, hc, wc]);
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let ch = (y % CELL) * CELL + x % CELL;
                out.data[((i * k + ch) * hc + y / CELL) * wc + x / CELL] = t.data[i * h * w + y * w + x];
            }
        }
    }
    Ok(out)
}

/// Softmax, drop the dustbin, depth-to-space: one full-resolution heatmap per batch item.
pub fn detector_decode<T: Real>(logits: &Tensor<T>) -> Result<Vec<HeatMap>> {
    let probs = cell_softmax(logits)?;
    let (n, _, hc, wc) = probs.nchw()?;
    let p = hc * wc;
    let mut kept = Tensor::zeros(&[n, DUSTBIN, hc, wc]);
    for i in 0..n {
        kept.data[i * DUSTBIN * p..(i + 1) * DUSTBIN * p]
            .copy_from_slice(&probs.data[i * DETECTOR_OUT * p..i * DETECTOR_OUT * p + DUSTBIN * p]);
    }
    let full = depth_to_space(&kept)?;
    let (h, w) = (hc * CELL, wc * CELL);
    (0..n)
        .map(|i| HeatMap::from_vec(w, h, full.data[i * h * w..(i + 1) * h * w].iter().map(|v| v.to_f64() as f32).collect()))
        .collect()
}

/// Per-location L2 normalization of an `N x D x Hc x Wc` tensor.
pub fn normalize_descriptors<T: Real>(d: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, dim, hc, wc) = d.nchw()?;
    let p = hc * wc;
    let mut out = d.clone();
    for i in 0..n {
        let base = i * dim * p;
        for loc in 0..p {
            let mut s = 0.0f64;
            for k in 0..dim {
                s += d.data[base + k * p + loc].to_f64().powi(2);
            }
            let inv = T::from_f64(1.0 / s.sqrt().max(1e-12));
            for k in 0..dim {
                out.data[base + k * p + loc] *= inv;
            }
        }
    }
    Ok(out)
}

/// Normalized descriptor grid of a single image.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorMap {
    pub dim: usize,
    pub hc: usize,
    pub wc: usize,
    /// `dim x hc x wc`, unit norm per location.
    pub data: Vec<f32>,
}

impl DescriptorMap {
    /// Splits a normalized `N x D x Hc x Wc` tensor into per-image maps.
    pub fn from_batch<T: Real>(normalized: &Tensor<T>) -> Result<Vec<DescriptorMap>> {
        let (n, dim, hc, wc) = normalized.nchw()?;
        let per = dim * hc * wc;
        Ok((0..n)
            .map(|i| DescriptorMap {
                dim,
                hc,
                wc,
                data: normalized.data[i * per..(i + 1) * per].iter().map(|v| v.to_f64() as f32).collect(),
            })
            .collect())
    }

    pub fn at(&self, k: usize, h: usize, w: usize) -> f32 {
        self.data[(k * self.hc + h) * self.wc + w]
    }
}

/// Coarse grid coordinate of a pixel coordinate (cell centers at `3.5 + 8k`).
pub fn pixel_to_cell_coord(v: f64) -> f64 {
    (v - (CELL as f64 - 1.0) / 2.0) / CELL as f64
}

pub fn cell_center(h: usize, w: usize) -> Point2 {
    let half = (CELL as f64 - 1.0) / 2.0;
    Point2::new(CELL as f64 * w as f64 + half, CELL as f64 * h as f64 + half)
}

/// Bicubic (Catmull-Rom, border replicate) interpolation of the grid at each point, re-normalized.
pub fn descriptor_sample(map: &DescriptorMap, pts: &PointSet) -> Result<Vec<Vec<f32>>> {
    if map.hc == 0 || map.wc == 0 || map.dim == 0 {
        return Err(Error::EmptyDescriptorMap);
    }
    let mut out = Vec::with_capacity(pts.len());
    for kp in pts {
        let u = pixel_to_cell_coord(kp.x);
        let v = pixel_to_cell_coord(kp.y);
        let (u0, v0) = (u.floor(), v.floor());
        let wx = catmull_rom_weights(u - u0);
        let wy = catmull_rom_weights(v - v0);
        let clamp = |i: f64, n: usize| (i as isize).clamp(0, n as isize - 1) as usize;
        let xs: [usize; 4] = std::array::from_fn(|k| clamp(u0 + k as f64 - 1.0, map.wc));
        let ys: [usize; 4] = std::array::from_fn(|k| clamp(v0 + k as f64 - 1.0, map.hc));
        let mut d = vec![0.0f64; map.dim];
        for (k, dk) in d.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &yy) in ys.iter().enumerate() {
                if wy[j] == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for (i, &xx) in xs.iter().enumerate() {
                    if wx[i] != 0.0 {
                        row += wx[i] * map.at(k, yy, xx) as f64;
                    }
                }
                acc += wy[j] * row;
            }
            *dk = acc;
        }
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        out.push(d.iter().map(|v| (v / norm) as f32).collect());
    }
    Ok(out)
}

/// Label grid: 0..=63 = position of the corner inside the 8x8 cell, 64 = dustbin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellLabels {
    pub hc: usize,
    pub wc: usize,
    pub labels: Vec<u8>,
}

impl CellLabels {
    pub fn empty(hc: usize, wc: usize) -> Self {
        Self { hc, wc, labels: vec![DUSTBIN as u8; hc * wc] }
    }

    pub fn get(&self, h: usize, w: usize) -> u8 {
        self.labels[h * self.wc + w]
    }
}

/// Rounds each point to its pixel and writes its in-cell position; a cell hit by several
/// points keeps a uniformly chosen one (reservoir sampling in input order).
pub fn cells_from_points<R: Rng + ?Sized>(gt: &PointSet, height: usize, width: usize, rng: &mut R) -> CellLabels {
    let (hc, wc) = (height / CELL, width / CELL);
    let mut labels = CellLabels::empty(hc, wc);
    let mut hits = vec![0u32; hc * wc];
    for kp in gt {
        let px = kp.x.round();
        let py = kp.y.round();
        if px < 0.0 || py < 0.0 || px >= (wc * CELL) as f64 || py >= (hc * CELL) as f64 {
            continue;
        }
        let (px, py) = (px as usize, py as usize);
        let cell = (py / CELL) * wc + px / CELL;
        hits[cell] += 1;
        if hits[cell] == 1 || rng.random_range(0..hits[cell]) == 0 {
            labels.labels[cell] = ((py % CELL) * CELL + px % CELL) as u8;
        }
    }
    labels
}

/// Sparse cell-correspondence matrix: `pairs[p]` lists the warped-grid cells `q` with
/// `|H c_p - c_q| <= 8`, cells indexed row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Correspondences {
    pub hc: usize,
    pub wc: usize,
    pub pairs: Vec<Vec<u32>>,
}

impl Correspondences {
    pub fn contains(&self, p: usize, q: usize) -> bool {
        self.pairs[p].binary_search(&(q as u32)).is_ok()
    }

    pub fn count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

pub fn correspondences(h: &Homography, hc: usize, wc: usize) -> Result<Correspondences> {
    if !h.is_invertible() {
        return Err(Error::Singular);
    }
    let radius = CELL as f64;
    let mut pairs = vec![Vec::new(); hc * wc];
    for ch in 0..hc {
        for cw in 0..wc {
            let Ok(q) = h.apply_point(cell_center(ch, cw)) else { continue };
            if !q.x.is_finite() || !q.y.is_finite() {
                continue;
            }
            let gx = pixel_to_cell_coord(q.x).round() as i64;
            let gy = pixel_to_cell_coord(q.y).round() as i64;
            let list = &mut pairs[ch * wc + cw];
            for yy in gy - 2..=gy + 2 {
                for xx in gx - 2..=gx + 2 {
                    if yy < 0 || xx < 0 || yy >= hc as i64 || xx >= wc as i64 {
                        continue;
                    }
                    if cell_center(yy as usize, xx as usize).dist_sq(&q) <= radius * radius {
                        list.push((yy as usize * wc + xx as usize) as u32);
                    }
                }
            }
            list.sort_unstable();
        }
    }
    Ok(Correspondences { hc, wc, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::random_tensor;
    use crate::points::Keypoint;
    use crate::rng::seeded;

    #[test]
    fn uniform_logits_decode_to_one_over_65() {
        let logits = Tensor::<f32>::zeros(&[1, 65, 2, 3]);
        let hm = &detector_decode(&logits).unwrap()[0];
        assert_eq!((hm.width(), hm.height()), (24, 16));
        assert!(hm.data().iter().all(|&v| (v - 1.0 / 65.0).abs() < 1e-7));
    }

    #[test]
    fn one_hot_logit_lands_on_its_pixel() {
        let mut logits = Tensor::<f64>::zeros(&[1, 65, 2, 2]);
        logits.data[10 * 4] = 20.0;
        let hm = &detector_decode(&logits).unwrap()[0];
        assert!(hm.get(2, 1) > 0.999);
        for y in 0..8 {
            for x in 0..8 {
                if (x, y) != (2, 1) {
                    assert!(hm.get(x, y) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn cell_probabilities_sum_to_one() {
        let mut rng = seeded(1);
        let mut logits = random_tensor(&[2, 65, 3, 4], &mut rng);
        logits.scale(5.0);
        let probs = cell_softmax(&logits).unwrap();
        let maps = detector_decode(&logits).unwrap();
        for (i, hm) in maps.iter().enumerate() {
            for ch in 0..3 {
                for cw in 0..4 {
                    let mut s = probs.data[((i * 65 + 64) * 3 + ch) * 4 + cw];
                    for y in 0..8 {
                        for x in 0..8 {
                            s += hm.get(8 * cw + x, 8 * ch + y) as f64;
                        }
                    }
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn depth_to_space_round_trip() {
        let t = Tensor::<f64>::from_vec(&[2, 64, 3, 2], (0..2 * 64 * 6).map(|i| i as f64).collect()).unwrap();
        let s = depth_to_space(&t).unwrap();
        assert_eq!(space_to_depth(&s).unwrap(), t);
        assert_eq!(s.data[1 * 16 + 2], t.data[10 * 6]);
    }

    fn random_map(dim: usize, hc: usize, wc: usize, seed: u64) -> DescriptorMap {
        let mut rng = seeded(seed);
        let d = normalize_descriptors(&random_tensor(&[1, dim, hc, wc], &mut rng)).unwrap();
        DescriptorMap::from_batch(&d).unwrap().remove(0)
    }

    #[test]
    fn sampling_at_cell_centers_is_exact() {
        let map = random_map(8, 4, 5, 2);
        let pts = PointSet::from_positions(&[cell_center(2, 3), cell_center(0, 0), cell_center(3, 4)]);
        let got = descriptor_sample(&map, &pts).unwrap();
        for (d, (h, w)) in got.iter().zip([(2, 3), (0, 0), (3, 4)]) {
            for k in 0..8 {
                assert!((d[k] - map.at(k, h, w)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sampled_descriptors_are_unit_norm() {
        let map = random_map(16, 6, 6, 3);
        let mut rng = seeded(4);
        let pts: PointSet =
            (0..50).map(|_| Keypoint::new(rng.random_range(0.0..47.0), rng.random_range(0.0..47.0), 1.0)).collect();
        for d in descriptor_sample(&map, &pts).unwrap() {
            let n: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let constant = DescriptorMap { dim: 2, hc: 3, wc: 3, data: [vec![0.6; 9], vec![0.8; 9]].concat() };
        for d in descriptor_sample(&constant, &pts).unwrap() {
            assert!((d[0] - 0.6).abs() < 1e-6 && (d[1] - 0.8).abs() < 1e-6);
        }
        let empty = DescriptorMap { dim: 2, hc: 0, wc: 3, data: vec![] };
        assert!(matches!(descriptor_sample(&empty, &pts), Err(Error::EmptyDescriptorMap)));
    }

    #[test]
    fn cell_label_examples() {
        let mut rng = seeded(0);
        assert!(cells_from_points(&PointSet::new(), 16, 16, &mut rng).labels.iter().all(|&l| l == 64));
        let l = cells_from_points(&PointSet::from_positions(&[Point2::new(1.0, 2.0)]), 16, 16, &mut rng);
        assert_eq!(l.get(0, 0), 17);
        assert_eq!(l.get(1, 1), 64);
        let two = PointSet::from_positions(&[Point2::new(1.0, 2.0), Point2::new(5.0, 6.0)]);
        let a = cells_from_points(&two, 16, 16, &mut seeded(7)).get(0, 0);
        let b = cells_from_points(&two, 16, 16, &mut seeded(7)).get(0, 0);
        assert_eq!(a, b);
        assert!(a == 17 || a == 6 * 8 + 5);
        let mut seen = std::collections::HashSet::new();
        for s in 0..50 {
            seen.insert(cells_from_points(&two, 16, 16, &mut seeded(s)).get(0, 0));
        }
        assert_eq!(seen.len(), 2, "both collision outcomes occur");
    }

    #[test]
    fn correspondence_fixture() {
        let (hc, wc) = (4, 6);
        let s = correspondences(&Homography::identity(), hc, wc).unwrap();
        let idx = |h: usize, w: usize| h * wc + w;
        assert!(s.contains(idx(1, 1), idx(1, 1)));
        assert!(s.contains(idx(1, 1), idx(1, 2)));
        assert!(s.contains(idx(1, 1), idx(2, 1)));
        assert!(!s.contains(idx(1, 1), idx(2, 2)));
        assert_eq!(s.pairs[idx(1, 1)].len(), 5);

        let t = correspondences(&Homography::translation(16.0, 0.0), hc, wc).unwrap();
        // Each cell's pattern under the shift is the identity pattern of the cell two to the right.
        for h in 0..hc {
            for w in 0..wc - 2 {
                assert_eq!(t.pairs[idx(h, w)], s.pairs[idx(h, w + 2)]);
            }
        }
        assert!(matches!(correspondences(&Homography::new([0.0; 9]), 2, 2), Err(Error::Singular)));
    }
}
