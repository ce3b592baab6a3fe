//! Classical corner detectors and point post-processing (NMS, thresholding, top-K).

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::imaging::ImageGray;
use crate::points::{Keypoint, PointSet, RadiusGrid};

const MIN_SIZE: usize = 7;
const FAST_NMS_RADIUS: f64 = 3.0;

/// Dense per-pixel "point-ness" response.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl HeatMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} values for a {width}x{height} heatmap", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Location of the largest response; ties go to the first in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Treats the heatmap as an image (values clamped into `[0, 1]`).
    pub fn as_image(&self) -> ImageGray {
        ImageGray::from_vec(self.width, self.height, self.data.clone()).expect("sized buffer")
    }

    pub fn from_image(img: &ImageGray) -> HeatMap {
        HeatMap { width: img.width(), height: img.height(), data: img.data().to_vec() }
    }

    /// Bilinear sample with clamped coordinates (no value clamping, unlike images).
    pub fn bilinear(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        (1.0 - fx) * (1.0 - fy) * self.get(x0, y0)
            + fx * (1.0 - fy) * self.get(x1, y0)
            + (1.0 - fx) * fy * self.get(x0, y1)
            + fx * fy * self.get(x1, y1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorParams {
    pub harris_k: f64,
    /// Gaussian window sigma in pixels, truncated at 3 sigma.
    pub window_sigma: f64,
    /// Segment-test intensity threshold on `[0, 1]` pixels.
    pub fast_threshold: f64,
    /// Required contiguous arc length on the 16-pixel circle.
    pub fast_arc: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self { harris_k: 0.04, window_sigma: 1.0, fast_threshold: 0.08, fast_arc: 9 }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.harris_k > 0.0 && self.harris_k < 0.25) {
            return Err(Error::InvalidConfig(format!("harris_k {} not in (0, 0.25)", self.harris_k)));
        }
        if !(9..=12).contains(&self.fast_arc) {
            return Err(Error::InvalidConfig(format!("fast_arc {} not in [9, 12]", self.fast_arc)));
        }
        if !(self.window_sigma > 0.0) || !(self.fast_threshold >= 0.0) {
            return Err(Error::InvalidConfig("window_sigma must be > 0 and fast_threshold >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassicalKind {
    Fast,
    Harris,
    ShiTomasi,
}

impl ClassicalKind {
    pub const ALL: [ClassicalKind; 3] = [ClassicalKind::Fast, ClassicalKind::Harris, ClassicalKind::ShiTomasi];

    pub fn name(&self) -> &'static str {
        match self {
            ClassicalKind::Fast => "fast",
            ClassicalKind::Harris => "harris",
            ClassicalKind::ShiTomasi => "shi",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "fast" => Some(ClassicalKind::Fast),
            "harris" => Some(ClassicalKind::Harris),
            "shi" | "shi_tomasi" | "shi-tomasi" => Some(ClassicalKind::ShiTomasi),
            _ => None,
        }
    }

    pub fn heatmap(&self, img: &ImageGray, params: &DetectorParams) -> Result<HeatMap> {
        match self {
            ClassicalKind::Fast => fast_heatmap(img, params),
            ClassicalKind::Harris => harris(img, params),
            ClassicalKind::ShiTomasi => shi_tomasi(img, params),
        }
    }
}

fn check_size(img: &ImageGray) -> Result<()> {
    if img.width() < MIN_SIZE || img.height() < MIN_SIZE {
        return Err(Error::ImageTooSmall { width: img.width(), height: img.height(), min: MIN_SIZE });
    }
    Ok(())
}

/// Windowed structure tensor `(Ixx, Ixy, Iyy)` from central differences.
fn structure_tensor(img: &ImageGray, sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let (mut xx, mut xy, mut yy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5 * (img.get_clamped(xi + 1, yi) as f64 - img.get_clamped(xi - 1, yi) as f64);
            let gy = 0.5 * (img.get_clamped(xi, yi + 1) as f64 - img.get_clamped(xi, yi - 1) as f64);
            let i = y * w + x;
            xx[i] = gx * gx;
            xy[i] = gx * gy;
            yy[i] = gy * gy;
        }
    }
    let kernel = gaussian_kernel(sigma);
    (
        separable_blur(&xx, w, h, &kernel),
        separable_blur(&xy, w, h, &kernel),
        separable_blur(&yy, w, h, &kernel),
    )
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn separable_blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Harris response `det(M) - k trace(M)^2`.
pub fn harris(img: &ImageGray, params: &DetectorParams) -> Result<HeatMap> {
    check_size(img)?;
    params.validate()?;
    let (xx, xy, yy) = structure_tensor(img, params.window_sigma);
    let data = (0..xx.len())
        .map(|i| {
            let det = xx[i] * yy[i] - xy[i] * xy[i];
            let tr = xx[i] + yy[i];
            (det - params.harris_k * tr * tr) as f32
        })
        .collect();
    HeatMap::from_vec(img.width(), img.height(), data)
}

/// Shi-Tomasi response: the smaller eigenvalue of the structure tensor.
pub fn shi_tomasi(img: &ImageGray, params: &DetectorParams) -> Result<HeatMap> {
    check_size(img)?;
    params.validate()?;
    let (xx, xy, yy) = structure_tensor(img, params.window_sigma);
    let data = (0..xx.len())
        .map(|i| {
            let mean = 0.5 * (xx[i] + yy[i]);
            let half_diff = 0.5 * (xx[i] - yy[i]);
            let lambda_min = mean - (half_diff * half_diff + xy[i] * xy[i]).sqrt();
            lambda_min.max(0.0) as f32
        })
        .collect();
    HeatMap::from_vec(img.width(), img.height(), data)
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const FAST_CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Summed positive margin over the circle if some length-`arc` window is all positive.
fn arc_margin(margins: &[f32; 16], arc: usize) -> Option<f32> {
    let mut run = 0;
    let mut fires = false;
    // Two laps so runs that wrap past index 15 are counted.
    for i in 0..32 {
        if margins[i % 16] > 0.0 {
            run += 1;
            if run >= arc {
                fires = true;
                break;
            }
        } else {
            run = 0;
        }
    }
    fires.then(|| margins.iter().filter(|&&m| m > 0.0).sum())
}

/// Segment-test score at `(x, y)`: the larger summed margin of a firing polarity, if any.
pub fn fast_score(img: &ImageGray, x: usize, y: usize, params: &DetectorParams) -> Option<f32> {
    let c = img.get(x, y);
    let t = params.fast_threshold as f32;
    let mut brighter = [0.0f32; 16];
    let mut darker = [0.0f32; 16];
    for (i, (dx, dy)) in FAST_CIRCLE.iter().enumerate() {
        let p = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        brighter[i] = (p - c) - t;
        darker[i] = (c - p) - t;
    }
    match (arc_margin(&brighter, params.fast_arc), arc_margin(&darker, params.fast_arc)) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// FAST segment-test detections scored by arc margin, followed by 3-px NMS.
pub fn fast(img: &ImageGray, params: &DetectorParams) -> Result<PointSet> {
    check_size(img)?;
    params.validate()?;
    let mut raw = PointSet::new();
    for y in 3..img.height() - 3 {
        for x in 3..img.width() - 3 {
            if let Some(score) = fast_score(img, x, y, params) {
                raw.push(Keypoint::new(x as f64, y as f64, score as f64));
            }
        }
    }
    Ok(nms(&raw, FAST_NMS_RADIUS))
}

/// FAST detections rendered as a sparse heatmap (zero elsewhere).
pub fn fast_heatmap(img: &ImageGray, params: &DetectorParams) -> Result<HeatMap> {
    let pts = fast(img, params)?;
    let mut hm = HeatMap::new(img.width(), img.height());
    for p in &pts {
        hm.set(p.x as usize, p.y as usize, p.confidence as f32);
    }
    Ok(hm)
}

/// Canonical detection order: confidence descending, then `(y, x)` ascending.
pub fn detection_order(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
        .then(a.x.partial_cmp(&b.x).unwrap_or(Ordering::Equal))
}

/// Greedy non-maximum suppression; output is in acceptance order.
pub fn nms(points: &PointSet, radius: f64) -> PointSet {
    let mut order: Vec<Keypoint> = points.points.clone();
    order.sort_by(detection_order);
    let positions: Vec<Point2> = order.iter().map(Keypoint::pos).collect();
    let mut accepted_grid = RadiusGrid::new(&positions, radius).empty_like();
    let r2 = radius * radius;
    let mut out = Vec::new();
    for kp in order {
        let p = kp.pos();
        let blocked = accepted_grid.candidates(&p).any(|j: usize| {
            let q: &Keypoint = &out[j];
            q.pos().dist_sq(&p) <= r2
        });
        if !blocked {
            accepted_grid.insert(&p, out.len());
            out.push(kp);
        }
    }
    PointSet::from_points(out)
}

/// Pixels with response `>= threshold`, NMS at `nms_radius`, first `top_k` kept (0 = all).
pub fn heatmap_to_points(hm: &HeatMap, threshold: f32, nms_radius: f64, top_k: usize) -> PointSet {
    let mut cand = PointSet::new();
    for y in 0..hm.height() {
        for x in 0..hm.width() {
            let v = hm.get(x, y);
            if v >= threshold {
                cand.push(Keypoint::new(x as f64, y as f64, v as f64));
            }
        }
    }
    let mut out = nms(&cand, nms_radius);
    if top_k > 0 {
        out.points.truncate(top_k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    /// Black quadrant `x < cx, y < cy` on white.
    fn step_corner(w: usize, h: usize, cx: usize, cy: usize) -> ImageGray {
        let mut img = ImageGray::filled(w, h, 1.0);
        for y in 0..cy {
            for x in 0..cx {
                img.set(x, y, 0.0);
            }
        }
        img
    }

    fn step_edge(w: usize, h: usize, cx: usize) -> ImageGray {
        let mut img = ImageGray::filled(w, h, 1.0);
        for y in 0..h {
            for x in 0..cx {
                img.set(x, y, 0.0);
            }
        }
        img
    }

    // The ideal corner sits between pixels cx-1 and cx, i.e. at (cx - 0.5, cy - 0.5).
    fn brute_argmax(hm: &HeatMap) -> (usize, usize) {
        let mut best = (0, 0);
        let mut bv = f32::NEG_INFINITY;
        for y in 0..hm.height() {
            for x in 0..hm.width() {
                if hm.get(x, y) > bv {
                    bv = hm.get(x, y);
                    best = (x, y);
                }
            }
        }
        best
    }

    #[test]
    fn constant_image_has_no_response() {
        let img = ImageGray::filled(20, 20, 0.4);
        let p = DetectorParams::default();
        assert!(harris(&img, &p).unwrap().data().iter().all(|v| v.abs() < 1e-9));
        assert!(shi_tomasi(&img, &p).unwrap().data().iter().all(|v| v.abs() < 1e-9));
        assert!(fast(&img, &p).unwrap().is_empty());
    }

    #[test]
    fn too_small() {
        let img = ImageGray::filled(6, 20, 0.4);
        assert!(matches!(harris(&img, &DetectorParams::default()), Err(Error::ImageTooSmall { .. })));
        assert!(matches!(fast(&img, &DetectorParams::default()), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn harris_and_shi_peak_at_corner() {
        let img = step_corner(32, 32, 16, 16);
        let p = DetectorParams::default();
        for hm in [harris(&img, &p).unwrap(), shi_tomasi(&img, &p).unwrap()] {
            let (x, y) = brute_argmax(&hm);
            let d = Point2::new(x as f64, y as f64).dist(&Point2::new(15.5, 15.5));
            assert!(d <= 1.0, "argmax at ({x},{y})");
        }
    }

    #[test]
    fn harris_edge_response_is_weak() {
        let p = DetectorParams::default();
        let corner = harris(&step_corner(32, 32, 16, 16), &p).unwrap().max();
        let edge = harris(&step_edge(32, 32, 16), &p).unwrap().max();
        assert!(edge <= 0.1 * corner, "edge {edge} corner {corner}");
    }

    #[test]
    fn shi_is_non_negative() {
        let mut rng = seeded(4);
        let data = (0..400).map(|_| rng.random::<f32>()).collect();
        let img = ImageGray::from_vec(20, 20, data).unwrap();
        assert!(shi_tomasi(&img, &DetectorParams::default()).unwrap().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn responses_are_translation_covariant() {
        let mut rng = seeded(8);
        let (w, h, s) = (40usize, 36usize, 3usize);
        let data: Vec<f32> = (0..w * h).map(|_| (rng.random_range(0..256) as f32) / 255.0).collect();
        let img = ImageGray::from_vec(w, h, data).unwrap();
        let mut shifted = ImageGray::new(w, h);
        for y in 0..h {
            for x in 0..w {
                shifted.set(x, y, img.get_clamped(x as isize - s as isize, y as isize - s as isize));
            }
        }
        let p = DetectorParams::default();
        for kind in [ClassicalKind::Harris, ClassicalKind::ShiTomasi] {
            let a = kind.heatmap(&img, &p).unwrap();
            let b = kind.heatmap(&shifted, &p).unwrap();
            // Interior: away from the replicated border by gradient (1) + window (3) + shift.
            let m = 4 + s;
            for y in m..h - 4 {
                for x in m..w - 4 {
                    assert_eq!(b.get(x, y), a.get(x - s, y - s));
                }
            }
        }
    }

    #[test]
    fn fast_single_bright_pixel() {
        let mut img = ImageGray::filled(15, 15, 0.0);
        img.set(7, 7, 1.0);
        let pts = fast(&img, &DetectorParams::default()).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts.points[0].x, pts.points[0].y), (7.0, 7.0));
    }

    /// Direct segment test: some start index with `arc` consecutive pixels all above/below.
    fn oracle_fires(img: &ImageGray, x: usize, y: usize, t: f32, arc: usize) -> bool {
        let c = img.get(x, y);
        let vals: Vec<f32> = FAST_CIRCLE
            .iter()
            .map(|(dx, dy)| img.get((x as isize + dx) as usize, (y as isize + dy) as usize))
            .collect();
        (0..16).any(|s| (0..arc).all(|k| vals[(s + k) % 16] > c + t))
            || (0..16).any(|s| (0..arc).all(|k| vals[(s + k) % 16] < c - t))
    }

    #[test]
    fn fast_step_corner_single_detection() {
        let img = step_corner(32, 32, 16, 16);
        let p = DetectorParams::default();
        for y in 3..29 {
            for x in 3..29 {
                assert_eq!(fast_score(&img, x, y, &p).is_some(), oracle_fires(&img, x, y, 0.08, 9));
            }
        }
        let pts = fast(&img, &p).unwrap();
        assert_eq!(pts.len(), 1, "{pts:?}");
        assert!(pts.points[0].pos().dist(&Point2::new(15.5, 15.5)) <= 2.0);
    }

    #[test]
    fn fast_is_negation_symmetric() {
        let mut rng = seeded(12);
        let mut img = ImageGray::filled(40, 40, 0.5);
        for _ in 0..6 {
            let (x0, y0) = (rng.random_range(0..30), rng.random_range(0..30));
            let v = rng.random_range(0..256) as f32 / 256.0;
            for y in y0..(y0 + 9).min(40) {
                for x in x0..(x0 + 7).min(40) {
                    img.set(x, y, v);
                }
            }
        }
        let p = DetectorParams::default();
        let a = fast(&img, &p).unwrap();
        let b = fast(&img.negated(), &p).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    fn oracle_nms(points: &[Keypoint], radius: f64) -> Vec<Keypoint> {
        let mut sorted = points.to_vec();
        sorted.sort_by(detection_order);
        let mut kept: Vec<Keypoint> = Vec::new();
        for p in sorted {
            if kept.iter().all(|q| q.pos().dist(&p.pos()) > radius) {
                kept.push(p);
            }
        }
        kept
    }

    #[test]
    fn nms_examples() {
        let pts = PointSet::from_points(vec![
            Keypoint::new(1.0, 1.0, 0.2),
            Keypoint::new(5.0, 1.0, 0.9),
            Keypoint::new(9.0, 9.0, 0.5),
        ]);
        let out = nms(&pts, 0.0);
        assert_eq!(out.points.iter().map(|k| k.confidence).collect::<Vec<_>>(), vec![0.9, 0.5, 0.2]);
        let two = PointSet::from_points(vec![Keypoint::new(0.0, 0.0, 0.4), Keypoint::new(3.0, 0.0, 0.6)]);
        assert_eq!(nms(&two, 4.0).points, vec![Keypoint::new(3.0, 0.0, 0.6)]);
    }

    #[test]
    fn nms_matches_oracle_and_is_order_independent() {
        let mut rng = seeded(21);
        for _ in 0..20 {
            let mut pts: Vec<Keypoint> = (0..100)
                .map(|_| Keypoint::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), rng.random_range(0..10) as f64 / 10.0))
                .collect();
            let out = nms(&PointSet::from_points(pts.clone()), 8.0);
            assert_eq!(out.points, oracle_nms(&pts, 8.0));
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    assert!(out.points[i].pos().dist(&out.points[j].pos()) > 8.0);
                }
            }
            pts.reverse();
            assert_eq!(nms(&PointSet::from_points(pts), 8.0), out);
        }
    }

    #[test]
    fn heatmap_to_points_examples() {
        let hm = HeatMap::new(10, 10);
        assert!(heatmap_to_points(&hm, 0.1, 2.0, 0).is_empty());
        let mut hm = HeatMap::new(10, 10);
        hm.set(4, 6, 0.7);
        assert_eq!(heatmap_to_points(&hm, 0.1, 2.0, 0).points, vec![Keypoint::new(4.0, 6.0, 0.7f32 as f64)]);

        let mut rng = seeded(5);
        let data: Vec<f32> = (0..24 * 20).map(|_| rng.random::<f32>()).collect();
        let hm = HeatMap::from_vec(24, 20, data).unwrap();
        let mut cand = Vec::new();
        for y in 0..20 {
            for x in 0..24 {
                if hm.get(x, y) >= 0.3 {
                    cand.push(Keypoint::new(x as f64, y as f64, hm.get(x, y) as f64));
                }
            }
        }
        let mut expect = oracle_nms(&cand, 2.5);
        expect.truncate(15);
        assert_eq!(heatmap_to_points(&hm, 0.3, 2.5, 15).points, expect);
    }
}
