//! Synthetic Shapes: parametric scenes with exact ground-truth interest points.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{fully_covered, in_bounds, sample_homography, warp_image, Homography, HomographyRanges, Point2};
use crate::imaging::{write_pgm, ImageGray, NoiseBattery};
use crate::points::{Keypoint, PointSet};
use crate::rng::{child, SeededRng};

const SS: usize = 4;
/// Ground-truth points keep this distance from the image border.
pub const GT_MARGIN: f64 = 3.0;
pub const MIN_SPACING: f64 = 4.0;
const MIN_ANGLE_DEG: f64 = 15.0;
const MAX_ANGLE_DEG: f64 = 165.0;
const MIN_CONTRAST: f32 = 0.3;
const MAX_ATTEMPTS: usize = 10_000;
pub const SQUARE_CANVAS: usize = 96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeCategory {
    Quadrilateral,
    Triangle,
    LineSegments,
    Star,
    Checkerboard,
    Cube,
    Stripes,
    PolygonSoup,
    Ellipses,
    GaussianNoise,
}

impl ShapeCategory {
    pub const ALL: [ShapeCategory; 10] = [
        ShapeCategory::Quadrilateral,
        ShapeCategory::Triangle,
        ShapeCategory::LineSegments,
        ShapeCategory::Star,
        ShapeCategory::Checkerboard,
        ShapeCategory::Cube,
        ShapeCategory::Stripes,
        ShapeCategory::PolygonSoup,
        ShapeCategory::Ellipses,
        ShapeCategory::GaussianNoise,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeCategory::Quadrilateral => "quadrilateral",
            ShapeCategory::Triangle => "triangle",
            ShapeCategory::LineSegments => "line_segments",
            ShapeCategory::Star => "star",
            ShapeCategory::Checkerboard => "checkerboard",
            ShapeCategory::Cube => "cube",
            ShapeCategory::Stripes => "stripes",
            ShapeCategory::PolygonSoup => "polygon_soup",
            ShapeCategory::Ellipses => "ellipses",
            ShapeCategory::GaussianNoise => "gaussian_noise",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }

    pub fn is_negative(&self) -> bool {
        matches!(self, ShapeCategory::Ellipses | ShapeCategory::GaussianNoise)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSample {
    pub image: ImageGray,
    pub gt_points: PointSet,
    pub category: ShapeCategory,
    /// Index into `gt_points` of a blob center, if one was emitted.
    pub blob_center: Option<usize>,
}

/// Supersampled drawing surface; pixel centers sit at integer coordinates.
struct Canvas {
    width: usize,
    height: usize,
    buf: Vec<f32>,
}

impl Canvas {
    fn new(width: usize, height: usize, background: impl Fn(f64, f64) -> f32) -> Self {
        let (sw, sh) = (width * SS, height * SS);
        let mut buf = vec![0.0; sw * sh];
        for sy in 0..sh {
            for sx in 0..sw {
                let (x, y) = sub_to_px(sx, sy);
                buf[sy * sw + sx] = background(x, y);
            }
        }
        Self { width, height, buf }
    }

    /// Subpixel index range whose centers may fall in `[lo, hi]` (pixel coords).
    fn sub_range(lo: f64, hi: f64, n: usize) -> (usize, usize) {
        let a = ((lo + 0.5) * SS as f64 - 0.5).floor().max(0.0) as usize;
        let b = ((hi + 0.5) * SS as f64 - 0.5).ceil().max(0.0) as usize;
        (a.min(n), (b + 1).min(n))
    }

    fn fill_where(&mut self, bbox: (f64, f64, f64, f64), v: f32, inside: impl Fn(f64, f64) -> bool) {
        let sw = self.width * SS;
        let (x0, x1) = Self::sub_range(bbox.0, bbox.2, sw);
        let (y0, y1) = Self::sub_range(bbox.1, bbox.3, self.height * SS);
        for sy in y0..y1 {
            for sx in x0..x1 {
                let (x, y) = sub_to_px(sx, sy);
                if inside(x, y) {
                    self.buf[sy * sw + sx] = v;
                }
            }
        }
    }

    fn fill_polygon(&mut self, poly: &[Point2], v: f32) {
        let bbox = bounding_box(poly);
        self.fill_where(bbox, v, |x, y| point_in_polygon(poly, x, y));
    }

    fn fill_ellipse(&mut self, c: Point2, rx: f64, ry: f64, angle: f64, v: f32) {
        let r = rx.max(ry);
        let (s, co) = angle.sin_cos();
        self.fill_where((c.x - r, c.y - r, c.x + r, c.y + r), v, |x, y| {
            let (dx, dy) = (x - c.x, y - c.y);
            let u = co * dx + s * dy;
            let w = -s * dx + co * dy;
            (u / rx).powi(2) + (w / ry).powi(2) <= 1.0
        });
    }

    fn fill_segment(&mut self, a: Point2, b: Point2, thickness: f64, v: f32) {
        self.fill_polygon(&segment_quad(a, b, thickness), v);
    }

    fn finish(self) -> ImageGray {
        let sw = self.width * SS;
        let norm = 1.0 / (SS * SS) as f32;
        let mut data = vec![0.0; self.width * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for dy in 0..SS {
                    let row = (y * SS + dy) * sw + x * SS;
                    acc += self.buf[row..row + SS].iter().sum::<f32>();
                }
                data[y * self.width + x] = acc * norm;
            }
        }
        ImageGray::from_vec(self.width, self.height, data).expect("sized buffer")
    }
}

#[inline]
fn sub_to_px(sx: usize, sy: usize) -> (f64, f64) {
    ((sx as f64 + 0.5) / SS as f64 - 0.5, (sy as f64 + 0.5) / SS as f64 - 0.5)
}

fn bounding_box(poly: &[Point2]) -> (f64, f64, f64, f64) {
    poly.iter().fold((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY), |b, p| {
        (b.0.min(p.x), b.1.min(p.y), b.2.max(p.x), b.3.max(p.y))
    })
}

/// Even-odd rule.
pub fn point_in_polygon(poly: &[Point2], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_quad(a: Point2, b: Point2, thickness: f64) -> [Point2; 4] {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = (dx * dx + dy * dy).sqrt().max(1e-12);
    let (nx, ny) = (-dy / len * thickness / 2.0, dx / len * thickness / 2.0);
    [
        Point2::new(a.x + nx, a.y + ny),
        Point2::new(b.x + nx, b.y + ny),
        Point2::new(b.x - nx, b.y - ny),
        Point2::new(a.x - nx, a.y - ny),
    ]
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Proper intersection point of segments `ab` and `cd`, if any.
fn segment_intersection(a: Point2, b: Point2, c: Point2, d: Point2) -> Option<Point2> {
    let r = (b.x - a.x, b.y - a.y);
    let s = (d.x - c.x, d.y - c.y);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = ((c.x - a.x) * s.1 - (c.y - a.y) * s.0) / denom;
    let u = ((c.x - a.x) * r.1 - (c.y - a.y) * r.0) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(Point2::new(a.x + t * r.0, a.y + t * r.1))
    } else {
        None
    }
}

fn point_segment_dist(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l2 = dx * dx + dy * dy;
    let t = if l2 == 0.0 { 0.0 } else { (((p.x - a.x) * dx + (p.y - a.y) * dy) / l2).clamp(0.0, 1.0) };
    p.dist(&Point2::new(a.x + t * dx, a.y + t * dy))
}

fn segment_dist(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    if segment_intersection(a, b, c, d).is_some() {
        return 0.0;
    }
    point_segment_dist(a, c, d)
        .min(point_segment_dist(b, c, d))
        .min(point_segment_dist(c, a, b))
        .min(point_segment_dist(d, a, b))
}

fn polygon_boundary_dist(poly: &[Point2], p: Point2) -> f64 {
    (0..poly.len()).map(|i| point_segment_dist(p, poly[i], poly[(i + 1) % poly.len()])).fold(f64::INFINITY, f64::min)
}

/// Angle at `v` between the rays to `a` and `b`, in degrees.
fn angle_deg(a: Point2, v: Point2, b: Point2) -> f64 {
    let (ux, uy) = (a.x - v.x, a.y - v.y);
    let (wx, wy) = (b.x - v.x, b.y - v.y);
    let c = (ux * wx + uy * wy) / ((ux * ux + uy * uy).sqrt() * (wx * wx + wy * wy).sqrt());
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

fn sharp_enough(deg: f64) -> bool {
    deg > MIN_ANGLE_DEG && deg < MAX_ANGLE_DEG
}

fn polygon_angles_ok(poly: &[Point2]) -> bool {
    let n = poly.len();
    (0..n).all(|i| sharp_enough(angle_deg(poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n])))
}

fn is_convex(poly: &[Point2]) -> bool {
    let n = poly.len();
    let signs: Vec<f64> = (0..n).map(|i| cross(poly[i], poly[(i + 1) % n], poly[(i + 2) % n])).collect();
    signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0)
}

/// Margin and spacing checks on a candidate ground-truth set.
fn gt_valid(pts: &[Point2], width: usize, height: usize) -> bool {
    let inside = pts.iter().all(|p| {
        p.x >= GT_MARGIN && p.y >= GT_MARGIN && p.x <= width as f64 - 1.0 - GT_MARGIN && p.y <= height as f64 - 1.0 - GT_MARGIN
    });
    inside && (0..pts.len()).all(|i| (i + 1..pts.len()).all(|j| pts[i].dist(&pts[j]) >= MIN_SPACING))
}

struct Scene {
    width: usize,
    height: usize,
    background: f32,
    gradient: f32,
    direction: f64,
}

impl Scene {
    fn random(width: usize, height: usize, rng: &mut SeededRng) -> Self {
        Scene {
            width,
            height,
            background: rng.random_range(0.0..1.0),
            gradient: rng.random_range(-0.2..0.2),
            direction: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn canvas(&self) -> Canvas {
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        let (s, c) = self.direction.sin_cos();
        let scale = self.width.max(self.height) as f64;
        let (b, g) = (self.background, self.gradient);
        Canvas::new(self.width, self.height, move |x, y| {
            (b + g * (((x - cx) * c + (y - cy) * s) / scale) as f32).clamp(0.0, 1.0)
        })
    }

    /// An intensity at least `MIN_CONTRAST` from the background and `min_gap` from `others`.
    fn intensity(&self, others: &[f32], min_gap: f32, rng: &mut SeededRng) -> f32 {
        for _ in 0..MAX_ATTEMPTS {
            let v: f32 = rng.random_range(0.0..1.0);
            if (v - self.background).abs() >= MIN_CONTRAST && others.iter().all(|o| (v - o).abs() >= min_gap) {
                return v;
            }
        }
        if self.background < 0.5 {
            1.0
        } else {
            0.0
        }
    }

    fn min_dim(&self) -> f64 {
        self.width.min(self.height) as f64
    }

    fn random_center(&self, rng: &mut SeededRng) -> Point2 {
        let (w, h) = (self.width as f64, self.height as f64);
        Point2::new(rng.random_range(0.25 * w..0.75 * w), rng.random_range(0.25 * h..0.75 * h))
    }
}

/// Convex polygon with `n` vertices spread around a random center.
fn random_convex_polygon(scene: &Scene, n: usize, rng: &mut SeededRng, scale: (f64, f64)) -> Vec<Point2> {
    let c = scene.random_center(rng);
    let r = rng.random_range(scale.0..scale.1) * scene.min_dim();
    let base = rng.random_range(0.0..2.0 * PI);
    let step = 2.0 * PI / n as f64;
    let jitter = step * 0.3;
    (0..n)
        .map(|k| {
            let a = base + k as f64 * step + rng.random_range(-jitter..jitter);
            let rr = r * rng.random_range(0.6..1.0);
            Point2::new(c.x + rr * a.cos(), c.y + rr * a.sin())
        })
        .collect()
}

fn gt_set(pts: &[Point2]) -> PointSet {
    PointSet::from_positions(pts)
}

type Drawn = (Canvas, Vec<Point2>);

fn draw_polygon_shape(scene: &Scene, n: usize, rng: &mut SeededRng) -> Option<Drawn> {
    let poly = random_convex_polygon(scene, n, rng, (0.2, 0.45));
    if !is_convex(&poly) || !polygon_angles_ok(&poly) || !gt_valid(&poly, scene.width, scene.height) {
        return None;
    }
    let mut canvas = scene.canvas();
    let v = scene.intensity(&[], 0.0, rng);
    canvas.fill_polygon(&poly, v);
    Some((canvas, poly))
}

fn draw_star(scene: &Scene, rng: &mut SeededRng) -> Option<Drawn> {
    let n = rng.random_range(3..=5usize);
    let c = scene.random_center(rng);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    for i in 0..n {
        let gap = (angles[(i + 1) % n] - angles[i]).rem_euclid(2.0 * PI);
        if gap.to_degrees() < 30.0 {
            return None;
        }
    }
    let thickness = rng.random_range(1.0..2.0);
    let mut gt = vec![c];
    for a in &angles {
        let len = rng.random_range(0.25..0.45) * scene.min_dim();
        gt.push(Point2::new(c.x + len * a.cos(), c.y + len * a.sin()));
    }
    if !gt_valid(&gt, scene.width, scene.height) {
        return None;
    }
    let mut canvas = scene.canvas();
    let v = scene.intensity(&[], 0.0, rng);
    for end in &gt[1..] {
        canvas.fill_segment(c, *end, thickness, v);
    }
    Some((canvas, gt))
}

fn draw_line_segments(scene: &Scene, rng: &mut SeededRng) -> Option<Drawn> {
    let n = rng.random_range(1..=4usize);
    let (w, h) = (scene.width as f64, scene.height as f64);
    let mut segs: Vec<(Point2, Point2)> = Vec::new();
    for _ in 0..n {
        let a = Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let len = rng.random_range(0.2..0.6) * scene.min_dim();
        let t = rng.random_range(0.0..2.0 * PI);
        let b = Point2::new(a.x + len * t.cos(), a.y + len * t.sin());
        if segs.iter().any(|(c, d)| segment_dist(a, b, *c, *d) < MIN_SPACING) {
            return None;
        }
        segs.push((a, b));
    }
    let gt: Vec<Point2> = segs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    if !gt_valid(&gt, scene.width, scene.height) {
        return None;
    }
    let mut canvas = scene.canvas();
    for (a, b) in &segs {
        let v = scene.intensity(&[], 0.0, rng);
        let thickness = rng.random_range(1.0..2.0);
        canvas.fill_segment(*a, *b, thickness, v);
    }
    Some((canvas, gt))
}

/// Board of `rows x cols` cells warped onto a random convex quadrilateral.
fn draw_checkerboard(scene: &Scene, rng: &mut SeededRng) -> Option<(Canvas, Vec<Point2>, usize, usize)> {
    let rows = rng.random_range(2..=5usize);
    let cols = rng.random_range(2..=5usize);
    let quad = random_convex_polygon(scene, 4, rng, (0.3, 0.5));
    if !is_convex(&quad) || !polygon_angles_ok(&quad) {
        return None;
    }
    let unit = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)];
    let dst = [quad[0], quad[1], quad[2], quad[3]];
    let h = Homography::from_four_points(&unit, &dst).ok()?;
    let lattice = |i: usize, j: usize| h.apply_point(Point2::new(j as f64 / cols as f64, i as f64 / rows as f64));
    let mut gt = Vec::new();
    for i in 1..rows {
        for j in 1..cols {
            gt.push(lattice(i, j).ok()?);
        }
    }
    gt.extend_from_slice(&quad);
    if !gt_valid(&gt, scene.width, scene.height) {
        return None;
    }
    let all_lattice_ok = (0..=rows).all(|i| (0..=cols).all(|j| lattice(i, j).is_ok()));
    if !all_lattice_ok {
        return None;
    }
    let mut canvas = scene.canvas();
    let a = scene.intensity(&[], 0.0, rng);
    let b = scene.intensity(&[a], MIN_CONTRAST, rng);
    for i in 0..rows {
        for j in 0..cols {
            let cell = [lattice(i, j).ok()?, lattice(i, j + 1).ok()?, lattice(i + 1, j + 1).ok()?, lattice(i + 1, j).ok()?];
            canvas.fill_polygon(&cell, if (i + j) % 2 == 0 { a } else { b });
        }
    }
    Some((canvas, gt, rows, cols))
}

/// Wireframe-free cube: three parallelogram faces sharing the near vertex.
fn draw_cube(scene: &Scene, rng: &mut SeededRng) -> Option<Drawn> {
    let v0 = scene.random_center(rng);
    let g1 = rng.random_range(100.0f64..140.0).to_radians();
    let g2 = rng.random_range(100.0f64..140.0).to_radians();
    let g3 = 2.0 * PI - g1 - g2;
    if !(90.0..=170.0).contains(&g3.to_degrees()) {
        return None;
    }
    let t0 = rng.random_range(0.0..2.0 * PI);
    let dirs = [t0, t0 + g1, t0 + g1 + g2];
    let vecs: Vec<Point2> = dirs
        .iter()
        .map(|t| {
            let len = rng.random_range(0.15..0.3) * scene.min_dim();
            Point2::new(len * t.cos(), len * t.sin())
        })
        .collect();
    let add = |p: Point2, q: Point2| Point2::new(p.x + q.x, p.y + q.y);
    let (a, b, c) = (vecs[0], vecs[1], vecs[2]);
    let faces = [
        [v0, add(v0, a), add(add(v0, a), b), add(v0, b)],
        [v0, add(v0, b), add(add(v0, b), c), add(v0, c)],
        [v0, add(v0, c), add(add(v0, c), a), add(v0, a)],
    ];
    let gt = vec![
        v0,
        add(v0, a),
        add(add(v0, a), b),
        add(v0, b),
        add(add(v0, b), c),
        add(v0, c),
        add(add(v0, c), a),
    ];
    let outline = [gt[1], gt[2], gt[3], gt[4], gt[5], gt[6]];
    if !gt_valid(&gt, scene.width, scene.height) || !outline_angles_ok(&outline) {
        return None;
    }
    let mut canvas = scene.canvas();
    let mut shades: Vec<f32> = Vec::new();
    for face in &faces {
        let v = scene.intensity(&shades, 0.2, rng);
        shades.push(v);
        canvas.fill_polygon(face, v);
    }
    Some((canvas, gt))
}

fn outline_angles_ok(outline: &[Point2]) -> bool {
    polygon_angles_ok(outline)
}

fn draw_stripes(scene: &Scene, rng: &mut SeededRng) -> Option<Drawn> {
    let k = rng.random_range(2..=4usize);
    let c = scene.random_center(rng);
    let phi = rng.random_range(0.0..PI);
    let (s, co) = phi.sin_cos();
    let length = rng.random_range(0.3..0.6) * scene.min_dim();
    let mut offset = 0.0;
    let mut bars = Vec::new();
    for _ in 0..k {
        let w = rng.random_range(MIN_SPACING..MIN_SPACING + 0.08 * scene.min_dim());
        bars.push((offset, offset + w));
        offset += w + rng.random_range(MIN_SPACING..MIN_SPACING + 0.08 * scene.min_dim());
    }
    let total = bars.last().map(|b| b.1).unwrap_or(0.0);
    let to_img = |u: f64, v: f64| {
        let (u, v) = (u - length / 2.0, v - total / 2.0);
        Point2::new(c.x + u * co - v * s, c.y + u * s + v * co)
    };
    let rects: Vec<[Point2; 4]> =
        bars.iter().map(|&(v0, v1)| [to_img(0.0, v0), to_img(length, v0), to_img(length, v1), to_img(0.0, v1)]).collect();
    let gt: Vec<Point2> = rects.iter().flatten().copied().collect();
    if !gt_valid(&gt, scene.width, scene.height) {
        return None;
    }
    let mut canvas = scene.canvas();
    let v = scene.intensity(&[], 0.0, rng);
    for r in &rects {
        canvas.fill_polygon(r, v);
    }
    Some((canvas, gt))
}

/// Overlapping convex polygons painted in order; gt = visible vertices and T-junctions.
fn draw_polygon_soup(scene: &Scene, rng: &mut SeededRng) -> Option<Drawn> {
    let n = rng.random_range(2..=3usize);
    let polys: Vec<Vec<Point2>> = (0..n)
        .map(|_| {
            let sides = rng.random_range(3..=5usize);
            random_convex_polygon(scene, sides, rng, (0.15, 0.35))
        })
        .collect();
    if polys.iter().any(|p| !is_convex(p) || !polygon_angles_ok(p)) {
        return None;
    }
    // Clearly inside or clearly outside every polygon in `range`, or reject the scene.
    let covered = |p: Point2, range: &mut dyn Iterator<Item = usize>| -> Option<bool> {
        let mut hit = false;
        for k in range {
            if polygon_boundary_dist(&polys[k], p) < MIN_SPACING / 2.0 {
                return None;
            }
            hit |= point_in_polygon(&polys[k], p.x, p.y);
        }
        Some(hit)
    };
    let mut gt = Vec::new();
    for (i, poly) in polys.iter().enumerate() {
        for v in poly {
            if !covered(*v, &mut (i + 1..n))? {
                gt.push(*v);
            }
        }
    }
    for j in 0..n {
        for i in 0..j {
            let (pi, pj) = (&polys[i], &polys[j]);
            for a in 0..pi.len() {
                let (e0, e1) = (pi[a], pi[(a + 1) % pi.len()]);
                for b in 0..pj.len() {
                    let (f0, f1) = (pj[b], pj[(b + 1) % pj.len()]);
                    let Some(x) = segment_intersection(e0, e1, f0, f1) else { continue };
                    if !sharp_enough(angle_deg(e1, x, f1)) {
                        return None;
                    }
                    let hidden = covered(x, &mut (i + 1..j).chain(j + 1..n))?;
                    if !hidden {
                        gt.push(x);
                    }
                }
            }
        }
    }
    if !gt_valid(&gt, scene.width, scene.height) {
        return None;
    }
    let mut canvas = scene.canvas();
    let mut shades: Vec<f32> = Vec::new();
    for p in &polys {
        let v = scene.intensity(&shades, 0.2, rng);
        shades.push(v);
        canvas.fill_polygon(p, v);
    }
    Some((canvas, gt))
}

fn draw_ellipses(scene: &Scene, rng: &mut SeededRng) -> Canvas {
    let mut canvas = scene.canvas();
    let n = rng.random_range(1..=5usize);
    let m = scene.min_dim();
    for _ in 0..n {
        let c = Point2::new(rng.random_range(0.0..scene.width as f64), rng.random_range(0.0..scene.height as f64));
        let rx = rng.random_range(3.0..(0.2 * m).max(3.5));
        let ry = rng.random_range(3.0..(0.2 * m).max(3.5));
        let v = scene.intensity(&[], 0.0, rng);
        canvas.fill_ellipse(c, rx, ry, rng.random_range(0.0..PI), v);
    }
    canvas
}

fn gaussian_noise_image(width: usize, height: usize, rng: &mut SeededRng) -> ImageGray {
    let mean: f32 = rng.random_range(0.3..0.7);
    let sigma: f32 = rng.random_range(0.1..0.3);
    let data = (0..width * height).map(|_| mean + sigma * rng.sample::<f32, _>(StandardNormal)).collect();
    ImageGray::from_vec(width, height, data).expect("sized buffer")
}

/// Renders one scene of `cat`; shapes are redrawn until the gt set is valid.
pub fn render_sample(cat: ShapeCategory, height: usize, width: usize, rng: &mut SeededRng) -> Result<ShapeSample> {
    if height < 32 || width < 32 {
        return Err(Error::ImageTooSmall { width, height, min: 32 });
    }
    let done = |image: ImageGray, gt: &[Point2]| ShapeSample { image, gt_points: gt_set(gt), category: cat, blob_center: None };
    for _ in 0..MAX_ATTEMPTS {
        let scene = Scene::random(width, height, rng);
        let drawn = match cat {
            ShapeCategory::Quadrilateral => draw_polygon_shape(&scene, 4, rng),
            ShapeCategory::Triangle => draw_polygon_shape(&scene, 3, rng),
            ShapeCategory::LineSegments => draw_line_segments(&scene, rng),
            ShapeCategory::Star => draw_star(&scene, rng),
            ShapeCategory::Checkerboard => draw_checkerboard(&scene, rng).map(|(c, gt, _, _)| (c, gt)),
            ShapeCategory::Cube => draw_cube(&scene, rng),
            ShapeCategory::Stripes => draw_stripes(&scene, rng),
            ShapeCategory::PolygonSoup => draw_polygon_soup(&scene, rng),
            ShapeCategory::Ellipses => Some((draw_ellipses(&scene, rng), Vec::new())),
            ShapeCategory::GaussianNoise => return Ok(done(gaussian_noise_image(width, height, rng), &[])),
        };
        if let Some((canvas, gt)) = drawn {
            return Ok(done(canvas.finish(), &gt));
        }
    }
    Err(Error::DegenerateConfiguration)
}

/// Warps the image and maps the gt; points outside the frame or on invalid pixels are dropped.
pub fn homographic_augment(s: &ShapeSample, h: &Homography) -> Result<ShapeSample> {
    let (image, mask) = warp_image(&s.image, h)?;
    let (w, hgt) = (image.width(), image.height());
    let mut gt = PointSet::new();
    let mut blob_center = None;
    for (i, kp) in s.gt_points.iter().enumerate() {
        let p = h.apply_point(kp.pos())?;
        if !in_bounds(&p, w, hgt) || !mask.get(p.x.round() as usize, p.y.round() as usize) {
            continue;
        }
        if s.blob_center == Some(i) {
            blob_center = Some(gt.len());
        }
        gt.push(Keypoint::new(p.x, p.y, kp.confidence));
    }
    Ok(ShapeSample { image, gt_points: gt, category: s.category, blob_center })
}

/// Black `width x width` square centered on pixel (47, 47) of a white 96x96 canvas.
/// gt = the four corner pixel centers, then the blob center.
pub fn render_square(width: usize) -> Result<ShapeSample> {
    if !(3..=91).contains(&width) || width % 2 == 0 {
        return Err(Error::WidthOutOfRange(width as u32));
    }
    let n = SQUARE_CANVAS;
    let c = (n - 1) / 2;
    let half = (width - 1) / 2;
    let mut image = ImageGray::filled(n, n, 1.0);
    for y in c - half..=c + half {
        for x in c - half..=c + half {
            image.set(x, y, 0.0);
        }
    }
    let (lo, hi, cf) = ((c - half) as f64, (c + half) as f64, c as f64);
    let gt = PointSet::from_positions(&[
        Point2::new(lo, lo),
        Point2::new(hi, lo),
        Point2::new(hi, hi),
        Point2::new(lo, hi),
        Point2::new(cf, cf),
    ]);
    Ok(ShapeSample { image, gt_points: gt, category: ShapeCategory::Quadrilateral, blob_center: Some(4) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub width: usize,
    pub height: usize,
    /// Relative category weights; need not sum to 1.
    pub mix: Vec<(ShapeCategory, f64)>,
    pub noise: Option<NoiseBattery>,
    /// Random homographic warp applied to each sample.
    pub augment: Option<HomographyRanges>,
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self { width, height, mix: uniform_mix(), noise: None, augment: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::ImageTooSmall { width: self.width, height: self.height, min: 32 });
        }
        if self.mix.is_empty() || self.mix.iter().any(|(_, w)| !(*w >= 0.0)) || self.mix.iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::InvalidConfig("category mix needs non-negative weights with a positive total".into()));
        }
        if let Some(r) = &self.augment {
            r.validate()?;
        }
        Ok(())
    }
}

pub fn uniform_mix() -> Vec<(ShapeCategory, f64)> {
    ShapeCategory::ALL.iter().map(|c| (*c, 1.0)).collect()
}

/// Parses `name:weight,name:weight,...` (or `uniform`).
pub fn parse_mix(s: &str) -> Result<Vec<(ShapeCategory, f64)>> {
    if s.trim() == "uniform" {
        return Ok(uniform_mix());
    }
    s.split(',')
        .map(|item| {
            let (name, weight) = item.split_once(':').unwrap_or((item, "1"));
            let cat = ShapeCategory::from_name(name.trim())
                .ok_or_else(|| Error::InvalidConfig(format!("unknown shape category `{}`", name.trim())))?;
            let w: f64 = weight.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad weight `{weight}`")))?;
            Ok((cat, w))
        })
        .collect()
}

const AUGMENT_ATTEMPTS: usize = 20;

/// Unbounded deterministic sample sequence; sample `i` uses seed `derive_seed(seed, i)`.
pub struct SynthStream {
    cfg: StreamConfig,
    index: u64,
}

impl SynthStream {
    pub fn new(cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, index: 0 })
    }

    pub fn sample_at(&self, index: u64) -> ShapeSample {
        let mut rng = child(self.cfg.seed, index);
        let total: f64 = self.cfg.mix.iter().map(|(_, w)| w).sum();
        let mut pick = rng.random_range(0.0..total);
        let mut cat = self.cfg.mix.last().expect("validated mix").0;
        for (c, w) in &self.cfg.mix {
            if pick < *w {
                cat = *c;
                break;
            }
            pick -= w;
        }
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut sample = render_sample(cat, h, w, &mut rng).expect("validated size");
        if let Some(ranges) = &self.cfg.augment {
            for _ in 0..AUGMENT_ATTEMPTS {
                let Ok(hm) = sample_homography(ranges, w, h, &mut rng) else { continue };
                if let Ok(warped) = homographic_augment(&sample, &hm) {
                    if fully_covered(&hm, w, h) {
                        sample = warped;
                        break;
                    }
                }
            }
        }
        if let Some(battery) = &self.cfg.noise {
            sample.image = battery.apply(&sample.image, &mut rng);
        }
        sample
    }
}

impl Iterator for SynthStream {
    type Item = ShapeSample;

    fn next(&mut self) -> Option<ShapeSample> {
        let s = self.sample_at(self.index);
        self.index += 1;
        Some(s)
    }
}

pub fn stream(cfg: StreamConfig) -> Result<SynthStream> {
    SynthStream::new(cfg)
}

/// Writes `NNNNNN.pgm` + `NNNNNN.pts` per sample and a `manifest.txt` of categories.
pub fn dump_samples(dir: &Path, samples: &[ShapeSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        write_pgm(&dir.join(format!("{i:06}.pgm")), &s.image)?;
        s.gt_points.write(&dir.join(format!("{i:06}.pts")))?;
        let _ = writeln!(manifest, "{i:06} {}", s.category.name());
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Textured multi-shape scene used as the unlabeled target domain.
pub fn render_composite(width: usize, height: usize, rng: &mut SeededRng) -> ImageGray {
    let (w, h) = (width as f64, height as f64);
    let waves: Vec<(f64, f64, f64, f32)> = (0..4)
        .map(|_| {
            let f = rng.random_range(0.5..3.0) * 2.0 * PI / w.max(h);
            let t = rng.random_range(0.0..PI);
            (f * t.cos(), f * t.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.03..0.1))
        })
        .collect();
    let base: f32 = rng.random_range(0.3..0.7);
    let mut canvas = Canvas::new(width, height, |x, y| {
        let t: f32 = waves.iter().map(|(fx, fy, ph, a)| a * ((fx * x + fy * y + ph).sin() as f32)).sum();
        (base + t).clamp(0.0, 1.0)
    });
    let scale = w.min(h);
    let n = rng.random_range(8..=14usize);
    for _ in 0..n {
        let v: f32 = rng.random_range(0.0..1.0);
        let c = Point2::new(rng.random_range(-0.05 * w..1.05 * w), rng.random_range(-0.05 * h..1.05 * h));
        match rng.random_range(0..5u32) {
            0 | 1 => {
                let sides = rng.random_range(3..=6usize);
                let r = rng.random_range(0.06..0.25) * scale;
                let base_a = rng.random_range(0.0..2.0 * PI);
                let poly: Vec<Point2> = (0..sides)
                    .map(|k| {
                        let a = base_a + 2.0 * PI * k as f64 / sides as f64 + rng.random_range(-0.3..0.3);
                        let rr = r * rng.random_range(0.6..1.0);
                        Point2::new(c.x + rr * a.cos(), c.y + rr * a.sin())
                    })
                    .collect();
                canvas.fill_polygon(&poly, v);
            }
            2 => {
                let rx = rng.random_range(0.02..0.12) * scale;
                let ry = rng.random_range(0.02..0.12) * scale;
                canvas.fill_ellipse(c, rx, ry, rng.random_range(0.0..PI), v);
            }
            3 => {
                let len = rng.random_range(0.1..0.4) * scale;
                let t = rng.random_range(0.0..2.0 * PI);
                let end = Point2::new(c.x + len * t.cos(), c.y + len * t.sin());
                canvas.fill_segment(c, end, rng.random_range(1.0..3.0), v);
            }
            _ => {
                let cell = rng.random_range(0.03..0.07) * scale;
                let (rows, cols) = (rng.random_range(2..=4usize), rng.random_range(2..=4usize));
                let t = rng.random_range(0.0..PI / 2.0);
                let (s, co) = t.sin_cos();
                let v2: f32 = (v + rng.random_range(0.3f32..0.7)).rem_euclid(1.0);
                for i in 0..rows {
                    for j in 0..cols {
                        let corner = |di: usize, dj: usize| {
                            let (u, q) = ((j + dj) as f64 * cell, (i + di) as f64 * cell);
                            Point2::new(c.x + u * co - q * s, c.y + u * s + q * co)
                        };
                        let quad = [corner(0, 0), corner(0, 1), corner(1, 1), corner(1, 0)];
                        canvas.fill_polygon(&quad, if (i + j) % 2 == 0 { v } else { v2 });
                    }
                }
            }
        }
    }
    canvas.finish()
}
