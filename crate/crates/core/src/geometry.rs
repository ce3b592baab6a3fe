//! Homography algebra, random homography sampling and homographic warping of images.
//!
//! Pixel centers sit at integer coordinates, `x` to the right and `y` down. Sampled
//! transforms are composed about the image center `((W-1)/2, (H-1)/2)`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::imaging::{bilinear_sample, ImageGray, ValidMask};

const DET_EPS: f64 = 1e-12;
const MAX_SAMPLE_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// A 3x3 projective transform stored row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct Homography {
    pub m: [f64; 9],
}

impl fmt::Debug for Homography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.m;
        write!(
            f,
            "Homography[[{}, {}, {}], [{}, {}, {}], [{}, {}, {}]]",
            m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]
        )
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl Homography {
    pub const fn new(m: [f64; 9]) -> Self {
        Self { m }
    }

    pub const fn identity() -> Self {
        Self::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self::new([1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0])
    }

    pub const fn scaling(sx: f64, sy: f64) -> Self {
        Self::new([sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0])
    }

    /// Counter-clockwise rotation in the y-down frame (i.e. clockwise on screen) about the origin.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new([c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
    }

    /// Rotation by `theta` about `(cx, cy)`.
    pub fn rotation_about(theta: f64, cx: f64, cy: f64) -> Self {
        Self::translation(cx, cy)
            .compose(&Self::rotation(theta))
            .compose(&Self::translation(-cx, -cy))
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > DET_EPS
    }

    pub fn is_affine(&self) -> bool {
        self.m[6] == 0.0 && self.m[7] == 0.0 && self.m[8] == 1.0
    }

    /// Scales the matrix so the bottom-right entry is exactly 1.
    pub fn normalize(&self) -> Result<Homography> {
        let s = self.m[8];
        if s.abs() < DET_EPS {
            return Err(Error::DegenerateProjection);
        }
        let mut m = self.m.map(|v| v / s);
        m[8] = 1.0;
        Ok(Homography::new(m))
    }

    pub fn apply_point(&self, p: Point2) -> Result<Point2> {
        let m = &self.m;
        let w = m[6] * p.x + m[7] * p.y + m[8];
        if w.abs() < DET_EPS {
            return Err(Error::DegenerateProjection);
        }
        Ok(Point2::new(
            (m[0] * p.x + m[1] * p.y + m[2]) / w,
            (m[3] * p.x + m[4] * p.y + m[5]) / w,
        ))
    }

    pub fn apply(&self, pts: &[Point2]) -> Result<Vec<Point2>> {
        pts.iter().map(|&p| self.apply_point(p)).collect()
    }

    /// Matrix product `self * other`: `other` is applied first.
    pub fn compose(&self, other: &Homography) -> Homography {
        let a = &self.m;
        let b = &other.m;
        let mut m = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 3 + c] = a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
            }
        }
        Homography::new(m)
    }

    pub fn invert(&self) -> Result<Homography> {
        let det = self.det();
        if det.abs() < DET_EPS {
            return Err(Error::Singular);
        }
        let m = &self.m;
        let adj = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        Ok(Homography::new(adj.map(|v| v / det)))
    }

    /// Exact homography taking four source points to four destination points.
    pub fn from_four_points(src: &[Point2; 4], dst: &[Point2; 4]) -> Result<Homography> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut rhs = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let (x, y) = (src[i].x, src[i].y);
            let (u, v) = (dst[i].x, dst[i].y);
            let r = 2 * i;
            a[(r, 0)] = x;
            a[(r, 1)] = y;
            a[(r, 2)] = 1.0;
            a[(r, 6)] = -u * x;
            a[(r, 7)] = -u * y;
            rhs[r] = u;
            a[(r + 1, 3)] = x;
            a[(r + 1, 4)] = y;
            a[(r + 1, 5)] = 1.0;
            a[(r + 1, 6)] = -v * x;
            a[(r + 1, 7)] = -v * y;
            rhs[r + 1] = v;
        }
        let sol = a.lu().solve(&rhs).ok_or(Error::Singular)?;
        let h = Homography::new([sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0]);
        if !h.is_invertible() {
            return Err(Error::Singular);
        }
        Ok(h)
    }

    /// One line of an `.htxt` file: nine row-major floats separated by spaces.
    pub fn to_htxt_line(&self) -> String {
        self.m.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
    }

    pub fn from_htxt_line(line: &str) -> Result<Homography> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("homography entry `{t}`: {e}"))))
            .collect::<Result<_>>()?;
        let m: [f64; 9] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::Format(format!("expected 9 homography entries, got {}", v.len())))?;
        Ok(Homography::new(m))
    }
}

pub fn write_htxt(path: &Path, hs: &[Homography]) -> Result<()> {
    let mut s = String::new();
    for h in hs {
        s.push_str(&h.to_htxt_line());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_htxt(path: &Path) -> Result<Vec<Homography>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(Homography::from_htxt_line)
        .collect()
}

pub fn apply(h: &Homography, pts: &[Point2]) -> Result<Vec<Point2>> {
    h.apply(pts)
}

pub fn compose(a: &Homography, b: &Homography) -> Homography {
    a.compose(b)
}

pub fn invert(h: &Homography) -> Result<Homography> {
    h.invert()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangePreset {
    Adaptation,
    Training,
}

/// Per-component spreads for [`sample_homography`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomographyRanges {
    /// Fraction of the image kept by the root center crop.
    pub crop_ratio: f64,
    /// Translation spread as a fraction of the image width/height.
    pub translation_sigma: f64,
    /// Spread of the (mean 1) isotropic scale factor.
    pub scale_sigma: f64,
    /// Rotation spread in radians.
    pub rotation_sigma: f64,
    /// Spread of the symmetric corner displacement, as a fraction of the half extent.
    pub perspective_sigma: f64,
    /// Normal draws are rejected beyond `truncation * sigma`.
    pub truncation: f64,
    pub preset: RangePreset,
}

impl HomographyRanges {
    pub fn adaptation() -> Self {
        Self {
            crop_ratio: 0.8,
            translation_sigma: 0.1,
            scale_sigma: 0.15,
            rotation_sigma: PI / 8.0,
            perspective_sigma: 0.1,
            truncation: 2.0,
            preset: RangePreset::Adaptation,
        }
    }

    pub fn training() -> Self {
        Self {
            rotation_sigma: PI / 24.0,
            perspective_sigma: 0.05,
            preset: RangePreset::Training,
            ..Self::adaptation()
        }
    }

    pub fn for_preset(preset: RangePreset) -> Self {
        match preset {
            RangePreset::Adaptation => Self::adaptation(),
            RangePreset::Training => Self::training(),
        }
    }

    /// Zero spreads and no crop: sampling yields the identity.
    pub fn none() -> Self {
        Self {
            crop_ratio: 1.0,
            translation_sigma: 0.0,
            scale_sigma: 0.0,
            rotation_sigma: 0.0,
            perspective_sigma: 0.0,
            truncation: 2.0,
            preset: RangePreset::Adaptation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.translation_sigma,
            self.scale_sigma,
            self.rotation_sigma,
            self.perspective_sigma,
        ];
        if !(self.crop_ratio > 0.0 && self.crop_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!("crop_ratio {} not in (0,1]", self.crop_ratio)));
        }
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig("homography sigmas must be >= 0".into()));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::InvalidConfig("truncation must be > 0".into()));
        }
        Ok(())
    }
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64, truncation: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= truncation {
            return z * sigma;
        }
    }
}

/// Draws a homography for a `width x height` image as
/// perspective ∘ rotation ∘ scale ∘ translation ∘ center-crop, all about the image center.
pub fn sample_homography<R: Rng + ?Sized>(
    ranges: &HomographyRanges,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Homography> {
    ranges.validate()?;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let half_w = width as f64 / 2.0;
    let half_h = height as f64 / 2.0;
    let t = ranges.truncation;
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let tx = truncated_normal(rng, ranges.translation_sigma, t) * width as f64;
        let ty = truncated_normal(rng, ranges.translation_sigma, t) * height as f64;
        let scale = 1.0 + truncated_normal(rng, ranges.scale_sigma, t);
        let angle = truncated_normal(rng, ranges.rotation_sigma, t);
        let px = truncated_normal(rng, ranges.perspective_sigma, t);
        let py = truncated_normal(rng, ranges.perspective_sigma, t);
        if scale <= 0.0 {
            continue;
        }

        let crop = Homography::scaling(1.0 / ranges.crop_ratio, 1.0 / ranges.crop_ratio);
        let shift = Homography::translation(tx, ty);
        let zoom = Homography::scaling(scale, scale);
        let rot = Homography::rotation(angle);
        let persp = if px == 0.0 && py == 0.0 {
            Homography::identity()
        } else {
            match symmetric_perspective(half_w, half_h, px, py) {
                Ok(h) => h,
                Err(_) => continue,
            }
        };
        let centered = persp.compose(&rot).compose(&zoom).compose(&shift).compose(&crop);
        let h = Homography::translation(cx, cy)
            .compose(&centered)
            .compose(&Homography::translation(-cx, -cy));
        if let Ok(h) = h.normalize() {
            if h.is_invertible() {
                return Ok(h);
            }
        }
    }
    Err(Error::Singular)
}

/// Trapezoidal distortion in centered coordinates: the left/right edges shrink/grow
/// by `px`, the top/bottom edges by `py`.
fn symmetric_perspective(half_w: f64, half_h: f64, px: f64, py: f64) -> Result<Homography> {
    let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let src = signs.map(|(sx, sy)| Point2::new(sx * half_w, sy * half_h));
    let dst = signs.map(|(sx, sy)| {
        Point2::new(sx * half_w * (1.0 + sy * py), sy * half_h * (1.0 + sx * px))
    });
    Homography::from_four_points(&src, &dst)
}

/// Warps `img` by `h`: output pixel `(u, v)` samples the source at `h^-1 (u, v)`.
/// Pixels whose source location falls outside `[0, W-1] x [0, H-1]` are 0 and unmasked.
pub fn warp_image(img: &ImageGray, h: &Homography) -> Result<(ImageGray, ValidMask)> {
    let inv = h.invert()?;
    let (w, hgt) = (img.width(), img.height());
    let mut out = ImageGray::new(w, hgt);
    let mut mask = ValidMask::new(w, hgt);
    let max_x = w as f64 - 1.0;
    let max_y = hgt as f64 - 1.0;
    let m = &inv.m;
    for v in 0..hgt {
        let vf = v as f64;
        for u in 0..w {
            let uf = u as f64;
            let z = m[6] * uf + m[7] * vf + m[8];
            if z.abs() < DET_EPS {
                continue;
            }
            let x = (m[0] * uf + m[1] * vf + m[2]) / z;
            let y = (m[3] * uf + m[4] * vf + m[5]) / z;
            if x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y {
                out.set(u, v, bilinear_sample(img, x, y));
                mask.set(u, v, true);
            }
        }
    }
    Ok((out, mask))
}

/// The four pixel-center corners of a `width x height` image, clockwise from top-left.
pub fn image_corners(width: usize, height: usize) -> [Point2; 4] {
    let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
    [Point2::new(0.0, 0.0), Point2::new(w, 0.0), Point2::new(w, h), Point2::new(0.0, h)]
}

pub fn in_bounds(p: &Point2, width: usize, height: usize) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= width as f64 - 1.0 && p.y <= height as f64 - 1.0
}

/// True when every output pixel of a warp by `h` has a valid source.
pub fn fully_covered(h: &Homography, width: usize, height: usize) -> bool {
    let Ok(inv) = h.invert() else { return false };
    // The valid region is the image of a convex set, so checking the frame corners suffices.
    image_corners(width, height)
        .iter()
        .all(|c| inv.apply_point(*c).map(|p| in_bounds(&p, width, height)).unwrap_or(false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn assert_h_close(a: &Homography, b: &Homography, tol: f64) {
        let a = a.normalize().unwrap();
        let b = b.normalize().unwrap();
        for i in 0..9 {
            assert!(close(a.m[i], b.m[i], tol), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn apply_examples() {
        let p = Homography::identity().apply_point(Point2::new(7.5, 3.0)).unwrap();
        assert_eq!(p, Point2::new(7.5, 3.0));
        let p = Homography::translation(2.0, 3.0).apply_point(Point2::new(4.0, 4.0)).unwrap();
        assert_eq!(p, Point2::new(6.0, 7.0));
        let h = Homography::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.001, 0.0, 1.0]);
        let p = h.apply_point(Point2::new(100.0, 50.0)).unwrap();
        assert!(close(p.x, 100.0 / 1.1, 1e-12));
        assert!(close(p.y, 50.0 / 1.1, 1e-12));
    }

    #[test]
    fn apply_rejects_points_at_infinity() {
        let h = Homography::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.01, 0.0, 1.0]);
        assert!(matches!(h.apply_point(Point2::new(-100.0, 0.0)), Err(Error::DegenerateProjection)));
    }

    #[test]
    fn compose_and_invert_examples() {
        let i = Homography::identity();
        assert_eq!(i.compose(&i), i);
        let c = Homography::translation(1.0, 0.0).compose(&Homography::translation(0.0, 1.0));
        assert_eq!(c, Homography::translation(1.0, 1.0));
        assert_eq!(i.invert().unwrap(), i);
        assert_h_close(
            &Homography::translation(2.0, 3.0).invert().unwrap(),
            &Homography::translation(-2.0, -3.0),
            0.0,
        );
    }

    #[test]
    fn invert_singular() {
        let h = Homography::new([1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0]);
        assert!(matches!(h.invert(), Err(Error::Singular)));
    }

    #[test]
    fn sampled_round_trip() {
        let mut rng = seeded(11);
        let ranges = HomographyRanges::adaptation();
        for _ in 0..1000 {
            let h = sample_homography(&ranges, 320, 240, &mut rng).unwrap();
            let inv = h.invert().unwrap();
            assert_h_close(&h.compose(&inv), &Homography::identity(), 1e-9);
            for c in image_corners(320, 240) {
                let back = inv.apply_point(h.apply_point(c).unwrap()).unwrap();
                assert!(back.dist(&c) < 1e-9);
            }
        }
    }

    #[test]
    fn zero_ranges_give_identity() {
        let mut rng = seeded(3);
        let h = sample_homography(&HomographyRanges::none(), 64, 48, &mut rng).unwrap();
        assert_eq!(h, Homography::identity());
    }

    #[test]
    fn sampling_is_deterministic() {
        let ranges = HomographyRanges::adaptation();
        let a = sample_homography(&ranges, 96, 96, &mut seeded(5)).unwrap();
        let b = sample_homography(&ranges, 96, 96, &mut seeded(5)).unwrap();
        assert_eq!(a.m.map(f64::to_bits), b.m.map(f64::to_bits));
    }

    fn polygon_area(q: &[Point2]) -> f64 {
        let n = q.len();
        (0..n)
            .map(|i| {
                let (a, b) = (q[i], q[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    fn is_convex(q: &[Point2]) -> bool {
        let n = q.len();
        let signs: Vec<f64> = (0..n)
            .map(|i| {
                let (a, b, c) = (q[i], q[(i + 1) % n], q[(i + 2) % n]);
                (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x)
            })
            .collect();
        signs.iter().all(|s| *s > 0.0) || signs.iter().all(|s| *s < 0.0)
    }

    #[test]
    fn adaptation_samples_are_plausible() {
        let mut rng = seeded(2024);
        let ranges = HomographyRanges::adaptation();
        let corners = image_corners(2, 2);
        let unit: Vec<Point2> = corners.to_vec();
        let base = polygon_area(&unit).abs();
        for _ in 0..10_000 {
            let h = sample_homography(&ranges, 2, 2, &mut rng).unwrap();
            let q = h.apply(&unit).unwrap();
            assert!(is_convex(&q));
            let ratio = polygon_area(&q).abs() / base;
            assert!((0.25..=4.0).contains(&ratio), "area ratio {ratio}");
        }
    }

    #[test]
    fn warp_identity_and_translation() {
        let mut img = ImageGray::new(12, 8);
        for y in 0..8 {
            for x in 0..12 {
                img.set(x, y, ((x * 7 + y * 3) % 11) as f32 / 10.0);
            }
        }
        let (out, mask) = warp_image(&img, &Homography::identity()).unwrap();
        assert_eq!(out, img);
        assert!(mask.all());

        let (out, mask) = warp_image(&img, &Homography::translation(5.0, 0.0)).unwrap();
        for y in 0..8 {
            for x in 0..12 {
                if x < 5 {
                    assert!(!mask.get(x, y));
                    assert_eq!(out.get(x, y), 0.0);
                } else {
                    assert!(mask.get(x, y));
                    assert_eq!(out.get(x, y), img.get(x - 5, y));
                }
            }
        }
    }

    #[test]
    fn warp_round_trip_interior() {
        let (w, hgt) = (64, 48);
        let mut img = ImageGray::new(w, hgt);
        for y in 0..hgt {
            for x in 0..w {
                let v = 0.5 + 0.4 * ((x as f32 * 0.21).sin() * (y as f32 * 0.17).cos());
                img.set(x, y, v);
            }
        }
        let mut rng = seeded(9);
        let h = sample_homography(&HomographyRanges::training(), w, hgt, &mut rng).unwrap();
        let (a, ma) = warp_image(&img, &h).unwrap();
        let (b, mb) = warp_image(&a, &h.invert().unwrap()).unwrap();
        let mut checked = 0;
        for y in 0..hgt {
            for x in 0..w {
                // Only pixels whose whole bilinear footprint was valid in the intermediate image.
                let p = h.apply_point(Point2::new(x as f64, y as f64)).unwrap();
                let (fx, fy) = (p.x.floor() as isize, p.y.floor() as isize);
                let footprint_ok = (0..2).all(|dy| {
                    (0..2).all(|dx| {
                        let (qx, qy) = (fx + dx, fy + dy);
                        qx >= 0 && qy >= 0 && (qx as usize) < w && (qy as usize) < hgt && ma.get(qx as usize, qy as usize)
                    })
                });
                if mb.get(x, y) && footprint_ok {
                    assert!((b.get(x, y) - img.get(x, y)).abs() < 2e-2);
                    checked += 1;
                }
            }
        }
        assert!(checked > w * hgt / 3);
    }

    #[test]
    fn warp_mask_matches_point_in_rectangle() {
        let (w, hgt) = (40, 30);
        let img = ImageGray::filled(w, hgt, 0.5);
        let mut rng = seeded(77);
        let h = sample_homography(&HomographyRanges::adaptation(), w, hgt, &mut rng).unwrap();
        let (_, mask) = warp_image(&img, &h).unwrap();
        let inv = h.invert().unwrap();
        for _ in 0..1000 {
            let u = rng.random_range(0..w);
            let v = rng.random_range(0..hgt);
            let src = inv.apply_point(Point2::new(u as f64, v as f64)).unwrap();
            assert_eq!(mask.get(u, v), in_bounds(&src, w, hgt));
        }
    }

    #[test]
    fn htxt_round_trip() {
        let mut rng = seeded(1);
        let hs: Vec<Homography> = (0..3)
            .map(|_| sample_homography(&HomographyRanges::adaptation(), 50, 50, &mut rng).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.htxt");
        write_htxt(&path, &hs).unwrap();
        assert_eq!(read_htxt(&path).unwrap(), hs);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn affine() -> impl Strategy<Value = Homography> {
            (-2.0..2.0f64, -2.0..2.0f64, -50.0..50.0f64, -2.0..2.0f64, -2.0..2.0f64, -50.0..50.0f64)
                .prop_map(|(a, b, c, d, e, f)| Homography::new([a, b, c, d, e, f, 0.0, 0.0, 1.0]))
                .prop_filter("invertible", |h| h.det().abs() > 1e-3)
        }

        fn sampled() -> impl Strategy<Value = Homography> {
            any::<u64>().prop_map(|s| {
                sample_homography(&HomographyRanges::adaptation(), 100, 80, &mut seeded(s)).unwrap()
            })
        }

        proptest! {
            #[test]
            fn compose_is_associative(a in sampled(), b in sampled(), c in sampled()) {
                let l = a.compose(&b).compose(&c).normalize().unwrap();
                let r = a.compose(&b.compose(&c)).normalize().unwrap();
                for i in 0..9 {
                    prop_assert!((l.m[i] - r.m[i]).abs() < 1e-12 * (1.0 + l.m[i].abs()));
                }
            }

            #[test]
            fn compose_matches_sequential_apply(a in sampled(), b in sampled(), x in 0.0..100.0f64, y in 0.0..80.0f64) {
                let p = Point2::new(x, y);
                let direct = a.compose(&b).apply_point(p).unwrap();
                let seq = a.apply_point(b.apply_point(p).unwrap()).unwrap();
                prop_assert!(direct.dist(&seq) < 1e-9);
            }

            #[test]
            fn identity_apply_is_exact(x in -1e6..1e6f64, y in -1e6..1e6f64) {
                let p = Point2::new(x, y);
                prop_assert_eq!(Homography::identity().apply_point(p).unwrap(), p);
            }

            #[test]
            fn affine_preserves_collinearity(h in affine(), x0 in -50.0..50.0f64, y0 in -50.0..50.0f64,
                                             dx in -5.0..5.0f64, dy in -5.0..5.0f64, t1 in -3.0..3.0f64, t2 in -3.0..3.0f64) {
                let pts = [Point2::new(x0, y0), Point2::new(x0 + t1 * dx, y0 + t1 * dy), Point2::new(x0 + t2 * dx, y0 + t2 * dy)];
                let q = h.apply(&pts).unwrap();
                let cross = (q[1].x - q[0].x) * (q[2].y - q[0].y) - (q[1].y - q[0].y) * (q[2].x - q[0].x);
                let scale = 1.0 + q[1].dist(&q[0]) * q[2].dist(&q[0]);
                prop_assert!(cross.abs() / scale < 1e-9);
            }
        }
    }
}
