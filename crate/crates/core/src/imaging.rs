//! Grayscale rasters, interpolation kernels and the photometric corruption battery.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Single-channel float image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, data: vec![value.clamp(0.0, 1.0); width * height] }
    }

    /// Builds an image from row-major pixels, clamping every value into `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        clamp_unit(&mut data);
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Pixel with replicated borders.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageGray {
        let mut data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        clamp_unit(&mut data);
        ImageGray { width: self.width, height: self.height, data }
    }

    pub fn same_size(&self, other: &ImageGray) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Photometric negation `1 - p`.
    pub fn negated(&self) -> ImageGray {
        self.map(|v| 1.0 - v)
    }

    /// Copy of the `w x h` window starting at `(x0, y0)`; the window must fit.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageGray {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        ImageGray { width: w, height: h, data }
    }

    /// Pads right/bottom by replicating the last column/row.
    pub fn pad_to(&self, w: usize, h: usize) -> ImageGray {
        assert!(w >= self.width && h >= self.height);
        let mut out = ImageGray::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.get_clamped(x as isize, y as isize);
            }
        }
        out
    }
}

fn clamp_unit(data: &mut [f32]) {
    for v in data.iter_mut() {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
}

/// One validity flag per pixel of a companion image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ValidMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// 4-tap bilinear interpolation between pixel centers; coordinates are clamped to the image.
pub fn bilinear_sample(img: &ImageGray, x: f64, y: f64) -> f32 {
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let p00 = img.get(x0, y0);
    let p10 = img.get(x1, y0);
    let p01 = img.get(x0, y1);
    let p11 = img.get(x1, y1);
    (1.0 - fx) * (1.0 - fy) * p00 + fx * (1.0 - fy) * p10 + (1.0 - fx) * fy * p01 + fx * fy * p11
}

/// Catmull-Rom (a = -0.5) weights for taps at offsets -1, 0, 1, 2 given the fractional part `t`.
#[inline]
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// 16-tap Catmull-Rom interpolation with replicated borders.
pub fn bicubic_sample(img: &ImageGray, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let wx = catmull_rom_weights(x - x0);
    let wy = catmull_rom_weights(y - y0);
    let (xi, yi) = (x0 as isize, y0 as isize);
    let mut acc = 0.0f64;
    for (j, wyj) in wy.iter().enumerate() {
        if *wyj == 0.0 {
            continue;
        }
        let mut row = 0.0f64;
        for (i, wxi) in wx.iter().enumerate() {
            if *wxi == 0.0 {
                continue;
            }
            row += wxi * img.get_clamped(xi + i as isize - 1, yi + j as isize - 1) as f64;
        }
        acc += wyj * row;
    }
    acc as f32
}

/// Bilinear resize with pixel-area alignment (`src = (dst + 0.5) * scale - 0.5`).
pub fn resize_bilinear(img: &ImageGray, width: usize, height: usize) -> ImageGray {
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let mut out = ImageGray::new(width, height);
    for v in 0..height {
        let y = (v as f64 + 0.5) * sy - 0.5;
        for u in 0..width {
            let x = (u as f64 + 0.5) * sx - 0.5;
            out.data[v * width + u] = bilinear_sample(img, x, y);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    GaussianAdditive,
    Speckle,
    SaltPepper,
    MotionBlur,
    BrightnessShift,
    ContrastScale,
    ShadeGradient,
    RandomErase,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 8] = [
        NoiseKind::GaussianAdditive,
        NoiseKind::Speckle,
        NoiseKind::SaltPepper,
        NoiseKind::MotionBlur,
        NoiseKind::BrightnessShift,
        NoiseKind::ContrastScale,
        NoiseKind::ShadeGradient,
        NoiseKind::RandomErase,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::GaussianAdditive => "gaussian_additive",
            NoiseKind::Speckle => "speckle",
            NoiseKind::SaltPepper => "salt_pepper",
            NoiseKind::MotionBlur => "motion_blur",
            NoiseKind::BrightnessShift => "brightness_shift",
            NoiseKind::ContrastScale => "contrast_scale",
            NoiseKind::ShadeGradient => "shade_gradient",
            NoiseKind::RandomErase => "random_erase",
        }
    }

    pub fn from_name(name: &str) -> Option<NoiseKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub magnitude: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, magnitude: f64, seed: u64) -> Self {
        Self { kind, magnitude, seed }
    }
}

/// Applies one corruption. Magnitude semantics per kind:
/// gaussian σ, speckle σ of the multiplicative factor, salt-and-pepper pixel fraction,
/// motion-blur kernel length `ceil(m)`, brightness offset, contrast reduction
/// (`p -> 0.5 + (p - 0.5)(1 - m)`), shading depth of a linear ramp in `[1 - m, 1]`,
/// and the maximum erased area fraction.
pub fn add_noise(img: &ImageGray, spec: &NoiseSpec) -> Result<ImageGray> {
    let m = spec.magnitude;
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::InvalidConfig(format!("noise magnitude {m} must be finite and >= 0")));
    }
    if m == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = seeded(spec.seed);
    let (w, h) = (img.width, img.height);
    let mut out = img.clone();
    match spec.kind {
        NoiseKind::GaussianAdditive => {
            for v in out.data.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 + m * n) as f32;
            }
        }
        NoiseKind::Speckle => {
            for v in out.data.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 * (1.0 + m * n)) as f32;
            }
        }
        NoiseKind::SaltPepper => {
            let frac = m.min(1.0);
            for v in out.data.iter_mut() {
                if rng.random::<f64>() < frac {
                    *v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                }
            }
        }
        NoiseKind::MotionBlur => {
            let len = m.ceil() as usize;
            if len > 1 {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let (dy, dx) = angle.sin_cos();
                let half = (len as f64 - 1.0) / 2.0;
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0f32;
                        for k in 0..len {
                            let t = k as f64 - half;
                            acc += bilinear_sample(img, x as f64 + t * dx, y as f64 + t * dy);
                        }
                        out.data[y * w + x] = acc / len as f32;
                    }
                }
            }
        }
        NoiseKind::BrightnessShift => {
            for v in out.data.iter_mut() {
                *v = (*v as f64 + m) as f32;
            }
        }
        NoiseKind::ContrastScale => {
            let factor = 1.0 - m.min(1.0);
            for v in out.data.iter_mut() {
                *v = (0.5 + (*v as f64 - 0.5) * factor) as f32;
            }
        }
        NoiseKind::ShadeGradient => {
            let depth = m.min(1.0);
            let angle = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let (dy, dx) = angle.sin_cos();
            let proj = |x: f64, y: f64| x * dx + y * dy;
            let corners = [(0.0, 0.0), (w as f64 - 1.0, 0.0), (0.0, h as f64 - 1.0), (w as f64 - 1.0, h as f64 - 1.0)];
            let lo = corners.iter().map(|&(x, y)| proj(x, y)).fold(f64::INFINITY, f64::min);
            let hi = corners.iter().map(|&(x, y)| proj(x, y)).fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-9);
            for y in 0..h {
                for x in 0..w {
                    let t = (proj(x as f64, y as f64) - lo) / span;
                    let i = y * w + x;
                    out.data[i] = (out.data[i] as f64 * (1.0 - depth * t)) as f32;
                }
            }
        }
        NoiseKind::RandomErase => {
            let frac = rng.random_range(0.0..=m.min(1.0));
            let area = frac * (w * h) as f64;
            let aspect: f64 = rng.random_range(0.3..3.0);
            let rw = ((area * aspect).sqrt().floor() as usize).min(w);
            let rh = ((area / aspect).sqrt().floor() as usize).min(h);
            if rw > 0 && rh > 0 {
                let x0 = rng.random_range(0..=w - rw);
                let y0 = rng.random_range(0..=h - rh);
                for y in y0..y0 + rh {
                    for x in x0..x0 + rw {
                        out.data[y * w + x] = 0.0;
                    }
                }
            }
        }
    }
    clamp_unit(&mut out.data);
    Ok(out)
}

/// `s <= 1`: `(1-s) clean + s noisy`; `s > 1`: `(2-s) noisy + (s-1) random`.
pub fn noise_blend(clean: &ImageGray, noisy: &ImageGray, random_img: &ImageGray, s: f64) -> Result<ImageGray> {
    if !clean.same_size(noisy) || !clean.same_size(random_img) {
        return Err(Error::DimensionMismatch("noise_blend inputs differ in size".into()));
    }
    if !(0.0..=2.0).contains(&s) {
        return Err(Error::InvalidConfig(format!("blend factor {s} outside [0, 2]")));
    }
    let blend = |a: &ImageGray, b: &ImageGray, t: f64| -> Vec<f32> {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(&p, &q)| {
                if t == 0.0 {
                    p
                } else if t == 1.0 {
                    q
                } else {
                    ((1.0 - t) * p as f64 + t * q as f64) as f32
                }
            })
            .collect()
    };
    let data = if s <= 1.0 { blend(clean, noisy, s) } else { blend(noisy, random_img, s - 1.0) };
    ImageGray::from_vec(clean.width, clean.height, data)
}

/// Uniform random image, the `s = 2` endpoint of the blend sweep.
pub fn random_noise_image(width: usize, height: usize, seed: u64) -> ImageGray {
    let mut rng = seeded(seed);
    let data = (0..width * height).map(|_| rng.random::<f32>()).collect();
    ImageGray::from_vec(width, height, data).expect("sized buffer")
}

/// One entry of a [`NoiseBattery`]: applied with `probability`, magnitude uniform in `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseStage {
    pub kind: NoiseKind,
    pub min: f64,
    pub max: f64,
    pub probability: f64,
}

/// Randomized chain of corruptions used for training augmentation and the noisy evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBattery {
    pub stages: Vec<NoiseStage>,
}

impl Default for NoiseBattery {
    fn default() -> Self {
        use NoiseKind::*;
        let stage = |kind, min, max, probability| NoiseStage { kind, min, max, probability };
        Self {
            stages: vec![
                stage(ShadeGradient, 0.2, 0.6, 0.5),
                stage(ContrastScale, 0.2, 0.6, 0.5),
                stage(BrightnessShift, 0.0, 0.2, 0.5),
                stage(MotionBlur, 2.0, 5.0, 0.4),
                stage(RandomErase, 0.02, 0.1, 0.2),
                stage(Speckle, 0.2, 0.5, 0.5),
                stage(GaussianAdditive, 0.04, 0.12, 0.7),
                stage(SaltPepper, 0.005, 0.03, 0.3),
            ],
        }
    }
}

impl NoiseBattery {
    pub fn apply<R: Rng + ?Sized>(&self, img: &ImageGray, rng: &mut R) -> ImageGray {
        let base: u64 = rng.random();
        let mut out = img.clone();
        for (i, st) in self.stages.iter().enumerate() {
            let fire = rng.random::<f64>() < st.probability;
            let mag = if st.max > st.min { rng.random_range(st.min..=st.max) } else { st.min };
            if fire {
                let spec = NoiseSpec::new(st.kind, mag, derive_seed(base, i as u64));
                out = add_noise(&out, &spec).expect("battery magnitudes are valid");
            }
        }
        out
    }
}

/// Reads a binary 8-bit PGM (`P5`); value `v` becomes `v / maxval`.
pub fn read_pgm(path: &Path) -> Result<ImageGray> {
    let f = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format(format!("{}: truncated PGM header", path.display())));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("{}: not a binary PGM (P5)", path.display())));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header token `{t}`")));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 || w == 0 || h == 0 {
        return Err(Error::Format(format!("{}: unsupported PGM header {w}x{h} max {maxval}", path.display())));
    }
    let mut buf = vec![0u8; w * h];
    r.read_exact(&mut buf)?;
    let data = buf.iter().map(|&b| b as f32 / maxval as f32).collect();
    ImageGray::from_vec(w, h, data)
}

pub fn encode_pgm(img: &ImageGray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, img: &ImageGray) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}
