//! Scored 2D point sets and their `.pts` CSV form (`x,y,confidence`, 6 decimals).

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }

    pub fn pos(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Keypoint>,
}

impl PointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Keypoint>) -> Self {
        Self { points }
    }

    /// Positions with confidence 1.
    pub fn from_positions(pos: &[Point2]) -> Self {
        Self { points: pos.iter().map(|p| Keypoint::new(p.x, p.y, 1.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.points.iter().map(Keypoint::pos).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Keypoint> {
        self.points.iter()
    }

    pub fn push(&mut self, kp: Keypoint) {
        self.points.push(kp);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.points.len() * 32);
        for p in &self.points {
            s.push_str(&format!("{:.6},{:.6},{:.6}\n", p.x, p.y, p.confidence));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<PointSet> {
        let mut points = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!("line {}: expected x,y,confidence", ln + 1)));
            }
            let num = |t: &str| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Format(format!("line {}: bad number `{t}`", ln + 1)))
            };
            points.push(Keypoint::new(num(fields[0])?, num(fields[1])?, num(fields[2])?));
        }
        Ok(PointSet { points })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<PointSet> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

impl FromIterator<Keypoint> for PointSet {
    fn from_iter<I: IntoIterator<Item = Keypoint>>(iter: I) -> Self {
        Self { points: iter.into_iter().collect() }
    }
}

impl<'a> IntoIterator for &'a PointSet {
    type Item = &'a Keypoint;
    type IntoIter = std::slice::Iter<'a, Keypoint>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Bucket grid over point positions for fixed-radius neighbor queries.
pub(crate) struct RadiusGrid {
    cell: f64,
    origin: (f64, f64),
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl RadiusGrid {
    pub fn new(points: &[Point2], radius: f64) -> Self {
        let cell = radius.max(1.0);
        let (mut minx, mut miny, mut maxx, mut maxy) = (0.0f64, 0.0f64, 1.0f64, 1.0f64);
        if let Some(p) = points.first() {
            (minx, miny, maxx, maxy) = (p.x, p.y, p.x, p.y);
        }
        for p in points {
            minx = minx.min(p.x);
            miny = miny.min(p.y);
            maxx = maxx.max(p.x);
            maxy = maxy.max(p.y);
        }
        let cols = (((maxx - minx) / cell).floor() as usize + 1).min(4096);
        let rows = (((maxy - miny) / cell).floor() as usize + 1).min(4096);
        let mut grid = Self { cell, origin: (minx, miny), cols, rows, buckets: vec![Vec::new(); cols * rows] };
        for (i, p) in points.iter().enumerate() {
            let (c, r) = grid.bucket_of(p);
            grid.buckets[r * cols + c].push(i);
        }
        grid
    }

    pub fn empty_like(&self) -> Self {
        Self { buckets: vec![Vec::new(); self.cols * self.rows], ..*self }
    }

    fn bucket_of(&self, p: &Point2) -> (usize, usize) {
        let c = ((p.x - self.origin.0) / self.cell).floor().clamp(0.0, (self.cols - 1) as f64) as usize;
        let r = ((p.y - self.origin.1) / self.cell).floor().clamp(0.0, (self.rows - 1) as f64) as usize;
        (c, r)
    }

    pub fn insert(&mut self, p: &Point2, index: usize) {
        let (c, r) = self.bucket_of(p);
        self.buckets[r * self.cols + c].push(index);
    }

    /// Indices in buckets that may hold points within `radius` of `p` (radius <= cell size).
    pub fn candidates<'a>(&'a self, p: &Point2) -> impl Iterator<Item = usize> + 'a {
        // Clamping is monotone and 1-Lipschitz, so neighbors stay within one bucket.
        let (c, r) = self.bucket_of(p);
        let (c, r) = (c as i64, r as i64);
        let (cols, rows) = (self.cols as i64, self.rows as i64);
        (-1..=1i64)
            .flat_map(move |dr| (-1..=1i64).map(move |dc| (c + dc, r + dr)))
            .filter(move |&(cc, rr)| cc >= 0 && rr >= 0 && cc < cols && rr < rows)
            .flat_map(move |(cc, rr)| self.buckets[rr as usize * self.cols + cc as usize].iter().copied())
    }
}
