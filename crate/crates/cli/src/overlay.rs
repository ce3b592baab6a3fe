//! Inspection images: white crosses on grayscale, side-by-side match views.

use spoint::geometry::Point2;
use spoint::imaging::ImageGray;

pub const ARM: isize = 3;

fn plot(img: &mut ImageGray, x: isize, y: isize, v: f32) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.set(x as usize, y as usize, v);
    }
}

/// White `+` with 3-px arms at the rounded position.
pub fn draw_cross(img: &mut ImageGray, p: Point2) {
    let (cx, cy) = (p.x.round() as isize, p.y.round() as isize);
    for d in -ARM..=ARM {
        plot(img, cx + d, cy, 1.0);
        plot(img, cx, cy + d, 1.0);
    }
}

pub fn draw_line(img: &mut ImageGray, a: Point2, b: Point2, v: f32) {
    let n = (b.x - a.x).abs().max((b.y - a.y).abs()).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        plot(img, (a.x + t * (b.x - a.x)).round() as isize, (a.y + t * (b.y - a.y)).round() as isize, v);
    }
}

pub fn crosses(img: &ImageGray, pts: &[Point2]) -> ImageGray {
    let mut out = img.clone();
    for p in pts {
        draw_cross(&mut out, *p);
    }
    out
}

/// `a` and `b` next to each other (shorter one padded black), crosses on the matched points
/// and a line per inlier match.
pub fn side_by_side(a: &ImageGray, b: &ImageGray, pairs: &[(Point2, Point2)], inliers: &[bool]) -> ImageGray {
    let h = a.height().max(b.height());
    let mut out = ImageGray::new(a.width() + b.width(), h);
    for (img, dx) in [(a, 0), (b, a.width())] {
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.set(x + dx, y, img.get(x, y));
            }
        }
    }
    let shift = a.width() as f64;
    for (i, (pa, pb)) in pairs.iter().enumerate() {
        let pb = Point2::new(pb.x + shift, pb.y);
        draw_cross(&mut out, *pa);
        draw_cross(&mut out, pb);
        if inliers.get(i).copied().unwrap_or(false) {
            draw_line(&mut out, *pa, pb, 1.0);
        }
    }
    out
}
