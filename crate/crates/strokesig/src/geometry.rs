//! Continuous 2-D geometry helpers shared by segmentation and descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Pixel;

/// A point in continuous image coordinates (pixel units unless stated
/// otherwise).
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn from_pixel(p: Pixel) -> Self {
        Point::new(p.x as f64, p.y as f64)
    }

    pub fn dist(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn add(&self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(&self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(&self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(&self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Total arclength of an open polyline.
pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Perimeter of a closed polyline (`points` given without a repeated first
/// point).
pub fn closed_perimeter(points: &[Point]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    polyline_length(points) + points[points.len() - 1].dist(points[0])
}

/// Signed area of a closed polygon; positive when the vertex order is
/// counter-clockwise in a y-down coordinate system iff the shoelace sum is
/// negative, so callers should rely on [`is_counter_clockwise`] instead of
/// interpreting the sign directly.
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    s / 2.0
}

/// True when a closed contour winds counter-clockwise on screen (y grows
/// downward, so the shoelace area of a CCW-on-screen contour is negative).
pub fn is_counter_clockwise(points: &[Point]) -> bool {
    signed_area(points) < 0.0
}

/// Moving-average smoothing with an odd window, clamped at the ends.
/// `window = 1` returns the input unchanged.
pub fn smooth_polyline(points: &[Point], window: usize) -> Vec<Point> {
    assert!(window % 2 == 1, "smoothing window must be odd");
    if window <= 1 || points.len() <= 2 {
        return points.to_vec();
    }
    let half = (window / 2) as isize;
    let n = points.len() as isize;
    (0..n)
        .map(|i| {
            let lo = (i - half).max(0);
            let hi = (i + half).min(n - 1);
            let count = (hi - lo + 1) as f64;
            let mut acc = Point::new(0.0, 0.0);
            for j in lo..=hi {
                acc = acc.add(points[j as usize]);
            }
            acc.scale(1.0 / count)
        })
        .collect()
}

/// Resample a closed contour to exactly `n` points spaced equally in
/// arclength, starting at the original first vertex. Errors when the
/// contour has fewer than 3 points or (numerically) zero perimeter.
pub fn resample_closed(points: &[Point], n: usize) -> Result<Vec<Point>> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "closed contour needs at least 3 points, got {}",
            points.len()
        )));
    }
    let perimeter = closed_perimeter(points);
    if perimeter <= f64::EPSILON * points.len() as f64 {
        return Err(Error::Degenerate("closed contour has zero perimeter".into()));
    }
    // Cumulative arclength over the cyclic vertex list.
    let m = points.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let d = points[i].dist(points[(i + 1) % m]);
        cum.push(cum[i] + d);
    }
    let total = cum[m];
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = k as f64 * step;
        while seg + 1 < m + 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 { (target - cum[seg]) / seg_len } else { 0.0 };
        let a = points[seg % m];
        let b = points[(seg + 1) % m];
        out.push(a.add(b.sub(a).scale(t)));
    }
    Ok(out)
}

/// Resample an open polyline to `n` points spaced equally in arclength,
/// keeping both original endpoints.
pub fn resample_open(points: &[Point], n: usize) -> Result<Vec<Point>> {
    if points.len() < 2 || n < 2 {
        return Err(Error::Degenerate(
            "open polyline resampling needs >= 2 input and output points".into(),
        ));
    }
    let total = polyline_length(points);
    if total <= 0.0 {
        return Err(Error::Degenerate("open polyline has zero length".into()));
    }
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + w[0].dist(w[1]));
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 { (target - cum[seg]) / seg_len } else { 0.0 };
        let a = points[seg];
        let b = points[seg + 1];
        out.push(a.add(b.sub(a).scale(t.clamp(0.0, 1.0))));
    }
    Ok(out)
}

/// Interpolate the point at arclength `s` along an open polyline, clamping
/// to the ends.
pub fn point_at_arclength(points: &[Point], s: f64) -> Point {
    assert!(!points.is_empty());
    if points.len() == 1 || s <= 0.0 {
        return points[0];
    }
    let mut acc = 0.0;
    for w in points.windows(2) {
        let d = w[0].dist(w[1]);
        if acc + d >= s && d > 0.0 {
            let t = (s - acc) / d;
            return w[0].add(w[1].sub(w[0]).scale(t));
        }
        acc += d;
    }
    *points[points.len() - 1..].first().unwrap()
}

/// Unit tangent direction at arclength `s` (direction of the segment that
/// contains `s`).
pub fn tangent_at_arclength(points: &[Point], s: f64) -> Point {
    assert!(points.len() >= 2);
    let mut acc = 0.0;
    let mut last_dir = Point::new(1.0, 0.0);
    for w in points.windows(2) {
        let d = w[0].dist(w[1]);
        if d > 0.0 {
            last_dir = w[1].sub(w[0]).scale(1.0 / d);
            if acc + d >= s {
                return last_dir;
            }
        }
        acc += d;
    }
    last_dir
}

/// Wrap an angle difference into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a;
    while r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    }
    while r <= -std::f64::consts::PI {
        r += 2.0 * std::f64::consts::PI;
    }
    r
}

/// Distance from point `p` to the segment `a`-`b`, and the parameter
/// `t in [0, 1]` of the closest point.
pub fn dist_to_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 <= 0.0 {
        return (p.dist(a), 0.0);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    let proj = a.add(ab.scale(t));
    (p.dist(proj), t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(4.0, 4.0),
            Point::new(0.0, 4.0),
        ]
    }

    #[test]
    fn perimeter_of_unit_square_scaled() {
        assert!((closed_perimeter(&square()) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn shoelace_magnitude_is_area() {
        assert!((signed_area(&square()).abs() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn screen_ccw_detection_flips_with_vertex_order() {
        // In y-down coordinates the square above (x then y increasing) is
        // clockwise on screen.
        let cw = square();
        let ccw: Vec<Point> = cw.iter().rev().copied().collect();
        assert!(!is_counter_clockwise(&cw));
        assert!(is_counter_clockwise(&ccw));
    }

    #[test]
    fn closed_resampling_is_equally_spaced() {
        let pts = resample_closed(&square(), 64).unwrap();
        assert_eq!(pts.len(), 64);
        let step = 16.0 / 64.0;
        for w in pts.windows(2) {
            assert!((w[0].dist(w[1]) - step).abs() < 1e-9, "uneven spacing");
        }
        // Wrap-around gap matches too.
        assert!((pts[63].dist(pts[0]) - step).abs() < 1e-9);
    }

    #[test]
    fn closed_resampling_rejects_degenerate_input() {
        assert!(resample_closed(&[Point::new(0.0, 0.0)], 16).is_err());
        let collapsed = vec![Point::new(1.0, 1.0); 5];
        assert!(resample_closed(&collapsed, 16).is_err());
    }

    #[test]
    fn open_resampling_keeps_endpoints() {
        let line = vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0)];
        let pts = resample_open(&line, 5).unwrap();
        assert_eq!(pts.len(), 5);
        assert!(pts[0].dist(line[0]) < 1e-12);
        assert!(pts[4].dist(line[1]) < 1e-12);
        assert!((pts[2].x - 5.0).abs() < 1e-12);
    }

    #[test]
    fn arclength_lookup_interpolates_linearly() {
        let line = vec![Point::new(0.0, 0.0), Point::new(3.0, 4.0)];
        let mid = point_at_arclength(&line, 2.5);
        assert!((mid.x - 1.5).abs() < 1e-12);
        assert!((mid.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_preserves_straight_lines() {
        let line: Vec<Point> = (0..20).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        let sm = smooth_polyline(&line, 5);
        for (a, b) in line.iter().zip(&sm) {
            // Interior points of a straight line are fixed points of the
            // moving average; ends drift slightly but stay on the line.
            assert!((b.y - 2.0 * b.x).abs() < 1e-9, "{a:?} moved off the line");
        }
    }

    #[test]
    fn angle_wrapping_stays_in_half_open_interval() {
        for k in -8..8 {
            let a = 0.3 + k as f64 * std::f64::consts::PI;
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        }
    }

    #[test]
    fn segment_distance_handles_projection_and_clamping() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 0.0);
        let (d, t) = dist_to_segment(Point::new(5.0, 3.0), a, b);
        assert!((d - 3.0).abs() < 1e-12 && (t - 0.5).abs() < 1e-12);
        let (d, t) = dist_to_segment(Point::new(-4.0, 3.0), a, b);
        assert!((d - 5.0).abs() < 1e-12 && t == 0.0);
    }
}
