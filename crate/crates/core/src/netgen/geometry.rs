//! Planar primitives used by junction detection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl std::ops::Sub for Point {
    type Output = Point;

    #[inline]
    fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn add_scaled(self, dir: Point, t: f64) -> Point {
        Point::new(self.x + t * dir.x, self.y + t * dir.y)
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
}

impl Segment {
    pub const fn new(start: Point, end: Point) -> Self {
        Segment { start, end }
    }

    #[inline]
    pub fn direction(&self) -> Point {
        self.end - self.start
    }

    pub fn length(&self) -> f64 {
        self.direction().norm()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bbox(&self) -> (Point, Point) {
        (
            Point::new(self.start.x.min(self.end.x), self.start.y.min(self.end.y)),
            Point::new(self.start.x.max(self.end.x), self.start.y.max(self.end.y)),
        )
    }

    /// Closest point of the segment to `p`.
    pub fn closest_point(&self, p: Point) -> Point {
        let d = self.direction();
        let len2 = d.dot(d);
        if len2 == 0.0 {
            return self.start;
        }
        let t = ((p - self.start).dot(d) / len2).clamp(0.0, 1.0);
        self.start.add_scaled(d, t)
    }

    pub fn distance_to_point(&self, p: Point) -> f64 {
        self.closest_point(p).distance(p)
    }

    /// Intersection point of two closed segments.
    ///
    /// Proper (and touching) crossings return the crossing point. Collinear
    /// segments that overlap return the midpoint of the shared stretch.
    pub fn intersection(&self, other: &Segment) -> Option<Point> {
        let r = self.direction();
        let s = other.direction();
        let qp = other.start - self.start;
        let denom = r.cross(s);
        let scale = r.norm() * s.norm();

        if denom.abs() > 1e-12 * scale {
            let t = qp.cross(s) / denom;
            let u = qp.cross(r) / denom;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                return Some(self.start.add_scaled(r, t));
            }
            return None;
        }

        // Parallel: only collinear overlap counts.
        let r_len = r.norm();
        if r_len == 0.0 || (qp.cross(r) / r_len).abs() > 1e-9 {
            return None;
        }
        let r2 = r.dot(r);
        let t0 = qp.dot(r) / r2;
        let t1 = (other.end - self.start).dot(r) / r2;
        let lo = t0.min(t1).max(0.0);
        let hi = t0.max(t1).min(1.0);
        if lo > hi {
            return None;
        }
        Some(self.start.add_scaled(r, 0.5 * (lo + hi)))
    }
}
