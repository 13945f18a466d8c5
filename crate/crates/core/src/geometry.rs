//! Square torus geometry.

use crate::error::{domain_err, Result};
use crate::math;

/// A point of the plane; points of a [`TorusDomain`] live in `[0, side)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Square torus of edge `side`, carrying the receiver–transmitter distance `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusDomain {
    side: f64,
    r: f64,
}

impl TorusDomain {
    pub fn new(side: f64, r: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(domain_err!("torus side must be positive, got {side}"));
        }
        if !(r.is_finite() && r >= 0.0 && r < side / 2.0) {
            return Err(domain_err!("dipole distance must satisfy 0 <= r < side/2, got r={r}, side={side}"));
        }
        Ok(TorusDomain { side, r })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    /// Receiver–transmitter distance of every dipole.
    pub fn link_length(&self) -> f64 {
        self.r
    }

    /// `|D| = side²`.
    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..self.side).contains(&p.x) && (0.0..self.side).contains(&p.y)
    }

    /// Reduce an arbitrary point of the plane to its representative in `[0, side)²`.
    pub fn wrap(&self, p: Point) -> Point {
        Point::new(self.wrap_coord(p.x), self.wrap_coord(p.y))
    }

    fn wrap_coord(&self, v: f64) -> f64 {
        let w = v - self.side * math::floor(v / self.side);
        // floor can leave w == side after rounding
        if w >= self.side {
            0.0
        } else {
            w
        }
    }

    /// Shortest displacement `q - p` among the periodic images of `q`.
    #[inline]
    pub fn displacement(&self, p: Point, q: Point) -> (f64, f64) {
        (self.min_image(q.x - p.x), self.min_image(q.y - p.y))
    }

    #[inline]
    fn min_image(&self, d: f64) -> f64 {
        let half = self.side / 2.0;
        if d > half {
            d - self.side
        } else if d < -half {
            d + self.side
        } else {
            d
        }
    }

    /// Unchecked torus distance; both points must already lie in the domain.
    #[inline]
    pub fn distance(&self, p: Point, q: Point) -> f64 {
        let (dx, dy) = self.displacement(p, q);
        math::sqrt(dx * dx + dy * dy)
    }

    /// Largest possible torus distance, `side·√2/2`.
    pub fn diameter(&self) -> f64 {
        self.side * core::f64::consts::FRAC_1_SQRT_2
    }
}

/// Euclidean distance from `p` to the nearest periodic image of `q`.
pub fn torus_distance(p: Point, q: Point, dom: &TorusDomain) -> Result<f64> {
    for pt in [p, q] {
        if !dom.contains(pt) {
            return Err(domain_err!(
                "point ({}, {}) outside [0, {})²",
                pt.x,
                pt.y,
                dom.side()
            ));
        }
    }
    Ok(dom.distance(p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(p: Point, q: Point, side: f64) -> f64 {
        let mut best = f64::INFINITY;
        for i in -1..=1 {
            for j in -1..=1 {
                let dx = q.x + i as f64 * side - p.x;
                let dy = q.y + j as f64 * side - p.y;
                best = best.min((dx * dx + dy * dy).sqrt());
            }
        }
        best
    }

    #[test]
    fn distance_examples() {
        let dom = TorusDomain::new(10.0, 0.0).unwrap();
        let d = |a: (f64, f64), b: (f64, f64)| {
            torus_distance(Point::new(a.0, a.1), Point::new(b.0, b.1), &dom).unwrap()
        };
        assert_eq!(d((0.0, 0.0), (0.0, 0.0)), 0.0);
        assert!((d((0.0, 0.0), (9.0, 0.0)) - 1.0).abs() < 1e-15);
        let expected = brute_force(Point::new(1.0, 1.0), Point::new(6.0, 6.0), 10.0);
        assert!((expected - 50f64.sqrt()).abs() < 1e-12);
        assert!((d((1.0, 1.0), (6.0, 6.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let dom = TorusDomain::new(10.0, 0.0).unwrap();
        assert!(torus_distance(Point::new(10.0, 0.0), Point::ORIGIN, &dom).is_err());
        assert!(torus_distance(Point::ORIGIN, Point::new(-0.1, 3.0), &dom).is_err());
    }

    #[test]
    fn invalid_domains() {
        assert!(TorusDomain::new(0.0, 0.0).is_err());
        assert!(TorusDomain::new(10.0, 5.0).is_err());
        assert!(TorusDomain::new(10.0, -1.0).is_err());
        assert_eq!(TorusDomain::new(10.0, 1.0).unwrap().area(), 100.0);
    }

    #[test]
    fn wrap_lands_in_domain() {
        let dom = TorusDomain::new(10.0, 0.0).unwrap();
        for v in [-20.0, -10.0, -1e-18, 0.0, 9.999999999, 10.0, 35.5] {
            assert!(dom.contains(dom.wrap(Point::new(v, v))), "{v}");
        }
    }

    proptest! {
        #[test]
        fn torus_metric(ax in 0.0..10.0f64, ay in 0.0..10.0f64,
                        bx in 0.0..10.0f64, by in 0.0..10.0f64,
                        cx in 0.0..10.0f64, cy in 0.0..10.0f64) {
            let dom = TorusDomain::new(10.0, 0.0).unwrap();
            let (a, b, c) = (Point::new(ax, ay), Point::new(bx, by), Point::new(cx, cy));
            let ab = dom.distance(a, b);
            prop_assert!((ab - dom.distance(b, a)).abs() < 1e-12);
            prop_assert!((ab - brute_force(a, b, 10.0)).abs() < 1e-12);
            prop_assert!(ab <= dom.diameter() + 1e-12);
            prop_assert!(ab <= dom.distance(a, c) + dom.distance(c, b) + 1e-12);
        }
    }
}
