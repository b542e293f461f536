//! Nominal task controllers and the unicycle output map.
//!
//! Both task behaviors are proportional pulls toward a target point with the
//! output magnitude clipped.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Rendezvous,
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSite {
    pub position: Point,
    /// Formation radius (m), only meaningful for circle sites.
    pub radius: f64,
    pub kind: SiteKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleState {
    pub position: Point,
    pub heading: f64,
    pub lookahead: f64,
}

impl UnicycleState {
    /// The point driven by the single-integrator controller.
    pub fn control_point(&self) -> Point {
        self.position + Point::new(self.heading.cos(), self.heading.sin()) * self.lookahead
    }
}

fn clip(v: Point, cap: f64) -> Point {
    let norm = v.norm();
    if norm > cap {
        v * (cap / norm)
    } else {
        v
    }
}

pub fn rendezvous_control(xi: &Point, site: &TaskSite, gain: f64, cap: f64) -> Point {
    clip((site.position - xi) * gain, cap)
}

/// Slot `k` of `n` sits at angle `2 pi k / n` on the site's circle.
pub fn circle_slot(site: &TaskSite, slot_index: usize, n_slots: usize) -> Point {
    let theta = TAU * slot_index as f64 / n_slots.max(1) as f64;
    site.position + Point::new(theta.cos(), theta.sin()) * site.radius
}

pub fn circle_formation_control(
    xi: &Point,
    slot_index: usize,
    n_slots: usize,
    site: &TaskSite,
    gain: f64,
    cap: f64,
) -> Point {
    clip((circle_slot(site, slot_index, n_slots) - xi) * gain, cap)
}

/// Near-identity lookahead map from a desired control-point velocity to
/// forward speed and turn rate.
pub fn unicycle_map(u: &Point, state: &UnicycleState) -> (f64, f64) {
    let (s, c) = state.heading.sin_cos();
    let v = c * u.x + s * u.y;
    let omega = (-s * u.x + c * u.y) / state.lookahead;
    (v, omega)
}

/// Inverse of [`unicycle_map`].
pub fn unicycle_unmap(v: f64, omega: f64, state: &UnicycleState) -> Point {
    let (s, c) = state.heading.sin_cos();
    let w = omega * state.lookahead;
    Point::new(c * v - s * w, s * v + c * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    fn site(x: f64, y: f64, radius: f64, kind: SiteKind) -> TaskSite {
        TaskSite {
            position: p(x, y),
            radius,
            kind,
        }
    }

    #[test]
    fn rendezvous_examples() {
        let s = site(1.0, 0.0, 0.0, SiteKind::Rendezvous);
        assert_eq!(rendezvous_control(&p(1.0, 0.0), &s, 1.0, 10.0), p(0.0, 0.0));
        assert_eq!(rendezvous_control(&p(0.0, 0.0), &s, 1.0, 10.0), p(1.0, 0.0));
        let far = site(100.0, 0.0, 0.0, SiteKind::Rendezvous);
        assert_eq!(rendezvous_control(&p(0.0, 0.0), &far, 1.0, 2.0), p(2.0, 0.0));
    }

    #[test]
    fn circle_examples() {
        let s = site(0.0, 0.0, 1.0, SiteKind::Circle);
        let angles: Vec<Point> = (0..4).map(|k| circle_slot(&s, k, 4)).collect();
        let expect = [p(1.0, 0.0), p(0.0, 1.0), p(-1.0, 0.0), p(0.0, -1.0)];
        for (a, b) in angles.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-15);
        }
        assert_eq!(circle_formation_control(&p(2.0, 0.0), 0, 4, &s, 1.0, 10.0), p(-1.0, 0.0));
        assert!(circle_formation_control(&angles[1], 1, 4, &s, 1.0, 10.0).norm() < 1e-15);
    }

    #[test]
    fn controls_respect_cap() {
        let s = site(0.3, -0.2, 0.5, SiteKind::Circle);
        for k in 0..200 {
            let x = p((k as f64 * 0.37).sin() * 5.0, (k as f64 * 0.11).cos() * 5.0);
            assert!(rendezvous_control(&x, &s, 2.0, 0.7).norm() <= 0.7 + 1e-12);
            assert!(circle_formation_control(&x, k % 5, 5, &s, 2.0, 0.7).norm() <= 0.7 + 1e-12);
        }
    }

    #[test]
    fn unicycle_examples() {
        let mut st = UnicycleState {
            position: p(0.0, 0.0),
            heading: 0.0,
            lookahead: 0.1,
        };
        assert_eq!(unicycle_map(&p(1.0, 0.0), &st), (1.0, 0.0));
        assert_eq!(unicycle_map(&p(0.0, 1.0), &st), (0.0, 10.0));
        st.heading = FRAC_PI_2;
        let (v, w) = unicycle_map(&p(0.0, 1.0), &st);
        assert!((v - 1.0).abs() < 1e-15 && w.abs() < 1e-14);
    }

    #[test]
    fn unicycle_round_trip() {
        for k in 0..100 {
            let st = UnicycleState {
                position: p(0.0, 0.0),
                heading: -PI + k as f64 * 0.063,
                lookahead: 0.05 + 0.01 * (k % 7) as f64,
            };
            let u = p((k as f64).sin(), (k as f64 * 1.7).cos());
            let (v, w) = unicycle_map(&u, &st);
            assert!((unicycle_unmap(v, w, &st) - u).norm() < 1e-14);
        }
    }
}
