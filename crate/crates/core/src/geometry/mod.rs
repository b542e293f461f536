//! Planar obstacle geometry and the thin ellipsoids used to approximate
//! line-of-sight segments.

mod ellipsoid;
mod polygon;

pub use ellipsoid::{mvee_closed_form, mvee_khachiyan, mvee_points, LosEllipsoid};
pub use polygon::{discretize_obstacles, segment_occluded, ObstacleField, Polygon};

use thiserror::Error;

/// A planar position in meters.
pub type Point = nalgebra::Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("polygon {index} is invalid: {reason}")]
    InvalidPolygon { index: usize, reason: String },
    #[error("discretization spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("degenerate edge: {0}")]
    DegenerateEdge(String),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("point set is rank deficient: {points} points do not span dimension {dim}")]
    RankDeficient { points: usize, dim: usize },
    #[error("Khachiyan iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

/// 2D cross product (z component).
#[inline]
pub(crate) fn cross(a: &Point, b: &Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}
