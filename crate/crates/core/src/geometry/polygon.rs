use serde::{Deserialize, Serialize};

use super::{cross, point_segment_distance, GeometryError, Point};

/// Tolerance (meters) under which a point counts as lying on a polygon boundary.
const BOUNDARY_TOL: f64 = 1e-10;

/// A simple polygon obstacle. Vertices are stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    /// Builds a polygon, validating it and normalizing the winding to
    /// counter-clockwise.
    pub fn new(vertices: Vec<Point>) -> Result<Self, String> {
        let poly = Polygon { vertices };
        poly.validate()?;
        Ok(poly.into_ccw())
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon {
            vertices: vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
        }
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for k in 0..n {
            acc += cross(&self.vertices[k], &self.vertices[(k + 1) % n]);
        }
        0.5 * acc
    }

    fn into_ccw(mut self) -> Self {
        if self.signed_area() < 0.0 {
            self.vertices.reverse();
        }
        self
    }

    /// Checks vertex count, finiteness, non-zero area and simplicity.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(format!("needs at least 3 vertices, got {n}"));
        }
        if let Some(k) = self
            .vertices
            .iter()
            .position(|v| !(v.x.is_finite() && v.y.is_finite()))
        {
            return Err(format!("vertex {k} is not finite"));
        }
        for k in 0..n {
            if (self.vertices[(k + 1) % n] - self.vertices[k]).norm() <= BOUNDARY_TOL {
                return Err(format!("edge {k} has zero length"));
            }
        }
        if self.signed_area().abs() <= BOUNDARY_TOL {
            return Err("polygon has zero area".into());
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let adjacent = b == a + 1 || (a == 0 && b == n - 1);
                let (p0, p1) = (self.vertices[a], self.vertices[(a + 1) % n]);
                let (q0, q1) = (self.vertices[b], self.vertices[(b + 1) % n]);
                if adjacent {
                    // Adjacent edges may only share their common vertex.
                    let (shared, other_a, other_b) = if b == a + 1 {
                        (p1, p0, q1)
                    } else {
                        (p0, p1, q0)
                    };
                    let da = other_a - shared;
                    let db = other_b - shared;
                    if cross(&da, &db).abs() <= BOUNDARY_TOL * da.norm() * db.norm()
                        && da.dot(&db) > 0.0
                    {
                        return Err(format!("edges {a} and {b} fold back onto each other"));
                    }
                } else if segments_touch(&p0, &p1, &q0, &q1) {
                    return Err(format!("edges {a} and {b} intersect"));
                }
            }
        }
        Ok(())
    }

    fn bbox(&self) -> (Point, Point) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    fn on_boundary(&self, p: &Point) -> bool {
        let n = self.vertices.len();
        (0..n).any(|k| {
            point_segment_distance(p, &self.vertices[k], &self.vertices[(k + 1) % n]) <= BOUNDARY_TOL
        })
    }

    /// True iff `p` lies in the open interior of the polygon.
    pub fn contains_strict(&self, p: &Point) -> bool {
        if self.on_boundary(p) {
            return false;
        }
        let n = self.vertices.len();
        let mut inside = false;
        for k in 0..n {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: &Point) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|k| point_segment_distance(p, &self.vertices[k], &self.vertices[(k + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// True iff the closed segment `[a, b]` passes through the open interior.
    /// Contact with the boundary alone does not count.
    pub fn segment_hits_interior(&self, a: &Point, b: &Point) -> bool {
        let (lo, hi) = self.bbox();
        if a.x.max(b.x) < lo.x || a.x.min(b.x) > hi.x || a.y.max(b.y) < lo.y || a.y.min(b.y) > hi.y
        {
            return false;
        }
        let r = b - a;
        let r2 = r.norm_squared();
        if r2 == 0.0 {
            return self.contains_strict(a);
        }
        // Parameters along [a, b] where the boundary is met; between two
        // consecutive ones the segment is entirely inside or entirely outside.
        let mut ts = vec![0.0, 1.0];
        let n = self.vertices.len();
        for k in 0..n {
            let c = self.vertices[k];
            let e = self.vertices[(k + 1) % n] - c;
            let ca = c - a;
            let denom = cross(&r, &e);
            let scale = r.norm() * e.norm();
            if denom.abs() > 1e-14 * scale {
                let t = cross(&ca, &e) / denom;
                let s = cross(&ca, &r) / denom;
                if (-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&s) {
                    ts.push(t.clamp(0.0, 1.0));
                }
            } else if cross(&ca, &r).abs() <= BOUNDARY_TOL * r.norm() {
                for q in [c, c + e] {
                    let t = (q - a).dot(&r) / r2;
                    if (0.0..=1.0).contains(&t) {
                        ts.push(t);
                    }
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.windows(2).any(|w| {
            if w[1] - w[0] <= 1e-12 {
                return false;
            }
            let mid = a + r * (0.5 * (w[0] + w[1]));
            self.contains_strict(&mid)
        })
    }
}

/// Closed-segment intersection test (touching counts).
fn segments_touch(p0: &Point, p1: &Point, q0: &Point, q1: &Point) -> bool {
    let orient = |a: &Point, b: &Point, c: &Point| {
        let v = cross(&(b - a), &(c - a));
        if v.abs() <= BOUNDARY_TOL * (b - a).norm().max(1.0) {
            0
        } else if v > 0.0 {
            1
        } else {
            -1
        }
    };
    let on_seg = |a: &Point, b: &Point, p: &Point| point_segment_distance(p, a, b) <= BOUNDARY_TOL;
    let o1 = orient(p0, p1, q0);
    let o2 = orient(p0, p1, q1);
    let o3 = orient(q0, q1, p0);
    let o4 = orient(q0, q1, p1);
    if o1 * o2 < 0 && o3 * o4 < 0 {
        return true;
    }
    on_seg(p0, p1, q0) || on_seg(p0, p1, q1) || on_seg(q0, q1, p0) || on_seg(q0, q1, p1)
}

/// Polygonal obstacles together with the point samples along their
/// boundaries that stand in for them in the barrier constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleField {
    pub polygons: Vec<Polygon>,
    pub discretized: Vec<Point>,
    pub spacing: f64,
}

impl ObstacleField {
    pub fn empty() -> Self {
        ObstacleField {
            polygons: Vec::new(),
            discretized: Vec::new(),
            spacing: 1.0,
        }
    }

    /// Number of discretized boundary points.
    pub fn len(&self) -> usize {
        self.discretized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discretized.is_empty()
    }

    /// Distance from `p` to the nearest discretized boundary point.
    pub fn nearest_point_distance(&self, p: &Point) -> f64 {
        self.discretized
            .iter()
            .map(|o| (p - o).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// True iff `p` is inside (or on) any obstacle polygon.
    pub fn point_blocked(&self, p: &Point) -> bool {
        self.polygons
            .iter()
            .any(|poly| poly.contains_strict(p) || poly.boundary_distance(p) <= BOUNDARY_TOL)
    }
}

/// Samples every polygon boundary: each vertex plus evenly spaced interior
/// points on each edge so that consecutive samples are at most `spacing`
/// apart. Points are ordered by polygon, then edge, then arc length.
pub fn discretize_obstacles(
    polygons: &[Polygon],
    spacing: f64,
) -> Result<ObstacleField, GeometryError> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(GeometryError::InvalidSpacing(spacing));
    }
    let mut normalized = Vec::with_capacity(polygons.len());
    let mut points = Vec::new();
    for (index, poly) in polygons.iter().enumerate() {
        let poly = Polygon::new(poly.vertices.clone())
            .map_err(|reason| GeometryError::InvalidPolygon { index, reason })?;
        let n = poly.vertices.len();
        for k in 0..n {
            let a = poly.vertices[k];
            let b = poly.vertices[(k + 1) % n];
            points.push(a);
            let len = (b - a).norm();
            let pieces = ((len / spacing) - 1e-9).ceil().max(1.0) as usize;
            for m in 1..pieces {
                points.push(a + (b - a) * (m as f64 / pieces as f64));
            }
        }
        normalized.push(poly);
    }
    Ok(ObstacleField {
        polygons: normalized,
        discretized: points,
        spacing,
    })
}

/// True iff the segment `[a, b]` passes through the interior of any obstacle.
pub fn segment_occluded(a: &Point, b: &Point, field: &ObstacleField) -> bool {
    field
        .polygons
        .iter()
        .any(|poly| poly.segment_hits_interior(a, b))
}
