//! Barrier functions for inter-robot safety, obstacle avoidance, range
//! connectivity and ellipsoidal line of sight, and the assembly of their
//! first-order certificates into one linear system `A u <= b` over the
//! stacked single-integrator controls.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_segment_distance, LosEllipsoid, ObstacleField, Point};

/// Radii, gain and speed limit shared by every certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    /// Inter-robot safety radius (m).
    pub r_s: f64,
    /// Robot to obstacle-point safety radius (m).
    pub r_obs: f64,
    /// Communication range (m).
    pub r_c: f64,
    /// Linear class-K gain (1/s).
    pub gamma: f64,
    /// Per-robot speed bound (m/s).
    pub u_max: f64,
    /// Line-of-sight ellipsoid thickness (m).
    pub delta: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        BarrierParams {
            r_s: 0.04,
            r_obs: 0.04,
            r_c: 0.5,
            gamma: 1.0,
            u_max: 1.0,
            delta: 0.02,
        }
    }
}

impl BarrierParams {
    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("R_s", self.r_s),
            ("R_obs", self.r_obs),
            ("R_c", self.r_c),
            ("gamma", self.gamma),
            ("u_max", self.u_max),
            ("delta", self.delta),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.r_s >= self.r_c {
            return Err(format!(
                "R_s ({}) must be smaller than R_c ({})",
                self.r_s, self.r_c
            ));
        }
        Ok(())
    }

    /// Per-component box bound realizing `||u_i|| <= u_max` conservatively.
    pub fn component_bound(&self) -> f64 {
        self.u_max / 2f64.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarrierError {
    #[error("tree edge {index} ({i}, {j}) has no ellipsoid")]
    MissingEllipsoid { index: usize, i: usize, j: usize },
    #[error("edge ({i}, {j}) references a robot outside 0..{n}")]
    EdgeOutOfRange { i: usize, j: usize, n: usize },
    #[error("tree edge ({i}, {j}) joins coincident robots")]
    CoincidentEndpoints { i: usize, j: usize },
}

pub fn h_safe(xi: &Point, xj: &Point, params: &BarrierParams) -> f64 {
    (xi - xj).norm_squared() - params.r_s * params.r_s
}

pub fn h_obs(xi: &Point, xo: &Point, params: &BarrierParams) -> f64 {
    (xi - xo).norm_squared() - params.r_obs * params.r_obs
}

pub fn h_conn(xi: &Point, xj: &Point, params: &BarrierParams) -> f64 {
    params.r_c * params.r_c - (xi - xj).norm_squared()
}

/// Occlusion barrier of one obstacle point against an edge ellipsoid;
/// negative when the point is inside.
pub fn h_los(ell: &LosEllipsoid, xo: &Point) -> f64 {
    ell.level(xo) - 1.0
}

pub fn hdot_safe(xi: &Point, xj: &Point, ui: &Point, uj: &Point) -> f64 {
    2.0 * (xi - xj).dot(&(ui - uj))
}

pub fn hdot_obs(xi: &Point, xo: &Point, ui: &Point) -> f64 {
    2.0 * (xi - xo).dot(ui)
}

pub fn hdot_conn(xi: &Point, xj: &Point, ui: &Point, uj: &Point) -> f64 {
    -2.0 * (xi - xj).dot(&(ui - uj))
}

/// `v = Q (xo - p0)`, so that the occlusion barrier evolves as
/// `-v . (u_i + u_j)` with the shape matrix held fixed over the step.
pub fn hdot_los_coefficients(ell: &LosEllipsoid, xo: &Point) -> Point {
    ell.shape.transpose() * (xo - ell.center)
}

pub fn hdot_los(ell: &LosEllipsoid, xo: &Point, ui: &Point, uj: &Point) -> f64 {
    -hdot_los_coefficients(ell, xo).dot(&(ui + uj))
}

/// Gradients of the occlusion barrier with respect to both endpoints when
/// the ellipsoid is rebuilt from the moving segment, so rotation and
/// stretching of the shape are included. Returns `(grad_i, grad_j)`.
pub fn los_gradients(xi: &Point, xj: &Point, xo: &Point, delta: f64) -> Option<(Point, Point)> {
    let d = xj - xi;
    let len = d.norm();
    if !(len > 0.0) {
        return None;
    }
    let e = d / len;
    let a = 0.5 * len;
    let r = xo - (xi + xj) * 0.5;
    let s = r.dot(&e);
    let r_perp = r - e * s;
    let inv_a2 = 1.0 / (a * a);
    let inv_d2 = 1.0 / (delta * delta);
    let q_r = e * (s * inv_a2) + r_perp * inv_d2;
    let d_len = r_perp * (2.0 * s / len * (inv_a2 - inv_d2)) - e * (s * s * inv_a2 / a);
    Some((-q_r - d_len, -q_r + d_len))
}

/// How line-of-sight rows linearize the occlusion barrier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LosDerivative {
    /// Shape held fixed; only the center translation contributes.
    #[default]
    Frozen,
    /// Shape rebuilt from the moving endpoints.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Safety,
    Obstacle,
    Connectivity,
    Los,
}

/// One row of `A u <= b`. Coefficients touch one or two robots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub coefficients: Vec<(usize, Point)>,
    pub bound: f64,
    pub kind: ConstraintKind,
    pub edge: Option<(usize, usize)>,
    pub obstacle_index: Option<usize>,
}

impl ConstraintRow {
    /// Row product `a . u` for stacked per-robot controls.
    pub fn apply(&self, u: &[Point]) -> f64 {
        self.coefficients.iter().map(|(r, a)| a.dot(&u[*r])).sum()
    }

    /// Amount by which `u` violates the row (zero when satisfied).
    pub fn violation(&self, u: &[Point]) -> f64 {
        (self.apply(u) - self.bound).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    pub rows: Vec<ConstraintRow>,
    pub n_robots: usize,
    pub dim: usize,
}

impl ConstraintSystem {
    pub fn count(&self, kind: ConstraintKind) -> usize {
        self.rows.iter().filter(|r| r.kind == kind).count()
    }

    pub fn max_violation(&self, u: &[Point]) -> f64 {
        self.rows.iter().map(|r| r.violation(u)).fold(0.0, f64::max)
    }
}

/// Optional row-pruning switches; both are off by default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Skip safety rows for pairs farther apart than this distance (m).
    pub safety_cutoff: Option<f64>,
    /// Only emit line-of-sight rows for obstacle points within this distance
    /// (m) of the edge segment.
    pub los_prune_radius: Option<f64>,
    /// Emit line-of-sight rows for tree edges. Disabled for the range-only
    /// baseline.
    pub skip_los: bool,
    /// Tree range rows enforce `R_c - range_margin` instead of `R_c` (m).
    pub range_margin: f64,
    pub los_derivative: LosDerivative,
}

/// Builds the joint constraint system. Rows are ordered safety (pairs
/// `i > j`), obstacle (robot-major), connectivity (per tree edge), then
/// line-of-sight (per tree edge, then obstacle point).
pub fn assemble_system(
    positions: &[Point],
    field: &ObstacleField,
    tree_edges: &[(usize, usize)],
    ellipsoids: &[LosEllipsoid],
    params: &BarrierParams,
    options: &AssemblyOptions,
) -> Result<ConstraintSystem, BarrierError> {
    let n = positions.len();
    for &(i, j) in tree_edges {
        if i >= n || j >= n {
            return Err(BarrierError::EdgeOutOfRange { i, j, n });
        }
    }
    if !options.skip_los && ellipsoids.len() < tree_edges.len() {
        let index = ellipsoids.len();
        let (i, j) = tree_edges[index];
        return Err(BarrierError::MissingEllipsoid { index, i, j });
    }
    let gamma = params.gamma;
    let r_cert = params.r_c - options.range_margin;
    let f = field.discretized.len();
    let mut rows = Vec::with_capacity(n * (n.saturating_sub(1)) / 2 + n * f + tree_edges.len() * (1 + f));

    for i in 1..n {
        for j in 0..i {
            let (xi, xj) = (&positions[i], &positions[j]);
            if let Some(cut) = options.safety_cutoff {
                if (xi - xj).norm() > cut {
                    continue;
                }
            }
            let g = (xi - xj) * 2.0;
            rows.push(ConstraintRow {
                coefficients: vec![(i, -g), (j, g)],
                bound: gamma * h_safe(xi, xj, params),
                kind: ConstraintKind::Safety,
                edge: Some((i, j)),
                obstacle_index: None,
            });
        }
    }

    for (i, xi) in positions.iter().enumerate() {
        for (o, xo) in field.discretized.iter().enumerate() {
            rows.push(ConstraintRow {
                coefficients: vec![(i, (xi - xo) * -2.0)],
                bound: gamma * h_obs(xi, xo, params),
                kind: ConstraintKind::Obstacle,
                edge: None,
                obstacle_index: Some(o),
            });
        }
    }

    for &(i, j) in tree_edges {
        let (xi, xj) = (&positions[i], &positions[j]);
        let g = (xi - xj) * 2.0;
        rows.push(ConstraintRow {
            coefficients: vec![(i, g), (j, -g)],
            bound: gamma * (r_cert * r_cert - (xi - xj).norm_squared()),
            kind: ConstraintKind::Connectivity,
            edge: Some((i, j)),
            obstacle_index: None,
        });
    }

    if !options.skip_los {
        for (&(i, j), ell) in tree_edges.iter().zip(ellipsoids) {
            for (o, xo) in field.discretized.iter().enumerate() {
                if let Some(radius) = options.los_prune_radius {
                    if point_segment_distance(xo, &positions[i], &positions[j]) > radius {
                        continue;
                    }
                }
                let coefficients = match options.los_derivative {
                    LosDerivative::Frozen => {
                        let v = hdot_los_coefficients(ell, xo);
                        vec![(i, v), (j, v)]
                    }
                    LosDerivative::Full => {
                        let (gi, gj) = los_gradients(&positions[i], &positions[j], xo, ell.thickness)
                            .ok_or(BarrierError::CoincidentEndpoints { i, j })?;
                        vec![(i, -gi), (j, -gj)]
                    }
                };
                rows.push(ConstraintRow {
                    coefficients,
                    bound: gamma * h_los(ell, xo),
                    kind: ConstraintKind::Los,
                    edge: Some((i, j)),
                    obstacle_index: Some(o),
                });
            }
        }
    }

    Ok(ConstraintSystem {
        rows,
        n_robots: n,
        dim: 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{discretize_obstacles, Polygon};
    use nalgebra::Matrix2;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    fn params(r_s: f64, r_obs: f64, r_c: f64) -> BarrierParams {
        BarrierParams {
            r_s,
            r_obs,
            r_c,
            ..BarrierParams::default()
        }
    }

    fn diag_ellipse() -> LosEllipsoid {
        LosEllipsoid {
            center: p(1.0, 0.0),
            shape: Matrix2::new(1.0, 0.0, 0.0, 100.0),
            major_axis_half_length: 1.0,
            thickness: 0.1,
        }
    }

    #[test]
    fn barrier_values() {
        let pr = params(1.0, 1.0, 6.0);
        assert_eq!(h_safe(&p(0.0, 0.0), &p(3.0, 4.0), &pr), 24.0);
        assert_eq!(h_safe(&p(2.0, 2.0), &p(2.0, 2.0), &pr), -1.0);
        assert_eq!(h_safe(&p(0.0, 0.0), &p(1.0, 0.0), &pr), 0.0);

        assert_eq!(h_obs(&p(0.0, 0.0), &p(0.0, 2.0), &pr), 3.0);
        assert_eq!(h_obs(&p(0.5, 0.5), &p(0.5, 0.5), &pr), -1.0);
        assert_eq!(h_obs(&p(0.0, 0.0), &p(0.0, 1.0), &pr), 0.0);

        assert_eq!(h_conn(&p(0.0, 0.0), &p(3.0, 4.0), &pr), 11.0);
        assert_eq!(h_conn(&p(0.0, 0.0), &p(6.0, 0.0), &pr), 0.0);
        assert_eq!(h_conn(&p(1.0, 1.0), &p(1.0, 1.0), &pr), 36.0);
    }

    #[test]
    fn los_barrier_and_derivative() {
        let ell = diag_ellipse();
        assert!((h_los(&ell, &p(1.0, 1.0)) - 99.0).abs() < 1e-12);
        assert_eq!(h_los(&ell, &p(1.0, 0.0)), -1.0);
        assert!(h_los(&ell, &p(2.0, 0.0)).abs() < 1e-12);
        assert!(h_los(&ell, &p(1.0, 0.1)).abs() < 1e-12);

        let v = hdot_los_coefficients(&ell, &p(1.0, 1.0));
        assert!((v - p(0.0, 100.0)).norm() < 1e-12);
        let up = p(0.0, 1.0);
        assert!((hdot_los(&ell, &p(1.0, 1.0), &up, &up) + 200.0).abs() < 1e-12);
        assert_eq!(hdot_los(&ell, &p(1.3, 0.7), &up, &-up), 0.0);
        assert_eq!(hdot_los_coefficients(&ell, &p(1.0, 0.0)), p(0.0, 0.0));
    }

    fn square_field(spacing: f64) -> ObstacleField {
        discretize_obstacles(&[Polygon::rect(5.0, 5.0, 6.0, 6.0)], spacing).unwrap()
    }

    #[test]
    fn row_counts() {
        let pr = BarrierParams::default();
        let two = [p(0.0, 0.0), p(0.3, 0.0)];
        let ell = LosEllipsoid::for_segment(&two[0], &two[1], pr.delta).unwrap();
        let sys = assemble_system(&two, &ObstacleField::empty(), &[(0, 1)], &[ell], &pr, &Default::default())
            .unwrap();
        assert_eq!(sys.rows.len(), 2);
        assert_eq!(sys.count(ConstraintKind::Los), 0);

        let one_point = ObstacleField {
            polygons: vec![],
            discretized: vec![p(5.0, 5.0)],
            spacing: 1.0,
        };
        let sys = assemble_system(&two, &one_point, &[(0, 1)], &[ell], &pr, &Default::default()).unwrap();
        assert_eq!(sys.rows.len(), 5);

        let three = [p(0.0, 0.0), p(0.3, 0.0), p(0.0, 0.3)];
        let two_points = ObstacleField {
            polygons: vec![],
            discretized: vec![p(5.0, 5.0), p(5.0, 6.0)],
            spacing: 1.0,
        };
        let e1 = LosEllipsoid::for_segment(&three[0], &three[1], pr.delta).unwrap();
        let e2 = LosEllipsoid::for_segment(&three[0], &three[2], pr.delta).unwrap();
        let sys = assemble_system(&three, &two_points, &[(0, 1), (0, 2)], &[e1, e2], &pr, &Default::default())
            .unwrap();
        assert_eq!(sys.rows.len(), 15);
        let kinds: Vec<_> = sys.rows.iter().map(|r| r.kind).collect();
        let mut sorted = kinds.clone();
        sorted.sort_by_key(|k| *k as u8);
        assert_eq!(kinds, sorted, "rows must be grouped safety, obstacle, connectivity, los");
    }

    #[test]
    fn missing_ellipsoid_is_an_error() {
        let pr = BarrierParams::default();
        let pts = [p(0.0, 0.0), p(0.3, 0.0), p(0.0, 0.3)];
        let ell = LosEllipsoid::for_segment(&pts[0], &pts[1], pr.delta).unwrap();
        let err = assemble_system(&pts, &ObstacleField::empty(), &[(0, 1), (0, 2)], &[ell], &pr, &Default::default())
            .unwrap_err();
        assert_eq!(err, BarrierError::MissingEllipsoid { index: 1, i: 0, j: 2 });
        // The range-only variant needs no ellipsoids.
        let opts = AssemblyOptions {
            skip_los: true,
            ..Default::default()
        };
        assert!(assemble_system(&pts, &ObstacleField::empty(), &[(0, 1)], &[], &pr, &opts).is_ok());
    }

    #[test]
    fn pruning_flags_drop_rows() {
        let pr = BarrierParams::default();
        let field = square_field(0.25);
        let pts = [p(0.0, 0.0), p(0.3, 0.0), p(10.0, 0.0)];
        let ell = LosEllipsoid::for_segment(&pts[0], &pts[1], pr.delta).unwrap();
        let full = assemble_system(&pts, &field, &[(0, 1)], &[ell], &pr, &Default::default()).unwrap();
        let pruned = assemble_system(
            &pts,
            &field,
            &[(0, 1)],
            &[ell],
            &pr,
            &AssemblyOptions {
                safety_cutoff: Some(1.0),
                los_prune_radius: Some(1.0),
                skip_los: false,
                range_margin: 0.0,
                los_derivative: LosDerivative::Frozen,
            },
        )
        .unwrap();
        assert_eq!(full.count(ConstraintKind::Safety), 3);
        assert_eq!(pruned.count(ConstraintKind::Safety), 1);
        assert_eq!(full.count(ConstraintKind::Los), field.len());
        assert_eq!(pruned.count(ConstraintKind::Los), 0);
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y)| p(x, y))
    }

    proptest! {
        #[test]
        fn row_count_formula(n in 2usize..6, f_side in 1usize..4, edges in 0usize..4) {
            let pr = BarrierParams::default();
            let pts: Vec<Point> = (0..n).map(|k| p(k as f64 * 0.3, (k % 2) as f64 * 0.2)).collect();
            let field = discretize_obstacles(&[Polygon::rect(5.0, 5.0, 6.0, 6.0)], 1.0 / f_side as f64).unwrap();
            let tree: Vec<(usize, usize)> = (1..n).take(edges).map(|k| (k - 1, k)).collect();
            let ells: Vec<_> = tree.iter()
                .map(|&(i, j)| LosEllipsoid::for_segment(&pts[i], &pts[j], pr.delta).unwrap())
                .collect();
            let sys = assemble_system(&pts, &field, &tree, &ells, &pr, &Default::default()).unwrap();
            let f = field.len();
            prop_assert_eq!(sys.rows.len(), n * (n - 1) / 2 + n * f + tree.len() * (1 + f));
        }

        #[test]
        fn barriers_symmetric(a in arb_point(), b in arb_point()) {
            let pr = BarrierParams::default();
            prop_assert_eq!(h_safe(&a, &b, &pr), h_safe(&b, &a, &pr));
            prop_assert_eq!(h_conn(&a, &b, &pr), h_conn(&b, &a, &pr));
            if (a - b).norm() > 1e-3 {
                let o = p(0.1, 0.2);
                let e1 = LosEllipsoid::for_segment(&a, &b, pr.delta).unwrap();
                let e2 = LosEllipsoid::for_segment(&b, &a, pr.delta).unwrap();
                let (h1, h2) = (h_los(&e1, &o), h_los(&e2, &o));
                prop_assert!((h1 - h2).abs() <= 1e-9 * h1.abs().max(1.0));
            }
        }

        #[test]
        fn derivatives_match_finite_differences(
            a in arb_point(), b in arb_point(), o in arb_point(),
            ua in arb_point(), ub in arb_point(),
        ) {
            prop_assume!((a - b).norm() > 0.1);
            let pr = BarrierParams::default();
            let eps = 1e-6;
            let (a2, b2) = (a + ua * eps, b + ub * eps);
            let fd = |h0: f64, h1: f64| (h1 - h0) / eps;
            let tol = |v: f64| 1e-4 * (1.0 + v.abs());

            let d = fd(h_safe(&a, &b, &pr), h_safe(&a2, &b2, &pr));
            prop_assert!((d - hdot_safe(&a, &b, &ua, &ub)).abs() < tol(d));
            let d = fd(h_conn(&a, &b, &pr), h_conn(&a2, &b2, &pr));
            prop_assert!((d - hdot_conn(&a, &b, &ua, &ub)).abs() < tol(d));
            let d = fd(h_obs(&a, &o, &pr), h_obs(&a2, &o, &pr));
            prop_assert!((d - hdot_obs(&a, &o, &ua)).abs() < tol(d));

            // Shape frozen, center moved: only the translation term remains.
            let ell = LosEllipsoid::for_segment(&a, &b, 0.3).unwrap();
            let moved = LosEllipsoid { center: (a2 + b2) * 0.5, ..ell };
            let d = fd(h_los(&ell, &o), h_los(&moved, &o));
            let analytic = hdot_los(&ell, &o, &ua, &ub);
            prop_assert!((d - analytic).abs() < 1e-4 * (1.0 + analytic.abs()), "{} vs {}", d, analytic);

            let rebuilt = LosEllipsoid::for_segment(&a2, &b2, 0.3).unwrap();
            let d = fd(h_los(&ell, &o), h_los(&rebuilt, &o));
            let (ga, gb) = los_gradients(&a, &b, &o, 0.3).unwrap();
            let analytic = ga.dot(&ua) + gb.dot(&ub);
            prop_assert!((d - analytic).abs() < 1e-3 * (1.0 + analytic.abs()), "{} vs {}", d, analytic);
        }

        #[test]
        fn zero_control_satisfies_rows_inside_sets(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pr = BarrierParams::default();
            let field = discretize_obstacles(&[Polygon::rect(0.4, 0.4, 0.6, 0.6)], pr.r_obs / 2.0).unwrap();
            let mut pts: Vec<Point> = Vec::new();
            while pts.len() < 5 {
                let c = p(rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5));
                if field.nearest_point_distance(&c) > pr.r_obs * 1.01
                    && !field.point_blocked(&c)
                    && pts.iter().all(|q| (q - c).norm() > pr.r_s * 1.01)
                {
                    pts.push(c);
                }
            }
            let tree: Vec<(usize, usize)> = (1..5)
                .map(|k| (k - 1, k))
                .filter(|&(i, j)| (pts[i] - pts[j]).norm() < pr.r_c)
                .collect();
            let ells: Vec<_> = tree.iter()
                .map(|&(i, j)| LosEllipsoid::for_segment(&pts[i], &pts[j], pr.delta).unwrap())
                .collect();
            let sys = assemble_system(&pts, &field, &tree, &ells, &pr, &Default::default()).unwrap();
            let zero = vec![Point::zeros(); 5];
            for row in &sys.rows {
                let inside = row.bound > 0.0;
                if inside {
                    prop_assert!(row.violation(&zero) == 0.0);
                }
            }
            // Safety, obstacle and connectivity rows all start strictly inside.
            for row in sys.rows.iter().filter(|r| r.kind != ConstraintKind::Los) {
                prop_assert!(row.bound > 0.0);
            }
        }
    }
}
