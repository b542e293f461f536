use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::GeometryError;

const KHACHIYAN_MAX_ITER: usize = 200_000;

/// Thin ellipsoid `{p : (p - center)^T shape (p - center) <= 1}` wrapped
/// around a line-of-sight segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LosEllipsoid<const D: usize = 2> {
    pub center: SVector<f64, D>,
    /// Symmetric positive-definite shape matrix, units m^-2.
    pub shape: SMatrix<f64, D, D>,
    pub major_axis_half_length: f64,
    /// Semi-axis length across the segment (delta).
    pub thickness: f64,
}

impl<const D: usize> LosEllipsoid<D> {
    /// Ellipsoid with the segment `[xi, xj]` as its major axis and every other
    /// semi-axis equal to `delta`. Only coincident endpoints are rejected, so
    /// this also covers edges shorter than `2 * delta`.
    pub fn for_segment(
        xi: &SVector<f64, D>,
        xj: &SVector<f64, D>,
        delta: f64,
    ) -> Result<Self, GeometryError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(GeometryError::DegenerateEdge(format!(
                "thickness must be positive, got {delta}"
            )));
        }
        let basis = edge_basis(xi, xj)?;
        let a = 0.5 * (xj - xi).norm();
        let mut shape = SMatrix::<f64, D, D>::zeros();
        for (k, e) in basis.iter().enumerate() {
            let semi = if k == 0 { a } else { delta };
            shape += (e * e.transpose()) / (semi * semi);
        }
        Ok(LosEllipsoid {
            center: (xi + xj) * 0.5,
            shape,
            major_axis_half_length: a,
            thickness: delta,
        })
    }

    /// Quadratic form `(p - center)^T shape (p - center)`.
    #[inline]
    pub fn level(&self, p: &SVector<f64, D>) -> f64 {
        let r = p - self.center;
        r.dot(&(self.shape * r))
    }
}

/// Orthonormal basis with the first vector along `xj - xi`. In the plane the
/// second vector is the first rotated by +90 degrees.
fn edge_basis<const D: usize>(
    xi: &SVector<f64, D>,
    xj: &SVector<f64, D>,
) -> Result<Vec<SVector<f64, D>>, GeometryError> {
    let dir = xj - xi;
    let len = dir.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(GeometryError::DegenerateEdge(
            "edge endpoints coincide".into(),
        ));
    }
    let e1 = dir / len;
    let mut basis = vec![e1];
    if D == 2 {
        let mut e2 = SVector::<f64, D>::zeros();
        e2[0] = -e1[1];
        e2[1] = e1[0];
        basis.push(e2);
        return Ok(basis);
    }
    for k in 0..D {
        if basis.len() == D {
            break;
        }
        let mut v = SVector::<f64, D>::zeros();
        v[k] = 1.0;
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let n = v.norm();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    Ok(basis)
}

/// The 2d generating points of an edge ellipsoid: both endpoints, then the
/// pair `center +/- delta * e_p` for each direction orthogonal to the edge.
pub fn mvee_points<const D: usize>(
    xi: &SVector<f64, D>,
    xj: &SVector<f64, D>,
    delta: f64,
) -> Result<Vec<SVector<f64, D>>, GeometryError> {
    if !(delta > 0.0) {
        return Err(GeometryError::DegenerateEdge(format!(
            "thickness must be positive, got {delta}"
        )));
    }
    let basis = edge_basis(xi, xj)?;
    let center = (xi + xj) * 0.5;
    let mut pts = Vec::with_capacity(2 * D);
    pts.push(*xi);
    pts.push(*xj);
    for e in &basis[1..] {
        pts.push(center + e * delta);
        pts.push(center - e * delta);
    }
    Ok(pts)
}

/// Analytic minimum-volume ellipsoid through the points from [`mvee_points`].
/// Requires the edge to be longer than `2 * delta`.
pub fn mvee_closed_form<const D: usize>(
    xi: &SVector<f64, D>,
    xj: &SVector<f64, D>,
    delta: f64,
) -> Result<LosEllipsoid<D>, GeometryError> {
    let len = (xj - xi).norm();
    if !(len > 2.0 * delta) {
        return Err(GeometryError::DegenerateEdge(format!(
            "edge length {len} does not exceed twice the thickness {delta}"
        )));
    }
    LosEllipsoid::for_segment(xi, xj, delta)
}

/// Khachiyan's barycentric-weight iteration for the minimum-volume
/// enclosing ellipsoid of an arbitrary point set. Stops when the largest
/// lifted leverage exceeds `d + 1` by at most a relative `tolerance`.
pub fn mvee_khachiyan<const D: usize>(
    points: &[SVector<f64, D>],
    tolerance: f64,
) -> Result<LosEllipsoid<D>, GeometryError> {
    if !(tolerance > 0.0) {
        return Err(GeometryError::InvalidTolerance(tolerance));
    }
    let n = points.len();
    let rank_err = GeometryError::RankDeficient { points: n, dim: D };
    if n < D + 1 {
        return Err(rank_err);
    }
    let dp1 = (D + 1) as f64;
    let lifted = DMatrix::from_fn(D + 1, n, |r, c| if r < D { points[c][r] } else { 1.0 });
    let mut weights = DVector::from_element(n, 1.0 / n as f64);

    let moment = |w: &DVector<f64>| {
        let mut x = DMatrix::<f64>::zeros(D + 1, D + 1);
        for (k, q) in lifted.column_iter().enumerate() {
            x += w[k] * q * q.transpose();
        }
        x
    };

    // Affine independence: the uniform-weight lifted moment must be well conditioned.
    {
        let eig = moment(&weights).symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > 1e-12 * max) {
            return Err(rank_err);
        }
    }

    let mut iterations = 0;
    let mut residual;
    loop {
        let x = moment(&weights);
        let chol = x.cholesky().ok_or(GeometryError::RankDeficient { points: n, dim: D })?;
        let (mut up, mut up_val) = (0, f64::NEG_INFINITY);
        let (mut down, mut down_val) = (0, f64::INFINITY);
        for (k, q) in lifted.column_iter().enumerate() {
            let v = q.dot(&chol.solve(&q.into_owned()));
            if v > up_val {
                up = k;
                up_val = v;
            }
            if weights[k] > 0.0 && v < down_val {
                down = k;
                down_val = v;
            }
        }
        let gain = (up_val - dp1) / dp1;
        let loss = (dp1 - down_val) / dp1;
        residual = gain.max(loss);
        if residual <= tolerance {
            break;
        }
        if iterations >= KHACHIYAN_MAX_ITER {
            return Err(GeometryError::NotConverged {
                iterations,
                residual,
            });
        }
        // Toward step on the most outlying point, or away step on the most
        // interior supported point (Todd-Yildirim).
        let (k, val) = if gain >= loss { (up, up_val) } else { (down, down_val) };
        let mut step = (val - dp1) / (dp1 * (val - 1.0));
        if step < 0.0 {
            let wk = weights[k];
            step = step.max(-wk / (1.0 - wk));
        }
        weights *= 1.0 - step;
        weights[k] += step;
        if weights[k] < 0.0 {
            weights[k] = 0.0;
        }
        iterations += 1;
    }

    let mut center = SVector::<f64, D>::zeros();
    for (k, p) in points.iter().enumerate() {
        center += p * weights[k];
    }
    let mut scatter = SMatrix::<f64, D, D>::zeros();
    for (k, p) in points.iter().enumerate() {
        scatter += (p * p.transpose()) * weights[k];
    }
    scatter -= center * center.transpose();
    let inv = scatter.try_inverse().ok_or(rank_err)?;
    let mut shape = inv / D as f64;
    shape = (shape + shape.transpose()) * 0.5;

    // Scale so every input point is inside.
    let worst = points
        .iter()
        .map(|p| {
            let r = p - center;
            r.dot(&(shape * r))
        })
        .fold(0.0, f64::max);
    if worst > 1.0 {
        shape /= worst;
    }

    let eig = DMatrix::from_fn(D, D, |r, c| shape[(r, c)]).symmetric_eigen();
    Ok(LosEllipsoid {
        center,
        shape,
        major_axis_half_length: 1.0 / eig.eigenvalues.min().sqrt(),
        thickness: 1.0 / eig.eigenvalues.max().sqrt(),
    })
}
