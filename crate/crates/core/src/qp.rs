//! Minimally invasive control filter: the projection of the stacked nominal
//! control onto the polyhedron cut out by the barrier rows and the speed box,
//!
//! ```text
//! minimize  sum_i ||u_i - u_hat_i||^2   s.t.  A u <= b,  |u_ik| <= c
//! ```
//!
//! The Hessian is the identity, so the Goldfarb-Idnani dual active-set method
//! starts from the unconstrained optimum `u = u_hat` and only ever factors the
//! (small) set of active normals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::ConstraintSystem;
use crate::geometry::Point;

const DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Nominal per-robot controls.
    pub target: Vec<Point>,
    pub system: ConstraintSystem,
    /// Symmetric per-component bound `|u_ik| <= component_bound`.
    pub component_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    FallbackZero,
    MaxIter,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::FallbackZero => "fallback_zero",
            SolverStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<Point>,
    pub status: SolverStatus,
    /// Largest violation of any row or box bound at `u`.
    pub max_violation: f64,
    pub iterations: usize,
    /// One multiplier per system row.
    pub multipliers: Vec<f64>,
    /// Multipliers of `u_k >= -c` for each stacked component.
    pub box_lower: Vec<f64>,
    /// Multipliers of `u_k <= c` for each stacked component.
    pub box_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("no solution found and u = 0 violates the constraints by {max_violation:e}")]
    FallbackInfeasible { max_violation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

/// Sparse constraint `n . x >= b` in the solver's internal orientation.
struct Normal {
    entries: Vec<(usize, f64)>,
    rhs: f64,
    norm: f64,
}

impl Normal {
    fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(k, v)| v * x[k]).sum()
    }
}

enum Outcome {
    Solved,
    Infeasible,
    IterationLimit,
}

/// Dense Goldfarb-Idnani state for an identity Hessian.
struct DualActiveSet<'a> {
    n: usize,
    normals: &'a [Normal],
    x: Vec<f64>,
    /// Orthogonal, column-major: `j[col * n + row]`.
    j: Vec<f64>,
    /// Upper triangular, column-major with stride `n`.
    r: Vec<f64>,
    active: Vec<usize>,
    mult: Vec<f64>,
    iterations: usize,
}

impl<'a> DualActiveSet<'a> {
    fn new(target: Vec<f64>, normals: &'a [Normal]) -> Self {
        let n = target.len();
        let mut j = vec![0.0; n * n];
        for k in 0..n {
            j[k * n + k] = 1.0;
        }
        DualActiveSet {
            n,
            normals,
            x: target,
            j,
            r: vec![0.0; n * n],
            active: Vec::new(),
            mult: Vec::new(),
            iterations: 0,
        }
    }

    fn q(&self) -> usize {
        self.active.len()
    }

    fn jt_times(&self, c: &Normal) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|col| {
                let base = col * n;
                c.entries.iter().map(|&(k, v)| self.j[base + k] * v).sum()
            })
            .collect()
    }

    fn rotate_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let n = self.n;
        for row in 0..n {
            let ja = self.j[a * n + row];
            let jb = self.j[b * n + row];
            self.j[a * n + row] = c * ja + s * jb;
            self.j[b * n + row] = -s * ja + c * jb;
        }
    }

    /// Most violated inactive constraint, by violation scaled with the normal length.
    fn most_violated(&self) -> Option<usize> {
        let xnorm = self.x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut best = None;
        let mut worst = 0.0;
        for (k, c) in self.normals.iter().enumerate() {
            if c.norm == 0.0 {
                continue;
            }
            let s = c.dot(&self.x) - c.rhs;
            let guard = 1e-11 * (1.0 + c.norm * xnorm + c.rhs.abs());
            if s < -guard {
                let scaled = s / c.norm;
                if scaled < worst && !self.active.contains(&k) {
                    worst = scaled;
                    best = Some(k);
                }
            }
        }
        best
    }

    fn solve(&mut self, max_iter: usize) -> Outcome {
        let n = self.n;
        loop {
            let Some(p) = self.most_violated() else {
                return Outcome::Solved;
            };
            let np = &self.normals[p];
            let mut up = 0.0;
            loop {
                self.iterations += 1;
                if self.iterations > max_iter {
                    return Outcome::IterationLimit;
                }
                let q = self.q();
                let d = self.jt_times(np);
                // Primal direction z = J2 d2, dual direction r = R^-1 d1.
                let mut z = vec![0.0; n];
                for col in q..n {
                    let dc = d[col];
                    if dc != 0.0 {
                        let base = col * n;
                        for (row, zr) in z.iter_mut().enumerate() {
                            *zr += dc * self.j[base + row];
                        }
                    }
                }
                let mut rdir = vec![0.0; q];
                for row in (0..q).rev() {
                    let mut acc = d[row];
                    for col in (row + 1)..q {
                        acc -= self.r[col * n + row] * rdir[col];
                    }
                    rdir[row] = acc / self.r[row * n + row];
                }

                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for k in 0..q {
                    if rdir[k] > 0.0 {
                        let t = self.mult[k] / rdir[k];
                        if t < t1 {
                            t1 = t;
                            drop = Some(k);
                        }
                    }
                }
                let ztn = np.dot(&z);
                let dependent = ztn <= 1e-13 * np.norm * np.norm;
                let t2 = if dependent {
                    f64::INFINITY
                } else {
                    let s = np.dot(&self.x) - np.rhs;
                    (-s / ztn).max(0.0)
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Outcome::Infeasible;
                }
                if !dependent {
                    for (xr, zr) in self.x.iter_mut().zip(&z) {
                        *xr += t * zr;
                    }
                }
                for k in 0..q {
                    self.mult[k] -= t * rdir[k];
                }
                up += t;
                if t2 <= t1 {
                    self.add(p, d, up);
                    break;
                }
                let l = drop.expect("partial step always names a constraint");
                self.drop_active(l);
            }
        }
    }

    fn add(&mut self, p: usize, mut d: Vec<f64>, multiplier: f64) {
        let n = self.n;
        let q = self.q();
        for k in ((q + 1)..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_columns(k - 1, k, c, s);
        }
        for row in 0..=q {
            self.r[q * n + row] = d[row];
        }
        self.active.push(p);
        self.mult.push(multiplier);
    }

    fn drop_active(&mut self, l: usize) {
        let n = self.n;
        let q = self.q();
        for col in l..(q - 1) {
            for row in 0..q {
                self.r[col * n + row] = self.r[(col + 1) * n + row];
            }
        }
        for row in 0..n {
            self.r[(q - 1) * n + row] = 0.0;
        }
        self.active.remove(l);
        self.mult.remove(l);
        let q = q - 1;
        // Restore triangularity of the Hessenberg block.
        for col in l..q {
            let a = self.r[col * n + col];
            let b = self.r[col * n + col + 1];
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for k in col..q {
                let ra = self.r[k * n + col];
                let rb = self.r[k * n + col + 1];
                self.r[k * n + col] = c * ra + s * rb;
                self.r[k * n + col + 1] = -s * ra + c * rb;
            }
            self.r[col * n + col + 1] = 0.0;
            self.rotate_columns(col, col + 1, c, s);
        }
    }
}

fn validate(problem: &QpProblem) -> Result<(), QpError> {
    let n = problem.target.len();
    let sys = &problem.system;
    if sys.n_robots != n {
        return Err(QpError::Dimension(format!(
            "system has {} robots but target has {n}",
            sys.n_robots
        )));
    }
    if sys.dim != DIM {
        return Err(QpError::Dimension(format!("unsupported dimension {}", sys.dim)));
    }
    if !(problem.component_bound >= 0.0) {
        return Err(QpError::Dimension(format!(
            "component bound must be non-negative, got {}",
            problem.component_bound
        )));
    }
    for (k, row) in sys.rows.iter().enumerate() {
        if let Some((r, _)) = row.coefficients.iter().find(|(r, _)| *r >= n) {
            return Err(QpError::Dimension(format!("row {k} references robot {r}")));
        }
    }
    Ok(())
}

fn stack(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn unstack(x: &[f64]) -> Vec<Point> {
    x.chunks(DIM).map(|c| Point::new(c[0], c[1])).collect()
}

/// Largest row or box violation of `u`.
pub fn max_violation(problem: &QpProblem, u: &[Point]) -> f64 {
    let c = problem.component_bound;
    let boxed = u
        .iter()
        .flat_map(|p| [p.x, p.y])
        .map(|v| (v.abs() - c).max(0.0))
        .fold(0.0, f64::max);
    boxed.max(problem.system.max_violation(u))
}

/// Solves the filter QP. On failure to converge, returns `u = 0` flagged as
/// a fallback; that is only an error if `u = 0` itself is infeasible.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    if !(settings.tol > 0.0) {
        return Err(QpError::InvalidTolerance(settings.tol));
    }
    validate(problem)?;
    let n_robots = problem.target.len();
    let n = n_robots * DIM;
    let c = problem.component_bound;
    let rows = &problem.system.rows;

    let mut normals: Vec<Normal> = Vec::with_capacity(rows.len() + 2 * n);
    for row in rows {
        let entries: Vec<(usize, f64)> = row
            .coefficients
            .iter()
            .flat_map(|(r, a)| [(r * DIM, -a.x), (r * DIM + 1, -a.y)])
            .filter(|&(_, v)| v != 0.0)
            .collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        normals.push(Normal {
            entries,
            rhs: -row.bound,
            norm,
        });
    }
    for k in 0..n {
        normals.push(Normal {
            entries: vec![(k, 1.0)],
            rhs: -c,
            norm: 1.0,
        });
        normals.push(Normal {
            entries: vec![(k, -1.0)],
            rhs: -c,
            norm: 1.0,
        });
    }

    let mut solver = DualActiveSet::new(stack(&problem.target), &normals);
    let outcome = solver.solve(settings.max_iter);

    let mut multipliers = vec![0.0; rows.len()];
    let mut box_lower = vec![0.0; n];
    let mut box_upper = vec![0.0; n];
    for (&k, &m) in solver.active.iter().zip(&solver.mult) {
        if k < rows.len() {
            multipliers[k] = m;
        } else {
            let b = k - rows.len();
            if b.is_multiple_of(2) {
                box_lower[b / 2] = m;
            } else {
                box_upper[b / 2] = m;
            }
        }
    }
    let u = unstack(&solver.x);
    let violation = max_violation(problem, &u);

    let status = match outcome {
        Outcome::Solved if violation <= settings.tol => SolverStatus::Optimal,
        Outcome::IterationLimit => SolverStatus::MaxIter,
        _ => SolverStatus::FallbackZero,
    };
    if status == SolverStatus::Optimal {
        return Ok(QpSolution {
            u,
            status,
            max_violation: violation,
            iterations: solver.iterations,
            multipliers,
            box_lower,
            box_upper,
        });
    }

    let zero = vec![Point::zeros(); n_robots];
    let zero_violation = max_violation(problem, &zero);
    let bounds_nonnegative = rows.iter().all(|r| r.bound >= 0.0);
    assert!(
        !bounds_nonnegative || zero_violation == 0.0,
        "u = 0 must satisfy rows with non-negative bounds"
    );
    if zero_violation > settings.tol {
        return Err(QpError::FallbackInfeasible {
            max_violation: zero_violation,
        });
    }
    log::debug!(
        "qp fell back to zero control after {} iterations ({status:?})",
        solver.iterations
    );
    Ok(QpSolution {
        u: zero,
        status,
        max_violation: zero_violation,
        iterations: solver.iterations,
        multipliers: vec![0.0; rows.len()],
        box_lower: vec![0.0; n],
        box_upper: vec![0.0; n],
    })
}

/// Independent first-order optimality check of a solution. Fallback
/// solutions are only checked for primal feasibility.
pub fn verify_kkt(problem: &QpProblem, solution: &QpSolution, tol: f64) -> bool {
    let u = &solution.u;
    if u.len() != problem.target.len() || max_violation(problem, u) > tol {
        return false;
    }
    if solution.status != SolverStatus::Optimal {
        return true;
    }
    let rows = &problem.system.rows;
    let n = u.len() * DIM;
    if solution.multipliers.len() != rows.len()
        || solution.box_lower.len() != n
        || solution.box_upper.len() != n
    {
        return false;
    }
    let all_mult = solution
        .multipliers
        .iter()
        .chain(&solution.box_lower)
        .chain(&solution.box_upper);
    if all_mult.clone().any(|&m| m < -tol) {
        return false;
    }

    let c = problem.component_bound;
    let x = stack(u);
    for (row, &m) in rows.iter().zip(&solution.multipliers) {
        if (m * (row.apply(u) - row.bound)).abs() > tol {
            return false;
        }
    }
    for k in 0..n {
        if (solution.box_lower[k] * (x[k] + c)).abs() > tol
            || (solution.box_upper[k] * (c - x[k])).abs() > tol
        {
            return false;
        }
    }

    // Gradient of the Lagrangian: (u - u_hat) + A^T lambda + box terms.
    let mut grad: Vec<f64> = x
        .iter()
        .zip(stack(&problem.target))
        .map(|(a, b)| a - b)
        .collect();
    for (row, &m) in rows.iter().zip(&solution.multipliers) {
        if m == 0.0 {
            continue;
        }
        for (r, a) in &row.coefficients {
            grad[r * DIM] += m * a.x;
            grad[r * DIM + 1] += m * a.y;
        }
    }
    for k in 0..n {
        grad[k] += solution.box_upper[k] - solution.box_lower[k];
    }
    grad.iter().all(|g| g.abs() <= tol)
}
