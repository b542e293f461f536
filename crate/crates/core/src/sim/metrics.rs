use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::barriers::BarrierParams;
use crate::geometry::{segment_occluded, ObstacleField, Point};
use crate::qp::SolverStatus;
use crate::scenario::Method;
use crate::topology::DisjointSets;

/// Below this, the second Laplacian eigenvalue counts as zero.
pub const LAMBDA2_ZERO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub t: usize,
    pub d_min_robot: f64,
    pub d_min_obstacle: f64,
    pub d_avg_target: f64,
    pub lambda2: f64,
    /// Mean squared control change `(1/N) sum ||u_i - u_hat_i||^2`.
    pub perturbation: f64,
    pub tree_edges: Vec<(usize, usize)>,
    pub solver_status: SolverStatus,
    pub qp_iterations: usize,
    /// Wall time of graph, tree, assembly and QP for this step (s).
    pub step_wall_time: f64,
    /// Every subgroup's own line-of-sight subgraph is connected.
    pub los_subgroup_connected: bool,
    /// The tree used this step passes the subgroup connectivity check.
    pub tree_subgroup_connected: bool,
    /// Smallest range barrier over tree edges after the step.
    pub min_tree_h_conn: f64,
    /// Smallest line-of-sight barrier over tree edges and obstacle points
    /// after the step (infinite when not tracked).
    pub min_tree_h_los: f64,
    /// Set when the tree could not be recomputed and the previous one was kept.
    pub tree_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_hash: String,
    pub method: Method,
    pub n_robots: usize,
    pub steps_requested: usize,
    pub steps_completed: usize,
    /// The line-of-sight graph lost connectivity at some step.
    pub disconnected: bool,
    pub first_disconnect_step: Option<usize>,
    pub subgroup_disconnected: bool,
    pub tree_errors: usize,
    pub fallback_steps: usize,
    pub min_d_robot: f64,
    pub min_d_obstacle: f64,
    pub min_lambda2: f64,
    pub min_tree_h_conn: f64,
    pub min_tree_h_los: f64,
    pub mean_perturbation: f64,
    pub mean_step_wall_time: f64,
    pub max_step_wall_time: f64,
    pub final_d_avg_target: f64,
    /// Discrete-time slack `2 u_max dt` applied to the invariant checks.
    pub tol_int: f64,
    pub safety_ok: bool,
    pub connectivity_ok: bool,
    pub violations: Vec<String>,
    pub aborted: Option<String>,
}

impl RunSummary {
    pub fn invariants_hold(&self) -> bool {
        self.aborted.is_none() && self.violations.is_empty()
    }
}

/// 0/1 adjacency of the line-of-sight graph: in range and not occluded.
pub fn los_adjacency(states: &[Point], field: &ObstacleField, r_c: f64) -> Vec<Vec<usize>> {
    let n = states.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if (states[i] - states[j]).norm() <= r_c && !segment_occluded(&states[i], &states[j], field) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

/// Second-smallest eigenvalue of the graph Laplacian `D - A`.
pub fn laplacian_lambda2(adj: &[Vec<usize>]) -> f64 {
    let n = adj.len();
    if n < 2 {
        return 0.0;
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for (i, nbrs) in adj.iter().enumerate() {
        for &j in nbrs {
            l[(i, j)] -= 1.0;
            l[(i, i)] += 1.0;
        }
    }
    let mut eig: Vec<f64> = l.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig[1]
}

pub fn lambda2_los(states: &[Point], field: &ObstacleField, params: &BarrierParams) -> f64 {
    laplacian_lambda2(&los_adjacency(states, field, params.r_c))
}

pub(crate) fn subgroups_connected(adj: &[Vec<usize>], subgroups: &[usize]) -> bool {
    let mut sets = DisjointSets::new(adj.len());
    for (i, nbrs) in adj.iter().enumerate() {
        for &j in nbrs {
            if subgroups[i] == subgroups[j] {
                sets.union(i, j);
            }
        }
    }
    let mut first: std::collections::BTreeMap<usize, usize> = Default::default();
    for (i, &g) in subgroups.iter().enumerate() {
        let r = sets.find(i);
        if *first.entry(g).or_insert(r) != r {
            return false;
        }
    }
    true
}

pub fn min_pairwise_distance(states: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            best = best.min((states[i] - states[j]).norm());
        }
    }
    best
}

pub fn min_obstacle_distance(states: &[Point], field: &ObstacleField) -> f64 {
    states
        .iter()
        .map(|x| field.nearest_point_distance(x))
        .fold(f64::INFINITY, f64::min)
}

pub fn mean_perturbation(u: &[Point], u_nominal: &[Point]) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    u.iter()
        .zip(u_nominal)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        / u.len() as f64
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn summarize(
    scenario_hash: String,
    method: Method,
    n_robots: usize,
    steps_requested: usize,
    params: &BarrierParams,
    dt: f64,
    metrics: &[StepMetrics],
    aborted: Option<String>,
) -> RunSummary {
    let tol_int = 2.0 * params.u_max * dt;
    let fold_min = |f: fn(&StepMetrics) -> f64| metrics.iter().map(f).fold(f64::INFINITY, f64::min);
    let min_d_robot = fold_min(|m| m.d_min_robot);
    let min_d_obstacle = fold_min(|m| m.d_min_obstacle);
    let min_lambda2 = fold_min(|m| m.lambda2);
    let min_tree_h_conn = fold_min(|m| m.min_tree_h_conn);
    let min_tree_h_los = fold_min(|m| m.min_tree_h_los);
    let first_disconnect_step = metrics.iter().find(|m| m.lambda2 <= LAMBDA2_ZERO).map(|m| m.t);
    let subgroup_disconnected = metrics.iter().any(|m| !m.los_subgroup_connected);
    let k = metrics.len().max(1) as f64;

    let mut violations = Vec::new();
    if min_d_robot < params.r_s - tol_int {
        violations.push(format!(
            "inter-robot distance {min_d_robot:.5} m dropped below R_s - tol_int = {:.5} m",
            params.r_s - tol_int
        ));
    }
    if min_d_obstacle < params.r_obs - tol_int {
        violations.push(format!(
            "robot-obstacle distance {min_d_obstacle:.5} m dropped below R_obs - tol_int = {:.5} m",
            params.r_obs - tol_int
        ));
    }
    let safety_ok = violations.is_empty();
    let safety_violations = violations.len();
    if method.maintains_los() {
        if let Some(t) = first_disconnect_step {
            violations.push(format!("line-of-sight graph disconnected at step {t}"));
        }
        if subgroup_disconnected {
            violations.push("a subgroup lost internal line-of-sight connectivity".into());
        }
        if metrics.iter().any(|m| !m.tree_subgroup_connected) {
            violations.push("a spanning tree failed the subgroup connectivity check".into());
        }
        if min_tree_h_conn < -tol_int {
            violations.push(format!("tree range barrier reached {min_tree_h_conn:.5}"));
        }
        if min_tree_h_los < -tol_int {
            violations.push(format!("tree line-of-sight barrier reached {min_tree_h_los:.5}"));
        }
    }
    let connectivity_ok = violations.len() == safety_violations;

    RunSummary {
        scenario_hash,
        method,
        n_robots,
        steps_requested,
        steps_completed: metrics.len(),
        disconnected: first_disconnect_step.is_some(),
        first_disconnect_step,
        subgroup_disconnected,
        tree_errors: metrics.iter().filter(|m| m.tree_error.is_some()).count(),
        fallback_steps: metrics
            .iter()
            .filter(|m| m.solver_status != SolverStatus::Optimal)
            .count(),
        min_d_robot,
        min_d_obstacle,
        min_lambda2,
        min_tree_h_conn,
        min_tree_h_los,
        mean_perturbation: metrics.iter().map(|m| m.perturbation).sum::<f64>() / k,
        mean_step_wall_time: metrics.iter().map(|m| m.step_wall_time).sum::<f64>() / k,
        max_step_wall_time: metrics.iter().map(|m| m.step_wall_time).fold(0.0, f64::max),
        final_d_avg_target: metrics.last().map_or(f64::NAN, |m| m.d_avg_target),
        tol_int,
        safety_ok,
        connectivity_ok,
        violations,
        aborted,
    }
}
