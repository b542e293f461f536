//! The per-step control loop and whole-run recording.
//!
//! Each step builds the line-of-sight graph, picks a spanning tree by the
//! scenario's method, assembles the barrier rows for that tree, filters the
//! nominal controls through the QP and integrates one Euler step. Metrics are
//! evaluated on the state reached at the end of the step.

mod metrics;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{
    lambda2_los, laplacian_lambda2, los_adjacency, mean_perturbation, min_obstacle_distance,
    min_pairwise_distance, RunSummary, StepMetrics, LAMBDA2_ZERO,
};

use crate::barriers::{assemble_system, h_conn, h_los, AssemblyOptions, BarrierError};
use crate::behaviors::{
    circle_slot, unicycle_map, SiteKind, UnicycleState,
};
use crate::geometry::{LosEllipsoid, ObstacleField, Point};
use crate::qp::{self, QpError, QpProblem, SolverStatus};
use crate::scenario::{Dynamics, Method, Scenario, ScenarioError};
use crate::topology::{
    build_los_graph, fixed_mlccst_baseline, mccst_baseline, mlccst, verify_subgroup_connectivity,
    weigh_edges, SpanningTree, TopologyError, WeightScaling,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("spanning tree unavailable: {0}")]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("control filter failed: {0}")]
    Qp(#[from] QpError),
    #[error("{0}")]
    Geometry(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Number of completed steps.
    pub t: usize,
    /// Controlled points.
    pub positions: Vec<Point>,
    /// Unicycle headings; unused for single integrators.
    pub headings: Vec<f64>,
    /// Tree used on the previous step.
    pub tree: Option<SpanningTree>,
    /// Tree chosen on the first step, kept by the fixed method.
    pub initial_tree: Option<SpanningTree>,
}

/// Everything recorded for one step, as written to the trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: usize,
    pub x: Vec<Point>,
    pub u: Vec<Point>,
    pub u_nominal: Vec<Point>,
    pub tree: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_hash: String,
    pub initial: Vec<Point>,
    pub metrics: Vec<StepMetrics>,
    pub traces: Vec<StepTrace>,
    pub summary: RunSummary,
}

impl RunRecord {
    /// Initial positions followed by the positions after every step.
    pub fn positions(&self) -> Vec<&[Point]> {
        std::iter::once(self.initial.as_slice())
            .chain(self.traces.iter().map(|t| t.x.as_slice()))
            .collect()
    }
}

/// Where each robot is heading: a rendezvous point or its circle slot.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Goal {
    point: Point,
}

/// Precomputed scenario data shared by every step.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    field: ObstacleField,
    subgroups: Vec<usize>,
    goals: Vec<Option<Goal>>,
    pub assembly: AssemblyOptions,
    pub scaling: WeightScaling,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let field = scenario.obstacle_field().map_err(SimError::Geometry)?;
        let subgroups = scenario.subgroups();
        let mut goals = Vec::with_capacity(subgroups.len());
        for (i, &g) in subgroups.iter().enumerate() {
            let goal = scenario.site_for(g).map(|site| match site.kind {
                SiteKind::Rendezvous => Goal {
                    point: site.position,
                },
                SiteKind::Circle => {
                    let slot = subgroups[..i].iter().filter(|&&h| h == g).count();
                    let n_slots = subgroups.iter().filter(|&&h| h == g).count();
                    Goal {
                        point: circle_slot(site, slot, n_slots),
                    }
                }
            });
            goals.push(goal);
        }
        Ok(Simulator {
            scenario: scenario.clone(),
            field,
            subgroups,
            goals,
            assembly: AssemblyOptions {
                skip_los: scenario.method == Method::Mccst,
                range_margin: scenario.conn_margin,
                los_derivative: scenario.los_derivative,
                ..AssemblyOptions::default()
            },
            scaling: WeightScaling::Auto,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn field(&self) -> &ObstacleField {
        &self.field
    }

    pub fn subgroups(&self) -> &[usize] {
        &self.subgroups
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState {
            t: 0,
            positions: self.scenario.positions(),
            headings: self.scenario.robots.iter().map(|r| r.heading).collect(),
            tree: None,
            initial_tree: None,
        }
    }

    /// Goal point of every robot, if its subgroup has a site.
    pub fn goal_points(&self) -> Vec<Option<Point>> {
        self.goals.iter().map(|g| g.map(|g| g.point)).collect()
    }

    /// Nominal behavior controls; the circle behavior is the proportional
    /// pull toward the robot's slot, the same law as rendezvous.
    pub fn nominal(&self, positions: &[Point]) -> Vec<Point> {
        let cap = self.scenario.params.u_max;
        positions
            .iter()
            .zip(&self.goals)
            .map(|(x, goal)| match goal {
                Some(g) => {
                    let v = (g.point - x) * self.scenario.gain;
                    let norm = v.norm();
                    if norm > cap {
                        v * (cap / norm)
                    } else {
                        v
                    }
                }
                None => Point::zeros(),
            })
            .collect()
    }

    fn choose_tree(
        &self,
        state: &WorldState,
        nominal: &[Point],
    ) -> Result<(SpanningTree, Option<SpanningTree>, Option<String>), SimError> {
        let s = &self.scenario;
        let x = &state.positions;
        let dynamic = |method: Method| -> Result<SpanningTree, TopologyError> {
            match method {
                Method::Mccst => {
                    mccst_baseline(x, &self.subgroups, nominal, &s.params, self.scaling).map(|(t, _)| t)
                }
                _ => {
                    let g = build_los_graph(x, &self.subgroups, &self.field, &s.params)?;
                    let g = weigh_edges(g, x, nominal, &self.field, &s.params, self.scaling)?;
                    mlccst(&g)
                }
            }
        };
        if s.method == Method::Fixed {
            let initial = match &state.initial_tree {
                Some(t) => t.clone(),
                None => dynamic(Method::Mlccst)?,
            };
            return Ok((fixed_mlccst_baseline(&initial), Some(initial), None));
        }
        match dynamic(s.method) {
            Ok(tree) => {
                let initial = state.initial_tree.clone().or_else(|| Some(tree.clone()));
                Ok((tree, initial, None))
            }
            Err(e) => match &state.tree {
                Some(previous) => {
                    log::warn!("step {}: keeping previous tree ({e})", state.t + 1);
                    Ok((previous.clone(), state.initial_tree.clone(), Some(e.to_string())))
                }
                None => Err(e.into()),
            },
        }
    }

    /// Advances one step: tree selection, constraint assembly, QP, Euler
    /// integration, then metrics on the new state.
    pub fn step(&self, state: &WorldState) -> Result<(WorldState, StepMetrics, StepTrace), SimError> {
        let s = &self.scenario;
        let started = Instant::now();
        let nominal = self.nominal(&state.positions);
        let (tree, initial_tree, tree_error) = self.choose_tree(state, &nominal)?;

        let ellipsoids = if self.assembly.skip_los {
            Vec::new()
        } else {
            tree_ellipsoids(&state.positions, &tree, s.params.delta)?
        };
        let system = assemble_system(
            &state.positions,
            &self.field,
            &tree.edges,
            &ellipsoids,
            &s.params,
            &self.assembly,
        )?;
        let problem = QpProblem {
            target: nominal.clone(),
            system,
            component_bound: s.params.component_bound(),
        };
        let solution = qp::solve(&problem, &s.qp)?;
        let step_wall_time = started.elapsed().as_secs_f64();

        let u = solution.u;
        let (positions, headings) = self.integrate(state, &u);
        let t = state.t + 1;
        let mut metrics = self.compute_metrics(t, &positions, &u, &nominal, &tree);
        metrics.solver_status = solution.status;
        metrics.qp_iterations = solution.iterations;
        metrics.step_wall_time = step_wall_time;
        metrics.tree_error = tree_error;
        if solution.status != SolverStatus::Optimal {
            log::warn!("step {t}: control filter returned {}", solution.status.as_str());
        }

        let trace = StepTrace {
            t,
            x: positions.clone(),
            u,
            u_nominal: nominal,
            tree: tree.edges.clone(),
        };
        let next = WorldState {
            t,
            positions,
            headings,
            tree: Some(tree),
            initial_tree,
        };
        Ok((next, metrics, trace))
    }

    fn integrate(&self, state: &WorldState, u: &[Point]) -> (Vec<Point>, Vec<f64>) {
        let dt = self.scenario.dt;
        match self.scenario.dynamics {
            Dynamics::SingleIntegrator => (
                state.positions.iter().zip(u).map(|(x, u)| x + u * dt).collect(),
                state.headings.clone(),
            ),
            Dynamics::Unicycle => {
                let l = self.scenario.lookahead;
                let mut positions = Vec::with_capacity(u.len());
                let mut headings = Vec::with_capacity(u.len());
                for ((x, &theta), ui) in state.positions.iter().zip(&state.headings).zip(u) {
                    let dir = Point::new(theta.cos(), theta.sin());
                    let base = x - dir * l;
                    let st = UnicycleState {
                        position: base,
                        heading: theta,
                        lookahead: l,
                    };
                    let (v, omega) = unicycle_map(ui, &st);
                    let base = base + dir * (v * dt);
                    let theta = theta + omega * dt;
                    let moved = UnicycleState {
                        position: base,
                        heading: theta,
                        lookahead: l,
                    };
                    positions.push(moved.control_point());
                    headings.push(theta);
                }
                (positions, headings)
            }
        }
    }

    /// Metrics that depend only on the recorded state, controls and tree.
    /// Solver status, iteration count, wall time and tree errors are left at
    /// neutral values for the caller to fill in.
    pub fn compute_metrics(
        &self,
        t: usize,
        positions: &[Point],
        u: &[Point],
        nominal: &[Point],
        tree: &SpanningTree,
    ) -> StepMetrics {
        let p = &self.scenario.params;
        let adj = los_adjacency(positions, &self.field, p.r_c);
        let lambda2 = laplacian_lambda2(&adj);
        let los_subgroup_connected = metrics::subgroups_connected(&adj, &self.subgroups);

        let (mut dist_sum, mut with_goal) = (0.0, 0usize);
        for (x, g) in positions.iter().zip(&self.goals) {
            if let Some(g) = g {
                dist_sum += (g.point - x).norm();
                with_goal += 1;
            }
        }
        let d_avg_target = if with_goal == 0 {
            0.0
        } else {
            dist_sum / with_goal as f64
        };

        let mut min_tree_h_conn = f64::INFINITY;
        let mut min_tree_h_los = f64::INFINITY;
        for &(i, j) in &tree.edges {
            let (xi, xj) = (&positions[i], &positions[j]);
            min_tree_h_conn = min_tree_h_conn.min(h_conn(xi, xj, p));
            if self.scenario.method.maintains_los() {
                match LosEllipsoid::for_segment(xi, xj, p.delta) {
                    Ok(ell) => {
                        for xo in &self.field.discretized {
                            min_tree_h_los = min_tree_h_los.min(h_los(&ell, xo));
                        }
                    }
                    Err(_) => min_tree_h_los = f64::NEG_INFINITY,
                }
            }
        }

        StepMetrics {
            t,
            d_min_robot: min_pairwise_distance(positions),
            d_min_obstacle: min_obstacle_distance(positions, &self.field),
            d_avg_target,
            lambda2,
            perturbation: mean_perturbation(u, nominal),
            tree_edges: tree.edges.clone(),
            solver_status: SolverStatus::Optimal,
            qp_iterations: 0,
            step_wall_time: 0.0,
            los_subgroup_connected,
            tree_subgroup_connected: verify_subgroup_connectivity(tree, &self.subgroups),
            min_tree_h_conn,
            min_tree_h_los,
            tree_error: None,
        }
    }

    /// Runs every step, stopping early only on an unrecoverable error, which
    /// is reported in the summary.
    pub fn run(&self) -> RunRecord {
        self.run_with(|_, _| {})
    }

    /// Like [`Simulator::run`], calling `observe` after every step.
    pub fn run_with(&self, mut observe: impl FnMut(&StepMetrics, &StepTrace)) -> RunRecord {
        let s = &self.scenario;
        let mut state = self.initial_state();
        let mut metrics = Vec::with_capacity(s.steps);
        let mut traces = Vec::with_capacity(s.steps);
        let mut aborted = None;
        for _ in 0..s.steps {
            match self.step(&state) {
                Ok((next, m, trace)) => {
                    if m.lambda2 <= LAMBDA2_ZERO && metrics.iter().all(|p: &StepMetrics| p.lambda2 > LAMBDA2_ZERO) {
                        log::warn!("step {}: line-of-sight graph disconnected ({} method)", m.t, s.method);
                    }
                    observe(&m, &trace);
                    metrics.push(m);
                    traces.push(trace);
                    state = next;
                }
                Err(e) => {
                    log::error!("run stopped after {} steps: {e}", state.t);
                    aborted = Some(format!("step {}: {e}", state.t + 1));
                    break;
                }
            }
        }
        let hash = s.hash();
        let summary = metrics::summarize(
            hash.clone(),
            s.method,
            s.robots.len(),
            s.steps,
            &s.params,
            s.dt,
            &metrics,
            aborted,
        );
        RunRecord {
            scenario_hash: hash,
            initial: s.positions(),
            metrics,
            traces,
            summary,
        }
    }
}

fn tree_ellipsoids(x: &[Point], tree: &SpanningTree, delta: f64) -> Result<Vec<LosEllipsoid>, SimError> {
    tree.edges
        .iter()
        .map(|&(i, j)| {
            LosEllipsoid::for_segment(&x[i], &x[j], delta)
                .map_err(|e| SimError::Geometry(format!("tree edge ({i}, {j}): {e}")))
        })
        .collect()
}

/// Validates and runs a scenario.
pub fn run(scenario: &Scenario) -> Result<RunRecord, SimError> {
    Ok(Simulator::new(scenario)?.run())
}
