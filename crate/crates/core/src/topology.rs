//! Line-of-sight communication graph, edge scoring and spanning-tree
//! selection.
//!
//! Every step the team picks one spanning tree whose edges become the only
//! enforced connectivity constraints. Edges are scored by how comfortably
//! their range and line-of-sight barriers hold under the nominal controls,
//! intra-subgroup edges are boosted by a factor `lambda`, and edges whose
//! ellipsoid already contains an obstacle point get the penalty `epsilon`.
//! The tree is then the maximum spanning tree of the boosted weights.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{h_conn, h_los, hdot_conn, hdot_los, BarrierParams};
use crate::geometry::{segment_occluded, GeometryError, LosEllipsoid, ObstacleField, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosEdge {
    pub i: usize,
    pub j: usize,
    pub ellipsoid: LosEllipsoid,
    pub w_d: f64,
    pub w_los: f64,
    pub w_dlos: f64,
    /// Weight used by the tree search: the subgroup-boosted `w_dlos`.
    pub w_prime: f64,
    /// Some obstacle point lies inside the edge's ellipsoid.
    pub occluded_ellipsoid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedLosGraph {
    pub n_robots: usize,
    /// Subgroup id of every robot.
    pub subgroups: Vec<usize>,
    pub edges: Vec<LosEdge>,
    pub epsilon: f64,
    pub lambda: f64,
}

impl WeightedLosGraph {
    pub fn same_subgroup(&self, e: &LosEdge) -> bool {
        self.subgroups[e.i] == self.subgroups[e.j]
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningTree {
    /// Edges `(i, j)` with `i < j`, in the order they were accepted.
    pub edges: Vec<(usize, usize)>,
    /// Sum of `w_prime` over the tree.
    pub total_weight: f64,
}

/// How `lambda` and `epsilon` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WeightScaling {
    /// Recalibrated from the realized weights on every call.
    #[default]
    Auto,
    /// Caller-supplied constants; weights are used unshifted and the ordering
    /// requirements are checked.
    Fixed { lambda: f64, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("graph is disconnected into {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("edge weight ordering violated: {0}")]
    WeightOrdering(String),
    #[error("robots {i} and {j} share a position")]
    CoincidentRobots { i: usize, j: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Members of every set, each sorted, ordered by smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for x in 0..n {
            let r = self.find(x);
            by_root[r].push(x);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
        out.sort_by_key(|c| c[0]);
        out
    }
}

fn check_lengths(states: &[Point], subgroups: &[usize]) -> Result<(), TopologyError> {
    if states.len() != subgroups.len() {
        return Err(TopologyError::Dimension(format!(
            "{} states but {} subgroup labels",
            states.len(),
            subgroups.len()
        )));
    }
    Ok(())
}

fn build_graph(
    states: &[Point],
    subgroups: &[usize],
    field: Option<&ObstacleField>,
    params: &BarrierParams,
) -> Result<WeightedLosGraph, TopologyError> {
    check_lengths(states, subgroups)?;
    let n = states.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (xi, xj) = (&states[i], &states[j]);
            let dist = (xi - xj).norm();
            if dist > params.r_c {
                continue;
            }
            if field.is_some_and(|f| segment_occluded(xi, xj, f)) {
                continue;
            }
            let ellipsoid = LosEllipsoid::for_segment(xi, xj, params.delta).map_err(|e| match e {
                GeometryError::DegenerateEdge(_) => TopologyError::CoincidentRobots { i, j },
                other => TopologyError::Dimension(other.to_string()),
            })?;
            edges.push(LosEdge {
                i,
                j,
                ellipsoid,
                w_d: 0.0,
                w_los: 0.0,
                w_dlos: 0.0,
                w_prime: 0.0,
                occluded_ellipsoid: false,
            });
        }
    }
    Ok(WeightedLosGraph {
        n_robots: n,
        subgroups: subgroups.to_vec(),
        edges,
        epsilon: 0.0,
        lambda: 1.0,
    })
}

/// Edges between every pair in range whose segment stays clear of obstacle
/// interiors. Weights are left at zero.
pub fn build_los_graph(
    states: &[Point],
    subgroups: &[usize],
    field: &ObstacleField,
    params: &BarrierParams,
) -> Result<WeightedLosGraph, TopologyError> {
    build_graph(states, subgroups, Some(field), params)
}

/// Fills in all edge weights and the graph's `lambda` and `epsilon`.
pub fn weigh_edges(
    mut graph: WeightedLosGraph,
    states: &[Point],
    nominal: &[Point],
    field: &ObstacleField,
    params: &BarrierParams,
    scaling: WeightScaling,
) -> Result<WeightedLosGraph, TopologyError> {
    if states.len() != graph.n_robots || nominal.len() != graph.n_robots {
        return Err(TopologyError::Dimension(format!(
            "graph has {} robots, got {} states and {} nominal controls",
            graph.n_robots,
            states.len(),
            nominal.len()
        )));
    }
    let gamma = params.gamma;
    let f = field.discretized.len();
    for e in &mut graph.edges {
        let (xi, xj) = (&states[e.i], &states[e.j]);
        let (ui, uj) = (&nominal[e.i], &nominal[e.j]);
        e.w_d = hdot_conn(xi, xj, ui, uj) + gamma * h_conn(xi, xj, params);
        let mut sum = 0.0;
        let mut occluded = false;
        for xo in &field.discretized {
            let h = h_los(&e.ellipsoid, xo);
            occluded |= h < 0.0;
            sum += hdot_los(&e.ellipsoid, xo, ui, uj) + gamma * h;
        }
        e.w_los = if f == 0 { 0.0 } else { sum / f as f64 };
        e.occluded_ellipsoid = occluded;
    }
    apply_scaling(&mut graph, scaling)?;
    Ok(graph)
}

/// Sets `w_dlos` and `w_prime` from `w_d`, `w_los` and the occlusion flags.
pub fn apply_scaling(graph: &mut WeightedLosGraph, scaling: WeightScaling) -> Result<(), TopologyError> {
    let raw: Vec<Option<f64>> = graph
        .edges
        .iter()
        .map(|e| (!e.occluded_ellipsoid).then_some(e.w_d + e.w_los))
        .collect();
    let finite = raw.iter().flatten().all(|w| w.is_finite());
    if !finite {
        return Err(TopologyError::WeightOrdering("non-finite edge weight".into()));
    }

    let (lambda, epsilon, offset) = match scaling {
        WeightScaling::Fixed { lambda, epsilon } => (lambda, epsilon, 0.0),
        WeightScaling::Auto => {
            let min = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let max_abs = raw.iter().flatten().map(|w| w.abs()).fold(0.0, f64::max);
            let offset = if min.is_finite() && min < 1.0 { 1.0 - min } else { 0.0 };
            let shifted_max = raw.iter().flatten().map(|w| w + offset).fold(1.0, f64::max);
            let shifted_min = raw.iter().flatten().map(|w| w + offset).fold(f64::INFINITY, f64::min);
            let spread = if shifted_min.is_finite() { shifted_max / shifted_min } else { 1.0 };
            (1e3 * spread.max(1.0), -1e6 * (1.0 + max_abs + offset), offset)
        }
    };
    graph.lambda = lambda;
    graph.epsilon = epsilon;

    let subgroups = &graph.subgroups;
    for (e, w) in graph.edges.iter_mut().zip(&raw) {
        let intra = subgroups[e.i] == subgroups[e.j];
        let base = match w {
            Some(w) => {
                e.w_dlos = *w;
                w + offset
            }
            None => {
                e.w_dlos = epsilon;
                epsilon
            }
        };
        e.w_prime = if intra { lambda * base } else { base };
    }
    check_ordering(graph, offset)
}

/// Intra-subgroup weights above inter-subgroup weights above the occlusion
/// penalty, with the boosted penalty lowest of all.
fn check_ordering(graph: &WeightedLosGraph, offset: f64) -> Result<(), TopologyError> {
    let (lambda, epsilon) = (graph.lambda, graph.epsilon);
    if !(lambda > 1.0 && lambda.is_finite()) {
        return Err(TopologyError::WeightOrdering(format!("lambda = {lambda} must exceed 1")));
    }
    if !(epsilon < 0.0 && (lambda * epsilon).is_finite()) {
        return Err(TopologyError::WeightOrdering(format!("epsilon = {epsilon} must be negative")));
    }
    let mut min_intra = f64::INFINITY;
    let mut max_inter = f64::NEG_INFINITY;
    let mut min_base = f64::INFINITY;
    for e in graph.edges.iter().filter(|e| !e.occluded_ellipsoid) {
        let base = e.w_dlos + offset;
        min_base = min_base.min(base);
        if graph.same_subgroup(e) {
            min_intra = min_intra.min(e.w_prime);
        } else {
            max_inter = max_inter.max(e.w_prime);
        }
        if !e.w_prime.is_finite() {
            return Err(TopologyError::WeightOrdering(format!(
                "edge ({}, {}) overflows after scaling",
                e.i, e.j
            )));
        }
    }
    if min_base.is_finite() && min_base <= 0.0 {
        return Err(TopologyError::WeightOrdering(format!(
            "non-positive edge weight {min_base} cannot be boosted by lambda"
        )));
    }
    if min_intra.is_finite() && max_inter.is_finite() && min_intra <= max_inter {
        return Err(TopologyError::WeightOrdering(format!(
            "boosted intra-subgroup weight {min_intra} does not exceed inter-subgroup weight {max_inter}"
        )));
    }
    if min_base.is_finite() && min_base <= epsilon {
        return Err(TopologyError::WeightOrdering(format!(
            "edge weight {min_base} is not above epsilon {epsilon}"
        )));
    }
    Ok(())
}

fn edge_order(a: &LosEdge, b: &LosEdge) -> Ordering {
    b.w_prime
        .total_cmp(&a.w_prime)
        .then(a.i.cmp(&b.i))
        .then(a.j.cmp(&b.j))
}

/// Maximum spanning tree of `w_prime` (minimum of `-w_prime`) by Kruskal,
/// ties broken by `(i, j)` in lexicographic order.
pub fn mlccst(graph: &WeightedLosGraph) -> Result<SpanningTree, TopologyError> {
    let n = graph.n_robots;
    let mut order: Vec<&LosEdge> = graph.edges.iter().collect();
    order.sort_by(|a, b| edge_order(a, b));
    let mut sets = DisjointSets::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut total_weight = 0.0;
    let mut penalized = 0;
    for e in order {
        if sets.union(e.i, e.j) {
            edges.push((e.i, e.j));
            total_weight += e.w_prime;
            penalized += usize::from(e.occluded_ellipsoid);
            if edges.len() + 1 == n {
                break;
            }
        }
    }
    if n > 0 && edges.len() + 1 != n {
        return Err(TopologyError::Disconnected {
            components: sets.components(),
        });
    }
    if penalized > 0 {
        log::warn!("spanning tree uses {penalized} edge(s) whose ellipsoid contains obstacle points");
    }
    Ok(SpanningTree { edges, total_weight })
}

/// True iff each subgroup is connected through tree edges joining two of its
/// own members.
pub fn verify_subgroup_connectivity(tree: &SpanningTree, subgroups: &[usize]) -> bool {
    let n = subgroups.len();
    let mut sets = DisjointSets::new(n);
    for &(i, j) in &tree.edges {
        if i < n && j < n && subgroups[i] == subgroups[j] {
            sets.union(i, j);
        }
    }
    let mut root_of_group: std::collections::BTreeMap<usize, usize> = Default::default();
    for (v, &g) in subgroups.iter().enumerate() {
        let r = sets.find(v);
        if *root_of_group.entry(g).or_insert(r) != r {
            return false;
        }
    }
    true
}

/// Range-only baseline: edges need only be within `R_c`, weights are `w_d`
/// alone, still boosted per subgroup. Returns the tree and the graph it was
/// chosen from.
pub fn mccst_baseline(
    states: &[Point],
    subgroups: &[usize],
    nominal: &[Point],
    params: &BarrierParams,
    scaling: WeightScaling,
) -> Result<(SpanningTree, WeightedLosGraph), TopologyError> {
    let graph = build_graph(states, subgroups, None, params)?;
    let graph = weigh_edges(graph, states, nominal, &ObstacleField::empty(), params, scaling)?;
    let tree = mlccst(&graph)?;
    Ok((tree, graph))
}

/// The tree computed at the first step, reused unchanged.
pub fn fixed_mlccst_baseline(initial_tree: &SpanningTree) -> SpanningTree {
    initial_tree.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{discretize_obstacles, Polygon};

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    fn params(r_c: f64) -> BarrierParams {
        BarrierParams {
            r_c,
            ..BarrierParams::default()
        }
    }

    fn manual_graph(n: usize, subgroups: Vec<usize>, weights: &[((usize, usize), f64)]) -> WeightedLosGraph {
        let edges = weights
            .iter()
            .map(|&((i, j), w)| LosEdge {
                i,
                j,
                ellipsoid: LosEllipsoid::for_segment(&p(0.0, 0.0), &p(1.0, 0.0), 0.1).unwrap(),
                w_d: w,
                w_los: 0.0,
                w_dlos: w,
                w_prime: w,
                occluded_ellipsoid: false,
            })
            .collect();
        WeightedLosGraph {
            n_robots: n,
            subgroups,
            edges,
            epsilon: -1e9,
            lambda: 1e6,
        }
    }

    #[test]
    fn graph_membership() {
        let empty = ObstacleField::empty();
        let g = build_los_graph(&[p(0.0, 0.0), p(1.0, 0.0)], &[1, 1], &empty, &params(2.0)).unwrap();
        assert_eq!(g.edge_pairs(), vec![(0, 1)]);
        let g = build_los_graph(&[p(0.0, 0.0), p(3.0, 0.0)], &[1, 1], &empty, &params(2.0)).unwrap();
        assert!(g.edges.is_empty());

        let wall = discretize_obstacles(&[Polygon::rect(0.45, -1.0, 0.55, 1.0)], 0.05).unwrap();
        let g = build_los_graph(&[p(0.0, 0.0), p(1.0, 0.0)], &[1, 1], &wall, &params(2.0)).unwrap();
        assert!(g.edges.is_empty());

        let err = build_los_graph(&[p(0.0, 0.0), p(0.0, 0.0)], &[1, 1], &empty, &params(2.0));
        assert_eq!(err, Err(TopologyError::CoincidentRobots { i: 0, j: 1 }));
    }

    #[test]
    fn stationary_weights() {
        let pr = BarrierParams {
            r_s: 1.0,
            r_c: 6.0,
            ..BarrierParams::default()
        };
        let states = [p(0.0, 0.0), p(3.0, 4.0)];
        let empty = ObstacleField::empty();
        let g = build_los_graph(&states, &[1, 2], &empty, &pr).unwrap();
        let g = weigh_edges(g, &states, &[p(0.0, 0.0); 2], &empty, &pr, WeightScaling::Auto).unwrap();
        let e = &g.edges[0];
        assert_eq!(e.w_d, 11.0);
        assert_eq!(e.w_los, 0.0);
        assert_eq!(e.w_dlos, 11.0);
        assert!(!e.occluded_ellipsoid);
    }

    #[test]
    fn fixed_scaling_boosts_intra_edges() {
        let pr = BarrierParams {
            r_s: 1.0,
            r_c: 6.0,
            ..BarrierParams::default()
        };
        let states = [p(0.0, 0.0), p(3.0, 4.0)];
        let empty = ObstacleField::empty();
        let g = build_los_graph(&states, &[1, 1], &empty, &pr).unwrap();
        let scaling = WeightScaling::Fixed {
            lambda: 1e6,
            epsilon: -1e9,
        };
        let g = weigh_edges(g, &states, &[p(0.0, 0.0); 2], &empty, &pr, scaling).unwrap();
        assert_eq!(g.edges[0].w_prime, 1.1e7);
    }

    #[test]
    fn point_inside_ellipsoid_gets_epsilon() {
        let states = [p(0.0, 0.0), p(0.4, 0.0)];
        // A tiny triangle whose vertex sits at the ellipsoid center but whose
        // interior stays off the segment.
        let tri = Polygon::new(vec![p(0.2, 0.0), p(0.3, -0.05), p(0.3, -0.1)]);
        let tri = tri.unwrap();
        let field = discretize_obstacles(&[tri], 1.0).unwrap();
        assert!(field.discretized.contains(&p(0.2, 0.0)));
        let g = build_los_graph(&states, &[1, 1], &field, &params(1.0)).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(h_los(&g.edges[0].ellipsoid, &p(0.2, 0.0)), -1.0);
        let g = weigh_edges(g, &states, &[p(0.0, 0.0); 2], &field, &params(1.0), WeightScaling::Auto).unwrap();
        assert!(g.edges[0].occluded_ellipsoid);
        assert_eq!(g.edges[0].w_dlos, g.epsilon);
        assert_eq!(g.edges[0].w_prime, g.lambda * g.epsilon);
    }

    #[test]
    fn fixed_scaling_rejects_negative_weights() {
        let states = [p(0.0, 0.0), p(0.45, 0.0)];
        let empty = ObstacleField::empty();
        let g = build_los_graph(&states, &[1, 1], &empty, &params(0.5)).unwrap();
        let pulling_apart = [p(-1.0, 0.0), p(1.0, 0.0)];
        let scaling = WeightScaling::Fixed {
            lambda: 1e6,
            epsilon: -1e9,
        };
        let fixed = weigh_edges(g.clone(), &states, &pulling_apart, &empty, &params(0.5), scaling);
        assert!(matches!(fixed, Err(TopologyError::WeightOrdering(_))));
        let auto = weigh_edges(g, &states, &pulling_apart, &empty, &params(0.5), WeightScaling::Auto).unwrap();
        assert!(auto.edges[0].w_dlos < 0.0);
        assert!(auto.edges[0].w_prime > 0.0);
    }

    #[test]
    fn triangle_picks_two_heaviest() {
        let g = manual_graph(3, vec![1, 1, 1], &[((0, 1), 5.0), ((0, 2), 3.0), ((1, 2), 4.0)]);
        let t = mlccst(&g).unwrap();
        let mut edges = t.edges.clone();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
        assert_eq!(t.total_weight, 9.0);
    }

    #[test]
    fn path_graph_is_its_own_tree() {
        let g = manual_graph(4, vec![1; 4], &[((0, 1), -3.0), ((1, 2), 7.0), ((2, 3), 0.5)]);
        let t = mlccst(&g).unwrap();
        let mut edges = t.edges.clone();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn subgroups_span_before_cross_edges() {
        let mut g = manual_graph(
            4,
            vec![1, 1, 2, 2],
            &[((0, 1), 1.0), ((2, 3), 1.0), ((1, 2), 1.0), ((0, 3), 1.0)],
        );
        for e in &mut g.edges {
            if g.subgroups[e.i] == g.subgroups[e.j] {
                e.w_prime *= g.lambda;
            }
        }
        let t = mlccst(&g).unwrap();
        let mut edges = t.edges.clone();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (0, 3), (2, 3)]);
        assert!(verify_subgroup_connectivity(&t, &g.subgroups));
    }

    #[test]
    fn subgroup_connectivity_checks() {
        let groups = [1, 1, 2, 2];
        let good = SpanningTree {
            edges: vec![(0, 1), (2, 3), (0, 3)],
            total_weight: 0.0,
        };
        assert!(verify_subgroup_connectivity(&good, &groups));
        let bad = SpanningTree {
            edges: vec![(0, 2), (2, 1), (2, 3)],
            total_weight: 0.0,
        };
        assert!(!verify_subgroup_connectivity(&bad, &groups));
        assert!(verify_subgroup_connectivity(&bad, &[1, 2, 3, 4]));
    }

    #[test]
    fn disconnected_graph_lists_components() {
        let g = manual_graph(4, vec![1; 4], &[((0, 2), 1.0)]);
        match mlccst(&g) {
            Err(TopologyError::Disconnected { components }) => {
                assert_eq!(components, vec![vec![0, 2], vec![1], vec![3]]);
            }
            other => panic!("expected disconnection, got {other:?}"),
        }
    }

    #[test]
    fn mccst_ignores_walls() {
        let states = [p(0.0, 0.0), p(1.0, 0.0)];
        let wall = discretize_obstacles(&[Polygon::rect(0.45, -1.0, 0.55, 1.0)], 0.05).unwrap();
        let pr = params(2.0);
        let (tree, _) = mccst_baseline(&states, &[1, 1], &[p(0.0, 0.0); 2], &pr, WeightScaling::Auto).unwrap();
        assert_eq!(tree.edges, vec![(0, 1)]);
        assert!(build_los_graph(&states, &[1, 1], &wall, &pr).unwrap().edges.is_empty());

        let far = [p(0.0, 0.0), p(5.0, 0.0)];
        assert!(matches!(
            mccst_baseline(&far, &[1, 1], &[p(0.0, 0.0); 2], &pr, WeightScaling::Auto),
            Err(TopologyError::Disconnected { .. })
        ));
    }

    #[test]
    fn fixed_baseline_is_identity() {
        let t = SpanningTree {
            edges: vec![(0, 1), (1, 2)],
            total_weight: 3.0,
        };
        assert_eq!(fixed_mlccst_baseline(&t), t);
    }

    #[test]
    fn weights_symmetric_under_relabeling() {
        let states = vec![p(0.0, 0.0), p(0.3, 0.1), p(0.1, 0.35)];
        let nominal = vec![p(0.2, -0.1), p(-0.3, 0.4), p(0.05, 0.0)];
        let field = discretize_obstacles(&[Polygon::rect(0.5, 0.5, 0.7, 0.8)], 0.05).unwrap();
        let pr = params(0.6);
        let g = build_los_graph(&states, &[1, 1, 2], &field, &pr).unwrap();
        let g = weigh_edges(g, &states, &nominal, &field, &pr, WeightScaling::Auto).unwrap();

        let perm = [2, 0, 1];
        let mut s2 = vec![Point::zeros(); 3];
        let mut n2 = vec![Point::zeros(); 3];
        let mut g2 = vec![0; 3];
        for (old, &new) in perm.iter().enumerate() {
            s2[new] = states[old];
            n2[new] = nominal[old];
            g2[new] = [1, 1, 2][old];
        }
        let h = build_los_graph(&s2, &g2, &field, &pr).unwrap();
        let h = weigh_edges(h, &s2, &n2, &field, &pr, WeightScaling::Auto).unwrap();
        for e in &g.edges {
            let (a, b) = (perm[e.i].min(perm[e.j]), perm[e.i].max(perm[e.j]));
            let f = h.edges.iter().find(|f| (f.i, f.j) == (a, b)).unwrap();
            assert!((e.w_dlos - f.w_dlos).abs() <= 1e-9 * e.w_dlos.abs().max(1.0));
            assert!((e.w_prime - f.w_prime).abs() <= 1e-9 * e.w_prime.abs().max(1.0));
        }
    }
}
