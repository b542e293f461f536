//! Scenario files: parsing with defaults, invariant validation, content
//! hashing, and seeded random team generation for sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::barriers::{BarrierParams, LosDerivative};
use crate::behaviors::{SiteKind, TaskSite};
use crate::geometry::{discretize_obstacles, segment_occluded, ObstacleField, Point, Polygon};
use crate::qp::QpSettings;
use crate::topology::DisjointSets;

/// Default gap between the graph range and the range enforced on tree edges (m).
pub const DEFAULT_CONN_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Mlccst,
    Mccst,
    Fixed,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mlccst => "mlccst",
            Method::Mccst => "mccst",
            Method::Fixed => "fixed",
        }
    }

    /// Methods that are expected to keep the team line-of-sight connected.
    pub fn maintains_los(&self) -> bool {
        !matches!(self, Method::Mccst)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlccst" => Ok(Method::Mlccst),
            "mccst" => Ok(Method::Mccst),
            "fixed" => Ok(Method::Fixed),
            other => Err(format!("unknown method `{other}` (expected mlccst, mccst or fixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    #[default]
    SingleIntegrator,
    /// Positions are lookahead points ahead of a unicycle base.
    Unicycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub position: Point,
    pub subgroup: usize,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSite {
    pub subgroup: usize,
    pub site: TaskSite,
}

/// A fully resolved scenario with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub robots: Vec<Robot>,
    pub obstacles: Vec<Polygon>,
    pub sites: Vec<SubgroupSite>,
    pub params: BarrierParams,
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    pub seed: u64,
    /// Proportional gain of the nominal behaviors (1/s).
    pub gain: f64,
    /// Obstacle boundary sampling spacing (m).
    pub spacing: f64,
    pub qp: QpSettings,
    pub dynamics: Dynamics,
    /// Unicycle lookahead distance (m).
    pub lookahead: f64,
    /// Tree range certificates enforce `R_c - conn_margin` (m).
    pub conn_margin: f64,
    pub los_derivative: LosDerivative,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column} (field `{path}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },
    #[error("scenario is invalid:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("could not place {n} robots after {attempts} attempts")]
    Generation { n: usize, attempts: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    pos: Point,
    subgroup: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heading: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleFile {
    vertices: Vec<Point>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteFile {
    subgroup: usize,
    kind: SiteKind,
    pos: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    #[serde(rename = "R_s", skip_serializing_if = "Option::is_none")]
    r_s: Option<f64>,
    #[serde(rename = "R_obs", skip_serializing_if = "Option::is_none")]
    r_obs: Option<f64>,
    #[serde(rename = "R_c", skip_serializing_if = "Option::is_none")]
    r_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qp_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qp_max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lookahead: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conn_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    los_derivative: Option<LosDerivative>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    robots: Vec<RobotFile>,
    #[serde(default)]
    obstacles: Vec<ObstacleFile>,
    #[serde(default)]
    sites: Vec<SiteFile>,
    #[serde(default)]
    params: ParamsFile,
    #[serde(default)]
    method: Method,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dynamics: Dynamics,
}

impl Scenario {
    /// Parses and resolves a scenario without validating its invariants.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                line: inner.line(),
                column: inner.column(),
                path,
                message: inner.to_string(),
            }
        })?;
        Ok(Self::resolve(file))
    }

    /// Parses, resolves and validates.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s = Self::parse(text)?;
        s.validate()?;
        Ok(s)
    }

    fn resolve(file: ScenarioFile) -> Self {
        let d = BarrierParams::default();
        let p = &file.params;
        let params = BarrierParams {
            r_s: p.r_s.unwrap_or(d.r_s),
            r_obs: p.r_obs.unwrap_or(d.r_obs),
            r_c: p.r_c.unwrap_or(d.r_c),
            gamma: p.gamma.unwrap_or(d.gamma),
            u_max: p.u_max.unwrap_or(d.u_max),
            delta: p.delta.unwrap_or(d.delta),
        };
        let qd = QpSettings::default();
        Scenario {
            robots: file
                .robots
                .iter()
                .map(|r| Robot {
                    position: r.pos,
                    subgroup: r.subgroup,
                    heading: r.heading.unwrap_or(0.0),
                })
                .collect(),
            obstacles: file
                .obstacles
                .iter()
                .map(|o| Polygon {
                    vertices: o.vertices.clone(),
                })
                .collect(),
            sites: file
                .sites
                .iter()
                .map(|s| SubgroupSite {
                    subgroup: s.subgroup,
                    site: TaskSite {
                        position: s.pos,
                        radius: s.radius.unwrap_or(0.0),
                        kind: s.kind,
                    },
                })
                .collect(),
            params,
            dt: p.dt.unwrap_or(0.02),
            steps: p.steps.unwrap_or(1500),
            method: file.method,
            seed: file.seed,
            gain: p.gain.unwrap_or(1.0),
            spacing: p.spacing.unwrap_or(params.r_obs / 2.0),
            qp: QpSettings {
                tol: p.qp_tol.unwrap_or(qd.tol),
                max_iter: p.qp_max_iter.unwrap_or(qd.max_iter),
            },
            dynamics: file.dynamics,
            lookahead: p.lookahead.unwrap_or(0.05),
            conn_margin: p.conn_margin.unwrap_or(DEFAULT_CONN_MARGIN),
            los_derivative: p.los_derivative.unwrap_or(LosDerivative::Full),
        }
    }

    /// Serializes back to the file schema with every value explicit.
    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            robots: self
                .robots
                .iter()
                .map(|r| RobotFile {
                    pos: r.position,
                    subgroup: r.subgroup,
                    heading: (r.heading != 0.0).then_some(r.heading),
                })
                .collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleFile {
                    vertices: o.vertices.clone(),
                })
                .collect(),
            sites: self
                .sites
                .iter()
                .map(|s| SiteFile {
                    subgroup: s.subgroup,
                    kind: s.site.kind,
                    pos: s.site.position,
                    radius: (s.site.kind == SiteKind::Circle).then_some(s.site.radius),
                })
                .collect(),
            params: ParamsFile {
                r_s: Some(self.params.r_s),
                r_obs: Some(self.params.r_obs),
                r_c: Some(self.params.r_c),
                gamma: Some(self.params.gamma),
                u_max: Some(self.params.u_max),
                delta: Some(self.params.delta),
                dt: Some(self.dt),
                steps: Some(self.steps),
                gain: Some(self.gain),
                spacing: Some(self.spacing),
                qp_tol: Some(self.qp.tol),
                qp_max_iter: Some(self.qp.max_iter),
                lookahead: Some(self.lookahead),
                conn_margin: Some(self.conn_margin),
                los_derivative: Some(self.los_derivative),
            },
            method: self.method,
            seed: self.seed,
            dynamics: self.dynamics,
        };
        serde_json::to_string_pretty(&file).expect("scenario serializes")
    }

    /// SHA-256 of the resolved scenario, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn subgroups(&self) -> Vec<usize> {
        self.robots.iter().map(|r| r.subgroup).collect()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.robots.iter().map(|r| r.position).collect()
    }

    pub fn site_for(&self, subgroup: usize) -> Option<&TaskSite> {
        self.sites.iter().find(|s| s.subgroup == subgroup).map(|s| &s.site)
    }

    pub fn obstacle_field(&self) -> Result<ObstacleField, String> {
        discretize_obstacles(&self.obstacles, self.spacing).map_err(|e| e.to_string())
    }

    /// Checks every invariant and reports all failures together.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        if let Err(e) = self.params.validate() {
            errs.push(e);
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            errs.push(format!("gain must be positive, got {}", self.gain));
        }
        if !(self.qp.tol > 0.0) {
            errs.push(format!("qp_tol must be positive, got {}", self.qp.tol));
        }
        if self.dynamics == Dynamics::Unicycle && !(self.lookahead > 0.0) {
            errs.push(format!("lookahead must be positive, got {}", self.lookahead));
        }
        if !(self.conn_margin >= 0.0 && self.conn_margin < self.params.r_c - self.params.r_s) {
            errs.push(format!(
                "conn_margin must lie in [0, R_c - R_s), got {}",
                self.conn_margin
            ));
        }
        if self.robots.is_empty() {
            errs.push("scenario has no robots".into());
        }
        for (i, r) in self.robots.iter().enumerate() {
            if !(r.position.x.is_finite() && r.position.y.is_finite() && r.heading.is_finite()) {
                errs.push(format!("robot {i} has a non-finite state"));
            }
        }

        let mut seen = BTreeSet::new();
        for s in &self.sites {
            if !seen.insert(s.subgroup) {
                errs.push(format!("subgroup {} has more than one site", s.subgroup));
            }
            if s.site.kind == SiteKind::Circle && !(s.site.radius > 0.0) {
                errs.push(format!("circle site of subgroup {} needs a positive radius", s.subgroup));
            }
        }
        let groups: BTreeSet<usize> = self.robots.iter().map(|r| r.subgroup).collect();
        for g in &groups {
            if !seen.contains(g) {
                errs.push(format!("subgroup {g} has no task site"));
            }
        }

        let field = match self.obstacle_field() {
            Ok(f) => Some(f),
            Err(e) => {
                errs.push(e);
                None
            }
        };

        let pos = self.positions();
        let p = &self.params;
        for i in 0..pos.len() {
            for j in (i + 1)..pos.len() {
                let d = (pos[i] - pos[j]).norm();
                if d <= p.r_s {
                    errs.push(format!(
                        "robots {i} and {j} are {d:.4} m apart, not more than R_s = {}",
                        p.r_s
                    ));
                }
            }
        }
        if let Some(field) = &field {
            for (i, x) in pos.iter().enumerate() {
                if field.point_blocked(x) {
                    errs.push(format!("robot {i} starts inside an obstacle"));
                }
                let d = field.nearest_point_distance(x);
                if d <= p.r_obs {
                    errs.push(format!(
                        "robot {i} is {d:.4} m from an obstacle point, not more than R_obs = {}",
                        p.r_obs
                    ));
                }
            }
            errs.extend(initial_connectivity_errors(&pos, &self.subgroups(), field, p.r_c));
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }
}

fn los_edge(a: &Point, b: &Point, field: &ObstacleField, r_c: f64) -> bool {
    (a - b).norm() <= r_c && !segment_occluded(a, b, field)
}

fn initial_connectivity_errors(
    pos: &[Point],
    subgroups: &[usize],
    field: &ObstacleField,
    r_c: f64,
) -> Vec<String> {
    let n = pos.len();
    let mut all = DisjointSets::new(n);
    let mut intra = DisjointSets::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if los_edge(&pos[i], &pos[j], field, r_c) {
                all.union(i, j);
                if subgroups[i] == subgroups[j] {
                    intra.union(i, j);
                }
            }
        }
    }
    let mut errs = Vec::new();
    let comps = all.components();
    if comps.len() > 1 {
        errs.push(format!(
            "initial line-of-sight graph must be connected; components: {comps:?}"
        ));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in subgroups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    for (g, m) in members {
        let root = intra.find(m[0]);
        if m.iter().any(|&i| intra.find(i) != root) {
            errs.push(format!(
                "initial line-of-sight graph of subgroup {g} must be connected (members {m:?})"
            ));
        }
    }
    errs
}

/// Replaces the template's robots with `n` randomly placed robots split as
/// evenly as possible over the template's subgroups. Each robot is dropped
/// within line of sight of an earlier robot of its own subgroup (the first
/// of each subgroup near any earlier robot), so the result is globally and
/// per-subgroup connected by construction. Placement grows outward from the
/// template's robot centroid.
pub fn generate_team(template: &Scenario, n: usize, seed: u64) -> Result<Scenario, ScenarioError> {
    let mut groups: Vec<usize> = template.sites.iter().map(|s| s.subgroup).collect();
    groups.sort_unstable();
    groups.dedup();
    if groups.is_empty() {
        groups = template.subgroups();
        groups.sort_unstable();
        groups.dedup();
    }
    let field = template
        .obstacle_field()
        .map_err(|e| ScenarioError::Invalid(vec![e]))?;
    let anchor = if template.robots.is_empty() {
        Point::zeros()
    } else {
        template.positions().iter().sum::<Point>() / template.robots.len() as f64
    };
    let p = &template.params;
    let min_gap = (2.5 * p.r_s).max(0.1 * p.r_c);
    let max_hop = 0.7 * p.r_c;
    let wall_gap = 2.0 * p.r_obs;
    let labels: Vec<usize> = (0..n).map(|k| groups[k * groups.len() / n.max(1)]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ATTEMPTS: usize = 50;
    'attempt: for _ in 0..ATTEMPTS {
        let mut placed: Vec<Point> = Vec::with_capacity(n);
        for (k, &g) in labels.iter().enumerate() {
            let same: Vec<usize> = (0..k).filter(|&i| labels[i] == g).collect();
            let parents: Vec<usize> = if same.is_empty() { (0..k).collect() } else { same };
            let mut ok = false;
            for _ in 0..2000 {
                let candidate = if parents.is_empty() {
                    anchor
                } else {
                    let parent = placed[parents[rng.gen_range(0..parents.len())]];
                    let r = rng.gen_range(min_gap..max_hop);
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    let c = parent + Point::new(a.cos(), a.sin()) * r;
                    if segment_occluded(&parent, &c, &field) {
                        continue;
                    }
                    c
                };
                if field.point_blocked(&candidate) || field.nearest_point_distance(&candidate) <= wall_gap {
                    continue;
                }
                if placed.iter().any(|q| (q - candidate).norm() < min_gap) {
                    continue;
                }
                placed.push(candidate);
                ok = true;
                break;
            }
            if !ok {
                continue 'attempt;
            }
        }
        let mut out = template.clone();
        out.robots = placed
            .iter()
            .zip(&labels)
            .map(|(&position, &subgroup)| Robot {
                position,
                subgroup,
                heading: 0.0,
            })
            .collect();
        out.seed = seed;
        if out.validate().is_ok() {
            return Ok(out);
        }
    }
    Err(ScenarioError::Generation { n, attempts: ATTEMPTS })
}
