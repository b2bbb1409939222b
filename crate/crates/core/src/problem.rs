//! Constraint-coupled problem instances.
//!
//! A [`CoupledProblem`] is a list of agents, each owning a convex objective,
//! a vector of convex constraint rows and a box. The agents are coupled only
//! through the summed constraint `Σ_i g_i(x_i) ≤ 0`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertex enumeration is used for exact constants up to this dimension.
const MAX_VERTEX_DIM: usize = 16;

/// Approximate number of grid points used when sampling custom functions.
const SAMPLE_BUDGET: usize = 10_000;

/// Axis-aligned box `{x : lower ≤ x ≤ upper}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxWire")]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct BoxWire {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxWire> for BoxSet {
    type Error = Error;

    fn try_from(w: BoxWire) -> Result<Self> {
        BoxSet::new(w.lower, w.upper)
    }
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(Error::invalid("box must have dimension ≥ 1"));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::invalid(format!("box bound {k} is not finite")));
            }
            if l > u {
                return Err(Error::invalid(format!(
                    "box lower[{k}]={l} > upper[{k}]={u}"
                )));
            }
        }
        Ok(BoxSet { lower, upper })
    }

    /// Box with identical bounds on every coordinate.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        BoxSet::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Euclidean norm of `upper - lower`.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Euclidean projection onto the box, in place.
    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project(&mut out);
        out
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Uniform sample from the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l < u { rng.gen_range(*l..=*u) } else { *l })
            .collect()
    }

    /// Visits every vertex of the box. Degenerate coordinates are visited once.
    pub fn for_each_vertex(&self, mut visit: impl FnMut(&[f64])) {
        let free: Vec<usize> = (0..self.dim())
            .filter(|&k| self.lower[k] < self.upper[k])
            .collect();
        let mut point = self.lower.clone();
        for mask in 0u64..(1u64 << free.len()) {
            for (bit, &k) in free.iter().enumerate() {
                point[k] = if mask >> bit & 1 == 1 {
                    self.upper[k]
                } else {
                    self.lower[k]
                };
            }
            visit(&point);
        }
    }

    fn free_dims(&self) -> usize {
        (0..self.dim())
            .filter(|&k| self.lower[k] < self.upper[k])
            .count()
    }

    /// Regular grid over the box with roughly `budget` points.
    fn for_each_grid_point(&self, budget: usize, mut visit: impl FnMut(&[f64])) {
        let d = self.dim();
        let per_axis = ((budget as f64).powf(1.0 / d as f64).floor() as usize).max(2);
        let mut idx = vec![0usize; d];
        let mut point = self.lower.clone();
        loop {
            for k in 0..d {
                let frac = idx[k] as f64 / (per_axis - 1) as f64;
                point[k] = self.lower[k] + frac * (self.upper[k] - self.lower[k]);
            }
            visit(&point);
            let mut k = 0;
            loop {
                if k == d {
                    return;
                }
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type SubgradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// User-supplied convex function given by value and subgradient callbacks.
#[derive(Clone)]
pub struct CustomFn {
    value: Arc<ValueFn>,
    subgradient: Arc<SubgradFn>,
}

impl CustomFn {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        subgradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        CustomFn {
            value: Arc::new(value),
            subgradient: Arc::new(subgradient),
        }
    }
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomFn(..)")
    }
}

/// Convex scalar function of a vector argument.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarConvexFn {
    /// `weight/2 · ‖x − center‖²`
    Quadratic { center: Vec<f64>, weight: f64 },
    /// `slopeᵀx + offset`
    Affine { slope: Vec<f64>, offset: f64 },
    #[serde(skip)]
    Custom(CustomFn),
}

impl ScalarConvexFn {
    pub fn quadratic(center: Vec<f64>, weight: f64) -> Self {
        ScalarConvexFn::Quadratic { center, weight }
    }

    pub fn affine(slope: Vec<f64>, offset: f64) -> Self {
        ScalarConvexFn::Affine { slope, offset }
    }

    pub fn custom(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        subgradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        ScalarConvexFn::Custom(CustomFn::new(value, subgradient))
    }

    /// Argument dimension, when the kind carries one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ScalarConvexFn::Quadratic { center, .. } => Some(center.len()),
            ScalarConvexFn::Affine { slope, .. } => Some(slope.len()),
            ScalarConvexFn::Custom(_) => None,
        }
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self, ScalarConvexFn::Custom(_))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarConvexFn::Quadratic { center, weight } => {
                0.5 * weight
                    * x.iter()
                        .zip(center)
                        .map(|(v, a)| (v - a) * (v - a))
                        .sum::<f64>()
            }
            ScalarConvexFn::Affine { slope, offset } => {
                slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>() + offset
            }
            ScalarConvexFn::Custom(c) => (c.value)(x),
        }
    }

    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ScalarConvexFn::Quadratic { center, weight } => x
                .iter()
                .zip(center)
                .map(|(v, a)| weight * (v - a))
                .collect(),
            ScalarConvexFn::Affine { slope, .. } => slope.clone(),
            ScalarConvexFn::Custom(c) => (c.subgradient)(x),
        }
    }

    /// Exact `(min, max)` over a box for the built-in kinds.
    fn range_over(&self, set: &BoxSet) -> Option<(f64, f64)> {
        match self {
            ScalarConvexFn::Quadratic { center, weight } => {
                let mut lo = 0.0;
                let mut hi = 0.0;
                for k in 0..set.dim() {
                    let (l, u, a) = (set.lower[k], set.upper[k], center[k]);
                    let near = a.clamp(l, u) - a;
                    let far = (l - a).abs().max((u - a).abs());
                    lo += near * near;
                    hi += far * far;
                }
                Some((0.5 * weight * lo, 0.5 * weight * hi))
            }
            ScalarConvexFn::Affine { slope, offset } => {
                let mut lo = *offset;
                let mut hi = *offset;
                for k in 0..set.dim() {
                    let a = slope[k] * set.lower[k];
                    let b = slope[k] * set.upper[k];
                    lo += a.min(b);
                    hi += a.max(b);
                }
                Some((lo, hi))
            }
            ScalarConvexFn::Custom(_) => None,
        }
    }
}

/// Vector constraint map `g_i : R^d → R^p`, one convex function per row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintMap {
    pub rows: Vec<ScalarConvexFn>,
}

impl ConstraintMap {
    pub fn new(rows: Vec<ScalarConvexFn>) -> Self {
        ConstraintMap { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.value(x)).collect()
    }

    /// Adds `g(x)` to `acc` componentwise.
    pub fn accumulate(&self, x: &[f64], acc: &mut [f64]) {
        for (a, r) in acc.iter_mut().zip(&self.rows) {
            *a += r.value(x);
        }
    }
}

/// One agent's data: objective, constraint map and box.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "AgentWire", into = "AgentWire")]
pub struct AgentProblem {
    pub objective: ScalarConvexFn,
    pub constraint: ConstraintMap,
    pub feasible_set: BoxSet,
}

#[derive(Serialize, Deserialize)]
struct AgentWire {
    dim: usize,
    objective: ScalarConvexFn,
    constraint: ConstraintMap,
    #[serde(rename = "box")]
    feasible_set: BoxSet,
}

impl TryFrom<AgentWire> for AgentProblem {
    type Error = Error;

    fn try_from(w: AgentWire) -> Result<Self> {
        let agent = AgentProblem::new(w.objective, w.constraint, w.feasible_set)?;
        if agent.dim() != w.dim {
            return Err(Error::invalid(format!(
                "agent declares dim {} but its box has dimension {}",
                w.dim,
                agent.dim()
            )));
        }
        Ok(agent)
    }
}

impl From<AgentProblem> for AgentWire {
    fn from(a: AgentProblem) -> Self {
        AgentWire {
            dim: a.dim(),
            objective: a.objective,
            constraint: a.constraint,
            feasible_set: a.feasible_set,
        }
    }
}

impl AgentProblem {
    pub fn new(
        objective: ScalarConvexFn,
        constraint: ConstraintMap,
        feasible_set: BoxSet,
    ) -> Result<Self> {
        let d = feasible_set.dim();
        let check = |f: &ScalarConvexFn, what: &str| -> Result<()> {
            match f {
                ScalarConvexFn::Quadratic { weight, .. } if !(*weight >= 0.0) => Err(
                    Error::invalid(format!("{what}: quadratic weight must be ≥ 0")),
                ),
                _ => match f.dim() {
                    Some(k) if k != d => Err(Error::invalid(format!(
                        "{what} has dimension {k}, box has {d}"
                    ))),
                    _ => Ok(()),
                },
            }
        };
        check(&objective, "objective")?;
        for (r, row) in constraint.rows.iter().enumerate() {
            check(row, &format!("constraint row {r}"))?;
        }
        if constraint.is_empty() {
            return Err(Error::invalid("constraint map needs at least one row"));
        }
        Ok(AgentProblem {
            objective,
            constraint,
            feasible_set,
        })
    }

    pub fn dim(&self) -> usize {
        self.feasible_set.dim()
    }

    pub fn constraint_dim(&self) -> usize {
        self.constraint.len()
    }

    /// True when the objective is quadratic or affine and every constraint row is affine.
    pub fn has_closed_form(&self) -> bool {
        self.objective.is_builtin()
            && self
                .constraint
                .rows
                .iter()
                .all(|r| matches!(r, ScalarConvexFn::Affine { .. }))
    }

    fn is_builtin(&self) -> bool {
        self.objective.is_builtin() && self.constraint.rows.iter().all(|r| r.is_builtin())
    }

    /// `(max_x ‖g(x)‖, max f − min f, exact)` over this agent's box.
    fn local_constants(&self) -> Result<(f64, f64, bool)> {
        let set = &self.feasible_set;
        if self.is_builtin() {
            let (flo, fhi) = self.objective.range_over(set).expect("built-in kind");
            let g_spread = fhi - flo;
            // ‖g‖ is convex for affine rows and nonnegative convex quadratic
            // rows, so its maximum over the box sits on a vertex.
            if set.free_dims() <= MAX_VERTEX_DIM {
                let mut best: f64 = 0.0;
                set.for_each_vertex(|v| best = best.max(norm(&self.constraint.eval(v))));
                return Ok((best, g_spread, true));
            }
            let bound = self
                .constraint
                .rows
                .iter()
                .map(|r| {
                    let (lo, hi) = r.range_over(set).expect("built-in kind");
                    lo.abs().max(hi.abs()).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            return Ok((bound, g_spread, self.constraint.len() == 1));
        }

        let mut f_lo = f64::INFINITY;
        let mut f_hi = f64::NEG_INFINITY;
        let mut g_max: f64 = 0.0;
        let mut bad = None;
        let mut visit = |v: &[f64]| {
            let fv = self.objective.value(v);
            let gv = self.constraint.eval(v);
            let gn = norm(&gv);
            if !fv.is_finite() || !gn.is_finite() {
                bad.get_or_insert_with(|| v.to_vec());
                return;
            }
            f_lo = f_lo.min(fv);
            f_hi = f_hi.max(fv);
            g_max = g_max.max(gn);
        };
        set.for_each_grid_point(SAMPLE_BUDGET, &mut visit);
        if set.free_dims() <= MAX_VERTEX_DIM {
            set.for_each_vertex(&mut visit);
        }
        if let Some(p) = bad {
            return Err(Error::Validation(format!(
                "custom function is unbounded or undefined at {p:?}"
            )));
        }
        Ok((g_max, f_hi - f_lo, false))
    }
}

/// Constants bounding the problem data over the feasible sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Uniform bound on `‖g_i(x_i)‖`.
    pub f_bound: f64,
    /// Uniform bound on `|f_i(x) − f_i(y)|`.
    pub g_bound: f64,
    /// Largest box diameter.
    pub diameter: f64,
    /// False when any value came from grid sampling of a custom function.
    pub exact: bool,
}

/// The full coupled instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ProblemWire", into = "ProblemWire")]
pub struct CoupledProblem {
    agents: Vec<AgentProblem>,
    constraint_dim: usize,
    slater_point: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ProblemWire {
    agents: Vec<AgentProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slater_point: Option<Vec<Vec<f64>>>,
}

impl TryFrom<ProblemWire> for CoupledProblem {
    type Error = Error;

    fn try_from(w: ProblemWire) -> Result<Self> {
        CoupledProblem::new(w.agents, w.slater_point)
    }
}

impl From<CoupledProblem> for ProblemWire {
    fn from(p: CoupledProblem) -> Self {
        ProblemWire {
            agents: p.agents,
            slater_point: p.slater_point,
        }
    }
}

impl CoupledProblem {
    pub fn new(agents: Vec<AgentProblem>, slater_point: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::invalid("problem needs at least one agent"))?;
        let p = first.constraint_dim();
        for (i, a) in agents.iter().enumerate() {
            if a.constraint_dim() != p {
                return Err(Error::invalid(format!(
                    "agent {i} has {} constraint rows, expected {p}",
                    a.constraint_dim()
                )));
            }
        }
        if let Some(points) = &slater_point {
            if points.len() != agents.len() {
                return Err(Error::invalid(format!(
                    "slater point has {} blocks for {} agents",
                    points.len(),
                    agents.len()
                )));
            }
            for (i, (pt, a)) in points.iter().zip(&agents).enumerate() {
                if !a.feasible_set.contains(pt) {
                    return Err(Error::invalid(format!(
                        "slater point block {i} lies outside the agent's box"
                    )));
                }
            }
        }
        Ok(CoupledProblem {
            agents,
            constraint_dim: p,
            slater_point,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn agents(&self) -> &[AgentProblem] {
        &self.agents
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn constraint_dim(&self) -> usize {
        self.constraint_dim
    }

    pub fn slater_point(&self) -> Option<&[Vec<f64>]> {
        self.slater_point.as_deref()
    }

    pub fn with_slater_point(mut self, point: Vec<Vec<f64>>) -> Result<Self> {
        self.slater_point = None;
        CoupledProblem::new(self.agents, Some(point))
    }

    fn check_point(&self, x: &[Vec<f64>]) -> Result<()> {
        if x.len() != self.agents.len() {
            return Err(Error::invalid(format!(
                "expected {} agent blocks, got {}",
                self.agents.len(),
                x.len()
            )));
        }
        for (i, (xi, a)) in x.iter().zip(&self.agents).enumerate() {
            if xi.len() != a.dim() {
                return Err(Error::invalid(format!(
                    "agent {i}: block has length {}, expected {}",
                    xi.len(),
                    a.dim()
                )));
            }
        }
        Ok(())
    }

    /// `(Σ_i f_i(x_i), Σ_i g_i(x_i))`, summed in agent order.
    pub fn eval_global(&self, x: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        self.check_point(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut obj = 0.0;
        let mut cons = vec![0.0; self.constraint_dim];
        for (xi, a) in x.iter().zip(&self.agents) {
            obj += a.objective.value(xi);
            a.constraint.accumulate(xi, &mut cons);
        }
        (obj, cons)
    }

    /// Largest `s ≥ 0` with `Σ_i g_i(x̂_i) ≤ −s·1` at the stored Slater point.
    pub fn slater_slack(&self) -> Result<f64> {
        let pt = self
            .slater_point
            .as_ref()
            .ok_or_else(|| Error::NotAvailable("problem has no slater point".into()))?;
        let (_, g) = self.eval_unchecked(pt);
        let worst = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((-worst).max(0.0))
    }

    /// Constants `F`, `G`, `R`: uniform over agents (maximum of per-agent values).
    pub fn problem_constants(&self) -> Result<ProblemConstants> {
        let mut out = ProblemConstants {
            f_bound: 0.0,
            g_bound: 0.0,
            diameter: 0.0,
            exact: true,
        };
        for a in &self.agents {
            let (f, g, exact) = a.local_constants()?;
            out.f_bound = out.f_bound.max(f);
            out.g_bound = out.g_bound.max(g);
            out.diameter = out.diameter.max(a.feasible_set.diameter());
            out.exact &= exact;
        }
        Ok(out)
    }

    /// Checks the standing assumptions that can be verified numerically:
    /// compact boxes (by construction), a strict Slater point, and finite constants.
    pub fn validate_assumptions(&self) -> Result<()> {
        let eps = self.slater_slack()?;
        if eps <= 0.0 {
            return Err(Error::Validation(
                "slater point is not strictly feasible".into(),
            ));
        }
        let c = self.problem_constants()?;
        if !(c.f_bound.is_finite() && c.g_bound.is_finite()) {
            return Err(Error::Validation("problem constants are not finite".into()));
        }
        Ok(())
    }

    /// Independent uniform point in every box.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        self.agents
            .iter()
            .map(|a| a.feasible_set.sample(rng))
            .collect()
    }
}

/// Parameters of the random resource-allocation family: `N` slices sharing one
/// resource with capacity `R`, quadratic costs `½(x_i − a_i)²` on `[0, 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceAllocationSpec {
    pub n_agents: usize,
    pub seed: u64,
    pub target_range: (f64, f64),
    pub demand_range: (f64, f64),
    pub capacity_range: (f64, f64),
    pub box_upper: f64,
}

impl Default for ResourceAllocationSpec {
    fn default() -> Self {
        ResourceAllocationSpec {
            n_agents: 10,
            seed: 1,
            target_range: (1.0, 2.0),
            demand_range: (0.5, 1.0),
            capacity_range: (5.0, 20.0),
            box_upper: 2.0,
        }
    }
}

/// Data behind one resource-allocation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceAllocation {
    pub targets: Vec<f64>,
    pub demands: Vec<f64>,
    pub capacity: f64,
}

impl ResourceAllocationSpec {
    /// Draws `a_1..a_N`, then `d_1..d_N`, then `R` from a ChaCha8 stream seeded by `seed`.
    pub fn draw(&self) -> Result<ResourceAllocation> {
        if self.n_agents == 0 {
            return Err(Error::invalid("n_agents must be ≥ 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut uniform = |(lo, hi): (f64, f64)| -> Result<f64> {
            if !(lo <= hi) {
                return Err(Error::invalid(format!("empty range [{lo}, {hi}]")));
            }
            Ok(if lo == hi { lo } else { rng.gen_range(lo..hi) })
        };
        let targets = (0..self.n_agents)
            .map(|_| uniform(self.target_range))
            .collect::<Result<Vec<_>>>()?;
        let demands = (0..self.n_agents)
            .map(|_| uniform(self.demand_range))
            .collect::<Result<Vec<_>>>()?;
        let capacity = uniform(self.capacity_range)?;
        Ok(ResourceAllocation {
            targets,
            demands,
            capacity,
        })
    }

    pub fn build(&self) -> Result<CoupledProblem> {
        self.draw()?.to_problem(self.box_upper)
    }
}

impl ResourceAllocation {
    /// Per-agent form: `f_i = ½(x − a_i)²`, `g_i = d_i·x − R/N`, `X_i = [0, upper]`,
    /// with the origin as Slater point.
    pub fn to_problem(&self, upper: f64) -> Result<CoupledProblem> {
        let n = self.targets.len();
        if self.demands.len() != n {
            return Err(Error::invalid("targets and demands differ in length"));
        }
        let share = self.capacity / n as f64;
        let agents = self
            .targets
            .iter()
            .zip(&self.demands)
            .map(|(&a, &d)| {
                AgentProblem::new(
                    ScalarConvexFn::quadratic(vec![a], 1.0),
                    ConstraintMap::new(vec![ScalarConvexFn::affine(vec![d], -share)]),
                    BoxSet::uniform(1, 0.0, upper)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        CoupledProblem::new(agents, Some(vec![vec![0.0]; n]))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_agent(obj: ScalarConvexFn, g: ScalarConvexFn, lo: f64, hi: f64) -> AgentProblem {
        AgentProblem::new(
            obj,
            ConstraintMap::new(vec![g]),
            BoxSet::uniform(1, lo, hi).unwrap(),
        )
        .unwrap()
    }

    fn two_agent_sum() -> CoupledProblem {
        let agents = [1.0, 2.0]
            .iter()
            .map(|&a| {
                scalar_agent(
                    ScalarConvexFn::quadratic(vec![a], 1.0),
                    ScalarConvexFn::affine(vec![1.0], 0.0),
                    0.0,
                    2.0,
                )
            })
            .collect();
        CoupledProblem::new(agents, None).unwrap()
    }

    #[test]
    fn eval_single_agent_at_center() {
        let p = CoupledProblem::new(
            vec![scalar_agent(
                ScalarConvexFn::quadratic(vec![1.0], 1.0),
                ScalarConvexFn::affine(vec![1.0], -1.0),
                0.0,
                2.0,
            )],
            None,
        )
        .unwrap();
        let (f, g) = p.eval_global(&[vec![1.0]]).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn eval_two_agents_at_origin() {
        let (f, g) = two_agent_sum()
            .eval_global(&[vec![0.0], vec![0.0]])
            .unwrap();
        assert_eq!(f, 2.5);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn eval_resource_allocation_at_origin() {
        let data = ResourceAllocationSpec::default().draw().unwrap();
        let p = data.to_problem(2.0).unwrap();
        let (f, g) = p.eval_global(&vec![vec![0.0]; 10]).unwrap();
        let expected: f64 = data.targets.iter().map(|a| 0.5 * a * a).sum();
        assert!((f - expected).abs() < 1e-12);
        assert!((g[0] + data.capacity).abs() < 1e-12);
    }

    #[test]
    fn eval_rejects_bad_dims() {
        let p = two_agent_sum();
        assert!(matches!(
            p.eval_global(&[vec![0.0]]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            p.eval_global(&[vec![0.0], vec![0.0, 1.0]]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn slater_slack_examples() {
        let agents = (0..2)
            .map(|_| {
                scalar_agent(
                    ScalarConvexFn::quadratic(vec![0.0], 1.0),
                    ScalarConvexFn::affine(vec![1.0], -1.0),
                    0.0,
                    2.0,
                )
            })
            .collect();
        let p = CoupledProblem::new(agents, Some(vec![vec![0.0], vec![0.0]])).unwrap();
        assert_eq!(p.slater_slack().unwrap(), 2.0);

        // Σg = [−0.5, −2.0]: the first row binds.
        let a = AgentProblem::new(
            ScalarConvexFn::quadratic(vec![0.0], 1.0),
            ConstraintMap::new(vec![
                ScalarConvexFn::affine(vec![1.0], -0.5),
                ScalarConvexFn::affine(vec![1.0], -2.0),
            ]),
            BoxSet::uniform(1, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        let p = CoupledProblem::new(vec![a], Some(vec![vec![0.0]])).unwrap();
        assert_eq!(p.slater_slack().unwrap(), 0.5);

        let data = ResourceAllocationSpec::default().draw().unwrap();
        let p = data.to_problem(2.0).unwrap();
        assert!((p.slater_slack().unwrap() - data.capacity).abs() < 1e-12);

        assert!(matches!(
            two_agent_sum().slater_slack(),
            Err(Error::NotAvailable(_))
        ));
    }

    #[test]
    fn slater_slack_zero_when_not_interior() {
        let a = scalar_agent(
            ScalarConvexFn::quadratic(vec![0.0], 1.0),
            ScalarConvexFn::affine(vec![1.0], -1.0),
            0.0,
            2.0,
        );
        let p = CoupledProblem::new(vec![a], Some(vec![vec![1.5]])).unwrap();
        assert_eq!(p.slater_slack().unwrap(), 0.0);
        assert!(p.validate_assumptions().is_err());
    }

    #[test]
    fn constants_on_interval() {
        let a = scalar_agent(
            ScalarConvexFn::quadratic(vec![1.0], 1.0),
            ScalarConvexFn::affine(vec![1.0], -0.5),
            0.0,
            2.0,
        );
        let c = CoupledProblem::new(vec![a], None)
            .unwrap()
            .problem_constants()
            .unwrap();
        assert_eq!(c.f_bound, 1.5);
        assert_eq!(c.g_bound, 0.5);
        assert_eq!(c.diameter, 2.0);
        assert!(c.exact);
    }

    #[test]
    fn constants_for_custom_kinds_are_sampled() {
        let a = scalar_agent(
            ScalarConvexFn::custom(|x| (x[0] - 1.0).abs(), |x| vec![(x[0] - 1.0).signum()]),
            ScalarConvexFn::affine(vec![1.0], -0.5),
            0.0,
            2.0,
        );
        let c = CoupledProblem::new(vec![a], None)
            .unwrap()
            .problem_constants()
            .unwrap();
        assert!(!c.exact);
        assert!((c.g_bound - 1.0).abs() < 1e-3);
        assert!((c.f_bound - 1.5).abs() < 1e-9);
    }

    #[test]
    fn constants_reject_unbounded_custom() {
        let a = scalar_agent(
            ScalarConvexFn::custom(|x| 1.0 / x[0], |x| vec![-1.0 / (x[0] * x[0])]),
            ScalarConvexFn::affine(vec![1.0], 0.0),
            0.0,
            1.0,
        );
        let p = CoupledProblem::new(vec![a], None).unwrap();
        assert!(matches!(p.problem_constants(), Err(Error::Validation(_))));
    }

    #[test]
    fn box_validation() {
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxSet::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(BoxSet::new(vec![0.0, 0.0], vec![1.0]).is_err());
        let b = BoxSet::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.diameter(), 0.0);
    }

    #[test]
    fn agent_dimension_mismatch() {
        let err = AgentProblem::new(
            ScalarConvexFn::quadratic(vec![0.0, 0.0], 1.0),
            ConstraintMap::new(vec![ScalarConvexFn::affine(vec![1.0], 0.0)]),
            BoxSet::uniform(1, 0.0, 1.0).unwrap(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn json_roundtrip() {
        let text = r#"{
            "agents": [
                {"dim": 1,
                 "objective": {"kind": "quadratic", "center": [1.0], "weight": 1.0},
                 "constraint": [{"kind": "affine", "slope": [1.0], "offset": -1.0}],
                 "box": {"lower": [0.0], "upper": [2.0]}}
            ],
            "slater_point": [[0.0]]
        }"#;
        let p = CoupledProblem::from_json(text).unwrap();
        assert_eq!(p.n_agents(), 1);
        assert_eq!(p.slater_slack().unwrap(), 1.0);
        let again = CoupledProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(again.to_json().unwrap(), p.to_json().unwrap());

        let bad = text.replace("\"dim\": 1", "\"dim\": 2");
        assert!(CoupledProblem::from_json(&bad).is_err());
    }

    fn builtin_fn(d: usize) -> impl Strategy<Value = ScalarConvexFn> {
        prop_oneof![
            (prop::collection::vec(-3.0..3.0f64, d), 0.0..4.0f64)
                .prop_map(|(c, w)| ScalarConvexFn::quadratic(c, w)),
            (prop::collection::vec(-3.0..3.0f64, d), -2.0..2.0f64)
                .prop_map(|(s, o)| ScalarConvexFn::affine(s, o)),
        ]
    }

    proptest! {
        #[test]
        fn subgradient_inequality(
            f in builtin_fn(3),
            x in prop::collection::vec(-2.0..2.0f64, 3),
            y in prop::collection::vec(-2.0..2.0f64, 3),
        ) {
            let s = f.subgradient(&x);
            let lin = f.value(&x) + dot(&s, &y) - dot(&s, &x);
            prop_assert!(f.value(&y) >= lin - 1e-9);
        }

        #[test]
        fn eval_is_additive(n in 2usize..6, seed in any::<u64>(), split in 1usize..5) {
            let spec = ResourceAllocationSpec { n_agents: n, seed, ..Default::default() };
            let p = spec.build().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = p.sample_point(&mut rng);
            let (f, g) = p.eval_global(&x).unwrap();
            let k = split.min(n - 1);
            let mut f_parts = 0.0;
            let mut g_parts = vec![0.0; 1];
            for block in [0..k, k..n] {
                for i in block {
                    f_parts += p.agents()[i].objective.value(&x[i]);
                    p.agents()[i].constraint.accumulate(&x[i], &mut g_parts);
                }
            }
            prop_assert_eq!(f, f_parts);
            prop_assert_eq!(g, g_parts);
        }

        #[test]
        fn slack_nonnegative(vals in prop::collection::vec(-3.0..3.0f64, 2)) {
            let a = AgentProblem::new(
                ScalarConvexFn::quadratic(vec![0.0], 1.0),
                ConstraintMap::new(vec![
                    ScalarConvexFn::affine(vec![0.0], vals[0]),
                    ScalarConvexFn::affine(vec![0.0], vals[1]),
                ]),
                BoxSet::uniform(1, 0.0, 1.0).unwrap(),
            ).unwrap();
            let p = CoupledProblem::new(vec![a], Some(vec![vec![0.5]])).unwrap();
            let eps = p.slater_slack().unwrap();
            prop_assert!(eps >= 0.0);
            prop_assert_eq!(eps > 0.0, vals[0] < 0.0 && vals[1] < 0.0);
        }
    }

    #[test]
    fn f_bound_dominates_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = AgentProblem::new(
            ScalarConvexFn::quadratic(vec![0.3, -0.2, 1.0], 2.0),
            ConstraintMap::new(vec![
                ScalarConvexFn::affine(vec![1.0, -2.0, 0.5], 0.3),
                ScalarConvexFn::quadratic(vec![0.0, 1.0, 0.0], 1.0),
                ScalarConvexFn::affine(vec![-1.0, 0.0, 3.0], -1.0),
            ]),
            BoxSet::new(vec![-1.0, 0.0, -2.0], vec![1.0, 2.0, 0.5]).unwrap(),
        )
        .unwrap();
        let p = CoupledProblem::new(vec![a.clone()], None).unwrap();
        let c = p.problem_constants().unwrap();
        let mut f_lo = f64::INFINITY;
        let mut f_hi = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let x = a.feasible_set.sample(&mut rng);
            assert!(c.f_bound >= norm(&a.constraint.eval(&x)));
            let v = a.objective.value(&x);
            f_lo = f_lo.min(v);
            f_hi = f_hi.max(v);
        }
        assert!(c.g_bound >= f_hi - f_lo);
    }
}
