//! Buffered drift-plus-penalty iteration.
//!
//! One step at time `t` (0-based) performs, for every agent `i`:
//!
//! 1. `μ̂_i = Σ_j W_t[i][j] μ_j` (queue mixing),
//! 2. `x_i ← argmin_{X_i} V_{t+1} f_i + ⟨μ̂_i, g_i⟩ + η_{t+1}‖x − x_i‖²`,
//! 3. `μ_i ← max(μ̂_i + g_i(x_i), 0) + γ_{t+1}`,
//!
//! and maintains the running averages `x̄_i`. Every step also produces the
//! cumulative-violation slack and the drift bound diagnostics.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::local_solver::{self, SubproblemSpec};
use crate::network::{self, GraphSchedule, Round};
use crate::problem::{norm, CoupledProblem};

/// Default absolute tolerance for the per-iteration invariant checks.
pub const INVARIANT_TOL: f64 = 1e-9;

type ScalarFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Time-varying `V_t`, `η_t`, `γ_t`.
#[derive(Clone)]
pub struct ParamSchedule {
    v_fn: ScalarFn,
    eta_fn: ScalarFn,
    gamma_fn: ScalarFn,
    /// The buffer constant `C` the schedule was built from (informational).
    pub buffer_c: f64,
}

impl fmt::Debug for ParamSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamSchedule")
            .field("buffer_c", &self.buffer_c)
            .field("v(1)", &self.v(1))
            .field("eta(1)", &self.eta(1))
            .field("gamma(1)", &self.gamma(1))
            .finish()
    }
}

impl ParamSchedule {
    pub fn new(
        v_fn: impl Fn(usize) -> f64 + Send + Sync + 'static,
        eta_fn: impl Fn(usize) -> f64 + Send + Sync + 'static,
        gamma_fn: impl Fn(usize) -> f64 + Send + Sync + 'static,
        buffer_c: f64,
    ) -> Self {
        ParamSchedule {
            v_fn: Arc::new(v_fn),
            eta_fn: Arc::new(eta_fn),
            gamma_fn: Arc::new(gamma_fn),
            buffer_c,
        }
    }

    /// `V_t = √t`, `η_t = t`, `γ_t = C/√t`.
    pub fn standard(c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!(
                "buffer constant must be ≥ 0, got {c}"
            )));
        }
        Ok(ParamSchedule::new(
            |t| (t as f64).sqrt(),
            |t| t as f64,
            move |t| c / (t as f64).sqrt(),
            c,
        ))
    }

    /// Time-invariant parameters.
    pub fn constant(v: f64, eta: f64, gamma: f64) -> Self {
        ParamSchedule::new(move |_| v, move |_| eta, move |_| gamma, gamma)
    }

    pub fn v(&self, t: usize) -> f64 {
        (self.v_fn)(t)
    }

    pub fn eta(&self, t: usize) -> f64 {
        (self.eta_fn)(t)
    }

    pub fn gamma(&self, t: usize) -> f64 {
        (self.gamma_fn)(t)
    }

    fn at(&self, t: usize) -> Result<(f64, f64, f64)> {
        let (v, eta, gamma) = (self.v(t), self.eta(t), self.gamma(t));
        if !(v > 0.0 && eta > 0.0 && gamma >= 0.0) || !(v + eta + gamma).is_finite() {
            return Err(Error::invalid(format!(
                "parameters at t={t} must satisfy V>0, η>0, γ≥0; got V={v}, η={eta}, γ={gamma}"
            )));
        }
        Ok((v, eta, gamma))
    }
}

/// Local state of one agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub queue: Vec<f64>,
    /// `(1/t) Σ_{k=1..t} x_k`; equals `x` before the first step.
    pub avg_x: Vec<f64>,
    pub iter_count: usize,
    #[serde(skip)]
    sum_x: Vec<f64>,
}

impl AgentState {
    pub fn new(x: Vec<f64>, p: usize) -> Self {
        let d = x.len();
        AgentState {
            avg_x: x.clone(),
            x,
            queue: vec![0.0; p],
            iter_count: 0,
            sum_x: vec![0.0; d],
        }
    }

    /// Records a new iterate and refreshes the running average.
    pub(crate) fn push_iterate(&mut self, x: Vec<f64>) {
        self.iter_count += 1;
        let n = self.iter_count as f64;
        for ((s, a), v) in self.sum_x.iter_mut().zip(self.avg_x.iter_mut()).zip(&x) {
            *s += v;
            *a = *s / n;
        }
        self.x = x;
    }
}

/// Diagnostics emitted after one iteration. `t` is the index of the new iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    /// `Σ_i f_i(x̄_{i,t})`.
    pub objective: f64,
    /// `objective − f*`.
    pub objective_error: f64,
    /// `Σ_i g_i(x̄_{i,t})`.
    pub violation: Vec<f64>,
    /// Norm of the summed queues (or multipliers).
    pub queue_sum_norm: f64,
    /// `½‖μ̄_{t}‖² − ½‖μ̄_{t−1}‖²`.
    pub drift: Option<f64>,
    /// Upper bound on the drift from the drift-plus-penalty inequality.
    pub drift_bound: Option<f64>,
    /// `Σ_i μ_{i,t} − Σ_{k≤t} Σ_i g_i(x_{i,k}) − N Σ_{k≤t} γ_k`, componentwise.
    pub lemma1_slack: Option<Vec<f64>>,
}

impl IterationRecord {
    pub fn max_violation(&self) -> f64 {
        self.violation
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.violation.iter().all(|v| *v <= 0.0)
    }

    pub fn lemma1_slack_min(&self) -> Option<f64> {
        self.lemma1_slack
            .as_ref()
            .map(|s| s.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

/// Which iterations are kept in a [`RunResult`]. The final iteration is always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum RecordStride {
    /// Every iteration up to 1000, then every 10th.
    #[default]
    Default,
    Every(usize),
}

impl RecordStride {
    pub fn keeps(&self, t: usize, horizon: usize) -> bool {
        if t == horizon {
            return true;
        }
        match *self {
            RecordStride::Default => t <= 1000 || t.is_multiple_of(10),
            RecordStride::Every(k) => k <= 1 || t.is_multiple_of(k),
        }
    }
}

/// Common interface of the iterative methods driven by [`drive`].
pub trait Method {
    fn name(&self) -> &str;
    /// Number of completed iterations.
    fn iterations(&self) -> usize;
    fn step(&mut self) -> Result<IterationRecord>;
    fn current_x(&self) -> Vec<Vec<f64>>;
    fn averages(&self) -> Vec<Vec<f64>>;
}

/// Aggregates tracked over every iteration, recorded or not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub horizon: usize,
    pub final_objective_error: f64,
    pub final_violation: Vec<f64>,
    /// First `t` with `Σ_i g_i(x̄_{i,t}) ≤ 0`.
    pub first_feasible_t: Option<usize>,
    /// Last `t` at which the averaged iterate was infeasible.
    pub last_infeasible_t: Option<usize>,
    pub min_lemma1_slack: Option<f64>,
    /// `max_t (drift − drift_bound)`; nonpositive when the bound held.
    pub max_drift_excess: Option<f64>,
}

/// Records of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub summary: RunSummary,
    pub final_x: Vec<Vec<f64>>,
    pub final_avg: Vec<Vec<f64>>,
}

/// Runs `method` until it has completed `horizon` iterations.
pub fn drive<M: Method + ?Sized>(
    method: &mut M,
    horizon: usize,
    stride: RecordStride,
) -> Result<RunResult> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be ≥ 1"));
    }
    let mut records = Vec::new();
    let mut first_feasible = None;
    let mut last_infeasible = None;
    let mut min_slack: Option<f64> = None;
    let mut max_excess: Option<f64> = None;
    let mut last = None;
    while method.iterations() < horizon {
        let rec = method.step()?;
        if rec.is_feasible() {
            first_feasible.get_or_insert(rec.t);
        } else {
            last_infeasible = Some(rec.t);
        }
        if let Some(s) = rec.lemma1_slack_min() {
            min_slack = Some(min_slack.map_or(s, |m| m.min(s)));
        }
        if let (Some(d), Some(b)) = (rec.drift, rec.drift_bound) {
            let e = d - b;
            max_excess = Some(max_excess.map_or(e, |m| m.max(e)));
        }
        if stride.keeps(rec.t, horizon) {
            records.push(rec.clone());
        }
        last = Some(rec);
    }
    let last = last.expect("horizon ≥ 1");
    Ok(RunResult {
        summary: RunSummary {
            algorithm: method.name().to_string(),
            horizon,
            final_objective_error: last.objective_error,
            final_violation: last.violation.clone(),
            first_feasible_t: first_feasible,
            last_infeasible_t: last_infeasible,
            min_lemma1_slack: min_slack,
            max_drift_excess: max_excess,
        },
        records,
        final_x: method.current_x(),
        final_avg: method.averages(),
    })
}

/// How the initial primal iterate is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialPoint {
    /// Uniform in each box, from a ChaCha8 stream seeded by the value.
    Random(u64),
    Given(Vec<Vec<f64>>),
}

impl InitialPoint {
    pub(crate) fn resolve(&self, problem: &CoupledProblem) -> Result<Vec<Vec<f64>>> {
        match self {
            InitialPoint::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                // keep this stream apart from the instance generator
                rng.set_stream(1);
                Ok(problem.sample_point(&mut rng))
            }
            InitialPoint::Given(x) => {
                problem.eval_global(x)?;
                for (i, (xi, a)) in x.iter().zip(problem.agents()).enumerate() {
                    if !a.feasible_set.contains(xi) {
                        return Err(Error::invalid(format!(
                            "initial point of agent {i} lies outside its box"
                        )));
                    }
                }
                Ok(x.clone())
            }
        }
    }
}

/// Engine options shared by the algorithms in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOptions {
    pub init: InitialPoint,
    /// Reference optimum used for `objective_error`.
    pub f_star: f64,
    /// Bound on `‖g_i‖` used by the drift bound; computed from the problem when `None`.
    pub f_bound: Option<f64>,
    /// When set, a violated invariant aborts the run with [`Error::Invariant`].
    pub invariant_tol: Option<f64>,
    /// Also abort when the drift exceeds its bound. Off by default: with zero
    /// initial queues and `N·γ_1` large the bound can fail at `t = 1`, so the
    /// excess is logged and summarized instead.
    pub strict_drift: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            init: InitialPoint::Random(1),
            f_star: 0.0,
            f_bound: None,
            invariant_tol: Some(INVARIANT_TOL),
            strict_drift: false,
        }
    }
}

/// `μ̂_i = Σ_j W[i][j] μ_j` for every agent.
pub fn mix_queues(states: &[AgentState], round: &Round) -> Result<Vec<Vec<f64>>> {
    let queues: Vec<Vec<f64>> = states.iter().map(|s| s.queue.clone()).collect();
    network::mix(round, &queues)
}

/// `max(μ̂ + g, 0) + γ`, componentwise.
pub fn queue_update(mu_hat: &[f64], g_val: &[f64], gamma: f64) -> Vec<f64> {
    mu_hat
        .iter()
        .zip(g_val)
        .map(|(m, g)| (m + g).max(0.0) + gamma)
        .collect()
}

pub(crate) fn sum_vectors(vs: &[Vec<f64>], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out
}

/// The buffered drift-plus-penalty method.
#[derive(Debug, Clone)]
pub struct Bdpp {
    problem: CoupledProblem,
    schedule: GraphSchedule,
    params: ParamSchedule,
    states: Vec<AgentState>,
    t: usize,
    f_bound: f64,
    f_star: f64,
    invariant_tol: Option<f64>,
    strict_drift: bool,
    cum_g: Vec<f64>,
    cum_gamma: f64,
}

impl Bdpp {
    pub fn new(
        problem: CoupledProblem,
        schedule: GraphSchedule,
        params: ParamSchedule,
        options: EngineOptions,
    ) -> Result<Self> {
        if schedule.n_agents() != problem.n_agents() {
            return Err(Error::invalid(format!(
                "schedule has {} agents, problem has {}",
                schedule.n_agents(),
                problem.n_agents()
            )));
        }
        let x0 = options.init.resolve(&problem)?;
        let f_bound = match options.f_bound {
            Some(f) => f,
            None => problem.problem_constants()?.f_bound,
        };
        let p = problem.constraint_dim();
        Ok(Bdpp {
            states: x0.into_iter().map(|x| AgentState::new(x, p)).collect(),
            problem,
            schedule,
            params,
            t: 0,
            f_bound,
            f_star: options.f_star,
            invariant_tol: options.invariant_tol,
            strict_drift: options.strict_drift,
            cum_g: vec![0.0; p],
            cum_gamma: 0.0,
        })
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn problem(&self) -> &CoupledProblem {
        &self.problem
    }

    /// Executes one synchronous iteration and returns its diagnostics.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let t = self.t;
        let n = self.problem.n_agents();
        let p = self.problem.constraint_dim();
        let (v, eta, gamma) = self.params.at(t + 1)?;
        let round = self.schedule.round_at(t);

        let mu_hat = mix_queues(&self.states, round)?;
        let queues: Vec<Vec<f64>> = self.states.iter().map(|s| s.queue.clone()).collect();
        let mu_bar = sum_vectors(&queues, p);

        let mut new_x = Vec::with_capacity(n);
        let mut new_queues = Vec::with_capacity(n);
        let mut minimized = 0.0;
        let mut penalty = 0.0;
        for (i, (agent, state)) in self.problem.agents().iter().zip(&self.states).enumerate() {
            let spec = SubproblemSpec::new(agent, v, &mu_hat[i], eta, &state.x)
                .map_err(|e| e.at_agent(i, t))?;
            let x = local_solver::solve(&spec).map_err(|e| e.at_agent(i, t))?;
            minimized += spec.objective(&x);
            penalty += v * agent.objective.value(&x);
            let g = agent.constraint.eval(&x);
            for (c, gv) in self.cum_g.iter_mut().zip(&g) {
                *c += gv;
            }
            new_queues.push(queue_update(&mu_hat[i], &g, gamma));
            new_x.push(x);
        }

        let mu_bar_next = sum_vectors(&new_queues, p);
        let drift = 0.5 * (norm_sq(&mu_bar_next) - norm_sq(&mu_bar));
        let disagreement: f64 = mu_hat
            .iter()
            .map(|m| {
                let d: Vec<f64> = mu_bar.iter().zip(m).map(|(a, b)| a - b).collect();
                norm(&d)
            })
            .sum();
        let (nf, pf, f) = (n as f64, p as f64, self.f_bound);
        let rhs = (f + 2.0 * pf.sqrt() * gamma) * disagreement
            + minimized
            + 2.0 * nf * f * f
            + 4.0 * nf * f * pf * gamma
            + 4.0 * nf * pf * gamma * gamma
            + nf * gamma * mu_bar.iter().sum::<f64>();
        let drift_bound = rhs - penalty;

        self.cum_gamma += gamma;
        let slack: Vec<f64> = mu_bar_next
            .iter()
            .zip(&self.cum_g)
            .map(|(m, g)| m - g - nf * self.cum_gamma)
            .collect();

        for ((state, x), q) in self.states.iter_mut().zip(new_x).zip(new_queues) {
            state.push_iterate(x);
            state.queue = q;
        }
        self.t += 1;

        if let Some(tol) = self.invariant_tol {
            self.check_invariants(tol, gamma, drift, drift_bound, &slack)?;
        }

        let avg: Vec<Vec<f64>> = self.states.iter().map(|s| s.avg_x.clone()).collect();
        let (objective, violation) = self.problem.eval_unchecked(&avg);
        Ok(IterationRecord {
            t: self.t,
            objective,
            objective_error: objective - self.f_star,
            violation,
            queue_sum_norm: norm(&mu_bar_next),
            drift: Some(drift),
            drift_bound: Some(drift_bound),
            lemma1_slack: Some(slack),
        })
    }

    fn check_invariants(
        &self,
        tol: f64,
        gamma: f64,
        drift: f64,
        drift_bound: f64,
        slack: &[f64],
    ) -> Result<()> {
        let t = self.t;
        let fail = |detail: String| Err(Error::Invariant { t, detail });
        if let Some(s) = slack.iter().find(|s| **s < -tol) {
            return fail(format!("cumulative violation bound broken, slack {s:e}"));
        }
        if drift > drift_bound + tol {
            let detail = format!("drift {drift:e} exceeds bound {drift_bound:e}");
            if self.strict_drift {
                return fail(detail);
            }
            log::warn!("t={t}: {detail}");
        }
        for (i, (s, a)) in self.states.iter().zip(self.problem.agents()).enumerate() {
            if s.queue.iter().any(|q| *q < gamma) {
                return fail(format!("queue of agent {i} fell below the buffer {gamma}"));
            }
            if !a.feasible_set.contains(&s.x) || !a.feasible_set.contains(&s.avg_x) {
                return fail(format!("iterate of agent {i} left its box"));
            }
        }
        Ok(())
    }

    /// Runs until `horizon` iterations have been completed.
    pub fn run(&mut self, horizon: usize, stride: RecordStride) -> Result<RunResult> {
        drive(self, horizon, stride)
    }
}

impl Method for Bdpp {
    fn name(&self) -> &str {
        "bdpp"
    }

    fn iterations(&self) -> usize {
        self.t
    }

    fn step(&mut self) -> Result<IterationRecord> {
        Bdpp::step(self)
    }

    fn current_x(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.x.clone()).collect()
    }

    fn averages(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.avg_x.clone()).collect()
    }
}

/// Runs B-DPP from a random initial point drawn from `seed`.
pub fn run(
    problem: &CoupledProblem,
    schedule: &GraphSchedule,
    params: &ParamSchedule,
    horizon: usize,
    seed: u64,
) -> Result<RunResult> {
    let options = EngineOptions {
        init: InitialPoint::Random(seed),
        ..Default::default()
    };
    Bdpp::new(problem.clone(), schedule.clone(), params.clone(), options)?
        .run(horizon, RecordStride::Default)
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{make_ring_partition_schedule, Round};
    use crate::problem::{
        AgentProblem, BoxSet, ConstraintMap, ResourceAllocationSpec, ScalarConvexFn,
    };

    fn single_agent() -> CoupledProblem {
        let a = AgentProblem::new(
            ScalarConvexFn::quadratic(vec![0.0], 1.0),
            ConstraintMap::new(vec![ScalarConvexFn::affine(vec![1.0], -1.0)]),
            BoxSet::uniform(1, 0.0, 2.0).unwrap(),
        )
        .unwrap();
        CoupledProblem::new(vec![a], Some(vec![vec![0.0]])).unwrap()
    }

    fn identity_schedule(n: usize) -> GraphSchedule {
        GraphSchedule::constant(Round::identity(n), 1).unwrap()
    }

    #[test]
    fn queue_update_examples() {
        assert_eq!(queue_update(&[0.5], &[-1.0], 0.1), vec![0.1]);
        let q = queue_update(&[0.2, 0.0], &[0.3, -0.1], 0.05);
        assert!((q[0] - 0.55).abs() < 1e-15);
        assert_eq!(q[1], 0.05);
        assert_eq!(queue_update(&[0.0], &[0.0], 0.0), vec![0.0]);
    }

    #[test]
    fn mix_queues_examples() {
        let states = vec![
            AgentState {
                queue: vec![1.0, 0.0],
                ..AgentState::new(vec![0.0], 2)
            },
            AgentState {
                queue: vec![0.0, 2.0],
                ..AgentState::new(vec![0.0], 2)
            },
        ];
        assert_eq!(
            mix_queues(&states, &Round::identity(2)).unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, 2.0]]
        );
        let avg = Round {
            edges: vec![(0, 1)],
            mixing: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        assert_eq!(
            mix_queues(&states, &avg).unwrap(),
            vec![vec![0.5, 1.0], vec![0.5, 1.0]]
        );
        assert!(mix_queues(&states[..1], &avg).is_err());
    }

    #[test]
    fn single_step_hand_trace() {
        let mut engine = Bdpp::new(
            single_agent(),
            identity_schedule(1),
            ParamSchedule::standard(0.27).unwrap(),
            EngineOptions {
                init: InitialPoint::Given(vec![vec![0.0]]),
                ..Default::default()
            },
        )
        .unwrap();
        let rec = engine.step().unwrap();
        let s = &engine.states()[0];
        assert_eq!(s.x, vec![0.0]);
        assert!((s.queue[0] - 0.27).abs() < 1e-15);
        assert_eq!(rec.t, 1);
        // μ̄ goes 0 → 0.27, Σg = −1, cumulative buffer 0.27: slack = 0.27 + 1 − 0.27.
        assert!((rec.lemma1_slack.unwrap()[0] - 1.0).abs() < 1e-15);
        assert!((rec.drift.unwrap() - 0.5 * 0.27 * 0.27).abs() < 1e-15);

        let run = run(
            &single_agent(),
            &identity_schedule(1),
            &ParamSchedule::standard(0.27).unwrap(),
            1,
            3,
        )
        .unwrap();
        assert_eq!(run.records.len(), 1);
        // random start x0, V = η = 1, μ̂ = 0: argmin ½x² + (x − x0)² = 2x0/3
        let x0 = InitialPoint::Random(3).resolve(&single_agent()).unwrap()[0][0];
        assert!((run.final_x[0][0] - 2.0 * x0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn drift_bound_gap_at_zero_queues() {
        // All queues start at 0, so after one step Δ ≥ ½(N·γ_1)² while the
        // bound only carries 4N·p·γ_1². N = 10, C = 10 breaks it at t = 1.
        let problem = ResourceAllocationSpec::default().build().unwrap();
        let schedule = make_ring_partition_schedule(10, 4, 1.0).unwrap();
        let params = ParamSchedule::standard(10.0).unwrap();
        let mut strict = Bdpp::new(
            problem.clone(),
            schedule.clone(),
            params.clone(),
            EngineOptions {
                strict_drift: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(matches!(strict.step(), Err(Error::Invariant { t: 1, .. })));

        let mut lenient = Bdpp::new(problem, schedule, params, EngineOptions::default()).unwrap();
        let run = lenient.run(200, RecordStride::Every(1)).unwrap();
        let excess: Vec<usize> = run
            .records
            .iter()
            .filter(|r| r.drift.unwrap() > r.drift_bound.unwrap() + INVARIANT_TOL)
            .map(|r| r.t)
            .collect();
        assert_eq!(excess, vec![1]);
        assert!(run.records[0].drift.unwrap() >= 0.5 * 100.0 * 100.0);
        assert!(run.summary.max_drift_excess.unwrap() > 0.0);
    }

    #[test]
    fn running_average_matches_recomputation() {
        let problem = ResourceAllocationSpec::default().build().unwrap();
        let schedule = make_ring_partition_schedule(10, 4, 1.0).unwrap();
        let mut engine = Bdpp::new(
            problem,
            schedule,
            ParamSchedule::standard(0.27).unwrap(),
            EngineOptions::default(),
        )
        .unwrap();
        let mut history: Vec<Vec<Vec<f64>>> = Vec::new();
        for t in 1..=1000 {
            engine.step().unwrap();
            history.push(engine.current_x());
            if [10, 100, 1000].contains(&t) {
                for i in 0..10 {
                    let mean = history.iter().map(|x| x[i][0]).sum::<f64>() / t as f64;
                    assert!((mean - engine.states()[i].avg_x[0]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn postconditions_hold_every_step() {
        let problem = ResourceAllocationSpec {
            seed: 5,
            ..Default::default()
        }
        .build()
        .unwrap();
        let schedule = make_ring_partition_schedule(10, 4, 0.8).unwrap();
        let params = ParamSchedule::standard(1.0).unwrap();
        let mut engine =
            Bdpp::new(problem, schedule, params.clone(), EngineOptions::default()).unwrap();
        for t in 1..=300 {
            let before: Vec<Vec<f64>> = engine.states().iter().map(|s| s.queue.clone()).collect();
            let round = engine.schedule.round_at(t - 1).clone();
            let mixed = network::mix(&round, &before).unwrap();
            let lhs: f64 = mixed.iter().map(|m| m[0]).sum();
            let rhs: f64 = before.iter().map(|m| m[0]).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
            engine.step().unwrap();
            for (s, a) in engine.states().iter().zip(engine.problem().agents()) {
                assert!(a.feasible_set.contains(&s.x));
                assert!(s.queue[0] >= params.gamma(t));
            }
        }
    }

    #[test]
    fn determinism() {
        let problem = ResourceAllocationSpec::default().build().unwrap();
        let schedule = make_ring_partition_schedule(10, 4, 1.0).unwrap();
        let params = ParamSchedule::standard(0.27).unwrap();
        let a = run(&problem, &schedule, &params, 500, 9).unwrap();
        let b = run(&problem, &schedule, &params, 500, 9).unwrap();
        assert_eq!(a, b);
        let c = run(&problem, &schedule, &params, 500, 10).unwrap();
        assert_ne!(a.records[0], c.records[0]);
    }

    #[test]
    fn stride_keeps_final_iteration() {
        let s = RecordStride::Every(7);
        assert!(s.keeps(14, 20));
        assert!(!s.keeps(15, 20));
        assert!(s.keeps(20, 20));
        let d = RecordStride::Default;
        assert!(d.keeps(999, 5000));
        assert!(!d.keeps(1001, 5000));
        assert!(d.keeps(1010, 5000));
    }

    #[test]
    fn rejects_invalid_params_and_sizes() {
        let bad = ParamSchedule::constant(1.0, 0.0, 0.0);
        let mut engine = Bdpp::new(
            single_agent(),
            identity_schedule(1),
            bad,
            EngineOptions::default(),
        )
        .unwrap();
        assert!(engine.step().is_err());
        assert!(Bdpp::new(
            single_agent(),
            identity_schedule(2),
            ParamSchedule::standard(1.0).unwrap(),
            EngineOptions::default(),
        )
        .is_err());
        assert!(ParamSchedule::standard(-1.0).is_err());
    }

    #[test]
    fn solver_errors_carry_agent_and_time() {
        // corrupt one queue so that agent 1's subproblem is rejected
        let a = AgentProblem::new(
            ScalarConvexFn::quadratic(vec![0.0], 1.0),
            ConstraintMap::new(vec![ScalarConvexFn::affine(vec![1.0], -1.0)]),
            BoxSet::uniform(1, 0.0, 2.0).unwrap(),
        )
        .unwrap();
        let problem = CoupledProblem::new(vec![a.clone(), a], None).unwrap();
        let mut engine = Bdpp::new(
            problem,
            identity_schedule(2),
            ParamSchedule::new(|_| f64::MIN_POSITIVE, |_| 1.0, |_| 0.0, 0.0),
            EngineOptions {
                f_bound: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        engine.states[1].queue = vec![f64::NAN];
        match engine.step() {
            Err(Error::Agent { agent, t, .. }) => assert_eq!((agent, t), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
