//! Reference methods: centralized drift-plus-penalty with a single global
//! queue, and a distributed dual subgradient baseline with mixed multipliers.
//!
//! The dual subgradient method is a plain baseline (mix, local argmin of the
//! Lagrangian, projected ascent, primal running averages), not a replication
//! of any specific published variant.

use std::fmt;
use std::sync::Arc;

use crate::algorithm::{sum_vectors, InitialPoint, IterationRecord, Method, INVARIANT_TOL};
use crate::error::{Error, Result};
use crate::local_solver::{self, SubproblemSpec};
use crate::network::{self, GraphSchedule};
use crate::problem::{norm, CoupledProblem};

/// State of centralized drift-plus-penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct DppState {
    pub x: Vec<Vec<f64>>,
    pub queue: Vec<f64>,
    pub v_param: f64,
}

/// `x ← argmin_X V f(x) + ⟨μ, g(x)⟩` (separable over agents), then
/// `μ ← max(μ + g(x), 0)`.
pub fn dpp_step(problem: &CoupledProblem, state: &DppState) -> Result<DppState> {
    if !(state.v_param > 0.0) {
        return Err(Error::invalid(format!(
            "V must be > 0, got {}",
            state.v_param
        )));
    }
    let p = problem.constraint_dim();
    if state.queue.len() != p {
        return Err(Error::invalid(
            "queue length differs from constraint dimension",
        ));
    }
    let mut x = Vec::with_capacity(problem.n_agents());
    let mut g = vec![0.0; p];
    for (i, agent) in problem.agents().iter().enumerate() {
        let spec = SubproblemSpec::without_prox(agent, state.v_param, &state.queue)
            .map_err(|e| e.at_agent(i, 0))?;
        let xi = local_solver::solve(&spec).map_err(|e| e.at_agent(i, 0))?;
        agent.constraint.accumulate(&xi, &mut g);
        x.push(xi);
    }
    let queue = state
        .queue
        .iter()
        .zip(&g)
        .map(|(m, gv)| (m + gv).max(0.0))
        .collect();
    Ok(DppState {
        x,
        queue,
        v_param: state.v_param,
    })
}

/// Centralized drift-plus-penalty driven through [`Method`].
///
/// `lemma1_slack` in its records is `μ_t − Σ_{k≤t} g(x_k)`, which the clamp
/// keeps nonnegative.
#[derive(Debug, Clone)]
pub struct Dpp {
    problem: CoupledProblem,
    state: DppState,
    sum_x: Vec<Vec<f64>>,
    t: usize,
    cum_g: Vec<f64>,
    f_star: f64,
    invariant_tol: Option<f64>,
}

impl Dpp {
    pub fn new(problem: CoupledProblem, v: f64, init: InitialPoint, f_star: f64) -> Result<Self> {
        let x = init.resolve(&problem)?;
        let p = problem.constraint_dim();
        Ok(Dpp {
            sum_x: x.iter().map(|xi| vec![0.0; xi.len()]).collect(),
            state: DppState {
                x,
                queue: vec![0.0; p],
                v_param: v,
            },
            problem,
            t: 0,
            cum_g: vec![0.0; p],
            f_star,
            invariant_tol: Some(INVARIANT_TOL),
        })
    }

    pub fn state(&self) -> &DppState {
        &self.state
    }
}

impl Method for Dpp {
    fn name(&self) -> &str {
        "dpp"
    }

    fn iterations(&self) -> usize {
        self.t
    }

    fn step(&mut self) -> Result<IterationRecord> {
        let next = dpp_step(&self.problem, &self.state).map_err(|e| match e {
            Error::Agent { agent, source, .. } => Error::Agent {
                agent,
                t: self.t,
                source,
            },
            other => other,
        })?;
        self.t += 1;
        for ((s, xi), a) in self
            .sum_x
            .iter_mut()
            .zip(&next.x)
            .zip(self.problem.agents())
        {
            for (acc, v) in s.iter_mut().zip(xi) {
                *acc += v;
            }
            a.constraint.accumulate(xi, &mut self.cum_g);
        }
        let slack: Vec<f64> = next
            .queue
            .iter()
            .zip(&self.cum_g)
            .map(|(m, g)| m - g)
            .collect();
        if let Some(tol) = self.invariant_tol {
            if let Some(s) = slack.iter().find(|s| **s < -tol) {
                return Err(Error::Invariant {
                    t: self.t,
                    detail: format!("queue no longer dominates cumulative violation, slack {s:e}"),
                });
            }
        }
        self.state = next;
        let avg = self.averages();
        let (objective, violation) = self.problem.eval_unchecked(&avg);
        Ok(IterationRecord {
            t: self.t,
            objective,
            objective_error: objective - self.f_star,
            violation,
            queue_sum_norm: norm(&self.state.queue),
            drift: None,
            drift_bound: None,
            lemma1_slack: Some(slack),
        })
    }

    fn current_x(&self) -> Vec<Vec<f64>> {
        self.state.x.clone()
    }

    fn averages(&self) -> Vec<Vec<f64>> {
        running_average(&self.sum_x, self.t, &self.state.x)
    }
}

fn running_average(sum_x: &[Vec<f64>], t: usize, fallback: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if t == 0 {
        return fallback.to_vec();
    }
    sum_x
        .iter()
        .map(|s| s.iter().map(|v| v / t as f64).collect())
        .collect()
}

type StepFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Dual ascent step size as a function of the 0-based iteration index.
#[derive(Clone)]
pub struct StepSize {
    f: StepFn,
    pub label: String,
}

impl fmt::Debug for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StepSize({})", self.label)
    }
}

impl StepSize {
    pub fn new(label: impl Into<String>, f: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        StepSize {
            f: Arc::new(f),
            label: label.into(),
        }
    }

    /// `scale / (t + 1)`.
    pub fn harmonic(scale: f64) -> Self {
        StepSize::new(format!("{scale}/(t+1)"), move |t| scale / (t as f64 + 1.0))
    }

    pub fn at(&self, t: usize) -> f64 {
        (self.f)(t)
    }
}

/// State of the dual subgradient baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSubgradState {
    pub x: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub sum_x: Vec<Vec<f64>>,
    pub iter_count: usize,
}

impl DualSubgradState {
    pub fn new(x: Vec<Vec<f64>>, p: usize) -> Self {
        DualSubgradState {
            lambda: vec![vec![0.0; p]; x.len()],
            sum_x: x.iter().map(|xi| vec![0.0; xi.len()]).collect(),
            x,
            iter_count: 0,
        }
    }

    pub fn averages(&self) -> Vec<Vec<f64>> {
        running_average(&self.sum_x, self.iter_count, &self.x)
    }
}

/// `λ̂_i = Σ_j W[i][j] λ_j`, `x_i = argmin_{X_i} f_i + ⟨λ̂_i, g_i⟩`,
/// `λ_i ← max(λ̂_i + α_t g_i(x_i), 0)`.
pub fn dual_subgrad_step(
    problem: &CoupledProblem,
    schedule: &GraphSchedule,
    state: &DualSubgradState,
    t: usize,
    step: &StepSize,
) -> Result<DualSubgradState> {
    let alpha = step.at(t);
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "step size at t={t} must be > 0, got {alpha}"
        )));
    }
    let lambda_hat = network::mix(schedule.round_at(t), &state.lambda)?;
    let mut x = Vec::with_capacity(problem.n_agents());
    let mut lambda = Vec::with_capacity(problem.n_agents());
    let mut sum_x = state.sum_x.clone();
    for (i, agent) in problem.agents().iter().enumerate() {
        let spec = SubproblemSpec::without_prox(agent, 1.0, &lambda_hat[i])
            .map_err(|e| e.at_agent(i, t))?;
        let xi = local_solver::solve(&spec).map_err(|e| e.at_agent(i, t))?;
        let g = agent.constraint.eval(&xi);
        lambda.push(
            lambda_hat[i]
                .iter()
                .zip(&g)
                .map(|(l, gv)| (l + alpha * gv).max(0.0))
                .collect(),
        );
        for (s, v) in sum_x[i].iter_mut().zip(&xi) {
            *s += v;
        }
        x.push(xi);
    }
    Ok(DualSubgradState {
        x,
        lambda,
        sum_x,
        iter_count: state.iter_count + 1,
    })
}

/// Dual subgradient baseline driven through [`Method`].
#[derive(Debug, Clone)]
pub struct DualSubgradient {
    problem: CoupledProblem,
    schedule: GraphSchedule,
    step: StepSize,
    state: DualSubgradState,
    f_star: f64,
}

impl DualSubgradient {
    pub fn new(
        problem: CoupledProblem,
        schedule: GraphSchedule,
        step: StepSize,
        init: InitialPoint,
        f_star: f64,
    ) -> Result<Self> {
        if schedule.n_agents() != problem.n_agents() {
            return Err(Error::invalid("schedule and problem disagree on N"));
        }
        let x = init.resolve(&problem)?;
        let p = problem.constraint_dim();
        Ok(DualSubgradient {
            state: DualSubgradState::new(x, p),
            problem,
            schedule,
            step,
            f_star,
        })
    }

    pub fn state(&self) -> &DualSubgradState {
        &self.state
    }
}

impl Method for DualSubgradient {
    fn name(&self) -> &str {
        "dual_subgrad"
    }

    fn iterations(&self) -> usize {
        self.state.iter_count
    }

    fn step(&mut self) -> Result<IterationRecord> {
        let t = self.state.iter_count;
        self.state = dual_subgrad_step(&self.problem, &self.schedule, &self.state, t, &self.step)?;
        let avg = self.state.averages();
        let (objective, violation) = self.problem.eval_unchecked(&avg);
        let p = self.problem.constraint_dim();
        Ok(IterationRecord {
            t: t + 1,
            objective,
            objective_error: objective - self.f_star,
            violation,
            queue_sum_norm: norm(&sum_vectors(&self.state.lambda, p)),
            drift: None,
            drift_bound: None,
            lemma1_slack: None,
        })
    }

    fn current_x(&self) -> Vec<Vec<f64>> {
        self.state.x.clone()
    }

    fn averages(&self) -> Vec<Vec<f64>> {
        self.state.averages()
    }
}
