//! Per-agent subproblem
//! `argmin_{x ∈ X_i} v·f_i(x) + ⟨q, g_i(x)⟩ + η‖x − anchor‖²`.
//!
//! The prox term carries no ½, so its gradient is `2η(x − anchor)`.

use log::warn;

use crate::error::{Error, Result};
use crate::problem::{dot, AgentProblem, ScalarConvexFn};

/// Default accuracy of [`solve_projected`] when used as a fallback.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

const MAX_BACKTRACKS: usize = 60;

/// Inputs of one subproblem.
#[derive(Debug, Clone, Copy)]
pub struct SubproblemSpec<'a> {
    pub agent: &'a AgentProblem,
    pub v: f64,
    pub queue: &'a [f64],
    pub eta: f64,
    pub anchor: &'a [f64],
}

impl<'a> SubproblemSpec<'a> {
    /// Validated spec with a strictly positive prox weight.
    pub fn new(
        agent: &'a AgentProblem,
        v: f64,
        queue: &'a [f64],
        eta: f64,
        anchor: &'a [f64],
    ) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::invalid(format!("eta must be > 0, got {eta}")));
        }
        Self::build(agent, v, queue, eta, anchor)
    }

    /// Spec without the prox term (`η = 0`), as used by the dual baselines.
    pub fn without_prox(agent: &'a AgentProblem, v: f64, queue: &'a [f64]) -> Result<Self> {
        let anchor = agent.feasible_set.lower();
        Self::build(agent, v, queue, 0.0, anchor)
    }

    fn build(
        agent: &'a AgentProblem,
        v: f64,
        queue: &'a [f64],
        eta: f64,
        anchor: &'a [f64],
    ) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("v must be finite and > 0, got {v}")));
        }
        if !eta.is_finite() {
            return Err(Error::invalid("eta must be finite"));
        }
        if queue.len() != agent.constraint_dim() {
            return Err(Error::invalid(format!(
                "queue has length {}, constraint has {} rows",
                queue.len(),
                agent.constraint_dim()
            )));
        }
        if let Some(q) = queue.iter().find(|q| !(**q >= 0.0) || !q.is_finite()) {
            return Err(Error::invalid(format!("queue entry {q} is not ≥ 0")));
        }
        if anchor.len() != agent.dim() {
            return Err(Error::invalid(format!(
                "anchor has length {}, agent dimension is {}",
                anchor.len(),
                agent.dim()
            )));
        }
        Ok(SubproblemSpec {
            agent,
            v,
            queue,
            eta,
            anchor,
        })
    }

    /// Subproblem objective at `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut s = self.v * self.agent.objective.value(x);
        for (q, row) in self.queue.iter().zip(&self.agent.constraint.rows) {
            if *q != 0.0 {
                s += q * row.value(x);
            }
        }
        if self.eta != 0.0 {
            s += self.eta * dist_sq(x, self.anchor);
        }
        s
    }

    /// A subgradient of the subproblem objective at `x`.
    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut s: Vec<f64> = self
            .agent
            .objective
            .subgradient(x)
            .into_iter()
            .map(|v| self.v * v)
            .collect();
        for (q, row) in self.queue.iter().zip(&self.agent.constraint.rows) {
            if *q != 0.0 {
                for (a, b) in s.iter_mut().zip(row.subgradient(x)) {
                    *a += q * b;
                }
            }
        }
        for (a, (xk, ck)) in s.iter_mut().zip(x.iter().zip(self.anchor)) {
            *a += 2.0 * self.eta * (xk - ck);
        }
        s
    }

    /// Lower bound on the strong-convexity modulus (in the `μ/2‖·‖²` convention),
    /// collected from the prox term and any quadratic pieces.
    pub fn strong_convexity(&self) -> f64 {
        let mut m = 2.0 * self.eta;
        if let ScalarConvexFn::Quadratic { weight, .. } = self.agent.objective {
            m += self.v * weight;
        }
        for (q, row) in self.queue.iter().zip(&self.agent.constraint.rows) {
            if let ScalarConvexFn::Quadratic { weight, .. } = row {
                m += q * weight;
            }
        }
        m
    }

    /// Upper bound on `S(x) − min S` from one subgradient `s` at `x`:
    /// `max_{y ∈ X} ⟨s, x − y⟩ − μ/2‖y − x‖²`, separable over the box.
    pub fn gap_bound(&self, x: &[f64], s: &[f64]) -> f64 {
        let mu = self.strong_convexity();
        let set = &self.agent.feasible_set;
        let mut gap = 0.0;
        for k in 0..x.len() {
            let (l, u) = (set.lower()[k], set.upper()[k]);
            let y = if mu > 0.0 {
                (x[k] - s[k] / mu).clamp(l, u)
            } else if s[k] > 0.0 {
                l
            } else {
                u
            };
            let d = y - x[k];
            gap += -s[k] * d - 0.5 * mu * d * d;
        }
        gap.max(0.0)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact minimizer for a quadratic or affine objective with affine constraint rows.
///
/// The objective is separable per coordinate, so clipping the unconstrained
/// stationary point to the box is exact.
pub fn solve_closed_form(spec: &SubproblemSpec<'_>) -> Result<Vec<f64>> {
    let agent = spec.agent;
    let d = agent.dim();
    let (mut num, mut den) = match &agent.objective {
        ScalarConvexFn::Quadratic { center, weight } => (
            center
                .iter()
                .map(|a| spec.v * weight * a)
                .collect::<Vec<_>>(),
            spec.v * weight,
        ),
        ScalarConvexFn::Affine { slope, .. } => {
            (slope.iter().map(|c| -spec.v * c).collect::<Vec<_>>(), 0.0)
        }
        ScalarConvexFn::Custom(_) => {
            return Err(Error::UnsupportedKind("custom objective".into()));
        }
    };
    for (q, row) in spec.queue.iter().zip(&agent.constraint.rows) {
        match row {
            ScalarConvexFn::Affine { slope, .. } => {
                for (n, s) in num.iter_mut().zip(slope) {
                    *n -= q * s;
                }
            }
            _ => return Err(Error::UnsupportedKind("non-affine constraint row".into())),
        }
    }
    den += 2.0 * spec.eta;
    for (n, c) in num.iter_mut().zip(spec.anchor) {
        *n += 2.0 * spec.eta * c;
    }
    let set = &agent.feasible_set;
    let mut x = vec![0.0; d];
    for k in 0..d {
        let (l, u) = (set.lower()[k], set.upper()[k]);
        x[k] = if den > 0.0 {
            (num[k] / den).clamp(l, u)
        } else if num[k] > 0.0 {
            // linear coefficient is −num: decreasing in x
            u
        } else if num[k] < 0.0 {
            l
        } else {
            spec.anchor[k].clamp(l, u)
        };
    }
    Ok(x)
}

/// Result of [`solve_projected`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Certified upper bound on the optimality gap of `x`.
    pub gap_bound: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected (sub)gradient descent with backtracking, certified by
/// [`SubproblemSpec::gap_bound`]. Falls back to diminishing steps when
/// backtracking stalls at a kink.
pub fn solve_projected(
    spec: &SubproblemSpec<'_>,
    tol: f64,
    max_iters: usize,
) -> Result<ProjectedSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be > 0, got {tol}")));
    }
    let set = &spec.agent.feasible_set;
    let mu = spec.strong_convexity();
    let scale = set.diameter().max(1.0);

    let mut x = set.projected(spec.anchor);
    let mut fx = spec.objective(&x);
    let mut best = (x.clone(), fx, f64::INFINITY);
    let mut step = 1.0 / mu.max(1.0);
    let mut fallback_k = 0usize;

    for iter in 0..max_iters {
        let s = spec.subgradient(&x);
        let gap = spec.gap_bound(&x, &s);
        if fx < best.1 || (fx == best.1 && gap < best.2) {
            best = (x.clone(), fx, gap);
        }
        if gap <= tol {
            return Ok(ProjectedSolution {
                objective: fx,
                x,
                gap_bound: gap,
                iterations: iter,
                converged: true,
            });
        }

        let slack = 1e-15 * fx.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = x.iter().zip(&s).map(|(a, g)| a - step * g).collect();
            let cand = set.projected(&cand);
            let fc = spec.objective(&cand);
            let diff: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let model = fx + dot(&s, &diff) + dot(&diff, &diff) / (2.0 * step);
            if fc <= model + slack {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                x = cand;
                fx = fc;
                step *= 2.0;
            }
            None => {
                fallback_k += 1;
                let sn = s.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let alpha = if mu > 0.0 {
                    1.0 / (mu * fallback_k as f64)
                } else {
                    scale / (sn * (fallback_k as f64).sqrt())
                };
                let cand: Vec<f64> = x.iter().zip(&s).map(|(a, g)| a - alpha * g).collect();
                x = set.projected(&cand);
                fx = spec.objective(&x);
                step = 1.0 / mu.max(1.0);
            }
        }
    }

    let (x, objective, _) = best;
    let gap_bound = spec.gap_bound(&x, &spec.subgradient(&x));
    warn!(
        "projected solver stopped after {max_iters} iterations with gap bound {gap_bound:.3e} > tol {tol:.1e}"
    );
    Ok(ProjectedSolution {
        x,
        objective,
        gap_bound,
        iterations: max_iters,
        converged: gap_bound <= tol,
    })
}

/// Closed form when the kinds allow it, otherwise the projected solver with
/// default settings.
pub fn solve(spec: &SubproblemSpec<'_>) -> Result<Vec<f64>> {
    if spec.agent.has_closed_form() {
        solve_closed_form(spec)
    } else {
        Ok(solve_projected(spec, DEFAULT_TOL, DEFAULT_MAX_ITERS)?.x)
    }
}
