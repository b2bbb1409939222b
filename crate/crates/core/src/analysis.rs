//! Theoretical constants, the ground-truth KKT oracle for separable quadratic
//! instances, and run metrics measured against it.

use serde::{Deserialize, Serialize};

use crate::algorithm::RunResult;
use crate::error::{Error, Result};
use crate::network::GraphSchedule;
use crate::problem::{dot, CoupledProblem, ScalarConvexFn};

/// `t1` above this is flagged as out of reach at desk scale.
pub const VACUOUS_T1: f64 = 1e8;

/// Inputs to [`compute_bounds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsInput {
    /// Uniform bound on `‖g_i‖` over the boxes.
    pub f: f64,
    /// Uniform bound on the variation of `f_i` over the boxes.
    pub g: f64,
    /// Largest box diameter.
    pub r: f64,
    /// Slater slack.
    pub eps: f64,
    pub n: usize,
    pub b: usize,
    /// Smallest positive mixing weight.
    pub a: f64,
    pub p: usize,
    pub buffer_c: f64,
    /// Replaces the default `σ = δ`.
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl BoundsInput {
    /// Reads `F, G, R, ε` from the problem and `a, B` from the schedule.
    pub fn from_instance(
        problem: &CoupledProblem,
        schedule: &GraphSchedule,
        buffer_c: f64,
    ) -> Result<Self> {
        let k = problem.problem_constants()?;
        Ok(BoundsInput {
            f: k.f_bound,
            g: k.g_bound,
            r: k.diameter,
            eps: problem.slater_slack()?,
            n: problem.n_agents(),
            b: schedule.window(),
            a: schedule.min_weight(),
            p: problem.constraint_dim(),
            buffer_c,
            sigma: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub input: BoundsInput,
    pub r: f64,
    pub beta: f64,
    pub delta: f64,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub cf: f64,
    pub cg: f64,
    pub c0: f64,
    /// `None` when `C ≤ 4σ + C1`.
    pub t1: Option<f64>,
    /// The log term of `C1` had argument `≤ 1` and was clamped to 0.
    pub degenerate: bool,
    /// `t1` missing or above [`VACUOUS_T1`].
    pub vacuous: bool,
}

impl BoundsReport {
    pub fn objective_bound(&self, t: usize) -> f64 {
        self.cf / (t as f64).sqrt()
    }

    pub fn violation_bound(&self, t: usize) -> f64 {
        self.cg / (t as f64).sqrt()
    }
}

pub fn compute_bounds(input: &BoundsInput) -> Result<BoundsReport> {
    let BoundsInput {
        f,
        g,
        r: rr,
        eps,
        n,
        b,
        a,
        p,
        buffer_c: c,
        sigma,
    } = *input;
    for (name, v) in [("F", f), ("G", g), ("R", rr), ("eps", eps), ("C", c)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if n == 0 || b == 0 || p == 0 {
        return Err(Error::invalid("N, B and p must be at least 1"));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid(format!("a must lie in (0,1), got {a}")));
    }
    let nf = n as f64;
    let pf = p as f64;
    let sp = pf.sqrt();

    let q = 1.0 - a / (2.0 * nf * nf);
    let r = q.powi(-2);
    let beta = q.powf(1.0 / b as f64);
    let delta = f + sp * eps / (2.0 * nf);
    let sigma = match sigma {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::invalid(format!("sigma must be >= 0, got {s}"))),
        None => delta,
    };
    let one_b = 1.0 - beta;

    let log_arg = 8.0 * delta * delta / (eps * eps);
    let degenerate = log_arg <= 1.0;
    let log_term = if degenerate {
        0.0
    } else {
        8.0 * delta * delta / eps * log_arg.ln()
    };
    let c1 = log_term
        + (4.0 * nf * f * r * sp + 2.0 * r * pf * eps) / one_b
        + (8.0 * nf * g * rr + 16.0 * nf * rr * rr) / eps;

    let k = 2.0 * nf * c / eps;
    let c2 = sp * c * k * k
        + (6.0 + k.powi(4)) * delta
        + 24.0 * nf * f * f / eps
        + (8.0 * nf * nf * f * f * r + 4.0 * nf * f * r * sp) / (eps * one_b)
        + (24.0 * nf * f * pf + 8.0 * pf * eps) / nf;

    let cf = 12.0 * nf * f * f
        + 16.0 * nf * pf * c * c
        + 16.0 * nf * f * pf * c
        + 4.0 * nf * nf * r * (f + sp * c).powi(2) / one_b
        + 2.0 * pf * c * (c1 + c2 + 4.0 * sigma)
        + 2.0 * rr * rr
        + 2.0;
    let cg = nf * (4.0 * sigma + c1 + c2 - c);
    let c0 = 4.0 * sigma + c1 + 1.0;
    let margin = c - 4.0 * sigma - c1;
    let t1 = (margin > 0.0).then(|| (c2 / margin).powi(2).ceil());
    let vacuous = t1.is_none_or(|t| !(t <= VACUOUS_T1));

    Ok(BoundsReport {
        input: *input,
        r,
        beta,
        delta,
        sigma,
        c1,
        c2,
        cf,
        cg,
        c0,
        t1,
        degenerate,
        vacuous,
    })
}

/// KKT residuals of an oracle solution; all are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Largest `‖x_i − P_{X_i}(x_i − ∇_x L)‖_∞`.
    pub stationarity: f64,
    /// Largest positive component of `Σ g_i(x_i)`.
    pub primal: f64,
    /// Largest negative component of `λ`.
    pub dual: f64,
    /// `|⟨λ, Σ g_i(x_i)⟩|`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub x_star: Vec<Vec<f64>>,
    pub f_star: f64,
    pub lambda_star: Vec<f64>,
    pub residuals: KktResiduals,
    pub iterations: usize,
    /// True when every residual is within the requested tolerance.
    pub certified: bool,
}

struct QuadAgent<'a> {
    center: &'a [f64],
    weight: f64,
    /// Row `j` is the slope of constraint `j`.
    rows: Vec<&'a [f64]>,
    lower: &'a [f64],
    upper: &'a [f64],
}

impl QuadAgent<'_> {
    fn argmin(&self, lambda: &[f64]) -> Vec<f64> {
        (0..self.center.len())
            .map(|k| {
                let pull: f64 = self.rows.iter().zip(lambda).map(|(d, l)| l * d[k]).sum();
                (self.center[k] - pull / self.weight).clamp(self.lower[k], self.upper[k])
            })
            .collect()
    }

    fn stationarity(&self, x: &[f64], lambda: &[f64]) -> f64 {
        (0..x.len())
            .map(|k| {
                let grad = self.weight * (x[k] - self.center[k])
                    + self
                        .rows
                        .iter()
                        .zip(lambda)
                        .map(|(d, l)| l * d[k])
                        .sum::<f64>();
                let moved = (x[k] - grad).clamp(self.lower[k], self.upper[k]);
                (x[k] - moved).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn quad_agents(problem: &CoupledProblem) -> Result<Vec<QuadAgent<'_>>> {
    problem
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (center, weight) = match &a.objective {
                ScalarConvexFn::Quadratic { center, weight } if *weight > 0.0 => {
                    (center.as_slice(), *weight)
                }
                _ => {
                    return Err(Error::UnsupportedKind(format!(
                        "oracle needs a strictly convex quadratic objective (agent {i})"
                    )))
                }
            };
            let rows = a
                .constraint
                .rows
                .iter()
                .map(|row| match row {
                    ScalarConvexFn::Affine { slope, .. } => Ok(slope.as_slice()),
                    _ => Err(Error::UnsupportedKind(format!(
                        "oracle needs affine constraints (agent {i})"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(QuadAgent {
                center,
                weight,
                rows,
                lower: a.feasible_set.lower(),
                upper: a.feasible_set.upper(),
            })
        })
        .collect()
}

fn primal_at(agents: &[QuadAgent<'_>], lambda: &[f64]) -> Vec<Vec<f64>> {
    agents.iter().map(|a| a.argmin(lambda)).collect()
}

const LAMBDA_CAP: f64 = 1e12;

/// Solves the instance exactly (up to `tol`) by dualizing the coupled constraint.
///
/// With one coupled row the multiplier is found by bisection on the
/// nonincreasing map `λ ↦ Σ g_i(x_i(λ))`; with several rows by projected
/// gradient ascent on the dual. Objectives must be `Quadratic` with positive
/// weight and constraints `Affine`.
pub fn kkt_oracle(problem: &CoupledProblem, tol: f64) -> Result<OracleSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be > 0, got {tol}")));
    }
    let agents = quad_agents(problem)?;
    let p = problem.constraint_dim();
    let h = |lambda: &[f64]| problem.eval_unchecked(&primal_at(&agents, lambda)).1;

    let (lambda, iterations) = if p == 1 {
        bisect(&h)?
    } else {
        dual_ascent(&agents, &h, p, tol)?
    };

    let x_star = primal_at(&agents, &lambda);
    let (f_star, g) = problem.eval_unchecked(&x_star);
    let residuals = KktResiduals {
        stationarity: agents
            .iter()
            .zip(&x_star)
            .map(|(a, x)| a.stationarity(x, &lambda))
            .fold(0.0, f64::max),
        primal: g.iter().copied().fold(0.0, f64::max),
        dual: lambda.iter().map(|l| -l).fold(0.0, f64::max),
        complementarity: dot(&lambda, &g).abs(),
    };
    Ok(OracleSolution {
        x_star,
        f_star,
        lambda_star: lambda,
        certified: residuals.max() <= tol,
        residuals,
        iterations,
    })
}

fn bisect(h: &impl Fn(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, usize)> {
    if h(&[0.0])[0] <= 0.0 {
        return Ok((vec![0.0], 0));
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while h(&[hi])[0] > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > LAMBDA_CAP {
            return Err(Error::Infeasible(
                "coupled constraint stays violated as the multiplier grows".into(),
            ));
        }
    }
    // Shrink to adjacent floats; `hi` always stays on the feasible side.
    let mut iters = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(&[mid])[0] > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    Ok((vec![hi], iters))
}

fn dual_ascent(
    agents: &[QuadAgent<'_>],
    h: &impl Fn(&[f64]) -> Vec<f64>,
    p: usize,
    tol: f64,
) -> Result<(Vec<f64>, usize)> {
    // Lipschitz constant of the dual gradient.
    let lip: f64 = agents
        .iter()
        .map(|a| {
            a.rows
                .iter()
                .map(|d| d.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                / a.weight
        })
        .sum();
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut lambda = vec![0.0; p];
    const MAX_ITERS: usize = 1_000_000;
    for it in 0..MAX_ITERS {
        let grad = h(&lambda);
        let residual = lambda
            .iter()
            .zip(&grad)
            .map(|(l, g)| (l - (l + g).max(0.0)).abs())
            .fold(0.0, f64::max);
        if residual <= tol * 1e-2 {
            return Ok((lambda, it));
        }
        for (l, g) in lambda.iter_mut().zip(&grad) {
            *l = (*l + step * g).max(0.0);
        }
        if lambda.iter().any(|l| *l > LAMBDA_CAP) {
            return Err(Error::Infeasible(
                "dual ascent diverged; the coupled constraint looks infeasible".into(),
            ));
        }
    }
    log::warn!("dual ascent hit {MAX_ITERS} iterations before reaching tolerance");
    Ok((lambda, MAX_ITERS))
}

/// Per-record metrics against the oracle optimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub t: usize,
    pub objective_error: f64,
    pub violation: Vec<f64>,
    pub max_violation: f64,
    /// `√t · |objective error|`.
    pub scaled_error: f64,
    /// `√t · max(max violation, 0)`.
    pub scaled_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub f_star: f64,
    pub rows: Vec<MetricsRow>,
    /// Smallest recorded `t` with `Σ g_i(x̄_{i,t}) ≤ 0`.
    pub first_feasible_t: Option<usize>,
    /// Smallest recorded `t` from which every later record is feasible.
    pub feasible_from_t: Option<usize>,
}

impl RunMetrics {
    /// Largest scaled value over records with `t` in `[lo, hi]`.
    pub fn max_scaled_error(&self, lo: usize, hi: usize) -> f64 {
        self.rows
            .iter()
            .filter(|r| (lo..=hi).contains(&r.t))
            .map(|r| r.scaled_error)
            .fold(0.0, f64::max)
    }

    pub fn max_scaled_violation(&self, lo: usize, hi: usize) -> f64 {
        self.rows
            .iter()
            .filter(|r| (lo..=hi).contains(&r.t))
            .map(|r| r.scaled_violation)
            .fold(0.0, f64::max)
    }

    pub fn row_at(&self, t: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.t == t)
    }
}

pub fn metrics(run: &RunResult, oracle: &OracleSolution) -> RunMetrics {
    let rows: Vec<MetricsRow> = run
        .records
        .iter()
        .map(|rec| {
            let objective_error = rec.objective - oracle.f_star;
            let max_violation = rec.max_violation();
            let st = (rec.t as f64).sqrt();
            MetricsRow {
                t: rec.t,
                objective_error,
                violation: rec.violation.clone(),
                max_violation,
                scaled_error: st * objective_error.abs(),
                scaled_violation: st * max_violation.max(0.0),
            }
        })
        .collect();
    let first_feasible_t = rows.iter().find(|r| r.max_violation <= 0.0).map(|r| r.t);
    let feasible_from_t = match rows.iter().rposition(|r| r.max_violation > 0.0) {
        None => rows.first().map(|r| r.t),
        Some(k) => rows.get(k + 1).map(|r| r.t),
    };
    RunMetrics {
        f_star: oracle.f_star,
        rows,
        first_feasible_t,
        feasible_from_t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithm::{IterationRecord, RunResult, RunSummary};
    use crate::problem::{AgentProblem, BoxSet, ConstraintMap, ResourceAllocationSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn input() -> BoundsInput {
        BoundsInput {
            f: 2.0,
            g: 1.5,
            r: 2.0,
            eps: 0.5,
            n: 10,
            b: 4,
            a: 0.2,
            p: 1,
            buffer_c: 0.27,
            sigma: None,
        }
    }

    fn two_agent(a: [f64; 2], cap: f64) -> CoupledProblem {
        let agents = a
            .iter()
            .map(|ai| {
                AgentProblem::new(
                    ScalarConvexFn::quadratic(vec![*ai], 1.0),
                    ConstraintMap::new(vec![ScalarConvexFn::affine(vec![1.0], -cap / 2.0)]),
                    BoxSet::uniform(1, 0.0, 2.0).unwrap(),
                )
                .unwrap()
            })
            .collect();
        CoupledProblem::new(agents, None).unwrap()
    }

    #[test]
    fn consensus_constants() {
        let rep = compute_bounds(&BoundsInput { n: 2, ..input() }).unwrap();
        assert!((rep.r - 0.975f64.powi(-2)).abs() < 1e-15);
        assert!((rep.r - 1.05194).abs() < 1e-5);
        assert!((rep.beta - 0.99369).abs() < 1e-5);
        assert!(rep.r > 1.0 && rep.beta < 1.0);
    }

    #[test]
    fn delta_and_sigma_default() {
        let rep = compute_bounds(&input()).unwrap();
        assert!((rep.delta - 2.025).abs() < 1e-15);
        assert_eq!(rep.sigma, rep.delta);
        let over = compute_bounds(&BoundsInput {
            sigma: Some(0.0),
            ..input()
        })
        .unwrap();
        assert_eq!(over.sigma, 0.0);
        assert!(over.c0 < rep.c0);
    }

    #[test]
    fn c0_gives_unit_denominator() {
        let base = compute_bounds(&input()).unwrap();
        let at_c0 = compute_bounds(&BoundsInput {
            buffer_c: base.c0,
            ..input()
        })
        .unwrap();
        assert_eq!(at_c0.c0, base.c0);
        assert_eq!(at_c0.t1, Some((at_c0.c2 * at_c0.c2).ceil()));
        assert!(base.t1.is_none() && base.vacuous);
    }

    #[test]
    fn constants_are_hand_evaluable() {
        // Recompute C1 term by term for the default inputs.
        let rep = compute_bounds(&input()).unwrap();
        let (n, f, g, rr, eps) = (10.0, 2.0, 1.5, 2.0, 0.5);
        let q: f64 = 1.0 - 0.2 / 200.0;
        let r = 1.0 / (q * q);
        let beta = q.powf(0.25);
        let d: f64 = 2.025;
        let c1 = 8.0 * d * d / eps * (8.0 * d * d / (eps * eps)).ln()
            + (4.0 * n * f * r + 2.0 * r * eps) / (1.0 - beta)
            + (8.0 * n * g * rr + 16.0 * n * rr * rr) / eps;
        assert!((rep.c1 - c1).abs() <= 1e-12 * c1);
        assert_eq!(rep.c0, 4.0 * d + rep.c1 + 1.0);
        assert!(!rep.degenerate);
    }

    #[test]
    fn degenerate_log_is_flagged() {
        let rep = compute_bounds(&BoundsInput {
            f: 0.1,
            eps: 10.0,
            ..input()
        })
        .unwrap();
        assert!(rep.degenerate);
        assert!(rep.c1.is_finite());
    }

    #[test]
    fn doubling_f_increases_constants() {
        for c in [0.05, 0.27, 3.0] {
            let lo = compute_bounds(&BoundsInput {
                buffer_c: c,
                ..input()
            })
            .unwrap();
            let hi = compute_bounds(&BoundsInput {
                buffer_c: c,
                f: 4.0,
                ..input()
            })
            .unwrap();
            assert!(hi.c1 > lo.c1 && hi.c2 > lo.c2 && hi.cf > lo.cf && hi.c0 > lo.c0);
        }
    }

    #[test]
    fn bounds_reject_bad_input() {
        assert!(compute_bounds(&BoundsInput { a: 1.0, ..input() }).is_err());
        assert!(compute_bounds(&BoundsInput {
            eps: 0.0,
            ..input()
        })
        .is_err());
        assert!(compute_bounds(&BoundsInput { n: 0, ..input() }).is_err());
        assert!(compute_bounds(&BoundsInput {
            sigma: Some(-1.0),
            ..input()
        })
        .is_err());
    }

    #[test]
    fn oracle_hand_kkt() {
        let sol = kkt_oracle(&two_agent([1.0, 2.0], 2.0), 1e-12).unwrap();
        assert!((sol.lambda_star[0] - 0.5).abs() < 1e-12);
        assert!((sol.x_star[0][0] - 0.5).abs() < 1e-12);
        assert!((sol.x_star[1][0] - 1.5).abs() < 1e-12);
        assert!((sol.f_star - 0.25).abs() < 1e-12);
        assert!(sol.certified);
    }

    #[test]
    fn oracle_inactive_constraint() {
        let sol = kkt_oracle(&two_agent([1.0, 2.0], 10.0), 1e-12).unwrap();
        assert_eq!(sol.lambda_star, vec![0.0]);
        assert_eq!(sol.x_star, vec![vec![1.0], vec![2.0]]);
        assert_eq!(sol.f_star, 0.0);
    }

    #[test]
    fn oracle_reports_infeasible() {
        let p = two_agent([1.0, 2.0], -1.0);
        assert!(matches!(kkt_oracle(&p, 1e-10), Err(Error::Infeasible(_))));
    }

    #[test]
    fn oracle_rejects_non_quadratic() {
        let a = AgentProblem::new(
            ScalarConvexFn::affine(vec![1.0], 0.0),
            ConstraintMap::new(vec![ScalarConvexFn::affine(vec![1.0], -1.0)]),
            BoxSet::uniform(1, 0.0, 2.0).unwrap(),
        )
        .unwrap();
        let p = CoupledProblem::new(vec![a], None).unwrap();
        assert!(matches!(
            kkt_oracle(&p, 1e-10),
            Err(Error::UnsupportedKind(_))
        ));
    }

    #[test]
    fn oracle_beats_grid_on_two_agents() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = [rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0)];
            let cap = rng.gen_range(0.5..4.0);
            let p = two_agent(a, cap);
            let sol = kkt_oracle(&p, 1e-10).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..=400 {
                for j in 0..=400 {
                    let x = vec![vec![i as f64 * 0.005], vec![j as f64 * 0.005]];
                    let (f, g) = p.eval_global(&x).unwrap();
                    if g[0] <= 0.0 {
                        best = best.min(f);
                    }
                }
            }
            assert!(sol.f_star <= best + 1e-9);
            assert!(best - sol.f_star < 1e-2);
        }
    }

    #[test]
    fn multi_row_dual_ascent_matches_bisection_on_duplicate_rows() {
        // Two identical rows split the multiplier but leave x* unchanged.
        let single = two_agent([1.0, 2.0], 2.0);
        let agents = single
            .agents()
            .iter()
            .map(|a| {
                let row = a.constraint.rows[0].clone();
                AgentProblem::new(
                    a.objective.clone(),
                    ConstraintMap::new(vec![row.clone(), row]),
                    a.feasible_set.clone(),
                )
                .unwrap()
            })
            .collect();
        let doubled = CoupledProblem::new(agents, None).unwrap();
        let sol = kkt_oracle(&doubled, 1e-9).unwrap();
        assert!((sol.f_star - 0.25).abs() < 1e-8);
        assert!((sol.lambda_star.iter().sum::<f64>() - 0.5).abs() < 1e-8);
        assert!(sol.certified, "{:?}", sol.residuals);
    }

    #[test]
    fn oracle_residuals_on_resource_family() {
        for seed in 0..5 {
            let p = ResourceAllocationSpec {
                seed,
                ..Default::default()
            }
            .build()
            .unwrap();
            let sol = kkt_oracle(&p, 1e-8).unwrap();
            assert!(sol.certified, "seed {seed}: {:?}", sol.residuals);
        }
    }

    fn record(t: usize, objective: f64, violation: f64) -> IterationRecord {
        IterationRecord {
            t,
            objective,
            objective_error: 0.0,
            violation: vec![violation],
            queue_sum_norm: 0.0,
            drift: None,
            drift_bound: None,
            lemma1_slack: None,
        }
    }

    fn result(records: Vec<IterationRecord>) -> RunResult {
        RunResult {
            summary: RunSummary {
                algorithm: "test".into(),
                horizon: records.len(),
                final_objective_error: 0.0,
                final_violation: vec![0.0],
                first_feasible_t: None,
                last_infeasible_t: None,
                min_lemma1_slack: None,
                max_drift_excess: None,
            },
            records,
            final_x: vec![],
            final_avg: vec![],
        }
    }

    #[test]
    fn metrics_at_optimum() {
        let p = two_agent([1.0, 2.0], 2.0);
        let sol = kkt_oracle(&p, 1e-12).unwrap();
        let (f, g) = p.eval_global(&sol.x_star).unwrap();
        let run = result((1..=5).map(|t| record(t, f, g[0])).collect());
        let m = metrics(&run, &sol);
        assert_eq!(m.first_feasible_t, Some(1));
        assert_eq!(m.feasible_from_t, Some(1));
        assert!(m.rows.iter().all(|r| r.objective_error == 0.0));
    }

    #[test]
    fn metrics_feasibility_times() {
        let sol = kkt_oracle(&two_agent([1.0, 2.0], 2.0), 1e-12).unwrap();
        let v = [0.5, -0.1, 0.2, -0.1, -0.3];
        let run = result(
            v.iter()
                .enumerate()
                .map(|(k, v)| record(k + 1, 1.25, *v))
                .collect(),
        );
        let m = metrics(&run, &sol);
        assert_eq!(m.first_feasible_t, Some(2));
        assert_eq!(m.feasible_from_t, Some(4));
        let r = m.row_at(4).unwrap();
        assert!((r.objective_error - 1.0).abs() < 1e-12);
        assert_eq!(r.scaled_violation, 0.0);
        assert!((m.row_at(1).unwrap().scaled_violation - 0.5).abs() < 1e-15);
        assert!((m.max_scaled_error(1, 5) - 5f64.sqrt()).abs() < 1e-12);

        let bad = result(vec![record(1, 0.0, 1.0)]);
        let m = metrics(&bad, &sol);
        assert_eq!((m.first_feasible_t, m.feasible_from_t), (None, None));
    }

    #[test]
    fn bounds_from_instance_match_problem_constants() {
        let p = ResourceAllocationSpec::default().build().unwrap();
        let s = crate::network::make_ring_partition_schedule(10, 4, 1.0).unwrap();
        let b = BoundsInput::from_instance(&p, &s, 0.27).unwrap();
        assert_eq!(b.eps, p.slater_slack().unwrap());
        assert_eq!(b.a, s.min_weight());
        assert_eq!((b.n, b.b, b.p), (10, 4, 1));
    }
}
