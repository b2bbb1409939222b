//! Commands behind the `bdpp-sim` binary. Each writes its outputs under the
//! configured directory and returns an error that [`exit_code`] classifies.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde::Serialize;

use crate::algorithm::{RunResult, RunSummary};
use crate::analysis::{compute_bounds, BoundsInput, BoundsReport};
use crate::error::{Error, Result};
use crate::scenario::{
    inspect_schedule, run_method, verify_csv, write_csv, write_json, Algorithm, CSymbol, CValue,
    CsvCheck, Instance, RunSpec, ScenarioConfig, ScheduleCheck, DEFAULT_STEP_SCALE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// 2 for bad configs, schedules or instances; 3 for failures while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_)
        | Error::Validation(_)
        | Error::UnsupportedKind(_)
        | Error::Infeasible(_)
        | Error::Json(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
    pub stride: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(k) = self.stride {
            cfg.stride = Some(k);
        }
    }
}

fn spec_for(cfg: &ScenarioConfig, algorithm: Algorithm, c: f64) -> RunSpec {
    RunSpec {
        algorithm,
        c,
        v: cfg.params.v,
        step_scale: cfg.params.step_scale.unwrap_or(DEFAULT_STEP_SCALE),
        horizon: cfg.horizon,
        seed: cfg.seed,
        stride: cfg.stride(),
    }
}

fn out_dir(cfg: &ScenarioConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.clone())
}

/// Slack failures are fatal; drift excesses are reported on stderr only.
fn enforce(check: &CsvCheck, path: &Path) -> Result<()> {
    if check.drift_failures > 0 {
        eprintln!(
            "warning: {}: drift above its bound in {} row(s), at t = {:?}",
            path.display(),
            check.drift_failures,
            check.drift_failure_t
        );
    }
    if check.slack_failures > 0 {
        return Err(Error::Invariant {
            t: 0,
            detail: format!(
                "{}: {} row(s) break the cumulative violation bound",
                path.display(),
                check.slack_failures
            ),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunEntry<'a> {
    label: String,
    c: Option<f64>,
    summary: &'a RunSummary,
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    command: &'static str,
    seed: u64,
    horizon: usize,
    f_star: f64,
    runs: Vec<RunEntry<'a>>,
    csv_check: CsvCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    tradeoff: Option<Tradeoff>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

fn runs_in_parallel(instance: &Instance, specs: &[RunSpec]) -> Result<Vec<RunResult>> {
    thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| s.spawn(move || run_method(instance, spec)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    })
}

pub fn cmd_run(cfg: &ScenarioConfig) -> Result<()> {
    let instance = cfg.instance()?;
    let c = cfg.params.c.unwrap_or(0.0);
    let run = run_method(&instance, &spec_for(cfg, cfg.algorithm, c))?;
    let dir = out_dir(cfg)?;
    let csv = dir.join("run.csv");
    write_csv(
        &csv,
        &[],
        instance.problem.constraint_dim(),
        &[(vec![], &run)],
    )?;
    let check = verify_csv(&csv)?;
    if cfg.plots {
        write_plots(&dir, &[(cfg.algorithm.to_string(), &run)])?;
    }
    write_json(
        &dir.join("summary.json"),
        &RunReport {
            command: "run",
            seed: cfg.seed,
            horizon: cfg.horizon,
            f_star: instance.f_star,
            runs: vec![RunEntry {
                label: cfg.algorithm.to_string(),
                c: (cfg.algorithm == Algorithm::Bdpp).then_some(c),
                summary: &run.summary,
            }],
            csv_check: check.clone(),
            tradeoff: None,
            notes: vec![],
        },
    )?;
    enforce(&check, &csv)
}

/// Ordering of final errors and violations across a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tradeoff {
    pub c_values: Vec<f64>,
    pub objective_errors: Vec<f64>,
    pub max_violations: Vec<f64>,
    /// Adjacent pairs where the error decreases as `C` grows.
    pub error_inversions: usize,
    /// Adjacent pairs where the violation increases as `C` grows.
    pub violation_inversions: usize,
}

impl Tradeoff {
    /// Sorts by `C` and counts adjacent order breaks.
    pub fn new(points: &[(f64, f64, f64)]) -> Self {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let error_inversions = pts.windows(2).filter(|w| w[1].1 < w[0].1).count();
        let violation_inversions = pts.windows(2).filter(|w| w[1].2 > w[0].2).count();
        Tradeoff {
            error_inversions,
            violation_inversions,
            c_values: pts.iter().map(|p| p.0).collect(),
            objective_errors: pts.iter().map(|p| p.1).collect(),
            max_violations: pts.iter().map(|p| p.2).collect(),
        }
    }

    pub fn consistent(&self, tolerated: usize) -> bool {
        self.error_inversions <= tolerated && self.violation_inversions <= tolerated
    }
}

fn bounds_for(instance: &Instance, c: f64) -> Result<BoundsReport> {
    compute_bounds(&BoundsInput::from_instance(
        &instance.problem,
        &instance.schedule,
        c,
    )?)
}

pub fn cmd_sweep(cfg: &ScenarioConfig, c_values: &[CValue]) -> Result<()> {
    if c_values.len() < 2 {
        return Err(Error::Validation(
            "sweep needs at least two C values".into(),
        ));
    }
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::Bdpp;
    cfg.params.c.get_or_insert(1.0);
    let instance = cfg.instance()?;
    let mut notes = Vec::new();
    let mut cs = Vec::with_capacity(c_values.len());
    let mut c0_report = None;
    for v in c_values {
        cs.push(match v {
            CValue::Value(c) => *c,
            CValue::Symbol(CSymbol::C0) => {
                let base = bounds_for(&instance, 1.0)?;
                c0_report = Some(bounds_for(&instance, base.c0)?);
                base.c0
            }
        });
    }
    let specs: Vec<RunSpec> = cs
        .iter()
        .map(|c| spec_for(&cfg, Algorithm::Bdpp, *c))
        .collect();
    let runs = runs_in_parallel(&instance, &specs)?;

    let dir = out_dir(&cfg)?;
    let csv = dir.join("sweep.csv");
    let labelled: Vec<(Vec<String>, &RunResult)> = cs
        .iter()
        .zip(&runs)
        .map(|(c, r)| (vec![c.to_string()], r))
        .collect();
    write_csv(&csv, &["c"], instance.problem.constraint_dim(), &labelled)?;
    let check = verify_csv(&csv)?;

    let tradeoff = Tradeoff::new(
        &cs.iter()
            .zip(&runs)
            .map(|(c, r)| {
                let last = r.records.last().expect("horizon ≥ 1");
                (*c, last.objective_error, last.max_violation())
            })
            .collect::<Vec<_>>(),
    );
    if !tradeoff.consistent(0) {
        notes.push(format!(
            "trade-off ordering broken: {} error and {} violation inversion(s)",
            tradeoff.error_inversions, tradeoff.violation_inversions
        ));
    }
    if let Some(rep) = &c0_report {
        let idx = cs
            .iter()
            .position(|c| *c == rep.input.buffer_c)
            .unwrap_or(0);
        let from = runs[idx].summary.last_infeasible_t.map_or(1, |t| t + 1);
        match rep.t1 {
            Some(t1) if !rep.vacuous => notes.push(format!(
                "C = C0: feasible from t = {from}, bound t1 = {t1}: {}",
                if (from as f64) <= t1 {
                    "holds"
                } else {
                    "BROKEN"
                }
            )),
            t1 => notes.push(format!(
                "C = C0: t1 = {t1:?} is beyond reach, check skipped (feasible from t = {from})"
            )),
        }
    }
    for n in &notes {
        eprintln!("note: {n}");
    }
    if cfg.plots {
        let named: Vec<(String, &RunResult)> = cs
            .iter()
            .zip(&runs)
            .map(|(c, r)| (format!("C={c}"), r))
            .collect();
        write_plots(&dir, &named)?;
    }
    write_json(
        &dir.join("summary.json"),
        &RunReport {
            command: "sweep",
            seed: cfg.seed,
            horizon: cfg.horizon,
            f_star: instance.f_star,
            runs: cs
                .iter()
                .zip(&runs)
                .map(|(c, r)| RunEntry {
                    label: format!("C={c}"),
                    c: Some(*c),
                    summary: &r.summary,
                })
                .collect(),
            csv_check: check.clone(),
            tradeoff: Some(tradeoff),
            notes,
        },
    )?;
    enforce(&check, &csv)
}

pub fn cmd_compare(cfg: &ScenarioConfig, algorithms: &[Algorithm]) -> Result<()> {
    if algorithms.is_empty() {
        return Err(Error::Validation(
            "compare needs at least one algorithm".into(),
        ));
    }
    let mut cfg = cfg.clone();
    if algorithms.contains(&Algorithm::Bdpp) && cfg.params.c.is_none() {
        return Err(Error::Validation("bdpp needs params.c".into()));
    }
    cfg.algorithm = algorithms[0];
    let c = cfg.params.c.unwrap_or(0.0);
    cfg.params.c.get_or_insert(c);
    let instance = cfg.instance()?;
    let specs: Vec<RunSpec> = algorithms.iter().map(|a| spec_for(&cfg, *a, c)).collect();
    let runs = runs_in_parallel(&instance, &specs)?;

    let dir = out_dir(&cfg)?;
    let csv = dir.join("compare.csv");
    let labelled: Vec<(Vec<String>, &RunResult)> = algorithms
        .iter()
        .zip(&runs)
        .map(|(a, r)| (vec![a.to_string()], r))
        .collect();
    write_csv(
        &csv,
        &["algorithm"],
        instance.problem.constraint_dim(),
        &labelled,
    )?;
    let check = verify_csv(&csv)?;
    let named: Vec<(String, &RunResult)> = algorithms
        .iter()
        .zip(&runs)
        .map(|(a, r)| (a.to_string(), r))
        .collect();
    if cfg.plots {
        write_plots(&dir, &named)?;
    }
    write_json(
        &dir.join("summary.json"),
        &RunReport {
            command: "compare",
            seed: cfg.seed,
            horizon: cfg.horizon,
            f_star: instance.f_star,
            runs: named
                .iter()
                .zip(algorithms)
                .map(|((label, r), a)| RunEntry {
                    label: label.clone(),
                    c: (*a == Algorithm::Bdpp).then_some(c),
                    summary: &r.summary,
                })
                .collect(),
            csv_check: check.clone(),
            tradeoff: None,
            notes: vec![],
        },
    )?;
    enforce(&check, &csv)
}

/// Computes the bounds for the configured instance, prints them, and writes
/// `bounds.json`.
/// Pretty JSON to stdout. A closed pipe (e.g. `| head`) is not an error.
fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn cmd_bounds(
    cfg: &ScenarioConfig,
    c: Option<f64>,
    sigma: Option<f64>,
) -> Result<BoundsReport> {
    let problem = cfg.build_problem()?;
    problem.validate_assumptions()?;
    let schedule = cfg.build_schedule(problem.n_agents())?;
    let c = c
        .or(cfg.params.c)
        .ok_or_else(|| Error::Validation("bounds needs C (params.c or --c)".into()))?;
    let mut input = BoundsInput::from_instance(&problem, &schedule, c)?;
    input.sigma = sigma;
    let report = compute_bounds(&input)?;
    print_json(&report)?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join("bounds.json"), &report)?;
    Ok(report)
}

/// Prints the schedule report; fails with a validation error when it is rejected.
pub fn cmd_validate_schedule(
    cfg: &ScenarioConfig,
    n_agents: Option<usize>,
) -> Result<ScheduleCheck> {
    let n = match n_agents {
        Some(n) => n,
        None => cfg.build_problem()?.n_agents(),
    };
    let schedule = cfg.build_schedule(n)?;
    let report = inspect_schedule(&schedule);
    print_json(&report)?;
    if !report.ok() {
        let mut why = Vec::new();
        if !report.b_connected {
            why.push(format!("not connected over windows of {}", report.window));
        }
        why.extend(report.mixing.problems.iter().cloned());
        return Err(Error::Validation(why.join("; ")));
    }
    Ok(report)
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Log-log line chart; points with nonpositive coordinates are dropped.
pub fn svg_loglog(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series
        .iter()
        .flat_map(|(_, s)| s.iter())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, x1) = (x0.floor(), x1.ceil().max(x0.floor() + 1.0));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let sx = |x: f64| MARGIN + (x.log10() - x0) / (x1 - x0) * (PLOT_W - 2.0 * MARGIN);
    let sy = |y: f64| PLOT_H - MARGIN - (y.log10() - y0) / (y1 - y0) * (PLOT_H - 2.0 * MARGIN);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n",
        PLOT_W / 2.0
    );
    let (l, r, b, t) = (MARGIN, PLOT_W - MARGIN, PLOT_H - MARGIN, MARGIN);
    s += &format!(
        "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        r - l,
        b - t
    );
    for e in x0 as i32..=x1 as i32 {
        let x = sx(10f64.powi(e));
        s += &format!(
            "<line x1=\"{x:.1}\" y1=\"{t}\" x2=\"{x:.1}\" y2=\"{b}\" stroke=\"#ddd\"/>\n\
             <text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">1e{e}</text>\n",
            b + 16.0
        );
    }
    for e in y0 as i32..=y1 as i32 {
        let y = sy(10f64.powi(e));
        s += &format!(
            "<line x1=\"{l}\" y1=\"{y:.1}\" x2=\"{r}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">1e{e}</text>\n",
            l - 4.0,
            y + 4.0
        );
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        if !path.is_empty() {
            s += &format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            );
        }
        s += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            r - 120.0,
            t + 16.0 + 14.0 * k as f64
        );
    }
    s += "</svg>\n";
    s
}

fn write_plots(dir: &Path, runs: &[(String, &RunResult)]) -> Result<()> {
    let err: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|(n, r)| {
            let pts = r
                .records
                .iter()
                .map(|x| (x.t as f64, x.objective_error.abs()))
                .collect();
            (n.clone(), pts)
        })
        .collect();
    let viol: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|(n, r)| {
            let pts = r
                .records
                .iter()
                .map(|x| (x.t as f64, x.max_violation()))
                .collect();
            (n.clone(), pts)
        })
        .collect();
    fs::write(
        dir.join("objective_error.svg"),
        svg_loglog("|objective error| vs t", &err),
    )?;
    fs::write(
        dir.join("violation.svg"),
        svg_loglog("max positive violation vs t", &viol),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Validation("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), EXIT_VALIDATION);
        assert_eq!(
            exit_code(&Error::Invariant {
                t: 1,
                detail: "x".into()
            }),
            EXIT_RUNTIME
        );
        let io = Error::Io(std::io::Error::other("x"));
        assert_eq!(exit_code(&io), EXIT_RUNTIME);
    }

    #[test]
    fn tradeoff_counts_inversions() {
        let t = Tradeoff::new(&[(1.0, 0.3, -0.2), (0.05, 0.1, 0.0), (3.0, 0.2, -0.5)]);
        assert_eq!(t.c_values, vec![0.05, 1.0, 3.0]);
        assert_eq!((t.error_inversions, t.violation_inversions), (1, 0));
        assert!(t.consistent(1) && !t.consistent(0));
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let s = svg_loglog(
            "t",
            &[
                ("a".into(), vec![(1.0, 1.0), (10.0, 0.1)]),
                ("b".into(), vec![(1.0, 0.0), (100.0, 2.0)]),
            ],
        );
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        // empty data still renders a frame
        assert!(svg_loglog("e", &[]).contains("<rect"));
    }
}
