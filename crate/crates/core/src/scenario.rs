//! Experiment configuration: where the problem and schedule come from, which
//! method runs, and how results are written and re-checked.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithm::{
    drive, Bdpp, EngineOptions, InitialPoint, IterationRecord, ParamSchedule, RecordStride,
    RunResult, INVARIANT_TOL,
};
use crate::baselines::{Dpp, DualSubgradient, StepSize};
use crate::error::{Error, Result};
use crate::network::{
    make_complete_schedule, make_ring_partition_schedule, verify_b_connectivity, verify_mixing,
    GraphSchedule, MixingReport,
};
use crate::problem::{CoupledProblem, ResourceAllocationSpec};

/// Dual step scale used when a config does not set one.
pub const DEFAULT_STEP_SCALE: f64 = 4.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bdpp,
    Dpp,
    DualSubgrad,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Bdpp => "bdpp",
            Algorithm::Dpp => "dpp",
            Algorithm::DualSubgrad => "dual_subgrad",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bdpp" => Ok(Algorithm::Bdpp),
            "dpp" => Ok(Algorithm::Dpp),
            "dual_subgrad" => Ok(Algorithm::DualSubgrad),
            other => Err(Error::Validation(format!(
                "unknown algorithm '{other}' (expected bdpp, dpp or dual_subgrad)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    /// The random resource-allocation family.
    Generator {
        #[serde(flatten)]
        spec: ResourceAllocationSpec,
    },
    File {
        path: PathBuf,
    },
    Inline {
        problem: CoupledProblem,
    },
}

fn default_lazy() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSource {
    /// Ring edges dealt round-robin into `partitions` rounds (default `window`),
    /// validated against `window`.
    RingPartition {
        window: usize,
        #[serde(default)]
        partitions: Option<usize>,
        #[serde(default = "default_lazy")]
        lazy_weight: f64,
    },
    Complete {
        #[serde(default = "default_lazy")]
        lazy_weight: f64,
    },
    File {
        path: PathBuf,
    },
    Inline {
        schedule: GraphSchedule,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Buffer constant `C` for B-DPP.
    pub c: Option<f64>,
    /// Constant `V` for DPP; `√T` when absent.
    pub v: Option<f64>,
    /// Dual step `scale / (t + 1)`.
    pub step_scale: Option<f64>,
    /// `C` values for `sweep`; the string `"c0"` stands for the computed `C0`.
    pub c_values: Option<Vec<CValue>>,
    /// Algorithms for `compare`.
    pub algorithms: Option<Vec<Algorithm>>,
}

/// A sweep entry: a number or the symbolic `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CValue {
    Value(f64),
    Symbol(CSymbol),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CSymbol {
    C0,
}

impl FromStr for CValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("c0") {
            return Ok(CValue::Symbol(CSymbol::C0));
        }
        s.parse::<f64>()
            .map(CValue::Value)
            .map_err(|_| Error::Validation(format!("bad C value '{s}'")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub problem: ProblemSource,
    pub schedule: ScheduleSource,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub params: Params,
    pub horizon: usize,
    /// Seeds the random initial point.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Emit SVG plots next to the CSV.
    #[serde(default)]
    pub plots: bool,
    /// Directory relative paths resolve against; set by [`ScenarioConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Bdpp
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Problem, schedule and oracle optimum shared by every run of a scenario.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: CoupledProblem,
    pub schedule: GraphSchedule,
    pub f_star: f64,
}

impl ScenarioConfig {
    /// Reads a JSON config. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn stride(&self) -> RecordStride {
        match self.stride {
            Some(k) => RecordStride::Every(k.max(1)),
            None => RecordStride::Default,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be ≥ 1".into()));
        }
        if self.stride == Some(0) {
            return Err(Error::Validation("stride must be ≥ 1".into()));
        }
        if self.algorithm == Algorithm::Bdpp && self.params.c.is_none() {
            return Err(Error::Validation("bdpp needs params.c".into()));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<CoupledProblem> {
        match &self.problem {
            ProblemSource::Generator { spec } => spec.build(),
            ProblemSource::File { path } => {
                let path = self.resolve(path);
                let text = fs::read_to_string(&path).map_err(|e| {
                    Error::Validation(format!("cannot read problem {}: {e}", path.display()))
                })?;
                CoupledProblem::from_json(&text)
            }
            ProblemSource::Inline { problem } => Ok(problem.clone()),
        }
    }

    pub fn build_schedule(&self, n_agents: usize) -> Result<GraphSchedule> {
        let schedule = match &self.schedule {
            ScheduleSource::RingPartition {
                window,
                partitions,
                lazy_weight,
            } => {
                let rounds = make_ring_partition_schedule(
                    n_agents,
                    partitions.unwrap_or(*window),
                    *lazy_weight,
                )?;
                GraphSchedule::new(n_agents, *window, rounds.rounds().to_vec())?
            }
            ScheduleSource::Complete { lazy_weight } => {
                make_complete_schedule(n_agents, *lazy_weight)?
            }
            ScheduleSource::File { path } => {
                let path = self.resolve(path);
                let text = fs::read_to_string(&path).map_err(|e| {
                    Error::Validation(format!("cannot read schedule {}: {e}", path.display()))
                })?;
                GraphSchedule::from_json(&text)?
            }
            ScheduleSource::Inline { schedule } => schedule.clone(),
        };
        if schedule.n_agents() != n_agents {
            return Err(Error::Validation(format!(
                "schedule has {} agents, problem has {n_agents}",
                schedule.n_agents()
            )));
        }
        Ok(schedule)
    }

    /// Builds the problem and schedule, checks the standing assumptions, and
    /// solves the oracle.
    pub fn instance(&self) -> Result<Instance> {
        self.validate()?;
        let problem = self.build_problem()?;
        problem.validate_assumptions()?;
        let schedule = self.build_schedule(problem.n_agents())?;
        check_schedule(&schedule)?;
        let oracle = crate::analysis::kkt_oracle(&problem, 1e-10)?;
        if !oracle.certified {
            log::warn!("oracle residuals above tolerance: {:?}", oracle.residuals);
        }
        Ok(Instance {
            problem,
            schedule,
            f_star: oracle.f_star,
        })
    }
}

/// Result of validating a schedule against its declared window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleCheck {
    pub n_agents: usize,
    pub window: usize,
    pub period: usize,
    pub b_connected: bool,
    pub mixing: MixingReport,
}

impl ScheduleCheck {
    pub fn ok(&self) -> bool {
        self.b_connected && self.mixing.ok
    }
}

pub fn inspect_schedule(schedule: &GraphSchedule) -> ScheduleCheck {
    ScheduleCheck {
        n_agents: schedule.n_agents(),
        window: schedule.window(),
        period: schedule.period(),
        b_connected: verify_b_connectivity(schedule, schedule.window()),
        mixing: verify_mixing(schedule),
    }
}

/// Fails with [`Error::Validation`] unless the schedule is B-connected and
/// every round is doubly stochastic on its edges.
pub fn check_schedule(schedule: &GraphSchedule) -> Result<()> {
    let report = inspect_schedule(schedule);
    if !report.b_connected {
        return Err(Error::Validation(format!(
            "schedule is not connected over windows of {} rounds",
            report.window
        )));
    }
    if !report.mixing.ok {
        return Err(Error::Validation(format!(
            "mixing matrices rejected: {}",
            report.mixing.problems.join("; ")
        )));
    }
    Ok(())
}

/// One method run on a shared instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub c: f64,
    pub v: Option<f64>,
    pub step_scale: f64,
    pub horizon: usize,
    pub seed: u64,
    pub stride: RecordStride,
}

pub fn run_method(instance: &Instance, spec: &RunSpec) -> Result<RunResult> {
    let init = InitialPoint::Random(spec.seed);
    let problem = instance.problem.clone();
    match spec.algorithm {
        Algorithm::Bdpp => {
            let options = EngineOptions {
                init,
                f_star: instance.f_star,
                ..Default::default()
            };
            Bdpp::new(
                problem,
                instance.schedule.clone(),
                ParamSchedule::standard(spec.c)?,
                options,
            )?
            .run(spec.horizon, spec.stride)
        }
        Algorithm::Dpp => {
            let v = spec.v.unwrap_or((spec.horizon as f64).sqrt());
            let mut m = Dpp::new(problem, v, init, instance.f_star)?;
            drive(&mut m, spec.horizon, spec.stride)
        }
        Algorithm::DualSubgrad => {
            let mut m = DualSubgradient::new(
                problem,
                instance.schedule.clone(),
                StepSize::harmonic(spec.step_scale),
                init,
                instance.f_star,
            )?;
            drive(&mut m, spec.horizon, spec.stride)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV header for `p` coupled constraints, after any leading label columns.
pub fn csv_header(labels: &[&str], p: usize) -> Vec<String> {
    let mut h: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
    h.push("t".into());
    h.push("objective_error".into());
    h.extend((1..=p).map(|k| format!("violation_{k}")));
    for c in ["queue_sum_norm", "drift", "drift_bound", "lemma1_slack_min"] {
        h.push(c.into());
    }
    h
}

pub fn csv_row(labels: &[String], rec: &IterationRecord) -> Vec<String> {
    let mut row: Vec<String> = labels.to_vec();
    row.push(rec.t.to_string());
    row.push(rec.objective_error.to_string());
    row.extend(rec.violation.iter().map(|v| v.to_string()));
    row.push(rec.queue_sum_norm.to_string());
    row.push(fmt_opt(rec.drift));
    row.push(fmt_opt(rec.drift_bound));
    row.push(fmt_opt(rec.lemma1_slack_min()));
    row
}

/// Writes labelled runs into one CSV.
pub fn write_csv(
    path: &Path,
    labels: &[&str],
    p: usize,
    runs: &[(Vec<String>, &RunResult)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(labels, p))?;
    for (lab, run) in runs {
        for rec in &run.records {
            w.write_record(csv_row(lab, rec))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Outcome of re-reading an emitted CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvCheck {
    pub rows: usize,
    /// Rows whose `lemma1_slack_min` is below `−1e−9`.
    pub slack_failures: usize,
    /// Rows whose `drift` exceeds `drift_bound + 1e−9`.
    pub drift_failures: usize,
    /// `t` values of the drift failures (at most 20).
    pub drift_failure_t: Vec<usize>,
    pub min_slack: Option<f64>,
}

impl CsvCheck {
    pub fn ok(&self) -> bool {
        self.slack_failures == 0 && self.drift_failures == 0
    }
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Validation(format!("non-numeric cell '{s}'")))
}

/// Independent pass over an emitted CSV, by column name.
pub fn verify_csv(path: &Path) -> Result<CsvCheck> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("{} has no column {name}", path.display())))
    };
    let (ti, di, bi, si) = (
        col("t")?,
        col("drift")?,
        col("drift_bound")?,
        col("lemma1_slack_min")?,
    );
    let mut out = CsvCheck {
        rows: 0,
        slack_failures: 0,
        drift_failures: 0,
        drift_failure_t: Vec::new(),
        min_slack: None,
    };
    for rec in r.records() {
        let rec = rec?;
        out.rows += 1;
        if let Some(s) = parse_cell(&rec[si])? {
            out.min_slack = Some(out.min_slack.map_or(s, |m: f64| m.min(s)));
            if s < -INVARIANT_TOL {
                out.slack_failures += 1;
            }
        }
        if let (Some(d), Some(b)) = (parse_cell(&rec[di])?, parse_cell(&rec[bi])?) {
            if d > b + INVARIANT_TOL {
                out.drift_failures += 1;
                if out.drift_failure_t.len() < 20 {
                    let t = rec[ti]
                        .parse()
                        .map_err(|_| Error::Validation(format!("bad t '{}'", &rec[ti])))?;
                    out.drift_failure_t.push(t);
                }
            }
        }
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "problem": {"source": "generator", "n_agents": 4, "seed": 2},
        "schedule": {"kind": "ring_partition", "window": 2},
        "params": {"c": 0.27},
        "horizon": 50
    }"#;

    #[test]
    fn parses_defaults() {
        let cfg = ScenarioConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Bdpp);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.stride(), RecordStride::Default);
        match &cfg.problem {
            ProblemSource::Generator { spec } => {
                assert_eq!(spec.n_agents, 4);
                assert_eq!(spec.capacity_range, (5.0, 20.0));
            }
            other => panic!("{other:?}"),
        }
        let inst = cfg.instance().unwrap();
        assert_eq!(inst.schedule.period(), 2);
    }

    #[test]
    fn rejects_unknown_fields_and_missing_c() {
        let bad = BASE.replace("\"horizon\"", "\"horizn\"");
        assert!(matches!(
            ScenarioConfig::from_json(&bad),
            Err(Error::Validation(_))
        ));
        let no_c = BASE.replace("{\"c\": 0.27}", "{}");
        let cfg = ScenarioConfig::from_json(&no_c).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn disconnected_rounds_with_window_one_fail_validation() {
        let cfg = ScenarioConfig::from_json(
            &BASE.replace("\"window\": 2", "\"window\": 1, \"partitions\": 2"),
        )
        .unwrap();
        assert!(matches!(cfg.instance(), Err(Error::Validation(_))));
    }

    #[test]
    fn c_values_parse() {
        assert_eq!("c0".parse::<CValue>().unwrap(), CValue::Symbol(CSymbol::C0));
        assert_eq!("0.27".parse::<CValue>().unwrap(), CValue::Value(0.27));
        assert!("x".parse::<CValue>().is_err());
        let p: Params = serde_json::from_str(r#"{"c_values": [0.05, "c0"]}"#).unwrap();
        assert_eq!(
            p.c_values.unwrap(),
            vec![CValue::Value(0.05), CValue::Symbol(CSymbol::C0)]
        );
    }

    #[test]
    fn csv_round_trip_verifies() {
        let cfg = ScenarioConfig::from_json(BASE).unwrap();
        let inst = cfg.instance().unwrap();
        let run = run_method(
            &inst,
            &RunSpec {
                algorithm: Algorithm::Bdpp,
                c: 0.27,
                v: None,
                step_scale: DEFAULT_STEP_SCALE,
                horizon: 50,
                seed: 1,
                stride: RecordStride::Every(1),
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        write_csv(&path, &[], 1, &[(vec![], &run)]).unwrap();
        let check = verify_csv(&path).unwrap();
        assert_eq!(check.rows, 50);
        assert!(check.ok(), "{check:?}");

        // tamper with one slack cell and the verifier must notice
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
        *cells.last_mut().unwrap() = "-1".into();
        lines[3] = cells.join(",");
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert_eq!(verify_csv(&path).unwrap().slack_failures, 1);
    }
}
