//! Time-varying communication schedules and their mixing matrices.
//!
//! A [`GraphSchedule`] is periodic: the round used at time `t` is
//! `rounds[t mod period]`. Each round carries an undirected edge set and a
//! dense mixing matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row and column sums must match 1 to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// One communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    /// Unordered agent pairs, stored as `(min, max)`.
    pub edges: Vec<(usize, usize)>,
    pub mixing: Vec<Vec<f64>>,
}

impl Round {
    pub fn identity(n: usize) -> Self {
        let mut mixing = vec![vec![0.0; n]; n];
        for (i, row) in mixing.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Round {
            edges: Vec::new(),
            mixing,
        }
    }

    /// Metropolis weights `1/(1 + max(deg_i, deg_j))` on the edges, pulled toward
    /// the identity by `1 - lazy`.
    pub fn metropolis(n: usize, edges: &[(usize, usize)], lazy: f64) -> Result<Self> {
        let edges = normalize_edges(n, edges)?;
        let mut deg = vec![0usize; n];
        for &(i, j) in &edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        let mut mixing = vec![vec![0.0; n]; n];
        for &(i, j) in &edges {
            let w = lazy / (1 + deg[i].max(deg[j])) as f64;
            mixing[i][j] = w;
            mixing[j][i] = w;
        }
        for (i, row) in mixing.iter_mut().enumerate() {
            let off: f64 = row.iter().sum();
            row[i] = 1.0 - off;
        }
        Ok(Round { edges, mixing })
    }

    pub fn n_agents(&self) -> usize {
        self.mixing.len()
    }

    fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.edges.contains(&key)
    }
}

fn normalize_edges(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::invalid(format!(
                "edge ({i}, {j}) references an agent ≥ {n}"
            )));
        }
        if i == j {
            return Err(Error::invalid(format!("self-loop on agent {i}")));
        }
        let e = (i.min(j), i.max(j));
        if !out.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Periodic sequence of rounds together with its declared connectivity window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleWire", into = "ScheduleWire")]
pub struct GraphSchedule {
    n_agents: usize,
    window: usize,
    min_weight: f64,
    rounds: Vec<Round>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleWire {
    n_agents: usize,
    window: usize,
    rounds: Vec<Round>,
}

impl TryFrom<ScheduleWire> for GraphSchedule {
    type Error = Error;

    fn try_from(w: ScheduleWire) -> Result<Self> {
        GraphSchedule::new(w.n_agents, w.window, w.rounds)
    }
}

impl From<GraphSchedule> for ScheduleWire {
    fn from(s: GraphSchedule) -> Self {
        ScheduleWire {
            n_agents: s.n_agents,
            window: s.window,
            rounds: s.rounds,
        }
    }
}

impl GraphSchedule {
    /// Builds a schedule from explicit rounds. Only shapes are checked here;
    /// use [`verify_mixing`] and [`verify_b_connectivity`] for the assumptions.
    pub fn new(n_agents: usize, window: usize, rounds: Vec<Round>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::invalid("schedule needs at least one agent"));
        }
        if window == 0 {
            return Err(Error::invalid("window must be ≥ 1"));
        }
        if rounds.is_empty() {
            return Err(Error::invalid("schedule needs at least one round"));
        }
        let mut rounds = rounds;
        for (k, r) in rounds.iter_mut().enumerate() {
            if r.mixing.len() != n_agents || r.mixing.iter().any(|row| row.len() != n_agents) {
                return Err(Error::invalid(format!(
                    "round {k}: mixing matrix is not {n_agents}×{n_agents}"
                )));
            }
            r.edges = normalize_edges(n_agents, &r.edges)?;
        }
        let min_weight = smallest_positive(&rounds);
        Ok(GraphSchedule {
            n_agents,
            window,
            min_weight,
            rounds,
        })
    }

    /// The same round at every step.
    pub fn constant(round: Round, window: usize) -> Result<Self> {
        GraphSchedule::new(round.n_agents(), window, vec![round])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn period(&self) -> usize {
        self.rounds.len()
    }

    /// Smallest positive mixing entry over all rounds.
    pub fn min_weight(&self) -> f64 {
        self.min_weight
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    /// Round used at time `t` (0-based).
    pub fn round_at(&self, t: usize) -> &Round {
        &self.rounds[t % self.rounds.len()]
    }
}

fn smallest_positive(rounds: &[Round]) -> f64 {
    rounds
        .iter()
        .flat_map(|r| r.mixing.iter().flatten())
        .copied()
        .filter(|&w| w > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Ring `{i, i+1 mod N}` split round-robin into `window` rounds with Metropolis
/// weights. Edge `k` goes to round `k mod window`.
pub fn make_ring_partition_schedule(
    n_agents: usize,
    window: usize,
    lazy_weight: f64,
) -> Result<GraphSchedule> {
    if n_agents < 2 {
        return Err(Error::invalid("ring schedule needs at least 2 agents"));
    }
    if window == 0 || window > n_agents {
        return Err(Error::invalid(format!(
            "window must lie in 1..={n_agents}, got {window}"
        )));
    }
    if !(lazy_weight > 0.0 && lazy_weight <= 1.0) {
        return Err(Error::invalid(format!(
            "lazy_weight must lie in (0, 1], got {lazy_weight}"
        )));
    }
    let mut per_round = vec![Vec::new(); window];
    // for N = 2 the ring has a single edge
    let n_edges = if n_agents == 2 { 1 } else { n_agents };
    for k in 0..n_edges {
        per_round[k % window].push((k, (k + 1) % n_agents));
    }
    let rounds = per_round
        .iter()
        .map(|edges| Round::metropolis(n_agents, edges, lazy_weight))
        .collect::<Result<Vec<_>>>()?;
    GraphSchedule::new(n_agents, window, rounds)
}

/// Every pair connected in every round, with Metropolis weights.
pub fn make_complete_schedule(n_agents: usize, lazy_weight: f64) -> Result<GraphSchedule> {
    let edges: Vec<_> = (0..n_agents)
        .flat_map(|i| (i + 1..n_agents).map(move |j| (i, j)))
        .collect();
    GraphSchedule::constant(Round::metropolis(n_agents, &edges, lazy_weight)?, 1)
}

/// True when the union of edges over each aligned block of `window` rounds
/// (times `kB .. (k+1)B`) connects all agents. Blocks are enumerated until the
/// pattern repeats, i.e. over `lcm(period, window)` steps.
pub fn verify_b_connectivity(schedule: &GraphSchedule, window: usize) -> bool {
    if window == 0 {
        return false;
    }
    let n = schedule.n_agents();
    let period = schedule.period();
    let blocks = lcm(period, window) / window;
    (0..blocks).all(|k| {
        let mut uf = UnionFind::new(n);
        for t in k * window..(k + 1) * window {
            for &(i, j) in &schedule.round_at(t).edges {
                uf.union(i, j);
            }
        }
        uf.components() == 1
    })
}

/// Outcome of [`verify_mixing`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub ok: bool,
    pub min_positive_entry: f64,
    pub problems: Vec<String>,
}

/// Checks every round: nonnegative entries, support inside edges ∪ diagonal,
/// unit row and column sums within [`STOCHASTIC_TOL`].
pub fn verify_mixing(schedule: &GraphSchedule) -> MixingReport {
    let mut problems = Vec::new();
    let n = schedule.n_agents();
    for (k, r) in schedule.rounds().iter().enumerate() {
        let w = &r.mixing;
        for i in 0..n {
            for j in 0..n {
                let v = w[i][j];
                if !v.is_finite() || v < 0.0 {
                    problems.push(format!("round {k}: entry ({i},{j}) = {v} is not ≥ 0"));
                } else if v > 0.0 && i != j && !r.has_edge(i, j) {
                    problems.push(format!(
                        "round {k}: entry ({i},{j}) is positive but {{{i},{j}}} is not an edge"
                    ));
                }
            }
            let row: f64 = w[i].iter().sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                problems.push(format!("round {k}: row {i} sums to {row}"));
            }
            let col: f64 = (0..n).map(|m| w[m][i]).sum();
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                problems.push(format!("round {k}: column {i} sums to {col}"));
            }
        }
    }
    MixingReport {
        ok: problems.is_empty(),
        min_positive_entry: smallest_positive(schedule.rounds()),
        problems,
    }
}

/// `out_i = Σ_j W[i][j] v_j`, summed in index order.
pub fn mix(round: &Round, values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = round.n_agents();
    if values.len() != n {
        return Err(Error::invalid(format!(
            "mixing {} vectors with an {n}×{n} matrix",
            values.len()
        )));
    }
    let p = values.first().map_or(0, Vec::len);
    if values.iter().any(|v| v.len() != p) {
        return Err(Error::invalid("mixed vectors differ in length"));
    }
    Ok(round
        .mixing
        .iter()
        .map(|row| {
            let mut acc = vec![0.0; p];
            for (w, v) in row.iter().zip(values) {
                if *w != 0.0 {
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += w * x;
                    }
                }
            }
            acc
        })
        .collect())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

struct UnionFind {
    parent: Vec<usize>,
    count: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            count: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
            self.count -= 1;
        }
    }

    fn components(&self) -> usize {
        self.count
    }
}
