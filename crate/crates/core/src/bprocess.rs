//! Processes on a horizon set, represented by coupled ladders.
//!
//! A coupled sequence pairs a nondecreasing ladder of stopping times with
//! full-grid paths; the levels must agree with each other on the part of the
//! horizon each covers, while their values outside the horizon are free.
//! Gluing the levels along the ladder yields the process itself, and the
//! result does not depend on which valid ladder was used. Evaluation outside
//! the horizon is a hard error, never a default value: exclusivity is the
//! core contract of these processes.

use std::fmt;
use std::sync::Arc;

use crate::grid::SamplePath;
use crate::integrate::Decomposition;
use crate::sets::{is_inner_stopping_time, GridInstant, IntervalTypeSet, StoppingTime};
use crate::{EngineError, Result};

/// One ladder level: a stopping time and one full-grid path per scenario.
#[derive(Debug, Clone)]
pub struct CoupledLevel {
    pub time: StoppingTime,
    pub paths: Vec<SamplePath>,
}

/// A finite coupled ladder. On a finite grid exhaustion is reached at a
/// finite level, so the infinite sequences of the continuous-time theory are
/// truncated once the last level covers every member node.
#[derive(Debug, Clone)]
pub struct CoupledSequence {
    pub levels: Vec<CoupledLevel>,
}

impl CoupledSequence {
    pub fn new(levels: Vec<CoupledLevel>) -> Self {
        CoupledSequence { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// A single violation found while validating a coupled sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum FcsViolation {
    /// Ladder times decrease between `level - 1` and `level`.
    NonMonotoneTimes { scenario: usize, level: usize },
    /// A ladder time exceeds the debut of the horizon set.
    TimeBeyondDebut { scenario: usize, level: usize },
    /// A member node is not covered by the last ladder level.
    Exhaustion { scenario: usize, node: usize },
    /// Levels `k` and `l` disagree at a member node both cover.
    Consistency {
        scenario: usize,
        node: usize,
        k: usize,
        l: usize,
    },
    /// Structural mismatch (scenario counts, grids).
    Shape(String),
}

impl fmt::Display for FcsViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FcsViolation::NonMonotoneTimes { scenario, level } => {
                write!(f, "ladder times decrease at scenario {scenario}, level {level}")
            }
            FcsViolation::TimeBeyondDebut { scenario, level } => {
                write!(f, "ladder time beyond the debut at scenario {scenario}, level {level}")
            }
            FcsViolation::Exhaustion { scenario, node } => {
                write!(f, "member node {node} of scenario {scenario} is not covered")
            }
            FcsViolation::Consistency { scenario, node, k, l } => write!(
                f,
                "levels {k} and {l} disagree at scenario {scenario}, node {node}"
            ),
            FcsViolation::Shape(msg) => write!(f, "shape mismatch: {msg}"),
        }
    }
}

/// Validation outcome; empty means the sequence is a valid coupled ladder.
#[derive(Debug, Clone, Default)]
pub struct FcsReport {
    pub violations: Vec<FcsViolation>,
}

impl FcsReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for FcsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(8) {
            write!(f, "; {v}")?;
        }
        if self.violations.len() > 8 {
            write!(f, "; ...")?;
        }
        Ok(())
    }
}

/// A process defined on the member nodes of a horizon set.
#[derive(Debug, Clone, PartialEq)]
pub struct BProcess {
    set: Arc<IntervalTypeSet>,
    /// `values[w][k]` for member nodes `k <= last_node(w)`.
    values: Vec<Vec<f64>>,
    decomposition: Option<Decomposition>,
    inner: bool,
}

impl BProcess {
    pub fn from_member_values(set: Arc<IntervalTypeSet>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != set.n_scenarios() {
            return Err(EngineError::InvalidSet(format!(
                "{} value rows for {} scenarios",
                values.len(),
                set.n_scenarios()
            )));
        }
        for (w, row) in values.iter().enumerate() {
            if row.len() != set.member_count(w) {
                return Err(EngineError::InvalidSet(format!(
                    "scenario {w}: {} values for {} member nodes",
                    row.len(),
                    set.member_count(w)
                )));
            }
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(EngineError::InvalidSet(format!(
                    "non-finite value at scenario {w}, node {k}"
                )));
            }
        }
        Ok(BProcess {
            set,
            values,
            decomposition: None,
            inner: false,
        })
    }

    pub fn constant(set: Arc<IntervalTypeSet>, value: f64) -> Self {
        let values = (0..set.n_scenarios())
            .map(|w| vec![value; set.member_count(w)])
            .collect();
        BProcess {
            set,
            values,
            decomposition: None,
            inner: false,
        }
    }

    /// Horizon restriction of full paths, one per scenario.
    pub fn restrict_paths(paths: &[SamplePath], set: Arc<IntervalTypeSet>) -> Result<Self> {
        if paths.len() != set.n_scenarios() {
            return Err(EngineError::InvalidSet(format!(
                "{} paths for {} scenarios",
                paths.len(),
                set.n_scenarios()
            )));
        }
        let values = paths
            .iter()
            .enumerate()
            .map(|(w, p)| p.values()[..set.member_count(w)].to_vec())
            .collect();
        BProcess::from_member_values(set, values)
    }

    pub fn set(&self) -> &Arc<IntervalTypeSet> {
        &self.set
    }

    pub fn n_scenarios(&self) -> usize {
        self.values.len()
    }

    pub fn inner(&self) -> bool {
        self.inner
    }

    pub fn with_inner(mut self, inner: bool) -> Self {
        self.inner = inner;
        self
    }

    pub fn decomposition(&self) -> Option<&Decomposition> {
        self.decomposition.as_ref()
    }

    pub fn with_decomposition(mut self, decomposition: Decomposition) -> Result<Self> {
        decomposition.validate_against(&self.set, &self.values)?;
        self.decomposition = Some(decomposition);
        Ok(self)
    }

    pub(crate) fn set_decomposition_unchecked(&mut self, decomposition: Decomposition) {
        self.decomposition = Some(decomposition);
    }

    /// Value at a member node; outside the horizon this is an error.
    pub fn value(&self, scenario: usize, node: usize) -> Result<f64> {
        if scenario >= self.values.len() {
            return Err(EngineError::IndexOutOfRange(format!("scenario {scenario}")));
        }
        self.values[scenario]
            .get(node)
            .copied()
            .ok_or(EngineError::OutsideSet { scenario, node })
    }

    pub fn initial(&self, scenario: usize) -> f64 {
        self.values[scenario][0]
    }

    /// Raw member values of one scenario.
    pub fn row(&self, scenario: usize) -> &[f64] {
        &self.values[scenario]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Node increment inside the section; zero at node 0.
    pub fn increment(&self, scenario: usize, node: usize) -> f64 {
        if node == 0 {
            0.0
        } else {
            self.values[scenario][node] - self.values[scenario][node - 1]
        }
    }

    /// Restriction to a subset of the horizon.
    pub fn restrict(&self, subset: Arc<IntervalTypeSet>) -> Result<Self> {
        if !self.set.contains(&subset) {
            return Err(EngineError::InvalidSet(
                "restriction target is not contained in the domain set".into(),
            ));
        }
        let values: Vec<Vec<f64>> = (0..subset.n_scenarios())
            .map(|w| self.values[w][..subset.member_count(w)].to_vec())
            .collect();
        let decomposition = self
            .decomposition
            .as_ref()
            .map(|d| d.truncate_to(&subset));
        Ok(BProcess {
            set: subset,
            values,
            decomposition,
            inner: self.inner,
        })
    }

    /// Stopped process: frozen at the stopping value from `at` onward, still
    /// defined on the whole section. Requires an inner stopping time.
    pub fn stop(&self, at: &StoppingTime) -> Result<Self> {
        if !is_inner_stopping_time(&self.set, at) {
            return Err(EngineError::NotInnerStoppingTime(format!(
                "stop at {:?}",
                at.times().iter().map(|t| t.to_string()).collect::<Vec<_>>()
            )));
        }
        let values: Vec<Vec<f64>> = self
            .values
            .iter()
            .enumerate()
            .map(|(w, row)| match at.at(w) {
                GridInstant::Infinite => row.clone(),
                GridInstant::Node(s) => row
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| if k <= s { v } else { row[s] })
                    .collect(),
            })
            .collect();
        let decomposition = self.decomposition.as_ref().map(|d| d.stop_at(at));
        Ok(BProcess {
            set: Arc::clone(&self.set),
            values,
            decomposition,
            inner: self.inner,
        })
    }

    /// Jump process: node increments, zero at node 0.
    pub fn jump_process(&self) -> Self {
        let values: Vec<Vec<f64>> = self
            .values
            .iter()
            .map(|row| {
                let mut out = Vec::with_capacity(row.len());
                out.push(0.0);
                for k in 1..row.len() {
                    out.push(row[k] - row[k - 1]);
                }
                out
            })
            .collect();
        BProcess {
            set: Arc::clone(&self.set),
            values,
            decomposition: None,
            inner: false,
        }
    }

    /// Running nodewise sum including the node-0 value.
    pub fn summation(&self) -> Self {
        let values: Vec<Vec<f64>> = self
            .values
            .iter()
            .map(|row| {
                let mut out = Vec::with_capacity(row.len());
                let mut acc = 0.0;
                for &v in row {
                    acc += v;
                    out.push(acc);
                }
                out
            })
            .collect();
        BProcess {
            set: Arc::clone(&self.set),
            values,
            decomposition: None,
            inner: false,
        }
    }

    /// Linear combination `a * self + b * other` on a common set.
    pub fn linear(&self, a: f64, other: &BProcess, b: f64) -> Result<Self> {
        if *self.set != *other.set {
            return Err(EngineError::SetMismatch);
        }
        let values: Vec<Vec<f64>> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| a * u + b * v).collect())
            .collect();
        let decomposition = match (&self.decomposition, &other.decomposition) {
            (Some(dx), Some(dy)) => Some(dx.linear(a, dy, b)),
            _ => None,
        };
        Ok(BProcess {
            set: Arc::clone(&self.set),
            values,
            decomposition,
            inner: self.inner && other.inner,
        })
    }

    /// Nodewise product on a common set.
    pub fn product(&self, other: &BProcess) -> Result<Self> {
        if *self.set != *other.set {
            return Err(EngineError::SetMismatch);
        }
        let values: Vec<Vec<f64>> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| u * v).collect())
            .collect();
        Ok(BProcess {
            set: Arc::clone(&self.set),
            values,
            decomposition: None,
            inner: false,
        })
    }

    /// Largest absolute member value across all scenarios.
    pub fn sup_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|row| row.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }

    /// Largest absolute difference against another process on the same set.
    pub fn sup_abs_diff(&self, other: &BProcess) -> Result<f64> {
        if *self.set != *other.set {
            return Err(EngineError::SetMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| (u - v).abs()))
            .fold(0.0, f64::max))
    }

    /// Sup difference relative to the scale of the operands, floored at one.
    pub fn rel_sup_diff(&self, other: &BProcess) -> Result<f64> {
        let diff = self.sup_abs_diff(other)?;
        Ok(diff / self.sup_abs().max(other.sup_abs()).max(1.0))
    }
}

/// Checks ladder monotonicity, debut domination, exhaustion and levelwise
/// consistency. The report lists every violation; an empty report means the
/// sequence is a valid coupled ladder for the set.
pub fn validate_fcs(set: &IntervalTypeSet, cs: &CoupledSequence) -> FcsReport {
    let mut violations = Vec::new();
    if cs.is_empty() {
        violations.push(FcsViolation::Shape("empty coupled sequence".into()));
        return FcsReport { violations };
    }
    let n = set.n_scenarios();
    for (i, level) in cs.levels.iter().enumerate() {
        if level.time.n_scenarios() != n || level.paths.len() != n {
            violations.push(FcsViolation::Shape(format!(
                "level {i} does not match the scenario count {n}"
            )));
            return FcsReport { violations };
        }
        if level.paths.iter().any(|p| p.grid() != set.grid()) {
            violations.push(FcsViolation::Shape(format!("level {i} is on a different grid")));
            return FcsReport { violations };
        }
    }
    for w in 0..n {
        for i in 1..cs.levels.len() {
            if cs.levels[i - 1].time.at(w) > cs.levels[i].time.at(w) {
                violations.push(FcsViolation::NonMonotoneTimes { scenario: w, level: i });
            }
        }
        for (i, level) in cs.levels.iter().enumerate() {
            if level.time.at(w) > set.debut().at(w) {
                violations.push(FcsViolation::TimeBeyondDebut { scenario: w, level: i });
            }
        }
        let last = set.last_node(w);
        let coverage = cs.levels.last().expect("nonempty").time.at(w);
        let covered = match coverage {
            GridInstant::Infinite => true,
            GridInstant::Node(s) => last <= s,
        };
        if !covered {
            violations.push(FcsViolation::Exhaustion { scenario: w, node: last });
        }
        for k in 0..cs.levels.len() {
            let reach = match cs.levels[k].time.at(w) {
                GridInstant::Infinite => last,
                GridInstant::Node(s) => s.min(last),
            };
            for l in (k + 1)..cs.levels.len() {
                let xk = cs.levels[k].paths[w].values();
                let xl = cs.levels[l].paths[w].values();
                for node in 0..=reach {
                    if xk[node] != xl[node] {
                        violations.push(FcsViolation::Consistency {
                            scenario: w,
                            node,
                            k,
                            l,
                        });
                    }
                }
            }
        }
    }
    FcsReport { violations }
}

/// Glues a valid coupled sequence into the process it represents: node 0
/// takes the first level's initial value, and a later member node takes the
/// value of the first level whose ladder time covers it.
pub fn glue(set: Arc<IntervalTypeSet>, cs: &CoupledSequence) -> Result<BProcess> {
    let report = validate_fcs(&set, cs);
    if !report.is_valid() {
        return Err(EngineError::InvalidFcs(report));
    }
    let mut values = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let last = set.last_node(w);
        let mut row = Vec::with_capacity(last + 1);
        row.push(cs.levels[0].paths[w].values()[0]);
        let mut level = 0usize;
        for node in 1..=last {
            while !covers(cs.levels[level].time.at(w), node) {
                level += 1;
                debug_assert!(level < cs.levels.len(), "exhaustion was validated");
            }
            row.push(cs.levels[level].paths[w].values()[node]);
        }
        values.push(row);
    }
    BProcess::from_member_values(set, values)
}

fn covers(at: GridInstant, node: usize) -> bool {
    match at {
        GridInstant::Infinite => true,
        GridInstant::Node(s) => node <= s,
    }
}

/// Pre-stopped full path: values before `at` are kept, from `at` onward the
/// path freezes at the left limit taken at `at`. `at = 0` freezes at the
/// initial value by the pre-initial convention; an infinite instant leaves
/// the path unchanged.
pub fn stop_minus(path: &SamplePath, at: GridInstant) -> SamplePath {
    match at {
        GridInstant::Infinite => path.clone(),
        GridInstant::Node(s) => {
            let frozen = if s == 0 {
                path.values()[0]
            } else {
                path.values()[s - 1]
            };
            let values: Vec<f64> = path
                .values()
                .iter()
                .enumerate()
                .map(|(k, &v)| if k < s { v } else { frozen })
                .collect();
            SamplePath::new(Arc::clone(path.grid()), values).expect("finite by construction")
        }
    }
}

/// Stopped full path: frozen at the value taken at `at`.
pub fn stop_path(path: &SamplePath, at: GridInstant) -> SamplePath {
    match at {
        GridInstant::Infinite => path.clone(),
        GridInstant::Node(s) => {
            let frozen = path.values()[s];
            let values: Vec<f64> = path
                .values()
                .iter()
                .enumerate()
                .map(|(k, &v)| if k <= s { v } else { frozen })
                .collect();
            SamplePath::new(Arc::clone(path.grid()), values).expect("finite by construction")
        }
    }
}

/// Rewrites two coupled sequences for the same set onto the common ladder
/// `T_n /\ S_n`. The shorter sequence is first padded by repeating its last
/// level, which changes nothing it represents.
pub fn merge_fcs_times(
    set: &IntervalTypeSet,
    cs1: &CoupledSequence,
    cs2: &CoupledSequence,
) -> Result<(CoupledSequence, CoupledSequence)> {
    for cs in [cs1, cs2] {
        let report = validate_fcs(set, cs);
        if !report.is_valid() {
            return Err(EngineError::InvalidFcs(report));
        }
    }
    let len = cs1.len().max(cs2.len());
    let pad = |cs: &CoupledSequence| -> Vec<CoupledLevel> {
        let mut levels = cs.levels.clone();
        while levels.len() < len {
            levels.push(levels.last().expect("nonempty").clone());
        }
        levels
    };
    let mut lv1 = pad(cs1);
    let mut lv2 = pad(cs2);
    for i in 0..len {
        let common = lv1[i].time.min(&lv2[i].time);
        lv1[i].time = common.clone();
        lv2[i].time = common;
    }
    Ok((CoupledSequence::new(lv1), CoupledSequence::new(lv2)))
}
