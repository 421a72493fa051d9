//! Stochastic sets of interval type on the grid.
//!
//! Per scenario the section is a down-set of node indices `{0, .., last}`,
//! stored as a debut instant plus an open/closed flag: open sections exclude
//! the debut node, closed sections include it. Sections are never empty, so
//! an open section needs a debut of at least one. The debut and the
//! open/closed pattern determine the set uniquely; the witness event behind
//! the open flag is not stored because it is not unique.
//!
//! Whether a set is meant to be optional or predictable is recorded as
//! metadata only: on a finite grid every stopping time is announceable, so
//! the distinction is representational and never enforced.

use std::fmt;
use std::sync::Arc;

use crate::grid::TimeGrid;
use crate::{EngineError, Result};

/// A grid instant: a node index or the at-infinity marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GridInstant {
    Node(usize),
    Infinite,
}

impl GridInstant {
    pub fn min(self, other: GridInstant) -> GridInstant {
        std::cmp::min(self, other)
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, GridInstant::Infinite)
    }

    /// Node index if finite.
    pub fn node(self) -> Option<usize> {
        match self {
            GridInstant::Node(k) => Some(k),
            GridInstant::Infinite => None,
        }
    }
}

impl fmt::Display for GridInstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridInstant::Node(k) => write!(f, "{k}"),
            GridInstant::Infinite => write!(f, "inf"),
        }
    }
}

/// A stopping time: one grid instant per scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    times: Vec<GridInstant>,
}

impl StoppingTime {
    pub fn new(times: Vec<GridInstant>) -> Self {
        StoppingTime { times }
    }

    pub fn constant(n_scenarios: usize, at: GridInstant) -> Self {
        StoppingTime {
            times: vec![at; n_scenarios],
        }
    }

    pub fn n_scenarios(&self) -> usize {
        self.times.len()
    }

    pub fn at(&self, scenario: usize) -> GridInstant {
        self.times[scenario]
    }

    pub fn times(&self) -> &[GridInstant] {
        &self.times
    }

    /// Pointwise minimum of two stopping times.
    pub fn min(&self, other: &StoppingTime) -> StoppingTime {
        debug_assert_eq!(self.times.len(), other.times.len());
        StoppingTime {
            times: self
                .times
                .iter()
                .zip(&other.times)
                .map(|(&a, &b)| a.min(b))
                .collect(),
        }
    }

    /// Pointwise nondecreasing comparison.
    pub fn le(&self, other: &StoppingTime) -> bool {
        self.times.iter().zip(&other.times).all(|(a, b)| a <= b)
    }
}

/// Intended class of a set, recorded as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    Optional,
    Predictable,
}

/// A stochastic set of interval type over a scenario batch.
#[derive(Debug, Clone)]
pub struct IntervalTypeSet {
    grid: Arc<TimeGrid>,
    debut: StoppingTime,
    open: Vec<bool>,
    kind: SetKind,
}

impl PartialEq for IntervalTypeSet {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.debut == other.debut && self.open == other.open
    }
}

impl IntervalTypeSet {
    /// Full set: every section covers the whole grid window.
    pub fn full(grid: Arc<TimeGrid>, n_scenarios: usize) -> Arc<Self> {
        Arc::new(IntervalTypeSet {
            grid,
            debut: StoppingTime::constant(n_scenarios, GridInstant::Infinite),
            open: vec![false; n_scenarios],
            kind: SetKind::Optional,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn n_scenarios(&self) -> usize {
        self.debut.n_scenarios()
    }

    pub fn debut(&self) -> &StoppingTime {
        &self.debut
    }

    pub fn is_open(&self, scenario: usize) -> bool {
        self.open[scenario]
    }

    pub fn kind(&self) -> SetKind {
        self.kind
    }

    /// Largest member node of the section.
    pub fn last_node(&self, scenario: usize) -> usize {
        let n = self.grid.n_steps();
        match self.debut.at(scenario) {
            GridInstant::Infinite => n,
            GridInstant::Node(k) => {
                if self.open[scenario] {
                    k - 1
                } else {
                    k.min(n)
                }
            }
        }
    }

    /// Number of member nodes of the section.
    pub fn member_count(&self, scenario: usize) -> usize {
        self.last_node(scenario) + 1
    }

    /// Whether the section covers the whole grid window.
    pub fn is_full_section(&self, scenario: usize) -> bool {
        self.last_node(scenario) == self.grid.n_steps()
    }

    pub fn membership(&self, scenario: usize, node: usize) -> Result<bool> {
        if scenario >= self.n_scenarios() || node > self.grid.n_steps() {
            return Err(EngineError::IndexOutOfRange(format!(
                "scenario {scenario}, node {node}"
            )));
        }
        Ok(node <= self.last_node(scenario))
    }

    /// Whether `other` is contained in this set, scenario by scenario.
    pub fn contains(&self, other: &IntervalTypeSet) -> bool {
        self.grid == other.grid
            && self.n_scenarios() == other.n_scenarios()
            && (0..self.n_scenarios()).all(|w| other.last_node(w) <= self.last_node(w))
    }
}

/// Builds the set with the given debut and per-scenario open flags.
///
/// Open sections must have a positive debut, otherwise the section would be
/// empty; violations are reported for every offending scenario at once.
pub fn make_interval_set(
    grid: Arc<TimeGrid>,
    debut: StoppingTime,
    open: Vec<bool>,
    kind: SetKind,
) -> Result<Arc<IntervalTypeSet>> {
    if debut.n_scenarios() != open.len() {
        return Err(EngineError::InvalidSet(format!(
            "debut has {} scenarios, open flags have {}",
            debut.n_scenarios(),
            open.len()
        )));
    }
    let offending: Vec<usize> = (0..open.len())
        .filter(|&w| open[w] && debut.at(w) == GridInstant::Node(0))
        .collect();
    if !offending.is_empty() {
        return Err(EngineError::InvalidSet(format!(
            "open sections need a positive debut; offending scenarios: {offending:?}"
        )));
    }
    if let Some(w) = (0..open.len()).find(|&w| match debut.at(w) {
        GridInstant::Node(k) => k > grid.n_steps(),
        GridInstant::Infinite => false,
    }) {
        return Err(EngineError::InvalidSet(format!(
            "debut beyond the grid at scenario {w}; use the infinite marker"
        )));
    }
    // canonical form: the flag carries no information at an infinite debut
    let open = (0..open.len())
        .map(|w| open[w] && !debut.at(w).is_infinite())
        .collect();
    Ok(Arc::new(IntervalTypeSet {
        grid,
        debut,
        open,
        kind,
    }))
}

/// Increasing ladder of stopping times generating a predictable set.
#[derive(Debug, Clone)]
pub struct FundamentalSequence {
    levels: Vec<StoppingTime>,
}

impl FundamentalSequence {
    pub fn new(levels: Vec<StoppingTime>) -> Result<Self> {
        if levels.is_empty() {
            return Err(EngineError::InvalidSet("empty fundamental sequence".into()));
        }
        let n = levels[0].n_scenarios();
        for (i, level) in levels.iter().enumerate() {
            if level.n_scenarios() != n {
                return Err(EngineError::InvalidSet(format!(
                    "level {i} has {} scenarios, expected {n}",
                    level.n_scenarios()
                )));
            }
        }
        for i in 1..levels.len() {
            if !levels[i - 1].le(&levels[i]) {
                return Err(EngineError::InvalidSet(format!(
                    "levels {} and {} are not nondecreasing",
                    i - 1,
                    i
                )));
            }
        }
        Ok(FundamentalSequence { levels })
    }

    pub fn levels(&self) -> &[StoppingTime] {
        &self.levels
    }

    pub fn last(&self) -> &StoppingTime {
        self.levels.last().expect("nonempty by construction")
    }
}

/// Union of the closed intervals up to each ladder level. On a finite grid
/// the supremum is attained, so the resulting section is closed at the top
/// level (full grid when that level is infinite).
pub fn predictable_from_fs(
    grid: Arc<TimeGrid>,
    fs: &FundamentalSequence,
) -> Result<Arc<IntervalTypeSet>> {
    let top = fs.last().clone();
    let n = fs.last().n_scenarios();
    make_interval_set(grid, top, vec![false; n], SetKind::Predictable)
}

/// Sections `B_w \cap [0, S(w)]`.
pub fn intersect_stop(set: &IntervalTypeSet, stop: &StoppingTime) -> Result<Arc<IntervalTypeSet>> {
    if stop.n_scenarios() != set.n_scenarios() {
        return Err(EngineError::InvalidSet(format!(
            "stopping time has {} scenarios, set has {}",
            stop.n_scenarios(),
            set.n_scenarios()
        )));
    }
    let mut debut = Vec::with_capacity(set.n_scenarios());
    let mut open = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        match stop.at(w) {
            GridInstant::Node(s) if s < set.member_count(w) => {
                // the cap bites: section becomes closed at s
                debut.push(GridInstant::Node(s));
                open.push(false);
            }
            _ => {
                debut.push(set.debut.at(w));
                open.push(set.open[w]);
            }
        }
    }
    make_interval_set(
        Arc::clone(&set.grid),
        StoppingTime::new(debut),
        open,
        set.kind,
    )
}

/// Whether the graph interval `[0, S]` stays inside the set: every finite
/// value is a member node, and an infinite value is allowed only where the
/// section already covers the whole window.
pub fn is_inner_stopping_time(set: &IntervalTypeSet, stop: &StoppingTime) -> bool {
    if stop.n_scenarios() != set.n_scenarios() {
        return false;
    }
    (0..set.n_scenarios()).all(|w| match stop.at(w) {
        GridInstant::Node(s) => s <= set.last_node(w),
        GridInstant::Infinite => set.is_full_section(w),
    })
}
