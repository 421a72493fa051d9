//! Stochastic integrals on a horizon set and their quadratic covariations.
//!
//! All integrals are left-point sums with interval-indexed integrands: the
//! value on `(t_{k-1}, t_k]` multiplies increment `k`, and every integral
//! carries the mass `H_0 X_0` at node 0. Under these conventions the
//! structural identities (linearity, associativity, jump and stop
//! commutation, the defining bracket identity of the martingale integral)
//! hold exactly in floating point.
//!
//! Integrators against local martingales must be flagged inner; without the
//! flag the integral is not uniquely determined by values on the horizon,
//! and the operation refuses rather than guessing.

use std::sync::Arc;

use crate::bprocess::{stop_path, BProcess, CoupledSequence};
use crate::grid::PredictablePath;
use crate::math::mean_stderr;
use crate::sets::{GridInstant, IntervalTypeSet, StoppingTime};
use crate::{EngineError, Result};

/// Labeled increment streams of a decomposed process.
///
/// Streams are aligned with member nodes; index 0 is always zero.
/// `cont` holds continuous-martingale increments, `disc` purely
/// discontinuous martingale increments, and the finite-variation part is
/// split into an absolutely continuous stream (`fv_drift`) and a jump stream
/// (`fv_jump`). A node is a jump node exactly when `disc` or `fv_jump` is
/// nonzero there; drift increments never count as jumps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decomposition {
    pub cont: Vec<Vec<f64>>,
    pub disc: Vec<Vec<f64>>,
    pub fv_drift: Vec<Vec<f64>>,
    pub fv_jump: Vec<Vec<f64>>,
    /// Per-step diffusion coefficient of the continuous part, when known;
    /// enables the analytic bracket mode.
    pub diffusion: Option<Vec<Vec<f64>>>,
}

impl Decomposition {
    pub fn zeros(set: &IntervalTypeSet) -> Self {
        let rows: Vec<Vec<f64>> = (0..set.n_scenarios())
            .map(|w| vec![0.0; set.member_count(w)])
            .collect();
        Decomposition {
            cont: rows.clone(),
            disc: rows.clone(),
            fv_drift: rows.clone(),
            fv_jump: rows,
            diffusion: None,
        }
    }

    fn streams(&self) -> [&Vec<Vec<f64>>; 4] {
        [&self.cont, &self.disc, &self.fv_drift, &self.fv_jump]
    }

    pub(crate) fn validate_against(
        &self,
        set: &IntervalTypeSet,
        values: &[Vec<f64>],
    ) -> Result<()> {
        for stream in self.streams() {
            if stream.len() != set.n_scenarios() {
                return Err(EngineError::InvalidSet(
                    "decomposition stream has the wrong scenario count".into(),
                ));
            }
            for (w, row) in stream.iter().enumerate() {
                if row.len() != set.member_count(w) {
                    return Err(EngineError::InvalidSet(format!(
                        "decomposition stream has {} entries for {} member nodes (scenario {w})",
                        row.len(),
                        set.member_count(w)
                    )));
                }
                if row[0] != 0.0 {
                    return Err(EngineError::InvalidSet(format!(
                        "decomposition stream carries mass at node 0 (scenario {w})"
                    )));
                }
            }
        }
        for (w, row) in values.iter().enumerate() {
            for k in 1..row.len() {
                let dv = row[k] - row[k - 1];
                let sum = self.cont[w][k] + self.disc[w][k] + self.fv_drift[w][k] + self.fv_jump[w][k];
                if (dv - sum).abs() > 1e-9 * dv.abs().max(1.0) {
                    return Err(EngineError::InvalidSet(format!(
                        "decomposition streams do not sum to the increment at scenario {w}, node {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether any jump-labeled stream is nonzero at the node.
    pub fn is_jump_node(&self, scenario: usize, node: usize) -> bool {
        self.disc[scenario][node] != 0.0 || self.fv_jump[scenario][node] != 0.0
    }

    pub(crate) fn truncate_to(&self, subset: &IntervalTypeSet) -> Decomposition {
        let cut = |stream: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            stream
                .iter()
                .enumerate()
                .map(|(w, row)| row[..subset.member_count(w)].to_vec())
                .collect()
        };
        Decomposition {
            cont: cut(&self.cont),
            disc: cut(&self.disc),
            fv_drift: cut(&self.fv_drift),
            fv_jump: cut(&self.fv_jump),
            diffusion: self.diffusion.as_ref().map(cut),
        }
    }

    pub(crate) fn stop_at(&self, at: &StoppingTime) -> Decomposition {
        let freeze = |stream: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            stream
                .iter()
                .enumerate()
                .map(|(w, row)| match at.at(w) {
                    GridInstant::Infinite => row.clone(),
                    GridInstant::Node(s) => row
                        .iter()
                        .enumerate()
                        .map(|(k, &v)| if k <= s { v } else { 0.0 })
                        .collect(),
                })
                .collect()
        };
        Decomposition {
            cont: freeze(&self.cont),
            disc: freeze(&self.disc),
            fv_drift: freeze(&self.fv_drift),
            fv_jump: freeze(&self.fv_jump),
            diffusion: self.diffusion.as_ref().map(freeze),
        }
    }

    pub(crate) fn linear(&self, a: f64, other: &Decomposition, b: f64) -> Decomposition {
        let comb = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            x.iter()
                .zip(y)
                .map(|(u, v)| u.iter().zip(v).map(|(&p, &q)| a * p + b * q).collect())
                .collect()
        };
        let diffusion = match (&self.diffusion, &other.diffusion) {
            (Some(x), Some(y)) => Some(comb(x, y)),
            _ => None,
        };
        Decomposition {
            cont: comb(&self.cont, &other.cont),
            disc: comb(&self.disc, &other.disc),
            fv_drift: comb(&self.fv_drift, &other.fv_drift),
            fv_jump: comb(&self.fv_jump, &other.fv_jump),
            diffusion,
        }
    }

    fn scale_by_steps(&self, h: &BPredictable) -> Decomposition {
        let scale = |stream: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            stream
                .iter()
                .enumerate()
                .map(|(w, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(k, &v)| if k == 0 { 0.0 } else { h.step(w, k) * v })
                        .collect()
                })
                .collect()
        };
        Decomposition {
            cont: scale(&self.cont),
            disc: scale(&self.disc),
            fv_drift: scale(&self.fv_drift),
            fv_jump: scale(&self.fv_jump),
            diffusion: self.diffusion.as_ref().map(scale),
        }
    }
}

/// Builds a decomposed process from its initial values and increment
/// streams; the node values are the running sums, so the decomposition
/// invariant holds exactly.
pub fn decomposed_from_streams(
    set: Arc<IntervalTypeSet>,
    initial: &[f64],
    decomposition: Decomposition,
    inner: bool,
) -> Result<BProcess> {
    if initial.len() != set.n_scenarios() {
        return Err(EngineError::InvalidSet(
            "initial values do not match the scenario count".into(),
        ));
    }
    let mut values = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let mut row = Vec::with_capacity(count);
        let mut x = initial[w];
        row.push(x);
        for k in 1..count {
            x += decomposition.cont[w][k]
                + decomposition.disc[w][k]
                + decomposition.fv_drift[w][k]
                + decomposition.fv_jump[w][k];
            row.push(x);
        }
        values.push(row);
    }
    let mut bp = BProcess::from_member_values(set, values)?.with_inner(inner);
    bp.set_decomposition_unchecked(decomposition);
    Ok(bp)
}

/// A predictable integrand restricted to a horizon set: per scenario an atom
/// at node 0 plus one value per member step.
#[derive(Debug, Clone, PartialEq)]
pub struct BPredictable {
    set: Arc<IntervalTypeSet>,
    atom: Vec<f64>,
    /// `steps[w][k]` multiplies increment `k`; index 0 is unused and zero.
    steps: Vec<Vec<f64>>,
}

impl BPredictable {
    pub fn new(set: Arc<IntervalTypeSet>, atom: Vec<f64>, steps: Vec<Vec<f64>>) -> Result<Self> {
        if atom.len() != set.n_scenarios() || steps.len() != set.n_scenarios() {
            return Err(EngineError::InvalidSet(
                "integrand does not match the scenario count".into(),
            ));
        }
        for (w, row) in steps.iter().enumerate() {
            if row.len() != set.member_count(w) {
                return Err(EngineError::InvalidSet(format!(
                    "integrand has {} step values for {} member nodes (scenario {w})",
                    row.len(),
                    set.member_count(w)
                )));
            }
        }
        if atom.iter().any(|v| !v.is_finite())
            || steps.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(EngineError::InvalidSet("non-finite integrand value".into()));
        }
        Ok(BPredictable { set, atom, steps })
    }

    pub fn constant(set: Arc<IntervalTypeSet>, value: f64) -> Self {
        let atom = vec![value; set.n_scenarios()];
        let steps = (0..set.n_scenarios())
            .map(|w| {
                let mut row = vec![value; set.member_count(w)];
                row[0] = 0.0;
                row
            })
            .collect();
        BPredictable {
            set,
            atom,
            steps,
        }
    }

    /// Restriction of full-grid predictable paths to the horizon.
    pub fn restrict_paths(paths: &[PredictablePath], set: Arc<IntervalTypeSet>) -> Result<Self> {
        if paths.len() != set.n_scenarios() {
            return Err(EngineError::InvalidSet(
                "integrand paths do not match the scenario count".into(),
            ));
        }
        let atom = paths.iter().map(|p| p.atom()).collect();
        let steps = paths
            .iter()
            .enumerate()
            .map(|(w, p)| {
                let mut row = Vec::with_capacity(set.member_count(w));
                row.push(0.0);
                for k in 1..set.member_count(w) {
                    row.push(p.step(k));
                }
                row
            })
            .collect();
        BPredictable::new(set, atom, steps)
    }

    /// Left-limit integrand of a process: atom `X_0`, step `k` takes
    /// `X_{k-1}`. This is the predictable version of the process used by
    /// integration by parts.
    pub fn left_limits_of(bp: &BProcess) -> Self {
        let atom = (0..bp.n_scenarios()).map(|w| bp.initial(w)).collect();
        let steps = bp
            .rows()
            .iter()
            .map(|row| {
                let mut out = Vec::with_capacity(row.len());
                out.push(0.0);
                for k in 1..row.len() {
                    out.push(row[k - 1]);
                }
                out
            })
            .collect();
        BPredictable {
            set: Arc::clone(bp.set()),
            atom,
            steps,
        }
    }

    pub fn set(&self) -> &Arc<IntervalTypeSet> {
        &self.set
    }

    pub fn atom(&self, scenario: usize) -> f64 {
        self.atom[scenario]
    }

    pub fn step(&self, scenario: usize, k: usize) -> f64 {
        self.steps[scenario][k]
    }

    /// Pointwise product, atoms included.
    pub fn product(&self, other: &BPredictable) -> Result<BPredictable> {
        if *self.set != *other.set {
            return Err(EngineError::SetMismatch);
        }
        let atom = self
            .atom
            .iter()
            .zip(&other.atom)
            .map(|(&a, &b)| a * b)
            .collect();
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| u * v).collect())
            .collect();
        BPredictable::new(Arc::clone(&self.set), atom, steps)
    }

    pub fn linear(&self, a: f64, other: &BPredictable, b: f64) -> Result<BPredictable> {
        if *self.set != *other.set {
            return Err(EngineError::SetMismatch);
        }
        let atom = self
            .atom
            .iter()
            .zip(&other.atom)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| a * u + b * v).collect())
            .collect();
        BPredictable::new(Arc::clone(&self.set), atom, steps)
    }

    /// `H I_{[0, tau]}`: step values beyond the cap are zeroed, the atom is
    /// kept (node 0 is always inside the cap).
    pub fn cap_at(&self, at: &StoppingTime) -> BPredictable {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(w, row)| match at.at(w) {
                GridInstant::Infinite => row.clone(),
                GridInstant::Node(s) => row
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| if k <= s { v } else { 0.0 })
                    .collect(),
            })
            .collect();
        BPredictable {
            set: Arc::clone(&self.set),
            atom: self.atom.clone(),
            steps,
        }
    }

    /// Stopped integrand `H^tau`: step values beyond the stop freeze at the
    /// value in force at the stop instant.
    pub fn freeze_at(&self, at: &StoppingTime) -> BPredictable {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(w, row)| match at.at(w) {
                GridInstant::Infinite => row.clone(),
                GridInstant::Node(s) => {
                    let frozen = if s == 0 { self.atom[w] } else { row[s] };
                    row.iter()
                        .enumerate()
                        .map(|(k, &v)| if k <= s { v } else { frozen })
                        .collect()
                }
            })
            .collect();
        BPredictable {
            set: Arc::clone(&self.set),
            atom: self.atom.clone(),
            steps,
        }
    }
}

fn require_same_set(a: &IntervalTypeSet, b: &IntervalTypeSet) -> Result<()> {
    if *a != *b {
        return Err(EngineError::SetMismatch);
    }
    Ok(())
}

/// Left-point integral core: `H_0 X_0` at node 0, then cumulative
/// `H_k * increment_k`. The absolute running sum guards against divergence.
fn integrate_rows<F>(h: &BPredictable, initial: &[f64], increment: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, usize) -> f64,
{
    let set = &h.set;
    let mut rows = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let mut row = Vec::with_capacity(count);
        let mut acc = h.atom(w) * initial[w];
        let mut abs_acc = acc.abs();
        row.push(acc);
        for k in 1..count {
            let term = h.step(w, k) * increment(w, k);
            acc += term;
            abs_acc += term.abs();
            if !abs_acc.is_finite() || !acc.is_finite() {
                return Err(EngineError::DivergentIntegral { scenario: w, node: k });
            }
            row.push(acc);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Left-point integral against total increments with no class checks; used
/// internally where the identity being evaluated supplies its own
/// hypotheses.
pub(crate) fn raw_integral(h: &BPredictable, x: &BProcess) -> Result<BProcess> {
    require_same_set(&h.set, x.set())?;
    let initial: Vec<f64> = (0..x.n_scenarios()).map(|w| x.initial(w)).collect();
    let rows = integrate_rows(h, &initial, |w, k| x.increment(w, k))?;
    BProcess::from_member_values(Arc::clone(x.set()), rows)
}

/// Stieltjes integral of a predictable integrand against a finite-variation
/// process. The integrator must not carry martingale-labeled increments.
pub fn stieltjes(h: &BPredictable, a: &BProcess) -> Result<BProcess> {
    require_same_set(&h.set, a.set())?;
    if let Some(d) = a.decomposition() {
        let clean = d.cont.iter().flatten().all(|&v| v == 0.0)
            && d.disc.iter().flatten().all(|&v| v == 0.0);
        if !clean {
            return Err(EngineError::InvalidSet(
                "integrator carries martingale-labeled increments; not a finite-variation process"
                    .into(),
            ));
        }
    }
    let initial: Vec<f64> = (0..a.n_scenarios()).map(|w| a.initial(w)).collect();
    let rows = integrate_rows(h, &initial, |w, k| a.increment(w, k))?;
    let mut result = BProcess::from_member_values(Arc::clone(a.set()), rows)?;
    let decomposition = match a.decomposition() {
        Some(d) => d.scale_by_steps(h),
        None => {
            // untyped finite-variation integrator: keep the fv labels of the
            // result aligned with its own increments
            let mut d = Decomposition::zeros(a.set());
            for w in 0..result.n_scenarios() {
                for k in 1..result.row(w).len() {
                    d.fv_jump[w][k] = result.increment(w, k);
                }
            }
            d
        }
    };
    result.set_decomposition_unchecked(decomposition);
    Ok(result)
}

/// Bracket convention for the continuous part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketConvention {
    /// Summed products of continuous-labeled increments.
    Realized,
    /// Summed products of attached diffusion coefficients times `dt`.
    Analytic,
}

/// Quadratic covariation of two processes on a common set.
#[derive(Debug, Clone)]
pub struct Bracket {
    /// Grid bracket: initial product plus summed products of total node
    /// increments. This is the object entering the exact identities.
    pub process: BProcess,
    /// `X_0 Y_0` per scenario.
    pub initial: Vec<f64>,
    /// Continuous-part contribution, when both operands are decomposed.
    pub cont_part: Option<BProcess>,
    /// Jump-part contribution (discontinuous-martingale and jump-type
    /// finite-variation increments), when both operands are decomposed.
    pub jump_part: Option<BProcess>,
}

impl Bracket {
    /// Bracket in its labeled form: initial product plus continuous part
    /// plus jump part. For a process whose labels carry no jumps this is
    /// exactly the initial product, whatever the grid increments do.
    pub fn labeled_form(&self) -> Option<BProcess> {
        let cont = self.cont_part.as_ref()?;
        let jump = self.jump_part.as_ref()?;
        let base = BProcess::constant(Arc::clone(cont.set()), 0.0);
        let mut rows = base.rows().to_vec();
        for (w, row) in rows.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.initial[w] + cont.row(w)[k] + jump.row(w)[k];
            }
        }
        BProcess::from_member_values(Arc::clone(cont.set()), rows).ok()
    }
}

/// Grid quadratic covariation `[X, Y]`.
pub fn bracket(x: &BProcess, y: &BProcess) -> Result<Bracket> {
    require_same_set(x.set(), y.set())?;
    let set = Arc::clone(x.set());
    let initial: Vec<f64> = (0..x.n_scenarios())
        .map(|w| x.initial(w) * y.initial(w))
        .collect();
    let mut rows = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let mut row = Vec::with_capacity(count);
        let mut acc = initial[w];
        row.push(acc);
        for k in 1..count {
            acc += x.increment(w, k) * y.increment(w, k);
            row.push(acc);
        }
        rows.push(row);
    }
    let mut process = BProcess::from_member_values(Arc::clone(&set), rows)?;

    let parts = match (x.decomposition(), y.decomposition()) {
        (Some(dx), Some(dy)) => {
            let mut cont_rows = Vec::with_capacity(set.n_scenarios());
            let mut jump_rows = Vec::with_capacity(set.n_scenarios());
            for w in 0..set.n_scenarios() {
                let count = set.member_count(w);
                let mut cont_row = Vec::with_capacity(count);
                let mut jump_row = Vec::with_capacity(count);
                let mut cont_acc = 0.0;
                let mut jump_acc = 0.0;
                cont_row.push(0.0);
                jump_row.push(0.0);
                for k in 1..count {
                    cont_acc += dx.cont[w][k] * dy.cont[w][k];
                    jump_acc += (dx.disc[w][k] + dx.fv_jump[w][k])
                        * (dy.disc[w][k] + dy.fv_jump[w][k]);
                    cont_row.push(cont_acc);
                    jump_row.push(jump_acc);
                }
                cont_rows.push(cont_row);
                jump_rows.push(jump_row);
            }
            Some((
                BProcess::from_member_values(Arc::clone(&set), cont_rows)?,
                BProcess::from_member_values(Arc::clone(&set), jump_rows)?,
            ))
        }
        _ => None,
    };

    // the bracket is a finite-variation process; label its increments as
    // jumps where either operand is jump-labeled, drift otherwise
    let mut d = Decomposition::zeros(&set);
    for w in 0..set.n_scenarios() {
        for k in 1..set.member_count(w) {
            let incr = process.increment(w, k);
            let is_jump = match (x.decomposition(), y.decomposition()) {
                (Some(dx), Some(dy)) => dx.is_jump_node(w, k) || dy.is_jump_node(w, k),
                _ => false,
            };
            if is_jump {
                d.fv_jump[w][k] = incr;
            } else {
                d.fv_drift[w][k] = incr;
            }
        }
    }
    process.set_decomposition_unchecked(d);

    let (cont_part, jump_part) = match parts {
        Some((c, j)) => (Some(c), Some(j)),
        None => (None, None),
    };
    Ok(Bracket {
        process,
        initial,
        cont_part,
        jump_part,
    })
}

/// Predictable quadratic covariation estimate of the continuous parts.
pub fn predictable_qv(
    x: &BProcess,
    y: &BProcess,
    convention: BracketConvention,
) -> Result<BProcess> {
    require_same_set(x.set(), y.set())?;
    let dx = x.decomposition().ok_or(EngineError::MissingDecomposition)?;
    let dy = y.decomposition().ok_or(EngineError::MissingDecomposition)?;
    let set = Arc::clone(x.set());
    let dt = set.grid().dt();
    let mut rows = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let mut row = Vec::with_capacity(count);
        let mut acc = 0.0;
        row.push(0.0);
        for k in 1..count {
            let term = match convention {
                BracketConvention::Realized => dx.cont[w][k] * dy.cont[w][k],
                BracketConvention::Analytic => {
                    let sx = dx.diffusion.as_ref().ok_or(EngineError::MissingDiffusion)?;
                    let sy = dy.diffusion.as_ref().ok_or(EngineError::MissingDiffusion)?;
                    sx[w][k] * sy[w][k] * dt
                }
            };
            acc += term;
            row.push(acc);
        }
        rows.push(row);
    }
    let mut result = BProcess::from_member_values(Arc::clone(&set), rows)?;
    let mut d = Decomposition::zeros(&set);
    for w in 0..set.n_scenarios() {
        for k in 1..set.member_count(w) {
            d.fv_drift[w][k] = result.increment(w, k);
        }
    }
    result.set_decomposition_unchecked(d);
    Ok(result)
}

/// Integral of a predictable integrand against an inner local martingale.
///
/// Non-inner integrators are rejected: for them the defining identity
/// `[H . M, N] = H . [M, N]` does not pin the integral down.
pub fn martingale_integral(h: &BPredictable, m: &BProcess) -> Result<BProcess> {
    require_same_set(&h.set, m.set())?;
    if !m.inner() {
        return Err(EngineError::NonInnerIntegrator);
    }
    if let Some(d) = m.decomposition() {
        let fv_clean = d.fv_drift.iter().flatten().all(|&v| v == 0.0)
            && d.fv_jump.iter().flatten().all(|&v| v == 0.0);
        if !fv_clean {
            return Err(EngineError::InvalidSet(
                "integrator carries finite-variation-labeled increments; use the semimartingale integral"
                    .into(),
            ));
        }
    }
    let initial: Vec<f64> = (0..m.n_scenarios()).map(|w| m.initial(w)).collect();
    let rows = integrate_rows(h, &initial, |w, k| m.increment(w, k))?;
    let mut result = BProcess::from_member_values(Arc::clone(m.set()), rows)?.with_inner(true);
    if let Some(d) = m.decomposition() {
        result.set_decomposition_unchecked(d.scale_by_steps(h));
    }
    Ok(result)
}

/// Integral of a predictable integrand against an inner semimartingale.
///
/// The value is computed from total increments, so it does not depend on
/// which inner decomposition the integrator carries; the labels of the
/// result are the integrand-scaled labels of the integrator.
pub fn semimartingale_integral(h: &BPredictable, x: &BProcess) -> Result<BProcess> {
    require_same_set(&h.set, x.set())?;
    let d = x.decomposition().ok_or(EngineError::MissingDecomposition)?;
    if !x.inner() {
        return Err(EngineError::NonInnerIntegrator);
    }
    let initial: Vec<f64> = (0..x.n_scenarios()).map(|w| x.initial(w)).collect();
    let rows = integrate_rows(h, &initial, |w, k| x.increment(w, k))?;
    let mut result = BProcess::from_member_values(Arc::clone(x.set()), rows)?.with_inner(true);
    result.set_decomposition_unchecked(d.scale_by_steps(h));
    Ok(result)
}

/// Per-level statistics of the inner check.
#[derive(Debug, Clone)]
pub struct InnerLevelStat {
    pub level: usize,
    pub n_increments: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `|mean| / stderr`, infinite when the increments have positive mean
    /// and zero spread.
    pub z: f64,
    pub pass: bool,
}

/// Outcome of the inner check on a coupled ladder.
#[derive(Debug, Clone)]
pub struct InnerReport {
    /// Assertion supplied by the builder, when the construction itself
    /// guarantees (or refutes) the martingale property of stopped levels.
    pub structural: Option<bool>,
    pub levels: Vec<InnerLevelStat>,
    pub verdict: bool,
}

/// Tests whether ladder levels, stopped at the ladder time capped strictly
/// before an open boundary, look like martingales: the pooled increment mean
/// of each stopped level must sit within four standard errors of zero.
pub fn check_inner(
    set: &IntervalTypeSet,
    cs: &CoupledSequence,
    structural: Option<bool>,
) -> InnerReport {
    let mut levels = Vec::with_capacity(cs.levels.len());
    for (i, level) in cs.levels.iter().enumerate() {
        let mut increments = Vec::new();
        for w in 0..set.n_scenarios() {
            let boundary = match set.debut().at(w) {
                GridInstant::Node(k) if set.is_open(w) => GridInstant::Node(k.saturating_sub(1)),
                _ => GridInstant::Infinite,
            };
            let stop_at = level.time.at(w).min(boundary);
            let stopped = stop_path(&level.paths[w], stop_at);
            let upto = match stop_at {
                GridInstant::Infinite => stopped.values().len() - 1,
                GridInstant::Node(s) => s,
            };
            for k in 1..=upto {
                increments.push(stopped.values()[k] - stopped.values()[k - 1]);
            }
        }
        let n = increments.len();
        let (mean, stderr) = mean_stderr(&increments);
        let (z, pass) = if n == 0 {
            (0.0, true)
        } else if stderr == 0.0 {
            if mean == 0.0 {
                (0.0, true)
            } else {
                (f64::INFINITY, false)
            }
        } else {
            let z = mean.abs() / stderr;
            (z, z <= 4.0)
        };
        levels.push(InnerLevelStat {
            level: i,
            n_increments: n,
            mean,
            stderr,
            z,
            pass,
        });
    }
    let stats_pass = levels.iter().all(|l| l.pass);
    let verdict = structural.unwrap_or(true) && stats_pass;
    InnerReport {
        structural,
        levels,
        verdict,
    }
}
