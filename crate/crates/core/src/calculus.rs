//! Executable verification of the change-of-variable formula, integration by
//! parts, and the consolidated identity suite.
//!
//! Integration by parts is an exact discrete theorem under the engine's grid
//! conventions; its residual is machine noise for arbitrary jump paths. The
//! change-of-variable residual is exactly zero for affine functions and for
//! quadratic functions of pure-jump processes with the realized bracket, and
//! shrinks at first order in the step size on continuous diffusions.

use std::sync::Arc;

use rand::Rng;

use crate::bprocess::{glue, BProcess, CoupledLevel, CoupledSequence};
use crate::grid::SamplePath;
use crate::integrate::{
    bracket, decomposed_from_streams, martingale_integral, predictable_qv, raw_integral,
    semimartingale_integral, stieltjes, BPredictable, BracketConvention, Decomposition,
};
use crate::math::mean;
use crate::rng::substream;
use crate::sets::{make_interval_set, GridInstant, IntervalTypeSet, SetKind, StoppingTime};
use crate::{EngineError, Result};

type Scalar = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type Partial = Box<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;
type SecondPartial = Box<dyn Fn(&[f64], usize, usize) -> f64 + Send + Sync>;

/// A twice continuously differentiable function with user-supplied closed
/// forms for the gradient and Hessian. Registration cross-checks both
/// against central finite differences of the evaluator at random points.
pub struct SmoothFunction {
    dim: usize,
    f: Scalar,
    grad: Partial,
    hess: SecondPartial,
}

impl SmoothFunction {
    pub fn new(dim: usize, f: Scalar, grad: Partial, hess: SecondPartial) -> Result<Self> {
        if dim == 0 {
            return Err(EngineError::DerivativeMismatch(
                "dimension must be positive".into(),
            ));
        }
        let sf = SmoothFunction { dim, f, grad, hess };
        sf.validate()?;
        Ok(sf)
    }

    /// One-dimensional constructor.
    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        SmoothFunction::new(
            1,
            Box::new(move |x| f(x[0])),
            Box::new(move |x, _| df(x[0])),
            Box::new(move |x, _, _| d2f(x[0])),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn grad(&self, x: &[f64], k: usize) -> f64 {
        (self.grad)(x, k)
    }

    pub fn hess(&self, x: &[f64], k: usize, l: usize) -> f64 {
        (self.hess)(x, k, l)
    }

    fn validate(&self) -> Result<()> {
        let h = 1e-4;
        let tol = 1e-5;
        let mut rng = substream(0x5eed_cafe, 0, self.dim as u64);
        for _ in 0..8 {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            for k in 0..self.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = ((self.f)(&xp) - (self.f)(&xm)) / (2.0 * h);
                let g = (self.grad)(&x, k);
                if (fd - g).abs() > tol * g.abs().max(1.0) {
                    return Err(EngineError::DerivativeMismatch(format!(
                        "gradient component {k} disagrees with finite differences ({g} vs {fd})"
                    )));
                }
                for l in 0..self.dim {
                    let fd2 = if k == l {
                        ((self.f)(&xp) - 2.0 * (self.f)(&x) + (self.f)(&xm)) / (h * h)
                    } else {
                        let mut xpp = x.clone();
                        let mut xpm = x.clone();
                        let mut xmp = x.clone();
                        let mut xmm = x.clone();
                        xpp[k] += h;
                        xpp[l] += h;
                        xpm[k] += h;
                        xpm[l] -= h;
                        xmp[k] -= h;
                        xmp[l] += h;
                        xmm[k] -= h;
                        xmm[l] -= h;
                        ((self.f)(&xpp) - (self.f)(&xpm) - (self.f)(&xmp) + (self.f)(&xmm))
                            / (4.0 * h * h)
                    };
                    let hh = (self.hess)(&x, k, l);
                    if (fd2 - hh).abs() > tol * hh.abs().max(10.0) {
                        return Err(EngineError::DerivativeMismatch(format!(
                            "hessian component ({k},{l}) disagrees with finite differences ({hh} vs {fd2})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Nodewise residual summary of an identity check.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Largest absolute residual over member nodes and scenarios.
    pub sup_abs: f64,
    /// Largest residual relative to the local scale of the identity.
    pub sup_rel: f64,
    /// Mean absolute residual over member nodes and scenarios.
    pub mean_abs: f64,
    /// Per-scenario sup of the absolute residual.
    pub per_scenario_sup: Vec<f64>,
    pub n_steps: usize,
}

impl ResidualReport {
    fn from_rows(rows: Vec<Vec<(f64, f64)>>, n_steps: usize) -> Self {
        let mut sup_abs = 0.0f64;
        let mut sup_rel = 0.0f64;
        let mut all = Vec::new();
        let mut per_scenario_sup = Vec::with_capacity(rows.len());
        for row in &rows {
            let mut local = 0.0f64;
            for &(abs, rel) in row {
                local = local.max(abs);
                sup_rel = sup_rel.max(rel);
                all.push(abs);
            }
            sup_abs = sup_abs.max(local);
            per_scenario_sup.push(local);
        }
        ResidualReport {
            sup_abs,
            sup_rel,
            mean_abs: mean(&all),
            per_scenario_sup,
            n_steps,
        }
    }
}

/// Nodewise residual of the change-of-variable formula for a vector of
/// decomposed processes on a common set.
///
/// The right-hand side accumulates the gradient integral against total
/// increments, the jump compensation over jump-labeled nodes, and half the
/// Hessian-weighted bracket of the continuous parts under the requested
/// convention.
pub fn ito_residual(
    f: &SmoothFunction,
    components: &[&BProcess],
    convention: BracketConvention,
) -> Result<ResidualReport> {
    if components.len() != f.dim() {
        return Err(EngineError::DerivativeMismatch(format!(
            "{} components for a function of {} variables",
            components.len(),
            f.dim()
        )));
    }
    let set = Arc::clone(components[0].set());
    for c in components {
        if **c.set() != *set {
            return Err(EngineError::SetMismatch);
        }
        if c.decomposition().is_none() {
            return Err(EngineError::MissingDecomposition);
        }
        if !c.inner() {
            return Err(EngineError::NonInnerIntegrator);
        }
    }
    let d = f.dim();
    let dt = set.grid().dt();
    let mut rows = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let z0: Vec<f64> = components.iter().map(|c| c.initial(w)).collect();
        let f0 = f.eval(&z0);
        let mut row = Vec::with_capacity(count);
        row.push((0.0, 0.0));
        let mut z_prev = z0.clone();
        let mut z_curr = vec![0.0; d];
        let mut main = 0.0;
        let mut eta = 0.0;
        let mut brack = 0.0;
        for k in 1..count {
            for (j, c) in components.iter().enumerate() {
                z_curr[j] = c.row(w)[k];
            }
            let grad_prev: Vec<f64> = (0..d).map(|j| f.grad(&z_prev, j)).collect();
            let mut grad_dot = 0.0;
            for (j, c) in components.iter().enumerate() {
                grad_dot += grad_prev[j] * c.increment(w, k);
            }
            main += grad_dot;
            let is_jump = components
                .iter()
                .any(|c| c.decomposition().expect("checked").is_jump_node(w, k));
            if is_jump {
                eta += f.eval(&z_curr) - f.eval(&z_prev) - grad_dot;
            }
            for (j, cj) in components.iter().enumerate() {
                let dj = cj.decomposition().expect("checked");
                for (l, cl) in components.iter().enumerate() {
                    let dl = cl.decomposition().expect("checked");
                    let qv = match convention {
                        BracketConvention::Realized => dj.cont[w][k] * dl.cont[w][k],
                        BracketConvention::Analytic => {
                            let sj = dj.diffusion.as_ref().ok_or(EngineError::MissingDiffusion)?;
                            let sl = dl.diffusion.as_ref().ok_or(EngineError::MissingDiffusion)?;
                            sj[w][k] * sl[w][k] * dt
                        }
                    };
                    brack += 0.5 * f.hess(&z_prev, j, l) * qv;
                }
            }
            let lhs = f.eval(&z_curr);
            let rhs = f0 + main + eta + brack;
            let abs = (lhs - rhs).abs();
            row.push((abs, abs / lhs.abs().max(rhs.abs()).max(1.0)));
            z_prev.copy_from_slice(&z_curr);
        }
        rows.push(row);
    }
    Ok(ResidualReport::from_rows(rows, set.grid().n_steps()))
}

/// Nodewise residual of the integration-by-parts identity
/// `XY = X_- . Y + Y_- . X + [X, Y] - 2 X_0 Y_0`.
pub fn ibp_residual(x: &BProcess, y: &BProcess) -> Result<ResidualReport> {
    if *x.set() != *y.set() {
        return Err(EngineError::SetMismatch);
    }
    let set = Arc::clone(x.set());
    let xy = x.product(y)?;
    let x_left = BPredictable::left_limits_of(x);
    let y_left = BPredictable::left_limits_of(y);
    let int_xy = raw_integral(&x_left, y)?;
    let int_yx = raw_integral(&y_left, x)?;
    let br = bracket(x, y)?.process;
    let mut rows = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let x0y0 = x.initial(w) * y.initial(w);
        let mut row = Vec::with_capacity(count);
        for k in 0..count {
            let lhs = xy.row(w)[k];
            let rhs = int_xy.row(w)[k] + int_yx.row(w)[k] + br.row(w)[k] - 2.0 * x0y0;
            let abs = (lhs - rhs).abs();
            row.push((abs, abs / lhs.abs().max(rhs.abs()).max(1.0)));
        }
        rows.push(row);
    }
    Ok(ResidualReport::from_rows(rows, set.grid().n_steps()))
}

/// Sizes of the randomized law instances.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSizes {
    pub n_steps: usize,
    pub n_scenarios: usize,
    pub n_sets: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes {
            n_steps: 16,
            n_scenarios: 200,
            n_sets: 10,
        }
    }
}

/// One law evaluated on randomized instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LawResult {
    pub law: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Aggregated pass/fail report of the identity suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub laws: Vec<LawResult>,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.laws.iter().all(|l| l.pass)
    }
}

const LAW_TOL: f64 = 1e-12;

struct LawAccumulator {
    laws: Vec<LawResult>,
}

impl LawAccumulator {
    fn new() -> Self {
        LawAccumulator { laws: Vec::new() }
    }

    fn record(&mut self, name: &str, residual: f64) {
        match self.laws.iter_mut().find(|l| l.law == name) {
            Some(entry) => {
                entry.max_residual = entry.max_residual.max(residual);
                entry.pass = entry.max_residual <= entry.tolerance;
            }
            None => self.laws.push(LawResult {
                law: name.to_string(),
                max_residual: residual,
                tolerance: LAW_TOL,
                pass: residual <= LAW_TOL,
            }),
        }
    }
}

/// Random horizon set for suite instance `index`; index 0 is the degenerate
/// single-node-section set, index 1 the full window.
fn suite_set(seed: u64, index: usize, n_steps: usize, n_scenarios: usize) -> Arc<IntervalTypeSet> {
    let grid = crate::grid::make_grid(1.0, n_steps).unwrap();
    if index == 0 {
        return make_interval_set(
            grid,
            StoppingTime::constant(n_scenarios, GridInstant::Node(1)),
            vec![true; n_scenarios],
            SetKind::Optional,
        )
        .unwrap();
    }
    if index == 1 {
        return IntervalTypeSet::full(grid, n_scenarios);
    }
    let mut debut = Vec::with_capacity(n_scenarios);
    let mut open = Vec::with_capacity(n_scenarios);
    for w in 0..n_scenarios {
        let mut rng = substream(seed, w as u64, 1000 + index as u64);
        let is_open = rng.random_bool(0.5);
        let at = if rng.random_bool(0.1) {
            GridInstant::Infinite
        } else if is_open {
            GridInstant::Node(rng.random_range(1..=n_steps))
        } else {
            GridInstant::Node(rng.random_range(0..=n_steps))
        };
        debut.push(at);
        open.push(is_open);
    }
    make_interval_set(grid, StoppingTime::new(debut), open, SetKind::Optional).unwrap()
}

fn suite_process(set: &Arc<IntervalTypeSet>, seed: u64, stream: u64) -> BProcess {
    let mut d = Decomposition::zeros(set);
    let mut initial = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let mut rng = substream(seed, w as u64, stream);
        initial.push(rng.random_range(-2.0..2.0));
        for k in 1..set.member_count(w) {
            let v: f64 = rng.random_range(-1.0..1.0);
            match rng.random_range(0..4) {
                0 => d.cont[w][k] = v,
                1 => d.disc[w][k] = v,
                2 => d.fv_drift[w][k] = v,
                _ => d.fv_jump[w][k] = v,
            }
        }
    }
    decomposed_from_streams(Arc::clone(set), &initial, d, true).unwrap()
}

fn suite_martingale(set: &Arc<IntervalTypeSet>, seed: u64, stream: u64) -> BProcess {
    let mut d = Decomposition::zeros(set);
    let mut initial = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let mut rng = substream(seed, w as u64, stream);
        initial.push(rng.random_range(-1.0..1.0));
        for k in 1..set.member_count(w) {
            let v: f64 = rng.random_range(-1.0..1.0);
            if rng.random_bool(0.5) {
                d.cont[w][k] = v;
            } else {
                d.disc[w][k] = v;
            }
        }
    }
    decomposed_from_streams(Arc::clone(set), &initial, d, true).unwrap()
}

fn suite_fv(set: &Arc<IntervalTypeSet>, seed: u64, stream: u64) -> BProcess {
    let mut d = Decomposition::zeros(set);
    let mut initial = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let mut rng = substream(seed, w as u64, stream);
        initial.push(rng.random_range(-2.0..2.0));
        for k in 1..set.member_count(w) {
            if rng.random_bool(0.5) {
                d.fv_drift[w][k] = rng.random_range(-1.0..1.0);
            } else {
                d.fv_jump[w][k] = rng.random_range(-1.0..1.0);
            }
        }
    }
    decomposed_from_streams(Arc::clone(set), &initial, d, false).unwrap()
}

fn suite_integrand(set: &Arc<IntervalTypeSet>, seed: u64, stream: u64) -> BPredictable {
    let mut atom = Vec::with_capacity(set.n_scenarios());
    let mut steps = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let mut rng = substream(seed, w as u64, stream);
        atom.push(rng.random_range(-1.5..1.5));
        let mut row = vec![0.0; set.member_count(w)];
        for v in row.iter_mut().skip(1) {
            *v = rng.random_range(-1.5..1.5);
        }
        steps.push(row);
    }
    BPredictable::new(Arc::clone(set), atom, steps).unwrap()
}

fn suite_inner_time(set: &Arc<IntervalTypeSet>, seed: u64, stream: u64) -> StoppingTime {
    let times = (0..set.n_scenarios())
        .map(|w| {
            let mut rng = substream(seed, w as u64, stream);
            GridInstant::Node(rng.random_range(0..=set.last_node(w)))
        })
        .collect();
    StoppingTime::new(times)
}

fn rel(a: &BProcess, b: &BProcess) -> f64 {
    a.rel_sup_diff(b).expect("law operands share the set")
}

fn zero_after(bp: &BProcess, at: &StoppingTime) -> BProcess {
    let mut rows = bp.rows().to_vec();
    for (w, row) in rows.iter_mut().enumerate() {
        if let GridInstant::Node(s) = at.at(w) {
            for (k, v) in row.iter_mut().enumerate() {
                if k > s {
                    *v = 0.0;
                }
            }
        }
    }
    BProcess::from_member_values(Arc::clone(bp.set()), rows).expect("shape preserved")
}

/// Evaluates the full law list on randomized small instances and reports the
/// worst residual per law. Deterministic in the seed.
pub fn identity_suite(seed: u64, sizes: SuiteSizes) -> SuiteReport {
    let mut acc = LawAccumulator::new();
    for idx in 0..sizes.n_sets {
        let set = suite_set(seed, idx, sizes.n_steps, sizes.n_scenarios);
        let base = seed ^ (idx as u64).wrapping_mul(0x9e37_79b9);
        let x = suite_process(&set, base, 1);
        let y = suite_process(&set, base, 2);
        let z = suite_process(&set, base, 3);
        let m = suite_martingale(&set, base, 4);
        let n = suite_martingale(&set, base, 5);
        let a = suite_fv(&set, base, 6);
        let v = suite_fv(&set, base, 7);
        let h = suite_integrand(&set, base, 8);
        let g = suite_integrand(&set, base, 9);
        let tau = suite_inner_time(&set, base, 10);
        let rho = suite_inner_time(&set, base, 11);

        // jump identities
        let combo = x.linear(2.0, &y, -3.0).unwrap();
        acc.record(
            "jump-linearity",
            rel(
                &combo.jump_process(),
                &x.jump_process().linear(2.0, &y.jump_process(), -3.0).unwrap(),
            ),
        );
        let sub = crate::sets::intersect_stop(&set, &tau).unwrap();
        acc.record(
            "jump-restriction",
            rel(
                &x.restrict(Arc::clone(&sub)).unwrap().jump_process(),
                &x.jump_process().restrict(Arc::clone(&sub)).unwrap(),
            ),
        );
        acc.record(
            "jump-stop",
            rel(
                &x.stop(&tau).unwrap().jump_process(),
                &zero_after(&x.jump_process(), &tau),
            ),
        );

        // summation-stop commutation
        let thin = x.jump_process();
        acc.record(
            "summation-stop",
            rel(
                &zero_after(&thin, &tau).summation(),
                &thin.summation().stop(&tau).unwrap(),
            ),
        );

        // stop commutation
        acc.record(
            "stop-commutation",
            rel(
                &x.stop(&tau).unwrap().stop(&rho).unwrap(),
                &x.stop(&tau.min(&rho)).unwrap(),
            )
            .max(rel(
                &x.stop(&tau).unwrap().stop(&rho).unwrap(),
                &x.stop(&rho).unwrap().stop(&tau).unwrap(),
            )),
        );

        // Stieltjes laws
        let ha = stieltjes(&h, &a).unwrap();
        acc.record(
            "stieltjes-linearity-integrand",
            rel(
                &stieltjes(&h.linear(2.0, &g, -1.0).unwrap(), &a).unwrap(),
                &ha.linear(2.0, &stieltjes(&g, &a).unwrap(), -1.0).unwrap(),
            ),
        );
        acc.record(
            "stieltjes-linearity-integrator",
            rel(
                &stieltjes(&h, &a.linear(1.5, &v, 2.5).unwrap()).unwrap(),
                &ha.linear(1.5, &stieltjes(&h, &v).unwrap(), 2.5).unwrap(),
            ),
        );
        acc.record(
            "stieltjes-associativity",
            rel(
                &stieltjes(&g.product(&h).unwrap(), &a).unwrap(),
                &stieltjes(&g, &ha).unwrap(),
            ),
        );

        // martingale-integral laws
        let hm = martingale_integral(&h, &m).unwrap();
        acc.record(
            "martingale-linearity-integrand",
            rel(
                &martingale_integral(&h.linear(2.0, &g, -1.0).unwrap(), &m).unwrap(),
                &hm.linear(2.0, &martingale_integral(&g, &m).unwrap(), -1.0).unwrap(),
            ),
        );
        acc.record(
            "martingale-linearity-integrator",
            rel(
                &martingale_integral(&h, &m.linear(1.5, &n, -0.5).unwrap()).unwrap(),
                &hm.linear(1.5, &martingale_integral(&h, &n).unwrap(), -0.5).unwrap(),
            ),
        );
        acc.record(
            "martingale-associativity",
            rel(
                &martingale_integral(&g.product(&h).unwrap(), &m).unwrap(),
                &martingale_integral(&g, &hm).unwrap(),
            ),
        );
        acc.record(
            "martingale-defining-identity",
            rel(
                &bracket(&hm, &n).unwrap().process,
                &stieltjes(&h, &bracket(&m, &n).unwrap().process).unwrap(),
            ),
        );

        // semimartingale-integral laws
        let hx = semimartingale_integral(&h, &x).unwrap();
        acc.record(
            "semimartingale-linearity-integrand",
            rel(
                &semimartingale_integral(&h.linear(2.0, &g, -1.0).unwrap(), &x).unwrap(),
                &hx.linear(2.0, &semimartingale_integral(&g, &x).unwrap(), -1.0).unwrap(),
            ),
        );
        acc.record(
            "semimartingale-linearity-integrator",
            rel(
                &semimartingale_integral(&h, &x.linear(1.5, &y, -0.5).unwrap()).unwrap(),
                &hx.linear(1.5, &semimartingale_integral(&h, &y).unwrap(), -0.5).unwrap(),
            ),
        );
        acc.record(
            "semimartingale-associativity",
            rel(
                &semimartingale_integral(&g.product(&h).unwrap(), &x).unwrap(),
                &semimartingale_integral(&g, &hx).unwrap(),
            ),
        );
        let mut jump_law = 0.0f64;
        let mut atom_law = 0.0f64;
        for w in 0..set.n_scenarios() {
            let expected0 = h.atom(w) * x.initial(w);
            let got0 = hx.initial(w);
            atom_law = atom_law.max((got0 - expected0).abs() / expected0.abs().max(1.0));
            for k in 1..set.member_count(w) {
                let expected = h.step(w, k) * x.increment(w, k);
                let got = hx.increment(w, k);
                jump_law = jump_law.max((got - expected).abs() / expected.abs().max(1.0));
            }
        }
        acc.record("integral-jump-commutation", jump_law);
        acc.record("integral-initial-atom", atom_law);
        acc.record(
            "integral-stop-commutation",
            rel(
                &hx.stop(&tau).unwrap(),
                &semimartingale_integral(&h, &x.stop(&tau).unwrap()).unwrap(),
            )
            .max(rel(
                &hx.stop(&tau).unwrap(),
                &semimartingale_integral(&h.cap_at(&tau), &x).unwrap(),
            )),
        );

        // bracket laws
        acc.record(
            "bracket-symmetry",
            rel(&bracket(&x, &y).unwrap().process, &bracket(&y, &x).unwrap().process),
        );
        acc.record(
            "bracket-bilinearity",
            rel(
                &bracket(&x.linear(2.0, &y, -1.5).unwrap(), &z).unwrap().process,
                &bracket(&x, &z)
                    .unwrap()
                    .process
                    .linear(2.0, &bracket(&y, &z).unwrap().process, -1.5)
                    .unwrap(),
            ),
        );
        acc.record(
            "bracket-stop-commutation",
            rel(
                &bracket(&x.stop(&tau).unwrap(), &y.stop(&tau).unwrap()).unwrap().process,
                &bracket(&x, &y).unwrap().process.stop(&tau).unwrap(),
            )
            .max(rel(
                &bracket(&x.stop(&tau).unwrap(), &y).unwrap().process,
                &bracket(&x, &y).unwrap().process.stop(&tau).unwrap(),
            )),
        );
        acc.record(
            "bracket-integral-commutation",
            rel(
                &bracket(&hx, &y).unwrap().process,
                &stieltjes(&h, &bracket(&x, &y).unwrap().process).unwrap(),
            ),
        );
        acc.record(
            "qv-stop-commutation",
            rel(
                &predictable_qv(&m.stop(&tau).unwrap(), &n, BracketConvention::Realized).unwrap(),
                &predictable_qv(&m, &n, BracketConvention::Realized)
                    .unwrap()
                    .stop(&tau)
                    .unwrap(),
            ),
        );

        // integration by parts
        acc.record("integration-by-parts", ibp_residual(&x, &y).unwrap().sup_rel);

        // glue independence on this set
        acc.record("glue-independence", glue_independence_residual(&set, &x, base));

        // decomposition independence
        let mut alt = Decomposition::zeros(&set);
        for w in 0..set.n_scenarios() {
            for k in 1..set.member_count(w) {
                alt.fv_drift[w][k] = x.increment(w, k);
            }
        }
        let initial: Vec<f64> = (0..set.n_scenarios()).map(|w| x.initial(w)).collect();
        let x_alt = decomposed_from_streams(Arc::clone(&set), &initial, alt, true).unwrap();
        acc.record(
            "decomposition-independence",
            rel(&hx, &semimartingale_integral(&h, &x_alt).unwrap()),
        );
    }
    SuiteReport { laws: acc.laws }
}

/// Wraps a process into two different valid ladders (different times,
/// different garbage outside the covered region) and measures the gap
/// between the glued results and the original.
pub fn glue_independence_residual(set: &Arc<IntervalTypeSet>, x: &BProcess, seed: u64) -> f64 {
    let cs1 = wrap_in_ladder(set, x, seed, 21);
    let cs2 = wrap_in_ladder(set, x, seed, 22);
    let g1 = glue(Arc::clone(set), &cs1).expect("construction is a valid ladder");
    let g2 = glue(Arc::clone(set), &cs2).expect("construction is a valid ladder");
    let direct = g1.rel_sup_diff(x).expect("same set");
    direct.max(g1.rel_sup_diff(&g2).expect("same set"))
}

/// Builds a valid three-level ladder for the process: each level copies the
/// process on the part of the horizon it covers and fills everything else
/// with noise.
pub fn wrap_in_ladder(
    set: &Arc<IntervalTypeSet>,
    x: &BProcess,
    seed: u64,
    stream: u64,
) -> CoupledSequence {
    let grid = set.grid();
    let n_levels = 3usize;
    let mut times_per_level: Vec<Vec<GridInstant>> = vec![Vec::new(); n_levels];
    for w in 0..set.n_scenarios() {
        let mut rng = substream(seed, w as u64, stream);
        let last = set.last_node(w);
        let mut picks: Vec<usize> = (0..n_levels - 1)
            .map(|_| rng.random_range(0..=last))
            .collect();
        picks.sort_unstable();
        for (i, &p) in picks.iter().enumerate() {
            times_per_level[i].push(GridInstant::Node(p));
        }
        times_per_level[n_levels - 1].push(set.debut().at(w));
    }
    let mut levels = Vec::with_capacity(n_levels);
    for (level, times) in times_per_level.into_iter().enumerate() {
        let mut paths = Vec::with_capacity(set.n_scenarios());
        for w in 0..set.n_scenarios() {
            let mut rng = substream(seed ^ 0xabc0, w as u64, stream * 100 + level as u64);
            let last = set.last_node(w);
            let reach = match times[w] {
                GridInstant::Infinite => last,
                GridInstant::Node(s) => s.min(last),
            };
            let values: Vec<f64> = (0..grid.n_nodes())
                .map(|node| {
                    if node <= reach {
                        x.row(w)[node]
                    } else {
                        rng.random_range(-50.0..50.0)
                    }
                })
                .collect();
            paths.push(SamplePath::new(Arc::clone(grid), values).unwrap());
        }
        levels.push(CoupledLevel {
            time: StoppingTime::new(times),
            paths,
        });
    }
    CoupledSequence::new(levels)
}
