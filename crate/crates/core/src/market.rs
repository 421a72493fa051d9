//! Sudden-stop market: a stock living on the random horizon `[0, tau)`,
//! piecewise period parameters reacting to the default probability, wealth
//! dynamics of self-financing strategies, the closed-form optimal fraction,
//! and a brute-force Monte Carlo oracle confirming it.
//!
//! Period `n` covers `(a_{n-1}, a_n]`. The expected return of period `n` is
//! `mu_n = (1 + (b - 1) F(a_n)) mu*`, where `F` is the exit-time law and `b`
//! captures how default risk loads on expected returns. The horizon set is
//! open at the exit time: strategy and wealth are horizon processes, and
//! evaluating them at or after the exit is a hard error.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::bprocess::{BProcess, CoupledLevel, CoupledSequence};
use crate::grid::{SamplePath, ScenarioBatch, TimeGrid};
use crate::integrate::{
    bracket, check_inner, decomposed_from_streams, semimartingale_integral, stieltjes,
    BPredictable, Decomposition, InnerReport,
};
use crate::math::{mean_stderr, pairwise_sum};
use crate::rng::{substream, STREAM_DRIVER_BASE, STREAM_EXIT};
use crate::sets::{
    make_interval_set, FundamentalSequence, GridInstant, IntervalTypeSet, SetKind, StoppingTime,
};
use crate::{EngineError, Result};

/// Exit-time distribution. All supported laws are continuous.
#[derive(Debug, Clone, PartialEq)]
pub enum ExitLaw {
    /// No exit: the horizon covers the whole window.
    None,
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ExitLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            ExitLaw::None => Ok(()),
            ExitLaw::Exponential { rate } => {
                if !rate.is_finite() || *rate <= 0.0 {
                    Err(EngineError::ExitLaw(format!(
                        "exponential rate must be positive, got {rate}"
                    )))
                } else {
                    Ok(())
                }
            }
            ExitLaw::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || *lo < 0.0 || *hi <= *lo {
                    Err(EngineError::ExitLaw(format!(
                        "uniform support must satisfy 0 <= lo < hi, got [{lo}, {hi})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            ExitLaw::None => 0.0,
            ExitLaw::Exponential { rate } => 1.0 - (-rate * t).exp(),
            ExitLaw::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Quantile via the closed form where available.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        debug_assert!((0.0..1.0).contains(&u));
        match self {
            ExitLaw::None => Ok(f64::INFINITY),
            ExitLaw::Exponential { rate } => Ok(-(1.0 - u).ln() / rate),
            ExitLaw::Uniform { lo, hi } => Ok(lo + u * (hi - lo)),
        }
    }

    /// Quantile by bisection on the cdf; the fallback when no closed form is
    /// available. Fails on laws whose cdf never reaches the requested level.
    pub fn inverse_by_bisection(&self, u: f64) -> Result<f64> {
        if matches!(self, ExitLaw::None) {
            return Ok(f64::INFINITY);
        }
        let mut hi = 1.0;
        let mut grow = 0;
        while self.cdf(hi) < u {
            hi *= 2.0;
            grow += 1;
            if grow > 200 {
                return Err(EngineError::ExitLaw(format!(
                    "cdf never reaches level {u}; cannot invert"
                )));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Market parameters. Period `n` (1-based) ends at `period_ends[n-1]` and
/// uses `sigma[n-1]`; the grid horizon is the last period end.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    pub s0: f64,
    pub x0: f64,
    pub mu_star: f64,
    pub b: f64,
    pub sigma: Vec<f64>,
    pub period_ends: Vec<f64>,
    pub exit_law: ExitLaw,
    pub n_paths: usize,
    pub steps_per_unit: usize,
    pub seed: u64,
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !self.s0.is_finite() || self.s0 <= 0.0 {
            errors.push(format!("s0 must be positive, got {}", self.s0));
        }
        if !self.x0.is_finite() || self.x0 <= 0.0 {
            errors.push(format!("x0 must be positive, got {}", self.x0));
        }
        if !self.mu_star.is_finite() || self.mu_star < 0.0 {
            errors.push(format!("mu_star must be nonnegative, got {}", self.mu_star));
        }
        if !self.b.is_finite() || self.b <= 0.0 {
            errors.push(format!("b must be positive, got {}", self.b));
        }
        if self.sigma.is_empty() {
            errors.push("sigma list must not be empty".into());
        }
        for (i, s) in self.sigma.iter().enumerate() {
            if !s.is_finite() || *s <= 0.0 {
                errors.push(format!("sigma[{i}] must be positive, got {s}"));
            }
        }
        if self.period_ends.len() != self.sigma.len() {
            errors.push(format!(
                "{} period ends for {} sigma values",
                self.period_ends.len(),
                self.sigma.len()
            ));
        }
        let mut prev = 0.0;
        for (i, a) in self.period_ends.iter().enumerate() {
            if !a.is_finite() || *a <= prev {
                errors.push(format!(
                    "period ends must be strictly increasing and positive; offending a[{i}] = {a}"
                ));
            }
            prev = *a;
        }
        if let Err(e) = self.exit_law.validate() {
            errors.push(e.to_string());
        }
        if self.n_paths == 0 {
            errors.push("paths must be at least 1".into());
        }
        if self.steps_per_unit == 0 {
            errors.push("steps per unit time must be at least 1".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(EngineError::Config(errors))
        }
    }

    pub fn n_periods(&self) -> usize {
        self.period_ends.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.period_ends.last().expect("validated nonempty")
    }

    /// Grid over `[0, a_K]`; every period end must land on a node.
    pub fn grid(&self) -> Result<Arc<TimeGrid>> {
        let horizon = self.horizon();
        let n_steps = (horizon * self.steps_per_unit as f64).round() as usize;
        let grid = TimeGrid::new(horizon, n_steps)?;
        for (i, a) in self.period_ends.iter().enumerate() {
            let node = a / grid.dt();
            if (node - node.round()).abs() > 1e-9 {
                return Err(EngineError::Config(vec![format!(
                    "period end a[{i}] = {a} does not land on a grid node at {} steps per unit",
                    self.steps_per_unit
                )]));
            }
        }
        Ok(grid)
    }

    fn period_end_node(&self, grid: &TimeGrid, period: usize) -> usize {
        (self.period_ends[period] / grid.dt()).round() as usize
    }

    /// Period index (0-based) owning step `k`, i.e. the interval
    /// `(t_{k-1}, t_k]`.
    fn period_of_step(&self, grid: &TimeGrid, k: usize) -> usize {
        let t = grid.node_time(k);
        for (i, a) in self.period_ends.iter().enumerate() {
            if t <= a + 1e-12 * grid.dt().max(1.0) {
                return i;
            }
        }
        self.period_ends.len() - 1
    }
}

/// Exit times of a batch: exact draws plus their grid snap (first node at or
/// after the draw). Draws beyond the window carry the infinite marker.
#[derive(Debug, Clone)]
pub struct ExitTimes {
    pub nodes: StoppingTime,
    pub exact: Vec<f64>,
}

/// Inverse-transform sampling of the exit time, independent of the Brownian
/// drivers by stream separation.
pub fn sample_exit_time(
    config: &MarketConfig,
    grid: &Arc<TimeGrid>,
    batch: &ScenarioBatch,
) -> Result<ExitTimes> {
    let mut nodes = Vec::with_capacity(batch.n_paths);
    let mut exact = Vec::with_capacity(batch.n_paths);
    for p in 0..batch.n_paths {
        let mut rng = substream(batch.seed, p as u64, STREAM_EXIT);
        let u: f64 = rng.random();
        let t = config.exit_law.inverse(u)?;
        exact.push(t);
        if !t.is_finite() || t > grid.horizon() {
            nodes.push(GridInstant::Infinite);
        } else {
            let snapped = ((t / grid.dt()).ceil() as usize).max(1);
            if snapped > grid.n_steps() {
                nodes.push(GridInstant::Infinite);
            } else {
                nodes.push(GridInstant::Node(snapped));
            }
        }
    }
    Ok(ExitTimes {
        nodes: StoppingTime::new(nodes),
        exact,
    })
}

/// The sudden-stop horizon `[0, tau)`: open at every finite exit node.
pub fn sudden_stop_set(grid: &Arc<TimeGrid>, exit: &ExitTimes) -> Result<Arc<IntervalTypeSet>> {
    let open = exit
        .nodes
        .times()
        .iter()
        .map(|t| !t.is_infinite())
        .collect();
    make_interval_set(Arc::clone(grid), exit.nodes.clone(), open, SetKind::Optional)
}

/// Terminal-time ladder `tau_n = a_n /\ tau`.
pub fn terminal_times(
    config: &MarketConfig,
    grid: &Arc<TimeGrid>,
    exit: &ExitTimes,
) -> Result<FundamentalSequence> {
    let mut levels = Vec::with_capacity(config.n_periods());
    for n in 0..config.n_periods() {
        let a_node = config.period_end_node(grid, n);
        let level = exit
            .nodes
            .times()
            .iter()
            .map(|&t| GridInstant::Node(a_node).min(t))
            .collect();
        levels.push(StoppingTime::new(level));
    }
    FundamentalSequence::new(levels)
}

/// Period expected returns `mu_n = (1 + (b - 1) F(a_n)) mu*`.
pub fn mu_sequence(config: &MarketConfig) -> Vec<f64> {
    config
        .period_ends
        .iter()
        .map(|&a| (1.0 + (config.b - 1.0) * config.exit_law.cdf(a)) * config.mu_star)
        .collect()
}

/// Closed-form optimal fractions `w_n = (1 + (b - 1) F(a_n)) mu* / sigma_n^2`.
pub fn closed_form_fractions(config: &MarketConfig) -> Vec<f64> {
    mu_sequence(config)
        .iter()
        .zip(&config.sigma)
        .map(|(mu, sigma)| mu / (sigma * sigma))
        .collect()
}

/// The market's driving objects on the sudden-stop horizon.
#[derive(Debug, Clone)]
pub struct MarketProcesses {
    pub set: Arc<IntervalTypeSet>,
    pub exit: ExitTimes,
    /// Piecewise-constant expected return, predictable indexing.
    pub mu: BPredictable,
    /// Piecewise-constant volatility, predictable indexing.
    pub sigma: BPredictable,
    /// Concatenated Brownian driver, one independent source per period.
    pub driver: BProcess,
    /// Period (0-based) owning each step, entry 0 unused.
    pub period_of_step: Vec<usize>,
    /// Seed the batch was built with; level reconstructions reuse it.
    pub seed: u64,
}

/// Builds the horizon set, the piecewise coefficient integrands and the
/// concatenated driver. Each period draws from its own independent stream,
/// so the driver switches sources at period boundaries and is itself a
/// standard Brownian motion.
pub fn build_market_processes(
    config: &MarketConfig,
    batch: &ScenarioBatch,
) -> Result<MarketProcesses> {
    config.validate()?;
    let grid = config.grid()?;
    let exit = sample_exit_time(config, &grid, batch)?;
    let set = sudden_stop_set(&grid, &exit)?;

    let n_steps = grid.n_steps();
    let period_of_step: Vec<usize> = (0..=n_steps)
        .map(|k| if k == 0 { 0 } else { config.period_of_step(&grid, k) })
        .collect();
    let mu_vals = mu_sequence(config);

    let mut mu_steps = Vec::with_capacity(set.n_scenarios());
    let mut sigma_steps = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let mut mu_row = vec![0.0; count];
        let mut sigma_row = vec![0.0; count];
        for k in 1..count {
            mu_row[k] = mu_vals[period_of_step[k]];
            sigma_row[k] = config.sigma[period_of_step[k]];
        }
        mu_steps.push(mu_row);
        sigma_steps.push(sigma_row);
    }
    let mu = BPredictable::new(
        Arc::clone(&set),
        vec![mu_vals[0]; set.n_scenarios()],
        mu_steps,
    )?;
    let sigma = BPredictable::new(
        Arc::clone(&set),
        vec![config.sigma[0]; set.n_scenarios()],
        sigma_steps,
    )?;

    let sqrt_dt = grid.dt().sqrt();
    let rows: Vec<Vec<f64>> = (0..set.n_scenarios())
        .into_par_iter()
        .map(|w| {
            let count = set.member_count(w);
            let mut increments = vec![0.0; count];
            let mut rng_period = usize::MAX;
            let mut rng = substream(batch.seed, w as u64, STREAM_DRIVER_BASE);
            for (k, slot) in increments.iter_mut().enumerate().skip(1) {
                let period = period_of_step[k];
                if period != rng_period {
                    rng = substream(batch.seed, w as u64, STREAM_DRIVER_BASE + 1 + period as u64);
                    rng_period = period;
                }
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *slot = sqrt_dt * z;
            }
            increments
        })
        .collect();
    let mut d = Decomposition::zeros(&set);
    d.cont = rows;
    d.diffusion = Some(
        (0..set.n_scenarios())
            .map(|w| {
                let mut row = vec![0.0; set.member_count(w)];
                for v in row.iter_mut().skip(1) {
                    *v = 1.0;
                }
                row
            })
            .collect(),
    );
    let driver = decomposed_from_streams(Arc::clone(&set), &vec![0.0; set.n_scenarios()], d, true)?;

    Ok(MarketProcesses {
        set,
        exit,
        mu,
        sigma,
        driver,
        period_of_step,
        seed: batch.seed,
    })
}

/// Stock on the horizon: exact lognormal node update
/// `S_k = S_{k-1} exp((mu_k - sigma_k^2 / 2) dt + sigma_k dM_k)`, which is
/// positive by construction and matches the classical geometric form at
/// nodes in the no-default case. The continuous-martingale label carries
/// `S_{k-1} sigma_k dM_k`; the rest of the increment is drift-labeled.
pub fn simulate_stock(config: &MarketConfig, processes: &MarketProcesses) -> Result<BProcess> {
    let set = &processes.set;
    let dt = set.grid().dt();
    let n = set.n_scenarios();
    let mut values = Vec::with_capacity(n);
    let mut d = Decomposition::zeros(set);
    let mut diffusion = Vec::with_capacity(n);
    for w in 0..n {
        let count = set.member_count(w);
        let mut row = Vec::with_capacity(count);
        let mut diff_row = vec![0.0; count];
        let mut s = config.s0;
        row.push(s);
        for k in 1..count {
            let mu = processes.mu.step(w, k);
            let sigma = processes.sigma.step(w, k);
            let dm = processes.driver.increment(w, k);
            let next = s * ((mu - 0.5 * sigma * sigma) * dt + sigma * dm).exp();
            let cont = s * sigma * dm;
            d.cont[w][k] = cont;
            d.fv_drift[w][k] = next - s - cont;
            diff_row[k] = sigma * s;
            s = next;
            row.push(s);
        }
        values.push(row);
        diffusion.push(diff_row);
    }
    d.diffusion = Some(diffusion);
    let mut stock = BProcess::from_member_values(Arc::clone(set), values)?.with_inner(true);
    stock.set_decomposition_unchecked(d);
    Ok(stock)
}

/// The closed-form optimal wealth
/// `X* = x0 exp((mu^2 / (2 sigma^2)) . A + (mu / sigma) . M)`.
pub fn optimal_wealth(config: &MarketConfig, processes: &MarketProcesses) -> Result<BProcess> {
    let set = &processes.set;
    let dt = set.grid().dt();
    let mut values = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let mut row = Vec::with_capacity(count);
        let mut x = config.x0;
        row.push(x);
        for k in 1..count {
            let mu = processes.mu.step(w, k);
            let sigma = processes.sigma.step(w, k);
            let dm = processes.driver.increment(w, k);
            x *= ((mu * mu) / (2.0 * sigma * sigma) * dt + (mu / sigma) * dm).exp();
            row.push(x);
        }
        values.push(row);
    }
    BProcess::from_member_values(Arc::clone(set), values)
}

/// Closed-form optimal strategy: per-period fractions plus the share counts
/// `pi = w X* / S` resolved against left limits of the optimal wealth and
/// the stock.
pub fn closed_form_strategy(
    config: &MarketConfig,
    processes: &MarketProcesses,
    stock: &BProcess,
) -> Result<(Vec<f64>, BPredictable)> {
    let fractions = closed_form_fractions(config);
    let xstar = optimal_wealth(config, processes)?;
    let set = &processes.set;
    let mut atom = Vec::with_capacity(set.n_scenarios());
    let mut steps = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let count = set.member_count(w);
        let mut row = vec![0.0; count];
        for k in 1..count {
            let frac = fractions[processes.period_of_step[k]];
            row[k] = frac * xstar.row(w)[k - 1] / stock.row(w)[k - 1];
        }
        atom.push(fractions[0] * config.x0 / config.s0);
        steps.push(row);
    }
    let shares = BPredictable::new(Arc::clone(set), atom, steps)?;
    Ok((fractions, shares))
}

/// A trading strategy: per-period fractions of wealth, or explicit share
/// counts as a predictable integrand.
#[derive(Debug, Clone)]
pub enum Strategy {
    Fractions(Vec<f64>),
    Shares(BPredictable),
}

/// Wealth, shares and the fraction path of a strategy.
#[derive(Debug, Clone)]
pub struct WealthOutcome {
    pub wealth: BProcess,
    pub shares: BPredictable,
    pub fractions: BPredictable,
}

/// Wealth of a self-financing strategy:
/// `X = (x0 - shares_0 S_0) + shares . S`. Fraction strategies resolve to
/// share counts against left-limit wealth and price, which makes the
/// self-financing identity hold by construction.
pub fn wealth(
    strategy: &Strategy,
    config: &MarketConfig,
    processes: &MarketProcesses,
    stock: &BProcess,
) -> Result<WealthOutcome> {
    let set = &processes.set;
    match strategy {
        Strategy::Fractions(fractions) => {
            if fractions.len() != config.n_periods() {
                return Err(EngineError::Market(format!(
                    "{} fractions for {} periods",
                    fractions.len(),
                    config.n_periods()
                )));
            }
            let n = set.n_scenarios();
            let mut wealth_rows = Vec::with_capacity(n);
            let mut share_atom = Vec::with_capacity(n);
            let mut share_steps = Vec::with_capacity(n);
            let mut frac_atom = Vec::with_capacity(n);
            let mut frac_steps = Vec::with_capacity(n);
            for w in 0..n {
                let count = set.member_count(w);
                let mut xw = Vec::with_capacity(count);
                let mut shares = vec![0.0; count];
                let mut fracs = vec![0.0; count];
                let mut x = config.x0;
                xw.push(x);
                for k in 1..count {
                    let frac = fractions[processes.period_of_step[k]];
                    let s_prev = stock.row(w)[k - 1];
                    let position = frac * x / s_prev;
                    x += position * stock.increment(w, k);
                    shares[k] = position;
                    fracs[k] = frac;
                    xw.push(x);
                }
                wealth_rows.push(xw);
                share_atom.push(fractions[0] * config.x0 / config.s0);
                frac_atom.push(fractions[0]);
                share_steps.push(shares);
                frac_steps.push(fracs);
            }
            Ok(WealthOutcome {
                wealth: BProcess::from_member_values(Arc::clone(set), wealth_rows)?,
                shares: BPredictable::new(Arc::clone(set), share_atom, share_steps)?,
                fractions: BPredictable::new(Arc::clone(set), frac_atom, frac_steps)?,
            })
        }
        Strategy::Shares(shares) => {
            let gains = semimartingale_integral(shares, stock)?;
            let n = set.n_scenarios();
            let mut rows = Vec::with_capacity(n);
            let mut frac_atom = Vec::with_capacity(n);
            let mut frac_steps = Vec::with_capacity(n);
            for w in 0..n {
                let count = set.member_count(w);
                let offset = config.x0 - shares.atom(w) * stock.initial(w);
                let mut row = Vec::with_capacity(count);
                for k in 0..count {
                    row.push(offset + gains.row(w)[k]);
                }
                let mut fracs = vec![0.0; count];
                for k in 1..count {
                    let x_prev = row[k - 1];
                    fracs[k] = if x_prev != 0.0 {
                        shares.step(w, k) * stock.row(w)[k - 1] / x_prev
                    } else {
                        0.0
                    };
                }
                frac_atom.push(shares.atom(w) * stock.initial(w) / config.x0);
                rows.push(row);
                frac_steps.push(fracs);
            }
            Ok(WealthOutcome {
                wealth: BProcess::from_member_values(Arc::clone(set), rows)?,
                shares: shares.clone(),
                fractions: BPredictable::new(Arc::clone(set), frac_atom, frac_steps)?,
            })
        }
    }
}

/// Sup relative residual of the self-financing identity
/// `X = (x0 - shares_0 S_0) + shares . S`.
pub fn self_financing_residual(
    outcome: &WealthOutcome,
    config: &MarketConfig,
    stock: &BProcess,
) -> Result<f64> {
    let gains = semimartingale_integral(&outcome.shares, stock)?;
    let set = stock.set();
    let mut worst = 0.0f64;
    for w in 0..set.n_scenarios() {
        let offset = config.x0 - outcome.shares.atom(w) * stock.initial(w);
        for k in 0..set.member_count(w) {
            let rhs = offset + gains.row(w)[k];
            let lhs = outcome.wealth.row(w)[k];
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
        }
    }
    Ok(worst)
}

/// Per-scenario admissibility of a strategy at floor `-alpha`.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub admissible: Vec<bool>,
    pub first_violation: Vec<Option<usize>>,
    pub all_admissible: bool,
}

/// Checks `(shares . S)_t >= -alpha` at every member node.
pub fn admissibility_check(
    shares: &BPredictable,
    stock: &BProcess,
    alpha: f64,
) -> Result<AdmissibilityReport> {
    if alpha <= 0.0 {
        return Err(EngineError::Market(format!(
            "admissibility floor must be positive, got {alpha}"
        )));
    }
    let gains = semimartingale_integral(shares, stock)?;
    let set = stock.set();
    let mut admissible = Vec::with_capacity(set.n_scenarios());
    let mut first_violation = Vec::with_capacity(set.n_scenarios());
    for w in 0..set.n_scenarios() {
        let hit = (0..set.member_count(w)).find(|&k| gains.row(w)[k] < -alpha);
        admissible.push(hit.is_none());
        first_violation.push(hit);
    }
    let all = admissible.iter().all(|&a| a);
    Ok(AdmissibilityReport {
        admissible,
        first_violation,
        all_admissible: all,
    })
}

/// Structural no-arbitrage certificate for the sudden-stop market.
#[derive(Debug, Clone)]
pub struct NaReport {
    pub granted: bool,
    pub reasons: Vec<String>,
}

/// Grants the certificate when every ladder-level market is a positive
/// diffusion-type price with bounded coefficients and no riskless drift.
/// This is a definitional check on the construction, not a statistical
/// arbitrage search.
pub fn na_certificate(config: &MarketConfig, stock: &BProcess) -> Result<NaReport> {
    if stock.decomposition().is_none() {
        return Err(EngineError::MissingDecomposition);
    }
    let mut reasons = Vec::new();
    if config.period_ends.is_empty() {
        return Ok(NaReport {
            granted: true,
            reasons: vec!["no periods: certificate is vacuous".into()],
        });
    }
    if !(config.s0.is_finite() && config.s0 > 0.0) {
        reasons.push(format!("initial price {} is not positive", config.s0));
    }
    let mu_vals = mu_sequence(config);
    for (i, (&sigma, &mu)) in config.sigma.iter().zip(&mu_vals).enumerate() {
        if !sigma.is_finite() || !mu.is_finite() {
            reasons.push(format!("unbounded coefficients in period {}", i + 1));
        }
        if sigma < 0.0 {
            reasons.push(format!("negative volatility in period {}", i + 1));
        }
        if sigma == 0.0 && mu != 0.0 {
            reasons.push(format!(
                "riskless drift in period {}: sigma = 0 with mu = {mu}",
                i + 1
            ));
        }
    }
    let positive = stock
        .rows()
        .iter()
        .all(|row| row.iter().all(|&v| v > 0.0 && v.is_finite()));
    if !positive {
        reasons.push("stock path is not strictly positive".into());
    }
    Ok(NaReport {
        granted: reasons.is_empty(),
        reasons,
    })
}

/// One simulated level market: net returns per step up to the terminal node
/// `a_n /\ tau` (inclusive; the level market is a conventional market, so
/// the terminal node itself is included even when it is the exit node).
#[derive(Debug, Clone)]
pub struct LevelPaths {
    pub net_returns: Vec<Vec<f64>>,
    pub stop_node: Vec<usize>,
}

/// Simulates the level-`period` market over `[0, a_period /\ tau]` using the
/// same substreams as the glued market.
pub fn level_market(
    config: &MarketConfig,
    batch: &ScenarioBatch,
    period: usize,
) -> Result<LevelPaths> {
    config.validate()?;
    if period == 0 || period > config.n_periods() {
        return Err(EngineError::Market(format!(
            "period {period} out of range 1..={}",
            config.n_periods()
        )));
    }
    let grid = config.grid()?;
    let exit = sample_exit_time(config, &grid, batch)?;
    let a_node = config.period_end_node(&grid, period - 1);
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mu_vals = mu_sequence(config);
    let outcome: Vec<(Vec<f64>, usize)> = (0..batch.n_paths)
        .into_par_iter()
        .map(|w| {
            let stop = match exit.nodes.at(w) {
                GridInstant::Infinite => a_node,
                GridInstant::Node(k) => k.min(a_node),
            };
            let mut rng_period = usize::MAX;
            let mut rng = substream(batch.seed, w as u64, STREAM_DRIVER_BASE);
            let mut returns = vec![0.0; stop + 1];
            for k in 1..=stop {
                let p = config.period_of_step(&grid, k);
                if p != rng_period {
                    rng = substream(batch.seed, w as u64, STREAM_DRIVER_BASE + 1 + p as u64);
                    rng_period = p;
                }
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                let mu = mu_vals[p];
                let sigma = config.sigma[p];
                returns[k] = ((mu - 0.5 * sigma * sigma) * dt + sigma * sqrt_dt * z).exp() - 1.0;
            }
            (returns, stop)
        })
        .collect();
    let mut net_returns = Vec::with_capacity(batch.n_paths);
    let mut stop_node = Vec::with_capacity(batch.n_paths);
    for (r, s) in outcome {
        net_returns.push(r);
        stop_node.push(s);
    }
    Ok(LevelPaths {
        net_returns,
        stop_node,
    })
}

/// Monte Carlo estimate of the expected log wealth at the level terminal
/// under a constant fraction. Scenarios whose wealth factor would turn
/// nonpositive are rejected and counted.
pub fn expected_log_utility(
    level: &LevelPaths,
    fraction: f64,
    x0: f64,
) -> Result<(f64, f64, usize)> {
    let logs: Vec<Option<f64>> = level
        .net_returns
        .par_iter()
        .zip(&level.stop_node)
        .map(|(returns, &stop)| {
            let mut acc = x0.ln();
            for &r in &returns[1..=stop] {
                let factor = 1.0 + fraction * r;
                if factor <= 0.0 {
                    return None;
                }
                acc += factor.ln();
            }
            Some(acc)
        })
        .collect();
    let accepted: Vec<f64> = logs.iter().flatten().copied().collect();
    let rejected = logs.len() - accepted.len();
    if accepted.is_empty() {
        return Err(EngineError::Market(
            "all scenarios rejected: wealth factor nonpositive everywhere".into(),
        ));
    }
    let (mean, stderr) = mean_stderr(&accepted);
    Ok((mean, stderr, rejected))
}

/// One oracle evaluation point.
#[derive(Debug, Clone)]
pub struct OraclePoint {
    pub fraction: f64,
    pub elu: f64,
    pub stderr: f64,
    pub rejected: usize,
}

/// Brute-force grid search over fractions with common random numbers: every
/// point reuses the same simulated level paths.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub argmax: f64,
    pub best_elu: f64,
    pub points: Vec<OraclePoint>,
}

pub fn grid_search_oracle(level: &LevelPaths, w_grid: &[f64], x0: f64) -> Result<OracleResult> {
    if w_grid.is_empty() {
        return Err(EngineError::Market("empty fraction grid".into()));
    }
    let mut points = Vec::with_capacity(w_grid.len());
    for &w in w_grid {
        let (elu, stderr, rejected) = expected_log_utility(level, w, x0)?;
        points.push(OraclePoint {
            fraction: w,
            elu,
            stderr,
            rejected,
        });
    }
    let best = points
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.elu.total_cmp(&b.elu))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    Ok(OracleResult {
        argmax: points[best].fraction,
        best_elu: points[best].elu,
        points,
    })
}

/// Inner check of the market driver's ladder: every ladder level carries the
/// full driver path, stopped before the open boundary by the check itself.
pub fn driver_inner_report(
    processes: &MarketProcesses,
    config: &MarketConfig,
) -> Result<InnerReport> {
    let set = &processes.set;
    let grid = set.grid();
    let sqrt_dt = grid.dt().sqrt();
    let paths: Vec<SamplePath> = (0..set.n_scenarios())
        .map(|w| {
            let mut rng_period = usize::MAX;
            let mut rng = substream(processes.seed, w as u64, STREAM_DRIVER_BASE);
            let mut values = Vec::with_capacity(grid.n_nodes());
            let mut x = 0.0;
            values.push(x);
            for k in 1..grid.n_nodes() {
                let p = processes.period_of_step[k];
                if p != rng_period {
                    rng = substream(processes.seed, w as u64, STREAM_DRIVER_BASE + 1 + p as u64);
                    rng_period = p;
                }
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                x += sqrt_dt * z;
                values.push(x);
            }
            SamplePath::new(Arc::clone(grid), values)
        })
        .collect::<Result<_>>()?;
    let ladder = terminal_times(config, grid, &processes.exit)?;
    let levels = ladder
        .levels()
        .iter()
        .map(|time| CoupledLevel {
            time: time.clone(),
            paths: paths.clone(),
        })
        .collect();
    Ok(check_inner(set, &CoupledSequence::new(levels), Some(true)))
}

/// A single gallery check.
#[derive(Debug, Clone)]
pub struct GalleryCheck {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GalleryCheck {
    fn new(name: &str, value: f64, expected: f64, tolerance: f64) -> Self {
        GalleryCheck {
            name: name.to_string(),
            value,
            expected,
            tolerance,
            pass: (value - expected).abs() <= tolerance,
        }
    }
}

/// Pathology gallery report.
#[derive(Debug, Clone)]
pub struct GalleryReport {
    pub checks: Vec<GalleryCheck>,
}

impl GalleryReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Piecewise compensator step function of the two-point exit example:
/// `0` before 1, `1/2` on `[1, 2)`, `3/2` from 2 on.
pub fn two_point_compensator(t: f64) -> f64 {
    if t < 1.0 {
        0.0
    } else if t < 2.0 {
        0.5
    } else {
        1.5
    }
}

/// Reproduces the pathologies that motivate the horizon-restricted calculus:
///
/// 1. the Stieltjes integral of `1/(1 - t)` against `dt` on the open unit
///    horizon grows like `ln(1/(1 - t))`, so no finite-variation extension
///    beyond the horizon exists;
/// 2. the compensator `t /\ T` of a unit-exponential exit indicator is a
///    nonzero horizon process whose labeled bracket vanishes identically,
///    and its ladder fails the inner check: integrals against it are not
///    uniquely determined;
/// 3. the two-point exit example's compensator step function takes the
///    values `0, 1/2, 3/2` on its three branches.
pub fn counterexample_gallery(seed: u64) -> Result<GalleryReport> {
    let mut checks = Vec::new();

    // (i) singular integrand on the open unit horizon
    let n = 1usize << 16;
    let grid = TimeGrid::new(1.0, n)?;
    let set = make_interval_set(
        Arc::clone(&grid),
        StoppingTime::constant(1, GridInstant::Node(n)),
        vec![true],
        SetKind::Optional,
    )?;
    let dt = grid.dt();
    let mut d = Decomposition::zeros(&set);
    for k in 1..set.member_count(0) {
        d.fv_drift[0][k] = dt;
    }
    let clock = decomposed_from_streams(Arc::clone(&set), &[0.0], d, false)?;
    let mut steps = vec![0.0; set.member_count(0)];
    for (k, v) in steps.iter_mut().enumerate().skip(1) {
        *v = 1.0 / (1.0 - grid.node_time(k - 1));
    }
    let integrand = BPredictable::new(Arc::clone(&set), vec![1.0], vec![steps])?;
    let integral = stieltjes(&integrand, &clock)?;
    for m in 1..=6u32 {
        let probe = n - (n >> m);
        let expected = f64::from(1u32 << m).ln();
        let got = integral.value(0, probe)?;
        checks.push(GalleryCheck::new(
            &format!("stieltjes-log-probe-2^-{m}"),
            got,
            expected,
            0.02 * expected,
        ));
    }

    // (ii) compensator of the exponential exit on the open horizon
    let bstar_steps = 1usize << 10;
    let bstar_paths = 256usize;
    let grid = TimeGrid::new(4.0, bstar_steps)?;
    let law = ExitLaw::Exponential { rate: 1.0 };
    let mut debut = Vec::with_capacity(bstar_paths);
    let mut exact = Vec::with_capacity(bstar_paths);
    for p in 0..bstar_paths {
        let mut rng = substream(seed, p as u64, STREAM_EXIT);
        let u: f64 = rng.random();
        let t = law.inverse(u)?;
        exact.push(t);
        if t > grid.horizon() {
            debut.push(GridInstant::Infinite);
        } else {
            debut.push(GridInstant::Node(((t / grid.dt()).ceil() as usize).max(1)));
        }
    }
    let open = debut.iter().map(|t| !t.is_infinite()).collect();
    let bstar = make_interval_set(
        Arc::clone(&grid),
        StoppingTime::new(debut.clone()),
        open,
        SetKind::Optional,
    )?;
    let dt = grid.dt();
    let mut d = Decomposition::zeros(&bstar);
    for w in 0..bstar.n_scenarios() {
        for k in 1..bstar.member_count(w) {
            d.fv_drift[w][k] = dt;
        }
    }
    let compensator = decomposed_from_streams(Arc::clone(&bstar), &vec![0.0; bstar_paths], d, false)?;
    let br = bracket(&compensator, &compensator)?;
    let labeled = br.labeled_form().expect("decompositions attached");
    checks.push(GalleryCheck::new(
        "compensator-labeled-bracket-sup",
        labeled.sup_abs(),
        0.0,
        0.0,
    ));
    checks.push(GalleryCheck::new(
        "compensator-grid-bracket-sup",
        br.process.sup_abs(),
        0.0,
        grid.horizon() * dt * 1.01,
    ));
    checks.push(GalleryCheck::new(
        "compensator-sup-positive",
        f64::from(u8::from(compensator.sup_abs() > 0.0)),
        1.0,
        0.0,
    ));
    // ladder level: the honest martingale behind the compensator; its
    // pre-boundary stop is pure drift and must fail the inner check
    let level_paths: Vec<SamplePath> = (0..bstar_paths)
        .map(|w| {
            let t_exact = exact[w];
            let values: Vec<f64> = (0..grid.n_nodes())
                .map(|k| {
                    let t = grid.node_time(k);
                    let indicator = f64::from(u8::from(t >= t_exact));
                    t.min(t_exact) - indicator
                })
                .collect();
            SamplePath::new(Arc::clone(&grid), values).expect("finite")
        })
        .collect();
    let cs = CoupledSequence::new(vec![CoupledLevel {
        time: StoppingTime::new(debut),
        paths: level_paths,
    }]);
    let inner = check_inner(&bstar, &cs, None);
    checks.push(GalleryCheck::new(
        "compensator-not-inner",
        f64::from(u8::from(!inner.verdict)),
        1.0,
        0.0,
    ));

    // (iii) two-point exit compensator step values
    for (probe, expected) in [(0.5, 0.0), (1.5, 0.5), (2.5, 1.5)] {
        checks.push(GalleryCheck::new(
            &format!("step-compensator-at-{probe}"),
            two_point_compensator(probe),
            expected,
            0.0,
        ));
    }

    Ok(GalleryReport { checks })
}

/// Realized quadratic variation at the last member node, averaged over
/// scenarios.
pub fn mean_realized_qv(driver: &BProcess) -> Result<f64> {
    let set = driver.set();
    let br = bracket(driver, driver)?;
    let per_path: Vec<f64> = (0..set.n_scenarios())
        .map(|w| br.process.row(w)[set.last_node(w)])
        .collect();
    Ok(pairwise_sum(&per_path) / per_path.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::mean;

    fn single_period_config() -> MarketConfig {
        MarketConfig {
            s0: 100.0,
            x0: 1.0,
            mu_star: 0.08,
            b: 1.0,
            sigma: vec![0.2],
            period_ends: vec![1.0],
            exit_law: ExitLaw::None,
            n_paths: 64,
            steps_per_unit: 64,
            seed: 7,
        }
    }

    #[test]
    fn exit_law_validation() {
        assert!(ExitLaw::Exponential { rate: 0.0 }.validate().is_err());
        assert!(ExitLaw::Uniform { lo: 2.0, hi: 1.0 }.validate().is_err());
        assert!(ExitLaw::Uniform { lo: 0.0, hi: 2.0 }.validate().is_ok());
    }

    #[test]
    fn bisection_matches_closed_forms() {
        for law in [
            ExitLaw::Exponential { rate: 1.3 },
            ExitLaw::Uniform { lo: 0.5, hi: 2.5 },
        ] {
            for u in [0.01, 0.25, 0.5, 0.9, 0.999] {
                let a = law.inverse(u).unwrap();
                let b = law.inverse_by_bisection(u).unwrap();
                assert!((a - b).abs() < 1e-9, "{law:?} at {u}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exponential_exit_mean_matches() {
        let config = MarketConfig {
            exit_law: ExitLaw::Exponential { rate: 1.0 },
            ..single_period_config()
        };
        let grid = config.grid().unwrap();
        let batch = ScenarioBatch::new(10_000, 3).unwrap();
        let exit = sample_exit_time(&config, &grid, &batch).unwrap();
        let m = mean(&exit.exact);
        assert!((0.97..=1.03).contains(&m), "mean exit {m}");
    }

    #[test]
    fn no_exit_law_gives_infinite_markers() {
        let config = single_period_config();
        let grid = config.grid().unwrap();
        let batch = ScenarioBatch::new(16, 3).unwrap();
        let exit = sample_exit_time(&config, &grid, &batch).unwrap();
        assert!(exit.nodes.times().iter().all(|t| t.is_infinite()));
        let set = sudden_stop_set(&grid, &exit).unwrap();
        assert!((0..16).all(|w| set.is_full_section(w)));
    }

    #[test]
    fn exit_before_the_support_never_happens() {
        let config = MarketConfig {
            exit_law: ExitLaw::Uniform { lo: 2.0, hi: 3.0 },
            ..single_period_config()
        };
        let grid = config.grid().unwrap();
        let batch = ScenarioBatch::new(4000, 11).unwrap();
        let exit = sample_exit_time(&config, &grid, &batch).unwrap();
        assert!(exit.exact.iter().all(|&t| t > 1.0));
    }

    #[test]
    fn terminal_ladder_caps_at_the_exit() {
        let config = MarketConfig {
            sigma: vec![0.2, 0.3],
            period_ends: vec![1.0, 2.0],
            exit_law: ExitLaw::Uniform {
                lo: 1.25,
                hi: 1.75,
            },
            steps_per_unit: 16,
            ..single_period_config()
        };
        let grid = config.grid().unwrap();
        let batch = ScenarioBatch::new(32, 5).unwrap();
        let exit = sample_exit_time(&config, &grid, &batch).unwrap();
        let ladder = terminal_times(&config, &grid, &exit).unwrap();
        for w in 0..32 {
            // exit in (a_1, a_2): first level is a_1, second is the exit node
            assert_eq!(ladder.levels()[0].at(w), GridInstant::Node(16));
            assert_eq!(ladder.levels()[1].at(w), exit.nodes.at(w));
        }
    }

    #[test]
    fn exit_fraction_estimates_the_survival_probability() {
        let config = MarketConfig {
            exit_law: ExitLaw::Exponential { rate: 1.0 },
            ..single_period_config()
        };
        let grid = config.grid().unwrap();
        let batch = ScenarioBatch::new(10_000, 17).unwrap();
        let exit = sample_exit_time(&config, &grid, &batch).unwrap();
        let a1 = config.period_ends[0];
        let survived = exit.exact.iter().filter(|&&t| t > a1).count() as f64 / 10_000.0;
        let p1 = 1.0 - config.exit_law.cdf(a1);
        assert!((survived - p1).abs() < 0.02, "{survived} vs {p1}");
    }

    #[test]
    fn mu_sequence_follows_the_default_loading() {
        let config = MarketConfig {
            b: 2.0,
            exit_law: ExitLaw::Uniform { lo: 0.0, hi: 2.0 },
            ..single_period_config()
        };
        // F(a_1) = 0.5, so mu_1 = (1 + (2 - 1) * 0.5) * 0.08 = 0.12
        let mu = mu_sequence(&config);
        assert!((mu[0] - 0.12).abs() < 1e-15);

        let neutral = MarketConfig {
            b: 1.0,
            exit_law: ExitLaw::Uniform { lo: 0.0, hi: 2.0 },
            ..single_period_config()
        };
        assert!((mu_sequence(&neutral)[0] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn closed_form_fraction_examples() {
        // no default adjustment: the classical ratio mu / sigma^2
        let merton = single_period_config();
        assert!((closed_form_fractions(&merton)[0] - 2.0).abs() < 1e-12);

        // b = 2, F(a_1) = 0.5 raises the fraction to 3
        let adjusted = MarketConfig {
            b: 2.0,
            exit_law: ExitLaw::Uniform { lo: 0.0, hi: 2.0 },
            ..single_period_config()
        };
        assert!((closed_form_fractions(&adjusted)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fractions_shrink_with_volatility() {
        let mut prev = f64::INFINITY;
        for sigma in [0.1, 0.2, 0.4, 0.8] {
            let config = MarketConfig {
                sigma: vec![sigma],
                ..single_period_config()
            };
            let w = closed_form_fractions(&config)[0];
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn fractions_depend_on_the_law_only_through_period_end_values() {
        // both laws have F(1) = 0.5
        let a = MarketConfig {
            b: 2.0,
            exit_law: ExitLaw::Uniform { lo: 0.0, hi: 2.0 },
            ..single_period_config()
        };
        let b = MarketConfig {
            b: 2.0,
            exit_law: ExitLaw::Exponential {
                rate: std::f64::consts::LN_2,
            },
            ..single_period_config()
        };
        let fa = closed_form_fractions(&a);
        let fb = closed_form_fractions(&b);
        assert!((fa[0] - fb[0]).abs() < 1e-12);
    }

    #[test]
    fn single_period_processes_are_constant_coefficient() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 7).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        for w in 0..8 {
            for k in 1..procs.set.member_count(w) {
                assert_eq!(procs.mu.step(w, k), 0.08);
                assert_eq!(procs.sigma.step(w, k), 0.2);
            }
        }
    }

    #[test]
    fn driver_qv_approximates_elapsed_time() {
        let config = MarketConfig {
            sigma: vec![0.2, 0.3],
            period_ends: vec![1.0, 2.0],
            steps_per_unit: 512,
            n_paths: 512,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(512, 23).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let qv = mean_realized_qv(&procs.driver).unwrap();
        assert!((qv - 2.0).abs() < 0.05, "mean driver qv {qv}");
    }

    #[test]
    fn driver_increments_decorrelate_across_the_period_boundary() {
        let config = MarketConfig {
            sigma: vec![0.2, 0.3],
            period_ends: vec![1.0, 2.0],
            steps_per_unit: 4,
            n_paths: 10_000,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(10_000, 29).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let boundary = 4; // last step of period 1
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for w in 0..10_000 {
            xs.push(procs.driver.increment(w, boundary));
            ys.push(procs.driver.increment(w, boundary + 1));
        }
        let mx = mean(&xs);
        let my = mean(&ys);
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| (x - mx) * (y - my))
            .sum::<f64>()
            / (xs.len() as f64 - 1.0);
        let sx = (xs.iter().map(|&x| (x - mx) * (x - mx)).sum::<f64>()
            / (xs.len() as f64 - 1.0))
            .sqrt();
        let sy = (ys.iter().map(|&y| (y - my) * (y - my)).sum::<f64>()
            / (ys.len() as f64 - 1.0))
            .sqrt();
        let corr = cov / (sx * sy);
        assert!(corr.abs() < 0.03, "boundary correlation {corr}");
    }

    #[test]
    fn no_default_stock_matches_the_classical_geometric_form() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(16, 9).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let set = &procs.set;
        for w in 0..16 {
            for k in 0..set.member_count(w) {
                let t = set.grid().node_time(k);
                let m = procs.driver.row(w)[k];
                let expected = config.s0 * ((0.08 - 0.5 * 0.04) * t + 0.2 * m).exp();
                let got = stock.row(w)[k];
                assert!(
                    (got - expected).abs() <= 1e-9 * expected,
                    "node {k}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn stock_mean_matches_the_lognormal_mean() {
        let config = MarketConfig {
            n_paths: 10_000,
            steps_per_unit: 64,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(10_000, 31).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let last: Vec<f64> = (0..10_000)
            .map(|w| stock.row(w)[procs.set.last_node(w)] / config.s0)
            .collect();
        let (m, se) = mean_stderr(&last);
        let expected = (0.08f64).exp();
        assert!(
            (m - expected).abs() <= 3.0 * se,
            "terminal mean {m} vs {expected} (se {se})"
        );
    }

    #[test]
    fn stock_decomposition_is_consistent_and_jump_free() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 13).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let d = stock.decomposition().unwrap();
        d.validate_against(&procs.set, stock.rows()).unwrap();
        for w in 0..8 {
            for k in 1..procs.set.member_count(w) {
                assert!(!d.is_jump_node(w, k));
            }
        }
    }

    #[test]
    fn zero_strategy_keeps_wealth_constant() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 15).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let outcome = wealth(&Strategy::Fractions(vec![0.0]), &config, &procs, &stock).unwrap();
        assert_eq!(outcome.wealth.sup_abs(), config.x0);
        assert_eq!(
            self_financing_residual(&outcome, &config, &stock).unwrap(),
            0.0
        );
    }

    #[test]
    fn all_in_strategy_tracks_the_stock() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 19).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let outcome = wealth(&Strategy::Fractions(vec![1.0]), &config, &procs, &stock).unwrap();
        for w in 0..8 {
            for k in 0..procs.set.member_count(w) {
                let expected = config.x0 * stock.row(w)[k] / config.s0;
                let got = outcome.wealth.row(w)[k];
                assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
            }
        }
    }

    #[test]
    fn fraction_wealth_is_self_financing_by_construction() {
        let config = MarketConfig {
            sigma: vec![0.2, 0.35],
            period_ends: vec![1.0, 2.0],
            exit_law: ExitLaw::Exponential { rate: 0.5 },
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(32, 21).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let outcome = wealth(
            &Strategy::Fractions(closed_form_fractions(&config)),
            &config,
            &procs,
            &stock,
        )
        .unwrap();
        let residual = self_financing_residual(&outcome, &config, &stock).unwrap();
        assert!(residual <= 1e-12, "self-financing residual {residual}");
    }

    #[test]
    fn share_strategies_reproduce_the_integral_form() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 25).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let shares = BPredictable::constant(Arc::clone(&procs.set), 0.003);
        let outcome = wealth(&Strategy::Shares(shares), &config, &procs, &stock).unwrap();
        assert!(self_financing_residual(&outcome, &config, &stock).unwrap() <= 1e-12);
        assert!((outcome.wealth.initial(0) - config.x0).abs() < 1e-12);
    }

    #[test]
    fn admissibility_flags_large_short_positions() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(64, 27).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let zero = BPredictable::constant(Arc::clone(&procs.set), 0.0);
        assert!(admissibility_check(&zero, &stock, 0.5)
            .unwrap()
            .all_admissible);

        let short = BPredictable::constant(Arc::clone(&procs.set), -5.0);
        let report = admissibility_check(&short, &stock, 0.5).unwrap();
        // the initial position alone puts the gains at -500
        assert!(!report.all_admissible);
        assert!(report.first_violation.iter().any(|v| v.is_some()));

        // monotone in the floor
        let mild = BPredictable::constant(Arc::clone(&procs.set), 0.001);
        let tight = admissibility_check(&mild, &stock, 0.25).unwrap();
        let loose = admissibility_check(&mild, &stock, 2.5).unwrap();
        for w in 0..64 {
            assert!(!tight.admissible[w] || loose.admissible[w]);
        }
    }

    #[test]
    fn na_certificate_grants_and_refuses() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 33).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        assert!(na_certificate(&config, &stock).unwrap().granted);

        let riskless = MarketConfig {
            sigma: vec![0.0],
            ..single_period_config()
        };
        let report = na_certificate(&riskless, &stock).unwrap();
        assert!(!report.granted);
        assert!(report.reasons[0].contains("riskless drift"));

        let vacuous = MarketConfig {
            sigma: vec![],
            period_ends: vec![],
            ..single_period_config()
        };
        assert!(na_certificate(&vacuous, &stock).unwrap().granted);

        let plain = BProcess::constant(Arc::clone(&procs.set), 1.0);
        assert!(matches!(
            na_certificate(&config, &plain),
            Err(EngineError::MissingDecomposition)
        ));
    }

    #[test]
    fn zero_fraction_log_utility_is_exact() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(128, 37).unwrap();
        let level = level_market(&config, &batch, 1).unwrap();
        let (elu, stderr, rejected) = expected_log_utility(&level, 0.0, config.x0).unwrap();
        assert_eq!(elu, config.x0.ln());
        assert_eq!(stderr, 0.0);
        assert_eq!(rejected, 0);
    }

    #[test]
    fn merton_fraction_beats_cash() {
        let config = MarketConfig {
            n_paths: 2000,
            steps_per_unit: 128,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(2000, 39).unwrap();
        let level = level_market(&config, &batch, 1).unwrap();
        let (at_merton, _, _) = expected_log_utility(&level, 2.0, config.x0).unwrap();
        let (at_cash, _, _) = expected_log_utility(&level, 0.0, config.x0).unwrap();
        assert!(at_merton > at_cash);
    }

    #[test]
    fn oracle_profile_is_unimodal_and_near_the_closed_form() {
        let config = MarketConfig {
            n_paths: 4000,
            steps_per_unit: 256,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(4000, 41).unwrap();
        let level = level_market(&config, &batch, 1).unwrap();
        let w_grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.2).collect();
        let oracle = grid_search_oracle(&level, &w_grid, config.x0).unwrap();
        assert!(
            (oracle.argmax - 2.0).abs() <= 0.4 + 1e-12,
            "oracle argmax {}",
            oracle.argmax
        );
        // no interior strict local minimum
        let elus: Vec<f64> = oracle.points.iter().map(|p| p.elu).collect();
        for i in 1..elus.len() - 1 {
            assert!(
                !(elus[i] < elus[i - 1] - 1e-9 && elus[i] < elus[i + 1] - 1e-9),
                "local minimum at grid point {i}"
            );
        }
    }

    #[test]
    fn zero_drift_oracle_prefers_cash() {
        let config = MarketConfig {
            mu_star: 0.0,
            n_paths: 4000,
            steps_per_unit: 128,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(4000, 43).unwrap();
        let level = level_market(&config, &batch, 1).unwrap();
        let w_grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let oracle = grid_search_oracle(&level, &w_grid, config.x0).unwrap();
        assert!(oracle.argmax <= 0.1 + 1e-12, "argmax {}", oracle.argmax);
    }

    #[test]
    fn neutral_loading_gives_the_plain_ratio_in_every_period() {
        let config = MarketConfig {
            sigma: vec![0.2, 0.4, 0.2],
            period_ends: vec![1.0, 2.0, 3.0],
            exit_law: ExitLaw::Exponential { rate: 0.7 },
            b: 1.0,
            ..single_period_config()
        };
        let w = closed_form_fractions(&config);
        for (i, sigma) in config.sigma.iter().enumerate() {
            assert!((w[i] - config.mu_star / (sigma * sigma)).abs() < 1e-12);
        }
        assert_eq!(w[0], w[2], "equal volatilities give equal fractions under b = 1");
    }

    #[test]
    fn closed_form_shares_follow_the_optimal_wealth() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 49).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let (fractions, shares) = closed_form_strategy(&config, &procs, &stock).unwrap();
        let xstar = optimal_wealth(&config, &procs).unwrap();
        assert!((shares.atom(0) - fractions[0] * config.x0 / config.s0).abs() < 1e-15);
        for w in 0..8 {
            for k in 1..procs.set.member_count(w) {
                let expected = fractions[0] * xstar.row(w)[k - 1] / stock.row(w)[k - 1];
                assert_eq!(shares.step(w, k), expected);
            }
        }
    }

    #[test]
    fn wealth_evaluation_after_the_exit_is_a_hard_error() {
        let config = MarketConfig {
            exit_law: ExitLaw::Uniform { lo: 0.1, hi: 0.5 },
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(16, 51).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let outcome = wealth(&Strategy::Fractions(vec![1.5]), &config, &procs, &stock).unwrap();
        for w in 0..16 {
            let last = procs.set.last_node(w);
            assert!(last < procs.set.grid().n_steps(), "exit inside the window");
            assert!(outcome.wealth.value(w, last).is_ok());
            assert!(matches!(
                outcome.wealth.value(w, last + 1),
                Err(EngineError::OutsideSet { .. })
            ));
            assert!(matches!(
                stock.value(w, last + 1),
                Err(EngineError::OutsideSet { .. })
            ));
        }
    }

    #[test]
    fn stock_matches_the_exponential_of_its_log_price_built_from_integrals() {
        let config = MarketConfig {
            sigma: vec![0.2, 0.35],
            period_ends: vec![1.0, 2.0],
            exit_law: ExitLaw::Exponential { rate: 0.5 },
            steps_per_unit: 32,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(24, 53).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let stock = simulate_stock(&config, &procs).unwrap();
        let set = &procs.set;

        // clock process with a zero diffusion coefficient attached so the
        // combined log-price keeps an analytic bracket
        let dt = set.grid().dt();
        let mut d = Decomposition::zeros(set);
        for w in 0..set.n_scenarios() {
            for k in 1..set.member_count(w) {
                d.fv_drift[w][k] = dt;
            }
        }
        d.diffusion = Some(
            (0..set.n_scenarios())
                .map(|w| vec![0.0; set.member_count(w)])
                .collect(),
        );
        let clock = decomposed_from_streams(
            Arc::clone(set),
            &vec![0.0; set.n_scenarios()],
            d,
            true,
        )
        .unwrap();

        // log price Z = mu . A + sigma . M through the integral operators
        let drift_leg = semimartingale_integral(&procs.mu, &clock).unwrap();
        let noise_leg = crate::integrate::martingale_integral(&procs.sigma, &procs.driver).unwrap();
        let z = drift_leg.linear(1.0, &noise_leg, 1.0).unwrap();
        let zc_qv = crate::integrate::predictable_qv(
            &z,
            &z,
            crate::integrate::BracketConvention::Analytic,
        )
        .unwrap();

        for w in 0..set.n_scenarios() {
            for k in 0..set.member_count(w) {
                let expected = config.s0 * (z.row(w)[k] - 0.5 * zc_qv.row(w)[k]).exp();
                let got = stock.row(w)[k];
                assert!(
                    (got - expected).abs() <= 1e-9 * expected,
                    "scenario {w}, node {k}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn analytic_bracket_of_the_driver_is_elapsed_time() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(8, 47).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let qv = crate::integrate::predictable_qv(
            &procs.driver,
            &procs.driver,
            crate::integrate::BracketConvention::Analytic,
        )
        .unwrap();
        let grid = procs.set.grid();
        for w in 0..8 {
            for k in 0..procs.set.member_count(w) {
                let expected = grid.node_time(k);
                assert!((qv.row(w)[k] - expected).abs() <= 1e-12 * expected.max(1.0));
            }
        }
    }

    #[test]
    fn oracle_dispersion_shrinks_with_more_paths() {
        let base = MarketConfig {
            steps_per_unit: 128,
            ..single_period_config()
        };
        let w_grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let spread = |paths: usize| -> f64 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for seed in 101..=104 {
                let batch = ScenarioBatch::new(paths, seed).unwrap();
                let level = level_market(&base, &batch, 1).unwrap();
                let oracle = grid_search_oracle(&level, &w_grid, base.x0).unwrap();
                lo = lo.min(oracle.argmax);
                hi = hi.max(oracle.argmax);
            }
            hi - lo
        };
        assert!(spread(8000) <= spread(500));
    }

    #[test]
    fn market_driver_ladder_is_inner() {
        let config = MarketConfig {
            exit_law: ExitLaw::Exponential { rate: 1.0 },
            n_paths: 128,
            steps_per_unit: 32,
            ..single_period_config()
        };
        let batch = ScenarioBatch::new(128, config.seed).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let report = driver_inner_report(&procs, &config).unwrap();
        assert!(report.verdict, "levels: {:?}", report.levels);
    }

    #[test]
    fn gallery_checks_all_pass() {
        let report = counterexample_gallery(2).unwrap();
        assert!(
            report.all_pass(),
            "failing: {:?}",
            report.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>()
        );
    }

    #[test]
    fn optimal_wealth_is_positive_and_grows_in_log() {
        let config = single_period_config();
        let batch = ScenarioBatch::new(16, 45).unwrap();
        let procs = build_market_processes(&config, &batch).unwrap();
        let xstar = optimal_wealth(&config, &procs).unwrap();
        let dt = procs.set.grid().dt();
        for w in 0..16 {
            for k in 1..procs.set.member_count(w) {
                assert!(xstar.row(w)[k] > 0.0);
                let log_incr = (xstar.row(w)[k] / xstar.row(w)[k - 1]).ln();
                let mu = procs.mu.step(w, k);
                let sigma = procs.sigma.step(w, k);
                let expected = mu * mu / (2.0 * sigma * sigma) * dt
                    + mu / sigma * procs.driver.increment(w, k);
                assert!((log_incr - expected).abs() < 1e-12);
            }
        }
    }
}
