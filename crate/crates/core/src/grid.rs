//! Uniform time discretization convention, sample-path storage and elementary path
//! operators.
//!
//! A path holds one value per grid node; the node value is the right limit
//! of the underlying cadlag path, so "jumps" are node increments and there
//! is no sub-grid structure. By convention the pre-initial value equals the
//! initial value, hence the jump at node 0 is zero.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::rng::substream;
use crate::{EngineError, Result};

/// Uniform grid over `[0, horizon]` with `n_steps` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Arc<Self>> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(EngineError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(EngineError::InvalidGrid("n_steps must be at least 1".into()));
        }
        Ok(Arc::new(TimeGrid {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        }))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `N`; the grid has `N + 1` nodes.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of node `k`. The last node lands on the horizon exactly.
    pub fn node_time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }
}

/// Convenience constructor mirroring the grid contract.
pub fn make_grid(horizon: f64, n_steps: usize) -> Result<Arc<TimeGrid>> {
    TimeGrid::new(horizon, n_steps)
}

/// A cadlag path sampled at grid nodes: `values[k] = X(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(EngineError::InvalidGrid(format!(
                "path has {} values, grid has {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::InvalidGrid(format!(
                "non-finite path value at node {k}"
            )));
        }
        Ok(SamplePath { grid, values })
    }

    pub fn constant(grid: Arc<TimeGrid>, value: f64) -> Result<Self> {
        let n = grid.n_nodes();
        SamplePath::new(grid, vec![value; n])
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> Result<f64> {
        self.values
            .get(k)
            .copied()
            .ok_or_else(|| EngineError::IndexOutOfRange(format!("node {k}")))
    }

    /// Node increment `X(t_k) - X(t_{k-1})`; zero at node 0 by the
    /// pre-initial convention.
    pub fn jump(&self, k: usize) -> Result<f64> {
        if k >= self.values.len() {
            return Err(EngineError::IndexOutOfRange(format!(
                "node {k} on a grid with {} nodes",
                self.values.len()
            )));
        }
        Ok(if k == 0 {
            0.0
        } else {
            self.values[k] - self.values[k - 1]
        })
    }

    /// Grid realization of the left-limit path: node 0 keeps its value, node
    /// `k >= 1` takes the value of node `k - 1`.
    pub fn left_limit(&self) -> SamplePath {
        let mut w = Vec::with_capacity(self.values.len());
        w.push(self.values[0]);
        for k in 1..self.values.len() {
            w.push(self.values[k - 1]);
        }
        SamplePath {
            grid: Arc::clone(&self.grid),
            values: w,
        }
    }
}

/// A predictable integrand on the grid: an atom at time zero plus one value
/// per step, `steps[k - 1]` applying on the interval `(t_{k-1}, t_k]`. The
/// value multiplying increment `k` is therefore unambiguous, and the mass the
/// closed-endpoint integral convention puts at zero is representable.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictablePath {
    grid: Arc<TimeGrid>,
    atom: f64,
    steps: Vec<f64>,
}

impl PredictablePath {
    pub fn new(grid: Arc<TimeGrid>, atom: f64, steps: Vec<f64>) -> Result<Self> {
        if steps.len() != grid.n_steps() {
            return Err(EngineError::InvalidGrid(format!(
                "integrand has {} interval values, grid has {} steps",
                steps.len(),
                grid.n_steps()
            )));
        }
        if !atom.is_finite() || steps.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::InvalidGrid(
                "non-finite integrand value".into(),
            ));
        }
        Ok(PredictablePath { grid, atom, steps })
    }

    pub fn constant(grid: Arc<TimeGrid>, value: f64) -> Result<Self> {
        let n = grid.n_steps();
        PredictablePath::new(grid, value, vec![value; n])
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn atom(&self) -> f64 {
        self.atom
    }

    /// Value applying on `(t_{k-1}, t_k]` for `k >= 1`.
    pub fn step(&self, k: usize) -> f64 {
        self.steps[k - 1]
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }
}

/// A batch of scenarios with reproducible per-path randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioBatch {
    pub n_paths: usize,
    pub seed: u64,
}

impl ScenarioBatch {
    pub fn new(n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(EngineError::InvalidGrid("batch needs at least one path".into()));
        }
        Ok(ScenarioBatch { n_paths, seed })
    }
}

/// Standard Brownian paths, one per scenario. Path `p` is fully determined by
/// `(batch.seed, p, grid)` regardless of evaluation order.
pub fn sample_brownian(grid: &Arc<TimeGrid>, batch: &ScenarioBatch, stream: u64) -> Vec<SamplePath> {
    let sqrt_dt = grid.dt().sqrt();
    (0..batch.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(batch.seed, p as u64, stream);
            let mut values = Vec::with_capacity(grid.n_nodes());
            let mut x = 0.0;
            values.push(x);
            for _ in 0..grid.n_steps() {
                let z: f64 = rng.sample(StandardNormal);
                x += sqrt_dt * z;
                values.push(x);
            }
            SamplePath {
                grid: Arc::clone(grid),
                values,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::mean;
    use crate::rng::STREAM_DRIVER_BASE;

    #[test]
    fn grid_nodes_are_exact() {
        let grid = make_grid(1.0, 4).unwrap();
        let nodes: Vec<f64> = (0..grid.n_nodes()).map(|k| grid.node_time(k)).collect();
        assert_eq!(nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn minimal_grid() {
        let grid = make_grid(2.0, 1).unwrap();
        assert_eq!(grid.n_nodes(), 2);
        assert_eq!(grid.node_time(1), 2.0);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(make_grid(1.0, 0).is_err());
        assert!(make_grid(0.0, 4).is_err());
        assert!(make_grid(-1.0, 4).is_err());
    }

    #[test]
    fn jump_of_constant_path_is_zero() {
        let grid = make_grid(1.0, 2).unwrap();
        let path = SamplePath::constant(Arc::clone(&grid), 3.0).unwrap();
        for k in 0..3 {
            assert_eq!(path.jump(k).unwrap(), 0.0);
        }
    }

    #[test]
    fn jump_reads_node_increments() {
        let grid = make_grid(1.0, 2).unwrap();
        let path = SamplePath::new(grid, vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(path.jump(0).unwrap(), 0.0);
        assert_eq!(path.jump(1).unwrap(), 1.0);
        assert_eq!(path.jump(2).unwrap(), 0.0);
        assert!(path.jump(3).is_err());
    }

    #[test]
    fn left_limit_shifts_by_one_node() {
        let grid = make_grid(1.0, 2).unwrap();
        let path = SamplePath::new(grid, vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(path.left_limit().values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn left_limit_of_constant_is_identity() {
        let grid = make_grid(1.0, 3).unwrap();
        let path = SamplePath::constant(grid, -2.5).unwrap();
        assert_eq!(path.left_limit(), path);
    }

    #[test]
    fn path_reconstructs_from_left_limit_and_jump() {
        let grid = make_grid(1.0, 5).unwrap();
        let path = SamplePath::new(grid, vec![0.5, -1.0, 2.0, 2.0, 7.0, 3.0]).unwrap();
        let left = path.left_limit();
        for k in 0..path.values().len() {
            assert_eq!(left.value(k).unwrap() + path.jump(k).unwrap(), path.value(k).unwrap());
        }
        // telescoping: summed jumps recover the net move
        let total: f64 = (0..path.values().len()).map(|k| path.jump(k).unwrap()).sum();
        assert_eq!(total, path.values()[5] - path.values()[0]);
    }

    #[test]
    fn brownian_batch_is_deterministic_and_starts_at_zero() {
        let grid = make_grid(1.0, 16).unwrap();
        let batch = ScenarioBatch::new(8, 42).unwrap();
        let a = sample_brownian(&grid, &batch, STREAM_DRIVER_BASE);
        let b = sample_brownian(&grid, &batch, STREAM_DRIVER_BASE);
        assert_eq!(a, b);
        for path in &a {
            assert_eq!(path.values()[0], 0.0);
        }
    }

    #[test]
    fn brownian_terminal_moments_match_the_clt_bounds() {
        let grid = make_grid(1.0, 64).unwrap();
        let batch = ScenarioBatch::new(10_000, 1).unwrap();
        let paths = sample_brownian(&grid, &batch, STREAM_DRIVER_BASE);
        let terminal: Vec<f64> = paths.iter().map(|p| *p.values().last().unwrap()).collect();
        let m = mean(&terminal);
        assert!((-0.05..=0.05).contains(&m), "terminal mean {m}");
        let centered: Vec<f64> = terminal.iter().map(|v| (v - m) * (v - m)).collect();
        let sample_var = crate::math::pairwise_sum(&centered) / (terminal.len() as f64 - 1.0);
        assert!((0.95..=1.05).contains(&sample_var), "terminal variance {sample_var}");
    }
}
