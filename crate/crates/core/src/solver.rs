//! Drift-implicit Euler–Maruyama on the merged grid, in three equivalent
//! forms:
//!
//! * [`run_recursive`] steps `τ_{η−1} → τ_η`, adding level `ℓ`'s noise only
//!   when `τ_η` closes a level-`ℓ` step, with `B` evaluated at the state of
//!   that step's left node `s_{η,ℓ}`:
//!
//!   ```text
//!   X_j(τ_η) = R_j(τ_{η−1}, τ_η) [ X_j(τ_{η−1})
//!              + Σ_{ℓ∈𝒦_η} √q_ℓ b_{jℓ}(s_{η,ℓ}, X(s_{η,ℓ})) R_j(s_{η,ℓ}, τ_{η−1}) (β_ℓ(τ_η) − β_ℓ(s_{η,ℓ})) ]
//!   ```
//!
//! * [`run_convolution`] evaluates the same values as a discrete
//!   variation-of-constants sum (quadratic cost, reference only).
//! * [`run_uniform`] is the single-grid scheme `n_ℓ = N` for all `ℓ`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use crate::diffusion::{Coupling, DiffusionOperator};
use crate::error::{Error, Result};
use crate::noise::{
    aggregate_level_increments, sample_level_increments, sample_merged_increments, LevelIncrements,
    NoiseStream,
};
use crate::resolvent::ResolventTable;
use crate::spectral::{Eigensystem, SpectralVector};
use crate::timegrid::{LevelGrids, MergedGrid};

/// Everything one path integration needs.
#[derive(Clone, Copy)]
pub struct SolverInput<'a> {
    pub es: &'a Eigensystem,
    pub grids: &'a LevelGrids,
    pub grid: &'a MergedGrid,
    pub table: &'a ResolventTable,
    pub op: &'a dyn DiffusionOperator,
    pub xi: &'a SpectralVector,
    pub increments: &'a LevelIncrements,
}

impl SolverInput<'_> {
    pub fn validate(&self) -> Result<()> {
        let modes = self.es.modes();
        let levels = self.es.levels();
        let mismatch = |msg: String| Err(Error::DimensionMismatch(msg));
        if self.table.modes() != modes || self.table.steps() != self.grid.steps() {
            return mismatch(format!(
                "resolvent table is {}x{}, expected {}x{}",
                self.table.modes(),
                self.table.steps(),
                modes,
                self.grid.steps()
            ));
        }
        if self.grids.levels() != levels
            || self.grid.levels() != levels
            || self.increments.levels() != levels
        {
            return mismatch(format!(
                "level counts differ: eigensystem {levels}, grids {}, merged {}, increments {}",
                self.grids.levels(),
                self.grid.levels(),
                self.increments.levels()
            ));
        }
        for level in 0..levels {
            let n = self.grids.steps(level);
            if self.grid.level_steps(level) != n || self.increments.steps(level) != n {
                return mismatch(format!("level {level} step counts differ"));
            }
        }
        if self.xi.len() < modes {
            return mismatch(format!(
                "initial value has {} modes, need {modes}",
                self.xi.len()
            ));
        }
        self.op.check_dims(modes, levels)
    }

    fn modes(&self) -> usize {
        self.es.modes()
    }

    fn sqrt_q(&self) -> Vec<f64> {
        self.es.qs().iter().map(|q| q.sqrt()).collect()
    }
}

/// Owned problem data: spectrum, grids with their merged partition and
/// resolvent table, diffusion operator and initial value.
#[derive(Clone)]
pub struct Problem {
    pub es: Eigensystem,
    pub grids: LevelGrids,
    pub grid: MergedGrid,
    pub table: ResolventTable,
    pub op: Arc<dyn DiffusionOperator>,
    pub xi: SpectralVector,
}

impl Problem {
    pub fn new(
        es: Eigensystem,
        grids: LevelGrids,
        op: Arc<dyn DiffusionOperator>,
        xi: SpectralVector,
    ) -> Result<Self> {
        if grids.levels() != es.levels() {
            return Err(Error::DimensionMismatch(format!(
                "{} grid levels for {} noise levels",
                grids.levels(),
                es.levels()
            )));
        }
        if xi.len() < es.modes() {
            return Err(Error::DimensionMismatch(format!(
                "initial value has {} modes, need {}",
                xi.len(),
                es.modes()
            )));
        }
        op.check_dims(es.modes(), es.levels())?;
        let grid = MergedGrid::new(&grids);
        let table = ResolventTable::new(&es, &grid);
        let xi = xi.project(es.modes())?;
        Ok(Self { es, grids, grid, table, op, xi })
    }

    pub fn iota(&self) -> f64 {
        self.op.iota()
    }

    pub fn input<'a>(&'a self, increments: &'a LevelIncrements) -> SolverInput<'a> {
        SolverInput {
            es: &self.es,
            grids: &self.grids,
            grid: &self.grid,
            table: &self.table,
            op: self.op.as_ref(),
            xi: &self.xi,
            increments,
        }
    }

    pub fn sample_increments(&self, stream: &NoiseStream) -> Result<LevelIncrements> {
        sample_level_increments(&self.grids, &self.grid, stream)
    }

    /// Increments sampled on `noise_grid` (which must refine this problem's
    /// level grids) and summed onto them.
    pub fn increments_from(
        &self,
        noise_grid: &MergedGrid,
        stream: &NoiseStream,
    ) -> Result<LevelIncrements> {
        let merged = sample_merged_increments(noise_grid, self.es.levels(), stream)?;
        aggregate_level_increments(merged, &self.grids, noise_grid)
    }
}

/// `X_j(τ_η)` for `η = 0..=N`, `j < J`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Array2<f64>,
    taus: Vec<f64>,
}

impl Trajectory {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn steps(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn modes(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, eta: usize) -> ArrayView1<'_, f64> {
        self.values.row(eta)
    }

    pub fn get(&self, eta: usize, j: usize) -> f64 {
        self.values[[eta, j]]
    }

    /// `max |a − b| / max(|a|, |b|)` over all cells, `0/0` counted as 0.
    pub fn max_relative_deviation(&self, other: &Trajectory) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| {
                let scale = a.abs().max(b.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Current state plus, per level, the state at that level's latest node.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSnapshotState {
    pub current: Vec<f64>,
    /// `(L, J)`: row `ℓ` holds `X(s)` for level `ℓ`'s latest node `s`.
    pub snapshots: Array2<f64>,
    /// Merged index of each snapshot.
    pub snapshot_index: Vec<usize>,
}

impl LevelSnapshotState {
    fn new(x0: &[f64], levels: usize) -> Self {
        let mut snapshots = Array2::zeros((levels, x0.len()));
        for mut row in snapshots.rows_mut() {
            row.assign(&ArrayView1::from(x0));
        }
        Self { current: x0.to_vec(), snapshots, snapshot_index: vec![0; levels] }
    }

    fn refresh(&mut self, levels: &[usize], eta: usize) {
        for &level in levels {
            self.snapshots.row_mut(level).assign(&ArrayView1::from(&self.current[..]));
            self.snapshot_index[level] = eta;
        }
    }
}

fn check_finite(row: &[f64], eta: usize) -> Result<()> {
    if row.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { eta })
    }
}

fn initial_row(input: &SolverInput<'_>) -> Vec<f64> {
    input.xi.coeffs()[..input.modes()].to_vec()
}

/// Recursive form, O(Σ_η J |𝒦_η|) for diagonal `B`.
pub fn run_recursive(input: &SolverInput<'_>) -> Result<Trajectory> {
    input.validate()?;
    let modes = input.modes();
    let grid = input.grid;
    let table = input.table;
    let sqrt_q = input.sqrt_q();
    let n = grid.steps();
    let mut values = Array2::zeros((n + 1, modes));
    let x0 = initial_row(input);
    values.row_mut(0).assign(&ArrayView1::from(&x0[..]));
    let mut state = LevelSnapshotState::new(&x0, grid.levels());
    let mut acc = vec![0.0; modes];
    let mut col = vec![0.0; modes];
    let coupling = input.op.coupling();

    for eta in 1..=n {
        acc.copy_from_slice(&state.current);
        for &level in grid.active(eta) {
            let s = grid.prev_index(eta, level);
            debug_assert_eq!(s, state.snapshot_index[level]);
            let i = grid.level_step(eta, level).expect("active level owns this node");
            let dbeta = input.increments.level(level, i);
            let t_s = grid.tau(s);
            let x_s = state.snapshots.row(level);
            let x_s = x_s.as_slice().expect("snapshot rows are contiguous");
            let sq = sqrt_q[level];
            match coupling {
                Coupling::Diagonal => {
                    if level < modes {
                        let b = input.op.diagonal(t_s, x_s, level);
                        let r = table.factor(level, s, eta - 1);
                        acc[level] += sq * b * r * dbeta;
                    }
                }
                Coupling::Dense => {
                    input.op.column(t_s, x_s, level, &mut col);
                    for (j, a) in acc.iter_mut().enumerate() {
                        let r = table.factor(j, s, eta - 1);
                        *a += sq * col[j] * r * dbeta;
                    }
                }
            }
            debug_assert!(
                (0..modes).all(|j| {
                    let literal = table.step_factor(j, eta) * table.factor(j, s, eta - 1);
                    let collapsed = table.factor(j, s, eta);
                    (literal - collapsed).abs() <= 1e-12 * collapsed.max(f64::MIN_POSITIVE)
                }),
                "collapsed resolvent factor disagrees at eta = {eta}"
            );
        }
        for (j, x) in state.current.iter_mut().enumerate() {
            *x = table.step_factor(j, eta) * acc[j];
        }
        check_finite(&state.current, eta)?;
        state.refresh(grid.active(eta), eta);
        values.row_mut(eta).assign(&ArrayView1::from(&state.current[..]));
    }
    Ok(Trajectory { values, taus: grid.taus().to_vec() })
}

/// Uniform single-grid scheme; requires `n_ℓ = N` on every level.
pub fn run_uniform(input: &SolverInput<'_>) -> Result<Trajectory> {
    input.validate()?;
    let n = match input.grids.common_uniform_steps() {
        Some(n) => n,
        None => {
            let counts = input.grids.step_counts();
            let first = counts[0];
            let level = counts.iter().position(|&k| k != first).unwrap_or(0);
            return Err(Error::NonUniformInput {
                level,
                n_level: counts[level],
                n: input.grid.steps(),
            });
        }
    };
    let modes = input.modes();
    let sqrt_q = input.sqrt_q();
    let dt = 1.0 / n as f64;
    let factors: Vec<f64> = input.es.lambdas().iter().map(|l| 1.0 / (1.0 + l * dt)).collect();
    let mut values = Array2::zeros((n + 1, modes));
    let mut current = initial_row(input);
    values.row_mut(0).assign(&ArrayView1::from(&current[..]));
    let mut acc = vec![0.0; modes];
    let mut col = vec![0.0; modes];
    let coupling = input.op.coupling();
    for i in 1..=n {
        let t_prev = (i - 1) as f64 / n as f64;
        acc.copy_from_slice(&current);
        for level in 0..input.es.levels() {
            let dbeta = input.increments.level(level, i);
            let sq = sqrt_q[level];
            match coupling {
                Coupling::Diagonal => {
                    if level < modes {
                        let b = input.op.diagonal(t_prev, &current, level);
                        acc[level] += sq * b * dbeta;
                    }
                }
                Coupling::Dense => {
                    input.op.column(t_prev, &current, level, &mut col);
                    for (a, b) in acc.iter_mut().zip(&col) {
                        *a += sq * b * dbeta;
                    }
                }
            }
        }
        for (x, (f, a)) in current.iter_mut().zip(factors.iter().zip(&acc)) {
            *x = f * a;
        }
        check_finite(&current, i)?;
        values.row_mut(i).assign(&ArrayView1::from(&current[..]));
    }
    Ok(Trajectory { values, taus: input.grid.taus().to_vec() })
}

/// One completed level step `(t_{i−1,ℓ}, t_{i,ℓ}]` with its per-mode
/// noise weights `√q_ℓ b_{jℓ}(t_{i−1,ℓ}, X(t_{i−1,ℓ})) Δβ_{i,ℓ}`.
struct NoiseTerm {
    start: usize,
    weights: Vec<f64>,
}

fn noise_terms_at(
    input: &SolverInput<'_>,
    sqrt_q: &[f64],
    eta: usize,
    states: &Array2<f64>,
    col: &mut [f64],
    terms: &mut Vec<NoiseTerm>,
) {
    let grid = input.grid;
    for &level in grid.active(eta) {
        let s = grid.prev_index(eta, level);
        let i = grid.level_step(eta, level).expect("active level owns this node");
        let dbeta = input.increments.level(level, i);
        let x_s = states.row(s);
        let x_s = x_s.as_slice().expect("trajectory rows are contiguous");
        input.op.column(grid.tau(s), x_s, level, col);
        let sq = sqrt_q[level];
        terms.push(NoiseTerm { start: s, weights: col.iter().map(|b| sq * b * dbeta).collect() });
    }
}

fn convolution_value(table: &ResolventTable, terms: &[NoiseTerm], j: usize, eta: usize) -> f64 {
    terms.iter().map(|term| table.factor(j, term.start, eta) * term.weights[j]).sum()
}

/// Convolution form `X_j(τ_η) = R_j(τ_0, τ_η) ξ_j + Σ_ℓ Σ_{t_{i,ℓ} ≤ τ_η} …`,
/// O(N² J L). Past states come from rows already computed.
pub fn run_convolution(input: &SolverInput<'_>) -> Result<Trajectory> {
    input.validate()?;
    let modes = input.modes();
    let grid = input.grid;
    let table = input.table;
    let sqrt_q = input.sqrt_q();
    let n = grid.steps();
    let x0 = initial_row(input);
    let mut values = Array2::zeros((n + 1, modes));
    values.row_mut(0).assign(&ArrayView1::from(&x0[..]));
    let mut terms = Vec::new();
    let mut col = vec![0.0; modes];
    for eta in 1..=n {
        noise_terms_at(input, &sqrt_q, eta, &values, &mut col, &mut terms);
        for j in 0..modes {
            let det = table.factor(j, 0, eta) * x0[j];
            values[[eta, j]] = det + convolution_value(table, &terms, j, eta);
        }
        let row = values.row(eta);
        check_finite(row.as_slice().expect("contiguous"), eta)?;
    }
    Ok(Trajectory { values, taus: grid.taus().to_vec() })
}

/// Noise part only: `Σ_ℓ Σ_{t_{i,ℓ} ≤ τ_η} R_j(t_{i−1,ℓ}, τ_η) √q_ℓ b_{jℓ}(t_{i−1,ℓ}, Y(t_{i−1,ℓ})) Δβ_{i,ℓ}`
/// with states `Y` read from `state_source`. Row 0 is zero.
pub fn discrete_stochastic_convolution(
    input: &SolverInput<'_>,
    state_source: &Trajectory,
) -> Result<Trajectory> {
    input.validate()?;
    let modes = input.modes();
    let grid = input.grid;
    let n = grid.steps();
    if state_source.steps() != n || state_source.modes() != modes {
        return Err(Error::DimensionMismatch(format!(
            "state source is {}x{}, expected {}x{}",
            state_source.steps() + 1,
            state_source.modes(),
            n + 1,
            modes
        )));
    }
    let sqrt_q = input.sqrt_q();
    let mut values = Array2::zeros((n + 1, modes));
    let mut terms = Vec::new();
    let mut col = vec![0.0; modes];
    for eta in 1..=n {
        noise_terms_at(input, &sqrt_q, eta, &state_source.values, &mut col, &mut terms);
        for j in 0..modes {
            values[[eta, j]] = convolution_value(input.table, &terms, j, eta);
        }
        let row = values.row(eta);
        check_finite(row.as_slice().expect("contiguous"), eta)?;
    }
    Ok(Trajectory { values, taus: grid.taus().to_vec() })
}

/// `R_j(τ_0, τ_η) ξ_j`, the noise-free part of every form.
pub fn deterministic_part(input: &SolverInput<'_>) -> Trajectory {
    let modes = input.modes();
    let n = input.grid.steps();
    let mut values = Array2::zeros((n + 1, modes));
    for eta in 0..=n {
        for j in 0..modes {
            values[[eta, j]] = input.table.factor(j, 0, eta) * input.xi.coeffs()[j];
        }
    }
    Trajectory { values, taus: input.grid.taus().to_vec() }
}

impl std::ops::Add<&Trajectory> for &Trajectory {
    type Output = Trajectory;

    fn add(self, rhs: &Trajectory) -> Trajectory {
        Trajectory { values: &self.values + &rhs.values, taus: self.taus.clone() }
    }
}
