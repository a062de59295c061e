//! Implicit-Euler propagator products
//!
//! ```text
//! R_j(τ_a, τ_b) = Π_{ν=a+1}^{b} 1 / (1 + λ_j (τ_ν - τ_{ν-1})),   R_j(τ_a, τ_a) = 1
//! ```
//!
//! Window products are evaluated from log-space prefix sums so that ratios
//! stay exact to floating precision even when the raw prefix underflows
//! (`λ_j ≈ 1e8`, `N ≈ 1e3`).

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::Eigensystem;
use crate::timegrid::{LevelGrids, MergedGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventTable {
    /// `(J, N + 1)`: `Σ_{ν≤η} -ln(1 + λ_j Δτ_ν)`.
    log_prefix: Array2<f64>,
    /// `(J, N + 1)`: single-step factor `1 / (1 + λ_j Δτ_η)`; column 0 is 1.
    step: Array2<f64>,
}

impl ResolventTable {
    pub fn new(es: &Eigensystem, grid: &MergedGrid) -> Self {
        let n = grid.steps();
        let modes = es.modes();
        let mut log_prefix = Array2::zeros((modes, n + 1));
        let mut step = Array2::ones((modes, n + 1));
        for (j, &lambda) in es.lambdas().iter().enumerate() {
            let mut acc = 0.0;
            for eta in 1..=n {
                let x = lambda * grid.dtau(eta);
                acc -= x.ln_1p();
                log_prefix[[j, eta]] = acc;
                step[[j, eta]] = 1.0 / (1.0 + x);
            }
        }
        Self { log_prefix, step }
    }

    pub fn modes(&self) -> usize {
        self.log_prefix.nrows()
    }

    /// `N`.
    pub fn steps(&self) -> usize {
        self.log_prefix.ncols() - 1
    }

    pub fn log_prefix(&self, j: usize, eta: usize) -> f64 {
        self.log_prefix[[j, eta]]
    }

    /// `1 / (1 + λ_j Δτ_η)` for `η ≥ 1`.
    #[inline]
    pub fn step_factor(&self, j: usize, eta: usize) -> f64 {
        self.step[[j, eta]]
    }

    /// `R_j(τ_{from}, τ_{to})` without bounds or order checks.
    #[inline]
    pub fn factor(&self, j: usize, from: usize, to: usize) -> f64 {
        if from == to {
            1.0
        } else {
            (self.log_prefix[[j, to]] - self.log_prefix[[j, from]]).exp()
        }
    }

    /// `R_j(τ_{from}, τ_{to})`.
    pub fn resolvent_factor(&self, j: usize, from: usize, to: usize) -> Result<f64> {
        if j >= self.modes() {
            return Err(Error::IndexOutOfRange(format!("mode {j} of {}", self.modes())));
        }
        if to > self.steps() {
            return Err(Error::IndexOutOfRange(format!("step {to} of {}", self.steps())));
        }
        if from > to {
            return Err(Error::ReversedWindow { start: from, end: to });
        }
        Ok(self.factor(j, from, to))
    }
}

/// Continuous interpolant `S_j(τ_{η₀}, t) = Π_{ν>η₀} 1/(1 + λ_j (t∧τ_ν − t∧τ_{ν−1}))`.
pub fn interpolant(es: &Eigensystem, grid: &MergedGrid, j: usize, eta0: usize, t: f64) -> f64 {
    let lambda = es.lambdas()[j];
    let taus = grid.taus();
    let mut value = 1.0;
    for nu in eta0 + 1..taus.len() {
        let incr = t.min(taus[nu]) - t.min(taus[nu - 1]);
        if incr <= 0.0 {
            break;
        }
        value /= 1.0 + lambda * incr;
    }
    value
}

/// `Σ_{η : t_{i,ℓ} ≤ τ_η ≤ τ_N} R_j(t_{i-1,ℓ}, τ_η)² (τ_η − τ_{η−1})`, summed
/// in ascending `η`. `level` is zero-based, `i ∈ 1..=n_ℓ`.
pub fn weight_sum(
    table: &ResolventTable,
    grid: &MergedGrid,
    j: usize,
    level: usize,
    i: usize,
) -> Result<f64> {
    if j >= table.modes() || level >= grid.levels() {
        return Err(Error::IndexOutOfRange(format!("mode {j}, level {level}")));
    }
    if i == 0 || i > grid.level_steps(level) {
        return Err(Error::IndexOutOfRange(format!(
            "step {i} of level {level} (n = {})",
            grid.level_steps(level)
        )));
    }
    let start = grid.node_index(level, i - 1);
    let first = grid.node_index(level, i);
    Ok(weight_sum_between(table, grid, j, start, first))
}

/// Same sum for an arbitrary window start `start < first`, given as merged indices.
pub(crate) fn weight_sum_between(
    table: &ResolventTable,
    grid: &MergedGrid,
    j: usize,
    start: usize,
    first: usize,
) -> f64 {
    let mut r = table.factor(j, start, first - 1);
    let mut sum = 0.0;
    for eta in first..=grid.steps() {
        r *= table.step_factor(j, eta);
        sum += r * r * grid.dtau(eta);
    }
    sum
}

/// One row of the weight-lemma dump. `mode`, `level`, `step` are one-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRow {
    pub mode: usize,
    pub lambda: f64,
    pub level: usize,
    pub step: usize,
    pub weight_sum: f64,
    pub bound: f64,
    pub margin: f64,
}

/// Weight sums for every `(j, ℓ, i)` against the bound `2 c_disc / λ_j`, where
/// `c_disc` is the measured quasi-uniformity of `grids` (1 for uniform levels).
pub fn weight_table(
    es: &Eigensystem,
    grids: &LevelGrids,
    grid: &MergedGrid,
    table: &ResolventTable,
) -> Vec<WeightRow> {
    let c_disc = grids.quasi_uniformity();
    let mut rows = Vec::new();
    for (j, &lambda) in es.lambdas().iter().enumerate() {
        let bound = 2.0 * c_disc / lambda;
        for level in 0..grids.levels() {
            for i in 1..=grids.steps(level) {
                let start = grid.node_index(level, i - 1);
                let first = grid.node_index(level, i);
                let w = weight_sum_between(table, grid, j, start, first);
                rows.push(WeightRow {
                    mode: j + 1,
                    lambda,
                    level: level + 1,
                    step: i,
                    weight_sum: w,
                    bound,
                    margin: bound - w,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_for(lambdas: Vec<f64>, n: &[usize]) -> (Eigensystem, MergedGrid, ResolventTable) {
        let es = Eigensystem::new(lambdas, vec![1.0]).unwrap();
        let m = MergedGrid::new(&LevelGrids::uniform(n).unwrap());
        let t = ResolventTable::new(&es, &m);
        (es, m, t)
    }

    #[test]
    fn empty_window_is_one() {
        let (_, _, t) = table_for(vec![1.0, 50.0, 1e8], &[3, 7]);
        for j in 0..3 {
            assert_eq!(t.log_prefix(j, 0).exp(), 1.0);
            for eta in 0..=t.steps() {
                assert_eq!(t.resolvent_factor(j, eta, eta).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn hand_products() {
        // n = (3, 2): Δτ = (1/3, 1/6, 1/6, 1/3)
        let (_, _, t) = table_for(vec![2.0], &[3, 2]);
        assert!((t.resolvent_factor(0, 0, 2).unwrap() - 0.45).abs() < 1e-15);
        let (_, _, t) = table_for(vec![1.0], &[2]);
        assert!((t.resolvent_factor(0, 0, 2).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(
            t.resolvent_factor(0, 2, 1),
            Err(Error::ReversedWindow { start: 2, end: 1 })
        );
    }

    #[test]
    fn strictly_decreasing_in_window_end() {
        let (_, m, t) = table_for(vec![0.3, 4.0], &[4, 5]);
        for j in 0..2 {
            for a in 0..m.steps() {
                for b in a + 1..=m.steps() {
                    assert!(t.factor(j, a, b) < t.factor(j, a, b - 1));
                }
            }
        }
    }

    #[test]
    fn no_underflow_of_window_ratios() {
        let es = Eigensystem::new(vec![1e8], vec![1.0]).unwrap();
        let m = MergedGrid::new(&LevelGrids::uniform(&[1000]).unwrap());
        let t = ResolventTable::new(&es, &m);
        // raw prefix product underflows, window ratios do not
        assert_eq!(t.log_prefix(0, 1000).exp(), 0.0);
        let r = t.resolvent_factor(0, 998, 999).unwrap();
        assert!(r > 0.0);
        assert!((r - 1.0 / (1.0 + 1e5)).abs() < 1e-12 * r);
    }

    #[test]
    fn interpolant_endpoints() {
        let (es, m, t) = table_for(vec![3.0], &[2, 3]);
        for eta0 in 0..=m.steps() {
            assert_eq!(interpolant(&es, &m, 0, eta0, m.tau(eta0)), 1.0);
            let at_one = interpolant(&es, &m, 0, eta0, 1.0);
            assert!((at_one - t.factor(0, eta0, m.steps())).abs() < 1e-14);
            for eta in eta0 + 1..=m.steps() {
                let mid = 0.5 * (m.tau(eta - 1) + m.tau(eta));
                let s = interpolant(&es, &m, 0, eta0, mid);
                let lo = interpolant(&es, &m, 0, eta0, m.tau(eta));
                let hi = interpolant(&es, &m, 0, eta0, m.tau(eta - 1));
                assert!(lo <= s && s <= hi);
            }
        }
    }

    #[test]
    fn weight_sum_examples() {
        let (_, m, t) = table_for(vec![1.0], &[1]);
        assert_eq!(weight_sum(&t, &m, 0, 0, 1).unwrap(), 0.25);

        let (_, m, t) = table_for(vec![100.0], &[4]);
        // by hand: Σ_{k=1}^{5-i} 26^{-2k} / 4
        for i in 1..=4 {
            let expected: f64 = (1..=5 - i).map(|k| 26f64.powi(-2 * k as i32) / 4.0).sum();
            let w = weight_sum(&t, &m, 0, 0, i).unwrap();
            assert!((w - expected).abs() < 1e-15, "i = {i}: {w} vs {expected}");
            assert!(w <= 0.02);
        }
    }
}
