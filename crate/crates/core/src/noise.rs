//! Reproducible truncated Q-Wiener increments.
//!
//! `W_L(t) = Σ_{ℓ≤L} √q_ℓ β_ℓ(t) h_ℓ` with independent scalar Brownian
//! motions `β_ℓ`. Increments are drawn once on a merged grid and summed up
//! to each level grid, so any two schemes whose level nodes the merged grid
//! refines see the same Brownian paths.
//!
//! The standard normal for `(seed, path, level, step)` is a pure function of
//! that tuple: a ChaCha8 block stream keyed by `seed`, nonce `path`, read at
//! word offset `2 (level · 2³² + step)`, then mapped through the inverse
//! normal CDF. Evaluation order and thread count never change the draws.

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::spectral::{power_weight, Eigensystem};
use crate::timegrid::{LevelGrids, MergedGrid};

/// Identity of one path's noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub seed: u64,
    pub path: u64,
}

const STEP_BITS: u32 = 32;

impl NoiseStream {
    pub fn new(seed: u64, path: u64) -> Self {
        Self { seed, path }
    }

    fn positioned(&self, level: usize, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.path);
        let counter = ((level as u128) << STEP_BITS) | step as u128;
        rng.set_word_pos(2 * counter);
        rng
    }

    /// Standard normal keyed by `(level, step)`.
    pub fn standard_normal(&self, level: usize, step: usize) -> f64 {
        to_normal(self.positioned(level, step).next_u64())
    }

    /// Standard normals for `step = first, first + 1, …` on one level; equal
    /// to calling [`Self::standard_normal`] per step.
    fn fill_level(&self, level: usize, first: usize, out: &mut [f64]) {
        let mut rng = self.positioned(level, first);
        for z in out.iter_mut() {
            *z = to_normal(rng.next_u64());
        }
    }
}

fn to_normal(bits: u64) -> f64 {
    // midpoint of one of 2^53 equal cells, strictly inside (0, 1)
    let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    Normal::standard().inverse_cdf(u)
}

/// `Δβ_{η,ℓ}` on a merged grid, shape `(L, N + 1)`, column 0 zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedIncrements {
    values: Array2<f64>,
}

impl MergedIncrements {
    pub fn levels(&self) -> usize {
        self.values.nrows()
    }

    pub fn steps(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn get(&self, level: usize, eta: usize) -> f64 {
        self.values[[level, eta]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Independent `N(0, Δτ_η)` draws for `levels` Brownian motions on `grid`.
pub fn sample_merged_increments(
    grid: &MergedGrid,
    levels: usize,
    stream: &NoiseStream,
) -> Result<MergedIncrements> {
    if levels == 0 {
        return Err(Error::EmptyLevels);
    }
    let n = grid.steps();
    let mut values = Array2::zeros((levels, n + 1));
    let mut z = vec![0.0; n];
    for level in 0..levels {
        stream.fill_level(level, 1, &mut z);
        for eta in 1..=n {
            values[[level, eta]] = grid.dtau(eta).sqrt() * z[eta - 1];
        }
    }
    Ok(MergedIncrements { values })
}

/// Merged increments together with their per-level sums `Δβ_{i,ℓ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelIncrements {
    merged: Option<MergedIncrements>,
    /// `levels[ℓ][i] = β_ℓ(t_{i,ℓ}) − β_ℓ(t_{i−1,ℓ})`; index 0 unused (zero).
    levels: Vec<Vec<f64>>,
}

impl LevelIncrements {
    /// Level increments given directly, one vector of `n_ℓ` values per level.
    pub fn from_level_values(grids: &LevelGrids, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grids.levels() {
            return Err(Error::GridMismatch(format!(
                "{} increment levels for {} grid levels",
                values.len(),
                grids.levels()
            )));
        }
        let levels = values
            .into_iter()
            .enumerate()
            .map(|(level, v)| {
                if v.len() != grids.steps(level) {
                    return Err(Error::GridMismatch(format!(
                        "level {level}: {} increments for {} steps",
                        v.len(),
                        grids.steps(level)
                    )));
                }
                let mut out = Vec::with_capacity(v.len() + 1);
                out.push(0.0);
                out.extend(v);
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(Self { merged: None, levels })
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn steps(&self, level: usize) -> usize {
        self.levels[level].len() - 1
    }

    /// `Δβ_{i,ℓ}` for `i ≥ 1`.
    #[inline]
    pub fn level(&self, level: usize, i: usize) -> f64 {
        self.levels[level][i]
    }

    pub fn set_level(&mut self, level: usize, i: usize, value: f64) {
        self.levels[level][i] = value;
        self.merged = None;
    }

    /// The merged draws these were aggregated from, when still consistent.
    pub fn merged(&self) -> Option<&MergedIncrements> {
        self.merged.as_ref()
    }
}

/// Sum merged increments over each level step:
/// `Δβ_{i,ℓ} = Σ_{η: t_{i−1,ℓ} < τ_η ≤ t_{i,ℓ}} Δβ_{η,ℓ}`.
pub fn aggregate_level_increments(
    inc: MergedIncrements,
    grids: &LevelGrids,
    grid: &MergedGrid,
) -> Result<LevelIncrements> {
    if inc.steps() != grid.steps() {
        return Err(Error::GridMismatch(format!(
            "increments cover {} steps, merged grid has {}",
            inc.steps(),
            grid.steps()
        )));
    }
    if inc.levels() < grids.levels() {
        return Err(Error::GridMismatch(format!(
            "{} sampled levels for {} grid levels",
            inc.levels(),
            grids.levels()
        )));
    }
    let located = grid.locate(grids)?;
    let levels = located
        .iter()
        .enumerate()
        .map(|(level, idx)| {
            let mut out = vec![0.0; idx.len()];
            for i in 1..idx.len() {
                out[i] = (idx[i - 1] + 1..=idx[i]).map(|eta| inc.get(level, eta)).sum();
            }
            out
        })
        .collect();
    Ok(LevelIncrements { merged: Some(inc), levels })
}

/// Sample on `grid` and aggregate onto `grids` in one go.
pub fn sample_level_increments(
    grids: &LevelGrids,
    grid: &MergedGrid,
    stream: &NoiseStream,
) -> Result<LevelIncrements> {
    let merged = sample_merged_increments(grid, grids.levels(), stream)?;
    aggregate_level_increments(merged, grids, grid)
}

/// `Σ_{ℓ≤L} λ_ℓ^{2r} q_ℓ`, so that `E‖W_L(t)‖²_{D(A^r)} = t · (this)`.
pub fn wiener_regularity_coefficient(es: &Eigensystem, r: f64) -> Result<f64> {
    if r < 0.0 || r.is_nan() {
        return Err(Error::NegativeExponent(r));
    }
    if r == 0.0 {
        return Ok(es.qs().iter().sum());
    }
    if es.levels() > es.modes() {
        return Err(Error::DimensionMismatch(format!(
            "need lambda for every level: {} levels, {} modes",
            es.levels(),
            es.modes()
        )));
    }
    Ok(es
        .qs()
        .iter()
        .zip(es.lambdas())
        .map(|(q, &l)| power_weight(l, r) * q)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grids23() -> (LevelGrids, MergedGrid) {
        let g = LevelGrids::uniform(&[2, 3]).unwrap();
        let m = MergedGrid::new(&g);
        (g, m)
    }

    #[test]
    fn deterministic_and_keyed() {
        let (_, m) = grids23();
        let s = NoiseStream::new(42, 7);
        let a = sample_merged_increments(&m, 2, &s).unwrap();
        let b = sample_merged_increments(&m, 2, &s).unwrap();
        assert_eq!(a, b);
        for level in 0..2 {
            for eta in 1..=m.steps() {
                let z = s.standard_normal(level, eta);
                assert_eq!(a.get(level, eta), m.dtau(eta).sqrt() * z);
            }
        }
        let other = sample_merged_increments(&m, 2, &NoiseStream::new(42, 8)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn telescoping() {
        let (g, m) = grids23();
        let inc = sample_level_increments(&g, &m, &NoiseStream::new(1, 0)).unwrap();
        let merged = inc.merged().unwrap().clone();
        assert_eq!(inc.level(0, 1), merged.get(0, 1) + merged.get(0, 2));
        for level in 0..2 {
            let total_level: f64 = (1..=g.steps(level)).map(|i| inc.level(level, i)).sum();
            let total_merged: f64 = (1..=m.steps()).map(|eta| merged.get(level, eta)).sum();
            assert!((total_level - total_merged).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_levels_equal_merged() {
        let g = LevelGrids::uniform(&[5, 5, 5]).unwrap();
        let m = MergedGrid::new(&g);
        let inc = sample_level_increments(&g, &m, &NoiseStream::new(3, 3)).unwrap();
        let merged = inc.merged().unwrap();
        for level in 0..3 {
            for i in 1..=5 {
                assert_eq!(inc.level(level, i), merged.get(level, i));
            }
        }
    }

    #[test]
    fn grid_mismatch() {
        let (g, m) = grids23();
        let inc = sample_merged_increments(&m, 1, &NoiseStream::new(0, 0)).unwrap();
        assert!(matches!(aggregate_level_increments(inc, &g, &m), Err(Error::GridMismatch(_))));
        let coarse = MergedGrid::new(&LevelGrids::uniform(&[2]).unwrap());
        let inc = sample_merged_increments(&coarse, 2, &NoiseStream::new(0, 0)).unwrap();
        assert!(matches!(aggregate_level_increments(inc, &g, &m), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn regularity_coefficient() {
        let es = Eigensystem::new(vec![1.0, 4.0], vec![1.0, 0.25]).unwrap();
        assert_eq!(wiener_regularity_coefficient(&es, 0.0).unwrap(), 1.25);
        assert_eq!(wiener_regularity_coefficient(&es, 0.5).unwrap(), 2.0);
        let zero = Eigensystem::new(vec![1.0, 4.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(wiener_regularity_coefficient(&zero, 0.0).unwrap(), 0.0);
        assert_eq!(wiener_regularity_coefficient(&es, -1.0), Err(Error::NegativeExponent(-1.0)));
    }
}
