//! Per-level time grids on `[0, 1]` and their merged partition.
//!
//! Level `ℓ` (zero-based here) carries its own nodes `0 = t_{0,ℓ} < … <
//! t_{n_ℓ,ℓ} = 1`. The scheme steps along the union of all level nodes
//! `0 = τ_0 < … < τ_N = 1`; at every merged node it needs the set of levels
//! owning that node (`active`) and, per level, the most recent level node
//! strictly before it (`prev_node`).
//!
//! Uniform levels `i / n_ℓ` are merged with exact rational keys so that
//! `1/3` and `2/6` are recognised as the same node.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LevelNodes {
    /// `t_i = i / n`.
    Uniform(usize),
    /// Explicit nodes, strictly increasing from 0 to 1.
    Explicit(Vec<f64>),
}

impl LevelNodes {
    fn steps(&self) -> usize {
        match self {
            LevelNodes::Uniform(n) => *n,
            LevelNodes::Explicit(nodes) => nodes.len() - 1,
        }
    }

    fn node(&self, i: usize) -> f64 {
        match self {
            LevelNodes::Uniform(n) => i as f64 / *n as f64,
            LevelNodes::Explicit(nodes) => nodes[i],
        }
    }

    fn step_len(&self, i: usize) -> f64 {
        match self {
            LevelNodes::Uniform(n) => 1.0 / *n as f64,
            LevelNodes::Explicit(nodes) => nodes[i] - nodes[i - 1],
        }
    }
}

/// The per-level grids `{t_{i,ℓ}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrids {
    levels: Vec<LevelNodes>,
}

impl LevelGrids {
    /// Uniform grids with `n[ℓ]` steps on level `ℓ`.
    pub fn uniform(n: &[usize]) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::EmptyLevels);
        }
        if let Some(level) = n.iter().position(|&k| k == 0) {
            return Err(Error::ZeroSteps { level });
        }
        if n.iter().any(|&k| k as u64 > u32::MAX as u64) {
            return Err(Error::InvalidParameter("step counts must fit in 32 bits".into()));
        }
        Ok(Self { levels: n.iter().map(|&k| LevelNodes::Uniform(k)).collect() })
    }

    /// Arbitrary per-level node lists sharing the endpoints 0 and 1.
    pub fn explicit(nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyLevels);
        }
        for (level, list) in nodes.iter().enumerate() {
            if list.len() < 2 {
                return Err(Error::ZeroSteps { level });
            }
            if list[0] != 0.0 || *list.last().unwrap() != 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "level {level} must start at 0 and end at 1"
                )));
            }
            if list.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidParameter(format!(
                    "level {level} nodes must be strictly increasing"
                )));
            }
        }
        Ok(Self { levels: nodes.into_iter().map(LevelNodes::Explicit).collect() })
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, level: usize) -> &LevelNodes {
        &self.levels[level]
    }

    /// `n_ℓ`.
    pub fn steps(&self, level: usize) -> usize {
        self.levels[level].steps()
    }

    pub fn step_counts(&self) -> Vec<usize> {
        self.levels.iter().map(LevelNodes::steps).collect()
    }

    /// `t_{i,ℓ}`.
    pub fn node(&self, level: usize, i: usize) -> f64 {
        self.levels[level].node(i)
    }

    pub fn nodes(&self, level: usize) -> Vec<f64> {
        (0..=self.steps(level)).map(|i| self.node(level, i)).collect()
    }

    /// `t_{i,ℓ} - t_{i-1,ℓ}` for `i ≥ 1`.
    pub fn step_len(&self, level: usize, i: usize) -> f64 {
        self.levels[level].step_len(i)
    }

    /// `Some(n)` when every level is the uniform grid with the same `n`.
    pub fn common_uniform_steps(&self) -> Option<usize> {
        let first = match self.levels[0] {
            LevelNodes::Uniform(n) => n,
            LevelNodes::Explicit(_) => return None,
        };
        self.levels
            .iter()
            .all(|l| *l == LevelNodes::Uniform(first))
            .then_some(first)
    }

    /// Largest per-level ratio of longest to shortest step; 1 for uniform levels.
    pub fn quasi_uniformity(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| match l {
                LevelNodes::Uniform(_) => 1.0,
                LevelNodes::Explicit(nodes) => {
                    let (lo, hi) = nodes.windows(2).map(|w| w[1] - w[0]).fold(
                        (f64::INFINITY, 0.0_f64),
                        |(lo, hi), d| (lo.min(d), hi.max(d)),
                    );
                    hi / lo
                }
            })
            .fold(1.0, f64::max)
    }

    /// Concatenate the levels of `self` and `other`.
    pub fn concat(&self, other: &LevelGrids) -> LevelGrids {
        let mut levels = self.levels.clone();
        levels.extend(other.levels.iter().cloned());
        LevelGrids { levels }
    }
}

/// Explicit per-level grids with bounded step ratio `δ_max/δ_min ≤ c_disc`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiUniformGrids {
    grids: LevelGrids,
    c_disc: f64,
}

impl QuasiUniformGrids {
    pub fn new(nodes: Vec<Vec<f64>>) -> Result<Self> {
        let grids = LevelGrids::explicit(nodes)?;
        let c_disc = grids.quasi_uniformity();
        Ok(Self { grids, c_disc })
    }

    pub fn c_disc(&self) -> f64 {
        self.c_disc
    }

    pub fn grids(&self) -> &LevelGrids {
        &self.grids
    }
}

/// Total order on finite floats for use as merge keys.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FloatKey(f64);

impl Eq for FloatKey {}

impl PartialOrd for FloatKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloatKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Union of all level grids with the index tables the scheme consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedGrid {
    taus: Vec<f64>,
    dtaus: Vec<f64>,
    active: Vec<Vec<usize>>,
    /// Row-major `(N + 1) × L`; row 0 is unused and set to 0.
    prev: Vec<usize>,
    /// Row-major `(N + 1) × L`; `Some(i)` iff `τ_η = t_{i,ℓ}`.
    level_step: Vec<Option<usize>>,
    node_index: Vec<Vec<usize>>,
    level_count: usize,
}

impl MergedGrid {
    pub fn new(grids: &LevelGrids) -> Self {
        let all_uniform = grids.levels.iter().all(|l| matches!(l, LevelNodes::Uniform(_)));
        if all_uniform {
            let keyed: Vec<Vec<Ratio<u64>>> = grids
                .levels
                .iter()
                .map(|l| {
                    let n = l.steps() as u64;
                    (0..=n).map(|i| Ratio::new(i, n)).collect()
                })
                .collect();
            Self::from_keys(&keyed, |r| *r.numer() as f64 / *r.denom() as f64, |a, b| {
                let d = a - b;
                *d.numer() as f64 / *d.denom() as f64
            })
        } else {
            let keyed: Vec<Vec<FloatKey>> = (0..grids.levels())
                .map(|l| grids.nodes(l).into_iter().map(FloatKey).collect())
                .collect();
            Self::from_keys(&keyed, |k| k.0, |a, b| a.0 - b.0)
        }
    }

    fn from_keys<K, F, D>(levels: &[Vec<K>], to_f64: F, diff: D) -> Self
    where
        K: Ord + Copy,
        F: Fn(&K) -> f64,
        D: Fn(&K, &K) -> f64,
    {
        let level_count = levels.len();
        let mut owners: BTreeMap<K, Vec<(usize, usize)>> = BTreeMap::new();
        for (level, keys) in levels.iter().enumerate() {
            for (i, key) in keys.iter().enumerate() {
                owners.entry(*key).or_default().push((level, i));
            }
        }
        let n_nodes = owners.len();
        let mut taus = Vec::with_capacity(n_nodes);
        let mut dtaus = Vec::with_capacity(n_nodes);
        let mut active = Vec::with_capacity(n_nodes);
        let mut level_step = vec![None; n_nodes * level_count];
        let mut node_index: Vec<Vec<usize>> =
            levels.iter().map(|k| vec![0; k.len()]).collect();
        let mut prev_key: Option<K> = None;
        for (eta, (key, members)) in owners.iter().enumerate() {
            taus.push(to_f64(key));
            dtaus.push(prev_key.map_or(0.0, |p| diff(key, &p)));
            prev_key = Some(*key);
            let mut levels_here: Vec<usize> = members.iter().map(|&(l, _)| l).collect();
            levels_here.sort_unstable();
            active.push(levels_here);
            for &(level, i) in members {
                level_step[eta * level_count + level] = Some(i);
                node_index[level][i] = eta;
            }
        }
        let mut prev = vec![0; n_nodes * level_count];
        let mut last = vec![0usize; level_count];
        for eta in 1..n_nodes {
            prev[eta * level_count..(eta + 1) * level_count].copy_from_slice(&last);
            for &level in &active[eta] {
                last[level] = eta;
            }
        }
        Self { taus, dtaus, active, prev, level_step, node_index, level_count }
    }

    /// `N`, the number of merged steps.
    pub fn steps(&self) -> usize {
        self.taus.len() - 1
    }

    pub fn levels(&self) -> usize {
        self.level_count
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn tau(&self, eta: usize) -> f64 {
        self.taus[eta]
    }

    /// `τ_η - τ_{η-1}`; zero for `η = 0`.
    pub fn dtau(&self, eta: usize) -> f64 {
        self.dtaus[eta]
    }

    pub fn dtaus(&self) -> &[f64] {
        &self.dtaus
    }

    /// `𝒦_η`, ascending.
    pub fn active(&self, eta: usize) -> &[usize] {
        &self.active[eta]
    }

    /// Merged index of `s_{η,ℓ}`, the latest level-`ℓ` node strictly before `τ_η`.
    pub fn prev_index(&self, eta: usize, level: usize) -> usize {
        debug_assert!(eta >= 1);
        self.prev[eta * self.level_count + level]
    }

    /// `s_{η,ℓ}`.
    pub fn prev_node(&self, eta: usize, level: usize) -> f64 {
        self.taus[self.prev_index(eta, level)]
    }

    /// `Some(i)` when `τ_η = t_{i,ℓ}`.
    pub fn level_step(&self, eta: usize, level: usize) -> Option<usize> {
        self.level_step[eta * self.level_count + level]
    }

    /// `n_ℓ` as seen by the merged grid.
    pub fn level_steps(&self, level: usize) -> usize {
        self.node_index[level].len() - 1
    }

    /// `η*(i, ℓ)` with `τ_{η*} = t_{i,ℓ}`.
    pub fn node_index(&self, level: usize, i: usize) -> usize {
        self.node_index[level][i]
    }

    /// `Ξ_ν = ⋃_{μ=ν..=η} 𝒦_μ`, ascending.
    pub fn xi_set(&self, nu: usize, eta: usize) -> Result<Vec<usize>> {
        if nu < 1 || nu > eta || eta > self.steps() {
            return Err(Error::IndexOutOfRange(format!(
                "need 1 <= nu <= eta <= {}, got nu = {nu}, eta = {eta}",
                self.steps()
            )));
        }
        let mut seen = vec![false; self.level_count];
        for mu in nu..=eta {
            for &level in &self.active[mu] {
                seen[level] = true;
            }
        }
        Ok(seen.iter().enumerate().filter(|(_, &s)| s).map(|(l, _)| l).collect())
    }

    /// Merged indices of every node of `grids`, per level. Fails unless the
    /// merged grid refines each of the first `grids.levels()` level grids.
    pub fn locate(&self, grids: &LevelGrids) -> Result<Vec<Vec<usize>>> {
        if grids.levels() > self.level_count {
            return Err(Error::GridMismatch(format!(
                "{} levels requested, merged grid has {}",
                grids.levels(),
                self.level_count
            )));
        }
        (0..grids.levels())
            .map(|level| {
                (0..=grids.steps(level))
                    .map(|i| {
                        let t = grids.node(level, i);
                        self.taus
                            .binary_search_by(|tau| tau.total_cmp(&t))
                            .map_err(|_| {
                                Error::GridMismatch(format!(
                                    "node {i} of level {level} (t = {t}) is not a merged node"
                                ))
                            })
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m23() -> MergedGrid {
        MergedGrid::new(&LevelGrids::uniform(&[2, 3]).unwrap())
    }

    #[test]
    fn level_nodes() {
        let g = LevelGrids::uniform(&[2, 3]).unwrap();
        assert_eq!(g.nodes(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(g.nodes(1), vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(LevelGrids::uniform(&[1]).unwrap().nodes(0), vec![0.0, 1.0]);
        assert_eq!(LevelGrids::uniform(&[2, 0]), Err(Error::ZeroSteps { level: 1 }));
        assert_eq!(LevelGrids::uniform(&[]), Err(Error::EmptyLevels));
    }

    #[test]
    fn merge_two_three() {
        let m = m23();
        assert_eq!(m.steps(), 4);
        assert_eq!(m.taus(), &[0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0]);
        // levels are zero-based: level 0 has n = 2, level 1 has n = 3
        assert_eq!(m.active(1), &[1]);
        assert_eq!(m.active(2), &[0]);
        assert_eq!(m.active(3), &[1]);
        assert_eq!(m.active(4), &[0, 1]);
        assert_eq!(m.prev_node(4, 0), 0.5);
        assert_eq!(m.prev_node(4, 1), 2.0 / 3.0);
        assert_eq!(m.prev_node(2, 1), 1.0 / 3.0);
    }

    #[test]
    fn rational_dedup() {
        let m = MergedGrid::new(&LevelGrids::uniform(&[3, 6]).unwrap());
        assert_eq!(m.steps(), 6);
        assert_eq!(m.active(2), &[0, 1]);
    }

    #[test]
    fn xi_sets() {
        let m = m23();
        assert_eq!(m.xi_set(3, 4).unwrap(), vec![0, 1]);
        assert_eq!(m.xi_set(1, 2).unwrap(), vec![0, 1]);
        assert_eq!(m.xi_set(1, 1).unwrap(), vec![1]);
        assert!(matches!(m.xi_set(0, 1), Err(Error::IndexOutOfRange(_))));
        assert!(matches!(m.xi_set(3, 2), Err(Error::IndexOutOfRange(_))));
        assert!(matches!(m.xi_set(1, 5), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn quasi_uniformity_values() {
        assert_eq!(LevelGrids::uniform(&[2, 3]).unwrap().quasi_uniformity(), 1.0);
        let q = QuasiUniformGrids::new(vec![vec![0.0, 0.25, 1.0]]).unwrap();
        assert_eq!(q.c_disc(), 3.0);
        let q = QuasiUniformGrids::new(vec![vec![0.0, 0.5, 1.0], vec![0.0, 0.1, 1.0]]).unwrap();
        assert!((q.c_disc() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn explicit_validation() {
        assert!(LevelGrids::explicit(vec![vec![0.0, 0.5]]).is_err());
        assert!(LevelGrids::explicit(vec![vec![0.0, 0.6, 0.5, 1.0]]).is_err());
        assert_eq!(LevelGrids::explicit(vec![vec![0.0]]), Err(Error::ZeroSteps { level: 0 }));
    }

    #[test]
    fn refinement_check() {
        let fine = MergedGrid::new(&LevelGrids::uniform(&[6, 6]).unwrap());
        let idx = fine.locate(&LevelGrids::uniform(&[2, 3]).unwrap()).unwrap();
        assert_eq!(idx, vec![vec![0, 3, 6], vec![0, 2, 4, 6]]);
        assert!(matches!(
            fine.locate(&LevelGrids::uniform(&[2, 4]).unwrap()),
            Err(Error::GridMismatch(_))
        ));
    }
}
