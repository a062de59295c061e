//! Diffusion operators `B(t, x)` seen through their coefficients
//! `b_{jℓ}(t, x) = ⟨B(t, x) h_ℓ, h_j⟩`, the only access both scheme forms need.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::spectral::{fractional_norm_sq, Eigensystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `b_{jℓ} = 0` for `j ≠ ℓ`.
    Diagonal,
    Dense,
}

pub trait DiffusionOperator: Send + Sync {
    /// Smoothness index `ι ∈ [0, 1/2]`.
    fn iota(&self) -> f64;

    fn coupling(&self) -> Coupling;

    fn state_dependent(&self) -> bool;

    /// Writes `b_{jℓ}(t, x)` for `j < column.len()` into `column`.
    fn column(&self, t: f64, x: &[f64], level: usize, column: &mut [f64]);

    /// `b_{ℓℓ}(t, x)`; only meaningful for diagonal operators.
    fn diagonal(&self, t: f64, x: &[f64], level: usize) -> f64 {
        let mut col = vec![0.0; level + 1];
        self.column(t, x, level, &mut col);
        col[level]
    }

    /// Checks the operator can serve `levels` noise levels.
    fn check_dims(&self, _modes: usize, _levels: usize) -> Result<()> {
        Ok(())
    }
}

pub fn validate_iota(iota: f64) -> Result<f64> {
    if (0.0..=0.5).contains(&iota) {
        Ok(iota)
    } else {
        Err(Error::InvalidIota(iota))
    }
}

fn check_len(what: &str, len: usize, levels: usize) -> Result<()> {
    if len < levels {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {len} entries, {levels} noise levels requested"
        )));
    }
    Ok(())
}

fn diagonal_column(column: &mut [f64], level: usize, value: f64) {
    column.fill(0.0);
    if let Some(c) = column.get_mut(level) {
        *c = value;
    }
}

/// `b_{jℓ} = σ_ℓ δ_{jℓ}`, independent of time and state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveDiagonal {
    sigma: Vec<f64>,
    iota: f64,
}

impl AdditiveDiagonal {
    pub fn new(sigma: Vec<f64>, iota: f64) -> Result<Self> {
        Ok(Self { sigma, iota: validate_iota(iota)? })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

impl DiffusionOperator for AdditiveDiagonal {
    fn iota(&self) -> f64 {
        self.iota
    }
    fn coupling(&self) -> Coupling {
        Coupling::Diagonal
    }
    fn state_dependent(&self) -> bool {
        false
    }
    fn column(&self, _t: f64, _x: &[f64], level: usize, column: &mut [f64]) {
        diagonal_column(column, level, self.sigma[level]);
    }
    fn diagonal(&self, _t: f64, _x: &[f64], level: usize) -> f64 {
        self.sigma[level]
    }
    fn check_dims(&self, _modes: usize, levels: usize) -> Result<()> {
        check_len("sigma", self.sigma.len(), levels)
    }
}

/// `b_{jℓ}(t, x) = (γ_ℓ + ρ_ℓ x_ℓ) δ_{jℓ}`; `x_ℓ = 0` beyond the stored modes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDiagonal {
    gamma: Vec<f64>,
    rho: Vec<f64>,
    iota: f64,
}

impl LinearDiagonal {
    pub fn new(gamma: Vec<f64>, rho: Vec<f64>, iota: f64) -> Result<Self> {
        if gamma.len() != rho.len() {
            return Err(Error::DimensionMismatch(format!(
                "gamma has {} entries, rho has {}",
                gamma.len(),
                rho.len()
            )));
        }
        Ok(Self { gamma, rho, iota: validate_iota(iota)? })
    }
}

impl DiffusionOperator for LinearDiagonal {
    fn iota(&self) -> f64 {
        self.iota
    }
    fn coupling(&self) -> Coupling {
        Coupling::Diagonal
    }
    fn state_dependent(&self) -> bool {
        self.rho.iter().any(|&r| r != 0.0)
    }
    fn column(&self, t: f64, x: &[f64], level: usize, column: &mut [f64]) {
        diagonal_column(column, level, self.diagonal(t, x, level));
    }
    fn diagonal(&self, _t: f64, x: &[f64], level: usize) -> f64 {
        self.gamma[level] + self.rho[level] * x.get(level).copied().unwrap_or(0.0)
    }
    fn check_dims(&self, _modes: usize, levels: usize) -> Result<()> {
        check_len("gamma/rho", self.gamma.len(), levels)
    }
}

/// Constant dense coefficient matrix, shape `(J, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDense {
    matrix: Array2<f64>,
    iota: f64,
}

impl ConstantDense {
    pub fn new(matrix: Array2<f64>, iota: f64) -> Result<Self> {
        Ok(Self { matrix, iota: validate_iota(iota)? })
    }
}

impl DiffusionOperator for ConstantDense {
    fn iota(&self) -> f64 {
        self.iota
    }
    fn coupling(&self) -> Coupling {
        Coupling::Dense
    }
    fn state_dependent(&self) -> bool {
        false
    }
    fn column(&self, _t: f64, _x: &[f64], level: usize, column: &mut [f64]) {
        for (j, c) in column.iter_mut().enumerate() {
            *c = if j < self.matrix.nrows() { self.matrix[[j, level]] } else { 0.0 };
        }
    }
    fn check_dims(&self, _modes: usize, levels: usize) -> Result<()> {
        check_len("matrix columns", self.matrix.ncols(), levels)
    }
}

pub type CoefficientFn = dyn Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync;

/// User-supplied dense coefficients. The callback receives `(t, x, ℓ, column)`
/// and must fill `column[j] = b_{jℓ}(t, x)`; it has to be pure.
#[derive(Clone)]
pub struct CallbackOperator {
    f: Arc<CoefficientFn>,
    iota: f64,
    state_dependent: bool,
}

impl CallbackOperator {
    pub fn new<F>(f: F, iota: f64, state_dependent: bool) -> Result<Self>
    where
        F: Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync + 'static,
    {
        Ok(Self { f: Arc::new(f), iota: validate_iota(iota)?, state_dependent })
    }
}

impl fmt::Debug for CallbackOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallbackOperator")
            .field("iota", &self.iota)
            .field("state_dependent", &self.state_dependent)
            .finish_non_exhaustive()
    }
}

impl DiffusionOperator for CallbackOperator {
    fn iota(&self) -> f64 {
        self.iota
    }
    fn coupling(&self) -> Coupling {
        Coupling::Dense
    }
    fn state_dependent(&self) -> bool {
        self.state_dependent
    }
    fn column(&self, t: f64, x: &[f64], level: usize, column: &mut [f64]) {
        (self.f)(t, x, level, column)
    }
}

fn hs_norm_sq_with<F>(es: &Eigensystem, r: f64, mut column_of: F) -> Result<f64>
where
    F: FnMut(usize, &mut [f64]),
{
    if r < 0.0 || r.is_nan() {
        return Err(Error::NegativeExponent(r));
    }
    let mut col = vec![0.0; es.modes()];
    let mut total = 0.0;
    for (level, &q) in es.qs().iter().enumerate() {
        column_of(level, &mut col);
        total += q * fractional_norm_sq(&col, es.lambdas(), r)?;
    }
    Ok(total)
}

/// `(Σ_{ℓ≤L} q_ℓ Σ_{j≤J} λ_j^{2r} b_{jℓ}(t, x)²)^{1/2}`.
pub fn hs_norm(op: &dyn DiffusionOperator, es: &Eigensystem, t: f64, x: &[f64], r: f64) -> Result<f64> {
    Ok(hs_norm_sq_with(es, r, |level, col| op.column(t, x, level, col))?.sqrt())
}

/// `‖B(t,u) − B(t,v)‖_{HS} / ‖u − v‖`, the HS norm taken at `r = 0`.
pub fn lipschitz_quotient(
    op: &dyn DiffusionOperator,
    es: &Eigensystem,
    t: f64,
    u: &[f64],
    v: &[f64],
) -> Result<f64> {
    let mut other = vec![0.0; es.modes()];
    let diff = hs_norm_sq_with(es, 0.0, |level, col| {
        op.column(t, u, level, col);
        op.column(t, v, level, &mut other);
        for (c, o) in col.iter_mut().zip(&other) {
            *c -= o;
        }
    })?
    .sqrt();
    let dist = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / dist)
}

/// `‖B(t,u)‖_{HS(D(A^ι))} / (1 + ‖u‖_{D(A^ι)})`.
pub fn growth_quotient(op: &dyn DiffusionOperator, es: &Eigensystem, t: f64, u: &[f64]) -> Result<f64> {
    let iota = op.iota();
    let num = hs_norm(op, es, t, u, iota)?;
    let den = 1.0 + fractional_norm_sq(u, es.lambdas(), iota)?.sqrt();
    Ok(num / den)
}

/// Outcome of sampling the Lipschitz and linear-growth conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Largest observed Lipschitz quotient: a lower bound on the true constant.
    pub lipschitz_lower_bound: f64,
    /// Largest observed growth quotient: a lower bound on the true constant.
    pub growth_lower_bound: f64,
    pub samples: usize,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "empirical lower bounds from {} sampled pairs (not proofs): lipschitz >= {:.6e}, \
             linear growth >= {:.6e}; {} failure(s)",
            self.samples,
            self.lipschitz_lower_bound,
            self.growth_lower_bound,
            self.failures.len()
        )
    }
}

/// Samples `sample_count` random `(t, u, v)` and records the largest
/// Lipschitz and linear-growth quotients. Non-finite quotients are failures.
pub fn check_assumption<R: Rng + ?Sized>(
    op: &dyn DiffusionOperator,
    es: &Eigensystem,
    sample_count: usize,
    rng: &mut R,
) -> Result<ValidationReport> {
    if sample_count < 2 {
        return Err(Error::InvalidParameter("sample_count must be at least 2".into()));
    }
    op.check_dims(es.modes(), es.levels())?;
    let modes = es.modes();
    let mut report = ValidationReport {
        lipschitz_lower_bound: 0.0,
        growth_lower_bound: 0.0,
        samples: sample_count,
        failures: Vec::new(),
    };
    let draw = |rng: &mut R| -> Vec<f64> {
        (0..modes)
            .map(|j| (2.0 * rng.random::<f64>() - 1.0) * 4.0 / (j + 1) as f64)
            .collect()
    };
    for k in 0..sample_count {
        let t: f64 = rng.random();
        let u = draw(rng);
        let v = draw(rng);
        let lip = lipschitz_quotient(op, es, t, &u, &v)?;
        let growth = growth_quotient(op, es, t, &u)?;
        if !lip.is_finite() || !growth.is_finite() {
            report.failures.push(format!(
                "sample {k}: non-finite quotient (lipschitz = {lip}, growth = {growth}) at t = {t}"
            ));
            continue;
        }
        report.lipschitz_lower_bound = report.lipschitz_lower_bound.max(lip);
        report.growth_lower_bound = report.growth_lower_bound.max(growth);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hs_norm_examples() {
        let es = Eigensystem::new(vec![1.0], vec![1.0]).unwrap();
        let op = AdditiveDiagonal::new(vec![1.0], 0.0).unwrap();
        assert_eq!(hs_norm(&op, &es, 0.3, &[0.0], 0.0).unwrap(), 1.0);

        let es = Eigensystem::new(vec![1.0, 4.0], vec![1.0, 0.25]).unwrap();
        let op = AdditiveDiagonal::new(vec![1.0, 2.0], 0.5).unwrap();
        let v = hs_norm(&op, &es, 0.0, &[0.0, 0.0], 0.5).unwrap();
        assert!((v - 5f64.sqrt()).abs() < 1e-15);

        let zero = AdditiveDiagonal::new(vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(hs_norm(&zero, &es, 0.0, &[1.0, 1.0], 0.5).unwrap(), 0.0);
        assert_eq!(hs_norm(&op, &es, 0.0, &[0.0, 0.0], -0.5), Err(Error::NegativeExponent(-0.5)));
    }

    #[test]
    fn iota_range() {
        assert_eq!(AdditiveDiagonal::new(vec![1.0], 0.7), Err(Error::InvalidIota(0.7)));
        assert!(LinearDiagonal::new(vec![0.0], vec![1.0], -0.1).is_err());
        assert!(LinearDiagonal::new(vec![0.0], vec![1.0], 0.5).is_ok());
    }

    #[test]
    fn additive_has_zero_lipschitz_quotient() {
        let es = Eigensystem::new(vec![1.0, 2.0, 3.0], vec![1.0, 0.5]).unwrap();
        let op = AdditiveDiagonal::new(vec![1.0, -2.0], 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let report = check_assumption(&op, &es, 50, &mut rng).unwrap();
        assert!(report.passed());
        assert_eq!(report.lipschitz_lower_bound, 0.0);
        assert!(report.growth_lower_bound > 0.0);
        assert!(report.summary().contains("lower bounds"));
    }

    #[test]
    fn linear_quotient_by_hand() {
        let es = Eigensystem::new(vec![1.0], vec![1.0]).unwrap();
        let op = LinearDiagonal::new(vec![0.0], vec![1.0], 0.0).unwrap();
        for (u, v) in [(0.3, -1.2), (5.0, 4.0), (-2.0, 2.0)] {
            let q = lipschitz_quotient(&op, &es, 0.5, &[u], &[v]).unwrap();
            assert!((q - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_callback_is_reported() {
        let es = Eigensystem::new(vec![1.0, 2.0], vec![1.0]).unwrap();
        let op = CallbackOperator::new(|_, _, _, col: &mut [f64]| col.fill(f64::NAN), 0.0, true)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = check_assumption(&op, &es, 4, &mut rng).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 4);
    }

    #[test]
    fn linear_hs_is_quadratic_polynomial() {
        // 2x2: ‖B(u)‖² = Σ_ℓ q_ℓ λ_ℓ^{2r} (γ_ℓ + ρ_ℓ u_ℓ)², expanded by hand
        let (g, rho, q, lam, r) = ([0.5, -1.0], [2.0, 0.25], [1.0, 0.3], [1.5, 4.0], 0.4);
        let es = Eigensystem::new(lam.to_vec(), q.to_vec()).unwrap();
        let op = LinearDiagonal::new(g.to_vec(), rho.to_vec(), 0.4).unwrap();
        for u in [[0.0, 0.0], [1.0, -2.0], [-0.7, 3.3]] {
            let expanded: f64 = (0..2)
                .map(|l| {
                    let w = q[l] * lam[l].powf(2.0 * r);
                    w * (g[l] * g[l] + 2.0 * g[l] * rho[l] * u[l] + rho[l] * rho[l] * u[l] * u[l])
                })
                .sum();
            let v = hs_norm(&op, &es, 0.0, &u, r).unwrap();
            assert!((v * v - expanded).abs() < 1e-13 * expanded.max(1.0));
        }
    }

    #[test]
    fn truncation_never_increases_hs_norm() {
        let es = Eigensystem::new(vec![1.0, 2.0, 5.0, 7.0], vec![1.0, 0.5, 0.2]).unwrap();
        let op = CallbackOperator::new(
            |t, x: &[f64], l, col: &mut [f64]| {
                for (j, c) in col.iter_mut().enumerate() {
                    *c = (t + (j + l) as f64).sin() + x.first().copied().unwrap_or(0.0);
                }
            },
            0.2,
            true,
        )
        .unwrap();
        let x = [0.4, -0.2, 0.1, 0.0];
        let full = hs_norm(&op, &es, 0.3, &x, 0.2).unwrap();
        for modes in 1..=4 {
            for levels in 1..=3 {
                let small = es.truncate(modes, levels).unwrap();
                let v = hs_norm(&op, &small, 0.3, &x[..modes], 0.2).unwrap();
                assert!(v <= full + 1e-15);
            }
        }
    }
}
