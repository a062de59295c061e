//! Eigensystem of the linear operator and the noise covariance, truncated
//! spectral vectors and the fractional-power norms `‖x‖_{D(A^r)}`.
//!
//! Both `-A` and `Q` are diagonal in one shared orthonormal basis `(h_j)`,
//! each eigenspace one-dimensional. Everything downstream works on Fourier
//! coefficients `⟨x, h_j⟩`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues `λ_1 < … < λ_J` of `-A` and `q_1, …, q_L` of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigensystem {
    lambdas: Vec<f64>,
    qs: Vec<f64>,
}

/// Power-law family `λ_j = c_λ j^α`, `q_ℓ = c_q ℓ^{-β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSpec {
    pub lambda_scale: f64,
    pub lambda_exponent: f64,
    pub q_scale: f64,
    pub q_exponent: f64,
    pub modes: usize,
    pub levels: usize,
}

impl PowerLawSpec {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.lambda_scale > 0.0 && self.lambda_scale.is_finite()) {
            return bad("lambda scale must be positive");
        }
        if !(self.lambda_exponent > 0.0 && self.lambda_exponent.is_finite()) {
            return bad("lambda exponent must be positive");
        }
        if !(self.q_scale >= 0.0 && self.q_scale.is_finite()) {
            return bad("q scale must be non-negative");
        }
        if !(self.q_exponent > 1.0 && self.q_exponent.is_finite()) {
            return bad("q exponent must exceed 1");
        }
        if self.modes == 0 || self.levels == 0 {
            return bad("mode and level counts must be positive");
        }
        Ok(())
    }
}

/// `scale · k^exponent` for `k = 1..=count`.
pub fn power_law(scale: f64, exponent: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| scale * (k as f64).powf(exponent)).collect()
}

impl Eigensystem {
    pub fn new(lambdas: Vec<f64>, qs: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidParameter("at least one mode is required".into()));
        }
        if qs.is_empty() {
            return Err(Error::EmptyLevels);
        }
        let mut prev = 0.0;
        for (index, &lambda) in lambdas.iter().enumerate() {
            if !(lambda.is_finite() && lambda > prev) {
                return Err(Error::NonMonotoneSpectrum { index });
            }
            prev = lambda;
        }
        for (index, &value) in qs.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeCovariance { index, value });
            }
        }
        Ok(Self { lambdas, qs })
    }

    pub fn from_power_law(spec: &PowerLawSpec) -> Result<Self> {
        spec.validate()?;
        Self::new(
            power_law(spec.lambda_scale, spec.lambda_exponent, spec.modes),
            power_law(spec.q_scale, -spec.q_exponent, spec.levels),
        )
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    pub fn modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn levels(&self) -> usize {
        self.qs.len()
    }

    /// Same spectrum with every `q_ℓ` multiplied by `factor`.
    pub fn scale_covariance(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.lambdas.clone(),
            self.qs.iter().map(|q| q * factor).collect(),
        )
    }

    /// Keep the first `modes` eigenvalues and `levels` covariance entries.
    pub fn truncate(&self, modes: usize, levels: usize) -> Result<Self> {
        if modes > self.modes() {
            return Err(Error::TruncationTooLarge { requested: modes, available: self.modes() });
        }
        if levels > self.levels() {
            return Err(Error::TruncationTooLarge { requested: levels, available: self.levels() });
        }
        Self::new(self.lambdas[..modes].to_vec(), self.qs[..levels].to_vec())
    }
}

/// Per-mode weight `λ^{2r}` of the `D(A^r)` norm.
#[inline]
pub fn power_weight(lambda: f64, r: f64) -> f64 {
    lambda.powf(2.0 * r)
}

/// Fourier coefficients `⟨x, h_j⟩`, `j = 1..J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralVector {
    coeffs: Vec<f64>,
}

impl SpectralVector {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(pos) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!("coefficient {pos} is not finite")));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(len: usize) -> Self {
        Self { coeffs: vec![0.0; len] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Spectral projection onto the first `modes` eigenfunctions.
    pub fn project(&self, modes: usize) -> Result<Self> {
        if modes > self.coeffs.len() {
            return Err(Error::TruncationTooLarge { requested: modes, available: self.coeffs.len() });
        }
        Ok(Self { coeffs: self.coeffs[..modes].to_vec() })
    }

    /// `(Σ_j λ_j^{2r} x_j²)^{1/2}`, summed in ascending `j`.
    pub fn fractional_norm(&self, es: &Eigensystem, r: f64) -> Result<f64> {
        Ok(fractional_norm_sq(&self.coeffs, es.lambdas(), r)?.sqrt())
    }
}

/// Squared `D(A^r)` norm of a raw coefficient slice. Extra coefficients
/// beyond `lambdas.len()` are a dimension error.
pub fn fractional_norm_sq(coeffs: &[f64], lambdas: &[f64], r: f64) -> Result<f64> {
    if r < 0.0 || r.is_nan() {
        return Err(Error::NegativeExponent(r));
    }
    if coeffs.len() > lambdas.len() {
        return Err(Error::DimensionMismatch(format!(
            "vector has {} coefficients, eigensystem has {} modes",
            coeffs.len(),
            lambdas.len()
        )));
    }
    Ok(coeffs
        .iter()
        .zip(lambdas)
        .map(|(c, &l)| power_weight(l, r) * c * c)
        .sum())
}
