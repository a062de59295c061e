//! Both sides of the discrete maximal-regularity estimate.
//!
//! With `conv` the noise part of the scheme and `c = c_disc` (1 for uniform
//! level grids):
//!
//! ```text
//! lhs_conv = Σ_η Σ_j λ_j^{2ι+1} E|conv_j(τ_η)|² Δτ_η
//! rhs      = 2c Σ_ℓ Σ_i q_ℓ Σ_j λ_j^{2ι} E[b_{jℓ}(t_{i−1,ℓ}, X(t_{i−1,ℓ}))²] Δt_{i,ℓ}
//! lhs      = Σ_η Σ_j λ_j^{2ι+1} E|X_j(τ_η)|² Δτ_η  ≤  2c ‖ξ‖²_{D(A^ι)} + rhs
//! ```
//!
//! For state-independent `B` every expectation is available in closed form
//! through the Itô isometry; otherwise they are estimated from paths.

use ndarray::Array2;
use serde::Serialize;

use crate::diffusion::{Coupling, DiffusionOperator};
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::solver::{run_recursive, Problem, Trajectory};
use crate::spectral::{fractional_norm_sq, power_weight, Eigensystem};
use crate::timegrid::MergedGrid;

/// Gate width, in standard errors, for every statistical comparison.
pub const SIGMA_GATE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    Exact,
    Estimated,
}

/// Second moments `E|X_j(τ_η)|²`, rows `η`, columns `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub kind: MomentKind,
    pub values: Array2<f64>,
    /// Standard error per cell; all zero for exact tables.
    pub standard_errors: Array2<f64>,
}

impl MomentTable {
    pub fn exact(values: Array2<f64>) -> Self {
        let standard_errors = Array2::zeros(values.raw_dim());
        Self { kind: MomentKind::Exact, values, standard_errors }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kind: self.kind,
            values: &self.values * factor,
            standard_errors: &self.standard_errors * factor.abs(),
        }
    }
}

/// Per-`η` terms `Σ_j λ_j^{2ι+1} m(η, j) Δτ_η`; entry 0 is zero.
pub fn lhs_contributions(m: &MomentTable, es: &Eigensystem, grid: &MergedGrid, iota: f64) -> Vec<f64> {
    let weights: Vec<f64> = es.lambdas().iter().map(|&l| power_weight(l, iota + 0.5)).collect();
    (0..=grid.steps())
        .map(|eta| {
            if eta == 0 {
                return 0.0;
            }
            let row: f64 = m.values.row(eta).iter().zip(&weights).map(|(v, w)| w * v).sum();
            row * grid.dtau(eta)
        })
        .collect()
}

/// `Σ_{η≥1} Σ_j λ_j^{2ι+1} m(η, j) Δτ_η`.
pub fn maxreg_lhs(m: &MomentTable, es: &Eigensystem, grid: &MergedGrid, iota: f64) -> Result<f64> {
    check_iota(iota)?;
    if m.values.ncols() != es.modes() || m.values.nrows() != grid.steps() + 1 {
        return Err(Error::DimensionMismatch("moment table does not match problem".into()));
    }
    Ok(lhs_contributions(m, es, grid, iota).iter().sum())
}

fn check_iota(iota: f64) -> Result<()> {
    crate::diffusion::validate_iota(iota).map(|_| ())
}

/// `Σ_ℓ Σ_i q_ℓ Σ_j λ_j^{2ι} b_{jℓ}(t_{i−1,ℓ}, Y(t_{i−1,ℓ}))² Δt_{i,ℓ}` with
/// states read from `state` (`None` means the zero state).
fn rhs_sum(problem: &Problem, state: Option<&Trajectory>, iota: f64) -> f64 {
    let es = &problem.es;
    let modes = es.modes();
    let zero = vec![0.0; modes];
    let mut col = vec![0.0; modes];
    let weights: Vec<f64> = es.lambdas().iter().map(|&l| power_weight(l, iota)).collect();
    let mut total = 0.0;
    for (level, &q) in es.qs().iter().enumerate() {
        let mut level_total = 0.0;
        for i in 1..=problem.grids.steps(level) {
            let start = problem.grid.node_index(level, i - 1);
            let t = problem.grid.tau(start);
            let row;
            let x: &[f64] = match state {
                Some(traj) => {
                    row = traj.row(start).to_vec();
                    &row
                }
                None => &zero,
            };
            let hs: f64 = match problem.op.coupling() {
                Coupling::Diagonal if level < modes => {
                    let b = problem.op.diagonal(t, x, level);
                    weights[level] * b * b
                }
                Coupling::Diagonal => 0.0,
                Coupling::Dense => {
                    problem.op.column(t, x, level, &mut col);
                    col.iter().zip(&weights).map(|(b, w)| w * b * b).sum()
                }
            };
            level_total += hs * problem.grids.step_len(level, i);
        }
        total += q * level_total;
    }
    total
}

/// Pathwise right-hand side `2 c_disc Σ_ℓ Σ_i ‖B(t_{i−1,ℓ}, X(t_{i−1,ℓ})) √q_ℓ h_ℓ‖²_{D(A^ι)} Δt_{i,ℓ}`
/// along `state_source`. Its expectation over paths is the bound.
pub fn maxreg_rhs(problem: &Problem, state_source: &Trajectory, iota: f64) -> Result<f64> {
    check_iota(iota)?;
    Ok(2.0 * problem.grids.quasi_uniformity() * rhs_sum(problem, Some(state_source), iota))
}

/// Right-hand side for state-independent `B`, where the expectation is exact.
pub fn maxreg_rhs_exact(problem: &Problem, iota: f64) -> Result<f64> {
    check_iota(iota)?;
    if problem.op.state_dependent() {
        return Err(Error::StateDependentDiffusion);
    }
    Ok(2.0 * problem.grids.quasi_uniformity() * rhs_sum(problem, None, iota))
}

/// `2 c_disc ‖𝒫_J ξ‖²_{D(A^ι)}`.
pub fn init_term(problem: &Problem, iota: f64) -> Result<f64> {
    check_iota(iota)?;
    Ok(2.0
        * problem.grids.quasi_uniformity()
        * fractional_norm_sq(problem.xi.coeffs(), problem.es.lambdas(), iota)?)
}

/// Itô-isometry moments of the full scheme and of its noise part.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub full: MomentTable,
    pub convolution: MomentTable,
}

/// `E|X_j(τ_η)|² = R_j(τ_0,τ_η)² ξ_j² + Σ_ℓ q_ℓ Σ_{t_{i,ℓ} ≤ τ_η} R_j(t_{i−1,ℓ},τ_η)² b_{jℓ}(t_{i−1,ℓ})² Δt_{i,ℓ}`.
pub fn exact_second_moments(problem: &Problem) -> Result<ExactMoments> {
    let op: &dyn DiffusionOperator = problem.op.as_ref();
    if op.state_dependent() {
        return Err(Error::StateDependentDiffusion);
    }
    let (es, grid, table) = (&problem.es, &problem.grid, &problem.table);
    let modes = es.modes();
    let n = grid.steps();
    let zero = vec![0.0; modes];
    let mut col = vec![0.0; modes];
    let mut conv = Array2::zeros((n + 1, modes));
    for (level, &q) in es.qs().iter().enumerate() {
        for i in 1..=problem.grids.steps(level) {
            let start = grid.node_index(level, i - 1);
            let first = grid.node_index(level, i);
            op.column(grid.tau(start), &zero, level, &mut col);
            let dt = problem.grids.step_len(level, i);
            for (j, b) in col.iter().enumerate() {
                if *b == 0.0 {
                    continue;
                }
                let w = q * b * b * dt;
                for eta in first..=n {
                    let r = table.factor(j, start, eta);
                    conv[[eta, j]] += r * r * w;
                }
            }
        }
    }
    let mut full = conv.clone();
    for eta in 0..=n {
        for j in 0..modes {
            let d = table.factor(j, 0, eta) * problem.xi.coeffs()[j];
            full[[eta, j]] += d * d;
        }
    }
    Ok(ExactMoments { full: MomentTable::exact(full), convolution: MomentTable::exact(conv) })
}

/// Mode-wise second moments of the continuous mild solution for diagonal,
/// state- and time-independent `B`:
/// `e^{−2λ_j s} ξ_j² + q_j b_{jj}² (1 − e^{−2λ_j s}) / (2λ_j)`. Rows follow `times`.
pub fn continuous_second_moments(
    es: &Eigensystem,
    op: &dyn DiffusionOperator,
    xi: &[f64],
    times: &[f64],
) -> Result<MomentTable> {
    if op.state_dependent() || op.coupling() != Coupling::Diagonal {
        return Err(Error::StateDependentDiffusion);
    }
    if xi.len() < es.modes() {
        return Err(Error::DimensionMismatch("initial value shorter than mode count".into()));
    }
    let modes = es.modes();
    let zero = vec![0.0; modes];
    let noise: Vec<f64> = (0..modes)
        .map(|j| {
            if j < es.levels() {
                let b = op.diagonal(0.0, &zero, j);
                es.qs()[j] * b * b
            } else {
                0.0
            }
        })
        .collect();
    let mut values = Array2::zeros((times.len(), modes));
    for (row, &s) in times.iter().enumerate() {
        for (j, &lambda) in es.lambdas().iter().enumerate() {
            let decay = (-2.0 * lambda * s).exp();
            let stationary_part = -(-2.0 * lambda * s).exp_m1() / (2.0 * lambda);
            values[[row, j]] = decay * xi[j] * xi[j] + noise[j] * stationary_part;
        }
    }
    Ok(MomentTable::exact(values))
}

/// Initial-value weight per mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitMargin {
    /// One-based.
    pub mode: usize,
    pub lambda: f64,
    /// `Σ_{η≥1} R_j(τ_0, τ_η)² Δτ_η`.
    pub weight: f64,
    /// `2 / λ_j`.
    pub bound: f64,
    pub margin: f64,
    /// `λ_j^{2ι+1} ξ_j² · weight`.
    pub init_lhs: f64,
    /// `2 λ_j^{2ι} ξ_j²`.
    pub init_bound: f64,
}

/// Checks `Σ_η R_j(τ_0,τ_η)² Δτ_η ≤ 2/λ_j` for every mode.
pub fn init_weight_check(problem: &Problem, iota: f64) -> Result<Vec<InitMargin>> {
    check_iota(iota)?;
    let (es, grid, table) = (&problem.es, &problem.grid, &problem.table);
    Ok(es
        .lambdas()
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let weight = crate::resolvent::weight_sum_between(table, grid, j, 0, 1);
            let bound = 2.0 / lambda;
            let x2 = problem.xi.coeffs()[j].powi(2);
            InitMargin {
                mode: j + 1,
                lambda,
                weight,
                bound,
                margin: bound - weight,
                init_lhs: power_weight(lambda, iota + 0.5) * x2 * weight,
                init_bound: 2.0 * power_weight(lambda, iota) * x2,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    Exact,
    MonteCarlo,
}

/// Both inequalities with their margins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub mode: ReportMode,
    pub iota: f64,
    pub c_disc: f64,
    pub paths: usize,
    pub failed_paths: usize,
    /// Full-scheme left side.
    pub lhs: f64,
    /// Noise-part left side.
    pub lhs_convolution: f64,
    /// `2 c_disc E[Σ ‖B √q_ℓ h_ℓ‖²_{D(A^ι)} Δt]`.
    pub rhs: f64,
    /// `2 c_disc ‖𝒫_J ξ‖²_{D(A^ι)}`.
    pub init_term: f64,
    /// `init_term + rhs`.
    pub bound: f64,
    pub se_lhs: f64,
    pub se_lhs_convolution: f64,
    pub se_rhs: f64,
    /// Standard error of the per-path difference `lhs_conv − rhs`.
    pub se_convolution_gap: f64,
    /// Standard error of the per-path difference `lhs − bound`.
    pub se_full_gap: f64,
    pub convolution_margin: f64,
    pub full_margin: f64,
    pub convolution_holds: bool,
    pub full_holds: bool,
    pub verdict: String,
}

impl RegularityReport {
    pub fn holds(&self) -> bool {
        self.convolution_holds && self.full_holds
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        mode: ReportMode,
        iota: f64,
        c_disc: f64,
        paths: usize,
        failed_paths: usize,
        lhs: Estimate,
        lhs_convolution: Estimate,
        rhs: Estimate,
        init_term: f64,
        convolution_gap: Estimate,
        full_gap: Estimate,
    ) -> Self {
        let bound = init_term + rhs.mean;
        // one-sided gate: lhs ≤ bound (1 + k · se_gap / bound)
        let convolution_holds =
            lhs_convolution.mean <= rhs.mean + SIGMA_GATE * convolution_gap.se;
        let full_holds = lhs.mean <= bound + SIGMA_GATE * full_gap.se;
        let kind = match mode {
            ReportMode::Exact => "exact",
            ReportMode::MonteCarlo => "statistical",
        };
        let verdict = if convolution_holds && full_holds {
            format!("holds ({kind})")
        } else {
            format!("violated ({kind})")
        };
        Self {
            mode,
            iota,
            c_disc,
            paths,
            failed_paths,
            lhs: lhs.mean,
            lhs_convolution: lhs_convolution.mean,
            rhs: rhs.mean,
            init_term,
            bound,
            se_lhs: lhs.se,
            se_lhs_convolution: lhs_convolution.se,
            se_rhs: rhs.se,
            se_convolution_gap: convolution_gap.se,
            se_full_gap: full_gap.se,
            convolution_margin: rhs.mean - lhs_convolution.mean,
            full_margin: bound - lhs.mean,
            convolution_holds,
            full_holds,
            verdict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Estimate {
    mean: f64,
    se: f64,
}

impl Estimate {
    fn exact(mean: f64) -> Self {
        Self { mean, se: 0.0 }
    }
}

/// Exact-mode report for state-independent `B`.
pub fn exact_regularity_report(problem: &Problem) -> Result<(RegularityReport, ExactMoments)> {
    let iota = problem.iota();
    let moments = exact_second_moments(problem)?;
    let lhs = maxreg_lhs(&moments.full, &problem.es, &problem.grid, iota)?;
    let lhs_conv = maxreg_lhs(&moments.convolution, &problem.es, &problem.grid, iota)?;
    let rhs = maxreg_rhs_exact(problem, iota)?;
    let init = init_term(problem, iota)?;
    let report = RegularityReport::assemble(
        ReportMode::Exact,
        iota,
        problem.grids.quasi_uniformity(),
        0,
        0,
        Estimate::exact(lhs),
        Estimate::exact(lhs_conv),
        Estimate::exact(rhs),
        init,
        Estimate::exact(lhs_conv - rhs),
        Estimate::exact(lhs - init - rhs),
    );
    Ok((report, moments))
}

/// Welford mean/variance, fed in a fixed order.
#[derive(Debug, Clone, Default)]
struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Standard error of the mean.
    fn se(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }

    fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean, se: self.se() }
    }
}

/// Per-`η` left-side contributions with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaContribution {
    pub eta: usize,
    pub tau: f64,
    pub dtau: f64,
    pub lhs: f64,
    pub se_lhs: f64,
    pub lhs_convolution: f64,
    pub se_lhs_convolution: f64,
}

/// Everything a Monte Carlo run produces.
#[derive(Debug, Clone)]
pub struct McOutcome {
    pub report: RegularityReport,
    pub moments: MomentTable,
    pub convolution_moments: MomentTable,
    pub contributions: Vec<EtaContribution>,
    /// `(path, error)` for every path that did not finish.
    pub failures: Vec<(u64, Error)>,
    /// Exact report and moments, when `B` is state-independent.
    pub exact: Option<(RegularityReport, ExactMoments)>,
}

struct PathStats {
    x2: Vec<f64>,
    c2: Vec<f64>,
    lhs_eta: Vec<f64>,
    conv_eta: Vec<f64>,
    rhs: f64,
}

fn path_stats(problem: &Problem, det: &Array2<f64>, traj: &Trajectory, iota: f64) -> PathStats {
    let modes = problem.es.modes();
    let n = problem.grid.steps();
    let weights: Vec<f64> =
        problem.es.lambdas().iter().map(|&l| power_weight(l, iota + 0.5)).collect();
    let mut x2 = vec![0.0; (n + 1) * modes];
    let mut c2 = vec![0.0; (n + 1) * modes];
    let mut lhs_eta = vec![0.0; n + 1];
    let mut conv_eta = vec![0.0; n + 1];
    for eta in 0..=n {
        let (mut full_row, mut conv_row) = (0.0, 0.0);
        for j in 0..modes {
            let x = traj.get(eta, j);
            let c = x - det[[eta, j]];
            x2[eta * modes + j] = x * x;
            c2[eta * modes + j] = c * c;
            full_row += weights[j] * x * x;
            conv_row += weights[j] * c * c;
        }
        if eta > 0 {
            lhs_eta[eta] = full_row * problem.grid.dtau(eta);
            conv_eta[eta] = conv_row * problem.grid.dtau(eta);
        }
    }
    let rhs = 2.0 * problem.grids.quasi_uniformity() * rhs_sum(problem, Some(traj), iota);
    PathStats { x2, c2, lhs_eta, conv_eta, rhs }
}

/// Runs the recursive scheme on every path of `ensemble`, estimates all
/// moments and both sides of the estimate, and gates them statistically.
/// Failed paths are counted and excluded.
pub fn mc_regularity_experiment(problem: &Problem, ensemble: &PathEnsemble) -> Result<McOutcome> {
    mc_regularity_experiment_with(problem, ensemble, |stream| problem.sample_increments(stream))
}

/// As [`mc_regularity_experiment`], with the increments of each path drawn by
/// `sample`; used to couple the noise of several problems.
pub fn mc_regularity_experiment_with<F>(
    problem: &Problem,
    ensemble: &PathEnsemble,
    sample: F,
) -> Result<McOutcome>
where
    F: Fn(&crate::noise::NoiseStream) -> Result<crate::noise::LevelIncrements> + Sync + Send,
{
    if ensemble.paths < 2 {
        return Err(Error::InvalidParameter("at least 2 paths are required".into()));
    }
    let iota = problem.iota();
    let modes = problem.es.modes();
    let n = problem.grid.steps();
    // same products as the recursion, so noise-free paths have an exactly zero noise part
    let mut det = Array2::zeros((n + 1, modes));
    for j in 0..modes {
        det[[0, j]] = problem.xi.coeffs()[j];
        for eta in 1..=n {
            det[[eta, j]] = problem.table.step_factor(j, eta) * det[[eta - 1, j]];
        }
    }
    let init = init_term(problem, iota)?;

    let cells = (n + 1) * modes;
    let mut x2 = vec![Welford::default(); cells];
    let mut c2 = vec![Welford::default(); cells];
    let mut lhs_eta = vec![Welford::default(); n + 1];
    let mut conv_eta = vec![Welford::default(); n + 1];
    let (mut lhs, mut lhs_conv, mut rhs) =
        (Welford::default(), Welford::default(), Welford::default());
    let (mut conv_gap, mut full_gap) = (Welford::default(), Welford::default());
    let mut failures = Vec::new();

    ensemble.for_each(
        |path| -> Result<PathStats> {
            let inc = sample(&ensemble.stream(path))?;
            let traj = run_recursive(&problem.input(&inc))?;
            Ok(path_stats(problem, &det, &traj, iota))
        },
        |path, stats| match stats {
            Err(e) => failures.push((path, e)),
            Ok(s) => {
                for (w, v) in x2.iter_mut().zip(&s.x2) {
                    w.push(*v);
                }
                for (w, v) in c2.iter_mut().zip(&s.c2) {
                    w.push(*v);
                }
                for (w, v) in lhs_eta.iter_mut().zip(&s.lhs_eta) {
                    w.push(*v);
                }
                for (w, v) in conv_eta.iter_mut().zip(&s.conv_eta) {
                    w.push(*v);
                }
                let path_lhs: f64 = s.lhs_eta.iter().sum();
                let path_conv: f64 = s.conv_eta.iter().sum();
                lhs.push(path_lhs);
                lhs_conv.push(path_conv);
                rhs.push(s.rhs);
                conv_gap.push(path_conv - s.rhs);
                full_gap.push(path_lhs - init - s.rhs);
            }
        },
    )?;

    let ok = lhs.count;
    if ok == 0 {
        return Err(Error::AllPathsFailed(ensemble.paths as usize));
    }
    let table = |ws: &[Welford]| {
        let values = Array2::from_shape_fn((n + 1, modes), |(e, j)| ws[e * modes + j].mean);
        let standard_errors =
            Array2::from_shape_fn((n + 1, modes), |(e, j)| ws[e * modes + j].se());
        MomentTable { kind: MomentKind::Estimated, values, standard_errors }
    };
    let contributions = (0..=n)
        .map(|eta| EtaContribution {
            eta,
            tau: problem.grid.tau(eta),
            dtau: problem.grid.dtau(eta),
            lhs: lhs_eta[eta].mean,
            se_lhs: lhs_eta[eta].se(),
            lhs_convolution: conv_eta[eta].mean,
            se_lhs_convolution: conv_eta[eta].se(),
        })
        .collect();
    let report = RegularityReport::assemble(
        ReportMode::MonteCarlo,
        iota,
        problem.grids.quasi_uniformity(),
        ok,
        failures.len(),
        lhs.estimate(),
        lhs_conv.estimate(),
        rhs.estimate(),
        init,
        conv_gap.estimate(),
        full_gap.estimate(),
    );
    let exact = if problem.op.state_dependent() {
        None
    } else {
        Some(exact_regularity_report(problem)?)
    };
    Ok(McOutcome {
        report,
        moments: table(&x2),
        convolution_moments: table(&c2),
        contributions,
        failures,
        exact,
    })
}

/// Cell-wise comparison of an estimated table against an exact one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentGate {
    pub cells: usize,
    pub failures: usize,
    pub max_abs_z: f64,
}

/// Counts cells with `|estimate − exact| > k · se`. Zero-variance cells must
/// agree to `1e-12` relative.
pub fn moment_gate(estimated: &MomentTable, exact: &MomentTable, k: f64) -> Result<MomentGate> {
    if estimated.values.dim() != exact.values.dim() {
        return Err(Error::DimensionMismatch("moment tables differ in shape".into()));
    }
    let mut gate = MomentGate { cells: 0, failures: 0, max_abs_z: 0.0 };
    for ((est, se), ex) in estimated
        .values
        .iter()
        .zip(estimated.standard_errors.iter())
        .zip(exact.values.iter())
    {
        gate.cells += 1;
        let diff = (est - ex).abs();
        if *se > 0.0 {
            let z = diff / se;
            gate.max_abs_z = gate.max_abs_z.max(z);
            if z > k {
                gate.failures += 1;
            }
        } else if diff > 1e-12 * ex.abs().max(est.abs()) {
            gate.failures += 1;
        }
    }
    Ok(gate)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::diffusion::{AdditiveDiagonal, LinearDiagonal};
    use crate::noise::LevelIncrements;
    use crate::solver::run_recursive;
    use crate::spectral::SpectralVector;
    use crate::timegrid::LevelGrids;

    fn problem(
        lambdas: Vec<f64>,
        qs: Vec<f64>,
        n: &[usize],
        op: Arc<dyn DiffusionOperator>,
        xi: Vec<f64>,
    ) -> Problem {
        Problem::new(
            Eigensystem::new(lambdas, qs).unwrap(),
            LevelGrids::uniform(n).unwrap(),
            op,
            SpectralVector::new(xi).unwrap(),
        )
        .unwrap()
    }

    fn single(sigma: f64, xi: f64) -> Problem {
        problem(
            vec![1.0],
            vec![1.0],
            &[1],
            Arc::new(AdditiveDiagonal::new(vec![sigma], 0.0).unwrap()),
            vec![xi],
        )
    }

    #[test]
    fn lhs_examples() {
        let p = single(1.0, 0.0);
        let zero = MomentTable::exact(Array2::zeros((2, 1)));
        assert_eq!(maxreg_lhs(&zero, &p.es, &p.grid, 0.0).unwrap(), 0.0);
        let quarter = MomentTable::exact(Array2::from_elem((2, 1), 0.25));
        assert_eq!(maxreg_lhs(&quarter, &p.es, &p.grid, 0.0).unwrap(), 0.25);
        assert_eq!(maxreg_lhs(&quarter.scaled(2.0), &p.es, &p.grid, 0.0).unwrap(), 0.5);
        assert_eq!(maxreg_lhs(&quarter, &p.es, &p.grid, 0.6), Err(Error::InvalidIota(0.6)));
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(maxreg_rhs_exact(&single(1.0, 0.0), 0.0).unwrap(), 2.0);
        assert_eq!(maxreg_rhs_exact(&single(0.0, 0.0), 0.0).unwrap(), 0.0);
        let lin = problem(
            vec![1.0],
            vec![1.0],
            &[1],
            Arc::new(LinearDiagonal::new(vec![0.0], vec![1.0], 0.0).unwrap()),
            vec![0.0],
        );
        assert_eq!(maxreg_rhs_exact(&lin, 0.0), Err(Error::StateDependentDiffusion));
    }

    #[test]
    fn exact_moments_single_step() {
        let m = exact_second_moments(&single(1.0, 0.0)).unwrap();
        assert_eq!(m.full.values[[1, 0]], 0.25);
        assert_eq!(m.full.values[[0, 0]], 0.0);
    }

    #[test]
    fn exact_moments_without_noise_and_linearity_in_q() {
        let op = Arc::new(AdditiveDiagonal::new(vec![0.0, 0.0], 0.0).unwrap());
        let p = problem(vec![1.0, 3.0], vec![1.0, 0.5], &[2, 3], op, vec![1.0, -2.0]);
        let m = exact_second_moments(&p).unwrap();
        for eta in 0..=p.grid.steps() {
            for j in 0..2 {
                let d = p.table.factor(j, 0, eta) * p.xi.coeffs()[j];
                assert_eq!(m.full.values[[eta, j]], d * d);
            }
        }

        let op: Arc<dyn DiffusionOperator> =
            Arc::new(AdditiveDiagonal::new(vec![1.0, 0.7], 0.0).unwrap());
        let p = problem(vec![1.0, 3.0], vec![1.0, 0.5], &[2, 3], op.clone(), vec![0.5, 1.0]);
        let doubled = Problem::new(
            p.es.scale_covariance(2.0).unwrap(),
            p.grids.clone(),
            op,
            p.xi.clone(),
        )
        .unwrap();
        let a = exact_second_moments(&p).unwrap().convolution;
        let b = exact_second_moments(&doubled).unwrap().convolution;
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((2.0 * x - y).abs() <= 1e-15 * y.abs());
        }
    }

    /// For additive noise the scheme is affine in the increments; unit
    /// impulses through the recursive solver recover the coefficients, and
    /// `E X² = det² + Σ coeff² Δt`.
    #[test]
    fn exact_moments_match_impulse_responses() {
        let op: Arc<dyn DiffusionOperator> =
            Arc::new(AdditiveDiagonal::new(vec![1.3, -0.4, 2.0], 0.25).unwrap());
        let p = problem(vec![0.7, 2.0, 9.0], vec![1.0, 0.5, 0.1], &[2, 3, 5], op, vec![1.0, 0.5, -0.3]);
        let levels = p.grids.levels();
        let zero_values: Vec<Vec<f64>> = (0..levels).map(|l| vec![0.0; p.grids.steps(l)]).collect();
        let zero = LevelIncrements::from_level_values(&p.grids, zero_values.clone()).unwrap();
        let det = run_recursive(&p.input(&zero)).unwrap();
        let mut oracle = det.values().mapv(|v| v * v);
        for level in 0..levels {
            for i in 1..=p.grids.steps(level) {
                let mut inc = zero.clone();
                inc.set_level(level, i, 1.0);
                let resp = run_recursive(&p.input(&inc)).unwrap();
                let coeff = resp.values() - det.values();
                oracle = oracle + coeff.mapv(|c| c * c * p.grids.step_len(level, i));
            }
        }
        let exact = exact_second_moments(&p).unwrap().full;
        for (a, b) in exact.values.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn continuous_moments() {
        let es = Eigensystem::new(vec![1.0], vec![1.0]).unwrap();
        let op = AdditiveDiagonal::new(vec![1.0], 0.0).unwrap();
        let m = continuous_second_moments(&es, &op, &[0.0], &[0.0, 50.0]).unwrap();
        assert_eq!(m.values[[0, 0]], 0.0);
        assert!((m.values[[1, 0]] - 0.5).abs() < 1e-15);
        let m = continuous_second_moments(&es, &op, &[3.0], &[0.0]).unwrap();
        assert_eq!(m.values[[0, 0]], 9.0);
        let silent = AdditiveDiagonal::new(vec![0.0], 0.0).unwrap();
        let m = continuous_second_moments(&es, &silent, &[2.0], &[0.3]).unwrap();
        assert!((m.values[[0, 0]] - 4.0 * (-0.6f64).exp()).abs() < 1e-15);
        let lin = LinearDiagonal::new(vec![0.0], vec![1.0], 0.0).unwrap();
        assert!(continuous_second_moments(&es, &lin, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn init_weights() {
        let m = init_weight_check(&single(1.0, 1.0), 0.0).unwrap();
        assert_eq!(m[0].weight, 0.25);
        assert_eq!(m[0].bound, 2.0);
        assert!(m[0].margin > 0.0);
    }

    /// Literal transcription of both sides, kept apart from the production
    /// code so the exponents `2ι + 1` (left) and `2ι` (right) are audited.
    #[test]
    fn exponent_audit() {
        let op: Arc<dyn DiffusionOperator> =
            Arc::new(AdditiveDiagonal::new(vec![0.9, 1.7], 0.5).unwrap());
        let p = problem(vec![2.0, 5.0], vec![0.8, 0.3], &[3, 4], op, vec![0.2, -0.1]);
        let iota = 0.5;
        let moments = exact_second_moments(&p).unwrap();
        let mut lhs = 0.0;
        for eta in 1..=p.grid.steps() {
            for j in 0..2 {
                lhs += p.es.lambdas()[j].powf(2.0 * iota + 1.0)
                    * moments.convolution.values[[eta, j]]
                    * (p.grid.tau(eta) - p.grid.tau(eta - 1));
            }
        }
        let sigma = [0.9, 1.7];
        let mut rhs = 0.0;
        for l in 0..2 {
            for i in 1..=p.grids.steps(l) {
                let dt = p.grids.node(l, i) - p.grids.node(l, i - 1);
                rhs += p.es.qs()[l] * p.es.lambdas()[l].powf(2.0 * iota) * sigma[l] * sigma[l] * dt;
            }
        }
        rhs *= 2.0;
        let got_lhs = maxreg_lhs(&moments.convolution, &p.es, &p.grid, iota).unwrap();
        let got_rhs = maxreg_rhs_exact(&p, iota).unwrap();
        assert!((got_lhs - lhs).abs() < 1e-13 * lhs);
        assert!((got_rhs - rhs).abs() < 1e-13 * rhs);
    }

    #[test]
    fn zero_noise_report() {
        let op = Arc::new(AdditiveDiagonal::new(vec![0.0, 0.0], 0.25).unwrap());
        let p = problem(vec![1.0, 4.0], vec![1.0, 1.0], &[2, 3], op, vec![1.0, 1.0]);
        let out = mc_regularity_experiment(&p, &PathEnsemble::new(3, 2)).unwrap();
        let r = &out.report;
        assert_eq!(r.rhs, 0.0);
        assert_eq!(r.lhs_convolution, 0.0);
        assert!(r.holds());
        let init_lhs: f64 = init_weight_check(&p, 0.25).unwrap().iter().map(|m| m.init_lhs).sum();
        assert!((r.lhs - init_lhs).abs() < 1e-14 * init_lhs);
        assert_eq!(r.se_lhs, 0.0);
    }

    #[test]
    fn minimal_run_has_finite_errors() {
        let op = Arc::new(LinearDiagonal::new(vec![1.0], vec![0.5], 0.0).unwrap());
        let p = problem(vec![1.0], vec![1.0], &[3], op, vec![0.5]);
        let out = mc_regularity_experiment(&p, &PathEnsemble::new(1, 2)).unwrap();
        assert_eq!(out.report.paths, 2);
        assert!(out.report.se_lhs.is_finite() && out.report.se_rhs.is_finite());
        assert!(out.exact.is_none());
        assert!(matches!(
            mc_regularity_experiment(&p, &PathEnsemble::new(1, 1)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn all_failed_paths() {
        let op = Arc::new(LinearDiagonal::new(vec![0.0], vec![1e300], 0.0).unwrap());
        let p = problem(vec![1e-3], vec![1.0], &[4], op, vec![1e300]);
        assert_eq!(
            mc_regularity_experiment(&p, &PathEnsemble::new(1, 3)).err(),
            Some(Error::AllPathsFailed(3))
        );
    }
}
