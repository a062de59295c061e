//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes the page's parameters as a JSON string and answers with
//! JSON, so the page needs nothing beyond `JSON.parse`. The same functions
//! without the `wasm_bindgen` wrapper are public for native tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use spectral_em::analysis::{continuous_second_moments, exact_second_moments, MomentTable};
use spectral_em::diffusion::DiffusionOperator;
use spectral_em::noise::NoiseStream;
use spectral_em::resolvent::weight_table;
use spectral_em::solver::run_recursive;
use spectral_em::spectral::power_law;
use spectral_em::{AdditiveDiagonal, Eigensystem, LevelGrids, LinearDiagonal, Problem, SpectralVector};
use wasm_bindgen::prelude::*;

/// `λ_j = lambda_scale · j^lambda_exponent`, `q_ℓ = ℓ^(−q_exponent)`,
/// `ξ_j = xi_scale / j`, `b_ℓℓ = sigma + rho · x_ℓ`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub modes: usize,
    pub lambda_scale: f64,
    pub lambda_exponent: f64,
    pub q_exponent: f64,
    pub n_levels: Vec<usize>,
    pub sigma: f64,
    pub rho: f64,
    pub iota: f64,
    pub xi_scale: f64,
    pub seed: u64,
    pub path: u64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            modes: 4,
            lambda_scale: 1.0,
            lambda_exponent: 2.0,
            q_exponent: 2.0,
            n_levels: vec![2, 4, 8],
            sigma: 1.0,
            rho: 0.0,
            iota: 0.0,
            xi_scale: 1.0,
            seed: 1,
            path: 0,
        }
    }
}

impl DemoParams {
    fn problem(&self) -> Result<Problem, String> {
        if self.modes == 0 || self.modes > 64 {
            return Err("modes must lie in 1..=64".into());
        }
        if self.n_levels.is_empty() || self.n_levels.len() > 16 || self.n_levels.iter().any(|&n| n == 0 || n > 4096) {
            return Err("give 1 to 16 levels with 1..=4096 steps each".into());
        }
        let levels = self.n_levels.len();
        let es = Eigensystem::new(
            power_law(self.lambda_scale, self.lambda_exponent, self.modes),
            power_law(1.0, -self.q_exponent, levels),
        )
        .map_err(|e| e.to_string())?;
        let grids = LevelGrids::uniform(&self.n_levels).map_err(|e| e.to_string())?;
        let op: Arc<dyn DiffusionOperator> = if self.rho == 0.0 {
            Arc::new(AdditiveDiagonal::new(vec![self.sigma; levels], self.iota).map_err(|e| e.to_string())?)
        } else {
            Arc::new(
                LinearDiagonal::new(vec![self.sigma; levels], vec![self.rho; levels], self.iota)
                    .map_err(|e| e.to_string())?,
            )
        };
        let xi = SpectralVector::new(power_law(self.xi_scale, -1.0, self.modes)).map_err(|e| e.to_string())?;
        Problem::new(es, grids, op, xi).map_err(|e| e.to_string())
    }
}

fn parse(params: &str) -> Result<DemoParams, String> {
    serde_json::from_str(params).map_err(|e| format!("bad parameters: {e}"))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ModeWeights {
    lambda: f64,
    bound: f64,
    /// Largest weight sum over all levels and steps.
    max_weight: f64,
    /// Largest `λ · weight`, at most 2.
    max_scaled: f64,
}

#[derive(Serialize)]
struct WeightsOut {
    merged_steps: usize,
    taus: Vec<f64>,
    modes: Vec<ModeWeights>,
}

/// Worst weight sum per mode against its `2 / λ_j` bound.
pub fn weights_json(params: &str) -> Result<String, String> {
    let p = parse(params)?.problem()?;
    let rows = weight_table(&p.es, &p.grids, &p.grid, &p.table);
    let modes = p
        .es
        .lambdas()
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let max_weight = rows
                .iter()
                .filter(|r| r.mode == j + 1)
                .map(|r| r.weight_sum)
                .fold(0.0, f64::max);
            ModeWeights { lambda, bound: 2.0 / lambda, max_weight, max_scaled: lambda * max_weight }
        })
        .collect();
    to_json(&WeightsOut { merged_steps: p.grid.steps(), taus: p.grid.taus().to_vec(), modes })
}

#[derive(Serialize)]
struct PathOut {
    taus: Vec<f64>,
    /// `values[j][η]`.
    values: Vec<Vec<f64>>,
}

/// One path of the recursive scheme.
pub fn simulate_json(params: &str) -> Result<String, String> {
    let d = parse(params)?;
    let p = d.problem()?;
    let inc = p.sample_increments(&NoiseStream::new(d.seed, d.path)).map_err(|e| e.to_string())?;
    let traj = run_recursive(&p.input(&inc)).map_err(|e| e.to_string())?;
    let values = (0..traj.modes()).map(|j| traj.values().column(j).to_vec()).collect();
    to_json(&PathOut { taus: traj.taus().to_vec(), values })
}

#[derive(Serialize)]
struct MomentsOut {
    taus: Vec<f64>,
    /// `discrete[j][η]`, exact second moments of the scheme.
    discrete: Vec<Vec<f64>>,
    /// Same layout, continuous mild solution.
    continuous: Vec<Vec<f64>>,
}

fn columns(m: &MomentTable) -> Vec<Vec<f64>> {
    (0..m.values.ncols()).map(|j| m.values.column(j).to_vec()).collect()
}

/// Exact scheme moments next to the continuous ones; additive noise only.
pub fn moments_json(params: &str) -> Result<String, String> {
    let p = parse(params)?.problem()?;
    let exact = exact_second_moments(&p).map_err(|e| e.to_string())?;
    let cont = continuous_second_moments(&p.es, p.op.as_ref(), p.xi.coeffs(), p.grid.taus())
        .map_err(|e| e.to_string())?;
    to_json(&MomentsOut {
        taus: p.grid.taus().to_vec(),
        discrete: columns(&exact.full),
        continuous: columns(&cont),
    })
}

#[wasm_bindgen]
pub fn weights(params: &str) -> Result<String, JsValue> {
    weights_json(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(params: &str) -> Result<String, JsValue> {
    simulate_json(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn moments(params: &str) -> Result<String, JsValue> {
    moments_json(params).map_err(|e| JsValue::from_str(&e))
}
