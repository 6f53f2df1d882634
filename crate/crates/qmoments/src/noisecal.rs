//! Noise channels and calibration: the RMSE-vs-depolarization study,
//! two-stage maximum likelihood moment calibration, per-architecture
//! fidelity estimation for realignment features, the asymmetric Werner
//! chirality model, and bootstrap error bars on simulated shot data.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmat::solve_real;
use crate::moments::{compute_moments, compute_realign_moments, negativity, NegativityMethod};
use crate::multicopy::{binomial_sample, factor_permutation};
use crate::qstate::{
    basis_ket, depolarize, ginibre_state, make_chessboard, make_horodecki, make_marginal_noise,
    make_param_pure, make_product, make_tiles, projector, BipartiteDims, ChessboardParams,
    DensityMatrix, DIMS_3X3,
};
use crate::seeds::SeedTree;
use crate::{QmError, Result};

/// One simulated ancilla-overlap measurement: the controlled test on a value
/// x has success probability p0 = (1+x)/2 and the estimate is 2·(hits/N)-1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoisySample {
    pub true_value: f64,
    pub shots: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub seed: u64,
}

pub fn simulate_overlap_sample(true_value: f64, shots: u64, seed: u64) -> Result<NoisySample> {
    if !(-1.0..=1.0).contains(&true_value) {
        return Err(QmError::Parameter(format!(
            "overlap value {true_value} outside [-1, 1]"
        )));
    }
    if shots == 0 {
        return Err(QmError::Parameter("shots must be at least 1".into()));
    }
    let mut rng = rand::SeedableRng::seed_from_u64(seed);
    let p0 = (1.0 + true_value) / 2.0;
    let hits = binomial_sample(shots, p0, &mut rng);
    let estimate = 2.0 * (hits as f64 / shots as f64) - 1.0;
    let stderr = ((1.0 - estimate * estimate).max(0.0) / shots as f64).sqrt();
    Ok(NoisySample { true_value, shots, estimate, stderr, seed })
}

// ---------------------------------------------------------------------------
// RMSE-vs-depolarization study
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RmseStudy {
    /// (eta, rmse) per grid point.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of rmse = slope * eta through the origin.
    pub slope: f64,
    /// Bootstrap standard error of the slope (resampling states).
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub n_states: usize,
}

/// Negativity error growth under depolarization, sampled over
/// Hilbert-Schmidt-random mixed states.
pub fn rmse_study(
    dims: BipartiteDims,
    eta_grid: &[f64],
    n_states: usize,
    seed: u64,
) -> Result<RmseStudy> {
    if n_states < 100 {
        return Err(QmError::Parameter("rmse study needs at least 100 states".into()));
    }
    if eta_grid.is_empty() || eta_grid.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
        return Err(QmError::Parameter("eta grid must lie in [0, 1]".into()));
    }
    let tree = SeedTree::new(seed);
    // sq_err[i][j]: squared negativity error of state i at eta_grid[j].
    let sq_err: Vec<Vec<f64>> = (0..n_states)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree.rng("state", i as u64);
            let rho = ginibre_state(dims, &mut rng);
            let clean = negativity(&rho, NegativityMethod::Direct).unwrap().negativity;
            eta_grid
                .iter()
                .map(|&eta| {
                    let noisy = depolarize(&rho, eta).unwrap();
                    let n = negativity(&noisy, NegativityMethod::Direct).unwrap().negativity;
                    (n - clean) * (n - clean)
                })
                .collect()
        })
        .collect();

    let rmse_of = |weights: &[usize]| -> Vec<f64> {
        let total: usize = weights.iter().sum();
        (0..eta_grid.len())
            .map(|j| {
                let s: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| w as f64 * sq_err[i][j])
                    .sum();
                (s / total as f64).sqrt()
            })
            .collect()
    };
    let slope_of = |rmse: &[f64]| -> f64 {
        let num: f64 = rmse.iter().zip(eta_grid).map(|(r, e)| r * e).sum();
        let den: f64 = eta_grid.iter().map(|e| e * e).sum();
        num / den
    };

    let uniform = vec![1usize; n_states];
    let rmse = rmse_of(&uniform);
    let slope = slope_of(&rmse);
    let ss_res: f64 = rmse
        .iter()
        .zip(eta_grid)
        .map(|(r, e)| (r - slope * e) * (r - slope * e))
        .sum();
    let mean_r = rmse.iter().sum::<f64>() / rmse.len() as f64;
    let ss_tot: f64 = rmse.iter().map(|r| (r - mean_r) * (r - mean_r)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    const B: usize = 200;
    let slopes: Vec<f64> = (0..B)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree.rng("bootstrap", b as u64);
            let mut w = vec![0usize; n_states];
            for _ in 0..n_states {
                w[rng.random_range(0..n_states)] += 1;
            }
            slope_of(&rmse_of(&w))
        })
        .collect();
    let mean_s = slopes.iter().sum::<f64>() / B as f64;
    let var_s = slopes.iter().map(|s| (s - mean_s) * (s - mean_s)).sum::<f64>() / (B - 1) as f64;

    Ok(RmseStudy {
        points: eta_grid.iter().copied().zip(rmse).collect(),
        slope,
        slope_stderr: var_s.sqrt(),
        r_squared,
        n_states,
    })
}

// ---------------------------------------------------------------------------
// Bootstrap error bars
// ---------------------------------------------------------------------------

/// Standard deviation of `statistic` over B resamples. Each stratum
/// (circuit configuration) is resampled with replacement independently, so
/// outcomes never migrate between configurations.
pub fn bootstrap_errors<F>(strata: &[Vec<f64>], b: usize, statistic: F, seed: u64) -> Result<f64>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    if b < 100 {
        return Err(QmError::Parameter("bootstrap needs B >= 100 resamples".into()));
    }
    if strata.iter().any(|s| s.is_empty()) {
        return Err(QmError::Parameter("every stratum needs at least one outcome".into()));
    }
    let tree = SeedTree::new(seed);
    let stats: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree.rng("resample", i as u64);
            let resampled: Vec<Vec<f64>> = strata
                .iter()
                .map(|s| (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).collect())
                .collect();
            statistic(&resampled)
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / b as f64;
    let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (b - 1) as f64;
    Ok(var.sqrt())
}

// ---------------------------------------------------------------------------
// Shared bounded optimizer
// ---------------------------------------------------------------------------

/// Projected gradient descent with Armijo backtracking. The objective value
/// never increases across accepted steps.
fn projected_gradient<O, G, P>(
    x0: Vec<f64>,
    objective: O,
    gradient: G,
    project: P,
    max_iters: usize,
) -> (Vec<f64>, f64)
where
    O: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut [f64]),
{
    let mut x = x0;
    project(&mut x);
    let mut fx = objective(&x);
    let mut step = 1.0f64;
    for _ in 0..max_iters {
        let g = gradient(&x);
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2 < 1e-24 {
            break;
        }
        let mut accepted = false;
        let mut t = step;
        for _ in 0..60 {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            project(&mut cand);
            let fc = objective(&cand);
            // Armijo on the projected step length.
            let dx2: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            if fc <= fx - 1e-4 * dx2 / t.max(1e-300) {
                if dx2 < 1e-26 {
                    return (cand, fc);
                }
                x = cand;
                fx = fc;
                step = (t * 2.0).min(1e6);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, fx)
}

/// Central-difference Hessian with step 1e-5 on unit-normalized parameters.
fn numeric_hessian<O>(x: &[f64], objective: O) -> Vec<Vec<f64>>
where
    O: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let h = 1e-5;
    let scale: Vec<f64> = x.iter().map(|v| v.abs().max(0.1)).collect();
    let f = |dx: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in dx {
            y[i] += d * scale[i];
        }
        objective(&y)
    };
    let f0 = f(&[]);
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        hess[i][i] = (f(&[(i, h)]) - 2.0 * f0 + f(&[(i, -h)])) / (h * h * scale[i] * scale[i]);
        for j in (i + 1)..n {
            let v = (f(&[(i, h), (j, h)]) - f(&[(i, h), (j, -h)]) - f(&[(i, -h), (j, h)])
                + f(&[(i, -h), (j, -h)]))
                / (4.0 * h * h * scale[i] * scale[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Inverse of a symmetric matrix column by column; None when singular.
fn invert_sym(h: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = h.len();
    let mut inv = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_real(h, &e)?;
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

// ---------------------------------------------------------------------------
// Calibration fit container
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationFit {
    /// Named degradation factors, all in [0, 1].
    pub degradation: BTreeMap<String, f64>,
    /// Fitted preparation angles of the blind states (two-stage route only).
    pub theta_estimates: Vec<f64>,
    /// Recovered physical quantities per test state.
    pub physical_features: Vec<BTreeMap<String, f64>>,
    /// Cramer-Rao standard deviations, keyed like `degradation` plus
    /// per-state feature entries; infinite when the Hessian is singular.
    pub errors: BTreeMap<String, f64>,
    pub nll: f64,
    /// Final objective value of every restart, sorted ascending.
    pub restart_nlls: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Two-stage moment calibration
// ---------------------------------------------------------------------------

/// Measured partial-transpose moments (mu_2, mu_3, mu_4) of one calibration
/// state prepared at a known angle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ThetaMoments {
    pub theta: f64,
    pub measured: [f64; 3],
}

/// Ideal (mu_2, mu_3, mu_4) of the parametrized pure family at `theta`.
pub fn theoretical_pt_moments(theta: f64, dims: BipartiteDims) -> Result<[f64; 3]> {
    let rho = make_param_pure(theta, dims)?;
    let ms = compute_moments(&rho, 4);
    Ok([ms.mu(2), ms.mu(3), ms.mu(4)])
}

/// Stage 1 fits per-moment degradation factors f_k on states with known
/// angles; stage 2 fits each blind state's angle at fixed f_k and divides
/// the measured moments by f_k to recover physical values.
pub fn two_stage_mle(
    calibration: &[ThetaMoments],
    blind: &[[f64; 3]],
    sigma: [f64; 3],
    dims: BipartiteDims,
) -> Result<CalibrationFit> {
    if sigma.iter().any(|&s| s <= 0.0) {
        return Err(QmError::Parameter("moment sigmas must be positive".into()));
    }
    let mut distinct: Vec<f64> = Vec::new();
    for c in calibration {
        if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&c.theta) {
            return Err(QmError::Parameter(format!("theta {} outside [0, pi/2]", c.theta)));
        }
        if !distinct.iter().any(|&t| (t - c.theta).abs() < 1e-12) {
            distinct.push(c.theta);
        }
    }
    if distinct.len() < 2 {
        return Err(QmError::Identifiability(
            "calibration set needs at least 2 distinct preparation angles".into(),
        ));
    }

    let theo: Vec<[f64; 3]> = calibration
        .iter()
        .map(|c| theoretical_pt_moments(c.theta, dims))
        .collect::<Result<_>>()?;

    let chi2 = |f: &[f64]| -> f64 {
        calibration
            .iter()
            .zip(&theo)
            .map(|(c, t)| {
                (0..3)
                    .map(|k| {
                        let r = c.measured[k] - f[k] * t[k];
                        r * r / (sigma[k] * sigma[k])
                    })
                    .sum::<f64>()
            })
            .sum()
    };
    let grad = |f: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; 3];
        for (c, t) in calibration.iter().zip(&theo) {
            for k in 0..3 {
                g[k] += 2.0 * (f[k] * t[k] - c.measured[k]) * t[k] / (sigma[k] * sigma[k]);
            }
        }
        g
    };
    let project = |f: &mut [f64]| {
        for v in f.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    };
    let (f_hat, stage1) = projected_gradient(vec![0.5; 3], chi2, grad, project, 5000);

    // Stage 2: one bounded angle per blind state; coarse grid then
    // golden-section refinement on the bracketing interval.
    let fit_theta = |m: &[f64; 3]| -> Result<f64> {
        let obj = |theta: f64| -> Result<f64> {
            let t = theoretical_pt_moments(theta, dims)?;
            Ok((0..3)
                .map(|k| {
                    let r = m[k] - f_hat[k] * t[k];
                    r * r / (sigma[k] * sigma[k])
                })
                .sum())
        };
        const GRID: usize = 257;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut best = (0usize, f64::INFINITY);
        let vals: Result<Vec<f64>> =
            (0..GRID).map(|i| obj(half_pi * i as f64 / (GRID - 1) as f64)).collect();
        let vals = vals?;
        for (i, &v) in vals.iter().enumerate() {
            if v < best.1 {
                best = (i, v);
            }
        }
        let mut lo = half_pi * best.0.saturating_sub(1) as f64 / (GRID - 1) as f64;
        let mut hi = half_pi * (best.0 + 1).min(GRID - 1) as f64 / (GRID - 1) as f64;
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (obj(x1)?, obj(x2)?);
        for _ in 0..80 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = obj(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = obj(x2)?;
            }
        }
        Ok(0.5 * (lo + hi))
    };

    let mut theta_estimates = Vec::with_capacity(blind.len());
    let mut physical_features = Vec::with_capacity(blind.len());
    let mut total = stage1;
    for m in blind {
        let th = fit_theta(m)?;
        let t = theoretical_pt_moments(th, dims)?;
        total += (0..3)
            .map(|k| {
                let r = m[k] - f_hat[k] * t[k];
                r * r / (sigma[k] * sigma[k])
            })
            .sum::<f64>();
        theta_estimates.push(th);
        let mut phys = BTreeMap::new();
        for (k, name) in ["mu2", "mu3", "mu4"].iter().enumerate() {
            let v = if f_hat[k] > 1e-12 { m[k] / f_hat[k] } else { f64::NAN };
            phys.insert((*name).to_string(), v);
        }
        physical_features.push(phys);
    }

    // Cramer-Rao on the stage-1 factors: the chi^2 is quadratic, so the
    // curvature is exact.
    let mut errors = BTreeMap::new();
    for (k, name) in ["f2", "f3", "f4"].iter().enumerate() {
        let curv: f64 =
            theo.iter().map(|t| 2.0 * t[k] * t[k] / (sigma[k] * sigma[k])).sum();
        let sd = if curv > 0.0 { (2.0 / curv).sqrt() } else { f64::INFINITY };
        errors.insert((*name).to_string(), sd);
    }

    let mut degradation = BTreeMap::new();
    for (k, name) in ["f2", "f3", "f4"].iter().enumerate() {
        degradation.insert((*name).to_string(), f_hat[k]);
    }
    Ok(CalibrationFit {
        degradation,
        theta_estimates,
        physical_features,
        errors,
        nll: total / 2.0,
        restart_nlls: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Per-circuit (per-architecture) MLE for realignment features
// ---------------------------------------------------------------------------

pub const FEATURE_NAMES: [&str; 4] = ["S1", "G1", "S2", "G2"];
pub const FIDELITY_NAMES: [&str; 3] = ["g_S1", "f_G1", "f_S2G2"];
/// Default shot-noise sigmas for (S1, G1, S2, G2).
pub const DEFAULT_SIGMAS: [f64; 4] = [0.015, 0.025, 0.015, 0.020];

/// Physical box for one state's (S1, G1, S2, G2).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FeatureBox {
    pub s1_max: f64,
    pub s2_min: f64,
    pub s2_max: f64,
}

impl Default for FeatureBox {
    fn default() -> Self {
        FeatureBox { s1_max: 3.0, s2_min: 1.0 / 9.0, s2_max: 1.0 }
    }
}

impl FeatureBox {
    /// Clamp into { 0 <= G1 <= S1 <= s1_max, s2_min <= S2 <= s2_max,
    /// 0 <= G2 <= S2 }.
    fn project(&self, x: &mut [f64]) {
        x[0] = x[0].clamp(0.0, self.s1_max);
        x[1] = x[1].clamp(0.0, x[0]);
        x[2] = x[2].clamp(self.s2_min, self.s2_max);
        x[3] = x[3].clamp(0.0, x[2]);
    }
}

/// One calibration state: measured features and exact theory values.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalPoint {
    pub measured: [f64; 4],
    pub theory: [f64; 4],
}

/// (S1, G1, S2, G2) of a state, from the realignment moment pipeline.
pub fn feature_quad(rho: &DensityMatrix) -> [f64; 4] {
    let rm = compute_realign_moments(rho);
    [rm.sigma_k(1), rm.g_k(1), rm.sigma_k(2), rm.g_k(2)]
}

/// The three reference states anchoring the fidelity fit: product |00><00|,
/// classically correlated (1/3)·sum |aa><aa|, and a misaligned product whose
/// overlap features sit mid-range.
pub fn reference_calibration_states() -> Result<Vec<(String, DensityMatrix)>> {
    let zero = projector(&basis_ket(0, 3));
    let product = make_product(&zero, &zero)?;
    let mut classical = projector(&crate::qstate::kron_vec(&basis_ket(0, 3), &basis_ket(0, 3)));
    for a in 1..3 {
        let ket = crate::qstate::kron_vec(&basis_ket(a, 3), &basis_ket(a, 3));
        classical = classical.add(&projector(&ket));
    }
    let classical = DensityMatrix::new(DIMS_3X3, classical.scale_re(1.0 / 3.0))?;
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    let plus = vec![
        num_complex::Complex64::new(inv, 0.0),
        num_complex::Complex64::new(inv, 0.0),
        num_complex::Complex64::new(0.0, 0.0),
    ];
    let misaligned = make_product(&zero, &projector(&plus))?;
    Ok(vec![
        ("product".to_string(), product),
        ("classical".to_string(), classical),
        ("misaligned".to_string(), misaligned),
    ])
}

fn fidelity_index(feature: usize) -> usize {
    // S1 -> g_S1, G1 -> f_G1, S2 and G2 share the two-copy fidelity.
    match feature {
        0 => 0,
        1 => 1,
        _ => 2,
    }
}

struct PcProblem<'a> {
    cal: &'a [CalPoint],
    test: &'a [[f64; 4]],
    inv_two_sigma2: [f64; 4],
    bounds: FeatureBox,
}

impl PcProblem<'_> {
    fn n_params(&self) -> usize {
        3 + 4 * self.test.len()
    }

    fn nll(&self, p: &[f64]) -> f64 {
        let g = &p[..3];
        let mut acc = 0.0;
        for c in self.cal {
            for j in 0..4 {
                let r = c.measured[j] - g[fidelity_index(j)] * c.theory[j];
                acc += r * r * self.inv_two_sigma2[j];
            }
        }
        for (t, m) in self.test.iter().enumerate() {
            let x = &p[3 + 4 * t..3 + 4 * t + 4];
            for j in 0..4 {
                let r = m[j] - g[fidelity_index(j)] * x[j];
                acc += r * r * self.inv_two_sigma2[j];
            }
        }
        acc
    }

    fn grad(&self, p: &[f64]) -> Vec<f64> {
        let g = &p[..3];
        let mut out = vec![0.0; self.n_params()];
        for c in self.cal {
            for j in 0..4 {
                let fi = fidelity_index(j);
                let r = g[fi] * c.theory[j] - c.measured[j];
                out[fi] += 2.0 * r * c.theory[j] * self.inv_two_sigma2[j];
            }
        }
        for (t, m) in self.test.iter().enumerate() {
            let x = &p[3 + 4 * t..3 + 4 * t + 4];
            for j in 0..4 {
                let fi = fidelity_index(j);
                let r = g[fi] * x[j] - m[j];
                out[fi] += 2.0 * r * x[j] * self.inv_two_sigma2[j];
                out[3 + 4 * t + j] = 2.0 * r * g[fi] * self.inv_two_sigma2[j];
            }
        }
        out
    }

    fn project(&self, p: &mut [f64]) {
        for v in p[..3].iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        for t in 0..self.test.len() {
            self.bounds.project(&mut p[3 + 4 * t..3 + 4 * t + 4]);
        }
    }

    /// Calibration-only least squares for the fidelities, clamped to (0, 1].
    fn fidelity_seed(&self) -> [f64; 3] {
        let mut num = [0.0; 3];
        let mut den = [0.0; 3];
        for c in self.cal {
            for j in 0..4 {
                let fi = fidelity_index(j);
                num[fi] += c.measured[j] * c.theory[j] * self.inv_two_sigma2[j];
                den[fi] += c.theory[j] * c.theory[j] * self.inv_two_sigma2[j];
            }
        }
        let mut g = [0.5; 3];
        for k in 0..3 {
            if den[k] > 0.0 {
                g[k] = (num[k] / den[k]).clamp(0.01, 1.0);
            }
        }
        g
    }

    fn start(&self, g: [f64; 3], rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        p[..3].copy_from_slice(&g);
        let jitter: Vec<f64> = match rng {
            Some(r) => (0..4 * self.test.len()).map(|_| 0.1 * r.sample::<f64, _>(StandardNormal)).collect(),
            None => vec![0.0; 4 * self.test.len()],
        };
        for (t, m) in self.test.iter().enumerate() {
            for j in 0..4 {
                let gj = p[fidelity_index(j)].max(1e-3);
                p[3 + 4 * t + j] = m[j] / gj + jitter[4 * t + j];
            }
        }
        self.project(&mut p);
        p
    }
}

/// Joint fit of three architecture fidelities and the physical features of
/// every test state, with Cramer-Rao error bars from the numerical Hessian.
pub fn per_circuit_mle(
    calibration: &[CalPoint],
    test: &[[f64; 4]],
    sigmas: [f64; 4],
    bounds: FeatureBox,
    restarts: usize,
    seed: u64,
) -> Result<CalibrationFit> {
    let (best, restart_nlls) =
        fit_per_circuit(calibration, test, sigmas, bounds, restarts, seed)?;
    let problem = PcProblem {
        cal: calibration,
        test,
        inv_two_sigma2: sigmas.map(|s| 1.0 / (2.0 * s * s)),
        bounds,
    };

    let hess = numeric_hessian(&best, |p| problem.nll(p));
    let cov = invert_sym(&hess);
    let scale: Vec<f64> = best.iter().map(|v| v.abs().max(0.1)).collect();
    let sd = |cov: &Option<Vec<Vec<f64>>>, i: usize| -> f64 {
        match cov {
            Some(c) if c[i][i] > 0.0 => scale[i] * c[i][i].sqrt(),
            _ => f64::INFINITY,
        }
    };

    let mut degradation = BTreeMap::new();
    let mut errors = BTreeMap::new();
    for (k, name) in FIDELITY_NAMES.iter().enumerate() {
        degradation.insert((*name).to_string(), best[k]);
        errors.insert((*name).to_string(), sd(&cov, k));
    }
    let mut physical_features = Vec::with_capacity(test.len());
    for t in 0..test.len() {
        let x = &best[3 + 4 * t..3 + 4 * t + 4];
        let mut map = BTreeMap::new();
        for (j, name) in FEATURE_NAMES.iter().enumerate() {
            map.insert((*name).to_string(), x[j]);
            errors.insert(format!("{name}[{t}]"), sd(&cov, 3 + 4 * t + j));
        }
        map.insert("D1".to_string(), x[0] - x[1]);
        map.insert("D2".to_string(), x[2] - x[3]);
        let d2_sd = match &cov {
            Some(c) => {
                let (i2, i3) = (3 + 4 * t + 2, 3 + 4 * t + 3);
                let var = scale[i2] * scale[i2] * c[i2][i2] + scale[i3] * scale[i3] * c[i3][i3]
                    - 2.0 * scale[i2] * scale[i3] * c[i2][i3];
                if var > 0.0 {
                    var.sqrt()
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        };
        errors.insert(format!("D2[{t}]"), d2_sd);
        physical_features.push(map);
    }

    Ok(CalibrationFit {
        degradation,
        theta_estimates: Vec::new(),
        physical_features,
        errors,
        nll: problem.nll(&best),
        restart_nlls,
    })
}

/// Optimization core shared by `per_circuit_mle` and the noise sweep (which
/// skips the Hessian). Returns the best parameter vector and all restart
/// objectives sorted ascending.
fn fit_per_circuit(
    calibration: &[CalPoint],
    test: &[[f64; 4]],
    sigmas: [f64; 4],
    bounds: FeatureBox,
    restarts: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if calibration.is_empty() {
        return Err(QmError::Parameter("per-circuit fit needs calibration states".into()));
    }
    if sigmas.iter().any(|&s| s <= 0.0) {
        return Err(QmError::Parameter("feature sigmas must be positive".into()));
    }
    let problem = PcProblem {
        cal: calibration,
        test,
        inv_two_sigma2: sigmas.map(|s| 1.0 / (2.0 * s * s)),
        bounds,
    };
    let tree = SeedTree::new(seed);
    let theory_seed = problem.fidelity_seed();
    let starts: Vec<Vec<f64>> = (0..restarts.max(2))
        .map(|r| match r {
            0 => problem.start(theory_seed, None),
            1 => problem.start([0.5; 3], None),
            _ => {
                let mut rng = tree.rng("restart", r as u64);
                let g = [
                    rng.random_range(0.05..1.0),
                    rng.random_range(0.05..1.0),
                    rng.random_range(0.05..1.0),
                ];
                let mut rng2 = tree.rng("jitter", r as u64);
                problem.start(g, Some(&mut rng2))
            }
        })
        .collect();
    let mut fits: Vec<(Vec<f64>, f64)> = starts
        .into_par_iter()
        .map(|x0| {
            projected_gradient(
                x0,
                |p| problem.nll(p),
                |p| problem.grad(p),
                |p| problem.project(p),
                4000,
            )
        })
        .collect();
    fits.sort_by(|a, b| a.1.total_cmp(&b.1));
    let restart_nlls: Vec<f64> = fits.iter().map(|f| f.1).collect();
    Ok((fits[0].0.clone(), restart_nlls))
}

// ---------------------------------------------------------------------------
// Werner asymmetric depolarization model
// ---------------------------------------------------------------------------

/// Werner-state moment closed forms: the partial transpose has eigenvalues
/// (1-3p)/4 and (1+p)/4 (x3); the state itself (1+3p)/4 and (1-p)/4 (x3).
pub fn werner_mu4(p: f64) -> f64 {
    let a = (1.0 - 3.0 * p) / 4.0;
    let b = (1.0 + p) / 4.0;
    a.powi(4) + 3.0 * b.powi(4)
}

pub fn werner_i4(p: f64) -> f64 {
    let a = (1.0 + 3.0 * p) / 4.0;
    let b = (1.0 - p) / 4.0;
    a.powi(4) + 3.0 * b.powi(4)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WernerNoiseModel {
    /// Uncertainty of the direct (all-singlet) measurement component.
    pub sigma_direct: f64,
    /// Empirical per-circuit variance of the spectral-decomposition
    /// component.
    pub sigma_spectral_sq: f64,
}

impl Default for WernerNoiseModel {
    fn default() -> Self {
        WernerNoiseModel { sigma_direct: 3e-3, sigma_spectral_sq: 6e-3 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WernerC4 {
    pub raw: f64,
    pub calibrated: f64,
    pub stderr: f64,
}

/// Chirality signal when the mu4 and I4 circuits depolarize unequally:
/// raw = f_mu4*mu4 - f_I4*I4, straightened by the two-point calibration
/// anchored at p = 0 (C4 = 0) and p = 1 (C4 = -3/4), with the
/// two-component variance model
/// sigma^2 = lambda_s^8*sigma_direct^2 + (I2^4 - lambda_s^8)*sigma_spectral^2.
pub fn werner_asymmetric(
    p: f64,
    f_mu4: f64,
    f_i4: f64,
    noise: &WernerNoiseModel,
) -> Result<WernerC4> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QmError::Parameter(format!("werner parameter {p} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&f_mu4) || !(0.0..=1.0).contains(&f_i4) || f_mu4 == 0.0 || f_i4 == 0.0
    {
        return Err(QmError::Parameter("fidelities must lie in (0, 1]".into()));
    }
    let raw_at = |q: f64| f_mu4 * werner_mu4(q) - f_i4 * werner_i4(q);
    let raw = raw_at(p);
    let slope = (raw_at(1.0) - raw_at(0.0)) / (-0.75);
    let calibrated = (raw - raw_at(0.0)) / slope;

    let lambda_s = (1.0 + 3.0 * p) / 4.0;
    let i2 = (1.0 + 3.0 * p * p) / 4.0;
    let ls8 = lambda_s.powi(8);
    let var = ls8 * noise.sigma_direct * noise.sigma_direct
        + (i2.powi(4) - ls8).max(0.0) * noise.sigma_spectral_sq;
    Ok(WernerC4 { raw, calibrated, stderr: var.sqrt() })
}

// ---------------------------------------------------------------------------
// Noise-model sweep across bound-entangled families
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SweepState {
    pub label: String,
    pub family: String,
    pub rho: DensityMatrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub family: String,
    pub d2_theory: f64,
    /// Fraction of trials with recovered D2 > 0.
    pub detection_rate: f64,
    pub mean_d2: f64,
    pub std_d2: f64,
}

/// Swap-symmetrized chessboard: (rho + S rho S)/2 commutes with the
/// realignment transpose, forcing an exactly Hermitian realignment matrix
/// (D2 = 0) while staying PPT.
pub fn swap_symmetrized(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let s = factor_permutation(&[3, 3], &[1, 0]);
    let sym = rho.mat().add(&s.mul(rho.mat()).mul(&s)).scale_re(0.5);
    DensityMatrix::new(rho.dims(), sym)
}

/// The default sweep list: a Horodecki parameter scan, the noisy Tiles
/// family, both hardware chessboard tuples plus the symmetrized D2 = 0
/// probe, and the marginal-noise constructions seeded from Tiles and
/// Horodecki.
pub fn default_sweep_states() -> Result<Vec<SweepState>> {
    let mut out = Vec::new();
    for i in 0..19 {
        let a = 0.05 + 0.05 * i as f64;
        out.push(SweepState {
            label: format!("horodecki(a={a:.2})"),
            family: "horodecki".into(),
            rho: make_horodecki(a)?,
        });
    }
    for eps in [0.0, 0.03, 0.06, 0.09, 0.12] {
        out.push(SweepState {
            label: format!("tiles(eps={eps:.2})"),
            family: "tiles".into(),
            rho: make_tiles(eps)?,
        });
    }
    let c1 = make_chessboard(ChessboardParams::new(1.0, 2.0, 1.0, 3.0, 1.0, 1.0))?;
    let c2 = make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 3.0))?;
    out.push(SweepState { label: "chessboard-C1".into(), family: "chessboard".into(), rho: c1 });
    out.push(SweepState {
        label: "chessboard-sym(D2=0)".into(),
        family: "chessboard".into(),
        rho: swap_symmetrized(&c2)?,
    });
    out.push(SweepState { label: "chessboard-C2".into(), family: "chessboard".into(), rho: c2 });
    for t in [0.05, 0.10] {
        out.push(SweepState {
            label: format!("mn-tiles(t={t:.2})"),
            family: "mn-tiles".into(),
            rho: make_marginal_noise(&make_tiles(0.0)?, t)?,
        });
    }
    for t in [0.05, 0.10] {
        out.push(SweepState {
            label: format!("mn-horodecki(t={t:.2})"),
            family: "mn-horodecki".into(),
            rho: make_marginal_noise(&make_horodecki(0.5)?, t)?,
        });
    }
    Ok(out)
}

/// Monte Carlo detection study: per trial, degrade the true features of the
/// state and of the three reference calibration states by the architecture
/// fidelities plus Gaussian measurement noise, refit with the per-circuit
/// MLE, and count recovered D2 > 0. Sigmas are the empirical values at
/// 4000 shots and scale as 1/sqrt(shots).
pub fn noise_model_sweep(
    states: &[SweepState],
    fidelities: [f64; 3],
    sigmas: [f64; 4],
    n_trials: usize,
    shots: u64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if n_trials < 50 {
        return Err(QmError::Parameter("sweep needs at least 50 trials per state".into()));
    }
    if shots == 0 {
        return Err(QmError::Parameter("shots must be at least 1".into()));
    }
    let scale = (4000.0 / shots as f64).sqrt();
    let sig_eff = sigmas.map(|s| s * scale);
    let cal_refs: Vec<(String, DensityMatrix)> = reference_calibration_states()?;
    let cal_theory: Vec<[f64; 4]> = cal_refs.iter().map(|(_, rho)| feature_quad(rho)).collect();
    let tree = SeedTree::new(seed);

    let mut rows = Vec::with_capacity(states.len());
    for (si, st) in states.iter().enumerate() {
        let truth = feature_quad(&st.rho);
        let d2_theory = truth[2] - truth[3];
        let sub = tree.subtree("state", si as u64);
        let d2s: Vec<f64> = (0..n_trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = sub.rng("trial", trial as u64);
                let mut noisy = |v: [f64; 4]| -> [f64; 4] {
                    let mut out = [0.0; 4];
                    for j in 0..4 {
                        let n: f64 = rng.sample(StandardNormal);
                        out[j] = fidelities[fidelity_index(j)] * v[j] + sig_eff[j] * n;
                    }
                    out
                };
                let cal: Vec<CalPoint> = cal_theory
                    .iter()
                    .map(|&thy| CalPoint { measured: noisy(thy), theory: thy })
                    .collect();
                let test = [noisy(truth)];
                let (best, _) = fit_per_circuit(
                    &cal,
                    &test,
                    sigmas,
                    FeatureBox::default(),
                    2,
                    tree.child("fit", (si * n_trials + trial) as u64),
                )
                .unwrap();
                best[3 + 2] - best[3 + 3]
            })
            .collect();
        let detected = d2s.iter().filter(|&&d| d > 0.0).count();
        let mean = d2s.iter().sum::<f64>() / n_trials as f64;
        let var =
            d2s.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n_trials - 1) as f64;
        rows.push(SweepRow {
            label: st.label.clone(),
            family: st.family.clone(),
            d2_theory,
            detection_rate: detected as f64 / n_trials as f64,
            mean_d2: mean,
            std_d2: var.sqrt(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Raw measurement table ingestion
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CircuitTag {
    S1,
    G1,
    S2,
    G2,
    Mu(u8),
    Ik(u8),
}

impl std::fmt::Display for CircuitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CircuitTag::S1 => write!(f, "S1"),
            CircuitTag::G1 => write!(f, "G1"),
            CircuitTag::S2 => write!(f, "S2"),
            CircuitTag::G2 => write!(f, "G2"),
            CircuitTag::Mu(k) => write!(f, "MU_{k}"),
            CircuitTag::Ik(k) => write!(f, "I_{k}"),
        }
    }
}

impl FromStr for CircuitTag {
    type Err = QmError;

    fn from_str(s: &str) -> Result<Self> {
        let parse_order = |txt: &str| -> Result<u8> {
            let k: u8 = txt
                .parse()
                .map_err(|_| QmError::Schema(format!("bad circuit tag order in {s:?}")))?;
            if (2..=9).contains(&k) {
                Ok(k)
            } else {
                Err(QmError::Schema(format!("moment order {k} outside 2..=9")))
            }
        };
        match s {
            "S1" => Ok(CircuitTag::S1),
            "G1" => Ok(CircuitTag::G1),
            "S2" => Ok(CircuitTag::S2),
            "G2" => Ok(CircuitTag::G2),
            _ if s.starts_with("MU_") => Ok(CircuitTag::Mu(parse_order(&s[3..])?)),
            _ if s.starts_with("I_") => Ok(CircuitTag::Ik(parse_order(&s[2..])?)),
            _ => Err(QmError::Schema(format!("unknown circuit tag {s:?}"))),
        }
    }
}

/// One row of the raw measurement table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawMeasurement {
    pub state_id: String,
    pub circuit_tag: String,
    pub shots: u64,
    pub p0_estimate: f64,
}

impl RawMeasurement {
    pub fn tag(&self) -> Result<CircuitTag> {
        self.circuit_tag.parse()
    }

    /// Ancilla expectation 2*p0 - 1 behind this row.
    pub fn value(&self) -> f64 {
        2.0 * self.p0_estimate - 1.0
    }
}

pub fn write_raw_csv(path: &Path, rows: &[RawMeasurement]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw_csv(path: &Path) -> Result<Vec<RawMeasurement>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: RawMeasurement = rec?;
        if !(0.0..=1.0).contains(&row.p0_estimate) {
            return Err(QmError::Schema(format!(
                "p0_estimate {} outside [0, 1] for state {}",
                row.p0_estimate, row.state_id
            )));
        }
        row.tag()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Group raw rows into per-state (S1, G1, S2, G2) quads; every state must
/// carry exactly the four feature tags.
pub fn feature_quads_from_raw(rows: &[RawMeasurement]) -> Result<Vec<(String, [f64; 4])>> {
    let mut by_state: BTreeMap<String, [Option<f64>; 4]> = BTreeMap::new();
    for r in rows {
        let slot = match r.tag()? {
            CircuitTag::S1 => 0,
            CircuitTag::G1 => 1,
            CircuitTag::S2 => 2,
            CircuitTag::G2 => 3,
            other => {
                return Err(QmError::Schema(format!(
                    "circuit tag {other} is not a realignment feature"
                )))
            }
        };
        let entry = by_state.entry(r.state_id.clone()).or_insert([None; 4]);
        if entry[slot].is_some() {
            return Err(QmError::Schema(format!(
                "duplicate {} row for state {}",
                r.circuit_tag, r.state_id
            )));
        }
        entry[slot] = Some(r.value());
    }
    let mut out = Vec::with_capacity(by_state.len());
    for (id, quad) in by_state {
        let mut v = [0.0; 4];
        for (j, q) in quad.iter().enumerate() {
            v[j] = q.ok_or_else(|| {
                QmError::Schema(format!("state {id} missing {} row", FEATURE_NAMES[j]))
            })?;
        }
        out.push((id, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{haar_ket, random_separable, DIMS_2X2, DIMS_2X3};
    use approx::assert_abs_diff_eq;

    #[test]
    fn depolarization_shrinks_purity_and_never_creates_entanglement() {
        let tree = SeedTree::new(41);
        let mut rng = tree.rng("pure", 0);
        let v = haar_ket(4, &mut rng);
        let rho = DensityMatrix::new(DIMS_2X2, projector(&v)).unwrap();
        for eta in [0.01, 0.02, 0.05] {
            let noisy = depolarize(&rho, eta).unwrap();
            let i2 = compute_moments(&noisy, 2).purity(2);
            // second-order correction to I2 = 1 - 3*eta/2 is (3/4)*eta^2
            assert!((i2 - (1.0 - 1.5 * eta)).abs() < eta * eta);
        }
        assert!(depolarize(&rho, 1.0)
            .unwrap()
            .mat()
            .sub(&crate::cmat::CMat::identity(4).scale_re(0.25))
            .max_abs()
            .abs()
            < 1e-15);

        // negativity is convex, so mixing toward the identity cannot raise it
        for i in 0..200 {
            let mut rng = tree.rng("mix", i);
            let dims = [DIMS_2X2, DIMS_2X3][i as usize % 2];
            let rho = ginibre_state(dims, &mut rng);
            let eta = rng.random_range(0.0..1.0);
            let clean = negativity(&rho, NegativityMethod::Direct).unwrap().negativity;
            let noisy = negativity(&depolarize(&rho, eta).unwrap(), NegativityMethod::Direct)
                .unwrap()
                .negativity;
            assert!(noisy <= (1.0 - eta) * clean + 1e-12);
        }

        // depolarized separable inputs stay PPT: no false entanglement
        for i in 0..500 {
            let mut rng = tree.rng("sep", i);
            let k = rng.random_range(2..=8usize);
            let rho = random_separable(k, DIMS_2X2, &mut rng);
            let eta = rng.random_range(0.0..0.5);
            assert!(depolarize(&rho, eta).unwrap().is_ppt(1e-9));
        }
    }

    #[test]
    fn rmse_slopes_match_reference_scaling() {
        let etas: Vec<f64> = (1..=10).map(|i| 0.02 * i as f64).collect();
        let study = rmse_study(DIMS_2X2, &etas, 2000, 7001).unwrap();
        assert!((study.slope - 0.245).abs() < 0.02, "2x2 slope {}", study.slope);
        assert!(study.r_squared > 0.99);
        assert!(study.slope_stderr < 0.01);

        let study23 = rmse_study(DIMS_2X3, &etas, 2000, 7002).unwrap();
        assert!((study23.slope - 0.219).abs() < 0.02, "2x3 slope {}", study23.slope);

        // eta = 0 contributes exactly zero error
        let zero = rmse_study(DIMS_2X2, &[0.0, 0.1], 100, 7003).unwrap();
        assert!(zero.points[0].1 < 1e-9);
    }

    #[test]
    fn bootstrap_matches_binomial_and_pipeline_scales() {
        let constant = vec![vec![1.0; 500]];
        let sd = bootstrap_errors(&constant, 200, |s| s[0].iter().sum::<f64>(), 3).unwrap();
        assert_eq!(sd, 0.0);

        let n = 100_000u64;
        let sample = simulate_overlap_sample(0.0, n, 11).unwrap();
        let outcomes: Vec<f64> = {
            let ones = ((1.0 + sample.estimate) / 2.0 * n as f64).round() as usize;
            let mut v = vec![1.0; ones];
            v.extend(vec![0.0; n as usize - ones]);
            v
        };
        let sd =
            bootstrap_errors(&[outcomes], 200, |s| s[0].iter().sum::<f64>() / s[0].len() as f64, 5)
                .unwrap();
        let expect = 0.5 / (n as f64).sqrt();
        assert!((sd - expect).abs() < 0.1 * expect, "sd {sd} vs {expect}");

        // negativity through the moment route at 1e5 shots per circuit;
        // theta = 30 deg keeps the reconstructed roots well separated
        let rho = make_param_pure(30f64.to_radians(), DIMS_2X2).unwrap();
        let ms = compute_moments(&rho, 4);
        let strata: Vec<Vec<f64>> = (2..=4)
            .map(|k| {
                let s = simulate_overlap_sample(ms.mu(k), n, 100 + k as u64).unwrap();
                let ones = ((1.0 + s.estimate) / 2.0 * n as f64).round() as usize;
                let mut v = vec![1.0; ones];
                v.extend(vec![0.0; n as usize - ones]);
                v
            })
            .collect();
        let sd = bootstrap_errors(
            &strata,
            200,
            |s| {
                let mu: Vec<f64> = s
                    .iter()
                    .map(|o| 2.0 * o.iter().sum::<f64>() / o.len() as f64 - 1.0)
                    .collect();
                let set = crate::moments::MomentSet::from_raw(
                    DIMS_2X2,
                    vec![mu[0], mu[1], mu[2]],
                    vec![mu[0], 1.0, 1.0],
                );
                match crate::moments::newton_girard_spectrum(&set) {
                    Ok(spec) => spec.iter().filter(|&&l| l < 0.0).map(|l| -l).sum(),
                    Err(_) => f64::NAN,
                }
            },
            17,
        )
        .unwrap();
        assert!((0.002..=0.008).contains(&sd), "pipeline stderr {sd}");
    }

    fn simulate_two_stage(
        f_true: [f64; 3],
        thetas: &[f64],
        shots: u64,
        seed: u64,
        dims: BipartiteDims,
    ) -> (Vec<ThetaMoments>, [f64; 3]) {
        let mut cal = Vec::new();
        let mut sig = [0.0f64; 3];
        for (i, &th) in thetas.iter().enumerate() {
            let t = theoretical_pt_moments(th, dims).unwrap();
            let mut measured = [0.0; 3];
            for k in 0..3 {
                let s = simulate_overlap_sample(
                    f_true[k] * t[k],
                    shots,
                    seed + (i * 3 + k) as u64,
                )
                .unwrap();
                measured[k] = s.estimate;
                sig[k] = sig[k].max(s.stderr.max(1e-4));
            }
            cal.push(ThetaMoments { theta: th, measured });
        }
        (cal, sig)
    }

    #[test]
    fn two_stage_recovers_injected_degradation() {
        let dims = DIMS_2X2;
        let f_true = [0.729, 0.612, 0.456];
        let thetas: Vec<f64> =
            [0.0f64, 30.0, 45.0, 60.0, 90.0].iter().map(|d| d.to_radians()).collect();
        let (cal, sig) = simulate_two_stage(f_true, &thetas, 100_000, 900, dims);

        let blind_theta = 70.0f64.to_radians();
        let tb = theoretical_pt_moments(blind_theta, dims).unwrap();
        let mut blind = [0.0; 3];
        for k in 0..3 {
            blind[k] =
                simulate_overlap_sample(f_true[k] * tb[k], 100_000, 77 + k as u64).unwrap().estimate;
        }

        let fit = two_stage_mle(&cal, &[blind], sig, dims).unwrap();
        for (k, name) in ["f2", "f3", "f4"].iter().enumerate() {
            let got = fit.degradation[*name];
            assert!((got - f_true[k]).abs() < 0.01, "{name}: {got} vs {}", f_true[k]);
            assert!((0.0..=1.0).contains(&got));
        }
        assert!((fit.theta_estimates[0] - blind_theta).abs() < 0.02);
        let mu2_phys = fit.physical_features[0]["mu2"];
        assert!((mu2_phys - tb[0]).abs() < 0.02);
    }

    #[test]
    fn two_stage_noiseless_is_exact_and_degenerate_angles_error() {
        let dims = DIMS_2X3;
        let thetas = [20.0f64.to_radians(), 50.0f64.to_radians(), 80.0f64.to_radians()];
        let cal: Vec<ThetaMoments> = thetas
            .iter()
            .map(|&th| ThetaMoments {
                theta: th,
                measured: theoretical_pt_moments(th, dims).unwrap(),
            })
            .collect();
        let blind_theta = 33.0f64.to_radians();
        let blind = theoretical_pt_moments(blind_theta, dims).unwrap();
        let fit = two_stage_mle(&cal, &[blind], [0.01; 3], dims).unwrap();
        for name in ["f2", "f3", "f4"] {
            assert_abs_diff_eq!(fit.degradation[name], 1.0, epsilon = 1e-6);
        }
        assert!((fit.theta_estimates[0] - blind_theta).abs() < 1e-6);

        let degenerate: Vec<ThetaMoments> =
            cal.iter().map(|c| ThetaMoments { theta: thetas[0], ..*c }).collect();
        let err = two_stage_mle(&degenerate, &[], [0.01; 3], dims).unwrap_err();
        assert!(matches!(err, QmError::Identifiability(_)));
    }

    #[test]
    fn two_stage_is_insensitive_to_small_angle_offsets() {
        let dims = DIMS_2X2;
        let f_true = [0.729, 0.612, 0.456];
        let thetas: Vec<f64> =
            [0.0f64, 30.0, 45.0, 60.0, 90.0].iter().map(|d| d.to_radians()).collect();
        let (cal, sig) = simulate_two_stage(f_true, &thetas, 100_000, 901, dims);
        let nominal = two_stage_mle(&cal, &[], sig, dims).unwrap();
        for delta_deg in [-2.0f64, 2.0] {
            let shifted: Vec<ThetaMoments> = cal
                .iter()
                .map(|c| ThetaMoments {
                    theta: (c.theta + delta_deg.to_radians())
                        .clamp(0.0, std::f64::consts::FRAC_PI_2),
                    measured: c.measured,
                })
                .collect();
            let fit = two_stage_mle(&shifted, &[], sig, dims).unwrap();
            for name in ["f2", "f3", "f4"] {
                let rel = (fit.degradation[name] - nominal.degradation[name]).abs()
                    / nominal.degradation[name];
                assert!(rel < 0.01, "{name} moved by {rel} under {delta_deg} deg");
            }
        }
    }

    #[test]
    fn reference_states_span_the_feature_range() {
        let refs = reference_calibration_states().unwrap();
        let quads: Vec<[f64; 4]> = refs.iter().map(|(_, rho)| feature_quad(rho)).collect();
        // product state: all four features exactly 1
        for v in quads[0] {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
        }
        // classical correlated: G1 = 1; misaligned: G1 = 1/2, G2 = 1/4
        assert_abs_diff_eq!(quads[1][1], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(quads[2][1], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(quads[2][3], 0.25, epsilon = 1e-10);
    }

    #[test]
    fn per_circuit_recovers_injected_fidelities() {
        let g_true = [0.164, 0.594, 0.306];
        let refs = reference_calibration_states().unwrap();
        let tree = SeedTree::new(314);
        let mut rng = tree.rng("noise", 0);
        let mut noisy = |v: [f64; 4]| -> [f64; 4] {
            let mut out = [0.0; 4];
            for j in 0..4 {
                let n: f64 = rng.sample(StandardNormal);
                out[j] = g_true[fidelity_index(j)] * v[j] + DEFAULT_SIGMAS[j] * n;
            }
            out
        };
        let cal: Vec<CalPoint> = refs
            .iter()
            .map(|(_, rho)| {
                let thy = feature_quad(rho);
                CalPoint { measured: noisy(thy), theory: thy }
            })
            .collect();
        let truth = feature_quad(&make_horodecki(0.5).unwrap());
        let test = [noisy(truth)];
        let fit =
            per_circuit_mle(&cal, &test, DEFAULT_SIGMAS, FeatureBox::default(), 8, 99).unwrap();
        for (k, name) in FIDELITY_NAMES.iter().enumerate() {
            let got = fit.degradation[*name];
            assert!((got - g_true[k]).abs() < 0.02, "{name}: {got} vs {}", g_true[k]);
            assert!(fit.errors[*name].is_finite());
        }
        // best restarts agree
        assert!(fit.restart_nlls[1] - fit.restart_nlls[0] < 1e-6);
        // recovered features satisfy the physical constraints
        let pf = &fit.physical_features[0];
        assert!(pf["S1"] >= pf["G1"] && pf["G1"] >= 0.0);
        assert!(pf["S2"] >= pf["G2"] && pf["G2"] >= 0.0);
        assert!((1.0 / 9.0..=1.0).contains(&pf["S2"]));
    }

    #[test]
    fn per_circuit_noiseless_reconstructs_calibration_exactly() {
        let g_true = [0.3, 0.6, 0.45];
        let refs = reference_calibration_states().unwrap();
        let cal: Vec<CalPoint> = refs
            .iter()
            .map(|(_, rho)| {
                let thy = feature_quad(rho);
                let mut measured = [0.0; 4];
                for j in 0..4 {
                    measured[j] = g_true[fidelity_index(j)] * thy[j];
                }
                CalPoint { measured, theory: thy }
            })
            .collect();
        let fit =
            per_circuit_mle(&cal, &[], DEFAULT_SIGMAS, FeatureBox::default(), 4, 5).unwrap();
        for (k, name) in FIDELITY_NAMES.iter().enumerate() {
            assert_abs_diff_eq!(fit.degradation[*name], g_true[k], epsilon = 1e-6);
        }
        assert!(fit.nll < 1e-12);
    }

    #[test]
    fn per_circuit_absorbs_unphysical_negative_raw_values() {
        let g_true = [0.164, 0.594, 0.306];
        let refs = reference_calibration_states().unwrap();
        let cal: Vec<CalPoint> = refs
            .iter()
            .map(|(_, rho)| {
                let thy = feature_quad(rho);
                let mut measured = [0.0; 4];
                for j in 0..4 {
                    measured[j] = g_true[fidelity_index(j)] * thy[j];
                }
                CalPoint { measured, theory: thy }
            })
            .collect();
        // a product state whose raw two-copy moment came out negative
        let test = [[0.17, 0.58, -0.085, 0.28]];
        let fit =
            per_circuit_mle(&cal, &test, DEFAULT_SIGMAS, FeatureBox::default(), 6, 8).unwrap();
        let s2 = fit.physical_features[0]["S2"];
        assert!(s2 >= 1.0 / 9.0 - 1e-9, "S2 {s2} left the physical box");
    }

    #[test]
    fn werner_model_matches_anchor_points_and_deviation_profile() {
        let noise = WernerNoiseModel::default();
        let f = (0.438, 0.447);
        let at = |p: f64| werner_asymmetric(p, f.0, f.1, &noise).unwrap();
        assert_abs_diff_eq!(at(0.0).calibrated, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at(1.0).calibrated, -0.75, epsilon = 1e-12);

        // mid-range systematic error: about +2.3% at p = 0.2, under 0.5%
        // beyond p = 0.5
        let theory = |p: f64| -0.75 * p * p * p;
        let dev02 = at(0.2).calibrated / theory(0.2) - 1.0;
        assert!((0.018..=0.028).contains(&dev02), "deviation {dev02}");
        for i in 10..=20 {
            let p = 0.05 * i as f64;
            let dev = (at(p).calibrated / theory(p) - 1.0).abs();
            assert!(dev <= 0.005, "p={p}: dev {dev}");
        }

        // the error bars peak in the interior and collapse to the direct
        // component at p = 1
        assert_abs_diff_eq!(at(1.0).stderr, noise.sigma_direct, epsilon = 1e-12);
        let sigmas: Vec<f64> = (0..=20).map(|i| at(0.05 * i as f64).stderr).collect();
        let peak = (0..sigmas.len()).max_by(|&a, &b| sigmas[a].total_cmp(&sigmas[b])).unwrap();
        let p_peak = 0.05 * peak as f64;
        assert!((0.5..=0.9).contains(&p_peak), "stderr peaks at {p_peak}");
    }

    #[test]
    fn symmetrized_chessboard_has_hermitian_realignment() {
        let c2 = make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 3.0)).unwrap();
        let sym = swap_symmetrized(&c2).unwrap();
        assert!(sym.is_ppt(1e-9));
        let quad = feature_quad(&sym);
        assert!((quad[2] - quad[3]).abs() < 1e-10, "D2 {}", quad[2] - quad[3]);
    }

    #[test]
    fn sweep_separates_strong_from_noise_floor_families() {
        let states: Vec<SweepState> = default_sweep_states()
            .unwrap()
            .into_iter()
            .filter(|s| {
                s.label == "chessboard-C1"
                    || s.label == "chessboard-sym(D2=0)"
                    || s.label == "horodecki(a=0.10)"
            })
            .collect();
        assert_eq!(states.len(), 3);
        let rows = noise_model_sweep(
            &states,
            [0.164, 0.594, 0.306],
            DEFAULT_SIGMAS,
            60,
            4000,
            2026,
        )
        .unwrap();
        let by_label = |l: &str| rows.iter().find(|r| r.label == l).unwrap();
        let c1 = by_label("chessboard-C1");
        let probe = by_label("chessboard-sym(D2=0)");
        let h = by_label("horodecki(a=0.10)");
        assert!(c1.detection_rate > 0.85, "C1 rate {}", c1.detection_rate);
        assert!(h.detection_rate > 0.8, "horodecki(0.10) rate {}", h.detection_rate);
        assert!(
            (0.2..=0.8).contains(&probe.detection_rate),
            "D2=0 probe rate {}",
            probe.detection_rate
        );
        assert!(probe.d2_theory.abs() < 1e-10);
        assert!(c1.mean_d2 > probe.mean_d2);
    }

    #[test]
    fn raw_csv_round_trip_and_schema_validation() {
        let dir = std::env::temp_dir().join(format!("qm_raw_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("raw.csv");
        let rows = vec![
            RawMeasurement {
                state_id: "horo05".into(),
                circuit_tag: "S1".into(),
                shots: 4000,
                p0_estimate: 0.58,
            },
            RawMeasurement {
                state_id: "horo05".into(),
                circuit_tag: "G1".into(),
                shots: 4000,
                p0_estimate: 0.64,
            },
            RawMeasurement {
                state_id: "horo05".into(),
                circuit_tag: "S2".into(),
                shots: 4000,
                p0_estimate: 0.55,
            },
            RawMeasurement {
                state_id: "horo05".into(),
                circuit_tag: "G2".into(),
                shots: 4000,
                p0_estimate: 0.52,
            },
            RawMeasurement {
                state_id: "bell".into(),
                circuit_tag: "MU_3".into(),
                shots: 100_000,
                p0_estimate: 0.625,
            },
        ];
        write_raw_csv(&path, &rows).unwrap();
        let back = read_raw_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        assert_eq!(back[4].tag().unwrap(), CircuitTag::Mu(3));
        assert_abs_diff_eq!(back[0].value(), 0.16, epsilon = 1e-12);

        let quads = feature_quads_from_raw(&back[..4]).unwrap();
        assert_eq!(quads.len(), 1);
        assert_eq!(quads[0].0, "horo05");

        let bad = RawMeasurement {
            state_id: "x".into(),
            circuit_tag: "SIGMA_1".into(),
            shots: 10,
            p0_estimate: 0.5,
        };
        assert!(matches!(bad.tag(), Err(QmError::Schema(_))));
        assert!(feature_quads_from_raw(&back[..3]).is_err());
        std::fs::remove_file(&path).ok();
    }
}
