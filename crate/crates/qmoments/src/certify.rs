//! Ground-truth separability certification.
//!
//! Two independent routes. The first searches for the closest separable
//! state over explicit Caratheodory decompositions (softmax weights over
//! product projectors, Adam with cosine annealing, multi-restart); the
//! Frobenius distance floor `d_f` is the certificate. The second computes
//! the product-vector gap of the range criterion, either directly from the
//! range projector or through augmented moments plus a Vandermonde
//! inversion, which simulates the measurement-only route.

use crate::cmat::{cr, normalize, solve_real, vdot, vec_norm, CMat, C64};
use crate::qstate::{haar_ket, kron_vec, DensityMatrix};
use crate::seeds::SeedTree;
use crate::spectral::{herm_eig, singular_values};
use crate::{QmError, Result};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

/// Optimizer budget for the closest-separable-state search. Three phases:
/// broad search from random starts, refinement around the incumbent, and a
/// low-rate polish. Each phase anneals its learning rate by a factor 100
/// on a cosine schedule.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitBudget {
    pub restarts: usize,
    pub steps_per_phase: [usize; 3],
    pub learning_rates: [f64; 3],
}

impl FitBudget {
    /// Seconds-scale budget: the full phase depths at a fifth of the
    /// restarts. Separable targets need the long annealed chains to reach
    /// d_f below 1e-3; extra restarts do not substitute for depth.
    pub fn desk() -> Self {
        FitBudget {
            restarts: 10,
            steps_per_phase: [2000, 3000, 5000],
            learning_rates: [0.01, 0.003, 0.001],
        }
    }

    /// Full-study budget (hours-scale over many states).
    pub fn paper() -> Self {
        FitBudget {
            restarts: 50,
            steps_per_phase: [2000, 3000, 5000],
            learning_rates: [0.01, 0.003, 0.001],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(QmError::Parameter("restarts must be positive".to_string()));
        }
        if self.steps_per_phase.iter().any(|&s| s == 0) {
            return Err(QmError::Parameter(
                "steps_per_phase must be positive".to_string(),
            ));
        }
        if self.learning_rates.iter().any(|&l| l <= 0.0) {
            return Err(QmError::Parameter(
                "learning_rates must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Explicit separable approximation sigma = sum_k p_k |a_k b_k><a_k b_k|
/// together with its Frobenius distance to the target.
#[derive(Clone, Debug)]
pub struct SeparableDecomposition {
    pub k: usize,
    pub weights: Vec<f64>,
    pub product_vectors: Vec<(Vec<C64>, Vec<C64>)>,
    pub d_f: f64,
}

impl SeparableDecomposition {
    /// Assembles sigma; by construction a valid density matrix.
    pub fn assemble(&self, d: usize) -> CMat {
        let mut sigma = CMat::zeros(d, d);
        for (w, (a, b)) in self.weights.iter().zip(&self.product_vectors) {
            let ab = kron_vec(a, b);
            for i in 0..d {
                for j in 0..d {
                    sigma[(i, j)] += ab[i] * ab[j].conj() * cr(*w);
                }
            }
        }
        sigma
    }
}

// Parameter vector layout: K softmax logits, then K unnormalized A vectors
// as interleaved (re, im) pairs, then K unnormalized B vectors likewise.
fn n_params(k: usize, d_a: usize, d_b: usize) -> usize {
    k + 2 * k * (d_a + d_b)
}

fn read_cvec(x: &[f64], offset: usize, d: usize) -> Vec<C64> {
    (0..d)
        .map(|i| C64::new(x[offset + 2 * i], x[offset + 2 * i + 1]))
        .collect()
}

fn softmax(w: &[f64]) -> Vec<f64> {
    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

struct Unpacked {
    p: Vec<f64>,
    a: Vec<Vec<C64>>,
    b: Vec<Vec<C64>>,
    ua_norm: Vec<f64>,
    ub_norm: Vec<f64>,
}

fn unpack(x: &[f64], k: usize, d_a: usize, d_b: usize) -> Unpacked {
    let p = softmax(&x[0..k]);
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    let mut ua_norm = Vec::with_capacity(k);
    let mut ub_norm = Vec::with_capacity(k);
    for t in 0..k {
        let ua = read_cvec(x, k + 2 * d_a * t, d_a);
        let ub = read_cvec(x, k + 2 * d_a * k + 2 * d_b * t, d_b);
        ua_norm.push(vec_norm(&ua));
        ub_norm.push(vec_norm(&ub));
        a.push(normalize(&ua));
        b.push(normalize(&ub));
    }
    Unpacked {
        p,
        a,
        b,
        ua_norm,
        ub_norm,
    }
}

fn assemble_sigma(u: &Unpacked, d: usize) -> CMat {
    let mut sigma = CMat::zeros(d, d);
    for t in 0..u.p.len() {
        let ab = kron_vec(&u.a[t], &u.b[t]);
        let w = cr(u.p[t]);
        for i in 0..d {
            for j in 0..d {
                sigma[(i, j)] += ab[i] * ab[j].conj() * w;
            }
        }
    }
    sigma
}

/// delta contracted over B with |b>: M_ij = <i, b| delta |j, b>.
fn contract_b(delta: &CMat, b: &[C64], d_a: usize, d_b: usize) -> CMat {
    CMat::from_fn(d_a, d_a, |i, j| {
        let mut s = C64::ZERO;
        for m in 0..d_b {
            for n in 0..d_b {
                s += b[m].conj() * delta[(i * d_b + m, j * d_b + n)] * b[n];
            }
        }
        s
    })
}

/// delta contracted over A with |a>: M_mn = <a, m| delta |a, n>.
fn contract_a(delta: &CMat, a: &[C64], d_a: usize, d_b: usize) -> CMat {
    CMat::from_fn(d_b, d_b, |m, n| {
        let mut s = C64::ZERO;
        for i in 0..d_a {
            for j in 0..d_a {
                s += a[i].conj() * delta[(i * d_b + m, j * d_b + n)] * a[j];
            }
        }
        s
    })
}

fn squared_distance(rho: &CMat, u: &Unpacked) -> f64 {
    let delta = assemble_sigma(u, rho.n_rows()).sub(rho);
    let f = delta.fro_norm();
    f * f
}

/// Loss ||sigma(x) - rho||_F^2 and its gradient in the unconstrained
/// parameters. The chain rule through softmax and vector normalization is
/// carried analytically; `gradient_matches_central_differences` pins it
/// against finite differences.
fn loss_grad(rho: &CMat, x: &[f64], k: usize, d_a: usize, d_b: usize) -> (f64, Vec<f64>) {
    let u = unpack(x, k, d_a, d_b);
    let d = d_a * d_b;
    let delta = assemble_sigma(&u, d).sub(rho);
    let loss = {
        let f = delta.fro_norm();
        f * f
    };
    let mut g = vec![0.0; x.len()];

    // t_t = <a_t b_t| delta |a_t b_t>; softmax gradient needs all of them
    let mut t_vals = Vec::with_capacity(k);
    for t in 0..k {
        let ab = kron_vec(&u.a[t], &u.b[t]);
        let dab = delta.mat_vec(&ab);
        t_vals.push(vdot(&ab, &dab).re);
    }
    let t_bar: f64 = u.p.iter().zip(&t_vals).map(|(p, t)| p * t).sum();
    for j in 0..k {
        g[j] = 2.0 * u.p[j] * (t_vals[j] - t_bar);
    }

    for t in 0..k {
        // c = dL/da* = 2 p_t M_A a_t, then chain through a = ua/||ua||
        let m_a = contract_b(&delta, &u.b[t], d_a, d_b);
        let c_a: Vec<C64> = m_a
            .mat_vec(&u.a[t])
            .into_iter()
            .map(|v| v * cr(2.0 * u.p[t]))
            .collect();
        let proj = vdot(&c_a, &u.a[t]).re;
        let off = k + 2 * d_a * t;
        for i in 0..d_a {
            let gi = (c_a[i] - u.a[t][i] * cr(proj)) / cr(u.ua_norm[t]);
            g[off + 2 * i] = 2.0 * gi.re;
            g[off + 2 * i + 1] = 2.0 * gi.im;
        }

        let m_b = contract_a(&delta, &u.a[t], d_a, d_b);
        let c_b: Vec<C64> = m_b
            .mat_vec(&u.b[t])
            .into_iter()
            .map(|v| v * cr(2.0 * u.p[t]))
            .collect();
        let proj = vdot(&c_b, &u.b[t]).re;
        let off = k + 2 * d_a * k + 2 * d_b * t;
        for i in 0..d_b {
            let gi = (c_b[i] - u.b[t][i] * cr(proj)) / cr(u.ub_norm[t]);
            g[off + 2 * i] = 2.0 * gi.re;
            g[off + 2 * i + 1] = 2.0 * gi.im;
        }
    }
    (loss, g)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    let lr_end = lr0 / 100.0;
    let frac = if total > 1 {
        step as f64 / (total - 1) as f64
    } else {
        1.0
    };
    lr_end + 0.5 * (lr0 - lr_end) * (1.0 + (PI * frac).cos())
}

/// One Adam run; tracks the best loss seen including the starting point,
/// so warm starts can never lose ground.
fn run_adam(
    rho: &CMat,
    x0: Vec<f64>,
    k: usize,
    d_a: usize,
    d_b: usize,
    steps: usize,
    lr0: f64,
) -> (f64, Vec<f64>) {
    let mut x = x0;
    let mut best = (squared_distance(rho, &unpack(&x, k, d_a, d_b)), x.clone());
    let mut opt = Adam::new(x.len());
    for s in 0..steps {
        let (loss, g) = loss_grad(rho, &x, k, d_a, d_b);
        if loss < best.0 {
            best = (loss, x.clone());
        }
        opt.step(&mut x, &g, cosine_lr(lr0, s, steps));
    }
    let final_loss = squared_distance(rho, &unpack(&x, k, d_a, d_b));
    if final_loss < best.0 {
        best = (final_loss, x);
    }
    best
}

/// Best product approximation of a pure ket: reshape to d_a x d_b and take
/// the top singular pair, computed from the 3x3 Gram eigenproblem.
fn closest_product_ket(v: &[C64], d_a: usize, d_b: usize) -> (Vec<C64>, Vec<C64>) {
    let m = CMat::from_fn(d_a, d_b, |i, j| v[i * d_b + j]);
    let gram = m.dagger().mul(&m);
    let (_, vecs) = herm_eig(&gram);
    let w: Vec<C64> = (0..d_b).map(|i| vecs[(i, 0)]).collect();
    let a = normalize(&m.mat_vec(&w));
    let b: Vec<C64> = w.iter().map(|x| x.conj()).collect();
    (a, b)
}

/// Restart initialization. Odd restarts draw product vectors uniformly;
/// even restarts project random range vectors rho*g to their closest
/// product form, which starts the search on the target's support and is
/// what lets low-rank separable targets reach the global minimum within
/// the desk budget.
fn random_init(
    rho: &CMat,
    k: usize,
    d_a: usize,
    d_b: usize,
    range_informed: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut x = vec![0.0; n_params(k, d_a, d_b)];
    for xi in x.iter_mut().take(k) {
        let n: f64 = StandardNormal.sample(rng);
        *xi = 0.3 * n;
    }
    for t in 0..k {
        let (a, b) = if range_informed {
            let g = haar_ket(d_a * d_b, rng);
            let in_range = normalize(&rho.mat_vec(&g));
            closest_product_ket(&in_range, d_a, d_b)
        } else {
            (haar_ket(d_a, rng), haar_ket(d_b, rng))
        };
        let off = k + 2 * d_a * t;
        for i in 0..d_a {
            x[off + 2 * i] = a[i].re;
            x[off + 2 * i + 1] = a[i].im;
        }
        let off = k + 2 * d_a * k + 2 * d_b * t;
        for i in 0..d_b {
            x[off + 2 * i] = b[i].re;
            x[off + 2 * i + 1] = b[i].im;
        }
    }
    x
}

fn jitter(x: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(rng);
            v + sigma * n
        })
        .collect()
}

/// Pads a K'-term parameter vector to K terms; the new logits sit 20 below
/// the minimum so the added terms carry negligible weight and the assembled
/// sigma (hence the loss) is unchanged.
fn pad_params(
    x: &[f64],
    k_old: usize,
    k_new: usize,
    d_a: usize,
    d_b: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = vec![0.0; n_params(k_new, d_a, d_b)];
    let w_min = x[0..k_old].iter().cloned().fold(f64::INFINITY, f64::min);
    out[0..k_old].copy_from_slice(&x[0..k_old]);
    for w in out.iter_mut().take(k_new).skip(k_old) {
        *w = w_min - 20.0;
    }
    for t in 0..k_new {
        let (src_a, src_b) = if t < k_old {
            (
                read_cvec(x, k_old + 2 * d_a * t, d_a),
                read_cvec(x, k_old + 2 * d_a * k_old + 2 * d_b * t, d_b),
            )
        } else {
            (haar_ket(d_a, rng), haar_ket(d_b, rng))
        };
        let off = k_new + 2 * d_a * t;
        for i in 0..d_a {
            out[off + 2 * i] = src_a[i].re;
            out[off + 2 * i + 1] = src_a[i].im;
        }
        let off = k_new + 2 * d_a * k_new + 2 * d_b * t;
        for i in 0..d_b {
            out[off + 2 * i] = src_b[i].re;
            out[off + 2 * i + 1] = src_b[i].im;
        }
    }
    out
}

fn fit_with_warm_start(
    rho: &DensityMatrix,
    k: usize,
    budget: &FitBudget,
    warm: Option<Vec<f64>>,
    seeds: &SeedTree,
) -> (f64, Vec<f64>) {
    let (d_a, d_b) = {
        let dims = rho.dims();
        (dims.d_a, dims.d_b)
    };
    let m = rho.mat();

    let mut inits: Vec<Vec<f64>> = Vec::with_capacity(budget.restarts);
    for r in 0..budget.restarts as u64 {
        if r == 0 {
            if let Some(w) = &warm {
                inits.push(w.clone());
                continue;
            }
        }
        inits.push(random_init(
            m,
            k,
            d_a,
            d_b,
            r % 2 == 0,
            &mut seeds.rng("phase1", r),
        ));
    }
    let mut best = inits
        .into_par_iter()
        .map(|x0| run_adam(m, x0, k, d_a, d_b, budget.steps_per_phase[0], budget.learning_rates[0]))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();

    for (phase, sigma) in [(1usize, 0.05), (2, 0.01)] {
        let domain = if phase == 1 { "phase2" } else { "phase3" };
        let incumbent = best.1.clone();
        let refined = (0..budget.restarts as u64)
            .into_par_iter()
            .map(|r| {
                let x0 = if r == 0 {
                    incumbent.clone()
                } else {
                    jitter(&incumbent, sigma, &mut seeds.rng(domain, r))
                };
                run_adam(
                    m,
                    x0,
                    k,
                    d_a,
                    d_b,
                    budget.steps_per_phase[phase],
                    budget.learning_rates[phase],
                )
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        if refined.0 < best.0 {
            best = refined;
        }
    }
    best
}

/// Closest-separable-state search at a fixed term count K.
pub fn caratheodory_fit(
    rho: &DensityMatrix,
    k: usize,
    budget: &FitBudget,
) -> Result<SeparableDecomposition> {
    Ok(caratheodory_sweep(rho, &[k], budget)?.pop().unwrap())
}

/// Fits an increasing sequence of term counts, warm-starting each fit from
/// the previous best padded with zero-weight terms. Because every run also
/// scores its starting point, d_f is non-increasing along the sweep.
pub fn caratheodory_sweep(
    rho: &DensityMatrix,
    ks: &[usize],
    budget: &FitBudget,
) -> Result<Vec<SeparableDecomposition>> {
    budget.validate()?;
    if ks.is_empty() || ks[0] == 0 {
        return Err(QmError::Parameter(
            "term counts must be positive".to_string(),
        ));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QmError::Parameter(
            "term counts must be strictly increasing".to_string(),
        ));
    }
    let (d_a, d_b) = {
        let dims = rho.dims();
        (dims.d_a, dims.d_b)
    };
    let seeds = SeedTree::new(0xCA7A).subtree("caratheodory", ks[0] as u64);

    let mut out = Vec::with_capacity(ks.len());
    let mut warm: Option<(usize, Vec<f64>)> = None;
    for &k in ks {
        let warm_padded = warm.as_ref().map(|(k_old, x)| {
            pad_params(x, *k_old, k, d_a, d_b, &mut seeds.rng("pad", k as u64))
        });
        let (loss, x) =
            fit_with_warm_start(rho, k, budget, warm_padded, &seeds.subtree("k", k as u64));
        let u = unpack(&x, k, d_a, d_b);
        out.push(SeparableDecomposition {
            k,
            weights: u.p.clone(),
            product_vectors: u.a.into_iter().zip(u.b).collect(),
            d_f: loss.max(0.0).sqrt(),
        });
        warm = Some((k, x));
    }
    Ok(out)
}

/// Restart budget for the product-vector gap search.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GapBudget {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for GapBudget {
    fn default() -> Self {
        GapBudget {
            restarts: 32,
            max_iters: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapMethod {
    Direct,
    Vandermonde,
}

#[derive(Clone, Debug)]
pub struct PvGapResult {
    pub gap: f64,
    pub argmin_pair: (Vec<C64>, Vec<C64>),
    pub method: GapMethod,
    /// Vandermonde route only
    pub condition_number: Option<f64>,
    /// per-restart converged gaps; consensus across restarts is the
    /// practical convergence diagnostic for this nonconvex search
    pub restart_gaps: Vec<f64>,
}

fn range_projector(rho: &DensityMatrix, rank_tol: f64) -> (CMat, Vec<f64>) {
    let (vals, vecs) = herm_eig(rho.mat());
    let d = rho.dim();
    let mut p = CMat::zeros(d, d);
    let mut kept = Vec::new();
    for (idx, &lam) in vals.iter().enumerate() {
        if lam > rank_tol {
            kept.push(lam);
            for i in 0..d {
                for j in 0..d {
                    p[(i, j)] += vecs[(i, idx)] * vecs[(j, idx)].conj();
                }
            }
        }
    }
    (p, kept)
}

/// Alternating maximization of <a,b|P|a,b> from a given start: with one
/// factor fixed the optimum over the other is the top eigenvector of the
/// contracted operator, so each half-step is exact and the overlap is
/// non-decreasing.
fn alternate_to_convergence(
    p: &CMat,
    d_a: usize,
    d_b: usize,
    max_iters: usize,
    mut a: Vec<C64>,
    mut b: Vec<C64>,
) -> (f64, Vec<C64>, Vec<C64>) {
    let mut overlap = 0.0_f64;
    for _ in 0..max_iters {
        let m_a = contract_b(p, &b, d_a, d_b);
        let (vals, vecs) = herm_eig(&m_a);
        a = (0..d_a).map(|i| vecs[(i, 0)]).collect();
        let m_b = contract_a(p, &a, d_a, d_b);
        let (vals_b, vecs_b) = herm_eig(&m_b);
        b = (0..d_b).map(|i| vecs_b[(i, 0)]).collect();
        let new = vals_b[0].max(vals[0]);
        if (new - overlap).abs() < 1e-13 {
            overlap = new;
            break;
        }
        overlap = new;
    }
    (overlap, a, b)
}

fn perturb_ket(v: &[C64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let noisy: Vec<C64> = v
        .iter()
        .map(|&x| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            x + C64::new(sigma * re, sigma * im)
        })
        .collect();
    normalize(&noisy)
}

const HOP_SIGMAS: [f64; 2] = [0.5, 0.0];
const HOPS: usize = 40;

/// One restart: alternation to convergence plus basin hops. The alternating
/// map has a handful of attracting fixed points on rank-deficient states,
/// and the widest basin is often not the best one; perturb-and-reconverge
/// at mixed scales (sigma 0 means a fresh random pair) makes each restart
/// find the global basin with high probability on its own.
fn restart_overlap(
    p: &CMat,
    d_a: usize,
    d_b: usize,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<C64>, Vec<C64>) {
    let a0 = haar_ket(d_a, rng);
    let b0 = haar_ket(d_b, rng);
    let mut best = alternate_to_convergence(p, d_a, d_b, max_iters, a0, b0);
    for hop in 0..HOPS {
        let sigma = HOP_SIGMAS[hop % HOP_SIGMAS.len()];
        let (a0, b0) = if sigma == 0.0 {
            (haar_ket(d_a, rng), haar_ket(d_b, rng))
        } else {
            (
                perturb_ket(&best.1, sigma, rng),
                perturb_ket(&best.2, sigma, rng),
            )
        };
        let cand = alternate_to_convergence(p, d_a, d_b, max_iters, a0, b0);
        if cand.0 > best.0 {
            best = cand;
        }
    }
    best
}

fn best_product_overlap(
    p: &CMat,
    d_a: usize,
    d_b: usize,
    budget: &GapBudget,
) -> (f64, Vec<C64>, Vec<C64>, Vec<f64>) {
    let seeds = SeedTree::new(0xCA7A).subtree("pvgap", 0);
    let runs: Vec<(f64, Vec<C64>, Vec<C64>)> = (0..budget.restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| restart_overlap(p, d_a, d_b, budget.max_iters, &mut seeds.rng("restart", r)))
        .collect();
    let gaps: Vec<f64> = runs.iter().map(|(ov, _, _)| 1.0 - ov).collect();
    let best = runs
        .into_iter()
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .unwrap();
    (best.0, best.1, best.2, gaps)
}

/// Product-vector gap from the range projector: 1 minus the best product
/// overlap with range(rho). Zero for every separable state; positive for
/// PPT entangled states violating the range criterion.
pub fn pv_gap_direct(rho: &DensityMatrix, rank_tol: f64, budget: &GapBudget) -> PvGapResult {
    let dims = rho.dims();
    let (p, _) = range_projector(rho, rank_tol);
    let (ov, a, b, gaps) = best_product_overlap(&p, dims.d_a, dims.d_b, budget);
    PvGapResult {
        gap: (1.0 - ov).max(-1e-9),
        argmin_pair: (a, b),
        method: GapMethod::Direct,
        condition_number: None,
        restart_gaps: gaps,
    }
}

/// k-th augmented moment Tr[rho^k |a,b><a,b|], equal to sum_i lambda_i^k p_i
/// over the nonzero spectrum with p_i the squared eigenvector overlaps.
pub fn augmented_moment(rho: &DensityMatrix, a: &[C64], b: &[C64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(QmError::Parameter("moment order must be >= 1".to_string()));
    }
    if (vec_norm(a) - 1.0).abs() > 1e-9 || (vec_norm(b) - 1.0).abs() > 1e-9 {
        return Err(QmError::Parameter(
            "augmented moment needs unit product vectors".to_string(),
        ));
    }
    let ab = kron_vec(a, b);
    let mut v = ab.clone();
    for _ in 0..k {
        v = rho.mat().mat_vec(&v);
    }
    Ok(vdot(&ab, &v).re)
}

const KAPPA_RIDGE_SWITCH: f64 = 1e10;
const KAPPA_WARN: f64 = 1e12;
const RIDGE: f64 = 1e-12;

/// Solves A x = rhs with column equilibration before partially pivoted
/// elimination; the scaling keeps Vandermonde columns comparable when the
/// eigenvalues spread over decades.
fn solve_column_scaled(a: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut scale = vec![0.0; n];
    for (j, s) in scale.iter_mut().enumerate() {
        *s = (0..n).map(|i| a[i][j].abs()).fold(0.0, f64::max);
        if *s == 0.0 {
            return None;
        }
    }
    let scaled: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / scale[j]).collect())
        .collect();
    let y = solve_real(&scaled, rhs)?;
    Some((0..n).map(|j| y[j] / scale[j]).collect())
}

/// Product-vector gap from measured quantities only: eigenvalues (stage 1,
/// spectral screening) and augmented moments at the probe point. Solves
/// V p = m with V_ki = lambda_i^k and returns gap = 1 - c^T m where
/// c = V^{-T} 1, plus kappa(V). Above kappa 1e10 the solve falls back to a
/// ridge-regularized least-squares form.
pub fn vandermonde_gap(eigenvalues: &[f64], moments: &[f64]) -> Result<(f64, f64)> {
    let r = eigenvalues.len();
    if r == 0 || moments.len() != r {
        return Err(QmError::Dimension(format!(
            "need matching nonzero eigenvalue and moment lists, got {r} and {}",
            moments.len()
        )));
    }
    if eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(QmError::Parameter(
            "eigenvalues must be strictly positive".to_string(),
        ));
    }
    let mut min_sep = f64::INFINITY;
    for i in 0..r {
        for j in i + 1..r {
            min_sep = min_sep.min((eigenvalues[i] - eigenvalues[j]).abs());
        }
    }
    if r > 1 && min_sep < 1e-14 {
        return Err(QmError::Parameter(format!(
            "eigenvalues must be distinct (min separation {min_sep:.3e})"
        )));
    }

    let v: Vec<Vec<f64>> = (1..=r)
        .map(|k| eigenvalues.iter().map(|l| l.powi(k as i32)).collect())
        .collect();
    let svs = singular_values(&CMat::from_real_rows(&v));
    let kappa = if svs[r - 1] > 0.0 {
        svs[0] / svs[r - 1]
    } else {
        f64::INFINITY
    };
    if kappa > KAPPA_WARN {
        eprintln!(
            "vandermonde_gap: kappa(V) = {kappa:.3e} (min eigenvalue separation {min_sep:.3e}); \
             shot noise would be amplified by this factor"
        );
    }

    let gap = if kappa <= KAPPA_RIDGE_SWITCH {
        // c = V^{-T} 1, i.e. solve V^T c = 1
        let vt: Vec<Vec<f64>> = (0..r).map(|i| (0..r).map(|j| v[j][i]).collect()).collect();
        let c = solve_column_scaled(&vt, &vec![1.0; r])
            .ok_or_else(|| QmError::Parameter("Vandermonde system is singular".to_string()))?;
        1.0 - c.iter().zip(moments).map(|(ci, mi)| ci * mi).sum::<f64>()
    } else {
        // (V^T V + ridge I) p = V^T m
        let mut normal = vec![vec![0.0; r]; r];
        let mut rhs = vec![0.0; r];
        for i in 0..r {
            for j in 0..r {
                normal[i][j] = (0..r).map(|k| v[k][i] * v[k][j]).sum();
            }
            normal[i][i] += RIDGE;
            rhs[i] = (0..r).map(|k| v[k][i] * moments[k]).sum();
        }
        let p = solve_real(&normal, &rhs)
            .ok_or_else(|| QmError::Parameter("ridge system is singular".to_string()))?;
        1.0 - p.iter().sum::<f64>()
    };
    Ok((gap, kappa))
}

const RANK_TOL_DEFAULT: f64 = 1e-8;

/// Groups a descending nonzero spectrum into distinct values (relative
/// tolerance on the largest eigenvalue); overlaps with a degenerate
/// eigenspace merge into one Vandermonde unknown.
fn distinct_eigenvalues(spectrum: &[f64], rel_tol: f64) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    let scale = spectrum.first().copied().unwrap_or(1.0);
    for &l in spectrum {
        match out.last_mut() {
            Some((rep, count)) if (*rep / *count as f64 - l).abs() < rel_tol * scale => {
                *rep += l;
                *count += 1;
            }
            _ => out.push((l, 1)),
        }
    }
    out.into_iter().map(|(s, c)| s / c as f64).collect()
}

/// Measurement-only product-vector gap: the probe pair comes from the same
/// alternating search, but the reported gap uses only augmented moments and
/// the Vandermonde inversion.
pub fn pv_gap_vandermonde(rho: &DensityMatrix, budget: &GapBudget) -> Result<PvGapResult> {
    let dims = rho.dims();
    let (p, spectrum) = range_projector(rho, RANK_TOL_DEFAULT);
    let (_, a, b, gaps) = best_product_overlap(&p, dims.d_a, dims.d_b, budget);
    let distinct = distinct_eigenvalues(&spectrum, 1e-8);
    let moments: Result<Vec<f64>> = (1..=distinct.len())
        .map(|k| augmented_moment(rho, &a, &b, k))
        .collect();
    let (gap, kappa) = vandermonde_gap(&distinct, &moments?)?;
    Ok(PvGapResult {
        gap,
        argmin_pair: (a, b),
        method: GapMethod::Vandermonde,
        condition_number: Some(kappa),
        restart_gaps: gaps,
    })
}

/// Separable verdicts require clearing both certificates; these floors sit
/// an order of magnitude above what converged separable fits reach at the
/// desk budget.
pub const DF_SEP_THRESHOLD: f64 = 1e-3;
pub const GAP_SEP_THRESHOLD: f64 = 5e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "SEP")]
    Sep,
    #[serde(rename = "BE-candidate")]
    BeCandidate,
    #[serde(rename = "NPT")]
    Npt,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationReport {
    pub state_id: String,
    pub d_f: f64,
    pub k: usize,
    pub gap_direct: f64,
    pub gap_vandermonde: f64,
    pub kappa: f64,
    pub verdict: Verdict,
}

impl CertificationReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Two-stage certification: spectral screening (negativity) first, then the
/// Caratheodory distance and both gap routes for PPT states.
pub fn certify_state(
    rho: &DensityMatrix,
    state_id: &str,
    k: usize,
    budget: &FitBudget,
    gap_budget: &GapBudget,
) -> Result<CertificationReport> {
    let npt = *rho.pt_eigvals().last().unwrap() < -1e-9;
    let fit = caratheodory_fit(rho, k, budget)?;
    let direct = pv_gap_direct(rho, RANK_TOL_DEFAULT, gap_budget);
    let vander = pv_gap_vandermonde(rho, gap_budget)?;
    let verdict = if npt {
        Verdict::Npt
    } else if fit.d_f > DF_SEP_THRESHOLD || direct.gap > GAP_SEP_THRESHOLD {
        Verdict::BeCandidate
    } else {
        Verdict::Sep
    };
    Ok(CertificationReport {
        state_id: state_id.to_string(),
        d_f: fit.d_f,
        k,
        gap_direct: direct.gap,
        gap_vandermonde: vander.gap,
        kappa: vander.condition_number.unwrap_or(f64::INFINITY),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{
        make_chessboard, make_horodecki, make_product, make_tiles, projector, random_separable,
        ChessboardParams, DIMS_3X3,
    };
    use rand::SeedableRng;

    #[test]
    fn gradient_matches_central_differences() {
        let rho = make_tiles(0.0).unwrap();
        let (d_a, d_b) = (3, 3);
        let k = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_init(rho.mat(), k, d_a, d_b, true, &mut rng);
        let (_, g) = loss_grad(rho.mat(), &x, k, d_a, d_b);

        let h = 1e-6;
        let mut checked = 0;
        for trial in 0..20 {
            let i = (trial * 13 + 5) % x.len();
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let lp = squared_distance(rho.mat(), &unpack(&xp, k, d_a, d_b));
            let lm = squared_distance(rho.mat(), &unpack(&xm, k, d_a, d_b));
            let fd = (lp - lm) / (2.0 * h);
            if fd.abs() < 1e-7 && g[i].abs() < 1e-7 {
                continue;
            }
            let rel = (g[i] - fd).abs() / fd.abs().max(g[i].abs());
            assert!(rel < 1e-5, "param {i}: analytic {} vs fd {fd}", g[i]);
            checked += 1;
        }
        assert!(checked >= 15);
    }

    #[test]
    fn warm_started_sweep_is_monotone_in_k() {
        let rho = make_tiles(0.0).unwrap();
        let budget = FitBudget {
            restarts: 4,
            steps_per_phase: [150, 150, 150],
            learning_rates: [0.01, 0.003, 0.001],
        };
        let fits = caratheodory_sweep(&rho, &[4, 6, 9], &budget).unwrap();
        assert!(fits[1].d_f <= fits[0].d_f + 1e-12);
        assert!(fits[2].d_f <= fits[1].d_f + 1e-12);
        for fit in &fits {
            let wsum: f64 = fit.weights.iter().sum();
            assert!((wsum - 1.0).abs() < 1e-12);
            assert!(fit.weights.iter().all(|&w| w >= 0.0));
            for (a, b) in &fit.product_vectors {
                assert!((vec_norm(a) - 1.0).abs() < 1e-12);
                assert!((vec_norm(b) - 1.0).abs() < 1e-12);
            }
            // assembled sigma is a state: Hermitian, unit trace, PSD
            let sigma = fit.assemble(9);
            assert!(sigma.herm_deviation() < 1e-12);
            assert!((sigma.trace().re - 1.0).abs() < 1e-12);
            let eigs = herm_eig(&sigma).0;
            assert!(*eigs.last().unwrap() > -1e-12);
        }
    }

    #[test]
    fn sweep_rejects_bad_arguments() {
        let rho = make_tiles(0.0).unwrap();
        let budget = FitBudget::desk();
        assert!(caratheodory_sweep(&rho, &[], &budget).is_err());
        assert!(caratheodory_sweep(&rho, &[0], &budget).is_err());
        assert!(caratheodory_sweep(&rho, &[4, 4], &budget).is_err());
        let broken = FitBudget {
            restarts: 0,
            ..FitBudget::desk()
        };
        assert!(caratheodory_fit(&rho, 4, &broken).is_err());
    }

    #[test]
    fn augmented_moment_reference_points() {
        // pure product state: every moment is 1 at its own factors
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = haar_ket(3, &mut rng);
        let b = haar_ket(3, &mut rng);
        let rho = make_product(&projector(&a), &projector(&b)).unwrap();
        for k in 1..=4 {
            let m = augmented_moment(&rho, &a, &b, k).unwrap();
            assert!((m - 1.0).abs() < 1e-12, "k={k}: {m}");
        }

        // maximally mixed: m_1 = 1/9 for any probe
        let iso = DensityMatrix::new(DIMS_3X3, CMat::identity(9).scale_re(1.0 / 9.0)).unwrap();
        let m1 = augmented_moment(&iso, &a, &b, 1).unwrap();
        assert!((m1 - 1.0 / 9.0).abs() < 1e-12);

        // spectral form: m_k = sum_i lambda_i^k |<e_i|a,b>|^2
        let tiles = make_tiles(0.0).unwrap();
        let (vals, vecs) = herm_eig(tiles.mat());
        let ab = kron_vec(&a, &b);
        for k in 1..=4 {
            let direct = augmented_moment(&tiles, &a, &b, k).unwrap();
            let mut oracle = 0.0;
            for (i, &lam) in vals.iter().enumerate() {
                let col: Vec<C64> = (0..9).map(|r| vecs[(r, i)]).collect();
                oracle += lam.powi(k as i32) * vdot(&col, &ab).norm_sqr();
            }
            assert!((direct - oracle).abs() < 1e-12, "k={k}");
        }

        // preconditions
        assert!(augmented_moment(&tiles, &a, &b, 0).is_err());
        let long: Vec<C64> = a.iter().map(|&v| v * cr(2.0)).collect();
        assert!(augmented_moment(&tiles, &long, &b, 1).is_err());
    }

    #[test]
    fn vandermonde_scalar_case_and_preconditions() {
        // r = 1 pure state: V = (lambda) = (1), gap = 1 - m1
        let (gap, kappa) = vandermonde_gap(&[1.0], &[0.73]).unwrap();
        assert!((gap - 0.27).abs() < 1e-12);
        assert!((kappa - 1.0).abs() < 1e-12);

        assert!(vandermonde_gap(&[0.5, 0.5], &[0.3, 0.2]).is_err());
        assert!(vandermonde_gap(&[0.5, -0.1], &[0.3, 0.2]).is_err());
        assert!(vandermonde_gap(&[0.5, 0.3], &[0.3]).is_err());
        assert!(vandermonde_gap(&[], &[]).is_err());
    }

    #[test]
    fn vandermonde_agrees_with_projector_overlap() {
        // degenerate Tiles spectrum collapses to one unknown; generic
        // chessboard keeps rank-4 distinct eigenvalues
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rho in [
            make_tiles(0.0).unwrap(),
            make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 3.0)).unwrap(),
        ] {
            let (p, spectrum) = range_projector(&rho, 1e-8);
            for _ in 0..5 {
                let a = haar_ket(3, &mut rng);
                let b = haar_ket(3, &mut rng);
                let ab = kron_vec(&a, &b);
                let oracle = 1.0 - vdot(&ab, &p.mat_vec(&ab)).re;

                let distinct = distinct_eigenvalues(&spectrum, 1e-8);
                let moments: Vec<f64> = (1..=distinct.len())
                    .map(|k| augmented_moment(&rho, &a, &b, k).unwrap())
                    .collect();
                let (gap, kappa) = vandermonde_gap(&distinct, &moments).unwrap();
                assert!(
                    (gap - oracle).abs() < 1e-9 * kappa.max(1.0),
                    "gap {gap} vs oracle {oracle} at kappa {kappa}"
                );
            }
        }
    }

    #[test]
    fn chessboard_conditioning_is_moderate() {
        let rho = make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 3.0)).unwrap();
        let (_, spectrum) = range_projector(&rho, 1e-8);
        let distinct = distinct_eigenvalues(&spectrum, 1e-8);
        assert_eq!(distinct.len(), 4);
        let moments: Vec<f64> = (1..=4)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let a = haar_ket(3, &mut rng);
                let b = haar_ket(3, &mut rng);
                augmented_moment(&rho, &a, &b, k).unwrap()
            })
            .collect();
        let (_, kappa) = vandermonde_gap(&distinct, &moments).unwrap();
        assert!(
            (4e2..4e4).contains(&kappa),
            "kappa {kappa} outside the expected order of magnitude"
        );
    }

    #[test]
    fn gap_separates_families() {
        let budget = GapBudget::default();

        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let sep = random_separable(6, DIMS_3X3, &mut rng);
        let r = pv_gap_direct(&sep, 1e-8, &budget);
        assert!(r.gap < 1e-6, "separable gap {}", r.gap);
        assert!(r.gap >= -1e-9);

        let hor = make_horodecki(0.5).unwrap();
        let r = pv_gap_direct(&hor, 1e-8, &budget);
        assert!(r.gap < 1e-6, "Horodecki gap {}", r.gap);

        let chess = make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 3.0)).unwrap();
        let r_direct = pv_gap_direct(&chess, 1e-8, &budget);
        assert!(r_direct.gap > 5e-5, "chessboard gap {}", r_direct.gap);

        // measurement-only route agrees within the conditioning allowance
        let r_v = pv_gap_vandermonde(&chess, &budget).unwrap();
        let kappa = r_v.condition_number.unwrap();
        let tol = (1e-12 * kappa).max(1e-6);
        assert!(
            (r_direct.gap - r_v.gap).abs() < tol,
            "direct {} vs vandermonde {} at kappa {kappa}",
            r_direct.gap,
            r_v.gap
        );

        // restart consensus on a rank-4 state
        let best = r_direct.gap;
        let agree = r_direct
            .restart_gaps
            .iter()
            .filter(|&&g| (g - best).abs() < 1e-6)
            .count();
        assert!(
            agree * 10 >= r_direct.restart_gaps.len() * 8,
            "only {agree}/{} restarts agree",
            r_direct.restart_gaps.len()
        );
    }

    #[test]
    fn verdict_combines_negativity_distance_and_gap() {
        let budget = FitBudget::desk();
        let gap_budget = GapBudget {
            restarts: 8,
            max_iters: 200,
        };

        let chess = make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 3.0)).unwrap();
        let rep = certify_state(&chess, "chess-c2", 10, &budget, &gap_budget).unwrap();
        assert_eq!(rep.verdict, Verdict::BeCandidate);
        assert!(rep.gap_direct > GAP_SEP_THRESHOLD);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sep = random_separable(3, DIMS_3X3, &mut rng);
        let rep = certify_state(&sep, "sep-3", 12, &budget, &gap_budget).unwrap();
        assert_eq!(rep.verdict, Verdict::Sep, "d_f {} gap {}", rep.d_f, rep.gap_direct);

        let bell = crate::qstate::make_bell();
        let rep = certify_state(&bell, "bell", 10, &budget, &gap_budget).unwrap();
        assert_eq!(rep.verdict, Verdict::Npt);

        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"NPT\""));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(0.01, 0, 500) - 0.01).abs() < 1e-15);
        assert!((cosine_lr(0.01, 499, 500) - 0.0001).abs() < 1e-15);
        let mid = cosine_lr(0.01, 250, 500);
        assert!(mid < 0.01 && mid > 0.0001);
    }
}
