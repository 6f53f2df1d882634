//! Moment calculus. Partial-transpose moments μ_k = Tr[(ρ^T_A)^k] and purity
//! moments I_k = Tr[ρ^k] are computed as Hermitian matrix-power traces, never
//! by eigensolve, so the Newton-Girard spectrum reconstruction below stays an
//! honest independent route. Realignment moments Σ_k/G_k/D_k (and the
//! partial-transpose variants SP_k/GP_k/DP_k) feed the bound-entanglement
//! features.

use crate::cmat::CMat;
use crate::qstate::{BipartiteDims, DensityMatrix};
use crate::roots::{cluster_roots, elementary_from_power_sums, monic_roots, power_sums_of};
use crate::spectral;
use crate::{QmError, Result};

/// μ_k, I_k and their difference C_k = μ_k - I_k for k = 2..=k_max.
#[derive(Clone, Debug)]
pub struct MomentSet {
    dims: BipartiteDims,
    mu: Vec<f64>,
    purity: Vec<f64>,
}

impl MomentSet {
    /// Wrap precomputed moment lists (index 0 ↔ k = 2). Used by tests to
    /// feed synthetic moment sets into the spectrum reconstruction.
    pub fn from_raw(dims: BipartiteDims, mu: Vec<f64>, purity: Vec<f64>) -> Self {
        assert_eq!(mu.len(), purity.len());
        assert!(mu.len() + 1 <= dims.total());
        assert!((mu[0] - purity[0]).abs() < 1e-10, "mu_2 must equal I_2");
        for v in mu.iter().chain(&purity) {
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(v), "moment {v} outside [-1,1]");
        }
        MomentSet { dims, mu, purity }
    }

    pub fn dims(&self) -> BipartiteDims {
        self.dims
    }

    pub fn k_max(&self) -> usize {
        self.mu.len() + 1
    }

    pub fn mu(&self, k: usize) -> f64 {
        assert!((2..=self.k_max()).contains(&k));
        self.mu[k - 2]
    }

    pub fn purity(&self, k: usize) -> f64 {
        assert!((2..=self.k_max()).contains(&k));
        self.purity[k - 2]
    }

    pub fn c(&self, k: usize) -> f64 {
        self.mu(k) - self.purity(k)
    }

    pub fn c3(&self) -> f64 {
        self.c(3)
    }

    pub fn c4(&self) -> f64 {
        self.c(4)
    }
}

/// Trace-power moments of ρ and ρ^T_A up to k_max.
pub fn compute_moments(rho: &DensityMatrix, k_max: usize) -> MomentSet {
    let d = rho.dim();
    assert!((2..=d).contains(&k_max), "k_max = {k_max} outside 2..={d}");
    let pt = rho.partial_transpose(true);
    let mu_c = spectral::trace_powers(&pt, k_max);
    let i_c = spectral::trace_powers(rho.mat(), k_max);
    let take_re = |v: &[num_complex::Complex64]| -> Vec<f64> {
        v[1..]
            .iter()
            .map(|z| {
                debug_assert!(z.im.abs() < 1e-10, "imaginary leakage {z}");
                z.re
            })
            .collect()
    };
    let ms = MomentSet { dims: rho.dims(), mu: take_re(&mu_c), purity: take_re(&i_c) };
    debug_assert!((ms.mu(2) - ms.purity(2)).abs() < 1e-10);
    ms
}

/// Spectrum of ρ^T_A reconstructed from moments alone: Newton's identities
/// give the elementary symmetric polynomials (with μ₁ = 1 implicit), the
/// characteristic polynomial is solved in closed form for d ≤ 4 and by
/// Durand-Kerner above, and near-degenerate roots (within 1e-7) are merged.
/// Errors when the reconstructed roots fail to reproduce the input power
/// sums to 1e-6, which flags a moment set inconsistent with a real spectrum.
pub fn newton_girard_spectrum(moments: &MomentSet) -> Result<Vec<f64>> {
    let d = moments.dims().total();
    assert_eq!(
        moments.k_max(),
        d,
        "spectrum reconstruction needs moments up to k = {d}"
    );
    let mut p = Vec::with_capacity(d);
    p.push(1.0);
    for k in 2..=d {
        p.push(moments.mu(k));
    }
    let e = elementary_from_power_sums(&p);
    let coeffs: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(j, &ej)| if j % 2 == 0 { -ej } else { ej })
        .collect();
    let roots = cluster_roots(&monic_roots(&coeffs), 1e-7);
    let mut spectrum: Vec<f64> = roots.iter().map(|z| z.re).collect();
    let p_back = power_sums_of(&spectrum, d);
    let residual = p_back
        .iter()
        .zip(&p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if residual > 1e-6 {
        return Err(QmError::InconsistentMoments { residual });
    }
    spectrum.sort_by(|a, b| b.total_cmp(a));
    Ok(spectrum)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativityMethod {
    Direct,
    NewtonGirard,
}

#[derive(Clone, Debug)]
pub struct NegativityResult {
    pub negativity: f64,
    pub pt_spectrum: Vec<f64>,
    pub method: NegativityMethod,
}

fn negative_part_sum(spectrum: &[f64]) -> f64 {
    spectrum.iter().filter(|&&l| l < 0.0).map(|l| -l).sum()
}

/// Negativity 𝒩 = (‖ρ^T_A‖₁ - 1)/2 = Σ|λ_i < 0|, either from a direct
/// eigensolve of the partial transpose or through the moment route.
pub fn negativity(rho: &DensityMatrix, method: NegativityMethod) -> Result<NegativityResult> {
    let spectrum = match method {
        NegativityMethod::Direct => rho.pt_eigvals(),
        NegativityMethod::NewtonGirard => {
            let ms = compute_moments(rho, rho.dim());
            newton_girard_spectrum(&ms)?
        }
    };
    Ok(NegativityResult { negativity: negative_part_sum(&spectrum), pt_spectrum: spectrum, method })
}

/// Pure-state chirality relation C₄ = -4𝒩²(1-𝒩²), valid branch 𝒩 ∈ [0, ½].
pub fn c4_from_negativity(n: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&n) {
        return Err(QmError::Parameter(format!("negativity {n} outside [0, 1/2]")));
    }
    Ok(-4.0 * n * n * (1.0 - n * n))
}

/// Inverse of the pure-state relation: 𝒩 = √((1-√(1+C₄))/2) on C₄ ∈ [-¾, 0].
pub fn negativity_from_c4(c4: f64) -> Result<f64> {
    if !(-0.75..=0.0).contains(&c4) {
        return Err(QmError::Parameter(format!("C4 = {c4} outside [-3/4, 0]")));
    }
    Ok(((1.0 - (1.0 + c4).sqrt()) / 2.0).sqrt())
}

/// C₄ - (3/4)·det(T) for a two-qubit state; vanishes when both local Bloch
/// vectors are zero (Bell-diagonal states and their local rotations).
pub fn c4_dett_residual(rho: &DensityMatrix) -> f64 {
    assert_eq!(rho.dim(), 4, "det(T) relation is defined on 2x2");
    let c4 = compute_moments(rho, 4).c4();
    let f = spectral::fano_decompose(rho.mat());
    c4 - 0.75 * f.det_t()
}

pub const REALIGN_K_MAX: usize = 9;

/// Ratio features; NaN marks an undefined (0/0 or vanishing-denominator)
/// value, to be imputed downstream.
#[derive(Clone, Copy, Debug)]
pub struct MomentRatios {
    pub s2s6_over_s4sq: f64,
    pub g2g6_over_g4sq: f64,
    pub s2sq_over_s4: f64,
    pub sp2sq_over_sp4: f64,
    pub q2: f64,
    pub q4: f64,
    pub qp2: f64,
    pub qp4: f64,
    pub dq2: f64,
}

/// Realignment moments of R(ρ) and of R(ρ^T_A): Σ_k (singular-value moments),
/// G_k = Re Tr[R^k] (square R only), gaps D_k = Σ_k - G_k, and ratios.
#[derive(Clone, Debug)]
pub struct RealignMomentSet {
    pub sigma: [f64; REALIGN_K_MAX],
    pub g: [f64; REALIGN_K_MAX],
    pub d_gap: [f64; REALIGN_K_MAX],
    pub sp: [f64; REALIGN_K_MAX],
    pub gp: [f64; REALIGN_K_MAX],
    pub dp: [f64; REALIGN_K_MAX],
    pub delta_g2: f64,
    pub ratios: MomentRatios,
}

impl RealignMomentSet {
    /// 1-indexed accessors.
    pub fn sigma_k(&self, k: usize) -> f64 {
        self.sigma[k - 1]
    }

    pub fn g_k(&self, k: usize) -> f64 {
        self.g[k - 1]
    }

    pub fn d_k(&self, k: usize) -> f64 {
        self.d_gap[k - 1]
    }

    /// δG_k = G_k - GP_k; zero for even k on real states, 2Tr[R_-^k] for odd.
    pub fn delta_g(&self, k: usize) -> f64 {
        self.g[k - 1] - self.gp[k - 1]
    }
}

fn sv_moments(m: &CMat) -> [f64; REALIGN_K_MAX] {
    let sv = spectral::singular_values(m);
    std::array::from_fn(|i| sv.iter().map(|s| s.powi(i as i32 + 1)).sum())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den.abs() < 1e-14 || !den.is_finite() || !num.is_finite() {
        f64::NAN
    } else {
        num / den
    }
}

pub fn compute_realign_moments(rho: &DensityMatrix) -> RealignMomentSet {
    let dims = rho.dims();
    let square = dims.d_a == dims.d_b;
    let real_state = rho.mat().max_imag() < 1e-10;
    let r = rho.realign();
    let pt = rho.partial_transpose(true);
    let rp = spectral::realign(&pt, dims.d_a, dims.d_b);

    let sigma = sv_moments(&r);
    let sp = sv_moments(&rp);

    let re_traces = |m: &CMat| -> [f64; REALIGN_K_MAX] {
        let tp = spectral::trace_powers(m, REALIGN_K_MAX);
        std::array::from_fn(|i| {
            let z = tp[i];
            if real_state {
                debug_assert!(z.im.abs() < 1e-8, "imaginary leakage {z} in G_{}", i + 1);
            }
            z.re
        })
    };
    let (g, gp) = if square {
        (re_traces(&r), re_traces(&rp))
    } else {
        ([f64::NAN; REALIGN_K_MAX], [f64::NAN; REALIGN_K_MAX])
    };
    let d_gap = std::array::from_fn(|i| sigma[i] - g[i]);
    let dp = std::array::from_fn(|i| sp[i] - gp[i]);
    let delta_g2 = g[1] - gp[1];

    let q2 = ratio(g[1], sigma[1]);
    let qp2 = ratio(gp[1], sp[1]);
    let ratios = MomentRatios {
        s2s6_over_s4sq: ratio(sigma[1] * sigma[5], sigma[3] * sigma[3]),
        g2g6_over_g4sq: ratio(g[1] * g[5], g[3] * g[3]),
        s2sq_over_s4: ratio(sigma[1] * sigma[1], sigma[3]),
        sp2sq_over_sp4: ratio(sp[1] * sp[1], sp[3]),
        q2,
        q4: ratio(g[3], sigma[3]),
        qp2,
        qp4: ratio(gp[3], sp[3]),
        dq2: q2 - qp2,
    };

    RealignMomentSet { sigma, g, d_gap, sp, gp, dp, delta_g2, ratios }
}

/// Fixed column order shared by every moment CSV this crate writes.
pub fn moment_csv_header() -> Vec<String> {
    let mut h = Vec::new();
    for k in 2..=9 {
        h.push(format!("mu{k}"));
    }
    for k in 2..=9 {
        h.push(format!("I{k}"));
    }
    h.push("C3".into());
    h.push("C4".into());
    for (tag, n) in [("S", 9), ("G", 9), ("D", 9), ("SP", 9), ("GP", 9), ("DP", 9)] {
        for k in 1..=n {
            h.push(format!("{tag}{k}"));
        }
    }
    for tail in ["dG2", "Q2", "Q4", "QP2", "QP4", "dQ2", "S2sq_S4", "SP2sq_SP4", "S2S6_S4sq", "G2G6_G4sq"] {
        h.push(tail.into());
    }
    h
}

fn fmt_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// One row matching [`moment_csv_header`]; undefined entries are empty.
pub fn moment_csv_row(ms: &MomentSet, rms: &RealignMomentSet) -> Vec<String> {
    let mut row = Vec::new();
    for k in 2..=9 {
        row.push(if k <= ms.k_max() { fmt_cell(ms.mu(k)) } else { String::new() });
    }
    for k in 2..=9 {
        row.push(if k <= ms.k_max() { fmt_cell(ms.purity(k)) } else { String::new() });
    }
    row.push(if ms.k_max() >= 3 { fmt_cell(ms.c3()) } else { String::new() });
    row.push(if ms.k_max() >= 4 { fmt_cell(ms.c4()) } else { String::new() });
    for arr in [&rms.sigma, &rms.g, &rms.d_gap, &rms.sp, &rms.gp, &rms.dp] {
        for &v in arr.iter() {
            row.push(fmt_cell(v));
        }
    }
    let r = &rms.ratios;
    for v in [
        rms.delta_g2,
        r.q2,
        r.q4,
        r.qp2,
        r.qp4,
        r.dq2,
        r.s2sq_over_s4,
        r.sp2sq_over_sp4,
        r.s2s6_over_s4sq,
        r.g2g6_over_g4sq,
    ] {
        row.push(fmt_cell(v));
    }
    row
}
