//! Exact k-copy operator oracle. Everything here is a dense matrix on at
//! most 8 qubits (256x256); no shortcuts, because this module is the trusted
//! reference for the moment measurements: permutation traces reproduce μ_k
//! and I_k, and the chirality correlator reproduces C_k by three routes.
//!
//! Copy ordering is copy-major with A before B inside each copy
//! (A₁B₁A₂B₂...), so ρ^⊗k is the plain Kronecker power of ρ. Subsystem
//! factor f of the copy space has position f in the mixed-radix index, with
//! factor 0 most significant, matching `CMat::kron`.

use crate::cmat::{c, cr, CMat};
use crate::qstate::DensityMatrix;
use crate::{QmError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Permutation of tensor factors: factor f moves to position `pos_map[f]`.
/// Requires dims[pos_map[f]] == dims[f].
pub fn factor_permutation(dims: &[usize], pos_map: &[usize]) -> CMat {
    let n = dims.len();
    assert_eq!(pos_map.len(), n);
    let mut seen = vec![false; n];
    for (f, &t) in pos_map.iter().enumerate() {
        assert!(t < n && !seen[t], "pos_map is not a permutation");
        assert_eq!(dims[t], dims[f], "factor {f} moved to a slot of different dimension");
        seen[t] = true;
    }
    let total: usize = dims.iter().product();
    let mut out = CMat::zeros(total, total);
    let mut digits = vec![0usize; n];
    for from in 0..total {
        let mut rem = from;
        for f in (0..n).rev() {
            digits[f] = rem % dims[f];
            rem /= dims[f];
        }
        let mut to = 0usize;
        // digit of the destination index at position t is the digit the
        // source carried at the factor mapped onto t
        let mut inv = vec![0usize; n];
        for (f, &t) in pos_map.iter().enumerate() {
            inv[t] = f;
        }
        for t in 0..n {
            to = to * dims[t] + digits[inv[t]];
        }
        out[(to, from)] = cr(1.0);
    }
    out
}

/// One-site operator embedded as I ⊗ op ⊗ I at factor position f.
pub fn op_on_factor(dims: &[usize], f: usize, op: &CMat) -> CMat {
    assert_eq!(op.n_rows(), dims[f]);
    let before: usize = dims[..f].iter().product();
    let after: usize = dims[f + 1..].iter().product();
    CMat::identity(before).kron(op).kron(&CMat::identity(after))
}

fn pauli_on(dims: &[usize], f: usize, axis: usize) -> CMat {
    op_on_factor(dims, f, &crate::spectral::paulis()[axis])
}

/// Cyclic shift among the listed factor positions: copies[c] → copies[c+1].
pub fn cycle_on(dims: &[usize], copies: &[usize], inverse: bool) -> CMat {
    let k = copies.len();
    let mut pos_map: Vec<usize> = (0..dims.len()).collect();
    for c in 0..k {
        let (from, to) = if inverse {
            (copies[(c + 1) % k], copies[c])
        } else {
            (copies[c], copies[(c + 1) % k])
        };
        pos_map[from] = to;
    }
    factor_permutation(dims, &pos_map)
}

/// χ_ijk = (1/8) Σ_abc ε_abc σᵢᵃ σⱼᵇ σₖᶜ on qubit factors i, j, k.
pub fn chi_on(dims: &[usize], i: usize, j: usize, k: usize) -> CMat {
    assert!(i != j && j != k && i != k);
    let d: usize = dims.iter().product();
    let mut out = CMat::zeros(d, d);
    const EPS: [(usize, usize, usize, f64); 6] = [
        (0, 1, 2, 1.0),
        (1, 2, 0, 1.0),
        (2, 0, 1, 1.0),
        (0, 2, 1, -1.0),
        (2, 1, 0, -1.0),
        (1, 0, 2, -1.0),
    ];
    for (a, b, cc, sign) in EPS {
        let term = pauli_on(dims, i, a).mul(&pauli_on(dims, j, b)).mul(&pauli_on(dims, k, cc));
        out = out.add(&term.scale_re(sign / 8.0));
    }
    out
}

/// Ω over the listed single-qubit copies: Ω₃ = χ₁₂₃ and
/// Ω₄ = ½ Σ_{i<j<k} χ_ijk.
pub fn omega_on(dims: &[usize], copies: &[usize]) -> CMat {
    let d: usize = dims.iter().product();
    match copies.len() {
        3 => chi_on(dims, copies[0], copies[1], copies[2]),
        4 => {
            let mut out = CMat::zeros(d, d);
            for i in 0..4 {
                for j in i + 1..4 {
                    for k in j + 1..4 {
                        out = out.add(&chi_on(dims, copies[i], copies[j], copies[k]));
                    }
                }
            }
            out.scale_re(0.5)
        }
        k => panic!("omega is defined for 3 or 4 copies, got {k}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorTag {
    Cycle,
    AntiCycle,
    Swap(usize, usize),
    SingletProj(usize, usize),
    Chi(usize, usize, usize),
    Omega,
    Delta,
}

#[derive(Clone, Debug)]
pub struct MultiCopyOperator {
    pub tag: OperatorTag,
    pub n_qubits: usize,
    pub mat: CMat,
}

/// Operators on k single-qubit copies (one qubit per copy). Pair tags index
/// copies; Cycle/AntiCycle/Omega/Delta act on all of them.
pub fn build_operator(tag: OperatorTag, k_copies: usize) -> Result<MultiCopyOperator> {
    if !(2..=4).contains(&k_copies) {
        return Err(QmError::Dimension(format!(
            "k-copy oracle supports 2..=4 copies, got {k_copies}"
        )));
    }
    let dims = vec![2usize; k_copies];
    let all: Vec<usize> = (0..k_copies).collect();
    let check = |idx: &[usize]| -> Result<()> {
        for &q in idx {
            if q >= k_copies {
                return Err(QmError::Parameter(format!("copy index {q} out of range")));
            }
        }
        Ok(())
    };
    let mat = match tag {
        OperatorTag::Cycle => cycle_on(&dims, &all, false),
        OperatorTag::AntiCycle => cycle_on(&dims, &all, true),
        OperatorTag::Swap(i, j) => {
            check(&[i, j])?;
            let mut pos: Vec<usize> = (0..k_copies).collect();
            pos.swap(i, j);
            factor_permutation(&dims, &pos)
        }
        OperatorTag::SingletProj(i, j) => {
            check(&[i, j])?;
            let mut pos: Vec<usize> = (0..k_copies).collect();
            pos.swap(i, j);
            let s = factor_permutation(&dims, &pos);
            CMat::identity(1 << k_copies).sub(&s).scale_re(0.5)
        }
        OperatorTag::Chi(i, j, k) => {
            check(&[i, j, k])?;
            chi_on(&dims, i, j, k)
        }
        OperatorTag::Omega => {
            if k_copies < 3 {
                return Err(QmError::Dimension("omega needs at least 3 copies".into()));
            }
            omega_on(&dims, &all)
        }
        OperatorTag::Delta => {
            let fwd = cycle_on(&dims, &all, false);
            cycle_on(&dims, &all, true).sub(&fwd)
        }
    };
    Ok(MultiCopyOperator { tag, n_qubits: k_copies, mat })
}

/// ‖(σ⁻¹ - σ) - 4iΩ_k‖_F on the k-copy single-qubit space.
pub fn verify_delta_omega(k: usize) -> Result<f64> {
    let delta = build_operator(OperatorTag::Delta, k)?.mat;
    let omega = build_operator(OperatorTag::Omega, k)?.mat;
    Ok(delta.sub(&omega.scale(c(0.0, 4.0))).fro_norm())
}

fn kron_power(m: &CMat, k: usize) -> CMat {
    let mut out = m.clone();
    for _ in 1..k {
        out = out.kron(m);
    }
    out
}

fn copy_space_dims(rho: &DensityMatrix, k: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (da, db) = (rho.dims().d_a, rho.dims().d_b);
    let mut dims = Vec::with_capacity(2 * k);
    let mut a_pos = Vec::with_capacity(k);
    let mut b_pos = Vec::with_capacity(k);
    for copy in 0..k {
        dims.push(da);
        dims.push(db);
        a_pos.push(2 * copy);
        b_pos.push(2 * copy + 1);
    }
    (dims, a_pos, b_pos)
}

fn guard_copies(rho: &DensityMatrix, k: usize) -> Result<()> {
    let limit = if rho.dim() <= 6 { 4 } else { 2 };
    if k < 2 || k > limit {
        return Err(QmError::Dimension(format!(
            "k = {k} outside the copy guard (max {limit} for dimension {})",
            rho.dim()
        )));
    }
    Ok(())
}

/// C_k = 8 Tr[Ω_A Ω_B ρ^⊗k] for a two-qubit ρ, k ∈ {3, 4}.
pub fn correlator_ck(rho: &DensityMatrix, k: usize) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(QmError::Dimension(format!(
            "chirality correlator is defined on 2x2, got dimension {}",
            rho.dim()
        )));
    }
    if !(3..=4).contains(&k) {
        return Err(QmError::Parameter(format!("correlator needs k in {{3,4}}, got {k}")));
    }
    let (dims, a_pos, b_pos) = copy_space_dims(rho, k);
    let op = omega_on(&dims, &a_pos).mul(&omega_on(&dims, &b_pos));
    let val = op.mul(&kron_power(rho.mat(), k)).trace() * cr(8.0);
    debug_assert!(val.im.abs() < 1e-10, "C_{k} imaginary leakage {val}");
    Ok(val.re)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceVariant {
    /// μ_k: anticyclic on A, cyclic on B.
    Mu,
    /// I_k: cyclic on both subsystems.
    I,
}

/// Permutation-operator route to the moments: Tr[(σ_A^±1 ⊗ σ_B) ρ^⊗k].
pub fn permutation_trace(rho: &DensityMatrix, k: usize, variant: TraceVariant) -> Result<f64> {
    guard_copies(rho, k)?;
    let (dims, a_pos, b_pos) = copy_space_dims(rho, k);
    let a_inverse = matches!(variant, TraceVariant::Mu);
    let op = cycle_on(&dims, &a_pos, a_inverse).mul(&cycle_on(&dims, &b_pos, false));
    let val = op.mul(&kron_power(rho.mat(), k)).trace();
    debug_assert!(val.im.abs() < 1e-9, "permutation trace imaginary leakage {val}");
    Ok(val.re)
}

/// C_k through the anti-Hermitian difference operator: Tr[(Δ_A ⊗ σ_B) ρ^⊗k].
pub fn correlator_ck_delta(rho: &DensityMatrix, k: usize) -> Result<f64> {
    guard_copies(rho, k)?;
    Ok(permutation_trace(rho, k, TraceVariant::Mu)? - permutation_trace(rho, k, TraceVariant::I)?)
}

/// ln k! with a small-k table and a Stirling tail; |error| < 1e-12 over u64.
fn ln_factorial(k: u64) -> f64 {
    if k < 16 {
        let mut acc = 0.0;
        for i in 2..=k {
            acc += (i as f64).ln();
        }
        return acc;
    }
    let x = k as f64;
    let x2 = x * x;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x2)
        + 1.0 / (1260.0 * x2 * x2 * x)
}

/// Binomial draw by inverse CDF enumerated outward from the mode, so the pmf
/// is evaluated in log space and never underflows even at n ~ 10⁶.
pub fn binomial_sample(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    assert!((0.0..=1.0).contains(&p), "p = {p} outside [0,1]");
    if n == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    let ln_pmf = |m: u64| -> f64 {
        ln_factorial(n) - ln_factorial(m) - ln_factorial(n - m)
            + m as f64 * p.ln()
            + (n - m) as f64 * (1.0 - p).ln()
    };
    let mode = (((n + 1) as f64) * p).floor().min(n as f64) as u64;
    let u: f64 = rng.random();
    let mut acc = ln_pmf(mode).exp();
    if u < acc {
        return mode;
    }
    // alternate below/above the mode; step ratios avoid refactorials
    let (mut lo, mut hi) = (mode, mode);
    let (mut p_lo, mut p_hi) = (acc, acc);
    let odds = p / (1.0 - p);
    loop {
        let can_lo = lo > 0;
        let can_hi = hi < n;
        if !can_lo && !can_hi {
            // numerical remainder: return the farthest enumerated point
            return hi;
        }
        if can_lo {
            p_lo *= lo as f64 / ((n - lo + 1) as f64 * odds);
            lo -= 1;
            acc += p_lo;
            if u < acc {
                return lo;
            }
        }
        if can_hi {
            p_hi *= (n - hi) as f64 * odds / (hi + 1) as f64;
            hi += 1;
            acc += p_hi;
            if u < acc {
                return hi;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HadamardTest {
    pub p0: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Ancilla statistics of the controlled-Π test: p₀ = (1 + Re Tr[Π ρ_copies])/2,
/// finite-shot estimate X = 2·(successes/shots) - 1.
pub fn hadamard_test(
    op: &CMat,
    rho_copies: &CMat,
    shots: u64,
    rng: &mut ChaCha8Rng,
) -> Result<HadamardTest> {
    if op.n_rows() != rho_copies.n_rows() || !op.is_square() || !rho_copies.is_square() {
        return Err(QmError::Dimension("operator and copy state must share a square shape".into()));
    }
    let dev = op.mul(&op.dagger()).sub(&CMat::identity(op.n_rows())).max_abs();
    if dev > 1e-10 {
        return Err(QmError::Validation(format!(
            "controlled operator must be unitary (deviation {dev:.2e})"
        )));
    }
    if shots == 0 {
        return Err(QmError::Parameter("shots must be at least 1".into()));
    }
    let x = op.mul(rho_copies).trace().re;
    let p0 = ((1.0 + x) / 2.0).clamp(0.0, 1.0);
    let hits = binomial_sample(shots, p0, rng);
    let estimate = 2.0 * (hits as f64 / shots as f64) - 1.0;
    let stderr = ((1.0 - estimate * estimate).max(0.0) / shots as f64).sqrt();
    Ok(HadamardTest { p0, estimate, stderr })
}
