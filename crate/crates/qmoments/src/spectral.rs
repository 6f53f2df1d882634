//! Spectral primitives on small dense complex matrices: partial transpose,
//! realignment, a cyclic Jacobi Hermitian eigensolver, SVD via the Gram
//! matrix, row-swap permutation sectors, and Bloch/Gell-Mann expansions.
//!
//! Matrix dimensions stay at or below 256, so O(d³) sweeps are cheap and we
//! keep every kernel in-crate for bit-stable, dependency-free numerics.

use crate::cmat::{c, cr, CMat, C64};

/// Transpose the indices of one subsystem of a bipartite matrix.
/// Row/column composite index convention: (a, b) -> a * d_b + b.
pub fn partial_transpose(rho: &CMat, d_a: usize, d_b: usize, on_a: bool) -> CMat {
    let d = d_a * d_b;
    assert_eq!(rho.n_rows(), d);
    assert_eq!(rho.n_cols(), d);
    let mut out = CMat::zeros(d, d);
    for a1 in 0..d_a {
        for b1 in 0..d_b {
            for a2 in 0..d_a {
                for b2 in 0..d_b {
                    let (r, c) = if on_a {
                        (a2 * d_b + b1, a1 * d_b + b2)
                    } else {
                        (a1 * d_b + b2, a2 * d_b + b1)
                    };
                    out[(r, c)] = rho[(a1 * d_b + b1, a2 * d_b + b2)];
                }
            }
        }
    }
    out
}

/// Realignment: R[(i,k),(j,l)] = rho[(i,j),(k,l)], a d_a² × d_b² matrix.
/// ‖R‖_F = ‖rho‖_F since this is a pure reshuffle of entries.
pub fn realign(rho: &CMat, d_a: usize, d_b: usize) -> CMat {
    let d = d_a * d_b;
    assert_eq!(rho.n_rows(), d);
    assert_eq!(rho.n_cols(), d);
    let mut out = CMat::zeros(d_a * d_a, d_b * d_b);
    for i in 0..d_a {
        for k in 0..d_a {
            for j in 0..d_b {
                for l in 0..d_b {
                    out[(i * d_a + k, j * d_b + l)] = rho[(i * d_b + j, k * d_b + l)];
                }
            }
        }
    }
    out
}

/// Reduced state of one subsystem: trace out B (keep_a) or A.
pub fn partial_trace(rho: &CMat, d_a: usize, d_b: usize, keep_a: bool) -> CMat {
    let d = d_a * d_b;
    assert_eq!(rho.n_rows(), d);
    assert_eq!(rho.n_cols(), d);
    if keep_a {
        CMat::from_fn(d_a, d_a, |a1, a2| {
            (0..d_b).map(|b| rho[(a1 * d_b + b, a2 * d_b + b)]).sum()
        })
    } else {
        CMat::from_fn(d_b, d_b, |b1, b2| {
            (0..d_a).map(|a| rho[(a * d_b + b1, a * d_b + b2)]).sum()
        })
    }
}

/// Permutation P|i,k> = |k,i> on a d² space, built from the index rule.
pub fn swap_permutation(d: usize) -> CMat {
    let mut p = CMat::zeros(d * d, d * d);
    for i in 0..d {
        for k in 0..d {
            p[(k * d + i, i * d + k)] = C64::ONE;
        }
    }
    p
}

const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diag_norm(a: &CMat) -> f64 {
    let n = a.n_rows();
    let mut s = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                s += a[(p, q)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Cyclic complex Jacobi diagonalization. Returns (eigenvalues descending,
/// unitary V with matching columns): M = V diag(λ) V†.
pub fn herm_eig(m: &CMat) -> (Vec<f64>, CMat) {
    assert!(m.is_square());
    let dev = m.herm_deviation();
    assert!(
        dev < 1e-8,
        "herm_eig requires a Hermitian matrix (max deviation {dev:.3e})"
    );
    let n = m.n_rows();
    // symmetrize exactly so roundoff in the input cannot leak into phases
    let mut a = m.add(&m.dagger()).scale_re(0.5);
    let mut v = CMat::identity(n);
    let scale = a.fro_norm().max(1e-300);
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diag_norm(&a) < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                jacobi_rotate(&mut a, &mut v, p, q);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let vals: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
    let vecs = CMat::from_fn(n, n, |r, col| v[(r, order[col])]);
    (vals, vecs)
}

/// Eigenvalues only, descending.
pub fn herm_eigvals(m: &CMat) -> Vec<f64> {
    herm_eig(m).0
}

/// One rotation annihilating a[(p,q)]. The phase of a_pq is folded into the
/// rotation so the 2×2 subproblem reduces to the real symmetric case.
fn jacobi_rotate(a: &mut CMat, v: &mut CMat, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag < 1e-300 {
        a[(p, q)] = C64::ZERO;
        a[(q, p)] = C64::ZERO;
        return;
    }
    let phase = apq / mag;
    let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let cth = 1.0 / (1.0 + t * t).sqrt();
    let sth = t * cth;
    let n = a.n_rows();
    // A <- J† A J with J[p][p]=J[q][q]=c, J[p][q]=s·phase, J[q][p]=-s·phase*
    for i in 0..n {
        let aip = a[(i, p)];
        let aiq = a[(i, q)];
        a[(i, p)] = aip * cth - aiq * sth * phase.conj();
        a[(i, q)] = aip * sth * phase + aiq * cth;
    }
    for i in 0..n {
        let api = a[(p, i)];
        let aqi = a[(q, i)];
        a[(p, i)] = api * cth - aqi * sth * phase;
        a[(q, i)] = api * sth * phase.conj() + aqi * cth;
    }
    // the rotated diagonal is real by construction; pin the zeros exactly
    a[(p, q)] = C64::ZERO;
    a[(q, p)] = C64::ZERO;
    a[(p, p)] = cr(a[(p, p)].re);
    a[(q, q)] = cr(a[(q, q)].re);
    for i in 0..n {
        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = vip * cth - viq * sth * phase.conj();
        v[(i, q)] = vip * sth * phase + viq * cth;
    }
}

/// Singular values, nonnegative descending, by one-sided Jacobi
/// (Hestenes) orthogonalization of the columns. Unlike the Gram-matrix
/// route this keeps full relative accuracy for tiny singular values, which
/// the realignment identities rely on at the 1e-9 level.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    // work on the tall orientation so columns outnumber nothing
    let mut a = if m.n_rows() >= m.n_cols() {
        m.clone()
    } else {
        m.dagger()
    };
    let (rows, cols) = (a.n_rows(), a.n_cols());
    let col = |a: &CMat, j: usize| (0..rows).map(|i| a[(i, j)]).collect::<Vec<_>>();
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let cp = col(&a, p);
                let cq = col(&a, q);
                let app: f64 = cp.iter().map(|z| z.norm_sqr()).sum();
                let aqq: f64 = cq.iter().map(|z| z.norm_sqr()).sum();
                let apq: C64 = cp.iter().zip(&cq).map(|(x, y)| x.conj() * y).sum();
                let scale = (app * aqq).sqrt();
                if scale <= 0.0 || apq.norm() <= tol * scale {
                    continue;
                }
                off = off.max(apq.norm() / scale);
                // complex Jacobi rotation zeroing the (p,q) inner product
                let phase = apq / apq.norm();
                let tau = (aqq - app) / (2.0 * apq.norm());
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * cr(c) - aiq * phase.conj() * cr(s);
                    a[(i, q)] = aip * phase * cr(s) + aiq * cr(c);
                }
            }
        }
        if off <= tol {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| a[(i, j)].norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Nuclear (trace) norm Σσ.
pub fn nuclear_norm(m: &CMat) -> f64 {
    singular_values(m).iter().sum()
}

/// Tr[M^k] by repeated multiplication.
pub fn trace_power(m: &CMat, k: usize) -> C64 {
    assert!(m.is_square() && k >= 1);
    let mut acc = m.clone();
    for _ in 1..k {
        acc = acc.mul(m);
    }
    acc.trace()
}

/// Tr[M^k] for k = 1..=k_max in one pass of cumulative products.
pub fn trace_powers(m: &CMat, k_max: usize) -> Vec<C64> {
    assert!(m.is_square() && k_max >= 1);
    let mut out = Vec::with_capacity(k_max);
    let mut acc = m.clone();
    out.push(acc.trace());
    for _ in 1..k_max {
        acc = acc.mul(m);
        out.push(acc.trace());
    }
    out
}

/// Blocks of R(ρ) in the eigenbasis of the row-swap permutation P.
/// Defined for real-entried states on d×d systems, where [R, P] = 0.
#[derive(Clone, Debug)]
pub struct SectorDecomposition {
    /// symmetric-sector block, dimension d(d+1)/2
    pub r_plus: CMat,
    /// antisymmetric-sector block, dimension d(d-1)/2
    pub r_minus: CMat,
}

impl SectorDecomposition {
    pub fn r_minus_fro(&self) -> f64 {
        self.r_minus.fro_norm()
    }
}

/// Split R(ρ) into P-sectors. Errors when the state has complex entries
/// (the commutation [R,P]=0 holds only for real ρ) or d_a ≠ d_b.
pub fn sector_decompose(
    rho: &CMat,
    d_a: usize,
    d_b: usize,
) -> Result<SectorDecomposition, crate::QmError> {
    if d_a != d_b {
        return Err(crate::QmError::NotApplicable(
            "P-sector decomposition needs equal subsystem dimensions".into(),
        ));
    }
    let im = rho.max_imag();
    if im > 1e-10 {
        return Err(crate::QmError::NotApplicable(format!(
            "P-sector decomposition needs a real-entried state (max |Im| = {im:.3e})"
        )));
    }
    let d = d_a;
    let r = realign(rho, d, d);
    // orthonormal symmetric / antisymmetric basis vectors on the d² row space
    let mut sym: Vec<Vec<C64>> = Vec::new();
    let mut asym: Vec<Vec<C64>> = Vec::new();
    for i in 0..d {
        let mut v = vec![C64::ZERO; d * d];
        v[i * d + i] = C64::ONE;
        sym.push(v);
    }
    let inv_sqrt2 = cr(std::f64::consts::FRAC_1_SQRT_2);
    for i in 0..d {
        for k in i + 1..d {
            let mut vs = vec![C64::ZERO; d * d];
            vs[i * d + k] = inv_sqrt2;
            vs[k * d + i] = inv_sqrt2;
            sym.push(vs);
            let mut va = vec![C64::ZERO; d * d];
            va[i * d + k] = inv_sqrt2;
            va[k * d + i] = -inv_sqrt2;
            asym.push(va);
        }
    }
    let project = |basis: &[Vec<C64>]| -> CMat {
        let m = basis.len();
        let mut block = CMat::zeros(m, m);
        for (bi, u) in basis.iter().enumerate() {
            let rv: Vec<C64> = r.mat_vec(u);
            for (bj, w) in basis.iter().enumerate() {
                block[(bj, bi)] = crate::cmat::vdot(w, &rv);
            }
        }
        block
    };
    let r_plus = project(&sym);
    let r_minus = project(&asym);
    // cross blocks must vanish when [R,P]=0; verify rather than trust
    let p = swap_permutation(d);
    let comm = r.mul(&p).sub(&p.mul(&r)).fro_norm();
    debug_assert!(comm < 1e-10, "[R,P] residual {comm:.3e}");
    Ok(SectorDecomposition { r_plus, r_minus })
}

/// Pauli matrices (σx, σy, σz).
pub fn paulis() -> [CMat; 3] {
    let sx = CMat::from_fn(2, 2, |r, q| if r != q { C64::ONE } else { C64::ZERO });
    let sy = CMat::from_fn(2, 2, |r, q| match (r, q) {
        (0, 1) => c(0.0, -1.0),
        (1, 0) => c(0.0, 1.0),
        _ => C64::ZERO,
    });
    let sz = CMat::from_fn(2, 2, |r, q| match (r, q) {
        (0, 0) => C64::ONE,
        (1, 1) => -C64::ONE,
        _ => C64::ZERO,
    });
    [sx, sy, sz]
}

/// Two-qubit Bloch expansion ρ = ¼(I⊗I + r·σ⊗I + I⊗s·σ + Σ T_ij σ_i⊗σ_j).
#[derive(Clone, Debug)]
pub struct FanoForm {
    pub r: [f64; 3],
    pub s: [f64; 3],
    pub t: [[f64; 3]; 3],
}

impl FanoForm {
    pub fn det_t(&self) -> f64 {
        let t = &self.t;
        t[0][0] * (t[1][1] * t[2][2] - t[1][2] * t[2][1])
            - t[0][1] * (t[1][0] * t[2][2] - t[1][2] * t[2][0])
            + t[0][2] * (t[1][0] * t[2][1] - t[1][1] * t[2][0])
    }

    pub fn t_matrix(&self) -> CMat {
        CMat::from_fn(3, 3, |r, c| cr(self.t[r][c]))
    }

    pub fn reconstruct(&self) -> CMat {
        let p = paulis();
        let i2 = CMat::identity(2);
        let mut m = i2.kron(&i2);
        for i in 0..3 {
            m = m.add(&p[i].kron(&i2).scale_re(self.r[i]));
            m = m.add(&i2.kron(&p[i]).scale_re(self.s[i]));
            for j in 0..3 {
                m = m.add(&p[i].kron(&p[j]).scale_re(self.t[i][j]));
            }
        }
        m.scale_re(0.25)
    }
}

/// Pauli expectations of a two-qubit state. Imaginary parts are pure
/// roundoff for Hermitian input and are dropped.
pub fn fano_decompose(rho: &CMat) -> FanoForm {
    assert_eq!(rho.n_rows(), 4, "Fano form is defined for 2×2 systems");
    let p = paulis();
    let i2 = CMat::identity(2);
    let expect = |op: &CMat| rho.mul(op).trace().re;
    let mut f = FanoForm { r: [0.0; 3], s: [0.0; 3], t: [[0.0; 3]; 3] };
    for i in 0..3 {
        f.r[i] = expect(&p[i].kron(&i2));
        f.s[i] = expect(&i2.kron(&p[i]));
        for j in 0..3 {
            f.t[i][j] = expect(&p[i].kron(&p[j]));
        }
    }
    f
}

/// The eight Gell-Mann matrices, trace-orthonormal as Tr[Λ_α Λ_β] = 2 δ_αβ.
pub fn gellmann() -> [CMat; 8] {
    let z = C64::ZERO;
    let o = C64::ONE;
    let i = c(0.0, 1.0);
    let s3 = 1.0 / 3f64.sqrt();
    let rows = |e: [[C64; 3]; 3]| {
        CMat::from_fn(3, 3, |r, c| e[r][c])
    };
    [
        rows([[z, o, z], [o, z, z], [z, z, z]]),
        rows([[z, -i, z], [i, z, z], [z, z, z]]),
        rows([[o, z, z], [z, -o, z], [z, z, z]]),
        rows([[z, z, o], [z, z, z], [o, z, z]]),
        rows([[z, z, -i], [z, z, z], [i, z, z]]),
        rows([[z, z, z], [z, z, o], [z, o, z]]),
        rows([[z, z, z], [z, z, -i], [z, i, z]]),
        rows([[cr(s3), z, z], [z, cr(s3), z], [z, z, cr(-2.0 * s3)]]),
    ]
}

/// Spin correlation tensor T_αβ = Tr[ρ (Λ_α ⊗ Λ_β)] of a 3×3 state.
pub fn gellmann_tensor(rho: &CMat) -> Vec<Vec<f64>> {
    assert_eq!(rho.n_rows(), 9, "Gell-Mann tensor is defined for 3×3 systems");
    let gm = gellmann();
    (0..8)
        .map(|a| {
            (0..8)
                .map(|b| rho.mul(&gm[a].kron(&gm[b])).trace().re)
                .collect()
        })
        .collect()
}

/// Shannon entropy −Σ v ln v over raw values; entries below 1e-12 count as
/// exact zeros (0·ln 0 = 0). Caller chooses whether to normalize first.
pub fn entropy_raw(vals: &[f64]) -> f64 {
    vals.iter()
        .filter(|&&v| v > 1e-12)
        .map(|&v| -v * v.ln())
        .sum()
}

/// Entropy of values normalized to unit sum. Returns 0 when everything is
/// below the zero cut.
pub fn entropy_normalized(vals: &[f64]) -> f64 {
    let total: f64 = vals.iter().filter(|&&v| v > 1e-12).sum();
    if total <= 0.0 {
        return 0.0;
    }
    vals.iter()
        .filter(|&&v| v > 1e-12)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum()
}
