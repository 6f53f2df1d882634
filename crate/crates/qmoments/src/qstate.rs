//! State families and samplers. Constructors build exact matrices in the
//! computational basis (composite index a·d_b + b) and validate the density
//! matrix contract: Hermitian to 1e-10, unit trace to 1e-10, smallest
//! eigenvalue ≥ -1e-9. Truth labels are assigned by construction rules only,
//! never inferred from features.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cmat::{c, cr, normalize, CMat, C64};
use crate::spectral;
use crate::{QmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BipartiteDims {
    pub d_a: usize,
    pub d_b: usize,
}

impl BipartiteDims {
    pub fn new(d_a: usize, d_b: usize) -> Result<Self> {
        if d_a < 2 || d_b < 2 {
            return Err(QmError::Dimension(format!(
                "subsystem dimensions must be at least 2, got {d_a}x{d_b}"
            )));
        }
        Ok(BipartiteDims { d_a, d_b })
    }

    pub fn total(&self) -> usize {
        self.d_a * self.d_b
    }
}

pub const DIMS_2X2: BipartiteDims = BipartiteDims { d_a: 2, d_b: 2 };
pub const DIMS_2X3: BipartiteDims = BipartiteDims { d_a: 2, d_b: 3 };
pub const DIMS_3X3: BipartiteDims = BipartiteDims { d_a: 3, d_b: 3 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truth {
    #[serde(rename = "SEP")]
    Sep,
    #[serde(rename = "NPT")]
    Npt,
    #[serde(rename = "BE")]
    Be,
    Unknown,
}

impl Truth {
    pub fn as_str(&self) -> &'static str {
        match self {
            Truth::Sep => "SEP",
            Truth::Npt => "NPT",
            Truth::Be => "BE",
            Truth::Unknown => "Unknown",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Product,
    ParamPure,
    Bell,
    Werner,
    BellProductMix,
    MubExtremal,
    CanonicalSepExtremal,
    Horodecki,
    Tiles,
    Chessboard,
    MarginalNoise,
    MixedBe,
    RandomSeparable,
    RandomHaar,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Product => "Product",
            Family::ParamPure => "ParamPure",
            Family::Bell => "Bell",
            Family::Werner => "Werner",
            Family::BellProductMix => "BellProductMix",
            Family::MubExtremal => "MubExtremal",
            Family::CanonicalSepExtremal => "CanonicalSepExtremal",
            Family::Horodecki => "Horodecki",
            Family::Tiles => "Tiles",
            Family::Chessboard => "Chessboard",
            Family::MarginalNoise => "MarginalNoise",
            Family::MixedBe => "MixedBe",
            Family::RandomSeparable => "RandomSeparable",
            Family::RandomHaar => "RandomHaar",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateLabel {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub truth: Truth,
}

impl StateLabel {
    pub fn new(family: Family, params: &[(&str, f64)], truth: Truth) -> Self {
        StateLabel {
            family,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            truth,
        }
    }
}

/// Validated bipartite density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    dims: BipartiteDims,
    mat: CMat,
}

const HERM_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-9;

impl DensityMatrix {
    pub fn new(dims: BipartiteDims, mat: CMat) -> Result<Self> {
        let d = dims.total();
        if mat.n_rows() != d || mat.n_cols() != d {
            return Err(QmError::Dimension(format!(
                "matrix is {}x{} but dims say {d}x{d}",
                mat.n_rows(),
                mat.n_cols()
            )));
        }
        let dev = mat.herm_deviation();
        if dev > HERM_TOL {
            return Err(QmError::Validation(format!(
                "not Hermitian: max |M - M†| = {dev:.3e}"
            )));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(QmError::Validation(format!("trace = {tr} but must be 1")));
        }
        let lam_min = *spectral::herm_eigvals(&mat).last().unwrap();
        if lam_min < PSD_TOL {
            return Err(QmError::Validation(format!(
                "not positive semidefinite: smallest eigenvalue {lam_min:.3e}"
            )));
        }
        Ok(DensityMatrix { dims, mat })
    }

    pub fn dims(&self) -> BipartiteDims {
        self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.total()
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn purity(&self) -> f64 {
        spectral::trace_power(&self.mat, 2).re
    }

    pub fn eigvals(&self) -> Vec<f64> {
        spectral::herm_eigvals(&self.mat)
    }

    /// Eigenvalue count above 1e-10; constructors here are analytic, so the
    /// cut sits far from both true zeros and genuine eigenvalues.
    pub fn rank(&self) -> usize {
        self.eigvals().iter().filter(|&&l| l > 1e-10).count()
    }

    pub fn partial_transpose(&self, on_a: bool) -> CMat {
        spectral::partial_transpose(&self.mat, self.dims.d_a, self.dims.d_b, on_a)
    }

    pub fn pt_eigvals(&self) -> Vec<f64> {
        spectral::herm_eigvals(&self.partial_transpose(true))
    }

    pub fn is_ppt(&self, tol: f64) -> bool {
        *self.pt_eigvals().last().unwrap() >= -tol
    }

    pub fn reduced_a(&self) -> CMat {
        spectral::partial_trace(&self.mat, self.dims.d_a, self.dims.d_b, true)
    }

    pub fn reduced_b(&self) -> CMat {
        spectral::partial_trace(&self.mat, self.dims.d_a, self.dims.d_b, false)
    }

    pub fn realign(&self) -> CMat {
        spectral::realign(&self.mat, self.dims.d_a, self.dims.d_b)
    }
}

pub fn basis_ket(i: usize, d: usize) -> Vec<C64> {
    let mut v = vec![C64::ZERO; d];
    v[i] = C64::ONE;
    v
}

/// |a⟩⊗|b⟩ with the project-wide composite ordering.
pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out
}

pub fn projector(v: &[C64]) -> CMat {
    CMat::outer(v, v)
}

pub fn make_product(rho_a: &CMat, rho_b: &CMat) -> Result<DensityMatrix> {
    let dims = BipartiteDims::new(rho_a.n_rows(), rho_b.n_rows())?;
    DensityMatrix::new(dims, rho_a.kron(rho_b))
}

/// |ψ(θ)⟩ = cos(θ/2)|00⟩ + sin(θ/2)|11⟩ on 2×2 or 2×3 (third B level unused).
pub fn make_param_pure(theta: f64, dims: BipartiteDims) -> Result<DensityMatrix> {
    if !(dims == DIMS_2X2 || dims == DIMS_2X3) {
        return Err(QmError::Dimension(
            "parametrized pure family is defined on 2x2 and 2x3".into(),
        ));
    }
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(QmError::Parameter(format!("theta = {theta} outside [0, pi]")));
    }
    let mut ket = vec![C64::ZERO; dims.total()];
    ket[0] = cr((theta / 2.0).cos());
    ket[dims.d_b + 1] = cr((theta / 2.0).sin());
    DensityMatrix::new(dims, projector(&ket))
}

/// |Φ⁺⟩⟨Φ⁺| = make_param_pure(π/2) on 2×2.
pub fn make_bell() -> DensityMatrix {
    make_param_pure(std::f64::consts::FRAC_PI_2, DIMS_2X2).unwrap()
}

/// The four Bell kets (Φ⁺, Φ⁻, Ψ⁺, Ψ⁻).
pub fn bell_kets() -> [Vec<C64>; 4] {
    let h = cr(std::f64::consts::FRAC_1_SQRT_2);
    [
        vec![h, C64::ZERO, C64::ZERO, h],
        vec![h, C64::ZERO, C64::ZERO, -h],
        vec![C64::ZERO, h, h, C64::ZERO],
        vec![C64::ZERO, h, -h, C64::ZERO],
    ]
}

/// Mixture of the four Bell projectors with the given weights.
pub fn bell_diagonal(weights: [f64; 4]) -> Result<DensityMatrix> {
    let s: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (s - 1.0).abs() > 1e-12 {
        return Err(QmError::Parameter("weights must be a probability vector".into()));
    }
    let kets = bell_kets();
    let mut m = CMat::zeros(4, 4);
    for (w, k) in weights.iter().zip(&kets) {
        m = m.add(&projector(k).scale_re(*w));
    }
    DensityMatrix::new(DIMS_2X2, m)
}

/// Werner family p|Ψ⁻⟩⟨Ψ⁻| + (1-p)I/4; negativity max{0, (3p-1)/4}.
pub fn make_werner(p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QmError::Parameter(format!("p = {p} outside [0, 1]")));
    }
    let psi_minus = &bell_kets()[3];
    let m = projector(psi_minus)
        .scale_re(p)
        .add(&CMat::identity(4).scale_re((1.0 - p) / 4.0));
    DensityMatrix::new(DIMS_2X2, m)
}

/// p|Ψ⁻⟩⟨Ψ⁻| + (1-p)|00⟩⟨00|: rank-2 mix of a Bell state with a product state.
pub fn make_bell_product_mix(p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QmError::Parameter(format!("p = {p} outside [0, 1]")));
    }
    let psi_minus = &bell_kets()[3];
    let ket00 = kron_vec(&basis_ket(0, 2), &basis_ket(0, 2));
    let m = projector(psi_minus)
        .scale_re(p)
        .add(&projector(&ket00).scale_re(1.0 - p));
    DensityMatrix::new(DIMS_2X2, m)
}

/// Equal mixture of three mutually unbiased product states:
/// plus = ⅓Σ|m₊m₊⟩⟨m₊m₊|, minus = ⅓Σ|m₊m₋⟩⟨m₊m₋| over m ∈ {z,x,y}.
/// Extremal for the separable chirality bounds: C₃ = ±1/36, C₄ = ±1/27.
pub fn make_mub_extremal(plus: bool) -> DensityMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let z_p = vec![C64::ONE, C64::ZERO];
    let z_m = vec![C64::ZERO, C64::ONE];
    let x_p = vec![cr(h), cr(h)];
    let x_m = vec![cr(h), cr(-h)];
    let y_p = vec![cr(h), c(0.0, h)];
    let y_m = vec![cr(h), c(0.0, -h)];
    let pairs: [(&Vec<C64>, &Vec<C64>, &Vec<C64>); 3] =
        [(&z_p, &z_p, &z_m), (&x_p, &x_p, &x_m), (&y_p, &y_p, &y_m)];
    let mut m = CMat::zeros(4, 4);
    for (a, b_plus, b_minus) in pairs {
        let b = if plus { b_plus } else { b_minus };
        m = m.add(&projector(&kron_vec(a, b)));
    }
    DensityMatrix::new(DIMS_2X2, m.scale_re(1.0 / 3.0)).unwrap()
}

/// Canonical form of the anti-correlated extremal separable state: exact
/// entries (1/12)·{2, √3, 4, ...}, Bloch data a = b = (1/√3, 0, 0),
/// T = diag(1/3, 1/3, -1/3), eigenvalues (2/3, 1/6, 1/6, 0).
pub fn make_canonical_sep_extremal() -> DensityMatrix {
    let s3 = 3f64.sqrt();
    let m = CMat::from_real_rows(&[
        vec![2.0, s3, s3, 0.0],
        vec![s3, 4.0, 2.0, s3],
        vec![s3, 2.0, 4.0, s3],
        vec![0.0, s3, s3, 2.0],
    ])
    .scale_re(1.0 / 12.0);
    DensityMatrix::new(DIMS_2X2, m).unwrap()
}

/// Rank-7 one-parameter 3×3 family, PPT yet entangled for all a ∈ (0,1).
pub fn make_horodecki(a: f64) -> Result<DensityMatrix> {
    if !(a > 0.0 && a < 1.0) {
        return Err(QmError::Parameter(format!("a = {a} outside (0, 1)")));
    }
    let b = 0.5 * (1.0 - a * a).sqrt();
    let cc = (1.0 + a) / 2.0;
    let mut m = CMat::zeros(9, 9);
    for i in 0..9 {
        m[(i, i)] = cr(a);
    }
    m[(6, 6)] = cr(cc);
    m[(8, 8)] = cr(cc);
    for (r, cix) in [(0, 4), (0, 8), (4, 8)] {
        m[(r, cix)] = cr(a);
        m[(cix, r)] = cr(a);
    }
    m[(6, 8)] = cr(b);
    m[(8, 6)] = cr(b);
    DensityMatrix::new(DIMS_3X3, m.scale_re(1.0 / (8.0 * a + 1.0)))
}

/// Unextendible-product-basis complement state on 3×3 with white noise:
/// (1-ε)·¼(I₉ - Σ|ψ_k⟩⟨ψ_k|) + ε·I₉/9. Rank 4 and purity ¼ at ε = 0.
pub fn make_tiles(epsilon: f64) -> Result<DensityMatrix> {
    if !(0.0..=0.15).contains(&epsilon) {
        return Err(QmError::Parameter(format!("epsilon = {epsilon} outside [0, 0.15]")));
    }
    let h = cr(std::f64::consts::FRAC_1_SQRT_2);
    let e = |i: usize| basis_ket(i, 3);
    let sub = |i: usize, j: usize| -> Vec<C64> {
        let mut v = vec![C64::ZERO; 3];
        v[i] = h;
        v[j] = -h;
        v
    };
    let unif: Vec<C64> = vec![cr(1.0 / 3f64.sqrt()); 3];
    let tiles = [
        kron_vec(&e(0), &sub(0, 1)),
        kron_vec(&e(2), &sub(1, 2)),
        kron_vec(&sub(0, 1), &e(2)),
        kron_vec(&sub(1, 2), &e(0)),
        kron_vec(&unif, &unif),
    ];
    let mut m = CMat::identity(9);
    for t in &tiles {
        m = m.sub(&projector(t));
    }
    m = m.scale_re((1.0 - epsilon) / 4.0);
    m = m.add(&CMat::identity(9).scale_re(epsilon / 9.0));
    DensityMatrix::new(DIMS_3X3, m)
}

/// Rank-4 checkerboard family on 3×3 from four unnormalized vectors
///   v₁ = m|00⟩ + s|02⟩ + n|11⟩      v₂ = a|01⟩ + b|10⟩ + c|12⟩
///   v₃ = n|00⟩ - m|11⟩ + t|20⟩      v₄ = b|01⟩ - a|10⟩ + d|21⟩
/// with s = ac/n, t = ad/m. PPT for real parameters; entangled iff mn ≠ ab.
pub fn make_chessboard(params: ChessboardParams) -> Result<DensityMatrix> {
    let ChessboardParams { a, b, c, d, m, n } = params;
    for (name, v) in [("a", a), ("b", b), ("c", c), ("d", d), ("m", m), ("n", n)] {
        if v == 0.0 || !v.is_finite() {
            return Err(QmError::Parameter(format!("chessboard parameter {name} = {v}")));
        }
    }
    let s = a * c / n;
    let t = a * d / m;
    let idx = |ai: usize, bi: usize| ai * 3 + bi;
    let mut v1 = vec![C64::ZERO; 9];
    v1[idx(0, 0)] = cr(m);
    v1[idx(0, 2)] = cr(s);
    v1[idx(1, 1)] = cr(n);
    let mut v2 = vec![C64::ZERO; 9];
    v2[idx(0, 1)] = cr(a);
    v2[idx(1, 0)] = cr(b);
    v2[idx(1, 2)] = cr(c);
    let mut v3 = vec![C64::ZERO; 9];
    v3[idx(0, 0)] = cr(n);
    v3[idx(1, 1)] = cr(-m);
    v3[idx(2, 0)] = cr(t);
    let mut v4 = vec![C64::ZERO; 9];
    v4[idx(0, 1)] = cr(b);
    v4[idx(1, 0)] = cr(-a);
    v4[idx(2, 1)] = cr(d);
    let mut mtx = CMat::zeros(9, 9);
    for v in [&v1, &v2, &v3, &v4] {
        mtx = mtx.add(&projector(v));
    }
    let norm = mtx.trace().re;
    DensityMatrix::new(DIMS_3X3, mtx.scale_re(1.0 / norm))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChessboardParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub m: f64,
    pub n: f64,
}

impl ChessboardParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64, m: f64, n: f64) -> Self {
        ChessboardParams { a, b, c, d, m, n }
    }

    /// Separable exactly when mn = ab (all parameters nonzero).
    pub fn is_separable(&self) -> bool {
        (self.m * self.n - self.a * self.b).abs() < 1e-12
    }
}

/// Mix a state toward the product of its own marginals:
/// (1-t)·ρ₀ + t·(ρ_A ⊗ ρ_B). Linear, so trace and Hermiticity are exact.
pub fn make_marginal_noise(seed: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&t) {
        return Err(QmError::Parameter(format!("t = {t} outside [0, 1]")));
    }
    let marg = seed.reduced_a().kron(&seed.reduced_b());
    let m = seed.mat().scale_re(1.0 - t).add(&marg.scale_re(t));
    DensityMatrix::new(seed.dims(), m)
}

/// Depolarizing channel: (1-η)·ρ + η·I/d.
pub fn depolarize(rho: &DensityMatrix, eta: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(QmError::Parameter(format!("eta = {eta} outside [0, 1]")));
    }
    let d = rho.dim();
    let mixed = CMat::identity(d).scale_re(eta / d as f64);
    let m = rho.mat().scale_re(1.0 - eta).add(&mixed);
    DensityMatrix::new(rho.dims(), m)
}

/// Haar-random unit vector: normalized complex standard-normal draw.
pub fn haar_ket(d: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let v: Vec<C64> = (0..d)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c(re, im)
        })
        .collect();
    normalize(&v)
}

/// Haar-random unitary via Gram-Schmidt on a Ginibre matrix, with the phase
/// convention that makes the factorization unique (positive diagonal R).
pub fn haar_unitary(d: usize, rng: &mut ChaCha8Rng) -> CMat {
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<C64> = (0..d)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                c(re, im)
            })
            .collect();
        for u in &cols {
            let ov = crate::cmat::vdot(u, &v);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= ov * ui;
            }
        }
        let n = crate::cmat::vec_norm(&v);
        if n < 1e-8 {
            continue;
        }
        cols.push(v.iter().map(|x| x / n).collect());
    }
    CMat::from_fn(d, d, |r, cix| cols[cix][r])
}

/// Ginibre-induced random mixed state G G†/Tr[G G†].
pub fn ginibre_state(dims: BipartiteDims, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let d = dims.total();
    let g = CMat::from_fn(d, d, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im)
    });
    let m = g.mul(&g.dagger());
    let tr = m.trace().re;
    DensityMatrix::new(dims, m.scale_re(1.0 / tr)).unwrap()
}

/// Σ p_k |a_k b_k⟩⟨a_k b_k| with flat-Dirichlet weights (normalized unit
/// exponentials) and Haar-random local kets. Separable by construction.
pub fn random_separable(k: usize, dims: BipartiteDims, rng: &mut ChaCha8Rng) -> DensityMatrix {
    assert!(k >= 1);
    let mut weights: Vec<f64> = (0..k)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut m = CMat::zeros(dims.total(), dims.total());
    for &w in &weights {
        let a = haar_ket(dims.d_a, rng);
        let b = haar_ket(dims.d_b, rng);
        m = m.add(&projector(&kron_vec(&a, &b)).scale_re(w));
    }
    DensityMatrix::new(dims, m).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    RandomSeparable { k: usize },
    RandomHaar,
    RandomProductPure,
}

/// Seeded sampler; identical seed gives a bit-identical state.
pub fn sample_state(
    kind: SampleKind,
    dims: BipartiteDims,
    rng_seed: u64,
) -> (DensityMatrix, StateLabel) {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match kind {
        SampleKind::RandomSeparable { k } => {
            let rho = random_separable(k, dims, &mut rng);
            let label =
                StateLabel::new(Family::RandomSeparable, &[("K", k as f64)], Truth::Sep);
            (rho, label)
        }
        SampleKind::RandomHaar => {
            let rho = ginibre_state(dims, &mut rng);
            (rho, StateLabel::new(Family::RandomHaar, &[], Truth::Unknown))
        }
        SampleKind::RandomProductPure => {
            let a = haar_ket(dims.d_a, &mut rng);
            let b = haar_ket(dims.d_b, &mut rng);
            let rho = DensityMatrix::new(dims, projector(&kron_vec(&a, &b))).unwrap();
            (rho, StateLabel::new(Family::Product, &[], Truth::Sep))
        }
    }
}

/// JSON-facing record; serde_json round-trips f64 exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateRecord {
    pub dims: [usize; 2],
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub label: StateLabel,
}

impl StateRecord {
    pub fn from_state(rho: &DensityMatrix, label: &StateLabel) -> Self {
        let d = rho.dim();
        let re = (0..d)
            .map(|r| (0..d).map(|cix| rho.mat()[(r, cix)].re).collect())
            .collect();
        let im = (0..d)
            .map(|r| (0..d).map(|cix| rho.mat()[(r, cix)].im).collect())
            .collect();
        StateRecord { dims: [rho.dims().d_a, rho.dims().d_b], re, im, label: label.clone() }
    }

    pub fn into_state(self) -> Result<(DensityMatrix, StateLabel)> {
        let dims = BipartiteDims::new(self.dims[0], self.dims[1])?;
        let d = dims.total();
        if self.re.len() != d || self.im.len() != d {
            return Err(QmError::Schema(format!(
                "matrix rows {} do not match dims {d}",
                self.re.len()
            )));
        }
        let mat = CMat::from_fn(d, d, |r, cix| Complex64::new(self.re[r][cix], self.im[r][cix]));
        Ok((DensityMatrix::new(dims, mat)?, self.label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{fano_decompose, nuclear_norm, sector_decompose};

    #[test]
    fn param_pure_endpoints_and_bell() {
        let rho = make_param_pure(0.0, DIMS_2X2).unwrap();
        assert!((rho.mat()[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((rho.purity() - 1.0).abs() < 1e-12);

        let bell = make_bell();
        let pt_min = *bell.pt_eigvals().last().unwrap();
        assert!((pt_min + 0.5).abs() < 1e-12);

        let emb = make_param_pure(1.0, DIMS_2X3).unwrap();
        assert!((emb.purity() - 1.0).abs() < 1e-12);
        // third B level unpopulated
        for r in 0..6 {
            assert!(emb.mat()[(r, 2)].norm() < 1e-15);
            assert!(emb.mat()[(r, 5)].norm() < 1e-15);
        }
    }

    #[test]
    fn werner_pt_spectrum_closed_form() {
        for p in [0.0, 0.3, 0.7, 1.0] {
            let rho = make_werner(p).unwrap();
            let pt = rho.pt_eigvals();
            // (1+p)/4 triple and (1-3p)/4
            let mut want = vec![(1.0 + p) / 4.0; 3];
            want.push((1.0 - 3.0 * p) / 4.0);
            want.sort_by(|a, b| b.total_cmp(a));
            for (g, w) in pt.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "p={p}: {pt:?}");
            }
        }
        assert!(make_werner(1.2).is_err());
    }

    #[test]
    fn mub_extremal_spectra() {
        let minus = make_mub_extremal(false);
        let eig = minus.eigvals();
        let want = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 0.0];
        for (g, w) in eig.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{eig:?}");
        }
        assert_eq!(minus.rank(), 3);
        assert_eq!(make_mub_extremal(true).rank(), 3);
    }

    #[test]
    fn canonical_extremal_matches_mub_spectra_and_bloch() {
        let star = make_canonical_sep_extremal();
        let s3 = 3f64.sqrt() / 12.0;
        assert!((star.mat()[(0, 1)].re - s3).abs() < 1e-15);
        assert!((star.mat()[(1, 1)].re - 4.0 / 12.0).abs() < 1e-15);
        assert!(star.mat()[(0, 3)].norm() < 1e-15);

        let eig = star.eigvals();
        let want = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 0.0];
        for (g, w) in eig.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        let pt = star.pt_eigvals();
        let s6 = 3f64.sqrt() / 6.0;
        let want_pt = [1.0 / 3.0 + s6, 1.0 / 3.0, 1.0 / 3.0 - s6, 0.0];
        for (g, w) in pt.iter().zip(&want_pt) {
            assert!((g - w).abs() < 1e-12, "{pt:?}");
        }

        let f = fano_decompose(star.mat());
        let inv_s3 = 1.0 / 3f64.sqrt();
        assert!((f.r[0] - inv_s3).abs() < 1e-12 && f.r[1].abs() < 1e-12);
        assert!((f.s[0] - inv_s3).abs() < 1e-12);
        for (i, want_t) in [(0, 1.0 / 3.0), (1, 1.0 / 3.0), (2, -1.0 / 3.0)] {
            assert!((f.t[i][i] - want_t).abs() < 1e-12);
        }
    }

    #[test]
    fn horodecki_is_ppt_rank7_marginal_ccnr() {
        let rho = make_horodecki(0.5).unwrap();
        assert!(rho.is_ppt(1e-10));
        assert_eq!(rho.rank(), 7);
        let s1 = nuclear_norm(&rho.realign());
        assert!(s1 > 1.0 && s1 - 1.0 < 0.004, "Sigma1 = {s1}");
        assert!(make_horodecki(0.0).is_err());
        assert!(make_horodecki(1.0).is_err());
    }

    #[test]
    fn tiles_rank_and_purity() {
        let rho = make_tiles(0.0).unwrap();
        assert_eq!(rho.rank(), 4);
        assert!((rho.purity() - 0.25).abs() < 1e-9);
        assert!(rho.is_ppt(1e-10));
        // the five tile vectors are annihilated by the state
        assert!(make_tiles(0.2).is_err());
    }

    #[test]
    fn chessboard_ppt_rank_and_sector() {
        let p = ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 3.0);
        assert!(!p.is_separable());
        let rho = make_chessboard(p).unwrap();
        assert!(rho.is_ppt(1e-10));
        assert_eq!(rho.rank(), 4);
        let sd = sector_decompose(rho.mat(), 3, 3).unwrap();
        assert!(sd.r_minus_fro() < 1e-10, "R- = {}", sd.r_minus_fro());
        let s1 = nuclear_norm(&rho.realign());
        assert!((s1 - 0.949).abs() < 0.002, "Sigma1 = {s1}");

        assert!(ChessboardParams::new(2.0, 3.0, 1.0, 1.0, 2.0, 3.0).is_separable());
        assert!(make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 0.0, 3.0)).is_err());
    }

    #[test]
    fn marginal_noise_endpoints() {
        let seed = make_horodecki(0.5).unwrap();
        let t0 = make_marginal_noise(&seed, 0.0).unwrap();
        assert!(t0.mat().sub(seed.mat()).max_abs() < 1e-15);
        let t1 = make_marginal_noise(&seed, 1.0).unwrap();
        let prod = seed.reduced_a().kron(&seed.reduced_b());
        assert!(t1.mat().sub(&prod).max_abs() < 1e-15);
        let t05 = make_marginal_noise(&seed, 0.05).unwrap();
        assert!(t05.is_ppt(1e-10));
        let s1 = nuclear_norm(&t05.realign());
        assert!(s1 < 1.0, "Sigma1 = {s1}");
    }

    #[test]
    fn samplers_are_deterministic_and_valid() {
        let (a, la) = sample_state(SampleKind::RandomSeparable { k: 5 }, DIMS_3X3, 99);
        let (b, _) = sample_state(SampleKind::RandomSeparable { k: 5 }, DIMS_3X3, 99);
        assert_eq!(a.mat(), b.mat());
        assert_eq!(la.truth, Truth::Sep);

        let (h, lh) = sample_state(SampleKind::RandomHaar, DIMS_2X3, 7);
        assert_eq!(lh.truth, Truth::Unknown);
        assert!((h.mat().trace().re - 1.0).abs() < 1e-12);

        let (p, _) = sample_state(SampleKind::RandomProductPure, DIMS_2X2, 3);
        // product states stay PSD under partial transpose
        assert!(*p.pt_eigvals().last().unwrap() > -1e-12);
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = haar_unitary(4, &mut rng);
        let gram = u.dagger().mul(&u);
        assert!(gram.sub(&CMat::identity(4)).max_abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let rho = make_horodecki(0.37).unwrap();
        let label = StateLabel::new(Family::Horodecki, &[("a", 0.37)], Truth::Be);
        let rec = StateRecord::from_state(&rho, &label);
        let text = serde_json::to_string(&rec).unwrap();
        let back: StateRecord = serde_json::from_str(&text).unwrap();
        let (rho2, label2) = back.into_state().unwrap();
        assert_eq!(rho.mat(), rho2.mat());
        assert_eq!(label, label2);
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let m = CMat::identity(4).scale_re(0.5);
        assert!(DensityMatrix::new(DIMS_2X2, m).is_err());
        let mut nh = CMat::identity(4).scale_re(0.25);
        nh[(0, 1)] = cr(0.3);
        assert!(DensityMatrix::new(DIMS_2X2, nh).is_err());
        let mut neg = CMat::identity(4).scale_re(0.4);
        neg[(2, 2)] = cr(0.3);
        neg[(3, 3)] = cr(-0.1);
        assert!(DensityMatrix::new(DIMS_2X2, neg).is_err());
    }
}
