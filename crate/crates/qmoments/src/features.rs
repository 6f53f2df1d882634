//! Per-state feature assembly for the bound-entanglement classifier: the
//! eight-feature core set, the 83-feature extended set with rank-structure
//! features, nonlinear expansions, and the labelled-dataset generator with
//! CSV and manifest output.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::moments::{compute_moments, compute_realign_moments};
use crate::qstate::{
    depolarize, make_chessboard, make_horodecki, make_marginal_noise, make_tiles,
    random_separable, ChessboardParams, DensityMatrix, Family, StateLabel, Truth, DIMS_3X3,
};
use crate::seeds::SeedTree;
use crate::spectral;
use crate::{QmError, Result};

pub const CORE8_TAG: &str = "CORE8";
pub const EXT83_TAG: &str = "EXT83";
pub const CORE8_NAMES: [&str; 8] = ["S1", "G1", "D1", "S2", "G2", "D2", "C3", "C4"];

/// Undefined values (0/0 ratios, vanishing denominators) impute to 1.0, the
/// Cauchy-Schwarz equality point the ratio features degenerate to.
fn impute(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub set_tag: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub label: StateLabel,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Core feature set: realignment nuclear-norm moments of the state and of its
/// partial transpose at k = 1, 2 plus the chirality gaps C₃ and C₄. On
/// non-square subsystems G and D are undefined and impute to 1.0.
pub fn core8(rho: &DensityMatrix, label: &StateLabel) -> FeatureVector {
    let ms = compute_moments(rho, 4);
    let rm = compute_realign_moments(rho);
    let values = vec![
        rm.sigma_k(1),
        rm.g_k(1),
        rm.d_k(1),
        rm.sigma_k(2),
        rm.g_k(2),
        rm.d_k(2),
        ms.c(3),
        ms.c(4),
    ]
    .into_iter()
    .map(impute)
    .collect();
    FeatureVector {
        set_tag: CORE8_TAG.to_string(),
        names: CORE8_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
        label: label.clone(),
    }
}

/// Extended 83-feature set for 3x3 states. Groups, in order: purity moments
/// I₂..I₉, partial-transpose moments T₂..T₉, realignment singular-value
/// moments S₁..S₉, trace moments G₁..G₉, gaps D₁..D₉, the Cauchy-Schwarz
/// ratio S₂²/S₄ and trace ratios Q₂, Q₄; the same blocks for R(ρ^T_A)
/// (SP/GP/DP, SP₂²/SP₄, QP₂, QP₄); the cross-gaps δG₂ and δQ₂; and five
/// rank-structure features: Δ_EG = λ₄-λ₅, the top-4 eigenvalue-squared
/// concentration, λ_min(ρ^T_A)/I₂, the spectral-entropy gap between ρ^T_A
/// and ρ, and the entropy of the normalized singular values of R(ρ).
/// The identically-zero combinations I₂-T₂ and S₂-SP₂ are excluded.
pub fn ext83(rho: &DensityMatrix, label: &StateLabel) -> Result<FeatureVector> {
    let dims = rho.dims();
    if dims != DIMS_3X3 {
        return Err(QmError::NotApplicable(format!(
            "extended feature set needs a 3x3 system, got {}x{}",
            dims.d_a, dims.d_b
        )));
    }
    let ms = compute_moments(rho, 9);
    let rm = compute_realign_moments(rho);

    let desc = |v: &mut Vec<f64>| v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut eig_rho = spectral::herm_eigvals(rho.mat());
    desc(&mut eig_rho);
    let pt = rho.partial_transpose(true);
    let mut eig_pt = spectral::herm_eigvals(&pt);
    desc(&mut eig_pt);

    let sum_sq: f64 = eig_rho.iter().map(|l| l * l).sum();
    let top4_sq: f64 = eig_rho.iter().take(4).map(|l| l * l).sum();
    let r_mat = spectral::realign(rho.mat(), 3, 3);
    let sv_ent = spectral::entropy_normalized(&spectral::singular_values(&r_mat));

    let mut f: Vec<(String, f64)> = Vec::with_capacity(83);
    for k in 2..=9 {
        f.push((format!("I{k}"), ms.purity(k)));
    }
    for k in 2..=9 {
        f.push((format!("T{k}"), ms.mu(k)));
    }
    for k in 1..=9 {
        f.push((format!("S{k}"), rm.sigma_k(k)));
    }
    for k in 1..=9 {
        f.push((format!("G{k}"), rm.g_k(k)));
    }
    for k in 1..=9 {
        f.push((format!("D{k}"), rm.d_k(k)));
    }
    f.push(("S2sq_S4".to_string(), rm.ratios.s2sq_over_s4));
    f.push(("Q2".to_string(), rm.ratios.q2));
    f.push(("Q4".to_string(), rm.ratios.q4));
    for k in 1..=9 {
        f.push((format!("SP{k}"), rm.sp[k - 1]));
    }
    for k in 1..=9 {
        f.push((format!("GP{k}"), rm.gp[k - 1]));
    }
    for k in 1..=9 {
        f.push((format!("DP{k}"), rm.dp[k - 1]));
    }
    f.push(("SP2sq_SP4".to_string(), rm.ratios.sp2sq_over_sp4));
    f.push(("QP2".to_string(), rm.ratios.qp2));
    f.push(("QP4".to_string(), rm.ratios.qp4));
    f.push(("dG2".to_string(), rm.delta_g2));
    f.push(("dQ2".to_string(), rm.ratios.dq2));
    f.push(("DeltaEG".to_string(), eig_rho[3] - eig_rho[4]));
    f.push(("R4conc".to_string(), top4_sq / sum_sq));
    f.push((
        "LminPT_I2".to_string(),
        eig_pt[eig_pt.len() - 1] / ms.purity(2),
    ));
    f.push((
        "SEgap".to_string(),
        spectral::entropy_raw(&eig_pt) - spectral::entropy_raw(&eig_rho),
    ));
    f.push(("SVent".to_string(), sv_ent));
    debug_assert_eq!(f.len(), 83);

    let (names, values): (Vec<String>, Vec<f64>) = f.into_iter().unzip();
    Ok(FeatureVector {
        set_tag: EXT83_TAG.to_string(),
        names,
        values: values.into_iter().map(impute).collect(),
        label: label.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expansion {
    Poly2,
    SignedLog,
    SignedSqrt,
}

/// Nonlinear feature expansion. Poly2 appends every square and pairwise
/// product after the originals (n features -> n + n(n+1)/2); the signed maps
/// transform each value in place, preserving sign and fixing 0.
pub fn expand(fv: &FeatureVector, scheme: Expansion) -> FeatureVector {
    match scheme {
        Expansion::Poly2 => {
            let n = fv.len();
            let mut names = fv.names.clone();
            let mut values = fv.values.clone();
            for i in 0..n {
                for j in i..n {
                    names.push(if i == j {
                        format!("{}^2", fv.names[i])
                    } else {
                        format!("{}*{}", fv.names[i], fv.names[j])
                    });
                    values.push(impute(fv.values[i] * fv.values[j]));
                }
            }
            FeatureVector {
                set_tag: format!("{}-POLY2", fv.set_tag),
                names,
                values,
                label: fv.label.clone(),
            }
        }
        Expansion::SignedLog => map_values(fv, "SLOG", "slog", |x| x.signum() * x.abs().ln_1p()),
        Expansion::SignedSqrt => map_values(fv, "SSQRT", "ssqrt", |x| x.signum() * x.abs().sqrt()),
    }
}

fn map_values(
    fv: &FeatureVector,
    tag_suffix: &str,
    name_prefix: &str,
    f: impl Fn(f64) -> f64,
) -> FeatureVector {
    FeatureVector {
        set_tag: format!("{}-{}", fv.set_tag, tag_suffix),
        names: fv
            .names
            .iter()
            .map(|n| format!("{name_prefix}({n})"))
            .collect(),
        values: fv.values.iter().map(|&v| impute(f(v))).collect(),
        label: fv.label.clone(),
    }
}

/// Column-aligned labelled dataset. y is 1 for bound entangled, 0 for
/// separable; family carries the generator tag (marginal-noise rows record
/// their seed family as "MarginalNoise:<seed>"); params holds the JSON-encoded
/// generator parameters of each row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub family: Vec<String>,
    pub params: Vec<String>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>) -> Self {
        Dataset {
            feature_names,
            ..Dataset::default()
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, fv: &FeatureVector, family_tag: Option<&str>) -> Result<()> {
        if fv.names != self.feature_names {
            return Err(QmError::Schema(format!(
                "feature names mismatch: dataset has {} columns starting {:?}, vector has {}",
                self.n_features(),
                self.feature_names.first(),
                fv.len()
            )));
        }
        let y = match fv.label.truth {
            Truth::Be => 1,
            Truth::Sep => 0,
            other => {
                return Err(QmError::Validation(format!(
                    "dataset rows need truth BE or SEP, got {}",
                    other.as_str()
                )))
            }
        };
        self.x.push(fv.values.clone());
        self.y.push(y);
        self.family
            .push(family_tag.unwrap_or(fv.label.family.as_str()).to_string());
        self.params.push(serde_json::to_string(&fv.label.params)?);
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.feature_index(name)?;
        Some(self.x.iter().map(|row| row[i]).collect())
    }

    /// Row subset in the given order; indices may repeat (bootstrap use).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            x: indices.iter().map(|&i| self.x[i].clone()).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            family: indices.iter().map(|&i| self.family[i].clone()).collect(),
            params: indices.iter().map(|&i| self.params[i].clone()).collect(),
        }
    }

    /// (separable, bound-entangled) row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let be = self.y.iter().filter(|&&y| y == 1).count();
        (self.y.len() - be, be)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(|s| s.as_str()).collect();
        header.extend(["label", "family", "param_json"]);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.x[i].iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.y[i]));
            rec.push(self.family[i].clone());
            rec.push(self.params[i].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[cols.len() - 3..] != ["label", "family", "param_json"] {
            return Err(QmError::Schema(
                "dataset CSV must end with label, family, param_json columns".to_string(),
            ));
        }
        let n_feat = cols.len() - 3;
        let mut ds = Dataset::new(cols[..n_feat].iter().map(|s| s.to_string()).collect());
        for (rix, record) in r.records().enumerate() {
            let record = record?;
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    QmError::Schema(format!("row {rix}: bad {what} value {s:?}"))
                })
            };
            let mut row = Vec::with_capacity(n_feat);
            for j in 0..n_feat {
                row.push(parse(&record[j], cols[j])?);
            }
            let y = match &record[n_feat] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(QmError::Schema(format!("row {rix}: bad label {other:?}")))
                }
            };
            ds.x.push(row);
            ds.y.push(y);
            ds.family.push(record[n_feat + 1].to_string());
            ds.params.push(record[n_feat + 2].to_string());
        }
        Ok(ds)
    }
}

/// Per-family row counts for the generator. The desk recipe keeps the
/// full-scale family proportions at 2,000 rows total; paper_scale restores
/// the 13,600-row composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub horodecki: usize,
    pub chessboard: usize,
    pub tiles: usize,
    pub mn_horodecki: usize,
    pub mn_chessboard: usize,
    pub mn_tiles: usize,
    pub mixed: usize,
    pub separable: usize,
}

impl FamilyCounts {
    pub fn desk() -> Self {
        FamilyCounts {
            horodecki: 300,
            chessboard: 300,
            tiles: 50,
            mn_horodecki: 150,
            mn_chessboard: 100,
            mn_tiles: 50,
            mixed: 50,
            separable: 1000,
        }
    }

    pub fn paper_scale() -> Self {
        FamilyCounts {
            horodecki: 2000,
            chessboard: 2000,
            tiles: 100,
            mn_horodecki: 1000,
            mn_chessboard: 1000,
            mn_tiles: 200,
            mixed: 500,
            separable: 6800,
        }
    }

    pub fn be_total(&self) -> usize {
        self.horodecki
            + self.chessboard
            + self.tiles
            + self.mn_horodecki
            + self.mn_chessboard
            + self.mn_tiles
            + self.mixed
    }

    pub fn total(&self) -> usize {
        self.be_total() + self.separable
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSetKind {
    Core8,
    Ext83,
    Core8Poly2,
}

impl FeatureSetKind {
    pub fn tag(&self) -> &'static str {
        match self {
            FeatureSetKind::Core8 => "CORE8",
            FeatureSetKind::Ext83 => "EXT83",
            FeatureSetKind::Core8Poly2 => "CORE8-POLY2",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub feature_set: String,
    pub counts: FamilyCounts,
    pub n_rows: usize,
    pub n_features: usize,
    pub grids: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<DatasetManifest> {
        let s = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// All integer-grid chessboard parameter tuples with (a,b,c,d) in {1..4}^4,
/// (m,n) in {1..3}^2, and mn != ab (the entangled branch of the family).
pub fn chessboard_integer_grid() -> Vec<ChessboardParams> {
    let mut pool = Vec::new();
    for a in 1..=4u32 {
        for b in 1..=4u32 {
            for c in 1..=4u32 {
                for d in 1..=4u32 {
                    for m in 1..=3u32 {
                        for n in 1..=3u32 {
                            if m * n != a * b {
                                pool.push(ChessboardParams::new(
                                    a as f64, b as f64, c as f64, d as f64, m as f64, n as f64,
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    pool
}

fn grid_point(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// First `count` positions of a seeded partial Fisher-Yates shuffle of
/// 0..pool (without replacement); falls back to replacement when the pool is
/// smaller than the request.
fn sample_indices(pool: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if count <= pool {
        let mut idx: Vec<usize> = (0..pool).collect();
        for i in 0..count {
            let j = rng.random_range(i..pool);
            idx.swap(i, j);
        }
        idx.truncate(count);
        idx
    } else {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

fn chessboard_label_params(p: &ChessboardParams) -> Vec<(&'static str, f64)> {
    vec![
        ("a", p.a),
        ("b", p.b),
        ("c", p.c),
        ("d", p.d),
        ("m", p.m),
        ("n", p.n),
    ]
}

fn assert_ppt(rho: &DensityMatrix, what: &str) -> Result<()> {
    let eig = spectral::herm_eigvals(&rho.partial_transpose(true));
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(QmError::Validation(format!(
            "{what}: generated state is not PPT (min PT eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

type StateSpec = (DensityMatrix, StateLabel, String);

fn build_state_specs(counts: &FamilyCounts, tree: &SeedTree) -> Result<Vec<StateSpec>> {
    let mut specs: Vec<StateSpec> = Vec::with_capacity(counts.total());

    for i in 0..counts.horodecki {
        let a = grid_point(0.01, 0.99, i, counts.horodecki);
        let rho = make_horodecki(a)?;
        assert_ppt(&rho, "Horodecki")?;
        let label = StateLabel::new(Family::Horodecki, &[("a", a)], Truth::Be);
        specs.push((rho, label, "Horodecki".to_string()));
    }

    let pool = chessboard_integer_grid();
    let mut rng = tree.rng("chessboard", 0);
    for idx in sample_indices(pool.len(), counts.chessboard, &mut rng) {
        let p = pool[idx];
        let rho = make_chessboard(p)?;
        assert_ppt(&rho, "Chessboard")?;
        let label = StateLabel::new(Family::Chessboard, &chessboard_label_params(&p), Truth::Be);
        specs.push((rho, label, "Chessboard".to_string()));
    }

    for i in 0..counts.tiles {
        let eps = grid_point(0.0, 0.05, i, counts.tiles);
        let rho = make_tiles(eps)?;
        assert_ppt(&rho, "Tiles")?;
        let label = StateLabel::new(Family::Tiles, &[("epsilon", eps)], Truth::Be);
        specs.push((rho, label, "Tiles".to_string()));
    }

    let mut rng = tree.rng("mn-horodecki", 0);
    for _ in 0..counts.mn_horodecki {
        let a = rng.random_range(0.1..0.9);
        let t = rng.random_range(0.01..0.20);
        let rho = make_marginal_noise(&make_horodecki(a)?, t)?;
        assert_ppt(&rho, "MarginalNoise:Horodecki")?;
        let label = StateLabel::new(
            Family::MarginalNoise,
            &[("a", a), ("t", t)],
            Truth::Be,
        );
        specs.push((rho, label, "MarginalNoise:Horodecki".to_string()));
    }

    let mut rng = tree.rng("mn-chessboard", 0);
    for _ in 0..counts.mn_chessboard {
        let p = pool[rng.random_range(0..pool.len())];
        let t = rng.random_range(0.01..0.20);
        let rho = make_marginal_noise(&make_chessboard(p)?, t)?;
        assert_ppt(&rho, "MarginalNoise:Chessboard")?;
        let mut params = chessboard_label_params(&p);
        params.push(("t", t));
        let label = StateLabel::new(Family::MarginalNoise, &params, Truth::Be);
        specs.push((rho, label, "MarginalNoise:Chessboard".to_string()));
    }

    let mut rng = tree.rng("mn-tiles", 0);
    for _ in 0..counts.mn_tiles {
        let eps = rng.random_range(0.0..0.05);
        let t = rng.random_range(0.01..0.20);
        let rho = make_marginal_noise(&make_tiles(eps)?, t)?;
        assert_ppt(&rho, "MarginalNoise:Tiles")?;
        let label = StateLabel::new(
            Family::MarginalNoise,
            &[("epsilon", eps), ("t", t)],
            Truth::Be,
        );
        specs.push((rho, label, "MarginalNoise:Tiles".to_string()));
    }

    let mut rng = tree.rng("mixed", 0);
    for _ in 0..counts.mixed {
        let a = rng.random_range(0.1..0.9);
        let eps = rng.random_range(0.005..0.04);
        let rho = depolarize(&make_horodecki(a)?, eps)?;
        assert_ppt(&rho, "MixedBe")?;
        let label = StateLabel::new(
            Family::MixedBe,
            &[("a", a), ("epsilon", eps)],
            Truth::Be,
        );
        specs.push((rho, label, "MixedBe".to_string()));
    }

    // term counts 2..20 matching the certified separable pool; K=1 pure
    // products are covered by dedicated identity tests instead
    for i in 0..counts.separable {
        let mut rng = tree.rng("separable", i as u64);
        let k = rng.random_range(2..=20usize);
        let rho = random_separable(k, DIMS_3X3, &mut rng);
        let label = StateLabel::new(Family::RandomSeparable, &[("K", k as f64)], Truth::Sep);
        specs.push((rho, label, "RandomSeparable".to_string()));
    }

    Ok(specs)
}

fn manifest_grids(counts: &FamilyCounts) -> BTreeMap<String, String> {
    let mut g = BTreeMap::new();
    g.insert(
        "Horodecki".to_string(),
        format!("a: {} uniform grid points in [0.01, 0.99]", counts.horodecki),
    );
    g.insert(
        "Chessboard".to_string(),
        "integer grid (a,b,c,d) in {1..4}^4, (m,n) in {1..3}^2 with mn != ab, \
         subsampled without replacement"
            .to_string(),
    );
    g.insert(
        "Tiles".to_string(),
        format!("epsilon: {} uniform grid points in [0, 0.05]", counts.tiles),
    );
    g.insert(
        "MarginalNoise:Horodecki".to_string(),
        "a ~ U(0.1, 0.9), t ~ U(0.01, 0.20)".to_string(),
    );
    g.insert(
        "MarginalNoise:Chessboard".to_string(),
        "integer-grid tuple, t ~ U(0.01, 0.20)".to_string(),
    );
    g.insert(
        "MarginalNoise:Tiles".to_string(),
        "epsilon ~ U(0, 0.05), t ~ U(0.01, 0.20)".to_string(),
    );
    g.insert(
        "MixedBe".to_string(),
        "Horodecki a ~ U(0.1, 0.9), depolarizing epsilon ~ U(0.005, 0.04)".to_string(),
    );
    g.insert(
        "RandomSeparable".to_string(),
        "K ~ U{2..20} pure product terms, exponential random weights".to_string(),
    );
    g
}

/// Seeded dataset generator. Bound-entangled rows are PPT-verified at
/// generation; feature rows are computed in parallel but the row order and
/// every value are functions of the seed alone.
pub fn generate_dataset(
    counts: &FamilyCounts,
    kind: FeatureSetKind,
    seed: u64,
) -> Result<(Dataset, DatasetManifest)> {
    let tree = SeedTree::new(seed);
    let specs = build_state_specs(counts, &tree)?;
    let rows: Result<Vec<(FeatureVector, String)>> = specs
        .par_iter()
        .map(|(rho, label, tag)| {
            let fv = match kind {
                FeatureSetKind::Core8 => core8(rho, label),
                FeatureSetKind::Ext83 => ext83(rho, label)?,
                FeatureSetKind::Core8Poly2 => expand(&core8(rho, label), Expansion::Poly2),
            };
            Ok((fv, tag.clone()))
        })
        .collect();
    let rows = rows?;

    let names = rows
        .first()
        .map(|(fv, _)| fv.names.clone())
        .unwrap_or_default();
    let mut ds = Dataset::new(names);
    for (fv, tag) in &rows {
        ds.push(fv, Some(tag))?;
    }
    let manifest = DatasetManifest {
        schema_version: 1,
        seed,
        feature_set: kind.tag().to_string(),
        counts: *counts,
        n_rows: ds.n_rows(),
        n_features: ds.n_features(),
        grids: manifest_grids(counts),
    };
    Ok((ds, manifest))
}
