//! From-scratch classifiers for bound-entanglement detection: elastic-net
//! logistic regression (FISTA proximal gradient), random forests with an
//! extra-trees mode, the cross-validated zero-false-positive protocol, and
//! threshold-sweep evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::Dataset;
use crate::seeds::SeedTree;
use crate::{QmError, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-feature standardization fitted on the training split only.
/// Zero-variance columns keep scale 1 so they pass through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &[Vec<f64>]) -> Scaler {
        let n = x.len().max(1) as f64;
        let p = x.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; p];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; p];
        for row in x {
            for j in 0..p {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { mean, scale }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }
}

/// Elastic-net logistic regression trained by FISTA. The objective is the
/// class-weight-balanced mean logistic loss plus λ₁‖w‖₁ + (λ₂/2)‖w‖²; the
/// intercept is unpenalized and features are standardized internally.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogRegEn {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub scaler: Scaler,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub converged: bool,
    pub final_gap: f64,
    pub n_iter: usize,
}

impl LogRegEn {
    pub fn score_std(&self, z: &[f64]) -> f64 {
        let m: f64 = self
            .weights
            .iter()
            .zip(z)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.intercept;
        sigmoid(m)
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|w| w.abs() > 1e-9).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// 0 selects floor(sqrt(n_features))
    pub features_per_split: usize,
    pub min_leaf: usize,
    /// extra-trees mode: one uniform random threshold per candidate feature
    /// instead of the exhaustive midpoint scan
    pub extra_trees: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: 16,
            features_per_split: 0,
            min_leaf: 1,
            extra_trees: false,
            seed: 0,
        }
    }
}

/// One CART tree in flattened-array form: node i is a leaf when
/// feature[i] < 0, otherwise x[feature[i]] <= threshold[i] goes left.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    pub leaf_prob: Vec<f64>,
}

impl Tree {
    fn push_node(&mut self) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(-1);
        self.right.push(-1);
        self.leaf_prob.push(0.0);
        self.feature.len() - 1
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            let f = self.feature[node];
            if f < 0 {
                return self.leaf_prob[node];
            }
            node = if row[f as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
    /// out-of-bag misclassification rate at threshold 0.5, when every row
    /// was left out of at least one bootstrap sample
    pub oob_error: Option<f64>,
}

impl ForestModel {
    pub fn score_row(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        s / self.trees.len() as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ModelKind {
    LogRegEn(LogRegEn),
    Forest(ForestModel),
}

/// Serializable classifier with its feature schema. Scoring matches columns
/// by name, so datasets with permuted columns score identically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub model: ModelKind,
}

impl ClassifierModel {
    /// Column map from the model schema into `ds`; explicit diff on mismatch.
    fn column_map(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let mut map = Vec::with_capacity(self.feature_names.len());
        let mut missing = Vec::new();
        for name in &self.feature_names {
            match ds.feature_index(name) {
                Some(i) => map.push(i),
                None => missing.push(name.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(QmError::Schema(format!(
                "dataset is missing model features {missing:?} (dataset has {} columns)",
                ds.n_features()
            )));
        }
        Ok(map)
    }

    pub fn score_rows(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let map = self.column_map(ds)?;
        let gather = |row: &Vec<f64>| -> Vec<f64> { map.iter().map(|&j| row[j]).collect() };
        let scores = match &self.model {
            ModelKind::LogRegEn(lr) => ds
                .x
                .par_iter()
                .map(|row| lr.score_std(&lr.scaler.transform_row(&gather(row))))
                .collect(),
            ModelKind::Forest(f) => ds.x.par_iter().map(|row| f.score_row(&gather(row))).collect(),
        };
        Ok(scores)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<ClassifierModel> {
        let s = std::fs::read_to_string(path)?;
        let model: ClassifierModel = serde_json::from_str(&s)?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(QmError::Schema(format!(
                "model schema version {} unsupported (expected {})",
                model.schema_version, MODEL_SCHEMA_VERSION
            )));
        }
        Ok(model)
    }
}

/// Balanced class weights: w_c = n / (2 n_c), so each class contributes half
/// the total weight.
fn class_weights(y: &[u8]) -> Result<Vec<f64>> {
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = y.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(QmError::Validation(
            "training needs both classes present".to_string(),
        ));
    }
    let n = y.len() as f64;
    let (w0, w1) = (n / (2.0 * n0 as f64), n / (2.0 * n1 as f64));
    Ok(y.iter().map(|&v| if v == 1 { w1 } else { w0 }).collect())
}

pub fn train_logreg_en(
    ds: &Dataset,
    lambda_l1: f64,
    lambda_l2: f64,
    max_iter: usize,
) -> Result<ClassifierModel> {
    if ds.is_empty() {
        return Err(QmError::Validation("empty training set".to_string()));
    }
    let scaler = Scaler::fit(&ds.x);
    let z: Vec<Vec<f64>> = ds.x.iter().map(|r| scaler.transform_row(r)).collect();
    let cw = class_weights(&ds.y)?;
    let n = z.len();
    let p = z[0].len();
    let wsum: f64 = cw.iter().sum();

    // Lipschitz constant of the smooth part via power iteration on
    // M^T M with M = diag(sqrt(c/W)) Z; L = sigma_max^2 / 4 + lambda_l2.
    let mut v = vec![1.0 / (p as f64).sqrt(); p];
    let mut sig2 = 0.0;
    for _ in 0..50 {
        let mut mv = vec![0.0; n];
        for i in 0..n {
            mv[i] = cw[i] / wsum * z[i].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut mt = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                mt[j] += z[i][j] * mv[i];
            }
        }
        sig2 = mt.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm = sig2.max(1e-300);
        for (vj, mj) in v.iter_mut().zip(&mt) {
            *vj = mj / norm;
        }
    }
    let step = 1.0 / (sig2 / 4.0 + lambda_l2 + 1e-12);

    let objective = |w: &[f64], b: f64| -> f64 {
        let mut loss = 0.0;
        for i in 0..n {
            let m: f64 = z[i].iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            // log(1 + exp(-margin)) with the stable branch
            let t = if ds.y[i] == 1 { m } else { -m };
            loss += cw[i] * if t >= 0.0 { (-t).exp().ln_1p() } else { -t + t.exp().ln_1p() };
        }
        loss / wsum
            + lambda_l1 * w.iter().map(|x| x.abs()).sum::<f64>()
            + 0.5 * lambda_l2 * w.iter().map(|x| x * x).sum::<f64>()
    };

    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut w_prev = w.clone();
    let mut b_prev = b;
    let mut t_k = 1.0f64;
    let mut obj = objective(&w, b);
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut iters = 0;
    for it in 1..=max_iter {
        iters = it;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
        let beta = (t_k - 1.0) / t_next;
        let yw: Vec<f64> = w.iter().zip(&w_prev).map(|(a, o)| a + beta * (a - o)).collect();
        let yb = b + beta * (b - b_prev);

        let mut gw = vec![0.0; p];
        let mut gb = 0.0;
        for i in 0..n {
            let m: f64 = z[i].iter().zip(&yw).map(|(a, c)| a * c).sum::<f64>() + yb;
            let r = cw[i] / wsum * (sigmoid(m) - ds.y[i] as f64);
            for j in 0..p {
                gw[j] += r * z[i][j];
            }
            gb += r;
        }
        w_prev = w.clone();
        b_prev = b;
        let thr = lambda_l1 * step;
        w = yw
            .iter()
            .zip(&gw)
            .map(|(&wy, &g)| {
                let u = wy - step * (g + lambda_l2 * wy);
                // soft threshold
                if u > thr {
                    u - thr
                } else if u < -thr {
                    u + thr
                } else {
                    0.0
                }
            })
            .collect();
        b = yb - step * gb;
        t_k = t_next;

        let new_obj = objective(&w, b);
        gap = (obj - new_obj).abs() / obj.abs().max(1.0);
        obj = new_obj;
        if gap < 1e-8 && it > 2 {
            converged = true;
            break;
        }
    }
    if !converged {
        eprintln!(
            "warning: logistic regression stopped at max_iter = {max_iter} with relative \
             objective gap {gap:.3e}"
        );
    }
    Ok(ClassifierModel {
        schema_version: MODEL_SCHEMA_VERSION,
        feature_names: ds.feature_names.clone(),
        model: ModelKind::LogRegEn(LogRegEn {
            weights: w,
            intercept: b,
            scaler,
            lambda_l1,
            lambda_l2,
            converged,
            final_gap: gap,
            n_iter: iters,
        }),
    })
}

/// λ pair matching an sklearn-style (C, l1_ratio) elastic-net point for a
/// given training-set size under the mean-loss objective used here.
pub fn sklearn_lambda(c: f64, l1_ratio: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    (l1_ratio / (c * n), (1.0 - l1_ratio) / (c * n))
}

/// λ₁ grid for elastic-net tuning: log-spaced 1e-4..1e-1, each with
/// λ₂ = (3/7)λ₁ (the l1_ratio = 0.7 mix), plus the (C=1, l1_ratio=0.7)
/// point for the given n.
pub fn lambda_grid(n: usize) -> Vec<(f64, f64)> {
    let mut grid: Vec<(f64, f64)> = (0..7)
        .map(|i| {
            let l1 = 10f64.powf(-4.0 + i as f64 * 0.5);
            (l1, l1 * 3.0 / 7.0)
        })
        .collect();
    grid.push(sklearn_lambda(1.0, 0.7, n));
    grid
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    cfg: &'a ForestConfig,
    k_features: usize,
    tree: Tree,
}

impl TreeBuilder<'_> {
    fn gini(n1: f64, n: f64) -> f64 {
        if n <= 0.0 {
            return 0.0;
        }
        let p = n1 / n;
        2.0 * p * (1.0 - p)
    }

    /// Best (threshold, gini_decrease) for one feature over the given rows.
    fn scan_feature(&self, rows: &[usize], f: usize, rng: &mut ChaCha8Rng) -> Option<(f64, f64)> {
        let n = rows.len() as f64;
        let n1: f64 = rows.iter().map(|&i| self.y[i] as f64).sum();
        let parent = Self::gini(n1, n);
        if parent <= 0.0 {
            return None;
        }
        if self.cfg.extra_trees {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in rows {
                lo = lo.min(self.x[i][f]);
                hi = hi.max(self.x[i][f]);
            }
            if hi <= lo {
                return None;
            }
            let thr = rng.random_range(lo..hi);
            let (mut ln, mut l1) = (0.0, 0.0);
            for &i in rows {
                if self.x[i][f] <= thr {
                    ln += 1.0;
                    l1 += self.y[i] as f64;
                }
            }
            let rn = n - ln;
            if ln < self.cfg.min_leaf as f64 || rn < self.cfg.min_leaf as f64 {
                return None;
            }
            let child = (ln * Self::gini(l1, ln) + rn * Self::gini(n1 - l1, rn)) / n;
            return Some((thr, parent - child));
        }
        let mut vals: Vec<(f64, u8)> = rows.iter().map(|&i| (self.x[i][f], self.y[i])).collect();
        vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut best: Option<(f64, f64)> = None;
        let (mut ln, mut l1) = (0.0f64, 0.0f64);
        for w in 0..vals.len() - 1 {
            ln += 1.0;
            l1 += vals[w].1 as f64;
            if vals[w].0 == vals[w + 1].0 {
                continue;
            }
            let rn = n - ln;
            if ln < self.cfg.min_leaf as f64 || rn < self.cfg.min_leaf as f64 {
                continue;
            }
            let child = (ln * Self::gini(l1, ln) + rn * Self::gini(n1 - l1, rn)) / n;
            let dec = parent - child;
            if best.map_or(true, |(_, d)| dec > d) {
                best = Some((0.5 * (vals[w].0 + vals[w + 1].0), dec));
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let node = self.tree.push_node();
        let n1: f64 = rows.iter().map(|&i| self.y[i] as f64).sum();
        self.tree.leaf_prob[node] = n1 / rows.len() as f64;
        if depth >= self.cfg.max_depth
            || rows.len() < 2 * self.cfg.min_leaf
            || n1 == 0.0
            || n1 == rows.len() as f64
        {
            return node;
        }
        let p = self.x[0].len();
        let mut feats: Vec<usize> = (0..p).collect();
        for i in 0..self.k_features.min(p) {
            let j = rng.random_range(i..p);
            feats.swap(i, j);
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for &f in feats.iter().take(self.k_features.min(p)) {
            if let Some((thr, dec)) = self.scan_feature(&rows, f, rng) {
                if best.map_or(true, |(_, _, d)| dec > d) {
                    best = Some((f, thr, dec));
                }
            }
        }
        let Some((f, thr, dec)) = best else {
            return node;
        };
        if dec <= 1e-15 {
            return node;
        }
        let (lrows, rrows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.x[i][f] <= thr);
        self.tree.feature[node] = f as i32;
        self.tree.threshold[node] = thr;
        let l = self.build(lrows, depth + 1, rng);
        let r = self.build(rrows, depth + 1, rng);
        self.tree.left[node] = l as i32;
        self.tree.right[node] = r as i32;
        node
    }
}

pub fn train_random_forest(ds: &Dataset, cfg: &ForestConfig) -> Result<ClassifierModel> {
    if ds.is_empty() {
        return Err(QmError::Validation("empty training set".to_string()));
    }
    class_weights(&ds.y)?;
    let n = ds.n_rows();
    let p = ds.n_features();
    let k_features = if cfg.features_per_split == 0 {
        (p as f64).sqrt().floor().max(1.0) as usize
    } else {
        cfg.features_per_split
    };
    let tree_seeds = SeedTree::new(cfg.seed);

    let built: Vec<(Tree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_seeds.rng("tree", t as u64);
            let mut in_bag = vec![false; n];
            let rows: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let mut builder = TreeBuilder {
                x: &ds.x,
                y: &ds.y,
                cfg,
                k_features,
                tree: Tree::default(),
            };
            builder.build(rows, 0, &mut rng);
            (builder.tree, in_bag)
        })
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_cnt = vec![0usize; n];
    for (tree, in_bag) in &built {
        for i in 0..n {
            if !in_bag[i] {
                oob_sum[i] += tree.predict(&ds.x[i]);
                oob_cnt[i] += 1;
            }
        }
    }
    let covered = oob_cnt.iter().filter(|&&c| c > 0).count();
    let oob_error = if covered == n {
        let wrong = (0..n)
            .filter(|&i| {
                let prob = oob_sum[i] / oob_cnt[i] as f64;
                (prob > 0.5) != (ds.y[i] == 1)
            })
            .count();
        Some(wrong as f64 / n as f64)
    } else {
        None
    };

    Ok(ClassifierModel {
        schema_version: MODEL_SCHEMA_VERSION,
        feature_names: ds.feature_names.clone(),
        model: ModelKind::Forest(ForestModel {
            config: *cfg,
            trees: built.into_iter().map(|(t, _)| t).collect(),
            oob_error,
        }),
    })
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at_threshold(scores: &[f64], y: &[u8], thr: f64) -> Confusion {
        let mut c = Confusion::default();
        for (&s, &yy) in scores.iter().zip(y) {
            match (s > thr, yy == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn recall(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_).max(1) as f64
    }

    pub fn fp_rate(&self) -> f64 {
        self.fp as f64 / (self.fp + self.tn).max(1) as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    /// threshold = max separable score; detection requires a strictly
    /// greater score, so the separable false-positive count is zero by
    /// construction
    pub zero_fp_threshold: f64,
    pub recall_at_zero_fp: f64,
    pub confusion_at_half: Confusion,
    /// per-family BE recall at the zero-FP threshold
    pub per_family_recall: BTreeMap<String, f64>,
    /// (fpr, tpr) by descending-threshold sweep
    pub roc_points: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fpr", "tpr"])?;
        for (fpr, tpr) in &self.roc_points {
            w.write_record([format!("{fpr}"), format!("{tpr}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// ROC / AUC / zero-FP metrics for precomputed scores.
pub fn evaluate_scores(scores: &[f64], y: &[u8], families: &[String]) -> Result<EvalReport> {
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = y.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(QmError::Validation(
            "evaluation needs both classes present".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut roc = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        // advance through ties as one threshold step
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / n0 as f64, tp as f64 / n1 as f64));
    }
    let auc: f64 = roc
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum();

    let thr = scores
        .iter()
        .zip(y)
        .filter(|(_, &yy)| yy == 0)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let zero_fp = Confusion::at_threshold(scores, y, thr);
    debug_assert_eq!(zero_fp.fp, 0);

    let mut fam_tp: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((&s, &yy), fam) in scores.iter().zip(y).zip(families) {
        if yy == 1 {
            let e = fam_tp.entry(fam.clone()).or_default();
            e.1 += 1;
            if s > thr {
                e.0 += 1;
            }
        }
    }
    let per_family_recall = fam_tp
        .into_iter()
        .map(|(k, (d, t))| (k, d as f64 / t as f64))
        .collect();

    Ok(EvalReport {
        auc,
        zero_fp_threshold: thr,
        recall_at_zero_fp: zero_fp.recall(),
        confusion_at_half: Confusion::at_threshold(scores, y, 0.5),
        per_family_recall,
        roc_points: roc,
    })
}

pub fn evaluate(model: &ClassifierModel, ds: &Dataset) -> Result<EvalReport> {
    let scores = model.score_rows(ds)?;
    evaluate_scores(&scores, &ds.y, &ds.family)
}

/// Training recipe used inside cross-validation. FixedScore bypasses
/// training and scores rows by one named feature (the CCNR baseline uses
/// feature "S1").
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum TrainerConfig {
    LogRegEn {
        lambda_l1: f64,
        lambda_l2: f64,
        max_iter: usize,
    },
    Forest(ForestConfig),
    FixedScore { feature: String },
}

impl TrainerConfig {
    fn fit_scores(&self, train: &Dataset, test: &Dataset) -> Result<Vec<f64>> {
        match self {
            TrainerConfig::LogRegEn {
                lambda_l1,
                lambda_l2,
                max_iter,
            } => train_logreg_en(train, *lambda_l1, *lambda_l2, *max_iter)?.score_rows(test),
            TrainerConfig::Forest(cfg) => train_random_forest(train, cfg)?.score_rows(test),
            TrainerConfig::FixedScore { feature } => test
                .column(feature)
                .ok_or_else(|| QmError::Schema(format!("no feature named {feature:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvReport {
    pub n_folds: usize,
    pub fold_recalls: Vec<f64>,
    pub mean_recall_zero_fp: f64,
    /// held-out separable states scored above threshold, per fold; zero by
    /// construction of the strictly-greater rule
    pub fold_fp_counts: Vec<usize>,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    pub fold_thresholds: Vec<f64>,
    /// pooled BE recall per family at the per-fold thresholds
    pub per_family_recall: BTreeMap<String, f64>,
}

/// Stratified fold assignment by (label, family): each group is shuffled
/// and dealt round-robin, so every fold keeps the class and family mix.
fn stratified_folds(ds: &Dataset, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut groups: BTreeMap<(u8, &str), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n_rows() {
        groups
            .entry((ds.y[i], ds.family[i].as_str()))
            .or_default()
            .push(i);
    }
    let mut fold_of = vec![0usize; ds.n_rows()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = 0usize;
    for idx in groups.values_mut() {
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        for &row in idx.iter() {
            fold_of[row] = next % n_folds;
            next += 1;
        }
    }
    fold_of
}

/// Cross-validated zero-false-positive protocol: per fold, train on the
/// complement, set the threshold to the maximum separable score in the
/// held-out fold, and count a detection only for strictly greater scores.
pub fn cv_zero_fp(
    ds: &Dataset,
    cfg: &TrainerConfig,
    n_folds: usize,
    seed: u64,
) -> Result<CvReport> {
    if n_folds < 2 {
        return Err(QmError::Parameter("n_folds must be at least 2".to_string()));
    }
    let fold_of = stratified_folds(ds, n_folds, seed);
    for f in 0..n_folds {
        let has_sep = (0..ds.n_rows()).any(|i| fold_of[i] == f && ds.y[i] == 0);
        if !has_sep {
            return Err(QmError::Validation(format!(
                "fold {f} has no separable states; stratification impossible"
            )));
        }
    }

    let fold_results: Result<Vec<_>> = (0..n_folds)
        .into_par_iter()
        .map(|f| {
            let test_idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| fold_of[i] == f).collect();
            let train_idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| fold_of[i] != f).collect();
            let train = ds.subset(&train_idx);
            let test = ds.subset(&test_idx);
            let scores = cfg.fit_scores(&train, &test)?;
            let thr = scores
                .iter()
                .zip(&test.y)
                .filter(|(_, &y)| y == 0)
                .map(|(&s, _)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            let conf = Confusion::at_threshold(&scores, &test.y, thr);
            let auc = evaluate_scores(&scores, &test.y, &test.family)?.auc;
            let mut fam: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for i in 0..test.n_rows() {
                if test.y[i] == 1 {
                    let e = fam.entry(test.family[i].clone()).or_default();
                    e.1 += 1;
                    if scores[i] > thr {
                        e.0 += 1;
                    }
                }
            }
            Ok((conf.recall(), conf.fp, auc, thr, fam))
        })
        .collect();
    let fold_results = fold_results?;

    let mut fam_total: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (_, _, _, _, fam) in &fold_results {
        for (k, (d, t)) in fam {
            let e = fam_total.entry(k.clone()).or_default();
            e.0 += d;
            e.1 += t;
        }
    }
    let fold_recalls: Vec<f64> = fold_results.iter().map(|r| r.0).collect();
    let fold_fp_counts: Vec<usize> = fold_results.iter().map(|r| r.1).collect();
    let fold_aucs: Vec<f64> = fold_results.iter().map(|r| r.2).collect();
    Ok(CvReport {
        n_folds,
        mean_recall_zero_fp: fold_recalls.iter().sum::<f64>() / n_folds as f64,
        fold_recalls,
        fold_fp_counts,
        mean_auc: fold_aucs.iter().sum::<f64>() / n_folds as f64,
        fold_aucs,
        fold_thresholds: fold_results.iter().map(|r| r.3).collect(),
        per_family_recall: fam_total
            .into_iter()
            .map(|(k, (d, t))| (k, d as f64 / t.max(1) as f64))
            .collect(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuneReport {
    pub lambdas: Vec<(f64, f64)>,
    pub mean_aucs: Vec<f64>,
    pub se_aucs: Vec<f64>,
    pub best_index: usize,
    pub chosen_index: usize,
    pub chosen_lambda: (f64, f64),
}

/// Selects the elastic-net penalty by stratified CV AUC with the one-SE
/// rule: among all grid points whose mean AUC is within one standard error
/// of the best, take the sparsest (largest lambda_l1). Plain argmax ties
/// toward the densest model here because the AUC plateau is wide.
/// Returns the model refit on the full dataset at the chosen penalty.
pub fn tune_logreg(
    ds: &Dataset,
    lambdas: &[(f64, f64)],
    n_folds: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(ClassifierModel, TuneReport)> {
    if lambdas.is_empty() {
        return Err(QmError::Parameter("empty lambda grid".to_string()));
    }
    if n_folds < 2 {
        return Err(QmError::Parameter("n_folds must be at least 2".to_string()));
    }
    let fold_of = stratified_folds(ds, n_folds, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..n_folds)
        .map(|f| {
            let test_idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| fold_of[i] == f).collect();
            let train_idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| fold_of[i] != f).collect();
            (ds.subset(&train_idx), ds.subset(&test_idx))
        })
        .collect();

    let per_lambda: Result<Vec<(f64, f64)>> = lambdas
        .par_iter()
        .map(|&(l1, l2)| {
            let mut aucs = Vec::with_capacity(n_folds);
            for (train, test) in &splits {
                let model = train_logreg_en(train, l1, l2, max_iter)?;
                let scores = model.score_rows(test)?;
                aucs.push(evaluate_scores(&scores, &test.y, &test.family)?.auc);
            }
            let mean = aucs.iter().sum::<f64>() / n_folds as f64;
            let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
                / (n_folds as f64 - 1.0);
            Ok((mean, (var / n_folds as f64).sqrt()))
        })
        .collect();
    let per_lambda = per_lambda?;

    let best_index = per_lambda
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .unwrap();
    let floor = per_lambda[best_index].0 - per_lambda[best_index].1;
    let chosen_index = (0..lambdas.len())
        .filter(|&i| per_lambda[i].0 >= floor)
        .max_by(|&a, &b| lambdas[a].0.total_cmp(&lambdas[b].0))
        .unwrap();

    let (l1, l2) = lambdas[chosen_index];
    let model = train_logreg_en(ds, l1, l2, max_iter)?;
    Ok((
        model,
        TuneReport {
            lambdas: lambdas.to_vec(),
            mean_aucs: per_lambda.iter().map(|p| p.0).collect(),
            se_aucs: per_lambda.iter().map(|p| p.1).collect(),
            best_index,
            chosen_index,
            chosen_lambda: (l1, l2),
        },
    ))
}

/// Fraction of bound-entangled rows visible to the plain CCNR rule S1 > 1.
pub fn ccnr_recall_at_unit_threshold(ds: &Dataset) -> Result<f64> {
    let s1 = ds
        .column("S1")
        .ok_or_else(|| QmError::Schema("dataset has no S1 column".to_string()))?;
    let be: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.y[i] == 1).collect();
    if be.is_empty() {
        return Err(QmError::Validation("no bound-entangled rows".to_string()));
    }
    let hits = be.iter().filter(|&&i| s1[i] > 1.0).count();
    Ok(hits as f64 / be.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize, seed: u64, noise: f64, sep_gap: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(vec!["f0".to_string(), "f1".to_string(), "f2".to_string()]);
        for i in 0..n {
            let y = (i % 2) as u8;
            let base = if y == 1 { sep_gap } else { -sep_gap };
            let row = vec![
                base + noise * (rng.random::<f64>() - 0.5),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ];
            ds.x.push(row);
            ds.y.push(y);
            ds.family
                .push(if y == 1 { "toyBE" } else { "toySEP" }.to_string());
            ds.params.push("{}".to_string());
        }
        ds
    }

    #[test]
    fn scaler_standardizes() {
        let ds = toy_dataset(100, 3, 1.0, 0.5);
        let sc = Scaler::fit(&ds.x);
        let z: Vec<Vec<f64>> = ds.x.iter().map(|r| sc.transform_row(r)).collect();
        for j in 0..3 {
            let m: f64 = z.iter().map(|r| r[j]).sum::<f64>() / z.len() as f64;
            let v: f64 = z.iter().map(|r| r[j] * r[j]).sum::<f64>() / z.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
        let constant = vec![vec![3.0], vec![3.0], vec![3.0]];
        let sc = Scaler::fit(&constant);
        assert_eq!(sc.scale[0], 1.0);
        assert_eq!(sc.transform_row(&[3.0])[0], 0.0);
    }

    #[test]
    fn logreg_separates_linearly_separable_toy() {
        let ds = toy_dataset(200, 11, 0.2, 1.0);
        let model = train_logreg_en(&ds, 1e-4, 1e-4, 5000).unwrap();
        let scores = model.score_rows(&ds).unwrap();
        let acc = scores
            .iter()
            .zip(&ds.y)
            .filter(|(&s, &y)| (s > 0.5) == (y == 1))
            .count() as f64
            / ds.n_rows() as f64;
        assert_eq!(acc, 1.0);
        if let ModelKind::LogRegEn(lr) = &model.model {
            assert!(lr.converged);
            assert!(lr.weights[0] > 0.0);
        } else {
            panic!("wrong kind");
        }
    }

    #[test]
    fn pure_l2_matches_closed_form_ridge() {
        // strong L2 keeps margins small, so the logistic optimum matches the
        // linearized (ridge) solution: (Z^T Z/4 + n λ I) w = Z^T (y - 1/2)
        let ds = toy_dataset(400, 29, 2.0, 0.3);
        let lambda = 5.0;
        let model = train_logreg_en(&ds, 0.0, lambda, 20000).unwrap();
        let ModelKind::LogRegEn(lr) = &model.model else {
            panic!()
        };
        let z: Vec<Vec<f64>> = ds.x.iter().map(|r| lr.scaler.transform_row(r)).collect();
        let n = z.len();
        let p = 3;
        let mut a = vec![vec![0.0; p]; p];
        let mut rhs = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                for k in 0..p {
                    a[j][k] += z[i][j] * z[i][k] / 4.0;
                }
                rhs[j] += z[i][j] * (ds.y[i] as f64 - 0.5);
            }
        }
        for j in 0..p {
            a[j][j] += n as f64 * lambda;
        }
        let w = crate::cmat::solve_real(&a, &rhs).unwrap();
        for j in 0..p {
            assert!(
                (w[j] - lr.weights[j]).abs() < 1e-4,
                "j={j}: ridge {} vs trained {}",
                w[j],
                lr.weights[j]
            );
        }
    }

    #[test]
    fn single_stump_recovers_threshold() {
        let mut ds = Dataset::new(vec!["f0".to_string()]);
        for i in 0..40 {
            let y = if i < 20 { 0 } else { 1 };
            ds.x.push(vec![i as f64]);
            ds.y.push(y);
            ds.family.push("toy".to_string());
            ds.params.push("{}".to_string());
        }
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 1,
            features_per_split: 1,
            min_leaf: 1,
            extra_trees: false,
            seed: 4,
        };
        let model = train_random_forest(&ds, &cfg).unwrap();
        let ModelKind::Forest(f) = &model.model else {
            panic!()
        };
        // bootstrap moves the boundary a little; it must stay in the gap
        let thr = f.trees[0].threshold[0];
        assert!(f.trees[0].feature[0] == 0);
        assert!(thr > 15.0 && thr < 24.0, "thr = {thr}");
        assert!(f.score_row(&[0.0]) < 0.5);
        assert!(f.score_row(&[39.0]) > 0.5);
    }

    #[test]
    fn oob_error_exceeds_training_error() {
        let ds = toy_dataset(300, 17, 2.5, 0.5);
        let cfg = ForestConfig {
            n_trees: 60,
            max_depth: 10,
            features_per_split: 2,
            min_leaf: 1,
            extra_trees: false,
            seed: 21,
        };
        let model = train_random_forest(&ds, &cfg).unwrap();
        let ModelKind::Forest(f) = &model.model else {
            panic!()
        };
        let scores = model.score_rows(&ds).unwrap();
        let train_err = scores
            .iter()
            .zip(&ds.y)
            .filter(|(&s, &y)| (s > 0.5) != (y == 1))
            .count() as f64
            / ds.n_rows() as f64;
        let oob = f.oob_error.expect("all rows should be OOB somewhere");
        assert!(
            oob > train_err,
            "oob {oob} should exceed training error {train_err}"
        );
    }

    #[test]
    fn auc_monotone_invariance_and_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let fams: Vec<String> = y
            .iter()
            .map(|&v| if v == 1 { "b" } else { "s" }.to_string())
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let rep = evaluate_scores(&scores, &y, &fams).unwrap();
        assert!((rep.auc - 0.5).abs() < 0.05, "null AUC = {}", rep.auc);
        let squashed: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let rep2 = evaluate_scores(&squashed, &y, &fams).unwrap();
        assert!((rep.auc - rep2.auc).abs() < 1e-12);

        let perfect: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let rep3 = evaluate_scores(&perfect, &y, &fams).unwrap();
        assert_eq!(rep3.auc, 1.0);
        assert_eq!(rep3.recall_at_zero_fp, 1.0);
    }

    #[test]
    fn zero_fp_protocol_on_fixed_scores() {
        let ds = toy_dataset(200, 7, 0.1, 1.0);
        let cfg = TrainerConfig::FixedScore {
            feature: "f0".to_string(),
        };
        let rep = cv_zero_fp(&ds, &cfg, 5, 123).unwrap();
        assert!(rep.fold_fp_counts.iter().all(|&c| c == 0));
        assert_eq!(rep.mean_recall_zero_fp, 1.0);
        assert_eq!(rep.per_family_recall["toyBE"], 1.0);

        // all-equal scores: ties never count as detections
        let mut flat = ds.clone();
        for row in &mut flat.x {
            row[0] = 0.0;
        }
        let rep = cv_zero_fp(&flat, &cfg, 4, 9).unwrap();
        assert!(rep.fold_fp_counts.iter().all(|&c| c == 0));
        assert_eq!(rep.mean_recall_zero_fp, 0.0);
    }

    #[test]
    fn cv_requires_separable_rows_per_fold() {
        let mut ds = toy_dataset(40, 3, 0.1, 1.0);
        // drop all separable rows
        let keep: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.y[i] == 1).collect();
        ds = ds.subset(&keep);
        let cfg = TrainerConfig::FixedScore {
            feature: "f0".to_string(),
        };
        assert!(cv_zero_fp(&ds, &cfg, 3, 1).is_err());
    }

    #[test]
    fn column_permutation_is_respected_by_name() {
        let ds = toy_dataset(120, 13, 0.4, 0.8);
        let model = train_logreg_en(&ds, 1e-3, 1e-3, 2000).unwrap();
        let baseline = model.score_rows(&ds).unwrap();
        let mut permuted = ds.clone();
        permuted.feature_names = vec!["f2".into(), "f0".into(), "f1".into()];
        permuted.x = ds.x.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        let scores = model.score_rows(&permuted).unwrap();
        for (a, b) in baseline.iter().zip(&scores) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut renamed = permuted.clone();
        renamed.feature_names[0] = "other".into();
        assert!(model.score_rows(&renamed).is_err());
    }

    #[test]
    fn model_serialization_roundtrip() {
        let ds = toy_dataset(100, 31, 0.3, 0.7);
        let dir = std::env::temp_dir().join(format!("qm-ml-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for (name, model) in [
            ("lr", train_logreg_en(&ds, 1e-3, 1e-3, 2000).unwrap()),
            (
                "rf",
                train_random_forest(
                    &ds,
                    &ForestConfig {
                        n_trees: 12,
                        max_depth: 6,
                        ..ForestConfig::default()
                    },
                )
                .unwrap(),
            ),
        ] {
            let path = dir.join(format!("{name}.json"));
            model.save_json(&path).unwrap();
            let back = ClassifierModel::load_json(&path).unwrap();
            assert_eq!(back.schema_version, MODEL_SCHEMA_VERSION);
            let a = model.score_rows(&ds).unwrap();
            let b = back.score_rows(&ds).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn forest_training_is_deterministic() {
        let ds = toy_dataset(150, 41, 1.0, 0.6);
        let cfg = ForestConfig {
            n_trees: 24,
            max_depth: 8,
            seed: 99,
            ..ForestConfig::default()
        };
        let a = train_random_forest(&ds, &cfg).unwrap();
        let b = train_random_forest(&ds, &cfg).unwrap();
        let sa = a.score_rows(&ds).unwrap();
        let sb = b.score_rows(&ds).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn extra_trees_mode_differs_but_classifies() {
        let ds = toy_dataset(200, 43, 0.3, 1.0);
        let cfg = ForestConfig {
            n_trees: 30,
            max_depth: 8,
            extra_trees: true,
            seed: 7,
            ..ForestConfig::default()
        };
        let model = train_random_forest(&ds, &cfg).unwrap();
        let rep = evaluate(&model, &ds).unwrap();
        assert!(rep.auc > 0.99);
    }

    #[test]
    fn lambda_grid_contains_sklearn_point() {
        let grid = lambda_grid(2000);
        assert_eq!(grid.len(), 8);
        let (l1, l2) = sklearn_lambda(1.0, 0.7, 2000);
        assert!(grid.iter().any(|&(a, b)| a == l1 && b == l2));
        assert!((l1 - 0.7 / 2000.0).abs() < 1e-15);
        assert!((l2 - 0.3 / 2000.0).abs() < 1e-15);
    }

    #[test]
    fn one_se_tuning_prefers_sparser_models_on_ties() {
        let ds = toy_dataset(240, 9, 0.4, 1.0);
        let lambdas = vec![(1e-4, 0.0), (1e-3, 0.0), (3e-2, 0.0)];
        let (model, rep) = tune_logreg(&ds, &lambdas, 4, 11, 4000).unwrap();
        // wide margin: every penalty separates perfectly, so the AUC plateau
        // is flat and the rule must take the largest l1 on the plateau
        assert!(rep.mean_aucs.iter().all(|&a| a > 0.999), "{:?}", rep.mean_aucs);
        assert_eq!(rep.chosen_index, 2);
        assert_eq!(rep.chosen_lambda.0, 3e-2);
        let ModelKind::LogRegEn(m) = &model.model else {
            panic!("expected a logistic model")
        };
        assert!(m.nonzero_weights() >= 1);
        assert_eq!(rep.lambdas.len(), rep.mean_aucs.len());
        assert_eq!(rep.lambdas.len(), rep.se_aucs.len());
    }

    #[test]
    fn stratified_folds_balance_groups() {
        let ds = toy_dataset(200, 51, 0.5, 0.5);
        let folds = stratified_folds(&ds, 5, 3);
        for f in 0..5 {
            let sep = (0..200).filter(|&i| folds[i] == f && ds.y[i] == 0).count();
            let be = (0..200).filter(|&i| folds[i] == f && ds.y[i] == 1).count();
            assert_eq!(sep, 20);
            assert_eq!(be, 20);
        }
    }
}
