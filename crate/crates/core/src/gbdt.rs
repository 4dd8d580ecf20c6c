//! Least-squares gradient-boosted regression trees.
//!
//! Each iteration fits a depth-bounded tree to the current residuals by
//! exhaustive greedy splitting, stores leaf means, and adds the tree scaled by
//! the shrinkage factor.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::taxonomy::VariantClusters;

const MODEL_MAGIC: &str = "qrec-gbdt\t1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub shrinkage: f64,
    /// Maximum number of split levels; `usize::MAX` for unbounded trees.
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Stop after this many trees without a validation-MSE improvement.
    /// Only consulted by [`fit_with_validation`].
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 200,
            shrinkage: 0.1,
            max_depth: 4,
            min_leaf: 10,
            early_stopping_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::InvalidConfig(format!("shrinkage {} is outside (0, 1]", self.shrinkage)));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        if self.early_stopping_patience == Some(0) {
            return Err(Error::InvalidConfig("early_stopping_patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// A regression tree stored in pre-order; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Split { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub feature_names: Vec<String>,
    pub shrinkage: f64,
    pub base: f64,
    /// Trees with their additive weights.
    pub trees: Vec<(Tree, f64)>,
    /// Per-feature importance aligned with `feature_names`; max 100 when any
    /// split exists, otherwise all zero.
    pub importance: Vec<f64>,
}

/// Model plus the training MSE before the first tree and after each tree.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Ensemble,
    pub train_mse: Vec<f64>,
    pub validation_mse: Vec<f64>,
}

/// Weighted squared mean difference between two regions.
pub fn split_gain(left: (f64, f64), right: (f64, f64)) -> f64 {
    let ((wl, ml), (wr, mr)) = (left, right);
    if wl <= 0.0 || wr <= 0.0 {
        return 0.0;
    }
    wl * wr / (wl + wr) * (ml - mr).powi(2)
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

fn check_matrix(x: &[Vec<f64>], n_features: usize) -> Result<()> {
    for row in x {
        if row.len() != n_features {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                got: row.len(),
            });
        }
    }
    Ok(())
}

pub fn fit(x: &[Vec<f64>], y: &[f64], feature_names: &[String], cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_with_validation(x, y, None, feature_names, cfg)
}

/// Like [`fit`], additionally tracking MSE on `validation`. With
/// `early_stopping_patience` set, training stops once that many consecutive
/// trees fail to improve validation MSE and the ensemble is truncated to the
/// best iteration.
pub fn fit_with_validation(
    x: &[Vec<f64>],
    y: &[f64],
    validation: Option<(&[Vec<f64>], &[f64])>,
    feature_names: &[String],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewRows { min: 2, got: x.len() });
    }
    let d = feature_names.len();
    check_matrix(x, d)?;
    if let Some((vx, vy)) = validation {
        check_matrix(vx, d)?;
        if vx.len() != vy.len() {
            return Err(Error::DimensionMismatch {
                expected: vx.len(),
                got: vy.len(),
            });
        }
    }

    let n = x.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut train_mse = vec![mse(y, &pred)];
    let mut val_pred = validation.map(|(vx, _)| vec![base; vx.len()]);
    let mut validation_mse = Vec::new();
    if let (Some((_, vy)), Some(vp)) = (validation, &val_pred) {
        validation_mse.push(mse(vy, vp));
    }

    let columns: Vec<Vec<f64>> = (0..d).map(|f| x.iter().map(|r| r[f]).collect()).collect();
    let presorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut trees = Vec::new();
    let mut tree_gains: Vec<Vec<f64>> = Vec::new();
    let mut best_val = (f64::INFINITY, 0usize);
    let mut residual = vec![0.0; n];
    for m in 0..cfg.n_trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let mut builder = TreeBuilder {
            columns: &columns,
            residual: &residual,
            cfg,
            nodes: Vec::new(),
            gains: vec![0.0; d],
            side: vec![false; n],
        };
        builder.grow(presorted.clone(), 0);
        let tree = Tree { nodes: builder.nodes };
        if tree.n_splits() == 0 {
            break;
        }
        tree_gains.push(builder.gains);
        for i in 0..n {
            pred[i] += cfg.shrinkage * tree.eval(&x[i]);
        }
        train_mse.push(mse(y, &pred));
        if let (Some((vx, vy)), Some(vp)) = (validation, val_pred.as_mut()) {
            for (p, row) in vp.iter_mut().zip(vx) {
                *p += cfg.shrinkage * tree.eval(row);
            }
            let v = mse(vy, vp);
            validation_mse.push(v);
            if v < best_val.0 {
                best_val = (v, m + 1);
            }
        }
        trees.push((tree, cfg.shrinkage));
        if let (Some(patience), Some(_)) = (cfg.early_stopping_patience, validation) {
            if m + 1 - best_val.1 >= patience {
                trees.truncate(best_val.1);
                train_mse.truncate(best_val.1 + 1);
                validation_mse.truncate(best_val.1 + 1);
                tree_gains.truncate(best_val.1);
                break;
            }
        }
    }

    let mut gains = vec![0.0; d];
    for t in &tree_gains {
        for (g, v) in gains.iter_mut().zip(t) {
            *g += v;
        }
    }
    Ok(FitOutcome {
        model: Ensemble {
            feature_names: feature_names.to_vec(),
            shrinkage: cfg.shrinkage,
            base,
            trees,
            importance: normalize_importance(&gains),
        },
        train_mse,
        validation_mse,
    })
}

/// Scales so the largest entry is 100; all-zero input stays zero.
pub fn normalize_importance(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|g| g / max * 100.0).collect()
}

/// Mean of several importance vectors, re-normalized to max 100.
pub fn average_importance(models: &[&Ensemble]) -> Vec<f64> {
    let d = models.first().map_or(0, |m| m.importance.len());
    let mut acc = vec![0.0; d];
    for m in models {
        for (a, v) in acc.iter_mut().zip(&m.importance) {
            *a += v;
        }
    }
    normalize_importance(&acc)
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    residual: &'a [f64],
    cfg: &'a TrainConfig,
    nodes: Vec<TreeNode>,
    gains: Vec<f64>,
    side: Vec<bool>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    /// `sorted[f]` holds this node's sample indices ordered by feature `f`.
    fn grow(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let id = self.nodes.len();
        let members = &sorted[0];
        let sum: f64 = members.iter().map(|&i| self.residual[i as usize]).sum();
        let value = sum / members.len() as f64;
        self.nodes.push(TreeNode::Leaf { value });

        if depth >= self.cfg.max_depth || members.len() < 2 * self.cfg.min_leaf {
            return id;
        }
        let Some(choice) = self.best_split(&sorted, sum) else {
            return id;
        };
        self.gains[choice.feature] += choice.gain;

        let col = &self.columns[choice.feature];
        for &i in members {
            self.side[i as usize] = col[i as usize] <= choice.threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for idx in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = idx.into_iter().partition(|&i| self.side[i as usize]);
            left.push(l);
            right.push(r);
        }
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&self, sorted: &[Vec<u32>], total: f64) -> Option<SplitChoice> {
        let n = sorted[0].len();
        let min_leaf = self.cfg.min_leaf;
        let scale: f64 = sorted[0].iter().map(|&i| self.residual[i as usize].powi(2)).sum();
        let floor = 1e-12 * scale;
        let mut best: Option<SplitChoice> = None;
        for (f, idx) in sorted.iter().enumerate() {
            let col = &self.columns[f];
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                let i = idx[k] as usize;
                left_sum += self.residual[i];
                let wl = k + 1;
                let wr = n - wl;
                if wl < min_leaf {
                    continue;
                }
                if wr < min_leaf {
                    break;
                }
                let (a, b) = (col[i], col[idx[k + 1] as usize]);
                if a == b {
                    continue;
                }
                let ml = left_sum / wl as f64;
                let mr = (total - left_sum) / wr as f64;
                let gain = split_gain((wl as f64, ml), (wr as f64, mr));
                if gain > floor && best.as_ref().is_none_or(|c| gain > c.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Threshold between two adjacent distinct values `a < b` such that
/// `a <= t < b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t >= b || !t.is_finite() {
        a
    } else {
        t
    }
}

impl Ensemble {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(self.base + self.trees.iter().map(|(t, w)| w * t.eval(x)).sum::<f64>())
    }

    /// Plain-text serialization; floats use shortest round-trip formatting.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MODEL_MAGIC}")?;
        writeln!(w, "n_trees\t{}", self.trees.len())?;
        writeln!(w, "shrinkage\t{}", self.shrinkage)?;
        writeln!(w, "base\t{}", self.base)?;
        writeln!(w, "features\t{}", self.feature_names.join("\t"))?;
        for (t, (tree, weight)) in self.trees.iter().enumerate() {
            writeln!(w, "tree\t{t}\t{weight}\t{}", tree.nodes.len())?;
            for (id, node) in tree.nodes.iter().enumerate() {
                match node {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => writeln!(w, "{id}\tsplit\t{feature}\t{threshold}\t{left}\t{right}")?,
                    TreeNode::Leaf { value } => writeln!(w, "{id}\tleaf\t{value}\t-\t-\t-")?,
                }
            }
        }
        writeln!(w, "importance")?;
        for (name, v) in self.feature_names.iter().zip(&self.importance) {
            writeln!(w, "{name}\t{v}")?;
        }
        writeln!(w, "end")
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("model text is UTF-8")
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    const CTX: &'static str = "model file";

    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::format(Self::CTX, 0, "unexpected end of file"))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next()?;
        match line.split_once('\t') {
            Some((k, rest)) if k == key => Ok((n, rest)),
            _ => Err(Error::format(Self::CTX, n, format!("expected {key:?}"))),
        }
    }
}

fn num<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format("model file", line, format!("bad number {s:?}")))
}

impl FromStr for Ensemble {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        let (n, magic) = lines.next()?;
        if magic != MODEL_MAGIC {
            return Err(Error::format(Lines::CTX, n, "not a model file"));
        }
        let (n, v) = lines.keyed("n_trees")?;
        let n_trees: usize = num(v, n)?;
        let (n, v) = lines.keyed("shrinkage")?;
        let shrinkage: f64 = num(v, n)?;
        let (n, v) = lines.keyed("base")?;
        let base: f64 = num(v, n)?;
        let (_, v) = lines.keyed("features")?;
        let feature_names: Vec<String> = v.split('\t').map(str::to_string).collect();
        let d = feature_names.len();

        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let (n, v) = lines.keyed("tree")?;
            let f: Vec<&str> = v.split('\t').collect();
            if f.len() != 3 || num::<usize>(f[0], n)? != t {
                return Err(Error::format(Lines::CTX, n, "bad tree header"));
            }
            let weight: f64 = num(f[1], n)?;
            let n_nodes: usize = num(f[2], n)?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for id in 0..n_nodes {
                let (n, line) = lines.next()?;
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 6 || num::<usize>(f[0], n)? != id {
                    return Err(Error::format(Lines::CTX, n, "bad node line"));
                }
                let node = match f[1] {
                    "leaf" => TreeNode::Leaf { value: num(f[2], n)? },
                    "split" => {
                        let (feature, left, right) = (num(f[2], n)?, num(f[4], n)?, num(f[5], n)?);
                        if feature >= d || left <= id || right <= id || left >= n_nodes || right >= n_nodes {
                            return Err(Error::format(Lines::CTX, n, "node reference out of range"));
                        }
                        TreeNode::Split {
                            feature,
                            threshold: num(f[3], n)?,
                            left,
                            right,
                        }
                    }
                    other => return Err(Error::format(Lines::CTX, n, format!("unknown node kind {other:?}"))),
                };
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(Error::format(Lines::CTX, n, "tree has no nodes"));
            }
            trees.push((Tree { nodes }, weight));
        }

        let (n, line) = lines.next()?;
        if line != "importance" {
            return Err(Error::format(Lines::CTX, n, "expected importance block"));
        }
        let mut importance = Vec::with_capacity(d);
        for name in &feature_names {
            let (n, v) = lines.keyed(name)?;
            importance.push(num(v, n)?);
        }
        let (n, line) = lines.next()?;
        if line != "end" {
            return Err(Error::format(Lines::CTX, n, "expected end marker"));
        }
        Ok(Ensemble {
            feature_names,
            shrinkage,
            base,
            trees,
            importance,
        })
    }
}

/// Scores candidates for `q1`, drops those sharing its trivial-variant
/// cluster, and orders by score descending then `q2` ascending.
pub fn rank<X: AsRef<[f64]>>(
    model: &Ensemble,
    q1: &str,
    candidates: &[(String, X)],
    clusters: &VariantClusters,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(candidates.len());
    for (q2, x) in candidates {
        if clusters.same_cluster(q1, q2) {
            continue;
        }
        out.push((q2.clone(), model.predict(x.as_ref())?));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Orders by score descending then name ascending.
pub fn score_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}
