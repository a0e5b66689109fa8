//! Offline oracles over datasets of (state, action) pairs.
//!
//! The empirical risk minimizer over a finite class is exact: a full scan
//! with ties broken toward the lowest member index. The continuous oracle is
//! ordinary least squares through the Moore-Penrose pseudoinverse, so it
//! returns the minimum-norm minimizer on rank-deficient systems. Both are
//! deterministic; all randomness stays in the callers.

use crate::error::Error;
use crate::linear::LinearPolicy;
use crate::mdp::{ActionId, StateId};
use crate::policy::{FinitePolicyClass, TabularPolicy};
use crate::rng::Rng;
use crate::Result;
use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Singular values below `RANK_TOL * sigma_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Ordered multiset of labeled examples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset<X, Y> {
    pairs: Vec<(X, Y)>,
}

pub type TabularDataset = Dataset<StateId, ActionId>;
pub type VectorDataset = Dataset<Vec<f64>, Vec<f64>>;

impl<X, Y> Dataset<X, Y> {
    pub fn new() -> Self {
        Self { pairs: Vec::new() }
    }

    pub fn from_pairs(pairs: Vec<(X, Y)>) -> Self {
        Self { pairs }
    }

    pub fn push(&mut self, x: X, y: Y) {
        self.pairs.push((x, y));
    }

    pub fn extend_from(&mut self, other: Dataset<X, Y>) {
        self.pairs.extend(other.pairs);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(X, Y)] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, (X, Y)> {
        self.pairs.iter()
    }
}

impl<X: Clone, Y: Clone> Dataset<X, Y> {
    /// Size-preserving uniform resample with replacement.
    pub fn bootstrap_resample(&self, rng: &mut Rng) -> Self {
        let n = self.pairs.len();
        let pairs = (0..n).map(|_| self.pairs[rng.gen_range(0..n)].clone()).collect();
        Self { pairs }
    }
}

/// Loss used when fitting and scoring policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSpec {
    /// `[a != label]`; the loss of the analysis layer.
    ZeroOne,
    /// Mean squared error after clipping both sides to `[-1, 1]` per
    /// coordinate. Continuous actions only.
    ClippedMse,
    /// Euclidean distance. Continuous actions only.
    Absolute,
}

/// Per-member counts of disagreements with the labels. The vector the exact
/// ERM minimizes.
pub fn class_error_counts(data: &TabularDataset, class: &FinitePolicyClass) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; class.len()];
    for &(s, a) in data.iter() {
        for (i, c) in counts.iter_mut().enumerate() {
            if class.action(i, s)? != a {
                *c += 1;
            }
        }
    }
    Ok(counts)
}

/// Exact zero-one empirical risk minimizer: full scan over the class,
/// lowest index on ties. The empty dataset yields member 0 with zero errors.
pub fn erm_01(data: &TabularDataset, class: &FinitePolicyClass) -> Result<(usize, u64)> {
    let counts = class_error_counts(data, class)?;
    let mut best = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        if c < counts[best] {
            best = i;
        }
    }
    Ok((best, counts[best]))
}

/// Mean loss of a tabular policy on a dataset. Stochastic policies are
/// scored in expectation over their action draw.
pub fn empirical_loss_tabular<P: TabularPolicy>(
    data: &TabularDataset,
    policy: &P,
    loss: LossSpec,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    if loss != LossSpec::ZeroOne {
        return Err(Error::Unsupported("tabular losses are zero-one".into()));
    }
    let mut probs = vec![0.0; policy.actions()];
    let mut total = 0.0;
    for &(s, a) in data.iter() {
        policy.probs_into(s, &mut probs)?;
        total += 1.0 - probs[a];
    }
    Ok(total / data.len() as f64)
}

/// Least-squares fit of `y = W x` returning the minimum-norm `W`.
/// Rank decisions use `RANK_TOL` relative to the largest singular value.
/// The empty dataset yields the zero map.
pub fn ols_fit(data: &VectorDataset, state_dim: usize, action_dim: usize) -> Result<LinearPolicy> {
    if data.is_empty() {
        return LinearPolicy::zeros(state_dim, action_dim);
    }
    let n = data.len();
    for (i, (x, y)) in data.iter().enumerate() {
        if x.len() != state_dim || y.len() != action_dim {
            return Err(Error::DimensionMismatch(format!(
                "example {i} has dims ({}, {}), expected ({state_dim}, {action_dim})",
                x.len(),
                y.len()
            )));
        }
    }
    let xs = DMatrix::from_fn(n, state_dim, |i, j| data.pairs[i].0[j]);
    let ys = DMatrix::from_fn(n, action_dim, |i, j| data.pairs[i].1[j]);
    let svd = xs.svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma_max = svd.singular_values.max();
    let cut = RANK_TOL * sigma_max;
    // W^T = V Sigma^+ U^T Y, applied factor by factor.
    let mut uty = u.transpose() * ys; // min(n,p) x q
    for (i, mut row) in uty.row_iter_mut().enumerate() {
        let s = svd.singular_values[i];
        let inv = if s > cut { 1.0 / s } else { 0.0 };
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    let wt = v_t.transpose() * uty; // p x q
    LinearPolicy::from_matrix(wt.transpose())
}

// --- dataset serialization --------------------------------------------------
//
// Line-oriented records. Floats use Rust's shortest round-trip formatting,
// so dumping and re-loading reproduces the dataset bit for bit.

impl TabularDataset {
    pub fn to_text(&self) -> String {
        let mut out = String::from("dataset v1\nkind tabular\n");
        for &(s, a) in self.iter() {
            out.push_str(&format!("ex {s} {a}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in check_header(text, "tabular")? {
            let mut parts = line.split_whitespace();
            let bad = || Error::Parse { line: i, msg: "expected 'ex <state> <action>'".into() };
            if parts.next() != Some("ex") {
                return Err(bad());
            }
            let s = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            let a = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            pairs.push((s, a));
        }
        Ok(Self { pairs })
    }

    /// The states alone, e.g. for building a covering pool.
    pub fn states(&self) -> Vec<StateId> {
        self.iter().map(|&(s, _)| s).collect()
    }
}

impl VectorDataset {
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::from("dataset v1\nkind vector\n");
        for (x, y) in self.iter() {
            out.push_str(&format!("ex {} {}\n", join(x), join(y)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in check_header(text, "vector")? {
            let bad = || Error::Parse { line: i, msg: "expected 'ex <x,..> <y,..>'".into() };
            let mut parts = line.split_whitespace();
            if parts.next() != Some("ex") {
                return Err(bad());
            }
            let parse_vec = |tok: &str| -> Result<Vec<f64>> {
                tok.split(',').map(|t| t.parse::<f64>().map_err(|_| bad())).collect()
            };
            let x = parse_vec(parts.next().ok_or_else(bad)?)?;
            let y = parse_vec(parts.next().ok_or_else(bad)?)?;
            pairs.push((x, y));
        }
        Ok(Self { pairs })
    }
}

/// Validates the two header lines and returns the remaining non-empty lines
/// with 1-based numbers.
fn check_header<'a>(text: &'a str, kind: &str) -> Result<Vec<(usize, &'a str)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "dataset v1" => {}
        _ => return Err(Error::Parse { line: 1, msg: "expected header 'dataset v1'".into() }),
    }
    match lines.next() {
        Some((_, l)) if l.trim() == format!("kind {kind}") => {}
        other => {
            return Err(Error::Parse {
                line: 2,
                msg: format!("expected 'kind {kind}', got {:?}", other.map(|(_, l)| l)),
            })
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.trim()))
        .collect())
}
