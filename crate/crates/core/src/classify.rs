//! L2-regularized logistic regression and pairwise verdicts.

use serde::{Deserialize, Serialize};

use crate::signal::Slot;
use crate::{CompId, Error, Result};

pub const DEFAULT_REG: f64 = 1.0;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_GRAD_TOL: f64 = 1e-6;

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    weights: Vec<f64>,
    bias: f64,
    reg: f64,
    feature_dim: usize,
    /// Identifies the feature layout the weights refer to.
    #[serde(default)]
    pub layout_version: String,
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64, reg: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::NumericDomain("logistic weights must be finite".into()));
        }
        if !(reg > 0.0) {
            return Err(Error::Parameter(format!("regularization must be positive, got {reg}")));
        }
        Ok(Self {
            feature_dim: weights.len(),
            weights,
            bias,
            reg,
            layout_version: String::new(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub reg: f64,
    pub fit_intercept: bool,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            reg: DEFAULT_REG,
            fit_intercept: true,
            max_iter: DEFAULT_MAX_ITER,
            grad_tol: DEFAULT_GRAD_TOL,
        }
    }
}

/// Objective value after every accepted step, starting from the initial point.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub grad_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    reg: f64,
    fit_intercept: bool,
}

impl Problem<'_> {
    /// Parameters are `weights ++ [bias]`.
    fn loss(&self, p: &[f64]) -> f64 {
        let (w, b) = p.split_at(p.len() - 1);
        let data: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(xi, &yi)| {
                let z = dot(w, xi) + b[0];
                softplus(z) - yi * z
            })
            .sum::<f64>()
            / self.x.len() as f64;
        data + 0.5 * self.reg * dot(w, w)
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let d = p.len() - 1;
        let (w, b) = p.split_at(d);
        let mut g = vec![0.0; d + 1];
        for (xi, &yi) in self.x.iter().zip(&self.y) {
            let r = sigmoid(dot(w, xi) + b[0]) - yi;
            for (gk, xk) in g.iter_mut().zip(xi) {
                *gk += r * xk;
            }
            g[d] += r;
        }
        let n = self.x.len() as f64;
        for (k, gk) in g.iter_mut().enumerate() {
            *gk /= n;
            if k < d {
                *gk += self.reg * w[k];
            }
        }
        if !self.fit_intercept {
            g[d] = 0.0;
        }
        g
    }
}

/// Minimize mean logistic loss plus `reg · ‖w‖² / 2` (bias unpenalized).
pub fn train_logistic(x: &[Vec<f64>], y: &[bool], reg: f64) -> Result<LogisticModel> {
    train_logistic_with(x, y, &TrainOptions { reg, ..TrainOptions::default() }).map(|(m, _)| m)
}

/// Full-batch gradient descent with backtracking line search.
pub fn train_logistic_with(x: &[Vec<f64>], y: &[bool], opts: &TrainOptions) -> Result<(LogisticModel, TrainTrace)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Input(format!("{} rows and {} labels", x.len(), y.len())));
    }
    let dim = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: row.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("training features must be finite".into()));
    }
    if !(opts.reg > 0.0) {
        return Err(Error::Parameter(format!("regularization must be positive, got {}", opts.reg)));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if opts.fit_intercept && (positives == 0 || positives == y.len()) {
        return Err(Error::DegenerateTraining("training labels contain a single class".into()));
    }

    let problem = Problem {
        x,
        y: y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        reg: opts.reg,
        fit_intercept: opts.fit_intercept,
    };
    let mut params = vec![0.0; dim + 1];
    if opts.fit_intercept {
        // start at the prior log-odds; heavily regularized fits barely move from it
        let prior = positives as f64 / y.len() as f64;
        params[dim] = (prior / (1.0 - prior)).ln();
    }
    let mut loss = problem.loss(&params);
    let mut trace = TrainTrace {
        losses: vec![loss],
        grad_norm: f64::INFINITY,
    };
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let g = problem.gradient(&params);
        let g2 = dot(&g, &g);
        trace.grad_norm = g2.sqrt();
        if trace.grad_norm < opts.grad_tol {
            break;
        }
        step *= 2.0;
        let accepted = loop {
            let candidate: Vec<f64> = params.iter().zip(&g).map(|(p, gk)| p - step * gk).collect();
            let cand_loss = problem.loss(&candidate);
            if cand_loss <= loss - ARMIJO * step * g2 {
                break Some((candidate, cand_loss));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        match accepted {
            Some((p, l)) => {
                params = p;
                loss = l;
                trace.losses.push(loss);
            }
            None => break,
        }
    }
    let bias = params.pop().unwrap_or(0.0);
    Ok((LogisticModel::new(params, bias, opts.reg)?, trace))
}

/// `sigmoid(w·x + b)`.
pub fn predict_proba(m: &LogisticModel, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(m.decision(x)?))
}

/// Per-dimension z-scoring fitted on training rows. Zero-variance
/// dimensions keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InsufficientData("cannot standardize zero rows".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Where a verdict came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Observation,
    Statement,
    Combined,
    Button,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Observation, Source::Statement, Source::Combined, Source::Button];

    pub fn name(self) -> &'static str {
        match self {
            Source::Observation => "observation",
            Source::Statement => "statement",
            Source::Combined => "combined",
            Source::Button => "button",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Source::Observation => "obs",
            Source::Statement => "stmt",
            Source::Combined => "comb",
            Source::Button => "bttn",
        }
    }
}

/// The decoded outcome of one comparison.
///
/// `probability` is the probability that slot 1 is preferred for
/// observation verdicts, and the probability that the statement is correct
/// for statement, combined and button verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseVerdict {
    pub comparison: CompId,
    pub preferred: Slot,
    pub probability: f64,
    pub source: Source,
}

/// Prefer the slot with the smaller predicted far-class probability; ties go
/// to slot 1. The recorded probability that slot 1 is preferred is the
/// normalized odds `ŷ₂(1−ŷ₁) / (ŷ₂(1−ŷ₁) + ŷ₁(1−ŷ₂))`.
pub fn pairwise_from_observation(comparison: CompId, far_first: f64, far_second: f64) -> Result<PairwiseVerdict> {
    for p in [far_first, far_second] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("probability {p} outside [0, 1]")));
        }
    }
    let a = far_second * (1.0 - far_first);
    let b = far_first * (1.0 - far_second);
    let probability = if a + b > 0.0 { a / (a + b) } else { 0.5 };
    let preferred = if far_second < far_first { Slot::Second } else { Slot::First };
    Ok(PairwiseVerdict {
        comparison,
        preferred,
        probability,
        source: Source::Observation,
    })
}

/// A statement "slot `first` was better" believed correct with probability
/// `p_correct`. Ties keep the statement's order.
pub fn pairwise_from_statement(comparison: CompId, p_correct: f64, first: Slot, source: Source) -> Result<PairwiseVerdict> {
    if !(0.0..=1.0).contains(&p_correct) {
        return Err(Error::Input(format!("probability {p_correct} outside [0, 1]")));
    }
    let preferred = if p_correct < 0.5 { first.other() } else { first };
    Ok(PairwiseVerdict {
        comparison,
        preferred,
        probability: p_correct,
        source,
    })
}

/// Meta-classifier input: statement probability, then the far-class
/// probabilities of the statement's supposedly better and worse slots.
pub fn meta_features(stmt: f64, obs_better: f64, obs_worse: f64) -> Vec<f64> {
    vec![stmt, obs_better, obs_worse]
}

pub fn combine(
    comparison: CompId,
    first: Slot,
    stmt: f64,
    obs_better: f64,
    obs_worse: f64,
    meta: &LogisticModel,
) -> Result<PairwiseVerdict> {
    if meta.feature_dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: meta.feature_dim(),
        });
    }
    let p = predict_proba(meta, &meta_features(stmt, obs_better, obs_worse))?;
    pairwise_from_statement(comparison, p, first, Source::Combined)
}

/// `|ŷ − 0.5|`.
pub fn confidence(v: &PairwiseVerdict) -> f64 {
    (v.probability - 0.5).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..n {
            let label = k % 2 == 0;
            let c = if label { sep } else { -sep };
            x.push(vec![
                c + 0.3 * rng.sample::<f64, _>(StandardNormal),
                0.5 * c + 0.3 * rng.sample::<f64, _>(StandardNormal),
            ]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, y) = blobs(60, 2.0, 1);
        let m = train_logistic(&x, &y, 0.01).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| (predict_proba(&m, xi).unwrap() > 0.5) == yi)
            .count() as f64
            / x.len() as f64;
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn flipped_labels_negate_weights() {
        let (x, y) = blobs(40, 1.0, 2);
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let a = train_logistic(&x, &y, 1.0).unwrap();
        let b = train_logistic(&x, &flipped, 1.0).unwrap();
        let sum: f64 = a.weights().iter().zip(b.weights()).map(|(p, q)| (p + q).powi(2)).sum::<f64>().sqrt();
        assert!(sum < 1e-4, "{sum}");
    }

    #[test]
    fn huge_regularization_predicts_prior() {
        let (x, mut y) = blobs(40, 1.0, 3);
        for v in y.iter_mut().take(10) {
            *v = true;
        }
        let prior = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        let m = train_logistic(&x, &y, 1e6).unwrap();
        let norm = m.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-3);
        assert!((predict_proba(&m, &x[0]).unwrap() - prior).abs() < 1e-3);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train_logistic(&x, &[true, true], 1.0), Err(Error::DegenerateTraining(_))));
    }

    #[test]
    fn loss_is_monotone() {
        let (x, y) = blobs(50, 0.5, 4);
        let (_, trace) = train_logistic_with(&x, &y, &TrainOptions { reg: 0.01, ..Default::default() }).unwrap();
        assert!(trace.losses.len() > 2);
        assert!(trace.losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn predict_proba_basics() {
        let m = LogisticModel::new(vec![1.0, -2.0], 0.0, 1.0).unwrap();
        assert_eq!(predict_proba(&m, &[0.0, 0.0]).unwrap(), 0.5);
        assert!(predict_proba(&m, &[20.0, 0.0]).unwrap() >= 0.999);
        assert!(predict_proba(&m, &[1.0, 0.0]).unwrap() < predict_proba(&m, &[2.0, 0.0]).unwrap());
        assert!(matches!(predict_proba(&m, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn observation_verdicts() {
        assert_eq!(pairwise_from_observation(0, 0.1, 0.9).unwrap().preferred, Slot::First);
        let v = pairwise_from_observation(0, 0.9, 0.1).unwrap();
        assert_eq!(v.preferred, Slot::Second);
        assert!(v.probability < 0.5);
        let v = pairwise_from_observation(0, 0.5, 0.5).unwrap();
        assert_eq!((v.preferred, v.probability), (Slot::First, 0.5));
        assert_eq!(pairwise_from_observation(0, 0.0, 0.0).unwrap().probability, 0.5);
    }

    #[test]
    fn statement_verdicts() {
        let s = Source::Statement;
        assert_eq!(pairwise_from_statement(0, 0.9, Slot::Second, s).unwrap().preferred, Slot::Second);
        assert_eq!(pairwise_from_statement(0, 0.2, Slot::Second, s).unwrap().preferred, Slot::First);
        assert_eq!(pairwise_from_statement(0, 0.5, Slot::First, s).unwrap().preferred, Slot::First);
        assert!(pairwise_from_statement(0, 1.5, Slot::First, s).is_err());
    }

    #[test]
    fn combine_follows_tie_rule_and_order() {
        let meta = LogisticModel::new(vec![1.0, 1.0, -1.0], 0.0, 1.0).unwrap();
        let v = combine(3, Slot::Second, 0.5, 0.5, 0.5, &meta).unwrap();
        assert_eq!((v.preferred, v.source), (Slot::Second, Source::Combined));
        assert_ne!(meta_features(0.7, 0.2, 0.9), meta_features(0.7, 0.9, 0.2));
        let a = combine(3, Slot::First, 0.5, 0.2, 0.9, &meta).unwrap();
        let b = combine(3, Slot::First, 0.5, 0.9, 0.2, &meta).unwrap();
        assert_ne!(a.probability, b.probability);
        let bad = LogisticModel::new(vec![1.0], 0.0, 1.0).unwrap();
        assert!(combine(0, Slot::First, 0.5, 0.5, 0.5, &bad).is_err());
    }

    #[test]
    fn meta_on_predictive_statement_matches_statement() {
        // statement probability alone predicts the label; observation inputs are noise
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for k in 0..200 {
            let correct = k % 2 == 0;
            let stmt = if correct { rng.random_range(0.55..1.0) } else { rng.random_range(0.0..0.45) };
            rows.push(meta_features(stmt, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)));
            labels.push(correct);
        }
        let meta = train_logistic(&rows, &labels, 1e-3).unwrap();
        let stmt_acc = rows.iter().zip(&labels).filter(|(r, &l)| (r[0] > 0.5) == l).count();
        let comb_acc = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| {
                let v = combine(0, Slot::First, r[0], r[1], r[2], &meta).unwrap();
                (v.preferred == Slot::First) == l
            })
            .count();
        assert_eq!(stmt_acc, 200);
        assert_eq!(comb_acc, stmt_acc);
    }

    #[test]
    fn confidence_values() {
        let v = |p| PairwiseVerdict { comparison: 0, preferred: Slot::First, probability: p, source: Source::Button };
        assert_eq!(confidence(&v(0.5)), 0.0);
        assert_eq!(confidence(&v(1.0)), 0.5);
        assert_relative_eq!(confidence(&v(0.3)), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn model_json_has_contract_fields() {
        let mut m = LogisticModel::new(vec![0.5, -1.0], 0.25, 1.0).unwrap();
        m.layout_version = "tangent-v1".into();
        let v = serde_json::to_value(&m).unwrap();
        for key in ["weights", "bias", "reg", "feature_dim", "layout_version"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(serde_json::from_value::<LogisticModel>(v).unwrap(), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn complementary_statement_probabilities_disagree(p in 0.0f64..1.0) {
                prop_assume!(p != 0.5);
                let a = pairwise_from_statement(0, p, Slot::First, Source::Statement).unwrap();
                let b = pairwise_from_statement(0, 1.0 - p, Slot::First, Source::Statement).unwrap();
                prop_assert_ne!(a.preferred, b.preferred);
            }

            #[test]
            fn observation_verdict_consistent_with_probability(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let v = pairwise_from_observation(0, a, b).unwrap();
                prop_assert!((0.0..=1.0).contains(&v.probability));
                if v.probability > 0.5 { prop_assert_eq!(v.preferred, Slot::First); }
                if v.probability < 0.5 { prop_assert_eq!(v.preferred, Slot::Second); }
            }
        }
    }
}
