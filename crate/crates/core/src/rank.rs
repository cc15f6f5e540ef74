//! Aggregating noisy pairwise verdicts into trajectory rankings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::{confidence, train_logistic_with, PairwiseVerdict, TrainOptions};
use crate::signal::Slot;
use crate::trajectory::FeatureVector;
use crate::{CompId, Error, Result, TrajId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    /// Trajectory preference perceptron baseline.
    Tpp,
    Borda,
    BordaConf,
    Feature,
}

impl RankMethod {
    pub const ALL: [RankMethod; 4] = [RankMethod::Tpp, RankMethod::Borda, RankMethod::BordaConf, RankMethod::Feature];

    pub fn name(self) -> &'static str {
        match self {
            RankMethod::Tpp => "tpp",
            RankMethod::Borda => "borda",
            RankMethod::BordaConf => "borda_conf",
            RankMethod::Feature => "feature",
        }
    }
}

impl fmt::Display for RankMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RankMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Parameter(format!("unknown ranking method {s:?}")))
    }
}

/// One comparison as seen by the ranking stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedComparison {
    pub comparison: CompId,
    /// Trajectories shown in slots 1 and 2.
    pub pair: [TrajId; 2],
    pub statement_first: Slot,
    pub verdict: PairwiseVerdict,
}

impl RankedComparison {
    pub fn winner(&self) -> TrajId {
        self.pair[self.verdict.preferred.index()]
    }

    pub fn loser(&self) -> TrajId {
        self.pair[self.verdict.preferred.other().index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSet {
    comparisons: Vec<RankedComparison>,
    universe: BTreeSet<TrajId>,
}

impl ComparisonSet {
    pub fn new(comparisons: Vec<RankedComparison>, universe: BTreeSet<TrajId>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &comparisons {
            if !seen.insert(c.comparison) {
                return Err(Error::Input(format!("comparison {} appears twice", c.comparison)));
            }
            if c.verdict.comparison != c.comparison {
                return Err(Error::Input(format!(
                    "verdict for comparison {} attached to comparison {}",
                    c.verdict.comparison, c.comparison
                )));
            }
            if let Some(id) = c.pair.iter().find(|id| !universe.contains(id)) {
                return Err(Error::Input(format!("trajectory {id} is not in the universe")));
            }
        }
        Ok(Self { comparisons, universe })
    }

    pub fn comparisons(&self) -> &[RankedComparison] {
        &self.comparisons
    }

    pub fn universe(&self) -> &BTreeSet<TrajId> {
        &self.universe
    }

    pub fn len(&self) -> usize {
        self.comparisons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comparisons.is_empty()
    }

    /// Comparisons in ascending id order, so that sums do not depend on list order.
    fn by_id(&self) -> Vec<&RankedComparison> {
        let mut v: Vec<&RankedComparison> = self.comparisons.iter().collect();
        v.sort_by_key(|c| c.comparison);
        v
    }
}

/// Scores and the induced order (descending score, ascending id on ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub method: String,
    pub order: Vec<TrajId>,
    pub scores: BTreeMap<TrajId, f64>,
}

impl Ranking {
    pub fn from_scores(method: impl Into<String>, scores: BTreeMap<TrajId, f64>) -> Result<Self> {
        if scores.values().any(|s| !s.is_finite()) {
            return Err(Error::NumericDomain("ranking scores must be finite".into()));
        }
        let mut order: Vec<TrajId> = scores.keys().copied().collect();
        order.sort_by(|a, b| scores[b].total_cmp(&scores[a]).then(a.cmp(b)));
        Ok(Self {
            method: method.into(),
            order,
            scores,
        })
    }

    pub fn top(&self) -> Option<TrajId> {
        self.order.first().copied()
    }
}

fn weighted_wins(cs: &ComparisonSet, method: RankMethod, weight: impl Fn(&PairwiseVerdict) -> f64) -> Result<Ranking> {
    if cs.is_empty() {
        return Err(Error::InsufficientData("no comparisons to rank".into()));
    }
    let mut scores: BTreeMap<TrajId, f64> = cs.universe.iter().map(|&id| (id, 0.0)).collect();
    for c in cs.by_id() {
        *scores.get_mut(&c.winner()).expect("winner is in the universe") += weight(&c.verdict);
    }
    Ranking::from_scores(method.name(), scores)
}

/// Number of comparisons each trajectory won.
pub fn borda(cs: &ComparisonSet) -> Result<Ranking> {
    weighted_wins(cs, RankMethod::Borda, |_| 1.0)
}

/// Wins weighted by verdict confidence `|ŷ − 0.5|`.
pub fn borda_conf(cs: &ComparisonSet) -> Result<Ranking> {
    weighted_wins(cs, RankMethod::BordaConf, confidence)
}

/// Linear reward `θᵀφ(ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub theta: Vec<f64>,
}

impl RewardModel {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("reward weights must be finite".into()));
        }
        Ok(Self { theta })
    }

    pub fn reward(&self, phi: &FeatureVector) -> Result<f64> {
        if phi.values().len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                found: phi.values().len(),
            });
        }
        Ok(self.theta.iter().zip(phi.values()).map(|(t, f)| t * f).sum())
    }
}

fn feature_of(phi: &BTreeMap<TrajId, FeatureVector>, id: TrajId) -> Result<&[f64]> {
    phi.get(&id)
        .map(|f| f.values())
        .ok_or_else(|| Error::Input(format!("no features for trajectory {id}")))
}

fn difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Bias-free L2-logistic fit on pairwise feature differences.
///
/// Each comparison contributes the row `φ(slot 1) − φ(slot 2)` labeled by
/// whether slot 1 won, together with its mirror image, which makes the fit
/// independent of slot order. Differences are scaled per dimension by their
/// root mean square before training; the returned θ is in raw feature units.
pub fn fit_feature_rank(cs: &ComparisonSet, phi: &BTreeMap<TrajId, FeatureVector>, reg: f64) -> Result<RewardModel> {
    if cs.is_empty() {
        return Err(Error::InsufficientData("no comparisons to learn from".into()));
    }
    let mut rows = Vec::with_capacity(2 * cs.len());
    let mut labels = Vec::with_capacity(2 * cs.len());
    for c in cs.by_id() {
        let d = difference(feature_of(phi, c.pair[0])?, feature_of(phi, c.pair[1])?);
        let first_won = c.verdict.preferred == Slot::First;
        rows.push(d.iter().map(|v| -v).collect::<Vec<_>>());
        labels.push(!first_won);
        rows.push(d);
        labels.push(first_won);
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Input("feature vectors differ in length".into()));
    }
    let scale: Vec<f64> = (0..dim)
        .map(|k| (rows.iter().map(|r| r[k] * r[k]).sum::<f64>() / rows.len() as f64).sqrt())
        .collect();
    if scale.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateTraining("all pairwise feature differences are zero".into()));
    }
    let scaled: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&scale)
                .map(|(v, &s)| if s > 0.0 { v / s } else { 0.0 })
                .collect()
        })
        .collect();
    let opts = TrainOptions {
        reg,
        fit_intercept: false,
        ..TrainOptions::default()
    };
    let (model, _) = train_logistic_with(&scaled, &labels, &opts)?;
    let theta = model
        .weights()
        .iter()
        .zip(&scale)
        .map(|(w, &s)| if s > 0.0 { w / s } else { 0.0 })
        .collect();
    RewardModel::new(theta)
}

/// Rank every trajectory in `universe` by `θᵀφ`.
pub fn score_feature_rank(
    m: &RewardModel,
    phi: &BTreeMap<TrajId, FeatureVector>,
    universe: &BTreeSet<TrajId>,
    method: RankMethod,
) -> Result<Ranking> {
    let scores = universe
        .iter()
        .map(|&id| {
            let f = phi
                .get(&id)
                .ok_or_else(|| Error::Input(format!("no features for trajectory {id}")))?;
            Ok((id, m.reward(f)?))
        })
        .collect::<Result<_>>()?;
    Ranking::from_scores(method.name(), scores)
}

/// Perceptron baseline: `θ ← θ + φ(winner) − φ(loser)` for every comparison,
/// in list order, for `passes` passes, starting from zero.
pub fn tpp_baseline(cs: &ComparisonSet, phi: &BTreeMap<TrajId, FeatureVector>, passes: usize) -> Result<RewardModel> {
    let dim = match cs.comparisons().first() {
        Some(c) => feature_of(phi, c.pair[0])?.len(),
        None => phi.values().next().map_or(0, |f| f.values().len()),
    };
    let mut theta = vec![0.0; dim];
    for _ in 0..passes {
        for c in cs.comparisons() {
            let w = feature_of(phi, c.winner())?;
            let l = feature_of(phi, c.loser())?;
            if w.len() != dim || l.len() != dim {
                return Err(Error::Input("feature vectors differ in length".into()));
            }
            for ((t, a), b) in theta.iter_mut().zip(w).zip(l) {
                *t += a - b;
            }
        }
    }
    RewardModel::new(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Source;
    use crate::trajectory::FeatureLayout;
    use approx::assert_relative_eq;

    pub(crate) fn comp(j: CompId, a: TrajId, b: TrajId, winner: TrajId, p: f64) -> RankedComparison {
        let preferred = if winner == a { Slot::First } else { Slot::Second };
        RankedComparison {
            comparison: j,
            pair: [a, b],
            statement_first: Slot::First,
            verdict: PairwiseVerdict {
                comparison: j,
                preferred,
                probability: p,
                source: Source::Statement,
            },
        }
    }

    fn set(cs: Vec<RankedComparison>, universe: &[TrajId]) -> ComparisonSet {
        ComparisonSet::new(cs, universe.iter().copied().collect()).unwrap()
    }

    const A: TrajId = 1;
    const B: TrajId = 2;
    const C: TrajId = 3;

    #[test]
    fn borda_counts_wins() {
        let cs = set(vec![comp(0, A, B, A, 1.0), comp(1, A, C, A, 1.0), comp(2, B, C, B, 1.0)], &[A, B, C]);
        let r = borda(&cs).unwrap();
        assert_eq!((r.scores[&A], r.scores[&B], r.scores[&C]), (2.0, 1.0, 0.0));
        assert_eq!(r.order, vec![A, B, C]);
    }

    #[test]
    fn borda_single_and_uncompared() {
        let cs = set(vec![comp(0, A, B, A, 1.0)], &[A, B, 0, 9]);
        let r = borda(&cs).unwrap();
        assert_eq!(r.scores[&A], 1.0);
        assert_eq!(r.scores[&9], 0.0);
        assert_eq!(r.order, vec![A, 0, B, 9]);
        assert!(borda(&set(vec![], &[A])).is_err());
    }

    #[test]
    fn borda_conf_hand_values() {
        let cs = set(vec![comp(0, A, B, A, 0.55), comp(1, A, C, C, 0.99), comp(2, B, C, B, 0.9)], &[A, B, C]);
        let r = borda_conf(&cs).unwrap();
        assert_relative_eq!(r.scores[&A], 0.05, epsilon = 1e-12);
        assert_relative_eq!(r.scores[&B], 0.40, epsilon = 1e-12);
        assert_relative_eq!(r.scores[&C], 0.49, epsilon = 1e-12);
        assert_eq!(r.order, vec![C, B, A]);
    }

    #[test]
    fn borda_conf_with_uniform_confidence_matches_borda() {
        let cs = set(vec![comp(0, A, B, B, 0.8), comp(1, A, C, A, 0.8), comp(2, B, C, B, 0.2)], &[A, B, C]);
        assert_eq!(borda(&cs).unwrap().order, borda_conf(&cs).unwrap().order);
        let tie = set(vec![comp(0, A, B, B, 0.5)], &[A, B]);
        assert_eq!(borda_conf(&tie).unwrap().scores[&B], 0.0);
    }

    fn phi(values: &[(TrajId, Vec<f64>)]) -> BTreeMap<TrajId, FeatureVector> {
        // kinematic block plus goal distance: 7 entries
        let layout = FeatureLayout {
            version: "test".into(),
            n_objects: 0,
            time_bins: 1,
            grid_points: 4,
        };
        values
            .iter()
            .map(|(id, v)| (*id, FeatureVector::new(v.clone(), layout.clone()).unwrap()))
            .collect()
    }

    /// Pads a short feature vector to a valid 7-entry test layout.
    fn pad(v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        out.resize(7, 0.0);
        out
    }

    #[test]
    fn feature_rank_learns_planted_direction() {
        let feats: Vec<(TrajId, Vec<f64>)> = (0..6).map(|i| (i, pad(&[i as f64, 0.3 * ((i * 7) % 5) as f64]))).collect();
        let phi = phi(&feats);
        let pairs = [(0, 1), (2, 1), (3, 5), (4, 0), (5, 2), (1, 3), (4, 2)];
        let cs: Vec<_> = pairs
            .iter()
            .enumerate()
            .map(|(j, &(a, b))| comp(j as CompId, a, b, a.max(b), 1.0))
            .collect();
        let cs = set(cs, &[0, 1, 2, 3, 4, 5]);
        let m = fit_feature_rank(&cs, &phi, 0.1).unwrap();
        assert!(m.theta[0] > 0.0);
        let r = score_feature_rank(&m, &phi, cs.universe(), RankMethod::Feature).unwrap();
        assert_eq!(r.top(), Some(5));

        let flipped: Vec<_> = pairs
            .iter()
            .enumerate()
            .map(|(j, &(a, b))| comp(j as CompId, a, b, a.min(b), 1.0))
            .collect();
        let m2 = fit_feature_rank(&set(flipped, &[0, 1, 2, 3, 4, 5]), &phi, 0.1).unwrap();
        for (x, y) in m.theta.iter().zip(&m2.theta) {
            assert!((x + y).abs() < 1e-6);
        }
    }

    #[test]
    fn feature_rank_degenerate_and_missing() {
        let phi1 = phi(&[(A, pad(&[1.0])), (B, pad(&[1.0]))]);
        let cs = set(vec![comp(0, A, B, A, 1.0)], &[A, B]);
        assert!(matches!(fit_feature_rank(&cs, &phi1, 1.0), Err(Error::DegenerateTraining(_))));
        let m = RewardModel::new(vec![0.0; 7]).unwrap();
        let universe: BTreeSet<TrajId> = [A, B, C].into_iter().collect();
        assert!(matches!(score_feature_rank(&m, &phi1, &universe, RankMethod::Feature), Err(Error::Input(_))));
    }

    #[test]
    fn zero_theta_orders_by_id() {
        let phi = phi(&[(3, pad(&[1.0])), (1, pad(&[5.0])), (2, pad(&[-2.0]))]);
        let m = RewardModel::new(vec![0.0; 7]).unwrap();
        let r = score_feature_rank(&m, &phi, &[1, 2, 3].into_iter().collect(), RankMethod::Feature).unwrap();
        assert_eq!(r.order, vec![1, 2, 3]);
        let mut theta = vec![0.0; 7];
        theta[0] = 1.0;
        let r = score_feature_rank(&RewardModel::new(theta.clone()).unwrap(), &phi, &[1, 2].into_iter().collect(), RankMethod::Feature).unwrap();
        assert_eq!(r.order, vec![1, 2]);
        theta[0] = 7.5;
        let r2 = score_feature_rank(&RewardModel::new(theta).unwrap(), &phi, &[1, 2].into_iter().collect(), RankMethod::Feature).unwrap();
        assert_eq!(r.order, r2.order);
    }

    #[test]
    fn perceptron_updates() {
        let phi = phi(&[(A, pad(&[1.0, 0.0])), (B, pad(&[0.0, 1.0]))]);
        let cs = set(vec![comp(0, A, B, A, 1.0)], &[A, B]);
        let m = tpp_baseline(&cs, &phi, 1).unwrap();
        assert_eq!(&m.theta[..2], &[1.0, -1.0]);
        let m = tpp_baseline(&cs, &phi, 0).unwrap();
        assert!(m.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perceptron_on_realizable_set() {
        // reward = 2 f0 − f1
        let feats: Vec<(TrajId, Vec<f64>)> = (0..12)
            .map(|i| (i, pad(&[((i * 5) % 7) as f64, ((i * 3) % 4) as f64])))
            .collect();
        let reward = |v: &[f64]| 2.0 * v[0] - v[1];
        let phi = phi(&feats);
        let mut cs = Vec::new();
        for (j, (a, b)) in (0..12).flat_map(|a| ((a + 1)..12).map(move |b| (a, b))).enumerate() {
            let (ra, rb) = (reward(&feats[a as usize].1), reward(&feats[b as usize].1));
            if ra != rb {
                cs.push(comp(j as CompId, a, b, if ra > rb { a } else { b }, 1.0));
            }
        }
        let cs = set(cs, &(0..12).collect::<Vec<_>>());
        let m = tpp_baseline(&cs, &phi, 5).unwrap();
        let agree = cs
            .comparisons()
            .iter()
            .filter(|c| m.reward(&phi[&c.winner()]).unwrap() > m.reward(&phi[&c.loser()]).unwrap())
            .count();
        assert!(agree as f64 >= 0.9 * cs.len() as f64);
    }

    #[test]
    fn method_names_round_trip() {
        for m in RankMethod::ALL {
            assert_eq!(m.name().parse::<RankMethod>().unwrap(), m);
        }
        assert!("bogus".parse::<RankMethod>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_set() -> impl Strategy<Value = Vec<RankedComparison>> {
            prop::collection::vec((0u32..6, 0u32..6, any::<bool>(), 0.0f64..=1.0), 1..15).prop_map(|raw| {
                raw.into_iter()
                    .enumerate()
                    .filter(|(_, (a, b, _, _))| a != b)
                    .map(|(j, (a, b, first, p))| comp(j as CompId, a, b, if first { a } else { b }, p))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn borda_scores_sum_to_comparisons(cs in arb_set()) {
                prop_assume!(!cs.is_empty());
                let n = cs.len();
                let s = set(cs, &[0, 1, 2, 3, 4, 5]);
                let total: f64 = borda(&s).unwrap().scores.values().sum();
                prop_assert_eq!(total, n as f64);
            }

            #[test]
            fn scores_invariant_to_list_order(cs in arb_set()) {
                prop_assume!(!cs.is_empty());
                let mut rev = cs.clone();
                rev.reverse();
                let (a, b) = (set(cs, &[0, 1, 2, 3, 4, 5]), set(rev, &[0, 1, 2, 3, 4, 5]));
                prop_assert_eq!(borda(&a).unwrap(), borda(&b).unwrap());
                prop_assert_eq!(borda_conf(&a).unwrap(), borda_conf(&b).unwrap());
            }

            #[test]
            fn hard_verdicts_make_conf_equal_borda(cs in arb_set()) {
                prop_assume!(!cs.is_empty());
                let hard: Vec<_> = cs.into_iter().map(|mut c| {
                    c.verdict.probability = if c.verdict.preferred == Slot::First { 1.0 } else { 0.0 };
                    c
                }).collect();
                let s = set(hard, &[0, 1, 2, 3, 4, 5]);
                prop_assert_eq!(borda(&s).unwrap().order, borda_conf(&s).unwrap().order);
            }

            #[test]
            fn feature_fit_invariant_to_slot_swap(cs in arb_set(), swap in prop::collection::vec(any::<bool>(), 15)) {
                prop_assume!(!cs.is_empty());
                let feats: Vec<(TrajId, Vec<f64>)> = (0..6).map(|i| (i, pad(&[i as f64, ((i * 7) % 5) as f64, (i % 2) as f64]))).collect();
                let phi = phi(&feats);
                let swapped: Vec<_> = cs.iter().zip(&swap).map(|(c, &s)| {
                    let mut c = *c;
                    if s {
                        c.pair.swap(0, 1);
                        c.verdict.preferred = c.verdict.preferred.other();
                    }
                    c
                }).collect();
                let a = fit_feature_rank(&set(cs, &[0, 1, 2, 3, 4, 5]), &phi, 1.0).unwrap();
                let b = fit_feature_rank(&set(swapped, &[0, 1, 2, 3, 4, 5]), &phi, 1.0).unwrap();
                for (x, y) in a.theta.iter().zip(&b.theta) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }
}
