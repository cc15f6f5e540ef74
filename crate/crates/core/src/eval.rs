//! Metrics and the cross-validation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{PairwiseVerdict, Source};
use crate::rank::{RankMethod, Ranking};
use crate::signal::Slot;
use crate::{CompId, Error, Result, TrajId};

/// Comparison as scheduled in a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub comparison: CompId,
    /// Trajectories shown in slots 1 and 2.
    pub pair: [TrajId; 2],
    /// Slot named as the better one in the statement.
    pub statement_first: Slot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskRepr", into = "TaskRepr")]
pub struct PreferenceTask {
    task: u32,
    target: TrajId,
    universe: BTreeSet<TrajId>,
    comparisons: Vec<TaskComparison>,
    d_target: BTreeMap<TrajId, f64>,
}

#[derive(Serialize, Deserialize)]
struct TaskRepr {
    task: u32,
    target: TrajId,
    universe: BTreeSet<TrajId>,
    comparisons: Vec<TaskComparison>,
    d_target: BTreeMap<TrajId, f64>,
}

impl TryFrom<TaskRepr> for PreferenceTask {
    type Error = Error;

    fn try_from(r: TaskRepr) -> Result<Self> {
        PreferenceTask::new(r.task, r.target, r.universe, r.comparisons, r.d_target)
    }
}

impl From<PreferenceTask> for TaskRepr {
    fn from(t: PreferenceTask) -> Self {
        TaskRepr {
            task: t.task,
            target: t.target,
            universe: t.universe,
            comparisons: t.comparisons,
            d_target: t.d_target,
        }
    }
}

impl PreferenceTask {
    pub fn new(
        task: u32,
        target: TrajId,
        universe: BTreeSet<TrajId>,
        comparisons: Vec<TaskComparison>,
        d_target: BTreeMap<TrajId, f64>,
    ) -> Result<Self> {
        if universe.is_empty() {
            return Err(Error::Input(format!("task {task} has no candidates")));
        }
        if let Some(id) = universe.iter().find(|id| !d_target.contains_key(id)) {
            return Err(Error::Input(format!("task {task}: no d_target for trajectory {id}")));
        }
        if d_target.values().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Input(format!("task {task}: d_target must be finite and nonnegative")));
        }
        if universe.contains(&target) && d_target[&target] != 0.0 {
            return Err(Error::Input(format!("task {task}: target has nonzero d_target")));
        }
        let mut seen = BTreeSet::new();
        for c in &comparisons {
            if !seen.insert(c.comparison) {
                return Err(Error::Input(format!("task {task}: comparison {} repeated", c.comparison)));
            }
            if c.pair[0] == c.pair[1] || c.pair.iter().any(|id| !universe.contains(id)) {
                return Err(Error::Input(format!(
                    "task {task}: comparison {} references an invalid pair",
                    c.comparison
                )));
            }
        }
        Ok(Self {
            task,
            target,
            universe,
            comparisons,
            d_target,
        })
    }

    pub fn task(&self) -> u32 {
        self.task
    }

    pub fn target(&self) -> TrajId {
        self.target
    }

    pub fn universe(&self) -> &BTreeSet<TrajId> {
        &self.universe
    }

    pub fn comparisons(&self) -> &[TaskComparison] {
        &self.comparisons
    }

    pub fn d_target(&self) -> &BTreeMap<TrajId, f64> {
        &self.d_target
    }

    /// Slot holding the trajectory with the smaller `d_target`, or `None` on an exact tie.
    pub fn nearer_slot(&self, c: &TaskComparison) -> Option<Slot> {
        let (a, b) = (self.d_target[&c.pair[0]], self.d_target[&c.pair[1]]);
        match a.total_cmp(&b) {
            std::cmp::Ordering::Less => Some(Slot::First),
            std::cmp::Ordering::Greater => Some(Slot::Second),
            std::cmp::Ordering::Equal => None,
        }
    }
}

/// Fraction of verdicts naming the trajectory with the smaller `d_target`.
/// Comparisons whose two trajectories tie exactly are left out.
pub fn comparison_accuracy(verdicts: &[PairwiseVerdict], tasks: &[PreferenceTask]) -> Result<f64> {
    let mut lookup = BTreeMap::new();
    for t in tasks {
        for c in t.comparisons() {
            lookup.insert(c.comparison, (t, c));
        }
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for v in verdicts {
        let (task, c) = lookup
            .get(&v.comparison)
            .ok_or_else(|| Error::Input(format!("verdict for unknown comparison {}", v.comparison)))?;
        if let Some(nearer) = task.nearer_slot(c) {
            total += 1;
            hits += usize::from(v.preferred == nearer);
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no comparisons with a ground-truth preference".into()));
    }
    Ok(hits as f64 / total as f64)
}

fn top_ranked(r: &Ranking, task: &PreferenceTask) -> Result<TrajId> {
    if let Some(id) = task.universe().iter().find(|id| !r.scores.contains_key(id)) {
        return Err(Error::Input(format!("ranking does not cover trajectory {id}")));
    }
    r.order
        .iter()
        .copied()
        .find(|id| task.universe().contains(id))
        .ok_or_else(|| Error::Input("empty ranking".into()))
}

/// `d_target` of the top-ranked candidate minus the best achievable.
pub fn delta_d(r: &Ranking, task: &PreferenceTask) -> Result<f64> {
    let top = top_ranked(r, task)?;
    let best = task
        .universe()
        .iter()
        .map(|id| task.d_target()[id])
        .fold(f64::INFINITY, f64::min);
    Ok(task.d_target()[&top] - best)
}

/// nDCG@k with relevance `max d_target − d_target` and a `log₂(p + 1)` discount.
pub fn ndcg_at_k(r: &Ranking, task: &PreferenceTask, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("nDCG needs k ≥ 1".into()));
    }
    top_ranked(r, task)?;
    let d = task.d_target();
    let worst = task.universe().iter().map(|id| d[id]).fold(f64::NEG_INFINITY, f64::max);
    let relevance = |id: &TrajId| worst - d[id];
    let k = k.min(task.universe().len());
    let dcg = |ids: &mut dyn Iterator<Item = &TrajId>| -> f64 {
        ids.take(k)
            .enumerate()
            .map(|(p, id)| relevance(id) / ((p + 2) as f64).log2())
            .sum()
    };
    let produced = dcg(&mut r.order.iter().filter(|id| task.universe().contains(id)));
    let mut ideal: Vec<TrajId> = task.universe().iter().copied().collect();
    ideal.sort_by(|a, b| d[a].total_cmp(&d[b]));
    let best = dcg(&mut ideal.iter());
    if best == 0.0 {
        return Ok(1.0);
    }
    Ok(produced / best)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Contiguous k-fold over `n` time-ordered items. The first `n mod k`
/// blocks hold one extra item. With `strict_past_only`, fold `f` trains
/// only on the blocks before it, so the first fold has no training data.
pub fn chrono_kfold(n: usize, k: usize, strict_past_only: bool) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Parameter(format!("{n} items cannot fill {k} folds")));
    }
    let (base, extra) = (n / k, n % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    Ok((0..k)
        .map(|f| {
            let test: Vec<usize> = (bounds[f]..bounds[f + 1]).collect();
            let train_end = if strict_past_only { bounds[f] } else { n };
            let train = (0..train_end).filter(|i| *i < bounds[f] || *i >= bounds[f + 1]).collect();
            Fold { train, test }
        })
        .collect())
}

/// Kendall's tau-b between two score vectors over the same items.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let da = (a[i] - a[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal);
            let db = (b[i] - b[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant + ties_a) as f64;
    let n1 = (concordant + discordant + ties_b) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::UndefinedMetric("Kendall tau of a constant ranking".into()));
    }
    Ok((concordant - discordant) as f64 / (n0 * n1).sqrt())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() || resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::Parameter("bootstrap needs data, resamples and a level in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok((at(tail), at(1.0 - tail)))
}

/// Metrics of one ranking for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub participant: String,
    pub task: u32,
    pub delta_d_target: f64,
    pub ndcg_at: BTreeMap<usize, f64>,
}

pub const REPORT_K: [usize; 2] = [1, 3];

pub fn task_metrics(participant: &str, r: &Ranking, task: &PreferenceTask) -> Result<TaskMetrics> {
    Ok(TaskMetrics {
        participant: participant.to_string(),
        task: task.task(),
        delta_d_target: delta_d(r, task)?,
        ndcg_at: REPORT_K
            .iter()
            .map(|&k| Ok((k, ndcg_at_k(r, task, k)?)))
            .collect::<Result<_>>()?,
    })
}

/// Means over tasks for one (source, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub delta_d_target: f64,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub per_task: Vec<TaskMetrics>,
}

impl MethodSummary {
    pub fn from_tasks(mut per_task: Vec<TaskMetrics>) -> Self {
        per_task.sort_by(|a, b| (&a.participant, a.task).cmp(&(&b.participant, b.task)));
        let dd: Vec<f64> = per_task.iter().map(|m| m.delta_d_target).collect();
        let ndcg_at = REPORT_K
            .iter()
            .map(|&k| {
                let v: Vec<f64> = per_task.iter().map(|m| m.ndcg_at[&k]).collect();
                (k, mean(&v))
            })
            .collect();
        Self {
            delta_d_target: mean(&dd),
            ndcg_at,
            per_task,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub comparison_accuracy: f64,
    pub n_comparisons: usize,
    pub methods: BTreeMap<RankMethod, MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub sources: BTreeMap<Source, SourceReport>,
}

impl MetricReport {
    /// Merge reports over disjoint sets of tasks (e.g. several participants).
    pub fn merge(reports: &[MetricReport]) -> Result<MetricReport> {
        let mut sources = BTreeMap::new();
        for source in Source::ALL {
            let parts: Vec<&SourceReport> = reports.iter().filter_map(|r| r.sources.get(&source)).collect();
            if parts.is_empty() {
                continue;
            }
            let n: usize = parts.iter().map(|p| p.n_comparisons).sum();
            let acc = if n == 0 {
                f64::NAN
            } else {
                parts.iter().map(|p| p.comparison_accuracy * p.n_comparisons as f64).sum::<f64>() / n as f64
            };
            let mut methods = BTreeMap::new();
            for method in RankMethod::ALL {
                let tasks: Vec<TaskMetrics> = parts
                    .iter()
                    .filter_map(|p| p.methods.get(&method))
                    .flat_map(|m| m.per_task.iter().cloned())
                    .collect();
                if !tasks.is_empty() {
                    methods.insert(method, MethodSummary::from_tasks(tasks));
                }
            }
            sources.insert(
                source,
                SourceReport {
                    comparison_accuracy: acc,
                    n_comparisons: n,
                    methods,
                },
            );
        }
        Ok(MetricReport { sources })
    }

    /// Rows are ranking methods, columns are source × metric.
    pub fn to_table(&self) -> String {
        let metrics = ["dd", "ndcg@1", "ndcg@3"];
        let mut header = vec!["method".to_string()];
        for s in Source::ALL {
            for m in metrics {
                header.push(format!("{}:{m}", s.short()));
            }
        }
        let mut rows = vec![header];
        for method in RankMethod::ALL {
            let mut row = vec![method.name().to_string()];
            for s in Source::ALL {
                let cell = self.sources.get(&s).and_then(|r| r.methods.get(&method));
                for m in metrics {
                    row.push(match cell {
                        None => "-".into(),
                        Some(c) => {
                            let v = match m {
                                "dd" => c.delta_d_target,
                                "ndcg@1" => c.ndcg_at[&1],
                                _ => c.ndcg_at[&3],
                            };
                            format!("{v:.4}")
                        }
                    });
                }
            }
            rows.push(row);
        }
        let mut acc_row = vec!["accuracy".to_string()];
        for s in Source::ALL {
            let a = self.sources.get(&s).map(|r| format!("{:.4}", r.comparison_accuracy));
            acc_row.push(a.unwrap_or_else(|| "-".into()));
            acc_row.push(String::new());
            acc_row.push(String::new());
        }
        rows.push(acc_row);
        render_aligned(&rows)
    }

    /// Participant × task matrix of one metric, as CSV.
    pub fn to_csv_matrix(&self, source: Source, method: RankMethod, k: usize) -> Result<String> {
        let cell = self
            .sources
            .get(&source)
            .and_then(|r| r.methods.get(&method))
            .ok_or_else(|| Error::Input(format!("no results for {} / {}", source.name(), method.name())))?;
        let tasks: BTreeSet<u32> = cell.per_task.iter().map(|m| m.task).collect();
        let mut rows: BTreeMap<&str, BTreeMap<u32, f64>> = BTreeMap::new();
        for m in &cell.per_task {
            let v = *m
                .ndcg_at
                .get(&k)
                .ok_or_else(|| Error::Input(format!("nDCG@{k} was not computed")))?;
            rows.entry(&m.participant).or_default().insert(m.task, v);
        }
        let mut out = String::from("participant");
        for t in &tasks {
            write!(out, ",task{t}").unwrap();
        }
        out.push('\n');
        for (p, vals) in rows {
            out.push_str(p);
            for t in &tasks {
                match vals.get(t) {
                    Some(v) => write!(out, ",{v:.6}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn render_aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn task(d: &[(TrajId, f64)], pairs: &[(TrajId, TrajId)]) -> PreferenceTask {
        let comparisons = pairs
            .iter()
            .enumerate()
            .map(|(j, &(a, b))| TaskComparison {
                comparison: j as CompId,
                pair: [a, b],
                statement_first: Slot::First,
            })
            .collect();
        PreferenceTask::new(
            0,
            999,
            d.iter().map(|&(id, _)| id).collect(),
            comparisons,
            d.iter().copied().collect(),
        )
        .unwrap()
    }

    fn ranking(order_scores: &[(TrajId, f64)]) -> Ranking {
        Ranking::from_scores("test", order_scores.iter().copied().collect()).unwrap()
    }

    fn verdict(j: CompId, preferred: Slot) -> PairwiseVerdict {
        PairwiseVerdict {
            comparison: j,
            preferred,
            probability: if preferred == Slot::First { 1.0 } else { 0.0 },
            source: Source::Button,
        }
    }

    #[test]
    fn accuracy_counts_and_ties() {
        let pairs: Vec<(TrajId, TrajId)> = (0..100).map(|j| (2 * j, 2 * j + 1)).collect();
        let d: Vec<(TrajId, f64)> = (0..200).map(|i| (i, i as f64)).collect();
        let t = task(&d, &pairs);
        let all: Vec<_> = (0..100).map(|j| verdict(j, Slot::First)).collect();
        assert_eq!(comparison_accuracy(&all, std::slice::from_ref(&t)).unwrap(), 1.0);
        let half: Vec<_> = (0..100)
            .map(|j| verdict(j, if j % 2 == 0 { Slot::First } else { Slot::Second }))
            .collect();
        assert_eq!(comparison_accuracy(&half, std::slice::from_ref(&t)).unwrap(), 0.5);

        let tied = task(&[(1, 0.5), (2, 0.5)], &[(1, 2)]);
        assert!(matches!(
            comparison_accuracy(&[verdict(0, Slot::First)], &[tied]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn delta_d_examples() {
        let t = task(&[(1, 0.1), (2, 0.4)], &[(1, 2)]);
        assert_eq!(delta_d(&ranking(&[(1, 2.0), (2, 1.0)]), &t).unwrap(), 0.0);
        assert_relative_eq!(delta_d(&ranking(&[(1, 1.0), (2, 2.0)]), &t).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn ndcg_hand_value() {
        // ids: 0 best (d=0), 1 mid (0.5), 2 worst (1.0); produced order worst, best, mid
        let t = task(&[(0, 0.0), (1, 0.5), (2, 1.0)], &[(0, 1)]);
        let r = ranking(&[(2, 3.0), (0, 2.0), (1, 1.0)]);
        let expected = (1.0 / 3f64.log2() + 0.5 / 2.0) / (1.0 + 0.5 / 3f64.log2());
        let got = ndcg_at_k(&r, &t, 3).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-12);
        assert!((got - 0.6696).abs() < 1e-4);
    }

    #[test]
    fn ndcg_edge_cases() {
        let t = task(&[(0, 0.0), (1, 0.5), (2, 1.0)], &[(0, 1)]);
        let perfect = ranking(&[(0, 3.0), (1, 2.0), (2, 1.0)]);
        for k in 1..=5 {
            assert_relative_eq!(ndcg_at_k(&perfect, &t, k).unwrap(), 1.0);
        }
        let flat = task(&[(0, 0.3), (1, 0.3)], &[(0, 1)]);
        assert_eq!(ndcg_at_k(&ranking(&[(0, 0.0), (1, 1.0)]), &flat, 1).unwrap(), 1.0);
        assert!(ndcg_at_k(&perfect, &t, 0).is_err());
    }

    #[test]
    fn kfold_blocks() {
        let folds = chrono_kfold(10, 5, false).unwrap();
        for (f, fold) in folds.iter().enumerate() {
            assert_eq!(fold.test, vec![2 * f, 2 * f + 1]);
            assert_eq!(fold.train.len(), 8);
        }
        let folds = chrono_kfold(144, 5, false).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![29, 29, 29, 29, 28]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort();
        assert_eq!(all, (0..144).collect::<Vec<_>>());
        assert!(chrono_kfold(3, 5, false).is_err());
        assert!(chrono_kfold(10, 1, false).is_err());
    }

    #[test]
    fn strict_past_folds() {
        let folds = chrono_kfold(10, 5, true).unwrap();
        assert!(folds[0].train.is_empty());
        assert_eq!(folds[2].train, vec![0, 1, 2, 3]);
        assert!(folds.iter().all(|f| f.train.iter().all(|&i| i < f.test[0])));
    }

    #[test]
    fn kendall_tau_values() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_relative_eq!(kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 4.0 / 6.0);
        assert!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let v: Vec<f64> = (0..200).map(|i| (i % 10) as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&v, 0.95, 2000, 3).unwrap();
        assert!(lo < 4.5 && 4.5 < hi && hi - lo < 1.5);
    }

    #[test]
    fn report_aggregation_is_plain_mean() {
        let t1 = task(&[(0, 0.0), (1, 1.0)], &[(0, 1)]);
        let good = task_metrics("p", &ranking(&[(0, 1.0), (1, 0.0)]), &t1).unwrap();
        let bad = TaskMetrics {
            task: 1,
            ..task_metrics("p", &ranking(&[(0, 0.0), (1, 1.0)]), &t1).unwrap()
        };
        let s = MethodSummary::from_tasks(vec![bad, good]);
        assert_eq!(s.ndcg_at[&1], 0.5);
        assert_eq!(s.delta_d_target, 0.5);
        assert_eq!(s.per_task[0].task, 0);
    }

    #[test]
    fn table_shape() {
        let t1 = task(&[(0, 0.0), (1, 1.0)], &[(0, 1)]);
        let m = MethodSummary::from_tasks(vec![task_metrics("p", &ranking(&[(0, 1.0), (1, 0.0)]), &t1).unwrap()]);
        let mut report = MetricReport::default();
        for s in Source::ALL {
            report.sources.insert(
                s,
                SourceReport {
                    comparison_accuracy: 1.0,
                    n_comparisons: 1,
                    methods: RankMethod::ALL.iter().map(|&r| (r, m.clone())).collect(),
                },
            );
        }
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 1 + 4 + 1);
        assert_eq!(lines[0].split_whitespace().count(), 1 + 12);
        assert!(lines[1..5].iter().all(|l| l.split_whitespace().count() == 13));
        let csv = report.to_csv_matrix(Source::Button, RankMethod::Borda, 1).unwrap();
        assert_eq!(csv, "participant,task0\np,1.000000\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ndcg_ignores_id_relabeling(ds in prop::collection::vec(0.0f64..2.0, 2..8), scores in prop::collection::vec(-5.0f64..5.0, 8), k in 1usize..5, shift in 1u32..50) {
                let n = ds.len();
                let d: Vec<(TrajId, f64)> = ds.iter().enumerate().map(|(i, &v)| (i as TrajId, v)).collect();
                let r: Vec<(TrajId, f64)> = (0..n).map(|i| (i as TrajId, scores[i])).collect();
                // relabel by reversal plus offset; tie order flips, so keep scores distinct
                let distinct: BTreeSet<u64> = scores[..n].iter().map(|s| s.to_bits()).collect();
                prop_assume!(distinct.len() == n);
                let relabel = |i: TrajId| (n as TrajId - 1 - i) * 3 + shift;
                let d2: Vec<(TrajId, f64)> = d.iter().map(|&(i, v)| (relabel(i), v)).collect();
                let r2: Vec<(TrajId, f64)> = r.iter().map(|&(i, v)| (relabel(i), v)).collect();
                let a = ndcg_at_k(&ranking(&r), &task(&d, &[(0, 1)]), k).unwrap();
                let b = ndcg_at_k(&ranking(&r2), &task(&d2, &[(relabel(0), relabel(1))]), k).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            }

            #[test]
            fn delta_zero_iff_top_ndcg_one(ds in prop::collection::vec(0.0f64..2.0, 2..8), scores in prop::collection::vec(-5.0f64..5.0, 8)) {
                let n = ds.len();
                let mut sorted = ds.clone();
                sorted.sort_by(f64::total_cmp);
                prop_assume!(sorted[0] < sorted[1]);
                let d: Vec<(TrajId, f64)> = ds.iter().enumerate().map(|(i, &v)| (i as TrajId, v)).collect();
                let r = ranking(&(0..n).map(|i| (i as TrajId, scores[i])).collect::<Vec<_>>());
                let t = task(&d, &[(0, 1)]);
                let dd = delta_d(&r, &t).unwrap();
                prop_assert!(dd >= 0.0);
                prop_assert_eq!(dd == 0.0, ndcg_at_k(&r, &t, 1).unwrap() == 1.0);
            }
        }
    }
}
