//! End-to-end orchestration: decoding a session into pairwise verdicts and
//! ranking each task's candidates from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::classify::{
    combine, meta_features, pairwise_from_observation, pairwise_from_statement, predict_proba, train_logistic,
    LogisticModel, PairwiseVerdict, Source, Standardizer, DEFAULT_REG,
};
use crate::eval::{chrono_kfold, comparison_accuracy, task_metrics, MethodSummary, MetricReport, SourceReport};
use crate::rank::{
    borda, borda_conf, fit_feature_rank, score_feature_rank, tpp_baseline, ComparisonSet, RankMethod, RankedComparison,
    Ranking,
};
use crate::signal::{bandpass, resample};
use crate::signal::{artifact_flag, extract_observation, extract_statement, DEFAULT_ARTIFACT_UV};
use crate::signal::{augment_statement, fit_xdawn, XdawnModel};
use crate::signal::{SignalWindow, Slot, WindowLabel, STATEMENT_RATE};
use crate::spd::{
    frechet_mean, ledoit_wolf_cov, OffDiagonalWeight, SpdMatrix, TangentSpace, DEFAULT_MEAN_MAX_ITER, DEFAULT_MEAN_TOL,
};
use crate::synth::{Session, SynthConfig};
use crate::trajectory::{features, FeatureLayout, FeatureVector};
use crate::{CompId, Error, Result, TrajId};

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub folds: usize,
    pub strict_past_only: bool,
    /// L2 strength of the observation and statement classifiers.
    pub reg: f64,
    /// L2 strength of the meta-classifier. Its inputs are probabilities in [0, 1], so it needs far
    /// less shrinkage than the tangent-space classifiers.
    pub meta_reg: f64,
    /// Inner chronological folds producing the meta-classifier's training inputs.
    pub meta_folds: usize,
    pub band_hz: [f64; 2],
    /// Windows whose peak-to-peak amplitude exceeds this are left out of training.
    pub artifact_uv: Option<f64>,
    /// Replace statement labels by the behavioral response.
    pub label_correction: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            strict_past_only: false,
            reg: DEFAULT_REG,
            meta_reg: 1e-3,
            meta_folds: 3,
            band_hz: [0.5, 40.0],
            artifact_uv: Some(DEFAULT_ARTIFACT_UV),
            label_correction: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.meta_folds < 2 {
            return Err(Error::Parameter("fold counts must be at least 2".into()));
        }
        if !(self.reg > 0.0 && self.meta_reg > 0.0) {
            return Err(Error::Parameter("regularization must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub methods: Vec<RankMethod>,
    pub feature_reg: f64,
    pub tpp_passes: usize,
    pub layout: FeatureLayout,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            methods: RankMethod::ALL.to_vec(),
            feature_reg: DEFAULT_FEATURE_REG,
            tpp_passes: 1,
            layout: FeatureLayout::default(),
        }
    }
}

/// The reward fit sees few comparisons per task; heavier shrinkage flattens the ranking.
pub const DEFAULT_FEATURE_REG: f64 = 1e-2;

/// Everything a run needs, from one JSON file with every field defaulted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `synth.seed` when set.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub decode: DecodeConfig,
    pub rank: RankConfig,
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("config: {e}")))?;
        Ok(cfg.resolved())
    }

    /// Apply the top-level seed override.
    pub fn resolved(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.decode.validate()
    }
}

/// One comparison's decoded inputs, in recording order.
struct Trial {
    comparison: CompId,
    statement_first: Slot,
    d: [f64; 2],
    obs_cov: [SpdMatrix; 2],
    obs_clean: [bool; 2],
    statement: SignalWindow,
    statement_clean: bool,
    pressed: bool,
    /// Training label: statement believed correct.
    statement_correct: Option<bool>,
}

fn trials(session: &Session, cfg: &DecodeConfig) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (task, rec) in session.tasks.iter().zip(&session.recordings) {
        let filtered = bandpass(rec, cfg.band_hz[0], cfg.band_hz[1])?;
        let slow = resample(&filtered, STATEMENT_RATE)?;
        for c in task.task.comparisons() {
            let j = c.comparison;
            let obs = [Slot::First, Slot::Second].map(|s| extract_observation(&filtered, j, s));
            let [o1, o2] = obs;
            let (o1, o2) = (o1?, o2?);
            let statement = extract_statement(&slow, j)?;
            let clean = |w: &SignalWindow| cfg.artifact_uv.is_none_or(|thr| !artifact_flag(w, thr));
            let pressed = filtered
                .find_event(crate::signal::EventKind::ButtonPress, j, None)
                .is_some();
            let truth = task.task.nearer_slot(c).map(|s| s == c.statement_first);
            out.push(Trial {
                comparison: j,
                statement_first: c.statement_first,
                d: c.pair.map(|id| task.task.d_target()[&id]),
                obs_clean: [clean(&o1), clean(&o2)],
                obs_cov: [ledoit_wolf_cov(o1.data())?, ledoit_wolf_cov(o2.data())?],
                statement_clean: clean(&statement),
                statement,
                pressed,
                statement_correct: if cfg.label_correction { Some(pressed) } else { truth },
            });
        }
    }
    Ok(out)
}

fn reference_point(covs: &[SpdMatrix]) -> Result<SpdMatrix> {
    match frechet_mean(covs, DEFAULT_MEAN_TOL, DEFAULT_MEAN_MAX_ITER) {
        Ok(m) => Ok(m),
        Err(Error::Convergence { iterations, residual, last }) => {
            warn!("Fréchet mean stopped after {iterations} iterations (residual {residual:.3e}); using last iterate");
            Ok(*last)
        }
        Err(e) => Err(e),
    }
}

/// Tangent-space logistic classifier on covariance matrices.
struct CovarianceClassifier {
    space: TangentSpace,
    scaler: Standardizer,
    model: LogisticModel,
}

impl CovarianceClassifier {
    fn fit(covs: &[SpdMatrix], labels: &[bool], reg: f64) -> Result<Self> {
        let space = TangentSpace::new(&reference_point(covs)?, OffDiagonalWeight::Unit)?;
        let rows: Vec<Vec<f64>> = covs
            .iter()
            .map(|c| Ok(space.project(c)?.into_values()))
            .collect::<Result<_>>()?;
        let scaler = Standardizer::fit(&rows)?;
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
        let model = train_logistic(&scaled, labels, reg)?;
        Ok(Self { space, scaler, model })
    }

    fn predict(&self, c: &SpdMatrix) -> Result<f64> {
        let v = self.space.project(c)?.into_values();
        predict_proba(&self.model, &self.scaler.transform(&v))
    }
}

struct StatementModel {
    xdawn: XdawnModel,
    clf: CovarianceClassifier,
}

fn statement_cov(xdawn: &XdawnModel, w: &SignalWindow) -> Result<SpdMatrix> {
    ledoit_wolf_cov(augment_statement(w, xdawn)?.data())
}

impl StatementModel {
    fn fit(trials: &[Trial], idx: &[usize], reg: f64) -> Result<Self> {
        let train: Vec<(&Trial, bool)> = idx
            .iter()
            .map(|&i| &trials[i])
            .filter(|t| t.statement_clean)
            .filter_map(|t| t.statement_correct.map(|c| (t, c)))
            .collect();
        let windows: Vec<SignalWindow> = train
            .iter()
            .map(|(t, correct)| {
                let label = if *correct { WindowLabel::Correct } else { WindowLabel::Erroneous };
                t.statement.clone().with_label(label)
            })
            .collect();
        let xdawn = fit_xdawn(&windows)?;
        let covs: Vec<SpdMatrix> = windows.iter().map(|w| statement_cov(&xdawn, w)).collect::<Result<_>>()?;
        let labels: Vec<bool> = train.iter().map(|(_, c)| *c).collect();
        Ok(Self {
            clf: CovarianceClassifier::fit(&covs, &labels, reg)?,
            xdawn,
        })
    }

    /// Probability that the statement is correct.
    fn predict(&self, t: &Trial) -> Result<f64> {
        self.clf.predict(&statement_cov(&self.xdawn, &t.statement)?)
    }
}

struct ObservationModel {
    clf: CovarianceClassifier,
}

impl ObservationModel {
    /// Far-class labels come from the median `d_target` of the training windows.
    fn fit(trials: &[Trial], idx: &[usize], reg: f64) -> Result<Self> {
        let all_d: Vec<f64> = idx.iter().flat_map(|&i| trials[i].d).collect();
        let threshold = crate::trajectory::median(&all_d);
        let mut covs = Vec::new();
        let mut labels = Vec::new();
        for &i in idx {
            for k in 0..2 {
                if trials[i].obs_clean[k] {
                    covs.push(trials[i].obs_cov[k].clone());
                    labels.push(trials[i].d[k] >= threshold);
                }
            }
        }
        if covs.is_empty() {
            return Err(Error::InsufficientData("no clean observation windows to train on".into()));
        }
        Ok(Self {
            clf: CovarianceClassifier::fit(&covs, &labels, reg)?,
        })
    }

    /// Far-class probabilities for both slots.
    fn predict(&self, t: &Trial) -> Result<[f64; 2]> {
        Ok([self.clf.predict(&t.obs_cov[0])?, self.clf.predict(&t.obs_cov[1])?])
    }
}

struct FoldModels {
    statement: StatementModel,
    observation: ObservationModel,
}

impl FoldModels {
    fn fit(trials: &[Trial], idx: &[usize], cfg: &DecodeConfig) -> Result<Self> {
        Ok(Self {
            statement: StatementModel::fit(trials, idx, cfg.reg)?,
            observation: ObservationModel::fit(trials, idx, cfg.reg)?,
        })
    }

    /// `(p_correct, far-probability of the statement's better slot, of its worse slot)`.
    fn predict(&self, t: &Trial) -> Result<(f64, [f64; 2], [f64; 3])> {
        let p = self.statement.predict(t)?;
        let far = self.observation.predict(t)?;
        let better = t.statement_first.index();
        Ok((p, far, [p, far[better], far[1 - better]]))
    }
}

/// Meta-classifier trained on out-of-fold predictions within `idx`.
fn fit_meta(trials: &[Trial], idx: &[usize], cfg: &DecodeConfig) -> Result<LogisticModel> {
    if idx.len() < cfg.meta_folds {
        return Err(Error::InsufficientData(format!("{} comparisons cannot fill the inner folds", idx.len())));
    }
    let inner = chrono_kfold(idx.len(), cfg.meta_folds, cfg.strict_past_only)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for fold in inner {
        if fold.train.is_empty() {
            continue;
        }
        let train: Vec<usize> = fold.train.iter().map(|&k| idx[k]).collect();
        let models = match FoldModels::fit(trials, &train, cfg) {
            Ok(m) => m,
            Err(e) => {
                debug!("inner fold skipped: {e}");
                continue;
            }
        };
        for &k in &fold.test {
            let t = &trials[idx[k]];
            if let Some(label) = t.statement_correct {
                let (_, _, m) = models.predict(t)?;
                rows.push(meta_features(m[0], m[1], m[2]));
                labels.push(label);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no out-of-fold predictions for the meta-classifier".into()));
    }
    train_logistic(&rows, &labels, cfg.meta_reg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub participant: String,
    pub verdicts: BTreeMap<Source, Vec<PairwiseVerdict>>,
}

impl Decoded {
    pub fn accuracies(&self, session: &Session) -> Result<BTreeMap<Source, f64>> {
        let tasks = session.preference_tasks();
        self.verdicts
            .iter()
            .map(|(s, v)| Ok((*s, comparison_accuracy(v, &tasks)?)))
            .collect()
    }
}

fn uninformative(t: &Trial) -> Result<[PairwiseVerdict; 3]> {
    let j = t.comparison;
    Ok([
        pairwise_from_observation(j, 0.5, 0.5)?,
        pairwise_from_statement(j, 0.5, t.statement_first, Source::Statement)?,
        pairwise_from_statement(j, 0.5, t.statement_first, Source::Combined)?,
    ])
}

/// Out-of-fold verdicts for every comparison from all four sources.
pub fn decode_session(session: &Session, cfg: &DecodeConfig) -> Result<Decoded> {
    cfg.validate()?;
    let trials = trials(session, cfg)?;
    let folds = chrono_kfold(trials.len(), cfg.folds, cfg.strict_past_only)?;
    let mut verdicts: BTreeMap<Source, Vec<PairwiseVerdict>> = Source::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for (f, fold) in folds.iter().enumerate() {
        let brain: Vec<[PairwiseVerdict; 3]> = if fold.train.is_empty() {
            fold.test.iter().map(|&i| uninformative(&trials[i])).collect::<Result<_>>()?
        } else {
            let models = FoldModels::fit(&trials, &fold.train, cfg)?;
            // too little history for inner folds: the combined source falls back to the statement
            let meta = match fit_meta(&trials, &fold.train, cfg) {
                Ok(m) => Some(m),
                Err(e @ (Error::InsufficientData(_) | Error::DegenerateTraining(_))) => {
                    warn!("fold {f}: no meta-classifier ({e})");
                    None
                }
                Err(e) => return Err(e),
            };
            debug!("fold {f}: trained on {} comparisons", fold.train.len());
            fold.test
                .iter()
                .map(|&i| {
                    let t = &trials[i];
                    let (p, far, m) = models.predict(t)?;
                    Ok([
                        pairwise_from_observation(t.comparison, far[0], far[1])?,
                        pairwise_from_statement(t.comparison, p, t.statement_first, Source::Statement)?,
                        match &meta {
                            Some(meta) => combine(t.comparison, t.statement_first, m[0], m[1], m[2], meta)?,
                            None => pairwise_from_statement(t.comparison, p, t.statement_first, Source::Combined)?,
                        },
                    ])
                })
                .collect::<Result<_>>()?
        };
        for (&i, [o, s, c]) in fold.test.iter().zip(brain) {
            let t = &trials[i];
            let button = pairwise_from_statement(
                t.comparison,
                if t.pressed { 1.0 } else { 0.0 },
                t.statement_first,
                Source::Button,
            )?;
            for (source, v) in [(Source::Observation, o), (Source::Statement, s), (Source::Combined, c), (Source::Button, button)] {
                verdicts.get_mut(&source).expect("all sources present").push(v);
            }
        }
    }
    Ok(Decoded {
        participant: session.participant().to_string(),
        verdicts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRankings {
    pub task: u32,
    pub rankings: BTreeMap<RankMethod, Ranking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOutput {
    pub participant: String,
    pub rankings: BTreeMap<Source, Vec<TaskRankings>>,
    pub report: MetricReport,
}

fn rank_task(
    method: RankMethod,
    cs: &ComparisonSet,
    phi: &BTreeMap<TrajId, FeatureVector>,
    cfg: &RankConfig,
) -> Result<Ranking> {
    match method {
        RankMethod::Borda => borda(cs),
        RankMethod::BordaConf => borda_conf(cs),
        RankMethod::Feature => {
            let m = fit_feature_rank(cs, phi, cfg.feature_reg)?;
            score_feature_rank(&m, phi, cs.universe(), method)
        }
        RankMethod::Tpp => {
            let m = tpp_baseline(cs, phi, cfg.tpp_passes)?;
            score_feature_rank(&m, phi, cs.universe(), method)
        }
    }
}

/// Rank every task from each source's verdicts and score the rankings.
pub fn rank_session(session: &Session, decoded: &Decoded, cfg: &RankConfig) -> Result<RankOutput> {
    if cfg.methods.is_empty() {
        return Err(Error::Parameter("no ranking methods selected".into()));
    }
    let tasks = session.preference_tasks();
    let phis: Vec<BTreeMap<TrajId, FeatureVector>> = session
        .tasks
        .iter()
        .map(|t| {
            t.candidates
                .iter()
                .map(|c| Ok((c.id(), features(c, &t.scene, &cfg.layout)?)))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let participant = decoded.participant.clone();
    let mut rankings = BTreeMap::new();
    let mut report = MetricReport::default();
    for (&source, verdicts) in &decoded.verdicts {
        let by_id: BTreeMap<CompId, &PairwiseVerdict> = verdicts.iter().map(|v| (v.comparison, v)).collect();
        let mut per_task = Vec::with_capacity(tasks.len());
        let mut metrics: BTreeMap<RankMethod, Vec<_>> = BTreeMap::new();
        for (task, phi) in tasks.iter().zip(&phis) {
            let comparisons = task
                .comparisons()
                .iter()
                .map(|c| {
                    let v = by_id.get(&c.comparison).ok_or_else(|| {
                        Error::Input(format!("no {} verdict for comparison {}", source.name(), c.comparison))
                    })?;
                    Ok(RankedComparison {
                        comparison: c.comparison,
                        pair: c.pair,
                        statement_first: c.statement_first,
                        verdict: **v,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let cs = ComparisonSet::new(comparisons, task.universe().clone())?;
            let mut by_method = BTreeMap::new();
            for &method in &cfg.methods {
                let r = rank_task(method, &cs, phi, cfg)?;
                metrics.entry(method).or_default().push(task_metrics(&participant, &r, task)?);
                by_method.insert(method, r);
            }
            per_task.push(TaskRankings {
                task: task.task(),
                rankings: by_method,
            });
        }
        let n = verdicts.len();
        report.sources.insert(
            source,
            SourceReport {
                comparison_accuracy: comparison_accuracy(verdicts, &tasks)?,
                n_comparisons: n,
                methods: metrics.into_iter().map(|(m, v)| (m, MethodSummary::from_tasks(v))).collect(),
            },
        );
        rankings.insert(source, per_task);
    }
    Ok(RankOutput {
        participant,
        rankings,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_session;

    fn noiseless(n_tasks: usize) -> SynthConfig {
        SynthConfig {
            n_tasks,
            erp_amplitude_uv: 20.0,
            noise_sigma_uv: 1.0,
            obs_cov_shift: 12.0,
            obs_lapse_prob: 0.0,
            button_flip_prob: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn verdicts_cover_every_comparison() {
        let session = gen_session(&noiseless(4)).unwrap();
        let decoded = decode_session(&session, &DecodeConfig::default()).unwrap();
        for v in decoded.verdicts.values() {
            assert_eq!(v.len(), 36);
        }
        let acc = decoded.accuracies(&session).unwrap();
        assert_eq!(acc[&Source::Button], 1.0);
        assert!(acc[&Source::Statement] >= 0.95, "{acc:?}");
    }

    #[test]
    fn strict_past_first_fold_is_uninformative() {
        let session = gen_session(&noiseless(4)).unwrap();
        let cfg = DecodeConfig {
            strict_past_only: true,
            ..DecodeConfig::default()
        };
        let decoded = decode_session(&session, &cfg).unwrap();
        let first_fold = &decoded.verdicts[&Source::Statement][..8];
        assert!(first_fold.iter().all(|v| v.probability == 0.5));
    }

    #[test]
    fn perfect_verdicts_rank_perfectly() {
        let session = gen_session(&noiseless(3)).unwrap();
        let tasks = session.preference_tasks();
        let verdicts: Vec<PairwiseVerdict> = tasks
            .iter()
            .flat_map(|t| t.comparisons().iter().map(move |c| (t, c)))
            .map(|(t, c)| {
                let nearer = t.nearer_slot(c).unwrap();
                let p = if nearer == c.statement_first { 1.0 } else { 0.0 };
                pairwise_from_statement(c.comparison, p, c.statement_first, Source::Button).unwrap()
            })
            .collect();
        let decoded = Decoded {
            participant: "p".into(),
            verdicts: [(Source::Button, verdicts)].into_iter().collect(),
        };
        let out = rank_session(&session, &decoded, &RankConfig::default()).unwrap();
        let report = &out.report.sources[&Source::Button];
        for method in RankMethod::ALL {
            let m = &report.methods[&method];
            assert_eq!(m.delta_d_target, 0.0, "{method}");
            assert_eq!(m.ndcg_at[&1], 1.0, "{method}");
        }
        let b = &report.methods[&RankMethod::Borda];
        let bc = &report.methods[&RankMethod::BordaConf];
        let orders = |m: RankMethod| -> Vec<Vec<TrajId>> {
            out.rankings[&Source::Button].iter().map(|t| t.rankings[&m].order.clone()).collect()
        };
        assert_eq!(orders(RankMethod::Borda), orders(RankMethod::BordaConf));
        assert_eq!(b.ndcg_at, bc.ndcg_at);
    }

    #[test]
    fn run_config_defaults_and_seed_override() {
        let cfg = RunConfig::from_json(br#"{"seed": 42, "decode": {"folds": 4}}"#).unwrap();
        assert_eq!(cfg.synth.seed, 42);
        assert_eq!(cfg.decode.folds, 4);
        assert_eq!(cfg.rank, RankConfig::default());
        assert!(matches!(RunConfig::from_json(br#"{"bogus": 1}"#), Err(Error::Format(_))));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"1").unwrap();
        write_atomic(&p, b"2").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"2");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
