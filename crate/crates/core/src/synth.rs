//! Synthetic sessions: candidate trajectories around a reference, continuous
//! multichannel recordings with class-conditioned responses, and noisy
//! button presses, all with ground truth.
//!
//! Randomness comes from ChaCha8 seeded with `SynthConfig::seed`, split into
//! substreams with `set_stream`: stream 0 holds the session design, stream
//! `(t + 1) << 32` task `t`'s geometry, and `((t + 1) << 32) | (m + 1)` the
//! signals of its `m`-th comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::eval::{PreferenceTask, TaskComparison};
use crate::pipeline::write_atomic;
use crate::signal::{read_recording, write_recording};
use crate::signal::{ContinuousRecording, Event, EventKind, SignalWindow, Slot, WindowKind, WindowLabel, STATEMENT_RATE};
use crate::trajectory::{distance, label_by_median, DistanceClass, Scene, SceneObject, Trajectory, Waypoint};
use crate::{CompId, Error, Result, TrajId};

/// Electrode labels, frontocentral sites first so small montages keep the
/// statement response.
pub const CHANNEL_NAMES: [&str; 32] = [
    "FCz", "Fz", "Cz", "FC1", "FC2", "F3", "F4", "C3", "C4", "Pz", "P3", "P4", "O1", "O2", "Oz", "CP1", "CP2", "F7",
    "F8", "T7", "T8", "FC5", "FC6", "CP5", "CP6", "P7", "P8", "PO9", "PO10", "Fp1", "Fp2", "AFz",
];

const WAYPOINTS: usize = 9;
const JOINTS: usize = 7;
const SCENE_OBJECTS: usize = 4;
const VIDEO_SECONDS: (f64, f64) = (3.0, 5.0);
const GAP_SECONDS: f64 = 1.0;
const PAD_SECONDS: f64 = 2.0;
const RESPONSE_SECONDS: f64 = 3.0;
const PRESS_LATENCY: (f64, f64) = (2.0, 2.6);
const VISUAL_AMPLITUDE_UV: f64 = 4.0;
const ERP_LATENCY: f64 = 0.4;
/// Share of the background noise variance that is white; the rest is smoothed.
const WHITE_SHARE: f64 = 0.2;

const FORMAT_TAG: &str = "trajpref-session-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub participant: String,
    pub n_tasks: usize,
    pub comparisons_per_task: usize,
    pub candidates_per_task: usize,
    pub n_channels: usize,
    /// Recording rate in Hz; must be an integer multiple of `statement_rate`.
    pub raw_rate: f64,
    pub statement_rate: f64,
    pub erp_amplitude_uv: f64,
    pub noise_sigma_uv: f64,
    /// Log-variance added along the observation direction for the farthest candidate.
    pub obs_cov_shift: f64,
    /// Chance that an observation window reflects inattention: its shift is drawn for a random
    /// farness instead of the shown candidate's.
    pub obs_lapse_prob: f64,
    pub button_flip_prob: f64,
    pub perturbation_scale_m: f64,
    /// Per-task multiplier on both response strengths; missing entries are 1.
    pub task_separability: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            participant: "p01".into(),
            n_tasks: 16,
            comparisons_per_task: 9,
            candidates_per_task: 6,
            n_channels: 16,
            raw_rate: 200.0,
            statement_rate: STATEMENT_RATE,
            erp_amplitude_uv: 6.5,
            noise_sigma_uv: 10.0,
            obs_cov_shift: 0.6,
            obs_lapse_prob: 0.5,
            button_flip_prob: 0.075,
            perturbation_scale_m: 0.1,
            task_separability: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.n_tasks == 0 {
            return bad("n_tasks must be positive".into());
        }
        if self.n_channels < 2 {
            return bad(format!("need at least 2 channels, got {}", self.n_channels));
        }
        if self.candidates_per_task < 2 {
            return bad("need at least 2 candidates per task".into());
        }
        let n = self.candidates_per_task;
        if self.comparisons_per_task < n - 1 || self.comparisons_per_task > n * (n - 1) / 2 {
            return bad(format!(
                "{} comparisons cannot connect {n} candidates without repeats (need {}..={})",
                self.comparisons_per_task,
                n - 1,
                n * (n - 1) / 2
            ));
        }
        if self.statement_rate != STATEMENT_RATE {
            return bad(format!("statement rate must be {STATEMENT_RATE} Hz"));
        }
        let ratio = self.raw_rate / self.statement_rate;
        if !(self.raw_rate > 0.0) || ratio < 1.0 || ratio.fract() != 0.0 {
            return bad(format!("raw rate {} is not a multiple of the statement rate", self.raw_rate));
        }
        if self.raw_rate < 100.0 {
            return bad("raw rate must be at least 100 Hz for the 0.5-40 Hz band".into());
        }
        for (name, v) in [
            ("erp_amplitude_uv", self.erp_amplitude_uv),
            ("noise_sigma_uv", self.noise_sigma_uv),
            ("obs_cov_shift", self.obs_cov_shift),
            ("perturbation_scale_m", self.perturbation_scale_m),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.obs_lapse_prob) {
            return bad(format!("obs_lapse_prob must lie in [0, 1], got {}", self.obs_lapse_prob));
        }
        if !(0.0..=0.5).contains(&self.button_flip_prob) {
            return bad(format!("button_flip_prob must lie in [0, 0.5], got {}", self.button_flip_prob));
        }
        if self.task_separability.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("task separability multipliers must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn separability(&self, task: usize) -> f64 {
        self.task_separability.get(task).copied().unwrap_or(1.0)
    }

    pub fn channel_names(&self) -> Vec<String> {
        (0..self.n_channels)
            .map(|k| CHANNEL_NAMES.get(k).map_or_else(|| format!("E{k}"), |s| s.to_string()))
            .collect()
    }

    pub fn n_comparisons(&self) -> usize {
        self.n_tasks * self.comparisons_per_task
    }
}

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn task_stream(task: usize) -> u64 {
    (task as u64 + 1) << 32
}

/// Joint angles are an isometric image of the end-effector position, so
/// joint speed equals end-effector speed.
fn joints_for(p: [f64; 3]) -> Vec<f64> {
    const OFFSET: [f64; JOINTS] = [0.0, 0.3, 0.0, -1.2, 0.0, 1.5, 0.7];
    let s3 = 3f64.sqrt();
    let map: [[f64; 3]; JOINTS] = [
        [0.5, 0.5, 0.0],
        [0.5, -0.5, 0.0],
        [0.5, 0.5, 0.0],
        [0.5, -0.5, 0.0],
        [0.0, 0.0, 1.0 / s3],
        [0.0, 0.0, 1.0 / s3],
        [0.0, 0.0, 1.0 / s3],
    ];
    (0..JOINTS)
        .map(|k| OFFSET[k] + map[k][0] * p[0] + map[k][1] * p[1] + map[k][2] * p[2])
        .collect()
}

fn min_jerk(tau: f64) -> f64 {
    tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau)
}

/// Straight-line reference with a minimum-jerk timing profile.
pub fn reference_trajectory(id: TrajId, env_id: &str, start: [f64; 3], end: [f64; 3], duration: f64) -> Result<Trajectory> {
    let waypoints = (0..WAYPOINTS)
        .map(|k| {
            let tau = k as f64 / (WAYPOINTS - 1) as f64;
            let s = min_jerk(tau);
            let p = [0, 1, 2].map(|i| start[i] + s * (end[i] - start[i]));
            Waypoint::at(tau * duration, p, joints_for(p))
        })
        .collect();
    Trajectory::new(id, env_id, waypoints)
}

/// Lateral bump shape: zero at both ends, nonnegative inside.
fn bump(tau: f64, skew: f64) -> f64 {
    (PI * tau).sin() * (1.0 + skew * (2.0 * PI * tau).sin())
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn gaussian3(rng: &mut impl Rng) -> [f64; 3] {
    [(); 3].map(|_| rng.sample(StandardNormal))
}

/// Perturbation family shared by a task's candidates.
struct Family {
    lateral: [f64; 3],
    skew: f64,
}

fn family(reference: &Trajectory, rng: &mut impl Rng) -> Family {
    let wps = reference.waypoints();
    let (p0, p1) = (wps[0].position, wps[wps.len() - 1].position);
    let axis = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let lateral = loop {
        let r = gaussian3(rng);
        let v = if dot(axis, axis) > 0.0 {
            let a = unit(axis);
            let proj = dot(r, a);
            [r[0] - proj * a[0], r[1] - proj * a[1], r[2] - proj * a[2]]
        } else {
            r
        };
        if dot(v, v) > 1e-6 {
            break unit(v);
        }
    };
    Family {
        lateral,
        skew: rng.random_range(-0.3..0.3),
    }
}

fn perturbed(reference: &Trajectory, fam: &Family, id: TrajId, amplitude: f64, duration: f64) -> Result<Trajectory> {
    let wps = reference.waypoints();
    let last = wps.len() - 1;
    let t_end = reference.duration();
    let t0 = wps[0].time;
    let waypoints = wps
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let tau = (w.time - t0) / t_end;
            let g = if k == 0 || k == last { 0.0 } else { amplitude * bump(tau, fam.skew) };
            let p = [0, 1, 2].map(|i| w.position[i] + g * fam.lateral[i]);
            let joints = if g == 0.0 { w.joints.clone() } else { joints_for(p) };
            Waypoint {
                time: tau * duration,
                joints,
                position: p,
                orientation: w.orientation,
            }
        })
        .collect();
    Trajectory::new(id, reference.env_id(), waypoints)
}

/// Stratified, jittered amplitudes in `(0, scale)`, assigned to ids in random order.
fn candidate_set(
    cfg: &SynthConfig,
    reference: &Trajectory,
    n: usize,
    first_id: TrajId,
    rng: &mut impl Rng,
) -> Result<(Vec<Trajectory>, Family)> {
    let fam = family(reference, rng);
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(rng);
    let trajectories = strata
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let amplitude = cfg.perturbation_scale_m * (s as f64 + rng.random_range(0.2..0.8)) / n as f64;
            let duration = rng.random_range(VIDEO_SECONDS.0..VIDEO_SECONDS.1);
            perturbed(reference, &fam, first_id + k as TrajId, amplitude, duration)
        })
        .collect::<Result<_>>()?;
    Ok((trajectories, fam))
}

/// `n` candidates sharing the reference's endpoints, displaced laterally by
/// a common smooth bump at graded amplitudes up to the perturbation scale.
pub fn gen_trajectories(cfg: &SynthConfig, reference: &Trajectory, n: usize) -> Result<Vec<Trajectory>> {
    if n < 2 {
        return Err(Error::Parameter("need at least 2 candidates".into()));
    }
    let mut rng = substream(cfg.seed, (1 << 63) | reference.id() as u64);
    Ok(candidate_set(cfg, reference, n, reference.id() + 1, &mut rng)?.0)
}

/// Objects beside the path: those on the bump side lie beyond the largest
/// displacement, the others on the opposite side, so every clearance is
/// monotone in the perturbation amplitude.
fn scene_for(cfg: &SynthConfig, reference: &Trajectory, fam: &Family, rng: &mut impl Rng) -> Result<Scene> {
    let wps = reference.waypoints();
    let (p0, p1) = (wps[0].position, wps[wps.len() - 1].position);
    let up = {
        let axis = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
        let c = cross(axis, fam.lateral);
        if dot(c, c) > 0.0 {
            unit(c)
        } else {
            [0.0, 0.0, 1.0]
        }
    };
    let reach = cfg.perturbation_scale_m * 1.3;
    let objects = (0..SCENE_OBJECTS)
        .map(|k| {
            let s = min_jerk((k as f64 + 1.0) / (SCENE_OBJECTS as f64 + 1.0));
            let radius = rng.random_range(0.03..0.06);
            let side = if k % 2 == 0 { -1.0 } else { 1.0 };
            let offset = if side < 0.0 {
                rng.random_range(0.1..0.3)
            } else {
                reach + radius + rng.random_range(0.05..0.2)
            };
            let lift = rng.random_range(-0.05..0.05);
            let position = [0, 1, 2].map(|i| p0[i] + s * (p1[i] - p0[i]) + side * offset * fam.lateral[i] + lift * up[i]);
            SceneObject {
                label: format!("object{k}"),
                position,
                radius,
            }
        })
        .collect();
    Scene::new(reference.env_id(), objects, p1)
}

/// Session-wide randomness independent of any single task.
struct Design {
    mixing: DMatrix<f64>,
    obs_direction: DVector<f64>,
    statement_correct: Vec<bool>,
    statement_first: Vec<Slot>,
}

fn balanced(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut v: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    v.shuffle(rng);
    v
}

fn design(cfg: &SynthConfig) -> Design {
    let mut rng = substream(cfg.seed, 0);
    let n = cfg.n_channels;
    let mut mixing = DMatrix::from_fn(n, n, |r, c| {
        let e: f64 = rng.sample(StandardNormal);
        f64::from(u8::from(r == c)) + 0.5 * e / (n as f64).sqrt()
    });
    for mut row in mixing.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    let obs_direction = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let total = cfg.n_comparisons();
    let statement_correct = balanced(total, &mut rng);
    let statement_first = balanced(total, &mut rng)
        .into_iter()
        .map(|b| if b { Slot::First } else { Slot::Second })
        .collect();
    Design {
        mixing,
        obs_direction,
        statement_correct,
        statement_first,
    }
}

/// Unit-variance background: white plus moving-average-smoothed noise,
/// mixed across channels.
fn background(rng: &mut impl Rng, mixing: &DMatrix<f64>, len: usize, rate: f64) -> DMatrix<f64> {
    let n = mixing.nrows();
    let white = DMatrix::from_fn(n, len, |_, _| rng.sample::<f64, _>(StandardNormal));
    let smooth = smoothed(rng, n, len, rate);
    let e = white * WHITE_SHARE.sqrt() + smooth * (1.0 - WHITE_SHARE).sqrt();
    mixing * e
}

/// Independent unit-variance rows smoothed over `rate / 20` samples.
fn smoothed(rng: &mut impl Rng, rows: usize, len: usize, rate: f64) -> DMatrix<f64> {
    let width = ((rate / 20.0).round() as usize).max(1);
    let raw = DMatrix::from_fn(rows, len + width - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scale = 1.0 / (width as f64).sqrt();
    DMatrix::from_fn(rows, len, |r, c| raw.row(r).columns(c, width).sum() * scale)
}

fn erp_weight(name: &str) -> f64 {
    match name {
        "FCz" | "FC1" | "FC2" => 1.0,
        "Cz" => 0.9,
        "Fz" => 0.8,
        "C3" | "C4" => 0.6,
        "F3" | "F4" => 0.5,
        "CP1" | "CP2" => 0.4,
        "Pz" => 0.3,
        _ => 0.15,
    }
}

fn visual_weight(name: &str) -> f64 {
    match name {
        "O1" | "O2" | "Oz" | "PO9" | "PO10" => 1.0,
        "P3" | "P4" | "P7" | "P8" | "Pz" => 0.7,
        _ => 0.3,
    }
}

fn gauss(t: f64, mu: f64, width: f64) -> f64 {
    (-((t - mu) / width).powi(2)).exp()
}

/// Visual response common to both statement classes, per unit channel weight.
fn visual_template(t: f64) -> f64 {
    VISUAL_AMPLITUDE_UV * (gauss(t, 0.1, 0.025) - 0.8 * gauss(t, 0.17, 0.04))
}

/// Difference-of-Gaussians bump with unit peak at 400 ms.
pub fn erp_template(t: f64) -> f64 {
    (gauss(t, ERP_LATENCY, 0.05) - 0.3 * gauss(t, ERP_LATENCY, 0.15)) / 0.7
}

/// Noise-free statement response at `t` seconds after onset on `channel`.
fn statement_response(cfg: &SynthConfig, channel: &str, t: f64, erroneous: bool, separability: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    let mut v = visual_weight(channel) * visual_template(t);
    if erroneous {
        v += cfg.erp_amplitude_uv * separability * erp_weight(channel) * erp_template(t);
    }
    v
}

/// Standard deviation added along the observation direction for a
/// candidate at relative farness `s ∈ [0, 1]`.
fn observation_gain(cfg: &SynthConfig, s: f64, separability: f64) -> f64 {
    cfg.noise_sigma_uv * ((cfg.obs_cov_shift * separability * s).exp() - 1.0).sqrt()
}

/// One statement window at the statement rate. `correct` selects the class.
pub fn gen_statement_signal(cfg: &SynthConfig, correct: bool, rng: &mut impl Rng) -> Result<SignalWindow> {
    cfg.validate()?;
    let d = design(cfg);
    let rate = cfg.statement_rate;
    let len = rate as usize;
    let noise = background(rng, &d.mixing, len, rate) * cfg.noise_sigma_uv;
    let names = cfg.channel_names();
    let data = DMatrix::from_fn(cfg.n_channels, len, |r, c| {
        noise[(r, c)] + statement_response(cfg, &names[r], c as f64 / rate, !correct, 1.0)
    });
    let label = if correct { WindowLabel::Correct } else { WindowLabel::Erroneous };
    Ok(SignalWindow::new(WindowKind::Statement, data, rate, 0, None)?.with_label(label))
}

/// One two-second observation window at the raw rate.
pub fn gen_observation_signal(cfg: &SynthConfig, cls: DistanceClass, rng: &mut impl Rng) -> Result<SignalWindow> {
    let s = match cls {
        DistanceClass::Near => 0.0,
        DistanceClass::Far => 1.0,
    };
    gen_observation_graded(cfg, s, rng)
}

/// Observation window for relative farness `s ∈ [0, 1]`.
pub fn gen_observation_graded(cfg: &SynthConfig, s: f64, rng: &mut impl Rng) -> Result<SignalWindow> {
    cfg.validate()?;
    let d = design(cfg);
    let rate = cfg.raw_rate;
    let len = (2.0 * rate) as usize;
    let mut data = background(rng, &d.mixing, len, rate) * cfg.noise_sigma_uv;
    let z = smoothed(rng, 1, len, rate);
    data += &d.obs_direction * z * observation_gain(cfg, s, 1.0);
    let label = if s > 0.5 { WindowLabel::Far } else { WindowLabel::Near };
    Ok(SignalWindow::new(WindowKind::Observation, data, rate, 0, Some(Slot::First))?.with_label(label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ButtonResponse {
    pub pressed: bool,
    pub flipped: bool,
}

/// The participant presses iff they judge the statement correct, which
/// matches the truth with probability `1 − button_flip_prob`.
pub fn gen_button(cfg: &SynthConfig, true_correct: bool, rng: &mut impl Rng) -> ButtonResponse {
    let flipped = rng.random_bool(cfg.button_flip_prob);
    ButtonResponse {
        pressed: true_correct != flipped,
        flipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTruth {
    pub comparison: CompId,
    pub task: u32,
    pub nearer: Slot,
    pub statement_correct: bool,
    pub button: ButtonResponse,
}

impl ComparisonTruth {
    /// The judgment the participant formed, which also drives the brain response.
    pub fn perceived_correct(&self) -> bool {
        self.button.pressed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTruth {
    pub comparison: CompId,
    pub kind: WindowKind,
    pub slot: Option<Slot>,
    pub label: WindowLabel,
    /// Relative farness driving an observation window's covariance shift.
    pub farness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub comparisons: Vec<ComparisonTruth>,
    pub windows: Vec<WindowTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub task: PreferenceTask,
    pub scene: Scene,
    pub target: Trajectory,
    pub candidates: Vec<Trajectory>,
}

impl SynthTask {
    pub fn candidate(&self, id: TrajId) -> Option<&Trajectory> {
        self.candidates.iter().find(|c| c.id() == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub config: SynthConfig,
    pub tasks: Vec<SynthTask>,
    /// One recording per task, in task order.
    pub recordings: Vec<ContinuousRecording>,
    pub truth: GroundTruth,
}

impl Session {
    pub fn participant(&self) -> &str {
        &self.config.participant
    }

    pub fn preference_tasks(&self) -> Vec<PreferenceTask> {
        self.tasks.iter().map(|t| t.task.clone()).collect()
    }
}

/// Every candidate meets the nearest one; the remaining comparisons are
/// spread over other pairs keeping degrees balanced.
fn schedule(best: usize, n: usize, m: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n).filter(|&k| k != best).map(|k| (best, k)).collect();
    let mut degree = vec![0usize; n];
    let mut rest: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .filter(|&(a, b)| a != best && b != best)
        .collect();
    rest.shuffle(rng);
    while pairs.len() < m {
        let (pos, _) = rest
            .iter()
            .enumerate()
            .min_by_key(|(_, &(a, b))| degree[a] + degree[b])
            .expect("validated comparison count");
        let (a, b) = rest.remove(pos);
        degree[a] += 1;
        degree[b] += 1;
        pairs.push((a, b));
    }
    pairs.shuffle(rng);
    pairs
}

fn seconds(s: f64, rate: f64) -> usize {
    (s * rate).round() as usize
}

struct TaskSignals<'a> {
    cfg: &'a SynthConfig,
    design: &'a Design,
    names: Vec<String>,
    separability: f64,
}

impl TaskSignals<'_> {
    /// One comparison's stretch of recording, starting at local sample 0.
    fn comparison_segment(
        &self,
        rng: &mut impl Rng,
        c: &TaskComparison,
        durations: [f64; 2],
        farness: [f64; 2],
        erroneous: bool,
        pressed: bool,
        offset: usize,
        events: &mut Vec<Event>,
    ) -> DMatrix<f64> {
        let rate = self.cfg.raw_rate;
        let gap = seconds(GAP_SECONDS, rate);
        let video = durations.map(|d| seconds(d, rate));
        let response = seconds(RESPONSE_SECONDS, rate);
        let len = gap + video[0] + gap + video[1] + gap + response + gap;
        let latency = rng.random_range(PRESS_LATENCY.0..PRESS_LATENCY.1);
        let mut data = background(rng, &self.design.mixing, len, rate) * self.cfg.noise_sigma_uv;

        let mut cursor = gap;
        for (k, slot) in [Slot::First, Slot::Second].into_iter().enumerate() {
            let z = smoothed(rng, 1, video[k], rate);
            let gain = observation_gain(self.cfg, farness[k], self.separability);
            let mut block = data.columns_mut(cursor, video[k]);
            block += &self.design.obs_direction * z * gain;
            let kind_at = |kind, sample| Event {
                sample: offset + sample,
                kind,
                comparison: c.comparison,
                slot: Some(slot),
            };
            events.push(kind_at(EventKind::TrajectoryStart, cursor));
            events.push(kind_at(EventKind::TrajectoryEnd, cursor + video[k]));
            cursor += video[k] + gap;
        }
        let onset = cursor;
        events.push(Event {
            sample: offset + onset,
            kind: EventKind::StatementOnset,
            comparison: c.comparison,
            slot: None,
        });
        for s in 0..=(rate as usize) {
            let t = s as f64 / rate;
            for (r, name) in self.names.iter().enumerate() {
                data[(r, onset + s)] += statement_response(self.cfg, name, t, erroneous, self.separability);
            }
        }
        if pressed {
            events.push(Event {
                sample: offset + onset + seconds(latency, rate),
                kind: EventKind::ButtonPress,
                comparison: c.comparison,
                slot: None,
            });
        }
        data
    }
}

/// Generate a full session: tasks, one recording per task, and ground truth.
pub fn gen_session(cfg: &SynthConfig) -> Result<Session> {
    cfg.validate()?;
    let d = design(cfg);
    let n = cfg.candidates_per_task;
    let m = cfg.comparisons_per_task;
    let rate = cfg.raw_rate;
    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    let mut recordings = Vec::with_capacity(cfg.n_tasks);
    let mut truth = GroundTruth::default();

    for t in 0..cfg.n_tasks {
        let mut rng = substream(cfg.seed, task_stream(t));
        let base = t as TrajId * 1000;
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.05..0.05);
        let start = [0.45 + jitter(&mut rng), -0.35 + jitter(&mut rng), 0.25 + jitter(&mut rng)];
        let end = [0.45 + jitter(&mut rng), 0.35 + jitter(&mut rng), 0.25 + jitter(&mut rng)];
        let duration = rng.random_range(VIDEO_SECONDS.0..VIDEO_SECONDS.1);
        let env_id = format!("env{}", t / 4);
        let target = reference_trajectory(base, &env_id, start, end, duration)?;
        let (candidates, fam) = candidate_set(cfg, &target, n, base + 1, &mut rng)?;
        let scene = scene_for(cfg, &target, &fam, &mut rng)?;

        let d_target: BTreeMap<TrajId, f64> = candidates
            .iter()
            .map(|c| Ok((c.id(), distance(c, &target)?)))
            .collect::<Result<_>>()?;
        let d_max = d_target.values().copied().fold(0.0, f64::max);
        let best = (0..n)
            .min_by(|&a, &b| d_target[&candidates[a].id()].total_cmp(&d_target[&candidates[b].id()]))
            .expect("at least two candidates");
        let classes = label_by_median(&d_target.iter().map(|(&k, &v)| (k, v)).collect::<Vec<_>>())?;
        let farness = |id: TrajId| if d_max > 0.0 { d_target[&id] / d_max } else { 0.0 };

        let mut comparisons = Vec::with_capacity(m);
        for (k, (a, b)) in schedule(best, n, m, &mut rng).into_iter().enumerate() {
            let global = t * m + k;
            let (ia, ib) = (candidates[a].id(), candidates[b].id());
            let near_is_a = d_target[&ia] <= d_target[&ib];
            let (near, far) = if near_is_a { (ia, ib) } else { (ib, ia) };
            let statement_first = d.statement_first[global];
            let correct = d.statement_correct[global];
            let near_slot = if correct { statement_first } else { statement_first.other() };
            let mut pair = [0; 2];
            pair[near_slot.index()] = near;
            pair[near_slot.other().index()] = far;
            comparisons.push(TaskComparison {
                comparison: global as CompId,
                pair,
                statement_first,
            });
        }

        let task = PreferenceTask::new(
            t as u32,
            target.id(),
            candidates.iter().map(Trajectory::id).collect(),
            comparisons.clone(),
            d_target.clone(),
        )?;

        let signals = TaskSignals {
            cfg,
            design: &d,
            names: cfg.channel_names(),
            separability: cfg.separability(t),
        };
        let pad = seconds(PAD_SECONDS, rate);
        let mut pad_rng = substream(cfg.seed, task_stream(t) | 0xFFFF_FFFF);
        let mut blocks = vec![background(&mut pad_rng, &d.mixing, pad, rate) * cfg.noise_sigma_uv];
        let mut events = Vec::new();
        let mut offset = pad;
        for (k, c) in comparisons.iter().enumerate() {
            let mut crng = substream(cfg.seed, task_stream(t) | (k as u64 + 1));
            let nearer = task.nearer_slot(c).unwrap_or(Slot::First);
            let statement_correct = nearer == c.statement_first;
            let button = gen_button(cfg, statement_correct, &mut crng);
            let durations = c.pair.map(|id| {
                candidates.iter().find(|x| x.id() == id).expect("paired candidate").duration()
            });
            // a lapsed window carries the shift of an arbitrary candidate
            let far = c.pair.map(|id| {
                if crng.random::<f64>() < cfg.obs_lapse_prob { crng.random() } else { farness(id) }
            });
            let block = signals.comparison_segment(
                &mut crng,
                c,
                durations,
                far,
                !button.pressed,
                button.pressed,
                offset,
                &mut events,
            );
            offset += block.ncols();
            blocks.push(block);

            truth.comparisons.push(ComparisonTruth {
                comparison: c.comparison,
                task: t as u32,
                nearer,
                statement_correct,
                button,
            });
            for slot in [Slot::First, Slot::Second] {
                let id = c.pair[slot.index()];
                truth.windows.push(WindowTruth {
                    comparison: c.comparison,
                    kind: WindowKind::Observation,
                    slot: Some(slot),
                    label: match classes[&id] {
                        DistanceClass::Near => WindowLabel::Near,
                        DistanceClass::Far => WindowLabel::Far,
                    },
                    farness: Some(far[slot.index()]),
                });
            }
            truth.windows.push(WindowTruth {
                comparison: c.comparison,
                kind: WindowKind::Statement,
                slot: None,
                label: if button.pressed { WindowLabel::Correct } else { WindowLabel::Erroneous },
                farness: None,
            });
        }
        blocks.push(background(&mut pad_rng, &d.mixing, pad, rate) * cfg.noise_sigma_uv);

        let total: usize = blocks.iter().map(DMatrix::ncols).sum();
        let mut data = DMatrix::zeros(cfg.n_channels, total);
        let mut at = 0;
        for b in &blocks {
            data.columns_mut(at, b.ncols()).copy_from(b);
            at += b.ncols();
        }
        // stored as f32 on disk; rounding here keeps the round trip exact
        data.apply(|v| *v = *v as f32 as f64);
        recordings.push(ContinuousRecording::new(cfg.channel_names(), data, rate, events)?);
        tasks.push(SynthTask {
            task,
            scene,
            target,
            candidates,
        });
    }
    Ok(Session {
        config: cfg.clone(),
        tasks,
        recordings,
        truth,
    })
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    format: String,
    participant: String,
    config: SynthConfig,
    tasks: Vec<PreferenceTask>,
    truth: GroundTruth,
    recordings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct GeometryFile {
    task: u32,
    scene: Scene,
    target: Trajectory,
    candidates: Vec<Trajectory>,
}

pub const SESSION_FILE: &str = "session.json";
pub const TRAJECTORY_FILE: &str = "trajectories.json";
pub const RECORDING_DIR: &str = "recordings";

/// Write the dataset bundle into `dir` and return the paths written,
/// relative to `dir`.
pub fn write_bundle(session: &Session, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join(RECORDING_DIR))?;
    let mut written = Vec::new();
    let mut names = Vec::new();
    for (t, rec) in session.recordings.iter().enumerate() {
        let rel = PathBuf::from(RECORDING_DIR).join(format!("task_{t:02}.tprec"));
        let mut buf = Vec::new();
        write_recording(rec, &mut buf)?;
        write_atomic(&dir.join(&rel), &buf)?;
        names.push(rel.to_string_lossy().replace('\\', "/"));
        written.push(rel);
    }
    let geometry: Vec<GeometryFile> = session
        .tasks
        .iter()
        .map(|t| GeometryFile {
            task: t.task.task(),
            scene: t.scene.clone(),
            target: t.target.clone(),
            candidates: t.candidates.clone(),
        })
        .collect();
    write_atomic(&dir.join(TRAJECTORY_FILE), &serde_json::to_vec_pretty(&geometry)?)?;
    written.push(PathBuf::from(TRAJECTORY_FILE));
    let file = SessionFile {
        format: FORMAT_TAG.into(),
        participant: session.participant().to_string(),
        config: session.config.clone(),
        tasks: session.preference_tasks(),
        truth: session.truth.clone(),
        recordings: names,
    };
    write_atomic(&dir.join(SESSION_FILE), &serde_json::to_vec_pretty(&file)?)?;
    written.push(PathBuf::from(SESSION_FILE));
    Ok(written)
}

fn format_err(what: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(io),
        other => Error::Format(format!("{what}: {other}")),
    }
}

/// Load a bundle written by [`write_bundle`]. Schema problems are format errors.
pub fn read_bundle(dir: &Path) -> Result<Session> {
    let file: SessionFile = serde_json::from_slice(&fs::read(dir.join(SESSION_FILE))?).map_err(Error::from).map_err(format_err(SESSION_FILE))?;
    if file.format != FORMAT_TAG {
        return Err(Error::Format(format!("unsupported dataset format {:?}", file.format)));
    }
    let geometry: Vec<GeometryFile> = serde_json::from_slice(&fs::read(dir.join(TRAJECTORY_FILE))?)
        .map_err(Error::from)
        .map_err(format_err(TRAJECTORY_FILE))?;
    if geometry.len() != file.tasks.len() || file.recordings.len() != file.tasks.len() {
        return Err(Error::Format("task, trajectory and recording counts disagree".into()));
    }
    let mut tasks = Vec::with_capacity(file.tasks.len());
    for (task, g) in file.tasks.into_iter().zip(geometry) {
        if g.task != task.task() {
            return Err(Error::Format(format!("trajectory entry {} does not match task {}", g.task, task.task())));
        }
        let ids: BTreeSet<TrajId> = g.candidates.iter().map(Trajectory::id).collect();
        if &ids != task.universe() {
            return Err(Error::Format(format!("task {}: candidate ids disagree with the universe", task.task())));
        }
        tasks.push(SynthTask {
            task,
            scene: g.scene,
            target: g.target,
            candidates: g.candidates,
        });
    }
    let recordings = file
        .recordings
        .iter()
        .map(|rel| {
            let bytes = fs::read(dir.join(rel))?;
            read_recording(bytes.as_slice()).map_err(format_err(rel))
        })
        .collect::<Result<_>>()?;
    let mut config = file.config;
    config.participant = file.participant;
    Ok(Session {
        config,
        tasks,
        recordings,
        truth: file.truth,
    })
}
