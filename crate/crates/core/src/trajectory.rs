//! Trajectories, spline interpolation, the integrated trajectory distance,
//! median labeling and the geometric feature map.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, TrajId};

/// Number of nodes of the composite Simpson rule used by [`distance`].
pub const QUADRATURE_NODES: usize = 201;

/// Quaternion norms must be within this of 1.
const QUAT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds.
    pub time: f64,
    /// Joint angles in radians.
    pub joints: Vec<f64>,
    /// End-effector position in meters.
    pub position: [f64; 3],
    /// End-effector orientation as a unit quaternion `[w, x, y, z]`.
    pub orientation: [f64; 4],
}

impl Waypoint {
    pub fn at(time: f64, position: [f64; 3], joints: Vec<f64>) -> Self {
        Self {
            time,
            joints,
            position,
            orientation: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct Trajectory {
    id: TrajId,
    env_id: String,
    waypoints: Vec<Waypoint>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    id: TrajId,
    env_id: String,
    waypoints: Vec<Waypoint>,
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = Error;
    fn try_from(r: TrajectoryRepr) -> Result<Self> {
        Trajectory::new(r.id, r.env_id, r.waypoints)
    }
}

impl From<Trajectory> for TrajectoryRepr {
    fn from(t: Trajectory) -> Self {
        TrajectoryRepr {
            id: t.id,
            env_id: t.env_id,
            waypoints: t.waypoints,
        }
    }
}

impl Trajectory {
    pub fn new(id: TrajId, env_id: impl Into<String>, waypoints: Vec<Waypoint>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Input(format!(
                "trajectory {id} needs at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        let n_joints = waypoints[0].joints.len();
        for (k, w) in waypoints.iter().enumerate() {
            let finite = w.time.is_finite()
                && w.position.iter().all(|v| v.is_finite())
                && w.joints.iter().all(|v| v.is_finite())
                && w.orientation.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Input(format!("trajectory {id}: waypoint {k} is not finite")));
            }
            if w.joints.len() != n_joints {
                return Err(Error::Input(format!(
                    "trajectory {id}: waypoint {k} has {} joints, expected {n_joints}",
                    w.joints.len()
                )));
            }
            let qn = w.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > QUAT_TOLERANCE {
                return Err(Error::Input(format!(
                    "trajectory {id}: waypoint {k} quaternion norm {qn}"
                )));
            }
        }
        if waypoints.windows(2).any(|p| !(p[1].time > p[0].time)) {
            return Err(Error::Input(format!(
                "trajectory {id}: waypoint times must be strictly increasing"
            )));
        }
        Ok(Self {
            id,
            env_id: env_id.into(),
            waypoints,
        })
    }

    pub fn id(&self) -> TrajId {
        self.id
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn n_joints(&self) -> usize {
        self.waypoints[0].joints.len()
    }

    /// Execution time in seconds.
    pub fn duration(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].time - self.waypoints[0].time
    }

    /// Same trajectory under a new identifier.
    pub fn with_id(mut self, id: TrajId) -> Self {
        self.id = id;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    pub position: [f64; 3],
    /// Bounding-sphere radius in meters.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneRepr", into = "SceneRepr")]
pub struct Scene {
    env_id: String,
    objects: Vec<SceneObject>,
    goal: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SceneRepr {
    env_id: String,
    objects: Vec<SceneObject>,
    goal_pose: [f64; 3],
}

impl TryFrom<SceneRepr> for Scene {
    type Error = Error;
    fn try_from(r: SceneRepr) -> Result<Self> {
        Scene::new(r.env_id, r.objects, r.goal_pose)
    }
}

impl From<Scene> for SceneRepr {
    fn from(s: Scene) -> Self {
        SceneRepr {
            env_id: s.env_id,
            objects: s.objects,
            goal_pose: s.goal,
        }
    }
}

impl Scene {
    pub fn new(env_id: impl Into<String>, objects: Vec<SceneObject>, goal: [f64; 3]) -> Result<Self> {
        let mut seen = HashSet::new();
        for o in &objects {
            if !seen.insert(o.label.as_str()) {
                return Err(Error::Input(format!("duplicate scene object label {:?}", o.label)));
            }
        }
        Ok(Self {
            env_id: env_id.into(),
            objects,
            goal,
        })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn goal(&self) -> [f64; 3] {
        self.goal
    }
}

/// One-dimensional natural cubic spline on strictly increasing knots.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    second: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::DegenerateInput(
                "spline needs at least two knots and matching values".into(),
            ));
        }
        if knots.windows(2).any(|k| !(k[1] > k[0])) {
            return Err(Error::DegenerateInput("duplicate spline knots".into()));
        }
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let h0 = knots[i + 1] - knots[i];
                let h1 = knots[i + 2] - knots[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0
                    * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
            }
            for i in 1..m {
                let lower = knots[i + 1] - knots[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                second[i + 1] = (rhs[i] - upper[i] * second[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            knots,
            values,
            second,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if t >= self.knots[n - 1] {
            if t == self.knots[n - 1] {
                return self.values[n - 1];
            }
            return self.eval_segment(n - 2, t);
        }
        let seg = match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            p => p - 1,
        };
        self.eval_segment(seg, t)
    }

    fn eval_segment(&self, i: usize, t: f64) -> f64 {
        let h = self.knots[i + 1] - self.knots[i];
        let dt = t - self.knots[i];
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let b = (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0;
        let c = m0 / 2.0;
        let d = (m1 - m0) / (6.0 * h);
        y0 + dt * (b + dt * (c + dt * d))
    }
}

/// Spline curve over normalized time `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Curve {
    position: [NaturalSpline; 3],
    joints: Vec<NaturalSpline>,
}

impl Curve {
    pub fn position(&self, t: f64) -> [f64; 3] {
        [
            self.position[0].eval(t),
            self.position[1].eval(t),
            self.position[2].eval(t),
        ]
    }

    pub fn joints(&self, t: f64) -> Vec<f64> {
        self.joints.iter().map(|s| s.eval(t)).collect()
    }
}

fn normalized_times(traj: &Trajectory) -> Result<Vec<f64>> {
    let w = traj.waypoints();
    let t0 = w[0].time;
    let span = w[w.len() - 1].time - t0;
    let mut knots: Vec<f64> = w.iter().map(|p| (p.time - t0) / span).collect();
    let last = knots.len() - 1;
    knots[0] = 0.0;
    knots[last] = 1.0;
    if knots.windows(2).any(|k| !(k[1] > k[0])) {
        return Err(Error::DegenerateInput(format!(
            "trajectory {} has coinciding normalized times",
            traj.id()
        )));
    }
    Ok(knots)
}

/// Natural cubic spline through the waypoints, with time normalized to `[0, 1]`.
pub fn interpolate(traj: &Trajectory) -> Result<Curve> {
    let knots = normalized_times(traj)?;
    let w = traj.waypoints();
    let axis = |k: usize| NaturalSpline::new(knots.clone(), w.iter().map(|p| p.position[k]).collect());
    let position = [axis(0)?, axis(1)?, axis(2)?];
    let joints = (0..traj.n_joints())
        .map(|j| NaturalSpline::new(knots.clone(), w.iter().map(|p| p.joints[j]).collect()))
        .collect::<Result<_>>()?;
    Ok(Curve { position, joints })
}

fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Composite Simpson rule with an odd number of nodes on `[0, 1]`.
pub(crate) fn simpson(nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(nodes >= 3 && nodes % 2 == 1);
    let intervals = nodes - 1;
    let h = 1.0 / intervals as f64;
    let mut acc = f(0.0) + f(1.0);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / 3.0
}

/// Integrated end-effector distance `∫₀¹ ‖f₁(t) − f₂(t)‖ dt` between two
/// time-normalized spline curves.
pub fn distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    let (ca, cb) = (interpolate(a)?, interpolate(b)?);
    Ok(curve_distance(&ca, &cb))
}

pub fn curve_distance(a: &Curve, b: &Curve) -> f64 {
    simpson(QUADRATURE_NODES, |t| euclid(a.position(t), b.position(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceClass {
    Near,
    Far,
}

/// Midpoint-of-middle-two median. `values` must be nonempty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Values strictly below the median are `Near`, everything else `Far`.
pub fn label_by_median(d_targets: &[(TrajId, f64)]) -> Result<BTreeMap<TrajId, DistanceClass>> {
    if d_targets.is_empty() {
        return Err(Error::InsufficientData("median labeling of an empty list".into()));
    }
    let values: Vec<f64> = d_targets.iter().map(|&(_, d)| d).collect();
    let threshold = median(&values);
    Ok(d_targets
        .iter()
        .map(|&(id, d)| {
            let class = if d < threshold {
                DistanceClass::Near
            } else {
                DistanceClass::Far
            };
            (id, class)
        })
        .collect())
}

/// Shape of the geometric feature vector.
///
/// Layout `geom-v1`, in order:
///
/// | block | entries |
/// |---|---|
/// | kinematic | `ee_mean_sq_velocity`, `ee_mean_sq_acceleration`, `ee_mean_sq_jerk`, `ee_max_sq_jerk`, `joint_mean_speed`, `joint_max_speed` |
/// | clearance | `clearance_obj{k}` for each object `k` (signed, center distance minus radius) |
/// | binned distance | `distance_obj{k}_bin{b}`, object-major, mean clearance within each of `time_bins` equal time bins |
/// | goal | `goal_distance`, final end-effector distance to the goal position |
///
/// Derivatives are central finite differences on a uniform grid of
/// `grid_points` samples of normalized time (one-sided at the ends).
/// Joint speed is the Euclidean norm of the joint velocity vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub version: String,
    pub n_objects: usize,
    pub time_bins: usize,
    pub grid_points: usize,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self {
            version: "geom-v1".into(),
            n_objects: 4,
            time_bins: 10,
            grid_points: QUADRATURE_NODES,
        }
    }
}

impl FeatureLayout {
    pub const KINEMATIC: [&'static str; 6] = [
        "ee_mean_sq_velocity",
        "ee_mean_sq_acceleration",
        "ee_mean_sq_jerk",
        "ee_max_sq_jerk",
        "joint_mean_speed",
        "joint_max_speed",
    ];

    pub fn len(&self) -> usize {
        Self::KINEMATIC.len() + self.n_objects * (1 + self.time_bins) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = Self::KINEMATIC.iter().map(|s| s.to_string()).collect();
        names.extend((0..self.n_objects).map(|k| format!("clearance_obj{k}")));
        for k in 0..self.n_objects {
            names.extend((0..self.time_bins).map(|b| format!("distance_obj{k}_bin{b}")));
        }
        names.push("goal_distance".into());
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    layout: FeatureLayout,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, layout: FeatureLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("feature vector has non-finite entries".into()));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }
}

fn gradient(samples: &[f64], h: f64) -> Vec<f64> {
    let n = samples.len();
    (0..n)
        .map(|i| match i {
            0 => (samples[1] - samples[0]) / h,
            i if i == n - 1 => (samples[n - 1] - samples[n - 2]) / h,
            i => (samples[i + 1] - samples[i - 1]) / (2.0 * h),
        })
        .collect()
}

fn gradient3(samples: &[[f64; 3]], h: f64) -> Vec<[f64; 3]> {
    let axes: Vec<Vec<f64>> = (0..3)
        .map(|k| gradient(&samples.iter().map(|p| p[k]).collect::<Vec<_>>(), h))
        .collect();
    (0..samples.len())
        .map(|i| [axes[0][i], axes[1][i], axes[2][i]])
        .collect()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Geometric feature map of a trajectory in its scene, in the order given by
/// [`FeatureLayout`].
pub fn features(traj: &Trajectory, scene: &Scene, layout: &FeatureLayout) -> Result<FeatureVector> {
    if traj.env_id() != scene.env_id() {
        return Err(Error::Input(format!(
            "trajectory {} is in environment {:?}, scene is {:?}",
            traj.id(),
            traj.env_id(),
            scene.env_id()
        )));
    }
    if scene.objects().len() != layout.n_objects {
        return Err(Error::Input(format!(
            "layout expects {} scene objects, scene {:?} has {}",
            layout.n_objects,
            scene.env_id(),
            scene.objects().len()
        )));
    }
    if layout.grid_points < 4 || layout.time_bins == 0 || layout.time_bins > layout.grid_points {
        return Err(Error::Parameter("feature layout grid is too coarse".into()));
    }
    let curve = interpolate(traj)?;
    let g = layout.grid_points;
    let h = 1.0 / (g - 1) as f64;
    let grid: Vec<f64> = (0..g).map(|k| k as f64 * h).collect();
    let pos: Vec<[f64; 3]> = grid.iter().map(|&t| curve.position(t)).collect();

    let vel = gradient3(&pos, h);
    let acc = gradient3(&vel, h);
    let jerk = gradient3(&acc, h);
    let sq = |v: &[[f64; 3]]| v.iter().map(|p| sq_norm(p)).collect::<Vec<_>>();
    let (v2, a2, j2) = (sq(&vel), sq(&acc), sq(&jerk));

    let joint_speed: Vec<f64> = if traj.n_joints() == 0 {
        vec![0.0; g]
    } else {
        let per_joint: Vec<Vec<f64>> = (0..traj.n_joints())
            .map(|j| {
                let samples: Vec<f64> = grid.iter().map(|&t| curve.joints[j].eval(t)).collect();
                gradient(&samples, h)
            })
            .collect();
        (0..g)
            .map(|i| per_joint.iter().map(|d| d[i] * d[i]).sum::<f64>().sqrt())
            .collect()
    };

    let mut values = vec![
        mean(&v2),
        mean(&a2),
        mean(&j2),
        max(&j2),
        mean(&joint_speed),
        max(&joint_speed),
    ];

    let clearance: Vec<Vec<f64>> = scene
        .objects()
        .iter()
        .map(|o| pos.iter().map(|&p| euclid(p, o.position) - o.radius).collect())
        .collect();
    values.extend(clearance.iter().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min)));
    for c in &clearance {
        for b in 0..layout.time_bins {
            let lo = b * g / layout.time_bins;
            let hi = (b + 1) * g / layout.time_bins;
            values.push(mean(&c[lo..hi]));
        }
    }
    values.push(euclid(pos[g - 1], scene.goal()));
    FeatureVector::new(values, layout.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(id: TrajId, n: usize, offset_y: f64) -> Trajectory {
        let wps = (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                Waypoint::at(2.0 * t, [t, offset_y, 0.0], vec![t, -t])
            })
            .collect();
        Trajectory::new(id, "env", wps).unwrap()
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene::new("env", objects, [1.0, 0.0, 0.0]).unwrap()
    }

    fn object(label: &str, position: [f64; 3]) -> SceneObject {
        SceneObject {
            label: label.into(),
            position,
            radius: 0.0,
        }
    }

    #[test]
    fn trajectory_validation() {
        let w = Waypoint::at(0.0, [0.0; 3], vec![]);
        assert!(Trajectory::new(0, "e", vec![w.clone()]).is_err());
        assert!(Trajectory::new(0, "e", vec![w.clone(), w.clone()]).is_err());
        let mut bad = Waypoint::at(1.0, [0.0; 3], vec![]);
        bad.orientation = [1.0, 0.1, 0.0, 0.0];
        assert!(Trajectory::new(0, "e", vec![w, bad]).is_err());
    }

    #[test]
    fn two_waypoints_interpolate_linearly() {
        let t = Trajectory::new(
            1,
            "e",
            vec![
                Waypoint::at(3.0, [0.0, 0.0, 0.0], vec![]),
                Waypoint::at(5.0, [2.0, 4.0, -2.0], vec![]),
            ],
        )
        .unwrap();
        let c = interpolate(&t).unwrap();
        assert_eq!(c.position(0.5), [1.0, 2.0, -1.0]);
        assert_eq!(c.position(0.0), [0.0, 0.0, 0.0]);
        assert_eq!(c.position(1.0), [2.0, 4.0, -2.0]);
    }

    #[test]
    fn collinear_waypoints_give_straight_line() {
        let c = interpolate(&line(0, 7, 0.0)).unwrap();
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let p = c.position(t);
            assert!((p[0] - t).abs() < 1e-10 && p[1].abs() < 1e-10);
        }
    }

    #[test]
    fn endpoints_reproduced_exactly() {
        let wps = vec![
            Waypoint::at(0.1, [0.3, 0.7, 0.11], vec![]),
            Waypoint::at(0.4, [0.5, -0.2, 0.3], vec![]),
            Waypoint::at(0.45, [0.9, 0.1, 0.7], vec![]),
            Waypoint::at(1.3, [0.123456789, 0.987654321, 0.5], vec![]),
        ];
        let t = Trajectory::new(0, "e", wps.clone()).unwrap();
        let c = interpolate(&t).unwrap();
        assert_eq!(c.position(0.0), wps[0].position);
        assert_eq!(c.position(1.0), wps[3].position);
    }

    #[test]
    fn spline_matches_knots_and_is_natural() {
        let s = NaturalSpline::new(vec![0.0, 0.2, 0.5, 1.0], vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        for (k, v) in [(0.0, 1.0), (0.2, -1.0), (0.5, 2.0), (1.0, 0.5)] {
            assert_relative_eq!(s.eval(k), v, epsilon = 1e-12);
        }
        assert_eq!(s.second[0], 0.0);
        assert_eq!(s.second[3], 0.0);
        // C² continuity at interior knots via finite differences
        let e = 1e-5;
        let d2 = |t: f64| (s.eval(t + e) - 2.0 * s.eval(t) + s.eval(t - e)) / (e * e);
        assert!((d2(0.2 - 1e-3) - d2(0.2 + 1e-3)).abs() < 0.5);
    }

    #[test]
    fn duplicate_knots_rejected() {
        assert!(matches!(
            NaturalSpline::new(vec![0.0, 0.5, 0.5, 1.0], vec![0.0; 4]),
            Err(Error::DegenerateInput(_))
        ));
    }

    /// Dense trapezoid rule, independent of the Simpson route.
    fn trapezoid_distance(a: &Trajectory, b: &Trajectory, n: usize) -> f64 {
        let (ca, cb) = (interpolate(a).unwrap(), interpolate(b).unwrap());
        let h = 1.0 / n as f64;
        (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * euclid(ca.position(k as f64 * h), cb.position(k as f64 * h))
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn distance_of_parallel_lines() {
        let a = line(0, 5, 0.0);
        let b = line(1, 5, 1.0);
        let oracle = trapezoid_distance(&a, &b, 20_000);
        assert!((oracle - 1.0).abs() < 1e-9);
        assert!((distance(&a, &b).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distance_matches_trapezoid_on_curved_paths() {
        let a = Trajectory::new(
            0,
            "e",
            vec![
                Waypoint::at(0.0, [0.0, 0.0, 0.0], vec![]),
                Waypoint::at(1.0, [0.5, 0.4, 0.1], vec![]),
                Waypoint::at(3.0, [1.0, 0.0, 0.0], vec![]),
            ],
        )
        .unwrap();
        let b = line(1, 3, 0.05);
        let d = distance(&a, &b).unwrap();
        assert!((d - trapezoid_distance(&a, &b, 50_000)).abs() < 1e-6);
    }

    #[test]
    fn median_labels() {
        let labels = label_by_median(&[(1, 0.1), (2, 0.2), (3, 0.3), (4, 0.4)]).unwrap();
        assert_eq!(labels[&1], DistanceClass::Near);
        assert_eq!(labels[&2], DistanceClass::Near);
        assert_eq!(labels[&3], DistanceClass::Far);
        assert_eq!(labels[&4], DistanceClass::Far);
        assert_relative_eq!(median(&[0.1, 0.2, 0.3, 0.4]), 0.25);

        let labels = label_by_median(&[(1, 0.5), (2, 0.5), (3, 0.5)]).unwrap();
        assert!(labels.values().all(|&c| c == DistanceClass::Far));
        let labels = label_by_median(&[(9, 3.0)]).unwrap();
        assert_eq!(labels[&9], DistanceClass::Far);
        assert!(label_by_median(&[]).is_err());
    }

    fn four_objects() -> Vec<SceneObject> {
        vec![
            object("a", [0.5, 0.0, 0.0]),
            object("b", [0.0, 1.0, 0.0]),
            object("c", [1.0, 1.0, 1.0]),
            object("d", [-1.0, 0.0, 0.0]),
        ]
    }

    #[test]
    fn stationary_trajectory_has_zero_kinematics() {
        let wps = (0..4)
            .map(|k| Waypoint::at(k as f64, [0.2, 0.3, 0.4], vec![0.1, 0.2]))
            .collect();
        let t = Trajectory::new(0, "env", wps).unwrap();
        let f = features(&t, &scene(four_objects()), &FeatureLayout::default()).unwrap();
        assert!(f.values()[..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_velocity_has_no_acceleration_or_jerk() {
        let f = features(&line(0, 6, 0.0), &scene(four_objects()), &FeatureLayout::default()).unwrap();
        let v = f.values();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-8);
        assert!(v[1].abs() < 1e-8 && v[2].abs() < 1e-8 && v[3].abs() < 1e-8);
        assert_relative_eq!(v[4], 2f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn clearance_of_object_on_path() {
        let layout = FeatureLayout::default();
        let f = features(&line(0, 5, 0.0), &scene(four_objects()), &layout).unwrap();
        // dense-sampling oracle: closest grid point to x = 0.5 on a unit-speed line
        let step = 1.0 / (layout.grid_points - 1) as f64;
        let dense = (0..=100_000)
            .map(|k| (k as f64 / 100_000.0 - 0.5).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(dense < 1e-12);
        assert!(f.values()[6] >= 0.0 && f.values()[6] <= step / 2.0 + 1e-12);
        let goal = *f.values().last().unwrap();
        assert!(goal.abs() < 1e-12);
        assert_eq!(f.values().len(), layout.len());
        assert_eq!(layout.names().len(), layout.len());
    }

    #[test]
    fn feature_input_errors() {
        let t = line(0, 3, 0.0);
        let other = Scene::new("elsewhere", four_objects(), [0.0; 3]).unwrap();
        assert!(matches!(
            features(&t, &other, &FeatureLayout::default()),
            Err(Error::Input(_))
        ));
        assert!(features(&t, &scene(vec![]), &FeatureLayout::default()).is_err());
        assert!(Scene::new("e", vec![object("a", [0.0; 3]), object("a", [1.0; 3])], [0.0; 3]).is_err());
    }

    #[test]
    fn json_schema_round_trip() {
        let t = line(4, 3, 0.2);
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["id"], 4);
        assert!(json["waypoints"][0]["orientation"].is_array());
        let back: Trajectory = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
        let s = scene(four_objects());
        let json = serde_json::to_value(&s).unwrap();
        assert!(json.get("goal_pose").is_some());
        assert_eq!(serde_json::from_value::<Scene>(json).unwrap(), s);
        let bad = r#"{"id":1,"env_id":"e","waypoints":[{"time":0,"joints":[],"position":[0,0,0],"orientation":[1,0,0,0]}]}"#;
        assert!(serde_json::from_str::<Trajectory>(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_traj(id: TrajId) -> impl Strategy<Value = Trajectory> {
            prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..7).prop_map(move |pts| {
                let n = pts.len();
                let wps = pts
                    .into_iter()
                    .enumerate()
                    .map(|(k, p)| Waypoint::at(k as f64 / (n - 1) as f64, p, vec![]))
                    .collect();
                Trajectory::new(id, "e", wps).unwrap()
            })
        }

        proptest! {
            #[test]
            fn triangle_inequality(a in arb_traj(0), b in arb_traj(1), c in arb_traj(2)) {
                let ab = distance(&a, &b).unwrap();
                let bc = distance(&b, &c).unwrap();
                let ac = distance(&a, &c).unwrap();
                prop_assert!(ac <= ab + bc + 1e-6);
                prop_assert_eq!(ab, distance(&b, &a).unwrap());
            }

            #[test]
            fn distance_invariant_to_retiming(a in arb_traj(0), b in arb_traj(1), shift in -100.0f64..100.0, scale in 0.1f64..10.0) {
                let retime = |t: &Trajectory| {
                    let wps = t.waypoints().iter().map(|w| {
                        let mut w = w.clone();
                        w.time = shift + scale * w.time;
                        w
                    }).collect();
                    Trajectory::new(t.id(), "e", wps).unwrap()
                };
                let d0 = distance(&a, &b).unwrap();
                let d1 = distance(&retime(&a), &retime(&b)).unwrap();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }

            #[test]
            fn median_labels_at_most_half_near(values in prop::collection::vec(0.0f64..10.0, 1..40)) {
                let items: Vec<(TrajId, f64)> = values.iter().enumerate().map(|(i, &d)| (i as TrajId, d)).collect();
                let labels = label_by_median(&items).unwrap();
                let near = labels.values().filter(|&&c| c == DistanceClass::Near).count();
                prop_assert!(2 * near <= items.len());
            }

            #[test]
            fn features_are_deterministic(a in arb_traj(0)) {
                let s = Scene::new("e", vec![], [0.0; 3]).unwrap();
                let layout = FeatureLayout { n_objects: 0, ..FeatureLayout::default() };
                let f1 = features(&a, &s, &layout).unwrap();
                let f2 = features(&a, &s, &layout).unwrap();
                prop_assert!(f1.values().iter().zip(f2.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}
