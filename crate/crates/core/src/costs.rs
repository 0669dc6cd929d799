//! Cost terms of the trajectory objective and their gradients.
//!
//! The objective splits into a human part (perturbation magnitude, goal
//! reaching, obstacle clearance, all differentiated through the
//! predictor network and forward kinematics), a robot part (goal,
//! obstacle, smoothness on base positions, differentiated directly) and
//! a joint human-robot interaction term. The position-space terms are
//! shared between the two sides: the robot variants are the same code
//! path with identity kinematics.
//!
//! Path integrals (obstacle, interaction) weight each sample by the
//! length of the segment leading to it, anchored at the position from
//! the last observed frame, so a prediction cannot cheat the cost by
//! collapsing its step lengths to zero while still passing through an
//! obstacle.

use crate::error::{check_dim, Error, Result};
use crate::kinematics::{fk_positions, fk_vjp, FkCache, Skeleton, Trajectory};
use crate::model::{grad_delta, rollout, DeltaInput, PredictorModel, RolloutResult};
use crate::scene::Scene;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

/// Segment lengths below this are treated as degenerate; their unit
/// direction is undefined and the corresponding gradient factor is a
/// valid subgradient of the norm at zero.
const ARC_EPS: f64 = 1e-12;

/// Which point on the human body the position-based terms track.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HumanPoint {
    /// A named end effector, located through forward kinematics.
    EndEffector { name: String },
    /// The base position directly (locomotion-style problems).
    Base,
}

/// Per-term weights. A weight of exactly zero disables the term and
/// skips its evaluation entirely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    /// Penalty on the squared magnitude of the injected perturbations.
    pub delta: f64,
    /// Human tracked point to the human goal at the final step.
    pub goal: f64,
    /// Human tracked point against the scene obstacles.
    pub obstacle: f64,
    /// Robot final position to the robot goal.
    pub robot_goal: f64,
    /// Robot positions against the scene obstacles.
    pub robot_obstacle: f64,
    /// Robot path curvature.
    pub smooth: f64,
    /// Human-robot proximity.
    pub interaction: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            delta: 1e-2,
            goal: 1.0,
            obstacle: 1.0,
            robot_goal: 1.0,
            robot_obstacle: 1.0,
            smooth: 1e-1,
            interaction: 1.0,
        }
    }
}

impl CostWeights {
    /// All terms off; enable individual terms from here in tests and
    /// single-purpose problems.
    pub fn zeros() -> Self {
        CostWeights {
            delta: 0.0,
            goal: 0.0,
            obstacle: 0.0,
            robot_goal: 0.0,
            robot_obstacle: 0.0,
            smooth: 0.0,
            interaction: 0.0,
        }
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("delta", self.delta),
            ("goal", self.goal),
            ("obstacle", self.obstacle),
            ("robot_goal", self.robot_goal),
            ("robot_obstacle", self.robot_obstacle),
            ("smooth", self.smooth),
            ("interaction", self.interaction),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "cost weight {name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Boundary treatment of the smoothness matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothnessVariant {
    /// K = DᵀD for the second-difference stencil D. Positive
    /// semidefinite with free boundaries: constant and linear
    /// trajectories cost exactly zero.
    #[default]
    SecondDifference,
    /// The banded matrix as commonly printed, kept for comparison. Its
    /// clipped boundary rows charge even a constant trajectory and the
    /// matrix is indefinite, so it is not the default.
    ClippedBand,
}

/// Everything needed to evaluate the composite objective for one
/// problem instance. Immutable during optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveSpec {
    pub weights: CostWeights,
    /// Obstacle sharpness in 1/m; larger values localize the penalty
    /// closer to the zero level set.
    pub alpha: f64,
    /// Target for the human tracked point, required when the goal
    /// weight is nonzero.
    pub human_goal: Option<[f64; 3]>,
    pub human_point: HumanPoint,
    /// Target for the robot base, required when the robot goal weight
    /// is nonzero.
    pub robot_goal: Option<[f64; 3]>,
    pub scene: Scene,
    /// Number of predicted steps.
    pub horizon: usize,
    pub smoothness: SmoothnessVariant,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            weights: CostWeights::default(),
            alpha: 10.0,
            human_goal: None,
            human_point: HumanPoint::Base,
            robot_goal: None,
            scene: Scene::empty(),
            horizon: 30,
            smoothness: SmoothnessVariant::default(),
        }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "obstacle sharpness must be positive and finite, got {}",
                self.alpha
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.weights.goal > 0.0 && self.human_goal.is_none() {
            return Err(Error::Config(
                "goal term enabled but no human goal point set".into(),
            ));
        }
        if self.weights.robot_goal > 0.0 && self.robot_goal.is_none() {
            return Err(Error::Config(
                "robot goal term enabled but no robot goal point set".into(),
            ));
        }
        Ok(())
    }

    /// True when any robot-side term needs a robot trajectory.
    pub fn robot_terms_enabled(&self) -> bool {
        let w = &self.weights;
        w.robot_goal > 0.0 || w.robot_obstacle > 0.0 || w.smooth > 0.0 || w.interaction > 0.0
    }

    fn human_position_terms_enabled(&self) -> bool {
        let w = &self.weights;
        w.goal > 0.0 || w.obstacle > 0.0 || w.interaction > 0.0
    }
}

/// Robot base path: the fixed current position plus the planned steps,
/// which are the free variables of the joint problem.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotTrajectory {
    pub start: Vector3<f64>,
    pub steps: Vec<Vector3<f64>>,
}

impl RobotTrajectory {
    /// Evenly spaced initialization from start to goal, the standard
    /// starting point for the joint problem.
    pub fn straight_line(start: Vector3<f64>, goal: Vector3<f64>, horizon: usize) -> Self {
        let steps = (1..=horizon)
            .map(|t| start + (goal - start) * (t as f64 / horizon as f64))
            .collect();
        RobotTrajectory { start, steps }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Flattens the free steps (step-major xyz) for an optimizer.
    pub fn pack(&self) -> DVector<f64> {
        let mut out = DVector::zeros(3 * self.steps.len());
        for (t, p) in self.steps.iter().enumerate() {
            out.fixed_rows_mut::<3>(3 * t).copy_from(p);
        }
        out
    }

    /// Same start, steps replaced from a packed vector.
    pub fn unpack_from(&self, packed: &DVector<f64>) -> Result<RobotTrajectory> {
        check_dim("packed robot steps", 3 * self.steps.len(), packed.len())?;
        let steps = (0..self.steps.len())
            .map(|t| packed.fixed_rows::<3>(3 * t).into())
            .collect();
        Ok(RobotTrajectory {
            start: self.start,
            steps,
        })
    }
}

/// Sum of squared perturbation entries over all steps.
pub fn cost_delta(delta: &DeltaInput) -> f64 {
    delta.steps().iter().map(|s| s.norm_squared()).sum()
}

/// Gradient of [`cost_delta`], exactly twice the perturbations.
pub fn cost_delta_grad(delta: &DeltaInput) -> Vec<DVector<f64>> {
    delta.steps().iter().map(|s| 2.0 * s).collect()
}

/// Squared distance of a final position to its goal, with the gradient
/// at that position.
pub fn goal_cost(p_final: &Vector3<f64>, goal: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = p_final - goal;
    (d.norm_squared(), 2.0 * d)
}

/// Obstacle proximity integrated along a path.
///
/// Each sample pays `exp(-alpha * sdf(p_t))` weighted by the length of
/// the segment arriving at it, `|p_t - p_{t-1}|`, with `p_0 = anchor`.
/// Returns the cost and its gradient at every path point; the anchor is
/// fixed data and gets no gradient. The gradient at `p_t` combines the
/// potential term through the SDF gradient, the stretch of its own
/// segment, and the stretch of the following segment.
pub fn obstacle_cost(
    points: &[Vector3<f64>],
    anchor: &Vector3<f64>,
    scene: &Scene,
    alpha: f64,
) -> (f64, Vec<Vector3<f64>>) {
    let mut value = 0.0;
    let mut grads = vec![Vector3::zeros(); points.len()];
    let mut prev = *anchor;
    for (t, p) in points.iter().enumerate() {
        let seg = p - prev;
        let len = seg.norm();
        let w = (-alpha * scene.sdf_eval(p)).exp();
        value += w * len;
        if len > ARC_EPS {
            let u = seg / len;
            grads[t] += w * u;
            if t > 0 {
                grads[t - 1] -= w * u;
            }
        }
        grads[t] -= alpha * w * len * scene.sdf_gradient(p);
        prev = *p;
    }
    (value, grads)
}

/// Human-robot proximity integrated along both paths.
///
/// Each step pays `exp(-alpha * |p_t - x_t|)` weighted by both agents'
/// segment lengths, so a step contributes nothing while either agent
/// stands still. Symmetric in the two agents; returns the cost and the
/// per-point gradients for both paths.
pub fn interaction_cost(
    a: &[Vector3<f64>],
    a_anchor: &Vector3<f64>,
    b: &[Vector3<f64>],
    b_anchor: &Vector3<f64>,
    alpha: f64,
) -> Result<(f64, Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    check_dim("interaction path length", a.len(), b.len())?;
    let mut value = 0.0;
    let mut ga = vec![Vector3::zeros(); a.len()];
    let mut gb = vec![Vector3::zeros(); b.len()];
    let mut prev_a = *a_anchor;
    let mut prev_b = *b_anchor;
    for t in 0..a.len() {
        let seg_a = a[t] - prev_a;
        let seg_b = b[t] - prev_b;
        let la = seg_a.norm();
        let lb = seg_b.norm();
        let d = a[t] - b[t];
        let dist = d.norm();
        let w = (-alpha * dist).exp();
        value += w * la * lb;
        if dist > ARC_EPS {
            let n = d / dist;
            ga[t] -= alpha * w * la * lb * n;
            gb[t] += alpha * w * la * lb * n;
        }
        if la > ARC_EPS {
            let u = seg_a / la;
            ga[t] += w * lb * u;
            if t > 0 {
                ga[t - 1] -= w * lb * u;
            }
        }
        if lb > ARC_EPS {
            let u = seg_b / lb;
            gb[t] += w * la * u;
            if t > 0 {
                gb[t - 1] -= w * la * u;
            }
        }
        prev_a = a[t];
        prev_b = b[t];
    }
    Ok((value, ga, gb))
}

/// Quadratic form for the smoothness term, applied per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessMatrix {
    k: DMatrix<f64>,
}

impl SmoothnessMatrix {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }
}

/// Builds the smoothness matrix for a path of `t` samples.
pub fn build_k(t: usize, variant: SmoothnessVariant) -> Result<SmoothnessMatrix> {
    if t < 3 {
        return Err(Error::TooShort { needed: 3, got: t });
    }
    let k = match variant {
        SmoothnessVariant::SecondDifference => {
            let mut d = DMatrix::zeros(t - 2, t);
            for r in 0..t - 2 {
                d[(r, r)] = 1.0;
                d[(r, r + 1)] = -2.0;
                d[(r, r + 2)] = 1.0;
            }
            d.transpose() * d
        }
        SmoothnessVariant::ClippedBand => {
            let mut k = DMatrix::zeros(t, t);
            for i in 0..t {
                k[(i, i)] = if i == t - 1 { 1.0 } else { 6.0 };
                if i + 1 < t {
                    k[(i, i + 1)] = -4.0;
                    k[(i + 1, i)] = -4.0;
                }
                if i + 2 < t {
                    k[(i, i + 2)] = 1.0;
                    k[(i + 2, i)] = 1.0;
                }
            }
            k
        }
    };
    Ok(SmoothnessMatrix { k })
}

/// Sum over coordinates of the quadratic form `x' K x`, with gradient
/// `2 K x` per coordinate mapped back onto the points.
pub fn cost_smooth(
    points: &[Vector3<f64>],
    k: &SmoothnessMatrix,
) -> Result<(f64, Vec<Vector3<f64>>)> {
    check_dim("smoothness path length", k.dim(), points.len())?;
    let mut value = 0.0;
    let mut grads = vec![Vector3::zeros(); points.len()];
    for c in 0..3 {
        let x = DVector::from_fn(points.len(), |t, _| points[t][c]);
        let kx = &k.k * &x;
        value += x.dot(&kx);
        for t in 0..points.len() {
            grads[t][c] = 2.0 * kx[t];
        }
    }
    Ok((value, grads))
}

/// Raw (unweighted) per-term values, for diagnostics and tests.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermValues {
    pub delta: f64,
    pub goal: f64,
    pub obstacle: f64,
    pub robot_goal: f64,
    pub robot_obstacle: f64,
    pub smooth: f64,
    pub interaction: f64,
}

impl TermValues {
    pub fn weighted_total(&self, w: &CostWeights) -> f64 {
        w.delta * self.delta
            + w.goal * self.goal
            + w.obstacle * self.obstacle
            + w.robot_goal * self.robot_goal
            + w.robot_obstacle * self.robot_obstacle
            + w.smooth * self.smooth
            + w.interaction * self.interaction
    }
}

/// One full evaluation of the composite objective.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    /// Weighted total.
    pub value: f64,
    pub terms: TermValues,
    /// Gradient with respect to the perturbations, one full-dimension
    /// vector per predicted step.
    pub d_delta: Vec<DVector<f64>>,
    /// Gradient with respect to the free robot steps; empty when no
    /// robot trajectory was given.
    pub d_robot: Vec<Vector3<f64>>,
    /// The shared rollout, so callers can reuse the prediction without
    /// running the model again.
    pub rollout: RolloutResult,
}

/// Locates the tracked human point in each predicted state and pulls
/// position gradients back onto the flattened states.
enum Tracker {
    Base,
    EndEffector { joint: usize, caches: Vec<FkCache> },
}

fn base_point(state: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(state[0], state[1], state[2])
}

impl Tracker {
    fn build(
        point: &HumanPoint,
        skel: &Skeleton,
        observed: &Trajectory,
        states: &[DVector<f64>],
    ) -> Result<(Tracker, Vec<Vector3<f64>>, Vector3<f64>)> {
        let last_observed = observed.frames.last().ok_or(Error::TooShort {
            needed: 1,
            got: 0,
        })?;
        match point {
            HumanPoint::Base => {
                let points = states.iter().map(base_point).collect();
                Ok((Tracker::Base, points, base_point(last_observed)))
            }
            HumanPoint::EndEffector { name } => {
                check_dim("tracked skeleton state", skel.state_dim(), observed.dim())?;
                let joint = skel.end_effector_index(name)?;
                let caches = states
                    .iter()
                    .map(|s| fk_positions(skel, s))
                    .collect::<Result<Vec<_>>>()?;
                let points = caches.iter().map(|c| c.positions[joint]).collect();
                let anchor = fk_positions(skel, last_observed)?.positions[joint];
                Ok((Tracker::EndEffector { joint, caches }, points, anchor))
            }
        }
    }

    fn pullback(
        &self,
        skel: &Skeleton,
        states: &[DVector<f64>],
        t: usize,
        g: &Vector3<f64>,
        out: &mut DVector<f64>,
    ) {
        match self {
            Tracker::Base => {
                for i in 0..3 {
                    out[i] += g[i];
                }
            }
            Tracker::EndEffector { joint, caches } => {
                *out += fk_vjp(skel, &states[t], &caches[t], *joint, g);
            }
        }
    }
}

/// Evaluates the weighted objective and both gradients.
///
/// The predictor runs exactly once; every human-side position term
/// accumulates its weighted upstream gradient on the predicted states,
/// and a single reverse pass maps that onto the perturbations. Robot
/// terms differentiate directly. Terms with weight zero are skipped.
pub fn total_objective(
    model: &PredictorModel,
    skel: &Skeleton,
    observed: &Trajectory,
    delta: &DeltaInput,
    robot: Option<&RobotTrajectory>,
    spec: &ObjectiveSpec,
) -> Result<ObjectiveEval> {
    spec.validate()?;
    let w = &spec.weights;
    if spec.robot_terms_enabled() && w.interaction > 0.0 && robot.is_none() {
        return Err(Error::Config(
            "interaction term enabled but no robot trajectory given".into(),
        ));
    }
    if (w.robot_goal > 0.0 || w.robot_obstacle > 0.0 || w.smooth > 0.0) && robot.is_none() {
        return Err(Error::Config(
            "robot terms enabled but no robot trajectory given".into(),
        ));
    }
    if let Some(r) = robot {
        check_dim("robot horizon", spec.horizon, r.horizon())?;
    }

    let r = rollout(model, observed, delta, spec.horizon)?;
    let dim = observed.dim();
    let horizon = spec.horizon;
    let mut terms = TermValues::default();
    let mut d_states = vec![DVector::zeros(dim); horizon];
    let mut d_robot = vec![Vector3::zeros(); robot.map_or(0, |x| x.horizon())];
    let mut any_state_grad = false;

    if w.delta > 0.0 {
        terms.delta = cost_delta(delta);
    }

    if spec.human_position_terms_enabled() {
        let (tracker, points, anchor) = Tracker::build(&spec.human_point, skel, observed, &r.states)?;

        if w.goal > 0.0 {
            let goal = Vector3::from(spec.human_goal.expect("validated above"));
            let (c, g) = goal_cost(points.last().expect("horizon >= 1"), &goal);
            terms.goal = c;
            tracker.pullback(skel, &r.states, horizon - 1, &(w.goal * g), &mut d_states[horizon - 1]);
            any_state_grad = true;
        }

        if w.obstacle > 0.0 {
            let (c, gs) = obstacle_cost(&points, &anchor, &spec.scene, spec.alpha);
            terms.obstacle = c;
            for (t, g) in gs.iter().enumerate() {
                tracker.pullback(skel, &r.states, t, &(w.obstacle * g), &mut d_states[t]);
            }
            any_state_grad = true;
        }

        if w.interaction > 0.0 {
            let rt = robot.expect("checked above");
            let (c, gh, gr) = interaction_cost(&points, &anchor, &rt.steps, &rt.start, spec.alpha)?;
            terms.interaction = c;
            for (t, g) in gh.iter().enumerate() {
                tracker.pullback(skel, &r.states, t, &(w.interaction * g), &mut d_states[t]);
            }
            for (t, g) in gr.iter().enumerate() {
                d_robot[t] += w.interaction * g;
            }
            any_state_grad = true;
        }
    }

    if let Some(rt) = robot {
        if w.robot_goal > 0.0 {
            let goal = Vector3::from(spec.robot_goal.expect("validated above"));
            let (c, g) = goal_cost(rt.steps.last().ok_or(Error::TooShort { needed: 1, got: 0 })?, &goal);
            terms.robot_goal = c;
            d_robot[rt.horizon() - 1] += w.robot_goal * g;
        }

        if w.robot_obstacle > 0.0 {
            let (c, gs) = obstacle_cost(&rt.steps, &rt.start, &spec.scene, spec.alpha);
            terms.robot_obstacle = c;
            for (t, g) in gs.iter().enumerate() {
                d_robot[t] += w.robot_obstacle * g;
            }
        }

        if w.smooth > 0.0 {
            // The fixed start participates in the quadratic form so the
            // plan cannot kink away from the robot's actual position,
            // but only the free steps receive gradient.
            let mut stacked = Vec::with_capacity(rt.horizon() + 1);
            stacked.push(rt.start);
            stacked.extend_from_slice(&rt.steps);
            if stacked.len() >= 3 {
                let k = build_k(stacked.len(), spec.smoothness)?;
                let (c, gs) = cost_smooth(&stacked, &k)?;
                terms.smooth = c;
                for t in 0..rt.horizon() {
                    d_robot[t] += w.smooth * gs[t + 1];
                }
            }
        }
    }

    let mut d_delta = if any_state_grad {
        grad_delta(model, &r, &d_states)?
    } else {
        vec![DVector::zeros(dim); horizon]
    };
    if w.delta > 0.0 {
        for (g, s) in d_delta.iter_mut().zip(delta.steps()) {
            *g += 2.0 * w.delta * s;
        }
    }

    Ok(ObjectiveEval {
        value: terms.weighted_total(w),
        terms,
        d_delta,
        d_robot,
        rollout: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::StateLayout;
    use crate::model::ModelConfig;
    use crate::scene::SdfPrimitive;
    use approx::assert_relative_eq;

    fn sphere_scene(radius: f64) -> Scene {
        Scene::new(vec![SdfPrimitive::Sphere {
            center: [0.0, 0.0, 0.0],
            radius,
        }])
        .unwrap()
    }

    #[test]
    fn delta_cost_and_gradient() {
        let zero = DeltaInput::zeros(3, 4);
        assert_eq!(cost_delta(&zero), 0.0);

        let mut steps = vec![DVector::zeros(4); 3];
        steps[1][2] = 0.5;
        let d = DeltaInput::new(steps, None).unwrap();
        assert_eq!(cost_delta(&d), 0.25);
        let g = cost_delta_grad(&d);
        assert_eq!(g[1][2], 1.0);
        assert_eq!(g[0], DVector::zeros(4));
    }

    #[test]
    fn goal_cost_hand_values() {
        let goal = Vector3::new(0.3, -0.2, 1.0);
        let (c, g) = goal_cost(&goal, &goal);
        assert_eq!(c, 0.0);
        assert_eq!(g, Vector3::zeros());

        let (c, g) = goal_cost(&(goal + Vector3::new(0.2, 0.0, 0.0)), &goal);
        assert_relative_eq!(c, 0.04, epsilon = 1e-15);
        assert_relative_eq!(g.x, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn obstacle_cost_hand_value() {
        // One step of length 0.1 at distance 0.6 from a sphere surface.
        let scene = sphere_scene(0.5);
        let anchor = Vector3::new(1.0, 0.0, 0.0);
        let points = [Vector3::new(1.1, 0.0, 0.0)];
        let (c, _) = obstacle_cost(&points, &anchor, &scene, 1.0);
        assert_relative_eq!(c, 0.05488116360940264, epsilon = 1e-16);
    }

    #[test]
    fn obstacle_cost_static_path_is_free() {
        let scene = sphere_scene(0.5);
        let p = Vector3::new(0.6, 0.0, 0.0);
        let (c, gs) = obstacle_cost(&[p, p, p], &p, &scene, 10.0);
        assert_eq!(c, 0.0);
        // Only the potential part of the gradient survives, and it is
        // weighted by the zero arc length.
        for g in gs {
            assert_eq!(g, Vector3::zeros());
        }
    }

    #[test]
    fn obstacle_cost_decays_far_away() {
        let scene = sphere_scene(0.5);
        let anchor = Vector3::new(100.0, 0.0, 0.0);
        let points = [Vector3::new(100.5, 0.0, 0.0), Vector3::new(101.0, 0.0, 0.0)];
        let (c, _) = obstacle_cost(&points, &anchor, &scene, 10.0);
        assert!(c < 1e-300, "expected decayed cost, got {c}");
    }

    #[test]
    fn interaction_cost_hand_value() {
        // Unit separation, both agents stepping 0.1.
        let a0 = Vector3::new(0.0, 0.0, 0.0);
        let a = [Vector3::new(0.1, 0.0, 0.0)];
        let b0 = Vector3::new(0.0, 1.0, 0.0);
        let b = [Vector3::new(0.1, 1.0, 0.0)];
        let (c, _, _) = interaction_cost(&a, &a0, &b, &b0, 1.0).unwrap();
        assert_relative_eq!(c, 0.0036787944117144233, epsilon = 1e-16);
    }

    #[test]
    fn interaction_needs_both_agents_moving() {
        let a0 = Vector3::new(0.0, 0.0, 0.0);
        let a = [Vector3::new(0.5, 0.0, 0.0)];
        let b0 = Vector3::new(0.0, 0.3, 0.0);
        let b = [b0];
        let (c, ga, gb) = interaction_cost(&a, &a0, &b, &b0, 1.0).unwrap();
        assert_eq!(c, 0.0);
        // With one agent static the whole product vanishes. The static
        // agent sits at a kink of its arc-length factor where zero is
        // the canonical subgradient, so both gradients are zero.
        assert_eq!(ga[0], Vector3::zeros());
        assert_eq!(gb[0], Vector3::zeros());
    }

    #[test]
    fn interaction_rejects_length_mismatch() {
        let z = Vector3::zeros();
        assert!(interaction_cost(&[z, z], &z, &[z], &z, 1.0).is_err());
    }

    #[test]
    fn interaction_is_symmetric() {
        let a0 = Vector3::new(0.0, 0.0, 0.0);
        let a = [Vector3::new(0.2, 0.1, 0.0), Vector3::new(0.4, 0.2, 0.1)];
        let b0 = Vector3::new(1.0, 0.0, 0.0);
        let b = [Vector3::new(0.8, 0.0, 0.1), Vector3::new(0.6, 0.1, 0.2)];
        let (c_ab, ga, gb) = interaction_cost(&a, &a0, &b, &b0, 2.0).unwrap();
        let (c_ba, gb2, ga2) = interaction_cost(&b, &b0, &a, &a0, 2.0).unwrap();
        // Swapping the agents reorders the multiplications, so agree to
        // rounding rather than bitwise.
        assert_relative_eq!(c_ab, c_ba, epsilon = 1e-14);
        for t in 0..a.len() {
            assert_relative_eq!((ga[t] - ga2[t]).norm(), 0.0, epsilon = 1e-14);
            assert_relative_eq!((gb[t] - gb2[t]).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn smoothness_matrix_interior_row() {
        let k = build_k(5, SmoothnessVariant::SecondDifference).unwrap();
        let row: Vec<f64> = (0..5).map(|j| k.matrix()[(2, j)]).collect();
        assert_eq!(row, vec![1.0, -4.0, 6.0, -4.0, 1.0]);
    }

    #[test]
    fn smoothness_matrix_annihilates_affine_paths() {
        let k = build_k(7, SmoothnessVariant::SecondDifference).unwrap();
        let constant: Vec<Vector3<f64>> = vec![Vector3::new(0.3, -1.0, 2.0); 7];
        let (c, gs) = cost_smooth(&constant, &k).unwrap();
        assert_relative_eq!(c, 0.0, epsilon = 1e-12);
        for g in gs {
            assert_relative_eq!(g.norm(), 0.0, epsilon = 1e-12);
        }

        let linear: Vec<Vector3<f64>> = (0..7)
            .map(|t| Vector3::new(0.1 * t as f64, -0.2 * t as f64, 0.05 * t as f64))
            .collect();
        let (c, _) = cost_smooth(&linear, &k).unwrap();
        assert_relative_eq!(c, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothness_matrix_rejects_short_paths() {
        assert!(build_k(2, SmoothnessVariant::SecondDifference).is_err());
    }

    #[test]
    fn clipped_band_matches_its_printed_layout() {
        let k = build_k(6, SmoothnessVariant::ClippedBand).unwrap();
        let m = k.matrix();
        let row = |i: usize| -> Vec<f64> { (0..6).map(|j| m[(i, j)]).collect() };
        assert_eq!(row(0), vec![6.0, -4.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(row(1), vec![-4.0, 6.0, -4.0, 1.0, 0.0, 0.0]);
        assert_eq!(row(2), vec![1.0, -4.0, 6.0, -4.0, 1.0, 0.0]);
        assert_eq!(row(4), vec![0.0, 0.0, 1.0, -4.0, 6.0, -4.0]);
        assert_eq!(row(5), vec![0.0, 0.0, 0.0, 1.0, -4.0, 1.0]);
        assert_eq!(m.transpose(), *m);

        // The clipped boundaries charge a constant path (negatively,
        // even: the matrix is indefinite), which is why this variant is
        // comparison-only.
        let constant: Vec<Vector3<f64>> = vec![Vector3::new(1.0, 0.0, 0.0); 6];
        let (c, _) = cost_smooth(&constant, &k).unwrap();
        assert!(c.abs() > 1e-9, "constant path should be charged, got {c}");
    }

    #[test]
    fn smoothness_hand_value() {
        // Single coordinate (0, 1, 0): one second difference of -2.
        let k = build_k(3, SmoothnessVariant::SecondDifference).unwrap();
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, 0.0),
        ];
        let (c, gs) = cost_smooth(&pts, &k).unwrap();
        assert_relative_eq!(c, 4.0, epsilon = 1e-15);
        assert_relative_eq!(gs[0].z, -4.0, epsilon = 1e-15);
        assert_relative_eq!(gs[1].z, 8.0, epsilon = 1e-15);
        assert_relative_eq!(gs[2].z, -4.0, epsilon = 1e-15);
    }

    fn tiny_setup() -> (PredictorModel, Skeleton, Trajectory) {
        let skel = Skeleton::two_joint_arm();
        let dim = skel.state_dim();
        let model = PredictorModel::random_init(ModelConfig::test_scale(dim), 7).unwrap();
        let frames = (0..5)
            .map(|t| {
                DVector::from_fn(dim, |i, _| 0.1 * (t as f64) * ((i % 3) as f64 - 1.0) + 0.05 * i as f64)
            })
            .collect();
        let observed = Trajectory::new(30.0, StateLayout::Human { joints: 2 }, frames).unwrap();
        (model, skel, observed)
    }

    fn full_spec(horizon: usize) -> ObjectiveSpec {
        ObjectiveSpec {
            weights: CostWeights {
                delta: 0.01,
                goal: 1.0,
                obstacle: 1.0,
                robot_goal: 1.0,
                robot_obstacle: 1.0,
                smooth: 0.1,
                interaction: 1.0,
            },
            alpha: 2.0,
            human_goal: Some([0.5, 0.2, 0.1]),
            human_point: HumanPoint::EndEffector {
                name: "wrist".into(),
            },
            robot_goal: Some([-0.5, 0.4, 0.0]),
            scene: sphere_scene(0.3),
            horizon,
            smoothness: SmoothnessVariant::SecondDifference,
        }
    }

    #[test]
    fn all_weights_zero_gives_zero_value_and_gradients() {
        let (model, skel, observed) = tiny_setup();
        let spec = ObjectiveSpec {
            weights: CostWeights::zeros(),
            horizon: 4,
            ..ObjectiveSpec::default()
        };
        let delta = DeltaInput::zeros(4, observed.dim());
        let eval = total_objective(&model, &skel, &observed, &delta, None, &spec).unwrap();
        assert_eq!(eval.value, 0.0);
        for g in &eval.d_delta {
            assert_eq!(g.norm(), 0.0);
        }
        assert!(eval.d_robot.is_empty());
    }

    #[test]
    fn delta_only_objective_equals_delta_cost() {
        let (model, skel, observed) = tiny_setup();
        let spec = ObjectiveSpec {
            weights: CostWeights {
                delta: 1.0,
                ..CostWeights::zeros()
            },
            horizon: 3,
            ..ObjectiveSpec::default()
        };
        let mut steps = vec![DVector::zeros(observed.dim()); 3];
        steps[0][5] = 0.3;
        steps[2][1] = -0.2;
        let delta = DeltaInput::new(steps, None).unwrap();
        let eval = total_objective(&model, &skel, &observed, &delta, None, &spec).unwrap();
        assert_relative_eq!(eval.value, cost_delta(&delta), epsilon = 1e-15);
        for (g, s) in eval.d_delta.iter().zip(delta.steps()) {
            assert_eq!(g, &(2.0 * s));
        }
    }

    #[test]
    fn total_matches_sum_of_single_term_evaluations() {
        let (model, skel, observed) = tiny_setup();
        let horizon = 4;
        let spec = full_spec(horizon);
        let dim = observed.dim();
        let mut steps = vec![DVector::zeros(dim); horizon];
        for (k, s) in steps.iter_mut().enumerate() {
            for i in 0..dim {
                s[i] = 0.01 * ((k * dim + i) as f64).sin();
            }
        }
        let delta = DeltaInput::new(steps, None).unwrap();
        let robot = RobotTrajectory::straight_line(
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(-0.5, 0.4, 0.0),
            horizon,
        );

        let full = total_objective(&model, &skel, &observed, &delta, Some(&robot), &spec).unwrap();

        let weights = spec.weights.named();
        let mut sum = 0.0;
        for (name, w) in weights {
            let mut solo = spec.clone();
            solo.weights = CostWeights::zeros();
            match name {
                "delta" => solo.weights.delta = w,
                "goal" => solo.weights.goal = w,
                "obstacle" => solo.weights.obstacle = w,
                "robot_goal" => solo.weights.robot_goal = w,
                "robot_obstacle" => solo.weights.robot_obstacle = w,
                "smooth" => solo.weights.smooth = w,
                "interaction" => solo.weights.interaction = w,
                _ => unreachable!(),
            }
            let eval =
                total_objective(&model, &skel, &observed, &delta, Some(&robot), &solo).unwrap();
            sum += eval.value;
        }
        assert_relative_eq!(full.value, sum, epsilon = 1e-12);
    }

    #[test]
    fn robot_terms_equal_shared_machinery_on_same_positions() {
        let (model, skel, observed) = tiny_setup();
        let horizon = 4;
        let mut spec = full_spec(horizon);
        spec.weights = CostWeights {
            robot_goal: 1.0,
            robot_obstacle: 1.0,
            ..CostWeights::zeros()
        };
        let robot = RobotTrajectory::straight_line(
            Vector3::new(-1.0, -0.2, 0.1),
            Vector3::new(0.6, 0.4, 0.2),
            horizon,
        );
        let delta = DeltaInput::zeros(horizon, observed.dim());
        let eval = total_objective(&model, &skel, &observed, &delta, Some(&robot), &spec).unwrap();

        let (goal_direct, _) = goal_cost(
            robot.steps.last().unwrap(),
            &Vector3::from(spec.robot_goal.unwrap()),
        );
        let (obst_direct, _) = obstacle_cost(&robot.steps, &robot.start, &spec.scene, spec.alpha);
        assert_eq!(eval.terms.robot_goal, goal_direct);
        assert_eq!(eval.terms.robot_obstacle, obst_direct);
        assert_relative_eq!(eval.value, goal_direct + obst_direct, epsilon = 1e-15);
    }

    #[test]
    fn missing_goal_point_is_rejected() {
        let spec = ObjectiveSpec {
            weights: CostWeights {
                goal: 1.0,
                ..CostWeights::zeros()
            },
            human_goal: None,
            ..ObjectiveSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn robot_terms_require_robot_trajectory() {
        let (model, skel, observed) = tiny_setup();
        let spec = ObjectiveSpec {
            weights: CostWeights {
                smooth: 1.0,
                ..CostWeights::zeros()
            },
            horizon: 3,
            ..ObjectiveSpec::default()
        };
        let delta = DeltaInput::zeros(3, observed.dim());
        let err = total_objective(&model, &skel, &observed, &delta, None, &spec).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn unknown_end_effector_is_rejected() {
        let (model, skel, observed) = tiny_setup();
        let mut spec = full_spec(3);
        spec.weights = CostWeights {
            goal: 1.0,
            ..CostWeights::zeros()
        };
        spec.human_point = HumanPoint::EndEffector {
            name: "tail".into(),
        };
        let delta = DeltaInput::zeros(3, observed.dim());
        let err = total_objective(&model, &skel, &observed, &delta, None, &spec).unwrap_err();
        assert!(matches!(err, Error::Skeleton(_)));
    }

    #[test]
    fn objective_spec_round_trips_through_json() {
        let spec = full_spec(12);
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: ObjectiveSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
