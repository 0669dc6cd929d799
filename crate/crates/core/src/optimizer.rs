//! Limited-memory BFGS over the perturbation variables, alone or
//! stacked with a robot trajectory.
//!
//! The solver is a textbook two-loop recursion with strong Wolfe line
//! search. It is deliberately self-contained: the objective closures
//! built here are expensive (each evaluation runs the predictor and a
//! reverse pass), so the implementation is careful to reuse the
//! gradient computed at an accepted line-search point instead of
//! evaluating again at the top of the next iteration.

use crate::costs::{total_objective, ObjectiveSpec, RobotTrajectory};
use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, Trajectory};
use crate::model::{DeltaInput, PredictorModel};
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Solver settings. The defaults fit the trajectory problems in this
/// crate; all of them are exposed in the objective files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept for the two-loop recursion.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the gradient norm drops to this.
    pub gradient_tolerance: f64,
    /// Stop when the relative objective decrease drops to this.
    pub objective_decrease_tolerance: f64,
    /// Armijo (sufficient decrease) constant.
    pub wolfe_c1: f64,
    /// Curvature constant.
    pub wolfe_c2: f64,
    /// Total objective evaluations a single line search may spend.
    pub max_line_search_trials: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            objective_decrease_tolerance: 1e-9,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_trials: 20,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::Config("lbfgs memory must be at least 1".into()));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Config(format!(
                "wolfe constants must satisfy 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.max_line_search_trials == 0 {
            return Err(Error::Config("line search needs at least one trial".into()));
        }
        for (name, v) in [
            ("gradient_tolerance", self.gradient_tolerance),
            (
                "objective_decrease_tolerance",
                self.objective_decrease_tolerance,
            ),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Why the solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

/// One accepted iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
}

/// Output of [`lbfgs_minimize`] on a raw vector problem.
#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub termination: Termination,
    /// Entry 0 is the starting point; one entry per accepted iterate
    /// after that. Objectives are non-increasing.
    pub trace: Vec<TraceEntry>,
}

struct Evaluation {
    alpha: f64,
    x: DVector<f64>,
    value: f64,
    grad: DVector<f64>,
    slope: f64,
}

fn eval_at<F>(
    f: &mut F,
    x0: &DVector<f64>,
    dir: &DVector<f64>,
    alpha: f64,
) -> Result<Evaluation>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let x = x0 + dir * alpha;
    let (value, grad) = f(&x)?;
    let slope = grad.dot(dir);
    Ok(Evaluation {
        alpha,
        x,
        value,
        grad,
        slope,
    })
}

/// Cubic minimizer for Hermite data at the two bracket ends; falls back
/// to bisection when the interpolant is degenerate or lands too close
/// to a bracket end.
fn zoom_candidate(lo: &Evaluation, hi: &Evaluation) -> f64 {
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (lo.alpha - hi.alpha);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (lo.alpha + hi.alpha);
    if disc < 0.0 {
        return mid;
    }
    let d2 = (hi.alpha - lo.alpha).signum() * disc.sqrt();
    let cand = hi.alpha
        - (hi.alpha - lo.alpha) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (a, b) = if lo.alpha < hi.alpha {
        (lo.alpha, hi.alpha)
    } else {
        (hi.alpha, lo.alpha)
    };
    let margin = 0.1 * (b - a);
    if !cand.is_finite() || cand < a + margin || cand > b - margin {
        mid
    } else {
        cand
    }
}

/// Strong Wolfe line search: bracketing phase doubling the step, then
/// zoom with cubic interpolation. Returns the accepted evaluation, or
/// None when the trial budget runs out without a Wolfe point.
fn wolfe_search<F>(
    f: &mut F,
    x0: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    dir: &DVector<f64>,
    config: &LbfgsConfig,
) -> Result<Option<Evaluation>>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let slope0 = g0.dot(dir);
    if slope0 >= 0.0 {
        return Ok(None);
    }
    let armijo = |e: &Evaluation| e.value <= f0 + config.wolfe_c1 * e.alpha * slope0;
    let curvature = |e: &Evaluation| e.slope.abs() <= -config.wolfe_c2 * slope0;

    let mut trials = 0usize;
    let mut probe = |f: &mut F, alpha: f64| -> Result<Option<Evaluation>> {
        if trials >= config.max_line_search_trials {
            return Ok(None);
        }
        trials += 1;
        Ok(Some(eval_at(f, x0, dir, alpha)?))
    };

    let mut prev = Evaluation {
        alpha: 0.0,
        x: x0.clone(),
        value: f0,
        grad: g0.clone(),
        slope: slope0,
    };
    let mut alpha = 1.0;

    // Bracketing: grow the step until the minimum is trapped or the
    // curvature condition is met outright.
    let (mut lo, mut hi) = loop {
        let cur = match probe(f, alpha)? {
            Some(e) => e,
            None => return Ok(None),
        };
        let overshoot =
            !cur.value.is_finite() || !armijo(&cur) || (prev.alpha > 0.0 && cur.value >= prev.value);
        if overshoot {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        alpha = cur.alpha * 2.0;
        prev = cur;
    };

    // Zoom: lo always satisfies Armijo with the lowest value seen; hi
    // bounds the other side of the minimum.
    loop {
        let cand_alpha = zoom_candidate(&lo, &hi);
        if !cand_alpha.is_finite() || (cand_alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs()
        {
            // Interval collapsed without a Wolfe point (tolerance-level
            // flatness); accept lo if it at least decreases.
            return Ok((lo.alpha > 0.0 && lo.value < f0).then_some(lo));
        }
        let cur = match probe(f, cand_alpha)? {
            Some(e) => e,
            None => {
                return Ok((lo.alpha > 0.0 && lo.value < f0).then_some(lo));
            }
        };
        if !cur.value.is_finite() || !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

/// Minimizes a smooth function with L-BFGS.
///
/// `f_and_grad` must return the objective and its gradient; both have
/// to be finite at `x0`. On a line-search failure the best accepted
/// iterate is returned with the failure flagged in `termination`,
/// because a partially refined trajectory is still usable.
pub fn lbfgs_minimize<F>(
    mut f_and_grad: F,
    x0: &DVector<f64>,
    config: &LbfgsConfig,
) -> Result<MinimizeResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    config.validate()?;
    let (mut fx, mut g) = f_and_grad(x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization(
            "objective or gradient is not finite at the starting point".into(),
        ));
    }
    let mut x = x0.clone();
    let mut trace = vec![TraceEntry {
        iteration: 0,
        objective: fx,
        gradient_norm: g.norm(),
    }];

    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> =
        VecDeque::with_capacity(config.memory);
    let mut termination = Termination::MaxIterations;

    if g.norm() <= config.gradient_tolerance {
        termination = Termination::Converged;
    } else {
        for iteration in 1..=config.max_iterations {
            // Two-loop recursion: implicit product of the inverse
            // Hessian estimate with the gradient.
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(history.len());
            for (s, y, rho) in history.iter().rev() {
                let a = rho * s.dot(&q);
                q.axpy(-a, y, 1.0);
                alphas.push(a);
            }
            let gamma = history
                .back()
                .map(|(s, y, _)| s.dot(y) / y.dot(y))
                .unwrap_or(1.0);
            let mut dir = q * gamma;
            for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
                let b = rho * y.dot(&dir);
                dir.axpy(a - b, s, 1.0);
            }
            dir.neg_mut();

            if dir.dot(&g) >= 0.0 {
                // The estimate has gone stale enough to stop producing
                // descent directions; restart from steepest descent.
                history.clear();
                dir = -&g;
            }

            let accepted = wolfe_search(&mut f_and_grad, &x, fx, &g, &dir, config)?;
            let e = match accepted {
                Some(e) => e,
                None => {
                    termination = Termination::LineSearchFailure;
                    break;
                }
            };

            let s = &e.x - &x;
            let y = &e.grad - &g;
            let ys = y.dot(&s);
            if ys > 1e-10 * y.norm() * s.norm() {
                if history.len() == config.memory {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / ys));
            }

            let prev_fx = fx;
            x = e.x;
            fx = e.value;
            g = e.grad;
            trace.push(TraceEntry {
                iteration,
                objective: fx,
                gradient_norm: g.norm(),
            });

            if g.norm() <= config.gradient_tolerance {
                termination = Termination::Converged;
                break;
            }
            let decrease = (prev_fx - fx) / prev_fx.abs().max(fx.abs()).max(1.0);
            if decrease <= config.objective_decrease_tolerance {
                termination = Termination::Converged;
                break;
            }
        }
    }

    Ok(MinimizeResult {
        objective: fx,
        gradient_norm: g.norm(),
        termination,
        trace,
        x,
    })
}

/// Output of the problem-level optimizations.
#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub delta: DeltaInput,
    /// Present for joint problems.
    pub robot: Option<RobotTrajectory>,
    pub objective: f64,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
    /// Predicted human states under the optimized perturbations, one
    /// frame per horizon step.
    pub prediction: Trajectory,
}

fn prediction_trajectory(observed: &Trajectory, states: Vec<DVector<f64>>) -> Result<Trajectory> {
    Trajectory::new(observed.frame_rate, observed.layout, states)
}

/// Refines the human prediction alone by minimizing the human-side
/// objective over the perturbations, starting from zero.
pub fn optimize_prediction(
    model: &PredictorModel,
    skel: &Skeleton,
    observed: &Trajectory,
    spec: &ObjectiveSpec,
    config: &LbfgsConfig,
) -> Result<OptimizationResult> {
    let w = &spec.weights;
    if w.robot_goal > 0.0 || w.robot_obstacle > 0.0 || w.smooth > 0.0 || w.interaction > 0.0 {
        return Err(Error::Config(
            "prediction-only optimization requires all robot and interaction weights to be zero"
                .into(),
        ));
    }
    let template = DeltaInput::zeros(spec.horizon, observed.dim());
    let result = lbfgs_minimize(
        |packed: &DVector<f64>| {
            let delta = template.unpack_from(packed)?;
            let eval = total_objective(model, skel, observed, &delta, None, spec)?;
            Ok((eval.value, template.pack_gradient(&eval.d_delta)?))
        },
        &template.pack(),
        config,
    )?;

    let delta = template.unpack_from(&result.x)?;
    let eval = total_objective(model, skel, observed, &delta, None, spec)?;
    Ok(OptimizationResult {
        delta,
        robot: None,
        objective: result.objective,
        termination: result.termination,
        trace: result.trace,
        prediction: prediction_trajectory(observed, eval.rollout.states)?,
    })
}

/// A joint human-robot planning instance.
#[derive(Clone, Debug)]
pub struct JointProblem<'a> {
    pub model: &'a PredictorModel,
    pub skeleton: &'a Skeleton,
    pub observed: &'a Trajectory,
    pub spec: &'a ObjectiveSpec,
    pub robot_start: Vector3<f64>,
    /// Optional warm start; defaults to a straight line from the start
    /// to the robot goal.
    pub robot_init: Option<RobotTrajectory>,
}

/// Minimizes the full objective over the stacked perturbation and
/// robot-step variables.
pub fn optimize_joint(problem: &JointProblem, config: &LbfgsConfig) -> Result<OptimizationResult> {
    let spec = problem.spec;
    let observed = problem.observed;
    let robot0 = match &problem.robot_init {
        Some(r) => {
            if r.start != problem.robot_start {
                return Err(Error::Config(
                    "robot initialization must begin at the robot start state".into(),
                ));
            }
            r.clone()
        }
        None => {
            let goal = spec.robot_goal.ok_or_else(|| {
                Error::Config(
                    "joint problem needs a robot goal or an explicit robot initialization".into(),
                )
            })?;
            RobotTrajectory::straight_line(problem.robot_start, Vector3::from(goal), spec.horizon)
        }
    };
    if robot0.horizon() != spec.horizon {
        return Err(Error::Dimension {
            context: "robot initialization horizon",
            expected: spec.horizon,
            actual: robot0.horizon(),
        });
    }

    let template = DeltaInput::zeros(spec.horizon, observed.dim());
    let n_delta = template.pack().len();
    let n_robot = 3 * spec.horizon;

    let mut z0 = DVector::zeros(n_delta + n_robot);
    z0.rows_mut(n_delta, n_robot).copy_from(&robot0.pack());

    let split = |z: &DVector<f64>| -> Result<(DeltaInput, RobotTrajectory)> {
        let delta = template.unpack_from(&z.rows(0, n_delta).clone_owned())?;
        let robot = robot0.unpack_from(&z.rows(n_delta, n_robot).clone_owned())?;
        Ok((delta, robot))
    };

    let result = lbfgs_minimize(
        |z: &DVector<f64>| {
            let (delta, robot) = split(z)?;
            let eval = total_objective(
                problem.model,
                problem.skeleton,
                observed,
                &delta,
                Some(&robot),
                spec,
            )?;
            let mut grad = DVector::zeros(n_delta + n_robot);
            grad.rows_mut(0, n_delta)
                .copy_from(&template.pack_gradient(&eval.d_delta)?);
            for (t, g) in eval.d_robot.iter().enumerate() {
                grad.fixed_rows_mut::<3>(n_delta + 3 * t).copy_from(g);
            }
            Ok((eval.value, grad))
        },
        &z0,
        config,
    )?;

    let (delta, robot) = split(&result.x)?;
    let eval = total_objective(
        problem.model,
        problem.skeleton,
        observed,
        &delta,
        Some(&robot),
        spec,
    )?;
    Ok(OptimizationResult {
        delta,
        robot: Some(robot),
        objective: result.objective,
        termination: result.termination,
        trace: result.trace,
        prediction: prediction_trajectory(observed, eval.rollout.states)?,
    })
}
