//! Forward kinematics and its analytic derivatives.
//!
//! The cost terms differentiate end-effector positions with respect to
//! the flattened state, so everything here works on the raw state
//! coordinates as they appear in that vector (no re-wrapping), keeping
//! the analytic Jacobians consistent with finite differences of the
//! same function.

use super::skeleton::Skeleton;
use super::SMALL_ANGLE;
use crate::error::{check_dim, Result};
use nalgebra::{DVector, Matrix3, SMatrix, Vector3};

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula, `R = I + a [v]x + b [v]x^2` with
/// `a = sin(theta)/theta`, `b = (1 - cos(theta))/theta^2`.
pub fn rotmat(v: &Vector3<f64>) -> Matrix3<f64> {
    let t2 = v.norm_squared();
    let theta = t2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / t2)
    };
    let k = skew(v);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of the rotation exponential: relates a perturbation of
/// the exponential-map coordinates to the world-frame angular
/// perturbation it induces, `R(v + dv) ~ (I + [J_l dv]x) R(v)`.
pub fn left_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let t2 = v.norm_squared();
    let theta = t2.sqrt();
    let (b, c) = if theta < SMALL_ANGLE {
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    let k = skew(v);
    Matrix3::identity() + k * b + k * k * c
}

/// Jacobian of [`super::expmap_to_quat`]: rows (w, x, y, z), columns the
/// three exponential-map coordinates.
pub fn dquat_dexpmap(v: &Vector3<f64>) -> SMatrix<f64, 4, 3> {
    let t2 = v.norm_squared();
    let theta = t2.sqrt();
    // k = sin(theta/2)/theta and the radial derivative k'(theta)/theta.
    let (k, kp_over_t) = if theta < SMALL_ANGLE {
        (
            0.5 - t2 / 48.0 + t2 * t2 / 3840.0,
            -1.0 / 24.0 + t2 / 960.0,
        )
    } else {
        let half = 0.5 * theta;
        let k = half.sin() / theta;
        (k, (half.cos() / (2.0 * theta) - half.sin() / t2) / theta)
    };
    let mut out = SMatrix::<f64, 4, 3>::zeros();
    // dw/de = -(1/2) sin(theta/2) * v/theta = -(k/2) v.
    for c in 0..3 {
        out[(0, c)] = -0.5 * k * v[c];
    }
    // dvec/de = k I + (k'/theta) v v^T.
    for r in 0..3 {
        for c in 0..3 {
            out[(r + 1, c)] = kp_over_t * v[r] * v[c] + if r == c { k } else { 0.0 };
        }
    }
    out
}

/// World joint placements plus the per-joint world rotations needed by
/// the backward pass.
#[derive(Clone, Debug)]
pub struct FkCache {
    pub positions: Vec<Vector3<f64>>,
    world_rots: Vec<Matrix3<f64>>,
    base_rot_mat: Matrix3<f64>,
}

/// Forward sweep over the tree. The root joint sits at the base
/// position; its world orientation is the base rotation composed with
/// the root joint's own rotation, and every child hangs off its parent
/// by the fixed bone offset expressed in the parent's world frame.
pub fn fk_positions(skel: &Skeleton, state: &DVector<f64>) -> Result<FkCache> {
    check_dim("fk_positions state", skel.state_dim(), state.len())?;
    let base_pos: Vector3<f64> = state.fixed_rows::<3>(0).into();
    let base_rot_mat = rotmat(&state.fixed_rows::<3>(3).into());
    let n = skel.n_joints();
    let mut positions = Vec::with_capacity(n);
    let mut world_rots = Vec::with_capacity(n);
    for (i, joint) in skel.joints().iter().enumerate() {
        let local = rotmat(&state.fixed_rows::<3>(6 + 3 * i).into());
        match joint.parent {
            None => {
                positions.push(base_pos);
                world_rots.push(base_rot_mat * local);
            }
            Some(p) => {
                positions.push(positions[p] + world_rots[p] * joint.offset_vec());
                world_rots.push(world_rots[p] * local);
            }
        }
    }
    Ok(FkCache {
        positions,
        world_rots,
        base_rot_mat,
    })
}

/// Pulls a gradient on one joint's world position back onto the
/// flattened state: identity into the base position block, and
/// `(dp/de)^T upstream` into the base rotation and each ancestor
/// joint's exponential map, using
/// `dp/de = -[p - pivot]x R_parent J_l(e)`.
pub fn fk_vjp(
    skel: &Skeleton,
    state: &DVector<f64>,
    cache: &FkCache,
    target: usize,
    upstream: &Vector3<f64>,
) -> DVector<f64> {
    let mut out = DVector::zeros(state.len());
    out.fixed_rows_mut::<3>(0).copy_from(upstream);
    let p_t = cache.positions[target];

    let mut ancestor = skel.joints()[target].parent;
    while let Some(j) = ancestor {
        let e_j: Vector3<f64> = state.fixed_rows::<3>(6 + 3 * j).into();
        let parent_rot = match skel.joints()[j].parent {
            Some(p) => cache.world_rots[p],
            None => cache.base_rot_mat,
        };
        let dp_de = -skew(&(p_t - cache.positions[j])) * parent_rot * left_jacobian(&e_j);
        let g = dp_de.transpose() * upstream;
        let mut block = out.fixed_rows_mut::<3>(6 + 3 * j);
        block += g;
        ancestor = skel.joints()[j].parent;
    }

    let base_pos: Vector3<f64> = state.fixed_rows::<3>(0).into();
    let e_b: Vector3<f64> = state.fixed_rows::<3>(3).into();
    let dp_db = -skew(&(p_t - base_pos)) * left_jacobian(&e_b);
    let g = dp_db.transpose() * upstream;
    let mut block = out.fixed_rows_mut::<3>(3);
    block += g;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{ExpMap, HumanState};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn rotmat_matches_nalgebra() {
        for v in [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1e-6, -2e-6, 5e-7),
            Vector3::new(0.7, -0.4, 1.2),
            Vector3::new(0.0, PI, 0.0),
        ] {
            let ours = rotmat(&v);
            let theirs = nalgebra::Rotation3::from_scaled_axis(v);
            assert_relative_eq!(ours, *theirs.matrix(), epsilon = 1e-13);
        }
    }

    #[test]
    fn identity_pose_lands_on_offsets() {
        let skel = Skeleton::two_joint_arm();
        let state = HumanState::rest(2).to_vector();
        let fk = fk_positions(&skel, &state).unwrap();
        assert_eq!(fk.positions[0], Vector3::zeros());
        assert_relative_eq!(
            fk.positions[1],
            Vector3::new(0.0, 0.0, -0.4),
            epsilon = 1e-15
        );
    }

    #[test]
    fn base_translation_shifts_everything() {
        let skel = Skeleton::default_human();
        let mut s = HumanState::rest(20);
        let a = fk_positions(&skel, &s.to_vector()).unwrap();
        s.base_pos = Vector3::new(1.0, -2.0, 0.5);
        let b = fk_positions(&skel, &s.to_vector()).unwrap();
        for (pa, pb) in a.positions.iter().zip(&b.positions) {
            assert_relative_eq!(pb - pa, s.base_pos, epsilon = 1e-15);
        }
    }

    #[test]
    fn quarter_base_yaw_rotates_positions() {
        let skel = Skeleton::two_joint_arm();
        let mut s = HumanState::rest(2);
        // Tilt the arm forward so it leaves the rotation axis.
        s.joints[0] = ExpMap::new(Vector3::new(0.0, -PI / 2.0, 0.0));
        let before = fk_positions(&skel, &s.to_vector()).unwrap().positions[1];
        assert_relative_eq!(before, Vector3::new(0.4, 0.0, 0.0), epsilon = 1e-12);
        s.base_rot = ExpMap::new(Vector3::new(0.0, 0.0, PI / 2.0));
        let after = fk_positions(&skel, &s.to_vector()).unwrap().positions[1];
        assert_relative_eq!(after, Vector3::new(0.0, 0.4, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn vjp_base_position_block_is_identity() {
        let skel = Skeleton::default_human();
        let state = HumanState::rest(20).to_vector();
        let cache = fk_positions(&skel, &state).unwrap();
        let up = Vector3::new(0.3, -1.0, 2.0);
        let g = fk_vjp(&skel, &state, &cache, 19, &up);
        assert_eq!(Vector3::from(g.fixed_rows::<3>(0)), up);
    }

    #[test]
    fn vjp_ignores_joints_outside_ancestor_chain() {
        let skel = Skeleton::default_human();
        let state = HumanState::rest(20).to_vector();
        let cache = fk_positions(&skel, &state).unwrap();
        let r_wrist = skel.index_of("r_wrist").unwrap();
        let g = fk_vjp(&skel, &state, &cache, r_wrist, &Vector3::new(1.0, 1.0, 1.0));
        let l_knee = skel.index_of("l_knee").unwrap();
        assert_eq!(
            g.fixed_rows::<3>(6 + 3 * l_knee),
            nalgebra::Vector3::zeros().fixed_rows::<3>(0)
        );
        // The wrist's own rotation does not move the wrist point.
        assert_eq!(
            g.fixed_rows::<3>(6 + 3 * r_wrist),
            nalgebra::Vector3::zeros().fixed_rows::<3>(0)
        );
    }
}
