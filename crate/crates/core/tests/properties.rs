//! Randomized invariant checks. These pin the algebraic promises each
//! module makes: conversions invert, kinematics respects rigid maps,
//! distance fields stay metric, and rollouts are causal and
//! deterministic.

use mfo_core::dataio::{load_trajectory_csv, save_trajectory_csv};
use mfo_core::kinematics::{
    expmap_to_quat, fk_positions, quat_from_coords, quat_loss_pair, quat_mul, quat_to_expmap,
    ExpMap, Quat, Skeleton, StateLayout, Trajectory,
};
use mfo_core::model::{rollout, DeltaInput, ModelConfig, PredictorModel};
use mfo_core::scene::{Scene, SdfPrimitive};
use mfo_core::training::loss;
use nalgebra::{DVector, Rotation3, Vector3};
use proptest::prelude::*;

fn vec3(limit: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-limit..limit, -limit..limit, -limit..limit).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Rotation vectors strictly inside the canonical ball.
fn rotation_vec() -> impl Strategy<Value = Vector3<f64>> {
    vec3(std::f64::consts::PI).prop_filter("inside the canonical ball", |v| {
        v.norm() < std::f64::consts::PI * 0.999
    })
}

fn unit_quat() -> impl Strategy<Value = Quat> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("away from the origin", |(w, x, y, z)| {
            (w * w + x * x + y * y + z * z).sqrt() > 0.1
        })
        .prop_map(|(w, x, y, z)| {
            let n = (w * w + x * x + y * y + z * z).sqrt();
            Quat {
                w: w / n,
                x: x / n,
                y: y / n,
                z: z / n,
            }
        })
}

fn human_state(joints: usize) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-1.2f64..1.2, 6 + 3 * joints).prop_map(DVector::from_vec)
}

/// Coordinates on a dyadic grid, so that adding two of them is exact
/// in double precision.
fn dyadic_frames(dim: usize, frames: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    proptest::collection::vec(
        proptest::collection::vec(-1024i64..1024, dim)
            .prop_map(|v| DVector::from_iterator(v.len(), v.into_iter().map(|i| i as f64 / 1024.0))),
        frames,
    )
}

fn primitive() -> impl Strategy<Value = SdfPrimitive> {
    prop_oneof![
        (vec3(2.0), 0.05f64..1.0).prop_map(|(c, r)| SdfPrimitive::Sphere {
            center: [c.x, c.y, c.z],
            radius: r,
        }),
        (vec3(2.0), vec3(1.0)).prop_map(|(c, h)| SdfPrimitive::Box {
            center: [c.x, c.y, c.z],
            half_extents: [h.x.abs() + 0.05, h.y.abs() + 0.05, h.z.abs() + 0.05],
        }),
        (vec3(1.0), rotation_vec()).prop_filter_map("nonzero normal", |(p, n)| {
            let norm = n.norm();
            (norm > 0.1).then(|| SdfPrimitive::HalfSpace {
                point: [p.x, p.y, p.z],
                normal: [n.x / norm, n.y / norm, n.z / norm],
            })
        }),
    ]
}

fn scene() -> impl Strategy<Value = Scene> {
    proptest::collection::vec(primitive(), 1..4)
        .prop_map(|p| Scene::new(p).expect("generated primitives are valid"))
}

proptest! {
    #[test]
    fn quat_round_trip_is_identity_on_canonical_expmaps(v in rotation_vec()) {
        let e = ExpMap::new(v);
        let back = quat_to_expmap(&expmap_to_quat(&e)).unwrap();
        prop_assert!((back.vector() - e.vector()).norm() < 1e-9);
    }

    #[test]
    fn quat_loss_is_symmetric_and_sign_blind(a in unit_quat(), b in unit_quat()) {
        prop_assert_eq!(quat_loss_pair(&a, &b), quat_loss_pair(&b, &a));
        prop_assert_eq!(quat_loss_pair(&a, &b), quat_loss_pair(&a, &b.neg()));
        prop_assert_eq!(quat_loss_pair(&a, &b), quat_loss_pair(&a.neg(), &b));
    }

    #[test]
    fn fk_is_translation_equivariant(state in human_state(20), delta in vec3(3.0)) {
        let skel = Skeleton::default_human();
        let base = fk_positions(&skel, &state).unwrap();
        let mut shifted = state.clone();
        shifted[0] += delta.x;
        shifted[1] += delta.y;
        shifted[2] += delta.z;
        let moved = fk_positions(&skel, &shifted).unwrap();
        for j in 0..skel.n_joints() {
            prop_assert!((moved.positions[j] - base.positions[j] - delta).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_base_rotation_matches_the_matrix_oracle(
        state in human_state(20),
        w in rotation_vec(),
    ) {
        let skel = Skeleton::default_human();
        let before = fk_positions(&skel, &state).unwrap();

        // Pre-compose the base orientation with the extra turn.
        let q_base = quat_from_coords(&Vector3::new(state[3], state[4], state[5]));
        let turned = quat_to_expmap(&quat_mul(&quat_from_coords(&w), &q_base)).unwrap();
        let mut rotated = state.clone();
        rotated[3] = turned.vector().x;
        rotated[4] = turned.vector().y;
        rotated[5] = turned.vector().z;
        let after = fk_positions(&skel, &rotated).unwrap();

        let base_pos = Vector3::new(state[0], state[1], state[2]);
        let oracle = Rotation3::new(w);
        for j in 0..skel.n_joints() {
            let expected = base_pos + oracle * (before.positions[j] - base_pos);
            prop_assert!((after.positions[j] - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn sdf_is_one_lipschitz(s in scene(), p in vec3(4.0), q in vec3(4.0)) {
        let dp = s.sdf_eval(&p);
        let dq = s.sdf_eval(&q);
        prop_assert!((dp - dq).abs() <= (p - q).norm() + 1e-12);
    }

    #[test]
    fn adding_a_primitive_never_increases_the_sdf(
        s in scene(),
        extra in primitive(),
        p in vec3(4.0),
    ) {
        let before = s.sdf_eval(&p);
        let mut prims = s.primitives().to_vec();
        prims.push(extra);
        let after = Scene::new(prims).unwrap().sdf_eval(&p);
        prop_assert!(after <= before + 1e-15);
    }

    #[test]
    fn training_loss_is_nonnegative_and_zero_on_identity(
        frames in dyadic_frames(12, 3),
    ) {
        let other: Vec<DVector<f64>> =
            frames.iter().map(|f| f.map(|x| x + 0.25)).collect();
        prop_assert!(loss(&frames, &other).unwrap() >= 0.0);
        prop_assert_eq!(loss(&frames, &frames).unwrap(), 0.0);
    }
}

fn tiny_model(seed: u64) -> PredictorModel {
    PredictorModel::random_init(ModelConfig::test_scale(12), seed).unwrap()
}

fn observed_from(frames: Vec<DVector<f64>>) -> Trajectory {
    Trajectory::new(30.0, StateLayout::Human { joints: 2 }, frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_are_deterministic(
        frames in dyadic_frames(12, 4),
        seed in 0u64..1000,
    ) {
        let model = tiny_model(seed);
        let observed = observed_from(frames);
        let delta = DeltaInput::zeros(5, 12);
        let a = rollout(&model, &observed, &delta, 5).unwrap();
        let b = rollout(&model, &observed, &delta, 5).unwrap();
        prop_assert_eq!(&a.states, &b.states);
        prop_assert_eq!(&a.velocities, &b.velocities);
    }

    #[test]
    fn perturbations_are_causal(
        frames in dyadic_frames(12, 4),
        k in 0usize..6,
        bump in -1.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let model = tiny_model(seed);
        let observed = observed_from(frames);
        let horizon = 6;
        let clean = rollout(&model, &observed, &DeltaInput::zeros(horizon, 12), horizon).unwrap();

        let mut steps = vec![DVector::zeros(12); horizon];
        steps[k][7] = bump;
        let delta = DeltaInput::new(steps, None).unwrap();
        let poked = rollout(&model, &observed, &delta, horizon).unwrap();

        // Steps before k are bitwise untouched.
        for t in 0..k {
            prop_assert_eq!(&clean.states[t], &poked.states[t]);
        }
    }

    #[test]
    fn states_advance_by_exactly_the_emitted_velocity(
        frames in dyadic_frames(12, 4),
        seed in 0u64..1000,
    ) {
        let model = tiny_model(seed);
        let observed = observed_from(frames.clone());
        let horizon = 5;
        let r = rollout(&model, &observed, &DeltaInput::zeros(horizon, 12), horizon).unwrap();
        let mut prev = frames.last().unwrap().clone();
        for k in 0..horizon {
            let residual = (&r.states[k] - &prev - &r.velocities[k]).amax();
            prop_assert!(residual < 1e-12, "residual {residual}");
            prev = r.states[k].clone();
        }
    }

    #[test]
    fn predictions_ignore_where_the_motion_happens(
        frames in dyadic_frames(12, 4),
        dx in -1024i64..1024,
        dy in -1024i64..1024,
        seed in 0u64..1000,
    ) {
        // Base positions never enter the recurrent input and dyadic
        // shifts keep the velocity inputs bit-identical, so joint
        // angle predictions must not change at all and the base must
        // shift along.
        let model = tiny_model(seed);
        let delta = Vector3::new(dx as f64 / 1024.0, dy as f64 / 1024.0, 0.0);
        let horizon = 5;

        let observed = observed_from(frames.clone());
        let a = rollout(&model, &observed, &DeltaInput::zeros(horizon, 12), horizon).unwrap();

        let shifted_frames: Vec<DVector<f64>> = frames
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g[0] += delta.x;
                g[1] += delta.y;
                g[2] += delta.z;
                g
            })
            .collect();
        let shifted = observed_from(shifted_frames);
        let b = rollout(&model, &shifted, &DeltaInput::zeros(horizon, 12), horizon).unwrap();

        for (sa, sb) in a.states.iter().zip(&b.states) {
            for i in 3..12 {
                prop_assert_eq!(sa[i], sb[i], "non-base coordinate {} moved", i);
            }
            let moved = Vector3::new(sb[0] - sa[0], sb[1] - sa[1], sb[2] - sa[2]);
            prop_assert!((moved - delta).norm() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trajectory_files_round_trip_random_contents(
        frames in dyadic_frames(12, 6),
        scale in 0.001f64..1000.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let scaled: Vec<DVector<f64>> = frames.iter().map(|f| f * scale).collect();
        let traj = observed_from(scaled);
        let skel = two_joint_named();
        let path = dir.path().join("t.csv");
        save_trajectory_csv(&path, &traj, Some(&skel)).unwrap();
        let back = load_trajectory_csv(&path).unwrap();
        prop_assert_eq!(back.frames, traj.frames);
    }
}

fn two_joint_named() -> Skeleton {
    Skeleton::two_joint_arm()
}
