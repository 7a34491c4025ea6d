use mindgrasp::config::{ArmConfig, SimConfig};
use mindgrasp::scene::kinematics::{forward_kinematics, RobotState};
use mindgrasp::scene::{Protocol, Scene};
use proptest::prelude::*;

type M4 = [[f64; 4]; 4];

fn mul(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn rz(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn ry(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn rx(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0, 0.0], [0.0, c, -s, 0.0], [0.0, s, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn shift(x: f64, z: f64) -> M4 {
    [[1.0, 0.0, 0.0, x], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, z], [0.0, 0.0, 0.0, 1.0]]
}

/// Plain homogeneous-matrix chain, written out independently of the library.
fn reference_chain(arm: &ArmConfig, q: [f64; 6]) -> (M4, M4) {
    let chain = [
        rz(q[0]),
        shift(0.0, arm.shoulder_height),
        ry(q[1]),
        shift(0.0, arm.long_arm),
        ry(q[2]),
        shift(0.0, arm.short_arm),
        rz(q[3]),
        ry(q[4]),
        rx(q[5]),
        shift(arm.palm_offset, 0.0),
    ];
    let palm = chain.iter().fold(shift(0.0, 0.0), |acc, m| mul(&acc, m));
    let camera = mul(&palm, &shift(-arm.camera_offset, 0.0));
    (palm, camera)
}

fn joints_in_limits(arm: &ArmConfig) -> impl Strategy<Value = [f64; 6]> {
    let l = arm.joint_limits;
    (l[0][0]..=l[0][1], l[1][0]..=l[1][1], l[2][0]..=l[2][1], l[3][0]..=l[3][1], l[4][0]..=l[4][1], l[5][0]..=l[5][1])
        .prop_map(|(a, b, c, d, e, f)| [a, b, c, d, e, f])
}

proptest! {
    #[test]
    fn fk_matches_matrix_chain(q in joints_in_limits(&ArmConfig::default())) {
        let arm = ArmConfig::default();
        let poses = forward_kinematics(&arm, &q);
        let (palm, camera) = reference_chain(&arm, q);
        let p = poses.palm_position();
        let c = poses.camera.translation.vector;
        let axis = poses.approach_axis();
        for i in 0..3 {
            prop_assert!((p[i] - palm[i][3]).abs() < 1e-12);
            prop_assert!((c[i] - camera[i][3]).abs() < 1e-12);
            prop_assert!((axis[i] - palm[i][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn palm_stays_within_arm_reach(q in joints_in_limits(&ArmConfig::default())) {
        let arm = ArmConfig::default();
        let p = forward_kinematics(&arm, &q).palm_position();
        let shoulder = nalgebra::Vector3::new(0.0, 0.0, arm.shoulder_height);
        prop_assert!((p - shoulder).norm() <= arm.long_arm + arm.short_arm + arm.palm_offset + 1e-12);
    }

    #[test]
    fn stepping_never_leaves_joint_limits(
        v in prop::array::uniform6(-50.0f64..50.0),
        steps in 1usize..20,
    ) {
        let cfg = SimConfig::default();
        let mut scene = Scene::build(&cfg, Protocol::SetLocations, 3);
        for _ in 0..steps {
            scene.step_in_place(&cfg, &v, cfg.dt);
            prop_assert!(scene.robot.within_limits());
        }
    }

    #[test]
    fn clamping_is_idempotent(q in prop::array::uniform6(-10.0f64..10.0)) {
        let arm = ArmConfig::default();
        let mut robot = RobotState::at_home(&arm);
        robot.joints = q;
        robot.clamp_to_limits();
        prop_assert!(robot.within_limits());
        let once = robot.joints;
        robot.clamp_to_limits();
        prop_assert_eq!(once, robot.joints);
    }
}
