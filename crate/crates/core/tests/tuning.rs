use etherm::equilibrium::OperatingPoint;
use etherm::tuner::{max_real_pole, Axis, GridSpec, DEFAULT_GAMMA0, DEFAULT_TS0};
use etherm::{
    find_equilibrium, linearize, plant_transfer, stability_region, tune, DelayedLinearModel, Feedback, PidParams,
    SystemParams,
};
use nalgebra::{Matrix4, RowVector3};
use proptest::prelude::*;

fn model() -> DelayedLinearModel {
    let p = SystemParams::default();
    let eq = find_equilibrium(&p, &OperatingPoint::rated()).unwrap();
    linearize(&p, &eq).unwrap()
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn scans_do_not_depend_on_worker_count() {
    let m = model();
    let grid = GridSpec::default();
    for fb in [Feedback::AfterStack, Feedback::BeforeStack] {
        let serial = pool(1).install(|| stability_region(&m, fb, &grid, 0.0).unwrap());
        let parallel = pool(4).install(|| stability_region(&m, fb, &grid, 0.0).unwrap());
        assert_eq!(serial.to_csv(), parallel.to_csv());
    }
    let small = GridSpec {
        kp: Axis::log(1e-2, 1e-1, 4),
        ..GridSpec::default()
    };
    let a = pool(1).install(|| tune(&m, Feedback::AfterStack, &small, DEFAULT_GAMMA0, DEFAULT_TS0).unwrap());
    let b = pool(3).install(|| tune(&m, Feedback::AfterStack, &small, DEFAULT_GAMMA0, DEFAULT_TS0).unwrap());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

/// Without delays the PI loop is a 4-state linear system; its eigenvalues are the closed-loop poles.
fn state_space_max_real(m: &DelayedLinearModel, pid: &PidParams) -> f64 {
    let c = match pid.feedback {
        Feedback::AfterStack => RowVector3::new(1.0, 0.0, 0.0),
        Feedback::BeforeStack => RowVector3::new(0.0, 1.0, 0.0),
    };
    let a = m.a + m.a1 + m.e2 * c * pid.kp;
    let mut k = Matrix4::zeros();
    k.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
    k.fixed_view_mut::<3, 1>(0, 3).copy_from(&(m.e2 * pid.ki));
    k.fixed_view_mut::<1, 3>(3, 0).copy_from(&c);
    k.complex_eigenvalues().iter().map(|z| z.re).fold(f64::MIN, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_delay_poles_match_state_space(
        lkp in -3.0f64..0.0, lki in -6.0f64..-3.0, before in any::<bool>(),
    ) {
        let m = model().with_delays(0.0, 0.0);
        let feedback = if before { Feedback::BeforeStack } else { Feedback::AfterStack };
        let pid = PidParams::new(10f64.powf(lkp), 10f64.powf(lki), 0.0, feedback);
        let plant = plant_transfer(&m, feedback).unwrap();
        let got = max_real_pole(&plant, &pid).unwrap();
        let want = state_space_max_real(&m, &pid);
        prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-5), "{} vs {}", got, want);
    }

    #[test]
    fn larger_margin_never_adds_stable_points(margin in 0.0f64..1e-3) {
        let m = model();
        let grid = GridSpec { kp: Axis::log(1e-3, 1.0, 5), ki: Axis::log(1e-6, 1e-3, 5), kd: Axis::fixed(0.0) };
        let loose = stability_region(&m, Feedback::AfterStack, &grid, 0.0).unwrap();
        let tight = stability_region(&m, Feedback::AfterStack, &grid, margin).unwrap();
        for (l, t) in loose.rows.iter().zip(&tight.rows) {
            prop_assert!(!t.stable || l.stable);
        }
    }
}
