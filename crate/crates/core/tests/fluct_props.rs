mod common;

use obsent::dynamics::{reversed_protocol, trotter_propagator, Protocol};
use obsent::entropy::{equilibrium_state, obs_entropy};
use obsent::fluct::{
    central_relation_check, detailed_ft_histograms, forward_two_point, ift_average, reversed_two_point, trace_relation_residual,
};
use obsent::graining::{energy_graining, CoarseGraining};
use obsent::tol;
use proptest::prelude::*;
use rand::Rng;

fn random_protocol(rng: &mut impl Rng, n: usize) -> Protocol {
    let segs = (0..3).map(|_| (common::hermitian(rng, n), rng.gen_range(1..4))).collect();
    Protocol::from_segments(rng.gen_range(0.5..3.0), segs, "random").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn member_states_satisfy_the_theorems(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = common::dim(&mut r, 2, 10);
        let x0 = common::graining(&mut r, n);
        let xt = common::graining(&mut r, n);
        let rho0 = common::member(&mut r, &x0);
        let p = random_protocol(&mut r, n);
        let u = trotter_propagator(&p).unwrap();
        let fwd = forward_two_point(&rho0, &u, &x0, &xt).unwrap();
        let ift = ift_average(&fwd);
        prop_assert!(ift.valid);
        prop_assert!((ift.value - 1.0).abs() <= tol::FLUCTUATION);
        let mean = fwd.mean_delta_s();
        prop_assert!(mean >= -1e-9);
        let sigma = obs_entropy(&rho0.unitary_image(&u.matrix).unwrap(), &xt).unwrap() - obs_entropy(&rho0, &x0).unwrap();
        prop_assert!((mean - sigma).abs() <= 1e-8);

        let rev = reversed_two_point(&fwd, &p).unwrap();
        prop_assert!(central_relation_check(&fwd, &rev).unwrap() <= tol::FLUCTUATION);
        prop_assert!((rev.total_probability() - 1.0).abs() <= 1e-10);
        let table = detailed_ft_histograms(&fwd, &rev).unwrap();
        prop_assert!(table.max_relative_error(tol::DETAILED_RATIO_FLOOR) <= tol::DETAILED_RATIO);
    }

    #[test]
    fn trace_relation_holds(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = common::dim(&mut r, 2, 10);
        let x0 = common::graining(&mut r, n);
        let xt = common::graining(&mut r, n);
        let p = random_protocol(&mut r, n);
        let u = trotter_propagator(&p).unwrap().matrix;
        let u_theta = trotter_propagator(&reversed_protocol(&p)).unwrap().matrix;
        prop_assert!(trace_relation_residual(&u, &u_theta, &x0, &xt).unwrap() <= tol::FLUCTUATION);
    }

    #[test]
    fn entropy_change_is_antisymmetric_without_driving(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = common::dim(&mut r, 2, 10);
        let h = common::hermitian(&mut r, n);
        let x: CoarseGraining = energy_graining(&h, 0.4, None).unwrap();
        let rho0 = equilibrium_state(&x, &common::probabilities(&mut r, x.len())).unwrap();
        let p = Protocol::constant(h, 1.7, 3).unwrap();
        let u = trotter_propagator(&p).unwrap();
        let fwd = forward_two_point(&rho0, &u, &x, &x).unwrap();
        let rev = reversed_two_point(&fwd, &p).unwrap();
        let table = detailed_ft_histograms(&fwd, &rev).unwrap();
        prop_assert!(table.equal_initial);
        for e in &fwd.entries {
            let back = rev.entries.iter().find(|b| b.first == e.second && b.second == e.first).unwrap();
            if e.probability > 0.0 {
                prop_assert!((e.delta_s + back.delta_s).abs() <= 1e-12 * e.delta_s.abs().max(1.0));
            }
        }
    }
}
