mod common;

use obsent::dynamics::time_reverse_state;
use obsent::entropy::{equilibrium_state, obs_entropy};
use obsent::graining::energy_graining;
use obsent::linalg::{ComplexMatrix, HermitianOperator, C64};
use obsent::thermo::{effective_beta, gibbs_entropy, gibbs_weights, grand_entropy, grand_weights, heat_capacity};
use proptest::prelude::*;
use rand::Rng;

fn real_hermitian(rng: &mut impl Rng, n: usize) -> HermitianOperator {
    let a = ComplexMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), 0.0));
    HermitianOperator::new(a.add(&a.transpose()).scale_real(0.5)).unwrap()
}

fn moments(e: &[f64], n: &[f64], beta: f64, alpha: f64) -> (f64, f64) {
    let w = grand_weights(e, n, beta, alpha);
    (w.iter().zip(e).map(|(p, x)| p * x).sum(), w.iter().zip(n).map(|(p, x)| p * x).sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn beta_star_decreases_with_energy(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let h = common::hermitian(&mut r, 12);
        let s = h.spectrum().unwrap();
        let (lo, hi) = (s.min(), s.max());
        let mut last = f64::INFINITY;
        for k in 1..40 {
            let u = lo + (hi - lo) * k as f64 / 40.0;
            let b = effective_beta(&h, u).unwrap();
            prop_assert!(b.beta_star < last);
            prop_assert!(b.residual.abs() <= 1e-9);
            last = b.beta_star;
        }
    }

    #[test]
    fn heat_capacity_is_energy_derivative(seed in any::<u64>(), beta in 0.1f64..3.0) {
        let mut r = common::rng(seed);
        let h = common::hermitian(&mut r, 6);
        let e = h.spectrum().unwrap().values.clone();
        let u = |b: f64| gibbs_weights(&e, b).iter().zip(&e).map(|(p, x)| p * x).sum::<f64>();
        let step = 1e-5;
        let fd = -beta * beta * (u(beta + step) - u(beta - step)) / (2.0 * step);
        let c = heat_capacity(&h, beta).unwrap();
        prop_assert!((c - fd).abs() <= 1e-4 * c.abs().max(1e-3));
    }

    #[test]
    fn grand_entropy_differential(seed in any::<u64>(), beta in 0.2f64..2.0, mu in -1.0f64..1.0) {
        let mut r = common::rng(seed);
        let e: Vec<f64> = (0..10).map(|_| r.gen_range(-2.0..2.0)).collect();
        let n: Vec<f64> = (0..10).map(|_| r.gen_range(0..4) as f64).collect();
        let alpha = beta * mu;
        let step = 1e-5;
        for (db, da) in [(step, 0.0), (0.0, step)] {
            let ds = grand_entropy(&e, &n, beta + db, alpha + da) - grand_entropy(&e, &n, beta - db, alpha - da);
            let (u1, n1) = moments(&e, &n, beta + db, alpha + da);
            let (u0, n0) = moments(&e, &n, beta - db, alpha - da);
            let rhs = beta * (u1 - u0) - alpha * (n1 - n0);
            prop_assert!((ds - rhs).abs() <= 1e-4 * ds.abs().max(1e-6), "{ds} vs {rhs}");
        }
    }

    #[test]
    fn gibbs_state_maximizes_resolved_entropy(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = common::dim(&mut r, 2, 12);
        let h = common::hermitian(&mut r, n);
        let x = energy_graining(&h, 1e-7, None).unwrap();
        let rho = common::mixed_density(&mut r, n);
        let b = effective_beta(&h, h.expectation(&rho).unwrap()).unwrap();
        let bound = gibbs_entropy(&h.spectrum().unwrap().values, b.beta_star);
        prop_assert!(obs_entropy(&rho, &x).unwrap() <= bound + 1e-9);
    }

    #[test]
    fn real_equilibrium_states_are_reversal_invariant(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = common::dim(&mut r, 2, 16);
        let h = real_hermitian(&mut r, n);
        let x = energy_graining(&h, 0.3, None).unwrap();
        let rho = equilibrium_state(&x, &common::probabilities(&mut r, x.len())).unwrap();
        prop_assert!(time_reverse_state(&rho).matrix().max_abs_diff(rho.matrix()) <= 1e-10);
    }
}
