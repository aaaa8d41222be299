use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use twoaxis::bell::{build_measurement, chsh_with_angles, correlator, ZeroSign};
use twoaxis::entanglement::{reduced_density_of, sector_entropy, von_neumann_entropy};
use twoaxis::evolution::{
    build_sector_hamiltonian, full_index, HamiltonianKind, JointState, Propagator,
};
use twoaxis::observables::{expectation, variance, Ensemble, TwoSpinObservable};
use twoaxis::spin_core::{
    build_operator, rotation_matrix_element, sy_rotation_matrix, OperatorLabel, SpinSpace,
};
use twoaxis::wigner::{multipole, multipole_pure};
use twoaxis::C64;

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn unit_vector(raw: &[(f64, f64)]) -> Vec<C64> {
    let v: Vec<C64> = raw.iter().map(|&(a, b)| C64::new(a, b)).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

fn nonzero_components(len: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), len).prop_filter("non-zero", |v| {
        v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3)
    })
}

fn random_hermitian(n: usize, raw: &[(f64, f64)]) -> DMatrix<C64> {
    let d = n + 1;
    let a = DMatrix::from_fn(d, d, |i, j| {
        let (re, im) = raw[i * d + j];
        C64::new(re, im)
    });
    let h = &a + a.adjoint();
    let trace: C64 = (0..d).map(|i| h[(i, i)]).sum();
    h / C64::new(trace.re.abs().max(1.0), 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn commutators_hold_for_all_sizes(n in 1usize..24) {
        let space = SpinSpace::new(n).unwrap();
        let op = |l| build_operator(space, l).unwrap().matrix;
        let (sx, sy, sz) = (op(OperatorLabel::Sx), op(OperatorLabel::Sy), op(OperatorLabel::Sz));
        let (xt, yt) = (op(OperatorLabel::SxTilde), op(OperatorLabel::SyTilde));
        let two_i = C64::new(0.0, 2.0);
        let c = |a: &DMatrix<C64>, b: &DMatrix<C64>| a * b - b * a;
        prop_assert!(max_abs(&(c(&sx, &sy) - &sz * two_i)) <= 1e-12 * n as f64 * n as f64 + 1e-12);
        prop_assert!(max_abs(&(c(&sy, &sz) - &sx * two_i)) <= 1e-12 * n as f64 * n as f64 + 1e-12);
        prop_assert!(max_abs(&(c(&sz, &sx) - &sy * two_i)) <= 1e-12 * n as f64 * n as f64 + 1e-12);
        prop_assert!(max_abs(&(c(&xt, &yt) - &sz * two_i)) <= 1e-12 * n as f64 * n as f64 + 1e-12);
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        prop_assert!(max_abs(&(&xt - (&sx + &sy) * s)) <= 1e-12 * n as f64);
        prop_assert!(max_abs(&(&yt - (&sy - &sx) * s)) <= 1e-12 * n as f64);
    }

    #[test]
    fn ladder_operators_shift_by_one(n in 1usize..40) {
        let space = SpinSpace::new(n).unwrap();
        let sx = build_operator(space, OperatorLabel::Sx).unwrap().matrix;
        for i in 0..=n {
            for j in 0..=n {
                if i.abs_diff(j) != 1 {
                    prop_assert_eq!(sx[(i, j)], C64::new(0.0, 0.0));
                } else {
                    let k = i.min(j);
                    let expected = (((k + 1) * (n - k)) as f64).sqrt();
                    prop_assert!((sx[(i, j)].re - expected).abs() <= 1e-12 * expected);
                }
            }
        }
    }

    #[test]
    fn spectral_rotation_is_orthogonal(n in 1usize..=200, theta in -PI..PI) {
        let d = sy_rotation_matrix(n, theta).unwrap();
        let defect = (d.transpose() * &d - DMatrix::<f64>::identity(n + 1, n + 1)).amax();
        prop_assert!(defect <= 1e-10, "defect {defect:e}");
    }

    #[test]
    fn closed_form_rotation_is_orthogonal_at_moderate_n(n in 1usize..=30, theta in -PI..PI) {
        let d = DMatrix::from_fn(n + 1, n + 1, |k, kp| rotation_matrix_element(n, k, kp, theta).unwrap());
        let defect = (d.transpose() * &d - DMatrix::<f64>::identity(n + 1, n + 1)).amax();
        prop_assert!(defect <= 1e-10, "defect {defect:e}");
    }

    #[test]
    fn evolution_preserves_norm(n in 1usize..=200, tau in 0.0..10.0f64) {
        let s = Propagator::sector(n).unwrap().evolve(tau);
        prop_assert!((s.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn full_space_evolution_stays_in_sector(n in 1usize..=6, tau in 0.0..3.0f64) {
        let s = Propagator::full(n, HamiltonianKind::TwoAxisTwoSpin).unwrap().evolve(tau);
        let v = s.to_full().unwrap();
        for k1 in 0..=n {
            for k2 in 0..=n {
                if k1 != k2 {
                    prop_assert!(v[full_index(n, k1, k2)].norm() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn evolution_composes(n in 1usize..=60, t1 in 0.0..2.0f64, t2 in 0.0..2.0f64) {
        let p = Propagator::sector(n).unwrap();
        let two_step = p.propagate(&p.evolve(t1), t2).unwrap();
        let one_step = p.evolve(t1 + t2);
        let a = two_step.sector_amplitudes().unwrap();
        let b = one_step.sector_amplitudes().unwrap();
        let dev = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        prop_assert!(dev <= 1e-10, "deviation {dev:e}");
    }

    #[test]
    fn uncertainty_products_bounded(n in 1usize..=60, tau in 0.0..5.0f64) {
        let s = Propagator::sector(n).unwrap().evolve(tau);
        let sz = expectation(&s, OperatorLabel::Sz, Ensemble::First).unwrap();
        let bound = (2.0 * sz).powi(2);
        let tol = 1e-9 * (n * n) as f64;
        let sq_x = variance(&s, &TwoSpinObservable::squeezed_x());
        let sq_y = variance(&s, &TwoSpinObservable::squeezed_y());
        let asq_x = variance(&s, &TwoSpinObservable::antisqueezed_x());
        let asq_y = variance(&s, &TwoSpinObservable::antisqueezed_y());
        prop_assert!(sq_x * asq_y >= bound - tol);
        prop_assert!(asq_x * sq_y >= bound - tol);
        prop_assert!((sq_x - sq_y).abs() <= 1e-9 * n as f64);
        prop_assert!((asq_x - asq_y).abs() <= 1e-9 * n as f64);
    }

    #[test]
    fn entropy_same_from_either_side(n in 1usize..=4, raw in nonzero_components(25)) {
        let d = (n + 1) * (n + 1);
        let state = JointState::from_full(n, unit_vector(&raw[..d])).unwrap();
        let e1 = von_neumann_entropy(&reduced_density_of(&state, Ensemble::First)).unwrap();
        let e2 = von_neumann_entropy(&reduced_density_of(&state, Ensemble::Second)).unwrap();
        prop_assert!((e1 - e2).abs() <= 1e-9);
    }

    #[test]
    fn sector_entropy_matches_reduced_density(n in 1usize..=40, tau in 0.0..3.0f64) {
        let s = Propagator::sector(n).unwrap().evolve(tau);
        let direct = sector_entropy(s.sector_amplitudes().unwrap());
        let e1 = von_neumann_entropy(&reduced_density_of(&s, Ensemble::First)).unwrap();
        prop_assert!((direct - e1).abs() <= 1e-9);
    }

    #[test]
    fn correlators_are_bounded(
        n in 1usize..=12,
        tau in 0.0..2.0f64,
        t1 in -PI..PI,
        t2 in -PI..PI,
        zero in prop_oneof![Just(ZeroSign::Plus), Just(ZeroSign::Minus), Just(ZeroSign::Zero)],
    ) {
        let s = Propagator::sector(n).unwrap().evolve(tau);
        let space = s.space();
        let e = correlator(&s, &build_measurement(space, t1, zero), &build_measurement(space, t2, zero));
        prop_assert!(e.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn chsh_covariant_under_global_rotation(n in 1usize..=6, tau in 0.0..1.0f64, alpha in -PI..PI, tb in 0.0..PI) {
        let s = Propagator::sector(n).unwrap().evolve(tau);
        let c = s.sector_amplitudes().unwrap();
        // exp(-i (Sz1 + Sz2) α / 2) on |k, k>
        let rotated: Vec<C64> = c
            .iter()
            .enumerate()
            .map(|(k, z)| z * C64::from_polar(1.0, -(2.0 * k as f64 - n as f64) * alpha))
            .collect();
        let r = JointState::from_sector(n, rotated).unwrap();
        let base = [0.0, tb, tb / 2.0, -tb / 2.0];
        let a = chsh_with_angles(&s, base, ZeroSign::Plus);
        let b = chsh_with_angles(&r, base.map(|t| t + alpha), ZeroSign::Plus);
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn multipoles_of_hermitian_input(n in 1usize..=8, raw in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 81)) {
        let rho = random_hermitian(n, &raw);
        let m = multipole(&rho).unwrap();
        for l in 0..=n {
            for q in 1..=l as i64 {
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                prop_assert!((m.get(l, -q) - m.get(l, q).conj() * sign).norm() <= 1e-10);
            }
            prop_assert!(m.get(l, 0).im.abs() <= 1e-10);
        }
        for (theta, phi) in [(0.3, 1.0), (1.7, -2.2), (2.9, 0.4)] {
            prop_assert!(m.evaluate(theta, phi).im.abs() <= 1e-10);
        }
        let purity = (&rho * &rho).trace().re;
        prop_assert!((m.power() - purity).abs() <= 1e-10 * purity.max(1.0));
    }

    #[test]
    fn wigner_rotates_with_the_state(n in 1usize..=10, raw in nonzero_components(11), alpha in -PI..PI) {
        let v = DVector::from_vec(unit_vector(&raw[..n + 1]));
        let rotated = DVector::from_fn(n + 1, |k, _| v[k] * C64::from_polar(1.0, -(2.0 * k as f64 - n as f64) * alpha / 2.0));
        let w = multipole_pure(&v).unwrap();
        let wr = multipole_pure(&rotated).unwrap();
        for (theta, phi) in [(0.4, 0.1), (1.2, 2.0), (2.5, -1.3)] {
            let shifted = wr.evaluate(theta, phi + alpha).re;
            prop_assert!((shifted - w.evaluate(theta, phi).re).abs() <= 1e-8);
        }
    }
}

#[test]
fn sector_spectrum_is_symmetric() {
    for n in [1, 2, 7, 20, 61, 160] {
        let h = build_sector_hamiltonian(n).unwrap().to_dense();
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(h)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        let scale = ev.last().unwrap().abs().max(1.0);
        for i in 0..ev.len() {
            assert!(
                (ev[i] + ev[ev.len() - 1 - i]).abs() <= 1e-10 * scale,
                "N = {n}"
            );
        }
        if n % 2 == 0 {
            assert!(ev[n / 2].abs() <= 1e-10 * scale);
        }
    }
}
