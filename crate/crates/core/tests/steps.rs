mod common;

use common::{gaussian, instance, rng, weights};
use lewis_core::steps::{parallel_pass_bound, round_parallel_from, SequentialRound};
use lewis_core::verify::objective_difference;
use lewis_core::*;
use proptest::prelude::*;
use rand::Rng;

fn f(a: &DenseMatrix, w: &[f64], params: &AlphaParams) -> f64 {
    objective_value(a, &WeightVector::optimizer(w.to_vec()).unwrap(), params).unwrap()
}

#[test]
fn descent_example() {
    let a = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
    let params = AlphaParams::new(4.0).unwrap();
    let w = WeightVector::optimizer(vec![1.0, 1.0]).unwrap();
    let r = rho(&a, &w, &params).unwrap();
    let out = descent_step(&w, &r, &[0, 1], &StepSizes::full(2, &params)).unwrap();
    for v in out.as_slice() {
        assert!((v - 8.0 / 9.0).abs() < 1e-15);
    }
    let out = descent_step(&w, &r, &[1], &StepSizes::full(2, &params)).unwrap();
    assert_eq!(out.as_slice()[0], 1.0);
}

#[test]
fn oversized_step_rejected() {
    let params = AlphaParams::new(3.0).unwrap();
    assert!(matches!(
        StepSizes::new(vec![0.1, 0.2], &params),
        Err(LewisError::InvalidStepSize { .. })
    ));
    assert!(StepSizes::new(vec![0.1, 1.0 / 6.0], &params).is_ok());
}

#[test]
fn round_parallel_on_small_triangle() {
    let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let params = AlphaParams::new(4.0).unwrap();
    let w = WeightVector::optimizer(vec![0.01; 3]).unwrap();
    let out = round_parallel(&a, &w, &params).unwrap();
    assert!(rho(&a, &out, &params).unwrap().max() <= 2.0 * (1.0 + 1e-12));
    assert!(f(&a, out.as_slice(), &params) < f(&a, w.as_slice(), &params));
}

#[test]
fn round_parallel_contracts_rho_each_pass() {
    for (seed, p) in [(1u64, 3.0), (2, 4.0), (3, 8.0), (4, 16.0)] {
        let a = gaussian(30, 4, seed);
        let params = AlphaParams::new(p).unwrap();
        let w: Vec<f64> = weights(30, seed).as_slice().iter().map(|x| 1e-3 * x).collect();
        let ev = Evaluation::new(&a, &w, &params).unwrap();
        let rho0 = ev.rho.max();
        let out = round_parallel_from(&a, ev, &params, FactorMethod::Cholesky, 1.0).unwrap();
        assert!(out.passes as f64 <= parallel_pass_bound(rho0, &params));
        let factor = (1.0 + params.alpha() / (3.0 * params.alpha_bar() * (2.0 + params.alpha()))).powf(params.alpha());
        // coordinates outside C keep rho <= 1+alpha, so the contraction holds up to that floor
        for pair in out.history.windows(2) {
            let bound = (pair[0].rho_max / factor).max(1.0 + params.alpha());
            assert!(pair[1].rho_max <= bound * (1.0 + 1e-12), "p {p}: {pair:?}");
        }
    }
}

#[test]
fn coordinate_delta_examples() {
    let p4 = AlphaParams::new(4.0).unwrap();
    let d = solve_coordinate_delta(2.0, 0.5, &p4).unwrap();
    assert!((d - (-1.5 + 4.25f64.sqrt())).abs() < 1e-15);
    assert_eq!(solve_coordinate_delta(1.0, 0.3, &p4).unwrap(), 0.0);
    let p6 = AlphaParams::new(6.0).unwrap();
    let d = solve_coordinate_delta(3.0, 0.9, &p6).unwrap();
    assert!(((1.0 + 0.9 * d) * (1.0 + d).sqrt() - 3.0).abs() <= 3e-12);
}

#[test]
fn coordinate_change_matches_recomputed_objective() {
    let a = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
    let params = AlphaParams::new(4.0).unwrap();
    let got = coordinate_objective_delta(1.0, 0.5, 1.0, &params).unwrap();
    let want = f(&a, &[2.0, 1.0], &params) - f(&a, &[1.0, 1.0], &params);
    assert!((got - want).abs() <= 1e-10);
    assert_eq!(coordinate_objective_delta(0.7, 0.3, 0.0, &params).unwrap(), 0.0);
}

#[test]
fn round_sequential_on_small_triangle() {
    let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let params = AlphaParams::new(4.0).unwrap();
    let mut sweep = SequentialRound::new(&a, &[0.1; 3], &params, FactorMethod::Cholesky).unwrap();
    while let Some(step) = sweep.step().unwrap() {
        let r = rho(&a, &WeightVector::optimizer(sweep.weights().to_vec()).unwrap(), &params).unwrap();
        assert!(r.as_slice()[step.index] <= 1.0 + 1e-9);
    }
    let out = sweep.finish().unwrap();
    assert!(rho(&a, &WeightVector::optimizer(out.weights).unwrap(), &params).unwrap().max() <= 2.0);
}

#[test]
fn single_violation_touches_one_coordinate() {
    let a = gaussian(10, 3, 8);
    let params = AlphaParams::new(4.0).unwrap();
    let (w_star, _) = oracle_solve(&a, 4.0, 1e-12).unwrap();
    // scaled up from the optimum every rho is below one; then push one back above
    let mut w: Vec<f64> = w_star.as_slice().iter().map(|x| 1.3 * x).collect();
    w[4] *= 0.2;
    let r = rho(&a, &WeightVector::optimizer(w.clone()).unwrap(), &params).unwrap();
    let above: Vec<usize> = (0..10).filter(|&i| r.as_slice()[i] >= 1.0 - 1e-14).collect();
    assert_eq!(above, vec![4]);
    let out = round_sequential(&a, &WeightVector::optimizer(w.clone()).unwrap(), &params).unwrap();
    for i in 0..10 {
        if i != 4 {
            assert_eq!(out.as_slice()[i].to_bits(), w[i].to_bits());
        }
    }
}

#[test]
fn rounding_condition_examples() {
    let p4 = AlphaParams::new(4.0).unwrap();
    assert!(rounding_condition(&RhoVector::new(vec![1.0, 1.0]).unwrap(), &p4));
    assert!(rounding_condition(&RhoVector::new(vec![2.0, 0.1]).unwrap(), &p4));
    assert!(!rounding_condition(&RhoVector::new(vec![2.5, 0.1]).unwrap(), &p4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn descent_decreases_objective_by_lemma_amount(seed in any::<u64>(), p in 2.5f64..30.0) {
        let (a, w) = instance(seed, 12, 4);
        let params = AlphaParams::new(p).unwrap();
        let mut r = rng(seed);
        let coords: Vec<usize> = (0..a.rows()).filter(|_| r.random_bool(0.7)).collect();
        let eta: Vec<f64> = (0..a.rows()).map(|_| r.random_range(0.0..=params.max_step())).collect();
        let ev = Evaluation::new(&a, w.as_slice(), &params).unwrap();
        let out = descent_step(&w, &ev.rho, &coords, &StepSizes::new(eta.clone(), &params).unwrap()).unwrap();
        let promised: f64 = coords
            .iter()
            .map(|&i| {
                let ri = ev.rho.as_slice()[i];
                eta[i] / 2.0 * ev.powered[i] * (ri - 1.0).powi(2) / (ri + 1.0)
            })
            .sum();
        let change = objective_difference(&a, &out, &w, &params).unwrap();
        prop_assert!(change <= -promised + 1e-9, "change {change}, promised {promised}");
        for i in 0..a.rows() {
            if !coords.contains(&i) {
                prop_assert_eq!(out.as_slice()[i], w.as_slice()[i]);
            }
        }
    }

    #[test]
    fn round_parallel_outcome(seed in any::<u64>(), p in 2.5f64..30.0, shrink in -4.0f64..0.0) {
        let (a, w) = instance(seed, 12, 4);
        let params = AlphaParams::new(p).unwrap();
        let w = WeightVector::optimizer(w.as_slice().iter().map(|x| x * 10f64.powf(shrink)).collect()).unwrap();
        let out = round_parallel(&a, &w, &params).unwrap();
        prop_assert!(rounding_condition(&rho(&a, &out, &params).unwrap(), &params));
        prop_assert!(objective_difference(&a, &out, &w, &params).unwrap() <= 1e-9);
        for (x, y) in out.as_slice().iter().zip(w.as_slice()) {
            prop_assert!(x >= y);
        }
    }

    #[test]
    fn sequential_steps_follow_coordinate_lemma(seed in any::<u64>(), p in 2.5f64..30.0, shrink in -3.0f64..0.0) {
        let (a, w) = instance(seed, 12, 4);
        let params = AlphaParams::new(p).unwrap();
        let w: Vec<f64> = w.as_slice().iter().map(|x| x * 10f64.powf(shrink)).collect();
        let mut sweep = SequentialRound::new(&a, &w, &params, FactorMethod::Cholesky).unwrap();
        let mut before = Evaluation::new(&a, &w, &params).unwrap();
        while let Some(step) = sweep.step().unwrap() {
            let after = Evaluation::new(&a, sweep.weights(), &params).unwrap();
            let rb = before.rho.as_slice();
            let ra = after.rho.as_slice();
            prop_assert!(ra[step.index] <= 1.0 + 1e-8, "rho_i after step {}", ra[step.index]);
            for j in 0..rb.len() {
                if j != step.index {
                    prop_assert!(ra[j] <= rb[j] * (1.0 + 1e-10), "rho_{j} grew {} -> {}", rb[j], ra[j]);
                }
            }
            prop_assert!(step.objective_change <= 0.0);
            prop_assert!((after.objective - before.objective - step.objective_change).abs() <= 1e-10 * (1.0 + after.objective.abs()));
            before = after;
        }
        let out = sweep.finish().unwrap();
        prop_assert!(rounding_condition(&rho(&a, &WeightVector::optimizer(out.weights).unwrap(), &params).unwrap(), &params));
    }

    #[test]
    fn coordinate_delta_solves_its_equation(rho_i in 1.0f64..1e6, sigma in 1e-6f64..=1.0, p in 2.2f64..100.0) {
        let params = AlphaParams::new(p).unwrap();
        let d = solve_coordinate_delta(rho_i, sigma, &params).unwrap();
        prop_assert!(d >= 0.0);
        let g = (1.0 + d * sigma) * (1.0 + d).powf(params.alpha());
        prop_assert!((g - rho_i).abs() <= 1e-12 * rho_i, "g {g} rho {rho_i}");
    }

    #[test]
    fn rounded_points_satisfy_containment(seed in any::<u64>(), p in 2.5f64..30.0, sequential in any::<bool>()) {
        let (a, w) = instance(seed, 12, 4);
        let params = AlphaParams::new(p).unwrap();
        let out = if sequential {
            round_sequential(&a, &w, &params).unwrap()
        } else {
            round_parallel(&a, &w, &params).unwrap()
        };
        prop_assert!(ellipsoid_containment(&a, &out, &params, 100, &mut rng(seed)).unwrap());
    }
}
