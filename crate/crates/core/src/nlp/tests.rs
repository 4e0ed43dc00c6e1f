use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diagnostics::sample_interior_point;
use crate::problem::example_document;

pub(crate) fn example_problem() -> ChannelProblem {
    example_document().to_problem().unwrap()
}

pub(crate) fn example_nlp() -> ParametricNlp {
    assemble(&example_problem()).unwrap()
}

fn random_multipliers(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `|a - b| / max(|a|, floor)`.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(floor)
}

fn var(nlp: &ParametricNlp, name: &str, time: usize) -> usize {
    nlp.index_of(nlp.topology().find(name).unwrap(), time).unwrap()
}

#[test]
fn example_sizes() {
    let nlp = example_nlp();
    assert_eq!(nlp.num_hydraulic(), 30);
    assert_eq!(nlp.hydraulic_rows().len(), 30);
    assert_eq!(nlp.num_variables(), 40);
    assert_eq!(nlp.num_constraints(), 30);
    assert!(nlp.variables()[..30].iter().all(|v| v.hydraulic));
    assert!(nlp.variables()[30..].iter().all(|v| !v.hydraulic));
    let kkt = nlp
        .kkt_matrix(&nlp.cold_start(), &vec![0.0; 30], 0.1, 0.0)
        .unwrap();
    assert_eq!(kkt.matrix.nrows(), 70);
    assert_eq!(kkt.rhs.len(), 70);
}

#[test]
fn time_major_ordering() {
    let nlp = example_nlp();
    let names: Vec<String> = (0..6).map(|k| nlp.variable_name(k)).collect();
    assert_eq!(names, ["H1(t1)", "Q2(t1)", "H2(t1)", "H1(t2)", "Q2(t2)", "H2(t2)"]);
    assert_eq!(nlp.variable_name(30), "Q3(t1)");
    assert_eq!(nlp.variable_name(39), "Q3(t10)");
}

#[test]
fn one_variable_constraints_become_bounds() {
    let nlp = example_nlp();
    assert!(nlp.extra_rows().is_empty());
    for j in 1..=10 {
        let k = var(&nlp, "Q3", j);
        assert_eq!((nlp.lower()[k], nlp.upper()[k]), (0.0, 1.0));
        let h = var(&nlp, "H1", j);
        assert_eq!((nlp.lower()[h], nlp.upper()[h]), (-1.0, f64::INFINITY));
    }
}

#[test]
fn inequality_gets_a_slack() {
    let mut problem = example_problem();
    let q3 = problem.topology.find("Q3").unwrap();
    problem.constraints.push(AffineConstraint {
        terms: vec![(StateRef::new(q3, 1), 1.0), (StateRef::new(q3, 2), 1.0)],
        relation: Relation::LessEqual,
        rhs: 1.0,
    });
    let nlp = assemble(&problem).unwrap();
    assert_eq!(nlp.num_variables(), 41);
    assert_eq!(nlp.num_constraints(), 31);
    let s = 40;
    assert_eq!(nlp.variables()[s].key, VarKey::Slack(0));
    assert_eq!((nlp.lower()[s], nlp.upper()[s]), (0.0, f64::INFINITY));
    let row = &nlp.extra_rows()[0];
    assert_eq!(row.linear, vec![(var(&nlp, "Q3", 1), 1.0), (var(&nlp, "Q3", 2), 1.0), (s, 1.0)]);
    assert_eq!(row.constant, -1.0);
}

#[test]
fn fixed_values_fold_into_constants() {
    let mut problem = example_problem();
    let q1 = problem.topology.find("Q1").unwrap();
    let q3 = problem.topology.find("Q3").unwrap();
    problem.constraints.push(AffineConstraint {
        terms: vec![(StateRef::new(q1, 5), 2.0), (StateRef::new(q3, 5), 1.0), (StateRef::new(q3, 6), -1.0)],
        relation: Relation::Equal,
        rhs: 0.5,
    });
    let nlp = assemble(&problem).unwrap();
    let row = &nlp.extra_rows()[0];
    assert_eq!(row.linear.len(), 2);
    // Q1(t5) = sin(π/2) = 1.
    assert!((row.constant - (2.0 - 0.5)).abs() < 1e-15);
}

#[test]
fn scalar_barrier_examples() {
    let (value, slope) = log_barrier(0.5, 0.0, 1.0, 1.0);
    assert!((value - 1.386294).abs() < 1e-6);
    assert!(slope.abs() < 1e-15);
    // f = x² on [0, ∞) at x = 1, μ = 0.5.
    let (value, slope) = log_barrier(1.0, 0.0, f64::INFINITY, 0.5);
    assert!((1.0 + value - 1.0).abs() < 1e-15);
    assert!((2.0 + slope - 1.5).abs() < 1e-15);
}

#[test]
fn barrier_rejects_boundary_points() {
    let nlp = example_nlp();
    let mut x = nlp.cold_start();
    x[var(&nlp, "Q3", 3)] = 1.0;
    assert!(matches!(
        nlp.barrier_value_and_gradient(&x, 0.1, 0.0),
        Err(Error::NotInterior { .. })
    ));
}

#[test]
fn barrier_gradient_matches_differences() {
    let nlp = example_nlp();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let x = sample_interior_point(&nlp, &mut rng);
        let (_, grad) = nlp.barrier_value_and_gradient(&x, 0.3, 0.0).unwrap();
        let mut xp = x.clone();
        for k in 0..x.len() {
            let h = 1e-6 * x[k].abs().max(1.0);
            xp[k] = x[k] + h;
            let fp = nlp.barrier_value_and_gradient(&xp, 0.3, 0.0).unwrap().0;
            xp[k] = x[k] - h;
            let fm = nlp.barrier_value_and_gradient(&xp, 0.3, 0.0).unwrap().0;
            xp[k] = x[k];
            assert!(rel_err(grad[k], (fp - fm) / (2.0 * h), 1.0) < 1e-6);
        }
    }
}

/// Central-difference matrix of `f` at `x`, one column per variable.
fn central_differences<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut xp = x.to_vec();
    let mut columns = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        columns.push(nalgebra::DVector::from_iterator(
            fp.len(),
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)),
        ));
    }
    nalgebra::DMatrix::from_columns(&columns)
}

/// Largest row-wise relative deviation `‖a_r - b_r‖∞ / ‖a_r‖∞`.
fn row_relative_error(analytic: &nalgebra::DMatrix<f64>, fd: &nalgebra::DMatrix<f64>) -> f64 {
    (0..analytic.nrows())
        .map(|r| {
            let diff = (analytic.row(r) - fd.row(r)).amax();
            let scale = analytic.row(r).amax();
            if scale > 0.0 { diff / scale } else { diff }
        })
        .fold(0.0, f64::max)
}

/// Deviation of the analytic constraint Jacobian from central differences
/// of the residuals.
pub(crate) fn jacobian_error(nlp: &ParametricNlp, x: &[f64], theta: f64) -> f64 {
    let jac = nlp.constraint_jacobian(x, theta).unwrap().to_dense();
    let fd = central_differences(|z| nlp.constraint_values(z, theta).unwrap(), x);
    row_relative_error(&jac, &fd)
}

/// Deviation of the analytic Lagrangian Hessian from central differences of
/// the Lagrangian gradient.
pub(crate) fn hessian_error(nlp: &ParametricNlp, x: &[f64], lambda: &[f64], mu: f64, theta: f64) -> f64 {
    let hess = nlp.lagrangian_hessian(x, lambda, mu, theta).unwrap().to_dense();
    let fd = central_differences(|z| nlp.lagrangian_gradient(z, lambda, mu, theta).unwrap(), x);
    row_relative_error(&hess, &fd)
}

#[test]
fn jacobian_and_hessian_match_differences() {
    let nlp = example_nlp();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for theta in [0.0, 0.5, 1.0] {
        for _ in 0..5 {
            let x = sample_interior_point(&nlp, &mut rng);
            let lambda = random_multipliers(nlp.num_constraints(), &mut rng);
            assert!(jacobian_error(&nlp, &x, theta) < 1e-6);
            assert!(hessian_error(&nlp, &x, &lambda, 0.1, theta) < 1e-5);
        }
    }
}

#[test]
fn kkt_matrix_matches_residual_differences() {
    let nlp = example_nlp();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, m) = (nlp.num_variables(), nlp.num_constraints());
    for theta in [0.0, 1.0] {
        let x = sample_interior_point(&nlp, &mut rng);
        let lambda = random_multipliers(m, &mut rng);
        let kkt = nlp.kkt_matrix(&x, &lambda, 0.05, theta).unwrap();
        assert!(kkt.matrix.is_symmetric(1e-12));
        let dense = kkt.matrix.to_dense();
        let mut z: Vec<f64> = x.iter().chain(&lambda).copied().collect();
        let residual = |z: &[f64]| nlp.primal_residual(&z[..n], &z[n..], 0.05, theta).unwrap();
        let f0 = residual(&z);
        for (a, b) in f0.iter().zip(&kkt.rhs) {
            assert_eq!(*a, -b);
        }
        for k in 0..n + m {
            let h = 1e-6 * z[k].abs().max(1.0);
            let orig = z[k];
            z[k] = orig + h;
            let fp = residual(&z);
            z[k] = orig - h;
            let fm = residual(&z);
            z[k] = orig;
            for r in 0..n + m {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!(rel_err(dense[(r, k)], fd, 1e-3) < 1e-5, "entry ({r}, {k})");
            }
        }
    }
}

#[test]
fn linear_model_has_no_previous_level_sensitivity() {
    let nlp = example_nlp();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = sample_interior_point(&nlp, &mut rng);
    let jac = nlp.constraint_jacobian(&x, 0.0).unwrap();
    let q2 = nlp.topology().find("Q2").unwrap();
    for (r, row) in nlp.hydraulic_rows().iter().enumerate() {
        if let HydraulicRow::Momentum { node, time } = *row {
            assert_eq!(node, q2);
            for n in [node - 1, node + 1] {
                if let Some(k) = nlp.index_of(n, time - 1) {
                    assert_eq!(jac.get(r, k), 0.0);
                }
            }
        }
    }
}

#[test]
fn linear_model_hessian_is_diagonal() {
    let nlp = example_nlp();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = sample_interior_point(&nlp, &mut rng);
    let lambda = random_multipliers(nlp.num_constraints(), &mut rng);
    let mu = 0.2;
    let hess = nlp.lagrangian_hessian(&x, &lambda, mu, 0.0).unwrap();
    let weights = nlp.objective_hessian_diagonal();
    for &(r, c, v) in hess.entries() {
        if r != c {
            assert_eq!(v, 0.0);
        } else {
            let mut expected = weights[r];
            if nlp.lower()[r].is_finite() {
                expected += mu / (x[r] - nlp.lower()[r]).powi(2);
            }
            if nlp.upper()[r].is_finite() {
                expected += mu / (nlp.upper()[r] - x[r]).powi(2);
            }
            assert!(rel_err(v, expected, 1e-12) < 1e-14);
        }
    }
}

#[test]
fn hessian_cross_blocks_vanish() {
    let nlp = example_nlp();
    let nh = nlp.num_hydraulic();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let x = sample_interior_point(&nlp, &mut rng);
        let lambda = random_multipliers(nlp.num_constraints(), &mut rng);
        let hess = nlp.lagrangian_hessian(&x, &lambda, 0.1, 1.0).unwrap();
        for &(r, c, v) in hess.entries() {
            if (r < nh) != (c < nh) || (r >= nh && r != c) {
                assert_eq!(v, 0.0);
            }
            if r >= nh && r == c {
                assert!(v > 0.0);
            }
        }
    }
}

#[test]
fn perturbation_touches_only_referencing_rows() {
    let nlp = example_nlp();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = sample_interior_point(&nlp, &mut rng);
    let c0 = nlp.constraint_values(&x, 1.0).unwrap();
    let jac = nlp.constraint_jacobian(&x, 1.0).unwrap();
    for (name, time, expected) in [("Q3", 4, 1), ("Q2", 10, 3), ("Q2", 4, 4)] {
        let k = var(&nlp, name, time);
        let mut xp = x.clone();
        xp[k] += 1e-3;
        let c1 = nlp.constraint_values(&xp, 1.0).unwrap();
        let changed: Vec<usize> = (0..c0.len()).filter(|&r| c0[r] != c1[r]).collect();
        let referencing: Vec<usize> = jac
            .entries()
            .iter()
            .filter(|e| e.1 == k)
            .map(|e| e.0)
            .collect();
        assert_eq!(changed, referencing, "{name}(t{time})");
        assert_eq!(changed.len(), expected, "{name}(t{time})");
    }
}

#[test]
fn jacobian_pattern_is_constant() {
    let nlp = example_nlp();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pattern = |theta: f64, rng: &mut ChaCha8Rng| -> Vec<(usize, usize)> {
        let x = sample_interior_point(&nlp, rng);
        let lambda = random_multipliers(nlp.num_constraints(), rng);
        nlp.kkt_matrix(&x, &lambda, 0.1, theta)
            .unwrap()
            .matrix
            .entries()
            .iter()
            .map(|e| (e.0, e.1))
            .collect()
    };
    let reference = pattern(0.0, &mut rng);
    for theta in [0.0, 0.5, 1.0] {
        assert_eq!(pattern(theta, &mut rng), reference);
    }
}

#[test]
fn dry_point_is_reported() {
    let nlp = example_nlp();
    let mut x = nlp.cold_start();
    // H1(t1) + H2(t1) = 2 H_b makes the t1 reach area vanish for the t2 row.
    x[var(&nlp, "H1", 1)] = -1.0;
    x[var(&nlp, "H2", 1)] = -1.0;
    assert!(matches!(
        nlp.constraint_values(&x, 1.0),
        Err(Error::DryReach { .. })
    ));
}

#[test]
fn oracle_trajectory_is_feasible() {
    let problem = example_problem();
    let nlp = assemble(&problem).unwrap();
    let mut inputs = problem.inputs.clone();
    let q3 = problem.topology.find("Q3").unwrap();
    inputs.series[q3] = Some((1..=10).map(|j| 0.05 * j as f64).collect());
    for theta in [0.0, 1.0] {
        let traj = crate::hydraulics::forward_simulate(&problem.topology, &problem.params, &inputs, theta).unwrap();
        let x: Vec<f64> = nlp
            .variables()
            .iter()
            .map(|v| match v.key {
                VarKey::State(s) => traj.values[s.node][s.time],
                VarKey::Slack(_) => unreachable!(),
            })
            .collect();
        let c = nlp.constraint_values(&x, theta).unwrap();
        assert!(c.iter().all(|v| v.abs() <= 1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_model_rows_are_affine(seed in any::<u64>(), a in 0.0f64..1.0) {
        let nlp = example_nlp();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_interior_point(&nlp, &mut rng);
        let y = sample_interior_point(&nlp, &mut rng);
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + (1.0 - a) * q).collect();
        let (cx, cy) = (nlp.constraint_values(&x, 0.0).unwrap(), nlp.constraint_values(&y, 0.0).unwrap());
        let cz = nlp.constraint_values(&z, 0.0).unwrap();
        for r in 0..cz.len() {
            let expected = a * cx[r] + (1.0 - a) * cy[r];
            prop_assert!((cz[r] - expected).abs() <= 1e-12 * (1.0 + cx[r].abs() + cy[r].abs()));
        }
    }

    #[test]
    fn slack_encodes_the_inequality(q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let mut problem = example_problem();
        let q3 = problem.topology.find("Q3").unwrap();
        problem.constraints.push(AffineConstraint {
            terms: vec![(StateRef::new(q3, 1), 1.0), (StateRef::new(q3, 2), 1.0)],
            relation: Relation::LessEqual,
            rhs: 1.0,
        });
        let nlp = assemble(&problem).unwrap();
        let row = &nlp.extra_rows()[0];
        let mut x = nlp.cold_start();
        x[var(&nlp, "Q3", 1)] = q1;
        x[var(&nlp, "Q3", 2)] = q2;
        x[40] = 0.0;
        let without_slack: f64 = row.constant + row.linear.iter().map(|&(k, a)| a * x[k]).sum::<f64>();
        // The slack that satisfies the row is -(row value without slack).
        let slack = -without_slack;
        x[40] = slack;
        let with_slack: f64 = row.constant + row.linear.iter().map(|&(k, a)| a * x[k]).sum::<f64>();
        prop_assert!(with_slack.abs() < 1e-15);
        prop_assert_eq!(slack >= 0.0, q1 + q2 - 1.0 <= 0.0);
    }
}
