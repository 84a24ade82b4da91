mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use volterra_lq::grid::{build_grid, DiscretePath, SampledCoefficients};
use volterra_lq::linalg::{asymmetry, min_eigenvalue, Mat, Vector};
use volterra_lq::model::Coefficient;
use volterra_lq::oracle::{replay_feedback, trajectory_cost, ScenarioTree};
use volterra_lq::riccati::{
    bilinear_norms, build_lifted, lyapunov_step, read_solution, write_solution,
};
use volterra_lq::{feedback_control, picard_solve, solve_dp, value_at, DiscreteProblem, Error};

fn coeffs_from(
    steps: usize,
    t_end: f64,
    [a, b, c, d]: [f64; 4],
    q: f64,
    r: f64,
    g: f64,
) -> SampledCoefficients {
    let grid = build_grid(0.0, t_end, steps).unwrap();
    SampledCoefficients::from_fn(
        1,
        1,
        grid,
        |which, _, _| {
            s(match which {
                Coefficient::A => a,
                Coefficient::B => b,
                Coefficient::C => c,
                Coefficient::D => d,
            })
        },
        vec![s(q); steps],
        vec![s(r); steps],
        s(g),
    )
    .unwrap()
}

#[test]
fn no_dynamics_decouples_the_cost() {
    let coeffs = coeffs_from(1, 1.0, [0.0; 4], 0.7, 2.0, 1.3);
    let lifted = build_lifted(&coeffs, &coeffs.grid).unwrap();
    let sol = solve_dp(&lifted, &coeffs).unwrap();
    assert_eq!(sol.theta[0], Mat::zeros(1, 2));
    assert!(
        max_diff(
            &sol.p[0],
            &Mat::from_diagonal(&Vector::from_vec(vec![0.7, 1.3]))
        ) < 1e-15
    );
    let chi = DiscretePath::new(0, 1, Vector::from_vec(vec![2.0, -3.0])).unwrap();
    let v = value_at(&sol, 0, &chi).unwrap();
    assert!((v - 0.5 * (0.7 * 4.0 + 1.3 * 9.0)).abs() < 1e-14);
    let zero = DiscretePath::new(0, 1, Vector::zeros(2)).unwrap();
    assert_eq!(value_at(&sol, 0, &zero).unwrap(), 0.0);
}

#[test]
fn one_step_closed_form() {
    let (a, b, c, d, q, r, g) = (0.4, -0.7, 0.3, 0.9, 0.5, 1.2, 1.7);
    for &t_end in &[1.0, 0.25] {
        let h = t_end;
        let coeffs = coeffs_from(1, t_end, [a, b, c, d], q, r, g);
        let lifted = build_lifted(&coeffs, &coeffs.grid).unwrap();
        let sol = solve_dp(&lifted, &coeffs).unwrap();

        // u minimizes ½[h q x0² + h r u² + g (x1 + h a x0 + h b u)² + g h (c x0 + d u)²]
        let r_hat = h * r + g * h * h * b * b + h * g * d * d;
        let s0 = h * b * g * h * a + h * d * g * c;
        let s1 = h * b * g;
        assert!((sol.theta[0][(0, 0)] + s0 / r_hat).abs() < 1e-14);
        assert!((sol.theta[0][(0, 1)] + s1 / r_hat).abs() < 1e-14);

        let p00 = g * h * h * a * a + h * g * c * c + h * q - s0 * s0 / r_hat;
        let p01 = g * h * a - s0 * s1 / r_hat;
        let p11 = g - s1 * s1 / r_hat;
        let want = Mat::from_row_slice(2, 2, &[p00, p01, p01, p11]);
        assert!(max_diff(&sol.p[0], &want) < 1e-13);
        assert_eq!(sol.p[1], s(g));
    }
}

#[test]
fn one_step_control_without_drift_or_running_cost() {
    let (b, d, r, g, x, h) = (0.8, 0.5, 1.5, 2.0, 1.3, 0.5);
    let coeffs = coeffs_from(1, h, [0.0, b, 0.0, d], 0.0, r, g);
    let lifted = build_lifted(&coeffs, &coeffs.grid).unwrap();
    let sol = solve_dp(&lifted, &coeffs).unwrap();
    let denom = r + g * b * b * h + g * d * d;
    assert_eq!(sol.theta[0][(0, 0)], 0.0);
    assert!((sol.theta[0][(0, 1)] + b * g / denom).abs() < 1e-14);
    let chi = DiscretePath::new(0, 1, Vector::from_vec(vec![x, x])).unwrap();
    let u = feedback_control(&sol, 0, &chi).unwrap();
    assert!((u[0] + b * g * x / denom).abs() < 1e-14);
}

#[test]
fn feedback_rejects_bad_paths() {
    let coeffs = coeffs_from(3, 1.0, [0.1, 0.2, 0.3, 0.4], 1.0, 1.0, 1.0);
    let lifted = build_lifted(&coeffs, &coeffs.grid).unwrap();
    let sol = solve_dp(&lifted, &coeffs).unwrap();
    let wrong_len = DiscretePath::new(0, 1, Vector::zeros(3)).unwrap();
    assert!(matches!(
        feedback_control(&sol, 0, &wrong_len),
        Err(Error::Shape(_))
    ));
    let wrong_start = DiscretePath::new(1, 1, Vector::zeros(4)).unwrap();
    assert!(matches!(
        value_at(&sol, 0, &wrong_start),
        Err(Error::Shape(_))
    ));
    let terminal = DiscretePath::new(3, 1, Vector::zeros(1)).unwrap();
    assert!(feedback_control(&sol, 3, &terminal).is_err());
    assert_eq!(value_at(&sol, 3, &terminal).unwrap(), 0.0);
}

#[test]
fn zero_feedback_terminal_transport() {
    let steps = 4;
    let coeffs = coeffs_from(steps, 1.0, [0.0, 0.7, 0.0, -0.4], 0.0, 1.0, 2.5);
    let lifted = build_lifted(&coeffs, &coeffs.grid).unwrap();
    let psi: Vec<Mat> = (0..steps).map(|k| Mat::zeros(1, lifted.dim(k))).collect();
    let p = lyapunov_step(&lifted, &coeffs, &psi).unwrap();
    for (k, pk) in p.iter().enumerate() {
        let d = steps - k + 1;
        let mut want = Mat::zeros(d, d);
        want[(d - 1, d - 1)] = 2.5;
        assert!(max_diff(pk, &want) < 1e-15, "k = {k}");
    }
}

#[test]
fn zero_feedback_running_cost_only() {
    let steps = 3;
    let coeffs = coeffs_from(steps, 1.5, [0.0; 4], 0.8, 1.0, 0.0);
    let lifted = build_lifted(&coeffs, &coeffs.grid).unwrap();
    let h = coeffs.h();
    let psi: Vec<Mat> = (0..steps).map(|k| Mat::zeros(1, lifted.dim(k))).collect();
    let p = lyapunov_step(&lifted, &coeffs, &psi).unwrap();
    for (k, pk) in p.iter().enumerate() {
        let d = steps - k + 1;
        let mut diag = vec![h * 0.8; d - 1];
        diag.push(0.0);
        let want = Mat::from_diagonal(&Vector::from_vec(diag));
        assert!(max_diff(pk, &want) < 1e-15, "k = {k}");
    }
}

#[test]
fn lyapunov_kernel_is_closed_loop_cost_on_four_leaves() {
    let mut rng = rng(11);
    for _ in 0..5 {
        let (_, problem) = random_problem(&mut rng, 1, 1, 2, false);
        let psi: Vec<Mat> = (0..2)
            .map(|k| Mat::from_fn(1, problem.lifted.dim(k), |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let p = lyapunov_step(&problem.lifted, &problem.coeffs, &psi).unwrap();
        let tree = ScenarioTree::new(2, problem.grid.h()).unwrap();
        let theta: Vec<Mat> = psi.iter().map(|m| -m).collect();
        let traj = replay_feedback(
            &problem.lifted,
            &problem.coeffs,
            &tree,
            &problem.chi0,
            &theta,
        )
        .unwrap();
        let cost = trajectory_cost(&problem.coeffs, &tree, &traj);
        let x = &problem.chi0.values;
        let kernel = 0.5 * x.dot(&(&p[0] * x));
        assert!((kernel - cost).abs() < 1e-13 * (1.0 + cost.abs()));
    }
}

#[test]
fn lyapunov_of_the_optimal_feedback_reproduces_dp() {
    let mut rng = rng(12);
    let (_, problem) = random_problem(&mut rng, 2, 2, 5, false);
    let sol = dp(&problem);
    let psi: Vec<Mat> = sol.theta.iter().map(|t| -t).collect();
    let p = lyapunov_step(&problem.lifted, &problem.coeffs, &psi).unwrap();
    for (a, b) in p.iter().zip(&sol.p) {
        assert!(max_diff(a, b) < 1e-11 * (1.0 + b.amax()));
    }
}

#[test]
fn kernels_are_symmetric_and_psd() {
    let mut rng = rng(13);
    for _ in 0..10 {
        let n = rng.random_range(1..=2);
        let m = rng.random_range(1..=2);
        let steps = rng.random_range(1..=6);
        let (_, problem) = random_problem(&mut rng, n, m, steps, false);
        let sol = dp(&problem);
        assert_eq!(sol.p[steps], problem.coeffs.g);
        assert!(sol.regularity_margin > 0.0);
        for pk in &sol.p {
            assert!(asymmetry(pk) <= 1e-12);
            assert!(min_eigenvalue(pk) >= -1e-10);
        }
    }
}

#[test]
fn restriction_consistency() {
    let mut rng = rng(14);
    for _ in 0..4 {
        let (_, problem) = random_problem(&mut rng, 2, 1, 5, false);
        let sol = dp(&problem);
        for k in 1..5 {
            let sub = problem.coeffs.restrict(k);
            let lifted = build_lifted(&sub, &sub.grid).unwrap();
            let sub_sol = solve_dp(&lifted, &sub).unwrap();
            let scale = 1.0 + sol.p[k].amax();
            assert!(
                max_diff(&sub_sol.p[0], &sol.p[k]) < 1e-12 * scale,
                "k = {k}"
            );
            assert!(max_diff(&sub_sol.theta[0], &sol.theta[k]) < 1e-12 * scale);
        }
    }
}

#[test]
fn picard_without_control_channels_stops_after_one_update() {
    let coeffs = coeffs_from(5, 1.0, [0.4, 0.0, -0.3, 0.0], 1.0, 1.0, 1.0);
    let lifted = build_lifted(&coeffs, &coeffs.grid).unwrap();
    let (sol, trace) = picard_solve(&lifted, &coeffs, 1e-12, 10).unwrap();
    assert_eq!(trace.iterations(), 1);
    assert_eq!(trace.final_residual(), 0.0);
    assert!(trace.iterates[1].psi.iter().all(|p| p.amax() == 0.0));
    let exact = solve_dp(&lifted, &coeffs).unwrap();
    for (a, b) in sol.p.iter().zip(&exact.p) {
        assert!(max_diff(a, b) < 1e-14);
    }
    assert!(sol.theta.iter().all(|t| t.amax() == 0.0));
}

#[test]
fn picard_matches_dp_on_benchmark() {
    let problem = DiscreteProblem::from_spec(&benchmark_spec(), 4).unwrap();
    let (sol, trace) = picard_solve(&problem.lifted, &problem.coeffs, 1e-13, 50).unwrap();
    let exact = dp(&problem);
    for (a, b) in sol.p.iter().zip(&exact.p) {
        assert!(max_diff(a, b) < 1e-10);
    }
    for (a, b) in sol.theta.iter().zip(&exact.theta) {
        assert!(max_diff(a, b) < 1e-10);
    }
    assert!(trace.min_monotonicity_margin() >= -1e-10);
    let res = trace.residuals();
    assert!(res.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{res:?}");
}

#[test]
fn picard_reports_non_convergence() {
    let problem = DiscreteProblem::from_spec(&benchmark_spec(), 8).unwrap();
    match picard_solve(&problem.lifted, &problem.coeffs, 0.0, 1) {
        Err(Error::Convergence { iterations, .. }) => assert_eq!(iterations, 1),
        other => panic!("expected convergence error, got {other:?}"),
    }
}

#[test]
fn state_feedback_when_control_does_not_enter_the_drift() {
    let mut rng = rng(15);
    for _ in 0..5 {
        let (_, problem) = random_problem(&mut rng, 2, 2, 4, true);
        let sol = dp(&problem);
        assert!(sol.non_markovian_gain() <= 1e-12);
        // The control ignores everything but the current state.
        let mut chi = problem.chi0.clone();
        let u0 = feedback_control(&sol, 0, &chi).unwrap();
        for v in chi.values.iter_mut().skip(2) {
            *v += 5.0;
        }
        let u1 = feedback_control(&sol, 0, &chi).unwrap();
        assert!((u0 - u1).amax() <= 1e-11);
    }
}

fn bellman(problem: &DiscreteProblem, p_next: &Mat, k: usize, chi: &Vector, u: &Vector) -> f64 {
    let step = &problem.lifted.steps[k];
    let c = &problem.coeffs;
    let h = c.h();
    let x = chi.rows(0, c.n).into_owned();
    let drift = &step.f * chi + &step.gu * u;
    let noise = &step.h * chi + &step.l * u;
    0.5 * (h * x.dot(&(&c.q[k] * &x))
        + h * u.dot(&(&c.r[k] * u))
        + drift.dot(&(p_next * &drift))
        + h * noise.dot(&(p_next * &noise)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dp_step_is_optimal(
        seed in any::<u64>(),
        n in 1usize..=2,
        m in 1usize..=2,
        steps in 1usize..=5,
        k_frac in 0.0f64..1.0,
        perturb in proptest::collection::vec(-1.0f64..1.0, 2),
    ) {
        let mut rng = rng(seed);
        let (_, problem) = random_problem(&mut rng, n, m, steps, false);
        let sol = dp(&problem);
        let k = ((k_frac * steps as f64) as usize).min(steps - 1);
        let chi = Vector::from_fn(sol.dim(k), |_, _| rng.random_range(-2.0..2.0));
        let u_star = &sol.theta[k] * &chi;
        let v = 0.5 * chi.dot(&(&sol.p[k] * &chi));
        let at_opt = bellman(&problem, &sol.p[k + 1], k, &chi, &u_star);
        prop_assert!((at_opt - v).abs() <= 1e-10 * (1.0 + v.abs()));
        let du = Vector::from_fn(m, |i, _| perturb[i]);
        let off = bellman(&problem, &sol.p[k + 1], k, &chi, &(&u_star + &du));
        prop_assert!(off >= v - 1e-10 * (1.0 + v.abs()));
    }

    #[test]
    fn norm_equivalence(seed in any::<u64>(), d in 1usize..=10) {
        let mut rng = rng(seed);
        let p = volterra_lq::instances::random_symmetric(&mut rng, d);
        let norms = bilinear_norms(&p).unwrap();
        prop_assert!(norms.quadratic <= norms.bilinear * (1.0 + 1e-12));
        prop_assert!(norms.bilinear <= 2.0 * norms.quadratic * (1.0 + 1e-12));
    }

    #[test]
    fn norms_bound_random_points_and_match_sign_pairs(seed in any::<u64>(), d in 1usize..=6) {
        let mut rng = rng(seed);
        let p = volterra_lq::instances::random_symmetric(&mut rng, d);
        let norms = bilinear_norms(&p).unwrap();
        let sign = |bits: usize| Vector::from_fn(d, |i, _| if bits >> i & 1 == 1 { 1.0 } else { -1.0 });
        let mut brute = 0.0_f64;
        for a in 0..(1 << d) {
            for b in 0..(1 << d) {
                brute = brute.max(sign(a).dot(&(&p * sign(b))).abs());
            }
        }
        prop_assert!((brute - norms.bilinear).abs() <= 1e-12 * (1.0 + brute));
        for _ in 0..200 {
            let x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
            prop_assert!(x.dot(&(&p * &x)).abs() <= norms.quadratic + 1e-12);
        }
    }

    #[test]
    fn solution_json_round_trip(seed in any::<u64>(), n in 1usize..=2, m in 1usize..=2, steps in 1usize..=4) {
        let mut rng = rng(seed);
        let (_, problem) = random_problem(&mut rng, n, m, steps, false);
        let sol = dp(&problem);
        let text = write_solution(&sol).unwrap();
        let back = read_solution(&text).unwrap();
        prop_assert_eq!(back, sol);
    }
}

#[test]
fn two_dimensional_quadratic_norm_matches_a_fine_grid() {
    let mut rng = rng(16);
    for _ in 0..20 {
        let p = volterra_lq::instances::random_symmetric(&mut rng, 2);
        let norms = bilinear_norms(&p).unwrap();
        let mut best = 0.0_f64;
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = Vector::from_vec(vec![
                    -1.0 + 2.0 * i as f64 / steps as f64,
                    -1.0 + 2.0 * j as f64 / steps as f64,
                ]);
                best = best.max(x.dot(&(&p * &x)).abs());
            }
        }
        assert!(norms.quadratic >= best - 1e-12);
        assert!(norms.quadratic <= best + 1e-4 * (1.0 + best));
    }
}
