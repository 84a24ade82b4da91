mod common;

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use volterra_lq::grid::{build_grid, DiscretePath, SampledCoefficients};
use volterra_lq::linalg::{min_eigenvalue, Mat, Vector};
use volterra_lq::model::Coefficient;
use volterra_lq::oracle::{
    adjoint_equation_residual, assemble_qp, check_dual_representation, check_stationarity,
    m_solution_residual, qp_convexity, replay_controls, replay_feedback, run_identity_suite,
    solve_adapted_qp, solve_optimality_bsvies, solve_type3, trajectory_cost,
    type3_representation_residual, AdaptedControl, BsvieSystem, NodeField, ScenarioTree,
};
use volterra_lq::riccati::build_lifted;
use volterra_lq::{solve_dp, value_at, DiscreteProblem, Error};

fn random_field(rng: &mut ChaCha8Rng, width: usize, dim: usize) -> NodeField {
    (0..width)
        .map(|_| Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
        .collect()
}

fn random_control(rng: &mut ChaCha8Rng, tree: &ScenarioTree, m: usize) -> AdaptedControl {
    AdaptedControl {
        m,
        u: (0..tree.depth)
            .map(|k| random_field(rng, tree.width(k), m))
            .collect(),
    }
}

fn tree_of(problem: &DiscreteProblem) -> ScenarioTree {
    ScenarioTree::new(problem.grid.steps, problem.grid.h()).unwrap()
}

fn fields_equal(a: &NodeField, b: &NodeField) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).amax() <= 1e-12 * (1.0 + x.amax()))
}

fn max_field(f: &[NodeField]) -> f64 {
    f.iter().flatten().map(|v| v.amax()).fold(0.0, f64::max)
}

/// Scalar constant-coefficient table on `[0, t_end]`.
fn scalar_coeffs(
    steps: usize,
    t_end: f64,
    abcd: [f64; 4],
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
                Coefficient::A => abcd[0],
                Coefficient::B => abcd[1],
                Coefficient::C => abcd[2],
                Coefficient::D => abcd[3],
            })
        },
        vec![s(q); steps],
        vec![s(r); steps],
        s(g),
    )
    .unwrap()
}

fn problem_from(coeffs: SampledCoefficients, path: &[f64]) -> DiscreteProblem {
    let n = coeffs.n;
    let chi0 = DiscretePath::new(0, n, Vector::from_column_slice(path)).unwrap();
    DiscreteProblem::from_parts(coeffs, chi0).unwrap()
}

#[test]
fn conditional_expectation_is_a_projection() {
    let mut rng = rng(31);
    let tree = ScenarioTree::new(5, 0.2).unwrap();
    let level = 5;
    let f = random_field(&mut rng, 32, 2);
    for k in 0..=level {
        for l in 0..=level {
            let el = tree.cond_expect(&f, level, l);
            let lhs = if k <= l {
                tree.cond_expect(&el, l, k)
            } else {
                // E_k of an F_l-measurable field is the field itself
                tree.cond_expect(&tree.lift(&el, l, level), level, k)
            };
            let m = k.min(l);
            let rhs = tree.cond_expect(&f, level, m);
            let rhs = if k <= l { rhs } else { tree.lift(&rhs, m, k) };
            assert!(fields_equal(&lhs, &rhs), "k = {k}, l = {l}");
        }
    }
}

#[test]
fn martingale_decomposition_is_exact() {
    let mut rng = rng(32);
    let tree = ScenarioTree::new(4, 0.3).unwrap();
    let f = random_field(&mut rng, 16, 1);
    // E_{r+1} f = E_r f + z_r ξ_r at every depth-(r+1) node
    for r in 0..4 {
        let next = tree.cond_expect(&f, 4, r + 1);
        let here = tree.cond_expect(&f, 4, r);
        let z = tree.mcoeff_at(&f, 4, r);
        for (node, v) in next.iter().enumerate() {
            let parent = node >> 1;
            let rebuilt = &here[parent] + &z[parent] * tree.xi(r + 1, node, r);
            assert!((v - rebuilt).amax() < 1e-14);
        }
    }
}

/// True when one node lies on the path of the other.
fn related(la: usize, a: usize, lb: usize, b: usize) -> bool {
    if la <= lb {
        b >> (lb - la) == a
    } else {
        a >> (la - lb) == b
    }
}

/// Root-level quantities move with any perturbation and shift whole fields
/// by a constant, which cancels in differences only up to rounding.
fn untouched(before: &NodeField, after: &NodeField, level: usize, lp: usize, sp: usize) -> bool {
    let scale = 1.0 + before.iter().map(|v| v.amax()).fold(0.0, f64::max);
    (0..before.len()).all(|node| {
        related(level, node, lp, sp) || (&before[node] - &after[node]).amax() <= 1e-13 * scale
    })
}

fn assert_local(a: &BsvieSystem, b: &BsvieSystem, lp: usize, sp: usize) {
    let steps = a.tree.depth;
    for k in 0..=steps {
        assert!(untouched(&a.x[k], &b.x[k], k, lp, sp), "x at {k}");
        assert!(untouched(&a.eta[k], &b.eta[k], k, lp, sp), "η at {k}");
    }
    for j in 0..steps {
        assert!(untouched(&a.y[j], &b.y[j], j, lp, sp), "Y at {j}");
        assert!(untouched(&a.y0[j], &b.y0[j], j, lp, sp), "Y⁰ at {j}");
        assert!(untouched(&a.zeta[j], &b.zeta[j], j, lp, sp), "ζ at {j}");
        assert!(untouched(
            &a.type3.y_tilde[j],
            &b.type3.y_tilde[j],
            j,
            lp,
            sp
        ));
        for r in 0..steps {
            assert!(untouched(&a.z[j][r], &b.z[j][r], r, lp, sp), "Z({j},{r})");
        }
        for r in j..steps {
            assert!(untouched(&a.z0[j][r - j], &b.z0[j][r - j], r, lp, sp));
            assert!(untouched(
                &a.type3.zd[j][r - j],
                &b.type3.zd[j][r - j],
                r,
                lp,
                sp
            ));
        }
    }
}

#[test]
fn perturbing_one_node_only_moves_its_own_lineage() {
    let mut rng = rng(33);
    for _ in 0..4 {
        let (_, problem) = random_problem(&mut rng, 2, 1, 4, false);
        let tree = tree_of(&problem);
        let control = random_control(&mut rng, &tree, 1);
        let base = replay_controls(&problem.coeffs, &tree, &problem.chi0, &control).unwrap();
        let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &base).unwrap();
        let lp = rng.random_range(1..4);
        let sp = rng.random_range(0..tree.width(lp));
        let mut bumped = control.clone();
        bumped.u[lp][sp][0] += 1.0;
        let traj = replay_controls(&problem.coeffs, &tree, &problem.chi0, &bumped).unwrap();
        let other = solve_optimality_bsvies(&problem.coeffs, &tree, &traj).unwrap();
        assert_local(&sys, &other, lp, sp);
        // the perturbation is visible below the node, and exactly absent from
        // states outside its subtree
        let leaf = sp << (4 - lp);
        assert_ne!(sys.x[4][leaf], other.x[4][leaf]);
        for k in 0..=4 {
            for node in 0..tree.width(k) {
                if !related(k, node, lp, sp) || k <= lp {
                    assert_eq!(sys.x[k][node], other.x[k][node]);
                }
            }
        }
    }
}

#[test]
fn qp_value_is_a_lower_bound_on_adapted_controls() {
    let mut rng = rng(34);
    for steps in 1..=3 {
        let (_, problem) = random_problem(&mut rng, 1, 2, steps, false);
        let tree = tree_of(&problem);
        let qp = solve_adapted_qp(&problem.coeffs, &tree, &problem.chi0).unwrap();
        let at_opt = replay_controls(&problem.coeffs, &tree, &problem.chi0, &qp.control).unwrap();
        let opt_cost = trajectory_cost(&problem.coeffs, &tree, &at_opt);
        assert!((opt_cost - qp.value).abs() < 1e-12 * (1.0 + qp.value.abs()));
        for _ in 0..200 {
            let mut c = random_control(&mut rng, &tree, 2);
            if rng.random_bool(0.5) {
                // small moves around the optimum as well as arbitrary controls
                for (f, g) in c.u.iter_mut().zip(&qp.control.u) {
                    for (v, w) in f.iter_mut().zip(g) {
                        *v = w + &*v * 1e-3;
                    }
                }
            }
            let traj = replay_controls(&problem.coeffs, &tree, &problem.chi0, &c).unwrap();
            assert!(trajectory_cost(&problem.coeffs, &tree, &traj) >= qp.value - 1e-12);
        }
    }
}

#[test]
fn assembled_form_reproduces_replayed_cost() {
    let mut rng = rng(35);
    let (_, problem) = random_problem(&mut rng, 2, 2, 3, false);
    let tree = tree_of(&problem);
    let form = assemble_qp(&problem.coeffs, &tree).unwrap();
    assert!(min_eigenvalue(&form.m2) > 0.0);
    let x = &problem.chi0.values;
    for _ in 0..10 {
        let c = random_control(&mut rng, &tree, 2);
        let u = Vector::from_iterator(
            form.m2.nrows(),
            c.u.iter().flatten().flat_map(|v| v.iter().copied()),
        );
        let quad =
            0.5 * (x.dot(&(&form.m0 * x)) + 2.0 * u.dot(&(&form.m1 * x)) + u.dot(&(&form.m2 * &u)));
        let traj = replay_controls(&problem.coeffs, &tree, &problem.chi0, &c).unwrap();
        let cost = trajectory_cost(&problem.coeffs, &tree, &traj);
        assert!((quad - cost).abs() < 1e-12 * (1.0 + cost.abs()));
    }
}

#[test]
fn qp_and_dp_agree_on_small_trees() {
    let mut rng = rng(36);
    for _ in 0..10 {
        let (_, problem) = random_problem(&mut rng, 1, 1, 3, false);
        let sol = dp(&problem);
        let value = value_at(&sol, 0, &problem.chi0).unwrap();
        let qp = solve_adapted_qp(&problem.coeffs, &tree_of(&problem), &problem.chi0).unwrap();
        assert!((value - qp.value).abs() <= 1e-8 * (1.0 + value.abs()));
        // the feedback and the QP optimum are the same adapted control
        let fb = replay_feedback(
            &problem.lifted,
            &problem.coeffs,
            &tree_of(&problem),
            &problem.chi0,
            &sol.theta,
        )
        .unwrap();
        for (a, b) in fb.u.iter().flatten().zip(qp.control.u.iter().flatten()) {
            assert!((a - b).amax() < 1e-8);
        }
    }
}

#[test]
fn one_step_qp_matches_the_closed_form() {
    let (b, d, r, g, x, h) = (0.8, 0.5, 1.5, 2.0, 1.3, 0.5);
    let problem = problem_from(scalar_coeffs(1, h, [0.0, b, 0.0, d], 0.0, r, g), &[x, x]);
    let qp = solve_adapted_qp(&problem.coeffs, &tree_of(&problem), &problem.chi0).unwrap();
    let u = -b * g * x / (r + g * b * b * h + g * d * d);
    assert!((qp.control.u[0][0][0] - u).abs() < 1e-14);
    let want = 0.5 * (h * r * u * u + g * (x + b * h * u).powi(2) + g * d * d * u * u * h);
    assert!((qp.value - want).abs() < 1e-14);
}

#[test]
fn without_control_channels_the_optimum_is_to_do_nothing() {
    let problem = problem_from(
        scalar_coeffs(3, 1.0, [0.5, 0.0, -0.4, 0.0], 0.7, 1.0, 1.2),
        &[1.0, 0.5, -0.5, 2.0],
    );
    let tree = tree_of(&problem);
    let qp = solve_adapted_qp(&problem.coeffs, &tree, &problem.chi0).unwrap();
    assert!(qp.control.u.iter().flatten().all(|v| v.amax() == 0.0));
    let idle = replay_controls(
        &problem.coeffs,
        &tree,
        &problem.chi0,
        &AdaptedControl::zeros(&tree, 1),
    )
    .unwrap();
    let cost = trajectory_cost(&problem.coeffs, &tree, &idle);
    assert!((qp.value - cost).abs() < 1e-14);

    let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &idle).unwrap();
    assert_eq!(max_field(&sys.type3.yb), 0.0);
    assert_eq!(max_field(&sys.type3.yd), 0.0);
    assert!(max_field(&sys.type3.ya) > 0.0);
    assert!(max_field(&sys.type3.yc) > 0.0);

    let sol = dp(&problem);
    let fb = replay_feedback(
        &problem.lifted,
        &problem.coeffs,
        &tree,
        &problem.chi0,
        &sol.theta,
    )
    .unwrap();
    let fsys = solve_optimality_bsvies(&problem.coeffs, &tree, &fb).unwrap();
    let dual = check_dual_representation(&fsys, &sol, fb.chi.as_ref().unwrap()).unwrap();
    assert!(dual.value <= 1e-10);
}

#[test]
fn zero_data_gives_zero_adjoints() {
    let mut rng = rng(37);
    let (_, mut problem) = random_problem(&mut rng, 2, 1, 3, false);
    problem.coeffs.g = Mat::zeros(2, 2);
    for q in problem.coeffs.q.iter_mut() {
        *q = Mat::zeros(2, 2);
    }
    let tree = tree_of(&problem);
    let control = random_control(&mut rng, &tree, 1);
    let traj = replay_controls(&problem.coeffs, &tree, &problem.chi0, &control).unwrap();
    let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &traj).unwrap();
    for f in [&sys.eta, &sys.zeta, &sys.psi, &sys.psi0, &sys.y, &sys.y0] {
        assert_eq!(max_field(f), 0.0);
    }
    assert_eq!(max_field(&sys.z.concat()), 0.0);
    assert_eq!(max_field(&sys.z0.concat()), 0.0);

    // the optimum is u = 0 with zero value, and both sides of the pairing vanish
    let lifted = build_lifted(&problem.coeffs, &problem.grid).unwrap();
    let sol = solve_dp(&lifted, &problem.coeffs).unwrap();
    assert!(sol.p.iter().all(|p| p.amax() == 0.0));
    let fb = replay_feedback(&lifted, &problem.coeffs, &tree, &problem.chi0, &sol.theta).unwrap();
    let fsys = solve_optimality_bsvies(&problem.coeffs, &tree, &fb).unwrap();
    let dual = check_dual_representation(&fsys, &sol, fb.chi.as_ref().unwrap()).unwrap();
    assert_eq!(dual.value, 0.0);
}

#[test]
fn zero_kernels_give_zero_type3_solution() {
    let problem = problem_from(scalar_coeffs(3, 1.0, [0.0; 4], 1.0, 1.0, 1.0), &[1.0; 4]);
    let tree = tree_of(&problem);
    let mut rng = rng(38);
    let psi: Vec<NodeField> = (0..3).map(|_| random_field(&mut rng, 8, 1)).collect();
    let t3 = solve_type3(&problem.coeffs, &tree, &psi).unwrap();
    for f in [&t3.ya, &t3.yb, &t3.yc, &t3.yd] {
        assert_eq!(max_field(f), 0.0);
    }
    for (j, p) in psi.iter().enumerate() {
        let e = tree.cond_expect(p, 3, j);
        assert!(fields_equal(&t3.y_tilde[j], &e));
    }
}

#[test]
fn drift_free_adjoint_with_no_running_cost_vanishes() {
    let problem = problem_from(
        scalar_coeffs(3, 1.0, [0.0, 0.6, 0.0, 0.9], 0.0, 1.0, 1.5),
        &[1.0, 1.0, 0.5, 0.2],
    );
    let tree = tree_of(&problem);
    let mut rng = rng(39);
    let traj = replay_controls(
        &problem.coeffs,
        &tree,
        &problem.chi0,
        &random_control(&mut rng, &tree, 1),
    )
    .unwrap();
    let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &traj).unwrap();
    assert!(max_field(&sys.y) < 1e-15);
    assert!(max_field(&sys.y0) > 0.0);
}

#[test]
fn identities_hold_for_arbitrary_controls() {
    let mut rng = rng(40);
    for _ in 0..6 {
        let n = rng.random_range(1..=2);
        let m = rng.random_range(1..=2);
        let (_, problem) = random_problem(&mut rng, n, m, 4, false);
        let tree = tree_of(&problem);
        let traj = replay_controls(
            &problem.coeffs,
            &tree,
            &problem.chi0,
            &random_control(&mut rng, &tree, m),
        )
        .unwrap();
        let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &traj).unwrap();
        let scale = 1.0 + max_field(&sys.y) + max_field(&sys.y0) + max_field(&sys.psi);
        assert!(m_solution_residual(&sys).value <= 1e-12 * scale);
        assert!(adjoint_equation_residual(&sys, &problem.coeffs).value <= 1e-10 * scale);
        assert!(type3_representation_residual(&sys).value <= 1e-12 * scale);
        let st = check_stationarity(&sys, &problem.coeffs);
        assert!(st.agreement <= 1e-12 * scale);
    }
}

#[test]
fn qp_optimum_is_stationary_and_a_bump_is_detected() {
    let mut rng = rng(41);
    for _ in 0..4 {
        let (_, problem) = random_problem(&mut rng, 2, 1, 4, false);
        let tree = tree_of(&problem);
        let qp = solve_adapted_qp(&problem.coeffs, &tree, &problem.chi0).unwrap();
        let traj = replay_controls(&problem.coeffs, &tree, &problem.chi0, &qp.control).unwrap();
        let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &traj).unwrap();
        let unorm = qp
            .control
            .u
            .iter()
            .flatten()
            .map(|v| v.amax())
            .fold(0.0, f64::max);
        let st = check_stationarity(&sys, &problem.coeffs);
        assert!(st.maximum_principle.value <= 1e-8 * (1.0 + unorm));
        assert!(st.type3_form.value <= 1e-8 * (1.0 + unorm));

        let lp = rng.random_range(0..4);
        let sp = rng.random_range(0..tree.width(lp));
        let mut bumped = qp.control.clone();
        bumped.u[lp][sp][0] += 1.0;
        let traj = replay_controls(&problem.coeffs, &tree, &problem.chi0, &bumped).unwrap();
        let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &traj).unwrap();
        let st = check_stationarity(&sys, &problem.coeffs);
        // The residual at the bumped node is the diagonal of the Hessian, at least R.
        let r_min = problem
            .coeffs
            .r
            .iter()
            .map(|r| r[(0, 0)])
            .fold(f64::INFINITY, f64::min);
        assert!(st.maximum_principle.value >= r_min - 1e-10);
        assert!(st.maximum_principle.step < 4);
        assert_eq!(st.maximum_principle.node.len(), st.maximum_principle.step);
    }
}

#[test]
fn dual_pairing_on_random_instances() {
    let mut rng = rng(42);
    for _ in 0..6 {
        let (_, problem) = random_problem(&mut rng, 2, 2, 3, false);
        let sol = dp(&problem);
        let tree = tree_of(&problem);
        let fb = replay_feedback(
            &problem.lifted,
            &problem.coeffs,
            &tree,
            &problem.chi0,
            &sol.theta,
        )
        .unwrap();
        let sys = solve_optimality_bsvies(&problem.coeffs, &tree, &fb).unwrap();
        let dual = check_dual_representation(&sys, &sol, fb.chi.as_ref().unwrap()).unwrap();
        assert!(dual.value <= 1e-8, "{dual:?}");
    }
}

#[test]
fn identity_suite_passes_and_serializes() {
    let mut rng = rng(43);
    let (_, problem) = random_problem(&mut rng, 2, 1, 4, false);
    let sol = dp(&problem);
    let report = run_identity_suite(&problem, &sol).unwrap();
    assert!(report.passed, "{:?}", report.failures());
    let json = serde_json::to_value(&report).unwrap();
    let names: Vec<&str> = json["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for want in [
        "qp_convexity",
        "stationarity_feedback",
        "dual_representation",
        "value_matches_qp",
    ] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
}

#[test]
fn non_convex_problem_is_reported() {
    let problem = problem_from(
        scalar_coeffs(2, 1.0, [0.0, 1.0, 0.0, 0.0], 0.0, -1.0, 0.0),
        &[1.0; 3],
    );
    let (check, qp) = qp_convexity(&problem).unwrap();
    assert!(!check.passed);
    assert!(qp.is_none());
    assert!(matches!(
        solve_adapted_qp(&problem.coeffs, &tree_of(&problem), &problem.chi0),
        Err(Error::Convexity { .. })
    ));
}

#[test]
fn size_limits() {
    assert!(matches!(
        ScenarioTree::new(13, 0.1),
        Err(Error::TooLarge { .. })
    ));
    let problem = DiscreteProblem::from_spec(&benchmark_spec(), 12).unwrap();
    let mut coeffs = problem.coeffs.clone();
    coeffs.m = 2;
    assert!(matches!(
        assemble_qp(&coeffs, &tree_of(&problem)),
        Err(Error::TooLarge { .. })
    ));
    let short = ScenarioTree::new(3, problem.grid.h()).unwrap();
    assert!(matches!(
        assemble_qp(&problem.coeffs, &short),
        Err(Error::Shape(_))
    ));
}
