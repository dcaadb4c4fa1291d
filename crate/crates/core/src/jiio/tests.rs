use super::*;
use crate::layer::{contraction_rescale, EquilibriumLayer, LayerKind, LayerParams};
use crate::linalg::{lstsq_ridge, solve_dense, Matrix};
use crate::loss::{loss_grad_z, InnerLoss, OutputHead};
use crate::rng::SeededRng;
use crate::solver::{SolverConfig, SolverStatus};

/// `z = 0.5 z + x`, identity head, target 1: `z* = 2x`, loss `(2x − 1)²`.
fn scalar_problem() -> InputOptProblem {
    let params = LayerParams::new(Matrix::from_rows(&[vec![0.5]]), Matrix::from_rows(&[vec![1.0]]), vec![0.0]).unwrap();
    InputOptProblem::latent(
        EquilibriumLayer::new(LayerKind::Linear, params),
        OutputHead::identity(1),
        InnerLoss::squared(vec![1.0]),
    )
    .unwrap()
}

fn random_layer(kind: LayerKind, n: usize, d: usize, gamma: f64, seed: u64) -> EquilibriumLayer {
    let mut rng = SeededRng::new(seed);
    let raw = LayerParams::random(n, d, 0.9, 1.0, &mut rng).unwrap();
    EquilibriumLayer::new(kind, contraction_rescale(&raw, gamma).unwrap())
}

fn stationary() -> AugmentedState {
    AugmentedState {
        z: vec![1.0],
        mu: vec![0.0],
        x: vec![0.5],
    }
}

#[test]
fn scalar_optimum_is_stationary_for_any_damping() {
    let p = scalar_problem();
    for d in [Damping::latent(), Damping::uniform(1.0), Damping::new(0.3, 0.9, 0.0)] {
        let mut c = EvalCounters::default();
        let next = augmented_step(&p, &stationary(), &d, &mut c).unwrap();
        assert_eq!(next, stationary());
        assert_eq!((c.f_evals, c.vjp_evals), (1, 2));
    }
}

#[test]
fn undamped_step_from_zero_duals() {
    let p = scalar_problem();
    let v = AugmentedState {
        z: vec![0.2],
        mu: vec![0.0],
        x: vec![0.3],
    };
    let next = augmented_step(&p, &v, &Damping::new(1.0, 1.0, 0.0), &mut EvalCounters::default()).unwrap();
    let f = p.layer.eval(&v.z, &v.x).unwrap();
    let g = loss_grad_z(&p.inner_loss, &p.head, &v.z).unwrap();
    assert_eq!(next.z, f);
    assert_eq!(next.mu, g);
    assert_eq!(next.x, v.x);
}

#[test]
fn step_projects_onto_ball() {
    // With μ = 1 and U = I, the x-step is x − α_x μ; start at (4, 5) with
    // α_x = 1 to land on (3, 4) before projection.
    let params = LayerParams::new(Matrix::zeros(2, 2), Matrix::identity(2), vec![0.0; 2]).unwrap();
    let p = InputOptProblem::perturbation(
        EquilibriumLayer::new(LayerKind::Linear, params),
        OutputHead::identity(2),
        InnerLoss::squared(vec![0.0; 2]),
        vec![0.0; 2],
        ConstraintSet::l2_ball(2, 1.0),
    )
    .unwrap();
    let v = AugmentedState {
        z: vec![0.0; 2],
        mu: vec![1.0; 2],
        x: vec![4.0, 5.0],
    };
    let next = augmented_step(&p, &v, &Damping::uniform(1.0), &mut EvalCounters::default()).unwrap();
    assert!((next.x[0] - 0.6).abs() < 1e-15 && (next.x[1] - 0.8).abs() < 1e-15);
}

#[test]
fn projection_examples() {
    let ball = ConstraintSet::l2_ball(2, 1.0);
    let p = project(&ball, &[3.0, 4.0]);
    assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    assert_eq!(project(&ball, &[0.3, -0.2]), vec![0.3, -0.2]);
    let boxed = ConstraintSet::Box {
        lo: vec![0.0, 0.0],
        hi: vec![1.0, 1.0],
    };
    assert_eq!(project(&boxed, &[-1.0, 2.0]), vec![0.0, 1.0]);
    assert_eq!(project(&ConstraintSet::Unconstrained, &[7.0]), vec![7.0]);
}

#[test]
fn invalid_constraints_rejected() {
    assert!(ConstraintSet::l2_ball(2, -1.0).validate(2).is_err());
    let bad = ConstraintSet::Box {
        lo: vec![1.0],
        hi: vec![0.0],
    };
    assert!(bad.validate(1).is_err());
    assert!(matches!(
        ConstraintSet::l2_ball(3, 1.0).validate(2),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn damping_schedule_and_validation() {
    let d = Damping::latent_eval();
    assert_eq!(d.alpha_x_at(0), 0.01);
    assert_eq!(d.alpha_x_at(64), 0.01);
    assert_eq!(d.alpha_x_at(65), 0.003);
    assert!(d.validate().is_ok());
    assert!(Damping::new(0.0, 0.5, 0.5).validate().is_err());
    assert!(Damping::new(0.5, 1.5, 0.5).validate().is_err());
    let unordered = Damping::latent().with_reduction(10, 0.1).with_reduction(5, 0.2);
    assert!(unordered.validate().is_err());
}

#[test]
fn kkt_vanishes_at_scalar_optimum() {
    let r = kkt_residual(&scalar_problem(), &stationary()).unwrap();
    assert!(r.norm < 1e-15);
}

#[test]
fn kkt_blocks_decouple() {
    let p = scalar_problem();
    // z = 0.4 is the fixed point for x = 0.2; μ = 0 leaves r_μ = ∂ℓ/∂z.
    let v = AugmentedState {
        z: vec![0.4],
        mu: vec![0.0],
        x: vec![0.2],
    };
    let r = kkt_residual(&p, &v).unwrap();
    assert!(r.r_z[0].abs() < 1e-15);
    let g = loss_grad_z(&p.inner_loss, &p.head, &v.z).unwrap();
    assert_eq!(r.r_mu, g);
    assert_eq!(r.r_x, vec![0.0]);
}

#[test]
fn projected_kkt_inside_ball_matches_unconstrained() {
    let p = scalar_problem().with_constraint(ConstraintSet::l2_ball(1, 1.0)).unwrap();
    let r = kkt_residual(&p, &stationary()).unwrap();
    assert_eq!(r.r_x, vec![0.0]);
}

#[test]
fn kkt_rejects_wrong_dimensions() {
    let v = AugmentedState {
        z: vec![0.0; 2],
        mu: vec![0.0],
        x: vec![0.0],
    };
    assert!(matches!(kkt_residual(&scalar_problem(), &v), Err(Error::DimensionMismatch(_))));
}

#[test]
fn richardson_geometric_series() {
    let p = scalar_problem();
    // ∂ℓ/∂z = 2(z − 1) = 1 at z = 1.5.
    let mu = richardson_mu(&p, &[1.5], &[0.0], 200, 1e-14).unwrap();
    assert!((mu[0] - 2.0).abs() < 1e-12);
    let zero = richardson_mu(&p, &[1.0], &[0.0], 200, 1e-14).unwrap();
    assert_eq!(zero, vec![0.0]);
}

#[test]
fn richardson_matches_dense_solve() {
    let layer = random_layer(LayerKind::Tanh, 6, 3, 0.7, 11);
    let mut rng = SeededRng::new(12);
    let head = OutputHead::random(4, 6, &mut rng);
    let loss = InnerLoss::squared(rng.normal_vec(4));
    let p = InputOptProblem::latent(layer, head, loss).unwrap();
    let (z, x) = (rng.normal_vec(6), rng.normal_vec(3));
    let mu = richardson_mu(&p, &z, &x, 1000, 1e-13).unwrap();
    let jz = p.layer.jac_z_dense(&z, &x).unwrap();
    let a = Matrix::identity(6).sub(&jz.transpose());
    let oracle = solve_dense(&a, &loss_grad_z(&p.inner_loss, &p.head, &z).unwrap()).unwrap();
    for (m, o) in mu.iter().zip(&oracle) {
        assert!((m - o).abs() < 1e-11);
    }
}

#[test]
fn richardson_reports_exhaustion() {
    let p = scalar_problem();
    assert!(matches!(
        richardson_mu(&p, &[1.5], &[0.0], 3, 1e-14),
        Err(Error::NoConvergence { iterations: 3, .. })
    ));
}

#[test]
fn scalar_solve_reaches_closed_form() {
    let p = scalar_problem();
    let cfg = JiioConfig {
        damping: Damping::latent(),
        solver: SolverConfig::anderson(100, 1e-12, 20),
        selection: DEFAULT_SELECTION,
    };
    let sol = jiio_solve(&p, &Init::Zeros, &cfg).unwrap();
    assert!((sol.state.x[0] - 0.5).abs() < 1e-5, "x* = {}", sol.state.x[0]);
    assert!(sol.kkt_norm() <= 1e-6);
    assert_eq!(sol.trace.rows.len(), sol.trace.iterates.len());
}

#[test]
fn linear_solve_matches_least_squares() {
    let (n, d, p_out) = (8, 4, 8);
    let layer = random_layer(LayerKind::Linear, n, d, 0.5, 21);
    let mut rng = SeededRng::new(22);
    let head = OutputHead::random(p_out, n, &mut rng);
    let y = rng.normal_vec(p_out);
    let p = InputOptProblem::latent(layer.clone(), head.clone(), InnerLoss::squared(y.clone())).unwrap();

    // Oracle: z(x) = (I − W)⁻¹(Ux + b), so h(z) = A x + c with
    // A = C(I − W)⁻¹U and c = C(I − W)⁻¹b + d.
    let i_w = Matrix::identity(n).sub(&layer.params.w);
    let mut inv_u = Matrix::zeros(n, d);
    for j in 0..d {
        inv_u.set_column(j, &solve_dense(&i_w, &layer.params.u.column(j)).unwrap());
    }
    let a = head.c.matmul(&inv_u);
    let z_b = solve_dense(&i_w, &layer.params.b).unwrap();
    let c: Vec<f64> = head.c.matvec(&z_b).iter().zip(&head.d).map(|(v, d)| v + d).collect();
    let rhs: Vec<f64> = y.iter().zip(&c).map(|(y, c)| y - c).collect();
    let x_star = lstsq_ridge(&a, &rhs, 0.0).unwrap();
    let mut z_rhs = layer.params.u.matvec(&x_star);
    axpy(1.0, &layer.params.b, &mut z_rhs);
    let z_star = solve_dense(&i_w, &z_rhs).unwrap();

    let cfg = JiioConfig {
        damping: Damping::new(0.8, 0.6, 0.05),
        solver: SolverConfig::anderson(400, 1e-12, 20),
        selection: DEFAULT_SELECTION,
    };
    let sol = jiio_solve(&p, &Init::Zeros, &cfg).unwrap();
    let rel = |a: &[f64], b: &[f64]| norm2(&sub(a, b)) / norm2(b).max(1e-12);
    assert!(rel(&sol.state.x, &x_star) <= 1e-5, "x rel err {}", rel(&sol.state.x, &x_star));
    assert!(rel(&sol.state.z, &z_star) <= 1e-5);
    // At an unconstrained least-squares optimum the adjoint is the dense
    // solve (I − Wᵀ)⁻¹ ∂ℓ/∂z.
    let g = loss_grad_z(&p.inner_loss, &p.head, &z_star).unwrap();
    let mu_star = solve_dense(&i_w.transpose(), &g).unwrap();
    assert!(norm2(&sub(&sol.state.mu, &mu_star)) <= 1e-5 * (1.0 + norm2(&mu_star)));
}

#[test]
fn frozen_input_decouples_to_forward_and_adjoint_solves() {
    let layer = random_layer(LayerKind::Tanh, 5, 3, 0.6, 31);
    let mut rng = SeededRng::new(32);
    let head = OutputHead::random(3, 5, &mut rng);
    let p = InputOptProblem::latent(layer, head, InnerLoss::squared(rng.normal_vec(3))).unwrap();
    let x0 = rng.normal_vec(3);
    let cfg = JiioConfig {
        damping: Damping::new(0.8, 0.6, 0.0),
        solver: SolverConfig::anderson(200, 1e-13, 10),
        selection: f64::INFINITY,
    };
    let sol = jiio_solve(&p, &Init::Input(x0.clone()), &cfg).unwrap();
    assert!(sol.trace.iterates.iter().all(|v| v[10..] == x0[..]));

    let last = AugmentedState::from_slice(sol.trace.last_iterate(), 5).unwrap();
    let mut z = vec![0.0; 5];
    for _ in 0..2000 {
        z = p.layer.eval(&z, &x0).unwrap();
    }
    assert!(norm2(&sub(&last.z, &z)) < 1e-11);
    let mu = richardson_mu(&p, &z, &x0, 2000, 1e-14).unwrap();
    assert!(norm2(&sub(&last.mu, &mu)) < 1e-10);
}

#[test]
fn frozen_input_reproduces_forward_iteration_exactly() {
    let layer = random_layer(LayerKind::Tanh, 4, 2, 0.8, 41);
    let head = OutputHead::identity(4);
    let p = InputOptProblem::latent(layer, head, InnerLoss::squared(vec![0.1; 4])).unwrap();
    let x0 = vec![0.3, -0.7];
    let cfg = JiioConfig {
        damping: Damping::new(1.0, 0.5, 0.0),
        solver: SolverConfig::naive(30, f64::MIN_POSITIVE),
        selection: f64::INFINITY,
    };
    let sol = jiio_solve(&p, &Init::Input(x0.clone()), &cfg).unwrap();
    let mut z = vec![0.0; 4];
    for v in &sol.trace.iterates {
        assert_eq!(&v[..4], &z[..]);
        z = p.layer.eval(&z, &x0).unwrap();
    }
}

#[test]
fn iterates_stay_in_constraint_set() {
    let layer = random_layer(LayerKind::Tanh, 6, 4, 0.7, 51);
    let mut rng = SeededRng::new(52);
    let head = OutputHead::random(6, 6, &mut rng);
    let x0 = rng.normal_vec(4);
    let loss = InnerLoss::squared(rng.normal_vec(6)).negated();
    for constraint in [
        ConstraintSet::l2_ball(4, 0.5),
        ConstraintSet::Box {
            lo: vec![-0.1; 4],
            hi: vec![0.2; 4],
        },
    ] {
        let p = InputOptProblem::perturbation(layer.clone(), head.clone(), loss.clone(), x0.clone(), constraint.clone())
            .unwrap();
        let cfg = JiioConfig {
            damping: Damping::adversarial(),
            solver: SolverConfig::anderson(80, 1e-12, 20),
            selection: DEFAULT_SELECTION,
        };
        let sol = jiio_solve(&p, &Init::Zeros, &cfg).unwrap();
        for v in &sol.trace.iterates {
            assert!(constraint.contains(&v[12..], 0.0));
        }
    }
}

#[test]
fn trace_costs_and_kkt_match_direct_evaluation() {
    let p = scalar_problem();
    let cfg = JiioConfig {
        damping: Damping::latent(),
        solver: SolverConfig::naive(10, f64::MIN_POSITIVE),
        selection: DEFAULT_SELECTION,
    };
    let sol = jiio_solve(&p, &Init::Zeros, &cfg).unwrap();
    assert_eq!(sol.trace.status, SolverStatus::MaxIter);
    for (row, v) in sol.trace.rows.iter().zip(&sol.trace.iterates) {
        let state = AugmentedState::from_slice(v, 1).unwrap();
        assert_eq!(row.kkt_norm, kkt_residual(&p, &state).unwrap().norm);
        assert_eq!(row.cost, p.system().cost(v).unwrap());
    }
    let c = sol.counters();
    assert_eq!((c.f_evals, c.vjp_evals), (10, 20));
}

#[test]
fn duplicated_examples_equal_single_example_with_halved_step() {
    let layer = random_layer(LayerKind::Tanh, 4, 3, 0.7, 61);
    let mut rng = SeededRng::new(62);
    let head = OutputHead::random(2, 4, &mut rng);
    let loss = InnerLoss::squared(rng.normal_vec(2));
    let base = rng.normal_vec(3);
    let constraint = ConstraintSet::Unconstrained;
    let system = |k: usize| AugmentedSystem {
        layer: &layer,
        head: &head,
        constraint: &constraint,
        var_offset: 1,
        var_dim: 2,
        examples: vec![
            ExampleTerm {
                base_input: &base,
                loss: &loss,
            };
            k
        ],
    };
    let cfg = |ax: f64| JiioConfig {
        damping: Damping::new(0.8, 0.6, ax),
        solver: SolverConfig::naive(40, f64::MIN_POSITIVE),
        selection: f64::INFINITY,
    };
    let (_, _, one) = solve_system(system(1), vec![0.0; 10], &cfg(0.1)).unwrap();
    let (_, _, two) = solve_system(system(2), vec![0.0; 18], &cfg(0.05)).unwrap();
    for (a, b) in one.iterates.iter().zip(&two.iterates) {
        assert_eq!(&a[8..], &b[16..]);
        assert_eq!(&a[..4], &b[..4]);
        assert_eq!(&a[..4], &b[4..8]);
    }
}

#[test]
fn invalid_selection_rejected() {
    let cfg = JiioConfig {
        selection: 0.5,
        ..JiioConfig::latent(10)
    };
    assert!(jiio_solve(&scalar_problem(), &Init::Zeros, &cfg).is_err());
}
