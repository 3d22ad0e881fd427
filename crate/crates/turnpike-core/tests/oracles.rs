//! Dual-route checks: every result computed by the library is re-derived
//! here through an independent path (closed forms, Gaussian elimination,
//! difference quotients, exhaustive search) and the two must agree.

mod common;

use common::{
    fd_gradient, gradients_agree, lambda1_closed_form, quadratic_normal_form, random_finite_dim_instance,
    random_heat_instance, rng, solve_dense, LAMBDA1_N3_L1,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use turnpike_core::model::{
    build_laplacian_1d, simulate_from, smallest_decay_rate, step_implicit_euler,
};
use turnpike_core::ocp::{brute_force_oracle, cost, gradient_via_adjoint, solve};
use turnpike_core::statics::solve_static_lq;
use turnpike_core::{
    BoxConstraints, CostSpec, LinearDynamics, ProblemInstance, SolveOptions, SpatialGrid,
};

#[test]
fn laplacian_decay_rate_matches_the_closed_form_eigenvalue() {
    for (n, length) in [(3usize, 1.0), (7, 1.0), (15, 1.0), (10, 2.5)] {
        let grid = SpatialGrid::new(n, length);
        let lap = build_laplacian_1d(&grid);
        let computed = smallest_decay_rate(&lap);
        let exact = lambda1_closed_form(n, length);
        assert!(
            (computed - exact).abs() < 1e-10 * exact,
            "n = {n}: {computed} vs {exact}"
        );
    }
    // the frozen n = 3 value, written out in radicals
    assert!((lambda1_closed_form(3, 1.0) - LAMBDA1_N3_L1).abs() < 1e-12);
    let grid = SpatialGrid::new(3, 1.0);
    assert!((smallest_decay_rate(&build_laplacian_1d(&grid)) - LAMBDA1_N3_L1).abs() < 1e-10);
}

#[test]
fn implicit_euler_step_matches_the_dense_elimination_oracle() {
    let mut r = rng(101);
    for trial in 0..20 {
        let inst = if trial % 2 == 0 {
            random_heat_instance(&mut r)
        } else {
            random_finite_dim_instance(&mut r)
        };
        let n = inst.state_dim();
        let dt = inst.dt();
        let y = DVector::from_iterator(n, (0..n).map(|_| r.random_range(-2.0..2.0)));
        let u = DVector::from_iterator(
            inst.control_dim(),
            (0..inst.control_dim()).map(|_| r.random_range(-1.0..1.0)),
        );
        let library = step_implicit_euler(&inst.dynamics, dt, &y, &u).unwrap();
        // oracle: eliminate (I - dt A) y+ = y + dt B u by hand
        let system = DMatrix::identity(n, n) - &inst.dynamics.a * dt;
        let rhs = &y + &inst.dynamics.b * &u * dt;
        let oracle = solve_dense(&system, &rhs);
        assert!(
            (&library - &oracle).amax() < 1e-10 * (1.0 + oracle.amax()),
            "trial {trial}: step disagrees by {}",
            (&library - &oracle).amax()
        );
    }
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let mut r = rng(202);
    for trial in 0..10 {
        let inst = if trial % 2 == 0 {
            random_heat_instance(&mut r)
        } else {
            random_finite_dim_instance(&mut r)
        };
        let m = inst.control_dim();
        let nt = inst.nt;
        let y0 = inst.y0.clone().unwrap();
        // interior controls so the difference quotient never leaves the box
        let controls: Vec<DVector<f64>> = (0..nt)
            .map(|_| {
                DVector::from_iterator(
                    m,
                    (0..m).map(|i| {
                        0.5 * r.random_range(inst.controls.lower[i]..inst.controls.upper[i])
                    }),
                )
            })
            .collect();
        let traj = simulate_from(&inst, &y0, &controls).unwrap();
        let (gu, gy0) = gradient_via_adjoint(&inst, &traj).unwrap();

        // flatten the controls, differentiate the averaged cost numerically
        let pack = |cs: &[DVector<f64>]| {
            DVector::from_iterator(nt * m, cs.iter().flat_map(|c| c.iter().copied()))
        };
        let unpack = |z: &DVector<f64>| -> Vec<DVector<f64>> {
            (0..nt)
                .map(|k| DVector::from_iterator(m, (0..m).map(|i| z[k * m + i])))
                .collect()
        };
        let value_of = |z: &DVector<f64>| {
            let cs = unpack(z);
            let mut y = y0.clone();
            let dt = inst.dt();
            let mut acc = 0.0;
            for (k, u) in cs.iter().enumerate() {
                acc += dt * inst.cost.stage(inst.mesh_weight, k as f64 * dt, &y, u);
                y = step_implicit_euler(&inst.dynamics, dt, &y, u).unwrap();
            }
            acc / inst.horizon
        };
        let fd_u = fd_gradient(value_of, &pack(&controls), 1e-6);
        let adj_u = pack(&gu);
        assert!(
            gradients_agree(&adj_u, &fd_u, 1e-5),
            "trial {trial}: control gradient disagrees (worst {})",
            (&adj_u - &fd_u).amax()
        );

        // and with respect to the initial state
        let value_of_y0 = |z: &DVector<f64>| {
            let mut y = z.clone();
            let dt = inst.dt();
            let mut acc = 0.0;
            for (k, u) in controls.iter().enumerate() {
                acc += dt * inst.cost.stage(inst.mesh_weight, k as f64 * dt, &y, u);
                y = step_implicit_euler(&inst.dynamics, dt, &y, u).unwrap();
            }
            acc / inst.horizon
        };
        let fd_y0 = fd_gradient(value_of_y0, &y0, 1e-6);
        assert!(
            gradients_agree(&gy0, &fd_y0, 1e-5),
            "trial {trial}: initial-state gradient disagrees (worst {})",
            (&gy0 - &fd_y0).amax()
        );
    }
}

#[test]
fn steady_lq_solution_matches_the_dense_normal_equations() {
    let mut r = rng(303);
    for trial in 0..8 {
        // wide bounds so the solution is interior and the oracle is exact
        let mut inst = random_heat_instance(&mut r);
        inst.controls = BoxConstraints::uniform(inst.control_dim(), -50.0, 50.0).unwrap();
        let sol = solve_static_lq(&inst, 1e-13).unwrap();

        // oracle: X = (-A)^{-1} B column by column, then
        // (cw I + sw X'X) u = sw X' y_d, all through hand elimination
        let n = inst.state_dim();
        let m = inst.control_dim();
        let minus_a = -inst.dynamics.a.clone();
        let mut x = DMatrix::zeros(n, m);
        for j in 0..m {
            let col = solve_dense(&minus_a, &inst.dynamics.b.column(j).into_owned());
            x.set_column(j, &col);
        }
        let sw = inst.cost.state_weight;
        let cw = inst.cost.control_weight;
        let y_d = inst.cost.target.mean();
        let gram = DMatrix::identity(m, m) * cw + x.transpose() * &x * sw;
        let rhs = x.transpose() * &y_d * sw;
        let u_oracle = solve_dense(&gram, &rhs);
        let y_oracle = &x * &u_oracle;

        assert!(
            (&sol.u_s - &u_oracle).amax() < 1e-8 * (1.0 + u_oracle.amax()),
            "trial {trial}: steady control disagrees by {}",
            (&sol.u_s - &u_oracle).amax()
        );
        assert!(
            (&sol.y_s - &y_oracle).amax() < 1e-8 * (1.0 + y_oracle.amax()),
            "trial {trial}: steady state disagrees by {}",
            (&sol.y_s - &y_oracle).amax()
        );
        assert!(sol.kkt_residual < 1e-9, "trial {trial}: kkt {}", sol.kkt_residual);
    }
}

#[test]
fn dynamic_solver_matches_the_exact_quadratic_normal_form() {
    // unconstrained tiny problem: the averaged cost is an exact quadratic in
    // the stacked controls, so unit second differences recover its normal
    // form exactly and elimination gives the unique minimizer
    let inst = ProblemInstance::finite_dim(
        LinearDynamics::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.2, -1.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        )
        .unwrap(),
        CostSpec::tracking(DVector::from_vec(vec![0.7, -0.4])),
        BoxConstraints::uniform(1, -100.0, 100.0).unwrap(),
        Some(DVector::from_vec(vec![1.0, -1.0])),
        1.0,
        8,
    )
    .unwrap();
    let y0 = inst.y0.clone().unwrap();
    let dim = inst.nt;

    let value_of = |z: &DVector<f64>| {
        let controls: Vec<DVector<f64>> =
            (0..dim).map(|k| DVector::from_vec(vec![z[k]])).collect();
        let traj = simulate_from(&inst, &y0, &controls).unwrap();
        cost(&inst, &traj)
    };
    let (h, g, _) = quadratic_normal_form(value_of, dim);
    let u_oracle = solve_dense(&h, &(-&g));

    let res = solve(
        &inst,
        &SolveOptions {
            tolerance: 1e-12,
            ..SolveOptions::default()
        },
    )
    .unwrap();
    assert!(res.converged);
    let u_solver = DVector::from_iterator(dim, res.trajectory.controls.iter().map(|u| u[0]));
    assert!(
        (&u_solver - &u_oracle).amax() < 1e-7,
        "controls disagree by {}",
        (&u_solver - &u_oracle).amax()
    );
    let oracle_value = value_of(&u_oracle);
    assert!(
        (res.value - oracle_value).abs() < 1e-12 * (1.0 + oracle_value.abs()),
        "values disagree: {} vs {oracle_value}",
        res.value
    );
}

#[test]
fn solver_dominates_the_brute_force_grid_on_tiny_instances() {
    let mut r = rng(404);
    for trial in 0..6 {
        let n = r.random_range(1..=2);
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -r.random_range(0.5..1.5)
            } else {
                r.random_range(-0.3..0.3)
            }
        });
        let b = DMatrix::from_fn(n, 1, |_, _| r.random_range(0.4..1.0));
        let inst = ProblemInstance::finite_dim(
            LinearDynamics::new(a, b).unwrap(),
            CostSpec::tracking(DVector::from_iterator(
                n,
                (0..n).map(|_| r.random_range(-0.8..0.8)),
            )),
            BoxConstraints::uniform(1, -1.0, 1.0).unwrap(),
            Some(DVector::from_iterator(n, (0..n).map(|_| r.random_range(-0.5..0.5)))),
            0.8,
            4,
        )
        .unwrap();

        let grid_best = brute_force_oracle(&inst, 7).unwrap();
        // the grid candidate must price out at its claimed value
        let recomputed = cost(&inst, &grid_best.trajectory);
        assert!(
            (recomputed - grid_best.value).abs() < 1e-12 * (1.0 + recomputed.abs()),
            "trial {trial}: oracle value inconsistent"
        );

        let res = solve(
            &inst,
            &SolveOptions {
                tolerance: 1e-11,
                ..SolveOptions::default()
            },
        )
        .unwrap();
        assert!(res.converged, "trial {trial}: solver did not converge");
        // continuous optimum dominates every grid point
        assert!(
            res.value <= grid_best.value + 1e-9,
            "trial {trial}: solver {} vs grid {}",
            res.value,
            grid_best.value
        );
        // and the grid point is within the resolution error of optimal
        let box_width = 2.0;
        let grid_step = box_width / 6.0;
        let slack = grid_step * grid_step; // quadratic model error
        assert!(
            grid_best.value <= res.value + slack,
            "trial {trial}: grid {} too far above solver {}",
            grid_best.value,
            res.value
        );
    }
}
