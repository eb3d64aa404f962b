use neumann_lab::bsde::{solve_finite_horizon, BsdeConfig, NeumannProblem};
use neumann_lab::exec::Exec;
use neumann_lab::field::{ScalarField, VectorField};
use neumann_lab::geometry::ConvexDomain;
use neumann_lab::pde_oracle::{solve_parabolic_fd, FdConfig};
use neumann_lab::sde::{local_time_violations, simulate, ReflectionScheme, SdeCoefficients, Sigma, SimConfig, TimeGrid};
use proptest::prelude::*;

fn disc(r: f64) -> SdeCoefficients {
    SdeCoefficients::reflected(VectorField::linear_restoring(2, 0.5), Sigma::scalar(2, 1.0).unwrap(), ConvexDomain::ball(2, r).unwrap())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reflected_paths_stay_in_the_closure(seed in any::<u64>(), r in 0.3..2.0f64, a in -1.0..1.0f64, b in -1.0..1.0f64,
                                           bridge in any::<bool>()) {
        let coeffs = disc(r);
        let x0 = [0.7 * r * a, 0.7 * r * b * (1.0 - a * a).sqrt()];
        let scheme = if bridge { ReflectionScheme::BridgeCorrected } else { ReflectionScheme::Projection };
        let cfg = SimConfig { n_paths: 40, seed, scheme, exec: Exec::Sequential, ..Default::default() };
        let bundle = simulate(&coeffs, &x0, &TimeGrid::uniform(0.0, 1.0, 100).unwrap(), &cfg).unwrap();
        let g = coeffs.domain().unwrap();
        for p in 0..bundle.n_paths {
            prop_assert_eq!(bundle.local_time(p, 0), 0.0);
            for k in 0..bundle.n_times() {
                prop_assert!(g.phi(bundle.state(p, k)) >= -1e-12);
                if k > 0 {
                    prop_assert!(bundle.local_time(p, k) >= bundle.local_time(p, k - 1));
                }
            }
        }
        if !bridge {
            prop_assert_eq!(local_time_violations(&bundle, g), 0);
        }
    }

    #[test]
    fn paths_do_not_depend_on_the_executor(seed in any::<u64>(), n_paths in 1usize..1300) {
        let coeffs = disc(1.0);
        let grid = TimeGrid::uniform(0.0, 0.5, 20).unwrap();
        let par = SimConfig { n_paths, seed, exec: Exec::Parallel, ..Default::default() };
        let seq = SimConfig { exec: Exec::Sequential, ..par.clone() };
        let a = simulate(&coeffs, &[0.1, 0.2], &grid, &par).unwrap();
        let b = simulate(&coeffs, &[0.1, 0.2], &grid, &seq).unwrap();
        prop_assert_eq!(a.states, b.states);
        prop_assert_eq!(a.local_time, b.local_time);
    }

    #[test]
    fn terminal_shift_moves_the_fd_solution_by_the_same_constant(c in -5.0..5.0f64, t in 0.1..1.0f64) {
        let p = NeumannProblem::benchmark();
        let q = NeumannProblem::benchmark().with_terminal(ScalarField::constant(c));
        let cfg = FdConfig { n_cells: 100, dt: 2e-3, ..Default::default() };
        let u = solve_parabolic_fd(&p, t, &cfg).unwrap();
        let v = solve_parabolic_fd(&q, t, &cfg).unwrap();
        for (a, b) in u.last().iter().zip(v.last()) {
            prop_assert!((b - a - c).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }
}

#[test]
fn bsde_is_equivariant_under_terminal_shifts() {
    // Zero driver: Y is linear in the data, so shifting h by c shifts Y_0 by c on the same paths.
    let cfg = BsdeConfig { n_paths: 2000, n_steps: 20, seed: 9, ..Default::default() };
    let a = solve_finite_horizon(&NeumannProblem::benchmark(), 0.5, &[0.2], &cfg).unwrap();
    let shifted = NeumannProblem::benchmark().with_terminal(ScalarField::constant(3.0));
    let b = solve_finite_horizon(&shifted, 0.5, &[0.2], &cfg).unwrap();
    assert!((b.y0.mean - a.y0.mean - 3.0).abs() < 1e-9, "{} {}", a.y0.mean, b.y0.mean);
}
