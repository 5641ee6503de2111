use ndarray::Array2;
use parabolic_ocp::diagnostics::{check_sign_conditions, sample_variation, sublevel_measure, SampleMode};
use parabolic_ocp::grid::{build_grid, Control, ControlBounds, NormKind, SpaceTimeGrid};
use parabolic_ocp::optimizer::project_box;
use parabolic_ocp::pde::adjoint_pairing;
use parabolic_ocp::presets::{self, StateLaw};
use parabolic_ocp::problem::{
    compute_triple, solve_state, switching_function, vi_residual_from_switching, Hooks, SwitchingFunction,
};
use parabolic_ocp::smsr::{family_dz, make_perturbation, Family, DEFAULT_C_PE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_grid() -> SpaceTimeGrid {
    build_grid(0.0, 1.0, 1.0, 15, 12).unwrap()
}

fn control(grid: &SpaceTimeGrid, m: usize, raw: &[f64]) -> Control {
    let values = Array2::from_shape_fn((m, grid.n_t), |(j, c)| raw[(j * grid.n_t + c) % raw.len()]);
    Control::from_values(grid, values).unwrap()
}

fn raw(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent_and_admissible(vals in raw(24, -5.0, 5.0)) {
        let g = small_grid();
        let bounds = ControlBounds::uniform(&g, &[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        let u = control(&g, 2, &vals);
        let p = project_box(&u, &bounds);
        prop_assert!(bounds.contains(&p));
        prop_assert_eq!(project_box(&p, &bounds), p);
    }

    #[test]
    fn vi_residual_is_nonnegative(s in raw(12, -1.0, 1.0), u in raw(12, 0.0, 1.0)) {
        let g = small_grid();
        let bounds = ControlBounds::uniform(&g, &[0.0], &[1.0]).unwrap();
        let sigma = SwitchingFunction { grid: g, values: control(&g, 1, &s).values };
        prop_assert!(vi_residual_from_switching(&sigma, &control(&g, 1, &u), &bounds) >= 0.0);
    }

    #[test]
    fn sublevel_measure_is_monotone(s in raw(12, -1.0, 1.0), a in 1e-4..0.5_f64, b in 1e-4..0.5_f64) {
        let g = small_grid();
        let sigma = SwitchingFunction { grid: g, values: control(&g, 1, &s).values };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let m_lo = sublevel_measure(&sigma, 0, lo);
        let m_hi = sublevel_measure(&sigma, 0, hi);
        prop_assert!(m_lo <= m_hi + 1e-15);
        prop_assert!(m_hi <= g.horizon + 1e-12);
    }

    #[test]
    fn sampled_variations_respect_sign_and_budget(seed in any::<u64>(), mode in 0usize..3, budget in 0.0..0.5_f64) {
        let g = small_grid();
        let p = presets::linear_bangbang(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ubar = parabolic_ocp::optimizer::random_admissible(&p, &mut rng);
        let mode = [SampleMode::BangFlip, SampleMode::Smooth, SampleMode::RandomFeasible][mode];
        let v = sample_variation(&ubar, &p.bounds, mode, budget, &mut rng).unwrap();
        prop_assert!(check_sign_conditions(&ubar, &p.bounds, &v).is_ok());
        prop_assert!(p.bounds.contains(&ubar.add(&v).unwrap()));
        prop_assert!(v.norm(NormKind::L1Time).unwrap() <= budget * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn linear_state_map_is_affine(a in raw(12, -1.0, 1.0), b in raw(12, -1.0, 1.0), s in 0.0..1.0_f64) {
        let g = small_grid();
        let p = presets::linear_heat(&g);
        let (ua, ub) = (control(&g, 1, &a), control(&g, 1, &b));
        let mix = ua.scaled(1.0 - s).add(&ub.scaled(s)).unwrap();
        let ya = solve_state(&p, &ua, Hooks::none()).unwrap();
        let yb = solve_state(&p, &ub, Hooks::none()).unwrap();
        let ym = solve_state(&p, &mix, Hooks::none()).unwrap();
        let expected = ya.scaled(1.0 - s).add(&yb.scaled(s)).unwrap();
        prop_assert!(ym.sub(&expected).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn larger_control_gives_larger_state(a in raw(24, -2.0, 2.0), d in raw(24, 0.0, 1.0)) {
        // Comparison principle for monotone f and nonnegative profiles.
        let g = small_grid();
        let p = presets::cubic_tracking(&g, StateLaw::Cubic);
        let u1 = control(&g, 2, &a);
        let u2 = u1.add(&control(&g, 2, &d)).unwrap();
        let y1 = solve_state(&p, &u1, Hooks::none()).unwrap();
        let y2 = solve_state(&p, &u2, Hooks::none()).unwrap();
        prop_assert!(y2.sub(&y1).unwrap().values.iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn switching_function_reproduces_pairing(u in raw(12, -1.0, 1.0), v in raw(12, -1.0, 1.0)) {
        // ⟨σ, v⟩ equals the space-time pairing of the adjoint with the control source.
        let g = small_grid();
        let p = presets::linear_heat(&g);
        let triple = compute_triple(&p, &control(&g, 1, &u), Hooks::none()).unwrap();
        let sigma = switching_function(&p, &triple.y, &triple.p).unwrap();
        let v = control(&g, 1, &v);
        let mut source = parabolic_ocp::grid::Field::zeros(&g);
        for c in 0..g.n_t {
            for i in 0..g.n_x {
                source.values[(c + 1, i)] = p.g[0].at(i + 1) * v.values[(0, c)];
            }
        }
        let lhs = sigma.pair(&v).unwrap();
        let rhs = adjoint_pairing(&source, &triple.p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn perturbation_size_scales_with_epsilon(eps in 1e-4..0.1_f64, fam in 0usize..6) {
        let g = small_grid();
        let p = presets::linear_bangbang(&g);
        let family = Family::ALL[fam];
        let z1 = make_perturbation(family, eps, &p, DEFAULT_C_PE).unwrap();
        let z2 = make_perturbation(family, 2.0 * eps, &p, DEFAULT_C_PE).unwrap();
        let (d1, d2) = (family_dz(&z1).unwrap(), family_dz(&z2).unwrap());
        prop_assert!(d1 > 0.0);
        prop_assert!((d2 - 2.0 * d1).abs() <= 1e-9 * d2);
        prop_assert_eq!(family_dz(&make_perturbation(family, 0.0, &p, DEFAULT_C_PE).unwrap()).unwrap(), 0.0);
    }
}
