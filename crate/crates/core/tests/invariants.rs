use mvflow::cli::parse_config_str;
use mvflow::mesh::{Boundary, Grid};
use mvflow::pressure::PressureLaw;
use mvflow::reference::{RestState, TravellingWave};
use mvflow::relative_energy::{gronwall_envelope, relative_energy_atomic, relative_energy_mv};
use mvflow::solver::{cfl_dt, step, FlowState, ModelParams};
use mvflow::young_measure::{build_empirical_measure, moment, EmpiricalYoungMeasure, FamilyParameter, Member, SolutionFamily};
use proptest::prelude::*;

fn no_slip_state() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..4.0, n),
            prop::collection::vec(-3.0f64..3.0, n + 1),
        )
    })
}

fn build(rho: Vec<f64>, mut u: Vec<f64>, t: f64) -> (Grid, FlowState) {
    let n = rho.len();
    let grid = Grid::new_1d(n, 1.0, Boundary::NoSlip).unwrap();
    u[0] = 0.0;
    u[n] = 0.0;
    let s = FlowState::new(rho, u, t, &grid).unwrap();
    (grid, s)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dirac_measure_collapses_to_atomic((rho, u) in no_slip_state(), t in 0.0f64..1.0, gamma in 1.0f64..3.0) {
        let (grid, s) = build(rho, u, t);
        let law = PressureLaw::power_law(1.0, gamma);
        let eym = EmpiricalYoungMeasure::dirac(&grid, std::slice::from_ref(&s));
        let a = relative_energy_atomic(&s, &grid, &TravellingWave, &law).unwrap();
        let m = relative_energy_mv(&eym, 0, &TravellingWave, &law).unwrap();
        prop_assert!((a - m).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn relative_energy_is_nonnegative_and_vanishes_on_reference(
        (rho, u) in no_slip_state(),
        t in 0.0f64..1.0,
        a in 0.2f64..3.0,
        gamma in 1.0f64..3.0,
        r in 0.2f64..4.0,
    ) {
        let (grid, s) = build(rho, u, t);
        let law = PressureLaw::power_law(a, gamma);
        prop_assert!(relative_energy_atomic(&s, &grid, &TravellingWave, &law).unwrap() >= 0.0);
        let reference = RestState { density: r };
        prop_assert!(relative_energy_atomic(&s, &grid, &reference, &law).unwrap() >= 0.0);
        let rest = FlowState::uniform(&grid, r, 0.0);
        prop_assert!(relative_energy_atomic(&rest, &grid, &reference, &law).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn helmholtz_distance_is_a_divergence(s in 0.0f64..5.0, r in 0.05f64..5.0, gamma in 1.0f64..3.0) {
        let law = PressureLaw::power_law(1.0, gamma);
        let d = law.helmholtz_distance(s, r).unwrap();
        prop_assert!(d >= -1e-12 * (1.0 + s * s));
        prop_assert!(law.helmholtz_distance(r, r).unwrap().abs() <= 1e-12 * (1.0 + r * r));
    }

    #[test]
    fn periodic_steps_conserve_mass(
        rho in prop::collection::vec(0.5f64..2.0, 4..32),
        amp in 0.0f64..1.0,
        k in 0.0f64..0.05,
    ) {
        let n = rho.len();
        let grid = Grid::new_1d(n, 1.0, Boundary::Periodic).unwrap();
        let u: Vec<f64> = (0..grid.n_faces(0)).map(|f| amp * ((f * 7 % 5) as f64 - 2.0)).collect();
        let mut s = FlowState::new(rho, u, 0.0, &grid).unwrap();
        let params = ModelParams::brenner(0.1, 0.0, k, PressureLaw::power_law(1.0, 2.0));
        let m0: f64 = s.rho.iter().sum::<f64>() * grid.dx();
        for _ in 0..5 {
            let dt = cfl_dt(&s, &params, &grid, 0.4).unwrap();
            s = step(&s, dt, &params, &grid, None).unwrap().state;
        }
        let m1: f64 = s.rho.iter().sum::<f64>() * grid.dx();
        prop_assert!((m1 - m0).abs() <= 1e-13 * m0);
        prop_assert!(s.rho.iter().all(|r| *r > 0.0));
    }

    #[test]
    fn gronwall_rate_recovers_exponential(rate in 0.0f64..20.0, e0 in 1e-6f64..10.0, m in 3usize..60) {
        let times: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
        let series: Vec<f64> = times.iter().map(|t| e0 * (rate * t).exp()).collect();
        let fit = gronwall_envelope(&times, &series, 0.0);
        prop_assert!(fit.passed);
        prop_assert!(fit.rate >= rate * (1.0 - 1e-12));
        prop_assert!(fit.rate <= rate * (1.0 + 2e-6) + 1e-12);
        let decaying: Vec<f64> = times.iter().map(|t| e0 * (-rate * t).exp()).collect();
        prop_assert_eq!(gronwall_envelope(&times, &decaying, 0.0).rate, 0.0);
    }

    #[test]
    fn measure_moments_are_normalized(ns in prop::collection::vec(2usize..9, 3..6), points in 1usize..12) {
        let g = Grid::new_1d(8, 1.0, Boundary::NoSlip).unwrap();
        let members: Vec<Member> = ns
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                Member::from_cells(1.0 / (i + 1) as f64, &g, &[0.0, 0.5], |_, x| 1.0 + 0.5 * x, move |t, x| (w as f64 * x + t).sin())
            })
            .collect();
        let fam = SolutionFamily::new(FamilyParameter::H, members, g).unwrap();
        let eym = build_empirical_measure(&fam, points).unwrap();
        for bin in &eym.bins {
            let total: f64 = bin.iter().map(|a| a.w).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(bin.iter().all(|a| a.w > 0.0 && a.s >= 0.0));
        }
        prop_assert!(moment(&eym, |_, _| 1.0).unwrap().iter().all(|m| (m - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn config_round_trip_is_identity(
        cells in 2usize..4096,
        mu in 1e-4f64..10.0,
        eta in 0.0f64..5.0,
        k in 0.0f64..1.0,
        gamma in 1.0f64..4.0,
        t_end in 1e-3f64..5.0,
        rho_amp in 0.0f64..0.5,
        u_amp in -2.0f64..2.0,
        u_mode in 1u32..6,
        points in 1usize..64,
    ) {
        let text = format!(
            "[grid]\ncells = {cells}\n[model]\nmu = {mu:?}\neta = {eta:?}\nk = {k:?}\n[model.pressure]\ngamma = {gamma:?}\n\
             [time]\nt_end = {t_end:?}\n[initial]\nkind = \"profile\"\nrho_amp = {rho_amp:?}\nu_amp = {u_amp:?}\nu_mode = {u_mode}\n\
             [ym]\npoints = {points}\n"
        );
        let cfg = parse_config_str(&text).unwrap();
        let again = parse_config_str(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.to_toml(), again.to_toml());
    }
}
