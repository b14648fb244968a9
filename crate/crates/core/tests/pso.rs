use std::sync::Arc;

use airfoil_drl::aero::{FlowConditions, SolverConfig};
use airfoil_drl::env::{AeroModel, StandardSolver};
use airfoil_drl::geometry::{cst_to_geometry, fit_cst, max_thickness, read_dat, CstParams, ParamBounds};
use airfoil_drl::pso::{optimize_airfoil, PsoConfig, PsoError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn low() -> Arc<dyn AeroModel> {
    Arc::new(StandardSolver {
        flow: FlowConditions::default(),
        config: SolverConfig::low(),
    })
}

fn naca0012() -> CstParams {
    let c = read_dat(&airfoil_drl::env::bundled_data_dir().join("naca0012.dat")).unwrap();
    fit_cst(&c.points, &ParamBounds::default()).unwrap().params
}

#[test]
fn constrained_run_keeps_thickness() {
    let seed = naca0012();
    let cfg = PsoConfig {
        max_iterations: 60,
        ..Default::default()
    };
    let (rec, res) = optimize_airfoil(
        "naca0012",
        &seed,
        &ParamBounds::default(),
        low(),
        Some(0.01),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    let mt = max_thickness(&cst_to_geometry(&CstParams::from_array(&res.best), 200).unwrap());
    assert!((mt - 0.12).abs() / 0.12 <= 0.0101, "mt {mt}");
    assert!(rec.delta_mt_percent <= 1.0 + 1e-9, "{}", rec.delta_mt_percent);
    assert!(rec.improvement > 0.0);
    assert!(res.trace.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(res.evaluations, 30 * 61);
}

#[test]
fn unconstrained_run_improves_more() {
    let seed = naca0012();
    let cfg = PsoConfig {
        max_iterations: 60,
        ..Default::default()
    };
    let run = |tol| {
        optimize_airfoil("n", &seed, &ParamBounds::default(), low(), tol, &cfg, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap()
            .0
    };
    assert!(run(None).best_ratio >= run(Some(0.01)).best_ratio);
}

#[test]
fn unsolvable_seed_is_rejected() {
    // Lower surface above the upper one: the seed geometry self-intersects.
    let mut seed = CstParams::zeros();
    seed.upper = [-0.2; 8];
    seed.lower = [0.4; 8];
    let r = optimize_airfoil(
        "bad",
        &seed,
        &ParamBounds::default(),
        low(),
        None,
        &PsoConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    assert!(matches!(r, Err(PsoError::Seed(_))));
}

#[test]
fn high_fidelity_short_run() {
    let model: Arc<dyn AeroModel> = Arc::new(StandardSolver {
        flow: FlowConditions::default(),
        config: SolverConfig::high(),
    });
    let cfg = PsoConfig {
        swarm_size: 8,
        max_iterations: 4,
        ..Default::default()
    };
    let (rec, res) = optimize_airfoil(
        "naca0012",
        &naca0012(),
        &ParamBounds::default(),
        model,
        None,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    assert_eq!(res.evaluations, 40);
    assert!(rec.best_ratio >= rec.initial_ratio);
}
