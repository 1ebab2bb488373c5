mod common;

use common::{random_scenario, rel};
use dcmg_core::estimator::{
    assemble_full, assemble_transformed, map_star_to_theta, map_theta_to_star, solve_mle, LocalKnowledge,
    ParameterVector, Variant,
};
use dcmg_core::measurement::{noiseless_measurement, simulate_training};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn noiseless_regression_identity_holds_on_random_scenarios() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..50 {
        let (config, plan) = random_scenario(&mut rng);
        let trace = simulate_training(&config, &plan).unwrap();
        for k in 1..=config.unit_count() {
            let local = LocalKnowledge::for_controller(&config, k).unwrap();
            let meas = noiseless_measurement(&trace, k);
            let theta = ParameterVector::truth(&config, k);
            let star = map_theta_to_star(&theta, trace.nominal_voltage(), config.rated_voltage);
            for (system, truth) in [
                (assemble_full(&meas, &plan, &local).unwrap(), theta.to_vec()),
                (
                    assemble_transformed(&meas, &plan, &local, trace.nominal_voltage()).unwrap(),
                    star.to_vec(),
                ),
            ] {
                let h = system.matrix();
                let rhs = system.rhs();
                let defect = &h * DVector::from_vec(truth.clone()) - &rhs;
                // Relative to the size of the individual terms in each row.
                for n in 0..h.nrows() {
                    let terms: f64 = (0..h.ncols()).map(|j| (h[(n, j)] * truth[j]).abs()).sum::<f64>() + rhs[n].abs();
                    assert!(defect[n].abs() < 1e-10 * terms, "row {n}: {} vs {terms}", defect[n]);
                }
            }
        }
    }
}

#[test]
fn controllers_agree_on_random_scenarios() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..30 {
        let (config, plan) = random_scenario(&mut rng);
        let trace = simulate_training(&config, &plan).unwrap();
        let estimates: Vec<ParameterVector> = (1..=config.unit_count())
            .map(|k| {
                let local = LocalKnowledge::for_controller(&config, k).unwrap();
                let sys = assemble_full(&noiseless_measurement(&trace, k), &plan, &local).unwrap();
                solve_mle(&sys).unwrap().params
            })
            .collect();
        for e in &estimates {
            for (a, b) in e.load.iter().zip(estimates[0].load) {
                assert!(rel(*a, b) < 1e-8);
            }
            for (u, w) in e.generation_units().into_iter().zip(&e.generation) {
                assert!(rel(*w, config.capacities[u - 1]) < 1e-8);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn load_map_round_trips(
        p_cr in 0.0f64..1e5, p_cc in 0.0f64..1e5, p_cp in 0.0f64..1e5,
        vb in 350.0f64..450.0, x in 380.0f64..420.0,
    ) {
        let theta = ParameterVector::from_slice(Variant::Full, 1, &[10.0, p_cr, p_cc, p_cp]);
        let back = map_star_to_theta(&map_theta_to_star(&theta, vb, x), vb, x);
        let scale = p_cr + p_cc + p_cp + 1.0;
        for (a, b) in back.load.iter().zip(theta.load) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }
}
