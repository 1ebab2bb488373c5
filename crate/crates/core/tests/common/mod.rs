#![allow(dead_code)]

use dcmg_core::grid::{LoadModel, MicrogridConfig};
use dcmg_core::measurement::simulate_training;
use dcmg_core::training::{hadamard_plan, validate_excitation, SlotTiming, TrainingPlan};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const RATED: f64 = 400.0;

/// Random feasible microgrid: 2..=7 units, floor in [360, 392] V, capacities
/// log-uniform in [100 W, 20 kW], total load 10-60 % of capacity split randomly
/// over the three components (each at least a few percent).
pub fn random_config(rng: &mut ChaCha8Rng) -> MicrogridConfig {
    let units = rng.random_range(2..=7);
    let min_voltage = rng.random_range(360.0..392.0);
    let capacities: Vec<f64> = (0..units)
        .map(|_| 10f64.powf(rng.random_range(2.0..(20_000f64).log10())))
        .collect();
    let total: f64 = capacities.iter().sum::<f64>() * rng.random_range(0.1..0.6);
    let w: [f64; 3] = [
        rng.random_range(0.1..1.0),
        rng.random_range(0.1..1.0),
        rng.random_range(0.1..1.0),
    ];
    let s: f64 = w.iter().sum();
    let load = LoadModel::new(total * w[0] / s, total * w[1] / s, total * w[2] / s).unwrap();
    MicrogridConfig::new(RATED, min_voltage, capacities, load).unwrap()
}

fn random_binary_plan(rng: &mut ChaCha8Rng, units: usize, slots: usize, delta: f64) -> TrainingPlan {
    let amp = delta * RATED;
    let rows = (0..slots)
        .map(|_| {
            (0..units)
                .map(|_| if rng.random_bool(0.5) { amp } else { -amp })
                .collect()
        })
        .collect();
    TrainingPlan::from_deviations(rows, delta, RATED, SlotTiming::default()).unwrap()
}

/// Random feasible scenario with a plan that passes the excitation check: the
/// Hadamard plan when it is sufficient, otherwise seeded random binary plans.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> (MicrogridConfig, TrainingPlan) {
    loop {
        let config = random_config(rng);
        let units = config.unit_count();
        let delta = config.max_amplitude_fraction() * rng.random_range(0.2..0.9);
        let slots = units + 2;
        let mut plan = hadamard_plan(units, slots, delta, RATED).unwrap();
        for _ in 0..50 {
            if simulate_training(&config, &plan).is_ok()
                && validate_excitation(&config, &plan)
                    .map(|r| r.sufficient())
                    .unwrap_or(false)
            {
                return (config, plan);
            }
            plan = random_binary_plan(rng, units, slots, delta);
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Writes the full parameter vector of controller `k` back into a config.
pub fn with_theta(config: &MicrogridConfig, k: usize, theta: &[f64]) -> MicrogridConfig {
    let mut c = config.clone();
    let mut it = theta.iter();
    for (u, w) in c.capacities.iter_mut().enumerate() {
        if u + 1 != k {
            *w = *it.next().unwrap();
        }
    }
    let l: Vec<f64> = it.copied().collect();
    c.load = LoadModel {
        p_cr: l[0],
        p_cc: l[1],
        p_cp: l[2],
    };
    c
}

pub fn step(t: f64) -> f64 {
    1e-6 * t.abs().max(1.0)
}

pub fn central<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64], i: usize) -> f64 {
    let h = step(theta[i]);
    let mut p = theta.to_vec();
    let mut m = theta.to_vec();
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Fourth-order central difference with a wider step, for outputs such as `omega`
/// whose magnitude dwarfs their derivatives.
pub fn central4<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64], i: usize) -> f64 {
    let h = 1e-3 * theta[i].abs().max(1.0);
    let at = |d: f64| {
        let mut p = theta.to_vec();
        p[i] += d;
        f(&p)
    };
    (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
}

/// Relative error with a floor of 1e-3 of the row's largest entry, so entries that
/// vanish analytically do not divide by rounding noise.
pub fn row_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1e-3 * scale))
        .fold(0.0, f64::max)
}

/// Worst ratio of `|analytic - numeric|` to its allowance: `tol` relative plus the
/// rounding floor `eps |v| / h` of a central difference of bus voltage `v`. The
/// check passes when this is at most 1.
pub fn gradient_mismatch(analytic: &[f64], numeric: &[f64], theta: &[f64], voltage: f64, tol: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .zip(theta)
        .map(|((a, n), t)| (a - n).abs() / (tol * a.abs() + f64::EPSILON * voltage.abs() / step(*t)))
        .fold(0.0, f64::max)
}
