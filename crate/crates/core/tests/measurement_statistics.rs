use dcmg_core::grid::MicrogridConfig;
use dcmg_core::measurement::{observe, simulate_training, NoiseModel};
use dcmg_core::rng::SeedKey;
use dcmg_core::training::hadamard_plan;

/// Noise draws `z = v~ - v` for controller `k` over `trials` independent streams.
fn draws(k: usize, trials: usize) -> Vec<f64> {
    let config = MicrogridConfig::reference();
    let plan = hadamard_plan(5, 7, 0.005, 400.0).unwrap();
    let trace = simulate_training(&config, &plan).unwrap();
    let noise = NoiseModel::default();
    let mut out = Vec::with_capacity(trials * 8);
    for t in 0..trials {
        let m = observe(&trace, k, &noise, SeedKey::for_trial(5, 0, t, k)).unwrap();
        out.extend(m.offsets.iter().zip(trace.offsets()).map(|(a, b)| a - b));
        out.push(m.nominal_offset - trace.nominal.offset);
    }
    out
}

#[test]
fn slot_noise_has_the_averaged_variance() {
    let sigma2 = NoiseModel::default().variance().unwrap();
    let z = draws(5, 12_500);
    let n = z.len() as f64;
    assert!(n >= 1e5);
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 5.0 * sigma2.sqrt() / n.sqrt(), "mean {mean:e}");
    assert!((var / sigma2 - 1.0).abs() < 0.05, "variance {var:e}");
}

#[test]
fn controllers_draw_independent_noise() {
    let a = draws(1, 12_500);
    let b = draws(2, 12_500);
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 0.02, "correlation {corr}");
}
