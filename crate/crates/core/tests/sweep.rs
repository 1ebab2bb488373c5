use dcmg_core::experiment::{report_crb, run_sweep, ExperimentSpec};

fn spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.plan.deltas = vec![0.001, 0.01];
    spec.trials = 200;
    spec.controllers = vec![2, 5];
    spec
}

#[test]
fn thread_count_does_not_change_results() {
    let spec = spec();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut buf = Vec::new();
            run_sweep(&spec).unwrap().write_csv(&mut buf).unwrap();
            buf
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
}

/// In the small-signal decade the bound falls as `1/delta` for quantities seen in
/// the first-order voltage response and as `1/delta^2` for those that need its
/// curvature.
#[test]
fn predicted_error_follows_small_signal_orders() {
    let mut spec = spec();
    spec.plan.deltas = vec![1e-4, 1e-3];
    let crb = report_crb(&spec).unwrap();
    assert!(crb.complete());
    for (p, order) in [
        ("W1", 1.0),
        ("W2", 1.0),
        ("W3", 1.0),
        ("W4", 1.0),
        ("omega", 1.0),
        ("chi", 1.0),
        ("p_cr", 2.0),
        ("p_cc", 2.0),
        ("p_cp", 2.0),
        ("zeta", 2.0),
    ] {
        let lo = crb.row(1e-4, 5, p).unwrap().crb_rrmse;
        let hi = crb.row(1e-3, 5, p).unwrap().crb_rrmse;
        let slope = (hi / lo).log10();
        assert!((slope + order).abs() < 0.1 * order, "{p}: slope {slope}");
    }
}

#[test]
fn bound_scales_with_noise_level() {
    let spec = spec();
    let mut louder = spec.clone();
    louder.noise.sample_std *= 3.0;
    let a = report_crb(&spec).unwrap();
    let b = report_crb(&louder).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!((y.crb_rrmse / x.crb_rrmse - 3.0).abs() < 1e-9);
    }
}

#[test]
fn components_are_identified_worse_than_aggregate_and_capacities() {
    let crb = report_crb(&ExperimentSpec::default()).unwrap();
    for &d in &ExperimentSpec::default().plan.deltas {
        let get = |p: &str| crb.row(d, 5, p).unwrap().crb_rrmse;
        let best_component = ["p_cr", "p_cc", "p_cp"]
            .map(get)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let worst_other = ["W1", "W2", "W3", "W4", "omega"]
            .map(get)
            .into_iter()
            .fold(0.0, f64::max);
        assert!(
            best_component > worst_other,
            "delta {d}: {best_component} vs {worst_other}"
        );
    }
}

/// Monte Carlo error falls with the training amplitude, up to two standard errors
/// of the difference between neighbouring grid points.
#[test]
fn error_decreases_with_amplitude() {
    let spec = ExperimentSpec::default();
    let sweep = run_sweep(&spec).unwrap();
    let deltas = &spec.plan.deltas;
    let se = |r: f64| r / (2.0 * spec.trials as f64).sqrt();
    for p in ["W1", "W2", "W3", "W4", "omega"] {
        for w in deltas.windows(2) {
            let a = sweep.row(w[0], 5, p).unwrap().rrmse;
            let b = sweep.row(w[1], 5, p).unwrap().rrmse;
            let tol = 2.0 * (se(a).powi(2) + se(b).powi(2)).sqrt();
            assert!(b <= a + tol, "{p}: {a} at {} then {b} at {}", w[0], w[1]);
        }
    }
}
