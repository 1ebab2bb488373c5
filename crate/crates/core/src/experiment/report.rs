use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{assemble_full, assemble_transformed, solve_mle};
use crate::linalg::RankDiagnostics;
use crate::measurement::observe;
use crate::rng::SeedKey;

use super::spec::ExperimentSpec;
use super::sweep::{prepare_point, PointFailure, SweepResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterReport {
    pub parameter: String,
    pub truth: f64,
    pub estimate: f64,
    pub relative_error: f64,
    pub crb_rrmse: f64,
    /// Error in units of the bound's standard deviation.
    pub z_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub delta: f64,
    pub controller: usize,
    pub seed: SeedKey,
    pub noise_variance: f64,
    pub measured_voltages: Vec<f64>,
    pub nominal_voltage: f64,
    /// The `v_bar` the transformed system was expanded around.
    pub expansion_voltage: f64,
    pub full_diagnostics: RankDiagnostics,
    pub transformed_diagnostics: RankDiagnostics,
    pub full_residual: f64,
    pub transformed_residual: f64,
    pub parameters: Vec<ParameterReport>,
}

impl EstimateReport {
    pub fn max_relative_error(&self) -> f64 {
        self.parameters
            .iter()
            .map(|p| p.relative_error.abs())
            .fold(0.0, f64::max)
    }
}

/// One end-to-end trial for `controller` with full diagnostics.
pub fn run_single(spec: &ExperimentSpec, delta: f64, controller: usize, seed: u64) -> Result<EstimateReport> {
    let mut spec = spec.clone();
    spec.controllers = vec![controller];
    spec.plan.deltas = vec![delta];
    spec.validate()?;
    let (plan, trace, targets) = prepare_point(&spec, delta)?;
    let target = &targets[0];
    let key = SeedKey::for_trial(seed, 0, 0, controller);
    let meas = observe(&trace, controller, &spec.noise, key)?;
    let full = solve_mle(&assemble_full(&meas, &plan, &target.local)?)?;
    let expansion_voltage = if spec.exact_nominal {
        trace.nominal_voltage()
    } else {
        meas.nominal_value()
    };
    let star = solve_mle(&assemble_transformed(&meas, &plan, &target.local, expansion_voltage)?)?;
    let estimates = full.params.to_vec().into_iter().chain(star.params.load);
    let parameters = estimates
        .enumerate()
        .map(|(i, est)| {
            let truth = target.truth[i];
            let err = est - truth;
            ParameterReport {
                parameter: target.names[i].clone(),
                truth,
                estimate: est,
                relative_error: err / truth.abs(),
                crb_rrmse: target.crb_rrmse(i),
                z_score: if target.crb_std[i] > 0.0 {
                    err / target.crb_std[i]
                } else {
                    0.0
                },
            }
        })
        .collect();
    Ok(EstimateReport {
        delta,
        controller,
        seed: key,
        noise_variance: meas.noise_variance,
        measured_voltages: meas.values(),
        nominal_voltage: trace.nominal_voltage(),
        expansion_voltage,
        full_diagnostics: full.diagnostics,
        transformed_diagnostics: star.diagnostics,
        full_residual: full.residual_norm,
        transformed_residual: star.residual_norm,
        parameters,
    })
}

impl fmt::Display for EstimateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "controller {}  delta {}  noise variance {:e} V^2",
            self.controller, self.delta, self.noise_variance
        )?;
        writeln!(
            f,
            "v_bar {:.9} V (expanded around {:.9} V)",
            self.nominal_voltage, self.expansion_voltage
        )?;
        for (label, d, res) in [
            ("full", &self.full_diagnostics, self.full_residual),
            ("transformed", &self.transformed_diagnostics, self.transformed_residual),
        ] {
            writeln!(
                f,
                "{label:>11}: rank {}/{}  cond {:.3e}  residual {:.3e} W",
                d.rank, d.columns, d.condition_number, res
            )?;
        }
        writeln!(
            f,
            "{:<10} {:>16} {:>16} {:>12} {:>12} {:>8}",
            "parameter", "truth", "estimate", "rel.error", "crb rrmse", "z"
        )?;
        for p in &self.parameters {
            writeln!(
                f,
                "{:<10} {:>16.6} {:>16.6} {:>12.3e} {:>12.3e} {:>8.2}",
                p.parameter, p.truth, p.estimate, p.relative_error, p.crb_rrmse, p.z_score
            )?;
        }
        Ok(())
    }
}

/// Run description written next to the CSV outputs. Contains no timestamps so
/// identical runs produce identical files.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub spec: ExperimentSpec,
    pub noise_variance: f64,
    pub grid_points: usize,
    pub completed_points: usize,
    pub failures: Vec<PointFailure>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(
        spec: &ExperimentSpec,
        sweep: Option<&SweepResult>,
        failures: Vec<PointFailure>,
        outputs: Vec<String>,
    ) -> Result<Self> {
        let mut failures = failures;
        if let Some(s) = sweep {
            for f in &s.failures {
                if !failures.contains(f) {
                    failures.push(f.clone());
                }
            }
        }
        let grid_points = spec.plan.deltas.len();
        let failed: Vec<f64> = failures.iter().map(|f| f.delta).collect();
        let completed_points = spec.plan.deltas.iter().filter(|d| !failed.contains(d)).count();
        Ok(Self {
            tool: "dcmg",
            version: env!("CARGO_PKG_VERSION"),
            spec: spec.clone(),
            noise_variance: spec.noise.variance()?,
            grid_points,
            completed_points,
            failures,
            outputs,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from)
    }
}
