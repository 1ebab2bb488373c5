use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::crb::{crb_full, crb_transformed, sensitivities_with};
use crate::error::{Error, Result};
use crate::estimator::{
    assemble_full, assemble_transformed, map_theta_to_star, solve_mle, LocalKnowledge, ParameterVector, Variant,
};
use crate::measurement::{observe, simulate_training, SlotTrace};
use crate::rng::SeedKey;
use crate::training::{validate_excitation, TrainingPlan};

use super::spec::ExperimentSpec;

/// Running error moments of one parameter across trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub truth: f64,
    pub count: usize,
    sum_err: f64,
    sum_sq_err: f64,
}

impl ErrorStats {
    pub fn new(truth: f64) -> Self {
        Self {
            truth,
            count: 0,
            sum_err: 0.0,
            sum_sq_err: 0.0,
        }
    }

    pub fn push(&mut self, estimate: f64) {
        let e = estimate - self.truth;
        self.count += 1;
        self.sum_err += e;
        self.sum_sq_err += e * e;
    }

    pub fn mean_estimate(&self) -> f64 {
        self.truth + self.sum_err / self.count as f64
    }

    /// `sqrt(mean((theta_hat - theta)^2)) / |theta|`.
    pub fn rrmse(&self) -> f64 {
        (self.sum_sq_err / self.count as f64).sqrt() / self.truth.abs()
    }

    /// Standard error of the sample mean.
    pub fn std_error(&self) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return f64::NAN;
        }
        let var = (self.sum_sq_err - self.sum_err * self.sum_err / n) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }
}

/// Relative root-mean-squared error of `estimates` against `truth`.
pub fn rrmse(estimates: &[f64], truth: f64) -> f64 {
    let mut s = ErrorStats::new(truth);
    estimates.iter().for_each(|e| s.push(*e));
    s.rrmse()
}

/// One row of the long-format sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub controller: usize,
    pub parameter: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub rrmse: f64,
    pub crb_rrmse: f64,
    pub std_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub delta: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<PointFailure>,
}

impl SweepResult {
    /// Every grid point produced results.
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn row(&self, delta: f64, controller: usize, parameter: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.delta == delta && r.controller == controller && r.parameter == parameter)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.rows)
    }
}

pub(crate) fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Truth and bound for one controller: capacities and `(p_cr, p_cc, p_cp)` followed
/// by `(omega, chi, zeta)`.
pub(crate) struct Target {
    pub controller: usize,
    pub local: LocalKnowledge,
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub crb_std: Vec<f64>,
}

impl Target {
    pub fn new(spec: &ExperimentSpec, plan: &TrainingPlan, trace: &SlotTrace, controller: usize) -> Result<Self> {
        let config = &spec.scenario;
        let theta = ParameterVector::truth(config, controller);
        let star = map_theta_to_star(&theta, trace.nominal_voltage(), config.rated_voltage);
        let variance = spec.noise.variance()?;
        let record = sensitivities_with(config, plan, controller, spec.jacobian)?;
        let full = crb_full(&record, variance)?;
        let trans = crb_transformed(&record, variance)?;
        let p = theta.len();
        let crb_std = (0..p)
            .map(|i| full[(i, i)])
            .chain((p - 3..p).map(|i| trans[(i, i)]))
            .map(|v| v.max(0.0).sqrt())
            .collect();
        let mut names = theta.names();
        names.extend(Variant::Transformed.load_names().iter().map(|s| s.to_string()));
        let mut truth = theta.to_vec();
        truth.extend(star.load);
        Ok(Self {
            controller,
            local: LocalKnowledge::for_controller(config, controller)?,
            names,
            truth,
            crb_std,
        })
    }

    pub fn crb_rrmse(&self, i: usize) -> f64 {
        self.crb_std[i] / self.truth[i].abs()
    }
}

/// Both estimates of one trial, laid out like [`Target::truth`].
fn trial_estimates(
    spec: &ExperimentSpec,
    plan: &TrainingPlan,
    trace: &SlotTrace,
    target: &Target,
    seed: SeedKey,
) -> Result<Vec<f64>> {
    let meas = observe(trace, target.controller, &spec.noise, seed)?;
    let full = solve_mle(&assemble_full(&meas, plan, &target.local)?)?;
    let nominal = if spec.exact_nominal {
        trace.nominal_voltage()
    } else {
        meas.nominal_value()
    };
    let star = solve_mle(&assemble_transformed(&meas, plan, &target.local, nominal)?)?;
    let mut out = full.params.to_vec();
    out.extend(star.params.load);
    Ok(out)
}

/// Plan, excitation check, trace and per-controller targets at one grid point.
pub(crate) fn prepare_point(spec: &ExperimentSpec, delta: f64) -> Result<(TrainingPlan, SlotTrace, Vec<Target>)> {
    let plan = spec.build_plan(delta)?;
    let report = validate_excitation(&spec.scenario, &plan)?;
    for k in &spec.controllers {
        let c = &report.controllers[k - 1];
        if !c.sufficient() {
            return Err(Error::InsufficientExcitation {
                rank: c.diagnostics.rank,
                required: c.required_rank,
                rcond: c.diagnostics.rcond(),
            });
        }
    }
    let trace = simulate_training(&spec.scenario, &plan)?;
    let targets = spec
        .controllers
        .iter()
        .map(|k| Target::new(spec, &plan, &trace, *k))
        .collect::<Result<Vec<_>>>()?;
    Ok((plan, trace, targets))
}

fn run_point(spec: &ExperimentSpec, point: usize, delta: f64) -> Result<Vec<SweepRow>> {
    let (plan, trace, targets) = prepare_point(spec, delta)?;
    // Trials run in parallel; the ordered collect plus sequential reduction keeps
    // the sums independent of scheduling.
    let outcomes: Vec<Result<Vec<Vec<f64>>>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            targets
                .iter()
                .map(|tg| {
                    let seed = SeedKey::for_trial(spec.seed, point, t, tg.controller);
                    trial_estimates(spec, &plan, &trace, tg, seed)
                })
                .collect()
        })
        .collect();
    let mut stats: Vec<Vec<ErrorStats>> = targets
        .iter()
        .map(|tg| tg.truth.iter().map(|t| ErrorStats::new(*t)).collect())
        .collect();
    for outcome in outcomes {
        for (per_target, est) in stats.iter_mut().zip(outcome?) {
            for (s, e) in per_target.iter_mut().zip(est) {
                s.push(e);
            }
        }
    }
    let mut rows = Vec::new();
    for (tg, st) in targets.iter().zip(&stats) {
        for (i, s) in st.iter().enumerate() {
            rows.push(SweepRow {
                delta,
                controller: tg.controller,
                parameter: tg.names[i].clone(),
                truth: s.truth,
                mean_estimate: s.mean_estimate(),
                rrmse: s.rrmse(),
                crb_rrmse: tg.crb_rrmse(i),
                std_error: s.std_error(),
                trials: s.count,
            });
        }
    }
    Ok(rows)
}

/// Monte Carlo sweep over the delta grid. A grid point that cannot be evaluated
/// is recorded in [`SweepResult::failures`] and the remaining points still run.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    if spec.plan.deltas.len() > 1 << 16 {
        return Err(Error::InvalidConfig("at most 65536 grid points".into()));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (p, &delta) in spec.plan.deltas.iter().enumerate() {
        match run_point(spec, p, delta) {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(PointFailure {
                delta,
                reason: e.to_string(),
            }),
        }
    }
    Ok(SweepResult { rows, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrbRow {
    pub delta: f64,
    pub controller: usize,
    pub parameter: String,
    pub truth: f64,
    pub crb_std: f64,
    pub crb_rrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrbReport {
    pub rows: Vec<CrbRow>,
    pub failures: Vec<PointFailure>,
}

impl CrbReport {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn row(&self, delta: f64, controller: usize, parameter: &str) -> Option<&CrbRow> {
        self.rows
            .iter()
            .find(|r| r.delta == delta && r.controller == controller && r.parameter == parameter)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.rows)
    }
}

/// Bound-predicted RRMSE for every grid point, without Monte Carlo.
pub fn report_crb(spec: &ExperimentSpec) -> Result<CrbReport> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &delta in &spec.plan.deltas {
        let point = spec.build_plan(delta).and_then(|plan| {
            let trace = simulate_training(&spec.scenario, &plan)?;
            spec.controllers
                .iter()
                .map(|k| Target::new(spec, &plan, &trace, *k))
                .collect::<Result<Vec<_>>>()
        });
        match point {
            Ok(targets) => {
                for tg in targets {
                    for i in 0..tg.truth.len() {
                        rows.push(CrbRow {
                            delta,
                            controller: tg.controller,
                            parameter: tg.names[i].clone(),
                            truth: tg.truth[i],
                            crb_std: tg.crb_std[i],
                            crb_rrmse: tg.crb_rrmse(i),
                        });
                    }
                }
            }
            Err(e) => failures.push(PointFailure {
                delta,
                reason: e.to_string(),
            }),
        }
    }
    Ok(CrbReport { rows, failures })
}
