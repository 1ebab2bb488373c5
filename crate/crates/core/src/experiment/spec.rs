use serde::{Deserialize, Serialize};

use crate::crb::JacobianMode;
use crate::error::{Error, Result};
use crate::grid::MicrogridConfig;
use crate::measurement::NoiseModel;
use crate::training::{check_length, hadamard_plan, TrainingPlan};

/// Where the per-unit sign patterns come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceFamily {
    /// Rows 1..=U of a Sylvester Hadamard matrix, truncated to `N` slots.
    Hadamard,
    /// Explicit `N x U` pattern with entries in `[-1, 1]`, scaled by `delta * x`.
    Custom(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanTemplate {
    pub slots: usize,
    pub family: SequenceFamily,
    /// Amplitude fractions `delta` to evaluate.
    pub deltas: Vec<f64>,
}

impl Default for PlanTemplate {
    fn default() -> Self {
        Self {
            slots: 7,
            family: SequenceFamily::Hadamard,
            deltas: log_grid(1e-4, 1e-2, 10),
        }
    }
}

/// Everything a sweep needs. Missing fields fall back to the reference study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: MicrogridConfig,
    pub plan: PlanTemplate,
    pub noise: NoiseModel,
    pub trials: usize,
    /// 1-based controllers whose estimates are evaluated.
    pub controllers: Vec<usize>,
    pub seed: u64,
    /// Expand the transformed load model around the exact `v_bar` instead of the
    /// measured quiet-slot reading.
    pub exact_nominal: bool,
    pub jacobian: JacobianMode,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: MicrogridConfig::reference(),
            plan: PlanTemplate::default(),
            noise: NoiseModel::default(),
            trials: 1000,
            controllers: vec![5],
            seed: 2023,
            exact_nominal: false,
            jacobian: JacobianMode::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        let units = self.scenario.unit_count();
        if self.controllers.is_empty() {
            return Err(Error::InvalidConfig("no controllers selected".into()));
        }
        if let Some(k) = self.controllers.iter().find(|k| **k == 0 || **k > units) {
            return Err(Error::InvalidConfig(format!("controller {k} outside 1..={units}")));
        }
        if self.plan.deltas.is_empty() {
            return Err(Error::InvalidConfig("empty delta grid".into()));
        }
        let max = self.scenario.max_amplitude_fraction();
        for d in &self.plan.deltas {
            if !(*d > 0.0 && *d <= max) {
                return Err(Error::InvalidConfig(format!(
                    "delta {d} outside (0, {max}] for this voltage floor"
                )));
            }
        }
        check_length(self.plan.slots, units)?;
        self.noise.timing.validate()?;
        self.noise.variance()?;
        if let SequenceFamily::Custom(p) = &self.plan.family {
            if p.iter().flatten().any(|e| !(e.abs() <= 1.0)) {
                return Err(Error::InvalidPlan("custom pattern entries must lie in [-1, 1]".into()));
            }
        }
        Ok(())
    }

    /// Training plan at amplitude fraction `delta`.
    pub fn build_plan(&self, delta: f64) -> Result<TrainingPlan> {
        let x = self.scenario.rated_voltage;
        let plan = match &self.plan.family {
            SequenceFamily::Hadamard => hadamard_plan(self.scenario.unit_count(), self.plan.slots, delta, x)?,
            SequenceFamily::Custom(pattern) => {
                if pattern.len() != self.plan.slots {
                    return Err(Error::DimensionMismatch {
                        what: "custom pattern slots",
                        expected: self.plan.slots,
                        found: pattern.len(),
                    });
                }
                let amp = delta * x;
                let rows = pattern.iter().map(|r| r.iter().map(|e| e * amp).collect()).collect();
                TrainingPlan::from_deviations(rows, delta, x, self.noise.timing)?
            }
        };
        let plan = plan.with_timing(self.noise.timing)?;
        plan.check_against(&self.scenario)?;
        Ok(plan)
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    i if i == n - 1 => hi,
                    _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
                })
                .collect()
        }
    }
}

fn parse_fraction(s: &str) -> Result<f64> {
    let s = s.trim();
    // Percentages are shifted in decimal so "0.1%" parses to exactly 0.001.
    let text = match s.strip_suffix('%') {
        Some(p) if !p.trim().contains(['e', 'E']) => format!("{}e-2", p.trim()),
        Some(p) => return parse_fraction(p).map(|v| v / 100.0),
        None => s.to_string(),
    };
    text.parse::<f64>()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse delta '{s}'")))
}

/// Parses a delta list `0.001,0.5%` or a log range `lo:hi:n`.
pub fn parse_deltas(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [lo, hi, n] => {
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad point count in '{s}'")))?;
            let (lo, hi) = (parse_fraction(lo)?, parse_fraction(hi)?);
            if !(lo > 0.0 && hi >= lo) || n == 0 {
                return Err(Error::InvalidConfig(format!("bad delta range '{s}'")));
            }
            Ok(log_grid(lo, hi, n))
        }
        [_] => s.split(',').map(parse_fraction).collect(),
        _ => Err(Error::InvalidConfig(format!("bad delta range '{s}', expected lo:hi:n"))),
    }
}
