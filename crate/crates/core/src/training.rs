//! Reference-voltage training sequences.
//!
//! During training every controller holds `x_u[n] = x + dx_u[n]` for slot `n`.
//! The built-in generator assigns rows of a Sylvester-Hadamard matrix to units;
//! arbitrary sequences (Walsh, Gold, hand-made) can be loaded as a deviation
//! matrix and go through the same checks.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{assemble_full, LocalKnowledge};
use crate::grid::MicrogridConfig;
use crate::linalg::RankDiagnostics;
use crate::measurement::{noiseless_measurement, simulate_training};

/// Relative slack allowed on the amplitude bound when validating user matrices.
const AMPLITUDE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlotTiming {
    /// Slot length `T_S` (s).
    pub slot_duration: f64,
    /// Settling time `tau` before averaging starts (s).
    pub settle_time: f64,
}

impl Default for SlotTiming {
    /// 50 ms averaging window after a 5 ms settle.
    fn default() -> Self {
        Self {
            slot_duration: 0.055,
            settle_time: 0.005,
        }
    }
}

impl SlotTiming {
    pub fn averaging_window(&self) -> f64 {
        self.slot_duration - self.settle_time
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.settle_time > 0.0 && self.settle_time < self.slot_duration) {
            return Err(Error::InvalidPlan(format!(
                "need 0 < tau < T_S, got tau = {}, T_S = {}",
                self.settle_time, self.slot_duration
            )));
        }
        Ok(())
    }
}

/// The `N x U` matrix of reference deviations (V) shared by all controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanData", into = "PlanData")]
pub struct TrainingPlan {
    amplitude_fraction: f64,
    rated_voltage: f64,
    deviations: Vec<Vec<f64>>,
    timing: SlotTiming,
}

#[derive(Serialize, Deserialize)]
struct PlanData {
    amplitude_fraction: f64,
    rated_voltage: f64,
    deviations: Vec<Vec<f64>>,
    #[serde(default)]
    timing: SlotTiming,
}

impl TryFrom<PlanData> for TrainingPlan {
    type Error = Error;

    fn try_from(d: PlanData) -> Result<Self> {
        TrainingPlan::from_deviations(d.deviations, d.amplitude_fraction, d.rated_voltage, d.timing)
    }
}

impl From<TrainingPlan> for PlanData {
    fn from(p: TrainingPlan) -> Self {
        PlanData {
            amplitude_fraction: p.amplitude_fraction,
            rated_voltage: p.rated_voltage,
            deviations: p.deviations,
            timing: p.timing,
        }
    }
}

impl TrainingPlan {
    /// Builds a plan from explicit slot-major deviations (`rows[n][u]`, volts).
    pub fn from_deviations(
        rows: Vec<Vec<f64>>,
        amplitude_fraction: f64,
        rated_voltage: f64,
        timing: SlotTiming,
    ) -> Result<Self> {
        if !(amplitude_fraction > 0.0 && amplitude_fraction < 1.0) {
            return Err(Error::InvalidPlan(format!(
                "amplitude fraction must lie in (0, 1), got {amplitude_fraction}"
            )));
        }
        if !(rated_voltage > 0.0) {
            return Err(Error::InvalidPlan(format!(
                "rated voltage must be positive, got {rated_voltage}"
            )));
        }
        timing.validate()?;
        let units = rows.first().map_or(0, Vec::len);
        if units == 0 {
            return Err(Error::InvalidPlan("plan has no slots or no units".into()));
        }
        if let Some(n) = rows.iter().position(|r| r.len() != units) {
            return Err(Error::InvalidPlan(format!(
                "slot {} has {} entries, expected {units}",
                n + 1,
                rows[n].len()
            )));
        }
        check_length(rows.len(), units)?;
        let bound = amplitude_fraction * rated_voltage;
        for (n, row) in rows.iter().enumerate() {
            for (u, d) in row.iter().enumerate() {
                if !(d.is_finite() && d.abs() <= bound * (1.0 + AMPLITUDE_SLACK)) {
                    return Err(Error::InvalidPlan(format!(
                        "deviation {d} V at slot {}, unit {} exceeds the amplitude {bound} V",
                        n + 1,
                        u + 1
                    )));
                }
            }
        }
        Ok(Self {
            amplitude_fraction,
            rated_voltage,
            deviations: rows,
            timing,
        })
    }

    /// Reads an `N x U` deviation matrix (volts) from CSV. A non-numeric first row is
    /// treated as a header.
    pub fn from_csv<R: Read>(
        reader: R,
        amplitude_fraction: f64,
        rated_voltage: f64,
        timing: SlotTiming,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(r) => rows.push(r),
                Err(_) if i == 0 => continue,
                Err(e) => {
                    return Err(Error::InvalidPlan(format!("row {}: {e}", i + 1)));
                }
            }
        }
        Self::from_deviations(rows, amplitude_fraction, rated_voltage, timing)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.units()).map(|u| format!("unit{u}")).collect();
        wtr.write_record(&header)?;
        for row in &self.deviations {
            wtr.write_record(row.iter().map(|d| d.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn with_timing(mut self, timing: SlotTiming) -> Result<Self> {
        timing.validate()?;
        self.timing = timing;
        Ok(self)
    }

    pub fn slots(&self) -> usize {
        self.deviations.len()
    }

    pub fn units(&self) -> usize {
        self.deviations[0].len()
    }

    pub fn amplitude_fraction(&self) -> f64 {
        self.amplitude_fraction
    }

    /// `delta * x` (V).
    pub fn amplitude(&self) -> f64 {
        self.amplitude_fraction * self.rated_voltage
    }

    pub fn rated_voltage(&self) -> f64 {
        self.rated_voltage
    }

    pub fn timing(&self) -> SlotTiming {
        self.timing
    }

    pub fn deviations(&self) -> &[Vec<f64>] {
        &self.deviations
    }

    /// Deviations of all units during slot `n` (0-based).
    pub fn slot(&self, n: usize) -> &[f64] {
        &self.deviations[n]
    }

    /// The sequence injected by unit `u` (0-based).
    pub fn sequence(&self, u: usize) -> Vec<f64> {
        self.deviations.iter().map(|r| r[u]).collect()
    }

    /// Checks that the plan drives `config`: same unit count and rated voltage, and
    /// an amplitude that keeps every reference above `v_min`.
    pub fn check_against(&self, config: &MicrogridConfig) -> Result<()> {
        if self.units() != config.unit_count() {
            return Err(Error::DimensionMismatch {
                what: "plan units",
                expected: config.unit_count(),
                found: self.units(),
            });
        }
        if self.rated_voltage != config.rated_voltage {
            return Err(Error::InvalidPlan(format!(
                "plan built for x = {} V but the grid is rated {} V",
                self.rated_voltage, config.rated_voltage
            )));
        }
        let limit = config.max_amplitude_fraction();
        if self.amplitude_fraction > limit {
            return Err(Error::InvalidPlan(format!(
                "amplitude fraction {} exceeds 1 - v_min/x = {limit}",
                self.amplitude_fraction
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_length(slots: usize, units: usize) -> Result<()> {
    if slots < units + 2 {
        return Err(Error::InvalidPlan(format!(
            "{slots} slots cannot identify {} parameters (need N >= U + 2)",
            units + 2
        )));
    }
    Ok(())
}

/// Entry `(i, j)` of the Sylvester-Hadamard matrix of any power-of-two order.
pub fn sylvester_entry(i: usize, j: usize) -> i8 {
    if (i & j).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

pub fn sylvester_hadamard(order: usize) -> Vec<Vec<i8>> {
    assert!(
        order.is_power_of_two(),
        "Sylvester construction needs a power-of-two order"
    );
    (0..order)
        .map(|i| (0..order).map(|j| sylvester_entry(i, j)).collect())
        .collect()
}

/// Binary +-`delta x` plan: unit `u` gets row `u + 1` of the smallest Sylvester
/// matrix of order `>= max(N, U + 1)` (row 0 is all ones and is skipped),
/// truncated to `N` slots.
pub fn hadamard_plan(units: usize, slots: usize, amplitude_fraction: f64, rated_voltage: f64) -> Result<TrainingPlan> {
    if units == 0 {
        return Err(Error::InvalidPlan("at least one unit is required".into()));
    }
    check_length(slots, units)?;
    let amplitude = amplitude_fraction * rated_voltage;
    let rows = (0..slots)
        .map(|n| {
            (0..units)
                .map(|u| f64::from(sylvester_entry(u + 1, n)) * amplitude)
                .collect()
        })
        .collect();
    TrainingPlan::from_deviations(rows, amplitude_fraction, rated_voltage, SlotTiming::default())
}

#[derive(Debug, Clone, Serialize)]
pub struct ControllerExcitation {
    /// 1-based controller index.
    pub controller: usize,
    pub required_rank: usize,
    pub diagnostics: RankDiagnostics,
}

impl ControllerExcitation {
    pub fn sufficient(&self) -> bool {
        self.diagnostics.is_full_rank()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExcitationReport {
    pub controllers: Vec<ControllerExcitation>,
}

impl ExcitationReport {
    pub fn sufficient(&self) -> bool {
        self.controllers.iter().all(ControllerExcitation::sufficient)
    }

    pub fn insufficient_controllers(&self) -> Vec<usize> {
        self.controllers
            .iter()
            .filter(|c| !c.sufficient())
            .map(|c| c.controller)
            .collect()
    }
}

/// Noise-free rank check of every controller's regression matrix.
pub fn validate_excitation(config: &MicrogridConfig, plan: &TrainingPlan) -> Result<ExcitationReport> {
    let trace = simulate_training(config, plan)?;
    let controllers = (1..=config.unit_count())
        .map(|k| {
            let meas = noiseless_measurement(&trace, k);
            let local = LocalKnowledge::for_controller(config, k)?;
            let system = assemble_full(&meas, plan, &local)?;
            Ok(ControllerExcitation {
                controller: k,
                required_rank: config.unit_count() + 2,
                diagnostics: system.diagnostics(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExcitationReport { controllers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_hadamard_plan() {
        let plan = hadamard_plan(5, 7, 0.005, 400.0).unwrap();
        assert_eq!(plan.slots(), 7);
        assert_eq!(plan.units(), 5);
        assert!((plan.amplitude() - 2.0).abs() < 1e-15);
        let h = sylvester_hadamard(8);
        for u in 0..5 {
            let seq = plan.sequence(u);
            for n in 0..7 {
                assert_eq!(seq[n], f64::from(h[u + 1][n]) * plan.amplitude());
            }
        }
    }

    #[test]
    fn single_unit_plan() {
        let plan = hadamard_plan(1, 3, 0.001, 400.0).unwrap();
        assert_eq!((plan.slots(), plan.units()), (3, 1));
        assert!(plan.deviations().iter().all(|r| (r[0].abs() - 0.4).abs() < 1e-12));
    }

    #[test]
    fn too_few_slots_rejected() {
        assert!(matches!(hadamard_plan(5, 6, 0.005, 400.0), Err(Error::InvalidPlan(_))));
        assert!(matches!(
            TrainingPlan::from_deviations(vec![vec![0.0; 3]; 4], 0.01, 400.0, SlotTiming::default()),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn sylvester_rows_are_orthogonal() {
        for order in [1, 2, 4, 8, 16] {
            let h = sylvester_hadamard(order);
            for i in 0..order {
                for j in 0..order {
                    let dot: i32 = (0..order).map(|n| i32::from(h[i][n]) * i32::from(h[j][n])).sum();
                    assert_eq!(dot, if i == j { order as i32 } else { 0 });
                }
            }
        }
    }

    #[test]
    fn amplitude_and_shape_checks() {
        let t = SlotTiming::default();
        let over = vec![vec![2.1, 0.0], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]];
        assert!(TrainingPlan::from_deviations(over, 0.005, 400.0, t).is_err());
        let ragged = vec![vec![1.0, 0.0], vec![0.0], vec![0.0; 2], vec![0.0; 2]];
        assert!(TrainingPlan::from_deviations(ragged, 0.005, 400.0, t).is_err());
        let bad_timing = SlotTiming {
            slot_duration: 0.01,
            settle_time: 0.02,
        };
        assert!(hadamard_plan(2, 4, 0.005, 400.0)
            .unwrap()
            .with_timing(bad_timing)
            .is_err());
    }

    #[test]
    fn amplitude_must_respect_voltage_floor() {
        let config = MicrogridConfig::reference();
        assert!(hadamard_plan(5, 7, 0.025, 400.0)
            .unwrap()
            .check_against(&config)
            .is_ok());
        let plan = hadamard_plan(5, 7, 0.03, 400.0).unwrap();
        assert!(plan.check_against(&config).is_err());
        let plan = hadamard_plan(4, 7, 0.005, 400.0).unwrap();
        assert!(plan.check_against(&config).is_err());
    }

    #[test]
    fn csv_round_trip_with_header() {
        let plan = hadamard_plan(3, 6, 0.01, 400.0).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let back = TrainingPlan::from_csv(buf.as_slice(), 0.01, 400.0, SlotTiming::default()).unwrap();
        assert_eq!(back, plan);
        let headerless = "1.0,-1.0\n-1.0,1.0\n1.0,1.0\n-1.0,-1.0\n";
        let p = TrainingPlan::from_csv(headerless.as_bytes(), 0.005, 400.0, SlotTiming::default()).unwrap();
        assert_eq!(p.slots(), 4);
    }

    #[test]
    fn serde_rejects_invalid_plan() {
        let json = r#"{"amplitude_fraction":0.005,"rated_voltage":400.0,"deviations":[[5.0]]}"#;
        assert!(serde_json::from_str::<TrainingPlan>(json).is_err());
    }

    #[test]
    fn reference_plan_is_sufficient_for_every_controller() {
        let config = MicrogridConfig::reference();
        let plan = hadamard_plan(5, 7, 0.005, 400.0).unwrap();
        let report = validate_excitation(&config, &plan).unwrap();
        assert!(report.sufficient());
        for c in &report.controllers {
            assert_eq!(c.diagnostics.rank, 7);
        }
    }

    #[test]
    fn silent_plan_is_insufficient() {
        let config = MicrogridConfig::reference();
        let plan = TrainingPlan::from_deviations(vec![vec![0.0; 5]; 7], 0.005, 400.0, SlotTiming::default()).unwrap();
        let report = validate_excitation(&config, &plan).unwrap();
        assert_eq!(report.insufficient_controllers(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn shared_sequence_blinds_every_controller() {
        let config = MicrogridConfig::reference();
        let base = hadamard_plan(5, 7, 0.005, 400.0).unwrap();
        // Units 2 and 4 inject the same sequence.
        let rows = base
            .deviations()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r[3] = r[1];
                r
            })
            .collect();
        let plan = TrainingPlan::from_deviations(rows, 0.005, 400.0, SlotTiming::default()).unwrap();
        let report = validate_excitation(&config, &plan).unwrap();
        // Controllers other than 2 and 4 see two identical columns; controllers 2
        // and 4 cannot tell their own injection from their twin's.
        assert_eq!(report.insufficient_controllers(), vec![1, 2, 3, 4, 5]);
        assert!(report.controllers.iter().all(|c| c.diagnostics.rank == 6));
    }
}
