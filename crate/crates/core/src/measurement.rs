//! Noise-free slot traces and each controller's noisy slot averages.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{nominal_state, solve_with_offsets, MicrogridConfig, SteadyState};
use crate::rng::SeedKey;
use crate::training::{SlotTiming, TrainingPlan};

/// True steady state of every training slot plus the untrained operating point.
#[derive(Debug, Clone, Serialize)]
pub struct SlotTrace {
    pub rated_voltage: f64,
    pub slots: Vec<SteadyState>,
    pub nominal: SteadyState,
}

impl SlotTrace {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.voltage).collect()
    }

    /// `v[n] - x`.
    pub fn offsets(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.offset).collect()
    }

    pub fn nominal_voltage(&self) -> f64 {
        self.nominal.voltage
    }

    /// `dv[n] = v[n] - v_bar`.
    pub fn deviations(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.offset - self.nominal.offset).collect()
    }
}

/// Forward-simulates every slot of `plan` on `config`.
pub fn simulate_training(config: &MicrogridConfig, plan: &TrainingPlan) -> Result<SlotTrace> {
    plan.check_against(config)?;
    let nominal = nominal_state(config)?;
    let slots = (0..plan.slots())
        .map(|n| {
            solve_with_offsets(config, plan.slot(n)).map_err(|e| Error::InfeasibleSlot {
                slot: n + 1,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlotTrace {
        rated_voltage: config.rated_voltage,
        slots,
        nominal,
    })
}

/// ADC noise and sampling parameters of the slot-averaging front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Per-sample noise level `phi` (V).
    pub sample_std: f64,
    /// Sampling rate `f_S` (Hz).
    pub sampling_rate: f64,
    #[serde(flatten)]
    pub timing: SlotTiming,
}

impl Default for NoiseModel {
    /// 0.01 V per sample at 10 kHz over a 50 ms window: `sigma^2 = 2e-7 V^2`.
    fn default() -> Self {
        Self {
            sample_std: 0.01,
            sampling_rate: 10_000.0,
            timing: SlotTiming::default(),
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sample_std: 0.0,
            ..Self::default()
        }
    }

    /// Samples averaged per slot, `(T_S - tau) f_S`.
    pub fn samples_per_slot(&self) -> f64 {
        self.timing.averaging_window() * self.sampling_rate
    }

    /// `sigma^2 = phi^2 / ((T_S - tau) f_S)`.
    pub fn variance(&self) -> Result<f64> {
        let samples = self.samples_per_slot();
        if !(self.timing.averaging_window() > 0.0 && samples >= 1.0) {
            return Err(Error::Domain(format!(
                "averaging window must hold at least one sample, got {samples}"
            )));
        }
        if !(self.sample_std >= 0.0 && self.sample_std.is_finite()) {
            return Err(Error::Domain(format!(
                "noise level must be >= 0, got {}",
                self.sample_std
            )));
        }
        Ok(self.sample_std * self.sample_std / samples)
    }
}

/// Controller `k`'s averaged voltage readings. Values are stored as offsets from
/// the rated voltage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementSet {
    /// 1-based controller index.
    pub controller: usize,
    pub rated_voltage: f64,
    /// `v~_k[n] - x`.
    pub offsets: Vec<f64>,
    /// Quiet-slot reading of the untrained bus, minus `x`.
    pub nominal_offset: f64,
    pub noise_variance: f64,
    pub seed: Option<SeedKey>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.offsets.iter().map(|e| self.rated_voltage + e).collect()
    }

    pub fn nominal_value(&self) -> f64 {
        self.rated_voltage + self.nominal_offset
    }

    /// CSV with columns `slot,value`; slot 0 is the quiet pre-training reading.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["slot", "value"])?;
        wtr.write_record(["0".to_string(), self.nominal_value().to_string()])?;
        for (n, v) in self.values().into_iter().enumerate() {
            wtr.write_record([(n + 1).to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exact readings, as if the noise were switched off.
pub fn noiseless_measurement(trace: &SlotTrace, controller: usize) -> MeasurementSet {
    MeasurementSet {
        controller,
        rated_voltage: trace.rated_voltage,
        offsets: trace.offsets(),
        nominal_offset: trace.nominal.offset,
        noise_variance: 0.0,
        seed: None,
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every slot and to the quiet nominal slot.
/// Slots are drawn first, then the nominal reading.
pub fn observe(trace: &SlotTrace, controller: usize, noise: &NoiseModel, seed: SeedKey) -> Result<MeasurementSet> {
    let variance = noise.variance()?;
    let sigma = variance.sqrt();
    let mut rng = seed.rng();
    let mut draw = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    };
    let offsets = trace.slots.iter().map(|s| s.offset + draw()).collect();
    let nominal_offset = trace.nominal.offset + draw();
    Ok(MeasurementSet {
        controller,
        rated_voltage: trace.rated_voltage,
        offsets,
        nominal_offset,
        noise_variance: variance,
        seed: Some(seed),
    })
}
