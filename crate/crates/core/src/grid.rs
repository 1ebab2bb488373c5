//! Single-bus DC microgrid forward model.
//!
//! Droop-controlled converters regulate the bus as `v = x_u + i_u / s_u` with the
//! virtual admittance `s_u = W_u / (v_min (x_u - v_min))`. Together with a
//! ZIP-style load (constant admittance, current and power components, each rated
//! at the system voltage `x`) the current balance is a quadratic in `v` whose
//! larger root is the physical operating point.
//!
//! The quadratic is solved in terms of the offset `e = v - x`. Bus voltages sit a
//! few volts away from `x`, so carrying the offset keeps roughly two more decimal
//! digits than the absolute voltage does, and the estimator and sensitivity code
//! depend on those digits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative scale of the current-balance tolerance: `tol = 1e-9 * sum_u x_u s_u`.
pub const RESIDUAL_REL_TOL: f64 = 1e-9;

/// Rounding guard on the discriminant, relative to `B^2`.
const DISCRIMINANT_GUARD: f64 = 1e-12;

/// Aggregate bus load. Every component is rated at the system voltage `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    /// Constant-admittance component (W at voltage `x`).
    pub p_cr: f64,
    /// Constant-current component (W at voltage `x`).
    pub p_cc: f64,
    /// Constant-power component (W).
    pub p_cp: f64,
}

impl LoadModel {
    pub fn new(p_cr: f64, p_cc: f64, p_cp: f64) -> Result<Self> {
        let load = Self { p_cr, p_cc, p_cp };
        load.validate()?;
        Ok(load)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("p_cr", self.p_cr), ("p_cc", self.p_cc), ("p_cp", self.p_cp)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "load component {name} must be finite and >= 0, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_cr, self.p_cc, self.p_cp]
    }

    pub fn total(&self) -> f64 {
        self.p_cr + self.p_cc + self.p_cp
    }

    /// `s_cr = p_cr / x^2`
    pub fn admittance(&self, rated_voltage: f64) -> f64 {
        self.p_cr / (rated_voltage * rated_voltage)
    }

    /// `i_cc = p_cc / x`
    pub fn current(&self, rated_voltage: f64) -> f64 {
        self.p_cc / rated_voltage
    }

    /// Power drawn at bus voltage `v`.
    pub fn power_at(&self, voltage: f64, rated_voltage: f64) -> f64 {
        let r = voltage / rated_voltage;
        r * r * self.p_cr + r * self.p_cc + self.p_cp
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            p_cr: self.p_cr * factor,
            p_cc: self.p_cc * factor,
            p_cp: self.p_cp * factor,
        }
    }
}

/// Static description of the microgrid: the ground truth the estimators target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridConfig {
    /// Rated system voltage `x` (V).
    pub rated_voltage: f64,
    /// Minimum tolerated bus voltage `v_min` (V).
    pub min_voltage: f64,
    /// Generation capacities `W_u` (W), one per droop-controlled unit.
    pub capacities: Vec<f64>,
    pub load: LoadModel,
}

impl MicrogridConfig {
    pub fn new(rated_voltage: f64, min_voltage: f64, capacities: Vec<f64>, load: LoadModel) -> Result<Self> {
        let config = Self {
            rated_voltage,
            min_voltage,
            capacities,
            load,
        };
        config.validate()?;
        Ok(config)
    }

    /// Five units (0.1, 1, 2, 4 and 15 kW) on a 400 V bus with a 390 V floor,
    /// feeding 3.5 kW constant-admittance, 2.5 kW constant-current and 5 kW
    /// constant-power load.
    pub fn reference() -> Self {
        Self {
            rated_voltage: 400.0,
            min_voltage: 390.0,
            capacities: vec![100.0, 1000.0, 2000.0, 4000.0, 15000.0],
            load: LoadModel {
                p_cr: 3500.0,
                p_cc: 2500.0,
                p_cp: 5000.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacities.is_empty() {
            return Err(Error::InvalidConfig("at least one unit is required".into()));
        }
        if !(self.min_voltage.is_finite() && self.rated_voltage.is_finite()) {
            return Err(Error::InvalidConfig("voltages must be finite".into()));
        }
        if !(0.0 < self.min_voltage && self.min_voltage < self.rated_voltage) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < v_min < x, got v_min = {}, x = {}",
                self.min_voltage, self.rated_voltage
            )));
        }
        if let Some((u, w)) = self
            .capacities
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "capacity of unit {} must be positive, got {w}",
                u + 1
            )));
        }
        self.load.validate()
    }

    pub fn unit_count(&self) -> usize {
        self.capacities.len()
    }

    /// Largest admissible training amplitude fraction, `1 - v_min / x`.
    pub fn max_amplitude_fraction(&self) -> f64 {
        1.0 - self.min_voltage / self.rated_voltage
    }
}

/// `alpha = 1 / ((x_u - v_min) v_min)`.
pub fn droop_coefficient(reference_voltage: f64, min_voltage: f64) -> Result<f64> {
    headroom_coefficient(reference_voltage - min_voltage, min_voltage)
}

fn headroom_coefficient(headroom: f64, min_voltage: f64) -> Result<f64> {
    if !(min_voltage > 0.0) {
        return Err(Error::Domain(format!("v_min must be positive, got {min_voltage}")));
    }
    if !(headroom > 0.0) {
        return Err(Error::Domain(format!(
            "reference voltage must exceed v_min (headroom {headroom} V)"
        )));
    }
    Ok(1.0 / (headroom * min_voltage))
}

/// Droop gain giving proportional power sharing, `s_u = W_u / (v_min (x_u - v_min))`.
pub fn virtual_admittance(capacity: f64, reference_voltage: f64, min_voltage: f64) -> Result<f64> {
    if !(capacity > 0.0) {
        return Err(Error::Domain(format!("capacity must be positive, got {capacity}")));
    }
    Ok(capacity * droop_coefficient(reference_voltage, min_voltage)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    /// Bus voltage `v` (V).
    pub voltage: f64,
    /// `v - x`, carried at full precision.
    pub offset: f64,
    /// Output current of each unit (A).
    pub currents: Vec<f64>,
    /// Output power of each unit (W).
    pub powers: Vec<f64>,
    /// Current-balance defect (A).
    pub residual: f64,
    /// `sum_u x_u s_u`, the scale of the current balance (A).
    pub current_scale: f64,
}

impl SteadyState {
    pub fn residual_tolerance(&self) -> f64 {
        RESIDUAL_REL_TOL * self.current_scale
    }

    pub fn within_ratings(&self, config: &MicrogridConfig) -> bool {
        self.powers
            .iter()
            .zip(&config.capacities)
            .all(|(p, w)| *p <= *w * (1.0 + 1e-12))
    }
}

/// Steady state for absolute per-unit reference voltages `x_u`.
pub fn solve_bus_voltage(config: &MicrogridConfig, reference_voltages: &[f64]) -> Result<SteadyState> {
    let x = config.rated_voltage;
    let offsets: Vec<f64> = reference_voltages.iter().map(|xu| xu - x).collect();
    solve_with_offsets(config, &offsets)
}

/// Steady state for reference voltages given as offsets `x_u - x`.
pub fn solve_with_offsets(config: &MicrogridConfig, reference_offsets: &[f64]) -> Result<SteadyState> {
    let units = config.unit_count();
    if reference_offsets.len() != units {
        return Err(Error::DimensionMismatch {
            what: "reference voltages",
            expected: units,
            found: reference_offsets.len(),
        });
    }
    let x = config.rated_voltage;
    let v_min = config.min_voltage;
    let base_headroom = x - v_min;
    let LoadModel { p_cr, p_cc, p_cp } = config.load;

    let mut gains = Vec::with_capacity(units);
    for (&w, &dx) in config.capacities.iter().zip(reference_offsets) {
        gains.push(w * headroom_coefficient(base_headroom + dx, v_min)?);
    }

    // With v = x + e the balance A v^2 - B v + p_cp = 0 becomes
    // A e^2 + b1 e + c0 = 0, whose coefficients carry no cancellation.
    let sum_gain: f64 = gains.iter().sum();
    let a = sum_gain + p_cr / (x * x);
    if !(a > 0.0) {
        return Err(Error::Domain(format!("quadratic coefficient A = {a} must be positive")));
    }
    let b: f64 = gains
        .iter()
        .zip(reference_offsets)
        .map(|(g, dx)| g * (x + dx))
        .sum::<f64>()
        - p_cc / x;
    let b1: f64 = gains
        .iter()
        .zip(reference_offsets)
        .map(|(g, dx)| g * (x - dx))
        .sum::<f64>()
        + (2.0 * p_cr + p_cc) / x;
    let c0 = -x * gains.iter().zip(reference_offsets).map(|(g, dx)| g * dx).sum::<f64>() + p_cr + p_cc + p_cp;

    let mut discriminant = b1 * b1 - 4.0 * a * c0;
    if discriminant < 0.0 {
        if discriminant < -DISCRIMINANT_GUARD * b * b {
            return Err(Error::Infeasible { discriminant });
        }
        discriminant = 0.0;
    }
    let denom = b1 + discriminant.sqrt();
    if !(denom > 0.0) {
        return Err(Error::Infeasible { discriminant });
    }
    let offset = -2.0 * c0 / denom;
    let voltage = x + offset;
    if !(voltage > 0.0) {
        return Err(Error::Infeasible { discriminant });
    }

    let currents: Vec<f64> = gains
        .iter()
        .zip(reference_offsets)
        .map(|(g, dx)| (dx - offset) * g)
        .collect();
    let powers = currents.iter().map(|i| i * voltage).collect();
    let residual = currents.iter().sum::<f64>() - voltage * p_cr / (x * x) - p_cc / x - p_cp / voltage;
    let current_scale = gains.iter().zip(reference_offsets).map(|(g, dx)| g * (x + dx)).sum();

    Ok(SteadyState {
        voltage,
        offset,
        currents,
        powers,
        residual,
        current_scale,
    })
}

/// Bus voltage with every reference at the rated voltage.
pub fn nominal_state(config: &MicrogridConfig) -> Result<SteadyState> {
    solve_with_offsets(config, &vec![0.0; config.unit_count()])
}

pub fn nominal_voltage(config: &MicrogridConfig) -> Result<f64> {
    nominal_state(config).map(|s| s.voltage)
}
