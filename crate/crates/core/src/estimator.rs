//! Controller-side maximum likelihood estimation.
//!
//! Multiplying the current balance of slot `n` by the measured voltage gives a
//! power balance that is linear in the unknowns:
//!
//! ```text
//! sum_{u != k} W_u a_u[n] v (v - x_u[n]) + p_cr v^2/x^2 + p_cc v/x + p_cp
//!     = -W_k a_k[n] v (v - x_k[n])
//! ```
//!
//! Stacking the slots yields `H theta = pi W_k`. When the training makes `H` full
//! column rank, its least-squares solution drives the Gaussian likelihood to its
//! global optimum.
//!
//! The load columns `[v^2/x^2, v/x, 1]` are nearly collinear because the bus moves
//! by a fraction of a percent. The solver works in the equivalent polynomial basis
//! `[1, d, d^2]` with `d` the voltage offset from a center (the rated voltage for
//! the full parameterization, `v_bar` for the aggregate one). Both bases span the
//! same column space, so the minimizer is unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::MicrogridConfig;
use crate::linalg::{RankDiagnostics, ScaledSvd};
use crate::measurement::MeasurementSet;
use crate::training::TrainingPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Remote capacities plus `(p_cr, p_cc, p_cp)`.
    Full,
    /// Remote capacities plus `(omega, chi, zeta)` around `v_bar`.
    Transformed,
}

impl Variant {
    pub fn load_names(self) -> [&'static str; 3] {
        match self {
            Variant::Full => ["p_cr", "p_cc", "p_cp"],
            Variant::Transformed => ["omega", "chi", "zeta"],
        }
    }
}

/// Unknowns of controller `k`: `U - 1` remote capacities followed by three load terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterVector {
    pub variant: Variant,
    /// 1-based index of the estimating controller.
    pub controller: usize,
    /// `W_u` for every `u != k`, in unit order.
    pub generation: Vec<f64>,
    pub load: [f64; 3],
}

impl ParameterVector {
    /// Ground-truth full parameter vector of controller `k`.
    pub fn truth(config: &MicrogridConfig, controller: usize) -> Self {
        let generation = config
            .capacities
            .iter()
            .enumerate()
            .filter(|(u, _)| u + 1 != controller)
            .map(|(_, w)| *w)
            .collect();
        Self {
            variant: Variant::Full,
            controller,
            generation,
            load: config.load.as_array(),
        }
    }

    pub fn from_slice(variant: Variant, controller: usize, values: &[f64]) -> Self {
        let split = values.len() - 3;
        Self {
            variant,
            controller,
            generation: values[..split].to_vec(),
            load: [values[split], values[split + 1], values[split + 2]],
        }
    }

    pub fn len(&self) -> usize {
        self.generation.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.generation.iter().copied().chain(self.load).collect()
    }

    /// 1-based unit indices of the generation entries.
    pub fn generation_units(&self) -> Vec<usize> {
        let units = self.generation.len() + 1;
        (1..=units).filter(|u| *u != self.controller).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.generation_units()
            .into_iter()
            .map(|u| format!("W{u}"))
            .chain(self.variant.load_names().iter().map(|s| s.to_string()))
            .collect()
    }
}

/// `(p_cr, p_cc, p_cp) -> (omega, chi, zeta)` around the untrained voltage `v_bar`.
pub fn map_theta_to_star(theta: &ParameterVector, nominal_voltage: f64, rated_voltage: f64) -> ParameterVector {
    assert_eq!(theta.variant, Variant::Full, "expected a full parameter vector");
    let [p_cr, p_cc, p_cp] = theta.load;
    let (vb, x) = (nominal_voltage, rated_voltage);
    let r = vb / x;
    ParameterVector {
        variant: Variant::Transformed,
        controller: theta.controller,
        generation: theta.generation.clone(),
        load: [
            r * r * p_cr + r * p_cc + p_cp,
            2.0 * vb * p_cr / (x * x) + p_cc / x,
            p_cr / (x * x),
        ],
    }
}

/// Inverse of [`map_theta_to_star`].
pub fn map_star_to_theta(star: &ParameterVector, nominal_voltage: f64, rated_voltage: f64) -> ParameterVector {
    assert_eq!(
        star.variant,
        Variant::Transformed,
        "expected a transformed parameter vector"
    );
    let [omega, chi, zeta] = star.load;
    let (vb, x) = (nominal_voltage, rated_voltage);
    let p_cr = zeta * x * x;
    let p_cc = (chi - 2.0 * vb * zeta) * x;
    let p_cp = omega - vb * vb * zeta - vb / x * p_cc;
    ParameterVector {
        variant: Variant::Full,
        controller: star.controller,
        generation: star.generation.clone(),
        load: [p_cr, p_cc, p_cp],
    }
}

/// Aggregate demand: `omega` for the transformed vector (power drawn at `v_bar`),
/// `p_cr + p_cc + p_cp` for the full one.
pub fn total_load(params: &ParameterVector) -> f64 {
    match params.variant {
        Variant::Transformed => params.load[0],
        Variant::Full => params.load.iter().sum(),
    }
}

/// What controller `k` knows without communication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalKnowledge {
    /// 1-based controller index.
    pub controller: usize,
    pub units: usize,
    pub own_capacity: f64,
    pub rated_voltage: f64,
    pub min_voltage: f64,
}

impl LocalKnowledge {
    pub fn for_controller(config: &MicrogridConfig, controller: usize) -> Result<Self> {
        if controller == 0 || controller > config.unit_count() {
            return Err(Error::Domain(format!(
                "controller {controller} outside 1..={}",
                config.unit_count()
            )));
        }
        Ok(Self {
            controller,
            units: config.unit_count(),
            own_capacity: config.capacities[controller - 1],
            rated_voltage: config.rated_voltage,
            min_voltage: config.min_voltage,
        })
    }
}

/// Controller `k`'s linear system `H theta = pi W_k`.
#[derive(Debug, Clone)]
pub struct RegressionSystem {
    pub variant: Variant,
    pub controller: usize,
    pub own_capacity: f64,
    pub rated_voltage: f64,
    /// Generation block, `N x (U - 1)`.
    generation: DMatrix<f64>,
    /// `v~[n] - x`.
    load_offsets: DVector<f64>,
    /// Offset of the polynomial center from `x`: zero (full) or `v_bar - x`.
    center_offset: f64,
    pi: DVector<f64>,
}

impl RegressionSystem {
    pub fn slots(&self) -> usize {
        self.pi.len()
    }

    pub fn parameters(&self) -> usize {
        self.generation.ncols() + 3
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// `pi W_k`.
    pub fn rhs(&self) -> DVector<f64> {
        &self.pi * self.own_capacity
    }

    /// The regression matrix in its textbook form: `[Pi, v^2/x^2, v/x, 1]` for the
    /// full variant, `[Pi, 1, dv, dv^2]` for the transformed one.
    pub fn matrix(&self) -> DMatrix<f64> {
        let x = self.rated_voltage;
        let load: Vec<[f64; 3]> = match self.variant {
            Variant::Full => self
                .load_offsets
                .iter()
                .map(|e| {
                    let r = (x + e) / x;
                    [r * r, r, 1.0]
                })
                .collect(),
            Variant::Transformed => self
                .load_offsets
                .iter()
                .map(|e| {
                    let d = e - self.center_offset;
                    [1.0, d, d * d]
                })
                .collect(),
        };
        self.with_load_block(&load)
    }

    /// Centered polynomial basis `[Pi, 1, d, d^2]` the solver factorizes.
    fn solve_matrix(&self) -> DMatrix<f64> {
        let load: Vec<[f64; 3]> = self
            .load_offsets
            .iter()
            .map(|e| {
                let d = e - self.center_offset;
                [1.0, d, d * d]
            })
            .collect();
        self.with_load_block(&load)
    }

    fn with_load_block(&self, load: &[[f64; 3]]) -> DMatrix<f64> {
        let (n, g) = self.generation.shape();
        DMatrix::from_fn(
            n,
            g + 3,
            |i, j| if j < g { self.generation[(i, j)] } else { load[i][j - g] },
        )
    }

    /// Rank and conditioning of the (column-equilibrated) system.
    pub fn diagnostics(&self) -> RankDiagnostics {
        ScaledSvd::new(&self.solve_matrix()).diagnostics
    }
}

fn assemble(
    measurements: &MeasurementSet,
    plan: &TrainingPlan,
    local: &LocalKnowledge,
    variant: Variant,
    center_offset: f64,
) -> Result<RegressionSystem> {
    if measurements.len() != plan.slots() {
        return Err(Error::DimensionMismatch {
            what: "measurement slots",
            expected: plan.slots(),
            found: measurements.len(),
        });
    }
    if plan.units() != local.units {
        return Err(Error::DimensionMismatch {
            what: "plan units",
            expected: local.units,
            found: plan.units(),
        });
    }
    if measurements.controller != local.controller {
        return Err(Error::Domain(format!(
            "measurements belong to controller {}, not {}",
            measurements.controller, local.controller
        )));
    }
    if local.controller == 0 || local.controller > local.units {
        return Err(Error::Domain(format!(
            "controller {} outside 1..={}",
            local.controller, local.units
        )));
    }
    let x = local.rated_voltage;
    let v_min = local.min_voltage;
    let headroom = x - v_min;
    let k = local.controller - 1;
    let n_slots = plan.slots();

    // Term a_u[n] v (v - x_u[n]) for every unit.
    let term = |n: usize, u: usize| -> Result<f64> {
        let dx = plan.slot(n)[u];
        let e = measurements.offsets[n];
        let h = headroom + dx;
        if !(h > 0.0) {
            return Err(Error::Domain(format!(
                "slot {} unit {}: reference at or below v_min",
                n + 1,
                u + 1
            )));
        }
        Ok((x + e) * (e - dx) / (v_min * h))
    };

    let remote: Vec<usize> = (0..local.units).filter(|u| *u != k).collect();
    let mut generation = DMatrix::zeros(n_slots, remote.len());
    let mut pi = DVector::zeros(n_slots);
    for n in 0..n_slots {
        for (j, &u) in remote.iter().enumerate() {
            generation[(n, j)] = term(n, u)?;
        }
        pi[n] = -term(n, k)?;
    }
    Ok(RegressionSystem {
        variant,
        controller: local.controller,
        own_capacity: local.own_capacity,
        rated_voltage: x,
        generation,
        load_offsets: DVector::from_column_slice(&measurements.offsets),
        center_offset,
        pi,
    })
}

/// System for the capacities and the three load components.
pub fn assemble_full(
    measurements: &MeasurementSet,
    plan: &TrainingPlan,
    local: &LocalKnowledge,
) -> Result<RegressionSystem> {
    assemble(measurements, plan, local, Variant::Full, 0.0)
}

/// System for the capacities and `(omega, chi, zeta)`, expanded around `v_bar`
/// (either the measured quiet-slot voltage or the exact one).
pub fn assemble_transformed(
    measurements: &MeasurementSet,
    plan: &TrainingPlan,
    local: &LocalKnowledge,
    nominal_voltage: f64,
) -> Result<RegressionSystem> {
    assemble(
        measurements,
        plan,
        local,
        Variant::Transformed,
        nominal_voltage - local.rated_voltage,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub params: ParameterVector,
    /// `||H theta_hat - pi W_k||` with `H` in its textbook form.
    pub residual_norm: f64,
    pub diagnostics: RankDiagnostics,
}

/// Least-squares solution of `H theta = pi W_k` via an SVD of the centered,
/// column-equilibrated system.
pub fn solve_mle(system: &RegressionSystem) -> Result<Estimate> {
    let svd = ScaledSvd::new(&system.solve_matrix());
    let rhs = system.rhs();
    let coef = svd.solve(&rhs)?;
    let g = system.parameters() - 3;
    let (a0, a1, a2) = (coef[g], coef[g + 1], coef[g + 2]);
    let load = match system.variant {
        Variant::Transformed => [a0, a1, a2],
        Variant::Full => {
            // a0 + a1 d + a2 d^2 with d = v - x.
            let x = system.rated_voltage;
            let p_cr = a2 * x * x;
            let p_cc = (a1 - 2.0 * a2 * x) * x;
            [p_cr, p_cc, a0 - p_cr - p_cc]
        }
    };
    let params = ParameterVector {
        variant: system.variant,
        controller: system.controller,
        generation: coef.rows(0, g).iter().copied().collect(),
        load,
    };
    let theta = DVector::from_vec(params.to_vec());
    let residual_norm = (system.matrix() * theta - rhs).norm();
    Ok(Estimate {
        params,
        residual_norm,
        diagnostics: svd.diagnostics,
    })
}
