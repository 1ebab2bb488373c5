//! Fisher information and Cramér–Rao bounds for both parameterizations.
//!
//! Implicit differentiation of the slot power balance
//! `F(v, theta) = v^2 (sum_u a_u W_u + p_cr/x^2) - v (sum_u a_u x_u W_u - p_cc/x) + p_cp = 0`
//! gives `dv/dtheta = -q / lambda` with
//!
//! ```text
//! lambda = dF/dv   = sum_u (2v - x_u) a_u W_u + 2 v p_cr/x^2 + p_cc/x
//! q      = dF/dtheta = [a_u v (v - x_u)]_{u != k} ++ [v^2/x^2, v/x, 1]
//! ```
//!
//! so the Gaussian Fisher information is `sigma^-2 sum_n q q^T / lambda^2`.
//!
//! The load block of `q` is nearly collinear, which makes the Fisher matrix
//! extremely ill-conditioned (its condition number is the square of the sensitivity
//! matrix's). All bounds are therefore built from an SVD of the sensitivity matrix
//! expressed in the centered basis `[1, e, e^2]`, `e = v - x`, and mapped back.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::ParameterVector;
use crate::grid::{droop_coefficient, nominal_state, solve_with_offsets, MicrogridConfig};
use crate::linalg::ScaledSvd;
use crate::training::TrainingPlan;

/// `|lambda|` below this fraction of the bus current scale counts as singular.
const LAMBDA_REL_TOL: f64 = 1e-12;

/// How `v_bar` enters the Jacobian of `(omega, chi, zeta)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Differentiate through `v_bar(theta)` as well.
    #[default]
    ChainRule,
    /// Treat `v_bar` as a known constant.
    FixedNominal,
}

/// Per-slot sensitivities of controller `k` at the noise-free operating points.
#[derive(Debug, Clone)]
pub struct SensitivityRecord {
    /// 1-based controller index.
    pub controller: usize,
    pub rated_voltage: f64,
    pub nominal_voltage: f64,
    pub mode: JacobianMode,
    /// `lambda[n]` (W/V).
    pub lambda: Vec<f64>,
    /// `q[n]` as rows, `N x (U + 2)`.
    pub q: DMatrix<f64>,
    /// `d theta* / d theta`.
    pub jacobian: DMatrix<f64>,
    /// Rows `-q_c[n] / lambda[n]` in the centered basis.
    centered_gradient: DMatrix<f64>,
    /// `d theta* / d theta_c`.
    centered_jacobian: DMatrix<f64>,
}

impl SensitivityRecord {
    pub fn parameters(&self) -> usize {
        self.q.ncols()
    }

    /// `dv[n]/dtheta = -q[n]/lambda[n]`, `N x (U + 2)`.
    pub fn voltage_gradient(&self) -> DMatrix<f64> {
        let mut g = self.q.clone();
        for (mut row, l) in g.row_iter_mut().zip(&self.lambda) {
            row /= -*l;
        }
        g
    }
}

/// Full-to-centered coefficient map on the load block:
/// `a0 = p_cr + p_cc + p_cp`, `a1 = (2 p_cr + p_cc)/x`, `a2 = p_cr/x^2`.
fn centered_from_full(params: usize, x: f64) -> DMatrix<f64> {
    let g = params - 3;
    let mut c = DMatrix::identity(params, params);
    c[(g, g)] = 1.0;
    c[(g, g + 1)] = 1.0;
    c[(g, g + 2)] = 1.0;
    c[(g + 1, g)] = 2.0 / x;
    c[(g + 1, g + 1)] = 1.0 / x;
    c[(g + 1, g + 2)] = 0.0;
    c[(g + 2, g)] = 1.0 / (x * x);
    c[(g + 2, g + 1)] = 0.0;
    c[(g + 2, g + 2)] = 0.0;
    c
}

/// Inverse of [`centered_from_full`].
fn full_from_centered(params: usize, x: f64) -> DMatrix<f64> {
    let g = params - 3;
    let mut c = DMatrix::identity(params, params);
    // p_cr = a2 x^2
    c[(g, g)] = 0.0;
    c[(g, g + 2)] = x * x;
    // p_cc = a1 x - 2 a2 x^2
    c[(g + 1, g + 1)] = x;
    c[(g + 1, g + 2)] = -2.0 * x * x;
    // p_cp = a0 - a1 x + a2 x^2
    c[(g + 2, g)] = 1.0;
    c[(g + 2, g + 1)] = -x;
    c[(g + 2, g + 2)] = x * x;
    c
}

struct SlotSensitivity {
    lambda: f64,
    q: Vec<f64>,
    q_centered: Vec<f64>,
}

fn slot_sensitivity(
    config: &MicrogridConfig,
    controller: usize,
    reference_offsets: &[f64],
    offset: f64,
    slot: usize,
    current_scale: f64,
) -> Result<SlotSensitivity> {
    let x = config.rated_voltage;
    let v = x + offset;
    let mut lambda = 0.0;
    let mut gen = Vec::with_capacity(config.unit_count());
    for (u, (&w, &dx)) in config.capacities.iter().zip(reference_offsets).enumerate() {
        let alpha = droop_coefficient(x + dx, config.min_voltage)?;
        lambda += (x + 2.0 * offset - dx) * alpha * w;
        if u + 1 != controller {
            gen.push(alpha * v * (offset - dx));
        }
    }
    let load = config.load;
    lambda += 2.0 * v * load.p_cr / (x * x) + load.p_cc / x;
    if !(lambda.abs() > LAMBDA_REL_TOL * current_scale) {
        return Err(Error::SingularSensitivity { slot, lambda });
    }
    let r = v / x;
    let q = gen.iter().copied().chain([r * r, r, 1.0]).collect();
    let q_centered = gen.into_iter().chain([1.0, offset, offset * offset]).collect();
    Ok(SlotSensitivity { lambda, q, q_centered })
}

/// Sensitivities with the default (chain-rule) Jacobian.
pub fn sensitivities(config: &MicrogridConfig, plan: &TrainingPlan, controller: usize) -> Result<SensitivityRecord> {
    sensitivities_with(config, plan, controller, JacobianMode::default())
}

pub fn sensitivities_with(
    config: &MicrogridConfig,
    plan: &TrainingPlan,
    controller: usize,
    mode: JacobianMode,
) -> Result<SensitivityRecord> {
    plan.check_against(config)?;
    let units = config.unit_count();
    if controller == 0 || controller > units {
        return Err(Error::Domain(format!("controller {controller} outside 1..={units}")));
    }
    let x = config.rated_voltage;
    let params = units + 2;
    let n_slots = plan.slots();

    let mut lambda = Vec::with_capacity(n_slots);
    let mut q = DMatrix::zeros(n_slots, params);
    let mut centered_gradient = DMatrix::zeros(n_slots, params);
    for n in 0..n_slots {
        let state = solve_with_offsets(config, plan.slot(n)).map_err(|e| Error::InfeasibleSlot {
            slot: n + 1,
            source: Box::new(e),
        })?;
        let s = slot_sensitivity(
            config,
            controller,
            plan.slot(n),
            state.offset,
            n + 1,
            state.current_scale,
        )?;
        for j in 0..params {
            q[(n, j)] = s.q[j];
            centered_gradient[(n, j)] = -s.q_centered[j] / s.lambda;
        }
        lambda.push(s.lambda);
    }

    // theta* = R(e_bar) theta_c on the load block, with theta_c the centered
    // coefficients and e_bar = v_bar - x.
    let nominal = nominal_state(config)?;
    let e_bar = nominal.offset;
    let g = params - 3;
    let mut k_mat = DMatrix::identity(params, params);
    k_mat[(g, g + 1)] = e_bar;
    k_mat[(g, g + 2)] = e_bar * e_bar;
    k_mat[(g + 1, g + 2)] = 2.0 * e_bar;

    if mode == JacobianMode::ChainRule {
        let zeros = vec![0.0; units];
        let s = slot_sensitivity(config, controller, &zeros, e_bar, 0, nominal.current_scale)?;
        let theta = ParameterVector::truth(config, controller);
        let a = &centered_from_full(params, x) * DVector::from_vec(theta.to_vec());
        // d omega / d e_bar = a1 + 2 a2 e_bar (= chi), d chi / d e_bar = 2 a2.
        let d_omega = a[g + 1] + 2.0 * a[g + 2] * e_bar;
        let d_chi = 2.0 * a[g + 2];
        for j in 0..params {
            let de_bar = -s.q_centered[j] / s.lambda;
            k_mat[(g, j)] += d_omega * de_bar;
            k_mat[(g + 1, j)] += d_chi * de_bar;
        }
    }

    let jacobian = &k_mat * centered_from_full(params, x);
    Ok(SensitivityRecord {
        controller,
        rated_voltage: x,
        nominal_voltage: nominal.voltage,
        mode,
        lambda,
        q,
        jacobian,
        centered_gradient,
        centered_jacobian: k_mat,
    })
}

fn check_variance(noise_variance: f64) -> Result<()> {
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::Domain(format!(
            "noise variance must be >= 0, got {noise_variance}"
        )));
    }
    Ok(())
}

/// `sigma^2 (G^T G)^{-1}` for a gradient matrix `G`; on failure the weakest
/// direction is reported after mapping through `to_theta`.
fn bound_from_gradient(gradient: &DMatrix<f64>, noise_variance: f64, to_theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_variance(noise_variance)?;
    let svd = ScaledSvd::new(gradient);
    match svd.gram_inverse() {
        Ok(m) => Ok(symmetrize(m * noise_variance)),
        Err((rcond, dir)) => {
            let d = to_theta * dir;
            let n = d.norm();
            Err(Error::SingularInformation {
                rcond,
                direction: (d / n).iter().copied().collect(),
            })
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `sigma^2 (sum_n q q^T / lambda^2)^{-1}` in `(W, p_cr, p_cc, p_cp)` coordinates.
pub fn crb_full(record: &SensitivityRecord, noise_variance: f64) -> Result<DMatrix<f64>> {
    let p = record.parameters();
    let to_theta = full_from_centered(p, record.rated_voltage);
    let centered = bound_from_gradient(&record.centered_gradient, noise_variance, &to_theta)?;
    Ok(symmetrize(&to_theta * centered * to_theta.transpose()))
}

/// `J CRB J^T` with `J = d theta*/d theta`, in `(W, omega, chi, zeta)` coordinates.
pub fn crb_transformed(record: &SensitivityRecord, noise_variance: f64) -> Result<DMatrix<f64>> {
    let p = record.parameters();
    let to_theta = full_from_centered(p, record.rated_voltage);
    let centered = bound_from_gradient(&record.centered_gradient, noise_variance, &to_theta)?;
    let k = &record.centered_jacobian;
    Ok(symmetrize(k * centered * k.transpose()))
}

/// The same bound obtained by inverting the Fisher information written directly
/// in `theta*` coordinates, i.e. with per-slot vectors `J^{-T} q`.
pub fn crb_transformed_direct(record: &SensitivityRecord, noise_variance: f64) -> Result<DMatrix<f64>> {
    let k_inv = record
        .centered_jacobian
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("Jacobian of the load reparameterization is singular".into()))?;
    let gradient = &record.centered_gradient * &k_inv;
    let to_theta = full_from_centered(record.parameters(), record.rated_voltage) * &k_inv;
    bound_from_gradient(&gradient, noise_variance, &to_theta)
}

/// `sqrt(CRB_ii) / |theta_i|`.
pub fn predicted_rrmse(crb: &DMatrix<f64>, truth: &[f64]) -> Vec<f64> {
    truth
        .iter()
        .enumerate()
        .map(|(i, t)| crb[(i, i)].max(0.0).sqrt() / t.abs())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub parameter: String,
    pub truth: f64,
    pub std: f64,
    pub rrmse: f64,
}

/// Per-parameter table: truth, `sqrt(CRB_ii)` and `sqrt(CRB_ii)/theta_i`.
pub fn bound_table(crb: &DMatrix<f64>, truth: &ParameterVector) -> Vec<BoundRow> {
    truth
        .names()
        .into_iter()
        .zip(truth.to_vec())
        .enumerate()
        .map(|(i, (parameter, t))| {
            let std = crb[(i, i)].max(0.0).sqrt();
            BoundRow {
                parameter,
                truth: t,
                std,
                rrmse: std / t.abs(),
            }
        })
        .collect()
}

/// Writes a bound matrix as CSV with a header row of parameter names.
pub fn write_matrix_csv<W: Write>(writer: W, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["parameter".to_string()];
    header.extend(names.iter().cloned());
    wtr.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend((0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
