//! Energies, dissipation, balance residuals, decay fits, limit velocity and
//! density norms.

use serde::{Deserialize, Serialize};

use crate::coupling::{deposit_moments, MomentFields, SystemState};
use crate::error::{Result, SimError};
use crate::fluid::{sym_gradient, tensor_norm_sq, PowerLaw, Vec3};
use crate::kinetic::{interp_velocity, moment};
use crate::sum::CompensatedSum;

/// One time sample of the monitored quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub dim: usize,
    pub t: f64,
    pub e_tot: f64,
    pub e_mod: f64,
    pub d: f64,
    pub d_visc: f64,
    pub d_drag: f64,
    pub u_c: Vec3,
    pub v_c: Vec3,
    pub mass: f64,
    pub momentum: Vec3,
    /// `(q, ||rho||_q)`, with `q = inf` for the maximum.
    pub rho_norms: Vec<(f64, f64)>,
    /// `sum w_i (1 + |v_i|)^2`.
    pub max_moment: f64,
}

fn norm_sq(a: &Vec3, b: &Vec3, dim: usize) -> f64 {
    (0..dim).map(|c| (a[c] - b[c]).powi(2)).sum()
}

/// `v_c = sum_i w_i v_i`.
pub fn particle_mean_velocity(s: &SystemState) -> Vec3 {
    s.particles.momentum()
}

/// `1/2 sum w |v - v_c|^2 + 1/2 ||w||^2 + 1/4 |u_c - v_c|^2`.
pub fn modulated_energy(s: &SystemState) -> f64 {
    let dim = s.grid().dim();
    let v_c = particle_mean_velocity(s);
    s.particles.kinetic_energy_about(v_c)
        + 0.5 * s.fluid.fluctuation_energy()
        + 0.25 * norm_sq(&s.fluid.u_c(), &v_c, dim)
}

/// `1/2 sum w |v|^2 + 1/2 int |u|^2`.
pub fn total_energy(s: &SystemState) -> f64 {
    let dim = s.grid().dim();
    s.particles.kinetic_energy_about([0.0; 3])
        + 0.5 * s.fluid.fluctuation_energy()
        + 0.5 * norm_sq(&s.fluid.u_c(), &[0.0; 3], dim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dissipation {
    pub total: f64,
    /// `mu int |Du|^p` without regularization.
    pub visc: f64,
    /// `sum w |u(x_i) - v_i|^2`.
    pub drag: f64,
    /// `int tau(Du) : Du` with the regularized stress of the dynamics.
    pub visc_regularized: f64,
}

impl Dissipation {
    /// Whether the regularized and unregularized viscous terms differ by more than 1%.
    pub fn regularization_visible(&self) -> bool {
        (self.visc - self.visc_regularized).abs() > 1e-2 * self.visc.abs().max(self.visc_regularized.abs())
    }
}

pub fn dissipation(s: &SystemState, law: &PowerLaw) -> Dissipation {
    let grid = s.grid();
    let dim = grid.dim();
    let du = sym_gradient(s.fluid.w(), s.fluid.u_c());
    let (mut visc, mut reg) = (CompensatedSum::new(), CompensatedSum::new());
    for x in 0..grid.len() {
        let n2 = tensor_norm_sq(&du, dim, x);
        visc.add(law.mu * n2.powf(0.5 * law.p));
        reg.add(law.stress_factor(n2) * n2);
    }
    let len = grid.len() as f64;
    let visc = visc.value() / len;
    let visc_regularized = reg.value() / len;
    let u = interp_velocity(&s.fluid, s.particles.positions());
    let mut drag = CompensatedSum::new();
    for ((ui, vi), w) in u.iter().zip(s.particles.velocities()).zip(s.particles.weights()) {
        drag.add(w * norm_sq(ui, vi, dim));
    }
    let drag = drag.value();
    let out = Dissipation {
        total: visc + drag,
        visc,
        drag,
        visc_regularized,
    };
    if out.regularization_visible() {
        log::info!(
            "t = {}: regularized viscous dissipation {} differs from {} by more than 1%",
            s.t,
            visc_regularized,
            visc
        );
    }
    out
}

/// `||rho||_q = (int rho^q)^(1/q)`; `q = inf` gives the maximum.
pub fn density_norms(mom: &MomentFields, qs: &[f64]) -> Vec<(f64, f64)> {
    let rho = mom.rho.component(0);
    let len = rho.len() as f64;
    qs.iter()
        .map(|&q| {
            let v = if q.is_infinite() {
                rho.iter().fold(0.0f64, |m, r| m.max(r.abs()))
            } else {
                let mut s = CompensatedSum::new();
                rho.iter().for_each(|r| s.add(r.abs().powf(q)));
                (s.value() / len).powf(1.0 / q)
            };
            (q, v)
        })
        .collect()
}

/// Smallest admissible `r` in the uniform density bound assumed by the decay
/// theorem, and whether it is included. `None` below `p = 6/5`.
pub fn density_exponent_threshold(p: f64) -> Option<(f64, bool)> {
    if p < 1.2 {
        None
    } else if p < 2.0 {
        Some((6.0 / (5.0 * p - 6.0), true))
    } else if p < 3.0 {
        Some((3.0 * p / (5.0 * p - 6.0), true))
    } else if p == 3.0 {
        Some((1.0, false))
    } else {
        Some((1.0, true))
    }
}

/// Evaluates every diagnostic of one state.
pub fn diagnostics_row(s: &SystemState, law: &PowerLaw, qs: &[f64]) -> DiagnosticsRow {
    let d = dissipation(s, law);
    let mom = deposit_moments(&s.particles, &s.grid());
    DiagnosticsRow {
        dim: s.grid().dim(),
        t: s.t,
        e_tot: total_energy(s),
        e_mod: modulated_energy(s),
        d: d.total,
        d_visc: d.visc,
        d_drag: d.drag,
        u_c: s.fluid.u_c(),
        v_c: particle_mean_velocity(s),
        mass: s.particles.total_mass(),
        momentum: s.total_momentum(),
        rho_norms: density_norms(&mom, qs),
        max_moment: moment(&s.particles, 2.0),
    }
}

/// `1/2 (sum w v + u_c)` at the initial state.
pub fn v_infinity(initial: &SystemState) -> Vec3 {
    let p = initial.particles.momentum();
    let uc = initial.fluid.u_c();
    let mut out = [0.0; 3];
    for a in 0..initial.grid().dim() {
        out[a] = 0.5 * (p[a] + uc[a]);
    }
    out
}

fn check_times(t: &[f64]) -> Result<()> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err(SimError::MalformedInput("non-finite time".into()));
    }
    if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
        return Err(SimError::MalformedInput(format!(
            "times must be strictly increasing (row {} has t = {} after t = {})",
            i + 1,
            t[i + 1],
            t[i]
        )));
    }
    Ok(())
}

/// Relative defects of `E(t) + int_0^t D - E(0)`, maximized over the
/// rows, for the modulated and the total energy. The time integral is the
/// trapezoid rule over the row times.
pub fn balance_residual(series: &[DiagnosticsRow]) -> Result<(f64, f64)> {
    if series.len() < 3 {
        return Err(SimError::InsufficientData(format!(
            "balance residual needs at least 3 rows, got {}",
            series.len()
        )));
    }
    let t: Vec<f64> = series.iter().map(|r| r.t).collect();
    check_times(&t)?;
    let e_mod0 = series[0].e_mod;
    if e_mod0 <= 0.0 {
        return Err(SimError::DegenerateInput(
            "initial modulated energy is zero; the state is already at equilibrium".into(),
        ));
    }
    let e_tot0 = series[0].e_tot;
    let (mut r_mod, mut r_tot) = (0.0f64, 0.0f64);
    let mut int_d = CompensatedSum::new();
    for k in 1..series.len() {
        int_d.add(0.5 * (series[k].t - series[k - 1].t) * (series[k].d + series[k - 1].d));
        let i = int_d.value();
        r_mod = r_mod.max((series[k].e_mod + i - e_mod0).abs() / e_mod0);
        r_tot = r_tot.max((series[k].e_tot + i - e_tot0).abs() / e_tot0.max(f64::MIN_POSITIVE));
    }
    Ok((r_mod, r_tot))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    Exponential,
    Algebraic,
}

impl DecayMode {
    pub fn for_exponent(p: f64) -> Self {
        if p <= 2.0 {
            Self::Exponential
        } else {
            Self::Algebraic
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Self::Exponential => "exp",
            Self::Algebraic => "alg",
        }
    }
}

/// Regression of the modulated energy against the decay law for exponent `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub mode: DecayMode,
    pub p: f64,
    pub window: [f64; 2],
    pub samples: usize,
    /// Slope of `log E` (exponential) or `E^((2-p)/2)` (algebraic) against `t`.
    pub slope: f64,
    pub intercept: f64,
    /// Fitted `C_0`: `-slope` or `slope / (p/2 - 1)`.
    pub rate: f64,
    /// Decay exponent `-2/(p-2)` of the algebraic law.
    pub exponent: Option<f64>,
    pub r_squared: f64,
    /// `min D / E^gamma` over the window, `gamma = 1` or `p/2`.
    pub envelope_constant: f64,
    /// `max_t E(t) / envelope(t)` over the whole series.
    pub envelope_ratio: f64,
    /// `R^2` of the log-linear fit, reported for algebraic runs.
    pub r_squared_log: Option<f64>,
    /// Set when an algebraic run decays faster than the algebraic law.
    pub regime_flag: Option<String>,
}

impl DecayFit {
    pub fn envelope_holds(&self, slack: f64) -> bool {
        self.envelope_ratio <= slack
    }
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 {
        1.0 - ss_res / syy
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    (slope, intercept, r2.clamp(0.0, 1.0))
}

/// Fits the decay law on the window where `1e-8 E(0) <= E <= 1e-1 E(0)`.
pub fn fit_decay(series: &[DiagnosticsRow], p: f64) -> Result<DecayFit> {
    let t: Vec<f64> = series.iter().map(|r| r.t).collect();
    let e: Vec<f64> = series.iter().map(|r| r.e_mod).collect();
    let d: Vec<f64> = series.iter().map(|r| r.d).collect();
    fit_decay_samples(&t, &e, &d, p)
}

pub fn fit_decay_samples(t: &[f64], e: &[f64], d: &[f64], p: f64) -> Result<DecayFit> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(SimError::InvalidInput(format!("p must be > 1, got {p}")));
    }
    if t.len() != e.len() || t.len() != d.len() {
        return Err(SimError::MalformedInput("series columns differ in length".into()));
    }
    if t.is_empty() {
        return Err(SimError::InsufficientData("empty series".into()));
    }
    check_times(t)?;
    let e0 = e[0];
    if !(e0 > 0.0) {
        return Err(SimError::DegenerateInput("initial modulated energy must be > 0".into()));
    }
    let start = e.iter().position(|&v| v <= 0.1 * e0);
    let end = e.iter().rposition(|&v| v >= 1e-8 * e0);
    let (start, end) = match (start, end) {
        (Some(s), Some(en)) if en >= s => (s, en),
        _ => {
            return Err(SimError::InsufficientData(
                "the series never enters the window 1e-8 E(0) <= E <= 1e-1 E(0)".into(),
            ))
        }
    };
    let samples = end - start + 1;
    if samples < 10 {
        return Err(SimError::InsufficientData(format!(
            "fit window holds {samples} rows, at least 10 are needed"
        )));
    }
    let wt = &t[start..=end];
    let we = &e[start..=end];
    if let Some(i) = we.iter().position(|v| !(*v > 0.0)) {
        return Err(SimError::DegenerateInput(format!(
            "modulated energy must be positive in the fit window (row {})",
            start + i
        )));
    }
    let mode = DecayMode::for_exponent(p);
    let logs: Vec<f64> = we.iter().map(|v| v.ln()).collect();
    let (log_slope, log_icpt, log_r2) = linear_fit(wt, &logs);
    let gamma = match mode {
        DecayMode::Exponential => 1.0,
        DecayMode::Algebraic => 0.5 * p,
    };
    let envelope_constant = (start..=end)
        .map(|i| d[i] / e[i].powf(gamma))
        .fold(f64::INFINITY, f64::min);
    let t0 = t[0];
    let envelope = |tt: f64| match mode {
        DecayMode::Exponential => e0 * (-envelope_constant * (tt - t0)).exp(),
        DecayMode::Algebraic => {
            (e0.powf(1.0 - 0.5 * p) + envelope_constant * (0.5 * p - 1.0) * (tt - t0)).powf(-2.0 / (p - 2.0))
        }
    };
    let envelope_ratio = t
        .iter()
        .zip(e)
        .map(|(&tt, &ee)| ee / envelope(tt))
        .fold(0.0f64, f64::max);
    let fit = match mode {
        DecayMode::Exponential => DecayFit {
            mode,
            p,
            window: [wt[0], wt[samples - 1]],
            samples,
            slope: log_slope,
            intercept: log_icpt,
            rate: -log_slope,
            exponent: None,
            r_squared: log_r2,
            envelope_constant,
            envelope_ratio,
            r_squared_log: None,
            regime_flag: None,
        },
        DecayMode::Algebraic => {
            let tr: Vec<f64> = we.iter().map(|v| v.powf(1.0 - 0.5 * p)).collect();
            let (slope, intercept, r2) = linear_fit(wt, &tr);
            let regime_flag = (log_r2 > r2).then(|| {
                format!(
                    "decay is closer to exponential than algebraic (log-linear R^2 {log_r2:.4} > transformed R^2 {r2:.4})"
                )
            });
            DecayFit {
                mode,
                p,
                window: [wt[0], wt[samples - 1]],
                samples,
                slope,
                intercept,
                rate: slope / (0.5 * p - 1.0),
                exponent: Some(-2.0 / (p - 2.0)),
                r_squared: r2,
                envelope_constant,
                envelope_ratio,
                r_squared_log: Some(log_r2),
                regime_flag,
            }
        }
    };
    Ok(fit)
}
