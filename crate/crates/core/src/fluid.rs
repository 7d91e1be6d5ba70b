//! Power-law fluid: stress law, mollifier, convection, the ODE for the
//! spatial mean velocity and the explicit update of the mean-free part.
//!
//! The velocity is split as `u = w + u_c` where `w` is mean-free and
//! divergence-free (stored spectrally) and `u_c` is the spatial mean.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::field::{
    dealias_in_place, derivative_multiplier, leray_project_in_place, to_physical_unchecked,
    to_spectral, PhysicalField, SpectralField,
};
use crate::grid::GridSpec;

pub type Vec3 = [f64; 3];

/// Stress law `tau(D) = mu (delta^2 + |D|^2)^((p-2)/2) D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub mu: f64,
    pub p: f64,
    pub delta: f64,
}

impl PowerLaw {
    pub const DEFAULT_DELTA: f64 = 1e-8;

    pub fn new(mu: f64, p: f64, delta: f64) -> Result<Self> {
        let law = Self { mu, p, delta };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(SimError::Config(format!("law.mu must be > 0, got {}", self.mu)));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(SimError::Config(format!("law.p must be > 1, got {}", self.p)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(SimError::Config(format!(
                "law.delta must be >= 0, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Scalar factor multiplying `D` given `|D|^2`. At `D = 0` with
    /// `delta = 0` the stress is continuously extended by zero.
    pub fn stress_factor(&self, norm_sq: f64) -> f64 {
        let exponent = 0.5 * (self.p - 2.0);
        if exponent == 0.0 {
            return self.mu;
        }
        let base = self.delta * self.delta + norm_sq;
        if base == 0.0 {
            return 0.0;
        }
        self.mu * base.powf(exponent)
    }

    /// Largest linearized viscosity at strain magnitude `|D|^2`; infinite
    /// for `p < 2` at `D = 0` without regularization.
    pub fn linearized_viscosity(&self, norm_sq: f64) -> f64 {
        let exponent = 0.5 * (self.p - 2.0);
        let base = self.delta * self.delta + norm_sq;
        let factor = if exponent == 0.0 {
            1.0
        } else if base == 0.0 {
            if exponent < 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            base.powf(exponent)
        };
        self.mu * factor * (self.p - 1.0).max(1.0)
    }
}

/// Fluid velocity `u = w + u_c` with mollification width `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    w: SpectralField,
    u_c: Vec3,
    eps: f64,
}

impl FluidState {
    /// Builds a state, checking that `w` is mean-free, divergence-free and finite.
    pub fn new(w: SpectralField, u_c: Vec3, eps: f64) -> Result<Self> {
        let grid = w.grid();
        if w.components() != grid.dim() {
            return Err(SimError::InvalidState(format!(
                "w must have {} components, got {}",
                grid.dim(),
                w.components()
            )));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(SimError::InvalidState(format!("eps must be >= 0, got {eps}")));
        }
        if !w.all_finite() || u_c.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidState("non-finite fluid velocity".into()));
        }
        if u_c[grid.dim()..].iter().any(|&v| v != 0.0) {
            return Err(SimError::InvalidState("u_c has components beyond dim".into()));
        }
        let len = grid.len();
        let scale = w.max_abs().max(1e-300);
        for c in 0..grid.dim() {
            if w.component(c)[0].norm() != 0.0 {
                return Err(SimError::InvalidState("w has a nonzero mean".into()));
            }
        }
        for flat in 1..len {
            let k = grid.wavevector(flat);
            let mut dot = Complex64::new(0.0, 0.0);
            for c in 0..grid.dim() {
                dot += w.component(c)[flat] * k[c] as f64;
            }
            if dot.norm() > 1e-12 * scale * (grid.n() as f64) {
                return Err(SimError::InvalidState(format!(
                    "w is not divergence-free (k.w = {:.3e} at k = {:?})",
                    dot.norm(),
                    k
                )));
            }
        }
        if w.hermitian_defect() > 1e-10 * scale.max(1.0) {
            return Err(SimError::InvalidState("w is not a real field".into()));
        }
        Ok(Self { w, u_c, eps })
    }

    /// Zero mean-free part with the given mean.
    pub fn uniform(grid: GridSpec, u_c: Vec3, eps: f64) -> Result<Self> {
        Self::new(SpectralField::zeros(grid, grid.dim()), u_c, eps)
    }

    pub(crate) fn from_parts_unchecked(w: SpectralField, u_c: Vec3, eps: f64) -> Self {
        Self { w, u_c, eps }
    }

    pub fn grid(&self) -> GridSpec {
        self.w.grid()
    }

    pub fn w(&self) -> &SpectralField {
        &self.w
    }

    pub fn u_c(&self) -> Vec3 {
        self.u_c
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Physical samples of the full velocity `w + u_c`.
    pub fn velocity(&self) -> PhysicalField {
        let mut u = to_physical_unchecked(&self.w);
        for c in 0..self.grid().dim() {
            let uc = self.u_c[c];
            u.component_mut(c).iter_mut().for_each(|v| *v += uc);
        }
        u
    }

    /// Velocity seen by particles: `mollify(w, eps) + u_c`.
    pub fn transport_velocity(&self) -> PhysicalField {
        let mut u = to_physical_unchecked(&mollify(&self.w, self.eps));
        for c in 0..self.grid().dim() {
            let uc = self.u_c[c];
            u.component_mut(c).iter_mut().for_each(|v| *v += uc);
        }
        u
    }

    /// `int |w|^2 dx`.
    pub fn fluctuation_energy(&self) -> f64 {
        self.w.norm_sq()
    }
}

/// Full velocity gradient, component `i * dim + j` holding `d_j w_i`.
pub fn velocity_gradient(w: &SpectralField) -> PhysicalField {
    let grid = w.grid();
    let dim = grid.dim();
    let len = grid.len();
    let mut spec = SpectralField::zeros(grid, dim * dim);
    for i in 0..dim {
        let wi = w.component(i);
        for j in 0..dim {
            let out = spec.component_mut(i * dim + j);
            for flat in 0..len {
                out[flat] = wi[flat] * derivative_multiplier(grid, flat, j);
            }
        }
    }
    to_physical_unchecked(&spec)
}

fn symmetrize(grad: &PhysicalField, dim: usize) -> PhysicalField {
    let grid = grad.grid();
    let mut du = PhysicalField::zeros(grid, dim * dim);
    let len = grid.len();
    for i in 0..dim {
        for j in i..dim {
            let gij = grad.component(i * dim + j);
            let gji = grad.component(j * dim + i);
            let sym: Vec<f64> = (0..len).map(|x| 0.5 * (gij[x] + gji[x])).collect();
            du.component_mut(i * dim + j).copy_from_slice(&sym);
            if i != j {
                du.component_mut(j * dim + i).copy_from_slice(&sym);
            }
        }
    }
    du
}

/// Symmetric gradient `Du = (grad u + grad u^T)/2`; the mean `u_c` does not contribute.
pub fn sym_gradient(w: &SpectralField, _u_c: Vec3) -> PhysicalField {
    symmetrize(&velocity_gradient(w), w.grid().dim())
}

/// Frobenius norm squared of a `dim x dim` tensor field at sample `x`.
pub fn tensor_norm_sq(t: &PhysicalField, dim: usize, x: usize) -> f64 {
    let len = t.grid().len();
    let v = t.values();
    (0..dim * dim).map(|c| v[c * len + x] * v[c * len + x]).sum()
}

/// Pointwise power-law stress of a symmetric tensor field.
pub fn stress(du: &PhysicalField, law: &PowerLaw) -> PhysicalField {
    let grid = du.grid();
    let comps = du.components();
    let dim = (comps as f64).sqrt().round() as usize;
    assert_eq!(dim * dim, comps, "stress needs a dim x dim tensor field");
    let len = grid.len();
    let mut out = du.clone();
    for x in 0..len {
        let factor = law.stress_factor(tensor_norm_sq(du, dim, x));
        for c in 0..comps {
            out.component_mut(c)[x] *= factor;
        }
    }
    out
}

/// `P div tau` of a symmetric stress field, dealiased.
fn projected_divergence(tau: &PhysicalField, dim: usize) -> SpectralField {
    let grid = tau.grid();
    let len = grid.len();
    let mut out = SpectralField::zeros(grid, dim);
    for i in 0..dim {
        for j in i..dim {
            let comp = PhysicalField::from_values(grid, 1, tau.component(i * dim + j).to_vec())
                .expect("finite stress");
            let hat = to_spectral(&comp);
            let h = hat.component(0);
            {
                let oi = out.component_mut(i);
                for flat in 0..len {
                    oi[flat] += h[flat] * derivative_multiplier(grid, flat, j);
                }
            }
            if i != j {
                let oj = out.component_mut(j);
                for flat in 0..len {
                    oj[flat] += h[flat] * derivative_multiplier(grid, flat, i);
                }
            }
        }
    }
    dealias_in_place(&mut out);
    leray_project_in_place(&mut out);
    out
}

/// `P div tau(Dw)`, dealiased and projected.
pub fn stress_divergence(state: &FluidState, law: &PowerLaw) -> SpectralField {
    let dim = state.grid().dim();
    let du = sym_gradient(state.w(), state.u_c());
    projected_divergence(&stress(&du, law), dim)
}

/// Gaussian low-pass `exp(-eps^2 (2 pi |k|)^2 / 2)`; identity for `eps = 0`.
pub fn mollify(spec: &SpectralField, eps: f64) -> SpectralField {
    let mut out = spec.clone();
    mollify_in_place(&mut out, eps);
    out
}

pub fn mollify_in_place(spec: &mut SpectralField, eps: f64) {
    if eps == 0.0 {
        return;
    }
    let grid = spec.grid();
    let len = grid.len();
    let a = 0.5 * (2.0 * PI * eps).powi(2);
    let mult: Vec<f64> = (0..len)
        .map(|flat| {
            let k = grid.wavevector(flat);
            let k2: f64 = k.iter().map(|&kk| (kk * kk) as f64).sum();
            (-a * k2).exp()
        })
        .collect();
    for c in 0..spec.components() {
        for (z, m) in spec.component_mut(c).iter_mut().zip(&mult) {
            *z *= *m;
        }
    }
}

fn convective_from_gradient(state: &FluidState, grad: &PhysicalField) -> SpectralField {
    let grid = state.grid();
    let dim = grid.dim();
    let len = grid.len();
    let adv = state.transport_velocity();
    let mut prod = PhysicalField::zeros(grid, dim);
    for i in 0..dim {
        let mut acc = vec![0.0; len];
        for j in 0..dim {
            let g = grad.component(i * dim + j);
            let a = adv.component(j);
            for x in 0..len {
                acc[x] += a[x] * g[x];
            }
        }
        prod.component_mut(i).copy_from_slice(&acc);
    }
    let mut hat = to_spectral(&prod);
    dealias_in_place(&mut hat);
    leray_project_in_place(&mut hat);
    hat.scale(-1.0);
    hat
}

/// `-P[((mollify(w) + u_c).grad) w]`, the advection term moved to the right-hand side.
pub fn convective_term(state: &FluidState) -> SpectralField {
    let grad = velocity_gradient(state.w());
    convective_from_gradient(state, &grad)
}

/// Stress plus convection, sharing one gradient evaluation.
pub fn fluid_rhs(state: &FluidState, law: &PowerLaw) -> SpectralField {
    let dim = state.grid().dim();
    let grad = velocity_gradient(state.w());
    let du = symmetrize(&grad, dim);
    let mut rhs = projected_divergence(&stress(&du, law), dim);
    rhs.axpy(1.0, &convective_from_gradient(state, &grad));
    rhs
}

/// One Heun (RK2) step of `dw/dt = P div tau + convection` with `u_c` frozen.
pub fn heun_step(state: &FluidState, law: &PowerLaw, dt: f64) -> FluidState {
    let k1 = fluid_rhs(state, law);
    let mut w1 = state.w().clone();
    w1.axpy(dt, &k1);
    let mid = FluidState::from_parts_unchecked(w1, state.u_c(), state.eps());
    let k2 = fluid_rhs(&mid, law);
    let mut w = state.w().clone();
    w.axpy(0.5 * dt, &k1);
    w.axpy(0.5 * dt, &k2);
    FluidState::from_parts_unchecked(w, state.u_c(), state.eps())
}

/// Update rule for the mean-free velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidIntegrator {
    /// Explicit Heun step, limited by the viscous CFL bound.
    #[default]
    Heun,
    /// Lagged-viscosity backward Euler for the stress, explicit convection.
    SemiImplicit,
}

/// Outcome of the linear solve inside [`semi_implicit_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

const CG_TOL: f64 = 1e-12;
const CG_MAX_ITER: usize = 2000;

/// Solves `(w' - w)/dt = P div(nu(Dw) Dw') + convection(w)` by
/// preconditioned conjugate gradients, `nu = mu (delta^2 + |Dw|^2)^((p-2)/2)`.
/// The operator is symmetric positive definite on mean-free,
/// divergence-free, dealiased fields.
pub fn semi_implicit_step(state: &FluidState, law: &PowerLaw, dt: f64) -> Result<(FluidState, SolveInfo)> {
    let grid = state.grid();
    let dim = grid.dim();
    let len = grid.len();
    let grad = velocity_gradient(state.w());
    let du = symmetrize(&grad, dim);
    let nu: Vec<f64> = (0..len)
        .map(|x| law.stress_factor(tensor_norm_sq(&du, dim, x)))
        .collect();
    let nu_mean = nu.iter().sum::<f64>() / len as f64;

    let apply = |v: &SpectralField| -> SpectralField {
        let mut dv = sym_gradient(v, [0.0; 3]);
        for c in 0..dim * dim {
            for (d, n) in dv.component_mut(c).iter_mut().zip(&nu) {
                *d *= n;
            }
        }
        let mut out = v.clone();
        out.axpy(-dt, &projected_divergence(&dv, dim));
        out
    };
    let precond: Vec<f64> = (0..len)
        .map(|flat| {
            let k = grid.wavevector(flat);
            let k2: f64 = k.iter().map(|&kk| (kk * kk) as f64).sum();
            1.0 / (1.0 + dt * nu_mean * 2.0 * PI * PI * k2)
        })
        .collect();
    let precondition = |r: &SpectralField| -> SpectralField {
        let mut z = r.clone();
        for c in 0..dim {
            for (v, m) in z.component_mut(c).iter_mut().zip(&precond) {
                *v *= *m;
            }
        }
        z
    };

    let mut b = state.w().clone();
    b.axpy(dt, &convective_from_gradient(state, &grad));
    let b_norm = b.norm_sq().sqrt();
    let mut x = state.w().clone();
    let mut r = b.clone();
    r.axpy(-1.0, &apply(&x));
    let mut res = r.norm_sq().sqrt();
    let mut iterations = 0;
    if res > CG_TOL * b_norm {
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = r.inner(&z);
        while iterations < CG_MAX_ITER {
            iterations += 1;
            let ap = apply(&p);
            let alpha = rz / p.inner(&ap);
            x.axpy(alpha, &p);
            r.axpy(-alpha, &ap);
            res = r.norm_sq().sqrt();
            if res <= CG_TOL * b_norm {
                break;
            }
            z = precondition(&r);
            let rz_new = r.inner(&z);
            let beta = rz_new / rz;
            rz = rz_new;
            let mut next = z.clone();
            next.axpy(beta, &p);
            p = next;
        }
    }
    let relative_residual = if b_norm > 0.0 { res / b_norm } else { 0.0 };
    if !(relative_residual <= 1e-8) {
        return Err(SimError::InvalidState(format!(
            "implicit stress solve stalled after {iterations} iterations, residual {relative_residual:.3e}"
        )));
    }
    let info = SolveInfo {
        iterations,
        relative_residual,
    };
    Ok((FluidState::from_parts_unchecked(x, state.u_c(), state.eps()), info))
}

/// Exact update of the mean velocity over one step with the coupling
/// integrals frozen:
/// `u_c' = u_c e^{-M dt} + (1 - e^{-M dt}) (int m - int rho mollify(w)) / M`.
/// For `M = 0` the limit `M -> 0` is used.
pub fn step_mean(
    u_c: Vec3,
    rho: &PhysicalField,
    m: &PhysicalField,
    w: &SpectralField,
    eps: f64,
    dt: f64,
) -> Result<Vec3> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let grid = rho.grid();
    let dim = grid.dim();
    let mass = rho.mean(0);
    if mass < 0.0 || !mass.is_finite() {
        return Err(SimError::InvalidState(format!(
            "particle mass must be >= 0, got {mass}"
        )));
    }
    let wm = to_physical_unchecked(&mollify(w, eps));
    let rv = rho.component(0);
    let len = grid.len() as f64;
    let decay = (-mass * dt).exp();
    // (1 - e^{-M dt}) / M, with its M -> 0 limit
    let gain = if mass == 0.0 {
        dt
    } else {
        -(-mass * dt).exp_m1() / mass
    };
    let mut out = [0.0; 3];
    for c in 0..dim {
        let rho_w: f64 = rv.iter().zip(wm.component(c)).map(|(r, v)| r * v).sum::<f64>() / len;
        let forcing = m.mean(c) - rho_w;
        out[c] = u_c[c] * decay + gain * forcing;
    }
    Ok(out)
}

/// Step-size safety factors for the explicit fluid update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CflLimits {
    pub c_visc: f64,
    pub c_adv: f64,
    pub dt_max: f64,
}

impl Default for CflLimits {
    fn default() -> Self {
        Self {
            c_visc: 0.25,
            c_adv: 0.5,
            dt_max: 1e-2,
        }
    }
}

/// Largest stable step: `c_visc h^2 / nu_max`, `c_adv h / max|u|` and `dt_max`,
/// where `nu_max` is the largest linearized power-law viscosity on the grid.
pub fn admissible_dt(state: &FluidState, law: &PowerLaw, cfl: &CflLimits) -> f64 {
    admissible_dt_for(state, law, cfl, FluidIntegrator::Heun)
}

/// As [`admissible_dt`]; the semi-implicit update drops the viscous bound.
pub fn admissible_dt_for(state: &FluidState, law: &PowerLaw, cfl: &CflLimits, integrator: FluidIntegrator) -> f64 {
    let grid = state.grid();
    let dim = grid.dim();
    let len = grid.len();
    let h = grid.spacing();
    let du = sym_gradient(state.w(), state.u_c());
    let mut nu_max: f64 = 0.0;
    for x in (0..len).filter(|_| integrator == FluidIntegrator::Heun) {
        nu_max = nu_max.max(law.linearized_viscosity(tensor_norm_sq(&du, dim, x)));
    }
    let u = state.velocity();
    let mut u_max: f64 = 0.0;
    for x in 0..len {
        let s: f64 = (0..dim).map(|c| u.component(c)[x].powi(2)).sum();
        u_max = u_max.max(s.sqrt());
    }
    let dt_visc = if nu_max > 0.0 && integrator == FluidIntegrator::Heun {
        cfl.c_visc * h * h / nu_max
    } else {
        f64::INFINITY
    };
    let dt_adv = if u_max > 0.0 {
        cfl.c_adv * h / u_max
    } else {
        f64::INFINITY
    };
    dt_visc.min(dt_adv).min(cfl.dt_max)
}
