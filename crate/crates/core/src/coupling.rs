//! Drag exchange between particles and fluid and the full time step.
//!
//! The fluid receives exactly the momentum the particles lose: the impulse
//! of the exponential velocity update is deposited with the interpolation
//! kernel, its projected fluctuation goes to `w` and its mean to `u_c`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::field::{dealias_in_place, leray_project_in_place, to_spectral, PhysicalField, SpectralField};
use crate::fluid::{self, mollify_in_place, CflLimits, FluidIntegrator, FluidState, PowerLaw, Vec3};
use crate::grid::GridSpec;
use crate::kinetic::{deposit, push, ParticleEnsemble};

/// Outcome of the coupling iteration attached to a state.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum StepStatus {
    #[default]
    Ok,
    /// The fixed-point iteration hit its limit; the last iterate was kept.
    NotConverged { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub fluid: FluidState,
    pub particles: ParticleEnsemble,
    pub t: f64,
    pub status: StepStatus,
}

impl SystemState {
    pub fn new(fluid: FluidState, particles: ParticleEnsemble, t: f64) -> Result<Self> {
        if fluid.grid().dim() != particles.dim() {
            return Err(SimError::InvalidState(format!(
                "fluid is {}-dimensional but particles are {}-dimensional",
                fluid.grid().dim(),
                particles.dim()
            )));
        }
        if !t.is_finite() {
            return Err(SimError::InvalidState("non-finite time".into()));
        }
        Ok(Self {
            fluid,
            particles,
            t,
            status: StepStatus::Ok,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.fluid.grid()
    }

    /// Total momentum `sum_i w_i v_i + int u dx`.
    pub fn total_momentum(&self) -> Vec3 {
        let p = self.particles.momentum();
        let uc = self.fluid.u_c();
        let mut out = [0.0; 3];
        for a in 0..self.particles.dim() {
            out[a] = p[a] + uc[a];
        }
        out
    }
}

/// Particle density and momentum density on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentFields {
    pub rho: PhysicalField,
    pub m: PhysicalField,
}

/// CIC deposition of `rho = sum w_i K(x - x_i)` and `m = sum w_i v_i K(x - x_i)`.
pub fn deposit_moments(ens: &ParticleEnsemble, grid: &GridSpec) -> MomentFields {
    let dim = grid.dim();
    let wgt = ens.weights();
    let v = ens.velocities();
    let all = deposit(grid, ens, 1 + dim, |i, out| {
        out[0] = wgt[i];
        for a in 0..dim {
            out[1 + a] = wgt[i] * v[i][a];
        }
    });
    let len = grid.len();
    let vals = all.values();
    MomentFields {
        rho: PhysicalField::from_values(*grid, 1, vals[..len].to_vec()).expect("finite density"),
        m: PhysicalField::from_values(*grid, dim, vals[len..].to_vec()).expect("finite momentum"),
    }
}

/// `-P mollify(rho (mollify(w) + u_c) - m)`; the projection also removes the mean.
pub fn drag_force(mom: &MomentFields, state: &FluidState) -> SpectralField {
    let grid = state.grid();
    let dim = grid.dim();
    let u = state.transport_velocity();
    let rho = mom.rho.component(0);
    let mut f = PhysicalField::zeros(grid, dim);
    for c in 0..dim {
        let uc = u.component(c);
        let mc = mom.m.component(c);
        for (x, out) in f.component_mut(c).iter_mut().enumerate() {
            *out = -(rho[x] * uc[x] - mc[x]);
        }
    }
    let mut hat = to_spectral(&f);
    mollify_in_place(&mut hat, state.eps());
    leray_project_in_place(&mut hat);
    hat
}

/// Whether the deposited impulse is mollified again before it reaches the fluid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DragMollification {
    Single,
    #[default]
    Double,
}

/// Per-step iteration record of the fixed-point coupling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PicardReport {
    /// Number of coupled passes performed.
    pub iterations: usize,
    /// `||w_out - w_in||_2 + |u_c,out - u_c,in|` for each pass.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl PicardReport {
    /// Ratios of successive residuals.
    pub fn contraction_factors(&self) -> Vec<f64> {
        self.residuals
            .windows(2)
            .map(|r| if r[0] > 0.0 { r[1] / r[0] } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepper {
    pub law: PowerLaw,
    pub cfl: CflLimits,
    pub drag: DragMollification,
    pub integrator: FluidIntegrator,
}

impl Stepper {
    pub fn new(law: PowerLaw, cfl: CflLimits) -> Self {
        Self {
            law,
            cfl,
            drag: DragMollification::default(),
            integrator: FluidIntegrator::default(),
        }
    }

    pub fn admissible_dt(&self, s: &SystemState) -> f64 {
        fluid::admissible_dt_for(&s.fluid, &self.law, &self.cfl, self.integrator)
    }

    fn check_dt(&self, s: &SystemState, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidInput(format!("dt must be > 0, got {dt}")));
        }
        let admissible = self.admissible_dt(s);
        if dt > admissible * (1.0 + 1e-12) {
            return Err(SimError::StepRejected {
                requested: dt,
                admissible,
            });
        }
        Ok(())
    }

    /// Uncoupled fluid update with `u_c` frozen.
    fn fluid_update(&self, f: &FluidState, dt: f64) -> Result<FluidState> {
        match self.integrator {
            FluidIntegrator::Heun => Ok(fluid::heun_step(f, &self.law, dt)),
            FluidIntegrator::SemiImplicit => Ok(fluid::semi_implicit_step(f, &self.law, dt)?.0),
        }
    }

    /// Pushes particles against `frozen` and hands the impulse to `base`.
    fn exchange(&self, base: &FluidState, frozen: &FluidState, ens: &ParticleEnsemble, dt: f64) -> (FluidState, ParticleEnsemble) {
        let out = push(ens, frozen, dt);
        let mut hat = to_spectral(&out.impulse);
        if self.drag == DragMollification::Double {
            mollify_in_place(&mut hat, base.eps());
        }
        dealias_in_place(&mut hat);
        leray_project_in_place(&mut hat);
        let mut w = base.w().clone();
        w.axpy(1.0, &hat);
        let mut uc = base.u_c();
        for a in 0..base.grid().dim() {
            uc[a] += out.total_impulse[a];
        }
        (FluidState::from_parts_unchecked(w, uc, base.eps()), out.ensemble)
    }

    /// Lie splitting: explicit fluid update with `u_c` frozen, then the
    /// particle push against the updated fluid, whose impulse is handed back
    /// to `w` (projected) and `u_c` (mean).
    pub fn step_splitting(&self, s: &SystemState, dt: f64) -> Result<SystemState> {
        self.check_dt(s, dt)?;
        let star = self.fluid_update(&s.fluid, dt)?;
        let (fluid, particles) = self.exchange(&star, &star, &s.particles, dt);
        finish(fluid, particles, s.t + dt, StepStatus::Ok)
    }

    /// Fixed-point coupling: each pass pushes the particles against the
    /// fluid velocity produced by the previous pass (the first pass uses the
    /// uncoupled fluid update, so it coincides with one splitting step).
    pub fn step_picard(&self, s: &SystemState, dt: f64, tol: f64, max_iter: usize) -> Result<(SystemState, PicardReport)> {
        self.check_dt(s, dt)?;
        if max_iter == 0 {
            return Err(SimError::InvalidInput("max_iter must be >= 1".into()));
        }
        if !(tol >= 0.0) {
            return Err(SimError::InvalidInput(format!("tol must be >= 0, got {tol}")));
        }
        let star = self.fluid_update(&s.fluid, dt)?;
        let mut frozen = star.clone();
        let mut report = PicardReport::default();
        loop {
            let (fluid, particles) = self.exchange(&star, &frozen, &s.particles, dt);
            let r = fluid_distance(&fluid, &frozen);
            report.iterations += 1;
            report.residuals.push(r);
            let done = r < tol;
            if done || report.iterations >= max_iter {
                report.converged = done;
                let status = if done {
                    StepStatus::Ok
                } else {
                    log::warn!("coupling iteration did not converge: {} passes, residual {r:.3e}", report.iterations);
                    StepStatus::NotConverged {
                        iterations: report.iterations,
                        residual: r,
                    }
                };
                return Ok((finish(fluid, particles, s.t + dt, status)?, report));
            }
            frozen = fluid;
        }
    }
}

/// `||w_a - w_b||_2 + |u_c,a - u_c,b|`.
pub fn fluid_distance(a: &FluidState, b: &FluidState) -> f64 {
    let mut d = a.w().clone();
    d.axpy(-1.0, b.w());
    let du: f64 = (0..3).map(|c| (a.u_c()[c] - b.u_c()[c]).powi(2)).sum();
    d.norm_sq().sqrt() + du.sqrt()
}

fn finish(fluid: FluidState, particles: ParticleEnsemble, t: f64, status: StepStatus) -> Result<SystemState> {
    if !fluid.w().all_finite() || fluid.u_c().iter().any(|v| !v.is_finite()) {
        return Err(SimError::InvalidState(format!("fluid became non-finite at t = {t}")));
    }
    if particles.velocities().iter().any(|v| v.iter().any(|c| !c.is_finite())) {
        return Err(SimError::InvalidState(format!("particles became non-finite at t = {t}")));
    }
    Ok(SystemState {
        fluid,
        particles,
        t,
        status,
    })
}
