//! Particle representation of the kinetic distribution and its
//! characteristic flow `dx/dt = v`, `dv/dt = u(x) - v`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cic::{gather, scatter, stencil, wrap};
use crate::error::{Result, SimError};
use crate::field::{to_physical_unchecked, PhysicalField, SpectralField};
use crate::fluid::{mollify, FluidState, Vec3};
use crate::grid::GridSpec;
use crate::sum::CompensatedSum;

/// Particles per parallel work item; fixed so reductions do not depend on the worker count.
const CHUNK: usize = 16_384;

/// Weighted particles `(x_i, v_i, w_i)`; the measure `f dx dv` is `sum_i w_i delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    x: Vec<Vec3>,
    v: Vec<Vec3>,
    wgt: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, x: Vec<Vec3>, v: Vec<Vec3>, wgt: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(SimError::InvalidState(format!("dim must be 2 or 3, got {dim}")));
        }
        if x.len() != v.len() || x.len() != wgt.len() {
            return Err(SimError::InvalidState("particle arrays differ in length".into()));
        }
        if wgt.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(SimError::InvalidState("weights must be finite and >= 0".into()));
        }
        let mut x = x;
        for (xi, vi) in x.iter_mut().zip(&v) {
            for a in 0..3 {
                if !xi[a].is_finite() || !vi[a].is_finite() {
                    return Err(SimError::InvalidState("non-finite particle".into()));
                }
                if a >= dim && (xi[a] != 0.0 || vi[a] != 0.0) {
                    return Err(SimError::InvalidState("particle has components beyond dim".into()));
                }
            }
            for xa in xi.iter_mut().take(dim) {
                *xa = wrap(*xa);
            }
        }
        Ok(Self { dim, x, v, wgt })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            x: vec![],
            v: vec![],
            wgt: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.x
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.v
    }

    pub fn weights(&self) -> &[f64] {
        &self.wgt
    }

    /// Returns a copy with every weight multiplied by `factor`.
    pub fn scaled_weights(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.wgt.iter_mut().for_each(|w| *w *= factor);
        out
    }

    /// Returns a copy with `shift` added to every velocity.
    pub fn shifted_velocities(&self, shift: Vec3) -> Self {
        let mut out = self.clone();
        for v in &mut out.v {
            for a in 0..self.dim {
                v[a] += shift[a];
            }
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        let mut s = CompensatedSum::new();
        self.wgt.iter().for_each(|&w| s.add(w));
        s.value()
    }

    /// `sum_i w_i v_i`.
    pub fn momentum(&self) -> Vec3 {
        let mut out = [0.0; 3];
        for (a, slot) in out.iter_mut().enumerate().take(self.dim) {
            let mut s = CompensatedSum::new();
            for (w, v) in self.wgt.iter().zip(&self.v) {
                s.add(w * v[a]);
            }
            *slot = s.value();
        }
        out
    }

    /// `sum_i w_i |v_i - c|^2 / 2`.
    pub fn kinetic_energy_about(&self, c: Vec3) -> f64 {
        let mut s = CompensatedSum::new();
        for (w, v) in self.wgt.iter().zip(&self.v) {
            let d2: f64 = (0..self.dim).map(|a| (v[a] - c[a]).powi(2)).sum();
            s.add(0.5 * w * d2);
        }
        s.value()
    }
}

/// Spatial profile of the initial particle density and its velocity law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParticleProfile {
    /// `rho(x) (1 + a cos(2 pi k.x))` times a Gaussian of mean `drift`
    /// and standard deviation `sigma` per component (`sigma = 0` is monokinetic).
    Maxwellian {
        drift: Vec<f64>,
        sigma: f64,
        #[serde(default)]
        density_amplitude: f64,
        #[serde(default)]
        density_mode: Vec<i64>,
        /// Adds the initial fluid fluctuation at each particle to its velocity.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        follow_fluid: bool,
    },
}

/// One real Fourier mode `a cos(2 pi k.x) + b sin(2 pi k.x)` of the initial velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidProfile {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub modes: Vec<FourierMode>,
}

/// Initial data: particle sampler, fluid modes, velocity cutoff and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub particles: ParticleProfile,
    pub fluid: FluidProfile,
    /// Particles are kept only if `|v| <= 1 / velocity_cutoff`; `0` disables the cutoff.
    #[serde(default)]
    pub velocity_cutoff: f64,
    pub seed: u64,
}

fn vec3_from(values: &[f64], dim: usize, what: &str) -> Result<Vec3> {
    if values.len() != dim {
        return Err(SimError::Config(format!(
            "{what} must have {dim} components, got {}",
            values.len()
        )));
    }
    let mut out = [0.0; 3];
    out[..dim].copy_from_slice(values);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Config(format!("{what} must be finite")));
    }
    Ok(out)
}

impl InitialData {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.fluid_state(grid, 0.0).map(|_| ())?;
        let dim = grid.dim();
        let ParticleProfile::Maxwellian {
            drift,
            sigma,
            density_amplitude,
            density_mode,
            ..
        } = &self.particles;
        vec3_from(drift, dim, "initial.particles.drift")?;
        if !(*sigma >= 0.0 && sigma.is_finite()) {
            return Err(SimError::Config("initial.particles.sigma must be >= 0".into()));
        }
        if !(density_amplitude.abs() < 1.0) {
            return Err(SimError::Config(
                "initial.particles.density_amplitude must lie in (-1, 1)".into(),
            ));
        }
        if *density_amplitude != 0.0 && density_mode.len() != dim {
            return Err(SimError::Config(format!(
                "initial.particles.density_mode must have {dim} entries"
            )));
        }
        if !(self.velocity_cutoff >= 0.0 && self.velocity_cutoff.is_finite()) {
            return Err(SimError::Config("initial.velocity_cutoff must be >= 0".into()));
        }
        Ok(())
    }

    /// Builds the initial fluid state from the configured modes.
    pub fn fluid_state(&self, grid: &GridSpec, eps: f64) -> Result<FluidState> {
        let dim = grid.dim();
        let mean = vec3_from(&self.fluid.mean, dim, "initial.fluid.mean")?;
        let mut w = SpectralField::zeros(*grid, dim);
        let cutoff = grid.dealias_cutoff();
        for (mi, mode) in self.fluid.modes.iter().enumerate() {
            let k = vec3_from(
                &mode.k.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                dim,
                &format!("initial.fluid.modes[{mi}].k"),
            )?;
            if k.iter().all(|&v| v == 0.0) {
                return Err(SimError::Config(format!(
                    "initial.fluid.modes[{mi}].k must be nonzero (use mean instead)"
                )));
            }
            if k.iter().any(|v| v.abs() > cutoff) {
                return Err(SimError::Config(format!(
                    "initial.fluid.modes[{mi}].k exceeds the resolved band |k_j| <= {cutoff:.3}"
                )));
            }
            let zeros = vec![0.0; dim];
            let a = vec3_from(
                if mode.cos.is_empty() { &zeros } else { &mode.cos },
                dim,
                &format!("initial.fluid.modes[{mi}].cos"),
            )?;
            let b = vec3_from(
                if mode.sin.is_empty() { &zeros } else { &mode.sin },
                dim,
                &format!("initial.fluid.modes[{mi}].sin"),
            )?;
            let ka: f64 = (0..dim).map(|c| k[c] * a[c]).sum();
            let kb: f64 = (0..dim).map(|c| k[c] * b[c]).sum();
            let scale = a.iter().chain(&b).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            if ka.abs() > 1e-12 * scale || kb.abs() > 1e-12 * scale {
                return Err(SimError::Config(format!(
                    "initial.fluid.modes[{mi}] is not divergence-free (k.cos = {ka}, k.sin = {kb})"
                )));
            }
            let kk = [mode.k[0], mode.k[1], if dim == 3 { mode.k[2] } else { 0 }];
            for c in 0..dim {
                let add = Complex64::new(0.5 * a[c], -0.5 * b[c]);
                let cur = w.mode(c, kk);
                w.set_mode(c, kk, cur + add);
            }
        }
        FluidState::new(w, mean, eps)
    }
}

fn sample_one(
    rng: &mut ChaCha8Rng,
    dim: usize,
    drift: &Vec3,
    sigma: f64,
    amp: f64,
    mode: &Vec3,
    vmax: f64,
    budget: &mut u64,
) -> Option<(Vec3, Vec3)> {
    loop {
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        let mut x = [0.0; 3];
        for xa in x.iter_mut().take(dim) {
            *xa = rng.random::<f64>();
        }
        if amp != 0.0 {
            let phase: f64 = (0..dim).map(|a| mode[a] * x[a]).sum::<f64>() * 2.0 * PI;
            let accept = (1.0 + amp * phase.cos()) / (1.0 + amp.abs());
            if rng.random::<f64>() >= accept {
                continue;
            }
        }
        let mut v = [0.0; 3];
        for a in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            v[a] = drift[a] + sigma * z;
        }
        if vmax.is_finite() {
            let speed = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if speed > vmax {
                continue;
            }
        }
        return Some((x, v));
    }
}

/// Draws `n_p` i.i.d. particles from the initial profile restricted to the
/// velocity cutoff, with uniform weights `1 / n_p`. Particle `i` uses its own
/// ChaCha stream, so the ensemble depends only on the seed.
pub fn sample_initial(spec: &InitialData, dim: usize, n_p: usize) -> Result<ParticleEnsemble> {
    if n_p == 0 {
        return Err(SimError::Config("n_particles must be >= 1".into()));
    }
    let ParticleProfile::Maxwellian {
        drift,
        sigma,
        density_amplitude,
        density_mode,
        ..
    } = &spec.particles;
    let drift = vec3_from(drift, dim, "initial.particles.drift")?;
    let mut mode = [0.0; 3];
    for (a, k) in density_mode.iter().enumerate().take(dim) {
        mode[a] = *k as f64;
    }
    let vmax = if spec.velocity_cutoff > 0.0 {
        1.0 / spec.velocity_cutoff
    } else {
        f64::INFINITY
    };
    let mut budget: u64 = 1_000_000u64 * n_p as u64;
    let mut x = Vec::with_capacity(n_p);
    let mut v = Vec::with_capacity(n_p);
    for i in 0..n_p {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let (xi, vi) = sample_one(
            &mut rng,
            dim,
            &drift,
            *sigma,
            *density_amplitude,
            &mode,
            vmax,
            &mut budget,
        )
        .ok_or_else(|| {
            SimError::Config(format!(
                "rejection sampler exhausted its budget of {} draws",
                1_000_000u64 * n_p as u64
            ))
        })?;
        x.push(xi);
        v.push(vi);
    }
    let w = 1.0 / n_p as f64;
    ParticleEnsemble::new(dim, x, v, vec![w; n_p])
}

/// Samples the initial ensemble; with `follow_fluid` each particle also
/// receives the fluid fluctuation `mollify(w)` at its position.
pub fn sample_initial_for(spec: &InitialData, fluid: &FluidState, n_p: usize) -> Result<ParticleEnsemble> {
    let dim = fluid.grid().dim();
    let ens = sample_initial(spec, dim, n_p)?;
    let ParticleProfile::Maxwellian { follow_fluid, .. } = &spec.particles;
    if !follow_fluid {
        return Ok(ens);
    }
    let field = transport_fluctuation(fluid);
    let grid = fluid.grid();
    let v: Vec<Vec3> = ens
        .positions()
        .iter()
        .zip(ens.velocities())
        .map(|(x, v)| {
            let u = interp_at(&field, &grid, &[0.0; 3], x);
            let mut out = *v;
            for a in 0..dim {
                out[a] += u[a];
            }
            out
        })
        .collect();
    ParticleEnsemble::new(dim, ens.positions().to_vec(), v, ens.weights().to_vec())
}

/// Physical samples of the mollified mean-free velocity seen by particles.
pub(crate) fn transport_fluctuation(state: &FluidState) -> PhysicalField {
    to_physical_unchecked(&mollify(state.w(), state.eps()))
}

fn interp_at(field: &PhysicalField, grid: &GridSpec, uc: &Vec3, x: &Vec3) -> Vec3 {
    let st = stencil(grid, x);
    let mut u = [0.0; 3];
    for a in 0..grid.dim() {
        u[a] = gather(field.component(a), &st) + uc[a];
    }
    u
}

/// Fluid velocity at particle positions: CIC interpolation of
/// `mollify(w, eps)` plus the mean `u_c`.
pub fn interp_velocity(state: &FluidState, x: &[Vec3]) -> Vec<Vec3> {
    let grid = state.grid();
    let field = transport_fluctuation(state);
    let uc = state.u_c();
    x.par_iter()
        .map(|xi| interp_at(&field, &grid, &uc, xi))
        .collect()
}

/// Result of one kinetic push.
#[derive(Debug, Clone)]
pub struct PushResult {
    pub ensemble: ParticleEnsemble,
    /// Momentum density handed to the fluid, `-sum_i w_i (v'_i - v_i) K(x - x_i)`.
    pub impulse: PhysicalField,
    /// `sum_i -w_i (v'_i - v_i)` accumulated per particle with compensation.
    pub total_impulse: Vec3,
}

/// Strang-split characteristic step: half drift, exact exponential drag
/// toward the frozen fluid velocity, half drift. The impulse is deposited
/// at the midpoint positions, where the fluid velocity was sampled.
pub fn push(ens: &ParticleEnsemble, state: &FluidState, dt: f64) -> PushResult {
    let grid = state.grid();
    let dim = grid.dim();
    let len = grid.len();
    let field = transport_fluctuation(state);
    let uc = state.u_c();
    let decay = (-dt).exp();
    let density = len as f64;

    let mut x = ens.x.clone();
    let mut v = ens.v.clone();
    let partials: Vec<(Vec<f64>, [CompensatedSum; 3])> = x
        .par_chunks_mut(CHUNK)
        .zip(v.par_chunks_mut(CHUNK))
        .zip(ens.wgt.par_chunks(CHUNK))
        .map(|((xs, vs), ws)| {
            let mut buf = vec![0.0; dim * len];
            let mut total = [CompensatedSum::new(); 3];
            for ((xi, vi), &wi) in xs.iter_mut().zip(vs.iter_mut()).zip(ws) {
                for a in 0..dim {
                    xi[a] = wrap(xi[a] + 0.5 * dt * vi[a]);
                }
                let st = stencil(&grid, xi);
                for a in 0..dim {
                    let u = gather(field.component(a), &st) + uc[a];
                    let vn = u + (vi[a] - u) * decay;
                    let j = -wi * (vn - vi[a]);
                    scatter(&mut buf[a * len..(a + 1) * len], &st, j * density);
                    total[a].add(j);
                    vi[a] = vn;
                }
                for a in 0..dim {
                    xi[a] = wrap(xi[a] + 0.5 * dt * vi[a]);
                }
            }
            (buf, total)
        })
        .collect();

    let mut impulse = vec![0.0; dim * len];
    let mut total = [CompensatedSum::new(); 3];
    for (buf, t) in &partials {
        for (acc, b) in impulse.iter_mut().zip(buf) {
            *acc += b;
        }
        for a in 0..dim {
            total[a].add(t[a].value());
        }
    }
    let mut total_impulse = [0.0; 3];
    for a in 0..dim {
        total_impulse[a] = total[a].value();
    }
    PushResult {
        ensemble: ParticleEnsemble {
            dim,
            x,
            v,
            wgt: ens.wgt.clone(),
        },
        impulse: PhysicalField::from_values(grid, dim, impulse).expect("finite impulse"),
        total_impulse,
    }
}

/// CIC deposition of per-particle quantities as densities on the grid.
/// `amounts(i, out)` fills the `comps` values carried by particle `i`.
pub(crate) fn deposit<F>(grid: &GridSpec, ens: &ParticleEnsemble, comps: usize, amounts: F) -> PhysicalField
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let len = grid.len();
    let density = len as f64;
    let n = ens.len();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(n);
            let mut buf = vec![0.0; comps * len];
            let mut vals = vec![0.0; comps];
            for i in start..end {
                let st = stencil(grid, &ens.x[i]);
                amounts(i, &mut vals);
                for c in 0..comps {
                    scatter(&mut buf[c * len..(c + 1) * len], &st, vals[c] * density);
                }
            }
            buf
        })
        .collect();
    let mut out = vec![0.0; comps * len];
    for buf in &partials {
        for (acc, b) in out.iter_mut().zip(buf) {
            *acc += b;
        }
    }
    PhysicalField::from_values(*grid, comps, out).expect("finite deposit")
}

/// `sum_i w_i (1 + |v_i|)^ell`.
pub fn moment(ens: &ParticleEnsemble, ell: f64) -> f64 {
    let mut s = CompensatedSum::new();
    for (w, v) in ens.wgt.iter().zip(&ens.v) {
        let speed = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        s.add(w * (1.0 + speed).powf(ell));
    }
    s.value()
}
