//! Weak-form residuals of the kinetic and fluid equations along a stored
//! trajectory, for test functions with a polynomial time cutoff
//! `chi(t) = (1 - (t - t0)/(T - t0))^q` vanishing at the final time `T`.
//!
//! Kinetic: `int sum w [phi_t + v.grad_x phi + (u - v).grad_v phi] dt + sum w phi(t0)`.
//! Fluid: `int [-<u, psi_t> + <(u.grad)u, psi> + <tau, D psi> + sum w (u_i - v_i).psi(x_i)] dt - <u(t0), psi(t0)>`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cic::{gather, stencil};
use crate::coupling::SystemState;
use crate::error::{Result, SimError};
use crate::field::{to_spectral, PhysicalField};
use crate::fluid::{convective_term, stress_divergence, PowerLaw, Vec3};
use crate::kinetic::interp_velocity;
use crate::sum::CompensatedSum;

/// `phi = chi(t) cos(2 pi k.x + phase) (c0 + b.v + c2 |v|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticTest {
    pub k: [i64; 3],
    pub phase: f64,
    pub c0: f64,
    pub b: Vec3,
    pub c2: f64,
}

/// `psi = chi(t) a cos(2 pi k.x + phase)` with `k.a = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidTest {
    pub k: [i64; 3],
    pub phase: f64,
    pub a: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Kinetic(KineticTest),
    Fluid(FluidTest),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn kf(k: &[i64; 3]) -> Vec3 {
    [k[0] as f64, k[1] as f64, k[2] as f64]
}

fn check_test(test: &TestFunction, dim: usize, cutoff: f64) -> Result<()> {
    let k = match test {
        TestFunction::Kinetic(t) => &t.k,
        TestFunction::Fluid(t) => &t.k,
    };
    if k[dim..].iter().any(|&c| c != 0) {
        return Err(SimError::InvalidInput(format!("wavevector {k:?} has components beyond dim {dim}")));
    }
    if let TestFunction::Fluid(t) = test {
        let kd = dot(&kf(&t.k), &t.a);
        let scale = t.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if kd.abs() > 1e-12 * scale {
            return Err(SimError::InvalidInput(format!(
                "fluid test function with k = {:?}, a = {:?} is not divergence-free",
                t.k, t.a
            )));
        }
        if t.k.iter().any(|c| c.abs() as f64 > cutoff) {
            return Err(SimError::InvalidInput(format!(
                "fluid test wavevector {:?} is outside the resolved band",
                t.k
            )));
        }
        if t.a[dim..].iter().any(|&c| c != 0.0) {
            return Err(SimError::InvalidInput("fluid test amplitude has components beyond dim".into()));
        }
    }
    Ok(())
}

/// Streaming evaluation: feed snapshots in time order, then `finish`.
#[derive(Debug, Clone)]
pub struct WeakResidual {
    tests: Vec<TestFunction>,
    law: PowerLaw,
    power: i32,
    t0: f64,
    t_end: f64,
    initial: Vec<f64>,
    integral: Vec<CompensatedSum>,
    prev: Option<(f64, Vec<f64>)>,
}

impl WeakResidual {
    pub fn new(tests: Vec<TestFunction>, law: PowerLaw, t0: f64, t_end: f64, power: i32) -> Result<Self> {
        if !(t_end > t0) {
            return Err(SimError::InvalidInput(format!("need t_end > t0, got {t0} and {t_end}")));
        }
        if power < 1 {
            return Err(SimError::InvalidInput(format!("cutoff power must be >= 1, got {power}")));
        }
        let n = tests.len();
        Ok(Self {
            tests,
            law,
            power,
            t0,
            t_end,
            initial: vec![0.0; n],
            integral: vec![CompensatedSum::new(); n],
            prev: None,
        })
    }

    fn chi(&self, t: f64) -> (f64, f64) {
        let len = self.t_end - self.t0;
        let s = ((t - self.t0) / len).clamp(0.0, 1.0);
        let q = self.power;
        ((1.0 - s).powi(q), -(q as f64) * (1.0 - s).powi(q - 1) / len)
    }

    pub fn add(&mut self, s: &SystemState) -> Result<()> {
        let grid = s.grid();
        let dim = grid.dim();
        for test in &self.tests {
            check_test(test, dim, grid.dealias_cutoff())?;
        }
        if let Some((tp, _)) = &self.prev {
            if s.t <= *tp {
                return Err(SimError::MalformedInput(format!("snapshot times must increase ({} after {tp})", s.t)));
            }
        } else if (s.t - self.t0).abs() > 1e-12 * self.t_end.abs().max(1.0) {
            return Err(SimError::MalformedInput(format!("first snapshot is at t = {}, expected {}", s.t, self.t0)));
        }
        if s.t > self.t_end * (1.0 + 1e-12) + 1e-12 {
            return Err(SimError::MalformedInput(format!("snapshot at t = {} is past t_end = {}", s.t, self.t_end)));
        }
        let (chi, dchi) = self.chi(s.t);
        let x = s.particles.positions();
        let v = s.particles.velocities();
        let wgt = s.particles.weights();
        let u_p = interp_velocity(&s.fluid, x);
        let u = s.fluid.velocity();
        let mut conv = None;
        let mut visc = None;
        let mut values = Vec::with_capacity(self.tests.len());
        for (ti, test) in self.tests.iter().enumerate() {
            match test {
                TestFunction::Kinetic(kt) => {
                    let k = kf(&kt.k);
                    let mut acc = CompensatedSum::new();
                    let mut init = CompensatedSum::new();
                    for i in 0..x.len() {
                        let arg = 2.0 * PI * dot(&k[..dim], &x[i][..dim]) + kt.phase;
                        let (sa, ca) = arg.sin_cos();
                        let vi = &v[i][..dim];
                        let g = kt.c0 + dot(&kt.b[..dim], vi) + kt.c2 * dot(vi, vi);
                        // grad_x a = -2 pi k sin, grad_v g = b + 2 c2 v
                        let v_grad_a = -2.0 * PI * sa * dot(vi, &k[..dim]);
                        let mut drag = 0.0;
                        for c in 0..dim {
                            drag += (u_p[i][c] - v[i][c]) * (kt.b[c] + 2.0 * kt.c2 * v[i][c]);
                        }
                        acc.add(wgt[i] * (dchi * ca * g + chi * v_grad_a * g + chi * ca * drag));
                        if self.prev.is_none() {
                            init.add(wgt[i] * chi * ca * g);
                        }
                    }
                    if self.prev.is_none() {
                        self.initial[ti] = init.value();
                    }
                    values.push(acc.value());
                }
                TestFunction::Fluid(ft) => {
                    let k = kf(&ft.k);
                    let psi = PhysicalField::from_fn(grid, dim, |p, c| {
                        ft.a[c] * (2.0 * PI * dot(&k[..dim], &p[..dim]) + ft.phase).cos()
                    });
                    let psi_hat = to_spectral(&psi);
                    let u_psi = u.inner(&psi);
                    let conv = conv.get_or_insert_with(|| convective_term(&s.fluid));
                    let visc = visc.get_or_insert_with(|| stress_divergence(&s.fluid, &self.law));
                    let mut drag = CompensatedSum::new();
                    for i in 0..x.len() {
                        let st = stencil(&grid, &x[i]);
                        let mut d = 0.0;
                        for c in 0..dim {
                            d += (u_p[i][c] - v[i][c]) * gather(psi.component(c), &st);
                        }
                        drag.add(wgt[i] * d);
                    }
                    // convective_term and stress_divergence carry right-hand-side signs
                    let val = -dchi * u_psi - chi * conv.inner(&psi_hat) - chi * visc.inner(&psi_hat) + chi * drag.value();
                    if self.prev.is_none() {
                        self.initial[ti] = -chi * u_psi;
                    }
                    values.push(val);
                }
            }
        }
        if let Some((tp, prev)) = &self.prev {
            let h = s.t - tp;
            for (ti, acc) in self.integral.iter_mut().enumerate() {
                acc.add(0.5 * h * (prev[ti] + values[ti]));
            }
        }
        self.prev = Some((s.t, values));
        Ok(())
    }

    /// One residual per test function.
    pub fn finish(self) -> Result<Vec<f64>> {
        match &self.prev {
            Some((t, _)) if (t - self.t_end).abs() <= 1e-9 * self.t_end.abs().max(1.0) => {}
            _ => {
                return Err(SimError::InsufficientData(
                    "trajectory must run from t0 to t_end with at least two snapshots".into(),
                ))
            }
        }
        Ok(self
            .integral
            .iter()
            .zip(&self.initial)
            .map(|(i, init)| i.value() + init)
            .collect())
    }
}

/// Residuals of every test function over a stored trajectory, with the
/// cutoff vanishing at the last snapshot.
pub fn weak_residual(traj: &[SystemState], law: &PowerLaw, tests: &[TestFunction], power: i32) -> Result<Vec<f64>> {
    if traj.len() < 2 {
        return Err(SimError::InsufficientData("need at least two snapshots".into()));
    }
    let mut acc = WeakResidual::new(tests.to_vec(), *law, traj[0].t, traj[traj.len() - 1].t, power)?;
    for s in traj {
        acc.add(s)?;
    }
    acc.finish()
}
