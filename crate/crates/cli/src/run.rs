//! Run orchestration: stepping to `t_end`, collecting diagnostics and the
//! run summary, parameter sweeps, and atomic output files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use kinfluid::coupling::{PicardReport, StepStatus, Stepper};
use kinfluid::diagnostics::{balance_residual, density_exponent_threshold, diagnostics_row, fit_decay, v_infinity};
use kinfluid::kinetic::sample_initial_for;
use kinfluid::{DecayFit, DecayMode, DiagnosticsRow, SimError, SystemState, Vec3};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, CouplingConfig, DtPolicy, RunConfig};
use crate::series::to_csv;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure at t = {t}: {source}")]
    Numerical { t: f64, source: SimError },
    #[error("output error: {0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical { .. } => 3,
            Self::Output(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Balance {
    pub r_mod: f64,
    pub r_tot: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PicardSummary {
    pub steps: usize,
    pub max_iterations: usize,
    pub mean_iterations: f64,
    /// Largest ratio of successive iterate differences over all steps.
    pub max_contraction: Option<f64>,
    pub not_converged_steps: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DensityReport {
    /// Smallest `r` of the uniform density bound assumed by the decay theorem.
    pub r_threshold: Option<f64>,
    pub r_threshold_inclusive: Option<bool>,
    /// `(q, max_t ||rho||_q / ||rho(0)||_q)`.
    pub growth: Vec<(String, f64)>,
    /// Set when some norm grew more than tenfold.
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub p: f64,
    pub mode: DecayMode,
    pub steps: usize,
    pub rows: usize,
    pub t_final: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub e_mod_initial: f64,
    pub e_mod_final: f64,
    /// Largest increase of the modulated energy between consecutive rows.
    pub e_mod_max_increase: f64,
    pub balance: Option<Balance>,
    pub balance_error: Option<String>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    pub v_infinity: Vec<f64>,
    /// `|u_c(t_end) - v_inf|` and `|v_c(t_end) - v_inf|`.
    pub u_c_error: f64,
    pub v_c_error: f64,
    pub max_mass_error: f64,
    pub max_momentum_error: f64,
    pub max_moment_initial: f64,
    pub max_moment_final: f64,
    pub density: DensityReport,
    pub picard: Option<PicardSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<DiagnosticsRow>,
    pub summary: Summary,
    pub initial: SystemState,
    pub last: SystemState,
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt()
}

/// Builds the initial state of a configuration.
pub fn initial_state(cfg: &RunConfig) -> Result<SystemState, RunError> {
    let grid = cfg.grid_spec()?;
    let fluid = cfg.initial.fluid_state(&grid, cfg.eps).map_err(ConfigError::from)?;
    let particles = sample_initial_for(&cfg.initial, &fluid, cfg.n_particles).map_err(ConfigError::from)?;
    Ok(SystemState::new(fluid, particles, 0.0).map_err(ConfigError::from)?)
}

pub fn stepper(cfg: &RunConfig) -> Result<Stepper, RunError> {
    let mut st = Stepper::new(cfg.power_law()?, cfg.dt.limits());
    st.drag = cfg.drag_mollification;
    st.integrator = cfg.fluid_integrator;
    Ok(st)
}

/// Runs a validated configuration to `t_end`.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let initial = initial_state(cfg)?;
    let st = stepper(cfg)?;
    let law = st.law;
    let qs = &cfg.rho_norms;
    let started = Instant::now();

    let mut rows = vec![diagnostics_row(&initial, &law, qs)];
    let mut s = initial.clone();
    let mut steps = 0usize;
    let (mut dt_min, mut dt_max) = (f64::INFINITY, 0.0f64);
    let mut reports: Vec<PicardReport> = vec![];
    // the last step is shortened to land on t_end; tiny remainders are merged
    let t_tol = 1e-9 * cfg.t_end;
    while s.t < cfg.t_end - t_tol {
        let remaining = cfg.t_end - s.t;
        let mut dt = match cfg.dt {
            DtPolicy::Fixed { dt } => dt,
            DtPolicy::Cfl { .. } => st.admissible_dt(&s),
        };
        if dt >= remaining - t_tol {
            dt = dt.min(remaining);
        }
        let next = match cfg.coupling {
            CouplingConfig::Splitting => st.step_splitting(&s, dt),
            CouplingConfig::Picard { tol, max_iter } => st.step_picard(&s, dt, tol, max_iter).map(|(n, rep)| {
                reports.push(rep);
                n
            }),
        }
        .map_err(|source| RunError::Numerical { t: s.t, source })?;
        if let StepStatus::NotConverged { iterations, residual } = next.status {
            log::warn!("t = {}: coupling iteration stopped after {iterations} passes (residual {residual:.3e})", next.t);
        }
        s = next;
        if s.t >= cfg.t_end - t_tol {
            s.t = cfg.t_end;
        }
        steps += 1;
        dt_min = dt_min.min(dt);
        dt_max = dt_max.max(dt);
        if steps % cfg.diagnostics_every == 0 || s.t >= cfg.t_end {
            let row = diagnostics_row(&s, &law, qs);
            if !row.e_mod.is_finite() || !row.e_tot.is_finite() {
                return Err(RunError::Numerical {
                    t: s.t,
                    source: SimError::InvalidState("energy became non-finite".into()),
                });
            }
            rows.push(row);
        }
        if steps % 1000 == 0 {
            log::info!(
                "step {steps}: t = {:.4}, dt = {dt:.3e}, E_mod = {:.4e}, {:.1}s",
                s.t,
                rows.last().map_or(f64::NAN, |r| r.e_mod),
                started.elapsed().as_secs_f64()
            );
        }
    }
    log::info!("{steps} steps in {:.1}s", started.elapsed().as_secs_f64());
    let summary = summarize(cfg, &initial, &s, &rows, steps, dt_min, dt_max, &reports);
    Ok(RunOutcome {
        rows,
        summary,
        initial,
        last: s,
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    cfg: &RunConfig,
    initial: &SystemState,
    last: &SystemState,
    rows: &[DiagnosticsRow],
    steps: usize,
    dt_min: f64,
    dt_max: f64,
    reports: &[PicardReport],
) -> Summary {
    let dim = cfg.grid.dim;
    let p = cfg.law.p;
    let (balance, balance_error) = match balance_residual(rows) {
        Ok((r_mod, r_tot)) => (Some(Balance { r_mod, r_tot }), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (fit, fit_error) = match fit_decay(rows, p) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let v_inf = v_infinity(initial);
    let final_row = rows.last().expect("at least one row");
    let mass0 = rows[0].mass;
    let p0 = rows[0].momentum;
    let max_mass_error = rows.iter().map(|r| (r.mass - 1.0).abs().max((r.mass - mass0).abs())).fold(0.0, f64::max);
    let max_momentum_error = rows.iter().map(|r| dist(&r.momentum, &p0)).fold(0.0, f64::max);
    let e_mod_max_increase = rows.windows(2).map(|w| w[1].e_mod - w[0].e_mod).fold(0.0, f64::max);

    let mut growth = vec![];
    let mut flagged = false;
    for (k, &(q, v0)) in rows[0].rho_norms.iter().enumerate() {
        let max = rows.iter().map(|r| r.rho_norms[k].1).fold(0.0, f64::max);
        let ratio = if v0 > 0.0 { max / v0 } else { f64::NAN };
        if ratio > 10.0 {
            flagged = true;
            log::warn!("density norm L{q} grew by a factor {ratio:.2}");
        }
        let label = if q.is_infinite() { "inf".to_string() } else { format!("{q}") };
        growth.push((label, ratio));
    }
    let threshold = density_exponent_threshold(p);

    let picard = (!reports.is_empty()).then(|| {
        let its: Vec<usize> = reports.iter().map(|r| r.iterations).collect();
        let max_contraction = reports
            .iter()
            .flat_map(|r| r.contraction_factors())
            .fold(None, |m: Option<f64>, f| Some(m.map_or(f, |m| m.max(f))));
        PicardSummary {
            steps: reports.len(),
            max_iterations: its.iter().copied().max().unwrap_or(0),
            mean_iterations: its.iter().sum::<usize>() as f64 / its.len() as f64,
            max_contraction,
            not_converged_steps: reports.iter().filter(|r| !r.converged).count(),
        }
    });
    if let Some(f) = &fit {
        if let Some(flag) = &f.regime_flag {
            log::warn!("p = {p}: {flag}");
        }
    }

    Summary {
        p,
        mode: DecayMode::for_exponent(p),
        steps,
        rows: rows.len(),
        t_final: last.t,
        dt_min,
        dt_max,
        e_mod_initial: rows[0].e_mod,
        e_mod_final: final_row.e_mod,
        e_mod_max_increase,
        balance,
        balance_error,
        fit,
        fit_error,
        v_infinity: v_inf[..dim].to_vec(),
        u_c_error: dist(&final_row.u_c, &v_inf),
        v_c_error: dist(&final_row.v_c, &v_inf),
        max_mass_error,
        max_momentum_error,
        max_moment_initial: rows[0].max_moment,
        max_moment_final: final_row.max_moment,
        density: DensityReport {
            r_threshold: threshold.map(|t| t.0),
            r_threshold_inclusive: threshold.map(|t| t.1),
            growth,
            flagged,
        },
        picard,
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(|e| RunError::Output(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| RunError::Output(format!("{}: {e}", path.display())))
}

/// Writes `series.csv`, `config.echo.json` and `summary.json` into `dir`.
pub fn write_outputs(cfg: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Output(format!("{}: {e}", dir.display())))?;
    write_atomic(&dir.join("series.csv"), &to_csv(&outcome.rows, cfg.grid.dim, &cfg.rho_norms))?;
    let mut echo = cfg.clone();
    echo.output_dir = Some(dir.to_path_buf());
    write_atomic(&dir.join("config.echo.json"), &(echo.to_json() + "\n"))?;
    let summary = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    write_atomic(&dir.join("summary.json"), &(summary + "\n"))
}

pub fn simulate_to(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome, RunError> {
    let outcome = simulate(cfg)?;
    write_outputs(cfg, &outcome, dir)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepRow {
    pub p: f64,
    pub mode: DecayMode,
    pub rate: Option<f64>,
    pub exponent: Option<f64>,
    pub r_squared: Option<f64>,
    pub r_mod: Option<f64>,
    pub r_tot: Option<f64>,
    pub status: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.16e}"))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("p,mode,rate,exponent,r_squared,r_mod,r_tot,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.p,
            r.mode.short_name(),
            opt(r.rate),
            opt(r.exponent),
            opt(r.r_squared),
            opt(r.r_mod),
            opt(r.r_tot),
            r.status.replace([',', '\n'], ";")
        ));
    }
    out
}

pub fn sweep_dir_name(p: f64) -> String {
    format!("p_{p}")
}

/// One run per exponent in `out/p_<p>`, collated into `out/sweep.csv`.
/// Child failures are recorded and the sweep continues.
pub fn sweep(base: &RunConfig, ps: &[f64], out: &Path) -> Result<(Vec<SweepRow>, bool), RunError> {
    if ps.is_empty() {
        return Err(RunError::Config(ConfigError::Invalid("the p-list is empty".into())));
    }
    std::fs::create_dir_all(out).map_err(|e| RunError::Output(format!("{}: {e}", out.display())))?;
    let rows: Vec<SweepRow> = ps
        .par_iter()
        .map(|&p| {
            let cfg = base.with_p(p);
            let dir: PathBuf = out.join(sweep_dir_name(p));
            let mode = DecayMode::for_exponent(p);
            match simulate_to(&cfg, &dir) {
                Ok(o) => SweepRow {
                    p,
                    mode,
                    rate: o.summary.fit.as_ref().map(|f| f.rate),
                    exponent: o.summary.fit.as_ref().and_then(|f| f.exponent),
                    r_squared: o.summary.fit.as_ref().map(|f| f.r_squared),
                    r_mod: o.summary.balance.as_ref().map(|b| b.r_mod),
                    r_tot: o.summary.balance.as_ref().map(|b| b.r_tot),
                    status: "ok".into(),
                },
                Err(e) => {
                    log::error!("p = {p}: {e}");
                    SweepRow {
                        p,
                        mode,
                        rate: None,
                        exponent: None,
                        r_squared: None,
                        r_mod: None,
                        r_tot: None,
                        status: format!("failed: {e}"),
                    }
                }
            }
        })
        .collect();
    write_atomic(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    let all_ok = rows.iter().all(|r| r.status == "ok");
    Ok((rows, all_ok))
}
