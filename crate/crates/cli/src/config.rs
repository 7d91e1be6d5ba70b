use std::path::{Path, PathBuf};

use kinfluid::coupling::DragMollification;
use kinfluid::fluid::{CflLimits, FluidIntegrator};
use kinfluid::{GridSpec, InitialData, PowerLaw, SimError};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub mu: f64,
    pub p: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    PowerLaw::DEFAULT_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    #[default]
    Splitting,
    Picard { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum DtPolicy {
    Fixed {
        dt: f64,
    },
    Cfl {
        #[serde(default = "default_c_visc")]
        c_visc: f64,
        #[serde(default = "default_c_adv")]
        c_adv: f64,
        #[serde(default = "default_dt_max")]
        dt_max: f64,
    },
}

fn default_c_visc() -> f64 {
    CflLimits::default().c_visc
}

fn default_c_adv() -> f64 {
    CflLimits::default().c_adv
}

fn default_dt_max() -> f64 {
    CflLimits::default().dt_max
}

impl Default for DtPolicy {
    fn default() -> Self {
        let c = CflLimits::default();
        Self::Cfl {
            c_visc: c.c_visc,
            c_adv: c.c_adv,
            dt_max: c.dt_max,
        }
    }
}

impl DtPolicy {
    /// Stability limits; a fixed step is checked against the default factors.
    pub fn limits(&self) -> CflLimits {
        match *self {
            Self::Fixed { .. } => CflLimits {
                dt_max: f64::INFINITY,
                ..CflLimits::default()
            },
            Self::Cfl { c_visc, c_adv, dt_max } => CflLimits { c_visc, c_adv, dt_max },
        }
    }

    /// Same policy with every step-size control halved.
    pub fn halved(&self) -> Self {
        match *self {
            Self::Fixed { dt } => Self::Fixed { dt: 0.5 * dt },
            Self::Cfl { c_visc, c_adv, dt_max } => Self::Cfl {
                c_visc: 0.5 * c_visc,
                c_adv: 0.5 * c_adv,
                dt_max: 0.5 * dt_max,
            },
        }
    }
}

mod norm_exponents {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Exponent {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(qs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Exponent> = qs
            .iter()
            .map(|&q| {
                if q.is_infinite() {
                    Exponent::Text("inf".into())
                } else {
                    Exponent::Num(q)
                }
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Exponent> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|e| match e {
                Exponent::Num(q) => Ok(q),
                Exponent::Text(t) if t == "inf" => Ok(f64::INFINITY),
                Exponent::Text(t) => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{t}\""
                ))),
            })
            .collect()
    }
}

fn default_rho_norms() -> Vec<f64> {
    vec![1.0, 2.0, f64::INFINITY]
}

fn default_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub grid: GridConfig,
    pub law: LawConfig,
    /// Mollification width; `0` is the limit system.
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub drag_mollification: DragMollification,
    #[serde(default)]
    pub fluid_integrator: FluidIntegrator,
    #[serde(default)]
    pub dt: DtPolicy,
    pub t_end: f64,
    pub n_particles: usize,
    pub initial: InitialData,
    /// A row is written every this many steps, plus the final state.
    #[serde(default = "default_every")]
    pub diagnostics_every: usize,
    #[serde(default = "default_rho_norms", with = "norm_exponents")]
    pub rho_norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl From<SimError> for ConfigError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => Self::Invalid(m),
            other => Self::Invalid(other.to_string()),
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path.is_empty() || path == "." {
                ConfigError::Invalid(inner.to_string())
            } else {
                field_err(&path, inner)
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.grid.dim, self.grid.n).map_err(|e| match e {
            SimError::InvalidGrid(m) => field_err("grid", m),
            other => other.into(),
        })
    }

    pub fn power_law(&self) -> Result<PowerLaw, ConfigError> {
        Ok(PowerLaw::new(self.law.mu, self.law.p, self.law.delta)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(field_err(
                "schema",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        let grid = self.grid_spec()?;
        self.power_law()?;
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(field_err("eps", format!("must be >= 0, got {}", self.eps)));
        }
        if let CouplingConfig::Picard { tol, max_iter } = self.coupling {
            if !(tol > 0.0) {
                return Err(field_err("coupling.tol", format!("must be > 0, got {tol}")));
            }
            if max_iter == 0 {
                return Err(field_err("coupling.max_iter", "must be >= 1"));
            }
        }
        match self.dt {
            DtPolicy::Fixed { dt } => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(field_err("dt.dt", format!("must be > 0, got {dt}")));
                }
            }
            DtPolicy::Cfl { c_visc, c_adv, dt_max } => {
                for (name, v) in [("dt.c_visc", c_visc), ("dt.c_adv", c_adv), ("dt.dt_max", dt_max)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(field_err(name, format!("must be > 0, got {v}")));
                    }
                }
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(field_err("t_end", format!("must be > 0, got {}", self.t_end)));
        }
        if self.n_particles == 0 {
            return Err(field_err("n_particles", "must be >= 1"));
        }
        if self.diagnostics_every == 0 {
            return Err(field_err("diagnostics_every", "must be >= 1"));
        }
        for q in &self.rho_norms {
            if !(*q >= 1.0) {
                return Err(field_err("rho_norms", format!("exponents must be >= 1 or \"inf\", got {q}")));
            }
        }
        self.initial.validate(&grid)?;
        Ok(())
    }

    /// Copy with a different power-law exponent.
    pub fn with_p(&self, p: f64) -> Self {
        let mut c = self.clone();
        c.law.p = p;
        c
    }
}
