//! Physical parameters, unit scaling and run configuration.
//!
//! Everything downstream works in scaled lattice units: wavevectors in units
//! of `k_L = π/b`, energies in units of the recoil energy `E_R = ħ²k_L²/2m`,
//! positions as `x̃ = k_L x`, times as `t̃ = E_R t/ħ`, velocities in units of
//! the recoil velocity `v_R = ħk_L/m` and the force through the dimensionless
//! `F̃ = bF/(πE_R)`. The dynamics then depend only on `(s, F̃, σ̃, N)`; SI
//! appears at the boundary only.

use crate::constants::*;
use crate::error::{Error, Result};

/// Physical description of one run: particle + lattice + drive + packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    /// Particle mass, kg.
    pub mass: f64,
    /// Lattice period `b`, m.
    pub lattice_constant: f64,
    /// Dimensionless potential depth `s` (`V0 = s E_R`).
    pub potential_strength: f64,
    /// Lattice acceleration, m/s². The inertial force is `F = m a_L`.
    pub lattice_acceleration: f64,
    /// Band the packet starts in.
    pub initial_band: usize,
    /// Quasimomentum spread as a fraction of `k_L` (σ̃ = σ/k_L).
    pub sigma: f64,
    /// Run length in Bloch periods.
    pub duration: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParam {
                    field,
                    message: format!("must be strictly positive, got {v}"),
                })
            }
        };
        positive("mass", self.mass)?;
        positive("lattice_constant", self.lattice_constant)?;
        positive("duration", self.duration)?;
        if !(self.potential_strength >= 0.0 && self.potential_strength.is_finite()) {
            return Err(Error::InvalidParam {
                field: "potential_strength",
                message: format!("s must be >= 0, got {}", self.potential_strength),
            });
        }
        if !(self.lattice_acceleration >= 0.0 && self.lattice_acceleration.is_finite()) {
            return Err(Error::InvalidParam {
                field: "lattice_acceleration",
                message: format!("must be >= 0, got {}", self.lattice_acceleration),
            });
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidParam {
                field: "sigma",
                message: format!("sigma/k_L must lie in (0, 1), got {}", self.sigma),
            });
        }
        if self.initial_band > crate::bands::DEFAULT_BANDS - 1 {
            return Err(Error::InvalidParam {
                field: "initial_band",
                message: format!(
                    "band {} exceeds the configured cutoff {}",
                    self.initial_band,
                    crate::bands::DEFAULT_BANDS - 1
                ),
            });
        }
        Ok(())
    }
}

/// Derived scaled quantities for a [`PhysicalParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledParams {
    pub s: f64,
    /// Dimensionless force `F̃ = bF/(πE_R) = 2m²b³a_L/(π³ħ²)`.
    pub f_tilde: f64,
    /// Packet width σ̃ = σ/k_L.
    pub sigma: f64,
    /// Recoil energy, J.
    pub recoil_energy: f64,
    /// Lattice wavevector `k_L = π/b`, 1/m.
    pub k_lattice: f64,
    /// Recoil velocity `v_R = ħk_L/m`, m/s.
    pub recoil_velocity: f64,
    /// Bloch period `τ_B = h/(bF)`, s. `None` for zero force.
    pub bloch_period: Option<f64>,
    /// Scaled Bloch period `τ̃_B = 2/F̃`. `None` for zero force.
    pub bloch_period_scaled: Option<f64>,
    /// Conversion factor from scaled time to seconds: `t = (ħ/E_R) t̃`.
    pub time_unit: f64,
}

/// Convert physical inputs to the internal scaled unit system.
pub fn scale(params: &PhysicalParams) -> Result<ScaledParams> {
    params.validate()?;
    let k_lattice = std::f64::consts::PI / params.lattice_constant;
    let recoil_energy = HBAR * HBAR * k_lattice * k_lattice / (2.0 * params.mass);
    let recoil_velocity = HBAR * k_lattice / params.mass;
    let force = params.mass * params.lattice_acceleration;
    let f_tilde = params.lattice_constant * force / (std::f64::consts::PI * recoil_energy);
    let (bloch_period, bloch_period_scaled) = if force > 0.0 {
        (
            Some(PLANCK / (params.lattice_constant * force)),
            Some(2.0 / f_tilde),
        )
    } else {
        (None, None)
    };
    Ok(ScaledParams {
        s: params.potential_strength,
        f_tilde,
        sigma: params.sigma,
        recoil_energy,
        k_lattice,
        recoil_velocity,
        bloch_period,
        bloch_period_scaled,
        time_unit: HBAR / recoil_energy,
    })
}

/// Preset catalog. Each entry is a parameter set from a published cold-atom
/// or model-semiconductor scenario; see the README for the full table.
pub const PRESET_NAMES: [&str; 8] = [
    "electron-s10-N2",
    "electron-s10-N0",
    "rb-s7",
    "rb-s7-strong",
    "rb-s13",
    "na-s7-narrow",
    "na-s13-N1",
    "na-s14",
];

/// Look up a preset by name.
pub fn preset(name: &str) -> Result<PhysicalParams> {
    let rb = RB87_MASS_U * ATOMIC_MASS_UNIT;
    let na = NA23_MASS_U * ATOMIC_MASS_UNIT;
    // Electron scenarios specify the force as charge x dc field; the struct
    // stores it as an equivalent acceleration F/m.
    let electron_accel = ELEMENTARY_CHARGE * 1.7e7 / ELECTRON_MASS;
    let p = match name {
        "electron-s10-N2" => PhysicalParams {
            mass: ELECTRON_MASS,
            lattice_constant: 0.5e-9,
            potential_strength: 10.0,
            lattice_acceleration: electron_accel,
            initial_band: 2,
            sigma: 0.2,
            duration: 0.05,
        },
        "electron-s10-N0" => PhysicalParams {
            mass: ELECTRON_MASS,
            lattice_constant: 0.5e-9,
            potential_strength: 10.0,
            lattice_acceleration: electron_accel,
            initial_band: 0,
            sigma: 0.2,
            duration: 0.05,
        },
        "rb-s7" => PhysicalParams {
            mass: rb,
            lattice_constant: 390e-9,
            potential_strength: 7.0,
            lattice_acceleration: 24.2,
            initial_band: 0,
            sigma: 0.2,
            duration: 1.0,
        },
        "rb-s7-strong" => PhysicalParams {
            mass: rb,
            lattice_constant: 390e-9,
            potential_strength: 7.0,
            lattice_acceleration: 72.6,
            initial_band: 0,
            sigma: 0.2,
            duration: 1.0,
        },
        "rb-s13" => PhysicalParams {
            mass: rb,
            lattice_constant: 390e-9,
            potential_strength: 13.0,
            lattice_acceleration: 24.2,
            initial_band: 0,
            sigma: 0.2,
            duration: 1.0,
        },
        "na-s7-narrow" => PhysicalParams {
            mass: na,
            lattice_constant: 295e-9,
            potential_strength: 7.0,
            lattice_acceleration: 800.0,
            initial_band: 0,
            sigma: 0.004,
            duration: 1.0,
        },
        "na-s13-N1" => PhysicalParams {
            mass: na,
            lattice_constant: 295e-9,
            potential_strength: 13.0,
            lattice_acceleration: 800.0,
            initial_band: 1,
            sigma: 0.01,
            duration: 1.0,
        },
        "na-s14" => PhysicalParams {
            mass: na,
            lattice_constant: 295e-9,
            potential_strength: 14.0,
            lattice_acceleration: 1700.0,
            initial_band: 0,
            sigma: 0.01,
            duration: 1.0,
        },
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                available: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(p)
}

/// Solver settings that a config document may override.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverOverrides {
    pub grid_cells: Option<usize>,
    pub pts_per_cell: Option<usize>,
    pub dt: Option<f64>,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub physical: PhysicalParams,
    pub solver: SolverOverrides,
}

impl RunConfig {
    /// Deterministic echo of the resolved configuration, one `key = value`
    /// line each, suitable for reproducing the run.
    pub fn echo(&self) -> String {
        let p = &self.physical;
        let mut out = String::new();
        out.push_str(&format!("mass_kg = {:e}\n", p.mass));
        out.push_str(&format!("lattice_nm = {:e}\n", p.lattice_constant * 1e9));
        out.push_str(&format!("s = {:e}\n", p.potential_strength));
        out.push_str(&format!("accel = {:e}\n", p.lattice_acceleration));
        out.push_str(&format!("band = {}\n", p.initial_band));
        out.push_str(&format!("sigma = {:e}\n", p.sigma));
        out.push_str(&format!("duration_bloch = {:e}\n", p.duration));
        if let Some(m) = self.solver.grid_cells {
            out.push_str(&format!("grid_cells = {m}\n"));
        }
        if let Some(p) = self.solver.pts_per_cell {
            out.push_str(&format!("pts_per_cell = {p}\n"));
        }
        if let Some(dt) = self.solver.dt {
            out.push_str(&format!("dt = {dt:e}\n"));
        }
        out
    }
}

/// Parse a line-oriented `key = value` configuration document.
///
/// Recognized keys: `mass_amu`, `lattice_nm`, `s`, `accel`, `band`, `sigma`,
/// `duration_bloch`, `grid_cells`, `pts_per_cell`, `dt`. Blank lines and
/// lines starting with `#` are ignored. Unknown keys are rejected.
pub fn load_config(text: &str) -> Result<RunConfig> {
    let mut mass_amu: Option<f64> = None;
    let mut lattice_nm: Option<f64> = None;
    let mut s: Option<f64> = None;
    let mut accel: Option<f64> = None;
    let mut band: usize = 0;
    let mut sigma: f64 = 0.2;
    let mut duration: f64 = 1.0;
    let mut solver = SolverOverrides::default();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::ConfigParse {
            line: lineno,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| Error::ConfigParse {
                line: lineno,
                message: format!("`{v}` is not a number"),
            })
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse::<usize>().map_err(|_| Error::ConfigParse {
                line: lineno,
                message: format!("`{v}` is not a non-negative integer"),
            })
        };
        let range = |field: &'static str, ok: bool, permitted: &str, v: f64| -> Result<f64> {
            if ok {
                Ok(v)
            } else {
                Err(Error::InvalidParam {
                    field,
                    message: format!("value {v} outside permitted range {permitted}"),
                })
            }
        };
        match key {
            "mass_amu" => {
                let v = parse_f64(value)?;
                mass_amu = Some(range("mass_amu", v > 0.0, "(0, inf)", v)?);
            }
            "lattice_nm" => {
                let v = parse_f64(value)?;
                lattice_nm = Some(range("lattice_nm", v > 0.0, "(0, inf)", v)?);
            }
            "s" => {
                let v = parse_f64(value)?;
                s = Some(range("s", v >= 0.0, "[0, inf)", v)?);
            }
            "accel" => {
                let v = parse_f64(value)?;
                accel = Some(range("accel", v >= 0.0, "[0, inf)", v)?);
            }
            "band" => band = parse_usize(value)?,
            "sigma" => {
                let v = parse_f64(value)?;
                sigma = range("sigma", v > 0.0 && v < 1.0, "(0, 1)", v)?;
            }
            "duration_bloch" => {
                let v = parse_f64(value)?;
                duration = range("duration_bloch", v > 0.0, "(0, inf)", v)?;
            }
            "grid_cells" => solver.grid_cells = Some(parse_usize(value)?),
            "pts_per_cell" => solver.pts_per_cell = Some(parse_usize(value)?),
            "dt" => {
                let v = parse_f64(value)?;
                solver.dt = Some(range("dt", v > 0.0, "(0, inf)", v)?);
            }
            other => {
                return Err(Error::ConfigParse {
                    line: lineno,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }

    let mass_amu = mass_amu.ok_or(Error::ConfigParse {
        line: 0,
        message: "mass_amu required".into(),
    })?;
    let lattice_nm = lattice_nm.ok_or(Error::ConfigParse {
        line: 0,
        message: "lattice_nm required".into(),
    })?;
    let s = s.ok_or(Error::ConfigParse {
        line: 0,
        message: "s required".into(),
    })?;
    let accel = accel.ok_or(Error::ConfigParse {
        line: 0,
        message: "accel required".into(),
    })?;

    let physical = PhysicalParams {
        mass: mass_amu * ATOMIC_MASS_UNIT,
        lattice_constant: lattice_nm * 1e-9,
        potential_strength: s,
        lattice_acceleration: accel,
        initial_band: band,
        sigma,
        duration,
    };
    physical.validate()?;
    Ok(RunConfig { physical, solver })
}
