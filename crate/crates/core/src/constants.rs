//! Physical constants (SI).
//!
//! CODATA 2022 recommended values; `h` and `e` are exact in the 2019 SI.

/// Planck constant, J s (exact).
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Reduced Planck constant ħ = h/2π, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_068_92e-27;

/// Electron mass, kg.
pub const ELECTRON_MASS: f64 = 9.109_383_713_9e-31;

/// Elementary charge, C (exact).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Rb-87 atomic mass in u.
pub const RB87_MASS_U: f64 = 86.909;

/// Na-23 atomic mass in u.
pub const NA23_MASS_U: f64 = 22.990;
