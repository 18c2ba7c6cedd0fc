//! Transient response of a quantum wavepacket in a one-dimensional optical
//! lattice to a suddenly applied homogeneous force.
//!
//! A wavepacket prepared in a single band of a periodic potential and hit by
//! a constant force at `t = 0` accelerates at first with its *bare* mass and
//! only later settles into the band effective mass, oscillating around that
//! value with a period set by the gap to the nearest band. This crate
//! computes that transient with two independent engines:
//!
//! * [`firstorder`] — a semianalytic engine built on force-dressed Bloch
//!   states, valid while interband population transfer stays small. It
//!   produces acceleration/velocity series, the decay envelope, band
//!   populations and all characteristic timescales.
//! * [`splitstep`] — a full spectral solver (Strang-split FFT stepping in
//!   the vector-potential gauge) used as the cross-validation reference.
//!
//! All internal computation is in scaled lattice units; SI enters only at
//! the boundary through [`scenario`]. The [`bands`] module solves the Bloch
//! problem for the sinusoidal (Mathieu) potential in a truncated plane-wave
//! basis and provides gauge-consistent matrix elements at arbitrary
//! quasimomentum.

pub mod bands;
pub mod constants;
pub mod error;
pub mod firstorder;
pub mod scenario;
pub mod splitstep;
pub mod timeseries;

pub use error::{Error, Result};
