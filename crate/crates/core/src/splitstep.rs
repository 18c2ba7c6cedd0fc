//! Full spectral reference solver.
//!
//! The suddenly applied force is handled in the vector-potential gauge: the
//! Hamiltonian stays spatially periodic and the drive enters only through
//! the mechanical momentum `k̃ + F̃t̃` in the kinetic term, so the Strang
//! split (half potential, full kinetic, half potential) is exact in the
//! potential factor and the kinetic phase integrates in closed form over
//! each step:
//!
//! ```text
//! ∫ₜ^{t+Δt} (k̃ + F̃u)² du = Δt·k̃² + c₁(t)·k̃ + c₀(t)
//! ```
//!
//! Observables come from gauge-safe identities: `⟨ã⟩ = F̃ − s⟨sin 2x̃⟩`
//! (force expectation) and `⟨ṽ⟩ = Σ w·k̃ + F̃t̃` (mechanical momentum).
//! Band populations project ladder-grouped Fourier coefficients onto the
//! instantaneous eigenvectors at the drifted quasimomentum `κ̃ = k̃_j + F̃t̃`.

use crate::bands::{solve_bloch, LatticeSpec};
use crate::error::{Error, Result};
use crate::firstorder::{DriveSpec, FirstOrderEngine, WavepacketSpec};
use crate::timeseries::{cumulative_trapezoid, Provenance, TimeSeries};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::io::{Read, Write};
use std::sync::Arc;

/// Default time step.
pub const DEFAULT_DT: f64 = 1e-3;

/// Default points per lattice cell.
pub const DEFAULT_PTS_PER_CELL: usize = 32;

/// Default number of bands retained in population projections.
pub const DEFAULT_PROJECTION_BANDS: usize = 8;

/// Plane-wave cutoff used for projection eigensolves.
const PROJECTION_CUTOFF: usize = 16;

/// Periodic simulation box: `cells` lattice periods at `pts_per_cell`
/// spatial points each (total a power of two), stepped at `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGrid {
    pub cells: usize,
    pub pts_per_cell: usize,
    pub dt: f64,
}

impl SimGrid {
    /// Defaults for a packet width: 128 cells for wide packets, 4096 below
    /// σ̃ = 0.02, otherwise the smallest power of two satisfying the
    /// momentum-resolution rule `Δk̃ = 2/M ≤ σ̃/8`.
    pub fn for_sigma(sigma: f64) -> SimGrid {
        let cells = if sigma < 0.02 {
            4096
        } else if sigma >= 0.125 {
            128
        } else {
            (16.0 / sigma).ceil().max(128.0) as usize
        }
        .next_power_of_two();
        SimGrid {
            cells,
            pts_per_cell: DEFAULT_PTS_PER_CELL,
            dt: DEFAULT_DT,
        }
    }

    pub fn with_overrides(
        sigma: f64,
        cells: Option<usize>,
        pts_per_cell: Option<usize>,
        dt: Option<f64>,
    ) -> Result<SimGrid> {
        let mut grid = SimGrid::for_sigma(sigma);
        if let Some(m) = cells {
            grid.cells = m;
        }
        if let Some(p) = pts_per_cell {
            grid.pts_per_cell = p;
        }
        if let Some(dt) = dt {
            grid.dt = dt;
        }
        grid.validate(sigma)?;
        Ok(grid)
    }

    pub fn validate(&self, sigma: f64) -> Result<()> {
        let n = self.cells * self.pts_per_cell;
        if !n.is_power_of_two() || self.cells < 2 || self.pts_per_cell < 4 {
            return Err(Error::InvalidParam {
                field: "grid",
                message: format!(
                    "grid size cells*pts_per_cell = {}*{} must be a power of two",
                    self.cells, self.pts_per_cell
                ),
            });
        }
        let dk = 2.0 / self.cells as f64;
        if dk > sigma / 8.0 {
            let needed = ((16.0 / sigma).ceil() as usize).next_power_of_two();
            return Err(Error::Resolution(format!(
                "box too small for sigma = {sigma}: need Δk̃ = 2/M ≤ σ̃/8, i.e. at least M = {needed} cells"
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParam {
                field: "dt",
                message: "time step must be positive".into(),
            });
        }
        Ok(())
    }

    /// Total grid size `M·P`.
    pub fn size(&self) -> usize {
        self.cells * self.pts_per_cell
    }
}

/// Complex field samples on the periodic grid at one scaled time.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub psi: Vec<Complex64>,
    pub t: f64,
    /// Cached ∫|ψ|² dx̃ as of the last observation.
    pub norm: f64,
}

/// Strang-split spectral propagator in the vector-potential gauge.
pub struct Propagator {
    pub grid: SimGrid,
    pub lattice: LatticeSpec,
    pub f_tilde: f64,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    half_pot: Vec<Complex64>,
    quad_phase: Vec<Complex64>,
    j_signed: Vec<i64>,
    k_tot: Vec<f64>,
    sin2x: Vec<f64>,
    dx: f64,
    linear_phase: Vec<Complex64>,
}

impl Propagator {
    pub fn new(grid: SimGrid, lattice: LatticeSpec, f_tilde: f64) -> Result<Self> {
        if !(f_tilde >= 0.0 && f_tilde.is_finite()) {
            return Err(Error::InvalidParam {
                field: "f_tilde",
                message: format!("must be >= 0, got {f_tilde}"),
            });
        }
        let n = grid.size();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let dx = std::f64::consts::PI / grid.pts_per_cell as f64;
        let half = (n / 2) as i64;
        let j_signed: Vec<i64> = (0..n as i64).map(|i| if i < half { i } else { i - n as i64 }).collect();
        let k_tot: Vec<f64> = j_signed
            .iter()
            .map(|&j| 2.0 * j as f64 / grid.cells as f64)
            .collect();
        let sin2x: Vec<f64> = (0..n).map(|i| (2.0 * i as f64 * dx).sin()).collect();
        let half_pot: Vec<Complex64> = (0..n)
            .map(|i| {
                let x = i as f64 * dx;
                let v = lattice.s * x.sin().powi(2);
                Complex64::from_polar(1.0, -0.5 * grid.dt * v)
            })
            .collect();
        let quad_phase: Vec<Complex64> = k_tot
            .iter()
            .map(|&k| Complex64::from_polar(1.0, -grid.dt * k * k))
            .collect();
        let linear_phase = vec![Complex64::new(1.0, 0.0); n / 2 + 1];
        Ok(Propagator {
            grid,
            lattice,
            f_tilde,
            fft,
            ifft,
            half_pot,
            quad_phase,
            j_signed,
            k_tot,
            sin2x,
            dx,
            linear_phase,
        })
    }

    /// Build the initial wavepacket `Σ_j f̃_N(k̃_j) ψ_N(k̃_j, x̃) Δk̃` on the
    /// box, normalized to 1 and centered mid-box.
    pub fn synthesize_initial(&self, packet: &WavepacketSpec) -> Result<FieldState> {
        self.grid.validate(packet.sigma)?;
        let n = self.grid.size();
        let m_cells = self.grid.cells as i64;
        let dk = 2.0 / self.grid.cells as f64;
        let j_max = ((8.0 * packet.sigma / dk).ceil() as i64).min(m_cells / 2 - 1);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
        let norm_f = (2.0 * std::f64::consts::PI * packet.sigma * packet.sigma).powf(-0.25);
        let mut walker_prev: Option<Vec<f64>> = None;
        let mut j_eff = 0i64;
        for jc in -j_max..=j_max {
            let kj = dk * jc as f64;
            let sol = solve_bloch(&self.lattice, kj)?;
            let mut c = sol.coeffs[packet.band].clone();
            // chain the gauge across the sampled ladder
            if let Some(prev) = &walker_prev {
                let ov: f64 = prev.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                if ov.abs() < crate::bands::CHAIN_OVERLAP_MIN {
                    return Err(Error::Resolution(format!(
                        "synthesis gauge chain broke at k̃ = {kj}: overlap {:.3}",
                        ov.abs()
                    )));
                }
                if ov < 0.0 {
                    for v in c.iter_mut() {
                        *v = -*v;
                    }
                }
            }
            let amp = norm_f * (-kj * kj / (4.0 * packet.sigma * packet.sigma)).exp() * dk;
            let cutoff = self.lattice.cutoff as i64;
            for (i, &cm) in c.iter().enumerate() {
                if cm.abs() > 1e-14 {
                    let m = i as i64 - cutoff;
                    // significant plane-wave extent of the band (1e-8
                    // components carry 1e-16 weight and set no resolution
                    // requirement)
                    if cm.abs() > 1e-8 {
                        j_eff = j_eff.max(m.abs());
                    }
                    let j_tot = jc + m * m_cells;
                    if j_tot >= -(n as i64) / 2 && j_tot < n as i64 / 2 {
                        let idx = j_tot.rem_euclid(n as i64) as usize;
                        // centering shift by half the box: e^{-i k x_c} = (-1)^j
                        let sign = if j_tot.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                        spectrum[idx] += Complex64::new(sign * amp * cm, 0.0);
                    }
                }
            }
            walker_prev = Some(c);
        }
        if self.grid.pts_per_cell < 4 * j_eff as usize {
            return Err(Error::Resolution(format!(
                "pts_per_cell = {} cannot represent plane waves up to |j| = {j_eff}; need ≥ {}",
                self.grid.pts_per_cell,
                4 * j_eff
            )));
        }
        let mut psi = spectrum;
        self.ifft.process(&mut psi);
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.dx;
        let scale = 1.0 / norm.sqrt();
        for c in psi.iter_mut() {
            *c *= scale;
        }
        Ok(FieldState {
            psi,
            t: 0.0,
            norm: 1.0,
        })
    }

    /// Closed-form kinetic phase coefficients for a step starting at `t`.
    fn kinetic_coeffs(&self, t: f64) -> (f64, f64) {
        let f = self.f_tilde;
        let dt = self.grid.dt;
        let c1 = f * dt * (2.0 * t + dt);
        let c0 = f * f * dt * (t * t + t * dt + dt * dt / 3.0);
        (c1, c0)
    }

    fn fill_linear_phase(&mut self, theta: f64) {
        // e^{-iθ·j} for j = 0..=n/2, chunked so each value is at most a few
        // multiplications away from a fresh sincos
        const CHUNK: usize = 16;
        let len = self.linear_phase.len();
        let step = Complex64::from_polar(1.0, -theta);
        let mut base = 0;
        while base < len {
            let mut cur = Complex64::from_polar(1.0, -theta * base as f64);
            let end = (base + CHUNK).min(len);
            for slot in &mut self.linear_phase[base..end] {
                *slot = cur;
                cur *= step;
            }
            base = end;
        }
    }

    /// One Strang step (half potential, full kinetic, half potential).
    pub fn step(&mut self, state: &mut FieldState) -> Result<()> {
        let n = self.grid.size();
        for (c, hp) in state.psi.iter_mut().zip(self.half_pot.iter()) {
            *c *= hp;
        }
        self.fft.process(&mut state.psi);
        let (c1, c0) = self.kinetic_coeffs(state.t);
        let theta = 2.0 * c1 / self.grid.cells as f64;
        self.fill_linear_phase(theta);
        let global = Complex64::from_polar(1.0, -c0);
        for idx in 0..n {
            let j = self.j_signed[idx];
            let lin = if j >= 0 {
                self.linear_phase[j as usize]
            } else {
                self.linear_phase[(-j) as usize].conj()
            };
            state.psi[idx] *= self.quad_phase[idx] * lin * global;
        }
        self.ifft.process(&mut state.psi);
        let inv_n = 1.0 / n as f64;
        for (c, hp) in state.psi.iter_mut().zip(self.half_pot.iter()) {
            *c = *c * inv_n * hp;
        }
        state.t += self.grid.dt;
        if !state.psi[0].re.is_finite() {
            return Err(Error::Numerical(format!(
                "field state became non-finite at t̃ = {}",
                state.t
            )));
        }
        Ok(())
    }

    /// Fill `scratch` with the Fourier spectrum of the current state.
    pub fn spectrum_into(&self, state: &FieldState, scratch: &mut Vec<Complex64>) {
        scratch.clone_from(&state.psi);
        self.fft.process(scratch);
    }

    /// `(⟨ṽ⟩, ⟨ã⟩)` via mechanical momentum and the force-expectation
    /// identity. Also refreshes the cached norm.
    pub fn observables(&self, state: &mut FieldState) -> (f64, f64) {
        let mut spectrum = Vec::new();
        self.spectrum_into(state, &mut spectrum);
        self.observables_from_spectrum(state, &spectrum)
    }

    /// Observables reusing a precomputed spectrum.
    pub fn observables_from_spectrum(
        &self,
        state: &mut FieldState,
        spectrum: &[Complex64],
    ) -> (f64, f64) {
        let norm: f64 = state.psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.dx;
        state.norm = norm;
        let mean_sin2: f64 = state
            .psi
            .iter()
            .zip(self.sin2x.iter())
            .map(|(c, &s)| c.norm_sqr() * s)
            .sum::<f64>()
            * self.dx
            / norm;
        let accel = self.f_tilde - self.lattice.s * mean_sin2;
        let total: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
        let k_mean: f64 = spectrum
            .iter()
            .zip(self.k_tot.iter())
            .map(|(c, &k)| c.norm_sqr() * k)
            .sum::<f64>()
            / total;
        let vel = k_mean + self.f_tilde * state.t;
        (vel, accel)
    }

    /// Band populations by projection onto instantaneous eigenstates at the
    /// drifted quasimomentum `κ̃_j = k̃_j + F̃t̃`.
    pub fn band_populations(&self, state: &FieldState, n_bands: usize) -> Result<Vec<f64>> {
        let mut spectrum = Vec::new();
        self.spectrum_into(state, &mut spectrum);
        self.populations_from_spectrum(&spectrum, state.t, n_bands)
    }

    /// Populations reusing a precomputed spectrum at time `t`.
    pub fn populations_from_spectrum(
        &self,
        spectrum: &[Complex64],
        t: f64,
        n_bands: usize,
    ) -> Result<Vec<f64>> {
        let n = self.grid.size();
        let m_cells = self.grid.cells;
        let p_half = (self.grid.pts_per_cell / 2) as i64;
        let proj_spec = LatticeSpec::with_cutoff(self.lattice.s, n_bands, PROJECTION_CUTOFF)?;
        let cutoff = PROJECTION_CUTOFF as i64;
        let total: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
        let mut pops = vec![0.0; n_bands];
        // ladder classes: canonical k̃ in the first zone of the box
        for jc in -(m_cells as i64) / 2..(m_cells as i64) / 2 {
            let mut weight = 0.0;
            for m in -p_half..p_half {
                let j_tot = jc + m * m_cells as i64;
                if j_tot >= -(n as i64) / 2 && j_tot < n as i64 / 2 {
                    weight += spectrum[j_tot.rem_euclid(n as i64) as usize].norm_sqr();
                }
            }
            if weight < 1e-14 * total {
                continue;
            }
            let kappa = 2.0 * jc as f64 / m_cells as f64 + self.f_tilde * t;
            let sol = solve_bloch(&proj_spec, kappa)?;
            for (band, pop) in pops.iter_mut().enumerate() {
                let mut amp = Complex64::new(0.0, 0.0);
                for (i, &cm) in sol.coeffs[band].iter().enumerate() {
                    let m = i as i64 - cutoff;
                    if m < -p_half || m >= p_half {
                        continue;
                    }
                    let j_tot = jc + m * m_cells as i64;
                    if j_tot >= -(n as i64) / 2 && j_tot < n as i64 / 2 {
                        amp += spectrum[j_tot.rem_euclid(n as i64) as usize] * cm;
                    }
                }
                *pop += amp.norm_sqr();
            }
        }
        for p in pops.iter_mut() {
            *p /= total;
        }
        Ok(pops)
    }
}

/// Options for a full split-step run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Record per-band populations along the run.
    pub populations: bool,
    /// Run the Δt̃-doubling convergence gate.
    pub gate: bool,
    /// Observable sample count (0 = default 4096, capped by step count).
    pub samples: usize,
    /// Bands retained in population projections.
    pub projection_bands: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            populations: false,
            gate: true,
            samples: 0,
            projection_bands: DEFAULT_PROJECTION_BANDS,
        }
    }
}

/// Threshold for the Δt̃-doubling gate on the final scaled velocity.
pub const GATE_TOLERANCE: f64 = 1e-4;

/// Evolve one scenario and emit a [`TimeSeries`] with the same shape as the
/// first-order engine (baseline columns filled from the effective-mass
/// prediction).
pub fn run(
    lattice: &LatticeSpec,
    packet: &WavepacketSpec,
    drive: &DriveSpec,
    grid: SimGrid,
    opts: &RunOptions,
) -> Result<TimeSeries> {
    // force an even step count so the 2Δt̃ gate lands exactly on the horizon
    let n_steps = ((drive.horizon / grid.dt).round() as usize).max(2);
    let n_steps = n_steps + n_steps % 2;
    let horizon = n_steps as f64 * grid.dt;

    let mut prop = Propagator::new(grid.clone(), lattice.clone(), drive.f_tilde)?;
    let initial = prop.synthesize_initial(packet)?;

    // projection sanity on the fresh packet
    let p0 = prop.band_populations(&initial, opts.projection_bands.max(packet.band + 1))?;
    if p0[packet.band] < 1.0 - 1e-8 {
        return Err(Error::Numerical(format!(
            "initial synthesis projects onto band {} with probability {} < 1 - 1e-8",
            packet.band, p0[packet.band]
        )));
    }

    let samples = if opts.samples == 0 { 4096 } else { opts.samples };
    let stride = (n_steps / samples.min(n_steps)).max(1);

    let mut state = initial.clone();
    let mut t_out = Vec::new();
    let mut vel = Vec::new();
    let mut accel = Vec::new();
    let mut pops: Vec<Vec<f64>> = vec![Vec::new(); if opts.populations { opts.projection_bands } else { 0 }];
    let mut scratch: Vec<Complex64> = Vec::new();
    let record = |prop: &Propagator, state: &mut FieldState, scratch: &mut Vec<Complex64>,
                      t_out: &mut Vec<f64>, vel: &mut Vec<f64>, accel: &mut Vec<f64>,
                      pops: &mut Vec<Vec<f64>>|
     -> Result<()> {
        prop.spectrum_into(state, scratch);
        let (v, a) = prop.observables_from_spectrum(state, scratch);
        if !v.is_finite() || !a.is_finite() {
            return Err(Error::Numerical(format!("non-finite observable at t̃ = {}", state.t)));
        }
        if (state.norm - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!(
                "norm drifted to {} at t̃ = {}",
                state.norm, state.t
            )));
        }
        t_out.push(state.t);
        vel.push(v);
        accel.push(a);
        if !pops.is_empty() {
            let p = prop.populations_from_spectrum(scratch, state.t, pops.len())?;
            for (band, series) in pops.iter_mut().enumerate() {
                series.push(p[band]);
            }
        }
        Ok(())
    };

    record(&prop, &mut state, &mut scratch, &mut t_out, &mut vel, &mut accel, &mut pops)?;
    for step_idx in 1..=n_steps {
        prop.step(&mut state)?;
        if step_idx % stride == 0 || step_idx == n_steps {
            record(&prop, &mut state, &mut scratch, &mut t_out, &mut vel, &mut accel, &mut pops)?;
        }
    }

    // Δt̃-doubling convergence gate
    let mut gate_residual = f64::NAN;
    if opts.gate {
        let coarse_grid = SimGrid {
            dt: 2.0 * grid.dt,
            ..grid.clone()
        };
        let mut coarse = Propagator::new(coarse_grid, lattice.clone(), drive.f_tilde)?;
        let mut cstate = initial.clone();
        for _ in 0..n_steps / 2 {
            coarse.step(&mut cstate)?;
        }
        let (v_coarse, _) = coarse.observables(&mut cstate);
        gate_residual = (v_coarse - *vel.last().unwrap()).abs();
        if gate_residual > GATE_TOLERANCE {
            return Err(Error::Numerical(format!(
                "time step not converged: doubling Δt̃ moves ⟨ṽ(horizon)⟩ by {gate_residual:.3e} > {GATE_TOLERANCE:.0e}"
            )));
        }
    }

    // effective-mass baseline on the same sample times
    let fo = FirstOrderEngine::new(
        lattice.clone(),
        packet.clone(),
        DriveSpec {
            f_tilde: drive.f_tilde,
            horizon,
            samples: 0,
        },
    )?;
    let accel_base: Vec<f64> = t_out.iter().map(|&t| fo.baseline_at(t)).collect();
    let vel_base = cumulative_trapezoid(&t_out, &accel_base);

    let f = drive.f_tilde;
    let mstar: Vec<Option<f64>> = accel
        .iter()
        .map(|&a| (a.abs() >= 1e-3 * f && f > 0.0).then(|| f / a))
        .collect();

    let metadata = vec![
        ("s".to_string(), format!("{:e}", lattice.s)),
        ("F_tilde".to_string(), format!("{:e}", f)),
        ("sigma".to_string(), format!("{:e}", packet.sigma)),
        ("band".to_string(), format!("{}", packet.band)),
        ("grid_cells".to_string(), format!("{}", grid.cells)),
        ("pts_per_cell".to_string(), format!("{}", grid.pts_per_cell)),
        ("dt".to_string(), format!("{:e}", grid.dt)),
        ("steps".to_string(), format!("{n_steps}")),
        (
            "gate_residual_v".to_string(),
            if gate_residual.is_nan() {
                "not-run".to_string()
            } else {
                format!("{gate_residual:e}")
            },
        ),
    ];

    Ok(TimeSeries {
        provenance: Provenance::FullNumeric,
        t: t_out,
        accel,
        vel,
        accel_baseline: accel_base,
        vel_baseline: vel_base,
        mstar,
        populations: opts.populations.then_some(pops),
        metadata,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned header + raw complex samples, little endian.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"EMCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Write a field-state checkpoint.
///
/// Layout (all little endian): magic `EMCK`, u32 version, u32 cells,
/// u32 pts_per_cell, f64 t̃, f64 norm, then `cells·pts_per_cell` complex
/// samples as (re, im) f64 pairs.
pub fn save_checkpoint<W: Write>(
    state: &FieldState,
    grid: &SimGrid,
    w: &mut W,
) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(grid.cells as u32).to_le_bytes())?;
    w.write_all(&(grid.pts_per_cell as u32).to_le_bytes())?;
    w.write_all(&state.t.to_le_bytes())?;
    w.write_all(&state.norm.to_le_bytes())?;
    for c in &state.psi {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

/// Read a checkpoint back: `(state, cells, pts_per_cell)`.
pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<(FieldState, usize, usize)> {
    let bad = |m: &str| Error::Numerical(format!("checkpoint: {m}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(&e.to_string()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
    if u32::from_le_bytes(u32buf) != CHECKPOINT_VERSION {
        return Err(bad("unsupported version"));
    }
    r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
    let cells = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
    let ppc = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf).map_err(|e| bad(&e.to_string()))?;
    let t = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf).map_err(|e| bad(&e.to_string()))?;
    let norm = f64::from_le_bytes(f64buf);
    let n = cells * ppc;
    let mut psi = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut f64buf).map_err(|e| bad(&e.to_string()))?;
        let re = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf).map_err(|e| bad(&e.to_string()))?;
        let im = f64::from_le_bytes(f64buf);
        psi.push(Complex64::new(re, im));
    }
    Ok((FieldState { psi, t, norm }, cells, ppc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::DEFAULT_BANDS;

    const F_RB7: f64 = 0.173406;

    fn lattice(s: f64) -> LatticeSpec {
        LatticeSpec::new(s, DEFAULT_BANDS).unwrap()
    }

    fn packet02() -> WavepacketSpec {
        WavepacketSpec::new(0, 0.2).unwrap()
    }

    #[test]
    fn grid_defaults_follow_sigma() {
        assert_eq!(SimGrid::for_sigma(0.2).cells, 128);
        assert_eq!(SimGrid::for_sigma(0.004).cells, 4096);
        assert_eq!(SimGrid::for_sigma(0.01).cells, 4096);
        let g = SimGrid::for_sigma(0.05);
        assert!(g.cells >= 320_usize.next_power_of_two() / 2 && g.cells.is_power_of_two());
        g.validate(0.05).unwrap();
    }

    #[test]
    fn undersized_box_reports_required_cells() {
        let g = SimGrid {
            cells: 128,
            pts_per_cell: 32,
            dt: 1e-3,
        };
        match g.validate(0.004) {
            Err(Error::Resolution(msg)) => assert!(msg.contains("4096"), "{msg}"),
            other => panic!("expected Resolution, got {other:?}"),
        }
    }

    #[test]
    fn synthesis_projects_onto_the_target_band() {
        let grid = SimGrid::for_sigma(0.2);
        let prop = Propagator::new(grid, lattice(7.0), F_RB7).unwrap();
        let state = prop.synthesize_initial(&packet02()).unwrap();
        let pops = prop.band_populations(&state, 8).unwrap();
        assert!(pops[0] > 1.0 - 1e-8, "P_0(0) = {}", pops[0]);
        let total: f64 = pops.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn free_packet_synthesis_is_gaussian() {
        // s = 0: the folded band-0 packet is a plain free Gaussian
        let grid = SimGrid::for_sigma(0.2);
        let prop = Propagator::new(grid, lattice(0.0), 0.1).unwrap();
        let mut state = prop.synthesize_initial(&packet02()).unwrap();
        let (v0, a0) = prop.observables(&mut state);
        assert!(v0.abs() < 1e-12);
        assert!((a0 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn free_accelerated_packet_is_exact() {
        // s = 0 under force: ⟨ṽ⟩ = F̃t̃ to high accuracy
        let grid = SimGrid::for_sigma(0.2);
        let mut prop = Propagator::new(grid, lattice(0.0), 0.3).unwrap();
        let mut state = prop.synthesize_initial(&packet02()).unwrap();
        for _ in 0..1000 {
            prop.step(&mut state).unwrap();
        }
        let (v, a) = prop.observables(&mut state);
        assert!((v - 0.3 * state.t).abs() < 1e-8, "v = {v} at t = {}", state.t);
        assert!((a - 0.3).abs() < 1e-10);
    }

    #[test]
    fn zero_force_eigenpacket_only_dephases() {
        let grid = SimGrid::for_sigma(0.2);
        let mut prop = Propagator::new(grid, lattice(7.0), 0.0).unwrap();
        let mut state = prop.synthesize_initial(&packet02()).unwrap();
        let p_before = prop.band_populations(&state, 6).unwrap();
        for _ in 0..2000 {
            prop.step(&mut state).unwrap();
        }
        let p_after = prop.band_populations(&state, 6).unwrap();
        for (b, (x, y)) in p_before.iter().zip(p_after.iter()).enumerate() {
            assert!((x - y).abs() < 1e-10, "band {b}: {x} vs {y}");
        }
        let (_, a) = prop.observables(&mut state);
        assert!(a.abs() < 1e-8, "⟨ã⟩ = {a} for F̃ = 0");
    }

    #[test]
    fn bare_mass_onset_at_t0() {
        let grid = SimGrid::for_sigma(0.2);
        let prop = Propagator::new(grid, lattice(7.0), F_RB7).unwrap();
        let mut state = prop.synthesize_initial(&packet02()).unwrap();
        let (v0, a0) = prop.observables(&mut state);
        assert!(v0.abs() < 1e-12, "v(0) = {v0}");
        assert!(((a0 - F_RB7) / F_RB7).abs() < 1e-10, "a(0) = {a0}");
    }

    #[test]
    fn strang_stepping_is_second_order() {
        // halving Δt̃ must cut the end-velocity error about fourfold
        let horizon = 1.0_f64;
        let reference = evolve_v_end(2.5e-4, horizon);
        let e4 = (evolve_v_end(4e-3, horizon) - reference).abs();
        let e2 = (evolve_v_end(2e-3, horizon) - reference).abs();
        let ratio = e4 / e2;
        assert!(
            (2.5..8.0).contains(&ratio),
            "error ratio {ratio} (e4 = {e4:.3e}, e2 = {e2:.3e})"
        );
    }

    fn evolve_v_end(dt: f64, horizon: f64) -> f64 {
        let grid = SimGrid {
            cells: 128,
            pts_per_cell: 32,
            dt,
        };
        let mut prop = Propagator::new(grid, lattice(7.0), F_RB7).unwrap();
        let mut state = prop.synthesize_initial(&packet02()).unwrap();
        let steps = (horizon / dt).round() as usize;
        for _ in 0..steps {
            prop.step(&mut state).unwrap();
        }
        let (v, _) = prop.observables(&mut state);
        v
    }

    #[test]
    fn unitarity_over_many_steps() {
        // small box, 10^5 steps: |norm - 1| < 1e-10
        let grid = SimGrid {
            cells: 64,
            pts_per_cell: 32,
            dt: 1e-3,
        };
        let mut prop = Propagator::new(grid, lattice(5.0), 0.4).unwrap();
        let mut state = prop
            .synthesize_initial(&WavepacketSpec::new(0, 0.3).unwrap())
            .unwrap();
        for _ in 0..100_000 {
            prop.step(&mut state).unwrap();
        }
        let norm: f64 = state.psi.iter().map(|c| c.norm_sqr()).sum::<f64>()
            * (std::f64::consts::PI / 32.0);
        assert!((norm - 1.0).abs() < 1e-10, "norm drift {}", (norm - 1.0).abs());
    }

    #[test]
    fn ehrenfest_consistency() {
        // central-difference dv/dt matches ⟨ã⟩ within 1e-3 F̃ on the interior
        let grid = SimGrid::for_sigma(0.2);
        let drive = DriveSpec::new(F_RB7, 0.1).unwrap();
        let opts = RunOptions {
            gate: false,
            samples: 256,
            ..Default::default()
        };
        let ts = run(&lattice(7.0), &packet02(), &drive, grid, &opts).unwrap();
        let n = ts.t.len();
        for i in 2..n - 2 {
            let dvdt = (ts.vel[i + 1] - ts.vel[i - 1]) / (ts.t[i + 1] - ts.t[i - 1]);
            assert!(
                (dvdt - ts.accel[i]).abs() < 1e-3 * F_RB7,
                "at t = {}: dv/dt = {dvdt} vs a = {}",
                ts.t[i],
                ts.accel[i]
            );
        }
    }

    #[test]
    fn gauge_independence_against_tilted_stepper() {
        // evolving in the tilted-potential position gauge reproduces ⟨ṽ⟩
        let grid = SimGrid::for_sigma(0.2);
        let horizon = 0.25 * 2.0 / F_RB7;
        let mut vec_prop = Propagator::new(grid.clone(), lattice(7.0), F_RB7).unwrap();
        let mut state = vec_prop.synthesize_initial(&packet02()).unwrap();
        let mut tilted = TiltedStepper::new(&grid, 7.0, F_RB7);
        let mut tstate = state.clone();
        let steps = (horizon / grid.dt).round() as usize;
        for _ in 0..steps {
            vec_prop.step(&mut state).unwrap();
            tilted.step(&mut tstate);
        }
        let (v_vec, _) = vec_prop.observables(&mut state);
        let v_tilt = tilted.velocity(&tstate);
        assert!(
            (v_vec - v_tilt).abs() < 1e-3,
            "vector gauge {v_vec} vs tilted {v_tilt}"
        );
    }

    /// Test-only alternate stepper in the position gauge: the force enters
    /// as a linear potential tilt fixed in the box frame, velocity is the
    /// canonical momentum. Valid while the packet stays away from the box
    /// edge.
    struct TiltedStepper {
        fft: Arc<dyn Fft<f64>>,
        ifft: Arc<dyn Fft<f64>>,
        half_pot: Vec<Complex64>,
        kin: Vec<Complex64>,
        k_tot: Vec<f64>,
    }

    impl TiltedStepper {
        fn new(grid: &SimGrid, s: f64, f_tilde: f64) -> Self {
            let n = grid.size();
            let dx = std::f64::consts::PI / grid.pts_per_cell as f64;
            let x_c = 0.5 * grid.cells as f64 * std::f64::consts::PI;
            let mut planner = FftPlanner::new();
            let fft = planner.plan_fft_forward(n);
            let ifft = planner.plan_fft_inverse(n);
            let half_pot: Vec<Complex64> = (0..n)
                .map(|i| {
                    let x = i as f64 * dx;
                    let v = s * x.sin().powi(2) - f_tilde * (x - x_c);
                    Complex64::from_polar(1.0, -0.5 * grid.dt * v)
                })
                .collect();
            let half = (n / 2) as i64;
            let k_tot: Vec<f64> = (0..n as i64)
                .map(|i| {
                    let j = if i < half { i } else { i - n as i64 };
                    2.0 * j as f64 / grid.cells as f64
                })
                .collect();
            let kin: Vec<Complex64> = k_tot
                .iter()
                .map(|&k| Complex64::from_polar(1.0, -grid.dt * k * k))
                .collect();
            TiltedStepper {
                fft,
                ifft,
                half_pot,
                kin,
                k_tot,
            }
        }

        fn step(&mut self, state: &mut FieldState) {
            let n = state.psi.len();
            for (c, hp) in state.psi.iter_mut().zip(self.half_pot.iter()) {
                *c *= hp;
            }
            self.fft.process(&mut state.psi);
            for (c, k) in state.psi.iter_mut().zip(self.kin.iter()) {
                *c *= k;
            }
            self.ifft.process(&mut state.psi);
            let inv_n = 1.0 / n as f64;
            for (c, hp) in state.psi.iter_mut().zip(self.half_pot.iter()) {
                *c = *c * inv_n * hp;
            }
        }

        fn velocity(&self, state: &FieldState) -> f64 {
            let mut spectrum = state.psi.clone();
            self.fft.process(&mut spectrum);
            let total: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
            spectrum
                .iter()
                .zip(self.k_tot.iter())
                .map(|(c, &k)| c.norm_sqr() * k)
                .sum::<f64>()
                / total
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let grid = SimGrid {
            cells: 64,
            pts_per_cell: 32,
            dt: 1e-3,
        };
        let mut prop = Propagator::new(grid.clone(), lattice(5.0), 0.2).unwrap();
        let mut state = prop
            .synthesize_initial(&WavepacketSpec::new(0, 0.3).unwrap())
            .unwrap();
        for _ in 0..100 {
            prop.step(&mut state).unwrap();
        }
        let mut buf = Vec::new();
        save_checkpoint(&state, &grid, &mut buf).unwrap();
        let (loaded, cells, ppc) = load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(cells, 64);
        assert_eq!(ppc, 32);
        assert_eq!(loaded.t, state.t);
        assert_eq!(loaded.psi, state.psi);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let garbage = vec![0u8; 64];
        assert!(load_checkpoint(&mut garbage.as_slice()).is_err());
    }
}
