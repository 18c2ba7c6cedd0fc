//! Bloch eigenproblem for the sinusoidal lattice in a truncated plane-wave
//! basis.
//!
//! In scaled units the lattice Hamiltonian acting on the periodic part of a
//! Bloch function at quasimomentum `k̃` is the real symmetric tridiagonal
//! matrix
//!
//! ```text
//! H[j][j]   = (k̃ + 2j)² + s/2        j = -J..J
//! H[j][j±1] = -s/4
//! ```
//!
//! Energies are in recoil units, momenta in units of `k_L`. Quasimomenta
//! outside the first Brillouin zone are reduced internally by
//! `k̃ → k̃ - 2·round(k̃/2)` with a matching translation of the plane-wave
//! index, which makes the extended-zone periodicity exact by construction.
//!
//! Eigenvector signs are meaningless individually; every product that mixes
//! two quasimomenta must take both factors from one continuity-chained gauge
//! (see [`gauge_chain`] and [`BandTable`]). A possible π Zak phase makes any
//! single-point sign rule inconsistent across the zone.

use crate::error::{Error, Result};

/// Default plane-wave cutoff `J` (basis size `2J+1`).
pub const DEFAULT_CUTOFF: usize = 32;

/// Default number of retained bands.
pub const DEFAULT_BANDS: usize = 12;

/// First-order quantities refuse to run across gaps smaller than this.
pub const DEGENERACY_TOL: f64 = 1e-6;

/// Minimum same-band overlap between neighbouring chain points away from
/// narrow avoided crossings.
pub const CHAIN_OVERLAP_MIN: f64 = 0.9;

/// Gap (recoil units) below which an avoided crossing rotates eigenvectors
/// over a k̃ window narrower than any practical chain step; the overlap
/// threshold is suspended for points that close to a neighbouring band.
pub const NEAR_CROSSING_GAP: f64 = 0.05;

/// Eigenvalues closer than this are treated as one cluster when computing
/// eigenvectors, and the cluster is explicitly re-orthogonalized.
const CLUSTER_GAP: f64 = 1e-4;

/// Truncated plane-wave description of the periodic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    /// Dimensionless potential depth (`V0 = s E_R`).
    pub s: f64,
    /// Plane-wave cutoff `J`; basis indices run `-J..=J`.
    pub cutoff: usize,
    /// Number of bands retained by band-resolved operations.
    pub n_bands: usize,
}

impl LatticeSpec {
    pub fn new(s: f64, n_bands: usize) -> Result<Self> {
        Self::with_cutoff(s, n_bands, DEFAULT_CUTOFF)
    }

    pub fn with_cutoff(s: f64, n_bands: usize, cutoff: usize) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidParam {
                field: "s",
                message: format!("potential strength must be >= 0, got {s}"),
            });
        }
        if 2 * cutoff + 1 < n_bands + 8 {
            return Err(Error::InvalidParam {
                field: "cutoff",
                message: format!(
                    "basis size 2J+1 = {} must be at least n_bands + 8 = {}",
                    2 * cutoff + 1,
                    n_bands + 8
                ),
            });
        }
        Ok(LatticeSpec {
            s,
            cutoff,
            n_bands,
        })
    }

    /// Basis dimension `2J + 1`.
    pub fn dim(&self) -> usize {
        2 * self.cutoff + 1
    }

    fn tridiagonal(&self, k_reduced: f64) -> (Vec<f64>, Vec<f64>) {
        let j_max = self.cutoff as i64;
        let diag: Vec<f64> = (-j_max..=j_max)
            .map(|j| {
                let q = k_reduced + 2.0 * j as f64;
                q * q + 0.5 * self.s
            })
            .collect();
        let off = vec![-0.25 * self.s; self.dim() - 1];
        (diag, off)
    }
}

/// Record of the eigenvector sign convention applied to a solution.
#[derive(Debug, Clone, Default)]
pub struct GaugeTag {
    /// Convention used to seed the sign of a fresh (unchained) solution.
    pub seed: &'static str,
    /// Per band: whether continuity chaining flipped the sign relative to
    /// the seed convention at this point.
    pub flipped: Vec<bool>,
    /// Per band: whether this point sits inside a near-degenerate crossing
    /// where the chain overlap criterion is not meaningful.
    pub near_crossing: Vec<bool>,
}

const SEED_CONVENTION: &str = "largest-coefficient-positive";

/// Gauge-fixed eigensolution at one quasimomentum.
#[derive(Debug, Clone)]
pub struct BlochSolution {
    /// Quasimomentum (any real; stored unreduced).
    pub k: f64,
    /// Band energies in recoil units, ascending.
    pub energies: Vec<f64>,
    /// Plane-wave amplitudes `coeffs[n][j + J]` of `exp(i(k̃+2j)x̃)`,
    /// unit-normalized per band.
    pub coeffs: Vec<Vec<f64>>,
    pub gauge: GaugeTag,
    /// Energy of the first band above the retained set (crossing guard for
    /// the top retained band).
    pub guard_energy: f64,
    cutoff: usize,
}

impl BlochSolution {
    /// Scaled momentum matrix `p̃[n][n'] = Σ_j (k̃+2j) C_n[j] C_n'[j]`.
    ///
    /// Real and symmetric in the fixed gauge; the diagonal equals half the
    /// band-energy slope.
    pub fn momentum_elements(&self) -> Vec<Vec<f64>> {
        let nb = self.energies.len();
        let j_max = self.cutoff as i64;
        let pw: Vec<f64> = (-j_max..=j_max).map(|j| self.k + 2.0 * j as f64).collect();
        let mut p = vec![vec![0.0; nb]; nb];
        for n in 0..nb {
            for m in n..nb {
                let mut acc = 0.0;
                for j in 0..pw.len() {
                    acc += pw[j] * self.coeffs[n][j] * self.coeffs[m][j];
                }
                p[n][m] = acc;
                p[m][n] = acc;
            }
        }
        p
    }

    /// The same solution re-labelled at `k̃ + 2·zones` via plane-wave index
    /// translation. Energies are copied verbatim (exact periodicity).
    pub fn translated(&self, zones: i64) -> BlochSolution {
        let dim = 2 * self.cutoff + 1;
        let mut coeffs = vec![vec![0.0; dim]; self.energies.len()];
        for (n, c) in self.coeffs.iter().enumerate() {
            for i in 0..dim {
                // C_j(k + 2z) = C_{j+z}(k)
                let src = i as i64 + zones;
                if (0..dim as i64).contains(&src) {
                    coeffs[n][i] = c[src as usize];
                }
            }
        }
        BlochSolution {
            k: self.k + 2.0 * zones as f64,
            energies: self.energies.clone(),
            coeffs,
            gauge: self.gauge.clone(),
            guard_energy: self.guard_energy,
            cutoff: self.cutoff,
        }
    }
}

// ---------------------------------------------------------------------------
// Symmetric tridiagonal eigensolver: implicit-shift QL for eigenvalues,
// inverse iteration with cluster re-orthogonalization for eigenvectors.
// ---------------------------------------------------------------------------

/// All eigenvalues of a symmetric tridiagonal matrix, ascending.
fn tridiag_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iterations = 0;
        'sweep: loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            assert!(iterations <= 64, "QL iteration failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    continue 'sweep;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d
}

/// Solve `(T - shift) x = rhs` in place by Gaussian elimination with partial
/// pivoting (fill-in limited to a second superdiagonal). Exact singularity is
/// nudged by a tiny pivot so inverse iteration can proceed.
fn solve_shifted(diag: &[f64], off: &[f64], shift: f64, x: &mut [f64]) {
    let n = diag.len();
    let scale: f64 = diag.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let tiny = f64::EPSILON * scale.max(1.0);
    let mut alpha: Vec<f64> = diag.iter().map(|&v| v - shift).collect();
    let mut beta: Vec<f64> = (0..n)
        .map(|i| if i + 1 < n { off[i] } else { 0.0 })
        .collect();
    let mut gamma = vec![0.0; n];
    for k in 0..n - 1 {
        let sub = off[k];
        if alpha[k].abs() < sub.abs() {
            // swap rows k and k+1
            let (a0, b0, g0) = (alpha[k], beta[k], gamma[k]);
            alpha[k] = sub;
            beta[k] = alpha[k + 1];
            gamma[k] = beta[k + 1];
            alpha[k + 1] = b0;
            beta[k + 1] = g0;
            x.swap(k, k + 1);
            let m = a0 / alpha[k];
            alpha[k + 1] -= m * beta[k];
            beta[k + 1] -= m * gamma[k];
            x[k + 1] -= m * x[k];
        } else {
            let piv = if alpha[k].abs() < tiny {
                tiny.copysign(alpha[k])
            } else {
                alpha[k]
            };
            alpha[k] = piv;
            let m = sub / piv;
            alpha[k + 1] -= m * beta[k];
            beta[k + 1] -= m * gamma[k];
            x[k + 1] -= m * x[k];
        }
    }
    if alpha[n - 1].abs() < tiny {
        alpha[n - 1] = tiny.copysign(alpha[n - 1]);
    }
    // back substitution
    x[n - 1] /= alpha[n - 1];
    if n >= 2 {
        x[n - 2] = (x[n - 2] - beta[n - 2] * x[n - 1]) / alpha[n - 2];
    }
    for k in (0..n.saturating_sub(2)).rev() {
        x[k] = (x[k] - beta[k] * x[k + 1] - gamma[k] * x[k + 2]) / alpha[k];
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Deterministic start vector for inverse iteration.
fn seed_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        v.push((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
    }
    v
}

fn mgs_project(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b.iter()) {
            *x -= dot * y;
        }
    }
}

/// Lowest `nb` eigenpairs of a symmetric tridiagonal matrix, plus the next
/// eigenvalue above them (or +∞ at full basis) as a crossing guard.
fn eigh_lowest(diag: &[f64], off: &[f64], nb: usize) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
    let all = tridiag_eigenvalues(diag, off);
    let guard = all.get(nb).copied().unwrap_or(f64::INFINITY);
    let values = all[..nb].to_vec();
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(nb);
    let mut i = 0;
    while i < nb {
        // group a cluster of near-coincident eigenvalues
        let mut j = i + 1;
        while j < nb && values[j] - values[j - 1] < CLUSTER_GAP {
            j += 1;
        }
        let mut cluster: Vec<Vec<f64>> = Vec::with_capacity(j - i);
        for (offset, b) in (i..j).enumerate() {
            let mut v = seed_vector(diag.len(), b as u64 + 1);
            normalize(&mut v);
            let rounds = if offset == 0 { 2 } else { 3 };
            for _ in 0..rounds {
                solve_shifted(diag, off, values[b], &mut v);
                mgs_project(&mut v, &cluster);
                if normalize(&mut v) == 0.0 {
                    // pathological start vector; reseed and continue
                    v = seed_vector(diag.len(), b as u64 + 101);
                    normalize(&mut v);
                }
            }
            mgs_project(&mut v, &cluster);
            normalize(&mut v);
            cluster.push(v);
        }
        vectors.append(&mut cluster);
        i = j;
    }
    (values, vectors, guard)
}

// ---------------------------------------------------------------------------
// Bloch solutions
// ---------------------------------------------------------------------------

fn zone_reduce(k: f64) -> (f64, i64) {
    let zones = (k / 2.0).round() as i64;
    (k - 2.0 * zones as f64, zones)
}

fn solve_raw(spec: &LatticeSpec, k: f64) -> BlochSolution {
    let (kr, zones) = zone_reduce(k);
    let (diag, off) = spec.tridiagonal(kr);
    let (energies, mut vectors, guard_energy) = eigh_lowest(&diag, &off, spec.n_bands);
    // translate plane-wave indices so coefficients refer to exp(i(k+2j)x)
    if zones != 0 {
        let dim = spec.dim();
        for v in vectors.iter_mut() {
            let mut t = vec![0.0; dim];
            for i in 0..dim {
                let src = i as i64 + zones;
                if (0..dim as i64).contains(&src) {
                    t[i] = v[src as usize];
                }
            }
            *v = t;
        }
    }
    BlochSolution {
        k,
        energies,
        coeffs: vectors,
        gauge: GaugeTag {
            seed: SEED_CONVENTION,
            flipped: vec![false; spec.n_bands],
            near_crossing: vec![false; spec.n_bands],
        },
        guard_energy,
        cutoff: spec.cutoff,
    }
}

fn apply_seed_gauge(sol: &mut BlochSolution) {
    for c in sol.coeffs.iter_mut() {
        let mut arg = 0;
        let mut best = 0.0;
        for (i, &v) in c.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                arg = i;
            }
        }
        if c[arg] < 0.0 {
            for v in c.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Solve the Bloch problem at one quasimomentum (any real), with the
/// single-point seed gauge applied.
pub fn solve_bloch(spec: &LatticeSpec, k: f64) -> Result<BlochSolution> {
    if spec.n_bands > spec.dim() {
        return Err(Error::InvalidParam {
            field: "n_bands",
            message: format!("{} bands exceed basis size {}", spec.n_bands, spec.dim()),
        });
    }
    let mut sol = solve_raw(spec, k);
    apply_seed_gauge(&mut sol);
    Ok(sol)
}

/// Minimum distance from band `n` to its neighbours at one point, including
/// the guard band just above the retained set.
fn neighbour_gap(sol: &BlochSolution, n: usize) -> f64 {
    let e = &sol.energies;
    let mut gap = f64::INFINITY;
    if n > 0 {
        gap = gap.min((e[n] - e[n - 1]).abs());
    }
    if n + 1 < e.len() {
        gap = gap.min((e[n + 1] - e[n]).abs());
    } else {
        gap = gap.min((sol.guard_energy - e[n]).abs());
    }
    gap
}

/// Incremental gauge chaining along a k̃ path.
///
/// The first point is seeded by the largest-coefficient-positive rule; each
/// later point flips signs so the same-band overlap with its predecessor is
/// positive. A low same-band overlap is tolerated only where it is the
/// signature of an avoided crossing narrower than the step — either the old
/// character reappears in a neighbouring band, or the local gap is below
/// [`NEAR_CROSSING_GAP`]. Anywhere else it means the path is under-resolved
/// and is an error. One band above the exported set is chained internally
/// so the top exported band still has a crossing partner to test against.
struct ChainWalker {
    spec: LatticeSpec,
    internal: LatticeSpec,
    prev: Option<BlochSolution>,
}

impl ChainWalker {
    fn new(spec: &LatticeSpec) -> Self {
        let internal = LatticeSpec {
            s: spec.s,
            cutoff: spec.cutoff,
            n_bands: (spec.n_bands + 1).min(spec.dim()),
        };
        ChainWalker {
            spec: spec.clone(),
            internal,
            prev: None,
        }
    }

    fn overlap(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    fn step(&mut self, k: f64) -> Result<BlochSolution> {
        let mut sol = solve_raw(&self.internal, k);
        apply_seed_gauge(&mut sol);
        if let Some(prev) = &self.prev {
            for n in 0..self.internal.n_bands {
                let ov = Self::overlap(&prev.coeffs[n], &sol.coeffs[n]);
                if ov.abs() < CHAIN_OVERLAP_MIN && n < self.spec.n_bands {
                    // crossing signature: the old character moved to a
                    // neighbouring band, or the local gap is unresolvably
                    // narrow
                    let mut swapped = false;
                    for m in n.saturating_sub(1)..=(n + 1).min(self.internal.n_bands - 1) {
                        if m != n
                            && Self::overlap(&prev.coeffs[n], &sol.coeffs[m]).abs()
                                > CHAIN_OVERLAP_MIN
                        {
                            swapped = true;
                        }
                    }
                    let gap = neighbour_gap(&sol, n).min(neighbour_gap(prev, n));
                    if !swapped && gap >= NEAR_CROSSING_GAP {
                        return Err(Error::Resolution(format!(
                            "gauge chain under-resolved: band {n} overlap {:.3} between k={:.6} \
                             and k={:.6}; use a finer path grid",
                            ov.abs(),
                            prev.k,
                            sol.k
                        )));
                    }
                    sol.gauge.near_crossing[n] = true;
                }
                if ov < 0.0 {
                    for v in sol.coeffs[n].iter_mut() {
                        *v = -*v;
                    }
                    sol.gauge.flipped[n] = true;
                }
            }
        }
        self.prev = Some(sol.clone());
        // export at the caller's width; the dropped band becomes the guard
        if self.internal.n_bands > self.spec.n_bands {
            sol.guard_energy = sol.energies[self.spec.n_bands];
            sol.energies.truncate(self.spec.n_bands);
            sol.coeffs.truncate(self.spec.n_bands);
            sol.gauge.flipped.truncate(self.spec.n_bands);
            sol.gauge.near_crossing.truncate(self.spec.n_bands);
        }
        Ok(sol)
    }
}

/// Gauge-chained solutions along an ordered path of quasimomenta.
pub fn gauge_chain(spec: &LatticeSpec, path: &[f64]) -> Result<Vec<BlochSolution>> {
    if path.is_empty() {
        return Ok(Vec::new());
    }
    let monotone = path.windows(2).all(|w| w[1] > w[0]) || path.windows(2).all(|w| w[1] < w[0]);
    if !monotone {
        return Err(Error::InvalidParam {
            field: "path",
            message: "gauge chain path must be strictly monotone".into(),
        });
    }
    let mut walker = ChainWalker::new(spec);
    let mut out = Vec::with_capacity(path.len());
    for &k in path {
        out.push(walker.step(k)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Derived band quantities
// ---------------------------------------------------------------------------

/// Signed first-order interband mixing magnitudes `D[n'][n]`.
///
/// The physical mixing parameter of the force-dressed states is purely
/// imaginary for this inversion-symmetric potential; it equals `-i D` with
/// the real `D_{n'n} = 2 F̃ p̃_{n'n} / Ẽ_{n'n}²` returned here. `D[n][n] = 0`.
pub fn delta_parameters(sol: &BlochSolution, f_tilde: f64) -> Result<Vec<Vec<f64>>> {
    let nb = sol.energies.len();
    let p = sol.momentum_elements();
    let mut d = vec![vec![0.0; nb]; nb];
    for n in 0..nb {
        for m in 0..nb {
            if n == m {
                continue;
            }
            let gap = sol.energies[n] - sol.energies[m];
            if gap.abs() < DEGENERACY_TOL {
                return Err(Error::Degeneracy {
                    band_a: m.min(n),
                    band_b: m.max(n),
                    k: sol.k,
                    gap: gap.abs(),
                    tol: DEGENERACY_TOL,
                });
            }
            d[n][m] = 2.0 * f_tilde * p[n][m] / (gap * gap);
        }
    }
    Ok(d)
}

/// Mixing magnitudes of all bands against one reference band only.
///
/// Unlike [`delta_parameters`] this guards only pairs involving `band`, so
/// it stays usable when far bands are quasi-degenerate among themselves.
pub fn delta_column(sol: &BlochSolution, band: usize, f_tilde: f64) -> Result<Vec<f64>> {
    let nb = sol.energies.len();
    let p = sol.momentum_elements();
    let mut d = vec![0.0; nb];
    for n in 0..nb {
        if n == band {
            continue;
        }
        let gap = sol.energies[n] - sol.energies[band];
        if gap.abs() < DEGENERACY_TOL {
            return Err(Error::Degeneracy {
                band_a: band.min(n),
                band_b: band.max(n),
                k: sol.k,
                gap: gap.abs(),
                tol: DEGENERACY_TOL,
            });
        }
        d[n] = 2.0 * f_tilde * p[n][band] / (gap * gap);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassMethod {
    /// Inverse band curvature: `1/m̃* = (1/2) d²Ẽ/dk̃²`.
    Curvature,
    /// Interband sum rule: `1/m̃* = 1 + 4 Σ_{n'≠n} p̃² / Ẽ_{nn'}`.
    SumRule,
}

/// Finite-difference step for curvature stencils.
pub const CURVATURE_STEP: f64 = 1e-3;

/// Band effective mass `m̃*_n(k̃) = m*/m`. May be negative near the zone edge.
pub fn effective_mass(spec: &LatticeSpec, band: usize, k: f64, method: MassMethod) -> Result<f64> {
    if band >= spec.n_bands {
        return Err(Error::InvalidParam {
            field: "band",
            message: format!("band {band} not retained (n_bands = {})", spec.n_bands),
        });
    }
    match method {
        MassMethod::Curvature => {
            let h = CURVATURE_STEP;
            let e = |dk: f64| -> Result<f64> { Ok(solve_bloch(spec, k + dk)?.energies[band]) };
            let d2 = (-e(-2.0 * h)? + 16.0 * e(-h)? - 30.0 * e(0.0)? + 16.0 * e(h)?
                - e(2.0 * h)?)
                / (12.0 * h * h);
            Ok(2.0 / d2)
        }
        MassMethod::SumRule => {
            let sol = solve_bloch(spec, k)?;
            let p = sol.momentum_elements();
            let mut inv = 1.0;
            let mut last_term = 0.0;
            for n in 0..spec.n_bands {
                if n == band {
                    continue;
                }
                let term = 4.0 * p[band][n] * p[band][n] / (sol.energies[band] - sol.energies[n]);
                inv += term;
                last_term = term;
            }
            if last_term.abs() >= 1e-6 {
                return Err(Error::Resolution(format!(
                    "sum-rule tail not converged: outermost band contributes {last_term:.3e}; \
                     retain more bands"
                )));
            }
            Ok(1.0 / inv)
        }
    }
}

/// Reduced mass of a band pair: `1/m̃ʳᵉᵈ = 1/m̃*_a - 1/m̃*_b`.
///
/// Returns `None` when the curvatures coincide and the reduced mass is
/// unbounded.
pub fn reduced_mass(spec: &LatticeSpec, band_a: usize, band_b: usize, k: f64) -> Result<Option<f64>> {
    let ma = effective_mass(spec, band_a, k, MassMethod::Curvature)?;
    let mb = effective_mass(spec, band_b, k, MassMethod::Curvature)?;
    let inv = 1.0 / ma - 1.0 / mb;
    if inv.abs() < 1e-12 {
        return Ok(None);
    }
    Ok(Some(1.0 / inv))
}

// ---------------------------------------------------------------------------
// Dense gauge-chained tabulation
// ---------------------------------------------------------------------------

/// Default tabulation spacing in k̃.
pub const TABLE_SPACING: f64 = 1e-3;

/// Precomputed interpolation weights for one lookup point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    ic: usize,
    cubic: [f64; 4],
    ih: usize,
    hermite: [f64; 4],
}

/// Gauge-consistent band data tabulated on a uniform dense k̃ grid.
///
/// Holds energies, the full momentum-element matrix and the cumulative
/// energy integrals `G_n(k̃) = ∫ Ẽ_n dk̃` used for dynamical phases. All
/// values come from one continuity chain, so products mixing two
/// quasimomenta are gauge-consistent. Lookups interpolate with cubic
/// four-point stencils (Hermite for `G_n`, with `Ẽ_n` as the exact
/// derivative).
#[derive(Debug, Clone)]
pub struct BandTable {
    pub spec: LatticeSpec,
    k0: f64,
    dk: f64,
    n_pts: usize,
    energy: Vec<Vec<f64>>,
    mom: Vec<Vec<f64>>,
    phase: Vec<Vec<f64>>,
}

impl BandTable {
    /// Tabulate `[k_lo, k_hi]` at spacing `dk` (snapped to cover the range).
    pub fn build(spec: &LatticeSpec, k_lo: f64, k_hi: f64, dk: f64) -> Result<Self> {
        if !(k_hi > k_lo) || !(dk > 0.0) {
            return Err(Error::InvalidParam {
                field: "table range",
                message: format!("bad range [{k_lo}, {k_hi}] / spacing {dk}"),
            });
        }
        let n_pts = ((k_hi - k_lo) / dk).ceil() as usize + 1;
        let nb = spec.n_bands;
        let mut energy = vec![vec![0.0; n_pts]; nb];
        let mut mom = vec![vec![0.0; n_pts]; nb * nb];
        let mut phase = vec![vec![0.0; n_pts]; nb];
        let mut walker = ChainWalker::new(spec);
        for i in 0..n_pts {
            let k = k_lo + i as f64 * dk;
            let sol = walker.step(k)?;
            let p = sol.momentum_elements();
            for n in 0..nb {
                energy[n][i] = sol.energies[n];
                for m in 0..nb {
                    mom[n * nb + m][i] = p[n][m];
                }
            }
        }
        for n in 0..nb {
            for i in 1..n_pts {
                phase[n][i] = phase[n][i - 1] + 0.5 * (energy[n][i] + energy[n][i - 1]) * dk;
            }
        }
        Ok(BandTable {
            spec: spec.clone(),
            k0: k_lo,
            dk,
            n_pts,
            energy,
            mom,
            phase,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.k0, self.k0 + (self.n_pts - 1) as f64 * self.dk)
    }

    pub fn contains(&self, k: f64) -> bool {
        let (lo, hi) = self.range();
        k >= lo + self.dk && k <= hi - 2.0 * self.dk
    }

    /// Interpolation stencil at one lookup point: a four-point cubic for
    /// tabulated values and a Hermite interval for the phase integrals.
    pub fn stencil(&self, k: f64) -> Stencil {
        let t = (k - self.k0) / self.dk;
        let (lo, hi) = self.range();
        assert!(
            k >= lo && k <= hi,
            "band table lookup at k={k} outside tabulated range [{lo}, {hi}]"
        );
        let ic = (t.floor() as usize).clamp(1, self.n_pts - 3);
        let u = t - ic as f64;
        let cubic = [
            -u * (u - 1.0) * (u - 2.0) / 6.0,
            (u * u - 1.0) * (u - 2.0) / 2.0,
            -u * (u + 1.0) * (u - 2.0) / 2.0,
            u * (u * u - 1.0) / 6.0,
        ];
        let ih = (t.floor() as usize).min(self.n_pts - 2);
        let v = t - ih as f64;
        let v2 = v * v;
        let v3 = v2 * v;
        let hermite = [
            2.0 * v3 - 3.0 * v2 + 1.0,
            v3 - 2.0 * v2 + v,
            -2.0 * v3 + 3.0 * v2,
            v3 - v2,
        ];
        Stencil {
            ic,
            cubic,
            ih,
            hermite,
        }
    }

    /// Band energy `Ẽ_n(k̃)` at a stencil.
    pub fn energy_st(&self, st: &Stencil, band: usize) -> f64 {
        let v = &self.energy[band];
        st.cubic[0] * v[st.ic - 1]
            + st.cubic[1] * v[st.ic]
            + st.cubic[2] * v[st.ic + 1]
            + st.cubic[3] * v[st.ic + 2]
    }

    /// Momentum element `p̃_{ab}(k̃)` at a stencil, from the chained gauge.
    pub fn momentum_st(&self, st: &Stencil, a: usize, b: usize) -> f64 {
        let v = &self.mom[a * self.spec.n_bands + b];
        st.cubic[0] * v[st.ic - 1]
            + st.cubic[1] * v[st.ic]
            + st.cubic[2] * v[st.ic + 1]
            + st.cubic[3] * v[st.ic + 2]
    }

    /// Cumulative integral `G_n(k̃) = ∫_{k₀}^{k̃} Ẽ_n du` at a stencil
    /// (Hermite with Ẽ_n as the exact derivative, C¹).
    pub fn phase_st(&self, st: &Stencil, band: usize) -> f64 {
        let g = &self.phase[band];
        let e = &self.energy[band];
        st.hermite[0] * g[st.ih]
            + st.hermite[1] * e[st.ih] * self.dk
            + st.hermite[2] * g[st.ih + 1]
            + st.hermite[3] * e[st.ih + 1] * self.dk
    }

    /// Band energy `Ẽ_n(k̃)`.
    pub fn energy(&self, band: usize, k: f64) -> f64 {
        self.energy_st(&self.stencil(k), band)
    }

    /// Momentum element `p̃_{ab}(k̃)` from the chained gauge.
    pub fn momentum(&self, a: usize, b: usize, k: f64) -> f64 {
        self.momentum_st(&self.stencil(k), a, b)
    }

    /// Cumulative integral `G_n(k̃) = ∫_{k₀}^{k̃} Ẽ_n du`.
    pub fn phase_integral(&self, band: usize, k: f64) -> f64 {
        self.phase_st(&self.stencil(k), band)
    }

    /// Sum-rule inverse effective mass of `band` over all retained bands,
    /// evaluated from the tabulated elements. Using the same table for this
    /// and for the oscillating interband sum makes the bare-mass onset an
    /// algebraic identity at `t̃ = 0`.
    pub fn inv_mass_sumrule(&self, band: usize, k: f64) -> f64 {
        let mut inv = 1.0;
        for n in 0..self.spec.n_bands {
            if n == band {
                continue;
            }
            let p = self.momentum(band, n, k);
            inv += 4.0 * p * p / (self.energy(band, k) - self.energy(n, k));
        }
        inv
    }

    /// Minimum tabulated gap between `band` and any other retained band.
    pub fn min_gap_to(&self, band: usize) -> (f64, usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX, 0.0);
        for n in 0..self.spec.n_bands {
            if n == band {
                continue;
            }
            for i in 0..self.n_pts {
                let gap = (self.energy[n][i] - self.energy[band][i]).abs();
                if gap < best.0 {
                    best = (gap, n, self.k0 + i as f64 * self.dk);
                }
            }
        }
        best
    }
}
