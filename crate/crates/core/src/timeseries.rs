//! Sampled observable series, CSV emission and small analysis helpers.
//!
//! Both engines emit the same [`TimeSeries`] shape so traces can be compared
//! directly. CSV output is deterministic: floats are printed with 17
//! significant digits (round-trip safe), metadata lives in `# key = value`
//! comment lines, and the data body carries no timestamps.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

/// Which engine produced a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FirstOrder,
    FullNumeric,
    EffectiveMassBaseline,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::FirstOrder => "first-order",
            Provenance::FullNumeric => "full-numeric",
            Provenance::EffectiveMassBaseline => "effective-mass-baseline",
        }
    }
}

/// Sampled response of one run, in scaled units throughout.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub provenance: Provenance,
    /// Scaled sample times t̃.
    pub t: Vec<f64>,
    /// ⟨ã(t̃)⟩.
    pub accel: Vec<f64>,
    /// ⟨ṽ(t̃)⟩ = v/v_R.
    pub vel: Vec<f64>,
    /// Usual-effective-mass prediction for ⟨ã⟩.
    pub accel_baseline: Vec<f64>,
    /// Usual-effective-mass prediction for ⟨ṽ⟩.
    pub vel_baseline: Vec<f64>,
    /// m*(t)/m = F̃/⟨ã⟩; `None` where |⟨ã⟩| < 10⁻³·F̃.
    pub mstar: Vec<Option<f64>>,
    /// Per-band populations `populations[band][sample]`, if requested.
    pub populations: Option<Vec<Vec<f64>>>,
    /// `key = value` pairs echoed into the CSV header (scenario echo,
    /// grid/gate records, ...). Order is preserved.
    pub metadata: Vec<(String, String)>,
}

/// 17-significant-digit float formatting (round-trip safe).
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

impl TimeSeries {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta(key).and_then(|v| v.parse().ok())
    }

    /// Emit the series as CSV.
    ///
    /// Columns: `t_scaled, t_SI, a_scaled, v_scaled, v_over_vR, a_baseline,
    /// v_baseline, mstar_over_m, pop_0..`. `v_scaled` is already the
    /// velocity in recoil units, so `v_over_vR` repeats it; both columns are
    /// kept for schema stability. Suppressed m*(t) samples print `nan`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "# provenance = {}", self.provenance.label())?;
        for (k, v) in &self.metadata {
            writeln!(w, "# {k} = {v}")?;
        }
        let time_unit = self.meta_f64("time_unit_s").unwrap_or(f64::NAN);
        let n_pop = self.populations.as_ref().map_or(0, |p| p.len());
        let mut header = String::from(
            "t_scaled,t_SI,a_scaled,v_scaled,v_over_vR,a_baseline,v_baseline,mstar_over_m",
        );
        for b in 0..n_pop {
            header.push_str(&format!(",pop_{b}"));
        }
        writeln!(w, "{header}")?;
        for i in 0..self.t.len() {
            let mstar = self.mstar[i].unwrap_or(f64::NAN);
            let mut line = format!(
                "{},{},{},{},{},{},{},{}",
                fmt_float(self.t[i]),
                fmt_float(self.t[i] * time_unit),
                fmt_float(self.accel[i]),
                fmt_float(self.vel[i]),
                fmt_float(self.vel[i]),
                fmt_float(self.accel_baseline[i]),
                fmt_float(self.vel_baseline[i]),
                fmt_float(mstar),
            );
            if let Some(pops) = &self.populations {
                for band in pops {
                    line.push_str(&format!(",{}", fmt_float(band[i])));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// A CSV file read back: metadata plus named columns.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub metadata: BTreeMap<String, String>,
    pub columns: Vec<String>,
    /// `data[column][row]`.
    pub data: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.data[i].as_slice())
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).and_then(|v| v.parse().ok())
    }
}

/// Parse a CSV produced by [`TimeSeries::write_csv`] (or the band-structure
/// dump, which shares the comment-header convention).
pub fn read_csv<R: BufRead>(r: R) -> Result<CsvTable> {
    let mut metadata = BTreeMap::new();
    let mut columns: Vec<String> = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Numerical(format!("csv read: {e}")))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if columns.is_empty() {
            columns = line.split(',').map(|s| s.trim().to_string()).collect();
            data = vec![Vec::new(); columns.len()];
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::ConfigParse {
                line: lineno + 1,
                message: format!(
                    "expected {} fields, found {}",
                    columns.len(),
                    fields.len()
                ),
            });
        }
        for (i, f) in fields.iter().enumerate() {
            let v = if f.trim() == "nan" {
                f64::NAN
            } else {
                f.trim().parse::<f64>().map_err(|_| Error::ConfigParse {
                    line: lineno + 1,
                    message: format!("bad float `{f}`"),
                })?
            };
            data[i].push(v);
        }
    }
    if columns.is_empty() {
        return Err(Error::ConfigParse {
            line: 0,
            message: "empty csv".into(),
        });
    }
    Ok(CsvTable {
        metadata,
        columns,
        data,
    })
}

/// Dominant frequency (cycles per unit of `dt`'s time) of a uniformly
/// sampled real signal, mean removed. Returns `(frequency, bin_width)`.
pub fn dominant_frequency(samples: &[f64], dt: f64) -> (f64, f64) {
    let n = samples.len();
    assert!(n >= 4, "need at least 4 samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = samples
        .iter()
        .map(|&x| Complex64::new(x - mean, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    fft.process(&mut buf);
    let mut best_bin = 1;
    let mut best_mag = 0.0;
    for (i, c) in buf.iter().enumerate().take(n / 2).skip(1) {
        let m = c.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best_bin = i;
        }
    }
    let bin_width = 1.0 / (n as f64 * dt);
    (best_bin as f64 * bin_width, bin_width)
}

/// Largest |x| over samples whose time lies in `[t0, t1]`.
pub fn window_amplitude(t: &[f64], x: &[f64], t0: f64, t1: f64) -> f64 {
    t.iter()
        .zip(x.iter())
        .filter(|(&ti, _)| ti >= t0 && ti <= t1)
        .fold(0.0_f64, |acc, (_, &v)| acc.max(v.abs()))
}

/// Trapezoid cumulative integral of `y` over `t`, starting at zero.
pub fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..t.len() {
        acc += 0.5 * (y[i] + y[i - 1]) * (t[i] - t[i - 1]);
        out.push(acc);
    }
    out
}
