//! Command-line frontend: run presets or config files through the engines,
//! dump band structure, and compare emitted series.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! failure.

use clap::{Parser, Subcommand};
use effmass::bands::{self, LatticeSpec};
use effmass::firstorder::{self, DriveSpec, FirstOrderEngine, WavepacketSpec};
use effmass::scenario::{self, RunConfig, ScaledParams, SolverOverrides};
use effmass::splitstep::{self, RunOptions, SimGrid};
use effmass::timeseries::{self, fmt_float, read_csv, TimeSeries};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "effmass",
    about = "Transient wavepacket response in a 1D optical lattice",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the scenario preset catalog.
    Presets,
    /// Emit a band-structure CSV (columns k_scaled, E_0..E_{n-1}).
    Bands {
        /// Potential depth s.
        #[arg(long, default_value_t = 10.0)]
        s: f64,
        /// Number of bands to emit.
        #[arg(long, default_value_t = 4)]
        bands: usize,
        #[arg(long, default_value_t = -1.0)]
        k_min: f64,
        #[arg(long, default_value_t = 1.0)]
        k_max: f64,
        #[arg(long, default_value_t = 401)]
        points: usize,
        /// Output path (default: bands-s<em>.csv in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario and emit one CSV per engine plus a summary.
    Run {
        /// Preset name (see `presets`); alternative to --config.
        preset: Option<String>,
        /// Line-oriented key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated subset of {firstorder, splitstep, baseline}.
        #[arg(long, default_value = "firstorder,splitstep,baseline")]
        engines: String,
        /// Output directory (default: $EFFMASS_OUT_DIR or `.`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record per-band populations.
        #[arg(long)]
        populations: bool,
        /// Override the number of lattice cells in the split-step box.
        #[arg(long)]
        grid_cells: Option<usize>,
        /// Override the spatial points per lattice cell.
        #[arg(long)]
        pts_per_cell: Option<usize>,
        /// Override the split-step time step (scaled units).
        #[arg(long)]
        dt: Option<f64>,
        /// Override the run length in Bloch periods.
        #[arg(long)]
        duration: Option<f64>,
        /// Also emit a gnuplot script for the velocity traces.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Compare the velocity/acceleration traces of two series CSVs.
    Compare {
        file_a: PathBuf,
        file_b: PathBuf,
        /// Linearly resample the second file onto the first file's grid.
        #[arg(long)]
        resample: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Presets => cmd_presets(),
        Command::Bands {
            s,
            bands,
            k_min,
            k_max,
            points,
            out,
        } => cmd_bands(s, bands, k_min, k_max, points, out),
        Command::Run {
            preset,
            config,
            engines,
            out,
            populations,
            grid_cells,
            pts_per_cell,
            dt,
            duration,
            gnuplot,
        } => cmd_run(RunRequest {
            preset,
            config,
            engines,
            out,
            populations,
            grid_cells,
            pts_per_cell,
            dt,
            duration,
            gnuplot,
        }),
        Command::Compare {
            file_a,
            file_b,
            resample,
        } => cmd_compare(&file_a, &file_b, resample),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// CLI-level error with an exit-code category.
#[derive(Debug)]
enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<effmass::Error> for CliError {
    fn from(e: effmass::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("EFFMASS_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_presets() -> CliResult {
    for name in scenario::PRESET_NAMES {
        let p = scenario::preset(name).map_err(CliError::from)?;
        let sp = scenario::scale(&p).map_err(CliError::from)?;
        println!(
            "{name:18} s={:<5} b={:>6.1} nm  accel={:.4e} m/s²  band={}  sigma={:<6} F~={:.4}",
            p.potential_strength,
            p.lattice_constant * 1e9,
            p.lattice_acceleration,
            p.initial_band,
            p.sigma,
            sp.f_tilde,
        );
    }
    Ok(())
}

fn cmd_bands(
    s: f64,
    n_bands: usize,
    k_min: f64,
    k_max: f64,
    points: usize,
    out: Option<PathBuf>,
) -> CliResult {
    if points < 2 || !(k_max > k_min) {
        return Err(CliError::Config(format!(
            "need at least 2 points and k_max > k_min, got {points} over [{k_min}, {k_max}]"
        )));
    }
    let spec = LatticeSpec::new(s, n_bands.max(1)).map_err(CliError::from)?;
    let path = out.unwrap_or_else(|| out_dir(None).join(format!("bands-s{s}.csv")));
    let file = fs::File::create(&path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# s = {s}")?;
    writeln!(w, "# n_bands = {n_bands}")?;
    let mut header = String::from("k_scaled");
    for n in 0..n_bands {
        header.push_str(&format!(",E_{n}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..points {
        let k = k_min + (k_max - k_min) * i as f64 / (points - 1) as f64;
        let sol = bands::solve_bloch(&spec, k).map_err(CliError::from)?;
        let mut line = fmt_float(k);
        for n in 0..n_bands {
            line.push(',');
            line.push_str(&fmt_float(sol.energies[n]));
        }
        writeln!(w, "{line}")?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

struct RunRequest {
    preset: Option<String>,
    config: Option<PathBuf>,
    engines: String,
    out: Option<PathBuf>,
    populations: bool,
    grid_cells: Option<usize>,
    pts_per_cell: Option<usize>,
    dt: Option<f64>,
    duration: Option<f64>,
    gnuplot: bool,
}

fn resolve_scenario(req: &RunRequest) -> Result<(String, RunConfig), CliError> {
    match (&req.preset, &req.config) {
        (Some(name), None) => {
            let physical = scenario::preset(name).map_err(CliError::from)?;
            Ok((
                name.clone(),
                RunConfig {
                    physical,
                    solver: SolverOverrides::default(),
                },
            ))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let cfg = scenario::load_config(&text).map_err(CliError::from)?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "config".into());
            Ok((label, cfg))
        }
        _ => Err(CliError::Config(
            "provide exactly one scenario source: a preset name or --config".into(),
        )),
    }
}

fn cmd_run(req: RunRequest) -> CliResult {
    let (label, mut cfg) = resolve_scenario(&req)?;
    if let Some(d) = req.duration {
        cfg.physical.duration = d;
    }
    if req.grid_cells.is_some() {
        cfg.solver.grid_cells = req.grid_cells;
    }
    if req.pts_per_cell.is_some() {
        cfg.solver.pts_per_cell = req.pts_per_cell;
    }
    if req.dt.is_some() {
        cfg.solver.dt = req.dt;
    }
    let engines: Vec<&str> = req.engines.split(',').map(str::trim).collect();
    for e in &engines {
        if !matches!(*e, "firstorder" | "splitstep" | "baseline") {
            return Err(CliError::Config(format!(
                "unknown engine `{e}`; expected firstorder, splitstep or baseline"
            )));
        }
    }
    if engines.is_empty() {
        return Err(CliError::Config("at least one engine required".into()));
    }

    let scaled = scenario::scale(&cfg.physical).map_err(CliError::from)?;
    if scaled.f_tilde == 0.0 {
        return Err(CliError::Config(
            "zero lattice acceleration: nothing to drive (F~ = 0)".into(),
        ));
    }
    let lattice = LatticeSpec::new(cfg.physical.potential_strength, bands::DEFAULT_BANDS)
        .map_err(CliError::from)?;
    let packet = WavepacketSpec::new(cfg.physical.initial_band, cfg.physical.sigma)
        .map_err(CliError::from)?;
    let drive =
        DriveSpec::new(scaled.f_tilde, cfg.physical.duration).map_err(CliError::from)?;

    println!("# resolved configuration");
    print!("{}", cfg.echo());

    let dir = out_dir(req.out);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    // split-step first (when requested) so every engine shares its time grid
    let mut series: Vec<(String, TimeSeries)> = Vec::new();
    let mut shared_times: Option<Vec<f64>> = None;
    if engines.contains(&"splitstep") {
        let grid = SimGrid::with_overrides(
            packet.sigma,
            cfg.solver.grid_cells,
            cfg.solver.pts_per_cell,
            cfg.solver.dt,
        )
        .map_err(CliError::from)?;
        let opts = RunOptions {
            populations: req.populations,
            ..Default::default()
        };
        let ts = splitstep::run(&lattice, &packet, &drive, grid, &opts).map_err(CliError::from)?;
        shared_times = Some(ts.t.clone());
        series.push(("splitstep".into(), ts));
    }
    if engines.contains(&"firstorder") || engines.contains(&"baseline") {
        let engine = FirstOrderEngine::new(lattice.clone(), packet.clone(), drive.clone())
            .map_err(CliError::from)?;
        let times = match &shared_times {
            Some(t) => t.clone(),
            None => engine.default_times().map_err(CliError::from)?,
        };
        if engines.contains(&"firstorder") {
            let ts = engine
                .series_at(&times, req.populations)
                .map_err(CliError::from)?;
            series.push(("firstorder".into(), ts));
        }
        if engines.contains(&"baseline") {
            let ts = engine.baseline_series_at(&times).map_err(CliError::from)?;
            series.push(("baseline".into(), ts));
        }
    }

    // emit CSVs with the scenario echo in the metadata
    let mut csv_paths = Vec::new();
    for (engine, ts) in series.iter_mut() {
        let mut meta = vec![("scenario".to_string(), label.clone())];
        for line in cfg.echo().lines() {
            if let Some((k, v)) = line.split_once('=') {
                meta.push((format!("config_{}", k.trim()), v.trim().to_string()));
            }
        }
        meta.push(("time_unit_s".to_string(), format!("{:e}", scaled.time_unit)));
        meta.push((
            "recoil_velocity_m_per_s".to_string(),
            format!("{:e}", scaled.recoil_velocity),
        ));
        meta.append(&mut ts.metadata);
        ts.metadata = meta;
        let path = dir.join(format!("{label}-{engine}.csv"));
        let file = fs::File::create(&path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        ts.write_csv(&mut w)?;
        w.flush()?;
        println!("wrote {}", path.display());
        csv_paths.push((engine.clone(), path));
    }

    let summary = summarize(&label, &scaled, &lattice, &packet, &series)?;
    print!("{summary}");
    let sum_path = dir.join(format!("{label}-summary.txt"));
    fs::write(&sum_path, &summary)
        .map_err(|e| CliError::Io(format!("{}: {e}", sum_path.display())))?;
    println!("wrote {}", sum_path.display());

    if req.gnuplot {
        let gp_path = dir.join(format!("{label}.gp"));
        let mut gp = String::new();
        gp.push_str("set datafile separator ','\n");
        gp.push_str("set xlabel 't (scaled)'\nset ylabel 'v / v_R'\nset key left top\n");
        gp.push_str("plot ");
        let plots: Vec<String> = csv_paths
            .iter()
            .map(|(engine, p)| {
                format!(
                    "'{}' using 1:4 with lines title '{engine}'",
                    p.file_name().unwrap().to_string_lossy()
                )
            })
            .collect();
        gp.push_str(&plots.join(", \\\n     "));
        gp.push('\n');
        fs::write(&gp_path, gp).map_err(|e| CliError::Io(format!("{}: {e}", gp_path.display())))?;
        println!("wrote {}", gp_path.display());
    }
    Ok(())
}

fn summarize(
    label: &str,
    scaled: &ScaledParams,
    lattice: &LatticeSpec,
    packet: &WavepacketSpec,
    series: &[(String, TimeSeries)],
) -> Result<String, CliError> {
    let ts = firstorder::timescales(lattice, packet, scaled.f_tilde).map_err(CliError::from)?;
    let mut out = String::new();
    out.push_str(&format!("# summary: {label}\n"));
    out.push_str(&format!("F_tilde = {:.6}\n", scaled.f_tilde));
    if let Some(tb) = scaled.bloch_period {
        out.push_str(&format!("tau_bloch_s = {tb:.6e}\n"));
    }
    out.push_str(&format!("nbar = {}\n", ts.nbar));
    out.push_str(&format!("gap_scaled = {:.6}\n", ts.gap));
    out.push_str(&format!(
        "tau_osc_s = {:.6e}\n",
        ts.tau_osc * scaled.time_unit
    ));
    if let Some(r) = ts.ratio_osc {
        out.push_str(&format!("tau_osc_over_tau_bloch = {r:.6}\n"));
    }
    if let Some(td) = ts.tau_decay {
        out.push_str(&format!("tau_decay_s = {:.6e}\n", td * scaled.time_unit));
    }
    if let Some(r) = ts.ratio_decay {
        out.push_str(&format!("tau_decay_over_tau_bloch = {r:.6}\n"));
    }
    for (engine, s) in series {
        let max_dev = s
            .vel
            .iter()
            .zip(s.vel_baseline.iter())
            .fold(0.0_f64, |acc, (v, b)| acc.max((v - b).abs()));
        out.push_str(&format!("{engine}.max_v_deviation_over_vR = {max_dev:.6e}\n"));
        if let Some(pops) = &s.populations {
            let band = packet.band;
            let mut max_leak = 0.0_f64;
            for i in 0..s.t.len() {
                let leak: f64 = pops
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| *b != band)
                    .map(|(_, p)| p[i])
                    .sum();
                max_leak = max_leak.max(leak);
            }
            out.push_str(&format!("{engine}.max_population_leakage = {max_leak:.6e}\n"));
        }
    }
    Ok(out)
}

fn cmd_compare(file_a: &Path, file_b: &Path, resample: bool) -> CliResult {
    let open = |p: &Path| -> Result<timeseries::CsvTable, CliError> {
        let f = fs::File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        read_csv(BufReader::new(f)).map_err(CliError::from)
    };
    let a = open(file_a)?;
    let b = open(file_b)?;
    let need = |t: &timeseries::CsvTable, col: &str, p: &Path| -> Result<Vec<f64>, CliError> {
        t.column(col)
            .map(|c| c.to_vec())
            .ok_or_else(|| CliError::Config(format!("{} lacks column {col}", p.display())))
    };
    let ta = need(&a, "t_scaled", file_a)?;
    let tb = need(&b, "t_scaled", file_b)?;
    let va = need(&a, "v_scaled", file_a)?;
    let aa = need(&a, "a_scaled", file_a)?;
    let mut vb = need(&b, "v_scaled", file_b)?;
    let mut ab = need(&b, "a_scaled", file_b)?;

    let f_a = a.meta_f64("F_tilde");
    let f_b = b.meta_f64("F_tilde");
    if let (Some(x), Some(y)) = (f_a, f_b) {
        if (x - y).abs() > 1e-12 * x.abs().max(1.0) {
            return Err(CliError::Config(format!(
                "files describe different drives: F_tilde {x} vs {y}"
            )));
        }
    }

    let grids_match =
        ta.len() == tb.len() && ta.iter().zip(tb.iter()).all(|(x, y)| (x - y).abs() < 1e-12);
    if !grids_match {
        if !resample {
            return Err(CliError::Config(
                "time grids differ; pass --resample to interpolate".into(),
            ));
        }
        vb = interp_onto(&ta, &tb, &vb);
        ab = interp_onto(&ta, &tb, &ab);
    }

    let (mut max_dv, mut rms_dv, mut max_da, mut rms_da) = (0.0_f64, 0.0, 0.0_f64, 0.0);
    let mut dev = Vec::with_capacity(ta.len());
    let mut n_used = 0usize;
    for i in 0..ta.len() {
        if vb[i].is_nan() {
            continue;
        }
        let dv = va[i] - vb[i];
        let da = aa[i] - ab[i];
        max_dv = max_dv.max(dv.abs());
        rms_dv += dv * dv;
        max_da = max_da.max(da.abs());
        rms_da += da * da;
        dev.push(dv);
        n_used += 1;
    }
    if n_used == 0 {
        return Err(CliError::Config("no overlapping samples".into()));
    }
    rms_dv = (rms_dv / n_used as f64).sqrt();
    rms_da = (rms_da / n_used as f64).sqrt();
    let f_ref = f_a.or(f_b).unwrap_or(1.0);

    println!("samples_compared = {n_used}");
    println!("max_dv_over_vR = {max_dv:.6e}");
    println!("rms_dv_over_vR = {rms_dv:.6e}");
    println!("max_da_over_F = {:.6e}", max_da / f_ref);
    println!("rms_da_over_F = {:.6e}", rms_da / f_ref);
    if n_used >= 8 {
        let dt = ta[1] - ta[0];
        let (freq, bin) = timeseries::dominant_frequency(&dev[..n_used], dt);
        println!("deviation_dominant_freq = {freq:.6e}");
        println!("deviation_freq_bin = {bin:.6e}");
    }
    Ok(())
}

/// Linear interpolation of `(ts, ys)` onto `target`; NaN outside the range.
fn interp_onto(target: &[f64], ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(target.len());
    for &t in target {
        if t < ts[0] || t > ts[ts.len() - 1] {
            out.push(f64::NAN);
            continue;
        }
        let idx = ts.partition_point(|&x| x <= t).min(ts.len() - 1).max(1);
        let (t0, t1) = (ts[idx - 1], ts[idx]);
        let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        out.push(ys[idx - 1] * (1.0 - f) + ys[idx] * f);
    }
    out
}
