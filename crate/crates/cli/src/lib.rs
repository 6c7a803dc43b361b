//! Command line front end: scenario runs, the experiment suite, filter
//! design, model fitting from measured tables, and stream analysis. Library
//! form so integration tests can drive the same entry points.

pub mod error;
pub mod experiments;
pub mod io;
pub mod scenario;
pub mod waveform;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use error::Result;
use experiments::ExperimentContext;
use rfemu_core::analysis::{matched_filter, periodogram};
use rfemu_core::emucore::{self, EngineConfig, EngineKind};
use rfemu_core::fdelay::{design, measure, FilterMethod};
use rfemu_core::geom::{Angle, Vec3};
use rfemu_core::scatter::{bilinear_fit_bistatic, omp_fit_monostatic, MonostaticTable};
use rfemu_core::sphharm::{fit_antenna_table, GainTable, ShBasisSpec};

#[derive(Parser)]
#[command(name = "rfemu", about = "Digital RF channel emulator", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Tdl,
    Direct,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> EngineKind {
        match e {
            EngineArg::Tdl => EngineKind::Tdl,
            EngineArg::Direct => EngineKind::Direct,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Spline,
    Legendre,
}

impl From<MethodArg> for FilterMethod {
    fn from(m: MethodArg) -> FilterMethod {
        match m {
            MethodArg::Spline => FilterMethod::Spline,
            MethodArg::Legendre => FilterMethod::Legendre,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScatterModeArg {
    Monostatic,
    Bistatic,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write one stream per receiver
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "direct")]
        engine: EngineArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment and grade it against its thresholds
    Experiment {
        /// One of: interferometry, beamsweep, complexscatter, swerling,
        /// filtertable, opcount
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Multiplies the experiment's sample rates; each experiment
        /// documents what co-scales to keep its dimensionless ratios
        #[arg(long = "fs-scale", default_value_t = 1.0)]
        fs_scale: f64,
    },
    /// Design a fractional-delay kernel and report its band metrics
    DesignFilter {
        #[arg(long, value_enum, default_value = "legendre")]
        method: MethodArg,
        #[arg(long, default_value_t = 8)]
        taps: usize,
        #[arg(long = "oversample-pct", default_value_t = 25)]
        oversample_pct: u32,
        /// Sample rate the delay metric is reported at
        #[arg(long = "fs-hz", default_value_t = 2.5e9)]
        fs_hz: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a separable antenna model to a measured gain table
    FitAntenna {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Destination for the fitted antenna file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a scatter profile from a monostatic table or bistatic samples
    FitScatter {
        #[arg(long, value_enum)]
        mode: ScatterModeArg,
        /// Monostatic table file or bistatic samples file
        #[arg(long)]
        table: PathBuf,
        /// Candidate locations file (monostatic mode)
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Points to recover (monostatic mode)
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        order: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        /// Destination for the fitted profile file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Periodogram and optional matched filter over a recorded stream
    Analyze {
        #[arg(long)]
        input: PathBuf,
        /// Stream whose samples serve as the matched-filter template
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Run { scenario, engine, out } => cmd_run(&scenario, engine.into(), out.as_deref()),
        Cmd::Experiment { name, out, seed, fs_scale } => {
            let ctx = ExperimentContext { out_dir: out, seed, fs_scale };
            let outcome = experiments::run_by_name(&name, &ctx)?;
            print!("{}", outcome.render());
            Ok(if outcome.pass { 0 } else { 1 })
        }
        Cmd::DesignFilter { method, taps, oversample_pct, fs_hz, out } => {
            cmd_design_filter(method.into(), taps, oversample_pct, fs_hz, out.as_deref())
        }
        Cmd::FitAntenna { table, rank, order, seed, out } => {
            cmd_fit_antenna(&table, rank, order, seed, out.as_deref())
        }
        Cmd::FitScatter { mode, table, grid, points, order, iters, out } => {
            cmd_fit_scatter(mode, &table, grid.as_deref(), points, order, iters, out.as_deref())
        }
        Cmd::Analyze { input, template, out } => cmd_analyze(&input, template.as_deref(), &out),
    }
}

fn cmd_run(path: &Path, kind: EngineKind, out: Option<&Path>) -> Result<i32> {
    let scn = scenario::parse_scenario(path)?;
    let output = emucore::run(&scn, kind, &EngineConfig::default())?;
    println!(
        "{} nodes, {:.0} samples, {:?} engine: {:.3e} ops/sample ({} total)",
        scn.nodes.len(),
        scn.duration_s * scn.fs,
        kind,
        output.ops.per_sample_ops,
        output.ops.total_ops,
    );
    println!("convention: {}", output.ops.convention);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        for (node, data) in scn.nodes.iter().zip(&output.receivers) {
            let header = io::StreamHeader {
                fs_hz: scn.fs,
                fc_hz: scn.fc,
                start_time_s: 0.0,
                node_id: node.id.clone(),
            };
            let path = io::write_stream(dir, &header, data)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn cmd_design_filter(
    method: FilterMethod,
    taps: usize,
    oversample_pct: u32,
    fs_hz: f64,
    out: Option<&Path>,
) -> Result<i32> {
    let metrics = measure(method, taps, oversample_pct, 64, fs_hz)?;
    println!(
        "{method} {taps}-tap at {oversample_pct}% oversampling: \
         worst group-delay deviation {:.3} ns at {fs_hz:.3e} Hz, amplitude spread {:.3}",
        metrics.delay_accuracy_ns, metrics.amplitude_ripple
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let settings = 16;
        let rows: Vec<Vec<f64>> = (0..settings)
            .map(|i| {
                let mu = i as f64 / settings as f64;
                let mut row = vec![mu];
                row.extend(design(method, taps, mu).expect("supported tap count").taps);
                row
            })
            .collect();
        let mut columns = vec!["mu".to_string()];
        columns.extend((0..taps).map(|i| format!("tap{i}")));
        let names: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
        io::write_csv(&dir.join("filter_taps.csv"), &names, &rows)?;
    }
    Ok(0)
}

/// Angles as [azimuth_deg, polar_deg]; complex values as [re, im].
#[derive(Serialize, Deserialize)]
struct GainTableFile {
    steer_grid: Vec<[f64; 2]>,
    field_grid: Vec<[f64; 2]>,
    values: Vec<Vec<[f64; 2]>>,
}

fn cmd_fit_antenna(
    table_path: &Path,
    rank: usize,
    order: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<i32> {
    let text = std::fs::read_to_string(table_path)
        .map_err(|_| error::CliError::MissingRef(table_path.to_path_buf()))?;
    let file: GainTableFile = serde_json::from_str(&text)
        .map_err(|e| error::schema(table_path.display().to_string(), e.to_string()))?;
    let table = GainTable {
        steer_grid: file.steer_grid.iter().map(|a| Angle::new(a[0], a[1])).collect(),
        field_grid: file.field_grid.iter().map(|a| Angle::new(a[0], a[1])).collect(),
        values: file
            .values
            .iter()
            .map(|row| row.iter().map(|v| Complex64::new(v[0], v[1])).collect())
            .collect(),
    };
    let fit = fit_antenna_table(&table, rank, ShBasisSpec::new(order)?, None, seed)?;
    println!(
        "rank-{rank} order-{order} fit: train NMSE {:.3e}, held-out NMSE {:.3e}",
        fit.train_nmse, fit.test_nmse
    );
    if let Some(path) = out {
        scenario::save_antenna(path, &fit.model)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

/// Monostatic sweep: values[fi][ai] at frequencies[fi], angles[ai].
#[derive(Serialize, Deserialize)]
struct MonostaticFile {
    frequencies: Vec<f64>,
    angles: Vec<[f64; 2]>,
    values: Vec<Vec<[f64; 2]>>,
}

/// Bistatic samples at known candidate locations.
#[derive(Serialize, Deserialize)]
struct BistaticFile {
    locations: Vec<[f64; 3]>,
    /// [az_in, pol_in, az_out, pol_out, freq_hz, re, im]
    samples: Vec<[f64; 7]>,
}

fn cmd_fit_scatter(
    mode: ScatterModeArg,
    table_path: &Path,
    grid: Option<&Path>,
    points: usize,
    order: usize,
    iters: usize,
    out: Option<&Path>,
) -> Result<i32> {
    let text = std::fs::read_to_string(table_path)
        .map_err(|_| error::CliError::MissingRef(table_path.to_path_buf()))?;
    let spec = ShBasisSpec::new(order)?;
    let profile = match mode {
        ScatterModeArg::Monostatic => {
            let file: MonostaticFile = serde_json::from_str(&text)
                .map_err(|e| error::schema(table_path.display().to_string(), e.to_string()))?;
            let grid_path = grid.ok_or_else(|| {
                error::schema("--grid", "monostatic fitting needs a candidate location file")
            })?;
            let gtext = std::fs::read_to_string(grid_path)
                .map_err(|_| error::CliError::MissingRef(grid_path.to_path_buf()))?;
            let locs: Vec<[f64; 3]> = serde_json::from_str(&gtext)
                .map_err(|e| error::schema(grid_path.display().to_string(), e.to_string()))?;
            let table = MonostaticTable {
                frequencies: file.frequencies,
                angles: file.angles.iter().map(|a| Angle::new(a[0], a[1])).collect(),
                values: file
                    .values
                    .iter()
                    .map(|row| row.iter().map(|v| Complex64::new(v[0], v[1])).collect())
                    .collect(),
            };
            let grid: Vec<Vec3> = locs.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
            omp_fit_monostatic(&table, &grid, points, spec)?
        }
        ScatterModeArg::Bistatic => {
            let file: BistaticFile = serde_json::from_str(&text)
                .map_err(|e| error::schema(table_path.display().to_string(), e.to_string()))?;
            let locations: Vec<Vec3> =
                file.locations.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
            let samples: Vec<(Angle, Angle, f64, Complex64)> = file
                .samples
                .iter()
                .map(|s| {
                    (
                        Angle::new(s[0], s[1]),
                        Angle::new(s[2], s[3]),
                        s[4],
                        Complex64::new(s[5], s[6]),
                    )
                })
                .collect();
            bilinear_fit_bistatic(&samples, &locations, spec, iters)?
        }
    };
    println!("fitted {} scatter points at order {order}", profile.k());
    if let Some(path) = out {
        scenario::save_profile(path, &profile)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_analyze(input: &Path, template: Option<&Path>, out: &Path) -> Result<i32> {
    let (header, data) = io::read_stream(input)?;
    std::fs::create_dir_all(out)?;
    let spec = periodogram(&data, header.fs_hz)?;
    let rows: Vec<Vec<f64>> =
        spec.freqs.iter().zip(&spec.power).map(|(f, p)| vec![*f, *p]).collect();
    io::write_csv(&out.join("periodogram.csv"), &["freq_hz", "power"], &rows)?;
    println!("wrote {}", out.join("periodogram.csv").display());
    if let Some(tpath) = template {
        let (theader, tdata) = io::read_stream(tpath)?;
        if (theader.fs_hz - header.fs_hz).abs() > 1e-6 * header.fs_hz {
            return Err(error::schema(
                tpath.display().to_string(),
                "template sample rate does not match the input stream",
            ));
        }
        let mf = matched_filter(&data, &tdata)?;
        let rows: Vec<Vec<f64>> = mf
            .lags
            .iter()
            .zip(&mf.magnitude)
            .map(|(l, m)| vec![*l as f64 / header.fs_hz, *m])
            .collect();
        io::write_csv(&out.join("matched_filter.csv"), &["lag_s", "magnitude"], &rows)?;
        println!(
            "wrote {} (peak {:.4e} at {:.3e} s)",
            out.join("matched_filter.csv").display(),
            mf.peak_mag,
            mf.peak_lag as f64 / header.fs_hz
        );
    }
    Ok(0)
}
