//! Experiment drivers shared by the `experiment` subcommand and the
//! acceptance suite. Every driver returns an [`Outcome`]: the pass flag plus
//! the report lines that justify it, so callers can print one block per
//! experiment and exit on the aggregate.

pub mod beamsweep;
pub mod doppler;
pub mod equivalence;
pub mod filters;
pub mod fits;
pub mod interferometry;
pub mod opcount;
pub mod spectrum;
pub mod swerling;

use std::path::PathBuf;

use num_complex::Complex64;

use crate::error::Result;

/// Names accepted by `rfemu experiment <name>`.
pub const EXPERIMENT_NAMES: [&str; 6] = [
    "interferometry",
    "beamsweep",
    "complexscatter",
    "swerling",
    "filtertable",
    "opcount",
];

pub fn run_by_name(name: &str, ctx: &ExperimentContext) -> Result<Outcome> {
    match name {
        "interferometry" => interferometry::run(ctx),
        "beamsweep" => beamsweep::run(ctx),
        "complexscatter" => spectrum::run(ctx),
        "swerling" => swerling::run(ctx),
        "filtertable" => filters::run(ctx),
        "opcount" => opcount::run(ctx),
        other => Err(crate::error::schema(
            "experiment",
            format!("unknown experiment {other}; expected one of {}", EXPERIMENT_NAMES.join(", ")),
        )),
    }
}

/// Result of one experiment: each `check` appends a graded line and folds
/// into `pass`, each `note` appends context without affecting the grade.
#[derive(Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn new(name: &'static str) -> Outcome {
        Outcome { name, pass: true, lines: Vec::new() }
    }

    pub fn check(&mut self, ok: bool, label: impl Into<String>) {
        self.pass &= ok;
        let tag = if ok { "ok  " } else { "FAIL" };
        self.lines.push(format!("  {tag}  {}", label.into()));
    }

    pub fn note(&mut self, label: impl Into<String>) {
        self.lines.push(format!("        {}", label.into()));
    }

    pub fn render(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let mut s = format!("{}: {verdict}\n", self.name);
        for line in &self.lines {
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

/// Knobs shared by every experiment. `out_dir` enables CSV artifacts.
/// `fs_scale` multiplies the experiment's sample rates; each driver documents
/// which quantities co-scale so its dimensionless ratios survive. The
/// acceptance suite always runs at scale 1.
#[derive(Clone, Debug)]
pub struct ExperimentContext {
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub fs_scale: f64,
}

impl Default for ExperimentContext {
    fn default() -> ExperimentContext {
        ExperimentContext { out_dir: None, seed: 17, fs_scale: 1.0 }
    }
}

impl ExperimentContext {
    /// Write a CSV artifact if an output directory was requested.
    pub fn csv(&self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)?;
            crate::io::write_csv(&dir.join(name), columns, rows)?;
        }
        Ok(())
    }
}

/// Relative RMS difference ‖a − b‖ / ‖b‖. A silent reference compares equal
/// only to another silent signal.
pub fn rel_rms(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    if den < 1e-30 {
        return if num < 1e-30 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Real-vector variant of [`rel_rms`].
pub fn rel_rms_real(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den < 1e-30 {
        return if num < 1e-30 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Coefficient of determination of the through-origin fit y ≈ c·x, with the
/// conventional mean-centered total sum of squares.
pub fn r2_through_origin(points: &[(f64, f64)]) -> f64 {
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let c = sxy / sxx;
    let ybar = points.iter().map(|(_, y)| y).sum::<f64>() / points.len() as f64;
    let ss_res: f64 = points.iter().map(|(x, y)| (y - c * x) * (y - c * x)).sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - ybar) * (y - ybar)).sum();
    1.0 - ss_res / ss_tot
}

/// Coefficient of determination of the affine fit y ≈ a + b·x.
pub fn r2_affine(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xbar = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let ybar = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let b = sxy / sxx;
    let a = ybar - b * xbar;
    let ss_res: f64 = points.iter().map(|(x, y)| (y - a - b * x) * (y - a - b * x)).sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - ybar) * (y - ybar)).sum();
    1.0 - ss_res / ss_tot
}
