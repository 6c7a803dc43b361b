//! Scenario files and model files: JSON schemas and their resolution into
//! engine types.
//!
//! Trajectories are piecewise linear between waypoints. A nonzero velocity on
//! the final waypoint extends its motion past the schedule end; velocities on
//! earlier waypoints are redundant with the following position and ignored.
//! Orientation and steering schedules hold stepwise from each entry's time.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use rfemu_core::emucore::{NodeModel, SampleBlock, Scenario, SteerEntry, Waypoint};
use rfemu_core::geom::{Angle, Rotation, Vec3};
use rfemu_core::scatter::{ScatterPoint, ScatterProfile};
use rfemu_core::sphharm::{AntennaModel, ShBasisSpec, ShFunction};

use crate::error::{schema, CliError, Result};
use crate::io::read_stream;
use crate::waveform;

type Cpair = [f64; 2];

fn c(v: Cpair) -> Complex64 {
    Complex64::new(v[0], v[1])
}

fn pair(v: Complex64) -> Cpair {
    [v.re, v.im]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub globals: Globals,
    pub nodes: Vec<NodeFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Globals {
    pub fc_hz: f64,
    pub fs_hz: f64,
    pub update_interval_s: f64,
    pub max_range_m: f64,
    pub duration_s: f64,
    pub loss_ref_m: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeFile {
    pub id: String,
    pub waypoints: Vec<WaypointFile>,
    #[serde(default)]
    pub orientation: Vec<OrientationFile>,
    #[serde(default)]
    pub antenna_ref: Option<String>,
    #[serde(default)]
    pub steer: Vec<SteerFile>,
    #[serde(default)]
    pub profile_ref: Option<ProfileRef>,
    #[serde(default)]
    pub tx: Option<TxFile>,
    #[serde(default)]
    pub rx_offset: Option<[f64; 3]>,
    #[serde(default)]
    pub mute: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaypointFile {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
    #[serde(default)]
    pub vz: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrientationFile {
    pub t: f64,
    pub axis: [f64; 3],
    pub degrees: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteerFile {
    pub t: f64,
    pub azimuth_deg: f64,
    pub polar_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Path(String),
    Inline(ProfileFile),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TxFile {
    pub kind: String,
    #[serde(default)]
    pub freq_hz: f64,
    #[serde(default)]
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub pulse_s: f64,
    #[serde(default)]
    pub period_s: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub start_s: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileFile {
    pub order: usize,
    #[serde(default)]
    pub points: Vec<PointFile>,
    #[serde(default)]
    pub isotropic_points: Vec<IsoPointFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointFile {
    pub location: [f64; 3],
    pub in_coeffs: Vec<Cpair>,
    pub out_coeffs: Vec<Cpair>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IsoPointFile {
    pub location: [f64; 3],
    pub weight: Cpair,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AntennaFile {
    pub order: usize,
    pub steer_factors: Vec<Vec<Cpair>>,
    pub field_factors: Vec<Vec<Cpair>>,
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    if !path.exists() {
        return Err(CliError::MissingRef(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| schema(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    resolve_scenario(&file, &base)
}

pub fn resolve_scenario(file: &ScenarioFile, base: &Path) -> Result<Scenario> {
    let g = &file.globals;
    for (name, v) in [
        ("globals.fc_hz", g.fc_hz),
        ("globals.fs_hz", g.fs_hz),
        ("globals.update_interval_s", g.update_interval_s),
        ("globals.max_range_m", g.max_range_m),
        ("globals.duration_s", g.duration_s),
        ("globals.loss_ref_m", g.loss_ref_m),
    ] {
        if !(v > 0.0) && name != "globals.fc_hz" {
            return Err(schema(name, "must be positive"));
        }
        if name == "globals.fc_hz" && v < 0.0 {
            return Err(schema(name, "must be nonnegative"));
        }
    }
    let mut nodes = Vec::with_capacity(file.nodes.len());
    for nf in &file.nodes {
        nodes.push(build_node(nf, g, base)?);
    }
    let scenario = Scenario {
        nodes,
        fc: g.fc_hz,
        fs: g.fs_hz,
        update_interval_s: g.update_interval_s,
        max_range_m: g.max_range_m,
        duration_s: g.duration_s,
        loss_ref_m: g.loss_ref_m,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn position_at(points: &[(f64, Vec3)], t: f64) -> Vec3 {
    if t <= points[0].0 || points.len() == 1 {
        return points[0].1;
    }
    let last = points.last().unwrap();
    if t >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= t) - 1;
    let (t0, p0) = points[i];
    let (t1, p1) = points[i + 1];
    p0 + (p1 - p0) * ((t - t0) / (t1 - t0))
}

fn build_node(nf: &NodeFile, g: &Globals, base: &Path) -> Result<NodeModel> {
    let at = |field: &str| format!("nodes[{}].{field}", nf.id);
    if nf.waypoints.is_empty() {
        return Err(schema(at("waypoints"), "need at least one waypoint"));
    }
    if nf.waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(schema(at("waypoints"), "times must strictly increase"));
    }
    let mut track: Vec<(f64, Vec3)> = nf
        .waypoints
        .iter()
        .map(|w| (w.t, Vec3::new(w.x, w.y, w.z)))
        .collect();
    let last = nf.waypoints.last().unwrap();
    let vel = Vec3::new(last.vx, last.vy, last.vz);
    if vel.norm() > 0.0 {
        // Extend past any delay/filter lookahead the engine may evaluate.
        let t_ext = (g.duration_s + 32768.0 / g.fs_hz + 1.0).max(last.t + 1.0);
        let p = track.last().unwrap().1;
        track.push((t_ext, p + vel * (t_ext - last.t)));
    }

    let mut orients: Vec<(f64, Rotation)> = Vec::with_capacity(nf.orientation.len());
    for o in &nf.orientation {
        let rot = Rotation::from_axis_angle(Vec3::new(o.axis[0], o.axis[1], o.axis[2]), o.degrees)
            .map_err(|e| schema(at("orientation"), e.to_string()))?;
        orients.push((o.t, rot));
    }
    if orients.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(schema(at("orientation"), "times must strictly increase"));
    }
    let orient_at = |t: f64| -> Rotation {
        orients
            .iter()
            .rev()
            .find(|(ot, _)| *ot <= t)
            .map(|(_, r)| *r)
            .unwrap_or(Rotation::IDENTITY)
    };

    let mut times: Vec<f64> = track.iter().map(|p| p.0).collect();
    for (t, _) in &orients {
        if !times.iter().any(|x| (x - t).abs() < 1e-12) {
            times.push(*t);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let waypoints: Vec<Waypoint> = times
        .iter()
        .map(|&t| Waypoint {
            time_s: t,
            position: position_at(&track, t),
            orientation: orient_at(t),
        })
        .collect();

    let antenna = match nf.antenna_ref.as_deref() {
        None | Some("isotropic") => None,
        Some(rel) => Some(load_antenna(&base.join(rel))?),
    };

    let steer = nf
        .steer
        .iter()
        .map(|s| SteerEntry { time_s: s.t, angle: Angle::new(s.azimuth_deg, s.polar_deg) })
        .collect();

    let profile = match &nf.profile_ref {
        None => ScatterProfile::empty(ShBasisSpec::new(0)?),
        Some(ProfileRef::Path(rel)) => load_profile(&base.join(rel))?,
        Some(ProfileRef::Inline(pf)) => profile_from_file(pf)?,
    };

    let tx_waveform = match &nf.tx {
        None => None,
        Some(tx) => Some(build_waveform(tx, g, base, &at("tx"))?),
    };

    Ok(NodeModel {
        id: nf.id.clone(),
        waypoints,
        antenna,
        steer,
        profile,
        tx_waveform,
        rx_offset: nf
            .rx_offset
            .map(|o| Vec3::new(o[0], o[1], o[2]))
            .unwrap_or(Vec3::ZERO),
        mute_pairs: nf.mute.clone(),
    })
}

fn build_waveform(tx: &TxFile, g: &Globals, base: &Path, at: &str) -> Result<SampleBlock> {
    let mut block = match tx.kind.as_str() {
        "tone" => waveform::tone(tx.freq_hz, tx.amplitude, g.fs_hz, g.duration_s)?,
        "lfm" => waveform::lfm(tx.bandwidth_hz, tx.pulse_s, tx.amplitude, g.fs_hz, g.duration_s)?,
        "pulse_train" => waveform::pulse_train(
            tx.freq_hz,
            tx.pulse_s,
            tx.period_s,
            tx.amplitude,
            g.fs_hz,
            g.duration_s,
        )?,
        "file" => {
            let rel = tx
                .path
                .as_deref()
                .ok_or_else(|| schema(format!("{at}.path"), "required for kind \"file\""))?;
            let full = base.join(rel);
            if !full.exists() {
                return Err(CliError::MissingRef(full));
            }
            let (header, data) = read_stream(&full)?;
            if (header.fs_hz - g.fs_hz).abs() > 1e-6 * g.fs_hz {
                return Err(schema(
                    format!("{at}.path"),
                    format!("stream rate {} differs from scenario rate {}", header.fs_hz, g.fs_hz),
                ));
            }
            SampleBlock::from_start(data)
        }
        other => {
            return Err(schema(
                format!("{at}.kind"),
                format!("unknown waveform kind {other:?}"),
            ))
        }
    };
    block.start_index = (tx.start_s * g.fs_hz).round() as u64;
    Ok(block)
}

pub fn load_antenna(path: &Path) -> Result<AntennaModel> {
    if !path.exists() {
        return Err(CliError::MissingRef(path.to_path_buf()));
    }
    let file: AntennaFile = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| schema(path.display().to_string(), e.to_string()))?;
    antenna_from_file(&file).map_err(|e| match e {
        CliError::Schema { message, .. } => schema(path.display().to_string(), message),
        other => other,
    })
}

pub fn antenna_from_file(file: &AntennaFile) -> Result<AntennaModel> {
    let spec = ShBasisSpec::new(file.order)?;
    let build = |rows: &[Vec<Cpair>]| -> Result<Vec<ShFunction>> {
        rows.iter()
            .map(|row| {
                if row.len() != spec.p() {
                    return Err(schema(
                        "factors",
                        format!("factor has {} coefficients, order {} needs {}", row.len(), file.order, spec.p()),
                    ));
                }
                Ok(ShFunction::new(spec, row.iter().map(|&v| c(v)).collect())?)
            })
            .collect()
    };
    Ok(AntennaModel::new(build(&file.steer_factors)?, build(&file.field_factors)?)?)
}

pub fn antenna_to_file(model: &AntennaModel) -> AntennaFile {
    let dump = |fs: &[ShFunction]| -> Vec<Vec<Cpair>> {
        fs.iter().map(|f| f.coeffs.iter().map(|&v| pair(v)).collect()).collect()
    };
    AntennaFile {
        order: model.spec().order,
        steer_factors: dump(&model.steer_factors),
        field_factors: dump(&model.field_factors),
    }
}

pub fn save_antenna(path: &Path, model: &AntennaModel) -> Result<()> {
    let text = serde_json::to_string_pretty(&antenna_to_file(model))
        .map_err(|e| schema("antenna", e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<ScatterProfile> {
    if !path.exists() {
        return Err(CliError::MissingRef(path.to_path_buf()));
    }
    let file: ProfileFile = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| schema(path.display().to_string(), e.to_string()))?;
    profile_from_file(&file)
}

pub fn profile_from_file(file: &ProfileFile) -> Result<ScatterProfile> {
    let spec = ShBasisSpec::new(file.order)?;
    let mut points = Vec::with_capacity(file.points.len() + file.isotropic_points.len());
    for p in &file.points {
        points.push(ScatterPoint {
            location: Vec3::new(p.location[0], p.location[1], p.location[2]),
            in_coeffs: p.in_coeffs.iter().map(|&v| c(v)).collect(),
            out_coeffs: p.out_coeffs.iter().map(|&v| c(v)).collect(),
        });
    }
    for p in &file.isotropic_points {
        let mut pt = ScatterProfile::isotropic_point(
            Vec3::new(p.location[0], p.location[1], p.location[2]),
            c(p.weight),
        );
        // Isotropic shorthand stays valid at any basis order.
        pt.in_coeffs.resize(spec.p(), Complex64::new(0.0, 0.0));
        pt.out_coeffs.resize(spec.p(), Complex64::new(0.0, 0.0));
        points.push(pt);
    }
    Ok(ScatterProfile::new(spec, points)?)
}

pub fn profile_to_file(profile: &ScatterProfile) -> ProfileFile {
    ProfileFile {
        order: profile.spec.order,
        points: profile
            .points
            .iter()
            .map(|p| PointFile {
                location: [p.location.x, p.location.y, p.location.z],
                in_coeffs: p.in_coeffs.iter().map(|&v| pair(v)).collect(),
                out_coeffs: p.out_coeffs.iter().map(|&v| pair(v)).collect(),
            })
            .collect(),
        isotropic_points: Vec::new(),
    }
}

pub fn save_profile(path: &Path, profile: &ScatterProfile) -> Result<()> {
    let text = serde_json::to_string_pretty(&profile_to_file(profile))
        .map_err(|e| schema("profile", e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Directory the scenario's relative references resolve against.
pub fn scenario_base(path: &Path) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).to_path_buf()
}
