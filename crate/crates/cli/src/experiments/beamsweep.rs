//! Array-pattern reproduction through the full signal path. A four-element
//! half-wavelength line array is represented by per-element spherical
//! harmonic factors fitted at order 3, steered to two commanded directions,
//! and swept in polar angle by re-running a two-node link against a far
//! receiver at each angle. The matched-filter peak curve must track the
//! model's own gain magnitude within 2% of the peak. Under `fs_scale` the
//! sample rate scales with fixed sample counts and the receiver range scales
//! inversely so the arrival keeps its sample index; carrier and array layout
//! are untouched, so the pattern itself is identical.

use num_complex::Complex64;
use rfemu_core::analysis::beam_sweep_extract;
use rfemu_core::emucore::{self, EngineConfig, EngineKind, NodeModel, Scenario, SteerEntry};
use rfemu_core::geom::{steering_vector, Angle, Vec3};
use rfemu_core::sphharm::{antenna_gain, quadrature_grid, sh_fit, AntennaModel, ShBasisSpec};

use super::{ExperimentContext, Outcome};
use crate::error::Result;
use crate::waveform;

const ELEMENT_X_M: [f64; 4] = [-0.225, -0.075, 0.075, 0.225];
const SWEEP_AZ_DEG: f64 = 3.67;
const STEER_POLAR_DEG: [f64; 2] = [1.83, 69.7];
const FIT_ORDER: usize = 3;

/// Per-element plane-wave phase toward `theta` for an element at `x_m` on
/// the x axis.
fn element_response(fc: f64, x_m: f64, theta: Angle) -> Complex64 {
    let a = steering_vector(theta);
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * fc * x_m * a.x)
}

/// Order-limited harmonic model of the line array: one factor per element,
/// identical on the steer and field sides, fitted on a quadrature grid.
pub fn fitted_array(fc: f64) -> Result<AntennaModel> {
    let spec = ShBasisSpec::new(FIT_ORDER)?;
    let grid = quadrature_grid(12, 24);
    let mut factors = Vec::with_capacity(ELEMENT_X_M.len());
    for &x in &ELEMENT_X_M {
        let samples: Vec<(Angle, Complex64)> =
            grid.iter().map(|&(a, _)| (a, element_response(fc, x, a))).collect();
        factors.push(sh_fit(&samples, spec, 1e-9)?);
    }
    Ok(AntennaModel::new(factors.clone(), factors)?)
}

pub fn run(ctx: &ExperimentContext) -> Result<Outcome> {
    let mut out = Outcome::new("beamsweep");
    let s = ctx.fs_scale;
    let fs = 2.0e6 * s;
    let fc = 1.0e9;
    let pulse_s = 40.0 / fs;
    let duration_s = 400.0 / fs;
    let range_m = 30_000.0 / s;

    let model = fitted_array(fc)?;
    let template = waveform::pulse_template(0.0, pulse_s, 1.0, fs);
    let angles: Vec<Angle> =
        (0..=180).map(|i| Angle::new(SWEEP_AZ_DEG, 0.5 * i as f64)).collect();
    let cfg = EngineConfig::default();

    for &steer_pol in &STEER_POLAR_DEG {
        let steer = Angle::new(SWEEP_AZ_DEG, steer_pol);
        let mut recordings = Vec::with_capacity(angles.len());
        for &angle in &angles {
            let mut tx = NodeModel::stationary("tx", Vec3::ZERO);
            tx.antenna = Some(model.clone());
            tx.steer = vec![SteerEntry { time_s: 0.0, angle: steer }];
            tx.tx_waveform =
                Some(waveform::pulse_train(0.0, pulse_s, duration_s, 1.0, fs, duration_s)?);
            let rx = NodeModel::stationary("rx", angle.unit() * range_m);
            let scn = Scenario {
                nodes: vec![tx, rx],
                fc,
                fs,
                update_interval_s: 100.0 / fs,
                max_range_m: 40_000.0 / s,
                duration_s,
                loss_ref_m: 1.0,
            };
            let run = emucore::run(&scn, EngineKind::Direct, &cfg)?;
            recordings.push(run.receivers[1].clone());
        }
        let emu = beam_sweep_extract(&recordings, &template)?;

        let gains: Vec<f64> =
            angles.iter().map(|&a| antenna_gain(&model, steer, a).norm()).collect();
        let top = gains.iter().cloned().fold(f64::MIN, f64::max);
        let eval: Vec<f64> = gains.iter().map(|g| g / top).collect();

        // One least-squares scale absorbs the two normalizations; the shapes
        // must then agree everywhere to 2% of the beam peak.
        let lambda = emu.iter().zip(&eval).map(|(m, e)| m * e).sum::<f64>()
            / emu.iter().map(|m| m * m).sum::<f64>();
        let worst = emu
            .iter()
            .zip(&eval)
            .map(|(m, e)| (lambda * m - e).abs())
            .fold(0.0f64, f64::max);
        out.check(
            worst <= 0.02,
            format!("steered to {steer_pol}°: swept curve within {worst:.1e} of the pattern peak (limit 0.02)"),
        );

        let rows: Vec<Vec<f64>> = angles
            .iter()
            .zip(emu.iter().zip(&eval))
            .map(|(a, (m, e))| vec![a.polar_deg, lambda * m, *e])
            .collect();
        ctx.csv(&format!("beamsweep_{steer_pol}.csv"), &["polar_deg", "measured", "model"], &rows)?;
    }

    Ok(out)
}
