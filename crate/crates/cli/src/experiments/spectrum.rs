//! Wideband response of an extended angle-dependent scatterer. A chirped
//! pulse bounces off a 16-point cloud whose incoming patterns are high-order
//! hemispherical steps, so different points light up differently and their
//! geometric micro-delays imprint structure across the band. The periodogram
//! of the received pulse must match the closed-form response of the same
//! profile: |S(f)|² · |H(f)|², with H built from each point's gains, carrier
//! phases and in-minus-out projection delays. Under `fs_scale` the rate and
//! chirp bandwidth scale together while every distance scales inversely, so
//! delays keep their sample counts and bandwidth × delay-spread is preserved.

use num_complex::Complex64;
use rfemu_core::analysis::periodogram;
use rfemu_core::emucore::{self, EngineConfig, EngineKind, NodeModel, Scenario};
use rfemu_core::geom::{path_between, steering_vector, Kinematics, Vec3};
use rfemu_core::scatter::{hemisphere_projection, ScatterPoint, ScatterProfile};
use rfemu_core::sphharm::ShBasisSpec;
use rustfft::FftPlanner;

use super::{rel_rms_real, ExperimentContext, Outcome};
use crate::error::Result;
use crate::waveform;

const PATTERN_ORDER: usize = 12;
const GRID_X_M: [f64; 4] = [-150.0, -50.0, 50.0, 150.0];
const GRID_Y_M: [f64; 4] = [-93.75, -31.25, 31.25, 93.75];
const SLICE: std::ops::Range<usize> = 4700..5724;

/// The 16-point cloud: incoming gain is a hemispherical step whose axis
/// cycles through four headings, outgoing gain is 1.
fn cloud(scale: f64) -> Result<ScatterProfile> {
    let spec = ShBasisSpec::new(PATTERN_ORDER)?;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let axes = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(r, r, 0.0),
    ];
    let mut constant_one = vec![Complex64::new(0.0, 0.0); spec.p()];
    constant_one[0] = Complex64::new(2.0 * std::f64::consts::PI.sqrt(), 0.0);
    let mut points = Vec::new();
    for (i, &x) in GRID_X_M.iter().enumerate() {
        for (j, &y) in GRID_Y_M.iter().enumerate() {
            points.push(ScatterPoint {
                location: Vec3::new(x, y, 0.0) * scale,
                in_coeffs: hemisphere_projection(spec, axes[(i + j) % 4])?.coeffs,
                out_coeffs: constant_one.clone(),
            });
        }
    }
    Ok(ScatterProfile::new(spec, points)?)
}

pub fn run(ctx: &ExperimentContext) -> Result<Outcome> {
    let mut out = Outcome::new("complexscatter");
    let s = ctx.fs_scale;
    let fs = 20.0e6 * s;
    let fc = 1.0e9;
    let bw = 4.0e6 * s;
    let pulse_s = 400.0 / fs;
    let duration_s = 6144.0 / fs;
    let scat_pos = Vec3::new(30_000.0, 0.0, 0.0) * (1.0 / s);
    let rx_pos = Vec3::new(0.0, 30_000.0, 0.0) * (1.0 / s);

    let profile = cloud(1.0 / s)?;
    let chirp = waveform::lfm(bw, pulse_s, 1.0, fs, duration_s)?;
    let pulse: Vec<Complex64> = chirp.data[..(pulse_s * fs).round() as usize].to_vec();

    let mut tx = NodeModel::stationary("tx", Vec3::ZERO);
    tx.tx_waveform = Some(chirp);
    tx.mute_pairs = vec!["rx".to_string()];
    let mut scat = NodeModel::stationary("scat", scat_pos);
    scat.profile = profile.clone();
    let rx = NodeModel::stationary("rx", rx_pos);
    let scn = Scenario {
        nodes: vec![tx, scat, rx],
        fc,
        fs,
        update_interval_s: 3200.0 / fs,
        max_range_m: 50_000.0 / s,
        duration_s,
        loss_ref_m: 1.0,
    };
    let run = emucore::run(&scn, EngineKind::Direct, &EngineConfig::default())?;
    let received = &run.receivers[2][SLICE];
    let emu = periodogram(received, fs)?;

    // Closed-form single-bounce response on the same frequency bins.
    let theta_in = path_between(&Kinematics::static_at(Vec3::ZERO), &Kinematics::static_at(scat_pos), fc, 0.0)?.incoming;
    let theta_out = path_between(&Kinematics::static_at(scat_pos), &Kinematics::static_at(rx_pos), fc, 0.0)?.outgoing;
    let a_in = steering_vector(theta_in);
    let a_out = steering_vector(theta_out);
    let terms: Vec<(Complex64, f64)> = (0..profile.k())
        .map(|k| {
            let delta = profile.points[k].location.dot(a_in) - profile.points[k].location.dot(a_out);
            let w = profile.alpha(k, theta_in)
                * profile.beta(k, theta_out)
                * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * fc * delta);
            (w, delta)
        })
        .collect();

    let n = SLICE.len();
    let mut sbuf = vec![Complex64::new(0.0, 0.0); n];
    sbuf[..pulse.len()].copy_from_slice(&pulse);
    FftPlanner::new().plan_fft_forward(n).process(&mut sbuf);
    let half = n / 2;
    let model: Vec<f64> = (0..n)
        .map(|i| {
            // Same bin-to-frequency layout as the periodogram.
            let k = (i + half + n % 2) % n;
            let f = emu.freqs[i];
            let h: Complex64 = terms
                .iter()
                .map(|&(w, d)| w * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * d))
                .sum();
            sbuf[k].norm_sqr() * h.norm_sqr()
        })
        .collect();

    let band = emu.band(-1.8e6 * s, 1.8e6 * s);
    let pe: Vec<f64> = band.iter().map(|&i| emu.power[i]).collect();
    let pm: Vec<f64> = band.iter().map(|&i| model[i]).collect();
    let lambda = pe.iter().zip(&pm).map(|(e, m)| e * m).sum::<f64>()
        / pe.iter().map(|e| e * e).sum::<f64>();
    let scaled: Vec<f64> = pe.iter().map(|e| lambda * e).collect();
    let nrmse = rel_rms_real(&scaled, &pm);
    out.note(format!("{} in-band bins over ±1.8 MHz of a ±2 MHz chirp", band.len()));
    out.check(
        nrmse < 0.05,
        format!("in-band power spectrum deviation {nrmse:.1e} < 0.05"),
    );

    let rows: Vec<Vec<f64>> = band
        .iter()
        .zip(scaled.iter().zip(&pm))
        .map(|(&i, (e, m))| vec![emu.freqs[i], *e, *m])
        .collect();
    ctx.csv("complexscatter.csv", &["freq_hz", "measured", "model"], &rows)?;

    Ok(out)
}
