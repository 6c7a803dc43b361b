//! Narrowband motion-model error: the engines Doppler-shift the undilated
//! envelope rather than resampling it, which is exact for a carrier and
//! degrades with signal bandwidth. Measures the relative RMS error against
//! exact time dilation for a tone and for chirps of growing bandwidth at a
//! 100 m/s closing speed. Under `fs_scale` the sample rate and all signal
//! frequencies scale together and the duration scales inversely, so every
//! frequency stays at the same fraction of the rate.

use rfemu_core::geom::{doppler_approx_error, C};

use super::{ExperimentContext, Outcome};
use crate::error::Result;
use crate::waveform;

const SPEED_MPS: f64 = 100.0;
const CHIRP_BWS_HZ: [f64; 3] = [1.0e6, 50.0e6, 500.0e6];

pub fn run(ctx: &ExperimentContext) -> Result<Outcome> {
    let mut out = Outcome::new("doppler");
    let s = ctx.fs_scale;
    let fs = 2.5e9 * s;
    let fc = 1.0e9;
    let rho = SPEED_MPS / C;
    let dur = 20.0e-6 / s;

    let tone = waveform::tone(1.0e6 * s, 1.0, fs, dur)?;
    let tone_err = doppler_approx_error(&tone.data, fc, rho, fs)?;
    out.check(
        tone_err < 1e-3,
        format!("1 MHz tone at {SPEED_MPS} m/s: relative RMS error {tone_err:.2e} < 1e-3"),
    );

    let mut errs = Vec::new();
    let mut rows = vec![vec![1.0e6 * s, tone_err]];
    for &bw in &CHIRP_BWS_HZ {
        let chirp = waveform::lfm(bw * s, dur, 1.0, fs, dur)?;
        let err = doppler_approx_error(&chirp.data, fc, rho, fs)?;
        out.note(format!("chirp bandwidth {:>5.0} MHz: error {err:.2e}", bw / 1e6));
        rows.push(vec![bw * s, err]);
        errs.push(err);
    }
    ctx.csv("doppler.csv", &["bandwidth_hz", "rel_rms_error"], &rows)?;

    let monotone = errs.windows(2).all(|w| w[1] > w[0]);
    out.check(monotone, "error strictly grows with chirp bandwidth");

    Ok(out)
}
