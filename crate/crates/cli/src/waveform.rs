//! Complex baseband waveform builders. Every generated burst carries
//! raised-cosine edges; hard envelope steps are full-band and defeat both the
//! oversampling budget and fractional-delay interpolation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rfemu_core::emucore::SampleBlock;

use crate::error::{CliError, Result};

/// Usable single-sided band at the 25% oversampling regime: fs / (2 · 1.25).
pub fn band_limit(fs: f64) -> f64 {
    fs / 2.5
}

fn check_band(band_hz: f64, fs: f64) -> Result<()> {
    let limit = band_limit(fs);
    if band_hz > limit {
        return Err(CliError::BandExceeded { band_hz, limit_hz: limit });
    }
    Ok(())
}

pub(crate) fn edge_envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let edge = (i + 1).min(len - i).min(ramp.max(1)) as f64 / ramp.max(1) as f64;
    0.5 - 0.5 * (PI * edge).cos()
}

/// Continuous tone `amplitude·e^{j2πft}` over the whole duration, tapered at
/// the stream ends.
pub fn tone(freq_hz: f64, amplitude: f64, fs: f64, duration_s: f64) -> Result<SampleBlock> {
    check_band(freq_hz.abs(), fs)?;
    let len = (duration_s * fs).round() as usize;
    let ramp = (len / 64).clamp(1, 64);
    let data = (0..len)
        .map(|i| {
            Complex64::from_polar(
                amplitude * edge_envelope(i, len, ramp),
                2.0 * PI * freq_hz * i as f64 / fs,
            )
        })
        .collect();
    Ok(SampleBlock::from_start(data))
}

/// One linear chirp sweeping ±bandwidth/2 over `pulse_s`, zero afterwards.
pub fn lfm(
    bandwidth_hz: f64,
    pulse_s: f64,
    amplitude: f64,
    fs: f64,
    duration_s: f64,
) -> Result<SampleBlock> {
    check_band(bandwidth_hz / 2.0, fs)?;
    if pulse_s <= 0.0 || pulse_s > duration_s {
        return Err(crate::error::schema("tx.pulse_s", "pulse must fit in the duration"));
    }
    let len = (duration_s * fs).round() as usize;
    let np = (pulse_s * fs).round() as usize;
    let ramp = (np / 32).clamp(1, 64);
    let slope = bandwidth_hz / pulse_s;
    let mut data = vec![Complex64::new(0.0, 0.0); len];
    for (i, v) in data.iter_mut().take(np).enumerate() {
        let t = i as f64 / fs - pulse_s / 2.0;
        *v = Complex64::from_polar(
            amplitude * edge_envelope(i, np, ramp),
            PI * slope * t * t,
        );
    }
    Ok(SampleBlock::from_start(data))
}

/// Periodic Hann-windowed tone bursts: `pulse_s` on in every `period_s`.
pub fn pulse_train(
    freq_hz: f64,
    pulse_s: f64,
    period_s: f64,
    amplitude: f64,
    fs: f64,
    duration_s: f64,
) -> Result<SampleBlock> {
    check_band(freq_hz.abs() + 2.0 / pulse_s.max(1e-300), fs)?;
    if pulse_s <= 0.0 || period_s < pulse_s {
        return Err(crate::error::schema(
            "tx.period_s",
            "period must cover the pulse width",
        ));
    }
    let len = (duration_s * fs).round() as usize;
    let np = (pulse_s * fs).round() as usize;
    let period = (period_s * fs).round() as usize;
    let mut data = vec![Complex64::new(0.0, 0.0); len];
    for i in 0..len {
        let k = i % period.max(1);
        if k < np {
            let env = (PI * (k as f64 + 0.5) / np as f64).sin().powi(2);
            data[i] =
                Complex64::from_polar(amplitude * env, 2.0 * PI * freq_hz * i as f64 / fs);
        }
    }
    Ok(SampleBlock::from_start(data))
}

/// First burst of a pulse train, for use as a matched-filter template.
pub fn pulse_template(freq_hz: f64, pulse_s: f64, amplitude: f64, fs: f64) -> Vec<Complex64> {
    let np = (pulse_s * fs).round() as usize;
    (0..np)
        .map(|k| {
            let env = (PI * (k as f64 + 0.5) / np as f64).sin().powi(2);
            Complex64::from_polar(amplitude * env, 2.0 * PI * freq_hz * k as f64 / fs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_tone_is_constant_one() {
        let w = tone(0.0, 1.0, 1e6, 1e-3).unwrap();
        assert_eq!(w.data.len(), 1000);
        let mid = w.data[500];
        assert!((mid - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lfm_instantaneous_frequency_sweeps_the_band() {
        let fs = 2.5e9;
        let bw = 500e6;
        let w = lfm(bw, 10e-6, 1.0, fs, 10e-6).unwrap();
        let np = w.data.len();
        // Phase increments at the ends approach ±bw/2; sample a few steps in
        // so the edge taper does not zero the samples.
        let f_at = |i: usize| {
            let d = w.data[i + 1] * w.data[i].conj();
            d.arg() * fs / (2.0 * PI)
        };
        let f0 = f_at(8);
        let f1 = f_at(np - 10);
        assert!((f0 + bw / 2.0).abs() < 0.01 * bw, "start {f0:.3e}");
        assert!((f1 - bw / 2.0).abs() < 0.01 * bw, "end {f1:.3e}");
    }

    #[test]
    fn pulse_train_duty_cycle_is_exact() {
        let fs = 4e6;
        let w = pulse_train(0.0, 20e-6, 200e-6, 1.0, fs, 2e-3).unwrap();
        let on = w.data.iter().filter(|v| v.norm() > 0.0).count();
        assert_eq!(on * 10, w.data.len());
    }

    #[test]
    fn band_violations_are_rejected() {
        assert!(matches!(
            tone(1.5e6, 1.0, 2e6, 1e-3),
            Err(CliError::BandExceeded { .. })
        ));
        assert!(matches!(
            lfm(2e6, 1e-4, 1.0, 2e6, 1e-3),
            Err(CliError::BandExceeded { .. })
        ));
    }
}
