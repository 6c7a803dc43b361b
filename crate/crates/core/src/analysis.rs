//! Signal analysis for the experiment pipelines: matched filtering,
//! periodograms, the analytic two-path interference baseline, beam-pattern
//! extraction and envelope distribution statistics.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geom::{Vec3, C};

/// Full cross-correlation of a received block against a template.
#[derive(Clone, Debug)]
pub struct MatchedFilterResult {
    /// Lag of each output sample: template start position within the
    /// received block, from −(M−1) to N−1.
    pub lags: Vec<i64>,
    pub values: Vec<Complex64>,
    pub magnitude: Vec<f64>,
    pub peak_lag: i64,
    pub peak_mag: f64,
}

/// Correlates `received` with the conjugate time-reversed template over all
/// overlapping lags. The peak magnitude at lag d recovers template energy
/// when the received block contains the template delayed by d samples.
pub fn matched_filter(
    received: &[Complex64],
    template: &[Complex64],
) -> Result<MatchedFilterResult> {
    if template.is_empty() {
        return Err(Error::EmptyTemplate);
    }
    if received.is_empty() {
        return Err(Error::Config("empty received block".into()));
    }
    let n = received.len();
    let m = template.len();
    let out_len = n + m - 1;
    let size = out_len.next_power_of_two();

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut rbuf = vec![Complex64::new(0.0, 0.0); size];
    rbuf[..n].copy_from_slice(received);
    fwd.process(&mut rbuf);
    let mut tbuf = vec![Complex64::new(0.0, 0.0); size];
    tbuf[..m].copy_from_slice(template);
    fwd.process(&mut tbuf);
    for (r, t) in rbuf.iter_mut().zip(&tbuf) {
        *r *= t.conj();
    }
    inv.process(&mut rbuf);
    let scale = 1.0 / size as f64;

    let mut lags = Vec::with_capacity(out_len);
    let mut values = Vec::with_capacity(out_len);
    for l in -(m as i64 - 1)..n as i64 {
        let idx = l.rem_euclid(size as i64) as usize;
        lags.push(l);
        values.push(rbuf[idx] * scale);
    }
    let magnitude: Vec<f64> = values.iter().map(|v| v.norm()).collect();
    let (pi, pm) = magnitude
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    Ok(MatchedFilterResult {
        peak_lag: lags[pi],
        peak_mag: pm,
        lags,
        values,
        magnitude,
    })
}

/// Three-point parabolic refinement around a local maximum. Returns the
/// fractional index of the vertex and its interpolated value; at the edges
/// the integer peak is returned unchanged.
pub fn refine_peak(magnitude: &[f64], idx: usize) -> (f64, f64) {
    if idx == 0 || idx + 1 >= magnitude.len() {
        return (idx as f64, magnitude[idx]);
    }
    let (a, b, c) = (magnitude[idx - 1], magnitude[idx], magnitude[idx + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-300 {
        return (idx as f64, b);
    }
    let d = 0.5 * (a - c) / denom;
    (idx as f64 + d, b - 0.25 * (a - c) * d)
}

/// One-sided power spectrum grid with density scaled so the bin sum equals
/// the block's mean square (the frequency axis is centered on DC).
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    /// Peak-normalized copy of the power vector.
    pub fn normalized(&self) -> Vec<f64> {
        let peak = self.power.iter().cloned().fold(f64::MIN, f64::max);
        self.power.iter().map(|&p| p / peak).collect()
    }

    /// Indices whose frequency lies in [lo, hi].
    pub fn band(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.freqs.len())
            .filter(|&i| self.freqs[i] >= lo && self.freqs[i] <= hi)
            .collect()
    }
}

/// Magnitude-squared DFT of the block, rectangular window, frequency axis
/// shifted to (−fs/2, fs/2].
pub fn periodogram(block: &[Complex64], fs: f64) -> Result<Spectrum> {
    if block.is_empty() {
        return Err(Error::Config("empty block".into()));
    }
    let n = block.len();
    let mut buf = block.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / (n as f64 * n as f64);
    let half = n / 2;
    let mut freqs = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    // Negative frequencies first so the axis ascends.
    for i in 0..n {
        let k = (i + half + n % 2) % n;
        let f = if k <= (n - 1) / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        freqs.push(f * fs / n as f64);
        power.push(buf[k].norm_sqr() * scale);
    }
    Ok(Spectrum { freqs, power })
}

/// Band-limited template autocorrelation on a fine lag grid, for evaluating
/// matched-filter responses at sub-sample arrival offsets. Zero outside the
/// template support.
#[derive(Clone, Debug)]
pub struct TemplateAutocorr {
    fine: Vec<Complex64>,
    step_s: f64,
    support_s: f64,
    size: usize,
}

pub fn template_autocorr(
    template: &[Complex64],
    fs: f64,
    oversample: usize,
) -> Result<TemplateAutocorr> {
    if template.is_empty() {
        return Err(Error::EmptyTemplate);
    }
    if oversample == 0 {
        return Err(Error::Config("oversample factor must be positive".into()));
    }
    let m = template.len();
    let base = (2 * m).next_power_of_two();
    let mut planner = FftPlanner::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); base];
    buf[..m].copy_from_slice(template);
    planner.plan_fft_forward(base).process(&mut buf);
    // Spectral zero-padding: insert zeros at the Nyquist split so the inverse
    // transform is the band-limited interpolation of the autocorrelation.
    let size = base * oversample;
    let mut spec = vec![Complex64::new(0.0, 0.0); size];
    for (k, v) in buf.iter().enumerate() {
        let s = v.norm_sqr();
        let dest = if k <= base / 2 { k } else { size - (base - k) };
        spec[dest] = Complex64::new(s, 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut spec);
    for v in &mut spec {
        *v /= base as f64;
    }
    Ok(TemplateAutocorr {
        fine: spec,
        step_s: 1.0 / (fs * oversample as f64),
        support_s: m as f64 / fs,
        size,
    })
}

impl TemplateAutocorr {
    /// Autocorrelation at a continuous lag in seconds; eval(0) is the
    /// template energy.
    pub fn eval(&self, lag_s: f64) -> Complex64 {
        if lag_s.abs() >= self.support_s {
            return Complex64::new(0.0, 0.0);
        }
        let pos = lag_s / self.step_s;
        let base = pos.floor();
        let frac = pos - base;
        let i0 = (base as i64).rem_euclid(self.size as i64) as usize;
        let i1 = (i0 + 1) % self.size;
        self.fine[i0] * (1.0 - frac) + self.fine[i1] * frac
    }

    pub fn energy(&self) -> f64 {
        self.fine[0].re
    }

    pub fn step_s(&self) -> f64 {
        self.step_s
    }
}

/// Matched-filter peak magnitude of a coherent sum of template arrivals,
/// each with a complex amplitude and an arrival time in seconds.
pub fn coherent_peak(paths: &[(Complex64, f64)], rho: &TemplateAutocorr) -> f64 {
    if paths.is_empty() {
        return 0.0;
    }
    let lo = paths.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let steps = ((hi - lo) / rho.step_s()).ceil() as usize + 2 * 8;
    let start = lo - 8.0 * rho.step_s();
    let mut best = 0.0f64;
    for i in 0..=steps {
        let u = start + i as f64 * rho.step_s();
        let v: Complex64 = paths.iter().map(|&(a, t)| a * rho.eval(u - t)).sum();
        best = best.max(v.norm());
    }
    best
}

/// Static geometry of the moving-reflector interference scene: two
/// co-located transmit/receive nodes and one isotropic reflector on a linear
/// trajectory.
#[derive(Clone, Debug)]
pub struct TwoPathScene {
    pub node_a: Vec3,
    pub node_b: Vec3,
    pub reflector_start: Vec3,
    pub reflector_velocity: Vec3,
    pub reference_time: f64,
    pub fc: f64,
    pub loss_ref_m: f64,
    pub scatter_weight: Complex64,
}

impl TwoPathScene {
    pub fn reflector_at(&self, t: f64) -> Vec3 {
        self.reflector_start + self.reflector_velocity * (t - self.reference_time)
    }

    /// Complex amplitude and arrival time of one bounce path for a pulse
    /// whose reference sample is emitted at `t_emit`. Each hop's delay is the
    /// instantaneous distance at that hop's reception epoch (fixed point in
    /// the reflector motion), matching the emulator's read-side convention.
    pub fn bounce(&self, source: Vec3, receiver: Vec3, t_emit: f64) -> (Complex64, f64) {
        // Hop 1: source -> reflector, delay set by reflector position at the
        // scatter epoch.
        let mut u = t_emit;
        for _ in 0..4 {
            u = t_emit + (self.reflector_at(u) - source).norm() / C;
        }
        let d1 = (self.reflector_at(u) - source).norm();
        // Hop 2: reflector -> receiver, delay set at the reception epoch.
        let mut t_rx = u;
        for _ in 0..4 {
            t_rx = u + (receiver - self.reflector_at(u)).norm() / C;
        }
        let d2 = (receiver - self.reflector_at(u)).norm();
        let tau = (u - t_emit) + (t_rx - u);
        let amp = self.scatter_weight
            * (self.loss_ref_m / d1)
            * (self.loss_ref_m / d2)
            * Complex64::from_polar(1.0, -2.0 * PI * self.fc * tau);
        (amp, t_rx - t_emit)
    }

    /// Predicted matched-filter peak magnitude at one receiver for a pulse
    /// emitted by both nodes at `t_emit`. The result is the coherent sum of
    /// the self-bounce and the cross-bounce.
    pub fn peak(&self, receiver_is_a: bool, rho: &TemplateAutocorr, t_emit: f64) -> f64 {
        let rx = if receiver_is_a { self.node_a } else { self.node_b };
        let paths = [
            self.bounce(self.node_a, rx, t_emit),
            self.bounce(self.node_b, rx, t_emit),
        ];
        coherent_peak(&paths, rho)
    }

    /// Peak magnitudes over a pulse schedule, plus the constructive maximum
    /// (the incoherent amplitude sum) used for normalization.
    pub fn curve(
        &self,
        receiver_is_a: bool,
        rho: &TemplateAutocorr,
        pulse_times: &[f64],
    ) -> (Vec<f64>, f64) {
        let rx = if receiver_is_a { self.node_a } else { self.node_b };
        let mut ceiling = 0.0f64;
        let curve = pulse_times
            .iter()
            .map(|&t| {
                let pa = self.bounce(self.node_a, rx, t);
                let pb = self.bounce(self.node_b, rx, t);
                ceiling = ceiling.max((pa.0.norm() + pb.0.norm()) * rho.energy());
                coherent_peak(&[pa, pb], rho)
            })
            .collect();
        (curve, ceiling)
    }
}

/// Normalized gain-vs-angle curve: matched-filter peak magnitude of each
/// recording, scaled by the largest.
pub fn beam_sweep_extract(
    recordings: &[Vec<Complex64>],
    template: &[Complex64],
) -> Result<Vec<f64>> {
    let mut peaks = Vec::with_capacity(recordings.len());
    for rec in recordings {
        peaks.push(matched_filter(rec, template)?.peak_mag);
    }
    let top = peaks.iter().cloned().fold(f64::MIN, f64::max);
    if top > 0.0 {
        for p in &mut peaks {
            *p /= top;
        }
    }
    Ok(peaks)
}

/// Rayleigh goodness of fit: maximum-likelihood scale from the samples
/// (σ̂² = Σx²/2n) and the Kolmogorov-Smirnov statistic against that fit.
pub fn rayleigh_ks(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if samples.iter().any(|&x| x < 0.0) {
        return Err(Error::Config("envelope samples must be nonnegative".into()));
    }
    let n = samples.len() as f64;
    let sigma2 = samples.iter().map(|x| x * x).sum::<f64>() / (2.0 * n);
    let sigma = sigma2.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ks = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-x * x / (2.0 * sigma2)).exp();
        ks = ks.max((cdf - (i + 1) as f64 / n).abs());
        ks = ks.max((cdf - i as f64 / n).abs());
    }
    Ok((sigma, ks))
}
