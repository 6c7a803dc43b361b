//! Fluctuating-target statistics: a many-point equal-weight target is
//! re-oriented at random between pulses, and the matched-filter peak of the
//! scattered return is collected per orientation. The peaks must pass a
//! Kolmogorov-Smirnov test against the Rayleigh fit, the classic model for a
//! target of many comparable scatterers. Under `fs_scale` the sample rate
//! scales with fixed sample counts and ranges scale inversely so arrivals
//! keep their sample indices; the target extent, which sets the phase spread
//! across the points, is untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfemu_core::analysis::{matched_filter, rayleigh_ks};
use rfemu_core::emucore::{self, EngineConfig, EngineKind, NodeModel, Scenario};
use rfemu_core::geom::{Rotation, Vec3};
use rfemu_core::scatter::{swerling_profile, SwerlingKind};

use super::{ExperimentContext, Outcome};
use crate::error::Result;
use crate::waveform;

const TRIALS: usize = 2000;
const POINTS: usize = 16;
const EXTENT_M: f64 = 15.0;

pub fn run(ctx: &ExperimentContext) -> Result<Outcome> {
    let mut out = Outcome::new("swerling");
    let s = ctx.fs_scale;
    let fs = 25.0e6 * s;
    let fc = 1.0e9;
    let pulse_s = 50.0 / fs;
    let duration_s = 600.0 / fs;

    // One fixed target; only its orientation varies between trials. The
    // direct transmitter-receiver path is muted so the receiver sees the
    // scattered field alone.
    let profile = swerling_profile(SwerlingKind::One, POINTS, EXTENT_M, ctx.seed)?;
    let template = waveform::pulse_template(0.0, pulse_s, 1.0, fs);

    let mut tx = NodeModel::stationary("tx", Vec3::ZERO);
    tx.tx_waveform = Some(waveform::pulse_train(0.0, pulse_s, duration_s, 1.0, fs, duration_s)?);
    tx.mute_pairs = vec!["rx".to_string()];
    let rx = NodeModel::stationary("rx", Vec3::new(120.0 / s, 0.0, 0.0));
    let mut target = NodeModel::stationary("target", Vec3::new(0.0, 3000.0 / s, 0.0));
    target.profile = profile;

    let base = Scenario {
        nodes: vec![tx, rx, target],
        fc,
        fs,
        update_interval_s: 300.0 / fs,
        max_range_m: 10_000.0 / s,
        duration_s,
        loss_ref_m: 1.0,
    };
    base.validate()?;

    let cfg = EngineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x53);
    let mut peaks = Vec::with_capacity(TRIALS);
    for _ in 0..TRIALS {
        let mut scn = base.clone();
        let q = Rotation::random_uniform(&mut rng);
        for wp in &mut scn.nodes[2].waypoints {
            wp.orientation = q;
        }
        let run = emucore::run(&scn, EngineKind::Direct, &cfg)?;
        // The two-hop return lands near sample 500; search past the quiet
        // early region only.
        let slice = &run.receivers[1][460..];
        peaks.push(matched_filter(slice, &template)?.peak_mag);
    }
    ctx.csv("swerling_peaks.csv", &["peak_mag"], &peaks.iter().map(|&p| vec![p]).collect::<Vec<_>>())?;

    let (sigma, ks) = rayleigh_ks(&peaks)?;
    out.note(format!("{TRIALS} orientations, fitted Rayleigh scale {sigma:.3e}"));
    out.check(ks < 0.05, format!("KS statistic {ks:.4} against the fitted Rayleigh < 0.05"));

    Ok(out)
}
