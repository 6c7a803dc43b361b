//! Scenario geometry: positions, directions, steering delays, and the
//! per-path channel state (delay, Doppler, loss) that drives the emulator.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s, exact SI value. Analytic baselines in tests must
/// use this same constant or delay comparisons drift.
pub const C: f64 = 299_792_458.0;

/// Position (m) or velocity (m/s) in the global frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Result<Vec3> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroDistance);
        }
        Ok(self * (1.0 / n))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Direction on the sphere. `polar_deg` is measured from +z (the steering
/// formula's cos term forces the polar convention), `azimuth_deg` from +x
/// toward +y, kept in [-180, 180).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Angle {
    pub azimuth_deg: f64,
    pub polar_deg: f64,
}

impl Angle {
    pub fn new(azimuth_deg: f64, polar_deg: f64) -> Angle {
        let mut az = (azimuth_deg + 180.0).rem_euclid(360.0) - 180.0;
        if az >= 180.0 {
            az = -180.0;
        }
        Angle { azimuth_deg: az, polar_deg }
    }

    /// Unit vector pointing along this direction.
    pub fn unit(self) -> Vec3 {
        let az = self.azimuth_deg.to_radians();
        let pol = self.polar_deg.to_radians();
        let (saz, caz) = az.sin_cos();
        let (spol, cpol) = pol.sin_cos();
        Vec3::new(caz * spol, saz * spol, cpol)
    }

    /// Direction of an arbitrary nonzero vector.
    pub fn from_unit(v: Vec3) -> Result<Angle> {
        let u = v.normalized()?;
        let polar = u.z.clamp(-1.0, 1.0).acos().to_degrees();
        let azimuth = if u.x == 0.0 && u.y == 0.0 {
            0.0
        } else {
            u.y.atan2(u.x).to_degrees()
        };
        Ok(Angle::new(azimuth, polar))
    }
}

/// Unit vector from one position toward another.
pub fn unit_toward(from: Vec3, to: Vec3) -> Result<Vec3> {
    (to - from).normalized()
}

/// a(θ) in seconds per meter. Dotting a position offset (m) against it gives
/// the extra propagation delay seen from direction θ.
pub fn steering_vector(theta: Angle) -> Vec3 {
    theta.unit() * (1.0 / C)
}

/// Row-major rotation matrix mapping local-frame vectors to the global frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(pub [[f64; 3]; 3]);

impl Rotation {
    pub const IDENTITY: Rotation =
        Rotation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Validates orthonormality (‖RᵀR − I‖∞ < 1e-9) and det = +1.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Rotation> {
        let r = Rotation(rows);
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += rows[k][i] * rows[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((dot - target).abs());
            }
        }
        if max_dev >= 1e-9 {
            return Err(Error::Config(format!(
                "orientation is not orthonormal (deviation {max_dev:.3e})"
            )));
        }
        if (r.det() - 1.0).abs() >= 1e-9 {
            return Err(Error::Config(format!(
                "orientation determinant {:.6} is not +1",
                r.det()
            )));
        }
        Ok(r)
    }

    pub fn from_axis_angle(axis: Vec3, degrees: f64) -> Result<Rotation> {
        let u = axis.normalized()?;
        let th = degrees.to_radians();
        let (s, c) = th.sin_cos();
        let t = 1.0 - c;
        Ok(Rotation([
            [c + u.x * u.x * t, u.x * u.y * t - u.z * s, u.x * u.z * t + u.y * s],
            [u.y * u.x * t + u.z * s, c + u.y * u.y * t, u.y * u.z * t - u.x * s],
            [u.z * u.x * t - u.y * s, u.z * u.y * t + u.x * s, c + u.z * u.z * t],
        ]))
    }

    /// Uniform random rotation (Shoemake quaternion method).
    pub fn random_uniform<R: rand::Rng>(rng: &mut R) -> Rotation {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let u3: f64 = rng.gen();
        let (s2, c2) = (2.0 * PI * u2).sin_cos();
        let (s3, c3) = (2.0 * PI * u3).sin_cos();
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let (w, x, y, z) = (a * s2, a * c2, b * s3, b * c3);
        Rotation([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Local frame to global frame.
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// Global frame to local frame (transpose).
    pub fn unapply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += self.0[i][k] * other.0[k][j];
                }
            }
        }
        Rotation(out)
    }
}

/// Linear motion state anchored at `reference_time`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Kinematics {
    pub position: Vec3,
    pub velocity: Vec3,
    pub orientation: Rotation,
    pub reference_time: f64,
}

impl Kinematics {
    pub fn static_at(position: Vec3) -> Kinematics {
        Kinematics {
            position,
            velocity: Vec3::ZERO,
            orientation: Rotation::IDENTITY,
            reference_time: 0.0,
        }
    }
}

/// Position at time t under linear motion.
pub fn propagate(k: &Kinematics, t: f64) -> Vec3 {
    k.position + k.velocity * (t - k.reference_time)
}

/// One-way channel state for an ordered source -> destination pair.
///
/// `outgoing` and `incoming` are the same global propagation direction
/// (destination minus source), expressed in the source's and destination's
/// local frames respectively. Matched forward/backward paths therefore see
/// antipodal angles.
#[derive(Clone, Copy, Debug)]
pub struct PathState {
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub loss_amp: f64,
    pub incoming: Angle,
    pub outgoing: Angle,
    pub distance_m: f64,
}

pub fn path_between(src: &Kinematics, dst: &Kinematics, fc: f64, t: f64) -> Result<PathState> {
    path_between_scaled(src, dst, fc, t, 1.0)
}

/// `loss_ref_m` rescales the amplitude loss model loss_ref/d (default 1 m).
pub fn path_between_scaled(
    src: &Kinematics,
    dst: &Kinematics,
    fc: f64,
    t: f64,
    loss_ref_m: f64,
) -> Result<PathState> {
    let d = propagate(dst, t) - propagate(src, t);
    let distance_m = d.norm();
    if distance_m == 0.0 {
        return Err(Error::ZeroDistance);
    }
    let u = d * (1.0 / distance_m);
    let v_rel = dst.velocity - src.velocity;
    let v_radial = u.dot(v_rel);
    Ok(PathState {
        delay_s: distance_m / C,
        doppler_hz: -fc * v_radial / C,
        loss_amp: loss_ref_m / distance_m,
        incoming: Angle::from_unit(dst.orientation.unapply(u))?,
        outgoing: Angle::from_unit(src.orientation.unapply(u))?,
        distance_m,
    })
}

/// Relative RMS error of the narrowband motion model (Doppler modulation of
/// the undilated envelope) against exact time dilation of the envelope,
/// computed by windowed-sinc resampling. `rho` is the radial velocity over c.
pub fn doppler_approx_error(u: &[Complex64], fc: f64, rho: f64, fs: f64) -> Result<f64> {
    if rho.abs() >= 1e-3 {
        return Err(Error::InvalidRho(rho));
    }
    if u.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    // Skip the resampler's window half-width at both ends so edge truncation
    // does not masquerade as modulation error.
    const HALF: usize = 32;
    if u.len() <= 4 * HALF {
        return Err(Error::InsufficientData { needed: 4 * HALF + 1, got: u.len() });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in HALF..u.len() - HALF {
        let t = i as f64 / fs;
        let phase = Complex64::from_polar(1.0, -2.0 * PI * fc * rho * t);
        let exact = phase * sinc_resample(u, i as f64 * (1.0 - rho), HALF);
        let approx = phase * u[i];
        num += (approx - exact).norm_sqr();
        den += exact.norm_sqr();
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).sqrt())
}

/// Hann-windowed sinc interpolation at a fractional sample position.
fn sinc_resample(u: &[Complex64], pos: f64, half: usize) -> Complex64 {
    let center = pos.floor() as i64;
    let mut acc = Complex64::new(0.0, 0.0);
    for n in center - half as i64 + 1..=center + half as i64 {
        if n < 0 || n as usize >= u.len() {
            continue;
        }
        let x = pos - n as f64;
        let s = if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        let w = 0.5 * (1.0 + (PI * x / half as f64).cos());
        acc += u[n as usize] * (s * w);
    }
    acc
}
