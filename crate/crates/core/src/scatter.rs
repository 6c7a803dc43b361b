//! Point-scatter models: separable bistatic profiles, scatterer delay
//! geometry, fitting from monostatic tables (grid matching pursuit) and
//! bistatic samples (alternating least squares), and Swerling fluctuation
//! profiles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{steering_vector, Angle, Vec3};
use crate::sphharm::{quadrature_grid, sh_eval, ShBasisSpec, ShFunction};

/// Profile size cap enforced when a profile enters an emulation scenario.
/// Fitting and statistics utilities may build larger ones.
pub const K_MAX: usize = 16;

/// One scattering point: a location in the owning node's local frame and the
/// harmonic coefficients of its incoming (α) and outgoing (β) angular
/// factors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub location: Vec3,
    pub in_coeffs: Vec<Complex64>,
    pub out_coeffs: Vec<Complex64>,
}

/// Separable bistatic scattering profile h(t; θ^i, θ^o).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatterProfile {
    pub spec: ShBasisSpec,
    pub points: Vec<ScatterPoint>,
}

impl ScatterProfile {
    pub fn empty(spec: ShBasisSpec) -> ScatterProfile {
        ScatterProfile { spec, points: Vec::new() }
    }

    pub fn new(spec: ShBasisSpec, points: Vec<ScatterPoint>) -> Result<ScatterProfile> {
        for pt in &points {
            if pt.in_coeffs.len() != spec.p() || pt.out_coeffs.len() != spec.p() {
                return Err(Error::Config(format!(
                    "scatter point coefficient length does not match basis size {}",
                    spec.p()
                )));
            }
        }
        Ok(ScatterProfile { spec, points })
    }

    /// Point with angle-independent α = weight and β = 1.
    pub fn isotropic_point(location: Vec3, weight: Complex64) -> ScatterPoint {
        let dc = 2.0 * PI.sqrt();
        ScatterPoint {
            location,
            in_coeffs: vec![weight * dc],
            out_coeffs: vec![Complex64::new(dc, 0.0)],
        }
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    /// Stored numbers per the separable representation: K(2P + 3).
    pub fn storage_numbers(&self) -> usize {
        self.points.len() * (2 * self.spec.p() + 3)
    }

    pub fn alpha(&self, k: usize, theta_in: Angle) -> Complex64 {
        self.alpha_basis(k, &sh_eval(self.spec, theta_in))
    }

    pub fn beta(&self, k: usize, theta_out: Angle) -> Complex64 {
        self.beta_basis(k, &sh_eval(self.spec, theta_out))
    }

    pub fn alpha_basis(&self, k: usize, psi: &[Complex64]) -> Complex64 {
        dot_t(psi, &self.points[k].in_coeffs)
    }

    pub fn beta_basis(&self, k: usize, psi: &[Complex64]) -> Complex64 {
        dot_t(psi, &self.points[k].out_coeffs)
    }
}

fn dot_t(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-point incoming/outgoing delay offsets (x_kᵀ a(θ)).
pub fn scatter_delays(point: &ScatterPoint, theta_in: Angle, theta_out: Angle) -> (f64, f64) {
    (
        point.location.dot(steering_vector(theta_in)),
        point.location.dot(steering_vector(theta_out)),
    )
}

/// Tap list of the profile at one angle pair: per point the net delay
/// τ^i_k − τ^o_k (positive = later) and the weight α_k(θ^i)·β_k(θ^o).
pub fn scatter_response(
    profile: &ScatterProfile,
    theta_in: Angle,
    theta_out: Angle,
) -> Vec<(f64, Complex64)> {
    let psi_in = sh_eval(profile.spec, theta_in);
    let psi_out = sh_eval(profile.spec, theta_out);
    profile
        .points
        .iter()
        .enumerate()
        .map(|(k, pt)| {
            let (ti, to) = scatter_delays(pt, theta_in, theta_out);
            (
                ti - to,
                profile.alpha_basis(k, &psi_in) * profile.beta_basis(k, &psi_out),
            )
        })
        .collect()
}

/// Monostatic response samples over a frequency sweep and a look-direction
/// grid. Angles are incoming propagation directions in the profile frame.
#[derive(Clone, Debug)]
pub struct MonostaticTable {
    pub frequencies: Vec<f64>,
    pub angles: Vec<Angle>,
    /// values[fi][ai]
    pub values: Vec<Vec<Complex64>>,
}

impl MonostaticTable {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.frequencies.len()
            || self.values.iter().any(|r| r.len() != self.angles.len())
        {
            return Err(Error::Config("table dimensions do not match grids".into()));
        }
        if self.frequencies.len() > 2 {
            let step = self.frequencies[1] - self.frequencies[0];
            for w in self.frequencies.windows(2) {
                if ((w[1] - w[0]) - step).abs() > 1e-6 * step.abs() {
                    return Err(Error::Config("frequency spacing is not uniform".into()));
                }
            }
        }
        Ok(())
    }

    pub fn energy(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|r| r.iter())
            .map(|v| v.norm_sqr())
            .sum()
    }
}

/// Monostatic model value of a profile: the antipodal outgoing direction and
/// the 2τ(θ) round-trip phase at each point.
pub fn monostatic_eval(profile: &ScatterProfile, f: f64, theta: Angle) -> Complex64 {
    let theta_out = Angle::from_unit(-theta.unit()).expect("unit vector");
    let psi_in = sh_eval(profile.spec, theta);
    let psi_out = sh_eval(profile.spec, theta_out);
    profile
        .points
        .iter()
        .enumerate()
        .map(|(k, pt)| {
            let tau = pt.location.dot(steering_vector(theta));
            Complex64::from_polar(1.0, -2.0 * PI * f * 2.0 * tau)
                * profile.alpha_basis(k, &psi_in)
                * profile.beta_basis(k, &psi_out)
        })
        .sum()
}

/// Greedy grid fit of K scattering locations plus per-point harmonic weights
/// to a monostatic table.
///
/// The dictionary block of a candidate location couples the round-trip phase
/// e^{−j2πf·2τ_g(θ)} with each basis function ψ_p(θ). Selection maximizes the
/// residual block correlation ‖A_gᴴ r‖ (ties to the lowest grid index); after
/// every selection the coefficients of all chosen points are re-solved
/// jointly, so the training residual is nonincreasing in K. The fitted
/// angular response lands in the incoming factor; outgoing factors are set
/// isotropic.
pub fn omp_fit_monostatic(
    table: &MonostaticTable,
    grid: &[Vec3],
    k: usize,
    spec: ShBasisSpec,
) -> Result<ScatterProfile> {
    table.validate()?;
    let p = spec.p();
    let n_samples = table.frequencies.len() * table.angles.len();
    if grid.is_empty() && k > 0 {
        return Err(Error::Config("empty candidate grid".into()));
    }
    let unknowns = p * k.min(grid.len()).max(1);
    if n_samples < unknowns {
        return Err(Error::InsufficientData { needed: unknowns, got: n_samples });
    }

    let psi: Vec<Vec<Complex64>> = table.angles.iter().map(|&a| sh_eval(spec, a)).collect();
    // Per grid location, per angle: round-trip delay 2τ_g(θ).
    let block = |g: usize| -> DMatrix<Complex64> {
        DMatrix::from_fn(n_samples, p, |s, q| {
            let (fi, ai) = (s / table.angles.len(), s % table.angles.len());
            let tau = grid[g].dot(steering_vector(table.angles[ai]));
            Complex64::from_polar(1.0, -2.0 * PI * table.frequencies[fi] * 2.0 * tau)
                * psi[ai][q]
        })
    };
    let y = DVector::from_fn(n_samples, |s, _| {
        table.values[s / table.angles.len()][s % table.angles.len()]
    });

    let mut selected: Vec<usize> = Vec::new();
    let mut residual = y.clone();
    let mut coeffs = DVector::from_element(0, Complex64::new(0.0, 0.0));
    for _ in 0..k.min(grid.len()) {
        let mut best = (0usize, -1.0f64);
        for g in 0..grid.len() {
            if selected.contains(&g) {
                continue;
            }
            let score = (block(g).adjoint() * &residual).norm_squared();
            if score > best.1 + 1e-12 * best.1.abs() {
                best = (g, score);
            }
        }
        selected.push(best.0);
        // Joint re-solve over all selected blocks.
        let mut a = DMatrix::zeros(n_samples, p * selected.len());
        for (si, &g) in selected.iter().enumerate() {
            a.view_mut((0, si * p), (n_samples, p)).copy_from(&block(g));
        }
        coeffs = crate::sphharm::solve_normal(&a, &y, 0.0)?;
        residual = &y - &a * &coeffs;
    }

    let points = selected
        .iter()
        .enumerate()
        .map(|(si, &g)| ScatterPoint {
            location: grid[g],
            in_coeffs: coeffs.as_slice()[si * p..(si + 1) * p].to_vec(),
            out_coeffs: isotropic_unit_coeffs(spec),
        })
        .collect();
    ScatterProfile::new(spec, points)
}

fn isotropic_unit_coeffs(spec: ShBasisSpec) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(0.0, 0.0); spec.p()];
    c[0] = Complex64::new(2.0 * PI.sqrt(), 0.0);
    c
}

/// Bistatic sample model value used by the alternating fit.
pub fn bistatic_eval(
    profile: &ScatterProfile,
    theta_in: Angle,
    theta_out: Angle,
    f: f64,
) -> Complex64 {
    scatter_response(profile, theta_in, theta_out)
        .iter()
        .map(|&(delay, w)| w * Complex64::from_polar(1.0, -2.0 * PI * f * delay))
        .sum()
}

/// Alternating least squares for the separable bistatic model at fixed
/// locations: solve all incoming factors jointly, then all outgoing factors,
/// rebalancing ‖b^i_k‖ = ‖b^o_k‖ each iteration (the per-point complex scale
/// is not identifiable; only the products are).
pub fn bilinear_fit_bistatic(
    samples: &[(Angle, Angle, f64, Complex64)],
    locations: &[Vec3],
    spec: ShBasisSpec,
    iters: usize,
) -> Result<ScatterProfile> {
    let p = spec.p();
    let kn = locations.len();
    if iters == 0 {
        return Err(Error::Config("need at least one iteration".into()));
    }
    if kn == 0 {
        return Ok(ScatterProfile::empty(spec));
    }
    if samples.len() < kn * p {
        return Err(Error::InsufficientData { needed: kn * p, got: samples.len() });
    }

    // Precompute per-sample bases and per-point phase factors.
    let psi_in: Vec<Vec<Complex64>> = samples.iter().map(|s| sh_eval(spec, s.0)).collect();
    let psi_out: Vec<Vec<Complex64>> = samples.iter().map(|s| sh_eval(spec, s.1)).collect();
    let phase: Vec<Vec<Complex64>> = samples
        .iter()
        .map(|&(ti, to, f, _)| {
            locations
                .iter()
                .map(|&x| {
                    let d = x.dot(steering_vector(ti)) - x.dot(steering_vector(to));
                    Complex64::from_polar(1.0, -2.0 * PI * f * d)
                })
                .collect()
        })
        .collect();
    let y = DVector::from_fn(samples.len(), |s, _| samples[s].3);

    let mut b_in = vec![vec![Complex64::new(0.0, 0.0); p]; kn];
    let mut b_out = vec![isotropic_unit_coeffs(spec); kn];
    for _ in 0..iters {
        // Incoming solve with outgoing fixed.
        let a_in = DMatrix::from_fn(samples.len(), kn * p, |s, col| {
            let (k, q) = (col / p, col % p);
            phase[s][k] * dot_t(&psi_out[s], &b_out[k]) * psi_in[s][q]
        });
        let sol = crate::sphharm::solve_normal(&a_in, &y, 0.0)?;
        for k in 0..kn {
            b_in[k].copy_from_slice(&sol.as_slice()[k * p..(k + 1) * p]);
        }
        // Outgoing solve with incoming fixed.
        let a_out = DMatrix::from_fn(samples.len(), kn * p, |s, col| {
            let (k, q) = (col / p, col % p);
            phase[s][k] * dot_t(&psi_in[s], &b_in[k]) * psi_out[s][q]
        });
        let sol = crate::sphharm::solve_normal(&a_out, &y, 0.0)?;
        for k in 0..kn {
            b_out[k].copy_from_slice(&sol.as_slice()[k * p..(k + 1) * p]);
        }
        // Rebalance the unidentifiable per-point scale.
        for k in 0..kn {
            let ni = b_in[k].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let no = b_out[k].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if ni > 0.0 && no > 0.0 {
                let g = (ni * no).sqrt();
                for c in &mut b_in[k] {
                    *c *= g / ni;
                }
                for c in &mut b_out[k] {
                    *c *= g / no;
                }
            }
        }
    }

    let points = (0..kn)
        .map(|k| ScatterPoint {
            location: locations[k],
            in_coeffs: b_in[k].clone(),
            out_coeffs: b_out[k].clone(),
        })
        .collect();
    ScatterProfile::new(spec, points)
}

/// Sum of squared residuals of a profile against bistatic samples.
pub fn bistatic_objective(
    profile: &ScatterProfile,
    samples: &[(Angle, Angle, f64, Complex64)],
) -> f64 {
    samples
        .iter()
        .map(|&(ti, to, f, v)| (bistatic_eval(profile, ti, to, f) - v).norm_sqr())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwerlingKind {
    One,
    Three,
}

/// Random isotropic-point profile matching the classic fluctuation models:
/// kind One spreads unit total power equally over `count` points, kind Three
/// concentrates at least 90% in a single dominant point. Locations are
/// uniform in a cube of side `extent_m`; deterministic per seed.
pub fn swerling_profile(
    kind: SwerlingKind,
    count: usize,
    extent_m: f64,
    seed: u64,
) -> Result<ScatterProfile> {
    match kind {
        SwerlingKind::One if count < 10 => {
            return Err(Error::Config(format!(
                "equal-weight fluctuation needs at least 10 points, got {count}"
            )))
        }
        SwerlingKind::Three if count == 0 => {
            return Err(Error::Config("need at least one point".into()));
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ShBasisSpec::new(0)?;
    let half = extent_m / 2.0;
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let loc = Vec3::new(
            rng.gen_range(-half..=half),
            rng.gen_range(-half..=half),
            rng.gen_range(-half..=half),
        );
        let w = match kind {
            SwerlingKind::One => (1.0 / count as f64).sqrt(),
            SwerlingKind::Three if count == 1 => 1.0,
            SwerlingKind::Three if i == 0 => 0.905f64.sqrt(),
            SwerlingKind::Three => (0.095 / (count - 1) as f64).sqrt(),
        };
        points.push(ScatterProfile::isotropic_point(loc, Complex64::new(w, 0.0)));
    }
    ScatterProfile::new(spec, points)
}

/// Order-limited projection of a hemispherical indicator pattern (1 where
/// u·axis > 0, else 0), the step-pattern used by the spectrum experiment.
pub fn hemisphere_projection(spec: ShBasisSpec, axis: Vec3) -> Result<ShFunction> {
    let ax = axis.normalized()?;
    let grid = quadrature_grid(2 * spec.order + 8, 4 * spec.order + 16);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); spec.p()];
    for (a, w) in grid {
        if a.unit().dot(ax) > 0.0 {
            let psi = sh_eval(spec, a);
            for (c, yv) in coeffs.iter_mut().zip(&psi) {
                *c += yv.conj() * w;
            }
        }
    }
    ShFunction::new(spec, coeffs)
}
