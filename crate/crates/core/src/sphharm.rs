//! Complex orthonormal spherical harmonics (Condon-Shortley phase), least
//! squares fitting on the sphere, and the separable rank-D antenna model
//! built from pairs of harmonic expansions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Angle;

pub const MAX_ORDER: usize = 31;

/// Truncation order of a harmonic expansion. The basis has (order+1)^2
/// functions, indexed by p = l^2 + l + m (zero based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShBasisSpec {
    pub order: usize,
}

impl ShBasisSpec {
    pub fn new(order: usize) -> Result<ShBasisSpec> {
        if order > MAX_ORDER {
            return Err(Error::Config(format!(
                "harmonic order {order} exceeds the supported maximum {MAX_ORDER}"
            )));
        }
        Ok(ShBasisSpec { order })
    }

    /// Number of basis functions P = (order + 1)^2.
    pub fn p(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }
}

/// Flat basis index of (l, m), zero based.
pub fn index_of(l: usize, m: i64) -> usize {
    (l * l) as usize + l + (m + l as i64) as usize - l
}

/// Inverse of `index_of`.
pub fn lm_of(p: usize) -> (usize, i64) {
    let l = (p as f64).sqrt().floor() as usize;
    let l = if (l + 1) * (l + 1) <= p { l + 1 } else { l };
    (l, p as i64 - (l * l + l) as i64)
}

/// Evaluate the basis vector ψ(θ): all Y_l^m for l ≤ order, ordered by
/// p = l^2 + l + m.
pub fn sh_eval(spec: ShBasisSpec, theta: Angle) -> Vec<Complex64> {
    let order = spec.order;
    let pol = theta.polar_deg.to_radians();
    let az = theta.azimuth_deg.to_radians();
    let (sin_t, cos_t) = pol.sin_cos();

    // Normalized theta-part p̃[l][m] for m >= 0 via the stable three-term
    // recurrences; the diagonal term carries the Condon-Shortley sign.
    let mut ptilde = vec![vec![0.0f64; order + 1]; order + 1];
    ptilde[0][0] = 0.5 / PI.sqrt();
    for m in 1..=order {
        let f = -((2.0 * m as f64 + 1.0) / (2.0 * m as f64)).sqrt();
        ptilde[m][m] = f * sin_t * ptilde[m - 1][m - 1];
    }
    for m in 0..order {
        ptilde[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * cos_t * ptilde[m][m];
    }
    for m in 0..=order {
        for l in m + 2..=order {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf)
                / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            ptilde[l][m] = a * (cos_t * ptilde[l - 1][m] - b * ptilde[l - 2][m]);
        }
    }

    let mut out = vec![Complex64::new(0.0, 0.0); spec.p()];
    for l in 0..=order {
        for m in 0..=l as i64 {
            let e = Complex64::from_polar(1.0, m as f64 * az);
            let y = e * ptilde[l][m as usize];
            out[index_of(l, m)] = y;
            if m > 0 {
                // Y_l^{-m} = (-1)^m conj(Y_l^m)
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                out[index_of(l, -m)] = y.conj() * sign;
            }
        }
    }
    out
}

/// A function on the sphere as a finite harmonic expansion; evaluates as the
/// plain (non-conjugated) dot product ψ(θ)ᵀ b.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShFunction {
    pub spec: ShBasisSpec,
    pub coeffs: Vec<Complex64>,
}

impl ShFunction {
    pub fn new(spec: ShBasisSpec, coeffs: Vec<Complex64>) -> Result<ShFunction> {
        if coeffs.len() != spec.p() {
            return Err(Error::Config(format!(
                "coefficient count {} does not match basis size {}",
                coeffs.len(),
                spec.p()
            )));
        }
        Ok(ShFunction { spec, coeffs })
    }

    /// Constant function with the given value (order-0 expansion).
    pub fn constant(value: Complex64) -> ShFunction {
        ShFunction {
            spec: ShBasisSpec { order: 0 },
            coeffs: vec![value * 2.0 * PI.sqrt()],
        }
    }

    pub fn eval(&self, theta: Angle) -> Complex64 {
        let psi = sh_eval(self.spec, theta);
        dot_t(&psi, &self.coeffs)
    }

    /// Evaluation against an already computed basis vector.
    pub fn eval_basis(&self, psi: &[Complex64]) -> Complex64 {
        dot_t(psi, &self.coeffs)
    }
}

fn dot_t(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least squares fit of harmonic coefficients to scattered samples, solving
/// min Σ|ψ(θ_i)ᵀ b − y_i|² + ridge·‖b‖² through the normal equations.
pub fn sh_fit(
    samples: &[(Angle, Complex64)],
    spec: ShBasisSpec,
    ridge: f64,
) -> Result<ShFunction> {
    let p = spec.p();
    if samples.len() < p {
        return Err(Error::InsufficientData { needed: p, got: samples.len() });
    }
    let a = DMatrix::from_fn(samples.len(), p, |i, j| sh_eval(spec, samples[i].0)[j]);
    let y = DVector::from_fn(samples.len(), |i, _| samples[i].1);
    solve_normal(&a, &y, ridge).and_then(|b| ShFunction::new(spec, b.iter().copied().collect()))
}

/// Normal-equation solve shared by the fitting routines. The design matrix is
/// used as-is (no conjugation); the normal matrix is AᴴA.
pub(crate) fn solve_normal(
    a: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    ridge: f64,
) -> Result<DVector<Complex64>> {
    let ah = a.adjoint();
    let mut n = &ah * a;
    let rhs = &ah * y;
    let svd = n.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if ridge == 0.0 {
        if cond > 1e12 {
            return Err(Error::RankDeficient { cond });
        }
        return svd
            .solve(&rhs, 0.0)
            .map_err(|_| Error::RankDeficient { cond });
    }
    for i in 0..n.nrows() {
        n[(i, i)] += Complex64::new(ridge, 0.0);
    }
    n.svd(true, true)
        .solve(&rhs, 0.0)
        .map_err(|_| Error::RankDeficient { cond })
}

/// Gauss-Legendre nodes and weights on (-1, 1), by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // P_n(x) and P_n'(x) by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        // Recompute derivative at the converged node for the weight.
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Spherical quadrature grid: Gauss-Legendre in the polar direction crossed
/// with a uniform azimuth ring. Weights sum to 4π.
pub fn quadrature_grid(n_polar: usize, n_azimuth: usize) -> Vec<(Angle, f64)> {
    let (nodes, weights) = gauss_legendre(n_polar);
    let mut grid = Vec::with_capacity(n_polar * n_azimuth);
    for (x, w) in nodes.iter().zip(&weights) {
        let polar = x.clamp(-1.0, 1.0).acos().to_degrees();
        for j in 0..n_azimuth {
            let az = 360.0 * j as f64 / n_azimuth as f64 - 180.0;
            grid.push((Angle::new(az, polar), w * 2.0 * PI / n_azimuth as f64));
        }
    }
    grid
}

/// Separable antenna response G(θ^s, θ) = Σ_d conj(g^s_d(θ^s)) g_d(θ).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AntennaModel {
    pub steer_factors: Vec<ShFunction>,
    pub field_factors: Vec<ShFunction>,
}

impl AntennaModel {
    pub fn new(steer_factors: Vec<ShFunction>, field_factors: Vec<ShFunction>) -> Result<AntennaModel> {
        if steer_factors.len() != field_factors.len() || steer_factors.is_empty() {
            return Err(Error::Config(
                "steer and field factor counts must match and be nonzero".into(),
            ));
        }
        let spec = steer_factors[0].spec;
        if steer_factors
            .iter()
            .chain(&field_factors)
            .any(|f| f.spec != spec)
        {
            return Err(Error::Config("all factors must share one basis spec".into()));
        }
        Ok(AntennaModel { steer_factors, field_factors })
    }

    /// Isotropic unit-gain radiator.
    pub fn isotropic() -> AntennaModel {
        AntennaModel {
            steer_factors: vec![ShFunction::constant(Complex64::new(1.0, 0.0))],
            field_factors: vec![ShFunction::constant(Complex64::new(1.0, 0.0))],
        }
    }

    pub fn rank(&self) -> usize {
        self.steer_factors.len()
    }

    pub fn spec(&self) -> ShBasisSpec {
        self.steer_factors[0].spec
    }

    /// Complex parameters stored: 2·P·D.
    pub fn parameter_count(&self) -> usize {
        2 * self.spec().p() * self.rank()
    }
}

pub fn antenna_gain(model: &AntennaModel, steer: Angle, theta: Angle) -> Complex64 {
    let psi_s = sh_eval(model.spec(), steer);
    let psi_f = sh_eval(model.spec(), theta);
    antenna_gain_basis(model, &psi_s, &psi_f)
}

pub fn antenna_gain_basis(
    model: &AntennaModel,
    psi_steer: &[Complex64],
    psi_field: &[Complex64],
) -> Complex64 {
    model
        .steer_factors
        .iter()
        .zip(&model.field_factors)
        .map(|(s, f)| s.eval_basis(psi_steer).conj() * f.eval_basis(psi_field))
        .sum()
}

/// Dense gain table sampled on a steer grid × field grid.
#[derive(Clone, Debug)]
pub struct GainTable {
    pub steer_grid: Vec<Angle>,
    pub field_grid: Vec<Angle>,
    /// values[i][j] = gain when steered to steer_grid[i], observed at field_grid[j]
    pub values: Vec<Vec<Complex64>>,
}

#[derive(Clone, Debug)]
pub struct AntennaFit {
    pub model: AntennaModel,
    pub train_nmse: f64,
    pub test_nmse: f64,
}

/// Fit a rank-D separable model to a measured gain table.
///
/// With `known_phase_geometry` (per-element steering factors sampled on the
/// steer grid, the usual plane-wave phases for a known array layout) the fit
/// is two exact linear solves: element field responses column by column, then
/// harmonic coefficients for every factor. Without it only D = 1 is
/// supported, via a dominant-singular-pair factorization.
///
/// Cells are split 9:1 (seeded) into train/test; only train cells drive the
/// solve and both normalized MSEs are reported.
pub fn fit_antenna_table(
    table: &GainTable,
    d: usize,
    spec: ShBasisSpec,
    known_phase_geometry: Option<&[Vec<Complex64>]>,
    seed: u64,
) -> Result<AntennaFit> {
    use rand::{Rng, SeedableRng};
    let ns = table.steer_grid.len();
    let nf = table.field_grid.len();
    if ns == 0 || nf == 0 || table.values.len() != ns || table.values.iter().any(|r| r.len() != nf)
    {
        return Err(Error::Config("table dimensions do not match grids".into()));
    }
    if d == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let test_mask: Vec<Vec<bool>> = (0..ns)
        .map(|_| (0..nf).map(|_| rng.gen::<f64>() < 0.1).collect())
        .collect();

    let model = match known_phase_geometry {
        Some(maps) => {
            if maps.len() != d {
                return Err(Error::Config(format!(
                    "geometry supplies {} element maps but rank {d} requested",
                    maps.len()
                )));
            }
            if maps.iter().any(|m| m.len() != ns) {
                return Err(Error::Config(
                    "element maps must be sampled on the steer grid".into(),
                ));
            }
            fit_known_geometry(table, maps, spec, &test_mask)?
        }
        None if d == 1 => fit_rank_one(table, spec, &test_mask)?,
        None => {
            return Err(Error::UnsupportedFit(
                "rank-constrained fitting without element geometry is limited to D = 1".into(),
            ))
        }
    };

    // Score on both cell classes.
    let psi_s: Vec<Vec<Complex64>> = table.steer_grid.iter().map(|&a| sh_eval(spec, a)).collect();
    let psi_f: Vec<Vec<Complex64>> = table.field_grid.iter().map(|&a| sh_eval(spec, a)).collect();
    let (mut tr_err, mut tr_pow, mut te_err, mut te_pow) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..ns {
        for j in 0..nf {
            let g = antenna_gain_basis(&model, &psi_s[i], &psi_f[j]);
            let e = (g - table.values[i][j]).norm_sqr();
            let p = table.values[i][j].norm_sqr();
            if test_mask[i][j] {
                te_err += e;
                te_pow += p;
            } else {
                tr_err += e;
                tr_pow += p;
            }
        }
    }
    Ok(AntennaFit {
        model,
        train_nmse: if tr_pow > 0.0 { tr_err / tr_pow } else { 0.0 },
        test_nmse: if te_pow > 0.0 { te_err / te_pow } else { 0.0 },
    })
}

fn fit_known_geometry(
    table: &GainTable,
    maps: &[Vec<Complex64>],
    spec: ShBasisSpec,
    test_mask: &[Vec<bool>],
) -> Result<AntennaModel> {
    let ns = table.steer_grid.len();
    let nf = table.field_grid.len();
    let d = maps.len();
    // Per field direction j: values[:, j] = conj(W) f_j over train rows.
    let mut field_samples: Vec<Vec<(Angle, Complex64)>> = vec![Vec::with_capacity(nf); d];
    for j in 0..nf {
        let rows: Vec<usize> = (0..ns).filter(|&i| !test_mask[i][j]).collect();
        if rows.len() < d {
            return Err(Error::InsufficientData { needed: d, got: rows.len() });
        }
        let a = DMatrix::from_fn(rows.len(), d, |r, k| maps[k][rows[r]].conj());
        let y = DVector::from_fn(rows.len(), |r, _| table.values[rows[r]][j]);
        let f = solve_normal(&a, &y, 0.0)?;
        for k in 0..d {
            field_samples[k].push((table.field_grid[j], f[k]));
        }
    }
    let steer_factors = maps
        .iter()
        .map(|m| {
            let samples: Vec<(Angle, Complex64)> = table
                .steer_grid
                .iter()
                .copied()
                .zip(m.iter().copied())
                .collect();
            sh_fit(&samples, spec, 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let field_factors = field_samples
        .iter()
        .map(|s| sh_fit(s, spec, 0.0))
        .collect::<Result<Vec<_>>>()?;
    AntennaModel::new(steer_factors, field_factors)
}

fn fit_rank_one(
    table: &GainTable,
    spec: ShBasisSpec,
    test_mask: &[Vec<bool>],
) -> Result<AntennaModel> {
    let ns = table.steer_grid.len();
    let nf = table.field_grid.len();
    // Alternating least squares for T_ij = conj(s_i) f_j over the train
    // cells only; exact for a noiseless rank-1 table, and held-out cells
    // never leak into the solve.
    // Seed with the most energetic train row: for rank-1 data that row is
    // already proportional to f.
    let i0 = (0..ns)
        .max_by(|&a, &b| {
            let ea: f64 = (0..nf)
                .filter(|&j| !test_mask[a][j])
                .map(|j| table.values[a][j].norm_sqr())
                .sum();
            let eb: f64 = (0..nf)
                .filter(|&j| !test_mask[b][j])
                .map(|j| table.values[b][j].norm_sqr())
                .sum();
            ea.total_cmp(&eb)
        })
        .unwrap();
    let mut f: Vec<Complex64> = (0..nf)
        .map(|j| {
            if test_mask[i0][j] {
                Complex64::new(0.0, 0.0)
            } else {
                table.values[i0][j]
            }
        })
        .collect();
    if f.iter().all(|v| v.norm() == 0.0) {
        f = vec![Complex64::new(1.0, 0.0); nf];
    }
    let mut s = vec![Complex64::new(0.0, 0.0); ns];
    for _ in 0..60 {
        for (i, si) in s.iter_mut().enumerate() {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for j in 0..nf {
                if !test_mask[i][j] {
                    num += table.values[i][j] * f[j].conj();
                    den += f[j].norm_sqr();
                }
            }
            *si = if den > 0.0 { (num / den).conj() } else { Complex64::new(0.0, 0.0) };
        }
        for (j, fj) in f.iter_mut().enumerate() {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for (i, si) in s.iter().enumerate() {
                if !test_mask[i][j] {
                    num += table.values[i][j] * si;
                    den += si.norm_sqr();
                }
            }
            *fj = if den > 0.0 { num / den } else { Complex64::new(0.0, 0.0) };
        }
    }
    let steer_samples: Vec<(Angle, Complex64)> = table
        .steer_grid
        .iter()
        .copied()
        .zip(s.iter().copied())
        .collect();
    let field_samples: Vec<(Angle, Complex64)> = table
        .field_grid
        .iter()
        .copied()
        .zip(f.iter().copied())
        .collect();
    AntennaModel::new(
        vec![sh_fit(&steer_samples, spec, 0.0)?],
        vec![sh_fit(&field_samples, spec, 0.0)?],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_angle(rng: &mut ChaCha8Rng) -> Angle {
        // cos-uniform polar keeps samples spread over the sphere
        let z: f64 = rng.gen_range(-1.0..1.0);
        Angle::new(rng.gen_range(-180.0..180.0), z.acos().to_degrees())
    }

    #[test]
    fn low_order_closed_forms() {
        let spec = ShBasisSpec::new(1).unwrap();
        let at_pole = sh_eval(spec, Angle::new(0.0, 0.0));
        assert!((at_pole[0].re - 0.5 / PI.sqrt()).abs() < 1e-15);
        assert!(at_pole[index_of(1, -1)].norm() < 1e-15);
        assert!(at_pole[index_of(1, 1)].norm() < 1e-15);
        assert!((at_pole[index_of(1, 0)].re - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);

        // Y_1^1 = -sqrt(3/8π) sinϑ e^{jφ}
        let th = Angle::new(40.0, 70.0);
        let y = sh_eval(spec, th);
        let want = Complex64::from_polar(
            (3.0 / (8.0 * PI)).sqrt() * th.polar_deg.to_radians().sin(),
            40f64.to_radians(),
        ) * -1.0;
        assert!((y[index_of(1, 1)] - want).norm() < 1e-15);
    }

    #[test]
    fn conjugation_symmetry() {
        let spec = ShBasisSpec::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let y = sh_eval(spec, rand_angle(&mut rng));
            for l in 0..=8usize {
                for m in 1..=l as i64 {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    let lhs = y[index_of(l, -m)];
                    let rhs = y[index_of(l, m)].conj() * sign;
                    assert!((lhs - rhs).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn addition_theorem_at_max_order() {
        // Σ_m |Y_l^m|² = (2l+1)/4π, independent of direction.
        let spec = ShBasisSpec::new(MAX_ORDER).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..6 {
            let y = sh_eval(spec, rand_angle(&mut rng));
            for l in 0..=MAX_ORDER {
                let sum: f64 = (-(l as i64)..=l as i64)
                    .map(|m| y[index_of(l, m)].norm_sqr())
                    .sum();
                let want = (2.0 * l as f64 + 1.0) / (4.0 * PI);
                assert!(
                    (sum - want).abs() < 1e-11 * want.max(1.0),
                    "l={l}: {sum} vs {want}"
                );
            }
        }
    }

    #[test]
    fn quadrature_gram_matrix_is_identity() {
        let spec = ShBasisSpec::new(15).unwrap();
        let p = spec.p();
        let grid = quadrature_grid(64, 128);
        let mut gram = DMatrix::<Complex64>::zeros(p, p);
        for (theta, w) in &grid {
            let y = DVector::from_vec(sh_eval(spec, *theta));
            gram += &y * y.adjoint() * Complex64::new(*w, 0.0);
        }
        let mut max_dev = 0.0f64;
        for i in 0..p {
            for j in 0..p {
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        assert!(max_dev < 1e-10, "gram deviation {max_dev}");
    }

    #[test]
    fn quadrature_weights_cover_sphere() {
        let grid = quadrature_grid(16, 32);
        let total: f64 = grid.iter().map(|(_, w)| w).sum();
        assert!((total - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn index_mapping_is_a_bijection() {
        for order in 0..=5usize {
            let p = (order + 1) * (order + 1);
            let mut seen = vec![false; p];
            for l in 0..=order {
                for m in -(l as i64)..=l as i64 {
                    let idx = index_of(l, m);
                    assert!(idx < p && !seen[idx], "collision at l={l} m={m}");
                    seen[idx] = true;
                    assert_eq!(lm_of(idx), (l, m));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn fit_round_trip_recovers_coefficients() {
        let spec = ShBasisSpec::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coeffs: Vec<Complex64> = (0..spec.p())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let truth = ShFunction::new(spec, coeffs.clone()).unwrap();
        let samples: Vec<(Angle, Complex64)> = (0..200)
            .map(|_| {
                let a = rand_angle(&mut rng);
                (a, truth.eval(a))
            })
            .collect();
        let fit = sh_fit(&samples, spec, 0.0).unwrap();
        let scale: f64 = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (a, b) in fit.coeffs.iter().zip(&coeffs) {
            assert!((a - b).norm() < 1e-8 * scale);
        }
    }

    #[test]
    fn fit_constant_gives_dc_coefficient() {
        let spec = ShBasisSpec::new(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<(Angle, Complex64)> = (0..16)
            .map(|_| (rand_angle(&mut rng), Complex64::new(1.0, 0.0)))
            .collect();
        let fit = sh_fit(&samples, spec, 0.0).unwrap();
        assert!((fit.coeffs[0].re - 2.0 * PI.sqrt()).abs() < 1e-12);
        assert!(fit.coeffs[0].im.abs() < 1e-12);
    }

    #[test]
    fn nested_fit_leaves_high_orders_empty() {
        let spec3 = ShBasisSpec::new(3).unwrap();
        let spec5 = ShBasisSpec::new(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let coeffs: Vec<Complex64> = (0..spec3.p())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let truth = ShFunction::new(spec3, coeffs).unwrap();
        let samples: Vec<(Angle, Complex64)> = (0..300)
            .map(|_| {
                let a = rand_angle(&mut rng);
                (a, truth.eval(a))
            })
            .collect();
        let fit = sh_fit(&samples, spec5, 0.0).unwrap();
        for p in spec3.p()..spec5.p() {
            assert!(fit.coeffs[p].norm() < 1e-8, "leakage at p={p}");
        }
    }

    #[test]
    fn degenerate_samples_are_rank_deficient() {
        let spec = ShBasisSpec::new(2).unwrap();
        let a = Angle::new(10.0, 60.0);
        let samples: Vec<(Angle, Complex64)> =
            (0..20).map(|_| (a, Complex64::new(1.0, 0.0))).collect();
        assert!(matches!(
            sh_fit(&samples, spec, 0.0),
            Err(Error::RankDeficient { .. })
        ));
        // Ridge regularizes the same system.
        assert!(sh_fit(&samples, spec, 1e-6).is_ok());
    }

    #[test]
    fn isotropic_model_is_unit_gain() {
        let model = AntennaModel::isotropic();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let g = antenna_gain(&model, rand_angle(&mut rng), rand_angle(&mut rng));
            assert!((g - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn gain_is_conjugate_linear_in_steer_factors() {
        let spec = ShBasisSpec::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rand_fn = |rng: &mut ChaCha8Rng| {
            ShFunction::new(
                spec,
                (0..spec.p())
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap()
        };
        let s1 = rand_fn(&mut rng);
        let s2 = rand_fn(&mut rng);
        let f1 = rand_fn(&mut rng);
        let f2 = rand_fn(&mut rng);
        let model = AntennaModel::new(vec![s1.clone(), s2.clone()], vec![f1.clone(), f2.clone()])
            .unwrap();
        let alpha = Complex64::new(0.3, -1.7);
        let scaled = AntennaModel::new(
            vec![
                ShFunction::new(spec, s1.coeffs.iter().map(|c| c * alpha).collect()).unwrap(),
                ShFunction::new(spec, s2.coeffs.iter().map(|c| c * alpha).collect()).unwrap(),
            ],
            vec![f1, f2],
        )
        .unwrap();
        for _ in 0..5 {
            let steer = rand_angle(&mut rng);
            let theta = rand_angle(&mut rng);
            let g = antenna_gain(&model, steer, theta);
            let gs = antenna_gain(&scaled, steer, theta);
            assert!((gs - g * alpha.conj()).norm() < 1e-12 * g.norm().max(1.0));
        }
    }

    fn sparse_sphere_grid(n_polar: usize, n_az: usize) -> Vec<Angle> {
        quadrature_grid(n_polar, n_az).into_iter().map(|(a, _)| a).collect()
    }

    /// Quadrature projection of an arbitrary pattern onto a truncated basis.
    fn project(spec: ShBasisSpec, f: impl Fn(Angle) -> Complex64) -> ShFunction {
        let grid = quadrature_grid(2 * spec.order + 4, 4 * spec.order + 8);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); spec.p()];
        for (a, w) in grid {
            let psi = sh_eval(spec, a);
            let v = f(a);
            for (c, y) in coeffs.iter_mut().zip(&psi) {
                *c += y.conj() * v * w;
            }
        }
        ShFunction::new(spec, coeffs).unwrap()
    }

    #[test]
    fn known_geometry_array_refit_is_exact() {
        // 2x2 half-wavelength array of order-1 elements. The truth is made
        // exactly band limited: steer factors are order-9 projections of the
        // element plane-wave phases, field factors the (order <= 10) products
        // with the element pattern. Refitting at order 10 must then hit float
        // accuracy on held-out cells.
        let positions = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(0.0, 0.5, 0.0),
            Vec3::new(0.5, 0.5, 0.0),
        ];
        let spec1 = ShBasisSpec::new(1).unwrap();
        let spec9 = ShBasisSpec::new(9).unwrap();
        let spec10 = ShBasisSpec::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let element = ShFunction::new(
            spec1,
            (0..spec1.p())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        let steer_true: Vec<ShFunction> = positions
            .iter()
            .map(|&p| {
                project(spec9, |a| {
                    Complex64::from_polar(1.0, 2.0 * PI * p.dot(a.unit()))
                })
            })
            .collect();

        let grid = sparse_sphere_grid(12, 24);
        let maps: Vec<Vec<Complex64>> = steer_true
            .iter()
            .map(|s| grid.iter().map(|&a| s.eval(a)).collect())
            .collect();
        let field_vals: Vec<Vec<Complex64>> = steer_true
            .iter()
            .map(|s| {
                grid.iter()
                    .map(|&a| s.eval(a) * element.eval(a))
                    .collect()
            })
            .collect();
        let values: Vec<Vec<Complex64>> = (0..grid.len())
            .map(|i| {
                (0..grid.len())
                    .map(|j| {
                        (0..4)
                            .map(|d| maps[d][i].conj() * field_vals[d][j])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let table = GainTable {
            steer_grid: grid.clone(),
            field_grid: grid.clone(),
            values,
        };
        let fit = fit_antenna_table(&table, 4, spec10, Some(&maps), 99).unwrap();
        assert!(fit.train_nmse < 1e-8, "train {}", fit.train_nmse);
        assert!(fit.test_nmse < 1e-8, "test {}", fit.test_nmse);
    }

    #[test]
    fn rank_one_fallback_recovers_single_element() {
        let spec = ShBasisSpec::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let steer = ShFunction::new(
            spec,
            (0..spec.p())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        let field = ShFunction::new(
            spec,
            (0..spec.p())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        let truth = AntennaModel::new(vec![steer], vec![field]).unwrap();
        let grid = sparse_sphere_grid(10, 20);
        let values: Vec<Vec<Complex64>> = grid
            .iter()
            .map(|&s| grid.iter().map(|&f| antenna_gain(&truth, s, f)).collect())
            .collect();
        let table = GainTable {
            steer_grid: grid.clone(),
            field_grid: grid.clone(),
            values,
        };
        let fit = fit_antenna_table(&table, 1, spec, None, 7).unwrap();
        for _ in 0..20 {
            let s = rand_angle(&mut rng);
            let f = rand_angle(&mut rng);
            let got = antenna_gain(&fit.model, s, f);
            let want = antenna_gain(&truth, s, f);
            assert!((got - want).norm() < 1e-9, "{got} vs {want}");
        }
        assert!(matches!(
            fit_antenna_table(&table, 2, spec, None, 7),
            Err(Error::UnsupportedFit(_))
        ));
    }

    #[test]
    fn order_sweep_has_knee_by_order_three() {
        // Smooth dipole-like single element: a tilted von Mises-Fisher lobe.
        // Analytic, so its harmonic tail never vanishes, and the fit error
        // must fall monotonically with a collapse by order 3.
        let grid = sparse_sphere_grid(12, 24);
        let axis = Vec3::new(0.3, -0.5, 0.8).normalized().unwrap();
        let pattern = |a: Angle| {
            let u = a.unit();
            Complex64::new((3.0 * (u.dot(axis) - 1.0)).exp(), 0.0)
        };
        let values: Vec<Vec<Complex64>> = (0..grid.len())
            .map(|_i| grid.iter().map(|&f| pattern(f)).collect())
            .collect();
        let table = GainTable {
            steer_grid: grid.clone(),
            field_grid: grid.clone(),
            values,
        };
        let maps = vec![vec![Complex64::new(1.0, 0.0); grid.len()]];
        let mut errs = Vec::new();
        for order in 0..=4 {
            let spec = ShBasisSpec::new(order).unwrap();
            let fit = fit_antenna_table(&table, 1, spec, Some(&maps), 3).unwrap();
            errs.push(fit.train_nmse);
        }
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "not monotone: {errs:?}");
        }
        assert!(
            errs[3] < 0.05 * errs[0],
            "no knee by order 3: {errs:?}"
        );
    }

    #[test]
    fn parameter_count_matches_rank_times_basis() {
        let spec = ShBasisSpec::new(3).unwrap();
        let factor = ShFunction::new(spec, vec![Complex64::new(0.0, 0.0); spec.p()]).unwrap();
        let model = AntennaModel::new(vec![factor.clone(); 169], vec![factor; 169]).unwrap();
        assert_eq!(model.parameter_count(), 5408);
    }
}
