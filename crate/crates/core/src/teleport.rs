//! Numerical verification that MDI-style detection reproduces direct
//! heterodyne detection up to additive Gaussian noise that vanishes as the
//! resource squeezing (or the modulation variance standing in for it) grows.
//!
//! Schemes are compared through the exact Gaussian law of the final
//! heterodyne outcome (mean map plus covariance); Monte Carlo never enters.
//! Conventions: shot-noise units, heterodyne adds one unit of variance per
//! quadrature, the two-mode squeezed vacuum has diagonal `cosh(2r)` and
//! correlations `±sinh(2r)`.

use nalgebra::{Matrix2, SMatrix, Vector2};

use crate::error::{Error, Result};
use crate::gaussian::CovarianceMatrix;

/// A single-mode Gaussian quantum state in shot-noise units; its covariance
/// must dominate the vacuum (`cov >= I` up to tolerance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianInputState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Tolerance on the uncertainty checks of [`GaussianInputState`].
const STATE_TOL: f64 = 1e-9;

impl GaussianInputState {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self> {
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "state".into(),
                reason: "entries must be finite".into(),
            });
        }
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::InvalidParameter {
                name: "cov".into(),
                reason: "covariance must be symmetric".into(),
            });
        }
        let shifted = cov - Matrix2::identity();
        let min_eig = symmetric2_min_eigenvalue(&shifted);
        if min_eig < -STATE_TOL {
            return Err(Error::InvalidParameter {
                name: "cov".into(),
                reason: format!("covariance must dominate the vacuum; min eig of cov - I is {min_eig:e}"),
            });
        }
        if cov.determinant() < 1.0 - STATE_TOL {
            return Err(Error::InvalidParameter {
                name: "cov".into(),
                reason: "determinant below the uncertainty bound".into(),
            });
        }
        Ok(Self { mean, cov })
    }

    pub fn vacuum() -> Self {
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::identity(),
        }
    }

    pub fn coherent(mean: Vector2<f64>) -> Self {
        Self {
            mean,
            cov: Matrix2::identity(),
        }
    }

    /// Thermal-class state with isotropic variance `v >= 1`.
    pub fn thermal(v: f64) -> Result<Self> {
        Self::new(Vector2::zeros(), Matrix2::identity() * v)
    }
}

fn symmetric2_min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    half_trace - (half_trace * half_trace - det).max(0.0).sqrt()
}

/// Resource configuration for the detection schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeleportConfig {
    /// Two-mode squeezing parameter of the teleportation resource.
    pub squeezing_r: f64,
    /// Classical displacement gain; the equivalence claims hold at 1.
    pub gain: f64,
    /// Modulation variance per quadrature of the prepare-and-measure scheme.
    pub v_b_mod: f64,
}

impl TeleportConfig {
    pub fn new(squeezing_r: f64, gain: f64, v_b_mod: f64) -> Result<Self> {
        if !(squeezing_r.is_finite() && squeezing_r >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "squeezing_r".into(),
                reason: "must be finite and nonnegative".into(),
            });
        }
        if !gain.is_finite() {
            return Err(Error::InvalidParameter {
                name: "gain".into(),
                reason: "must be finite".into(),
            });
        }
        if !(v_b_mod.is_finite() && v_b_mod >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "v_b_mod".into(),
                reason: "must be finite and nonnegative".into(),
            });
        }
        Ok(Self { squeezing_r, gain, v_b_mod })
    }

    pub fn ideal(squeezing_r: f64) -> Result<Self> {
        Self::new(squeezing_r, 1.0, modulation_for_squeezing(squeezing_r))
    }
}

/// Classical Gaussian law of the final heterodyne outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeLaw {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl OutcomeLaw {
    fn checked(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self> {
        let dm = nalgebra::DMatrix::from_fn(2, 2, |i, j| cov[(i, j)]);
        let validated = CovarianceMatrix::validate(dm)?;
        let cov = Matrix2::from_fn(|i, j| validated.get(i, j));
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "mean".into(),
                reason: "must be finite".into(),
            });
        }
        Ok(Self { mean, cov })
    }

    /// Largest absolute difference over mean and covariance entries.
    pub fn max_abs_diff(&self, other: &OutcomeLaw) -> f64 {
        (self.mean - other.mean)
            .amax()
            .max((self.cov - other.cov).amax())
    }
}

/// Direct heterodyne detection of the input state: the outcome has the input
/// mean and covariance `cov + I`.
pub fn scheme1_direct(input: &GaussianInputState) -> Result<OutcomeLaw> {
    OutcomeLaw::checked(input.mean, input.cov + Matrix2::identity())
}

/// Teleport the input with a finitely squeezed resource, then heterodyne.
///
/// Worked in the Heisenberg picture over independent unit sources, which
/// keeps the `cosh - sinh` cancellations exact even at large squeezing: the
/// displaced output mode is `g Q_in + (sinh r - g cosh r) s1 + (cosh r -
/// g sinh r) s2` per quadrature, plus one heterodyne unit.
pub fn scheme2_teleport_then_heterodyne(
    input: &GaussianInputState,
    cfg: &TeleportConfig,
) -> Result<OutcomeLaw> {
    let g = cfg.gain;
    let ch = cfg.squeezing_r.cosh();
    let sh = cfg.squeezing_r.sinh();
    let a = sh - g * ch;
    let b = ch - g * sh;
    let resource_noise = a * a + b * b;
    let cov = input.cov * (g * g) + Matrix2::identity() * (resource_noise + 1.0);
    OutcomeLaw::checked(input.mean * g, cov)
}

/// Heterodyne the resource arm first, then displace the classical outcome by
/// the announced Bell result.
///
/// Built as the joint 4-dim classical law of (Bell outcome, heterodyne
/// outcome) followed by an affine combination; this is deliberately a
/// different computational route from [`scheme2_teleport_then_heterodyne`],
/// and the two agree identically because displacement commutes with
/// heterodyne detection. Intermediate entries scale with `cosh 2r`, so
/// floating-point agreement degrades beyond roughly `r = 5`.
pub fn scheme3_heterodyne_then_displace(
    input: &GaussianInputState,
    cfg: &TeleportConfig,
) -> Result<OutcomeLaw> {
    let g = cfg.gain;
    let c2 = (2.0 * cfg.squeezing_r).cosh();
    let s2 = (2.0 * cfg.squeezing_r).sinh();
    let sqrt2 = std::f64::consts::SQRT_2;

    // Joint operator covariance of (q0, p0, q1, p1, q2, p2).
    let mut full = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..2 {
        for j in 0..2 {
            full[(i, j)] = input.cov[(i, j)];
        }
    }
    for k in [2, 3, 4, 5] {
        full[(k, k)] = c2;
    }
    full[(2, 4)] = s2;
    full[(4, 2)] = s2;
    full[(3, 5)] = -s2;
    full[(5, 3)] = -s2;

    // Bell rows: q = (q0 - q1)/sqrt2, p = (p0 + p1)/sqrt2.
    let mut bell = SMatrix::<f64, 2, 6>::zeros();
    bell[(0, 0)] = 1.0 / sqrt2;
    bell[(0, 2)] = -1.0 / sqrt2;
    bell[(1, 1)] = 1.0 / sqrt2;
    bell[(1, 3)] = 1.0 / sqrt2;
    // Heterodyne rows select the kept arm.
    let mut het = SMatrix::<f64, 2, 6>::zeros();
    het[(0, 4)] = 1.0;
    het[(1, 5)] = 1.0;

    // Joint classical law of (z, h): heterodyne noise lands on h only.
    let mut joint = SMatrix::<f64, 4, 4>::zeros();
    let zz = bell * full * bell.transpose();
    let zh = bell * full * het.transpose();
    let hh = het * full * het.transpose() + Matrix2::identity();
    for i in 0..2 {
        for j in 0..2 {
            joint[(i, j)] = zz[(i, j)];
            joint[(i, 2 + j)] = zh[(i, j)];
            joint[(2 + j, i)] = zh[(i, j)];
            joint[(2 + i, 2 + j)] = hh[(i, j)];
        }
    }

    // out = h + g sqrt2 z
    let mut combine = SMatrix::<f64, 2, 4>::zeros();
    combine[(0, 0)] = g * sqrt2;
    combine[(1, 1)] = g * sqrt2;
    combine[(0, 2)] = 1.0;
    combine[(1, 3)] = 1.0;

    let cov = combine * joint * combine.transpose();
    let z_mean = Vector2::new(input.mean[0] / sqrt2, input.mean[1] / sqrt2);
    let mean = z_mean * (g * sqrt2);
    OutcomeLaw::checked(mean, cov.into())
}

/// Replace the resource arm and its heterodyne by coherent-state preparation
/// with Gaussian-modulated amplitude of variance `v_b_mod` per quadrature.
///
/// The preparation variable is rescaled by `sqrt((V+2)/V)` before entering
/// the classical output, which is exactly the inverse of the conditional-mean
/// attenuation a heterodyned resource arm would impose; grouped as
/// `(sqrt(V+2) - g sqrt(V))^2 + g^2` the added variance stays finite at
/// `V = 0` and numerically stable at large `V`.
pub fn scheme4_mdi_prepare_and_measure(
    input: &GaussianInputState,
    cfg: &TeleportConfig,
) -> Result<OutcomeLaw> {
    let g = cfg.gain;
    let v = cfg.v_b_mod;
    let coeff = (v + 2.0).sqrt() - g * v.sqrt();
    let added = coeff * coeff + g * g;
    let cov = input.cov * (g * g) + Matrix2::identity() * added;
    OutcomeLaw::checked(input.mean * g, cov)
}

/// Extra per-quadrature variance of the teleport-then-heterodyne scheme over
/// direct heterodyne at gain 1: `2 e^{-2r}`.
///
/// The closed form was fixed against the source-basis propagation oracle in
/// the test suite before being hard-coded here.
pub fn added_noise(r: f64) -> f64 {
    2.0 * (-2.0 * r).exp()
}

/// Modulation variance that makes the prepare-and-measure scheme reproduce a
/// squeezing-`r` resource exactly: `cosh(2r) - 1`, the thermal modulation of
/// a heterodyned resource arm.
pub fn modulation_for_squeezing(r: f64) -> f64 {
    // 2 sinh^2 r: exact at r = 0, no cancellation at large r.
    let s = r.sinh();
    2.0 * s * s
}
