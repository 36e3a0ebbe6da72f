//! Optimal conditional displacements: solve the affine gains that decorrelate
//! the raw keys from the relay announcement, apply them, and derive the
//! conditional covariance matrix of the displaced keys.

use nalgebra::{Matrix2, Matrix4x2, SMatrix};

use crate::error::{Error, Result};
use crate::estimation::StructuredCM;
use crate::gaussian::{mean_product, CovarianceMatrix, SampleBatch};
use crate::relay::{Announcements, RoundVariables};

/// Column order of the displaced raw keys.
pub const KEY_LABELS: [&str; 4] = ["q_a", "p_a", "q_b", "p_b"];

/// Labels of the eight key/announcement cross moments, in report order.
pub const DECORRELATION_LABELS: [&str; 8] = [
    "q_a_qz", "q_a_pz", "p_a_qz", "p_a_pz", "q_b_qz", "q_b_pz", "p_b_qz", "p_b_pz",
];

/// Relative tolerance on `det(v_Z)` below which the announcement is treated
/// as degenerate.
pub const DEGENERACY_RTOL: f64 = 1e-12;

/// Coefficients of one affine correction `g(Z) = u q_Z + v p_Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPair {
    pub u: f64,
    pub v: f64,
}

/// The eight displacement coefficients, one pair per preparation variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementGains {
    pub q_a: GainPair,
    pub p_a: GainPair,
    pub q_b: GainPair,
    pub p_b: GainPair,
}

impl DisplacementGains {
    pub fn zero() -> Self {
        let z = GainPair { u: 0.0, v: 0.0 };
        Self { q_a: z, p_a: z, q_b: z, p_b: z }
    }

    /// Gains as a 4x2 matrix in (q_a, p_a, q_b, p_b) x (u, v) order.
    pub fn as_matrix(&self) -> Matrix4x2<f64> {
        Matrix4x2::new(
            self.q_a.u, self.q_a.v,
            self.p_a.u, self.p_a.v,
            self.q_b.u, self.q_b.v,
            self.p_b.u, self.p_b.v,
        )
    }

    pub fn pairs(&self) -> [GainPair; 4] {
        [self.q_a, self.p_a, self.q_b, self.p_b]
    }
}

/// The displaced raw keys, one row per round.
#[derive(Debug, Clone)]
pub struct DisplacedKeys {
    batch: SampleBatch,
}

impl DisplacedKeys {
    pub fn batch(&self) -> &SampleBatch {
        &self.batch
    }

    pub fn n(&self) -> usize {
        self.batch.n()
    }
}

/// Report of the eight empirical key/announcement cross moments with their
/// standard errors. `pass` holds when every moment is within five standard
/// errors of zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DecorrelationReport {
    pub moments: [f64; 8],
    pub standard_errors: [f64; 8],
    pub pass: bool,
}

fn cross_block_rows(cm: &StructuredCM) -> Matrix4x2<f64> {
    Matrix4x2::new(
        cm.c_az[(0, 0)], cm.c_az[(0, 1)],
        cm.c_az[(1, 0)], cm.c_az[(1, 1)],
        cm.c_bz[(0, 0)], cm.c_bz[(0, 1)],
        cm.c_bz[(1, 0)], cm.c_bz[(1, 1)],
    )
}

fn announcement_determinant(cm: &StructuredCM) -> Result<f64> {
    let qq = cm.v_z[(0, 0)];
    let pp = cm.v_z[(1, 1)];
    let qp = 0.5 * (cm.v_z[(0, 1)] + cm.v_z[(1, 0)]);
    let det = qq * pp - qp * qp;
    if det <= DEGENERACY_RTOL * qq * pp || det <= 0.0 {
        return Err(Error::DegenerateAnnouncement { det });
    }
    Ok(det)
}

/// Solve the decorrelation conditions for the eight gains:
/// `u = (<*q_Z><p_Z^2> - <*p_Z><q_Z p_Z>) / det(v_Z)` and
/// `v = (<*p_Z><q_Z^2> - <*q_Z><q_Z p_Z>) / det(v_Z)`.
pub fn solve_gains(cm: &StructuredCM) -> Result<DisplacementGains> {
    let det = announcement_determinant(cm)?;
    let qq = cm.v_z[(0, 0)];
    let pp = cm.v_z[(1, 1)];
    let qp = 0.5 * (cm.v_z[(0, 1)] + cm.v_z[(1, 0)]);

    let solve = |cq: f64, cp: f64| GainPair {
        u: (cq * pp - cp * qp) / det,
        v: (cp * qq - cq * qp) / det,
    };
    Ok(DisplacementGains {
        q_a: solve(cm.c_az[(0, 0)], cm.c_az[(0, 1)]),
        p_a: solve(cm.c_az[(1, 0)], cm.c_az[(1, 1)]),
        q_b: solve(cm.c_bz[(0, 0)], cm.c_bz[(0, 1)]),
        p_b: solve(cm.c_bz[(1, 0)], cm.c_bz[(1, 1)]),
    })
}

/// Closed-form gain magnitude for the symmetric honest channel with
/// modulation variance `v` per quadrature and link transmissivity `eta`:
/// the solved gains then satisfy `-u_{q'_A} = v_{p'_A} = u_{q'_B} = v_{p'_B}`
/// with this magnitude and vanishing cross pairs.
pub fn symmetric_honest_gain(v: f64, eta: f64) -> f64 {
    let half_v = v / 2.0;
    half_v * (eta / 2.0).sqrt() / (eta * half_v + 0.5)
}

/// Apply the conditional displacements: `q_A = q'_A - u q_Z - v p_Z` and
/// likewise for the other three variables.
pub fn apply_displacements(
    rounds: &RoundVariables,
    gains: &DisplacementGains,
) -> Result<DisplacedKeys> {
    let batch = rounds.batch();
    let pairs = gains.pairs();
    if pairs.iter().any(|g| !g.u.is_finite() || !g.v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "gains".into(),
            reason: "gains must be finite".into(),
        });
    }
    let n = batch.n();
    let mut data = Vec::with_capacity(n * 4);
    for row in batch.rows() {
        let q_z = row[4];
        let p_z = row[5];
        for (k, g) in pairs.iter().enumerate() {
            data.push(row[k] - g.u * q_z - g.v * p_z);
        }
    }
    let labels = KEY_LABELS.iter().map(|s| s.to_string()).collect();
    Ok(DisplacedKeys {
        batch: SampleBatch::new(labels, data)?,
    })
}

/// Conditional covariance of the raw keys given the announcement:
/// `V_AB = V_{A'B'} - C v_Z^-1 Cᵀ`, which is identically the covariance of
/// the displaced keys under the exact model.
pub fn conditional_cm(cm: &StructuredCM) -> Result<CovarianceMatrix> {
    let det = announcement_determinant(cm)?;
    let qq = cm.v_z[(0, 0)];
    let pp = cm.v_z[(1, 1)];
    let qp = 0.5 * (cm.v_z[(0, 1)] + cm.v_z[(1, 0)]);
    let v_z_inv = Matrix2::new(pp, -qp, -qp, qq) / det;

    let c = cross_block_rows(cm);
    let correction = c * v_z_inv * c.transpose();
    let mut v_ab = SMatrix::<f64, 4, 4>::zeros();
    v_ab[(0, 0)] = cm.v_a_declared;
    v_ab[(1, 1)] = cm.v_a_declared;
    v_ab[(2, 2)] = cm.v_b_declared;
    v_ab[(3, 3)] = cm.v_b_declared;
    v_ab -= correction;

    // estimated blocks can push a near-zero eigenvalue slightly negative
    CovarianceMatrix::repair_psd(nalgebra::DMatrix::from_fn(4, 4, |i, j| v_ab[(i, j)]))
}

/// Analytic key/announcement cross moments after displacement:
/// `C - G v_Z`, row order as in [`DECORRELATION_LABELS`]. Zero when the
/// gains solve the decorrelation conditions for this matrix.
pub fn displaced_cross_moments(cm: &StructuredCM, gains: &DisplacementGains) -> Matrix4x2<f64> {
    cross_block_rows(cm) - gains.as_matrix() * cm.v_z
}

/// Empirical check of the decorrelation conditions on a displaced batch.
pub fn verify_decorrelation(
    keys: &DisplacedKeys,
    announcements: &Announcements,
) -> Result<DecorrelationReport> {
    if keys.n() != announcements.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} key rounds vs {} announcements",
            keys.n(),
            announcements.n()
        )));
    }
    let n = keys.n();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, actual: n });
    }
    let z_cols = [&announcements.q_z, &announcements.p_z];
    let mut z_vars = [0.0; 2];
    for (j, z) in z_cols.iter().enumerate() {
        z_vars[j] = mean_product(z, z)?;
    }

    let mut moments = [0.0; 8];
    let mut standard_errors = [0.0; 8];
    for k in 0..4 {
        let key_col = keys.batch().column(k);
        let key_var = mean_product(&key_col, &key_col)?;
        for j in 0..2 {
            let m = mean_product(&key_col, z_cols[j])?;
            moments[k * 2 + j] = m;
            standard_errors[k * 2 + j] = ((key_var * z_vars[j] + m * m) / n as f64).sqrt();
        }
    }
    let pass = moments
        .iter()
        .zip(&standard_errors)
        .all(|(m, se)| m.abs() <= 5.0 * se);
    Ok(DecorrelationReport { moments, standard_errors, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{
        alice_local_estimate, assemble_cm, bob_local_estimate, AliceView, BobView,
    };
    use crate::gaussian::{condition_on, empirical_cm};
    use crate::relay::{analytic_joint_cm, simulate_rounds, ProtocolParams};

    fn sym_params(n: usize, seed: u64) -> ProtocolParams {
        ProtocolParams {
            v_a: 2.0,
            v_b: 2.0,
            eta_a: 0.5,
            eta_b: 0.5,
            excess_noise: 0.0,
            n_rounds: n,
            seed,
        }
    }

    fn exact_structured(p: &ProtocolParams) -> StructuredCM {
        StructuredCM::from_exact_joint(&analytic_joint_cm(p).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_gain_pattern() {
        // V = 2N with N = 1, eta = 0.5: magnitude N sqrt(eta/2) / (eta N + 1/2) = 0.5
        let p = sym_params(10, 0);
        let gains = solve_gains(&exact_structured(&p)).unwrap();
        let expected = symmetric_honest_gain(2.0, 0.5);
        assert!((expected - 0.5).abs() < 1e-15);
        assert!((gains.q_a.u - (-expected)).abs() < 1e-12);
        assert!((gains.p_a.v - expected).abs() < 1e-12);
        assert!((gains.q_b.u - expected).abs() < 1e-12);
        assert!((gains.p_b.v - expected).abs() < 1e-12);
        for cross in [gains.q_a.v, gains.p_a.u, gains.q_b.v, gains.p_b.u] {
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_correlation_means_zero_gains() {
        let mut cm = exact_structured(&sym_params(10, 0));
        cm.c_az = Matrix2::zeros();
        cm.c_bz = Matrix2::zeros();
        assert_eq!(solve_gains(&cm).unwrap(), DisplacementGains::zero());
    }

    #[test]
    fn degenerate_announcement_is_rejected() {
        let mut cm = exact_structured(&sym_params(10, 0));
        cm.v_z = Matrix2::new(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            solve_gains(&cm).unwrap_err(),
            Error::DegenerateAnnouncement { .. }
        ));
        assert!(matches!(
            conditional_cm(&cm).unwrap_err(),
            Error::DegenerateAnnouncement { .. }
        ));
    }

    #[test]
    fn zero_gains_leave_rounds_unchanged() {
        let rounds = simulate_rounds(&sym_params(1000, 3)).unwrap();
        let keys = apply_displacements(&rounds, &DisplacementGains::zero()).unwrap();
        for i in 0..rounds.n() {
            for j in 0..4 {
                assert_eq!(keys.batch().value(i, j), rounds.batch().value(i, j));
            }
        }
    }

    #[test]
    fn single_round_displacement_arithmetic() {
        use crate::relay::Announcements;
        let primes = SampleBatch::new(
            ["q_a_prime", "p_a_prime", "q_b_prime", "p_b_prime"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vec![1.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let ann = Announcements { q_z: vec![1.0], p_z: vec![0.0] };
        let rounds = RoundVariables::from_parts(&primes, &ann).unwrap();
        let mut gains = DisplacementGains::zero();
        gains.q_a.u = -0.5;
        let keys = apply_displacements(&rounds, &gains).unwrap();
        assert_eq!(keys.batch().value(0, 0), 1.5);
    }

    #[test]
    fn analytic_gains_decorrelate_exactly_at_the_moment_level() {
        for (v, eta, noise) in [(2.0, 0.5, 0.0), (4.0, 0.9, 0.2), (1.0, 0.1, 0.05)] {
            let p = ProtocolParams {
                v_a: v,
                v_b: 2.0 * v,
                eta_a: eta,
                eta_b: eta * 0.8,
                excess_noise: noise,
                n_rounds: 10,
                seed: 0,
            };
            let cm = exact_structured(&p);
            let gains = solve_gains(&cm).unwrap();
            let residuals = displaced_cross_moments(&cm, &gains);
            assert!(residuals.amax() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_decorrelation_with_estimated_gains() {
        let p = sym_params(1_000_000, 17);
        let rounds = simulate_rounds(&p).unwrap();
        let alice = alice_local_estimate(&AliceView::from_rounds(&rounds)).unwrap();
        let bob = bob_local_estimate(&BobView::from_rounds(&rounds)).unwrap();
        let assembled = assemble_cm(&alice, &bob, p.v_a, p.v_b).unwrap();
        let gains = solve_gains(&assembled).unwrap();
        let keys = apply_displacements(&rounds, &gains).unwrap();
        let report = verify_decorrelation(&keys, &rounds.announcements()).unwrap();
        assert!(report.pass, "moments {:?}", report.moments);
    }

    #[test]
    fn wrong_gains_fail_the_decorrelation_check() {
        let p = sym_params(100_000, 23);
        let rounds = simulate_rounds(&p).unwrap();
        let keys = apply_displacements(&rounds, &DisplacementGains::zero()).unwrap();
        let report = verify_decorrelation(&keys, &rounds.announcements()).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn conditional_cm_symmetric_example() {
        let cm = exact_structured(&sym_params(10, 0));
        let v_ab = conditional_cm(&cm).unwrap();
        assert!((v_ab.get(0, 0) - 1.5).abs() < 1e-12);
        assert!((v_ab.get(1, 1) - 1.5).abs() < 1e-12);
        assert!((v_ab.get(0, 2) - 0.5).abs() < 1e-12);
        assert!((v_ab.get(1, 3) - (-0.5)).abs() < 1e-12);
        assert!(v_ab.get(0, 1).abs() < 1e-12);
        assert!(v_ab.get(0, 3).abs() < 1e-12);
    }

    #[test]
    fn zero_cross_blocks_leave_declared_variances() {
        let mut cm = exact_structured(&sym_params(10, 0));
        cm.c_az = Matrix2::zeros();
        cm.c_bz = Matrix2::zeros();
        let v_ab = conditional_cm(&cm).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 2.0 } else { 0.0 };
                assert!((v_ab.get(i, j) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conditional_cm_matches_generic_conditioning() {
        let p = ProtocolParams {
            v_a: 2.0,
            v_b: 3.0,
            eta_a: 0.5,
            eta_b: 0.7,
            excess_noise: 0.1,
            n_rounds: 10,
            seed: 0,
        };
        let model = analytic_joint_cm(&p).unwrap();
        let via_conditioning = condition_on(&model, &[4, 5]).unwrap();
        let via_blocks = conditional_cm(&StructuredCM::from_exact_joint(&model).unwrap()).unwrap();
        assert!(via_blocks.max_abs_diff(via_conditioning.cov()) < 1e-12);
    }

    #[test]
    fn displaced_key_covariance_matches_conditional_cm() {
        let p = sym_params(1_000_000, 29);
        let rounds = simulate_rounds(&p).unwrap();
        let cm = exact_structured(&p);
        let gains = solve_gains(&cm).unwrap();
        let keys = apply_displacements(&rounds, &gains).unwrap();
        let emp = empirical_cm(keys.batch()).unwrap();
        let v_ab = conditional_cm(&cm).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let target = v_ab.get(i, j);
                let se = ((v_ab.get(i, i) * v_ab.get(j, j) + target * target)
                    / p.n_rounds as f64)
                    .sqrt();
                assert!((emp.get(i, j) - target).abs() <= 6.0 * se, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn solved_gains_minimize_key_variance() {
        let cm = exact_structured(&sym_params(10, 0));
        let gains = solve_gains(&cm).unwrap();
        let var_q_a = |u: f64, v: f64| -> f64 {
            cm.v_a_declared - 2.0 * u * cm.c_az[(0, 0)] - 2.0 * v * cm.c_az[(0, 1)]
                + u * u * cm.v_z[(0, 0)]
                + 2.0 * u * v * cm.v_z[(0, 1)]
                + v * v * cm.v_z[(1, 1)]
        };
        let optimum = var_q_a(gains.q_a.u, gains.q_a.v);
        for du in [-0.3, -0.05, 0.05, 0.3] {
            for dv in [-0.3, -0.05, 0.05, 0.3] {
                assert!(var_q_a(gains.q_a.u + du, gains.q_a.v + dv) >= optimum - 1e-12);
            }
        }
    }

    #[test]
    fn announcement_rescaling_rescales_gains_and_preserves_keys() {
        let p = sym_params(2000, 41);
        let rounds = simulate_rounds(&p).unwrap();
        let cm = exact_structured(&p);
        let gains = solve_gains(&cm).unwrap();
        let keys = apply_displacements(&rounds, &gains).unwrap();
        let v_ab = conditional_cm(&cm).unwrap();

        for k in [0.5, 2.0, -1.0] {
            let scaled_cm = StructuredCM::new(
                cm.v_a_declared,
                cm.v_b_declared,
                cm.v_z * (k * k),
                cm.c_az * k,
                cm.c_bz * k,
            )
            .unwrap();
            let scaled_gains = solve_gains(&scaled_cm).unwrap();
            for (g, s) in gains.pairs().iter().zip(scaled_gains.pairs()) {
                assert!((s.u - g.u / k).abs() < 1e-12);
                assert!((s.v - g.v / k).abs() < 1e-12);
            }
            let scaled_v_ab = conditional_cm(&scaled_cm).unwrap();
            assert!(scaled_v_ab.max_abs_diff(&v_ab) < 1e-12);

            // keys are invariant when the announcement itself is rescaled
            let ann = rounds.announcements();
            let scaled_ann = Announcements {
                q_z: ann.q_z.iter().map(|x| x * k).collect(),
                p_z: ann.p_z.iter().map(|x| x * k).collect(),
            };
            let prime_labels = ["q_a_prime", "p_a_prime", "q_b_prime", "p_b_prime"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let primes = SampleBatch::new(
                prime_labels,
                rounds
                    .batch()
                    .rows()
                    .flat_map(|r| r[..4].to_vec())
                    .collect(),
            )
            .unwrap();
            let scaled_rounds = RoundVariables::from_parts(&primes, &scaled_ann).unwrap();
            let scaled_keys = apply_displacements(&scaled_rounds, &scaled_gains).unwrap();
            for i in 0..keys.n() {
                for j in 0..4 {
                    assert!(
                        (scaled_keys.batch().value(i, j) - keys.batch().value(i, j)).abs() < 1e-12
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn random_structured(
        v_a: f64,
        v_b: f64,
        a: [f64; 4],
        c1: [f64; 4],
        c2: [f64; 4],
    ) -> StructuredCM {
        let base = Matrix2::new(a[0], a[1], a[2], a[3]);
        let v_z = base * base.transpose() + Matrix2::identity() * 0.1;
        let mut c_az = Matrix2::new(c1[0], c1[1], c1[2], c1[3]);
        let mut c_bz = Matrix2::new(c2[0], c2[1], c2[2], c2[3]);
        // shrink cross blocks until the assembled matrix is safely PSD
        for _ in 0..60 {
            let schur = v_z
                - c_az.transpose() * c_az / v_a
                - c_bz.transpose() * c_bz / v_b;
            let eig = nalgebra::SymmetricEigen::new(schur);
            if eig.eigenvalues.min() > 0.05 {
                break;
            }
            c_az *= 0.7;
            c_bz *= 0.7;
        }
        StructuredCM::new(v_a, v_b, v_z, c_az, c_bz).unwrap()
    }

    proptest! {
        #[test]
        fn solved_gains_satisfy_decorrelation_conditions(
            v_a in 0.5f64..8.0,
            v_b in 0.5f64..8.0,
            a in proptest::array::uniform4(-2.0f64..2.0),
            c1 in proptest::array::uniform4(-1.5f64..1.5),
            c2 in proptest::array::uniform4(-1.5f64..1.5),
        ) {
            let cm = random_structured(v_a, v_b, a, c1, c2);
            cm.to_model().unwrap();
            let gains = solve_gains(&cm).unwrap();
            let residuals = displaced_cross_moments(&cm, &gains);
            prop_assert!(residuals.amax() < 1e-12);
        }
    }
}
