//! Party-local covariance estimation: Alice estimates her cross block from
//! her own preparation variables and the public announcement only, Bob does
//! the same with his, and the full joint covariance matrix is assembled with
//! zero extra public communication.
//!
//! Locality is enforced by construction: the estimator input types
//! ([`AliceView`], [`BobView`]) physically contain only the columns that
//! party is allowed to see.

use nalgebra::{DMatrix, Matrix2};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gaussian::{mean_product, CovarianceMatrix, GaussianModel};
use crate::relay::{Announcements, ProtocolParams, RoundVariables};

/// Maximum allowed disagreement between the parties' announcement-covariance
/// estimates, in combined standard errors.
pub const VZ_COMPAT_SIGMA: f64 = 6.0;

/// Bytes of one relay announcement: two 8-byte reals per round.
pub const ANNOUNCEMENT_BYTES_PER_ROUND: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

/// The columns Alice may use: her preparation variables plus the public
/// announcement. Nothing of Bob's ever enters this type.
#[derive(Debug, Clone)]
pub struct AliceView {
    pub q_a_prime: Vec<f64>,
    pub p_a_prime: Vec<f64>,
    pub q_z: Vec<f64>,
    pub p_z: Vec<f64>,
}

/// The columns Bob may use: his preparation variables plus the public
/// announcement.
#[derive(Debug, Clone)]
pub struct BobView {
    pub q_b_prime: Vec<f64>,
    pub p_b_prime: Vec<f64>,
    pub q_z: Vec<f64>,
    pub p_z: Vec<f64>,
}

impl AliceView {
    pub const COLUMNS: [&'static str; 4] = ["q_a_prime", "p_a_prime", "q_z", "p_z"];

    pub fn new(
        q_a_prime: Vec<f64>,
        p_a_prime: Vec<f64>,
        announcements: &Announcements,
    ) -> Result<Self> {
        let n = q_a_prime.len();
        if p_a_prime.len() != n || announcements.n() != n {
            return Err(Error::DimensionMismatch(
                "local columns and announcements must have equal length".into(),
            ));
        }
        Ok(Self {
            q_a_prime,
            p_a_prime,
            q_z: announcements.q_z.clone(),
            p_z: announcements.p_z.clone(),
        })
    }

    /// Convenience projection for tests that hold a full joint batch.
    pub fn from_rounds(rounds: &RoundVariables) -> Self {
        let b = rounds.batch();
        Self {
            q_a_prime: b.column(0),
            p_a_prime: b.column(1),
            q_z: b.column(4),
            p_z: b.column(5),
        }
    }

    pub fn n(&self) -> usize {
        self.q_a_prime.len()
    }
}

impl BobView {
    pub const COLUMNS: [&'static str; 4] = ["q_b_prime", "p_b_prime", "q_z", "p_z"];

    pub fn new(
        q_b_prime: Vec<f64>,
        p_b_prime: Vec<f64>,
        announcements: &Announcements,
    ) -> Result<Self> {
        let n = q_b_prime.len();
        if p_b_prime.len() != n || announcements.n() != n {
            return Err(Error::DimensionMismatch(
                "local columns and announcements must have equal length".into(),
            ));
        }
        Ok(Self {
            q_b_prime,
            p_b_prime,
            q_z: announcements.q_z.clone(),
            p_z: announcements.p_z.clone(),
        })
    }

    pub fn from_rounds(rounds: &RoundVariables) -> Self {
        let b = rounds.batch();
        Self {
            q_b_prime: b.column(2),
            p_b_prime: b.column(3),
            q_z: b.column(4),
            p_z: b.column(5),
        }
    }

    pub fn n(&self) -> usize {
        self.q_b_prime.len()
    }
}

/// One party's locally estimated blocks.
#[derive(Debug, Clone)]
pub struct PartialEstimate {
    pub party: Party,
    /// Empirical cross moments of (local q', local p') against (q_Z, p_Z).
    pub cross_block: Matrix2<f64>,
    /// Empirical covariance of the announcement.
    pub v_z_est: Matrix2<f64>,
    pub n_used: usize,
}

fn estimate_blocks(
    local_q: &[f64],
    local_p: &[f64],
    q_z: &[f64],
    p_z: &[f64],
) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    let n = local_q.len();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, actual: n });
    }
    let cross = Matrix2::new(
        mean_product(local_q, q_z)?,
        mean_product(local_q, p_z)?,
        mean_product(local_p, q_z)?,
        mean_product(local_p, p_z)?,
    );
    let qq = mean_product(q_z, q_z)?;
    let qp = mean_product(q_z, p_z)?;
    let pp = mean_product(p_z, p_z)?;
    let v_z = Matrix2::new(qq, qp, qp, pp);
    Ok((cross, v_z))
}

/// Alice's local estimate of her cross block and of the announcement
/// covariance, from her permitted columns only.
pub fn alice_local_estimate(view: &AliceView) -> Result<PartialEstimate> {
    let (cross_block, v_z_est) =
        estimate_blocks(&view.q_a_prime, &view.p_a_prime, &view.q_z, &view.p_z)?;
    Ok(PartialEstimate {
        party: Party::Alice,
        cross_block,
        v_z_est,
        n_used: view.n(),
    })
}

/// Bob's local estimate, mirror of [`alice_local_estimate`].
pub fn bob_local_estimate(view: &BobView) -> Result<PartialEstimate> {
    let (cross_block, v_z_est) =
        estimate_blocks(&view.q_b_prime, &view.p_b_prime, &view.q_z, &view.p_z)?;
    Ok(PartialEstimate {
        party: Party::Bob,
        cross_block,
        v_z_est,
        n_used: view.n(),
    })
}

/// The structured joint covariance matrix: declared preparation variances on
/// the diagonal blocks, a zero cross block between the two preparations by
/// protocol definition, and estimated announcement blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredCM {
    pub v_a_declared: f64,
    pub v_b_declared: f64,
    pub v_z: Matrix2<f64>,
    pub c_az: Matrix2<f64>,
    pub c_bz: Matrix2<f64>,
}

impl StructuredCM {
    pub fn new(
        v_a_declared: f64,
        v_b_declared: f64,
        v_z: Matrix2<f64>,
        c_az: Matrix2<f64>,
        c_bz: Matrix2<f64>,
    ) -> Result<Self> {
        if v_a_declared < 0.0 || v_b_declared < 0.0 {
            return Err(Error::InvalidParameter {
                name: "declared variance".into(),
                reason: "must be nonnegative".into(),
            });
        }
        let all_finite = v_z.iter().chain(c_az.iter()).chain(c_bz.iter()).all(|x| x.is_finite());
        if !all_finite || !v_a_declared.is_finite() || !v_b_declared.is_finite() {
            return Err(Error::InvalidParameter {
                name: "blocks".into(),
                reason: "entries must be finite".into(),
            });
        }
        Ok(Self {
            v_a_declared,
            v_b_declared,
            v_z,
            c_az,
            c_bz,
        })
    }

    /// Extract the structured blocks from an exact joint 6x6 law, checking
    /// that it actually has the declared structure.
    pub fn from_exact_joint(model: &GaussianModel) -> Result<Self> {
        if model.dim() != 6 {
            return Err(Error::DimensionMismatch(format!(
                "expected a 6-variable model, got {}",
                model.dim()
            )));
        }
        let c = model.cov();
        let scale = (0..6).map(|i| c.get(i, i)).fold(1.0f64, f64::max);
        let tol = 1e-9 * scale;
        let check_zero = |i: usize, j: usize| -> Result<()> {
            if c.get(i, j).abs() > tol {
                return Err(Error::InvalidParameter {
                    name: "joint".into(),
                    reason: format!("entry ({i},{j}) = {} must be zero", c.get(i, j)),
                });
            }
            Ok(())
        };
        // preparation cross block and within-party off-diagonals
        for i in 0..2 {
            for j in 2..4 {
                check_zero(i, j)?;
            }
        }
        check_zero(0, 1)?;
        check_zero(2, 3)?;
        if (c.get(0, 0) - c.get(1, 1)).abs() > tol || (c.get(2, 2) - c.get(3, 3)).abs() > tol {
            return Err(Error::InvalidParameter {
                name: "joint".into(),
                reason: "preparation blocks must be isotropic".into(),
            });
        }
        Self::new(
            c.get(0, 0),
            c.get(2, 2),
            Matrix2::new(c.get(4, 4), c.get(4, 5), c.get(5, 4), c.get(5, 5)),
            Matrix2::new(c.get(0, 4), c.get(0, 5), c.get(1, 4), c.get(1, 5)),
            Matrix2::new(c.get(2, 4), c.get(2, 5), c.get(3, 4), c.get(3, 5)),
        )
    }

    /// The raw assembled 6x6 matrix.
    pub fn assembled_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(6, 6);
        m[(0, 0)] = self.v_a_declared;
        m[(1, 1)] = self.v_a_declared;
        m[(2, 2)] = self.v_b_declared;
        m[(3, 3)] = self.v_b_declared;
        for i in 0..2 {
            for j in 0..2 {
                m[(4 + i, 4 + j)] = self.v_z[(i, j)];
                m[(i, 4 + j)] = self.c_az[(i, j)];
                m[(4 + j, i)] = self.c_az[(i, j)];
                m[(2 + i, 4 + j)] = self.c_bz[(i, j)];
                m[(4 + j, 2 + i)] = self.c_bz[(i, j)];
            }
        }
        m
    }

    /// The assembled law after PSD repair: negative eigenvalues from
    /// finite-sample assembly are clipped to zero.
    pub fn to_model(&self) -> Result<GaussianModel> {
        Ok(GaussianModel::zero_mean(CovarianceMatrix::repair_psd(
            self.assembled_matrix(),
        )?))
    }
}

/// Standard error of the empirical uncentered second moment of zero-mean
/// Gaussian variables: `Var(<xy>) = (<x^2><y^2> + <xy>^2)/n`.
fn second_moment_se(vx: f64, vy: f64, cxy: f64, n: usize) -> f64 {
    ((vx * vy + cxy * cxy) / n as f64).sqrt()
}

/// Assemble the full structured covariance matrix from the two parties'
/// local estimates and the declared modulation variances.
///
/// Both parties estimate the announcement covariance from the same public
/// broadcast, so the two estimates must agree; they are averaged, and a
/// disagreement beyond [`VZ_COMPAT_SIGMA`] combined standard errors signals
/// desynchronized announcement logs.
pub fn assemble_cm(
    alice: &PartialEstimate,
    bob: &PartialEstimate,
    v_a_declared: f64,
    v_b_declared: f64,
) -> Result<StructuredCM> {
    if alice.party != Party::Alice || bob.party != Party::Bob {
        return Err(Error::InvalidParameter {
            name: "party".into(),
            reason: "estimates passed in the wrong slots".into(),
        });
    }
    if alice.n_used != bob.n_used {
        return Err(Error::DimensionMismatch(format!(
            "round counts differ: {} vs {}",
            alice.n_used, bob.n_used
        )));
    }

    let mut max_sigma = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let se_a = second_moment_se(
                alice.v_z_est[(i, i)],
                alice.v_z_est[(j, j)],
                alice.v_z_est[(i, j)],
                alice.n_used,
            );
            let se_b = second_moment_se(
                bob.v_z_est[(i, i)],
                bob.v_z_est[(j, j)],
                bob.v_z_est[(i, j)],
                bob.n_used,
            );
            let combined = (se_a * se_a + se_b * se_b).sqrt();
            let diff = (alice.v_z_est[(i, j)] - bob.v_z_est[(i, j)]).abs();
            if diff > 0.0 {
                let sigma = if combined > 0.0 { diff / combined } else { f64::INFINITY };
                max_sigma = max_sigma.max(sigma);
            }
        }
    }
    if max_sigma > VZ_COMPAT_SIGMA {
        return Err(Error::IncompatibleVz { max_sigma });
    }

    let structured = StructuredCM::new(
        v_a_declared,
        v_b_declared,
        (alice.v_z_est + bob.v_z_est) * 0.5,
        alice.cross_block,
        bob.cross_block,
    )?;
    structured.to_model()?;
    Ok(structured)
}

/// Confidence halfwidths for every estimated entry of a structured CM, via
/// the asymptotic variance of Gaussian second moments scaled by the
/// two-sided normal quantile. This is the documented default; other interval
/// constructions can be layered on the same estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfwidths {
    pub v_z: Matrix2<f64>,
    pub c_az: Matrix2<f64>,
    pub c_bz: Matrix2<f64>,
    pub confidence: f64,
    pub n: usize,
}

pub fn confidence_halfwidths(est: &StructuredCM, n: usize, confidence: f64) -> Result<Halfwidths> {
    if n < 30 {
        return Err(Error::TooFewSamples { required: 30, actual: n });
    }
    if !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::InvalidParameter {
            name: "confidence".into(),
            reason: "must lie in (0, 1)".into(),
        });
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z = normal.inverse_cdf(0.5 + confidence / 2.0);

    let hw = |vx: f64, vy: f64, cxy: f64| z * second_moment_se(vx, vy, cxy, n);
    let mut v_z = Matrix2::zeros();
    let mut c_az = Matrix2::zeros();
    let mut c_bz = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            v_z[(i, j)] = hw(est.v_z[(i, i)], est.v_z[(j, j)], est.v_z[(i, j)]);
            c_az[(i, j)] = hw(est.v_a_declared, est.v_z[(j, j)], est.c_az[(i, j)]);
            c_bz[(i, j)] = hw(est.v_b_declared, est.v_z[(j, j)], est.c_bz[(i, j)]);
        }
    }
    Ok(Halfwidths { v_z, c_az, c_bz, confidence, n })
}

/// Byte accounting of every classical message class on the public channel.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CommLedger {
    /// Bytes broadcast by the relay: two 8-byte reals per round.
    pub relay_announcement_bytes: u64,
    /// Extra bytes spent on parameter estimation. Zero by construction for
    /// the local scheme.
    pub pe_extra_bytes: u64,
    /// Error-correction bytes; reported, not simulated.
    pub error_correction_bytes: u64,
    /// Fraction of rounds the comparison protocol would reveal.
    pub baseline_f: f64,
    /// Bytes the comparison protocol would spend revealing that fraction.
    pub baseline_pe_bytes: u64,
}

/// Build the communication ledger for a run against a fraction-revealing
/// baseline.
pub fn build_ledger(params: &ProtocolParams, baseline_f: f64) -> Result<CommLedger> {
    params.validate()?;
    if !(0.0..=1.0).contains(&baseline_f) {
        return Err(Error::InvalidParameter {
            name: "baseline_f".into(),
            reason: "must lie in [0, 1]".into(),
        });
    }
    let n = params.n_rounds as u64;
    let revealed = (baseline_f * params.n_rounds as f64).ceil() as u64;
    Ok(CommLedger {
        relay_announcement_bytes: ANNOUNCEMENT_BYTES_PER_ROUND * n,
        pe_extra_bytes: 0,
        error_correction_bytes: 0,
        baseline_f,
        baseline_pe_bytes: ANNOUNCEMENT_BYTES_PER_ROUND * revealed,
    })
}

/// A joint probability mass function over discrete (X, Y, Z).
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Probabilities indexed `[(x * ny + y) * nz + z]`.
    pub p: Vec<f64>,
}

impl JointPmf {
    pub fn new(nx: usize, ny: usize, nz: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != nx * ny * nz {
            return Err(Error::DimensionMismatch(format!(
                "pmf length {} does not match {}x{}x{}",
                p.len(),
                nx,
                ny,
                nz
            )));
        }
        if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "p".into(),
                reason: "probabilities must be nonnegative".into(),
            });
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "p".into(),
                reason: format!("probabilities sum to {total}, expected 1"),
            });
        }
        Ok(Self { nx, ny, nz, p })
    }

    pub fn prob(&self, x: usize, y: usize, z: usize) -> f64 {
        self.p[(x * self.ny + y) * self.nz + z]
    }

    /// Marginal over Y, indexed `[x * nz + z]`.
    pub fn marginal_xz(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.nx * self.nz];
        for x in 0..self.nx {
            for y in 0..self.ny {
                for z in 0..self.nz {
                    m[x * self.nz + z] += self.prob(x, y, z);
                }
            }
        }
        m
    }

    /// Marginal over X, indexed `[y * nz + z]`.
    pub fn marginal_yz(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.ny * self.nz];
        for x in 0..self.nx {
            for y in 0..self.ny {
                for z in 0..self.nz {
                    m[y * self.nz + z] += self.prob(x, y, z);
                }
            }
        }
        m
    }

    /// Total variation distance to another pmf of the same shape.
    pub fn tv_distance(&self, other: &JointPmf) -> Result<f64> {
        if (self.nx, self.ny, self.nz) != (other.nx, other.ny, other.nz) {
            return Err(Error::DimensionMismatch("pmf shapes differ".into()));
        }
        Ok(0.5 * self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

/// Two distinct distributions over binary (X, Y) and a four-valued Z with
/// identical (X,Z) and (Y,Z) marginals: uniform Z times perfectly correlated
/// uniform (X,Y), versus uniform Z times independent uniform X, Y.
///
/// For discrete variables the pairwise marginals do not pin down the joint
/// law, so announcement-only estimation cannot work there.
pub fn dv_marginal_counterexample() -> (JointPmf, JointPmf) {
    let (nx, ny, nz) = (2usize, 2usize, 4usize);
    let mut p1 = vec![0.0; nx * ny * nz];
    let mut p2 = vec![0.0; nx * ny * nz];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let idx = (x * ny + y) * nz + z;
                if x == y {
                    p1[idx] = 1.0 / 8.0;
                }
                p2[idx] = 1.0 / 16.0;
            }
        }
    }
    (
        JointPmf::new(nx, ny, nz, p1).expect("correlated pmf is valid"),
        JointPmf::new(nx, ny, nz, p2).expect("independent pmf is valid"),
    )
}
