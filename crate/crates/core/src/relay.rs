//! Physical model of the quantum phase: coherent-state preparation by Alice
//! and Bob, transmission through lossy links, and CV Bell detection at the
//! untrusted relay. Provides the exact analytic joint covariance matrix and a
//! seed-deterministic Monte Carlo round sampler, plus adversarial relay
//! strategies for negative controls.
//!
//! Conventions (shot-noise units, vacuum quadrature variance = 1):
//! a coherent state with preparation variable `x'` has mode quadrature
//! `Q = x' + vacuum`; each link applies `Q -> sqrt(eta) Q + sqrt(1-eta) vac`;
//! thermal noise of variance `excess_noise` is added per quadrature after the
//! loss, referred to the relay inputs; the Bell outcomes are
//! `q_Z = (Q_B - Q_A)/sqrt(2)` and `p_Z = (P_A + P_B)/sqrt(2)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{CovarianceMatrix, GaussianModel, SampleBatch};

/// Column order of a protocol round, fixed by the structured-CM layout.
pub const ROUND_LABELS: [&str; 6] = [
    "q_a_prime", "p_a_prime", "q_b_prime", "p_b_prime", "q_z", "p_z",
];

/// Column order of the mode quadratures arriving at the relay.
pub const RELAY_MODE_LABELS: [&str; 4] = ["q_a_in", "p_a_in", "q_b_in", "p_b_in"];

const BATCH: usize = 8192;
/// Stream-space offset for the announce-noise RNG so it never collides with
/// the propagation streams of the same seed.
const NOISE_STREAM_OFFSET: u64 = 1 << 32;

/// Full experiment configuration for the quantum phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Alice's modulation variance per quadrature (shot-noise units).
    pub v_a: f64,
    /// Bob's modulation variance per quadrature.
    pub v_b: f64,
    /// Transmissivity of the Alice-to-relay link, in [0, 1].
    pub eta_a: f64,
    /// Transmissivity of the Bob-to-relay link, in [0, 1].
    pub eta_b: f64,
    /// Thermal-noise variance added per quadrature at the relay inputs.
    pub excess_noise: f64,
    /// Number of protocol rounds.
    pub n_rounds: usize,
    /// RNG seed.
    pub seed: u64,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, value: f64, ok: bool| -> Result<()> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name: name.into(),
                    reason: format!("value {value} outside documented range"),
                })
            }
        };
        check("v_a", self.v_a, self.v_a >= 0.0)?;
        check("v_b", self.v_b, self.v_b >= 0.0)?;
        check("eta_a", self.eta_a, (0.0..=1.0).contains(&self.eta_a))?;
        check("eta_b", self.eta_b, (0.0..=1.0).contains(&self.eta_b))?;
        check("excess_noise", self.excess_noise, self.excess_noise >= 0.0)?;
        if self.n_rounds == 0 {
            return Err(Error::InvalidParameter {
                name: "n_rounds".into(),
                reason: "round count must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// What the relay does with the incoming modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelayStrategy {
    /// Lossy CV Bell detection as the protocol prescribes.
    Honest,
    /// Announce unit-variance noise independent of the inputs.
    AnnounceNoise,
    /// Announce the honest Bell outcome multiplied by a constant.
    Rescaled { k: f64 },
}

impl RelayStrategy {
    /// Parse a strategy tag: `honest`, `announce_noise`, or `rescaled:<k>`.
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.trim() {
            "honest" => Ok(RelayStrategy::Honest),
            "announce_noise" => Ok(RelayStrategy::AnnounceNoise),
            other => {
                if let Some(k) = other.strip_prefix("rescaled:") {
                    let k: f64 = k
                        .parse()
                        .map_err(|_| Error::UnknownStrategy(other.to_string()))?;
                    if !k.is_finite() {
                        return Err(Error::UnknownStrategy(other.to_string()));
                    }
                    Ok(RelayStrategy::Rescaled { k })
                } else {
                    Err(Error::UnknownStrategy(other.to_string()))
                }
            }
        }
    }

    pub fn tag(&self) -> String {
        match self {
            RelayStrategy::Honest => "honest".into(),
            RelayStrategy::AnnounceNoise => "announce_noise".into(),
            RelayStrategy::Rescaled { k } => format!("rescaled:{k}"),
        }
    }
}

/// The relay's public announcement, one complex value per round stored as two
/// real columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Announcements {
    pub q_z: Vec<f64>,
    pub p_z: Vec<f64>,
}

impl Announcements {
    pub fn n(&self) -> usize {
        self.q_z.len()
    }
}

/// One simulated batch of the quantum phase: the parties' preparation
/// variables and the mode quadratures that arrived at the relay.
#[derive(Debug, Clone)]
pub struct ChannelRounds {
    /// Columns (q'_A, p'_A, q'_B, p'_B).
    pub primes: SampleBatch,
    /// Columns of [`RELAY_MODE_LABELS`]: the quadratures at the relay input,
    /// after loss and excess noise.
    pub relay_modes: SampleBatch,
}

/// A batch of complete protocol rounds in the fixed six-column order.
#[derive(Debug, Clone)]
pub struct RoundVariables {
    batch: SampleBatch,
}

impl RoundVariables {
    /// Assemble rounds from preparation variables and announcements.
    pub fn from_parts(primes: &SampleBatch, announcements: &Announcements) -> Result<Self> {
        if primes.dim() != 4 {
            return Err(Error::DimensionMismatch(format!(
                "expected 4 preparation columns, got {}",
                primes.dim()
            )));
        }
        if primes.n() != announcements.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} preparation rounds vs {} announcements",
                primes.n(),
                announcements.n()
            )));
        }
        let n = primes.n();
        let mut data = Vec::with_capacity(n * 6);
        for i in 0..n {
            data.extend_from_slice(primes.row(i));
            data.push(announcements.q_z[i]);
            data.push(announcements.p_z[i]);
        }
        let labels = ROUND_LABELS.iter().map(|s| s.to_string()).collect();
        Ok(Self {
            batch: SampleBatch::new(labels, data)?,
        })
    }

    pub fn batch(&self) -> &SampleBatch {
        &self.batch
    }

    pub fn n(&self) -> usize {
        self.batch.n()
    }

    pub fn announcements(&self) -> Announcements {
        Announcements {
            q_z: self.batch.column(4),
            p_z: self.batch.column(5),
        }
    }
}

/// Exact zero-mean joint law of (q'_A, p'_A, q'_B, p'_B, q_Z, p_Z) under the
/// honest relay.
///
/// Closed forms: the preparation blocks are `V_A I` and `V_B I` with zero
/// cross block; the announcement block is
/// `((eta_A V_A + eta_B V_B)/2 + 1 + excess_noise) I`; the only nonzero
/// correlations are `<q'_A q_Z> = -sqrt(eta_A/2) V_A`,
/// `<p'_A p_Z> = +sqrt(eta_A/2) V_A`, `<q'_B q_Z> = +sqrt(eta_B/2) V_B`,
/// `<p'_B p_Z> = +sqrt(eta_B/2) V_B`.
pub fn analytic_joint_cm(params: &ProtocolParams) -> Result<GaussianModel> {
    params.validate()?;
    let mut m = DMatrix::zeros(6, 6);
    m[(0, 0)] = params.v_a;
    m[(1, 1)] = params.v_a;
    m[(2, 2)] = params.v_b;
    m[(3, 3)] = params.v_b;

    let vz = 0.5 * (params.eta_a * params.v_a + params.eta_b * params.v_b)
        + 1.0
        + params.excess_noise;
    m[(4, 4)] = vz;
    m[(5, 5)] = vz;

    let ca = (params.eta_a / 2.0).sqrt() * params.v_a;
    let cb = (params.eta_b / 2.0).sqrt() * params.v_b;
    m[(0, 4)] = -ca;
    m[(4, 0)] = -ca;
    m[(1, 5)] = ca;
    m[(5, 1)] = ca;
    m[(2, 4)] = cb;
    m[(4, 2)] = cb;
    m[(3, 5)] = cb;
    m[(5, 3)] = cb;

    Ok(GaussianModel::zero_mean(CovarianceMatrix::validate(m)?))
}

/// Simulate the quantum phase by explicit propagation: draw preparation
/// variables and vacuum/thermal noises per round and push them through the
/// links. Deterministic for fixed params, independent of thread count.
///
/// This route is intentionally distinct from drawing the analytic joint law,
/// so Monte Carlo consistency checks exercise the closed forms.
pub fn propagate_rounds(params: &ProtocolParams) -> Result<ChannelRounds> {
    params.validate()?;
    let n = params.n_rounds;
    let sqrt_eta_a = params.eta_a.sqrt();
    let sqrt_loss_a = (1.0 - params.eta_a).sqrt();
    let sqrt_eta_b = params.eta_b.sqrt();
    let sqrt_loss_b = (1.0 - params.eta_b).sqrt();
    let sqrt_va = params.v_a.sqrt();
    let sqrt_vb = params.v_b.sqrt();
    let sqrt_eps = params.excess_noise.sqrt();

    let n_batches = n.div_ceil(BATCH);
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH;
            let rows = BATCH.min(n - start);
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(b as u64);
            let mut primes = Vec::with_capacity(rows * 4);
            let mut modes = Vec::with_capacity(rows * 4);
            let mut normal = || -> f64 { rng.sample(StandardNormal) };
            for _ in 0..rows {
                let q_a = sqrt_va * normal();
                let p_a = sqrt_va * normal();
                let q_b = sqrt_vb * normal();
                let p_b = sqrt_vb * normal();
                // coherent-state vacuum, loss-port vacuum, thermal noise
                let q_a_in = sqrt_eta_a * (q_a + normal())
                    + sqrt_loss_a * normal()
                    + sqrt_eps * normal();
                let p_a_in = sqrt_eta_a * (p_a + normal())
                    + sqrt_loss_a * normal()
                    + sqrt_eps * normal();
                let q_b_in = sqrt_eta_b * (q_b + normal())
                    + sqrt_loss_b * normal()
                    + sqrt_eps * normal();
                let p_b_in = sqrt_eta_b * (p_b + normal())
                    + sqrt_loss_b * normal()
                    + sqrt_eps * normal();
                primes.extend_from_slice(&[q_a, p_a, q_b, p_b]);
                modes.extend_from_slice(&[q_a_in, p_a_in, q_b_in, p_b_in]);
            }
            (primes, modes)
        })
        .collect();

    let mut primes = Vec::with_capacity(n * 4);
    let mut modes = Vec::with_capacity(n * 4);
    for (p, m) in chunks {
        primes.extend_from_slice(&p);
        modes.extend_from_slice(&m);
    }
    let prime_labels = ["q_a_prime", "p_a_prime", "q_b_prime", "p_b_prime"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mode_labels = RELAY_MODE_LABELS.iter().map(|s| s.to_string()).collect();
    Ok(ChannelRounds {
        primes: SampleBatch::new(prime_labels, primes)?,
        relay_modes: SampleBatch::new(mode_labels, modes)?,
    })
}

/// Honest CV Bell detection on the relay-input modes.
fn bell_detect(relay_modes: &SampleBatch) -> Announcements {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let n = relay_modes.n();
    let mut q_z = Vec::with_capacity(n);
    let mut p_z = Vec::with_capacity(n);
    for row in relay_modes.rows() {
        q_z.push((row[2] - row[0]) * inv_sqrt2);
        p_z.push((row[1] + row[3]) * inv_sqrt2);
    }
    Announcements { q_z, p_z }
}

/// Produce the relay announcement for a batch of incoming modes under the
/// given strategy. The seed is only used by strategies that draw their own
/// randomness.
pub fn adversarial_relay(
    relay_modes: &SampleBatch,
    strategy: RelayStrategy,
    seed: u64,
) -> Result<Announcements> {
    if relay_modes.dim() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "expected 4 relay-input columns, got {}",
            relay_modes.dim()
        )));
    }
    match strategy {
        RelayStrategy::Honest => Ok(bell_detect(relay_modes)),
        RelayStrategy::Rescaled { k } => {
            let mut ann = bell_detect(relay_modes);
            ann.q_z.iter_mut().for_each(|x| *x *= k);
            ann.p_z.iter_mut().for_each(|x| *x *= k);
            Ok(ann)
        }
        RelayStrategy::AnnounceNoise => {
            let n = relay_modes.n();
            let n_batches = n.div_ceil(BATCH);
            let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_batches)
                .into_par_iter()
                .map(|b| {
                    let rows = BATCH.min(n - b * BATCH);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(NOISE_STREAM_OFFSET + b as u64);
                    let mut q = Vec::with_capacity(rows);
                    let mut p = Vec::with_capacity(rows);
                    for _ in 0..rows {
                        q.push(rng.sample(StandardNormal));
                        p.push(rng.sample(StandardNormal));
                    }
                    (q, p)
                })
                .collect();
            let mut q_z = Vec::with_capacity(n);
            let mut p_z = Vec::with_capacity(n);
            for (q, p) in chunks {
                q_z.extend_from_slice(&q);
                p_z.extend_from_slice(&p);
            }
            Ok(Announcements { q_z, p_z })
        }
    }
}

/// Simulate complete honest rounds.
pub fn simulate_rounds(params: &ProtocolParams) -> Result<RoundVariables> {
    simulate_rounds_with(params, RelayStrategy::Honest)
}

/// Simulate complete rounds under an arbitrary relay strategy.
pub fn simulate_rounds_with(
    params: &ProtocolParams,
    strategy: RelayStrategy,
) -> Result<RoundVariables> {
    let rounds = propagate_rounds(params)?;
    let announcements = adversarial_relay(&rounds.relay_modes, strategy, params.seed)?;
    RoundVariables::from_parts(&rounds.primes, &announcements)
}
