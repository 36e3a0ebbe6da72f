//! End-to-end experiment driver: seeded runs of prepare -> relay -> estimate
//! -> displace, report emission, and the equivalence sweep.
//!
//! The public channel is modeled explicitly: announcements reach the parties
//! only through [`PublicChannel`], which accounts every byte, and the
//! estimator inputs are built from party-local columns plus that broadcast.
//! No preparation variable ever crosses the channel.

pub mod config;
pub mod report;

use std::time::Instant;

use crate::displacement::{
    apply_displacements, conditional_cm, solve_gains, verify_decorrelation, DECORRELATION_LABELS,
};
use crate::error::{Error, Result};
use crate::estimation::{
    alice_local_estimate, assemble_cm, bob_local_estimate, build_ledger, confidence_halfwidths,
    AliceView, BobView, ANNOUNCEMENT_BYTES_PER_ROUND,
};
use crate::gaussian::{gaussian_mutual_information, GaussianModel};
use crate::relay::{adversarial_relay, propagate_rounds, Announcements, RoundVariables};
use crate::teleport::{
    added_noise, modulation_for_squeezing, scheme1_direct, scheme4_mdi_prepare_and_measure,
    GaussianInputState, TeleportConfig,
};

pub use config::{ExperimentConfig, ReportFormat};
pub use report::Report;

/// The classical broadcast channel between the relay and the parties. Every
/// byte that crosses it is counted; the announcement is the only traffic.
#[derive(Debug, Default)]
pub struct PublicChannel {
    announcement_bytes: u64,
    pe_extra_bytes: u64,
}

impl PublicChannel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Broadcast the relay announcement; both parties receive an identical
    /// copy. Counted once: two 8-byte reals per round.
    pub fn broadcast(&mut self, announcements: &Announcements) -> (Announcements, Announcements) {
        self.announcement_bytes +=
            ANNOUNCEMENT_BYTES_PER_ROUND * announcements.n() as u64;
        (announcements.clone(), announcements.clone())
    }

    pub fn announcement_bytes(&self) -> u64 {
        self.announcement_bytes
    }

    pub fn pe_extra_bytes(&self) -> u64 {
        self.pe_extra_bytes
    }
}

/// Run one full experiment: simulate the quantum phase, estimate the joint
/// covariance matrix from party-local data plus the broadcast, solve and
/// apply the displacements, and assemble the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let started = Instant::now();
    let params = cfg.validate()?;

    let rounds = propagate_rounds(&params)?;
    let announcements = adversarial_relay(&rounds.relay_modes, cfg.relay_strategy, params.seed)?;

    let mut channel = PublicChannel::new();
    let (to_alice, to_bob) = channel.broadcast(&announcements);

    let alice_view = AliceView::new(
        rounds.primes.column(0),
        rounds.primes.column(1),
        &to_alice,
    )?;
    let bob_view = BobView::new(rounds.primes.column(2), rounds.primes.column(3), &to_bob)?;

    let alice_est = alice_local_estimate(&alice_view)?;
    let bob_est = bob_local_estimate(&bob_view)?;
    let estimated = assemble_cm(&alice_est, &bob_est, params.v_a, params.v_b)?;
    let halfwidths = confidence_halfwidths(&estimated, params.n_rounds, cfg.confidence)?;

    let gains = solve_gains(&estimated)?;
    let round_vars = RoundVariables::from_parts(&rounds.primes, &announcements)?;
    let keys = apply_displacements(&round_vars, &gains)?;
    let v_ab = conditional_cm(&estimated)?;
    let decorrelation = verify_decorrelation(&keys, &announcements)?;

    let mi = gaussian_mutual_information(
        &GaussianModel::zero_mean(v_ab.clone()),
        &[0, 1],
        &[2, 3],
    )?;

    let ledger = build_ledger(&params, cfg.baseline_f)?;
    // Transport-boundary invariant: the broadcast is the only public traffic.
    assert_eq!(channel.announcement_bytes(), ledger.relay_announcement_bytes);
    assert_eq!(channel.pe_extra_bytes(), 0);
    assert_eq!(ledger.pe_extra_bytes, 0);

    let mat2 = |m: &nalgebra::Matrix2<f64>| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]];
    let mut v_ab_rows = [[0.0; 4]; 4];
    for (i, row) in v_ab_rows.iter_mut().enumerate() {
        for (j, value) in row.iter_mut().enumerate() {
            *value = v_ab.get(i, j);
        }
    }

    Ok(Report {
        config: report::ConfigEcho {
            v_a: cfg.v_a,
            v_b: cfg.v_b,
            eta_a: cfg.eta_a,
            eta_b: cfg.eta_b,
            excess_noise: cfg.excess_noise,
            n_rounds: cfg.n_rounds as u64,
            seed: cfg.seed,
            relay_strategy: cfg.relay_strategy.tag(),
            baseline_f: cfg.baseline_f,
            confidence: cfg.confidence,
            output_path: cfg.output_path.clone(),
            report_format: cfg.report_format.tag().to_string(),
        },
        estimated_cm: report::EstimatedCmReport {
            v_a_declared: estimated.v_a_declared,
            v_b_declared: estimated.v_b_declared,
            v_z: mat2(&estimated.v_z),
            c_az: mat2(&estimated.c_az),
            c_bz: mat2(&estimated.c_bz),
            n_used: alice_est.n_used as u64,
        },
        halfwidths: report::HalfwidthsReport {
            confidence: halfwidths.confidence,
            v_z: mat2(&halfwidths.v_z),
            c_az: mat2(&halfwidths.c_az),
            c_bz: mat2(&halfwidths.c_bz),
        },
        gains: report::GainsReport::from(&gains),
        v_ab: v_ab_rows,
        decorrelation: report::DecorrelationSection {
            labels: DECORRELATION_LABELS.iter().map(|s| s.to_string()).collect(),
            moments: decorrelation.moments,
            standard_errors: decorrelation.standard_errors,
            pass: decorrelation.pass,
        },
        mutual_information_nats: mi,
        ledger,
        key_usable_fraction_mdi: 1.0,
        key_usable_fraction_baseline: 1.0 - cfg.baseline_f,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}

/// One row of the equivalence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub r: f64,
    pub v_b_mod: f64,
    pub added_noise: f64,
    /// Max-abs covariance difference between the prepare-and-measure scheme
    /// at the matched modulation and direct heterodyne detection.
    pub scheme_diff: f64,
}

/// Compare the prepare-and-measure scheme against direct heterodyne over a
/// grid of squeezing values mapped to their equivalent modulations.
pub fn run_equivalence_sweep(r_grid: &[f64]) -> Result<Vec<SweepRow>> {
    if r_grid.is_empty() {
        return Err(Error::EmptyGrid("r grid must contain at least one point".into()));
    }
    let input = GaussianInputState::coherent(nalgebra::Vector2::new(1.0, -0.5));
    let direct = scheme1_direct(&input)?;
    r_grid
        .iter()
        .map(|&r| {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "r".into(),
                    reason: format!("grid point {r} must be finite and nonnegative"),
                });
            }
            let v_b_mod = modulation_for_squeezing(r);
            let cfg = TeleportConfig::new(r, 1.0, v_b_mod)?;
            let mdi = scheme4_mdi_prepare_and_measure(&input, &cfg)?;
            Ok(SweepRow {
                r,
                v_b_mod,
                added_noise: added_noise(r),
                scheme_diff: mdi.max_abs_diff(&direct),
            })
        })
        .collect()
}

/// Render sweep rows as a CSV table.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("r,v_b_mod,added_noise,scheme4_vs_scheme1_max_abs_diff\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            report::format_real(row.r),
            report::format_real(row.v_b_mod),
            report::format_real(row.added_noise),
            report::format_real(row.scheme_diff),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::displacement::symmetric_honest_gain;
    use crate::relay::RelayStrategy;

    fn small_config(n: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            n_rounds: n,
            seed,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn honest_run_reproduces_the_gain_pattern() {
        let cfg = small_config(200_000, 7);
        let report = run_experiment(&cfg).unwrap();
        let expected = symmetric_honest_gain(cfg.v_a, cfg.eta_a);
        // standard error of a gain is roughly that of the cross moment over v_z
        let se = ((cfg.v_a * 2.0 + 1.0) / cfg.n_rounds as f64).sqrt() / 2.0;
        assert!((report.gains.q_a.u - (-expected)).abs() < 5.0 * se);
        assert!((report.gains.p_a.v - expected).abs() < 5.0 * se);
        assert!((report.gains.q_b.u - expected).abs() < 5.0 * se);
        assert!((report.gains.p_b.v - expected).abs() < 5.0 * se);
        assert_eq!(report.key_usable_fraction_mdi, 1.0);
        assert_eq!(report.key_usable_fraction_baseline, 0.9);
        assert!(report.decorrelation.pass);
    }

    #[test]
    fn noise_relay_erases_gains_and_information() {
        let mut cfg = small_config(500_000, 11);
        cfg.relay_strategy = RelayStrategy::AnnounceNoise;
        let report = run_experiment(&cfg).unwrap();
        let se = ((cfg.v_a * 1.0) / cfg.n_rounds as f64).sqrt();
        for pair in report.gains.pairs() {
            assert!(pair.u.abs() < 6.0 * se);
            assert!(pair.v.abs() < 6.0 * se);
        }
        assert!(report.mutual_information_nats < 1e-6);
    }

    #[test]
    fn reports_are_deterministic_modulo_wall_clock() {
        let cfg = small_config(20_000, 3);
        let mut a = run_experiment(&cfg).unwrap();
        let mut b = run_experiment(&cfg).unwrap();
        a.wall_clock_seconds = 0.0;
        b.wall_clock_seconds = 0.0;
        assert_eq!(
            a.to_json_string().unwrap(),
            b.to_json_string().unwrap()
        );
    }

    #[test]
    fn channel_trace_is_exactly_the_announcement() {
        for n in [1000usize, 4096, 10_000] {
            let cfg = small_config(n, 1);
            let report = run_experiment(&cfg).unwrap();
            assert_eq!(report.ledger.relay_announcement_bytes, 16 * n as u64);
            assert_eq!(report.ledger.pe_extra_bytes, 0);
        }
    }

    #[test]
    fn report_json_round_trips_losslessly() {
        let cfg = small_config(5000, 9);
        let report = run_experiment(&cfg).unwrap();
        let json = report.to_json_string().unwrap();
        let back = Report::from_json_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json_string().unwrap(), json);
    }

    #[test]
    fn csv_has_matching_header_and_row() {
        let cfg = small_config(2000, 5);
        let report = run_experiment(&cfg).unwrap();
        let csv = report.to_csv_string().unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), row.len());
        assert!(header.contains(&"gains.q_a.u"));
        assert!(header.contains(&"ledger.pe_extra_bytes"));
        assert!(lines.next().is_none());
    }

    #[test]
    fn sweep_rejects_empty_and_bad_grids() {
        assert!(matches!(
            run_equivalence_sweep(&[]).unwrap_err(),
            Error::EmptyGrid(_)
        ));
        assert!(run_equivalence_sweep(&[-1.0]).is_err());
    }

    #[test]
    fn sweep_difference_decreases_and_vanishes() {
        let rows = run_equivalence_sweep(&[0.0, 0.5, 1.0, 2.0, 4.0, 10.0]).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].scheme_diff < pair[0].scheme_diff);
        }
        assert!(rows.last().unwrap().scheme_diff < 1e-6);
        let table = sweep_table(&rows);
        assert_eq!(table.lines().count(), rows.len() + 1);
    }
}
