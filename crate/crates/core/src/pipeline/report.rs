//! The per-run report and its serializations: a flat JSON object with reals
//! written at 17 significant digits (lossless for f64), and a one-row CSV
//! with the same fields in the same order.

use serde::{Deserialize, Serialize};

use crate::displacement::{DisplacementGains, GainPair, DECORRELATION_LABELS};
use crate::error::{Error, Result};
use crate::estimation::CommLedger;

/// Echo of the configuration a report was produced from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub v_a: f64,
    pub v_b: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub excess_noise: f64,
    pub n_rounds: u64,
    pub seed: u64,
    pub relay_strategy: String,
    pub baseline_f: f64,
    pub confidence: f64,
    pub output_path: String,
    pub report_format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedCmReport {
    pub v_a_declared: f64,
    pub v_b_declared: f64,
    pub v_z: [[f64; 2]; 2],
    pub c_az: [[f64; 2]; 2],
    pub c_bz: [[f64; 2]; 2],
    pub n_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfwidthsReport {
    pub confidence: f64,
    pub v_z: [[f64; 2]; 2],
    pub c_az: [[f64; 2]; 2],
    pub c_bz: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPairReport {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsReport {
    pub q_a: GainPairReport,
    pub p_a: GainPairReport,
    pub q_b: GainPairReport,
    pub p_b: GainPairReport,
}

impl From<&DisplacementGains> for GainsReport {
    fn from(g: &DisplacementGains) -> Self {
        let conv = |p: GainPair| GainPairReport { u: p.u, v: p.v };
        Self {
            q_a: conv(g.q_a),
            p_a: conv(g.p_a),
            q_b: conv(g.q_b),
            p_b: conv(g.p_b),
        }
    }
}

impl GainsReport {
    pub fn pairs(&self) -> [GainPairReport; 4] {
        [self.q_a, self.p_a, self.q_b, self.p_b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationSection {
    pub labels: Vec<String>,
    pub moments: [f64; 8],
    pub standard_errors: [f64; 8],
    pub pass: bool,
}

/// Complete result of one experiment run. Deterministic for a fixed config
/// except for `wall_clock_seconds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub estimated_cm: EstimatedCmReport,
    pub halfwidths: HalfwidthsReport,
    pub gains: GainsReport,
    pub v_ab: [[f64; 4]; 4],
    pub decorrelation: DecorrelationSection,
    pub mutual_information_nats: f64,
    pub ledger: CommLedger,
    pub key_usable_fraction_mdi: f64,
    pub key_usable_fraction_baseline: f64,
    pub wall_clock_seconds: f64,
    pub seed: u64,
}

/// Format a real with 17 significant digits, enough to round-trip any f64.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

impl Report {
    fn check_finite(&self) -> Result<()> {
        let mut values: Vec<f64> = vec![
            self.mutual_information_nats,
            self.key_usable_fraction_mdi,
            self.key_usable_fraction_baseline,
            self.wall_clock_seconds,
        ];
        values.extend(self.v_ab.iter().flatten());
        values.extend(self.estimated_cm.v_z.iter().flatten());
        values.extend(self.estimated_cm.c_az.iter().flatten());
        values.extend(self.estimated_cm.c_bz.iter().flatten());
        values.extend(self.halfwidths.v_z.iter().flatten());
        values.extend(self.halfwidths.c_az.iter().flatten());
        values.extend(self.halfwidths.c_bz.iter().flatten());
        values.extend(self.decorrelation.moments);
        values.extend(self.decorrelation.standard_errors);
        for p in self.gains.pairs() {
            values.push(p.u);
            values.push(p.v);
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "report".into(),
                reason: "all numeric fields must be finite".into(),
            });
        }
        Ok(())
    }

    /// Serialize to the flat JSON object with 17-significant-digit reals.
    pub fn to_json_string(&self) -> Result<String> {
        self.check_finite()?;
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFigFormatter);
        self.serialize(&mut ser)
            .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
        String::from_utf8(out)
            .map_err(|e| Error::Config(format!("report serialization produced bad utf8: {e}")))
    }

    pub fn from_json_str(s: &str) -> Result<Report> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("report parse failed: {e}")))
    }

    /// Flattened (column name, value) pairs in report order.
    pub fn flat_fields(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let real = |out: &mut Vec<(String, String)>, name: &str, x: f64| {
            out.push((name.to_string(), format_real(x)));
        };
        let int = |out: &mut Vec<(String, String)>, name: &str, x: u64| {
            out.push((name.to_string(), x.to_string()));
        };
        let mat2 = |out: &mut Vec<(String, String)>, prefix: &str, m: &[[f64; 2]; 2]| {
            let tags = [["qq", "qp"], ["pq", "pp"]];
            for i in 0..2 {
                for j in 0..2 {
                    out.push((format!("{prefix}.{}", tags[i][j]), format_real(m[i][j])));
                }
            }
        };

        let c = &self.config;
        real(&mut out, "config.v_a", c.v_a);
        real(&mut out, "config.v_b", c.v_b);
        real(&mut out, "config.eta_a", c.eta_a);
        real(&mut out, "config.eta_b", c.eta_b);
        real(&mut out, "config.excess_noise", c.excess_noise);
        int(&mut out, "config.n_rounds", c.n_rounds);
        int(&mut out, "config.seed", c.seed);
        out.push(("config.relay_strategy".into(), c.relay_strategy.clone()));
        real(&mut out, "config.baseline_f", c.baseline_f);
        real(&mut out, "config.confidence", c.confidence);
        out.push(("config.output_path".into(), c.output_path.clone()));
        out.push(("config.report_format".into(), c.report_format.clone()));

        real(&mut out, "estimated_cm.v_a_declared", self.estimated_cm.v_a_declared);
        real(&mut out, "estimated_cm.v_b_declared", self.estimated_cm.v_b_declared);
        mat2(&mut out, "estimated_cm.v_z", &self.estimated_cm.v_z);
        mat2(&mut out, "estimated_cm.c_az", &self.estimated_cm.c_az);
        mat2(&mut out, "estimated_cm.c_bz", &self.estimated_cm.c_bz);
        int(&mut out, "estimated_cm.n_used", self.estimated_cm.n_used);

        real(&mut out, "halfwidths.confidence", self.halfwidths.confidence);
        mat2(&mut out, "halfwidths.v_z", &self.halfwidths.v_z);
        mat2(&mut out, "halfwidths.c_az", &self.halfwidths.c_az);
        mat2(&mut out, "halfwidths.c_bz", &self.halfwidths.c_bz);

        for (name, pair) in ["q_a", "p_a", "q_b", "p_b"].iter().zip(self.gains.pairs()) {
            real(&mut out, &format!("gains.{name}.u"), pair.u);
            real(&mut out, &format!("gains.{name}.v"), pair.v);
        }

        for i in 0..4 {
            for j in 0..4 {
                real(&mut out, &format!("v_ab.{i}{j}"), self.v_ab[i][j]);
            }
        }

        for (k, label) in DECORRELATION_LABELS.iter().enumerate() {
            real(
                &mut out,
                &format!("decorrelation.moment.{label}"),
                self.decorrelation.moments[k],
            );
        }
        for (k, label) in DECORRELATION_LABELS.iter().enumerate() {
            real(
                &mut out,
                &format!("decorrelation.se.{label}"),
                self.decorrelation.standard_errors[k],
            );
        }
        out.push(("decorrelation.pass".into(), self.decorrelation.pass.to_string()));

        real(&mut out, "mutual_information_nats", self.mutual_information_nats);

        int(&mut out, "ledger.relay_announcement_bytes", self.ledger.relay_announcement_bytes);
        int(&mut out, "ledger.pe_extra_bytes", self.ledger.pe_extra_bytes);
        int(&mut out, "ledger.error_correction_bytes", self.ledger.error_correction_bytes);
        real(&mut out, "ledger.baseline_f", self.ledger.baseline_f);
        int(&mut out, "ledger.baseline_pe_bytes", self.ledger.baseline_pe_bytes);

        real(&mut out, "key_usable_fraction_mdi", self.key_usable_fraction_mdi);
        real(&mut out, "key_usable_fraction_baseline", self.key_usable_fraction_baseline);
        real(&mut out, "wall_clock_seconds", self.wall_clock_seconds);
        int(&mut out, "seed", self.seed);
        out
    }

    /// One header line plus one data row, columns in report order.
    pub fn to_csv_string(&self) -> Result<String> {
        self.check_finite()?;
        let fields = self.flat_fields();
        let header: Vec<&str> = fields.iter().map(|(k, _)| k.as_str()).collect();
        let row: Vec<&str> = fields.iter().map(|(_, v)| v.as_str()).collect();
        Ok(format!("{}\n{}\n", header.join(","), row.join(",")))
    }

    /// Serialize in the configured format.
    pub fn render(&self, format: super::config::ReportFormat) -> Result<String> {
        match format {
            super::config::ReportFormat::Json => self.to_json_string(),
            super::config::ReportFormat::Csv => self.to_csv_string(),
        }
    }
}
