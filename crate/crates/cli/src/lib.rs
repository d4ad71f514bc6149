//! Scenario-file ingestion, report rendering, and the exit-code contract of
//! the `blockprior` binary.
//!
//! Exit codes: 0 = computed and safe, 1 = computed but an unsafe flag was
//! raised, 2 = invalid input, 3 = I/O failure.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use blockprior::{
    analyze, AnalysisOptions, BlockSpec, Error as CoreError, Report, Scenario, SymMatrix,
};

pub const EXIT_SAFE: i32 = 0;
pub const EXIT_UNSAFE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// On-disk scenario document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub blocks: Vec<BlockFile>,
    pub gradient: Vec<f64>,
    #[serde(default)]
    pub quad_mean: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub quad_var: Option<Vec<Vec<f64>>>,
    pub intrinsic_variance: f64,
    pub phi0: Vec<f64>,
    #[serde(default)]
    pub phi0_prime: Option<Vec<f64>>,
    pub theta0: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub name: String,
    pub labels: Vec<String>,
    /// Row-major nested arrays; must be symmetric.
    pub covariance: Vec<Vec<f64>>,
}

fn symmetric_matrix(what: &str, rows: &[Vec<f64>]) -> Result<SymMatrix, String> {
    let n = rows.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(format!(
                "{what}: row {i} has {} entries, expected {n}",
                row.len()
            ));
        }
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, other) in rows.iter().enumerate().take(i) {
            let (a, b) = (row[j], other[i]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(format!(
                    "{what}: entry ({i}, {j}) = {a} does not match ({j}, {i}) = {b}"
                ));
            }
        }
    }
    SymMatrix::from_rows(rows).map_err(|e| format!("{what}: {e}"))
}

impl ScenarioFile {
    pub fn to_scenario(&self, rel_tol: f64) -> Result<Scenario, String> {
        if self.blocks.is_empty() {
            return Err("\"blocks\" must contain at least one block".into());
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let cov = symmetric_matrix(
                &format!("covariance of block \"{}\"", b.name),
                &b.covariance,
            )?;
            let labels: Vec<&str> = b.labels.iter().map(String::as_str).collect();
            let block = BlockSpec::with_tolerance(&b.name, &labels, cov, rel_tol)
                .map_err(|e| format!("block {i}: {e}"))?;
            blocks.push(block);
        }
        let mut builder = Scenario::builder(blocks, self.gradient.clone())
            .intrinsic_variance(self.intrinsic_variance)
            .phi0(self.phi0.clone())
            .theta0(self.theta0);
        if let Some(rows) = &self.quad_mean {
            builder = builder.quad_mean(symmetric_matrix("\"quad_mean\"", rows)?);
        }
        if let Some(rows) = &self.quad_var {
            builder = builder.quad_var(symmetric_matrix("\"quad_var\"", rows)?);
        }
        if let Some(p) = &self.phi0_prime {
            builder = builder.phi0_prime(p.clone());
        }
        builder.build().map_err(|e| e.to_string())
    }
}

/// Doubles rendered with 17 significant digits, losslessly round-trippable.
pub fn format_number(value: f64) -> String {
    format!("{value:.16e}")
}

struct SigDigitFormatter;

impl serde_json::ser::Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        writer.write_all(format_number(value).as_bytes())
    }
}

/// Serialize with the 17-significant-digit float format.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigitFormatter);
    value
        .serialize(&mut ser)
        .expect("report serialization cannot fail");
    String::from_utf8(out).expect("report JSON is UTF-8")
}

fn render_matrix(out: &mut String, indent: &str, m: &SymMatrix) {
    for row in m.to_rows() {
        out.push_str(indent);
        let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
        out.push_str(&cells.join("  "));
        out.push('\n');
    }
}

/// Plain-text rendering; numeric values are formatted exactly as in the
/// JSON rendering.
pub fn render_text(report: &Report) -> String {
    let mut s = String::new();
    let line = |k: &str, v: String| -> String { format!("{k:<28}{v}\n") };
    s.push_str(&line("n_blocks:", report.n_blocks.to_string()));
    s.push_str(&line("n_params:", report.n_params.to_string()));
    s.push_str(&line("alpha:", format_number(report.alpha)));
    s.push_str(&line(
        "degenerate_gradient:",
        report.degenerate_gradient.to_string(),
    ));
    s.push_str(&line(
        "uncorrelated_extrinsic:",
        format_number(report.uncorrelated_extrinsic),
    ));
    s.push_str(&line(
        "worst_case_extrinsic:",
        format_number(report.worst_case_extrinsic),
    ));
    s.push_str(&line(
        "inflated_total_variance:",
        format_number(report.inflated_total_variance),
    ));
    s.push_str("conservative_prior:\n");
    render_matrix(&mut s, "  ", &report.conservative_prior);
    if let Some(safety) = &report.intrinsic_safety {
        s.push_str("intrinsic_safety:\n");
        s.push_str(&line("  lower:", format_number(safety.lower)));
        s.push_str(&line("  upper:", format_number(safety.upper)));
        s.push_str(&line("  inflated:", format_number(safety.inflated)));
        s.push_str(&line("  safe:", safety.safe.to_string()));
        s.push_str(&line(
            "  reason:",
            to_json(&safety.reason).trim_matches('"').to_string(),
        ));
    }
    if let Some(bound) = report.quadratic_extrinsic_bound {
        s.push_str(&line("quadratic_extrinsic_bound:", format_number(bound)));
    }
    if let Some(bias) = &report.bias_bound {
        s.push_str("bias_bound:\n");
        s.push_str(&line("  bound:", format_number(bias.bound)));
        if let Some(scale) = bias.comparison_scale {
            s.push_str(&line("  comparison_scale:", format_number(scale)));
        }
    }
    s.push_str("assumptions:\n");
    s.push_str(&line(
        "  posterior_equals_prior:",
        report.assumptions.posterior_equals_prior.to_string(),
    ));
    s.push_str(&line(
        "  gaussian_quadratic_mean:",
        report.assumptions.gaussian_quadratic_mean.to_string(),
    ));
    if let Some(sweep) = &report.completion_sweep {
        s.push_str("completion_sweep:\n");
        s.push_str(&line("  n_completions:", sweep.n_completions.to_string()));
        s.push_str(&line("  max_ratio:", format_number(sweep.max_ratio)));
        s.push_str(&line("  ratio_limit:", format_number(sweep.ratio_limit)));
        s.push_str(&line("  min_margin:", format_number(sweep.min_margin)));
        s.push_str(&line("  violations:", sweep.violations.to_string()));
    }
    if let Some(mc) = &report.monte_carlo {
        s.push_str("monte_carlo:\n");
        s.push_str(&line("  mean:", format_number(mc.simulated.mean)));
        s.push_str(&line("  variance:", format_number(mc.simulated.variance)));
        s.push_str(&line("  se_mean:", format_number(mc.simulated.se_mean)));
        s.push_str(&line(
            "  se_variance:",
            format_number(mc.simulated.se_variance),
        ));
        s.push_str(&line("  n_samples:", mc.simulated.n_samples.to_string()));
        s.push_str(&line("  seed:", mc.simulated.seed.to_string()));
        s.push_str(&line("  analytic_mean:", format_number(mc.analytic_mean)));
        s.push_str(&line(
            "  analytic_variance:",
            format_number(mc.analytic_variance),
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Json,
}

fn load_scenario(path: &Path, rel_tol: f64, err: &mut impl Write) -> Result<Scenario, i32> {
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
            return Err(EXIT_IO);
        }
    };
    let file: ScenarioFile = match serde_json::from_str(&raw) {
        Ok(file) => file,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return Err(EXIT_INVALID);
        }
    };
    match file.to_scenario(rel_tol) {
        Ok(scenario) => Ok(scenario),
        Err(msg) => {
            let _ = writeln!(err, "error: {}: {msg}", path.display());
            Err(EXIT_INVALID)
        }
    }
}

/// `validate` subcommand: exit 0 if the file parses to a valid scenario.
pub fn cmd_validate(path: &Path, rel_tol: f64, out: &mut impl Write, err: &mut impl Write) -> i32 {
    match load_scenario(path, rel_tol, err) {
        Ok(scenario) => {
            let _ = writeln!(
                out,
                "valid: {} blocks, {} parameters",
                scenario.n_blocks(),
                scenario.n_params()
            );
            EXIT_SAFE
        }
        Err(code) => code,
    }
}

/// `report` subcommand: run the analysis and emit the report.
pub fn cmd_report(
    path: &Path,
    options: &AnalysisOptions,
    format: OutputFormat,
    rel_tol: f64,
    out: &mut impl Write,
    err: &mut impl Write,
) -> i32 {
    let scenario = match load_scenario(path, rel_tol, err) {
        Ok(scenario) => scenario,
        Err(code) => return code,
    };
    let report = match analyze(&scenario, options) {
        Ok(report) => report,
        Err(CoreError::NegativeConditionalVariance { phi, variance }) => {
            let _ = writeln!(
                err,
                "error: conditional variance {variance:e} is negative at phi = {phi:?}; \
                 the quadratic variance model leaves its validity region"
            );
            return EXIT_UNSAFE;
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    if !report.all_finite() {
        let _ = writeln!(err, "error: report contains non-finite values");
        return EXIT_INVALID;
    }
    let rendered = match format {
        OutputFormat::Json => {
            let mut s = to_json(&report);
            s.push('\n');
            s
        }
        OutputFormat::Text => render_text(&report),
    };
    let _ = out.write_all(rendered.as_bytes());
    if report.is_safe() {
        EXIT_SAFE
    } else {
        EXIT_UNSAFE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_is_lossless() {
        for &v in &[
            0.0,
            1.0,
            -1.0,
            2.0 / 3.0,
            1.2345678901234567e-100,
            -9.876543210987654e12,
            f64::MIN_POSITIVE,
        ] {
            let s = format_number(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, v, "{s}");
        }
    }

    #[test]
    fn json_uses_17_digit_floats() {
        #[derive(Serialize)]
        struct Probe {
            x: f64,
        }
        assert_eq!(to_json(&Probe { x: 2.0 }), "{\"x\":2.0000000000000000e0}");
    }

    #[test]
    fn symmetric_matrix_rejects_asymmetry() {
        let rows = vec![vec![1.0, 0.2], vec![0.3, 1.0]];
        assert!(symmetric_matrix("test", &rows).is_err());
    }

    #[test]
    fn scenario_file_round_trip() {
        let raw = r#"{
            "blocks": [
                {"name": "a", "labels": ["x"], "covariance": [[1.0]]},
                {"name": "b", "labels": ["y"], "covariance": [[1.0]]}
            ],
            "gradient": [1.0, 1.0],
            "intrinsic_variance": 1.0,
            "phi0": [0.0, 0.0],
            "theta0": 0.0
        }"#;
        let file: ScenarioFile = serde_json::from_str(raw).unwrap();
        let scenario = file.to_scenario(1e-10).unwrap();
        assert_eq!(scenario.n_blocks(), 2);
        assert_eq!(scenario.n_params(), 2);
    }
}
