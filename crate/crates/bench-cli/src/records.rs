//! Trial records and their CSV/JSON serialization.

use std::io::Write;

use serde::Serialize;

/// One method's result on one trial.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: String,
    pub rho_open: f64,
    pub rho_closed: f64,
    pub j: f64,
    pub j_star: f64,
    pub rel_gap: f64,
    pub time_ms: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_posterior: Option<f64>,
    /// Constant gain, row-major (JSON output only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub const CSV_HEADER: &str =
    "trial,method,rho_open,rho_closed,J,J_star,rel_gap,time_ms,converged,epsilon_posterior";

/// Writes the records as CSV: mandatory header, UTF-8, LF line endings.
/// With `timing` off the time column is written as zero, making reruns of
/// the same seeded configuration byte-identical.
pub fn write_csv<W: Write>(records: &[TrialRecord], timing: bool, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let eps = r
            .epsilon_posterior
            .map(|e| e.to_string())
            .unwrap_or_default();
        let time = if timing { r.time_ms } else { 0.0 };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.method,
            r.rho_open,
            r.rho_closed,
            r.j,
            r.j_star,
            r.rel_gap,
            time,
            r.converged,
            eps
        )?;
    }
    Ok(())
}

pub fn csv_string(records: &[TrialRecord], timing: bool) -> String {
    let mut out = Vec::new();
    write_csv(records, timing, &mut out).expect("in-memory write cannot fail");
    String::from_utf8(out).expect("CSV is valid UTF-8")
}

fn zero_time(records: &[TrialRecord]) -> Vec<TrialRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.time_ms = 0.0;
            r
        })
        .collect()
}

/// Serializes the records (and an optional experiment report) as JSON.
pub fn json_string<R: Serialize>(
    records: &[TrialRecord],
    report: Option<&R>,
    timing: bool,
) -> String {
    #[derive(Serialize)]
    struct Document<'a, R: Serialize> {
        records: &'a [TrialRecord],
        #[serde(skip_serializing_if = "Option::is_none")]
        report: Option<&'a R>,
    }
    let stripped;
    let records = if timing {
        records
    } else {
        stripped = zero_time(records);
        &stripped[..]
    };
    serde_json::to_string_pretty(&Document { records, report }).expect("serializable")
}

/// Per-method summary of a repeated-run experiment.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub stabilized: usize,
    pub median_rel_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Text table of the per-method summaries.
pub fn summary_table(rows: &[MethodSummary]) -> String {
    let mut out = String::from("method  median_rel_gap  stabilized\n");
    for row in rows {
        out.push_str(&format!(
            "{:<7} {:<15.6} {}/{}{}\n",
            row.method,
            row.median_rel_gap,
            row.stabilized,
            row.runs,
            row.note
                .as_deref()
                .map(|n| format!("  ({n})"))
                .unwrap_or_default()
        ));
    }
    out
}

/// Per-method robustness report of the scenario experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessEntry {
    pub method: String,
    pub support_cardinality: usize,
    pub support_indices: Vec<usize>,
    pub epsilon_posterior: f64,
    /// Scenario count entering the violation level (detectable ones for
    /// the Riccati route).
    pub scenarios_retained: usize,
    pub fresh_samples: usize,
    pub fresh_violation_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub n_scenarios: usize,
    pub beta: f64,
    pub entries: Vec<RobustnessEntry>,
}

pub fn robustness_table(report: &RobustnessReport) -> String {
    let mut out = format!(
        "scenarios: {}, beta: {}\nmethod  support  epsilon   fresh_violation_rate\n",
        report.n_scenarios, report.beta
    );
    for e in &report.entries {
        out.push_str(&format!(
            "{:<7} {:<8} {:<9.4} {:.4} ({} samples)\n",
            e.method,
            e.support_cardinality,
            e.epsilon_posterior,
            e.fresh_violation_rate,
            e.fresh_samples
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(trial: usize) -> TrialRecord {
        TrialRecord {
            trial,
            method: "s0".into(),
            rho_open: 1.5,
            rho_closed: 0.75,
            j: 120.5,
            j_star: 100.0,
            rel_gap: 0.205,
            time_ms: 12.25,
            converged: true,
            epsilon_posterior: None,
            gain: None,
            note: None,
        }
    }

    #[test]
    fn csv_layout_is_exact() {
        let mut r = record(3);
        r.epsilon_posterior = Some(0.1981);
        let text = csv_string(&[r], true);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "trial,method,rho_open,rho_closed,J,J_star,rel_gap,time_ms,converged,epsilon_posterior"
        );
        assert_eq!(
            lines.next().unwrap(),
            "3,s0,1.5,0.75,120.5,100,0.205,12.25,true,0.1981"
        );
        assert!(lines.next().is_none());
        // LF endings only.
        assert!(!text.contains('\r'));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn csv_empty_epsilon_and_zeroed_timing() {
        let text = csv_string(&[record(0)], false);
        assert!(text.lines().nth(1).unwrap().ends_with(",0,true,"));
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn json_omits_empty_fields() {
        let text = json_string::<()>(&[record(1)], None, true);
        assert!(!text.contains("epsilon_posterior"));
        assert!(!text.contains("gain"));
        assert!(text.contains("\"method\": \"s0\""));
    }
}
