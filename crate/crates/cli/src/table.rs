//! Plain-text result tables.

use diffvar_core::estimators::ContrastReport;

pub struct TableRow {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

impl From<&ContrastReport> for TableRow {
    fn from(r: &ContrastReport) -> Self {
        TableRow {
            label: r.method.label().to_string(),
            estimate: r.estimate,
            se: r.se,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            p_value: r.p_value,
        }
    }
}

/// Fixed-point formatting without a negative sign on values that round to zero.
pub fn fixed(v: f64, digits: usize) -> String {
    let s = format!("{v:.digits$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

/// Markdown-style table; `level` is the confidence level in percent.
pub fn render_table(rows: &[TableRow], digits: usize, level: f64) -> String {
    let mut out = format!(
        "| Estimator | Estimate | Standard Error | {} Confidence Interval | P-Value |\n|---|---|---|---|---|\n",
        format!("{level:.1}%").replace(".0%", "%")
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | ({}, {}) | {} |\n",
            r.label,
            fixed(r.estimate, digits),
            fixed(r.se, digits),
            fixed(r.ci_low, digits),
            fixed(r.ci_high, digits),
            format_p(r.p_value)
        ));
    }
    out
}
