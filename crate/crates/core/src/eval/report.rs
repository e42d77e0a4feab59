//! Evaluation reports: a canonical machine-readable record plus aligned
//! plain-text tables in the layout of the benchmark comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Metric identifiers, used as ordered keys in reports and tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKey {
    Perplexity,
    CpAuc,
    FitbAt1,
    FitbAt5,
    FitbAt25,
    FitbAt250,
    BrandCategoryRate,
    ColorCategoryRate,
    BrandColorCategoryRate,
    PersonalizationRate,
    ItemDiversity,
    OracleCompatibleRate,
}

impl MetricKey {
    pub fn label(&self) -> &'static str {
        match self {
            MetricKey::Perplexity => "PP",
            MetricKey::CpAuc => "CP",
            MetricKey::FitbAt1 => "FITB@1",
            MetricKey::FitbAt5 => "FITB@5",
            MetricKey::FitbAt25 => "FITB@25",
            MetricKey::FitbAt250 => "FITB@250",
            MetricKey::BrandCategoryRate => "Brand-category rate",
            MetricKey::ColorCategoryRate => "Color-category rate",
            MetricKey::BrandColorCategoryRate => "Brand-color-category rate",
            MetricKey::PersonalizationRate => "Personalization rate",
            MetricKey::ItemDiversity => "Item diversity rate",
            MetricKey::OracleCompatibleRate => "Oracle-compatible rate",
        }
    }

    pub fn fitb(r: usize) -> Option<MetricKey> {
        match r {
            1 => Some(MetricKey::FitbAt1),
            5 => Some(MetricKey::FitbAt5),
            25 => Some(MetricKey::FitbAt25),
            250 => Some(MetricKey::FitbAt250),
            _ => None,
        }
    }

    /// Column order of the non-personalized comparison table.
    pub const NON_PERSONALIZED: [MetricKey; 6] = [
        MetricKey::Perplexity,
        MetricKey::CpAuc,
        MetricKey::FitbAt1,
        MetricKey::FitbAt5,
        MetricKey::FitbAt25,
        MetricKey::FitbAt250,
    ];

    /// Row order of the personalized comparison table.
    pub const PERSONALIZED: [MetricKey; 5] = [
        MetricKey::BrandCategoryRate,
        MetricKey::ColorCategoryRate,
        MetricKey::BrandColorCategoryRate,
        MetricKey::PersonalizationRate,
        MetricKey::ItemDiversity,
    ];

    /// Lower is better only for perplexity.
    pub fn lower_is_better(&self) -> bool {
        matches!(self, MetricKey::Perplexity)
    }
}

/// Per-model metric record. The canonical serialization deliberately
/// excludes wall-clock runtime so that identical (config, seeds, data)
/// produce byte-identical reports; runtime lives in the run manifest and
/// the human-readable rendering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub model_family: String,
    pub dataset_id: String,
    pub seed: u64,
    pub metrics: BTreeMap<MetricKey, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl EvalReport {
    pub fn new(model_id: &str, model_family: &str, dataset_id: &str, seed: u64) -> Self {
        Self {
            model_id: model_id.to_string(),
            model_family: model_family.to_string(),
            dataset_id: dataset_id.to_string(),
            seed,
            metrics: BTreeMap::new(),
            notes: BTreeMap::new(),
            runtime_seconds: 0.0,
        }
    }

    pub fn set(&mut self, key: MetricKey, value: f64) {
        match key {
            MetricKey::Perplexity => {}
            _ => debug_assert!((0.0..=1.0).contains(&value) || value.is_nan(), "rate metric {key:?} out of [0,1]: {value}"),
        }
        self.metrics.insert(key, value);
    }

    pub fn get(&self, key: MetricKey) -> Option<f64> {
        self.metrics.get(&key).copied()
    }

    /// Canonical single-line serialization.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialization")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

fn fmt_metric(key: MetricKey, v: f64) -> String {
    match key {
        MetricKey::Perplexity => {
            if v >= 100.0 {
                format!("{v:.0}")
            } else {
                format!("{v:.2}")
            }
        }
        _ => format!("{:.1}%", v * 100.0),
    }
}

/// Aligned table, models as rows: Model | PP | CP | FITB@r...
pub fn non_personalized_table(reports: &[EvalReport]) -> String {
    let mut headers = vec!["Model".to_string()];
    headers.extend(MetricKey::NON_PERSONALIZED.iter().map(|k| k.label().to_string()));
    let mut rows = Vec::new();
    for r in reports {
        let mut row = vec![r.model_id.clone()];
        for key in MetricKey::NON_PERSONALIZED {
            row.push(r.get(key).map(|v| fmt_metric(key, v)).unwrap_or_else(|| "-".to_string()));
        }
        rows.push(row);
    }
    render_table(&headers, &rows)
}

/// Aligned table, metrics as rows and models as columns, matching the
/// personalized comparison layout.
pub fn personalized_table(reports: &[EvalReport]) -> String {
    let mut headers = vec!["Metric".to_string()];
    headers.extend(reports.iter().map(|r| r.model_id.clone()));
    let mut rows = Vec::new();
    for key in MetricKey::PERSONALIZED {
        let mut row = vec![key.label().to_string()];
        for r in reports {
            row.push(r.get(key).map(|v| fmt_metric(key, v)).unwrap_or_else(|| "-".to_string()));
        }
        rows.push(row);
    }
    render_table(&headers, &rows)
}

pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(String::len).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let write_row = |out: &mut String, cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<width$}", width = widths[0]);
            } else {
                let _ = write!(out, "  {cell:>width$}", width = widths[i]);
            }
        }
        out.push('\n');
    };
    write_row(&mut out, headers);
    let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        write_row(&mut out, row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_roundtrip_and_runtime_excluded() {
        let mut r = EvalReport::new("gpt", "gpt", "ds1", 7);
        r.set(MetricKey::Perplexity, 92.0);
        r.set(MetricKey::CpAuc, 0.969);
        r.runtime_seconds = 12.5;
        let line = r.to_json_line();
        assert!(!line.contains("runtime"), "wall-clock must not enter the canonical bytes");
        let back = EvalReport::from_json_line(&line).unwrap();
        assert_eq!(back.metrics, r.metrics);
        assert_eq!(back.model_id, r.model_id);
        // identical metric content serializes identically regardless of runtime
        let mut r2 = r.clone();
        r2.runtime_seconds = 99.0;
        assert_eq!(line, r2.to_json_line());
    }

    #[test]
    fn table_renders_missing_metrics_as_dash() {
        let mut r = EvalReport::new("siamese", "siamese", "ds1", 7);
        r.set(MetricKey::CpAuc, 0.737);
        let table = non_personalized_table(&[r]);
        assert!(table.contains("siamese"));
        assert!(table.contains('-'));
        assert!(table.contains("73.7%"));
    }
}
