//! Cohort tables in CSV (display values) and JSON (full precision).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, RowKey, Summary};
use crate::error::{Error, Result};
use crate::metrics::{Metric, PatientMetrics};
use crate::volume::{RegionId, NUM_REGIONS};

/// Decimal places of CSV cells.
pub const DISPLAY_PRECISION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    /// Model against ground truth.
    Performance,
    /// Human-human (`_H`) and model-human (`_M`) agreement.
    Agreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid(format!("unknown report format {other:?} (csv|json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub key: String,
    pub header: String,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub row: RowKey,
    pub name: String,
    pub stored_label: Option<u8>,
    /// Share of all labelled ground-truth voxels, in percent.
    pub voxel_percent: Option<f64>,
    /// One cell per column; `None` where no sample is defined.
    pub cells: Vec<Option<Summary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub region: RegionId,
    pub stored_label: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ReportKind,
    pub precision: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub patients: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observers: Option<usize>,
    pub columns: Vec<Column>,
    pub rows: Vec<ReportRow>,
    pub label_mapping: Vec<LabelMapping>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn cell(&self, row: RowKey, column_key: &str) -> Option<&Summary> {
        let c = self.columns.iter().position(|c| c.key == column_key)?;
        self.rows.iter().find(|r| r.row == row)?.cells[c].as_ref()
    }
}

fn label_mapping() -> Vec<LabelMapping> {
    RegionId::all()
        .map(|r| LabelMapping {
            region: r,
            stored_label: r.stored_label(),
            name: r.name().to_string(),
        })
        .collect()
}

fn row_shell(key: RowKey) -> ReportRow {
    let (name, stored_label) = match key {
        RowKey::Region(r) => (r.name().to_string(), Some(r.stored_label())),
        RowKey::Overall => ("all regions".to_string(), None),
    };
    ReportRow {
        row: key,
        name,
        stored_label,
        voxel_percent: None,
        cells: Vec::new(),
    }
}

fn distinct_patients(records: &[PatientMetrics]) -> usize {
    let mut ids: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

/// Table of model performance: one Dice/HD95/ASD column each, rows for the
/// 13 regions and the pooled overall row. `voxel_percent` adds the share of
/// ground-truth volume per region.
pub fn performance_report(
    records: &[PatientMetrics],
    voxel_percent: Option<&[f64; NUM_REGIONS]>,
) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::invalid("no patient records to report"));
    }
    let patients = distinct_patients(records);
    if patients != records.len() {
        return Err(Error::invalid("duplicate patient ids in performance records"));
    }
    let table = aggregate(records, "model");
    let columns = Metric::ALL
        .map(|m| Column {
            key: m.key().to_string(),
            header: m.label().to_string(),
            metric: m,
        })
        .to_vec();
    let rows = table
        .rows
        .into_iter()
        .map(|(key, cells)| {
            let mut row = row_shell(key);
            row.voxel_percent = voxel_percent.map(|v| match key {
                RowKey::Region(r) => v[r.index() as usize],
                RowKey::Overall => v.iter().sum(),
            });
            row.cells = cells.to_vec();
            row
        })
        .collect();
    Ok(Report {
        kind: ReportKind::Performance,
        precision: DISPLAY_PRECISION,
        dataset: None,
        patients,
        observers: None,
        columns,
        rows,
        label_mapping: label_mapping(),
        warnings: table.warnings,
    })
}

/// Agreement table with interleaved `_H` and `_M` columns per metric; the
/// `_M` columns are present only when model records are given.
pub fn agreement_table(
    human: &[PatientMetrics],
    model: Option<&[PatientMetrics]>,
    observers: usize,
) -> Result<Report> {
    if human.is_empty() {
        return Err(Error::invalid("no observer comparisons to report"));
    }
    let h = aggregate(human, "human");
    let m = model.map(|m| aggregate(m, "model"));
    let mut columns = Vec::new();
    for metric in Metric::ALL {
        let unit = if metric == Metric::Dice { "" } else { " (mm)" };
        let short = metric.label().split(' ').next().unwrap_or_default();
        columns.push(Column {
            key: format!("{}_h", metric.key()),
            header: format!("{short}_H{unit}"),
            metric,
        });
        if m.is_some() {
            columns.push(Column {
                key: format!("{}_m", metric.key()),
                header: format!("{short}_M{unit}"),
                metric,
            });
        }
    }
    let rows = RowKey::all()
        .enumerate()
        .map(|(i, key)| {
            let mut row = row_shell(key);
            for (j, _) in Metric::ALL.iter().enumerate() {
                row.cells.push(h.rows[i].1[j].clone());
                if let Some(m) = &m {
                    row.cells.push(m.rows[i].1[j].clone());
                }
            }
            row
        })
        .collect();
    let mut warnings = h.warnings;
    if let Some(m) = m {
        warnings.extend(m.warnings);
    }
    Ok(Report {
        kind: ReportKind::Agreement,
        precision: DISPLAY_PRECISION,
        dataset: None,
        patients: distinct_patients(human),
        observers: Some(observers),
        columns,
        rows,
        label_mapping: label_mapping(),
        warnings,
    })
}

/// `mean ± std` at the report precision; `-` for an undefined cell.
pub fn format_cell(cell: Option<&Summary>, precision: usize) -> String {
    match cell {
        Some(s) => format!("{:.p$} ± {:.p$}", s.mean, s.std, p = precision),
        None => "-".to_string(),
    }
}

pub fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Csv => render_csv(report),
    }
}

fn render_csv(report: &Report) -> Result<String> {
    let with_percent = report.rows.iter().any(|r| r.voxel_percent.is_some());
    let p = report.precision;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut header = vec!["Region".to_string(), "Name".into(), "Stored label".into()];
    if with_percent {
        header.push("Total voxel %".into());
    }
    header.extend(report.columns.iter().map(|c| c.header.clone()));
    w.write_record(&header)?;
    for row in &report.rows {
        let region = match row.row {
            RowKey::Region(r) => r.index().to_string(),
            RowKey::Overall => "Overall".to_string(),
        };
        let mut rec = vec![
            region,
            row.name.clone(),
            row.stored_label.map_or("-".to_string(), |l| l.to_string()),
        ];
        if with_percent {
            rec.push(row.voxel_percent.map_or("-".to_string(), |v| format!("{v:.p$}")));
        }
        rec.extend(row.cells.iter().map(|c| format_cell(c.as_ref(), p)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv output is not UTF-8: {e}")))
}

pub fn parse_json(text: &str) -> Result<Report> {
    let report: Report = serde_json::from_str(text)?;
    let expected: Vec<RowKey> = RowKey::all().collect();
    let rows: Vec<RowKey> = report.rows.iter().map(|r| r.row).collect();
    if rows != expected {
        return Err(Error::invalid("report rows must be regions 0..=12 followed by overall"));
    }
    if report.rows.iter().any(|r| r.cells.len() != report.columns.len()) {
        return Err(Error::invalid("report row width does not match its columns"));
    }
    Ok(report)
}
