//! Cohort summaries of per-region metrics.

use serde::{Deserialize, Serialize};

use crate::metrics::{Metric, PatientMetrics};
use crate::volume::RegionId;

/// Distribution of one metric over the defined samples of a cohort cell.
///
/// Quartiles use linear interpolation between order statistics (rank
/// `p·(n-1)`); whiskers reach the most extreme samples within 1.5 IQR of the
/// box; `std` is the sample standard deviation (0 for a single sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outlier_count: usize,
    /// Samples that were undefined and left out.
    pub undefined_count: usize,
}

/// `None` when no sample is defined.
pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
    let mut undefined = 0;
    let mut v: Vec<f64> = values
        .into_iter()
        .filter_map(|x| {
            if x.is_none() {
                undefined += 1;
            }
            x
        })
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let q = |p: f64| crate::metrics::percentile_sorted(&v, p).expect("non-empty");
    let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || v.iter().copied().filter(|&x| x >= lo && x <= hi);
    Some(Summary {
        n,
        mean,
        std,
        min: v[0],
        q1,
        median,
        q3,
        max: v[n - 1],
        whisker_lo: inside().fold(f64::INFINITY, f64::min),
        whisker_hi: inside().fold(f64::NEG_INFINITY, f64::max),
        outlier_count: v.iter().filter(|&&x| x < lo || x > hi).count(),
        undefined_count: undefined,
    })
}

/// A region row or the pooled overall row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKey {
    Region(RegionId),
    Overall,
}

impl RowKey {
    /// Regions 0-12, then overall.
    pub fn all() -> impl Iterator<Item = RowKey> {
        RegionId::all().map(RowKey::Region).chain(std::iter::once(RowKey::Overall))
    }
}

impl std::fmt::Display for RowKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowKey::Region(r) => write!(f, "{r}"),
            RowKey::Overall => f.write_str("Overall"),
        }
    }
}

/// Summaries per row and metric (in `Metric::ALL` order).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<(RowKey, [Option<Summary>; 3])>,
    /// One entry per cell with no defined sample.
    pub warnings: Vec<String>,
}

impl MetricTable {
    pub fn get(&self, key: RowKey, metric: Metric) -> Option<&Summary> {
        let m = Metric::ALL.iter().position(|&x| x == metric)?;
        self.rows.iter().find(|(k, _)| *k == key)?.1[m].as_ref()
    }
}

/// Summarizes each region across records; the overall row pools every
/// (record, region) sample.
pub fn aggregate(records: &[PatientMetrics], label: &str) -> MetricTable {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for key in RowKey::all() {
        let cells = Metric::ALL.map(|metric| {
            let samples: Vec<Option<f64>> = match key {
                RowKey::Region(r) => records.iter().map(|p| p.region(r).value(metric)).collect(),
                RowKey::Overall => records
                    .iter()
                    .flat_map(|p| p.regions.iter().map(move |r| r.value(metric)))
                    .collect(),
            };
            let s = summarize(samples);
            if s.is_none() {
                warnings.push(format!("{label}: no defined {} samples for {key}", metric.key()));
            }
            s
        });
        rows.push((key, cells));
    }
    MetricTable { rows, warnings }
}
