//! Cohort-level orchestration: manifests, folds, aggregation and reports.

pub mod aggregate;
pub mod folds;
pub mod manifest;
pub mod report;

use log::info;
use rayon::prelude::*;

pub use aggregate::{aggregate, summarize, MetricTable, RowKey, Summary};
pub use folds::{make_folds, FoldAssignment, DEFAULT_FOLDS};
pub use manifest::{load_manifest, PatientEntry, StudyManifest};
pub use report::{parse_json, performance_report, render, Format, Report, ReportKind};

use crate::agreement::{aggregate_agreement, model_vs_observers, observer_vs_rest, AgreementReport, ObserverSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair, PatientMetrics};
use crate::volume::{read_labels, LabelVolume, NUM_REGIONS};

/// Running per-region voxel counts over ground-truth volumes.
#[derive(Debug, Clone, Default)]
pub struct VoxelTally {
    counts: [u64; NUM_REGIONS],
}

impl VoxelTally {
    pub fn add(&mut self, labels: &LabelVolume) {
        let h = labels.histogram();
        for (c, &n) in self.counts.iter_mut().zip(&h[1..]) {
            *c += n as u64;
        }
    }

    pub fn counts(&self) -> [u64; NUM_REGIONS] {
        self.counts
    }

    /// Share of labelled voxels per region, in percent.
    pub fn percentages(&self) -> Result<[f64; NUM_REGIONS]> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyMask("no labelled voxels in any ground truth".into()));
        }
        Ok(self.counts.map(|c| 100.0 * c as f64 / total as f64))
    }
}

/// Percent of all labelled ground-truth voxels falling in each region.
pub fn voxel_distribution<'a>(volumes: impl IntoIterator<Item = &'a LabelVolume>) -> Result<[f64; NUM_REGIONS]> {
    let mut t = VoxelTally::default();
    for v in volumes {
        t.add(v);
    }
    t.percentages()
}

#[derive(Debug, Clone)]
pub struct StudyEvaluation {
    /// Sorted by patient id.
    pub records: Vec<PatientMetrics>,
    pub voxel_percent: [f64; NUM_REGIONS],
}

/// Evaluates `model` against ground truth for every patient in the manifest.
pub fn evaluate_study(manifest: &StudyManifest, model: &str) -> Result<StudyEvaluation> {
    let jobs: Vec<(&str, &std::path::Path, &std::path::Path)> = manifest
        .patients
        .iter()
        .map(|p| {
            let gt = p
                .gt_path
                .as_deref()
                .ok_or_else(|| Error::Manifest(format!("patient {}: no ground truth", p.id)))?;
            let pred = p.pred_paths.get(model).ok_or_else(|| {
                Error::Manifest(format!("patient {}: no prediction for model {model:?}", p.id))
            })?;
            Ok((p.id.as_str(), gt, pred.as_path()))
        })
        .collect::<Result<_>>()?;
    if jobs.is_empty() {
        return Err(Error::Manifest("manifest lists no patients".into()));
    }
    let results: Vec<(PatientMetrics, VoxelTally)> = jobs
        .par_iter()
        .map(|&(id, gt, pred)| {
            let gt = read_labels(gt)?;
            let pred = read_labels(pred)?;
            let m = evaluate_pair(id, &gt, &pred)?;
            info!("evaluated {id}: overall dice {:?}", m.overall.dice);
            let mut t = VoxelTally::default();
            t.add(&gt);
            Ok((m, t))
        })
        .collect::<Result<_>>()?;
    let mut tally = VoxelTally::default();
    let mut records = Vec::with_capacity(results.len());
    for (m, t) in results {
        for (c, n) in tally.counts.iter_mut().zip(t.counts) {
            *c += n;
        }
        records.push(m);
    }
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(StudyEvaluation {
        records,
        voxel_percent: tally.percentages()?,
    })
}

/// Agreement over the patients with two or more observers. With `model`,
/// each of those patients also needs that model's prediction.
pub fn agreement_study(manifest: &StudyManifest, model: Option<&str>) -> Result<AgreementReport> {
    let mut patients: Vec<&PatientEntry> =
        manifest.patients.iter().filter(|p| p.observer_paths.len() >= 2).collect();
    if patients.is_empty() {
        return Err(Error::Manifest("no patient has two or more observers".into()));
    }
    let skipped = manifest.patients.len() - patients.len();
    if skipped > 0 {
        log::info!("{skipped} patient(s) with fewer than two observers skipped");
    }
    patients.sort_by(|a, b| a.id.cmp(&b.id));
    let results: Vec<(Vec<_>, Option<PatientMetrics>)> = patients
        .par_iter()
        .map(|p| {
            let vols = p
                .observer_paths
                .iter()
                .map(|(name, path)| Ok((name.clone(), read_labels(path)?)))
                .collect::<Result<Vec<_>>>()?;
            let set = ObserverSet::new(p.id.clone(), vols)?;
            let human = observer_vs_rest(&set)?;
            let m = match model {
                Some(name) => {
                    let path = p.pred_paths.get(name).ok_or_else(|| {
                        Error::Manifest(format!("patient {}: no prediction for model {name:?}", p.id))
                    })?;
                    Some(model_vs_observers(&read_labels(path)?, &set)?)
                }
                None => None,
            };
            info!("agreement for {} over {} observers", p.id, set.len());
            Ok((human, m))
        })
        .collect::<Result<_>>()?;
    let (human, model_rows): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let model_rows: Option<Vec<PatientMetrics>> = model.map(|_| model_rows.into_iter().flatten().collect());
    let mut report = aggregate_agreement(&human, model_rows.as_deref())?;
    report.table.dataset = manifest.dataset.clone();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Spacing};

    #[test]
    fn distribution_sums_to_100() {
        let g = Geometry::simple([4, 4, 4], Spacing::isotropic(1.0).unwrap()).unwrap();
        let mut d = vec![0u8; 64];
        d[..10].fill(1);
        d[10..40].fill(13);
        let v = LabelVolume::new(g, d).unwrap();
        let p = voxel_distribution([&v, &v]).unwrap();
        assert!((p[0] - 25.0).abs() < 1e-12 && (p[12] - 75.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!(voxel_distribution([&LabelVolume::background(g)]).is_err());
    }
}
