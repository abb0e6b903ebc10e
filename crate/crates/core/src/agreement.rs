//! Inter-observer agreement.
//!
//! Each observer is compared against the union of the other observers'
//! masks for the same region; the model is compared against every observer
//! and averaged.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair, region_metrics_boxed, LabelStats, Metric, PatientMetrics, RegionMetrics};
use crate::study::report::{agreement_table, Report};
use crate::volume::{copy_box, BinaryMask, BoundingBox, LabelVolume, RegionId};

/// Label volumes of one patient from two or more observers on one grid.
#[derive(Debug, Clone)]
pub struct ObserverSet {
    patient_id: String,
    observers: BTreeMap<String, LabelVolume>,
}

impl ObserverSet {
    pub fn new(
        patient_id: impl Into<String>,
        observers: impl IntoIterator<Item = (String, LabelVolume)>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        let mut map = BTreeMap::new();
        for (name, lv) in observers {
            if map.insert(name.clone(), lv).is_some() {
                return Err(Error::invalid(format!("patient {patient_id}: observer {name:?} listed twice")));
            }
        }
        if map.len() < 2 {
            return Err(Error::invalid(format!(
                "patient {patient_id}: agreement needs at least two observers, got {}",
                map.len()
            )));
        }
        let mut it = map.values();
        let first = it.next().expect("two observers").geometry();
        for lv in it {
            first.check_same_grid(lv.geometry())?;
        }
        Ok(ObserverSet {
            patient_id,
            observers: map,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn len(&self) -> usize {
        self.observers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observers.is_empty()
    }

    /// Observer names in sorted order.
    pub fn observer_ids(&self) -> impl Iterator<Item = &str> {
        self.observers.keys().map(String::as_str)
    }

    pub fn get(&self, observer: &str) -> Option<&LabelVolume> {
        self.observers.get(observer)
    }
}

/// Voxels carrying `region` in any of `volumes`.
pub fn region_union(volumes: &[&LabelVolume], region: RegionId) -> Result<BinaryMask> {
    let Some(first) = volumes.first() else {
        return Err(Error::invalid("union of zero volumes"));
    };
    for v in &volumes[1..] {
        first.geometry().check_same_grid(v.geometry())?;
    }
    let l = region.stored_label();
    let data = (0..first.geometry().len())
        .map(|i| volumes.iter().any(|v| v.data()[i] == l))
        .collect();
    BinaryMask::new(*first.geometry(), data)
}

/// One observer's metrics against the union of the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverComparison {
    pub observer: String,
    pub metrics: PatientMetrics,
}

/// Every observer against the union of the remaining observers, in sorted
/// observer order.
pub fn observer_vs_rest(set: &ObserverSet) -> Result<Vec<ObserverComparison>> {
    let vols: Vec<&LabelVolume> = set.observers.values().collect();
    let stats: Vec<LabelStats> = vols.par_iter().map(|v| LabelStats::scan(v)).collect();
    let spacing = vols[0].spacing();

    // per region: the metrics of each observer
    let per_region: Vec<Vec<RegionMetrics>> = RegionId::all()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|r| {
            let l = r.stored_label();
            let bbox = stats
                .iter()
                .filter_map(|s| s.bbox[l as usize])
                .reduce(|a, b| a.union(&b));
            let Some(bbox) = bbox else {
                return vec![RegionMetrics::undefined(r); vols.len()];
            };
            let masks: Vec<Vec<bool>> = vols.iter().map(|v| boxed_mask(v, l, &bbox)).collect();
            (0..vols.len())
                .map(|k| {
                    let rest: Vec<bool> = (0..masks[k].len())
                        .map(|i| masks.iter().enumerate().any(|(j, m)| j != k && m[i]))
                        .collect();
                    region_metrics_boxed(r, &masks[k], &rest, bbox.dims(), spacing)
                })
                .collect()
        })
        .collect();

    set.observers
        .keys()
        .enumerate()
        .map(|(k, name)| {
            let regions = per_region.iter().map(|row| row[k].clone()).collect();
            Ok(ObserverComparison {
                observer: name.clone(),
                metrics: PatientMetrics::new(set.patient_id.clone(), regions)?,
            })
        })
        .collect()
}

fn boxed_mask(v: &LabelVolume, label: u8, bbox: &BoundingBox) -> Vec<bool> {
    copy_box(v.data(), v.dims(), bbox).into_iter().map(|x| x == label).collect()
}

/// Model against each observer, averaged per region over the comparisons
/// where each value is defined. `excluded` counts comparisons with any
/// undefined value.
pub fn model_vs_observers(pred: &LabelVolume, set: &ObserverSet) -> Result<PatientMetrics> {
    let per_observer: Vec<PatientMetrics> = set
        .observers
        .values()
        .map(|obs| evaluate_pair(&set.patient_id, obs, pred))
        .collect::<Result<_>>()?;
    let regions = RegionId::all()
        .map(|r| {
            let rows: Vec<&RegionMetrics> = per_observer.iter().map(|p| p.region(r)).collect();
            let mean = |metric: Metric| {
                // sorted so the mean does not depend on observer naming
                let mut v: Vec<f64> = rows.iter().filter_map(|m| m.value(metric)).collect();
                v.sort_by(f64::total_cmp);
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let excluded = rows
                .iter()
                .filter(|m| Metric::ALL.iter().any(|&x| m.value(x).is_none()))
                .count() as u32;
            RegionMetrics {
                region: r,
                dice: mean(Metric::Dice),
                hd95_mm: mean(Metric::Hd95),
                asd_mm: mean(Metric::Asd),
                excluded,
            }
        })
        .collect();
    PatientMetrics::new(set.patient_id.clone(), regions)
}

/// Cohort agreement table with sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    pub table: Report,
    pub patients: usize,
    /// Largest observer count over patients.
    pub observers: usize,
    /// Human samples: one per (patient, observer).
    pub human_samples: usize,
    /// Model samples: one per patient.
    pub model_samples: usize,
}

/// Summarizes human-human agreement (one sample per patient and observer)
/// and, when given, model-human agreement (one sample per patient).
pub fn aggregate_agreement(
    human: &[Vec<ObserverComparison>],
    model: Option<&[PatientMetrics]>,
) -> Result<AgreementReport> {
    let flat: Vec<PatientMetrics> = human
        .iter()
        .flat_map(|p| p.iter().map(|c| c.metrics.clone()))
        .collect();
    let observers = human.iter().map(Vec::len).max().unwrap_or(0);
    let table = agreement_table(&flat, model, observers)?;
    Ok(AgreementReport {
        patients: table.patients,
        observers,
        human_samples: flat.len(),
        model_samples: model.map_or(0, <[_]>::len),
        table,
    })
}
