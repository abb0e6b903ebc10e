//! Seeded k-fold assignment of patient ids.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// Ids per fold, each sorted.
    pub folds: Vec<Vec<String>>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|x| x == id))
    }

    /// `id,fold` rows sorted by id.
    pub fn to_csv(&self) -> Result<String> {
        let mut rows: Vec<(&str, usize)> = self
            .folds
            .iter()
            .enumerate()
            .flat_map(|(k, f)| f.iter().map(move |id| (id.as_str(), k)))
            .collect();
        rows.sort_unstable();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "fold"])?;
        for (id, k) in rows {
            w.write_record([id, &k.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv output is not UTF-8: {e}")))
    }
}

/// Partitions ids into `k` folds whose sizes differ by at most one. The
/// result depends only on the set of ids, `k` and `seed`.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::invalid("duplicate ids in fold input"));
    }
    if k > ids.len() {
        return Err(Error::invalid(format!("{k} folds but only {} ids", ids.len())));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut folds = vec![Vec::new(); k];
    for (i, id) in order.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldAssignment { k, seed, folds })
}
