use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Patient;
use crate::error::{Error, Result};

/// Patient → fold index (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub folds: BTreeMap<String, usize>,
}

/// Patient ids of a train/dev/test partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSets {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

/// Assigns whole patients to folds, stratified by cancer/control status.
///
/// Each stratum is shuffled and dealt round-robin, continuing where the previous
/// stratum stopped, so fold sizes differ by at most one.
pub fn split_folds(patients: &[Patient], n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::config("n_folds", "need at least 2 folds"));
    }
    if n_folds > patients.len() {
        return Err(Error::config(
            "n_folds",
            format!("{n_folds} folds for {} patients", patients.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for cancer in [true, false] {
        let mut ids: Vec<&str> = patients
            .iter()
            .filter(|p| p.is_cancer() == cancer)
            .map(|p| p.patient_id.as_str())
            .collect();
        ids.shuffle(&mut rng);
        for id in ids {
            if folds.insert(id.to_string(), next % n_folds).is_some() {
                return Err(Error::Data(format!("duplicate patient id {id}")));
            }
            next += 1;
        }
    }
    Ok(FoldAssignment { n_folds, folds })
}

impl FoldAssignment {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.folds.get(patient_id).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Groups 1-based fold ranges, e.g. `1..=6`, `7..=8`, `9..=10`.
    pub fn split(
        &self,
        train: RangeInclusive<usize>,
        dev: RangeInclusive<usize>,
        test: RangeInclusive<usize>,
    ) -> Result<SplitSets> {
        for r in [&train, &dev, &test] {
            if *r.start() == 0 || *r.end() > self.n_folds || r.start() > r.end() {
                return Err(Error::config(
                    "folds",
                    format!("fold range {}-{} outside 1-{}", r.start(), r.end(), self.n_folds),
                ));
            }
        }
        let overlaps = |a: &RangeInclusive<usize>, b: &RangeInclusive<usize>| a.start() <= b.end() && b.start() <= a.end();
        if overlaps(&train, &dev) || overlaps(&train, &test) || overlaps(&dev, &test) {
            return Err(Error::config("folds", "train, dev and test fold ranges overlap"));
        }
        let pick = |r: &RangeInclusive<usize>| -> Vec<String> {
            self.folds
                .iter()
                .filter(|(_, &f)| r.contains(&(f + 1)))
                .map(|(id, _)| id.clone())
                .collect()
        };
        Ok(SplitSets {
            train: pick(&train),
            dev: pick(&dev),
            test: pick(&test),
        })
    }
}

impl SplitSets {
    /// Fails when any patient is in more than one set.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for id in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Leakage(id.clone()));
            }
        }
        Ok(())
    }
}

/// Parses `a-b` or `a` into an inclusive 1-based range.
pub fn parse_fold_range(s: &str) -> Result<RangeInclusive<usize>> {
    let bad = || Error::config("folds", format!("cannot parse fold range '{s}'"));
    let (a, b) = match s.split_once('-') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s.trim(), s.trim()),
    };
    let a: usize = a.parse().map_err(|_| bad())?;
    let b: usize = b.parse().map_err(|_| bad())?;
    Ok(a..=b)
}
