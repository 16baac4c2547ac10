use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MfamError, Result};

/// Assignment of subjects to cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub assignments: BTreeMap<String, usize>,
    pub k: usize,
}

impl FoldPlan {
    /// Subjects of fold `f`, sorted.
    pub fn fold_subjects(&self, f: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|&(_, &g)| g == f)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

/// Seeded shuffle of the distinct subjects, then round-robin assignment.
pub fn subject_folds(subjects: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut unique = subjects.to_vec();
    unique.sort();
    unique.dedup();
    if k < 2 {
        return Err(MfamError::config(format!("need at least 2 folds, got {k}")));
    }
    if unique.len() < k {
        return Err(MfamError::config(format!(
            "{} subjects cannot fill {k} folds",
            unique.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let assignments = unique
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, i % k))
        .collect();
    Ok(FoldPlan { assignments, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn eight_subjects_four_folds() {
        let plan = subject_folds(&names(8), 4, 42).unwrap();
        let mut all = Vec::new();
        for f in 0..4 {
            let s = plan.fold_subjects(f);
            assert_eq!(s.len(), 2);
            all.extend(s);
        }
        all.sort();
        assert_eq!(all, names(8));
    }

    #[test]
    fn uneven_sizes_differ_by_one() {
        let plan = subject_folds(&names(10), 4, 1).unwrap();
        let sizes: Vec<usize> = (0..4).map(|f| plan.fold_subjects(f).len()).collect();
        assert_eq!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap(), 1);
    }

    #[test]
    fn seeded() {
        let a = subject_folds(&names(12), 4, 7).unwrap();
        assert_eq!(a, subject_folds(&names(12), 4, 7).unwrap());
        assert_ne!(a, subject_folds(&names(12), 4, 8).unwrap());
    }

    #[test]
    fn too_few_subjects() {
        assert!(subject_folds(&names(3), 4, 0).is_err());
    }
}
