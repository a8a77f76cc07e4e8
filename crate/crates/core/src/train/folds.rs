use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::stream_rng;
use crate::dataset::{DatasetManifest, N_CLASSES};
use crate::error::{Error, Result};

/// Assigns every entry to one of `k` folds.
///
/// Splitting happens over groups (an original plus its augmented
/// children), stratified by class: each class's groups are shuffled with
/// `seed` and dealt round-robin, so per-class fold sizes differ by at most
/// one group. Children always land in their parent's fold.
pub fn kfold_split(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<DatasetManifest> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: [Vec<&str>; N_CLASSES] = Default::default();
    for e in manifest.iter().filter(|e| e.is_original()) {
        by_class[e.label.index()].push(&e.id);
    }
    let mut fold_of: HashMap<&str, usize> = HashMap::new();
    // Rotating the starting fold per class keeps overall fold sizes level.
    let mut offset = 0;
    for (class, groups) in by_class.iter_mut().enumerate() {
        if groups.is_empty() {
            continue;
        }
        if groups.len() < k {
            return Err(Error::TooFewSamples(format!(
                "class {} has {} original recordings, fewer than {k} folds",
                crate::dataset::Label::ALL[class],
                groups.len()
            )));
        }
        groups.shuffle(&mut stream_rng(seed, &["kfold", &class.to_string()]));
        for (i, id) in groups.iter().enumerate() {
            fold_of.insert(id, (offset + i) % k);
        }
        offset += groups.len();
    }
    let mut out = manifest.clone();
    for e in out.entries.iter_mut() {
        e.fold = fold_of.get(e.group_id()).copied();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AugType, Label, ManifestEntry};

    fn corpus(per_class: &[usize], children: bool) -> DatasetManifest {
        let mut entries = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let id = format!("{c}-{i}");
                entries.push(ManifestEntry::original(&id, format!("{id}.wav"), Label::ALL[c]));
                if children {
                    for aug in AugType::AUGMENTATIONS {
                        entries.push(ManifestEntry {
                            id: format!("{id}__{aug}"),
                            parent_id: Some(id.clone()),
                            aug_type: aug,
                            ..ManifestEntry::original("", "x.wav", Label::ALL[c])
                        });
                    }
                }
            }
        }
        DatasetManifest::new(entries).unwrap()
    }

    #[test]
    fn even_split_of_one_class() {
        let m = kfold_split(&corpus(&[1000], false), 5, 0).unwrap();
        for f in 0..5 {
            assert_eq!(m.fold_entries(f).count(), 200);
        }
    }

    #[test]
    fn children_follow_parents() {
        let m = kfold_split(&corpus(&[13, 17, 11, 9], true), 5, 4).unwrap();
        let folds: HashMap<&str, usize> = m.iter().map(|e| (e.id.as_str(), e.fold.unwrap())).collect();
        for e in m.iter() {
            assert_eq!(e.fold, Some(folds[e.group_id()]));
        }
    }

    #[test]
    fn stratified_sizes_differ_by_at_most_one_group() {
        let m = kfold_split(&corpus(&[13, 17, 11, 9], true), 5, 4).unwrap();
        for label in Label::ALL {
            let sizes: Vec<usize> = (0..5)
                .map(|f| m.fold_entries(f).filter(|e| e.label == label && e.is_original()).count())
                .collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{label}: {sizes:?}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = corpus(&[20, 20, 20, 20], false);
        assert_eq!(kfold_split(&c, 5, 9).unwrap(), kfold_split(&c, 5, 9).unwrap());
        assert_ne!(kfold_split(&c, 5, 9).unwrap(), kfold_split(&c, 5, 10).unwrap());
    }

    #[test]
    fn too_few_originals() {
        assert!(matches!(kfold_split(&corpus(&[10, 3], true), 5, 0), Err(Error::TooFewSamples(_))));
        assert!(matches!(kfold_split(&corpus(&[10], false), 1, 0), Err(Error::InvalidConfig(_))));
    }
}
