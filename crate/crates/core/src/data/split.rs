use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
/// Train share of the published corpus: 74,651 of 93,136 images.
pub const PUBLISHED_TRAIN_FRACTION: f64 = 74_651.0 / 93_136.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 42,
        }
    }
}

/// Holdout size for a class of `count` samples: `round(count·(1 − f))`,
/// kept within `[1, count − 1]`.
pub fn holdout_count(count: usize, train_fraction: f64) -> usize {
    let raw = (count as f64 * (1.0 - train_fraction)).round() as usize;
    raw.clamp(1, count.saturating_sub(1).max(1))
}

/// Splits every class independently: shuffle the class's samples with the
/// seeded generator (classes in index order), keep the first part for
/// training and the rest as holdout. Both outputs list samples in the
/// original manifest order and share its class list.
pub fn stratified_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); manifest.num_classes()];
    for (i, s) in manifest.samples.iter().enumerate() {
        members[s.class_index].push(i);
    }
    let mut rng = Rng::new(spec.seed);
    let mut is_holdout = vec![false; manifest.len()];
    for (class, idx) in members.iter_mut().enumerate() {
        if idx.len() < 2 {
            return Err(Error::data(format!(
                "class {:?} has {} sample(s); stratified splitting needs at least 2",
                manifest.class_names[class],
                idx.len()
            )));
        }
        rng.shuffle(idx);
        let holdout = holdout_count(idx.len(), spec.train_fraction);
        for &i in &idx[idx.len() - holdout..] {
            is_holdout[i] = true;
        }
    }
    let pick = |want: bool| DatasetManifest {
        class_names: manifest.class_names.clone(),
        samples: manifest
            .samples
            .iter()
            .zip(&is_holdout)
            .filter(|(_, &h)| h == want)
            .map(|(s, _)| s.clone())
            .collect(),
        source_root: manifest.source_root.clone(),
    };
    Ok((pick(false), pick(true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn synthetic(counts: &[usize]) -> DatasetManifest {
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push(Sample {
                    path: format!("c{c}/{i}.jpg").into(),
                    class_index: c,
                });
            }
        }
        DatasetManifest {
            class_names: (0..counts.len()).map(|c| format!("c{c}")).collect(),
            samples,
            source_root: "r".into(),
        }
    }

    #[test]
    fn class_of_2520() {
        let m = synthetic(&[2520]);
        let (train, hold) = stratified_split(&m, &SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
        assert_eq!((train.len(), hold.len()), (2016, 504));
    }

    #[test]
    fn seeds() {
        let m = synthetic(&[10, 25, 7]);
        let a = stratified_split(&m, &SplitSpec { train_fraction: 0.8, seed: 5 }).unwrap();
        let b = stratified_split(&m, &SplitSpec { train_fraction: 0.8, seed: 5 }).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&m, &SplitSpec { train_fraction: 0.8, seed: 6 }).unwrap();
        assert_ne!(a.1.samples, c.1.samples);
        assert_eq!(a.1.class_counts(), c.1.class_counts());
    }

    #[test]
    fn tiny_classes() {
        assert_eq!(holdout_count(2, 0.8), 1);
        assert_eq!(holdout_count(3, 0.99), 1);
        assert_eq!(holdout_count(2, 0.01), 1);
        let m = synthetic(&[4, 1]);
        assert!(matches!(
            stratified_split(&m, &SplitSpec::default()),
            Err(Error::Data(_))
        ));
    }
}
