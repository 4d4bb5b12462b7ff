//! Scanning, splitting and batching against hand-computed expectations.

mod common;

use leafnet::data::{
    batch_sizes, stratified_split, BatchIter, DatasetManifest, Sample, SplitSpec, PUBLISHED_TRAIN_FRACTION,
};
use leafnet::tensor::Rng;

/// Images per class in the unified 51-class corpus.
const CORPUS_COUNTS: [usize; 51] = [
    2520, 2484, 2200, 2510, 162, 151, 173, 473, 2270, 2282, 2104, 2052, 2384, 2324, 2385, 700, 702,
    600, 700, 600, 601, 2360, 2400, 2115, 2152, 2513, 2297, 2160, 2391, 2485, 2424, 2280, 2424,
    2226, 2527, 2170, 2280, 2218, 2127, 2400, 2407, 2314, 2352, 2181, 2176, 2284, 2238, 2451, 102,
    97, 208,
];

fn synthetic(counts: &[usize]) -> DatasetManifest {
    let mut samples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        samples.extend((0..n).map(|i| Sample {
            path: format!("class_{c:02}/{i:05}.jpg").into(),
            class_index: c,
        }));
    }
    DatasetManifest {
        class_names: (0..counts.len()).map(|c| format!("class_{c:02}")).collect(),
        samples,
        source_root: "corpus".into(),
    }
}

#[test]
fn corpus_split_matches_published_sizes() {
    let total: usize = CORPUS_COUNTS.iter().sum();
    assert_eq!(total, 93_136);
    let m = synthetic(&CORPUS_COUNTS);
    let spec = SplitSpec {
        train_fraction: PUBLISHED_TRAIN_FRACTION,
        seed: 1,
    };
    let (train, hold) = stratified_split(&m, &spec).unwrap();
    // per-class rounding can move each class by at most one sample
    assert!(train.len().abs_diff(74_651) <= 51, "train {}", train.len());
    assert!(hold.len().abs_diff(18_485) <= 51, "holdout {}", hold.len());
    assert_eq!(train.len() + hold.len(), total);

    let default = stratified_split(&m, &SplitSpec::default()).unwrap();
    assert_eq!(default.1.class_counts()[0], 504);
}

#[test]
fn scan_of_generated_tree_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::fixture(dir.path(), 5, 8);
    std::fs::write(dir.path().join("blob_red/notes.txt"), "not an image").unwrap();
    let (again, stats) = DatasetManifest::scan(dir.path(), None).unwrap();
    assert_eq!(m.samples, again.samples);
    assert_eq!(stats.skipped_files, 1);
    let csv = again.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert_eq!(DatasetManifest::from_csv(&csv, dir.path()).unwrap(), again);
}

#[test]
fn batches_cover_the_epoch_in_permutation_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::fixture(dir.path(), 4, 6);
    let mut it = BatchIter::shuffled(&m.samples, 5, 6, &mut Rng::new(9));
    let order = it.order().to_vec();
    let batches: Vec<_> = it.by_ref().collect();
    assert_eq!(batches.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), batch_sizes(12, 5));
    let paths: Vec<_> = batches.iter().flat_map(|b| b.paths.clone()).collect();
    let expected: Vec<_> = order.iter().map(|&i| m.samples[i].path.clone()).collect();
    assert_eq!(paths, expected);
    for b in &batches {
        assert_eq!(b.images.shape(), &[b.labels.len(), 3, 6, 6]);
    }

    // identical contents regardless of decode parallelism
    let multi = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let again: Vec<_> = multi.install(|| BatchIter::shuffled(&m.samples, 5, 6, &mut Rng::new(9)).collect());
    for (a, b) in batches.iter().zip(&again) {
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
    }
}
