//! Dataset scanning, splitting, image decoding and batching.

mod batch;
mod fixture;
mod decode;
mod manifest;
mod split;

pub use batch::{batch_sizes, Batch, BatchIter};
pub use fixture::{write_fixture, FIXTURE_CLASSES};
pub use decode::{load_image, resize_bilinear, rgb_to_tensor};
pub use manifest::{is_image_file, read_mapping, DatasetManifest, Sample, ScanStats, IMAGE_EXTENSIONS};
pub use split::{
    holdout_count, stratified_split, SplitSpec, DEFAULT_TRAIN_FRACTION, PUBLISHED_TRAIN_FRACTION,
};
