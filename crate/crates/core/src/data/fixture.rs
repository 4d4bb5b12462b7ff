//! Small synthetic dataset for smoke tests and demos.
//!
//! Each image is a noisy gray background with one colored disk; the disk's
//! dominant channel is the class. The three classes are linearly separable
//! from per-channel maxima, so even a few epochs fit them.

use std::path::Path;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const FIXTURE_CLASSES: [&str; 3] = ["blob_blue", "blob_green", "blob_red"];

fn channel_of(class: &str) -> usize {
    match class {
        "blob_red" => 0,
        "blob_green" => 1,
        _ => 2,
    }
}

/// Writes `per_class` PNG images of `size`×`size` pixels per class under
/// `root/<class>/` and returns the scanned manifest.
pub fn write_fixture(root: &Path, per_class: usize, size: usize, seed: u64) -> Result<DatasetManifest> {
    if per_class == 0 || size < 4 {
        return Err(Error::invalid("fixture needs at least one image of 4x4 pixels per class"));
    }
    let mut rng = Rng::new(seed);
    let rand_in = |lo: u32, hi: u32, rng: &mut Rng| lo + rng.below((hi - lo + 1) as usize) as u32;
    for class in FIXTURE_CLASSES {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let hot = channel_of(class);
        for i in 0..per_class {
            let radius = size as f64 * (0.2 + 0.15 * rng.next_f64());
            let cx = size as f64 * (0.25 + 0.5 * rng.next_f64());
            let cy = size as f64 * (0.25 + 0.5 * rng.next_f64());
            let mut img = image::RgbImage::new(size as u32, size as u32);
            for (x, y, px) in img.enumerate_pixels_mut() {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = dx * dx + dy * dy <= radius * radius;
                for c in 0..3 {
                    px.0[c] = if !inside {
                        rand_in(70, 130, &mut rng)
                    } else if c == hot {
                        rand_in(190, 255, &mut rng)
                    } else {
                        rand_in(0, 50, &mut rng)
                    } as u8;
                }
            }
            let path = dir.join(format!("{i:04}.png"));
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
    }
    let (manifest, _) = DatasetManifest::scan(root, None)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_balanced_classes() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), 4, 8, 1).unwrap();
        assert_eq!(m.class_names, FIXTURE_CLASSES.to_vec());
        assert_eq!(m.class_counts(), vec![4, 4, 4]);
        let img = crate::data::load_image(&m.samples[0].path, 8).unwrap();
        assert_eq!(img.shape(), &[3, 8, 8]);
    }
}
