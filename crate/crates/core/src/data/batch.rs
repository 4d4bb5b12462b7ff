use std::path::PathBuf;

use rayon::prelude::*;

use super::decode::load_image;
use super::manifest::Sample;
use crate::tensor::{Rng, Tensor};

/// A decoded minibatch: images `[N, 3, S, S]` plus labels and source paths.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub paths: Vec<PathBuf>,
}

/// Sizes of consecutive batches covering `n` samples; the last may be short.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    (0..n)
        .step_by(batch_size.max(1))
        .map(|start| batch_size.min(n - start))
        .collect()
}

/// Iterates over samples in a fixed order, decoding each batch in parallel.
/// Files that fail to decode are logged, counted and left out of their
/// batch; a batch in which nothing decodes is skipped entirely.
pub struct BatchIter<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    batch_size: usize,
    img_size: usize,
    pos: usize,
    skipped: Vec<PathBuf>,
}

impl<'a> BatchIter<'a> {
    pub fn sequential(samples: &'a [Sample], batch_size: usize, img_size: usize) -> Self {
        Self::with_order(samples, (0..samples.len()).collect(), batch_size, img_size)
    }

    /// One permutation of the whole set, drawn from `rng` up front.
    pub fn shuffled(samples: &'a [Sample], batch_size: usize, img_size: usize, rng: &mut Rng) -> Self {
        let order = rng.permutation(samples.len());
        Self::with_order(samples, order, batch_size, img_size)
    }

    pub fn with_order(samples: &'a [Sample], order: Vec<usize>, batch_size: usize, img_size: usize) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        BatchIter {
            samples,
            order,
            batch_size,
            img_size,
            pos: 0,
            skipped: Vec::new(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Paths that failed to decode so far.
    pub fn skipped(&self) -> &[PathBuf] {
        &self.skipped
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        while self.pos < self.order.len() {
            let end = (self.pos + self.batch_size).min(self.order.len());
            let chunk = &self.order[self.pos..end];
            self.pos = end;
            let size = self.img_size;
            let decoded: Vec<_> = chunk
                .par_iter()
                .map(|&i| {
                    let s = &self.samples[i];
                    (s, load_image(&s.path, size))
                })
                .collect();
            let mut data = Vec::with_capacity(chunk.len() * 3 * size * size);
            let mut labels = Vec::with_capacity(chunk.len());
            let mut paths = Vec::with_capacity(chunk.len());
            for (s, result) in decoded {
                match result {
                    Ok(t) => {
                        data.extend_from_slice(t.data());
                        labels.push(s.class_index);
                        paths.push(s.path.clone());
                    }
                    Err(e) => {
                        log::warn!("skipping sample: {e}");
                        self.skipped.push(s.path.clone());
                    }
                }
            }
            if labels.is_empty() {
                continue;
            }
            let images = Tensor::from_vec(&[labels.len(), 3, size, size], data)
                .expect("decoded images have the requested size");
            return Some(Batch {
                images,
                labels,
                paths,
            });
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(batch_sizes(100, 32), vec![32, 32, 32, 4]);
        assert_eq!(batch_sizes(64, 32), vec![32, 32]);
        assert!(batch_sizes(0, 32).is_empty());
    }

    #[test]
    fn skips_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = Vec::new();
        for i in 0..5 {
            let p = dir.path().join(format!("{i}.png"));
            if i == 2 {
                std::fs::write(&p, b"garbage").unwrap();
            } else {
                image::RgbImage::from_pixel(4, 4, image::Rgb([i as u8 * 10, 0, 0]))
                    .save(&p)
                    .unwrap();
            }
            samples.push(Sample {
                path: p,
                class_index: i % 2,
            });
        }
        let mut it = BatchIter::sequential(&samples, 2, 4);
        let batches: Vec<Batch> = it.by_ref().collect();
        assert_eq!(batches.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), vec![2, 1, 1]);
        assert_eq!(it.skipped().len(), 1);
        assert_eq!(batches[1].labels, vec![1]);
        assert_eq!(batches[1].images.data()[0], 30.0f32 / 255.0);
    }

    #[test]
    fn shuffle_is_seeded() {
        let samples: Vec<Sample> = (0..10)
            .map(|i| Sample {
                path: format!("{i}").into(),
                class_index: 0,
            })
            .collect();
        let a = BatchIter::shuffled(&samples, 3, 4, &mut Rng::new(3)).order().to_vec();
        let b = BatchIter::shuffled(&samples, 3, 4, &mut Rng::new(3)).order().to_vec();
        let c = BatchIter::shuffled(&samples, 3, 4, &mut Rng::new(4)).order().to_vec();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }
}
