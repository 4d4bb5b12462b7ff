//! Reference implementations shared by the integration tests. They are
//! written as plainly as possible and share no code with the library
//! kernels.

#![allow(dead_code)]

use std::path::Path;

use leafnet::data::{write_fixture, DatasetManifest};

/// Triple loop, accumulating each output over `k` in increasing order.
pub fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Seven nested loops over (image, out channel, out row, out col, in
/// channel, kernel row, kernel col); padded taps contribute `w·0`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f32],
    w: &[f32],
    n: usize,
    c: usize,
    h: usize,
    wd: usize,
    o: usize,
    stride: usize,
) -> (Vec<f32>, usize, usize) {
    let oh = (h + 2 - 3) / stride + 1;
    let ow = (wd + 2 - 3) / stride + 1;
    let mut out = vec![0.0f32; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd;
                                let v = if inside {
                                    x[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                } else {
                                    0.0
                                };
                                acc += w[((oc * c + ic) * 3 + ky) * 3 + kx] * v;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Independent tally of `(truth, pred)` pairs into a `k×k` grid.
pub fn tally(pairs: &[(usize, usize)], k: usize) -> Vec<Vec<u64>> {
    let mut grid = vec![vec![0u64; k]; k];
    for &(t, p) in pairs {
        grid[t][p] += 1;
    }
    grid
}

/// Generates (once per directory) the synthetic dataset.
pub fn fixture(dir: &Path, per_class: usize, size: usize) -> DatasetManifest {
    write_fixture(dir, per_class, size, 7).expect("fixture generation")
}
