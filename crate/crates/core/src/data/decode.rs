use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize of an interleaved RGB8 buffer with half-pixel centers:
/// source coordinate `(d + 0.5)·(src/dst) − 0.5`, clamped to the image.
/// Returns planar `[3, size, size]` values in the 0..=255 range.
pub fn resize_bilinear(rgb: &[u8], width: usize, height: usize, size: usize) -> Result<Vec<f64>> {
    if width == 0 || height == 0 || size == 0 {
        return Err(Error::invalid("resize needs non-empty source and target"));
    }
    if rgb.len() != width * height * 3 {
        return Err(Error::shape(format!(
            "RGB buffer of {} bytes for a {width}x{height} image",
            rgb.len()
        )));
    }
    let axis = |src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / size as f64;
        (0..size)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(width);
    let ys = axis(height);
    let px = |x: usize, y: usize, c: usize| rgb[(y * width + x) * 3 + c] as f64;
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for (dy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (dx, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = (1.0 - fx) * px(x0, y0, c) + fx * px(x1, y0, c);
                let bottom = (1.0 - fx) * px(x0, y1, c) + fx * px(x1, y1, c);
                out[(c * size + dy) * size + dx] = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
    Ok(out)
}

/// Converts decoded RGB8 pixels to a `[3, size, size]` tensor in `[0, 1]`.
pub fn rgb_to_tensor(rgb: &[u8], width: usize, height: usize, size: usize) -> Result<Tensor<f32>> {
    let values = resize_bilinear(rgb, width, height, size)?;
    let data = values.into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::from_vec(&[3, size, size], data)
}

/// Decodes a JPEG or PNG file. Grayscale is replicated to three channels
/// and alpha is dropped.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    rgb_to_tensor(rgb.as_raw(), w as usize, h as usize, size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_to_one() {
        let rgb: Vec<u8> = [10u8, 20, 30, 40].iter().flat_map(|&v| [v, v, v]).collect();
        let out = resize_bilinear(&rgb, 2, 2, 1).unwrap();
        assert_eq!(out, vec![25.0; 3]);
        let t = rgb_to_tensor(&rgb, 2, 2, 1).unwrap();
        assert_eq!(t.data()[0], 25.0f32 / 255.0);
    }

    #[test]
    fn same_size_is_identity() {
        let square: Vec<u8> = (0..5 * 5 * 3).map(|v| (v * 11 % 256) as u8).collect();
        let out = resize_bilinear(&square, 5, 5, 5).unwrap();
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..5 {
                    assert_eq!(out[(c * 5 + y) * 5 + x], square[(y * 5 + x) * 3 + c] as f64);
                }
            }
        }
    }

    #[test]
    fn decodes_png_and_grayscale() {
        let dir = tempfile::tempdir().unwrap();
        let red = dir.path().join("red.png");
        image::RgbImage::from_pixel(8, 8, image::Rgb([255, 0, 0]))
            .save(&red)
            .unwrap();
        let t = load_image(&red, 4).unwrap();
        assert_eq!(t.shape(), &[3, 4, 4]);
        assert!(t.data()[..16].iter().all(|&v| v == 1.0));
        assert!(t.data()[16..].iter().all(|&v| v == 0.0));

        let gray = dir.path().join("gray.png");
        image::GrayImage::from_pixel(3, 3, image::Luma([51])).save(&gray).unwrap();
        let g = load_image(&gray, 3).unwrap();
        assert!(g.data().iter().all(|&v| v == 51.0f32 / 255.0));

        let rgba = dir.path().join("rgba.png");
        image::RgbaImage::from_pixel(2, 2, image::Rgba([0, 255, 0, 10])).save(&rgba).unwrap();
        let a = load_image(&rgba, 2).unwrap();
        assert_eq!(a.data()[4], 1.0);

        let junk = dir.path().join("junk.jpg");
        std::fs::write(&junk, b"not an image").unwrap();
        assert!(matches!(load_image(&junk, 4), Err(Error::Image { .. })));
    }
}
