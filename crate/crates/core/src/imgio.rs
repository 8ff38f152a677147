//! PNG conversion helpers for `[-1, 1]`-valued image tensors.

use crate::metrics::MetricsError;
use fagan_tensor::Tensor;
use std::path::Path;

pub fn value_to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

pub fn byte_to_value(b: u8) -> f32 {
    (b as f32 / 255.0) * 2.0 - 1.0
}

/// Save a single `[3, R, R]` image slice.
pub fn save_image(data: &[f32], resolution: usize, path: &Path) -> Result<(), MetricsError> {
    assert_eq!(data.len(), 3 * resolution * resolution);
    let mut img = image::RgbImage::new(resolution as u32, resolution as u32);
    for y in 0..resolution {
        for x in 0..resolution {
            let px = image::Rgb([
                value_to_byte(data[y * resolution + x]),
                value_to_byte(data[(resolution + y) * resolution + x]),
                value_to_byte(data[(2 * resolution + y) * resolution + x]),
            ]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path).map_err(|e| MetricsError::Image(e.to_string()))
}

/// Load a PNG back into a `[3, H, W]` tensor in `[-1, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>, MetricsError> {
    let img = image::open(path)
        .map_err(|e| MetricsError::Image(e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for ch in 0..3 {
                out.data_mut()[(ch * h + y) * w + x] = byte_to_value(px.0[ch]);
            }
        }
    }
    Ok(out)
}

/// Copy one `[3, R, R]` image into an RGB byte canvas at `(x0, y0)`.
pub fn blit_image(
    canvas: &mut [u8],
    canvas_width: usize,
    x0: usize,
    y0: usize,
    data: &[f32],
    resolution: usize,
) {
    for y in 0..resolution {
        for x in 0..resolution {
            let idx = 3 * ((y0 + y) * canvas_width + x0 + x);
            if idx + 2 >= canvas.len() {
                continue;
            }
            for ch in 0..3 {
                canvas[idx + ch] = value_to_byte(data[(ch * resolution + y) * resolution + x]);
            }
        }
    }
}

pub fn save_rgb_canvas(
    canvas: &[u8],
    width: usize,
    height: usize,
    path: &Path,
) -> Result<(), MetricsError> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, canvas.to_vec())
        .expect("canvas dimensions match buffer");
    img.save(path).map_err(|e| MetricsError::Image(e.to_string()))
}
