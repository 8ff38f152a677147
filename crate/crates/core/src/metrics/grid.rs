//! Labeled sample grids: one row per caption, one column per noise seed,
//! caption text stamped above each row.

use super::font;
use super::MetricsError;
use crate::imgio;
use crate::models::{Generator, SentenceEncoder};
use crate::scenes::Caption;
use fagan_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

const PAD: usize = 2;
const LABEL_H: usize = 10;

/// Render a labeled grid PNG of generated images. Column `c` uses noise
/// derived from `noise_seeds[c]`, shared across rows, so rows compare
/// captions under identical noise.
pub fn emit_grid(
    generator: &Generator<f32>,
    encoder: &SentenceEncoder<f32>,
    captions: &[Caption],
    noise_seeds: &[u64],
    path: &Path,
) -> Result<(), MetricsError> {
    if captions.is_empty() {
        return Err(MetricsError::InvalidArgument("no captions given".into()));
    }
    if noise_seeds.is_empty() {
        return Err(MetricsError::InvalidArgument("no noise seeds given".into()));
    }
    let res = generator.dims().resolution;
    let d_z = generator.dims().d_z;
    let rows = captions.len();
    let cols = noise_seeds.len();

    let noise: Vec<Tensor<f32>> = noise_seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor::from_fn(&[1, d_z], |_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v as f32
            })
        })
        .collect();
    let sentence = encoder.encode_values(captions)?;
    let d_s = encoder.d_s();

    let cell = res + PAD;
    let text_w = captions
        .iter()
        .map(|c| font::text_width(&c.text))
        .max()
        .unwrap_or(0);
    let width = (cols * cell + PAD).max(text_w + 2 * PAD);
    let height = rows * (LABEL_H + cell) + PAD;
    let mut canvas = vec![16u8; width * height * 3];

    for (r, cap) in captions.iter().enumerate() {
        let s_row = Tensor::new(
            &[1, d_s],
            (0..d_s).map(|j| sentence.at2(r, j)).collect(),
        );
        let y0 = r * (LABEL_H + cell) + PAD;
        font::draw_text(&mut canvas, width, PAD, y0, &cap.text, [255, 255, 255]);
        for (c, z) in noise.iter().enumerate() {
            let image = generator.generate_values(z, &s_row)?;
            let x0 = c * cell + PAD;
            let y_img = y0 + LABEL_H - PAD;
            imgio::blit_image(&mut canvas, width, x0, y_img, image.data(), res);
        }
    }

    imgio::save_rgb_canvas(&canvas, width, height, path)
}
