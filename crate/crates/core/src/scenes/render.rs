//! Hard-edged deterministic rasterizer. No anti-aliasing: a pixel is
//! foreground iff its center lies inside the shape, which keeps pixel-count
//! oracles exact.

use super::{Color, Position, SceneError, SceneSpec, Shape, Size};
use fagan_tensor::Tensor;

/// Shape half-extent as a fraction of the resolution. Chosen so shapes never
/// clip at any position and the large/small pixel-count ratio stays >= 2.
const LARGE_EXTENT: f64 = 0.22;
const SMALL_EXTENT: f64 = 0.14;

pub fn color_rgb(color: Color) -> [f32; 3] {
    match color {
        Color::Red => [1.0, -1.0, -1.0],
        Color::Green => [-1.0, 1.0, -1.0],
        Color::Blue => [-1.0, -1.0, 1.0],
        Color::Yellow => [1.0, 1.0, -1.0],
        Color::White => [1.0, 1.0, 1.0],
    }
}

fn center_fraction(position: Position) -> (f64, f64) {
    // (y, x) as fractions of the resolution
    match position {
        Position::Left => (0.5, 0.25),
        Position::Right => (0.5, 0.75),
        Position::Top => (0.25, 0.5),
        Position::Bottom => (0.75, 0.5),
        Position::Center => (0.5, 0.5),
    }
}

fn inside(scene: &SceneSpec, resolution: usize, py: f64, px: f64) -> bool {
    let r = resolution as f64;
    let (cy, cx) = center_fraction(scene.position);
    let (cy, cx) = (cy * r, cx * r);
    let half = match scene.size {
        Size::Large => LARGE_EXTENT * r,
        Size::Small => SMALL_EXTENT * r,
    };
    let (dy, dx) = (py - cy, px - cx);
    match scene.shape {
        Shape::Circle => dy * dy + dx * dx <= half * half,
        Shape::Square => dy.abs() <= half && dx.abs() <= half,
        Shape::Triangle => {
            // upward isoceles triangle: apex at cy - half, base at cy + half
            dy >= -half && dy <= half && dx.abs() <= (dy + half) / 2.0
        }
    }
}

/// Rasterize to `[3, resolution, resolution]` with all values in `[-1, 1]`:
/// background -1, shape filled with the scene color.
pub fn render(scene: &SceneSpec, resolution: usize) -> Result<Tensor<f32>, SceneError> {
    if resolution < 8 {
        return Err(SceneError::ResolutionTooSmall(resolution));
    }
    let rgb = color_rgb(scene.color);
    let mut out = Tensor::full(&[3, resolution, resolution], -1.0f32);
    let data = out.data_mut();
    for y in 0..resolution {
        for x in 0..resolution {
            if inside(scene, resolution, y as f64 + 0.5, x as f64 + 0.5) {
                for (ch, &v) in rgb.iter().enumerate() {
                    data[(ch * resolution + y) * resolution + x] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Foreground pixel count of a rendered scene (pixels not equal to the
/// background on every channel).
pub fn shape_pixel_count(image: &Tensor<f32>) -> usize {
    let res = image.shape()[1];
    let d = image.data();
    let mut count = 0;
    for y in 0..res {
        for x in 0..res {
            let bg = (0..3).all(|ch| d[(ch * res + y) * res + x] == -1.0);
            if !bg {
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::SceneSpec;

    fn scene(shape: Shape, color: Color, position: Position, size: Size) -> SceneSpec {
        SceneSpec {
            shape,
            color,
            position,
            size,
        }
    }

    #[test]
    fn rejects_tiny_resolution() {
        let s = scene(Shape::Circle, Color::Red, Position::Center, Size::Small);
        assert!(matches!(render(&s, 7), Err(SceneError::ResolutionTooSmall(7))));
        assert!(render(&s, 8).is_ok());
    }

    #[test]
    fn white_center_square_is_a_solid_block() {
        let s = scene(Shape::Square, Color::White, Position::Center, Size::Large);
        let img = render(&s, 16).unwrap();
        let d = img.data();
        // half-extent 0.22*16 = 3.52 around center 8: pixel centers
        // y+0.5 in [4.48, 11.52], so rows/cols 4..=11
        for y in 0..16 {
            for x in 0..16 {
                let expect = (4..12).contains(&y) && (4..12).contains(&x);
                for ch in 0..3 {
                    let v = d[(ch * 16 + y) * 16 + x];
                    assert_eq!(v, if expect { 1.0 } else { -1.0 }, "({ch},{y},{x})");
                }
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let s = scene(Shape::Triangle, Color::Blue, Position::Top, Size::Small);
        assert!(render(&s, 32).unwrap() == render(&s, 32).unwrap());
    }

    #[test]
    fn circle_pixel_count_matches_independent_membership_oracle() {
        let s = scene(Shape::Circle, Color::Red, Position::Center, Size::Large);
        let img = render(&s, 32).unwrap();
        // independent count straight from the circle inequality
        let (cy, cx, r) = (16.0f64, 16.0f64, 0.22 * 32.0);
        let mut expect = 0;
        for y in 0..32 {
            for x in 0..32 {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= r * r {
                    expect += 1;
                }
            }
        }
        assert_eq!(shape_pixel_count(&img), expect);
        assert!(expect > 0);
    }

    #[test]
    fn values_stay_in_range_and_large_covers_twice_small() {
        for resolution in [16usize, 32] {
            for s in SceneSpec::all() {
                let img = render(&s, resolution).unwrap();
                assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
                if s.size == Size::Large {
                    let small = SceneSpec {
                        size: Size::Small,
                        ..s
                    };
                    let big_count = shape_pixel_count(&img);
                    let small_count = shape_pixel_count(&render(&small, resolution).unwrap());
                    assert!(
                        big_count >= 2 * small_count,
                        "{s:?} at {resolution}: {big_count} vs {small_count}"
                    );
                }
            }
        }
    }

    #[test]
    fn shapes_never_touch_the_border() {
        for s in SceneSpec::all() {
            let img = render(&s, 32).unwrap();
            let d = img.data();
            for i in 0..32 {
                for (y, x) in [(0, i), (31, i), (i, 0), (i, 31)] {
                    for ch in 0..3 {
                        assert_eq!(d[(ch * 32 + y) * 32 + x], -1.0);
                    }
                }
            }
        }
    }
}
