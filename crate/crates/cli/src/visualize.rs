//! PNG renderings of the amplification and geometry maps.

use geosup::data::resize_bilinear;
use geosup::gae::Cell;
use geosup::sda::SamplingGrid;
use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3, Axis};

/// Output pixels per input pixel.
pub const SCALE: u32 = 4;
/// Spacing of the drawn grid lines, in input pixels.
const GRID_STEP: usize = 8;

pub fn image_rgb(img: &Array3<f32>) -> RgbImage {
    let (_, h, w) = img.dim();
    RgbImage::from_fn(w as u32 * SCALE, h as u32 * SCALE, |x, y| {
        let (px, py) = ((x / SCALE) as usize, (y / SCALE) as usize);
        let v = |c: usize| (img[[c, py, px]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v(0), v(1), v(2)])
    })
}

fn draw_line(canvas: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a.0 + t * (b.0 - a.0)).round();
        let y = (a.1 + t * (b.1 - a.1)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < canvas.width() && (y as u32) < canvas.height() {
            canvas.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// The input with the deformed grid drawn on top: each polyline joins the
/// source positions sampled by one row or column of output pixels.
pub fn grid_overlay(img: &Array3<f32>, grid: &SamplingGrid<f32>) -> RgbImage {
    let mut canvas = image_rgb(img);
    let (h, w) = grid.dim();
    let to_canvas = |y: usize, x: usize| {
        let sx = grid.map_x[[y, x]] as f64 * (w - 1) as f64;
        let sy = grid.map_y[[y, x]] as f64 * (h - 1) as f64;
        ((sx + 0.5) * SCALE as f64, (sy + 0.5) * SCALE as f64)
    };
    let color = Rgb([255, 220, 0]);
    let mut lines: Vec<usize> = (0..h).step_by(GRID_STEP).collect();
    lines.push(h - 1);
    for &y in &lines {
        for x in 1..w {
            draw_line(&mut canvas, to_canvas(y, x - 1), to_canvas(y, x), color);
        }
    }
    let mut cols: Vec<usize> = (0..w).step_by(GRID_STEP).collect();
    cols.push(w - 1);
    for &x in &cols {
        for y in 1..h {
            draw_line(&mut canvas, to_canvas(y - 1, x), to_canvas(y, x), color);
        }
    }
    canvas
}

/// Blue → yellow → red.
fn heat(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    if v < 0.5 {
        let t = v * 2.0;
        [t, t, 1.0 - t]
    } else {
        let t = (v - 0.5) * 2.0;
        [1.0, 1.0 - t, 0.0]
    }
}

/// Min-max normalization; a constant map becomes all zeros.
pub fn normalize(map: &Array2<f32>) -> Array2<f32> {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi > lo {
        map.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::zeros(map.raw_dim())
    }
}

/// Half-transparent heat map of `map` (values in `[0,1]`) over the image.
pub fn heat_overlay(img: &Array3<f32>, map: &Array2<f32>) -> RgbImage {
    let (_, h, w) = img.dim();
    let up = resize_bilinear(map.view().insert_axis(Axis(0)), h, w);
    let mut blended = img.clone();
    for y in 0..h {
        for x in 0..w {
            let color = heat(up[[0, y, x]]);
            for c in 0..3 {
                blended[[c, y, x]] = 0.5 * img[[c, y, x]] + 0.5 * color[c];
            }
        }
    }
    image_rgb(&blended)
}

/// Heat overlay of the normalized pattern map with the reference cell outlined.
pub fn pattern_overlay(img: &Array3<f32>, pattern: &Array2<f32>, reference: Cell) -> RgbImage {
    let mut canvas = heat_overlay(img, &normalize(pattern));
    let (ph, pw) = pattern.dim();
    let cell_w = canvas.width() as f64 / pw as f64;
    let cell_h = canvas.height() as f64 / ph as f64;
    let x0 = reference.x as f64 * cell_w;
    let y0 = reference.y as f64 * cell_h;
    let (x1, y1) = (x0 + cell_w - 1.0, y0 + cell_h - 1.0);
    let white = Rgb([255, 255, 255]);
    for (a, b) in [
        ((x0, y0), (x1, y0)),
        ((x1, y0), (x1, y1)),
        ((x1, y1), (x0, y1)),
        ((x0, y1), (x0, y0)),
    ] {
        draw_line(&mut canvas, a, b, white);
    }
    canvas
}

/// Row-major first arg-max of a map.
pub fn argmax_cell(map: &Array2<f32>) -> Cell {
    let w = map.ncols();
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map.as_slice().unwrap()[best] {
            best = i;
        }
    }
    Cell { x: best % w, y: best / w }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_grid_draws_straight_lines() {
        let img = Array3::zeros((3, 32, 32));
        let grid = SamplingGrid::<f32>::identity(32, 32);
        let canvas = grid_overlay(&img, &grid);
        assert_eq!(canvas.dimensions(), (128, 128));
        // row 8 of the output maps to canvas row 8*4+2
        assert_eq!(canvas.get_pixel(60, 34), &Rgb([255, 220, 0]));
        assert_eq!(canvas.get_pixel(60, 36), &Rgb([0, 0, 0]));
    }

    #[test]
    fn normalize_constant_is_zero() {
        let m = Array2::from_elem((3, 3), 2.0f32);
        assert!(normalize(&m).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_prefers_first() {
        let mut m = Array2::zeros((3, 4));
        m[[1, 2]] = 1.0f32;
        m[[2, 0]] = 1.0;
        assert_eq!(argmax_cell(&m), Cell { x: 2, y: 1 });
    }
}
