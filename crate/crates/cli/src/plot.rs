//! Minimal raster plots: a value heatmap and an overlaid line chart. These
//! are quick-look artifacts; the authoritative numbers live in the CSVs.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::CliError;

pub const BLUE: [u8; 3] = [31, 119, 180];
pub const ORANGE: [u8; 3] = [255, 127, 14];
pub const GREEN: [u8; 3] = [44, 160, 44];

const MARGIN: u32 = 24;

type Canvas = ImageBuffer<Rgb<u8>, Vec<u8>>;

fn save(img: Canvas, path: &Path) -> Result<(), CliError> {
    img.save(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Map `t` in [0, 1] onto a dark-blue to yellow ramp.
fn ramp(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    Rgb([(250.0 * t) as u8, (30.0 + 200.0 * t) as u8, (120.0 * (1.0 - t) + 40.0) as u8])
}

fn finite_bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Matrix rows become pixel rows top to bottom, one rectangle per cell,
/// color scaled to the finite value range.
pub fn heatmap(rows: &[Vec<f64>], path: &Path) -> Result<(), CliError> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if height == 0 || width == 0 {
        return Err(CliError::Runtime("nothing to draw: the matrix is empty".into()));
    }
    let (lo, hi) = finite_bounds(rows.iter().flatten());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell_w = (640 / width as u32).clamp(2, 48);
    let cell_h = (480 / height as u32).clamp(2, 48);
    let img = Canvas::from_fn(width as u32 * cell_w, height as u32 * cell_h, |x, y| {
        let v = rows[(y / cell_h) as usize][(x / cell_w) as usize];
        if v.is_finite() {
            ramp((v - lo) / span)
        } else {
            Rgb([230, 230, 230])
        }
    });
    save(img, path)
}

/// Overlaid polylines on a shared scale, one color per series. Shorter
/// series simply end early on the x axis.
pub fn line_plot(series: &[(&[f64], [u8; 3])], path: &Path) -> Result<(), CliError> {
    let longest = series.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
    if longest < 2 {
        return Err(CliError::Runtime("nothing to draw: series are empty".into()));
    }
    let (lo, hi) = finite_bounds(series.iter().flat_map(|(s, _)| s.iter()));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (640u32, 480u32);
    let mut img = Canvas::from_pixel(w, h, Rgb([255, 255, 255]));
    for x in MARGIN..=w - MARGIN {
        img.put_pixel(x, h - MARGIN, Rgb([0, 0, 0]));
    }
    for y in MARGIN..=h - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
    }
    let px = |i: usize| {
        MARGIN as f64 + f64::from(w - 2 * MARGIN) * i as f64 / (longest - 1) as f64
    };
    let py = |v: f64| f64::from(h - MARGIN) - f64::from(h - 2 * MARGIN) * (v - lo) / span;
    for (values, color) in series {
        for i in 1..values.len() {
            if values[i - 1].is_finite() && values[i].is_finite() {
                stroke(&mut img, px(i - 1), py(values[i - 1]), px(i), py(values[i]), Rgb(*color));
            }
        }
    }
    save(img, path)
}

/// Straight segment by uniform parameter stepping, clipped to the canvas.
fn stroke(img: &mut Canvas, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + (x1 - x0) * t).round();
        let y = (y0 + (y1 - y0) * t).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}
