//! PNG rendering of attribution matrices. Display only: each row is scaled by
//! its largest magnitude, the CSV keeps the raw values.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::error::CliResult;

// viridis sampled at 0, .25, .5, .75, 1
const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];
const MASKED: Rgb<u8> = Rgb([40, 40, 40]);
const TARGET_SIDE: usize = 512;

pub fn palette(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - k as f64;
    let c = |ch: usize| (STOPS[k][ch] + (STOPS[k + 1][ch] - STOPS[k][ch]) * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Cell `(i, j)` shows `|c[i][j]| / max_k |c[i][k]|`; cells above the
/// diagonal are painted grey.
pub fn render(scores: ArrayView2<f64>) -> RgbImage {
    let (n, m) = scores.dim();
    let cell = (TARGET_SIDE / n.max(m).max(1)).max(1) as u32;
    let mut img = RgbImage::from_pixel(m as u32 * cell, n as u32 * cell, MASKED);
    for (i, row) in scores.outer_iter().enumerate() {
        let max = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (j, &v) in row.iter().enumerate() {
            if j > i && n == m {
                continue;
            }
            let t = if max > 0.0 { v.abs() / max } else { 0.0 };
            let color = palette(t);
            for dy in 0..cell {
                for dx in 0..cell {
                    img.put_pixel(j as u32 * cell + dx, i as u32 * cell + dy, color);
                }
            }
        }
    }
    img
}

pub fn save(path: &Path, scores: ArrayView2<f64>) -> CliResult<()> {
    render(scores).save(path)?;
    Ok(())
}
