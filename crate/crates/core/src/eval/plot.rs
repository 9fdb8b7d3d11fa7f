//! PNG scatter rendering for the t-SNE probe.

use crate::error::{Error, Result};
use image::{Rgb, RgbImage};
use ndarray::Array2;
use std::path::Path;

const SIZE: u32 = 800;
const MARGIN: u32 = 40;
const DOT: i64 = 2;

/// One color per label, cycled when labels run past the palette.
const PALETTE: [[u8; 3]; 8] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

/// Render 2-D points colored by label to a PNG file.
pub fn scatter_png(path: &Path, points: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if points.ncols() != 2 {
        return Err(Error::Shape(format!(
            "scatter wants [N x 2] points, found {} columns",
            points.ncols()
        )));
    }
    if labels.len() != points.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} points",
            labels.len(),
            points.nrows()
        )));
    }
    let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in points.rows() {
        lo_x = lo_x.min(row[0]);
        hi_x = hi_x.max(row[0]);
        lo_y = lo_y.min(row[1]);
        hi_y = hi_y.max(row[1]);
    }
    let span_x = (hi_x - lo_x).max(1e-12);
    let span_y = (hi_y - lo_y).max(1e-12);

    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let usable = (SIZE - 2 * MARGIN) as f64;
    for (row, &label) in points.rows().into_iter().zip(labels) {
        let px = MARGIN as f64 + (row[0] - lo_x) / span_x * usable;
        let py = MARGIN as f64 + (1.0 - (row[1] - lo_y) / span_y) * usable;
        let color = Rgb(PALETTE[label % PALETTE.len()]);
        for dx in -DOT..=DOT {
            for dy in -DOT..=DOT {
                let x = px as i64 + dx;
                let y = py as i64 + dy;
                if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::Eval(format!("writing {}: {e}", path.display())))
}

/// Stitch two rendered panels into one side-by-side comparison image.
pub fn compose_two_panel(left: &Path, right: &Path, out: &Path) -> Result<()> {
    let open = |p: &Path| {
        image::open(p)
            .map(|i| i.into_rgb8())
            .map_err(|e| Error::Eval(format!("reading {}: {e}", p.display())))
    };
    let (l, r) = (open(left)?, open(right)?);
    let h = l.height().max(r.height());
    let mut img = RgbImage::from_pixel(l.width() + r.width(), h, Rgb([255, 255, 255]));
    image::imageops::overlay(&mut img, &l, 0, 0);
    image::imageops::overlay(&mut img, &r, l.width() as i64, 0);
    img.save(out)
        .map_err(|e| Error::Eval(format!("writing {}: {e}", out.display())))
}
