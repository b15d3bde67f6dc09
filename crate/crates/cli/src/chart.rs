//! Minimal line charts rasterised straight into RGB images.

use image::{Rgb, RgbImage};

pub const WIDTH: u32 = 480;
pub const HEIGHT: u32 = 320;
const MARGIN: f64 = 40.0;

const PALETTE: [Rgb<u8>; 4] = [Rgb([110, 110, 110]), Rgb([40, 90, 200]), Rgb([210, 40, 40]), Rgb([30, 150, 60])];

pub fn series_color(k: usize) -> Rgb<u8> {
    PALETTE[k % PALETTE.len()]
}

pub struct Series {
    pub ys: Vec<f64>,
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize * 2;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(img, (x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64, c);
    }
}

fn marker(img: &mut RgbImage, (x, y): (f64, f64), c: Rgb<u8>) {
    let (x, y) = (x.round() as i64, y.round() as i64);
    for dy in -2..=2 {
        for dx in -2..=2 {
            put(img, x + dx, y + dy, c);
        }
    }
}

/// Plots every series against `xs` with a tick per x value.
///
/// Each series is one coloured polyline through square markers; the y range
/// spans the data with a small pad.
pub fn line_chart(xs: &[f64], series: &[Series]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (w, h) = (WIDTH as f64, HEIGHT as f64);
    let black = Rgb([0, 0, 0]);
    let (x_lo, y_lo) = (MARGIN, h - MARGIN);
    let (x_hi, y_hi) = (w - MARGIN / 2.0, MARGIN / 2.0);
    line(&mut img, (x_lo, y_lo), (x_hi, y_lo), black);
    line(&mut img, (x_lo, y_lo), (x_lo, y_hi), black);

    let finite = |v: &&f64| v.is_finite();
    let xmin = xs.iter().filter(finite).cloned().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max);
    let all = series.iter().flat_map(|s| s.ys.iter()).filter(finite);
    let (ymin, ymax) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !xmin.is_finite() || !ymin.is_finite() {
        return img;
    }
    let xspan = (xmax - xmin).max(1e-12);
    let pad = ((ymax - ymin) * 0.08).max(1e-6);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let inset = 12.0;
    let px = |x: f64| x_lo + inset + (x - xmin) / xspan * (x_hi - x_lo - 2.0 * inset);
    let py = |y: f64| y_lo - (y - ymin) / (ymax - ymin) * (y_lo - y_hi);

    for &x in xs {
        let t = px(x);
        line(&mut img, (t, y_lo), (t, y_lo + 6.0), black);
    }
    for k in 0..5 {
        let t = y_lo - k as f64 / 4.0 * (y_lo - y_hi);
        line(&mut img, (x_lo - 6.0, t), (x_lo, t), black);
    }
    for (k, s) in series.iter().enumerate() {
        let c = series_color(k);
        let pts: Vec<(f64, f64)> = xs.iter().zip(&s.ys).filter(|(_, y)| y.is_finite()).map(|(&x, &y)| (px(x), py(y))).collect();
        for pair in pts.windows(2) {
            line(&mut img, pair[0], pair[1], c);
        }
        for &p in &pts {
            marker(&mut img, p, c);
        }
    }
    img
}
