use image::{Rgb, RgbImage};

use super::FlowField;
use crate::tomo::Image;

fn heat(t: f64) -> Rgb<u8> {
    // black -> red -> yellow -> white
    let t = t.clamp(0.0, 1.0) * 3.0;
    let (r, g, b) = if t < 1.0 {
        (t, 0.0, 0.0)
    } else if t < 2.0 {
        (1.0, t - 1.0, 0.0)
    } else {
        (1.0, 1.0, t - 2.0)
    };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

/// Flow magnitude as a heat map, normalised to the field's own maximum.
pub fn magnitude_heatmap(flow: &FlowField) -> RgbImage {
    let mag = flow.magnitude();
    let max = mag.data().iter().cloned().fold(0.0, f64::max).max(1e-12);
    RgbImage::from_fn(flow.width() as u32, flow.height() as u32, |x, y| {
        heat(mag.get(y as usize, x as usize) / max)
    })
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()) * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        if xi >= 0 && yi >= 0 && (xi as u32) < img.width() && (yi as u32) < img.height() {
            img.put_pixel(xi as u32, yi as u32, color);
        }
    }
}

/// Grayscale slice upscaled by `scale` with red arrows every `stride` pixels.
///
/// Arrows show the motion of the neighbour onto the slice (the negated
/// backward field), lengthened by `gain` for visibility.
pub fn arrow_overlay(base: &Image, flow: &FlowField, stride: usize, scale: u32, gain: f64) -> RgbImage {
    let (h, w) = base.shape();
    let scale = scale.max(1);
    let mut img = RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let v = base.get((y / scale) as usize, (x / scale) as usize).clamp(0.0, 1.0);
        let g = (v * 255.0).round() as u8;
        Rgb([g, g, g])
    });
    let red = Rgb([255, 0, 0]);
    let stride = stride.max(1);
    let s = scale as f64;
    for r in (stride / 2..h).step_by(stride) {
        for c in (stride / 2..w).step_by(stride) {
            let (u, v) = flow.at(r, c);
            let start = ((c as f64 + 0.5) * s, (r as f64 + 0.5) * s);
            let end = (start.0 - u * gain * s, start.1 - v * gain * s);
            draw_line(&mut img, start, end, red);
            // arrow head
            let (dx, dy) = (end.0 - start.0, end.1 - start.1);
            let len = dx.hypot(dy);
            if len > 1.0 {
                let (ux, uy) = (dx / len, dy / len);
                let head = (len * 0.3).min(3.0 * s);
                for sign in [-1.0, 1.0] {
                    let hx = end.0 - head * (ux + sign * 0.5 * uy);
                    let hy = end.1 - head * (uy - sign * 0.5 * ux);
                    draw_line(&mut img, end, (hx, hy), red);
                }
            }
        }
    }
    img
}
