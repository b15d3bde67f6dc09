//! Analytic phantoms: the 2-D Shepp–Logan head and coherent 3-D stacks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tomo::Image;

/// Which family of structures a synthetic volume is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    #[default]
    Ellipsoids,
    SheppLogan3d,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipsoids" => Ok(PhantomKind::Ellipsoids),
            "shepp_logan_3d" => Ok(PhantomKind::SheppLogan3d),
            other => Err(Error::invalid(format!("unknown phantom kind '{other}'"))),
        }
    }
}

/// An ordered stack of slices with bounded inter-slice deformation.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomVolume {
    pub slices: Vec<Image>,
    pub coherence_scale: f64,
}

impl PhantomVolume {
    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn size(&self) -> (usize, usize) {
        self.slices.first().map(Image::shape).unwrap_or((0, 0))
    }

    /// Mean absolute difference between consecutive slices.
    pub fn mean_inter_slice_difference(&self) -> f64 {
        if self.slices.len() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .slices
            .windows(2)
            .map(|w| {
                w[0].data()
                    .iter()
                    .zip(w[1].data())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / w[0].data().len() as f64
            })
            .sum();
        total / (self.slices.len() - 1) as f64
    }
}

/// An ellipse in pixel coordinates relative to the image centre.
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    phi: f64,
    value: f64,
}

impl Ellipse {
    /// Approximate signed distance (pixels) from `(x, y)` to the boundary.
    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.phi.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        let rho = (u * u + v * v).sqrt();
        if rho < 1e-12 {
            return -self.a.min(self.b);
        }
        // |grad rho| in pixel units, first-order distance estimate.
        let gu = u / (rho * self.a);
        let gv = v / (rho * self.b);
        let grad = (gu * gu + gv * gv).sqrt();
        (rho - 1.0) / grad
    }

    /// Fractional coverage with a one-pixel linear edge.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        self.soft_coverage(x, y, 1.0)
    }

    /// Coverage with a linear edge ramp `edge` pixels wide.
    fn soft_coverage(&self, x: f64, y: f64, edge: f64) -> f64 {
        (0.5 - self.signed_distance(x, y) / edge).clamp(0.0, 1.0)
    }
}

/// Paints ellipses in order; each one blends towards its own value by its
/// coverage, so later ellipses sit on top of earlier ones.
fn render_layers(size: usize, layers: &[Ellipse]) -> Image {
    let half = (size as f64 - 1.0) / 2.0;
    Image::from_fn(size, size, |r, c| {
        let (x, y) = (c as f64 - half, r as f64 - half);
        let mut v = 0.0;
        for e in layers {
            let w = e.coverage(x, y);
            if w > 0.0 {
                v = (1.0 - w) * v + w * e.value;
            }
        }
        v
    })
}

/// Additive rendering with supersampled pixel coverage, as used by the
/// classical Shepp–Logan definition.
fn render_additive(size: usize, ellipses: &[Ellipse], supersample: usize) -> Image {
    let half = (size as f64 - 1.0) / 2.0;
    let ss = supersample.max(1);
    Image::from_fn(size, size, |r, c| {
        let mut acc = 0.0;
        for i in 0..ss {
            for j in 0..ss {
                let x = c as f64 - half + (j as f64 + 0.5) / ss as f64 - 0.5;
                let y = r as f64 - half + (i as f64 + 0.5) / ss as f64 - 0.5;
                for e in ellipses {
                    let (s, co) = e.phi.sin_cos();
                    let (dx, dy) = (x - e.cx, y - e.cy);
                    let u = (co * dx + s * dy) / e.a;
                    let v = (-s * dx + co * dy) / e.b;
                    if u * u + v * v <= 1.0 {
                        acc += e.value;
                    }
                }
            }
        }
        (acc / (ss * ss) as f64).clamp(0.0, 1.0)
    })
}

// (value, a, b, x0, y0, phi in degrees), unit-disk coordinates, y down.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, 0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, -0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, 0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, 0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, 0.605, 0.0),
];

/// Edge ramp width of [`shepp_logan`], in pixels.
pub const SHEPP_LOGAN_EDGE: f64 = 1.5;

/// The modified (high-contrast) Shepp–Logan head phantom, values in `[0, 1]`,
/// with edges ramped over [`SHEPP_LOGAN_EDGE`] pixels.
pub fn shepp_logan(size: usize) -> Image {
    shepp_logan_with_edge(size, SHEPP_LOGAN_EDGE)
}

/// Shepp–Logan head with each ellipse edge ramped over `edge` pixels; an
/// edge of zero gives the supersampled hard-edged phantom.
pub fn shepp_logan_with_edge(size: usize, edge: f64) -> Image {
    let r = size as f64 / 2.0;
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|&(value, a, b, x0, y0, phi)| Ellipse {
            cx: x0 * r,
            cy: y0 * r,
            a: a * r,
            b: b * r,
            phi: phi.to_radians(),
            value,
        })
        .collect();
    if edge <= 0.0 {
        return render_additive(size, &ellipses, 4);
    }
    let half = (size as f64 - 1.0) / 2.0;
    Image::from_fn(size, size, |r, c| {
        let (x, y) = (c as f64 - half, r as f64 - half);
        ellipses
            .iter()
            .map(|e| e.value * e.soft_coverage(x, y, edge))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    })
}

// (value, a, b, c, x0, y0, z0, phi in degrees); a 3-D extension of the head.
const SHEPP_LOGAN_3D: [(f64, f64, f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.78, 0.0, 0.0184, 0.0, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -18.0),
    (-0.2, 0.16, 0.41, 0.28, -0.22, 0.0, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.41, 0.0, -0.35, -0.15, 0.0),
    (0.1, 0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.0),
    (0.1, 0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.0),
    (0.1, 0.046, 0.023, 0.05, -0.08, 0.605, 0.0, 0.0),
    (0.1, 0.023, 0.023, 0.02, 0.0, 0.606, 0.0, 0.0),
    (0.1, 0.023, 0.046, 0.02, 0.06, 0.605, 0.0, 0.0),
];

fn shepp_logan_3d_volume(size: usize, depth: usize, coherence_scale: f64, seed: u64) -> PhantomVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = size as f64 / 2.0;
    // A slice step of `dz` moves ellipsoid edges by at most about
    // `dz * r` pixels near their equator, so tie it to the coherence scale.
    let mut dz = 0.5 * coherence_scale / r;
    let span = 0.6;
    if dz * (depth as f64 - 1.0) > span {
        dz = span / (depth as f64 - 1.0).max(1.0);
    }
    let z_centre: f64 = rng.gen_range(-0.1..0.1);
    let gain: Vec<f64> = (0..SHEPP_LOGAN_3D.len())
        .map(|_| rng.gen_range(0.9..1.1))
        .collect();
    let slices = (0..depth)
        .map(|k| {
            let z = z_centre + (k as f64 - (depth as f64 - 1.0) / 2.0) * dz;
            let ellipses: Vec<Ellipse> = SHEPP_LOGAN_3D
                .iter()
                .zip(&gain)
                .filter_map(|(&(value, a, b, c, x0, y0, z0, phi), &g)| {
                    let t = 1.0 - ((z - z0) / c).powi(2);
                    (t > 0.0).then(|| Ellipse {
                        cx: x0 * r,
                        cy: y0 * r,
                        a: a * t.sqrt() * r,
                        b: b * t.sqrt() * r,
                        phi: phi.to_radians(),
                        value: if value > 0.0 && value < 1.0 { value * g } else { value },
                    })
                })
                .collect();
            render_additive(size, &ellipses, 2)
        })
        .collect();
    PhantomVolume {
        slices,
        coherence_scale,
    }
}

/// A drifting ellipse: centre and radii follow sinusoids along the slice axis
/// whose per-slice increments are bounded by the coherence scale.
struct Track {
    base: Ellipse,
    amp_c: f64,
    omega_c: (f64, f64),
    phase_c: (f64, f64),
    amp_r: (f64, f64),
    omega_r: (f64, f64),
    phase_r: (f64, f64),
}

impl Track {
    fn at(&self, z: f64) -> Ellipse {
        let wave = |amp: f64, omega: f64, phase: f64| amp * ((omega * z + phase).sin() - phase.sin());
        Ellipse {
            cx: self.base.cx + wave(self.amp_c, self.omega_c.0, self.phase_c.0),
            cy: self.base.cy + wave(self.amp_c, self.omega_c.1, self.phase_c.1),
            a: self.base.a + wave(self.amp_r.0, self.omega_r.0, self.phase_r.0),
            b: self.base.b + wave(self.amp_r.1, self.omega_r.1, self.phase_r.1),
            ..self.base
        }
    }
}

fn ellipsoid_volume(size: usize, depth: usize, coherence_scale: f64, seed: u64) -> PhantomVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut shapes: Vec<(Ellipse, f64)> = Vec::new();

    // Body outline, then organs, then small bright vessels.
    let body = Ellipse {
        cx: rng.gen_range(-0.03..0.03) * s,
        cy: rng.gen_range(-0.03..0.03) * s,
        a: rng.gen_range(0.36..0.43) * s,
        b: rng.gen_range(0.30..0.40) * s,
        phi: rng.gen_range(-0.3..0.3),
        value: rng.gen_range(0.25..0.35),
    };
    shapes.push((body, 0.3));
    let n_organs = rng.gen_range(3..=6);
    for _ in 0..n_organs {
        let a = rng.gen_range(0.06..0.16) * s;
        let b = rng.gen_range(0.06..0.16) * s;
        let ang: f64 = rng.gen_range(0.0..2.0 * PI);
        let rad = rng.gen_range(0.0..0.55);
        let value = if rng.gen_bool(0.4) {
            rng.gen_range(0.02..0.12)
        } else {
            rng.gen_range(0.45..0.9)
        };
        shapes.push((
            Ellipse {
                cx: body.cx + rad * (body.a - a) * ang.cos(),
                cy: body.cy + rad * (body.b - b) * ang.sin(),
                a,
                b,
                phi: rng.gen_range(-PI..PI),
                value,
            },
            1.0,
        ));
    }
    let n_vessels = rng.gen_range(2..=5);
    for _ in 0..n_vessels {
        let rr = rng.gen_range(0.02..0.04) * s;
        let ang: f64 = rng.gen_range(0.0..2.0 * PI);
        let rad = rng.gen_range(0.0..0.7);
        shapes.push((
            Ellipse {
                cx: body.cx + rad * body.a * ang.cos(),
                cy: body.cy + rad * body.b * ang.sin(),
                a: rr,
                b: rr,
                phi: 0.0,
                value: rng.gen_range(0.8..1.0),
            },
            1.0,
        ));
    }

    let amp_c = 0.08 * s;
    let tracks: Vec<Track> = shapes
        .into_iter()
        .map(|(base, mobility)| {
            // Centre speed per axis and radius speed, in pixels per slice.
            let mobility = mobility * rng.gen_range(0.5..1.0);
            let vc = 0.8 * coherence_scale * mobility / std::f64::consts::SQRT_2;
            let vr = 0.2 * coherence_scale * mobility;
            let amp_r = (0.15 * base.a, 0.15 * base.b);
            let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(0.7..1.0);
            Track {
                base,
                amp_c,
                omega_c: (vc / amp_c * jitter(&mut rng), vc / amp_c * jitter(&mut rng)),
                phase_c: (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)),
                amp_r,
                omega_r: (vr / amp_r.0 * jitter(&mut rng), vr / amp_r.1 * jitter(&mut rng)),
                phase_r: (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)),
            }
        })
        .collect();

    let slices = (0..depth)
        .map(|k| {
            let layers: Vec<Ellipse> = tracks.iter().map(|t| t.at(k as f64)).collect();
            render_layers(size, &layers)
        })
        .collect();
    PhantomVolume {
        slices,
        coherence_scale,
    }
}

/// Builds a deterministic phantom stack.
///
/// Consecutive slices differ by a smooth drift of the structures whose
/// per-slice displacement is bounded by `coherence_scale` pixels.
pub fn make_phantom_volume(
    kind: PhantomKind,
    size: usize,
    depth: usize,
    coherence_scale: f64,
    seed: u64,
) -> Result<PhantomVolume> {
    if size < 32 {
        return Err(Error::invalid(format!("phantom size must be >= 32, got {size}")));
    }
    if depth < 2 {
        return Err(Error::invalid(format!("phantom depth must be >= 2, got {depth}")));
    }
    if !(coherence_scale.is_finite() && coherence_scale >= 0.0) {
        return Err(Error::invalid(format!(
            "coherence scale must be >= 0, got {coherence_scale}"
        )));
    }
    Ok(match kind {
        PhantomKind::Ellipsoids => ellipsoid_volume(size, depth, coherence_scale, seed),
        PhantomKind::SheppLogan3d => shepp_logan_3d_volume(size, depth, coherence_scale, seed),
    })
}

/// A soft-edged disk of unit value, used for projector checks.
pub fn disk(size: usize, radius: f64) -> Image {
    let e = Ellipse {
        cx: 0.0,
        cy: 0.0,
        a: radius,
        b: radius,
        phi: 0.0,
        value: 1.0,
    };
    render_additive(size, &[e], 8)
}

/// Isotropic Gaussian blob centred at fractional pixel `(row, col)`.
pub fn gaussian_blob(size: usize, row: f64, col: f64, sigma: f64, amplitude: f64) -> Image {
    Image::from_fn(size, size, |r, c| {
        let d2 = (r as f64 - row).powi(2) + (c as f64 - col).powi(2);
        amplitude * (-d2 / (2.0 * sigma * sigma)).exp()
    })
}
