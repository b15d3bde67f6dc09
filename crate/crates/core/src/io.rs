//! The CTLC binary container and PNG export.
//!
//! Layout: `b"CTLC"`, version `u16`, dtype tag `u8` (0 = f32, 1 = f64), rank
//! `u8`, `rank` dimensions as `u32`, then the row-major payload. All integers
//! and floats are little-endian.
//!
//! Parameter bundles (checkpoints) use rank 0 followed by a `u32` length, a
//! JSON manifest with the ordered tensor names and shapes, and the
//! concatenated payloads in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tomo::{Image, Sinogram};

pub const MAGIC: &[u8; 4] = b"CTLC";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            t => Err(Error::Format(format!("unknown dtype tag {t}"))),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(Dtype::F32),
            "f64" | "float64" => Ok(Dtype::F64),
            other => Err(Error::invalid(format!("unknown dtype '{other}'"))),
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        })
    }
}

/// A dense tensor as stored in a CTLC file.
#[derive(Clone, Debug, PartialEq)]
pub struct Stored {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Stored {
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dims("io::Stored", n, data.len()));
        }
        Ok(Stored { dtype, shape, data })
    }
}

fn write_header(out: &mut impl Write, dtype: Dtype, shape: &[usize]) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::invalid(format!("rank {} too large", shape.len())));
    }
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[dtype.tag(), shape.len() as u8])?;
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("extent {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn write_payload(out: &mut impl Write, dtype: Dtype, data: &[f64]) -> Result<()> {
    match dtype {
        Dtype::F32 => {
            for &v in data {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated container".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_header(input: &mut impl Read) -> Result<(Dtype, Vec<usize>)> {
    let mut head = [0u8; 8];
    read_exact(input, &mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_tag(head[6])?;
    let rank = head[7] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(input)? as usize);
    }
    Ok((dtype, shape))
}

fn read_payload(input: &mut impl Read, dtype: Dtype, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * dtype.width()];
    read_exact(input, &mut bytes)?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("container payload".into()));
    }
    Ok(data)
}

fn expect_eof(input: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

pub fn write_tensor(out: &mut impl Write, t: &Stored) -> Result<()> {
    write_header(out, t.dtype, &t.shape)?;
    write_payload(out, t.dtype, &t.data)
}

pub fn read_tensor(input: &mut impl Read) -> Result<Stored> {
    let (dtype, shape) = read_header(input)?;
    if shape.is_empty() {
        return Err(Error::Format("rank-0 container is a parameter bundle".into()));
    }
    let n = shape.iter().product();
    let data = read_payload(input, dtype, n)?;
    expect_eof(input)?;
    Ok(Stored { dtype, shape, data })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save(path: impl AsRef<Path>, t: &Stored) -> Result<()> {
    let mut out = create(path.as_ref())?;
    write_tensor(&mut out, t)?;
    out.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Stored> {
    read_tensor(&mut open(path.as_ref())?)
}

fn expect_rank(t: &Stored, rank: usize, what: &'static str) -> Result<()> {
    if t.shape.len() != rank {
        return Err(Error::dims(what, format!("rank {rank}"), format!("rank {}", t.shape.len())));
    }
    Ok(())
}

pub fn save_image(path: impl AsRef<Path>, img: &Image, dtype: Dtype) -> Result<()> {
    save(path, &Stored::new(dtype, vec![img.height(), img.width()], img.data().to_vec())?)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let t = load(path)?;
    expect_rank(&t, 2, "io::load_image")?;
    Image::new(t.shape[0], t.shape[1], t.data)
}

pub fn save_sinogram(path: impl AsRef<Path>, s: &Sinogram, dtype: Dtype) -> Result<()> {
    save(path, &Stored::new(dtype, vec![s.n_views(), s.n_detectors()], s.data().to_vec())?)
}

pub fn load_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let t = load(path)?;
    expect_rank(&t, 2, "io::load_sinogram")?;
    Sinogram::new(t.shape[0], t.shape[1], t.data)
}

/// Rank 3: `2 x H x W`, u plane then v plane.
pub fn save_flow(path: impl AsRef<Path>, f: &FlowField, dtype: Dtype) -> Result<()> {
    save(path, &Stored::new(dtype, vec![2, f.height(), f.width()], f.to_planar())?)
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let t = load(path)?;
    expect_rank(&t, 3, "io::load_flow")?;
    if t.shape[0] != 2 {
        return Err(Error::dims("io::load_flow", 2, t.shape[0]));
    }
    FlowField::from_planar(t.shape[1], t.shape[2], &t.data)
}

/// Rank 3: `D x H x W`.
pub fn save_volume(path: impl AsRef<Path>, slices: &[Image], dtype: Dtype) -> Result<()> {
    let first = slices.first().ok_or_else(|| Error::invalid("empty volume"))?;
    let mut data = Vec::with_capacity(slices.len() * first.data().len());
    for s in slices {
        first.same_shape(s, "io::save_volume")?;
        data.extend_from_slice(s.data());
    }
    save(path, &Stored::new(dtype, vec![slices.len(), first.height(), first.width()], data)?)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let t = load(path)?;
    expect_rank(&t, 3, "io::load_volume")?;
    let (h, w) = (t.shape[1], t.shape[2]);
    t.data
        .chunks_exact(h * w)
        .map(|c| Image::new(h, w, c.to_vec()))
        .collect()
}

/// 8-bit grayscale: values clamped to `[0, 1]` and scaled to `[0, 255]`.
pub fn to_gray8(img: &Image) -> image::GrayImage {
    image::GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = img.get(y as usize, x as usize).clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    })
}

pub fn save_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    save_rgb_or_gray(path.as_ref(), &image::DynamicImage::ImageLuma8(to_gray8(img)))
}

pub fn save_rgb_png(path: impl AsRef<Path>, img: &image::RgbImage) -> Result<()> {
    save_rgb_or_gray(path.as_ref(), &image::DynamicImage::ImageRgb8(img.clone()))
}

fn save_rgb_or_gray(path: &Path, img: &image::DynamicImage) -> Result<()> {
    let mut out = create(path)?;
    img.write_to(&mut out, image::ImageFormat::Png)?;
    out.flush()?;
    Ok(())
}

/// Horizontal montage of equally sized slices separated by `gap` white pixels.
pub fn montage(panels: &[&Image], gap: usize) -> Result<Image> {
    let first = panels.first().ok_or_else(|| Error::invalid("empty montage"))?;
    let (h, w) = first.shape();
    for p in panels {
        first.same_shape(p, "io::montage")?;
    }
    let total = panels.len() * w + (panels.len() - 1) * gap;
    Ok(Image::from_fn(h, total, |r, c| {
        let (k, off) = (c / (w + gap), c % (w + gap));
        if off < w {
            panels[k].get(r, off)
        } else {
            1.0
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u16,
    pub dtype: Dtype,
    pub entries: Vec<BundleEntry>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

/// Named tensors plus free-form metadata, stored as one rank-0 container.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bundle {
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Bundle {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push((name.into(), shape, data));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn write(&self, out: &mut impl Write) -> Result<()> {
        let manifest = BundleManifest {
            version: VERSION,
            dtype: Dtype::F64,
            entries: self
                .tensors
                .iter()
                .map(|(name, shape, data)| {
                    let n: usize = shape.iter().product();
                    if n != data.len() {
                        return Err(Error::dims("io::Bundle", n, data.len()));
                    }
                    Ok(BundleEntry {
                        name: name.clone(),
                        shape: shape.clone(),
                    })
                })
                .collect::<Result<_>>()?,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        write_header(out, Dtype::F64, &[])?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        for (_, _, data) in &self.tensors {
            write_payload(out, Dtype::F64, data)?;
        }
        Ok(())
    }

    pub fn read(input: &mut impl Read) -> Result<Self> {
        let (dtype, shape) = read_header(input)?;
        if !shape.is_empty() {
            return Err(Error::Format("expected a rank-0 parameter bundle".into()));
        }
        let len = read_u32(input)? as usize;
        let mut json = vec![0u8; len];
        read_exact(input, &mut json)?;
        let manifest: BundleManifest = serde_json::from_slice(&json)
            .map_err(|e| Error::Format(format!("bundle manifest: {e}")))?;
        if manifest.dtype != dtype {
            return Err(Error::Format("manifest dtype disagrees with header".into()));
        }
        let mut tensors = Vec::with_capacity(manifest.entries.len());
        for e in manifest.entries {
            let n = e.shape.iter().product();
            tensors.push((e.name, e.shape, read_payload(input, dtype, n)?));
        }
        expect_eof(input)?;
        Ok(Bundle {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create(path.as_ref())?;
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Bundle::read(&mut open(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes() {
        let t = Stored::new(Dtype::F32, vec![2, 3], vec![0.0; 6]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"CTLC");
        assert_eq!(&buf[4..8], &[1, 0, 0, 2]);
        assert_eq!(&buf[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(buf.len(), 16 + 6 * 4);
    }

    #[test]
    fn round_trip_both_dtypes() {
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.1 - 1.0).collect();
        for dtype in [Dtype::F32, Dtype::F64] {
            let t = Stored::new(dtype, vec![2, 3, 4], data.clone()).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            assert_eq!(back.shape, t.shape);
            for (a, b) in back.data.iter().zip(&data) {
                let tol = if dtype == Dtype::F32 { 1e-6 } else { 0.0 };
                assert!((a - b).abs() <= tol);
            }
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Stored::new(Dtype::F64, vec![4], vec![1.0; 4]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_tensor(&mut &buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(read_tensor(&mut long.as_slice()).is_err());
        let mut tag = buf;
        tag[6] = 9;
        assert!(read_tensor(&mut tag.as_slice()).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let mut b = Bundle::default();
        b.meta.insert("epoch".into(), 3.into());
        b.push("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        b.push("b", vec![1], vec![-0.5]);
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        assert_eq!(&buf[6..8], &[1, 0]);
        let back = Bundle::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.get("b").unwrap().1, &[-0.5]);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn montage_layout() {
        let a = Image::filled(2, 2, 0.0);
        let b = Image::filled(2, 2, 0.5);
        let m = montage(&[&a, &b], 1).unwrap();
        assert_eq!(m.shape(), (2, 5));
        assert_eq!(m.get(0, 2), 1.0);
        assert_eq!(m.get(1, 4), 0.5);
    }
}
