//! Local Gaussian moments, MSCN coefficients, and Sobel gradient magnitude.
//!
//! All operations use reflect padding so output fields keep the full frame
//! dimensions, and all are pure functions safe to run per-frame in parallel.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::videoio::Frame;

/// Anything that exposes a row-major plane of real samples.
pub trait Plane {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn values(&self) -> &[f64];

    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.values()[row * self.width() + col]
    }
}

impl Plane for Frame {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn values(&self) -> &[f64] {
        &self.luma
    }
}

/// What a [`Field`] holds; informational, checked by a few invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Mscn,
    Mean,
    Sigma,
    GradientMagnitude,
    PairedProduct,
}

/// A derived 2-D real field with the same indexing convention as frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub kind: FieldKind,
}

impl Field {
    pub fn new(values: Vec<f64>, width: usize, height: usize, kind: FieldKind) -> Self {
        assert_eq!(values.len(), width * height);
        Field { values, width, height, kind }
    }

    /// Copy out a rectangular window (used for per-patch statistics).
    pub fn crop(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Field {
        assert!(row0 + rows <= self.height && col0 + cols <= self.width);
        let mut values = Vec::with_capacity(rows * cols);
        for r in row0..row0 + rows {
            values.extend_from_slice(&self.values[r * self.width + col0..r * self.width + col0 + cols]);
        }
        Field::new(values, cols, rows, self.kind)
    }
}

impl Plane for Field {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("frame too small: {width}x{height}, need at least {need_w}x{need_h}")]
    FrameTooSmall { width: usize, height: usize, need_w: usize, need_h: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad field dump {path}: {detail}")]
    BadFieldDump { path: std::path::PathBuf, detail: String },
}

/// Circularly-symmetric Gaussian weights on a (2K+1)x(2K+1) support,
/// rescaled to unit volume.
#[derive(Debug, Clone)]
pub struct GaussianWindow {
    pub half_width: usize,
    pub sigma: f64,
    /// Separable 1-D taps; the 2-D weight is the outer product.
    taps: Vec<f64>,
}

impl GaussianWindow {
    pub fn new(half_width: usize, sigma: f64) -> Self {
        assert!(sigma > 0.0 && half_width > 0);
        let mut taps = Vec::with_capacity(2 * half_width + 1);
        for k in -(half_width as isize)..=(half_width as isize) {
            let x = k as f64;
            taps.push((-x * x / (2.0 * sigma * sigma)).exp());
        }
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        GaussianWindow { half_width, sigma, taps }
    }

    /// The standard window for this feature family: 7x7, sigma 7/6.
    pub fn standard() -> Self {
        GaussianWindow::new(3, 7.0 / 6.0)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Full 2-D weight at offset (k, l), k and l in [-K, K].
    pub fn weight(&self, k: isize, l: isize) -> f64 {
        let k = (k + self.half_width as isize) as usize;
        let l = (l + self.half_width as isize) as usize;
        self.taps[k] * self.taps[l]
    }
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = i;
    while i < 0 || i >= len {
        if i < 0 {
            i = -i;
        }
        if i >= len {
            i = 2 * (len - 1) - i;
        }
    }
    i as usize
}

/// Separable correlation with the window's 1-D taps, reflect padding.
fn separable_blur(values: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let mut tmp = vec![0.0f64; width * height];
    for r in 0..height {
        let row = &values[r * width..(r + 1) * width];
        let out = &mut tmp[r * width..(r + 1) * width];
        for c in 0..width {
            let mut acc = 0.0;
            for (ti, &tv) in taps.iter().enumerate() {
                acc += tv * row[reflect(c as isize + ti as isize - half as isize, width)];
            }
            out[c] = acc;
        }
    }
    let mut out = vec![0.0f64; width * height];
    for c in 0..width {
        for r in 0..height {
            let mut acc = 0.0;
            for (ti, &tv) in taps.iter().enumerate() {
                acc += tv * tmp[reflect(r as isize + ti as isize - half as isize, height) * width + c];
            }
            out[r * width + c] = acc;
        }
    }
    out
}

fn check_size(p: &impl Plane, need_w: usize, need_h: usize) -> Result<(), SpatialError> {
    if p.width() < need_w || p.height() < need_h {
        return Err(SpatialError::FrameTooSmall {
            width: p.width(),
            height: p.height(),
            need_w,
            need_h,
        });
    }
    Ok(())
}

/// Weighted local mean and local standard deviation fields.
///
/// `sigma(i,j) = sqrt(sum w(k,l) (I(i+k,j+l) - mean(i,j))^2)`, computed as
/// `sqrt(E[I^2] - mean^2)` with tiny negatives clamped to zero.
pub fn local_moments(p: &impl Plane, w: &GaussianWindow) -> Result<(Field, Field), SpatialError> {
    let need = 2 * w.half_width + 1;
    check_size(p, need, need)?;
    let (width, height) = (p.width(), p.height());
    let mean = separable_blur(p.values(), width, height, w.taps());
    let squares: Vec<f64> = p.values().iter().map(|&v| v * v).collect();
    let second = separable_blur(&squares, width, height, w.taps());
    let sigma: Vec<f64> =
        mean.iter().zip(second.iter()).map(|(&m, &s)| (s - m * m).max(0.0).sqrt()).collect();
    Ok((
        Field::new(mean, width, height, FieldKind::Mean),
        Field::new(sigma, width, height, FieldKind::Sigma),
    ))
}

/// The stabilizing constant for MSCN at a given bit depth; scales with range.
pub fn mscn_constant(bit_depth: u8) -> f64 {
    if bit_depth > 8 {
        4.0
    } else {
        1.0
    }
}

/// Mean-subtracted contrast-normalized coefficients `(I - mu) / (sigma + C)`.
pub fn mscn(p: &impl Plane, w: &GaussianWindow, c: f64) -> Result<Field, SpatialError> {
    assert!(c > 0.0, "MSCN constant must be positive");
    let (mean, sigma) = local_moments(p, w)?;
    let values: Vec<f64> = p
        .values()
        .iter()
        .zip(mean.values.iter().zip(sigma.values.iter()))
        .map(|(&v, (&m, &s))| (v - m) / (s + c))
        .collect();
    Ok(Field::new(values, p.width(), p.height(), FieldKind::Mscn))
}

/// Gradient magnitude `sqrt(Gx^2 + Gy^2)` from the standard 3x3 Sobel pair.
pub fn sobel_magnitude(p: &impl Plane) -> Result<Field, SpatialError> {
    check_size(p, 3, 3)?;
    let (width, height) = (p.width(), p.height());
    let v = p.values();
    let mut out = vec![0.0f64; width * height];
    for r in 0..height {
        let rm = reflect(r as isize - 1, height);
        let rp = reflect(r as isize + 1, height);
        for c in 0..width {
            let cm = reflect(c as isize - 1, width);
            let cp = reflect(c as isize + 1, width);
            let tl = v[rm * width + cm];
            let tc = v[rm * width + c];
            let tr = v[rm * width + cp];
            let ml = v[r * width + cm];
            let mr = v[r * width + cp];
            let bl = v[rp * width + cm];
            let bc = v[rp * width + c];
            let br = v[rp * width + cp];
            let gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            let gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
            out[r * width + c] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(Field::new(out, width, height, FieldKind::GradientMagnitude))
}

const FIELD_MAGIC: &[u8; 4] = b"FLD0";

/// Dump a field as `FLD0 | u32 width | u32 height | f32 row-major data`.
pub fn write_field_f32(path: &Path, field: &Field) -> Result<(), SpatialError> {
    let io_err = |e| SpatialError::Io { path: path.to_path_buf(), source: e };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    out.write_all(FIELD_MAGIC).map_err(io_err)?;
    out.write_all(&(field.width as u32).to_le_bytes()).map_err(io_err)?;
    out.write_all(&(field.height as u32).to_le_bytes()).map_err(io_err)?;
    for &v in &field.values {
        out.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

/// Read back a field dump written by [`write_field_f32`].
pub fn read_field_f32(path: &Path) -> Result<Field, SpatialError> {
    let io_err = |e| SpatialError::Io { path: path.to_path_buf(), source: e };
    let bad = |detail: &str| SpatialError::BadFieldDump { path: path.to_path_buf(), detail: detail.into() };
    let mut bytes = Vec::new();
    File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() < 12 || &bytes[0..4] != FIELD_MAGIC {
        return Err(bad("missing FLD0 magic"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * width * height;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Field::new(values, width, height, FieldKind::Mscn))
}
