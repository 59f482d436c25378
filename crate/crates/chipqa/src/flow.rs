//! Dense two-frame optical flow and robust per-patch pooling.
//!
//! The estimator follows the classic quadratic polynomial-expansion scheme:
//! every neighborhood of each frame is approximated by x'Ax + b'x + c under
//! a Gaussian applicability, and per-pixel displacement is solved from the
//! averaged coefficient differences over a Gaussian image pyramid with a few
//! fixed-point iterations per level. Everything is plain scalar arithmetic,
//! so results are deterministic for fixed parameters.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::videoio::Frame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("frame too small for flow: {width}x{height}, need at least {min}x{min}")]
    FrameTooSmall { width: usize, height: usize, min: usize },
}

/// Dense displacement field mapping the previous frame onto the next one,
/// in pixels per frame step.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub width: usize,
    pub height: usize,
}

/// Coordinate-wise medians of a flow field over non-overlapping R x R blocks.
#[derive(Debug, Clone)]
pub struct PatchFlowGrid {
    pub med_u: Vec<f32>,
    pub med_v: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
}

impl PatchFlowGrid {
    #[inline]
    pub fn at(&self, patch_row: usize, patch_col: usize) -> (f32, f32) {
        let i = patch_row * self.cols + patch_col;
        (self.med_u[i], self.med_v[i])
    }
}

/// Estimator parameters; the defaults are the canonical ones for this
/// algorithm family.
#[derive(Debug, Clone)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    pub win_size: usize,
    pub iterations: usize,
    /// Neighborhood size for polynomial expansion (odd).
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { pyramid_levels: 3, win_size: 15, iterations: 3, poly_n: 5, poly_sigma: 1.1 }
    }
}

/// A dense flow estimator. Downstream stages depend only on this interface,
/// so a conforming stub (for example [`ZeroFlow`]) can replace the real
/// estimator without touching them.
pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, prev: &Frame, next: &Frame) -> Result<FlowField, FlowError>;
}

/// The polynomial-expansion estimator.
#[derive(Debug, Clone, Default)]
pub struct FarnebackEstimator {
    pub params: FlowParams,
}

impl FlowEstimator for FarnebackEstimator {
    fn estimate(&self, prev: &Frame, next: &Frame) -> Result<FlowField, FlowError> {
        estimate_flow(prev, next, &self.params)
    }
}

/// Always returns zero motion; useful for ablation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFlow;

impl FlowEstimator for ZeroFlow {
    fn estimate(&self, prev: &Frame, next: &Frame) -> Result<FlowField, FlowError> {
        if prev.width != next.width || prev.height != next.height {
            return Err(FlowError::DimensionMismatch(prev.width, prev.height, next.width, next.height));
        }
        Ok(FlowField {
            u: vec![0.0; prev.width * prev.height],
            v: vec![0.0; prev.width * prev.height],
            width: prev.width,
            height: prev.height,
        })
    }
}

/// Estimate dense flow from `prev` to `next`.
pub fn estimate_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField, FlowError> {
    if prev.width != next.width || prev.height != next.height {
        return Err(FlowError::DimensionMismatch(prev.width, prev.height, next.width, next.height));
    }
    let min = 2 * params.poly_n;
    if prev.width < min || prev.height < min {
        return Err(FlowError::FrameTooSmall { width: prev.width, height: prev.height, min });
    }
    let a = P32::from_frame(prev);
    let b = P32::from_frame(next);
    let (u, v) = farneback(&a, &b, params);
    Ok(FlowField { u, v, width: prev.width, height: prev.height })
}

/// Coordinate-wise median over complete R x R blocks; blocks truncated at
/// the right/bottom edge are dropped. Even-count medians take the
/// lower-middle order statistic.
pub fn median_pool(flow: &FlowField, r: usize) -> Result<PatchFlowGrid, FlowError> {
    assert!(r >= 1);
    if flow.width < r || flow.height < r {
        return Err(FlowError::FrameTooSmall { width: flow.width, height: flow.height, min: r });
    }
    let rows = flow.height / r;
    let cols = flow.width / r;
    let mut med_u = Vec::with_capacity(rows * cols);
    let mut med_v = Vec::with_capacity(rows * cols);
    let mut block = Vec::with_capacity(r * r);
    for pr in 0..rows {
        for pc in 0..cols {
            for plane in [&flow.u, &flow.v] {
                block.clear();
                for dr in 0..r {
                    let row = (pr * r + dr) * flow.width + pc * r;
                    block.extend_from_slice(&plane[row..row + r]);
                }
                block.sort_unstable_by(f32::total_cmp);
                let m = block[(block.len() - 1) / 2];
                if std::ptr::eq(plane, &flow.u) {
                    med_u.push(m);
                } else {
                    med_v.push(m);
                }
            }
        }
    }
    Ok(PatchFlowGrid { med_u, med_v, rows, cols, patch_size: r })
}

/// Dump as `FLW0 | u32 width | u32 height | f32 u plane | f32 v plane`.
pub fn write_flow_f32(path: &Path, flow: &FlowField) -> Result<(), std::io::Error> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(b"FLW0")?;
    out.write_all(&(flow.width as u32).to_le_bytes())?;
    out.write_all(&(flow.height as u32).to_le_bytes())?;
    for plane in [&flow.u, &flow.v] {
        for &x in plane.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Internals. Single-precision planes keep the working set small; all border
// handling clamps to the edge.

struct P32 {
    v: Vec<f32>,
    w: usize,
    h: usize,
}

impl P32 {
    fn from_frame(f: &Frame) -> Self {
        P32 { v: f.luma.iter().map(|&x| x as f32).collect(), w: f.width, h: f.height }
    }
}

#[inline]
fn clampi(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Per-pixel quadratic coefficients, 5 per pixel: bx, by, cxx, cyy, cxy.
struct PolyExpansion {
    data: Vec<f32>,
    w: usize,
    h: usize,
}

fn poly_expansion(img: &P32, poly_n: usize, sigma: f64) -> PolyExpansion {
    let half = (poly_n - 1) / 2;
    let taps = 2 * half + 1;
    let mut g = vec![0.0f64; taps];
    for k in 0..taps {
        let x = k as f64 - half as f64;
        g[k] = (-x * x / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = g.iter().sum();
    for t in g.iter_mut() {
        *t /= sum;
    }
    let mut m2 = 0.0f64;
    let mut m4 = 0.0f64;
    for k in 0..taps {
        let x = k as f64 - half as f64;
        m2 += g[k] * x * x;
        m4 += g[k] * x * x * x * x;
    }
    let ig11 = (1.0 / m2) as f32;
    let igxy = (1.0 / (m2 * m2)) as f32;
    let ig_a = (1.0 / (m4 - m2 * m2)) as f32;
    let m2f = m2 as f32;

    let g32: Vec<f32> = g.iter().map(|&x| x as f32).collect();
    let xg: Vec<f32> = g32.iter().enumerate().map(|(k, &v)| (k as f32 - half as f32) * v).collect();
    let xxg: Vec<f32> =
        g32.iter().enumerate().map(|(k, &v)| (k as f32 - half as f32).powi(2) * v).collect();

    let (w, h) = (img.w, img.h);
    // Vertical pass: plain, first and second vertical moments.
    let mut t0 = vec![0.0f32; w * h];
    let mut t1 = vec![0.0f32; w * h];
    let mut t2 = vec![0.0f32; w * h];
    for r in 0..h {
        for k in 0..taps {
            let src = clampi(r as isize + k as isize - half as isize, h);
            let row = &img.v[src * w..(src + 1) * w];
            let (gk, xk, xxk) = (g32[k], xg[k], xxg[k]);
            let o0 = &mut t0[r * w..(r + 1) * w];
            for c in 0..w {
                o0[c] += gk * row[c];
            }
            let o1 = &mut t1[r * w..(r + 1) * w];
            for c in 0..w {
                o1[c] += xk * row[c];
            }
            let o2 = &mut t2[r * w..(r + 1) * w];
            for c in 0..w {
                o2[c] += xxk * row[c];
            }
        }
    }
    // Horizontal pass and coefficient solve.
    let mut data = vec![0.0f32; w * h * 5];
    for r in 0..h {
        let r0 = &t0[r * w..(r + 1) * w];
        let r1 = &t1[r * w..(r + 1) * w];
        let r2 = &t2[r * w..(r + 1) * w];
        for c in 0..w {
            let (mut s1, mut sx, mut sxx, mut sy, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for k in 0..taps {
                let src = clampi(c as isize + k as isize - half as isize, w);
                s1 += g32[k] * r0[src];
                sx += xg[k] * r0[src];
                sxx += xxg[k] * r0[src];
                sy += g32[k] * r1[src];
                sxy += xg[k] * r1[src];
                syy += g32[k] * r2[src];
            }
            let o = (r * w + c) * 5;
            data[o] = sx * ig11;
            data[o + 1] = sy * ig11;
            data[o + 2] = (sxx - m2f * s1) * ig_a;
            data[o + 3] = (syy - m2f * s1) * ig_a;
            data[o + 4] = sxy * igxy;
        }
    }
    PolyExpansion { data, w, h }
}

/// Linear system per pixel: m11, m12, m22, h1, h2.
#[allow(clippy::too_many_arguments)]
fn update_matrices(
    r1: &PolyExpansion,
    r2: &PolyExpansion,
    u: &[f32],
    v: &[f32],
    m: &mut [Vec<f32>; 5],
) {
    let (w, h) = (r1.w, r1.h);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let (dx, dy) = (u[i], v[i]);
            let fx = (col as f32 + dx).clamp(0.0, (w - 1) as f32);
            let fy = (row as f32 + dy).clamp(0.0, (h - 1) as f32);
            let x0 = (fx as usize).min(w.saturating_sub(2));
            let y0 = (fy as usize).min(h.saturating_sub(2));
            let tx = fx - x0 as f32;
            let ty = fy - y0 as f32;
            let w00 = (1.0 - tx) * (1.0 - ty);
            let w01 = tx * (1.0 - ty);
            let w10 = (1.0 - tx) * ty;
            let w11 = tx * ty;
            let p00 = (y0 * w + x0) * 5;
            let p01 = p00 + 5;
            let p10 = p00 + w * 5;
            let p11 = p10 + 5;
            let mut c2 = [0.0f32; 5];
            for ch in 0..5 {
                c2[ch] = w00 * r2.data[p00 + ch]
                    + w01 * r2.data[p01 + ch]
                    + w10 * r2.data[p10 + ch]
                    + w11 * r2.data[p11 + ch];
            }
            let p1 = i * 5;
            let axx = 0.5 * (r1.data[p1 + 2] + c2[2]);
            let ayy = 0.5 * (r1.data[p1 + 3] + c2[3]);
            let axy = 0.25 * (r1.data[p1 + 4] + c2[4]);
            let dbx = 0.5 * (r1.data[p1] - c2[0]) + axx * dx + axy * dy;
            let dby = 0.5 * (r1.data[p1 + 1] - c2[1]) + axy * dx + ayy * dy;
            m[0][i] = axx * axx + axy * axy;
            m[1][i] = axy * (axx + ayy);
            m[2][i] = axy * axy + ayy * ayy;
            m[3][i] = axx * dbx + axy * dby;
            m[4][i] = axy * dbx + ayy * dby;
        }
    }
}

/// Normalized box blur with edge-replicated borders, O(1) per pixel.
fn box_blur(src: &mut Vec<f32>, w: usize, h: usize, radius: usize, scratch: &mut Vec<f32>) {
    let taps = (2 * radius + 1) as f32;
    scratch.resize(w * h, 0.0);
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        let out = &mut scratch[r * w..(r + 1) * w];
        let mut sum = 0.0f32;
        for k in -(radius as isize)..=(radius as isize) {
            sum += row[clampi(k, w)];
        }
        out[0] = sum / taps;
        for c in 1..w {
            sum += row[clampi(c as isize + radius as isize, w)];
            sum -= row[clampi(c as isize - 1 - radius as isize, w)];
            out[c] = sum / taps;
        }
    }
    for c in 0..w {
        let mut sum = 0.0f32;
        for k in -(radius as isize)..=(radius as isize) {
            sum += scratch[clampi(k, h) * w + c];
        }
        src[c] = sum / taps;
        for r in 1..h {
            sum += scratch[clampi(r as isize + radius as isize, h) * w + c];
            sum -= scratch[clampi(r as isize - 1 - radius as isize, h) * w + c];
            src[r * w + c] = sum / taps;
        }
    }
}

/// 5x5 Gaussian (sigma 1) low pass and 2:1 decimation, clamp borders.
fn pyr_down(img: &P32) -> P32 {
    let k: [f32; 5] = {
        let mut k = [0.0f32; 5];
        let mut sum = 0.0;
        for (i, item) in k.iter_mut().enumerate() {
            let x = i as f32 - 2.0;
            *item = (-x * x / 2.0).exp();
            sum += *item;
        }
        for item in &mut k {
            *item /= sum;
        }
        k
    };
    let (w, h) = (img.w, img.h);
    let mut tmp = vec![0.0f32; w * h];
    for r in 0..h {
        let row = &img.v[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in k.iter().enumerate() {
                acc += kv * row[clampi(c as isize + ki as isize - 2, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0f32; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (ki, &kv) in k.iter().enumerate() {
                acc += kv * tmp[clampi(2 * r as isize + ki as isize - 2, h) * w + 2 * c];
            }
            out[r * ow + c] = acc;
        }
    }
    P32 { v: out, w: ow, h: oh }
}

/// Bilinear upsample of one displacement plane, rescaling magnitudes by the
/// per-axis size ratio.
fn upsample_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize, scale: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; dw * dh];
    let fx = sw as f32 / dw as f32;
    let fy = sh as f32 / dh as f32;
    for r in 0..dh {
        let sy = ((r as f32 + 0.5) * fy - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = (sy as usize).min(sh.saturating_sub(2));
        let ty = sy - y0 as f32;
        for c in 0..dw {
            let sx = ((c as f32 + 0.5) * fx - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = (sx as usize).min(sw.saturating_sub(2));
            let tx = sx - x0 as f32;
            let v00 = src[y0 * sw + x0];
            let v01 = src[y0 * sw + x0 + 1];
            let v10 = src[(y0 + 1) * sw + x0];
            let v11 = src[(y0 + 1) * sw + x0 + 1];
            out[r * dw + c] =
                scale * ((1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11));
        }
    }
    out
}

fn farneback(prev: &P32, next: &P32, params: &FlowParams) -> (Vec<f32>, Vec<f32>) {
    let min_dim = 4 * params.poly_n;
    let mut levels = params.pyramid_levels.max(1);
    while levels > 1 && (prev.w.min(prev.h) >> (levels - 1)) < min_dim {
        levels -= 1;
    }
    let mut pyr_prev = vec![P32 { v: prev.v.clone(), w: prev.w, h: prev.h }];
    let mut pyr_next = vec![P32 { v: next.v.clone(), w: next.w, h: next.h }];
    for l in 1..levels {
        pyr_prev.push(pyr_down(&pyr_prev[l - 1]));
        pyr_next.push(pyr_down(&pyr_next[l - 1]));
    }

    let radius = params.win_size / 2;
    let mut u: Vec<f32> = Vec::new();
    let mut v: Vec<f32> = Vec::new();
    let mut scratch = Vec::new();
    for level in (0..levels).rev() {
        let (w, h) = (pyr_prev[level].w, pyr_prev[level].h);
        if level == levels - 1 {
            u = vec![0.0f32; w * h];
            v = vec![0.0f32; w * h];
        } else {
            let (sw, sh) = (pyr_prev[level + 1].w, pyr_prev[level + 1].h);
            u = upsample_plane(&u, sw, sh, w, h, w as f32 / sw as f32);
            v = upsample_plane(&v, sw, sh, w, h, h as f32 / sh as f32);
        }
        let r1 = poly_expansion(&pyr_prev[level], params.poly_n, params.poly_sigma);
        let r2 = poly_expansion(&pyr_next[level], params.poly_n, params.poly_sigma);
        let mut m: [Vec<f32>; 5] = std::array::from_fn(|_| vec![0.0f32; w * h]);
        for _ in 0..params.iterations {
            update_matrices(&r1, &r2, &u, &v, &mut m);
            for plane in m.iter_mut() {
                box_blur(plane, w, h, radius, &mut scratch);
            }
            for i in 0..w * h {
                let det = m[0][i] * m[2][i] - m[1][i] * m[1][i];
                if det.abs() > 1e-9 {
                    u[i] = (m[2][i] * m[3][i] - m[1][i] * m[4][i]) / det;
                    v[i] = (m[0][i] * m[4][i] - m[1][i] * m[3][i]) / det;
                }
            }
        }
    }
    (u, v)
}
