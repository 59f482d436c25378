//! Space-time chips: line cuts through the MSCN volume, perpendicular to
//! local median motion, tiled into one aggregate frame per time instant.
//!
//! A chip is an R x T' sample array: R points along a spatial line (the same
//! line in every frame of the window) by T' time steps. Chips from all
//! complete patches tile into the chip frame S_T, row index advancing with
//! the spatial coordinate along the line and column index with time.

use thiserror::Error;

use crate::flow::PatchFlowGrid;
use crate::spatialops::{Field, Plane};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChipError {
    #[error("insufficient history: have {have} fields, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("chip spatial extent must be odd, got {0}")]
    EvenChipExtent(usize),
}

/// Chip extent in space (R) and time (T'). The two are equal by default;
/// unequal values are allowed only for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChipGeometry {
    pub t_prime: usize,
    pub r: usize,
}

impl ChipGeometry {
    pub fn standard() -> Self {
        ChipGeometry { t_prime: 5, r: 5 }
    }

    pub fn new(t_prime: usize, r: usize) -> Result<Self, ChipError> {
        if r % 2 == 0 {
            return Err(ChipError::EvenChipExtent(r));
        }
        Ok(ChipGeometry { t_prime, r })
    }
}

/// One extracted chip plus the line direction that produced it.
#[derive(Debug, Clone)]
pub struct Chip {
    /// Row-major R x T' samples: `samples[k * t_prime + t]`.
    pub samples: Vec<f64>,
    pub r: usize,
    pub t_prime: usize,
    pub patch_row: usize,
    pub patch_col: usize,
    /// Unit direction of the sampling line, angle normalized to [0, pi).
    pub direction: [f64; 2],
}

/// The tiled aggregation of all chips at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipFrame {
    pub values: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub time_index: usize,
}

impl Plane for ChipFrame {
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

#[inline]
fn round_half_away(v: f64) -> f64 {
    // f64::round rounds half away from zero.
    v.round()
}

/// Unit direction perpendicular to `flow`, with the sign fixed so the angle
/// lies in [0, pi); degenerate flow maps to (1, 0).
pub fn perpendicular_direction(flow_u: f64, flow_v: f64) -> [f64; 2] {
    let norm = (flow_u * flow_u + flow_v * flow_v).sqrt();
    if norm < 1e-6 {
        return [1.0, 0.0];
    }
    let mut dx = -flow_v / norm;
    let mut dy = flow_u / norm;
    if dy < 0.0 || (dy == 0.0 && dx < 0.0) {
        dx = -dx;
        dy = -dy;
    }
    [dx, dy]
}

/// R integer (x, y) sample positions on the line through `center`
/// perpendicular to `median_flow`, rounded half away from zero and clamped
/// to the frame bounds (duplicate boundary samples are allowed).
pub fn perpendicular_line(
    median_flow: (f64, f64),
    center: (f64, f64),
    r: usize,
    bounds: (usize, usize),
) -> Vec<(usize, usize)> {
    let [dx, dy] = perpendicular_direction(median_flow.0, median_flow.1);
    let (w, h) = bounds;
    let half = (r as f64 - 1.0) / 2.0;
    (0..r)
        .map(|k| {
            let t = k as f64 - half;
            let x = round_half_away(center.0 + t * dx);
            let y = round_half_away(center.1 + t * dy);
            (
                (x.max(0.0) as usize).min(w - 1),
                (y.max(0.0) as usize).min(h - 1),
            )
        })
        .collect()
}

/// Gather the chip for one patch: the same line sampled in each of the T'
/// fields of the window (oldest first).
pub fn extract_chip(
    volume: &[&Field],
    geometry: ChipGeometry,
    patch: (usize, usize),
    line: &[(usize, usize)],
) -> Result<Chip, ChipError> {
    if volume.len() < geometry.t_prime {
        return Err(ChipError::InsufficientHistory { have: volume.len(), need: geometry.t_prime });
    }
    let volume = &volume[volume.len() - geometry.t_prime..];
    let (w, h) = (volume[0].width, volume[0].height);
    for f in volume {
        if f.width != w || f.height != h {
            return Err(ChipError::DimensionMismatch("volume fields differ in size".into()));
        }
    }
    if line.len() != geometry.r {
        return Err(ChipError::DimensionMismatch(format!(
            "line has {} points, chip expects {}",
            line.len(),
            geometry.r
        )));
    }
    let mut samples = Vec::with_capacity(geometry.r * geometry.t_prime);
    for &(x, y) in line {
        if x >= w || y >= h {
            return Err(ChipError::DimensionMismatch(format!("line point ({x},{y}) outside {w}x{h}")));
        }
        for f in volume {
            samples.push(f.at(y, x));
        }
    }
    Ok(Chip {
        samples,
        r: geometry.r,
        t_prime: geometry.t_prime,
        patch_row: patch.0,
        patch_col: patch.1,
        direction: [0.0, 0.0],
    })
}

/// Tile dimensions of the aggregate chip frame for a source of `w` x `h`.
pub fn chip_frame_dims(geometry: ChipGeometry, width: usize, height: usize) -> (usize, usize) {
    let rows = height / geometry.r;
    let cols = width / geometry.r;
    (cols * geometry.t_prime, rows * geometry.r)
}

/// Cut and tile all chips for one time instant.
///
/// `volume` holds the last T' MSCN fields (oldest first) and `grid` the
/// per-patch median flow at the final instant. Each patch's chip occupies
/// the R x T' tile at (patch_row * R, patch_col * T').
pub fn aggregate_chips(
    volume: &[&Field],
    grid: &PatchFlowGrid,
    geometry: ChipGeometry,
    time_index: usize,
) -> Result<ChipFrame, ChipError> {
    if volume.len() < geometry.t_prime {
        return Err(ChipError::InsufficientHistory { have: volume.len(), need: geometry.t_prime });
    }
    let volume = &volume[volume.len() - geometry.t_prime..];
    let (w, h) = (volume[0].width, volume[0].height);
    if grid.patch_size != geometry.r {
        return Err(ChipError::DimensionMismatch(format!(
            "grid patch size {} differs from chip extent {}",
            grid.patch_size, geometry.r
        )));
    }
    let patch_rows = h / geometry.r;
    let patch_cols = w / geometry.r;
    if grid.rows < patch_rows || grid.cols < patch_cols {
        return Err(ChipError::DimensionMismatch(format!(
            "flow grid {}x{} smaller than patch grid {}x{}",
            grid.rows, grid.cols, patch_rows, patch_cols
        )));
    }
    let (out_w, out_h) = chip_frame_dims(geometry, w, h);
    let mut values = vec![0.0f64; out_w * out_h];
    let half = (geometry.r - 1) / 2;
    for pr in 0..patch_rows {
        for pc in 0..patch_cols {
            let center_x = (pc * geometry.r + half) as f64;
            let center_y = (pr * geometry.r + half) as f64;
            let flow = grid.at(pr, pc);
            let line = perpendicular_line((flow.0 as f64, flow.1 as f64), (center_x, center_y), geometry.r, (w, h));
            let chip = extract_chip(volume, geometry, (pr, pc), &line)?;
            for k in 0..geometry.r {
                for t in 0..geometry.t_prime {
                    values[(pr * geometry.r + k) * out_w + pc * geometry.t_prime + t] =
                        chip.samples[k * geometry.t_prime + t];
                }
            }
        }
    }
    Ok(ChipFrame { values, width: out_w, height: out_h, time_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatialops::FieldKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: Vec<f64>, w: usize, h: usize) -> Field {
        Field::new(values, w, h, FieldKind::Mscn)
    }

    fn uniform_grid(u: f32, v: f32, rows: usize, cols: usize, r: usize) -> PatchFlowGrid {
        PatchFlowGrid {
            med_u: vec![u; rows * cols],
            med_v: vec![v; rows * cols],
            rows,
            cols,
            patch_size: r,
        }
    }

    #[test]
    fn horizontal_flow_gives_vertical_line() {
        let line = perpendicular_line((1.0, 0.0), (10.0, 10.0), 5, (32, 32));
        assert_eq!(line, vec![(10, 8), (10, 9), (10, 10), (10, 11), (10, 12)]);
    }

    #[test]
    fn vertical_flow_gives_horizontal_line() {
        let line = perpendicular_line((0.0, 1.0), (10.0, 10.0), 5, (32, 32));
        assert_eq!(line, vec![(8, 10), (9, 10), (10, 10), (11, 10), (12, 10)]);
    }

    #[test]
    fn diagonal_flow_follows_the_stated_rounding() {
        // Oracle: evaluate p_k = center + (k-2) * d with d = (-1,1)/sqrt(2)
        // and round each coordinate half away from zero.
        let inv = 1.0 / 2.0f64.sqrt();
        let expected: Vec<(usize, usize)> = (0..5)
            .map(|k| {
                let t = k as f64 - 2.0;
                (
                    (10.0 - t * inv).round() as usize,
                    (10.0 + t * inv).round() as usize,
                )
            })
            .collect();
        let line = perpendicular_line((1.0, 1.0), (10.0, 10.0), 5, (32, 32));
        assert_eq!(line, expected);
    }

    #[test]
    fn flow_sign_does_not_change_the_line() {
        for (u, v) in [(1.5, -0.3), (0.0, 2.0), (-1.0, -1.0), (0.7, 0.0)] {
            let a = perpendicular_line((u, v), (12.0, 12.0), 5, (25, 25));
            let b = perpendicular_line((-u, -v), (12.0, 12.0), 5, (25, 25));
            assert_eq!(a, b, "flow ({u},{v})");
        }
    }

    #[test]
    fn degenerate_flow_defaults_to_horizontal_direction() {
        assert_eq!(perpendicular_direction(0.0, 0.0), [1.0, 0.0]);
        assert_eq!(perpendicular_direction(1e-9, -1e-9), [1.0, 0.0]);
        let line = perpendicular_line((0.0, 0.0), (2.0, 2.0), 5, (25, 25));
        assert_eq!(line, vec![(0, 2), (1, 2), (2, 2), (3, 2), (4, 2)]);
    }

    #[test]
    fn line_points_clamp_to_bounds() {
        let line = perpendicular_line((1.0, 0.0), (2.0, 1.0), 5, (25, 25));
        assert_eq!(line, vec![(2, 0), (2, 0), (2, 1), (2, 2), (2, 3)]);
    }

    #[test]
    fn chip_columns_track_constant_fields() {
        let geometry = ChipGeometry::standard();
        let fields: Vec<Field> = (0..5).map(|t| field(vec![t as f64; 100], 10, 10)).collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let line = perpendicular_line((1.0, 0.0), (4.0, 4.0), 5, (10, 10));
        let chip = extract_chip(&refs, geometry, (0, 0), &line).unwrap();
        for k in 0..5 {
            for t in 0..5 {
                assert_eq!(chip.samples[k * 5 + t], t as f64);
            }
        }
    }

    #[test]
    fn chip_matches_pointwise_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let geometry = ChipGeometry::standard();
        let fields: Vec<Field> = (0..5)
            .map(|_| field((0..144).map(|_| rng.random_range(-1.0..1.0)).collect(), 12, 12))
            .collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let line = perpendicular_line((0.6, -1.2), (6.0, 6.0), 5, (12, 12));
        let chip = extract_chip(&refs, geometry, (1, 1), &line).unwrap();
        for (k, &(x, y)) in line.iter().enumerate() {
            for t in 0..5 {
                assert_eq!(chip.samples[k * 5 + t], fields[t].at(y, x));
            }
        }
    }

    #[test]
    fn insufficient_history_is_reported() {
        let geometry = ChipGeometry::standard();
        let fields: Vec<Field> = (0..3).map(|_| field(vec![0.0; 100], 10, 10)).collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let line = perpendicular_line((1.0, 0.0), (4.0, 4.0), 5, (10, 10));
        match extract_chip(&refs, geometry, (0, 0), &line) {
            Err(ChipError::InsufficientHistory { have: 3, need: 5 }) => {}
            other => panic!("expected InsufficientHistory, got {other:?}"),
        }
    }

    #[test]
    fn aggregate_dims_follow_floor_tiling() {
        let geometry = ChipGeometry::standard();
        let fields: Vec<Field> = (0..5).map(|_| field(vec![1.0; 13 * 17], 17, 13)).collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let grid = uniform_grid(0.0, 0.0, 13 / 5, 17 / 5, 5);
        let s = aggregate_chips(&refs, &grid, geometry, 4).unwrap();
        assert_eq!((s.width, s.height), (15, 10));

        let fields: Vec<Field> = (0..5).map(|_| field(vec![1.0; 100], 10, 10)).collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let s = aggregate_chips(&refs, &uniform_grid(0.0, 0.0, 2, 2, 5), geometry, 4).unwrap();
        assert_eq!((s.width, s.height), (10, 10));
    }

    /// Naive reimplementation used as the geometry oracle.
    fn aggregate_naive(fields: &[Field], grid: &PatchFlowGrid, geometry: ChipGeometry) -> Vec<f64> {
        let (w, h) = (fields[0].width, fields[0].height);
        let (out_w, out_h) = chip_frame_dims(geometry, w, h);
        let mut out = vec![0.0; out_w * out_h];
        let half = (geometry.r - 1) / 2;
        for pr in 0..h / geometry.r {
            for pc in 0..w / geometry.r {
                let (u, v) = grid.at(pr, pc);
                let dir = perpendicular_direction(u as f64, v as f64);
                for k in 0..geometry.r {
                    let t_off = k as f64 - half as f64;
                    let x = ((pc * geometry.r + half) as f64 + t_off * dir[0]).round().max(0.0) as usize;
                    let y = ((pr * geometry.r + half) as f64 + t_off * dir[1]).round().max(0.0) as usize;
                    let (x, y) = (x.min(w - 1), y.min(h - 1));
                    for t in 0..geometry.t_prime {
                        out[(pr * geometry.r + k) * out_w + pc * geometry.t_prime + t] = fields[t].at(y, x);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn aggregate_matches_naive_gather_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let geometry = ChipGeometry::standard();
        for _ in 0..20 {
            let fields: Vec<Field> = (0..5)
                .map(|_| field((0..625).map(|_| rng.random_range(-2.0..2.0)).collect(), 25, 25))
                .collect();
            let grid = PatchFlowGrid {
                med_u: (0..25).map(|_| rng.random_range(-3.0..3.0)).collect(),
                med_v: (0..25).map(|_| rng.random_range(-3.0..3.0)).collect(),
                rows: 5,
                cols: 5,
                patch_size: 5,
            };
            let refs: Vec<&Field> = fields.iter().collect();
            let s = aggregate_chips(&refs, &grid, geometry, 4).unwrap();
            let naive = aggregate_naive(&fields, &grid, geometry);
            assert_eq!(s.values, naive);
        }
    }

    #[test]
    fn zero_flow_tiles_are_horizontal_temporal_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geometry = ChipGeometry::standard();
        let fields: Vec<Field> = (0..5)
            .map(|_| field((0..100).map(|_| rng.random_range(-1.0..1.0)).collect(), 10, 10))
            .collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let s = aggregate_chips(&refs, &uniform_grid(0.0, 0.0, 2, 2, 5), geometry, 4).unwrap();
        // Default direction (1,0): line spans x = patch columns at center row.
        for pr in 0..2 {
            for pc in 0..2 {
                for k in 0..5 {
                    for t in 0..5 {
                        let x = pc * 5 + k;
                        let y = pr * 5 + 2;
                        assert_eq!(s.values[(pr * 5 + k) * 10 + pc * 5 + t], fields[t].at(y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn translating_stripes_replicate_the_vertical_profile() {
        // Texture varying only vertically, moving horizontally: the MSCN-like
        // volume is constant over time, so every chip column repeats the
        // vertical profile sampled at the patch center column.
        let (w, h) = (20, 20);
        let profile: Vec<f64> = (0..h).map(|r| ((r as f64) * 0.7).sin()).collect();
        let make = || field((0..w * h).map(|i| profile[i / w]).collect(), w, h);
        let fields: Vec<Field> = (0..5).map(|_| make()).collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let geometry = ChipGeometry::standard();
        let grid = uniform_grid(1.5, 0.0, 4, 4, 5);
        let s = aggregate_chips(&refs, &grid, geometry, 4).unwrap();
        let mut err = 0.0;
        for pr in 0..4 {
            for pc in 0..4 {
                for k in 0..5 {
                    let expected = profile[pr * 5 + k];
                    for t in 0..5 {
                        err += (s.values[(pr * 5 + k) * s.width + pc * 5 + t] - expected).abs();
                    }
                }
            }
        }
        assert!(err / (s.values.len() as f64) < 1e-6);
    }

    #[test]
    fn tiling_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let geometry = ChipGeometry::standard();
        let fields: Vec<Field> = (0..5)
            .map(|_| field((0..225).map(|_| rng.random_range(-1.0..1.0)).collect(), 15, 15))
            .collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let grid = uniform_grid(0.4, -1.1, 3, 3, 5);
        let a = aggregate_chips(&refs, &grid, geometry, 4).unwrap();
        let b = aggregate_chips(&refs, &grid, geometry, 4).unwrap();
        assert_eq!(a.values, b.values);
    }
}
