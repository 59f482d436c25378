//! Parametric fits to chip-frame statistics.
//!
//! First-order samples are modeled with a generalized Gaussian distribution
//! (GGD) and the four orientations of pairwise products with an asymmetric
//! generalized Gaussian (AGGD). Shape parameters come from moment matching
//! against a precomputed gamma-ratio grid, which makes the fits fast and
//! fully deterministic.

use std::sync::OnceLock;

use statrs::function::gamma::{gamma, ln_gamma};
use thiserror::Error;

use crate::chips::ChipFrame;
use crate::spatialops::{Field, FieldKind, Plane};

/// Shape grid shared by the GGD and AGGD estimators.
pub const SHAPE_GRID_MIN: f64 = 0.05;
pub const SHAPE_GRID_MAX: f64 = 10.0;
pub const SHAPE_GRID_STEP: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NvsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("one-sided input: {negative} negative / {nonnegative} nonnegative samples")]
    OneSidedInput { negative: usize, nonnegative: usize },
    #[error("frame too small for paired products: {width}x{height}")]
    FrameTooSmall { width: usize, height: usize },
}

/// Generalized Gaussian parameters: shape and distribution variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgdParams {
    pub alpha: f64,
    pub sigma_sq: f64,
}

/// Asymmetric generalized Gaussian parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggdParams {
    pub eta: f64,
    pub nu: f64,
    pub sigma_l_sq: f64,
    pub sigma_r_sq: f64,
}

/// Pairwise products of a chip frame along four orientations.
#[derive(Debug, Clone)]
pub struct PairedProducts {
    pub h: Field,
    pub v: Field,
    pub d1: Field,
    pub d2: Field,
}

/// `gamma(2/x)^2 / (gamma(1/x) * gamma(3/x))`, evaluated in log space.
fn gamma_ratio(x: f64) -> f64 {
    (2.0 * ln_gamma(2.0 / x) - ln_gamma(1.0 / x) - ln_gamma(3.0 / x)).exp()
}

fn ratio_grid() -> &'static Vec<f64> {
    static GRID: OnceLock<Vec<f64>> = OnceLock::new();
    GRID.get_or_init(|| {
        let n = ((SHAPE_GRID_MAX - SHAPE_GRID_MIN) / SHAPE_GRID_STEP).round() as usize + 1;
        (0..n).map(|i| gamma_ratio(SHAPE_GRID_MIN + SHAPE_GRID_STEP * i as f64)).collect()
    })
}

/// Grid argmin of |ratio(shape) - target|; ties break toward smaller shape.
fn match_shape(target: f64) -> f64 {
    let grid = ratio_grid();
    let mut best = 0usize;
    let mut best_err = f64::INFINITY;
    for (i, &r) in grid.iter().enumerate() {
        let err = (r - target).abs();
        if err < best_err {
            best_err = err;
            best = i;
        }
    }
    SHAPE_GRID_MIN + SHAPE_GRID_STEP * best as f64
}

/// Exact gamma function, re-exported for fit oracles and sanity checks.
pub fn gamma_fn(x: f64) -> f64 {
    gamma(x)
}

/// Moment-matching GGD fit: shape from the grid, variance as mean(x^2).
pub fn fit_ggd(samples: &[f64]) -> Result<GgdParams, NvsError> {
    if samples.len() < 100 {
        return Err(NvsError::DegenerateInput(format!("{} samples, need at least 100", samples.len())));
    }
    let n = samples.len() as f64;
    let mean_abs = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_sq = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = mean_sq - mean * mean;
    if variance <= 1e-12 {
        return Err(NvsError::DegenerateInput("sample variance below 1e-12".into()));
    }
    let target = mean_abs * mean_abs / mean_sq;
    Ok(GgdParams { alpha: match_shape(target), sigma_sq: mean_sq })
}

/// Moment-matching AGGD fit on one-sided second moments.
pub fn fit_aggd(samples: &[f64]) -> Result<AggdParams, NvsError> {
    if samples.len() < 100 {
        return Err(NvsError::DegenerateInput(format!("{} samples, need at least 100", samples.len())));
    }
    let mut neg_count = 0usize;
    let mut neg_sq = 0.0f64;
    let mut pos_count = 0usize;
    let mut pos_sq = 0.0f64;
    let mut abs_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    for &x in samples {
        abs_sum += x.abs();
        sq_sum += x * x;
        if x < 0.0 {
            neg_count += 1;
            neg_sq += x * x;
        } else {
            pos_count += 1;
            pos_sq += x * x;
        }
    }
    if neg_count < 10 || pos_count < 10 {
        return Err(NvsError::OneSidedInput { negative: neg_count, nonnegative: pos_count });
    }
    let n = samples.len() as f64;
    if sq_sum / n <= 1e-12 {
        return Err(NvsError::DegenerateInput("sample variance below 1e-12".into()));
    }
    let sigma_l_sq = neg_sq / neg_count as f64;
    let sigma_r_sq = pos_sq / pos_count as f64;
    if sigma_l_sq <= 0.0 || sigma_r_sq <= 0.0 {
        return Err(NvsError::DegenerateInput("one-sided second moment vanished".into()));
    }
    let gamma_hat = (sigma_l_sq / sigma_r_sq).sqrt();
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let big_r = r_hat * (gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0)
        / (gamma_hat * gamma_hat + 1.0).powi(2);
    let nu = match_shape(big_r);
    let beta_scale = (gamma(1.0 / nu) / gamma(3.0 / nu)).sqrt();
    let beta_l = sigma_l_sq.sqrt() * beta_scale;
    let beta_r = sigma_r_sq.sqrt() * beta_scale;
    let eta = (beta_r - beta_l) * gamma(2.0 / nu) / gamma(1.0 / nu);
    Ok(AggdParams { eta, nu, sigma_l_sq, sigma_r_sq })
}

/// Products of horizontally, vertically, and diagonally adjacent samples.
///
/// `H(i,j) = S(i,j)S(i,j+1)`, `V(i,j) = S(i,j)S(i+1,j)`,
/// `D1(i,j) = S(i,j)S(i+1,j+1)`, and `D2`, defined for j >= 1 as
/// `S(i,j)S(i+1,j-1)`, stored from its first valid column.
pub fn paired_products(s: &impl Plane) -> Result<PairedProducts, NvsError> {
    let (w, h) = (s.width(), s.height());
    if w < 2 || h < 2 {
        return Err(NvsError::FrameTooSmall { width: w, height: h });
    }
    let mut hv = Vec::with_capacity(h * (w - 1));
    let mut vv = Vec::with_capacity((h - 1) * w);
    let mut d1 = Vec::with_capacity((h - 1) * (w - 1));
    let mut d2 = Vec::with_capacity((h - 1) * (w - 1));
    for r in 0..h {
        for c in 0..w - 1 {
            hv.push(s.at(r, c) * s.at(r, c + 1));
        }
    }
    for r in 0..h - 1 {
        for c in 0..w {
            vv.push(s.at(r, c) * s.at(r + 1, c));
        }
        for c in 0..w - 1 {
            d1.push(s.at(r, c) * s.at(r + 1, c + 1));
        }
        for c in 1..w {
            d2.push(s.at(r, c) * s.at(r + 1, c - 1));
        }
    }
    Ok(PairedProducts {
        h: Field::new(hv, w - 1, h, FieldKind::PairedProduct),
        v: Field::new(vv, w, h - 1, FieldKind::PairedProduct),
        d1: Field::new(d1, w - 1, h - 1, FieldKind::PairedProduct),
        d2: Field::new(d2, w - 1, h - 1, FieldKind::PairedProduct),
    })
}

/// Fallback parameters used when a sub-fit degenerates (for example on black
/// frames); keeps the feature vector fixed-length without aborting a batch.
pub const GGD_FALLBACK: GgdParams = GgdParams { alpha: 2.0, sigma_sq: 0.0 };
pub const AGGD_FALLBACK: AggdParams =
    AggdParams { eta: 0.0, nu: 2.0, sigma_l_sq: 0.0, sigma_r_sq: 0.0 };

fn ggd_or_fallback(samples: &[f64], degenerate: &mut bool) -> GgdParams {
    fit_ggd(samples).unwrap_or_else(|_| {
        *degenerate = true;
        GGD_FALLBACK
    })
}

fn aggd_or_fallback(samples: &[f64], degenerate: &mut bool) -> AggdParams {
    fit_aggd(samples).unwrap_or_else(|_| {
        *degenerate = true;
        AGGD_FALLBACK
    })
}

/// The 36-feature block for one chip domain at two scales:
/// GGD (alpha, sigma^2) per scale, then per scale the AGGD
/// (eta, nu, sigma_l^2, sigma_r^2) of H, V, D1, D2.
pub fn domain_features(s_scale1: &ChipFrame, s_scale2: &ChipFrame) -> (Vec<f64>, bool) {
    let mut degenerate = false;
    let mut out = Vec::with_capacity(36);
    for s in [s_scale1, s_scale2] {
        let g = ggd_or_fallback(s.values(), &mut degenerate);
        out.push(g.alpha);
        out.push(g.sigma_sq);
    }
    for s in [s_scale1, s_scale2] {
        match paired_products(s) {
            Ok(p) => {
                for field in [&p.h, &p.v, &p.d1, &p.d2] {
                    let a = aggd_or_fallback(&field.values, &mut degenerate);
                    out.extend_from_slice(&[a.eta, a.nu, a.sigma_l_sq, a.sigma_r_sq]);
                }
            }
            Err(_) => {
                degenerate = true;
                for _ in 0..4 {
                    out.extend_from_slice(&[
                        AGGD_FALLBACK.eta,
                        AGGD_FALLBACK.nu,
                        AGGD_FALLBACK.sigma_l_sq,
                        AGGD_FALLBACK.sigma_r_sq,
                    ]);
                }
            }
        }
    }
    debug_assert_eq!(out.len(), 36);
    (out, degenerate)
}
