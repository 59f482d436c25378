//! Quality-aware video features from space-time chips.
//!
//! The crate turns a decoded video into a 109-dimensional descriptor per time
//! instant: bandpass (MSCN) statistics of motion-perpendicular space-time
//! chips and of their gradient-domain counterpart, plus NIQE-style spatial
//! naturalness features. A small epsilon-SVR maps pooled descriptors to
//! quality scores, and `eval` implements the usual rank-correlation protocol
//! (content-separated splits, logistic-mapped LCC, one-sided t tests).
//!
//! Modules mirror the stages of the pipeline:
//!
//! * [`videoio`] — Y4M / raw planar YUV readers, luma-only frames.
//! * [`spatialops`] — local Gaussian moments, MSCN, Sobel gradients.
//! * [`flow`] — dense two-frame optical flow and per-patch median pooling.
//! * [`chips`] — cutting and tiling of space-time chips.
//! * [`nvs`] — GGD / AGGD moment-matching fits and the 36-feature block.
//! * [`niqe`] — spatial naturalness features and the pristine model.
//! * [`pipeline`] — streaming per-video extraction and pooling.
//! * [`model`] — epsilon-SVR (SMO solver), training and persistence.
//! * [`eval`] — SROCC/LCC, split protocol, statistical tests.
//! * [`distortlab`] — synthetic distortions and source synthesis for tests.

pub mod chips;
pub mod distortlab;
pub mod eval;
pub mod flow;
pub mod model;
pub mod niqe;
pub mod nvs;
pub mod pipeline;
pub mod spatialops;
pub mod videoio;
