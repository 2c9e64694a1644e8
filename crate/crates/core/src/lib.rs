//! Instantaneous camera velocity from a motion-blur flow field and a depth map.
//!
//! The forward model ([`motion_field`]) maps a camera twist and per-pixel
//! depth to image-plane flow; [`solver`] inverts it by linear least squares
//! and differentiates the solution. [`blur`] and [`scene`] synthesize blurred
//! images with exact labels, [`disambiguation`] resolves the temporal sign of
//! the recovered motion, [`losses`] holds the training objectives and
//! [`eval`] the sequence-level metrics.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blur;
pub mod disambiguation;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod losses;
pub mod motion_field;
pub mod scene;
pub mod solver;
pub mod trajectory;
pub use error::{Error, Result};
