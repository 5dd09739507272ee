//! Sonar and biosonar echo simulation on triangle meshes.
//!
//! A scene mesh is repaired and its curvature turned into a per-face
//! reflection model. Specular rays and Monte-Carlo diffraction points then
//! produce per-receiver impulse responses, which can be filtered by fitted
//! array filter banks (one per ear) and convolved with an emitted call.
//!
//! Frames: the sensor looks along its local +X axis. Poses map sensor
//! coordinates to world coordinates.

pub mod config;
pub mod diffraction;
mod error;
pub mod ertf;
pub mod mesh;
pub mod output;
pub mod pipeline;
pub mod raytrace;
pub mod scan;
pub mod scene;
pub mod signals;
pub mod spectral;

pub use error::{Error, Result};

/// 3-vector in meters (positions) or unit directions.
pub type Vec3 = nalgebra::Vector3<f64>;
