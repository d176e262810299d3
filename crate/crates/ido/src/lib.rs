//! Discriminative-optimization point-cloud registration.
//!
//! Registers a scene cloud onto a fixed model cloud by iterating learned
//! linear maps over a histogram descriptor instead of descending a
//! handcrafted loss. The crate covers the whole pipeline:
//!
//! - [`lie`]: twist/rotation/rigid-transform conversions on SE(3);
//! - [`cloud`]: point-cloud I/O, downsampling, kd-tree queries, normals,
//!   spherical angles;
//! - [`descriptor`]: the model context and the Gaussian-voting histograms
//!   (original front/back and the extended six-block form);
//! - [`regressor`]: ridge solvers and map-sequence training;
//! - [`registrar`]: map-sequence inference plus an ICP baseline;
//! - [`perturb`]: seeded synthetic pair generation for training and
//!   benchmarking;
//! - [`bench`]: metrics, sweep campaigns, and CSV reporting;
//! - [`shape`]: a deterministic synthetic test shape.

pub mod bench;
pub mod cloud;
pub mod descriptor;
pub mod error;
pub mod lie;
pub mod perturb;
pub mod regressor;
pub mod registrar;
pub mod shape;

pub use error::{Error, Result};
