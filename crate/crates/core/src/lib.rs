//! Surrogate modeling pipeline for metal-insulator-metal metasurface
//! reflection spectra.
//!
//! A coupled-mode oracle maps a four-parameter unit-cell geometry
//! (disk height H, lattice pitch P, disk radius R, spacer thickness T,
//! all nm) to a 64-point complex S11 spectrum on 500..850 nm. A small
//! fully-connected residual network learns that map from a 9^4 grid
//! dataset, trained with an inherited k-fold schedule plus a fine-tune
//! stage, and the trained model powers parameter sweeps and inverse
//! design lookups.
//!
//! Everything is f64 and deterministic: one seed fixes init, the
//! train/test split and every batch order, so a rerun reproduces
//! checkpoints bit for bit on the same platform.

pub mod checkpoint;
pub mod data;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod sweeps;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta};
pub use data::{Dataset, GeometrySample, MetalKind, Spectrum};
pub use model::{ModelConfig, ModelParams};
pub use numeric::{DenseMatrix, Rng};
pub use optim::AdamState;
pub use sweeps::{SweepBackend, SweepRow, SweepSpec, VaryParam};
pub use training::{RunReport, TrainConfig};
