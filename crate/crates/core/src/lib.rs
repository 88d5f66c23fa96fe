//! Type-conditioned convolutional VAE for re-rendering creature sprites.
//!
//! The crate covers the whole offline pipeline: sprite ingestion and
//! augmentation ([`dataset`]), colour-based type labelling of a transfer
//! source set ([`typeassign`]), the model and its loss ([`model`]), staged
//! training with checkpoints ([`training`]) and evaluation ([`eval`]).

pub mod color;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod optim;
pub mod raster;
pub mod resize;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod typeassign;
pub mod types;

pub use color::HsvImage;
pub use raster::{Raster, SIDE};
pub use types::{CreatureType, TypeVector, NUM_TYPES};
