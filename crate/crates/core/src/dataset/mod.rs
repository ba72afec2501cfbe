//! Paired cross-view data: manifest IO, image decoding, seeded batching and
//! the procedural synthetic world.

pub mod batch;
pub mod image;
pub mod manifest;
pub mod synth;

pub use self::batch::{BatchIterator, PairBatch, PairSet};
pub use self::image::{load_image, ImageBuffer};
pub use self::manifest::{load_manifest, parse_manifest, write_manifest, PairRecord, Split};
pub use self::synth::{generate_synthetic_world, Landmark, Location, SyntheticWorld, SyntheticWorldConfig};
