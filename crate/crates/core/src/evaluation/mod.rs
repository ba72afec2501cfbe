//! Retrieval database, ranking metrics and the north-noise sweep.

pub mod geo;
pub mod index;
pub mod retrieval;
pub mod sweep;

pub use geo::{haversine, EARTH_RADIUS_M};
pub use index::EmbeddingIndex;
pub use retrieval::{
    k_top_one_percent, localization_recall, recall_at_k, top_k, top_k_batch, RecallReport,
    DEFAULT_KS, LOCALIZATION_RADIUS_M,
};
pub use sweep::{embed_pairs, north_noise_sweep, NoiseLevelResult, NoiseSweepReport, DEFAULT_LEVELS};
