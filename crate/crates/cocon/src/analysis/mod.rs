//! Qualitative analysis over exported embeddings: similarity histograms,
//! cross-view class consistency, retrieval, temporal alignment, and a 2-d
//! projection for quick-look plots.

mod align;
mod consistency;
mod histograms;
mod pca;
mod retrieval;
mod store;

pub use align::{align_videos, AlignConfig, AlignmentMap};
pub use consistency::{class_consistency, ClassConsistency};
pub use histograms::{similarity_histograms, SimilarityHistograms};
pub use pca::project_2d;
pub use retrieval::{nearest_neighbors, Retrieval};
pub use store::{export_embeddings, EmbeddingRecord, EmbeddingStore};

#[cfg(test)]
mod tests;
