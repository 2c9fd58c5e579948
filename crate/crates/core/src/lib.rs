//! Writer-identification pipeline toolkit.
//!
//! The library covers the whole chain from raw page scans to a retrieval
//! report:
//!
//! 1. **imaging** – grayscale rasters, resizing, Gaussian blur, dilation, PNG/PGM I/O.
//! 2. **binarize** – Otsu and Sauvola text masks, external mask import, F-measure scoring.
//! 3. **text_aoi** – dilation + connected components + area ranking to crop the
//!    text-dense region of a page.
//! 4. **sift** – scale-space keypoint detection and 128-d descriptors, also used
//!    as patch anchors.
//! 5. **sampling** – dataset manifests, random / keypoint-anchored patches,
//!    triplet sampling over writer labels.
//! 6. **embed** – the patch feature extractor: a small fully-connected network
//!    with explicit forward/backward, plus a binary feature-file format so
//!    externally computed features can be evaluated with the same tooling.
//! 7. **losses** – Euclidean triplet, cosine triplet with L2 regularization,
//!    and ArcFace, each with exact gradients.
//! 8. **train** – AdamW, the triplet training stage, the ArcFace fine-tuning
//!    stage, and byte-reproducible checkpoints.
//! 9. **aggregate_eval** – mean pooling, PCA, distance matrices, leave-one-out
//!    retrieval with Top-k / P@k / mAP.
//! 10. **synth** – a deterministic synthetic writer generator so every stage is
//!     testable without real manuscript data.
//!
//! Everything is seeded and deterministic: the same inputs and seeds produce
//! bit-identical keypoints, checkpoints and reports.

pub mod aggregate_eval;
pub mod binarize;
pub mod embed;
mod error;
pub mod imaging;
pub mod losses;
pub mod sampling;
pub mod sift;
pub mod synth;
pub mod text_aoi;
pub mod train;

pub use error::{Error, Result};
