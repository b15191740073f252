//! Bird image retrieval with shape-context and color-moment bags of features.
//!
//! The pipeline per image is:
//!
//! 1. [`imaging`]: decode, convert to luminance, Canny edges, sample `n` boundary points.
//! 2. [`keypoints`]: Difference-of-Gaussian interest points.
//! 3. [`descriptors`]: a log-polar shape-context histogram at each keypoint over the sampled
//!    boundary, concatenated with the mean and variance of each color channel in a 5x5 window.
//! 4. [`vocabulary`]: k-means visual words over all fused descriptors.
//! 5. [`index`]: per-image bag-of-words histograms, L1 ranking.
//! 6. [`eval`]: precision / recall, PR curves and (k, n) grids.

pub mod config;
pub mod corpus;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod index;
pub mod keypoints;
pub mod synth;
pub mod vocabulary;

pub use config::PipelineParams;
pub use descriptors::{
    ColorMoments, DescriptorSet, DescriptorStatus, FusedDescriptor, ShapeContext,
    ShapeContextParams,
};
pub use error::{Error, Result};
pub use eval::{EvalReport, GridConfig, Variant};
pub use geometry::Point;
pub use imaging::{ContourSet, EdgeMap, GrayImage, RasterImage};
pub use index::{BowHistogram, BowIndex, IndexEntry, RetrievalResult};
pub use keypoints::{Keypoint, ScaleSpaceParams};
pub use vocabulary::{KMeansConfig, Vocabulary};
