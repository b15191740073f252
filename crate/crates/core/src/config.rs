use crate::descriptors::ShapeContextParams;
use crate::error::{Error, Result};
use crate::imaging::CannyParams;
use crate::keypoints::ScaleSpaceParams;

/// Everything `describe_image` needs, shared by vocabulary training, indexing and queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub canny: CannyParams,
    /// Contour points sampled per image.
    pub n: usize,
    pub shape: ShapeContextParams,
    pub scale_space: ScaleSpaceParams,
    /// Multiplier on the six color-moment entries; 0 gives the shape-only descriptor.
    pub color_weight: f64,
    /// Seed for contour sampling.
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            canny: CannyParams::default(),
            n: 300,
            shape: ShapeContextParams::default(),
            scale_space: ScaleSpaceParams::default(),
            color_weight: 0.5,
            seed: 0,
        }
    }
}

impl PipelineParams {
    pub fn descriptor_dim(&self) -> usize {
        self.shape.bins() + crate::descriptors::COLOR_MOMENT_DIM
    }

    pub fn validate(&self) -> Result<()> {
        self.canny.validate()?;
        self.shape.validate()?;
        self.scale_space.validate()?;
        if self.n < 2 {
            return Err(Error::InvalidParam(format!(
                "contour sample count must be >= 2, got {}",
                self.n
            )));
        }
        if !(self.color_weight >= 0.0 && self.color_weight.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "color weight must be a non-negative number, got {}",
                self.color_weight
            )));
        }
        Ok(())
    }
}
