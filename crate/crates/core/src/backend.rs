use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling parameters forwarded to a text-to-image backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub guidance_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_guidance_scale: Option<f64>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParam("width and height must be positive"));
        }
        if let Some(s) = self.adapter_scale {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidParam("adapter_scale must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub max_reference_images: usize,
    pub supports_personal_subject: bool,
    pub default_params: GenerationParams,
}

impl BackendCapabilities {
    pub fn validate(&self) -> Result<()> {
        if self.supports_personal_subject && self.max_reference_images < 2 {
            return Err(Error::InvalidParam(
                "personal-subject support needs room for at least 2 reference images",
            ));
        }
        self.default_params.validate()
    }
}
