use alloc::vec::Vec;

use super::{
    gaussian_blur, histogram, hough_circles, multi_otsu_from_histogram, saturation_channel,
    sobel_edges, CircleDetection, HoughConfig,
};
use crate::image::{quantize, GrayImage, RgbImage};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalConfig {
    pub blur_sigma: f64,
    /// Otsu classes; the foreground is everything above the lowest class.
    pub otsu_classes: usize,
    pub hough: HoughConfig,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self { blur_sigma: 1.5, otsu_classes: 2, hough: HoughConfig::default() }
    }
}

/// Every intermediate raster of one pipeline run.
#[derive(Debug, Clone)]
pub struct ClassicalStages {
    pub saturation: GrayImage,
    pub blurred: GrayImage,
    /// `None` when the blurred image has too few gray levels to threshold.
    pub threshold: Option<u8>,
    /// 255 for foreground, 0 for background.
    pub foreground_mask: GrayImage,
    pub foreground: GrayImage,
    pub edges: GrayImage,
    pub circles: Vec<CircleDetection>,
}

/// Runs the full pipeline and keeps every stage.
///
/// A blurred image without enough distinct gray levels has no foreground, so
/// it yields zero circles instead of a threshold error.
pub fn classical_stages(rgb: &RgbImage, config: &ClassicalConfig) -> Result<ClassicalStages> {
    let saturation = saturation_channel(rgb);
    let blurred = gaussian_blur(&saturation, config.blur_sigma)?;
    let threshold = match multi_otsu_from_histogram(&histogram(&blurred), config.otsu_classes) {
        Ok(t) => Some(t[0]),
        Err(Error::DegenerateHistogram(_)) => None,
        Err(e) => return Err(e),
    };
    let mut foreground_mask = GrayImage::new(blurred.width, blurred.height);
    let mut foreground = GrayImage::new(blurred.width, blurred.height);
    if let Some(t) = threshold {
        for (i, &v) in blurred.data.iter().enumerate() {
            if quantize(v) > t {
                foreground_mask.data[i] = 255.0;
                foreground.data[i] = v;
            }
        }
    }
    let edges = sobel_edges(&foreground)?;
    let circles = if threshold.is_some() { hough_circles(&edges, &config.hough)? } else { Vec::new() };
    Ok(ClassicalStages { saturation, blurred, threshold, foreground_mask, foreground, edges, circles })
}

/// Number of circles the classical pipeline finds.
pub fn classical_count(rgb: &RgbImage, config: &ClassicalConfig) -> Result<usize> {
    Ok(classical_stages(rgb, config)?.circles.len())
}
