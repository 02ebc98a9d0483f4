use crate::image::{GrayImage, RgbImage};

/// HSV saturation scaled to `[0, 255]` and rounded: `(max − min) / max`, or
/// 0 for black pixels.
pub fn saturation_channel(rgb: &RgbImage) -> GrayImage {
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|px| {
            let max = px[0].max(px[1]).max(px[2]);
            let min = px[0].min(px[1]).min(px[2]);
            if max == 0 {
                0.0
            } else {
                libm::round(255.0 * f64::from(max - min) / f64::from(max))
            }
        })
        .collect();
    GrayImage { width: rgb.width, height: rgb.height, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(rgb: [u8; 3]) -> f64 {
        saturation_channel(&RgbImage::filled(1, 1, rgb)).data[0]
    }

    #[test]
    fn pure_red_is_fully_saturated() {
        assert_eq!(one([255, 0, 0]), 255.0);
    }

    #[test]
    fn grays_have_zero_saturation() {
        for v in [0u8, 1, 77, 128, 255] {
            assert_eq!(one([v, v, v]), 0.0);
        }
    }

    #[test]
    fn mixed_pixel() {
        assert_eq!(one([200, 100, 50]), 191.0);
    }
}
