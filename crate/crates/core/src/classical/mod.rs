//! Classical counting route: saturation channel → Gaussian blur → Otsu
//! foreground mask → Sobel magnitude → Hough circle voting.

mod color;
mod filter;
mod hough;
mod otsu;
mod pipeline;

pub use color::saturation_channel;
pub use filter::{gaussian_blur, sobel_edges, sobel_magnitude};
pub use hough::{hough_circles, CircleDetection, HoughConfig};
pub use otsu::{
    histogram, multi_otsu, multi_otsu_from_histogram, otsu_threshold, otsu_threshold_from_histogram,
    Histogram,
};
pub use pipeline::{classical_count, classical_stages, ClassicalConfig, ClassicalStages};
