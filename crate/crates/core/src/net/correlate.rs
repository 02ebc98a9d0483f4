use alloc::format;
use alloc::vec::Vec;

use super::layers::{conv2d, conv2d_backward};
use super::roi::PooledPatch;
use super::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// Sliding mean inner product of an exemplar patch over zero-padded
/// features: each response is divided by the patch's element count so its
/// scale does not grow with channel width. The output keeps the feature
/// map's spatial size.
pub fn correlate<T: Real>(features: &FeatureMap<T>, patch: &PooledPatch<T>) -> Result<FeatureMap<T>> {
    if patch.channels != features.channels {
        return Err(Error::Shape(format!(
            "exemplar has {} channels, features have {}",
            patch.channels, features.channels
        )));
    }
    if patch.size % 2 == 0 {
        return Err(Error::Shape(format!("exemplar size {} must be odd", patch.size)));
    }
    Ok(conv2d(features, &normalized(patch), None, 1, patch.size))
}

fn normalized<T: Real>(patch: &PooledPatch<T>) -> Vec<T> {
    let s = T::from_f64(1.0 / patch.values.len() as f64);
    patch.values.iter().map(|v| *v * s).collect()
}

/// Gradients of [`correlate`] with respect to the features and the patch.
pub(crate) fn correlate_backward<T: Real>(
    features: &FeatureMap<T>,
    patch: &PooledPatch<T>,
    grad: &FeatureMap<T>,
) -> (FeatureMap<T>, Vec<T>) {
    let (mut dpatch, _, dfeat) = conv2d_backward(features, &normalized(patch), grad, patch.size, true);
    let s = T::from_f64(1.0 / patch.values.len() as f64);
    dpatch.iter_mut().for_each(|g| *g = *g * s);
    (dfeat.expect("input gradient requested"), dpatch)
}
