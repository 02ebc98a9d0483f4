//! Batch-size-1 training loop with per-epoch dev selection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Annotation;
use crate::density::{build_density_map, DensityMap, WindowPolicy, DEFAULT_FALLBACK_WINDOW};
use crate::geometry::BBox;
use crate::image::{resize_rgb, RgbImage};
use crate::loss::{
    combined_loss_with_grad, hard_threshold_for_window, mask_from_annotations, LossBreakdown, LossConfig,
    MismatchMode, ObjectMask, DEFAULT_LAMBDA,
};
use crate::net::{CountingNet, ExemplarSet, FeatureMap};
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub lambda: f64,
    pub image_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm cap on each step's gradient; off when `None`.
    pub grad_clip: Option<f64>,
    /// Steps over which the learning rate ramps linearly up to its full
    /// value.
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 20,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            image_size: 384,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: None,
            warmup_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda {} must be non-negative", self.lambda)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!("gradient clip {c} must be positive")));
            }
        }
        self.adam().validate()
    }
}

/// Everything one optimization step needs for an image, at network
/// resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image_id: u64,
    pub image: FeatureMap<f32>,
    pub density: DensityMap,
    pub mask: ObjectMask,
    pub exemplars: ExemplarSet,
    pub count: u32,
    /// Density level counted by the hard mismatch term.
    pub hard_threshold: f64,
}

/// Resizes an image to `size × size`, rescales its annotations, and derives
/// the density target, object mask and exemplar boxes.
pub fn prepare_sample(
    image_id: u64,
    image: &RgbImage,
    annotations: &[&Annotation],
    size: usize,
    policy: WindowPolicy,
) -> Result<TrainSample> {
    let resized = resize_rgb(image, size, size)?;
    let sx = size as f64 / image.width as f64;
    let sy = size as f64 / image.height as f64;
    let scaled: Vec<Annotation> = annotations.iter().map(|a| a.scaled(sx, sy)).collect();
    let refs: Vec<&Annotation> = scaled.iter().collect();
    let points = scaled.iter().map(Annotation::center).collect::<Result<Vec<_>>>()?;
    let build = build_density_map(&points, size, size, policy)?;
    let mask = mask_from_annotations(&refs, size, size);
    let frame = size as f64;
    let boxes = scaled
        .iter()
        .map(|a| {
            let x0 = a.bbox.x.clamp(0.0, frame);
            let y0 = a.bbox.y.clamp(0.0, frame);
            let x1 = (a.bbox.x + a.bbox.width).clamp(0.0, frame);
            let y1 = (a.bbox.y + a.bbox.height).clamp(0.0, frame);
            BBox::new(x0, y0, x1 - x0, y1 - y0)
        })
        .collect();
    Ok(TrainSample {
        image_id,
        image: FeatureMap::from_rgb(&resized),
        density: build.map,
        mask,
        exemplars: ExemplarSet::new(boxes),
        count: annotations.len() as u32,
        hard_threshold: hard_threshold_for_window(build.window.unwrap_or(DEFAULT_FALLBACK_WINDOW)),
    })
}

/// Why the trainer is reading an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    /// Forward/backward and a parameter update.
    Fit,
    /// Read-only count for model selection.
    Validate,
}

/// Supplies prepared samples by image id.
pub trait SampleSource {
    fn load(&mut self, image_id: u64, access: Access) -> Result<TrainSample>;
}

/// In-memory samples keyed by image id.
impl SampleSource for alloc::collections::BTreeMap<u64, TrainSample> {
    fn load(&mut self, image_id: u64, _access: Access) -> Result<TrainSample> {
        self.get(&image_id)
            .cloned()
            .ok_or_else(|| Error::Input(format!("no sample for image {image_id}")))
    }
}

/// One optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub iter: usize,
    pub image_id: u64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_combined: f64,
    /// Per-image count MAE on the dev images; `None` without dev images.
    pub dev_mae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_net: CountingNet<f32>,
    /// Lowest dev MAE seen at an epoch end (ties keep the earlier epoch); the
    /// final network when there are no dev images.
    pub best_net: CountingNet<f32>,
    pub best_epoch: usize,
    pub history: Vec<LossRecord>,
    pub epochs: Vec<EpochSummary>,
}

fn loss_for(sample: &TrainSample, density: &FeatureMap<f32>, lambda: f64) -> Result<(LossBreakdown, Vec<f64>)> {
    let pred = DensityMap::from_raw(
        density.width,
        density.height,
        density.data.iter().map(|v| f64::from(*v)).collect(),
    )?;
    let config = LossConfig { lambda, mismatch_mode: MismatchMode::Soft, hard_threshold: sample.hard_threshold };
    combined_loss_with_grad(&pred, &sample.density, &sample.mask, &config)
}

/// Loss terms of the current network on one sample, without updating it.
pub fn sample_loss(net: &CountingNet<f32>, sample: &TrainSample, lambda: f64) -> Result<LossBreakdown> {
    let fwd = net.forward(&sample.image, &sample.exemplars, false)?;
    Ok(loss_for(sample, &fwd.density, lambda)?.0)
}

/// Per-image absolute count error averaged over `ids`.
pub fn count_mae(net: &CountingNet<f32>, ids: &[u64], source: &mut dyn SampleSource, access: Access) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("no images to evaluate".into()));
    }
    let mut total = 0.0;
    for &id in ids {
        let s = source.load(id, access)?;
        total += (net.count(&s.image, &s.exemplars)? - f64::from(s.count)).abs();
    }
    Ok(total / ids.len() as f64)
}

/// Single forward/backward/update on one sample; returns the pre-update loss.
pub fn train_step(
    net: &mut CountingNet<f32>,
    adam: &mut Adam,
    sample: &TrainSample,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    step_reporting_activity(net, adam, sample, config).map(|(loss, _)| loss)
}

/// [`train_step`], also reporting whether any output pixel was positive
/// before the update.
fn step_reporting_activity(
    net: &mut CountingNet<f32>,
    adam: &mut Adam,
    sample: &TrainSample,
    config: &TrainConfig,
) -> Result<(LossBreakdown, bool)> {
    let fwd = net.forward(&sample.image, &sample.exemplars, true)?;
    let active = fwd.density.data.iter().any(|v| *v > 0.0);
    let (loss, grad) = loss_for(sample, &fwd.density, config.lambda)?;
    if !loss.combined.is_finite() {
        return Err(Error::NonFinite(format!(
            "image {}: mse={} mismatch_soft={} combined={}",
            sample.image_id, loss.mse, loss.mismatch_soft, loss.combined
        )));
    }
    let upstream: Vec<f32> = grad.iter().map(|g| *g as f32).collect();
    let mut grads = net.backward(&fwd, &upstream)?;
    if let Some(cap) = config.grad_clip {
        let norm = libm::sqrt(grads.iter().flatten().map(|g| f64::from(*g) * f64::from(*g)).sum::<f64>());
        if norm > cap {
            let s = (cap / norm) as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
    }
    let step = adam.steps_taken() as f64 + 1.0;
    let ramp = if config.warmup_steps == 0 { 1.0 } else { (step / config.warmup_steps as f64).min(1.0) };
    adam.config.learning_rate = config.learning_rate * ramp;
    let mut params: Vec<&mut [f32]> = net.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
    adam.step(&mut params, &grads)?;
    Ok((loss, active))
}

/// Trains `net` on `train_ids` for `config.epochs` shuffled passes, measuring
/// dev MAE after each epoch.
pub fn train(
    net: CountingNet<f32>,
    train_ids: &[u64],
    dev_ids: &[u64],
    source: &mut dyn SampleSource,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_ids.is_empty() {
        return Err(Error::EmptyInput("training split has no images".into()));
    }
    let train_set: BTreeSet<u64> = train_ids.iter().copied().collect();
    if let Some(id) = dev_ids.iter().find(|id| train_set.contains(id)) {
        return Err(Error::DataIntegrity(format!("image {id} is in both train and dev")));
    }
    let mut net = net;
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(config.adam(), &sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<u64> = train_ids.to_vec();
    order.sort_unstable();
    let mut history = Vec::with_capacity(config.epochs * order.len());
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, CountingNet<f32>)> = None;
    let mut iter = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut any_active = false;
        for &id in &order {
            let sample = source.load(id, Access::Fit)?;
            let (loss, active) = step_reporting_activity(&mut net, &mut adam, &sample, config).map_err(|e| match e {
                Error::NonFinite(d) => Error::NonFinite(format!("epoch {epoch}, {d}")),
                other => other,
            })?;
            any_active |= active;
            sum += loss.combined;
            history.push(LossRecord { epoch, iter, image_id: id, loss });
            iter += 1;
        }
        let dev_mae = if dev_ids.is_empty() {
            None
        } else {
            Some(count_mae(&net, dev_ids, source, Access::Validate)?)
        };
        if !any_active {
            // A rectified output that is zero everywhere gets no gradient and
            // cannot recover; the rest of the run is wasted.
            log::warn!(
                "epoch {epoch}: the density output was zero on every training image; \
                 the output layer is dead (lower the learning rate or use warmup)"
            );
        }
        let mean_combined = sum / order.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean_combined:.6e}, dev MAE {dev_mae:?}");
        if let Some(mae) = dev_mae {
            if best.as_ref().is_none_or(|(b, _, _)| mae < *b) {
                best = Some((mae, epoch, net.clone()));
            }
        }
        epochs.push(EpochSummary { epoch, mean_combined, dev_mae });
    }
    let (best_epoch, best_net) = match best {
        Some((_, e, n)) => (e, n),
        None => (config.epochs - 1, net.clone()),
    };
    Ok(TrainOutcome { final_net: net, best_net, best_epoch, history, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::net::NetConfig;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn square(cx: f64, cy: f64, r: f64, id: u64, image_id: u64) -> Annotation {
        Annotation {
            id,
            image_id,
            polygon: vec![
                Point::new(cx - r, cy - r),
                Point::new(cx + r, cy - r),
                Point::new(cx + r, cy + r),
                Point::new(cx - r, cy + r),
            ],
            bbox: BBox::new(cx - r, cy - r, 2.0 * r, 2.0 * r),
        }
    }

    fn toy_sample(image_id: u64, n: usize) -> TrainSample {
        let mut img = RgbImage::filled(32, 32, [128, 128, 128]);
        let anns: Vec<Annotation> = (0..n)
            .map(|i| {
                let cx = 6.0 + 9.0 * (i % 3) as f64;
                let cy = 6.0 + 9.0 * (i / 3) as f64;
                for y in (cy as usize - 3)..(cy as usize + 3) {
                    for x in (cx as usize - 3)..(cx as usize + 3) {
                        img.put(x, y, [200, 150, 60]);
                    }
                }
                square(cx, cy, 3.0, i as u64, image_id)
            })
            .collect();
        let refs: Vec<&Annotation> = anns.iter().collect();
        prepare_sample(image_id, &img, &refs, 16, WindowPolicy::default()).unwrap()
    }

    fn toy_source() -> BTreeMap<u64, TrainSample> {
        (1..=4).map(|id| (id, toy_sample(id, 2 + id as usize))).collect()
    }

    fn toy_net() -> CountingNet<f32> {
        CountingNet::new(NetConfig { seed: 5, ..NetConfig::miniature() }).unwrap()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig { learning_rate: 1e-3, epochs: 2, seed: 11, image_size: 16, ..TrainConfig::default() }
    }

    #[test]
    fn warmup_ramps_learning_rate_linearly() {
        let config = TrainConfig { warmup_steps: 4, ..toy_config() };
        let mut net = toy_net();
        let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        let mut adam = Adam::new(config.adam(), &sizes).unwrap();
        let sample = toy_sample(1, 3);
        for k in 1..=6 {
            train_step(&mut net, &mut adam, &sample, &config).unwrap();
            let expected = config.learning_rate * (k.min(4) as f64 / 4.0);
            assert!((adam.config.learning_rate - expected).abs() < 1e-18, "step {k}");
        }
    }

    #[test]
    fn prepared_sample_is_consistent() {
        let s = toy_sample(1, 4);
        assert_eq!(s.image.shape(), (3, 16, 16));
        assert!((s.density.sum() - 4.0).abs() < 1e-9);
        assert_eq!(s.exemplars.boxes.len(), 4);
        assert_eq!(s.count, 4);
        assert!(s.mask.values.contains(&0));
        s.exemplars.validate(16, 16).unwrap();
    }

    #[test]
    fn history_length_is_epochs_times_images() {
        let mut src = toy_source();
        let out = train(toy_net(), &[1, 2, 3], &[4], &mut src, &toy_config()).unwrap();
        assert_eq!(out.history.len(), 6);
        assert_eq!(out.epochs.len(), 2);
        assert!(out.epochs.iter().all(|e| e.dev_mae.is_some()));
        let iters: Vec<usize> = out.history.iter().map(|r| r.iter).collect();
        assert_eq!(iters, [0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn training_is_reproducible() {
        let a = train(toy_net(), &[1, 2, 3], &[4], &mut toy_source(), &toy_config()).unwrap();
        let b = train(toy_net(), &[3, 1, 2], &[4], &mut toy_source(), &toy_config()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_net, b.final_net);
    }

    struct Audited {
        inner: BTreeMap<u64, TrainSample>,
        log: Vec<(u64, Access)>,
    }

    impl SampleSource for Audited {
        fn load(&mut self, image_id: u64, access: Access) -> Result<TrainSample> {
            self.log.push((image_id, access));
            self.inner.load(image_id, access)
        }
    }

    #[test]
    fn only_train_images_are_fitted() {
        let mut src = Audited { inner: toy_source(), log: Vec::new() };
        train(toy_net(), &[1, 2], &[3], &mut src, &toy_config()).unwrap();
        assert!(src.log.iter().all(|(id, _)| *id != 4), "test image was read");
        for (id, access) in &src.log {
            match access {
                Access::Fit => assert!([1, 2].contains(id)),
                Access::Validate => assert_eq!(*id, 3),
            }
        }
    }

    #[test]
    fn overlapping_splits_rejected() {
        let err = train(toy_net(), &[1, 2], &[2], &mut toy_source(), &toy_config()).unwrap_err();
        assert_eq!(err.kind(), "data-integrity");
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig { epochs: 0, ..toy_config() };
        assert!(train(toy_net(), &[1], &[], &mut toy_source(), &bad).is_err());
        let bad = TrainConfig { learning_rate: -1.0, ..toy_config() };
        assert!(bad.validate().is_err());
        assert!(train(toy_net(), &[], &[], &mut toy_source(), &toy_config()).is_err());
    }

    #[test]
    fn nan_loss_aborts_with_context() {
        let mut src = toy_source();
        let s = src.get_mut(&2).unwrap();
        s.density.values[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, ..toy_config() };
        let err = train(toy_net(), &[2], &[], &mut src, &cfg).unwrap_err();
        assert_eq!(err.kind(), "non-finite");
        let msg = format!("{err}");
        assert!(msg.contains("epoch 0") && msg.contains("image 2") && msg.contains("mse"), "{msg}");
    }

    #[test]
    fn mismatch_weight_changes_first_step_by_at_most_lr() {
        let sample = toy_sample(1, 5);
        let cfg0 = TrainConfig { lambda: 0.0, ..toy_config() };
        let cfg1 = TrainConfig { lambda: 1e-9, ..toy_config() };
        let mut nets = [toy_net(), toy_net()];
        for (net, cfg) in nets.iter_mut().zip([&cfg0, &cfg1]) {
            let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
            let mut adam = Adam::new(cfg.adam(), &sizes).unwrap();
            train_step(net, &mut adam, &sample, cfg).unwrap();
        }
        let start = toy_net();
        for ((a, b), s) in nets[0].params().iter().zip(nets[1].params()).zip(start.params()) {
            for ((x, y), z) in a.data.iter().zip(&b.data).zip(&s.data) {
                let (dx, dy) = (f64::from(x - z), f64::from(y - z));
                assert!((dx - dy).abs() <= cfg0.learning_rate + 1e-9);
            }
        }
    }

    #[test]
    fn gradient_clip_limits_step() {
        let sample = toy_sample(1, 3);
        let cfg = TrainConfig { grad_clip: Some(1e-12), ..toy_config() };
        let mut net = toy_net();
        let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        let mut adam = Adam::new(cfg.adam(), &sizes).unwrap();
        train_step(&mut net, &mut adam, &sample, &cfg).unwrap();
        assert_eq!(adam.steps_taken(), 1);
    }
}
