use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::correlate::{correlate, correlate_backward};
use super::layers::{
    avg_pool, avg_pool_backward, conv2d, conv2d_backward, relu, relu_backward, upsample2, upsample2_backward,
};
use super::roi::{roi_pool, PooledPatch};
use super::tensor::{FeatureMap, ParamTensor, Real};
use crate::geometry::BBox;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

pub const DEFAULT_EXEMPLAR_SCALES: [f64; 3] = [0.9, 1.0, 1.1];

/// One 3×3 convolution + rectifier block. Backbone blocks may halve the
/// resolution afterwards (2×2 average pool); head blocks may double it
/// (bilinear).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub channels: usize,
    pub resample: bool,
}

impl BlockSpec {
    pub const fn new(channels: usize, resample: bool) -> Self {
        Self { channels, resample }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_channels: usize,
    pub backbone: Vec<BlockSpec>,
    /// Average-pool factor applied to the stacked similarity maps before the
    /// head.
    pub correlation_pool: usize,
    pub head: Vec<BlockSpec>,
    /// Side of the pooled exemplar patch (odd).
    pub roi_size: usize,
    pub exemplar_scales: Vec<f64>,
    /// Fixed factor on the rectified output. Keeps per-pixel densities
    /// (a few thousandths for a dozen objects) reachable with optimizer steps
    /// of ordinary size.
    pub output_gain: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            backbone: vec![
                BlockSpec::new(8, false),
                BlockSpec::new(16, true),
                BlockSpec::new(32, false),
                BlockSpec::new(32, true),
            ],
            correlation_pool: 2,
            head: vec![
                BlockSpec::new(16, true),
                BlockSpec::new(16, true),
                BlockSpec::new(8, true),
                BlockSpec::new(8, false),
                BlockSpec::new(8, false),
            ],
            roi_size: 3,
            exemplar_scales: DEFAULT_EXEMPLAR_SCALES.to_vec(),
            output_gain: 1.0 / 64.0,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Two backbone blocks and two head blocks; for gradient checks on tiny
    /// inputs (side divisible by 4).
    pub fn miniature() -> Self {
        Self {
            input_channels: 3,
            backbone: vec![BlockSpec::new(3, false), BlockSpec::new(4, true)],
            correlation_pool: 2,
            head: vec![BlockSpec::new(4, true), BlockSpec::new(3, true)],
            roi_size: 3,
            exemplar_scales: DEFAULT_EXEMPLAR_SCALES.to_vec(),
            output_gain: 1.0,
            seed: 0,
        }
    }

    /// Downsampling factor from input to the feature map.
    pub fn feature_stride(&self) -> usize {
        1 << self.backbone.iter().filter(|b| b.resample).count()
    }

    /// Input sides must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        self.feature_stride() * self.correlation_pool
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone.last().map_or(self.input_channels, |b| b.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.is_empty() || self.head.is_empty() {
            return Err(Error::InvalidParameter("backbone and head need at least one block".into()));
        }
        if self.backbone.iter().chain(&self.head).any(|b| b.channels == 0) || self.input_channels == 0 {
            return Err(Error::InvalidParameter("channel widths must be positive".into()));
        }
        if self.correlation_pool == 0 || !self.correlation_pool.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "correlation pool {} must be a power of two",
                self.correlation_pool
            )));
        }
        if self.roi_size == 0 || self.roi_size % 2 == 0 {
            return Err(Error::InvalidParameter(format!("roi size {} must be odd", self.roi_size)));
        }
        if !(self.output_gain > 0.0 && self.output_gain.is_finite()) {
            return Err(Error::InvalidParameter(format!("output gain {} must be positive", self.output_gain)));
        }
        if self.exemplar_scales.is_empty() || self.exemplar_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("exemplar scales must be positive".into()));
        }
        let up = 1usize << self.head.iter().filter(|b| b.resample).count();
        if up != self.input_multiple() {
            return Err(Error::InvalidParameter(format!(
                "head upsamples by {up} but backbone and correlation pooling reduce by {}",
                self.input_multiple()
            )));
        }
        Ok(())
    }
}

/// Exemplar boxes in input-image coordinates and the scales at which each is
/// pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub boxes: Vec<BBox>,
    pub scales: Vec<f64>,
}

impl ExemplarSet {
    pub fn new(boxes: Vec<BBox>) -> Self {
        Self { boxes, scales: DEFAULT_EXEMPLAR_SCALES.to_vec() }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::Input("exemplar set needs at least one box".into()));
        }
        let (w, h) = (width as f64, height as f64);
        for b in &self.boxes {
            let inside = b.x >= -1e-6 && b.y >= -1e-6 && b.x + b.width <= w + 1e-6 && b.y + b.height <= h + 1e-6;
            if !inside || !(b.width >= 0.0 && b.height >= 0.0) {
                return Err(Error::Input(format!("exemplar box {b:?} outside {width}x{height} image")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvTape<T> {
    input: FeatureMap<T>,
    pre: FeatureMap<T>,
}

#[derive(Debug, Clone)]
struct ScaleTape<T> {
    patches: Vec<PooledPatch<T>>,
    /// Winning box per feature pixel.
    winner: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Tape<T> {
    backbone: Vec<ConvTape<T>>,
    features: FeatureMap<T>,
    scales: Vec<ScaleTape<T>>,
    head: Vec<ConvTape<T>>,
    out: ConvTape<T>,
}

/// Result of a forward pass, optionally carrying the activations needed for
/// [`CountingNet::backward`].
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// `1×H×W` non-negative density.
    pub density: FeatureMap<T>,
    /// Exemplar boxes that collapsed to a single feature cell.
    pub degenerate_boxes: usize,
    tape: Option<Tape<T>>,
}

impl<T: Real> Forward<T> {
    pub fn count(&self) -> f64 {
        self.density.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }
}

/// Network parameters plus topology.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingNet<T> {
    config: NetConfig,
    params: Vec<ParamTensor<T>>,
}

fn layer_shapes(config: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    let mut c_in = config.input_channels;
    for (i, b) in config.backbone.iter().enumerate() {
        shapes.push((format!("backbone.{i}.weight"), vec![b.channels, c_in, 3, 3]));
        shapes.push((format!("backbone.{i}.bias"), vec![b.channels]));
        c_in = b.channels;
    }
    c_in = config.exemplar_scales.len();
    for (i, b) in config.head.iter().enumerate() {
        shapes.push((format!("head.{i}.weight"), vec![b.channels, c_in, 3, 3]));
        shapes.push((format!("head.{i}.bias"), vec![b.channels]));
        c_in = b.channels;
    }
    shapes.push((String::from("head.out.weight"), vec![1, c_in, 1, 1]));
    shapes.push((String::from("head.out.bias"), vec![1]));
    shapes
}

impl<T: Real> CountingNet<T> {
    /// Fan-in scaled normal weights (`std = sqrt(2 / fan_in)`) drawn from a
    /// ChaCha8 stream seeded by `config.seed`; zero biases. The output layer
    /// reads rectified features, so its weights are drawn half-normal: the
    /// density then starts active everywhere features are, instead of dead
    /// for seeds that happen to draw mostly negative weights.
    pub fn new(config: NetConfig) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(net.config.seed);
        for p in &mut net.params {
            if p.shape.len() == 4 {
                let fan_in = (p.shape[1] * p.shape[2] * p.shape[3]) as f64;
                let std = (2.0 / fan_in).sqrt();
                let half_normal = p.name == "head.out.weight";
                for v in &mut p.data {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = T::from_f64(if half_normal { z.abs() } else { z } * std);
                }
            }
        }
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = layer_shapes(&config)
            .into_iter()
            .map(|(name, shape)| ParamTensor::zeros(name, shape))
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a network from stored tensors, checking names and shapes.
    pub fn from_params(config: NetConfig, params: Vec<ParamTensor<T>>) -> Result<Self> {
        let net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                net.params.len(),
                params.len()
            )));
        }
        for (want, got) in net.params.iter().zip(&params) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        Ok(Self { config: net.config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[ParamTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> CountingNet<U> {
        CountingNet {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| ParamTensor {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn backbone_params(&self, i: usize) -> (&[T], &[T]) {
        (&self.params[2 * i].data, &self.params[2 * i + 1].data)
    }

    fn head_params(&self, i: usize) -> (&[T], &[T]) {
        let base = 2 * self.config.backbone.len();
        (&self.params[base + 2 * i].data, &self.params[base + 2 * i + 1].data)
    }

    fn out_params(&self) -> (&[T], &[T]) {
        let n = self.params.len();
        (&self.params[n - 2].data, &self.params[n - 1].data)
    }

    fn check_input(&self, image: &FeatureMap<T>) -> Result<()> {
        let m = self.config.input_multiple();
        if image.channels != self.config.input_channels
            || image.height == 0
            || image.width == 0
            || image.height % m != 0
            || image.width % m != 0
        {
            return Err(Error::Shape(format!(
                "input {}x{}x{} must have {} channels and sides divisible by {m}",
                image.channels, image.height, image.width, self.config.input_channels
            )));
        }
        Ok(())
    }

    fn run_backbone(&self, image: &FeatureMap<T>, tape: Option<&mut Vec<ConvTape<T>>>) -> FeatureMap<T> {
        let mut tape = tape;
        let mut x = image.clone();
        for (i, spec) in self.config.backbone.iter().enumerate() {
            let (w, b) = self.backbone_params(i);
            let pre = conv2d(&x, w, Some(b), spec.channels, 3);
            let mut next = relu(&pre);
            if spec.resample {
                next = avg_pool(&next, 2);
            }
            if let Some(t) = tape.as_deref_mut() {
                t.push(ConvTape { input: x, pre });
            }
            x = next;
        }
        x
    }

    /// Backbone feature map (`C × H/s × W/s`, `s` = feature stride).
    pub fn extract_features(&self, image: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.check_input(image)?;
        Ok(self.run_backbone(image, None))
    }

    /// Similarity stack: one channel per exemplar scale, each the per-pixel
    /// maximum over boxes of the box's correlation map.
    fn similarity(
        &self,
        features: &FeatureMap<T>,
        exemplars: &ExemplarSet,
    ) -> Result<(FeatureMap<T>, Vec<ScaleTape<T>>, usize)> {
        if exemplars.scales.len() != self.config.exemplar_scales.len() {
            return Err(Error::Shape(format!(
                "{} exemplar scales given, network expects {}",
                exemplars.scales.len(),
                self.config.exemplar_scales.len()
            )));
        }
        let stride = self.config.feature_stride() as f64;
        let (_, h, w) = features.shape();
        let mut sim = FeatureMap::zeros(exemplars.scales.len(), h, w);
        let mut tapes = Vec::with_capacity(exemplars.scales.len());
        let mut degenerate = 0;
        for (s, &scale) in exemplars.scales.iter().enumerate() {
            let mut patches = Vec::with_capacity(exemplars.boxes.len());
            let mut winner = vec![0usize; h * w];
            let plane = sim.plane_mut(s);
            for (bi, bbox) in exemplars.boxes.iter().enumerate() {
                let patch = roi_pool(features, &bbox.rescaled_about_center(scale), stride, self.config.roi_size);
                degenerate += usize::from(patch.degenerate);
                let corr = correlate(features, &patch)?;
                if bi == 0 {
                    plane.copy_from_slice(&corr.data);
                } else {
                    for (i, v) in corr.data.iter().enumerate() {
                        if *v > plane[i] {
                            plane[i] = *v;
                            winner[i] = bi;
                        }
                    }
                }
                patches.push(patch);
            }
            tapes.push(ScaleTape { patches, winner });
        }
        Ok((sim, tapes, degenerate))
    }

    fn run_head(
        &self,
        input: &FeatureMap<T>,
        tape: Option<(&mut Vec<ConvTape<T>>, &mut Option<ConvTape<T>>)>,
    ) -> FeatureMap<T> {
        let mut tape = tape;
        let mut x = input.clone();
        for (i, spec) in self.config.head.iter().enumerate() {
            let (w, b) = self.head_params(i);
            let pre = conv2d(&x, w, Some(b), spec.channels, 3);
            let mut next = relu(&pre);
            if spec.resample {
                next = upsample2(&next);
            }
            if let Some((t, _)) = tape.as_mut() {
                t.push(ConvTape { input: x, pre });
            }
            x = next;
        }
        let (w, b) = self.out_params();
        let pre = conv2d(&x, w, Some(b), 1, 1);
        let mut out = relu(&pre);
        let gain = T::from_f64(self.config.output_gain);
        out.data.iter_mut().for_each(|v| *v = *v * gain);
        if let Some((_, o)) = tape.as_mut() {
            **o = Some(ConvTape { input: x, pre });
        }
        out
    }

    /// Head forward pass from a similarity stack at feature resolution.
    pub fn predict_density(&self, similarity: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let p = self.config.correlation_pool;
        if similarity.channels != self.config.exemplar_scales.len()
            || similarity.height % p != 0
            || similarity.width % p != 0
            || similarity.height == 0
        {
            return Err(Error::Shape(format!(
                "similarity stack {}x{}x{} incompatible with {} scales and pool {p}",
                similarity.channels,
                similarity.height,
                similarity.width,
                self.config.exemplar_scales.len()
            )));
        }
        Ok(self.run_head(&avg_pool(similarity, p), None))
    }

    /// Full forward pass. With `record`, activations are kept for
    /// [`CountingNet::backward`].
    pub fn forward(&self, image: &FeatureMap<T>, exemplars: &ExemplarSet, record: bool) -> Result<Forward<T>> {
        self.check_input(image)?;
        exemplars.validate(image.width, image.height)?;
        let mut backbone_tape = Vec::new();
        let features = self.run_backbone(image, record.then_some(&mut backbone_tape));
        let (sim, scale_tapes, degenerate) = self.similarity(&features, exemplars)?;
        let head_in = avg_pool(&sim, self.config.correlation_pool);
        let mut head_tape = Vec::new();
        let mut out_tape = None;
        let density = self.run_head(&head_in, record.then_some((&mut head_tape, &mut out_tape)));
        let tape = match (record, out_tape) {
            (true, Some(out)) => Some(Tape { backbone: backbone_tape, features, scales: scale_tapes, head: head_tape, out }),
            _ => None,
        };
        Ok(Forward { density, degenerate_boxes: degenerate, tape })
    }

    /// Predicted count: the sum of the density map.
    pub fn count(&self, image: &FeatureMap<T>, exemplars: &ExemplarSet) -> Result<f64> {
        Ok(self.forward(image, exemplars, false)?.count())
    }

    /// Parameter gradients for `Σ upstream · density`, in parameter order.
    pub fn backward(&self, fwd: &Forward<T>, upstream: &[T]) -> Result<Vec<Vec<T>>> {
        let tape = fwd
            .tape
            .as_ref()
            .ok_or_else(|| Error::State("backward needs a recorded forward pass".into()))?;
        if upstream.len() != fwd.density.data.len() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values, density has {}",
                upstream.len(),
                fwd.density.data.len()
            )));
        }
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        let n = self.params.len();

        let gain = T::from_f64(self.config.output_gain);
        let scaled = upstream.iter().map(|u| *u * gain).collect();
        let mut g = FeatureMap::from_raw(1, fwd.density.height, fwd.density.width, scaled)?;
        relu_backward(&tape.out.pre, &mut g);
        let (w, _) = self.out_params();
        let (dw, db, din) = conv2d_backward(&tape.out.input, w, &g, 1, true);
        grads[n - 2] = dw;
        grads[n - 1] = db;
        let mut g = din.expect("requested");

        let base = 2 * self.config.backbone.len();
        for (i, spec) in self.config.head.iter().enumerate().rev() {
            if spec.resample {
                g = upsample2_backward(&g);
            }
            relu_backward(&tape.head[i].pre, &mut g);
            let (w, _) = self.head_params(i);
            let (dw, db, din) = conv2d_backward(&tape.head[i].input, w, &g, 3, true);
            grads[base + 2 * i] = dw;
            grads[base + 2 * i + 1] = db;
            g = din.expect("requested");
        }

        let g_sim = avg_pool_backward(&g, self.config.correlation_pool);
        let features = &tape.features;
        let mut g_feat = FeatureMap::zeros(features.channels, features.height, features.width);
        let plane = features.plane_len();
        for (s, st) in tape.scales.iter().enumerate() {
            let gs = g_sim.plane(s);
            for (bi, patch) in st.patches.iter().enumerate() {
                let mut gb = FeatureMap::zeros(1, features.height, features.width);
                let mut any = false;
                for i in 0..plane {
                    if st.winner[i] == bi && gs[i] != T::zero() {
                        gb.data[i] = gs[i];
                        any = true;
                    }
                }
                if !any {
                    continue;
                }
                let (df, dp) = correlate_backward(features, patch, &gb);
                for (a, b) in g_feat.data.iter_mut().zip(&df.data) {
                    *a = *a + *b;
                }
                for (idx, d) in patch.argmax.iter().zip(&dp) {
                    g_feat.data[*idx] = g_feat.data[*idx] + *d;
                }
            }
        }

        let mut g = g_feat;
        for (i, spec) in self.config.backbone.iter().enumerate().rev() {
            if spec.resample {
                g = avg_pool_backward(&g, 2);
            }
            relu_backward(&tape.backbone[i].pre, &mut g);
            let (w, _) = self.backbone_params(i);
            let (dw, db, din) = conv2d_backward(&tape.backbone[i].input, w, &g, 3, i > 0);
            grads[2 * i] = dw;
            grads[2 * i + 1] = db;
            if let Some(din) = din {
                g = din;
            }
        }
        Ok(grads)
    }
}
