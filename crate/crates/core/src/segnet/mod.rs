//! Two-stream saliency segmentation network.
//!
//! An appearance encoder (RGB) and a motion encoder (flow) each produce
//! features at strides 4, 8, 16 and 32. Per level the two are merged and
//! gated by channel attention then spatial attention, and a decoder with
//! nearest-neighbour upsampling and skip connections maps the fused
//! pyramid back to a full-resolution logit map.

mod checkpoint;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use tape::{sigmoid, NodeId, Tape, Tensor, PROB_EPS};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{colorize, FlowField};
use crate::media::{Image, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowInputMode {
    /// Color-wheel rendering, self-normalized per field.
    Colorized3ch,
    /// `(u, v)` in pixels.
    Raw2ch,
}

impl FlowInputMode {
    pub fn channels(self) -> usize {
        match self {
            FlowInputMode::Colorized3ch => 3,
            FlowInputMode::Raw2ch => 2,
        }
    }
}

/// How appearance and motion features are merged before attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Channel concatenation followed by a 1x1 projection.
    Concat,
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Channels at strides 4, 8, 16, 32.
    pub encoder_widths: [usize; 4],
    pub flow_input_mode: FlowInputMode,
    pub fusion: FusionMode,
    /// Channel-attention MLP reduction ratio.
    pub attention_reduction: usize,
    pub spatial_kernel: usize,
    /// Channels at strides 16, 8, 4 and 2.
    pub decoder_widths: [usize; 4],
    /// `(height, width)`, both multiples of 32.
    pub input_size: (usize, usize),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoder_widths: [32, 64, 128, 256],
            flow_input_mode: FlowInputMode::Colorized3ch,
            fusion: FusionMode::Concat,
            attention_reduction: 8,
            spatial_kernel: 7,
            decoder_widths: [128, 64, 32, 16],
            input_size: (128, 128),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.encoder_widths;
        if w[0] == 0 || w.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidConfig(format!("encoder widths must be positive and strictly increasing, got {w:?}")));
        }
        if self.decoder_widths.contains(&0) {
            return Err(Error::InvalidConfig("decoder widths must be positive".into()));
        }
        if self.attention_reduction == 0 || self.spatial_kernel % 2 == 0 {
            return Err(Error::InvalidConfig("attention_reduction must be >= 1 and spatial_kernel odd".into()));
        }
        let (h, wd) = self.input_size;
        if h == 0 || wd == 0 || h % 32 != 0 || wd % 32 != 0 {
            return Err(Error::InvalidConfig(format!("input size {h}x{wd} must be a nonzero multiple of 32")));
        }
        Ok(())
    }

    /// Same architecture at another input resolution.
    pub fn with_input_size(&self, h: usize, w: usize) -> Self {
        Self {
            input_size: (h, w),
            ..self.clone()
        }
    }
}

/// `(name, cin, cout, kernel, stride, bias, init)` to a registered conv.
type ConvMaker<'a> = dyn FnMut(&str, usize, usize, usize, usize, bool, Init) -> Conv + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Uniform with variance `2 / fan_in`.
    He,
    /// He scaled by 0.1.
    Small,
    Zero,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: (usize, usize, usize, usize),
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: Option<usize>,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct Encoder {
    stem: Conv,
    stem2: Conv,
    stages: [(Conv, Conv); 3],
}

#[derive(Debug, Clone)]
struct Fusion {
    proj: Option<Conv>,
    fc1: Conv,
    fc2: Conv,
    spatial: Conv,
}

/// Floor on the channel-attention MLP width for narrow levels.
const MIN_ATTENTION_HIDDEN: usize = 4;

/// Parameter table plus the index of every layer into it.
#[derive(Debug, Clone)]
struct Architecture {
    specs: Vec<ParamSpec>,
    appearance: Encoder,
    motion: Encoder,
    fusion: Vec<Fusion>,
    decoder: Vec<Conv>,
    head: Conv,
}

impl Architecture {
    fn new(config: &NetworkConfig) -> Self {
        let mut specs = Vec::new();
        let mut conv = |name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool, init: Init| {
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                shape: (cout, cin, k, k),
                init,
            });
            let w = specs.len() - 1;
            let b = bias.then(|| {
                specs.push(ParamSpec {
                    name: format!("{name}.bias"),
                    shape: (1, cout, 1, 1),
                    init: Init::Zero,
                });
                specs.len() - 1
            });
            Conv { w, b, stride, pad: k / 2 }
        };
        let ew = config.encoder_widths;
        let encoder = |prefix: &str, cin: usize, conv: &mut ConvMaker| Encoder {
            stem: conv(&format!("{prefix}.stem"), cin, ew[0], 7, 4, true, Init::He),
            stem2: conv(&format!("{prefix}.stem2"), ew[0], ew[0], 3, 1, true, Init::He),
            stages: [1, 2, 3].map(|i| {
                (
                    conv(&format!("{prefix}.stage{}.down", i + 1), ew[i - 1], ew[i], 3, 2, true, Init::He),
                    conv(&format!("{prefix}.stage{}.conv", i + 1), ew[i], ew[i], 3, 1, true, Init::He),
                )
            }),
        };
        let appearance = encoder("appearance", 3, &mut conv);
        let motion = encoder("motion", config.flow_input_mode.channels(), &mut conv);
        let fusion = (0..4)
            .map(|i| {
                let c = ew[i];
                let hidden = (c / config.attention_reduction).max(MIN_ATTENTION_HIDDEN).min(c);
                let name = format!("fusion{}", i + 1);
                Fusion {
                    proj: (config.fusion == FusionMode::Concat).then(|| conv(&format!("{name}.proj"), 2 * c, c, 1, 1, true, Init::He)),
                    fc1: conv(&format!("{name}.channel_fc1"), c, hidden, 1, 1, false, Init::He),
                    fc2: conv(&format!("{name}.channel_fc2"), hidden, c, 1, 1, false, Init::He),
                    spatial: conv(&format!("{name}.spatial"), 2, 1, config.spatial_kernel, 1, true, Init::He),
                }
            })
            .collect();
        let dw = config.decoder_widths;
        let mut decoder = Vec::new();
        let mut prev = ew[3];
        for (j, level) in [2usize, 1, 0].into_iter().enumerate() {
            decoder.push(conv(&format!("decoder.up{}", j + 1), prev + ew[level], dw[j], 3, 1, true, Init::He));
            prev = dw[j];
        }
        decoder.push(conv("decoder.up4", prev, dw[3], 3, 1, true, Init::He));
        let head = conv("head", dw[3], 1, 3, 1, true, Init::Small);
        Self {
            specs,
            appearance,
            motion,
            fusion,
            decoder,
            head,
        }
    }
}

/// Total trainable scalars of a configuration.
pub fn count_parameters(config: &NetworkConfig) -> usize {
    Architecture::new(config)
        .specs
        .iter()
        .map(|s| s.shape.0 * s.shape.1 * s.shape.2 * s.shape.3)
        .sum()
}

/// Switches that alter the forward pass for testing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Forces channel and spatial attention maps to 1.
    pub bypass_attention: bool,
}

/// Encoder stream selector for weight import.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Appearance,
    Motion,
}

impl Stream {
    fn prefix(self) -> &'static str {
        match self {
            Stream::Appearance => "appearance.",
            Stream::Motion => "motion.",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Array2<f64>,
    pub probability: Array2<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Array2<f64>) -> Self {
        let probability = logits.mapv(sigmoid);
        Self { logits, probability }
    }

    pub fn to_saliency(&self) -> SaliencyMap {
        SaliencyMap::new(self.probability.mapv(|p| p as f32)).expect("probabilities lie in [0, 1]")
    }
}

#[derive(Debug, Clone)]
pub struct SegNet {
    config: NetworkConfig,
    arch: Architecture,
    params: Vec<Tensor>,
}

impl SegNet {
    /// Randomly initialized network.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .specs
            .iter()
            .map(|s| {
                let fan_in = (s.shape.1 * s.shape.2 * s.shape.3) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let scale = match s.init {
                    Init::He => bound,
                    Init::Small => 0.1 * bound,
                    Init::Zero => 0.0,
                };
                if scale == 0.0 {
                    Tensor::zeros(s.shape)
                } else {
                    Tensor::from_shape_fn(s.shape, |_| rng.random_range(-scale..scale))
                }
            })
            .collect();
        Ok(Self { config, arch, params })
    }

    /// Network from explicit tensors, in [`SegNet::param_names`] order.
    pub fn from_parameters(config: NetworkConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(&config);
        if params.len() != arch.specs.len() {
            return Err(Error::ShapeMismatch(format!("expected {} tensors, got {}", arch.specs.len(), params.len())));
        }
        for (s, p) in arch.specs.iter().zip(&params) {
            if p.dim() != s.shape {
                return Err(Error::ShapeMismatch(format!("{}: expected {:?}, got {:?}", s.name, s.shape, p.dim())));
            }
        }
        Ok(Self { config, arch, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.arch.specs.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Zeroes the output layer, making every prediction exactly 0.5.
    pub fn zero_head(&mut self) {
        let head = self.arch.head;
        self.params[head.w].fill(0.0);
        if let Some(b) = head.b {
            self.params[b].fill(0.0);
        }
    }

    /// Copies externally trained tensors into one encoder stream. Names are
    /// relative to the stream (e.g. `stage2.down.weight`). Returns the number
    /// of tensors imported.
    pub fn import_encoder(&mut self, stream: Stream, tensors: &[(String, Tensor)]) -> Result<usize> {
        for (name, value) in tensors {
            let full = format!("{}{name}", stream.prefix());
            let idx = self
                .arch
                .specs
                .iter()
                .position(|s| s.name == full)
                .ok_or_else(|| Error::ShapeMismatch(format!("no encoder tensor named {full}")))?;
            if value.dim() != self.arch.specs[idx].shape {
                return Err(Error::ShapeMismatch(format!(
                    "{full}: expected {:?}, got {:?}",
                    self.arch.specs[idx].shape,
                    value.dim()
                )));
            }
        }
        for (name, value) in tensors {
            let full = format!("{}{name}", stream.prefix());
            let idx = self.arch.specs.iter().position(|s| s.name == full).expect("checked above");
            self.params[idx] = value.clone();
        }
        Ok(tensors.len())
    }

    fn conv(&self, t: &mut Tape, x: NodeId, c: Conv) -> NodeId {
        let w = t.param(c.w, &self.params[c.w]);
        let b = c.b.map(|b| t.param(b, &self.params[b]));
        t.conv2d(x, w, b, c.stride, c.pad)
    }

    fn conv_relu(&self, t: &mut Tape, x: NodeId, c: Conv) -> NodeId {
        let y = self.conv(t, x, c);
        t.relu(y)
    }

    fn encode(&self, t: &mut Tape, x: NodeId, enc: &Encoder) -> [NodeId; 4] {
        let h = self.conv_relu(t, x, enc.stem);
        let f1 = self.conv_relu(t, h, enc.stem2);
        let mut feats = [f1; 4];
        for (i, &(down, conv)) in enc.stages.iter().enumerate() {
            let h = self.conv_relu(t, feats[i], down);
            feats[i + 1] = self.conv_relu(t, h, conv);
        }
        feats
    }

    fn fuse(&self, t: &mut Tape, a: NodeId, m: NodeId, f: &Fusion, opts: ForwardOptions) -> NodeId {
        let x = match f.proj {
            Some(proj) => {
                let cat = t.concat(&[a, m]);
                self.conv(t, cat, proj)
            }
            None => t.add(a, m),
        };
        if opts.bypass_attention {
            return x;
        }
        let avg = t.global_avg(x);
        let max = t.global_max(x);
        let mlp = |t: &mut Tape, v: NodeId| {
            let h = self.conv_relu(t, v, f.fc1);
            self.conv(t, h, f.fc2)
        };
        let ca_avg = mlp(t, avg);
        let ca_max = mlp(t, max);
        let ca = t.add(ca_avg, ca_max);
        let ca = t.sigmoid(ca);
        let x = t.mul(x, ca);
        let mean = t.channel_mean(x);
        let cmax = t.channel_max(x);
        let desc = t.concat(&[mean, cmax]);
        let sa = self.conv(t, desc, f.spatial);
        let sa = t.sigmoid(sa);
        t.mul(x, sa)
    }

    /// Appends the network to `t`; returns the `(N, 1, H, W)` logit node.
    pub fn graph(&self, t: &mut Tape, image: NodeId, motion: NodeId, opts: ForwardOptions) -> NodeId {
        let fa = self.encode(t, image, &self.arch.appearance);
        let fm = self.encode(t, motion, &self.arch.motion);
        let fused: Vec<NodeId> = (0..4).map(|i| self.fuse(t, fa[i], fm[i], &self.arch.fusion[i], opts)).collect();
        let mut d = fused[3];
        for (j, level) in [2usize, 1, 0].into_iter().enumerate() {
            let up = t.upsample(d, 2);
            let cat = t.concat(&[up, fused[level]]);
            d = self.conv_relu(t, cat, self.arch.decoder[j]);
        }
        let up = t.upsample(d, 2);
        d = self.conv_relu(t, up, self.arch.decoder[3]);
        let up = t.upsample(d, 2);
        self.conv(t, up, self.arch.head)
    }

    fn check_batch(&self, images: &Tensor, motion: &Tensor) -> Result<()> {
        let (n, c, h, w) = images.dim();
        let (n2, c2, h2, w2) = motion.dim();
        let expected = self.config.input_size;
        if c != 3 || c2 != self.config.flow_input_mode.channels() {
            return Err(Error::ShapeMismatch(format!("input channels {c}/{c2}")));
        }
        if n != n2 || (h, w) != (h2, w2) {
            return Err(Error::ShapeMismatch(format!("image batch {:?} vs motion batch {:?}", images.dim(), motion.dim())));
        }
        if (h, w) != expected {
            return Err(Error::ShapeMismatch(format!("input {h}x{w}, network expects {}x{}", expected.0, expected.1)));
        }
        Ok(())
    }

    /// Logits `(N, 1, H, W)` for encoded input batches.
    pub fn forward_batch(&self, images: &Tensor, motion: &Tensor, opts: ForwardOptions) -> Result<Tensor> {
        self.check_batch(images, motion)?;
        let mut t = Tape::new();
        let a = t.constant(images.clone());
        let m = t.constant(motion.clone());
        let z = self.graph(&mut t, a, m, opts);
        Ok(t.value(z).clone())
    }

    /// Loss and per-parameter gradients for one batch.
    pub fn loss_and_gradients(&self, images: &Tensor, motion: &Tensor, masks: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        self.check_batch(images, motion)?;
        let (n, _, h, w) = images.dim();
        if masks.dim() != (n, 1, h, w) {
            return Err(Error::ShapeMismatch(format!("mask batch {:?}", masks.dim())));
        }
        let mut t = Tape::new();
        let a = t.constant(images.clone());
        let m = t.constant(motion.clone());
        let z = self.graph(&mut t, a, m, ForwardOptions::default());
        let loss = t.bce(z, masks.clone());
        let value = t.value(loss)[[0, 0, 0, 0]];
        let mut grads = t.backward(loss);
        let out = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| grads.remove(&i).unwrap_or_else(|| Tensor::zeros(p.dim())))
            .collect();
        Ok((value, out))
    }

    pub fn forward(&self, image: &Image, flow: &FlowField) -> Result<Prediction> {
        self.forward_with(image, flow, ForwardOptions::default())
    }

    pub fn forward_with(&self, image: &Image, flow: &FlowField, opts: ForwardOptions) -> Result<Prediction> {
        if image.dims() != flow.dims() {
            return Err(Error::ShapeMismatch(format!("image {:?} vs flow {:?}", image.dims(), flow.dims())));
        }
        let (a, m) = encode_inputs(&[(image, flow)], self.config.flow_input_mode);
        let z = self.forward_batch(&a, &m, opts)?;
        Ok(Prediction::from_logits(z.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned()))
    }
}

/// Stacks `(image, flow)` pairs into `(N, 3, H, W)` appearance and
/// `(N, C, H, W)` motion tensors. RGB and colorized flow are mapped to `[-1, 1]`.
pub fn encode_inputs(pairs: &[(&Image, &FlowField)], mode: FlowInputMode) -> (Tensor, Tensor) {
    let (h, w) = pairs.first().map(|(i, _)| i.dims()).unwrap_or((0, 0));
    let n = pairs.len();
    let mut a = Tensor::zeros((n, 3, h, w));
    let mut m = Tensor::zeros((n, mode.channels(), h, w));
    for (k, (image, flow)) in pairs.iter().enumerate() {
        let px = image.pixels();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    a[[k, c, y, x]] = px[[y, x, c]] as f64 * 2.0 - 1.0;
                }
            }
        }
        match mode {
            FlowInputMode::Colorized3ch => {
                let col = colorize(flow, None);
                let cp = col.pixels();
                for c in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            m[[k, c, y, x]] = cp[[y, x, c]] as f64 * 2.0 - 1.0;
                        }
                    }
                }
            }
            FlowInputMode::Raw2ch => {
                for y in 0..h {
                    for x in 0..w {
                        let (u, v) = flow.at(y, x);
                        m[[k, 0, y, x]] = u as f64;
                        m[[k, 1, y, x]] = v as f64;
                    }
                }
            }
        }
    }
    (a, m)
}

/// Masks as an `(N, 1, H, W)` target tensor.
pub fn encode_masks(masks: &[&SaliencyMap]) -> Tensor {
    let (h, w) = masks.first().map(|m| m.dims()).unwrap_or((0, 0));
    let mut t = Tensor::zeros((masks.len(), 1, h, w));
    for (k, mask) in masks.iter().enumerate() {
        for ((y, x), &v) in mask.values().indexed_iter() {
            t[[k, 0, y, x]] = v as f64;
        }
    }
    t
}
