//! Supervised training of [`SegNet`] on weighted mixtures of pair sources.

mod adam;
mod sampler;

pub use adam::Adam;
pub use sampler::MixtureSampler;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::media::{resize, resize_map, Image, ResizeMode, SaliencyMap};
use crate::pairs::{load_pair, DatasetManifest, TrainingPair};
use crate::segnet::{encode_inputs, encode_masks, save_checkpoint, NetworkConfig, Prediction, SegNet, PROB_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Fixed Adam step size; 0 freezes the weights.
    pub learning_rate: f64,
    pub batch_size: usize,
    /// `(height, width)` every pair is resized to; overrides the network's.
    pub input_size: (usize, usize),
    pub max_steps: usize,
    /// Source name to relative sampling weight.
    pub mixture: BTreeMap<String, f64>,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Random horizontal flips of image, flow (u negated) and mask.
    pub flip_augmentation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 16,
            input_size: (512, 512),
            max_steps: 20_000,
            mixture: BTreeMap::from([("simulated".into(), 2.0), ("davis".into(), 1.0), ("davsod".into(), 1.0)]),
            seed: 0,
            checkpoint_every: 1000,
            flip_augmentation: true,
        }
    }
}

impl TrainConfig {
    /// Single-CPU settings: batch 2 at 128x128 with a larger step size.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 2,
            input_size: (128, 128),
            max_steps: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::InvalidConfig("batch_size and max_steps must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("checkpoint_every must be >= 1".into()));
        }
        if self.mixture.values().any(|w| !(w.is_finite() && *w >= 0.0)) || self.mixture.values().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("mixture weights must be >= 0 with a positive sum".into()));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::InvalidConfig(format!("input size {h}x{w} must be a nonzero multiple of 32")));
        }
        Ok(())
    }
}

/// Mean per-pixel binary cross-entropy with probabilities clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn loss(pred: &Prediction, mask: &SaliencyMap) -> Result<f64> {
    if pred.probability.dim() != mask.dims() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs mask {:?}", pred.probability.dim(), mask.dims())));
    }
    let n = mask.values().len().max(1) as f64;
    let total: f64 = pred
        .probability
        .iter()
        .zip(mask.values().iter())
        .map(|(&p, &m)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let m = m as f64;
            -(m * p.ln() + (1.0 - m) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n)
}

/// Training pairs from disk or memory.
#[derive(Debug, Clone)]
pub enum PairPool {
    Manifest(DatasetManifest),
    Memory(Vec<TrainingPair>),
}

impl PairPool {
    pub fn len(&self) -> usize {
        match self {
            PairPool::Manifest(m) => m.len(),
            PairPool::Memory(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<TrainingPair> {
        match self {
            PairPool::Manifest(m) => load_pair(m, &m.entries[i]),
            PairPool::Memory(v) => Ok(v[i].clone()),
        }
    }
}

/// Resizes a pair to `(h, w)` and optionally mirrors it.
pub fn prepare_pair(pair: &TrainingPair, (h, w): (usize, usize), flip: bool) -> Result<(Image, FlowField, SaliencyMap)> {
    let (mut image, mut flow, mut mask) = if pair.image.dims() == (h, w) {
        (pair.image.clone(), pair.flow.clone(), pair.mask.clone())
    } else {
        (
            resize(&pair.image, h, w, ResizeMode::Bilinear)?,
            pair.flow.resize(h, w)?,
            resize_map(&pair.mask, h, w, ResizeMode::Nearest)?,
        )
    };
    if flip {
        image = image.flip_horizontal();
        flow = flow.flip_horizontal();
        mask = mask.flip_horizontal();
    }
    Ok((image, flow, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub source_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSummary {
    pub steps: usize,
    pub draws: BTreeMap<String, usize>,
    /// Empirical share of draws per source.
    pub composition: BTreeMap<String, f64>,
    /// Normalized mixture weights.
    pub target: BTreeMap<String, f64>,
}

/// Where training writes its artifacts; `None` skips that artifact.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub log_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stored as `created_with` in every checkpoint.
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: SegNet,
    pub log: Vec<StepRecord>,
    pub summary: CompositionSummary,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains a freshly initialized network (seeded by `config.seed`).
pub fn train(model: &NetworkConfig, config: &TrainConfig, sources: &BTreeMap<String, PairPool>, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    config.validate()?;
    let (h, w) = config.input_size;
    let net = SegNet::new(model.with_input_size(h, w), config.seed)?;
    train_from(net, config, sources, outputs)
}

/// Continues training `net`, whose input size must match `config.input_size`.
pub fn train_from(
    mut net: SegNet,
    config: &TrainConfig,
    sources: &BTreeMap<String, PairPool>,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    config.validate()?;
    if net.config().input_size != config.input_size {
        return Err(Error::InvalidConfig(format!(
            "network input {:?} differs from training input {:?}",
            net.config().input_size,
            config.input_size
        )));
    }
    let mut entries = Vec::new();
    for (name, weight) in &config.mixture {
        let pool = sources
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("mixture names unknown source {name:?}")))?;
        entries.push((name.clone(), (0..pool.len()).collect::<Vec<usize>>(), *weight));
    }
    for name in sources.keys().filter(|n| !config.mixture.contains_key(*n)) {
        log::warn!("source {name:?} has no mixture weight and is never sampled");
    }
    let mut sampler = MixtureSampler::new(entries, config.seed)?;
    let names: Vec<String> = sampler.names().to_vec();
    let target: BTreeMap<String, f64> = names.iter().cloned().zip(sampler.weights().iter().cloned()).collect();
    let mut flip_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f11b);
    let mut opt = Adam::new(config.learning_rate, net.params());

    let mut log_file = match &outputs.log_path {
        Some(p) => {
            crate::media::ensure_parent(p)?;
            Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?)
        }
        None => None,
    };
    let mut write_line = |value: &serde_json::Value| -> Result<()> {
        if let (Some(f), Some(p)) = (log_file.as_mut(), outputs.log_path.as_ref()) {
            writeln!(f, "{value}").map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    };

    let mut draws: BTreeMap<String, usize> = names.iter().map(|n| (n.clone(), 0)).collect();
    let mut log = Vec::with_capacity(config.max_steps);
    let mut checkpoints = Vec::new();
    let mode = net.config().flow_input_mode;
    for step in 1..=config.max_steps {
        let batch = sampler.sample_batch(config.batch_size);
        let mut prepared = Vec::with_capacity(batch.len());
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (s, i) in &batch {
            let name = &names[*s];
            *counts.entry(name.clone()).or_default() += 1;
            *draws.get_mut(name).expect("known source") += 1;
            let flip = config.flip_augmentation && flip_rng.random_bool(0.5);
            prepared.push(prepare_pair(&sources[name].get(*i)?, config.input_size, flip)?);
        }
        let inputs: Vec<(&Image, &FlowField)> = prepared.iter().map(|(i, f, _)| (i, f)).collect();
        let (a, m) = encode_inputs(&inputs, mode);
        let masks = encode_masks(&prepared.iter().map(|(_, _, m)| m).collect::<Vec<_>>());
        let (loss, grads) = net.loss_and_gradients(&a, &m, &masks)?;
        opt.update(net.params_mut(), &grads);
        let record = StepRecord {
            step,
            loss,
            lr: config.learning_rate,
            source_counts: counts,
        };
        write_line(&serde_json::to_value(&record).expect("record serializes"))?;
        log.push(record);
        if step % config.checkpoint_every == 0 || step == config.max_steps {
            if let Some(dir) = &outputs.checkpoint_dir {
                let name = if step == config.max_steps { "final.ckpt".to_string() } else { format!("step_{step:06}.ckpt") };
                let path = dir.join(name);
                let meta = serde_json::json!({ "step": step, "loss": loss, "train_config": config, "created_with": outputs.metadata });
                save_checkpoint(&net, &meta, &path)?;
                checkpoints.push(path);
            }
        }
    }

    let total: usize = draws.values().sum();
    let summary = CompositionSummary {
        steps: config.max_steps,
        composition: draws.iter().map(|(n, &c)| (n.clone(), if total > 0 { c as f64 / total as f64 } else { 0.0 })).collect(),
        draws,
        target,
    };
    write_line(&serde_json::json!({ "summary": &summary }))?;
    Ok(TrainOutcome {
        net,
        log,
        summary,
        checkpoints,
    })
}
