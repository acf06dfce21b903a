use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use serde_json::json;
use simflow_core::training::{train, train_from, TrainOutputs};
use simflow_core::{load_checkpoint, load_manifest, PairPool};

use super::write_json;
use crate::{effective_config, with_workers, TrainArgs};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn run(a: &TrainArgs) -> Result<()> {
    let mut config = effective_config(&a.common)?;
    let t = &mut config.training;
    if let Some(v) = a.steps {
        t.max_steps = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.input_size {
        t.input_size = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if !a.mixture.is_empty() {
        let mut mixture = BTreeMap::new();
        for (name, w) in &a.mixture {
            let w: f64 = w.parse().with_context(|| format!("weight of {name:?} is not a number"))?;
            if mixture.insert(name.clone(), w).is_some() {
                bail!("mixture names {name:?} twice");
            }
        }
        t.mixture = mixture;
    }
    let config = config.resolve();
    config.validate()?;

    let mut sources = BTreeMap::new();
    for (name, dir) in &a.manifests {
        let manifest = load_manifest(dir.as_ref()).with_context(|| format!("loading manifest {name:?}"))?;
        if sources.insert(name.clone(), PairPool::Manifest(manifest)).is_some() {
            bail!("manifest name {name:?} given twice");
        }
    }
    for name in config.training.mixture.keys() {
        if !sources.contains_key(name) {
            bail!("mixture names unknown manifest {name:?}");
        }
    }
    for (name, pool) in &sources {
        if pool.is_empty() && config.training.mixture.get(name).is_some_and(|w| *w > 0.0) {
            bail!("manifest {name:?} is empty");
        }
    }

    let created_with = json!({
        "command": "train",
        "config": config.to_json(),
        "manifests": a.manifests.iter().map(|(n, d)| (n.clone(), d.clone())).collect::<BTreeMap<_, _>>(),
    });
    let outputs = TrainOutputs {
        log_path: Some(a.out.join(TRAIN_LOG)),
        checkpoint_dir: Some(a.out.join(CHECKPOINT_DIR)),
        metadata: created_with.clone(),
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("effective_config.json"), &created_with)?;
    let outcome = with_workers(config.workers, || {
        Ok(match &a.init {
            Some(path) => train_from(load_checkpoint(path)?, &config.training, &sources, &outputs)?,
            None => train(&config.segnet, &config.training, &sources, &outputs)?,
        })
    })?;
    let last = outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("trained {} steps, final loss {last:.4}", outcome.summary.steps);
    for (name, share) in &outcome.summary.composition {
        println!("  {name}: {:.3} of draws (target {:.3})", share, outcome.summary.target[name]);
    }
    if let Some(ck) = outcome.checkpoints.last() {
        println!("checkpoint: {}", ck.display());
    }
    Ok(())
}
