//! Mini-batch Adam training of the encoder on adjacency-regression targets.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{backward, forward, init_params, EncoderConfig, EncoderParams, Gradients};
use crate::error::{Error, Result};
use crate::graph::{target_matrix, AdjacencyMatrix, WeightConfig};
use crate::image::Image;
use crate::labelmap::{LabelMap, MultiLabelVector};
use crate::retrieval::DescriptorStore;
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub shuffle_seed: u64,
    pub weight_config: WeightConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            shuffle_seed: 0,
            weight_config: WeightConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_epsilon >= 0.0) {
            return Err(Error::invalid("adam_epsilon must be non-negative"));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: EncoderParams,
    pub second_moment: EncoderParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Rejects non-finite gradients
/// before touching any state.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let p_tensors = params.tensors();
    let g_tensors = grads.tensors();
    if p_tensors.len() != g_tensors.len()
        || p_tensors.iter().zip(&g_tensors).any(|((_, p), (_, g))| p.len() != g.len())
    {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    if let Some((name, _)) = g_tensors.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }

    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - b2.powi(state.step.min(i32::MAX as u64) as i32);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_epsilon;

    let blocks = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for ((((_, p), (_, g)), (_, m)), (_, v)) in blocks {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean per-image loss of each epoch, measured with the parameters in
    /// effect when each batch was processed.
    pub epoch_losses: Vec<f64>,
    pub params: EncoderParams,
    pub seconds: f64,
}

fn check_dataset(dataset: &[(Image, LabelMap)], cfg: &EncoderConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    for (i, (img, map)) in dataset.iter().enumerate() {
        if map.num_classes() != cfg.num_classes {
            return Err(Error::Shape(format!(
                "item {i}: label map has {} classes, encoder expects {}",
                map.num_classes(),
                cfg.num_classes
            )));
        }
        if (img.channels(), img.height(), img.width())
            != (cfg.input_channels, cfg.input_height, cfg.input_width)
        {
            return Err(Error::Shape(format!("item {i}: image shape does not match encoder")));
        }
    }
    Ok(())
}

/// Trains from freshly initialized parameters.
pub fn train(
    dataset: &[(Image, LabelMap)],
    encoder_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainReport> {
    let params = init_params(encoder_cfg)?;
    train_from(params, dataset, encoder_cfg, train_cfg, |_, _| {})
}

/// Trains starting at `params`. Each epoch visits the dataset in an order
/// drawn from `(shuffle_seed, epoch)`; each batch sums per-image losses and
/// takes one Adam step. `on_epoch` receives the 1-based epoch and its mean
/// loss.
pub fn train_from(
    mut params: EncoderParams,
    dataset: &[(Image, LabelMap)],
    encoder_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    let start = Instant::now();
    encoder_cfg.validate()?;
    train_cfg.validate()?;
    params.check_shapes(encoder_cfg)?;
    check_dataset(dataset, encoder_cfg)?;

    let targets: Vec<AdjacencyMatrix> = dataset
        .iter()
        .map(|(_, map)| target_matrix(map, &train_cfg.weight_config))
        .collect::<Result<_>>()?;

    let mut state = AdamState::new(&params);
    let mut epoch_losses = Vec::with_capacity(train_cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..train_cfg.epochs {
        order.sort_unstable();
        SplitMix64::new(derive_seed(train_cfg.shuffle_seed, epoch as u64)).shuffle(&mut order);

        let mut epoch_sum = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let mut batch = batch.to_vec();
            batch.sort_unstable();
            let per_image: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| {
                    let fwd = forward(&params, encoder_cfg, &dataset[i].0)?;
                    backward(&params, encoder_cfg, &fwd, &targets[i])
                })
                .collect::<Result<_>>()?;

            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g) in &per_image {
                batch_loss += loss;
                grads.accumulate(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss in epoch {}", epoch + 1)));
            }
            epoch_sum += batch_loss;
            adam_step(&mut params, &grads, &mut state, train_cfg)?;
        }
        let mean = epoch_sum / dataset.len() as f64;
        on_epoch(epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses,
        params,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Descriptors for every archive item, keyed by id.
pub fn extract_descriptors<'a>(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    archive: &[(&'a str, &'a Image, &'a MultiLabelVector)],
) -> Result<DescriptorStore> {
    let descriptors: Vec<Vec<f64>> = archive
        .par_iter()
        .map(|(_, img, _)| forward(params, cfg, img).map(|r| r.descriptor))
        .collect::<Result<_>>()?;
    let mut store = DescriptorStore::new(cfg.gamma, cfg.num_classes);
    for ((id, _, labels), d) in archive.iter().zip(descriptors) {
        store.insert(id.to_string(), d, (*labels).clone())?;
    }
    Ok(store)
}
