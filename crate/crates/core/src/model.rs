//! The LeNet classifier: construction, SGD training, fine-tuning,
//! prediction, input gradients and checkpoint persistence.
//!
//! Architecture (Caffe LeNet sizes): conv 20@5x5 -> pool -> conv 50@5x5 ->
//! pool -> dense 500 -> relu -> dense 10. All arithmetic is f64.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::{Dataset, Image, IMG_PIXELS, IMG_SIDE};
use crate::error::{Error, Result};
use crate::fusion;
use crate::graph::{Graph, NodeId};
use crate::rng::{fnv1a, Rng};
use crate::tensor::Tensor;
use crate::transforms::{self, TransformSpec};

const CHECKPOINT_MAGIC: &[u8; 8] = b"AQNN0001";
/// Gradient work inside one batch is split into this many graphs; the split
/// is fixed so the reduction order (and therefore every bit of the result)
/// does not depend on how many worker threads are available.
const BATCH_CHUNKS: usize = 8;
const EVAL_CHUNK: usize = 64;
const SHUFFLE_SALT: u64 = 0x3u64 << 61;

/// Parameter layout of the network, in storage order.
const PARAM_SPECS: [(&str, &[usize]); 8] = [
    ("conv1.weight", &[20, 1, 5, 5]),
    ("conv1.bias", &[20]),
    ("conv2.weight", &[50, 20, 5, 5]),
    ("conv2.bias", &[50]),
    ("fc1.weight", &[800, 500]),
    ("fc1.bias", &[500]),
    ("fc2.weight", &[500, 10]),
    ("fc2.bias", &[10]),
];

/// Fan-in used for the uniform init of each parameter tensor.
fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        4 => shape[1] * shape[2] * shape[3],
        2 => shape[0],
        _ => 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Inverse decay: lr(iter) = learning_rate * (1 + gamma * iter)^(-power)
    pub lr_gamma: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            lr_gamma: 1e-4,
            lr_power: 0.75,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning recipe: base rate cut to a tenth, fewer epochs.
    pub fn finetune_default() -> Self {
        TrainConfig {
            epochs: 4,
            learning_rate: 0.001,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // epochs == 0 is allowed and means "no update"; the other knobs must
        // be strictly positive (weight decay may be zero).
        if self.batch_size == 0
            || self.learning_rate <= 0.0
            || self.lr_gamma <= 0.0
            || self.lr_power <= 0.0
            || self.momentum <= 0.0
            || self.weight_decay < 0.0
        {
            return Err(Error::Contract(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs: usize,
    pub test_accuracy: Option<f64>,
    pub kind: String,
}

/// LeNet parameters plus training metadata. This *is* the checkpoint; saving
/// and loading round-trip it bitwise.
#[derive(Debug, Clone)]
pub struct Model {
    params: Vec<Arc<Tensor>>,
    pub meta: ModelMeta,
}

/// Per-epoch numbers reported by training.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// One row per epoch; columns follow `eval_names`.
    pub eval_accuracies: Vec<Vec<f64>>,
    pub eval_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub class: u8,
}

pub fn argmax(values: &[f64]) -> u8 {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best as u8
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Fresh LeNet with fan-in-scaled uniform init.
pub fn build_lenet(seed: u64) -> Model {
    let mut rng = Rng::new(seed);
    let mut params = Vec::with_capacity(PARAM_SPECS.len());
    for (name, shape) in PARAM_SPECS {
        let numel: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; numel]
        } else {
            let limit = (3.0 / fan_in(shape) as f64).sqrt();
            (0..numel).map(|_| rng.range_f64(-limit, limit)).collect()
        };
        params.push(Arc::new(Tensor::new(shape.to_vec(), data).unwrap()));
    }
    Model {
        params,
        meta: ModelMeta { seed, epochs: 0, test_accuracy: None, kind: "raw".into() },
    }
}

impl Model {
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn params(&self) -> &[Arc<Tensor>] {
        &self.params
    }

    /// Build the forward graph over a batch of unit-scale pixel rows.
    /// Returns the graph, the input leaf, the parameter leaves (storage
    /// order) and the logits node.
    fn logits_graph(
        &self,
        pixels: Vec<f64>,
        n: usize,
    ) -> Result<(Graph, NodeId, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![n, 1, IMG_SIDE, IMG_SIDE], pixels)?);
        let p: Vec<NodeId> = self.params.iter().map(|t| g.param(Arc::clone(t))).collect();
        let c1 = g.conv2d(x, p[0], p[1])?;
        let s1 = g.maxpool2x2(c1)?;
        let c2 = g.conv2d(s1, p[2], p[3])?;
        let s2 = g.maxpool2x2(c2)?;
        let flat = g.flatten(s2);
        let f1 = g.dense(flat, p[4], p[5])?;
        let r1 = g.relu(f1);
        let logits = g.dense(r1, p[6], p[7])?;
        Ok((g, x, p, logits))
    }

    /// Logits for a batch of images, rows in input order.
    pub fn logits_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let n = images.len();
        let mut pixels = Vec::with_capacity(n * IMG_PIXELS);
        for img in images {
            pixels.extend(img.unit_pixels());
        }
        let (g, _, _, logits) = self.logits_graph(pixels, n)?;
        let flat = g.value(logits).data();
        Ok(flat.chunks_exact(10).map(|c| c.to_vec()).collect())
    }

    pub fn predict(&self, image: &Image) -> Result<Prediction> {
        if image.pixels().len() != IMG_PIXELS {
            return Err(Error::Contract("predict wants a 28x28 image".into()));
        }
        let logits = self.logits_batch(std::slice::from_ref(image))?.remove(0);
        let probabilities = softmax(&logits);
        let class = argmax(&probabilities);
        Ok(Prediction { logits, probabilities, class })
    }

    /// Gradient of the training loss at (image, label) w.r.t. the input
    /// pixels, on Unit scale, shaped 28x28.
    pub fn input_gradient(&self, image: &Image, label: u8) -> Result<Tensor> {
        if label > 9 {
            return Err(Error::Contract(format!("label {label} outside 0..=9")));
        }
        let (mut g, x, _, logits) = self.logits_graph(image.unit_pixels(), 1)?;
        let loss = g.softmax_cross_entropy(logits, &[label])?;
        g.backward(loss)?;
        g.grad(x)?.reshaped(vec![IMG_SIDE, IMG_SIDE])
    }
}

// ---------------------------------------------------------------------------
// training

struct ChunkResult {
    loss: f64,
    grads: Vec<Tensor>,
    count: usize,
}

fn run_chunk(model: &Model, images: &[Image], labels: &[u8]) -> Result<ChunkResult> {
    let n = images.len();
    let mut pixels = Vec::with_capacity(n * IMG_PIXELS);
    for img in images {
        pixels.extend(img.unit_pixels());
    }
    let (mut g, _x, param_nodes, logits) = model.logits_graph(pixels, n)?;
    let loss = g.softmax_cross_entropy(logits, labels)?;
    let loss_value = g.value(loss).data()[0];
    g.backward(loss)?;

    let mut grads = Vec::with_capacity(param_nodes.len());
    for id in param_nodes {
        grads.push(g.grad(id)?.clone());
    }
    Ok(ChunkResult { loss: loss_value, grads, count: n })
}

/// Train with SGD + momentum, inverse-decay schedule, weight decay.
/// `evals` are (name, dataset) pairs scored after every epoch.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    config: &TrainConfig,
    evals: &[(&str, &Dataset)],
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.scale() != crate::dataset::Scale::Unit {
        return Err(Error::Contract("training data must be Unit scale".into()));
    }
    if config.epochs == 0 {
        // A zero-epoch run must leave the checkpoint untouched, metadata
        // included.
        return Ok(TrainReport {
            eval_names: evals.iter().map(|(n, _)| n.to_string()).collect(),
            ..TrainReport::default()
        });
    }
    let mut report = TrainReport {
        eval_names: evals.iter().map(|(n, _)| n.to_string()).collect(),
        ..TrainReport::default()
    };
    let mut velocity: Vec<Tensor> =
        model.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let labels = dataset.labels();
    let mut iter_count = 0u64;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        Rng::for_index(config.seed ^ SHUFFLE_SALT, epoch as u64).shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_images: Vec<Image> =
                batch.iter().map(|&i| dataset.images()[i].clone()).collect();
            let batch_labels: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let n = batch.len();

            // Fixed chunking; chunk results are reduced in order below.
            let per = n.div_ceil(BATCH_CHUNKS);
            let chunk_results: Vec<Result<ChunkResult>> = batch_images
                .par_chunks(per)
                .zip(batch_labels.par_chunks(per))
                .map(|(imgs, labs)| run_chunk(model, imgs, labs))
                .collect();

            let lr = config.learning_rate
                * (1.0 + config.lr_gamma * iter_count as f64).powf(-config.lr_power);
            iter_count += 1;

            let mut batch_loss = 0.0;
            let mut total_grads: Vec<Tensor> =
                model.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            for cr in chunk_results {
                let cr = cr?;
                let w = cr.count as f64 / n as f64;
                batch_loss += w * cr.loss;
                for (acc, g) in total_grads.iter_mut().zip(&cr.grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += w * b;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("batch loss became {batch_loss}"),
                });
            }
            epoch_loss += batch_loss * n as f64;

            for ((param, vel), grad) in
                model.params.iter_mut().zip(&mut velocity).zip(&total_grads)
            {
                let p = Arc::make_mut(param);
                for ((pv, vv), gv) in
                    p.data_mut().iter_mut().zip(vel.data_mut()).zip(grad.data())
                {
                    *vv = config.momentum * *vv - lr * (gv + config.weight_decay * *pv);
                    *pv += *vv;
                }
            }
        }
        report.epoch_losses.push(epoch_loss / dataset.len() as f64);

        let mut row = Vec::with_capacity(evals.len());
        for (_, ds) in evals {
            row.push(evaluate(model, ds, None, false, config.seed)?);
        }
        report.eval_accuracies.push(row);
    }

    model.meta.seed = config.seed;
    model.meta.epochs += config.epochs;
    if let Some(idx) = report.eval_names.iter().position(|n| n == "test") {
        if let Some(last) = report.eval_accuracies.last() {
            model.meta.test_accuracy = Some(last[idx]);
        }
    }
    Ok(report)
}

/// Continue training on the mixed corpus at a reduced rate. The model is
/// marked fine-tuned; validation and test accuracies ride along in the
/// report like any other eval column.
pub fn finetune(
    model: &mut Model,
    corpus_train: &Dataset,
    corpus_val: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let mut evals: Vec<(&str, &Dataset)> = vec![("validation", corpus_val)];
    if let Some(t) = test {
        evals.push(("test", t));
    }
    let report = train(model, corpus_train, config, &evals)?;
    if config.epochs > 0 {
        model.meta.kind = "fine-tuned".into();
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// evaluation

/// Accuracy of the model over a labeled dataset, optionally transforming
/// each image first and/or fusing five-crop predictions. Transform noise is
/// seeded per image index, so thread count and order cannot change results.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    transform: Option<&TransformSpec>,
    fusion_flag: bool,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluate needs a non-empty dataset".into()));
    }
    let images = dataset.images();
    let correct: usize = images
        .par_chunks(EVAL_CHUNK)
        .enumerate()
        .map(|(chunk_idx, chunk)| -> Result<usize> {
            let base = chunk_idx * EVAL_CHUNK;
            let prepared: Vec<Image> = match transform {
                None => chunk.to_vec(),
                Some(spec) => chunk
                    .iter()
                    .enumerate()
                    .map(|(j, img)| transforms::apply(spec, img, seed, (base + j) as u64))
                    .collect::<Result<Vec<_>>>()?,
            };
            let mut hits = 0;
            if fusion_flag {
                for img in &prepared {
                    let (_, class) = fusion::fused_predict(model, img)?;
                    if Some(class) == img.label() {
                        hits += 1;
                    }
                }
            } else {
                let logits = model.logits_batch(&prepared)?;
                for (img, row) in prepared.iter().zip(&logits) {
                    if Some(argmax(row)) == img.label() {
                        hits += 1;
                    }
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / images.len() as f64)
}

// ---------------------------------------------------------------------------
// checkpoints

/// Serialized checkpoint bytes; the on-disk format and the hash input.
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(PARAM_SPECS.len() as u32).to_le_bytes());
    for ((name, _), tensor) in PARAM_SPECS.iter().zip(&model.params) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut meta = String::new();
    meta.push_str(&format!("seed={}\n", model.meta.seed));
    meta.push_str(&format!("epochs={}\n", model.meta.epochs));
    if let Some(acc) = model.meta.test_accuracy {
        meta.push_str(&format!("test_accuracy={acc:.6}\n"));
    }
    meta.push_str(&format!("kind={}\n", model.meta.kind));
    out.extend_from_slice(meta.as_bytes());
    out
}

/// FNV-1a fingerprint of the serialized checkpoint.
pub fn checkpoint_hash(model: &Model) -> u64 {
    fnv1a(&checkpoint_bytes(model))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&checkpoint_bytes(model))?;
    w.flush()?;
    Ok(())
}

fn read_exact_fmt(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated while reading {what}")))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_fmt(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad checkpoint magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }
    let mut b4 = [0u8; 4];
    read_exact_fmt(&mut r, &mut b4, "layer count")?;
    let layer_count = u32::from_le_bytes(b4) as usize;
    if layer_count != PARAM_SPECS.len() {
        return Err(Error::Format(format!(
            "checkpoint has {layer_count} layers, this architecture has {}",
            PARAM_SPECS.len()
        )));
    }

    let mut params = Vec::with_capacity(layer_count);
    for (expect_name, expect_shape) in PARAM_SPECS {
        read_exact_fmt(&mut r, &mut b4, "name length")?;
        let name_len = u32::from_le_bytes(b4) as usize;
        if name_len > 256 {
            return Err(Error::Format(format!("implausible layer name length {name_len}")));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact_fmt(&mut r, &mut name_bytes, "layer name")?;
        let name = String::from_utf8_lossy(&name_bytes).into_owned();
        if name != expect_name {
            return Err(Error::Format(format!(
                "layer '{name}' where '{expect_name}' was expected"
            )));
        }
        read_exact_fmt(&mut r, &mut b4, "rank")?;
        let rank = u32::from_le_bytes(b4) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact_fmt(&mut r, &mut b4, "dimension")?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        if shape != expect_shape {
            return Err(Error::Format(format!(
                "layer '{name}' has shape {shape:?}, expected {expect_shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        let mut data_bytes = vec![0u8; numel * 8];
        read_exact_fmt(&mut r, &mut data_bytes, "parameters")?;
        let data: Vec<f64> = data_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Arc::new(Tensor::new(shape, data)?));
    }

    let mut meta_text = String::new();
    r.read_to_string(&mut meta_text)
        .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
    let kv: BTreeMap<&str, &str> = meta_text
        .lines()
        .filter_map(|l| l.split_once('='))
        .collect();
    let meta = ModelMeta {
        seed: kv.get("seed").and_then(|v| v.parse().ok()).unwrap_or(0),
        epochs: kv.get("epochs").and_then(|v| v.parse().ok()).unwrap_or(0),
        test_accuracy: kv.get("test_accuracy").and_then(|v| v.parse().ok()),
        kind: kv.get("kind").unwrap_or(&"raw").to_string(),
    };
    Ok(Model { params, meta })
}
