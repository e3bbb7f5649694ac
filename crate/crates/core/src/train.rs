//! Training loop, evaluation and latent-space export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::data::{self, BatchIterator, Dataset, Split, CLASSES};
use crate::error::{Error, Result};
use crate::model::{latents_of, Bcmem};
use crate::nn::{cosine_lr, softmax_cross_entropy, AdamW, AdamWConfig, Mode, Param, Tensor2D};
use crate::quad_reg::{
    cube_discriminant, discriminant_residual, quad_loss, quad_loss_backward, total_loss,
    QuadLossMode,
};

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub mode: QuadLossMode,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub data_dir: PathBuf,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Train on only the first `n` training images (10% of them held out).
    pub train_limit: Option<usize>,
    /// Rescale the global gradient to at most this L2 norm before each step.
    #[serde(default)]
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            lambda: 0.1,
            mode: QuadLossMode::Cube,
            seed: 42,
            patience: 20,
            data_dir: PathBuf::from("data/mnist"),
            out: None,
            log: None,
            train_limit: None,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !self.lambda.is_finite() {
            return bad("lambda must be finite");
        }
        if self.lambda < 0.0 {
            return Err(Error::NegativeLambda(self.lambda));
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("gradient clip norm must be positive");
            }
        }
        if self.train_limit == Some(0) {
            return bad("train limit must be positive");
        }
        Ok(())
    }

    /// Whether the regularizer contributes at all.
    pub fn regularized(&self) -> bool {
        self.lambda > 0.0 && self.mode != QuadLossMode::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub train_task_loss: f64,
    pub train_quad_loss: f64,
    pub val_loss: f64,
    pub val_task_loss: f64,
    pub val_quad_loss: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub task_loss: f64,
    pub quad_loss: f64,
    /// Mean of `|D (D³ - 1)|` over the latents.
    pub residual: f64,
}

impl EvalReport {
    pub fn total_loss(&self, lambda: f64) -> f64 {
        self.task_loss + lambda * self.quad_loss
    }
}

pub struct TrainOutcome {
    pub best: Bcmem,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub reports: Vec<EpochReport>,
}

/// Eval-mode pass over a dataset. `mode` selects which regularizer value is
/// reported; the residual always uses the cube head.
pub fn evaluate(model: &mut Bcmem, dataset: &Dataset, mode: QuadLossMode) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let head = model.cube_head();
    let probes = model.probe_forms();
    let (mut correct, mut task_sum, mut cube_sum, mut residual_sum) = (0usize, 0.0, 0.0, 0.0);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, labels) = dataset.batch(chunk);
        let z = model.encode(&x, Mode::Eval)?;
        let logits = model.classify(&z, Mode::Eval)?;
        let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
        task_sum += loss * chunk.len() as f64;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| **p == **l)
            .count();
        let latents = latents_of(&z);
        for lat in &latents {
            residual_sum += discriminant_residual(cube_discriminant(&head, lat));
        }
        if mode == QuadLossMode::Cube {
            cube_sum += quad_loss(&head, &probes, &latents, mode)? * chunk.len() as f64;
        }
    }
    let n = dataset.len() as f64;
    let quad = match mode {
        QuadLossMode::Cube => cube_sum / n,
        QuadLossMode::Probe => quad_loss(&head, &probes, &[], mode)?,
        QuadLossMode::None => 0.0,
    };
    Ok(EvalReport {
        samples: dataset.len(),
        accuracy: correct as f64 / n,
        task_loss: task_sum / n,
        quad_loss: quad,
        residual: residual_sum / n,
    })
}

pub fn argmax_rows(t: &Tensor2D) -> Vec<u8> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        for p in params.iter_mut() {
            p.grad.scale(max_norm / norm);
        }
    }
    norm
}

fn non_finite(tensor: &str, epoch: usize, step: usize) -> Error {
    Error::NonFinite {
        tensor: tensor.to_string(),
        epoch,
        step,
    }
}

/// Runs the training protocol on already-split data. Returns the model with
/// the lowest validation total loss.
pub fn train_on(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Split("training and validation sets must be non-empty".into()));
    }
    let mut model = Bcmem::new(config.seed);
    let mut opt = AdamW::new(AdamWConfig::default());
    let regularized = config.regularized();
    let eval_mode = if regularized { config.mode } else { QuadLossMode::None };

    let mut best: Option<(Bcmem, usize, f64)> = None;
    let mut stale = 0;
    let mut reports = Vec::new();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = cosine_lr(epoch, config.epochs, config.lr);
        let (mut task_sum, mut quad_sum, mut seen, mut steps) = (0.0, 0.0, 0usize, 0usize);

        for (step, batch) in
            BatchIterator::new(train.len(), config.batch_size, config.seed, epoch as u64).enumerate()
        {
            model.zero_grad();
            let (x, labels) = train.batch(&batch);
            let z = model.encode(&x, Mode::Train)?;
            if !z.is_finite() {
                return Err(non_finite("latent z", epoch, step));
            }
            let logits = model.classify(&z, Mode::Train)?;
            if !logits.is_finite() {
                return Err(non_finite("logits", epoch, step));
            }
            let (task, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            let mut dz = model.classifier.backward(&dlogits);

            let quad = if regularized {
                let latents = latents_of(&z);
                let grad = quad_loss_backward(&model.cube_head(), &model.probe_forms(), &latents, config.mode)?;
                for (r, g) in grad.latents.iter().enumerate() {
                    for (d, v) in dz.row_mut(r).iter_mut().zip(g) {
                        *d += config.lambda * v;
                    }
                }
                model.accumulate_quad_grads(&grad, config.lambda);
                grad.loss
            } else {
                0.0
            };
            let total = total_loss(task, quad, config.lambda)?;
            if !total.is_finite() {
                let culprit = if !quad.is_finite() { "quad loss" } else { "task loss" };
                return Err(non_finite(culprit, epoch, step));
            }
            model.encoder.backward(&dz);
            if let Some(name) = model.first_non_finite() {
                return Err(non_finite(&name, epoch, step));
            }
            if let Some(max_norm) = config.clip_grad_norm {
                clip_grad_norm(&mut model.params_mut(), max_norm);
            }
            opt.step(&mut model.params_mut(), lr);
            model.after_step();

            task_sum += task * batch.len() as f64;
            quad_sum += quad;
            seen += batch.len();
            steps += 1;
        }

        let val_report = evaluate(&mut model, val, eval_mode)?;
        let val_loss = val_report.total_loss(config.lambda);
        // per-step values; cube mode already averages within each batch
        let train_quad = quad_sum / steps as f64;
        let report = EpochReport {
            epoch,
            lr,
            train_task_loss: task_sum / seen as f64,
            train_quad_loss: train_quad,
            val_loss,
            val_task_loss: val_report.task_loss,
            val_quad_loss: val_report.quad_loss,
            val_accuracy: val_report.accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if !val_loss.is_finite() {
            return Err(non_finite("validation loss", epoch, steps));
        }
        on_epoch(&report)?;
        reports.push(report);

        let improved = best.as_ref().map_or(true, |(_, _, b)| val_loss < *b);
        if improved {
            best = Some((model.clone(), epoch, val_loss));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (best, best_epoch, best_val_loss) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_loss,
        reports,
    })
}

/// Loads data from `config.data_dir`, splits it, trains, and writes the best
/// checkpoint and the JSON-lines epoch log when paths are configured.
pub fn train(
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    let full = data::load_mnist(&config.data_dir, Split::Train)?;
    let (train_set, val_set) = match config.train_limit {
        None => data::split(&full, config.seed)?,
        Some(n) => {
            let subset = full.head(n);
            let val_count = ((subset.len() as f64) * 0.1).round().max(1.0) as usize;
            let (t, v) = data::stratified_split_indices(subset.labels(), val_count, config.seed)?;
            (subset.subset(&t), subset.subset(&v))
        }
    };

    let mut log = match &config.log {
        Some(path) => Some(BufWriter::new(
            File::create(path).map_err(|e| Error::io(path, e))?,
        )),
        None => None,
    };
    let log_path = config.log.clone().unwrap_or_default();
    let outcome = train_on(config, &train_set, &val_set, |report| {
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(report).expect("report serializes");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&log_path, e))?;
        }
        on_epoch(report);
        Ok(())
    })?;

    if let Some(out) = &config.out {
        let bytes = checkpoint_bytes(config, &outcome)?;
        checkpoint::save(out, &bytes)?;
    }
    Ok(outcome)
}

pub fn checkpoint_bytes(config: &TrainConfig, outcome: &TrainOutcome) -> Result<Vec<u8>> {
    let echo = serde_json::to_value(config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    checkpoint::encode(
        &outcome.best,
        echo,
        config.mode,
        Some(outcome.best_epoch),
        Some(outcome.best_val_loss),
    )
}

pub fn evaluate_checkpoint(ck: &mut Checkpoint, dataset: &Dataset) -> Result<EvalReport> {
    let mode = ck.header.loss_mode;
    evaluate(&mut ck.model, dataset, mode)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingRow {
    pub z: [f64; 3],
    pub label: u8,
    pub pred: u8,
}

/// Eval-mode latents and predictions, one row per sample in dataset order.
pub fn extract_embeddings(model: &mut Bcmem, dataset: &Dataset) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, labels) = dataset.batch(chunk);
        let z = model.encode(&x, Mode::Eval)?;
        let logits = model.classify(&z, Mode::Eval)?;
        for ((r, pred), label) in argmax_rows(&logits).into_iter().enumerate().zip(labels) {
            let zr = z.row(r);
            rows.push(EmbeddingRow {
                z: [zr[0], zr[1], zr[2]],
                label,
                pred,
            });
        }
    }
    Ok(rows)
}

pub const EMBEDDINGS_HEADER: &str = "z1,z2,z3,label,pred";

pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{EMBEDDINGS_HEADER}")?;
        for r in rows {
            writeln!(w, "{},{},{},{},{}", r.z[0], r.z[1], r.z[2], r.label, r.pred)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_csv(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(EMBEDDINGS_HEADER) {
        return Err(Error::Config(format!("{}: missing CSV header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Config(format!("{}: malformed row {}", path.display(), i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad());
            }
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let u = |s: &str| s.parse::<u8>().map_err(|_| bad());
            Ok(EmbeddingRow {
                z: [f(fields[0])?, f(fields[1])?, f(fields[2])?],
                label: u(fields[3])?,
                pred: u(fields[4])?,
            })
        })
        .collect()
}

/// Fraction of rows whose label matches the nearest class mean of the rows'
/// own latents. Classes absent from `rows` are ignored.
pub fn nearest_centroid_accuracy(rows: &[EmbeddingRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut sums = [[0.0f64; 3]; CLASSES];
    let mut counts = [0usize; CLASSES];
    for r in rows {
        let c = r.label as usize;
        counts[c] += 1;
        for k in 0..3 {
            sums[c][k] += r.z[k];
        }
    }
    let centroids: Vec<(usize, [f64; 3])> = (0..CLASSES)
        .filter(|&c| counts[c] > 0)
        .map(|c| (c, sums[c].map(|s| s / counts[c] as f64)))
        .collect();
    let correct = rows
        .iter()
        .filter(|r| {
            let nearest = centroids
                .iter()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = (0..3).map(|k| (r.z[k] - a[k]).powi(2)).sum();
                    let db: f64 = (0..3).map(|k| (r.z[k] - b[k]).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .map(|(c, _)| *c);
            nearest == Some(r.label as usize)
        })
        .count();
    correct as f64 / rows.len() as f64
}

pub fn classifier_accuracy(rows: &[EmbeddingRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.label == r.pred).count() as f64 / rows.len() as f64
}
