//! Training loop, checkpoints and evaluation.

mod checkpoint;
mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Progress, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;

use crate::data::{scale_boxes, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, MetricRow};
use crate::model::{forward, infer, FusionNetParams, ForwardOptions, PairVars};
use crate::objectives::{loss_total, LossBreakdown, LossConfig};
use crate::tensor::{adam_step, AdamState, Graph, Tensor};

pub const LOSS_LOG: &str = "loss_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.fnck";
pub const LOG_HEADER: &str = "step,epoch,id,mse,grad,entropy,roi,total";

/// File name of the periodic checkpoint written after `step` steps.
pub fn step_checkpoint_name(step: u64) -> String {
    format!("step_{step:08}.fnck")
}

/// Indexable source of training samples.
pub trait Dataset {
    fn len(&self) -> usize;
    fn id(&self, index: usize) -> &str;
    /// Loads sample `index` at `size = (height, width)`.
    fn sample(&self, index: usize, size: (usize, usize)) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for DatasetManifest {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    fn sample(&self, index: usize, size: (usize, usize)) -> Result<Sample> {
        self.load_sample(&self.ids[index], Some(size))
    }
}

/// Samples held in memory, resized on access when needed.
#[derive(Clone, Debug, Default)]
pub struct InMemoryDataset {
    pub samples: Vec<Sample>,
}

impl InMemoryDataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        InMemoryDataset { samples }
    }
}

impl Dataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn id(&self, index: usize) -> &str {
        &self.samples[index].pair.id
    }

    fn sample(&self, index: usize, size: (usize, usize)) -> Result<Sample> {
        let s = &self.samples[index];
        let from = (s.pair.height(), s.pair.width());
        if from == size {
            return Ok(s.clone());
        }
        Ok(Sample {
            pair: s.pair.resized(size.0, size.1)?,
            annotations: scale_boxes(&s.annotations, from, size)?,
        })
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based global step.
    pub step: u64,
    pub epoch: u64,
    pub id: String,
    pub loss: LossBreakdown,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.epoch, self.id, l.mse, l.grad, l.entropy, l.roi, l.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepRecord>,
}

/// Visiting order of epoch `epoch`: a Fisher-Yates shuffle driven by
/// ChaCha8 seeded with `seed` on stream `epoch + 1`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// A freshly initialised checkpoint at step 0.
pub fn initial_checkpoint(config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    let params = FusionNetParams::<f32>::init(config.channels, config.seed, config.init)?;
    let adam = params.named_tensors().iter().map(|(_, t)| AdamState::new(t.shape())).collect();
    Ok(Checkpoint {
        config: config.clone(),
        params,
        adam,
        progress: Progress::default(),
    })
}

/// Trains from scratch. Writes the loss log and checkpoints to
/// `config.out_dir` when set.
pub fn train(config: &TrainConfig, data: &dyn Dataset) -> Result<TrainOutcome> {
    let ckpt = initial_checkpoint(config)?;
    run(ckpt, data, config.out_dir.as_deref(), false)
}

/// Continues a run from a checkpoint. The loss log in `out_dir`, if any, is
/// appended to.
pub fn resume(ckpt: Checkpoint, data: &dyn Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    ckpt.config.validate()?;
    run(ckpt, data, out_dir, true)
}

fn open_log(dir: &Path, append: bool) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LOSS_LOG);
    let fresh = !append || fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(w)
}

fn run(mut ckpt: Checkpoint, data: &dyn Dataset, out_dir: Option<&Path>, append: bool) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Contract("training needs at least one sample".into()));
    }
    let config = ckpt.config.clone();
    let loss_config = config.loss_config();
    let n = data.len() as u64;
    let mut writer = out_dir.map(|d| open_log(d, append)).transpose()?;
    let log_path = out_dir.map(|d| d.join(LOSS_LOG)).unwrap_or_default();
    let mut log = Vec::new();

    'epochs: while ckpt.progress.epoch < config.epochs {
        let epoch = ckpt.progress.epoch;
        let order = epoch_order(config.seed, epoch, data.len());
        for pos in ckpt.progress.step_in_epoch..n {
            if config.max_steps.is_some_and(|m| ckpt.progress.global_step >= m) {
                break 'epochs;
            }
            let step = ckpt.progress.global_step + 1;
            let index = order[pos as usize];
            let sample = data.sample(index, config.size())?;
            let loss = train_step(&mut ckpt, &sample, &loss_config)
                .map_err(|e| Error::Training { step, source: Box::new(e) })?;
            let record = StepRecord {
                step,
                epoch,
                id: data.id(index).to_string(),
                loss,
            };
            debug!("{}", record.csv_line());
            if let Some(w) = writer.as_mut() {
                writeln!(w, "{}", record.csv_line())
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(&log_path, e))?;
            }
            log.push(record);

            let p = &mut ckpt.progress;
            p.global_step = step;
            p.step_in_epoch = pos + 1;
            if p.step_in_epoch == n {
                p.epoch += 1;
                p.step_in_epoch = 0;
            }
            if let Some(dir) = out_dir {
                if config.checkpoint_every > 0 && step.is_multiple_of(config.checkpoint_every) {
                    ckpt.save(dir.join(step_checkpoint_name(step)))?;
                }
            }
        }
        info!("epoch {} done at step {}", epoch, ckpt.progress.global_step);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        ckpt.save(dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome { checkpoint: ckpt, log })
}

/// Forward, loss, backward and one Adam update of every parameter.
fn train_step(ckpt: &mut Checkpoint, sample: &Sample, loss_config: &LossConfig) -> Result<LossBreakdown> {
    let mut g = Graph::<f32>::new();
    let bound = ckpt.params.bind(&mut g, true);
    let inputs = PairVars::constants(&mut g, &sample.pair);
    let fwd = forward(&mut g, inputs, &bound, ForwardOptions::default())?;
    let loss = loss_total(&mut g, fwd.fused, inputs.ir, inputs.vis_y, &sample.annotations, loss_config)?;
    let breakdown = loss.breakdown(&g);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite { op: "loss_total" });
    }
    let mut grads = g.backward(loss.total)?;
    let mut grads: Vec<Tensor<f32>> = bound.vars().into_iter().map(|v| grads.take(v)).collect();
    if let Some(limit) = ckpt.config.clip_grad_norm {
        clip_gradients(&mut grads, limit);
    }
    let lr = ckpt.config.lr;
    for ((param, grad), state) in ckpt.params.tensors_mut().into_iter().zip(&grads).zip(&mut ckpt.adam) {
        adam_step(param, grad, state, lr)?;
    }
    Ok(breakdown)
}

/// Scales all gradients together so their joint L2 norm is at most `limit`.
pub fn clip_gradients(grads: &mut [Tensor<f32>], limit: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm > limit {
        let s = (limit / norm) as f32;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Metrics of the fused output against IR for every sample, at the
/// checkpoint's configured size.
pub fn evaluate(ckpt: &Checkpoint, data: &dyn Dataset, options: ForwardOptions) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation needs at least one sample".into()));
    }
    let mut rows = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let sample = data.sample(i, ckpt.config.size())?;
        let out = infer(&ckpt.params, &sample.pair, options)?;
        rows.push(MetricRow::compute(data.id(i), &out.fused, &sample.pair.ir, &sample.annotations)?);
    }
    MetricReport::from_rows(rows)
}

/// Parses a loss log written by [`train`].
pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Format { offset: 0, detail: format!("{} lacks the loss log header", path.display()) });
    }
    let mut offset = LOG_HEADER.len() as u64 + 1;
    let mut out = Vec::new();
    for line in lines {
        let bad = || Error::Format { offset, detail: format!("malformed loss log line: {line}") };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(StepRecord {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            id: f[2].to_string(),
            loss: LossBreakdown {
                mse: num(f[3])?,
                grad: num(f[4])?,
                entropy: num(f[5])?,
                roi: num(f[6])?,
                total: num(f[7])?,
            },
        });
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}
