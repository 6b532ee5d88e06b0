//! Training loop over a streamed synthetic sequence.

use serde::{Deserialize, Serialize};

use crate::encoders::EncodeError;
use crate::membank::BankError;
use crate::model::{compute_loss, LossConfig, ModelError, PttConfig, PttModel};
use crate::pipeline::{Sample, StreamConfig, Streamer};
use crate::rng::stream_id;
use crate::synth::Dataset;
use crate::tensor::{
    adam_step, AdamConfig, AdamState, Checkpoint, GradBuffer, Graph, ParamStore, Tensor,
    TensorError,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("the dataset has no frames")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: PttConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Objects per optimizer step.
    pub batch: usize,
    pub seed: u64,
    pub stream: StreamConfig,
    /// Draw fresh proposal jitter every epoch.
    pub resample_jitter: bool,
    /// Stops after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    pub schedule: LrSchedule,
    /// Largest gradient norm per step; larger gradients are rescaled.
    pub grad_clip: Option<f64>,
}

/// Learning rate as a function of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the initial rate down to zero at the last frame of
    /// the last epoch.
    Cosine,
    /// Cosine ramp from `1 / div_factor` of the rate up to the full rate
    /// over the first `pct_start` of training, then cosine decay to zero.
    OneCycle {
        pct_start: f64,
        div_factor: f64,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::OneCycle {
            pct_start: 0.4,
            div_factor: 10.0,
        }
    }
}

impl LrSchedule {
    /// Multiplier of the initial rate at `progress` in `[0, 1]`.
    pub fn factor(self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        let half_cos = |t: f64| 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        match self {
            Self::Constant => 1.0,
            Self::Cosine => half_cos(p),
            Self::OneCycle {
                pct_start,
                div_factor,
            } => {
                if p < pct_start {
                    let lo = 1.0 / div_factor;
                    1.0 - (1.0 - lo) * half_cos(p / pct_start)
                } else {
                    half_cos((p - pct_start) / (1.0 - pct_start))
                }
            }
        }
    }

    pub fn validate(self) -> Result<(), String> {
        match self {
            Self::OneCycle {
                pct_start,
                div_factor,
            } if !(0.0..1.0).contains(&pct_start) || !(div_factor >= 1.0) => {
                Err("one-cycle needs pct_start in [0, 1) and div_factor >= 1".into())
            }
            _ => Ok(()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: PttConfig::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            epochs: 3,
            batch: 4,
            seed: 0,
            stream: StreamConfig::default(),
            resample_jitter: true,
            max_steps: None,
            schedule: LrSchedule::default(),
            grad_clip: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_conf: f64,
    pub mean_reg: f64,
    pub samples: usize,
    pub steps: usize,
    /// Proposals without any valid RoI point.
    pub skipped: usize,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,mean_loss,mean_conf,mean_reg,samples,steps,skipped";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.mean_loss,
            self.mean_conf,
            self.mean_reg,
            self.samples,
            self.steps,
            self.skipped
        )
    }
}

/// Seeds of the proposal jitter and of the RoI sampling for one epoch.
pub fn epoch_seeds(seed: u64, epoch: usize, resample: bool) -> (u64, u64) {
    let e = if resample { epoch as u64 } else { 0 };
    (
        stream_id(&[seed, 0x5052_4f50, e]),
        stream_id(&[seed, 0x524f_4953, e]),
    )
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: PttModel,
    pub store: ParamStore,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub history: Vec<EpochStats>,
    /// Mean loss of every optimizer step, measured before the update.
    pub step_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.schedule.validate().map_err(TrainError::Config)?;
        if cfg.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(TrainError::Config("grad_clip must be positive".into()));
        }
        let mut store = ParamStore::new();
        let model = PttModel::new(&mut store, cfg.model, cfg.seed)?;
        let adam = AdamState::new(&store);
        Ok(Self {
            cfg,
            model,
            store,
            adam,
            epochs_done: 0,
            history: Vec::new(),
            step_losses: Vec::new(),
        })
    }

    fn steps_exhausted(&self) -> bool {
        self.cfg
            .max_steps
            .is_some_and(|m| self.step_losses.len() >= m)
    }

    /// Runs the remaining epochs.
    pub fn train(&mut self, ds: &Dataset) -> Result<(), TrainError> {
        while self.epochs_done < self.cfg.epochs && !self.steps_exhausted() {
            self.run_epoch(ds)?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self, ds: &Dataset) -> Result<EpochStats, TrainError> {
        if ds.frames.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let epoch = self.epochs_done;
        let (pseed, rseed) = epoch_seeds(self.cfg.seed, epoch, self.cfg.resample_jitter);
        let mut streamer = Streamer::new(self.cfg.stream, self.cfg.model.t, pseed, rseed);
        let mut stats = EpochStats {
            epoch,
            mean_loss: 0.0,
            mean_conf: 0.0,
            mean_reg: 0.0,
            samples: 0,
            steps: 0,
            skipped: 0,
        };
        let mut batch: Vec<Sample> = Vec::with_capacity(self.cfg.batch);
        let n_frames = ds.frames.len() as f64;
        let total = self.cfg.epochs.max(1) as f64;
        'frames: for (fi, frame) in ds.frames.iter().enumerate() {
            let progress = (epoch as f64 + fi as f64 / n_frames) / total;
            let lr = self.cfg.adam.lr * self.cfg.schedule.factor(progress);
            for s in streamer.step(frame)? {
                if s.points.valid_count() == 0 {
                    stats.skipped += 1;
                    continue;
                }
                batch.push(s);
                if batch.len() == self.cfg.batch.max(1) {
                    self.step(&batch, lr, &mut stats)?;
                    batch.clear();
                    if self.steps_exhausted() {
                        break 'frames;
                    }
                }
            }
        }
        if !batch.is_empty() && !self.steps_exhausted() {
            let lr = self.cfg.adam.lr * self.cfg.schedule.factor((epoch as f64 + 1.0) / total);
            self.step(&batch, lr, &mut stats)?;
        }
        if stats.samples > 0 {
            let n = stats.samples as f64;
            stats.mean_loss /= n;
            stats.mean_conf /= n;
            stats.mean_reg /= n;
        }
        self.epochs_done += 1;
        self.history.push(stats);
        Ok(stats)
    }

    /// Mean loss and gradient over `batch`, followed by one Adam update.
    fn step(
        &mut self,
        batch: &[Sample],
        lr: f64,
        stats: &mut EpochStats,
    ) -> Result<(), TrainError> {
        let mut grads = GradBuffer::zeros_like(&self.store);
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for s in batch {
            let mut g = Graph::new(&self.store);
            let out = match self.model.forward(&mut g, &s.trajectory, &s.points) {
                Ok(o) => o,
                Err(ModelError::Encode(EncodeError::NoPoints)) => continue,
                Err(e) => return Err(e.into()),
            };
            let terms = compute_loss(
                &mut g,
                &out,
                &s.proposal.bbox,
                s.gt.as_ref(),
                &self.cfg.model.residual,
                &self.cfg.loss,
            )?;
            let l = g.value(terms.total).item()?;
            if !l.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: self.epochs_done,
                    step: self.step_losses.len(),
                });
            }
            let gr = g.backward(terms.total)?;
            grads.accumulate(&gr, scale);
            total += l;
            stats.mean_loss += l;
            stats.mean_conf += terms.conf;
            stats.mean_reg += terms.reg;
            stats.samples += 1;
        }
        if !grads.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: self.epochs_done,
                step: self.step_losses.len(),
            });
        }
        if let Some(max) = self.cfg.grad_clip {
            grads.clip_norm(max);
        }
        let adam = AdamConfig {
            lr,
            ..self.cfg.adam
        };
        adam_step(&mut self.store, &grads, &mut self.adam, &adam);
        self.step_losses.push(total * scale);
        stats.steps += 1;
        Ok(())
    }

    /// Parameters, optimizer state and progress.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "train": self.cfg,
            "epochs_done": self.epochs_done,
            "adam_step": self.adam.step,
            "history": self.history,
            "step_losses": self.step_losses,
        });
        let mut tensors = self.store.to_named();
        for (id, name, _) in self.store.iter() {
            tensors.push((format!("adam.m.{name}"), self.adam.m[id.index()].clone()));
            tensors.push((format!("adam.v.{name}"), self.adam.v[id.index()].clone()));
        }
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let bad = |m: String| TrainError::Checkpoint(m);
        let field = |k: &str| {
            ckpt.meta
                .get(k)
                .cloned()
                .ok_or_else(|| bad(format!("missing {k}")))
        };
        let cfg: TrainConfig =
            serde_json::from_value(field("train")?).map_err(|e| bad(e.to_string()))?;
        let mut t = Self::new(cfg)?;
        load_params(&mut t.store, ckpt)?;
        for (id, name, _) in t.store.iter() {
            let get = |p: &str| {
                ckpt.get(&format!("adam.{p}.{name}"))
                    .cloned()
                    .ok_or_else(|| bad(format!("missing optimizer state for {name}")))
            };
            let (m, v): (Tensor, Tensor) = (get("m")?, get("v")?);
            t.adam.m[id.index()] = m;
            t.adam.v[id.index()] = v;
        }
        let num = |k: &str| {
            field(k)?
                .as_u64()
                .ok_or_else(|| bad(format!("{k} is not an integer")))
        };
        t.adam.step = num("adam_step")?;
        t.epochs_done = num("epochs_done")? as usize;
        t.history = serde_json::from_value(field("history")?).map_err(|e| bad(e.to_string()))?;
        t.step_losses =
            serde_json::from_value(field("step_losses")?).map_err(|e| bad(e.to_string()))?;
        Ok(t)
    }
}

fn load_params(store: &mut ParamStore, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let named: Vec<(String, Tensor)> = store
        .iter()
        .map(|(_, name, _)| {
            ckpt.get(name)
                .map(|t| (name.to_string(), t.clone()))
                .ok_or_else(|| TrainError::Checkpoint(format!("missing parameter {name}")))
        })
        .collect::<Result<_, _>>()?;
    store.load_named(&named)?;
    Ok(())
}

/// Model and parameters stored in a checkpoint.
pub fn load_model(ckpt: &Checkpoint) -> Result<(PttModel, ParamStore), TrainError> {
    let t = Trainer::from_checkpoint(ckpt)?;
    Ok((t.model, t.store))
}
