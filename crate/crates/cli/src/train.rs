use std::fmt::Write as _;
use std::path::PathBuf;

use ptt_core::tensor::{load_checkpoint, save_checkpoint};
use ptt_core::train::{EpochStats, TrainConfig, Trainer};

use crate::{manifest, Failure, Run};

pub const CHECKPOINT_FILE: &str = "checkpoint.ptt";

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    data: PathBuf,
    /// Trajectory length including the current frame.
    #[arg(long = "T")]
    t: Option<usize>,
    /// Short-memory frames.
    #[arg(long)]
    ms: Option<usize>,
    /// Future frames.
    #[arg(long)]
    mf: Option<usize>,
    /// Feature width.
    #[arg(long = "C")]
    c: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the regression loss.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Objects per optimizer step.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_long: bool,
    #[arg(long)]
    no_short: bool,
    #[arg(long)]
    no_future: bool,
    /// Training config JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint; its stored config is used unchanged.
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
    /// Stop once this many epochs are complete, leaving a resumable
    /// checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

impl Args {
    fn has_overrides(&self) -> bool {
        self.t.is_some()
            || self.ms.is_some()
            || self.mf.is_some()
            || self.c.is_some()
            || self.heads.is_some()
            || self.lr.is_some()
            || self.alpha.is_some()
            || self.epochs.is_some()
            || self.batch.is_some()
            || self.max_steps.is_some()
            || self.seed.is_some()
            || self.no_long
            || self.no_short
            || self.no_future
    }

    fn config(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg: TrainConfig = crate::load_config(self.config.as_deref())?;
        let m = &mut cfg.model;
        if let Some(t) = self.t {
            m.t = t;
            if self.ms.is_none() {
                m.m_s = (t / 4).max(1);
            }
        }
        if let Some(v) = self.ms {
            m.m_s = v;
        }
        if let Some(v) = self.mf {
            m.m_f = v;
        }
        if let Some(v) = self.c {
            m.encoder.c = v;
        }
        if let Some(v) = self.heads {
            m.attention.heads = v;
        }
        if self.no_long {
            m.use_long = false;
        }
        if self.no_short {
            m.use_short = false;
        }
        if self.no_future {
            m.m_f = 0;
        }
        if let Some(v) = self.lr {
            cfg.adam.lr = v;
        }
        if let Some(v) = self.alpha {
            cfg.loss.alpha = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if self.max_steps.is_some() {
            cfg.max_steps = self.max_steps;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if !(cfg.adam.lr.is_finite() && cfg.adam.lr >= 0.0) {
            return Err(Failure::usage("--lr must be finite and non-negative"));
        }
        if cfg.batch == 0 {
            return Err(Failure::usage("--batch must be at least 1"));
        }
        Ok(cfg)
    }
}

fn loss_csv(history: &[EpochStats]) -> String {
    let mut s = String::from(EpochStats::CSV_HEADER);
    s.push('\n');
    for h in history {
        s.push_str(&h.csv_row());
        s.push('\n');
    }
    s
}

fn steps_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{i},{l}").unwrap();
    }
    s
}

pub fn run(run: &Run, a: Args) -> anyhow::Result<()> {
    let ds = crate::load_dataset(&a.data)?;
    if ds.frames.is_empty() {
        return Err(Failure::usage("the dataset has no frames"));
    }
    let mut trainer = match &a.resume {
        Some(path) => {
            if a.has_overrides() {
                return Err(Failure::usage(
                    "--resume takes its configuration from the checkpoint",
                ));
            }
            let ckpt = load_checkpoint(path)
                .map_err(|e| Failure::usage(format!("checkpoint {}: {e}", path.display())))?;
            Trainer::from_checkpoint(&ckpt).map_err(Failure::usage)?
        }
        None => Trainer::new(a.config()?).map_err(Failure::usage)?,
    };
    let stop = a
        .stop_after
        .unwrap_or(trainer.cfg.epochs)
        .min(trainer.cfg.epochs);
    let exhausted = |t: &Trainer| t.cfg.max_steps.is_some_and(|m| t.step_losses.len() >= m);
    while trainer.epochs_done < stop && !exhausted(&trainer) {
        let s = trainer.run_epoch(&ds)?;
        println!(
            "epoch {}: loss {:.6} (conf {:.6}, reg {:.6}) over {} samples",
            s.epoch, s.mean_loss, s.mean_conf, s.mean_reg, s.samples
        );
    }
    if trainer
        .store
        .iter()
        .any(|(_, _, t)| t.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Failure::Numeric("parameters became non-finite".into()).into());
    }

    crate::create_dir(&a.out)?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt_path, &trainer.to_checkpoint())?;
    let outputs = vec![
        ckpt_path,
        crate::write_text(&a.out.join("loss.csv"), &loss_csv(&trainer.history))?,
        crate::write_text(&a.out.join("steps.csv"), &steps_csv(&trainer.step_losses))?,
    ];
    let mut config = serde_json::to_value(trainer.cfg)?;
    config["toggles"] = serde_json::json!({
        "long": trainer.cfg.model.use_long,
        "short": trainer.cfg.model.use_short,
        "future": trainer.cfg.model.m_f > 0,
    });
    config["resumed_from"] = serde_json::to_value(&a.resume)?;
    config["epochs_done"] = trainer.epochs_done.into();
    manifest::write(
        run,
        &a.out.join("manifest.json"),
        "train",
        config,
        Some(trainer.cfg.seed),
        outputs,
    )?;
    Ok(())
}
