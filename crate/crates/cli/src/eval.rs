use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use ptt_core::eval::{evaluate, EvalConfig, EvalReport, Stratum, StratumMetrics};
use ptt_core::synth::Jitter;
use ptt_core::tensor::load_checkpoint;
use ptt_core::train::Trainer;

use crate::{manifest, Failure, Run};

pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// BEV IoU needed for a true positive.
    #[arg(long)]
    iou: Option<f64>,
    /// Seed of the proposal jitter and RoI sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate on exact ground-truth proposals.
    #[arg(long)]
    zero_jitter: bool,
    /// Eval config JSON; flags override it. Without one, the streaming
    /// settings of the checkpoint's training run are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct MetricsSummary {
    version: u32,
    iou_thr: f64,
    seed: u64,
    unrefined: usize,
    refined: BTreeMap<&'static str, StratumMetrics>,
    baseline: BTreeMap<&'static str, StratumMetrics>,
}

fn named(m: &BTreeMap<Stratum, StratumMetrics>) -> BTreeMap<&'static str, StratumMetrics> {
    m.iter().map(|(s, v)| (s.name(), *v)).collect()
}

fn value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn metrics_csv(r: &EvalReport) -> String {
    let mut s = String::from("stratum,metric,value\n");
    for st in Stratum::ALL {
        let (m, b) = (&r.refined[&st], &r.baseline[&st]);
        let name = st.name();
        for (metric, v) in [
            ("ap", value(m.ap)),
            ("aph", value(m.aph)),
            ("baseline_ap", value(b.ap)),
            ("baseline_aph", value(b.aph)),
            ("num_gt", m.num_gt.to_string()),
            ("num_det", m.num_det.to_string()),
        ] {
            writeln!(s, "{name},{metric},{v}").unwrap();
        }
    }
    s
}

pub fn run(run: &Run, a: Args) -> anyhow::Result<()> {
    if !a.ckpt.is_file() {
        return Err(Failure::usage(format!(
            "checkpoint {} not found",
            a.ckpt.display()
        )));
    }
    let ckpt = load_checkpoint(&a.ckpt)
        .map_err(|e| Failure::usage(format!("checkpoint {}: {e}", a.ckpt.display())))?;
    let trainer = Trainer::from_checkpoint(&ckpt).map_err(Failure::usage)?;
    let ds = crate::load_dataset(&a.data)?;

    let mut cfg: EvalConfig = match &a.config {
        Some(p) => crate::load_config(Some(p))?,
        None => EvalConfig {
            stream: trainer.cfg.stream,
            ..EvalConfig::default()
        },
    };
    if let Some(v) = a.iou {
        cfg.iou_thr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.zero_jitter {
        cfg.stream.jitter = Jitter::ZERO;
    }
    if !(0.0..=1.0).contains(&cfg.iou_thr) {
        return Err(Failure::usage("--iou must lie in [0, 1]"));
    }

    let report = evaluate(&ds, &trainer.model, &trainer.store, &cfg)?;
    for st in Stratum::ALL {
        let (m, b) = (&report.refined[&st], &report.baseline[&st]);
        println!(
            "{:>3}: AP {} APH {} | baseline AP {} APH {} | {} gt",
            st.name(),
            value(m.ap),
            value(m.aph),
            value(b.ap),
            value(b.aph),
            m.num_gt
        );
    }
    let summary = MetricsSummary {
        version: METRICS_VERSION,
        iou_thr: cfg.iou_thr,
        seed: cfg.seed,
        unrefined: report.unrefined,
        refined: named(&report.refined),
        baseline: named(&report.baseline),
    };
    crate::create_dir(&a.out)?;
    let outputs = vec![
        crate::write_text(&a.out.join("metrics.csv"), &metrics_csv(&report))?,
        crate::write_text(
            &a.out.join("metrics.json"),
            &(serde_json::to_string_pretty(&summary)? + "\n"),
        )?,
    ];
    let mut config = serde_json::to_value(cfg)?;
    config["checkpoint"] = serde_json::to_value(&a.ckpt)?;
    config["data"] = serde_json::to_value(&a.data)?;
    manifest::write(
        run,
        &a.out.join("manifest.json"),
        "eval",
        config,
        Some(cfg.seed),
        outputs,
    )?;
    Ok(())
}
