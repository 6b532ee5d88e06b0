use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use ptt_core::membank::{
    complexity_model, storage_ratios, ComplexityParams, MemoryBank, Method, StoragePolicy,
    POINT_DIMS, RPN_FRAMES,
};
use ptt_core::rng::stream_id;
use ptt_core::synth::{sample_roi_points, DEFAULT_ROI_POINTS};

use crate::{manifest, Failure, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Policy {
    Ptt,
    Mppnet,
    Msf,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ptt")]
    policy: Policy,
    /// Frames to replay; the sequence is cycled when shorter.
    #[arg(long, default_value_t = 128)]
    frames: usize,
    /// Proposal history of the ptt policy.
    #[arg(long = "T", default_value_t = 64)]
    t: usize,
    /// Points sampled per object and frame.
    #[arg(long, default_value_t = DEFAULT_ROI_POINTS)]
    roi_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

const HEADER: &str = "frame,tracks,point_scalars,proposal_scalars,rpn_input_scalars,bytes_total,\
analytic_point,analytic_proposal,analytic_rpn";

/// Storage predicted for `frame` (zero-based) with windows filled up to the
/// policy's capacity: `(point, proposal, rpn)` scalars.
fn analytic(policy: StoragePolicy, frame: usize, k: usize, n: usize, f: usize) -> [usize; 3] {
    let seen = frame + 1;
    let rpn = seen.min(RPN_FRAMES) * f;
    match policy {
        StoragePolicy::Ptt { horizon } => [k * n, seen.min(horizon) * k * 9, rpn],
        StoragePolicy::Mppnet { frames } => [
            seen.min(frames) * k * (n / 2),
            seen.min(frames) * k * 9,
            rpn,
        ],
        StoragePolicy::Msf { frames } => [seen.min(frames) * f, k * 9, rpn],
    }
}

pub fn run(run: &Run, a: Args) -> anyhow::Result<()> {
    if a.t == 0 || a.roi_points == 0 {
        return Err(Failure::usage("--T and --roi-points must be at least 1"));
    }
    let ds = crate::load_dataset(&a.data)?;
    if ds.frames.is_empty() {
        return Err(Failure::usage("the dataset has no frames"));
    }
    let policy = match a.policy {
        Policy::Ptt => StoragePolicy::Ptt { horizon: a.t },
        Policy::Mppnet => StoragePolicy::MPPNET,
        Policy::Msf => StoragePolicy::MSF,
    };
    let mut bank = MemoryBank::with_policy(policy);
    let mut csv = String::from(HEADER);
    csv.push('\n');
    for fi in 0..a.frames {
        let frame = &ds.frames[fi % ds.frames.len()];
        let mut props = BTreeMap::new();
        let mut rois = BTreeMap::new();
        for g in &frame.gt {
            if !bank.contains(g.id) {
                bank.register(g.id)?;
            }
            props.insert(g.id, g.bbox);
            let seed = stream_id(&[a.seed, fi as u64, g.id]);
            rois.insert(
                g.id,
                sample_roi_points(&frame.points, &g.bbox, a.roi_points, seed),
            );
        }
        bank.record_scene_frame(frame.points.len());
        bank.push_frame(&props, &rois)?;
        let r = bank.storage_report();
        let f = frame.points.len() * POINT_DIMS;
        let [ap, aprop, arpn] = analytic(policy, fi, bank.len(), a.roi_points * POINT_DIMS, f);
        writeln!(
            csv,
            "{fi},{},{},{},{},{},{ap},{aprop},{arpn}",
            bank.len(),
            r.point_scalars,
            r.proposal_scalars,
            r.rpn_input_scalars,
            r.bytes_total
        )
        .unwrap();
    }

    let p = ComplexityParams::REFERENCE;
    let ratios = storage_ratios(&p);
    let table: BTreeMap<String, _> = Method::ALL
        .iter()
        .map(|&m| (format!("{m:?}"), complexity_model(m, &p)))
        .collect();
    println!(
        "reference: frame/proposals {:.1}x, points/proposals {:.1}x",
        ratios.frame_over_proposals, ratios.points_over_proposals
    );
    let report = serde_json::json!({
        "params": p,
        "frame_over_proposals": ratios.frame_over_proposals,
        "points_over_proposals": ratios.points_over_proposals,
        "table": table,
    });

    crate::create_dir(&a.out)?;
    let outputs = vec![
        crate::write_text(&a.out.join("storage.csv"), &csv)?,
        crate::write_text(
            &a.out.join("ratios.json"),
            &(serde_json::to_string_pretty(&report)? + "\n"),
        )?,
    ];
    let config = serde_json::json!({
        "data": a.data,
        "policy": policy,
        "frames": a.frames,
        "roi_points": a.roi_points,
    });
    manifest::write(
        run,
        &a.out.join("manifest.json"),
        "profile-mem",
        config,
        Some(a.seed),
        outputs,
    )?;
    Ok(())
}
