//! Frame-by-frame streaming of a dataset through the surrogate proposal
//! generator, the tracker and the memory bank.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geom::{bev_iou, link_frame, Box3D, Trajectory};
use crate::membank::{BankError, MemoryBank, TrackId};
use crate::rng::{mix64, stream_id};
use crate::synth::{
    sample_roi_points, surrogate_rpn, FrameSample, Jitter, PointCloud, Proposal, DEFAULT_ROI_POINTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub jitter: Jitter,
    pub drop_prob: f64,
    pub link_iou: f64,
    pub roi_points: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            jitter: Jitter::default(),
            drop_prob: 0.0,
            link_iou: 0.5,
            roi_points: DEFAULT_ROI_POINTS,
        }
    }
}

/// One proposal of one frame with everything the refiner needs.
#[derive(Debug, Clone)]
pub struct Sample {
    pub frame_index: usize,
    pub track: TrackId,
    pub proposal: Proposal,
    pub trajectory: Trajectory,
    pub points: PointCloud,
    /// Best-overlapping ground truth box, if any overlaps.
    pub gt: Option<Box3D>,
}

/// Tracker plus bank state for one pass over a sequence.
pub struct Streamer {
    cfg: StreamConfig,
    bank: MemoryBank,
    next_id: TrackId,
    proposal_seed: u64,
    roi_seed: u64,
}

impl Streamer {
    /// `proposal_seed` drives the proposal jitter, `roi_seed` the RoI
    /// point sampling.
    pub fn new(cfg: StreamConfig, horizon: usize, proposal_seed: u64, roi_seed: u64) -> Self {
        Self {
            cfg,
            bank: MemoryBank::new(horizon),
            next_id: 0,
            proposal_seed,
            roi_seed,
        }
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    /// Proposals for a frame, linked to tracks and pushed to the bank.
    pub fn step(&mut self, frame: &FrameSample) -> Result<Vec<Sample>, BankError> {
        let proposals = surrogate_rpn(
            frame,
            &self.cfg.jitter,
            self.cfg.drop_prob,
            self.proposal_seed,
        );
        self.bank.record_scene_frame(frame.points.len());
        let latest = self.bank.latest_boxes();
        let latest_boxes: Vec<Box3D> = latest.iter().map(|(_, b)| *b).collect();
        let pboxes: Vec<Box3D> = proposals.iter().map(|p| p.bbox).collect();
        let link = link_frame(&latest_boxes, &pboxes, self.cfg.link_iou);
        let mut assigned = vec![0; proposals.len()];
        for &(pi, ti) in &link.matches {
            assigned[pi] = latest[ti].0;
        }
        for &pi in &link.unmatched {
            let id = self.next_id;
            self.next_id += 1;
            self.bank.register(id)?;
            assigned[pi] = id;
        }
        let mut boxes = BTreeMap::new();
        let mut rois = BTreeMap::new();
        for (pi, p) in proposals.iter().enumerate() {
            let id = assigned[pi];
            let seed = mix64(self.roi_seed ^ stream_id(&[frame.frame_index as u64, id]));
            rois.insert(
                id,
                sample_roi_points(&frame.points, &p.bbox, self.cfg.roi_points, seed),
            );
            boxes.insert(id, p.bbox);
        }
        self.bank.push_frame(&boxes, &rois)?;
        let mut out = Vec::with_capacity(proposals.len());
        for (pi, p) in proposals.into_iter().enumerate() {
            let id = assigned[pi];
            let gt = frame
                .gt
                .iter()
                .map(|g| (bev_iou(&p.bbox, &g.bbox), g.bbox))
                .filter(|(iou, _)| *iou > 0.0)
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, b)| b);
            out.push(Sample {
                frame_index: frame.frame_index,
                track: id,
                proposal: p,
                trajectory: self.bank.trajectory(id).expect("registered"),
                points: rois.remove(&id).expect("sampled"),
                gt,
            });
        }
        Ok(out)
    }
}
