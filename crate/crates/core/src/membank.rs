//! Streaming memory bank with scalar-level storage accounting.
//!
//! Under the default policy a track keeps at most `horizon` proposal boxes and
//! exactly one frame of region-of-interest points. Two comparison policies
//! keep what the multi-frame point baselines would have to keep, so measured
//! footprints can be set against the analytic complexity rows.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3D, Trajectory};
use crate::synth::PointCloud;

pub type TrackId = u64;

/// Scalars per stored point: x, y, z, intensity.
pub const POINT_DIMS: usize = 4;
/// Bytes per scalar in the accounting (32-bit floats).
pub const BYTES_PER_SCALAR: usize = 4;
/// Frames of accumulated whole clouds fed to the first stage.
pub const RPN_FRAMES: usize = 4;
pub const DEFAULT_MISS_BUDGET: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BankError {
    #[error("unknown track id {0}; register it before pushing")]
    UnknownTrack(TrackId),
    #[error("track id {0} is already registered")]
    DuplicateTrack(TrackId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoragePolicy {
    /// Current-frame points, `horizon` proposals per track.
    Ptt { horizon: usize },
    /// `frames` frames of half-size point samples and proposals per track.
    Mppnet { frames: usize },
    /// `frames` whole scene clouds, one proposal per track.
    Msf { frames: usize },
}

impl StoragePolicy {
    pub const MPPNET: StoragePolicy = StoragePolicy::Mppnet { frames: 16 };
    pub const MSF: StoragePolicy = StoragePolicy::Msf { frames: 8 };

    fn proposal_capacity(&self) -> usize {
        match *self {
            StoragePolicy::Ptt { horizon } => horizon,
            StoragePolicy::Mppnet { frames } => frames,
            StoragePolicy::Msf { .. } => 1,
        }
    }

    fn point_frames_per_track(&self) -> usize {
        match *self {
            StoragePolicy::Ptt { .. } => 1,
            StoragePolicy::Mppnet { frames } => frames,
            StoragePolicy::Msf { .. } => 0,
        }
    }

    fn scene_frames(&self) -> usize {
        match *self {
            StoragePolicy::Msf { frames } => frames,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct TrackSlot {
    history: VecDeque<Option<Box3D>>,
    points: VecDeque<PointCloud>,
    misses: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StorageReport {
    pub point_scalars: usize,
    pub proposal_scalars: usize,
    pub rpn_input_scalars: usize,
    pub bytes_total: usize,
}

impl StorageReport {
    pub const CSV_HEADER: &'static str = "frame,point_scalars,proposal_scalars,bytes_total";

    pub fn new(point_scalars: usize, proposal_scalars: usize, rpn_input_scalars: usize) -> Self {
        Self {
            point_scalars,
            proposal_scalars,
            rpn_input_scalars,
            bytes_total: BYTES_PER_SCALAR * (point_scalars + proposal_scalars + rpn_input_scalars),
        }
    }

    pub fn csv_row(&self, frame: usize) -> String {
        format!(
            "{frame},{},{},{}",
            self.point_scalars, self.proposal_scalars, self.bytes_total
        )
    }
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    policy: StoragePolicy,
    miss_budget: usize,
    tracks: BTreeMap<TrackId, TrackSlot>,
    scene_window: VecDeque<usize>,
}

impl MemoryBank {
    /// Bank with the current-frame-points policy and history `horizon`.
    pub fn new(horizon: usize) -> Self {
        Self::with_policy(StoragePolicy::Ptt { horizon })
    }

    pub fn with_policy(policy: StoragePolicy) -> Self {
        Self {
            policy,
            miss_budget: DEFAULT_MISS_BUDGET,
            tracks: BTreeMap::new(),
            scene_window: VecDeque::new(),
        }
    }

    pub fn with_miss_budget(mut self, budget: usize) -> Self {
        self.miss_budget = budget;
        self
    }

    pub fn policy(&self) -> StoragePolicy {
        self.policy
    }

    pub fn horizon(&self) -> usize {
        self.policy.proposal_capacity()
    }

    pub fn register(&mut self, id: TrackId) -> Result<(), BankError> {
        if self.tracks.contains_key(&id) {
            return Err(BankError::DuplicateTrack(id));
        }
        self.tracks.insert(id, TrackSlot::default());
        Ok(())
    }

    pub fn contains(&self, id: TrackId) -> bool {
        self.tracks.contains_key(&id)
    }

    pub fn track_ids(&self) -> impl Iterator<Item = TrackId> + '_ {
        self.tracks.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Notes the size of the whole scene cloud that produced this frame.
    pub fn record_scene_frame(&mut self, num_points: usize) {
        let keep = RPN_FRAMES.max(self.policy.scene_frames());
        self.scene_window.push_back(num_points * POINT_DIMS);
        while self.scene_window.len() > keep {
            self.scene_window.pop_front();
        }
    }

    /// Appends one frame. Every id must already be registered; nothing is
    /// modified when any id is unknown. Tracks absent from `proposals` record
    /// a gap, lose their points, and are evicted once they exceed the miss
    /// budget.
    pub fn push_frame(
        &mut self,
        proposals: &BTreeMap<TrackId, Box3D>,
        roi_points: &BTreeMap<TrackId, PointCloud>,
    ) -> Result<(), BankError> {
        if let Some(id) = proposals
            .keys()
            .chain(roi_points.keys())
            .find(|id| !self.tracks.contains_key(id))
        {
            return Err(BankError::UnknownTrack(*id));
        }
        let cap = self.policy.proposal_capacity();
        let point_frames = self.policy.point_frames_per_track();
        let budget = self.miss_budget;
        let mppnet = matches!(self.policy, StoragePolicy::Mppnet { .. });
        self.tracks.retain(|id, slot| {
            match proposals.get(id) {
                Some(b) => {
                    slot.history.push_back(Some(*b));
                    slot.misses = 0;
                }
                None => {
                    slot.history.push_back(None);
                    slot.misses += 1;
                }
            }
            while slot.history.len() > cap {
                slot.history.pop_front();
            }
            match roi_points.get(id) {
                Some(pc) if point_frames > 0 => {
                    let pc = if mppnet {
                        // proxy points: half of the sample
                        let half: Vec<usize> = (0..pc.len() / 2).collect();
                        pc.permuted(&half)
                    } else {
                        pc.clone()
                    };
                    slot.points.push_back(pc);
                    while slot.points.len() > point_frames {
                        slot.points.pop_front();
                    }
                }
                _ if !mppnet => slot.points.clear(),
                _ => {}
            }
            slot.misses <= budget
        });
        Ok(())
    }

    /// Time-ordered history of exactly `horizon` slots, padded with invalid
    /// entries at the old end.
    pub fn trajectory(&self, id: TrackId) -> Option<Trajectory> {
        let slot = self.tracks.get(&id)?;
        let cap = self.policy.proposal_capacity();
        let mut frames = vec![None; cap - slot.history.len()];
        frames.extend(slot.history.iter().copied());
        Some(Trajectory::new(frames))
    }

    pub fn current_points(&self, id: TrackId) -> Option<&PointCloud> {
        self.tracks.get(&id)?.points.back()
    }

    /// Most recent valid box of every live track, by ascending id.
    pub fn latest_boxes(&self) -> Vec<(TrackId, Box3D)> {
        self.tracks
            .iter()
            .filter_map(|(id, s)| s.history.iter().rev().flatten().next().map(|b| (*id, *b)))
            .collect()
    }

    pub fn storage_report(&self) -> StorageReport {
        let mut point_scalars = 0;
        let mut proposal_scalars = 0;
        for slot in self.tracks.values() {
            proposal_scalars += slot.history.iter().flatten().count() * Box3D::WIDTH;
            point_scalars += slot
                .points
                .iter()
                .map(|p| p.len() * POINT_DIMS)
                .sum::<usize>();
        }
        let n = self.scene_window.len();
        let rpn: usize = self
            .scene_window
            .iter()
            .skip(n.saturating_sub(RPN_FRAMES))
            .sum();
        let scene = self.policy.scene_frames();
        point_scalars += self
            .scene_window
            .iter()
            .skip(n.saturating_sub(scene))
            .sum::<usize>()
            * usize::from(scene > 0);
        StorageReport::new(point_scalars, proposal_scalars, rpn)
    }
}

/// Symbols of the analytic storage model. `n` is scalars per object point
/// sample, `f` scalars per whole frame, `o` scalars per proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub f: u64,
    pub n: u64,
    pub k: u64,
    pub o: u64,
    pub t: u64,
}

impl ComplexityParams {
    /// 200 objects, 160,000 four-dimensional points per frame, 128-point
    /// samples, 9-scalar proposals, 64 frames.
    pub const REFERENCE: ComplexityParams = ComplexityParams {
        f: 160_000 * 4,
        n: 128 * 4,
        k: 200,
        o: 9,
        t: 64,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Mppnet16,
    Msf8,
    Ptt64,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mppnet16, Method::Msf8, Method::Ptt64];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub rpn: u64,
    pub point: u64,
    pub proposal: u64,
}

impl ComplexityRow {
    pub fn total(&self) -> u64 {
        self.rpn + self.point + self.proposal
    }
}

/// The storage table rows, constants included.
pub fn complexity_model(method: Method, p: &ComplexityParams) -> ComplexityRow {
    let rpn = 4 * p.f;
    match method {
        Method::Mppnet16 => ComplexityRow {
            rpn,
            point: 8 * p.k * p.n,
            proposal: 16 * p.k * p.o,
        },
        Method::Msf8 => ComplexityRow {
            rpn,
            point: 8 * p.f,
            proposal: p.k * p.o,
        },
        Method::Ptt64 => ComplexityRow {
            rpn,
            point: p.k * p.n,
            proposal: 64 * p.k * p.o,
        },
    }
}

/// The current-frame-points row with an arbitrary horizon `p.t`.
pub fn ptt_complexity(p: &ComplexityParams) -> ComplexityRow {
    ComplexityRow {
        rpn: 4 * p.f,
        point: p.k * p.n,
        proposal: p.t * p.k * p.o,
    }
}

/// How many times larger a whole frame and the per-object point samples are
/// than one frame of proposals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageRatios {
    pub frame_over_proposals: f64,
    pub points_over_proposals: f64,
}

pub fn storage_ratios(p: &ComplexityParams) -> StorageRatios {
    let ko = (p.k * p.o) as f64;
    StorageRatios {
        frame_over_proposals: p.f as f64 / ko,
        points_over_proposals: (p.k * p.n) as f64 / ko,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(x: f64) -> Box3D {
        Box3D::new(x, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 0.0).unwrap()
    }

    fn cloud(n: usize) -> PointCloud {
        let mut pc = PointCloud::default();
        for i in 0..n {
            pc.push([i as f64, 0.0, 0.0], 0.1, true);
        }
        pc
    }

    fn push_simple(bank: &mut MemoryBank, ids: &[TrackId], f: usize, pts: usize) {
        let props: BTreeMap<_, _> = ids.iter().map(|&i| (i, unit_box(f as f64))).collect();
        let roi: BTreeMap<_, _> = ids.iter().map(|&i| (i, cloud(pts))).collect();
        bank.push_frame(&props, &roi).unwrap();
    }

    #[test]
    fn ring_keeps_horizon() {
        let t = 8;
        let mut bank = MemoryBank::new(t);
        bank.register(1).unwrap();
        for f in 0..t + 5 {
            push_simple(&mut bank, &[1], f, 16);
        }
        let traj = bank.trajectory(1).unwrap();
        assert_eq!(traj.len(), t);
        assert_eq!(traj.valid_count(), t);
        assert_eq!(traj.current().unwrap().x, (t + 4) as f64);
        assert_eq!(bank.storage_report().proposal_scalars, t * 9);
    }

    #[test]
    fn young_track_padded_at_old_end() {
        let mut bank = MemoryBank::new(5);
        bank.register(3).unwrap();
        push_simple(&mut bank, &[3], 0, 4);
        push_simple(&mut bank, &[3], 1, 4);
        let traj = bank.trajectory(3).unwrap();
        assert_eq!(traj.valid_mask(), vec![false, false, false, true, true]);
    }

    #[test]
    fn points_constant_in_frame_count() {
        let mut bank = MemoryBank::new(16);
        for id in 0..10 {
            bank.register(id).unwrap();
        }
        let ids: Vec<_> = (0..10).collect();
        for f in 0..40 {
            push_simple(&mut bank, &ids, f, 128);
            let r = bank.storage_report();
            assert_eq!(r.point_scalars, 10 * 128 * 4);
            assert!(r.proposal_scalars <= 10 * 16 * 9);
        }
    }

    #[test]
    fn identical_pushes_identical_reports() {
        let run = || {
            let mut bank = MemoryBank::new(4);
            bank.register(0).unwrap();
            bank.register(1).unwrap();
            for f in 0..6 {
                push_simple(&mut bank, &[0, 1], f, 10);
            }
            bank.storage_report()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn unknown_track_rejected_without_mutation() {
        let mut bank = MemoryBank::new(4);
        bank.register(0).unwrap();
        let props: BTreeMap<_, _> = [(0, unit_box(0.0)), (9, unit_box(1.0))].into();
        let err = bank.push_frame(&props, &BTreeMap::new()).unwrap_err();
        assert_eq!(err, BankError::UnknownTrack(9));
        assert_eq!(bank.storage_report(), StorageReport::default());
        assert_eq!(bank.register(0), Err(BankError::DuplicateTrack(0)));
    }

    #[test]
    fn stale_tracks_evicted_after_budget() {
        let mut bank = MemoryBank::new(4);
        bank.register(0).unwrap();
        bank.register(1).unwrap();
        push_simple(&mut bank, &[0, 1], 0, 8);
        for f in 1..=2 {
            push_simple(&mut bank, &[0], f, 8);
            assert!(bank.contains(1));
            assert!(bank.current_points(1).is_none());
        }
        push_simple(&mut bank, &[0], 3, 8);
        assert!(!bank.contains(1));
        assert!(bank.contains(0));
    }

    #[test]
    fn empty_bank_reports_zero() {
        let r = MemoryBank::new(64).storage_report();
        assert_eq!(r, StorageReport::default());
        assert_eq!(r.bytes_total, 0);
    }

    #[test]
    fn reference_storage_counts() {
        let mut bank = MemoryBank::new(64);
        let ids: Vec<TrackId> = (0..200).collect();
        for &i in &ids {
            bank.register(i).unwrap();
        }
        for f in 0..64 {
            push_simple(&mut bank, &ids, f, 128);
        }
        let r = bank.storage_report();
        assert_eq!(r.proposal_scalars, 115_200);
        assert_eq!(r.point_scalars, 102_400);
        assert_eq!(r.bytes_total, 4 * (115_200 + 102_400));
    }

    #[test]
    fn push_order_across_tracks_is_irrelevant() {
        let mut a = MemoryBank::new(4);
        let mut b = MemoryBank::new(4);
        for id in [5, 2, 9] {
            a.register(id).unwrap();
        }
        for id in [9, 5, 2] {
            b.register(id).unwrap();
        }
        push_simple(&mut a, &[5, 2, 9], 0, 3);
        push_simple(&mut b, &[9, 2, 5], 0, 3);
        assert_eq!(a.storage_report(), b.storage_report());
        assert_eq!(a.latest_boxes(), b.latest_boxes());
    }

    #[test]
    fn complexity_rows() {
        let p = ComplexityParams {
            f: 640_000,
            n: 512,
            k: 200,
            o: 9,
            t: 64,
        };
        let row = complexity_model(Method::Ptt64, &p);
        assert_eq!(
            (row.rpn, row.point, row.proposal),
            (2_560_000, 102_400, 115_200)
        );
        assert_eq!(complexity_model(Method::Mppnet16, &p).point, 8 * 200 * 512);
        assert_eq!(ptt_complexity(&p), row);
        let r = storage_ratios(&ComplexityParams::REFERENCE);
        assert!((r.frame_over_proposals - 355.6).abs() < 0.05);
        assert!((r.points_over_proposals - 56.9).abs() < 0.05);
        assert!((r.frame_over_proposals / 355.0 - 1.0).abs() <= 0.05);
        assert!((r.points_over_proposals / 55.0 - 1.0).abs() <= 0.05);
    }

    #[test]
    fn comparison_policies_converge_to_table_rows() {
        let k = 5;
        let ids: Vec<TrackId> = (0..k).collect();
        let scene_points = 1000;
        for policy in [StoragePolicy::MPPNET, StoragePolicy::MSF] {
            let mut bank = MemoryBank::with_policy(policy);
            for &i in &ids {
                bank.register(i).unwrap();
            }
            for f in 0..20 {
                bank.record_scene_frame(scene_points);
                push_simple(&mut bank, &ids, f, 128);
            }
            let p = ComplexityParams {
                f: (scene_points * 4) as u64,
                n: 512,
                k,
                o: 9,
                t: 0,
            };
            let method = match policy {
                StoragePolicy::Mppnet { .. } => Method::Mppnet16,
                _ => Method::Msf8,
            };
            let row = complexity_model(method, &p);
            let r = bank.storage_report();
            assert_eq!(r.point_scalars as u64, row.point, "{policy:?}");
            assert_eq!(r.proposal_scalars as u64, row.proposal, "{policy:?}");
            assert_eq!(r.rpn_input_scalars as u64, row.rpn, "{policy:?}");
        }
    }
}
