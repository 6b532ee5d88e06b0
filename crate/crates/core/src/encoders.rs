//! Point-to-proposal and proposal-to-proposal features and their per-frame
//! fusion into a point-trajectory sequence.
//!
//! All frames of a sequence share the same three MLPs; the time offset
//! channel tells them apart. History offsets count frames back from the
//! current one (`T - t`), future offsets count frames forward.

use serde::{Deserialize, Serialize};

use crate::geom::{box_corners, wrap_angle, Box3D, GeomError, Trajectory};
use crate::rng::CounterRng;
use crate::synth::PointCloud;
use crate::tensor::nn::{maxpool_rows, Mlp};
use crate::tensor::{Graph, ParamStore, Tensor, TensorError, Var};

/// Nine xyz offsets plus the time offset.
pub const POINT_FEATURE_WIDTH: usize = 9 * 3 + 1;
/// Center offset, size, heading and time offset.
pub const PROPOSAL_FEATURE_WIDTH: usize = 3 + 4 + 1;

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("the current frame of the trajectory has no proposal")]
    NoCurrentFrame,
    #[error("the region of interest contains no valid point")]
    NoPoints,
}

/// Raw point-to-proposal features, one row per point. With `intensity` the
/// point intensity is appended as a last column.
pub fn point_geom_features(
    points: &PointCloud,
    b: &Box3D,
    dt: f64,
    intensity: bool,
) -> Result<Tensor, GeomError> {
    point_geom_features_in(points, b, dt, intensity, 0.0)
}

/// [`point_geom_features`] with the planar offsets rotated into axes
/// turned by `heading`.
pub fn point_geom_features_in(
    points: &PointCloud,
    b: &Box3D,
    dt: f64,
    intensity: bool,
    heading: f64,
) -> Result<Tensor, GeomError> {
    let cs = box_corners(b)?;
    let (sn, cn) = heading.sin_cos();
    let width = POINT_FEATURE_WIDTH + usize::from(intensity);
    let mut data = Vec::with_capacity(points.len() * width);
    for (i, p) in points.coords.iter().enumerate() {
        for c in &cs.points {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            data.extend([cn * dx + sn * dy, -sn * dx + cn * dy, p[2] - c[2]]);
        }
        data.push(dt);
        if intensity {
            data.push(points.intensity[i]);
        }
    }
    Ok(Tensor::matrix(points.len(), width, data).expect("row width"))
}

/// Raw proposal-to-proposal features of `bt` relative to the current box.
pub fn proposal_geom_features(
    bt: &Box3D,
    current: &Box3D,
    dt: f64,
) -> [f64; PROPOSAL_FEATURE_WIDTH] {
    [
        bt.x - current.x,
        bt.y - current.y,
        bt.z - current.z,
        bt.w,
        bt.l,
        bt.h,
        bt.theta,
        dt,
    ]
}

/// [`proposal_geom_features`] in the heading frame of `current`, with the
/// heading taken relative to it.
pub fn proposal_geom_features_local(
    bt: &Box3D,
    current: &Box3D,
    dt: f64,
) -> [f64; PROPOSAL_FEATURE_WIDTH] {
    let (sn, cn) = current.theta.sin_cos();
    let (dx, dy) = (bt.x - current.x, bt.y - current.y);
    [
        cn * dx + sn * dy,
        -sn * dx + cn * dy,
        bt.z - current.z,
        bt.w,
        bt.l,
        bt.h,
        wrap_angle(bt.theta - current.theta),
        dt,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Feature width.
    pub c: usize,
    pub use_intensity: bool,
    /// Express offsets and headings in the current proposal's frame.
    pub canonical: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            c: 32,
            use_intensity: false,
            canonical: true,
        }
    }
}

/// The three MLPs shared by every frame.
#[derive(Debug, Clone)]
pub struct TrajectoryEncoder {
    pub cfg: EncoderConfig,
    pub point_mlp: Mlp,
    pub proposal_mlp: Mlp,
    pub fuse_mlp: Mlp,
}

/// Per-frame features of a box sequence.
#[derive(Debug, Clone)]
pub struct FeatureSeq {
    /// `[T, C]`, zero rows for invalid frames.
    pub p: Var,
    /// `[N, C]` point features against the current box.
    pub g_cur: Var,
    pub valid: Vec<bool>,
}

impl TrajectoryEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: EncoderConfig,
        rng: &mut CounterRng,
    ) -> Self {
        let c = cfg.c;
        let pin = POINT_FEATURE_WIDTH + usize::from(cfg.use_intensity);
        Self {
            cfg,
            point_mlp: Mlp::new(store, &format!("{name}.point"), &[pin, c, c], rng),
            proposal_mlp: Mlp::new(
                store,
                &format!("{name}.proposal"),
                &[PROPOSAL_FEATURE_WIDTH, c, c],
                rng,
            ),
            fuse_mlp: Mlp::new(store, &format!("{name}.fuse"), &[2 * c, c, c], rng),
        }
    }

    /// Point-to-proposal features `G` for one box.
    pub fn point_features(
        &self,
        g: &mut Graph<'_>,
        points: &PointCloud,
        b: &Box3D,
        current: &Box3D,
        dt: f64,
    ) -> Result<Var, EncodeError> {
        let x = g.constant(self.raw_point(points, b, current, dt)?);
        Ok(self.point_mlp.forward(g, x)?)
    }

    /// Proposal-to-proposal feature `F` for one box as a `[1, C]` row.
    pub fn proposal_feature(
        &self,
        g: &mut Graph<'_>,
        bt: &Box3D,
        current: &Box3D,
        dt: f64,
    ) -> Result<Var, EncodeError> {
        let x = g.constant(Tensor::row(self.raw_proposal(bt, current, dt).to_vec()));
        Ok(self.proposal_mlp.forward(g, x)?)
    }

    fn raw_point(
        &self,
        points: &PointCloud,
        b: &Box3D,
        current: &Box3D,
        dt: f64,
    ) -> Result<Tensor, GeomError> {
        let heading = if self.cfg.canonical {
            current.theta
        } else {
            0.0
        };
        point_geom_features_in(points, b, dt, self.cfg.use_intensity, heading)
    }

    fn raw_proposal(&self, bt: &Box3D, current: &Box3D, dt: f64) -> [f64; PROPOSAL_FEATURE_WIDTH] {
        if self.cfg.canonical {
            proposal_geom_features_local(bt, current, dt)
        } else {
            proposal_geom_features(bt, current, dt)
        }
    }

    /// `MLP(concat(F, maxpool(G)))` for one frame.
    pub fn fuse_frame(
        &self,
        g: &mut Graph<'_>,
        f: Var,
        gt: Var,
        valid_points: &[bool],
    ) -> Result<Var, EncodeError> {
        let pooled = maxpool_rows(g, gt, valid_points)?;
        let cat = g.concat_cols(&[f, pooled])?;
        Ok(self.fuse_mlp.forward(g, cat)?)
    }

    /// Fused features for a list of boxes evaluated in one batch. Returns
    /// the `[K, C]` fused rows and the `[K * N, C]` point features.
    fn encode_boxes(
        &self,
        g: &mut Graph<'_>,
        points: &PointCloud,
        boxes: &[(Box3D, f64)],
        current: &Box3D,
    ) -> Result<(Var, Var), EncodeError> {
        let n = points.len();
        if points.valid_count() == 0 {
            return Err(EncodeError::NoPoints);
        }
        let width = POINT_FEATURE_WIDTH + usize::from(self.cfg.use_intensity);
        let mut raw = Vec::with_capacity(boxes.len() * n * width);
        let mut props = Vec::with_capacity(boxes.len() * PROPOSAL_FEATURE_WIDTH);
        let mut row_valid = Vec::with_capacity(boxes.len() * n);
        for (b, dt) in boxes {
            raw.extend(self.raw_point(points, b, current, *dt)?.into_data());
            props.extend(self.raw_proposal(b, current, *dt));
            row_valid.extend_from_slice(&points.valid);
        }
        let k = boxes.len();
        let raw = g.constant(Tensor::matrix(k * n, width, raw)?);
        let gall = self.point_mlp.forward(g, raw)?;
        let pooled = g.segment_max(gall, n, &row_valid)?;
        let props = g.constant(Tensor::matrix(k, PROPOSAL_FEATURE_WIDTH, props)?);
        let f = self.proposal_mlp.forward(g, props)?;
        let cat = g.concat_cols(&[f, pooled])?;
        Ok((self.fuse_mlp.forward(g, cat)?, gall))
    }

    /// Sequence features of a trajectory whose last slot is the current
    /// frame, using the current RoI points against every historical box.
    pub fn build_sequence(
        &self,
        g: &mut Graph<'_>,
        traj: &Trajectory,
        points: &PointCloud,
    ) -> Result<FeatureSeq, EncodeError> {
        let t_len = traj.len();
        let current = *traj.current().ok_or(EncodeError::NoCurrentFrame)?;
        let valid = traj.valid_mask();
        let boxes: Vec<(Box3D, f64)> = traj
            .frames
            .iter()
            .enumerate()
            .filter_map(|(t, b)| b.map(|b| (b, (t_len - 1 - t) as f64)))
            .collect();
        let (fused, gall) = self.encode_boxes(g, points, &boxes, &current)?;
        let n = points.len();
        let g_cur = g.slice_rows(gall, (boxes.len() - 1) * n, n)?;
        let p = if boxes.len() == t_len {
            fused
        } else {
            scatter_rows(g, fused, &valid, self.cfg.c)?
        };
        Ok(FeatureSeq { p, g_cur, valid })
    }

    /// Fused features `[m_f, C]` of the boxes `(box, dt)` extrapolated ahead
    /// of the current one.
    pub fn future_sequence(
        &self,
        g: &mut Graph<'_>,
        future: &[(Box3D, f64)],
        current: &Box3D,
        points: &PointCloud,
    ) -> Result<Var, EncodeError> {
        Ok(self.encode_boxes(g, points, future, current)?.0)
    }
}

/// Places the rows of `dense` at the true positions of `valid`, zeros
/// elsewhere.
fn scatter_rows(
    g: &mut Graph<'_>,
    dense: Var,
    valid: &[bool],
    c: usize,
) -> Result<Var, TensorError> {
    let mut parts = Vec::new();
    let mut next = 0;
    let mut i = 0;
    while i < valid.len() {
        let run = valid[i..].iter().take_while(|&&v| v == valid[i]).count();
        if valid[i] {
            parts.push(g.slice_rows(dense, next, run)?);
            next += run;
        } else {
            parts.push(g.constant(Tensor::zeros(&[run, c])));
        }
        i += run;
    }
    g.concat_rows(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, th: f64) -> Box3D {
        Box3D::new(x, y, 0.8, 2.0, 4.5, 1.6, th, 0.3, 0.1).unwrap()
    }

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        let mut pc = PointCloud::with_capacity(pts.len());
        for (i, p) in pts.iter().enumerate() {
            pc.push(*p, 0.1 * i as f64, true);
        }
        pc
    }

    #[test]
    fn center_point_row() {
        let b = bx(3.0, -1.0, 0.4);
        let f = point_geom_features(&cloud(&[b.center()]), &b, 0.0, false).unwrap();
        assert_eq!(f.cols(), 28);
        let cs = box_corners(&b).unwrap();
        let row = f.row_slice(0);
        assert_eq!(&row[..3], &[0.0, 0.0, 0.0]);
        for j in 1..9 {
            for d in 0..3 {
                let rel = cs.points[j][d] - b.center()[d];
                assert!((row[3 * j + d] + rel).abs() < 1e-12);
            }
        }
        assert_eq!(row[27], 0.0);
        let fi = point_geom_features(&cloud(&[b.center(), [0.0; 3]]), &b, 2.0, true).unwrap();
        assert_eq!(fi.cols(), 29);
        assert_eq!(fi.at(1, 28), 0.1);
    }

    #[test]
    fn proposal_features_layout() {
        let b = bx(1.0, 2.0, 0.3);
        assert_eq!(
            proposal_geom_features(&b, &b, 0.0),
            [0.0, 0.0, 0.0, 2.0, 4.5, 1.6, 0.3, 0.0]
        );
        assert_eq!(PROPOSAL_FEATURE_WIDTH, 8);
    }

    #[test]
    fn local_features_are_rotation_invariant() {
        let cur = bx(2.0, 1.0, 0.7);
        let prev = bx(1.2, 0.5, 0.6);
        let pts = cloud(&[[2.5, 1.3, 0.4], [1.0, 0.0, 1.2]]);
        let rot = |b: &Box3D, a: f64| {
            let (s, c) = a.sin_cos();
            Box3D {
                x: c * b.x - s * b.y,
                y: s * b.x + c * b.y,
                theta: wrap_angle(b.theta + a),
                ..*b
            }
        };
        let a = 1.3;
        let (s, c) = f64::sin_cos(a);
        let pts_r = cloud(
            &pts.coords
                .iter()
                .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
                .collect::<Vec<_>>(),
        );
        let f0 = point_geom_features_in(&pts, &prev, 1.0, false, cur.theta).unwrap();
        let f1 = point_geom_features_in(&pts_r, &rot(&prev, a), 1.0, false, cur.theta + a).unwrap();
        assert!(f0.max_abs_diff(&f1) < 1e-9);
        let p0 = proposal_geom_features_local(&prev, &cur, 1.0);
        let p1 = proposal_geom_features_local(&rot(&prev, a), &rot(&cur, a), 1.0);
        for (x, y) in p0.iter().zip(&p1) {
            assert!((x - y).abs() < 1e-9);
        }
        let world = point_geom_features(&pts, &prev, 1.0, false).unwrap();
        assert_eq!(
            world,
            point_geom_features_in(&pts, &prev, 1.0, false, 0.0).unwrap()
        );
    }

    fn encoder() -> (ParamStore, TrajectoryEncoder) {
        let mut s = ParamStore::new();
        let e = TrajectoryEncoder::new(
            &mut s,
            "enc",
            EncoderConfig {
                c: 8,
                use_intensity: false,
                canonical: true,
            },
            &mut CounterRng::new(1, 2),
        );
        (s, e)
    }

    #[test]
    fn single_frame_history() {
        let (s, e) = encoder();
        let b = bx(0.0, 0.0, 0.0);
        let pts = cloud(&[[0.1, 0.2, 0.5], [1.0, -0.3, 0.9]]);
        let mut g = Graph::new(&s);
        let seq = e
            .build_sequence(&mut g, &Trajectory::new(vec![Some(b)]), &pts)
            .unwrap();
        assert_eq!(g.shape(seq.p), &[1, 8]);
        let gt = e.point_features(&mut g, &pts, &b, &b, 0.0).unwrap();
        let f = e.proposal_feature(&mut g, &b, &b, 0.0).unwrap();
        let want = e.fuse_frame(&mut g, f, gt, &pts.valid).unwrap();
        assert!(g.value(seq.p).max_abs_diff(g.value(want)) < 1e-12);
        assert!(g.value(seq.g_cur).max_abs_diff(g.value(gt)) < 1e-12);
    }

    #[test]
    fn invalid_frames_are_zero_rows() {
        let (s, e) = encoder();
        let b0 = bx(-1.0, 0.0, 0.0);
        let b2 = bx(0.0, 0.0, 0.0);
        let traj = Trajectory::new(vec![None, Some(b0), None, Some(b2)]);
        let pts = cloud(&[[0.1, 0.2, 0.5], [0.3, -0.3, 0.9]]);
        let mut g = Graph::new(&s);
        let seq = e.build_sequence(&mut g, &traj, &pts).unwrap();
        assert_eq!(seq.valid, vec![false, true, false, true]);
        let p = g.value(seq.p).clone();
        assert!(p
            .row_slice(0)
            .iter()
            .chain(p.row_slice(2))
            .all(|&v| v == 0.0));
        let gt = e.point_features(&mut g, &pts, &b0, &b2, 2.0).unwrap();
        let f = e.proposal_feature(&mut g, &b0, &b2, 2.0).unwrap();
        let want = e.fuse_frame(&mut g, f, gt, &pts.valid).unwrap();
        let got = Tensor::row(p.row_slice(1).to_vec());
        assert!(got.max_abs_diff(g.value(want)) < 1e-12);
    }

    #[test]
    fn missing_current_frame_or_points_is_an_error() {
        let (s, e) = encoder();
        let mut g = Graph::new(&s);
        let pts = cloud(&[[0.0; 3]]);
        let traj = Trajectory::new(vec![Some(bx(0.0, 0.0, 0.0)), None]);
        assert!(matches!(
            e.build_sequence(&mut g, &traj, &pts),
            Err(EncodeError::NoCurrentFrame)
        ));
        let mut empty = PointCloud::default();
        empty.push([0.0; 3], 0.0, false);
        let traj = Trajectory::new(vec![Some(bx(0.0, 0.0, 0.0))]);
        assert!(matches!(
            e.build_sequence(&mut g, &traj, &empty),
            Err(EncodeError::NoPoints)
        ));
    }
}
