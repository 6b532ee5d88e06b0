//! Oriented 3D boxes: corners, rotated BEV overlap, constant-velocity motion
//! and greedy frame-to-frame linking.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid box: size ({w}, {l}, {h}) must be positive and finite")]
    InvalidBox { w: f64, l: f64, h: f64 },
    #[error("invalid box: non-finite field")]
    NonFinite,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Oriented box with BEV velocity. `l` runs along the heading axis, `w`
/// across it. Velocities are in meters per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Box3D {
    pub const WIDTH: usize = 9;

    /// Builds a box, normalizing the heading. Fails on non-positive sizes.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: f64,
        y: f64,
        z: f64,
        w: f64,
        l: f64,
        h: f64,
        theta: f64,
        vx: f64,
        vy: f64,
    ) -> Result<Self, GeomError> {
        let b = Self {
            x,
            y,
            z,
            w,
            l,
            h,
            theta: wrap_angle(theta),
            vx,
            vy,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        if self.w <= 0.0 || self.l <= 0.0 || self.h <= 0.0 {
            return Err(GeomError::InvalidBox {
                w: self.w,
                l: self.l,
                h: self.h,
            });
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.x, self.y, self.z, self.w, self.l, self.h, self.theta, self.vx, self.vy,
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Result<Self, GeomError> {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8])
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// BEV diagonal, the normalizer for center residuals.
    pub fn diagonal(&self) -> f64 {
        (self.w * self.w + self.l * self.l).sqrt()
    }

    /// Expresses a world point in the box frame (x along length, y along width).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.z]
    }

    pub fn to_world(&self, q: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * q[0] - s * q[1],
            self.y + s * q[0] + c * q[1],
            self.z + q[2],
        ]
    }

    /// Point membership after growing every face outward by `margin`.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= self.l / 2.0 + margin
            && q[1].abs() <= self.w / 2.0 + margin
            && q[2].abs() <= self.h / 2.0 + margin
    }

    /// BEV footprint as a counter-clockwise rectangle.
    pub fn bev_polygon(&self) -> [[f64; 2]; 4] {
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[a, b]| {
            let p = self.to_world([a, b, 0.0]);
            [p[0], p[1]]
        })
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    fn same_footprint(&self, other: &Box3D) -> bool {
        self.x == other.x
            && self.y == other.y
            && self.w == other.w
            && self.l == other.l
            && self.theta == other.theta
    }
}

/// Center followed by the eight corners. Corners are ordered by the sign of
/// their offset along (length, width, height), minus before plus, with the
/// length sign varying slowest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSet {
    pub points: [[f64; 3]; 9],
}

impl CornerSet {
    pub fn center(&self) -> [f64; 3] {
        self.points[0]
    }

    pub fn corners(&self) -> &[[f64; 3]] {
        &self.points[1..]
    }
}

/// Local (pre-rotation) offset signs of corner `i` in `1..=8`.
pub fn corner_signs(i: usize) -> [f64; 3] {
    debug_assert!((1..=8).contains(&i));
    let k = i - 1;
    let s = |bit: usize| if k & bit != 0 { 1.0 } else { -1.0 };
    [s(4), s(2), s(1)]
}

pub fn box_corners(b: &Box3D) -> Result<CornerSet, GeomError> {
    b.validate()?;
    let mut points = [[0.0; 3]; 9];
    points[0] = b.center();
    for (i, p) in points.iter_mut().enumerate().skip(1) {
        let s = corner_signs(i);
        *p = b.to_world([s[0] * b.l / 2.0, s[1] * b.w / 2.0, s[2] * b.h / 2.0]);
    }
    Ok(CornerSet { points })
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon, positive for counter-clockwise order.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

/// Sutherland-Hodgman clipping of `subject` against the convex CCW `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom == 0.0 {
        return q;
    }
    let t = dp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection over union of the rotated BEV rectangles.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    if a.same_footprint(b) {
        return 1.0;
    }
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let reach = (a.diagonal() + b.diagonal()) / 2.0;
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.bev_polygon(), &b.bev_polygon())).max(0.0);
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Constant-velocity, constant-turn-rate forecast `dt` frames ahead.
pub fn extrapolate_box(b: &Box3D, dt: f64, v_theta: f64) -> Box3D {
    Box3D {
        x: b.x + dt * b.vx,
        y: b.y + dt * b.vy,
        theta: wrap_angle(b.theta + dt * v_theta),
        ..*b
    }
}

/// Where the box was `dt` frames ago under its own velocity.
pub fn backward_propagate(b: &Box3D, dt: f64) -> Box3D {
    Box3D {
        x: b.x - dt * b.vx,
        y: b.y - dt * b.vy,
        ..*b
    }
}

/// Time-ordered box history; the last slot is the current frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<Option<Box3D>>,
}

impl Trajectory {
    pub fn new(frames: Vec<Option<Box3D>>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn current(&self) -> Option<&Box3D> {
        self.frames.last().and_then(|b| b.as_ref())
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.frames.iter().map(Option::is_some).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.frames.iter().filter(|b| b.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingRate {
    pub rate: f64,
    /// Set when fewer than two valid frames were available.
    pub degenerate: bool,
}

/// Heading change per frame between the oldest and newest valid boxes,
/// divided by the number of frames the two span.
pub fn heading_rate(traj: &Trajectory) -> HeadingRate {
    let mut valid = traj
        .frames
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.as_ref().map(|b| (i, b.theta)));
    let first = valid.next();
    let last = valid.last();
    match (first, last) {
        (Some((i0, t0)), Some((i1, t1))) => {
            let span = (i1 - i0 + 1) as f64;
            HeadingRate {
                rate: wrap_angle(t1 - t0) / span,
                degenerate: false,
            }
        }
        _ => HeadingRate {
            rate: 0.0,
            degenerate: true,
        },
    }
}

/// Outcome of matching one frame's proposals to existing tracks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Linking {
    /// `(proposal index, track index)` pairs.
    pub matches: Vec<(usize, usize)>,
    /// Proposals that should open new tracks, ascending.
    pub unmatched: Vec<usize>,
}

/// Greedy descending-IoU association. Each proposal is moved one frame back
/// along its velocity before being compared with the tracks' latest boxes.
pub fn link_frame(track_latest: &[Box3D], proposals: &[Box3D], iou_thresh: f64) -> Linking {
    let back: Vec<Box3D> = proposals
        .iter()
        .map(|p| backward_propagate(p, 1.0))
        .collect();
    let mut pairs = Vec::new();
    for (pi, p) in back.iter().enumerate() {
        for (ti, t) in track_latest.iter().enumerate() {
            let iou = bev_iou(p, t);
            if iou >= iou_thresh && iou > 0.0 {
                pairs.push((iou, pi, ti));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut prop_used = vec![false; proposals.len()];
    let mut track_used = vec![false; track_latest.len()];
    let mut matches = Vec::new();
    for (_, pi, ti) in pairs {
        if !prop_used[pi] && !track_used[ti] {
            prop_used[pi] = true;
            track_used[ti] = true;
            matches.push((pi, ti));
        }
    }
    matches.sort_unstable();
    let unmatched = (0..proposals.len()).filter(|&i| !prop_used[i]).collect();
    Linking { matches, unmatched }
}
