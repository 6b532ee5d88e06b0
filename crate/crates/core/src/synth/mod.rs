//! Synthetic LiDAR sequences and the surrogate first stage.
//!
//! Objects are driven by constant speed and turn rate; each frame scatters
//! points on the box faces visible from a sensor at the origin. The surrogate
//! proposal stage jitters ground-truth boxes, standing in for a trained
//! region proposal network.

mod io;

pub use io::{
    read_dataset, read_dataset_from, write_dataset, write_dataset_to, DatasetError, FORMAT_NAME,
    FORMAT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::geom::{bev_iou, wrap_angle, Box3D};
use crate::rng::{purpose, CounterRng};

/// Faces are grown by this much before point membership tests.
pub const ROI_DILATION: f64 = 0.1;
/// Default number of points per region of interest.
pub const DEFAULT_ROI_POINTS: usize = 128;

const SENSOR: [f64; 3] = [0.0, 0.0, 1.8];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub coords: Vec<[f64; 3]>,
    pub intensity: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PointCloud {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            coords: Vec::with_capacity(n),
            intensity: Vec::with_capacity(n),
            valid: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn push(&mut self, p: [f64; 3], intensity: f64, valid: bool) {
        self.coords.push(p);
        self.intensity.push(intensity);
        self.valid.push(valid);
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Number of valid points inside the (dilated) box.
    pub fn count_inside(&self, b: &Box3D, margin: f64) -> usize {
        self.coords
            .iter()
            .zip(&self.valid)
            .filter(|(p, &v)| v && b.contains(**p, margin))
            .count()
    }

    /// Reorders the rows by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::with_capacity(perm.len());
        for &i in perm {
            out.push(self.coords[i], self.intensity[i], self.valid[i]);
        }
        out
    }
}

/// Explicit per-object motion, optionally pinning the starting pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion {
    /// Meters per frame along the heading.
    pub speed: f64,
    /// Radians per frame.
    pub turn_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_objects: usize,
    pub num_frames: usize,
    /// Mean point budget of an object at `reference_range`; falls off with
    /// the squared range beyond it.
    pub points_per_object: f64,
    pub clutter_points: usize,
    pub speed_range: [f64; 2],
    pub turn_rate_range: [f64; 2],
    /// Overrides the sampled motion for the first `motions.len()` objects.
    pub motions: Vec<ObjectMotion>,
    pub sensor_noise_sigma: f64,
    pub area_radius: f64,
    pub reference_range: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_objects: 20,
            num_frames: 100,
            points_per_object: 160.0,
            clutter_points: 400,
            speed_range: [0.0, 0.8],
            turn_rate_range: [-0.02, 0.02],
            motions: Vec::new(),
            sensor_noise_sigma: 0.02,
            area_radius: 40.0,
            reference_range: 15.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub label: String,
    pub bbox: Box3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub frame_index: usize,
    pub points: PointCloud,
    pub gt: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub frames: Vec<FrameSample>,
}

#[derive(Debug, Clone, Copy)]
struct ObjectSpec {
    start: [f64; 3],
    size: [f64; 3],
    speed: f64,
    turn_rate: f64,
}

fn sample_object_specs(cfg: &SceneConfig) -> Vec<ObjectSpec> {
    let mut rng = CounterRng::for_parts(cfg.seed, &[purpose::SCENE_INIT]);
    let mut placed: Vec<[f64; 2]> = Vec::new();
    let inner = 6.0f64.min(cfg.area_radius);
    (0..cfg.num_objects)
        .map(|i| {
            let mut xy = [0.0; 2];
            for attempt in 0..64 {
                let r = rng.uniform_in(inner, cfg.area_radius.max(inner));
                let a = rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
                xy = [r * a.cos(), r * a.sin()];
                let clear = placed
                    .iter()
                    .all(|q| (q[0] - xy[0]).hypot(q[1] - xy[1]) >= 8.0);
                if clear || attempt == 63 {
                    break;
                }
            }
            placed.push(xy);
            let heading = rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
            let size = [
                rng.uniform_in(1.8, 2.2),
                rng.uniform_in(4.0, 5.0),
                rng.uniform_in(1.4, 1.8),
            ];
            let speed = rng.uniform_in(cfg.speed_range[0], cfg.speed_range[1]);
            let turn_rate = rng.uniform_in(cfg.turn_rate_range[0], cfg.turn_rate_range[1]);
            let mut spec = ObjectSpec {
                start: [xy[0], xy[1], heading],
                size,
                speed,
                turn_rate,
            };
            if let Some(m) = cfg.motions.get(i) {
                spec.speed = m.speed;
                spec.turn_rate = m.turn_rate;
                if let Some(s) = m.start {
                    spec.start = s;
                }
            }
            spec
        })
        .collect()
}

/// Ground-truth boxes of every object for every frame, `[frame][object]`.
fn simulate_boxes(cfg: &SceneConfig, specs: &[ObjectSpec]) -> Vec<Vec<Box3D>> {
    let mut states: Vec<[f64; 3]> = specs.iter().map(|s| s.start).collect();
    let mut out = Vec::with_capacity(cfg.num_frames);
    for _ in 0..cfg.num_frames {
        let frame: Vec<Box3D> = specs
            .iter()
            .zip(&states)
            .map(|(s, st)| {
                let theta = wrap_angle(st[2]);
                Box3D {
                    x: st[0],
                    y: st[1],
                    z: s.size[2] / 2.0,
                    w: s.size[0],
                    l: s.size[1],
                    h: s.size[2],
                    theta,
                    vx: s.speed * theta.cos(),
                    vy: s.speed * theta.sin(),
                }
            })
            .collect();
        for ((st, s), b) in states.iter_mut().zip(specs).zip(&frame) {
            st[0] += b.vx;
            st[1] += b.vy;
            st[2] = wrap_angle(st[2] + s.turn_rate);
        }
        out.push(frame);
    }
    out
}

fn intensity_at(rng: &mut CounterRng, p: [f64; 3]) -> f64 {
    let r = (p[0] - SENSOR[0]).hypot(p[1] - SENSOR[1]);
    rng.uniform() / (1.0 + r / 20.0)
}

/// Scatters `count` noisy points on the faces of `b` visible from the sensor.
fn surface_points(b: &Box3D, count: usize, sigma: f64, rng: &mut CounterRng, out: &mut PointCloud) {
    // faces in local coordinates: (axis, sign); axis 0 = length, 1 = width, 2 = top
    let half = [b.l / 2.0, b.w / 2.0, b.h / 2.0];
    let mut faces: Vec<(usize, f64, f64)> = Vec::with_capacity(3);
    let sensor_local = b.to_local(SENSOR);
    for axis in 0..2 {
        for sign in [-1.0, 1.0] {
            if sign * sensor_local[axis] > half[axis] {
                let other = half[1 - axis];
                faces.push((axis, sign, 4.0 * other * half[2]));
            }
        }
    }
    faces.push((2, 1.0, 4.0 * half[0] * half[1]));
    let total: f64 = faces.iter().map(|f| f.2).sum();
    for _ in 0..count {
        let mut pick = rng.uniform() * total;
        let mut face = faces[faces.len() - 1];
        for f in &faces {
            if pick < f.2 {
                face = *f;
                break;
            }
            pick -= f.2;
        }
        let u = rng.uniform_in(-1.0, 1.0);
        let v = rng.uniform_in(-1.0, 1.0);
        let q = match face.0 {
            0 => [face.1 * half[0], u * half[1], v * half[2]],
            1 => [u * half[0], face.1 * half[1], v * half[2]],
            _ => [u * half[0], v * half[1], half[2]],
        };
        let mut p = b.to_world(q);
        for c in &mut p {
            *c += sigma * rng.normal();
        }
        let inten = intensity_at(rng, p);
        out.push(p, inten, true);
    }
}

fn generate_frame(cfg: &SceneConfig, frame_index: usize, boxes: &[Box3D]) -> FrameSample {
    let mut points = PointCloud::default();
    let mut gt = Vec::with_capacity(boxes.len());
    for (oid, b) in boxes.iter().enumerate() {
        let mut rng = CounterRng::for_parts(
            cfg.seed,
            &[purpose::FRAME_POINTS, frame_index as u64, oid as u64],
        );
        let range = (b.x - SENSOR[0]).hypot(b.y - SENSOR[1]).max(1e-6);
        let falloff = (cfg.reference_range / range).powi(2).min(1.0);
        let count = (cfg.points_per_object * falloff * rng.uniform_in(0.5, 1.5)).round();
        surface_points(
            b,
            count.max(0.0) as usize,
            cfg.sensor_noise_sigma,
            &mut rng,
            &mut points,
        );
        gt.push(GtObject {
            id: oid as u64,
            label: "vehicle".to_string(),
            bbox: *b,
        });
    }
    let mut rng = CounterRng::for_parts(cfg.seed, &[purpose::CLUTTER, frame_index as u64]);
    let radius = cfg.area_radius + 20.0;
    for _ in 0..cfg.clutter_points {
        let r = radius * rng.uniform().sqrt();
        let a = rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
        let p = [r * a.cos(), r * a.sin(), rng.uniform_in(-0.2, 2.5)];
        let inten = intensity_at(&mut rng, p);
        points.push(p, inten, true);
    }
    FrameSample {
        frame_index,
        points,
        gt,
    }
}

/// Deterministic in `config` (including its seed).
pub fn generate_sequence(config: &SceneConfig) -> Dataset {
    let specs = sample_object_specs(config);
    let boxes = simulate_boxes(config, &specs);
    let frames = boxes
        .iter()
        .enumerate()
        .map(|(f, b)| generate_frame(config, f, b))
        .collect();
    Dataset {
        config: config.clone(),
        frames,
    }
}

/// Per-field Gaussian perturbation scales of the surrogate proposals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub center_sigma: f64,
    pub size_sigma: f64,
    pub heading_sigma: f64,
    pub velocity_sigma: f64,
}

impl Jitter {
    pub const ZERO: Jitter = Jitter {
        center_sigma: 0.0,
        size_sigma: 0.0,
        heading_sigma: 0.0,
        velocity_sigma: 0.0,
    };
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            center_sigma: 0.3,
            size_sigma: 0.1,
            heading_sigma: 0.1,
            velocity_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: Box3D,
    pub confidence: f64,
}

/// Jittered copies of the frame's ground truth, confidence = BEV IoU with the
/// source box. Each object draws from its own stream, so the result does not
/// depend on object order.
pub fn surrogate_rpn(
    frame: &FrameSample,
    jitter: &Jitter,
    drop_prob: f64,
    seed: u64,
) -> Vec<Proposal> {
    let mut out = Vec::with_capacity(frame.gt.len());
    for g in &frame.gt {
        let mut rng =
            CounterRng::for_parts(seed, &[purpose::PROPOSALS, frame.frame_index as u64, g.id]);
        let drop = rng.uniform() < drop_prob;
        let mut n = [0.0; 9];
        for v in &mut n {
            *v = rng.normal();
        }
        if drop {
            continue;
        }
        let b = &g.bbox;
        let size = |s: f64, e: f64| (s + jitter.size_sigma * e).max(0.1 * s);
        let p = Box3D {
            x: b.x + jitter.center_sigma * n[0],
            y: b.y + jitter.center_sigma * n[1],
            z: b.z + jitter.center_sigma * n[2],
            w: size(b.w, n[3]),
            l: size(b.l, n[4]),
            h: size(b.h, n[5]),
            theta: wrap_angle(b.theta + jitter.heading_sigma * n[6]),
            vx: b.vx + jitter.velocity_sigma * n[7],
            vy: b.vy + jitter.velocity_sigma * n[8],
        };
        out.push(Proposal {
            bbox: p,
            confidence: bev_iou(&p, b),
        });
    }
    out
}

/// Fixed-size sample of the points inside the dilated box.
///
/// With at least `n` interior points the sample is drawn without replacement;
/// with fewer, every interior point appears once and the remainder is drawn
/// with replacement; with none, `n` zero rows marked invalid are returned.
pub fn sample_roi_points(points: &PointCloud, b: &Box3D, n: usize, seed: u64) -> PointCloud {
    let inside: Vec<usize> = (0..points.len())
        .filter(|&i| points.valid[i] && b.contains(points.coords[i], ROI_DILATION))
        .collect();
    let mut out = PointCloud::with_capacity(n);
    if inside.is_empty() {
        for _ in 0..n {
            out.push([0.0; 3], 0.0, false);
        }
        return out;
    }
    let mut rng = CounterRng::new(seed, purpose::ROI_SAMPLE);
    let picks: Vec<usize> = if inside.len() >= n {
        let mut pool = inside;
        for i in 0..n {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(n);
        pool
    } else {
        let mut picks = inside.clone();
        while picks.len() < n {
            picks.push(inside[rng.below(inside.len())]);
        }
        picks
    };
    for i in picks {
        out.push(points.coords[i], points.intensity[i], true);
    }
    out
}
