use ptt_core::geom::{
    backward_propagate, box_corners, corner_signs, extrapolate_box, wrap_angle, Box3D,
};
use ptt_core::model::{decode_box, encode_box, ResidualCoding};
use ptt_core::rng::CounterRng;

/// Intersection over union from a jittered 1000 x 1000 grid of samples over
/// the BEV rectangle of `a`, with membership in `b` tested in its local
/// frame.
pub fn monte_carlo_iou(a: &Box3D, b: &Box3D, rng: &mut CounterRng) -> f64 {
    const SIDE: usize = 1000;
    let (sa, ca) = a.theta.sin_cos();
    let (sb, cb) = b.theta.sin_cos();
    let mut hits = 0u64;
    for i in 0..SIDE {
        for j in 0..SIDE {
            let u = ((i as f64 + rng.uniform()) / SIDE as f64 - 0.5) * a.l;
            let v = ((j as f64 + rng.uniform()) / SIDE as f64 - 0.5) * a.w;
            let x = a.x + ca * u - sa * v;
            let y = a.y + sa * u + ca * v;
            let (dx, dy) = (x - b.x, y - b.y);
            let lu = cb * dx + sb * dy;
            let lv = -sb * dx + cb * dy;
            if lu.abs() <= b.l / 2.0 && lv.abs() <= b.w / 2.0 {
                hits += 1;
            }
        }
    }
    let area_a = a.l * a.w;
    let inter = area_a * hits as f64 / (SIDE * SIDE) as f64;
    inter / (area_a + b.l * b.w - inter)
}

/// Static box within `spread` of the origin.
pub fn random_box(r: &mut CounterRng, spread: f64) -> Box3D {
    Box3D::new(
        r.uniform_in(-spread, spread),
        r.uniform_in(-spread, spread),
        r.uniform_in(-1.0, 1.0),
        r.uniform_in(0.5, 3.0),
        r.uniform_in(0.5, 6.0),
        r.uniform_in(0.5, 2.0),
        r.uniform_in(-3.1, 3.1),
        0.0,
        0.0,
    )
    .unwrap()
}

/// Moving box anywhere in a 40 m square.
pub fn random_moving_box(r: &mut CounterRng) -> Box3D {
    Box3D::new(
        r.uniform_in(-20.0, 20.0),
        r.uniform_in(-20.0, 20.0),
        r.uniform_in(-2.0, 2.0),
        r.uniform_in(0.2, 4.0),
        r.uniform_in(0.2, 8.0),
        r.uniform_in(0.2, 3.0),
        r.uniform_in(-std::f64::consts::PI, std::f64::consts::PI),
        r.uniform_in(-2.0, 2.0),
        r.uniform_in(-2.0, 2.0),
    )
    .unwrap()
}

/// Largest deviation of the corners, in the box's own frame, from the
/// signed half-extent lattice, including the center.
pub fn corner_lattice_error(b: &Box3D) -> f64 {
    let cs = box_corners(b).unwrap();
    let mut worst = (0..3)
        .map(|k| (cs.center()[k] - b.center()[k]).abs())
        .fold(0.0, f64::max);
    let half = [b.l / 2.0, b.w / 2.0, b.h / 2.0];
    for (i, p) in cs.corners().iter().enumerate() {
        let local = b.to_local(*p);
        let signs = corner_signs(i + 1);
        for k in 0..3 {
            worst = worst.max((local[k] - signs[k] * half[k]).abs());
        }
    }
    worst
}

/// Deviation between extrapolating by `dt1` then `dt2` and by their sum,
/// or infinity when the size or height changed.
pub fn extrapolation_error(b: &Box3D, dt1: f64, dt2: f64, vt: f64) -> f64 {
    let two = extrapolate_box(&extrapolate_box(b, dt1, vt), dt2, vt);
    let one = extrapolate_box(b, dt1 + dt2, vt);
    if (two.z, two.w, two.l, two.h) != (b.z, b.w, b.l, b.h) {
        return f64::INFINITY;
    }
    (two.x - one.x)
        .abs()
        .max((two.y - one.y).abs())
        .max(wrap_angle(two.theta - one.theta).abs())
}

/// Planar position error of propagating back `k` frames and forward again.
pub fn backward_forward_error(b: &Box3D, k: f64) -> f64 {
    let fwd = extrapolate_box(&backward_propagate(b, k), k, 0.0);
    (fwd.x - b.x).abs().max((fwd.y - b.y).abs())
}

/// Largest field error of encoding `t` against `p` and decoding again, over
/// the plain and the scaled proposal-frame codings.
pub fn round_trip_error(p: &Box3D, t: &Box3D) -> f64 {
    let err = |back: Box3D| {
        [
            back.x - t.x,
            back.y - t.y,
            back.z - t.z,
            back.w - t.w,
            back.l - t.l,
            back.h - t.h,
            wrap_angle(back.theta - t.theta),
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let mut worst = err(decode_box(p, &encode_box(p, t)));
    for coding in [ResidualCoding::WORLD, ResidualCoding::default()] {
        worst = worst.max(err(coding.decode(p, &coding.encode(p, t))));
    }
    worst
}

/// A target box near `p`: shifted, resized, raised and turned by up to a
/// full heading flip.
pub fn random_target(p: &Box3D, r: &mut CounterRng) -> Box3D {
    Box3D {
        x: p.x + r.uniform_in(-1.0, 1.0),
        y: p.y + r.uniform_in(-1.0, 1.0),
        z: p.z + r.uniform_in(-0.5, 0.5),
        w: p.w * (1.0 + r.uniform_in(-0.4, 0.4)),
        l: p.l * (1.0 + r.uniform_in(-0.4, 0.4)),
        h: p.h * (1.0 + r.uniform_in(-0.4, 0.4)),
        theta: wrap_angle(p.theta + r.uniform_in(-3.0, 3.0)),
        ..*p
    }
}
