use ptt_core::diagnostics::fixture_config;
use ptt_core::geom::{Box3D, Trajectory};
use ptt_core::model::PttModel;
use ptt_core::rng::CounterRng;
use ptt_core::synth::PointCloud;
use ptt_core::tensor::ParamStore;

/// A random trajectory with gaps, RoI points with some invalid rows, and a
/// shuffle of those points.
pub fn random_case(seed: u64) -> (Trajectory, PointCloud, Vec<usize>) {
    let mut r = CounterRng::new(seed, 3);
    let t = fixture_config().t;
    let frames = (0..t)
        .map(|i| {
            (i == t - 1 || r.uniform() < 0.7).then(|| {
                let k = i as f64 - (t - 1) as f64;
                Box3D::new(
                    0.5 * k + 0.2 * r.normal(),
                    0.1 * k + 0.2 * r.normal(),
                    0.8,
                    2.0,
                    4.4,
                    1.6,
                    0.3 + 0.05 * r.normal(),
                    0.5,
                    0.1,
                )
                .unwrap()
            })
        })
        .collect();
    let n = 1 + r.below(16);
    let mut pts = PointCloud::with_capacity(n);
    for i in 0..n {
        let valid = i == 0 || r.uniform() < 0.8;
        pts.push(
            [
                r.uniform_in(-2.0, 2.0),
                r.uniform_in(-1.0, 1.0),
                r.uniform_in(0.0, 1.6),
            ],
            r.uniform(),
            valid,
        );
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, r.below(i + 1));
    }
    (Trajectory::new(frames), pts, perm)
}

/// Largest change of the confidence and residuals of a freshly initialised
/// model when the RoI points are reordered.
pub fn permutation_error(seed: u64, model_seed: u64) -> f64 {
    let mut store = ParamStore::new();
    let model = PttModel::new(&mut store, fixture_config(), model_seed).unwrap();
    let (traj, pts, perm) = random_case(seed);
    let a = model.refine(&store, &traj, &pts).unwrap();
    let b = model.refine(&store, &traj, &pts.permuted(&perm)).unwrap();
    a.residuals
        .iter()
        .zip(&b.residuals)
        .map(|(x, y)| (x - y).abs())
        .fold((a.confidence - b.confidence).abs(), f64::max)
}
