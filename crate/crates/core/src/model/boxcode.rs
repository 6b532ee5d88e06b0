//! Box residual coding relative to a proposal.

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Box3D};

pub const RESIDUAL_WIDTH: usize = 7;

/// Axes of the planar center residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualFrame {
    /// World x and y.
    World,
    /// Along the proposal's length and width axes.
    #[default]
    Proposal,
}

/// Per-component multipliers applied to encoded residuals by default.
pub const DEFAULT_RESIDUAL_SCALE: [f64; RESIDUAL_WIDTH] = [5.0, 5.0, 1.0, 4.0, 4.0, 4.0, 3.0];

/// How the regression targets are laid out for the network: the axes of
/// the planar offsets and a per-component multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualCoding {
    pub frame: ResidualFrame,
    pub scale: [f64; RESIDUAL_WIDTH],
}

impl Default for ResidualCoding {
    fn default() -> Self {
        Self {
            frame: ResidualFrame::Proposal,
            scale: DEFAULT_RESIDUAL_SCALE,
        }
    }
}

impl ResidualCoding {
    /// [`encode_box`] with no rotation and unit scale.
    pub const WORLD: Self = Self {
        frame: ResidualFrame::World,
        scale: [1.0; RESIDUAL_WIDTH],
    };

    pub fn validate(&self) -> Result<(), String> {
        if self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(format!(
                "residual scales must be positive, got {:?}",
                self.scale
            ))
        }
    }

    pub fn encode(&self, proposal: &Box3D, target: &Box3D) -> [f64; RESIDUAL_WIDTH] {
        let mut r = encode_box(proposal, target);
        if self.frame == ResidualFrame::Proposal {
            let (s, c) = proposal.theta.sin_cos();
            let (x, y) = (r[0], r[1]);
            r[0] = c * x + s * y;
            r[1] = -s * x + c * y;
        }
        for (v, k) in r.iter_mut().zip(&self.scale) {
            *v *= k;
        }
        r
    }

    /// Inverse of [`ResidualCoding::encode`].
    pub fn decode(&self, proposal: &Box3D, r: &[f64]) -> Box3D {
        let mut w = [0.0; RESIDUAL_WIDTH];
        for (i, v) in w.iter_mut().enumerate() {
            *v = r[i] / self.scale[i];
        }
        if self.frame == ResidualFrame::Proposal {
            let (s, c) = proposal.theta.sin_cos();
            let (x, y) = (w[0], w[1]);
            w[0] = c * x - s * y;
            w[1] = s * x + c * y;
        }
        decode_box(proposal, &w)
    }
}

/// Residuals `(dx, dy, dz, dw, dl, dh, dtheta)` taking `proposal` to `target`.
/// Planar offsets are scaled by the proposal's footprint diagonal, height
/// offset by its height, sizes are log ratios.
pub fn encode_box(proposal: &Box3D, target: &Box3D) -> [f64; RESIDUAL_WIDTH] {
    let d = proposal.diagonal();
    [
        (target.x - proposal.x) / d,
        (target.y - proposal.y) / d,
        (target.z - proposal.z) / proposal.h,
        (target.w / proposal.w).ln(),
        (target.l / proposal.l).ln(),
        (target.h / proposal.h).ln(),
        wrap_angle(target.theta - proposal.theta),
    ]
}

/// Inverse of [`encode_box`]; velocity is carried over from the proposal.
pub fn decode_box(proposal: &Box3D, r: &[f64]) -> Box3D {
    let d = proposal.diagonal();
    Box3D {
        x: proposal.x + r[0] * d,
        y: proposal.y + r[1] * d,
        z: proposal.z + r[2] * proposal.h,
        w: proposal.w * r[3].exp(),
        l: proposal.l * r[4].exp(),
        h: proposal.h * r[5].exp(),
        theta: wrap_angle(proposal.theta + r[6]),
        vx: proposal.vx,
        vy: proposal.vy,
    }
}
