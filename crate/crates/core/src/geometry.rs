//! Rotation representations and the 4-fold z-rotation symmetry.
//!
//! Orientations in observations and actions are Modified Rodrigues Parameters
//! (`σ = ê·tan(θ/4)`), kept in the set with `‖σ‖ ≤ 1`. Quarter-turn rotations
//! about z are applied as exact component permutations so canonicalization
//! never introduces rounding error.

use std::cmp::Ordering;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::sim::{Action, Observation};
use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `‖q‖ = 1` accepted by [`Mrp::from_quaternion`].
pub const UNIT_QUATERNION_TOL: f64 = 1e-9;

/// Modified Rodrigues Parameters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Mrp {
    pub sigma: Vec3,
}

impl Mrp {
    pub const IDENTITY: Mrp = Mrp {
        sigma: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Mrp {
            sigma: Vec3::new(x, y, z),
        }
    }

    /// Converts a unit quaternion `(w, x, y, z)` to the short-rotation MRP set.
    pub fn from_quaternion(q: &Quaternion<f64>) -> Result<Self> {
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_QUATERNION_TOL {
            return Err(Error::NonUnitQuaternion(n));
        }
        Ok(Self::from_unit(&UnitQuaternion::new_unchecked(*q)))
    }

    pub fn from_unit(q: &UnitQuaternion<f64>) -> Self {
        // q and -q are the same rotation; w >= 0 picks the representative
        // whose MRP lies inside the unit ball.
        let (w, v) = if q.w < 0.0 {
            (-q.w, -q.imag())
        } else {
            (q.w, q.imag())
        };
        Mrp { sigma: v / (1.0 + w) }
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        let n2 = self.sigma.norm_squared();
        let w = (1.0 - n2) / (1.0 + n2);
        let v = self.sigma * (2.0 / (1.0 + n2));
        UnitQuaternion::new_unchecked(Quaternion::new(w, v.x, v.y, v.z))
    }

    /// The alternative parameterization of the same rotation, `-σ/‖σ‖²`.
    pub fn shadow(&self) -> Self {
        let n2 = self.sigma.norm_squared();
        if n2 == 0.0 {
            return *self;
        }
        Mrp {
            sigma: -self.sigma / n2,
        }
    }

    /// Switches to the shadow set when `‖σ‖ > 1`.
    pub fn normalized(&self) -> Self {
        if self.sigma.norm_squared() > 1.0 {
            self.shadow()
        } else {
            *self
        }
    }

    pub fn norm(&self) -> f64 {
        self.sigma.norm()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.sigma.x, self.sigma.y, self.sigma.z]
    }
}

/// End-effector pose expressed relative to the pose at episode start.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RelativePose {
    pub position: Vec3,
    pub orientation: Mrp,
}

impl RelativePose {
    /// Pose of `(position, orientation)` in the frame of `(origin, origin_rot)`.
    pub fn between(
        origin: &Vec3,
        origin_rot: &UnitQuaternion<f64>,
        position: &Vec3,
        orientation: &UnitQuaternion<f64>,
    ) -> Self {
        let inv = origin_rot.inverse();
        RelativePose {
            position: inv * (position - origin),
            orientation: Mrp::from_unit(&(inv * orientation)),
        }
    }
}

/// Number of +90° z-rotations applied during canonicalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SymmetryIndex(u8);

impl SymmetryIndex {
    pub const IDENTITY: SymmetryIndex = SymmetryIndex(0);

    pub fn new(k: u8) -> Result<Self> {
        if k < 4 {
            Ok(SymmetryIndex(k))
        } else {
            Err(Error::InvalidSymmetryIndex(k))
        }
    }

    /// `k mod 4`, for any integer.
    pub fn wrapping(k: i64) -> Self {
        SymmetryIndex(k.rem_euclid(4) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn inverse(self) -> Self {
        SymmetryIndex((4 - self.0) % 4)
    }

    pub fn compose(self, other: SymmetryIndex) -> Self {
        SymmetryIndex((self.0 + other.0) % 4)
    }
}

impl TryFrom<u8> for SymmetryIndex {
    type Error = Error;

    fn try_from(k: u8) -> Result<Self> {
        SymmetryIndex::new(k)
    }
}

impl From<SymmetryIndex> for u8 {
    fn from(k: SymmetryIndex) -> u8 {
        k.0
    }
}

/// Rotates `v` by `90°·k` about z. Exact: components are only permuted and
/// negated. Signed zeros are normalized to `+0.0` so that rotations compose
/// bitwise.
pub fn rotate_z_90(v: &Vec3, k: SymmetryIndex) -> Vec3 {
    let r = match k.0 {
        0 => *v,
        1 => Vec3::new(-v.y, v.x, v.z),
        2 => Vec3::new(-v.x, -v.y, v.z),
        _ => Vec3::new(v.y, -v.x, v.z),
    };
    r.map(|c| c + 0.0)
}

/// Conjugates the rotation encoded by `m` with `Rz(90°·k)`.
///
/// Conjugation rotates the quaternion's vector part and keeps its scalar
/// part, so the MRP vector rotates like any other vector.
pub fn rotate_mrp_z_90(m: &Mrp, k: SymmetryIndex) -> Mrp {
    Mrp {
        sigma: rotate_z_90(&m.sigma, k),
    }
}

/// Smallest `k` such that `rotate_z_90(position, k)` has `x ≥ 0` and `y ≥ 0`.
pub fn canonical_index(position: &Vec3) -> SymmetryIndex {
    quadrant_candidates(position).next().unwrap_or(SymmetryIndex::IDENTITY)
}

fn quadrant_candidates(position: &Vec3) -> impl Iterator<Item = SymmetryIndex> + '_ {
    (0..4).map(SymmetryIndex).filter(move |&k| {
        let r = rotate_z_90(position, k);
        r.x >= 0.0 && r.y >= 0.0
    })
}

/// Rotates every frame quantity of `obs` (and its voxel grid) by `90°·k`.
pub fn rotate_observation(obs: &Observation, k: SymmetryIndex) -> Observation {
    let mut out = obs.clone();
    out.rel_pose.position = rotate_z_90(&obs.rel_pose.position, k);
    out.rel_pose.orientation = rotate_mrp_z_90(&obs.rel_pose.orientation, k);
    out.twist.linear = rotate_z_90(&obs.twist.linear, k);
    out.twist.angular = rotate_z_90(&obs.twist.angular, k);
    out.force = rotate_z_90(&obs.force, k);
    out.torque = rotate_z_90(&obs.torque, k);
    out.prev_action = rotate_action(&obs.prev_action, k);
    if k.0 != 0 {
        if let Some(grid) = &obs.voxels {
            out.voxels = Some(std::sync::Arc::new(grid.rotate_z_90(k)));
        }
    }
    out
}

/// Total order used to pick among several valid canonical rotations.
fn tie_order(a: &Observation, b: &Observation) -> Ordering {
    let (pa, pb) = (a.proprio(), b.proprio());
    pa.iter()
        .zip(&pb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.voxels.as_deref().cmp(&b.voxels.as_deref()))
}

/// Moves `obs` into the `x ≥ 0, y ≥ 0` quadrant of the start-relative frame.
///
/// When the position lies on a quadrant boundary (the start pose itself, for
/// one) several rotations qualify; the smallest rotated observation under a
/// fixed total order wins, so every rotated copy of a scene still maps to the
/// same canonical observation.
///
/// Depth images are camera-frame data and are passed through untouched; the
/// trainer refuses to combine symmetry with the depth modality.
pub fn canonicalize(obs: &Observation) -> (Observation, SymmetryIndex) {
    let mut best: Option<(Observation, SymmetryIndex)> = None;
    for k in quadrant_candidates(&obs.rel_pose.position) {
        let cand = rotate_observation(obs, k);
        if best.as_ref().is_none_or(|(b, _)| tie_order(&cand, b).is_lt()) {
            best = Some((cand, k));
        }
    }
    // No candidate only with NaN coordinates.
    best.unwrap_or_else(|| (rotate_observation(obs, SymmetryIndex::IDENTITY), SymmetryIndex::IDENTITY))
}

pub fn rotate_action(a: &Action, k: SymmetryIndex) -> Action {
    Action {
        dpos: rotate_z_90(&a.dpos, k),
        drot: rotate_z_90(&a.drot, k),
        grip: a.grip,
    }
}

/// Maps an action chosen in the canonical frame back to the start-relative frame.
pub fn decanonicalize_action(a: &Action, k: SymmetryIndex) -> Action {
    rotate_action(a, k.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn axis_angle(axis: Vec3, angle: f64) -> Quaternion<f64> {
        *UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).quaternion()
    }

    #[test]
    fn identity_quaternion_gives_zero_mrp() {
        let m = Mrp::from_quaternion(&Quaternion::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(m.sigma, Vec3::zeros());
    }

    #[test]
    fn quarter_turn_about_z() {
        let h = (PI / 4.0).cos();
        let m = Mrp::from_quaternion(&Quaternion::new(h, 0.0, 0.0, h)).unwrap();
        let expected = (PI / 8.0).tan();
        assert!((m.sigma.z - expected).abs() < 1e-12);
        assert!((m.sigma.z - 0.41421).abs() < 1e-5);
        assert_eq!(m.sigma.x, 0.0);
        assert_eq!(m.sigma.y, 0.0);
    }

    #[test]
    fn three_quarter_turn_uses_shadow_set() {
        let q = axis_angle(Vec3::z(), 1.5 * PI);
        let m = Mrp::from_quaternion(&q).unwrap();
        // Long-way parameters tan(270°/4) exceed 1; shadow is -σ/‖σ‖².
        let long = (1.5 * PI / 4.0).tan();
        let shadow = -1.0 / long;
        assert!((m.sigma.z - shadow).abs() < 1e-12);
        assert!((m.sigma.z + (PI / 8.0).tan()).abs() < 1e-12);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let err = Mrp::from_quaternion(&Quaternion::new(1.0, 0.1, 0.0, 0.0));
        assert!(matches!(err, Err(Error::NonUnitQuaternion(_))));
    }

    #[test]
    fn shadow_of_shadow_is_identity() {
        let m = Mrp::new(0.3, -1.2, 0.5);
        let s = m.shadow().shadow();
        assert!((s.sigma - m.sigma).norm() < 1e-15);
        assert!(m.normalized().norm() <= 1.0);
    }

    #[test]
    fn rotate_z_examples() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(rotate_z_90(&v, SymmetryIndex(0)), v);
        assert_eq!(
            rotate_z_90(&Vec3::new(1.0, 0.0, 0.0), SymmetryIndex(1)),
            Vec3::new(0.0, 1.0, 0.0)
        );
        assert_eq!(
            rotate_z_90(&Vec3::new(-1.0, 2.0, 0.0), SymmetryIndex(3)),
            Vec3::new(2.0, 1.0, 0.0)
        );
    }

    #[test]
    fn rotate_z_matches_rotation_matrix() {
        let v = Vec3::new(0.3, -0.7, 0.2);
        for k in 0..4u8 {
            let r = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), k as f64 * PI / 2.0);
            let expected = r * v;
            assert!((rotate_z_90(&v, SymmetryIndex(k)) - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn rotated_mrp_matches_conjugation() {
        let m = Mrp::new(0.1, -0.2, 0.3);
        let q = m.to_quaternion();
        for k in 0..4u8 {
            let rz = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), k as f64 * PI / 2.0);
            let conj = rz * q * rz.inverse();
            let expected = Mrp::from_unit(&conj);
            let got = rotate_mrp_z_90(&m, SymmetryIndex(k));
            assert!((got.sigma - expected.sigma).norm() < 1e-12);
        }
    }

    #[test]
    fn canonical_index_ties_pick_smallest_k() {
        assert_eq!(canonical_index(&Vec3::zeros()).get(), 0);
        assert_eq!(canonical_index(&Vec3::new(0.0, 1.0, 0.0)).get(), 0);
        // (-1, 0): k=2 gives (1, 0), k=3 gives (0, 1); k=2 wins.
        assert_eq!(canonical_index(&Vec3::new(-1.0, 0.0, 0.0)).get(), 2);
        assert_eq!(canonical_index(&Vec3::new(-0.01, 0.02, 0.0)).get(), 3);
    }

    #[test]
    fn start_pose_canonicalizes_rotation_invariantly() {
        use crate::sim::{EnvConfig, SensorMode, SuctionEnv};
        let mut env = SuctionEnv::builtin(EnvConfig {
            sensors: SensorMode::Voxel,
            ..EnvConfig::default()
        });
        let obs = env.reset("seen", 4).unwrap();
        assert_eq!(obs.rel_pose.position, Vec3::zeros());
        let (c0, _) = canonicalize(&obs);
        for j in 1..4 {
            let (c, k) = canonicalize(&rotate_observation(&obs, SymmetryIndex(j)));
            assert_eq!(c.voxels, c0.voxels, "j={j}");
            assert_eq!(format!("{:?}", c.proprio().map(f64::to_bits)), format!("{:?}", c0.proprio().map(f64::to_bits)));
            assert_eq!(k.compose(SymmetryIndex(j)), canonicalize(&obs).1);
        }
    }

    #[test]
    fn decanonicalize_examples() {
        let a = Action {
            dpos: Vec3::new(0.01, 0.0, 0.0),
            drot: Vec3::new(0.0, 0.0, 0.1),
            grip: 0.7,
        };
        assert_eq!(decanonicalize_action(&a, SymmetryIndex(0)), a);
        let back = decanonicalize_action(&a, SymmetryIndex(1));
        assert_eq!(back.dpos, Vec3::new(0.0, -0.01, 0.0));
        for k in 0..4u8 {
            let r = decanonicalize_action(&a, SymmetryIndex(k));
            assert_eq!(r.drot.z, 0.1);
            assert_eq!(r.grip, 0.7);
        }
    }

    #[test]
    fn symmetry_index_bounds() {
        assert!(SymmetryIndex::new(4).is_err());
        assert_eq!(SymmetryIndex::wrapping(-1).get(), 3);
        assert_eq!(SymmetryIndex(3).inverse().get(), 1);
    }
}
