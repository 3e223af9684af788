//! Rigid-body poses and a named-frame transform tree.
//!
//! Quaternions follow the (w, x, y, z) convention, right-handed, active
//! rotation. Every constructor and every composition renormalizes the
//! rotation so long chains do not drift.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Maximum deviation of a wire quaternion's norm from 1 that is accepted.
pub const WIRE_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("UnknownFrame: {0}")]
    UnknownFrame(String),
    #[error("DisconnectedFrames: {0} and {1} share no root")]
    DisconnectedFrames(String, String),
    #[error("DuplicateFrame: {0}")]
    DuplicateFrame(String),
    #[error("InvalidPose: {0}")]
    InvalidPose(String),
    #[error("InvalidFrameId: frame ids must be non-empty")]
    EmptyFrameId,
}

/// A rigid transform: rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        let mut rotation = rotation;
        rotation.renormalize();
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Pose at `(x, y, z)` rotated by `yaw` radians about +Z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(
            Vec3::new(x, y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    /// Builds a pose from raw components, normalizing the quaternion.
    pub fn from_parts(t: [f64; 3], q: [f64; 4]) -> Result<Self, GeometryError> {
        if t.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite component".into()));
        }
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = raw.norm();
        if norm < 1e-12 {
            return Err(GeometryError::InvalidPose("zero quaternion".into()));
        }
        Ok(Self::new(
            Vec3::new(t[0], t[1], t[2]),
            UnitQuaternion::new_normalize(raw),
        ))
    }

    /// Parses the wire form strictly: the quaternion must already be unit
    /// length within [`WIRE_NORM_TOLERANCE`], and is kept bit-for-bit.
    pub fn from_wire(t: [f64; 3], q: [f64; 4]) -> Result<Self, GeometryError> {
        if t.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite component".into()));
        }
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        if (raw.norm() - 1.0).abs() > WIRE_NORM_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "quaternion norm {} is not 1",
                raw.norm()
            )));
        }
        Ok(Self {
            translation: Vec3::new(t[0], t[1], t[2]),
            rotation: UnitQuaternion::new_unchecked(raw),
        })
    }

    pub fn t_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn q_array(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn is_finite(&self) -> bool {
        self.t_array()
            .iter()
            .chain(self.q_array().iter())
            .all(|v| v.is_finite())
    }

    /// Heading of the rotated +X axis projected onto the XY plane.
    pub fn yaw(&self) -> f64 {
        let fwd = self.rotation * Vec3::x();
        fwd.y.atan2(fwd.x)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.translation + self.translation,
            self.rotation * other.rotation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(-(inv * self.translation), inv)
    }

    /// Component-wise comparison of translation and quaternion. `q` and `-q`
    /// describe the same rotation, so both signs are tried.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        let dt = (self.translation - other.translation).amax();
        let a = self.q_array();
        let b = other.q_array();
        let same = a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol);
        let flipped = a.iter().zip(&b).all(|(x, y)| (x + y).abs() <= tol);
        dt <= tol && (same || flipped)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

pub fn transform_point(p: &Pose, x: &Vec3) -> Vec3 {
    p.transform_point(x)
}

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Serialize, Deserialize)]
struct PoseWire {
    t: [f64; 3],
    q: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseWire {
            t: self.t_array(),
            q: self.q_array(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = PoseWire::deserialize(d)?;
        Pose::from_wire(wire.t, wire.q).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FrameId(String);

impl FrameId {
    pub fn new(name: impl Into<String>) -> Result<Self, GeometryError> {
        let name = name.into();
        if name.is_empty() {
            return Err(GeometryError::EmptyFrameId);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for FrameId {
    type Error = GeometryError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        FrameId::new(s)
    }
}

impl From<FrameId> for String {
    fn from(f: FrameId) -> String {
        f.0
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A forest of named frames. Each frame has at most one parent, and the
/// edge stores the child's pose expressed in the parent frame.
///
/// Readers take `&self` and writers `&mut self`; wrap the tree in a
/// `RwLock` to share it across threads.
#[derive(Debug, Clone, Default)]
pub struct TransformTree {
    parents: HashMap<FrameId, Option<(FrameId, Pose)>>,
}

impl TransformTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, frame: &FrameId) -> bool {
        self.parents.contains_key(frame)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn add_root(&mut self, frame: FrameId) -> Result<(), GeometryError> {
        if self.contains(&frame) {
            return Err(GeometryError::DuplicateFrame(frame.0));
        }
        self.parents.insert(frame, None);
        Ok(())
    }

    /// Adds `child` under `parent`, with `child_in_parent` the child's pose
    /// in the parent frame.
    pub fn attach(
        &mut self,
        parent: &FrameId,
        child: FrameId,
        child_in_parent: Pose,
    ) -> Result<(), GeometryError> {
        if !self.contains(parent) {
            return Err(GeometryError::UnknownFrame(parent.0.clone()));
        }
        if self.contains(&child) {
            return Err(GeometryError::DuplicateFrame(child.0));
        }
        if !child_in_parent.is_finite() {
            return Err(GeometryError::InvalidPose(format!("edge to {child}")));
        }
        self.parents
            .insert(child, Some((parent.clone(), child_in_parent)));
        Ok(())
    }

    /// Replaces the transform on an existing edge.
    pub fn update(&mut self, child: &FrameId, child_in_parent: Pose) -> Result<(), GeometryError> {
        match self.parents.get_mut(child) {
            Some(Some((_, pose))) => {
                *pose = child_in_parent;
                Ok(())
            }
            Some(None) => Err(GeometryError::InvalidPose(format!("{child} is a root"))),
            None => Err(GeometryError::UnknownFrame(child.0.clone())),
        }
    }

    /// Root of `frame` and the pose of `frame` expressed in that root.
    fn to_root(&self, frame: &FrameId) -> Result<(FrameId, Pose), GeometryError> {
        let mut current = frame;
        let mut pose = Pose::identity();
        loop {
            match self.parents.get(current) {
                None => return Err(GeometryError::UnknownFrame(current.0.clone())),
                Some(None) => return Ok((current.clone(), pose)),
                Some(Some((parent, edge))) => {
                    pose = edge.compose(&pose);
                    current = parent;
                }
            }
        }
    }

    /// Pose of `to` expressed in `from`.
    pub fn lookup(&self, from: &FrameId, to: &FrameId) -> Result<Pose, GeometryError> {
        let (root_from, from_in_root) = self.to_root(from)?;
        let (root_to, to_in_root) = self.to_root(to)?;
        if root_from != root_to {
            return Err(GeometryError::DisconnectedFrames(from.0.clone(), to.0.clone()));
        }
        if from == to {
            return Ok(Pose::identity());
        }
        Ok(from_in_root.inverse().compose(&to_in_root))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    const TOL: f64 = 1e-9;

    /// Homogeneous matrix built from the textbook quaternion-to-matrix formula.
    fn matrix(p: &Pose) -> Matrix4<f64> {
        let [w, x, y, z] = p.q_array();
        let [tx, ty, tz] = p.t_array();
        Matrix4::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            tx,
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            ty,
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
            tz,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    fn assert_matrix_eq(a: &Matrix4<f64>, b: &Matrix4<f64>) {
        assert!((a - b).amax() < TOL, "{a} vs {b}");
    }

    fn frame(s: &str) -> FrameId {
        FrameId::new(s).unwrap()
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-10.0..10.0f64),
            prop::array::uniform4(-1.0..1.0f64),
        )
            .prop_filter_map("degenerate quaternion", |(t, q)| {
                Pose::from_parts(t, q).ok().filter(|_| {
                    q.iter().map(|v| v * v).sum::<f64>() > 1e-3
                })
            })
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::from_parts([1.0, -2.0, 0.5], [0.9, 0.1, -0.3, 0.2]).unwrap();
        assert!(compose(&Pose::identity(), &p).approx_eq(&p, TOL));
        assert!(compose(&p, &invert(&p)).approx_eq(&Pose::identity(), TOL));
    }

    #[test]
    fn compose_yaw_then_translation() {
        let a = Pose::from_xyz_yaw(1.0, 0.0, 0.0, FRAC_PI_2);
        let b = Pose::from_translation(1.0, 0.0, 0.0);
        let c = compose(&a, &b);
        assert!(c.approx_eq(&Pose::from_xyz_yaw(1.0, 1.0, 0.0, FRAC_PI_2), TOL));
        assert_matrix_eq(&matrix(&c), &(matrix(&a) * matrix(&b)));
    }

    #[test]
    fn invert_cases() {
        assert!(invert(&Pose::identity()).approx_eq(&Pose::identity(), TOL));
        assert!(invert(&Pose::from_translation(2.0, 0.0, 0.0))
            .approx_eq(&Pose::from_translation(-2.0, 0.0, 0.0), TOL));
        let p = Pose::from_xyz_yaw(1.0, 0.0, 0.0, FRAC_PI_2);
        let inv = invert(&p);
        assert!(inv.approx_eq(&Pose::from_xyz_yaw(0.0, 1.0, 0.0, -FRAC_PI_2), TOL));
        assert_matrix_eq(&matrix(&inv), &matrix(&p).try_inverse().unwrap());
    }

    #[test]
    fn transform_point_cases() {
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert!((transform_point(&Pose::identity(), &x) - x).amax() < TOL);
        let up = Pose::from_translation(0.0, 0.0, 1.0);
        assert!((transform_point(&up, &Vec3::zeros()) - Vec3::new(0.0, 0.0, 1.0)).amax() < TOL);
        let yaw = Pose::from_xyz_yaw(0.0, 0.0, 0.0, FRAC_PI_2);
        assert!((transform_point(&yaw, &Vec3::x()) - Vec3::y()).amax() < TOL);
    }

    #[test]
    fn yaw_projection() {
        assert!((Pose::from_xyz_yaw(0.0, 0.0, 0.0, 2.0).yaw() - 2.0).abs() < TOL);
        // Pitch does not change heading.
        let pitched = Pose::new(
            Vec3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.7)
                * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.4),
        );
        assert!((pitched.yaw() - 0.7).abs() < TOL);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert!((wrap_angle(-PI) - PI).abs() < TOL);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < TOL);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn wire_form() {
        let p = Pose::from_xyz_yaw(1.5, -2.0, 0.25, 0.3);
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.starts_with("{\"t\":[1.5,-2.0,0.25],\"q\":["));
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Pose>(r#"{"t":[0,0,0],"q":[2,0,0,0]}"#).is_err());
        assert!(serde_json::from_str::<Pose>(r#"{"t":[0,0],"q":[1,0,0,0]}"#).is_err());
    }

    #[test]
    fn from_parts_rejects_bad_input() {
        assert!(Pose::from_parts([f64::NAN, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Pose::from_parts([0.0; 3], [0.0; 4]).is_err());
        let p = Pose::from_parts([0.0; 3], [2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((p.rotation.quaternion().norm() - 1.0).abs() < TOL);
    }

    #[test]
    fn frame_id_must_be_non_empty() {
        assert_eq!(FrameId::new(""), Err(GeometryError::EmptyFrameId));
        assert!(serde_json::from_str::<FrameId>("\"\"").is_err());
    }

    #[test]
    fn lookup_basic() {
        let mut tree = TransformTree::new();
        tree.add_root(frame("map")).unwrap();
        tree.attach(&frame("map"), frame("anchor"), Pose::from_translation(1.0, 0.0, 0.0))
            .unwrap();
        tree.attach(&frame("anchor"), frame("robot"), Pose::from_translation(1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!(tree.lookup(&frame("map"), &frame("map")).unwrap(), Pose::identity());
        let p = tree.lookup(&frame("map"), &frame("robot")).unwrap();
        assert!(p.approx_eq(&Pose::from_translation(2.0, 0.0, 0.0), TOL));
        let back = tree.lookup(&frame("robot"), &frame("map")).unwrap();
        assert!(back.approx_eq(&p.inverse(), TOL));
    }

    #[test]
    fn lookup_errors() {
        let mut tree = TransformTree::new();
        tree.add_root(frame("a")).unwrap();
        tree.add_root(frame("b")).unwrap();
        assert!(matches!(
            tree.lookup(&frame("a"), &frame("zz")),
            Err(GeometryError::UnknownFrame(_))
        ));
        assert!(matches!(
            tree.lookup(&frame("a"), &frame("b")),
            Err(GeometryError::DisconnectedFrames(..))
        ));
        assert!(matches!(
            tree.attach(&frame("a"), frame("b"), Pose::identity()),
            Err(GeometryError::DuplicateFrame(_))
        ));
        assert!(matches!(
            tree.attach(&frame("nope"), frame("c"), Pose::identity()),
            Err(GeometryError::UnknownFrame(_))
        ));
    }

    #[test]
    fn update_edge() {
        let mut tree = TransformTree::new();
        tree.add_root(frame("map")).unwrap();
        tree.attach(&frame("map"), frame("r"), Pose::identity()).unwrap();
        tree.update(&frame("r"), Pose::from_translation(0.0, 3.0, 0.0)).unwrap();
        let p = tree.lookup(&frame("map"), &frame("r")).unwrap();
        assert!(p.approx_eq(&Pose::from_translation(0.0, 3.0, 0.0), TOL));
        assert!(tree.update(&frame("map"), Pose::identity()).is_err());
    }

    proptest! {
        #[test]
        fn group_laws(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(left.approx_eq(&right, TOL));
            prop_assert!(a.compose(&a.inverse()).approx_eq(&Pose::identity(), TOL));
            prop_assert!(a.inverse().compose(&a).approx_eq(&Pose::identity(), TOL));
            let n = a.compose(&b).rotation.quaternion().norm();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }

        #[test]
        fn point_action_is_homomorphic(a in arb_pose(), b in arb_pose(),
                                       x in prop::array::uniform3(-5.0..5.0f64)) {
            let x = Vec3::new(x[0], x[1], x[2]);
            let lhs = a.compose(&b).transform_point(&x);
            let rhs = a.transform_point(&b.transform_point(&x));
            prop_assert!((lhs - rhs).amax() < TOL);
        }

        /// Random four-frame tree: lookup equals the product of edge matrices.
        #[test]
        fn lookup_matches_matrix_chain(e1 in arb_pose(), e2 in arb_pose(), e3 in arb_pose(),
                                       attach_to_first in any::<bool>()) {
            let mut tree = TransformTree::new();
            tree.add_root(frame("f0")).unwrap();
            tree.attach(&frame("f0"), frame("f1"), e1).unwrap();
            tree.attach(&frame("f1"), frame("f2"), e2).unwrap();
            let parent3 = if attach_to_first { "f1" } else { "f0" };
            tree.attach(&frame(parent3), frame("f3"), e3).unwrap();

            let m = |p: &Pose| matrix(p);
            let in_root = |name: &str| -> Matrix4<f64> {
                match name {
                    "f0" => Matrix4::identity(),
                    "f1" => m(&e1),
                    "f2" => m(&e1) * m(&e2),
                    _ if attach_to_first => m(&e1) * m(&e3),
                    _ => m(&e3),
                }
            };
            for from in ["f0", "f1", "f2", "f3"] {
                for to in ["f0", "f1", "f2", "f3"] {
                    let got = tree.lookup(&frame(from), &frame(to)).unwrap();
                    let expected = in_root(from).try_inverse().unwrap() * in_root(to);
                    prop_assert!((matrix(&got) - expected).amax() < 1e-8);
                    let back = tree.lookup(&frame(to), &frame(from)).unwrap();
                    prop_assert!(back.approx_eq(&got.inverse(), 1e-9));
                }
            }
        }
    }
}
