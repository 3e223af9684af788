//! Simulated cloud anchor service.
//!
//! Anchors are world-locked frames with a small cloud of feature points.
//! Relocalization queries succeed with a probability that depends only on
//! the distance between the querying device and the anchor, and the
//! returned relative pose carries distance-dependent Gaussian noise.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FrameId, GeometryError, Pose, TransformTree, Vec3};

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("UnknownAnchor: {0}")]
    UnknownAnchor(String),
    #[error("StoreWriteFailure: {0}")]
    StoreWriteFailure(String),
    #[error("StoreCorrupt: {0}")]
    StoreCorrupt(String),
    #[error("InvalidModel: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: String,
    pub world_pose: Pose,
    pub features: Vec<Vec3>,
    pub created_at: DateTime<Utc>,
}

impl Anchor {
    pub fn position(&self) -> Vec3 {
        self.world_pose.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPolicy {
    pub new_anchor_radius: f64,
    pub feature_count: usize,
    pub feature_radius: f64,
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        Self {
            new_anchor_radius: 2.5,
            feature_count: 200,
            feature_radius: 3.0,
        }
    }
}

/// Distance-dependent recall and noise model for relocalization queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelocModel {
    /// Translation noise per axis at zero distance (m).
    pub sigma_t0: f64,
    /// Rotation noise per axis at zero distance (rad).
    pub sigma_r0: f64,
    /// Recall starts dropping beyond this distance (m).
    pub degrade_onset: f64,
    /// Recall reaches zero at this distance (m).
    pub cutoff: f64,
    /// Minimum fraction of the anchor's features that must lie within
    /// `cutoff` of the device. Zero disables the check.
    pub min_visible_fraction: f64,
    pub seed: u64,
}

impl Default for RelocModel {
    fn default() -> Self {
        Self {
            sigma_t0: 0.01,
            sigma_r0: 0.01,
            degrade_onset: 4.0,
            cutoff: 8.0,
            min_visible_fraction: 0.0,
            seed: 0,
        }
    }
}

impl RelocModel {
    pub fn noiseless() -> Self {
        Self {
            sigma_t0: 0.0,
            sigma_r0: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        let ok = self.degrade_onset > 0.0
            && self.degrade_onset < self.cutoff
            && self.sigma_t0 >= 0.0
            && self.sigma_r0 >= 0.0
            && (0.0..=1.0).contains(&self.min_visible_fraction)
            && self.cutoff.is_finite();
        if ok {
            Ok(())
        } else {
            Err(AnchorError::InvalidModel(format!("{self:?}")))
        }
    }

    /// Probability that a query from distance `d` succeeds.
    pub fn recall(&self, d: f64) -> f64 {
        if d <= self.degrade_onset {
            1.0
        } else if d >= self.cutoff {
            0.0
        } else {
            (self.cutoff - d) / (self.cutoff - self.degrade_onset)
        }
    }

    fn noise_scale(&self, d: f64) -> f64 {
        1.0 + (d - self.degrade_onset).max(0.0)
    }

    pub fn sigma_t(&self, d: f64) -> f64 {
        self.sigma_t0 * self.noise_scale(d)
    }

    pub fn sigma_r(&self, d: f64) -> f64 {
        self.sigma_r0 * self.noise_scale(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub anchor_id: String,
    /// The anchor frame expressed in the querying device's frame.
    pub anchor_in_query: Pose,
    pub confidence: f64,
}

/// Registry of anchors, optionally backed by a JSON file that is rewritten
/// on every commit.
#[derive(Debug, Default)]
pub struct AnchorStore {
    anchors: IndexMap<String, Anchor>,
    path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    anchors: Vec<Anchor>,
}

impl AnchorStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the store at `path`, starting empty if the file does not exist.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AnchorError> {
        let path = path.as_ref().to_path_buf();
        let anchors = if path.exists() {
            let text = fs::read_to_string(&path)
                .map_err(|e| AnchorError::StoreCorrupt(format!("{}: {e}", path.display())))?;
            Self::parse(&text)?
        } else {
            IndexMap::new()
        };
        Ok(Self {
            anchors,
            path: Some(path),
        })
    }

    fn parse(text: &str) -> Result<IndexMap<String, Anchor>, AnchorError> {
        let file: StoreFile =
            serde_json::from_str(text).map_err(|e| AnchorError::StoreCorrupt(e.to_string()))?;
        let mut anchors = IndexMap::new();
        for a in file.anchors {
            if a.features.is_empty() {
                return Err(AnchorError::StoreCorrupt(format!("anchor {} has no features", a.id)));
            }
            if anchors.insert(a.id.clone(), a).is_some() {
                return Err(AnchorError::StoreCorrupt("duplicate anchor id".into()));
            }
        }
        Ok(anchors)
    }

    /// Binds the store to `path` and writes it there.
    pub fn save_to(&mut self, path: impl AsRef<Path>) -> Result<(), AnchorError> {
        self.path = Some(path.as_ref().to_path_buf());
        self.commit()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<&Anchor> {
        self.anchors.get(id)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Anchors in creation order.
    pub fn iter(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.values()
    }

    pub fn to_json(&self) -> String {
        let file = StoreFile {
            anchors: self.anchors.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("anchor store serializes")
    }

    /// Inserts an externally built anchor and commits.
    pub fn insert(&mut self, anchor: Anchor) -> Result<(), AnchorError> {
        let previous = self.anchors.insert(anchor.id.clone(), anchor.clone());
        if let Err(e) = self.commit() {
            match previous {
                Some(p) => {
                    self.anchors.insert(p.id.clone(), p);
                }
                None => {
                    self.anchors.shift_remove(&anchor.id);
                }
            }
            return Err(e);
        }
        Ok(())
    }

    fn commit(&self) -> Result<(), AnchorError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let fail = |e: std::io::Error| AnchorError::StoreWriteFailure(format!("{}: {e}", path.display()));
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp).map_err(fail)?;
        f.write_all(self.to_json().as_bytes()).map_err(fail)?;
        f.sync_all().map_err(fail)?;
        fs::rename(&tmp, path).map_err(fail)
    }
}

/// Creates and persists a new anchor at `device_pose`.
pub fn create_anchor<R: Rng + ?Sized>(
    store: &mut AnchorStore,
    device_pose: &Pose,
    policy: &AnchorPolicy,
    rng: &mut R,
) -> Result<Anchor, AnchorError> {
    if !device_pose.is_finite() {
        return Err(GeometryError::InvalidPose("device pose".into()).into());
    }
    let id = uuid::Builder::from_random_bytes(rng.random()).into_uuid();
    let center = device_pose.translation;
    let features = (0..policy.feature_count.max(1))
        .map(|_| center + sample_in_ball(rng, policy.feature_radius))
        .collect();
    let anchor = Anchor {
        id: id.to_string(),
        world_pose: *device_pose,
        features,
        created_at: Utc::now(),
    };
    store.insert(anchor.clone())?;
    Ok(anchor)
}

/// Uniform sample in a ball: Gaussian direction, radius ∝ cbrt(u).
fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    loop {
        let dir = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = dir.norm();
        if n > 1e-12 {
            let r = radius * rng.random::<f64>().cbrt();
            return dir * (r / n);
        }
    }
}

/// True iff no existing anchor lies within `policy.new_anchor_radius`.
pub fn needs_new_anchor(existing: &[&Anchor], device_pos: &Vec3, policy: &AnchorPolicy) -> bool {
    existing
        .iter()
        .map(|a| (a.position() - device_pos).norm())
        .fold(f64::INFINITY, f64::min)
        > policy.new_anchor_radius
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-query stream seed from the model seed, anchor id and query index.
pub fn query_seed(model_seed: u64, anchor_id: &str, query_index: u64) -> u64 {
    // FNV-1a keeps the id hash stable across toolchains.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in anchor_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(model_seed ^ h) ^ query_index)
}

/// Relocalization query against `anchor_id` from `device_pose`.
///
/// Each call owns its random stream, seeded from the model seed, the anchor
/// id and `query_index`, so results do not depend on call interleaving.
pub fn query(
    store: &AnchorStore,
    anchor_id: &str,
    device_pose: &Pose,
    model: &RelocModel,
    query_index: u64,
) -> Result<Option<LocalizationResult>, AnchorError> {
    let anchor = store
        .get(anchor_id)
        .ok_or_else(|| AnchorError::UnknownAnchor(anchor_id.to_string()))?;
    let device = device_pose.translation;
    let d = (anchor.position() - device).norm();

    if model.min_visible_fraction > 0.0 {
        let visible = anchor
            .features
            .iter()
            .filter(|f| (*f - device).norm() <= model.cutoff)
            .count();
        if (visible as f64) < model.min_visible_fraction * anchor.features.len() as f64 {
            return Ok(None);
        }
    }

    let p = model.recall(d);
    let mut rng = ChaCha8Rng::seed_from_u64(query_seed(model.seed, anchor_id, query_index));
    if p <= 0.0 || rng.random::<f64>() >= p {
        return Ok(None);
    }

    let truth = device_pose.inverse().compose(&anchor.world_pose);
    let sigma_t = model.sigma_t(d);
    let sigma_r = model.sigma_r(d);
    let anchor_in_query = if sigma_t == 0.0 && sigma_r == 0.0 {
        truth
    } else {
        let nt = Normal::new(0.0, sigma_t).map_err(|e| AnchorError::InvalidModel(e.to_string()))?;
        let nr = Normal::new(0.0, sigma_r).map_err(|e| AnchorError::InvalidModel(e.to_string()))?;
        let dt = Vec3::new(nt.sample(&mut rng), nt.sample(&mut rng), nt.sample(&mut rng));
        let dr = Vec3::new(nr.sample(&mut rng), nr.sample(&mut rng), nr.sample(&mut rng));
        Pose::new(
            truth.translation + dt,
            UnitQuaternion::from_scaled_axis(dr) * truth.rotation,
        )
    };
    Ok(Some(LocalizationResult {
        anchor_id: anchor_id.to_string(),
        anchor_in_query,
        confidence: p,
    }))
}

/// Adds the localized anchor as a child of `device_frame`.
pub fn localize_to_frame(
    tree: &mut TransformTree,
    result: &LocalizationResult,
    device_frame: &FrameId,
) -> Result<FrameId, GeometryError> {
    let frame = FrameId::new(result.anchor_id.clone())?;
    tree.attach(device_frame, frame.clone(), result.anchor_in_query)?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn frame(s: &str) -> FrameId {
        FrameId::new(s).unwrap()
    }

    #[test]
    fn create_defaults() {
        let mut store = AnchorStore::in_memory();
        let policy = AnchorPolicy::default();
        let a = create_anchor(&mut store, &Pose::identity(), &policy, &mut rng()).unwrap();
        assert_eq!(a.world_pose, Pose::identity());
        assert_eq!(a.features.len(), 200);
        assert!(uuid::Uuid::parse_str(&a.id).is_ok());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn ids_are_distinct() {
        let mut store = AnchorStore::in_memory();
        let mut r = rng();
        let policy = AnchorPolicy::default();
        let a = create_anchor(&mut store, &Pose::identity(), &policy, &mut r).unwrap();
        let b = create_anchor(&mut store, &Pose::identity(), &policy, &mut r).unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn features_stay_in_ball() {
        let mut store = AnchorStore::in_memory();
        let pose = Pose::from_xyz_yaw(4.0, -1.0, 1.2, 0.3);
        let a = create_anchor(&mut store, &pose, &AnchorPolicy::default(), &mut rng()).unwrap();
        let worst = a
            .features
            .iter()
            .map(|f| (f - pose.translation).norm())
            .fold(0.0, f64::max);
        assert!(worst <= 3.0, "feature at {worst} m");
        // Not collapsed onto the center either.
        assert!(worst > 2.0);
    }

    #[test]
    fn threshold_cases() {
        let policy = AnchorPolicy::default();
        assert!(needs_new_anchor(&[], &Vec3::zeros(), &policy));
        let mut store = AnchorStore::in_memory();
        let a = create_anchor(&mut store, &Pose::identity(), &policy, &mut rng()).unwrap();
        assert!(!needs_new_anchor(&[&a], &Vec3::new(2.4, 0.0, 0.0), &policy));
        assert!(needs_new_anchor(&[&a], &Vec3::new(2.6, 0.0, 0.0), &policy));
    }

    #[test]
    fn zero_noise_query_is_exact() {
        let mut store = AnchorStore::in_memory();
        let anchor_pose = Pose::from_xyz_yaw(1.0, 0.0, 0.0, 0.4);
        let a = create_anchor(&mut store, &anchor_pose, &AnchorPolicy::default(), &mut rng()).unwrap();
        let device = Pose::identity();
        let r = query(&store, &a.id, &device, &RelocModel::noiseless(), 0)
            .unwrap()
            .unwrap();
        assert_eq!(r.confidence, 1.0);
        assert!(r.anchor_in_query.approx_eq(&anchor_pose, TOL));
    }

    #[test]
    fn beyond_cutoff_fails() {
        let mut store = AnchorStore::in_memory();
        let a = create_anchor(&mut store, &Pose::from_translation(10.0, 0.0, 0.0), &AnchorPolicy::default(), &mut rng())
            .unwrap();
        for i in 0..100 {
            assert!(query(&store, &a.id, &Pose::identity(), &RelocModel::default(), i)
                .unwrap()
                .is_none());
        }
    }

    #[test]
    fn unknown_anchor() {
        let store = AnchorStore::in_memory();
        assert!(matches!(
            query(&store, "nope", &Pose::identity(), &RelocModel::default(), 0),
            Err(AnchorError::UnknownAnchor(_))
        ));
    }

    #[test]
    fn query_is_deterministic_per_index() {
        let mut store = AnchorStore::in_memory();
        let a = create_anchor(&mut store, &Pose::from_translation(5.0, 0.0, 0.0), &AnchorPolicy::default(), &mut rng())
            .unwrap();
        let m = RelocModel::default();
        let run = |i| query(&store, &a.id, &Pose::identity(), &m, i).unwrap();
        assert_eq!(run(3), run(3));
        let distinct: Vec<_> = (0..20).map(run).collect();
        assert!(distinct.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn recall_curve_shape() {
        let m = RelocModel::default();
        assert_eq!(m.recall(0.0), 1.0);
        assert_eq!(m.recall(4.0), 1.0);
        assert!((m.recall(6.0) - 0.5).abs() < TOL);
        assert_eq!(m.recall(8.0), 0.0);
        assert!((m.sigma_t(1.0) - 0.01).abs() < TOL);
        assert!((m.sigma_t(6.0) - 0.03).abs() < TOL);
    }

    #[test]
    fn model_validation() {
        assert!(RelocModel::default().validate().is_ok());
        let bad = RelocModel {
            cutoff: 3.0,
            ..RelocModel::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn visible_fraction_gate() {
        let mut store = AnchorStore::in_memory();
        let a = create_anchor(&mut store, &Pose::from_translation(6.0, 0.0, 0.0), &AnchorPolicy::default(), &mut rng())
            .unwrap();
        let strict = RelocModel {
            min_visible_fraction: 1.0,
            ..RelocModel::noiseless()
        };
        // Some features are more than 8 m from the device.
        let far = Pose::from_translation(0.0, 0.0, 0.0);
        assert!((0..50).all(|i| query(&store, &a.id, &far, &strict, i).unwrap().is_none()));
        let near = Pose::from_translation(5.0, 0.0, 0.0);
        assert!(query(&store, &a.id, &near, &strict, 0).unwrap().is_some());
    }

    #[test]
    fn localize_inserts_frame() {
        let mut tree = TransformTree::new();
        tree.add_root(frame("device")).unwrap();
        let result = LocalizationResult {
            anchor_id: "a1".into(),
            anchor_in_query: Pose::from_translation(1.0, 0.0, 0.0),
            confidence: 1.0,
        };
        let f = localize_to_frame(&mut tree, &result, &frame("device")).unwrap();
        assert_eq!(f.as_str(), "a1");
        let p = tree.lookup(&frame("device"), &f).unwrap();
        assert!(p.approx_eq(&Pose::from_translation(1.0, 0.0, 0.0), TOL));
        let back = tree.lookup(&f, &frame("device")).unwrap();
        assert!(back.approx_eq(&Pose::from_translation(-1.0, 0.0, 0.0), TOL));
        assert!(matches!(
            localize_to_frame(&mut tree, &result, &frame("device")),
            Err(GeometryError::DuplicateFrame(_))
        ));

        let mut t2 = TransformTree::new();
        t2.add_root(frame("device")).unwrap();
        let identity = LocalizationResult {
            anchor_in_query: Pose::identity(),
            ..result
        };
        let f = localize_to_frame(&mut t2, &identity, &frame("device")).unwrap();
        assert_eq!(t2.lookup(&frame("device"), &f).unwrap(), Pose::identity());
    }

    #[test]
    fn noiseless_query_recovers_device_world_pose() {
        let mut store = AnchorStore::in_memory();
        let anchor_pose = Pose::from_xyz_yaw(2.0, 1.0, 0.3, 1.1);
        let a = create_anchor(&mut store, &anchor_pose, &AnchorPolicy::default(), &mut rng()).unwrap();
        let device = Pose::from_xyz_yaw(0.5, -0.5, 0.0, -0.6);
        let r = query(&store, &a.id, &device, &RelocModel::noiseless(), 0)
            .unwrap()
            .unwrap();
        let mut tree = TransformTree::new();
        tree.add_root(frame("device")).unwrap();
        let af = localize_to_frame(&mut tree, &r, &frame("device")).unwrap();
        // world ∘ anchor->device
        let device_in_anchor = tree.lookup(&af, &frame("device")).unwrap();
        let reconstructed = a.world_pose.compose(&device_in_anchor);
        assert!(reconstructed.approx_eq(&device, TOL));
    }

    #[test]
    fn store_persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchors.json");
        let mut store = AnchorStore::open(&path).unwrap();
        let a = create_anchor(&mut store, &Pose::from_translation(1.0, 2.0, 0.0), &AnchorPolicy::default(), &mut rng())
            .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let first = &v["anchors"][0];
        for key in ["id", "world_pose", "features", "created_at"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let reloaded = AnchorStore::open(&path).unwrap();
        assert_eq!(reloaded.get(&a.id), Some(&a));
    }

    #[test]
    fn write_failure_rolls_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing-dir").join("anchors.json");
        let mut store = AnchorStore::open(&path).unwrap();
        let err = create_anchor(&mut store, &Pose::identity(), &AnchorPolicy::default(), &mut rng());
        assert!(matches!(err, Err(AnchorError::StoreWriteFailure(_))));
        assert!(store.is_empty());
    }

    #[test]
    fn corrupt_store_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchors.json");
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(AnchorStore::open(&path), Err(AnchorError::StoreCorrupt(_))));
    }

    #[test]
    fn scale_consistency() {
        let policy = AnchorPolicy::default();
        let mut store = AnchorStore::in_memory();
        let a = create_anchor(&mut store, &Pose::from_translation(1.0, 1.0, 0.0), &policy, &mut rng()).unwrap();
        let mut r = rng();
        for _ in 0..200 {
            let p = Vec3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), 0.0);
            let k: f64 = r.random_range(0.1..10.0);
            let scaled_policy = AnchorPolicy {
                new_anchor_radius: policy.new_anchor_radius * k,
                ..policy
            };
            let mut scaled = a.clone();
            scaled.world_pose.translation *= k;
            assert_eq!(
                needs_new_anchor(&[&a], &p, &policy),
                needs_new_anchor(&[&scaled], &(p * k), &scaled_policy)
            );
        }
    }
}
