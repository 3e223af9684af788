//! Anchor-relative waypoint graphs and their keyed store.
//!
//! Every waypoint is stored in the frame of a nearby anchor. New anchors are
//! created automatically while planning, whenever a waypoint is placed
//! farther than the policy radius from every anchor the mission already
//! uses.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor_sim::{create_anchor, needs_new_anchor, AnchorError, AnchorPolicy, AnchorStore};
use crate::geometry::Pose;

pub const SCHEMA_VERSION: u64 = 1;

/// Largest waypoint offset from its anchor accepted when loading a mission:
/// the default new-anchor radius plus 0.5 m of slack.
pub const MAX_ANCHOR_OFFSET: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("UnknownWaypoint: {0}")]
    UnknownWaypoint(String),
    #[error("DuplicateEdge: {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("SelfLoop: {0}")]
    SelfLoop(String),
    #[error("UnknownAnchor: {0}")]
    UnknownAnchor(String),
    #[error("MalformedDocument: {0}")]
    MalformedDocument(String),
    #[error("SchemaVersionUnsupported: {0}")]
    SchemaVersionUnsupported(String),
    #[error("IntegrityViolation: {0}")]
    IntegrityViolation(String),
    #[error("UnknownMission: {0}")]
    UnknownMission(String),
    #[error("InvalidMissionId: {0:?}")]
    InvalidMissionId(String),
    #[error("StoreWriteFailure: {0}")]
    StoreWriteFailure(String),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
}

impl MissionError {
    /// Stable error name used on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UnknownWaypoint(_) => "UnknownWaypoint",
            Self::DuplicateEdge(..) => "DuplicateEdge",
            Self::SelfLoop(_) => "SelfLoop",
            Self::UnknownAnchor(_) => "UnknownAnchor",
            Self::MalformedDocument(_) => "MalformedDocument",
            Self::SchemaVersionUnsupported(_) => "SchemaVersionUnsupported",
            Self::IntegrityViolation(_) => "IntegrityViolation",
            Self::UnknownMission(_) => "UnknownMission",
            Self::InvalidMissionId(_) => "InvalidMissionId",
            Self::StoreWriteFailure(_) => "StoreWriteFailure",
            Self::Anchor(AnchorError::StoreWriteFailure(_)) => "StoreWriteFailure",
            Self::Anchor(_) => "AnchorError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub id: String,
    pub anchor_id: String,
    /// Waypoint pose in its anchor's frame.
    pub local_pose: Pose,
    pub is_inspection: bool,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionEdge {
    pub from: String,
    pub to: String,
    /// Rank among the out-edges of `from`.
    pub order: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchStrategy {
    FirstEdge,
    Interactive,
    Callback { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mission {
    pub schema_version: u64,
    pub id: String,
    #[serde(rename = "anchors")]
    pub anchor_ids: Vec<String>,
    pub start: String,
    pub waypoints: Vec<Waypoint>,
    pub edges: Vec<MissionEdge>,
    pub strategies: BTreeMap<String, BranchStrategy>,
}

impl Mission {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            anchor_ids: Vec::new(),
            start: String::new(),
            waypoints: Vec::new(),
            edges: Vec::new(),
            strategies: BTreeMap::new(),
        }
    }

    pub fn waypoint(&self, id: &str) -> Option<&Waypoint> {
        self.waypoints.iter().find(|w| w.id == id)
    }

    fn waypoint_mut(&mut self, id: &str) -> Option<&mut Waypoint> {
        self.waypoints.iter_mut().find(|w| w.id == id)
    }

    /// Out-edges of `from`, sorted by order.
    pub fn out_edges(&self, from: &str) -> Vec<&MissionEdge> {
        let mut out: Vec<_> = self.edges.iter().filter(|e| e.from == from).collect();
        out.sort_by_key(|e| e.order);
        out
    }

    fn next_waypoint_id(&self) -> String {
        let taken: HashSet<&str> = self.waypoints.iter().map(|w| w.id.as_str()).collect();
        (self.waypoints.len() + 1..)
            .map(|n| format!("wp-{n}"))
            .find(|id| !taken.contains(id.as_str()))
            .expect("unbounded id range")
    }

    /// Places a waypoint at `world_pose`, creating an anchor there first if
    /// no mission anchor lies within `policy.new_anchor_radius`. The
    /// waypoint is attached to its nearest anchor, earliest-created on ties.
    pub fn add_waypoint<R: Rng + ?Sized>(
        &mut self,
        anchors: &mut AnchorStore,
        world_pose: &Pose,
        is_inspection: bool,
        policy: &AnchorPolicy,
        rng: &mut R,
    ) -> Result<Waypoint, MissionError> {
        let existing = self
            .anchor_ids
            .iter()
            .map(|id| anchors.get(id).ok_or_else(|| MissionError::UnknownAnchor(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let position = world_pose.translation;

        let anchor = if needs_new_anchor(&existing, &position, policy) {
            let created = create_anchor(anchors, world_pose, policy, rng)?;
            self.anchor_ids.push(created.id.clone());
            created
        } else {
            let mut best = existing[0];
            let mut best_d = (best.position() - position).norm();
            for a in &existing[1..] {
                let d = (a.position() - position).norm();
                if d < best_d {
                    best = a;
                    best_d = d;
                }
            }
            best.clone()
        };

        let id = self.next_waypoint_id();
        let wp = Waypoint {
            label: id.clone(),
            id,
            anchor_id: anchor.id.clone(),
            local_pose: anchor.world_pose.inverse().compose(world_pose),
            is_inspection,
        };
        if self.start.is_empty() {
            self.start = wp.id.clone();
        }
        self.waypoints.push(wp.clone());
        Ok(wp)
    }

    /// Appends an edge with the next free order rank for `from`.
    pub fn connect(&mut self, from: &str, to: &str) -> Result<&MissionEdge, MissionError> {
        for id in [from, to] {
            if self.waypoint(id).is_none() {
                return Err(MissionError::UnknownWaypoint(id.to_string()));
            }
        }
        if from == to {
            return Err(MissionError::SelfLoop(from.to_string()));
        }
        if self.edges.iter().any(|e| e.from == from && e.to == to) {
            return Err(MissionError::DuplicateEdge(from.to_string(), to.to_string()));
        }
        let order = self
            .edges
            .iter()
            .filter(|e| e.from == from)
            .map(|e| e.order + 1)
            .max()
            .unwrap_or(0);
        self.edges.push(MissionEdge {
            from: from.to_string(),
            to: to.to_string(),
            order,
        });
        Ok(self.edges.last().expect("just pushed"))
    }

    pub fn disconnect(&mut self, from: &str, to: &str) -> bool {
        let before = self.edges.len();
        self.edges.retain(|e| !(e.from == from && e.to == to));
        before != self.edges.len()
    }

    /// Removes a waypoint and its edges. Its anchor stays in the mission.
    pub fn remove_waypoint(&mut self, id: &str) -> Result<Waypoint, MissionError> {
        let idx = self
            .waypoints
            .iter()
            .position(|w| w.id == id)
            .ok_or_else(|| MissionError::UnknownWaypoint(id.to_string()))?;
        let wp = self.waypoints.remove(idx);
        self.edges.retain(|e| e.from != id && e.to != id);
        self.strategies.remove(id);
        if self.start == id {
            self.start = self.waypoints.first().map(|w| w.id.clone()).unwrap_or_default();
        }
        Ok(wp)
    }

    pub fn set_strategy(&mut self, node: &str, strategy: BranchStrategy) -> Result<(), MissionError> {
        if self.waypoint(node).is_none() {
            return Err(MissionError::UnknownWaypoint(node.to_string()));
        }
        self.strategies.insert(node.to_string(), strategy);
        Ok(())
    }

    pub fn set_start(&mut self, node: &str) -> Result<(), MissionError> {
        if self.waypoint(node).is_none() {
            return Err(MissionError::UnknownWaypoint(node.to_string()));
        }
        self.start = node.to_string();
        Ok(())
    }

    pub fn set_label(&mut self, node: &str, label: impl Into<String>) -> Result<(), MissionError> {
        let wp = self
            .waypoint_mut(node)
            .ok_or_else(|| MissionError::UnknownWaypoint(node.to_string()))?;
        wp.label = label.into();
        Ok(())
    }

    /// World pose of a waypoint given its anchor's world pose.
    pub fn world_pose(&self, waypoint: &str, anchors: &AnchorStore) -> Result<Pose, MissionError> {
        let wp = self
            .waypoint(waypoint)
            .ok_or_else(|| MissionError::UnknownWaypoint(waypoint.to_string()))?;
        let anchor = anchors
            .get(&wp.anchor_id)
            .ok_or_else(|| MissionError::UnknownAnchor(wp.anchor_id.clone()))?;
        Ok(anchor.world_pose.compose(&wp.local_pose))
    }

    /// Checks every structural invariant of a complete mission.
    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |msg: String| Err(MissionError::IntegrityViolation(msg));
        if self.schema_version != SCHEMA_VERSION {
            return Err(MissionError::SchemaVersionUnsupported(self.schema_version.to_string()));
        }
        if self.id.is_empty() {
            return bad("empty mission id".into());
        }

        let mut anchors = HashSet::new();
        for a in &self.anchor_ids {
            if a.is_empty() || !anchors.insert(a.as_str()) {
                return bad(format!("anchor id {a:?} empty or repeated"));
            }
        }

        let mut ids = HashSet::new();
        for w in &self.waypoints {
            if w.id.is_empty() || !ids.insert(w.id.as_str()) {
                return bad(format!("waypoint id {:?} empty or repeated", w.id));
            }
            if !anchors.contains(w.anchor_id.as_str()) {
                return bad(format!("waypoint {} references unknown anchor {}", w.id, w.anchor_id));
            }
            let offset = w.local_pose.translation.norm();
            if offset > MAX_ANCHOR_OFFSET {
                return bad(format!("waypoint {} is {offset:.3} m from its anchor", w.id));
            }
        }

        let mut pairs = HashSet::new();
        let mut ranks = HashSet::new();
        let mut out_degree: HashMap<&str, usize> = HashMap::new();
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !ids.contains(end.as_str()) {
                    return bad(format!("edge endpoint {end} is not a waypoint"));
                }
            }
            if e.from == e.to {
                return bad(format!("self loop on {}", e.from));
            }
            if !pairs.insert((e.from.as_str(), e.to.as_str())) {
                return bad(format!("duplicate edge {} -> {}", e.from, e.to));
            }
            if !ranks.insert((e.from.as_str(), e.order)) {
                return bad(format!("duplicate order {} on {}", e.order, e.from));
            }
            *out_degree.entry(e.from.as_str()).or_default() += 1;
        }

        for (node, strategy) in &self.strategies {
            if !ids.contains(node.as_str()) {
                return bad(format!("strategy for unknown waypoint {node}"));
            }
            if let BranchStrategy::Callback { name } = strategy {
                if name.is_empty() {
                    return bad(format!("callback strategy on {node} has no name"));
                }
            }
        }
        for (node, degree) in &out_degree {
            if *degree >= 2 && !self.strategies.contains_key(*node) {
                return bad(format!("branching waypoint {node} has no strategy"));
            }
        }

        if !ids.contains(self.start.as_str()) {
            return bad(format!("start {:?} is not a waypoint", self.start));
        }
        let mut seen = HashSet::from([self.start.as_str()]);
        let mut queue = VecDeque::from([self.start.as_str()]);
        while let Some(n) = queue.pop_front() {
            for e in self.edges.iter().filter(|e| e.from == n) {
                if seen.insert(e.to.as_str()) {
                    queue.push_back(e.to.as_str());
                }
            }
        }
        if let Some(w) = self.waypoints.iter().find(|w| !seen.contains(w.id.as_str())) {
            return bad(format!("waypoint {} is unreachable from start", w.id));
        }
        Ok(())
    }

    /// Canonical JSON: fixed key order, strategies sorted by waypoint id.
    pub fn serialize(&self) -> String {
        serde_json::to_string(self).expect("mission serializes")
    }

    pub fn deserialize(doc: &str) -> Result<Mission, MissionError> {
        let value: serde_json::Value =
            serde_json::from_str(doc).map_err(|e| MissionError::MalformedDocument(e.to_string()))?;
        match value.get("schema_version") {
            Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(MissionError::SchemaVersionUnsupported(v.to_string())),
            None => return Err(MissionError::MalformedDocument("missing schema_version".into())),
        }
        let mission: Mission =
            serde_json::from_value(value).map_err(|e| MissionError::MalformedDocument(e.to_string()))?;
        mission.validate()?;
        Ok(mission)
    }
}

/// Mission ids double as file names.
pub fn validate_mission_id(id: &str) -> Result<(), MissionError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(MissionError::InvalidMissionId(id.to_string()))
    }
}

/// One canonical JSON file per mission, `<id>.json`, in a directory.
/// Loads run concurrently; saves and deletes are serialized.
#[derive(Debug)]
pub struct MissionStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl MissionStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, MissionError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)
            .map_err(|e| MissionError::StoreWriteFailure(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, id: &str) -> Result<PathBuf, MissionError> {
        validate_mission_id(id)?;
        Ok(self.dir.join(format!("{id}.json")))
    }

    /// Validates and writes `m`, replacing any previous mission with its id.
    pub fn save(&self, m: &Mission) -> Result<String, MissionError> {
        m.validate()?;
        let path = self.path_for(&m.id)?;
        let tmp = self.dir.join(format!(".{}.json.tmp", m.id));
        let fail = |e: std::io::Error| MissionError::StoreWriteFailure(format!("{}: {e}", path.display()));
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut f = fs::File::create(&tmp).map_err(fail)?;
        f.write_all(m.serialize().as_bytes()).map_err(fail)?;
        f.sync_all().map_err(fail)?;
        fs::rename(&tmp, &path).map_err(fail)?;
        Ok(m.id.clone())
    }

    pub fn load(&self, id: &str) -> Result<Mission, MissionError> {
        Mission::deserialize(&self.load_raw(id)?)
    }

    /// The stored document text, unparsed.
    pub fn load_raw(&self, id: &str) -> Result<String, MissionError> {
        let path = self.path_for(id)?;
        fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => MissionError::UnknownMission(id.to_string()),
            _ => MissionError::MalformedDocument(format!("{}: {e}", path.display())),
        })
    }

    pub fn delete(&self, id: &str) -> Result<(), MissionError> {
        let path = self.path_for(id)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::remove_file(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => MissionError::UnknownMission(id.to_string()),
            _ => MissionError::StoreWriteFailure(format!("{}: {e}", path.display())),
        })
    }

    /// Stored mission ids, sorted.
    pub fn ids(&self) -> Result<Vec<String>, MissionError> {
        let entries = fs::read_dir(&self.dir)
            .map_err(|e| MissionError::MalformedDocument(format!("{}: {e}", self.dir.display())))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let id = name.strip_suffix(".json")?;
                validate_mission_id(id).ok()?;
                Some(id.to_string())
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-9;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn planned(points: &[(f64, f64)]) -> (Mission, AnchorStore) {
        let mut anchors = AnchorStore::in_memory();
        let mut m = Mission::new("m1");
        let mut r = rng();
        for &(x, y) in points {
            m.add_waypoint(&mut anchors, &Pose::from_xyz_yaw(x, y, 0.0, 0.0), false, &AnchorPolicy::default(), &mut r)
                .unwrap();
        }
        (m, anchors)
    }

    #[test]
    fn first_waypoint_creates_anchor() {
        let (m, anchors) = planned(&[(0.0, 0.0)]);
        assert_eq!(m.anchor_ids.len(), 1);
        assert_eq!(anchors.get(&m.anchor_ids[0]).unwrap().world_pose, Pose::identity());
        assert_eq!(m.waypoints[0].local_pose, Pose::identity());
        assert_eq!(m.start, "wp-1");
    }

    #[test]
    fn nearby_waypoint_reuses_anchor() {
        let (m, _) = planned(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(m.anchor_ids.len(), 1);
        assert!(m.waypoints[1]
            .local_pose
            .approx_eq(&Pose::from_translation(1.0, 0.0, 0.0), TOL));
    }

    #[test]
    fn far_waypoint_creates_second_anchor() {
        let (m, anchors) = planned(&[(0.0, 0.0), (3.0, 0.0)]);
        assert_eq!(m.anchor_ids.len(), 2);
        let second = anchors.get(&m.anchor_ids[1]).unwrap();
        assert!(second.world_pose.approx_eq(&Pose::from_translation(3.0, 0.0, 0.0), TOL));
        assert_eq!(m.waypoints[1].anchor_id, second.id);
        assert!(m.waypoints[1].local_pose.approx_eq(&Pose::identity(), TOL));
    }

    #[test]
    fn nearest_anchor_tie_goes_to_earliest() {
        let (mut m, mut anchors) = planned(&[(0.0, 0.0), (4.0, 0.0)]);
        let wp = m
            .add_waypoint(&mut anchors, &Pose::from_translation(2.0, 0.0, 0.0), false, &AnchorPolicy::default(), &mut rng())
            .unwrap();
        assert_eq!(wp.anchor_id, m.anchor_ids[0]);
    }

    #[test]
    fn world_pose_reconstruction() {
        let (mut m, mut anchors) = planned(&[(0.0, 0.0)]);
        let target = Pose::from_xyz_yaw(1.2, -0.7, 0.4, 2.2);
        let wp = m
            .add_waypoint(&mut anchors, &target, true, &AnchorPolicy::default(), &mut rng())
            .unwrap();
        assert!(m.world_pose(&wp.id, &anchors).unwrap().approx_eq(&target, TOL));
    }

    #[test]
    fn connect_orders_and_errors() {
        let (mut m, _) = planned(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        m.connect("wp-1", "wp-2").unwrap();
        let out: Vec<_> = m.out_edges("wp-1").iter().map(|e| e.to.clone()).collect();
        assert_eq!(out, ["wp-2"]);
        m.connect("wp-1", "wp-3").unwrap();
        let out: Vec<_> = m.out_edges("wp-1").iter().map(|e| (e.to.clone(), e.order)).collect();
        assert_eq!(out, [("wp-2".to_string(), 0), ("wp-3".to_string(), 1)]);
        assert!(matches!(m.connect("wp-1", "wp-1"), Err(MissionError::SelfLoop(_))));
        assert!(matches!(m.connect("wp-1", "wp-2"), Err(MissionError::DuplicateEdge(..))));
        assert!(matches!(m.connect("wp-1", "wp-9"), Err(MissionError::UnknownWaypoint(_))));
    }

    #[test]
    fn cycles_are_allowed() {
        let (mut m, _) = planned(&[(0.0, 0.0), (1.0, 0.0)]);
        m.connect("wp-1", "wp-2").unwrap();
        m.connect("wp-2", "wp-1").unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn minimal_mission_document() {
        let (m, _) = planned(&[(0.0, 0.0)]);
        let doc = m.serialize();
        assert!(doc.starts_with("{\"schema_version\":1,\"id\":\"m1\",\"anchors\":["));
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(v["anchors"].as_array().unwrap().len(), 1);
        assert_eq!(v["waypoints"].as_array().unwrap().len(), 1);
        assert_eq!(Mission::deserialize(&doc).unwrap(), m);
        assert_eq!(doc, Mission::deserialize(&doc).unwrap().serialize());
    }

    #[test]
    fn strategy_wire_form() {
        let (mut m, _) = planned(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        m.connect("wp-1", "wp-2").unwrap();
        m.connect("wp-1", "wp-3").unwrap();
        m.set_strategy("wp-1", BranchStrategy::Callback { name: "gauge_ok".into() })
            .unwrap();
        let doc = m.serialize();
        assert!(doc.contains(r#""strategies":{"wp-1":{"kind":"callback","name":"gauge_ok"}}"#));
        assert!(doc.contains(r#"{"from":"wp-1","to":"wp-3","order":1}"#));
        m.set_strategy("wp-1", BranchStrategy::FirstEdge).unwrap();
        assert!(m.serialize().contains(r#"{"wp-1":{"kind":"first_edge"}}"#));
        assert_eq!(Mission::deserialize(&m.serialize()).unwrap(), m);
    }

    #[test]
    fn rejects_dangling_edge() {
        let (mut m, _) = planned(&[(0.0, 0.0), (1.0, 0.0)]);
        m.connect("wp-1", "wp-2").unwrap();
        let doc = m.serialize().replace(r#""to":"wp-2""#, r#""to":"wp-7""#);
        assert!(matches!(Mission::deserialize(&doc), Err(MissionError::IntegrityViolation(_))));
    }

    #[test]
    fn rejects_branch_without_strategy() {
        let (mut m, _) = planned(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        m.connect("wp-1", "wp-2").unwrap();
        m.connect("wp-1", "wp-3").unwrap();
        assert!(matches!(
            Mission::deserialize(&m.serialize()),
            Err(MissionError::IntegrityViolation(_))
        ));
    }

    #[test]
    fn rejects_unreachable_and_bad_versions() {
        let (m, _) = planned(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(matches!(m.validate(), Err(MissionError::IntegrityViolation(_))));
        let (ok, _) = planned(&[(0.0, 0.0)]);
        let doc = ok.serialize().replace("\"schema_version\":1", "\"schema_version\":2");
        assert!(matches!(
            Mission::deserialize(&doc),
            Err(MissionError::SchemaVersionUnsupported(_))
        ));
        assert!(matches!(Mission::deserialize("[1,2"), Err(MissionError::MalformedDocument(_))));
    }

    #[test]
    fn remove_waypoint_keeps_anchor() {
        let (mut m, _) = planned(&[(0.0, 0.0), (1.0, 0.0)]);
        m.connect("wp-1", "wp-2").unwrap();
        m.remove_waypoint("wp-2").unwrap();
        assert!(m.edges.is_empty());
        assert_eq!(m.anchor_ids.len(), 1);
        m.validate().unwrap();
        let (mut m2, mut anchors) = planned(&[(0.0, 0.0)]);
        let w = m2
            .add_waypoint(&mut anchors, &Pose::from_translation(0.5, 0.0, 0.0), false, &AnchorPolicy::default(), &mut rng())
            .unwrap();
        assert_eq!(w.id, "wp-2");
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = MissionStore::open(dir.path()).unwrap();
        let (mut m, _) = planned(&[(0.0, 0.0), (1.0, 0.0)]);
        m.connect("wp-1", "wp-2").unwrap();
        let id = store.save(&m).unwrap();
        assert_eq!(store.load(&id).unwrap(), m);
        assert!(dir.path().join("m1.json").exists());
        assert!(matches!(store.load("other"), Err(MissionError::UnknownMission(_))));

        m.set_label("wp-2", "gauge").unwrap();
        store.save(&m).unwrap();
        assert_eq!(store.load("m1").unwrap().waypoint("wp-2").unwrap().label, "gauge");
        assert_eq!(store.ids().unwrap(), ["m1"]);

        store.delete("m1").unwrap();
        assert!(matches!(store.delete("m1"), Err(MissionError::UnknownMission(_))));
        assert!(store.ids().unwrap().is_empty());
    }

    #[test]
    fn store_rejects_path_like_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = MissionStore::open(dir.path()).unwrap();
        for id in ["", "../x", "a/b", ".hidden"] {
            assert!(matches!(store.load(id), Err(MissionError::InvalidMissionId(_))));
        }
    }

    #[test]
    fn add_waypoint_reports_anchor_write_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut anchors = AnchorStore::open(dir.path().join("no").join("a.json")).unwrap();
        let mut m = Mission::new("m");
        let err = m
            .add_waypoint(&mut anchors, &Pose::identity(), false, &AnchorPolicy::default(), &mut rng())
            .unwrap_err();
        assert_eq!(err.kind(), "StoreWriteFailure");
        assert!(m.waypoints.is_empty() && m.anchor_ids.is_empty());
    }

    #[test]
    fn anchors_unknown_to_store_are_reported() {
        let mut m = Mission::new("m");
        m.anchor_ids.push("ghost".into());
        let mut anchors = AnchorStore::in_memory();
        let err = m
            .add_waypoint(&mut anchors, &Pose::identity(), false, &AnchorPolicy::default(), &mut rng())
            .unwrap_err();
        assert!(matches!(err, MissionError::UnknownAnchor(_)));
    }
}
