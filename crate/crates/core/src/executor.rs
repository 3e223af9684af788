//! Mission execution: fetch, relocalize against the mission's anchors,
//! reconstruct waypoint poses in the map frame and drive the simulated
//! robot through the mission graph while emitting an event log.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor_sim::{self, AnchorError, AnchorStore, RelocModel};
use crate::geometry::{FrameId, Pose, TransformTree};
use crate::gestures::Command;
use crate::mapconv::OccupancyGrid;
use crate::mission::{BranchStrategy, Mission, MissionError, MissionStore};
use crate::nav::{self, GridPath, NavError, Pose2D, RobotState, RobotStatus};

/// Node name used for ad-hoc goals outside any mission.
pub const AD_HOC_NODE: &str = "goal";
pub const MAP_FRAME: &str = "map";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    AnchorUnreachable,
    StepBudget,
    CallbackMissing,
    CallbackChoseUnknownEdge,
    NoPath,
    StartOccupied,
    GoalOccupied,
    OutsideMap,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<&NavError> for FailureReason {
    fn from(e: &NavError) -> Self {
        match e {
            NavError::StartOccupied(..) => FailureReason::StartOccupied,
            NavError::GoalOccupied(..) => FailureReason::GoalOccupied,
            NavError::OutsideMap(..) => FailureReason::OutsideMap,
            NavError::NoPath => FailureReason::NoPath,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum ExecutionState {
    Idle,
    Fetching,
    Localizing,
    Navigating { node: String },
    Inspecting { node: String },
    AwaitingBranch { node: String },
    Preempted,
    Completed,
    Failed { reason: FailureReason, message: String },
}

impl ExecutionState {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            ExecutionState::Preempted | ExecutionState::Completed | ExecutionState::Failed { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExecutionState::Idle => "Idle",
            ExecutionState::Fetching => "Fetching",
            ExecutionState::Localizing => "Localizing",
            ExecutionState::Navigating { .. } => "Navigating",
            ExecutionState::Inspecting { .. } => "Inspecting",
            ExecutionState::AwaitingBranch { .. } => "AwaitingBranch",
            ExecutionState::Preempted => "Preempted",
            ExecutionState::Completed => "Completed",
            ExecutionState::Failed { .. } => "Failed",
        }
    }

    pub fn node(&self) -> Option<&str> {
        match self {
            ExecutionState::Navigating { node }
            | ExecutionState::Inspecting { node }
            | ExecutionState::AwaitingBranch { node } => Some(node),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionCapture {
    pub waypoint_id: String,
    pub pose: Pose2D,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchOption {
    pub order: u32,
    pub to: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchSource {
    FirstEdge,
    Callback,
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    StateChanged { state: ExecutionState },
    PoseUpdate { x: f64, y: f64, yaw: f64, speed: f64 },
    PathPlanned { node: String, points: Vec<[f64; 2]> },
    CaptureTaken { capture: InspectionCapture },
    BranchRequested { node: String, options: Vec<BranchOption> },
    BranchResolved { node: String, order: u32, to: String, source: BranchSource },
    Error { error: String, message: String },
}

/// Wire form: `{"seq","t","kind",...payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub seq: u64,
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("UnknownMission: {0}")]
    UnknownMission(String),
    #[error("{0}")]
    Mission(String),
    #[error("NotAwaitingBranch: state is {0}")]
    NotAwaitingBranch(String),
    #[error("UnknownEdge: no out-edge with order {order} at {node}")]
    UnknownEdge { node: String, order: u32 },
    #[error("MissionActive")]
    MissionActive,
    #[error("GoalOccupied: ({0}, {1})")]
    GoalOccupied(f64, f64),
    #[error("GoalOutsideMap: ({0}, {1})")]
    GoalOutsideMap(f64, f64),
    #[error("NoPath to ({0}, {1})")]
    NoPath(f64, f64),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Anchor(String),
}

impl ExecError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExecError::UnknownMission(_) => "UnknownMission",
            ExecError::Mission(_) => "MissionError",
            ExecError::NotAwaitingBranch(_) => "NotAwaitingBranch",
            ExecError::UnknownEdge { .. } => "UnknownEdge",
            ExecError::MissionActive => "MissionActive",
            ExecError::GoalOccupied(..) => "GoalOccupied",
            ExecError::GoalOutsideMap(..) => "GoalOutsideMap",
            ExecError::NoPath(..) => "NoPath",
            ExecError::InvalidConfig(_) => "InvalidConfig",
            ExecError::Anchor(_) => "AnchorError",
        }
    }
}

impl From<AnchorError> for ExecError {
    fn from(e: AnchorError) -> Self {
        ExecError::Anchor(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    /// Simulation step used by the service driver (s).
    pub dt: f64,
    /// Robot cruise speed (m/s).
    pub speed: f64,
    /// Node visits allowed before failing with `StepBudget`.
    pub max_steps: usize,
    /// Probe poses tried per anchor during localization.
    pub probe_count: usize,
    /// Seed of the probe scan pattern.
    pub seed: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            speed: 0.5,
            max_steps: 1000,
            probe_count: 8,
            seed: 0,
        }
    }
}

/// Chooses an out-edge order given the captures so far.
pub type BranchCallback = Arc<dyn Fn(&str, &[InspectionCapture], &[BranchOption]) -> u32 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionSummary {
    pub mission_id: Option<String>,
    pub state: ExecutionState,
    pub robot: RobotState,
    pub visits: Vec<String>,
    pub captures: Vec<InspectionCapture>,
    pub localized_anchors: Vec<String>,
    pub last_seq: u64,
    pub t: f64,
}

struct MissionRun {
    mission: Mission,
    /// Reconstructed map-frame targets, only for waypoints whose anchor
    /// was localized.
    targets: HashMap<String, Pose2D>,
}

/// One execution. Owns the robot, the frame tree and the event log.
pub struct Execution {
    grid: Arc<OccupancyGrid>,
    model: RelocModel,
    cfg: ExecutorConfig,
    state: ExecutionState,
    events: Vec<ExecutionEvent>,
    robot: RobotState,
    tree: TransformTree,
    run: Option<MissionRun>,
    path: Option<GridPath>,
    visits: Vec<String>,
    captures: Vec<InspectionCapture>,
    localized: Vec<String>,
    callbacks: HashMap<String, BranchCallback>,
    clock: f64,
}

impl fmt::Debug for Execution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Execution")
            .field("state", &self.state)
            .field("robot", &self.robot)
            .field("events", &self.events.len())
            .finish_non_exhaustive()
    }
}

fn pose3(p: &Pose2D) -> Pose {
    Pose::from_xyz_yaw(p.x, p.y, 0.0, p.yaw)
}

fn pose2(p: &Pose) -> Pose2D {
    Pose2D::new(p.translation.x, p.translation.y, p.yaw())
}

fn map_frame() -> FrameId {
    FrameId::new(MAP_FRAME).expect("static frame name")
}

impl Execution {
    /// An idle execution with the robot at `robot_start`.
    pub fn new(grid: Arc<OccupancyGrid>, model: RelocModel, cfg: ExecutorConfig, robot_start: Pose2D) -> Result<Self, ExecError> {
        model.validate()?;
        if !(cfg.dt > 0.0 && cfg.speed > 0.0 && cfg.probe_count >= 1) {
            return Err(ExecError::InvalidConfig(format!("{cfg:?}")));
        }
        let mut tree = TransformTree::new();
        tree.add_root(map_frame()).expect("fresh tree");
        let mut exec = Self {
            grid,
            model,
            cfg,
            state: ExecutionState::Idle,
            events: Vec::new(),
            robot: RobotState::idle_at(robot_start),
            tree,
            run: None,
            path: None,
            visits: Vec::new(),
            captures: Vec::new(),
            localized: Vec::new(),
            callbacks: HashMap::new(),
            clock: 0.0,
        };
        exec.emit(EventKind::StateChanged {
            state: ExecutionState::Idle,
        });
        Ok(exec)
    }

    /// Creates an execution and immediately begins the mission.
    #[allow(clippy::too_many_arguments)]
    pub fn start(
        store: &MissionStore,
        anchors: &AnchorStore,
        grid: Arc<OccupancyGrid>,
        mission_id: &str,
        model: RelocModel,
        cfg: ExecutorConfig,
        robot_start: Pose2D,
    ) -> Result<Self, ExecError> {
        let mission = load_mission(store, mission_id)?;
        let mut exec = Self::new(grid, model, cfg, robot_start)?;
        exec.begin(mission, anchors)?;
        Ok(exec)
    }

    pub fn register_callback(&mut self, name: impl Into<String>, cb: BranchCallback) {
        self.callbacks.insert(name.into(), cb);
    }

    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn events(&self) -> &[ExecutionEvent] {
        &self.events
    }

    /// Events with `seq > after`.
    pub fn events_after(&self, after: u64) -> &[ExecutionEvent] {
        // Sequence numbers start at 1 and are gap-free.
        let start = (after as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn visits(&self) -> &[String] {
        &self.visits
    }

    pub fn captures(&self) -> &[InspectionCapture] {
        &self.captures
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.cfg
    }

    pub fn mission(&self) -> Option<&Mission> {
        self.run.as_ref().map(|r| &r.mission)
    }

    /// Map-frame target reconstructed for a waypoint, if its anchor was
    /// localized.
    pub fn target(&self, waypoint: &str) -> Option<Pose2D> {
        self.run.as_ref().and_then(|r| r.targets.get(waypoint).copied())
    }

    pub fn tree(&self) -> &TransformTree {
        &self.tree
    }

    pub fn summary(&self) -> ExecutionSummary {
        ExecutionSummary {
            mission_id: self.mission().map(|m| m.id.clone()),
            state: self.state.clone(),
            robot: self.robot,
            visits: self.visits.clone(),
            captures: self.captures.clone(),
            localized_anchors: self.localized.clone(),
            last_seq: self.last_seq(),
            t: self.clock,
        }
    }

    fn emit(&mut self, kind: EventKind) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(ExecutionEvent { seq, t: self.clock, kind });
    }

    fn set_state(&mut self, state: ExecutionState) {
        if self.state != state {
            self.state = state.clone();
            self.emit(EventKind::StateChanged { state });
        }
    }

    fn fail(&mut self, reason: FailureReason, message: impl Into<String>) {
        self.robot = nav::preempt(&self.robot);
        self.path = None;
        self.set_state(ExecutionState::Failed {
            reason,
            message: message.into(),
        });
    }

    fn mission_active(&self) -> bool {
        match &self.state {
            ExecutionState::Fetching | ExecutionState::Localizing => true,
            ExecutionState::Navigating { node } => node != AD_HOC_NODE || self.run.is_some(),
            ExecutionState::Inspecting { .. } | ExecutionState::AwaitingBranch { .. } => true,
            _ => false,
        }
    }

    /// Runs a validated mission from the robot's current pose.
    pub fn begin(&mut self, mission: Mission, anchors: &AnchorStore) -> Result<&ExecutionState, ExecError> {
        if self.mission_active() || matches!(self.state, ExecutionState::Navigating { .. }) {
            return Err(ExecError::MissionActive);
        }
        mission.validate().map_err(|e| ExecError::Mission(e.to_string()))?;
        self.set_state(ExecutionState::Fetching);
        self.set_state(ExecutionState::Localizing);
        self.visits.clear();
        self.captures.clear();
        self.localize(&mission, anchors)?;

        let mut targets = HashMap::new();
        for w in &mission.waypoints {
            if self.localized.contains(&w.anchor_id) {
                let frame = FrameId::new(w.anchor_id.clone()).map_err(|e| ExecError::Anchor(e.to_string()))?;
                let anchor_in_map = self
                    .tree
                    .lookup(&map_frame(), &frame)
                    .map_err(|e| ExecError::Anchor(e.to_string()))?;
                targets.insert(w.id.clone(), pose2(&anchor_in_map.compose(&w.local_pose)));
            }
        }
        let start = mission.start.clone();
        self.run = Some(MissionRun { mission, targets });
        if self.localized.is_empty() {
            self.fail(FailureReason::AnchorUnreachable, "no mission anchor could be localized");
        } else {
            self.enter_node(&start);
        }
        Ok(&self.state)
    }

    /// Probe poses share the robot's position; the scan pattern varies the
    /// heading. The first probe is the robot pose itself.
    fn probe_poses(&self) -> Vec<Pose2D> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let here = self.robot.pose;
        (0..self.cfg.probe_count)
            .map(|k| {
                if k == 0 {
                    here
                } else {
                    Pose2D::new(here.x, here.y, here.yaw + rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                }
            })
            .collect()
    }

    fn localize(&mut self, mission: &Mission, anchors: &AnchorStore) -> Result<(), ExecError> {
        let probes = self.probe_poses();
        let map = map_frame();
        for anchor_id in &mission.anchor_ids {
            if self.localized.contains(anchor_id) {
                continue;
            }
            let mut best = None;
            for (k, probe) in probes.iter().enumerate() {
                let device = pose3(probe);
                if let Some(result) = anchor_sim::query(anchors, anchor_id, &device, &self.model, k as u64)? {
                    // Confidence depends only on distance, so later probes
                    // at the same position cannot do better.
                    best = Some((k, device, result));
                    break;
                }
            }
            if let Some((k, device, result)) = best {
                let probe_frame = FrameId::new(format!("probe/{anchor_id}/{k}")).map_err(|e| ExecError::Anchor(e.to_string()))?;
                self.tree
                    .attach(&map, probe_frame.clone(), device)
                    .map_err(|e| ExecError::Anchor(e.to_string()))?;
                anchor_sim::localize_to_frame(&mut self.tree, &result, &probe_frame)
                    .map_err(|e| ExecError::Anchor(e.to_string()))?;
                self.localized.push(anchor_id.clone());
            }
        }
        Ok(())
    }

    fn enter_node(&mut self, node: &str) {
        let Some(run) = &self.run else { return };
        let Some(target) = run.targets.get(node).copied() else {
            let anchor = run.mission.waypoint(node).map(|w| w.anchor_id.clone()).unwrap_or_default();
            self.fail(
                FailureReason::AnchorUnreachable,
                format!("waypoint {node} depends on anchor {anchor}, which was not localized"),
            );
            return;
        };
        self.set_state(ExecutionState::Navigating { node: node.to_string() });
        if let Err(e) = self.dispatch(node, target) {
            self.fail(FailureReason::from(&e), e.to_string());
        }
    }

    fn dispatch(&mut self, node: &str, target: Pose2D) -> Result<(), NavError> {
        let here = [self.robot.pose.x, self.robot.pose.y];
        let path = nav::plan(&self.grid, here, [target.x, target.y])?.with_final_yaw(target.yaw);
        self.emit(EventKind::PathPlanned {
            node: node.to_string(),
            points: path.polyline(),
        });
        self.robot = self.robot.dispatch();
        self.path = Some(path);
        Ok(())
    }

    /// Advances the simulation by `dt` seconds.
    pub fn tick(&mut self, dt: f64) -> &ExecutionState {
        if self.state.is_terminal() || !(dt > 0.0) {
            return &self.state;
        }
        let ExecutionState::Navigating { node } = self.state.clone() else {
            return &self.state;
        };
        self.clock += dt;
        let Some(path) = &self.path else { return &self.state };
        let next = nav::step(&self.robot, path, dt, self.cfg.speed);
        if next.pose != self.robot.pose || next.speed != self.robot.speed {
            self.emit(EventKind::PoseUpdate {
                x: next.pose.x,
                y: next.pose.y,
                yaw: next.pose.yaw,
                speed: next.speed,
            });
        }
        self.robot = next;
        if self.robot.status == RobotStatus::Arrived {
            self.path = None;
            self.arrive(&node);
        }
        &self.state
    }

    fn arrive(&mut self, node: &str) {
        self.robot = RobotState {
            status: RobotStatus::Idle,
            speed: 0.0,
            progress: 0.0,
            ..self.robot
        };
        let Some(run) = &self.run else {
            self.set_state(ExecutionState::Completed);
            return;
        };
        let is_inspection = run.mission.waypoint(node).is_some_and(|w| w.is_inspection);
        let options: Vec<BranchOption> = run
            .mission
            .out_edges(node)
            .into_iter()
            .map(|e| BranchOption {
                order: e.order,
                to: e.to.clone(),
            })
            .collect();
        let strategy = run.mission.strategies.get(node).cloned();
        self.visits.push(node.to_string());
        if is_inspection {
            self.set_state(ExecutionState::Inspecting { node: node.to_string() });
            let capture = InspectionCapture {
                waypoint_id: node.to_string(),
                pose: self.robot.pose,
                t: self.clock,
            };
            self.captures.push(capture.clone());
            self.emit(EventKind::CaptureTaken { capture });
        }

        if options.is_empty() {
            self.set_state(ExecutionState::Completed);
            return;
        }
        if self.visits.len() >= self.cfg.max_steps {
            self.fail(
                FailureReason::StepBudget,
                format!("{} node visits reached", self.visits.len()),
            );
            return;
        }
        if options.len() == 1 {
            let to = options[0].to.clone();
            self.enter_node(&to);
            return;
        }
        match strategy.unwrap_or(BranchStrategy::FirstEdge) {
            BranchStrategy::FirstEdge => {
                let first = options.iter().min_by_key(|o| o.order).expect("non-empty").clone();
                self.take_branch(node, first, BranchSource::FirstEdge);
            }
            BranchStrategy::Callback { name } => {
                let Some(cb) = self.callbacks.get(&name).cloned() else {
                    self.fail(FailureReason::CallbackMissing, format!("no callback registered as {name}"));
                    return;
                };
                let order = cb(node, &self.captures, &options);
                match options.iter().find(|o| o.order == order) {
                    Some(choice) => self.take_branch(node, choice.clone(), BranchSource::Callback),
                    None => self.fail(
                        FailureReason::CallbackChoseUnknownEdge,
                        format!("callback {name} chose order {order} at {node}"),
                    ),
                }
            }
            BranchStrategy::Interactive => {
                self.set_state(ExecutionState::AwaitingBranch { node: node.to_string() });
                self.emit(EventKind::BranchRequested {
                    node: node.to_string(),
                    options,
                });
            }
        }
    }

    fn take_branch(&mut self, node: &str, choice: BranchOption, source: BranchSource) {
        self.emit(EventKind::BranchResolved {
            node: node.to_string(),
            order: choice.order,
            to: choice.to.clone(),
            source,
        });
        self.enter_node(&choice.to);
    }

    /// Answers a pending interactive branch.
    pub fn resolve_branch(&mut self, node: &str, order: u32) -> Result<&ExecutionState, ExecError> {
        match &self.state {
            ExecutionState::AwaitingBranch { node: waiting } if waiting == node => {}
            other => return Err(ExecError::NotAwaitingBranch(other.name().to_string())),
        }
        let choice = self
            .run
            .as_ref()
            .and_then(|r| r.mission.out_edges(node).into_iter().find(|e| e.order == order))
            .map(|e| BranchOption {
                order: e.order,
                to: e.to.clone(),
            })
            .ok_or_else(|| ExecError::UnknownEdge {
                node: node.to_string(),
                order,
            })?;
        self.take_branch(node, choice, BranchSource::Interactive);
        Ok(&self.state)
    }

    /// Stops the robot; terminal states are left unchanged.
    pub fn preempt(&mut self) -> &ExecutionState {
        if !self.state.is_terminal() {
            self.robot = nav::preempt(&self.robot);
            self.path = None;
            self.set_state(ExecutionState::Preempted);
        }
        &self.state
    }

    /// Applies a gesture or UI command. Goals start an ad-hoc navigation
    /// and are refused while a mission runs.
    pub fn inject_command(&mut self, cmd: Command) -> Result<&ExecutionState, ExecError> {
        match cmd {
            Command::NoOp => Ok(&self.state),
            Command::Preempt => Ok(self.preempt()),
            Command::Goal { x, y, yaw } => {
                if self.mission_active() {
                    return Err(ExecError::MissionActive);
                }
                let here = [self.robot.pose.x, self.robot.pose.y];
                let path = match nav::plan(&self.grid, here, [x, y]) {
                    Ok(p) => p.with_final_yaw(yaw),
                    Err(NavError::GoalOccupied(..)) => return Err(ExecError::GoalOccupied(x, y)),
                    Err(NavError::OutsideMap(ox, oy)) if ox == x && oy == y => {
                        return Err(ExecError::GoalOutsideMap(x, y))
                    }
                    Err(_) => return Err(ExecError::NoPath(x, y)),
                };
                self.run = None;
                self.set_state(ExecutionState::Navigating {
                    node: AD_HOC_NODE.to_string(),
                });
                self.emit(EventKind::PathPlanned {
                    node: AD_HOC_NODE.to_string(),
                    points: path.polyline(),
                });
                self.robot = self.robot.dispatch();
                self.path = Some(path);
                Ok(&self.state)
            }
        }
    }

    /// Ticks with the configured `dt` until the state is terminal, a
    /// branch is pending or `max_ticks` is reached.
    pub fn run_until_blocked(&mut self, max_ticks: usize) -> &ExecutionState {
        let dt = self.cfg.dt;
        for _ in 0..max_ticks {
            if !matches!(self.state, ExecutionState::Navigating { .. }) {
                break;
            }
            self.tick(dt);
        }
        &self.state
    }
}

fn load_mission(store: &MissionStore, id: &str) -> Result<Mission, ExecError> {
    store.load(id).map_err(|e| match e {
        MissionError::UnknownMission(_) | MissionError::InvalidMissionId(_) => ExecError::UnknownMission(id.to_string()),
        other => ExecError::Mission(other.to_string()),
    })
}

/// Replays `StateChanged` events into the state trajectory.
pub fn replay_states(events: &[ExecutionEvent]) -> Vec<ExecutionState> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::StateChanged { state } => Some(state.clone()),
            _ => None,
        })
        .collect()
}
