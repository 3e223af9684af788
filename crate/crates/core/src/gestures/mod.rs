//! Hand-gesture recognition from joint flexion angles and the mapping from
//! recognized gestures to robot commands.

mod net;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::mapconv::OccupancyGrid;
use crate::nav::Pose2D;

pub use net::{
    infer, loss_and_gradients, train, Batch, GestureNet, Inference, TrainConfig, TrainReport, DIM,
};
pub use synth::{
    generate_dataset, standard_subjects, template_frame, SyntheticSubject, BACKGROUND_FRAMES, NOMINAL_FPS,
    RECORDING_FRAMES,
};

pub const JOINTS: usize = 19;
pub const WINDOW: usize = 12;
pub const FEATURES: usize = JOINTS * WINDOW;
pub const DEFAULT_FRONT_OFFSET: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GestureError {
    #[error("TooFewFrames: {0} frames, need {WINDOW}")]
    TooFewFrames(usize),
    #[error("InvalidWindow: {0}")]
    InvalidWindow(String),
    #[error("InvalidFrame: {0}")]
    InvalidFrame(String),
    #[error("ClassMissing: no training windows for {0}")]
    ClassMissing(GestureLabel),
    #[error("TooFewSubjects: need at least 2, got {0}")]
    TooFewSubjects(usize),
    #[error("UnknownSubject: {0}")]
    UnknownSubject(String),
    #[error("NonFiniteLoss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("RayParallelToGround")]
    RayParallelToGround,
    #[error("GoalOutsideMap: ({0}, {1})")]
    GoalOutsideMap(f64, f64),
    #[error("InvalidParameters: {0}")]
    InvalidParameters(String),
    #[error("MalformedDataset at line {line}: {message}")]
    MalformedDataset { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureLabel {
    Stop,
    ComeHere,
    Point,
    Background,
}

impl GestureLabel {
    /// Class order of the network outputs.
    pub const ALL: [GestureLabel; 4] = [
        GestureLabel::Stop,
        GestureLabel::ComeHere,
        GestureLabel::Point,
        GestureLabel::Background,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for GestureLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| format!("unknown gesture label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandFrame {
    pub timestamp: f64,
    pub flexion: [f64; JOINTS],
}

impl HandFrame {
    pub fn new(timestamp: f64, flexion: [f64; JOINTS]) -> Result<Self, GestureError> {
        if !timestamp.is_finite() {
            return Err(GestureError::InvalidFrame("timestamp not finite".into()));
        }
        if let Some(a) = flexion.iter().find(|a| !(a.is_finite() && a.abs() <= std::f64::consts::PI)) {
            return Err(GestureError::InvalidFrame(format!("angle {a} outside [-pi, pi]")));
        }
        Ok(Self { timestamp, flexion })
    }
}

/// Twelve consecutive frames with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureWindow {
    frames: Vec<HandFrame>,
}

impl GestureWindow {
    pub fn new(frames: Vec<HandFrame>) -> Result<Self, GestureError> {
        if frames.len() != WINDOW {
            return Err(GestureError::InvalidWindow(format!("{} frames", frames.len())));
        }
        if frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(GestureError::InvalidWindow("timestamps not increasing".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[HandFrame] {
        &self.frames
    }

    pub fn end_time(&self) -> f64 {
        self.frames[WINDOW - 1].timestamp
    }

    /// Row-major by time, then joint.
    pub fn features(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.flexion).collect()
    }
}

/// Sliding windows of twelve frames with stride one; window `k` ends at
/// frame `k + 11`.
pub fn window_stream(frames: &[HandFrame]) -> Result<Vec<GestureWindow>, GestureError> {
    if frames.len() < WINDOW {
        return Err(GestureError::TooFewFrames(frames.len()));
    }
    frames
        .windows(WINDOW)
        .map(|w| GestureWindow::new(w.to_vec()))
        .collect()
}

/// One labeled recording; the dataset file holds one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recording {
    pub subject: String,
    pub label: GestureLabel,
    pub fps: f64,
    pub frames: Vec<[f64; JOINTS]>,
}

impl Recording {
    pub fn hand_frames(&self) -> Result<Vec<HandFrame>, GestureError> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(GestureError::InvalidFrame(format!("fps {}", self.fps)));
        }
        self.frames
            .iter()
            .enumerate()
            .map(|(k, f)| HandFrame::new(k as f64 / self.fps, *f))
            .collect()
    }

    pub fn windows(&self) -> Result<Vec<GestureWindow>, GestureError> {
        window_stream(&self.hand_frames()?)
    }
}

pub fn write_jsonl(recordings: &[Recording]) -> String {
    let mut out = String::new();
    for r in recordings {
        out.push_str(&serde_json::to_string(r).expect("recording serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(text: &str) -> Result<Vec<Recording>, GestureError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GestureError::MalformedDataset {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    Goal { x: f64, y: f64, yaw: f64 },
    Preempt,
    NoOp,
}

impl Command {
    pub fn goal(pose: Pose2D) -> Self {
        Command::Goal {
            x: pose.x,
            y: pose.y,
            yaw: pose.yaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandConfig {
    pub front_offset: f64,
}

impl Default for CommandConfig {
    fn default() -> Self {
        Self {
            front_offset: DEFAULT_FRONT_OFFSET,
        }
    }
}

/// Turns a recognized gesture into a robot command. Poses are in the
/// shared map frame.
pub fn gesture_to_command(
    label: GestureLabel,
    headset: &Pose,
    hand_position: &Vec3,
    cfg: &CommandConfig,
) -> Result<Command, GestureError> {
    match label {
        GestureLabel::Stop => Ok(Command::Preempt),
        GestureLabel::Background => Ok(Command::NoOp),
        GestureLabel::ComeHere => {
            let yaw = headset.yaw();
            let p = headset.translation;
            Ok(Command::goal(Pose2D::new(
                p.x + cfg.front_offset * yaw.cos(),
                p.y + cfg.front_offset * yaw.sin(),
                wrap_angle(yaw + std::f64::consts::PI),
            )))
        }
        GestureLabel::Point => {
            let origin = headset.translation;
            let dir = hand_position - origin;
            if !(dir.z < -1e-12) {
                return Err(GestureError::RayParallelToGround);
            }
            let s = -origin.z / dir.z;
            if !(s >= 0.0) {
                return Err(GestureError::RayParallelToGround);
            }
            let hit = origin + dir * s;
            Ok(Command::goal(Pose2D::new(hit.x, hit.y, dir.y.atan2(dir.x))))
        }
    }
}

/// Rejects goals that fall outside the grid.
pub fn check_goal_on_map(cmd: Command, grid: &OccupancyGrid) -> Result<Command, GestureError> {
    match cmd {
        Command::Goal { x, y, .. } if grid.world_to_cell(x, y).is_none() => Err(GestureError::GoalOutsideMap(x, y)),
        other => Ok(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapconv::Cell;

    fn frames(n: usize) -> Vec<HandFrame> {
        (0..n)
            .map(|k| HandFrame::new(k as f64 / 60.0, [k as f64 * 0.01; JOINTS]).unwrap())
            .collect()
    }

    #[test]
    fn windowing() {
        assert_eq!(window_stream(&frames(12)).unwrap().len(), 1);
        let ws = window_stream(&frames(15)).unwrap();
        assert_eq!(ws.len(), 4);
        let f = frames(15);
        for (k, w) in ws.iter().enumerate() {
            assert_eq!(w.frames()[WINDOW - 1], f[k + 11]);
        }
        assert_eq!(window_stream(&frames(11)), Err(GestureError::TooFewFrames(11)));
    }

    #[test]
    fn window_invariants() {
        let mut f = frames(12);
        f[5].timestamp = f[4].timestamp;
        assert!(GestureWindow::new(f).is_err());
        assert!(GestureWindow::new(frames(11)).is_err());
        assert!(HandFrame::new(0.0, [4.0; JOINTS]).is_err());
    }

    #[test]
    fn feature_layout() {
        let fs: Vec<HandFrame> = (0..WINDOW)
            .map(|t| {
                let mut a = [0.0; JOINTS];
                for (j, v) in a.iter_mut().enumerate() {
                    *v = (t * 100 + j) as f64 / 1000.0;
                }
                HandFrame::new(t as f64, a).unwrap()
            })
            .collect();
        let x = GestureWindow::new(fs).unwrap().features();
        assert_eq!(x.len(), 228);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[18], 0.018);
        assert_eq!(x[19], 0.1);
        assert_eq!(x[19 * 11 + 7], 1.107);
    }

    #[test]
    fn come_here_goal() {
        let cmd = gesture_to_command(
            GestureLabel::ComeHere,
            &Pose::identity(),
            &Vec3::zeros(),
            &CommandConfig::default(),
        )
        .unwrap();
        let Command::Goal { x, y, yaw } = cmd else { panic!() };
        assert!((x - 1.5).abs() < 1e-12 && y.abs() < 1e-12);
        assert!((yaw - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn point_ray_hits_floor() {
        let head = Pose::from_translation(0.0, 0.0, 1.6);
        let cmd = gesture_to_command(GestureLabel::Point, &head, &Vec3::new(0.3, 0.0, 1.4), &CommandConfig::default())
            .unwrap();
        let Command::Goal { x, y, yaw } = cmd else { panic!() };
        assert!((x - 2.4).abs() < 1e-12 && y.abs() < 1e-12 && yaw.abs() < 1e-12);
        assert_eq!(
            gesture_to_command(GestureLabel::Point, &head, &Vec3::new(0.3, 0.0, 1.6), &CommandConfig::default()),
            Err(GestureError::RayParallelToGround)
        );
        assert_eq!(
            gesture_to_command(GestureLabel::Point, &head, &Vec3::new(0.3, 0.0, 1.9), &CommandConfig::default()),
            Err(GestureError::RayParallelToGround)
        );
    }

    #[test]
    fn stop_and_background() {
        let cfg = CommandConfig::default();
        let p = Pose::identity();
        assert_eq!(gesture_to_command(GestureLabel::Stop, &p, &Vec3::zeros(), &cfg), Ok(Command::Preempt));
        assert_eq!(gesture_to_command(GestureLabel::Background, &p, &Vec3::zeros(), &cfg), Ok(Command::NoOp));
    }

    #[test]
    fn goal_outside_map() {
        let grid = OccupancyGrid::filled([0.0, 0.0], 0.5, 4, 4, Cell::Free);
        let inside = Command::Goal { x: 1.0, y: 1.0, yaw: 0.0 };
        assert_eq!(check_goal_on_map(inside, &grid), Ok(inside));
        assert!(matches!(
            check_goal_on_map(Command::Goal { x: 9.0, y: 1.0, yaw: 0.0 }, &grid),
            Err(GestureError::GoalOutsideMap(..))
        ));
        assert_eq!(check_goal_on_map(Command::NoOp, &grid), Ok(Command::NoOp));
    }

    #[test]
    fn label_names_and_dataset_lines() {
        for l in GestureLabel::ALL {
            assert_eq!(l.to_string().parse::<GestureLabel>().unwrap(), l);
        }
        let rec = Recording {
            subject: "subject-0".into(),
            label: GestureLabel::Point,
            fps: 60.0,
            frames: vec![[0.25; JOINTS]; 2],
        };
        let text = write_jsonl(std::slice::from_ref(&rec));
        assert!(text.starts_with(r#"{"subject":"subject-0","label":"Point","fps":60.0,"frames":[[0.25,"#));
        assert_eq!(read_jsonl(&text).unwrap(), vec![rec]);
        assert!(matches!(read_jsonl("\n{}"), Err(GestureError::MalformedDataset { line: 2, .. })));
    }
}
