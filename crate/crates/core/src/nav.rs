//! Grid planning and a kinematic robot that follows planned paths.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::wrap_angle;
use crate::mapconv::{Cell, OccupancyGrid};

/// Arrival tolerance on position (m).
pub const POSITION_TOLERANCE: f64 = 0.1;
/// Arrival tolerance on heading (rad).
pub const YAW_TOLERANCE: f64 = 0.1;
/// In-place rotation rate used to reach the final heading (rad/s).
pub const TURN_RATE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NavError {
    #[error("StartOccupied: ({0}, {1})")]
    StartOccupied(f64, f64),
    #[error("GoalOccupied: ({0}, {1})")]
    GoalOccupied(f64, f64),
    #[error("OutsideMap: ({0}, {1})")]
    OutsideMap(f64, f64),
    #[error("NoPath")]
    NoPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotStatus {
    Idle,
    Moving,
    Arrived,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub speed: f64,
    pub status: RobotStatus,
    /// Arc length travelled along the active path (m).
    pub progress: f64,
}

impl RobotState {
    pub fn idle_at(pose: Pose2D) -> Self {
        Self {
            pose,
            speed: 0.0,
            status: RobotStatus::Idle,
            progress: 0.0,
        }
    }

    /// Starts following a freshly planned path from its beginning.
    pub fn dispatch(&self) -> Self {
        Self {
            status: RobotStatus::Moving,
            progress: 0.0,
            ..*self
        }
    }
}

/// A 4-connected cell path. `world_points` are the cell centers; the
/// followed polyline swaps the two end centers for the exact start and
/// goal points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub cells: Vec<(usize, usize)>,
    pub world_points: Vec<[f64; 2]>,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Heading to turn to in place after reaching the goal.
    pub final_yaw: Option<f64>,
}

impl GridPath {
    pub fn steps(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    pub fn with_final_yaw(mut self, yaw: f64) -> Self {
        self.final_yaw = Some(wrap_angle(yaw));
        self
    }

    pub fn polyline(&self) -> Vec<[f64; 2]> {
        let n = self.world_points.len();
        let mut pts = Vec::with_capacity(n.max(2));
        pts.push(self.start);
        if n > 2 {
            pts.extend_from_slice(&self.world_points[1..n - 1]);
        }
        pts.push(self.goal);
        pts
    }

    pub fn length(&self) -> f64 {
        self.polyline()
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    /// Point at arc length `s` and the heading of the segment it lies on.
    fn point_at(&self, s: f64) -> ([f64; 2], Option<f64>) {
        let pts = self.polyline();
        let mut remaining = s.max(0.0);
        let mut heading = None;
        for w in pts.windows(2) {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let len = dx.hypot(dy);
            if len <= 1e-12 {
                continue;
            }
            heading = Some(dy.atan2(dx));
            if remaining <= len {
                let f = remaining / len;
                return ([w[0][0] + f * dx, w[0][1] + f * dy], heading);
            }
            remaining -= len;
        }
        (self.goal, heading)
    }
}

fn passable(grid: &OccupancyGrid, ix: usize, iy: usize) -> bool {
    grid.get(ix, iy) == Cell::Free
}

/// Shortest 4-connected path by A* with a Manhattan heuristic and unit
/// step cost. Among equal f-values the lexicographically lower `(ix, iy)`
/// is expanded first. Unknown cells are not traversable.
pub fn plan(grid: &OccupancyGrid, start: [f64; 2], goal: [f64; 2]) -> Result<GridPath, NavError> {
    let (sx, sy) = grid
        .world_to_cell(start[0], start[1])
        .ok_or(NavError::OutsideMap(start[0], start[1]))?;
    let (gx, gy) = grid
        .world_to_cell(goal[0], goal[1])
        .ok_or(NavError::OutsideMap(goal[0], goal[1]))?;
    if !passable(grid, sx, sy) {
        return Err(NavError::StartOccupied(start[0], start[1]));
    }
    if !passable(grid, gx, gy) {
        return Err(NavError::GoalOccupied(goal[0], goal[1]));
    }

    let w = grid.width;
    let idx = |x: usize, y: usize| y * w + x;
    let h = |x: usize, y: usize| (x.abs_diff(gx) + y.abs_diff(gy)) as u64;
    let mut g = vec![u64::MAX; w * grid.height];
    let mut parent = vec![usize::MAX; w * grid.height];
    let mut closed = vec![false; w * grid.height];
    let mut open = BinaryHeap::new();
    g[idx(sx, sy)] = 0;
    open.push(Reverse((h(sx, sy), sx, sy)));

    while let Some(Reverse((_, x, y))) = open.pop() {
        let here = idx(x, y);
        if closed[here] {
            continue;
        }
        closed[here] = true;
        if (x, y) == (gx, gy) {
            break;
        }
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbours {
            if nx >= w || ny >= grid.height || !passable(grid, nx, ny) {
                continue;
            }
            let n = idx(nx, ny);
            let cost = g[here] + 1;
            if cost < g[n] {
                g[n] = cost;
                parent[n] = here;
                open.push(Reverse((cost + h(nx, ny), nx, ny)));
            }
        }
    }

    if !closed[idx(gx, gy)] {
        return Err(NavError::NoPath);
    }
    let mut cells = vec![(gx, gy)];
    let mut cur = idx(gx, gy);
    while cur != idx(sx, sy) {
        cur = parent[cur];
        cells.push((cur % w, cur / w));
    }
    cells.reverse();
    let world_points = cells.iter().map(|&(x, y)| grid.cell_center(x, y)).collect();
    Ok(GridPath {
        cells,
        world_points,
        start,
        goal,
        final_yaw: None,
    })
}

/// Advances a moving robot by `v·dt` along the path polyline, facing the
/// direction of travel. At the end of the path the robot turns in place
/// toward `path.final_yaw` and then reports `Arrived`. Non-moving robots
/// are returned unchanged.
pub fn step(state: &RobotState, path: &GridPath, dt: f64, v: f64) -> RobotState {
    if state.status != RobotStatus::Moving || !(dt > 0.0) {
        return *state;
    }
    let mut next = *state;
    let total = path.length();
    let remaining = total - state.progress;
    if remaining > 1e-12 {
        let advance = (v.max(0.0) * dt).min(remaining);
        next.progress = if advance >= remaining { total } else { state.progress + advance };
        let (pt, heading) = path.point_at(next.progress);
        next.pose.x = pt[0];
        next.pose.y = pt[1];
        if let Some(hd) = heading {
            next.pose.yaw = wrap_angle(hd);
        }
        next.speed = v;
        return next;
    }

    next.speed = 0.0;
    match path.final_yaw {
        Some(target) => {
            let err = wrap_angle(target - state.pose.yaw);
            let max_turn = TURN_RATE * dt;
            if err.abs() <= max_turn {
                next.pose.yaw = wrap_angle(target);
                next.status = RobotStatus::Arrived;
            } else {
                next.pose.yaw = wrap_angle(state.pose.yaw + max_turn.copysign(err));
            }
        }
        None => next.status = RobotStatus::Arrived,
    }
    next
}

/// Stops the robot where it is.
pub fn preempt(state: &RobotState) -> RobotState {
    RobotState {
        speed: 0.0,
        status: RobotStatus::Idle,
        progress: 0.0,
        ..*state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn empty(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::filled([0.0, 0.0], 1.0, w, h, Cell::Free)
    }

    fn bfs_steps(grid: &OccupancyGrid, s: (usize, usize), g: (usize, usize)) -> Option<usize> {
        let mut dist = vec![usize::MAX; grid.width * grid.height];
        let mut q = VecDeque::from([s]);
        dist[s.1 * grid.width + s.0] = 0;
        while let Some((x, y)) = q.pop_front() {
            let d = dist[y * grid.width + x];
            if (x, y) == g {
                return Some(d);
            }
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if grid.in_bounds(nx, ny) {
                    let (nx, ny) = (nx as usize, ny as usize);
                    let n = ny * grid.width + nx;
                    if grid.get(nx, ny) == Cell::Free && dist[n] == usize::MAX {
                        dist[n] = d + 1;
                        q.push_back((nx, ny));
                    }
                }
            }
        }
        None
    }

    #[test]
    fn straight_corridor() {
        let p = plan(&empty(5, 5), [0.0, 0.0], [0.0, 4.0]).unwrap();
        assert_eq!(p.steps(), 4);
        assert!((p.length() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn start_equals_goal() {
        let p = plan(&empty(5, 5), [2.0, 2.0], [2.0, 2.0]).unwrap();
        assert_eq!(p.cells, vec![(2, 2)]);
        assert_eq!(p.steps(), 0);
    }

    #[test]
    fn errors() {
        let mut g = empty(5, 5);
        g.set(1, 1, Cell::Occupied);
        assert!(matches!(plan(&g, [1.0, 1.0], [3.0, 3.0]), Err(NavError::StartOccupied(..))));
        assert!(matches!(plan(&g, [3.0, 3.0], [1.0, 1.0]), Err(NavError::GoalOccupied(..))));
        assert!(matches!(plan(&g, [3.0, 3.0], [9.0, 1.0]), Err(NavError::OutsideMap(..))));
        for y in 0..5 {
            g.set(2, y, Cell::Occupied);
        }
        assert_eq!(plan(&g, [0.0, 0.0], [4.0, 4.0]), Err(NavError::NoPath));
    }

    #[test]
    fn unknown_cells_block() {
        let g = OccupancyGrid::from_rows([0.0, 0.0], 1.0, &["...", "???", "..."]).unwrap();
        assert_eq!(plan(&g, [0.0, 0.0], [0.0, 2.0]), Err(NavError::NoPath));
    }

    #[test]
    fn deterministic_tie_break() {
        // Both L-shaped routes are optimal; the lexicographic rule expands
        // the lower x column first.
        let p = plan(&empty(3, 3), [0.0, 0.0], [2.0, 2.0]).unwrap();
        assert_eq!(p.steps(), 4);
        assert_eq!(p, plan(&empty(3, 3), [0.0, 0.0], [2.0, 2.0]).unwrap());
    }

    #[test]
    fn matches_bfs_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut g = empty(20, 20);
            for y in 0..20 {
                for x in 0..20 {
                    if rng.random::<f64>() < 0.2 {
                        g.set(x, y, Cell::Occupied);
                    }
                }
            }
            let s = (rng.random_range(0..20), rng.random_range(0..20));
            let t = (rng.random_range(0..20), rng.random_range(0..20));
            g.set(s.0, s.1, Cell::Free);
            g.set(t.0, t.1, Cell::Free);
            let res = plan(&g, [s.0 as f64, s.1 as f64], [t.0 as f64, t.1 as f64]);
            match bfs_steps(&g, s, t) {
                Some(d) => {
                    let p = res.unwrap();
                    assert_eq!(p.steps(), d);
                    assert!(p.cells.iter().all(|&(x, y)| g.get(x, y) == Cell::Free));
                    assert!(p.cells.windows(2).all(|w| w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1) == 1));
                }
                None => assert_eq!(res, Err(NavError::NoPath)),
            }
        }
    }

    fn moving_at(x: f64, y: f64) -> RobotState {
        RobotState::idle_at(Pose2D::new(x, y, 0.0)).dispatch()
    }

    #[test]
    fn step_kinematics() {
        let path = plan(&empty(5, 1), [0.0, 0.0], [1.0, 0.0]).unwrap();
        let s = step(&moving_at(0.0, 0.0), &path, 1.0, 0.5);
        assert!((s.pose.x - 0.5).abs() < 1e-12);
        assert_eq!(s.status, RobotStatus::Moving);
        assert_eq!(s.speed, 0.5);
    }

    #[test]
    fn at_final_point_arrives_in_place() {
        let path = plan(&empty(5, 1), [2.0, 0.0], [2.0, 0.0]).unwrap();
        let s0 = moving_at(2.0, 0.0);
        let s = step(&s0, &path, 0.1, 0.5);
        assert_eq!(s.status, RobotStatus::Arrived);
        assert_eq!(s.pose, s0.pose);
    }

    #[test]
    fn telescoping_distance() {
        let g = OccupancyGrid::from_rows([0.0, 0.0], 0.5, &["......", ".####.", "......"]).unwrap();
        let path = plan(&g, [0.0, 0.5], [2.5, 0.5]).unwrap();
        let (dt, v) = (0.07, 0.6);
        let mut s = moving_at(0.0, 0.5);
        let mut travelled = 0.0;
        for _ in 0..1000 {
            let n = step(&s, &path, dt, v);
            let moved = (n.pose.x - s.pose.x).hypot(n.pose.y - s.pose.y);
            assert!(moved <= v * dt + 1e-9);
            travelled += moved;
            s = n;
            if s.status == RobotStatus::Arrived {
                break;
            }
        }
        assert_eq!(s.status, RobotStatus::Arrived);
        assert!((travelled - path.length()).abs() <= v * dt);
        assert!(s.pose.distance_to(2.5, 0.5) < 1e-9);
    }

    #[test]
    fn turns_to_final_yaw() {
        let path = plan(&empty(3, 1), [0.0, 0.0], [2.0, 0.0]).unwrap().with_final_yaw(2.0);
        let mut s = moving_at(0.0, 0.0);
        for _ in 0..200 {
            s = step(&s, &path, 0.1, 1.0);
        }
        assert_eq!(s.status, RobotStatus::Arrived);
        assert!((s.pose.yaw - 2.0).abs() < 1e-12);
    }

    #[test]
    fn preempt_is_idempotent_and_freezes() {
        let path = plan(&empty(5, 1), [0.0, 0.0], [4.0, 0.0]).unwrap();
        let moving = step(&moving_at(0.0, 0.0), &path, 1.0, 1.0);
        let stopped = preempt(&moving);
        assert_eq!(stopped.status, RobotStatus::Idle);
        assert_eq!(stopped.speed, 0.0);
        assert_eq!(preempt(&stopped), stopped);
        assert_eq!(step(&stopped, &path, 1.0, 1.0).pose, stopped.pose);
    }
}
