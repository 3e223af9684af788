//! A small reproducible inspection scenario: map, anchor, mission and
//! robot start. Used by tests, the CLI and the demo service setup.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchor_sim::{create_anchor, AnchorPolicy, AnchorStore};
use crate::geometry::Pose;
use crate::mapconv::{Cell, OccupancyGrid};
use crate::mission::{BranchStrategy, Mission};
use crate::nav::Pose2D;

pub const FIXTURE_MISSION_ID: &str = "m1";
pub const FIXTURE_RESOLUTION: f64 = 0.1;

pub struct Scenario {
    pub grid: OccupancyGrid,
    pub anchors: AnchorStore,
    pub mission: Mission,
    pub robot_start: Pose2D,
}

/// 6 m × 5 m walled room at 0.1 m with a pillar near (3, 1).
pub fn fixture_grid() -> OccupancyGrid {
    let (w, h) = (60, 50);
    let mut g = OccupancyGrid::filled([0.0, 0.0], FIXTURE_RESOLUTION, w, h, Cell::Free);
    for ix in 0..w {
        g.set(ix, 0, Cell::Occupied);
        g.set(ix, h - 1, Cell::Occupied);
    }
    for iy in 0..h {
        g.set(0, iy, Cell::Occupied);
        g.set(w - 1, iy, Cell::Occupied);
    }
    for ix in 29..=31 {
        for iy in 9..=11 {
            g.set(ix, iy, Cell::Occupied);
        }
    }
    g
}

/// World poses of the five fixture waypoints (x, y, yaw) and whether each
/// is an inspection pose.
pub const FIXTURE_WAYPOINTS: [(f64, f64, f64, bool); 5] = [
    (2.5, 1.5, 0.0, false),
    (3.5, 2.0, std::f64::consts::FRAC_PI_2, true),
    (2.5, 3.0, std::f64::consts::PI, false),
    (3.8, 1.0, -std::f64::consts::FRAC_PI_2, false),
    (1.8, 3.2, 0.7, true),
];

/// Mission `m1`: wp-1 → wp-2, an interactive branch at wp-2 to wp-3
/// (order 0) or wp-4 (order 1), both rejoining at wp-5. One anchor sits
/// 0.5 m from the robot start.
pub fn inspection_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = AnchorPolicy::default();
    let mut anchors = AnchorStore::in_memory();
    let anchor = create_anchor(&mut anchors, &Pose::from_xyz_yaw(1.5, 1.0, 0.0, 0.4), &policy, &mut rng)
        .expect("in-memory insert");
    let mut mission = Mission::new(FIXTURE_MISSION_ID);
    mission.anchor_ids.push(anchor.id);
    for (x, y, yaw, inspect) in FIXTURE_WAYPOINTS {
        mission
            .add_waypoint(&mut anchors, &Pose::from_xyz_yaw(x, y, 0.0, yaw), inspect, &policy, &mut rng)
            .expect("fixture waypoint");
    }
    for (a, b) in [("wp-1", "wp-2"), ("wp-2", "wp-3"), ("wp-2", "wp-4"), ("wp-3", "wp-5"), ("wp-4", "wp-5")] {
        mission.connect(a, b).expect("fixture edge");
    }
    mission
        .set_strategy("wp-2", BranchStrategy::Interactive)
        .expect("fixture strategy");
    mission.validate().expect("fixture mission is valid");
    Scenario {
        grid: fixture_grid(),
        anchors,
        mission,
        robot_start: Pose2D::new(1.0, 1.0, 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_shape() {
        let s = inspection_scenario(1);
        assert_eq!(s.mission.waypoints.len(), 5);
        assert_eq!(s.mission.anchor_ids.len(), 1);
        assert_eq!(s.mission.waypoints.iter().filter(|w| w.is_inspection).count(), 2);
        let a = s.anchors.get(&s.mission.anchor_ids[0]).unwrap();
        let d = (a.position().x - s.robot_start.x).hypot(a.position().y - s.robot_start.y);
        assert!(d <= 1.0);
        for (x, y, _, _) in FIXTURE_WAYPOINTS {
            assert_eq!(s.grid.cell_at(x, y), Cell::Free);
        }
    }
}
