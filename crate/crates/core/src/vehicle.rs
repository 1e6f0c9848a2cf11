//! Domain types shared by the coordinator, the controllers, and the simulator.
//!
//! Both roads use their own arc-length coordinate: a vehicle at position `x`
//! has `L - x` metres left before the merging point, so positions on opposite
//! roads are directly comparable.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Stable vehicle identifier, assigned at spawn and never reused in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoadId {
    Main,
    Side,
}

impl RoadId {
    pub fn other(self) -> RoadId {
        match self {
            RoadId::Main => RoadId::Side,
            RoadId::Side => RoadId::Main,
        }
    }

    /// Sort key used when breaking distance ties: main road first.
    pub fn index(self) -> u8 {
        match self {
            RoadId::Main => 1,
            RoadId::Side => 2,
        }
    }
}

impl fmt::Display for RoadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoadId::Main => write!(f, "main"),
            RoadId::Side => write!(f, "side"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Cav,
    Hdv,
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VehicleClass::Cav => write!(f, "cav"),
            VehicleClass::Hdv => write!(f, "hdv"),
        }
    }
}

/// Zone labels are assigned by the simulator when a boundary is crossed; all
/// filtering goes through the label, never through raw positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    /// Sequencing zone: from the origin up to `L - L_AZ`.
    Sz,
    /// Awareness zone: the last `L_AZ` metres before the merging point.
    Az,
    /// Past the merging point. Kept briefly for audits, then dropped.
    Exited,
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Zone::Sz => write!(f, "sz"),
            Zone::Az => write!(f, "az"),
            Zone::Exited => write!(f, "exited"),
        }
    }
}

/// Kinematic state on the vehicle's own road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Position along the road, m. The merging point sits at `x = L`.
    pub x: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Last applied control, m/s^2. Zero until the first tick completes.
    pub accel: f64,
}

impl VehicleState {
    pub fn new(x: f64, v: f64) -> Self {
        VehicleState { x, v, accel: 0.0 }
    }
}

/// Car-following parameter set for human-driven vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdvParams {
    pub model: HdvModel,
    /// Free-flow target speed, m/s.
    pub desired_speed: f64,
    /// Desired time headway T, s.
    pub headway: f64,
    /// Standstill minimum gap s0, m.
    pub min_gap: f64,
    /// Maximum comfortable acceleration, m/s^2.
    pub accel: f64,
    /// Comfortable braking (positive), m/s^2.
    pub decel: f64,
    /// 0 = textbook car following, 1 = refuses to leave room at the merge.
    pub aggression: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HdvModel {
    /// Proportional control toward `desired_speed`, ignores other traffic.
    ConstantSpeed,
    /// Intelligent-driver car following.
    CarFollowing,
    /// Car following with headway and standstill gap shrunk by `aggression`.
    Aggressive,
}

impl HdvParams {
    pub fn car_following(desired_speed: f64) -> Self {
        HdvParams {
            model: HdvModel::CarFollowing,
            desired_speed,
            headway: 1.5,
            min_gap: 2.0,
            accel: 1.4,
            decel: 2.0,
            aggression: 0.0,
        }
    }

    pub fn aggressive(desired_speed: f64, aggression: f64) -> Self {
        HdvParams {
            model: HdvModel::Aggressive,
            aggression,
            ..HdvParams::car_following(desired_speed)
        }
    }
}

/// One sampled point of a vehicle's trajectory: (time, position, speed, applied control).
pub type HistorySample = (f64, f64, f64, f64);

/// Everything the coordinator and controllers know about one vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub road: RoadId,
    pub zone: Zone,
    pub state: VehicleState,
    /// Entry time into the control zone, s.
    pub t_entry: f64,
    /// First time the awareness zone was observed reached, s.
    pub t_az: Option<f64>,
    /// Merging-point crossing time, s (interpolated within the tick).
    pub t_exit: Option<f64>,
    pub hdv: Option<HdvParams>,
    /// Per-tick samples since entry; used for aggressiveness estimation,
    /// audits, and trace export. Not serialized into result files.
    #[serde(skip)]
    pub history: Vec<HistorySample>,
}

impl VehicleRecord {
    pub fn new_cav(id: VehicleId, road: RoadId, x: f64, v: f64, t: f64) -> Self {
        VehicleRecord {
            id,
            class: VehicleClass::Cav,
            road,
            zone: Zone::Sz,
            state: VehicleState::new(x, v),
            t_entry: t,
            t_az: None,
            t_exit: None,
            hdv: None,
            history: Vec::new(),
        }
    }

    pub fn new_hdv(id: VehicleId, road: RoadId, x: f64, v: f64, t: f64, params: HdvParams) -> Self {
        VehicleRecord {
            id,
            class: VehicleClass::Hdv,
            road,
            zone: Zone::Sz,
            state: VehicleState::new(x, v),
            t_entry: t,
            t_az: None,
            t_exit: None,
            hdv: Some(params),
            history: Vec::new(),
        }
    }

    pub fn is_cav(&self) -> bool {
        self.class == VehicleClass::Cav
    }

    /// History samples taken at or after `t0`.
    pub fn history_since(&self, t0: f64) -> &[HistorySample] {
        let start = self.history.partition_point(|s| s.0 < t0);
        &self.history[start..]
    }
}
