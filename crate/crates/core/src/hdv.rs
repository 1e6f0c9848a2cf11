//! Human-driver longitudinal control. Each driver reacts only to the
//! vehicle it perceives as its leader: the one ahead on its own road, or,
//! close to the merge point where the roads are mutually visible, whichever
//! of that and the nearest conflicting vehicle is closer.

use crate::config::ScenarioConfig;
use crate::table::VehicleTable;
use crate::vehicle::{HdvModel, HdvParams, VehicleRecord, Zone};

/// Gap floor preventing a division blow-up when vehicles overlap.
const MIN_GAP: f64 = 0.1;

/// A conflicting vehicle slower than this while still short of the merge
/// point is treated as having waved the driver through.
const CREEP_SPEED: f64 = 1.0;

/// Longitudinal control for one human-driven vehicle.
pub fn hdv_control(
    rec: &VehicleRecord,
    leader: Option<&VehicleRecord>,
    cfg: &ScenarioConfig,
) -> f64 {
    let params = match rec.hdv {
        Some(p) => p,
        None => return 0.0,
    };
    let v = rec.state.v;
    let u = match params.model {
        HdvModel::ConstantSpeed => 0.5 * (params.desired_speed - v),
        HdvModel::CarFollowing => idm(rec, leader, &params, cfg),
        HdvModel::Aggressive => {
            let squeeze = 1.0 - params.aggression;
            let adjusted = HdvParams {
                headway: params.headway * squeeze,
                min_gap: params.min_gap * squeeze,
                desired_speed: (params.desired_speed * (1.0 + 0.2 * params.aggression))
                    .min(cfg.v_max),
                ..params
            };
            idm(rec, leader, &adjusted, cfg)
        }
    };
    u.clamp(cfg.u_min, cfg.u_max)
}

fn idm(
    rec: &VehicleRecord,
    leader: Option<&VehicleRecord>,
    params: &HdvParams,
    _cfg: &ScenarioConfig,
) -> f64 {
    let v = rec.state.v;
    let v0 = params.desired_speed.max(0.1);
    let free_flow = 1.0 - (v / v0).powi(4);
    match leader {
        None => params.accel * free_flow,
        Some(l) => {
            let s = (l.state.x - rec.state.x).max(MIN_GAP);
            let dv = v - l.state.v;
            let s_star = params.min_gap
                + v * params.headway
                + v * dv / (2.0 * (params.accel * params.decel).sqrt());
            params.accel * (free_flow - (s_star.max(0.0) / s).powi(2))
        }
    }
}

/// The vehicle this driver is following right now.
///
/// Drivers always track their own road, looking past the merge point as far
/// as the drop-off horizon. Within the awareness zone they can also see
/// conflicting traffic, and follow the nearest of the two candidates by
/// remaining distance. A conflicting vehicle crawling to a stop short of
/// the merge point is yielding, so the driver pushes past it instead of
/// stacking up behind a parked car on another road.
pub fn effective_leader<'a>(
    rec: &VehicleRecord,
    table: &'a VehicleTable,
    cfg: &ScenarioConfig,
) -> Option<&'a VehicleRecord> {
    let own_road = table.predecessor_same_road(rec);
    let cross = if rec.zone == Zone::Az {
        table
            .iter()
            .filter(|r| r.road == rec.road.other() && r.zone == Zone::Az)
            .filter(|r| r.state.x >= rec.state.x && r.id != rec.id)
            .filter(|r| !(r.state.v < CREEP_SPEED && r.state.x < cfg.l))
            .min_by(|a, b| {
                a.state
                    .x
                    .partial_cmp(&b.state.x)
                    .expect("positions are finite")
                    .then(a.id.cmp(&b.id))
            })
    } else {
        None
    };
    match (own_road, cross) {
        (Some(o), Some(c)) => {
            if c.state.x < o.state.x {
                Some(c)
            } else {
                Some(o)
            }
        }
        (o, c) => o.or(c),
    }
}
