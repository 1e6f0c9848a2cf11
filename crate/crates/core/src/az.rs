//! Awareness-zone control: once a connected vehicle crosses into the final
//! stretch before the merge point it can no longer rely on the coordinated
//! sequence alone, because an unconnected driver behind it on the other road
//! may push through regardless. The vehicle sizes up that driver and either
//! merges ahead or yields with a smooth stop just short of the merge point.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{self, ConstraintLabel};
use crate::config::ScenarioConfig;
use crate::controller::{self, SolveStatus};
use crate::sequencing::Assignment;
use crate::table::VehicleTable;
use crate::trajectory::{self, LinearControlLaw, TrajectoryError};
use crate::vehicle::{HistorySample, VehicleId, VehicleRecord, Zone};

#[derive(Debug, Error, PartialEq)]
pub enum AzError {
    #[error("aggressiveness needs at least one observed sample")]
    EmptyHistory,
}

/// How likely the observed driver is to push through the merge point rather
/// than give way, on a 0-to-1 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggressivenessEstimate {
    pub value: f64,
    pub window_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AzDecision {
    MergeAhead,
    Yield,
}

/// Weight on the speed pressure term of the default estimator.
const W_SPEED: f64 = 0.7;
/// Weight on the acceleration pressure term.
const W_ACCEL: f64 = 0.3;

/// Default heuristic estimator over an observation window.
///
/// Speed pressure compares the driver's mean speed against the fastest speed
/// from which they could still stop before the merge point; acceleration
/// pressure is their mean positive acceleration against the actuation
/// ceiling. A driver who can no longer stop at all counts as fully
/// aggressive. Any replacement estimator can be swapped in by callers since
/// the decision logic only consumes the resulting value.
pub fn estimate_aggressiveness(
    history: &[HistorySample],
    cfg: &ScenarioConfig,
) -> Result<AggressivenessEstimate, AzError> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(AzError::EmptyHistory),
    };
    let window_start = first.0;
    let d = cfg.l - last.1;
    if d <= f64::EPSILON {
        return Ok(AggressivenessEstimate { value: 1.0, window_start });
    }
    let n = history.len() as f64;
    let v_mean = history.iter().map(|s| s.2).sum::<f64>() / n;
    let u_pos_mean = history.iter().map(|s| s.3.max(0.0)).sum::<f64>() / n;
    let envelope = trajectory::max_speed_to_stop(d, cfg.u_min);
    let speed_term = if envelope > 0.0 { (v_mean / envelope).max(0.0) } else { 1.0 };
    let accel_term = (u_pos_mean / cfg.u_max).max(0.0);
    let value = (W_SPEED * speed_term + W_ACCEL * accel_term).clamp(0.0, 1.0);
    Ok(AggressivenessEstimate { value, window_start })
}

/// Choose between merging ahead of the conflicting follower and yielding.
///
/// Yielding is only on the table against an unconnected driver judged
/// aggressive, and only while the vehicle could still stop before the merge
/// point under full braking; past that envelope, merging ahead is forced.
pub fn az_decide(
    cav: &VehicleRecord,
    iminus: Option<&VehicleRecord>,
    a: Option<&AggressivenessEstimate>,
    cfg: &ScenarioConfig,
) -> AzDecision {
    let hdv = match iminus {
        Some(r) if !r.is_cav() => r,
        _ => return AzDecision::MergeAhead,
    };
    let _ = hdv;
    let aggressive = a.map(|e| e.value >= cfg.gamma).unwrap_or(false);
    if !aggressive {
        return AzDecision::MergeAhead;
    }
    let d = (cfg.l - cfg.delta) - cav.state.x;
    if cav.state.v <= trajectory::max_speed_to_stop(d, cfg.u_min) {
        AzDecision::Yield
    } else {
        AzDecision::MergeAhead
    }
}

/// A committed yield, held until the driver it defers to has crossed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldEpisode {
    pub hdv: VehicleId,
    pub committed_at: f64,
    /// Smooth stop no longer possible: full braking until standstill.
    pub emergency: bool,
}

/// Per-vehicle control memory for the awareness zone.
#[derive(Debug, Clone)]
pub struct AzControllerState {
    pub yielding: Option<YieldEpisode>,
    pub active_law: LinearControlLaw,
    /// Cross-road leader carried over from the coordinated ordering, frozen
    /// on entry. Its spacing claim holds until this vehicle itself crosses.
    pub ahead: Option<VehicleId>,
    /// Binding leader the rows were last gated against, to detect handoffs.
    last_binding: Option<VehicleId>,
    suppressed: BTreeSet<ConstraintLabel>,
    last_solution: Vec<f64>,
}

/// Outcome of one awareness-zone evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AzTick {
    pub u: f64,
    pub decision: AzDecision,
    pub emergency: bool,
    pub status: SolveStatus,
    pub relaxation: f64,
}

impl AzControllerState {
    /// Initialize on zone entry with a fresh merge-ahead reference toward
    /// the merge point at full speed. `inherited` is the cross-road leader
    /// the vehicle was paired with when it left the sequencing zone; it is
    /// frozen here if it is still genuinely ahead, otherwise the nearest
    /// cross-road vehicle already past the boundary takes its place.
    pub fn on_entry(
        rec: &VehicleRecord,
        inherited: Option<VehicleId>,
        table: &VehicleTable,
        cfg: &ScenarioConfig,
        t: f64,
    ) -> Self {
        // A partner still short of the boundary is not frozen: this vehicle
        // now outranks it by zone and the partner will pair against it from
        // the other side instead, so keeping both directions would lock.
        let ahead = inherited
            .filter(|id| {
                table.get(*id).map_or(false, |r| {
                    matches!(r.zone, Zone::Az | Zone::Exited) && r.state.x >= rec.state.x
                })
            })
            .or_else(|| controller::az_continuation(rec, table, cfg));
        let mut st = AzControllerState {
            yielding: None,
            active_law: trajectory::reference_to(&rec.state, cfg.l, cfg.v_max, t, cfg),
            ahead,
            last_binding: None,
            suppressed: BTreeSet::new(),
            last_solution: Vec::new(),
        };
        // A leader claim already in deficit keeps its row withheld and the
        // reference slow, continuing whatever recovery was under way when
        // the vehicle crossed the boundary.
        let binding = st.binding_ahead(rec, table);
        st.last_binding = binding;
        if let Some(a) = binding.and_then(|id| table.get(id)) {
            if barriers::merge_ahead_value(&rec.state, &a.state, cfg) < 0.0 {
                st.suppressed.insert(ConstraintLabel::MergeAhead);
                st.active_law = trajectory::reference_to(
                    &rec.state,
                    cfg.l,
                    controller::recovery_speed(cfg),
                    t,
                    cfg,
                );
            }
        }
        st
    }

    /// The leader whose claim currently binds this vehicle: the frozen
    /// pairing while that vehicle is still short of the merge point, then
    /// the most recent cross-road crosser until it retires. A vehicle that
    /// crossed immediately ahead must be cleared whoever it is, so the net
    /// also covers leaders acquired outside the coordinated ordering, such
    /// as a driver that was yielded to.
    pub fn binding_ahead(&self, rec: &VehicleRecord, table: &VehicleTable) -> Option<VehicleId> {
        match self.ahead.and_then(|id| table.get(id)) {
            Some(r) if r.zone != Zone::Exited => Some(r.id),
            _ => table
                .iter()
                .filter(|r| {
                    r.road == rec.road.other()
                        && r.zone == Zone::Exited
                        && r.state.x >= rec.state.x
                })
                .min_by(|a, b| {
                    a.state
                        .x
                        .partial_cmp(&b.state.x)
                        .expect("positions are finite")
                        .then(a.id.cmp(&b.id))
                })
                .map(|r| r.id),
        }
    }
}

fn binding_opposite_behind<'a>(
    rec: &VehicleRecord,
    table: &'a VehicleTable,
    cfg: &ScenarioConfig,
) -> Option<&'a VehicleRecord> {
    table
        .opposite_behind(rec)
        .filter(|b| barriers::merge_behind_value(&rec.state, &b.state, cfg) < 0.0)
}

/// One control evaluation for a vehicle between the zone boundary and the
/// merge point.
pub fn az_step(
    rec: &VehicleRecord,
    st: &mut AzControllerState,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
    t: f64,
) -> AzTick {
    let behind = binding_opposite_behind(rec, table, cfg);

    // Hysteresis: a committed yield holds until its driver has crossed and
    // pulled far enough ahead that resuming keeps the crossing clearance.
    if let Some(episode) = st.yielding {
        let crossed = match table.get(episode.hdv) {
            Some(r) => {
                (r.zone == Zone::Exited || r.state.x >= cfg.l)
                    && barriers::merge_ahead_value(&rec.state, &r.state, cfg) >= 0.0
            }
            None => true,
        };
        if crossed {
            st.yielding = None;
            st.active_law = trajectory::reference_to(&rec.state, cfg.l, cfg.v_max, t, cfg);
            st.last_solution.clear();
        }
    } else if let Some(hdv) = behind.filter(|b| !b.is_cav()) {
        let window_start = rec.t_az.unwrap_or(rec.t_entry);
        let a = estimate_aggressiveness(hdv.history_since(window_start), cfg).ok();
        if az_decide(rec, Some(hdv), a.as_ref(), cfg) == AzDecision::Yield {
            let x_stop = cfg.l - cfg.delta;
            let (law, emergency) =
                match trajectory::solve_yield_stop(rec.state.x, rec.state.v, x_stop, t, cfg) {
                    Ok(law) => (law, false),
                    Err(TrajectoryError::InfeasibleStop { .. }) => {
                        (LinearControlLaw::zero(t, rec.state.x, rec.state.v), true)
                    }
                    Err(_) => (LinearControlLaw::zero(t, rec.state.x, rec.state.v), true),
                };
            st.yielding =
                Some(YieldEpisode { hdv: hdv.id, committed_at: t, emergency });
            st.active_law = law;
            st.last_solution.clear();
        }
    }

    // Gate the leader row exactly as in the sequencing zone: a handoff to a
    // partner whose margin is violated starts withheld with a recovery
    // reference, and a withheld row restores the moment its claim is met.
    // Suppression bookkeeping runs even while yielding; the reference is
    // only touched when no stop ramp owns it.
    let binding = st.binding_ahead(rec, table);
    if binding != st.last_binding {
        st.suppressed.remove(&ConstraintLabel::MergeAhead);
        if let Some(a) = binding.and_then(|id| table.get(id)) {
            if barriers::merge_ahead_value(&rec.state, &a.state, cfg) < 0.0 {
                st.suppressed.insert(ConstraintLabel::MergeAhead);
                if st.yielding.is_none() {
                    st.active_law = trajectory::reference_to(
                        &rec.state,
                        cfg.l,
                        controller::recovery_speed(cfg),
                        t,
                        cfg,
                    );
                }
            }
        }
        st.last_binding = binding;
    }
    if st.suppressed.contains(&ConstraintLabel::MergeAhead) {
        let clear = match binding.and_then(|id| table.get(id)) {
            Some(a) => barriers::merge_ahead_value(&rec.state, &a.state, cfg) >= 0.0,
            None => true,
        };
        if clear {
            st.suppressed.remove(&ConstraintLabel::MergeAhead);
            if st.yielding.is_none() {
                st.active_law = trajectory::reference_to(&rec.state, cfg.l, cfg.v_max, t, cfg);
            }
        }
    }

    if let Some(episode) = &mut st.yielding {
        let decision = AzDecision::Yield;
        if !episode.emergency {
            // Re-solve the stopping ramp from the current state; an exact
            // tracker leaves it unchanged, feedback errors re-center it.
            let x_stop = cfg.l - cfg.delta;
            match trajectory::solve_yield_stop(rec.state.x, rec.state.v, x_stop, t, cfg) {
                Ok(law) => st.active_law = law,
                Err(_) => episode.emergency = true,
            }
        }
        if episode.emergency {
            let u = controller::clamped_brake(rec.state.v, cfg);
            return AzTick {
                u,
                decision,
                emergency: true,
                status: SolveStatus::FallbackBrake,
                relaxation: 0.0,
            };
        }
        let (u, status, relaxation) = solve_with_rows(rec, st, None, table, cfg, t);
        return AzTick { u, decision, emergency: false, status, relaxation };
    }

    // Merge ahead: keep consuming the current reference, re-anchoring once
    // it has run out. A reference that expires mid-recovery renews slow.
    if t >= st.active_law.t_f {
        let target = if st.suppressed.contains(&ConstraintLabel::MergeAhead) {
            controller::recovery_speed(cfg)
        } else {
            cfg.v_max
        };
        st.active_law = trajectory::reference_to(&rec.state, cfg.l, target, t, cfg);
    }
    let behind_cav = behind.filter(|b| b.is_cav()).map(|b| b.id);
    let (u, status, relaxation) = solve_with_rows(rec, st, behind_cav, table, cfg, t);
    AzTick { u, decision: AzDecision::MergeAhead, emergency: false, status, relaxation }
}

fn solve_with_rows(
    rec: &VehicleRecord,
    st: &mut AzControllerState,
    behind_cav: Option<VehicleId>,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
    t: f64,
) -> (f64, SolveStatus, f64) {
    let assignment = Assignment {
        cav: rec.id,
        ahead: st.binding_ahead(rec, table),
        behind: behind_cav,
    };
    let qp = controller::build_qp(
        rec,
        &assignment,
        &st.suppressed,
        &st.active_law,
        &st.last_solution,
        table,
        cfg,
        t,
    );
    let solved = controller::solve_qp(&qp);
    if solved.feasible {
        let u = solved.controls[0];
        let relaxation = solved.relaxation;
        st.last_solution = solved.controls;
        return (u, SolveStatus::Optimal, relaxation);
    }
    // Withhold the courtesy row toward a follower before giving up; the
    // follower's own leader row guards the same gap from the other side.
    if behind_cav.is_some() && !st.suppressed.contains(&ConstraintLabel::MergeBehind) {
        let mut relaxed = st.suppressed.clone();
        relaxed.insert(ConstraintLabel::MergeBehind);
        let reduced = controller::build_qp(
            rec,
            &assignment,
            &relaxed,
            &st.active_law,
            &st.last_solution,
            table,
            cfg,
            t,
        );
        let solved = controller::solve_qp(&reduced);
        if solved.feasible {
            let u = solved.controls[0];
            let relaxation = solved.relaxation;
            st.last_solution = solved.controls;
            return (u, SolveStatus::Optimal, relaxation);
        }
    }
    st.last_solution.clear();
    let (u, status) = controller::fallback_on_infeasible(rec, &assignment, table, cfg);
    (u, status, 0.0)
}
