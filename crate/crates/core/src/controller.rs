//! Per-vehicle receding-horizon controller for connected vehicles in the
//! sequencing zone.
//!
//! Each tick a vehicle reacts to its current merging assignment, picks a
//! reference speed profile, assembles a small quadratic program whose rows
//! are the barrier and tracking constraints replicated along the prediction
//! horizon, and applies the first control of the solution. Infeasible
//! programs fall back to a braking rule driven by the raw barrier values.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::barriers::{
    self, ConstraintLabel, ConstraintSense, LinearControlConstraint,
};
use crate::config::ScenarioConfig;
use crate::dynamics;
use crate::qp::{self, InequalityRow, QpOutcome};
use crate::sequencing::{Assignment, MergeSequence, SequencingOutcome};
use crate::table::VehicleTable;
use crate::trajectory::{self, LinearControlLaw};
use crate::vehicle::{VehicleId, VehicleRecord, VehicleState, Zone};

/// Reaction of a vehicle to an assignment change, named for the direction in
/// which its slot moved relative to the vehicle it must stay clear of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerMode {
    /// The old conflicting leader is now ranked behind us: speed up.
    JumpAhead,
    /// A vehicle that was not ahead of us now is: slow down and slot in.
    FallBehind,
    /// No ordering change; hold the current reference.
    Retain,
}

/// How the applied control was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// QP infeasible with a violated spacing constraint: brake hard.
    FallbackBrake,
    /// QP infeasible but nothing violated: coast.
    FallbackCoast,
}

/// Outcome of one controller evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub u: f64,
    pub mode: ControllerMode,
    pub status: SolveStatus,
    pub relaxation: f64,
    /// Spacing rows currently withheld from the program.
    pub suppressed: Vec<ConstraintLabel>,
}

/// Per-vehicle controller memory carried across ticks.
#[derive(Debug, Clone)]
pub struct CavControllerState {
    /// Thresholded cross-road leader from the last sequence, before any
    /// handoff to a vehicle that has left the zone.
    seq_ahead: Option<VehicleId>,
    /// Partners the constraint rows were last built against.
    effective: Assignment,
    /// Everyone ranked ahead of this vehicle in the last sequence seen.
    ahead_of_me: BTreeSet<VehicleId>,
    pub mode: ControllerMode,
    /// Source of the reference control and speed over the horizon.
    pub active_law: LinearControlLaw,
    pub suppressed: BTreeSet<ConstraintLabel>,
    /// Optimal control sequence from the previous solve, used to roll the
    /// nominal prediction forward.
    last_solution: Vec<f64>,
}

impl CavControllerState {
    /// Initialize controller memory for a vehicle entering the zone, using
    /// the baseline arrival order so that a coordinated sequence issued on
    /// the same tick registers as an ordering change. A pairing whose margin
    /// is already violated starts withheld; for a leader claim the reference
    /// also drops to the recovery speed, since a row introduced below its
    /// boundary only forces an asymptotic creep back and the deficit must be
    /// repaid before the merge point, not eventually.
    pub fn on_entry(
        rec: &VehicleRecord,
        table: &VehicleTable,
        cfg: &ScenarioConfig,
        t: f64,
    ) -> Self {
        let snapshot = table.snapshot(Zone::Sz);
        let baseline = crate::sequencing::sdf_sequence(&snapshot);
        let assignment = baseline_assignment(rec, &baseline, table, cfg);
        let mut suppressed = BTreeSet::new();
        let mut target = cfg.v_max;
        if let Some(a) = assignment.ahead.and_then(|id| table.get(id)) {
            if barriers::merge_ahead_slack(&rec.state, &a.state, cfg) < 0.0 {
                suppressed.insert(ConstraintLabel::MergeAhead);
                target = recovery_speed(cfg);
            }
        }
        if let Some(b) = assignment.behind.and_then(|id| table.get(id)) {
            if b.is_cav() && barriers::merge_behind_value(&rec.state, &b.state, cfg) < 0.0 {
                suppressed.insert(ConstraintLabel::MergeBehind);
            }
        }
        CavControllerState {
            seq_ahead: assignment.ahead,
            effective: assignment,
            ahead_of_me: ranked_ahead(&baseline, rec.id),
            mode: ControllerMode::Retain,
            active_law: trajectory::reference_to(&rec.state, cfg.az_boundary(), target, t, cfg),
            suppressed,
            last_solution: Vec::new(),
        }
    }

    pub fn suppressed_labels(&self) -> Vec<ConstraintLabel> {
        self.suppressed.iter().copied().collect()
    }

    /// Cross-road leader the constraint rows were last built against; the
    /// pairing a vehicle carries with it when it leaves the zone.
    pub fn effective_ahead(&self) -> Option<VehicleId> {
        self.effective.ahead
    }
}

fn baseline_assignment(
    rec: &VehicleRecord,
    baseline: &MergeSequence,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
) -> Assignment {
    match crate::sequencing::neighbors(baseline, rec.id, table) {
        Ok((ahead, behind)) => {
            let ahead_rec = ahead.and_then(|id| table.get(id));
            let behind_rec = behind.and_then(|id| table.get(id));
            crate::sequencing::merging_pair(rec, ahead_rec, behind_rec, cfg)
        }
        Err(_) => Assignment { cav: rec.id, ahead: None, behind: None },
    }
}

fn ranked_ahead(seq: &MergeSequence, id: VehicleId) -> BTreeSet<VehicleId> {
    seq.order.iter().take_while(|&&v| v != id).copied().collect()
}

/// Speed a vehicle falls back to while repaying a violated leader claim.
pub fn recovery_speed(cfg: &ScenarioConfig) -> f64 {
    cfg.v_min.max(1.0)
}

/// Classify this tick's assignment against the remembered ordering.
///
/// The comparison is relative, not positional: entries and exits shift
/// everyone's slot index without reordering anyone, so only a genuine swap
/// with the conflicting leader fires an event.
pub fn select_mode(
    prev_ahead: Option<VehicleId>,
    new_ahead: Option<VehicleId>,
    was_ahead_of_me: &BTreeSet<VehicleId>,
    sequence: &MergeSequence,
    me: VehicleId,
) -> ControllerMode {
    if let Some(q) = new_ahead {
        if q != me && !was_ahead_of_me.contains(&q) {
            return ControllerMode::FallBehind;
        }
    }
    if let Some(p) = prev_ahead {
        let my_pos = sequence.position(me);
        if let (Some(pos_p), Some(pos_me)) = (sequence.position(p), my_pos) {
            if pos_p > pos_me {
                return ControllerMode::JumpAhead;
            }
        }
    }
    ControllerMode::Retain
}

/// Nearest conflicting vehicle already past the zone boundary. The
/// coordinated sequence stops tracking a vehicle once it leaves the zone,
/// yet its spacing claim holds until the follower itself crosses, so the
/// follower keeps it as leader through the handoff. A leader that has just
/// crossed the merge point still counts: the clearance toward it must hold
/// at the follower's own crossing, so its row stays active until the
/// follower clears or the leader retires.
pub fn az_continuation(
    rec: &VehicleRecord,
    table: &VehicleTable,
    _cfg: &ScenarioConfig,
) -> Option<VehicleId> {
    table
        .iter()
        .filter(|r| {
            r.road == rec.road.other()
                && matches!(r.zone, Zone::Az | Zone::Exited)
                && r.state.x >= rec.state.x
        })
        .min_by(|a, b| {
            a.state.x.partial_cmp(&b.state.x).expect("positions are finite").then(a.id.cmp(&b.id))
        })
        .map(|r| r.id)
}

/// A quadratic program over the control sequence plus one relaxation
/// variable, in the diagonal form the solver consumes.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub horizon: usize,
    pub diag: Vec<f64>,
    pub lin: Vec<f64>,
    pub rows: Vec<InequalityRow>,
    /// Parallel to `rows`, for diagnostics and tests.
    pub labels: Vec<ConstraintLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvedQp {
    pub feasible: bool,
    /// Optimal control sequence, empty when infeasible.
    pub controls: Vec<f64>,
    pub relaxation: f64,
}

impl QpProblem {
    fn push(&mut self, step: usize, row: LinearControlConstraint) {
        let geq = row.normalized_geq();
        debug_assert_eq!(geq.sense, ConstraintSense::Geq0);
        let n = self.horizon + 1;
        let mut coeffs = vec![0.0; n];
        coeffs[step] = geq.a_u;
        coeffs[self.horizon] = geq.a_e;
        self.rows.push(InequalityRow { coeffs, rhs: -geq.c });
        self.labels.push(geq.label);
    }

    pub fn rows_labeled(&self, label: ConstraintLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Weight nudging the relaxation to zero whenever the tracking row allows it.
const RELAXATION_EPS: f64 = 1e-8;

struct StepNeighbors<'a> {
    leader: Option<&'a VehicleRecord>,
    ahead: Option<&'a VehicleRecord>,
    behind: Option<&'a VehicleRecord>,
    u_behind: f64,
}

impl StepNeighbors<'_> {
    /// All applicable constraint rows at one predicted state, `dt` into the
    /// horizon, with neighbors advanced at constant speed.
    fn rows_at(
        &self,
        own: &VehicleState,
        dt: f64,
        v_ref: f64,
        cfg: &ScenarioConfig,
    ) -> Vec<LinearControlConstraint> {
        let mut rows = Vec::with_capacity(5);
        rows.extend(barriers::cbf_speed_limits(own, cfg));
        if let Some(l) = self.leader {
            rows.push(barriers::cbf_rear_end(own, &predict(&l.state, dt), cfg));
        }
        if let Some(a) = self.ahead {
            rows.push(barriers::cbf_merge_ahead(own, &predict(&a.state, dt), cfg));
        }
        if let Some(b) = self.behind {
            let row = barriers::hocbf_merge_behind(
                own,
                &predict(&b.state, dt),
                b.class,
                self.u_behind,
                0.0,
                cfg,
            )
            .expect("behind partner filtered to connected vehicles");
            rows.push(row);
        }
        rows.push(barriers::clf_track_speed(own, v_ref, cfg));
        rows
    }
}

/// Single-step version of the program: one control and the relaxation.
/// Used to roll out a self-consistent nominal trajectory on cold solves.
fn one_step_control(
    rows: &[LinearControlConstraint],
    u_ref: f64,
    cfg: &ScenarioConfig,
) -> Option<f64> {
    let diag = [2.0, 2.0 * (cfg.beta1 + RELAXATION_EPS)];
    let lin = [-2.0 * u_ref, 0.0];
    let mut ineq: Vec<InequalityRow> = rows
        .iter()
        .map(|r| {
            let g = r.normalized_geq();
            InequalityRow { coeffs: vec![g.a_u, g.a_e], rhs: -g.c }
        })
        .collect();
    ineq.push(InequalityRow { coeffs: vec![1.0, 0.0], rhs: cfg.u_min });
    ineq.push(InequalityRow { coeffs: vec![-1.0, 0.0], rhs: -cfg.u_max });
    match qp::minimize_diagonal(&diag, &lin, &ineq) {
        QpOutcome::Optimal(z) => Some(z[0]),
        QpOutcome::Infeasible => None,
    }
}

/// Hardest admissible braking that does not push the speed below its floor
/// within one tick.
pub fn clamped_brake(v: f64, cfg: &ScenarioConfig) -> f64 {
    cfg.u_min.max((cfg.v_min - v) / cfg.t_d).min(0.0)
}

/// Assemble the horizon QP for one vehicle.
///
/// Every applicable constraint is instantiated once per horizon step, at the
/// vehicle's nominal predicted state and the neighbors' constant-speed
/// predictions. The nominal is the previous solution shifted one step; on a
/// cold solve it is rolled out by applying the single-step program at each
/// predicted state, so the frozen rows stay consistent with what the
/// controller can actually do.
pub fn build_qp(
    rec: &VehicleRecord,
    assignment: &Assignment,
    suppressed: &BTreeSet<ConstraintLabel>,
    law: &LinearControlLaw,
    last_solution: &[f64],
    table: &VehicleTable,
    cfg: &ScenarioConfig,
    t: f64,
) -> QpProblem {
    let h = cfg.horizon;
    let mut qp = QpProblem {
        horizon: h,
        diag: vec![2.0; h + 1],
        lin: vec![0.0; h + 1],
        rows: Vec::new(),
        labels: Vec::new(),
    };
    qp.diag[h] = 2.0 * (cfg.beta1 + RELAXATION_EPS);

    let behind = resolve_if(assignment.behind, suppressed, ConstraintLabel::MergeBehind, table)
        .filter(|r| r.is_cav());
    let neighbors = StepNeighbors {
        leader: table.predecessor_same_road(rec),
        ahead: resolve_if(assignment.ahead, suppressed, ConstraintLabel::MergeAhead, table),
        behind,
        u_behind: behind.map(|r| r.state.accel).unwrap_or(0.0),
    };

    let warm = !last_solution.is_empty();
    let mut own = rec.state;
    for step in 0..h {
        let dt = step as f64 * cfg.t_d;
        let t_step = t + dt;
        let u_ref = law.u_at(t_step);
        qp.lin[step] = -2.0 * u_ref;

        let rows = neighbors.rows_at(&own, dt, law.v_at(t_step), cfg);
        let u_nom = if warm {
            last_solution.get(step + 1).or(last_solution.last()).copied().unwrap_or(0.0)
        } else {
            one_step_control(&rows, u_ref, cfg).unwrap_or_else(|| clamped_brake(own.v, cfg))
        };
        for row in rows {
            qp.push(step, row);
        }

        let n = h + 1;
        let mut lo = vec![0.0; n];
        lo[step] = 1.0;
        qp.rows.push(InequalityRow { coeffs: lo, rhs: cfg.u_min });
        qp.labels.push(ConstraintLabel::SpeedMax);
        let mut hi = vec![0.0; n];
        hi[step] = -1.0;
        qp.rows.push(InequalityRow { coeffs: hi, rhs: -cfg.u_max });
        qp.labels.push(ConstraintLabel::SpeedMin);

        own = dynamics::step(own, u_nom, cfg.t_d);
    }
    qp
}

fn resolve_if<'a>(
    id: Option<VehicleId>,
    suppressed: &BTreeSet<ConstraintLabel>,
    label: ConstraintLabel,
    table: &'a VehicleTable,
) -> Option<&'a VehicleRecord> {
    if suppressed.contains(&label) {
        return None;
    }
    id.and_then(|v| table.get(v))
}

fn predict(state: &VehicleState, dt: f64) -> VehicleState {
    VehicleState { x: state.x + state.v * dt, v: state.v, accel: state.accel }
}

/// Solve an assembled program.
pub fn solve_qp(qp: &QpProblem) -> SolvedQp {
    match qp::minimize_diagonal(&qp.diag, &qp.lin, &qp.rows) {
        QpOutcome::Optimal(z) => {
            let relaxation = z[qp.horizon];
            let mut controls = z;
            controls.truncate(qp.horizon);
            SolvedQp { feasible: true, controls, relaxation }
        }
        QpOutcome::Infeasible => {
            SolvedQp { feasible: false, controls: Vec::new(), relaxation: 0.0 }
        }
    }
}

/// Last-resort control when the program admits no solution: brake hard when
/// a margin that braking can restore is already violated, otherwise coast.
/// A violated follower gap never triggers the brake, since slowing down only
/// closes it further; that margin is the follower's to restore.
pub fn fallback_on_infeasible(
    rec: &VehicleRecord,
    assignment: &Assignment,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
) -> (f64, SolveStatus) {
    let own = &rec.state;
    let mut violated = false;
    if let Some(l) = table.predecessor_same_road(rec) {
        violated |= barriers::rear_end_value(own, &l.state, cfg) < 0.0;
    }
    if let Some(a) = assignment.ahead.and_then(|id| table.get(id)) {
        violated |= barriers::merge_ahead_value(own, &a.state, cfg) < 0.0;
    }
    if violated {
        // Never brake through standstill.
        let u = cfg.u_min.max((cfg.v_min - own.v) / cfg.t_d).min(0.0);
        (u, SolveStatus::FallbackBrake)
    } else {
        (0.0, SolveStatus::FallbackCoast)
    }
}

/// One controller evaluation for a vehicle inside the sequencing zone.
pub fn controller_step(
    rec: &VehicleRecord,
    st: &mut CavControllerState,
    outcome: &SequencingOutcome,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
    t: f64,
) -> ControlDecision {
    let seq_asg = outcome
        .assignments
        .iter()
        .find(|a| a.cav == rec.id)
        .cloned()
        .unwrap_or(Assignment { cav: rec.id, ahead: None, behind: None });

    let mode =
        select_mode(st.seq_ahead, seq_asg.ahead, &st.ahead_of_me, &outcome.sequence, rec.id);

    let eff_ahead = seq_asg.ahead.or_else(|| az_continuation(rec, table, cfg));
    let eff_behind = seq_asg.behind;

    match mode {
        ControllerMode::JumpAhead => {
            st.active_law =
                trajectory::reference_to(&rec.state, cfg.az_boundary(), cfg.v_max, t, cfg);
        }
        ControllerMode::FallBehind | ControllerMode::Retain => {
            if t >= st.active_law.t_f {
                let target = if st.suppressed.contains(&ConstraintLabel::MergeAhead) {
                    recovery_speed(cfg)
                } else {
                    cfg.v_max
                };
                st.active_law =
                    trajectory::reference_to(&rec.state, cfg.az_boundary(), target, t, cfg);
            }
        }
    }

    // A changed partner introduces its row active only if the margin already
    // holds. A violated fresh pairing starts withheld and the reference
    // drops to the recovery speed until the claim is met; this keeps the
    // program feasible through reordering and repays the deficit before the
    // merge point instead of creeping back asymptotically.
    if eff_ahead != st.effective.ahead {
        st.suppressed.remove(&ConstraintLabel::MergeAhead);
        if let Some(a) = eff_ahead.and_then(|id| table.get(id)) {
            if barriers::merge_ahead_slack(&rec.state, &a.state, cfg) < 0.0 {
                st.suppressed.insert(ConstraintLabel::MergeAhead);
                st.active_law = trajectory::reference_to(
                    &rec.state,
                    cfg.az_boundary(),
                    recovery_speed(cfg),
                    t,
                    cfg,
                );
            }
        }
    }
    if eff_behind != st.effective.behind {
        st.suppressed.remove(&ConstraintLabel::MergeBehind);
        if let Some(b) = eff_behind.and_then(|id| table.get(id)) {
            if b.is_cav() && barriers::merge_behind_value(&rec.state, &b.state, cfg) < 0.0 {
                st.suppressed.insert(ConstraintLabel::MergeBehind);
            }
        }
    }
    // A recovery maneuver ends the moment the withheld leader claim is met;
    // drop the slow reference and let the now-active row guard the gap.
    if restore_suppressed(rec, st, eff_ahead, eff_behind, table, cfg) {
        st.active_law = trajectory::reference_to(&rec.state, cfg.az_boundary(), cfg.v_max, t, cfg);
    }

    let effective = Assignment { cav: rec.id, ahead: eff_ahead, behind: eff_behind };
    let qp = build_qp(
        rec,
        &effective,
        &st.suppressed,
        &st.active_law,
        &st.last_solution,
        table,
        cfg,
        t,
    );
    let solved = solve_qp(&qp);
    let mut tick_suppressed = st.suppressed_labels();
    let (u, status, relaxation) = if solved.feasible {
        let u = solved.controls[0];
        st.last_solution = solved.controls;
        (u, SolveStatus::Optimal, solved.relaxation)
    } else {
        // A follower's gap is guarded from both sides of the pairing; when
        // serving it exceeds the actuation box, the follower's own leader
        // row still holds, so withhold the courtesy row before giving up.
        let behind_active =
            eff_behind.is_some() && !st.suppressed.contains(&ConstraintLabel::MergeBehind);
        let retried = if behind_active {
            let mut relaxed = st.suppressed.clone();
            relaxed.insert(ConstraintLabel::MergeBehind);
            let reduced = build_qp(
                rec,
                &effective,
                &relaxed,
                &st.active_law,
                &st.last_solution,
                table,
                cfg,
                t,
            );
            Some(solve_qp(&reduced)).filter(|s| s.feasible)
        } else {
            None
        };
        match retried {
            Some(s) => {
                let u = s.controls[0];
                st.last_solution = s.controls;
                tick_suppressed.push(ConstraintLabel::MergeBehind);
                (u, SolveStatus::Optimal, s.relaxation)
            }
            None => {
                st.last_solution.clear();
                let (u, status) = fallback_on_infeasible(rec, &effective, table, cfg);
                (u, status, 0.0)
            }
        }
    };

    st.seq_ahead = seq_asg.ahead;
    st.effective = effective;
    st.ahead_of_me = ranked_ahead(&outcome.sequence, rec.id);
    st.mode = mode;

    ControlDecision { u, mode, status, relaxation, suppressed: tick_suppressed }
}

/// Lift a withheld spacing row once its margin is back on the safe side, or
/// once there is no partner left to hold it against. Returns whether the
/// leader row was lifted, which marks the end of a recovery maneuver.
fn restore_suppressed(
    rec: &VehicleRecord,
    st: &mut CavControllerState,
    eff_ahead: Option<VehicleId>,
    eff_behind: Option<VehicleId>,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
) -> bool {
    let mut ahead_lifted = false;
    if st.suppressed.contains(&ConstraintLabel::MergeAhead) {
        let clear = match eff_ahead.and_then(|id| table.get(id)) {
            Some(a) => barriers::merge_ahead_value(&rec.state, &a.state, cfg) >= 0.0,
            None => true,
        };
        if clear {
            st.suppressed.remove(&ConstraintLabel::MergeAhead);
            ahead_lifted = true;
        }
    }
    if st.suppressed.contains(&ConstraintLabel::MergeBehind) {
        let clear = match eff_behind.and_then(|id| table.get(id)) {
            Some(b) => {
                !b.is_cav() || barriers::merge_behind_value(&rec.state, &b.state, cfg) >= 0.0
            }
            None => true,
        };
        if clear {
            st.suppressed.remove(&ConstraintLabel::MergeBehind);
        }
    }
    ahead_lifted
}
