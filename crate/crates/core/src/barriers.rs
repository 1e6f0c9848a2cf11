//! Constraint builders for the per-vehicle quadratic program.
//!
//! Each safety condition is kept forward-invariant by requiring the time
//! derivative of its barrier value b to satisfy `db/dt + k b >= 0` along the
//! closed-loop dynamics. With double-integrator vehicles every such row is
//! affine in the scalar control u (and, for the tracking objective, the
//! relaxation e), so the builders below emit plain linear inequalities.

use crate::config::ScenarioConfig;
use crate::vehicle::{VehicleClass, VehicleState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BarrierError {
    #[error("merge-behind row requires an automated follower")]
    MisroutedConstraint,
}

/// Linear class-K multiplier: `apply(b) = k * b`, with `k > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassKGain {
    k: f64,
}

impl ClassKGain {
    pub fn new(k: f64) -> Option<Self> {
        (k > 0.0 && k.is_finite()).then_some(ClassKGain { k })
    }

    pub fn apply(&self, b: f64) -> f64 {
        self.k * b
    }

    pub fn value(&self) -> f64 {
        self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintSense {
    Geq0,
    Leq0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintLabel {
    SpeedMax,
    SpeedMin,
    RearEnd,
    MergeAhead,
    MergeBehind,
    TrackSpeed,
}

/// One inequality affine in the own control u and the relaxation e:
/// `a_u * u + a_e * e + c {>=, <=} 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearControlConstraint {
    pub a_u: f64,
    pub a_e: f64,
    pub c: f64,
    pub sense: ConstraintSense,
    pub label: ConstraintLabel,
}

impl LinearControlConstraint {
    pub fn residual(&self, u: f64, e: f64) -> f64 {
        self.a_u * u + self.a_e * e + self.c
    }

    pub fn is_satisfied(&self, u: f64, e: f64, tol: f64) -> bool {
        match self.sense {
            ConstraintSense::Geq0 => self.residual(u, e) >= -tol,
            ConstraintSense::Leq0 => self.residual(u, e) <= tol,
        }
    }

    /// The same half-space written with sense `>= 0`.
    pub fn normalized_geq(&self) -> LinearControlConstraint {
        match self.sense {
            ConstraintSense::Geq0 => *self,
            ConstraintSense::Leq0 => LinearControlConstraint {
                a_u: -self.a_u,
                a_e: -self.a_e,
                c: -self.c,
                sense: ConstraintSense::Geq0,
                label: self.label,
            },
        }
    }
}

fn gain(k: f64) -> ClassKGain {
    ClassKGain::new(k).expect("gains are validated positive by ScenarioConfig")
}

/// Boundary shift for the spacing rows.
///
/// The rows are enforced only at control updates, t_d apart, while the
/// margins evolve continuously under the held control. Riding a boundary at
/// full throttle curves the margin down by about `u_max * t_d` per update,
/// and the proportional term recovers `k * b` per second, so the sag between
/// updates settles near `u_max * t_d / (2k)`. Holding the rows this far
/// inside the true boundary keeps the continuous margin positive throughout.
pub fn spacing_margin_pad(cfg: &ScenarioConfig) -> f64 {
    let k = cfg.k3.min(cfg.k4).min(cfg.k5);
    0.5 * cfg.u_max * cfg.t_d * (1.0 / k + cfg.t_d)
}

/// Barrier values, exposed for monitoring, gating, and audits.
pub fn speed_max_value(state: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    cfg.v_max - state.v
}

pub fn speed_min_value(state: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    state.v - cfg.v_min
}

/// Gap margin to the same-road predecessor: `z - phi*v - delta`.
pub fn rear_end_value(own: &VehicleState, leader: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    leader.x - own.x - cfg.phi * own.v - cfg.delta
}

/// Gap margin to the assigned cross-road vehicle ahead, with the
/// position-scaled headway `phi_at(x) = phi * x / L`.
pub fn merge_ahead_value(own: &VehicleState, ahead: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    ahead.x - own.x - cfg.phi_at(own.x) * own.v - cfg.delta
}

/// Gap margin granted to the assigned cross-road vehicle behind.
pub fn merge_behind_value(own: &VehicleState, behind: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    own.x - behind.x - cfg.phi_at(behind.x) * behind.v - cfg.delta
}

/// [`merge_ahead_value`] less the enforcement pad: the room the row actually
/// has. Gates activate and release constraints on this slack so a row never
/// starts outside the boundary it enforces.
pub fn merge_ahead_slack(own: &VehicleState, ahead: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    merge_ahead_value(own, ahead, cfg) - spacing_margin_pad(cfg)
}

/// [`merge_behind_value`] less the enforcement pad.
pub fn merge_behind_slack(own: &VehicleState, behind: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    merge_behind_value(own, behind, cfg) - spacing_margin_pad(cfg)
}

/// Time derivative of [`merge_behind_value`] along the dynamics, given the
/// follower's current control.
pub fn merge_behind_rate(
    own: &VehicleState,
    behind: &VehicleState,
    u_behind: f64,
    cfg: &ScenarioConfig,
) -> f64 {
    own.v - behind.v - (cfg.phi / cfg.l) * behind.v * behind.v - cfg.phi_at(behind.x) * u_behind
}

/// Speed-envelope rows: `-u + k1 (v_max - v) >= 0` and `u + k2 (v - v_min) >= 0`.
pub fn cbf_speed_limits(
    state: &VehicleState,
    cfg: &ScenarioConfig,
) -> [LinearControlConstraint; 2] {
    [
        LinearControlConstraint {
            a_u: -1.0,
            a_e: 0.0,
            c: gain(cfg.k1).apply(speed_max_value(state, cfg)),
            sense: ConstraintSense::Geq0,
            label: ConstraintLabel::SpeedMax,
        },
        LinearControlConstraint {
            a_u: 1.0,
            a_e: 0.0,
            c: gain(cfg.k2).apply(speed_min_value(state, cfg)),
            sense: ConstraintSense::Geq0,
            label: ConstraintLabel::SpeedMin,
        },
    ]
}

/// Rear-end safety w.r.t. the same-road predecessor:
/// `-phi*u + (v_ip - v_i) + k3 * b3 >= 0`.
pub fn cbf_rear_end(
    own: &VehicleState,
    leader: &VehicleState,
    cfg: &ScenarioConfig,
) -> LinearControlConstraint {
    LinearControlConstraint {
        a_u: -cfg.phi,
        a_e: 0.0,
        c: leader.v - own.v
            + gain(cfg.k3).apply(rear_end_value(own, leader, cfg) - spacing_margin_pad(cfg)),
        sense: ConstraintSense::Geq0,
        label: ConstraintLabel::RearEnd,
    }
}

/// Merge-ahead safety w.r.t. the assigned cross-road vehicle ahead.
///
/// Differentiating `Phi(x_i(t)) v_i(t)` by the chain rule contributes
/// `(phi/L) v_i^2` alongside the `Phi(x_i) u_i` term:
/// `-Phi(x_i)*u + (v_plus - v_i - (phi/L) v_i^2) + k4 * b4 >= 0`.
pub fn cbf_merge_ahead(
    own: &VehicleState,
    ahead: &VehicleState,
    cfg: &ScenarioConfig,
) -> LinearControlConstraint {
    LinearControlConstraint {
        a_u: -cfg.phi_at(own.x),
        a_e: 0.0,
        c: ahead.v - own.v - (cfg.phi / cfg.l) * own.v * own.v
            + gain(cfg.k4).apply(merge_ahead_slack(own, ahead, cfg)),
        sense: ConstraintSense::Geq0,
        label: ConstraintLabel::MergeAhead,
    }
}

/// Merge-behind safety w.r.t. the assigned cross-road follower.
///
/// b5 has relative degree 2 in the own control (u enters through the own
/// speed), so the row enforces the second-order condition
/// `psi1_dot + k6 * psi1 >= 0` with `psi1 = b5_dot + k5 * b5`. Expanding the
/// derivatives with `Phi` evaluated at the follower's position:
///
/// ```text
/// b5_dot  = v_i - v_b - (phi/L) v_b^2 - Phi(x_b) u_b
/// b5_ddot = u_i - u_b - 3 (phi/L) v_b u_b - Phi(x_b) udot_b
/// row:      u_i - u_b - 3 (phi/L) v_b u_b - Phi(x_b) udot_b
///             + k5 * b5_dot + k6 * psi1 >= 0
/// ```
///
/// The follower must be automated: its control input appears in the row, and
/// human-driven followers are never granted gaps this way.
pub fn hocbf_merge_behind(
    own: &VehicleState,
    behind: &VehicleState,
    behind_class: VehicleClass,
    u_behind: f64,
    udot_behind: f64,
    cfg: &ScenarioConfig,
) -> Result<LinearControlConstraint, BarrierError> {
    if behind_class != VehicleClass::Cav {
        return Err(BarrierError::MisroutedConstraint);
    }
    let b5 = merge_behind_slack(own, behind, cfg);
    let b5_dot = merge_behind_rate(own, behind, u_behind, cfg);
    let psi1 = b5_dot + gain(cfg.k5).apply(b5);
    let c = -u_behind - 3.0 * (cfg.phi / cfg.l) * behind.v * u_behind
        - cfg.phi_at(behind.x) * udot_behind
        + gain(cfg.k5).apply(b5_dot)
        + gain(cfg.k6).apply(psi1);
    Ok(LinearControlConstraint {
        a_u: 1.0,
        a_e: 0.0,
        c,
        sense: ConstraintSense::Geq0,
        label: ConstraintLabel::MergeBehind,
    })
}

/// Relaxed speed-tracking row for V = (v - v_ref)^2:
/// `2 (v - v_ref) u - e + c3 (v - v_ref)^2 <= 0`.
pub fn clf_track_speed(
    state: &VehicleState,
    v_ref: f64,
    cfg: &ScenarioConfig,
) -> LinearControlConstraint {
    let dv = state.v - v_ref;
    LinearControlConstraint {
        a_u: 2.0 * dv,
        a_e: -1.0,
        c: cfg.c3 * dv * dv,
        sense: ConstraintSense::Leq0,
        label: ConstraintLabel::TrackSpeed,
    }
}
