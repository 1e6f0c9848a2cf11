//! Double-integrator vehicle dynamics under zero-order-hold control, with the
//! exact discrete map (no Euler drift).

use crate::vehicle::VehicleState;

/// Advance one state exactly: `x' = x + v dt + u dt^2 / 2`, `v' = v + u dt`.
///
/// Speed may cross zero here; controlled vehicles prevent that through their
/// own constraints. Use [`step_rest_clamped`] for vehicles that physically
/// stop (human drivers and yield maneuvers).
pub fn step(state: VehicleState, u: f64, dt: f64) -> VehicleState {
    VehicleState {
        x: state.x + state.v * dt + 0.5 * u * dt * dt,
        v: state.v + u * dt,
        accel: u,
    }
}

/// Like [`step`], but if braking would push speed through zero the crossing
/// time is computed and the vehicle is held at rest from that instant on.
pub fn step_rest_clamped(state: VehicleState, u: f64, dt: f64) -> VehicleState {
    if u < 0.0 && state.v + u * dt < 0.0 {
        let t_stop = if state.v <= 0.0 { 0.0 } else { state.v / (-u) };
        VehicleState {
            x: state.x + state.v * t_stop + 0.5 * u * t_stop * t_stop,
            v: 0.0,
            accel: u,
        }
    } else {
        step(state, u, dt)
    }
}

/// Constant-control position after `t` seconds, without mutating state.
pub fn position_at(state: &VehicleState, u: f64, t: f64) -> f64 {
    state.x + state.v * t + 0.5 * u * t * t
}

/// Exact time in `(0, dt]` at which `x(t) = x_target` under constant `u`,
/// or `None` if the boundary is not reached within the step.
pub fn crossing_time(state: &VehicleState, u: f64, dt: f64, x_target: f64) -> Option<f64> {
    let d = x_target - state.x;
    if d <= 0.0 {
        return Some(0.0);
    }
    // Solve 0.5 u t^2 + v t - d = 0 for the smallest positive root.
    let root = if u.abs() < 1e-12 {
        if state.v <= 0.0 {
            return None;
        }
        d / state.v
    } else {
        let disc = state.v * state.v + 2.0 * u * d;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let r1 = (-state.v + sq) / u;
        let r2 = (-state.v - sq) / u;
        let mut best = f64::INFINITY;
        for r in [r1, r2] {
            if r > 0.0 && r < best {
                best = r;
            }
        }
        if best.is_finite() {
            best
        } else {
            return None;
        }
    };
    (root <= dt + 1e-12).then_some(root.min(dt))
}

/// Predicted states over a control horizon, sampled at multiples of `dt`.
#[derive(Debug, Clone)]
pub struct PredictedTrajectory {
    /// `samples[h]` is the state at `h * dt` from now; `samples[0]` is the
    /// current state.
    pub samples: Vec<VehicleState>,
}

impl PredictedTrajectory {
    /// Constant-velocity prediction (`u = 0` throughout).
    pub fn constant_velocity(state: VehicleState, dt: f64, steps: usize) -> Self {
        Self::rollout(state, &vec![0.0; steps], dt)
    }

    /// Roll the exact discrete dynamics forward under a control sequence.
    /// The result has `controls.len() + 1` samples.
    pub fn rollout(state: VehicleState, controls: &[f64], dt: f64) -> Self {
        let mut samples = Vec::with_capacity(controls.len() + 1);
        let mut s = state;
        samples.push(s);
        for &u in controls {
            s = step(s, u, dt);
            samples.push(s);
        }
        PredictedTrajectory { samples }
    }
}
