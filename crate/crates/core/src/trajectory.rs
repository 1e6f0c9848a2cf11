//! Minimum-effort reference trajectories with fixed terminal position and
//! speed but free terminal time.
//!
//! Minimizing the integral of u^2/2 under double-integrator dynamics makes
//! the optimal control linear in time, `u(t) = a (t - t0) + b`. For a given
//! duration T the boundary conditions fix (a, b) in closed form; the free
//! terminal time adds the stationarity condition `a v_f = u(t_f)^2 / 2`,
//! which we solve by bracketing and bisection.

use crate::config::ScenarioConfig;
use crate::vehicle::VehicleState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on reference maneuver duration, s.
pub const T_MAX: f64 = 120.0;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("no finite-time control law satisfies the boundary conditions")]
    NoFiniteSolution,
    #[error("stopping ramp needs |u| = {required:.3} m/s^2, limit is {limit:.3}")]
    InfeasibleStop { required: f64, limit: f64 },
    #[error("degenerate boundary conditions: {0}")]
    Degenerate(&'static str),
}

/// A control law linear in time, valid on `[t0, t_f]`; zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearControlLaw {
    /// Control slope, m/s^3.
    pub a: f64,
    /// Control at `t0`, m/s^2.
    pub b: f64,
    pub t0: f64,
    /// End of the maneuver; `t_f == t0` for degenerate rest cases.
    pub t_f: f64,
    /// State at `t0`, kept so speed and position references are evaluable.
    pub x0: f64,
    pub v0: f64,
}

impl LinearControlLaw {
    /// The all-zero reference: hold current speed.
    pub fn zero(t0: f64, x0: f64, v0: f64) -> Self {
        LinearControlLaw { a: 0.0, b: 0.0, t0, t_f: t0, x0, v0 }
    }

    pub fn constant(u: f64, t0: f64, t_f: f64, x0: f64, v0: f64) -> Self {
        LinearControlLaw { a: 0.0, b: u, t0, t_f, x0, v0 }
    }

    /// Reference control at absolute time `t`.
    pub fn u_at(&self, t: f64) -> f64 {
        if t >= self.t_f {
            0.0
        } else {
            let tau = (t - self.t0).max(0.0);
            self.a * tau + self.b
        }
    }

    /// Reference speed at absolute time `t` (held constant past `t_f`).
    pub fn v_at(&self, t: f64) -> f64 {
        let tau = (t.min(self.t_f) - self.t0).max(0.0);
        self.v0 + self.b * tau + 0.5 * self.a * tau * tau
    }

    /// Reference position at absolute time `t`.
    pub fn x_at(&self, t: f64) -> f64 {
        let tau = (t.min(self.t_f) - self.t0).max(0.0);
        let x_end = self.x0
            + self.v0 * tau
            + 0.5 * self.b * tau * tau
            + self.a * tau * tau * tau / 6.0;
        if t <= self.t_f {
            x_end
        } else {
            x_end + self.v_at(self.t_f) * (t - self.t_f)
        }
    }

    /// Duration of the maneuver, s.
    pub fn duration(&self) -> f64 {
        self.t_f - self.t0
    }

    /// Control effort integral over the law's support.
    pub fn cost(&self) -> f64 {
        energy_cost(self.a, self.b, self.duration())
    }
}

/// `integral of (a s + b)^2 / 2 over [0, T]` in closed form.
fn energy_cost(a: f64, b: f64, t: f64) -> f64 {
    0.5 * (a * a * t * t * t / 3.0 + a * b * t * t + b * b * t)
}

/// Coefficients of the fixed-duration two-point solution.
fn fixed_time_coeffs(d: f64, v0: f64, v_f: f64, t: f64) -> (f64, f64) {
    let a = 12.0 * ((v0 + v_f) * t / 2.0 - d) / (t * t * t);
    let b = (v_f - v0 - 0.5 * a * t * t) / t;
    (a, b)
}

/// Stationarity residual for the free terminal time.
fn transversality(d: f64, v0: f64, v_f: f64, t: f64) -> f64 {
    let (a, b) = fixed_time_coeffs(d, v0, v_f, t);
    let u_f = a * t + b;
    a * v_f - 0.5 * u_f * u_f
}

/// Minimum-effort law from `(x0, v0)` at time `t0` to terminal state
/// `(x_f, v_f)` with free terminal time.
///
/// Among all durations satisfying the stationarity condition the cheapest is
/// returned. Fails with `NoFiniteSolution` when no duration in `(0, T_MAX]`
/// qualifies; callers usually fall back to [`constant_accel_fallback`].
pub fn solve_energy_optimal(
    x0: f64,
    v0: f64,
    x_f: f64,
    v_f: f64,
    t0: f64,
) -> Result<LinearControlLaw, TrajectoryError> {
    let d = x_f - x0;
    if v0 == 0.0 && v_f == 0.0 && d > 0.0 {
        return Err(TrajectoryError::Degenerate(
            "cannot cover positive distance between two rest states",
        ));
    }
    if d < 0.0 {
        return Err(TrajectoryError::NoFiniteSolution);
    }
    if d == 0.0 {
        return if (v_f - v0).abs() < 1e-12 {
            Ok(LinearControlLaw::zero(t0, x0, v0))
        } else {
            Err(TrajectoryError::NoFiniteSolution)
        };
    }
    if v_f == 0.0 {
        // Tangent case: the stationarity residual touches zero without a sign
        // change, but the problem has the exact closed form of a stopping ramp.
        return stop_ramp(x0, v0, x_f, t0).map(|(law, _)| law);
    }

    // Bracket sign changes of the residual on a log-spaced grid, then bisect.
    const GRID: usize = 2400;
    let t_lo = 1e-3;
    let ratio = (T_MAX / t_lo).powf(1.0 / (GRID as f64 - 1.0));
    let mut roots: Vec<f64> = Vec::new();
    let mut t_prev = t_lo;
    let mut g_prev = transversality(d, v0, v_f, t_prev);
    let mut t = t_lo;
    for _ in 1..GRID {
        t *= ratio;
        let g = transversality(d, v0, v_f, t);
        if g_prev == 0.0 {
            roots.push(t_prev);
        } else if g_prev * g < 0.0 {
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..90 {
                let mid = 0.5 * (lo + hi);
                let gm = transversality(d, v0, v_f, mid);
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if gm * g_prev < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        t_prev = t;
        g_prev = g;
    }
    let best = roots
        .into_iter()
        .map(|t| {
            let (a, b) = fixed_time_coeffs(d, v0, v_f, t);
            (energy_cost(a, b, t), t, a, b)
        })
        .min_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    match best {
        Some((_, t, a, b)) => Ok(LinearControlLaw { a, b, t0, t_f: t0 + t, x0, v0 }),
        None => Err(TrajectoryError::NoFiniteSolution),
    }
}

fn stop_ramp(
    x0: f64,
    v0: f64,
    x_stop: f64,
    t0: f64,
) -> Result<(LinearControlLaw, f64), TrajectoryError> {
    let d = x_stop - x0;
    if d <= 0.0 || v0 <= 0.0 {
        return Err(TrajectoryError::Degenerate(
            "stopping ramp needs positive speed and positive distance",
        ));
    }
    // v(T) = 0 and u(T) = 0 give a = 2 v0 / T^2, b = -2 v0 / T; the distance
    // condition then fixes T = 3 d / v0.
    let t = 3.0 * d / v0;
    let a = 2.0 * v0 / (t * t);
    let b = -2.0 * v0 / t;
    Ok((LinearControlLaw { a, b, t0, t_f: t0 + t, x0, v0 }, b))
}

/// Smooth stopping ramp ending at rest exactly at `x_stop`.
///
/// Fails with `InfeasibleStop` when the ramp's initial braking would exceed
/// the actuation limit; callers then switch to an emergency profile.
pub fn solve_yield_stop(
    x0: f64,
    v0: f64,
    x_stop: f64,
    t0: f64,
    cfg: &ScenarioConfig,
) -> Result<LinearControlLaw, TrajectoryError> {
    if v0 <= 1e-9 {
        // Already at rest: hold position, regardless of where the stop point
        // sits ahead of us.
        return Ok(LinearControlLaw::zero(t0, x0, 0.0));
    }
    if x_stop - x0 <= 0.0 {
        // Moving and already at or past the stop point: no ramp can work.
        return Err(TrajectoryError::InfeasibleStop {
            required: f64::INFINITY,
            limit: cfg.u_min.abs(),
        });
    }
    let (law, b) = stop_ramp(x0, v0, x_stop, t0)?;
    if b.abs() > cfg.u_min.abs() {
        return Err(TrajectoryError::InfeasibleStop {
            required: b.abs(),
            limit: cfg.u_min.abs(),
        });
    }
    Ok(law)
}

/// Highest speed from which a full-braking stop still fits in `d` metres.
pub fn max_speed_to_stop(d: f64, u_min: f64) -> f64 {
    if d <= 0.0 {
        0.0
    } else {
        (2.0 * u_min.abs() * d).sqrt()
    }
}

/// Constant-acceleration reference reaching `v_f` over the distance `d`,
/// clamped to the actuation box. Used when no stationary law exists.
pub fn constant_accel_fallback(
    x0: f64,
    v0: f64,
    x_f: f64,
    v_f: f64,
    t0: f64,
    cfg: &ScenarioConfig,
) -> LinearControlLaw {
    let d = x_f - x0;
    if d <= 0.0 {
        return LinearControlLaw::zero(t0, x0, v0);
    }
    let u = ((v_f * v_f - v0 * v0) / (2.0 * d)).clamp(cfg.u_min, cfg.u_max);
    if u.abs() < 1e-12 {
        let t = if v0 > 0.0 { d / v0 } else { 0.0 };
        return LinearControlLaw::constant(0.0, t0, t0 + t, x0, v0);
    }
    // Duration until the target speed (or a rest) is reached.
    let v_end = if u > 0.0 { v_f.max(v0) } else { v_f.min(v0).max(0.0) };
    let t = ((v_end - v0) / u).max(0.0);
    LinearControlLaw::constant(u, t0, t0 + t, x0, v0)
}

/// Reference law toward a terminal state, preferring the stationary solution.
pub fn reference_to(
    state: &VehicleState,
    x_f: f64,
    v_f: f64,
    t0: f64,
    cfg: &ScenarioConfig,
) -> LinearControlLaw {
    solve_energy_optimal(state.x, state.v, x_f, v_f, t0)
        .unwrap_or_else(|_| constant_accel_fallback(state.x, state.v, x_f, v_f, t0, cfg))
}
