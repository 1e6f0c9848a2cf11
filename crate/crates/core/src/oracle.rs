//! Brute-force reference implementations used by the test suite.
//!
//! These deliberately re-derive their answers from first principles instead
//! of calling into `sequencing` or `trajectory`, so a bug in the production
//! path cannot hide in its own oracle. They are shipped rather than buried in
//! the test tree so results can be audited from downstream crates.

use crate::config::ScenarioConfig;
use crate::table::VehicleTable;
use crate::vehicle::{VehicleId, VehicleRecord};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("exhaustive search limited to 12 vehicles, got {0}")]
    TooLarge(usize),
}

/// Exhaustively enumerate every order-preserving interleaving of the two
/// road streams, keep those in which no automated vehicle ends up granting a
/// gap to a human-driven follower, and report the minimum number of changed
/// positions relative to the shortest-distance-first order along with every
/// sequence achieving it.
pub fn brute_force_best_safe(
    road1: &[VehicleId],
    road2: &[VehicleId],
    table: &VehicleTable,
    cfg: &ScenarioConfig,
) -> Result<(usize, Vec<Vec<VehicleId>>), OracleError> {
    let total = road1.len() + road2.len();
    if total > 12 {
        return Err(OracleError::TooLarge(total));
    }

    // Baseline: ascending remaining distance, ties by road then id.
    let mut baseline: Vec<&VehicleRecord> = road1
        .iter()
        .chain(road2)
        .filter_map(|&id| table.get(id))
        .collect();
    baseline.sort_by(|a, b| {
        b.state
            .x
            .partial_cmp(&a.state.x)
            .expect("finite positions")
            .then_with(|| a.road.index().cmp(&b.road.index()))
            .then_with(|| a.id.cmp(&b.id))
    });
    let baseline: Vec<VehicleId> = baseline.iter().map(|r| r.id).collect();

    let mut best: Option<(usize, Vec<Vec<VehicleId>>)> = None;
    let mut stack: Vec<VehicleId> = Vec::with_capacity(total);
    enumerate(road1, road2, &mut stack, &mut |candidate| {
        if !sequence_is_safe(candidate, table, cfg) {
            return;
        }
        let d = candidate.iter().zip(&baseline).filter(|(a, b)| a != b).count();
        match &mut best {
            Some((min_d, witnesses)) => {
                if d < *min_d {
                    *min_d = d;
                    *witnesses = vec![candidate.to_vec()];
                } else if d == *min_d {
                    witnesses.push(candidate.to_vec());
                }
            }
            None => best = Some((d, vec![candidate.to_vec()])),
        }
    });
    let (min_d, mut witnesses) = best.unwrap_or((0, vec![Vec::new()]));
    witnesses.sort();
    Ok((min_d, witnesses))
}

fn enumerate(
    r1: &[VehicleId],
    r2: &[VehicleId],
    stack: &mut Vec<VehicleId>,
    visit: &mut impl FnMut(&[VehicleId]),
) {
    if r1.is_empty() && r2.is_empty() {
        visit(stack);
        return;
    }
    if let Some((&head, rest)) = r1.split_first() {
        stack.push(head);
        enumerate(rest, r2, stack, visit);
        stack.pop();
    }
    if let Some((&head, rest)) = r2.split_first() {
        stack.push(head);
        enumerate(r1, rest, stack, visit);
        stack.pop();
    }
}

fn sequence_is_safe(order: &[VehicleId], table: &VehicleTable, cfg: &ScenarioConfig) -> bool {
    for (pos, &id) in order.iter().enumerate() {
        let rec = match table.get(id) {
            Some(r) if r.is_cav() => r,
            _ => continue,
        };
        let follower = order[pos + 1..]
            .iter()
            .filter_map(|&j| table.get(j))
            .find(|r| r.road != rec.road);
        if let Some(f) = follower {
            let margin = rec.state.x
                - f.state.x
                - (cfg.phi * f.state.x / cfg.l) * f.state.v
                - cfg.delta;
            if margin < 0.0 && !f.is_cav() {
                return false;
            }
        }
    }
    true
}

/// Direct grid search for the cheapest fixed-endpoint maneuver.
///
/// For each candidate duration the minimum-effort control is linear in time
/// with closed-form coefficients; candidates whose speed profile would dip
/// below zero are discarded as non-physical (a road vehicle does not
/// reverse). Returns the best (cost, duration) pair.
pub fn direct_trajectory_oracle(
    x0: f64,
    v0: f64,
    x_f: f64,
    v_f: f64,
    t_grid_step: f64,
) -> (f64, f64) {
    assert!(t_grid_step > 0.0 && t_grid_step <= 1e-3, "grid step too coarse");
    let d = x_f - x0;
    let t_max = 120.0;
    let mut best = (f64::INFINITY, 0.0);
    let steps = (t_max / t_grid_step) as usize;
    for k in 1..=steps {
        let t = k as f64 * t_grid_step;
        let a = 12.0 * ((v0 + v_f) * t / 2.0 - d) / (t * t * t);
        let b = (v_f - v0 - 0.5 * a * t * t) / t;
        if min_speed(v0, a, b, t) < -1e-9 {
            continue;
        }
        let cost = 0.5 * (a * a * t * t * t / 3.0 + a * b * t * t + b * b * t);
        if cost < best.0 {
            best = (cost, t);
        }
    }
    best
}

/// Minimum of `v(t) = v0 + b t + a t^2 / 2` over `[0, t_end]`.
fn min_speed(v0: f64, a: f64, b: f64, t_end: f64) -> f64 {
    let v_at = |t: f64| v0 + b * t + 0.5 * a * t * t;
    let mut min = v_at(0.0).min(v_at(t_end));
    if a.abs() > 1e-300 {
        let t_vertex = -b / a;
        if t_vertex > 0.0 && t_vertex < t_end {
            min = min.min(v_at(t_vertex));
        }
    }
    min
}
