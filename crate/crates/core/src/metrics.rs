//! Per-vehicle and aggregate performance accounting: travel time, control
//! effort, fuel burn, and the safety margins observed along the way.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FuelCoeffs;
use crate::vehicle::{RoadId, VehicleClass};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate zero vehicles")]
    Empty,
}

/// Running totals for one vehicle, updated every tick it is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    /// Integral of squared-control effort, (m/s^2)^2 * s / 2.
    pub l2_energy: f64,
    /// Integral of the fuel-rate polynomial, model units.
    pub fuel: f64,
    /// Worst same-road spacing margin ever observed, m.
    pub min_rear_gap_residual: f64,
    /// Spacing margin against the conflicting leader at the merge-point
    /// crossing, m; absent when nobody conflicted.
    pub mp_clearance_residual: Option<f64>,
}

impl Default for VehicleMetrics {
    fn default() -> Self {
        VehicleMetrics {
            l2_energy: 0.0,
            fuel: 0.0,
            min_rear_gap_residual: f64::INFINITY,
            mp_clearance_residual: None,
        }
    }
}

impl VehicleMetrics {
    /// Fold one tick's control and speed into the totals.
    pub fn accumulate(&mut self, u: f64, v: f64, dt: f64, fuel: &FuelCoeffs) {
        self.l2_energy += 0.5 * u * u * dt;
        self.fuel += fuel.rate(v, u) * dt;
    }

    pub fn observe_rear_gap(&mut self, residual: f64) {
        if residual < self.min_rear_gap_residual {
            self.min_rear_gap_residual = residual;
        }
    }
}

/// One exported line per vehicle that finished its run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRow {
    pub id: u64,
    pub class: VehicleClass,
    pub road: RoadId,
    pub t_entry: f64,
    pub t_exit: f64,
    pub travel_time: f64,
    pub l2_energy: f64,
    pub fuel: f64,
    pub min_rear_gap_residual: f64,
    pub mp_clearance_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn stats(values: impl Iterator<Item = f64> + Clone) -> MetricStats {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricStats { mean, std, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub travel_time: MetricStats,
    pub l2_energy: MetricStats,
    pub fuel: MetricStats,
}

fn class_aggregate(rows: &[&VehicleRow]) -> ClassAggregate {
    ClassAggregate {
        travel_time: stats(rows.iter().map(|r| r.travel_time)),
        l2_energy: stats(rows.iter().map(|r| r.l2_energy)),
        fuel: stats(rows.iter().map(|r| r.fuel)),
    }
}

/// Means and spreads over all finished vehicles, overall and per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub overall: ClassAggregate,
    pub cav: Option<ClassAggregate>,
    pub hdv: Option<ClassAggregate>,
}

pub fn aggregate(rows: &[VehicleRow]) -> Result<AggregateMetrics, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let all: Vec<&VehicleRow> = rows.iter().collect();
    let cavs: Vec<&VehicleRow> =
        rows.iter().filter(|r| r.class == VehicleClass::Cav).collect();
    let hdvs: Vec<&VehicleRow> =
        rows.iter().filter(|r| r.class == VehicleClass::Hdv).collect();
    Ok(AggregateMetrics {
        overall: class_aggregate(&all),
        cav: (!cavs.is_empty()).then(|| class_aggregate(&cavs)),
        hdv: (!hdvs.is_empty()).then(|| class_aggregate(&hdvs)),
    })
}

pub const VEHICLE_CSV_HEADER: &str = "id,class,road,t_entry,t_exit,travel_time,l2_energy,fuel,min_rear_gap_residual,mp_clearance_residual";

fn class_name(c: VehicleClass) -> &'static str {
    match c {
        VehicleClass::Cav => "cav",
        VehicleClass::Hdv => "hdv",
    }
}

fn road_name(r: RoadId) -> &'static str {
    match r {
        RoadId::Main => "main",
        RoadId::Side => "side",
    }
}

/// Render the per-vehicle table plus a `#`-prefixed summary block. The
/// fixed six-decimal formatting keeps identical runs byte-identical.
pub fn vehicle_csv(rows: &[VehicleRow], agg: Option<&AggregateMetrics>) -> String {
    let mut out = String::new();
    out.push_str(VEHICLE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let clearance = r
            .mp_clearance_residual
            .map(|c| format!("{c:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.id,
            class_name(r.class),
            road_name(r.road),
            r.t_entry,
            r.t_exit,
            r.travel_time,
            r.l2_energy,
            r.fuel,
            r.min_rear_gap_residual,
            clearance,
        ));
    }
    if let Some(agg) = agg {
        push_summary(&mut out, "overall", &agg.overall);
        if let Some(c) = &agg.cav {
            push_summary(&mut out, "cav", c);
        }
        if let Some(h) = &agg.hdv {
            push_summary(&mut out, "hdv", h);
        }
    }
    out
}

fn push_summary(out: &mut String, scope: &str, agg: &ClassAggregate) {
    for (metric, s) in [
        ("travel_time", agg.travel_time),
        ("l2_energy", agg.l2_energy),
        ("fuel", agg.fuel),
    ] {
        out.push_str(&format!(
            "# {scope},{metric},mean,{:.6},std,{:.6},n,{}\n",
            s.mean, s.std, s.n
        ));
    }
}

/// One-sided paired sign test: p-value for the hypothesis that `a` tends to
/// be smaller than `b`, i.e. the probability of at least the observed number
/// of wins under a fair coin. Tied pairs are dropped.
pub fn sign_test_less(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let mut n = 0u32;
    let mut wins = 0u32;
    for (&x, &y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
            n += 1;
        } else if x > y {
            n += 1;
        }
    }
    if n == 0 {
        return 1.0;
    }
    binomial_tail(wins, n)
}

/// P(X >= wins) for X ~ Binomial(n, 1/2).
fn binomial_tail(wins: u32, n: u32) -> f64 {
    let mut sum = 0.0;
    for k in wins..=n {
        sum += binomial_coeff(n, k);
    }
    sum * 0.5f64.powi(n as i32)
}

fn binomial_coeff(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}
