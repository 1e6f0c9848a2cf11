//! Scenario configuration: geometry, actuation limits, controller gains,
//! traffic generation, and fuel-rate coefficients.
//!
//! Configs load from a flat `key = value` text file with `#` comments. All
//! quantities are SI; speed keys also accept a `_kmh` suffixed variant that is
//! converted at the boundary.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequencingPolicy {
    /// Safe sequencing: resequence whenever the distance-order sequence
    /// would make a vehicle merge ahead of a close human driver.
    Ss,
    /// Shortest-distance-first: keep the distance-order sequence as is.
    Sdf,
}

impl fmt::Display for SequencingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequencingPolicy::Ss => write!(f, "ss"),
            SequencingPolicy::Sdf => write!(f, "sdf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HdvModelKind {
    ConstantSpeed,
    CarFollowing,
    Aggressive,
}

/// Instantaneous fuel rate model: a cruise polynomial in speed plus an
/// acceleration term that only burns fuel while accelerating.
///
/// `f_cruise(v) = w0 + w1 v + w2 v^2 + w3 v^3` (mL/s)
/// `f_accel(v,u) = (r0 + r1 v + r2 v^2) u`     (mL/s, floored at 0 for u < 0)
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelCoeffs {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
}

impl FuelCoeffs {
    pub fn cruise(&self, v: f64) -> f64 {
        self.w0 + self.w1 * v + self.w2 * v * v + self.w3 * v * v * v
    }

    pub fn accel(&self, v: f64, u: f64) -> f64 {
        (self.r0 + self.r1 * v + self.r2 * v * v) * u
    }

    /// Total instantaneous rate with the acceleration term floored at zero.
    pub fn rate(&self, v: f64, u: f64) -> f64 {
        self.cruise(v) + self.accel(v, u).max(0.0)
    }
}

/// Example passenger-car coefficients; see `examples/scenario.cfg` for the
/// same values in file form. Replace with calibrated numbers for real studies.
pub const EXAMPLE_FUEL_COEFFS: FuelCoeffs = FuelCoeffs {
    w0: 0.1569,
    w1: 2.450e-2,
    w2: -7.415e-4,
    w3: 5.975e-5,
    r0: 0.07224,
    r1: 9.681e-2,
    r2: 1.075e-3,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Road length from entry to the merging point, m.
    pub l: f64,
    /// Sequencing-zone length, m.
    pub l_sz: f64,
    /// Awareness-zone length, m. `l_sz + l_az` must equal `l`.
    pub l_az: f64,
    /// Reaction-time headway coefficient phi, s.
    pub phi: f64,
    /// Standstill safety gap delta, m.
    pub delta: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Hardest braking (negative), m/s^2.
    pub u_min: f64,
    /// Hardest acceleration, m/s^2.
    pub u_max: f64,
    /// Discrete control period, s.
    pub t_d: f64,
    /// MPC horizon length, steps.
    pub horizon: usize,
    /// Weight on the tracking-relaxation variable in the control cost.
    pub beta1: f64,
    /// Speed-tracking convergence rate in the relaxed tracking row.
    pub c3: f64,
    /// Barrier gains for speed-max, speed-min, rear-end, merge-ahead,
    /// merge-behind (first order), merge-behind (second order).
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    /// Yield threshold on estimated aggressiveness, in (0, 1).
    pub gamma: f64,
    /// Poisson arrival rate per road, veh/s.
    pub arrival_rate_per_road: f64,
    /// Probability that a spawned vehicle is a CAV.
    pub penetration_rate: f64,
    /// Entry speed is drawn uniformly from this range, m/s.
    pub init_speed_min: f64,
    pub init_speed_max: f64,
    pub fuel: FuelCoeffs,
    pub seed: u64,
    /// Blend weight for the aggressiveness estimate: `alpha` on the speed
    /// ratio, `1 - alpha` reserved for pluggable estimators.
    pub alpha_oracle: f64,
    pub sequencing_policy: SequencingPolicy,
    /// Run until this many vehicles have exited.
    pub n_vehicles: usize,
    /// Hard stop on simulated time, s.
    pub max_sim_time: f64,
    /// Interleaving-enumeration budget before the constructive fallback.
    pub enum_cap: u64,
    pub hdv_model: HdvModelKind,
    /// Upper bound of the per-vehicle aggression draw for aggressive spawns.
    pub hdv_aggression: f64,
    /// Car-following parameters applied to spawned human drivers.
    pub hdv_headway: f64,
    pub hdv_min_gap: f64,
    pub hdv_accel: f64,
    pub hdv_decel: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            l: 400.0,
            l_sz: 300.0,
            l_az: 100.0,
            phi: 1.8,
            delta: 3.78,
            v_min: 0.0,
            v_max: 30.0,
            u_min: -5.886,
            u_max: 4.905,
            t_d: 0.1,
            horizon: 15,
            beta1: 1.0,
            c3: 1.0,
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            k4: 1.0,
            k5: 1.0,
            k6: 1.0,
            gamma: 0.5,
            arrival_rate_per_road: 600.0 / 3600.0,
            penetration_rate: 0.5,
            init_speed_min: 16.67,
            init_speed_max: 27.78,
            fuel: EXAMPLE_FUEL_COEFFS,
            seed: 1,
            alpha_oracle: 0.5,
            sequencing_policy: SequencingPolicy::Ss,
            n_vehicles: 100,
            max_sim_time: 3600.0,
            enum_cap: 5000,
            hdv_model: HdvModelKind::CarFollowing,
            hdv_aggression: 0.0,
            hdv_headway: 1.5,
            hdv_min_gap: 2.0,
            hdv_accel: 1.4,
            hdv_decel: 2.0,
        }
    }
}

impl ScenarioConfig {
    /// Position of the sequencing/awareness boundary on either road, m.
    pub fn az_boundary(&self) -> f64 {
        self.l - self.l_az
    }

    /// Distance-scaled headway coefficient: grows linearly from 0 at the
    /// entry to `phi` at the merging point.
    pub fn phi_at(&self, x: f64) -> f64 {
        self.phi * x / self.l
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid(msg.to_string()))
            }
        };
        check(self.l > 0.0, "l must be positive")?;
        check(self.l_sz > 0.0 && self.l_az > 0.0, "zone lengths must be positive")?;
        check(
            (self.l_sz + self.l_az - self.l).abs() < 1e-9,
            "l_sz + l_az must equal l",
        )?;
        check(self.phi > 0.0, "phi must be positive")?;
        check(self.delta > 0.0, "delta must be positive")?;
        check(self.v_min < self.v_max, "v_min must be below v_max")?;
        check(self.v_min >= 0.0, "v_min must be non-negative")?;
        check(self.u_min < 0.0 && self.u_max > 0.0, "u_min < 0 < u_max required")?;
        check(self.t_d > 0.0, "t_d must be positive")?;
        check(self.horizon >= 1, "horizon must be at least 1")?;
        check(self.beta1 >= 0.0, "beta1 must be non-negative")?;
        check(self.c3 > 0.0, "c3 must be positive")?;
        for (name, k) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("k5", self.k5),
            ("k6", self.k6),
        ] {
            check(k > 0.0, &format!("{name} must be positive"))?;
        }
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)")?;
        check(self.arrival_rate_per_road >= 0.0, "arrival rate must be non-negative")?;
        check(
            (0.0..=1.0).contains(&self.penetration_rate),
            "penetration_rate must lie in [0, 1]",
        )?;
        check(
            self.init_speed_min <= self.init_speed_max,
            "init speed range is inverted",
        )?;
        check(
            self.init_speed_min >= self.v_min && self.init_speed_max <= self.v_max,
            "init speed range must sit inside [v_min, v_max]",
        )?;
        check(
            (0.0..=1.0).contains(&self.alpha_oracle),
            "alpha_oracle must lie in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.hdv_aggression),
            "hdv_aggression must lie in [0, 1]",
        )?;
        check(self.hdv_headway >= 0.0, "hdv_headway must be non-negative")?;
        check(self.hdv_min_gap >= 0.0, "hdv_min_gap must be non-negative")?;
        check(self.hdv_accel > 0.0 && self.hdv_decel > 0.0, "hdv accel/decel must be positive")?;
        // The fuel model must never report a negative burn rate at cruise.
        let mut v = self.v_min;
        while v <= self.v_max + 1e-9 {
            if self.fuel.cruise(v) < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "fuel cruise rate is negative at v = {v:.2} m/s"
                )));
            }
            v += 0.25;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_cfg(&text)
    }

    pub fn from_str_cfg(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    text: raw.trim().to_string(),
                });
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            seen.insert(key.clone(), line_no);
            apply_key(&mut cfg, &key, value, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

const KMH: f64 = 1.0 / 3.6;

fn apply_key(
    cfg: &mut ScenarioConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    let bad = |key: &str, reason: String| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason,
    };
    let num = |key: &str, value: &str| -> Result<f64, ConfigError> {
        value
            .parse::<f64>()
            .map_err(|e| bad(key, e.to_string()))
            .and_then(|x| {
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(bad(key, "must be finite".into()))
                }
            })
    };
    match key {
        "l" => cfg.l = num(key, value)?,
        "l_sz" => cfg.l_sz = num(key, value)?,
        "l_az" => cfg.l_az = num(key, value)?,
        "phi" => cfg.phi = num(key, value)?,
        "delta" => cfg.delta = num(key, value)?,
        "v_min" => cfg.v_min = num(key, value)?,
        "v_max" => cfg.v_max = num(key, value)?,
        "v_min_kmh" => cfg.v_min = num(key, value)? * KMH,
        "v_max_kmh" => cfg.v_max = num(key, value)? * KMH,
        "u_min" => cfg.u_min = num(key, value)?,
        "u_max" => cfg.u_max = num(key, value)?,
        "t_d" => cfg.t_d = num(key, value)?,
        "horizon" => {
            cfg.horizon = value.parse().map_err(|e: std::num::ParseIntError| bad(key, e.to_string()))?
        }
        "beta1" => cfg.beta1 = num(key, value)?,
        "c3" => cfg.c3 = num(key, value)?,
        "k1" => cfg.k1 = num(key, value)?,
        "k2" => cfg.k2 = num(key, value)?,
        "k3" => cfg.k3 = num(key, value)?,
        "k4" => cfg.k4 = num(key, value)?,
        "k5" => cfg.k5 = num(key, value)?,
        "k6" => cfg.k6 = num(key, value)?,
        "gamma" => cfg.gamma = num(key, value)?,
        "arrival_rate_per_road" => cfg.arrival_rate_per_road = num(key, value)?,
        "arrival_rate_per_road_veh_per_hr" => {
            cfg.arrival_rate_per_road = num(key, value)? / 3600.0
        }
        "penetration_rate" => cfg.penetration_rate = num(key, value)?,
        "init_speed_min" => cfg.init_speed_min = num(key, value)?,
        "init_speed_max" => cfg.init_speed_max = num(key, value)?,
        "init_speed_min_kmh" => cfg.init_speed_min = num(key, value)? * KMH,
        "init_speed_max_kmh" => cfg.init_speed_max = num(key, value)? * KMH,
        "fuel_w0" => cfg.fuel.w0 = num(key, value)?,
        "fuel_w1" => cfg.fuel.w1 = num(key, value)?,
        "fuel_w2" => cfg.fuel.w2 = num(key, value)?,
        "fuel_w3" => cfg.fuel.w3 = num(key, value)?,
        "fuel_r0" => cfg.fuel.r0 = num(key, value)?,
        "fuel_r1" => cfg.fuel.r1 = num(key, value)?,
        "fuel_r2" => cfg.fuel.r2 = num(key, value)?,
        "seed" => {
            cfg.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(key, e.to_string()))?
        }
        "alpha_oracle" => cfg.alpha_oracle = num(key, value)?,
        "sequencing_policy" => {
            cfg.sequencing_policy = match value.to_ascii_lowercase().as_str() {
                "ss" => SequencingPolicy::Ss,
                "sdf" => SequencingPolicy::Sdf,
                other => return Err(bad(key, format!("unknown policy `{other}`"))),
            }
        }
        "n_vehicles" => {
            cfg.n_vehicles = value.parse().map_err(|e: std::num::ParseIntError| bad(key, e.to_string()))?
        }
        "max_sim_time" => cfg.max_sim_time = num(key, value)?,
        "enum_cap" => {
            cfg.enum_cap = value.parse().map_err(|e: std::num::ParseIntError| bad(key, e.to_string()))?
        }
        "hdv_model" => {
            cfg.hdv_model = match value.to_ascii_lowercase().as_str() {
                "constant_speed" => HdvModelKind::ConstantSpeed,
                "car_following" => HdvModelKind::CarFollowing,
                "aggressive" => HdvModelKind::Aggressive,
                other => return Err(bad(key, format!("unknown hdv model `{other}`"))),
            }
        }
        "hdv_aggression" => cfg.hdv_aggression = num(key, value)?,
        "hdv_headway" => cfg.hdv_headway = num(key, value)?,
        "hdv_min_gap" => cfg.hdv_min_gap = num(key, value)?,
        "hdv_accel" => cfg.hdv_accel = num(key, value)?,
        "hdv_decel" => cfg.hdv_decel = num(key, value)?,
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            })
        }
    }
    Ok(())
}
