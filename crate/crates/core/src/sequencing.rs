//! Upper-level coordinator: decide the order in which the vehicles currently
//! inside the sequencing zone will cross the merge point, and derive each
//! automated vehicle's cross-road pair (the vehicle it merges behind and the
//! one it grants a gap to).
//!
//! The default order is shortest-distance-first. When that order would ask an
//! automated vehicle to keep a gap for a human-driven follower, the
//! coordinator searches the order-preserving interleavings of the two road
//! streams for the least-disruptive order in which every such follower is
//! automated (or absent); a linear-time construction covers instances too
//! large to enumerate.

use crate::config::ScenarioConfig;
use crate::table::VehicleTable;
use crate::vehicle::{RoadId, VehicleId, VehicleRecord, Zone};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SequencingError {
    #[error("vehicle {0} is not part of the sequence's snapshot")]
    UnknownVehicle(VehicleId),
    #[error("sequences cover different vehicle sets")]
    LengthMismatch,
    #[error("no automated vehicle in the sequencing zone")]
    NoCavInSz,
    #[error("no safe sequence available")]
    EmptySafeSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceSource {
    Sdf,
    SafeGenerated,
    ConstructiveFallback,
}

/// A crossing order over the sequencing zone; position 1 crosses first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeSequence {
    pub order: Vec<VehicleId>,
    pub source: SequenceSource,
}

impl MergeSequence {
    pub fn position(&self, id: VehicleId) -> Option<usize> {
        self.order.iter().position(|&v| v == id).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Cross-road pairing of one automated vehicle: `ahead` is the vehicle it
/// must merge behind, `behind` the one it grants a gap to. Both live on the
/// opposite road; `None` means unconstrained on that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub cav: VehicleId,
    pub ahead: Option<VehicleId>,
    pub behind: Option<VehicleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencingOutcome {
    pub sequence: MergeSequence,
    pub assignments: Vec<Assignment>,
    pub resequenced: bool,
}

impl SequencingOutcome {
    pub fn empty() -> Self {
        SequencingOutcome {
            sequence: MergeSequence { order: Vec::new(), source: SequenceSource::Sdf },
            assignments: Vec::new(),
            resequenced: false,
        }
    }

    pub fn assignment_for(&self, id: VehicleId) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.cav == id)
    }
}

/// Shortest-distance-first order: ascending remaining distance, ties broken
/// by road then id so equal positions stay deterministic.
pub fn sdf_sequence(records: &[&VehicleRecord]) -> MergeSequence {
    let mut sorted: Vec<&VehicleRecord> = records.to_vec();
    sorted.sort_by(|a, b| {
        b.state
            .x
            .partial_cmp(&a.state.x)
            .expect("positions are finite")
            .then_with(|| a.road.index().cmp(&b.road.index()))
            .then_with(|| a.id.cmp(&b.id))
    });
    MergeSequence { order: sorted.iter().map(|r| r.id).collect(), source: SequenceSource::Sdf }
}

/// Nearest opposite-road predecessor and successor of `id` in the sequence.
///
/// Returns `(ahead_candidate, behind_candidate)`: the opposite-road vehicle
/// crossing immediately before `id`, and the one crossing immediately after.
pub fn neighbors(
    seq: &MergeSequence,
    id: VehicleId,
    table: &VehicleTable,
) -> Result<(Option<VehicleId>, Option<VehicleId>), SequencingError> {
    let pos = seq
        .order
        .iter()
        .position(|&v| v == id)
        .ok_or(SequencingError::UnknownVehicle(id))?;
    let road = road_of(table, id)?;
    let mut ahead = None;
    for &other in seq.order[..pos].iter().rev() {
        if road_of(table, other)? != road {
            ahead = Some(other);
            break;
        }
    }
    let mut behind = None;
    for &other in &seq.order[pos + 1..] {
        if road_of(table, other)? != road {
            behind = Some(other);
            break;
        }
    }
    Ok((ahead, behind))
}

fn road_of(table: &VehicleTable, id: VehicleId) -> Result<RoadId, SequencingError> {
    table.get(id).map(|r| r.road).ok_or(SequencingError::UnknownVehicle(id))
}

/// Pair the vehicle with its nearest cross-road neighbors in the sequence.
/// The pairing is kept regardless of the current margins: a satisfied
/// spacing row is slack in the program, while dropping it would leave the
/// margin free to decay unguarded between evaluations.
pub fn merging_pair(
    cav: &VehicleRecord,
    ahead_candidate: Option<&VehicleRecord>,
    behind_candidate: Option<&VehicleRecord>,
    _cfg: &ScenarioConfig,
) -> Assignment {
    Assignment {
        cav: cav.id,
        ahead: ahead_candidate.map(|j| j.id),
        behind: behind_candidate.map(|j| j.id),
    }
}

/// Pairings of every automated vehicle in the sequence.
pub fn assignments_for_sequence(
    seq: &MergeSequence,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
) -> Result<Vec<Assignment>, SequencingError> {
    let mut out = Vec::new();
    for &id in &seq.order {
        let rec = table.get(id).ok_or(SequencingError::UnknownVehicle(id))?;
        if !rec.is_cav() {
            continue;
        }
        let (ahead, behind) = neighbors(seq, id, table)?;
        let ahead_rec = ahead.and_then(|j| table.get(j));
        let behind_rec = behind.and_then(|j| table.get(j));
        out.push(merging_pair(rec, ahead_rec, behind_rec, cfg));
    }
    Ok(out)
}

/// A sequence is safe when no automated vehicle is asked to hold a gap open
/// for a human-driven follower. A human follower whose spacing claim is
/// already met does not count: the vehicle ahead owes it nothing yet, and the
/// coordinator re-evaluates every step as the gap evolves.
pub fn is_safe(seq: &MergeSequence, table: &VehicleTable, cfg: &ScenarioConfig) -> bool {
    match assignments_for_sequence(seq, table, cfg) {
        Ok(assignments) => assignments.iter().all(|a| match a.behind {
            None => true,
            Some(j) => match (table.get(a.cav), table.get(j)) {
                (Some(cav), Some(f)) => {
                    f.is_cav()
                        || crate::barriers::merge_behind_value(&cav.state, &f.state, cfg) >= 0.0
                }
                _ => false,
            },
        }),
        Err(_) => false,
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    acc
}

fn interleavings(road1: &[VehicleId], road2: &[VehicleId]) -> Vec<Vec<VehicleId>> {
    fn recurse(
        r1: &[VehicleId],
        r2: &[VehicleId],
        prefix: &mut Vec<VehicleId>,
        out: &mut Vec<Vec<VehicleId>>,
    ) {
        if r1.is_empty() && r2.is_empty() {
            out.push(prefix.clone());
            return;
        }
        if let Some((&head, rest)) = r1.split_first() {
            prefix.push(head);
            recurse(rest, r2, prefix, out);
            prefix.pop();
        }
        if let Some((&head, rest)) = r2.split_first() {
            prefix.push(head);
            recurse(r1, rest, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    recurse(road1, road2, &mut Vec::new(), &mut out);
    out
}

/// All order-preserving interleavings of the two road streams that pass
/// [`is_safe`]. Above `cap` candidates, enumeration is skipped and the result
/// holds the constructive sequence (plus the baseline order when that is
/// already safe).
pub fn enumerate_safe_sequences(
    road1: &[VehicleId],
    road2: &[VehicleId],
    table: &VehicleTable,
    cfg: &ScenarioConfig,
    cap: u64,
) -> Vec<MergeSequence> {
    let candidates = binomial((road1.len() + road2.len()) as u64, road1.len() as u64);
    let records: Vec<&VehicleRecord> = road1
        .iter()
        .chain(road2)
        .filter_map(|&id| table.get(id))
        .collect();
    let s0 = sdf_sequence(&records);
    if candidates > cap {
        let mut out = Vec::new();
        if let Ok(built) = constructive_safe_sequence(&s0, table, cfg) {
            out.push(built);
        }
        if is_safe(&s0, table, cfg) && !out.contains(&s0) {
            out.push(s0);
        }
        return out;
    }
    interleavings(road1, road2)
        .into_iter()
        .map(|order| MergeSequence { order, source: SequenceSource::SafeGenerated })
        .filter(|seq| is_safe(seq, table, cfg))
        .collect()
}

/// Number of positions whose occupant differs between the two sequences.
pub fn disruption(s: &MergeSequence, s0: &MergeSequence) -> Result<usize, SequencingError> {
    if s.order.len() != s0.order.len() {
        return Err(SequencingError::LengthMismatch);
    }
    Ok(s.order.iter().zip(&s0.order).filter(|(a, b)| a != b).count())
}

/// Pick the least-disruptive safe sequence; break ties by shifting priority
/// toward the currently faster road, then lexicographically by id list.
pub fn select_optimal(
    safe_set: &[MergeSequence],
    s0: &MergeSequence,
    table: &VehicleTable,
) -> Result<MergeSequence, SequencingError> {
    if safe_set.is_empty() {
        return Err(SequencingError::EmptySafeSet);
    }
    let mut scored: Vec<(usize, &MergeSequence)> = Vec::with_capacity(safe_set.len());
    for seq in safe_set {
        scored.push((disruption(seq, s0)?, seq));
    }
    let min_d = scored.iter().map(|(d, _)| *d).min().expect("non-empty");
    let tied: Vec<&MergeSequence> =
        scored.into_iter().filter(|(d, _)| *d == min_d).map(|(_, s)| s).collect();
    if tied.len() == 1 {
        return Ok(tied[0].clone());
    }

    // Road preference: the faster road's vehicles should sit earlier, i.e.
    // have the smaller 1-based position sum.
    let mean_speed = |road: RoadId| {
        let speeds: Vec<f64> = s0
            .order
            .iter()
            .filter_map(|&id| table.get(id))
            .filter(|r| r.road == road)
            .map(|r| r.state.v)
            .collect();
        if speeds.is_empty() {
            0.0
        } else {
            speeds.iter().sum::<f64>() / speeds.len() as f64
        }
    };
    let main_not_slower = mean_speed(RoadId::Main) >= mean_speed(RoadId::Side);
    let position_balance = |seq: &MergeSequence| -> i64 {
        seq.order
            .iter()
            .enumerate()
            .filter_map(|(idx, &id)| table.get(id).map(|r| (idx, r.road)))
            .map(|(idx, road)| {
                let pos = (idx + 1) as i64;
                match road {
                    RoadId::Main => pos,
                    RoadId::Side => -pos,
                }
            })
            .sum()
    };
    let best = tied
        .into_iter()
        .map(|seq| {
            let balance = position_balance(seq);
            let key = if main_not_slower { balance } else { -balance };
            (key, seq)
        })
        .min_by(|(ka, sa), (kb, sb)| ka.cmp(kb).then_with(|| sa.order.cmp(&sb.order)))
        .map(|(_, seq)| seq)
        .expect("non-empty");
    Ok(best.clone())
}

/// Build a safe sequence directly: find the first automated vehicle `i`
/// overall, keep everything already ahead of it in place, then let the whole
/// remaining opposite-road stream cross before `i` and its own-road
/// followers. Every automated vehicle then either precedes only its own road
/// or is followed across roads by `i` itself.
pub fn constructive_safe_sequence(
    s0: &MergeSequence,
    table: &VehicleTable,
    cfg: &ScenarioConfig,
) -> Result<MergeSequence, SequencingError> {
    if is_safe(s0, table, cfg) {
        return Ok(s0.clone());
    }
    let first_cav_pos = s0
        .order
        .iter()
        .position(|&id| table.get(id).map_or(false, |r| r.is_cav()))
        .ok_or(SequencingError::NoCavInSz)?;
    let pivot = s0.order[first_cav_pos];
    let pivot_road = road_of(table, pivot)?;

    let mut order: Vec<VehicleId> = s0.order[..first_cav_pos].to_vec();
    let mut own_road_tail: Vec<VehicleId> = Vec::new();
    for &id in &s0.order[first_cav_pos + 1..] {
        if road_of(table, id)? == pivot_road {
            own_road_tail.push(id);
        } else {
            order.push(id);
        }
    }
    order.push(pivot);
    order.extend(own_road_tail);
    Ok(MergeSequence { order, source: SequenceSource::ConstructiveFallback })
}

/// One coordinator tick over the sequencing zone.
///
/// Keeps the shortest-distance-first order whenever it is already safe;
/// otherwise searches for the least-disruptive safe order and recomputes all
/// pairings from the chosen sequence.
pub fn coordinate(table: &VehicleTable, cfg: &ScenarioConfig) -> SequencingOutcome {
    coordinate_held(table, cfg, None)
}

/// Coordinator tick that holds the standing order while it applies.
///
/// The standing order is kept as long as it covers exactly the vehicles now
/// in the zone and remains safe; deriving from scratch every step would let
/// a marginal gap flip the order under vehicles mid-maneuver and back again
/// a moment later. Any entry, exit, or loss of safety triggers a fresh
/// derivation.
pub fn coordinate_held(
    table: &VehicleTable,
    cfg: &ScenarioConfig,
    previous: Option<&MergeSequence>,
) -> SequencingOutcome {
    let records = table.snapshot(Zone::Sz);
    if records.is_empty() {
        return SequencingOutcome::empty();
    }
    if let Some(prev) = previous {
        let held: std::collections::BTreeSet<VehicleId> = prev.order.iter().copied().collect();
        let now: std::collections::BTreeSet<VehicleId> = records.iter().map(|r| r.id).collect();
        if held == now && is_safe(prev, table, cfg) {
            let assignments =
                assignments_for_sequence(prev, table, cfg).expect("snapshot ids resolve");
            let resequenced = prev.order != sdf_sequence(&records).order;
            return SequencingOutcome { sequence: prev.clone(), assignments, resequenced };
        }
    }
    let s0 = sdf_sequence(&records);
    if is_safe(&s0, table, cfg) {
        let assignments =
            assignments_for_sequence(&s0, table, cfg).expect("snapshot ids resolve");
        return SequencingOutcome { sequence: s0, assignments, resequenced: false };
    }

    let road_ids = |road: RoadId| -> Vec<VehicleId> {
        s0.order
            .iter()
            .copied()
            .filter(|&id| table.get(id).map_or(false, |r| r.road == road))
            .collect()
    };
    let road1 = road_ids(RoadId::Main);
    let road2 = road_ids(RoadId::Side);
    let safe_set = enumerate_safe_sequences(&road1, &road2, table, cfg, cfg.enum_cap);
    let chosen = match select_optimal(&safe_set, &s0, table) {
        Ok(seq) => seq,
        // Unreachable while a CAV is present; keep the baseline order if not.
        Err(_) => s0.clone(),
    };
    let assignments =
        assignments_for_sequence(&chosen, table, cfg).expect("snapshot ids resolve");
    let resequenced = chosen.order != s0.order;
    SequencingOutcome { sequence: chosen, assignments, resequenced }
}

/// Per-road crossing order of the sequencing zone, outermost first.
pub fn road_streams(table: &VehicleTable) -> BTreeMap<RoadId, Vec<VehicleId>> {
    let mut map = BTreeMap::new();
    for road in [RoadId::Main, RoadId::Side] {
        map.insert(
            road,
            table.road_stream(Zone::Sz, road).iter().map(|r| r.id).collect(),
        );
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::VehicleRecord;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    fn cav(id: u64, road: RoadId, x: f64, v: f64) -> VehicleRecord {
        let mut rec = VehicleRecord::new_cav(VehicleId(id), road, x, v, 0.0);
        rec.zone = Zone::Sz;
        rec
    }

    fn hdv(id: u64, road: RoadId, x: f64, v: f64) -> VehicleRecord {
        let mut rec = VehicleRecord::new_hdv(
            VehicleId(id),
            road,
            x,
            v,
            0.0,
            crate::vehicle::HdvParams::car_following(v),
        );
        rec.zone = Zone::Sz;
        rec
    }

    fn table_of(records: Vec<VehicleRecord>) -> VehicleTable {
        let mut table = VehicleTable::new();
        for rec in records {
            table.insert(rec).unwrap();
        }
        table
    }

    fn ids(seq: &MergeSequence) -> Vec<u64> {
        seq.order.iter().map(|v| v.0).collect()
    }

    #[test]
    fn sdf_orders_by_remaining_distance() {
        let table = table_of(vec![
            cav(1, RoadId::Main, 350.0, 20.0),
            cav(2, RoadId::Side, 300.0, 20.0),
            cav(3, RoadId::Main, 250.0, 20.0),
        ]);
        let seq = sdf_sequence(&table.snapshot(Zone::Sz));
        assert_eq!(ids(&seq), vec![1, 2, 3]);
    }

    #[test]
    fn sdf_tie_prefers_main_road_then_id() {
        let table = table_of(vec![
            cav(9, RoadId::Side, 200.0, 20.0),
            cav(4, RoadId::Main, 200.0, 20.0),
            cav(2, RoadId::Main, 200.0, 20.0),
        ]);
        let seq = sdf_sequence(&table.snapshot(Zone::Sz));
        assert_eq!(ids(&seq), vec![2, 4, 9]);
    }

    #[test]
    fn neighbors_find_nearest_opposite_road_entries() {
        // Alternating roads, ids 1..7 front to back.
        let recs: Vec<VehicleRecord> = (1..=7)
            .map(|i| {
                let road = if i % 2 == 1 { RoadId::Main } else { RoadId::Side };
                cav(i, road, 400.0 - 20.0 * i as f64, 20.0)
            })
            .collect();
        let table = table_of(recs);
        let seq = sdf_sequence(&table.snapshot(Zone::Sz));
        assert_eq!(ids(&seq), vec![1, 2, 3, 4, 5, 6, 7]);
        let (ahead, behind) = neighbors(&seq, VehicleId(4), &table).unwrap();
        assert_eq!(ahead, Some(VehicleId(3)));
        assert_eq!(behind, Some(VehicleId(5)));
        // Front vehicle has no predecessor at all.
        let (ahead, _) = neighbors(&seq, VehicleId(1), &table).unwrap();
        assert_eq!(ahead, None);
        // Last vehicle has no successor.
        let (_, behind) = neighbors(&seq, VehicleId(7), &table).unwrap();
        assert_eq!(behind, None);
        let err = neighbors(&seq, VehicleId(99), &table).unwrap_err();
        assert_eq!(err, SequencingError::UnknownVehicle(VehicleId(99)));
    }

    #[test]
    fn neighbors_empty_for_single_road_traffic() {
        let table = table_of(vec![
            cav(1, RoadId::Main, 300.0, 20.0),
            cav(2, RoadId::Main, 250.0, 20.0),
        ]);
        let seq = sdf_sequence(&table.snapshot(Zone::Sz));
        let (ahead, behind) = neighbors(&seq, VehicleId(1), &table).unwrap();
        assert_eq!((ahead, behind), (None, None));
    }

    #[test]
    fn merging_pair_keeps_cross_road_neighbors() {
        let cfg = cfg();
        let me = cav(1, RoadId::Main, 200.0, 20.0);
        // The pairing survives whether or not the margin currently binds.
        let slack = cav(2, RoadId::Side, 150.0, 20.0);
        let a = merging_pair(&me, None, Some(&slack), &cfg);
        assert_eq!(a.behind, Some(VehicleId(2)));
        let closing = cav(3, RoadId::Side, 150.0, 80.0);
        let a = merging_pair(&me, None, Some(&closing), &cfg);
        assert_eq!(a.behind, Some(VehicleId(3)));
        let a = merging_pair(&me, None, None, &cfg);
        assert_eq!((a.ahead, a.behind), (None, None));
    }

    #[test]
    fn safety_requires_automated_followers_only() {
        let cfg = cfg();
        // HDV 2 close behind CAV 1 across roads: unsafe under SDF.
        let table = table_of(vec![
            cav(1, RoadId::Main, 200.0, 20.0),
            hdv(2, RoadId::Side, 190.0, 25.0),
        ]);
        let seq = sdf_sequence(&table.snapshot(Zone::Sz));
        assert!(!is_safe(&seq, &table, &cfg));
        // Same layout with an automated follower is fine.
        let table = table_of(vec![
            cav(1, RoadId::Main, 200.0, 20.0),
            cav(2, RoadId::Side, 190.0, 25.0),
        ]);
        let seq = sdf_sequence(&table.snapshot(Zone::Sz));
        assert!(is_safe(&seq, &table, &cfg));
    }

    #[test]
    fn enumeration_counts_interleavings() {
        let r1 = vec![VehicleId(1), VehicleId(2)];
        let r2 = vec![VehicleId(3), VehicleId(4)];
        assert_eq!(interleavings(&r1, &r2).len(), 6);
        for order in interleavings(&r1, &r2) {
            let p1 = order.iter().position(|&v| v == VehicleId(1)).unwrap();
            let p2 = order.iter().position(|&v| v == VehicleId(2)).unwrap();
            assert!(p1 < p2, "within-road order must be preserved");
        }
    }

    #[test]
    fn all_cav_traffic_keeps_every_interleaving() {
        let cfg = cfg();
        let table = table_of(vec![
            cav(1, RoadId::Main, 300.0, 20.0),
            cav(2, RoadId::Main, 250.0, 20.0),
            cav(3, RoadId::Side, 290.0, 20.0),
            cav(4, RoadId::Side, 240.0, 20.0),
        ]);
        let safe = enumerate_safe_sequences(
            &[VehicleId(1), VehicleId(2)],
            &[VehicleId(3), VehicleId(4)],
            &table,
            &cfg,
            5000,
        );
        assert_eq!(safe.len(), 6);
    }

    #[test]
    fn disruption_counts_differing_positions() {
        let a = MergeSequence {
            order: vec![3, 4, 5, 6, 7].into_iter().map(VehicleId).collect(),
            source: SequenceSource::Sdf,
        };
        let b = MergeSequence {
            order: vec![3, 5, 6, 4, 7].into_iter().map(VehicleId).collect(),
            source: SequenceSource::SafeGenerated,
        };
        assert_eq!(disruption(&a, &a).unwrap(), 0);
        assert_eq!(disruption(&b, &a).unwrap(), 3);
        let two = MergeSequence {
            order: vec![VehicleId(1), VehicleId(2)],
            source: SequenceSource::Sdf,
        };
        let swapped = MergeSequence {
            order: vec![VehicleId(2), VehicleId(1)],
            source: SequenceSource::Sdf,
        };
        assert_eq!(disruption(&swapped, &two).unwrap(), 2);
        let short = MergeSequence { order: vec![VehicleId(1)], source: SequenceSource::Sdf };
        assert_eq!(disruption(&short, &two).unwrap_err(), SequencingError::LengthMismatch);
    }

    #[test]
    fn select_optimal_prefers_least_disruption() {
        let table = table_of(vec![
            cav(1, RoadId::Main, 300.0, 20.0),
            cav(2, RoadId::Side, 290.0, 20.0),
            cav(3, RoadId::Main, 280.0, 20.0),
        ]);
        let s0 = sdf_sequence(&table.snapshot(Zone::Sz));
        let d1 = MergeSequence {
            order: vec![VehicleId(1), VehicleId(3), VehicleId(2)],
            source: SequenceSource::SafeGenerated,
        };
        let d3 = MergeSequence {
            order: vec![VehicleId(2), VehicleId(1), VehicleId(3)],
            source: SequenceSource::SafeGenerated,
        };
        let best = select_optimal(&[d3, d1.clone()], &s0, &table).unwrap();
        assert_eq!(best, d1);
        assert_eq!(
            select_optimal(&[], &s0, &table).unwrap_err(),
            SequencingError::EmptySafeSet
        );
    }

    #[test]
    fn select_optimal_tie_break_prefers_faster_road_up_front() {
        let layout = |v_main: f64| {
            table_of(vec![
                cav(1, RoadId::Main, 300.0, v_main),
                cav(2, RoadId::Side, 300.0, 20.0),
                cav(3, RoadId::Main, 200.0, v_main),
            ])
        };
        let a = MergeSequence {
            order: vec![VehicleId(2), VehicleId(1), VehicleId(3)],
            source: SequenceSource::SafeGenerated,
        };
        let b = MergeSequence {
            order: vec![VehicleId(1), VehicleId(3), VehicleId(2)],
            source: SequenceSource::SafeGenerated,
        };

        // Main road faster: pick the candidate placing main-road vehicles
        // earlier (smaller position sum).
        let table = layout(25.0);
        let s0 = sdf_sequence(&table.snapshot(Zone::Sz));
        assert_eq!(ids(&s0), vec![1, 2, 3]);
        assert_eq!(disruption(&a, &s0).unwrap(), 2);
        assert_eq!(disruption(&b, &s0).unwrap(), 2);
        let best = select_optimal(&[a.clone(), b.clone()], &s0, &table).unwrap();
        assert_eq!(best, b);

        // Side road faster: the other candidate wins.
        let table = layout(15.0);
        let best = select_optimal(&[a.clone(), b], &s0, &table).unwrap();
        assert_eq!(best, a);
    }

    #[test]
    fn constructive_sequence_is_safe_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let cfg = cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..300 {
            let n = rng.gen_range(1..=9);
            let mut recs = Vec::new();
            let mut has_cav = false;
            let mut next_x = [400.0, 400.0];
            for i in 0..n {
                let road = if rng.gen_bool(0.5) { RoadId::Main } else { RoadId::Side };
                let slot = if road == RoadId::Main { 0 } else { 1 };
                next_x[slot] -= rng.gen_range(8.0..60.0);
                let v = rng.gen_range(5.0..29.0);
                if rng.gen_bool(0.5) {
                    has_cav = true;
                    recs.push(cav(i + 1, road, next_x[slot], v));
                } else {
                    recs.push(hdv(i + 1, road, next_x[slot], v));
                }
            }
            if !has_cav {
                continue;
            }
            let table = table_of(recs);
            let s0 = sdf_sequence(&table.snapshot(Zone::Sz));
            let built = constructive_safe_sequence(&s0, &table, &cfg).unwrap();
            assert!(is_safe(&built, &table, &cfg), "case {case} produced unsafe sequence");
            // Within-road order must be preserved.
            for road in [RoadId::Main, RoadId::Side] {
                let in_s0: Vec<VehicleId> = s0
                    .order
                    .iter()
                    .copied()
                    .filter(|&id| table.get(id).unwrap().road == road)
                    .collect();
                let in_built: Vec<VehicleId> = built
                    .order
                    .iter()
                    .copied()
                    .filter(|&id| table.get(id).unwrap().road == road)
                    .collect();
                assert_eq!(in_s0, in_built, "case {case} broke within-road order");
            }
        }
    }

    #[test]
    fn constructive_sequence_errors_without_cavs() {
        let cfg = cfg();
        let table = table_of(vec![
            hdv(1, RoadId::Main, 300.0, 20.0),
            hdv(2, RoadId::Side, 295.0, 28.0),
        ]);
        let s0 = sdf_sequence(&table.snapshot(Zone::Sz));
        if !is_safe(&s0, &table, &cfg) {
            let err = constructive_safe_sequence(&s0, &table, &cfg).unwrap_err();
            assert_eq!(err, SequencingError::NoCavInSz);
        }
    }

    #[test]
    fn coordinate_keeps_safe_baseline() {
        let cfg = cfg();
        let table = table_of(vec![
            cav(1, RoadId::Main, 320.0, 20.0),
            cav(2, RoadId::Side, 250.0, 20.0),
            cav(3, RoadId::Main, 180.0, 20.0),
        ]);
        let out = coordinate(&table, &cfg);
        assert!(!out.resequenced);
        assert_eq!(ids(&out.sequence), vec![1, 2, 3]);
        assert_eq!(out.assignments.len(), 3);
    }

    #[test]
    fn coordinate_on_empty_zone_is_empty() {
        let out = coordinate(&VehicleTable::new(), &cfg());
        assert!(out.sequence.is_empty());
        assert!(out.assignments.is_empty());
        assert!(!out.resequenced);
    }

    #[test]
    fn coordinate_resequences_around_human_followers() {
        let cfg = cfg();
        // Three automated vehicles (3, 4, 6) and two aggressive human-driven
        // ones (5, 7); under shortest-distance-first both 4 and 6 would have
        // to hold gaps for human followers.
        let table = table_of(vec![
            cav(3, RoadId::Side, 162.0, 20.0),
            cav(4, RoadId::Side, 120.0, 20.0),
            hdv(5, RoadId::Main, 106.0, 24.0),
            cav(6, RoadId::Main, 66.0, 20.0),
            hdv(7, RoadId::Side, 58.0, 24.0),
        ]);
        let s0 = sdf_sequence(&table.snapshot(Zone::Sz));
        assert_eq!(ids(&s0), vec![3, 4, 5, 6, 7]);
        assert!(!is_safe(&s0, &table, &cfg));

        let out = coordinate(&table, &cfg);
        assert!(out.resequenced);
        assert_eq!(ids(&out.sequence), vec![3, 5, 6, 4, 7]);
        assert_eq!(disruption(&out.sequence, &s0).unwrap(), 3);
        // CAV 4 now merges behind 6; its follower 7 is beyond threshold.
        let a4 = out.assignment_for(VehicleId(4)).unwrap();
        assert_eq!(a4.ahead, Some(VehicleId(6)));
    }

    #[test]
    fn capped_enumeration_falls_back_to_construction() {
        let cfg = cfg();
        let mut recs = Vec::new();
        // 12 vehicles per road exceeds any small cap.
        for i in 0..12 {
            recs.push(cav(i + 1, RoadId::Main, 390.0 - 30.0 * i as f64, 20.0));
            recs.push(hdv(i + 20, RoadId::Side, 380.0 - 30.0 * i as f64, 26.0));
        }
        let table = table_of(recs);
        let s0 = sdf_sequence(&table.snapshot(Zone::Sz));
        let road1: Vec<VehicleId> =
            s0.order.iter().copied().filter(|&id| table.get(id).unwrap().road == RoadId::Main).collect();
        let road2: Vec<VehicleId> =
            s0.order.iter().copied().filter(|&id| table.get(id).unwrap().road == RoadId::Side).collect();
        let safe = enumerate_safe_sequences(&road1, &road2, &table, &cfg, 100);
        assert!(!safe.is_empty());
        assert!(safe.iter().any(|s| s.source == SequenceSource::ConstructiveFallback));
        for seq in &safe {
            assert!(is_safe(seq, &table, &cfg));
        }
    }
}
