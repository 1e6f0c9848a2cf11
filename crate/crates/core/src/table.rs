//! The coordinator's vehicle table: every vehicle currently tracked, with
//! deterministic snapshot ordering by remaining distance to the merge.

use crate::vehicle::{RoadId, VehicleClass, VehicleId, VehicleRecord, Zone};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("vehicle {0} is already tracked")]
    DuplicateId(VehicleId),
    #[error("vehicle {0} is not tracked")]
    UnknownId(VehicleId),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VehicleTable {
    vehicles: BTreeMap<VehicleId, VehicleRecord>,
}

impl VehicleTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rec: VehicleRecord) -> Result<(), TableError> {
        if self.vehicles.contains_key(&rec.id) {
            return Err(TableError::DuplicateId(rec.id));
        }
        self.vehicles.insert(rec.id, rec);
        Ok(())
    }

    pub fn remove(&mut self, id: VehicleId) -> Result<VehicleRecord, TableError> {
        self.vehicles.remove(&id).ok_or(TableError::UnknownId(id))
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleRecord> {
        self.vehicles.get(&id)
    }

    pub fn get_mut(&mut self, id: VehicleId) -> Option<&mut VehicleRecord> {
        self.vehicles.get_mut(&id)
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Iterate in id order (insertion order, since ids are monotone).
    pub fn iter(&self) -> impl Iterator<Item = &VehicleRecord> {
        self.vehicles.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut VehicleRecord> {
        self.vehicles.values_mut()
    }

    pub fn ids(&self) -> Vec<VehicleId> {
        self.vehicles.keys().copied().collect()
    }

    /// Vehicles carrying the given zone label, ordered by remaining distance
    /// to the merging point (closest first); ties break by road then id.
    ///
    /// Ordering compares positions directly because both roads share the same
    /// length, so larger `x` always means less distance left.
    pub fn snapshot(&self, zone: Zone) -> Vec<&VehicleRecord> {
        let mut out: Vec<&VehicleRecord> =
            self.vehicles.values().filter(|r| r.zone == zone).collect();
        sort_by_remaining_distance(&mut out);
        out
    }

    /// All vehicles not yet past the merge, in crossing order.
    pub fn snapshot_active(&self) -> Vec<&VehicleRecord> {
        let mut out: Vec<&VehicleRecord> = self
            .vehicles
            .values()
            .filter(|r| r.zone != Zone::Exited)
            .collect();
        sort_by_remaining_distance(&mut out);
        out
    }

    /// Same-zone snapshot restricted to one road, in position order
    /// (closest to the merge first).
    pub fn road_stream(&self, zone: Zone, road: RoadId) -> Vec<&VehicleRecord> {
        let mut out: Vec<&VehicleRecord> = self
            .vehicles
            .values()
            .filter(|r| r.zone == zone && r.road == road)
            .collect();
        sort_by_remaining_distance(&mut out);
        out
    }

    /// Nearest vehicle ahead of `rec` on the same road, any zone. Used for
    /// rear-end separation, so recently exited vehicles still count.
    pub fn predecessor_same_road(&self, rec: &VehicleRecord) -> Option<&VehicleRecord> {
        self.vehicles
            .values()
            .filter(|r| r.road == rec.road && r.id != rec.id && r.state.x > rec.state.x)
            .min_by(|a, b| a.state.x.partial_cmp(&b.state.x).unwrap().then(a.id.cmp(&b.id)))
    }

    /// Nearest vehicle ahead of `rec` on the opposite road (less distance
    /// remaining), any zone.
    pub fn opposite_ahead(&self, rec: &VehicleRecord) -> Option<&VehicleRecord> {
        self.vehicles
            .values()
            .filter(|r| r.road == rec.road.other() && r.state.x > rec.state.x)
            .min_by(|a, b| a.state.x.partial_cmp(&b.state.x).unwrap().then(a.id.cmp(&b.id)))
    }

    /// Nearest not-yet-exited vehicle behind `rec` on the opposite road.
    pub fn opposite_behind(&self, rec: &VehicleRecord) -> Option<&VehicleRecord> {
        self.vehicles
            .values()
            .filter(|r| {
                r.road == rec.road.other() && r.zone != Zone::Exited && r.state.x <= rec.state.x
                    && r.id != rec.id
            })
            .max_by(|a, b| a.state.x.partial_cmp(&b.state.x).unwrap().then(b.id.cmp(&a.id)))
    }

    pub fn count_class(&self, class: VehicleClass) -> usize {
        self.vehicles.values().filter(|r| r.class == class).count()
    }
}

fn sort_by_remaining_distance(records: &mut [&VehicleRecord]) {
    records.sort_by(|a, b| {
        b.state
            .x
            .partial_cmp(&a.state.x)
            .unwrap()
            .then(a.road.index().cmp(&b.road.index()))
            .then(a.id.cmp(&b.id))
    });
}
