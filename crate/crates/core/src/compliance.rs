//! Sanitization dwell-time accounting with hand-presence gating.
//!
//! Dwell accrues for a track between consecutive steps in which it is
//! active, and only while no hand is present. A hand event closes the
//! running accrual at the event time, and accrual resumes from the moment the
//! hand leaves. A track becomes READY at the exact instant its accumulated
//! dwell reaches the required dwell and stays READY for the rest of its
//! lifetime.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Sanitizing,
    Ready,
}

impl Status {
    /// Box colour shown to operators.
    pub fn color(self) -> &'static str {
        match self {
            Status::Sanitizing => "red",
            Status::Ready => "green",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEvent {
    pub timestamp: f64,
    pub present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceConfig {
    /// Seconds of ungated presence before a knife counts as sanitized.
    pub required_dwell: f64,
}

impl Default for ComplianceConfig {
    fn default() -> Self {
        Self { required_dwell: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRecord {
    pub id: u64,
    pub dwell: f64,
    pub status: Status,
    pub first_seen: f64,
    pub last_seen: f64,
    pub ready_at: Option<f64>,
    /// Closed intervals during which the track was continuously active.
    pub presence: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusChange {
    pub t: f64,
    pub id: u64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub required_dwell: f64,
    pub records: Vec<ComplianceRecord>,
}

#[derive(Debug, Clone)]
pub struct ComplianceEngine {
    config: ComplianceConfig,
    gated: bool,
    last_time: Option<f64>,
    /// Start of the current accrual window for tracks in `active`.
    accrue_from: f64,
    active: BTreeSet<u64>,
    records: BTreeMap<u64, ComplianceRecord>,
}

impl ComplianceEngine {
    pub fn new(config: ComplianceConfig) -> Result<Self> {
        if !(config.required_dwell > 0.0 && config.required_dwell.is_finite()) {
            return Err(param("required dwell must be > 0"));
        }
        Ok(Self {
            config,
            gated: false,
            last_time: None,
            accrue_from: 0.0,
            active: BTreeSet::new(),
            records: BTreeMap::new(),
        })
    }

    pub fn is_gated(&self) -> bool {
        self.gated
    }

    pub fn record(&self, id: u64) -> Option<&ComplianceRecord> {
        self.records.get(&id)
    }

    fn check_order(&mut self, t: f64) -> Result<()> {
        if let Some(prev) = self.last_time {
            if !(t >= prev) {
                return Err(Error::Ordering { previous: prev, got: t });
            }
        }
        self.last_time = Some(t);
        Ok(())
    }

    /// Adds `until - accrue_from` to every active track.
    fn accrue(&mut self, until: f64, changes: &mut Vec<StatusChange>) {
        let dt = until - self.accrue_from;
        let required = self.config.required_dwell;
        for id in &self.active {
            let Some(rec) = self.records.get_mut(id) else { continue };
            let before = rec.dwell;
            rec.dwell += dt;
            rec.last_seen = rec.last_seen.max(until);
            if let Some(last) = rec.presence.last_mut() {
                last[1] = last[1].max(until);
            }
            if rec.status == Status::Sanitizing && rec.dwell >= required {
                let t = self.accrue_from + (required - before);
                rec.status = Status::Ready;
                rec.ready_at = Some(t);
                changes.push(StatusChange { t, id: *id, status: Status::Ready });
            }
        }
        self.accrue_from = until;
    }

    /// Applies a hand-presence event; returns status changes caused by
    /// closing the accrual window at the event time.
    pub fn on_hand_event(&mut self, event: HandEvent) -> Result<Vec<StatusChange>> {
        self.check_order(event.timestamp)?;
        let mut changes = Vec::new();
        match (self.gated, event.present) {
            (false, true) => {
                self.accrue(event.timestamp, &mut changes);
                self.gated = true;
            }
            (true, false) => {
                self.gated = false;
                self.accrue_from = event.timestamp;
            }
            _ => {}
        }
        Ok(changes)
    }

    /// Advances to `timestamp` with the set of currently active track ids.
    pub fn step(&mut self, active: &[u64], timestamp: f64) -> Result<Vec<StatusChange>> {
        self.check_order(timestamp)?;
        let now: BTreeSet<u64> = active.iter().copied().collect();
        let mut changes = Vec::new();
        if !self.gated {
            // Only tracks active at both ends of the window accrue.
            self.active.retain(|id| now.contains(id));
            self.accrue(timestamp, &mut changes);
        }
        for &id in &now {
            let continuing = self.active.contains(&id);
            let rec = self.records.entry(id).or_insert_with(|| ComplianceRecord {
                id,
                dwell: 0.0,
                status: Status::Sanitizing,
                first_seen: timestamp,
                last_seen: timestamp,
                ready_at: None,
                presence: Vec::new(),
            });
            rec.last_seen = rec.last_seen.max(timestamp);
            match rec.presence.last_mut() {
                Some(last) if continuing => last[1] = timestamp,
                _ => rec.presence.push([timestamp, timestamp]),
            }
        }
        self.active = now;
        if !self.gated {
            self.accrue_from = timestamp;
        }
        Ok(changes)
    }

    /// Records for the given ids, in id order; unknown ids are skipped.
    pub fn records_for(&self, ids: &[u64]) -> Vec<ComplianceRecord> {
        ids.iter().filter_map(|id| self.records.get(id).cloned()).collect()
    }

    /// Every record seen so far, active or expired.
    pub fn report(&self) -> ComplianceReport {
        ComplianceReport {
            required_dwell: self.config.required_dwell,
            records: self.records.values().cloned().collect(),
        }
    }
}
