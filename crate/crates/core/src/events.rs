//! Per-trial event log, written as newline-delimited JSON.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::engage::EngagementRecord;
use crate::galvo::GalvoCommand;
use crate::perception::{TrackId, TruthLink};
use crate::time::SimTime;
use crate::world::{PestId, Species};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TrialStart {
        seed: u64,
        n_pests: u32,
        n_clutter: u32,
        duration: SimTime,
        distance_m: f64,
        speed_mm_s: f64,
    },
    Detection {
        t_captured: SimTime,
        t_available: SimTime,
        species: Species,
        truth: TruthLink,
    },
    DetectionsDropped {
        t: SimTime,
        count: usize,
    },
    GalvoCommand(GalvoCommand),
    Engagement(EngagementRecord),
    Neutralized {
        t: SimTime,
        pest: PestId,
        track: TrackId,
    },
    PestFinal {
        pest: PestId,
        species: Species,
        alive: bool,
        absorbed_energy_j: f64,
        kill_energy_j: f64,
    },
    TrialEnd {
        t: SimTime,
    },
}

pub fn write_ndjson(events: &[Event], mut out: impl Write) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads a log back; blank lines are skipped. Errors carry the 1-based line number.
pub fn read_ndjson(input: impl BufRead) -> Result<Vec<Event>, (usize, String)> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(events)
}
