//! Session mutation events, pushed to clients over server-sent events.

use fieldwork_core::scene::TilesetId;
use fieldwork_core::session::{MarkerRecord, MeasurementRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    TilesetRegistered {
        tileset_id: TilesetId,
        uri: String,
    },
    MarkerAdded {
        marker: MarkerRecord,
    },
    MarkerUpdated {
        marker: MarkerRecord,
    },
    MeasurementAdded {
        measurement: MeasurementRecord,
    },
    /// The whole session was replaced by an import; clients should refetch
    /// `GET /session`.
    SessionReplaced {
        markers: usize,
        measurements: usize,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TilesetRegistered { .. } => "tileset_registered",
            EventKind::MarkerAdded { .. } => "marker_added",
            EventKind::MarkerUpdated { .. } => "marker_updated",
            EventKind::MeasurementAdded { .. } => "measurement_added",
            EventKind::SessionReplaced { .. } => "session_replaced",
        }
    }
}

/// One applied mutation. `seq` counts from 1 per session and is also the
/// SSE event id, so clients can resume with `Last-Event-ID`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Splits a raw `text/event-stream` buffer into complete events, returning
/// the parsed `data` payloads and leaving any partial event in `buf`.
/// Comment and keep-alive lines are skipped.
pub fn drain_sse_frames(buf: &mut String) -> Vec<String> {
    let mut out = Vec::new();
    while let Some(end) = buf.find("\n\n") {
        let frame: String = buf.drain(..end + 2).collect();
        let data: Vec<&str> =
            frame.lines().filter_map(|l| l.strip_prefix("data:")).map(|d| d.strip_prefix(' ').unwrap_or(d)).collect();
        if !data.is_empty() {
            out.push(data.join("\n"));
        }
    }
    out
}
