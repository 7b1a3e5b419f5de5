//! Batch measurement scripts for `fieldwork measure`.
//!
//! ```json
//! {
//!   "markers": [{"surface": {"lat_deg": 36.4, "lon_deg": 25.39}}, ...],
//!   "measurements": [{"type": "distance", "marker_ids": [1, 2]}, ...]
//! }
//! ```
//!
//! Markers get ids 1, 2, ... in script order.

use fieldwork_core::measure::MarkerId;
use fieldwork_core::scene::TerrainScene;
use fieldwork_core::session::{MeasurementKind, Session, SessionDocument};
use fieldwork_core::Error;
use serde::{Deserialize, Serialize};

use crate::api::MarkerRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub markers: Vec<MarkerRequest>,
    #[serde(default)]
    pub measurements: Vec<MeasurementSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    #[serde(rename = "type")]
    pub kind: MeasurementKind,
    pub marker_ids: Vec<MarkerId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptError {
    /// Which step failed, e.g. `markers[2]`.
    pub step: String,
    pub error: Error,
}

impl std::fmt::Display for ScriptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} ({})", self.step, self.error, self.error.code())
    }
}

impl std::error::Error for ScriptError {}

/// Applies `script` to `session` in order and stops at the first failure.
pub fn run_script(
    script: &Script,
    scene: &TerrainScene,
    session: &mut Session,
) -> Result<SessionDocument, ScriptError> {
    for (i, m) in script.markers.iter().enumerate() {
        m.place(scene, session).map_err(|error| ScriptError { step: format!("markers[{i}]"), error })?;
    }
    for (i, spec) in script.measurements.iter().enumerate() {
        let ids = &spec.marker_ids;
        let r = match spec.kind {
            MeasurementKind::Distance => session.measure_distance(ids).map(drop),
            MeasurementKind::StrikeDip => session.measure_strike_dip(ids).map(drop),
            MeasurementKind::ClipBox => session.measure_clip_box(ids, scene).map(drop),
        };
        r.map_err(|e| ScriptError { step: format!("measurements[{i}]"), error: e.into() })?;
    }
    Ok(session.to_document())
}
