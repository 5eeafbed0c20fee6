//! Request and response bodies of the session service (`/v1`).
//!
//! Every session-scoped response carries `generation`, the counter clients echo
//! back on mutating requests; a stale counter is answered with `409 Conflict`.
//! Unknown fields are ignored on both sides, so additive changes keep version 1.

use serde::{Deserialize, Serialize};

use hetswarm::hil::{
    GridSlot, Protocol, Query, SavedBehavior, SessionConfig, SessionStatus,
};
use hetswarm::{Genome, SimConfig, Trajectory};

pub const API_VERSION: u32 = 1;

/// Header mirroring the session generation on non-JSON responses (PNG,
/// JSON Lines).
pub const GENERATION_HEADER: &str = "x-hetswarm-generation";

fn api_version() -> u32 {
    API_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub status: String,
    pub sessions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub protocol: Protocol,
    pub seed: u64,
    /// Full configuration; `protocol` and `seed` above take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SessionConfig>,
    /// Client-chosen id; the server generates one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl CreateSession {
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        CreateSession {
            protocol,
            seed,
            config: None,
            session_id: None,
        }
    }

    pub fn resolved_config(&self) -> SessionConfig {
        let mut c = self.config.clone().unwrap_or_default();
        c.protocol = self.protocol;
        c.seed = self.seed;
        c
    }
}

/// A pending HIL-NS query with the URL of its thumbnail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    #[serde(flatten)]
    pub query: Query,
    pub thumbnail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    #[serde(flatten)]
    pub slot: GridSlot,
    pub thumbnail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub session_id: String,
    pub protocol: Protocol,
    pub status: SessionStatus,
    pub generation: usize,
    pub max_generations: usize,
    pub seed: u64,
    pub saved: Vec<SavedBehavior>,
    /// HIL-NS only, while awaiting the human.
    #[serde(default)]
    pub queries: Vec<QueryView>,
    /// Swarm Chemistry only.
    #[serde(default)]
    pub grid: Vec<SlotView>,
    pub event_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub protocol: Protocol,
    pub status: SessionStatus,
    pub generation: usize,
    pub saved: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionList {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub sessions: Vec<SessionSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueriesResponse {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub session_id: String,
    pub generation: usize,
    pub queries: Vec<QueryView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResponse {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub session_id: String,
    pub generation: usize,
    pub grid: Vec<SlotView>,
}

/// HIL-NS answer: indices (into the pending queries) of behaviors to save.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilnsResponseBody {
    pub generation: usize,
    #[serde(default)]
    pub saved: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionBody {
    pub generation: usize,
    pub selected: Vec<usize>,
    #[serde(default)]
    pub saved: Vec<usize>,
}

/// Sets the label of saved behavior `index`; an empty label clears it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBody {
    pub index: usize,
    pub label: String,
    /// Optional concurrency check; labels do not advance the generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinishBody {
    pub generation: usize,
    #[serde(default)]
    pub saved: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveInfo {
    pub name: String,
    pub bytes: u64,
    pub entries: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveList {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub archives: Vec<ArchiveInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub error: ErrorDetail,
    /// Current session generation, present on conflicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<usize>,
}

/// Replay request. `sim` defaults to [`SimConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub genome: Genome,
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
}

fn default_stride() -> usize {
    1
}

/// First message of a replay stream (SSE event `meta`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayMeta {
    #[serde(default = "api_version")]
    pub api_version: u32,
    pub genome: Genome,
    pub seed: u64,
    pub stride: usize,
    pub sim: SimConfig,
    /// Number of `frame` events that follow.
    pub frames: usize,
}

/// One streamed frame (SSE event `frame`): poses as `[x, y, theta]`, types as
/// a string of `A`/`B`, both in agent order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub t: usize,
    pub poses: Vec<[f64; 3]>,
    pub types: String,
}

/// Final message of a replay stream (SSE event `done`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayDone {
    pub frames: usize,
}

/// Frame indices streamed for a trajectory of `len` frames: every `stride`-th
/// frame from 0, plus the final frame. `stride = len` gives initial and final.
pub fn replay_indices(len: usize, stride: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let stride = stride.max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().expect("len > 0") != len - 1 {
        idx.push(len - 1);
    }
    idx
}

pub fn replay_frames(traj: &Trajectory, stride: usize) -> Vec<ReplayFrame> {
    let types: String = traj.types().map(|k| k.as_char()).collect();
    replay_indices(traj.len(), stride)
        .into_iter()
        .map(|t| ReplayFrame {
            t,
            poses: traj.frame(t).iter().map(|s| [s.x, s.y, s.theta]).collect(),
            types: types.clone(),
        })
        .collect()
}
