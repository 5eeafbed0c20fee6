//! Thin async client for the session service's `/v1` API.

use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use hetswarm::archive::Archive;
use hetswarm::hil::{HilSession, LogRecord};
use hetswarm::taxonomy::Taxonomy;
use hetswarm::Representation;
use hetswarm_api::{
    ArchiveList, CreateSession, ErrorBody, FinishBody, GridResponse, Health, HilnsResponseBody,
    LabelBody, QueriesResponse, ReplayDone, ReplayFrame, ReplayMeta, ReplayRequest, SelectionBody,
    SessionList, SessionState, GENERATION_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status}: {} ({})", body.error.message, body.error.code)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] hetswarm::Error),
}

impl ClientError {
    /// True for `409 Conflict` (stale generation, finished session).
    pub fn is_conflict(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if *status == StatusCode::CONFLICT)
    }

    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Http(e) => e.status(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// A fully received replay stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub meta: ReplayMeta,
    pub frames: Vec<ReplayFrame>,
    pub done: ReplayDone,
}

/// A non-JSON body together with the session generation header, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Versioned<T> {
    pub value: T,
    pub generation: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    async fn send(&self, req: RequestBuilder) -> Result<reqwest::Response> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Protocol(format!("{status}: {text}"))),
        }
    }

    async fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Ok(self.send(self.request(Method::GET, path)).await?.json().await?)
    }

    async fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Ok(self
            .send(self.request(Method::POST, path).json(body))
            .await?
            .json()
            .await?)
    }

    async fn get_bytes(&self, path: &str) -> Result<Versioned<Vec<u8>>> {
        let resp = self.send(self.request(Method::GET, path)).await?;
        let generation = resp
            .headers()
            .get(GENERATION_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok());
        Ok(Versioned {
            value: resp.bytes().await?.to_vec(),
            generation,
        })
    }

    pub async fn health(&self) -> Result<Health> {
        self.get_json("/v1/health").await
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionState> {
        self.post_json("/v1/sessions", req).await
    }

    pub async fn sessions(&self) -> Result<SessionList> {
        self.get_json("/v1/sessions").await
    }

    pub async fn session(&self, id: &str) -> Result<SessionState> {
        self.get_json(&format!("/v1/sessions/{id}")).await
    }

    pub async fn queries(&self, id: &str) -> Result<QueriesResponse> {
        self.get_json(&format!("/v1/sessions/{id}/queries")).await
    }

    pub async fn grid(&self, id: &str) -> Result<GridResponse> {
        self.get_json(&format!("/v1/sessions/{id}/grid")).await
    }

    /// PNG bytes of a query (HIL-NS) or grid slot (chemistry).
    pub async fn thumbnail(
        &self,
        id: &str,
        index: usize,
        mode: Representation,
        resolution: u32,
    ) -> Result<Versioned<Vec<u8>>> {
        let mode = match mode {
            Representation::Aware => "aware",
            Representation::Agnostic => "agnostic",
        };
        self.get_bytes(&format!(
            "/v1/sessions/{id}/thumbnails/{index}?mode={mode}&resolution={resolution}"
        ))
        .await
    }

    pub async fn respond(&self, id: &str, generation: usize, saved: &[usize]) -> Result<SessionState> {
        let body = HilnsResponseBody {
            generation,
            saved: saved.to_vec(),
        };
        self.post_json(&format!("/v1/sessions/{id}/responses"), &body).await
    }

    pub async fn select(
        &self,
        id: &str,
        generation: usize,
        selected: &[usize],
        saved: &[usize],
    ) -> Result<SessionState> {
        let body = SelectionBody {
            generation,
            selected: selected.to_vec(),
            saved: saved.to_vec(),
        };
        self.post_json(&format!("/v1/sessions/{id}/selections"), &body).await
    }

    pub async fn label(&self, id: &str, index: usize, label: &str) -> Result<SessionState> {
        let body = LabelBody {
            index,
            label: label.to_string(),
            generation: None,
        };
        self.post_json(&format!("/v1/sessions/{id}/labels"), &body).await
    }

    pub async fn finish(&self, id: &str, generation: usize, saved: &[usize]) -> Result<SessionState> {
        let body = FinishBody {
            generation,
            saved: saved.to_vec(),
        };
        self.post_json(&format!("/v1/sessions/{id}/finish"), &body).await
    }

    /// Raw taxonomy JSON Lines as exported by the server.
    pub async fn taxonomy_bytes(&self, id: &str) -> Result<Versioned<Vec<u8>>> {
        self.get_bytes(&format!("/v1/sessions/{id}/taxonomy")).await
    }

    pub async fn taxonomy(&self, id: &str) -> Result<Taxonomy> {
        let bytes = self.taxonomy_bytes(id).await?.value;
        Ok(Taxonomy::read_from(&bytes[..])?)
    }

    /// Raw session event log (JSON Lines).
    pub async fn events_bytes(&self, id: &str) -> Result<Versioned<Vec<u8>>> {
        self.get_bytes(&format!("/v1/sessions/{id}/events")).await
    }

    pub async fn events(&self, id: &str) -> Result<Vec<LogRecord>> {
        let bytes = self.events_bytes(id).await?.value;
        Ok(HilSession::read_log(&bytes[..])?)
    }

    pub async fn session_archive_bytes(&self, id: &str) -> Result<Versioned<Vec<u8>>> {
        self.get_bytes(&format!("/v1/sessions/{id}/archive")).await
    }

    pub async fn session_archive(&self, id: &str) -> Result<Archive> {
        let bytes = self.session_archive_bytes(id).await?.value;
        Ok(Archive::read_from(&bytes[..])?)
    }

    pub async fn archives(&self) -> Result<ArchiveList> {
        self.get_json("/v1/archives").await
    }

    pub async fn archive_bytes(&self, name: &str) -> Result<Vec<u8>> {
        Ok(self.get_bytes(&format!("/v1/archives/{name}")).await?.value)
    }

    pub async fn replay(&self, req: &ReplayRequest) -> Result<Replay> {
        let resp = self
            .send(self.request(Method::POST, "/v1/replay").json(req))
            .await?;
        parse_replay(&resp.text().await?)
    }

    pub async fn session_replay(&self, id: &str, index: usize, stride: usize) -> Result<Replay> {
        let resp = self
            .send(self.request(
                Method::GET,
                &format!("/v1/sessions/{id}/replay/{index}?stride={stride}"),
            ))
            .await?;
        parse_replay(&resp.text().await?)
    }
}

/// Splits a server-sent-event body into `(event, data)` pairs.
pub fn parse_sse(body: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut event = String::new();
    let mut data: Vec<&str> = Vec::new();
    for line in body.lines() {
        if line.is_empty() {
            if !data.is_empty() {
                let name = if event.is_empty() { "message".to_string() } else { std::mem::take(&mut event) };
                out.push((name, data.join("\n")));
            }
            event.clear();
            data.clear();
        } else if let Some(v) = line.strip_prefix("event:") {
            event = v.trim_start().to_string();
        } else if let Some(v) = line.strip_prefix("data:") {
            data.push(v.strip_prefix(' ').unwrap_or(v));
        }
        // comments (":") and other fields are ignored
    }
    if !data.is_empty() {
        let name = if event.is_empty() { "message".to_string() } else { event };
        out.push((name, data.join("\n")));
    }
    out
}

pub fn parse_replay(body: &str) -> Result<Replay> {
    let mut meta = None;
    let mut frames = Vec::new();
    let mut done = None;
    let bad = |e: serde_json::Error| ClientError::Protocol(format!("replay stream: {e}"));
    for (event, data) in parse_sse(body) {
        match event.as_str() {
            "meta" => meta = Some(serde_json::from_str(&data).map_err(bad)?),
            "frame" => frames.push(serde_json::from_str(&data).map_err(bad)?),
            "done" => done = Some(serde_json::from_str(&data).map_err(bad)?),
            _ => {}
        }
    }
    let meta: ReplayMeta = meta.ok_or_else(|| ClientError::Protocol("replay stream without meta".into()))?;
    let done: ReplayDone =
        done.ok_or_else(|| ClientError::Protocol("replay stream ended without a done marker".into()))?;
    if done.frames != frames.len() || meta.frames != frames.len() {
        return Err(ClientError::Protocol(format!(
            "replay announced {} frames but delivered {}",
            meta.frames,
            frames.len()
        )));
    }
    Ok(Replay { meta, frames, done })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sse_parsing() {
        let body = "event: meta\ndata: {\"a\":1}\n\n: keep-alive\n\nevent: frame\ndata: x\ndata: y\n\ndata: tail";
        let ev = parse_sse(body);
        assert_eq!(
            ev,
            vec![
                ("meta".into(), "{\"a\":1}".into()),
                ("frame".into(), "x\ny".into()),
                ("message".into(), "tail".into()),
            ]
        );
    }

    #[test]
    fn replay_without_done_is_an_error() {
        assert!(matches!(parse_replay("event: frame\ndata: {}\n\n"), Err(ClientError::Protocol(_))));
    }
}
