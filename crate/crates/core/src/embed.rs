//! Boundary to external learned embedders running as child processes.
//!
//! Wire protocol over the child's stdin/stdout. Every message is a 4-byte
//! little-endian length followed by that many payload bytes.
//!
//! 1. plugin → host, once at startup: JSON `{"name": str, "mode": "agnostic"|"aware", "dim": int}`
//! 2. host → plugin, per image: `u32 width, u32 height, u32 channels` (LE) then
//!    `width * height * channels` raw bytes, row-major
//! 3. plugin → host, per image: `u32 count` then `count` little-endian `f64`s
//!
//! The host closes stdin when done; the plugin exits on EOF.

use std::io::{self, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    BehaviorVector, FeatureSource, Featurizer, FeaturizerSpec, HandCrafted, Representation,
};
use crate::render::{render_trajectory, Raster};
use crate::sim::Trajectory;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const MAX_FRAME: u32 = 256 << 20;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("failed to start embedder {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("embedder handshake failed: {0}")]
    Handshake(String),
    #[error("embedder did not answer within {0:?}")]
    Timeout(Duration),
    #[error("embedder returned {actual} values but declared dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedder returned a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("embedder protocol violation: {0}")]
    Protocol(String),
    #[error("embedder is unusable after an earlier failure")]
    Poisoned,
    #[error("embedder i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub name: String,
    pub mode: Representation,
    pub dim: usize,
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on clean EOF before the length prefix.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn encode_image(img: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.data.len());
    out.extend_from_slice(&img.width.to_le_bytes());
    out.extend_from_slice(&img.height.to_le_bytes());
    out.extend_from_slice(&(img.channels as u32).to_le_bytes());
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_image(payload: &[u8]) -> Result<Raster, EmbedError> {
    if payload.len() < 12 {
        return Err(EmbedError::Protocol("image header truncated".into()));
    }
    let word = |i: usize| u32::from_le_bytes(payload[i..i + 4].try_into().unwrap());
    let (width, height, channels) = (word(0), word(4), word(8));
    let expected = width as usize * height as usize * channels as usize;
    if payload.len() - 12 != expected || channels == 0 || channels > 4 {
        return Err(EmbedError::Protocol(format!(
            "image of {width}x{height}x{channels} carries {} bytes",
            payload.len() - 12
        )));
    }
    Ok(Raster {
        width,
        height,
        channels: channels as u8,
        data: payload[12..].to_vec(),
    })
}

pub fn encode_vector(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_vector(payload: &[u8]) -> Result<Vec<f64>, EmbedError> {
    if payload.len() < 4 {
        return Err(EmbedError::Protocol("vector header truncated".into()));
    }
    let n = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
    if payload.len() != 4 + 8 * n {
        return Err(EmbedError::Protocol(format!(
            "vector of {n} values carries {} bytes",
            payload.len() - 4
        )));
    }
    Ok(payload[4..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// A running embedder process. Requests are strictly sequential.
pub struct PluginEmbedder {
    child: Child,
    stdin: Option<ChildStdin>,
    frames: Receiver<io::Result<Option<Vec<u8>>>>,
    handshake: Handshake,
    command: Vec<String>,
    timeout: Duration,
    poisoned: bool,
}

impl PluginEmbedder {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, EmbedError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| EmbedError::Handshake("empty embedder command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| EmbedError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take();
        let mut stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let frame = read_frame(&mut stdout);
            let stop = !matches!(frame, Ok(Some(_)));
            if tx.send(frame).is_err() || stop {
                break;
            }
        });
        let mut plugin = PluginEmbedder {
            child,
            stdin,
            frames: rx,
            handshake: Handshake {
                name: String::new(),
                mode: Representation::Agnostic,
                dim: 0,
            },
            command: command.to_vec(),
            timeout,
            poisoned: false,
        };
        let payload = plugin.receive()?;
        let hs: Handshake = serde_json::from_slice(&payload)
            .map_err(|e| EmbedError::Handshake(format!("malformed handshake: {e}")))?;
        if hs.dim == 0 {
            return Err(EmbedError::Handshake("declared dimension is zero".into()));
        }
        plugin.handshake = hs;
        Ok(plugin)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn receive(&mut self) -> Result<Vec<u8>, EmbedError> {
        match self.frames.recv_timeout(self.timeout) {
            Ok(Ok(Some(frame))) => Ok(frame),
            Ok(Ok(None)) => {
                self.poisoned = true;
                Err(EmbedError::Protocol("embedder closed its output".into()))
            }
            Ok(Err(e)) => {
                self.poisoned = true;
                Err(e.into())
            }
            Err(RecvTimeoutError::Timeout) => {
                self.poisoned = true;
                let _ = self.child.kill();
                Err(EmbedError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.poisoned = true;
                Err(EmbedError::Protocol("embedder output disconnected".into()))
            }
        }
    }

    /// Embeds one image and checks the reply against the handshake.
    pub fn embed(&mut self, img: &Raster) -> Result<Vec<f64>, EmbedError> {
        if self.poisoned {
            return Err(EmbedError::Poisoned);
        }
        let stdin = self.stdin.as_mut().ok_or(EmbedError::Poisoned)?;
        if let Err(e) = write_frame(stdin, &encode_image(img)) {
            self.poisoned = true;
            return Err(e.into());
        }
        let values = decode_vector(&self.receive()?)?;
        if values.len() != self.handshake.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.handshake.dim,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        Ok(values)
    }
}

impl Drop for PluginEmbedder {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if self.poisoned {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// Embeds a rendered trajectory. A one-channel image is embedded directly. A
/// three-channel (type-aware) image yields `[whole ‖ type A ‖ type B]`, where the
/// whole-swarm image is the per-pixel max of the two type channels.
pub fn embed_external(img: &Raster, plugin: &mut PluginEmbedder) -> crate::Result<BehaviorVector> {
    let name = plugin.handshake().name.clone();
    let (values, mode) = match img.channels {
        1 => (plugin.embed(img)?, Representation::Agnostic),
        3 => {
            let red = img.channel(0);
            let green = img.channel(1);
            let mut whole = red.clone();
            for (w, g) in whole.data.iter_mut().zip(&green.data) {
                *w = (*w).max(*g);
            }
            let mut v = plugin.embed(&whole)?;
            v.extend(plugin.embed(&red)?);
            v.extend(plugin.embed(&green)?);
            (v, Representation::Aware)
        }
        c => {
            return Err(EmbedError::Protocol(format!("cannot embed a {c}-channel image")).into())
        }
    };
    Ok(BehaviorVector {
        values,
        mode,
        source: FeatureSource::Plugin(name),
        degenerate: false,
    })
}

/// Featurizer backed by an embedder process. Access to the process is
/// serialized through a mutex.
pub struct PluginFeaturizer {
    plugin: Mutex<PluginEmbedder>,
    mode: Representation,
    resolution: u32,
}

impl PluginFeaturizer {
    pub fn new(plugin: PluginEmbedder, mode: Representation, resolution: u32) -> Self {
        PluginFeaturizer {
            plugin: Mutex::new(plugin),
            mode,
            resolution,
        }
    }

    fn plugin_dim(&self) -> usize {
        self.plugin.lock().unwrap_or_else(|e| e.into_inner()).handshake().dim
    }
}

impl Featurizer for PluginFeaturizer {
    fn dim(&self) -> usize {
        match self.mode {
            Representation::Agnostic => self.plugin_dim(),
            Representation::Aware => 3 * self.plugin_dim(),
        }
    }

    fn spec(&self) -> FeaturizerSpec {
        let p = self.plugin.lock().unwrap_or_else(|e| e.into_inner());
        FeaturizerSpec::Plugin {
            name: p.handshake().name.clone(),
            mode: self.mode,
            dim: p.handshake().dim,
            command: p.command().to_vec(),
            resolution: self.resolution,
        }
    }

    fn featurize(&self, traj: &Trajectory) -> crate::Result<BehaviorVector> {
        let img = render_trajectory(traj, self.mode, self.resolution)?;
        let mut p = self.plugin.lock().unwrap_or_else(|e| e.into_inner());
        embed_external(&img, &mut p)
    }
}

/// Reconstructs the featurizer recorded in an archive header. Plugin specs
/// respawn the recorded command and check the handshake still matches.
pub fn build_featurizer(spec: &FeaturizerSpec) -> crate::Result<Arc<dyn Featurizer>> {
    match spec {
        FeaturizerSpec::HandCrafted { mode, window } => Ok(Arc::new(HandCrafted {
            mode: *mode,
            window: *window,
        })),
        FeaturizerSpec::Plugin {
            name,
            mode,
            dim,
            command,
            resolution,
        } => {
            let plugin = PluginEmbedder::spawn(command, DEFAULT_TIMEOUT)?;
            let hs = plugin.handshake();
            if &hs.name != name || hs.dim != *dim {
                return Err(EmbedError::Handshake(format!(
                    "plugin now reports {}/{} but archive recorded {name}/{dim}",
                    hs.name, hs.dim
                ))
                .into());
            }
            Ok(Arc::new(PluginFeaturizer::new(plugin, *mode, *resolution)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn image_and_vector_codecs() {
        let img = Raster {
            width: 2,
            height: 3,
            channels: 1,
            data: vec![1, 2, 3, 4, 5, 6],
        };
        assert_eq!(decode_image(&encode_image(&img)).unwrap(), img);
        let mut bad = encode_image(&img);
        bad.pop();
        assert!(decode_image(&bad).is_err());
        let v = vec![0.5, -1.25, 1e-300];
        assert_eq!(decode_vector(&encode_vector(&v)).unwrap(), v);
        assert!(decode_vector(&[1, 0, 0, 0]).is_err());
    }

    #[test]
    fn missing_program_is_a_spawn_error() {
        let err = PluginEmbedder::spawn(&["/nonexistent/embedder".to_string()], DEFAULT_TIMEOUT)
            .err()
            .unwrap();
        assert!(matches!(err, EmbedError::Spawn { .. }));
    }
}
