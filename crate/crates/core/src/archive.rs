//! Append-only archive of evaluated controllers and its line-delimited file format.
//!
//! The file is JSON Lines: one header object, then one object per entry in
//! `eval_id` order. Floats are written in shortest round-trip form, so
//! write → read → write is byte-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::metrics::FeaturizerSpec;
use crate::search::SearchConfig;
use crate::sim::SimConfig;

pub const ARCHIVE_FORMAT: &str = "hetswarm-archive";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub eval_id: u64,
    /// Generation index, or -1 for random sampling.
    pub generation: i64,
    pub seed: u64,
    pub genome: Genome,
    pub behavior: Vec<f64>,
    /// Novelty recorded when the entry was scored during search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// How the archive was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Provenance {
    Novelty { search: SearchConfig },
    Random { n: usize, rng_seed: u64 },
    Imported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub sim: SimConfig,
    pub featurizer: FeaturizerSpec,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub header: ArchiveHeader,
    entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn new(dim: usize, sim: SimConfig, featurizer: FeaturizerSpec, provenance: Provenance) -> Self {
        Archive {
            header: ArchiveHeader {
                format: ARCHIVE_FORMAT.into(),
                version: ARCHIVE_VERSION,
                dim,
                sim,
                featurizer,
                provenance,
            },
            entries: Vec::new(),
        }
    }

    /// Archive of bare behavior vectors, for clustering and novelty on synthetic data.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        let mut a = Archive::new(
            dim,
            SimConfig::default(),
            FeaturizerSpec::HandCrafted {
                mode: crate::metrics::Representation::Agnostic,
                window: crate::metrics::DEFAULT_WINDOW,
            },
            Provenance::Imported,
        );
        let g = Genome::homogeneous([0.0; 4], 0.5);
        for (i, p) in points.iter().enumerate() {
            a.push(ArchiveEntry {
                eval_id: i as u64,
                generation: -1,
                seed: 0,
                genome: g,
                behavior: p.clone(),
                novelty: None,
                degenerate: false,
            })?;
        }
        Ok(a)
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn get(&self, eval_id: u64) -> Option<&ArchiveEntry> {
        self.entries
            .binary_search_by_key(&eval_id, |e| e.eval_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn next_eval_id(&self) -> u64 {
        self.entries.last().map(|e| e.eval_id + 1).unwrap_or(0)
    }

    /// Appends an entry; dimension and eval_id ordering are enforced.
    pub fn push(&mut self, entry: ArchiveEntry) -> Result<()> {
        if entry.behavior.len() != self.header.dim {
            return Err(Error::DimensionMismatch {
                expected: self.header.dim,
                actual: entry.behavior.len(),
            });
        }
        if let Some(last) = self.entries.last() {
            if entry.eval_id <= last.eval_id {
                return Err(Error::Format(format!(
                    "eval_id {} not greater than previous {}",
                    entry.eval_id, last.eval_id
                )));
            }
        }
        if entry.behavior.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "eval_id {} has a non-finite behavior value",
                entry.eval_id
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub(crate) fn set_novelty(&mut self, eval_id: u64, novelty: f64) {
        if let Ok(i) = self.entries.binary_search_by_key(&eval_id, |e| e.eval_id) {
            self.entries[i].novelty = Some(novelty);
        }
    }

    pub fn generation(&self, generation: i64) -> impl Iterator<Item = &ArchiveEntry> {
        self.entries.iter().filter(move |e| e.generation == generation)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("archive file is empty".into()))??;
        let header: ArchiveHeader = serde_json::from_str(&header_line)?;
        if header.format != ARCHIVE_FORMAT {
            return Err(Error::Format(format!(
                "not an archive file (format {:?})",
                header.format
            )));
        }
        if header.version != ARCHIVE_VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {}",
                header.version
            )));
        }
        let mut archive = Archive {
            header,
            entries: Vec::new(),
        };
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ArchiveEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("entry line {}: {e}", n + 2)))?;
            archive.push(entry)?;
        }
        Ok(archive)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
