//! Taxonomy files: the representatives surfaced for (or saved by) a human,
//! written as JSON Lines — a header object then one record per behavior.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::cluster::{ClusterConfig, ClusterMethod, TaxonomyCandidate, REPLAY_TOLERANCE};
use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::metrics::{Featurizer, FeaturizerSpec, Representation};
use crate::render::render_trajectory;
use crate::sim::{simulate, SimConfig};

pub const TAXONOMY_FORMAT: &str = "hetswarm-taxonomy";
pub const TAXONOMY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomySource {
    Kmedoids,
    Hierarchical,
    Spectral,
    Human,
}

impl From<ClusterMethod> for TaxonomySource {
    fn from(m: ClusterMethod) -> Self {
        match m {
            ClusterMethod::Kmedoids => TaxonomySource::Kmedoids,
            ClusterMethod::Hierarchical => TaxonomySource::Hierarchical,
            ClusterMethod::Spectral => TaxonomySource::Spectral,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyHeader {
    pub format: String,
    pub version: u32,
    pub source: TaxonomySource,
    pub dim: usize,
    pub sim: SimConfig,
    pub featurizer: FeaturizerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterConfig>,
    /// Number of archive entries that were clustered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyRecord {
    /// Cluster index, or position in the saved list for human taxonomies.
    pub cluster_id: usize,
    /// Cluster size; 1 for human-saved behaviors.
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_id: Option<u64>,
    /// Search generation (clustering) or session generation when saved (human).
    pub generation: i64,
    pub genome: Genome,
    pub seed: u64,
    pub behavior: Vec<f64>,
    /// `null` marks an unlabeled behavior.
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Taxonomy {
    pub header: TaxonomyHeader,
    pub records: Vec<TaxonomyRecord>,
}

impl Taxonomy {
    pub fn new(source: TaxonomySource, dim: usize, sim: SimConfig, featurizer: FeaturizerSpec) -> Self {
        Taxonomy {
            header: TaxonomyHeader {
                format: TAXONOMY_FORMAT.into(),
                version: TAXONOMY_VERSION,
                source,
                dim,
                sim,
                featurizer,
                cluster: None,
                archive_size: None,
            },
            records: Vec::new(),
        }
    }

    pub fn from_candidates(archive: &Archive, config: &ClusterConfig, candidates: &[TaxonomyCandidate]) -> Self {
        let mut t = Taxonomy::new(
            config.method.into(),
            archive.dim(),
            archive.header.sim.clone(),
            archive.header.featurizer.clone(),
        );
        t.header.cluster = Some(config.clone());
        t.header.archive_size = Some(archive.len());
        t.records = candidates
            .iter()
            .map(|c| TaxonomyRecord {
                cluster_id: c.cluster_id,
                size: c.cluster_size,
                eval_id: Some(c.representative.eval_id),
                generation: c.representative.generation,
                genome: c.representative.genome,
                seed: c.representative.seed,
                behavior: c.representative.behavior.clone(),
                label: None,
            })
            .collect();
        t
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
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
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("taxonomy file is empty".into()))??;
        let header: TaxonomyHeader = serde_json::from_str(&first)?;
        if header.format != TAXONOMY_FORMAT || header.version != TAXONOMY_VERSION {
            return Err(Error::Format(format!(
                "not a version-{TAXONOMY_VERSION} taxonomy file (format {:?}, version {})",
                header.format, header.version
            )));
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TaxonomyRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("record line {}: {e}", n + 2)))?;
            if rec.behavior.len() != header.dim {
                return Err(Error::DimensionMismatch {
                    expected: header.dim,
                    actual: rec.behavior.len(),
                });
            }
            records.push(rec);
        }
        Ok(Taxonomy { header, records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Re-simulates every record and checks its stored behavior vector.
    /// Returns the largest absolute deviation seen.
    pub fn verify_replay(&self, featurizer: &dyn Featurizer) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, r) in self.records.iter().enumerate() {
            let traj = simulate(&r.genome, &self.header.sim, r.seed)?;
            let bv = featurizer.featurize(&traj)?;
            let diff = if bv.values.len() == r.behavior.len() {
                bv.values
                    .iter()
                    .zip(&r.behavior)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            } else {
                f64::INFINITY
            };
            if diff > REPLAY_TOLERANCE || diff.is_nan() {
                return Err(Error::ReplayMismatch {
                    eval_id: r.eval_id.unwrap_or(i as u64),
                    max_abs_diff: diff,
                });
            }
            worst = worst.max(diff);
        }
        Ok(worst)
    }

    /// Renders each record's final frame to `dir/cluster_NN.png`.
    pub fn write_thumbnails(
        &self,
        dir: impl AsRef<Path>,
        mode: Representation,
        resolution: u32,
    ) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.records
            .iter()
            .map(|r| {
                let traj = simulate(&r.genome, &self.header.sim, r.seed)?;
                let path = dir.join(format!("cluster_{:02}.png", r.cluster_id));
                render_trajectory(&traj, mode, resolution)?.save_png(&path)?;
                Ok(path)
            })
            .collect()
    }
}
