//! Batch experiment runs: a manifest names a mode, its configs and an output
//! directory; running it writes per-seed artifacts plus `manifest.json` and a
//! machine-readable `summary.json`.
//!
//! ```text
//! out/
//!   manifest.json
//!   summary.json
//!   seed_0/archive.jsonl …
//!   seed_1/…
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::cluster::{extract_taxonomy, ClusterConfig};
use crate::embed::build_featurizer;
use crate::error::{Error, Result};
use crate::genome::{eta_grid, Controller, Genome};
use crate::hil::{ChemistrySelection, HilSession, Protocol, SessionConfig, SessionStatus, GRID_SIZE};
use crate::metrics::{Featurizer, FeaturizerSpec, Representation, DEFAULT_WINDOW};
use crate::render::render_trajectory;
use crate::search::{run_novelty_search, run_random_search, GenerationReport, SearchConfig};
use crate::sim::{simulate, SimConfig};
use crate::taxonomy::Taxonomy;
use crate::trajectory_io::{write_binary, write_csv};

pub const SUMMARY_FORMAT: &str = "hetswarm-summary";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    #[default]
    Csv,
    Binary,
}

/// Scripted human for HIL-NS batch runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HilnsPolicy {
    SaveNone,
    SaveAll,
    /// Save these query ranks every generation.
    Save(Vec<usize>),
}

impl HilnsPolicy {
    pub fn choose(&self, available: usize) -> Vec<usize> {
        match self {
            HilnsPolicy::SaveNone => Vec::new(),
            HilnsPolicy::SaveAll => (0..available).collect(),
            HilnsPolicy::Save(v) => v.iter().copied().filter(|&i| i < available).collect(),
        }
    }
}

/// Scripted human for Swarm Chemistry batch runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChemistryPolicy {
    /// Select these grid slots every round (1 or 2).
    Fixed { selected: Vec<usize>, saved: Vec<usize> },
    /// Select 1 or 2 random slots and save the selection, from a seeded stream.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RunMode {
    Novelty {
        search: SearchConfig,
        featurizer: FeaturizerSpec,
    },
    Random {
        n: usize,
        featurizer: FeaturizerSpec,
    },
    Cluster {
        archive: PathBuf,
        cluster: ClusterConfig,
        /// Thumbnail resolution; `None` skips thumbnails.
        #[serde(default)]
        thumbnails: Option<u32>,
        /// Re-simulate representatives and check their stored vectors.
        #[serde(default = "yes")]
        verify: bool,
    },
    Hilns {
        session: SessionConfig,
        policy: HilnsPolicy,
    },
    Chemistry {
        session: SessionConfig,
        policy: ChemistryPolicy,
        steps: usize,
    },
    Replay {
        genome: Genome,
        #[serde(default)]
        format: TrajectoryFormat,
        #[serde(default)]
        featurizer: Option<FeaturizerSpec>,
        #[serde(default)]
        render: Option<u32>,
    },
    Sweep {
        /// The fixed eight wheel velocities `[A ‖ B]`.
        velocities: [f64; 8],
        etas: Vec<f64>,
        featurizer: FeaturizerSpec,
        #[serde(default)]
        format: TrajectoryFormat,
    },
}

fn yes() -> bool {
    true
}

impl RunMode {
    pub fn name(&self) -> &'static str {
        match self {
            RunMode::Novelty { .. } => "novelty",
            RunMode::Random { .. } => "random",
            RunMode::Cluster { .. } => "cluster",
            RunMode::Hilns { .. } => "hilns",
            RunMode::Chemistry { .. } => "chemistry",
            RunMode::Replay { .. } => "replay",
            RunMode::Sweep { .. } => "sweep",
        }
    }

    /// The eta sweep over the standard population-ratio grid.
    pub fn default_sweep(velocities: [f64; 8]) -> RunMode {
        RunMode::Sweep {
            velocities,
            etas: eta_grid(),
            featurizer: FeaturizerSpec::HandCrafted {
                mode: Representation::Aware,
                window: DEFAULT_WINDOW,
            },
            format: TrajectoryFormat::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    /// One trial per seed, each writing under `seed_<n>/`.
    pub seeds: Vec<u64>,
    pub sim: SimConfig,
    #[serde(flatten)]
    pub mode: RunMode,
    pub output: PathBuf,
}

impl RunManifest {
    pub fn new(mode: RunMode, seeds: Vec<u64>, sim: SimConfig, output: impl Into<PathBuf>) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        RunManifest {
            run_id: format!("{}-{created_at}", mode.name()),
            created_at,
            seeds,
            sim,
            mode,
            output: output.into(),
        }
    }

    /// Checks configs and input files; runs before any simulation.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        let mut dedup = self.seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        self.sim.validate()?;
        match &self.mode {
            RunMode::Novelty { search, .. } => search.validate()?,
            RunMode::Random { .. } => {}
            RunMode::Cluster { archive, cluster, .. } => {
                if !archive.exists() {
                    return Err(Error::InvalidConfig(format!(
                        "input archive {} does not exist",
                        archive.display()
                    )));
                }
                let a = Archive::load(archive)?;
                cluster.validate(a.len())?;
            }
            RunMode::Hilns { session, .. } => {
                if session.protocol != Protocol::Hilns {
                    return Err(Error::InvalidConfig("hilns run needs a hilns session config".into()));
                }
                session.validate()?;
            }
            RunMode::Chemistry { session, policy, .. } => {
                if session.protocol != Protocol::Chemistry {
                    return Err(Error::InvalidConfig(
                        "chemistry run needs a chemistry session config".into(),
                    ));
                }
                session.validate()?;
                if let ChemistryPolicy::Fixed { selected, saved } = policy {
                    ChemistrySelection {
                        selected: selected.clone(),
                        saved: saved.clone(),
                    }
                    .validate()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                }
            }
            RunMode::Replay { genome, render, .. } => {
                genome.validate(self.sim.n_agents)?;
                if *render == Some(0) {
                    return Err(Error::InvalidConfig("render resolution must be positive".into()));
                }
            }
            RunMode::Sweep { velocities, etas, .. } => {
                if etas.is_empty() {
                    return Err(Error::InvalidConfig("sweep needs at least one eta".into()));
                }
                for &eta in etas {
                    sweep_genome(velocities, eta).validate(self.sim.n_agents)?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

fn sweep_genome(v: &[f64; 8], eta: f64) -> Genome {
    Genome {
        a: Controller([v[0], v[1], v[2], v[3]]),
        b: Controller([v[4], v[5], v[6], v[7]]),
        eta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    /// Paths relative to the run's output directory.
    pub artifacts: Vec<String>,
    pub counts: serde_json::Map<String, serde_json::Value>,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub run_id: String,
    pub mode: String,
    pub trials: Vec<TrialSummary>,
    pub elapsed_ms: u64,
    pub manifest: RunManifest,
}

/// Validates the manifest, executes every trial, and writes the artifacts.
pub fn execute(
    manifest: &RunManifest,
    mut progress: impl FnMut(u64, &GenerationReport),
) -> Result<RunSummary> {
    manifest.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(&manifest.output)?;
    manifest.save(manifest.output.join("manifest.json"))?;
    let mut trials = Vec::with_capacity(manifest.seeds.len());
    for &seed in &manifest.seeds {
        let t0 = Instant::now();
        let rel = format!("seed_{seed}");
        let dir = manifest.output.join(&rel);
        std::fs::create_dir_all(&dir)?;
        let mut trial = Trial {
            rel,
            dir,
            artifacts: Vec::new(),
            counts: serde_json::Map::new(),
        };
        run_trial(manifest, seed, &mut trial, &mut |r| progress(seed, r))?;
        trials.push(TrialSummary {
            seed,
            artifacts: trial.artifacts,
            counts: trial.counts,
            elapsed_ms: t0.elapsed().as_millis() as u64,
        });
    }
    let summary = RunSummary {
        format: SUMMARY_FORMAT.into(),
        run_id: manifest.run_id.clone(),
        mode: manifest.mode.name().into(),
        trials,
        elapsed_ms: started.elapsed().as_millis() as u64,
        manifest: manifest.clone(),
    };
    std::fs::write(
        manifest.output.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    Ok(summary)
}

struct Trial {
    rel: String,
    dir: PathBuf,
    artifacts: Vec<String>,
    counts: serde_json::Map<String, serde_json::Value>,
}

impl Trial {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(format!("{}/{name}", self.rel));
        self.dir.join(name)
    }

    fn count(&mut self, key: &str, v: impl Into<serde_json::Value>) {
        self.counts.insert(key.into(), v.into());
    }
}

fn featurizer_for(spec: &FeaturizerSpec) -> Result<Arc<dyn Featurizer>> {
    build_featurizer(spec)
}

fn run_trial(
    m: &RunManifest,
    seed: u64,
    trial: &mut Trial,
    progress: &mut dyn FnMut(&GenerationReport),
) -> Result<()> {
    match &m.mode {
        RunMode::Novelty { search, featurizer } => {
            let f = featurizer_for(featurizer)?;
            let config = SearchConfig {
                rng_seed: seed,
                ..search.clone()
            };
            let mut reports = Vec::new();
            let archive = run_novelty_search(&config, &m.sim, f, |r| {
                progress(r);
                reports.push(r.clone());
            })?;
            archive.save(trial.path("archive.jsonl"))?;
            let mut lines = Vec::new();
            for r in &reports {
                serde_json::to_writer(&mut lines, &serde_json::json!({
                    "generation": r.generation,
                    "archive_size": r.archive_size,
                    "top": r.top(3),
                }))?;
                lines.push(b'\n');
            }
            std::fs::write(trial.path("progress.jsonl"), lines)?;
            trial.count("entries", archive.len());
            trial.count("generations", reports.len());
        }
        RunMode::Random { n, featurizer } => {
            let f = featurizer_for(featurizer)?;
            let archive = run_random_search(*n, &m.sim, f.as_ref(), seed)?;
            archive.save(trial.path("archive.jsonl"))?;
            trial.count("entries", archive.len());
        }
        RunMode::Cluster {
            archive,
            cluster,
            thumbnails,
            verify,
        } => {
            let a = Archive::load(archive)?;
            let config = ClusterConfig {
                seed,
                ..cluster.clone()
            };
            let f = if *verify {
                Some(featurizer_for(&a.header.featurizer)?)
            } else {
                None
            };
            let candidates = extract_taxonomy(&a, &config, f.as_deref())?;
            let tax = Taxonomy::from_candidates(&a, &config, &candidates);
            tax.save(trial.path("taxonomy.jsonl"))?;
            if let Some(res) = thumbnails {
                let mode = match a.header.featurizer {
                    FeaturizerSpec::HandCrafted { mode, .. } | FeaturizerSpec::Plugin { mode, .. } => mode,
                };
                tax.write_thumbnails(trial.path("thumbnails"), mode, *res)?;
            }
            trial.count("archive_entries", a.len());
            trial.count("clusters", candidates.len());
            trial.count(
                "cluster_sizes",
                candidates.iter().map(|c| c.cluster_size).collect::<Vec<_>>(),
            );
        }
        RunMode::Hilns { session, policy } => {
            let config = SessionConfig {
                seed,
                ..session.clone()
            };
            let mut s = HilSession::create(format!("{}-{seed}", m.run_id), config)?;
            let mut generations = 0;
            while s.status() == SessionStatus::AwaitingHuman {
                let n = s.pending_queries()?.len();
                s.respond(&policy.choose(n))?;
                generations += 1;
            }
            std::fs::write(trial.path("session.jsonl"), s.log_bytes()?)?;
            s.export_taxonomy().save(trial.path("taxonomy.jsonl"))?;
            let archive = s.archive().expect("hilns session has an archive");
            archive.save(trial.path("archive.jsonl"))?;
            trial.count("generations", generations);
            trial.count("archive_entries", archive.len());
            trial.count("saved", s.saved().len());
        }
        RunMode::Chemistry {
            session,
            policy,
            steps,
        } => {
            let config = SessionConfig {
                seed,
                ..session.clone()
            };
            let mut s = HilSession::create(format!("{}-{seed}", m.run_id), config)?;
            let mut rng = match policy {
                ChemistryPolicy::Random { seed: p } => ChaCha8Rng::seed_from_u64(*p ^ seed),
                ChemistryPolicy::Fixed { .. } => ChaCha8Rng::seed_from_u64(0),
            };
            let mut advanced = 0;
            while advanced < *steps && s.status() == SessionStatus::AwaitingHuman {
                s.advance(scripted_selection(policy, &mut rng))?;
                advanced += 1;
            }
            std::fs::write(trial.path("session.jsonl"), s.log_bytes()?)?;
            s.export_taxonomy().save(trial.path("taxonomy.jsonl"))?;
            std::fs::write(trial.path("grid.json"), serde_json::to_vec_pretty(s.grid()?)?)?;
            trial.count("advances", advanced);
            trial.count("saved", s.saved().len());
        }
        RunMode::Replay {
            genome,
            format,
            featurizer,
            render,
        } => {
            let traj = simulate(genome, &m.sim, seed)?;
            write_trajectory(&traj, *format, trial, "trajectory")?;
            if let Some(spec) = featurizer {
                let bv = featurizer_for(spec)?.featurize(&traj)?;
                std::fs::write(trial.path("behavior.json"), serde_json::to_vec_pretty(&bv)?)?;
            }
            if let Some(res) = render {
                render_trajectory(&traj, Representation::Aware, *res)?.save_png(trial.path("final.png"))?;
            }
            trial.count("frames", traj.len());
            trial.count("agents", traj.n_agents());
        }
        RunMode::Sweep {
            velocities,
            etas,
            featurizer,
            format,
        } => {
            let f = featurizer_for(featurizer)?;
            let mut rows = Vec::new();
            for &eta in etas {
                let g = sweep_genome(velocities, eta);
                let traj = simulate(&g, &m.sim, seed)?;
                write_trajectory(&traj, *format, trial, &format!("eta_{:.4}", eta))?;
                let bv = f.featurize(&traj)?;
                rows.push(serde_json::json!({
                    "eta": eta,
                    "type_a_count": g.type_a_count(m.sim.n_agents),
                    "behavior": bv.values,
                }));
            }
            std::fs::write(trial.path("sweep.json"), serde_json::to_vec_pretty(&rows)?)?;
            trial.count("trajectories", rows.len());
        }
    }
    Ok(())
}

/// The next scripted selection; `rng` is only drawn from by the random policy.
pub fn scripted_selection(policy: &ChemistryPolicy, rng: &mut ChaCha8Rng) -> ChemistrySelection {
    match policy {
        ChemistryPolicy::Fixed { selected, saved } => ChemistrySelection {
            selected: selected.clone(),
            saved: saved.clone(),
        },
        ChemistryPolicy::Random { .. } => {
            let first = rng.gen_range(0..GRID_SIZE);
            let mut selected = vec![first];
            if rng.gen::<bool>() {
                let mut second = rng.gen_range(0..GRID_SIZE - 1);
                if second >= first {
                    second += 1;
                }
                selected.push(second);
            }
            ChemistrySelection {
                saved: selected.clone(),
                selected,
            }
        }
    }
}

fn write_trajectory(
    traj: &crate::sim::Trajectory,
    format: TrajectoryFormat,
    trial: &mut Trial,
    stem: &str,
) -> Result<()> {
    match format {
        TrajectoryFormat::Csv => {
            let f = std::fs::File::create(trial.path(&format!("{stem}.csv")))?;
            write_csv(traj, std::io::BufWriter::new(f))
        }
        TrajectoryFormat::Binary => {
            let f = std::fs::File::create(trial.path(&format!("{stem}.bin")))?;
            write_binary(traj, std::io::BufWriter::new(f))
        }
    }
}
