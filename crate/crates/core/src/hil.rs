//! Interactive discovery sessions: human-in-the-loop novelty search (the human
//! reviews each generation's three most novel behaviors) and Swarm Chemistry
//! (the human picks one or two parents per generation).
//!
//! Sessions are event-sourced. Every state change goes through
//! [`HilSession::apply`], which validates a [`SessionEvent`], mutates the
//! session, and appends the event to its log. Replaying the log through a fresh
//! session reproduces it exactly; the log records inputs only.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::embed::build_featurizer;
use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::metrics::{Featurizer, FeaturizerSpec, Representation, DEFAULT_WINDOW};
use crate::render::{render_trajectory, Raster};
use crate::search::{crossover, eval_seed, mutate, sample_genome, NoveltySearch, SearchConfig};
use crate::sim::{simulate, SimConfig, Trajectory};
use crate::taxonomy::{Taxonomy, TaxonomyRecord, TaxonomySource};

pub const QUERIES_PER_GENERATION: usize = 3;
pub const GRID_SIZE: usize = 8;
pub const DEFAULT_MAX_GENERATIONS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Hilns,
    Chemistry,
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hilns" | "hil-ns" => Ok(Protocol::Hilns),
            "chemistry" => Ok(Protocol::Chemistry),
            _ => Err(Error::InvalidConfig(format!(
                "unknown protocol {s:?} (expected hilns or chemistry)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingHuman,
    Evolving,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub protocol: Protocol,
    pub seed: u64,
    pub sim: SimConfig,
    /// Population, neighbor count and operator rates for HIL-NS. The RNG seed
    /// and generation count are taken from `seed` and `max_generations`.
    pub search: SearchConfig,
    pub featurizer: FeaturizerSpec,
    pub max_generations: usize,
    /// Per-slot resample probability for Swarm Chemistry mutants.
    pub mutation_rate: f64,
    /// Also mutate Swarm Chemistry crossover offspring.
    pub mutate_after_crossover: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            protocol: Protocol::Hilns,
            seed: 0,
            sim: SimConfig::default(),
            search: SearchConfig::default(),
            featurizer: FeaturizerSpec::HandCrafted {
                mode: Representation::Aware,
                window: DEFAULT_WINDOW,
            },
            max_generations: DEFAULT_MAX_GENERATIONS,
            mutation_rate: 0.15,
            mutate_after_crossover: false,
        }
    }
}

impl SessionConfig {
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        SessionConfig {
            protocol,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.search.validate()?;
        if self.max_generations == 0 {
            return Err(Error::InvalidConfig("max_generations must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::InvalidConfig("mutation_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn search_config(&self) -> SearchConfig {
        SearchConfig {
            generations: self.max_generations,
            rng_seed: self.seed,
            ..self.search.clone()
        }
    }
}

/// One of the generation's most novel behaviors, as shown to the human.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub rank: usize,
    pub eval_id: u64,
    pub generation: usize,
    pub genome: Genome,
    pub seed: u64,
    pub novelty: f64,
    pub behavior: Vec<f64>,
}

/// How a Swarm Chemistry grid slot was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotOrigin {
    Initial,
    Copy,
    Mutant,
    Offspring,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSlot {
    pub index: usize,
    pub genome: Genome,
    pub seed: u64,
    pub origin: SlotOrigin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChemistrySelection {
    /// One or two grid indices to breed from.
    pub selected: Vec<usize>,
    /// Grid indices to save to the taxonomy this round.
    #[serde(default)]
    pub saved: Vec<usize>,
}

impl ChemistrySelection {
    pub fn validate(&self) -> Result<()> {
        if self.selected.is_empty() || self.selected.len() > 2 {
            return Err(Error::Session(format!(
                "select 1 or 2 swarms to evolve from (got {})",
                self.selected.len()
            )));
        }
        check_indices(&self.selected, GRID_SIZE, "selected")?;
        check_indices(&self.saved, GRID_SIZE, "saved")
    }
}

fn check_indices(idx: &[usize], bound: usize, what: &str) -> Result<()> {
    for (i, &x) in idx.iter().enumerate() {
        if x >= bound {
            return Err(Error::Session(format!("{what} index {x} out of range 0..{bound}")));
        }
        if idx[..i].contains(&x) {
            return Err(Error::Session(format!("{what} index {x} given twice")));
        }
    }
    Ok(())
}

/// A behavior the human saved, with everything needed to replay it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedBehavior {
    pub genome: Genome,
    pub seed: u64,
    pub label: Option<String>,
    pub generation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_id: Option<u64>,
    pub behavior: Vec<f64>,
}

/// Human inputs; a session is a fold over these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload", rename_all = "snake_case")]
pub enum SessionEvent {
    Created { session_id: String, config: SessionConfig },
    HilnsResponse { generation: usize, saved: Vec<usize> },
    ChemistryAdvance { generation: usize, selection: ChemistrySelection },
    Label { index: usize, label: String },
    /// Ends the session early, optionally saving grid slots (Swarm Chemistry).
    Finish {
        #[serde(default)]
        saved: Vec<usize>,
    },
}

/// A line of the session log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Milliseconds since the Unix epoch; informational only.
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

/// `8` draws from a generator seeded with `seed`.
pub fn chemistry_init(seed: u64) -> Vec<Genome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..GRID_SIZE).map(|_| sample_genome(&mut rng)).collect()
}

/// Builds the next Swarm Chemistry grid (without seeds).
///
/// One parent: `[copy, 6 mutants, random]`. Two parents:
/// `[copy, copy, 5 crossover offspring, random]`.
pub fn chemistry_next<R: rand::Rng + ?Sized>(
    parents: &[Genome],
    mutation_rate: f64,
    mutate_after_crossover: bool,
    rng: &mut R,
) -> Result<Vec<(Genome, SlotOrigin)>> {
    let search = SearchConfig::default();
    let grids = search.grids();
    let mut out = Vec::with_capacity(GRID_SIZE);
    match parents {
        [p] => {
            out.push((*p, SlotOrigin::Copy));
            for _ in 0..6 {
                out.push((mutate(p, mutation_rate, grids, rng), SlotOrigin::Mutant));
            }
        }
        [p1, p2] => {
            out.push((*p1, SlotOrigin::Copy));
            out.push((*p2, SlotOrigin::Copy));
            for _ in 0..5 {
                let mut child = crossover(p1, p2, rng);
                if mutate_after_crossover {
                    child = mutate(&child, mutation_rate, grids, rng);
                }
                out.push((child, SlotOrigin::Offspring));
            }
        }
        _ => {
            return Err(Error::Session(format!(
                "select 1 or 2 swarms to evolve from (got {})",
                parents.len()
            )))
        }
    }
    out.push((sample_genome(rng), SlotOrigin::Random));
    Ok(out)
}

enum ProtocolState {
    Hilns {
        search: Box<NoveltySearch>,
        pending: Vec<Query>,
    },
    Chemistry {
        rng: ChaCha8Rng,
        grid: Vec<GridSlot>,
    },
}

pub struct HilSession {
    id: String,
    config: SessionConfig,
    featurizer: Arc<dyn Featurizer>,
    state: ProtocolState,
    generation: usize,
    status: SessionStatus,
    saved: Vec<SavedBehavior>,
    log: Vec<LogRecord>,
    sink: Option<File>,
}

impl std::fmt::Debug for HilSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HilSession")
            .field("id", &self.id)
            .field("protocol", &self.config.protocol)
            .field("generation", &self.generation)
            .field("status", &self.status)
            .field("saved", &self.saved.len())
            .finish()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl HilSession {
    /// Starts a session. For HIL-NS this evaluates the first generation.
    pub fn create(id: impl Into<String>, config: SessionConfig) -> Result<Self> {
        Self::create_with(id, config, None)
    }

    /// Like [`HilSession::create`] but with an already-built featurizer that
    /// must match `config.featurizer`.
    pub fn create_with(
        id: impl Into<String>,
        config: SessionConfig,
        featurizer: Option<Arc<dyn Featurizer>>,
    ) -> Result<Self> {
        let id = id.into();
        config.validate()?;
        let featurizer = match featurizer {
            Some(f) => f,
            None => build_featurizer(&config.featurizer)?,
        };
        let state = match config.protocol {
            Protocol::Hilns => ProtocolState::Hilns {
                search: Box::new(NoveltySearch::new(
                    config.search_config(),
                    config.sim.clone(),
                    featurizer.clone(),
                )?),
                pending: Vec::new(),
            },
            Protocol::Chemistry => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let grid = (0..GRID_SIZE)
                    .map(|i| GridSlot {
                        index: i,
                        genome: sample_genome(&mut rng),
                        seed: eval_seed(config.seed, i as u64),
                        origin: SlotOrigin::Initial,
                    })
                    .collect();
                ProtocolState::Chemistry { rng, grid }
            }
        };
        let mut session = HilSession {
            id: id.clone(),
            config: config.clone(),
            featurizer,
            state,
            generation: 0,
            status: SessionStatus::Evolving,
            saved: Vec::new(),
            log: Vec::new(),
            sink: None,
        };
        session.run_generation()?;
        session.record(SessionEvent::Created { session_id: id, config })?;
        Ok(session)
    }

    /// Rebuilds a session by replaying its log.
    pub fn from_events(records: impl IntoIterator<Item = LogRecord>) -> Result<Self> {
        Self::from_events_with(records, None)
    }

    pub fn from_events_with(
        records: impl IntoIterator<Item = LogRecord>,
        featurizer: Option<Arc<dyn Featurizer>>,
    ) -> Result<Self> {
        let mut iter = records.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Session("session log is empty".into()))?;
        let SessionEvent::Created { session_id, config } = first.event.clone() else {
            return Err(Error::Session("session log must start with a created event".into()));
        };
        let mut session = Self::create_with(session_id, config, featurizer)?;
        session.log[0].timestamp = first.timestamp;
        for rec in iter {
            session.apply(rec.event)?;
            session.log.last_mut().expect("just recorded").timestamp = rec.timestamp;
        }
        Ok(session)
    }

    pub fn read_log<R: BufRead>(r: R) -> Result<Vec<LogRecord>> {
        let mut out = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::Format(format!("session log line {}: {e}", n + 1)))?,
            );
        }
        Ok(out)
    }

    /// Replays a log file and keeps appending new events to it.
    pub fn open_log(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let records = Self::read_log(BufReader::new(File::open(path)?))?;
        let mut s = Self::from_events(records)?;
        s.sink = Some(OpenOptions::new().append(true).open(path)?);
        Ok(s)
    }

    /// Writes the log so far to `path` (which must not exist) and appends all
    /// later events to it.
    pub fn persist_to(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
        f.write_all(&self.log_bytes()?)?;
        f.sync_data()?;
        self.sink = Some(f);
        Ok(())
    }

    pub fn log_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        for r in &self.log {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        Ok(buf)
    }

    fn record(&mut self, event: SessionEvent) -> Result<()> {
        let rec = LogRecord {
            timestamp: now_ms(),
            event,
        };
        if let Some(f) = self.sink.as_mut() {
            let mut line = serde_json::to_vec(&rec)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        self.log.push(rec);
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn protocol(&self) -> Protocol {
        self.config.protocol
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    /// Index of the generation currently shown to the human.
    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn saved(&self) -> &[SavedBehavior] {
        &self.saved
    }

    pub fn events(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn featurizer(&self) -> &Arc<dyn Featurizer> {
        &self.featurizer
    }

    /// The HIL-NS archive; `None` for Swarm Chemistry.
    pub fn archive(&self) -> Option<&Archive> {
        match &self.state {
            ProtocolState::Hilns { search, .. } => Some(search.archive()),
            ProtocolState::Chemistry { .. } => None,
        }
    }

    pub fn pending_queries(&self) -> Result<&[Query]> {
        match &self.state {
            ProtocolState::Hilns { pending, .. } if self.status == SessionStatus::AwaitingHuman => {
                Ok(pending)
            }
            ProtocolState::Hilns { .. } => Err(Error::Session(format!(
                "session {} is {:?}; no queries pending",
                self.id, self.status
            ))),
            ProtocolState::Chemistry { .. } => {
                Err(Error::Session("queries exist only in hilns sessions".into()))
            }
        }
    }

    pub fn grid(&self) -> Result<&[GridSlot]> {
        match &self.state {
            ProtocolState::Chemistry { grid, .. } => Ok(grid),
            ProtocolState::Hilns { .. } => {
                Err(Error::Session("the grid exists only in chemistry sessions".into()))
            }
        }
    }

    pub fn respond(&mut self, saved: &[usize]) -> Result<()> {
        self.apply(SessionEvent::HilnsResponse {
            generation: self.generation,
            saved: saved.to_vec(),
        })
    }

    pub fn advance(&mut self, selection: ChemistrySelection) -> Result<()> {
        self.apply(SessionEvent::ChemistryAdvance {
            generation: self.generation,
            selection,
        })
    }

    /// Sets or clears (empty string) the label of a saved behavior.
    pub fn label(&mut self, index: usize, label: &str) -> Result<()> {
        self.apply(SessionEvent::Label {
            index,
            label: label.to_string(),
        })
    }

    pub fn finish(&mut self, saved: &[usize]) -> Result<()> {
        self.apply(SessionEvent::Finish { saved: saved.to_vec() })
    }

    /// Validates and applies one event, then appends it to the log.
    pub fn apply(&mut self, event: SessionEvent) -> Result<()> {
        match &event {
            SessionEvent::Created { .. } => {
                return Err(Error::Session("session already created".into()))
            }
            SessionEvent::HilnsResponse { generation, saved } => {
                self.expect_generation(*generation)?;
                let pending = self.pending_queries()?.to_vec();
                check_indices(saved, pending.len(), "saved")?;
                for &i in saved {
                    let q = &pending[i];
                    self.saved.push(SavedBehavior {
                        genome: q.genome,
                        seed: q.seed,
                        label: None,
                        generation: q.generation,
                        eval_id: Some(q.eval_id),
                        behavior: q.behavior.clone(),
                    });
                }
                self.generation += 1;
                self.run_generation()?;
            }
            SessionEvent::ChemistryAdvance { generation, selection } => {
                self.expect_generation(*generation)?;
                self.expect_awaiting()?;
                selection.validate()?;
                self.save_grid_slots(&selection.saved)?;
                let (mutation_rate, cross_mut) =
                    (self.config.mutation_rate, self.config.mutate_after_crossover);
                let next_gen = self.generation + 1;
                let seed = self.config.seed;
                let ProtocolState::Chemistry { rng, grid } = &mut self.state else {
                    return Err(Error::Session("selections apply only to chemistry sessions".into()));
                };
                let parents: Vec<Genome> = selection.selected.iter().map(|&i| grid[i].genome).collect();
                let next = chemistry_next(&parents, mutation_rate, cross_mut, rng)?;
                *grid = next
                    .into_iter()
                    .enumerate()
                    .map(|(i, (genome, origin))| GridSlot {
                        index: i,
                        genome,
                        seed: eval_seed(seed, (next_gen * GRID_SIZE + i) as u64),
                        origin,
                    })
                    .collect();
                self.generation = next_gen;
                if self.generation >= self.config.max_generations {
                    self.status = SessionStatus::Finished;
                }
            }
            SessionEvent::Label { index, .. } => {
                if *index >= self.saved.len() {
                    return Err(Error::Session(format!(
                        "no saved behavior {index} ({} saved)",
                        self.saved.len()
                    )));
                }
            }
            SessionEvent::Finish { saved } => {
                self.expect_awaiting()?;
                if !saved.is_empty() {
                    if self.protocol() != Protocol::Chemistry {
                        return Err(Error::Session(
                            "hilns saves go through responses, not finish".into(),
                        ));
                    }
                    check_indices(saved, GRID_SIZE, "saved")?;
                    self.save_grid_slots(saved)?;
                }
                self.status = SessionStatus::Finished;
                if let ProtocolState::Hilns { pending, .. } = &mut self.state {
                    pending.clear();
                }
            }
        }
        if let SessionEvent::Label { index, label } = &event {
            let trimmed = label.trim();
            self.saved[*index].label = (!trimmed.is_empty()).then(|| trimmed.to_string());
        }
        self.record(event)
    }

    fn expect_generation(&self, generation: usize) -> Result<()> {
        if generation != self.generation {
            return Err(Error::Session(format!(
                "stale generation {generation}; session is at generation {}",
                self.generation
            )));
        }
        Ok(())
    }

    fn expect_awaiting(&self) -> Result<()> {
        if self.status != SessionStatus::AwaitingHuman {
            return Err(Error::Session(format!("session {} is {:?}", self.id, self.status)));
        }
        Ok(())
    }

    fn save_grid_slots(&mut self, idx: &[usize]) -> Result<()> {
        let slots: Vec<GridSlot> = {
            let grid = self.grid()?;
            idx.iter().map(|&i| grid[i].clone()).collect()
        };
        for s in slots {
            let traj = simulate(&s.genome, &self.config.sim, s.seed)?;
            let behavior = self.featurizer.featurize(&traj)?.values;
            self.saved.push(SavedBehavior {
                genome: s.genome,
                seed: s.seed,
                label: None,
                generation: self.generation,
                eval_id: None,
                behavior,
            });
        }
        Ok(())
    }

    /// HIL-NS: evaluates the next generation and queues its top queries, or
    /// finishes after the last one. Swarm Chemistry: nothing to compute.
    fn run_generation(&mut self) -> Result<()> {
        self.status = SessionStatus::Evolving;
        if let ProtocolState::Hilns { search, pending } = &mut self.state {
            if search.is_finished() {
                pending.clear();
                self.status = SessionStatus::Finished;
                return Ok(());
            }
            let report = search.step()?;
            let archive = search.archive();
            *pending = report
                .top(QUERIES_PER_GENERATION)
                .iter()
                .enumerate()
                .map(|(rank, &(eval_id, novelty))| {
                    let e = archive.get(eval_id).expect("generation committed");
                    Query {
                        rank,
                        eval_id,
                        generation: report.generation,
                        genome: e.genome,
                        seed: e.seed,
                        novelty,
                        behavior: e.behavior.clone(),
                    }
                })
                .collect();
        }
        self.status = SessionStatus::AwaitingHuman;
        Ok(())
    }

    /// Re-simulates a genome under this session's simulation settings.
    pub fn trajectory(&self, genome: &Genome, seed: u64) -> Result<Trajectory> {
        simulate(genome, &self.config.sim, seed)
    }

    /// Thumbnail of a pending query (HIL-NS) or grid slot (Swarm Chemistry).
    pub fn thumbnail(&self, index: usize, mode: Representation, resolution: u32) -> Result<Raster> {
        let (genome, seed) = match &self.state {
            ProtocolState::Hilns { .. } => {
                let q = self
                    .pending_queries()?
                    .get(index)
                    .ok_or_else(|| Error::Session(format!("no query {index}")))?;
                (q.genome, q.seed)
            }
            ProtocolState::Chemistry { grid, .. } => {
                let s = grid
                    .get(index)
                    .ok_or_else(|| Error::Session(format!("no grid slot {index}")))?;
                (s.genome, s.seed)
            }
        };
        render_trajectory(&self.trajectory(&genome, seed)?, mode, resolution)
    }

    /// The saved behaviors as a taxonomy file with source `human`.
    pub fn export_taxonomy(&self) -> Taxonomy {
        let mut t = Taxonomy::new(
            TaxonomySource::Human,
            self.featurizer.dim(),
            self.config.sim.clone(),
            self.config.featurizer.clone(),
        );
        t.records = self
            .saved
            .iter()
            .enumerate()
            .map(|(i, s)| TaxonomyRecord {
                cluster_id: i,
                size: 1,
                eval_id: s.eval_id,
                generation: s.generation as i64,
                genome: s.genome,
                seed: s.seed,
                behavior: s.behavior.clone(),
                label: s.label.clone(),
            })
            .collect();
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::HandCrafted;

    fn quick(protocol: Protocol, seed: u64) -> SessionConfig {
        SessionConfig {
            protocol,
            seed,
            sim: SimConfig {
                n_agents: 24,
                horizon: 40,
                ..SimConfig::default()
            },
            search: SearchConfig {
                population: 10,
                ..SearchConfig::default()
            },
            featurizer: HandCrafted {
                mode: Representation::Aware,
                window: 20,
            }
            .spec(),
            max_generations: 4,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn chemistry_grid_matches_init() {
        let s = HilSession::create("c", quick(Protocol::Chemistry, 7)).unwrap();
        let g: Vec<Genome> = s.grid().unwrap().iter().map(|s| s.genome).collect();
        assert_eq!(g, chemistry_init(7));
        assert!(s.pending_queries().is_err());
    }

    #[test]
    fn chemistry_selection_rules() {
        let mut s = HilSession::create("c", quick(Protocol::Chemistry, 1)).unwrap();
        let bad = ChemistrySelection {
            selected: vec![],
            saved: vec![],
        };
        assert!(s.advance(bad).is_err());
        let bad = ChemistrySelection {
            selected: vec![0, 1, 2],
            saved: vec![],
        };
        assert!(s.advance(bad).is_err());
        assert_eq!(s.events().len(), 1, "rejected inputs are not logged");

        let parent = s.grid().unwrap()[3].genome;
        s.advance(ChemistrySelection {
            selected: vec![3],
            saved: vec![3, 5],
        })
        .unwrap();
        let grid = s.grid().unwrap();
        assert_eq!(grid[0].genome, parent);
        assert_eq!(grid[0].origin, SlotOrigin::Copy);
        assert_eq!(s.saved().len(), 2);
        assert_eq!(s.generation(), 1);
    }

    #[test]
    fn hilns_flow_and_replay() {
        let mut s = HilSession::create("h", quick(Protocol::Hilns, 3)).unwrap();
        let mut shown = Vec::new();
        while s.status() == SessionStatus::AwaitingHuman {
            let q = s.pending_queries().unwrap().to_vec();
            assert_eq!(q.len(), 3);
            assert!(q.windows(2).all(|w| w[0].novelty >= w[1].novelty));
            shown.push(q);
            s.respond(&[0, 2]).unwrap();
        }
        assert_eq!(shown.len(), 4);
        assert_eq!(s.saved().len(), 8);
        assert_eq!(s.archive().unwrap().len(), 40);
        assert!(s.respond(&[]).is_err());
        s.label(1, "  snake ").unwrap();
        s.label(2, "").unwrap();
        assert_eq!(s.saved()[1].label.as_deref(), Some("snake"));
        assert_eq!(s.saved()[2].label, None);

        let log = HilSession::read_log(&s.log_bytes().unwrap()[..]).unwrap();
        let r = HilSession::from_events(log).unwrap();
        assert_eq!(r.saved(), s.saved());
        assert_eq!(r.archive(), s.archive());
        assert_eq!(r.log_bytes().unwrap(), s.log_bytes().unwrap());
        assert_eq!(
            r.export_taxonomy().to_bytes().unwrap(),
            s.export_taxonomy().to_bytes().unwrap()
        );
    }

    #[test]
    fn stale_generation_rejected() {
        let mut s = HilSession::create("h", quick(Protocol::Hilns, 0)).unwrap();
        s.respond(&[]).unwrap();
        let stale = SessionEvent::HilnsResponse {
            generation: 0,
            saved: vec![],
        };
        assert!(matches!(s.apply(stale), Err(Error::Session(_))));
    }

    #[test]
    fn log_file_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let mut s = HilSession::create("p", quick(Protocol::Chemistry, 5)).unwrap();
        s.persist_to(&path).unwrap();
        s.advance(ChemistrySelection {
            selected: vec![1, 4],
            saved: vec![0],
        })
        .unwrap();
        s.label(0, "aggregation").unwrap();
        let r = HilSession::open_log(&path).unwrap();
        assert_eq!(r.grid().unwrap(), s.grid().unwrap());
        assert_eq!(r.saved(), s.saved());
        assert_eq!(r.log_bytes().unwrap(), s.log_bytes().unwrap());
    }
}
