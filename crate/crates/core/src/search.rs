//! Novelty search and random sampling over the two-type controller space.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveEntry, Provenance};
use crate::error::{Error, Result};
use crate::genome::{eta_grid, velocity_grid, Genome, GENOME_LEN};
use crate::metrics::{euclidean, Featurizer};
use crate::sim::{simulate, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub generations: usize,
    pub population: usize,
    pub p_neighbors: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub velocity_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            generations: 50,
            population: 100,
            p_neighbors: 14,
            mutation_rate: 0.15,
            crossover_rate: 0.7,
            velocity_grid: velocity_grid(),
            eta_grid: eta_grid(),
            rng_seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("mutation_rate and crossover_rate must lie in [0, 1]");
        }
        if self.p_neighbors < 1 {
            return bad("p_neighbors must be >= 1");
        }
        if self.velocity_grid.is_empty() || self.eta_grid.is_empty() {
            return bad("sampling grids must be nonempty");
        }
        if self.population < 1 {
            return bad("population must be >= 1");
        }
        Ok(())
    }

    pub fn grids(&self) -> Grids<'_> {
        Grids {
            velocity: &self.velocity_grid,
            eta: &self.eta_grid,
        }
    }

    /// Number of distinct genomes on the grids: `|velocities|^8 * |etas|`.
    pub fn search_space_size(&self) -> u128 {
        (self.velocity_grid.len() as u128).pow(8) * self.eta_grid.len() as u128
    }
}

/// Borrowed sampling grids.
#[derive(Clone, Copy, Debug)]
pub struct Grids<'a> {
    pub velocity: &'a [f64],
    pub eta: &'a [f64],
}

impl Grids<'_> {
    fn slot<R: Rng + ?Sized>(&self, slot: usize, rng: &mut R) -> f64 {
        if slot < 8 {
            self.velocity[rng.gen_range(0..self.velocity.len())]
        } else {
            self.eta[rng.gen_range(0..self.eta.len())]
        }
    }
}

/// Uniform draw from the default grids.
pub fn sample_genome<R: Rng + ?Sized>(rng: &mut R) -> Genome {
    let (v, e) = (velocity_grid(), eta_grid());
    sample_genome_on(Grids { velocity: &v, eta: &e }, rng)
}

pub fn sample_genome_on<R: Rng + ?Sized>(grids: Grids<'_>, rng: &mut R) -> Genome {
    let mut out = [0.0; GENOME_LEN];
    for (slot, v) in out.iter_mut().enumerate() {
        *v = grids.slot(slot, rng);
    }
    Genome::from_array(out)
}

/// Independently resamples each slot from its grid with probability `rate`.
pub fn mutate<R: Rng + ?Sized>(genome: &Genome, rate: f64, grids: Grids<'_>, rng: &mut R) -> Genome {
    let mut out = genome.to_array();
    for (slot, v) in out.iter_mut().enumerate() {
        if rng.gen::<f64>() < rate {
            *v = grids.slot(slot, rng);
        }
    }
    Genome::from_array(out)
}

/// Uniform crossover: each slot from either parent with probability 1/2.
pub fn crossover<R: Rng + ?Sized>(g1: &Genome, g2: &Genome, rng: &mut R) -> Genome {
    let (a, b) = (g1.to_array(), g2.to_array());
    let mut out = [0.0; GENOME_LEN];
    for i in 0..GENOME_LEN {
        out[i] = if rng.gen::<bool>() { a[i] } else { b[i] };
    }
    Genome::from_array(out)
}

/// Mean distance from `v` to its `p` nearest archive entries (all entries when
/// the archive holds fewer than `p`).
pub fn novelty_score(v: &[f64], archive: &Archive, p: usize) -> Result<f64> {
    if v.len() != archive.dim() {
        return Err(Error::DimensionMismatch {
            expected: archive.dim(),
            actual: v.len(),
        });
    }
    novelty_among(v, archive.entries(), p, None)
}

/// Novelty of `v` against `entries`, skipping the entry with `exclude` as eval_id.
/// Neighbors are ranked by (distance, eval_id) so the result does not depend on
/// entry order.
pub fn novelty_among(
    v: &[f64],
    entries: &[ArchiveEntry],
    p: usize,
    exclude: Option<u64>,
) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidConfig("p must be >= 1".into()));
    }
    let mut dists: Vec<(f64, u64)> = entries
        .iter()
        .filter(|e| Some(e.eval_id) != exclude)
        .map(|e| {
            if e.behavior.len() != v.len() {
                return Err(Error::DimensionMismatch {
                    expected: v.len(),
                    actual: e.behavior.len(),
                });
            }
            Ok((euclidean(v, &e.behavior), e.eval_id))
        })
        .collect::<Result<_>>()?;
    if dists.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let cmp = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = p.min(dists.len());
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, cmp);
    }
    let nearest = &mut dists[..k];
    nearest.sort_by(cmp);
    Ok(nearest.iter().map(|d| d.0).sum::<f64>() / k as f64)
}

/// Seed of the simulation behind evaluation `eval_id`; independent of the
/// evolutionary RNG stream.
pub fn eval_seed(rng_seed: u64, eval_id: u64) -> u64 {
    splitmix64(splitmix64(rng_seed) ^ eval_id)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates and featurizes one genome.
pub fn evaluate(
    genome: &Genome,
    eval_id: u64,
    generation: i64,
    seed: u64,
    sim: &SimConfig,
    featurizer: &dyn Featurizer,
) -> Result<ArchiveEntry> {
    let wrap = |e: Error| Error::Evaluation {
        eval_id,
        source: Box::new(e),
    };
    let traj = simulate(genome, sim, seed).map_err(wrap)?;
    let bv = featurizer.featurize(&traj).map_err(wrap)?;
    if bv.dim() != featurizer.dim() {
        return Err(wrap(Error::DimensionMismatch {
            expected: featurizer.dim(),
            actual: bv.dim(),
        }));
    }
    Ok(ArchiveEntry {
        eval_id,
        generation,
        seed,
        genome: *genome,
        behavior: bv.values,
        novelty: None,
        degenerate: bv.degenerate,
    })
}

/// Evaluates a batch in parallel; results come back in input order.
fn evaluate_batch(
    genomes: &[Genome],
    first_eval_id: u64,
    generation: i64,
    rng_seed: u64,
    sim: &SimConfig,
    featurizer: &dyn Featurizer,
) -> Result<Vec<ArchiveEntry>> {
    genomes
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let id = first_eval_id + i as u64;
            evaluate(g, id, generation, eval_seed(rng_seed, id), sim, featurizer)
        })
        .collect()
}

/// Binary tournament on novelty; ties resolved by a fair coin.
fn tournament<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    let i = rng.gen_range(0..scores.len());
    let j = rng.gen_range(0..scores.len());
    match scores[i].total_cmp(&scores[j]) {
        std::cmp::Ordering::Greater => i,
        std::cmp::Ordering::Less => j,
        std::cmp::Ordering::Equal => {
            if rng.gen::<bool>() {
                i
            } else {
                j
            }
        }
    }
}

/// Produces offspring from scored parents: binary-tournament selection, uniform
/// crossover with probability `crossover_rate` (else a clone of the first parent),
/// then per-slot mutation.
pub fn breed<R: Rng + ?Sized>(
    parents: &[Genome],
    scores: &[f64],
    config: &SearchConfig,
    rng: &mut R,
) -> Vec<Genome> {
    let grids = config.grids();
    (0..config.population)
        .map(|_| {
            let first = parents[tournament(scores, rng)];
            let child = if rng.gen::<f64>() < config.crossover_rate {
                let second = parents[tournament(scores, rng)];
                crossover(&first, &second, rng)
            } else {
                first
            };
            mutate(&child, config.mutation_rate, grids, rng)
        })
        .collect()
}

/// Commits an evaluated generation to the archive, scores each member against
/// the archive (excluding itself), and breeds the next population.
pub fn evolve_generation<R: Rng + ?Sized>(
    evaluated: Vec<ArchiveEntry>,
    archive: &mut Archive,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<(Vec<Genome>, Vec<f64>)> {
    let ids: Vec<u64> = evaluated.iter().map(|e| e.eval_id).collect();
    let parents: Vec<Genome> = evaluated.iter().map(|e| e.genome).collect();
    for e in evaluated {
        archive.push(e)?;
    }
    let scores: Vec<f64> = ids
        .par_iter()
        .map(|&id| {
            let e = archive.get(id).expect("just committed");
            novelty_among(&e.behavior, archive.entries(), config.p_neighbors, Some(id))
        })
        .collect::<Result<_>>()?;
    for (&id, &s) in ids.iter().zip(&scores) {
        archive.set_novelty(id, s);
    }
    Ok((breed(&parents, &scores, config, rng), scores))
}

/// Summary of one completed generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: usize,
    pub first_eval_id: u64,
    pub archive_size: usize,
    /// `(eval_id, novelty)` of the generation, most novel first, ties by eval_id.
    pub ranked: Vec<(u64, f64)>,
}

impl GenerationReport {
    pub fn top(&self, n: usize) -> &[(u64, f64)] {
        &self.ranked[..n.min(self.ranked.len())]
    }
}

/// Steppable novelty search. Each [`NoveltySearch::step`] evaluates the pending
/// population, commits it, and prepares the next one.
pub struct NoveltySearch {
    config: SearchConfig,
    sim: SimConfig,
    featurizer: Arc<dyn Featurizer>,
    rng: ChaCha8Rng,
    archive: Archive,
    population: Vec<Genome>,
    generation: usize,
}

impl NoveltySearch {
    pub fn new(config: SearchConfig, sim: SimConfig, featurizer: Arc<dyn Featurizer>) -> Result<Self> {
        config.validate()?;
        sim.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let population = (0..config.population)
            .map(|_| sample_genome_on(config.grids(), &mut rng))
            .collect();
        let archive = Archive::new(
            featurizer.dim(),
            sim.clone(),
            featurizer.spec(),
            Provenance::Novelty {
                search: config.clone(),
            },
        );
        Ok(NoveltySearch {
            config,
            sim,
            featurizer,
            rng,
            archive,
            population,
            generation: 0,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn into_archive(self) -> Archive {
        self.archive
    }

    /// Generations completed so far.
    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn is_finished(&self) -> bool {
        self.generation >= self.config.generations
    }

    pub fn step(&mut self) -> Result<GenerationReport> {
        if self.is_finished() {
            return Err(Error::InvalidConfig(format!(
                "search already ran all {} generations",
                self.config.generations
            )));
        }
        let first = self.archive.next_eval_id();
        let evaluated = evaluate_batch(
            &self.population,
            first,
            self.generation as i64,
            self.config.rng_seed,
            &self.sim,
            self.featurizer.as_ref(),
        )?;
        let (next, scores) =
            evolve_generation(evaluated, &mut self.archive, &self.config, &mut self.rng)?;
        let mut ranked: Vec<(u64, f64)> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (first + i as u64, s))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let report = GenerationReport {
            generation: self.generation,
            first_eval_id: first,
            archive_size: self.archive.len(),
            ranked,
        };
        self.population = next;
        self.generation += 1;
        Ok(report)
    }
}

/// Runs all generations, reporting each to `progress`.
pub fn run_novelty_search(
    config: &SearchConfig,
    sim: &SimConfig,
    featurizer: Arc<dyn Featurizer>,
    mut progress: impl FnMut(&GenerationReport),
) -> Result<Archive> {
    let mut search = NoveltySearch::new(config.clone(), sim.clone(), featurizer)?;
    while !search.is_finished() {
        let report = search.step()?;
        progress(&report);
    }
    Ok(search.into_archive())
}

/// `n` independent uniform samples, each evaluated once.
pub fn run_random_search(
    n: usize,
    sim: &SimConfig,
    featurizer: &dyn Featurizer,
    rng_seed: u64,
) -> Result<Archive> {
    sim.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let genomes: Vec<Genome> = (0..n).map(|_| sample_genome(&mut rng)).collect();
    let mut archive = Archive::new(
        featurizer.dim(),
        sim.clone(),
        featurizer.spec(),
        Provenance::Random { n, rng_seed },
    );
    for e in evaluate_batch(&genomes, 0, -1, rng_seed, sim, featurizer)? {
        archive.push(e)?;
    }
    Ok(archive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::HandCrafted;

    fn grids() -> (Vec<f64>, Vec<f64>) {
        (velocity_grid(), eta_grid())
    }

    #[test]
    fn declared_space_size() {
        let n = SearchConfig::default().search_space_size();
        assert_eq!(n, 21u128.pow(8) * 5);
        assert_eq!(n, 189_114_296_805);
        // three significant figures: 1.89e11
        assert_eq!((n as f64 / 1e9).round() as u64, 189);
    }

    #[test]
    fn samples_lie_on_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let g = sample_genome(&mut rng);
            g.validate_strict(24).unwrap();
        }
    }

    #[test]
    fn mutation_extremes() {
        let (v, e) = grids();
        let gr = Grids { velocity: &v, eta: &e };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = sample_genome(&mut rng);
        assert_eq!(mutate(&g, 0.0, gr, &mut rng), g);
        let m = mutate(&g, 1.0, gr, &mut rng);
        m.validate_strict(24).unwrap();
    }

    #[test]
    fn crossover_of_identical_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = sample_genome(&mut rng);
        assert_eq!(crossover(&g, &g, &mut rng), g);
    }

    #[test]
    fn novelty_hand_example() {
        let a = Archive::from_points(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(novelty_score(&[0.0, 0.0], &a, 2).unwrap(), 2.5);
        assert_eq!(novelty_score(&[0.0, 0.0], &a, 1).unwrap(), 0.0);
        // fewer entries than p: average over all
        assert_eq!(novelty_score(&[0.0, 0.0], &a, 14).unwrap(), 2.5);
    }

    #[test]
    fn novelty_errors() {
        let a = Archive::from_points(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            novelty_score(&[0.0], &a, 2),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty = Archive::from_points(&[]).unwrap();
        assert!(matches!(novelty_score(&[], &empty, 2), Err(Error::EmptyArchive)));
    }

    #[test]
    fn identical_archive_gives_zero() {
        let a = Archive::from_points(&vec![vec![0.3, 0.1, 0.9]; 20]).unwrap();
        assert_eq!(novelty_score(&[0.3, 0.1, 0.9], &a, 14).unwrap(), 0.0);
    }

    #[test]
    fn eval_seeds_differ() {
        assert_ne!(eval_seed(0, 0), eval_seed(0, 1));
        assert_ne!(eval_seed(0, 1), eval_seed(1, 0));
        assert_eq!(eval_seed(7, 42), eval_seed(7, 42));
    }

    #[test]
    fn zero_rates_breed_a_multiset_of_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let parents: Vec<Genome> = (0..10).map(|_| sample_genome(&mut rng)).collect();
        let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cfg = SearchConfig {
            population: 10,
            mutation_rate: 0.0,
            crossover_rate: 0.0,
            ..SearchConfig::default()
        };
        for child in breed(&parents, &scores, &cfg, &mut rng) {
            assert!(parents.contains(&child));
        }
    }

    #[test]
    fn random_search_sizes() {
        let sim = SimConfig {
            horizon: 30,
            ..SimConfig::default()
        };
        let f = HandCrafted::default();
        let a = run_random_search(0, &sim, &f, 0).unwrap();
        assert!(a.is_empty());
        let a = run_random_search(12, &sim, &f, 0).unwrap();
        assert_eq!(a.len(), 12);
        assert!(a.entries().iter().all(|e| e.generation == -1 && e.novelty.is_none()));
    }

    #[test]
    fn search_config_validation() {
        let c = SearchConfig {
            mutation_rate: 1.5,
            ..SearchConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SearchConfig {
            p_neighbors: 0,
            ..SearchConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
