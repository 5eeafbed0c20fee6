use std::sync::Arc;

use hetswarm::archive::Archive;
use hetswarm::genome::{eta_grid, velocity_grid};
use hetswarm::search::{
    breed, crossover, mutate, novelty_among, novelty_score, run_novelty_search, run_random_search,
    sample_genome, SearchConfig,
};
use hetswarm::{Error, Genome, HandCrafted, Representation, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Upper 1% points of the chi-square distribution.
const CHI2_99_DF4: f64 = 13.277;
const CHI2_99_DF9: f64 = 21.666;
const CHI2_99_DF20: f64 = 37.566;

fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

fn grid_index(grid: &[f64], v: f64) -> usize {
    grid.iter().position(|&g| g == v).expect("value on grid")
}

fn tiny_sim() -> SimConfig {
    SimConfig {
        horizon: 12,
        ..SimConfig::default()
    }
}

fn hand_crafted() -> HandCrafted {
    HandCrafted {
        mode: Representation::Aware,
        window: 8,
    }
}

#[test]
fn sampler_is_uniform_on_every_slot() {
    let (vg, eg) = (velocity_grid(), eta_grid());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut vel = vec![vec![0usize; 21]; 8];
    let mut eta = vec![0usize; 5];
    for _ in 0..10_000 {
        let g = sample_genome(&mut rng);
        g.validate_strict(24).unwrap();
        for (slot, v) in g.velocities().enumerate() {
            vel[slot][grid_index(&vg, v)] += 1;
        }
        eta[grid_index(&eg, g.eta)] += 1;
    }
    for (slot, counts) in vel.iter().enumerate() {
        let x2 = chi_square(counts);
        assert!(x2 < CHI2_99_DF20, "slot {slot}: chi2 = {x2}");
    }
    assert!(chi_square(&eta) < CHI2_99_DF4);
}

#[test]
fn mutation_changes_the_expected_number_of_slots() {
    let cfg = SearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 10_000;
    let mut changed = 0usize;
    for _ in 0..trials {
        let g = sample_genome(&mut rng);
        let m = mutate(&g, 0.15, cfg.grids(), &mut rng);
        changed += g
            .to_array()
            .iter()
            .zip(m.to_array())
            .filter(|(a, b)| **a != *b)
            .count();
    }
    // a resample lands on the old value with probability 1/|grid|
    let (pv, pe) = (0.15 * 20.0 / 21.0, 0.15 * 4.0 / 5.0);
    let mean = 8.0 * pv + pe;
    let var = 8.0 * pv * (1.0 - pv) + pe * (1.0 - pe);
    let sigma = (var / trials as f64).sqrt();
    let observed = changed as f64 / trials as f64;
    assert!((observed - mean).abs() <= 3.0 * sigma, "{observed} vs {mean} ± {}", 3.0 * sigma);
}

#[test]
fn mutation_rate_extremes() {
    let cfg = SearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = sample_genome(&mut rng);
    assert_eq!(mutate(&g, 0.0, cfg.grids(), &mut rng), g);
    let fresh = (0..200)
        .map(|_| mutate(&g, 1.0, cfg.grids(), &mut rng))
        .filter(|m| *m != g)
        .count();
    assert!(fresh >= 199);
}

#[test]
fn crossover_slot_origins_are_fair_coins() {
    let g1 = Genome::new([1.0; 4], [1.0; 4], 1.0 / 24.0);
    let g2 = Genome::new([-1.0; 4], [-1.0; 4], 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    assert_eq!(crossover(&g1, &g1, &mut rng), g1);
    let trials = 10_000;
    let mut from_first = 0usize;
    for _ in 0..trials {
        let c = crossover(&g1, &g2, &mut rng).to_array();
        for (i, v) in c.iter().enumerate() {
            let (a, b) = (g1.to_array()[i], g2.to_array()[i]);
            assert!(*v == a || *v == b);
            from_first += (*v == a) as usize;
        }
    }
    let n = (trials * 9) as f64;
    let sigma = (0.25 / n).sqrt();
    assert!((from_first as f64 / n - 0.5).abs() <= 3.0 * sigma);
}

#[test]
fn equal_scores_select_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let parents: Vec<Genome> = (0..10).map(|_| sample_genome(&mut rng)).collect();
    let cfg = SearchConfig {
        population: 10,
        mutation_rate: 0.0,
        crossover_rate: 0.0,
        ..SearchConfig::default()
    };
    let scores = vec![1.5; 10];
    let mut counts = vec![0usize; 10];
    for _ in 0..2000 {
        for child in breed(&parents, &scores, &cfg, &mut rng) {
            counts[parents.iter().position(|p| *p == child).expect("child is a parent")] += 1;
        }
    }
    assert!(chi_square(&counts) < CHI2_99_DF9, "{counts:?}");
}

#[test]
fn selection_prefers_novel_parents() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let parents: Vec<Genome> = (0..4).map(|_| sample_genome(&mut rng)).collect();
    let cfg = SearchConfig {
        population: 4,
        mutation_rate: 0.0,
        crossover_rate: 0.0,
        ..SearchConfig::default()
    };
    let scores = [0.0, 1.0, 2.0, 3.0];
    let mut counts = [0usize; 4];
    for _ in 0..4000 {
        for child in breed(&parents, &scores, &cfg, &mut rng) {
            counts[parents.iter().position(|p| *p == child).unwrap()] += 1;
        }
    }
    // binary tournament picks rank i (0-based, ascending) with prob (2i+1)/16
    for (i, &c) in counts.iter().enumerate() {
        let p = (2 * i + 1) as f64 / 16.0;
        let n = 16_000.0;
        assert!((c as f64 - n * p).abs() <= 4.0 * (n * p * (1.0 - p)).sqrt(), "{counts:?}");
    }
}

#[test]
fn novelty_hand_examples() {
    let a = Archive::from_points(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(novelty_score(&[0.0, 0.0], &a, 2).unwrap(), 2.5);
    assert_eq!(novelty_score(&[0.0, 0.0], &a, 14).unwrap(), 2.5);
    let same = Archive::from_points(&vec![vec![1.0, 2.0]; 5]).unwrap();
    assert_eq!(novelty_score(&[1.0, 2.0], &same, 3).unwrap(), 0.0);
    assert!(matches!(novelty_score(&[1.0], &a, 2), Err(Error::DimensionMismatch { .. })));
    let empty = Archive::from_points(&[]).unwrap();
    assert!(novelty_among(&[0.0], empty.entries(), 3, None).is_err());
}

#[test]
fn novelty_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let a = Archive::from_points(&pts).unwrap();
    for q in &pts {
        let mut d: Vec<f64> = pts
            .iter()
            .map(|p| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        let oracle = d[..14].iter().sum::<f64>() / 14.0;
        assert!((novelty_score(q, &a, 14).unwrap() - oracle).abs() <= 1e-9);
    }
}

#[test]
fn novelty_search_bookkeeping_and_replay() {
    let cfg = SearchConfig {
        generations: 4,
        population: 12,
        rng_seed: 3,
        ..SearchConfig::default()
    };
    let f = Arc::new(hand_crafted());
    let mut sizes = Vec::new();
    let archive = run_novelty_search(&cfg, &tiny_sim(), f.clone(), |r| sizes.push(r.archive_size)).unwrap();
    assert_eq!(sizes, vec![12, 24, 36, 48]);
    assert_eq!(archive.len(), 48);
    for (i, e) in archive.entries().iter().enumerate() {
        assert_eq!(e.eval_id, i as u64);
        assert_eq!(e.generation, (i / 12) as i64);
    }

    // novelty recorded at run time equals a post-hoc recomputation against
    // the archive as it stood once that generation was committed
    for g in 0..4 {
        let prefix = &archive.entries()[..(g + 1) * 12];
        for e in &prefix[g * 12..] {
            let again = novelty_among(&e.behavior, prefix, cfg.p_neighbors, Some(e.eval_id)).unwrap();
            assert_eq!(Some(again), e.novelty);
        }
    }

    let again = run_novelty_search(&cfg, &tiny_sim(), f, |_| {}).unwrap();
    assert_eq!(again.to_bytes().unwrap(), archive.to_bytes().unwrap());
}

#[test]
fn operator_bypass_keeps_parents() {
    let cfg = SearchConfig {
        generations: 2,
        population: 10,
        mutation_rate: 0.0,
        crossover_rate: 0.0,
        rng_seed: 8,
        ..SearchConfig::default()
    };
    let archive = run_novelty_search(&cfg, &tiny_sim(), Arc::new(hand_crafted()), |_| {}).unwrap();
    let first: Vec<Genome> = archive.generation(0).map(|e| e.genome).collect();
    for e in archive.generation(1) {
        assert!(first.contains(&e.genome));
    }
}

#[test]
fn random_search_sizes_and_uniformity() {
    let f = hand_crafted();
    let empty = run_random_search(0, &tiny_sim(), &f, 0).unwrap();
    assert!(empty.is_empty());
    assert_eq!(empty.dim(), 15);

    let a = run_random_search(3000, &tiny_sim(), &f, 1).unwrap();
    assert_eq!(a.len(), 3000);
    let vg = velocity_grid();
    let mut counts = vec![0usize; 21];
    for e in a.entries() {
        assert_eq!(e.generation, -1);
        for v in e.genome.velocities() {
            counts[grid_index(&vg, v)] += 1;
        }
    }
    assert!(chi_square(&counts) < CHI2_99_DF20);
}

#[test]
fn evaluation_errors_carry_eval_id() {
    let sim = SimConfig {
        n_agents: 4,
        horizon: 5,
        ..SimConfig::default()
    };
    // with 4 agents most eta values leave type A empty
    let err = run_random_search(50, &sim, &hand_crafted(), 0).unwrap_err();
    assert!(matches!(err, Error::Evaluation { .. }), "{err}");
}
