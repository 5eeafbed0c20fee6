use std::sync::Arc;
use std::time::Duration;

use hetswarm::embed::{build_featurizer, EmbedError, PluginEmbedder, PluginFeaturizer};
use hetswarm::metrics::FeaturizerSpec;
use hetswarm::render::render_trajectory;
use hetswarm::search::run_novelty_search;
use hetswarm::{Error, Featurizer, Representation, SearchConfig, SimConfig};

fn echo(extra: &[&str]) -> Vec<String> {
    let mut cmd = vec![env!("CARGO_BIN_EXE_hetswarm-echo-embedder").to_string()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

fn spawn(extra: &[&str]) -> Result<PluginEmbedder, EmbedError> {
    PluginEmbedder::spawn(&echo(extra), Duration::from_secs(10))
}

fn sim() -> SimConfig {
    SimConfig {
        horizon: 40,
        ..SimConfig::default()
    }
}

fn traj() -> hetswarm::Trajectory {
    let g = hetswarm::genome::named("milling").unwrap();
    hetswarm::simulate(&g, &sim(), 3).unwrap()
}

#[test]
fn handshake_is_read() {
    let p = spawn(&["--name", "probe", "--dim", "7", "--mode", "aware"]).unwrap();
    assert_eq!(p.handshake().name, "probe");
    assert_eq!(p.handshake().dim, 7);
    assert_eq!(p.handshake().mode, Representation::Aware);
}

#[test]
fn aware_plugin_vectors_are_whole_then_types() {
    let f = PluginFeaturizer::new(spawn(&["--dim", "4"]).unwrap(), Representation::Aware, 48);
    assert_eq!(f.dim(), 12);
    let t = traj();
    let v = f.featurize(&t).unwrap();
    assert_eq!(v.values.len(), 12);
    assert!(v.values.iter().all(|x| (0.0..=1.0).contains(x)));

    // the whole-swarm image is at least as bright as either type image
    for i in 0..4 {
        assert!(v.values[i] >= v.values[4 + i] - 1e-12);
        assert!(v.values[i] >= v.values[8 + i] - 1e-12);
    }

    let agnostic = PluginFeaturizer::new(spawn(&["--dim", "4"]).unwrap(), Representation::Agnostic, 48);
    let img = render_trajectory(&t, Representation::Agnostic, 48).unwrap();
    assert_eq!(img.channels, 1);
    assert_eq!(agnostic.featurize(&t).unwrap().values.len(), 4);
}

#[test]
fn reply_errors_are_typed() {
    let img = render_trajectory(&traj(), Representation::Agnostic, 16).unwrap();

    let mut p = spawn(&["--dim", "3", "--extra"]).unwrap();
    assert!(matches!(p.embed(&img), Err(EmbedError::DimensionMismatch { expected: 3, actual: 4 })));

    let mut p = spawn(&["--nan"]).unwrap();
    assert!(matches!(p.embed(&img), Err(EmbedError::NonFinite(0))));

    let mut p = PluginEmbedder::spawn(&echo(&["--delay-ms", "2000"]), Duration::from_millis(100)).unwrap();
    assert!(matches!(p.embed(&img), Err(EmbedError::Timeout(_))));
    assert!(matches!(p.embed(&img), Err(EmbedError::Poisoned)));

    assert!(matches!(
        PluginEmbedder::spawn(&["/nonexistent/embedder".to_string()], Duration::from_secs(1)),
        Err(EmbedError::Spawn { .. })
    ));
    assert!(matches!(spawn(&["--dim", "0"]), Err(EmbedError::Handshake(_))));
}

#[test]
fn archive_records_plugin_and_rebuilds_it() {
    let f: Arc<dyn Featurizer> = Arc::new(PluginFeaturizer::new(
        spawn(&["--name", "echo5"]).unwrap(),
        Representation::Aware,
        32,
    ));
    let cfg = SearchConfig {
        generations: 2,
        population: 6,
        rng_seed: 1,
        ..SearchConfig::default()
    };
    let archive = run_novelty_search(&cfg, &sim(), f, |_| {}).unwrap();
    assert_eq!(archive.dim(), 15);
    let spec = archive.header.featurizer.clone();
    assert!(matches!(&spec, FeaturizerSpec::Plugin { name, dim: 5, .. } if name == "echo5"));

    let rebuilt = build_featurizer(&spec).unwrap();
    for e in archive.entries() {
        let t = hetswarm::simulate(&e.genome, &archive.header.sim, e.seed).unwrap();
        assert_eq!(rebuilt.featurize(&t).unwrap().values, e.behavior);
    }

    let mut wrong = spec.clone();
    if let FeaturizerSpec::Plugin { dim, .. } = &mut wrong {
        *dim = 6;
    }
    assert!(build_featurizer(&wrong).is_err());
}

#[test]
fn plugin_failure_surfaces_as_evaluation_error() {
    let f: Arc<dyn Featurizer> = Arc::new(PluginFeaturizer::new(
        spawn(&["--nan"]).unwrap(),
        Representation::Agnostic,
        16,
    ));
    let cfg = SearchConfig {
        generations: 1,
        population: 3,
        ..SearchConfig::default()
    };
    let err = run_novelty_search(&cfg, &sim(), f, |_| {}).unwrap_err();
    match err {
        Error::Evaluation { source, .. } => assert!(matches!(*source, Error::Embed(EmbedError::NonFinite(0)))),
        other => panic!("unexpected {other}"),
    }
}
