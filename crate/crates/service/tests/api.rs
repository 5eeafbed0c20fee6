use std::path::Path;

use hetswarm::archive::Archive;
use hetswarm::hil::{chemistry_init, HilSession, Protocol, SessionConfig, SessionStatus};
use hetswarm::search::run_random_search;
use hetswarm::{simulate, HandCrafted, Representation, SearchConfig, SimConfig};
use hetswarm_api::{CreateSession, ReplayRequest};
use hetswarm_client::{Client, ClientError};
use hetswarm_service::{serve_on, AppState};
use reqwest_free::StatusCodeExt;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

/// Tiny status helper so this file needs no direct reqwest dependency.
mod reqwest_free {
    pub trait StatusCodeExt {
        fn code(&self) -> Option<u16>;
    }
    impl StatusCodeExt for hetswarm_client::ClientError {
        fn code(&self) -> Option<u16> {
            self.status().map(|s| s.as_u16())
        }
    }
}

struct Server {
    client: Client,
    task: JoinHandle<std::io::Result<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn start(dir: &Path) -> Server {
    let dir = dir.to_path_buf();
    let (state, failures) = tokio::task::spawn_blocking(move || AppState::open(dir))
        .await
        .unwrap()
        .unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let task = tokio::spawn(serve_on(listener, state));
    Server {
        client: Client::new(format!("http://{addr}")),
        task,
    }
}

fn small_sim() -> SimConfig {
    SimConfig {
        horizon: 40,
        ..SimConfig::default()
    }
}

fn small_hilns(seed: u64, generations: usize) -> CreateSession {
    let config = SessionConfig {
        sim: small_sim(),
        search: SearchConfig {
            population: 10,
            ..SearchConfig::default()
        },
        featurizer: hetswarm::metrics::FeaturizerSpec::HandCrafted {
            mode: Representation::Aware,
            window: 20,
        },
        max_generations: generations,
        ..SessionConfig::default()
    };
    CreateSession {
        config: Some(config),
        ..CreateSession::new(Protocol::Hilns, seed)
    }
}

fn small_chemistry(seed: u64) -> CreateSession {
    let config = SessionConfig {
        sim: small_sim(),
        featurizer: hetswarm::metrics::FeaturizerSpec::HandCrafted {
            mode: Representation::Aware,
            window: 20,
        },
        ..SessionConfig::default()
    };
    CreateSession {
        config: Some(config),
        ..CreateSession::new(Protocol::Chemistry, seed)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn chemistry_grid_is_the_seeded_init() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let health = srv.client.health().await.unwrap();
    assert_eq!(health.api_version, 1);

    let state = srv.client.create_session(&small_chemistry(7)).await.unwrap();
    assert_eq!(state.generation, 0);
    assert_eq!(state.status, SessionStatus::AwaitingHuman);
    let grid = srv.client.grid(&state.session_id).await.unwrap();
    let genomes: Vec<_> = grid.grid.iter().map(|s| s.slot.genome).collect();
    assert_eq!(genomes, chemistry_init(7));
    assert!(grid.grid[3].thumbnail.contains("/thumbnails/3"));

    let png = srv
        .client
        .thumbnail(&state.session_id, 3, Representation::Aware, 64)
        .await
        .unwrap();
    assert_eq!(&png.value[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(png.generation, Some(0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn conflicting_selections_first_wins() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let id = srv.client.create_session(&small_chemistry(3)).await.unwrap().session_id;

    let (a, b) = tokio::join!(
        srv.client.select(&id, 0, &[1], &[]),
        srv.client.select(&id, 0, &[2, 5], &[0]),
    );
    let (ok, err) = match (a, b) {
        (Ok(s), Err(e)) | (Err(e), Ok(s)) => (s, e),
        other => panic!("expected exactly one winner: {other:?}"),
    };
    assert_eq!(ok.generation, 1);
    assert!(err.is_conflict(), "{err}");
    match err {
        ClientError::Api { body, .. } => {
            assert_eq!(body.error.code, "stale_generation");
            assert_eq!(body.generation, Some(1));
        }
        other => panic!("{other}"),
    }

    // a refreshed client can continue
    let s = srv.client.session(&id).await.unwrap();
    assert_eq!(s.event_count, 2);
    srv.client.select(&id, s.generation, &[0, 1], &[]).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    assert_eq!(srv.client.session("missing").await.unwrap_err().code(), Some(404));

    let id = srv.client.create_session(&small_chemistry(1)).await.unwrap().session_id;
    let e = srv.client.select(&id, 0, &[0, 1, 2], &[]).await.unwrap_err();
    assert_eq!(e.code(), Some(422));
    let e = srv.client.select(&id, 0, &[9], &[]).await.unwrap_err();
    assert_eq!(e.code(), Some(422));
    let e = srv.client.respond(&id, 0, &[]).await.unwrap_err();
    assert_eq!(e.code(), Some(400));
    let e = srv.client.label(&id, 0, "nothing saved").await.unwrap_err();
    assert_eq!(e.code(), Some(422));
    // rejected inputs leave no trace in the log
    assert_eq!(srv.client.events(&id).await.unwrap().len(), 1);

    let mut dup = small_chemistry(1);
    dup.session_id = Some(id.clone());
    assert!(srv.client.create_session(&dup).await.unwrap_err().is_conflict());
    dup.session_id = Some("../escape".into());
    assert_eq!(srv.client.create_session(&dup).await.unwrap_err().code(), Some(400));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_hilns_export_matches_log_replay() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let generations = 6;
    let id = srv
        .client
        .create_session(&small_hilns(11, generations))
        .await
        .unwrap()
        .session_id;

    for g in 0..generations {
        let q = srv.client.queries(&id).await.unwrap();
        assert_eq!(q.generation, g);
        assert_eq!(q.queries.len(), 3);
        let saved: Vec<usize> = (0..3).filter(|i| (i + g) % 2 == 0).collect();
        let state = srv.client.respond(&id, g, &saved).await.unwrap();
        assert_eq!(state.generation, g + 1);
    }
    let state = srv.client.session(&id).await.unwrap();
    assert_eq!(state.status, SessionStatus::Finished);
    assert!(state.queries.is_empty());
    srv.client.label(&id, 0, "milling").await.unwrap();
    srv.client.label(&id, 1, "   ").await.unwrap();

    // the archive the queries were drawn from
    let archive = srv.client.session_archive(&id).await.unwrap();
    assert_eq!(archive.len(), generations * 10);

    let exported = srv.client.taxonomy_bytes(&id).await.unwrap();
    let events = srv.client.events(&id).await.unwrap();
    let rebuilt = tokio::task::spawn_blocking(move || HilSession::from_events(events).unwrap())
        .await
        .unwrap();
    assert_eq!(rebuilt.export_taxonomy().to_bytes().unwrap(), exported.value);

    let t = srv.client.taxonomy(&id).await.unwrap();
    assert_eq!(t.records[0].label.as_deref(), Some("milling"));
    assert_eq!(t.records[1].label, None);
    assert_eq!(t.len(), state.saved.len());

    // finished sessions refuse further responses
    assert!(srv.client.respond(&id, generations, &[]).await.unwrap_err().is_conflict());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_restores_sessions_from_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (chem, hil, grid_before, queries_before) = {
        let srv = start(dir.path()).await;
        let chem = srv.client.create_session(&small_chemistry(5)).await.unwrap().session_id;
        srv.client.select(&chem, 0, &[2], &[2, 4]).await.unwrap();
        srv.client.label(&chem, 1, "dispersal").await.unwrap();
        let hil = srv.client.create_session(&small_hilns(2, 4)).await.unwrap().session_id;
        srv.client.respond(&hil, 0, &[1]).await.unwrap();
        let grid = srv.client.grid(&chem).await.unwrap();
        let queries = srv.client.queries(&hil).await.unwrap();
        (chem, hil, grid, queries)
    };

    let srv = start(dir.path()).await;
    let ids: Vec<String> = srv
        .client
        .sessions()
        .await
        .unwrap()
        .sessions
        .into_iter()
        .map(|s| s.session_id)
        .collect();
    assert!(ids.contains(&chem) && ids.contains(&hil));
    assert_eq!(srv.client.grid(&chem).await.unwrap(), grid_before);
    assert_eq!(srv.client.queries(&hil).await.unwrap(), queries_before);
    let s = srv.client.session(&chem).await.unwrap();
    assert_eq!(s.saved.len(), 2);
    assert_eq!(s.saved[1].label.as_deref(), Some("dispersal"));

    // and the restored session keeps appending to the same log
    srv.client.select(&chem, 1, &[0, 7], &[]).await.unwrap();
    drop(srv);
    let srv = start(dir.path()).await;
    assert_eq!(srv.client.session(&chem).await.unwrap().generation, 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn replay_streams_match_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let genome = hetswarm::genome::named("cyclic-pursuit").unwrap();
    let sim = SimConfig {
        horizon: 120,
        ..SimConfig::default()
    };
    let req = |stride| ReplayRequest {
        genome,
        seed: 4,
        stride,
        sim: Some(sim.clone()),
    };

    let two = srv.client.replay(&req(120)).await.unwrap();
    assert_eq!(two.frames.len(), 2);
    assert_eq!((two.frames[0].t, two.frames[1].t), (0, 119));

    let (r1, r2) = (req(1), req(1));
    let (a, b) = tokio::join!(srv.client.replay(&r1), srv.client.replay(&r2));
    let (a, b) = (a.unwrap(), b.unwrap());
    assert_eq!(a, b);
    assert_eq!(a.frames.len(), 120);
    let traj = simulate(&genome, &sim, 4).unwrap();
    for f in &a.frames {
        for (p, s) in f.poses.iter().zip(traj.frame(f.t)) {
            assert_eq!(*p, [s.x, s.y, s.theta]);
        }
        assert_eq!(f.types, traj.types().map(|k| k.as_char()).collect::<String>());
    }

    let id = srv.client.create_session(&small_chemistry(9)).await.unwrap().session_id;
    let grid = srv.client.grid(&id).await.unwrap();
    let r = srv.client.session_replay(&id, 5, 10).await.unwrap();
    assert_eq!(r.meta.genome, grid.grid[5].slot.genome);
    assert_eq!(r.meta.seed, grid.grid[5].slot.seed);
    assert_eq!(r.frames.len(), 5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn archives_are_listed_and_downloadable() {
    let dir = tempfile::tempdir().unwrap();
    let f = HandCrafted {
        mode: Representation::Agnostic,
        window: 20,
    };
    let archive = run_random_search(7, &small_sim(), &f, 0).unwrap();
    std::fs::create_dir_all(dir.path().join("archives")).unwrap();
    archive.save(dir.path().join("archives/random-0.jsonl")).unwrap();
    std::fs::write(dir.path().join("archives/notes.txt"), "ignored").unwrap();

    let srv = start(dir.path()).await;
    let list = srv.client.archives().await.unwrap();
    assert_eq!(list.archives.len(), 1);
    assert_eq!(list.archives[0].name, "random-0.jsonl");
    assert_eq!(list.archives[0].entries, 7);
    assert_eq!(list.archives[0].dim, 5);
    let bytes = srv.client.archive_bytes("random-0.jsonl").await.unwrap();
    assert_eq!(bytes, archive.to_bytes().unwrap());
    assert_eq!(Archive::read_from(&bytes[..]).unwrap(), archive);
    assert_eq!(srv.client.archive_bytes("nope.jsonl").await.unwrap_err().code(), Some(404));
    assert_eq!(srv.client.archive_bytes("notes.txt").await.unwrap_err().code(), Some(404));
}
