//! HIL protocols driven through a running service. Artifacts mirror the
//! in-process run layout so downstream tooling cannot tell them apart.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetswarm::hil::SessionStatus;
use hetswarm::run::{
    scripted_selection, ChemistryPolicy, RunManifest, RunMode, RunSummary, TrialSummary,
    SUMMARY_FORMAT,
};
use hetswarm_api::CreateSession;
use hetswarm_client::Client;

use crate::CliError;

pub async fn execute(server: &str, manifest: &RunManifest) -> Result<RunSummary, CliError> {
    manifest.validate()?;
    let client = Client::new(server);
    let started = Instant::now();
    std::fs::create_dir_all(&manifest.output)?;
    manifest.save(manifest.output.join("manifest.json"))?;
    let mut trials = Vec::new();
    for &seed in &manifest.seeds {
        let t0 = Instant::now();
        let rel = format!("seed_{seed}");
        let dir = manifest.output.join(&rel);
        std::fs::create_dir_all(&dir)?;
        let mut trial = TrialSummary {
            seed,
            artifacts: Vec::new(),
            counts: serde_json::Map::new(),
            elapsed_ms: 0,
        };
        run_trial(&client, manifest, seed, &dir, &mut trial).await?;
        trial.artifacts = trial.artifacts.iter().map(|a| format!("{rel}/{a}")).collect();
        trial.elapsed_ms = t0.elapsed().as_millis() as u64;
        trials.push(trial);
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
        serde_json::to_vec_pretty(&summary).map_err(hetswarm::Error::from)?,
    )?;
    Ok(summary)
}

fn write(dir: &Path, trial: &mut TrialSummary, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(dir.join(name), bytes)?;
    trial.artifacts.push(name.into());
    Ok(())
}

async fn run_trial(
    client: &Client,
    m: &RunManifest,
    seed: u64,
    dir: &Path,
    trial: &mut TrialSummary,
) -> Result<(), CliError> {
    let (session, id) = match &m.mode {
        RunMode::Hilns { session, .. } | RunMode::Chemistry { session, .. } => {
            (session, format!("{}-{seed}", m.run_id))
        }
        other => {
            return Err(CliError::Usage(format!(
                "mode {} cannot run against a server",
                other.name()
            )))
        }
    };
    let req = CreateSession {
        config: Some(session.clone()),
        session_id: Some(id.clone()),
        ..CreateSession::new(session.protocol, seed)
    };
    let mut state = client.create_session(&req).await?;
    match &m.mode {
        RunMode::Hilns { policy, .. } => {
            let mut generations = 0usize;
            while state.status == SessionStatus::AwaitingHuman {
                let saved = policy.choose(state.queries.len());
                state = client.respond(&id, state.generation, &saved).await?;
                generations += 1;
            }
            let archive = client.session_archive_bytes(&id).await?.value;
            write(dir, trial, "archive.jsonl", &archive)?;
            trial.counts.insert("generations".into(), generations.into());
            trial.counts.insert(
                "archive_entries".into(),
                hetswarm::Archive::read_from(&archive[..])?.len().into(),
            );
        }
        RunMode::Chemistry { policy, steps, .. } => {
            let mut rng = match policy {
                ChemistryPolicy::Random { seed: p } => ChaCha8Rng::seed_from_u64(*p ^ seed),
                ChemistryPolicy::Fixed { .. } => ChaCha8Rng::seed_from_u64(0),
            };
            let mut advanced = 0usize;
            while advanced < *steps && state.status == SessionStatus::AwaitingHuman {
                let sel = scripted_selection(policy, &mut rng);
                state = client.select(&id, state.generation, &sel.selected, &sel.saved).await?;
                advanced += 1;
            }
            let grid: Vec<_> = state.grid.iter().map(|s| s.slot.clone()).collect();
            let bytes = serde_json::to_vec_pretty(&grid).map_err(hetswarm::Error::from)?;
            trial.counts.insert("advances".into(), advanced.into());
            write(dir, trial, "grid.json", &bytes)?;
        }
        _ => unreachable!("checked above"),
    }
    let events = client.events_bytes(&id).await?.value;
    write(dir, trial, "session.jsonl", &events)?;
    let taxonomy = client.taxonomy_bytes(&id).await?.value;
    write(dir, trial, "taxonomy.jsonl", &taxonomy)?;
    trial.counts.insert("saved".into(), state.saved.len().into());
    trial.counts.insert("session_id".into(), id.into());
    Ok(())
}
