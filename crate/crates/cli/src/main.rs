//! `hetswarm`: batch experiments, rendering, and the session service.
//!
//! Every run subcommand builds a [`RunManifest`], writes it next to its
//! artifacts, and prints the run summary as one JSON line on stdout. Failures
//! print one JSON line `{"error":{"code":…,"message":…}}` on stderr and exit
//! non-zero (2 for usage errors, 1 otherwise).

mod args;
mod remote;

use std::process::ExitCode;

use clap::Parser;

use hetswarm::hil::Protocol;
use hetswarm::render::render_trajectory;
use hetswarm::run::{execute, RunManifest, RunMode, RunSummary};
use hetswarm::search::GenerationReport;
use hetswarm::{simulate, SearchConfig};

use args::{Cli, Command, RunArgs, SimArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hetswarm::Error),
    #[error(transparent)]
    Client(#[from] hetswarm_client::ClientError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> String {
        match self {
            CliError::Usage(_) => "usage".into(),
            CliError::Core(e) => e.code().into(),
            CliError::Client(hetswarm_client::ClientError::Api { body, .. }) => body.error.code.clone(),
            CliError::Client(hetswarm_client::ClientError::Core(e)) => e.code().into(),
            CliError::Client(_) => "service".into(),
            CliError::Io(_) => "io".into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn diagnostic(code: &str, message: &str) -> String {
    serde_json::json!({ "error": { "code": code, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", diagnostic("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", diagnostic(&e.code(), &e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}

fn manifest(mode: RunMode, run: &RunArgs, sim: &SimArgs) -> RunManifest {
    RunManifest::new(mode, run.seed.clone(), sim.config(), &run.out)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let quiet = cli.quiet;
    let (m, dry_run, server) = match cli.command {
        Command::Novelty {
            run,
            sim,
            search,
            features,
        } => {
            let mode = RunMode::Novelty {
                search: search.config(),
                featurizer: features.spec()?,
            };
            (manifest(mode, &run, &sim), run.dry_run, None)
        }
        Command::Random {
            run,
            sim,
            n,
            features,
        } => {
            let mode = RunMode::Random {
                n,
                featurizer: features.spec()?,
            };
            (manifest(mode, &run, &sim), run.dry_run, None)
        }
        Command::Cluster {
            run,
            sim,
            archive,
            method,
            k,
            sigma,
            thumbnails,
            no_verify,
        } => {
            let mode = RunMode::Cluster {
                archive,
                cluster: method.config(k, sigma),
                thumbnails,
                verify: !no_verify,
            };
            (manifest(mode, &run, &sim), run.dry_run, None)
        }
        Command::Hilns {
            run,
            sim,
            search,
            features,
            max_generations,
            save,
            remote,
        } => {
            let session = args::session_config(
                Protocol::Hilns,
                sim.config(),
                search.config(),
                features.spec()?,
                max_generations,
            );
            let mode = RunMode::Hilns {
                session,
                policy: args::hilns_policy(&save)?,
            };
            (manifest(mode, &run, &sim), run.dry_run, remote.server)
        }
        Command::Chemistry {
            run,
            sim,
            features,
            steps,
            max_generations,
            select,
            save,
            policy_seed,
            chem_mutation_rate,
            mutate_after_crossover,
            remote,
        } => {
            let mut session = args::session_config(
                Protocol::Chemistry,
                sim.config(),
                SearchConfig::default(),
                features.spec()?,
                max_generations,
            );
            session.mutation_rate = chem_mutation_rate;
            session.mutate_after_crossover = mutate_after_crossover;
            let mode = RunMode::Chemistry {
                session,
                policy: args::chemistry_policy(&select, &save, policy_seed),
                steps,
            };
            (manifest(mode, &run, &sim), run.dry_run, remote.server)
        }
        Command::Replay {
            run,
            sim,
            genome,
            format,
            features,
            feature_args,
            render,
        } => {
            let mode = RunMode::Replay {
                genome: genome.genome()?,
                format: format.into(),
                featurizer: if features { Some(feature_args.spec()?) } else { None },
                render,
            };
            (manifest(mode, &run, &sim), run.dry_run, None)
        }
        Command::Sweep {
            run,
            sim,
            velocities,
            preset,
            etas,
            format,
            features,
        } => {
            let velocities: [f64; 8] = match (velocities, preset) {
                (Some(v), _) => v.try_into().map_err(|v: Vec<f64>| {
                    CliError::Usage(format!("--velocities needs 8 values, got {}", v.len()))
                })?,
                (None, Some(name)) => {
                    let g = args::preset(&name)?;
                    let a = g.a.0;
                    let b = g.b.0;
                    [a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]]
                }
                (None, None) => {
                    return Err(CliError::Usage("one of --velocities or --preset is required".into()))
                }
            };
            let mut mode = RunMode::default_sweep(velocities);
            if let RunMode::Sweep {
                etas: e,
                featurizer,
                format: f,
                ..
            } = &mut mode
            {
                if let Some(etas) = etas {
                    *e = etas;
                }
                *featurizer = features.spec()?;
                *f = format.into();
            }
            (manifest(mode, &run, &sim), run.dry_run, None)
        }
        Command::Render {
            sim,
            genome,
            seed,
            resolution,
            mode,
            out,
        } => {
            if resolution == 0 {
                return Err(CliError::Usage("--resolution must be positive".into()));
            }
            let traj = simulate(&genome.genome()?, &sim.config(), seed)?;
            render_trajectory(&traj, mode.into(), resolution)?.save_png(&out)?;
            println!("{}", serde_json::json!({ "output": out, "frames": traj.len() }));
            return Ok(());
        }
        Command::Run { manifest, out } => {
            let mut m = RunManifest::load(&manifest)?;
            if let Some(out) = out {
                m.output = out;
            }
            (m, false, None)
        }
        Command::Presets => {
            for (name, v) in hetswarm::genome::NAMED_CONTROLLERS {
                let values: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                println!("{name}\t{}", values.join(","));
            }
            return Ok(());
        }
        Command::Serve { bind, data_dir } => {
            return tokio_runtime()?
                .block_on(hetswarm_service::serve(bind, data_dir))
                .map_err(CliError::from);
        }
    };

    if dry_run {
        m.validate()?;
        std::fs::create_dir_all(&m.output)?;
        m.save(m.output.join("manifest.json"))?;
        println!("{}", serde_json::json!({ "manifest": m.output.join("manifest.json") }));
        return Ok(());
    }
    let summary = match server {
        Some(url) => tokio_runtime()?.block_on(remote::execute(&url, &m))?,
        None => execute(&m, |seed, r: &GenerationReport| {
            if !quiet {
                eprintln!(
                    "seed {seed} generation {} archive {} best {:.4}",
                    r.generation,
                    r.archive_size,
                    r.top(1).first().map_or(0.0, |t| t.1)
                );
            }
        })?,
    };
    print_summary(&summary);
    Ok(())
}

fn print_summary(summary: &RunSummary) {
    let trials: Vec<_> = summary
        .trials
        .iter()
        .map(|t| serde_json::json!({ "seed": t.seed, "counts": t.counts, "elapsed_ms": t.elapsed_ms }))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "run_id": summary.run_id,
            "mode": summary.mode,
            "output": summary.manifest.output,
            "elapsed_ms": summary.elapsed_ms,
            "trials": trials,
        })
    );
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, CliError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}
