use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hetswarm::cluster::{ClusterConfig, ClusterMethod};
use hetswarm::genome::{eta_grid, named, velocity_grid, NAMED_CONTROLLERS};
use hetswarm::hil::{Protocol, SessionConfig, DEFAULT_MAX_GENERATIONS};
use hetswarm::metrics::{FeaturizerSpec, DEFAULT_WINDOW};
use hetswarm::run::{ChemistryPolicy, HilnsPolicy, TrajectoryFormat};
use hetswarm::{Genome, Representation, SearchConfig, SimConfig};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "hetswarm", version, about = "Heterogeneous swarm behavior discovery")]
pub struct Cli {
    /// Suppress per-generation progress on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Novelty search; one archive per seed.
    Novelty {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Uniform random sampling baseline.
    Random {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Number of evaluations.
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Cluster an archive into a behavior taxonomy.
    Cluster {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Input archive (JSON Lines).
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Kmedoids)]
        method: MethodArg,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Spectral kernel width; defaults to the median pairwise distance.
        #[arg(long)]
        sigma: Option<f64>,
        /// Also render representative thumbnails at this resolution.
        #[arg(long)]
        thumbnails: Option<u32>,
        /// Skip re-simulating representatives.
        #[arg(long)]
        no_verify: bool,
    },
    /// Scripted HIL novelty search session(s).
    Hilns {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long, default_value_t = DEFAULT_MAX_GENERATIONS)]
        max_generations: usize,
        /// Query ranks saved every generation (`all`, `none`, or e.g. `0,2`).
        #[arg(long, default_value = "all")]
        save: String,
        #[command(flatten)]
        remote: RemoteArgs,
    },
    /// Scripted Swarm Chemistry session(s).
    Chemistry {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        features: FeatureArgs,
        /// Number of advance steps.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_GENERATIONS)]
        max_generations: usize,
        /// Grid slots selected every round (one or two); random when absent.
        #[arg(long, value_delimiter = ',')]
        select: Vec<usize>,
        /// Grid slots saved every round (with `--select`).
        #[arg(long, value_delimiter = ',')]
        save: Vec<usize>,
        /// Seed of the random selection script.
        #[arg(long, default_value_t = 0)]
        policy_seed: u64,
        #[arg(long, default_value_t = 0.15)]
        chem_mutation_rate: f64,
        #[arg(long)]
        mutate_after_crossover: bool,
        #[command(flatten)]
        remote: RemoteArgs,
    },
    /// Simulate one genome and write its trajectory.
    Replay {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        genome: GenomeArgs,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Also write the behavior vector.
        #[arg(long)]
        features: bool,
        #[command(flatten)]
        feature_args: FeatureArgs,
        /// Also render the final frame at this resolution.
        #[arg(long)]
        render: Option<u32>,
    },
    /// Vary the population ratio of a fixed 8-velocity controller.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Eight wheel velocities `[A ‖ B]`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "preset")]
        velocities: Option<Vec<f64>>,
        /// Take the velocities from a named controller.
        #[arg(long)]
        preset: Option<String>,
        /// Type-A fractions; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Render a genome's final frame to PNG.
    Render {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        genome: GenomeArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        resolution: u32,
        #[arg(long, value_enum, default_value_t = ModeArg::Aware)]
        mode: ModeArg,
        /// Output PNG path.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Execute a saved run manifest.
    Run {
        manifest: PathBuf,
        /// Override the manifest's output directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// List the named controllers.
    Presets,
    /// Start the HTTP session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = hetswarm_service::DATA_DIR_ENV, default_value = hetswarm_service::DEFAULT_DATA_DIR)]
        data_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Trial seeds, e.g. `0,1,2`; one output subdirectory each.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seed: Vec<u64>,
    /// Output directory.
    #[arg(long, short, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Write the manifest and exit without running.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[arg(long, default_value_t = SimConfig::default().n_agents)]
    pub n_agents: usize,
    #[arg(long, default_value_t = SimConfig::default().width)]
    pub width: f64,
    #[arg(long, default_value_t = SimConfig::default().height)]
    pub height: f64,
    /// Timesteps per simulation.
    #[arg(long, default_value_t = SimConfig::default().horizon)]
    pub horizon: usize,
    #[arg(long, default_value_t = SimConfig::default().agent_radius)]
    pub agent_radius: f64,
    #[arg(long, default_value_t = SimConfig::default().wheel_base)]
    pub wheel_base: f64,
    #[arg(long, default_value_t = SimConfig::default().speed_scale)]
    pub speed_scale: f64,
    #[arg(long, default_value_t = SimConfig::default().dt)]
    pub dt: f64,
    /// Reject genomes off the sampling grids.
    #[arg(long)]
    pub strict_genomes: bool,
}

impl SimArgs {
    pub fn config(&self) -> SimConfig {
        SimConfig {
            n_agents: self.n_agents,
            width: self.width,
            height: self.height,
            horizon: self.horizon,
            agent_radius: self.agent_radius,
            wheel_base: self.wheel_base,
            speed_scale: self.speed_scale,
            dt: self.dt,
            strict_genomes: self.strict_genomes,
        }
    }
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long, default_value_t = SearchConfig::default().generations)]
    pub generations: usize,
    #[arg(long, default_value_t = SearchConfig::default().population)]
    pub population: usize,
    /// Nearest neighbors in the novelty score.
    #[arg(long, default_value_t = SearchConfig::default().p_neighbors)]
    pub p_neighbors: usize,
    #[arg(long, default_value_t = SearchConfig::default().mutation_rate)]
    pub mutation_rate: f64,
    #[arg(long, default_value_t = SearchConfig::default().crossover_rate)]
    pub crossover_rate: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub velocity_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub eta_grid: Option<Vec<f64>>,
}

impl SearchArgs {
    pub fn config(&self) -> SearchConfig {
        SearchConfig {
            generations: self.generations,
            population: self.population,
            p_neighbors: self.p_neighbors,
            mutation_rate: self.mutation_rate,
            crossover_rate: self.crossover_rate,
            velocity_grid: self.velocity_grid.clone().unwrap_or_else(velocity_grid),
            eta_grid: self.eta_grid.clone().unwrap_or_else(eta_grid),
            rng_seed: 0,
        }
    }
}

#[derive(Args, Debug)]
pub struct FeatureArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Aware)]
    pub representation: ModeArg,
    /// Trailing timesteps the hand-crafted features are computed over.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// External embedder command (program then arguments, comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub plugin: Option<Vec<String>>,
    #[arg(long, default_value = "plugin")]
    pub plugin_name: String,
    /// Declared output dimension of the embedder.
    #[arg(long)]
    pub plugin_dim: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub plugin_resolution: u32,
}

impl FeatureArgs {
    pub fn spec(&self) -> Result<FeaturizerSpec, CliError> {
        let mode = self.representation.into();
        Ok(match &self.plugin {
            None => FeaturizerSpec::HandCrafted {
                mode,
                window: self.window,
            },
            Some(command) => FeaturizerSpec::Plugin {
                name: self.plugin_name.clone(),
                mode,
                dim: self
                    .plugin_dim
                    .ok_or_else(|| CliError::Usage("--plugin needs --plugin-dim".into()))?,
                command: command.clone(),
                resolution: self.plugin_resolution,
            },
        })
    }
}

#[derive(Args, Debug)]
pub struct GenomeArgs {
    /// Nine values: four type-A velocities, four type-B, then eta.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "preset")]
    pub genome: Option<Vec<f64>>,
    /// A named controller (see `hetswarm presets`).
    #[arg(long)]
    pub preset: Option<String>,
}

impl GenomeArgs {
    pub fn genome(&self) -> Result<Genome, CliError> {
        match (&self.genome, &self.preset) {
            (Some(v), _) => Ok(Genome::from_slice(v)?),
            (None, Some(name)) => preset(name),
            (None, None) => Err(CliError::Usage("one of --genome or --preset is required".into())),
        }
    }
}

pub fn preset(name: &str) -> Result<Genome, CliError> {
    named(name).ok_or_else(|| {
        let known: Vec<&str> = NAMED_CONTROLLERS.iter().map(|(n, _)| *n).collect();
        CliError::Usage(format!("unknown preset {name:?}; known: {}", known.join(", ")))
    })
}

#[derive(Args, Debug)]
pub struct RemoteArgs {
    /// Drive the session through a running service instead of in-process.
    #[arg(long)]
    pub server: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Aware,
    Agnostic,
}

impl From<ModeArg> for Representation {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Aware => Representation::Aware,
            ModeArg::Agnostic => Representation::Agnostic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Kmedoids,
    Hierarchical,
    Spectral,
}

impl MethodArg {
    pub fn config(self, k: usize, sigma: Option<f64>) -> ClusterConfig {
        let method = match self {
            MethodArg::Kmedoids => ClusterMethod::Kmedoids,
            MethodArg::Hierarchical => ClusterMethod::Hierarchical,
            MethodArg::Spectral => ClusterMethod::Spectral,
        };
        ClusterConfig {
            affinity_sigma: sigma,
            ..ClusterConfig::new(method, k)
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Binary,
}

impl From<FormatArg> for TrajectoryFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TrajectoryFormat::Csv,
            FormatArg::Binary => TrajectoryFormat::Binary,
        }
    }
}

pub fn hilns_policy(save: &str) -> Result<HilnsPolicy, CliError> {
    match save.trim() {
        "all" => Ok(HilnsPolicy::SaveAll),
        "none" | "" => Ok(HilnsPolicy::SaveNone),
        list => list
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map(HilnsPolicy::Save)
            .map_err(|e| CliError::Usage(format!("--save: {e}"))),
    }
}

pub fn chemistry_policy(select: &[usize], save: &[usize], seed: u64) -> ChemistryPolicy {
    if select.is_empty() {
        ChemistryPolicy::Random { seed }
    } else {
        ChemistryPolicy::Fixed {
            selected: select.to_vec(),
            saved: save.to_vec(),
        }
    }
}

pub fn session_config(
    protocol: Protocol,
    sim: SimConfig,
    search: SearchConfig,
    featurizer: FeaturizerSpec,
    max_generations: usize,
) -> SessionConfig {
    SessionConfig {
        protocol,
        sim,
        search,
        featurizer,
        max_generations,
        ..SessionConfig::default()
    }
}
