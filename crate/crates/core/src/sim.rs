//! Deterministic 2D simulation of computation-free differential-drive agents.
//!
//! Every agent carries a single forward-facing line-of-sight sensor that reads 1
//! when the ray along its heading hits another agent's body. The sensor bit picks
//! one of two wheel-velocity pairs from the agent's controller. Updates are
//! synchronous: all agents sense against the same pre-step snapshot, then all
//! move, then overlaps and wall penetrations are resolved by projection.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{Controller, Genome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentType {
    A,
    B,
}

impl AgentType {
    pub fn as_char(self) -> char {
        match self {
            AgentType::A => 'A',
            AgentType::B => 'B',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kind: AgentType,
}

impl AgentState {
    pub fn new(x: f64, y: f64, theta: f64, kind: AgentType) -> Self {
        AgentState {
            x,
            y,
            theta: normalize_angle(theta),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_agents: usize,
    pub width: f64,
    pub height: f64,
    pub horizon: usize,
    pub agent_radius: f64,
    pub wheel_base: f64,
    /// World units travelled per timestep at wheel speed 1.
    pub speed_scale: f64,
    pub dt: f64,
    /// Reject genomes whose values are off the sampling grids.
    pub strict_genomes: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_agents: 24,
            width: 500.0,
            height: 500.0,
            horizon: 1200,
            agent_radius: 7.0,
            wheel_base: 50.0,
            speed_scale: 3.5,
            dt: 1.0,
            strict_genomes: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_agents < 2 {
            return bad(format!("n_agents must be >= 2, got {}", self.n_agents));
        }
        if self.horizon < 1 {
            return bad("horizon must be >= 1".into());
        }
        if !(self.agent_radius > 0.0) || !(self.wheel_base > 0.0) {
            return bad("agent_radius and wheel_base must be positive".into());
        }
        if !(self.speed_scale > 0.0) || !(self.dt > 0.0) {
            return bad("speed_scale and dt must be positive".into());
        }
        if !(self.width > 2.0 * self.agent_radius) || !(self.height > 2.0 * self.agent_radius) {
            return bad("world must be wider and taller than one agent".into());
        }
        Ok(())
    }

    /// Largest displacement an agent can make on its own in one step.
    pub fn max_step_distance(&self) -> f64 {
        self.speed_scale * self.dt
    }

    /// Largest heading change per step, reached with wheels at `-1` and `+1`.
    pub fn max_turn_per_step(&self) -> f64 {
        2.0 * self.speed_scale / self.wheel_base * self.dt
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.width.hypot(self.height)
    }
}

/// Poses of every agent at every timestep. Frame 0 is the initial placement;
/// frame `t` is the state after `t` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<AgentState>,
    n_agents: usize,
    pub genome: Genome,
    pub seed: u64,
    pub config: SimConfig,
}

impl Trajectory {
    pub fn from_frames(
        frames: Vec<Vec<AgentState>>,
        genome: Genome,
        seed: u64,
        config: SimConfig,
    ) -> Result<Self> {
        let n_agents = frames.first().map(Vec::len).unwrap_or(0);
        if n_agents == 0 {
            return Err(Error::Format("trajectory has no agents".into()));
        }
        if frames.iter().any(|f| f.len() != n_agents) {
            return Err(Error::Format("ragged trajectory frames".into()));
        }
        Ok(Trajectory {
            poses: frames.into_iter().flatten().collect(),
            n_agents,
            genome,
            seed,
            config,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Number of recorded frames.
    pub fn len(&self) -> usize {
        self.poses.len() / self.n_agents
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[AgentState] {
        &self.poses[t * self.n_agents..(t + 1) * self.n_agents]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[AgentState]> {
        self.poses.chunks_exact(self.n_agents)
    }

    pub fn last_frame(&self) -> &[AgentState] {
        self.frame(self.len() - 1)
    }

    pub fn types(&self) -> impl Iterator<Item = AgentType> + '_ {
        self.frame(0).iter().map(|s| s.kind)
    }

    pub fn indices_of(&self, kind: AgentType) -> Vec<usize> {
        self.types()
            .enumerate()
            .filter(|(_, k)| *k == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Applies `f` to every pose, keeping genome, seed and config.
    pub fn map_poses(&self, f: impl Fn(&AgentState) -> AgentState) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(f).collect(),
            n_agents: self.n_agents,
            genome: self.genome,
            seed: self.seed,
            config: self.config.clone(),
        }
    }
}

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Reads the forward line-of-sight sensor of agent `me`. The ray starts at the
/// agent's center; walls are invisible and any other agent's disc counts.
pub fn sense(world: &[AgentState], me: usize, agent_radius: f64) -> bool {
    let s = &world[me];
    sense_dir(world, me, s.theta.cos(), s.theta.sin(), agent_radius)
}

fn sense_dir(world: &[AgentState], me: usize, cos: f64, sin: f64, agent_radius: f64) -> bool {
    let s = &world[me];
    let r2 = agent_radius * agent_radius;
    world.iter().enumerate().any(|(j, o)| {
        if j == me {
            return false;
        }
        let dx = o.x - s.x;
        let dy = o.y - s.y;
        let d2 = dx * dx + dy * dy;
        if d2 <= r2 {
            return true;
        }
        let along = dx * cos + dy * sin;
        if along <= 0.0 {
            return false;
        }
        let across = dx * sin - dy * cos;
        across * across <= r2
    })
}

/// One Euler step of differential-drive kinematics under the wheel pair the
/// sensor selects. The center is kept inside the world rectangle; the radius
/// margin is enforced by [`resolve_collisions`].
pub fn step_agent(
    state: &AgentState,
    controller: &Controller,
    sensor: bool,
    config: &SimConfig,
) -> AgentState {
    let (vl, vr) = controller.wheels(sensor);
    let v = config.speed_scale * (vl + vr) / 2.0;
    let omega = config.speed_scale * (vr - vl) / config.wheel_base;
    let x = state.x + v * state.theta.cos() * config.dt;
    let y = state.y + v * state.theta.sin() * config.dt;
    AgentState {
        x: x.clamp(0.0, config.width),
        y: y.clamp(0.0, config.height),
        theta: normalize_angle(state.theta + omega * config.dt),
        kind: state.kind,
    }
}

/// Separates overlapping discs and clamps every disc inside the walls.
///
/// Each overlapping pair is pushed apart symmetrically along its center line by
/// half the overlap each. Pushes are accumulated against the input snapshot and
/// applied together, so the result does not depend on pair order.
pub fn resolve_collisions(states: &mut [AgentState], config: &SimConfig) {
    let r = config.agent_radius;
    let min_dist = 2.0 * r;
    let n = states.len();
    let mut push = vec![(0.0f64, 0.0f64); n];
    let mut any = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = states[j].x - states[i].x;
            let dy = states[j].y - states[i].y;
            let d2 = dx * dx + dy * dy;
            if d2 >= min_dist * min_dist {
                continue;
            }
            let d = d2.sqrt();
            let (ux, uy) = if d > 1e-12 { (dx / d, dy / d) } else { (1.0, 0.0) };
            let half = 0.5 * (min_dist - d);
            push[i].0 -= ux * half;
            push[i].1 -= uy * half;
            push[j].0 += ux * half;
            push[j].1 += uy * half;
            any = true;
        }
    }
    for (s, (px, py)) in states.iter_mut().zip(push) {
        if any {
            s.x += px;
            s.y += py;
        }
        s.x = s.x.clamp(r, config.width - r);
        s.y = s.y.clamp(r, config.height - r);
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

/// Random initial placement: positions uniform with a one-radius wall margin,
/// headings uniform in `[0, 2π)`. The first `type_a_count` agents are type A.
/// Positions are redrawn until they do not overlap earlier agents (bounded
/// attempts; crowded worlds fall back to the last draw).
pub fn initial_states(genome: &Genome, config: &SimConfig, seed: u64) -> Vec<AgentState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = config.agent_radius;
    let k = genome.type_a_count(config.n_agents);
    let mut out: Vec<AgentState> = Vec::with_capacity(config.n_agents);
    for i in 0..config.n_agents {
        let (mut x, mut y) = (0.0, 0.0);
        for _ in 0..PLACEMENT_ATTEMPTS {
            x = r + rng.gen::<f64>() * (config.width - 2.0 * r);
            y = r + rng.gen::<f64>() * (config.height - 2.0 * r);
            let clear = out
                .iter()
                .all(|o| (o.x - x).hypot(o.y - y) >= 2.0 * r);
            if clear {
                break;
            }
        }
        let theta = rng.gen::<f64>() * TAU;
        let kind = if i < k { AgentType::A } else { AgentType::B };
        out.push(AgentState::new(x, y, theta, kind));
    }
    out
}

/// Simulates `genome` for `config.horizon` frames from a seeded random start.
pub fn simulate(genome: &Genome, config: &SimConfig, seed: u64) -> Result<Trajectory> {
    config.validate()?;
    if config.strict_genomes {
        genome.validate_strict(config.n_agents)?;
    } else {
        genome.validate(config.n_agents)?;
    }
    let init = initial_states(genome, config, seed);
    Ok(run(init, genome, config, seed))
}

/// Simulates from explicit initial states. Agent types are taken from the
/// states, so degenerate type splits are allowed here.
pub fn simulate_from(
    initial: Vec<AgentState>,
    genome: &Genome,
    config: &SimConfig,
    seed: u64,
) -> Result<Trajectory> {
    if initial.is_empty() {
        return Err(Error::InvalidConfig("no agents".into()));
    }
    let config = SimConfig {
        n_agents: initial.len(),
        ..config.clone()
    };
    if config.horizon < 1 {
        return Err(Error::InvalidConfig("horizon must be >= 1".into()));
    }
    Ok(run(initial, genome, &config, seed))
}

fn run(initial: Vec<AgentState>, genome: &Genome, config: &SimConfig, seed: u64) -> Trajectory {
    let n = initial.len();
    let mut poses = Vec::with_capacity(n * config.horizon);
    poses.extend_from_slice(&initial);
    let mut current = initial;
    let mut sensors = vec![false; n];
    for _ in 1..config.horizon {
        for (i, bit) in sensors.iter_mut().enumerate() {
            let s = &current[i];
            *bit = sense_dir(&current, i, s.theta.cos(), s.theta.sin(), config.agent_radius);
        }
        let mut next: Vec<AgentState> = current
            .iter()
            .zip(&sensors)
            .map(|(s, &bit)| {
                let c = match s.kind {
                    AgentType::A => &genome.a,
                    AgentType::B => &genome.b,
                };
                step_agent(s, c, bit, config)
            })
            .collect();
        resolve_collisions(&mut next, config);
        poses.extend_from_slice(&next);
        current = next;
    }
    Trajectory {
        poses,
        n_agents: n,
        genome: *genome,
        seed,
        config: config.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(x: f64, y: f64, theta: f64) -> AgentState {
        AgentState::new(x, y, theta, AgentType::A)
    }

    #[test]
    fn lone_agent_senses_nothing() {
        assert!(!sense(&[agent(0.0, 0.0, 0.0)], 0, 1.0));
    }

    #[test]
    fn sensor_hits_disc_ahead_and_ignores_behind() {
        assert!(sense(&[agent(0.0, 0.0, 0.0), agent(10.0, 0.0, 0.0)], 0, 1.0));
        assert!(!sense(&[agent(0.0, 0.0, 0.0), agent(-10.0, 0.0, 0.0)], 0, 1.0));
    }

    #[test]
    fn sensor_grazing_threshold() {
        // perpendicular offset of the disc center equals the miss distance of the ray
        for r in [1.0, 5.0, 0.25] {
            let hit = [agent(0.0, 0.0, 0.0), agent(10.0, 0.999 * r, 0.0)];
            let miss = [agent(0.0, 0.0, 0.0), agent(10.0, 1.001 * r, 0.0)];
            assert!(sense(&hit, 0, r));
            assert!(!sense(&miss, 0, r));
        }
    }

    #[test]
    fn straight_line_step() {
        let cfg = SimConfig::default();
        let c = Controller([1.0, 1.0, 0.0, 0.0]);
        let s = step_agent(&agent(100.0, 100.0, 0.0), &c, false, &cfg);
        assert_eq!(s.x, 100.0 + cfg.speed_scale * cfg.dt);
        assert_eq!(s.y, 100.0);
        assert_eq!(s.theta, 0.0);
    }

    #[test]
    fn spin_in_place_keeps_position() {
        let cfg = SimConfig::default();
        let c = Controller([-0.6, 0.6, 0.0, 0.0]);
        let start = agent(100.0, 200.0, 1.0);
        let s = step_agent(&start, &c, false, &cfg);
        assert_eq!((s.x, s.y), (100.0, 200.0));
        let omega = cfg.speed_scale * 1.2 / cfg.wheel_base;
        assert!((s.theta - (1.0 + omega)).abs() < 1e-12);
    }

    #[test]
    fn arc_heading_recurrence() {
        let cfg = SimConfig::default();
        let c = Controller([0.0, 1.0, 0.0, 0.0]);
        let theta0 = 0.3;
        let mut s = agent(250.0, 250.0, theta0);
        for k in 1..=40 {
            s = step_agent(&s, &c, false, &cfg);
            let expected = normalize_angle(theta0 + k as f64 * cfg.speed_scale / cfg.wheel_base);
            let diff = (s.theta - expected).abs();
            assert!(diff.min(TAU - diff) < 1e-9, "step {k}");
        }
    }

    #[test]
    fn collisions_idempotent_without_overlap() {
        let cfg = SimConfig::default();
        let mut states = vec![agent(100.0, 100.0, 0.5), agent(200.0, 100.0, 1.5)];
        let before = states.clone();
        resolve_collisions(&mut states, &cfg);
        assert_eq!(states, before);
    }

    #[test]
    fn wall_clamp() {
        let cfg = SimConfig::default();
        let cfg = SimConfig {
            agent_radius: 5.0,
            ..cfg
        };
        let mut states = vec![agent(-3.0, 100.0, 0.0)];
        resolve_collisions(&mut states, &cfg);
        assert_eq!(states[0].x, 5.0);
    }

    #[test]
    fn symmetric_separation_preserves_midpoint() {
        let cfg = SimConfig {
            agent_radius: 1.0,
            wheel_base: 2.0,
            ..SimConfig::default()
        };
        let mut states = vec![agent(100.0, 50.0, 0.0), agent(101.0, 50.0, 0.0)];
        resolve_collisions(&mut states, &cfg);
        assert!((states[1].x - states[0].x - 2.0).abs() < 1e-12);
        assert!((0.5 * (states[0].x + states[1].x) - 100.5).abs() < 1e-12);
        assert_eq!(states[0].y, 50.0);
    }

    #[test]
    fn zero_actuation_is_static() {
        let cfg = SimConfig {
            horizon: 50,
            ..SimConfig::default()
        };
        let g = Genome::homogeneous([0.0; 4], 0.5);
        let traj = simulate(&g, &cfg, 3).unwrap();
        assert_eq!(traj.n_agents(), 24);
        for t in 1..traj.len() {
            assert_eq!(traj.frame(t), traj.frame(0));
        }
    }

    #[test]
    fn type_assignment_follows_eta() {
        let cfg = SimConfig {
            horizon: 3,
            ..SimConfig::default()
        };
        let g = Genome::homogeneous([0.5; 4], 8.0 / 24.0);
        let traj = simulate(&g, &cfg, 0).unwrap();
        for frame in traj.frames() {
            assert_eq!(frame.iter().filter(|s| s.kind == AgentType::A).count(), 8);
        }
        assert_eq!(traj.len(), 3);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let cfg = SimConfig::default();
        let g = Genome::homogeneous([0.0; 4], 0.001);
        assert!(matches!(simulate(&g, &cfg, 0), Err(Error::InvalidGenome(_))));
        let strict = SimConfig {
            strict_genomes: true,
            ..cfg.clone()
        };
        let off = Genome::homogeneous([0.33, 0.0, 0.0, 0.0], 0.5);
        assert!(simulate(&off, &strict, 0).is_err());
        let bad = SimConfig {
            n_agents: 1,
            ..cfg
        };
        assert!(matches!(simulate(&off, &bad, 0), Err(Error::InvalidConfig(_))));
    }
}
