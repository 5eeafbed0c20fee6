//! Hand-crafted behavior features and the featurizer abstraction.
//!
//! Five scalars summarize a (sub)swarm over a window of frames:
//!
//! | feature            | range    | per-frame quantity                                        |
//! |--------------------|----------|-----------------------------------------------------------|
//! | `average_speed`    | [0, 1]   | mean ‖Δp_i‖ / v_max                                        |
//! | `angular_momentum` | [-1, 1]  | mean cross((p_i − μ)/R, Δp_i / v_max)                      |
//! | `radial_variance`  | [0, 1)   | Var_i(‖p_i − μ‖) / (diag/2)²                               |
//! | `scatter`          | [0, 1)   | mean ‖p_i − μ‖² / (diag/2)²                                |
//! | `group_rotation`   | [-1, 1]  | mean Δθ_i / ω_max                                          |
//!
//! `μ` is the subset centroid, `R` its largest distance to a member (1 when all
//! members coincide), `Δp_i` the displacement since the previous frame with its
//! length capped at `v_max`. The momentum lever arm `p_i − μ` is taken at the
//! start of the displacement. Every feature is averaged over frames
//! `max(start, 1) .. end`; an empty window yields 0.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{AgentType, Trajectory};

pub const HAND_CRAFTED_DIM: usize = 5;
pub const DEFAULT_WINDOW: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Agnostic,
    Aware,
}

impl std::str::FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agnostic" => Ok(Representation::Agnostic),
            "aware" => Ok(Representation::Aware),
            other => Err(Error::InvalidConfig(format!(
                "unknown representation {other:?}, expected agnostic or aware"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    HandCrafted,
    Plugin(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorVector {
    pub values: Vec<f64>,
    pub mode: Representation,
    pub source: FeatureSource,
    /// Set when a per-type block was computed over an empty agent set and zero-filled.
    #[serde(default)]
    pub degenerate: bool,
}

impl BehaviorVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        euclidean(&self.values, other)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Half-open frame range `[start_t, end_t)` used for feature averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricWindow {
    pub start_t: usize,
    pub end_t: usize,
}

impl MetricWindow {
    pub fn new(start_t: usize, end_t: usize) -> Result<Self> {
        if start_t >= end_t {
            return Err(Error::InvalidConfig(format!(
                "metric window [{start_t}, {end_t}) is empty"
            )));
        }
        Ok(MetricWindow { start_t, end_t })
    }

    /// The last `len` frames of a `horizon`-frame run.
    pub fn tail(horizon: usize, len: usize) -> Self {
        MetricWindow {
            start_t: horizon.saturating_sub(len),
            end_t: horizon,
        }
    }

    pub fn head(len: usize) -> Self {
        MetricWindow {
            start_t: 0,
            end_t: len.max(1),
        }
    }

    fn frames(&self, traj_len: usize) -> std::ops::Range<usize> {
        let end = self.end_t.min(traj_len);
        self.start_t.max(1).min(end)..end
    }
}

/// The five hand-crafted features, in canonical order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Features {
    pub average_speed: f64,
    pub angular_momentum: f64,
    pub radial_variance: f64,
    pub scatter: f64,
    pub group_rotation: f64,
}

impl Features {
    pub fn to_array(&self) -> [f64; HAND_CRAFTED_DIM] {
        [
            self.average_speed,
            self.angular_momentum,
            self.radial_variance,
            self.scatter,
            self.group_rotation,
        ]
    }
}

/// Computes all five features for `subset` in one pass over the window.
pub fn features(traj: &Trajectory, subset: &[usize], window: MetricWindow) -> Result<Features> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let cfg = &traj.config;
    let v_max = cfg.max_step_distance();
    let w_max = cfg.max_turn_per_step();
    let norm = cfg.half_diagonal().powi(2);
    let n = subset.len() as f64;

    let mut acc = Features::default();
    let frames = window.frames(traj.len());
    let count = frames.len();
    if count == 0 {
        return Ok(acc);
    }

    let mut rel = Vec::with_capacity(subset.len());
    let mut radii = Vec::with_capacity(subset.len());
    for t in frames {
        let prev = traj.frame(t - 1);
        let cur = traj.frame(t);

        let (px0, py0) = centroid(prev, subset);
        rel.clear();
        rel.extend(subset.iter().map(|&i| (prev[i].x - px0, prev[i].y - py0)));
        let r_max = rel.iter().map(|(dx, dy)| dx.hypot(*dy)).fold(0.0, f64::max);
        let r_norm = if r_max > 1e-12 { r_max } else { 1.0 };

        let (mx, my) = centroid(cur, subset);
        radii.clear();
        radii.extend(subset.iter().map(|&i| (cur[i].x - mx).hypot(cur[i].y - my)));

        let mut speed = 0.0;
        let mut momentum = 0.0;
        let mut turn = 0.0;
        for (k, &i) in subset.iter().enumerate() {
            let mut vx = (cur[i].x - prev[i].x) / v_max;
            let mut vy = (cur[i].y - prev[i].y) / v_max;
            let mag = vx.hypot(vy);
            if mag > 1.0 {
                vx /= mag;
                vy /= mag;
            }
            speed += mag.min(1.0);
            let (px, py) = (rel[k].0 / r_norm, rel[k].1 / r_norm);
            momentum += px * vy - py * vx;
            let dtheta = wrap_pi(cur[i].theta - prev[i].theta);
            turn += (dtheta / w_max).clamp(-1.0, 1.0);
        }

        let mean_r = radii.iter().sum::<f64>() / n;
        let mean_r2 = radii.iter().map(|r| r * r).sum::<f64>() / n;
        let var_r = radii.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / n;

        acc.average_speed += speed / n;
        acc.angular_momentum += momentum / n;
        acc.radial_variance += var_r / norm;
        acc.scatter += mean_r2 / norm;
        acc.group_rotation += turn / n;
    }
    let c = count as f64;
    acc.average_speed /= c;
    acc.angular_momentum /= c;
    acc.radial_variance /= c;
    acc.scatter /= c;
    acc.group_rotation /= c;
    Ok(acc)
}

pub fn average_speed(traj: &Trajectory, subset: &[usize], window: MetricWindow) -> Result<f64> {
    Ok(features(traj, subset, window)?.average_speed)
}

pub fn angular_momentum(traj: &Trajectory, subset: &[usize], window: MetricWindow) -> Result<f64> {
    Ok(features(traj, subset, window)?.angular_momentum)
}

pub fn radial_variance(traj: &Trajectory, subset: &[usize], window: MetricWindow) -> Result<f64> {
    Ok(features(traj, subset, window)?.radial_variance)
}

pub fn scatter(traj: &Trajectory, subset: &[usize], window: MetricWindow) -> Result<f64> {
    Ok(features(traj, subset, window)?.scatter)
}

pub fn group_rotation(traj: &Trajectory, subset: &[usize], window: MetricWindow) -> Result<f64> {
    Ok(features(traj, subset, window)?.group_rotation)
}

fn centroid(frame: &[crate::sim::AgentState], subset: &[usize]) -> (f64, f64) {
    let n = subset.len() as f64;
    let (sx, sy) = subset
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &i| (sx + frame[i].x, sy + frame[i].y));
    (sx / n, sy / n)
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Hand-crafted featurization. Agnostic mode yields the five features over the
/// whole swarm; aware mode yields `[whole ‖ type A ‖ type B]`. An empty type block
/// is zero-filled and the vector is flagged degenerate.
pub fn featurize(
    traj: &Trajectory,
    mode: Representation,
    window: MetricWindow,
) -> Result<BehaviorVector> {
    let all: Vec<usize> = (0..traj.n_agents()).collect();
    let mut values = features(traj, &all, window)?.to_array().to_vec();
    let mut degenerate = false;
    if mode == Representation::Aware {
        for kind in [AgentType::A, AgentType::B] {
            let idx = traj.indices_of(kind);
            if idx.is_empty() {
                degenerate = true;
                values.extend([0.0; HAND_CRAFTED_DIM]);
            } else {
                values.extend(features(traj, &idx, window)?.to_array());
            }
        }
    }
    Ok(BehaviorVector {
        values,
        mode,
        source: FeatureSource::HandCrafted,
        degenerate,
    })
}

/// Serializable identity of a featurizer, stored with archives so runs replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeaturizerSpec {
    HandCrafted {
        mode: Representation,
        window: usize,
    },
    Plugin {
        name: String,
        mode: Representation,
        dim: usize,
        command: Vec<String>,
        resolution: u32,
    },
}

/// Maps a trajectory to a fixed-dimension behavior vector.
pub trait Featurizer: Send + Sync {
    fn dim(&self) -> usize;
    fn spec(&self) -> FeaturizerSpec;
    fn featurize(&self, traj: &Trajectory) -> Result<BehaviorVector>;
}

#[derive(Clone, Debug)]
pub struct HandCrafted {
    pub mode: Representation,
    /// Number of trailing frames averaged.
    pub window: usize,
}

impl HandCrafted {
    pub fn new(mode: Representation) -> Self {
        HandCrafted {
            mode,
            window: DEFAULT_WINDOW,
        }
    }
}

impl Default for HandCrafted {
    fn default() -> Self {
        HandCrafted::new(Representation::Agnostic)
    }
}

impl Featurizer for HandCrafted {
    fn dim(&self) -> usize {
        match self.mode {
            Representation::Agnostic => HAND_CRAFTED_DIM,
            Representation::Aware => 3 * HAND_CRAFTED_DIM,
        }
    }

    fn spec(&self) -> FeaturizerSpec {
        FeaturizerSpec::HandCrafted {
            mode: self.mode,
            window: self.window,
        }
    }

    fn featurize(&self, traj: &Trajectory) -> Result<BehaviorVector> {
        featurize(traj, self.mode, MetricWindow::tail(traj.len(), self.window))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Genome;
    use crate::sim::{AgentState, SimConfig};

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn traj(frames: Vec<Vec<(f64, f64, f64)>>) -> Trajectory {
        let frames = frames
            .into_iter()
            .map(|f| {
                f.into_iter()
                    .map(|(x, y, th)| AgentState::new(x, y, th, AgentType::A))
                    .collect()
            })
            .collect();
        Trajectory::from_frames(frames, Genome::homogeneous([0.0; 4], 0.5), 0, cfg()).unwrap()
    }

    fn whole(t: &Trajectory) -> Vec<usize> {
        (0..t.n_agents()).collect()
    }

    #[test]
    fn empty_subset_rejected() {
        let t = traj(vec![vec![(1.0, 1.0, 0.0)]; 3]);
        assert!(matches!(
            scatter(&t, &[], MetricWindow::head(3)),
            Err(Error::EmptySubset)
        ));
    }

    #[test]
    fn static_swarm_is_zero_motion() {
        let frame = vec![(10.0, 10.0, 0.0), (50.0, 20.0, 1.0), (30.0, 80.0, 2.0)];
        let t = traj(vec![frame; 10]);
        let f = features(&t, &whole(&t), MetricWindow::head(10)).unwrap();
        assert_eq!(f.average_speed, 0.0);
        assert_eq!(f.angular_momentum, 0.0);
        assert_eq!(f.group_rotation, 0.0);
        assert!(f.scatter > 0.0);
    }

    #[test]
    fn full_speed_straight_line() {
        let v = cfg().max_step_distance();
        let frames = (0..20)
            .map(|t| vec![(10.0 + v * t as f64, 10.0, 0.0), (10.0 + v * t as f64, 90.0, 0.0)])
            .collect();
        let t = traj(frames);
        let f = features(&t, &whole(&t), MetricWindow::head(20)).unwrap();
        assert!((f.average_speed - 1.0).abs() < 1e-12);
        assert_eq!(f.group_rotation, 0.0);
    }

    #[test]
    fn spinning_in_place() {
        let w = cfg().max_turn_per_step();
        let frames = (0..20)
            .map(|t| vec![(100.0, 100.0, w * t as f64), (200.0, 100.0, w * t as f64)])
            .collect();
        let t = traj(frames);
        let f = features(&t, &whole(&t), MetricWindow::head(20)).unwrap();
        assert_eq!(f.average_speed, 0.0);
        assert!((f.group_rotation - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ring_rotating_counter_clockwise() {
        // n agents on a circle, each displaced tangentially by v_max per frame
        let v = cfg().max_step_distance();
        let n = 12;
        let radius = 80.0;
        let frames: Vec<Vec<(f64, f64, f64)>> = (0..2)
            .map(|t| {
                (0..n)
                    .map(|i| {
                        let base = TAU * i as f64 / n as f64;
                        let (x0, y0) = (250.0 + radius * base.cos(), 250.0 + radius * base.sin());
                        if t == 0 {
                            (x0, y0, base + PI / 2.0)
                        } else {
                            // exact tangential step of length v from the frame-0 position
                            let (tx, ty) = (-base.sin(), base.cos());
                            (x0 + v * tx, y0 + v * ty, base + PI / 2.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let t = traj(frames);
        let am = angular_momentum(&t, &whole(&t), MetricWindow::head(2)).unwrap();
        assert!((am - 1.0).abs() < 1e-6, "{am}");
    }

    #[test]
    fn radial_variance_two_radii() {
        let d = 40.0;
        let frame = vec![(250.0, 250.0, 0.0), (250.0, 250.0, 0.0), (250.0 - d, 250.0, 0.0), (250.0 + d, 250.0, 0.0)];
        let t = traj(vec![frame; 2]);
        let norm = cfg().half_diagonal().powi(2);
        let rv = radial_variance(&t, &whole(&t), MetricWindow::head(2)).unwrap();
        assert!((rv * norm - d * d / 4.0).abs() < 1e-9);
    }

    #[test]
    fn circle_has_zero_radial_variance_and_singleton_too() {
        let frame: Vec<_> = (0..8)
            .map(|i| {
                let a = TAU * i as f64 / 8.0;
                (250.0 + 60.0 * a.cos(), 250.0 + 60.0 * a.sin(), 0.0)
            })
            .collect();
        let t = traj(vec![frame; 3]);
        assert!(radial_variance(&t, &whole(&t), MetricWindow::head(3)).unwrap() < 1e-20);
        assert_eq!(radial_variance(&t, &[3], MetricWindow::head(3)).unwrap(), 0.0);
    }

    #[test]
    fn scatter_of_a_pair() {
        let d = 30.0;
        let t = traj(vec![vec![(100.0, 100.0, 0.0), (100.0 + d, 100.0, 0.0)]; 2]);
        let norm = cfg().half_diagonal().powi(2);
        let s = scatter(&t, &whole(&t), MetricWindow::head(2)).unwrap();
        assert!((s * norm - d * d / 4.0).abs() < 1e-9);
        let point = traj(vec![vec![(100.0, 100.0, 0.0); 3]; 2]);
        assert_eq!(scatter(&point, &whole(&point), MetricWindow::head(2)).unwrap(), 0.0);
    }

    #[test]
    fn aware_block_for_missing_type_is_zero_and_flagged() {
        let t = traj(vec![vec![(100.0, 100.0, 0.0), (130.0, 100.0, 0.5)]; 4]);
        let bv = featurize(&t, Representation::Aware, MetricWindow::head(4)).unwrap();
        assert_eq!(bv.dim(), 15);
        assert!(bv.degenerate);
        assert_eq!(&bv.values[10..], &[0.0; 5]);
        let ag = featurize(&t, Representation::Agnostic, MetricWindow::head(4)).unwrap();
        assert_eq!(&bv.values[..5], &ag.values[..]);
        assert_eq!(&bv.values[5..10], &ag.values[..]);
        assert!(!ag.degenerate);
    }

    #[test]
    fn window_rejects_empty_range() {
        assert!(MetricWindow::new(5, 5).is_err());
        assert_eq!(MetricWindow::tail(1200, 300), MetricWindow { start_t: 900, end_t: 1200 });
    }

    #[test]
    fn wrap_pi_range() {
        assert!((wrap_pi(TAU - 0.1) + 0.1).abs() < 1e-12);
        assert!((wrap_pi(-TAU + 0.1) - 0.1).abs() < 1e-12);
        assert_eq!(wrap_pi(PI), PI);
    }
}
