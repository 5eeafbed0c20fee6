//! The nine-value heterogeneous controller and the discrete grids it is sampled from.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of slots in a genome: eight wheel velocities plus the population ratio.
pub const GENOME_LEN: usize = 9;

/// Denominators of the population-ratio grid are fractions of a 24-agent swarm.
pub const ETA_NUMERATORS: [u32; 5] = [1, 3, 6, 8, 12];

/// The 21 wheel velocities `{-1.0, -0.9, ..., 0.9, 1.0}`.
pub fn velocity_grid() -> Vec<f64> {
    (-10..=10).map(|i| i as f64 / 10.0).collect()
}

/// The five population ratios `{1/24, 3/24, 6/24, 8/24, 12/24}`.
pub fn eta_grid() -> Vec<f64> {
    ETA_NUMERATORS.iter().map(|&n| n as f64 / 24.0).collect()
}

/// Wheel commands of one behavior type: `(v_l0, v_r0)` when the sensor reads 0,
/// `(v_l1, v_r1)` when it reads 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller(pub [f64; 4]);

impl Controller {
    pub fn wheels(&self, sensor: bool) -> (f64, f64) {
        if sensor {
            (self.0[2], self.0[3])
        } else {
            (self.0[0], self.0[1])
        }
    }

    /// Same controller with left and right wheels exchanged.
    pub fn mirrored(&self) -> Controller {
        let [l0, r0, l1, r1] = self.0;
        Controller([r0, l0, r1, l1])
    }
}

/// A two-type swarm configuration: controllers for types A and B and the
/// fraction `eta` of agents running controller A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; GENOME_LEN]", into = "[f64; GENOME_LEN]")]
pub struct Genome {
    pub a: Controller,
    pub b: Controller,
    pub eta: f64,
}

impl Genome {
    pub fn new(a: [f64; 4], b: [f64; 4], eta: f64) -> Self {
        Genome {
            a: Controller(a),
            b: Controller(b),
            eta,
        }
    }

    pub fn homogeneous(c: [f64; 4], eta: f64) -> Self {
        Genome::new(c, c, eta)
    }

    pub fn to_array(&self) -> [f64; GENOME_LEN] {
        let mut out = [0.0; GENOME_LEN];
        out[..4].copy_from_slice(&self.a.0);
        out[4..8].copy_from_slice(&self.b.0);
        out[8] = self.eta;
        out
    }

    pub fn from_array(v: [f64; GENOME_LEN]) -> Self {
        Genome::new([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]], v[8])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; GENOME_LEN] = v.try_into().map_err(|_| {
            Error::InvalidGenome(format!("expected {GENOME_LEN} values, got {}", v.len()))
        })?;
        Ok(Genome::from_array(arr))
    }

    pub fn velocities(&self) -> impl Iterator<Item = f64> + '_ {
        self.a.0.iter().chain(self.b.0.iter()).copied()
    }

    /// Number of type-A agents in an `n`-agent swarm, `eta * n` rounded half up.
    pub fn type_a_count(&self, n: usize) -> usize {
        let k = (self.eta * n as f64 + 0.5).floor();
        k.clamp(0.0, n as f64) as usize
    }

    /// Checks the invariants every simulated genome must satisfy.
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        for (i, v) in self.velocities().enumerate() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidGenome(format!(
                    "velocity slot {i} = {v} outside [-1, 1]"
                )));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidGenome(format!(
                "population ratio {} outside (0, 1)",
                self.eta
            )));
        }
        let k = self.type_a_count(n_agents);
        if k == 0 || k == n_agents {
            return Err(Error::InvalidGenome(format!(
                "population ratio {} leaves a behavior type empty with {n_agents} agents ({k} of type A)",
                self.eta
            )));
        }
        Ok(())
    }

    /// Like [`Genome::validate`], and additionally requires every value to lie on
    /// the sampling grids.
    pub fn validate_strict(&self, n_agents: usize) -> Result<()> {
        self.validate(n_agents)?;
        let vgrid = velocity_grid();
        for (i, v) in self.velocities().enumerate() {
            if !vgrid.iter().any(|g| (g - v).abs() < 1e-9) {
                return Err(Error::InvalidGenome(format!(
                    "velocity slot {i} = {v} is off the 0.1 grid"
                )));
            }
        }
        if !eta_grid().iter().any(|g| (g - self.eta).abs() < 1e-9) {
            return Err(Error::InvalidGenome(format!(
                "population ratio {} is not one of 1/24, 3/24, 6/24, 8/24, 12/24",
                self.eta
            )));
        }
        Ok(())
    }
}

impl From<[f64; GENOME_LEN]> for Genome {
    fn from(v: [f64; GENOME_LEN]) -> Self {
        Genome::from_array(v)
    }
}

impl From<Genome> for [f64; GENOME_LEN] {
    fn from(g: Genome) -> Self {
        g.to_array()
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_array().iter().map(|v| format!("{v}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Published example controllers, by behavior name.
pub const NAMED_CONTROLLERS: [(&str, [f64; GENOME_LEN]); 10] = [
    ("aggregation", [0.4, -0.7, 0.9, -0.5, 0.9, -0.4, 1.0, 0.4, 8.0 / 24.0]),
    ("dispersal", [-0.3, 0.1, -0.4, -0.3, -0.3, 0.0, -0.2, -0.1, 8.0 / 24.0]),
    ("cyclic-pursuit", [-0.7, 0.3, 1.0, 1.0, -0.7, 0.3, 1.0, 1.0, 12.0 / 24.0]),
    ("milling", [0.7, 1.0, 0.4, 0.5, 0.7, 0.9, 0.4, 0.5, 8.0 / 24.0]),
    ("wall-following", [1.0, -0.1, -0.9, -1.0, 1.0, 0.6, -0.3, 0.9, 1.0 / 24.0]),
    ("aggregation-dispersal", [0.1, 1.0, 0.3, 0.7, 0.2, 0.7, -0.5, -0.1, 12.0 / 24.0]),
    ("cyclic-dispersal", [0.6, 1.0, 0.4, 0.5, 0.2, 0.7, -0.5, -0.1, 12.0 / 24.0]),
    ("segments", [-0.9, 0.6, 0.9, 0.7, -0.4, 0.1, 0.6, 0.2, 12.0 / 24.0]),
    ("site-traversal", [-0.9, 1.0, 1.0, 1.0, 0.1, -0.1, 0.0, 0.0, 12.0 / 24.0]),
    ("mill-following", [1.0, 0.9, 0.9, 0.5, 0.7, 0.5, 1.0, 1.0, 12.0 / 24.0]),
];

/// Looks up a controller from [`NAMED_CONTROLLERS`].
pub fn named(name: &str) -> Option<Genome> {
    NAMED_CONTROLLERS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, v)| Genome::from_array(*v))
}
