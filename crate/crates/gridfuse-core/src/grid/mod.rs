//! Physical grid description and the ground-truth pipeline built on it:
//! power flow, device linearization, trajectory simulation, and dataset
//! generation.

pub mod dataset;
pub mod io;
pub mod linearize;
pub mod network;
pub mod nonlinear;
pub mod powerflow;
pub mod simulate;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub kind: BusKind,
    /// Voltage setpoint (p.u.), used for slack and PV buses.
    #[serde(default = "default_v")]
    pub v: f64,
}

fn default_v() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series admittance, p.u.
    pub g: f64,
    pub b: f64,
}

impl Line {
    pub fn y(&self) -> Complex64 {
        Complex64::new(self.g, self.b)
    }
}

/// Classical second-order machine behind a transient reactance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Machine {
    pub bus: usize,
    /// Inertia constant H, seconds.
    pub h: f64,
    /// Damping coefficient, p.u.
    pub d: f64,
    /// Transient reactance x'd, p.u.
    pub xdp: f64,
    /// Synchronous speed, rad/s.
    pub omega_s: f64,
    /// Nominal active-power setpoint, p.u. (ignored for the slack machine).
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridModel {
    pub name: String,
    #[serde(rename = "bus")]
    pub buses: Vec<Bus>,
    #[serde(rename = "line")]
    pub lines: Vec<Line>,
    #[serde(rename = "machine")]
    pub machines: Vec<Machine>,
    #[serde(rename = "load", default)]
    pub loads: Vec<Load>,
}

/// Generator setpoints and load levels, the quantities randomized per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Active-power setpoint per machine (in machine order). The entry for
    /// the machine on the slack bus is carried but resolved by power flow.
    pub gen_p: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
}

impl OperatingPoint {
    /// Flatten into the global conditioning vector: non-slack machine
    /// setpoints, then per-load (P, Q).
    pub fn to_vector(&self, grid: &GridModel) -> Vec<f64> {
        let mut v = Vec::new();
        for (m, p) in grid.machines.iter().zip(&self.gen_p) {
            if grid.buses[m.bus].kind != BusKind::Slack {
                v.push(*p);
            }
        }
        for (p, q) in self.load_p.iter().zip(&self.load_q) {
            v.push(*p);
            v.push(*q);
        }
        v
    }

    pub fn vector_names(grid: &GridModel) -> Vec<String> {
        let mut v = Vec::new();
        for (i, m) in grid.machines.iter().enumerate() {
            if grid.buses[m.bus].kind != BusKind::Slack {
                v.push(format!("gen{i}_p"));
            }
        }
        for i in 0..grid.loads.len() {
            v.push(format!("load{i}_p"));
            v.push(format!("load{i}_q"));
        }
        v
    }
}

impl GridModel {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn nominal_op(&self) -> OperatingPoint {
        OperatingPoint {
            gen_p: self.machines.iter().map(|m| m.p).collect(),
            load_p: self.loads.iter().map(|l| l.p).collect(),
            load_q: self.loads.iter().map(|l| l.q).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slack_count != 1 {
            return Err(Error::InvalidGrid(format!(
                "need exactly one slack bus, found {slack_count}"
            )));
        }
        for l in &self.lines {
            if l.from >= self.buses.len() || l.to >= self.buses.len() {
                return Err(Error::InvalidGrid(format!(
                    "line references missing bus {}-{}",
                    l.from, l.to
                )));
            }
        }
        let mut machine_buses = std::collections::BTreeSet::new();
        for m in &self.machines {
            if m.bus >= self.buses.len() {
                return Err(Error::InvalidGrid(format!(
                    "machine references missing bus {}",
                    m.bus
                )));
            }
            if m.h <= 0.0 {
                return Err(Error::InvalidMachine(format!(
                    "machine at bus {} has H <= 0",
                    m.bus
                )));
            }
            if m.xdp <= 0.0 {
                return Err(Error::InvalidMachine(format!(
                    "machine at bus {} has x'd <= 0",
                    m.bus
                )));
            }
            if !machine_buses.insert(m.bus) {
                return Err(Error::InvalidGrid(format!("two machines on bus {}", m.bus)));
            }
            if self.buses[m.bus].kind == BusKind::Pq {
                return Err(Error::InvalidGrid(format!("machine at PQ bus {}", m.bus)));
            }
        }
        for b in self.buses.iter().enumerate() {
            if matches!(b.1.kind, BusKind::Slack | BusKind::Pv) && !machine_buses.contains(&b.0) {
                return Err(Error::InvalidGrid(format!(
                    "generator bus {} has no machine",
                    b.0
                )));
            }
        }
        for l in &self.loads {
            if l.bus >= self.buses.len() {
                return Err(Error::InvalidGrid(format!(
                    "load references missing bus {}",
                    l.bus
                )));
            }
        }
        // Connectivity via breadth-first search over lines.
        let n = self.buses.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for l in &self.lines {
                for (a, b) in [(l.from, l.to), (l.to, l.from)] {
                    if a == i && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidGrid("network graph is not connected".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<GridModel> {
        let grid: GridModel = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("grid serializes")
    }

    pub fn load_file(path: &std::path::Path) -> Result<GridModel> {
        GridModel::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// The desk-scale benchmark: two machines, three buses, three loads, 50 Hz.
///
/// Parameters are calibrated so the electromechanical modes sit near
/// -1 +/- 2j rad/s and remain stable across a +/-30% operating range, with
/// the bus-2 load nominally at 1.5 p.u. so a 1.0..2.0 sweep stays close to
/// the sampled hull.
pub fn two_machine_three_bus() -> GridModel {
    let omega_s = 314.1592;
    GridModel {
        name: "two-machine-three-bus".into(),
        buses: vec![
            Bus {
                kind: BusKind::Slack,
                v: 1.03,
            },
            Bus {
                kind: BusKind::Pv,
                v: 1.02,
            },
            Bus {
                kind: BusKind::Pq,
                v: 1.0,
            },
        ],
        lines: vec![
            Line {
                from: 0,
                to: 2,
                g: 0.4,
                b: -4.0,
            },
            Line {
                from: 1,
                to: 2,
                g: 0.5,
                b: -5.0,
            },
            Line {
                from: 0,
                to: 1,
                g: 0.2,
                b: -2.5,
            },
        ],
        machines: vec![
            Machine {
                bus: 0,
                h: 26.0,
                d: 100.0,
                xdp: 0.9,
                omega_s,
                p: 1.2,
            },
            Machine {
                bus: 1,
                h: 25.0,
                d: 95.0,
                xdp: 0.85,
                omega_s,
                p: 1.0,
            },
        ],
        loads: vec![
            Load {
                bus: 0,
                p: 0.3,
                q: 0.1,
            },
            Load {
                bus: 1,
                p: 0.35,
                q: 0.12,
            },
            Load {
                bus: 2,
                p: 1.5,
                q: 0.4,
            },
        ],
    }
}

/// Synthetic three-machine grid in the nine-bus class, for scaling checks.
pub fn three_machine_nine_bus() -> GridModel {
    let omega_s = 314.1592;
    GridModel {
        name: "three-machine-nine-bus".into(),
        buses: vec![
            Bus {
                kind: BusKind::Slack,
                v: 1.04,
            },
            Bus {
                kind: BusKind::Pv,
                v: 1.025,
            },
            Bus {
                kind: BusKind::Pv,
                v: 1.025,
            },
            Bus {
                kind: BusKind::Pq,
                v: 1.0,
            },
            Bus {
                kind: BusKind::Pq,
                v: 1.0,
            },
            Bus {
                kind: BusKind::Pq,
                v: 1.0,
            },
            Bus {
                kind: BusKind::Pq,
                v: 1.0,
            },
            Bus {
                kind: BusKind::Pq,
                v: 1.0,
            },
            Bus {
                kind: BusKind::Pq,
                v: 1.0,
            },
        ],
        lines: vec![
            Line {
                from: 0,
                to: 3,
                g: 1.0,
                b: -12.0,
            },
            Line {
                from: 1,
                to: 6,
                g: 1.0,
                b: -11.0,
            },
            Line {
                from: 2,
                to: 8,
                g: 0.9,
                b: -10.0,
            },
            Line {
                from: 3,
                to: 4,
                g: 0.8,
                b: -8.0,
            },
            Line {
                from: 4,
                to: 5,
                g: 0.7,
                b: -7.0,
            },
            Line {
                from: 5,
                to: 6,
                g: 0.8,
                b: -8.5,
            },
            Line {
                from: 6,
                to: 7,
                g: 0.7,
                b: -7.5,
            },
            Line {
                from: 7,
                to: 8,
                g: 0.8,
                b: -8.0,
            },
            Line {
                from: 8,
                to: 3,
                g: 0.6,
                b: -6.5,
            },
        ],
        machines: vec![
            Machine {
                bus: 0,
                h: 28.0,
                d: 105.0,
                xdp: 0.85,
                omega_s,
                p: 1.0,
            },
            Machine {
                bus: 1,
                h: 24.0,
                d: 90.0,
                xdp: 0.9,
                omega_s,
                p: 0.9,
            },
            Machine {
                bus: 2,
                h: 22.0,
                d: 85.0,
                xdp: 0.95,
                omega_s,
                p: 0.8,
            },
        ],
        loads: vec![
            Load {
                bus: 4,
                p: 0.9,
                q: 0.3,
            },
            Load {
                bus: 5,
                p: 0.7,
                q: 0.25,
            },
            Load {
                bus: 7,
                p: 0.9,
                q: 0.3,
            },
        ],
    }
}

/// Look up one of the built-in benchmark grids by name.
pub fn builtin(name: &str) -> Option<GridModel> {
    match name {
        "two-machine-three-bus" => Some(two_machine_three_bus()),
        "three-machine-nine-bus" => Some(three_machine_nine_bus()),
        _ => None,
    }
}
