//! Time-varying swarm graphs: node features are UAV positions and edges
//! connect UAVs closer than a distance threshold.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::swarm_sim::Trajectory;

/// Default neighbourhood threshold (m).
pub const DEFAULT_D_TILDE: f64 = 100.0;

/// Symmetric binary adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Adjacency {
            n,
            bits: vec![false; n * n],
        }
    }

    /// Edges between distinct nodes at distance `<= threshold`.
    pub fn from_positions(positions: &[Vec3], threshold: f64) -> Self {
        let n = positions.len();
        let mut adj = Adjacency::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if positions[i].distance(&positions[j]) <= threshold {
                    adj.set(i, j, true);
                }
            }
        }
        adj
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut adj = Adjacency::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::shape(format!("{n} columns"), row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 if i != j => adj.bits[i * n + j] = true,
                    _ => {
                        return Err(Error::Input(format!(
                            "adjacency entry ({i},{j}) = {v} is not a valid off-diagonal 0/1"
                        )))
                    }
                }
            }
        }
        if (0..n).any(|i| (0..n).any(|j| adj.get(i, j) != adj.get(j, i))) {
            return Err(Error::Input("adjacency is not symmetric".into()));
        }
        Ok(adj)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
        self.bits[j * self.n + i] = v;
    }

    /// Neighbour indices of node `i` in increasing order.
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count() / 2
    }
}

/// Affine coordinate map `x' = (x - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub scale: f64,
    pub offset: Vec3,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            scale: 1.0,
            offset: Vec3::ZERO,
        }
    }
}

impl NormalizationSpec {
    pub fn new(scale: f64, offset: Vec3) -> Result<Self> {
        let spec = NormalizationSpec { scale, offset };
        spec.validate()?;
        Ok(spec)
    }

    /// Divide by the side of the operation area, no offset.
    pub fn for_area(x_size: f64) -> Result<Self> {
        Self::new(x_size, Vec3::ZERO)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.offset.is_finite() {
            return Err(Error::Config(format!(
                "normalization scale must be positive and finite, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        (p - self.offset) * (1.0 / self.scale)
    }

    #[inline]
    pub fn invert(&self, p: Vec3) -> Vec3 {
        p * self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    /// One row per UAV; positions in metres unless `normalized`.
    pub features: Vec<Vec3>,
    pub adjacency: Adjacency,
    /// Neighbourhood distance threshold (m).
    pub threshold: f64,
    pub timestamp: f64,
    pub normalized: bool,
}

impl GraphSnapshot {
    pub fn num_nodes(&self) -> usize {
        self.features.len()
    }
}

/// Builds the unnormalized snapshot for one frame of positions.
pub fn build_snapshot(positions: &[Vec3], d_tilde: f64, t: f64) -> Result<GraphSnapshot> {
    if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
        return Err(Error::Input(format!("non-finite position for node {i}")));
    }
    if d_tilde.is_nan() || d_tilde < 0.0 {
        return Err(Error::Input(format!("invalid distance threshold {d_tilde}")));
    }
    Ok(GraphSnapshot {
        features: positions.to_vec(),
        adjacency: Adjacency::from_positions(positions, d_tilde),
        threshold: d_tilde,
        timestamp: t,
        normalized: false,
    })
}

/// `N_l = { m != l : A_lm = 1 }`.
pub fn neighborhood(snapshot: &GraphSnapshot, l: usize) -> BTreeSet<usize> {
    snapshot.adjacency.neighbours(l).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSequence {
    pub snapshots: Vec<GraphSnapshot>,
    pub dt: f64,
    pub norm: NormalizationSpec,
}

impl GraphSequence {
    pub fn new(snapshots: Vec<GraphSnapshot>, dt: f64, norm: NormalizationSpec) -> Result<Self> {
        let seq = GraphSequence {
            snapshots,
            dt,
            norm,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Snapshots of every frame, adjacency from metre positions, features
    /// normalized with `norm`.
    pub fn from_trajectory(traj: &Trajectory, d_tilde: f64, norm: NormalizationSpec) -> Result<Self> {
        let snapshots = (0..traj.len())
            .map(|k| build_snapshot(&traj.positions(k), d_tilde, traj.time(k)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(snapshots, traj.dt, NormalizationSpec::default())?.normalize(norm)
    }

    pub fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        let Some(first) = self.snapshots.first() else {
            return Ok(());
        };
        for (k, s) in self.snapshots.iter().enumerate() {
            if s.features.len() != s.adjacency.len() {
                return Err(Error::shape(
                    format!("{} feature rows", s.adjacency.len()),
                    s.features.len(),
                ));
            }
            if s.num_nodes() != first.num_nodes()
                || s.threshold != first.threshold
                || s.normalized != first.normalized
            {
                return Err(Error::Input(format!(
                    "snapshot {k} disagrees with snapshot 0 on node count, threshold or normalization"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.snapshots.first().map_or(0, GraphSnapshot::num_nodes)
    }

    pub fn threshold(&self) -> f64 {
        self.snapshots.first().map_or(DEFAULT_D_TILDE, |s| s.threshold)
    }

    pub fn is_normalized(&self) -> bool {
        self.snapshots.first().is_some_and(|s| s.normalized)
    }

    /// Applies `spec` to every feature row; adjacency is left as is.
    pub fn normalize(&self, spec: NormalizationSpec) -> Result<GraphSequence> {
        spec.validate()?;
        if self.is_normalized() {
            return Err(Error::State("sequence is already normalized".into()));
        }
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| GraphSnapshot {
                features: s.features.iter().map(|&p| spec.apply(p)).collect(),
                normalized: true,
                ..s.clone()
            })
            .collect();
        Ok(GraphSequence {
            snapshots,
            dt: self.dt,
            norm: spec,
        })
    }

    pub fn denormalize(&self) -> Result<GraphSequence> {
        if !self.is_normalized() {
            return Err(Error::State("sequence is not normalized".into()));
        }
        let spec = self.norm;
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| GraphSnapshot {
                features: s.features.iter().map(|&p| spec.invert(p)).collect(),
                normalized: false,
                ..s.clone()
            })
            .collect();
        Ok(GraphSequence {
            snapshots,
            dt: self.dt,
            norm: spec,
        })
    }

    /// Positions in metres for frame `k`, whatever the normalization state.
    pub fn positions_m(&self, k: usize) -> Vec<Vec3> {
        let s = &self.snapshots[k];
        if s.normalized {
            s.features.iter().map(|&p| self.norm.invert(p)).collect()
        } else {
            s.features.clone()
        }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let wire = WireSequence {
            dt: self.dt,
            d_tilde: self.threshold(),
            scale: self.norm.scale,
            offset: self.norm.offset,
            normalized: self.is_normalized(),
            frames: self
                .snapshots
                .iter()
                .map(|s| WireFrame {
                    t: s.timestamp,
                    x: s.features.iter().map(|p| p.0).collect(),
                    a: s.adjacency.to_rows(),
                })
                .collect(),
        };
        serde_json::to_writer(writer, &wire)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<GraphSequence> {
        let wire: WireSequence = serde_json::from_reader(reader)?;
        let norm = NormalizationSpec::new(wire.scale, wire.offset)?;
        let snapshots = wire
            .frames
            .into_iter()
            .map(|f| {
                Ok(GraphSnapshot {
                    features: f.x.into_iter().map(Vec3).collect(),
                    adjacency: Adjacency::from_rows(&f.a)?,
                    threshold: wire.d_tilde,
                    timestamp: f.t,
                    normalized: wire.normalized,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GraphSequence::new(snapshots, wire.dt, norm)
    }
}

#[derive(Serialize, Deserialize)]
struct WireSequence {
    dt: f64,
    #[serde(rename = "D_tilde")]
    d_tilde: f64,
    scale: f64,
    #[serde(default)]
    offset: Vec3,
    #[serde(default = "yes")]
    normalized: bool,
    frames: Vec<WireFrame>,
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct WireFrame {
    t: f64,
    #[serde(rename = "X")]
    x: Vec<[f64; 3]>,
    #[serde(rename = "A")]
    a: Vec<Vec<u8>>,
}
