//! Synthetic city generators emitting the same graph structures as crawled data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;
use crate::graph::{GraphBuilder, GraphError, NavGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    /// South-west corner.
    pub origin: GeoPoint,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, spacing_m: f64) -> Self {
        Self { rows, cols, spacing_m, origin: GeoPoint::new(48.2082, 16.3738).expect("valid default origin") }
    }
}

pub fn grid_node_id(row: usize, col: usize) -> String {
    format!("r{row}c{col}")
}

/// Builder pre-loaded with a fully symmetric rectangular grid.
pub fn grid_builder(spec: &GridSpec) -> Result<GraphBuilder, GraphError> {
    let mut b = GraphBuilder::new();
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let p = spec.origin.offset_m(c as f64 * spec.spacing_m, r as f64 * spec.spacing_m);
            b.node(grid_node_id(r, c).as_str(), p);
        }
    }
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let here = grid_node_id(r, c);
            if c + 1 < spec.cols {
                b.edge(here.as_str(), grid_node_id(r, c + 1).as_str());
            }
            if r + 1 < spec.rows {
                b.edge(here.as_str(), grid_node_id(r + 1, c).as_str());
            }
        }
    }
    Ok(b)
}

pub fn grid(spec: &GridSpec) -> Result<NavGraph, GraphError> {
    grid_builder(spec)?.build()
}

/// Crawl artifacts injected by [`noisy_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Fraction of street links whose reverse direction is missing.
    pub one_way_fraction: f64,
    /// Fraction of grid edges dropped entirely.
    pub missing_fraction: f64,
    /// Number of dead-end spurs (chains of 1-3 nodes) hanging off the grid.
    pub spurs: usize,
    /// Number of long "teleport" links between distant nodes.
    pub teleports: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { one_way_fraction: 0.15, missing_fraction: 0.05, spurs: 6, teleports: 3 }
    }
}

/// Grid with the defects typical of crawled panographs. Unrepaired.
pub fn noisy_grid(spec: &GridSpec, noise: &NoiseSpec, seed: u64) -> Result<NavGraph, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let mut ids = Vec::new();
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let p = spec.origin.offset_m(c as f64 * spec.spacing_m, r as f64 * spec.spacing_m);
            b.node(grid_node_id(r, c).as_str(), p);
            ids.push((grid_node_id(r, c), p));
        }
    }
    let connect = |b: &mut GraphBuilder, rng: &mut ChaCha8Rng, x: &str, y: &str| {
        if rng.gen_bool(noise.missing_fraction) {
            return;
        }
        if rng.gen_bool(noise.one_way_fraction) {
            if rng.gen_bool(0.5) {
                b.link(x, y);
            } else {
                b.link(y, x);
            }
        } else {
            b.edge(x, y);
        }
    };
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let here = grid_node_id(r, c);
            if c + 1 < spec.cols {
                connect(&mut b, &mut rng, &here, &grid_node_id(r, c + 1));
            }
            if r + 1 < spec.rows {
                connect(&mut b, &mut rng, &here, &grid_node_id(r + 1, c));
            }
        }
    }
    for s in 0..noise.spurs {
        let (anchor, p) = ids.choose(&mut rng).expect("grid is non-empty").clone();
        let len = rng.gen_range(1..=3);
        // spurs leave the grid diagonally so they never coincide with grid nodes
        let (de, dn) = if rng.gen_bool(0.5) { (0.35, 0.35) } else { (-0.35, 0.35) };
        let mut prev = anchor;
        for k in 1..=len {
            let id = format!("spur{s}_{k}");
            let q = p.offset_m(de * spec.spacing_m * k as f64, dn * spec.spacing_m * k as f64);
            b.node(id.as_str(), q);
            b.edge(prev.as_str(), id.as_str());
            prev = id;
        }
    }
    for _ in 0..noise.teleports {
        let (a, pa) = ids.choose(&mut rng).expect("grid is non-empty").clone();
        let far: Vec<_> =
            ids.iter().filter(|(_, q)| crate::geo::haversine_distance(pa, *q) > 3.0 * spec.spacing_m).collect();
        if let Some((z, _)) = far.choose(&mut rng) {
            b.edge(a.as_str(), z.as_str());
        }
    }
    b.build()
}
