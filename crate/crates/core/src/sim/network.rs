use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

/// Largest network for which the all-pairs table is built (n² doubles).
pub const MAX_NODES: usize = 6000;

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    ids: Vec<u64>,
    coords: Vec<(f64, f64)>,
    index: HashMap<u64, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    edges: usize,
    /// Row-major all-pairs shortest paths in km; `INFINITY` when unreachable.
    dist: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths over `adjacency` (lengths in meters).
pub fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adjacency[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist
}

impl RoadNetwork {
    /// Builds the network and its distance table. Edge lengths are meters.
    pub fn new(nodes: Vec<(u64, f64, f64)>, edges: Vec<(u64, u64, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("network has no nodes".into()));
        }
        if nodes.len() > MAX_NODES {
            return Err(Error::InvalidParameter(format!(
                "network has {} nodes, at most {MAX_NODES} are supported",
                nodes.len()
            )));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        let mut ids = Vec::with_capacity(nodes.len());
        let mut coords = Vec::with_capacity(nodes.len());
        for (id, x, y) in nodes {
            if index.insert(id, ids.len()).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate node id {id}")));
            }
            ids.push(id);
            coords.push((x, y));
        }
        let mut adjacency = vec![Vec::new(); ids.len()];
        let edge_count = edges.len();
        for (from, to, len) in edges {
            if !(len >= 0.0) || !len.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "edge {from}->{to} has length {len}"
                )));
            }
            let (Some(&a), Some(&b)) = (index.get(&from), index.get(&to)) else {
                return Err(Error::InvalidParameter(format!(
                    "edge {from}->{to} references an unknown node"
                )));
            };
            adjacency[a].push((b, len));
        }
        let n = ids.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                dijkstra(&adjacency, s)
                    .into_iter()
                    .map(|d| d / 1000.0)
                    .collect()
            })
            .collect();
        let dist = rows.concat();
        Ok(Self {
            ids,
            coords,
            index,
            adjacency,
            edges: edge_count,
            dist,
        })
    }

    /// `rows × cols` lattice with bidirectional edges of `spacing_m`,
    /// each length scaled by an independent factor in `[1, 1 + jitter]`.
    pub fn grid(rows: usize, cols: usize, spacing_m: f64, jitter: f64, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 || !(spacing_m > 0.0) || !(jitter >= 0.0) {
            return Err(Error::InvalidParameter(
                "grid needs positive size, spacing and nonnegative jitter".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id = |r: usize, c: usize| (r * cols + c) as u64;
        let mut nodes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                nodes.push((id(r, c), c as f64 * spacing_m, r as f64 * spacing_m));
            }
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let mut link = |a: u64, b: u64, rng: &mut ChaCha8Rng| {
                    let len = spacing_m * (1.0 + jitter * rng.random::<f64>());
                    edges.push((a, b, len));
                    edges.push((b, a, len));
                };
                if c + 1 < cols {
                    link(id(r, c), id(r, c + 1), &mut rng);
                }
                if r + 1 < rows {
                    link(id(r, c), id(r + 1, c), &mut rng);
                }
            }
        }
        Self::new(nodes, edges)
    }

    /// Reads the text format:
    ///
    /// ```text
    /// # comment
    /// node <id> <x> <y>
    /// edge <from> <to> <length_m>
    /// ```
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: origin.to_string(),
            msg: format!("line {}: {msg}", line + 1),
        };
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["node", id, x, y] => {
                    let id = id.parse().map_err(|_| bad(ln, "bad node id"))?;
                    let x = x.parse().map_err(|_| bad(ln, "bad x coordinate"))?;
                    let y = y.parse().map_err(|_| bad(ln, "bad y coordinate"))?;
                    nodes.push((id, x, y));
                }
                ["edge", from, to, len] => {
                    let from = from.parse().map_err(|_| bad(ln, "bad edge source"))?;
                    let to = to.parse().map_err(|_| bad(ln, "bad edge target"))?;
                    let len: f64 = len.parse().map_err(|_| bad(ln, "bad edge length"))?;
                    edges.push((from, to, len));
                }
                _ => return Err(bad(ln, "expected `node id x y` or `edge from to length_m`")),
            }
        }
        Self::new(nodes, edges).map_err(|e| match e {
            Error::InvalidParameter(msg) => Error::Parse {
                path: origin.to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, &(x, y)) in self.coords.iter().enumerate() {
            out.push_str(&format!("node {} {x} {y}\n", self.ids[i]));
        }
        for (u, adj) in self.adjacency.iter().enumerate() {
            for &(v, len) in adj {
                out.push_str(&format!("edge {} {} {len}\n", self.ids[u], self.ids[v]));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn id(&self, node: usize) -> u64 {
        self.ids[node]
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        self.coords[node]
    }

    /// Internal index of external node id `id`.
    pub fn node(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn adjacency(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    /// Shortest-path distance in km.
    pub fn distance(&self, from: usize, to: usize) -> f64 {
        self.dist[from * self.ids.len() + to]
    }

    /// Nodes that can reach and be reached from every node in `anchors`.
    pub fn strongly_connected_with(&self, anchors: &[usize]) -> Vec<bool> {
        let n = self.len();
        (0..n)
            .map(|v| {
                anchors
                    .iter()
                    .all(|&a| self.distance(v, a).is_finite() && self.distance(a, v).is_finite())
            })
            .collect()
    }

    /// Index of the station (position in `stations`) nearest to `node` by
    /// travel distance towards the station; lowest index on ties.
    pub fn nearest_station(&self, node: usize, stations: &[usize]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, &s) in stations.iter().enumerate() {
            let d = self.distance(node, s);
            if d.is_finite() && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_distances_are_manhattan() {
        let net = RoadNetwork::grid(4, 5, 500.0, 0.0, 1).unwrap();
        assert_eq!(net.len(), 20);
        assert_eq!(net.edge_count(), 2 * (4 * 4 + 3 * 5));
        let a = net.node(0).unwrap();
        let b = net.node(19).unwrap();
        assert!((net.distance(a, b) - 3.5).abs() < 1e-12);
        assert!((net.distance(b, a) - 3.5).abs() < 1e-12);
        assert_eq!(net.distance(a, a), 0.0);
    }

    #[test]
    fn text_round_trip() {
        let net = RoadNetwork::grid(3, 3, 250.0, 0.3, 9).unwrap();
        let back = RoadNetwork::parse(&net.to_text(), "mem").unwrap();
        for u in 0..net.len() {
            for v in 0..net.len() {
                assert!((net.distance(u, v) - back.distance(u, v)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_way_edges_break_symmetry() {
        let text =
            "node 1 0 0\nnode 2 1 0\nnode 3 2 0\nedge 1 2 1000\nedge 2 3 1000\nedge 3 1 5000\n";
        let net = RoadNetwork::parse(text, "mem").unwrap();
        let (a, c) = (net.node(1).unwrap(), net.node(3).unwrap());
        assert!((net.distance(a, c) - 2.0).abs() < 1e-12);
        assert!((net.distance(c, a) - 5.0).abs() < 1e-12);
        assert_eq!(net.strongly_connected_with(&[a]), vec![true; 3]);
    }

    #[test]
    fn unreachable_nodes_are_excluded() {
        let text = "node 1 0 0\nnode 2 1 0\nnode 3 9 9\nedge 1 2 10\nedge 2 1 10\nedge 3 1 10\n";
        let net = RoadNetwork::parse(text, "mem").unwrap();
        assert!(net.distance(0, 2).is_infinite());
        assert_eq!(net.strongly_connected_with(&[0]), vec![true, true, false]);
    }

    #[test]
    fn malformed_lines_are_reported() {
        for text in [
            "node 1 0\n",
            "edge 1 2 x\nnode 1 0 0\n",
            "vertex 1 0 0\n",
            "node 1 0 0\nedge 1 7 3\n",
        ] {
            assert!(
                matches!(RoadNetwork::parse(text, "mem"), Err(Error::Parse { .. })),
                "{text:?}"
            );
        }
    }

    #[test]
    fn nearest_station_ties_go_low() {
        let net = RoadNetwork::grid(1, 3, 100.0, 0.0, 0).unwrap();
        assert_eq!(net.nearest_station(1, &[0, 2]), Some(0));
        assert_eq!(net.nearest_station(2, &[0, 2]), Some(1));
    }
}
