//! Graph instances: representation, seeded random generation, and file I/O.
//!
//! Two kinds of instance are supported:
//! * `Sparse` — an arbitrary simple graph with unit edge weights, used by
//!   the MaxCut and MIS solvers;
//! * `CompleteMetric` — a complete graph over 2-D points in the unit
//!   square whose edge weights are Euclidean distances, used by TSP.
//!
//! The on-disk format is line-oriented text: a header `n m kind`, then
//! `m` edge lines `i j w` (weight may be omitted, defaulting to 1.0),
//! then optionally `n` coordinate lines `c x y`. Floats are written with
//! Rust's shortest round-trip formatting, so save → load is exact.
//! Files whose first non-blank line starts with `c` or `p` are parsed as
//! DIMACS edge lists (`p edge N M` / `e u v`, 1-indexed) instead, which
//! is the format RB benchmark instances are distributed in.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// How an instance's edge set is to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    /// Arbitrary simple graph, unit edge weights.
    Sparse,
    /// Complete graph over 2-D coordinates, Euclidean edge weights.
    CompleteMetric,
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceKind::Sparse => write!(f, "sparse"),
            InstanceKind::CompleteMetric => write!(f, "complete-metric"),
        }
    }
}

impl FromStr for InstanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(InstanceKind::Sparse),
            "complete-metric" => Ok(InstanceKind::CompleteMetric),
            other => Err(Error::Validation(format!("unknown instance kind `{other}`"))),
        }
    }
}

/// An undirected graph instance.
///
/// Edges are stored canonically: endpoints ordered `i < j`, the list
/// sorted ascending, no duplicates, no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    /// Node count.
    pub n: usize,
    /// Undirected edges `(i, j, weight)` with `i < j`, sorted ascending.
    pub edges: Vec<(u32, u32, f64)>,
    /// 2-D coordinates in the unit square (complete-metric instances).
    pub coords: Option<Vec<(f64, f64)>>,
    pub kind: InstanceKind,
}

impl GraphInstance {
    /// Check every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("instance must have n >= 1".into()));
        }
        for &(i, j, w) in &self.edges {
            if i >= j {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) is not ordered i < j (self-loop or swapped endpoints)"
                )));
            }
            if (j as usize) >= self.n {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) endpoint out of range for n = {}",
                    self.n
                )));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("weight of edge ({i}, {j})")));
            }
        }
        for pair in self.edges.windows(2) {
            let a = (pair[0].0, pair[0].1);
            let b = (pair[1].0, pair[1].1);
            if a == b {
                return Err(Error::Validation(format!("duplicate edge ({}, {})", a.0, a.1)));
            }
            if a > b {
                return Err(Error::Validation("edges not sorted ascending".into()));
            }
        }
        if self.kind == InstanceKind::CompleteMetric {
            let coords = self.coords.as_ref().ok_or_else(|| {
                Error::Validation("complete-metric instance missing coordinates".into())
            })?;
            if coords.len() != self.n {
                return Err(Error::LengthMismatch { expected: self.n, got: coords.len() });
            }
            let want = self.n * (self.n - 1) / 2;
            if self.edges.len() != want {
                return Err(Error::Validation(format!(
                    "complete-metric instance must have {want} edges, found {}",
                    self.edges.len()
                )));
            }
            for &(i, j, w) in &self.edges {
                let d = euclid(coords[i as usize], coords[j as usize]);
                if (d - w).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "edge ({i}, {j}) weight {w} does not match coordinate distance {d}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Adjacency lists (each neighbor list sorted ascending).
    pub fn adjacency_lists(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, _) in &self.edges {
            adj[i as usize].push(j);
            adj[j as usize].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Euclidean distance between two nodes of a complete-metric instance.
    ///
    /// Panics if the instance has no coordinates.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let coords = self.coords.as_ref().expect("distance() requires coordinates");
        euclid(coords[i], coords[j])
    }

    /// Dense n×n distance matrix (row-major, zero diagonal).
    pub fn distance_matrix(&self) -> Result<Vec<f64>> {
        let coords = self
            .coords
            .as_ref()
            .ok_or(Error::NotMetric)?;
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let w = euclid(coords[i], coords[j]);
                d[i * n + j] = w;
                d[j * n + i] = w;
            }
        }
        Ok(d)
    }

    /// Write the instance in the native line-oriented format.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = String::new();
        out.push_str(&format!("{} {} {}\n", self.n, self.edges.len(), self.kind));
        for &(i, j, w) in &self.edges {
            out.push_str(&format!("{i} {j} {w}\n"));
        }
        if let Some(coords) = &self.coords {
            for &(x, y) in coords {
                out.push_str(&format!("c {x} {y}\n"));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Read an instance, auto-detecting native vs DIMACS format.
    pub fn load(path: &Path) -> Result<GraphInstance> {
        let text = fs::read_to_string(path)?;
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
        let g = if first.starts_with('c') || first.starts_with('p') {
            parse_dimacs(&text)?
        } else {
            parse_native(&text)?
        };
        g.validate()?;
        Ok(g)
    }
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Erdős–Rényi G(n, p): every unordered pair is an edge independently
/// with probability `p`. Deterministic in `(n, p, seed)` — pairs are
/// visited in fixed lexicographic order with one uniform draw each.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> GraphInstance {
    assert!(n >= 1, "gen_erdos_renyi requires n >= 1");
    assert!((0.0..=1.0).contains(&p), "edge probability must lie in [0, 1]");
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    GraphInstance { n, edges, coords: None, kind: InstanceKind::Sparse }
}

/// Uniform random TSP instance: `n` points i.i.d. in the unit square,
/// complete edge set with Euclidean weights.
pub fn gen_tsp_uniform(n: usize, seed: u64) -> GraphInstance {
    assert!(n >= 2, "gen_tsp_uniform requires n >= 2");
    let mut rng = rng_from_seed(seed);
    let coords: Vec<(f64, f64)> =
        (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            edges.push((i, j, euclid(coords[i as usize], coords[j as usize])));
        }
    }
    GraphInstance { n, edges, coords: Some(coords), kind: InstanceKind::CompleteMetric }
}

fn parse_native(text: &str) -> Result<GraphInstance> {
    let mut lines = text.lines().enumerate();
    // Header: `n m kind`.
    let (header_idx, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 {
        return Err(Error::Parse {
            line: header_idx + 1,
            msg: format!("header must be `n m kind`, found {} tokens", toks.len()),
        });
    }
    let n: usize = toks[0]
        .parse()
        .map_err(|_| Error::Parse { line: header_idx + 1, msg: "bad node count".into() })?;
    let m: usize = toks[1]
        .parse()
        .map_err(|_| Error::Parse { line: header_idx + 1, msg: "bad edge count".into() })?;
    let kind: InstanceKind = toks[2].parse()?;

    let mut edges: Vec<(u32, u32, f64)> = Vec::with_capacity(m);
    let mut coords: Vec<(f64, f64)> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks[0] == "c" {
            if toks.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "coordinate line must be `c x y`".into(),
                });
            }
            let x: f64 = toks[1]
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: "bad x coordinate".into() })?;
            let y: f64 = toks[2]
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: "bad y coordinate".into() })?;
            coords.push((x, y));
            continue;
        }
        if edges.len() >= m {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("more than the declared {m} edges"),
            });
        }
        if toks.len() != 2 && toks.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: "edge line must be `i j` or `i j w`".into(),
            });
        }
        let i: u32 = toks[0]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: "bad edge endpoint".into() })?;
        let j: u32 = toks[1]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: "bad edge endpoint".into() })?;
        let w: f64 = if toks.len() == 3 {
            toks[2]
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: "bad edge weight".into() })?
        } else {
            1.0
        };
        if i == j {
            return Err(Error::Validation(format!("line {line_no}: self-loop ({i}, {j})")));
        }
        edges.push((i.min(j), i.max(j), w));
    }
    if edges.len() != m {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("declared {m} edges, found {}", edges.len()),
        });
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for pair in edges.windows(2) {
        if (pair[0].0, pair[0].1) == (pair[1].0, pair[1].1) {
            return Err(Error::Validation(format!(
                "duplicate edge ({}, {})",
                pair[0].0, pair[0].1
            )));
        }
    }
    let coords = if coords.is_empty() {
        None
    } else if coords.len() == n {
        Some(coords)
    } else {
        return Err(Error::Validation(format!(
            "expected {n} coordinate lines, found {}",
            coords.len()
        )));
    };
    Ok(GraphInstance { n, edges, coords, kind })
}

/// DIMACS edge-list parser: `c` comments, one `p edge N M` problem line,
/// `e u v` edges with 1-indexed endpoints. Duplicate edges (including
/// the same edge listed in both directions) are collapsed, since
/// published benchmark files are inconsistent about this.
fn parse_dimacs(text: &str) -> Result<GraphInstance> {
    let mut n: Option<usize> = None;
    let mut edges: Vec<(u32, u32, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "p" => {
                if toks.len() < 4 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "problem line must be `p edge N M`".into(),
                    });
                }
                n = Some(toks[2].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: "bad node count in problem line".into(),
                })?);
            }
            "e" => {
                let n = n.ok_or(Error::Parse {
                    line: line_no,
                    msg: "edge before `p` problem line".into(),
                })?;
                if toks.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "edge line must be `e u v`".into(),
                    });
                }
                let u: u32 = toks[1]
                    .parse()
                    .map_err(|_| Error::Parse { line: line_no, msg: "bad endpoint".into() })?;
                let v: u32 = toks[2]
                    .parse()
                    .map_err(|_| Error::Parse { line: line_no, msg: "bad endpoint".into() })?;
                if u == 0 || v == 0 || u as usize > n || v as usize > n {
                    return Err(Error::Validation(format!(
                        "line {line_no}: endpoint out of 1..={n}"
                    )));
                }
                if u == v {
                    return Err(Error::Validation(format!("line {line_no}: self-loop ({u})")));
                }
                // Convert to 0-indexed, normalized.
                let (a, b) = (u.min(v) - 1, u.max(v) - 1);
                edges.push((a, b, 1.0));
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown DIMACS line type `{other}`"),
                });
            }
        }
    }
    let n = n.ok_or(Error::Parse { line: 1, msg: "missing `p edge N M` line".into() })?;
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
    Ok(GraphInstance { n, edges, coords: None, kind: InstanceKind::Sparse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn er_zero_probability_has_no_edges() {
        let g = gen_erdos_renyi(5, 0.0, 7);
        assert_eq!(g.num_edges(), 0);
        g.validate().unwrap();
    }

    #[test]
    fn er_unit_probability_is_complete() {
        let g = gen_erdos_renyi(5, 1.0, 7);
        assert_eq!(g.num_edges(), 10);
        g.validate().unwrap();
    }

    #[test]
    fn er_mean_edge_count_matches_binomial() {
        // 100 seeds at (n=200, p=0.15): expectation 0.15 * 19900 = 2985.
        let mean: f64 = (0..100)
            .map(|s| gen_erdos_renyi(200, 0.15, s).num_edges() as f64)
            .sum::<f64>()
            / 100.0;
        let expect = 0.15 * (200.0 * 199.0 / 2.0);
        assert!(
            (mean - expect).abs() / expect < 0.03,
            "mean {mean} too far from {expect}"
        );
    }

    #[test]
    fn er_is_reproducible() {
        let a = gen_erdos_renyi(40, 0.2, 123);
        let b = gen_erdos_renyi(40, 0.2, 123);
        assert_eq!(a, b);
        let c = gen_erdos_renyi(40, 0.2, 124);
        assert_ne!(a, c);
    }

    #[test]
    fn tsp_two_nodes_single_edge() {
        let g = gen_tsp_uniform(2, 9);
        assert_eq!(g.num_edges(), 1);
        let coords = g.coords.as_ref().unwrap();
        let d = euclid(coords[0], coords[1]);
        assert_eq!(g.edges[0].2, d);
        g.validate().unwrap();
    }

    #[test]
    fn tsp_four_nodes_weights_in_unit_square_range() {
        let g = gen_tsp_uniform(4, 11);
        assert_eq!(g.num_edges(), 6);
        for &(_, _, w) in &g.edges {
            assert!((0.0..=std::f64::consts::SQRT_2).contains(&w));
        }
    }

    #[test]
    fn tsp_distance_matrix_symmetric_zero_diagonal() {
        let g = gen_tsp_uniform(100, 5);
        let coords = g.coords.as_ref().unwrap();
        for &(x, y) in coords {
            assert!((0.0..1.0).contains(&x) && (0.0..1.0).contains(&y));
        }
        let d = g.distance_matrix().unwrap();
        for i in 0..100 {
            assert_eq!(d[i * 100 + i], 0.0);
            for j in 0..100 {
                assert_eq!(d[i * 100 + j], d[j * 100 + i]);
            }
        }
    }

    #[test]
    fn round_trip_er_graph() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("er.graph");
        let g = gen_erdos_renyi(30, 0.2, 42);
        g.save(&path).unwrap();
        let h = GraphInstance::load(&path).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn round_trip_tsp_graph() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.graph");
        let g = gen_tsp_uniform(12, 3);
        g.save(&path).unwrap();
        let h = GraphInstance::load(&path).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn self_loop_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.graph");
        fs::write(&path, "4 2 sparse\n0 1\n3 3\n").unwrap();
        match GraphInstance::load(&path) {
            Err(Error::Validation(msg)) => assert!(msg.contains("self-loop"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_edge_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.graph");
        fs::write(&path, "4 2 sparse\n0 1\n1 0\n").unwrap();
        match GraphInstance::load(&path) {
            Err(Error::Validation(msg)) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.graph");
        fs::write(&path, "\n5 sparse\n").unwrap();
        match GraphInstance::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimacs_file_with_250_nodes_loads() {
        // Benchmark instances (RB and friends) ship as DIMACS edge lists;
        // this mirrors that layout at the published 250-node size.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rb250.clq");
        let mut text = String::from("c synthetic benchmark-style file\np edge 250 500\n");
        let mut m = 0;
        'outer: for i in 1..=250u32 {
            for j in (i + 1)..=250u32.min(i + 3) {
                text.push_str(&format!("e {i} {j}\n"));
                m += 1;
                if m == 500 {
                    break 'outer;
                }
            }
        }
        fs::write(&path, text).unwrap();
        let g = GraphInstance::load(&path).unwrap();
        assert_eq!(g.n, 250);
        assert_eq!(g.num_edges(), 500);
    }

    #[test]
    fn dimacs_collapses_bidirectional_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.clq");
        fs::write(&path, "p edge 3 3\ne 1 2\ne 2 1\ne 2 3\n").unwrap();
        let g = GraphInstance::load(&path).unwrap();
        assert_eq!(g.num_edges(), 2);
    }

    proptest! {
        #[test]
        fn save_load_round_trip_is_exact(n in 1usize..16, seed in 0u64..500, p in 0.0f64..1.0) {
            let g = gen_erdos_renyi(n, p, seed);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("g.graph");
            g.save(&path).unwrap();
            let h = GraphInstance::load(&path).unwrap();
            prop_assert_eq!(g, h);
        }
    }
}
