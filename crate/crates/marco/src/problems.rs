//! Problem definitions: solution representations, objectives, move
//! semantics, and feasibility rules for MaxCut, maximum independent set,
//! and the traveling salesman problem.
//!
//! MaxCut and MIS solutions are bit vectors over the nodes; the search
//! engine modifies them one node flip at a time. MIS flips that would
//! break feasibility repair it by deselecting the flipped node's selected
//! neighbors, so every reachable state is an independent set. TSP
//! solutions are permutations, built constructively; their incidence
//! structure is handled as sparse sorted edge sets rather than dense
//! n² vectors, which keeps memory costs linear in tour count.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::instances::{GraphInstance, InstanceKind};

/// Which optimization problem an instance/solver/model targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    MaxCut,
    Mis,
    Tsp,
}

impl ProblemKind {
    /// True for the bit-vector problems solved by flip-improvement search.
    pub fn is_improvement(self) -> bool {
        matches!(self, ProblemKind::MaxCut | ProblemKind::Mis)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::MaxCut => write!(f, "mc"),
            ProblemKind::Mis => write!(f, "mis"),
            ProblemKind::Tsp => write!(f, "tsp"),
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" | "maxcut" => Ok(ProblemKind::MaxCut),
            "mis" => Ok(ProblemKind::Mis),
            "tsp" => Ok(ProblemKind::Tsp),
            other => Err(Error::Validation(format!("unknown problem `{other}`"))),
        }
    }
}

/// A 0/1 assignment over the nodes of a graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinarySolution {
    pub bits: Vec<u8>,
}

impl BinarySolution {
    pub fn zeros(n: usize) -> Self {
        BinarySolution { bits: vec![0; n] }
    }

    pub fn from_bits(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        BinarySolution { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of selected (1) positions.
    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn complement(&self) -> BinarySolution {
        BinarySolution { bits: self.bits.iter().map(|&b| 1 - b).collect() }
    }
}

/// A complete TSP tour: a permutation of the nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tour {
    pub perm: Vec<u32>,
}

impl Tour {
    pub fn new(perm: Vec<u32>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &v in &perm {
            if (v as usize) >= n || seen[v as usize] {
                return Err(Error::Validation(format!(
                    "tour is not a permutation: bad or repeated node {v}"
                )));
            }
            seen[v as usize] = true;
        }
        Ok(Tour { perm })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// The tour's undirected edge set, normalized and sorted ascending.
    /// Includes the closing edge back to the start.
    pub fn edge_set(&self) -> Vec<(u32, u32)> {
        let n = self.perm.len();
        if n < 2 {
            return Vec::new();
        }
        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.perm[i];
            let b = self.perm[(i + 1) % n];
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup(); // n = 2 yields the same edge twice
        edges
    }
}

/// A tour under construction: an ordered list of distinct visited nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialTour {
    pub seq: Vec<u32>,
}

impl PartialTour {
    pub fn start(node: u32) -> Self {
        PartialTour { seq: vec![node] }
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    /// The consecutive undirected edges of the sequence so far — no
    /// closing edge until the tour is complete.
    pub fn edge_set(&self) -> Result<Vec<(u32, u32)>> {
        partial_edge_set(&self.seq)
    }

    /// Finish into a `Tour` (caller guarantees all nodes visited).
    pub fn into_tour(self) -> Result<Tour> {
        Tour::new(self.seq)
    }
}

/// Undirected edge set of a complete tour given as a permutation.
pub fn tour_edge_set(perm: &[u32]) -> Result<Vec<(u32, u32)>> {
    let t = Tour::new(perm.to_vec())?;
    Ok(t.edge_set())
}

/// Undirected edge set of the consecutive pairs of a node sequence
/// (no wraparound). Errors on repeated nodes.
pub fn partial_edge_set(seq: &[u32]) -> Result<Vec<(u32, u32)>> {
    let mut sorted = seq.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("sequence contains a repeated node".into()));
    }
    let mut edges: Vec<(u32, u32)> = seq
        .windows(2)
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .collect();
    edges.sort_unstable();
    Ok(edges)
}

/// Cut value: the number of edges whose endpoints get different bits.
pub fn mc_objective(g: &GraphInstance, s: &BinarySolution) -> Result<usize> {
    if s.len() != g.n {
        return Err(Error::LengthMismatch { expected: g.n, got: s.len() });
    }
    Ok(g.edges
        .iter()
        .filter(|&&(i, j, _)| s.bits[i as usize] != s.bits[j as usize])
        .count())
}

/// True iff no edge has both endpoints selected.
///
/// Panics on length mismatch (documented precondition).
pub fn mis_is_independent(g: &GraphInstance, s: &BinarySolution) -> bool {
    assert_eq!(s.len(), g.n, "solution length must match instance");
    g.edges
        .iter()
        .all(|&(i, j, _)| s.bits[i as usize] == 0 || s.bits[j as usize] == 0)
}

/// Independent-set size. Errors if the solution is not independent;
/// callers must repair infeasible states before scoring them.
pub fn mis_objective(g: &GraphInstance, s: &BinarySolution) -> Result<usize> {
    if s.len() != g.n {
        return Err(Error::LengthMismatch { expected: g.n, got: s.len() });
    }
    if !mis_is_independent(g, s) {
        return Err(Error::NotIndependent);
    }
    Ok(s.ones())
}

/// Apply a single node flip, using precomputed adjacency lists.
///
/// MaxCut: toggle bit `i`. MIS: selecting a node deselects all of its
/// currently selected neighbors (repair), so the result is always an
/// independent set; deselecting just clears the bit.
pub fn apply_flip_adj(
    adj: &[Vec<u32>],
    s: &BinarySolution,
    i: usize,
    kind: ProblemKind,
) -> BinarySolution {
    debug_assert!(i < s.len());
    let mut out = s.clone();
    match kind {
        ProblemKind::MaxCut => {
            out.bits[i] ^= 1;
        }
        ProblemKind::Mis => {
            if out.bits[i] == 1 {
                out.bits[i] = 0;
            } else {
                out.bits[i] = 1;
                for &nb in &adj[i] {
                    out.bits[nb as usize] = 0;
                }
            }
        }
        ProblemKind::Tsp => panic!("apply_flip is undefined for constructive problems"),
    }
    out
}

/// Convenience wrapper that builds adjacency lists on the fly.
pub fn apply_flip(
    g: &GraphInstance,
    s: &BinarySolution,
    i: usize,
    kind: ProblemKind,
) -> BinarySolution {
    apply_flip_adj(&g.adjacency_lists(), s, i, kind)
}

/// Objective change from flipping node `i` under MaxCut, in O(deg(i)):
/// edges to same-bit neighbors start crossing, edges to different-bit
/// neighbors stop.
pub fn mc_flip_delta(adj: &[Vec<u32>], s: &BinarySolution, i: usize) -> i64 {
    let bi = s.bits[i];
    let mut delta = 0i64;
    for &nb in &adj[i] {
        if s.bits[nb as usize] == bi {
            delta += 1;
        } else {
            delta -= 1;
        }
    }
    delta
}

/// Objective change from flipping node `i` under MIS with repair:
/// selecting gains 1 and loses each deselected neighbor; deselecting
/// loses 1.
pub fn mis_flip_delta(adj: &[Vec<u32>], s: &BinarySolution, i: usize) -> i64 {
    if s.bits[i] == 1 {
        -1
    } else {
        let cleared: i64 = adj[i].iter().map(|&nb| s.bits[nb as usize] as i64).sum();
        1 - cleared
    }
}

/// Total tour length with wraparound back to the first node.
pub fn tsp_tour_length(g: &GraphInstance, t: &Tour) -> Result<f64> {
    if g.kind != InstanceKind::CompleteMetric {
        return Err(Error::NotMetric);
    }
    if t.len() != g.n {
        return Err(Error::LengthMismatch { expected: g.n, got: t.len() });
    }
    let n = t.len();
    let mut total = 0.0;
    for i in 0..n {
        let a = t.perm[i] as usize;
        let b = t.perm[(i + 1) % n] as usize;
        total += g.distance(a, b);
    }
    Ok(total)
}
