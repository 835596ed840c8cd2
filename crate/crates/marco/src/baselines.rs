//! Classical heuristics and exhaustive oracles.
//!
//! The brute-force routines are deliberately small-n exact solvers used
//! by tests and by `solve --method exact`; they bound every other
//! method's output from above (MaxCut/MIS) or below (TSP tour length).

use crate::error::{Error, Result};
use crate::instances::{GraphInstance, InstanceKind};
use crate::problems::{BinarySolution, Tour};

/// Maximum node count for the bit-vector exhaustive oracles.
pub const EXHAUSTIVE_NODE_LIMIT: usize = 22;
/// Maximum city count for the exhaustive TSP oracle.
pub const EXHAUSTIVE_TSP_LIMIT: usize = 11;

/// Greedy independent set: repeatedly take the alive node with minimum
/// residual degree (ties to the lowest index) and delete its neighbors.
pub fn greedy_mis(g: &GraphInstance) -> BinarySolution {
    let n = g.n;
    let adj = g.adjacency_lists();
    let mut alive = vec![true; n];
    let mut deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut bits = vec![0u8; n];
    let mut alive_count = n;

    let remove = |v: usize, alive: &mut [bool], deg: &mut [usize], count: &mut usize| {
        alive[v] = false;
        *count -= 1;
        for &nb in &adj[v] {
            let nb = nb as usize;
            if alive[nb] {
                deg[nb] -= 1;
            }
        }
    };

    while alive_count > 0 {
        let mut pick = usize::MAX;
        let mut best_deg = usize::MAX;
        for v in 0..n {
            if alive[v] && deg[v] < best_deg {
                best_deg = deg[v];
                pick = v;
            }
        }
        bits[pick] = 1;
        remove(pick, &mut alive, &mut deg, &mut alive_count);
        let neighbors: Vec<usize> =
            adj[pick].iter().map(|&x| x as usize).filter(|&x| alive[x]).collect();
        for nb in neighbors {
            remove(nb, &mut alive, &mut deg, &mut alive_count);
        }
    }
    BinarySolution::from_bits(bits)
}

/// Nearest-neighbor tour: from `start`, repeatedly visit the closest
/// unvisited city (ties to the lowest index), then close the tour.
pub fn nearest_neighbor_tsp(g: &GraphInstance, start: usize) -> Result<Tour> {
    if g.kind != InstanceKind::CompleteMetric {
        return Err(Error::NotMetric);
    }
    let n = g.n;
    assert!(start < n, "start node out of range");
    let mut visited = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut cur = start;
    visited[cur] = true;
    perm.push(cur as u32);
    for _ in 1..n {
        let mut pick = usize::MAX;
        let mut best = f64::INFINITY;
        for v in 0..n {
            if !visited[v] {
                let d = g.distance(cur, v);
                if d < best {
                    best = d;
                    pick = v;
                }
            }
        }
        visited[pick] = true;
        perm.push(pick as u32);
        cur = pick;
    }
    Tour::new(perm)
}

/// Exact MaxCut by Gray-code enumeration over 2^(n-1) assignments with
/// bit 0 fixed to 0 (a cut and its complement are identical), updating
/// the cut incrementally on each single-bit flip.
pub fn brute_force_mc(g: &GraphInstance) -> Result<(BinarySolution, usize)> {
    let n = g.n;
    if n > EXHAUSTIVE_NODE_LIMIT {
        return Err(Error::SizeLimit { n, limit: EXHAUSTIVE_NODE_LIMIT });
    }
    let adj = g.adjacency_lists();
    let mut bits = vec![0u8; n];
    let mut cut: i64 = 0; // all-zero assignment cuts nothing
    let mut best_cut = cut;
    let mut best_bits = bits.clone();
    if n > 1 {
        let total: u64 = 1u64 << (n - 1);
        for k in 1..total {
            // Gray-code step: flip free bit tz(k), i.e. node tz(k)+1.
            let node = k.trailing_zeros() as usize + 1;
            let bi = bits[node];
            for &nb in &adj[node] {
                if bits[nb as usize] == bi {
                    cut += 1;
                } else {
                    cut -= 1;
                }
            }
            bits[node] ^= 1;
            if cut > best_cut {
                best_cut = cut;
                best_bits = bits.clone();
            }
        }
    }
    Ok((BinarySolution::from_bits(best_bits), best_cut as usize))
}

/// Exact maximum independent set by branch-and-bound over node bitmasks:
/// branch on the lowest remaining node (include it and drop its
/// neighborhood, or exclude it), pruning when even taking every
/// remaining node cannot beat the incumbent.
pub fn brute_force_mis(g: &GraphInstance) -> Result<(BinarySolution, usize)> {
    let n = g.n;
    if n > EXHAUSTIVE_NODE_LIMIT {
        return Err(Error::SizeLimit { n, limit: EXHAUSTIVE_NODE_LIMIT });
    }
    let mut nbr = vec![0u64; n];
    for &(i, j, _) in &g.edges {
        nbr[i as usize] |= 1 << j;
        nbr[j as usize] |= 1 << i;
    }

    fn rec(remaining: u64, chosen: u64, size: usize, nbr: &[u64], best: &mut (usize, u64)) {
        if size + remaining.count_ones() as usize <= best.0 {
            return;
        }
        if remaining == 0 {
            // size > best.0 is guaranteed by the prune above
            *best = (size, chosen);
            return;
        }
        let v = remaining.trailing_zeros() as usize;
        let bit = 1u64 << v;
        rec(remaining & !bit & !nbr[v], chosen | bit, size + 1, nbr, best);
        rec(remaining & !bit, chosen, size, nbr, best);
    }

    let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut best = (0usize, 0u64);
    rec(all, 0, 0, &nbr, &mut best);
    let bits = (0..n).map(|v| ((best.1 >> v) & 1) as u8).collect();
    Ok((BinarySolution::from_bits(bits), best.0))
}

/// Exact TSP by depth-first enumeration with node 0 fixed first,
/// reversal symmetry broken at the closing step (second city must
/// precede the last city), and partial-length pruning.
pub fn brute_force_tsp(g: &GraphInstance) -> Result<(Tour, f64)> {
    if g.kind != InstanceKind::CompleteMetric {
        return Err(Error::NotMetric);
    }
    let n = g.n;
    if n > EXHAUSTIVE_TSP_LIMIT {
        return Err(Error::SizeLimit { n, limit: EXHAUSTIVE_TSP_LIMIT });
    }
    if n == 2 {
        let t = Tour::new(vec![0, 1])?;
        let len = 2.0 * g.distance(0, 1);
        return Ok((t, len));
    }
    let dist = g.distance_matrix()?;
    let mut perm: Vec<u32> = vec![0];
    let mut visited = vec![false; n];
    visited[0] = true;

    struct Ctx<'a> {
        n: usize,
        dist: &'a [f64],
        best_len: f64,
        best_perm: Vec<u32>,
    }
    fn dfs(ctx: &mut Ctx, perm: &mut Vec<u32>, visited: &mut [bool], len: f64) {
        let n = ctx.n;
        if len >= ctx.best_len {
            return;
        }
        if perm.len() == n {
            // Break reversal symmetry: each tour pair (p, reverse(p))
            // is counted once via perm[1] < perm[n-1].
            if perm[1] > perm[n - 1] {
                return;
            }
            let closing = ctx.dist[(perm[n - 1] as usize) * n];
            let total = len + closing;
            if total < ctx.best_len {
                ctx.best_len = total;
                ctx.best_perm = perm.clone();
            }
            return;
        }
        let last = *perm.last().unwrap() as usize;
        for v in 1..n {
            if !visited[v] {
                visited[v] = true;
                perm.push(v as u32);
                dfs(ctx, perm, visited, len + ctx.dist[last * n + v]);
                perm.pop();
                visited[v] = false;
            }
        }
    }

    let mut ctx = Ctx { n, dist: &dist, best_len: f64::INFINITY, best_perm: Vec::new() };
    dfs(&mut ctx, &mut perm, &mut visited, 0.0);
    Ok((Tour::new(ctx.best_perm)?, ctx.best_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_erdos_renyi, gen_tsp_uniform};
    use crate::problems::{
        mc_objective, mis_is_independent, mis_objective, tsp_tour_length, BinarySolution,
    };
    use proptest::prelude::*;

    #[test]
    fn greedy_mis_on_path_takes_endpoints() {
        let g = GraphInstance {
            n: 3,
            edges: vec![(0, 1, 1.0), (1, 2, 1.0)],
            coords: None,
            kind: InstanceKind::Sparse,
        };
        let s = greedy_mis(&g);
        assert_eq!(s.bits, vec![1, 0, 1]);
    }

    #[test]
    fn greedy_mis_on_edgeless_takes_everything() {
        let g = GraphInstance {
            n: 5,
            edges: vec![],
            coords: None,
            kind: InstanceKind::Sparse,
        };
        assert_eq!(greedy_mis(&g).ones(), 5);
    }

    #[test]
    fn greedy_mis_bounded_by_exact_optimum() {
        let g = gen_erdos_renyi(12, 0.3, 1);
        let s = greedy_mis(&g);
        assert!(mis_is_independent(&g, &s));
        let (_, opt) = brute_force_mis(&g).unwrap();
        assert!(s.ones() <= opt);
    }

    #[test]
    fn nn_square_boundary_tour() {
        let coords = vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut edges = Vec::new();
        for i in 0..4u32 {
            for j in (i + 1)..4 {
                let (a, b) = (coords[i as usize], coords[j as usize]);
                edges.push((i, j, f64::hypot(a.0 - b.0, a.1 - b.1)));
            }
        }
        let g = GraphInstance {
            n: 4,
            edges,
            coords: Some(coords),
            kind: InstanceKind::CompleteMetric,
        };
        let t = nearest_neighbor_tsp(&g, 0).unwrap();
        assert!((tsp_tour_length(&g, &t).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nn_two_cities() {
        let g = gen_tsp_uniform(2, 4);
        let t = nearest_neighbor_tsp(&g, 0).unwrap();
        let len = tsp_tour_length(&g, &t).unwrap();
        assert!((len - 2.0 * g.distance(0, 1)).abs() < 1e-12);
    }

    #[test]
    fn nn_never_beats_exact() {
        let g = gen_tsp_uniform(9, 17);
        let nn = tsp_tour_length(&g, &nearest_neighbor_tsp(&g, 0).unwrap()).unwrap();
        let (_, opt) = brute_force_tsp(&g).unwrap();
        assert!(nn >= opt - 1e-12);
    }

    #[test]
    fn exact_mc_on_triangle() {
        let g = GraphInstance {
            n: 3,
            edges: vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)],
            coords: None,
            kind: InstanceKind::Sparse,
        };
        let (s, v) = brute_force_mc(&g).unwrap();
        assert_eq!(v, 2);
        assert_eq!(mc_objective(&g, &s).unwrap(), 2);
    }

    #[test]
    fn exact_mis_on_k4() {
        let g = gen_erdos_renyi(4, 1.0, 0);
        let (s, v) = brute_force_mis(&g).unwrap();
        assert_eq!(v, 1);
        assert!(mis_is_independent(&g, &s));
    }

    #[test]
    fn exact_tsp_on_unit_square() {
        let coords = vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut edges = Vec::new();
        for i in 0..4u32 {
            for j in (i + 1)..4 {
                let (a, b) = (coords[i as usize], coords[j as usize]);
                edges.push((i, j, f64::hypot(a.0 - b.0, a.1 - b.1)));
            }
        }
        let g = GraphInstance {
            n: 4,
            edges,
            coords: Some(coords),
            kind: InstanceKind::CompleteMetric,
        };
        let (_, len) = brute_force_tsp(&g).unwrap();
        assert!((len - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_mc_matches_full_enumeration() {
        // Independent check of the Gray-code oracle: score all 2^12
        // assignments directly through the objective function.
        let g = gen_erdos_renyi(12, 0.3, 1);
        let mut best = 0;
        for mask in 0u32..(1 << 12) {
            let bits: Vec<u8> = (0..12).map(|b| ((mask >> b) & 1) as u8).collect();
            best = best.max(mc_objective(&g, &BinarySolution::from_bits(bits)).unwrap());
        }
        let (_, v) = brute_force_mc(&g).unwrap();
        assert_eq!(v, best);
    }

    #[test]
    fn exact_mis_matches_full_enumeration() {
        let g = gen_erdos_renyi(12, 0.3, 1);
        let mut best = 0;
        for mask in 0u32..(1 << 12) {
            let bits: Vec<u8> = (0..12).map(|b| ((mask >> b) & 1) as u8).collect();
            let s = BinarySolution::from_bits(bits);
            if mis_is_independent(&g, &s) {
                best = best.max(s.ones());
            }
        }
        let (_, v) = brute_force_mis(&g).unwrap();
        assert_eq!(v, best);
    }

    #[test]
    fn exact_tsp_matches_naive_enumeration() {
        // Independent check against straightforward permutation listing.
        fn all_perms(rest: &mut Vec<u32>, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if rest.is_empty() {
                out.push(cur.clone());
                return;
            }
            for idx in 0..rest.len() {
                let v = rest.remove(idx);
                cur.push(v);
                all_perms(rest, cur, out);
                cur.pop();
                rest.insert(idx, v);
            }
        }
        for seed in [2u64, 5, 8] {
            let g = gen_tsp_uniform(7, seed);
            let mut perms = Vec::new();
            all_perms(&mut (1..7u32).collect(), &mut vec![0], &mut perms);
            let naive = perms
                .into_iter()
                .map(|p| tsp_tour_length(&g, &Tour::new(p).unwrap()).unwrap())
                .fold(f64::INFINITY, f64::min);
            let (t, len) = brute_force_tsp(&g).unwrap();
            assert!((len - naive).abs() < 1e-9);
            assert!((tsp_tour_length(&g, &t).unwrap() - len).abs() < 1e-12);
        }
    }

    #[test]
    fn size_limits_are_enforced() {
        let g = gen_erdos_renyi(23, 0.1, 0);
        assert!(matches!(brute_force_mc(&g), Err(Error::SizeLimit { .. })));
        assert!(matches!(brute_force_mis(&g), Err(Error::SizeLimit { .. })));
        let t = gen_tsp_uniform(12, 0);
        assert!(matches!(brute_force_tsp(&t), Err(Error::SizeLimit { .. })));
    }

    proptest! {
        #[test]
        fn greedy_is_feasible_and_bounded(seed in 0u64..60, n in 2usize..14, p in 0.0f64..0.8) {
            let g = gen_erdos_renyi(n, p, seed);
            let s = greedy_mis(&g);
            prop_assert!(mis_is_independent(&g, &s));
            let (_, opt) = brute_force_mis(&g).unwrap();
            prop_assert!(mis_objective(&g, &s).unwrap() <= opt);
        }

        #[test]
        fn nn_is_valid_and_bounded(seed in 0u64..40, n in 3usize..9, start in 0usize..3) {
            let g = gen_tsp_uniform(n, seed);
            let t = nearest_neighbor_tsp(&g, start % n).unwrap();
            prop_assert_eq!(t.perm[0] as usize, start % n);
            let nn_len = tsp_tour_length(&g, &t).unwrap();
            let (_, opt) = brute_force_tsp(&g).unwrap();
            prop_assert!(nn_len >= opt - 1e-12);
        }
    }
}
