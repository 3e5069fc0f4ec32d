//! Chain distance `d_ε`, chain count `N_ε` and the implicit scale `ε(t,x,y)`.
//!
//! An ε-chain is a vertex sequence whose consecutive points are at distance
//! strictly less than `ε`. `d_ε(x,y)` is the smallest total length of such a
//! chain and `N_ε(x,y)` the smallest number of steps.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::report::{Condition, ConditionReport, Window};
use crate::scale::ScaleFunction;
use crate::space::MetricMeasureGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub x: usize,
    pub y: usize,
    pub epsilon: f64,
    /// `f64::INFINITY` when no ε-chain exists.
    pub d_eps: f64,
    /// `None` when no ε-chain exists.
    pub n_eps: Option<usize>,
    /// Chain witnessing `d_eps`; empty when infinite.
    pub chain: Vec<usize>,
}

impl ChainResult {
    pub const CSV_HEADER: &'static str = "x,y,eps,d_eps,n_eps,chain";

    pub fn csv_row(&self) -> String {
        let n = self.n_eps.map_or("inf".to_string(), |n| n.to_string());
        let chain: Vec<String> = self.chain.iter().map(|v| v.to_string()).collect();
        format!(
            "{},{},{},{},{},{}",
            self.x,
            self.y,
            self.epsilon,
            fmt_real(self.d_eps),
            n,
            chain.join(";")
        )
    }
}

fn fmt_real(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        x.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSolution {
    pub t: f64,
    /// `f64::INFINITY` when `x = y`.
    pub epsilon: f64,
    /// `F(ε)/ε · d_ε(x,y)`; zero when `x = y`.
    pub g_value: f64,
    pub d_eps: f64,
    /// The root sits on a breakpoint of `d_ε` rather than inside an interval.
    pub at_breakpoint: bool,
}

#[derive(Clone, Copy, PartialEq)]
struct Item {
    dist: f64,
    vertex: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| self.vertex.cmp(&other.vertex))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Step admissibility: `d < bound`, or `d ≤ bound` when `inclusive`.
#[derive(Clone, Copy)]
struct Steps {
    bound: f64,
    inclusive: bool,
}

impl Steps {
    fn admits(&self, d: f64) -> bool {
        d > 0.0 && if self.inclusive { d <= self.bound } else { d < self.bound }
    }
}

/// Shortest chain length and witnessing chain in the auxiliary graph.
fn chain_dijkstra(g: &MetricMeasureGraph, x: usize, y: usize, steps: Steps) -> (f64, Vec<usize>) {
    let n = g.vertex_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[x] = 0.0;
    heap.push(Item { dist: 0.0, vertex: x });
    while let Some(Item { dist: du, vertex: u }) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        if u == y {
            break;
        }
        let row = g.distances_from(u);
        for (v, &d) in row.iter().enumerate() {
            if steps.admits(d) {
                let nd = du + d;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                    heap.push(Item { dist: nd, vertex: v });
                }
            }
        }
    }
    if !dist[y].is_finite() {
        return (f64::INFINITY, Vec::new());
    }
    let mut chain = vec![y];
    let mut v = y;
    while v != x {
        v = prev[v];
        chain.push(v);
    }
    chain.reverse();
    (dist[y], chain)
}

fn min_hops(g: &MetricMeasureGraph, x: usize, y: usize, steps: Steps) -> Option<usize> {
    if x == y {
        return Some(0);
    }
    let n = g.vertex_count();
    let mut hops = vec![usize::MAX; n];
    hops[x] = 0;
    let mut queue = VecDeque::from([x]);
    while let Some(u) = queue.pop_front() {
        let row = g.distances_from(u);
        for (v, &d) in row.iter().enumerate() {
            if hops[v] == usize::MAX && steps.admits(d) {
                hops[v] = hops[u] + 1;
                if v == y {
                    return Some(hops[v]);
                }
                queue.push_back(v);
            }
        }
    }
    None
}

/// Vertex sequence of a graph geodesic from `x` to `y`.
pub fn geodesic(g: &MetricMeasureGraph, x: usize, y: usize) -> Option<Vec<usize>> {
    let row = g.distances_from(x);
    if !row[y].is_finite() {
        return None;
    }
    let mut path = vec![y];
    let mut v = y;
    while v != x {
        let dv = row[v];
        let next = g
            .neighbors(v)
            .iter()
            .filter(|nb| (row[nb.vertex] + nb.length - dv).abs() <= 1e-9 * dv.max(1.0))
            .map(|nb| nb.vertex)
            .min_by(|a, b| row[*a].total_cmp(&row[*b]))?;
        path.push(next);
        v = next;
    }
    path.reverse();
    Some(path)
}

/// `d_ε(x,y)`, a witnessing chain and `N_ε(x,y)`.
pub fn chain_metric(g: &MetricMeasureGraph, x: usize, y: usize, eps: f64) -> Result<ChainResult> {
    g.check_vertex(x)?;
    g.check_vertex(y)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", eps)));
    }
    let steps = Steps {
        bound: eps,
        inclusive: false,
    };
    let (d_eps, chain) = if x == y {
        (0.0, vec![x])
    } else if eps > g.max_edge_length() {
        // Every graph geodesic is already an ε-chain.
        match geodesic(g, x, y) {
            Some(p) => (g.distance(x, y), p),
            None => (f64::INFINITY, Vec::new()),
        }
    } else {
        chain_dijkstra(g, x, y, steps)
    };
    let n_eps = if d_eps.is_finite() { min_hops(g, x, y, steps) } else { None };
    Ok(ChainResult {
        x,
        y,
        epsilon: eps,
        d_eps,
        n_eps,
        chain,
    })
}

fn validate_chain(g: &MetricMeasureGraph, chain: &[usize], eps: f64) -> Result<()> {
    if chain.is_empty() {
        return Err(Error::InvalidArgument("empty chain".into()));
    }
    for &v in chain {
        g.check_vertex(v)?;
    }
    for (i, w) in chain.windows(2).enumerate() {
        let d = g.distance(w[0], w[1]);
        if !(d < eps) {
            return Err(Error::InvalidArgument(format!(
                "step {} ({} -> {}) has length {} >= epsilon {}",
                i + 1,
                w[0],
                w[1],
                d,
                eps
            )));
        }
    }
    Ok(())
}

/// Repeatedly drops the first interior point whose two adjacent steps are
/// both shorter than `ε/2`.
pub fn shorten_chain(g: &MetricMeasureGraph, chain: &[usize], eps: f64) -> Result<Vec<usize>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", eps)));
    }
    validate_chain(g, chain, eps)?;
    let mut c = chain.to_vec();
    let half = eps / 2.0;
    let mut i = 1;
    while i + 1 < c.len() {
        if g.distance(c[i - 1], c[i]) < half && g.distance(c[i], c[i + 1]) < half {
            c.remove(i);
            i = 1;
        } else {
            i += 1;
        }
    }
    Ok(c)
}

/// `ε(t,x,y) = sup{ε : F(ε)/ε · d_ε(x,y) ≤ t}`.
///
/// `d_ε` is constant on each interval `(a_k, a_{k+1}]` between consecutive
/// pairwise distances `a_k` not exceeding the longest edge, and equals
/// `d(x,y)` above the longest edge. The intervals are scanned from the top;
/// the first one where `g` dips to `t` holds the supremum.
pub fn solve_epsilon(g: &MetricMeasureGraph, f: &ScaleFunction, t: f64, x: usize, y: usize) -> Result<EpsilonSolution> {
    g.check_vertex(x)?;
    g.check_vertex(y)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {}", t)));
    }
    if x == y {
        return Ok(EpsilonSolution {
            t,
            epsilon: f64::INFINITY,
            g_value: 0.0,
            d_eps: 0.0,
            at_breakpoint: false,
        });
    }
    let d = g.distance(x, y);
    if !d.is_finite() {
        return Err(Error::InvalidArgument(format!("{} and {} lie in different components", x, y)));
    }
    let gfun = |eps: f64, de: f64| f.eval_unchecked(eps) / eps * de;
    let breaks = breakpoints(g);
    // Interval k is (breaks[k], breaks[k+1]] with the top one unbounded.
    let mut min_g = f64::INFINITY;
    for k in (0..breaks.len()).rev() {
        let lo = breaks[k];
        let de = if k + 1 == breaks.len() {
            d
        } else {
            chain_dijkstra(g, x, y, Steps { bound: lo, inclusive: true }).0
        };
        if !de.is_finite() {
            continue;
        }
        let g_lo = gfun(lo, de);
        min_g = min_g.min(g_lo);
        match breaks.get(k + 1) {
            Some(&hi) if gfun(hi, de) <= t => {
                return Ok(EpsilonSolution {
                    t,
                    epsilon: hi,
                    g_value: gfun(hi, de),
                    d_eps: de,
                    at_breakpoint: true,
                });
            }
            _ => {}
        }
        if g_lo < t {
            let hi = match breaks.get(k + 1) {
                Some(&hi) => hi,
                None => {
                    let mut hi = lo.max(1.0) * 2.0;
                    while gfun(hi, de) <= t {
                        hi *= 2.0;
                    }
                    hi
                }
            };
            let (mut a, mut b) = (lo, hi);
            while (b - a) > 1e-12 * b {
                let mid = 0.5 * (a + b);
                if gfun(mid, de) <= t {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(EpsilonSolution {
                t,
                epsilon: a,
                g_value: gfun(a, de),
                d_eps: de,
                at_breakpoint: false,
            });
        }
    }
    Err(Error::BelowResolution {
        min_achievable: min_g,
        target: t,
    })
}

/// Distinct pairwise distances up to the longest edge, ascending.
fn breakpoints(g: &MetricMeasureGraph) -> Vec<f64> {
    let top = g.max_edge_length();
    let mut out: Vec<f64> = (0..g.vertex_count())
        .flat_map(|u| {
            g.distances_within(u, top * (1.0 + 1e-12))
                .into_iter()
                .map(|p| p.1)
                .filter(|&d| d > 0.0)
                .collect::<Vec<_>>()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    out
}

/// `g(ε) = F(ε)/ε · d_ε(x,y)` at the lower end of every interval: the
/// finite-graph stand-in for `g(ε) → 0` as `ε → 0`.
pub fn resolution_profile(g: &MetricMeasureGraph, f: &ScaleFunction, x: usize, y: usize) -> Result<Vec<(f64, f64)>> {
    g.check_vertex(x)?;
    g.check_vertex(y)?;
    Ok(breakpoints(g)
        .into_iter()
        .map(|a| {
            let de = chain_dijkstra(g, x, y, Steps { bound: a, inclusive: true }).0;
            (a, f.eval_unchecked(a) / a * de)
        })
        .collect())
}

/// Chain-condition constant `C`: for each pair and `n`, the smallest
/// achievable maximal step of an `n`-step chain along a geodesic, times
/// `n/d(x,y)`. Also reports `max d_ε/d` at `ε = d/n`.
pub fn check_chain_condition(g: &MetricMeasureGraph, pairs: &[(usize, usize)], n_values: &[usize]) -> Result<ConditionReport> {
    if pairs.is_empty() || n_values.is_empty() {
        return Err(Error::InvalidArgument("chain condition needs pairs and n values".into()));
    }
    let mut rep = ConditionReport::new(
        Condition::ChainCondition,
        Window::radii(g.min_edge_length(), g.diameter()),
        format!("{} pairs, n in {:?}, chains along graph geodesics", pairs.len(), n_values),
    );
    let mut c: f64 = 0.0;
    let mut ratio: f64 = 1.0;
    let mut skipped = 0;
    for &(x, y) in pairs {
        g.check_vertex(x)?;
        g.check_vertex(y)?;
        if x == y {
            continue;
        }
        let Some(path) = geodesic(g, x, y) else {
            skipped += 1;
            rep.note(format!("pair ({}, {}) is disconnected; skipped", x, y));
            continue;
        };
        let row = g.distances_from(x);
        let pos: Vec<f64> = path.iter().map(|&v| row[v]).collect();
        let d = pos[pos.len() - 1];
        for &n in n_values {
            if n == 0 || n > path.len() - 1 {
                continue;
            }
            let best = best_max_step(&pos, n);
            let cn = n as f64 * best / d;
            c = c.max(cn);
            let eps = d / n as f64;
            let de = chain_metric(g, x, y, eps)?.d_eps;
            if de.is_finite() {
                ratio = ratio.max(de / d);
            }
            rep.samples.push(json!({"x": x, "y": y, "n": n, "C": cn, "d_eps_over_d": de / d}));
        }
    }
    if rep.samples.is_empty() {
        return Err(Error::InvalidArgument("no usable (pair, n) samples".into()));
    }
    rep.insert("C", c);
    rep.insert("max_d_eps_over_d", ratio);
    rep.insert("skipped", skipped as f64);
    rep.set_pass(c.is_finite());
    Ok(rep)
}

/// Smallest `s` such that positions along a geodesic can be covered by
/// `n` jumps of length at most `s`.
fn best_max_step(pos: &[f64], n: usize) -> f64 {
    let feasible = |s: f64| {
        let mut count = 0;
        let mut i = 0;
        while i + 1 < pos.len() {
            let mut j = i;
            while j + 1 < pos.len() && pos[j + 1] - pos[i] <= s {
                j += 1;
            }
            if j == i {
                return false;
            }
            i = j;
            count += 1;
        }
        count <= n
    };
    let total = pos[pos.len() - 1];
    let (mut lo, mut hi) = (total / n as f64 * (1.0 - 1e-12), total);
    if feasible(lo) {
        return lo;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Edge;

    fn path(n: usize) -> MetricMeasureGraph {
        MetricMeasureGraph::path(n).unwrap()
    }

    #[test]
    fn chain_metric_examples() {
        let g = path(5);
        let r = chain_metric(&g, 0, 4, 1.5).unwrap();
        assert_eq!(r.d_eps, 4.0);
        assert_eq!(r.chain, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.n_eps, Some(4));
        let r = chain_metric(&g, 0, 4, 5.0).unwrap();
        assert_eq!(r.d_eps, 4.0);
        assert_eq!(r.n_eps, Some(1));
        let r = chain_metric(&g, 0, 4, 0.5).unwrap();
        assert!(r.d_eps.is_infinite() && r.n_eps.is_none() && r.chain.is_empty());
        assert_eq!(r.csv_row(), "0,4,0.5,inf,inf,");
    }

    #[test]
    fn chain_metric_with_detour() {
        // The edge 2-3 has length 3, so vertex 3 is out of reach for ε = 2.5
        // while 0 and 2 are joined by a single step.
        let g = MetricMeasureGraph::from_edges(
            4,
            vec![
                Edge { u: 0, v: 1, conductance: 1.0, length: 1.0 },
                Edge { u: 1, v: 2, conductance: 1.0, length: 1.0 },
                Edge { u: 2, v: 3, conductance: 1.0, length: 3.0 },
            ],
            None,
        )
        .unwrap();
        let r = chain_metric(&g, 0, 3, 2.5).unwrap();
        assert!(r.d_eps.is_infinite());
        let r = chain_metric(&g, 0, 2, 2.5).unwrap();
        assert_eq!(r.d_eps, 2.0);
        assert_eq!(r.n_eps, Some(1));
    }

    #[test]
    fn shorten_examples() {
        let g = path(5);
        assert_eq!(shorten_chain(&g, &[0, 1, 2, 3, 4], 3.0).unwrap(), vec![0, 2, 4]);
        assert_eq!(shorten_chain(&g, &[0, 1], 3.0).unwrap(), vec![0, 1]);
        let err = shorten_chain(&g, &[0, 2, 4], 1.5).unwrap_err();
        assert!(err.to_string().contains("step 1"));
    }

    #[test]
    fn solve_epsilon_examples() {
        let g = path(9);
        let f = ScaleFunction::power(2.0).unwrap();
        let s = solve_epsilon(&g, &f, 8.0, 0, 4).unwrap();
        assert!((s.epsilon - 2.0).abs() < 1e-9);
        assert!((s.g_value - 8.0).abs() < 1e-8);
        assert!(solve_epsilon(&g, &f, 1.0, 2, 2).unwrap().epsilon.is_infinite());
        match solve_epsilon(&g, &f, 1.0, 0, 8) {
            Err(Error::BelowResolution { min_achievable, target }) => {
                assert!((min_achievable - 8.0).abs() < 1e-12 && target == 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chain_condition_examples() {
        let g = path(40);
        let pairs: Vec<(usize, usize)> = (1..39).map(|y| (0, y)).collect();
        let rep = check_chain_condition(&g, &pairs, &[1, 2, 3, 5, 8]).unwrap();
        let c = rep.constant("C").unwrap();
        assert!(c >= 1.0 && c <= 2.0, "{c}");
        let star = MetricMeasureGraph::star(5).unwrap();
        let rep = check_chain_condition(&star, &[(0, 3)], &[1, 2]).unwrap();
        assert_eq!(rep.constant("C").unwrap(), 1.0);
    }
}
