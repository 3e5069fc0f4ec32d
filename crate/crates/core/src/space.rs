//! Finite metric measure graphs.
//!
//! A [`MetricMeasureGraph`] carries two independent structures on the same
//! vertex set: symmetric conductances (which drive the Dirichlet form and the
//! random walk) and edge lengths (which define the shortest-path metric `d`).
//! The vertex measure `μ` defaults to the weighted degree, so the associated
//! walk is the variable-speed chain and the heat kernel is symmetric in
//! `ℓ²(μ)`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::Window;
use crate::stats;

/// Graphs up to this size cache one full distance row per queried source.
pub const DISTANCE_CACHE_LIMIT: usize = 5000;

/// Default cap on the Sierpinski gasket level.
pub const DEFAULT_MAX_SG_LEVEL: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub conductance: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub vertex: usize,
    pub conductance: f64,
    pub length: f64,
}

#[derive(Debug, Clone)]
pub struct MetricMeasureGraph {
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Neighbor>>,
    measure: Vec<f64>,
    distance_cache: Vec<OnceLock<Arc<[f64]>>>,
    components: OnceLock<Vec<usize>>,
    diameter: OnceLock<f64>,
}

/// Open metric ball `{y : d(center, y) < radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
    /// Sorted vertex ids.
    pub members: Vec<usize>,
}

impl Ball {
    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSample {
    pub x: usize,
    pub r: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub doubling_constant: f64,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub samples: Vec<VolumeSample>,
    pub window: Window,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| self.vertex.cmp(&other.vertex))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl MetricMeasureGraph {
    /// Builds a graph from an edge list. Duplicate listings of the same
    /// unordered pair are accepted only when conductance and length agree.
    /// When `measure` is `None` the weighted degree is used.
    pub fn from_edges(
        vertex_count: usize,
        edges: Vec<Edge>,
        measure: Option<Vec<f64>>,
    ) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidSize("graph needs at least one vertex".into()));
        }
        let mut seen: HashMap<(usize, usize), Edge> = HashMap::new();
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            validate_edge(&e, vertex_count).map_err(Error::InvalidArgument)?;
            let key = (e.u.min(e.v), e.u.max(e.v));
            match seen.get(&key) {
                Some(prev) => {
                    if prev.conductance != e.conductance || prev.length != e.length {
                        return Err(Error::InvalidArgument(format!(
                            "asymmetric duplicate edge {}-{}",
                            key.0, key.1
                        )));
                    }
                }
                None => {
                    seen.insert(key, e);
                    kept.push(Edge {
                        u: key.0,
                        v: key.1,
                        ..e
                    });
                }
            }
        }
        Self::assemble(vertex_count, kept, measure)
    }

    fn assemble(vertex_count: usize, edges: Vec<Edge>, measure: Option<Vec<f64>>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); vertex_count];
        for e in &edges {
            adjacency[e.u].push(Neighbor {
                vertex: e.v,
                conductance: e.conductance,
                length: e.length,
            });
            adjacency[e.v].push(Neighbor {
                vertex: e.u,
                conductance: e.conductance,
                length: e.length,
            });
        }
        let measure = match measure {
            Some(m) => {
                if m.len() != vertex_count {
                    return Err(Error::InvalidArgument(format!(
                        "measure has {} entries for {} vertices",
                        m.len(),
                        vertex_count
                    )));
                }
                if let Some(i) = m.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
                    return Err(Error::InvalidArgument(format!(
                        "measure of vertex {} must be positive",
                        i
                    )));
                }
                m
            }
            None => {
                let m: Vec<f64> = adjacency
                    .iter()
                    .map(|nb| nb.iter().map(|n| n.conductance).sum())
                    .collect();
                if let Some(i) = m.iter().position(|&w| w <= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "vertex {} is isolated; weighted-degree measure would vanish",
                        i
                    )));
                }
                m
            }
        };
        Ok(MetricMeasureGraph {
            edges,
            adjacency,
            measure,
            distance_cache: (0..vertex_count).map(|_| OnceLock::new()).collect(),
            components: OnceLock::new(),
            diameter: OnceLock::new(),
        })
    }

    /// Path `0-1-...-(n-1)` with unit conductances and lengths.
    pub fn path(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("path needs n >= 2, got {}", n)));
        }
        let edges = (0..n - 1).map(|i| unit_edge(i, i + 1)).collect();
        Self::assemble(n, edges, None)
    }

    /// Cycle on `n >= 3` vertices with unit conductances and lengths.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSize(format!("cycle needs n >= 3, got {}", n)));
        }
        let edges = (0..n).map(|i| unit_edge(i, (i + 1) % n)).collect();
        Self::assemble(n, edges, None)
    }

    /// Star with center 0 and `leaves` unit edges.
    pub fn star(leaves: usize) -> Result<Self> {
        if leaves < 1 {
            return Err(Error::InvalidSize("star needs at least one leaf".into()));
        }
        let edges = (1..=leaves).map(|i| unit_edge(0, i)).collect();
        Self::assemble(leaves + 1, edges, None)
    }

    /// Standard graph approximation of the Sierpinski gasket at `level`.
    pub fn sierpinski(level: u32) -> Result<Self> {
        Self::sierpinski_with_limit(level, DEFAULT_MAX_SG_LEVEL)
    }

    pub fn sierpinski_with_limit(level: u32, max_level: u32) -> Result<Self> {
        if level > max_level {
            return Err(Error::ResourceLimit(format!(
                "gasket level {} exceeds configured maximum {}",
                level, max_level
            )));
        }
        // Vertices live on the triangular lattice a·e1 + b·e2; level-k is three
        // level-(k−1) copies of half the side glued at their corners.
        let side = 1i64 << level;
        let mut ids: HashMap<(i64, i64), usize> = HashMap::new();
        let mut edges = Vec::with_capacity(3usize.pow(level + 1));
        let mut stack = vec![(0i64, 0i64, side)];
        let intern = |p: (i64, i64), ids: &mut HashMap<(i64, i64), usize>| -> usize {
            let next = ids.len();
            *ids.entry(p).or_insert(next)
        };
        // Depth-first with a fixed child order keeps vertex numbering deterministic.
        while let Some((a, b, s)) = stack.pop() {
            if s == 1 {
                let p0 = intern((a, b), &mut ids);
                let p1 = intern((a + 1, b), &mut ids);
                let p2 = intern((a, b + 1), &mut ids);
                edges.push(unit_edge(p0, p1));
                edges.push(unit_edge(p1, p2));
                edges.push(unit_edge(p0, p2));
            } else {
                let h = s / 2;
                stack.push((a, b + h, h));
                stack.push((a + h, b, h));
                stack.push((a, b, h));
            }
        }
        let n = ids.len();
        Self::assemble(n, edges, None)
    }

    /// Parses the edge-list text format: one `u v conductance length` per
    /// line, vertex ids from 0; `#` starts a comment line. An optional
    /// `MEASURE` line switches to `v mu` lines giving every vertex's measure,
    /// otherwise the weighted degree is used. Errors carry the line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut edge_lines: HashMap<(usize, usize), (usize, Edge)> = HashMap::new();
        let mut measure_entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut in_measure = false;
        let mut max_id: Option<usize> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "MEASURE" {
                if in_measure {
                    return Err(Error::parse(line_no, "second MEASURE section"));
                }
                in_measure = true;
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if in_measure {
                if fields.len() != 2 {
                    return Err(Error::parse(line_no, "expected \"v mu\""));
                }
                let v = parse_id(fields[0], line_no)?;
                let mu = parse_real(fields[1], line_no, "measure")?;
                if !(mu > 0.0) {
                    return Err(Error::parse(line_no, format!("measure must be positive, got {}", mu)));
                }
                measure_entries.push((line_no, v, mu));
                continue;
            }
            if fields.len() != 4 {
                return Err(Error::parse(line_no, "expected \"u v conductance length\""));
            }
            let u = parse_id(fields[0], line_no)?;
            let v = parse_id(fields[1], line_no)?;
            let c = parse_real(fields[2], line_no, "conductance")?;
            let l = parse_real(fields[3], line_no, "length")?;
            let e = Edge {
                u,
                v,
                conductance: c,
                length: l,
            };
            validate_edge(&e, usize::MAX).map_err(|m| Error::parse(line_no, m))?;
            let key = (u.min(v), u.max(v));
            if let Some((prev_line, prev)) = edge_lines.get(&key) {
                if prev.conductance != c || prev.length != l {
                    return Err(Error::parse(
                        line_no,
                        format!(
                            "asymmetric duplicate of edge {}-{} from line {}",
                            key.0, key.1, prev_line
                        ),
                    ));
                }
                continue;
            }
            edge_lines.insert(key, (line_no, e));
            max_id = Some(max_id.map_or(key.1, |m: usize| m.max(key.1)));
            edges.push(Edge {
                u: key.0,
                v: key.1,
                ..e
            });
        }

        let n = match max_id {
            Some(m) => m + 1,
            None => return Err(Error::parse(0, "no edges")),
        };
        let mut degree_seen = vec![false; n];
        for e in &edges {
            degree_seen[e.u] = true;
            degree_seen[e.v] = true;
        }
        if let Some(v) = degree_seen.iter().position(|s| !s) {
            return Err(Error::parse(0, format!("vertex {} has no incident edge", v)));
        }
        let measure = if measure_entries.is_empty() {
            None
        } else {
            let mut m = vec![f64::NAN; n];
            for &(line_no, v, mu) in &measure_entries {
                if v >= n {
                    return Err(Error::parse(
                        line_no,
                        format!("measure for dangling vertex id {} (graph has {} vertices)", v, n),
                    ));
                }
                if !m[v].is_nan() {
                    return Err(Error::parse(line_no, format!("duplicate measure for vertex {}", v)));
                }
                m[v] = mu;
            }
            if let Some(v) = m.iter().position(|x| x.is_nan()) {
                return Err(Error::parse(0, format!("MEASURE section misses vertex {}", v)));
            }
            Some(m)
        };
        Self::assemble(n, edges, measure)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Same graph with `μ ≡ 1`.
    pub fn with_uniform_measure(&self) -> Self {
        Self::assemble(
            self.vertex_count(),
            self.edges.clone(),
            Some(vec![1.0; self.vertex_count()]),
        )
        .expect("uniform measure is valid")
    }

    pub fn with_measure(&self, measure: Vec<f64>) -> Result<Self> {
        Self::assemble(self.vertex_count(), self.edges.clone(), Some(measure))
    }

    /// Disjoint union; vertices of `other` are shifted by `self.vertex_count()`.
    pub fn disjoint_union(&self, other: &Self) -> Self {
        let shift = self.vertex_count();
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|e| Edge {
            u: e.u + shift,
            v: e.v + shift,
            ..*e
        }));
        let mut measure = self.measure.clone();
        measure.extend_from_slice(&other.measure);
        Self::assemble(shift + other.vertex_count(), edges, Some(measure))
            .expect("union of valid graphs is valid")
    }

    pub fn vertex_count(&self) -> usize {
        self.measure.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, x: usize) -> &[Neighbor] {
        &self.adjacency[x]
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn mu(&self, x: usize) -> f64 {
        self.measure[x]
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    /// `Σ_y c_xy`.
    pub fn weighted_degree(&self, x: usize) -> f64 {
        self.adjacency[x].iter().map(|n| n.conductance).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(0.0, f64::max)
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.length)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_vertex(&self, x: usize) -> Result<()> {
        if x >= self.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "vertex {} out of range (graph has {} vertices)",
                x,
                self.vertex_count()
            )));
        }
        Ok(())
    }

    /// Component label per vertex; labels are 0-based in order of first vertex.
    pub fn components(&self) -> &[usize] {
        self.components.get_or_init(|| {
            let n = self.vertex_count();
            let mut label = vec![usize::MAX; n];
            let mut next = 0;
            let mut stack = Vec::new();
            for s in 0..n {
                if label[s] != usize::MAX {
                    continue;
                }
                label[s] = next;
                stack.push(s);
                while let Some(v) = stack.pop() {
                    for nb in &self.adjacency[v] {
                        if label[nb.vertex] == usize::MAX {
                            label[nb.vertex] = next;
                            stack.push(nb.vertex);
                        }
                    }
                }
                next += 1;
            }
            label
        })
    }

    pub fn component_count(&self) -> usize {
        self.components().iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    fn dijkstra(&self, source: usize, radius: f64) -> Vec<f64> {
        let n = self.vertex_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapItem {
            dist: 0.0,
            vertex: source,
        });
        while let Some(HeapItem { dist: d, vertex: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for nb in &self.adjacency[v] {
                let nd = d + nb.length;
                if nd < dist[nb.vertex] && nd <= radius {
                    dist[nb.vertex] = nd;
                    heap.push(HeapItem {
                        dist: nd,
                        vertex: nb.vertex,
                    });
                }
            }
        }
        dist
    }

    /// Full single-source distance row; cached on small graphs.
    pub fn distances_from(&self, x: usize) -> Arc<[f64]> {
        if self.vertex_count() <= DISTANCE_CACHE_LIMIT {
            self.distance_cache[x]
                .get_or_init(|| self.dijkstra(x, f64::INFINITY).into())
                .clone()
        } else {
            self.dijkstra(x, f64::INFINITY).into()
        }
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.distances_from(x)[y]
    }

    /// All `(y, d(x,y))` with `d(x,y) < radius`, sorted by vertex id.
    pub fn distances_within(&self, x: usize, radius: f64) -> Vec<(usize, f64)> {
        let row: Arc<[f64]> = if self.vertex_count() <= DISTANCE_CACHE_LIMIT {
            self.distances_from(x)
        } else {
            self.dijkstra(x, radius).into()
        };
        row.iter()
            .enumerate()
            .filter(|(_, &d)| d < radius)
            .map(|(y, &d)| (y, d))
            .collect()
    }

    /// Largest finite distance. Exact up to the cache limit, otherwise a
    /// double-sweep lower bound.
    pub fn diameter(&self) -> f64 {
        *self.diameter.get_or_init(|| {
            let finite_max = |row: &[f64]| {
                row.iter()
                    .copied()
                    .filter(|d| d.is_finite())
                    .fold(0.0, f64::max)
            };
            let n = self.vertex_count();
            if n <= DISTANCE_CACHE_LIMIT {
                (0..n)
                    .map(|x| finite_max(&self.dijkstra(x, f64::INFINITY)))
                    .fold(0.0, f64::max)
            } else {
                let row = self.dijkstra(0, f64::INFINITY);
                let (far, _) = row
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.is_finite())
                    .fold((0, 0.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
                finite_max(&self.dijkstra(far, f64::INFINITY))
            }
        })
    }

    pub fn ball(&self, x: usize, r: f64) -> Result<Ball> {
        self.check_vertex(x)?;
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {}", r)));
        }
        let members = self.distances_within(x, r).into_iter().map(|(y, _)| y).collect();
        Ok(Ball {
            center: x,
            radius: r,
            members,
        })
    }

    /// Largest `s` with `B(x,s) = B(x,r)`: the distance from `x` to the
    /// nearest vertex outside the open ball. `None` if the ball covers the
    /// component of `x`.
    pub fn exit_radius(&self, x: usize, r: f64) -> Result<Option<f64>> {
        self.check_vertex(x)?;
        let d = self.distances_from(x);
        Ok(d.iter().copied().filter(|&d| d >= r && d.is_finite()).reduce(f64::min))
    }

    /// `V(x,r) = μ(B(x,r))`.
    pub fn volume(&self, x: usize, r: f64) -> Result<f64> {
        let ball = self.ball(x, r)?;
        Ok(self.measure_of(&ball.members))
    }

    pub fn measure_of(&self, vertices: &[usize]) -> f64 {
        vertices.iter().map(|&v| self.measure[v]).sum()
    }

    /// Samples `V(x,r)` and `V(x,2r)` and fits the doubling constant and the
    /// upper/lower volume growth exponents.
    ///
    /// `alpha` is the pooled least-squares slope of `log V(x,R)/V(x,r)` against
    /// `log R/r` over all sampled radius pairs; `alpha_prime` is the smallest
    /// per-center log-log slope (the reverse-doubling exponent).
    pub fn check_vd(&self, radii: &[f64], centers: &[usize]) -> Result<VolumeReport> {
        if radii.is_empty() || centers.is_empty() {
            return Err(Error::InvalidArgument("check_vd needs radii and centers".into()));
        }
        if let Some(r) = radii.iter().find(|r| !(**r > 0.0)) {
            return Err(Error::InvalidArgument(format!("radius {} is not positive", r)));
        }
        let mut scales: Vec<f64> = radii.iter().flat_map(|&r| [r, 2.0 * r]).collect();
        scales.sort_by(f64::total_cmp);
        scales.dedup();

        let mut doubling: f64 = 1.0;
        let mut samples = Vec::new();
        let mut pair_x = Vec::new();
        let mut pair_y = Vec::new();
        let mut alpha_prime = f64::INFINITY;
        for &x in centers {
            self.check_vertex(x)?;
            let row = self.distances_from(x);
            let vol = |r: f64| -> f64 {
                row.iter()
                    .zip(&self.measure)
                    .filter(|(d, _)| **d < r)
                    .map(|(_, m)| m)
                    .sum()
            };
            let vols: Vec<f64> = scales.iter().map(|&r| vol(r)).collect();
            for &r in radii {
                doubling = doubling.max(vol(2.0 * r) / vol(r));
            }
            for (i, (&r, &v)) in scales.iter().zip(&vols).enumerate() {
                samples.push(VolumeSample { x, r, volume: v });
                for j in (i + 1)..scales.len() {
                    pair_x.push((scales[j] / r).ln());
                    pair_y.push((vols[j] / v).ln());
                }
            }
            if scales.len() >= 2 {
                let lx: Vec<f64> = scales.iter().map(|r| r.ln()).collect();
                let ly: Vec<f64> = vols.iter().map(|v| v.ln()).collect();
                let fit = stats::linear_fit(&lx, &ly);
                alpha_prime = alpha_prime.min(fit.slope);
            }
        }
        let alpha = stats::slope_through_origin(&pair_x, &pair_y).max(0.0);
        let alpha_prime = if alpha_prime.is_finite() {
            alpha_prime.max(0.0)
        } else {
            0.0
        };
        Ok(VolumeReport {
            doubling_constant: doubling,
            alpha,
            alpha_prime,
            samples,
            window: Window::radii(scales[0], *scales.last().unwrap()),
        })
    }
}

fn unit_edge(u: usize, v: usize) -> Edge {
    Edge {
        u,
        v,
        conductance: 1.0,
        length: 1.0,
    }
}

fn validate_edge(e: &Edge, vertex_count: usize) -> std::result::Result<(), String> {
    if e.u == e.v {
        return Err(format!("self-loop at vertex {}", e.u));
    }
    if e.u >= vertex_count || e.v >= vertex_count {
        return Err(format!("dangling vertex id in edge {}-{}", e.u, e.v));
    }
    if !(e.conductance > 0.0 && e.conductance.is_finite()) {
        return Err(format!("conductance must be positive, got {}", e.conductance));
    }
    if !(e.length > 0.0 && e.length.is_finite()) {
        return Err(format!("length must be positive, got {}", e.length));
    }
    Ok(())
}

fn parse_id(s: &str, line: usize) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("invalid vertex id {:?}", s)))
}

fn parse_real(s: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("invalid {} {:?}", what, s)))
}

/// Closed-form vertex count of the level-`n` gasket graph.
pub fn sierpinski_vertex_count(level: u32) -> usize {
    (3usize.pow(level + 1) + 3) / 2
}
