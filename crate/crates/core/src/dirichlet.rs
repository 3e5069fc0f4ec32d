//! Dirichlet form, generator and Dirichlet-restricted operators.
//!
//! Everything restricted to a domain `Ω` works with the symmetric matrix
//! `A^Ω = D_μ L^Ω`: its diagonal holds the full weighted degree (edges leaving
//! `Ω` kill the walk) and its off-diagonal entries are `−c_xy` for `x, y ∈ Ω`.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::heat::Spectral;
use crate::linalg::{Csr, SpdSolver};
use crate::report::{per_scale, Condition, ConditionReport, Stability, Trend, Window};
use crate::scale::ScaleFunction;
use crate::space::MetricMeasureGraph;
use crate::stats;

const OUTSIDE: usize = usize::MAX;

/// Sorted vertex set with a global-to-local index.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    vertices: Vec<usize>,
    local: Vec<usize>,
}

impl Domain {
    pub fn new(graph: &MetricMeasureGraph, vertices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let n = graph.vertex_count();
        let mut v: Vec<usize> = vertices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(Error::InvalidArgument("domain is empty".into()));
        }
        if let Some(&bad) = v.iter().find(|&&x| x >= n) {
            return Err(Error::InvalidArgument(format!("domain vertex {} out of range", bad)));
        }
        let mut local = vec![OUTSIDE; n];
        for (i, &x) in v.iter().enumerate() {
            local[x] = i;
        }
        Ok(Domain { vertices: v, local })
    }

    pub fn full(graph: &MetricMeasureGraph) -> Self {
        Self::new(graph, 0..graph.vertex_count()).expect("graphs are nonempty")
    }

    /// Open ball `B(x, r)` as a domain.
    pub fn ball(graph: &MetricMeasureGraph, x: usize, r: f64) -> Result<Self> {
        let b = graph.ball(x, r)?;
        Self::new(graph, b.members)
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.local.get(v).is_some_and(|&i| i != OUTSIDE)
    }

    pub fn local_index(&self, v: usize) -> Option<usize> {
        self.local.get(v).copied().filter(|&i| i != OUTSIDE)
    }

    /// Vertices outside the domain adjacent to it, sorted.
    pub fn boundary(&self, graph: &MetricMeasureGraph) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .vertices
            .iter()
            .flat_map(|&x| graph.neighbors(x).iter().map(|nb| nb.vertex))
            .filter(|&y| !self.contains(y))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Embeds a local vector into a full-length one (zero outside).
    pub fn extend(&self, local: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&v, &x) in self.vertices.iter().zip(local) {
            out[v] = x;
        }
        out
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.vertices.iter().map(|&v| full[v]).collect()
    }
}

type SpectralSlot = Arc<OnceLock<std::result::Result<Arc<Spectral>, String>>>;

pub struct DirichletForm {
    graph: Arc<MetricMeasureGraph>,
    spectra: Mutex<HashMap<Vec<usize>, SpectralSlot>>,
}

impl std::fmt::Debug for DirichletForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirichletForm")
            .field("vertices", &self.graph.vertex_count())
            .field("edges", &self.graph.edge_count())
            .finish()
    }
}

/// Factored `A^Ω` for repeated solves on one domain.
pub struct DomainSolver {
    domain: Domain,
    matrix: Csr,
    solver: SpdSolver,
    mu: Vec<f64>,
    n: usize,
}

impl DomainSolver {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Solves `A^Ω u = b` in local coordinates.
    pub fn solve_local(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(b)
    }

    /// `G^Ω f` for a full-length `f` (values outside `Ω` are ignored);
    /// the result vanishes outside `Ω`.
    pub fn green(&self, f: &[f64]) -> Result<Vec<f64>> {
        let b: Vec<f64> = self
            .domain
            .vertices
            .iter()
            .zip(&self.mu)
            .map(|(&v, m)| m * f[v])
            .collect();
        let u = self.solver.solve(&b)?;
        Ok(self.domain.extend(&u, self.n))
    }

    /// `x ↦ E_x τ_Ω` as a full-length vector.
    pub fn mean_exit(&self) -> Result<Vec<f64>> {
        let u = self.solver.solve(&self.mu)?;
        Ok(self.domain.extend(&u, self.n))
    }

    fn apply_local(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.apply(u)
    }
}

impl DirichletForm {
    pub fn new(graph: MetricMeasureGraph) -> Self {
        Self::from_arc(Arc::new(graph))
    }

    pub fn from_arc(graph: Arc<MetricMeasureGraph>) -> Self {
        DirichletForm {
            graph,
            spectra: Mutex::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &MetricMeasureGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<MetricMeasureGraph> {
        self.graph.clone()
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.graph.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "vertex function has {} entries, graph has {} vertices",
                f.len(),
                self.graph.vertex_count()
            )));
        }
        Ok(())
    }

    /// `E(f,g) = ½ Σ_{x,y} c_xy (f(x)−f(y))(g(x)−g(y))`.
    pub fn energy(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        self.check_len(g)?;
        Ok(self
            .graph
            .edges()
            .iter()
            .map(|e| e.conductance * (f[e.u] - f[e.v]) * (g[e.u] - g[e.v]))
            .sum())
    }

    /// `Lf(x) = μ(x)⁻¹ Σ_y c_xy (f(x) − f(y))`.
    pub fn generator(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        Ok((0..self.graph.vertex_count())
            .map(|x| {
                let s: f64 = self
                    .graph
                    .neighbors(x)
                    .iter()
                    .map(|nb| nb.conductance * (f[x] - f[nb.vertex]))
                    .sum();
                s / self.graph.mu(x)
            })
            .collect())
    }

    /// `(f, g)_μ`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(self.graph.measure())
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    /// `A^Ω + shift·D_μ` in local coordinates.
    pub fn restricted_matrix(&self, domain: &Domain, shift: f64) -> Csr {
        let rows = domain
            .vertices
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut row = vec![(i, self.graph.weighted_degree(x) + shift * self.graph.mu(x))];
                for nb in self.graph.neighbors(x) {
                    if let Some(j) = domain.local_index(nb.vertex) {
                        row.push((j, -nb.conductance));
                    }
                }
                row
            })
            .collect();
        Csr::from_rows(rows)
    }

    /// Fails with a zero-eigenvalue error when some connected piece of `Ω`
    /// has no edge leaving `Ω` (the walk can never be killed there).
    pub fn check_killing(&self, domain: &Domain) -> Result<()> {
        let mut seen = vec![false; domain.len()];
        for start in 0..domain.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut leaks = false;
            while let Some(i) = queue.pop_front() {
                for nb in self.graph.neighbors(domain.vertices[i]) {
                    match domain.local_index(nb.vertex) {
                        Some(j) if !seen[j] => {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                        Some(_) => {}
                        None => leaks = true,
                    }
                }
            }
            if !leaks {
                return Err(Error::ZeroEigenvalue(format!(
                    "domain piece containing vertex {} is a whole component",
                    domain.vertices[start]
                )));
            }
        }
        Ok(())
    }

    pub fn solver(&self, domain: &Domain) -> Result<DomainSolver> {
        self.check_killing(domain)?;
        let matrix = self.restricted_matrix(domain, 0.0);
        let solver = SpdSolver::new(&matrix)?;
        Ok(DomainSolver {
            mu: domain.vertices.iter().map(|&v| self.graph.mu(v)).collect(),
            domain: domain.clone(),
            matrix,
            solver,
            n: self.graph.vertex_count(),
        })
    }

    /// Bottom of the spectrum of `L^Ω` in `ℓ²(μ|_Ω)` by inverse iteration.
    pub fn lambda_min(&self, domain: &Domain) -> Result<f64> {
        let s = self.solver(domain)?;
        lambda_min_with(&s)
    }

    /// `G^Ω f`; see [`DomainSolver::green`].
    pub fn green_apply(&self, domain: &Domain, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        self.solver(domain)?.green(f)
    }

    /// `E_x τ_Ω = G^Ω 1 (x)`.
    pub fn mean_exit_exact(&self, domain: &Domain, x: usize) -> Result<f64> {
        let i = domain
            .local_index(x)
            .ok_or_else(|| Error::Domain(format!("vertex {} is not in the domain", x)))?;
        let s = self.solver(domain)?;
        Ok(s.solve_local(&s.mu)?[i])
    }

    /// Harmonic extension: `Lu = 0` on `Ω`, `u = f` off `Ω`.
    pub fn solve_dirichlet(&self, domain: &Domain, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let s = self.solver(domain)?;
        self.solve_dirichlet_with(&s, f)
    }

    pub fn solve_dirichlet_with(&self, s: &DomainSolver, f: &[f64]) -> Result<Vec<f64>> {
        let d = &s.domain;
        let b: Vec<f64> = d
            .vertices
            .iter()
            .map(|&x| {
                self.graph
                    .neighbors(x)
                    .iter()
                    .filter(|nb| !d.contains(nb.vertex))
                    .map(|nb| nb.conductance * f[nb.vertex])
                    .sum()
            })
            .collect();
        let u = s.solve_local(&b)?;
        let mut out = f.to_vec();
        for (&v, x) in d.vertices.iter().zip(u) {
            out[v] = x;
        }
        Ok(out)
    }

    /// Harmonic measures of a ball: one harmonic function per boundary
    /// vertex, with indicator data at that vertex.
    fn harmonic_measures(&self, s: &DomainSolver) -> Result<Vec<(usize, Vec<f64>)>> {
        let boundary = s.domain.boundary(&self.graph);
        let n = self.graph.vertex_count();
        boundary
            .into_iter()
            .map(|b| {
                let mut f = vec![0.0; n];
                f[b] = 1.0;
                Ok((b, self.solve_dirichlet_with(s, &f)?))
            })
            .collect()
    }

    /// Elliptic Harnack check on balls `(x, r)`.
    ///
    /// The worst ratio `sup u / inf u` on `B(x, δr)` over all nonnegative
    /// harmonic functions is attained at harmonic measures (indicator data),
    /// so those are evaluated exactly; `trials` random nonnegative data per
    /// ball are added as a sanity sample.
    pub fn harnack_check(&self, balls: &[(usize, f64)], trials: usize, delta: f64, seed: u64) -> Result<ConditionReport> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {}", delta)));
        }
        if trials == 0 || balls.is_empty() {
            return Err(Error::InvalidArgument("harnack_check needs balls and trials >= 1".into()));
        }
        let window = radius_window(balls);
        let mut report = ConditionReport::new(
            Condition::H,
            window,
            format!(
                "{} balls; harmonic measures of every boundary vertex plus {} random nonnegative data per ball",
                balls.len(),
                trials
            ),
        );
        report.insert("delta", delta);
        if !self.graph.is_connected() {
            // The indicator of a component is harmonic and nonnegative.
            report.insert("C_H", f64::INFINITY);
            report.note("graph is disconnected: component indicators are harmonic with zero infimum");
            report.set_pass(false);
            return Ok(report);
        }
        let results: Vec<Result<Option<(f64, f64, f64)>>> = balls
            .par_iter()
            .enumerate()
            .map(|(k, &(x, r))| {
                let domain = Domain::ball(&self.graph, x, r)?;
                let s = match self.solver(&domain) {
                    Ok(s) => s,
                    Err(Error::ZeroEigenvalue(_)) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let inner = self.graph.ball(x, delta * r)?.members;
                let hm = self.harmonic_measures(&s)?;
                let ratio_of = |u: &[f64]| {
                    let hi = inner.iter().map(|&v| u[v]).fold(f64::MIN, f64::max);
                    let lo = inner.iter().map(|&v| u[v]).fold(f64::MAX, f64::min);
                    if lo > 0.0 {
                        hi / lo
                    } else {
                        f64::INFINITY
                    }
                };
                let extremal = hm.iter().map(|(_, u)| ratio_of(u)).fold(1.0, f64::max);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let mut random: f64 = 1.0;
                for _ in 0..trials {
                    let mut u = vec![0.0; self.graph.vertex_count()];
                    for (_, h) in &hm {
                        let w: f64 = rng.random();
                        u.iter_mut().zip(h).for_each(|(u, h)| *u += w * h);
                    }
                    random = random.max(ratio_of(&u));
                }
                Ok(Some((r, extremal, random)))
            })
            .collect();
        let mut pairs = Vec::new();
        let mut skipped = 0;
        for (res, &(x, r)) in results.into_iter().zip(balls) {
            match res? {
                Some((r, ext, rnd)) => {
                    report.samples.push(json!({"x": x, "r": r, "ratio": ext, "random_ratio": rnd}));
                    pairs.push((r, ext));
                }
                None => {
                    skipped += 1;
                    report.note(format!("ball ({}, {}) covers its component; skipped", x, r));
                }
            }
        }
        if pairs.is_empty() {
            report.note("no usable balls");
            report.set_pass(false);
            return Ok(report);
        }
        let (scales, values) = per_scale(&pairs, f64::max);
        let c_h = values.iter().copied().fold(1.0, f64::max);
        let stab = Stability::spread_only().assess(&scales, &values);
        report.insert("C_H", c_h);
        report.insert("spread", stab.spread);
        report.insert("slope", stab.slope);
        report.insert("skipped", skipped as f64);
        report.set_pass(c_h.is_finite() && stab.stable);
        Ok(report)
    }

    /// Oscillation decay of harmonic functions on nested closed
    /// balls `B̄(x, r/2^k) ⊂ B̄(x, r)`; fits the largest `θ` with
    /// `osc_{B(x,ρ)} u ≤ 2(ρ/r)^θ osc_{B(x,r)} u` and reports `Θ = βθ/(β+θ)`.
    pub fn oscillation_check(&self, balls: &[(usize, f64)], beta: f64, trials: usize, seed: u64) -> Result<ConditionReport> {
        if balls.is_empty() {
            return Err(Error::InvalidArgument("oscillation_check needs balls".into()));
        }
        let min_len = self.graph.min_edge_length();
        let mut report = ConditionReport::new(
            Condition::Osc,
            radius_window(balls),
            format!("harmonic measures plus {} random data per ball; radii r/2^k", trials),
        );
        let results: Vec<Result<Vec<(f64, f64)>>> = balls
            .par_iter()
            .enumerate()
            .map(|(k, &(x, r))| {
                let domain = Domain::ball(&self.graph, x, r)?;
                let s = match self.solver(&domain) {
                    Ok(s) => s,
                    Err(Error::ZeroEigenvalue(_)) => return Ok(Vec::new()),
                    Err(e) => return Err(e),
                };
                let mut funcs: Vec<Vec<f64>> = self.harmonic_measures(&s)?.into_iter().map(|p| p.1).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let n = self.graph.vertex_count();
                for _ in 0..trials {
                    let mut u = vec![0.0; n];
                    for h in &funcs {
                        let w: f64 = rng.random();
                        u.iter_mut().zip(h).for_each(|(u, h)| *u += w * h);
                    }
                    funcs.push(u);
                }
                // Closed balls: harmonic functions are defined up to the
                // boundary, where they take their data.
                let row = self.graph.distances_from(x);
                let closed = |rad: f64| -> Vec<usize> { (0..n).filter(|&v| row[v] <= rad).collect() };
                let osc = |u: &[f64], members: &[usize]| {
                    let hi = members.iter().map(|&v| u[v]).fold(f64::MIN, f64::max);
                    let lo = members.iter().map(|&v| u[v]).fold(f64::MAX, f64::min);
                    hi - lo
                };
                let outer = closed(r);
                let mut out = Vec::new();
                let mut rho = r / 2.0;
                while rho > min_len {
                    let inner = closed(rho);
                    for u in &funcs {
                        let big = osc(u, &outer);
                        if big > 1e-14 {
                            out.push((rho / r, osc(u, &inner) / big));
                        }
                    }
                    rho /= 2.0;
                }
                Ok(out)
            })
            .collect();
        let mut samples = Vec::new();
        for res in results {
            samples.extend(res?);
        }
        if samples.is_empty() {
            if balls.iter().all(|&(_, r)| r / 2.0 <= min_len) {
                return Err(Error::InvalidArgument("no nested radii above the edge length".into()));
            }
            report.note("all sampled harmonic functions are constant; vacuous");
            report.set_pass(true);
            return Ok(report);
        }
        let theta = samples
            .iter()
            .filter(|s| s.1 > 0.0)
            .map(|&(q, ratio)| (2.0 / ratio).ln() / (1.0 / q).ln())
            .fold(f64::INFINITY, f64::min);
        let pos: Vec<&(f64, f64)> = samples.iter().filter(|s| s.1 > 0.0).collect();
        let lx: Vec<f64> = pos.iter().map(|s| s.0.ln()).collect();
        let ly: Vec<f64> = pos.iter().map(|s| s.1.ln()).collect();
        let slope = stats::linear_fit(&lx, &ly).slope;
        for &(q, ratio) in samples.iter().take(200) {
            report.samples.push(json!({"rho_over_r": q, "osc_ratio": ratio}));
        }
        report.insert("theta", theta);
        report.insert("theta_slope", slope);
        report.insert("beta", beta);
        report.insert("Theta", beta * theta / (beta + theta));
        report.set_pass(theta > 0.0);
        Ok(report)
    }

    /// Faber–Krahn check: `λ_min(Ω) F(r) (μ(Ω)/μ(B))^ν ≥ c` over random
    /// connected `Ω ⊂ B(x, r)` (and `Ω = B`).
    pub fn faber_krahn_check(
        &self,
        f: &ScaleFunction,
        balls: &[(usize, f64)],
        subsets_per_ball: usize,
        nu: f64,
        seed: u64,
    ) -> Result<ConditionReport> {
        if !(nu > 0.0) {
            return Err(Error::InvalidArgument(format!("nu must be positive, got {}", nu)));
        }
        if balls.is_empty() {
            return Err(Error::InvalidArgument("faber_krahn_check needs balls".into()));
        }
        let mut report = ConditionReport::new(
            Condition::Fk,
            radius_window(balls),
            format!("the ball itself plus {} random connected subsets per ball", subsets_per_ball),
        );
        report.insert("nu", nu);
        let results: Vec<Result<Vec<(f64, f64, usize)>>> = balls
            .par_iter()
            .enumerate()
            .map(|(k, &(x, r))| {
                let ball = Domain::ball(&self.graph, x, r)?;
                let fr = f.eval(r)?;
                let mu_b = self.graph.measure_of(ball.vertices());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let mut subsets = vec![ball.clone()];
                for _ in 0..subsets_per_ball {
                    subsets.push(self.random_connected_subset(&ball, &mut rng)?);
                }
                let mut out = Vec::new();
                for omega in subsets {
                    let lam = match self.lambda_min(&omega) {
                        Ok(l) => l,
                        Err(Error::ZeroEigenvalue(_)) => continue,
                        Err(e) => return Err(e),
                    };
                    let ratio = self.graph.measure_of(omega.vertices()) / mu_b;
                    out.push((r, lam * fr * ratio.powf(nu), omega.len()));
                }
                Ok(out)
            })
            .collect();
        let mut pairs = Vec::new();
        for res in results {
            for (r, v, size) in res? {
                report.samples.push(json!({"r": r, "value": v, "size": size}));
                pairs.push((r, v));
            }
        }
        if pairs.is_empty() {
            return Err(Error::Sampling("no admissible subsets were generated".into()));
        }
        let (scales, values) = per_scale(&pairs, f64::min);
        let c = values.iter().copied().fold(f64::INFINITY, f64::min);
        let stab = Stability::default().assess_trend(&scales, &values, Trend::Down);
        report.insert("c", c);
        report.insert("spread", stab.spread);
        report.insert("slope", stab.slope);
        report.set_pass(c > 0.0 && stab.stable);
        Ok(report)
    }

    fn random_connected_subset(&self, ball: &Domain, rng: &mut ChaCha8Rng) -> Result<Domain> {
        let target = rng.random_range(1..=ball.len());
        let start = *ball.vertices().choose(rng).expect("balls are nonempty");
        let mut chosen = vec![start];
        let mut in_set = HashMap::from([(start, ())]);
        let mut frontier: Vec<usize> = Vec::new();
        let push_frontier = |v: usize, frontier: &mut Vec<usize>, in_set: &HashMap<usize, ()>| {
            for nb in self.graph.neighbors(v) {
                if ball.contains(nb.vertex) && !in_set.contains_key(&nb.vertex) {
                    frontier.push(nb.vertex);
                }
            }
        };
        push_frontier(start, &mut frontier, &in_set);
        while chosen.len() < target && !frontier.is_empty() {
            let i = rng.random_range(0..frontier.len());
            let v = frontier.swap_remove(i);
            if in_set.contains_key(&v) {
                continue;
            }
            in_set.insert(v, ());
            chosen.push(v);
            push_frontier(v, &mut frontier, &in_set);
        }
        Domain::new(&self.graph, chosen)
    }

    /// Dense eigendecomposition of the symmetrized restricted generator,
    /// computed once per domain.
    pub fn spectral(&self, domain: &Domain) -> Result<Arc<Spectral>> {
        let slot = {
            let mut map = self.spectra.lock().expect("spectral cache poisoned");
            map.entry(domain.vertices.clone()).or_default().clone()
        };
        slot.get_or_init(|| Spectral::compute(self, domain).map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::Numeric)
    }
}

pub(crate) fn lambda_min_with(s: &DomainSolver) -> Result<f64> {
    let m = s.domain.len();
    let cap = (10 * m).max(100);
    let mu = &s.mu;
    let dnorm = |u: &[f64]| u.iter().zip(mu).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
    let mut u = vec![1.0; m];
    let nu = dnorm(&u);
    u.iter_mut().for_each(|x| *x /= nu);
    let mut lambda = f64::INFINITY;
    for _ in 0..cap {
        let du: Vec<f64> = u.iter().zip(mu).map(|(a, m)| a * m).collect();
        let mut w = s.solve_local(&du)?;
        let wn = dnorm(&w);
        w.iter_mut().for_each(|x| *x /= wn);
        let aw = s.apply_local(&w);
        let rq: f64 = aw.iter().zip(&w).map(|(a, b)| a * b).sum();
        let res = aw
            .iter()
            .zip(&w)
            .zip(mu)
            .map(|((a, b), m)| (a - rq * m * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = w.iter().zip(mu).map(|(b, m)| (rq * m * b).powi(2)).sum::<f64>().sqrt();
        let change = (rq - lambda).abs();
        lambda = rq;
        u = w;
        if res <= 1e-9 * scale || change <= 1e-15 * rq {
            return Ok(lambda);
        }
    }
    Ok(lambda)
}

fn radius_window(balls: &[(usize, f64)]) -> Window {
    let lo = balls.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
    let hi = balls.iter().map(|b| b.1).fold(0.0, f64::max);
    Window::radii(lo, hi)
}
