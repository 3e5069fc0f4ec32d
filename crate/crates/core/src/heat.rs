//! Heat kernels of the full and Dirichlet-restricted semigroups.
//!
//! `p_t(x,y) = (e^{−tL} δ_y)(x) / μ(y)`. Three evaluators are provided:
//!
//! * spectral: dense eigendecomposition of `S = D^{−1/2} A D^{−1/2}`, used up
//!   to [`DENSE_SPECTRAL_LIMIT`] vertices;
//! * Krylov: Lanczos approximation of `e^{−tS} v` for larger domains;
//! * uniformization: `e^{−tL} = Σ_n Pois(qt; n) K^n` with the substochastic
//!   matrix `K = I − L/q`. Every term is nonnegative, so even kernel values
//!   many orders of magnitude below the diagonal keep full relative accuracy.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dirichlet::{DirichletForm, Domain};
use crate::error::{Error, Result};
use crate::linalg::{self, Csr};
use crate::report::{per_scale, Condition, ConditionReport, Stability, Window};
use crate::scale::ScaleFunction;

/// Largest domain handled by dense eigendecomposition.
pub const DENSE_SPECTRAL_LIMIT: usize = 2000;

const KRYLOV_TOL: f64 = 1e-12;

/// Eigenpairs of the symmetrized restricted generator on one domain.
#[derive(Debug)]
pub struct Spectral {
    vertices: Vec<usize>,
    values: Vec<f64>,
    /// Row-major eigenvector matrix: `rows[i*m + k] = φ_k(i)`.
    rows: Vec<f64>,
    inv_sqrt_mu: Vec<f64>,
    /// `Σ_z φ_k(z) √μ(z)`.
    mass_coef: Vec<f64>,
}

impl Spectral {
    pub(crate) fn compute(df: &DirichletForm, domain: &Domain) -> Result<Self> {
        let m = domain.len();
        if m > DENSE_SPECTRAL_LIMIT {
            return Err(Error::ResourceLimit(format!(
                "dense spectral data limited to {} vertices, domain has {}",
                DENSE_SPECTRAL_LIMIT, m
            )));
        }
        let g = df.graph();
        let sqrt_mu: Vec<f64> = domain.vertices().iter().map(|&v| g.mu(v).sqrt()).collect();
        let inv: Vec<f64> = sqrt_mu.iter().map(|s| 1.0 / s).collect();
        let s = df.restricted_matrix(domain, 0.0).scaled(&inv).to_dense();
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut rows = vec![0.0; m * m];
        for i in 0..m {
            for (kk, &k) in order.iter().enumerate() {
                rows[i * m + kk] = eig.eigenvectors[(i, k)];
            }
        }
        let mass_coef = (0..m)
            .map(|k| (0..m).map(|z| rows[z * m + k] * sqrt_mu[z]).sum())
            .collect();
        Ok(Spectral {
            vertices: domain.vertices().to_vec(),
            values,
            rows,
            inv_sqrt_mu: inv,
            mass_coef,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    fn weights(&self, t: f64) -> Vec<f64> {
        self.values.iter().map(|l| (-t * l).exp()).collect()
    }

    fn sum(&self, w: &[f64], i: usize, j: usize) -> f64 {
        let m = self.values.len();
        let (ri, rj) = (&self.rows[i * m..(i + 1) * m], &self.rows[j * m..(j + 1) * m]);
        let s: f64 = w.iter().zip(ri).zip(rj).map(|((w, a), b)| w * a * b).sum();
        s * self.inv_sqrt_mu[i] * self.inv_sqrt_mu[j]
    }

    /// `p_t(x,y)` for local indices.
    pub fn kernel(&self, t: f64, i: usize, j: usize) -> f64 {
        self.sum(&self.weights(t), i, j)
    }

    /// `∂_t p_t(x,y)` for local indices.
    pub fn kernel_dt(&self, t: f64, i: usize, j: usize) -> f64 {
        let w: Vec<f64> = self.values.iter().map(|l| -l * (-t * l).exp()).collect();
        self.sum(&w, i, j)
    }

    /// `Σ_z p_t(x,z) μ(z)` for a local index.
    pub fn mass(&self, t: f64, i: usize) -> f64 {
        let m = self.values.len();
        let s: f64 = self
            .values
            .iter()
            .zip(&self.mass_coef)
            .zip(&self.rows[i * m..(i + 1) * m])
            .map(|((l, c), a)| (-t * l).exp() * c * a)
            .sum();
        s * self.inv_sqrt_mu[i]
    }

    /// Full local kernel matrix at time `t`.
    pub fn kernel_matrix(&self, t: f64) -> DMatrix<f64> {
        let m = self.values.len();
        let w = self.weights(t);
        let phi = DMatrix::from_row_slice(m, m, &self.rows);
        let mut scaled = phi.clone();
        for k in 0..m {
            scaled.column_mut(k).scale_mut(w[k]);
        }
        let mut p = scaled * phi.transpose();
        for i in 0..m {
            for j in 0..m {
                p[(i, j)] *= self.inv_sqrt_mu[i] * self.inv_sqrt_mu[j];
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMethod {
    Spectral,
    Krylov,
    Uniformization,
}

/// Kernel values `values[time][pair]` on a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelGrid {
    pub domain: Vec<usize>,
    pub times: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub values: Vec<Vec<f64>>,
    pub method: KernelMethod,
}

impl HeatKernelGrid {
    pub fn get(&self, time_index: usize, pair_index: usize) -> f64 {
        self.values[time_index][pair_index]
    }
}

/// Uniformized semigroup on one domain.
pub struct Uniformized {
    domain: Domain,
    matrix: Csr,
    diag: Vec<f64>,
    mu: Vec<f64>,
    rate: f64,
    /// `1 − K1`: probability of being killed in one step.
    killing: Vec<f64>,
}

impl Uniformized {
    pub fn new(df: &DirichletForm, domain: &Domain) -> Self {
        let g = df.graph();
        let mu: Vec<f64> = domain.vertices().iter().map(|&v| g.mu(v)).collect();
        let rate = domain
            .vertices()
            .iter()
            .map(|&v| g.weighted_degree(v) / g.mu(v))
            .fold(0.0, f64::max);
        let mut rows = Vec::with_capacity(domain.len());
        let mut diag = Vec::with_capacity(domain.len());
        let mut killing = Vec::with_capacity(domain.len());
        for (i, &x) in domain.vertices().iter().enumerate() {
            let qm = rate * mu[i];
            let mut row = Vec::new();
            let mut leak = 0.0;
            for nb in g.neighbors(x) {
                match domain.local_index(nb.vertex) {
                    Some(j) => row.push((j, nb.conductance / qm)),
                    None => leak += nb.conductance,
                }
            }
            diag.push((qm - g.weighted_degree(x)) / qm);
            killing.push(leak / qm);
            rows.push(row);
        }
        Uniformized {
            domain: domain.clone(),
            matrix: Csr::from_rows(rows),
            diag,
            mu,
            rate,
            killing,
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    fn step(&self, w: &[f64], out: &mut [f64]) {
        self.matrix.mul(w, out);
        for ((o, d), x) in out.iter_mut().zip(&self.diag).zip(w) {
            *o += d * x;
        }
    }

    /// Runs `w_{n+1} = K w_n` and returns `Σ_n weight_i(n) · w_n` per time,
    /// where `weight_i` is the Poisson(q·t_i) pmf or, with `tail`, the
    /// survival `P(N > n)`.
    fn accumulate(&self, w0: Vec<f64>, times: &[f64], tail: bool) -> Vec<Vec<f64>> {
        let m = self.domain.len();
        let lam: Vec<f64> = times.iter().map(|t| self.rate * t).collect();
        let steps: Vec<usize> = lam
            .iter()
            .map(|l| (l + 15.0 * l.sqrt() + 60.0).ceil() as usize)
            .collect();
        let n_max = steps.iter().copied().max().unwrap_or(0);
        let mut out = vec![vec![0.0; m]; times.len()];
        // Poisson pmf and upper tail per time, advanced step by step.
        let mut pmf: Vec<f64> = lam.iter().map(|l| (-l).exp()).collect();
        let mut log_pmf: Vec<f64> = lam.iter().map(|l| -l).collect();
        let mut survival: Vec<f64> = lam.iter().map(|l| -(-l).exp_m1()).collect();
        let mut w = w0;
        let mut next = vec![0.0; m];
        for n in 0..=n_max {
            for (i, acc) in out.iter_mut().enumerate() {
                if n > steps[i] {
                    continue;
                }
                let c = if tail { survival[i] } else { pmf[i] };
                if c > 0.0 {
                    acc.iter_mut().zip(&w).for_each(|(a, x)| *a += c * x);
                }
            }
            if n == n_max {
                break;
            }
            self.step(&w, &mut next);
            std::mem::swap(&mut w, &mut next);
            for i in 0..times.len() {
                log_pmf[i] += lam[i].ln() - ((n + 1) as f64).ln();
                pmf[i] = if lam[i] > 0.0 { log_pmf[i].exp() } else { 0.0 };
                // P(N > n+1) = P(N > n) − P(N = n+1), summed from the right
                // when it gets small to avoid cancellation.
                survival[i] = if (n + 1) as f64 > lam[i] {
                    upper_tail(lam[i], n + 1, log_pmf[i])
                } else {
                    (survival[i] - pmf[i]).max(0.0)
                };
            }
        }
        out
    }

    /// `p_t^Ω(·, y)` in local coordinates for each time.
    pub fn kernel_columns(&self, y: usize, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let j = self
            .domain
            .local_index(y)
            .ok_or_else(|| Error::Domain(format!("vertex {} is not in the domain", y)))?;
        let mut w0 = vec![0.0; self.domain.len()];
        w0[j] = 1.0 / self.mu[j];
        Ok(self.accumulate(w0, times, false))
    }

    /// `P_x(τ_Ω ≤ t)` for every `x ∈ Ω` (local coordinates), per time.
    pub fn exit_tail(&self, times: &[f64]) -> Vec<Vec<f64>> {
        self.accumulate(self.killing.clone(), times, true)
    }
}

/// `P(N > n)` for `N ~ Pois(λ)` when `n > λ`, from the pmf at `n`.
fn upper_tail(lam: f64, n: usize, log_pmf_n: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    let mut k = n;
    loop {
        k += 1;
        term *= lam / k as f64;
        sum += term;
        if term < 1e-17 * sum || term == 0.0 {
            break;
        }
    }
    (log_pmf_n.exp()) * sum
}

impl DirichletForm {
    fn kernel_grid(
        &self,
        domain: &Domain,
        times: &[f64],
        pairs: Option<&[(usize, usize)]>,
        method: Option<KernelMethod>,
    ) -> Result<HeatKernelGrid> {
        if let Some(t) = times.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::Domain(format!("t must be positive, got {}", t)));
        }
        let pairs: Vec<(usize, usize)> = match pairs {
            Some(p) => p.to_vec(),
            None => domain
                .vertices()
                .iter()
                .flat_map(|&x| domain.vertices().iter().map(move |&y| (x, y)))
                .collect(),
        };
        let local: Vec<(usize, usize)> = pairs
            .iter()
            .map(|&(x, y)| match (domain.local_index(x), domain.local_index(y)) {
                (Some(i), Some(j)) => Ok((i, j)),
                _ => Err(Error::Domain(format!("pair ({}, {}) is not inside the domain", x, y))),
            })
            .collect::<Result<_>>()?;
        let method = method.unwrap_or(if domain.len() <= DENSE_SPECTRAL_LIMIT {
            KernelMethod::Spectral
        } else {
            KernelMethod::Krylov
        });
        let values = match method {
            KernelMethod::Spectral => {
                let sp = self.spectral(domain)?;
                times
                    .iter()
                    .map(|&t| {
                        let w = sp.weights(t);
                        local.iter().map(|&(i, j)| sp.sum(&w, i, j)).collect()
                    })
                    .collect()
            }
            KernelMethod::Krylov => {
                let mut sources: Vec<usize> = local.iter().map(|p| p.1).collect();
                sources.sort_unstable();
                sources.dedup();
                let cols: Vec<Vec<Vec<f64>>> = sources
                    .par_iter()
                    .map(|&j| {
                        times
                            .iter()
                            .map(|&t| self.krylov_column(domain, t, domain.vertices()[j]))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?;
                times
                    .iter()
                    .enumerate()
                    .map(|(ti, _)| {
                        local
                            .iter()
                            .map(|&(i, j)| {
                                let s = sources.binary_search(&j).expect("source present");
                                cols[s][ti][i]
                            })
                            .collect()
                    })
                    .collect()
            }
            KernelMethod::Uniformization => {
                let u = Uniformized::new(self, domain);
                let mut sources: Vec<usize> = local.iter().map(|p| p.1).collect();
                sources.sort_unstable();
                sources.dedup();
                let cols: Vec<Vec<Vec<f64>>> = sources
                    .par_iter()
                    .map(|&j| u.kernel_columns(domain.vertices()[j], times))
                    .collect::<Result<_>>()?;
                (0..times.len())
                    .map(|ti| {
                        local
                            .iter()
                            .map(|&(i, j)| cols[sources.binary_search(&j).unwrap()][ti][i])
                            .collect()
                    })
                    .collect()
            }
        };
        Ok(HeatKernelGrid {
            domain: domain.vertices().to_vec(),
            times: times.to_vec(),
            pairs,
            values,
            method,
        })
    }

    /// Full-graph kernel at the given times; `pairs = None` means all pairs.
    pub fn heat_kernel(&self, times: &[f64], pairs: Option<&[(usize, usize)]>) -> Result<HeatKernelGrid> {
        self.kernel_grid(&Domain::full(self.graph()), times, pairs, None)
    }

    pub fn restricted_heat_kernel(
        &self,
        domain: &Domain,
        times: &[f64],
        pairs: Option<&[(usize, usize)]>,
    ) -> Result<HeatKernelGrid> {
        self.kernel_grid(domain, times, pairs, None)
    }

    /// Kernel with an explicitly chosen evaluator.
    pub fn heat_kernel_with(
        &self,
        domain: &Domain,
        times: &[f64],
        pairs: Option<&[(usize, usize)]>,
        method: KernelMethod,
    ) -> Result<HeatKernelGrid> {
        self.kernel_grid(domain, times, pairs, Some(method))
    }

    fn symmetrized(&self, domain: &Domain) -> (Csr, Vec<f64>) {
        let sqrt_mu: Vec<f64> = domain.vertices().iter().map(|&v| self.graph().mu(v).sqrt()).collect();
        let inv: Vec<f64> = sqrt_mu.iter().map(|s| 1.0 / s).collect();
        (self.restricted_matrix(domain, 0.0).scaled(&inv), sqrt_mu)
    }

    /// `p_t^Ω(·, y)` in local coordinates via Lanczos.
    pub fn krylov_column(&self, domain: &Domain, t: f64, y: usize) -> Result<Vec<f64>> {
        let j = domain
            .local_index(y)
            .ok_or_else(|| Error::Domain(format!("vertex {} is not in the domain", y)))?;
        let (s, sqrt_mu) = self.symmetrized(domain);
        let mut e = vec![0.0; domain.len()];
        e[j] = 1.0;
        let w = linalg::expm_action(|a, b| s.mul(a, b), &e, t, KRYLOV_TOL)?;
        Ok(w.iter().zip(&sqrt_mu).map(|(w, s)| w / (s * sqrt_mu[j])).collect())
    }

    /// Smallest nonzero eigenvalue of `L` on a connected graph.
    pub fn spectral_gap(&self) -> Result<f64> {
        let g = self.graph();
        if !g.is_connected() {
            return Ok(0.0);
        }
        let full = Domain::full(g);
        if g.vertex_count() <= DENSE_SPECTRAL_LIMIT {
            return Ok(self.spectral(&full)?.values[1]);
        }
        let (s, sqrt_mu) = self.symmetrized(&full);
        let norm = sqrt_mu.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ground: Vec<f64> = sqrt_mu.iter().map(|x| x / norm).collect();
        linalg::lanczos_smallest(|a, b| s.mul(a, b), g.vertex_count(), Some(&ground), 1e-10)
    }

    /// Times whose scale `R(t)` lies in `[2·max edge length, diameter/4]`,
    /// additionally capped at a quarter of the relaxation time `1/λ₂`, past
    /// which every kernel is close to its equilibrium value.
    pub fn estimate_window(&self, f: &ScaleFunction) -> Result<Window> {
        let g = self.graph();
        let r_min = 2.0 * g.max_edge_length();
        let r_max = g.diameter() / 4.0;
        if !(r_max > r_min) {
            return Err(Error::InvalidArgument(format!(
                "graph too small for an estimate window: diameter {}",
                g.diameter()
            )));
        }
        let t_min = f.eval(r_min)?;
        let mut t_max = f.eval(r_max)?;
        let gap = self.spectral_gap()?;
        if gap > 0.0 {
            t_max = t_max.min(0.25 / gap);
        }
        if !(t_max > t_min) {
            return Err(Error::InvalidArgument("estimate window is empty after the saturation cap".into()));
        }
        Ok(Window::radii(r_min, f.inverse(t_max)?).with_times(t_min, t_max))
    }

    /// `max |Σ_z p_t(x,z)μ(z) − 1|` over all `x` and the given times.
    pub fn conservativeness_check(&self, times: &[f64]) -> Result<ConditionReport> {
        if times.is_empty() {
            return Err(Error::InvalidArgument("no times".into()));
        }
        if let Some(t) = times.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::Domain(format!("t must be positive, got {}", t)));
        }
        let g = self.graph();
        let full = Domain::full(g);
        let n = g.vertex_count();
        let mut dev: f64 = 0.0;
        let mut per_time = Vec::new();
        for &t in times {
            let masses: Vec<f64> = if n <= DENSE_SPECTRAL_LIMIT {
                let sp = self.spectral(&full)?;
                (0..n).map(|i| sp.mass(t, i)).collect()
            } else {
                let (s, sqrt_mu) = self.symmetrized(&full);
                let w = linalg::expm_action(|a, b| s.mul(a, b), &sqrt_mu, t, KRYLOV_TOL)?;
                w.iter().zip(&sqrt_mu).map(|(w, s)| w / s).collect()
            };
            let d = masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
            per_time.push(json!({"t": t, "max_deviation": d}));
            dev = dev.max(d);
        }
        let mut rep = ConditionReport::new(
            Condition::Conservative,
            Window::radii(g.min_edge_length(), g.diameter())
                .with_times(times.iter().copied().fold(f64::INFINITY, f64::min), times.iter().copied().fold(0.0, f64::max)),
            "all vertices at every requested time",
        );
        rep.samples = per_time;
        rep.insert("max_deviation", dev);
        rep.set_pass(dev <= 1e-10);
        Ok(rep)
    }

    /// `|∂_t p_t(x,y)| ≤ (2/t) √(p_{t/2}(x,x) p_{t/2}(y,y))` on the pairs.
    pub fn time_derivative_check(&self, t: f64, pairs: &[(usize, usize)]) -> Result<ConditionReport> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("t must be positive, got {}", t)));
        }
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no pairs".into()));
        }
        let g = self.graph();
        let full = Domain::full(g);
        let mut diag_pairs: Vec<(usize, usize)> = pairs.iter().flat_map(|&(x, y)| [(x, x), (y, y)]).collect();
        diag_pairs.sort_unstable();
        diag_pairs.dedup();
        let half = self.heat_kernel(&[t / 2.0], Some(&diag_pairs))?;
        let diag_at = |v: usize| half.values[0][diag_pairs.binary_search(&(v, v)).unwrap()];
        let derivs: Vec<f64> = if g.vertex_count() <= DENSE_SPECTRAL_LIMIT {
            let sp = self.spectral(&full)?;
            pairs.iter().map(|&(x, y)| sp.kernel_dt(t, x, y)).collect()
        } else {
            pairs
                .iter()
                .map(|&(x, y)| {
                    let col = self.krylov_column(&full, t, y)?;
                    Ok(-self.generator(&col)?[x])
                })
                .collect::<Result<_>>()?
        };
        let mut rep = ConditionReport::new(
            Condition::TimeDerivative,
            Window::radii(g.min_edge_length(), g.diameter()).with_times(t, t),
            format!("{} pairs at t = {}", pairs.len(), t),
        );
        let mut worst: f64 = 0.0;
        for (&(x, y), d) in pairs.iter().zip(&derivs) {
            let bound = 2.0 / t * (diag_at(x) * diag_at(y)).sqrt();
            let ratio = d.abs() / bound;
            worst = worst.max(ratio);
            rep.samples.push(json!({"x": x, "y": y, "dt": d, "bound": bound}));
        }
        rep.insert("max_ratio", worst);
        rep.set_pass(worst <= 1.0 + 1e-10);
        Ok(rep)
    }

    /// On-diagonal upper bound `p_t(x,x) V(x,R(t)) ≤ C` and the restricted
    /// lower bound `p_t^{B(x,R(4t))}(x,x) V(x,R(t)) ≥ c`.
    pub fn diag_bounds_check(
        &self,
        f: &ScaleFunction,
        centers: &[usize],
        times: &[f64],
    ) -> Result<(ConditionReport, ConditionReport)> {
        if times.is_empty() || centers.is_empty() {
            return Err(Error::InvalidArgument("diag_bounds_check needs centers and times".into()));
        }
        let g = self.graph();
        for &x in centers {
            g.check_vertex(x)?;
        }
        let t_lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let t_hi = times.iter().copied().fold(0.0, f64::max);
        if !(t_lo > 0.0) {
            return Err(Error::InvalidArgument("times must be positive".into()));
        }
        let window = Window::radii(f.inverse(t_lo)?, f.inverse(t_hi)?).with_times(t_lo, t_hi);
        let pairs: Vec<(usize, usize)> = centers.iter().map(|&x| (x, x)).collect();
        let full = self.heat_kernel(times, Some(&pairs))?;
        let rows: Vec<Result<(f64, usize, f64, f64)>> = times
            .par_iter()
            .enumerate()
            .flat_map_iter(|(ti, &t)| {
                let full = &full;
                centers.iter().enumerate().map(move |(ci, &x)| {
                    let r = f.inverse(t)?;
                    let v = g.volume(x, r)?;
                    let ball = Domain::ball(g, x, f.inverse(4.0 * t)?)?;
                    let restricted = if self.check_killing(&ball).is_ok() {
                        Uniformized::new(self, &ball).kernel_columns(x, &[t])?[0][ball.local_index(x).unwrap()]
                    } else {
                        full.values[ti][ci]
                    };
                    Ok((t, x, full.values[ti][ci] * v, restricted * v))
                })
            })
            .collect();
        let mut due = ConditionReport::new(Condition::Due, window, format!("{} centers x {} times", centers.len(), times.len()));
        let mut dle = ConditionReport::new(
            Condition::Dle,
            window,
            format!("{} centers x {} times; kernel killed outside B(x, R(4t))", centers.len(), times.len()),
        );
        let mut up = Vec::new();
        let mut low = Vec::new();
        for row in rows {
            let (t, x, a, b) = row?;
            due.samples.push(json!({"t": t, "x": x, "pV": a}));
            dle.samples.push(json!({"t": t, "x": x, "pV": b}));
            up.push((t, a));
            low.push((t, b));
        }
        let (ts, cmax) = per_scale(&up, f64::max);
        let (_, cmin) = per_scale(&low, f64::min);
        let c_up = cmax.iter().copied().fold(0.0, f64::max);
        let c_low = cmin.iter().copied().fold(f64::INFINITY, f64::min);
        let su = Stability::default().assess(&ts, &cmax);
        let sl = Stability::default().assess(&ts, &cmin);
        due.insert("C", c_up);
        due.insert("spread", su.spread);
        due.insert("slope", su.slope);
        due.set_pass(c_up.is_finite() && su.stable);
        dle.insert("c", c_low);
        dle.insert("spread", sl.spread);
        dle.insert("slope", sl.slope);
        dle.set_pass(c_low > 0.0 && sl.stable);
        Ok((due, dle))
    }
}

/// Convenience handle: the spectral data of the full graph.
pub fn full_spectral(df: &DirichletForm) -> Result<Arc<Spectral>> {
    df.spectral(&Domain::full(df.graph()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::MetricMeasureGraph;

    fn k2_uniform() -> DirichletForm {
        DirichletForm::new(MetricMeasureGraph::path(2).unwrap().with_uniform_measure())
    }

    #[test]
    fn k2_closed_forms() {
        let df = k2_uniform();
        let t = 2f64.ln() / 2.0;
        let k = df.heat_kernel(&[t, 1.0], Some(&[(0, 0), (0, 1)])).unwrap();
        assert!((k.get(0, 0) - 0.75).abs() < 1e-12);
        assert!((k.get(1, 0) - (1.0 + (-2f64).exp()) / 2.0).abs() < 1e-12);
        assert!((k.get(1, 1) - (1.0 - (-2f64).exp()) / 2.0).abs() < 1e-12);
        let a = Domain::new(df.graph(), [0]).unwrap();
        let r = df.restricted_heat_kernel(&a, &[1.0], Some(&[(0, 0)])).unwrap();
        assert!((r.get(0, 0) - (-1f64).exp()).abs() < 1e-12);
        assert!(df.heat_kernel(&[0.0], None).is_err());
    }

    #[test]
    fn short_time_limit() {
        let df = DirichletForm::new(MetricMeasureGraph::path(5).unwrap());
        let k = df.heat_kernel(&[1e-8], None).unwrap();
        for (idx, &(x, y)) in k.pairs.iter().enumerate() {
            let want = if x == y { 1.0 / df.graph().mu(x) } else { 0.0 };
            assert!((k.values[0][idx] - want).abs() < 1e-7);
        }
    }

    #[test]
    fn three_evaluators_agree() {
        let df = DirichletForm::new(MetricMeasureGraph::sierpinski(4).unwrap());
        let full = Domain::full(df.graph());
        let pairs = [(0, 0), (0, 10), (5, 40), (20, 3)];
        let times = [0.5, 3.0, 40.0];
        let s = df.heat_kernel_with(&full, &times, Some(&pairs), KernelMethod::Spectral).unwrap();
        let k = df.heat_kernel_with(&full, &times, Some(&pairs), KernelMethod::Krylov).unwrap();
        let u = df.heat_kernel_with(&full, &times, Some(&pairs), KernelMethod::Uniformization).unwrap();
        for ti in 0..times.len() {
            for pi in 0..pairs.len() {
                assert!((s.get(ti, pi) - k.get(ti, pi)).abs() < 1e-8);
                assert!((s.get(ti, pi) - u.get(ti, pi)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniformized_tail_keeps_relative_accuracy() {
        // From the middle of a long path, leaving B(50, 20) before t = 0.5 needs
        // 20 jumps: P ≈ Pois(0.5; ≥20)·2^{−19}, far below double-precision
        // cancellation of 1 − survival.
        let df = DirichletForm::new(MetricMeasureGraph::path(101).unwrap());
        let ball = Domain::ball(df.graph(), 50, 20.0).unwrap();
        let u = Uniformized::new(&df, &ball);
        let tail = u.exit_tail(&[0.5])[0][ball.local_index(50).unwrap()];
        assert!(tail > 0.0 && tail < 1e-25, "{tail}");
        let p20 = (-0.5f64).exp() * 0.5f64.powi(20) / (1..=20).map(|k| k as f64).product::<f64>();
        let ratio = tail / (p20 * 2f64.powi(-19));
        assert!(ratio > 0.99 && ratio < 1.1, "{ratio}");
    }

    #[test]
    fn conservative_and_derivative() {
        let df = DirichletForm::new(MetricMeasureGraph::path(30).unwrap());
        let rep = df.conservativeness_check(&[0.1, 1.0, 10.0, 100.0]).unwrap();
        assert!(rep.pass);
        let rep = df.time_derivative_check(1.0, &[(0, 0), (3, 7), (10, 29)]).unwrap();
        assert!(rep.pass);
        let k2 = k2_uniform();
        let sp = full_spectral(&k2).unwrap();
        assert!((sp.kernel_dt(1.0, 0, 1).abs() - (-2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn diag_bounds_on_path() {
        let df = DirichletForm::new(MetricMeasureGraph::path(257).unwrap());
        let f = ScaleFunction::power(2.0).unwrap();
        let times = crate::stats::geomspace(4.0, 256.0, 7);
        let (due, dle) = df.diag_bounds_check(&f, &[100, 128, 150], &times).unwrap();
        assert!(due.pass && dle.pass, "{:?} {:?}", due.constants, dle.constants);
        assert!(due.constant("C").unwrap() / dle.constant("c").unwrap() < 10.0);
    }
}
