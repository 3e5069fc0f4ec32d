//! Exit times from balls: exact means, tails and Laplace transforms, a Monte
//! Carlo cross-check, and the mean-exit-time and tail-bound checks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dirichlet::{DirichletForm, Domain};
use crate::error::{Error, Result};
use crate::heat::Uniformized;
use crate::linalg::SpdSolver;
use crate::report::{Condition, ConditionReport, Stability, Window};
use crate::scale::ScaleFunction;
use crate::space::Ball;
use crate::stats;

/// Largest tail-bound constant accepted when fitting `γ`.
pub const TAIL_C_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Jumps after which a trajectory is abandoned.
    pub max_event_count: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig {
            seed: 0,
            n_samples: 100_000,
            max_event_count: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub mean: f64,
    pub std_err: f64,
    /// 95% normal-approximation interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Trajectories abandoned at the event cap (excluded from the mean).
    pub truncated: usize,
}

impl McStats {
    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    /// Interval with `z` standard errors instead of 1.96.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.std_err, self.mean + z * self.std_err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeStats {
    pub ball: Ball,
    pub x: usize,
    pub mean_exact: f64,
    /// `(t, P_x(τ ≤ t))`.
    pub tail: Vec<(f64, f64)>,
    /// `(λ, E_x e^{−λτ})`.
    pub laplace: Vec<(f64, f64)>,
    pub mc: Option<McStats>,
}

fn ball_domain(df: &DirichletForm, ball: &Ball) -> Result<Domain> {
    Domain::new(df.graph(), ball.members.iter().copied())
}

fn local_of(domain: &Domain, x: usize) -> Result<usize> {
    domain
        .local_index(x)
        .ok_or_else(|| Error::Domain(format!("vertex {} is not in the ball", x)))
}

/// `P_x(τ_Ω ≤ t)` at each time, from the uniformized killed walk.
pub fn exit_tail_exact(df: &DirichletForm, domain: &Domain, x: usize, times: &[f64]) -> Result<Vec<(f64, f64)>> {
    let i = local_of(domain, x)?;
    df.check_killing(domain)?;
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Domain(format!("times must be nonnegative, got {}", t)));
    }
    let positive: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    let tails = Uniformized::new(df, domain).exit_tail(&positive);
    let mut k = 0;
    Ok(times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                (t, 0.0)
            } else {
                let v = tails[k][i].min(1.0);
                k += 1;
                (t, v)
            }
        })
        .collect())
}

/// `E_x e^{−λτ_Ω}`, solved as the λ-harmonic function equal to 1 off `Ω`.
pub fn laplace_exact(df: &DirichletForm, domain: &Domain, x: usize, lambda: f64) -> Result<f64> {
    let i = local_of(domain, x)?;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {}", lambda)));
    }
    df.check_killing(domain)?;
    let g = df.graph();
    let m = df.restricted_matrix(domain, lambda);
    let leak: Vec<f64> = domain
        .vertices()
        .iter()
        .map(|&v| {
            g.neighbors(v)
                .iter()
                .filter(|nb| !domain.contains(nb.vertex))
                .map(|nb| nb.conductance)
                .sum()
        })
        .collect();
    let u = SpdSolver::new(&m)?.solve(&leak)?;
    Ok(u[i].clamp(0.0, 1.0))
}

/// Continuous-time walk from `x` until it first jumps out of `Ω`.
pub fn mc_exit_time(df: &DirichletForm, domain: &Domain, x: usize, cfg: &MCConfig) -> Result<McStats> {
    local_of(domain, x)?;
    if cfg.n_samples < 2 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least 2 samples".into()));
    }
    df.check_killing(domain)?;
    let g = df.graph();
    // Per-vertex cumulative conductances for jump selection.
    let tables: Vec<(f64, Vec<(f64, usize)>)> = (0..g.vertex_count())
        .map(|v| {
            let mut acc = 0.0;
            let cum = g
                .neighbors(v)
                .iter()
                .map(|nb| {
                    acc += nb.conductance;
                    (acc, nb.vertex)
                })
                .collect();
            (acc / g.mu(v), cum)
        })
        .collect();
    let run = |k: usize| -> Option<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let mut v = x;
        let mut time = 0.0;
        for _ in 0..cfg.max_event_count {
            let (rate, cum) = &tables[v];
            let u: f64 = rng.random();
            time += -(1.0 - u).ln() / rate;
            let total = cum.last().unwrap().0;
            let pick: f64 = rng.random::<f64>() * total;
            let idx = cum.partition_point(|c| c.0 <= pick).min(cum.len() - 1);
            v = cum[idx].1;
            if !domain.contains(v) {
                return Some(time);
            }
        }
        None
    };
    let samples: Vec<Option<f64>> = (0..cfg.n_samples).into_par_iter().map(run).collect();
    let kept: Vec<f64> = samples.iter().flatten().copied().collect();
    let truncated = samples.len() - kept.len();
    if kept.len() < 2 {
        return Err(Error::Sampling(format!("{} of {} trajectories hit the event cap", truncated, cfg.n_samples)));
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(McStats {
        mean,
        std_err: se,
        ci_low: mean - 1.96 * se,
        ci_high: mean + 1.96 * se,
        n_samples: kept.len(),
        seed: cfg.seed,
        truncated,
    })
}

/// All exit-time statistics of one ball and starting point.
pub fn exit_time_stats(
    df: &DirichletForm,
    ball: &Ball,
    x: usize,
    times: &[f64],
    lambdas: &[f64],
    mc: Option<&MCConfig>,
) -> Result<ExitTimeStats> {
    let domain = ball_domain(df, ball)?;
    let mean_exact = df.mean_exit_exact(&domain, x)?;
    let tail = exit_tail_exact(df, &domain, x, times)?;
    let laplace = lambdas
        .iter()
        .map(|&l| Ok((l, laplace_exact(df, &domain, x, l)?)))
        .collect::<Result<_>>()?;
    let mc = mc.map(|cfg| mc_exit_time(df, &domain, x, cfg)).transpose()?;
    Ok(ExitTimeStats {
        ball: ball.clone(),
        x,
        mean_exact,
        tail,
        laplace,
        mc,
    })
}

/// Mean exit time comparability `C⁻¹F(r) ≤ E_x τ_{B(x,r)} ≤ C F(r)`.
pub fn check_ef(df: &DirichletForm, f: &ScaleFunction, centers: &[usize], radii: &[f64]) -> Result<ConditionReport> {
    if centers.is_empty() || radii.is_empty() {
        return Err(Error::InvalidArgument("check_ef needs centers and radii (empty window)".into()));
    }
    let lo = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = radii.iter().copied().fold(0.0, f64::max);
    let mut rep = ConditionReport::new(
        Condition::EF,
        Window::radii(lo, hi),
        format!("{} centers x {} radii, exact Green solves", centers.len(), radii.len()),
    );
    let jobs: Vec<(usize, f64)> = radii.iter().flat_map(|&r| centers.iter().map(move |&x| (x, r))).collect();
    let results: Vec<Result<Option<(usize, f64, f64, f64)>>> = jobs
        .par_iter()
        .map(|&(x, r)| {
            let dom = Domain::ball(df.graph(), x, r)?;
            // On a discrete space many radii give the same ball; F is taken
            // at the largest of them, the distance the walk has to cover.
            let Some(s) = df.graph().exit_radius(x, r)? else {
                return Ok(None);
            };
            match df.mean_exit_exact(&dom, x) {
                Ok(e) => Ok(Some((x, s, e, f.eval(s)?))),
                Err(Error::ZeroEigenvalue(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut c: f64 = 1.0;
    let mut pairs = Vec::new();
    for (res, &(x, r)) in results.into_iter().zip(&jobs) {
        match res? {
            Some((x, s, e, fr)) => {
                c = c.max(e / fr).max(fr / e);
                rep.samples.push(json!({"x": x, "r": r, "r_exit": s, "E": e, "F": fr}));
                pairs.push((r, s, (e / fr).ln()));
            }
            None => rep.note(format!("ball ({}, {}) covers its component; skipped", x, r)),
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no admissible balls in the window".into()));
    }
    // Per-radius median of E/F must neither spread nor trend. The median
    // keeps the few balls that run into the edge of the space from setting
    // the trend on their own; C still covers every ball.
    let mut by_radius: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for &(r, s, l) in &pairs {
        let e = by_radius.entry(r.to_bits()).or_default();
        e.0.push(s);
        e.1.push(l);
    }
    let scales: Vec<f64> = by_radius.values().map(|v| stats::quantile(&v.0, 0.5)).collect();
    let means: Vec<f64> = by_radius.values().map(|v| stats::quantile(&v.1, 0.5).exp()).collect();
    let stab = Stability::default().assess(&scales, &means);
    rep.insert("C", c);
    rep.insert("spread", stab.spread);
    rep.insert("slope", stab.slope);
    rep.set_pass(c.is_finite() && stab.stable);
    Ok(rep)
}

/// Fits `P_x(τ_{B(x,R)} ≤ t) ≤ C exp(−tΦ(γR/t))` over balls `(x, R)` and
/// times, choosing the largest `γ` on a grid with `C(γ) ≤ TAIL_C_MAX`; also
/// checks `P_x(τ < t) ≤ 1 − E_xτ/Ē + t/Ē` with `Ē = max_{y∈B} E_yτ` on
/// every sample.
pub fn check_tail_bound(
    df: &DirichletForm,
    f: &ScaleFunction,
    balls: &[(usize, f64)],
    times: &[f64],
) -> Result<ConditionReport> {
    if balls.is_empty() || times.is_empty() {
        return Err(Error::InvalidArgument("check_tail_bound needs balls and times".into()));
    }
    let t_lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let t_hi = times.iter().copied().fold(0.0, f64::max);
    let r_lo = balls.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
    let r_hi = balls.iter().map(|b| b.1).fold(0.0, f64::max);
    let mut rep = ConditionReport::new(
        Condition::Tail,
        Window::radii(r_lo, r_hi).with_times(t_lo, t_hi),
        format!("{} balls x {} times, uniformized exact tails", balls.len(), times.len()),
    );
    // (R, t, P, lTtail rhs)
    let per_ball: Vec<Result<Vec<(f64, f64, f64, f64)>>> = balls
        .par_iter()
        .map(|&(x, r)| {
            let dom = Domain::ball(df.graph(), x, r)?;
            let s = df.solver(&dom)?;
            let e = s.mean_exit()?;
            let e_bar = dom.vertices().iter().map(|&v| e[v]).fold(0.0, f64::max);
            let tails = exit_tail_exact(df, &dom, x, times)?;
            Ok(tails
                .into_iter()
                .map(|(t, p)| (r, t, p, 1.0 - e[x] / e_bar + t / e_bar))
                .collect())
        })
        .collect();
    let mut samples = Vec::new();
    for res in per_ball {
        samples.extend(res?);
    }
    let mut elementary_ok = true;
    let mut worst_elementary: f64 = f64::NEG_INFINITY;
    for &(_, _, p, rhs) in &samples {
        worst_elementary = worst_elementary.max(p - rhs);
        if p > rhs + 1e-12 {
            elementary_ok = false;
        }
    }
    // log C(γ) = max over samples of log P + tΦ(γR/t).
    let log_c = |gamma: f64| -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        for &(r, t, p, _) in &samples {
            if p > 0.0 {
                m = m.max(p.ln() + f.phi(gamma * r, t)?);
            }
        }
        Ok(m)
    };
    let grid = stats::geomspace(1e-3, 4.0, 200);
    let mut best: Option<(f64, f64)> = None;
    for &gamma in &grid {
        let lc = log_c(gamma)?;
        if lc <= TAIL_C_MAX.ln() {
            best = Some((gamma, lc.exp()));
        } else {
            break;
        }
    }
    for &(r, t, p, rhs) in samples.iter() {
        rep.samples.push(json!({"R": r, "t": t, "P": p, "elementary_rhs": rhs}));
    }
    rep.insert("elementary_max_excess", worst_elementary);
    match best {
        Some((gamma, c)) => {
            rep.insert("gamma", gamma);
            rep.insert("C", c);
            rep.set_pass(elementary_ok);
        }
        None => {
            rep.note(format!("no gamma >= 1e-3 keeps C <= {}", TAIL_C_MAX));
            rep.set_pass(false);
        }
    }
    if !elementary_ok {
        rep.note("elementary tail inequality violated");
    }
    Ok(rep)
}

/// Fits `E_x e^{−λτ_{B(x,R)}} ≤ C exp(−γ R / R(1/λ))` with the largest `γ`
/// on a grid keeping `C ≤ TAIL_C_MAX`.
pub fn check_laplace_bound(
    df: &DirichletForm,
    f: &ScaleFunction,
    balls: &[(usize, f64)],
    lambdas: &[f64],
) -> Result<ConditionReport> {
    if balls.is_empty() || lambdas.is_empty() {
        return Err(Error::InvalidArgument("check_laplace_bound needs balls and lambdas".into()));
    }
    let r_lo = balls.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
    let r_hi = balls.iter().map(|b| b.1).fold(0.0, f64::max);
    let mut rep = ConditionReport::new(
        Condition::Laplace,
        Window::radii(r_lo, r_hi),
        format!("{} balls x {} lambdas, resolvent solves", balls.len(), lambdas.len()),
    );
    let mut samples = Vec::new();
    for &(x, r) in balls {
        let dom = Domain::ball(df.graph(), x, r)?;
        for &l in lambdas {
            let v = laplace_exact(df, &dom, x, l)?;
            let scale = f.inverse(1.0 / l)?;
            samples.push((r, l, v, r / scale));
            rep.samples.push(json!({"R": r, "lambda": l, "value": v}));
        }
    }
    let mut best = None;
    for &gamma in &stats::geomspace(1e-3, 10.0, 200) {
        let lc = samples
            .iter()
            .map(|&(_, _, v, q)| v.ln() + gamma * q)
            .fold(f64::NEG_INFINITY, f64::max);
        if lc <= TAIL_C_MAX.ln() {
            best = Some((gamma, lc.exp()));
        } else {
            break;
        }
    }
    let decreasing = samples.windows(2).all(|w| w[0].0 != w[1].0 || w[1].2 <= w[0].2 + 1e-15);
    match best {
        Some((gamma, c)) => {
            rep.insert("gamma", gamma);
            rep.insert("C", c);
            rep.set_pass(decreasing);
        }
        None => rep.set_pass(false),
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::MetricMeasureGraph;

    fn k2() -> (DirichletForm, Domain) {
        let df = DirichletForm::new(MetricMeasureGraph::path(2).unwrap());
        let d = Domain::new(df.graph(), [0]).unwrap();
        (df, d)
    }

    #[test]
    fn k2_examples() {
        let (df, a) = k2();
        let tail = exit_tail_exact(&df, &a, 0, &[0.0, 1.0, 60.0]).unwrap();
        assert_eq!(tail[0].1, 0.0);
        assert!((tail[1].1 - (1.0 - (-1f64).exp())).abs() < 1e-12);
        assert!((tail[2].1 - 1.0).abs() < 1e-12);
        assert!((laplace_exact(&df, &a, 0, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((laplace_exact(&df, &a, 0, 1e-9).unwrap() - 1.0).abs() < 1e-8);
        assert!(exit_tail_exact(&df, &a, 1, &[1.0]).is_err());
    }

    #[test]
    fn mc_is_reproducible_and_close() {
        let (df, a) = k2();
        let cfg = MCConfig { seed: 42, n_samples: 100_000, max_event_count: 1000 };
        let s1 = mc_exit_time(&df, &a, 0, &cfg).unwrap();
        let s2 = mc_exit_time(&df, &a, 0, &cfg).unwrap();
        assert_eq!(s1.mean.to_bits(), s2.mean.to_bits());
        assert!((s1.mean - 1.0).abs() <= 3.0 * s1.std_err);
    }

    #[test]
    fn ef_on_path() {
        let df = DirichletForm::new(MetricMeasureGraph::path(201).unwrap());
        let rep = check_ef(&df, &ScaleFunction::power(2.0).unwrap(), &[100], &[4.0, 8.0, 16.0, 32.0]).unwrap();
        assert!(rep.pass);
        assert!((rep.constant("C").unwrap() - 1.0).abs() < 1e-9);
        let rep = check_ef(&df, &ScaleFunction::power(3.0).unwrap(), &[100], &[4.0, 8.0, 16.0, 32.0]).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn tail_bound_on_path() {
        let df = DirichletForm::new(MetricMeasureGraph::path(201).unwrap());
        let f = ScaleFunction::power(2.0).unwrap();
        let times = stats::geomspace(0.5, 4096.0, 30);
        let rep = check_tail_bound(&df, &f, &[(100, 8.0), (100, 16.0), (100, 32.0)], &times).unwrap();
        assert!(rep.pass, "{:?}", rep.notes);
        assert!(rep.constant("gamma").unwrap() > 0.1);
    }
}
