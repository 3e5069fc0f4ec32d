//! Space-time scale functions `F`, their inverses `R = F⁻¹`, and the profile
//!
//! ```text
//! Φ(s)   = sup_{r>0} { s/r − 1/F(r) }
//! Φ(R,t) = sup_{r>0} { R/r − t/F(r) } = t·Φ(R/t)
//! ```
//!
//! which governs the off-diagonal decay of sub-Gaussian heat kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, LinearFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleFunction {
    /// `F(r) = r^beta`.
    Power { beta: f64 },
    /// `F(r) = r^beta1` below 1 and `r^beta2` from 1 on.
    TwoPiece { beta1: f64, beta2: f64 },
    /// Log-log linear interpolation of sorted `(r, F(r))` points, continued
    /// as a power law with the end slopes outside the table.
    Tabulated { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub s: f64,
    pub phi: f64,
    pub argmax_r: f64,
    /// The coarse scan peaked at the edge of its range.
    pub boundary: bool,
}

/// Regularity exponents `(β, β′)` and constant `C` with
/// `C⁻¹(R/r)^β ≤ F(R)/F(r) ≤ C(R/r)^β′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub beta: f64,
    pub beta_prime: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiLowerBound {
    pub c: f64,
    pub regularity: Regularity,
    /// `(R, t, Φ(R,t), rhs)` at the sample attaining `c`.
    pub worst: (f64, f64, f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeFit {
    pub scale: ScaleFunction,
    pub beta: f64,
    /// `E ≈ prefactor · r^beta`.
    pub prefactor: f64,
    /// Largest multiplicative deviation of the data from the fit.
    pub spread: f64,
    pub fit: LinearFit,
}

const SCAN_POINTS: usize = 512;
const SCAN_DECADES: f64 = 6.0;

impl ScaleFunction {
    pub fn power(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("power exponent must be positive, got {}", beta)));
        }
        Ok(ScaleFunction::Power { beta })
    }

    pub fn two_piece(beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 > 0.0 && beta2 > 0.0 && beta1.is_finite() && beta2.is_finite()) {
            return Err(Error::InvalidArgument("two-piece exponents must be positive".into()));
        }
        Ok(ScaleFunction::TwoPiece { beta1, beta2 })
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("tabulated F needs at least two points".into()));
        }
        for (i, &(r, f)) in points.iter().enumerate() {
            if !(r > 0.0 && f > 0.0 && r.is_finite() && f.is_finite()) {
                return Err(Error::InvalidArgument(format!("point {} must be positive", i)));
            }
            if i > 0 {
                let (pr, pf) = points[i - 1];
                if !(r > pr && f > pf) {
                    return Err(Error::InvalidArgument(format!(
                        "tabulated F must be strictly increasing in both columns (row {})",
                        i
                    )));
                }
            }
        }
        Ok(ScaleFunction::Tabulated { points })
    }

    /// Parses `r,F` CSV. A header row and `#` comments are skipped.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::parse(i + 1, "expected two columns r,F"));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(r), Ok(f)) => points.push((r, f)),
                _ if points.is_empty() => continue, // header
                _ => return Err(Error::parse(i + 1, "invalid number")),
            }
        }
        Self::tabulated(points)
    }

    fn check_positive(x: f64, what: &str) -> Result<()> {
        if !(x > 0.0) || x.is_nan() {
            return Err(Error::Domain(format!("{} must be positive, got {}", what, x)));
        }
        Ok(())
    }

    /// `F(r)`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        Self::check_positive(r, "r")?;
        Ok(self.eval_unchecked(r))
    }

    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        match self {
            ScaleFunction::Power { beta } => r.powf(*beta),
            ScaleFunction::TwoPiece { beta1, beta2 } => {
                if r < 1.0 {
                    r.powf(*beta1)
                } else {
                    r.powf(*beta2)
                }
            }
            ScaleFunction::Tabulated { points } => {
                let lr = r.ln();
                let (a, b) = segment_for(points, |p| p.0.ln(), lr);
                let (x0, y0) = (a.0.ln(), a.1.ln());
                let (x1, y1) = (b.0.ln(), b.1.ln());
                (y0 + (y1 - y0) * (lr - x0) / (x1 - x0)).exp()
            }
        }
    }

    /// `R(t) = F⁻¹(t)`.
    pub fn inverse(&self, t: f64) -> Result<f64> {
        Self::check_positive(t, "t")?;
        Ok(self.inverse_unchecked(t))
    }

    pub(crate) fn inverse_unchecked(&self, t: f64) -> f64 {
        match self {
            ScaleFunction::Power { beta } => t.powf(1.0 / beta),
            ScaleFunction::TwoPiece { beta1, beta2 } => {
                if t < 1.0 {
                    t.powf(1.0 / beta1)
                } else {
                    t.powf(1.0 / beta2)
                }
            }
            ScaleFunction::Tabulated { points } => {
                let lt = t.ln();
                let (a, b) = segment_for(points, |p| p.1.ln(), lt);
                let (x0, y0) = (a.0.ln(), a.1.ln());
                let (x1, y1) = (b.0.ln(), b.1.ln());
                (x0 + (x1 - x0) * (lt - y0) / (y1 - y0)).exp()
            }
        }
    }

    /// Tightest `(β, β′, C)` over a log-spaced grid.
    ///
    /// Exponents are the extreme log-log slopes over grid pairs at least one
    /// decade apart (short pairs only feed `C`), so local wiggles in
    /// tabulated data do not masquerade as regularity exponents.
    pub fn regularity(&self, grid: &[f64]) -> Result<Regularity> {
        if grid.len() < 3 {
            return Err(Error::InvalidArgument("regularity grid needs at least 3 points".into()));
        }
        let mut g = grid.to_vec();
        g.sort_by(f64::total_cmp);
        if !(g[0] > 0.0) {
            return Err(Error::InvalidArgument("regularity grid must be positive".into()));
        }
        let span = g[g.len() - 1] / g[0];
        if span < 100.0 * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "regularity grid spans {:.3} decades, need at least 2",
                span.log10()
            )));
        }
        let lf: Vec<f64> = g.iter().map(|&r| self.eval_unchecked(r).ln()).collect();
        let lr: Vec<f64> = g.iter().map(|r| r.ln()).collect();
        let decade = 10f64.ln() * (1.0 - 1e-12);
        let mut beta = f64::INFINITY;
        let mut beta_prime = f64::NEG_INFINITY;
        for i in 0..g.len() {
            for j in (i + 1)..g.len() {
                let dx = lr[j] - lr[i];
                if dx >= decade {
                    let q = (lf[j] - lf[i]) / dx;
                    beta = beta.min(q);
                    beta_prime = beta_prime.max(q);
                }
            }
        }
        let mut log_c: f64 = 0.0;
        for i in 0..g.len() {
            for j in (i + 1)..g.len() {
                let dx = lr[j] - lr[i];
                let dy = lf[j] - lf[i];
                log_c = log_c.max(beta * dx - dy).max(dy - beta_prime * dx);
            }
        }
        if !(beta > 1.0) {
            return Err(Error::RegularityViolation(format!(
                "fitted lower exponent {:.6} must exceed 1",
                beta
            )));
        }
        Ok(Regularity {
            beta,
            beta_prime,
            constant: log_c.exp(),
        })
    }

    /// `Φ(s) = sup_{r>0} { s/r − 1/F(r) }`.
    pub fn phi_point(&self, s: f64) -> Result<ProfilePoint> {
        if s.is_nan() || s < 0.0 {
            return Err(Error::Domain(format!("profile argument must be nonnegative, got {}", s)));
        }
        if s == 0.0 {
            return Ok(ProfilePoint {
                s,
                phi: 0.0,
                argmax_r: f64::INFINITY,
                boundary: true,
            });
        }
        let objective = |lr: f64| {
            let r = lr.exp();
            s / r - 1.0 / self.eval_unchecked(r)
        };
        let center = self.stationary_scale_estimate(s).ln();
        let half = SCAN_DECADES * 10f64.ln();
        let step = 2.0 * half / (SCAN_POINTS - 1) as f64;
        let grid = |i: usize| center - half + step * i as f64;
        let (best, _) = (0..SCAN_POINTS)
            .map(|i| (i, objective(grid(i))))
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let boundary = best == 0 || best == SCAN_POINTS - 1;
        let lo = grid(best.saturating_sub(1));
        let hi = grid((best + 1).min(SCAN_POINTS - 1));
        let (arg, val) = golden_max(objective, lo, hi, 1e-13);
        Ok(ProfilePoint {
            s,
            phi: val.max(0.0),
            argmax_r: arg.exp(),
            boundary,
        })
    }

    /// `Φ(R,t) = t·Φ(R/t)`.
    pub fn phi(&self, big_r: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("t must be positive, got {}", t)));
        }
        if big_r.is_nan() || big_r < 0.0 {
            return Err(Error::Domain(format!("R must be nonnegative, got {}", big_r)));
        }
        Ok(t * self.phi_point(big_r / t)?.phi)
    }

    /// Scale `r` solving `F(r)/r = 1/s`, where `s/r` and `1/F(r)` balance.
    fn stationary_scale_estimate(&self, s: f64) -> f64 {
        let target = -s.ln();
        let h = |lr: f64| self.eval_unchecked(lr.exp()).ln() - lr;
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        let mut k = 0;
        while h(lo) > target && k < 200 {
            lo -= 2.0;
            k += 1;
        }
        k = 0;
        while h(hi) < target && k < 200 {
            hi += 2.0;
            k += 1;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if h(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    /// Largest `c` with `Φ(R,t) ≥ c·min{(F(R)/t)^{1/(β′−1)}, (F(R)/t)^{1/(β−1)}}`
    /// over the samples; exponents come from [`regularity`](Self::regularity)
    /// on a grid covering the sampled radii.
    pub fn phi_lower_bound(&self, samples: &[(f64, f64)]) -> Result<PhiLowerBound> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no (R, t) samples".into()));
        }
        let rmin = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let rmax = samples.iter().map(|s| s.0).fold(0.0, f64::max);
        if !(rmin > 0.0) {
            return Err(Error::InvalidArgument("sample radii must be positive".into()));
        }
        let grid = stats::geomspace(rmin / 1000.0, rmax * 1000.0, 200);
        let reg = self.regularity(&grid)?;
        let mut c = f64::INFINITY;
        let mut worst = (0.0, 0.0, 0.0, 0.0);
        for &(big_r, t) in samples {
            let phi = self.phi(big_r, t)?;
            let q = self.eval_unchecked(big_r) / t;
            let rhs = q
                .powf(1.0 / (reg.beta_prime - 1.0))
                .min(q.powf(1.0 / (reg.beta - 1.0)));
            let ratio = phi / rhs;
            if ratio < c {
                c = ratio;
                worst = (big_r, t, phi, rhs);
            }
        }
        if !(c > 1e-12) {
            return Err(Error::Inconsistency(format!(
                "profile lower bound constant {:.3e} is not positive",
                c
            )));
        }
        Ok(PhiLowerBound {
            c,
            regularity: reg,
            worst,
        })
    }

    /// Log-log least-squares power law through `(r, E)` exit-time data.
    pub fn fit_from_exit_times(data: &[(f64, f64)]) -> Result<ExitTimeFit> {
        if data.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "exit-time fit needs at least 4 points, got {}",
                data.len()
            )));
        }
        if data.iter().any(|&(r, e)| !(r > 0.0 && e > 0.0)) {
            return Err(Error::InvalidArgument("exit-time data must be positive".into()));
        }
        let rmin = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
        let rmax = data.iter().map(|d| d.0).fold(0.0, f64::max);
        if rmax / rmin < 10.0 * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument("exit-time data must span at least one decade in r".into()));
        }
        let x: Vec<f64> = data.iter().map(|d| d.0.ln()).collect();
        let y: Vec<f64> = data.iter().map(|d| d.1.ln()).collect();
        let fit = stats::linear_fit(&x, &y);
        if !(fit.slope > 1.0) {
            return Err(Error::RegularityViolation(format!(
                "fitted exponent {:.4} must exceed 1",
                fit.slope
            )));
        }
        let spread = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - fit.intercept - fit.slope * a).abs())
            .fold(0.0, f64::max)
            .exp();
        Ok(ExitTimeFit {
            scale: ScaleFunction::Power { beta: fit.slope },
            beta: fit.slope,
            prefactor: fit.intercept.exp(),
            spread,
            fit,
        })
    }
}

/// Segment of a sorted table whose key range covers `x`; the end segments
/// are used for extrapolation.
fn segment_for<K>(points: &[(f64, f64)], key: K, x: f64) -> ((f64, f64), (f64, f64))
where
    K: Fn(&(f64, f64)) -> f64,
{
    let n = points.len();
    let idx = points.partition_point(|p| key(p) <= x);
    let i = idx.clamp(1, n - 1);
    (points[i - 1], points[i])
}

/// Golden-section maximization on `[lo, hi]`.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..200 {
        if (hi - lo).abs() <= tol * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        }
    }
    if fa > fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form(beta: f64, s: f64) -> f64 {
        (beta - 1.0) * beta.powf(-beta / (beta - 1.0)) * s.powf(beta / (beta - 1.0))
    }

    #[test]
    fn evaluation() {
        let p = ScaleFunction::power(2.0).unwrap();
        assert_eq!(p.eval(2.0).unwrap(), 4.0);
        assert_eq!(p.inverse(4.0).unwrap(), 2.0);
        assert!(matches!(p.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(p.inverse(-1.0), Err(Error::Domain(_))));

        let tp = ScaleFunction::two_piece(2.0, 3.0).unwrap();
        assert_eq!(tp.eval(0.5).unwrap(), 0.25);
        assert_eq!(tp.eval(2.0).unwrap(), 8.0);
        assert!((tp.inverse(8.0).unwrap() - 2.0).abs() < 1e-15);

        let tab = ScaleFunction::tabulated(vec![(1.0, 1.0), (2.0, 4.0)]).unwrap();
        assert!((tab.eval(2f64.sqrt()).unwrap() - 2.0).abs() < 1e-14);
        // Power-law continuation with the end slope.
        assert!((tab.eval(8.0).unwrap() - 64.0).abs() < 1e-9);
        assert!((tab.inverse(64.0).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn tabulated_rejects_non_monotone() {
        assert!(ScaleFunction::tabulated(vec![(1.0, 2.0), (2.0, 1.0)]).is_err());
        assert!(ScaleFunction::tabulated(vec![(1.0, 1.0)]).is_err());
        let f = ScaleFunction::parse_csv("r,F\n1,1\n2,4\n4,16\n").unwrap();
        assert!((f.eval(4.0).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_examples() {
        let grid = stats::geomspace(0.01, 100.0, 41);
        let r = ScaleFunction::power(2.0).unwrap().regularity(&grid).unwrap();
        assert!((r.beta - 2.0).abs() < 1e-12 && (r.beta_prime - 2.0).abs() < 1e-12);
        assert!((r.constant - 1.0).abs() < 1e-9);

        let r = ScaleFunction::two_piece(2.0, 3.0).unwrap().regularity(&grid).unwrap();
        assert!((r.beta - 2.0).abs() < 1e-9 && (r.beta_prime - 3.0).abs() < 1e-9);
        assert!(r.constant >= 1.0);

        let err = ScaleFunction::power(0.8).unwrap().regularity(&grid).unwrap_err();
        assert!(matches!(err, Error::RegularityViolation(_)));
        assert!(ScaleFunction::power(2.0)
            .unwrap()
            .regularity(&[1.0, 2.0, 4.0])
            .is_err());
    }

    #[test]
    fn regularity_of_noisy_table() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rs = stats::geomspace(0.1, 1000.0, 50);
        let pts: Vec<(f64, f64)> = rs
            .iter()
            .map(|&r| (r, r.powf(2.5) * (1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0))))
            .collect();
        let f = ScaleFunction::tabulated(pts).unwrap();
        let reg = f.regularity(&rs).unwrap();
        assert!((reg.beta - 2.5).abs() / 2.5 < 0.05, "beta = {}", reg.beta);
        assert!((reg.beta_prime - 2.5).abs() / 2.5 < 0.05);
    }

    #[test]
    fn profile_examples() {
        let p = ScaleFunction::power(2.0).unwrap();
        assert_eq!(p.phi_point(0.0).unwrap().phi, 0.0);
        let pt = p.phi_point(2.0).unwrap();
        assert!((pt.phi - 1.0).abs() < 1e-12);
        assert!((pt.argmax_r - 1.0).abs() < 1e-6);
        assert!(!pt.boundary);
        assert!((p.phi(2.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(p.phi(0.0, 3.0).unwrap(), 0.0);
        assert!(p.phi(1.0, 0.0).is_err());
        for beta in [1.5, 2.0, 3.0, 5.0] {
            let f = ScaleFunction::power(beta).unwrap();
            for s in [1e-4, 0.3, 1.0, 7.0, 1e3] {
                let want = closed_form(beta, s);
                let got = f.phi_point(s).unwrap().phi;
                assert!((got - want).abs() <= 1e-9 * want, "beta {beta} s {s}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn scaling_identity() {
        let f = ScaleFunction::power(2.0).unwrap();
        let (a, b, r, t) = (2.0, 3.0, 1.0, 1.0);
        let lhs = f.phi(a * r, b * t).unwrap();
        let rhs = a * b * f.phi(r / b, t / a).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9 * lhs);
    }

    #[test]
    fn two_piece_profile_regimes() {
        let f = ScaleFunction::two_piece(2.0, 3.0).unwrap();
        // Large s probes small r (exponent 2): Φ ≍ s².
        let big: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&s| f.phi_point(s).unwrap().phi / (s * s))
            .collect();
        // Small s probes large r (exponent 3): Φ ≍ s^{3/2}.
        let small: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&s: &f64| f.phi_point(s).unwrap().phi / s.powf(1.5))
            .collect();
        for v in big.iter().chain(&small) {
            assert!(*v > 0.05 && *v < 1.0, "{v}");
        }
        // Deep in each regime the closed power-law constants are recovered.
        assert!((big[2] - 0.25).abs() < 1e-9);
        assert!((small[2] - closed_form(3.0, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn lower_bound_constant() {
        let f = ScaleFunction::power(2.0).unwrap();
        let samples: Vec<(f64, f64)> = stats::geomspace(0.5, 50.0, 8)
            .into_iter()
            .flat_map(|r| stats::geomspace(0.1, 1000.0, 9).into_iter().map(move |t| (r, t)))
            .collect();
        let lb = f.phi_lower_bound(&samples).unwrap();
        assert!((lb.c - 0.25).abs() < 1e-6, "c = {}", lb.c);

        let tp = ScaleFunction::two_piece(2.0, 3.0).unwrap();
        let lb = tp.phi_lower_bound(&samples).unwrap();
        assert!(lb.c > 0.0);
    }

    #[test]
    fn superadditivity() {
        let f = ScaleFunction::two_piece(2.0, 3.0).unwrap();
        for s in stats::geomspace(1e-3, 1e3, 25) {
            let a = f.phi_point(2.0 * s).unwrap().phi;
            let b = f.phi_point(s).unwrap().phi;
            assert!(a >= 2.0 * b * (1.0 - 1e-12));
        }
    }

    #[test]
    fn exit_time_fits() {
        let data: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&r| (r, r * r)).collect();
        let fit = ScaleFunction::fit_from_exit_times(&data).unwrap();
        assert!((fit.beta - 2.0).abs() < 1e-12);
        assert!((fit.spread - 1.0).abs() < 1e-12);

        let flat: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&r| (r, 3.0)).collect();
        assert!(matches!(
            ScaleFunction::fit_from_exit_times(&flat),
            Err(Error::RegularityViolation(_))
        ));
        assert!(ScaleFunction::fit_from_exit_times(&data[..3]).is_err());
        let narrow: Vec<(f64, f64)> = [1.0, 1.5, 2.0, 3.0].iter().map(|&r| (r, r * r)).collect();
        assert!(ScaleFunction::fit_from_exit_times(&narrow).is_err());
    }
}
