//! Report types shared by every checker, plus the scale-stability test.
//!
//! Finite graphs can only approximate statements of the form "for all r > 0",
//! so every report records the radius/time window it was computed on. A
//! fitted constant is called *stable* when its per-scale values neither trend
//! (log-log slope against the scale) nor spread beyond fixed bounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub r_min: f64,
    pub r_max: f64,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

impl Window {
    pub fn radii(r_min: f64, r_max: f64) -> Self {
        Window {
            r_min,
            r_max,
            t_min: None,
            t_max: None,
        }
    }

    pub fn with_times(mut self, t_min: f64, t_max: f64) -> Self {
        self.t_min = Some(t_min);
        self.t_max = Some(t_max);
        self
    }

    pub fn is_empty(&self) -> bool {
        let radial = !(self.r_min > 0.0 && self.r_min <= self.r_max);
        let temporal = match (self.t_min, self.t_max) {
            (Some(a), Some(b)) => !(a > 0.0 && a <= b),
            _ => false,
        };
        radial || temporal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    Vd,
    H,
    Osc,
    EF,
    Fk,
    Tail,
    Laplace,
    Due,
    Dle,
    Ue,
    Nle,
    TwoSided,
    Equiv,
    Conservative,
    TimeDerivative,
    ChainCondition,
}

impl Condition {
    pub fn tag(self) -> &'static str {
        match self {
            Condition::Vd => "VD",
            Condition::H => "H",
            Condition::Osc => "OSC",
            Condition::EF => "E_F",
            Condition::Fk => "FK",
            Condition::Tail => "TAIL",
            Condition::Laplace => "LAPLACE",
            Condition::Due => "DUE",
            Condition::Dle => "DLE",
            Condition::Ue => "UE",
            Condition::Nle => "NLE",
            Condition::TwoSided => "TWO_SIDED",
            Condition::Equiv => "EQUIV",
            Condition::Conservative => "CONSERVATIVE",
            Condition::TimeDerivative => "TIME_DERIVATIVE",
            Condition::ChainCondition => "CHAIN",
        }
    }
}

/// Outcome of a sampled check. Sampling can refute a condition but never
/// certify it, so a passing report reads "consistent with".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Refuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub pass: bool,
    pub verdict: Verdict,
    pub constants: BTreeMap<String, f64>,
    pub window: Window,
    pub sampling: String,
    pub samples: Vec<serde_json::Value>,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn new(condition: Condition, window: Window, sampling: impl Into<String>) -> Self {
        ConditionReport {
            condition,
            pass: false,
            verdict: Verdict::Refuted,
            constants: BTreeMap::new(),
            window,
            sampling: sampling.into(),
            samples: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn set_pass(&mut self, pass: bool) {
        self.pass = pass;
        self.verdict = if pass {
            Verdict::Consistent
        } else {
            Verdict::Refuted
        };
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.constants.insert(name.to_string(), value);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Bounds a per-scale constant must respect to be called stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    /// Largest allowed `max/min` ratio across scales.
    pub max_spread: f64,
    /// Largest allowed `|d log(stat) / d log(scale)|`, measured as the
    /// median pairwise slope so a single outlying scale cannot decide it.
    pub max_slope: f64,
}

impl Default for Stability {
    fn default() -> Self {
        Stability {
            max_spread: 10.0,
            max_slope: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOutcome {
    pub spread: f64,
    pub slope: f64,
    pub stable: bool,
}

/// Which trend of a per-scale statistic threatens the bound it stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    /// Two-sided comparability: any trend counts.
    Both,
    /// An upper-bound constant (a max): only growth counts.
    Up,
    /// A lower-bound constant (a min): only decay counts.
    Down,
}

impl Stability {
    /// Spread-only criterion for constants that do not depend on a scale
    /// function and may converge monotonically to their limit.
    pub fn spread_only() -> Self {
        Stability {
            max_spread: 10.0,
            max_slope: f64::INFINITY,
        }
    }

    /// `scales` and `values` are parallel; values must be positive and finite.
    pub fn assess(&self, scales: &[f64], values: &[f64]) -> StabilityOutcome {
        self.assess_trend(scales, values, Trend::Both)
    }

    pub fn assess_trend(&self, scales: &[f64], values: &[f64], trend: Trend) -> StabilityOutcome {
        let valid = !values.is_empty() && values.iter().all(|v| v.is_finite() && *v > 0.0);
        if !valid {
            return StabilityOutcome {
                spread: f64::INFINITY,
                slope: f64::NAN,
                stable: false,
            };
        }
        let hi = values.iter().copied().fold(f64::MIN, f64::max);
        let lo = values.iter().copied().fold(f64::MAX, f64::min);
        let spread = hi / lo;
        let lx: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
        let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let slope = stats::theil_sen_slope(&lx, &ly);
        StabilityOutcome {
            spread,
            slope,
            stable: spread <= self.max_spread
                && match trend {
                    Trend::Both => slope.abs() <= self.max_slope,
                    Trend::Up => slope <= self.max_slope,
                    Trend::Down => slope >= -self.max_slope,
                },
        }
    }
}

/// Groups `(scale, value)` by scale and reduces each group with `reduce`.
pub(crate) fn per_scale<F>(pairs: &[(f64, f64)], reduce: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(f64, f64) -> f64,
{
    let mut map: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for &(s, v) in pairs {
        map.entry(s.to_bits())
            .and_modify(|e| e.1 = reduce(e.1, v))
            .or_insert((s, v));
    }
    let mut out: Vec<(f64, f64)> = map.into_values().collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stability_flags_trends() {
        let s = Stability::default();
        let scales = [1.0, 2.0, 4.0, 8.0];
        assert!(s.assess(&scales, &[1.0, 1.1, 0.95, 1.02]).stable);
        let trending: Vec<f64> = scales.iter().map(|x: &f64| x.powf(-0.5)).collect();
        let out = s.assess(&scales, &trending);
        assert!(!out.stable);
        assert!((out.slope + 0.5).abs() < 1e-12);
        assert!(!s.assess(&scales, &[1.0, 0.0, 1.0, 1.0]).stable);
        assert!(s.assess_trend(&scales, &trending, Trend::Up).stable);
        assert!(!s.assess_trend(&scales, &trending, Trend::Down).stable);
    }

    #[test]
    fn grouping() {
        let (s, v) = per_scale(&[(2.0, 1.0), (1.0, 3.0), (2.0, 5.0)], f64::max);
        assert_eq!(s, vec![1.0, 2.0]);
        assert_eq!(v, vec![3.0, 5.0]);
    }

    #[test]
    fn report_json_shape() {
        let mut r = ConditionReport::new(Condition::Vd, Window::radii(1.0, 4.0), "all centers");
        r.insert("C_VD", 3.0);
        r.set_pass(true);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["condition"], "VD");
        assert_eq!(v["pass"], true);
        assert_eq!(v["constants"]["C_VD"], 3.0);
        assert_eq!(v["window"]["r_max"], 4.0);
        assert!(v["samples"].is_array());
    }
}
