//! Offspring-count laws on the nonnegative integers.
//!
//! Three families are supported: a finite probability table, the geometric
//! law `p(l) = q (1-q)^l` and the Poisson law. Each carries its log moment
//! generating function `log sum_l p(l) e^{lambda l}` in closed form (or as an
//! exact finite sum for tables), together with its first two derivatives.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default tail mass below which unbounded laws are cut off when an
/// operation has to enumerate their support.
pub const DEFAULT_TAIL_MASS: f64 = 1e-12;

const SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CountLaw {
    /// `probs[l]` is the probability of exactly `l` children.
    Table {
        probs: Vec<f64>,
    },
    /// `p(l) = q (1-q)^l`; `q = 1/2` gives `p(l) = 2^{-(l+1)}`.
    Geometric {
        q: f64,
    },
    Poisson {
        lambda: f64,
    },
}

/// Value of the log-MGF and its first two derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogMgf {
    pub value: f64,
    /// Mean of the tilted law.
    pub slope: f64,
    /// Variance of the tilted law.
    pub curvature: f64,
}

impl CountLaw {
    pub fn table(probs: Vec<f64>) -> Result<Self> {
        let law = CountLaw::Table { probs };
        law.validate()?;
        Ok(law)
    }

    pub fn geometric(q: f64) -> Result<Self> {
        let law = CountLaw::Geometric { q };
        law.validate()?;
        Ok(law)
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        let law = CountLaw::Poisson { lambda };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CountLaw::Table { probs } => {
                if probs.is_empty() {
                    return Err(Error::validation("count table is empty"));
                }
                if let Some((l, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
                    return Err(Error::validation(format!("count table entry {l} is invalid: {p}")));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > SUM_TOL {
                    return Err(Error::validation(format!("count table sums to {total}, expected 1")));
                }
            }
            CountLaw::Geometric { q } => {
                if !(*q > 0.0 && *q <= 1.0) {
                    return Err(Error::validation(format!("geometric parameter must lie in (0, 1], got {q}")));
                }
            }
            CountLaw::Poisson { lambda } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::validation(format!("poisson rate must be finite and >= 0, got {lambda}")));
                }
            }
        }
        Ok(())
    }

    pub fn pmf(&self, l: usize) -> f64 {
        match self {
            CountLaw::Table { probs } => probs.get(l).copied().unwrap_or(0.0),
            CountLaw::Geometric { q } => {
                if *q == 1.0 {
                    if l == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    q * (1.0 - q).powi(l as i32)
                }
            }
            CountLaw::Poisson { lambda } => {
                if *lambda == 0.0 {
                    return if l == 0 { 1.0 } else { 0.0 };
                }
                let l = l as f64;
                (-lambda + l * lambda.ln() - ln_gamma(l + 1.0)).exp()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CountLaw::Table { probs } => probs.iter().enumerate().map(|(l, p)| l as f64 * p).sum(),
            CountLaw::Geometric { q } => (1.0 - q) / q,
            CountLaw::Poisson { lambda } => *lambda,
        }
    }

    /// Largest count with positive probability, `None` for unbounded support.
    pub fn max_support(&self) -> Option<usize> {
        match self {
            CountLaw::Table { probs } => Some(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)),
            CountLaw::Geometric { q } if *q == 1.0 => Some(0),
            CountLaw::Poisson { lambda } if *lambda == 0.0 => Some(0),
            _ => None,
        }
    }

    /// Supremum of the domain on which the MGF is finite.
    pub fn mgf_boundary(&self) -> f64 {
        match self {
            CountLaw::Geometric { q } if *q < 1.0 => -(1.0 - q).ln(),
            _ => f64::INFINITY,
        }
    }

    /// Smallest `n` with `P{N > n} <= tail_mass`.
    pub fn tail_cutoff(&self, tail_mass: f64) -> usize {
        if let Some(max) = self.max_support() {
            return max;
        }
        let mut cdf = 0.0;
        let mut n = 0;
        loop {
            cdf += self.pmf(n);
            if 1.0 - cdf <= tail_mass || n > 100_000 {
                return n;
            }
            n += 1;
        }
    }

    /// Log-MGF with derivatives at `lambda`.
    pub fn log_mgf(&self, lambda: f64) -> Result<LogMgf> {
        let boundary = self.mgf_boundary();
        if lambda >= boundary || lambda.is_nan() {
            return Err(Error::domain(format!(
                "log-MGF evaluated at {lambda}, outside its finiteness domain (lambda < {boundary})"
            )));
        }
        Ok(match self {
            CountLaw::Table { probs } => {
                let logs: Vec<(f64, f64)> = probs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(l, p)| (l as f64, p.ln() + lambda * l as f64))
                    .collect();
                let top = logs.iter().map(|(_, w)| *w).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for (l, w) in &logs {
                    let e = (w - top).exp();
                    z += e;
                    m1 += l * e;
                    m2 += l * l * e;
                }
                let mean = m1 / z;
                LogMgf { value: top + z.ln(), slope: mean, curvature: (m2 / z - mean * mean).max(0.0) }
            }
            CountLaw::Geometric { q } => {
                if *q == 1.0 {
                    LogMgf { value: 0.0, slope: 0.0, curvature: 0.0 }
                } else {
                    let r = (1.0 - q) * lambda.exp();
                    LogMgf {
                        value: q.ln() - (1.0 - r).ln(),
                        slope: r / (1.0 - r),
                        curvature: r / ((1.0 - r) * (1.0 - r)),
                    }
                }
            }
            CountLaw::Poisson { lambda: rate } => {
                let e = rate * lambda.exp();
                LogMgf { value: e - rate, slope: e, curvature: e }
            }
        })
    }

    /// The exponentially tilted law `p_theta(l) = p(l) e^{theta l} / sum_j p(j) e^{theta j}`.
    pub fn tilt(&self, theta: f64) -> Result<CountLaw> {
        match self {
            CountLaw::Table { probs } => {
                let logs: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(l, p)| if *p > 0.0 { p.ln() + theta * l as f64 } else { f64::NEG_INFINITY })
                    .collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let raw: Vec<f64> = logs.iter().map(|w| (w - top).exp()).collect();
                let z: f64 = raw.iter().sum();
                Ok(CountLaw::Table { probs: raw.into_iter().map(|w| w / z).collect() })
            }
            CountLaw::Geometric { q } => {
                if theta >= self.mgf_boundary() {
                    return Err(Error::domain(format!("tilt {theta} outside the geometric MGF domain")));
                }
                Ok(CountLaw::Geometric { q: 1.0 - (1.0 - q) * theta.exp() })
            }
            CountLaw::Poisson { lambda } => Ok(CountLaw::Poisson { lambda: lambda * theta.exp() }),
        }
    }

    /// Law conditioned on `N <= k`, as a table.
    pub fn truncate(&self, k: usize) -> Result<CountLaw> {
        let mass: Vec<f64> = (0..=k).map(|l| self.pmf(l)).collect();
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::domain(format!("count law has no mass on 0..={k}")));
        }
        Ok(CountLaw::Table { probs: mass.into_iter().map(|p| p / total).collect() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            CountLaw::Table { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (l, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return l;
                    }
                }
                probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
            }
            CountLaw::Geometric { q } => {
                if *q == 1.0 {
                    0
                } else {
                    Geometric::new(*q).expect("validated parameter").sample(rng) as usize
                }
            }
            CountLaw::Poisson { lambda } => {
                if *lambda == 0.0 {
                    0
                } else {
                    Poisson::new(*lambda).expect("validated parameter").sample(rng) as usize
                }
            }
        }
    }

    /// Short textual form: `geometric:0.5`, `poisson:1`, `table:0.25,0.5,0.25`.
    pub fn parse(spec: &str) -> Result<CountLaw> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::validation(format!("count law '{spec}' must look like kind:params")))?;
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::validation(format!("bad number '{s}' in count law '{spec}'")))
        };
        match kind {
            "geometric" => CountLaw::geometric(num(rest)?),
            "poisson" => CountLaw::poisson(num(rest)?),
            "table" => CountLaw::table(rest.split(',').map(num).collect::<Result<Vec<_>>>()?),
            other => Err(Error::validation(format!("unknown count law family '{other}'"))),
        }
    }
}

/// Bisection bracket cap for the critical tilt.
const TILT_CAP: f64 = 700.0;

/// Finds the unique `theta*` for which the tilted law has mean one.
///
/// Requires `0 < p(0) < 1 - p(1)`. The bracket starts at `[-1, 1]` and doubles
/// until the tilted mean straddles 1, never leaving `|theta| <= 700` nor the
/// MGF domain.
pub fn tilt_to_critical(law: &CountLaw) -> Result<(f64, CountLaw)> {
    let p0 = law.pmf(0);
    let p1 = law.pmf(1);
    if !(p0 > 0.0 && p0 < 1.0 - p1) {
        return Err(Error::domain(format!("critical tilt needs 0 < p(0) < 1 - p(1); got p(0) = {p0}, p(1) = {p1}")));
    }
    let mean_at = |theta: f64| law.log_mgf(theta).map(|m| m.slope);
    if (mean_at(0.0)? - 1.0).abs() <= 1e-14 {
        return Ok((0.0, law.clone()));
    }
    let boundary = law.mgf_boundary();
    let mut lo = -1.0_f64;
    while mean_at(lo)? > 1.0 {
        if lo <= -TILT_CAP {
            return Err(Error::domain("tilted mean stays above 1 down to theta = -700"));
        }
        lo = (lo * 2.0).max(-TILT_CAP);
    }
    // upper end: doubles when the MGF is entire, otherwise halves the gap to the boundary
    let mut step = 0;
    let mut hi = upper_probe(boundary, step);
    while mean_at(hi)? < 1.0 {
        step += 1;
        if step > 60 || hi >= TILT_CAP {
            return Err(Error::domain(format!("tilted mean stays below 1 up to theta = {}", boundary.min(TILT_CAP))));
        }
        hi = upper_probe(boundary, step);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean_at(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    Ok((theta, law.tilt(theta)?))
}

fn upper_probe(boundary: f64, step: i32) -> f64 {
    if boundary.is_finite() {
        boundary * (1.0 - 0.5f64.powi(step + 1))
    } else {
        2f64.powi(step).min(TILT_CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_half_is_critical_and_untouched() {
        let p = CountLaw::geometric(0.5).unwrap();
        assert!((p.mean() - 1.0).abs() < 1e-15);
        let (theta, tilted) = tilt_to_critical(&p).unwrap();
        assert_eq!(theta, 0.0);
        assert_eq!(tilted, p);
    }

    #[test]
    fn two_point_law_tilts_to_closed_form() {
        let p = CountLaw::table(vec![0.4, 0.0, 0.6]).unwrap();
        let (theta, tilted) = tilt_to_critical(&p).unwrap();
        // 0.6 e^{2 theta} = 0.4
        let expected = (2.0f64 / 3.0).ln() / 2.0;
        assert!((theta - expected).abs() < 1e-10, "{theta} vs {expected}");
        assert!((theta + 0.202733).abs() < 1e-6);
        assert!((tilted.mean() - 1.0).abs() < 1e-10);
        assert!((tilted.pmf(0) - 0.5).abs() < 1e-10);
        assert!((tilted.pmf(2) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn poisson_one_is_critical() {
        let (theta, _) = tilt_to_critical(&CountLaw::poisson(1.0).unwrap()).unwrap();
        assert_eq!(theta, 0.0);
    }

    #[test]
    fn supercritical_geometric_tilts_down() {
        let p = CountLaw::geometric(0.25).unwrap(); // mean 3
        let (theta, tilted) = tilt_to_critical(&p).unwrap();
        assert!(theta < 0.0);
        assert!((tilted.mean() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn subcritical_geometric_tilts_toward_boundary() {
        let p = CountLaw::geometric(0.8).unwrap(); // mean 1/4
        let (theta, tilted) = tilt_to_critical(&p).unwrap();
        assert!(theta > 0.0 && theta < p.mgf_boundary());
        assert!((tilted.mean() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_laws_are_rejected() {
        assert!(tilt_to_critical(&CountLaw::table(vec![0.0, 0.5, 0.5]).unwrap()).is_err());
        assert!(tilt_to_critical(&CountLaw::table(vec![0.5, 0.5]).unwrap()).is_err());
    }

    #[test]
    fn table_that_cannot_reach_mean_one_reports_boundary() {
        // support {0, 1} with p(1) < 1 is excluded by the precondition; a law with
        // support {0, 2} always reaches mean one, so use a heavy bounded law instead
        let p = CountLaw::table(vec![0.999, 0.0, 0.001]).unwrap();
        let (_, t) = tilt_to_critical(&p).unwrap();
        assert!((t.mean() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn log_mgf_closed_forms() {
        let g = CountLaw::geometric(0.5).unwrap();
        for lam in [-3.0, -0.5, 0.0, 0.3, 0.6] {
            let m = g.log_mgf(lam).unwrap();
            assert!((m.value + (2.0 - f64::exp(lam)).ln()).abs() < 1e-13);
        }
        assert!(g.log_mgf(2f64.ln()).is_err());
        let p = CountLaw::poisson(1.0).unwrap();
        let m = p.log_mgf(0.0).unwrap();
        assert_eq!(m.value, 0.0);
        assert!((m.slope - 1.0).abs() < 1e-15);
        // against a truncated sum
        let lam = 0.7;
        let direct: f64 = (0..80).map(|l| p.pmf(l) * (lam * l as f64).exp()).sum::<f64>().ln();
        assert!((p.log_mgf(lam).unwrap().value - direct).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let laws = [
            CountLaw::geometric(0.5).unwrap(),
            CountLaw::poisson(1.3).unwrap(),
            CountLaw::table(vec![0.2, 0.3, 0.1, 0.4]).unwrap(),
        ];
        let h = 1e-5;
        for law in &laws {
            for lam in [-1.0, -0.2, 0.1] {
                let m = law.log_mgf(lam).unwrap();
                let up = law.log_mgf(lam + h).unwrap();
                let dn = law.log_mgf(lam - h).unwrap();
                assert!(((up.value - dn.value) / (2.0 * h) - m.slope).abs() < 1e-7);
                assert!(((up.slope - dn.slope) / (2.0 * h) - m.curvature).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn truncation_renormalizes() {
        let t = CountLaw::geometric(0.5).unwrap().truncate(1).unwrap();
        assert!((t.pmf(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.pmf(1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn parse_families() {
        assert_eq!(CountLaw::parse("geometric:0.5").unwrap(), CountLaw::Geometric { q: 0.5 });
        assert_eq!(CountLaw::parse("poisson:1").unwrap(), CountLaw::Poisson { lambda: 1.0 });
        assert!(CountLaw::parse("table:0.5,0.6").is_err());
        assert!(CountLaw::parse("zipf:2").is_err());
    }

    #[test]
    fn tilted_family_matches_tilted_table() {
        let g = CountLaw::geometric(0.5).unwrap();
        let t = g.tilt(-0.4).unwrap();
        let z: f64 = (0..200).map(|l| g.pmf(l) * (-0.4 * l as f64).exp()).sum();
        for l in 0..10 {
            assert!((t.pmf(l) - g.pmf(l) * (-0.4 * l as f64).exp() / z).abs() < 1e-14);
        }
    }
}
