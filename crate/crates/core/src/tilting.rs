//! Exponential change of measure for multitype Galton-Watson trees and the
//! importance-sampling estimators built on it.
//!
//! A bounded `g` on `X x X*` defines `U_g(a) = log sum_c e^{g(a,c)} Q{c|a}`,
//! the tilted kernel `Q~{c|a} = Q{c|a} e^{g(a,c) - U_g(a)}` and the tilted
//! root law `mu~(a) ∝ mu(a) e^{U_g(a)}`. For a finite tree
//!
//! `log dP~/dP = U_g(X(root)) - log sum_b mu(b) e^{U_g(b)} + sum_v [g(X(v), C(v)) - U_g(X(v))]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::empirical::{tv_distance, OffspringMeasure, PairMeasure, TreeCounts};
use crate::error::{Error, Result};
use crate::model::{log_partition, Alphabet, OffspringConfig, OffspringKernel};
use crate::par;
use crate::rate::{minimize_rate_ball, BallOptions, RateValue};
use crate::sim::{sample_tree, validate_root_law};
use crate::tree::TypedTree;

/// Clip applied to generated tilts.
pub const TILT_CLIP: f64 = 20.0;
/// Samples per random stream in the estimators.
pub const CHUNK_SIZE: usize = 1024;

/// A bounded function on `X x X*`: finitely many explicit values and a
/// default elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct TiltFunction {
    tables: Vec<BTreeMap<OffspringConfig, f64>>,
    default: f64,
}

impl TiltFunction {
    pub fn new(
        size: usize,
        entries: impl IntoIterator<Item = ((usize, OffspringConfig), f64)>,
        default: f64,
    ) -> Result<Self> {
        if !default.is_finite() {
            return Err(Error::validation("tilt default must be finite"));
        }
        let mut tables = vec![BTreeMap::new(); size];
        for ((a, c), v) in entries {
            if a >= size || c.children().iter().any(|&t| t >= size) {
                return Err(Error::validation(format!("tilt entry for type {a} lies outside the alphabet")));
            }
            if !v.is_finite() {
                return Err(Error::validation("tilt values must be finite"));
            }
            tables[a].insert(c, v);
        }
        Ok(TiltFunction { tables, default })
    }

    pub fn zero(size: usize) -> Self {
        TiltFunction { tables: vec![BTreeMap::new(); size], default: 0.0 }
    }

    pub fn constant(size: usize, value: f64) -> Self {
        TiltFunction { tables: vec![BTreeMap::new(); size], default: value }
    }

    /// `g(a, c) = f(a, c)` on every configuration of `kernel` with at most `k`
    /// children, `default` elsewhere.
    pub fn from_fn(
        kernel: &OffspringKernel,
        k: usize,
        default: f64,
        f: impl Fn(usize, &OffspringConfig) -> f64,
    ) -> Result<Self> {
        let entries: Vec<_> = (0..kernel.size())
            .flat_map(|a| kernel.configs_up_to(a, k).into_iter().map(move |(c, _)| (a, c)))
            .map(|(a, c)| {
                let v = f(a, &c);
                ((a, c), v)
            })
            .collect();
        Self::new(kernel.size(), entries, default)
    }

    pub fn size(&self) -> usize {
        self.tables.len()
    }

    pub fn default_value(&self) -> f64 {
        self.default
    }

    pub fn get(&self, ty: usize, config: &OffspringConfig) -> f64 {
        self.tables[ty].get(config).copied().unwrap_or(self.default)
    }

    /// `sup |g|`.
    pub fn bound(&self) -> f64 {
        self.tables.iter().flat_map(|t| t.values()).fold(self.default.abs(), |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.default == 0.0 && self.tables.iter().all(|t| t.values().all(|&v| v == 0.0))
    }

    pub fn to_json(&self, alphabet: &Alphabet) -> TiltDocument {
        TiltDocument {
            default: self.default,
            entries: self
                .tables
                .iter()
                .enumerate()
                .flat_map(|(a, t)| {
                    t.iter().map(move |(c, &value)| TiltEntry {
                        r#type: alphabet.symbol(a).to_string(),
                        children: c.labels(alphabet).into_iter().map(String::from).collect(),
                        value,
                    })
                })
                .collect(),
        }
    }

    pub fn from_json(doc: &TiltDocument, alphabet: &Alphabet) -> Result<Self> {
        let mut entries = Vec::with_capacity(doc.entries.len());
        for e in &doc.entries {
            let labels: Vec<&str> = e.children.iter().map(String::as_str).collect();
            entries.push(((alphabet.index_of(&e.r#type)?, OffspringConfig::from_labels(alphabet, &labels)?), e.value));
        }
        Self::new(alphabet.len(), entries, doc.default)
    }
}

/// File form of a tilt function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltDocument {
    #[serde(default)]
    pub default: f64,
    #[serde(default)]
    pub entries: Vec<TiltEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltEntry {
    pub r#type: String,
    pub children: Vec<String>,
    pub value: f64,
}

/// `U_g(a) = log sum_c e^{g(a,c)} Q{c|a}` for every type.
pub fn u_g(g: &TiltFunction, kernel: &OffspringKernel) -> Result<Vec<f64>> {
    if g.size() != kernel.size() {
        return Err(Error::validation("tilt and kernel use different alphabets"));
    }
    Ok((0..kernel.size()).map(|a| log_partition(kernel, a, &g.tables[a], g.default)).collect())
}

/// Base model, tilt and everything derived from them.
#[derive(Clone, Debug)]
pub struct TiltedModel {
    pub base: OffspringKernel,
    pub root_law: Vec<f64>,
    pub g: TiltFunction,
    pub u: Vec<f64>,
    /// `log sum_b mu(b) e^{U_g(b)}`.
    pub log_norm: f64,
    pub kernel: OffspringKernel,
    pub tilted_root_law: Vec<f64>,
}

/// Builds `(Q~, mu~)`.
pub fn tilted_model(kernel: &OffspringKernel, root_law: &[f64], g: &TiltFunction) -> Result<TiltedModel> {
    validate_root_law(root_law, kernel.size())?;
    let u = u_g(g, kernel)?;
    let top = u.iter().zip(root_law).filter(|(_, m)| **m > 0.0).map(|(u, _)| *u).fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> =
        root_law.iter().zip(&u).map(|(m, u)| if *m > 0.0 { m * (u - top).exp() } else { 0.0 }).collect();
    let total: f64 = scaled.iter().sum();
    let tilted_root_law = scaled.iter().map(|x| x / total).collect();
    let tilted =
        if g.is_zero() { kernel.clone() } else { OffspringKernel::reweighted(kernel, g.tables.clone(), g.default)? };
    Ok(TiltedModel {
        base: kernel.clone(),
        root_law: root_law.to_vec(),
        g: g.clone(),
        u,
        log_norm: top + total.ln(),
        kernel: tilted,
        tilted_root_law,
    })
}

/// Both algebraic forms of `log dP~/dP` at one tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RnWeight {
    /// `U(root) - log Z + sum_v [g - U(X(v))]`.
    pub product: f64,
    /// `n <g - sum_b m(b, .) U(b), M_X> - log Z`.
    pub empirical: f64,
}

impl TiltedModel {
    pub fn log_rn_weights(&self, tree: &TypedTree) -> RnWeight {
        let product = self.log_rn_weight(tree);
        let counts = TreeCounts::of(tree, self.u.len());
        let n = counts.vertices as f64;
        let nu = counts.offspring_measure();
        let inner: f64 = nu
            .iter()
            .map(|(a, c, w)| w * (self.g.get(a, c) - c.children().iter().map(|&b| self.u[b]).sum::<f64>()))
            .sum();
        RnWeight { product, empirical: n * inner - self.log_norm }
    }

    /// `log dP~/dP` (product form).
    pub fn log_rn_weight(&self, tree: &TypedTree) -> f64 {
        let mut product = self.u[tree.root_type()] - self.log_norm;
        for (v, c) in tree.configs().iter().enumerate() {
            let a = tree.types()[v];
            product += self.g.get(a, c) - self.u[a];
        }
        product
    }
}

pub fn log_rn_weight(tree: &TypedTree, g: &TiltFunction, kernel: &OffspringKernel, root_law: &[f64]) -> Result<f64> {
    Ok(tilted_model(kernel, root_law, g)?.log_rn_weight(tree))
}

/// Events decidable from `(L~_X, M_X)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    True,
    /// `tv(L~_X, center) <= radius`.
    PairBall {
        center: PairMeasure,
        radius: f64,
    },
    /// `tv(M_X, center) <= radius`.
    OffspringBall {
        center: OffspringMeasure,
        radius: f64,
    },
}

impl Event {
    pub fn contains(&self, pair: &PairMeasure, offspring: &OffspringMeasure) -> bool {
        match self {
            Event::True => true,
            Event::PairBall { center, radius } => pair.tv_distance(center) <= *radius,
            Event::OffspringBall { center, radius } => tv_distance(offspring, center) <= *radius,
        }
    }

    fn needs_measures(&self) -> bool {
        !matches!(self, Event::True)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    /// Estimate of `P{event, |T| = n}`.
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Kish effective sample size of the event weights.
    pub ess: f64,
    pub seed: u64,
    /// Samples that landed in the event with the right size.
    pub hits: u64,
    /// False when no sample hit the event.
    pub reliable: bool,
    /// Estimate of `P{|T| = n}` from the same samples.
    pub size_estimate: f64,
    pub size_stderr: f64,
    /// `P{event | |T| = n}` as a ratio of the two estimates.
    pub conditional: f64,
    /// Delta-method standard error of the ratio.
    pub conditional_stderr: f64,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    count: u64,
    hits: u64,
    a: f64,
    aa: f64,
    b: f64,
    bb: f64,
    ab: f64,
}

impl Sums {
    fn merge(mut self, o: Sums) -> Sums {
        self.count += o.count;
        self.hits += o.hits;
        self.a += o.a;
        self.aa += o.aa;
        self.b += o.b;
        self.bb += o.bb;
        self.ab += o.ab;
        self
    }
}

/// Importance-sampling estimate of `P{event(L~_X, M_X), |T| = n}`: trees are
/// drawn from the tilted model, trees of the wrong size score zero, and hits
/// carry the weight `dP/dP~`.
pub fn estimate_prob(
    model: &TiltedModel,
    n: usize,
    event: &Event,
    samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if n == 0 || samples == 0 {
        return Err(Error::domain("estimation needs n >= 1 and at least one sample"));
    }
    let size = model.base.size();
    let partial = par::map_chunks(samples, CHUNK_SIZE, seed, |_, range, rng| {
        let mut s = Sums::default();
        for _ in range {
            s.count += 1;
            let Ok(tree) = sample_tree(&model.kernel, &model.tilted_root_law, rng, n) else { continue };
            if tree.len() != n {
                continue;
            }
            let w = (-model.log_rn_weight(&tree)).exp();
            s.b += w;
            s.bb += w * w;
            let hit = !event.needs_measures() || {
                let counts = TreeCounts::of(&tree, size);
                event.contains(&counts.pair_measure_tilde(), &counts.offspring_measure())
            };
            if hit {
                s.hits += 1;
                s.a += w;
                s.aa += w * w;
                s.ab += w * w;
            }
        }
        s
    });
    let s = partial.into_iter().fold(Sums::default(), Sums::merge);
    let m = s.count as f64;
    let (ea, eb) = (s.a / m, s.b / m);
    let var = |sum: f64, sumsq: f64| {
        let mean = sum / m;
        if m > 1.0 {
            ((sumsq / m - mean * mean).max(0.0) * m / (m - 1.0)) / m
        } else {
            0.0
        }
    };
    let (va, vb) = (var(s.a, s.aa), var(s.b, s.bb));
    let cov = if m > 1.0 { (s.ab / m - ea * eb) / (m - 1.0) } else { 0.0 };
    let ess = if s.aa > 0.0 { s.a * s.a / s.aa } else { 0.0 };
    let (conditional, conditional_stderr) = if eb > 0.0 {
        let r = ea / eb;
        (r, ((va - 2.0 * r * cov + r * r * vb).max(0.0)).sqrt() / eb)
    } else {
        (0.0, 0.0)
    };
    Ok(EstimateReport {
        n,
        estimate: ea,
        stderr: va.sqrt(),
        samples,
        ess,
        seed,
        hits: s.hits,
        reliable: s.hits > 0,
        size_estimate: eb,
        size_stderr: vb.sqrt(),
        conditional,
        conditional_stderr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayPoint {
    pub report: EstimateReport,
    /// `-(1/n) log estimate`; `+inf` (serialized as null) with no hits.
    pub decay: RateValue,
    /// `-(1/n) log` of the conditional estimate.
    pub conditional_decay: RateValue,
}

fn decay(p: f64, n: usize) -> RateValue {
    if p > 0.0 {
        RateValue::new((-p.ln() / n as f64).max(0.0))
    } else {
        RateValue::INFINITE
    }
}

/// Seed used for the `i`-th size in a decay run.
pub fn decay_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `-(1/n) log P{event, |T| = n}` estimated for each `n`.
pub fn estimate_decay_rate(
    model: &TiltedModel,
    event: &Event,
    n_list: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<DecayPoint>> {
    n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let report = estimate_prob(model, n, event, samples, decay_seed(seed, i))?;
            Ok(DecayPoint { decay: decay(report.estimate, n), conditional_decay: decay(report.conditional, n), report })
        })
        .collect()
}

/// Tilt pointing the model at the cheapest offspring measure in the event:
/// `g = log(nu* / nu*_1 (x) Q)` clipped to `[-20, 20]`, where `nu*` minimizes
/// the rate over the ball among measures with at most `k` children;
/// configurations outside the support of `nu*` get `-20`.
pub fn auto_tilt(
    kernel: &OffspringKernel,
    event: &Event,
    k: usize,
    opts: &BallOptions,
) -> Result<(TiltFunction, RateValue)> {
    let Event::OffspringBall { center, radius } = event else {
        return Err(Error::validation("automatic tilts need an offspring-measure ball event"));
    };
    let best = minimize_rate_ball(None, center, *radius, kernel, k, opts)?;
    if !best.value.is_finite() {
        return Err(Error::domain("the event ball contains no measure of finite rate"));
    }
    let nu1 = best.offspring.first_marginal();
    let entries: Vec<_> = best
        .offspring
        .iter()
        .map(|(a, c, w)| {
            let g = (w / (nu1[a] * kernel.prob(a, c))).ln();
            ((a, c.clone()), g.clamp(-TILT_CLIP, TILT_CLIP))
        })
        .collect();
    Ok((TiltFunction::new(kernel.size(), entries, -TILT_CLIP)?, best.value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::CountLaw;
    use crate::model::{factored_kernel, Alphabet};
    use crate::sim::enumerate;

    fn binary() -> OffspringKernel {
        OffspringKernel::explicit(
            Alphabet::letters(1),
            vec![vec![(OffspringConfig::empty(), 0.5), (OffspringConfig::uniform(0, 2), 0.5)]],
        )
        .unwrap()
    }

    #[test]
    fn u_g_examples() {
        let k = binary();
        assert_eq!(u_g(&TiltFunction::zero(1), &k).unwrap(), vec![0.0]);
        assert!((u_g(&TiltFunction::constant(1, 0.7), &k).unwrap()[0] - 0.7).abs() < 1e-15);
        let g = TiltFunction::new(1, [((0, OffspringConfig::empty()), 2f64.ln())], 0.0).unwrap();
        assert!((u_g(&g, &k).unwrap()[0] - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn size_tilt_reproduces_tilted_count_law() {
        let law = CountLaw::table(vec![0.4, 0.0, 0.6]).unwrap();
        let k = factored_kernel(law.clone(), vec![vec![1.0]], Alphabet::letters(1)).unwrap();
        let theta = 0.5f64.ln();
        let g = TiltFunction::from_fn(&k, 2, 0.0, |_, c| theta * c.count() as f64).unwrap();
        let m = tilted_model(&k, &[1.0], &g).unwrap();
        let want = law.tilt(theta).unwrap();
        for l in 0..=2 {
            assert!((m.kernel.prob(0, &OffspringConfig::uniform(0, l)) - want.pmf(l)).abs() < 1e-15);
        }
    }

    #[test]
    fn change_of_measure_is_exact_on_enumerated_trees() {
        let k = factored_kernel(
            CountLaw::table(vec![0.3, 0.4, 0.3]).unwrap(),
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            Alphabet::letters(2),
        )
        .unwrap();
        let mu = [0.4, 0.6];
        let g = TiltFunction::from_fn(&k, 2, 0.0, |a, c| {
            0.3 * c.count() as f64 - 0.2 * a as f64 + 0.1 * c.multiplicity(1) as f64
        })
        .unwrap();
        let m = tilted_model(&k, &mu, &g).unwrap();
        for n in 1..=4 {
            for (t, p) in enumerate(&k, &mu, n, 100_000).unwrap() {
                let w = m.log_rn_weights(&t);
                assert!((w.product - w.empirical).abs() < 1e-9);
                let pt = crate::sim::tree_probability(&m.kernel, &m.tilted_root_law, &t);
                let back = pt * (-w.product).exp();
                assert!((back - p).abs() <= 1e-12 * p, "{back} vs {p}");
            }
        }
    }

    #[test]
    fn zero_tilt_has_zero_weight() {
        let k = binary();
        let m = tilted_model(&k, &[1.0], &TiltFunction::zero(1)).unwrap();
        let t = TypedTree::from_preorder(vec![0, 0, 0], vec![2, 0, 0]).unwrap();
        assert_eq!(m.log_rn_weight(&t), 0.0);
        assert_eq!(m.kernel.tv_distance(&k, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn single_vertex_weight() {
        let k = binary();
        let g = TiltFunction::new(1, [((0, OffspringConfig::empty()), 2f64.ln())], 0.0).unwrap();
        let m = tilted_model(&k, &[1.0], &g).unwrap();
        let w = m.log_rn_weight(&TypedTree::single(0));
        // g(a, empty) - log Z with Z = e^{U(a)}
        assert!((w - (2f64.ln() - 1.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn size_probability_estimate() {
        let k = factored_kernel(CountLaw::geometric(0.5).unwrap(), vec![vec![1.0]], Alphabet::letters(1)).unwrap();
        let m = tilted_model(&k, &[1.0], &TiltFunction::zero(1)).unwrap();
        let r = estimate_prob(&m, 3, &Event::True, 50_000, 3).unwrap();
        // two shapes of probability 1/32 each
        assert!((r.estimate - 1.0 / 16.0).abs() < 4.0 * r.stderr, "{r:?}");
        assert!(r.ess <= r.samples as f64);
        assert!((r.conditional - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilt_json_round_trip() {
        let al = Alphabet::letters(2);
        let g = TiltFunction::new(2, [((1, OffspringConfig::new(vec![0, 1])), -0.5)], 0.25).unwrap();
        let doc = g.to_json(&al);
        let text = serde_json::to_string(&doc).unwrap();
        let back: TiltDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(TiltFunction::from_json(&back, &al).unwrap(), g);
    }
}
