//! Types, offspring configurations, offspring kernels and their mean matrices.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::law::CountLaw;

const LAW_SUM_TOL: f64 = 1e-12;
/// Band around 1 inside which a Perron-Frobenius eigenvalue counts as critical.
pub const CRITICALITY_TOL: f64 = 1e-8;
/// Largest number of configurations an expansion may materialize.
const EXPANSION_BUDGET: usize = 2_000_000;

/// Finite, ordered set of type labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::validation("alphabet must contain at least one type"));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains([',', '|', '\n']) {
                return Err(Error::validation(format!("type label '{s}' is empty or contains a separator")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate type label '{s}'")));
            }
        }
        Ok(Alphabet { symbols, index })
    }

    /// Alphabet `a, b, c, ...` of the given size.
    pub fn letters(size: usize) -> Self {
        Alphabet::new((0..size).map(|i| if i < 26 { ((b'a' + i as u8) as char).to_string() } else { format!("t{i}") }))
            .expect("generated labels are distinct")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index.get(label).copied().ok_or_else(|| Error::domain(format!("unknown type label '{label}'")))
    }
}

/// Ordered offspring of one vertex: `(n, a_1, ..., a_n)` with types as
/// alphabet indices. Ordered first by count, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct OffspringConfig {
    children: Vec<usize>,
}

impl Ord for OffspringConfig {
    fn cmp(&self, other: &Self) -> Ordering {
        self.children.len().cmp(&other.children.len()).then_with(|| self.children.cmp(&other.children))
    }
}

impl PartialOrd for OffspringConfig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl OffspringConfig {
    pub fn new(children: Vec<usize>) -> Self {
        OffspringConfig { children }
    }

    /// The configuration `(0, ∅)`.
    pub fn empty() -> Self {
        OffspringConfig::default()
    }

    /// `n` children, all of type `ty`.
    pub fn uniform(ty: usize, n: usize) -> Self {
        OffspringConfig { children: vec![ty; n] }
    }

    pub fn from_labels(alphabet: &Alphabet, labels: &[&str]) -> Result<Self> {
        let children = labels.iter().map(|l| alphabet.index_of(l)).collect::<Result<Vec<_>>>()?;
        Ok(OffspringConfig { children })
    }

    pub fn count(&self) -> usize {
        self.children.len()
    }

    pub fn children(&self) -> &[usize] {
        &self.children
    }

    pub fn multiplicity(&self, ty: usize) -> usize {
        self.children.iter().filter(|&&c| c == ty).count()
    }

    /// The vector `m(., c)` over an alphabet of the given size.
    pub fn multiplicities(&self, size: usize) -> Vec<usize> {
        let mut m = vec![0; size];
        for &c in &self.children {
            m[c] += 1;
        }
        m
    }

    pub fn labels<'a>(&self, alphabet: &'a Alphabet) -> Vec<&'a str> {
        self.children.iter().map(|&c| alphabet.symbol(c)).collect()
    }
}

/// Number of children of type `label` in `config`.
pub fn multiplicity(alphabet: &Alphabet, label: &str, config: &OffspringConfig) -> Result<usize> {
    Ok(config.multiplicity(alphabet.index_of(label)?))
}

#[derive(Clone, Debug)]
pub enum KernelForm {
    /// Finite list of `(configuration, probability)` per parent type, sorted by configuration.
    Explicit { laws: Vec<Vec<(OffspringConfig, f64)>> },
    /// `Q{(n, a_1..a_n) | b} = p(n) * prod_i transition[b][a_i]`.
    Factored { count: CountLaw, transition: Vec<Vec<f64>> },
    /// `Q{c | a} exp(g(a, c) - U(a))` over a base kernel; `g` is given on a finite
    /// set of configurations per type and equals `default` elsewhere.
    Reweighted {
        base: Arc<OffspringKernel>,
        log_weights: Vec<BTreeMap<OffspringConfig, f64>>,
        default: f64,
        log_norm: Vec<f64>,
    },
}

/// Offspring law `Q{. | a}` for every type `a`.
#[derive(Clone, Debug)]
pub struct OffspringKernel {
    alphabet: Alphabet,
    form: KernelForm,
    support_bound: Option<usize>,
    lookup: Vec<BTreeMap<OffspringConfig, f64>>,
}

impl OffspringKernel {
    /// Builds an explicit kernel. Repeated configurations are merged and zero
    /// entries dropped.
    pub fn explicit(alphabet: Alphabet, laws: Vec<Vec<(OffspringConfig, f64)>>) -> Result<Self> {
        let size = alphabet.len();
        if laws.len() != size {
            return Err(Error::validation(format!("kernel has {} laws for {size} types", laws.len())));
        }
        let mut merged = Vec::with_capacity(size);
        let mut bound = 0;
        for (a, law) in laws.into_iter().enumerate() {
            let mut map: BTreeMap<OffspringConfig, f64> = BTreeMap::new();
            for (c, p) in law {
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::validation(format!(
                        "type '{}': probability {p} is not a finite nonnegative number",
                        alphabet.symbol(a)
                    )));
                }
                if let Some(&bad) = c.children().iter().find(|&&t| t >= size) {
                    return Err(Error::validation(format!("configuration refers to unknown type index {bad}")));
                }
                if p > 0.0 {
                    *map.entry(c).or_insert(0.0) += p;
                }
            }
            let total: f64 = map.values().sum();
            if (total - 1.0).abs() > LAW_SUM_TOL {
                return Err(Error::validation(format!(
                    "offspring law of type '{}' sums to {total}, expected 1",
                    alphabet.symbol(a)
                )));
            }
            bound = bound.max(map.keys().map(OffspringConfig::count).max().unwrap_or(0));
            merged.push(map);
        }
        let laws = merged.iter().map(|m| m.iter().map(|(c, p)| (c.clone(), *p)).collect()).collect();
        Ok(OffspringKernel {
            alphabet,
            form: KernelForm::Explicit { laws },
            support_bound: Some(bound),
            lookup: merged,
        })
    }

    /// Count law `p` combined with a row-stochastic type transition matrix.
    pub fn factored(alphabet: Alphabet, count: CountLaw, transition: Vec<Vec<f64>>) -> Result<Self> {
        count.validate()?;
        let size = alphabet.len();
        if transition.len() != size || transition.iter().any(|r| r.len() != size) {
            return Err(Error::validation(format!("transition matrix must be {size}x{size}")));
        }
        for (b, row) in transition.iter().enumerate() {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::validation(format!(
                    "transition row '{}' has a negative or non-finite entry: {row:?}",
                    alphabet.symbol(b)
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > LAW_SUM_TOL {
                return Err(Error::validation(format!(
                    "transition row '{}' sums to {total}, expected 1: {row:?}",
                    alphabet.symbol(b)
                )));
            }
        }
        let support_bound = count.max_support();
        Ok(OffspringKernel {
            alphabet,
            form: KernelForm::Factored { count, transition },
            support_bound,
            lookup: Vec::new(),
        })
    }

    /// Kernel proportional to `Q{c | a} e^{g(a, c)}`. `g` is given explicitly on
    /// `log_weights[a]` and equals `default` on every other configuration.
    pub fn reweighted(
        base: &OffspringKernel,
        log_weights: Vec<BTreeMap<OffspringConfig, f64>>,
        default: f64,
    ) -> Result<Self> {
        let size = base.alphabet.len();
        if log_weights.len() != size {
            return Err(Error::validation("tilt must provide one table per type"));
        }
        let log_norm = (0..size).map(|a| log_partition(base, a, &log_weights[a], default)).collect();
        Ok(OffspringKernel {
            alphabet: base.alphabet.clone(),
            support_bound: base.support_bound,
            form: KernelForm::Reweighted { base: Arc::new(base.clone()), log_weights, default, log_norm },
            lookup: Vec::new(),
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn size(&self) -> usize {
        self.alphabet.len()
    }

    /// Largest offspring count with positive probability (`None` if unbounded).
    pub fn support_bound(&self) -> Option<usize> {
        self.support_bound
    }

    pub fn prob(&self, ty: usize, config: &OffspringConfig) -> f64 {
        match &self.form {
            KernelForm::Explicit { .. } => self.lookup[ty].get(config).copied().unwrap_or(0.0),
            KernelForm::Factored { count, transition } => {
                let row = &transition[ty];
                config.children().iter().fold(count.pmf(config.count()), |acc, &c| acc * row[c])
            }
            KernelForm::Reweighted { base, log_weights, default, log_norm } => {
                let g = log_weights[ty].get(config).copied().unwrap_or(*default);
                base.prob(ty, config) * (g - log_norm[ty]).exp()
            }
        }
    }

    /// Every configuration with at most `max_children` children and positive
    /// probability under type `ty`, in configuration order.
    pub fn configs_up_to(&self, ty: usize, max_children: usize) -> Vec<(OffspringConfig, f64)> {
        match &self.form {
            KernelForm::Explicit { laws } => {
                laws[ty].iter().filter(|(c, _)| c.count() <= max_children).cloned().collect()
            }
            KernelForm::Factored { count, transition } => {
                let top = count.max_support().map_or(max_children, |m| m.min(max_children));
                let row = &transition[ty];
                let mut out = Vec::new();
                let mut layer: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
                for n in 0..=top {
                    let pn = count.pmf(n);
                    if pn > 0.0 {
                        out.extend(layer.iter().map(|(seq, w)| (OffspringConfig::new(seq.clone()), pn * w)));
                    }
                    if n == top {
                        break;
                    }
                    let mut next = Vec::with_capacity(layer.len() * row.len());
                    for (seq, w) in &layer {
                        for (t, &q) in row.iter().enumerate() {
                            if q > 0.0 {
                                let mut s = seq.clone();
                                s.push(t);
                                next.push((s, w * q));
                            }
                        }
                    }
                    layer = next;
                }
                out
            }
            KernelForm::Reweighted { base, log_weights, default, log_norm } => base
                .configs_up_to(ty, max_children)
                .into_iter()
                .map(|(c, p)| {
                    let g = log_weights[ty].get(&c).copied().unwrap_or(*default);
                    let w = p * (g - log_norm[ty]).exp();
                    (c, w)
                })
                .filter(|(_, w)| *w > 0.0)
                .collect(),
        }
    }

    /// `Q{X_k^* | ty}`, the mass on configurations with at most `k` children.
    pub fn mass_up_to(&self, ty: usize, k: usize) -> f64 {
        match &self.form {
            KernelForm::Explicit { laws } => laws[ty].iter().filter(|(c, _)| c.count() <= k).map(|(_, p)| p).sum(),
            KernelForm::Factored { count, .. } => (0..=k).map(|l| count.pmf(l)).sum(),
            KernelForm::Reweighted { base, log_weights, default, log_norm } => {
                let mut mass = base.mass_up_to(ty, k) * default.exp();
                for (c, g) in &log_weights[ty] {
                    if c.count() <= k {
                        mass += base.prob(ty, c) * (g.exp() - default.exp());
                    }
                }
                mass * (-log_norm[ty]).exp()
            }
        }
    }

    pub fn sample_config<R: Rng + ?Sized>(&self, ty: usize, rng: &mut R) -> OffspringConfig {
        match &self.form {
            KernelForm::Explicit { laws } => {
                let law = &laws[ty];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (c, p) in law {
                    acc += p;
                    if u < acc {
                        return c.clone();
                    }
                }
                law.last().map(|(c, _)| c.clone()).unwrap_or_default()
            }
            KernelForm::Factored { count, transition } => {
                let n = count.sample(rng);
                let row = &transition[ty];
                let children = (0..n).map(|_| sample_index(row, rng)).collect();
                OffspringConfig::new(children)
            }
            KernelForm::Reweighted { base, log_weights, log_norm, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut listed_base_mass = 0.0;
                for (c, g) in &log_weights[ty] {
                    let p = base.prob(ty, c);
                    listed_base_mass += p;
                    acc += p * (g - log_norm[ty]).exp();
                    if u < acc {
                        return c.clone();
                    }
                }
                if listed_base_mass >= 1.0 - 1e-15 {
                    // rounding left a sliver past the last listed configuration
                    if let Some((c, _)) = log_weights[ty].iter().rev().find(|(c, _)| base.prob(ty, c) > 0.0) {
                        return c.clone();
                    }
                }
                loop {
                    let c = base.sample_config(ty, rng);
                    if !log_weights[ty].contains_key(&c) {
                        return c;
                    }
                }
            }
        }
    }

    /// Mean matrix `A(a, b) = sum_c Q{c | b} m(a, c)`.
    pub fn mean_matrix(&self) -> Result<MeanMatrix> {
        let s = self.size();
        let mut entries = vec![vec![0.0; s]; s];
        match &self.form {
            KernelForm::Explicit { laws } => {
                for (b, law) in laws.iter().enumerate() {
                    for (c, p) in law {
                        for &a in c.children() {
                            entries[a][b] += p;
                        }
                    }
                }
            }
            KernelForm::Factored { count, transition } => {
                let mean = count.mean();
                if !mean.is_finite() {
                    return Err(Error::domain("offspring-count law has infinite mean"));
                }
                for (b, row) in transition.iter().enumerate() {
                    for (a, q) in row.iter().enumerate() {
                        entries[a][b] = mean * q;
                    }
                }
            }
            KernelForm::Reweighted { base, log_weights, default, log_norm } => {
                let base_mean = base.mean_matrix()?;
                for b in 0..s {
                    let scale = (default - log_norm[b]).exp();
                    for a in 0..s {
                        entries[a][b] = base_mean.get(a, b) * scale;
                    }
                    for (c, g) in &log_weights[b] {
                        let p = base.prob(b, c);
                        let delta = p * ((g - log_norm[b]).exp() - scale);
                        for &a in c.children() {
                            entries[a][b] += delta;
                        }
                    }
                }
            }
        }
        Ok(MeanMatrix { entries })
    }

    /// The conditional kernel `Q_k{c | a} = Q{c | a} / Q{X_k^* | a}` on `X_k^*`.
    pub fn truncate(&self, k: usize) -> Result<OffspringKernel> {
        for a in 0..self.size() {
            if self.mass_up_to(a, k) <= 0.0 {
                return Err(Error::domain(format!(
                    "type '{}' puts no mass on configurations with at most {k} children",
                    self.alphabet.symbol(a)
                )));
            }
        }
        let mut out = match &self.form {
            KernelForm::Factored { count, transition } => {
                OffspringKernel::factored(self.alphabet.clone(), count.truncate(k)?, transition.clone())?
            }
            _ => {
                let laws = (0..self.size())
                    .map(|a| {
                        let kept = self.configs_up_to(a, k);
                        let total: f64 = kept.iter().map(|(_, p)| p).sum();
                        kept.into_iter().map(|(c, p)| (c, p / total)).collect()
                    })
                    .collect();
                OffspringKernel::explicit(self.alphabet.clone(), laws)?
            }
        };
        out.support_bound = Some(k);
        Ok(out)
    }

    /// Explicit kernel listing every configuration up to the count where the
    /// remaining tail mass is at most `tail_mass`, renormalized.
    pub fn expand(&self, tail_mass: f64) -> Result<OffspringKernel> {
        let cutoff = match (&self.form, self.support_bound) {
            (KernelForm::Explicit { .. }, _) => return Ok(self.clone()),
            (_, Some(k)) => k,
            (KernelForm::Factored { count, .. }, None) => count.tail_cutoff(tail_mass),
            (KernelForm::Reweighted { .. }, None) => {
                let mut n = 0;
                while (0..self.size()).any(|a| 1.0 - self.mass_up_to(a, n) > tail_mass) && n < 10_000 {
                    n += 1;
                }
                n
            }
        };
        let size = self.size() as f64;
        if size.powi(cutoff as i32) > EXPANSION_BUDGET as f64 {
            return Err(Error::Resource(format!(
                "expanding to {cutoff} children over {size} types exceeds {EXPANSION_BUDGET} configurations"
            )));
        }
        let laws = (0..self.size())
            .map(|a| {
                let kept = self.configs_up_to(a, cutoff);
                let total: f64 = kept.iter().map(|(_, p)| p).sum();
                kept.into_iter().map(|(c, p)| (c, p / total)).collect()
            })
            .collect();
        OffspringKernel::explicit(self.alphabet.clone(), laws)
    }

    /// Largest per-type total variation distance to `other`, summing over
    /// configurations up to the tail cutoff of both kernels; leftover tail mass
    /// is added as a bound.
    pub fn tv_distance(&self, other: &OffspringKernel, tail_mass: f64) -> Result<f64> {
        if self.alphabet != other.alphabet {
            return Err(Error::domain("kernels are defined on different alphabets"));
        }
        let cutoff_of = |k: &OffspringKernel| -> usize {
            match (&k.form, k.support_bound) {
                (_, Some(b)) => b,
                (KernelForm::Factored { count, .. }, None) => count.tail_cutoff(tail_mass),
                _ => {
                    let mut n = 0;
                    while (0..k.size()).any(|a| 1.0 - k.mass_up_to(a, n) > tail_mass) && n < 10_000 {
                        n += 1;
                    }
                    n
                }
            }
        };
        let cutoff = cutoff_of(self).max(cutoff_of(other));
        let mut worst: f64 = 0.0;
        for a in 0..self.size() {
            let mut diff: BTreeMap<OffspringConfig, f64> = BTreeMap::new();
            let mine = self.configs_up_to(a, cutoff);
            let theirs = other.configs_up_to(a, cutoff);
            let seen_mine: f64 = mine.iter().map(|(_, p)| p).sum();
            let seen_theirs: f64 = theirs.iter().map(|(_, p)| p).sum();
            for (c, p) in mine {
                *diff.entry(c).or_insert(0.0) += p;
            }
            for (c, p) in theirs {
                *diff.entry(c).or_insert(0.0) -= p;
            }
            let body: f64 = diff.values().map(|d| d.abs()).sum();
            let tail = (1.0 - seen_mine).max(0.0) + (1.0 - seen_theirs).max(0.0);
            worst = worst.max(0.5 * (body + tail));
        }
        Ok(worst)
    }
}

/// `U(a) = log sum_c e^{g(a, c)} Q{c | a}` for a tilt that is explicit on a
/// finite table and constant elsewhere.
pub(crate) fn log_partition(
    base: &OffspringKernel,
    ty: usize,
    table: &BTreeMap<OffspringConfig, f64>,
    default: f64,
) -> f64 {
    let mut listed = 0.0;
    let mut listed_base = 0.0;
    let top = table.values().copied().fold(default, f64::max);
    for (c, g) in table {
        let p = base.prob(ty, c);
        listed += p * (g - top).exp();
        listed_base += p;
    }
    let rest = (1.0 - listed_base).max(0.0) * (default - top).exp();
    top + (listed + rest).ln()
}

/// Factored kernel: `Q{(n, a_1..a_n) | b} = p(n) prod_i transition[b][a_i]`.
pub fn factored_kernel(count: CountLaw, transition: Vec<Vec<f64>>, alphabet: Alphabet) -> Result<OffspringKernel> {
    OffspringKernel::factored(alphabet, count, transition)
}

/// Conditional kernel on configurations with at most `k` children.
pub fn truncate_kernel(kernel: &OffspringKernel, k: usize) -> Result<OffspringKernel> {
    kernel.truncate(k)
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Expected offspring counts; `get(a, b)` is the mean number of type-`a`
/// children of a type-`b` parent.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanMatrix {
    entries: Vec<Vec<f64>>,
}

impl MeanMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|r| r.len() != n) {
            return Err(Error::validation("mean matrix must be square and nonempty"));
        }
        if entries.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::validation("mean matrix entries must be finite and nonnegative"));
        }
        Ok(MeanMatrix { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a][b]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// `reach[b][a]` is true when `A^*(a, b) > 0`: some path of positive length
    /// leads from parent type `b` to descendant type `a` in the support graph.
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.dim();
        let mut reach: Vec<Vec<bool>> = (0..n).map(|b| (0..n).map(|a| self.entries[a][b] > 0.0).collect()).collect();
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        reach
    }
}

impl fmt::Display for MeanMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.entries {
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            writeln!(f, "[{}]", cells.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrreducibilityReport {
    pub recurrent: Vec<usize>,
    pub transient: Vec<usize>,
    pub weakly_irreducible: bool,
    /// Perron-Frobenius eigenvalue of the recurrent block.
    pub pf_eigenvalue: Option<f64>,
    /// Left and right eigenvectors on the recurrent types (same order as
    /// `recurrent`), each normalized to sum 1.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl IrreducibilityReport {
    pub fn is_critical(&self) -> bool {
        self.weakly_irreducible && self.pf_eigenvalue.is_some_and(|r| (r - 1.0).abs() <= CRITICALITY_TOL)
    }
}

const PF_REL_TOL: f64 = 1e-12;
const PF_MAX_ITER: usize = 1_000_000;

/// Splits types into recurrent and transient classes by reachability and
/// computes the Perron-Frobenius eigenvalue of the recurrent block.
pub fn classify(a: &MeanMatrix) -> IrreducibilityReport {
    let n = a.dim();
    let reach = a.reachability();
    let recurrent: Vec<usize> = (0..n).filter(|&b| (0..n).all(|x| reach[b][x])).collect();
    let transient: Vec<usize> = (0..n).filter(|b| !recurrent.contains(b)).collect();
    let valid =
        !recurrent.is_empty() && transient.iter().all(|&b| !reach[b][b] && recurrent.iter().all(|&r| !reach[b][r]));
    if !valid {
        return IrreducibilityReport {
            recurrent: Vec::new(),
            transient: (0..n).collect(),
            weakly_irreducible: false,
            pf_eigenvalue: None,
            left: Vec::new(),
            right: Vec::new(),
        };
    }
    let block: Vec<Vec<f64>> = recurrent.iter().map(|&i| recurrent.iter().map(|&j| a.get(i, j)).collect()).collect();
    let (rho, right) = perron_frobenius(&block);
    let transposed: Vec<Vec<f64>> = (0..block.len()).map(|i| (0..block.len()).map(|j| block[j][i]).collect()).collect();
    let (_, left) = perron_frobenius(&transposed);
    IrreducibilityReport { recurrent, transient, weakly_irreducible: true, pf_eigenvalue: Some(rho), left, right }
}

/// Power iteration on `M + I` (primitive even when `M` is periodic), stopped
/// by the Collatz-Wielandt bracket. Returns the eigenvalue of `M` and the
/// eigenvector normalized to sum 1.
fn perron_frobenius(m: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n = m.len();
    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = 0.0;
    for _ in 0..PF_MAX_ITER {
        let y: Vec<f64> = (0..n).map(|i| x[i] + (0..n).map(|j| m[i][j] * x[j]).sum::<f64>()).collect();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        estimate = 0.5 * (lo + hi) - 1.0;
        let total: f64 = y.iter().sum();
        x = y.into_iter().map(|v| v / total).collect();
        if hi - lo <= PF_REL_TOL * estimate.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    (estimate, x)
}

/// Largest number of transient-type children in any configuration the kernel
/// can produce; `None` when that number is unbounded.
pub fn transient_offspring_bound(kernel: &OffspringKernel, report: &IrreducibilityReport) -> Option<usize> {
    let transient = &report.transient;
    match kernel.form() {
        KernelForm::Factored { count, transition } => {
            let reaches_transient = transition.iter().any(|row| transient.iter().any(|&t| row[t] > 0.0));
            if !reaches_transient {
                Some(0)
            } else {
                count.max_support()
            }
        }
        _ => {
            let bound = kernel.support_bound()?;
            (0..kernel.size())
                .flat_map(|a| kernel.configs_up_to(a, bound))
                .map(|(c, _)| transient.iter().map(|&t| c.multiplicity(t)).sum::<usize>())
                .max()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Alphabet {
        Alphabet::letters(2)
    }

    #[test]
    fn multiplicity_counts_labels() {
        let al = ab();
        let c = OffspringConfig::from_labels(&al, &["a", "b"]).unwrap();
        assert_eq!(multiplicity(&al, "a", &c).unwrap(), 1);
        assert_eq!(multiplicity(&al, "a", &OffspringConfig::empty()).unwrap(), 0);
        let c = OffspringConfig::from_labels(&al, &["b", "b", "a"]).unwrap();
        assert_eq!(multiplicity(&al, "b", &c).unwrap(), 2);
        assert!(matches!(multiplicity(&al, "z", &c), Err(Error::Domain(_))));
    }

    #[test]
    fn alphabet_rejects_duplicates() {
        assert!(Alphabet::new(["a", "a"]).is_err());
        assert!(Alphabet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn mean_matrix_factored_identity() {
        let k = factored_kernel(CountLaw::geometric(0.5).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]], ab()).unwrap();
        let a = k.mean_matrix().unwrap();
        assert_eq!(a.rows(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn mean_matrix_explicit_binary() {
        let al = Alphabet::letters(1);
        let k = OffspringKernel::explicit(
            al,
            vec![vec![(OffspringConfig::empty(), 0.5), (OffspringConfig::uniform(0, 2), 0.5)]],
        )
        .unwrap();
        assert_eq!(k.mean_matrix().unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn mean_matrix_two_point_factored_matches_expansion() {
        let al = Alphabet::letters(1);
        let k = factored_kernel(CountLaw::table(vec![0.4, 0.0, 0.6]).unwrap(), vec![vec![1.0]], al).unwrap();
        let a = k.mean_matrix().unwrap();
        assert!((a.get(0, 0) - 1.2).abs() < 1e-15);
        let e = k.expand(1e-12).unwrap();
        assert!((e.mean_matrix().unwrap().get(0, 0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn factored_mean_matches_expanded_kernel() {
        let k = factored_kernel(CountLaw::poisson(1.0).unwrap(), vec![vec![0.9, 0.1], vec![0.2, 0.8]], ab()).unwrap();
        let a = k.mean_matrix().unwrap();
        let e = k.expand(1e-12).unwrap().mean_matrix().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.get(i, j) - e.get(i, j)).abs() < 1e-10, "{i}{j}");
            }
        }
    }

    #[test]
    fn classify_examples() {
        let r = classify(&MeanMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
        assert_eq!(r.recurrent, vec![0, 1]);
        assert!((r.pf_eigenvalue.unwrap() - 1.0).abs() < 1e-12);

        // eigenvalues are +1 and -1
        let r = classify(&MeanMatrix::new(vec![vec![0.0, 2.0], vec![0.5, 0.0]]).unwrap());
        assert_eq!(r.recurrent, vec![0, 1]);
        assert!((r.pf_eigenvalue.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.is_critical());

        let r = classify(&MeanMatrix::new(vec![vec![1.0]]).unwrap());
        assert_eq!(r.recurrent, vec![0]);
        assert_eq!(r.pf_eigenvalue, Some(1.0));
    }

    #[test]
    fn classify_with_transient_type() {
        // a produces a and b; b is a dead end
        let r = classify(&MeanMatrix::new(vec![vec![0.8, 0.0], vec![0.3, 0.0]]).unwrap());
        assert!(r.weakly_irreducible);
        assert_eq!(r.recurrent, vec![0]);
        assert_eq!(r.transient, vec![1]);
        assert!((r.pf_eigenvalue.unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn classify_rejects_reducible_cycles() {
        // two closed classes
        let r = classify(&MeanMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        assert!(!r.weakly_irreducible);
        assert!(r.recurrent.is_empty());
    }

    #[test]
    fn classify_depends_on_support_only() {
        let a = MeanMatrix::new(vec![vec![0.2, 0.0, 0.0], vec![0.7, 0.4, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let b = MeanMatrix::new(vec![vec![5.0, 0.0, 0.0], vec![0.01, 3.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let (ra, rb) = (classify(&a), classify(&b));
        assert_eq!((ra.recurrent, ra.transient), (rb.recurrent, rb.transient));
    }

    #[test]
    fn critical_tilt_gives_unit_eigenvalue() {
        let (_, p) = crate::law::tilt_to_critical(&CountLaw::table(vec![0.4, 0.0, 0.6]).unwrap()).unwrap();
        let k = factored_kernel(p, vec![vec![1.0]], Alphabet::letters(1)).unwrap();
        let r = classify(&k.mean_matrix().unwrap());
        assert!((r.pf_eigenvalue.unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truncation_of_geometric() {
        let k = factored_kernel(CountLaw::geometric(0.5).unwrap(), vec![vec![1.0]], Alphabet::letters(1)).unwrap();
        let t = truncate_kernel(&k, 1).unwrap();
        assert!((t.prob(0, &OffspringConfig::empty()) - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.prob(0, &OffspringConfig::uniform(0, 1)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.support_bound(), Some(1));

        let z = truncate_kernel(&k, 0).unwrap();
        assert_eq!(z.prob(0, &OffspringConfig::empty()), 1.0);
    }

    #[test]
    fn truncation_keeps_already_bounded_kernel() {
        let al = ab();
        let k = OffspringKernel::explicit(
            al,
            vec![
                vec![(OffspringConfig::empty(), 0.5), (OffspringConfig::new(vec![0, 1]), 0.5)],
                vec![(OffspringConfig::empty(), 1.0)],
            ],
        )
        .unwrap();
        let t = truncate_kernel(&k, 2).unwrap();
        assert!(k.tv_distance(&t, 1e-12).unwrap() <= 1e-10);
    }

    #[test]
    fn truncation_rejects_empty_types() {
        let al = Alphabet::letters(1);
        let k = OffspringKernel::explicit(al, vec![vec![(OffspringConfig::uniform(0, 2), 1.0)]]).unwrap();
        let err = truncate_kernel(&k, 1).unwrap_err();
        assert!(err.to_string().contains("'a'"));
    }

    #[test]
    fn truncation_converges_monotonically() {
        let k = factored_kernel(CountLaw::geometric(0.5).unwrap(), vec![vec![1.0]], Alphabet::letters(1)).unwrap();
        let d: Vec<f64> = [4, 8, 16].iter().map(|&m| k.tv_distance(&k.truncate(m).unwrap(), 1e-12).unwrap()).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
        // P{N > k} = 2^{-(k+1)}
        assert!((d[0] - 0.5f64.powi(5)).abs() < 1e-11);
    }

    #[test]
    fn factored_probabilities() {
        let al = Alphabet::letters(1);
        let k = factored_kernel(CountLaw::table(vec![0.0, 1.0]).unwrap(), vec![vec![1.0]], al).unwrap();
        assert_eq!(k.prob(0, &OffspringConfig::uniform(0, 1)), 1.0);

        let k = factored_kernel(CountLaw::geometric(0.5).unwrap(), vec![vec![0.9, 0.1], vec![0.2, 0.8]], ab()).unwrap();
        let p = k.prob(0, &OffspringConfig::new(vec![0, 1]));
        assert!((p - 0.125 * 0.9 * 0.1).abs() < 1e-16);
        for b in 0..2 {
            assert_eq!(k.prob(b, &OffspringConfig::empty()), 0.5);
        }
    }

    #[test]
    fn invalid_rows_are_named() {
        let err =
            factored_kernel(CountLaw::geometric(0.5).unwrap(), vec![vec![0.5, 0.6], vec![0.5, 0.5]], ab()).unwrap_err();
        assert!(err.to_string().contains("'a'"), "{err}");
    }

    #[test]
    fn reweighted_kernel_is_normalized_and_mean_is_exact() {
        let k = factored_kernel(CountLaw::poisson(1.0).unwrap(), vec![vec![0.9, 0.1], vec![0.2, 0.8]], ab()).unwrap();
        let mut w = vec![BTreeMap::new(), BTreeMap::new()];
        w[0].insert(OffspringConfig::empty(), 0.7);
        w[0].insert(OffspringConfig::new(vec![0, 1]), -0.4);
        w[1].insert(OffspringConfig::uniform(1, 3), 1.1);
        let t = OffspringKernel::reweighted(&k, w, 0.2).unwrap();
        let e = t.expand(1e-13).unwrap();
        let (mt, me) = (t.mean_matrix().unwrap(), e.mean_matrix().unwrap());
        for a in 0..2 {
            let total: f64 = t.configs_up_to(a, 17).iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-11);
            for b in 0..2 {
                assert!((mt.get(a, b) - me.get(a, b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transient_bound_reported() {
        let al = ab();
        let k = OffspringKernel::explicit(
            al,
            vec![
                vec![(OffspringConfig::empty(), 0.5), (OffspringConfig::new(vec![0, 1, 1]), 0.5)],
                vec![(OffspringConfig::empty(), 1.0)],
            ],
        )
        .unwrap();
        let r = classify(&k.mean_matrix().unwrap());
        assert_eq!(r.transient, vec![1]);
        assert_eq!(transient_offspring_bound(&k, &r), Some(2));
    }
}
