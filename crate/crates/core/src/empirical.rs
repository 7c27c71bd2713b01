//! Empirical pair and offspring measures of typed trees.
//!
//! For a tree with `n` vertices, `M_X(a, c)` is the fraction of vertices of
//! type `a` whose offspring configuration is `c`, and `L~_X(a, b)` is the
//! number of edges from a type-`a` parent to a type-`b` child divided by `n`.
//! `L_X` divides by the number of edges instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Alphabet, OffspringConfig};
use crate::tree::TypedTree;

pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-10;
const MASS_TOL: f64 = 1e-12;

/// A probability measure on `X x X*` with finitely many atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct OffspringMeasure {
    size: usize,
    atoms: BTreeMap<(usize, OffspringConfig), f64>,
}

impl OffspringMeasure {
    /// Validates nonnegativity, types and total mass 1.
    pub fn new(size: usize, atoms: impl IntoIterator<Item = ((usize, OffspringConfig), f64)>) -> Result<Self> {
        let m = Self::from_atoms(size, atoms)?;
        let mass = m.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::validation(format!("offspring measure has mass {mass}, expected 1")));
        }
        Ok(m)
    }

    /// Like [`new`](Self::new) without the mass check, for sub-probability
    /// measures and intermediate arithmetic.
    pub fn from_atoms(size: usize, atoms: impl IntoIterator<Item = ((usize, OffspringConfig), f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((a, c), w) in atoms {
            if a >= size || c.children().iter().any(|&t| t >= size) {
                return Err(Error::validation(format!("atom ({a}, {:?}) uses a type outside 0..{size}", c.children())));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::validation(format!("atom weight {w} is not a finite nonnegative number")));
            }
            if w > 0.0 {
                *map.entry((a, c)).or_insert(0.0) += w;
            }
        }
        Ok(OffspringMeasure { size, atoms: map })
    }

    pub(crate) fn from_map_unchecked(size: usize, atoms: BTreeMap<(usize, OffspringConfig), f64>) -> Self {
        OffspringMeasure { size, atoms }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn atoms(&self) -> &BTreeMap<(usize, OffspringConfig), f64> {
        &self.atoms
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &OffspringConfig, f64)> + '_ {
        self.atoms.iter().map(|((a, c), &w)| (*a, c, w))
    }

    pub fn get(&self, ty: usize, config: &OffspringConfig) -> f64 {
        // BTreeMap lookup needs an owned key
        self.atoms.get(&(ty, config.clone())).copied().unwrap_or(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.atoms.values().sum()
    }

    /// `int n d nu`.
    pub fn first_moment(&self) -> f64 {
        self.iter().map(|(_, c, w)| c.count() as f64 * w).sum()
    }

    pub fn max_count(&self) -> usize {
        self.atoms.keys().map(|(_, c)| c.count()).max().unwrap_or(0)
    }

    /// `nu_1(a) = sum_c nu(a, c)`.
    pub fn first_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (a, _, w) in self.iter() {
            out[a] += w;
        }
        out
    }

    /// `<m>nu(a, b) = sum_c m(b, c) nu(a, c)`, the expected number of type-`b`
    /// children of type-`a` vertices.
    pub fn mean_children(&self) -> PairMeasure {
        let mut out = PairMeasure::zero(self.size);
        for (a, c, w) in self.iter() {
            for &b in c.children() {
                out.weights[a * self.size + b] += w;
            }
        }
        out
    }

    /// `<m>nu(b) = sum_(a,c) m(b, c) nu(a, c)`.
    pub fn child_type_mass(&self) -> Vec<f64> {
        self.mean_children().second_marginal()
    }

    pub fn to_csv(&self, alphabet: &Alphabet) -> String {
        let mut out = String::from("type,count,children,weight\n");
        for (a, c, w) in self.iter() {
            let _ = writeln!(out, "{},{},{},{}", alphabet.symbol(a), c.count(), c.labels(alphabet).join("|"), w);
        }
        out
    }

    pub fn from_csv(text: &str, alphabet: &Alphabet) -> Result<Self> {
        let mut atoms = Vec::new();
        for (line_no, line) in data_lines(text, "type,count,children,weight") {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::validation(format!("line {line_no}: expected 4 fields")));
            }
            let a = alphabet.index_of(fields[0])?;
            let count: usize =
                fields[1].parse().map_err(|_| Error::validation(format!("line {line_no}: bad count")))?;
            let labels: Vec<&str> = if fields[2].is_empty() { Vec::new() } else { fields[2].split('|').collect() };
            if labels.len() != count {
                return Err(Error::validation(format!("line {line_no}: count {count} but {} children", labels.len())));
            }
            let c = OffspringConfig::from_labels(alphabet, &labels)?;
            let w: f64 = fields[3].parse().map_err(|_| Error::validation(format!("line {line_no}: bad weight")))?;
            atoms.push(((a, c), w));
        }
        Self::new(alphabet.len(), atoms)
    }
}

/// A finite measure on `X x X`, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMeasure {
    size: usize,
    weights: Vec<f64>,
}

impl PairMeasure {
    pub fn zero(size: usize) -> Self {
        PairMeasure { size, weights: vec![0.0; size * size] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 || rows.iter().any(|r| r.len() != size) {
            return Err(Error::validation("pair measure must be a nonempty square array"));
        }
        let weights: Vec<f64> = rows.into_iter().flatten().collect();
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::validation("pair measure entries must be finite and nonnegative"));
        }
        Ok(PairMeasure { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.size + b]
    }

    pub fn set(&mut self, a: usize, b: usize, w: f64) {
        self.weights[a * self.size + b] = w;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.size).map(<[f64]>::to_vec).collect()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> PairMeasure {
        PairMeasure { size: self.size, weights: self.weights.iter().map(|w| w * factor).collect() }
    }

    /// `varpi_1(a) = sum_b varpi(a, b)`.
    pub fn first_marginal(&self) -> Vec<f64> {
        self.weights.chunks(self.size).map(|r| r.iter().sum()).collect()
    }

    /// `varpi_2(b) = sum_a varpi(a, b)`.
    pub fn second_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (i, w) in self.weights.iter().enumerate() {
            out[i % self.size] += w;
        }
        out
    }

    /// Half the L1 distance.
    pub fn tv_distance(&self, other: &PairMeasure) -> f64 {
        0.5 * self.weights.iter().zip(&other.weights).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &PairMeasure) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self, alphabet: &Alphabet) -> String {
        let mut out = String::from("from,to,weight\n");
        for a in 0..self.size {
            for b in 0..self.size {
                let _ = writeln!(out, "{},{},{}", alphabet.symbol(a), alphabet.symbol(b), self.get(a, b));
            }
        }
        out
    }

    /// Pairs not listed are zero.
    pub fn from_csv(text: &str, alphabet: &Alphabet) -> Result<Self> {
        let mut m = PairMeasure::zero(alphabet.len());
        for (line_no, line) in data_lines(text, "from,to,weight") {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::validation(format!("line {line_no}: expected 3 fields")));
            }
            let (a, b) = (alphabet.index_of(fields[0])?, alphabet.index_of(fields[1])?);
            let w: f64 = fields[2].parse().map_err(|_| Error::validation(format!("line {line_no}: bad weight")))?;
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::validation(format!("line {line_no}: weight must be finite and nonnegative")));
            }
            m.weights[a * m.size + b] += w;
        }
        Ok(m)
    }
}

fn data_lines<'a>(text: &'a str, header: &'a str) -> impl Iterator<Item = (usize, &'a str)> + 'a {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(move |(_, l)| !l.trim().is_empty() && *l != header)
}

/// Integer vertex and edge counts of one tree. Measures are these counts
/// divided by `n` (or by `n - 1` for `L_X`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeCounts {
    pub size: usize,
    pub vertices: usize,
    pub offspring: BTreeMap<(usize, OffspringConfig), u64>,
    /// `edges[a][b]`: edges from a type-`a` parent to a type-`b` child.
    pub edges: Vec<Vec<u64>>,
}

impl TreeCounts {
    pub fn of(tree: &TypedTree, size: usize) -> Self {
        let mut offspring = BTreeMap::new();
        let mut edges = vec![vec![0u64; size]; size];
        for (v, c) in tree.configs().into_iter().enumerate() {
            let a = tree.types()[v];
            for &b in c.children() {
                edges[a][b] += 1;
            }
            *offspring.entry((a, c)).or_insert(0) += 1;
        }
        TreeCounts { size, vertices: tree.len(), offspring, edges }
    }

    pub fn edge_total(&self) -> u64 {
        self.edges.iter().flatten().sum()
    }

    /// `edges(a, b) == sum_c m(b, c) #(a, c)` in exact integer arithmetic.
    pub fn is_consistent(&self) -> bool {
        let mut implied = vec![vec![0u64; self.size]; self.size];
        for ((a, c), k) in &self.offspring {
            for &b in c.children() {
                implied[*a][b] += k;
            }
        }
        implied == self.edges
    }

    pub fn offspring_measure(&self) -> OffspringMeasure {
        let n = self.vertices as f64;
        OffspringMeasure::from_map_unchecked(
            self.size,
            self.offspring.iter().map(|(key, &k)| (key.clone(), k as f64 / n)).collect(),
        )
    }

    pub fn pair_measure_tilde(&self) -> PairMeasure {
        self.pair_normalized(self.vertices as f64)
    }

    pub fn pair_measure(&self) -> Result<PairMeasure> {
        if self.vertices < 2 {
            return Err(Error::domain("a single-vertex tree has no edges to normalize by"));
        }
        Ok(self.pair_normalized((self.vertices - 1) as f64))
    }

    fn pair_normalized(&self, by: f64) -> PairMeasure {
        PairMeasure { size: self.size, weights: self.edges.iter().flatten().map(|&k| k as f64 / by).collect() }
    }
}

pub fn offspring_measure(tree: &TypedTree, size: usize) -> OffspringMeasure {
    TreeCounts::of(tree, size).offspring_measure()
}

pub fn pair_measure_tilde(tree: &TypedTree, size: usize) -> PairMeasure {
    TreeCounts::of(tree, size).pair_measure_tilde()
}

pub fn pair_measure(tree: &TypedTree, size: usize) -> Result<PairMeasure> {
    TreeCounts::of(tree, size).pair_measure()
}

pub fn nu_first(nu: &OffspringMeasure) -> Vec<f64> {
    nu.first_marginal()
}

pub fn pair_second(varpi: &PairMeasure) -> Vec<f64> {
    varpi.second_marginal()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Consistency {
    Consistent,
    SubConsistent,
    Neither,
}

/// `D(a, b) = varpi(a, b) - sum_c m(b, c) nu(a, c)`.
pub fn consistency_defect(varpi: &PairMeasure, nu: &OffspringMeasure) -> Result<PairMeasure> {
    if varpi.size != nu.size {
        return Err(Error::validation("pair and offspring measures use different alphabets"));
    }
    let implied = nu.mean_children();
    Ok(PairMeasure {
        size: varpi.size,
        weights: varpi.weights.iter().zip(&implied.weights).map(|(x, y)| x - y).collect(),
    })
}

pub fn check_consistency(varpi: &PairMeasure, nu: &OffspringMeasure, tol: f64) -> Result<Consistency> {
    let d = consistency_defect(varpi, nu)?;
    let max_abs = d.weights.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let min = d.weights.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if max_abs <= tol {
        Consistency::Consistent
    } else if min >= -tol {
        Consistency::SubConsistent
    } else {
        Consistency::Neither
    })
}

/// `(1/2) sum |nu - nu'|`.
pub fn tv_distance(nu: &OffspringMeasure, other: &OffspringMeasure) -> f64 {
    let mut total = 0.0;
    for (key, &w) in &nu.atoms {
        total += (w - other.atoms.get(key).copied().unwrap_or(0.0)).abs();
    }
    for (key, &w) in &other.atoms {
        if !nu.atoms.contains_key(key) {
            total += w;
        }
    }
    0.5 * total
}

/// `||nu||_k = nu(X x X_k*)`.
pub fn mass_up_to(nu: &OffspringMeasure, k: usize) -> f64 {
    nu.iter().filter(|(_, c, _)| c.count() <= k).map(|(_, _, w)| w).sum()
}

/// `nu_k`: `nu` restricted to configurations with at most `k` children and
/// renormalized.
pub fn truncate_measure(nu: &OffspringMeasure, k: usize) -> Result<OffspringMeasure> {
    let mass = mass_up_to(nu, k);
    if mass <= 0.0 {
        return Err(Error::domain(format!("measure puts no mass on configurations with at most {k} children")));
    }
    Ok(OffspringMeasure::from_map_unchecked(
        nu.size,
        nu.atoms.iter().filter(|((_, c), _)| c.count() <= k).map(|(key, w)| (key.clone(), w / mass)).collect(),
    ))
}

/// Turns a sub-consistent pair into a consistent one at scale `n`:
///
/// `nu^_n(a, c) = nu(a, c) (1 - delta/n) + sum_b 1{c = (n, b, ..., b)} D(a, b)/n`
///
/// where `D` is the consistency defect and `delta` its total, and
/// `varpi^_n(a, b) = sum_c m(b, c) nu^_n(a, c)`.
pub fn repair_consistency(
    varpi: &PairMeasure,
    nu: &OffspringMeasure,
    n: usize,
) -> Result<(PairMeasure, OffspringMeasure)> {
    if n == 0 {
        return Err(Error::domain("repair scale n must be positive"));
    }
    if check_consistency(varpi, nu, DEFAULT_CONSISTENCY_TOL)? == Consistency::Neither {
        return Err(Error::domain("repair needs a sub-consistent pair"));
    }
    let d = consistency_defect(varpi, nu)?;
    // defects within tolerance of zero count as zero
    let d: Vec<f64> = d.weights.iter().map(|&x| x.max(0.0)).collect();
    let delta: f64 = d.iter().sum();
    let nf = n as f64;
    let keep = 1.0 - delta / nf;
    if keep < 0.0 {
        return Err(Error::domain(format!(
            "repair at n = {n} gives negative weights; total defect {delta} needs n >= {}",
            delta.ceil()
        )));
    }
    let size = nu.size;
    let mut atoms: BTreeMap<(usize, OffspringConfig), f64> =
        nu.atoms.iter().map(|(key, &w)| (key.clone(), w * keep)).collect();
    for a in 0..size {
        for b in 0..size {
            let extra = d[a * size + b] / nf;
            if extra > 0.0 {
                *atoms.entry((a, OffspringConfig::uniform(b, n))).or_insert(0.0) += extra;
            }
        }
    }
    atoms.retain(|_, w| *w > 0.0);
    let nu_hat = OffspringMeasure::from_map_unchecked(size, atoms);
    let varpi_hat = nu_hat.mean_children();
    Ok((varpi_hat, nu_hat))
}

/// Entrywise average of several pair measures.
pub fn mean_pair_measure<'a>(measures: impl IntoIterator<Item = &'a PairMeasure>) -> Option<PairMeasure> {
    let mut total: Option<PairMeasure> = None;
    let mut count = 0usize;
    for m in measures {
        count += 1;
        match &mut total {
            None => total = Some(m.clone()),
            Some(t) => t.weights.iter_mut().zip(&m.weights).for_each(|(x, y)| *x += y),
        }
    }
    total.map(|t| t.scaled(1.0 / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cherry() -> TypedTree {
        TypedTree::from_preorder(vec![0, 0, 1], vec![2, 0, 0]).unwrap()
    }

    #[test]
    fn single_vertex_measures() {
        let t = TypedTree::single(0);
        let nu = offspring_measure(&t, 2);
        assert_eq!(nu.get(0, &OffspringConfig::empty()), 1.0);
        assert_eq!(pair_measure_tilde(&t, 2).mass(), 0.0);
        assert!(pair_measure(&t, 2).is_err());
    }

    #[test]
    fn cherry_measures() {
        let t = cherry();
        let nu = offspring_measure(&t, 2);
        assert_eq!(nu.atoms().len(), 3);
        assert!((nu.get(0, &OffspringConfig::new(vec![0, 1])) - 1.0 / 3.0).abs() < 1e-15);
        assert!((nu.get(1, &OffspringConfig::empty()) - 1.0 / 3.0).abs() < 1e-15);
        assert!((nu.first_moment() - 2.0 / 3.0).abs() < 1e-15);
        let lt = pair_measure_tilde(&t, 2);
        assert_eq!(lt.rows(), vec![vec![1.0 / 3.0, 1.0 / 3.0], vec![0.0, 0.0]]);
        let l = pair_measure(&t, 2).unwrap();
        assert_eq!(l.rows(), vec![vec![0.5, 0.5], vec![0.0, 0.0]]);
        let nu1 = nu_first(&nu);
        assert!((nu1[0] - 2.0 / 3.0).abs() < 1e-15 && (nu1[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pair_second(&lt), vec![1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn consistency_classes() {
        let t = cherry();
        let nu = offspring_measure(&t, 2);
        let lt = pair_measure_tilde(&t, 2);
        assert_eq!(check_consistency(&lt, &nu, 1e-12).unwrap(), Consistency::Consistent);
        assert_eq!(check_consistency(&lt.scaled(2.0), &nu, 1e-12).unwrap(), Consistency::SubConsistent);
        assert_eq!(check_consistency(&PairMeasure::zero(2), &nu, 1e-12).unwrap(), Consistency::Neither);
        assert!(TreeCounts::of(&t, 2).is_consistent());
    }

    #[test]
    fn tv_basics() {
        let a = OffspringMeasure::new(1, [((0, OffspringConfig::empty()), 1.0)]).unwrap();
        let b = OffspringMeasure::new(1, [((0, OffspringConfig::uniform(0, 2)), 1.0)]).unwrap();
        assert_eq!(tv_distance(&a, &a), 0.0);
        assert_eq!(tv_distance(&a, &b), 1.0);
        assert_eq!(tv_distance(&b, &a), 1.0);
    }

    #[test]
    fn truncation() {
        let nu = OffspringMeasure::new(
            1,
            [((0, OffspringConfig::empty()), 0.5), ((0, OffspringConfig::uniform(0, 3)), 0.5)],
        )
        .unwrap();
        let t = truncate_measure(&nu, 2).unwrap();
        assert_eq!(t.atoms().len(), 1);
        assert_eq!(t.get(0, &OffspringConfig::empty()), 1.0);
        assert_eq!(truncate_measure(&nu, 3).unwrap(), nu);
        let only_big = OffspringMeasure::new(1, [((0, OffspringConfig::uniform(0, 3)), 1.0)]).unwrap();
        assert!(truncate_measure(&only_big, 2).is_err());
    }

    #[test]
    fn repair_of_consistent_input_is_identity() {
        let t = cherry();
        let nu = offspring_measure(&t, 2);
        let lt = pair_measure_tilde(&t, 2);
        let (p, q) = repair_consistency(&lt, &nu, 100).unwrap();
        assert_eq!(q, nu);
        assert!(p.max_abs_diff(&lt) < 1e-15);
    }

    #[test]
    fn repair_of_doubled_entry() {
        let t = cherry();
        let nu = offspring_measure(&t, 2);
        let mut lt = pair_measure_tilde(&t, 2);
        lt.set(0, 1, 2.0 * lt.get(0, 1));
        let (p, q) = repair_consistency(&lt, &nu, 1000).unwrap();
        assert_eq!(check_consistency(&p, &q, 1e-10).unwrap(), Consistency::Consistent);
        assert!((q.mass() - 1.0).abs() < 1e-15);
        assert!((tv_distance(&q, &nu) - (1.0 / 3.0) / 1000.0).abs() < 1e-15);
        assert!(repair_consistency(&lt.scaled(10.0), &nu, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let al = Alphabet::letters(2);
        let t = TypedTree::from_preorder(vec![0, 1, 1, 0, 1], vec![2, 1, 0, 1, 0]).unwrap();
        let nu = offspring_measure(&t, 2);
        let text = nu.to_csv(&al);
        assert!(text.starts_with("type,count,children,weight\na,1,b,"));
        assert_eq!(OffspringMeasure::from_csv(&text, &al).unwrap(), nu);
        let lt = pair_measure_tilde(&t, 2);
        assert_eq!(PairMeasure::from_csv(&lt.to_csv(&al), &al).unwrap(), lt);
    }
}
