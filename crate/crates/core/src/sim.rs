//! Sampling of multitype Galton-Watson trees, exact-size conditioning by
//! rejection, the two-step Markov-chain-indexed construction and exhaustive
//! enumeration of small trees.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::law::CountLaw;
use crate::model::{sample_index, OffspringConfig, OffspringKernel};
use crate::par;
use crate::tree::TypedTree;

pub const DEFAULT_RETRY_BUDGET: u64 = 10_000_000;
pub const DEFAULT_ENUMERATION_BUDGET: usize = 10_000_000;

/// The tree grew past its vertex budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overflow;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleReport {
    #[serde(skip)]
    pub tree: TypedTree,
    /// Number of unconditioned draws used, including the accepted one.
    pub attempts: u64,
    pub rng_seed: u64,
    pub stream: u64,
}

pub fn validate_root_law(root_law: &[f64], size: usize) -> Result<()> {
    if root_law.len() != size {
        return Err(Error::validation(format!("root law has {} entries for {size} types", root_law.len())));
    }
    if root_law.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::validation("root law entries must be finite and nonnegative"));
    }
    let total: f64 = root_law.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("root law sums to {total}, expected 1")));
    }
    Ok(())
}

/// Draws one tree depth-first. Returns `Overflow` as soon as the vertices
/// created plus those already promised exceed `max_vertices`.
pub fn sample_tree<R: Rng + ?Sized>(
    kernel: &OffspringKernel,
    root_law: &[f64],
    rng: &mut R,
    max_vertices: usize,
) -> std::result::Result<TypedTree, Overflow> {
    let root = sample_index(root_law, rng);
    grow(root, rng, max_vertices, |ty, rng| kernel.sample_config(ty, rng))
}

fn grow<R: Rng + ?Sized>(
    root: usize,
    rng: &mut R,
    max_vertices: usize,
    mut offspring: impl FnMut(usize, &mut R) -> OffspringConfig,
) -> std::result::Result<TypedTree, Overflow> {
    let mut types = Vec::new();
    let mut counts = Vec::new();
    let mut pending = vec![root];
    while let Some(ty) = pending.pop() {
        let config = offspring(ty, rng);
        types.push(ty);
        counts.push(config.count());
        if types.len() + pending.len() + config.count() > max_vertices {
            return Err(Overflow);
        }
        pending.extend(config.children().iter().rev());
    }
    Ok(TypedTree::from_preorder_unchecked(types, counts))
}

/// Rejection sampler for the law of the tree conditioned on `|T| = n`.
/// Returns the tree and the number of attempts.
pub fn sample_conditioned_with<R: Rng + ?Sized>(
    kernel: &OffspringKernel,
    root_law: &[f64],
    n: usize,
    rng: &mut R,
    retry_budget: u64,
) -> Result<(TypedTree, u64)> {
    if n == 0 {
        return Err(Error::domain("conditioned size must be at least 1"));
    }
    for attempt in 1..=retry_budget {
        if let Ok(tree) = sample_tree(kernel, root_law, rng, n) {
            if tree.len() == n {
                return Ok((tree, attempt));
            }
        }
    }
    Err(Error::Exhausted { attempts: retry_budget, target: n })
}

pub fn sample_conditioned(
    kernel: &OffspringKernel,
    root_law: &[f64],
    n: usize,
    seed: u64,
    stream: u64,
    retry_budget: u64,
) -> Result<SampleReport> {
    validate_root_law(root_law, kernel.size())?;
    let mut rng = par::stream_rng(seed, stream);
    let (tree, attempts) = sample_conditioned_with(kernel, root_law, n, &mut rng, retry_budget)?;
    Ok(SampleReport { tree, attempts, rng_seed: seed, stream })
}

/// Shape first, types second: a plain Galton-Watson tree with count law `p`
/// conditioned on `n` vertices, then a Markov chain along its edges.
pub fn sample_markov_indexed_with<R: Rng + ?Sized>(
    count: &CountLaw,
    transition: &[Vec<f64>],
    root_law: &[f64],
    n: usize,
    rng: &mut R,
    retry_budget: u64,
) -> Result<(TypedTree, u64)> {
    if n == 0 {
        return Err(Error::domain("conditioned size must be at least 1"));
    }
    let mut shape = None;
    let mut used = 0;
    for attempt in 1..=retry_budget {
        used = attempt;
        if let Ok(t) = grow(0, rng, n, |_, rng| OffspringConfig::uniform(0, count.sample(rng))) {
            if t.len() == n {
                shape = Some(t);
                break;
            }
        }
    }
    let shape = shape.ok_or(Error::Exhausted { attempts: retry_budget, target: n })?;
    let parents = shape.parents();
    let mut types: Vec<usize> = Vec::with_capacity(n);
    for p in &parents {
        let ty = match p {
            None => sample_index(root_law, rng),
            Some(p) => sample_index(&transition[types[*p]], rng),
        };
        types.push(ty);
    }
    Ok((TypedTree::from_preorder_unchecked(types, shape.child_counts().to_vec()), used))
}

pub fn sample_markov_indexed(
    count: &CountLaw,
    transition: &[Vec<f64>],
    root_law: &[f64],
    n: usize,
    seed: u64,
    stream: u64,
    retry_budget: u64,
) -> Result<SampleReport> {
    validate_root_law(root_law, transition.len())?;
    let mut rng = par::stream_rng(seed, stream);
    let (tree, attempts) = sample_markov_indexed_with(count, transition, root_law, n, &mut rng, retry_budget)?;
    Ok(SampleReport { tree, attempts, rng_seed: seed, stream })
}

/// `count` conditioned trees; sample `i` uses stream `i` of `seed`, so the
/// output does not depend on the number of worker threads.
pub fn sample_conditioned_batch(
    kernel: &OffspringKernel,
    root_law: &[f64],
    n: usize,
    count: usize,
    seed: u64,
    retry_budget: u64,
) -> Result<Vec<SampleReport>> {
    validate_root_law(root_law, kernel.size())?;
    par::map_chunks(count, 1, seed, |i, _, rng| {
        sample_conditioned_with(kernel, root_law, n, rng, retry_budget).map(|(tree, attempts)| SampleReport {
            tree,
            attempts,
            rng_seed: seed,
            stream: i as u64,
        })
    })
    .into_iter()
    .collect()
}

/// Markov-indexed counterpart of [`sample_conditioned_batch`].
pub fn sample_markov_indexed_batch(
    count_law: &CountLaw,
    transition: &[Vec<f64>],
    root_law: &[f64],
    n: usize,
    count: usize,
    seed: u64,
    retry_budget: u64,
) -> Result<Vec<SampleReport>> {
    validate_root_law(root_law, transition.len())?;
    par::map_chunks(count, 1, seed, |i, _, rng| {
        sample_markov_indexed_with(count_law, transition, root_law, n, rng, retry_budget)
            .map(|(tree, attempts)| SampleReport { tree, attempts, rng_seed: seed, stream: i as u64 })
    })
    .into_iter()
    .collect()
}

/// `log P(tree) = log mu(X(root)) + sum_v log Q{C(v) | X(v)}`.
pub fn tree_log_probability(kernel: &OffspringKernel, root_law: &[f64], tree: &TypedTree) -> f64 {
    let mut lp = root_law[tree.root_type()].ln();
    for (v, c) in tree.configs().iter().enumerate() {
        lp += kernel.prob(tree.types()[v], c).ln();
    }
    lp
}

pub fn tree_probability(kernel: &OffspringKernel, root_law: &[f64], tree: &TypedTree) -> f64 {
    tree_log_probability(kernel, root_law, tree).exp()
}

/// Visits every typed planar tree with exactly `n` vertices and positive
/// probability, with its probability. Fails once more than `budget` trees
/// have been produced.
pub fn enumerate_with(
    kernel: &OffspringKernel,
    root_law: &[f64],
    n: usize,
    budget: usize,
    mut visit: impl FnMut(&TypedTree, f64),
) -> Result<usize> {
    validate_root_law(root_law, kernel.size())?;
    if n == 0 {
        return Err(Error::domain("tree size must be at least 1"));
    }
    let alphabet_size = kernel.size() as f64;
    let config_bound: f64 = (0..n).map(|l| alphabet_size.powi(l as i32)).sum();
    if kernel.support_bound().is_none() && config_bound * alphabet_size > budget as f64 {
        return Err(Error::Resource(format!(
            "enumerating size-{n} trees needs up to {config_bound:.3e} configurations per type, over the budget of {budget}"
        )));
    }
    // configurations are sorted by child count, so scans can stop early
    let configs: Vec<Vec<(OffspringConfig, f64)>> =
        (0..kernel.size()).map(|a| kernel.configs_up_to(a, n - 1)).collect();
    let mut walker = Walker { configs: &configs, n, budget, emitted: 0, types: Vec::new(), counts: Vec::new() };
    for (root, &mu) in root_law.iter().enumerate() {
        if mu > 0.0 {
            let mut pending = vec![root];
            walker.walk(&mut pending, mu, &mut visit)?;
        }
    }
    Ok(walker.emitted)
}

struct Walker<'a> {
    configs: &'a [Vec<(OffspringConfig, f64)>],
    n: usize,
    budget: usize,
    emitted: usize,
    types: Vec<usize>,
    counts: Vec<usize>,
}

impl Walker<'_> {
    fn walk(&mut self, pending: &mut Vec<usize>, prob: f64, visit: &mut impl FnMut(&TypedTree, f64)) -> Result<()> {
        let Some(ty) = pending.pop() else {
            if self.types.len() == self.n {
                self.emitted += 1;
                if self.emitted > self.budget {
                    return Err(Error::Resource(format!(
                        "enumeration of size-{} trees exceeds the budget of {} trees",
                        self.n, self.budget
                    )));
                }
                let tree = TypedTree::from_preorder_unchecked(self.types.clone(), self.counts.clone());
                visit(&tree, prob);
            }
            return Ok(());
        };
        let used = self.types.len() + 1 + pending.len();
        for (config, p) in &self.configs[ty] {
            if used + config.count() > self.n {
                break;
            }
            self.types.push(ty);
            self.counts.push(config.count());
            let depth = pending.len();
            pending.extend(config.children().iter().rev());
            let res = self.walk(pending, prob * p, visit);
            pending.truncate(depth);
            self.types.pop();
            self.counts.pop();
            res?;
        }
        pending.push(ty);
        Ok(())
    }
}

/// Every size-`n` tree with its probability `mu(X(root)) prod_v Q{C(v) | X(v)}`.
/// The probabilities sum to `P{|T| = n}`.
pub fn enumerate(kernel: &OffspringKernel, root_law: &[f64], n: usize, budget: usize) -> Result<Vec<(TypedTree, f64)>> {
    let mut out = Vec::new();
    enumerate_with(kernel, root_law, n, budget, |t, p| out.push((t.clone(), p)))?;
    Ok(out)
}

/// `P{|T| = n}` by enumeration.
pub fn size_probability(kernel: &OffspringKernel, root_law: &[f64], n: usize, budget: usize) -> Result<f64> {
    let mut total = 0.0;
    enumerate_with(kernel, root_law, n, budget, |_, p| total += p)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{factored_kernel, Alphabet};
    use std::collections::HashMap;

    fn geometric_single() -> OffspringKernel {
        factored_kernel(CountLaw::geometric(0.5).unwrap(), vec![vec![1.0]], Alphabet::letters(1)).unwrap()
    }

    fn leaf_only() -> OffspringKernel {
        OffspringKernel::explicit(Alphabet::letters(1), vec![vec![(OffspringConfig::empty(), 1.0)]]).unwrap()
    }

    #[test]
    fn immediate_extinction_gives_single_vertex() {
        let k = leaf_only();
        let mut rng = par::stream_rng(3, 0);
        for _ in 0..20 {
            let t = sample_tree(&k, &[1.0], &mut rng, 10).unwrap();
            assert_eq!(t.len(), 1);
        }
    }

    #[test]
    fn unary_ray_overflows() {
        let k =
            OffspringKernel::explicit(Alphabet::letters(1), vec![vec![(OffspringConfig::uniform(0, 1), 1.0)]]).unwrap();
        let mut rng = par::stream_rng(3, 0);
        for _ in 0..5 {
            assert_eq!(sample_tree(&k, &[1.0], &mut rng, 100), Err(Overflow));
        }
    }

    #[test]
    fn small_sizes_have_exact_frequencies() {
        // P{|T|=1} = 1/2, P{|T|=2} = 1/8
        let k = geometric_single();
        let n = 100_000;
        let counts = par::map_chunks(n, 10_000, 11, |_, r, rng| {
            let mut c = [0usize; 2];
            for _ in r {
                if let Ok(t) = sample_tree(&k, &[1.0], rng, 2) {
                    c[t.len() - 1] += 1;
                }
            }
            c
        });
        let (one, two) = counts.iter().fold((0, 0), |acc, c| (acc.0 + c[0], acc.1 + c[1]));
        for (obs, p) in [(one, 0.5), (two, 0.125)] {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((obs as f64 - n as f64 * p).abs() < 3.0 * sigma, "{obs} vs {p}");
        }
    }

    #[test]
    fn conditioned_size_one_keeps_root_law() {
        let k = factored_kernel(
            CountLaw::geometric(0.5).unwrap(),
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            Alphabet::letters(2),
        )
        .unwrap();
        let reports = sample_conditioned_batch(&k, &[0.3, 0.7], 1, 20_000, 5, 1000).unwrap();
        let a = reports.iter().filter(|r| r.tree.root_type() == 0).count() as f64 / 20_000.0;
        let sigma = (0.3 * 0.7 / 20_000.0f64).sqrt();
        assert!((a - 0.3).abs() < 3.0 * sigma);
    }

    #[test]
    fn conditioned_shapes_of_size_three() {
        let k = geometric_single();
        // path: (1/4)(1/4)(1/2); cherry: (1/8)(1/2)(1/2); both 1/32
        let trees = enumerate(&k, &[1.0], 3, 1000).unwrap();
        assert_eq!(trees.len(), 2);
        for (_, p) in &trees {
            assert!((p - 1.0 / 32.0).abs() < 1e-15);
        }
        let n = 100_000;
        let reports = sample_conditioned_batch(&k, &[1.0], 3, n, 9, 1000).unwrap();
        let path = reports.iter().filter(|r| r.tree.child_counts() == [1, 1, 0]).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((path - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn impossible_size_exhausts() {
        // only (0) or (2, a, a): size 2 is impossible
        let k = OffspringKernel::explicit(
            Alphabet::letters(1),
            vec![vec![(OffspringConfig::empty(), 0.5), (OffspringConfig::uniform(0, 2), 0.5)]],
        )
        .unwrap();
        let err = sample_conditioned(&k, &[1.0], 2, 1, 0, 500).unwrap_err();
        assert!(matches!(err, Error::Exhausted { attempts: 500, target: 2 }));
    }

    #[test]
    fn markov_indexed_identity_chain() {
        let p = CountLaw::geometric(0.5).unwrap();
        let r = sample_markov_indexed(&p, &[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 0.0], 7, 2, 0, 100_000).unwrap();
        assert_eq!(r.tree.len(), 7);
        assert!(r.tree.types().iter().all(|&t| t == 0));
    }

    #[test]
    fn markov_indexed_single_vertex_follows_root_law() {
        let p = CountLaw::geometric(0.5).unwrap();
        let q = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let reports = sample_markov_indexed_batch(&p, &q, &[0.25, 0.75], 1, 20_000, 4, 1000).unwrap();
        let a = reports.iter().filter(|r| r.tree.root_type() == 0).count() as f64 / 20_000.0;
        assert!((a - 0.25).abs() < 3.0 * (0.25f64 * 0.75 / 20_000.0).sqrt());
    }

    #[test]
    fn enumeration_single_vertex() {
        let k = factored_kernel(
            CountLaw::geometric(0.5).unwrap(),
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            Alphabet::letters(2),
        )
        .unwrap();
        let trees = enumerate(&k, &[0.3, 0.7], 1, 10).unwrap();
        assert_eq!(trees.len(), 2);
        assert!((trees[0].1 - 0.3 * 0.5).abs() < 1e-15);
        assert!((trees[1].1 - 0.7 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn enumeration_of_truncated_geometric() {
        let k = geometric_single().truncate(2).unwrap();
        // Q_2 = (4/7, 2/7, 1/7); path and cherry
        let p = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        let path = p[1] * p[1] * p[0];
        let cherry = p[2] * p[0] * p[0];
        let total = size_probability(&k, &[1.0], 3, 100).unwrap();
        assert!((total - (path + cherry)).abs() < 1e-15);
    }

    #[test]
    fn size_probabilities_sum_below_one() {
        let k = factored_kernel(
            CountLaw::geometric(0.5).unwrap(),
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            Alphabet::letters(2),
        )
        .unwrap();
        let mut total = 0.0;
        for n in 1..=9 {
            total += size_probability(&k, &[0.5, 0.5], n, DEFAULT_ENUMERATION_BUDGET).unwrap();
        }
        assert!(total <= 1.0);
    }

    #[test]
    fn enumeration_probabilities_match_tree_probability() {
        let k = factored_kernel(
            CountLaw::poisson(1.0).unwrap(),
            vec![vec![0.6, 0.4], vec![0.3, 0.7]],
            Alphabet::letters(2),
        )
        .unwrap();
        let mut seen = HashMap::new();
        for (t, p) in enumerate(&k, &[0.5, 0.5], 4, 10_000).unwrap() {
            t.validate().unwrap();
            assert!((p - tree_probability(&k, &[0.5, 0.5], &t)).abs() < 1e-15);
            assert!(seen.insert(t, p).is_none(), "duplicate tree");
        }
        // 5 shapes, 2^4 typings
        assert_eq!(seen.len(), 5 * 16);
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let k = geometric_single();
        assert!(matches!(enumerate(&k, &[1.0], 8, 100), Err(Error::Resource(_))));
    }

    #[test]
    fn sampling_is_reproducible() {
        let k = geometric_single();
        let a = sample_conditioned_batch(&k, &[1.0], 20, 30, 77, DEFAULT_RETRY_BUDGET).unwrap();
        let b = sample_conditioned_batch(&k, &[1.0], 20, 30, 77, DEFAULT_RETRY_BUDGET).unwrap();
        assert_eq!(a, b);
        for r in &a {
            r.tree.validate().unwrap();
            assert_eq!(r.tree.len(), 20);
        }
    }
}
