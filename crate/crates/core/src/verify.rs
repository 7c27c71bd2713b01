//! The acceptance checks behind `gwldp verify`.
//!
//! Each check is a plain function returning pass/fail plus a one-line detail,
//! so the same code backs the CLI table and the `acceptance` test target.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cli::{self, EstimateArgs, SimulateArgs};
use crate::empirical::{
    check_consistency, mean_pair_measure, repair_consistency, tv_distance, Consistency, OffspringMeasure, PairMeasure,
    TreeCounts,
};
use crate::error::{Error, Result};
use crate::law::CountLaw;
use crate::model::{Alphabet, OffspringConfig, OffspringKernel};
use crate::rate::{ip_geometric_closed, legendre_ip, lemma_inf_oracle, rate_i, rate_i_geometric, RateValue};
use crate::sim::{
    enumerate, sample_conditioned_batch, sample_markov_indexed_batch, size_probability, tree_probability,
    DEFAULT_ENUMERATION_BUDGET, DEFAULT_RETRY_BUDGET,
};
use crate::spec_doc::KernelSpecDocument;
use crate::tilting::{tilted_model, TiltFunction};
use crate::tree::TypedTree;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub criterion: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn() -> Result<Outcome>;

/// `(criterion, name, time limit in seconds, check)`.
pub type Check = (usize, &'static str, Option<f64>, CheckFn);

pub const CHECKS: [Check; 12] = [
    (1, "ip", Some(1.0), check_geometric_closed_form),
    (2, "boundary", None, check_boundary_identity),
    (3, "critical", None, check_criticality_zero),
    (4, "corollary", Some(1.0), check_corollary),
    (5, "empirical", None, check_empirical_identities),
    (6, "conditional", Some(120.0), check_conditional_law),
    (7, "change-of-measure", None, check_change_of_measure),
    (8, "infimum", Some(300.0), check_infimum_identity),
    (9, "decay", None, check_decay_sanity),
    (10, "lln", Some(120.0), check_lln),
    (11, "repair", None, check_repair),
    (12, "determinism", None, check_determinism),
];

pub fn names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.1).collect()
}

pub fn run_check(name: &str) -> Result<CheckResult> {
    let (criterion, name, limit, check) = *CHECKS
        .iter()
        .find(|c| c.1 == name)
        .ok_or_else(|| Error::validation(format!("unknown check '{name}'; expected one of {}", names().join(", "))))?;
    let start = Instant::now();
    let outcome = check();
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match outcome {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = limit {
        if seconds >= limit {
            passed = false;
            detail.push_str(&format!("; took {seconds:.2}s, limit {limit}s"));
        }
    }
    Ok(CheckResult { criterion, name, passed, detail, seconds })
}

/// All checks, or only `only`.
pub fn run(only: Option<&str>) -> Result<Vec<CheckResult>> {
    match only {
        Some(name) => Ok(vec![run_check(name)?]),
        None => CHECKS.iter().map(|c| run_check(c.1)).collect(),
    }
}

/// Pearson goodness of fit. Cells with expected count below 5 are pooled;
/// a pool that is still too small joins the smallest regular cell.
/// Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    let total = observed.iter().sum::<u64>() as f64;
    let mass: f64 = probs.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = total * p / mass;
        if e >= 5.0 {
            cells.push((o as f64, e));
        } else {
            pool.0 += o as f64;
            pool.1 += e;
        }
    }
    if pool.1 > 0.0 || pool.0 > 0.0 {
        if pool.1 >= 5.0 || cells.is_empty() {
            cells.push(pool);
        } else {
            let smallest = (0..cells.len()).min_by(|&i, &j| cells[i].1.total_cmp(&cells[j].1)).unwrap();
            cells[smallest].0 += pool.0;
            cells[smallest].1 += pool.1;
        }
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p = if dof == 0 { 1.0 } else { ChiSquared::new(dof as f64).map(|d| d.sf(stat)).unwrap_or(0.0) };
    (stat, dof, p)
}

fn two_type_chain() -> Vec<Vec<f64>> {
    vec![vec![0.9, 0.1], vec![0.2, 0.8]]
}

fn geometric_chain() -> Result<(OffspringKernel, Vec<f64>)> {
    let k = OffspringKernel::factored(Alphabet::letters(2), CountLaw::geometric(0.5)?, two_type_chain())?;
    Ok((k, vec![0.5, 0.5]))
}

/// Laws used by the closed-form checks.
fn law_corpus() -> Result<Vec<(&'static str, CountLaw)>> {
    Ok(vec![
        ("geometric:0.5", CountLaw::geometric(0.5)?),
        ("poisson:1", CountLaw::poisson(1.0)?),
        ("table:.25,.5,.25", CountLaw::table(vec![0.25, 0.5, 0.25])?),
        ("table:.5,0,.5", CountLaw::table(vec![0.5, 0.0, 0.5])?),
        ("geometric:0.3", CountLaw::geometric(0.3)?),
        ("poisson:2", CountLaw::poisson(2.0)?),
        ("table:.2,.3,.1,.4", CountLaw::table(vec![0.2, 0.3, 0.1, 0.4])?),
    ])
}

/// `(name, kernel, root law, sizes drawn)`.
type Sampled = (&'static str, OffspringKernel, Vec<f64>, Vec<usize>);

/// Kernels sampled by the empirical-identity check.
fn kernel_corpus() -> Result<Vec<Sampled>> {
    let (geo, geo_root) = geometric_chain()?;
    let poisson = OffspringKernel::factored(
        Alphabet::letters(3),
        CountLaw::poisson(1.0)?,
        vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.8, 0.1], vec![0.3, 0.3, 0.4]],
    )?;
    let cfg = |c: Vec<usize>| OffspringConfig::new(c);
    let binary =
        OffspringKernel::explicit(Alphabet::letters(1), vec![vec![(cfg(vec![]), 0.5), (cfg(vec![0, 0]), 0.5)]])?;
    let mixed = OffspringKernel::explicit(
        Alphabet::letters(2),
        vec![
            vec![(cfg(vec![]), 0.4), (cfg(vec![0, 1]), 0.3), (cfg(vec![1, 1, 0]), 0.3)],
            vec![(cfg(vec![]), 0.6), (cfg(vec![0]), 0.4)],
        ],
    )?;
    Ok(vec![
        ("geometric 2-type", geo, geo_root, vec![1, 2, 3, 5, 8, 13, 21, 40]),
        ("poisson 3-type", poisson, vec![0.2, 0.3, 0.5], vec![1, 2, 4, 7, 12, 25]),
        ("binary", binary, vec![1.0], vec![1, 3, 5, 9, 15, 31]),
        ("explicit 2-type", mixed, vec![0.7, 0.3], vec![1, 2, 3, 6, 10, 16]),
    ])
}

/// Criterion 1.
pub fn check_geometric_closed_form() -> Result<Outcome> {
    let grid = cli::parse_grid("0.05:5:0.05")?;
    let worst = cli::geometric_check(&grid, |x| ip_geometric_closed(x).map_or(f64::NAN, RateValue::value))?;
    Ok(Outcome { passed: worst < 1e-8, detail: format!("max deviation {worst:.2e} over {} points", grid.len()) })
}

/// Criterion 2.
pub fn check_boundary_identity() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (_, law) in law_corpus()? {
        let d = (legendre_ip(&law, 0.0)?.value() + law.pmf(0).ln()).abs();
        worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
    }
    Ok(Outcome { passed: worst <= 1e-10, detail: format!("max |I_p(0) + log p(0)| = {worst:.2e}") })
}

/// Criterion 3.
pub fn check_criticality_zero() -> Result<Outcome> {
    let grid = cli::parse_grid("0:5:0.05")?;
    let mut worst_zero = 0.0f64;
    let mut problems = Vec::new();
    let mut critical = 0;
    for (name, law) in law_corpus()? {
        if (law.mean() - 1.0).abs() < 1e-12 {
            critical += 1;
            worst_zero = worst_zero.max(legendre_ip(&law, 1.0)?.value().abs());
        }
        let values: Vec<f64> =
            grid.iter().map(|&x| legendre_ip(&law, x).map(RateValue::value)).collect::<Result<_>>()?;
        if values.iter().any(|v| !(*v >= -1e-12)) {
            problems.push(format!("{name} negative"));
        }
        for w in values.windows(3) {
            if w.iter().all(|v| v.is_finite()) && w[0] - 2.0 * w[1] + w[2] < -1e-9 {
                problems.push(format!("{name} not convex"));
                break;
            }
        }
    }
    let passed = worst_zero <= 1e-10 && problems.is_empty();
    let mut detail = format!("{critical} mean-1 laws, max |I_p(1)| = {worst_zero:.2e}");
    if !problems.is_empty() {
        detail.push_str(&format!("; {}", problems.join(", ")));
    }
    Ok(Outcome { passed, detail })
}

fn random_pair(size: usize, rng: &mut ChaCha8Rng) -> Result<PairMeasure> {
    let raw: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    PairMeasure::from_rows(raw.chunks(size).map(|r| r.iter().map(|x| x / total).collect()).collect())
}

/// Criterion 4.
pub fn check_corollary() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let law = CountLaw::geometric(0.5)?;
    let transitions = [two_type_chain(), vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.8, 0.1], vec![0.3, 0.3, 0.4]]];
    let mut worst = 0.0f64;
    for q in &transitions {
        for _ in 0..10 {
            let mu = random_pair(q.len(), &mut rng)?;
            let d = (rate_i(&mu, q, &law)?.value() - rate_i_geometric(&mu, q)?.value()).abs();
            worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
        }
    }
    Ok(Outcome { passed: worst <= 1e-10, detail: format!("20 measures, max deviation {worst:.2e}") })
}

/// Criterion 5.
pub fn check_empirical_identities() -> Result<Outcome> {
    let mut trees = 0usize;
    let mut failures = Vec::new();
    for (k_idx, (name, kernel, root, sizes)) in kernel_corpus()?.into_iter().enumerate() {
        let per_size = 2500usize.div_ceil(sizes.len());
        for (s_idx, &n) in sizes.iter().enumerate() {
            let seed = 5_000 + (k_idx * 100 + s_idx) as u64;
            let batch = sample_conditioned_batch(&kernel, &root, n, per_size, seed, DEFAULT_RETRY_BUDGET)?;
            for r in &batch {
                trees += 1;
                let counts = TreeCounts::of(&r.tree, kernel.size());
                let tilde = counts.pair_measure_tilde();
                let offspring = counts.offspring_measure();
                let mut bad = counts.edge_total() != n as u64 - 1
                    || check_consistency(&tilde, &offspring, 1e-12)? != Consistency::Consistent;
                if n >= 2 {
                    let plain = counts.pair_measure()?;
                    bad |= plain.max_abs_diff(&tilde.scaled(n as f64 / (n - 1) as f64)) > 4.0 * f64::EPSILON;
                }
                if bad && failures.len() < 3 {
                    failures.push(format!("{name} n={n} sample {}", r.stream));
                }
            }
        }
    }
    let passed = failures.is_empty() && trees >= 10_000;
    let mut detail = format!("{trees} trees over 4 kernels");
    if !failures.is_empty() {
        detail.push_str(&format!("; failures: {}", failures.join(", ")));
    }
    Ok(Outcome { passed, detail })
}

fn chi_square_against(exact: &[(TypedTree, f64)], samples: impl Iterator<Item = TypedTree>) -> (f64, bool) {
    let index: HashMap<&TypedTree, usize> = exact.iter().enumerate().map(|(i, (t, _))| (t, i)).collect();
    let mut observed = vec![0u64; exact.len()];
    let mut stray = false;
    for t in samples {
        match index.get(&t) {
            Some(&i) => observed[i] += 1,
            None => stray = true,
        }
    }
    let probs: Vec<f64> = exact.iter().map(|(_, p)| *p).collect();
    (chi_square_gof(&observed, &probs).2, stray)
}

/// Criterion 6.
pub fn check_conditional_law() -> Result<Outcome> {
    let (kernel, root) = geometric_chain()?;
    let law = CountLaw::geometric(0.5)?;
    let samples = 100_000;
    let mut passed = true;
    let mut parts = Vec::new();
    for n in 2..=5usize {
        let exact = enumerate(&kernel, &root, n, DEFAULT_ENUMERATION_BUDGET)?;
        let direct = sample_conditioned_batch(&kernel, &root, n, samples, 600 + n as u64, DEFAULT_RETRY_BUDGET)?;
        let (p1, s1) = chi_square_against(&exact, direct.into_iter().map(|r| r.tree));
        let indexed = sample_markov_indexed_batch(
            &law,
            &two_type_chain(),
            &root,
            n,
            samples,
            700 + n as u64,
            DEFAULT_RETRY_BUDGET,
        )?;
        let (p2, s2) = chi_square_against(&exact, indexed.into_iter().map(|r| r.tree));
        passed &= p1 > 0.001 && p2 > 0.001 && !s1 && !s2;
        parts.push(format!("n={n} p={p1:.3}/{p2:.3}"));
    }
    Ok(Outcome { passed, detail: parts.join(" ") })
}

/// Criterion 7.
pub fn check_change_of_measure() -> Result<Outcome> {
    let (kernel, root) = geometric_chain()?;
    let tilts = [
        TiltFunction::zero(2),
        TiltFunction::constant(2, 0.7),
        TiltFunction::from_fn(&kernel, 4, 0.0, |a, c| {
            0.3 * c.count() as f64 - 0.2 * a as f64 + 0.1 * c.multiplicity(1) as f64
        })?,
    ];
    let (mut worst_rel, mut worst_forms, mut trees) = (0.0f64, 0.0f64, 0usize);
    for g in &tilts {
        let model = tilted_model(&kernel, &root, g)?;
        for n in 1..=5 {
            for (t, p) in enumerate(&kernel, &root, n, DEFAULT_ENUMERATION_BUDGET)? {
                trees += 1;
                let w = model.log_rn_weights(&t);
                let p_tilde = tree_probability(&model.kernel, &model.tilted_root_law, &t);
                worst_rel = worst_rel.max((p - p_tilde * (-w.product).exp()).abs() / p);
                worst_forms = worst_forms.max((w.product - w.empirical).abs());
            }
        }
    }
    let passed = worst_rel <= 1e-12 && worst_forms <= 1e-9;
    Ok(Outcome {
        passed,
        detail: format!("{trees} tree-tilt pairs, max rel error {worst_rel:.2e}, max form gap {worst_forms:.2e}"),
    })
}

/// Criterion 8.
pub fn check_infimum_identity() -> Result<Outcome> {
    let alphabets: [(&[f64], &[f64]); 2] = [(&[0.8, 0.4], &[0.5, 0.5]), (&[0.5, 0.3, 0.4], &[0.2, 0.3, 0.5])];
    let laws = [
        ("geometric", CountLaw::geometric(0.5)?),
        ("poisson", CountLaw::poisson(1.0)?),
        ("table", CountLaw::table(vec![0.25, 0.5, 0.25])?),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (phi, q_hat) in alphabets {
        for (name, law) in &laws {
            let gaps: Vec<f64> = [6, 8, 10]
                .iter()
                .map(|&k| {
                    let o = lemma_inf_oracle(phi, q_hat, law, k)?;
                    Ok(o.bruteforce.value() - o.closed_form.value())
                })
                .collect::<Result<_>>()?;
            let ok = (-1e-6..=1e-3).contains(&gaps[0]) && gaps[1] <= gaps[0] + 1e-9 && gaps[2] <= gaps[1] + 1e-9;
            passed &= ok;
            parts.push(format!(
                "S{} {name} {:.1e}/{:.1e}/{:.1e}{}",
                phi.len(),
                gaps[0],
                gaps[1],
                gaps[2],
                if ok { "" } else { " FAIL" }
            ));
        }
    }
    Ok(Outcome { passed, detail: format!("gaps at k=6/8/10: {}", parts.join(", ")) })
}

fn catalan(n: usize) -> f64 {
    (0..n).fold(1.0, |c, i| c * 2.0 * (2 * i + 1) as f64 / (i + 2) as f64)
}

/// Criterion 9. The sequence rises from `n = 1` to `n = 2` (`log 2` to
/// `log 8 / 2`), so monotonicity is checked from `n = 2` on.
pub fn check_decay_sanity() -> Result<Outcome> {
    let kernel = OffspringKernel::factored(Alphabet::letters(1), CountLaw::geometric(0.5)?, vec![vec![1.0]])?;
    let mut rates = Vec::new();
    let mut worst_exact = 0.0f64;
    for n in 1..=12usize {
        let p = size_probability(&kernel, &[1.0], n, DEFAULT_ENUMERATION_BUDGET)?;
        let closed = catalan(n - 1) / 2f64.powi(2 * n as i32 - 1);
        worst_exact = worst_exact.max((p - closed).abs() / closed);
        rates.push(-p.ln() / n as f64);
    }
    let positive = rates.iter().all(|&r| r > 0.0);
    let decreasing = rates[1..].windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        passed: positive && decreasing && worst_exact < 1e-12,
        detail: format!(
            "rate {:.4} at n=2 down to {:.4} at n=12, max rel gap to Catalan form {worst_exact:.1e}",
            rates[1], rates[11]
        ),
    })
}

fn stationary(transition: &[Vec<f64>]) -> Vec<f64> {
    let s = transition.len();
    let mut pi = vec![1.0 / s as f64; s];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..s).map(|b| (0..s).map(|a| pi[a] * transition[a][b]).sum()).collect();
        let diff: f64 = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

/// Criterion 10.
pub fn check_lln() -> Result<Outcome> {
    let (kernel, root) = geometric_chain()?;
    let q = two_type_chain();
    let batch = sample_conditioned_batch(&kernel, &root, 200, 2000, 10, DEFAULT_RETRY_BUDGET)?;
    let measures: Vec<PairMeasure> =
        batch.iter().map(|r| TreeCounts::of(&r.tree, 2).pair_measure()).collect::<Result<_>>()?;
    let mean = mean_pair_measure(&measures).ok_or_else(|| Error::domain("no samples"))?;
    let pi = stationary(&q);
    let target = PairMeasure::from_rows((0..2).map(|a| (0..2).map(|b| pi[a] * q[a][b]).collect()).collect())?;
    let tv = mean.tv_distance(&target);
    Ok(Outcome { passed: tv <= 0.05, detail: format!("tv(mean L_X, pi (x) Q) = {tv:.4}") })
}

fn random_subconsistent(rng: &mut ChaCha8Rng) -> Result<(PairMeasure, OffspringMeasure)> {
    let size = 2;
    let mut atoms = BTreeMap::new();
    for _ in 0..5 {
        let ty = rng.random_range(0..size);
        let count = rng.random_range(0..=3);
        let children: Vec<usize> = (0..count).map(|_| rng.random_range(0..size)).collect();
        *atoms.entry((ty, OffspringConfig::new(children))).or_insert(0.0) += rng.random_range(0.1..1.0);
    }
    let total: f64 = atoms.values().sum();
    let nu = OffspringMeasure::new(size, atoms.into_iter().map(|(k, w)| (k, w / total)))?;
    let mut varpi = nu.mean_children();
    for a in 0..size {
        for b in 0..size {
            varpi.set(a, b, varpi.get(a, b) + rng.random_range(0.01..0.1));
        }
    }
    Ok((varpi, nu))
}

fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Criterion 11. The distance is the larger of the two total variations.
pub fn check_repair() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut passed = true;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..10 {
        let (varpi, nu) = random_subconsistent(&mut rng)?;
        if check_consistency(&varpi, &nu, 1e-10)? != Consistency::SubConsistent {
            passed = false;
        }
        let mut points = Vec::new();
        for n in [100usize, 1_000, 10_000] {
            let (w_hat, nu_hat) = repair_consistency(&varpi, &nu, n)?;
            passed &= check_consistency(&w_hat, &nu_hat, 1e-10)? == Consistency::Consistent;
            points.push((n as f64, tv_distance(&nu_hat, &nu).max(w_hat.tv_distance(&varpi))));
        }
        let slope = log_log_slope(&points);
        lo = lo.min(slope);
        hi = hi.max(slope);
        passed &= (slope + 1.0).abs() <= 0.1;
    }
    Ok(Outcome { passed, detail: format!("10 inputs, log-log slopes in [{lo:.4}, {hi:.4}]") })
}

/// Every file under `dir` except `manifest.json`, keyed by relative path.
pub fn data_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.file_name().is_some_and(|f| f != "manifest.json") {
                let rel = path.strip_prefix(root).unwrap_or(&path).display().to_string();
                out.insert(rel, std::fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Writes the inputs used by the determinism check into `dir`: `kernel.json`
/// (geometric(1/2) with the 2-type chain) and `center.csv`, an offspring ball
/// center.
pub fn write_determinism_inputs(dir: &Path) -> Result<()> {
    let alphabet = Alphabet::letters(2);
    let doc = KernelSpecDocument::factored(&alphabet, &[0.5, 0.5], CountLaw::geometric(0.5)?, two_type_chain());
    std::fs::write(dir.join("kernel.json"), serde_json::to_string_pretty(&doc)?)?;
    let center = OffspringMeasure::new(
        2,
        [((0, OffspringConfig::new(vec![0])), 0.5), ((1, OffspringConfig::new(vec![1])), 0.5)],
    )?;
    std::fs::write(dir.join("center.csv"), center.to_csv(&alphabet))?;
    Ok(())
}

/// Criterion 12, in process: the same commands under rayon pools of 1 and 4
/// threads, twice each.
pub fn check_determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    write_determinism_inputs(tmp.path())?;
    let mut runs = Vec::new();
    for (i, threads) in [1usize, 4, 1, 4].into_iter().enumerate() {
        let pool =
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Resource(e.to_string()))?;
        let sim_dir = tmp.path().join(format!("sim{i}"));
        let est_dir = tmp.path().join(format!("est{i}"));
        let sim = SimulateArgs {
            kernel: tmp.path().join("kernel.json"),
            n: 30,
            samples: 40,
            seed: 1,
            out: sim_dir.clone(),
            conditioned: true,
            retry_budget: DEFAULT_RETRY_BUDGET,
        };
        let est = EstimateArgs {
            kernel: tmp.path().join("kernel.json"),
            event: format!("ball:center={},radius=0.3", tmp.path().join("center.csv").display()),
            n_list: "3..6".into(),
            samples: 5_000,
            tilt: "auto".into(),
            seed: 2,
            out: Some(est_dir.clone()),
            k: Some(3),
        };
        pool.install(|| -> Result<()> {
            cli::simulate(&sim)?;
            cli::estimate(&est, &mut std::io::sink(), &mut std::io::sink())
        })?;
        let mut files = data_files(&sim_dir)?;
        files.extend(data_files(&est_dir)?.into_iter().map(|(k, v)| (format!("estimate/{k}"), v)));
        runs.push(files);
    }
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    Ok(Outcome {
        passed: identical,
        detail: format!("{} data files compared across 4 runs (threads 1, 4, 1, 4)", runs[0].len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_pools_small_cells() {
        let (stat, dof, p) = chi_square_gof(&[50, 50, 1, 0], &[0.495, 0.495, 0.005, 0.005]);
        assert_eq!(dof, 1);
        assert!(stat < 1.0 && p > 0.3, "{stat} {p}");
        let (_, _, p) = chi_square_gof(&[90, 10], &[0.5, 0.5]);
        assert!(p < 1e-10);
    }

    #[test]
    fn catalan_numbers() {
        let c: Vec<f64> = (0..6).map(catalan).collect();
        assert_eq!(c, vec![1.0, 1.0, 2.0, 5.0, 14.0, 42.0]);
    }

    #[test]
    fn stationary_law() {
        let pi = stationary(&two_type_chain());
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_check_is_rejected() {
        assert!(run(Some("nope")).is_err());
    }
}
