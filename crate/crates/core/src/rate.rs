//! Rate functions.
//!
//! All logarithms are natural. `H(nu || mu) = sum nu log(nu / mu)` with
//! `0 log 0 = 0`, and `+inf` when `nu` charges a point `mu` does not.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::empirical::{check_consistency, Consistency, OffspringMeasure, PairMeasure};
use crate::error::{Error, Result};
use crate::law::CountLaw;
use crate::model::{classify, OffspringConfig, OffspringKernel};

/// A value in `[0, +inf]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct RateValue(f64);

impl RateValue {
    pub const INFINITE: RateValue = RateValue(f64::INFINITY);
    pub const ZERO: RateValue = RateValue(0.0);

    pub fn new(value: f64) -> Self {
        debug_assert!(!value.is_nan());
        RateValue(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// `None` for `+inf`.
    pub fn finite(self) -> Option<f64> {
        self.0.is_finite().then_some(self.0)
    }
}

impl fmt::Display for RateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match (self.0.is_finite(), f.precision()) {
            (false, _) => "inf".to_owned(),
            (true, Some(p)) => format!("{:.*}", p, self.0),
            (true, None) => self.0.to_string(),
        };
        match (f.width(), f.align()) {
            (None, _) => f.write_str(&text),
            (Some(w), Some(fmt::Alignment::Left)) => write!(f, "{text:<w$}"),
            (Some(w), Some(fmt::Alignment::Center)) => write!(f, "{text:^w$}"),
            (Some(w), _) => write!(f, "{text:>w$}"),
        }
    }
}

impl Serialize for RateValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.finite().serialize(s)
    }
}

/// `sum_i nu_i log(nu_i / mu_i)` over paired weights.
fn entropy_terms(pairs: impl IntoIterator<Item = (f64, f64)>) -> RateValue {
    let mut total = 0.0;
    for (nu, mu) in pairs {
        if nu > 0.0 {
            if mu <= 0.0 {
                return RateValue::INFINITE;
            }
            total += nu * (nu / mu).ln();
        }
    }
    RateValue(total)
}

/// Relative entropy of two vectors on the same finite space.
pub fn relative_entropy(nu: &[f64], mu: &[f64]) -> Result<RateValue> {
    if nu.len() != mu.len() {
        return Err(Error::validation("relative entropy of vectors with different lengths"));
    }
    if nu.iter().chain(mu).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::validation("relative entropy needs finite nonnegative weights"));
    }
    Ok(entropy_terms(nu.iter().copied().zip(mu.iter().copied())))
}

/// `H(nu || nu_1 (x) Q)`, evaluated on the support of `nu` only.
pub fn offspring_entropy(nu: &OffspringMeasure, kernel: &OffspringKernel) -> Result<RateValue> {
    same_size(nu.size(), kernel.size())?;
    let nu1 = nu.first_marginal();
    Ok(entropy_terms(nu.iter().map(|(a, c, w)| (w, nu1[a] * kernel.prob(a, c)))))
}

fn same_size(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::validation(format!("measure over {a} types used with a kernel over {b} types")));
    }
    Ok(())
}

/// Tolerances for the structural conditions of `J`, `J_k` and `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateOptions {
    /// Allowed `max_b |varpi_2(b) - nu_1(b)|`. Realized trees differ by the
    /// root, `1/n`, so callers evaluating them pass at least that.
    pub marginal_tol: f64,
    pub consistency_tol: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { marginal_tol: 1e-9, consistency_tol: 1e-10 }
    }
}

impl RateOptions {
    /// Options for the empirical measures of a tree with `n` vertices.
    pub fn for_tree_size(n: usize) -> Self {
        RateOptions { marginal_tol: 1.0 / n as f64 + 1e-12, ..Self::default() }
    }
}

fn marginals_match(varpi: &PairMeasure, nu: &OffspringMeasure, tol: f64) -> bool {
    let (w2, nu1) = (varpi.second_marginal(), nu.first_marginal());
    w2.iter().zip(&nu1).all(|(x, y)| (x - y).abs() <= tol)
}

/// `J(varpi, nu) = H(nu || nu_1 (x) Q)` on sub-consistent pairs with
/// `varpi_2 = nu_1`, `+inf` elsewhere.
pub fn rate_j(
    varpi: &PairMeasure,
    nu: &OffspringMeasure,
    kernel: &OffspringKernel,
    opts: &RateOptions,
) -> Result<RateValue> {
    same_size(varpi.size(), kernel.size())?;
    let class = check_consistency(varpi, nu, opts.consistency_tol)?;
    if class == Consistency::Neither || !marginals_match(varpi, nu, opts.marginal_tol) {
        return Ok(RateValue::INFINITE);
    }
    offspring_entropy(nu, kernel)
}

/// `J_k` for a kernel truncated at `k` children: as [`rate_j`] but requiring
/// exact consistency and `nu` supported on configurations with at most `k`
/// children.
pub fn rate_jk(
    varpi: &PairMeasure,
    nu: &OffspringMeasure,
    kernel_k: &OffspringKernel,
    opts: &RateOptions,
) -> Result<RateValue> {
    same_size(varpi.size(), kernel_k.size())?;
    let k =
        kernel_k.support_bound().ok_or_else(|| Error::domain("J_k needs a kernel with bounded offspring counts"))?;
    if nu.max_count() > k
        || check_consistency(varpi, nu, opts.consistency_tol)? != Consistency::Consistent
        || !marginals_match(varpi, nu, opts.marginal_tol)
    {
        return Ok(RateValue::INFINITE);
    }
    offspring_entropy(nu, kernel_k)
}

/// `K(nu) = H(nu || nu_1 (x) Q)` when `<m>nu(b) <= nu_1(b)` for every `b`.
pub fn rate_k(nu: &OffspringMeasure, kernel: &OffspringKernel, tol: f64) -> Result<RateValue> {
    same_size(nu.size(), kernel.size())?;
    let nu1 = nu.first_marginal();
    if nu.child_type_mass().iter().zip(&nu1).any(|(m, v)| *m > v + tol) {
        return Ok(RateValue::INFINITE);
    }
    offspring_entropy(nu, kernel)
}

const IP_BISECTION_STEPS: usize = 400;
const IP_PROBE_STEPS: u32 = 60;
const LAMBDA_CAP: f64 = 700.0;

fn min_support(law: &CountLaw) -> usize {
    (0..).find(|&l| law.pmf(l) > 0.0).unwrap_or(0)
}

/// `I_p(x) = sup_lambda { lambda x - Lambda_p(lambda) }` for `x >= 0`.
///
/// Solves `Lambda_p'(lambda) = x` by bisection. Outside the range of tilted
/// means the value is `+inf`; at an atom at the edge of the support it is
/// `-log p(edge)`.
pub fn legendre_ip(law: &CountLaw, x: f64) -> Result<RateValue> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("I_p needs a finite x >= 0, got {x}")));
    }
    let lo_edge = min_support(law) as f64;
    if x < lo_edge {
        return Ok(RateValue::INFINITE);
    }
    if x == lo_edge {
        return Ok(RateValue(-law.pmf(lo_edge as usize).ln()));
    }
    if let Some(top) = law.max_support() {
        if x > top as f64 {
            return Ok(RateValue::INFINITE);
        }
        if x == top as f64 {
            return Ok(RateValue(-law.pmf(top).ln()));
        }
    }
    let mean = law.mean();
    if x == mean {
        return Ok(RateValue::ZERO);
    }
    let slope = |l: f64| law.log_mgf(l).map(|m| m.slope);
    let boundary = law.mgf_boundary();
    let (mut lo, mut hi);
    if x < mean {
        hi = 0.0;
        lo = -1.0;
        while slope(lo)? > x {
            if lo <= -LAMBDA_CAP {
                break;
            }
            hi = lo;
            lo = (2.0 * lo).max(-LAMBDA_CAP);
        }
    } else {
        lo = 0.0;
        let mut step = 0;
        hi = upper_probe(boundary, step);
        while slope(hi)? < x {
            step += 1;
            if step > IP_PROBE_STEPS {
                // Lambda' stays below x up to the boundary: the supremum is the
                // one-sided limit at the boundary
                return Ok(RateValue((hi * x - law.log_mgf(hi)?.value).max(0.0)));
            }
            lo = hi;
            hi = upper_probe(boundary, step);
        }
    }
    for _ in 0..IP_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if slope(mid)? < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    Ok(RateValue((lambda * x - law.log_mgf(lambda)?.value).max(0.0)))
}

fn upper_probe(boundary: f64, step: u32) -> f64 {
    if boundary.is_finite() {
        boundary * (1.0 - 0.5f64.powi(step as i32 + 1))
    } else {
        2f64.powi(step as i32).min(LAMBDA_CAP)
    }
}

/// `x log x - (x + 1) log((x + 1)/2)`, the rate for the geometric law with
/// `p(l) = 2^-(l+1)`.
pub fn ip_geometric_closed(x: f64) -> Result<RateValue> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("I_p needs a finite x >= 0, got {x}")));
    }
    let xlogx = if x == 0.0 { 0.0 } else { x * x.ln() };
    Ok(RateValue((xlogx - (x + 1.0) * ((x + 1.0) / 2.0).ln()).max(0.0)))
}

const PROBABILITY_TOL: f64 = 1e-9;

fn check_transition(transition: &[Vec<f64>], size: usize) -> Result<()> {
    if transition.len() != size || transition.iter().any(|r| r.len() != size) {
        return Err(Error::validation(format!("transition matrix must be {size} x {size}")));
    }
    for (a, row) in transition.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("transition row {a} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

fn check_probability(mu: &PairMeasure) -> Result<()> {
    let mass = mu.mass();
    if (mass - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::validation(format!("pair measure has mass {mass}, expected a probability")));
    }
    Ok(())
}

/// `H(mu || mu_1 (x) Q)` with `mu_1 (x) Q(a, b) = mu_1(a) Q(a -> b)`.
fn chain_entropy(mu: &PairMeasure, transition: &[Vec<f64>]) -> RateValue {
    let mu1 = mu.first_marginal();
    let s = mu.size();
    entropy_terms(
        (0..s).flat_map(|a| (0..s).map(move |b| (a, b))).map(|(a, b)| (mu.get(a, b), mu1[a] * transition[a][b])),
    )
}

/// `I(mu) = H(mu || mu_1 (x) Q) + sum_a mu_2(a) I_p(mu_1(a) / mu_2(a))` when
/// `mu_1 << mu_2`, `+inf` otherwise.
pub fn rate_i(mu: &PairMeasure, transition: &[Vec<f64>], law: &CountLaw) -> Result<RateValue> {
    check_probability(mu)?;
    check_transition(transition, mu.size())?;
    let (mu1, mu2) = (mu.first_marginal(), mu.second_marginal());
    if mu1.iter().zip(&mu2).any(|(x, y)| *x > 0.0 && *y <= 0.0) {
        return Ok(RateValue::INFINITE);
    }
    let mut total = chain_entropy(mu, transition).value();
    for (x, y) in mu1.iter().zip(&mu2) {
        if *y > 0.0 {
            total += y * legendre_ip(law, x / y)?.value();
        }
    }
    Ok(RateValue(total))
}

/// The geometric specialization
/// `H(mu || mu_1 (x) Q) + H(mu_1 || m) + H(mu_2 || m)` with `m = (mu_1 + mu_2)/2`.
/// Inputs whose mass differs from one by more than `1e-9` are rejected, since
/// the marginals must then carry different masses.
pub fn rate_i_geometric(mu: &PairMeasure, transition: &[Vec<f64>]) -> Result<RateValue> {
    check_probability(mu)?;
    check_transition(transition, mu.size())?;
    let (mu1, mu2) = (mu.first_marginal(), mu.second_marginal());
    if mu1.iter().zip(&mu2).any(|(x, y)| *x > 0.0 && *y <= 0.0) {
        return Ok(RateValue::INFINITE);
    }
    let mid: Vec<f64> = mu1.iter().zip(&mu2).map(|(x, y)| 0.5 * (x + y)).collect();
    let total = chain_entropy(mu, transition).value()
        + relative_entropy(&mu1, &mid)?.value()
        + relative_entropy(&mu2, &mid)?.value();
    Ok(RateValue(total))
}

/// Both sides of the infimum identity for one `(phi, q^, p, k)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaOracle {
    /// `min H(nu~ || q)` over probability measures on configurations with at
    /// most `k` children subject to `sum_c m(b, c) nu~(c) = phi(b)`.
    pub bruteforce: RateValue,
    /// `z H(phi/z || q^) + I_p(z)` with `z = sum phi`.
    pub closed_form: RateValue,
    pub z: f64,
    /// Largest constraint violation at the returned dual point.
    pub residual: f64,
    pub iterations: usize,
}

const ORACLE_TOL: f64 = 1e-12;
const ORACLE_MAX_ITER: usize = 500;

/// Evaluates the infimum identity two ways. The reference law is
/// `q(c) = p(n) prod_i q^(a_i)`, not renormalized on the truncated set, so
/// truncation can only raise the brute-force minimum.
///
/// The brute-force side maximizes the dual
/// `alpha . phi - log sum_c q(c) e^{alpha . m(c)}` by Newton's method with
/// backtracking; configurations enter through their multiplicity vectors.
pub fn lemma_inf_oracle(phi: &[f64], q_hat: &[f64], law: &CountLaw, k: usize) -> Result<LemmaOracle> {
    if phi.len() != q_hat.len() || phi.is_empty() {
        return Err(Error::validation("phi and q^ must be nonempty and of equal length"));
    }
    if phi.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain("phi must be finite and nonnegative"));
    }
    if q_hat.iter().any(|&x| !(x >= 0.0)) || (q_hat.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::validation("q^ must be a probability vector"));
    }
    let z: f64 = phi.iter().sum();
    let closed_form = if z == 0.0 {
        legendre_ip(law, 0.0)?
    } else {
        let shape: Vec<f64> = phi.iter().map(|x| x / z).collect();
        let h = relative_entropy(&shape, q_hat)?;
        let ip = legendre_ip(law, z)?;
        RateValue(z * h.value() + ip.value())
    };
    let bruteforce_result = lemma_bruteforce(phi, q_hat, law, k)?;
    Ok(LemmaOracle {
        bruteforce: bruteforce_result.0,
        closed_form,
        z,
        residual: bruteforce_result.1,
        iterations: bruteforce_result.2,
    })
}

fn lemma_bruteforce(phi: &[f64], q_hat: &[f64], law: &CountLaw, k: usize) -> Result<(RateValue, f64, usize)> {
    let active: Vec<usize> = (0..phi.len()).filter(|&b| phi[b] > 0.0).collect();
    if active.iter().any(|&b| q_hat[b] <= 0.0) || phi.iter().sum::<f64>() > k as f64 * (1.0 + 1e-12) {
        return Ok((RateValue::INFINITE, f64::INFINITY, 0));
    }
    let target: Vec<f64> = active.iter().map(|&b| phi[b]).collect();
    let d = active.len();
    // (multiplicities over active types, log q summed over configurations)
    let mut points: Vec<(Vec<f64>, f64)> = Vec::new();
    let log_q: Vec<f64> = active.iter().map(|&b| q_hat[b].ln()).collect();
    let mut ln_fact = vec![0.0f64; k + 1];
    for i in 1..=k {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let mut m = vec![0usize; d];
    loop {
        let n: usize = m.iter().sum();
        let pn = law.pmf(n);
        if pn > 0.0 {
            let mut lw = pn.ln() + ln_fact[n];
            for (i, &mi) in m.iter().enumerate() {
                lw += mi as f64 * log_q[i] - ln_fact[mi];
            }
            points.push((m.iter().map(|&x| x as f64).collect(), lw));
        }
        if !next_composition(&mut m, k) {
            break;
        }
    }
    if points.is_empty() {
        return Ok((RateValue::INFINITE, f64::INFINITY, 0));
    }
    let dual = |alpha: &[f64]| -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let exps: Vec<f64> =
            points.iter().map(|(m, lw)| lw + m.iter().zip(alpha).map(|(x, a)| x * a).sum::<f64>()).collect();
        let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = exps.iter().map(|e| (e - top).exp()).collect();
        let zsum: f64 = ws.iter().sum();
        let mut mean = vec![0.0; d];
        for ((m, _), w) in points.iter().zip(&ws) {
            for i in 0..d {
                mean[i] += w * m[i] / zsum;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for ((m, _), w) in points.iter().zip(&ws) {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += w / zsum * (m[i] - mean[i]) * (m[j] - mean[j]);
                }
            }
        }
        let log_z = top + zsum.ln();
        let value = alpha.iter().zip(&target).map(|(a, t)| a * t).sum::<f64>() - log_z;
        (value, mean, cov)
    };
    let mut alpha = vec![0.0; d];
    let (mut value, mut mean, mut cov) = dual(&alpha);
    let mut iterations = 0;
    let residual = |mean: &[f64]| target.iter().zip(mean).map(|(t, m)| (t - m).abs()).fold(0.0, f64::max);
    while iterations < ORACLE_MAX_ITER && residual(&mean) > ORACLE_TOL * (1.0 + target.iter().sum::<f64>()) {
        iterations += 1;
        let grad: Vec<f64> = target.iter().zip(&mean).map(|(t, m)| t - m).collect();
        let step = solve_spd(&cov, &grad).unwrap_or_else(|| grad.clone());
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        // the Newton decrement bounds the remaining dual gap
        if slope < 1e-24 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> = alpha.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let (v, m, c) = dual(&trial);
            // near the optimum the value stops resolving progress; the residual still does
            if v.is_finite() && (v >= value + 1e-4 * t * slope || residual(&m) < 0.5 * residual(&mean)) {
                alpha = trial;
                value = v;
                mean = m;
                cov = c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((RateValue(value.max(0.0)), residual(&mean), iterations))
}

/// Advances `m` to the next vector of nonnegative integers with sum at most
/// `k`; false after the last one.
fn next_composition(m: &mut [usize], k: usize) -> bool {
    let total: usize = m.iter().sum();
    if m.is_empty() {
        return false;
    }
    if total < k {
        m[0] += 1;
        return true;
    }
    for i in 0..m.len() - 1 {
        if m[i] > 0 {
            m[i] = 0;
            m[i + 1] += 1;
            return true;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &v)| row.iter().copied().chain([v]).collect()).collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for c in col..=n {
                    m[row][c] -= f * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Settings for [`minimize_rate_ball`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallOptions {
    /// Step of the line search grid and initial step of the local descent.
    pub resolution: f64,
    pub max_atoms: usize,
    pub max_sweeps: usize,
    pub rate: RateOptions,
}

impl Default for BallOptions {
    fn default() -> Self {
        BallOptions { resolution: 0.01, max_atoms: 256, max_sweeps: 400, rate: RateOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallMinimum {
    pub value: RateValue,
    pub pair: PairMeasure,
    pub offspring: OffspringMeasure,
    pub resolution: f64,
}

/// Approximate infimum of `J` over
/// `{(varpi', nu') : tv(nu', nu) <= r, tv(varpi', varpi) <= r}` with `nu'`
/// supported on configurations with at most `k` children. Without a pair
/// center only `nu'` is constrained, and the infimum is that of `K`.
///
/// For fixed `nu'` the closest admissible `varpi'` is explicit, so the search
/// runs over `nu'` only: a grid along the segment from the center to a zero
/// of the truncated problem, then pairwise mass transfers with shrinking
/// steps. The result is an upper bound on the true infimum whose quality is
/// governed by `resolution`.
pub fn minimize_rate_ball(
    center_pair: Option<&PairMeasure>,
    center: &OffspringMeasure,
    radius: f64,
    kernel: &OffspringKernel,
    k: usize,
    opts: &BallOptions,
) -> Result<BallMinimum> {
    same_size(center.size(), kernel.size())?;
    if let Some(p) = center_pair {
        same_size(p.size(), kernel.size())?;
    }
    if !(radius >= 0.0) {
        return Err(Error::domain("ball radius must be nonnegative"));
    }
    if center.max_count() > k {
        return Err(Error::domain(format!("ball center has configurations with more than {k} children")));
    }
    let size = kernel.size();
    let mut atoms: Vec<(usize, OffspringConfig)> = Vec::new();
    for a in 0..size {
        for (c, _) in kernel.configs_up_to(a, k) {
            atoms.push((a, c));
            if atoms.len() > opts.max_atoms {
                return Err(Error::Resource(format!(
                    "ball search over more than {} configurations; lower k or raise the budget",
                    opts.max_atoms
                )));
            }
        }
    }
    for (a, c, _) in center.iter() {
        if !atoms.iter().any(|(b, d)| *b == a && d == c) {
            atoms.push((a, c.clone()));
        }
    }
    atoms.sort();
    let problem = BallProblem::new(&atoms, center_pair, center, radius, kernel, opts);
    let start: Vec<f64> = atoms.iter().map(|(a, c)| center.get(*a, c)).collect();
    let target = problem.zero_target(kernel, k)?;

    let point = |t: f64| -> Vec<f64> { start.iter().zip(&target).map(|(s, g)| (1.0 - t) * s + t * g).collect() };
    let steps = (1.0 / opts.resolution.max(1e-6)).ceil() as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_feasible: Option<usize> = None;
    for i in 0..=steps {
        let t = (i as f64 / steps as f64).min(1.0);
        let v = point(t);
        if let Some(f) = problem.objective(&v) {
            last_feasible = Some(i);
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, v));
            }
        }
    }
    if let Some(i) = last_feasible.filter(|&i| i < steps) {
        // the feasible part of the segment is an interval; refine its far end
        let (mut lo, mut hi) = (i as f64 / steps as f64, (i + 1) as f64 / steps as f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if problem.objective(&point(mid)).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v = point(lo);
        if let Some(f) = problem.objective(&v) {
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, v));
            }
        }
    }
    let Some((mut value, mut v)) = best else {
        return Ok(BallMinimum {
            value: RateValue::INFINITE,
            pair: center_pair.cloned().unwrap_or_else(|| center.mean_children()),
            offspring: center.clone(),
            resolution: opts.resolution,
        });
    };
    let mut eps = opts.resolution;
    let floor = opts.resolution * 1e-4;
    let mut sweeps = 0;
    while eps >= floor && sweeps < opts.max_sweeps && value > 0.0 {
        sweeps += 1;
        let mut improved = false;
        for i in 0..v.len() {
            for j in 0..v.len() {
                if i == j || v[i] <= 0.0 {
                    continue;
                }
                let delta = eps.min(v[i]);
                let mut trial = v.clone();
                trial[i] -= delta;
                trial[j] += delta;
                if let Some(f) = problem.objective(&trial) {
                    if f < value - 1e-15 {
                        value = f;
                        v = trial;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            eps *= 0.5;
        }
    }
    let offspring = problem.measure(&v);
    let pair = problem.closest_pair(&v);
    Ok(BallMinimum { value: RateValue(value.max(0.0)), pair, offspring, resolution: opts.resolution })
}

struct BallProblem<'a> {
    atoms: &'a [(usize, OffspringConfig)],
    q: Vec<f64>,
    center: Vec<f64>,
    center_pair: Option<&'a PairMeasure>,
    radius: f64,
    size: usize,
    pair_tol: f64,
    consistency_tol: f64,
}

impl<'a> BallProblem<'a> {
    fn new(
        atoms: &'a [(usize, OffspringConfig)],
        center_pair: Option<&'a PairMeasure>,
        center: &OffspringMeasure,
        radius: f64,
        kernel: &OffspringKernel,
        opts: &BallOptions,
    ) -> Self {
        BallProblem {
            atoms,
            q: atoms.iter().map(|(a, c)| kernel.prob(*a, c)).collect(),
            center: atoms.iter().map(|(a, c)| center.get(*a, c)).collect(),
            center_pair,
            radius,
            size: kernel.size(),
            pair_tol: opts.rate.marginal_tol,
            consistency_tol: opts.rate.consistency_tol,
        }
    }

    /// `pi (x) Q_k` with `pi` a nonnegative solution of `A_k pi = rho pi`
    /// extended through the transient types.
    fn zero_target(&self, kernel: &OffspringKernel, k: usize) -> Result<Vec<f64>> {
        let truncated = kernel.truncate(k)?;
        let mean = truncated.mean_matrix()?;
        let report = classify(&mean);
        let mut pi = vec![0.0; self.size];
        if report.weakly_irreducible {
            for (i, &r) in report.recurrent.iter().enumerate() {
                pi[r] = report.right[i];
            }
            for _ in 0..self.size {
                for &t in &report.transient {
                    pi[t] = (0..self.size).map(|b| mean.get(t, b) * pi[b]).sum();
                }
            }
        } else {
            pi.iter_mut().for_each(|x| *x = 1.0 / self.size as f64);
        }
        let total: f64 = pi.iter().sum();
        Ok(self
            .atoms
            .iter()
            .map(|(a, c)| {
                let mass = truncated.mass_up_to(*a, k);
                if mass > 0.0 {
                    pi[*a] / total * truncated.prob(*a, c)
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn measure(&self, v: &[f64]) -> OffspringMeasure {
        OffspringMeasure::from_map_unchecked(
            self.size,
            self.atoms.iter().zip(v).filter(|(_, w)| **w > 0.0).map(|(key, w)| (key.clone(), *w)).collect(),
        )
    }

    /// `(nu_1, <m>nu)`.
    fn moments(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.size;
        let mut nu1 = vec![0.0; s];
        let mut lower = vec![0.0; s * s];
        for ((a, c), &w) in self.atoms.iter().zip(v) {
            nu1[*a] += w;
            for &b in c.children() {
                lower[a * s + b] += w;
            }
        }
        (nu1, lower)
    }

    /// Smallest `tv(varpi', varpi)` over sub-consistent `varpi'` with
    /// `varpi'_2 = nu'_1`; `None` if no such `varpi'` exists.
    fn pair_distance(&self, v: &[f64]) -> Option<f64> {
        let s = self.size;
        let (nu1, lower) = self.moments(v);
        let mut cost = 0.0;
        for b in 0..s {
            let mut floor_sum = 0.0;
            let mut raised = 0.0;
            for a in 0..s {
                let l = lower[a * s + b];
                let w = self.center_weight(a, b, l);
                floor_sum += l;
                cost += (l - w).max(0.0);
                raised += l.max(w);
            }
            if floor_sum > nu1[b] + self.consistency_tol {
                return None;
            }
            cost += (raised - nu1[b]).abs();
        }
        Some(if self.center_pair.is_some() { 0.5 * cost } else { 0.0 })
    }

    fn closest_pair(&self, v: &[f64]) -> PairMeasure {
        let s = self.size;
        let (nu1, lower) = self.moments(v);
        let mut out = PairMeasure::zero(s);
        for b in 0..s {
            let mut col: Vec<f64> =
                (0..s).map(|a| lower[a * s + b].max(self.center_weight(a, b, lower[a * s + b]))).collect();
            let mut excess = col.iter().sum::<f64>() - nu1[b];
            if excess > 0.0 {
                for a in 0..s {
                    let room = (col[a] - lower[a * s + b]).min(excess);
                    col[a] -= room;
                    excess -= room;
                }
            } else if excess < 0.0 {
                let a = (0..s).max_by(|&x, &y| col[x].total_cmp(&col[y])).unwrap_or(0);
                col[a] -= excess;
            }
            for a in 0..s {
                out.set(a, b, col[a].max(0.0));
            }
        }
        out
    }

    /// Pair center entry; without a center the floor itself, which makes
    /// only feasibility count.
    fn center_weight(&self, a: usize, b: usize, floor: f64) -> f64 {
        self.center_pair.map_or(floor, |p| p.get(a, b))
    }

    /// `J` at `nu'` if the point lies in the ball, `None` otherwise.
    fn objective(&self, v: &[f64]) -> Option<f64> {
        let tv = 0.5 * v.iter().zip(&self.center).map(|(x, y)| (x - y).abs()).sum::<f64>();
        if tv > self.radius + 1e-12 {
            return None;
        }
        if self.pair_distance(v)? > self.radius + self.pair_tol {
            return None;
        }
        let (nu1, _) = self.moments(v);
        let h = entropy_terms(self.atoms.iter().zip(v).zip(&self.q).map(|(((a, _), &w), &q)| (w, nu1[*a] * q)));
        h.finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{factored_kernel, Alphabet};

    fn geo() -> CountLaw {
        CountLaw::geometric(0.5).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(relative_entropy(&[0.5, 0.5], &[0.5, 0.5]).unwrap().value(), 0.0);
        let h = relative_entropy(&[0.5, 0.5], &[0.25, 0.75]).unwrap().value();
        assert!((h - 0.143_841_036_225_890_1).abs() < 1e-12, "{h}");
        assert!(!relative_entropy(&[0.5, 0.5], &[1.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn ip_examples() {
        assert!((legendre_ip(&geo(), 0.0).unwrap().value() - 2f64.ln()).abs() < 1e-15);
        assert!(legendre_ip(&geo(), 1.0).unwrap().value().abs() < 1e-12);
        let v = legendre_ip(&geo(), 2.0).unwrap().value();
        assert!((v - (2.0 * 2f64.ln() - 3.0 * 1.5f64.ln())).abs() < 1e-10, "{v}");
        assert!((v - 0.169_899_0).abs() < 5e-8);
        assert!(legendre_ip(&geo(), -0.1).is_err());
    }

    #[test]
    fn ip_closed_form_examples() {
        assert!((ip_geometric_closed(0.0).unwrap().value() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(ip_geometric_closed(1.0).unwrap().value(), 0.0);
        assert!((ip_geometric_closed(2.0).unwrap().value() - 0.169_899_0).abs() < 5e-8);
    }

    #[test]
    fn ip_bounded_support() {
        let t = CountLaw::table(vec![0.25, 0.5, 0.25]).unwrap();
        assert!((legendre_ip(&t, 2.0).unwrap().value() - 4f64.ln()).abs() < 1e-15);
        assert!(!legendre_ip(&t, 2.5).unwrap().is_finite());
        assert!(legendre_ip(&t, 1.0).unwrap().value().abs() < 1e-15);
        // sup near the top edge approaches -log p(2)
        assert!((legendre_ip(&t, 1.999_999).unwrap().value() - 4f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn ip_poisson_matches_closed_form() {
        let p = CountLaw::poisson(1.0).unwrap();
        for i in 1..=100 {
            let x = i as f64 * 0.05;
            let want = x * x.ln() - x + 1.0;
            assert!((legendre_ip(&p, x).unwrap().value() - want).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn rate_i_two_ways() {
        let mu = PairMeasure::from_rows(vec![vec![0.3, 0.2], vec![0.1, 0.4]]).unwrap();
        let q = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let a = rate_i(&mu, &q, &geo()).unwrap().value();
        let b = rate_i_geometric(&mu, &q).unwrap().value();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn rate_i_zero_and_infinite() {
        let q = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        // stationary pi = (2/3, 1/3)
        let pi = [2.0 / 3.0, 1.0 / 3.0];
        let mu = PairMeasure::from_rows((0..2).map(|a| (0..2).map(|b| pi[a] * q[a][b]).collect()).collect()).unwrap();
        assert!(rate_i(&mu, &q, &geo()).unwrap().value().abs() < 1e-12);
        let bad = PairMeasure::from_rows(vec![vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        assert!(!rate_i(&bad, &q, &geo()).unwrap().is_finite());
        assert!(!rate_i_geometric(&bad, &q).unwrap().is_finite());
    }

    #[test]
    fn k_examples() {
        let k = factored_kernel(geo(), vec![vec![1.0]], Alphabet::letters(1)).unwrap();
        let nu = OffspringMeasure::new(1, [((0, OffspringConfig::uniform(0, 2)), 1.0)]).unwrap();
        assert!(!rate_k(&nu, &k, 1e-10).unwrap().is_finite());
        let nu = OffspringMeasure::new(
            1,
            [((0, OffspringConfig::empty()), 0.5), ((0, OffspringConfig::uniform(0, 1)), 0.5)],
        )
        .unwrap();
        let want = 0.5 * (0.5f64 / 0.5).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((rate_k(&nu, &k, 1e-10).unwrap().value() - want).abs() < 1e-15);
    }

    #[test]
    fn lemma_oracle_trivial_cases() {
        let r = lemma_inf_oracle(&[0.0, 0.0], &[0.5, 0.5], &geo(), 6).unwrap();
        assert!((r.bruteforce.value() - 2f64.ln()).abs() < 1e-12);
        assert!((r.closed_form.value() - 2f64.ln()).abs() < 1e-12);
        let r = lemma_inf_oracle(&[0.3, 0.7], &[0.3, 0.7], &CountLaw::poisson(1.0).unwrap(), 14).unwrap();
        assert!(r.closed_form.value().abs() < 1e-12);
        assert!(r.bruteforce.value().abs() < 1e-6, "{:?}", r);
    }

    #[test]
    fn lemma_oracle_geometric_gap() {
        let r = lemma_inf_oracle(&[0.8, 0.4], &[0.5, 0.5], &geo(), 6).unwrap();
        assert!((r.closed_form.value() - 0.077_063_087).abs() < 1e-8, "{r:?}");
        let gap = r.bruteforce.value() - r.closed_form.value();
        // independent evaluation of the same truncated program
        assert!((gap - 0.0171).abs() < 2e-4, "{gap}");
        let r8 = lemma_inf_oracle(&[0.8, 0.4], &[0.5, 0.5], &geo(), 8).unwrap();
        assert!(r8.bruteforce.value() - r8.closed_form.value() < gap);
    }

    #[test]
    fn lemma_oracle_infeasible() {
        let r = lemma_inf_oracle(&[2.0, 1.5], &[0.5, 0.5], &geo(), 3).unwrap();
        assert!(!r.bruteforce.is_finite());
    }

    #[test]
    fn compositions_enumerated_once() {
        let mut m = vec![0; 3];
        let mut count = 1;
        while next_composition(&mut m, 4) {
            count += 1;
            assert!(m.iter().sum::<usize>() <= 4);
        }
        // C(4 + 3, 3)
        assert_eq!(count, 35);
    }

    #[test]
    fn ball_radius_extremes() {
        let kernel = factored_kernel(geo(), vec![vec![0.9, 0.1], vec![0.2, 0.8]], Alphabet::letters(2)).unwrap();
        let nu = OffspringMeasure::new(
            2,
            [
                ((0, OffspringConfig::empty()), 0.25),
                ((0, OffspringConfig::new(vec![0, 1])), 0.25),
                ((1, OffspringConfig::new(vec![0])), 0.25),
                ((1, OffspringConfig::empty()), 0.25),
            ],
        )
        .unwrap();
        // sub-consistent, with varpi_2 = nu_1 = (1/2, 1/2)
        let pair = PairMeasure::from_rows(vec![vec![0.25, 0.5], vec![0.25, 0.0]]).unwrap();
        let opts = BallOptions::default();
        let j = rate_j(&pair, &nu, &kernel, &opts.rate).unwrap().value();
        assert!(j.is_finite());
        let r0 = minimize_rate_ball(Some(&pair), &nu, 0.0, &kernel, 2, &opts).unwrap();
        assert!((r0.value.value() - j).abs() < 1e-9, "{:?} vs {j}", r0.value);
        let r1 = minimize_rate_ball(Some(&pair), &nu, 1.0, &kernel, 2, &opts).unwrap();
        // the truncated zero is not a zero of J under the untruncated kernel
        let tail: f64 = -(kernel.mass_up_to(0, 2)).ln();
        assert!(r1.value.value() <= tail + 1e-9, "{:?}", r1.value);
        let mut last = r1.value.value();
        for r in [0.5, 0.25, 0.1, 0.05, 0.01] {
            let v = minimize_rate_ball(Some(&pair), &nu, r, &kernel, 2, &opts).unwrap().value.value();
            assert!(v >= last - 1e-9, "radius {r}: {v} < {last}");
            assert!(v <= j + 1e-12);
            last = v;
        }
    }
}
