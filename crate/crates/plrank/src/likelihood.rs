//! MNL probability computations.
//!
//! Exact formulas (stage-wise softmax over a full order, and its sum over
//! the linear extensions of a poset) serve as brute-force oracles. The
//! workhorse is the integral form of the partitioned-preference likelihood:
//!
//! ```text
//! P(S_1 > ... > S_M; w) = prod_{m<M} I_m,
//! I_m = int_0^1 prod_{i in S_m} (1 - u^{a_i}) du,
//! a_i = exp(w_i - logsumexp(w over R_{m+1})),   R_{m+1} = S_{m+1} u ... u S_M
//! ```
//!
//! evaluated by Gauss-Legendre quadrature together with its gradient in one
//! pass. The general-poset approximation decomposes the poset first
//! ([`crate::poset::PartialRanking::decompose`]) and multiplies the
//! per-component values (log-space sum), which is exact for disjoint
//! components.

use rand::Rng;
use thiserror::Error;

use crate::poset::{ItemId, PartialRanking, PartitionedPreference, PosetError};
use crate::scalar::{LogSumAcc, Real};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LikelihoodError {
    #[error("no utility score for item {0}")]
    MissingUtility(ItemId),
    #[error("utility for item {0} is NaN or +inf")]
    InvalidUtility(ItemId),
    #[error("sequence is not a permutation (item {0} repeats)")]
    NotAPermutation(ItemId),
    #[error("numerical evaluation produced a NaN")]
    NonFiniteResult,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("item {0} chosen twice")]
    DuplicateChoice(ItemId),
    #[error("chosen item {0} is not a candidate")]
    ChoiceOutsideCandidates(ItemId),
    #[error(transparent)]
    Poset(#[from] PosetError),
}

/// Per-item utility scores on the natural-log scale, dense over the item
/// universe `0..len`.
///
/// Entries may be `-inf` (an item the model can never choose, e.g. a
/// zero-degree node under preferential attachment) but never NaN or `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityVector<R: Real> {
    scores: Vec<R>,
}

impl<R: Real> UtilityVector<R> {
    pub fn new(scores: Vec<R>) -> Result<Self, LikelihoodError> {
        for (i, &s) in scores.iter().enumerate() {
            if s.is_nan() || s == R::infinity() {
                return Err(LikelihoodError::InvalidUtility(i as ItemId));
            }
        }
        Ok(Self { scores })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            scores: vec![R::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, item: ItemId) -> Result<R, LikelihoodError> {
        self.scores
            .get(item as usize)
            .copied()
            .ok_or(LikelihoodError::MissingUtility(item))
    }

    pub fn as_slice(&self) -> &[R] {
        &self.scores
    }

    /// Adds `c` to every score (log-probabilities are invariant to this).
    pub fn shift(&self, c: R) -> Self {
        Self {
            scores: self.scores.iter().map(|&s| s + c).collect(),
        }
    }
}

/// Dense gradient of a log-likelihood with respect to the utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<R: Real> {
    entries: Vec<R>,
}

impl<R: Real> GradientVector<R> {
    pub fn zeros(n: usize) -> Self {
        Self {
            entries: vec![R::zero(); n],
        }
    }

    pub fn get(&self, item: ItemId) -> R {
        self.entries[item as usize]
    }

    pub fn as_slice(&self) -> &[R] {
        &self.entries
    }

    pub fn as_mut_slice(&mut self) -> &mut [R] {
        &mut self.entries
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.entries.iter_mut().zip(&other.entries) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: R) {
        for a in &mut self.entries {
            *a = *a * c;
        }
    }

    pub fn inf_norm(&self) -> R {
        self.entries
            .iter()
            .fold(R::zero(), |m, &g| m.max(g.abs()))
    }
}

/// Gauss-Legendre rule on (0,1) used for the one-dimensional likelihood
/// integrals.
///
/// The integrand `prod (1 - u^{a_i})` has a weak logarithmic endpoint
/// singularity at `u = 0` when exponents are small, which plain
/// Gauss-Legendre resolves poorly. The rule therefore applies the exact
/// change of variables `u = t^g` (grading exponent `g`, default 5) and
/// stores the transformed nodes and weights; integral values are unchanged
/// and the transformed weights still sum to one.
#[derive(Debug, Clone)]
pub struct QuadratureRule<R: Real> {
    node_count: usize,
    grading: u32,
    target_tolerance: R,
    /// Transformed nodes `u_k`, strictly inside (0,1).
    nodes: Vec<R>,
    /// `ln u_k`.
    ln_nodes: Vec<R>,
    /// `ln(-ln u_k)`.
    ln_neg_ln_nodes: Vec<R>,
    /// Transformed weights, positive.
    weights: Vec<R>,
    /// `ln` of the transformed weights.
    ln_weights: Vec<R>,
}

pub const DEFAULT_QUAD_NODES: usize = 128;
pub const DEFAULT_GRADING: u32 = 5;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

impl<R: Real> Default for QuadratureRule<R> {
    fn default() -> Self {
        Self::new(DEFAULT_QUAD_NODES)
    }
}

impl<R: Real> QuadratureRule<R> {
    pub fn new(node_count: usize) -> Self {
        Self::with_grading(node_count, DEFAULT_GRADING)
    }

    pub fn with_grading(node_count: usize, grading: u32) -> Self {
        assert!(node_count > 0, "quadrature needs at least one node");
        assert!(grading >= 1, "grading exponent must be >= 1");
        let (t, w) = gauss_legendre_unit(node_count);
        let g = grading as f64;
        let mut nodes = Vec::with_capacity(node_count);
        let mut weights = Vec::with_capacity(node_count);
        for (&tk, &wk) in t.iter().zip(&w) {
            nodes.push(R::of(tk.powi(grading as i32)));
            weights.push(R::of(wk * g * tk.powi(grading as i32 - 1)));
        }
        let ln_nodes: Vec<R> = nodes.iter().map(|&u| u.ln()).collect();
        let ln_neg_ln_nodes: Vec<R> = ln_nodes.iter().map(|&l| (-l).ln()).collect();
        let ln_weights: Vec<R> = weights.iter().map(|&w| w.ln()).collect();
        Self {
            node_count,
            grading,
            target_tolerance: R::of(DEFAULT_TOLERANCE),
            nodes,
            ln_nodes,
            ln_neg_ln_nodes,
            weights,
            ln_weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn grading(&self) -> u32 {
        self.grading
    }

    pub fn target_tolerance(&self) -> R {
        self.target_tolerance
    }

    pub fn set_target_tolerance(&mut self, eps: R) {
        self.target_tolerance = eps;
    }

    pub fn nodes(&self) -> &[R] {
        &self.nodes
    }

    pub fn weights(&self) -> &[R] {
        &self.weights
    }

    /// Integrates an arbitrary function on (0,1); mostly for tests.
    pub fn integrate(&self, f: impl Fn(R) -> R) -> R {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| f(u) * w)
            .sum()
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule mapped to (0,1),
/// by Newton iteration on the Legendre polynomial.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root of P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Recurrence for P_n(x) and P'_n(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = (1.0 - x) / 2.0;
        nodes[n - 1 - i] = (1.0 + x) / 2.0;
        weights[i] = w / 2.0;
        weights[n - 1 - i] = w / 2.0;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.5;
    }
    (nodes, weights)
}

/// Log-probability of observing a full order (most preferred first) under
/// the stage-wise softmax model.
pub fn full_ranking_log_prob<R: Real>(
    order: &[ItemId],
    w: &UtilityVector<R>,
) -> Result<R, LikelihoodError> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(LikelihoodError::NotAPermutation(pair[0]));
        }
    }
    let mut acc = LogSumAcc::new();
    let mut terms = Vec::with_capacity(order.len());
    for &item in order.iter().rev() {
        let wi = w.get(item)?;
        acc.push(wi);
        terms.push(wi - acc.value());
    }
    let total: R = terms.into_iter().sum();
    if total.is_nan() {
        return Err(LikelihoodError::NonFiniteResult);
    }
    Ok(total)
}

/// Draws a full ranking over the whole utility vector by the Gumbel-max
/// construction: sort items by `w_i + Gumbel(0,1)` descending.
pub fn sample_full_ranking<R: Real>(w: &UtilityVector<R>, rng: &mut impl Rng) -> Vec<ItemId> {
    let mut keyed: Vec<(f64, ItemId)> = w
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let gumbel = -(-u.ln()).ln();
            (wi.to_f64().unwrap_or(f64::NEG_INFINITY) + gumbel, i as ItemId)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Exact log-probability of a partial ranking: log-sum over all linear
/// extensions of the full-order probabilities. Exponential in the item
/// count; guarded by `limit`.
pub fn exact_partial_log_prob<R: Real>(
    pr: &PartialRanking,
    w: &UtilityVector<R>,
    limit: usize,
) -> Result<R, LikelihoodError> {
    let extensions = pr.enumerate_linear_extensions(limit)?;
    let mut acc = LogSumAcc::new();
    for ext in &extensions {
        acc.push(full_ranking_log_prob(ext, w)?);
    }
    let v = acc.value();
    if v.is_nan() {
        return Err(LikelihoodError::NonFiniteResult);
    }
    Ok(v)
}

/// Per-item factor of the integrand at one node, in log space.
///
/// Given `tau = ln a_i + ln(-ln u_k)` and `t = a_i ln u_k` (so
/// `t = -exp(tau)` up to rounding), returns `(ln(1 - u^{a_i}), ln(-t) + t)`.
/// The second value is the log of the gradient factor
/// `-t e^t = a_i u^{a_i} (-ln u)`. Everything stays finite for any finite
/// `tau`, which is what keeps large item sets and extreme utilities stable.
#[inline]
fn log_factor<R: Real>(tau: R, t: R) -> (R, R) {
    let cut = R::of(-37.0);
    if tau <= cut {
        // t -> 0-: 1 - e^t ≈ -t, so both logs collapse to tau.
        (tau, tau)
    } else if t <= cut {
        // u^{a_i} underflows: the factor is 1 to machine precision.
        (R::zero(), tau + t)
    } else {
        ((-t.exp_m1()).ln(), tau + t)
    }
}

/// Integral log-likelihood of a partitioned preference, without gradient.
pub fn pp_log_likelihood<R: Real>(
    pp: &PartitionedPreference,
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
) -> Result<R, LikelihoodError> {
    evaluate_pp(pp, w, quad, None)
}

/// Integral log-likelihood of a partitioned preference together with its
/// gradient with respect to every utility it touches (zero elsewhere).
pub fn pp_log_likelihood_and_grad<R: Real>(
    pp: &PartitionedPreference,
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
) -> Result<(R, GradientVector<R>), LikelihoodError> {
    let mut grad = GradientVector::zeros(w.len());
    let value = evaluate_pp(pp, w, quad, Some(&mut grad))?;
    Ok((value, grad))
}

/// Shared value/gradient evaluation; one quadrature pass per partition.
fn evaluate_pp<R: Real>(
    pp: &PartitionedPreference,
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
    mut grad: Option<&mut GradientVector<R>>,
) -> Result<R, LikelihoodError> {
    let m_count = pp.num_partitions();
    let mut total = R::zero();
    if m_count < 2 {
        // Utility coverage is part of the contract even when M = 1.
        for item in pp.items() {
            w.get(item)?;
        }
        return Ok(total);
    }

    // logsumexp over the suffix R_{m+1}, built back to front.
    let mut suffix_lse = vec![R::neg_infinity(); m_count];
    let mut acc = LogSumAcc::new();
    for m in (0..m_count).rev() {
        suffix_lse[m] = acc.value();
        for &item in &pp.partitions()[m] {
            acc.push(w.get(item)?);
        }
    }

    let nodes = quad.node_count();
    let mut log_a: Vec<R> = Vec::new();
    let mut s_k = vec![R::zero(); nodes];
    // Per (item, node) factors from the first pass, reused by the gradient
    // pass: (ln(1 - u^a), ln of the gradient factor a u^a (-ln u)).
    let mut factors: Vec<(R, R)> = Vec::new();

    for m in 0..m_count - 1 {
        let block = &pp.partitions()[m];
        let w_rest = suffix_lse[m];

        log_a.clear();
        for &item in block {
            log_a.push(w.get(item)? - w_rest);
        }

        // If any preferred item has utility -inf relative to the rest, the
        // whole event is impossible; short-circuit to -inf.
        if log_a.iter().any(|&la| la == R::neg_infinity()) {
            return Ok(R::neg_infinity());
        }

        for sk in s_k.iter_mut() {
            *sk = R::zero();
        }
        if grad.is_some() {
            factors.clear();
            factors.reserve(block.len() * nodes);
        }

        // First pass: per-node log product of the factors. `a` itself is
        // safe to use whenever tau is above the underflow cut (see
        // `log_factor`): the cut catches every case where exp(la) could
        // round to zero.
        for &la in &log_a {
            let a = la.exp();
            for k in 0..nodes {
                let tau = la + quad.ln_neg_ln_nodes[k];
                let f = log_factor(tau, a * quad.ln_nodes[k]);
                s_k[k] += f.0;
                if grad.is_some() {
                    factors.push(f);
                }
            }
        }

        // ln I_m = logsumexp_k (ln w_k + S_k).
        let mut value_acc = LogSumAcc::new();
        for k in 0..nodes {
            value_acc.push(quad.ln_weights[k] + s_k[k]);
        }
        let ln_integral = value_acc.value();
        if ln_integral.is_nan() {
            return Err(LikelihoodError::NonFiniteResult);
        }
        total += ln_integral;

        if let Some(g) = grad.as_deref_mut() {
            // Second pass: leave-one-out products share S_k.
            // T_j = int a_j u^{a_j} (-ln u) prod_{l != j} (1 - u^{a_l}) du.
            let mut ln_t_sum = LogSumAcc::new();
            for (bi, &item) in block.iter().enumerate() {
                let mut acc = LogSumAcc::new();
                for k in 0..nodes {
                    let (f_l1m, f_lgf) = factors[bi * nodes + k];
                    acc.push(quad.ln_weights[k] + f_lgf + (s_k[k] - f_l1m));
                }
                let ln_t = acc.value();
                ln_t_sum.push(ln_t);
                let gj = (ln_t - ln_integral).exp();
                if gj.is_nan() {
                    return Err(LikelihoodError::NonFiniteResult);
                }
                g.entries[item as usize] += gj;
            }
            // d ln I_m / d w_r = -softmax_r(w over R) * sum_j T_j / I_m.
            let ln_u_total = ln_t_sum.value();
            for rest in &pp.partitions()[m + 1..] {
                for &item in rest {
                    let wr = w.get(item)?;
                    if wr == R::neg_infinity() {
                        continue;
                    }
                    let gr = -((wr - w_rest) + (ln_u_total - ln_integral)).exp();
                    if gr.is_nan() {
                        return Err(LikelihoodError::NonFiniteResult);
                    }
                    g.entries[item as usize] += gr;
                }
            }
        }
    }

    if total.is_nan() {
        return Err(LikelihoodError::NonFiniteResult);
    }
    Ok(total)
}

/// Summed log-likelihood of a set of partition chains (e.g. one ranking's
/// decomposition, cached by the training loop).
pub fn pp_set_log_likelihood<R: Real>(
    pps: &[PartitionedPreference],
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
) -> Result<R, LikelihoodError> {
    let mut total = R::zero();
    for pp in pps {
        total += evaluate_pp(pp, w, quad, None)?;
    }
    Ok(total)
}

/// As [`pp_set_log_likelihood`], accumulating the gradient into one vector.
pub fn pp_set_log_likelihood_and_grad<R: Real>(
    pps: &[PartitionedPreference],
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
) -> Result<(R, GradientVector<R>), LikelihoodError> {
    let mut total = R::zero();
    let mut grad = GradientVector::zeros(w.len());
    for pp in pps {
        total += evaluate_pp(pp, w, quad, Some(&mut grad))?;
    }
    Ok((total, grad))
}

/// Approximate log-likelihood of a general partial ranking: decompose into
/// per-component partitioned preferences and sum their log-likelihoods.
pub fn numgrb_log_likelihood<R: Real>(
    pr: &PartialRanking,
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
) -> Result<R, LikelihoodError> {
    let mut total = R::zero();
    for pp in pr.decompose() {
        total += pp_log_likelihood(&pp, w, quad)?;
    }
    Ok(total)
}

/// [`numgrb_log_likelihood`] together with the summed gradient.
pub fn numgrb_log_likelihood_and_grad<R: Real>(
    pr: &PartialRanking,
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
) -> Result<(R, GradientVector<R>), LikelihoodError> {
    let mut total = R::zero();
    let mut grad = GradientVector::zeros(w.len());
    for pp in pr.decompose() {
        total += evaluate_pp(&pp, w, quad, Some(&mut grad))?;
    }
    Ok((total, grad))
}

/// Baseline that treats every chosen item as an independent top-one pick
/// from the full candidate set (no removal between picks).
pub fn naive_topone_log_likelihood<R: Real>(
    chosen: &[ItemId],
    candidates: &[ItemId],
    w: &UtilityVector<R>,
) -> Result<R, LikelihoodError> {
    if candidates.is_empty() {
        return Err(LikelihoodError::EmptyCandidates);
    }
    for &c in chosen {
        if !candidates.contains(&c) {
            return Err(LikelihoodError::ChoiceOutsideCandidates(c));
        }
    }
    let mut lse = LogSumAcc::new();
    for &c in candidates {
        lse.push(w.get(c)?);
    }
    let denom = lse.value();
    let mut total = R::zero();
    for &c in chosen {
        total += w.get(c)? - denom;
    }
    if total.is_nan() {
        return Err(LikelihoodError::NonFiniteResult);
    }
    Ok(total)
}

/// Sequential top-K likelihood: each choice is a softmax over the
/// candidates minus the previously chosen items (Plackett-Luce prefix).
pub fn topk_sequential_log_likelihood<R: Real>(
    ordered_choices: &[ItemId],
    candidates: &[ItemId],
    w: &UtilityVector<R>,
) -> Result<R, LikelihoodError> {
    if candidates.is_empty() {
        return Err(LikelihoodError::EmptyCandidates);
    }
    for (i, &c) in ordered_choices.iter().enumerate() {
        if ordered_choices[..i].contains(&c) {
            return Err(LikelihoodError::DuplicateChoice(c));
        }
        if !candidates.contains(&c) {
            return Err(LikelihoodError::ChoiceOutsideCandidates(c));
        }
    }
    let mut total = R::zero();
    let mut taken: Vec<ItemId> = Vec::with_capacity(ordered_choices.len());
    for &c in ordered_choices {
        let mut lse = LogSumAcc::new();
        for &cand in candidates {
            if !taken.contains(&cand) {
                lse.push(w.get(cand)?);
            }
        }
        total += w.get(c)? - lse.value();
        taken.push(c);
    }
    if total.is_nan() {
        return Err(LikelihoodError::NonFiniteResult);
    }
    Ok(total)
}

/// Central finite-difference gradient of [`numgrb_log_likelihood`]; test
/// oracle for the analytic gradients.
pub fn numgrb_finite_difference_grad<R: Real>(
    pr: &PartialRanking,
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
    step: R,
) -> Result<GradientVector<R>, LikelihoodError> {
    let mut grad = GradientVector::zeros(w.len());
    for i in 0..w.len() {
        let mut hi = w.as_slice().to_vec();
        let mut lo = hi.clone();
        hi[i] += step;
        lo[i] -= step;
        let f_hi = numgrb_log_likelihood(pr, &UtilityVector::new(hi)?, quad)?;
        let f_lo = numgrb_log_likelihood(pr, &UtilityVector::new(lo)?, quad)?;
        grad.entries[i] = (f_hi - f_lo) / (R::of(2.0) * step);
    }
    Ok(grad)
}
