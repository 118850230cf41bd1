//! Model fitting: full-batch AdaGrad for a single MNL, ranking-distance
//! K-means for initialization, and the mixture EM loop.
//!
//! Fitting pre-decomposes every ranking once and evaluates the integral
//! likelihood on the cached partition chains; the decomposition does not
//! depend on the utilities. All dataset-level sums are computed in ranking
//! order regardless of thread count, so results are reproducible bit for
//! bit given (dataset, seed, config).

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::likelihood::{
    pp_set_log_likelihood, pp_set_log_likelihood_and_grad, GradientVector, LikelihoodError,
    QuadratureRule, UtilityVector,
};
use crate::models::{FreeUtilityModel, MixtureModel, ModelError, UtilityParams};
use crate::poset::{PartialRanking, PartitionedPreference};
use crate::scalar::{LogSumAcc, Real};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrainingError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {n} rankings but {k} clusters were requested")]
    DatasetSmallerThanK { n: usize, k: usize },
    #[error("loss became non-finite; adjust the learning rate or data")]
    NonFiniteLoss,
    #[error("weight {0} is negative")]
    NegativeWeight(usize),
    #[error("{expected} rankings but {got} weights")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("clustering degenerated: empty cluster could not be re-seeded")]
    DegenerateClustering,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Full-batch AdaGrad configuration.
#[derive(Debug, Clone)]
pub struct OptimizerConfig<R: Real> {
    pub learning_rate: R,
    pub accumulator_eps: R,
    pub max_steps: usize,
    pub gradient_tolerance: R,
}

impl<R: Real> Default for OptimizerConfig<R> {
    fn default() -> Self {
        Self {
            learning_rate: R::of(0.5),
            accumulator_eps: R::of(1e-10),
            max_steps: 200,
            gradient_tolerance: R::of(1e-6),
        }
    }
}

impl<R: Real> OptimizerConfig<R> {
    pub fn with_max_steps(mut self, steps: usize) -> Self {
        self.max_steps = steps;
        self
    }
}

/// AdaGrad state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdaGrad<R: Real> {
    learning_rate: R,
    eps: R,
    accumulator: Vec<R>,
}

impl<R: Real> AdaGrad<R> {
    pub fn new(n_params: usize, cfg: &OptimizerConfig<R>) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            eps: cfg.accumulator_eps,
            accumulator: vec![R::zero(); n_params],
        }
    }

    /// Accumulates the squared gradient; call once per step before taking
    /// (possibly scaled-down) steps with [`Self::delta`].
    pub fn observe(&mut self, grad: &[R]) {
        for (a, &g) in self.accumulator.iter_mut().zip(grad) {
            *a += g * g;
        }
    }

    /// Step for one coordinate at the given scale multiplier.
    pub fn delta(&self, i: usize, g: R, scale: R) -> R {
        -self.learning_rate * scale * g / (self.accumulator[i].sqrt() + self.eps)
    }
}

/// A ranking pre-decomposed into its informative partition chains.
#[derive(Debug, Clone)]
pub struct PreparedRanking {
    chains: Vec<PartitionedPreference>,
}

impl PreparedRanking {
    pub fn from_ranking(pr: &PartialRanking) -> Self {
        Self {
            chains: pr
                .decompose()
                .into_iter()
                .filter(|pp| pp.num_partitions() > 1)
                .collect(),
        }
    }

    pub fn chains(&self) -> &[PartitionedPreference] {
        &self.chains
    }
}

/// Decomposes a whole dataset in parallel, preserving order.
pub fn prepare_dataset(dataset: &[PartialRanking]) -> Vec<PreparedRanking> {
    dataset
        .par_iter()
        .map(PreparedRanking::from_ranking)
        .collect()
}

/// Weighted negative log-likelihood and its gradient over a prepared
/// dataset. `weights` of `None` means all ones; zero-weight rankings are
/// skipped.
fn dataset_loss_and_grad<R: Real>(
    prepared: &[PreparedRanking],
    w: &UtilityVector<R>,
    quad: &QuadratureRule<R>,
    weights: Option<&[R]>,
) -> Result<(R, GradientVector<R>), TrainingError> {
    let per_ranking: Vec<Result<Option<(R, GradientVector<R>)>, LikelihoodError>> = prepared
        .par_iter()
        .enumerate()
        .map(|(j, ranking)| {
            let wt = weights.map_or(R::one(), |ws| ws[j]);
            if wt == R::zero() {
                return Ok(None);
            }
            let (value, mut grad) = pp_set_log_likelihood_and_grad(ranking.chains(), w, quad)?;
            grad.scale(wt);
            Ok(Some((value * wt, grad)))
        })
        .collect();

    let mut loss = R::zero();
    let mut grad = GradientVector::zeros(w.len());
    for item in per_ranking {
        if let Some((v, g)) = item? {
            loss -= v;
            for (acc, &x) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc -= x;
            }
        }
    }
    if loss.is_nan() || loss == R::neg_infinity() {
        return Err(TrainingError::NonFiniteLoss);
    }
    Ok((loss, grad))
}

/// Result of a single-MNL fit.
#[derive(Debug, Clone)]
pub struct FitOutcome<R: Real> {
    pub model: FreeUtilityModel<R>,
    /// Loss after each accepted (or skipped) step, starting with the
    /// initial loss; non-increasing up to 1e-6 slack.
    pub loss_trace: Vec<R>,
    /// Cumulative wall-clock milliseconds at each trace entry.
    pub step_ms: Vec<u64>,
    pub converged: bool,
    pub elapsed_ms: u64,
}

/// Fits a free-utility MNL to a dataset of partial rankings by full-batch
/// AdaGrad on the weighted negative log-likelihood.
///
/// A candidate step that would increase the loss by more than `1e-6` is
/// retried at geometrically smaller scales and skipped entirely if it still
/// does not improve, which keeps the recorded trace non-increasing without
/// stopping before `max_steps` or the gradient tolerance.
pub fn fit_single_mnl<R: Real>(
    dataset: &[PartialRanking],
    init: &FreeUtilityModel<R>,
    opt: &OptimizerConfig<R>,
    quad: &QuadratureRule<R>,
    weights: Option<&[R]>,
) -> Result<FitOutcome<R>, TrainingError> {
    let prepared = prepare_dataset(dataset);
    fit_single_mnl_prepared(&prepared, init, opt, quad, weights)
}

/// As [`fit_single_mnl`], on an already prepared dataset.
pub fn fit_single_mnl_prepared<R: Real>(
    prepared: &[PreparedRanking],
    init: &FreeUtilityModel<R>,
    opt: &OptimizerConfig<R>,
    quad: &QuadratureRule<R>,
    weights: Option<&[R]>,
) -> Result<FitOutcome<R>, TrainingError> {
    let mut adagrad = AdaGrad::new(init.len(), opt);
    fit_single_mnl_with_state(prepared, init, opt, quad, weights, &mut adagrad)
}

/// As [`fit_single_mnl_prepared`], continuing from caller-owned optimizer
/// state. The EM loop passes each component's accumulator back in every
/// round, so warm-started refits keep taking appropriately small steps.
pub fn fit_single_mnl_with_state<R: Real>(
    prepared: &[PreparedRanking],
    init: &FreeUtilityModel<R>,
    opt: &OptimizerConfig<R>,
    quad: &QuadratureRule<R>,
    weights: Option<&[R]>,
    adagrad: &mut AdaGrad<R>,
) -> Result<FitOutcome<R>, TrainingError> {
    if prepared.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    if let Some(ws) = weights {
        if ws.len() != prepared.len() {
            return Err(TrainingError::WeightCountMismatch {
                expected: prepared.len(),
                got: ws.len(),
            });
        }
        if let Some(i) = ws.iter().position(|&w| w < R::zero()) {
            return Err(TrainingError::NegativeWeight(i));
        }
    }

    let start = Instant::now();
    let slack = R::of(1e-6);
    let n_params = init.len();
    let mut params = init.params().to_vec();

    let as_utilities =
        |p: &[R]| UtilityVector::new(p.to_vec()).map_err(TrainingError::Likelihood);

    let (mut loss, mut grad) =
        dataset_loss_and_grad(prepared, &as_utilities(&params)?, quad, weights)?;
    let mut trace = vec![loss];
    let mut step_ms = vec![start.elapsed().as_millis() as u64];
    let mut converged = false;

    // A candidate step that worsens the loss beyond the slack is retried
    // at smaller scales; if none improves, the step is skipped (the
    // accumulator update still shrinks future steps). The accepted scale
    // is remembered across steps and grows back only after a clean
    // accept, so a warm start near an optimum does not pay the halving
    // cascade on every step.
    let mut scale = R::one();
    for _ in 0..opt.max_steps {
        if grad.inf_norm() < opt.gradient_tolerance {
            converged = true;
            break;
        }
        adagrad.observe(grad.as_slice());

        let mut halvings = 0;
        loop {
            let mut candidate = params.clone();
            for i in 0..n_params {
                candidate[i] += adagrad.delta(i, grad.as_slice()[i], scale);
            }
            let (new_loss, new_grad) =
                dataset_loss_and_grad(prepared, &as_utilities(&candidate)?, quad, weights)?;
            if new_loss <= loss + slack {
                params = candidate;
                loss = new_loss;
                grad = new_grad;
                if halvings == 0 {
                    scale = (scale + scale).min(R::one());
                }
                break;
            }
            scale = scale * R::of(0.5);
            halvings += 1;
            if halvings >= 60 {
                break;
            }
        }
        trace.push(loss);
        step_ms.push(start.elapsed().as_millis() as u64);
    }

    Ok(FitOutcome {
        model: FreeUtilityModel::new(params)?,
        loss_trace: trace,
        step_ms,
        converged,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

/// Relative rank of every item of a partition chain: `(m-1)/(M-1)` for the
/// 0-based partition index `m-1`; a single-partition chain carries no order
/// information and maps every item to the neutral mid-rank 0.5.
fn relative_ranks<R: Real>(pp: &PartitionedPreference, out: &mut HashMap<crate::ItemId, R>) {
    let m_count = pp.num_partitions();
    if m_count == 1 {
        for item in pp.items() {
            out.insert(item, R::of(0.5));
        }
        return;
    }
    let denom = R::of_usize(m_count - 1);
    for (m, block) in pp.partitions().iter().enumerate() {
        let r = R::of_usize(m) / denom;
        for &item in block {
            out.insert(item, r);
        }
    }
}

/// Root-mean-square difference of relative ranks over shared items.
/// Rankings with disjoint item sets are maximally distant by convention
/// (sentinel 1.0).
pub fn ranking_distance<R: Real>(a: &PartitionedPreference, b: &PartitionedPreference) -> R {
    let mut ra: HashMap<crate::ItemId, R> = HashMap::new();
    relative_ranks(a, &mut ra);
    let mut rb: HashMap<crate::ItemId, R> = HashMap::new();
    relative_ranks(b, &mut rb);
    // Shared items in id order, so the sum does not depend on map order.
    let mut shared: Vec<crate::ItemId> = rb.keys().filter(|i| ra.contains_key(i)).copied().collect();
    shared.sort_unstable();
    if shared.is_empty() {
        return R::one();
    }
    let mut sum_sq = R::zero();
    for item in &shared {
        let d = ra[item] - rb[item];
        sum_sq += d * d;
    }
    (sum_sq / R::of_usize(shared.len())).sqrt()
}

/// A ranking embedded as a partial vector of relative ranks over the item
/// universe: one coordinate per item, present where the ranking mentions
/// the item.
#[derive(Debug, Clone)]
pub struct RankEmbedding<R: Real> {
    pub values: Vec<R>,
    pub present: Vec<bool>,
}

impl<R: Real> RankEmbedding<R> {
    fn from_prepared(ranking: &PreparedRanking, pr: &PartialRanking, universe: usize) -> Self {
        let mut values = vec![R::zero(); universe];
        let mut present = vec![false; universe];
        let mut ranks = HashMap::new();
        for pp in ranking.chains() {
            relative_ranks(pp, &mut ranks);
        }
        // Items in dropped (single-partition) components still count, at
        // the neutral mid-rank.
        for &item in pr.items() {
            let r = ranks.get(&item).copied().unwrap_or(R::of(0.5));
            values[item as usize] = r;
            present[item as usize] = true;
        }
        Self { values, present }
    }

    /// Distance to a centroid, restricted to coordinates present on both
    /// sides; 1.0 when there is no overlap.
    fn distance(&self, centroid: &Centroid<R>) -> R {
        let mut shared = 0usize;
        let mut sum_sq = R::zero();
        for i in 0..self.values.len() {
            if self.present[i] && centroid.count[i] > 0 {
                let d = self.values[i] - centroid.mean(i);
                sum_sq += d * d;
                shared += 1;
            }
        }
        if shared == 0 {
            R::one()
        } else {
            (sum_sq / R::of_usize(shared)).sqrt()
        }
    }
}

struct Centroid<R: Real> {
    sum: Vec<R>,
    count: Vec<usize>,
}

impl<R: Real> Centroid<R> {
    fn new(universe: usize) -> Self {
        Self {
            sum: vec![R::zero(); universe],
            count: vec![0; universe],
        }
    }

    fn add(&mut self, e: &RankEmbedding<R>) {
        for i in 0..e.values.len() {
            if e.present[i] {
                self.sum[i] += e.values[i];
                self.count[i] += 1;
            }
        }
    }

    fn mean(&self, i: usize) -> R {
        self.sum[i] / R::of_usize(self.count[i])
    }
}

/// K-means over rank embeddings with the missing-data distance; returns the
/// cluster assignment per ranking. Deterministic given the seed.
fn kmeans_assignments<R: Real>(
    embeddings: &[RankEmbedding<R>],
    k: usize,
    seed: u64,
    max_rounds: usize,
) -> Result<Vec<usize>, TrainingError> {
    let n = embeddings.len();
    let universe = embeddings.first().map_or(0, |e| e.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = rand::seq::index::sample(&mut rng, n, k);
    let mut centroids: Vec<Centroid<R>> = init
        .iter()
        .map(|j| {
            let mut c = Centroid::new(universe);
            c.add(&embeddings[j]);
            c
        })
        .collect();

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_rounds {
        // Assign to nearest centroid (ties to the lowest index).
        let next: Vec<usize> = embeddings
            .par_iter()
            .map(|e| {
                let mut best = 0usize;
                let mut best_d = R::infinity();
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = e.distance(centroid);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect();

        // Re-seed empty clusters from the farthest point.
        let mut next = next;
        loop {
            let mut counts = vec![0usize; k];
            for &c in &next {
                counts[c] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let farthest = (0..n)
                .filter(|&j| counts[next[j]] > 1)
                .max_by(|&a, &b| {
                    let da = embeddings[a].distance(&centroids[next[a]]);
                    let db = embeddings[b].distance(&centroids[next[b]]);
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .ok_or(TrainingError::DegenerateClustering)?;
            next[farthest] = empty;
        }

        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
        centroids = (0..k).map(|_| Centroid::new(universe)).collect();
        for (j, &c) in assignment.iter().enumerate() {
            centroids[c].add(&embeddings[j]);
        }
    }
    Ok(assignment)
}

/// Clustering-based initialization: embed every ranking by relative ranks,
/// K-means with the ranking distance, then fit one MNL per cluster.
pub fn cluster_init<R: Real>(
    dataset: &[PartialRanking],
    k: usize,
    quad: &QuadratureRule<R>,
    opt: &OptimizerConfig<R>,
    seed: u64,
) -> Result<Vec<FreeUtilityModel<R>>, TrainingError> {
    let prepared = prepare_dataset(dataset);
    cluster_init_prepared(dataset, &prepared, k, quad, opt, seed)
}

fn cluster_init_prepared<R: Real>(
    dataset: &[PartialRanking],
    prepared: &[PreparedRanking],
    k: usize,
    quad: &QuadratureRule<R>,
    opt: &OptimizerConfig<R>,
    seed: u64,
) -> Result<Vec<FreeUtilityModel<R>>, TrainingError> {
    let n = dataset.len();
    if n == 0 {
        return Err(TrainingError::EmptyDataset);
    }
    if n < k {
        return Err(TrainingError::DatasetSmallerThanK { n, k });
    }
    let universe = universe_size(dataset);
    if k == 1 {
        let fit = fit_single_mnl_prepared(
            prepared,
            &FreeUtilityModel::zeros(universe),
            opt,
            quad,
            None,
        )?;
        return Ok(vec![fit.model]);
    }

    let embeddings: Vec<RankEmbedding<R>> = prepared
        .par_iter()
        .zip(dataset.par_iter())
        .map(|(p, pr)| RankEmbedding::from_prepared(p, pr, universe))
        .collect();
    let assignment = kmeans_assignments(&embeddings, k, seed, 100)?;

    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<PreparedRanking> = assignment
            .iter()
            .zip(prepared)
            .filter(|(&a, _)| a == c)
            .map(|(_, p)| p.clone())
            .collect();
        if members.is_empty() {
            return Err(TrainingError::DegenerateClustering);
        }
        let fit = fit_single_mnl_prepared(
            &members,
            &FreeUtilityModel::zeros(universe),
            opt,
            quad,
            None,
        )?;
        components.push(fit.model);
    }
    Ok(components)
}

fn universe_size(dataset: &[PartialRanking]) -> usize {
    dataset
        .iter()
        .flat_map(|pr| pr.items().iter().copied())
        .max()
        .map_or(0, |m| m as usize + 1)
}

/// How EM components are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Ranking-distance K-means, then one MNL fit per cluster.
    Clustering,
    /// Utilities drawn uniformly from [-2, 2].
    Random,
}

/// EM configuration.
#[derive(Debug, Clone)]
pub struct EMConfig<R: Real> {
    pub components: usize,
    pub rounds: usize,
    /// Inner AdaGrad budget for each M-step, warm-started.
    pub m_step: OptimizerConfig<R>,
    /// Budget for the per-cluster initialization fits.
    pub init_optimizer: OptimizerConfig<R>,
    pub init: InitStrategy,
    pub seed: u64,
    /// A component with final weight below this is flagged degenerate.
    pub degenerate_threshold: R,
    /// Responsibilities below this are zeroed in the M-step.
    pub responsibility_floor: R,
}

impl<R: Real> EMConfig<R> {
    pub fn new(components: usize, rounds: usize, seed: u64) -> Self {
        Self {
            components,
            rounds,
            m_step: OptimizerConfig::default().with_max_steps(50),
            init_optimizer: OptimizerConfig::default().with_max_steps(100),
            init: InitStrategy::Clustering,
            seed,
            degenerate_threshold: R::of(0.01),
            responsibility_floor: R::of(1e-6),
        }
    }
}

/// One row of the EM trace.
#[derive(Debug, Clone)]
pub struct EMTraceRow<R: Real> {
    pub round: usize,
    /// Observed-data log-likelihood at the start of the round.
    pub log_likelihood: R,
    pub weights: Vec<R>,
    pub elapsed_ms: u64,
}

/// Fitted mixture plus diagnostics.
#[derive(Debug, Clone)]
pub struct EMOutcome<R: Real> {
    pub mixture: MixtureModel<R>,
    /// Per-ranking responsibilities from the final E-step (empty if B = 0).
    pub responsibilities: Vec<Vec<R>>,
    pub trace: Vec<EMTraceRow<R>>,
    /// True when some final mixture weight fell below the degenerate
    /// threshold, i.e. a component was effectively dropped.
    pub degenerate: bool,
}

/// EM for a mixture of free-utility MNLs on partial rankings.
///
/// E-step responsibilities are computed in log space from the per-component
/// approximate likelihoods; the M-step re-fits each component by weighted
/// AdaGrad warm-started from the previous round.
pub fn em_fit<R: Real>(
    dataset: &[PartialRanking],
    cfg: &EMConfig<R>,
    quad: &QuadratureRule<R>,
) -> Result<EMOutcome<R>, TrainingError> {
    let n = dataset.len();
    let k = cfg.components;
    if n == 0 {
        return Err(TrainingError::EmptyDataset);
    }
    if n < k || k == 0 {
        return Err(TrainingError::DatasetSmallerThanK { n, k });
    }
    let start = Instant::now();
    let universe = universe_size(dataset);
    let prepared = prepare_dataset(dataset);

    let mut components: Vec<FreeUtilityModel<R>> = match cfg.init {
        InitStrategy::Clustering => {
            cluster_init_prepared(dataset, &prepared, k, quad, &cfg.init_optimizer, cfg.seed)?
        }
        InitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..k)
                .map(|_| {
                    FreeUtilityModel::new(
                        (0..universe)
                            .map(|_| R::of(rng.random_range(-2.0..2.0)))
                            .collect(),
                    )
                })
                .collect::<Result<_, _>>()?
        }
    };
    let mut pi = vec![R::one() / R::of_usize(k); k];
    let mut trace = Vec::new();
    let mut responsibilities: Vec<Vec<R>> = Vec::new();
    // Optimizer state persists across rounds alongside the parameters.
    let mut opt_states: Vec<AdaGrad<R>> = components
        .iter()
        .map(|c| AdaGrad::new(c.len(), &cfg.m_step))
        .collect();

    for round in 0..cfg.rounds {
        // E-step: log-likelihood of every ranking under every component.
        let utilities: Vec<UtilityVector<R>> = components
            .iter()
            .map(|c| c.utilities())
            .collect::<Result<_, _>>()?;
        let log_liks: Vec<Vec<R>> = prepared
            .par_iter()
            .map(|ranking| {
                utilities
                    .iter()
                    .map(|w| pp_set_log_likelihood(ranking.chains(), w, quad))
                    .collect::<Result<Vec<R>, _>>()
            })
            .collect::<Result<_, _>>()?;

        let ln_pi: Vec<R> = pi.iter().map(|&p| p.ln()).collect();
        let mut observed_ll = R::zero();
        responsibilities = log_liks
            .iter()
            .map(|row| {
                let mut acc = LogSumAcc::new();
                for r in 0..k {
                    acc.push(ln_pi[r] + row[r]);
                }
                let norm = acc.value();
                observed_ll += norm;
                let mut gamma: Vec<R> = (0..k)
                    .map(|r| {
                        let g = (ln_pi[r] + row[r] - norm).exp();
                        if g < cfg.responsibility_floor {
                            R::zero()
                        } else {
                            g
                        }
                    })
                    .collect();
                // Renormalize after flooring so each row stays on the
                // simplex (the largest entry is at least 1/k, so the sum
                // never vanishes).
                let total: R = gamma.iter().copied().sum();
                for g in &mut gamma {
                    *g = *g / total;
                }
                gamma
            })
            .collect();
        if observed_ll.is_nan() {
            return Err(TrainingError::NonFiniteLoss);
        }
        trace.push(EMTraceRow {
            round,
            log_likelihood: observed_ll,
            weights: pi.clone(),
            elapsed_ms: start.elapsed().as_millis() as u64,
        });

        // M-step: mixture weights, then each component warm-started.
        for r in 0..k {
            let total: R = responsibilities.iter().map(|g| g[r]).sum();
            pi[r] = total / R::of_usize(n);
        }
        for r in 0..k {
            let weights: Vec<R> = responsibilities.iter().map(|g| g[r]).collect();
            if weights.iter().all(|&w| w == R::zero()) {
                continue;
            }
            let fit = fit_single_mnl_with_state(
                &prepared,
                &components[r],
                &cfg.m_step,
                quad,
                Some(&weights),
                &mut opt_states[r],
            )?;
            components[r] = fit.model;
        }
    }

    let degenerate = pi.iter().any(|&p| p < cfg.degenerate_threshold);
    let mixture = MixtureModel::new(
        pi,
        components.into_iter().map(UtilityParams::Free).collect(),
        vec![],
    )?;
    Ok(EMOutcome {
        mixture,
        responsibilities,
        trace,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::sample_full_ranking;
    use crate::poset::ItemId;

    fn quad() -> QuadratureRule<f64> {
        QuadratureRule::new(48)
    }

    #[test]
    fn single_comparison_pushes_direction() {
        let pr = PartialRanking::new([0, 1], [(0, 1)]).unwrap();
        let opt = OptimizerConfig::default().with_max_steps(200);
        let fit = fit_single_mnl(&[pr], &FreeUtilityModel::zeros(2), &opt, &quad(), None).unwrap();
        let p = fit.model.params();
        assert!(p[0] - p[1] > 0.0, "separable data forces the direction");
        // Loss trace non-increasing within slack.
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
        // Still growing at the end: no finite optimum for separable data.
        let shorter = OptimizerConfig::default().with_max_steps(50);
        let early =
            fit_single_mnl(
                &[PartialRanking::new([0, 1], [(0, 1)]).unwrap()],
                &FreeUtilityModel::zeros(2),
                &shorter,
                &quad(),
                None,
            )
            .unwrap();
        assert!(p[0] - p[1] > early.model.params()[0] - early.model.params()[1]);
    }

    #[test]
    fn zero_weights_leave_model_unchanged() {
        let pr = PartialRanking::new([0, 1], [(0, 1)]).unwrap();
        let init = FreeUtilityModel::new(vec![0.3, -0.4]).unwrap();
        let fit = fit_single_mnl(
            &[pr],
            &init,
            &OptimizerConfig::default(),
            &quad(),
            Some(&[0.0]),
        )
        .unwrap();
        assert_eq!(fit.model.params(), init.params());
        assert!(fit.converged);
    }

    #[test]
    fn rejects_bad_weights() {
        let pr = PartialRanking::new([0, 1], [(0, 1)]).unwrap();
        let err = fit_single_mnl(
            std::slice::from_ref(&pr),
            &FreeUtilityModel::zeros(2),
            &OptimizerConfig::default(),
            &quad(),
            Some(&[-1.0]),
        )
        .unwrap_err();
        assert_eq!(err, TrainingError::NegativeWeight(0));
        let err = fit_single_mnl(
            &[pr],
            &FreeUtilityModel::zeros(2),
            &OptimizerConfig::default(),
            &quad(),
            Some(&[1.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, TrainingError::WeightCountMismatch { .. }));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let err = fit_single_mnl(
            &[],
            &FreeUtilityModel::zeros(2),
            &OptimizerConfig::default(),
            &quad(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, TrainingError::EmptyDataset);
    }

    #[test]
    fn ranking_distance_examples() {
        let chain = PartitionedPreference::new(vec![vec![1], vec![2], vec![3]]).unwrap();
        assert_eq!(ranking_distance::<f64>(&chain, &chain), 0.0);

        let reversed = PartitionedPreference::new(vec![vec![3], vec![2], vec![1]]).unwrap();
        let d: f64 = ranking_distance(&chain, &reversed);
        assert!((d - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);

        let other = PartitionedPreference::new(vec![vec![7], vec![8]]).unwrap();
        assert_eq!(ranking_distance::<f64>(&chain, &other), 1.0);
    }

    #[test]
    fn ranking_distance_is_symmetric_and_nonnegative() {
        let a = PartitionedPreference::new(vec![vec![1, 2], vec![3]]).unwrap();
        let b = PartitionedPreference::new(vec![vec![3], vec![1], vec![4]]).unwrap();
        let ab: f64 = ranking_distance(&a, &b);
        let ba: f64 = ranking_distance(&b, &a);
        assert_eq!(ab, ba);
        assert!(ab >= 0.0);
        // Single-partition rankings sit at the neutral mid-rank.
        let flat = PartitionedPreference::new(vec![vec![1, 2, 3]]).unwrap();
        let mid = PartitionedPreference::new(vec![vec![1], vec![2], vec![3]]).unwrap();
        let d: f64 = ranking_distance(&flat, &mid);
        let want = ((0.25f64 + 0.0 + 0.25) / 3.0).sqrt();
        assert!((d - want).abs() < 1e-12);
    }

    /// Draws rankings from a mixture, keeping each pairwise comparison with
    /// probability `p`.
    fn sample_mixture_dataset(
        truths: &[Vec<f64>],
        n: usize,
        p: f64,
        seed: u64,
    ) -> (Vec<PartialRanking>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = truths.len();
        let n_items = truths[0].len();
        let mut rankings = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let comp = rng.random_range(0..k);
            let w = UtilityVector::new(truths[comp].clone()).unwrap();
            let order = sample_full_ranking(&w, &mut rng);
            let mut pairs = Vec::new();
            for i in 0..n_items {
                for j in (i + 1)..n_items {
                    if rng.random::<f64>() < p {
                        pairs.push((order[i], order[j]));
                    }
                }
            }
            rankings.push(PartialRanking::new(0..n_items as ItemId, pairs).unwrap());
            labels.push(comp);
        }
        (rankings, labels)
    }

    #[test]
    fn fit_recovers_scores_better_than_zero_init() {
        use crate::models::softmax_mse;
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n_items = 10usize;
        let truth: Vec<f64> = (0..n_items).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (data, _) = sample_mixture_dataset(std::slice::from_ref(&truth), 800, 0.25, 41);
        let opt = OptimizerConfig::default().with_max_steps(120);
        let fit =
            fit_single_mnl(&data, &FreeUtilityModel::zeros(n_items), &opt, &quad(), None).unwrap();
        let mse_fit = softmax_mse(fit.model.params(), &truth).unwrap();
        let mse_zero = softmax_mse(&vec![0.0; n_items], &truth).unwrap();
        assert!(
            mse_fit * 10.0 < mse_zero,
            "fit {mse_fit:.2e} vs zero-init {mse_zero:.2e}"
        );
    }

    #[test]
    fn clustering_separates_distant_components() {
        let truths = vec![
            vec![3.0, 2.0, 1.0, 0.0, -1.0, -2.0],
            vec![-2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
        ];
        let (data, labels) = sample_mixture_dataset(&truths, 300, 0.6, 5);
        let prepared = prepare_dataset(&data);
        let universe = universe_size(&data);
        let embeddings: Vec<RankEmbedding<f64>> = prepared
            .iter()
            .zip(&data)
            .map(|(p, pr)| RankEmbedding::from_prepared(p, pr, universe))
            .collect();
        let assignment = kmeans_assignments(&embeddings, 2, 7, 100).unwrap();
        // Majority label per cluster should align with the true labels.
        let mut agree = 0usize;
        for flip in [false, true] {
            let hits = assignment
                .iter()
                .zip(&labels)
                .filter(|(&a, &l)| (a == l) != flip)
                .count();
            agree = agree.max(hits);
        }
        assert!(
            agree as f64 / labels.len() as f64 >= 0.9,
            "cluster agreement {agree}/{}",
            labels.len()
        );
    }

    #[test]
    fn cluster_init_is_deterministic() {
        let truths = vec![vec![1.0, 0.0, -1.0, 0.5], vec![-1.0, 0.5, 1.0, -0.5]];
        let (data, _) = sample_mixture_dataset(&truths, 60, 0.5, 9);
        let opt = OptimizerConfig::default().with_max_steps(20);
        let a = cluster_init(&data, 2, &quad(), &opt, 123).unwrap();
        let b = cluster_init(&data, 2, &quad(), &opt, 123).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.params(), y.params());
        }
    }

    #[test]
    fn em_with_one_component_matches_single_fit() {
        let truths = vec![vec![1.0, -1.0, 0.0]];
        let (data, _) = sample_mixture_dataset(&truths, 120, 0.5, 11);
        let mut cfg = EMConfig::new(1, 2, 3);
        cfg.m_step = OptimizerConfig::default().with_max_steps(30);
        cfg.init_optimizer = OptimizerConfig::default().with_max_steps(30);
        let out = em_fit(&data, &cfg, &quad()).unwrap();
        assert_eq!(out.mixture.weights(), &[1.0]);
        assert!(!out.degenerate);
        for row in &out.responsibilities {
            assert_eq!(row, &vec![1.0]);
        }
    }

    #[test]
    fn em_zero_rounds_returns_initialization() {
        let truths = vec![vec![1.0, -1.0, 0.0], vec![-1.0, 1.0, 0.0]];
        let (data, _) = sample_mixture_dataset(&truths, 60, 0.5, 13);
        let mut cfg = EMConfig::new(2, 0, 5);
        cfg.init_optimizer = OptimizerConfig::default().with_max_steps(15);
        let out = em_fit(&data, &cfg, &quad()).unwrap();
        let init = cluster_init(
            &data,
            2,
            &quad(),
            &OptimizerConfig::default().with_max_steps(15),
            5,
        )
        .unwrap();
        let comps = out.mixture.components();
        for (c, i) in comps.iter().zip(&init) {
            let UtilityParams::Free(m) = c else { panic!() };
            assert_eq!(m.params(), i.params());
        }
        assert_eq!(out.mixture.weights(), &[0.5, 0.5]);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn em_responsibilities_are_normalized_and_ll_nondecreasing() {
        let truths = vec![
            vec![2.0, 1.0, 0.0, -1.0, -2.0],
            vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        ];
        let (data, _) = sample_mixture_dataset(&truths, 200, 0.5, 17);
        let mut cfg = EMConfig::new(2, 5, 19);
        cfg.m_step = OptimizerConfig::default().with_max_steps(40);
        cfg.init_optimizer = OptimizerConfig::default().with_max_steps(40);
        let out = em_fit(&data, &cfg, &quad()).unwrap();

        for row in &out.responsibilities {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "responsibility row sums to {sum}");
            assert!(row.iter().all(|&g| (0.0..=1.0).contains(&g)));
        }
        let pi_sum: f64 = out.mixture.weights().iter().sum();
        assert!((pi_sum - 1.0).abs() < 1e-9);
        assert!(out.mixture.weights().iter().all(|&p| p >= 0.0));
        // The simplex holds at every recorded round, not just the last.
        for row in &out.trace {
            let s: f64 = row.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "round {}: pi sums to {s}", row.round);
            assert!(row.weights.iter().all(|&p| p >= 0.0));
        }
        for w in out.trace.windows(2) {
            assert!(
                w[1].log_likelihood >= w[0].log_likelihood - 1e-4,
                "ll decreased: {} -> {}",
                w[0].log_likelihood,
                w[1].log_likelihood
            );
        }
    }

    #[test]
    fn em_is_deterministic_given_seed() {
        let truths = vec![vec![1.0, -1.0, 0.3, 0.0], vec![-0.6, 1.2, -0.8, 0.1]];
        let (data, _) = sample_mixture_dataset(&truths, 80, 0.5, 31);
        let mut cfg = EMConfig::new(2, 3, 77);
        cfg.m_step = OptimizerConfig::default().with_max_steps(15);
        cfg.init_optimizer = OptimizerConfig::default().with_max_steps(15);
        let a = em_fit(&data, &cfg, &quad()).unwrap();
        let b = em_fit(&data, &cfg, &quad()).unwrap();
        assert_eq!(a.mixture.weights(), b.mixture.weights());
        for (x, y) in a.mixture.components().iter().zip(b.mixture.components()) {
            let (UtilityParams::Free(mx), UtilityParams::Free(my)) = (x, y) else {
                panic!()
            };
            assert_eq!(mx.params(), my.params());
        }
    }

    #[test]
    fn em_nests_single_component_data() {
        let truths = vec![vec![1.5, 0.0, -1.5, 0.7]];
        let (data, _) = sample_mixture_dataset(&truths, 400, 0.5, 23);
        let mut cfg = EMConfig::new(2, 8, 29);
        cfg.m_step = OptimizerConfig::default().with_max_steps(40);
        cfg.init_optimizer = OptimizerConfig::default().with_max_steps(40);
        let out = em_fit(&data, &cfg, &quad()).unwrap();

        // Both components stay close to the single true component: the
        // mixture may keep a noise split alive, but neither half wanders
        // off to an unrelated solution.
        let w = out.mixture.weights();
        let UtilityParams::Free(c0) = &out.mixture.components()[0] else { panic!() };
        let UtilityParams::Free(c1) = &out.mixture.components()[1] else { panic!() };
        for c in [c0, c1] {
            let to_truth = crate::models::softmax_mse(c.params(), &truths[0]).unwrap();
            assert!(
                to_truth < 0.05 || w.iter().any(|&p| p > 0.85),
                "weights {w:?}, component-to-truth mse {to_truth}"
            );
        }

        // Mixture fits at least as well as a single fit.
        let single = fit_single_mnl(
            &data,
            &FreeUtilityModel::zeros(4),
            &OptimizerConfig::default().with_max_steps(60),
            &quad(),
            None,
        )
        .unwrap();
        let q = quad();
        let prepared = prepare_dataset(&data);
        let single_ll: f64 = prepared
            .iter()
            .map(|p| {
                pp_set_log_likelihood(p.chains(), &single.model.utilities().unwrap(), &q).unwrap()
            })
            .sum();
        let mix_ll: f64 = {
            let utils: Vec<UtilityVector<f64>> = out
                .mixture
                .components()
                .iter()
                .map(|c| match c {
                    UtilityParams::Free(m) => m.utilities().unwrap(),
                    _ => unreachable!(),
                })
                .collect();
            prepared
                .iter()
                .map(|p| {
                    let mut acc = LogSumAcc::new();
                    for (r, u) in utils.iter().enumerate() {
                        acc.push(
                            out.mixture.weights()[r].ln()
                                + pp_set_log_likelihood(p.chains(), u, &q).unwrap(),
                        );
                    }
                    acc.value()
                })
                .sum()
        };
        assert!(mix_ll >= single_ll - 1e-3, "mix {mix_ll} vs single {single_ll}");
    }
}
