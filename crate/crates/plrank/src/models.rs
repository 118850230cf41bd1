//! Utility parameterizations, mixtures, and the softmax-MSE metric.

use thiserror::Error;

use crate::likelihood::{LikelihoodError, UtilityVector};
use crate::poset::ItemId;
use crate::scalar::{log_sum_exp, Real};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("component counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("matching more than {0} components is not supported")]
    TooManyComponents(usize),
    #[error("no feature vector for item {0}")]
    MissingFeature(ItemId),
    #[error("duplicate feature name {0:?}")]
    DuplicateFeatureName(String),
    #[error("parameter {0} is not finite")]
    NonFiniteParam(usize),
    #[error("mixture weights must form a probability simplex")]
    InvalidWeights,
    #[error("binding refers to component {component} parameter {index}, which does not exist")]
    BadBinding { component: usize, index: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// One free utility score per item of the universe.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeUtilityModel<R: Real> {
    params: Vec<R>,
}

impl<R: Real> FreeUtilityModel<R> {
    pub fn new(params: Vec<R>) -> Result<Self, ModelError> {
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(ModelError::NonFiniteParam(i));
        }
        Ok(Self { params })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![R::zero(); n],
        }
    }

    pub fn params(&self) -> &[R] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [R] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Free parameters are the utilities.
    pub fn utilities(&self) -> Result<UtilityVector<R>, ModelError> {
        Ok(UtilityVector::new(self.params.clone())?)
    }
}

/// Linear-in-features utilities: `w_i = theta . x_i`.
///
/// A model with zero features scores every item 0, i.e. uniform choice;
/// constant utilities are expressed by a constant feature column.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearUtilityModel<R: Real> {
    feature_names: Vec<String>,
    coeffs: Vec<R>,
}

impl<R: Real> LinearUtilityModel<R> {
    pub fn new(feature_names: Vec<String>, coeffs: Vec<R>) -> Result<Self, ModelError> {
        if feature_names.len() != coeffs.len() {
            return Err(ModelError::LengthMismatch(feature_names.len(), coeffs.len()));
        }
        for (i, name) in feature_names.iter().enumerate() {
            if feature_names[..i].contains(name) {
                return Err(ModelError::DuplicateFeatureName(name.clone()));
            }
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(ModelError::NonFiniteParam(i));
        }
        Ok(Self {
            feature_names,
            coeffs,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn coeffs(&self) -> &[R] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [R] {
        &mut self.coeffs
    }

    /// Utility of one item given its feature vector.
    pub fn score(&self, features: &[R]) -> Result<R, ModelError> {
        if features.len() != self.coeffs.len() {
            return Err(ModelError::LengthMismatch(self.coeffs.len(), features.len()));
        }
        Ok(self
            .coeffs
            .iter()
            .zip(features)
            .map(|(&c, &x)| c * x)
            .fold(R::zero(), |a, b| a + b))
    }

    /// Utilities over a universe of `universe` items, scoring `items` via
    /// the feature source and leaving the rest at zero.
    pub fn utilities<F>(
        &self,
        universe: usize,
        items: &[ItemId],
        mut features: F,
    ) -> Result<UtilityVector<R>, ModelError>
    where
        F: FnMut(ItemId) -> Option<Vec<R>>,
    {
        let mut scores = vec![R::zero(); universe];
        for &item in items {
            let x = features(item).ok_or(ModelError::MissingFeature(item))?;
            scores[item as usize] = self.score(&x)?;
        }
        Ok(UtilityVector::new(scores)?)
    }
}

/// Either parameterization, as stored inside a mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilityParams<R: Real> {
    Free(FreeUtilityModel<R>),
    Linear(LinearUtilityModel<R>),
}

impl<R: Real> UtilityParams<R> {
    fn param_slice(&self) -> &[R] {
        match self {
            UtilityParams::Free(m) => m.params(),
            UtilityParams::Linear(m) => m.coeffs(),
        }
    }

    fn param_slice_mut(&mut self) -> &mut [R] {
        match self {
            UtilityParams::Free(m) => m.params_mut(),
            UtilityParams::Linear(m) => m.coeffs_mut(),
        }
    }
}

/// A parameter location inside a mixture: `(component index, parameter index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub component: usize,
    pub index: usize,
}

/// A group of parameters constrained to stay numerically identical across
/// components (e.g. a degree exponent shared by two attachment components).
#[derive(Debug, Clone, PartialEq)]
pub struct BindingGroup {
    pub name: String,
    pub members: Vec<ParamRef>,
}

/// Mixture of utility models with weights on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel<R: Real> {
    weights: Vec<R>,
    components: Vec<UtilityParams<R>>,
    shared_bindings: Vec<BindingGroup>,
}

impl<R: Real> MixtureModel<R> {
    pub fn new(
        weights: Vec<R>,
        components: Vec<UtilityParams<R>>,
        shared_bindings: Vec<BindingGroup>,
    ) -> Result<Self, ModelError> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(ModelError::CountMismatch(weights.len(), components.len()));
        }
        let sum: R = weights.iter().copied().sum();
        let one = R::one();
        if weights.iter().any(|&p| p < R::zero())
            || (sum - one).abs() > R::of(1e-9)
        {
            return Err(ModelError::InvalidWeights);
        }
        let model = Self {
            weights,
            components,
            shared_bindings,
        };
        for group in &model.shared_bindings {
            for &m in &group.members {
                if model
                    .components
                    .get(m.component)
                    .is_none_or(|c| m.index >= c.param_slice().len())
                {
                    return Err(ModelError::BadBinding {
                        component: m.component,
                        index: m.index,
                    });
                }
            }
        }
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[R] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<R>) -> Result<(), ModelError> {
        if weights.len() != self.components.len() {
            return Err(ModelError::CountMismatch(weights.len(), self.components.len()));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn components(&self) -> &[UtilityParams<R>] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [UtilityParams<R>] {
        &mut self.components
    }

    pub fn shared_bindings(&self) -> &[BindingGroup] {
        &self.shared_bindings
    }

    /// Copies each binding group's first member into the remaining members,
    /// making them bit-identical.
    pub fn enforce_bindings(&mut self) {
        for gi in 0..self.shared_bindings.len() {
            let members = self.shared_bindings[gi].members.clone();
            let Some(&head) = members.first() else { continue };
            let v = self.components[head.component].param_slice()[head.index];
            for &m in &members[1..] {
                self.components[m.component].param_slice_mut()[m.index] = v;
            }
        }
    }

    /// True when every binding group is already bit-identical.
    pub fn bindings_consistent(&self) -> bool {
        self.shared_bindings.iter().all(|g| {
            let mut vals = g
                .members
                .iter()
                .map(|m| self.components[m.component].param_slice()[m.index]);
            match vals.next() {
                None => true,
                Some(first) => vals.all(|v| v == first),
            }
        })
    }
}

/// Softmax normalization of a score vector.
pub fn softmax<R: Real>(xs: &[R]) -> Vec<R> {
    let lse = log_sum_exp(xs.iter().copied());
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Mean squared error between the softmax normalizations of two score
/// vectors. Invariant under a constant shift of either input.
pub fn softmax_mse<R: Real>(estimate: &[R], truth: &[R]) -> Result<R, ModelError> {
    if estimate.len() != truth.len() {
        return Err(ModelError::LengthMismatch(estimate.len(), truth.len()));
    }
    if estimate.is_empty() {
        return Ok(R::zero());
    }
    let pe = softmax(estimate);
    let pt = softmax(truth);
    let sum: R = pe
        .iter()
        .zip(&pt)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / R::of_usize(estimate.len()))
}

/// Matches estimated components to ground-truth components by exhaustive
/// permutation search, minimizing the average softmax MSE.
///
/// Returns `(perm, mse)` where `perm[t]` is the index of the estimated
/// component assigned to truth component `t`.
pub fn match_components<R: Real>(
    estimated: &[Vec<R>],
    truth: &[Vec<R>],
) -> Result<(Vec<usize>, R), ModelError> {
    if estimated.len() != truth.len() {
        return Err(ModelError::CountMismatch(estimated.len(), truth.len()));
    }
    let k = truth.len();
    if k == 0 {
        return Ok((vec![], R::zero()));
    }
    if k > 8 {
        return Err(ModelError::TooManyComponents(8));
    }
    // Pairwise MSE matrix, then brute force over assignments.
    let mut cost = vec![vec![R::zero(); k]; k];
    for t in 0..k {
        for e in 0..k {
            cost[t][e] = softmax_mse(&estimated[e], &truth[t])?;
        }
    }
    let mut best: Option<(Vec<usize>, R)> = None;
    let mut perm: Vec<usize> = (0..k).collect();
    permute_all(&mut perm, 0, &mut |p| {
        let total: R = (0..k).map(|t| cost[t][p[t]]).sum();
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            best = Some((p.to_vec(), total));
        }
    });
    let (perm, total) = best.expect("k >= 1");
    Ok((perm, total / R::of_usize(k)))
}

fn permute_all(xs: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == xs.len() {
        f(xs);
        return;
    }
    for j in i..xs.len() {
        xs.swap(i, j);
        permute_all(xs, i + 1, f);
        xs.swap(i, j);
    }
}
