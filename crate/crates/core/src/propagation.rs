//! Message passing on polytrees with Gaussian-sum messages.
//!
//! Every π message is a normalized mixture (a single Dirac when sent by an
//! observed node). Every λ message is either [`Likelihood::Vacuous`] or a
//! mixture whose largest weight is one; overall constants of likelihoods
//! never matter because beliefs are renormalized at the end.
//!
//! Component weights are assembled in the log domain so that products of
//! many small Gaussian evaluations do not underflow before normalization.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gaussian::{
    collapse_point_mass, from_log_weights, log_overlap, log_sum_exp, scaled_product,
    GaussianError, GaussianMixture, Likelihood, ReductionPolicy,
};
use crate::network::{
    ConditionalMixtureCpd, Evidence, LinearCpd, Network, NetworkError, NodeId, NodeModel,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagationError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("likelihood product is identically zero")]
    EmptyLikelihood,
    #[error("contradictory evidence: messages at node `{node}` have no common support")]
    ContradictoryEvidence { node: String },
    #[error("expected {expected} parent messages, got {found}")]
    MessageCount { expected: usize, found: usize },
    #[error("parent index {index} out of range for {arity} parents")]
    ParentIndex { index: usize, arity: usize },
}

pub type Result<T> = std::result::Result<T, PropagationError>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InferenceOptions {
    pub reduction: ReductionPolicy,
}

impl InferenceOptions {
    /// Exact propagation: no pruning or merging.
    pub fn exact() -> Self {
        Self {
            reduction: ReductionPolicy::identity(),
        }
    }
}

/// All messages exchanged in one sweep, keyed by `(sender, receiver)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeMessages {
    pub pi: BTreeMap<(NodeId, NodeId), GaussianMixture>,
    pub lambda: BTreeMap<(NodeId, NodeId), Likelihood>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeDiagnostics {
    pub components_before_reduction: usize,
    pub components_after_reduction: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// Normalized posterior of every node; observed nodes hold a unit Dirac.
    pub beliefs: BTreeMap<NodeId, GaussianMixture>,
    pub diagnostics: BTreeMap<NodeId, NodeDiagnostics>,
    pub messages: EdgeMessages,
}

impl InferenceResult {
    pub fn belief(&self, node: &str) -> Option<&GaussianMixture> {
        self.beliefs.get(&NodeId::new(node).ok()?)
    }
}

fn finish_density(m: GaussianMixture, policy: &ReductionPolicy) -> Result<GaussianMixture> {
    let m = m.normalize()?;
    if policy.is_identity() {
        return Ok(m);
    }
    Ok(m.reduce(policy).mixture)
}

fn finish_likelihood(m: GaussianMixture, policy: &ReductionPolicy) -> Result<GaussianMixture> {
    if policy.is_identity() {
        return Ok(m.max_scaled()?);
    }
    Ok(m.normalize()?.reduce(policy).mixture.max_scaled()?)
}

fn empty_as_likelihood(e: GaussianError) -> PropagationError {
    match e {
        GaussianError::EmptyMixture | GaussianError::NormalizationFailure(_) => {
            PropagationError::EmptyLikelihood
        }
        other => other.into(),
    }
}

/// `ln Σ_k α_k N(mean; variance + σ_k², μ_k)`: log overlap of one unit
/// Gaussian factor with a whole mixture.
fn log_mixture_overlap(mean: f64, variance: f64, m: &GaussianMixture) -> Result<f64> {
    let terms = m
        .iter()
        .map(|c| Ok(c.weight.ln() + log_overlap(mean, variance, c.mean, c.variance)?))
        .collect::<std::result::Result<Vec<f64>, GaussianError>>()?;
    Ok(log_sum_exp(terms))
}

/// Product of the non-vacuous likelihoods, vacuous when there are none.
pub fn combine_lambda(messages: &[Likelihood], policy: &ReductionPolicy) -> Result<Likelihood> {
    let mut present = messages.iter().filter_map(Likelihood::as_mixture);
    let Some(first) = present.next() else {
        return Ok(Likelihood::Vacuous);
    };
    let mut acc = first.clone();
    for next in present {
        let product = scaled_product(&acc, next).map_err(empty_as_likelihood)?;
        acc = finish_likelihood(product, policy)?;
    }
    Ok(Likelihood::Mixture(acc))
}

fn check_count(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(PropagationError::MessageCount { expected, found });
    }
    Ok(())
}

/// `ln γ_j` for every CPD component: `c_j ∏ᵢ Σ_k α_k^i N(μ_ij; σ²_ij + σ²_k, μ_k)`.
pub fn pi_component_log_weights(
    cpd: &ConditionalMixtureCpd,
    parent_pis: &[GaussianMixture],
) -> Result<Vec<f64>> {
    check_count(cpd.arity(), parent_pis.len())?;
    cpd.components()
        .iter()
        .map(|c| {
            let mut lw = c.weight.ln();
            for (f, pi) in c.parents.iter().zip(parent_pis) {
                lw += log_mixture_overlap(f.mean, f.variance, pi)?;
            }
            Ok(lw)
        })
        .collect()
}

/// π(x) for a node with a separable mixture CPD.
pub fn compute_pi_mixture(
    cpd: &ConditionalMixtureCpd,
    parent_pis: &[GaussianMixture],
    policy: &ReductionPolicy,
) -> Result<GaussianMixture> {
    let log_weights = pi_component_log_weights(cpd, parent_pis)?;
    let terms = cpd
        .components()
        .iter()
        .zip(log_weights)
        .map(|(c, lw)| (lw, c.child.mean, c.child.variance))
        .collect();
    finish_density(from_log_weights(terms)?, policy)
}

/// Visits every index tuple of a set of mixtures, last position fastest.
fn for_each_tuple(sizes: &[usize], mut visit: impl FnMut(&[usize])) {
    if sizes.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; sizes.len()];
    loop {
        visit(&idx);
        let mut pos = sizes.len();
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < sizes[pos] {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// π(x) for a linear-Gaussian node, in closed form over all parent
/// component tuples.
pub fn compute_pi_linear(
    cpd: &LinearCpd,
    parent_pis: &[GaussianMixture],
    policy: &ReductionPolicy,
) -> Result<GaussianMixture> {
    let b = cpd.coefficients();
    check_count(b.len(), parent_pis.len())?;
    let sizes: Vec<usize> = parent_pis.iter().map(GaussianMixture::len).collect();
    let mut terms = Vec::with_capacity(sizes.iter().product());
    for_each_tuple(&sizes, |idx| {
        let mut lw = 0.0;
        let mut var = cpd.noise_variance();
        let mut mean = 0.0;
        for ((pi, &k), &bi) in parent_pis.iter().zip(idx).zip(b) {
            let c = pi.components()[k];
            lw += c.weight.ln();
            var += bi * bi * c.variance;
            mean += bi * c.mean;
        }
        terms.push((lw, mean, var));
    });
    finish_density(from_log_weights(terms)?, policy)
}

fn belief_unreduced(pi: &GaussianMixture, lambda: &Likelihood) -> Result<GaussianMixture> {
    match lambda {
        Likelihood::Vacuous => Ok(pi.clone()),
        Likelihood::Mixture(l) => {
            let product = scaled_product(pi, l).map_err(empty_as_likelihood)?;
            Ok(collapse_point_mass(product).normalize()?)
        }
    }
}

/// BEL(x) ∝ π(x) λ(x), normalized.
pub fn compute_belief(
    pi: &GaussianMixture,
    lambda: &Likelihood,
    policy: &ReductionPolicy,
) -> Result<GaussianMixture> {
    match lambda {
        Likelihood::Vacuous => Ok(pi.clone()),
        _ => finish_density(belief_unreduced(pi, lambda)?, policy),
    }
}

/// π message to child `target`: the belief computed with that child's λ
/// treated as vacuous. An observed node sends its Dirac to every child.
pub fn pi_message_to_child(
    pi: &GaussianMixture,
    child_lambdas: &[Likelihood],
    target: usize,
    observed: Option<f64>,
    policy: &ReductionPolicy,
) -> Result<GaussianMixture> {
    if let Some(x0) = observed {
        return Ok(GaussianMixture::dirac(x0));
    }
    let others: Vec<Likelihood> = child_lambdas
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != target)
        .map(|(_, l)| l.clone())
        .collect();
    let lambda = combine_lambda(&others, policy)?;
    compute_belief(pi, &lambda, policy)
}

fn check_target(target: usize, arity: usize) -> Result<()> {
    if target >= arity {
        return Err(PropagationError::ParentIndex {
            index: target,
            arity,
        });
    }
    Ok(())
}

/// `ln ψ_j` for every CPD component of the λ message to parent `target`:
/// `c_j (Σ_l β_l N(μ_x^j; σ²_x^j + σ²_l, μ_l)) ∏_{k≠target} Σ_m α_m^k N(μ_kj; σ²_kj + σ²_m, μ_m)`.
///
/// `other_parent_pis` lists the co-parents' π messages in parent order,
/// skipping `target`.
pub fn lambda_component_log_weights(
    cpd: &ConditionalMixtureCpd,
    combined_lambda: &GaussianMixture,
    other_parent_pis: &[GaussianMixture],
    target: usize,
) -> Result<Vec<f64>> {
    let n = cpd.arity();
    check_target(target, n)?;
    check_count(n - 1, other_parent_pis.len())?;
    cpd.components()
        .iter()
        .map(|c| {
            let mut lw =
                c.weight.ln() + log_mixture_overlap(c.child.mean, c.child.variance, combined_lambda)?;
            let others = c
                .parents
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != target)
                .map(|(_, f)| f);
            for (f, pi) in others.zip(other_parent_pis) {
                lw += log_mixture_overlap(f.mean, f.variance, pi)?;
            }
            Ok(lw)
        })
        .collect()
}

/// λ message from a mixture-CPD node to parent `target`.
pub fn lambda_message_to_parent_mixture(
    cpd: &ConditionalMixtureCpd,
    combined_lambda: &Likelihood,
    other_parent_pis: &[GaussianMixture],
    target: usize,
    policy: &ReductionPolicy,
) -> Result<Likelihood> {
    let Likelihood::Mixture(lambda) = combined_lambda else {
        check_target(target, cpd.arity())?;
        return Ok(Likelihood::Vacuous);
    };
    let log_weights = lambda_component_log_weights(cpd, lambda, other_parent_pis, target)?;
    let terms = cpd
        .components()
        .iter()
        .zip(log_weights)
        .map(|(c, lw)| (lw, c.parents[target].mean, c.parents[target].variance))
        .collect();
    let m = from_log_weights(terms).map_err(empty_as_likelihood)?;
    Ok(Likelihood::Mixture(finish_likelihood(m, policy)?))
}

/// λ message from a linear-Gaussian node to parent `target`, in closed form.
pub fn lambda_message_to_parent_linear(
    cpd: &LinearCpd,
    combined_lambda: &Likelihood,
    other_parent_pis: &[GaussianMixture],
    target: usize,
    policy: &ReductionPolicy,
) -> Result<Likelihood> {
    let b = cpd.coefficients();
    check_target(target, b.len())?;
    let Likelihood::Mixture(lambda) = combined_lambda else {
        return Ok(Likelihood::Vacuous);
    };
    check_count(b.len() - 1, other_parent_pis.len())?;
    let bi = b[target];
    let other_b: Vec<f64> = b
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != target)
        .map(|(_, v)| *v)
        .collect();
    let mut sizes = vec![lambda.len()];
    sizes.extend(other_parent_pis.iter().map(GaussianMixture::len));
    let mut terms = Vec::with_capacity(sizes.iter().product());
    let log_abs_b = bi.abs().ln();
    for_each_tuple(&sizes, |idx| {
        let l = lambda.components()[idx[0]];
        let mut lw = l.weight.ln() - log_abs_b;
        let mut var = cpd.noise_variance() + l.variance;
        let mut shift = 0.0;
        for ((pi, &k), &bk) in other_parent_pis.iter().zip(&idx[1..]).zip(&other_b) {
            let c = pi.components()[k];
            lw += c.weight.ln();
            var += bk * bk * c.variance;
            shift += bk * c.mean;
        }
        terms.push((lw, (l.mean - shift) / bi, var / (bi * bi)));
    });
    let m = from_log_weights(terms).map_err(empty_as_likelihood)?;
    Ok(Likelihood::Mixture(finish_likelihood(m, policy)?))
}

/// Runs a full collect/distribute sweep and returns every node's belief.
///
/// Each connected component is rooted at its lexicographically smallest
/// node id.
pub fn propagate(
    net: &Network,
    evidence: &Evidence,
    options: &InferenceOptions,
) -> Result<InferenceResult> {
    propagate_with_pivots(net, evidence, options, &[])
}

/// As [`propagate`], but any component containing a node named in `pivots`
/// is rooted there instead.
pub fn propagate_with_pivots(
    net: &Network,
    evidence: &Evidence,
    options: &InferenceOptions,
    pivots: &[&str],
) -> Result<InferenceResult> {
    let observed = evidence.resolve(net)?;
    let mut sweep = Sweep::new(net, observed, options.reduction);

    for component in net.components() {
        let pivot = pivots
            .iter()
            .filter_map(|p| net.index_of(p))
            .find(|i| component.contains(i))
            .unwrap_or_else(|| {
                *component
                    .iter()
                    .min_by(|a, b| net.node(**a).id.cmp(&net.node(**b).id))
                    .expect("components are nonempty")
            });
        let (order, tree_parent) = rooted_order(net, pivot);
        for &v in order.iter().rev() {
            if let Some(p) = tree_parent[v] {
                sweep.send(v, p)?;
            }
        }
        for &v in &order {
            for &u in neighbours(net, v).iter() {
                if tree_parent[u] == Some(v) {
                    sweep.send(v, u)?;
                }
            }
        }
    }
    sweep.finish()
}

fn neighbours(net: &Network, v: usize) -> Vec<usize> {
    net.parents_of(v)
        .iter()
        .chain(net.children_of(v))
        .copied()
        .collect()
}

/// Preorder of the skeleton tree rooted at `pivot`, with each node's parent
/// in that rooted tree.
fn rooted_order(net: &Network, pivot: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut tree_parent = vec![None; net.len()];
    let mut visited = vec![false; net.len()];
    let mut order = Vec::new();
    let mut stack = vec![pivot];
    visited[pivot] = true;
    while let Some(v) = stack.pop() {
        order.push(v);
        for u in neighbours(net, v).into_iter().rev() {
            if !visited[u] {
                visited[u] = true;
                tree_parent[u] = Some(v);
                stack.push(u);
            }
        }
    }
    (order, tree_parent)
}

struct Sweep<'a> {
    net: &'a Network,
    observed: Vec<Option<f64>>,
    policy: ReductionPolicy,
    /// pi_in[child][k]: π message from the k-th parent of `child`.
    pi_in: Vec<Vec<Option<GaussianMixture>>>,
    /// lambda_in[parent][k]: λ message from the k-th child of `parent`.
    lambda_in: Vec<Vec<Option<Likelihood>>>,
    node_pi: Vec<Option<GaussianMixture>>,
}

impl<'a> Sweep<'a> {
    fn new(net: &'a Network, observed: Vec<Option<f64>>, policy: ReductionPolicy) -> Self {
        let n = net.len();
        Self {
            net,
            observed,
            policy,
            pi_in: (0..n).map(|i| vec![None; net.parents_of(i).len()]).collect(),
            lambda_in: (0..n).map(|i| vec![None; net.children_of(i).len()]).collect(),
            node_pi: vec![None; n],
        }
    }

    fn name(&self, i: usize) -> String {
        self.net.node(i).id.to_string()
    }

    fn at_node<T>(&self, node: usize, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            PropagationError::EmptyLikelihood
            | PropagationError::Gaussian(GaussianError::EmptyMixture)
            | PropagationError::Gaussian(GaussianError::NormalizationFailure(_)) => {
                PropagationError::ContradictoryEvidence {
                    node: self.name(node),
                }
            }
            other => other,
        })
    }

    fn incoming_pis(&self, v: usize, skip: Option<usize>) -> Vec<GaussianMixture> {
        self.pi_in[v]
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != skip)
            .map(|(_, m)| m.clone().expect("π message scheduled before use"))
            .collect()
    }

    /// λ messages into `v`; the slot of child `skip` reads as vacuous since
    /// it may not have arrived yet.
    fn incoming_lambdas(&self, v: usize, skip: Option<usize>) -> Vec<Likelihood> {
        self.lambda_in[v]
            .iter()
            .enumerate()
            .map(|(k, m)| match m {
                _ if Some(k) == skip => Likelihood::Vacuous,
                Some(m) => m.clone(),
                None => panic!("λ message scheduled before use"),
            })
            .collect()
    }

    fn pi_of(&mut self, v: usize) -> Result<GaussianMixture> {
        if let Some(pi) = &self.node_pi[v] {
            return Ok(pi.clone());
        }
        let pis = self.incoming_pis(v, None);
        let r = match &self.net.node(v).model {
            NodeModel::Prior(prior) => Ok(prior.clone()),
            NodeModel::MixtureCpd(cpd) => compute_pi_mixture(cpd, &pis, &self.policy),
            NodeModel::Linear(cpd) => compute_pi_linear(cpd, &pis, &self.policy),
        };
        let pi = self.at_node(v, r)?;
        self.node_pi[v] = Some(pi.clone());
        Ok(pi)
    }

    fn combined_lambda(&self, v: usize) -> Result<Likelihood> {
        if let Some(x0) = self.observed[v] {
            return Ok(Likelihood::Mixture(GaussianMixture::dirac(x0)));
        }
        let r = combine_lambda(&self.incoming_lambdas(v, None), &self.policy);
        self.at_node(v, r)
    }

    fn send(&mut self, from: usize, to: usize) -> Result<()> {
        if let Some(k) = self.net.children_of(from).iter().position(|&c| c == to) {
            let msg = match self.observed[from] {
                Some(x0) => GaussianMixture::dirac(x0),
                None => {
                    let pi = self.pi_of(from)?;
                    let lambdas = self.incoming_lambdas(from, Some(k));
                    let r = pi_message_to_child(&pi, &lambdas, k, None, &self.policy);
                    self.at_node(from, r)?
                }
            };
            let slot = self.net.parents_of(to).iter().position(|&p| p == from).unwrap();
            self.pi_in[to][slot] = Some(msg);
        } else {
            let i = self.net.parents_of(from).iter().position(|&p| p == to).unwrap();
            let lambda = self.combined_lambda(from)?;
            let others = self.incoming_pis(from, Some(i));
            let r = match &self.net.node(from).model {
                NodeModel::MixtureCpd(cpd) => {
                    lambda_message_to_parent_mixture(cpd, &lambda, &others, i, &self.policy)
                }
                NodeModel::Linear(cpd) => {
                    lambda_message_to_parent_linear(cpd, &lambda, &others, i, &self.policy)
                }
                NodeModel::Prior(_) => unreachable!("roots have no parents"),
            };
            let msg = self.at_node(from, r)?;
            let slot = self.net.children_of(to).iter().position(|&c| c == from).unwrap();
            self.lambda_in[to][slot] = Some(msg);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<InferenceResult> {
        let mut beliefs = BTreeMap::new();
        let mut diagnostics = BTreeMap::new();
        for v in 0..self.net.len() {
            let id = self.net.node(v).id.clone();
            let (belief, before) = match self.observed[v] {
                Some(x0) => {
                    // a point-mass π elsewhere makes the observation impossible
                    let pi = self.pi_of(v)?;
                    let evidence = Likelihood::Mixture(GaussianMixture::dirac(x0));
                    self.at_node(v, belief_unreduced(&pi, &evidence))?;
                    (GaussianMixture::dirac(x0), 1)
                }
                None => {
                    let pi = self.pi_of(v)?;
                    let lambda = self.combined_lambda(v)?;
                    let raw = self.at_node(v, belief_unreduced(&pi, &lambda))?;
                    let before = raw.len();
                    let reduced = if lambda.is_vacuous() {
                        raw
                    } else {
                        self.at_node(v, finish_density(raw, &self.policy))?
                    };
                    (reduced, before)
                }
            };
            diagnostics.insert(
                id.clone(),
                NodeDiagnostics {
                    components_before_reduction: before,
                    components_after_reduction: belief.len(),
                },
            );
            beliefs.insert(id, belief);
        }

        let mut messages = EdgeMessages::default();
        for child in 0..self.net.len() {
            for (k, &parent) in self.net.parents_of(child).iter().enumerate() {
                let key = (self.net.node(parent).id.clone(), self.net.node(child).id.clone());
                if let Some(m) = self.pi_in[child][k].take() {
                    messages.pi.insert(key, m);
                }
            }
            for (k, &c) in self.net.children_of(child).iter().enumerate() {
                let key = (self.net.node(c).id.clone(), self.net.node(child).id.clone());
                if let Some(m) = self.lambda_in[child][k].take() {
                    messages.lambda.insert(key, m);
                }
            }
        }
        Ok(InferenceResult {
            beliefs,
            diagnostics,
            messages,
        })
    }
}
