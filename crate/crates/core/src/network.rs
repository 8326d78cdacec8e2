//! Network structure: nodes, conditional densities and polytree validation.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::gaussian::{GaussianError, GaussianMixture, NORMALIZED_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("network has no nodes")]
    EmptyNetwork,
    #[error("node id must be nonempty")]
    EmptyNodeId,
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("node `{node}` names unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("node `{node}`: CPD has {found} parent terms but the node has {expected} parents")]
    ArityMismatch {
        node: String,
        expected: usize,
        found: usize,
    },
    #[error("node `{0}` has no parents and needs a prior")]
    RootWithoutPrior(String),
    #[error("node `{0}` has parents and cannot carry a prior")]
    PriorWithParents(String),
    #[error("node `{node}`: {reason}")]
    InvalidCpd { node: String, reason: String },
    #[error("node `{node}`: {source}")]
    InvalidPrior {
        node: String,
        #[source]
        source: GaussianError,
    },
    #[error("directed cycle through node `{0}`")]
    DirectedCycle(String),
    #[error("undirected cycle through node `{0}`: network is not singly connected")]
    UndirectedCycle(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("evidence for node `{node}` is not finite: {value}")]
    NonFiniteEvidence { node: String, value: f64 },
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Unique node identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(NetworkError::EmptyNodeId);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One factor `N(u; variance, mean)` of a separable CPD component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factor {
    pub mean: f64,
    pub variance: f64,
}

/// A term `c_j · N(x; σ²_x, μ_x) · ∏ᵢ N(uᵢ; σ²_ij, μ_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdComponent {
    pub weight: f64,
    pub child: Factor,
    pub parents: Vec<Factor>,
}

/// Separable Gaussian-sum representation of `f(x | u₁, …, uₙ)`.
///
/// Each factor carries its own variance; a single shared variance per
/// component is the special case where all factor variances coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMixtureCpd {
    components: Vec<CpdComponent>,
}

impl ConditionalMixtureCpd {
    pub fn new(components: Vec<CpdComponent>) -> std::result::Result<Self, String> {
        let first = components.first().ok_or("CPD has no components")?;
        let arity = first.parents.len();
        for (j, c) in components.iter().enumerate() {
            if c.parents.len() != arity {
                return Err(format!(
                    "component {j} has {} parent terms, expected {arity}",
                    c.parents.len()
                ));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(format!("component {j} has invalid weight {}", c.weight));
            }
            for f in std::iter::once(&c.child).chain(&c.parents) {
                if !f.mean.is_finite() {
                    return Err(format!("component {j} has non-finite mean"));
                }
                if !(f.variance > 0.0 && f.variance.is_finite()) {
                    return Err(format!(
                        "component {j} has variance {}; CPD factors need positive variance",
                        f.variance
                    ));
                }
            }
        }
        Ok(Self { components })
    }

    /// Builds components that share one variance across all factors.
    pub fn shared_variance(
        terms: Vec<(f64, f64, Vec<f64>, f64)>,
    ) -> std::result::Result<Self, String> {
        Self::new(
            terms
                .into_iter()
                .map(|(weight, child_mean, parent_means, variance)| CpdComponent {
                    weight,
                    child: Factor {
                        mean: child_mean,
                        variance,
                    },
                    parents: parent_means
                        .into_iter()
                        .map(|mean| Factor { mean, variance })
                        .collect(),
                })
                .collect(),
        )
    }

    pub fn components(&self) -> &[CpdComponent] {
        &self.components
    }

    pub fn arity(&self) -> usize {
        self.components[0].parents.len()
    }

    /// `f(x | u)` evaluated pointwise.
    pub fn density(&self, x: f64, parents: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let mut v = c.weight * gauss(x, c.child);
                for (u, f) in parents.iter().zip(&c.parents) {
                    v *= gauss(*u, *f);
                }
                v
            })
            .sum()
    }
}

fn gauss(x: f64, f: Factor) -> f64 {
    let d = x - f.mean;
    (-(d * d) / (2.0 * f.variance)).exp() / (2.0 * std::f64::consts::PI * f.variance).sqrt()
}

/// `X = Σ bᵢ Uᵢ + w`, `w ~ N(0, noise_variance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCpd {
    coefficients: Vec<f64>,
    noise_variance: f64,
}

impl LinearCpd {
    pub fn new(coefficients: Vec<f64>, noise_variance: f64) -> std::result::Result<Self, String> {
        if let Some(b) = coefficients.iter().find(|b| **b == 0.0 || !b.is_finite()) {
            return Err(format!("linear coefficients must be finite and nonzero, got {b}"));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(format!("noise variance must be positive, got {noise_variance}"));
        }
        Ok(Self {
            coefficients,
            noise_variance,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn density(&self, x: f64, parents: &[f64]) -> f64 {
        let mean: f64 = self.coefficients.iter().zip(parents).map(|(b, u)| b * u).sum();
        gauss(
            x,
            Factor {
                mean,
                variance: self.noise_variance,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeModel {
    Prior(GaussianMixture),
    MixtureCpd(ConditionalMixtureCpd),
    Linear(LinearCpd),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub parents: Vec<NodeId>,
    pub model: NodeModel,
}

impl NodeSpec {
    pub fn root(id: &str, prior: GaussianMixture) -> Result<Self> {
        Ok(Self {
            id: NodeId::new(id)?,
            parents: Vec::new(),
            model: NodeModel::Prior(prior),
        })
    }

    pub fn child(id: &str, parents: &[&str], model: NodeModel) -> Result<Self> {
        Ok(Self {
            id: NodeId::new(id)?,
            parents: parents.iter().map(|p| NodeId::new(*p)).collect::<Result<_>>()?,
            model,
        })
    }
}

/// Validated polytree (or forest of polytrees).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<NodeSpec>,
    index: HashMap<NodeId, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Network {
    /// Validates `specs` and derives adjacency.
    pub fn build(specs: Vec<NodeSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(NetworkError::EmptyNetwork);
        }
        let mut index = HashMap::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateNodeId(s.id.to_string()));
            }
        }

        let mut nodes = specs;
        let mut parents = Vec::with_capacity(nodes.len());
        for s in &mut nodes {
            let node = s.id.to_string();
            let ps = s
                .parents
                .iter()
                .map(|p| {
                    index.get(p).copied().ok_or_else(|| NetworkError::UnknownParent {
                        node: node.clone(),
                        parent: p.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let arity = |found| {
                if found != ps.len() {
                    Err(NetworkError::ArityMismatch {
                        node: node.clone(),
                        expected: ps.len(),
                        found,
                    })
                } else {
                    Ok(())
                }
            };
            match &mut s.model {
                NodeModel::Prior(prior) => {
                    if !ps.is_empty() {
                        return Err(NetworkError::PriorWithParents(node));
                    }
                    if !prior.is_normalized() {
                        *prior = prior.normalize().map_err(|source| NetworkError::InvalidPrior {
                            node: node.clone(),
                            source,
                        })?;
                    }
                    debug_assert!((prior.total_weight() - 1.0).abs() <= NORMALIZED_TOLERANCE);
                }
                NodeModel::MixtureCpd(cpd) => {
                    if ps.is_empty() {
                        return Err(NetworkError::RootWithoutPrior(node));
                    }
                    arity(cpd.arity())?;
                }
                NodeModel::Linear(cpd) => {
                    if ps.is_empty() {
                        return Err(NetworkError::RootWithoutPrior(node));
                    }
                    arity(cpd.coefficients().len())?;
                }
            }
            parents.push(ps);
        }

        let mut children = vec![Vec::new(); nodes.len()];
        for (c, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        let net = Self {
            nodes,
            index,
            parents,
            children,
        };
        net.validate_polytree()?;
        Ok(net)
    }

    /// Checks that edges are acyclic and that the undirected skeleton is a
    /// forest.
    pub fn validate_polytree(&self) -> Result<()> {
        let n = self.nodes.len();
        // Kahn's algorithm; leftover nodes lie on a directed cycle
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if seen < n {
            let on_cycle = (0..n).find(|&i| indegree[i] > 0).expect("cycle exists");
            return Err(NetworkError::DirectedCycle(self.nodes[on_cycle].id.to_string()));
        }

        let mut uf = UnionFind::new(n);
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                if !uf.union(p, c) {
                    return Err(NetworkError::UndirectedCycle(self.nodes[c].id.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeSpec {
        &self.nodes[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(&NodeId(id.to_string())).copied()
    }

    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children_of(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Connected components of the skeleton, each sorted by node index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut uf = UnionFind::new(n);
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                uf.union(p, c);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Observed values keyed by node id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    assignments: BTreeMap<NodeId, f64>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `node = value`, replacing any earlier value for the node.
    pub fn set(&mut self, node: &str, value: f64) -> Result<()> {
        let id = NodeId::new(node)?;
        if !value.is_finite() {
            return Err(NetworkError::NonFiniteEvidence {
                node: node.to_string(),
                value,
            });
        }
        self.assignments.insert(id, value);
        Ok(())
    }

    pub fn with(mut self, node: &str, value: f64) -> Result<Self> {
        self.set(node, value)?;
        Ok(self)
    }

    pub fn get(&self, node: &str) -> Option<f64> {
        self.assignments.get(&NodeId(node.to_string())).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, f64)> {
        self.assignments.iter().map(|(k, v)| (k, *v))
    }

    /// Resolves keys against `net`, returning per-node observed values.
    pub fn resolve(&self, net: &Network) -> Result<Vec<Option<f64>>> {
        let mut out = vec![None; net.len()];
        for (id, v) in &self.assignments {
            let i = net
                .index_of(id.as_str())
                .ok_or_else(|| NetworkError::UnknownNode(id.to_string()))?;
            out[i] = Some(*v);
        }
        Ok(out)
    }
}
