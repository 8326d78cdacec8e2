//! JSON network documents.
//!
//! ```json
//! { "nodes": [
//!   { "id": "X", "prior": [ { "w": 1.0, "mean": 0.0, "var": 1.0 } ] },
//!   { "id": "Z", "parents": ["X"], "linear_cpd": { "coeffs": [1.0], "noise_var": 0.25 } }
//! ] }
//! ```
//!
//! Non-root nodes carry either `linear_cpd` or `mixture_cpd`, an array of
//! `{ "w", "child_mean", "child_var", "parents": [ { "mean", "var" }, … ] }`.
//! Numbers are written with 17 significant digits.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::gaussian::{GaussianMixture, WeightedGaussian};
use crate::network::{
    ConditionalMixtureCpd, CpdComponent, Factor, LinearCpd, Network, NetworkError, NodeId,
    NodeModel, NodeSpec,
};

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("node `{node}`: {message}")]
    Model { node: String, message: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DocumentError {
    /// Node the error refers to, when there is one.
    pub fn node(&self) -> Option<String> {
        match self {
            Self::Model { node, .. } => Some(node.clone()),
            Self::Network(e) => match e {
                NetworkError::DuplicateNodeId(n)
                | NetworkError::RootWithoutPrior(n)
                | NetworkError::PriorWithParents(n)
                | NetworkError::DirectedCycle(n)
                | NetworkError::UndirectedCycle(n)
                | NetworkError::UnknownNode(n) => Some(n.clone()),
                NetworkError::UnknownParent { node, .. }
                | NetworkError::ArityMismatch { node, .. }
                | NetworkError::InvalidCpd { node, .. }
                | NetworkError::InvalidPrior { node, .. }
                | NetworkError::NonFiniteEvidence { node, .. } => Some(node.clone()),
                NetworkError::EmptyNetwork | NetworkError::EmptyNodeId => None,
            },
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, DocumentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub nodes: Vec<NodeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<PriorTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_cpd: Option<LinearEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_cpd: Option<Vec<CpdTerm>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorTerm {
    pub w: f64,
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearEntry {
    pub coeffs: Vec<f64>,
    pub noise_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorEntry {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpdTerm {
    pub w: f64,
    pub child_mean: f64,
    pub child_var: f64,
    pub parents: Vec<FactorEntry>,
}

pub fn prior_terms(m: &GaussianMixture) -> Vec<PriorTerm> {
    m.iter()
        .map(|c| PriorTerm {
            w: c.weight,
            mean: c.mean,
            var: c.variance,
        })
        .collect()
}

impl NodeEntry {
    fn into_spec(self) -> Result<NodeSpec> {
        let node = self.id.clone();
        let model_err = |message: String| DocumentError::Model {
            node: node.clone(),
            message,
        };
        let model = match (self.prior, self.linear_cpd, self.mixture_cpd) {
            (Some(prior), None, None) => {
                let comps = prior
                    .into_iter()
                    .map(|t| WeightedGaussian::new(t.w, t.mean, t.var))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| model_err(e.to_string()))?;
                NodeModel::Prior(GaussianMixture::new(comps).map_err(|e| model_err(e.to_string()))?)
            }
            (None, Some(lin), None) => {
                NodeModel::Linear(LinearCpd::new(lin.coeffs, lin.noise_var).map_err(model_err)?)
            }
            (None, None, Some(terms)) => {
                let comps = terms
                    .into_iter()
                    .map(|t| CpdComponent {
                        weight: t.w,
                        child: Factor {
                            mean: t.child_mean,
                            variance: t.child_var,
                        },
                        parents: t
                            .parents
                            .into_iter()
                            .map(|f| Factor {
                                mean: f.mean,
                                variance: f.var,
                            })
                            .collect(),
                    })
                    .collect();
                NodeModel::MixtureCpd(ConditionalMixtureCpd::new(comps).map_err(model_err)?)
            }
            _ => {
                return Err(model_err(
                    "exactly one of `prior`, `linear_cpd`, `mixture_cpd` is required".into(),
                ))
            }
        };
        Ok(NodeSpec {
            id: NodeId::new(self.id)?,
            parents: self
                .parents
                .into_iter()
                .map(NodeId::new)
                .collect::<std::result::Result<_, _>>()?,
            model,
        })
    }

    fn from_spec(spec: &NodeSpec) -> Self {
        let mut entry = NodeEntry {
            id: spec.id.to_string(),
            parents: spec.parents.iter().map(NodeId::to_string).collect(),
            prior: None,
            linear_cpd: None,
            mixture_cpd: None,
        };
        match &spec.model {
            NodeModel::Prior(m) => entry.prior = Some(prior_terms(m)),
            NodeModel::Linear(l) => {
                entry.linear_cpd = Some(LinearEntry {
                    coeffs: l.coefficients().to_vec(),
                    noise_var: l.noise_variance(),
                })
            }
            NodeModel::MixtureCpd(cpd) => {
                entry.mixture_cpd = Some(
                    cpd.components()
                        .iter()
                        .map(|c| CpdTerm {
                            w: c.weight,
                            child_mean: c.child.mean,
                            child_var: c.child.variance,
                            parents: c
                                .parents
                                .iter()
                                .map(|f| FactorEntry {
                                    mean: f.mean,
                                    var: f.variance,
                                })
                                .collect(),
                        })
                        .collect(),
                )
            }
        }
        entry
    }
}

impl NetworkDocument {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DocumentError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn into_specs(self) -> Result<Vec<NodeSpec>> {
        self.nodes.into_iter().map(NodeEntry::into_spec).collect()
    }

    pub fn into_network(self) -> Result<Network> {
        Ok(Network::build(self.into_specs()?)?)
    }

    pub fn from_network(net: &Network) -> Self {
        Self {
            nodes: net.nodes().iter().map(NodeEntry::from_spec).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }
}

pub fn parse_network(text: &str) -> Result<Network> {
    NetworkDocument::parse(text)?.into_network()
}

pub fn load_network(path: &std::path::Path) -> Result<Network> {
    parse_network(&std::fs::read_to_string(path)?)
}

/// Pretty JSON with every float written to 17 significant digits.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}
