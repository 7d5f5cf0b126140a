//! JSON model files.
//!
//! ```json
//! {"type": "hmm", "states": 2, "alphabet": 3, "length": 10,
//!  "initial": [0.5, 0.5],
//!  "transition": [[0.9, 0.1], [0.2, 0.8]],
//!  "emission": {"kind": "discrete", "matrix": [[0.1, 0.3, 0.6], [0.2, 0.1, 0.7]]}}
//! ```
//!
//! Trees use `"type": "hmt"` with either `"depth"` and `"children"` (regular
//! topology) or an explicit `"nodes"` list of paths. `"transition"` and
//! `"emission"` may be a single shared value or an object keyed by node path;
//! transitions are keyed by the node they lead into, so the root is absent.
//! States and symbols are 1-based in documents and 0-based in memory; the
//! matrices themselves carry no labels, so only evidence files shift indices.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KldError, Result};
use crate::model::{EmissionSpec, HmmModel, HmtModel, NodeParams, NodePath, Topology};

/// A model as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Hmm(HmmModel),
    Hmt(HmtModel),
}

impl LoadedModel {
    pub fn into_tree(self) -> HmtModel {
        match self {
            LoadedModel::Hmm(m) => m.as_tree(),
            LoadedModel::Hmt(m) => m,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(rename = "type")]
    model_type: ModelType,
    states: usize,
    alphabet: Alphabet,
    initial: Vec<f64>,
    transition: TransitionDoc,
    emission: EmissionField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModelType {
    Hmm,
    Hmt,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Alphabet {
    Size(usize),
    Named(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum TransitionDoc {
    Shared(Vec<Vec<f64>>),
    PerNode(BTreeMap<String, Vec<Vec<f64>>>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum EmissionDoc {
    Discrete { matrix: Vec<Vec<f64>> },
    Gaussian { means: Vec<f64>, sds: Vec<f64> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum EmissionField {
    Shared(EmissionDoc),
    PerNode(BTreeMap<String, EmissionDoc>),
}

/// Parses and validates a model document.
pub fn load_model(document: &str) -> Result<LoadedModel> {
    let loaded = parse_unchecked(document)?;
    let report = match &loaded {
        LoadedModel::Hmm(m) => m.validate(),
        LoadedModel::Hmt(m) => m.validate(),
    };
    if report.is_valid() {
        Ok(loaded)
    } else {
        Err(KldError::Invalid(report))
    }
}

/// Parses a document into a model without checking stochasticity, so the
/// caller can produce a full validation report.
pub fn parse_unchecked(document: &str) -> Result<LoadedModel> {
    let doc: ModelDoc = serde_json::from_str(document).map_err(|e| {
        if e.is_data() {
            KldError::Schema(e.to_string())
        } else {
            KldError::Parse(e.to_string())
        }
    })?;
    doc.into_model()
}

pub fn save_model(model: &LoadedModel) -> Result<String> {
    let doc = match model {
        LoadedModel::Hmm(m) => ModelDoc::from_hmm(m),
        LoadedModel::Hmt(m) => ModelDoc::from_hmt(m)?,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| KldError::Parse(e.to_string()))
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(KldError::Schema(format!("{what}: expected a {nrows}x{ncols} matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

impl EmissionDoc {
    fn into_spec(self, states: usize, alphabet: Option<usize>, what: &str) -> Result<EmissionSpec> {
        match (self, alphabet) {
            (EmissionDoc::Discrete { matrix }, Some(m)) => {
                Ok(EmissionSpec::Discrete(matrix_from_rows(&matrix, states, m, what)?))
            }
            (EmissionDoc::Gaussian { means, sds }, None) => {
                if means.len() != states || sds.len() != states {
                    return Err(KldError::Schema(format!("{what}: expected {states} means and sds")));
                }
                Ok(EmissionSpec::Gaussian { means, sds })
            }
            (EmissionDoc::Discrete { .. }, None) => {
                Err(KldError::Schema(format!("{what}: discrete emission but alphabet is \"gaussian\"")))
            }
            (EmissionDoc::Gaussian { .. }, Some(_)) => {
                Err(KldError::Schema(format!("{what}: gaussian emission but alphabet is a size")))
            }
        }
    }

    fn from_spec(spec: &EmissionSpec) -> Self {
        match spec {
            EmissionSpec::Discrete(m) => EmissionDoc::Discrete { matrix: rows_of(m) },
            EmissionSpec::Gaussian { means, sds } => EmissionDoc::Gaussian { means: means.clone(), sds: sds.clone() },
        }
    }
}

impl ModelDoc {
    fn into_model(self) -> Result<LoadedModel> {
        let d = self.states;
        if d == 0 {
            return Err(KldError::Schema("\"states\" must be at least 1".into()));
        }
        let alphabet = match &self.alphabet {
            Alphabet::Size(0) => return Err(KldError::Schema("\"alphabet\" must be at least 1".into())),
            Alphabet::Size(m) => Some(*m),
            Alphabet::Named(s) if s == "gaussian" => None,
            Alphabet::Named(s) => return Err(KldError::Schema(format!("unknown alphabet {s:?}"))),
        };
        if self.initial.len() != d {
            return Err(KldError::Schema(format!("\"initial\" has {} entries, expected {d}", self.initial.len())));
        }
        let initial = DVector::from_vec(self.initial);

        match self.model_type {
            ModelType::Hmm => {
                if self.depth.is_some() || self.children.is_some() || self.nodes.is_some() {
                    return Err(KldError::Schema("hmm documents take \"length\", not tree fields".into()));
                }
                let length = self.length.ok_or_else(|| KldError::Schema("hmm document missing \"length\"".into()))?;
                let transition = match self.transition {
                    TransitionDoc::Shared(rows) => matrix_from_rows(&rows, d, d, "transition")?,
                    TransitionDoc::PerNode(_) => {
                        return Err(KldError::Schema("hmm transition must be a single matrix".into()))
                    }
                };
                let emission = match self.emission {
                    EmissionField::Shared(e) => e.into_spec(d, alphabet, "emission")?,
                    EmissionField::PerNode(_) => {
                        return Err(KldError::Schema("hmm emission must be a single law".into()))
                    }
                };
                Ok(LoadedModel::Hmm(HmmModel::new_unchecked(length, initial, transition, emission)))
            }
            ModelType::Hmt => {
                if self.length.is_some() {
                    return Err(KldError::Schema("hmt documents take \"depth\"/\"children\" or \"nodes\"".into()));
                }
                let topology = match (self.depth, self.children, self.nodes) {
                    (Some(depth), Some(children), None) => {
                        Topology::regular(children, depth).map_err(|e| KldError::Schema(e.to_string()))?
                    }
                    (None, None, Some(nodes)) => {
                        Topology::general(nodes.iter().map(|p| NodePath::parse(p)).collect::<Result<Vec<_>>>()?)?
                    }
                    _ => {
                        return Err(KldError::Schema(
                            "hmt document needs either \"depth\" and \"children\" or \"nodes\"".into(),
                        ))
                    }
                };
                let needs_paths = matches!(self.transition, TransitionDoc::PerNode(_))
                    || matches!(self.emission, EmissionField::PerNode(_));
                let paths = if needs_paths { topology.paths()? } else { Vec::new() };

                let transitions = match self.transition {
                    TransitionDoc::Shared(rows) => NodeParams::Shared(matrix_from_rows(&rows, d, d, "transition")?),
                    TransitionDoc::PerNode(mut map) => {
                        let mut v = Vec::with_capacity(paths.len().saturating_sub(1));
                        for p in paths.iter().skip(1) {
                            let key = p.to_string();
                            let rows = map
                                .remove(&key)
                                .ok_or_else(|| KldError::Schema(format!("transition missing node {key:?}")))?;
                            v.push(matrix_from_rows(&rows, d, d, &format!("transition {key:?}"))?);
                        }
                        if let Some(extra) = map.keys().next() {
                            return Err(KldError::Schema(format!("transition for unknown or root node {extra:?}")));
                        }
                        NodeParams::PerNode(v)
                    }
                };
                let emissions = match self.emission {
                    EmissionField::Shared(e) => NodeParams::Shared(e.into_spec(d, alphabet, "emission")?),
                    EmissionField::PerNode(mut map) => {
                        let mut v = Vec::with_capacity(paths.len());
                        for p in &paths {
                            let key = p.to_string();
                            let e = map
                                .remove(&key)
                                .ok_or_else(|| KldError::Schema(format!("emission missing node {key:?}")))?;
                            v.push(e.into_spec(d, alphabet, &format!("emission {key:?}"))?);
                        }
                        if let Some(extra) = map.keys().next() {
                            return Err(KldError::Schema(format!("emission for unknown node {extra:?}")));
                        }
                        NodeParams::PerNode(v)
                    }
                };
                Ok(LoadedModel::Hmt(HmtModel::new_unchecked(topology, initial, transitions, emissions)))
            }
        }
    }

    fn from_hmm(m: &HmmModel) -> Self {
        ModelDoc {
            model_type: ModelType::Hmm,
            states: m.states(),
            alphabet: alphabet_field(m.alphabet()),
            initial: m.initial().iter().copied().collect(),
            transition: TransitionDoc::Shared(rows_of(m.transition())),
            emission: EmissionField::Shared(EmissionDoc::from_spec(m.emission())),
            length: Some(m.length()),
            depth: None,
            children: None,
            nodes: None,
        }
    }

    fn from_hmt(m: &HmtModel) -> Result<Self> {
        let topology = m.topology();
        let needs_paths = !m.transitions().is_shared() || !m.emissions().is_shared();
        let paths: Vec<String> = if needs_paths || matches!(topology, Topology::General(_)) {
            topology.paths()?.iter().map(NodePath::to_string).collect()
        } else {
            Vec::new()
        };
        let transition = match m.transitions() {
            NodeParams::Shared(t) => TransitionDoc::Shared(rows_of(t)),
            NodeParams::PerNode(v) => {
                TransitionDoc::PerNode(paths.iter().skip(1).cloned().zip(v.iter().map(rows_of)).collect())
            }
        };
        let emission = match m.emissions() {
            NodeParams::Shared(e) => EmissionField::Shared(EmissionDoc::from_spec(e)),
            NodeParams::PerNode(v) => {
                EmissionField::PerNode(paths.iter().cloned().zip(v.iter().map(EmissionDoc::from_spec)).collect())
            }
        };
        let (depth, children, nodes) = match topology {
            Topology::Regular { children, depth } => (Some(*depth), Some(*children), None),
            Topology::General(_) => (None, None, Some(paths)),
        };
        Ok(ModelDoc {
            model_type: ModelType::Hmt,
            states: m.states(),
            alphabet: alphabet_field(m.alphabet()),
            initial: m.initial().iter().copied().collect(),
            transition,
            emission,
            length: None,
            depth,
            children,
            nodes,
        })
    }
}

fn alphabet_field(m: Option<usize>) -> Alphabet {
    match m {
        Some(m) => Alphabet::Size(m),
        None => Alphabet::Named("gaussian".into()),
    }
}
