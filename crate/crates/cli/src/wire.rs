//! JSON payloads shared by `hmt predict` and the HTTP service.
//!
//! Request:
//!
//! ```json
//! {"documents": [{"type": "title", "text": "..."}],
//!  "expert_prefix": ["F", "F01"], "mode": "greedy", "top_k": 5}
//! ```
//!
//! Response:
//!
//! ```json
//! {"path": [{"level": 1, "code": "F", "prob": 1.0, "alternatives": []}],
//!  "terminated": true, "valid_path": true, "score": 0.93}
//! ```
//!
//! Levels supplied by the expert prefix carry `prob` 1.0 and no
//! alternatives. An alternative whose `code` is `null` is the stop label.

use hmt_core::corpus::{DocumentRecord, TokenizerMode};
use hmt_core::{DecodeMode, HmtModel, PredictOptions, Prediction, Proposal, Taxonomy};
use serde::{Deserialize, Serialize};

fn default_top_k() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub documents: Vec<DocumentRecord>,
    #[serde(default)]
    pub expert_prefix: Vec<String>,
    #[serde(default)]
    pub mode: DecodeMode,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub code: Option<String>,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub level: usize,
    pub code: String,
    pub prob: f64,
    pub alternatives: Vec<Alternative>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub path: Vec<PathStep>,
    pub terminated: bool,
    pub valid_path: bool,
    pub score: f64,
}

/// Why a request could not be served.
#[derive(Debug)]
pub enum RequestError {
    /// The documents could not be turned into a proposal.
    Documents(String),
    /// The expert prefix names unknown labels or is not a chain.
    Prefix(String),
    Internal(String),
}

/// Resolves prefix codes, reporting the first unknown one by name.
pub fn resolve_prefix(taxonomy: &Taxonomy, codes: &[String]) -> Result<Vec<hmt_core::NodeId>, String> {
    codes
        .iter()
        .map(|c| {
            taxonomy
                .by_code(c)
                .map_err(|_| format!("unknown label `{c}` in expert prefix"))
        })
        .collect()
}

pub fn options(
    model: &HmtModel,
    prefix: &[String],
    mode: DecodeMode,
    top_k: usize,
) -> Result<PredictOptions, RequestError> {
    let expert_prefix = resolve_prefix(model.taxonomy(), prefix).map_err(RequestError::Prefix)?;
    model
        .check_prefix(&expert_prefix)
        .map_err(|e| RequestError::Prefix(e.to_string()))?;
    Ok(PredictOptions {
        mode,
        top_k,
        expert_prefix,
        ..PredictOptions::default()
    })
}

pub fn render(taxonomy: &Taxonomy, prediction: &Prediction) -> PredictResponse {
    let code = |c: Option<hmt_core::NodeId>| c.map(|id| taxonomy.code(id).to_string());
    let path = prediction
        .path
        .labels
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let level = i + 1;
            match prediction.levels.iter().find(|l| l.level == level) {
                Some(l) => PathStep {
                    level,
                    code: taxonomy.code(id).to_string(),
                    prob: l.prob,
                    alternatives: l
                        .alternatives
                        .iter()
                        .map(|&(c, prob)| Alternative { code: code(c), prob })
                        .collect(),
                },
                None => PathStep {
                    level,
                    code: taxonomy.code(id).to_string(),
                    prob: 1.0,
                    alternatives: Vec::new(),
                },
            }
        })
        .collect();
    PredictResponse {
        path,
        terminated: prediction.path.terminated,
        valid_path: prediction.valid,
        score: prediction.score,
    }
}

/// The single inference path used by both the CLI and the service.
pub fn predict(
    model: &HmtModel,
    id: &str,
    documents: &[DocumentRecord],
    prefix: &[String],
    mode: DecodeMode,
    top_k: usize,
) -> Result<PredictResponse, RequestError> {
    let tokenizer: TokenizerMode = model.config().tokenizer;
    let record = hmt_core::corpus::CorpusRecord {
        id: id.to_string(),
        documents: documents.to_vec(),
        labels: None,
    };
    let proposal = Proposal::from_record(&record, model.taxonomy(), tokenizer)
        .map_err(|e| RequestError::Documents(e.to_string()))?;
    for d in &proposal.documents {
        model
            .vocab()
            .type_id(&d.doc_type)
            .map_err(|e| RequestError::Documents(e.to_string()))?;
    }
    let opts = options(model, prefix, mode, top_k)?;
    let prediction = model.predict(&proposal, &opts).map_err(|e| match e {
        hmt_core::Error::InvalidPrefix(m) => RequestError::Prefix(m),
        other => RequestError::Internal(other.to_string()),
    })?;
    Ok(render(model.taxonomy(), &prediction))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub code: String,
    pub level: usize,
    pub parent: Option<String>,
    pub children: Vec<String>,
}

/// The `/taxonomy` payload: every label below the root, breadth-first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyPayload {
    pub fingerprint: String,
    pub depth: usize,
    pub roots: Vec<String>,
    pub nodes: Vec<TaxonomyNode>,
}

impl TaxonomyPayload {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        let codes = |ids: &[hmt_core::NodeId]| -> Vec<String> {
            ids.iter().map(|&c| taxonomy.code(c).to_string()).collect()
        };
        let nodes = (1..=taxonomy.max_depth())
            .flat_map(|k| taxonomy.level(k).iter().copied())
            .map(|id| {
                let node = taxonomy.node(id).expect("listed node exists");
                TaxonomyNode {
                    code: node.code.clone(),
                    level: node.level,
                    parent: node
                        .parent
                        .filter(|&p| p != Taxonomy::ROOT)
                        .map(|p| taxonomy.code(p).to_string()),
                    children: codes(taxonomy.children(id).expect("listed node exists")),
                }
            })
            .collect();
        Self {
            fingerprint: taxonomy.fingerprint(),
            depth: taxonomy.max_depth(),
            roots: codes(taxonomy.children(Taxonomy::ROOT).expect("root exists")),
            nodes,
        }
    }
}
