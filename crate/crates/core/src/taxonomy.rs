//! The label tree: leveled nodes under a single root, path validation and
//! path comparison.
//!
//! File schema (JSON):
//!
//! ```json
//! { "nodes": [
//!     { "code": "ROOT", "level": 0, "parent": null },
//!     { "code": "F",    "level": 1, "parent": "ROOT" },
//!     { "code": "F06",  "level": 2, "parent": "F" }
//! ] }
//! ```
//!
//! Exactly one node has level 0 and no parent. Every other node names a
//! parent exactly one level above it. Saving writes nodes root first, then by
//! level and code, so a saved file loads and saves back to identical bytes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelNode {
    pub id: NodeId,
    pub code: String,
    pub level: usize,
    pub parent: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub code: String,
    pub level: usize,
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyFile {
    pub nodes: Vec<NodeRecord>,
}

/// Labels `l_1..l_n` below the (implicit) root. `terminated` is set when a
/// stop label follows the last label.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelPath {
    pub labels: Vec<NodeId>,
    pub terminated: bool,
}

impl LabelPath {
    pub fn new(labels: Vec<NodeId>, terminated: bool) -> Self {
        Self { labels, terminated }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label at 1-based `level`, if the path reaches it.
    pub fn at_level(&self, level: usize) -> Option<NodeId> {
        level.checked_sub(1).and_then(|i| self.labels.get(i).copied())
    }

    pub fn prefix(&self, len: usize) -> LabelPath {
        LabelPath::new(self.labels[..len.min(self.labels.len())].to_vec(), false)
    }
}

/// How a predicted path relates to the true one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathOutcome {
    /// Same labels, same length.
    Acc,
    /// Correct so far, but the prediction continues past the true leaf.
    Sl,
    /// Correct so far, but the prediction stops above the true leaf.
    Se,
    /// Disagrees at some level.
    Other,
}

/// Compares label by label from level 1; any disagreement is `Other`.
pub fn classify_result(pred: &LabelPath, truth: &LabelPath) -> PathOutcome {
    let common = pred.len().min(truth.len());
    if pred.labels[..common] != truth.labels[..common] {
        return PathOutcome::Other;
    }
    match pred.len().cmp(&truth.len()) {
        std::cmp::Ordering::Equal => PathOutcome::Acc,
        std::cmp::Ordering::Less => PathOutcome::Se,
        std::cmp::Ordering::Greater => PathOutcome::Sl,
    }
}

#[derive(Clone, Debug)]
pub struct Taxonomy {
    nodes: Vec<LabelNode>,
    children: Vec<Vec<NodeId>>,
    levels: Vec<Vec<NodeId>>,
    slot: Vec<usize>,
    by_code: HashMap<String, NodeId>,
}

impl Taxonomy {
    pub const ROOT: NodeId = NodeId(0);

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TaxonomyFile = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("taxonomy {}", path.display()), e))?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("taxonomy serialises");
        s.push('\n');
        s
    }

    pub fn to_file(&self) -> TaxonomyFile {
        TaxonomyFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    code: n.code.clone(),
                    level: n.level,
                    parent: n.parent.map(|p| self.nodes[p.0].code.clone()),
                })
                .collect(),
        }
    }

    /// Validates `file` and builds the tree. All problems are reported at once.
    pub fn from_file(file: &TaxonomyFile) -> Result<Self> {
        let mut problems = Vec::new();
        let mut parents: BTreeMap<&str, Vec<Option<&str>>> = BTreeMap::new();
        let mut levels: HashMap<&str, usize> = HashMap::new();
        for rec in &file.nodes {
            parents.entry(&rec.code).or_default().push(rec.parent.as_deref());
            if let Some(&previous) = levels.get(rec.code.as_str()) {
                if previous != rec.level {
                    problems.push(format!(
                        "node {} declared at levels {previous} and {}",
                        rec.code, rec.level
                    ));
                }
            }
            levels.insert(&rec.code, rec.level);
        }
        for (code, ps) in &parents {
            if ps.len() > 1 {
                let mut distinct: Vec<_> = ps.iter().map(|p| p.unwrap_or("<none>")).collect();
                distinct.sort_unstable();
                distinct.dedup();
                if distinct.len() > 1 {
                    problems.push(format!(
                        "node {code} has multiple parents: {}",
                        distinct.join(", ")
                    ));
                } else {
                    problems.push(format!("node {code} declared {} times", ps.len()));
                }
            }
        }

        let roots: Vec<&NodeRecord> = file.nodes.iter().filter(|r| r.parent.is_none()).collect();
        match roots.len() {
            0 => problems.push("missing root: no node without a parent".into()),
            1 if roots[0].level != 0 => {
                problems.push(format!("root {} must have level 0", roots[0].code))
            }
            1 => {}
            _ => problems.push(format!(
                "multiple roots: {}",
                roots.iter().map(|r| r.code.as_str()).collect::<Vec<_>>().join(", ")
            )),
        }

        for rec in &file.nodes {
            let Some(parent) = rec.parent.as_deref() else { continue };
            if parent == rec.code {
                problems.push(format!("node {} is its own parent", rec.code));
                continue;
            }
            match levels.get(parent) {
                None => problems.push(format!("node {} names unknown parent {parent}", rec.code)),
                Some(&pl) if pl + 1 != rec.level => problems.push(format!(
                    "node {} at level {} has parent {parent} at level {pl}",
                    rec.code, rec.level
                )),
                Some(_) => {}
            }
        }

        // With strict level increments a cycle cannot pass the checks above,
        // but a walk to the root catches anything that slipped through.
        if problems.is_empty() {
            let parent_of: HashMap<&str, &str> = file
                .nodes
                .iter()
                .filter_map(|r| r.parent.as_deref().map(|p| (r.code.as_str(), p)))
                .collect();
            for rec in &file.nodes {
                let mut cur = rec.code.as_str();
                let mut steps = 0;
                while let Some(&p) = parent_of.get(cur) {
                    cur = p;
                    steps += 1;
                    if steps > file.nodes.len() {
                        problems.push(format!("cycle through node {}", rec.code));
                        break;
                    }
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Taxonomy(problems));
        }

        let mut order: Vec<&NodeRecord> = file.nodes.iter().collect();
        order.sort_by(|a, b| (a.level, &a.code).cmp(&(b.level, &b.code)));
        let by_code: HashMap<String, NodeId> = order
            .iter()
            .enumerate()
            .map(|(i, r)| (r.code.clone(), NodeId(i)))
            .collect();
        let nodes: Vec<LabelNode> = order
            .iter()
            .enumerate()
            .map(|(i, r)| LabelNode {
                id: NodeId(i),
                code: r.code.clone(),
                level: r.level,
                parent: r.parent.as_ref().map(|p| by_code[p]),
            })
            .collect();
        let max_depth = nodes.iter().map(|n| n.level).max().unwrap_or(0);
        let mut children = vec![Vec::new(); nodes.len()];
        let mut level_sets = vec![Vec::new(); max_depth];
        let mut slot = vec![0; nodes.len()];
        for n in &nodes {
            if let Some(p) = n.parent {
                children[p.0].push(n.id);
            }
            if n.level > 0 {
                slot[n.id.0] = level_sets[n.level - 1].len();
                level_sets[n.level - 1].push(n.id);
            }
        }
        Ok(Self {
            nodes,
            children,
            levels: level_sets,
            slot,
            by_code,
        })
    }

    /// Complete tree with `branching[k]` children under every level-`k` node.
    /// Level-1 codes are letters, deeper codes append a two-digit index to the
    /// parent code (`A`, `A01`, `A0102`, ...).
    pub fn balanced(branching: &[usize]) -> Result<Self> {
        if branching.is_empty() || branching.contains(&0) {
            return Err(Error::Config(format!(
                "branching factors must be positive, got {branching:?}"
            )));
        }
        let mut nodes = vec![NodeRecord {
            code: "ROOT".into(),
            level: 0,
            parent: None,
        }];
        let mut frontier = vec!["ROOT".to_string()];
        for (depth, &width) in branching.iter().enumerate() {
            let mut next = Vec::new();
            for (pi, parent) in frontier.iter().enumerate() {
                for c in 0..width {
                    let code = if depth == 0 {
                        level_one_code(pi * width + c)
                    } else {
                        format!("{parent}{:02}", c + 1)
                    };
                    nodes.push(NodeRecord {
                        code: code.clone(),
                        level: depth + 1,
                        parent: Some(parent.clone()),
                    });
                    next.push(code);
                }
            }
            frontier = next;
        }
        Self::from_file(&TaxonomyFile { nodes })
    }

    pub fn root(&self) -> NodeId {
        Self::ROOT
    }

    /// Deepest level `H`.
    pub fn max_depth(&self) -> usize {
        self.levels.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[LabelNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&LabelNode> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::UnknownLabel(id.to_string()))
    }

    pub fn code(&self, id: NodeId) -> &str {
        &self.nodes[id.0].code
    }

    pub fn level_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].level
    }

    pub fn by_code(&self, code: &str) -> Result<NodeId> {
        self.by_code
            .get(code)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(code.to_string()))
    }

    pub fn children(&self, id: NodeId) -> Result<&[NodeId]> {
        self.node(id)?;
        Ok(&self.children[id.0])
    }

    /// `C_k` for `1 <= level <= H`.
    pub fn level(&self, level: usize) -> &[NodeId] {
        &self.levels[level - 1]
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Position of a non-root node within its level's label list.
    pub fn slot(&self, id: NodeId) -> usize {
        self.slot[id.0]
    }

    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.nodes[id.0].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p.0].parent;
        }
        out
    }

    /// `x ≺ y`: `y` is a proper ancestor of `x`.
    pub fn precedes(&self, x: NodeId, y: NodeId) -> bool {
        self.ancestors(x).contains(&y)
    }

    /// True when the labels form a parent→child chain from the root with
    /// `level(l_k) == k`. Unknown ids are an error, not `false`.
    pub fn validate_path(&self, path: &LabelPath) -> Result<bool> {
        for &id in &path.labels {
            self.node(id)?;
        }
        let mut parent = Self::ROOT;
        for (k, &id) in path.labels.iter().enumerate() {
            let node = &self.nodes[id.0];
            if node.level != k + 1 || node.parent != Some(parent) {
                return Ok(false);
            }
            parent = id;
        }
        Ok(true)
    }

    pub fn path_from_codes<S: AsRef<str>>(&self, codes: &[S], terminated: bool) -> Result<LabelPath> {
        let labels = codes
            .iter()
            .map(|c| self.by_code(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelPath::new(labels, terminated))
    }

    /// Gold path from codes: must validate; terminated iff shorter than `H`.
    pub fn gold_path<S: AsRef<str>>(&self, codes: &[S]) -> Result<LabelPath> {
        let mut path = self.path_from_codes(codes, false)?;
        if !self.validate_path(&path)? {
            let shown: Vec<&str> = codes.iter().map(AsRef::as_ref).collect();
            return Err(Error::Data(format!(
                "label path {} is not a chain in the taxonomy",
                shown.join(" > ")
            )));
        }
        path.terminated = path.len() < self.max_depth();
        Ok(path)
    }

    pub fn codes(&self, path: &LabelPath) -> Vec<String> {
        path.labels.iter().map(|&id| self.code(id).to_string()).collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn level_one_code(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("Z{i:02}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(code: &str, level: usize, parent: Option<&str>) -> NodeRecord {
        NodeRecord {
            code: code.into(),
            level,
            parent: parent.map(Into::into),
        }
    }

    fn discipline() -> Taxonomy {
        Taxonomy::from_file(&TaxonomyFile {
            nodes: vec![
                rec("ROOT", 0, None),
                rec("F", 1, Some("ROOT")),
                rec("F06", 2, Some("F")),
                rec("F0601", 3, Some("F06")),
            ],
        })
        .unwrap()
    }

    fn problems(file: TaxonomyFile) -> Vec<String> {
        match Taxonomy::from_file(&file) {
            Err(Error::Taxonomy(p)) => p,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn loads_discipline_chain() {
        let t = discipline();
        assert_eq!(t.max_depth(), 3);
        assert_eq!(t.level_sizes(), vec![1, 1, 1]);
        let p = t.path_from_codes(&["F", "F06", "F0601"], false).unwrap();
        assert!(t.validate_path(&p).unwrap());
    }

    #[test]
    fn rejects_self_parent() {
        let p = problems(TaxonomyFile {
            nodes: vec![rec("ROOT", 0, None), rec("F", 1, Some("F"))],
        });
        assert!(p.iter().any(|m| m.contains("own parent")), "{p:?}");
    }

    #[test]
    fn rejects_two_parents_naming_both() {
        let p = problems(TaxonomyFile {
            nodes: vec![
                rec("ROOT", 0, None),
                rec("F", 1, Some("ROOT")),
                rec("G", 1, Some("ROOT")),
                rec("X", 2, Some("F")),
                rec("X", 2, Some("G")),
            ],
        });
        let msg = p.iter().find(|m| m.contains("multiple parents")).unwrap();
        assert!(msg.contains('F') && msg.contains('G'));
    }

    #[test]
    fn rejects_level_skip_and_missing_root() {
        let p = problems(TaxonomyFile {
            nodes: vec![
                rec("ROOT", 0, None),
                rec("F", 1, Some("ROOT")),
                rec("F0601", 3, Some("F")),
            ],
        });
        assert!(p.iter().any(|m| m.contains("F0601")));
        let p = problems(TaxonomyFile {
            nodes: vec![rec("F", 1, Some("G")), rec("G", 0, Some("F"))],
        });
        assert!(p.iter().any(|m| m.contains("missing root")));
    }

    #[test]
    fn children_of_root_and_leaf() {
        let t = Taxonomy::balanced(&[2, 3]).unwrap();
        assert_eq!(t.children(t.root()).unwrap(), t.level(1));
        let leaf = t.level(2)[0];
        assert!(t.children(leaf).unwrap().is_empty());
        assert!(matches!(t.children(NodeId(999)), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn children_of_level_one_partition_level_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = random_tree(&mut rng, 3, 5);
            if t.max_depth() < 2 {
                continue;
            }
            let mut union: Vec<NodeId> = t
                .level(1)
                .iter()
                .flat_map(|&id| t.children(id).unwrap().to_vec())
                .collect();
            union.sort();
            let mut level2 = t.level(2).to_vec();
            level2.sort();
            assert_eq!(union, level2);
        }
    }

    #[test]
    fn validate_path_cases() {
        let t = Taxonomy::balanced(&[2, 2]).unwrap();
        let good = t.path_from_codes(&["A", "A01"], false).unwrap();
        let broken = t.path_from_codes(&["A", "B01"], false).unwrap();
        assert!(t.validate_path(&good).unwrap());
        assert!(!t.validate_path(&broken).unwrap());
        assert!(t.validate_path(&LabelPath::new(vec![], true)).unwrap());
        let unknown = LabelPath::new(vec![NodeId(77)], false);
        assert!(t.validate_path(&unknown).is_err());
    }

    #[test]
    fn classify_examples() {
        let t = discipline();
        let full = t.path_from_codes(&["F", "F06", "F0601"], false).unwrap();
        let short = t.path_from_codes(&["F", "F06"], true).unwrap();
        assert_eq!(classify_result(&full, &full), PathOutcome::Acc);
        assert_eq!(classify_result(&short, &full), PathOutcome::Se);
        assert_eq!(classify_result(&full, &short), PathOutcome::Sl);

        let t = Taxonomy::balanced(&[2, 2]).unwrap();
        let a = t.path_from_codes(&["A", "A01"], false).unwrap();
        let b = t.path_from_codes(&["B"], true).unwrap();
        assert_eq!(classify_result(&a, &b), PathOutcome::Other);
        assert_eq!(classify_result(&b, &a), PathOutcome::Other);
    }

    /// Enumerates every label sequence (valid or not) over a depth-3 toy tree.
    #[test]
    fn classify_partitions_all_pairs() {
        let t = Taxonomy::balanced(&[2, 2, 2]).unwrap();
        let mut paths = vec![LabelPath::default()];
        let mut frontier = vec![LabelPath::default()];
        for level in 1..=3 {
            let mut next = Vec::new();
            for p in &frontier {
                for &id in t.level(level) {
                    let mut q = p.clone();
                    q.labels.push(id);
                    next.push(q);
                }
            }
            paths.extend(next.iter().cloned());
            frontier = next;
        }
        assert_eq!(paths.len(), 1 + 2 + 8 + 64);
        for p in &paths {
            for q in &paths {
                let outcome = classify_result(p, q);
                let same_prefix = p.labels.iter().zip(&q.labels).all(|(a, b)| a == b);
                let expected = [
                    same_prefix && p.len() == q.len(),
                    same_prefix && p.len() > q.len(),
                    same_prefix && p.len() < q.len(),
                    !same_prefix,
                ];
                let got = [
                    outcome == PathOutcome::Acc,
                    outcome == PathOutcome::Sl,
                    outcome == PathOutcome::Se,
                    outcome == PathOutcome::Other,
                ];
                assert_eq!(got, expected);
                assert_eq!(expected.iter().filter(|b| **b).count(), 1);
            }
        }
    }

    #[test]
    fn saved_file_round_trips_bytes() {
        let t = Taxonomy::balanced(&[3, 2, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tax.json");
        t.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let again = Taxonomy::load(&path).unwrap();
        again.save(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        assert_eq!(t.fingerprint(), again.fingerprint());
    }

    #[test]
    fn gold_path_sets_termination() {
        let t = Taxonomy::balanced(&[2, 2]).unwrap();
        assert!(t.gold_path(&["A"]).unwrap().terminated);
        assert!(!t.gold_path(&["A", "A02"]).unwrap().terminated);
        assert!(matches!(t.gold_path(&["A", "B02"]), Err(Error::Data(_))));
    }

    fn random_tree(rng: &mut ChaCha8Rng, depth: usize, max_branch: usize) -> Taxonomy {
        let mut nodes = vec![rec("ROOT", 0, None)];
        let mut frontier = vec!["ROOT".to_string()];
        let mut counter = 0;
        for level in 1..=depth {
            let mut next = Vec::new();
            for parent in &frontier {
                for _ in 0..rng.gen_range(0..=max_branch) {
                    counter += 1;
                    let code = format!("N{counter}");
                    nodes.push(rec(&code, level, Some(parent)));
                    next.push(code);
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Taxonomy::from_file(&TaxonomyFile { nodes }).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ancestry_is_a_strict_partial_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, 4, 4);
            prop_assume!(t.num_nodes() <= 500);
            let ids: Vec<NodeId> = t.nodes().iter().map(|n| n.id).collect();
            for &x in &ids {
                prop_assert!(!t.precedes(x, x));
                for &y in &ids {
                    if t.precedes(x, y) {
                        prop_assert!(!t.precedes(y, x));
                        for &z in &ids {
                            if t.precedes(y, z) {
                                prop_assert!(t.precedes(x, z));
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn valid_paths_have_valid_prefixes(seed in 0u64..1000, picks in proptest::collection::vec(0usize..8, 0..4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, 4, 3);
            let mut labels = Vec::new();
            let mut cur = t.root();
            for p in picks {
                let kids = t.children(cur).unwrap();
                if kids.is_empty() { break; }
                cur = kids[p % kids.len()];
                labels.push(cur);
            }
            let path = LabelPath::new(labels, false);
            prop_assert!(t.validate_path(&path).unwrap());
            for k in 0..=path.len() {
                prop_assert!(t.validate_path(&path.prefix(k)).unwrap());
            }
        }
    }
}
