//! Hierarchical thought representation.
//!
//! A thought is a rooted, ordered tree of short natural-language reasoning
//! steps. The root describes the overall alpha; children decompose it into
//! finer-grained steps. Trees are immutable values: editing primitives return
//! new trees and never touch their input.
//!
//! The canonical text form is compact JSON with exactly two keys per node,
//! sorted (`children` before `label`):
//!
//! ```text
//! {"children":[{"children":[],"label":"Use close price"}],"label":"Momentum"}
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Maximum depth accepted for trees entering a population (root = 1).
pub const MAX_TREE_DEPTH: usize = 10;
/// Maximum node count accepted for trees entering a population.
pub const MAX_TREE_NODES: usize = 64;

/// One reasoning unit and its ordered sub-steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThoughtNode {
    label: String,
    children: Vec<ThoughtNode>,
}

impl ThoughtNode {
    /// Creates a leaf. The label is trimmed and internal whitespace collapsed.
    pub fn leaf(label: impl AsRef<str>) -> Self {
        Self::new(label, Vec::new())
    }

    pub fn new(label: impl AsRef<str>, children: Vec<ThoughtNode>) -> Self {
        ThoughtNode {
            label: normalize_label(label.as_ref()),
            children,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn children(&self) -> &[ThoughtNode] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Number of nodes in this subtree.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(ThoughtNode::size).sum::<usize>()
    }

    /// Depth of the deepest leaf, counting this node as depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ThoughtNode::depth).max().unwrap_or(0)
    }

    fn write_canonical(&self, out: &mut String) {
        out.push_str("{\"children\":[");
        for (i, child) in self.children.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            child.write_canonical(out);
        }
        out.push_str("],\"label\":");
        // serde_json string escaping is deterministic
        out.push_str(&serde_json::to_string(&self.label).expect("string serialization"));
        out.push('}');
    }

    /// Canonical text of this subtree alone.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        self.write_canonical(&mut out);
        out
    }

    /// Hash of this subtree's canonical text.
    pub fn content_hash(&self) -> String {
        hash_text(&self.to_canonical())
    }

    /// Pre-order walk yielding every node with its path.
    pub fn walk(&self) -> Vec<(NodePath, &ThoughtNode)> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.walk_into(&mut path, &mut out);
        out
    }

    fn walk_into<'a>(&'a self, path: &mut Vec<usize>, out: &mut Vec<(NodePath, &'a ThoughtNode)>) {
        out.push((NodePath(path.clone()), self));
        for (i, child) in self.children.iter().enumerate() {
            path.push(i);
            child.walk_into(path, out);
            path.pop();
        }
    }

    fn replaced(&self, path: &[usize], sub: &ThoughtNode) -> ThoughtNode {
        match path.split_first() {
            None => sub.clone(),
            Some((&head, rest)) => {
                let mut children = self.children.clone();
                children[head] = self.children[head].replaced(rest, sub);
                ThoughtNode {
                    label: self.label.clone(),
                    children,
                }
            }
        }
    }
}

/// Trims and collapses runs of whitespace to a single space.
pub fn normalize_label(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Child indices leading from the root to a node. The empty path is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for NodePath {
    fn from(v: Vec<usize>) -> Self {
        NodePath(v)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{idx}")?;
        }
        write!(f, "]")
    }
}

/// Where a tree came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Lineage {
    pub generation: u32,
    pub operator: String,
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyLabel,
    TooDeep { depth: usize, max: usize },
    TooManyNodes { count: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: NodePath,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::EmptyLabel => write!(f, "empty label at {}", self.path),
            ViolationKind::TooDeep { depth, max } => {
                write!(f, "tree depth {depth} exceeds {max}")
            }
            ViolationKind::TooManyNodes { count, max } => {
                write!(f, "tree has {count} nodes, more than {max}")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("no node at path {0}")]
    PathNotFound(NodePath),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("malformed node at {path}: {message}")]
    Shape { path: NodePath, message: String },
    #[error("node at {0} uses a reference key; thought trees cannot share nodes")]
    SharedReference(NodePath),
    #[error("invalid tree: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    pub depth: usize,
    pub node_count: usize,
}

/// A complete thought: root node, provenance and content hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThoughtTree {
    root: ThoughtNode,
    lineage: Lineage,
    id: String,
}

impl ThoughtTree {
    pub fn new(root: ThoughtNode) -> Self {
        Self::with_lineage(root, Lineage::default())
    }

    pub fn with_lineage(root: ThoughtNode, lineage: Lineage) -> Self {
        let id = root.content_hash();
        ThoughtTree { root, lineage, id }
    }

    pub fn root(&self) -> &ThoughtNode {
        &self.root
    }

    pub fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Short form of the id used in human-facing output.
    pub fn short_id(&self) -> &str {
        &self.id[..12]
    }

    pub fn set_lineage(mut self, lineage: Lineage) -> Self {
        self.lineage = lineage;
        self
    }

    /// Every invariant breach, including the population caps.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (path, node) in self.root.walk() {
            if node.label.is_empty() {
                out.push(Violation {
                    path,
                    kind: ViolationKind::EmptyLabel,
                });
            }
        }
        let stats = self.stats();
        if stats.depth > MAX_TREE_DEPTH {
            out.push(Violation {
                path: NodePath::root(),
                kind: ViolationKind::TooDeep {
                    depth: stats.depth,
                    max: MAX_TREE_DEPTH,
                },
            });
        }
        if stats.node_count > MAX_TREE_NODES {
            out.push(Violation {
                path: NodePath::root(),
                kind: ViolationKind::TooManyNodes {
                    count: stats.node_count,
                    max: MAX_TREE_NODES,
                },
            });
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub fn subtree_at(&self, path: &NodePath) -> Result<&ThoughtNode, TreeError> {
        let mut node = &self.root;
        for &idx in path.indices() {
            node = node
                .children
                .get(idx)
                .ok_or_else(|| TreeError::PathNotFound(path.clone()))?;
        }
        Ok(node)
    }

    /// Returns a new tree with the node at `path` replaced by `sub`.
    ///
    /// The edit is recorded in the lineage operator field; the generation and
    /// parent list are carried over from `self`.
    pub fn replace_subtree(&self, path: &NodePath, sub: ThoughtNode) -> Result<ThoughtTree, TreeError> {
        self.subtree_at(path)?;
        let root = self.root.replaced(path.indices(), &sub);
        let lineage = Lineage {
            generation: self.lineage.generation,
            operator: format!("replace_subtree@{path}"),
            parents: vec![self.id.clone()],
        };
        Ok(ThoughtTree::with_lineage(root, lineage))
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            depth: self.root.depth(),
            node_count: self.root.size(),
        }
    }

    pub fn to_canonical(&self) -> String {
        self.root.to_canonical()
    }

    /// Parses canonical text. Structural invariants (tree shape, non-empty
    /// labels) are enforced; population caps are left to [`validate`](Self::validate).
    pub fn from_canonical(text: &str) -> Result<ThoughtTree, TreeError> {
        let value: Value = serde_json::from_str(text).map_err(|e| TreeError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_value(&value)
    }

    /// Builds a tree from an already parsed JSON value.
    pub fn from_value(value: &Value) -> Result<ThoughtTree, TreeError> {
        let mut path = Vec::new();
        let root = node_from_value(value, &mut path)?;
        let tree = ThoughtTree::new(root);
        let structural: Vec<Violation> = tree
            .validate()
            .into_iter()
            .filter(|v| v.kind == ViolationKind::EmptyLabel)
            .collect();
        if !structural.is_empty() {
            return Err(TreeError::Invalid(structural));
        }
        Ok(tree)
    }
}

const REFERENCE_KEYS: &[&str] = &["ref", "$ref", "id", "parent", "ref_id"];

fn node_from_value(value: &Value, path: &mut Vec<usize>) -> Result<ThoughtNode, TreeError> {
    let here = || NodePath(path.clone());
    let obj = value.as_object().ok_or_else(|| TreeError::Shape {
        path: here(),
        message: "expected an object with `label` and `children`".into(),
    })?;
    for key in obj.keys() {
        if REFERENCE_KEYS.contains(&key.as_str()) {
            return Err(TreeError::SharedReference(here()));
        }
        if key != "label" && key != "children" {
            return Err(TreeError::Shape {
                path: here(),
                message: format!("unexpected key `{key}`"),
            });
        }
    }
    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| TreeError::Shape {
            path: here(),
            message: "`label` must be a string".into(),
        })?;
    let children = match obj.get("children") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                path.push(i);
                out.push(node_from_value(item, path)?);
                path.pop();
            }
            out
        }
        Some(_) => {
            return Err(TreeError::Shape {
                path: here(),
                message: "`children` must be an array".into(),
            })
        }
    };
    Ok(ThoughtNode::new(label, children))
}

/// The example tree used in prompts and tests: a volume-weighted
/// close-to-open return broken into two sub-steps.
pub fn example_tree() -> ThoughtTree {
    ThoughtTree::new(ThoughtNode::new(
        "Volume Weighted Close-to-Open Return",
        vec![
            ThoughtNode::new(
                "Calculate Close-to-Open Return",
                vec![ThoughtNode::leaf("Use Close price"), ThoughtNode::leaf("Use Open price")],
            ),
            ThoughtNode::new(
                "Weight by Volume",
                vec![ThoughtNode::leaf("Use Volume"), ThoughtNode::leaf("Multiplied by Return")],
            ),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(n: usize) -> ThoughtNode {
        let mut node = ThoughtNode::leaf(format!("step {n}"));
        for i in (1..n).rev() {
            node = ThoughtNode::new(format!("step {i}"), vec![node]);
        }
        node
    }

    #[test]
    fn minimal_tree_is_valid() {
        let t = ThoughtTree::new(ThoughtNode::leaf("use close"));
        assert!(t.validate().is_empty());
    }

    #[test]
    fn empty_label_reported_at_root() {
        let t = ThoughtTree::new(ThoughtNode::leaf("   "));
        let v = t.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, NodePath::root());
        assert_eq!(v[0].kind, ViolationKind::EmptyLabel);
    }

    #[test]
    fn example_tree_valid_with_expected_stats() {
        let t = example_tree();
        assert!(t.is_valid());
        assert_eq!(t.stats(), TreeStats { depth: 3, node_count: 7 });
    }

    #[test]
    fn stats_of_small_shapes() {
        assert_eq!(
            ThoughtTree::new(ThoughtNode::leaf("a")).stats(),
            TreeStats { depth: 1, node_count: 1 }
        );
        assert_eq!(ThoughtTree::new(chain(4)).stats(), TreeStats { depth: 4, node_count: 4 });
    }

    #[test]
    fn subtree_addressing() {
        let t = example_tree();
        assert_eq!(t.subtree_at(&vec![0].into()).unwrap().label(), "Calculate Close-to-Open Return");
        assert_eq!(t.subtree_at(&NodePath::root()).unwrap(), t.root());
        let single = ThoughtTree::new(ThoughtNode::leaf("x"));
        assert_eq!(
            single.subtree_at(&vec![0].into()),
            Err(TreeError::PathNotFound(vec![0].into()))
        );
    }

    #[test]
    fn replace_root_and_inner() {
        let t = example_tree();
        let x = ThoughtNode::leaf("X");
        let r = t.replace_subtree(&NodePath::root(), x.clone()).unwrap();
        assert_eq!(r.root(), &x);

        let r = t.replace_subtree(&vec![1].into(), ThoughtNode::leaf("Scale")).unwrap();
        assert_eq!(r.stats().node_count, 5);
        // input untouched
        assert_eq!(t.stats().node_count, 7);
        assert_eq!(r.lineage().parents, vec![t.id().to_string()]);
    }

    #[test]
    fn replace_with_same_subtree_keeps_hash() {
        let t = example_tree();
        let sub = t.subtree_at(&vec![0, 1].into()).unwrap().clone();
        let r = t.replace_subtree(&vec![0, 1].into(), sub).unwrap();
        assert_eq!(r.id(), t.id());
    }

    #[test]
    fn replace_missing_path_fails() {
        let t = example_tree();
        assert!(matches!(
            t.replace_subtree(&vec![2].into(), ThoughtNode::leaf("y")),
            Err(TreeError::PathNotFound(_))
        ));
    }

    #[test]
    fn canonical_round_trip_example() {
        let t = example_tree();
        let text = t.to_canonical();
        assert!(text.starts_with("{\"children\":[{\"children\":[{\"children\":[],\"label\":\"Use Close price\"}"));
        let back = ThoughtTree::from_canonical(&text).unwrap();
        assert_eq!(back.root(), t.root());
        assert_eq!(back.id(), t.id());
    }

    #[test]
    fn reference_keys_rejected() {
        let text = r#"{"label":"a","children":[{"label":"b","children":[],"ref":"a"}]}"#;
        assert_eq!(
            ThoughtTree::from_canonical(text),
            Err(TreeError::SharedReference(vec![0].into()))
        );
        let text = r##"{"label":"a","$ref":"#"}"##;
        assert!(matches!(ThoughtTree::from_canonical(text), Err(TreeError::SharedReference(_))));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = ThoughtTree::from_canonical("{\"label\": \"a\",\n \"children\": [}").unwrap_err();
        match err {
            TreeError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_label_rejected_on_deserialize() {
        let err = ThoughtTree::from_canonical(r#"{"label":"a","children":[{"label":" ","children":[]}]}"#);
        assert!(matches!(err, Err(TreeError::Invalid(v)) if v[0].path == NodePath(vec![0])));
    }

    #[test]
    fn labels_normalized_before_hashing() {
        let a = ThoughtTree::new(ThoughtNode::leaf("Use   close\tprice "));
        let b = ThoughtTree::new(ThoughtNode::leaf("Use close price"));
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn caps_enforced_by_validate() {
        let deep = ThoughtTree::new(chain(11));
        assert!(deep
            .validate()
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::TooDeep { depth: 11, .. })));
        let wide = ThoughtTree::new(ThoughtNode::new(
            "root",
            (0..64).map(|i| ThoughtNode::leaf(format!("{i}"))).collect(),
        ));
        assert!(wide
            .validate()
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::TooManyNodes { count: 65, .. })));
    }

    fn arb_node() -> impl Strategy<Value = ThoughtNode> {
        let leaf = "[a-zA-Z0-9 \"\\\\é]{1,12}"
            .prop_filter("non-blank", |s| !s.trim().is_empty())
            .prop_map(ThoughtNode::leaf);
        leaf.prop_recursive(7, 64, 5, |inner| {
            ("[a-z][a-z ]{0,10}", prop::collection::vec(inner, 0..=5))
                .prop_map(|(label, children)| ThoughtNode::new(label, children))
        })
    }

    proptest! {
        #[test]
        fn round_trip_identity(root in arb_node()) {
            let t = ThoughtTree::new(root);
            let text = t.to_canonical();
            let back = ThoughtTree::from_canonical(&text).unwrap();
            prop_assert_eq!(back.root(), t.root());
            prop_assert_eq!(back.to_canonical(), text);
        }

        #[test]
        fn replace_never_mutates_input(root in arb_node(), pick in any::<prop::sample::Index>()) {
            let t = ThoughtTree::new(root);
            let before = t.to_canonical();
            let paths: Vec<NodePath> = t.root().walk().into_iter().map(|(p, _)| p).collect();
            let path = &paths[pick.index(paths.len())];
            let r = t.replace_subtree(path, ThoughtNode::leaf("new")).unwrap();
            prop_assert_eq!(t.to_canonical(), before);
            let old = t.subtree_at(path).unwrap().size();
            prop_assert_eq!(r.stats().node_count, t.stats().node_count - old + 1);
        }

        #[test]
        fn hash_equality_matches_text_equality(a in arb_node(), b in arb_node()) {
            let ta = ThoughtTree::new(a);
            let tb = ThoughtTree::new(b);
            prop_assert_eq!(ta.id() == tb.id(), ta.to_canonical() == tb.to_canonical());
        }
    }
}
