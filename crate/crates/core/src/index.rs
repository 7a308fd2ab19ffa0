//! Path index over an element tree.
//!
//! Each element gets one index node carrying logical links: its data node, its
//! leftmost child and its next sibling. Broadcast addresses for these links
//! (and the homolog link) depend on where copies land in the stream, so they
//! are attached to scheduled buckets by the scheduler rather than stored here.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::xml::{ElementTree, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("empty query path")]
    Empty,
    #[error("no node matches {query}; longest matched prefix: {}", display_prefix(.matched))]
    NotFound {
        query: QueryPath,
        matched: Vec<String>,
    },
}

fn display_prefix(steps: &[String]) -> String {
    if steps.is_empty() {
        "(none)".to_string()
    } else {
        steps.join("/")
    }
}

/// A child-axis label path such as `Root/a2/b5/c14`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryPath {
    steps: Vec<String>,
}

impl QueryPath {
    pub fn new<I, S>(steps: I) -> Result<Self, QueryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let steps: Vec<String> = steps.into_iter().map(Into::into).collect();
        if steps.is_empty() {
            return Err(QueryError::Empty);
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The label path from the root to `id`.
    pub fn of_node(tree: &ElementTree, id: NodeId) -> Self {
        Self {
            steps: tree
                .path_to(id)
                .into_iter()
                .map(|n| tree.label(n).to_string())
                .collect(),
        }
    }
}

impl FromStr for QueryPath {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let steps: Vec<&str> = s
            .trim()
            .trim_start_matches('/')
            .split('/')
            .filter(|p| !p.is_empty())
            .collect();
        Self::new(steps)
    }
}

impl fmt::Display for QueryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.steps.join("/"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexNode {
    pub label: Arc<str>,
    pub level: usize,
    /// The element whose data this entry addresses.
    pub data: NodeId,
    pub first_child: Option<NodeId>,
    pub next_sibling: Option<NodeId>,
    pub parent: Option<NodeId>,
}

/// Index nodes in the same document order as the element tree they mirror;
/// `nodes()[i]` indexes element `NodeId(i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTree {
    nodes: Vec<IndexNode>,
}

pub fn build_index(tree: &ElementTree) -> IndexTree {
    let nodes = tree
        .ids()
        .map(|id| IndexNode {
            label: tree.node(id).label.clone(),
            level: tree.level(id),
            data: id,
            first_child: tree.first_child(id),
            next_sibling: tree.next_sibling(id),
            parent: tree.parent(id),
        })
        .collect();
    IndexTree { nodes }
}

impl IndexTree {
    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &IndexNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[IndexNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn path(&self, id: NodeId) -> QueryPath {
        let mut steps = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            steps.push(self.nodes[c.0].label.to_string());
            cur = self.nodes[c.0].parent;
        }
        steps.reverse();
        QueryPath { steps }
    }

    pub fn resolve_path(&self, query: &QueryPath) -> Result<NodeId, QueryError> {
        self.visited_nodes(query).map(|v| {
            *v.last()
                .expect("a successful walk visits at least the root")
        })
    }

    /// Every index node examined while resolving `query` by descending through
    /// leftmost-child links and scanning next-sibling links. The match is the
    /// last element.
    pub fn visited_nodes(&self, query: &QueryPath) -> Result<Vec<NodeId>, QueryError> {
        let not_found = |depth: usize| QueryError::NotFound {
            query: query.clone(),
            matched: query.steps[..depth].to_vec(),
        };
        let mut visited = Vec::new();
        let mut cur = Some(self.root());
        for (depth, step) in query.steps.iter().enumerate() {
            loop {
                let id = cur.ok_or_else(|| not_found(depth))?;
                visited.push(id);
                let node = &self.nodes[id.0];
                if *node.label == **step {
                    if depth + 1 < query.steps.len() {
                        cur = node.first_child;
                    }
                    break;
                }
                // The root has no siblings, so a root mismatch ends the walk.
                cur = node.next_sibling;
            }
        }
        Ok(visited)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xml::{generate_full_tree, parse_xml, Alphabetic, LevelOrdinal};

    fn fig1() -> (ElementTree, IndexTree) {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        let i = build_index(&t);
        (t, i)
    }

    fn labels(idx: &IndexTree, ids: &[NodeId]) -> Vec<String> {
        ids.iter().map(|&i| idx.node(i).label.to_string()).collect()
    }

    #[test]
    fn sample_tree_links() {
        let (_, idx) = fig1();
        assert_eq!(idx.len(), 40);
        let b5 = idx.resolve_path(&"Root/a2/b5".parse().unwrap()).unwrap();
        let node = idx.node(b5);
        assert_eq!(&*idx.node(node.first_child.unwrap()).label, "c13");
        assert_eq!(&*idx.node(node.next_sibling.unwrap()).label, "b6");
        let b9 = idx.resolve_path(&"Root/a3/b9".parse().unwrap()).unwrap();
        assert_eq!(idx.node(b9).next_sibling, None);
        let c1 = idx.resolve_path(&"Root/a1/b1/c1".parse().unwrap()).unwrap();
        assert_eq!(idx.node(c1).first_child, None);
    }

    #[test]
    fn resolve_fig1_c14() {
        let (_, idx) = fig1();
        let q: QueryPath = "Root/a2/b5/c14".parse().unwrap();
        assert_eq!(idx.resolve_path(&q).unwrap(), NodeId(21));
        let visited = idx.visited_nodes(&q).unwrap();
        assert_eq!(
            labels(&idx, &visited),
            ["Root", "a1", "a2", "b4", "b5", "c13", "c14"]
        );
    }

    #[test]
    fn leftmost_path_has_no_scans() {
        let (_, idx) = fig1();
        let visited = idx
            .visited_nodes(&"Root/a1/b1/c1".parse().unwrap())
            .unwrap();
        assert_eq!(labels(&idx, &visited), ["Root", "a1", "b1", "c1"]);
        let root = idx.visited_nodes(&"Root".parse().unwrap()).unwrap();
        assert_eq!(root, vec![NodeId(0)]);
    }

    #[test]
    fn missing_label_reports_prefix() {
        let (_, idx) = fig1();
        let err = idx.resolve_path(&"Root/a9".parse().unwrap()).unwrap_err();
        match err {
            QueryError::NotFound { matched, .. } => assert_eq!(matched, ["Root"]),
            other => panic!("{other:?}"),
        }
        let err = idx.resolve_path(&"Top".parse().unwrap()).unwrap_err();
        assert!(matches!(err, QueryError::NotFound { ref matched, .. } if matched.is_empty()));
        // descending below a leaf
        let err = idx
            .resolve_path(&"Root/a1/b1/c1/d1".parse().unwrap())
            .unwrap_err();
        assert!(matches!(err, QueryError::NotFound { ref matched, .. } if matched.len() == 4));
    }

    #[test]
    fn single_node_index() {
        let t = parse_xml("<r/>").unwrap();
        let idx = build_index(&t);
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.node(NodeId(0)).first_child, None);
        assert_eq!(idx.node(NodeId(0)).next_sibling, None);
    }

    #[test]
    fn binary_root_links() {
        let t = generate_full_tree(2, 2, &LevelOrdinal).unwrap();
        let idx = build_index(&t);
        let root = idx.node(idx.root());
        assert_eq!(root.first_child, Some(NodeId(1)));
        assert_eq!(root.next_sibling, None);
    }

    #[test]
    fn duplicate_labels_take_first_match() {
        let t = parse_xml("<r><a><x/></a><a><y/></a></r>").unwrap();
        let idx = build_index(&t);
        assert_eq!(
            idx.resolve_path(&"r/a".parse().unwrap()).unwrap(),
            NodeId(1)
        );
        assert!(idx.resolve_path(&"r/a/y".parse().unwrap()).is_err());
    }

    #[test]
    fn query_parsing() {
        let q: QueryPath = "/Root/a1/".parse().unwrap();
        assert_eq!(q.steps(), ["Root", "a1"]);
        assert_eq!(q.to_string(), "Root/a1");
        assert_eq!("".parse::<QueryPath>(), Err(QueryError::Empty));
        assert_eq!("//".parse::<QueryPath>(), Err(QueryError::Empty));
    }
}
