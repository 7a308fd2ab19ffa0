//! Element-only XML trees.
//!
//! Trees are stored as an arena in document (pre-order) order, so a node's
//! [`NodeId`] is also its document-order index. Attributes, text, comments and
//! processing instructions are dropped while parsing: only the element
//! hierarchy matters for broadcasting.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Default upper bound on the number of nodes a synthetic tree may have.
pub const DEFAULT_NODE_CAP: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XmlError {
    #[error("empty XML input")]
    Empty,
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Malformed {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("fanout must be at least 1")]
    ZeroFanout,
    #[error("tree with fanout {fanout} and height {height} exceeds the node cap of {cap}")]
    TooLarge {
        fanout: usize,
        height: usize,
        cap: u64,
    },
}

/// Position of a node in document order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementNode {
    pub label: Arc<str>,
    pub level: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementTree {
    nodes: Vec<ElementNode>,
    height: usize,
    fanout: Option<usize>,
}

impl ElementTree {
    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &ElementNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[ElementNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Largest level of any node (the root is level 0).
    pub fn height(&self) -> usize {
        self.height
    }

    /// The uniform fanout, if the tree is full: every inner node has the same
    /// number of children and every leaf sits at [`height`](Self::height).
    pub fn fanout(&self) -> Option<usize> {
        self.fanout
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn level(&self, id: NodeId) -> usize {
        self.nodes[id.0].level
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn first_child(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].children.first().copied()
    }

    pub fn next_sibling(&self, id: NodeId) -> Option<NodeId> {
        let parent = self.nodes[id.0].parent?;
        let siblings = &self.nodes[parent.0].children;
        let pos = siblings.iter().position(|&c| c == id)?;
        siblings.get(pos + 1).copied()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].children.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids().filter(|&id| self.is_leaf(id))
    }

    /// Nodes at `level`, in document order.
    pub fn nodes_at_level(&self, level: usize) -> Vec<NodeId> {
        self.ids().filter(|&id| self.level(id) == level).collect()
    }

    /// Ancestors of `id` from the root down to and including `id`.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// One past the last node of the subtree rooted at `id`. Because the arena
    /// is in pre-order, the subtree occupies the contiguous range
    /// `id.0..subtree_end(id)`.
    pub fn subtree_end(&self, id: NodeId) -> usize {
        let mut cur = id;
        loop {
            match self.nodes[cur.0].children.last() {
                Some(&last) => cur = last,
                None => return cur.0 + 1,
            }
        }
    }

    pub fn subtree(&self, id: NodeId) -> impl Iterator<Item = NodeId> {
        (id.0..self.subtree_end(id)).map(NodeId)
    }
}

/// Accumulates nodes in arbitrary order and produces a document-ordered
/// [`ElementTree`].
#[derive(Debug, Default)]
pub struct TreeBuilder {
    labels: Vec<Arc<str>>,
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl TreeBuilder {
    pub fn new(root_label: impl Into<Arc<str>>) -> Self {
        Self {
            labels: vec![root_label.into()],
            parents: vec![None],
            children: vec![Vec::new()],
        }
    }

    /// Appends a child to `parent` (a handle returned by an earlier call, or 0
    /// for the root) and returns the new node's handle.
    pub fn add_child(&mut self, parent: usize, label: impl Into<Arc<str>>) -> usize {
        let id = self.labels.len();
        self.labels.push(label.into());
        self.parents.push(Some(parent));
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn finish(self) -> ElementTree {
        // Walk first-child / next-sibling / parent links without recursion.
        let n = self.labels.len();
        let mut order = Vec::with_capacity(n);
        let mut sibling_pos = vec![0usize; n];
        for kids in &self.children {
            for (i, &c) in kids.iter().enumerate() {
                sibling_pos[c] = i;
            }
        }
        let next_sibling = |id: usize| -> Option<usize> {
            let p = self.parents[id]?;
            self.children[p].get(sibling_pos[id] + 1).copied()
        };
        let mut cur = Some(0usize);
        while let Some(id) = cur {
            order.push(id);
            if let Some(&first) = self.children[id].first() {
                cur = Some(first);
                continue;
            }
            let mut climb = id;
            cur = loop {
                if let Some(s) = next_sibling(climb) {
                    break Some(s);
                }
                match self.parents[climb] {
                    Some(p) => climb = p,
                    None => break None,
                }
            };
        }

        let mut doc_index = vec![0usize; n];
        for (i, &old) in order.iter().enumerate() {
            doc_index[old] = i;
        }
        let mut nodes: Vec<ElementNode> = Vec::with_capacity(n);
        let mut labels: Vec<Option<Arc<str>>> = self.labels.into_iter().map(Some).collect();
        for &old in &order {
            let parent = self.parents[old].map(|p| NodeId(doc_index[p]));
            let level = parent.map_or(0, |p| nodes[p.0].level + 1);
            nodes.push(ElementNode {
                label: labels[old].take().expect("each node visited once"),
                level,
                parent,
                children: self.children[old]
                    .iter()
                    .map(|&c| NodeId(doc_index[c]))
                    .collect(),
            });
        }
        ElementTree::from_nodes(nodes)
    }
}

impl ElementTree {
    fn from_nodes(nodes: Vec<ElementNode>) -> Self {
        let height = nodes.iter().map(|n| n.level).max().unwrap_or(0);
        let mut fanout = None;
        let mut uniform = true;
        for node in &nodes {
            if node.children.is_empty() {
                uniform &= node.level == height;
            } else {
                match fanout {
                    None => fanout = Some(node.children.len()),
                    Some(f) => uniform &= f == node.children.len(),
                }
            }
        }
        let fanout = if uniform { fanout } else { None };
        Self {
            nodes,
            height,
            fanout,
        }
    }
}

/// Parses an element-only view of `text`.
pub fn parse_xml(text: &str) -> Result<ElementTree, XmlError> {
    if text.trim().is_empty() {
        return Err(XmlError::Empty);
    }
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        XmlError::Malformed {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    let mut builder = TreeBuilder::new(root.tag_name().name());
    let mut stack = vec![(root, 0usize)];
    while let Some((node, handle)) = stack.pop() {
        let kids: Vec<_> = node.children().filter(|c| c.is_element()).collect();
        let mut handles = Vec::with_capacity(kids.len());
        for kid in &kids {
            handles.push(builder.add_child(handle, kid.tag_name().name()));
        }
        for (kid, h) in kids.into_iter().zip(handles).rev() {
            stack.push((kid, h));
        }
    }
    Ok(builder.finish())
}

/// Serializes the tree with `<x/>` for leaves and paired tags otherwise, with
/// no whitespace between elements.
pub fn serialize_xml(tree: &ElementTree) -> String {
    enum Step {
        Open(NodeId),
        Close(NodeId),
    }
    let mut out = String::new();
    let mut stack = vec![Step::Open(tree.root())];
    while let Some(step) = stack.pop() {
        match step {
            Step::Open(id) => {
                let label = tree.label(id);
                if tree.is_leaf(id) {
                    out.push('<');
                    out.push_str(label);
                    out.push_str("/>");
                } else {
                    out.push('<');
                    out.push_str(label);
                    out.push('>');
                    stack.push(Step::Close(id));
                    for &c in tree.children(id).iter().rev() {
                        stack.push(Step::Open(c));
                    }
                }
            }
            Step::Close(id) => {
                out.push_str("</");
                out.push_str(tree.label(id));
                out.push('>');
            }
        }
    }
    out
}

/// Visits every node in document order using only first-child, next-sibling
/// and parent moves, returning `(label, doc_index)` pairs.
pub fn traverse_document_order(tree: &ElementTree) -> Vec<(String, usize)> {
    let mut out = Vec::with_capacity(tree.node_count());
    let root = tree.root();
    let mut cur = Some(root);
    while let Some(id) = cur {
        out.push((tree.label(id).to_string(), out.len()));
        if let Some(first) = tree.first_child(id) {
            cur = Some(first);
            continue;
        }
        let mut climb = id;
        cur = loop {
            if climb == root {
                break None;
            }
            if let Some(s) = tree.next_sibling(climb) {
                break Some(s);
            }
            climb = tree.parent(climb).expect("non-root node has a parent");
        };
    }
    out
}

/// Renders the traversal as `"<label> index: <i>"` lines.
pub fn traversal_listing(tree: &ElementTree) -> String {
    traverse_document_order(tree)
        .into_iter()
        .map(|(label, i)| format!("{label} index: {i}\n"))
        .collect()
}

/// Naming rule for synthetic trees.
pub trait Labeler {
    /// `ordinal` is 1-based within `level`, counted in document order.
    fn label(&self, level: usize, ordinal: u64) -> String;
}

/// `L<level>N<ordinal>`, e.g. `L0N1`, `L2N7`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LevelOrdinal;

impl Labeler for LevelOrdinal {
    fn label(&self, level: usize, ordinal: u64) -> String {
        format!("L{level}N{ordinal}")
    }
}

/// `Root` for the root, then `a1, a2, …` on level 1, `b1, …` on level 2 and
/// so on. Levels past `z` fall back to [`LevelOrdinal`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Alphabetic;

impl Labeler for Alphabetic {
    fn label(&self, level: usize, ordinal: u64) -> String {
        match level {
            0 => "Root".to_string(),
            1..=26 => format!("{}{ordinal}", (b'a' + (level - 1) as u8) as char),
            _ => LevelOrdinal.label(level, ordinal),
        }
    }
}

/// Number of nodes in a full tree, or `None` on overflow.
pub fn full_tree_size(fanout: usize, height: usize) -> Option<u64> {
    let mut total: u64 = 0;
    let mut width: u64 = 1;
    for level in 0..=height {
        total = total.checked_add(width)?;
        if level < height {
            width = width.checked_mul(fanout as u64)?;
        }
    }
    Some(total)
}

pub fn generate_full_tree(
    fanout: usize,
    height: usize,
    labeler: &dyn Labeler,
) -> Result<ElementTree, XmlError> {
    generate_full_tree_capped(fanout, height, labeler, DEFAULT_NODE_CAP)
}

pub fn generate_full_tree_capped(
    fanout: usize,
    height: usize,
    labeler: &dyn Labeler,
    cap: u64,
) -> Result<ElementTree, XmlError> {
    if fanout == 0 {
        return Err(XmlError::ZeroFanout);
    }
    let too_large = XmlError::TooLarge {
        fanout,
        height,
        cap,
    };
    let size = full_tree_size(fanout, height).ok_or_else(|| too_large.clone())?;
    if size > cap {
        return Err(too_large);
    }

    // Built level by level; finish() reorders into document order. Ordinals
    // are assigned per level in left-to-right order, which is document order
    // within a level.
    let mut builder = TreeBuilder::new(labeler.label(0, 1));
    let mut frontier = vec![0usize];
    for level in 1..=height {
        let mut next = Vec::with_capacity(frontier.len() * fanout);
        let mut ordinal = 0u64;
        for &parent in &frontier {
            for _ in 0..fanout {
                ordinal += 1;
                next.push(builder.add_child(parent, labeler.label(level, ordinal)));
            }
        }
        frontier = next;
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_document() {
        let t = parse_xml("<r/>").unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.height(), 0);
        assert_eq!(traverse_document_order(&t), vec![("r".to_string(), 0)]);
    }

    #[test]
    fn two_leaves() {
        let t = parse_xml("<r><x/><y/></r>").unwrap();
        let order = traverse_document_order(&t);
        assert_eq!(
            order,
            vec![("r".into(), 0), ("x".into(), 1), ("y".into(), 2)]
        );
        assert_eq!(t.fanout(), Some(2));
    }

    #[test]
    fn attributes_and_text_are_ignored() {
        let t = parse_xml("<r id=\"1\">hello<x a=\"b\">t</x><!-- c --><y/></r>").unwrap();
        assert_eq!(serialize_xml(&t), "<r><x/><y/></r>");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(parse_xml(""), Err(XmlError::Empty));
        assert_eq!(parse_xml("  \n"), Err(XmlError::Empty));
    }

    #[test]
    fn malformed_input_reports_position() {
        match parse_xml("<r>\n  <a></b>\n</r>") {
            Err(XmlError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        // tag names are case-sensitive
        assert!(matches!(
            parse_xml("<Root><a/></root>"),
            Err(XmlError::Malformed { .. })
        ));
    }

    #[test]
    fn single_node_serializes_as_empty_element() {
        let t = TreeBuilder::new("r").finish();
        assert_eq!(serialize_xml(&t), "<r/>");
    }

    #[test]
    fn binary_tree_second_child_position() {
        let t = generate_full_tree(2, 2, &LevelOrdinal).unwrap();
        let order = traverse_document_order(&t);
        assert_eq!(order.len(), 7);
        // Pre-order: root, c1, c1.1, c1.2, c2, c2.1, c2.2.
        assert_eq!(t.children(t.root()), &[NodeId(1), NodeId(4)]);
        assert_eq!(order[4].0, "L1N2");
    }

    #[test]
    fn chain_tree() {
        let t = generate_full_tree(1, 5, &LevelOrdinal).unwrap();
        assert_eq!(t.node_count(), 6);
        assert_eq!(t.height(), 5);
        assert_eq!(t.fanout(), Some(1));
        assert!(t.ids().all(|id| t.level(id) == id.0));
    }

    #[test]
    fn node_cap_is_enforced() {
        let err = generate_full_tree_capped(10, 6, &LevelOrdinal, 1000).unwrap_err();
        assert!(matches!(err, XmlError::TooLarge { .. }));
        assert!(generate_full_tree(1000, 1000, &LevelOrdinal).is_err());
        assert_eq!(
            generate_full_tree(0, 3, &LevelOrdinal),
            Err(XmlError::ZeroFanout)
        );
    }

    #[test]
    fn alphabetic_labels() {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        assert_eq!(t.label(NodeId(0)), "Root");
        assert_eq!(t.label(NodeId(21)), "c14");
        assert_eq!(t.label(NodeId(39)), "c27");
    }

    #[test]
    fn subtree_ranges() {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        let b5 = NodeId(19);
        assert_eq!(t.label(b5), "b5");
        let labels: Vec<_> = t.subtree(b5).map(|id| t.label(id)).collect();
        assert_eq!(labels, ["b5", "c13", "c14", "c15"]);
        assert_eq!(t.next_sibling(b5), Some(NodeId(23)));
        assert_eq!(
            t.path_to(NodeId(21)),
            vec![NodeId(0), NodeId(14), b5, NodeId(21)]
        );
    }

    #[test]
    fn non_uniform_tree_has_no_fanout() {
        let t = parse_xml("<r><a><b/></a><c/></r>").unwrap();
        assert_eq!(t.fanout(), None);
        assert_eq!(t.height(), 2);
    }
}
