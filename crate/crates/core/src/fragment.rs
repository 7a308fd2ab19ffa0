//! Cutting an index tree and its data into broadcast buckets.
//!
//! The tree-path layout cuts at a replication level `h`. Every node at level
//! `h` roots one segment laid out as
//!
//! * HI: index nodes of levels `0..h`, identical in every segment,
//! * LI: index nodes of the segment's subtree,
//! * HD: data of the path from level 1 down to the segment root,
//! * LD: data of the segment's subtree, segment root included.
//!
//! Data of upper-level nodes that lie on no segment path (the root, for a full
//! tree) is not part of any segment; it is kept as a separate preamble which
//! the scheduler places ahead of the HD region.
//!
//! The flat `(1, x)` layout broadcasts all data once and the whole index `x`
//! times at equal spacing.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::warn;
use thiserror::Error;

use crate::index::IndexTree;
use crate::xml::{ElementTree, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FragmentError {
    #[error("replication level {h} exceeds tree height {height}")]
    LevelTooDeep { h: usize, height: usize },
    #[error("bucket sizes must be positive (index={index}, data={data})")]
    ZeroSize { index: u64, data: u64 },
    #[error("index replication count must be at least 1")]
    ZeroReplication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BucketKind {
    Index,
    Data,
}

impl BucketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BucketKind::Index => "INDEX",
            BucketKind::Data => "DATA",
        }
    }
}

impl FromStr for BucketKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "INDEX" => Ok(BucketKind::Index),
            "DATA" => Ok(BucketKind::Data),
            _ => Err(format!("unknown bucket kind {s:?}")),
        }
    }
}

/// Which region of a layout a bucket belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Hi,
    Li,
    Hd,
    Ld,
    /// Upper-level data outside every segment path.
    Preamble,
    /// Index entry of a flat layout.
    FlatIndex,
    /// Data bucket of a flat layout.
    FlatData,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Hi => "HI",
            Part::Li => "LI",
            Part::Hd => "HD",
            Part::Ld => "LD",
            Part::Preamble => "PRE",
            Part::FlatIndex => "IDX",
            Part::FlatData => "DAT",
        }
    }
}

impl FromStr for Part {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "HI" => Part::Hi,
            "LI" => Part::Li,
            "HD" => Part::Hd,
            "LD" => Part::Ld,
            "PRE" => Part::Preamble,
            "IDX" => Part::FlatIndex,
            "DAT" => Part::FlatData,
            _ => return Err(format!("unknown part {s:?}")),
        })
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Payload sizes in slots: `index` for every index bucket, `data` for every
/// data bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketSizes {
    index: u64,
    data: u64,
}

impl BucketSizes {
    pub fn new(index: u64, data: u64) -> Result<Self, FragmentError> {
        if index == 0 || data == 0 {
            return Err(FragmentError::ZeroSize { index, data });
        }
        Ok(Self { index, data })
    }

    pub fn unit() -> Self {
        Self { index: 1, data: 1 }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn data(&self) -> u64 {
        self.data
    }

    pub fn of(&self, kind: BucketKind) -> u64 {
        match kind {
            BucketKind::Index => self.index,
            BucketKind::Data => self.data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub kind: BucketKind,
    pub size: u64,
    pub node: NodeId,
    pub level: usize,
    pub label: Arc<str>,
    pub part: Part,
    /// Id of the segment (or flat unit) the bucket belongs to, 1-based.
    pub segment: usize,
    /// Position within that segment.
    pub seq: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: usize,
    /// The level-`h` element this segment is cut at.
    pub root: NodeId,
    pub hi: Vec<Bucket>,
    pub li: Vec<Bucket>,
    pub hd: Vec<Bucket>,
    pub ld: Vec<Bucket>,
}

fn total(buckets: &[Bucket]) -> u64 {
    buckets.iter().map(|b| b.size).sum()
}

impl Segment {
    /// HI, LI, HD, LD in broadcast order.
    pub fn buckets(&self) -> impl Iterator<Item = &Bucket> {
        self.hi
            .iter()
            .chain(&self.li)
            .chain(&self.hd)
            .chain(&self.ld)
    }

    pub fn size(&self) -> u64 {
        self.index_size() + self.data_size()
    }

    pub fn index_size(&self) -> u64 {
        total(&self.hi) + total(&self.li)
    }

    pub fn data_size(&self) -> u64 {
        total(&self.hd) + total(&self.ld)
    }
}

/// Size sums over all segments of a fragmentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Totals {
    pub hi: u64,
    pub li: u64,
    pub hd: u64,
    pub ld: u64,
}

impl Totals {
    pub fn index(&self) -> u64 {
        self.hi + self.li
    }

    pub fn data(&self) -> u64 {
        self.hd + self.ld
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragmentation {
    pub h: usize,
    pub sizes: BucketSizes,
    pub segments: Vec<Segment>,
    pub preamble: Vec<Bucket>,
    pub totals: Totals,
}

impl Fragmentation {
    pub fn preamble_size(&self) -> u64 {
        total(&self.preamble)
    }
}

struct BucketFactory<'a> {
    tree: &'a ElementTree,
    sizes: BucketSizes,
}

impl BucketFactory<'_> {
    fn make(
        &self,
        kind: BucketKind,
        node: NodeId,
        part: Part,
        segment: usize,
        seq: usize,
    ) -> Bucket {
        Bucket {
            kind,
            size: self.sizes.of(kind),
            node,
            level: self.tree.level(node),
            label: self.tree.node(node).label.clone(),
            part,
            segment,
            seq,
        }
    }
}

pub fn fragment_tp(
    tree: &ElementTree,
    index: &IndexTree,
    h: usize,
    sizes: BucketSizes,
) -> Result<Fragmentation, FragmentError> {
    debug_assert_eq!(tree.node_count(), index.len());
    if h > tree.height() {
        return Err(FragmentError::LevelTooDeep {
            h,
            height: tree.height(),
        });
    }
    let factory = BucketFactory { tree, sizes };
    let upper: Vec<NodeId> = index
        .nodes()
        .iter()
        .filter(|n| n.level < h)
        .map(|n| n.data)
        .collect();
    let cut_roots = tree.nodes_at_level(h);

    let mut segments = Vec::with_capacity(cut_roots.len());
    let mut totals = Totals::default();
    for (i, &root) in cut_roots.iter().enumerate() {
        let id = i + 1;
        let mut seq = 0usize;
        let mut next = |kind, node, part| {
            let b = factory.make(kind, node, part, id, seq);
            seq += 1;
            b
        };
        let hi: Vec<_> = upper
            .iter()
            .map(|&n| next(BucketKind::Index, n, Part::Hi))
            .collect();
        let li: Vec<_> = tree
            .subtree(root)
            .map(|n| next(BucketKind::Index, n, Part::Li))
            .collect();
        let hd: Vec<_> = tree
            .path_to(root)
            .into_iter()
            .skip(1)
            .map(|n| next(BucketKind::Data, n, Part::Hd))
            .collect();
        let ld: Vec<_> = tree
            .subtree(root)
            .map(|n| next(BucketKind::Data, n, Part::Ld))
            .collect();
        let seg = Segment {
            id,
            root,
            hi,
            li,
            hd,
            ld,
        };
        totals.hi += total(&seg.hi);
        totals.li += total(&seg.li);
        totals.hd += total(&seg.hd);
        totals.ld += total(&seg.ld);
        segments.push(seg);
    }

    // Upper-level data that no HD path carries: the root, plus any shallow
    // leaf branch of a non-uniform tree.
    let mut on_path = vec![false; tree.node_count()];
    for &root in &cut_roots {
        for n in tree.path_to(root) {
            on_path[n.0] = true;
        }
    }
    let preamble = if h == 0 {
        Vec::new()
    } else {
        upper
            .iter()
            .filter(|&&n| n == tree.root() || !on_path[n.0])
            .enumerate()
            .map(|(seq, &n)| factory.make(BucketKind::Data, n, Part::Preamble, 1, seq))
            .collect()
    };

    Ok(Fragmentation {
        h,
        sizes,
        segments,
        preamble,
        totals,
    })
}

/// A flat stream with the whole index replicated `x` times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatLayout {
    pub x: usize,
    pub sizes: BucketSizes,
    pub buckets: Vec<Bucket>,
    /// Positions in `buckets` where an index copy starts.
    pub copy_starts: Vec<usize>,
}

impl FlatLayout {
    pub fn cycle_length(&self) -> u64 {
        total(&self.buckets)
    }
}

/// Index copy `t` is inserted before data bucket `⌊t·N/x⌋`, where `N` counts
/// data buckets.
pub fn flat_copy_positions(data_buckets: usize, x: usize) -> Vec<usize> {
    (0..x).map(|t| t * data_buckets / x).collect()
}

pub fn fragment_1x(
    tree: &ElementTree,
    index: &IndexTree,
    x: usize,
    sizes: BucketSizes,
) -> Result<FlatLayout, FragmentError> {
    debug_assert_eq!(tree.node_count(), index.len());
    if x == 0 {
        return Err(FragmentError::ZeroReplication);
    }
    let data_count = tree.node_count();
    let x = if x > data_count {
        warn!("index replication {x} exceeds {data_count} data buckets; clamping");
        data_count
    } else {
        x
    };
    let factory = BucketFactory { tree, sizes };
    let positions = flat_copy_positions(data_count, x);
    let mut buckets = Vec::with_capacity(data_count * (x + 1));
    let mut copy_starts = Vec::with_capacity(x);
    let mut pending = positions.iter().peekable();
    for d in 0..data_count {
        while pending.next_if(|&&p| p == d).is_some() {
            copy_starts.push(buckets.len());
            for entry in index.nodes() {
                let seq = buckets.len();
                buckets.push(factory.make(BucketKind::Index, entry.data, Part::FlatIndex, 1, seq));
            }
        }
        let seq = buckets.len();
        buckets.push(factory.make(BucketKind::Data, NodeId(d), Part::FlatData, 1, seq));
    }
    Ok(FlatLayout {
        x,
        sizes,
        buckets,
        copy_starts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::xml::{generate_full_tree, parse_xml, Alphabetic, LevelOrdinal};

    fn labels(bs: &[Bucket]) -> Vec<&str> {
        bs.iter().map(|b| &*b.label).collect()
    }

    #[test]
    fn sample_tree_at_level_two() {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        let idx = build_index(&t);
        let f = fragment_tp(&t, &idx, 2, BucketSizes::unit()).unwrap();
        assert_eq!(f.segments.len(), 9);
        let roots: Vec<_> = f.segments.iter().map(|s| t.label(s.root)).collect();
        assert_eq!(
            roots,
            ["b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "b9"]
        );
        let s5 = &f.segments[4];
        assert_eq!(s5.id, 5);
        assert_eq!(labels(&s5.hi), ["Root", "a1", "a2", "a3"]);
        assert_eq!(labels(&s5.li), ["b5", "c13", "c14", "c15"]);
        assert_eq!(labels(&s5.hd), ["a2", "b5"]);
        assert_eq!(labels(&s5.ld), ["b5", "c13", "c14", "c15"]);
        assert_eq!(labels(&f.preamble), ["Root"]);
        let seqs: Vec<_> = s5.buckets().map(|b| b.seq).collect();
        assert_eq!(seqs, (0..14).collect::<Vec<_>>());
    }

    #[test]
    fn level_zero_is_one_segment() {
        let t = generate_full_tree(3, 2, &LevelOrdinal).unwrap();
        let idx = build_index(&t);
        let f = fragment_tp(&t, &idx, 0, BucketSizes::unit()).unwrap();
        assert_eq!(f.segments.len(), 1);
        let s = &f.segments[0];
        assert!(s.hi.is_empty());
        assert!(s.hd.is_empty());
        assert_eq!(s.li.len(), 13);
        assert_eq!(s.ld.len(), 13);
        assert!(f.preamble.is_empty());
    }

    #[test]
    fn binary_tree_counts() {
        let t = generate_full_tree(2, 2, &LevelOrdinal).unwrap();
        let idx = build_index(&t);
        let f = fragment_tp(&t, &idx, 1, BucketSizes::unit()).unwrap();
        assert_eq!(f.segments.len(), 2);
        for s in &f.segments {
            assert_eq!(
                (s.hi.len(), s.li.len(), s.hd.len(), s.ld.len()),
                (1, 3, 1, 3)
            );
        }
    }

    #[test]
    fn level_deeper_than_tree_is_rejected() {
        let t = generate_full_tree(2, 2, &LevelOrdinal).unwrap();
        let idx = build_index(&t);
        assert_eq!(
            fragment_tp(&t, &idx, 3, BucketSizes::unit()),
            Err(FragmentError::LevelTooDeep { h: 3, height: 2 })
        );
    }

    #[test]
    fn shallow_branches_go_to_preamble() {
        let t = parse_xml("<r><a><b/></a><c/></r>").unwrap();
        let idx = build_index(&t);
        let f = fragment_tp(&t, &idx, 2, BucketSizes::unit()).unwrap();
        assert_eq!(f.segments.len(), 1);
        assert_eq!(labels(&f.preamble), ["r", "c"]);
        assert_eq!(labels(&f.segments[0].hi), ["r", "a", "c"]);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(BucketSizes::new(0, 1).is_err());
        assert!(BucketSizes::new(1, 0).is_err());
    }

    #[test]
    fn flat_layout_single_copy_at_head() {
        let t = generate_full_tree(2, 2, &LevelOrdinal).unwrap();
        let idx = build_index(&t);
        let f = fragment_1x(&t, &idx, 1, BucketSizes::unit()).unwrap();
        assert_eq!(f.copy_starts, vec![0]);
        assert!(f.buckets[..7].iter().all(|b| b.kind == BucketKind::Index));
        assert!(f.buckets[7..].iter().all(|b| b.kind == BucketKind::Data));
    }

    #[test]
    fn flat_layout_cycle_length() {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        let idx = build_index(&t);
        let f = fragment_1x(&t, &idx, 3, BucketSizes::unit()).unwrap();
        assert_eq!(f.cycle_length(), 160);
        let sized = fragment_1x(&t, &idx, 3, BucketSizes::new(2, 5).unwrap()).unwrap();
        assert_eq!(sized.cycle_length(), 40 * 5 + 3 * 40 * 2);
    }

    #[test]
    fn flat_layout_two_copies_spacing() {
        let t = generate_full_tree(2, 2, &LevelOrdinal).unwrap();
        let idx = build_index(&t);
        let f = fragment_1x(&t, &idx, 2, BucketSizes::unit()).unwrap();
        // second copy sits before data bucket ⌊7/2⌋ = 3
        assert_eq!(flat_copy_positions(7, 2), vec![0, 3]);
        assert_eq!(f.copy_starts, vec![0, 7 + 3]);
    }

    #[test]
    fn flat_layout_clamps_replication() {
        let t = generate_full_tree(2, 1, &LevelOrdinal).unwrap();
        let idx = build_index(&t);
        let f = fragment_1x(&t, &idx, 10, BucketSizes::unit()).unwrap();
        assert_eq!(f.x, 3);
        assert_eq!(f.copy_starts.len(), 3);
        assert!(fragment_1x(&t, &idx, 0, BucketSizes::unit()).is_err());
    }
}
