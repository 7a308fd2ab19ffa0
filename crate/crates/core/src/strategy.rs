//! Broadcast layout strategies, registered by name.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::fragment::{
    fragment_1x, fragment_tp, Bucket, BucketSizes, FlatLayout, FragmentError, Fragmentation,
};
use crate::index::IndexTree;
use crate::xml::ElementTree;

/// One schedulable unit: a tree-path segment, or a whole flat stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub id: usize,
    pub buckets: Vec<Bucket>,
    /// Where the layout preamble goes when this unit opens a channel.
    pub preamble_at: usize,
}

/// Strategy output consumed by the scheduler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub strategy: String,
    pub units: Vec<Unit>,
    /// Buckets repeated once per non-empty channel, ahead of its first unit's
    /// data region.
    pub preamble: Vec<Bucket>,
}

impl From<Fragmentation> for Layout {
    fn from(f: Fragmentation) -> Self {
        let units = f
            .segments
            .into_iter()
            .map(|s| {
                let preamble_at = s.hi.len() + s.li.len();
                let mut buckets = s.hi;
                buckets.extend(s.li);
                buckets.extend(s.hd);
                buckets.extend(s.ld);
                Unit {
                    id: s.id,
                    buckets,
                    preamble_at,
                }
            })
            .collect();
        Layout {
            strategy: TreePath::NAME.to_string(),
            units,
            preamble: f.preamble,
        }
    }
}

impl From<FlatLayout> for Layout {
    fn from(f: FlatLayout) -> Self {
        Layout {
            strategy: Flat::NAME.to_string(),
            units: vec![Unit {
                id: 1,
                buckets: f.buckets,
                preamble_at: 0,
            }],
            preamble: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StrategyError {
    #[error("unknown strategy {0:?} (known: {1})")]
    Unknown(String, String),
    #[error(transparent)]
    Fragment(#[from] FragmentError),
}

/// Knobs a strategy may read when it is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyParams {
    /// Replication level for tree-path layouts.
    pub level: usize,
    /// Index copies per cycle for flat layouts.
    pub copies: usize,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            level: 0,
            copies: 1,
        }
    }
}

pub trait BroadcastStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn layout(
        &self,
        tree: &ElementTree,
        index: &IndexTree,
        sizes: BucketSizes,
    ) -> Result<Layout, FragmentError>;
}

/// Replicated upper index and root paths ahead of each level-`h` subtree.
#[derive(Debug, Clone, Copy)]
pub struct TreePath {
    pub level: usize,
}

impl TreePath {
    pub const NAME: &'static str = "tp";
}

impl BroadcastStrategy for TreePath {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn layout(
        &self,
        tree: &ElementTree,
        index: &IndexTree,
        sizes: BucketSizes,
    ) -> Result<Layout, FragmentError> {
        fragment_tp(tree, index, self.level, sizes).map(Layout::from)
    }
}

/// Full index broadcast `copies` times per cycle.
#[derive(Debug, Clone, Copy)]
pub struct Flat {
    pub copies: usize,
}

impl Flat {
    pub const NAME: &'static str = "onex";
}

impl BroadcastStrategy for Flat {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn layout(
        &self,
        tree: &ElementTree,
        index: &IndexTree,
        sizes: BucketSizes,
    ) -> Result<Layout, FragmentError> {
        fragment_1x(tree, index, self.copies, sizes).map(Layout::from)
    }
}

pub type StrategyFactory = fn(&StrategyParams) -> Box<dyn BroadcastStrategy>;

#[derive(Default)]
pub struct StrategyRegistry {
    factories: BTreeMap<&'static str, StrategyFactory>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register(TreePath::NAME, |p| Box::new(TreePath { level: p.level }));
        reg.register(Flat::NAME, |p| Box::new(Flat { copies: p.copies }));
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(
        &self,
        name: &str,
        params: &StrategyParams,
    ) -> Result<Box<dyn BroadcastStrategy>, StrategyError> {
        let factory = self.factories.get(name).ok_or_else(|| {
            StrategyError::Unknown(
                name.to_string(),
                self.names().collect::<Vec<_>>().join(", "),
            )
        })?;
        Ok(factory(params))
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::xml::{generate_full_tree, Alphabetic};

    #[test]
    fn builtins_are_registered() {
        let reg = StrategyRegistry::with_builtins();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["onex", "tp"]);
        let tp = reg
            .create(
                "tp",
                &StrategyParams {
                    level: 2,
                    copies: 1,
                },
            )
            .unwrap();
        assert_eq!(tp.name(), "tp");
        assert!(matches!(
            reg.create("pp", &StrategyParams::default()),
            Err(StrategyError::Unknown(..))
        ));
    }

    #[test]
    fn tree_path_layout_places_preamble_before_data() {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        let idx = build_index(&t);
        let layout = TreePath { level: 2 }
            .layout(&t, &idx, BucketSizes::unit())
            .unwrap();
        assert_eq!(layout.units.len(), 9);
        assert_eq!(layout.units[0].preamble_at, 8);
        assert_eq!(layout.preamble.len(), 1);
        assert_eq!(layout.strategy, "tp");
    }
}
