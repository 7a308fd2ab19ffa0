//! Multichannel wireless broadcast of XML data with a replicated path index.
//!
//! The pipeline is: parse or synthesize an element tree ([`xml`]), mirror it
//! as a path index ([`index`]), cut both into buckets with a layout strategy
//! ([`fragment`], [`strategy`]), deal the result onto broadcast channels and
//! resolve link addresses ([`schedule`]), then replay mobile clients against
//! the stream ([`sim`]). [`analytic`] evaluates the closed-form cost model the
//! simulation is compared against.

pub mod analytic;
pub mod fragment;
pub mod index;
pub mod schedule;
pub mod sim;
pub mod strategy;
pub mod xml;

pub use fragment::{Bucket, BucketKind, BucketSizes, Fragmentation, Part, Segment};
pub use index::{build_index, IndexTree, QueryPath};
pub use schedule::{Address, BroadcastPlan, ChannelSchedule};
pub use strategy::{BroadcastStrategy, Layout, StrategyRegistry};
pub use xml::{ElementTree, NodeId};
