//! Bucket-level replay of a mobile client retrieving one path query.
//!
//! A run goes through four phases:
//!
//! 1. probe: read the slot on air on the home channel at tune-in; every
//!    bucket carries the offset of the next index root on its channel,
//! 2. doze until that root, then walk the index by child and sibling links,
//!    reading each visited index bucket and retuning when a link points to
//!    another channel,
//! 3. doze until the target's data link,
//! 4. read the data bucket.
//!
//! Access time counts slots from tune-in until the data bucket has been
//! received. Tuning time counts slots the radio is actively reading; dozing is
//! free.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fragment::BucketKind;
use crate::index::{QueryError, QueryPath};
use crate::schedule::{arrival, Address, BroadcastPlan, Occurrences};
use crate::xml::{ElementTree, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("home channel {0} does not exist or carries no index root")]
    NoRoot(usize),
    #[error("no queries to simulate")]
    NoQueries,
    #[error("global cycle of {0} slots is too long for exhaustive simulation")]
    CycleTooLong(u64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientConfig {
    pub home_channel: usize,
    /// Radios the client can keep tuned at once; defaults to the plan's limit.
    pub channel_limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadKind {
    Probe,
    Index,
    Data,
}

impl ReadKind {
    fn as_str(self) -> &'static str {
        match self {
            ReadKind::Probe => "PROBE",
            ReadKind::Index => "INDEX",
            ReadKind::Data => "DATA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadEvent {
    /// Absolute slot at which the read starts.
    pub slot: u64,
    pub channel: usize,
    pub offset: u64,
    pub kind: ReadKind,
    pub label: String,
    pub slots: u64,
}

impl fmt::Display for ReadEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "slot={} chan={} off={} kind={} label={} read={}",
            self.slot,
            self.channel,
            self.offset,
            self.kind.as_str(),
            self.label,
            self.slots
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRun {
    pub query: QueryPath,
    pub tune_in: u64,
    pub channels_used: BTreeSet<usize>,
    pub access_time: u64,
    pub tuning_time: u64,
    /// Index nodes read, in order.
    pub visited: Vec<NodeId>,
    pub trace: Vec<ReadEvent>,
}

/// What happens after the client reaches an index root at a given slot.
#[derive(Debug, Clone)]
struct Walk {
    completion: u64,
    tuning: u64,
    channels: BTreeSet<usize>,
    visited: Vec<NodeId>,
    trace: Vec<ReadEvent>,
}

pub struct Simulator<'a> {
    plan: &'a BroadcastPlan,
    occ: Occurrences,
    home: usize,
    limit: usize,
    roots: Vec<u64>,
}

impl<'a> Simulator<'a> {
    pub fn new(plan: &'a BroadcastPlan, config: ClientConfig) -> Result<Self, SimError> {
        let home = config.home_channel;
        let ch = plan.channels.get(home).ok_or(SimError::NoRoot(home))?;
        let roots: Vec<u64> = ch
            .buckets
            .iter()
            .filter(|b| b.bucket.kind == BucketKind::Index && b.bucket.level == 0)
            .map(|b| b.offset)
            .collect();
        if roots.is_empty() {
            return Err(SimError::NoRoot(home));
        }
        Ok(Self {
            plan,
            occ: Occurrences::new(plan),
            home,
            limit: config
                .channel_limit
                .unwrap_or(plan.client_channel_limit)
                .max(1),
            roots,
        })
    }

    pub fn plan(&self) -> &BroadcastPlan {
        self.plan
    }

    /// First index-root start on the home channel at or after `from`.
    fn next_root(&self, from: u64) -> u64 {
        let ch = &self.plan.channels[self.home];
        let r = ch.position(from);
        let i = self.roots.partition_point(|&o| o < r);
        match self.roots.get(i) {
            Some(&o) => from + (o - r),
            None => from + (ch.cycle_length - r) + self.roots[0],
        }
    }

    pub fn simulate_query(&self, query: &QueryPath, tune_in: u64) -> Result<ClientRun, SimError> {
        let home = &self.plan.channels[self.home];
        let probed = home
            .bucket_covering(tune_in)
            .expect("home channel is non-empty");
        let root_at = self.next_root(tune_in + 1);
        let mut walk = self.walk(query, root_at, true)?;
        walk.trace.insert(
            0,
            ReadEvent {
                slot: tune_in,
                channel: self.home,
                offset: home.position(tune_in),
                kind: ReadKind::Probe,
                label: probed.bucket.label.to_string(),
                slots: 1,
            },
        );
        Ok(ClientRun {
            query: query.clone(),
            tune_in,
            channels_used: walk.channels,
            access_time: walk.completion - tune_in,
            tuning_time: 1 + walk.tuning,
            visited: walk.visited,
            trace: walk.trace,
        })
    }

    fn walk(&self, query: &QueryPath, root_at: u64, record: bool) -> Result<Walk, SimError> {
        let steps = query.steps();
        let not_found = |depth: usize| {
            SimError::Query(QueryError::NotFound {
                query: query.clone(),
                matched: steps[..depth].to_vec(),
            })
        };
        // Most recently used channel last.
        let mut tuned: Vec<usize> = vec![self.home];
        let mut channels = BTreeSet::from([self.home]);
        let mut visited = Vec::new();
        let mut trace = Vec::new();
        let mut tuning = 0u64;

        let mut at = Address {
            channel: self.home,
            offset: self.plan.channels[self.home].position(root_at),
        };
        let mut start = root_at;
        let mut depth = 0usize;
        loop {
            let ch = &self.plan.channels[at.channel];
            let sb = ch
                .bucket_at(at.offset)
                .expect("links point at bucket starts");
            let b = &sb.bucket;
            tuning += b.size;
            let now = start + b.size;
            if record {
                trace.push(ReadEvent {
                    slot: start,
                    channel: at.channel,
                    offset: at.offset,
                    kind: match b.kind {
                        BucketKind::Index => ReadKind::Index,
                        BucketKind::Data => ReadKind::Data,
                    },
                    label: b.label.to_string(),
                    slots: b.size,
                });
            }
            if b.kind == BucketKind::Data {
                return Ok(Walk {
                    completion: now,
                    tuning,
                    channels,
                    visited,
                    trace,
                });
            }
            visited.push(b.node);
            let next = if *b.label == *steps[depth] {
                depth += 1;
                if depth == steps.len() {
                    sb.links.data
                } else {
                    sb.links.child
                }
            } else {
                sb.links.sibling
            };
            let next = next.ok_or_else(|| not_found(depth))?;
            let (addr, t) = self.hop(next, now, &mut tuned);
            channels.insert(addr.channel);
            at = addr;
            start = t;
        }
    }

    /// Follows a link under the radio limit: a link onto an untuned channel
    /// with every radio busy falls back to the target's next copy on a tuned
    /// channel, and retunes the least recently used radio only when no tuned
    /// channel carries the target.
    fn hop(&self, link: Address, now: u64, tuned: &mut Vec<usize>) -> (Address, u64) {
        let touch = |tuned: &mut Vec<usize>, c: usize| {
            tuned.retain(|&x| x != c);
            tuned.push(c);
        };
        if tuned.contains(&link.channel) || tuned.len() < self.limit {
            touch(tuned, link.channel);
            return (link, arrival(self.plan, link, now));
        }
        let target = &self.plan.channels[link.channel]
            .bucket_at(link.offset)
            .expect("links point at bucket starts")
            .bucket;
        let snapshot = tuned.clone();
        if let Some((addr, t)) = self
            .occ
            .nearest_where(target.kind, target.node, now, |c| snapshot.contains(&c))
        {
            touch(tuned, addr.channel);
            return (addr, t);
        }
        tuned.remove(0);
        tuned.push(link.channel);
        (link, arrival(self.plan, link, now))
    }
}

/// Accumulated run statistics. Sums are exact; means are derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metrics {
    pub runs: u64,
    pub access_sum: u128,
    pub access_sq_sum: u128,
    pub tuning_sum: u128,
}

impl Metrics {
    fn add(&mut self, access: u64, tuning: u64, count: u64) {
        self.runs += count;
        self.access_sum += access as u128 * count as u128;
        self.access_sq_sum += (access as u128).pow(2) * count as u128;
        self.tuning_sum += tuning as u128 * count as u128;
    }

    fn merge(mut self, other: Metrics) -> Metrics {
        self.runs += other.runs;
        self.access_sum += other.access_sum;
        self.access_sq_sum += other.access_sq_sum;
        self.tuning_sum += other.tuning_sum;
        self
    }

    pub fn mean_access(&self) -> f64 {
        self.access_sum as f64 / self.runs as f64
    }

    pub fn mean_tuning(&self) -> f64 {
        self.tuning_sum as f64 / self.runs as f64
    }

    /// Standard error of the mean access time.
    pub fn access_std_error(&self) -> f64 {
        let n = self.runs as f64;
        let mean = self.mean_access();
        let var = (self.access_sq_sum as f64 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimMode {
    /// Every tune-in slot of one global cycle, for every query.
    Exhaustive,
    /// `samples` seeded draws of (tune-in slot, query).
    MonteCarlo { samples: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryDistribution {
    UniformLeaf,
    Fixed(QueryPath),
}

impl QueryDistribution {
    pub fn queries(&self, tree: &ElementTree) -> Vec<QueryPath> {
        match self {
            QueryDistribution::UniformLeaf => leaf_queries(tree),
            QueryDistribution::Fixed(q) => vec![q.clone()],
        }
    }
}

pub fn leaf_queries(tree: &ElementTree) -> Vec<QueryPath> {
    tree.leaves()
        .map(|id| QueryPath::of_node(tree, id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub mode: SimMode,
    pub seed: u64,
    pub client: ClientConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: SimMode::Exhaustive,
            seed: 0,
            client: ClientConfig::default(),
        }
    }
}

/// Longest global cycle exhaustive mode will enumerate.
pub const MAX_EXHAUSTIVE_CYCLE: u64 = 1 << 32;

pub fn average_metrics(
    plan: &BroadcastPlan,
    queries: &[QueryPath],
    config: &SimConfig,
) -> Result<Metrics, SimError> {
    if queries.is_empty() {
        return Err(SimError::NoQueries);
    }
    let sim = Simulator::new(plan, config.client)?;
    let cycle = plan.global_cycle();
    match config.mode {
        SimMode::Exhaustive => {
            if cycle > MAX_EXHAUSTIVE_CYCLE {
                return Err(SimError::CycleTooLong(cycle));
            }
            queries
                .par_iter()
                .map(|q| exhaustive_one(&sim, q, cycle))
                .try_reduce(Metrics::default, |a, b| Ok(a.merge(b)))
        }
        SimMode::MonteCarlo { samples } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut m = Metrics::default();
            for _ in 0..samples {
                let t = rng.gen_range(0..cycle);
                let q = &queries[rng.gen_range(0..queries.len())];
                let run = sim.simulate_query(q, t)?;
                m.add(run.access_time, run.tuning_time, 1);
            }
            Ok(m)
        }
    }
}

/// All tune-ins in `[0, cycle)` for one query. Tune-ins that reach the same
/// index root share everything after the probe, so each root is walked once.
fn exhaustive_one(sim: &Simulator<'_>, query: &QueryPath, cycle: u64) -> Result<Metrics, SimError> {
    let mut m = Metrics::default();
    let mut t = 0u64;
    while t < cycle {
        let root = sim.next_root(t + 1);
        let walk = sim.walk(query, root, false)?;
        let last = (root - 1).min(cycle - 1);
        for tune_in in t..=last {
            m.add(walk.completion - tune_in, 1 + walk.tuning, 1);
        }
        t = last + 1;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragment::BucketSizes;
    use crate::index::build_index;
    use crate::schedule::schedule;
    use crate::strategy::{BroadcastStrategy, TreePath};
    use crate::xml::{generate_full_tree, parse_xml, Alphabetic};

    fn fig1_plan(channels: usize) -> (ElementTree, BroadcastPlan) {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        let idx = build_index(&t);
        let layout = TreePath { level: 2 }
            .layout(&t, &idx, BucketSizes::unit())
            .unwrap();
        let plan = schedule(&layout, &idx, channels, 3).unwrap();
        (t, plan)
    }

    #[test]
    fn single_channel_golden_trace() {
        let (_, plan) = fig1_plan(1);
        let sim = Simulator::new(&plan, ClientConfig::default()).unwrap();
        let run = sim
            .simulate_query(&"Root/a2/b5/c14".parse().unwrap(), 0)
            .unwrap();
        // Segment 1 spans 15 slots (it carries the root data), the others 14.
        // Probe at 0, root of segment 2 at 15, a1 and a2 follow, b4 heads the
        // LI of segment 4 (slot 47), b5 that of segment 5 (61), then c13, c14,
        // and c14's data sits in segment 5's LD at 69.
        let slots: Vec<_> = run
            .trace
            .iter()
            .map(|e| (e.slot, e.label.as_str()))
            .collect();
        assert_eq!(
            slots,
            [
                (0, "Root"),
                (15, "Root"),
                (16, "a1"),
                (17, "a2"),
                (47, "b4"),
                (61, "b5"),
                (62, "c13"),
                (63, "c14"),
                (69, "c14"),
            ]
        );
        assert_eq!(run.access_time, 70);
        assert_eq!(run.tuning_time, 9);
        assert_eq!(run.channels_used, BTreeSet::from([0]));
    }

    #[test]
    fn root_query_without_waiting_for_the_index() {
        let t = parse_xml("<r><x/><y/></r>").unwrap();
        let idx = build_index(&t);
        let layout = TreePath { level: 0 }
            .layout(&t, &idx, BucketSizes::unit())
            .unwrap();
        let plan = schedule(&layout, &idx, 1, 1).unwrap();
        // stream: r x y | r x y (index then data), cycle 6
        let sim = Simulator::new(&plan, ClientConfig::default()).unwrap();
        let run = sim.simulate_query(&"r".parse().unwrap(), 5).unwrap();
        // probe slot 5, root index at 6, root data at 6 + 3
        assert_eq!(run.access_time, 10 - 5);
        assert_eq!(run.tuning_time, 1 + 1 + 1);
    }

    #[test]
    fn unresolvable_query() {
        let (_, plan) = fig1_plan(3);
        let sim = Simulator::new(&plan, ClientConfig::default()).unwrap();
        let err = sim
            .simulate_query(&"Root/a9".parse().unwrap(), 3)
            .unwrap_err();
        match err {
            SimError::Query(QueryError::NotFound { matched, .. }) => assert_eq!(matched, ["Root"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_home_channel_is_rejected() {
        let (_, plan) = fig1_plan(11);
        assert!(Simulator::new(&plan, ClientConfig::default()).is_ok());
        let cfg = ClientConfig {
            home_channel: 10,
            channel_limit: None,
        };
        assert!(matches!(
            Simulator::new(&plan, cfg),
            Err(SimError::NoRoot(10))
        ));
        let cfg = ClientConfig {
            home_channel: 12,
            channel_limit: None,
        };
        assert!(matches!(
            Simulator::new(&plan, cfg),
            Err(SimError::NoRoot(12))
        ));
    }

    #[test]
    fn exhaustive_matches_per_slot_enumeration() {
        for c in [1, 3, 4] {
            let (tree, plan) = fig1_plan(c);
            let queries = leaf_queries(&tree);
            let fast = average_metrics(&plan, &queries, &SimConfig::default()).unwrap();
            let sim = Simulator::new(&plan, ClientConfig::default()).unwrap();
            let mut slow = Metrics::default();
            for q in &queries {
                for t in 0..plan.global_cycle() {
                    let run = sim.simulate_query(q, t).unwrap();
                    slow.add(run.access_time, run.tuning_time, 1);
                }
            }
            assert_eq!(fast, slow, "C={c}");
        }
    }

    #[test]
    fn radio_limit_is_respected() {
        let t = generate_full_tree(3, 3, &Alphabetic).unwrap();
        let idx = build_index(&t);
        let layout = TreePath { level: 2 }
            .layout(&t, &idx, BucketSizes::unit())
            .unwrap();
        let plan = schedule(&layout, &idx, 9, 1).unwrap();
        let sim = Simulator::new(&plan, ClientConfig::default()).unwrap();
        for q in leaf_queries(&t) {
            for tune_in in (0..plan.global_cycle()).step_by(7) {
                let run = sim.simulate_query(&q, tune_in).unwrap();
                // one radio: consecutive reads never overlap in time
                for w in run.trace.windows(2) {
                    assert!(w[1].slot >= w[0].slot + w[0].slots);
                }
                assert!(run.tuning_time <= run.access_time);
            }
        }
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let (tree, plan) = fig1_plan(3);
        let queries = leaf_queries(&tree);
        let cfg = SimConfig {
            mode: SimMode::MonteCarlo { samples: 500 },
            seed: 7,
            ..SimConfig::default()
        };
        let a = average_metrics(&plan, &queries, &cfg).unwrap();
        let b = average_metrics(&plan, &queries, &cfg).unwrap();
        assert_eq!(a, b);
        let other = SimConfig { seed: 8, ..cfg };
        assert_ne!(a, average_metrics(&plan, &queries, &other).unwrap());
    }

    #[test]
    fn trace_lines() {
        let (_, plan) = fig1_plan(1);
        let sim = Simulator::new(&plan, ClientConfig::default()).unwrap();
        let run = sim.simulate_query(&"Root".parse().unwrap(), 0).unwrap();
        let lines: Vec<String> = run.trace.iter().map(ToString::to_string).collect();
        assert_eq!(lines[0], "slot=0 chan=0 off=0 kind=PROBE label=Root read=1");
        assert_eq!(
            lines[1],
            "slot=15 chan=0 off=15 kind=INDEX label=Root read=1"
        );
        assert!(lines[2].contains("kind=DATA label=Root"));
    }
}
