//! Channel assignment, link resolution and the text stream dump.
//!
//! All channels share one slot clock. Each channel repeats its own cycle of
//! length `L` starting at its phase `p`: the bucket at offset `o` is on air
//! during slots `p + o + jL .. p + o + jL + size` for every integer `j`.
//! Round-robin staggers the phases so that unit `u` of a `C`-channel plan
//! airs about when it would in a single-channel stream sped up `C` times;
//! consecutive units sit on different channels, so without the stagger a
//! client stepping from one unit's index to the next would wait out a whole
//! channel cycle.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::fragment::{Bucket, BucketKind, Part};
use crate::index::IndexTree;
use crate::strategy::Layout;
use crate::xml::NodeId;

pub const MAX_SERVER_CHANNELS: usize = 11;
pub const MAX_CLIENT_CHANNELS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("server channel count must be in 1..={MAX_SERVER_CHANNELS}, got {0}")]
    ServerChannels(usize),
    #[error("client channel count must be in 1..={MAX_CLIENT_CHANNELS}, got {0}")]
    ClientChannels(usize),
    #[error("layout has no units to schedule")]
    EmptyLayout,
    #[error("{kind} bucket of node {node} is referenced but never broadcast")]
    Unplaced { kind: &'static str, node: NodeId },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("dump line {line}: {message}")]
pub struct DumpError {
    pub line: usize,
    pub message: String,
}

/// A bucket position: channel and slot offset within that channel's cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address {
    pub channel: usize,
    pub offset: u64,
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.channel, self.offset)
    }
}

impl FromStr for Address {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (c, o) = s
            .split_once(':')
            .ok_or_else(|| format!("bad address {s:?}"))?;
        Ok(Address {
            channel: c.parse().map_err(|_| format!("bad channel in {s:?}"))?,
            offset: o.parse().map_err(|_| format!("bad offset in {s:?}"))?,
        })
    }
}

/// Resolved links of a scheduled index bucket. Data buckets carry none.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Links {
    pub data: Option<Address>,
    pub child: Option<Address>,
    pub sibling: Option<Address>,
    pub homolog: Option<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledBucket {
    pub offset: u64,
    pub bucket: Bucket,
    pub links: Links,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSchedule {
    pub channel_id: usize,
    pub buckets: Vec<ScheduledBucket>,
    pub cycle_length: u64,
    /// Slot at which offset 0 airs (modulo the cycle).
    pub phase: u64,
    pub segment_ids: Vec<usize>,
}

impl ChannelSchedule {
    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Cycle offset on air during absolute `slot`.
    pub fn position(&self, slot: u64) -> u64 {
        let l = self.cycle_length;
        (slot % l + l - self.phase % l) % l
    }

    /// First absolute slot at or after `from` at which `offset` starts.
    pub fn next_start(&self, offset: u64, from: u64) -> u64 {
        let r = self.position(from);
        if offset >= r {
            from + (offset - r)
        } else {
            from + (self.cycle_length - r) + offset
        }
    }

    /// The bucket starting exactly at `offset`.
    pub fn bucket_at(&self, offset: u64) -> Option<&ScheduledBucket> {
        self.buckets
            .binary_search_by_key(&offset, |b| b.offset)
            .ok()
            .map(|i| &self.buckets[i])
    }

    /// The bucket on air during `slot` (any absolute slot).
    pub fn bucket_covering(&self, slot: u64) -> Option<&ScheduledBucket> {
        if self.cycle_length == 0 {
            return None;
        }
        let r = self.position(slot);
        let i = self.buckets.partition_point(|b| b.offset <= r);
        self.buckets.get(i.checked_sub(1)?)
    }

    /// Size sum over buckets of `part`.
    pub fn part_size(&self, part: Part) -> u64 {
        self.buckets
            .iter()
            .filter(|b| b.bucket.part == part)
            .map(|b| b.bucket.size)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastPlan {
    pub strategy: String,
    pub channels: Vec<ChannelSchedule>,
    pub client_channel_limit: usize,
}

impl BroadcastPlan {
    pub fn server_channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, id: usize) -> &ChannelSchedule {
        &self.channels[id]
    }

    /// Least common multiple of the non-empty channels' cycle lengths: the
    /// period after which the whole plan repeats.
    pub fn global_cycle(&self) -> u64 {
        self.channels
            .iter()
            .filter(|c| c.cycle_length > 0)
            .fold(1u64, |acc, c| lcm(acc, c.cycle_length))
    }

    pub fn bucket_count(&self) -> usize {
        self.channels.iter().map(|c| c.buckets.len()).sum()
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Deals units to channels round-robin: channel `i` gets units `i+1`,
/// `i+1+C`, … in that order. Links are left unresolved.
pub fn assign_round_robin(
    layout: &Layout,
    server_channels: usize,
    client_channels: usize,
) -> Result<BroadcastPlan, ScheduleError> {
    if !(1..=MAX_SERVER_CHANNELS).contains(&server_channels) {
        return Err(ScheduleError::ServerChannels(server_channels));
    }
    if !(1..=MAX_CLIENT_CHANNELS).contains(&client_channels) {
        return Err(ScheduleError::ClientChannels(client_channels));
    }
    if layout.units.is_empty() {
        return Err(ScheduleError::EmptyLayout);
    }
    if server_channels > layout.units.len() {
        warn!(
            "{server_channels} channels for {} units; {} channels stay empty",
            layout.units.len(),
            server_channels - layout.units.len()
        );
    }

    let mut channels = Vec::with_capacity(server_channels);
    let mut lead = 0u64;
    for channel_id in 0..server_channels {
        let phase = lead / server_channels as u64;
        if let Some(unit) = layout.units.get(channel_id) {
            lead += unit.buckets.iter().map(|b| b.size).sum::<u64>();
        }
        let mut buckets: Vec<Bucket> = Vec::new();
        let mut segment_ids = Vec::new();
        for unit in layout
            .units
            .iter()
            .skip(channel_id)
            .step_by(server_channels)
        {
            if segment_ids.is_empty() {
                buckets.extend_from_slice(&unit.buckets[..unit.preamble_at]);
                buckets.extend(layout.preamble.iter().map(|b| Bucket {
                    segment: unit.id,
                    ..b.clone()
                }));
                buckets.extend_from_slice(&unit.buckets[unit.preamble_at..]);
            } else {
                buckets.extend_from_slice(&unit.buckets);
            }
            segment_ids.push(unit.id);
        }
        let mut offset = 0u64;
        let buckets: Vec<_> = buckets
            .into_iter()
            .map(|bucket| {
                let sb = ScheduledBucket {
                    offset,
                    links: Links::default(),
                    bucket,
                };
                offset += sb.bucket.size;
                sb
            })
            .collect();
        channels.push(ChannelSchedule {
            channel_id,
            buckets,
            cycle_length: offset,
            phase: if offset == 0 { 0 } else { phase % offset },
            segment_ids,
        });
    }
    Ok(BroadcastPlan {
        strategy: layout.strategy.clone(),
        channels,
        client_channel_limit: client_channels,
    })
}

/// Where every copy of every bucket sits, for nearest-occurrence lookups.
#[derive(Debug, Clone)]
pub struct Occurrences {
    channels: Vec<(u64, u64)>,
    /// Per node: `(channel, sorted offsets)` groups in channel order.
    index: Vec<Vec<(usize, Vec<u64>)>>,
    data: Vec<Vec<(usize, Vec<u64>)>>,
}

impl Occurrences {
    pub fn new(plan: &BroadcastPlan) -> Self {
        let nodes = plan
            .channels
            .iter()
            .flat_map(|c| c.buckets.iter().map(|b| b.bucket.node.0 + 1))
            .max()
            .unwrap_or(0);
        let mut index: Vec<Vec<(usize, Vec<u64>)>> = vec![Vec::new(); nodes];
        let mut data: Vec<Vec<(usize, Vec<u64>)>> = vec![Vec::new(); nodes];
        for ch in &plan.channels {
            for b in &ch.buckets {
                let table = match b.bucket.kind {
                    BucketKind::Index => &mut index,
                    BucketKind::Data => &mut data,
                };
                let groups = &mut table[b.bucket.node.0];
                match groups.last_mut() {
                    Some((c, offs)) if *c == ch.channel_id => offs.push(b.offset),
                    _ => groups.push((ch.channel_id, vec![b.offset])),
                }
            }
        }
        Self {
            channels: plan
                .channels
                .iter()
                .map(|c| (c.cycle_length, c.phase))
                .collect(),
            index,
            data,
        }
    }

    fn groups(&self, kind: BucketKind, node: NodeId) -> &[(usize, Vec<u64>)] {
        let table = match kind {
            BucketKind::Index => &self.index,
            BucketKind::Data => &self.data,
        };
        table.get(node.0).map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, kind: BucketKind, node: NodeId) -> usize {
        self.groups(kind, node).iter().map(|(_, o)| o.len()).sum()
    }

    /// Earliest start slot `t ≥ from` of a copy of `(kind, node)` on a channel
    /// accepted by `allow`. Ties go to the lowest channel id.
    pub fn nearest_where(
        &self,
        kind: BucketKind,
        node: NodeId,
        from: u64,
        allow: impl Fn(usize) -> bool,
    ) -> Option<(Address, u64)> {
        let mut best: Option<(Address, u64)> = None;
        for (channel, offsets) in self.groups(kind, node) {
            if !allow(*channel) {
                continue;
            }
            let (cycle, phase) = self.channels[*channel];
            let r = (from % cycle + cycle - phase % cycle) % cycle;
            let i = offsets.partition_point(|&o| o < r);
            let (offset, t) = match offsets.get(i) {
                Some(&o) => (o, from + (o - r)),
                None => (offsets[0], from + (cycle - r) + offsets[0]),
            };
            if best.is_none_or(|(_, bt)| t < bt) {
                best = Some((
                    Address {
                        channel: *channel,
                        offset,
                    },
                    t,
                ));
            }
        }
        best
    }

    pub fn nearest(&self, kind: BucketKind, node: NodeId, from: u64) -> Option<(Address, u64)> {
        self.nearest_where(kind, node, from, |_| true)
    }
}

/// First slot at or after `from` at which `addr` starts.
pub fn arrival(plan: &BroadcastPlan, addr: Address, from: u64) -> u64 {
    plan.channels[addr.channel].next_start(addr.offset, from)
}

/// Points every index bucket's links at the nearest future copy of its
/// target, measured from the end of the bucket's first broadcast.
///
/// Homolog links are only set for index nodes broadcast more than once.
pub fn resolve_links(
    mut plan: BroadcastPlan,
    index: &IndexTree,
) -> Result<BroadcastPlan, ScheduleError> {
    let occ = Occurrences::new(&plan);
    let resolve = |kind: BucketKind, node: NodeId, from: u64| {
        occ.nearest(kind, node, from)
            .map(|(a, _)| a)
            .ok_or(ScheduleError::Unplaced {
                kind: kind.as_str(),
                node,
            })
    };
    plan.channels
        .par_iter_mut()
        .try_for_each(|ch| -> Result<(), ScheduleError> {
            for sb in ch.buckets.iter_mut() {
                if sb.bucket.kind != BucketKind::Index {
                    sb.links = Links::default();
                    continue;
                }
                let from = ch.phase + sb.offset + sb.bucket.size;
                let entry = index.node(sb.bucket.node);
                sb.links = Links {
                    data: Some(resolve(BucketKind::Data, entry.data, from)?),
                    child: entry
                        .first_child
                        .map(|c| resolve(BucketKind::Index, c, from))
                        .transpose()?,
                    sibling: entry
                        .next_sibling
                        .map(|s| resolve(BucketKind::Index, s, from))
                        .transpose()?,
                    homolog: if occ.count(BucketKind::Index, sb.bucket.node) > 1 {
                        Some(resolve(BucketKind::Index, sb.bucket.node, from)?)
                    } else {
                        None
                    },
                };
            }
            Ok(())
        })?;
    Ok(plan)
}

/// Assign and resolve in one step.
pub fn schedule(
    layout: &Layout,
    index: &IndexTree,
    server_channels: usize,
    client_channels: usize,
) -> Result<BroadcastPlan, ScheduleError> {
    resolve_links(
        assign_round_robin(layout, server_channels, client_channels)?,
        index,
    )
}

fn fmt_addr(a: Option<Address>) -> String {
    a.map_or_else(|| "-".to_string(), |a| a.to_string())
}

fn plan_header(plan: &BroadcastPlan) -> String {
    format!(
        "# plan strategy={} server_channels={} client_channels={}\n",
        plan.strategy,
        plan.server_channel_count(),
        plan.client_channel_limit
    )
}

fn channel_section(ch: &ChannelSchedule, out: &mut String) {
    let ids: Vec<String> = ch.segment_ids.iter().map(ToString::to_string).collect();
    let _ = writeln!(
        out,
        "# channel={} cycle={} phase={} segments={}",
        ch.channel_id,
        ch.cycle_length,
        ch.phase,
        ids.join(",")
    );
    for sb in &ch.buckets {
        out.push_str(&bucket_line(ch.channel_id, sb));
        out.push('\n');
    }
}

/// One dump line. The leading fields are
/// `chan off kind level label d c s h`; `size part seg seq node` follow so a
/// dump can be read back losslessly.
pub fn bucket_line(channel: usize, sb: &ScheduledBucket) -> String {
    let b = &sb.bucket;
    format!(
        "chan={} off={} kind={} level={} label={} d={} c={} s={} h={} size={} part={} seg={} seq={} node={}",
        channel,
        sb.offset,
        b.kind.as_str(),
        b.level,
        b.label,
        fmt_addr(sb.links.data),
        fmt_addr(sb.links.child),
        fmt_addr(sb.links.sibling),
        fmt_addr(sb.links.homolog),
        b.size,
        b.part,
        b.segment,
        b.seq,
        b.node,
    )
}

/// The whole plan: a plan header, then one section per channel.
pub fn dump_stream(plan: &BroadcastPlan) -> String {
    let mut out = plan_header(plan);
    for ch in &plan.channels {
        channel_section(ch, &mut out);
    }
    out
}

/// A single channel's section, preceded by the plan header.
pub fn dump_channel(plan: &BroadcastPlan, channel: usize) -> String {
    let mut out = plan_header(plan);
    channel_section(&plan.channels[channel], &mut out);
    out
}

fn fields<'a>(line: &'a str, keys: &[&str], lineno: usize) -> Result<Vec<&'a str>, DumpError> {
    let err = |message: String| DumpError {
        line: lineno,
        message,
    };
    let tokens: Vec<&str> = line.split(' ').collect();
    if tokens.len() != keys.len() {
        return Err(err(format!(
            "expected {} fields, found {}",
            keys.len(),
            tokens.len()
        )));
    }
    tokens
        .iter()
        .zip(keys)
        .map(|(tok, key)| {
            tok.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .ok_or_else(|| err(format!("expected field {key}, found {tok:?}")))
        })
        .collect()
}

fn num<T: FromStr>(s: &str, what: &str, line: usize) -> Result<T, DumpError> {
    s.parse().map_err(|_| DumpError {
        line,
        message: format!("bad {what} {s:?}"),
    })
}

fn opt_addr(s: &str, line: usize) -> Result<Option<Address>, DumpError> {
    if s == "-" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|message| DumpError { line, message })
}

/// Reads back the output of [`dump_stream`].
pub fn parse_dump(text: &str) -> Result<BroadcastPlan, DumpError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, header) = lines.next().ok_or(DumpError {
        line: 1,
        message: "empty dump".into(),
    })?;
    let header = header.strip_prefix("# plan ").ok_or_else(|| DumpError {
        line: n,
        message: "missing plan header".into(),
    })?;
    let h = fields(
        header,
        &["strategy", "server_channels", "client_channels"],
        n,
    )?;
    let strategy = h[0].to_string();
    let server: usize = num(h[1], "server channel count", n)?;
    let client_channel_limit: usize = num(h[2], "client channel count", n)?;

    let mut channels: Vec<ChannelSchedule> = Vec::with_capacity(server);
    for (n, line) in lines {
        if let Some(rest) = line.strip_prefix("# ") {
            let f = fields(rest, &["channel", "cycle", "phase", "segments"], n)?;
            let segment_ids = if f[3].is_empty() {
                Vec::new()
            } else {
                f[3].split(',')
                    .map(|s| num(s, "segment id", n))
                    .collect::<Result<_, _>>()?
            };
            channels.push(ChannelSchedule {
                channel_id: num(f[0], "channel", n)?,
                buckets: Vec::new(),
                cycle_length: num(f[1], "cycle length", n)?,
                phase: num(f[2], "phase", n)?,
                segment_ids,
            });
            continue;
        }
        let f = fields(
            line,
            &[
                "chan", "off", "kind", "level", "label", "d", "c", "s", "h", "size", "part", "seg",
                "seq", "node",
            ],
            n,
        )?;
        let bad = |message: String| DumpError { line: n, message };
        let ch = channels
            .last_mut()
            .ok_or_else(|| bad("bucket line before any channel header".into()))?;
        if num::<usize>(f[0], "channel", n)? != ch.channel_id {
            return Err(bad("bucket line under the wrong channel header".into()));
        }
        ch.buckets.push(ScheduledBucket {
            offset: num(f[1], "offset", n)?,
            bucket: Bucket {
                kind: f[2].parse().map_err(bad)?,
                level: num(f[3], "level", n)?,
                label: Arc::from(f[4]),
                size: num(f[9], "size", n)?,
                part: f[10].parse().map_err(bad)?,
                segment: num(f[11], "segment", n)?,
                seq: num(f[12], "seq", n)?,
                node: NodeId(num(f[13], "node", n)?),
            },
            links: Links {
                data: opt_addr(f[5], n)?,
                child: opt_addr(f[6], n)?,
                sibling: opt_addr(f[7], n)?,
                homolog: opt_addr(f[8], n)?,
            },
        });
    }
    if channels.len() != server {
        return Err(DumpError {
            line: 1,
            message: format!(
                "header announces {server} channels, found {}",
                channels.len()
            ),
        });
    }
    Ok(BroadcastPlan {
        strategy,
        channels,
        client_channel_limit,
    })
}
