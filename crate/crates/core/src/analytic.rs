//! Closed-form size and time model of the tree-path layout.
//!
//! With effective fanout `m` (`n` on one channel, `n/3` per channel when the
//! tree is spread over three), replication level `h`, `H` tree levels, index
//! bucket size `k` and data bucket size `w`, one segment holds
//!
//! ```text
//! HI = k·(m^h − 1)/(m − 1)        LI = k·(m^(H−h) − 1)/(m − 1)
//! HD = w·h                        LD = w·(m^(H−h) − 1)/(m − 1)
//! ```
//!
//! and a cycle holds `m^h` segments. Geometric sums with `m = 1` are taken
//! term by term (the sum of `a` ones is `a`).
//!
//! `H` here counts levels: a tree whose deepest node is at level `d` has
//! `H = d + 1`. [`AnalyticParams::for_tree`] does that conversion.

use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyticError {
    #[error("fanout must be at least 1")]
    ZeroFanout,
    #[error("replication level {h} exceeds tree levels {levels}")]
    LevelOutOfRange { h: u32, levels: u32 },
    #[error("three-channel model needs a fanout divisible by 3, got {0}")]
    FanoutNotDivisible(u64),
    #[error("bucket sizes must be positive")]
    ZeroSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelMode {
    Single,
    /// Three client channels; each carries fanout `n/3`.
    Multi3,
}

impl ChannelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::Single => "single",
            ChannelMode::Multi3 => "multi3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyticParams {
    pub fanout: u64,
    pub levels: u32,
    pub h: u32,
    pub k: u64,
    pub w: u64,
    /// Index copies of the flat `(1, x)` baseline; carried along for reports.
    pub x: u64,
    pub mode: ChannelMode,
}

impl AnalyticParams {
    pub fn new(fanout: u64, levels: u32, h: u32, k: u64, w: u64, mode: ChannelMode) -> Self {
        Self {
            fanout,
            levels,
            h,
            k,
            w,
            x: 1,
            mode,
        }
    }

    /// Parameters for a full tree whose deepest level is `height`.
    pub fn for_tree(fanout: u64, height: u32, h: u32, k: u64, w: u64, mode: ChannelMode) -> Self {
        Self::new(fanout, height + 1, h, k, w, mode)
    }

    pub fn with_mode(self, mode: ChannelMode) -> Self {
        Self { mode, ..self }
    }

    pub fn effective_fanout(&self) -> Result<u64, AnalyticError> {
        if self.fanout == 0 {
            return Err(AnalyticError::ZeroFanout);
        }
        if self.h > self.levels {
            return Err(AnalyticError::LevelOutOfRange {
                h: self.h,
                levels: self.levels,
            });
        }
        if self.k == 0 || self.w == 0 {
            return Err(AnalyticError::ZeroSize);
        }
        match self.mode {
            ChannelMode::Single => Ok(self.fanout),
            ChannelMode::Multi3 if self.fanout.is_multiple_of(3) => Ok(self.fanout / 3),
            ChannelMode::Multi3 => Err(AnalyticError::FanoutNotDivisible(self.fanout)),
        }
    }

    /// Shape `(fanout, height)` of the full tree whose single-channel stream
    /// has exactly the per-channel cycle these parameters describe.
    pub fn per_channel_tree(&self) -> Result<(u64, u32), AnalyticError> {
        Ok((self.effective_fanout()?, self.levels.saturating_sub(1)))
    }
}

/// `(m^a − 1)/(m − 1)`, or `a` when `m = 1`.
pub fn geometric(m: u64, a: u32) -> BigUint {
    if m == 1 {
        return BigUint::from(a);
    }
    let m = BigUint::from(m);
    (m.pow(a) - 1u32) / (m - 1u32)
}

fn pow(m: u64, e: u32) -> BigUint {
    BigUint::from(m).pow(e)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub params: AnalyticParams,
    /// Per-segment sizes.
    pub hi: BigUint,
    pub li: BigUint,
    pub hd: BigUint,
    pub ld: BigUint,
    pub segments: BigUint,
    pub index: BigUint,
    pub data: BigUint,
    pub avg_tuning: BigUint,
    pub avg_access: BigRational,
}

impl CostReport {
    pub fn segment_size(&self) -> BigUint {
        &self.hi + &self.li + &self.hd + &self.ld
    }
}

pub fn evaluate(p: &AnalyticParams) -> Result<CostReport, AnalyticError> {
    let m = p.effective_fanout()?;
    let below = p.levels - p.h;
    let hi = p.k * geometric(m, p.h);
    let li = p.k * geometric(m, below);
    let hd = BigUint::from(p.w) * p.h;
    let ld = p.w * geometric(m, below);
    let segments = pow(m, p.h);
    Ok(CostReport {
        params: *p,
        index: &segments * (&hi + &li),
        data: &segments * (&hd + &ld),
        avg_tuning: 1u32 + &hi + &li,
        avg_access: access_from_parts(&segments, &(&hi + &li + &hd + &ld)),
        hi,
        li,
        hd,
        ld,
        segments,
    })
}

fn access_from_parts(segments: &BigUint, segment: &BigUint) -> BigRational {
    // (segments/2 + 1)·segment
    BigRational::new(((segments + 2u32) * segment).into(), 2u32.into())
}

pub fn index_size_tp(p: &AnalyticParams) -> Result<BigUint, AnalyticError> {
    let m = p.effective_fanout()?;
    Ok(p.k * pow(m, p.h) * (geometric(m, p.h) + geometric(m, p.levels - p.h)))
}

pub fn avg_tuning_time_tp(p: &AnalyticParams) -> Result<BigUint, AnalyticError> {
    let m = p.effective_fanout()?;
    Ok(1u32 + p.k * (geometric(m, p.h) + geometric(m, p.levels - p.h)))
}

pub fn data_size_tp(p: &AnalyticParams) -> Result<BigUint, AnalyticError> {
    let m = p.effective_fanout()?;
    Ok(p.w * pow(m, p.h) * (BigUint::from(p.h) + geometric(m, p.levels - p.h)))
}

pub fn avg_access_time_tp(p: &AnalyticParams) -> Result<BigRational, AnalyticError> {
    let m = p.effective_fanout()?;
    let index = p.k * (geometric(m, p.h) + geometric(m, p.levels - p.h));
    let data = p.w * (BigUint::from(p.h) + geometric(m, p.levels - p.h));
    let half_segments = BigRational::new(pow(m, p.h).into(), 2u32.into());
    Ok((half_segments + BigRational::one()) * BigRational::from_integer((index + data).into()))
}

/// Exact decimal rendering: integers as-is, halves as `x.5`, anything else as
/// a fraction.
pub fn format_exact(v: &BigRational) -> String {
    if v.is_integer() {
        v.to_integer().to_string()
    } else if *v.denom() == 2.into() {
        format!("{}.5", v.floor().to_integer())
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

pub fn to_f64(v: &BigRational) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// The published operating point and the access times printed for it, which
/// the closed form does not reproduce under any exponent reading.
pub struct PublishedAccessTimes {
    pub fanout: u64,
    pub levels: u32,
    pub h: u32,
    pub k: u64,
    pub w: u64,
    pub single: &'static str,
    pub multi3: &'static str,
}

pub const PUBLISHED_ACCESS_TIMES: PublishedAccessTimes = PublishedAccessTimes {
    fanout: 6,
    levels: 7,
    h: 4,
    k: 3,
    w: 30,
    single: "107823e9",
    multi3: "80784",
};

impl fmt::Display for PublishedAccessTimes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "published access times at n={} H={} h={} k={} w={} (single {}, multichannel {}) \
             are inconsistent with the closed-form access-time model; reporting closed-form values",
            self.fanout, self.levels, self.h, self.k, self.w, self.single, self.multi3
        )
    }
}

impl PublishedAccessTimes {
    pub fn matches(&self, p: &AnalyticParams) -> bool {
        (p.fanout, p.levels, p.h, p.k, p.w) == (self.fanout, self.levels, self.h, self.k, self.w)
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} index={} data={} avg_tt={} avg_at={}",
            self.params.mode.as_str(),
            self.index,
            self.data,
            self.avg_tuning,
            format_exact(&self.avg_access)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn published_point(mode: ChannelMode) -> AnalyticParams {
        AnalyticParams::new(6, 7, 4, 3, 30, mode)
    }

    #[test]
    fn published_index_tuning_data() {
        let multi = published_point(ChannelMode::Multi3);
        let single = published_point(ChannelMode::Single);
        assert_eq!(index_size_tp(&multi).unwrap(), 1056u32.into());
        assert_eq!(index_size_tp(&single).unwrap(), 1174176u32.into());
        assert_eq!(avg_tuning_time_tp(&multi).unwrap(), 67u32.into());
        assert_eq!(avg_tuning_time_tp(&single).unwrap(), 907u32.into());
        assert_eq!(data_size_tp(&multi).unwrap(), 5280u32.into());
        assert_eq!(data_size_tp(&single).unwrap(), 1827360u32.into());
    }

    #[test]
    fn access_time_at_published_point() {
        let multi = avg_access_time_tp(&published_point(ChannelMode::Multi3)).unwrap();
        let single = avg_access_time_tp(&published_point(ChannelMode::Single)).unwrap();
        assert_eq!(format_exact(&multi), "3564");
        assert_eq!(format_exact(&single), "1503084");
    }

    #[test]
    fn ratio_one_fanout() {
        let p = AnalyticParams::new(3, 3, 2, 1, 1, ChannelMode::Multi3);
        assert_eq!(index_size_tp(&p).unwrap(), 3u32.into());
        assert_eq!(geometric(1, 5), 5u32.into());
        assert_eq!(geometric(2, 0), 0u32.into());
    }

    #[test]
    fn degenerate_tree() {
        let p = AnalyticParams::new(4, 0, 0, 5, 7, ChannelMode::Single);
        assert_eq!(avg_tuning_time_tp(&p).unwrap(), 1u32.into());
        assert_eq!(data_size_tp(&p).unwrap(), 0u32.into());
    }

    #[test]
    fn level_zero_access_is_one_and_a_half_cycles() {
        let p = AnalyticParams::new(2, 3, 0, 2, 5, ChannelMode::Single);
        // one segment of 7 index and 7 data buckets
        let expect = BigRational::new((3u32 * (7 * 2 + 7 * 5)).into(), 2u32.into());
        assert_eq!(avg_access_time_tp(&p).unwrap(), expect);
        assert_eq!(format_exact(&expect), "73.5");
    }

    #[test]
    fn report_matches_individual_forms() {
        for mode in [ChannelMode::Single, ChannelMode::Multi3] {
            let p = published_point(mode);
            let r = evaluate(&p).unwrap();
            assert_eq!(r.index, index_size_tp(&p).unwrap());
            assert_eq!(r.data, data_size_tp(&p).unwrap());
            assert_eq!(r.avg_tuning, avg_tuning_time_tp(&p).unwrap());
            assert_eq!(r.avg_access, avg_access_time_tp(&p).unwrap());
        }
        let r = evaluate(&published_point(ChannelMode::Multi3)).unwrap();
        assert_eq!(r.segment_size(), 396u32.into());
        assert_eq!(&r.index + &r.data, 6336u32.into());
    }

    #[test]
    fn invalid_parameters() {
        let p = AnalyticParams::new(4, 3, 1, 1, 1, ChannelMode::Multi3);
        assert_eq!(evaluate(&p), Err(AnalyticError::FanoutNotDivisible(4)));
        let p = AnalyticParams::new(3, 2, 3, 1, 1, ChannelMode::Single);
        assert!(matches!(
            evaluate(&p),
            Err(AnalyticError::LevelOutOfRange { .. })
        ));
        let p = AnalyticParams::new(0, 2, 1, 1, 1, ChannelMode::Single);
        assert_eq!(evaluate(&p), Err(AnalyticError::ZeroFanout));
        let p = AnalyticParams::new(3, 2, 1, 0, 1, ChannelMode::Single);
        assert_eq!(evaluate(&p), Err(AnalyticError::ZeroSize));
    }

    #[test]
    fn published_point_detection() {
        assert!(PUBLISHED_ACCESS_TIMES.matches(&published_point(ChannelMode::Single)));
        assert!(!PUBLISHED_ACCESS_TIMES.matches(&AnalyticParams::new(
            6,
            7,
            3,
            3,
            30,
            ChannelMode::Single
        )));
        let msg = PUBLISHED_ACCESS_TIMES.to_string();
        assert!(msg.contains("80784") && msg.contains("107823e9"));
    }
}
