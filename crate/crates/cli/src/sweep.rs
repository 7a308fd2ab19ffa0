//! `AXIS=LO..HI` parameter sweeps. Bounds are inclusive; `LO > HI` is an
//! empty sweep.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use airpath_core::schedule::MAX_SERVER_CHANNELS;

use crate::config::{ExperimentConfig, TreeSource};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Level,
    Fanout,
    Height,
    Channels,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Level => "h",
            Axis::Fanout => "n",
            Axis::Height => "H",
            Axis::Channels => "channels",
        }
    }

    pub fn apply(self, base: &ExperimentConfig, v: usize) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.sweep = None;
        match (self, &mut cfg.tree) {
            (Axis::Level, _) => cfg.h = v,
            (Axis::Channels, _) => cfg.server_channels = v,
            (Axis::Fanout, TreeSource::Synthetic { fanout, .. }) => *fanout = v,
            (Axis::Height, TreeSource::Synthetic { height, .. }) => *height = v,
            // rejected by `Sweep::check`
            (_, TreeSource::Xml(_)) => {}
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub axis: Axis,
    pub lo: usize,
    pub hi: usize,
}

impl Sweep {
    pub fn values(&self) -> RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn check(&self, cfg: &ExperimentConfig) -> Result<(), Failure> {
        match self.axis {
            Axis::Fanout | Axis::Height if matches!(cfg.tree, TreeSource::Xml(_)) => {
                Err(Failure::usage(format!(
                    "cannot sweep {} over an XML document",
                    self.axis.as_str()
                )))
            }
            Axis::Fanout if self.lo == 0 && !self.is_empty() => {
                Err(Failure::usage("fanout sweep must start at 1 or above"))
            }
            Axis::Channels
                if !self.is_empty() && (self.lo == 0 || self.hi > MAX_SERVER_CHANNELS) =>
            {
                Err(Failure::usage(format!(
                    "channel sweep must stay within 1..={MAX_SERVER_CHANNELS}"
                )))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || {
            format!("invalid sweep {s:?}; expected AXIS=LO..HI with AXIS one of h, n, H, channels")
        };
        let (axis, range) = s.split_once('=').ok_or_else(bad)?;
        let axis = match axis.trim() {
            "h" => Axis::Level,
            "n" => Axis::Fanout,
            "H" => Axis::Height,
            "channels" => Axis::Channels,
            _ => return Err(bad()),
        };
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo = lo.trim().parse().map_err(|_| bad())?;
        let hi = hi.trim().parse().map_err(|_| bad())?;
        Ok(Sweep { axis, lo, hi })
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}..{}", self.axis.as_str(), self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_axes() {
        let s: Sweep = "h=1..6".parse().unwrap();
        assert_eq!(
            s,
            Sweep {
                axis: Axis::Level,
                lo: 1,
                hi: 6
            }
        );
        assert_eq!(s.values().count(), 6);
        assert_eq!("H=2..2".parse::<Sweep>().unwrap().axis, Axis::Height);
        assert_eq!("n=3..9".parse::<Sweep>().unwrap().to_string(), "n=3..9");
        assert!("channels=3..1".parse::<Sweep>().unwrap().is_empty());
    }

    #[test]
    fn rejects_garbage() {
        for s in ["h", "h=1", "h=a..2", "x=1..2", "h=1...2", "h=-1..2"] {
            assert!(s.parse::<Sweep>().is_err(), "{s}");
        }
    }
}
