//! The local activation policy: when the host owner lets the worker compute.

use chrono::{DateTime, Datelike, NaiveTime, Utc, Weekday};
use serde::{Deserialize, Serialize};
use xw_common::Timestamp;

/// A weekly slot `[start, end)` beginning on `day`, in UTC. When `end` is
/// not after `start` the slot runs past midnight into the next day, so
/// `00:00:00`..`00:00:00` is the whole day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityWindow {
    pub day: Weekday,
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl AvailabilityWindow {
    pub fn new(day: Weekday, start: NaiveTime, end: NaiveTime) -> Self {
        AvailabilityWindow { day, start, end }
    }

    pub fn whole_day(day: Weekday) -> Self {
        AvailabilityWindow::new(day, NaiveTime::MIN, NaiveTime::MIN)
    }

    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        let day = at.weekday();
        let t = at.time();
        if self.start < self.end {
            day == self.day && self.start <= t && t < self.end
        } else {
            (day == self.day && t >= self.start) || (day == self.day.succ() && t < self.end)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPolicy {
    pub availability_windows: Vec<AvailabilityWindow>,
    /// Highest tolerated host load, as a fraction of all CPUs.
    pub max_cpu_load: f64,
    pub min_free_memory: u64,
}

impl ActivationPolicy {
    /// Every day, any load, any memory.
    pub fn always() -> Self {
        ActivationPolicy {
            availability_windows: WEEK.iter().map(|&d| AvailabilityWindow::whole_day(d)).collect(),
            max_cpu_load: 1.0,
            min_free_memory: 0,
        }
    }
}

impl Default for ActivationPolicy {
    fn default() -> Self {
        ActivationPolicy::always()
    }
}

const WEEK: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HostMetrics {
    /// Recent load divided by the number of CPUs.
    pub cpu_load: f64,
    pub free_memory: u64,
}

pub fn policy_allows(policy: &ActivationPolicy, now: Timestamp, host: &HostMetrics) -> bool {
    let Some(at) = DateTime::<Utc>::from_timestamp_millis(now.as_millis() as i64) else {
        return false;
    };
    policy.availability_windows.iter().any(|w| w.contains(at))
        && host.cpu_load <= policy.max_cpu_load
        && host.free_memory >= policy.min_free_memory
}

pub trait HostProbe: Send + Sync {
    fn sample(&self) -> HostMetrics;
}

/// Reads `/proc/loadavg` and `/proc/meminfo`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProcHostProbe;

impl HostProbe for ProcHostProbe {
    fn sample(&self) -> HostMetrics {
        let cpus = std::thread::available_parallelism().map_or(1, |n| n.get()) as f64;
        let load = std::fs::read_to_string("/proc/loadavg")
            .ok()
            .and_then(|s| s.split_whitespace().next()?.parse::<f64>().ok())
            .unwrap_or(0.0);
        let free = std::fs::read_to_string("/proc/meminfo")
            .ok()
            .and_then(|s| parse_meminfo_available(&s))
            .unwrap_or(u64::MAX);
        HostMetrics {
            cpu_load: load / cpus,
            free_memory: free,
        }
    }
}

fn parse_meminfo_available(meminfo: &str) -> Option<u64> {
    let line = meminfo.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

/// A probe returning fixed metrics.
#[derive(Debug, Clone, Copy)]
pub struct FixedHostProbe(pub HostMetrics);

impl HostProbe for FixedHostProbe {
    fn sample(&self) -> HostMetrics {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CALM: HostMetrics = HostMetrics {
        cpu_load: 0.1,
        free_memory: 8 << 30,
    };

    fn hm(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).unwrap()
    }

    // 2024-01-01 was a Monday.
    fn monday_at(h: u32, m: u32) -> Timestamp {
        Timestamp::from_millis((1_704_067_200 + h as u64 * 3600 + m as u64 * 60) * 1000)
    }

    fn policy(windows: Vec<AvailabilityWindow>) -> ActivationPolicy {
        ActivationPolicy {
            availability_windows: windows,
            max_cpu_load: 0.5,
            min_free_memory: 1 << 30,
        }
    }

    #[test]
    fn no_windows_never_allows() {
        let p = policy(vec![]);
        for h in 0..24 {
            assert!(!policy_allows(&p, monday_at(h, 0), &CALM));
        }
    }

    #[test]
    fn whole_week_allows_calm_host() {
        let mut p = ActivationPolicy::always();
        p.max_cpu_load = 0.5;
        assert!(policy_allows(&p, monday_at(13, 37), &CALM));
        assert!(policy_allows(&p, monday_at(0, 0), &CALM));
    }

    #[test]
    fn each_condition_vetoes() {
        let p = policy(vec![AvailabilityWindow::whole_day(Weekday::Mon)]);
        assert!(policy_allows(&p, monday_at(9, 0), &CALM));
        let busy = HostMetrics { cpu_load: 0.9, ..CALM };
        assert!(!policy_allows(&p, monday_at(9, 0), &busy));
        let tight = HostMetrics {
            free_memory: 1 << 20,
            ..CALM
        };
        assert!(!policy_allows(&p, monday_at(9, 0), &tight));
        // Tuesday is outside.
        assert!(!policy_allows(&p, monday_at(33, 0), &CALM));
    }

    #[test]
    fn night_window_wraps_midnight() {
        let w = AvailabilityWindow::new(Weekday::Mon, hm(22, 0), hm(6, 0));
        let p = policy(vec![w]);
        assert!(!policy_allows(&p, monday_at(21, 59), &CALM));
        assert!(policy_allows(&p, monday_at(22, 0), &CALM));
        assert!(policy_allows(&p, monday_at(24 + 5, 59), &CALM));
        assert!(!policy_allows(&p, monday_at(24 + 6, 0), &CALM));
        // Sunday night does not leak into Monday morning.
        assert!(!policy_allows(&p, monday_at(3, 0), &CALM));
    }

    #[test]
    fn window_end_is_exclusive() {
        let p = policy(vec![AvailabilityWindow::new(Weekday::Mon, hm(8, 0), hm(18, 0))]);
        assert!(policy_allows(&p, monday_at(8, 0), &CALM));
        assert!(!policy_allows(&p, monday_at(18, 0), &CALM));
    }

    #[test]
    fn windows_deserialize_from_config_text() {
        let w: AvailabilityWindow =
            serde_json::from_str(r#"{"day":"Sat","start":"09:30:00","end":"17:00:00"}"#).unwrap();
        assert_eq!(w, AvailabilityWindow::new(Weekday::Sat, hm(9, 30), hm(17, 0)));
    }

    #[test]
    fn meminfo_parsing() {
        let text = "MemTotal:       16000000 kB\nMemFree:  100 kB\nMemAvailable:    2048 kB\n";
        assert_eq!(parse_meminfo_available(text), Some(2048 * 1024));
        let m = ProcHostProbe.sample();
        assert!(m.cpu_load >= 0.0 && m.free_memory > 0);
    }
}
