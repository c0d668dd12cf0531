use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::AnnotationResult;
use crate::config::ConfidenceThresholds;
use crate::judge::JudgeSource;
use crate::prompting::Confidence;

/// What the monitor keeps per request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestSample {
    pub latency_ms: u64,
    /// None when the request failed outright.
    pub band: Option<Confidence>,
    pub judge_fallback: bool,
    pub degraded: bool,
    pub plan_cache_hit: bool,
    pub top_score: Option<u8>,
}

impl RequestSample {
    pub fn from_result(r: &AnnotationResult) -> Self {
        Self {
            latency_ms: r.total_latency_ms,
            band: Some(r.routing.band),
            judge_fallback: r.judge.source == JudgeSource::FallbackAggregation,
            degraded: r.degraded,
            plan_cache_hit: r.plan.cache_hit,
            top_score: r.judge.top().map(|t| t.final_score),
        }
    }

    pub fn with_band(band: Confidence, latency_ms: u64) -> Self {
        Self {
            latency_ms,
            band: Some(band),
            judge_fallback: false,
            degraded: false,
            plan_cache_hit: false,
            top_score: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BandDistribution {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitoringSnapshot {
    pub empty: bool,
    /// Requests in the window.
    pub requests: u64,
    /// Requests since start.
    pub total_requests: u64,
    pub latency_p50_ms: u64,
    pub latency_p95_ms: u64,
    pub latency_p99_ms: u64,
    pub band_distribution: BandDistribution,
    pub judge_fallback_rate: f64,
    pub degraded_rate: f64,
    pub failure_rate: f64,
    pub plan_cache_hit_rate: f64,
    pub embedding_cache_hit_rate: f64,
}

/// Nearest-rank percentile: the value at rank ceil(p/100 * n) of the sorted
/// sample.
pub fn percentile(values: &[u64], p: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Rolling window of request samples.
#[derive(Debug)]
pub struct Monitor {
    capacity: usize,
    window: Mutex<VecDeque<RequestSample>>,
    total: AtomicU64,
}

impl Default for Monitor {
    fn default() -> Self {
        Self::new(10_000)
    }
}

fn frac(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl Monitor {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            window: Mutex::new(VecDeque::new()),
            total: AtomicU64::new(0),
        }
    }

    pub fn record(&self, sample: RequestSample) {
        self.total.fetch_add(1, Ordering::SeqCst);
        let mut w = self.window.lock();
        w.push_back(sample);
        while w.len() > self.capacity {
            w.pop_front();
        }
    }

    pub fn record_failure(&self, latency_ms: u64) {
        self.record(RequestSample {
            latency_ms,
            band: None,
            judge_fallback: false,
            degraded: true,
            plan_cache_hit: false,
            top_score: None,
        });
    }

    pub fn samples(&self) -> Vec<RequestSample> {
        self.window.lock().iter().copied().collect()
    }

    pub fn snapshot(&self, embedding_cache_hit_rate: f64) -> MonitoringSnapshot {
        let samples = self.samples();
        let total_requests = self.total.load(Ordering::SeqCst);
        if samples.is_empty() {
            return MonitoringSnapshot {
                empty: true,
                total_requests,
                embedding_cache_hit_rate,
                ..Default::default()
            };
        }
        let n = samples.len();
        let latencies: Vec<u64> = samples.iter().map(|s| s.latency_ms).collect();
        let banded: Vec<Confidence> = samples.iter().filter_map(|s| s.band).collect();
        let count = |b: Confidence| banded.iter().filter(|x| **x == b).count();
        let ok = banded.len();
        MonitoringSnapshot {
            empty: false,
            requests: n as u64,
            total_requests,
            latency_p50_ms: percentile(&latencies, 50.0).unwrap_or(0),
            latency_p95_ms: percentile(&latencies, 95.0).unwrap_or(0),
            latency_p99_ms: percentile(&latencies, 99.0).unwrap_or(0),
            band_distribution: BandDistribution {
                high: frac(count(Confidence::High), ok),
                medium: frac(count(Confidence::Medium), ok),
                low: frac(count(Confidence::Low), ok),
            },
            judge_fallback_rate: frac(samples.iter().filter(|s| s.band.is_some() && s.judge_fallback).count(), ok),
            degraded_rate: frac(samples.iter().filter(|s| s.degraded).count(), n),
            failure_rate: frac(n - ok, n),
            plan_cache_hit_rate: frac(samples.iter().filter(|s| s.plan_cache_hit).count(), n),
            embedding_cache_hit_rate,
        }
    }

    /// Thresholds proposed from the recent top scores in the window.
    pub fn recalibrate(&self, target_high: f64, target_medium: f64, current: &ConfidenceThresholds) -> ConfidenceThresholds {
        let scores: Vec<u8> = self.samples().iter().filter_map(|s| s.top_score).collect();
        propose_thresholds(&scores, target_high, target_medium, current)
    }
}

/// Thresholds under which roughly `target_high` of `top_scores` clear the
/// high bar and `target_high + target_medium` clear the medium bar. Score
/// thresholds only; the agreement clause for HIGH still applies when routing.
pub fn propose_thresholds(
    top_scores: &[u8],
    target_high: f64,
    target_medium: f64,
    current: &ConfidenceThresholds,
) -> ConfidenceThresholds {
    if top_scores.is_empty() {
        return *current;
    }
    let mut v = top_scores.to_vec();
    v.sort_unstable_by(|a, b| b.cmp(a));
    let at = |f: f64| {
        let k = (f.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
        v[k.clamp(1, v.len()) - 1]
    };
    let high = at(target_high).max(1);
    let medium = at(target_high + target_medium).min(high - 1);
    ConfidenceThresholds {
        high,
        medium,
        low: current.low.min(medium),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=10).map(|i| i * 100).collect();
        assert_eq!(percentile(&v, 50.0), Some(500));
        assert_eq!(percentile(&v, 95.0), Some(1000));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn band_stream() {
        let m = Monitor::default();
        for i in 0..1000 {
            let band = match i % 20 {
                0 => Confidence::Low,
                1 | 2 => Confidence::Medium,
                _ => Confidence::High,
            };
            m.record(RequestSample::with_band(band, 10));
        }
        let s = m.snapshot(0.0);
        assert_eq!(
            s.band_distribution,
            BandDistribution {
                high: 0.85,
                medium: 0.10,
                low: 0.05
            }
        );
        assert!(Monitor::default().snapshot(0.0).empty);
    }
}
