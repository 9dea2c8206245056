//! Named stage timers used by the mapping and field-build pipelines.

use std::time::{Duration, Instant};

/// Ordered list of named stage durations for one pipeline pass.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    stages: Vec<(String, Duration)>,
}

impl StageTimings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, d: Duration) {
        self.stages.push((name.to_string(), d));
    }

    /// Times `f`, records the elapsed duration under `name`, and returns its output.
    pub fn record<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.push(name, start.elapsed());
        out
    }

    pub fn get(&self, name: &str) -> Option<Duration> {
        self.stages
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| *d)
    }

    pub fn total(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }

    pub fn stages(&self) -> &[(String, Duration)] {
        &self.stages
    }
}

/// Mean and sample standard deviation of a sequence of seconds.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Median; input need not be sorted. Empty input returns 0.
pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid]
    } else {
        0.5 * (s[mid - 1] + s[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_total() {
        let mut t = StageTimings::new();
        let x = t.record("a", || 41 + 1);
        assert_eq!(x, 42);
        t.push("b", Duration::from_millis(5));
        assert!(t.get("a").is_some());
        assert_eq!(t.get("b"), Some(Duration::from_millis(5)));
        assert!(t.total() >= Duration::from_millis(5));
        assert_eq!(t.stages().len(), 2);
    }

    #[test]
    fn stats_basics() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((m - 5.0).abs() < 1e-12);
        assert!((s - 2.138089935299395).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }
}
