//! Wall-clock measurements on the monotonic clock.

use std::time::{Duration, Instant};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingReport {
    pub learn_time: Duration,
    pub predict_times: Vec<Duration>,
}

impl TimingReport {
    pub fn mean_predict(&self) -> Duration {
        if self.predict_times.is_empty() {
            return Duration::ZERO;
        }
        self.predict_times.iter().sum::<Duration>() / self.predict_times.len() as u32
    }

    pub fn median_predict(&self) -> Duration {
        let mut t = self.predict_times.clone();
        t.sort();
        match t.len() {
            0 => Duration::ZERO,
            n if n % 2 == 1 => t[n / 2],
            n => (t[n / 2 - 1] + t[n / 2]) / 2,
        }
    }
}

/// Run `f` once and return its output with the elapsed time.
pub fn time_once<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Time `f` on every item after one untimed warm-up call on the first item.
pub fn time_each<I, T>(items: &[I], mut f: impl FnMut(&I) -> T) -> (Vec<T>, Vec<Duration>) {
    if let Some(first) = items.first() {
        std::hint::black_box(f(first));
    }
    let mut out = Vec::with_capacity(items.len());
    let mut times = Vec::with_capacity(items.len());
    for it in items {
        let (v, t) = time_once(|| f(it));
        out.push(v);
        times.push(t);
    }
    (out, times)
}

pub fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noop_is_fast() {
        let (_, t) = time_once(|| ());
        assert!(t < Duration::from_millis(1));
    }

    #[test]
    fn sleep_is_measured() {
        let (_, times) = time_each(&[10u64], |ms| std::thread::sleep(Duration::from_millis(*ms)));
        assert!(times[0] >= Duration::from_millis(10) && times[0] <= Duration::from_millis(50), "{:?}", times[0]);
    }

    #[test]
    fn summary_statistics() {
        let r = TimingReport { learn_time: Duration::ZERO, predict_times: [1, 3, 8].map(Duration::from_millis).to_vec() };
        assert_eq!(r.mean_predict(), Duration::from_millis(4));
        assert_eq!(r.median_predict(), Duration::from_millis(3));
    }
}
