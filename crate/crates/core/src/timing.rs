//! Wall-clock measurement discipline: one timed run at a time per process.

use std::sync::{Mutex, MutexGuard};

use crate::error::{Error, Result};

pub const DEFAULT_CV_MAX: f64 = 0.10;
pub const CV_ENV: &str = "RS_ORACLE_TIMING_CV_MAX";

static TIMING_LOCK: Mutex<()> = Mutex::new(());

/// Serialises timed runs across threads. A poisoned lock is still usable.
pub fn lock() -> MutexGuard<'static, ()> {
    TIMING_LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// CPU seconds consumed by the calling thread, where supported.
#[cfg(unix)]
pub fn thread_cpu_time() -> Option<f64> {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    (rc == 0).then(|| ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9)
}

#[cfg(not(unix))]
pub fn thread_cpu_time() -> Option<f64> {
    None
}

/// Which measurement feeds runtime statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingClock {
    /// Thread CPU time; insensitive to the thread being descheduled.
    #[default]
    ThreadCpu,
    /// Monotonic wall clock.
    Wall,
}

impl TimingClock {
    pub fn pick(self, res: &crate::sim::SimulationResult) -> Option<f64> {
        match self {
            TimingClock::ThreadCpu => res.cpu_runtime.or(res.wall_runtime),
            TimingClock::Wall => res.wall_runtime,
        }
    }
}

impl std::str::FromStr for TimingClock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpu" | "thread_cpu" => Ok(TimingClock::ThreadCpu),
            "wall" => Ok(TimingClock::Wall),
            other => Err(Error::Config(format!("unknown clock `{other}` (expected cpu or wall)"))),
        }
    }
}

/// CV bound from the environment, falling back to [`DEFAULT_CV_MAX`].
pub fn cv_max_from_env() -> f64 {
    std::env::var(CV_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v > 0.0)
        .unwrap_or(DEFAULT_CV_MAX)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn cv(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if m == 0.0 {
        0.0
    } else {
        sample_sd(xs) / m
    }
}

pub fn check_cv(xs: &[f64], max: f64) -> Result<f64> {
    let c = cv(xs);
    if c > max {
        Err(Error::TimingUnstable { cv: c, max })
    } else {
        Ok(c)
    }
}

/// Measurement attempts per timed set before `TimingUnstable` is returned.
pub const TIMING_ATTEMPTS: usize = 3;

/// Runs `measure` until it stops failing with `TimingUnstable`, at most
/// [`TIMING_ATTEMPTS`] times. Other errors return at once.
pub fn remeasure<T>(mut measure: impl FnMut(usize) -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match measure(attempt) {
            Err(Error::TimingUnstable { .. }) if attempt + 1 < TIMING_ATTEMPTS => attempt += 1,
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remeasure_retries_only_unstable() {
        let mut calls = 0;
        let r = remeasure(|a| {
            calls += 1;
            if a < 1 {
                Err(Error::TimingUnstable { cv: 0.2, max: 0.1 })
            } else {
                Ok(a)
            }
        });
        assert_eq!((r.unwrap(), calls), (1, 2));
        let mut calls = 0;
        let r: Result<()> = remeasure(|_| {
            calls += 1;
            Err(Error::TimingUnstable { cv: 0.2, max: 0.1 })
        });
        assert!(matches!(r, Err(Error::TimingUnstable { .. })));
        assert_eq!(calls, TIMING_ATTEMPTS);
        let mut calls = 0;
        let r: Result<()> = remeasure(|_| {
            calls += 1;
            Err(Error::SingularFit)
        });
        assert!(matches!(r, Err(Error::SingularFit)));
        assert_eq!(calls, 1);
    }

    #[test]
    fn thread_clock_advances_with_work() {
        let a = thread_cpu_time().unwrap();
        let mut x = 0u64;
        for i in 0..2_000_000u64 {
            x = std::hint::black_box(x.wrapping_mul(31).wrapping_add(i));
        }
        let b = thread_cpu_time().unwrap();
        assert!(b > a, "{a} -> {b} ({x})");
    }

    #[test]
    fn cv_of_constant_is_zero() {
        assert_eq!(cv(&[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(sample_sd(&[5.0]), 0.0);
    }

    #[test]
    fn cv_guard_trips() {
        assert!(check_cv(&[1.0, 1.01, 0.99], 0.1).is_ok());
        assert!(matches!(check_cv(&[1.0, 2.0, 3.0], 0.1), Err(Error::TimingUnstable { .. })));
    }

    #[test]
    fn sd_matches_hand_value() {
        // mean 5, squared deviations 9+1+1+9 = 20, / 3
        assert!((sample_sd(&[2.0, 4.0, 6.0, 8.0]) - (20.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
