//! Independent paths run in parallel, results consumed in ascending path order.
//!
//! Each path is a pure function of `(seed, path)`, and reductions happen on
//! the calling thread in path order, so every result is independent of the
//! worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::solver::{run_recursive, Problem, Trajectory};

/// Paths handed to the pool at once; bounds memory held by unreduced results.
const CHUNK: u64 = 256;

/// `paths` consecutive paths starting at `first_path`, keyed by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathEnsemble {
    pub seed: u64,
    pub first_path: u64,
    pub paths: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl PathEnsemble {
    pub fn new(seed: u64, paths: u64) -> Self {
        Self { seed, first_path: 0, paths, threads: None }
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    pub fn stream(&self, path: u64) -> NoiseStream {
        NoiseStream::new(self.seed, path)
    }

    /// Evaluates `f` on every path and feeds `(path, value)` to `sink` in
    /// ascending path order.
    pub fn for_each<T, F, S>(&self, f: F, mut sink: S) -> Result<()>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
        S: FnMut(u64, T) + Send,
    {
        let end = self.first_path + self.paths;
        let mut run = || {
            let mut start = self.first_path;
            while start < end {
                let stop = (start + CHUNK).min(end);
                for (k, value) in map_range(start, stop, &f).into_iter().enumerate() {
                    sink(start + k as u64, value);
                }
                start = stop;
            }
        };
        match self.threads {
            None => run(),
            Some(threads) => in_pool(threads, run)?,
        }
        Ok(())
    }

    /// Integrates every path with the recursive scheme.
    pub fn simulate(&self, problem: &Problem) -> Result<Vec<(u64, Result<Trajectory>)>> {
        let mut out = Vec::with_capacity(self.paths as usize);
        self.for_each(
            |path| simulate_path(problem, &self.stream(path)),
            |path, traj| out.push((path, traj)),
        )?;
        Ok(out)
    }
}

pub fn simulate_path(problem: &Problem, stream: &NoiseStream) -> Result<Trajectory> {
    let increments = problem.sample_increments(stream)?;
    run_recursive(&problem.input(&increments))
}

#[cfg(feature = "parallel")]
fn map_range<T: Send, F: Fn(u64) -> T + Sync>(start: u64, stop: u64, f: &F) -> Vec<T> {
    (start..stop).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_range<T, F: Fn(u64) -> T>(start: u64, stop: u64, f: &F) -> Vec<T> {
    (start..stop).map(f).collect()
}

#[cfg(feature = "parallel")]
fn in_pool<R: Send>(threads: usize, op: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(op))
}

#[cfg(not(feature = "parallel"))]
fn in_pool<R>(threads: usize, op: impl FnOnce() -> R) -> Result<R> {
    if threads == 0 {
        return Err(Error::InvalidParameter("thread count must be positive".into()));
    }
    Ok(op())
}
