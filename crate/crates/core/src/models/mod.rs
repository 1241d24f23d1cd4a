//! The case-study model families and a generic chain driver.

use std::cell::Cell;

use crate::chain::{BlockLayout, ChainSample};
use crate::error::{Error, Result};
use crate::rng::RngState;

pub mod mixture;
pub mod poisson;
pub mod regression;

/// One MCMC transition kernel plus the mapping from its state to a flat
/// draw vector.
pub trait Sampler {
    type State: Clone;

    fn layout(&self) -> BlockLayout;

    /// One full sweep. `adapting` is true during burn-in only; samplers
    /// with tunable proposals may adjust them then and must freeze them
    /// afterwards.
    fn step(&mut self, state: &mut Self::State, rng: &mut RngState, adapting: bool) -> Result<()>;

    fn record(&self, state: &Self::State, out: &mut Vec<f64>);
}

thread_local! {
    static SWEEPS: Cell<u64> = const { Cell::new(0) };
}

/// Sampler sweeps performed on the current thread since it started.
pub fn sweeps_performed() -> u64 {
    SWEEPS.with(|c| c.get())
}

/// Runs `iterations` sweeps from `init` and keeps the draws after
/// `burn_in`.
pub fn run_chain<S: Sampler>(
    sampler: &mut S,
    init: S::State,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(ChainSample, S::State)> {
    if iterations <= burn_in {
        return Err(Error::config(
            "iterations",
            format!("iterations ({iterations}) must exceed burn-in ({burn_in})"),
        ));
    }
    let layout = sampler.layout();
    let mut rng = RngState::new(seed);
    let mut state = init;
    let mut draws = Vec::with_capacity((iterations - burn_in) * layout.total_dim());
    for it in 0..iterations {
        let adapting = it < burn_in;
        sampler.step(&mut state, &mut rng, adapting)?;
        SWEEPS.with(|c| c.set(c.get() + 1));
        if !adapting {
            sampler.record(&state, &mut draws);
        }
    }
    Ok((ChainSample::new(layout, draws, burn_in, seed)?, state))
}
