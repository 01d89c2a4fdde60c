//! Allocation strategies: how controller state turns into per-composition
//! batch shares. The closed-loop strategy and the frozen one-hot baseline
//! sit behind one trait so the training loop is identical for both.

use crate::error::{Error, Result};
use crate::scheduler::{subbatch_sizes, SamplerState};

/// Maps controller state to the probabilities and batch split used for one
/// epoch. Implementations must not consume randomness.
pub trait AllocationPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Probabilities governing allocation and loss weighting this epoch.
    fn allocation(&self, state: &SamplerState) -> Vec<f32>;

    /// Per-composition sample counts for one batch.
    fn batch_split(&self, allocation: &[f32], batch_size: usize, min_size: usize)
        -> Result<Vec<usize>>;
}

/// Closed-loop allocation: softmax probabilities from the feedback scores,
/// integerized by largest remainder with a per-composition floor.
pub struct AdaptiveAllocation;

impl AllocationPolicy for AdaptiveAllocation {
    fn name(&self) -> &'static str {
        "adaptive"
    }

    fn allocation(&self, state: &SamplerState) -> Vec<f32> {
        state.probabilities()
    }

    fn batch_split(
        &self,
        allocation: &[f32],
        batch_size: usize,
        min_size: usize,
    ) -> Result<Vec<usize>> {
        subbatch_sizes(allocation, batch_size, min_size)
    }
}

/// Open-loop baseline: the whole batch goes to one composition, feedback is
/// recorded but never changes the allocation.
pub struct FixedAllocation {
    index: usize,
}

impl FixedAllocation {
    pub fn new(index: usize) -> Self {
        FixedAllocation { index }
    }
}

impl AllocationPolicy for FixedAllocation {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn allocation(&self, state: &SamplerState) -> Vec<f32> {
        let mut p = vec![0.0; state.len()];
        p[self.index] = 1.0;
        p
    }

    fn batch_split(
        &self,
        allocation: &[f32],
        batch_size: usize,
        _min_size: usize,
    ) -> Result<Vec<usize>> {
        let mut sizes = vec![0usize; allocation.len()];
        sizes[self.index] = batch_size;
        Ok(sizes)
    }
}

/// Which allocation strategy a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationMode {
    Adaptive,
    Fixed(usize),
}

/// Builds the strategy for a mode, validating the composition index.
pub fn build_policy(mode: AllocationMode, n_comps: usize) -> Result<Box<dyn AllocationPolicy>> {
    match mode {
        AllocationMode::Adaptive => Ok(Box::new(AdaptiveAllocation)),
        AllocationMode::Fixed(index) => {
            if index >= n_comps {
                return Err(Error::Domain(format!(
                    "fixed composition index {index} out of range for {n_comps} compositions"
                )));
            }
            Ok(Box::new(FixedAllocation::new(index)))
        }
    }
}
