//! Closed-loop sampling controller.
//!
//! Persistent state is the raw per-composition score `mean(1 - acc)`; the
//! softmax with the updating-rate scale is applied exactly once when scores
//! are turned into probabilities, so repeated conversions cannot collapse
//! the distribution toward uniform.

use crate::error::{Error, Result};
use crate::numerics::softmax;
use crate::rng::RngStream;

/// Controller state: raw difficulty scores plus the updating rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    scores: Vec<f32>,
    update_rate: f32,
    epoch: u32,
    last_acc: Vec<f32>,
}

impl SamplerState {
    /// Fair start: equal scores (0.5 by convention) so probabilities are
    /// exactly uniform. Requires at least two competing compositions.
    pub fn init_uniform(n: usize, update_rate: f32) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 compositions to schedule, got {n}"
            )));
        }
        Self::from_scores(vec![0.5; n], update_rate)
    }

    /// Degenerate single-arm state for runs with one composition.
    pub fn single(update_rate: f32) -> Result<Self> {
        Self::from_scores(vec![0.5], update_rate)
    }

    pub fn from_scores(scores: Vec<f32>, update_rate: f32) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Domain("sampler needs at least one score".into()));
        }
        if !(update_rate > 0.0) {
            return Err(Error::Domain(format!("updating rate {update_rate} must be positive")));
        }
        let n = scores.len();
        Ok(SamplerState { scores, update_rate, epoch: 0, last_acc: vec![f32::NAN; n] })
    }

    /// Restores a serialized state.
    pub fn from_parts(
        scores: Vec<f32>,
        update_rate: f32,
        epoch: u32,
        last_acc: Vec<f32>,
    ) -> Result<Self> {
        if last_acc.len() != scores.len() {
            return Err(Error::Shape(format!(
                "{} accuracies for {} scores",
                last_acc.len(),
                scores.len()
            )));
        }
        let mut state = Self::from_scores(scores, update_rate)?;
        state.epoch = epoch;
        state.last_acc = last_acc;
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn update_rate(&self) -> f32 {
        self.update_rate
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn last_acc(&self) -> &[f32] {
        &self.last_acc
    }

    /// Sampling probabilities: softmax of the scores scaled by the
    /// updating rate.
    pub fn probabilities(&self) -> Vec<f32> {
        softmax(&self.scores, self.update_rate).expect("scores are non-empty and finite")
    }

    /// Feeds back one epoch of per-composition mean accuracy. `None` marks
    /// a composition that saw no data; its score carries forward unchanged.
    pub fn update(&mut self, acc: &[Option<f32>]) -> Result<()> {
        if acc.len() != self.scores.len() {
            return Err(Error::Shape(format!(
                "{} accuracies for {} compositions",
                acc.len(),
                self.scores.len()
            )));
        }
        for a in acc.iter().flatten() {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::Domain(format!("accuracy {a} outside [0, 1]")));
            }
        }
        for (i, a) in acc.iter().enumerate() {
            if let Some(a) = a {
                self.scores[i] = 1.0 - a;
                self.last_acc[i] = *a;
            }
        }
        self.epoch += 1;
        Ok(())
    }
}

/// Largest-remainder integer allocation of `total` items proportional to
/// `p`, with every slot floored at `min_size`. Remainder ties break toward
/// the lowest index; the floor is funded from the largest slot.
pub fn subbatch_sizes(p: &[f32], total: usize, min_size: usize) -> Result<Vec<usize>> {
    if p.is_empty() {
        return Err(Error::Domain("sizes for an empty probability vector".into()));
    }
    let sum: f32 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-4 {
        return Err(Error::Domain(format!("probabilities must be a distribution, sum {sum}")));
    }
    if total < p.len() * min_size {
        return Err(Error::InfeasiblePlan(format!(
            "{total} items cannot give {} slots at least {min_size} each",
            p.len()
        )));
    }

    let targets: Vec<f64> = p.iter().map(|&v| f64::from(v) * total as f64).collect();
    let mut sizes: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let mut assigned: usize = sizes.iter().sum();

    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - targets[a].floor();
        let rb = targets[b] - targets[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut add = order.iter().cycle();
    while assigned < total {
        sizes[*add.next().expect("cycle")] += 1;
        assigned += 1;
    }
    // float drift in p can make the floors over-assign by a few items;
    // reclaim from the smallest remainders
    let mut drop = order.iter().rev().cycle();
    while assigned > total {
        let i = *drop.next().expect("cycle");
        if sizes[i] > 0 {
            sizes[i] -= 1;
            assigned -= 1;
        }
    }

    loop {
        let Some(needy) = sizes.iter().position(|&s| s < min_size) else { break };
        let donor = (0..sizes.len())
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .expect("non-empty");
        sizes[donor] -= 1;
        sizes[needy] += 1;
    }

    debug_assert_eq!(sizes.iter().sum::<usize>(), total);
    Ok(sizes)
}

/// One epoch's data plan: a shuffled permutation of the dataset split into
/// contiguous per-composition segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBatchPlan {
    pub sizes: Vec<usize>,
    pub assignment: Vec<usize>,
}

impl SubBatchPlan {
    /// Per-composition index segments, in composition order.
    pub fn segments(&self) -> Vec<&[usize]> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut start = 0;
        for &size in &self.sizes {
            out.push(&self.assignment[start..start + size]);
            start += size;
        }
        out
    }
}

/// Shuffles dataset indices and partitions them by the given probabilities.
pub fn plan_with_probs(
    p: &[f32],
    num_items: usize,
    min_size: usize,
    rng: &mut RngStream,
) -> Result<SubBatchPlan> {
    if num_items == 0 {
        return Err(Error::Domain("cannot plan an epoch over an empty dataset".into()));
    }
    let sizes = subbatch_sizes(p, num_items, min_size)?;
    let mut assignment: Vec<usize> = (0..num_items).collect();
    rng.shuffle(&mut assignment);
    Ok(SubBatchPlan { sizes, assignment })
}

/// Epoch plan driven by the controller's current probabilities.
pub fn plan_epoch(
    state: &SamplerState,
    num_items: usize,
    min_size: usize,
    rng: &mut RngStream,
) -> Result<SubBatchPlan> {
    plan_with_probs(&state.probabilities(), num_items, min_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_init_is_exact() {
        let state = SamplerState::init_uniform(3, 1.0).unwrap();
        for &p in &state.probabilities() {
            assert_eq!(p, 1.0 / 3.0);
        }
        let state = SamplerState::init_uniform(7, 2.5).unwrap();
        for &p in &state.probabilities() {
            assert_eq!(p, 1.0 / 7.0);
        }
    }

    #[test]
    fn init_requires_two_arms() {
        assert!(SamplerState::init_uniform(1, 1.0).is_err());
        assert!(SamplerState::init_uniform(0, 1.0).is_err());
        // the degenerate single-arm state is available separately
        assert_eq!(SamplerState::single(1.0).unwrap().probabilities(), vec![1.0]);
    }

    #[test]
    fn uniform_regardless_of_update_rate() {
        for ur in [0.3, 0.8, 1.0, 1.2, 4.0] {
            let state = SamplerState::init_uniform(5, ur).unwrap();
            for &p in &state.probabilities() {
                assert_eq!(p, 0.2);
            }
        }
    }

    #[test]
    fn probabilities_frozen_oracle() {
        // softmax([0.5, 0.1, 0.9], scale 1), frozen from f64 evaluation.
        let state = SamplerState::from_scores(vec![0.5, 0.1, 0.9], 1.0).unwrap();
        let p = state.probabilities();
        assert!((p[0] - 0.3162).abs() < 1e-4);
        assert!((p[1] - 0.2120).abs() < 1e-4);
        assert!((p[2] - 0.4718).abs() < 1e-4);
    }

    #[test]
    fn larger_update_rate_spreads_probabilities() {
        let spread = |ur: f32| {
            let state = SamplerState::from_scores(vec![0.5, 0.1, 0.9], ur).unwrap();
            let p = state.probabilities();
            let max = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let min = p.iter().copied().fold(f32::INFINITY, f32::min);
            max - min
        };
        assert!(spread(2.0) > spread(1.0));
    }

    #[test]
    fn all_easy_feedback_returns_to_uniform() {
        let mut state = SamplerState::init_uniform(3, 1.0).unwrap();
        state.update(&[Some(1.0), Some(1.0), Some(1.0)]).unwrap();
        assert_eq!(state.scores(), &[0.0, 0.0, 0.0]);
        for &p in &state.probabilities() {
            assert_eq!(p, 1.0 / 3.0);
        }
        assert_eq!(state.epoch(), 1);
    }

    #[test]
    fn hardest_composition_gets_largest_probability() {
        let mut state = SamplerState::init_uniform(3, 1.0).unwrap();
        state.update(&[Some(0.9), Some(0.5), Some(0.1)]).unwrap();
        for (got, want) in state.scores().iter().zip([0.1, 0.5, 0.9]) {
            assert!((got - want).abs() < 1e-6);
        }
        let p = state.probabilities();
        assert!(p[2] > p[1] && p[1] > p[0]);
    }

    #[test]
    fn missing_accuracy_carries_score_forward() {
        let mut state = SamplerState::init_uniform(3, 1.0).unwrap();
        state.update(&[Some(0.7), Some(0.4), Some(0.2)]).unwrap();
        let before = state.scores()[1];
        state.update(&[Some(0.9), None, Some(0.3)]).unwrap();
        assert_eq!(state.scores()[1], before);
        assert!((state.scores()[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_accuracy_is_rejected() {
        let mut state = SamplerState::init_uniform(2, 1.0).unwrap();
        assert!(state.update(&[Some(1.2), Some(0.5)]).is_err());
        assert!(state.update(&[Some(-0.1), Some(0.5)]).is_err());
        assert!(state.update(&[Some(0.5)]).is_err());
    }

    #[test]
    fn subbatch_uniform_128() {
        let third = 1.0f32 / 3.0;
        let sizes = subbatch_sizes(&[third, third, third], 128, 1).unwrap();
        assert_eq!(sizes, vec![43, 43, 42]);
    }

    #[test]
    fn subbatch_one_hot_with_floor() {
        let sizes = subbatch_sizes(&[1.0, 0.0, 0.0], 10, 1).unwrap();
        assert_eq!(sizes, vec![8, 1, 1]);
    }

    #[test]
    fn subbatch_exact_split() {
        assert_eq!(subbatch_sizes(&[0.5, 0.5], 100, 1).unwrap(), vec![50, 50]);
    }

    #[test]
    fn subbatch_infeasible_total() {
        assert!(matches!(
            subbatch_sizes(&[0.5, 0.5], 1, 1),
            Err(Error::InfeasiblePlan(_))
        ));
    }

    #[test]
    fn plan_is_a_partition() {
        let state = SamplerState::init_uniform(3, 1.0).unwrap();
        let mut rng = RngStream::root(51).derive_label("plan");
        let plan = plan_epoch(&state, 100, 1, &mut rng).unwrap();
        assert_eq!(plan.sizes.iter().sum::<usize>(), 100);
        let mut seen: Vec<usize> = plan.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        let segments = plan.segments();
        assert_eq!(segments.len(), 3);
        for (seg, &size) in segments.iter().zip(&plan.sizes) {
            assert_eq!(seg.len(), size);
        }
    }

    #[test]
    fn plan_is_deterministic() {
        let state = SamplerState::init_uniform(3, 1.0).unwrap();
        let rng = RngStream::root(52).derive(9);
        let a = plan_epoch(&state, 64, 1, &mut rng.clone()).unwrap();
        let b = plan_epoch(&state, 64, 1, &mut rng.clone()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn probabilities_form_a_simplex(
            scores in proptest::collection::vec(0.0f32..1.0, 2..8),
            ur in 0.1f32..3.0,
        ) {
            let state = SamplerState::from_scores(scores, ur).unwrap();
            let p = state.probabilities();
            let sum: f32 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }

        #[test]
        fn harder_arm_gets_strictly_more_probability(
            acc in proptest::collection::vec(0.0f32..1.0, 2..6),
            ur in 0.5f32..2.0,
        ) {
            let mut state = SamplerState::init_uniform(acc.len(), ur).unwrap();
            let feedback: Vec<Option<f32>> = acc.iter().map(|&a| Some(a)).collect();
            state.update(&feedback).unwrap();
            let p = state.probabilities();
            for i in 0..acc.len() {
                for j in 0..acc.len() {
                    if acc[i] + 1e-4 < acc[j] {
                        prop_assert!(
                            p[i] > p[j],
                            "acc {} < {} but p {} <= {}", acc[i], acc[j], p[i], p[j]
                        );
                    }
                }
            }
        }

        #[test]
        fn easiest_arm_gets_smallest_size(
            acc in proptest::collection::vec(0.0f32..1.0, 3..6),
            total in 30usize..400,
        ) {
            // unique maximum accuracy
            let mut best = 0usize;
            for (i, &a) in acc.iter().enumerate() {
                if a > acc[best] {
                    best = i;
                }
            }
            prop_assume!(acc.iter().enumerate().all(|(i, &a)| i == best || a + 1e-3 < acc[best]));

            let mut state = SamplerState::init_uniform(acc.len(), 1.0).unwrap();
            state.update(&acc.iter().map(|&a| Some(a)).collect::<Vec<_>>()).unwrap();
            let sizes = subbatch_sizes(&state.probabilities(), total, 1).unwrap();
            let min = sizes.iter().copied().min().unwrap();
            prop_assert_eq!(sizes[best], min);
        }

        #[test]
        fn spread_is_monotone_in_update_rate(
            scores in proptest::collection::vec(0.0f32..1.0, 2..8),
            base in 0.2f32..1.5,
            bump in 0.0f32..1.5,
        ) {
            let spread = |ur: f32| {
                let s = SamplerState::from_scores(scores.clone(), ur).unwrap();
                let p = s.probabilities();
                let max = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let min = p.iter().copied().fold(f32::INFINITY, f32::min);
                max - min
            };
            prop_assert!(spread(base + bump) >= spread(base) - 1e-6);
        }

        #[test]
        fn random_allocations_sum_and_respect_floor(
            weights in proptest::collection::vec(0.01f32..1.0, 2..7),
            total in 0usize..600,
            min_size in 0usize..3,
        ) {
            let sum: f32 = weights.iter().sum();
            let p: Vec<f32> = weights.iter().map(|w| w / sum).collect();
            let total = total + p.len() * min_size; // keep feasible
            let sizes = subbatch_sizes(&p, total, min_size).unwrap();
            prop_assert_eq!(sizes.iter().sum::<usize>(), total);
            prop_assert!(sizes.iter().all(|&s| s >= min_size));
        }
    }
}
