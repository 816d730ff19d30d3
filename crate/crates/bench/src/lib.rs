//! Synthetic workloads shared by the benchmarks.

use acae_core::data::split_leave_one_out;
use acae_core::training::init_params;
use acae_core::{ActivationKind, BinaryDataset, ModelParams, RngStream, SplitSpec};

pub struct Workload {
    pub params: ModelParams,
    pub profiles: Vec<Vec<usize>>,
    pub split: SplitSpec,
}

/// Random sparse profiles of roughly `per_user` items each.
pub fn workload(users: usize, items: usize, k: usize, per_user: usize, seed: u64) -> Workload {
    let mut rng = RngStream::new(seed);
    let positives: Vec<Vec<usize>> = (0..users)
        .map(|_| {
            let n = 2 + rng.below(2 * per_user);
            rng.sample_indices(items, n.min(items))
        })
        .collect();
    let ds = BinaryDataset::from_positives(items, positives, None).expect("valid synthetic data");
    let split = split_leave_one_out(&ds, seed, 200.min(items / 2)).expect("split");
    let profiles = split.users.iter().map(|s| s.train.clone()).collect();
    let params = init_params(
        users,
        items,
        k,
        ActivationKind::Sigmoid,
        ActivationKind::Sigmoid,
        0.1,
        &mut rng,
    )
    .expect("positive dims");
    Workload { params, profiles, split }
}
