use std::collections::HashSet;

use cdtl::sampler::{benchmark_pools, PoolHandles, PoolId};
use cdtl::seed::derive_seed;
use cdtl::{sample_epoch, Error, Mode, Tensor, TrainingPools, Triplet};

fn pools(s_nodef: usize, s_def: usize, t_nodef: usize) -> TrainingPools {
    let img = |i: usize| Tensor::filled(&[2, 2, 1], i as f32);
    TrainingPools {
        source_no_defect: (0..s_nodef).map(img).collect(),
        source_defect: (0..s_def).map(img).collect(),
        target_no_defect: (0..t_nodef).map(img).collect(),
    }
}

/// Runs `epochs` epochs of `per_epoch` triplets; returns every triplet.
fn simulate(
    handles: &PoolHandles,
    epochs: u64,
    per_epoch: usize,
    used: &mut HashSet<Triplet>,
) -> Vec<Triplet> {
    let mut all = Vec::new();
    for e in 0..epochs {
        all.extend(sample_epoch(handles, per_epoch, derive_seed(17, e), used).unwrap());
    }
    all
}

#[test]
fn hundred_fifty_epochs_never_repeat_a_constellation() {
    let data = pools(10, 10, 10);
    for (mode, capacity) in [
        (Mode::Ours, 1000),
        (Mode::Bench1, 900),
        (Mode::Bench2, 3800),
    ] {
        let handles = benchmark_pools(mode, &data).unwrap();
        assert_eq!(handles.capacity(), capacity, "{mode}");
        let mut used = HashSet::new();
        let all = simulate(&handles, 150, 6, &mut used);
        assert_eq!(all.len(), 900);
        let distinct: HashSet<Triplet> = all.iter().copied().collect();
        assert_eq!(distinct.len(), all.len(), "{mode}: duplicate constellation");
        assert!(
            all.iter().all(|t| handles.is_valid(t)),
            "{mode}: invalid index"
        );
        assert_eq!(used, distinct);
    }
}

#[test]
fn capacity_error_exactly_at_exhaustion() {
    let data = pools(10, 10, 10);
    let handles = benchmark_pools(Mode::Ours, &data).unwrap();
    let mut used = HashSet::new();
    simulate(&handles, 150, 6, &mut used);

    let mut probe = used.clone();
    assert!(matches!(
        sample_epoch(&handles, 101, 1, &mut probe),
        Err(Error::Capacity {
            requested: 101,
            remaining: 100
        })
    ));
    assert_eq!(probe, used, "a failed epoch leaves the used set alone");
    let last = sample_epoch(&handles, 100, 1, &mut used).unwrap();
    assert_eq!(last.len(), 100);
    assert_eq!(used.len(), 1000);
    assert!(matches!(
        sample_epoch(&handles, 1, 2, &mut used),
        Err(Error::Capacity {
            requested: 1,
            remaining: 0
        })
    ));

    let bench1 = benchmark_pools(Mode::Bench1, &data).unwrap();
    let mut used = HashSet::new();
    simulate(&bench1, 150, 6, &mut used);
    assert!(matches!(
        sample_epoch(&bench1, 1, 3, &mut used),
        Err(Error::Capacity { .. })
    ));
}

#[test]
fn five_epochs_of_hundred_are_distinct() {
    let data = pools(10, 10, 10);
    let handles = benchmark_pools(Mode::Bench2, &data).unwrap();
    let mut used = HashSet::new();
    let all = simulate(&handles, 5, 100, &mut used);
    assert_eq!(all.iter().copied().collect::<HashSet<_>>().len(), 500);
}

#[test]
fn shared_pools_never_pair_a_sample_with_itself() {
    let data = pools(3, 4, 5);
    for mode in [Mode::Bench1, Mode::Bench2] {
        let handles = benchmark_pools(mode, &data).unwrap();
        assert!(handles.shared_anchor_positive());
        let mut used = HashSet::new();
        let all = sample_epoch(&handles, handles.capacity() as usize, 4, &mut used).unwrap();
        assert!(all.iter().all(|t| t.a != t.p), "{mode}");
    }
}

#[test]
fn pool_assignment_per_mode() {
    let data = pools(4, 5, 6);
    let ours = benchmark_pools(Mode::Ours, &data).unwrap();
    assert_eq!(
        (ours.anchors.id, ours.positives.id, ours.negatives.id),
        (
            PoolId::SourceNoDefect,
            PoolId::TargetNoDefect,
            PoolId::SourceDefect
        )
    );
    let b1 = benchmark_pools(Mode::Bench1, &data).unwrap();
    assert_eq!(
        (b1.anchors.id, b1.positives.id),
        (PoolId::SourceNoDefect, PoolId::SourceNoDefect)
    );
    let b2 = benchmark_pools(Mode::Bench2, &data).unwrap();
    assert_eq!(b2.anchors.id, PoolId::SourceTargetNoDefect);
    assert_eq!(b2.anchors.size, 10);
    assert_eq!(b2.negatives.id, PoolId::SourceDefect);
    // union indices run through source first, then target
    assert_eq!(
        data.image(PoolId::SourceTargetNoDefect, 4),
        &data.target_no_defect[0]
    );
}

#[test]
fn sampling_is_deterministic_in_seed() {
    let data = pools(10, 10, 10);
    let handles = benchmark_pools(Mode::Ours, &data).unwrap();
    let a = sample_epoch(&handles, 50, 8, &mut HashSet::new()).unwrap();
    let b = sample_epoch(&handles, 50, 8, &mut HashSet::new()).unwrap();
    let c = sample_epoch(&handles, 50, 9, &mut HashSet::new()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn empty_pools_are_rejected() {
    assert!(matches!(
        benchmark_pools(Mode::Ours, &pools(3, 3, 0)),
        Err(Error::Dataset(_))
    ));
    assert!(matches!(
        benchmark_pools(Mode::Bench1, &pools(1, 3, 3)),
        Err(Error::Dataset(_))
    ));
}
