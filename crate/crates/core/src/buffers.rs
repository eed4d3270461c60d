//! Two-tier sample memory: a recent core buffer and a reservoir that gives
//! evicted samples a second chance before they are dropped for good.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::numerics::clamped_exp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub region_id: usize,
    pub labels: Vec<u8>,
    /// Relevance mean under the current parameters.
    pub relevance_mu: Vec<f64>,
    pub duration: usize,
    pub count: usize,
    pub inserted_at: usize,
}

impl BufferEntry {
    pub fn new(region_id: usize, labels: Vec<u8>, relevance_mu: Vec<f64>, step: usize) -> Self {
        BufferEntry {
            region_id,
            labels,
            relevance_mu,
            duration: 0,
            count: 0,
            inserted_at: step,
        }
    }

    /// `duration / (count + 1)`, the exponent of the selection weight.
    pub fn priority(&self) -> f64 {
        self.duration as f64 / (self.count as f64 + 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub entries: Vec<BufferEntry>,
    pub capacity: usize,
    pub lifespan: usize,
}

impl Buffer {
    pub fn new(capacity: usize, lifespan: usize) -> Self {
        Buffer {
            entries: Vec::new(),
            capacity,
            lifespan,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, region_id: usize) -> bool {
        self.entries.iter().any(|e| e.region_id == region_id)
    }

    pub fn get(&self, region_id: usize) -> Option<&BufferEntry> {
        self.entries.iter().find(|e| e.region_id == region_id)
    }

    fn take_expired(&mut self) -> Vec<BufferEntry> {
        let lifespan = self.lifespan;
        let (expired, kept): (Vec<_>, Vec<_>) =
            self.entries.drain(..).partition(|e| e.duration > lifespan);
        self.entries = kept;
        expired
    }
}

pub type CoreBuffer = Buffer;
pub type ReservoirBuffer = Buffer;

/// Region ids moved or dropped by one [`advance_and_insert`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvictionReport {
    pub moved_to_reservoir: Vec<usize>,
    pub dropped: Vec<usize>,
}

fn oldest_first(entries: &mut [BufferEntry]) {
    entries.sort_by(|a, b| b.duration.cmp(&a.duration).then(a.region_id.cmp(&b.region_id)));
}

/// Ages both buffers by one step, runs lifespan and capacity eviction, and
/// inserts `new_entry` into the core with zero duration and count.
pub fn advance_and_insert(
    core: &mut CoreBuffer,
    reservoir: &mut ReservoirBuffer,
    mut new_entry: BufferEntry,
    step: usize,
) -> Result<EvictionReport> {
    if core.contains(new_entry.region_id) || reservoir.contains(new_entry.region_id) {
        return Err(Error::DuplicateRegion(new_entry.region_id));
    }
    if core.capacity == 0 {
        return Err(Error::InvalidArgument("core capacity must be positive".into()));
    }
    let mut report = EvictionReport::default();
    for e in core.entries.iter_mut().chain(reservoir.entries.iter_mut()) {
        e.duration += 1;
    }
    let mut expired = core.take_expired();
    oldest_first(&mut expired);
    if core.len() >= core.capacity {
        let victim = core
            .entries
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.duration.cmp(&b.duration).then(b.region_id.cmp(&a.region_id)))
            .map(|(i, _)| i)
            .expect("core is full, so nonempty");
        expired.push(core.entries.remove(victim));
    }
    for e in expired {
        report.moved_to_reservoir.push(e.region_id);
        reservoir.entries.push(e);
    }
    let mut gone = reservoir.take_expired();
    if reservoir.len() > reservoir.capacity {
        oldest_first(&mut reservoir.entries);
        let excess = reservoir.len() - reservoir.capacity;
        gone.extend(reservoir.entries.drain(..excess));
    }
    oldest_first(&mut gone);
    report.dropped = gone.into_iter().map(|e| e.region_id).collect();
    new_entry.duration = 0;
    new_entry.count = 0;
    new_entry.inserted_at = step;
    core.entries.push(new_entry);
    Ok(report)
}

/// One entry per cluster, maximizing `exp(duration / (count + 1))`.
///
/// `clusters` must index the core entries in their current order.
pub fn select_core_batch(core: &CoreBuffer, clusters: &ClusterAssignment) -> Vec<usize> {
    if core.is_empty() {
        return Vec::new();
    }
    let mut picked = Vec::new();
    for members in clusters.members() {
        let best = members
            .iter()
            .filter_map(|&i| core.entries.get(i))
            .max_by(|a, b| {
                clamped_exp(a.priority())
                    .total_cmp(&clamped_exp(b.priority()))
                    .then(b.region_id.cmp(&a.region_id))
            });
        if let Some(e) = best {
            picked.push(e.region_id);
        }
    }
    picked
}

/// Draws `k` reservoir entries without replacement, each draw proportional
/// to `exp(duration / (count + 1))` over what is left.
pub fn sample_reservoir(reservoir: &ReservoirBuffer, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if k >= reservoir.len() {
        return reservoir.entries.iter().map(|e| e.region_id).collect();
    }
    let mut pool: Vec<(usize, f64)> = reservoir
        .entries
        .iter()
        .map(|e| (e.region_id, e.priority()))
        .collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        // subtract the max exponent so weights stay finite
        let top = pool.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = pool.iter().map(|p| clamped_exp(p.1 - top)).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = pool.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= w;
        }
        out.push(pool.remove(chosen).0);
    }
    out
}

/// First-draw probabilities of [`sample_reservoir`].
pub fn reservoir_weights(reservoir: &ReservoirBuffer) -> Vec<f64> {
    let top = reservoir
        .entries
        .iter()
        .map(BufferEntry::priority)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = reservoir
        .entries
        .iter()
        .map(|e| clamped_exp(e.priority() - top))
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaBatch {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl MetaBatch {
    pub fn all(&self) -> impl Iterator<Item = &usize> {
        self.train.iter().chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shuffles `ids`, splits them half/half (odd extra goes to train), and
/// increments the count of every used entry in either buffer.
pub fn split_and_count(
    core: &mut CoreBuffer,
    reservoir: &mut ReservoirBuffer,
    mut ids: Vec<usize>,
    rng: &mut impl Rng,
) -> Result<MetaBatch> {
    let mut seen = BTreeSet::new();
    ids.retain(|id| seen.insert(*id));
    if ids.is_empty() {
        return Err(Error::Empty("meta-batch"));
    }
    ids.shuffle(rng);
    let n_train = ids.len().div_ceil(2);
    let test = ids.split_off(n_train);
    let batch = MetaBatch { train: ids, test };
    for id in batch.all() {
        for e in core.entries.iter_mut().chain(reservoir.entries.iter_mut()) {
            if e.region_id == *id {
                e.count += 1;
            }
        }
    }
    Ok(batch)
}

/// Core picks per cluster plus `k_res` reservoir draws, split into train/test.
pub fn form_meta_batch(
    core: &mut CoreBuffer,
    reservoir: &mut ReservoirBuffer,
    clusters: &ClusterAssignment,
    k_res: usize,
    rng: &mut impl Rng,
) -> Result<MetaBatch> {
    let mut ids = select_core_batch(core, clusters);
    ids.extend(sample_reservoir(reservoir, k_res, rng));
    split_and_count(core, reservoir, ids, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterAssignment;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(id: usize, duration: usize, count: usize) -> BufferEntry {
        BufferEntry {
            region_id: id,
            labels: vec![],
            relevance_mu: vec![0.0],
            duration,
            count,
            inserted_at: 0,
        }
    }

    fn one_cluster(n: usize) -> ClusterAssignment {
        ClusterAssignment {
            centers: vec![vec![0.0]],
            covered: vec![(0..n).collect()],
            residual: vec![],
            epsilon: 1.0,
        }
    }

    #[test]
    fn insert_into_empty() {
        let mut core = Buffer::new(10, 20);
        let mut res = Buffer::new(30, 40);
        let r = advance_and_insert(&mut core, &mut res, entry(7, 3, 3), 0).unwrap();
        assert_eq!(core.len(), 1);
        assert_eq!(core.entries[0].duration, 0);
        assert_eq!(core.entries[0].count, 0);
        assert_eq!(r, EvictionReport::default());
        assert!(matches!(
            advance_and_insert(&mut core, &mut res, entry(7, 0, 0), 1),
            Err(Error::DuplicateRegion(7))
        ));
    }

    #[test]
    fn full_core_moves_expired_entry() {
        let mut core = Buffer::new(10, 20);
        let mut res = Buffer::new(30, 40);
        core.entries = (0..10).map(|i| entry(i, if i == 4 { 20 } else { 1 }, 0)).collect();
        let r = advance_and_insert(&mut core, &mut res, entry(99, 0, 0), 5).unwrap();
        assert_eq!(r.moved_to_reservoir, vec![4]);
        assert_eq!(core.len(), 10);
        assert!(res.contains(4));
        assert!(core.contains(99));
    }

    #[test]
    fn capacity_pressure_evicts_largest_duration() {
        let mut core = Buffer::new(3, 20);
        let mut res = Buffer::new(30, 40);
        core.entries = vec![entry(1, 2, 0), entry(2, 5, 0), entry(3, 1, 0)];
        let r = advance_and_insert(&mut core, &mut res, entry(4, 0, 0), 9).unwrap();
        assert_eq!(r.moved_to_reservoir, vec![2]);
    }

    #[test]
    fn core_choice_by_priority() {
        let mut core = Buffer::new(10, 20);
        core.entries = vec![entry(1, 1, 0), entry(2, 4, 1)];
        assert_eq!(select_core_batch(&core, &one_cluster(2)), vec![2]);
        core.entries = vec![entry(5, 3, 0)];
        assert_eq!(select_core_batch(&core, &one_cluster(1)), vec![5]);
        core.entries = vec![entry(9, 2, 1), entry(3, 2, 1)];
        assert_eq!(select_core_batch(&core, &one_cluster(2)), vec![3]);
        assert!(select_core_batch(&Buffer::new(1, 1), &one_cluster(0)).is_empty());
    }

    #[test]
    fn reservoir_sampling_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut res = Buffer::new(30, 40);
        assert!(sample_reservoir(&res, 0, &mut rng).is_empty());
        res.entries = vec![entry(1, 2, 0), entry(2, 0, 0)];
        let w = reservoir_weights(&res);
        let e2 = 2f64.exp();
        assert!((w[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((w[0] - 0.8808).abs() < 1e-4);
        assert!(sample_reservoir(&res, 0, &mut rng).is_empty());
        assert_eq!(sample_reservoir(&res, 5, &mut rng), vec![1, 2]);
        res.entries = (0..4).map(|i| entry(i, 3, 1)).collect();
        assert!(reservoir_weights(&res).iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn meta_batch_split_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut core = Buffer::new(10, 20);
        let mut res = Buffer::new(30, 40);
        core.entries = vec![entry(1, 0, 0)];
        let b = form_meta_batch(&mut core, &mut res, &one_cluster(1), 3, &mut rng).unwrap();
        assert_eq!(b.train, vec![1]);
        assert!(b.test.is_empty());
        assert_eq!(core.entries[0].count, 1);

        core.entries = (0..7).map(|i| entry(i, i, 0)).collect();
        res.entries = (10..20).map(|i| entry(i, 25, 0)).collect();
        let clusters = ClusterAssignment {
            centers: vec![vec![0.0]; 7],
            covered: (0..7).map(|i| vec![i]).collect(),
            residual: vec![],
            epsilon: 1.0,
        };
        let b = form_meta_batch(&mut core, &mut res, &clusters, 3, &mut rng).unwrap();
        assert_eq!((b.train.len(), b.test.len()), (5, 5));
        assert!(b.train.iter().all(|id| !b.test.contains(id)));
        assert_eq!(res.entries.iter().filter(|e| e.count == 1).count(), 3);

        let mut empty_core = Buffer::new(10, 20);
        let mut empty_res = Buffer::new(30, 40);
        assert!(form_meta_batch(&mut empty_core, &mut empty_res, &one_cluster(0), 3, &mut rng).is_err());
    }
}
