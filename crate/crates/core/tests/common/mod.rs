#![allow(dead_code)]

use std::collections::BTreeMap;

use owlgps::buffers::{advance_and_insert, form_meta_batch, Buffer, BufferEntry};
use owlgps::clustering::{assign_clusters, greedy_intersection, Epsilon};
use owlgps::numerics::{grad, Graph, ParamSet, Tensor, Var};
use owlgps::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rows: usize, cols: usize, scale: f64, r: &mut ChaCha8Rng) -> Tensor {
    let v = (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

/// A random two-layer network with its input batch and regression targets.
pub struct SmallNet {
    pub params: ParamSet,
    pub input: Tensor,
    pub target: Tensor,
    pub hidden_act: &'static str,
}

impl SmallNet {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let (n, d, h) = (r.random_range(1..4), r.random_range(1..4), r.random_range(2..5));
        let mut params = ParamSet::new();
        params.insert("w1", uniform(d, h, 1.0, &mut r)).unwrap();
        params.insert("b1", uniform(1, h, 0.5, &mut r)).unwrap();
        params.insert("w2", uniform(h, 1, 1.0, &mut r)).unwrap();
        params.insert("b2", uniform(1, 1, 0.5, &mut r)).unwrap();
        let acts = ["sigmoid", "softplus", "square"];
        SmallNet {
            params,
            input: uniform(n, d, 1.0, &mut r),
            target: uniform(n, 1, 1.0, &mut r),
            hidden_act: acts[r.random_range(0..acts.len())],
        }
    }

    fn record(&self, g: &mut Graph, v: &BTreeMap<String, Var>) -> Result<Var> {
        let x = g.constant(self.input.clone());
        let h = g.matmul(x, v["w1"])?;
        let h = g.add(h, v["b1"])?;
        let h = g.apply(self.hidden_act, h)?;
        let y = g.matmul(h, v["w2"])?;
        let y = g.add(y, v["b2"])?;
        let y = g.sigmoid(y);
        let t = g.constant(self.target.clone());
        let e = g.sub(y, t)?;
        let e = g.square(e);
        Ok(g.mean(e))
    }

    pub fn loss(&self, params: &ParamSet) -> f64 {
        grad(&[params], |g, v| self.record(g, v)).unwrap().0
    }

    /// Largest relative deviation between autodiff and central differences.
    pub fn max_relative_error(&self, step: f64) -> f64 {
        let (_, grads) = grad(&[&self.params], |g, v| self.record(g, v)).unwrap();
        let mut worst: f64 = 0.0;
        for (name, value) in self.params.iter() {
            for i in 0..value.len() {
                let bump = |delta: f64| {
                    let mut vals = value.values().to_vec();
                    vals[i] += delta;
                    let mut p = ParamSet::new();
                    for (n, t) in self.params.iter() {
                        let t = if n == name {
                            Tensor::matrix(value.rows(), value.cols(), vals.clone()).unwrap()
                        } else {
                            t.clone()
                        };
                        p.insert(n.clone(), t).unwrap();
                    }
                    self.loss(&p)
                };
                let fd = (bump(step) - bump(-step)) / (2.0 * step);
                let an = grads[name].values()[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }
}

/// Random GIA instance on an integer lattice with `epsilon = 10`.
///
/// Integer coordinates keep every coverage test exact, and centres on the
/// unit grid (`epsilon / 10`) always reach every attainable covered set.
pub struct GiaInstance {
    pub points: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl GiaInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let n = r.random_range(1..=8);
        let d = r.random_range(1..=2);
        let points = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(0..=60) as f64).collect())
            .collect();
        GiaInstance { points, epsilon: 10.0 }
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_rows(&self.points).unwrap()
    }

    /// Exhaustive grid search for the most points one l-infinity ball covers.
    pub fn oracle_max_cover(&self) -> usize {
        let d = self.points[0].len();
        let step = self.epsilon / 10.0;
        let lo = -self.epsilon;
        let hi = 60.0 + self.epsilon;
        let steps = ((hi - lo) / step).round() as usize;
        let axis: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * step).collect();
        let count = |c: &[f64]| {
            self.points
                .iter()
                .filter(|p| p.iter().zip(c).all(|(a, b)| (a - b).abs() <= self.epsilon))
                .count()
        };
        let mut best = 0;
        if d == 1 {
            for &x in &axis {
                best = best.max(count(&[x]));
            }
        } else {
            for &x in &axis {
                for &y in &axis {
                    best = best.max(count(&[x, y]));
                }
            }
        }
        best
    }

    pub fn greedy_first_round(&self) -> usize {
        greedy_intersection(&self.tensor(), self.epsilon, 1).unwrap().covered[0].len()
    }
}

/// Outcome of the randomized buffer simulation.
#[derive(Debug, Default)]
pub struct BufferSimulation {
    pub steps: usize,
    pub violations: Vec<String>,
}

/// Drives `advance_and_insert` and meta-batch formation with random inputs,
/// checking capacity, lifespan, unique ids, no re-entry after a drop, and
/// that every entry's count equals the number of batches it appeared in.
pub fn simulate_buffers(seed: u64, steps: usize) -> BufferSimulation {
    let mut r = rng(seed);
    let mut core = Buffer::new(10, 20);
    let mut reservoir = Buffer::new(30, 40);
    let mut uses: BTreeMap<usize, usize> = BTreeMap::new();
    let mut dropped = std::collections::BTreeSet::new();
    let mut out = BufferSimulation { steps, ..Default::default() };
    for t in 0..steps {
        let before: std::collections::BTreeSet<usize> = core
            .entries
            .iter()
            .chain(&reservoir.entries)
            .map(|e| e.region_id)
            .collect();
        let mu = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        advance_and_insert(&mut core, &mut reservoir, BufferEntry::new(t, vec![], mu, t), t).unwrap();
        if r.random_bool(0.7) {
            let mus: Vec<Vec<f64>> = core.entries.iter().map(|e| e.relevance_mu.clone()).collect();
            let clusters = assign_clusters(&Tensor::from_rows(&mus).unwrap(), Epsilon::AUTO, 7, 7).unwrap();
            let batch = form_meta_batch(&mut core, &mut reservoir, &clusters, 3, &mut r).unwrap();
            if batch.train.iter().any(|id| batch.test.contains(id)) {
                out.violations.push(format!("step {t}: train and test overlap"));
            }
            for id in batch.all() {
                *uses.entry(*id).or_default() += 1;
            }
        }
        let all: Vec<&BufferEntry> = core.entries.iter().chain(&reservoir.entries).collect();
        let ids: std::collections::BTreeSet<usize> = all.iter().map(|e| e.region_id).collect();
        if ids.len() != all.len() {
            out.violations.push(format!("step {t}: duplicate region ids"));
        }
        if core.len() > core.capacity || reservoir.len() > reservoir.capacity {
            out.violations.push(format!("step {t}: capacity exceeded"));
        }
        if core.entries.iter().any(|e| e.duration > core.lifespan)
            || reservoir.entries.iter().any(|e| e.duration > reservoir.lifespan)
        {
            out.violations.push(format!("step {t}: lifespan exceeded"));
        }
        for e in &all {
            if e.duration != t - e.inserted_at {
                out.violations.push(format!("step {t}: duration drift on {}", e.region_id));
            }
            if e.count != uses.get(&e.region_id).copied().unwrap_or(0) {
                out.violations.push(format!("step {t}: count mismatch on {}", e.region_id));
            }
        }
        // anything gone must never come back
        if !ids.contains(&t) {
            out.violations.push(format!("step {t}: new entry missing"));
        }
        if let Some(id) = ids.iter().find(|id| dropped.contains(*id)) {
            out.violations.push(format!("step {t}: dropped region {id} reappeared"));
        }
        dropped.extend(before.difference(&ids).copied());
    }
    out
}

/// Empirical first-draw frequencies of a two-entry reservoir with exponents 2 and 0.
pub fn reservoir_frequencies(draws: usize, seed: u64) -> ([f64; 2], [f64; 2]) {
    use owlgps::buffers::{reservoir_weights, sample_reservoir};
    let mut reservoir = Buffer::new(30, 40);
    let mut a = BufferEntry::new(0, vec![], vec![0.0], 0);
    a.duration = 4;
    a.count = 1;
    let mut b = BufferEntry::new(1, vec![], vec![0.0], 0);
    b.duration = 0;
    reservoir.entries = vec![a, b];
    let w = reservoir_weights(&reservoir);
    let mut r = rng(seed);
    let mut hits = [0usize; 2];
    for _ in 0..draws {
        let id = sample_reservoir(&reservoir, 1, &mut r)[0];
        hits[id] += 1;
    }
    (
        [hits[0] as f64 / draws as f64, hits[1] as f64 / draws as f64],
        [w[0], w[1]],
    )
}
