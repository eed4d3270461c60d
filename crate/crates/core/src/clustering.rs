//! Greedy Intersection clustering of relevance vectors.
//!
//! Stage 1 builds, per dimension, the maximal runs of sorted coordinates
//! that fit in a window of width `2 * epsilon`. Stage 2 picks one run per
//! dimension so that the intersection of their members is as large as
//! possible; those points are exactly the ones an axis-aligned
//! `epsilon`-hypercube can cover together. The search is exhaustive over
//! list combinations (exponential in the dimension, with branch-and-bound
//! pruning), which is why inputs are first reduced by PCA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pca_project, Tensor};

/// Default reduced dimensionality before clustering.
pub const DEFAULT_PCA_DIM: usize = 7;

/// Radius used when every pairwise distance is zero.
pub const DEGENERATE_EPSILON: f64 = 1e-6;

/// Points of one dimension that a single center coordinate can cover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverList {
    pub dimension: usize,
    /// Point indices in ascending coordinate order.
    pub members: Vec<usize>,
    /// Any center coordinate in `[low, high]` covers every member.
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub centers: Vec<Vec<f64>>,
    /// Disjoint covered point sets, one per center, ascending.
    pub covered: Vec<Vec<usize>>,
    /// Uncovered point index -> nearest center (l-infinity).
    pub residual: Vec<(usize, usize)>,
    pub epsilon: f64,
}

impl ClusterAssignment {
    /// Covered points plus residual points of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = self.covered.clone();
        for &(point, center) in &self.residual {
            out[center].push(point);
        }
        for m in out.iter_mut() {
            m.sort_unstable();
        }
        out
    }

    pub fn cluster_of(&self, point: usize) -> Option<usize> {
        self.covered
            .iter()
            .position(|c| c.binary_search(&point).is_ok())
            .or_else(|| {
                self.residual
                    .iter()
                    .find(|(p, _)| *p == point)
                    .map(|&(_, c)| c)
            })
    }
}

/// Stage-1 output for one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionTrace {
    /// The run ending at each sorted position, before absorption.
    pub runs: Vec<Vec<usize>>,
    /// Maximal runs after absorption.
    pub lists: Vec<CoverList>,
}

/// Builds cover lists over `coords` (ascending) for dimension `dimension`.
/// Members are positions into `coords`.
pub fn dimension_trace(coords: &[f64], epsilon: f64, dimension: usize) -> DimensionTrace {
    let n = coords.len();
    let mut runs = Vec::with_capacity(n);
    let mut lists: Vec<CoverList> = Vec::new();
    for i in 0..n {
        let mut start = i;
        while start > 0 && coords[i] <= coords[start - 1] + 2.0 * epsilon {
            start -= 1;
        }
        let members: Vec<usize> = (start..=i).collect();
        runs.push(members.clone());
        let list = CoverList {
            dimension,
            low: coords[i] - epsilon,
            high: coords[start] + epsilon,
            members,
        };
        // runs are contiguous and their starts never decrease, so the previous
        // list is a subset of this one exactly when both start at the same place
        match lists.last_mut() {
            Some(last) if last.members[0] == start => *last = list,
            _ => lists.push(list),
        }
    }
    DimensionTrace { runs, lists }
}

/// Maximal co-coverable runs of the ascending `coords`.
pub fn dimension_lists(coords: &[f64], epsilon: f64) -> Result<Vec<CoverList>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if coords.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("coordinates must be ascending".into()));
    }
    Ok(dimension_trace(coords, epsilon, 0).lists)
}

#[derive(Clone, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64).max(1)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (w, &word) in self.0.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let b = word.trailing_zeros() as usize;
                out.push(w * 64 + b);
                word &= word - 1;
            }
        }
        out
    }
}

struct Search<'a> {
    lists: &'a [Vec<Bits>],
    best: Option<(usize, Vec<usize>)>,
}

impl Search<'_> {
    fn visit(&mut self, dim: usize, acc: Bits) {
        let size = acc.count();
        if let Some((best, _)) = &self.best {
            if size < *best {
                return;
            }
        }
        if size == 0 {
            return;
        }
        if dim == self.lists.len() {
            let members = acc.indices();
            let better = match &self.best {
                None => true,
                Some((b, m)) => size > *b || (size == *b && members < *m),
            };
            if better {
                self.best = Some((size, members));
            }
            return;
        }
        let mut seen: Vec<Bits> = Vec::new();
        for list in &self.lists[dim] {
            let next = acc.and(list);
            if seen.contains(&next) {
                continue;
            }
            seen.push(next.clone());
            self.visit(dim + 1, next);
        }
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs `k_rounds` of greedy maximum-intersection covering over the rows of `points`.
pub fn greedy_intersection(points: &Tensor, epsilon: f64, k_rounds: usize) -> Result<ClusterAssignment> {
    let (n, d) = (points.rows(), points.cols());
    if n == 0 || points.is_empty() {
        return Err(Error::Empty("greedy_intersection needs at least one point"));
    }
    if k_rounds == 0 {
        return Err(Error::InvalidArgument("k_rounds must be at least 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut centers = Vec::new();
    let mut covered = Vec::new();
    for _ in 0..k_rounds {
        if remaining.is_empty() {
            break;
        }
        let mut per_dim = Vec::with_capacity(d);
        for dim in 0..d {
            let mut order = remaining.clone();
            order.sort_by(|&a, &b| points.get(a, dim).total_cmp(&points.get(b, dim)).then(a.cmp(&b)));
            let coords: Vec<f64> = order.iter().map(|&i| points.get(i, dim)).collect();
            let trace = dimension_trace(&coords, epsilon, dim);
            let sets: Vec<Bits> = trace
                .lists
                .iter()
                .map(|l| {
                    let mut b = Bits::empty(n);
                    for &pos in &l.members {
                        b.set(order[pos]);
                    }
                    b
                })
                .collect();
            per_dim.push(sets);
        }
        let mut start = Bits::empty(n);
        for &i in &remaining {
            start.set(i);
        }
        let mut search = Search {
            lists: &per_dim,
            best: None,
        };
        search.visit(0, start);
        let (_, members) = search.best.expect("a single remaining point always covers itself");
        let mut center = Vec::with_capacity(d);
        for dim in 0..d {
            let vals: Vec<f64> = members.iter().map(|&i| points.get(i, dim)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let lo = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - epsilon;
            let hi = vals.iter().copied().fold(f64::INFINITY, f64::min) + epsilon;
            center.push(mean.clamp(lo.min(hi), hi));
        }
        remaining.retain(|i| members.binary_search(i).is_err());
        centers.push(center);
        covered.push(members);
    }
    let residual = remaining
        .iter()
        .map(|&i| {
            let row = points.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dist = linf(row, center);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            (i, best)
        })
        .collect();
    Ok(ClusterAssignment {
        centers,
        covered,
        residual,
        epsilon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Epsilon {
    pub const AUTO: Epsilon = Epsilon::Auto(AutoTag::Auto);
}

/// Half the median pairwise l-infinity distance between rows.
pub fn auto_epsilon(points: &Tensor) -> f64 {
    let n = points.rows();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(linf(points.row(i), points.row(j)));
        }
    }
    if dists.is_empty() {
        return DEGENERATE_EPSILON;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 {
        median / 2.0
    } else {
        DEGENERATE_EPSILON
    }
}

/// PCA-reduces `relevance_mus` (`N x K`) and clusters the projection.
pub fn assign_clusters(
    relevance_mus: &Tensor,
    epsilon: Epsilon,
    k_rounds: usize,
    pca_dim: usize,
) -> Result<ClusterAssignment> {
    let projection = pca_project(relevance_mus, pca_dim)?;
    let eps = match epsilon {
        Epsilon::Fixed(e) => e,
        Epsilon::Auto(_) => auto_epsilon(&projection.projected),
    };
    greedy_intersection(&projection.projected, eps, k_rounds)
}
