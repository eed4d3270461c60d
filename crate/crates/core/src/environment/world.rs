use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RegionRaster;
use crate::numerics::sigmoid;
use crate::rng::{self, StreamRng};

/// Generator settings for a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub regions: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub concepts: usize,
    /// Target prevalence range `[lo, hi]` that every region must land in.
    pub prevalence: [f64; 2],
    /// Phase advance of the true relevance per region index; also the
    /// l-infinity bound on the change between neighbouring regions.
    pub drift: f64,
    /// Share of each concept's relevance that is fixed across the world; the
    /// rest drifts with region index.
    pub stationary: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            regions: 200,
            height: 32,
            width: 32,
            channels: 16,
            concepts: 8,
            prevalence: [0.05, 0.25],
            drift: 0.05,
            stationary: 0.7,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.prevalence;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("prevalence range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1")));
        }
        if self.concepts < 2 {
            return Err(Error::Config("at least two concepts are required".into()));
        }
        if self.channels < self.concepts {
            return Err(Error::Config(format!(
                "{} channels cannot cover {} concept groups",
                self.channels, self.concepts
            )));
        }
        if self.regions == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("world dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.stationary) {
            return Err(Error::Config("stationary share must lie in [0, 1]".into()));
        }
        if !(self.drift.is_finite() && self.drift >= 0.0) {
            return Err(Error::Config("drift must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Channels dealt round-robin-free into contiguous, near-equal groups.
    pub fn channel_groups(&self) -> Vec<Vec<usize>> {
        let (c, k) = (self.channels, self.concepts);
        (0..k)
            .map(|g| (g * c / k..(g + 1) * c / k).collect())
            .collect()
    }
}

/// The region pool with hidden labels, budget and query bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    regions: Vec<RegionRaster>,
    relevance: Vec<Option<Vec<f64>>>,
    labels: Vec<Vec<u8>>,
    queried: BTreeSet<usize>,
    budget: usize,
    spent: usize,
}

impl World {
    pub(crate) fn from_parts(
        regions: Vec<RegionRaster>,
        relevance: Vec<Option<Vec<f64>>>,
        labels: Vec<Vec<u8>>,
    ) -> Result<World> {
        if regions.len() != labels.len() || regions.len() != relevance.len() {
            return Err(Error::Shape("regions, labels and relevance differ in length".into()));
        }
        for (r, l) in regions.iter().zip(&labels) {
            if l.len() != r.pixel_count() {
                return Err(Error::Shape(format!(
                    "region {}: {} labels for {} pixels",
                    r.region_id,
                    l.len(),
                    r.pixel_count()
                )));
            }
            if let Some(bad) = l.iter().find(|&&v| v > 2) {
                return Err(Error::Dataset(format!("region {}: label {bad} outside {{0,1,2}}", r.region_id)));
            }
        }
        if regions.windows(2).any(|w| w[0].region_id >= w[1].region_id) {
            return Err(Error::InvalidArgument("region ids must be strictly increasing".into()));
        }
        Ok(World {
            regions,
            relevance,
            labels,
            queried: BTreeSet::new(),
            budget: usize::MAX,
            spent: 0,
        })
    }

    pub fn regions(&self) -> &[RegionRaster] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    fn index_of(&self, region_id: usize) -> Result<usize> {
        self.regions
            .binary_search_by_key(&region_id, |r| r.region_id)
            .map_err(|_| Error::UnknownRegion(region_id))
    }

    pub fn region(&self, region_id: usize) -> Result<&RegionRaster> {
        Ok(&self.regions[self.index_of(region_id)?])
    }

    /// Hidden relevance vector; `None` for ingested datasets.
    pub fn true_relevance(&self, region_id: usize) -> Result<Option<&[f64]>> {
        Ok(self.relevance[self.index_of(region_id)?].as_deref())
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn spent(&self) -> usize {
        self.spent
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget - self.spent
    }

    pub fn set_budget(&mut self, budget: usize) -> Result<()> {
        if budget < self.spent {
            return Err(Error::InvalidArgument(format!(
                "budget {budget} is below the {} queries already spent",
                self.spent
            )));
        }
        self.budget = budget;
        Ok(())
    }

    pub fn is_queried(&self, region_id: usize) -> bool {
        self.queried.contains(&region_id)
    }

    pub fn queried(&self) -> impl Iterator<Item = usize> + '_ {
        self.queried.iter().copied()
    }

    /// Ids of regions still hidden, ascending.
    pub fn unqueried(&self) -> Vec<usize> {
        self.regions
            .iter()
            .map(|r| r.region_id)
            .filter(|id| !self.queried.contains(id))
            .collect()
    }

    /// Reveals a region's labels at unit cost.
    pub fn query(&mut self, region_id: usize) -> Result<(Vec<u8>, usize)> {
        let idx = self.index_of(region_id)?;
        if self.queried.contains(&region_id) {
            return Err(Error::AlreadyQueried(region_id));
        }
        if self.spent + 1 > self.budget {
            return Err(Error::BudgetExhausted { budget: self.budget });
        }
        self.queried.insert(region_id);
        self.spent += 1;
        Ok((self.labels[idx].clone(), 1))
    }

    /// Splits into the regions before `at` (by position) and the rest,
    /// both unqueried with unlimited budget.
    pub fn split_at(&self, at: usize) -> Result<(World, World)> {
        if at > self.len() {
            return Err(Error::InvalidArgument(format!("split {at} beyond {} regions", self.len())));
        }
        let part = |range: std::ops::Range<usize>| {
            World::from_parts(
                self.regions[range.clone()].to_vec(),
                self.relevance[range.clone()].to_vec(),
                self.labels[range].to_vec(),
            )
        };
        Ok((part(0..at)?, part(at..self.len())?))
    }

    /// Labels of every region for dataset export; not part of the query surface.
    pub(crate) fn all_labels(&self) -> &[Vec<u8>] {
        &self.labels
    }
}

const OCTAVES: [(usize, f64); 2] = [(4, 0.65), (8, 0.35)];
/// How far a context channel's level moves per unit of relevance.
const CONTEXT_SCALE: f64 = 0.45;
const CONTEXT_TEXTURE: f64 = 0.1;
const DRIVER_STRETCH: f64 = 4.0;
const LOGIT_GAIN: f64 = 20.0;
const BISECT_STEPS: usize = 50;
const OFFSET_RANGE: f64 = 20.0;

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise in `[0, 1]`: bilinear, smoothstepped lattice noise over two octaves.
fn value_noise(height: usize, width: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    for (cells, weight) in OCTAVES {
        let cells = cells.min(height.max(width)).max(1);
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random()).collect();
        let at = |i: usize, j: usize| lattice[i * (cells + 1) + j];
        for r in 0..height {
            let y = r as f64 / height as f64 * cells as f64;
            let (y0, fy) = (y.floor() as usize, smoothstep(y.fract()));
            for c in 0..width {
                let x = c as f64 / width as f64 * cells as f64;
                let (x0, fx) = (x.floor() as usize, smoothstep(x.fract()));
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                out[r * width + c] += weight * (top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Spatial driver channel: value noise re-centred on 0.5 and stretched.
fn driver_channel(height: usize, width: usize, rng: &mut StreamRng) -> Vec<f64> {
    let v = value_noise(height, width, rng);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.into_iter()
        .map(|x| (0.5 + DRIVER_STRETCH * (x - mean)).clamp(0.0, 1.0))
        .collect()
}

/// Context channel: a level set by the concept's relevance plus mild texture.
fn context_channel(height: usize, width: usize, relevance: f64, rng: &mut StreamRng) -> Vec<f64> {
    value_noise(height, width, rng)
        .into_iter()
        .map(|v| (0.5 + CONTEXT_SCALE * relevance + CONTEXT_TEXTURE * (v - 0.5)).clamp(0.0, 1.0))
        .collect()
}

/// Fraction of pixels with `u < sigmoid(gain * s + bias)`.
fn prevalence(scores: &[f64], uniforms: &[f64], gain: f64, bias: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(uniforms)
        .filter(|(s, u)| **u < sigmoid(gain * **s + bias))
        .count();
    hits as f64 / scores.len() as f64
}

/// Smallest-magnitude bias shift on `[-range, range]` for which `pred` holds,
/// assuming `pred` flips once along the interval in the direction given.
fn bisect(mut inside: f64, mut outside: f64, pred: impl Fn(f64) -> bool) -> Option<f64> {
    if !pred(inside) {
        return None;
    }
    for _ in 0..BISECT_STEPS {
        let mid = 0.5 * (inside + outside);
        if pred(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Some(inside)
}

/// Builds a seeded world whose labels follow the drifting true relevance.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let (h, w, c, k) = (config.height, config.width, config.channels, config.concepts);
    let p = h * w;
    let groups = config.channel_groups();
    let [lo, hi] = config.prevalence;
    let mut rng = rng::stream(config.seed, "world");
    let phases: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * TAU).collect();
    let base: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();

    let mut rasters = Vec::with_capacity(config.regions);
    let mut relevance = Vec::with_capacity(config.regions);
    let mut scores = Vec::with_capacity(config.regions);
    let mut uniforms = Vec::with_capacity(config.regions);
    for j in 0..config.regions {
        let rho: Vec<f64> = phases
            .iter()
            .zip(&base)
            .map(|(phi, b)| config.stationary * b + (1.0 - config.stationary) * (config.drift * j as f64 + phi).sin())
            .collect();
        let mut channels = vec![0.0; c * p];
        let mut concept = vec![0.0; p * k];
        for (g, group) in groups.iter().enumerate() {
            for (slot, &ch) in group.iter().enumerate() {
                let plane = match (slot, group.len()) {
                    (0, 1) => {
                        let d = driver_channel(h, w, &mut rng);
                        let x = context_channel(h, w, rho[g], &mut rng);
                        d.iter().zip(&x).map(|(a, b)| 0.5 * (a + b)).collect()
                    }
                    (0, _) => driver_channel(h, w, &mut rng),
                    _ => context_channel(h, w, rho[g], &mut rng),
                };
                for (i, v) in plane.into_iter().enumerate() {
                    let v = v as f32 as f64;
                    channels[ch * p + i] = v;
                    concept[i * k + g] += v / group.len() as f64;
                }
            }
        }
        let s: Vec<f64> = (0..p)
            .map(|i| (0..k).map(|g| rho[g] * concept[i * k + g]).sum())
            .collect();
        uniforms.push((0..p).map(|_| rng.random::<f64>()).collect::<Vec<f64>>());
        scores.push(s);
        rasters.push(RegionRaster::new(j, h, w, c, channels, groups.clone())?);
        relevance.push(Some(rho));
    }

    // gain from the typical within-region spread, so labels are sharp inside a region
    let all: Vec<f64> = scores.iter().flatten().copied().collect();
    let within = scores
        .iter()
        .map(|s| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
        })
        .sum::<f64>()
        / scores.len() as f64;
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let gain = LOGIT_GAIN / within.max(1e-12);
    let lo_s = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_s = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = OFFSET_RANGE + gain * (hi_s - lo_s);
    let all_u: Vec<f64> = uniforms.iter().flatten().copied().collect();
    let mid = 0.5 * (lo + hi);
    let bias = bisect(-range - gain * mean, range - gain * mean, |b| {
        prevalence(&all, &all_u, gain, b) <= mid
    })
    .ok_or_else(|| Error::Calibration {
        region: 0,
        detail: "global bias bracket does not contain the target prevalence".into(),
    })?;

    let mut labels = Vec::with_capacity(config.regions);
    for (j, (s, u)) in scores.iter().zip(&uniforms).enumerate() {
        let prev = |offset: f64| prevalence(s, u, gain, bias + offset);
        let current = prev(0.0);
        let offset = if current < lo {
            bisect(range, 0.0, |o| prev(o) >= lo)
        } else if current > hi {
            bisect(-range, 0.0, |o| prev(o) <= hi)
        } else {
            Some(0.0)
        };
        let offset = offset
            .filter(|&o| (lo..=hi).contains(&prev(o)))
            .ok_or_else(|| Error::Calibration {
                region: j,
                detail: format!("prevalence {current:.4} cannot be moved into [{lo}, {hi}]"),
            })?;
        // same expression as the calibration check, so boundary pixels agree
        let b = bias + offset;
        labels.push(
            s.iter()
                .zip(u)
                .map(|(s, u)| u8::from(*u < sigmoid(gain * s + b)))
                .collect(),
        );
    }
    World::from_parts(rasters, relevance, labels)
}

/// Relevance-weighted concept maps, the generator's label score before calibration.
pub fn oracle_score(region: &RegionRaster, relevance: &[f64]) -> Vec<f64> {
    let p = region.pixel_count();
    let mut s = vec![0.0; p];
    for (g, group) in region.channel_groups.iter().enumerate() {
        for &ch in group {
            for (i, v) in region.plane(ch).iter().enumerate() {
                s[i] += relevance[g] * v / group.len() as f64;
            }
        }
    }
    s
}
