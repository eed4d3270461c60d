use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gram_schmidt, Tensor};
use crate::rng;

/// Length of the pooled per-concept statistics vector.
pub const POOLED_DIM: usize = 8;
const HIST_BINS: usize = 4;

/// One geospatial patch: `C` channel planes of `H x W` pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRaster {
    pub region_id: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-major planes, `channels[c * H * W + row * W + col]`.
    pub channels: Vec<f64>,
    pub channel_count: usize,
    /// Partition of channel indices into concept groups.
    pub channel_groups: Vec<Vec<usize>>,
}

impl RegionRaster {
    pub fn new(
        region_id: usize,
        height: usize,
        width: usize,
        channel_count: usize,
        channels: Vec<f64>,
        channel_groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if channels.len() != height * width * channel_count {
            return Err(Error::Shape(format!(
                "region {region_id}: {} values for {channel_count} channels of {height}x{width}",
                channels.len()
            )));
        }
        if let Some(index) = channels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut seen = vec![false; channel_count];
        for g in &channel_groups {
            for &c in g {
                if c >= channel_count || seen[c] {
                    return Err(Error::InvalidArgument(format!(
                        "region {region_id}: channel {c} is out of range or in two groups"
                    )));
                }
                seen[c] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "region {region_id}: some channel belongs to no concept group"
            )));
        }
        Ok(RegionRaster {
            region_id,
            height,
            width,
            channels,
            channel_count,
            channel_groups,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn concept_count(&self) -> usize {
        self.channel_groups.len()
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let p = self.pixel_count();
        &self.channels[channel * p..(channel + 1) * p]
    }
}

/// Frozen featurizer configuration (never trained).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub seed: u64,
}

impl FeaturizerConfig {
    /// The `D x D` projection applied to pooled statistics.
    pub fn projection(&self) -> Tensor {
        let mut r = rng::stream(self.seed, "featurizer");
        let scale = 1.0 / (POOLED_DIM as f64).sqrt();
        let values = (0..POOLED_DIM * POOLED_DIM)
            .map(|_| r.random_range(-1.0..=1.0) * scale)
            .collect();
        Tensor::from_parts(POOLED_DIM, POOLED_DIM, values)
    }
}

/// Per-region concept representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptField {
    pub height: usize,
    pub width: usize,
    /// `K x D` pooled concept vectors.
    pub pooled: Tensor,
    /// `P x K` per-pixel activations; column `k` is concept `k`'s standardized map.
    pub per_pixel: Tensor,
    pub orthogonalized: bool,
    /// Rows flagged linearly dependent by the orthogonalization.
    pub dependent: Vec<bool>,
}

impl ConceptField {
    pub fn concept_count(&self) -> usize {
        self.pooled.rows()
    }

    pub fn pixel_count(&self) -> usize {
        self.per_pixel.rows()
    }

    /// Activation map of concept `k` in row-major pixel order.
    pub fn concept_map(&self, k: usize) -> Vec<f64> {
        (0..self.pixel_count())
            .map(|i| self.per_pixel.get(i, k))
            .collect()
    }
}

/// Mean, std, min, max and four histogram-bin fractions over `[0, 1]`.
pub(crate) fn group_statistics(values: &[f64]) -> [f64; POOLED_DIM] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut hist = [0.0; HIST_BINS];
    for &v in values {
        let bin = ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        hist[bin] += 1.0;
    }
    [
        mean,
        var.sqrt(),
        min,
        max,
        hist[0] / n,
        hist[1] / n,
        hist[2] / n,
        hist[3] / n,
    ]
}

/// Below this spread a concept map counts as constant and is only centred.
const FLAT_SD: f64 = 1e-9;

/// Z-scores each column of a row-major `P x K` buffer in place.
fn standardize_columns(values: &mut [f64], k: usize) {
    let p = values.len() / k;
    for col in 0..k {
        let mean = (0..p).map(|i| values[i * k + col]).sum::<f64>() / p as f64;
        let var = (0..p).map(|i| (values[i * k + col] - mean).powi(2)).sum::<f64>() / p as f64;
        let scale = if var.sqrt() > FLAT_SD { 1.0 / var.sqrt() } else { 1.0 };
        for i in 0..p {
            values[i * k + col] = (values[i * k + col] - mean) * scale;
        }
    }
}

/// Concept field: per-group pixel means, standardized within the region, and
/// projected group statistics. The level and spread of each group survive only
/// in the pooled statistics.
pub fn encode_concepts(region: &RegionRaster, psi: &FeaturizerConfig) -> Result<ConceptField> {
    let k = region.concept_count();
    let p = region.pixel_count();
    if k == 0 {
        return Err(Error::Empty("region has no concept groups"));
    }
    let projection = psi.projection();
    let mut per_pixel = vec![0.0; p * k];
    let mut stats = Vec::with_capacity(k * POOLED_DIM);
    for (ki, group) in region.channel_groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "concept group {ki} of region {} is empty",
                region.region_id
            )));
        }
        let mut values = Vec::with_capacity(group.len() * p);
        for &c in group {
            let plane = region.plane(c);
            for (i, v) in plane.iter().enumerate() {
                per_pixel[i * k + ki] += v / group.len() as f64;
            }
            values.extend_from_slice(plane);
        }
        stats.extend_from_slice(&group_statistics(&values));
    }
    standardize_columns(&mut per_pixel, k);
    let stats = Tensor::from_parts(k, POOLED_DIM, stats);
    Ok(ConceptField {
        height: region.height,
        width: region.width,
        pooled: stats.matmul(&projection)?,
        per_pixel: Tensor::from_parts(p, k, per_pixel),
        orthogonalized: false,
        dependent: vec![false; k],
    })
}

/// Tolerance below which a pooled row counts as linearly dependent.
pub const ORTHO_TOL: f64 = 1e-10;

/// Replaces the pooled rows by their Gram–Schmidt orthonormalization.
/// With `enabled == false` the field passes through unchanged.
pub fn orthogonalize_concepts(field: ConceptField, enabled: bool) -> ConceptField {
    if !enabled {
        return field;
    }
    let ortho = gram_schmidt(&field.pooled, ORTHO_TOL);
    ConceptField {
        pooled: ortho.rows,
        dependent: ortho.dependent,
        orthogonalized: true,
        ..field
    }
}
