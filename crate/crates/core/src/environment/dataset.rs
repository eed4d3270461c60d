use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::world::World;
use crate::error::{Error, Result};
use crate::model::RegionRaster;

/// Label value of pixels that carry no supervision.
pub const UNLABELED: u8 = 2;

/// Spreads a point label over the surface mask; everything else becomes [`UNLABELED`].
pub fn expand_point_labels(
    row: usize,
    col: usize,
    label: u8,
    surface_mask: &[bool],
    width: usize,
) -> Result<Vec<u8>> {
    if label > 1 {
        return Err(Error::InvalidArgument(format!("point label {label} must be 0 or 1")));
    }
    let idx = row * width + col;
    if col >= width || idx >= surface_mask.len() {
        return Err(Error::InvalidArgument(format!("point ({row}, {col}) lies outside the raster")));
    }
    if !surface_mask[idx] {
        return Err(Error::InvalidArgument(format!("point ({row}, {col}) is not on a surface pixel")));
    }
    Ok(surface_mask
        .iter()
        .map(|&s| if s { label } else { UNLABELED })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Dense,
    Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub row: usize,
    pub col: usize,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionManifest {
    pub id: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub blob_file: String,
    pub byte_offset: u64,
    pub label_mode: LabelMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<PointLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface_channel: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub regions: Vec<RegionManifest>,
    pub concept_groups: Vec<Vec<usize>>,
}

/// Surface pixels are those whose surface-channel value exceeds this.
pub const SURFACE_THRESHOLD: f64 = 0.5;

fn read_blob(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))
}

fn load_region(dir: &Path, m: &RegionManifest, groups: &[Vec<usize>]) -> Result<(RegionRaster, Vec<u8>)> {
    let p = m.height * m.width;
    let bytes = read_blob(&dir.join(&m.blob_file))?;
    let need = p * m.channels * 4;
    let start = usize::try_from(m.byte_offset).map_err(|_| Error::Dataset("byte offset overflow".into()))?;
    let available = bytes.len().saturating_sub(start);
    if available < need {
        return Err(Error::Dataset(format!(
            "region {}: {} declares {} channels of {}x{} ({need} bytes) but only {available} bytes follow offset {start}",
            m.id, m.blob_file, m.channels, m.height, m.width
        )));
    }
    // stored pixel-major with channels innermost; rasters are channel planes
    let mut channels = vec![0.0; p * m.channels];
    for (i, chunk) in bytes[start..start + need].chunks_exact(4).enumerate() {
        let v = f64::from(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        if !v.is_finite() {
            return Err(Error::Dataset(format!("region {}: non-finite value at element {i}", m.id)));
        }
        channels[(i % m.channels) * p + i / m.channels] = v;
    }
    let raster = RegionRaster::new(m.id, m.height, m.width, m.channels, channels, groups.to_vec())
        .map_err(|e| Error::Dataset(format!("region {}: {e}", m.id)))?;
    let labels = match m.label_mode {
        LabelMode::Dense => {
            let file = m
                .label_file
                .as_ref()
                .ok_or_else(|| Error::Dataset(format!("region {}: dense labels need label_file", m.id)))?;
            let labels = read_blob(&dir.join(file))?;
            if labels.len() != p {
                return Err(Error::Dataset(format!(
                    "region {}: {} label bytes for {p} pixels",
                    m.id,
                    labels.len()
                )));
            }
            labels
        }
        LabelMode::Point => {
            let point = m
                .point
                .ok_or_else(|| Error::Dataset(format!("region {}: point labels need a point", m.id)))?;
            let surface = m
                .surface_channel
                .filter(|&c| c < m.channels)
                .ok_or_else(|| Error::Dataset(format!("region {}: missing or invalid surface_channel", m.id)))?;
            let mask: Vec<bool> = raster.plane(surface).iter().map(|&v| v > SURFACE_THRESHOLD).collect();
            expand_point_labels(point.row, point.col, point.label, &mask, m.width)
                .map_err(|e| Error::Dataset(format!("region {}: {e}", m.id)))?
        }
    };
    Ok((raster, labels))
}

/// Reads a world from `manifest.json` and the blobs beside it.
pub fn load_dataset(manifest_path: &Path) -> Result<World> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut regions = manifest.regions.clone();
    regions.sort_by_key(|r| r.id);
    let mut rasters = Vec::with_capacity(regions.len());
    let mut labels = Vec::with_capacity(regions.len());
    for m in &regions {
        let (r, l) = load_region(dir, m, &manifest.concept_groups)?;
        rasters.push(r);
        labels.push(l);
    }
    let relevance = vec![None; rasters.len()];
    World::from_parts(rasters, relevance, labels)
}

/// Writes every region into one blob with dense label files; returns the manifest path.
pub fn write_dataset(world: &World, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let blob_name = "regions.bin";
    let mut blob = std::io::BufWriter::new(fs::File::create(dir.join(blob_name))?);
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(world.len());
    let groups = world
        .regions()
        .first()
        .map(|r| r.channel_groups.clone())
        .unwrap_or_default();
    for (region, labels) in world.regions().iter().zip(world.all_labels()) {
        if region.channel_groups != groups {
            return Err(Error::Dataset("regions disagree on concept groups".into()));
        }
        let p = region.pixel_count();
        for i in 0..p {
            for c in 0..region.channel_count {
                blob.write_all(&(region.channels[c * p + i] as f32).to_le_bytes())?;
            }
        }
        let label_file = format!("labels_{}.bin", region.region_id);
        fs::write(dir.join(&label_file), labels)?;
        entries.push(RegionManifest {
            id: region.region_id,
            height: region.height,
            width: region.width,
            channels: region.channel_count,
            blob_file: blob_name.into(),
            byte_offset: offset,
            label_mode: LabelMode::Dense,
            label_file: Some(label_file),
            point: None,
            surface_channel: None,
        });
        offset += (p * region.channel_count * 4) as u64;
    }
    blob.flush()?;
    let manifest = Manifest {
        regions: entries,
        concept_groups: groups,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_expansion() {
        let mask = [true, false, true, true];
        assert_eq!(expand_point_labels(0, 0, 1, &mask, 2).unwrap(), vec![1, 2, 1, 1]);
        assert_eq!(expand_point_labels(1, 1, 0, &mask, 2).unwrap(), vec![0, 2, 0, 0]);
        assert!(expand_point_labels(0, 1, 1, &mask, 2).is_err());
        let lone = [false, false, true, false];
        assert_eq!(expand_point_labels(1, 0, 1, &lone, 2).unwrap(), vec![2, 2, 1, 2]);
    }
}
